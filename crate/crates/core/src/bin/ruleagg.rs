use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use ruleagg::pipeline::{self, PipelineConfig, StrategyName};
use ruleagg::rules::Dialect;
use ruleagg::verify::{run_all, VerifyConfig};

#[derive(Parser)]
#[command(
    name = "ruleagg",
    version,
    about = "Rule-based knowledge graph completion with multi-rule aggregation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Recompute rule counts and confidences over the training graph.
    Confidences(Flags),
    /// Rank candidates for a query batch or for both directions of the test triples.
    Apply(Flags),
    /// Filtered MRR and hits@k over the test triples.
    Eval(Flags),
    /// Choose h per relation and direction on the validation split.
    TuneH(Flags),
    /// Run the numerical property suites and worked examples.
    Verify(Flags),
}

#[derive(Args, Default)]
struct Flags {
    /// TOML file with pipeline settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    rules: Option<PathBuf>,
    /// canonical, anyburl or amie
    #[arg(long)]
    dialect: Option<Dialect>,
    /// max, max-plus, noisy-or, noisy-or-top-h, noisy-or-top-h-star, logistic
    #[arg(long)]
    strategy: Option<StrategyName>,
    #[arg(long)]
    top_x: Option<usize>,
    #[arg(long)]
    h: Option<usize>,
    /// h table written by tune-h, used by noisy-or-top-h-star.
    #[arg(long)]
    h_table: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Query batch (`relation<TAB>anchor<TAB>head|tail`) for apply.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Ranking file written by apply, for eval.
    #[arg(long)]
    ranking: Option<PathBuf>,
    #[arg(long, hide = true)]
    inject_fault: bool,
}

impl Flags {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => PipelineConfig::from_toml_file(p)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { c.$field = v.clone().into(); })*
            };
        }
        set!(train, valid, test, rules, h_table, queries, ranking);
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.dialect {
            c.dialect = v;
        }
        if let Some(v) = self.strategy {
            c.strategy = v;
        }
        if let Some(v) = self.top_x {
            c.top_x = v;
        }
        if let Some(v) = self.h {
            c.h = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Confidences(f) => {
            let path = pipeline::cmd_confidences(&f.resolve()?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Apply(f) => {
            let path = pipeline::cmd_apply(&f.resolve()?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Eval(f) => {
            let c = f.resolve()?;
            let report = pipeline::cmd_eval(&c)?;
            eprintln!(
                "mrr {:.4} over {} queries; wrote {}",
                report.overall.mrr,
                report.overall.queries,
                c.out.display()
            );
        }
        Command::TuneH(f) => {
            let path = pipeline::cmd_tune_h(&f.resolve()?)?;
            eprintln!("wrote {}", path.display());
        }
        Command::Verify(f) => {
            let c = f.resolve()?;
            let results = c.install(|| {
                run_all(&VerifyConfig {
                    seed: c.seed,
                    inject_fault: f.inject_fault,
                    ..VerifyConfig::default()
                })
            })?;
            for r in &results {
                println!("{r}");
            }
            if results.iter().any(|r| !r.pass) {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
