//! File-level pipeline behind the command-line tool: configuration, loading,
//! and the confidences / apply / eval / tune-h steps.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{rank_candidates, tune_h_star, HChoice, HStarTable, ScoreKey, Strategy, TuneConfig};
use crate::eval::{evaluate, query_seed, EvalConfig, EvalReport, FilterSet};
use crate::grounding::{CandidateRanking, Direction, Grounder, GroundingConfig, Query};
use crate::kg::{read_triples, EntityId, KnowledgeGraph, Symbols, Triple};
use crate::rules::{load_ruleset, serialize_rule, Dialect, ParseConfig, Rule, RuleSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Max,
    MaxPlus,
    NoisyOr,
    NoisyOrTopH,
    NoisyOrTopHStar,
    Logistic,
}

impl std::str::FromStr for StrategyName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "max" => StrategyName::Max,
            "max-plus" | "max+" => StrategyName::MaxPlus,
            "noisy-or" => StrategyName::NoisyOr,
            "noisy-or-top-h" => StrategyName::NoisyOrTopH,
            "noisy-or-top-h-star" => StrategyName::NoisyOrTopHStar,
            "logistic" => StrategyName::Logistic,
            other => {
                return Err(format!(
                "unknown strategy `{other}` (max, max-plus, noisy-or, noisy-or-top-h, noisy-or-top-h-star, logistic)"
            ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    /// Query batch for `apply`; without it queries come from the test split.
    pub queries: Option<PathBuf>,
    /// Ranking dump consumed by `eval`; without it rankings are computed.
    pub ranking: Option<PathBuf>,
    pub h_table: Option<PathBuf>,
    pub out: PathBuf,
    pub dialect: Dialect,
    pub strategy: StrategyName,
    pub top_x: usize,
    pub h: usize,
    pub h_grid: Vec<String>,
    pub default_h: String,
    pub hits: Vec<usize>,
    pub seed: u64,
    /// 0 uses every core.
    pub workers: usize,
    pub grounding: GroundingConfig,
    pub parse: ParseConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: None,
            valid: None,
            test: None,
            rules: None,
            queries: None,
            ranking: None,
            h_table: None,
            out: PathBuf::from("out"),
            dialect: Dialect::Canonical,
            strategy: StrategyName::NoisyOr,
            top_x: 200,
            h: 5,
            h_grid: HChoice::default_grid().iter().map(|h| h.to_string()).collect(),
            default_h: "5".into(),
            hits: vec![1, 3, 10],
            seed: 42,
            workers: 0,
            grounding: GroundingConfig::default(),
            parse: ParseConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_x == 0 {
            bail!("top_x must be at least 1");
        }
        if self.h == 0 {
            bail!("h must be at least 1");
        }
        for p in [
            &self.train,
            &self.valid,
            &self.test,
            &self.rules,
            &self.queries,
            &self.ranking,
            &self.h_table,
        ]
        .into_iter()
        .flatten()
        {
            if !p.is_file() {
                bail!("input file {} does not exist", p.display());
            }
        }
        self.grid()?;
        self.default_h()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<Vec<HChoice>> {
        self.h_grid
            .iter()
            .map(|s| s.parse::<HChoice>().map_err(anyhow::Error::msg))
            .collect()
    }

    pub fn default_h(&self) -> Result<HChoice> {
        self.default_h.parse().map_err(anyhow::Error::msg)
    }

    /// Writes the effective configuration next to the outputs.
    pub fn write_snapshot(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let path = self.out.join("resolved_config.toml");
        let text = toml::to_string(self).context("serializing config")?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// Runs `f` on a worker pool of the configured size.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .context("building worker pool")?;
        Ok(pool.install(f))
    }

    fn require<'a>(&self, path: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        path.as_deref().with_context(|| format!("missing --{flag}"))
    }

    fn output(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }
}

/// Everything the steps read. Labels are interned train, valid, test, rules,
/// in that order, so ids (and with them tie-break seeds) do not depend on
/// which step runs.
pub struct Inputs {
    pub symbols: Symbols,
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub rules: RuleSet,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn read_split(path: Option<&Path>, symbols: &mut Symbols) -> Result<Vec<Triple>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => read_triples(open(p)?, symbols).with_context(|| format!("reading {}", p.display())),
    }
}

pub fn load_inputs(config: &PipelineConfig) -> Result<Inputs> {
    let mut symbols = Symbols::new();
    let train = read_split(config.train.as_deref(), &mut symbols)?;
    let valid = read_split(config.valid.as_deref(), &mut symbols)?;
    let test = read_split(config.test.as_deref(), &mut symbols)?;
    let rules = match &config.rules {
        None => RuleSet::default(),
        Some(p) => load_ruleset(open(p)?, config.dialect, &mut symbols, &config.parse)
            .with_context(|| format!("reading rules {}", p.display()))?,
    };
    Ok(Inputs {
        symbols,
        train: KnowledgeGraph::from_triples(train),
        valid,
        test,
        rules,
    })
}

/// Rules with recomputed counts and confidence over `kg`, in input order.
/// Rules whose confidence cannot be computed are returned separately with the
/// reason.
pub fn recompute_confidences(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    grounding: GroundingConfig,
) -> (Vec<Rule>, Vec<(usize, String)>) {
    let g = Grounder::with_config(kg, grounding);
    let results: Vec<_> = rules.rules().par_iter().map(|r| g.confidence(r)).collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, (rule, res)) in rules.rules().iter().zip(results).enumerate() {
        match res {
            Ok(stats) => kept.push(rule.with_stats(stats.predicted, stats.correct)),
            Err(e) => dropped.push((i, e.to_string())),
        }
    }
    (kept, dropped)
}

pub fn cmd_confidences(config: &PipelineConfig) -> Result<PathBuf> {
    config.require(&config.train, "train")?;
    config.require(&config.rules, "rules")?;
    let inputs = load_inputs(config)?;
    let (kept, dropped) = config.install(|| recompute_confidences(&inputs.train, &inputs.rules, config.grounding))?;
    for (i, reason) in &dropped {
        let rule = &inputs.rules.rules()[*i];
        eprintln!(
            "warning: dropping rule {}: {reason}",
            crate::rules::format_clause(rule, &inputs.symbols)
        );
    }
    let path = config.output("rules.tsv")?;
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    for rule in &kept {
        writeln!(w, "{}", serialize_rule(rule, &inputs.symbols))?;
    }
    w.flush()?;
    config.write_snapshot()?;
    Ok(path)
}

pub fn build_strategy(config: &PipelineConfig, symbols: &mut Symbols) -> Result<Strategy> {
    Ok(match config.strategy {
        StrategyName::Max => Strategy::Max,
        StrategyName::MaxPlus => Strategy::MaxPlus,
        StrategyName::NoisyOr => Strategy::NoisyOr,
        StrategyName::NoisyOrTopH => Strategy::NoisyOrTopH(config.h),
        StrategyName::Logistic => Strategy::LogisticLogOdds,
        StrategyName::NoisyOrTopHStar => {
            let path = config.require(&config.h_table, "h-table")?;
            let table = HStarTable::from_tsv(open(path)?, symbols, config.default_h()?)
                .map_err(anyhow::Error::msg)
                .with_context(|| format!("reading {}", path.display()))?;
            Strategy::NoisyOrTopHStar(table)
        }
    })
}

/// One ranked query: candidates in final order, with their confidence lists
/// and keys, truncated to `top_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedQuery {
    pub query: Query,
    pub ranked: Vec<(EntityId, ScoreKey, Vec<f64>)>,
}

impl RankedQuery {
    pub fn scored(&self) -> Vec<(EntityId, ScoreKey)> {
        self.ranked.iter().map(|(e, k, _)| (*e, k.clone())).collect()
    }
}

/// Orders and truncates one candidate ranking under `strategy`.
pub fn finish_ranking(ranking: &CandidateRanking, strategy: &Strategy, top_x: usize, seed: u64) -> Result<RankedQuery> {
    let mut scored = rank_candidates(ranking, strategy, query_seed(seed, &ranking.query))?;
    scored.truncate(top_x);
    Ok(RankedQuery {
        query: ranking.query,
        ranked: scored
            .into_iter()
            .map(|(e, k)| {
                let confs = ranking.candidates[&e].clone();
                (e, k, confs)
            })
            .collect(),
    })
}

/// Generates, scores and ranks every query in parallel; results keep the
/// input order.
pub fn rank_queries(
    kg: &KnowledgeGraph,
    rules: &RuleSet,
    queries: &[Query],
    strategy: &Strategy,
    config: &PipelineConfig,
) -> Result<Vec<RankedQuery>> {
    let g = Grounder::with_config(kg, config.grounding);
    queries
        .par_iter()
        .map(|q| {
            let ranking = g.answer_query(rules, q, &strategy.policy(q, config.top_x))?;
            finish_ranking(&ranking, strategy, config.top_x, config.seed)
        })
        .collect()
}

/// Both queries of every test triple, first occurrence order, no repeats.
pub fn queries_from_triples(triples: &[Triple]) -> Vec<Query> {
    let mut seen = std::collections::HashSet::new();
    crate::eval::test_queries(triples)
        .into_iter()
        .map(|(q, _)| q)
        .filter(|q| seen.insert(*q))
        .collect()
}

pub fn read_queries<R: BufRead>(source: R, symbols: &mut Symbols) -> Result<Vec<Query>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            bail!("line {}: expected relation, anchor, direction", i + 1);
        }
        let direction: Direction = f[2]
            .parse()
            .map_err(anyhow::Error::msg)
            .with_context(|| format!("line {}", i + 1))?;
        out.push(Query {
            relation: symbols.relation(f[0]),
            anchor: symbols.entity(f[1]),
            direction,
        });
    }
    Ok(out)
}

fn format_confs(confs: &[f64]) -> String {
    confs.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

/// `relation<TAB>anchor<TAB>direction<TAB>candidate<TAB>conf1,conf2,...`, one
/// line per candidate in rank order. Keys are recomputed from the confidences
/// when a dump is read back.
pub fn write_ranking<W: Write>(mut w: W, ranked: &[RankedQuery], symbols: &Symbols) -> std::io::Result<()> {
    for rq in ranked {
        let q = rq.query;
        for (e, _, confs) in &rq.ranked {
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                symbols.relation_label(q.relation),
                symbols.entity_label(q.anchor),
                q.direction,
                symbols.entity_label(*e),
                format_confs(confs)
            )?;
        }
    }
    Ok(())
}

/// Reads a ranking dump back into per-query candidate rankings.
pub fn read_ranking<R: BufRead>(source: R, symbols: &mut Symbols) -> Result<BTreeMap<Query, CandidateRanking>> {
    let mut out: BTreeMap<Query, CandidateRanking> = BTreeMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let ctx = || format!("ranking line {}", i + 1);
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 5 {
            bail!("{}: expected 5 tab-separated fields", ctx());
        }
        let direction: Direction = f[2].parse().map_err(anyhow::Error::msg).with_context(ctx)?;
        let query = Query {
            relation: symbols.relation(f[0]),
            anchor: symbols.entity(f[1]),
            direction,
        };
        let confs = f[4]
            .split(',')
            .map(|c| c.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(ctx)?;
        if confs.is_empty() || confs.windows(2).any(|w| w[0] < w[1]) {
            bail!("{}: confidences must be non-empty and descending", ctx());
        }
        out.entry(query)
            .or_insert_with(|| CandidateRanking::new(query))
            .candidates
            .insert(symbols.entity(f[3]), confs);
    }
    Ok(out)
}

pub fn cmd_apply(config: &PipelineConfig) -> Result<PathBuf> {
    config.require(&config.train, "train")?;
    config.require(&config.rules, "rules")?;
    let mut inputs = load_inputs(config)?;
    let queries = match &config.queries {
        Some(p) => read_queries(open(p)?, &mut inputs.symbols).with_context(|| format!("reading {}", p.display()))?,
        None => {
            config.require(&config.test, "test or --queries")?;
            queries_from_triples(&inputs.test)
        }
    };
    let strategy = build_strategy(config, &mut inputs.symbols)?;
    let ranked = config.install(|| rank_queries(&inputs.train, &inputs.rules, &queries, &strategy, config))??;
    let path = config.output("ranking.tsv")?;
    let w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_ranking(w, &ranked, &inputs.symbols)?;
    config.write_snapshot()?;
    Ok(path)
}

/// Filtered evaluation over the test split. Rankings come from the dump in
/// `config.ranking` when given, otherwise they are computed in memory.
pub fn run_eval(config: &PipelineConfig) -> Result<(EvalReport, Symbols)> {
    config.require(&config.test, "test")?;
    let mut inputs = load_inputs(config)?;
    let strategy = build_strategy(config, &mut inputs.symbols)?;
    let queries = queries_from_triples(&inputs.test);
    let ranked: Vec<RankedQuery> = match &config.ranking {
        Some(p) => {
            let dump = read_ranking(open(p)?, &mut inputs.symbols)?;
            queries
                .iter()
                .map(|q| match dump.get(q) {
                    Some(r) => finish_ranking(r, &strategy, config.top_x, config.seed),
                    None => Ok(RankedQuery {
                        query: *q,
                        ranked: Vec::new(),
                    }),
                })
                .collect::<Result<_>>()?
        }
        None => {
            config.require(&config.train, "train")?;
            config.require(&config.rules, "rules")?;
            config.install(|| rank_queries(&inputs.train, &inputs.rules, &queries, &strategy, config))??
        }
    };
    let by_query: BTreeMap<Query, Vec<(EntityId, ScoreKey)>> = ranked.iter().map(|r| (r.query, r.scored())).collect();
    let mut filter = FilterSet::from_graph(&inputs.train);
    filter.extend(inputs.valid.iter().copied());
    filter.extend(inputs.test.iter().copied());
    let eval_config = EvalConfig {
        hits_levels: config.hits.clone(),
        seed: config.seed,
    };
    let report = config.install(|| {
        evaluate(
            &inputs.test,
            |q, _| by_query.get(q).cloned().unwrap_or_default(),
            &filter,
            &eval_config,
        )
    })??;
    Ok((report, inputs.symbols))
}

pub fn cmd_eval(config: &PipelineConfig) -> Result<EvalReport> {
    let (report, symbols) = run_eval(config)?;
    fs::write(config.output("report.txt")?, report.to_table(&symbols))?;
    fs::write(config.output("metrics.tsv")?, report.to_tsv())?;
    fs::write(config.output("slices.tsv")?, report.slices_tsv(&symbols))?;
    config.write_snapshot()?;
    Ok(report)
}

pub fn cmd_tune_h(config: &PipelineConfig) -> Result<PathBuf> {
    config.require(&config.train, "train")?;
    config.require(&config.valid, "valid")?;
    config.require(&config.rules, "rules")?;
    let inputs = load_inputs(config)?;
    let mut filter = FilterSet::from_graph(&inputs.train);
    filter.extend(inputs.valid.iter().copied());
    let tune = TuneConfig {
        top_x: config.top_x,
        seed: config.seed,
        default_h: config.default_h()?,
        grounding: config.grounding,
    };
    let grid = config.grid()?;
    let table =
        config.install(|| tune_h_star(&inputs.train, &inputs.rules, &inputs.valid, &grid, &filter, &tune))??;
    let path = config.output("h_table.tsv")?;
    fs::write(&path, table.to_tsv(&inputs.symbols))?;
    config.write_snapshot()?;
    Ok(path)
}
