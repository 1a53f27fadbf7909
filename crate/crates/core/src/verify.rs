//! Self-contained numerical checks of the aggregation and probability
//! results: worked examples plus randomized property suites. Each check
//! reports the number of instances, the largest deviation seen and whether it
//! stayed within tolerance.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregation::{logistic_logodds, score_max, score_noisy_or, score_noisy_or_top_h};
use crate::grounding::Grounder;
use crate::kg::{KnowledgeGraph, Symbols, Triple};
use crate::prob::{
    check_max_corr_query, frechet_upper, independent_distribution, marginalize, max_corr_distribution,
    prob_at_least_one, problog_entailment, problog_onestep, JointDistribution, ProbRule,
};
use crate::rules::{parse_rule, Dialect};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    pub max_dev: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl CheckResult {
    fn new(name: &'static str, instances: usize, max_dev: f64, tolerance: f64) -> Self {
        Self {
            name,
            instances,
            max_dev,
            tolerance,
            pass: max_dev <= tolerance,
        }
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<32} {:>7} {:>10.3e} {}",
            self.name,
            self.instances,
            self.max_dev,
            if self.pass { "PASS" } else { "FAIL" }
        )
    }
}

/// Instance counts per randomized suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifyScale {
    pub max_corr: usize,
    pub independent: usize,
    pub joints: usize,
    pub orderings: usize,
    pub programs: usize,
}

impl Default for VerifyScale {
    fn default() -> Self {
        Self {
            max_corr: 10_000,
            independent: 1_000,
            joints: 1_000,
            orderings: 10_000,
            programs: 500,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyConfig {
    pub seed: u64,
    pub scale: VerifyScale,
    /// Corrupt the max-correlation solution so its validity check fails.
    pub inject_fault: bool,
}

pub fn run_all(config: &VerifyConfig) -> Vec<CheckResult> {
    let s = config.scale;
    // One RNG stream per suite so the suites do not depend on each other.
    let rng = |salt: u64| ChaCha8Rng::seed_from_u64(config.seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    vec![
        worked_aggregation_examples(),
        correlation_bound_examples(),
        max_corr_two_rules(),
        max_corr_validity(&mut rng(1), s.max_corr.min(2_000), config.inject_fault),
        max_corr_pairwise_bound(&mut rng(8), s.max_corr.min(2_000)),
        max_corr_equals_max(&mut rng(2), s.max_corr),
        independent_equals_noisy_or(&mut rng(3), s.independent),
        marginalization_invariance(&mut rng(4), s.joints),
        top_h_ordering(&mut rng(5), s.orderings),
        onestep_program_equals_noisy_or(&mut rng(6), s.programs),
        entailment_dominates_onestep(&mut rng(7), s.programs),
        logistic_example(),
    ]
}

fn max_abs<I: IntoIterator<Item = f64>>(devs: I) -> f64 {
    devs.into_iter()
        .fold(0.0, |m, d| if d.is_nan() { f64::INFINITY } else { m.max(d) })
}

fn par_max_abs<I: ParallelIterator<Item = f64>>(devs: I) -> f64 {
    devs.map(|d| if d.is_nan() { f64::INFINITY } else { d })
        .reduce(|| 0.0, f64::max)
}

fn worked_aggregation_examples() -> CheckResult {
    let anna = [0.64, 0.44, 0.41];
    let lisa = [0.44, 0.41];
    let devs = [
        (score_max(&anna).unwrap() - 0.64).abs() / 0.005,
        (score_noisy_or(&anna).unwrap() - 0.88).abs() / 0.005,
        (score_max(&lisa).unwrap() - 0.44).abs() / 0.005,
        (score_noisy_or(&lisa).unwrap() - 0.67).abs() / 0.005,
        (score_noisy_or_top_h(&anna, 2).unwrap() - 0.7984).abs() / 0.005,
    ];
    // deviations are in units of the 0.005 tolerance
    CheckResult::new("worked-aggregation-examples", devs.len(), max_abs(devs) * 0.005, 0.005)
}

fn correlation_bound_examples() -> CheckResult {
    let devs = [
        (frechet_upper(0.64, 0.44).unwrap() - 0.66).abs(),
        (frechet_upper(0.44, 0.41).unwrap() - 0.94).abs(),
        (frechet_upper(0.37, 0.37).unwrap() - 1.0).abs(),
    ];
    CheckResult::new("correlation-bound-examples", devs.len(), max_abs(devs), 0.01)
}

fn max_corr_two_rules() -> CheckResult {
    let (_, joint) = max_corr_distribution(&[0.64, 0.44]).unwrap();
    let devs = [
        (joint.prob(0b11) - 0.44).abs(),
        (joint.prob(0b10) - 0.0).abs(),
        (joint.prob(0b01) - 0.20).abs(),
        (joint.prob(0b00) - 0.36).abs(),
        (prob_at_least_one(&joint, &[0, 1]).unwrap() - 0.64).abs(),
    ];
    CheckResult::new("max-corr-two-rules", devs.len(), max_abs(devs), 1e-12)
}

fn random_marginals(rng: &mut ChaCha8Rng, max_n: usize) -> Vec<f64> {
    let n = rng.gen_range(1..=max_n);
    (0..n).map(|_| rng.gen_range(0.001..0.999)).collect()
}

fn random_subset(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    loop {
        let s: Vec<usize> = (0..k).filter(|_| rng.gen_bool(0.5)).collect();
        if !s.is_empty() {
            return s;
        }
    }
}

fn sorted_marginal_cases(rng: &mut ChaCha8Rng, n: usize, max_n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let mut m = random_marginals(rng, max_n);
            m.sort_by(|a, b| b.total_cmp(a));
            m
        })
        .collect()
}

/// Non-negative table summing to 1 and a solution of the triangular system.
fn max_corr_validity(rng: &mut ChaCha8Rng, n: usize, inject_fault: bool) -> CheckResult {
    let cases = sorted_marginal_cases(rng, n, 12);
    let dev = par_max_abs(cases.par_iter().map(|m| {
        let (mut sol, _) = max_corr_distribution(m).unwrap();
        if inject_fault {
            let delta = sol.z[1] + 0.05;
            sol.z[1] -= delta;
            sol.z[0] += delta;
        }
        sol.deviation().max(sol.to_joint().validity_deviation())
    }));
    CheckResult::new("max-corr-validity", n, dev, 1e-12)
}

/// Every pair of the constructed distribution reaches its correlation bound.
fn max_corr_pairwise_bound(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let cases = sorted_marginal_cases(rng, n, 10);
    let dev = par_max_abs(cases.par_iter().map(|m| {
        let (_, joint) = max_corr_distribution(m).unwrap();
        let mut d = 0.0f64;
        for i in 0..m.len() {
            for j in i + 1..m.len() {
                d = d.max((joint.correlation(i, j) - frechet_upper(m[i], m[j]).unwrap()).abs());
            }
        }
        d
    }));
    CheckResult::new("max-corr-pairwise-bound", n, dev, 1e-9)
}

fn max_corr_equals_max(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let cases: Vec<(Vec<f64>, Vec<usize>)> = (0..n)
        .map(|_| {
            let m = random_marginals(rng, 12);
            let s = random_subset(rng, m.len());
            (m, s)
        })
        .collect();
    let dev = par_max_abs(
        cases
            .par_iter()
            .map(|(m, s)| check_max_corr_query(m, s).unwrap().deviation()),
    );
    CheckResult::new("max-corr-equals-max", n, dev, 1e-9)
}

fn independent_equals_noisy_or(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let cases: Vec<(Vec<f64>, Vec<usize>)> = (0..n)
        .map(|_| {
            let m: Vec<f64> = (0..rng.gen_range(1..=12)).map(|_| rng.gen_range(0.0..=1.0)).collect();
            let s = random_subset(rng, m.len());
            (m, s)
        })
        .collect();
    let dev = par_max_abs(cases.par_iter().map(|(m, s)| {
        let d = independent_distribution(m).unwrap();
        let mut confs: Vec<f64> = s.iter().map(|&i| m[i]).collect();
        confs.sort_by(|a, b| b.total_cmp(a));
        let direct = 1.0 - s.iter().map(|&i| 1.0 - m[i]).product::<f64>();
        let p = prob_at_least_one(&d, s).unwrap();
        (p - direct).abs().max((p - score_noisy_or(&confs).unwrap()).abs())
    }));
    CheckResult::new("independent-equals-noisy-or", n, dev, 1e-12)
}

fn random_joint(rng: &mut ChaCha8Rng, max_k: usize) -> JointDistribution {
    let k = rng.gen_range(1..=max_k);
    // sparse tables exercise zero cells as well
    let mut w: Vec<f64> = (0..1usize << k)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    let bump = rng.gen_range(0..w.len());
    w[bump] += 0.5;
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    JointDistribution::from_table(k, w).unwrap()
}

fn marginalization_invariance(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let cases: Vec<(JointDistribution, Vec<usize>)> = (0..n)
        .map(|_| {
            let d = random_joint(rng, 10);
            let s = random_subset(rng, d.k());
            (d, s)
        })
        .collect();
    let dev = par_max_abs(cases.par_iter().map(|(d, s)| {
        let m = marginalize(d, s).unwrap();
        let all: Vec<usize> = (0..s.len()).collect();
        (prob_at_least_one(d, s).unwrap() - prob_at_least_one(&m, &all).unwrap()).abs()
    }));
    CheckResult::new("marginalization-invariance", n, dev, 1e-12)
}

/// Max <= top-h <= noisy-or, equal at h = 1 and h = k. Any violation counts
/// with its full size; the tolerance is zero.
fn top_h_ordering(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let mut worst = 0.0f64;
    for _ in 0..n {
        let k = rng.gen_range(1..=30);
        let mut confs: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..=1.0)).collect();
        confs.sort_by(|a, b| b.total_cmp(a));
        let h = rng.gen_range(1..=k + 5);
        let m = score_max(&confs).unwrap();
        let no = score_noisy_or(&confs).unwrap();
        let noh = score_noisy_or_top_h(&confs, h).unwrap();
        worst = worst
            .max(m - noh)
            .max(noh - no)
            .max((score_noisy_or_top_h(&confs, 1).unwrap() - m).abs())
            .max((score_noisy_or_top_h(&confs, k).unwrap() - no).abs());
        if h > 1 {
            worst = worst.max(score_noisy_or_top_h(&confs, h - 1).unwrap() - noh);
        }
    }
    CheckResult::new("top-h-ordering", n, worst, 0.0)
}

/// A small random program: graph facts over `a`, `b`, `c` and rules with
/// one- or two-atom bodies, heads over `q` or the body relations so that
/// chaining can occur.
pub struct RandomProgram {
    pub symbols: Symbols,
    pub kg: KnowledgeGraph,
    pub rules: Vec<ProbRule>,
    pub target: Triple,
}

pub fn random_program(rng: &mut ChaCha8Rng, max_rules: usize) -> RandomProgram {
    let mut symbols = Symbols::new();
    let ents = ["e0", "e1", "e2", "e3"];
    let rels = ["a", "b", "c"];
    let mut facts = Vec::new();
    for _ in 0..rng.gen_range(2..=6) {
        let s = ents[rng.gen_range(0..ents.len())];
        let o = ents[rng.gen_range(0..ents.len())];
        let r = rels[rng.gen_range(0..rels.len())];
        facts.push(symbols.triple(s, r, o));
    }
    let kg = KnowledgeGraph::from_triples(facts);
    let n = rng.gen_range(1..=max_rules);
    let rules = (0..n)
        .map(|_| {
            let head = if rng.gen_bool(0.6) {
                "q"
            } else {
                rels[rng.gen_range(0..2)]
            };
            let r1 = rels[rng.gen_range(0..3)];
            let r2 = rels[rng.gen_range(0..3)];
            let body = match rng.gen_range(0..4) {
                0 => format!("{r1}(X,Y)"),
                1 => format!("{r1}(Y,X)"),
                2 => format!("{r1}(X,A), {r2}(A,Y)"),
                _ => format!("{r1}(A,X), {r2}(A,Y)"),
            };
            let rule = parse_rule(
                &format!("0.5\t0\t0\t{head}(X,Y) <= {body}"),
                Dialect::Canonical,
                &mut symbols,
            )
            .expect("generated rule parses");
            ProbRule::new(rule, rng.gen_range(0.05..0.95)).unwrap()
        })
        .collect();
    let target = symbols.triple(ents[rng.gen_range(0..4)], "q", ents[rng.gen_range(0..4)]);
    RandomProgram {
        symbols,
        kg,
        rules,
        target,
    }
}

fn onestep_program_equals_noisy_or(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let programs: Vec<RandomProgram> = (0..n).map(|_| random_program(rng, 12)).collect();
    let mut dev = par_max_abs(programs.par_iter().map(|p| {
        let g = Grounder::new(&p.kg);
        let mut confs: Vec<f64> = p
            .rules
            .iter()
            .filter(|r| g.predicts(&r.rule, &p.target).unwrap())
            .map(|r| r.prob)
            .collect();
        confs.sort_by(|a, b| b.total_cmp(a));
        let no = if confs.is_empty() {
            0.0
        } else {
            score_noisy_or(&confs).unwrap()
        };
        (problog_onestep(&p.rules, &p.kg, &p.target).unwrap() - no).abs()
    }));
    // the worked example: three rules all predicting the target
    let mut sym = Symbols::new();
    let kg = KnowledgeGraph::from_triples([
        sym.triple("x", "a", "y"),
        sym.triple("x", "b", "y"),
        sym.triple("x", "c", "y"),
    ]);
    let rules: Vec<ProbRule> = [("a", 0.8), ("b", 0.7), ("c", 0.5)]
        .iter()
        .map(|(r, p)| {
            let rule = parse_rule(&format!("{p}\t0\t0\tq(X,Y) <= {r}(X,Y)"), Dialect::Canonical, &mut sym).unwrap();
            ProbRule::from_confidence(rule).unwrap()
        })
        .collect();
    let t = sym.triple("x", "q", "y");
    dev = dev.max((problog_onestep(&rules, &kg, &t).unwrap() - 0.97).abs());
    CheckResult::new("onestep-program-equals-noisy-or", n + 1, dev, 1e-12)
}

fn entailment_dominates_onestep(rng: &mut ChaCha8Rng, n: usize) -> CheckResult {
    let programs: Vec<RandomProgram> = (0..n).map(|_| random_program(rng, 12)).collect();
    let mut dev = max_abs(programs.iter().map(|p| {
        let one = problog_onestep(&p.rules, &p.kg, &p.target).unwrap();
        let full = problog_entailment(&p.rules, &p.kg, &p.target).unwrap();
        (one - full).max(0.0)
    }));
    // chained two-rule program: entailed with 0.25, never one-step entailed
    let mut sym = Symbols::new();
    let kg = KnowledgeGraph::from_triples([sym.triple("c", "b", "d")]);
    let rules: Vec<ProbRule> = ["q(X,Y) <= a(X,Y)", "a(X,Y) <= b(X,Y)"]
        .iter()
        .map(|r| {
            ProbRule::from_confidence(parse_rule(&format!("0.5\t0\t0\t{r}"), Dialect::Canonical, &mut sym).unwrap())
                .unwrap()
        })
        .collect();
    let t = sym.triple("c", "q", "d");
    let full = problog_entailment(&rules, &kg, &t).unwrap();
    let one = problog_onestep(&rules, &kg, &t).unwrap();
    dev = dev.max((full - 0.25).abs()).max((one - 0.0).abs());
    CheckResult::new("entailment-dominates-onestep", n + 1, dev, 1e-12)
}

fn logistic_example() -> CheckResult {
    let dev = (logistic_logodds(&[0.8, 0.7, 0.5]).unwrap() - 0.9032).abs();
    CheckResult::new("logistic-example", 1, dev, 0.0005)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, inject_fault: bool) -> VerifyConfig {
        VerifyConfig {
            seed,
            inject_fault,
            scale: VerifyScale {
                max_corr: 300,
                independent: 100,
                joints: 100,
                orderings: 500,
                programs: 20,
            },
        }
    }

    #[test]
    fn small_run_passes() {
        for r in run_all(&small(7, false)) {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn injected_fault_fails_validity_only() {
        let results = run_all(&small(7, true));
        for r in results {
            assert_eq!(r.pass, r.name != "max-corr-validity", "{r}");
        }
    }

    #[test]
    fn report_line_format() {
        let r = CheckResult::new("x", 3, 1e-13, 1e-12);
        let line = r.to_string();
        assert!(line.starts_with("x ") && line.ends_with(" PASS"), "{line}");
        assert!(line.contains(" 3 "));
    }
}
