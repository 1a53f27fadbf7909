//! Explicit joint distributions over rule truth variables and enumeration
//! oracles for probabilistic rule programs. These are verification tools:
//! every table has 2^k entries.
//!
//! Bit `j` of a realisation index is the truth value of rule `j` (0-based),
//! so the first rule sits in the lowest bit.

use rayon::prelude::*;
use thiserror::Error;

use crate::grounding::{Grounder, GroundingConfig, GroundingError};
use crate::kg::{KnowledgeGraph, Triple};
use crate::rules::{Rule, RuleSet};

pub const MAX_VARIABLES: usize = 24;
pub const MAX_ONESTEP_RULES: usize = 20;
pub const MAX_ENTAILMENT_RULES: usize = 16;
const SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbError {
    #[error("marginal {0} is 0 or 1; the correlation bound is undefined")]
    DegenerateMarginal(f64),
    #[error("marginals must be sorted in descending order")]
    UnsortedMarginals,
    #[error("index set is empty")]
    EmptySubset,
    #[error("variable index {index} out of range for {k} variables")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("{k} variables exceed the table limit of {max}")]
    TooManyVariables { k: usize, max: usize },
    #[error("{n} rules exceed the enumeration limit of {max}")]
    TooManyRules { n: usize, max: usize },
    #[error("{0} is not a probability")]
    InvalidProbability(f64),
    #[error("table entries must be non-negative and sum to 1 (sum {sum})")]
    InvalidTable { sum: f64 },
    #[error(transparent)]
    Grounding(#[from] GroundingError),
}

/// Compensated summation; the tables can hold 2^24 terms.
fn neumaier<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check_probability(p: f64) -> Result<(), ProbError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(ProbError::InvalidProbability(p))
    }
}

fn check_k(k: usize) -> Result<(), ProbError> {
    if k > MAX_VARIABLES {
        Err(ProbError::TooManyVariables { k, max: MAX_VARIABLES })
    } else {
        Ok(())
    }
}

/// Probability table over `k` binary variables.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistribution {
    k: usize,
    probs: Vec<f64>,
    marginals: Vec<f64>,
}

impl JointDistribution {
    /// Validates a table of `2^k` entries.
    pub fn from_table(k: usize, probs: Vec<f64>) -> Result<Self, ProbError> {
        check_k(k)?;
        assert_eq!(probs.len(), 1usize << k, "table size must be 2^k");
        let sum = neumaier(probs.iter().copied());
        if probs.iter().any(|&p| p.is_nan() || p < 0.0) || (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ProbError::InvalidTable { sum });
        }
        Ok(Self::build(k, probs))
    }

    fn build(k: usize, probs: Vec<f64>) -> Self {
        let marginals = (0..k).map(|j| mass_where(&probs, |r| r >> j & 1 == 1)).collect();
        Self { k, probs, marginals }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, realisation: usize) -> f64 {
        self.probs[realisation]
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    /// `p(R_i = 1, R_j = 1)`.
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        let m = 1usize << i | 1usize << j;
        mass_where(&self.probs, |r| r & m == m)
    }

    /// Pearson correlation of variables `i` and `j`.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        let (pi, pj) = (self.marginals[i], self.marginals[j]);
        let sd = |p: f64| (p * (1.0 - p)).sqrt();
        (self.pair(i, j) - pi * pj) / (sd(pi) * sd(pj))
    }

    /// Largest deviation from the validity invariants: negative mass, total
    /// mass away from 1, cached marginals away from recomputed ones.
    pub fn validity_deviation(&self) -> f64 {
        let neg = self.probs.iter().fold(0.0f64, |m, &p| m.max(-p));
        let total = (neumaier(self.probs.iter().copied()) - 1.0).abs();
        let marg = (0..self.k)
            .map(|j| (mass_where(&self.probs, |r| r >> j & 1 == 1) - self.marginals[j]).abs())
            .fold(0.0, f64::max);
        neg.max(total).max(marg)
    }
}

fn mass_where(probs: &[f64], pred: impl Fn(usize) -> bool) -> f64 {
    neumaier(probs.iter().enumerate().filter(|(r, _)| pred(*r)).map(|(_, &p)| p))
}

fn subset_mask(subset: &[usize], k: usize) -> Result<usize, ProbError> {
    if subset.is_empty() {
        return Err(ProbError::EmptySubset);
    }
    subset.iter().try_fold(0usize, |m, &i| {
        if i >= k {
            Err(ProbError::IndexOutOfRange { index: i, k })
        } else {
            Ok(m | 1 << i)
        }
    })
}

/// `min(sqrt(p_i(1-p_j) / (p_j(1-p_i))), its inverse)`: the largest
/// correlation two Bernoulli variables with these marginals can have.
pub fn frechet_upper(p_i: f64, p_j: f64) -> Result<f64, ProbError> {
    for p in [p_i, p_j] {
        if !(p > 0.0 && p < 1.0) {
            return Err(ProbError::DegenerateMarginal(p));
        }
    }
    if p_i == p_j {
        return Ok(1.0);
    }
    let r = (p_i * (1.0 - p_j) / (p_j * (1.0 - p_i))).sqrt();
    Ok(r.min(1.0 / r))
}

/// Descending marginals and the mass `z[m]` of the realisation whose first
/// `m` variables are true and the rest false.
#[derive(Debug, Clone, PartialEq)]
pub struct MaxCorrSolution {
    pub marginals: Vec<f64>,
    pub z: Vec<f64>,
}

impl MaxCorrSolution {
    /// Index of the realisation with `m` leading ones.
    pub fn realisation(m: usize) -> usize {
        (1usize << m) - 1
    }

    /// Largest violation of `z_m` in [0,1], `sum z = 1` and
    /// `p_i = sum_{s >= i} z_s`.
    pub fn deviation(&self) -> f64 {
        let range = self.z.iter().map(|&z| (-z).max(z - 1.0).max(0.0)).fold(0.0, f64::max);
        let total = (neumaier(self.z.iter().copied()) - 1.0).abs();
        let marg = self
            .marginals
            .iter()
            .enumerate()
            .map(|(i, &p)| (neumaier(self.z[i + 1..].iter().copied()) - p).abs())
            .fold(0.0, f64::max);
        range.max(total).max(marg)
    }

    pub fn to_joint(&self) -> JointDistribution {
        let n = self.marginals.len();
        let mut probs = vec![0.0; 1usize << n];
        for (m, &z) in self.z.iter().enumerate() {
            probs[Self::realisation(m)] = z;
        }
        JointDistribution::build(n, probs)
    }
}

/// Solves the triangular system for the max-correlation distribution by
/// back-substitution, without expanding the full table.
pub fn max_corr_solution(marginals: &[f64]) -> Result<MaxCorrSolution, ProbError> {
    let n = marginals.len();
    check_k(n)?;
    if n == 0 {
        return Err(ProbError::EmptySubset);
    }
    if let Some(&p) = marginals.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
        return Err(ProbError::DegenerateMarginal(p));
    }
    if marginals.windows(2).any(|w| w[0] < w[1]) {
        return Err(ProbError::UnsortedMarginals);
    }
    let mut z = vec![0.0; n + 1];
    z[0] = 1.0 - marginals[0];
    for m in 1..n {
        z[m] = marginals[m - 1] - marginals[m];
    }
    z[n] = marginals[n - 1];
    Ok(MaxCorrSolution {
        marginals: marginals.to_vec(),
        z,
    })
}

/// The distribution in which every pair of rules reaches its correlation
/// upper bound, supported on the `N + 1` nested realisations.
pub fn max_corr_distribution(marginals: &[f64]) -> Result<(MaxCorrSolution, JointDistribution), ProbError> {
    let sol = max_corr_solution(marginals)?;
    let joint = sol.to_joint();
    Ok((sol, joint))
}

/// Product distribution of independent Bernoulli variables.
pub fn independent_distribution(marginals: &[f64]) -> Result<JointDistribution, ProbError> {
    check_k(marginals.len())?;
    let mut probs = Vec::with_capacity(1usize << marginals.len());
    probs.push(1.0);
    for &p in marginals {
        check_probability(p)?;
        let low: Vec<f64> = probs.iter().map(|&x| x * (1.0 - p)).collect();
        let high: Vec<f64> = probs.iter().map(|&x| x * p).collect();
        probs = low;
        probs.extend(high);
    }
    Ok(JointDistribution::build(marginals.len(), probs))
}

/// Probability that at least one variable in `subset` (0-based) is true.
pub fn prob_at_least_one(dist: &JointDistribution, subset: &[usize]) -> Result<f64, ProbError> {
    let mask = subset_mask(subset, dist.k)?;
    Ok(mass_where(&dist.probs, |r| r & mask != 0))
}

/// Distribution of the variables `keep`, in that order.
pub fn marginalize(dist: &JointDistribution, keep: &[usize]) -> Result<JointDistribution, ProbError> {
    subset_mask(keep, dist.k)?;
    let mut probs = vec![0.0; 1usize << keep.len()];
    for (r, &p) in dist.probs.iter().enumerate() {
        let idx = keep
            .iter()
            .enumerate()
            .fold(0usize, |acc, (new, &old)| acc | (r >> old & 1) << new);
        probs[idx] += p;
    }
    Ok(JointDistribution::build(keep.len(), probs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbRule {
    pub rule: Rule,
    pub prob: f64,
}

impl ProbRule {
    pub fn new(rule: Rule, prob: f64) -> Result<Self, ProbError> {
        check_probability(prob)?;
        Ok(Self { rule, prob })
    }

    /// Uses the rule's confidence as its probability.
    pub fn from_confidence(rule: Rule) -> Result<Self, ProbError> {
        let p = rule.confidence;
        Self::new(rule, p)
    }
}

fn subset_weight(rules: &[ProbRule], subset: usize) -> f64 {
    rules
        .iter()
        .enumerate()
        .map(|(i, r)| if subset >> i & 1 == 1 { r.prob } else { 1.0 - r.prob })
        .product()
}

fn predicting_mask(rules: &[ProbRule], g: &Grounder<'_>, t: &Triple) -> Result<usize, ProbError> {
    let mut mask = 0;
    for (i, r) in rules.iter().enumerate() {
        if g.predicts(&r.rule, t)? {
            mask |= 1 << i;
        }
    }
    Ok(mask)
}

/// Probability of `t` under the program "each rule present independently
/// with its probability, all graph facts certain", with one-step entailment.
pub fn problog_onestep(rules: &[ProbRule], kg: &KnowledgeGraph, t: &Triple) -> Result<f64, ProbError> {
    if rules.len() > MAX_ONESTEP_RULES {
        return Err(ProbError::TooManyRules {
            n: rules.len(),
            max: MAX_ONESTEP_RULES,
        });
    }
    if kg.contains(t) {
        return Ok(1.0);
    }
    let g = Grounder::with_config(kg, GroundingConfig::default());
    let mask = predicting_mask(rules, &g, t)?;
    Ok(neumaier(
        (0..1usize << rules.len())
            .filter(|s| s & mask != 0)
            .map(|s| subset_weight(rules, s)),
    ))
}

/// Same program under full entailment: `t` counts for a rule subset when it
/// is in the forward-chaining closure of the graph under that subset.
pub fn problog_entailment(rules: &[ProbRule], kg: &KnowledgeGraph, t: &Triple) -> Result<f64, ProbError> {
    if rules.len() > MAX_ENTAILMENT_RULES {
        return Err(ProbError::TooManyRules {
            n: rules.len(),
            max: MAX_ENTAILMENT_RULES,
        });
    }
    if kg.contains(t) {
        return Ok(1.0);
    }
    let g = Grounder::with_config(kg, GroundingConfig::default());
    let direct = predicting_mask(rules, &g, t)?;
    let terms: Vec<f64> = (0..1usize << rules.len())
        .into_par_iter()
        .map(|s| -> Result<f64, ProbError> {
            let entailed = if s & direct != 0 {
                true
            } else {
                let subset: RuleSet = rules
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| s >> i & 1 == 1)
                    .map(|(_, r)| r.rule.clone())
                    .collect();
                !subset.is_empty() && g.forward_chain(&subset, None)?.contains(t)
            };
            Ok(if entailed { subset_weight(rules, s) } else { 0.0 })
        })
        .collect::<Result<_, _>>()?;
    Ok(neumaier(terms))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxCorrQueryReport {
    /// At-least-one probability under the max-correlation distribution.
    pub joint: f64,
    /// Largest marginal in the subset.
    pub max_marginal: f64,
}

impl MaxCorrQueryReport {
    pub fn deviation(&self) -> f64 {
        (self.joint - self.max_marginal).abs()
    }

    pub fn holds(&self) -> bool {
        self.deviation() < 1e-9
    }
}

/// Compares the at-least-one probability of `subset` (0-based indices into
/// `marginals`, any order) under the max-correlation distribution with the
/// largest marginal in the subset.
pub fn check_max_corr_query(marginals: &[f64], subset: &[usize]) -> Result<MaxCorrQueryReport, ProbError> {
    subset_mask(subset, marginals.len())?;
    let mut order: Vec<usize> = (0..marginals.len()).collect();
    order.sort_by(|&a, &b| marginals[b].total_cmp(&marginals[a]).then(a.cmp(&b)));
    let mut position = vec![0; marginals.len()];
    for (pos, &orig) in order.iter().enumerate() {
        position[orig] = pos;
    }
    let sorted: Vec<f64> = order.iter().map(|&i| marginals[i]).collect();
    let (_, joint) = max_corr_distribution(&sorted)?;
    let mapped: Vec<usize> = subset.iter().map(|&i| position[i]).collect();
    Ok(MaxCorrQueryReport {
        joint: prob_at_least_one(&joint, &mapped)?,
        max_marginal: subset.iter().map(|&i| marginals[i]).fold(f64::MIN, f64::max),
    })
}
