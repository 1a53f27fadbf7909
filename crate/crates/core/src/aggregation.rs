//! Multi-rule aggregation: maps the descending confidence list of a
//! candidate's predicting rules to a comparable [`ScoreKey`].
//!
//! All scalar scores take the confidences sorted from highest to lowest, one
//! entry per predicting rule.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::eval::{filtered_rank, query_seed, FilterSet};
use crate::grounding::{
    CandidateRanking, Direction, GenerationPolicy, Grounder, GroundingConfig, GroundingError, Query,
};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Symbols, Triple};
use crate::rules::RuleSet;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("candidate has no predicting rules")]
    EmptyPrediction,
    #[error("confidence {0} has undefined log-odds")]
    DegenerateConfidence(f64),
}

pub fn score_max(confs: &[f64]) -> Result<f64, AggregationError> {
    confs.first().copied().ok_or(AggregationError::EmptyPrediction)
}

/// `1 - prod(1 - c)`, accumulated in log space.
pub fn score_noisy_or(confs: &[f64]) -> Result<f64, AggregationError> {
    let first = score_max(confs)?;
    if confs.len() == 1 {
        return Ok(first);
    }
    if confs.iter().any(|&c| c >= 1.0) {
        return Ok(1.0);
    }
    let log_none: f64 = confs.iter().map(|&c| (-c).ln_1p()).sum();
    // Rounding must not push the score below its best rule.
    Ok((-log_none.exp_m1()).max(first))
}

/// Noisy-or over the `h` highest confidences.
pub fn score_noisy_or_top_h(confs: &[f64], h: usize) -> Result<f64, AggregationError> {
    assert!(h >= 1, "h must be positive");
    score_noisy_or(&confs[..h.min(confs.len())])
}

/// Sigmoid of the summed log-odds.
pub fn logistic_logodds(confs: &[f64]) -> Result<f64, AggregationError> {
    if confs.is_empty() {
        return Err(AggregationError::EmptyPrediction);
    }
    let mut logit = 0.0;
    for &c in confs {
        if c <= 0.0 || c >= 1.0 {
            return Err(AggregationError::DegenerateConfidence(c));
        }
        logit += c.ln() - (-c).ln_1p();
    }
    Ok(1.0 / (1.0 + (-logit).exp()))
}

/// Primary score, then (for Max+) the full confidence vector compared
/// lexicographically. When one vector is a strict prefix of the other the
/// longer one is greater.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreKey {
    pub primary: f64,
    pub tiebreak: Vec<f64>,
}

impl ScoreKey {
    pub fn scalar(primary: f64) -> Self {
        Self {
            primary,
            tiebreak: Vec::new(),
        }
    }
}

impl Eq for ScoreKey {}

impl Ord for ScoreKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.primary.total_cmp(&other.primary).then_with(|| {
            for (a, b) in self.tiebreak.iter().zip(&other.tiebreak) {
                match a.total_cmp(b) {
                    Ordering::Equal => continue,
                    ord => return ord,
                }
            }
            self.tiebreak.len().cmp(&other.tiebreak.len())
        })
    }
}

impl PartialOrd for ScoreKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn key_max_plus(confs: &[f64]) -> Result<ScoreKey, AggregationError> {
    Ok(ScoreKey {
        primary: score_max(confs)?,
        tiebreak: confs.to_vec(),
    })
}

/// One entry of the h grid. Ordered from the cheapest to the most expensive
/// choice: Max+ (written `1`), then top-h, then all rules (written `k`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HChoice {
    MaxPlus,
    TopH(usize),
    All,
}

impl HChoice {
    pub fn strategy(self) -> Strategy {
        match self {
            HChoice::MaxPlus => Strategy::MaxPlus,
            HChoice::TopH(h) => Strategy::NoisyOrTopH(h),
            HChoice::All => Strategy::NoisyOr,
        }
    }

    /// Generation stop threshold for this choice.
    pub fn h_stop(self) -> Option<usize> {
        match self {
            HChoice::TopH(h) => Some(h),
            HChoice::MaxPlus | HChoice::All => None,
        }
    }

    pub fn default_grid() -> Vec<HChoice> {
        std::iter::once(HChoice::MaxPlus)
            .chain((4..=10).map(HChoice::TopH))
            .collect()
    }
}

impl fmt::Display for HChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HChoice::MaxPlus => f.write_str("1"),
            HChoice::TopH(h) => write!(f, "{h}"),
            HChoice::All => f.write_str("k"),
        }
    }
}

impl FromStr for HChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "k" => Ok(HChoice::All),
            "1" => Ok(HChoice::MaxPlus),
            t => match t.parse::<usize>() {
                Ok(h) if h >= 2 => Ok(HChoice::TopH(h)),
                _ => Err(format!("invalid h value `{s}` (expected a positive integer or k)")),
            },
        }
    }
}

/// h per (relation, direction), with a fallback for unseen pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HStarTable {
    pub entries: BTreeMap<(RelationId, Direction), HChoice>,
    pub default_h: HChoice,
}

impl HStarTable {
    pub fn uniform(default_h: HChoice) -> Self {
        Self {
            entries: BTreeMap::new(),
            default_h,
        }
    }

    pub fn get(&self, relation: RelationId, direction: Direction) -> HChoice {
        self.entries
            .get(&(relation, direction))
            .copied()
            .unwrap_or(self.default_h)
    }

    /// `relation<TAB>direction<TAB>h` lines sorted by relation label and
    /// direction, followed by a `*<TAB>*<TAB>h` line for the default.
    pub fn to_tsv(&self, symbols: &Symbols) -> String {
        let mut rows: Vec<(&str, Direction, HChoice)> = self
            .entries
            .iter()
            .map(|(&(r, d), &h)| (symbols.relation_label(r), d, h))
            .collect();
        rows.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(&b.1)));
        let mut out = String::new();
        for (r, d, h) in rows {
            out.push_str(&format!("{r}\t{d}\t{h}\n"));
        }
        out.push_str(&format!("*\t*\t{}\n", self.default_h));
        out
    }

    /// Reads the format written by [`HStarTable::to_tsv`]. Without a `*`
    /// line the default is `default_h`.
    pub fn from_tsv<R: BufRead>(source: R, symbols: &mut Symbols, default_h: HChoice) -> Result<Self, String> {
        let mut table = HStarTable::uniform(default_h);
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err(format!("line {}: expected relation, direction, h", i + 1));
            }
            let h: HChoice = f[2].parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            if f[0] == "*" && f[1] == "*" {
                table.default_h = h;
                continue;
            }
            let d: Direction = f[1].parse().map_err(|e| format!("line {}: {e}", i + 1))?;
            table.entries.insert((symbols.relation(f[0]), d), h);
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Strategy {
    Max,
    MaxPlus,
    NoisyOr,
    NoisyOrTopH(usize),
    NoisyOrTopHStar(HStarTable),
    LogisticLogOdds,
}

impl Strategy {
    pub fn score_key(&self, confs: &[f64], query: &Query) -> Result<ScoreKey, AggregationError> {
        match self {
            Strategy::Max => score_max(confs).map(ScoreKey::scalar),
            Strategy::MaxPlus => key_max_plus(confs),
            Strategy::NoisyOr => score_noisy_or(confs).map(ScoreKey::scalar),
            Strategy::NoisyOrTopH(h) => score_noisy_or_top_h(confs, *h).map(ScoreKey::scalar),
            Strategy::NoisyOrTopHStar(table) => table
                .get(query.relation, query.direction)
                .strategy()
                .score_key(confs, query),
            Strategy::LogisticLogOdds => logistic_logodds(confs).map(ScoreKey::scalar),
        }
    }

    /// Coverage threshold for candidate generation: Max needs one rule per
    /// candidate, top-h needs h, the others need every rule.
    pub fn h_stop(&self, query: &Query) -> Option<usize> {
        match self {
            Strategy::Max => Some(1),
            Strategy::NoisyOrTopH(h) => Some(*h),
            Strategy::NoisyOrTopHStar(table) => table.get(query.relation, query.direction).h_stop(),
            Strategy::MaxPlus | Strategy::NoisyOr | Strategy::LogisticLogOdds => None,
        }
    }

    pub fn policy(&self, query: &Query, top_x: usize) -> GenerationPolicy {
        GenerationPolicy::new(top_x, self.h_stop(query))
    }
}

/// Candidates by descending key; exact key ties are shuffled with a seeded
/// RNG so the order is reproducible for a fixed seed.
pub fn rank_candidates(
    ranking: &CandidateRanking,
    strategy: &Strategy,
    rng_seed: u64,
) -> Result<Vec<(EntityId, ScoreKey)>, AggregationError> {
    let mut scored = ranking
        .candidates
        .iter()
        .map(|(&e, confs)| strategy.score_key(confs, &ranking.query).map(|k| (e, k)))
        .collect::<Result<Vec<_>, _>>()?;
    scored.sort_by(|a, b| b.1.cmp(&a.1));
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut start = 0;
    while start < scored.len() {
        let mut end = start + 1;
        while end < scored.len() && scored[end].1 == scored[start].1 {
            end += 1;
        }
        if end - start > 1 {
            scored[start..end].shuffle(&mut rng);
        }
        start = end;
    }
    Ok(scored)
}

#[derive(Debug, Clone)]
pub struct TuneConfig {
    pub top_x: usize,
    pub seed: u64,
    pub default_h: HChoice,
    pub grounding: GroundingConfig,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            top_x: 200,
            seed: 42,
            default_h: HChoice::TopH(5),
            grounding: GroundingConfig::default(),
        }
    }
}

/// Picks, for every (relation, direction) present in `valid`, the grid value
/// with the highest filtered MRR on that slice; ties go to the smaller h.
/// Candidates are generated once per query with every rule applied, then
/// scored under each grid value.
pub fn tune_h_star(
    train_kg: &KnowledgeGraph,
    ruleset: &RuleSet,
    valid: &[Triple],
    grid: &[HChoice],
    filter: &FilterSet,
    config: &TuneConfig,
) -> Result<HStarTable, GroundingError> {
    let mut grid: Vec<HChoice> = grid.to_vec();
    grid.sort();
    grid.dedup();
    assert!(!grid.is_empty(), "empty h grid");

    let queries: Vec<(Query, EntityId)> = valid
        .iter()
        .flat_map(|t| {
            [
                (Query::tail(t.relation, t.subject), t.object),
                (Query::head(t.relation, t.object), t.subject),
            ]
        })
        .collect();

    let grounder = Grounder::with_config(train_kg, config.grounding);
    let policy = GenerationPolicy::exhaustive();
    let per_query: Vec<Vec<f64>> = queries
        .par_iter()
        .map(|(q, target)| {
            let ranking = grounder.answer_query(ruleset, q, &policy)?;
            let seed = query_seed(config.seed, q);
            Ok(grid
                .iter()
                .map(|choice| {
                    let mut scored =
                        rank_candidates(&ranking, &choice.strategy(), seed).expect("Max+ and noisy-or keys are total");
                    scored.truncate(config.top_x);
                    filtered_rank(&scored, *target, filter, q, seed).reciprocal()
                })
                .collect())
        })
        .collect::<Result<_, GroundingError>>()?;

    let mut sums: HashMap<(RelationId, Direction), Vec<f64>> = HashMap::new();
    for ((q, _), rr) in queries.iter().zip(&per_query) {
        let acc = sums
            .entry((q.relation, q.direction))
            .or_insert_with(|| vec![0.0; grid.len()]);
        for (a, r) in acc.iter_mut().zip(rr) {
            *a += r;
        }
    }
    let mut table = HStarTable::uniform(config.default_h);
    for (slice, acc) in sums {
        let mut best = 0;
        for i in 1..grid.len() {
            if acc[i] > acc[best] {
                best = i;
            }
        }
        table.entries.insert(slice, grid[best]);
    }
    Ok(table)
}
