//! Filtered ranking metrics: MRR and hits@k over head and tail queries.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::aggregation::ScoreKey;
use crate::grounding::{Direction, Query};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Symbols, Triple};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("test set is empty")]
    EmptyTestSet,
}

/// Known true triples removed from the ranking before the target is placed.
#[derive(Debug, Clone, Default)]
pub struct FilterSet {
    known: HashSet<Triple>,
}

impl FilterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_graph(kg: &KnowledgeGraph) -> Self {
        kg.iter().copied().collect()
    }

    pub fn insert(&mut self, t: Triple) -> bool {
        self.known.insert(t)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }
}

impl Extend<Triple> for FilterSet {
    fn extend<I: IntoIterator<Item = Triple>>(&mut self, iter: I) {
        self.known.extend(iter);
    }
}

impl FromIterator<Triple> for FilterSet {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Self {
            known: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rank {
    /// 1-based position.
    At(usize),
    /// The target is not among the candidates.
    Unranked,
}

impl Rank {
    pub fn reciprocal(self) -> f64 {
        match self {
            Rank::At(r) => 1.0 / r as f64,
            Rank::Unranked => 0.0,
        }
    }

    pub fn within(self, k: usize) -> bool {
        matches!(self, Rank::At(r) if r <= k)
    }
}

/// Per-query RNG seed derived from the run seed and the query itself, so a
/// query gets the same tie order no matter which worker handles it.
pub fn query_seed(seed: u64, query: &Query) -> u64 {
    let dir = match query.direction {
        Direction::Tail => 0u64,
        Direction::Head => 1,
    };
    let mut x = seed;
    for v in [query.relation.0 as u64, query.anchor.0 as u64, dir] {
        x = splitmix(x ^ v);
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Rank of `target` among `scored` after dropping every other candidate whose
/// completed triple is in `filter`. Among candidates whose key equals the
/// target's, the target's position is drawn uniformly with `seed`.
pub fn filtered_rank(
    scored: &[(EntityId, ScoreKey)],
    target: EntityId,
    filter: &FilterSet,
    query: &Query,
    seed: u64,
) -> Rank {
    let Some((_, key)) = scored.iter().find(|(e, _)| *e == target) else {
        return Rank::Unranked;
    };
    let mut above = 0usize;
    let mut tied = 0usize;
    for (e, k) in scored {
        if *e == target || filter.contains(&query.complete(*e)) {
            continue;
        }
        match k.cmp(key) {
            std::cmp::Ordering::Greater => above += 1,
            std::cmp::Ordering::Equal => tied += 1,
            std::cmp::Ordering::Less => {}
        }
    }
    let offset = if tied == 0 {
        0
    } else {
        ChaCha8Rng::seed_from_u64(seed).gen_range(0..=tied)
    };
    Rank::At(1 + above + offset)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalConfig {
    pub hits_levels: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            hits_levels: vec![1, 3, 10],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub queries: usize,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
}

impl Metrics {
    fn from_ranks(ranks: &[Rank], levels: &[usize]) -> Self {
        let n = ranks.len() as f64;
        let mrr = ranks.iter().map(|r| r.reciprocal()).sum::<f64>() / n;
        let hits = levels
            .iter()
            .map(|&k| (k, ranks.iter().filter(|r| r.within(k)).count() as f64 / n))
            .collect();
        Self {
            queries: ranks.len(),
            mrr,
            hits,
        }
    }

    pub fn hits_at(&self, k: usize) -> Option<f64> {
        self.hits.get(&k).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Metrics,
    pub slices: BTreeMap<(RelationId, Direction), Metrics>,
}

/// The two queries of every test triple, tail query first.
pub fn test_queries(test: &[Triple]) -> Vec<(Query, EntityId)> {
    test.iter()
        .flat_map(|t| {
            [
                (Query::tail(t.relation, t.subject), t.object),
                (Query::head(t.relation, t.object), t.subject),
            ]
        })
        .collect()
}

/// Ranks every test query with `ranker` and aggregates filtered metrics.
/// `ranker` gets the query and its tie-break seed and returns candidates in
/// ranked order.
pub fn evaluate<F>(test: &[Triple], ranker: F, filter: &FilterSet, config: &EvalConfig) -> Result<EvalReport, EvalError>
where
    F: Fn(&Query, u64) -> Vec<(EntityId, ScoreKey)> + Sync,
{
    if test.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    let queries = test_queries(test);
    let ranks: Vec<Rank> = queries
        .par_iter()
        .map(|(q, target)| {
            let seed = query_seed(config.seed, q);
            filtered_rank(&ranker(q, seed), *target, filter, q, seed)
        })
        .collect();
    Ok(report_from_ranks(&queries, &ranks, &config.hits_levels))
}

pub fn report_from_ranks(queries: &[(Query, EntityId)], ranks: &[Rank], levels: &[usize]) -> EvalReport {
    let mut grouped: BTreeMap<(RelationId, Direction), Vec<Rank>> = BTreeMap::new();
    for ((q, _), r) in queries.iter().zip(ranks) {
        grouped.entry((q.relation, q.direction)).or_default().push(*r);
    }
    EvalReport {
        overall: Metrics::from_ranks(ranks, levels),
        slices: grouped
            .into_iter()
            .map(|(k, rs)| (k, Metrics::from_ranks(&rs, levels)))
            .collect(),
    }
}

impl EvalReport {
    /// Human-readable aligned table.
    pub fn to_table(&self, symbols: &Symbols) -> String {
        let levels: Vec<usize> = self.overall.hits.keys().copied().collect();
        let mut header = vec![
            "relation".to_string(),
            "direction".into(),
            "queries".into(),
            "mrr".into(),
        ];
        header.extend(levels.iter().map(|k| format!("hits@{k}")));
        let row = |rel: &str, dir: &str, m: &Metrics| {
            let mut r = vec![
                rel.to_string(),
                dir.to_string(),
                m.queries.to_string(),
                format!("{:.4}", m.mrr),
            ];
            r.extend(levels.iter().map(|k| format!("{:.4}", m.hits[k])));
            r
        };
        let mut rows = vec![header];
        for ((rel, dir), m) in &self.slices {
            rows.push(row(symbols.relation_label(*rel), dir.as_str(), m));
        }
        rows.push(row("ALL", "both", &self.overall));
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for r in rows {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, w))| {
                    if i < 2 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// `metric<TAB>value` lines for the overall metrics.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "queries\t{}", self.overall.queries).unwrap();
        writeln!(out, "mrr\t{}", self.overall.mrr).unwrap();
        for (k, v) in &self.overall.hits {
            writeln!(out, "hits@{k}\t{v}").unwrap();
        }
        out
    }

    /// `relation<TAB>direction<TAB>mrr<TAB>hits@k...` lines, one per slice.
    pub fn slices_tsv(&self, symbols: &Symbols) -> String {
        let mut out = String::new();
        for ((rel, dir), m) in &self.slices {
            write!(out, "{}\t{}\t{}", symbols.relation_label(*rel), dir, m.mrr).unwrap();
            for v in m.hits.values() {
                write!(out, "\t{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}
