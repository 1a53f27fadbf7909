//! C ABI for ruleagg. All objects are opaque handles created and released
//! through this interface. Functions return a [`RuleaggStatus`]; on failure
//! `ruleagg_last_error` describes the problem for the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use ruleagg::aggregation::{
    logistic_logodds, rank_candidates, score_max, score_noisy_or, score_noisy_or_top_h, AggregationError, Strategy,
};
use ruleagg::eval::query_seed;
use ruleagg::grounding::{Grounder, GroundingConfig, Query};
use ruleagg::kg::{read_triples, KnowledgeGraph, Symbols};
use ruleagg::prob::{frechet_upper, max_corr_solution};
use ruleagg::rules::{read_rules, Dialect, ParseConfig, Rule, RuleSet};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleaggStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    InvalidArgument = 5,
    Grounding = 6,
    EmptyPrediction = 7,
    DegenerateValue = 8,
    OutOfRange = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleaggDirection {
    /// `relation(anchor, ?)`
    Tail = 0,
    /// `relation(?, anchor)`
    Head = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleaggStrategy {
    Max = 0,
    MaxPlus = 1,
    NoisyOr = 2,
    NoisyOrTopH = 3,
    Logistic = 4,
}

/// Graph, rules and the symbol tables that label them.
pub struct RuleaggEngine {
    symbols: Symbols,
    graph: KnowledgeGraph,
    rules: Vec<Rule>,
    ruleset: RuleSet,
}

/// Ranked candidates of one query.
pub struct RuleaggRanking {
    labels: Vec<CString>,
    scores: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(RuleaggStatus, String);

impl Failure {
    fn new(status: RuleaggStatus, msg: impl Into<String>) -> Self {
        Self(status, msg.into())
    }
}

impl From<AggregationError> for Failure {
    fn from(e: AggregationError) -> Self {
        let status = match e {
            AggregationError::EmptyPrediction => RuleaggStatus::EmptyPrediction,
            AggregationError::DegenerateConfidence(_) => RuleaggStatus::DegenerateValue,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RuleaggStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RuleaggStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RuleaggStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(RuleaggStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(RuleaggStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure::new(RuleaggStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure::new(RuleaggStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    handle_mut(p, "output pointer")
}

unsafe fn confs<'a>(p: *const f64, len: usize) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::new(RuleaggStatus::NullPointer, "confidence array is null"));
    }
    Ok(slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn ruleagg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// New empty engine. Release with `ruleagg_engine_free`.
#[no_mangle]
pub extern "C" fn ruleagg_engine_new() -> *mut RuleaggEngine {
    Box::into_raw(Box::new(RuleaggEngine {
        symbols: Symbols::new(),
        graph: KnowledgeGraph::new(),
        rules: Vec::new(),
        ruleset: RuleSet::default(),
    }))
}

#[no_mangle]
pub unsafe extern "C" fn ruleagg_engine_free(engine: *mut RuleaggEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Adds the triples of a `subject<TAB>relation<TAB>object` file to the graph.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_engine_load_triples(engine: *mut RuleaggEngine, path: *const c_char) -> RuleaggStatus {
    guard(|| {
        let engine = handle_mut(engine, "engine")?;
        let path = text(path, "path")?;
        let file = File::open(path).map_err(|e| Failure::new(RuleaggStatus::Io, format!("{path}: {e}")))?;
        let triples = read_triples(BufReader::new(file), &mut engine.symbols)
            .map_err(|e| Failure::new(RuleaggStatus::Parse, format!("{path}: {e}")))?;
        for t in triples {
            engine.graph.insert(t);
        }
        Ok(())
    })
}

/// Adds the rules of a file in the given dialect (`canonical`, `anyburl` or
/// `amie`).
#[no_mangle]
pub unsafe extern "C" fn ruleagg_engine_load_rules(
    engine: *mut RuleaggEngine,
    path: *const c_char,
    dialect: *const c_char,
) -> RuleaggStatus {
    guard(|| {
        let engine = handle_mut(engine, "engine")?;
        let path = text(path, "path")?;
        let dialect: Dialect = text(dialect, "dialect")?
            .parse()
            .map_err(|e: ruleagg::rules::RuleError| Failure::new(RuleaggStatus::InvalidArgument, e.to_string()))?;
        let file = File::open(path).map_err(|e| Failure::new(RuleaggStatus::Io, format!("{path}: {e}")))?;
        let rules = read_rules(
            BufReader::new(file),
            dialect,
            &mut engine.symbols,
            &ParseConfig::default(),
        )
        .map_err(|e| Failure::new(RuleaggStatus::Parse, format!("{path}: {e}")))?;
        engine.rules.extend(rules);
        engine.ruleset = RuleSet::new(engine.rules.clone());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ruleagg_engine_num_triples(engine: *const RuleaggEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.graph.len())
}

/// Number of distinct rules.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_engine_num_rules(engine: *const RuleaggEngine) -> usize {
    engine.as_ref().map_or(0, |e| e.ruleset.len())
}

/// Writes whether `relation(subject, object)` is in the graph. Unknown labels
/// give false.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_engine_contains(
    engine: *const RuleaggEngine,
    subject: *const c_char,
    relation: *const c_char,
    object: *const c_char,
    result: *mut bool,
) -> RuleaggStatus {
    guard(|| {
        let engine = handle(engine, "engine")?;
        let (s, r, o) = (
            text(subject, "subject")?,
            text(relation, "relation")?,
            text(object, "object")?,
        );
        let sym = &engine.symbols;
        let found = match (sym.find_entity(s), sym.find_relation(r), sym.find_entity(o)) {
            (Some(s), Some(r), Some(o)) => engine.graph.contains(&ruleagg::kg::Triple::new(r, s, o)),
            _ => false,
        };
        *out(result)? = found;
        Ok(())
    })
}

/// Answers one query and writes a ranking handle (release with
/// `ruleagg_ranking_free`). `h` is used by `NOISY_OR_TOP_H` only. Unknown
/// labels give an empty ranking.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn ruleagg_engine_answer(
    engine: *const RuleaggEngine,
    relation: *const c_char,
    anchor: *const c_char,
    direction: RuleaggDirection,
    strategy: RuleaggStrategy,
    h: usize,
    top_x: usize,
    seed: u64,
    ranking: *mut *mut RuleaggRanking,
) -> RuleaggStatus {
    guard(|| {
        let engine = handle(engine, "engine")?;
        let (r, a) = (text(relation, "relation")?, text(anchor, "anchor")?);
        let slot = out(ranking)?;
        if top_x == 0 {
            return Err(Failure::new(RuleaggStatus::InvalidArgument, "top_x must be at least 1"));
        }
        let strategy = match strategy {
            RuleaggStrategy::Max => Strategy::Max,
            RuleaggStrategy::MaxPlus => Strategy::MaxPlus,
            RuleaggStrategy::NoisyOr => Strategy::NoisyOr,
            RuleaggStrategy::NoisyOrTopH if h == 0 => {
                return Err(Failure::new(RuleaggStatus::InvalidArgument, "h must be at least 1"))
            }
            RuleaggStrategy::NoisyOrTopH => Strategy::NoisyOrTopH(h),
            RuleaggStrategy::Logistic => Strategy::LogisticLogOdds,
        };
        let sym = &engine.symbols;
        let mut result = RuleaggRanking {
            labels: Vec::new(),
            scores: Vec::new(),
        };
        if let (Some(r), Some(a)) = (sym.find_relation(r), sym.find_entity(a)) {
            let query = match direction {
                RuleaggDirection::Tail => Query::tail(r, a),
                RuleaggDirection::Head => Query::head(r, a),
            };
            let g = Grounder::with_config(&engine.graph, GroundingConfig::default());
            let candidates = g
                .answer_query(&engine.ruleset, &query, &strategy.policy(&query, top_x))
                .map_err(|e| Failure::new(RuleaggStatus::Grounding, e.to_string()))?;
            let mut scored = rank_candidates(&candidates, &strategy, query_seed(seed, &query))?;
            scored.truncate(top_x);
            for (e, key) in scored {
                result
                    .labels
                    .push(CString::new(sym.entity_label(e)).unwrap_or_default());
                result.scores.push(key.primary);
            }
        }
        *slot = Box::into_raw(Box::new(result));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ruleagg_ranking_len(ranking: *const RuleaggRanking) -> usize {
    ranking.as_ref().map_or(0, |r| r.labels.len())
}

/// Label of the candidate at `index`, or null when out of range. Owned by the
/// ranking.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_ranking_label(ranking: *const RuleaggRanking, index: usize) -> *const c_char {
    ranking
        .as_ref()
        .and_then(|r| r.labels.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// Primary score of the candidate at `index`.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_ranking_score(
    ranking: *const RuleaggRanking,
    index: usize,
    score: *mut f64,
) -> RuleaggStatus {
    guard(|| {
        let r = handle(ranking, "ranking")?;
        let s = r.scores.get(index).ok_or_else(|| {
            Failure::new(
                RuleaggStatus::OutOfRange,
                format!("index {index} of {}", r.scores.len()),
            )
        })?;
        *out(score)? = *s;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ruleagg_ranking_free(ranking: *mut RuleaggRanking) {
    if !ranking.is_null() {
        drop(Box::from_raw(ranking));
    }
}

/// The scoring functions below take confidences sorted from highest to lowest.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_score_max(confidences: *const f64, len: usize, score: *mut f64) -> RuleaggStatus {
    guard(|| {
        *out(score)? = score_max(confs(confidences, len)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ruleagg_score_noisy_or(confidences: *const f64, len: usize, score: *mut f64) -> RuleaggStatus {
    guard(|| {
        *out(score)? = score_noisy_or(confs(confidences, len)?)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ruleagg_score_noisy_or_top_h(
    confidences: *const f64,
    len: usize,
    h: usize,
    score: *mut f64,
) -> RuleaggStatus {
    guard(|| {
        if h == 0 {
            return Err(Failure::new(RuleaggStatus::InvalidArgument, "h must be at least 1"));
        }
        *out(score)? = score_noisy_or_top_h(confs(confidences, len)?, h)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ruleagg_score_logistic(confidences: *const f64, len: usize, score: *mut f64) -> RuleaggStatus {
    guard(|| {
        *out(score)? = logistic_logodds(confs(confidences, len)?)?;
        Ok(())
    })
}

/// Largest correlation two Bernoulli variables with marginals `p_i` and `p_j`
/// can have.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_frechet_upper(p_i: f64, p_j: f64, bound: *mut f64) -> RuleaggStatus {
    guard(|| {
        let u = frechet_upper(p_i, p_j).map_err(|e| Failure::new(RuleaggStatus::DegenerateValue, e.to_string()))?;
        *out(bound)? = u;
        Ok(())
    })
}

/// Masses of the nested realisations of the max-correlation distribution for
/// `n` descending marginals: `z[m]` is the probability that exactly the first
/// `m` rules hold. `z` must have room for `n + 1` values.
#[no_mangle]
pub unsafe extern "C" fn ruleagg_max_corr_z(
    marginals: *const f64,
    n: usize,
    z: *mut f64,
    z_len: usize,
) -> RuleaggStatus {
    guard(|| {
        let m = confs(marginals, n)?;
        if z.is_null() {
            return Err(Failure::new(RuleaggStatus::NullPointer, "z is null"));
        }
        if z_len < n + 1 {
            return Err(Failure::new(
                RuleaggStatus::OutOfRange,
                format!("z needs {} slots, got {z_len}", n + 1),
            ));
        }
        let sol = max_corr_solution(m).map_err(|e| Failure::new(RuleaggStatus::InvalidArgument, e.to_string()))?;
        slice::from_raw_parts_mut(z, n + 1).copy_from_slice(&sol.z);
        Ok(())
    })
}
