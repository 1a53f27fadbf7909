//! Rule application against a [`KnowledgeGraph`].
//!
//! Bodies are grounded by depth-first search. At every node the next atom is
//! the unprocessed one with the smallest actual fan-out under the current
//! partial binding, preferring atoms with at least one bound term; ties go to
//! the lower atom index. All index lists are sorted, so emission order is a
//! function of the inputs alone.
//!
//! When only the head variables matter (predictions, candidate generation),
//! the search switches to an existence check as soon as every head variable
//! is bound.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple};
use crate::rules::{Atom, Rule, RuleSet, Term};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("rule body produced more than {limit} intermediate bindings")]
    BodyExplosion { limit: u64 },
    #[error("confidence is undefined for a rule without predictions")]
    UndefinedConfidence,
    #[error("no fixpoint after {rounds} rounds")]
    FixpointBudgetExceeded { rounds: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GroundingConfig {
    /// Cap on intermediate bindings per rule application.
    pub max_bindings: u64,
    /// Require distinct variables to bind distinct entities.
    pub distinct_bindings: bool,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            max_bindings: 10_000_000,
            distinct_bindings: false,
        }
    }
}

impl GroundingConfig {
    fn unbounded() -> Self {
        Self {
            max_bindings: u64::MAX,
            ..Self::default()
        }
    }
}

/// Variable name to entity.
pub type Binding = BTreeMap<String, EntityId>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// `r(anchor, ?)`
    Tail,
    /// `r(?, anchor)`
    Head,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Tail => "tail",
            Direction::Head => "head",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tail" => Ok(Direction::Tail),
            "head" => Ok(Direction::Head),
            other => Err(format!("unknown direction `{other}` (expected head or tail)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Query {
    pub relation: RelationId,
    pub anchor: EntityId,
    pub direction: Direction,
}

impl Query {
    pub fn tail(relation: RelationId, anchor: EntityId) -> Self {
        Self {
            relation,
            anchor,
            direction: Direction::Tail,
        }
    }

    pub fn head(relation: RelationId, anchor: EntityId) -> Self {
        Self {
            relation,
            anchor,
            direction: Direction::Head,
        }
    }

    /// The triple obtained by filling the open slot with `candidate`.
    pub fn complete(&self, candidate: EntityId) -> Triple {
        match self.direction {
            Direction::Tail => Triple::new(self.relation, self.anchor, candidate),
            Direction::Head => Triple::new(self.relation, candidate, self.anchor),
        }
    }
}

/// Candidates of one query with the confidences of their predicting rules,
/// highest first, one entry per rule.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRanking {
    pub query: Query,
    pub candidates: BTreeMap<EntityId, Vec<f64>>,
}

impl CandidateRanking {
    pub fn new(query: Query) -> Self {
        Self {
            query,
            candidates: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerationPolicy {
    pub top_x: usize,
    /// Stop once `top_x` candidates each have at least this many predicting
    /// rules. `None` applies every rule.
    pub h_stop: Option<usize>,
}

impl GenerationPolicy {
    pub fn new(top_x: usize, h_stop: Option<usize>) -> Self {
        assert!(top_x >= 1, "top_x must be positive");
        assert!(h_stop != Some(0), "h_stop must be positive");
        Self { top_x, h_stop }
    }

    pub fn exhaustive() -> Self {
        Self {
            top_x: usize::MAX,
            h_stop: None,
        }
    }
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        Self::new(200, None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceStats {
    pub predicted: u64,
    pub correct: u64,
    pub confidence: f64,
}

// ---------------------------------------------------------------------------
// Compiled rules
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Var(usize),
    Const(EntityId),
}

#[derive(Debug, Clone, Copy)]
struct CAtom {
    relation: RelationId,
    first: Slot,
    second: Slot,
}

#[derive(Debug, Clone)]
struct Plan {
    vars: Vec<String>,
    head: CAtom,
    body: Vec<CAtom>,
}

impl Plan {
    fn compile(rule: &Rule) -> Plan {
        let mut vars: Vec<String> = Vec::new();
        let mut slot = |t: &Term| match t {
            Term::Const(e) => Slot::Const(*e),
            Term::Var(v) => match vars.iter().position(|x| x == v) {
                Some(i) => Slot::Var(i),
                None => {
                    vars.push(v.clone());
                    Slot::Var(vars.len() - 1)
                }
            },
        };
        let mut catom = |a: &Atom| CAtom {
            relation: a.relation,
            first: slot(&a.first),
            second: slot(&a.second),
        };
        let head = catom(&rule.head);
        let body = rule.body.iter().map(&mut catom).collect();
        Plan { vars, head, body }
    }

    fn head_vars(&self) -> Vec<usize> {
        let mut v = Vec::new();
        for s in [self.head.first, self.head.second] {
            if let Slot::Var(i) = s {
                if !v.contains(&i) {
                    v.push(i);
                }
            }
        }
        v
    }

    /// Seeds the head with `(subject, object)` values; `None` leaves a slot
    /// open. Returns `None` if a head constant conflicts.
    fn seed_head(&self, subject: Option<EntityId>, object: Option<EntityId>) -> Option<Vec<Option<EntityId>>> {
        let mut vals = vec![None; self.vars.len()];
        for (slot, value) in [(self.head.first, subject), (self.head.second, object)] {
            let Some(e) = value else { continue };
            match slot {
                Slot::Const(c) if c != e => return None,
                Slot::Const(_) => {}
                Slot::Var(i) => match vals[i] {
                    Some(prev) if prev != e => return None,
                    _ => vals[i] = Some(e),
                },
            }
        }
        Some(vals)
    }

    fn resolve(slot: Slot, vals: &[Option<EntityId>]) -> Option<EntityId> {
        match slot {
            Slot::Const(e) => Some(e),
            Slot::Var(i) => vals[i],
        }
    }

    fn head_triple(&self, vals: &[Option<EntityId>]) -> Triple {
        Triple::new(
            self.head.relation,
            Self::resolve(self.head.first, vals).expect("unbound head"),
            Self::resolve(self.head.second, vals).expect("unbound head"),
        )
    }
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

struct Search<'a> {
    kg: &'a KnowledgeGraph,
    body: &'a [CAtom],
    config: GroundingConfig,
    used: u64,
    done: Vec<bool>,
}

enum Choice<'a> {
    Check,
    Objects(&'a [EntityId]),
    Subjects(&'a [EntityId]),
    Pairs(&'a [(EntityId, EntityId)]),
}

impl<'a> Search<'a> {
    fn new(kg: &'a KnowledgeGraph, body: &'a [CAtom], config: GroundingConfig) -> Self {
        Self {
            kg,
            body,
            config,
            used: 0,
            done: vec![false; body.len()],
        }
    }

    fn tick(&mut self) -> Result<(), GroundingError> {
        self.used += 1;
        if self.used > self.config.max_bindings {
            Err(GroundingError::BodyExplosion {
                limit: self.config.max_bindings,
            })
        } else {
            Ok(())
        }
    }

    fn can_bind(&self, vals: &[Option<EntityId>], slot: usize, e: EntityId) -> bool {
        !self.config.distinct_bindings || vals.iter().enumerate().all(|(i, v)| i == slot || *v != Some(e))
    }

    fn pick(&self, vals: &[Option<EntityId>]) -> Option<(usize, Choice<'a>)> {
        let kg = self.kg;
        let mut best: Option<(usize, (bool, usize), Choice<'a>)> = None;
        for (i, atom) in self.body.iter().enumerate() {
            if self.done[i] {
                continue;
            }
            let s = Plan::resolve(atom.first, vals);
            let o = Plan::resolve(atom.second, vals);
            let (key, choice) = match (s, o) {
                (Some(s), Some(o)) => {
                    let hit = kg.contains(&Triple::new(atom.relation, s, o));
                    ((false, hit as usize), Choice::Check)
                }
                (Some(s), None) => {
                    let l = kg.objects_of(atom.relation, s);
                    ((false, l.len()), Choice::Objects(l))
                }
                (None, Some(o)) => {
                    let l = kg.subjects_of(atom.relation, o);
                    ((false, l.len()), Choice::Subjects(l))
                }
                (None, None) => {
                    let l = kg.pairs_of(atom.relation);
                    ((true, l.len()), Choice::Pairs(l))
                }
            };
            if best.as_ref().is_none_or(|(_, k, _)| key < *k) {
                best = Some((i, key, choice));
            }
        }
        best.map(|(i, _, c)| (i, c))
    }

    /// Enumerates complete groundings. `project`: once all these variables
    /// are bound the rest of the body is only checked for satisfiability and
    /// `emit` runs at most once for that partial binding. `emit` returns
    /// `true` to stop the whole search.
    fn run(
        &mut self,
        vals: &mut Vec<Option<EntityId>>,
        remaining: usize,
        project: Option<&[usize]>,
        emit: &mut dyn FnMut(&[Option<EntityId>]) -> bool,
    ) -> Result<bool, GroundingError> {
        if remaining == 0 {
            return Ok(emit(vals));
        }
        if let Some(p) = project {
            if p.iter().all(|&v| vals[v].is_some()) {
                let mut found = false;
                self.run(vals, remaining, None, &mut |_| {
                    found = true;
                    true
                })?;
                return Ok(found && emit(vals));
            }
        }
        let Some((i, choice)) = self.pick(vals) else {
            return Ok(emit(vals));
        };
        let atom = self.body[i];
        self.done[i] = true;
        let stop = self.step(vals, remaining, project, emit, atom, choice);
        self.done[i] = false;
        stop
    }

    fn step(
        &mut self,
        vals: &mut Vec<Option<EntityId>>,
        remaining: usize,
        project: Option<&[usize]>,
        emit: &mut dyn FnMut(&[Option<EntityId>]) -> bool,
        atom: CAtom,
        choice: Choice<'a>,
    ) -> Result<bool, GroundingError> {
        match choice {
            Choice::Check => {
                let s = Plan::resolve(atom.first, vals).unwrap();
                let o = Plan::resolve(atom.second, vals).unwrap();
                if self.kg.contains(&Triple::new(atom.relation, s, o)) {
                    self.tick()?;
                    return self.run(vals, remaining - 1, project, emit);
                }
                Ok(false)
            }
            Choice::Objects(list) | Choice::Subjects(list) => {
                let open = if matches!(choice, Choice::Objects(_)) {
                    atom.second
                } else {
                    atom.first
                };
                let Slot::Var(v) = open else {
                    unreachable!("open slot is always a variable")
                };
                for &e in list {
                    if !self.can_bind(vals, v, e) {
                        continue;
                    }
                    self.tick()?;
                    vals[v] = Some(e);
                    let stop = self.run(vals, remaining - 1, project, emit);
                    vals[v] = None;
                    if stop? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Choice::Pairs(list) => {
                let (Slot::Var(a), Slot::Var(b)) = (atom.first, atom.second) else {
                    unreachable!("both slots open")
                };
                for &(s, o) in list {
                    if a == b && s != o {
                        continue;
                    }
                    if !self.can_bind(vals, a, s) {
                        continue;
                    }
                    vals[a] = Some(s);
                    if a != b && !self.can_bind(vals, b, o) {
                        vals[a] = None;
                        continue;
                    }
                    self.tick()?;
                    vals[b] = Some(o);
                    let stop = self.run(vals, remaining - 1, project, emit);
                    vals[a] = None;
                    vals[b] = None;
                    if stop? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
        }
    }
}

fn seeded_ok(config: &GroundingConfig, vals: &[Option<EntityId>]) -> bool {
    if !config.distinct_bindings {
        return true;
    }
    let bound: Vec<EntityId> = vals.iter().flatten().copied().collect();
    let unique: HashSet<EntityId> = bound.iter().copied().collect();
    unique.len() == bound.len()
}

// ---------------------------------------------------------------------------
// Grounder
// ---------------------------------------------------------------------------

/// Rule application over one graph with one configuration.
#[derive(Debug, Clone, Copy)]
pub struct Grounder<'a> {
    kg: &'a KnowledgeGraph,
    config: GroundingConfig,
}

impl<'a> Grounder<'a> {
    pub fn new(kg: &'a KnowledgeGraph) -> Self {
        Self {
            kg,
            config: GroundingConfig::default(),
        }
    }

    pub fn with_config(kg: &'a KnowledgeGraph, config: GroundingConfig) -> Self {
        Self { kg, config }
    }

    pub fn graph(&self) -> &'a KnowledgeGraph {
        self.kg
    }

    /// Every total binding extending `seed` under which all body atoms are
    /// facts. Seed entries for names the rule does not use are ignored.
    pub fn ground_body(&self, rule: &Rule, seed: &Binding) -> Result<Vec<Binding>, GroundingError> {
        let plan = Plan::compile(rule);
        let mut vals: Vec<Option<EntityId>> = plan.vars.iter().map(|v| seed.get(v).copied()).collect();
        if !seeded_ok(&self.config, &vals) {
            return Ok(Vec::new());
        }
        let mut out = Vec::new();
        let mut search = Search::new(self.kg, &plan.body, self.config);
        search.run(&mut vals, plan.body.len(), None, &mut |vals| {
            out.push(
                plan.vars
                    .iter()
                    .zip(vals)
                    .filter_map(|(n, v)| v.map(|e| (n.clone(), e)))
                    .collect(),
            );
            false
        })?;
        Ok(out)
    }

    /// Distinct head groundings the rule one-step entails.
    pub fn predictions(&self, rule: &Rule) -> Result<BTreeSet<Triple>, GroundingError> {
        let plan = Plan::compile(rule);
        let head_vars = plan.head_vars();
        let mut vals = vec![None; plan.vars.len()];
        let mut out = BTreeSet::new();
        let mut search = Search::new(self.kg, &plan.body, self.config);
        search.run(&mut vals, plan.body.len(), Some(&head_vars), &mut |vals| {
            out.insert(plan.head_triple(vals));
            false
        })?;
        Ok(out)
    }

    /// Whether `rule` alone one-step entails `t`.
    pub fn predicts(&self, rule: &Rule, t: &Triple) -> Result<bool, GroundingError> {
        if rule.head.relation != t.relation {
            return Ok(false);
        }
        let plan = Plan::compile(rule);
        let Some(mut vals) = plan.seed_head(Some(t.subject), Some(t.object)) else {
            return Ok(false);
        };
        if !seeded_ok(&self.config, &vals) {
            return Ok(false);
        }
        let mut found = false;
        let mut search = Search::new(self.kg, &plan.body, self.config);
        search.run(&mut vals, plan.body.len(), None, &mut |_| {
            found = true;
            true
        })?;
        Ok(found)
    }

    pub fn one_step_entails(&self, ruleset: &RuleSet, t: &Triple) -> Result<bool, GroundingError> {
        for &i in ruleset.for_relation(t.relation) {
            if self.predicts(&ruleset.rules()[i], t)? {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn confidence(&self, rule: &Rule) -> Result<ConfidenceStats, GroundingError> {
        let preds = self.predictions(rule)?;
        if preds.is_empty() {
            return Err(GroundingError::UndefinedConfidence);
        }
        let correct = preds.iter().filter(|t| self.kg.contains(t)).count() as u64;
        let predicted = preds.len() as u64;
        Ok(ConfidenceStats {
            predicted,
            correct,
            confidence: correct as f64 / predicted as f64,
        })
    }

    /// Candidates `rule` proposes for the open slot of `query`, ascending.
    pub fn candidates(&self, rule: &Rule, query: &Query) -> Result<BTreeSet<EntityId>, GroundingError> {
        let mut out = BTreeSet::new();
        if rule.head.relation != query.relation {
            return Ok(out);
        }
        let plan = Plan::compile(rule);
        let (seed, open) = match query.direction {
            Direction::Tail => (plan.seed_head(Some(query.anchor), None), plan.head.second),
            Direction::Head => (plan.seed_head(None, Some(query.anchor)), plan.head.first),
        };
        let Some(mut vals) = seed else { return Ok(out) };
        if !seeded_ok(&self.config, &vals) {
            return Ok(out);
        }
        let mut search = Search::new(self.kg, &plan.body, self.config);
        match open {
            Slot::Const(c) => {
                let mut found = false;
                search.run(&mut vals, plan.body.len(), None, &mut |_| {
                    found = true;
                    true
                })?;
                if found {
                    out.insert(c);
                }
            }
            Slot::Var(v) if vals[v].is_some() => {
                // r(X,X): the candidate is the anchor itself.
                let mut found = false;
                search.run(&mut vals, plan.body.len(), None, &mut |_| {
                    found = true;
                    true
                })?;
                if found {
                    out.insert(vals[v].unwrap());
                }
            }
            Slot::Var(v) => {
                search.run(&mut vals, plan.body.len(), Some(&[v]), &mut |vals| {
                    out.insert(vals[v].unwrap());
                    false
                })?;
            }
        }
        Ok(out)
    }

    /// Applies the rules for `query.relation` in descending confidence order,
    /// recording each rule's confidence on every candidate it proposes. With
    /// `policy.h_stop = Some(h)`, generation stops once at least `top_x`
    /// candidates each have `h` or more predicting rules.
    pub fn answer_query(
        &self,
        ruleset: &RuleSet,
        query: &Query,
        policy: &GenerationPolicy,
    ) -> Result<CandidateRanking, GroundingError> {
        let mut ranking = CandidateRanking::new(*query);
        let mut covered = 0usize;
        for &i in ruleset.for_relation(query.relation) {
            let rule = &ruleset.rules()[i];
            for c in self.candidates(rule, query)? {
                let confs = ranking.candidates.entry(c).or_default();
                confs.push(rule.confidence);
                if Some(confs.len()) == policy.h_stop {
                    covered += 1;
                }
            }
            if policy.h_stop.is_some() && ranking.candidates.len() >= policy.top_x && covered >= policy.top_x {
                break;
            }
        }
        Ok(ranking)
    }

    /// Least superset of the graph closed under one-step application of all
    /// rules, over the graph's own entities. Returns the closure and the
    /// number of rounds, counting the final round that adds nothing.
    pub fn forward_chain_rounds(
        &self,
        ruleset: &RuleSet,
        max_rounds: Option<usize>,
    ) -> Result<(KnowledgeGraph, usize), GroundingError> {
        let entities: HashSet<EntityId> = self.kg.iter().flat_map(|t| [t.subject, t.object]).collect();
        let mut graph = self.kg.clone();
        let mut rounds = 0;
        loop {
            rounds += 1;
            let g = Grounder::with_config(&graph, self.config);
            let mut fresh = BTreeSet::new();
            for rule in ruleset.iter() {
                for t in g.predictions(rule)? {
                    if !graph.contains(&t) && entities.contains(&t.subject) && entities.contains(&t.object) {
                        fresh.insert(t);
                    }
                }
            }
            if fresh.is_empty() {
                return Ok((graph, rounds));
            }
            if max_rounds.is_some_and(|m| rounds >= m) {
                return Err(GroundingError::FixpointBudgetExceeded { rounds });
            }
            for t in fresh {
                graph.insert(t);
            }
        }
    }

    pub fn forward_chain(
        &self,
        ruleset: &RuleSet,
        max_rounds: Option<usize>,
    ) -> Result<KnowledgeGraph, GroundingError> {
        self.forward_chain_rounds(ruleset, max_rounds).map(|(g, _)| g)
    }
}

// Free-function forms with the default configuration.

pub fn ground_body(kg: &KnowledgeGraph, rule: &Rule, seed: &Binding) -> Vec<Binding> {
    Grounder::with_config(kg, GroundingConfig::unbounded())
        .ground_body(rule, seed)
        .expect("unbounded search cannot explode")
}

pub fn predictions(kg: &KnowledgeGraph, rule: &Rule) -> Result<BTreeSet<Triple>, GroundingError> {
    Grounder::new(kg).predictions(rule)
}

pub fn one_step_entails(kg: &KnowledgeGraph, ruleset: &RuleSet, t: &Triple) -> Result<bool, GroundingError> {
    Grounder::new(kg).one_step_entails(ruleset, t)
}

/// `cap` overrides the default binding cap.
pub fn confidence(kg: &KnowledgeGraph, rule: &Rule, cap: Option<u64>) -> Result<ConfidenceStats, GroundingError> {
    let mut config = GroundingConfig::default();
    if let Some(cap) = cap {
        config.max_bindings = cap;
    }
    Grounder::with_config(kg, config).confidence(rule)
}

pub fn answer_query(
    kg: &KnowledgeGraph,
    ruleset: &RuleSet,
    query: &Query,
    policy: &GenerationPolicy,
) -> Result<CandidateRanking, GroundingError> {
    Grounder::new(kg).answer_query(ruleset, query, policy)
}

pub fn forward_chain(
    kg: &KnowledgeGraph,
    ruleset: &RuleSet,
    max_rounds: Option<usize>,
) -> Result<KnowledgeGraph, GroundingError> {
    Grounder::new(kg).forward_chain(ruleset, max_rounds)
}
