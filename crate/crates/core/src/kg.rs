//! Interned triple store.
//!
//! Entities and relations are interned into dense `u32` ids. The graph keeps
//! two adjacency indices, `(relation, subject) -> objects` and
//! `(relation, object) -> subjects`, each sorted ascending by id, plus a hashed
//! existence set. The graph is built once and then only read.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijection between labels and dense ids, in order of first appearance.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SymbolTable {
    labels: Vec<String>,
    ids: HashMap<String, u32>,
}

impl SymbolTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.ids.get(label) {
            return id;
        }
        let id = u32::try_from(self.labels.len()).expect("symbol table exceeds u32 ids");
        self.labels.push(label.to_owned());
        self.ids.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.ids.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

/// Entity and relation symbol tables shared by graphs, rules and queries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Symbols {
    pub entities: SymbolTable,
    pub relations: SymbolTable,
}

impl Symbols {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entity(&mut self, label: &str) -> EntityId {
        EntityId(self.entities.intern(label))
    }

    pub fn relation(&mut self, label: &str) -> RelationId {
        RelationId(self.relations.intern(label))
    }

    pub fn find_entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn find_relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    /// Panics on ids not issued by this table.
    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0).expect("entity id not interned")
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0).expect("relation id not interned")
    }

    pub fn triple(&mut self, subject: &str, relation: &str, object: &str) -> Triple {
        Triple {
            relation: self.relation(relation),
            subject: self.entity(subject),
            object: self.entity(object),
        }
    }

    pub fn display_triple(&self, t: &Triple) -> String {
        format!(
            "{}({},{})",
            self.relation_label(t.relation),
            self.entity_label(t.subject),
            self.entity_label(t.object)
        )
    }
}

/// `relation(subject, object)`. Ordered by relation, then subject, then object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triple {
    pub relation: RelationId,
    pub subject: EntityId,
    pub object: EntityId,
}

impl Triple {
    pub fn new(relation: RelationId, subject: EntityId, object: EntityId) -> Self {
        Self {
            relation,
            subject,
            object,
        }
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}(e{},e{})", self.relation.0, self.subject.0, self.object.0)
    }
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeGraph {
    existence: HashSet<Triple>,
    by_rel_subject: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    by_rel_object: HashMap<(RelationId, EntityId), Vec<EntityId>>,
    by_relation: HashMap<RelationId, Vec<(EntityId, EntityId)>>,
}

impl PartialEq for KnowledgeGraph {
    fn eq(&self, other: &Self) -> bool {
        self.existence == other.existence
    }
}

impl Eq for KnowledgeGraph {}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples<I: IntoIterator<Item = Triple>>(triples: I) -> Self {
        let mut unique: Vec<Triple> = triples.into_iter().collect();
        unique.sort_unstable();
        unique.dedup();
        let mut kg = Self::new();
        kg.existence.reserve(unique.len());
        // Sorted input keeps every index list sorted by construction.
        for t in &unique {
            kg.existence.insert(*t);
            kg.by_rel_subject
                .entry((t.relation, t.subject))
                .or_default()
                .push(t.object);
            kg.by_rel_object
                .entry((t.relation, t.object))
                .or_default()
                .push(t.subject);
            kg.by_relation
                .entry(t.relation)
                .or_default()
                .push((t.subject, t.object));
        }
        for subjects in kg.by_rel_object.values_mut() {
            subjects.sort_unstable();
        }
        kg
    }

    /// Returns `false` if the triple was already present.
    pub fn insert(&mut self, t: Triple) -> bool {
        if !self.existence.insert(t) {
            return false;
        }
        insert_sorted(
            self.by_rel_subject.entry((t.relation, t.subject)).or_default(),
            t.object,
        );
        insert_sorted(self.by_rel_object.entry((t.relation, t.object)).or_default(), t.subject);
        insert_sorted(self.by_relation.entry(t.relation).or_default(), (t.subject, t.object));
        true
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.existence.contains(t)
    }

    pub fn objects_of(&self, relation: RelationId, subject: EntityId) -> &[EntityId] {
        self.by_rel_subject
            .get(&(relation, subject))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn subjects_of(&self, relation: RelationId, object: EntityId) -> &[EntityId] {
        self.by_rel_object
            .get(&(relation, object))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// All `(subject, object)` pairs of a relation, sorted.
    pub fn pairs_of(&self, relation: RelationId) -> &[(EntityId, EntityId)] {
        self.by_relation.get(&relation).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.existence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.existence.is_empty()
    }

    /// Unordered iteration over the existence set.
    pub fn iter(&self) -> impl Iterator<Item = &Triple> {
        self.existence.iter()
    }

    pub fn sorted_triples(&self) -> Vec<Triple> {
        let mut v: Vec<Triple> = self.existence.iter().copied().collect();
        v.sort_unstable();
        v
    }

    pub fn relations(&self) -> BTreeSet<RelationId> {
        self.by_relation.keys().copied().collect()
    }
}

impl FromIterator<Triple> for KnowledgeGraph {
    fn from_iter<I: IntoIterator<Item = Triple>>(iter: I) -> Self {
        Self::from_triples(iter)
    }
}

fn insert_sorted<T: Ord>(v: &mut Vec<T>, x: T) {
    if let Err(pos) = v.binary_search(&x) {
        v.insert(pos, x);
    }
}

/// Reads `subject<TAB>relation<TAB>object` lines. Empty lines are skipped and
/// a trailing `\r` is dropped; everything else is part of the label.
pub fn read_triples<R: BufRead>(source: R, symbols: &mut Symbols) -> Result<Vec<Triple>, KgError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(KgError::MalformedLine {
                line: i + 1,
                found: fields.len(),
            });
        }
        out.push(symbols.triple(fields[0], fields[1], fields[2]));
    }
    Ok(out)
}

pub fn load_triples<R: BufRead>(source: R, symbols: &mut Symbols) -> Result<KnowledgeGraph, KgError> {
    Ok(KnowledgeGraph::from_triples(read_triples(source, symbols)?))
}
