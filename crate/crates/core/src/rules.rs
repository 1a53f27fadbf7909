//! Rules, rule-file dialects and the head-relation index.
//!
//! Three line formats are understood:
//!
//! * canonical: `conf<TAB>correct<TAB>predicted<TAB>head <= body1, body2, ...`
//! * AnyBURL:   `predicted<TAB>correct<TAB>conf<TAB>head <= body1, body2, ...`
//! * AMIE:      tab-separated columns; the rule column reads
//!   `?a <r1> ?b  ?b <r2> ?c  => ?a <r> ?c` and the statistic columns are
//!   configured through [`AmieColumns`].
//!
//! In the `<=` dialects a bare term is a variable iff it is one ASCII
//! uppercase letter optionally followed by digits (`X`, `A`, `B2`). Any other
//! bare term is an entity label; labels that would be ambiguous are written in
//! double quotes with `\"` and `\\` escapes.
//!
//! Parsed rules are normalized: the head reads `r(X,Y)` (a constant keeps its
//! place), and the remaining body variables are renamed `A`, `B`, ... in order
//! of first occurrence, skipping `X` and `Y`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use thiserror::Error;

use crate::kg::{EntityId, RelationId, Symbols};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("{}parse error at byte {position}: {reason}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        position: usize,
        reason: String,
    },
    #[error("unknown rule dialect `{0}` (expected canonical, anyburl or amie)")]
    UnknownDialect(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl RuleError {
    fn at(position: usize, reason: impl Into<String>) -> Self {
        RuleError::Parse {
            line: None,
            position,
            reason: reason.into(),
        }
    }

    fn with_line(self, line_no: usize) -> Self {
        match self {
            RuleError::Parse { position, reason, .. } => RuleError::Parse {
                line: Some(line_no),
                position,
                reason,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(EntityId),
}

impl Term {
    pub fn var(name: &str) -> Self {
        Term::Var(name.to_owned())
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Term::Var(v) => Some(v),
            Term::Const(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub relation: RelationId,
    pub first: Term,
    pub second: Term,
}

impl Atom {
    pub fn new(relation: RelationId, first: Term, second: Term) -> Self {
        Self {
            relation,
            first,
            second,
        }
    }

    fn terms(&self) -> [&Term; 2] {
        [&self.first, &self.second]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub head: Atom,
    pub body: Vec<Atom>,
    pub predicted: u64,
    pub correct: u64,
    pub confidence: f64,
}

impl Rule {
    /// Builds and normalizes a rule from explicit statistics. The confidence is
    /// `correct / predicted` when `predicted > 0`, otherwise `confidence`.
    pub fn new(head: Atom, body: Vec<Atom>, predicted: u64, correct: u64, confidence: f64) -> Result<Self, RuleError> {
        let (head, body) = normalize(head, body, None)?;
        let (predicted, correct, confidence) = settle_stats(predicted, correct, confidence, false)?;
        Ok(Rule {
            head,
            body,
            predicted,
            correct,
            confidence,
        })
    }

    /// Same rule with recomputed statistics.
    pub fn with_stats(&self, predicted: u64, correct: u64) -> Rule {
        assert!(correct <= predicted && predicted > 0);
        Rule {
            predicted,
            correct,
            confidence: correct as f64 / predicted as f64,
            ..self.clone()
        }
    }

    pub fn head_relation(&self) -> RelationId {
        self.head.relation
    }

    /// Distinct variables, head variables first, then body order.
    pub fn variables(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for t in self
            .head
            .terms()
            .into_iter()
            .chain(self.body.iter().flat_map(|a| a.terms()))
        {
            if let Term::Var(v) = t {
                if !seen.contains(&v.as_str()) {
                    seen.push(v.as_str());
                }
            }
        }
        seen
    }

    /// Identity used for deduplication: head and body, ignoring statistics.
    pub fn shape(&self) -> (&Atom, &[Atom]) {
        (&self.head, &self.body)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    Canonical,
    AnyBurl,
    Amie,
}

impl FromStr for Dialect {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "canonical" => Ok(Dialect::Canonical),
            "anyburl" => Ok(Dialect::AnyBurl),
            "amie" | "amie3" => Ok(Dialect::Amie),
            _ => Err(RuleError::UnknownDialect(s.to_owned())),
        }
    }
}

impl fmt::Display for Dialect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dialect::Canonical => "canonical",
            Dialect::AnyBurl => "anyburl",
            Dialect::Amie => "amie",
        })
    }
}

/// Zero-based column positions of an AMIE output line. Miner versions differ,
/// so these are configuration rather than constants. The defaults match
/// AMIE 3: `Rule, Head Coverage, Std Confidence, PCA Confidence, Positive
/// Examples, Body size, PCA Body size, Functional variable`, reading the PCA
/// confidence without counts.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct AmieColumns {
    pub rule: usize,
    pub confidence: usize,
    pub correct: Option<usize>,
    pub predicted: Option<usize>,
}

impl Default for AmieColumns {
    fn default() -> Self {
        Self {
            rule: 0,
            confidence: 3,
            correct: None,
            predicted: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ParseConfig {
    /// Rules with longer bodies are rejected. `None` disables the cap.
    pub max_body_len: Option<usize>,
    pub amie: AmieColumns,
}

impl Default for ParseConfig {
    fn default() -> Self {
        Self {
            max_body_len: Some(10),
            amie: AmieColumns::default(),
        }
    }
}

pub fn parse_rule(line: &str, dialect: Dialect, symbols: &mut Symbols) -> Result<Rule, RuleError> {
    parse_rule_with(line, dialect, symbols, &ParseConfig::default())
}

pub fn parse_rule_with(
    line: &str,
    dialect: Dialect,
    symbols: &mut Symbols,
    config: &ParseConfig,
) -> Result<Rule, RuleError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let (raw, head, body) = match dialect {
        Dialect::Canonical | Dialect::AnyBurl => {
            let fields = split_columns(line, 4)?;
            let (conf, correct, predicted) = if dialect == Dialect::Canonical {
                (fields[0], fields[1], fields[2])
            } else {
                (fields[2], fields[1], fields[0])
            };
            let stats = RawStats {
                confidence: parse_real(conf.1, conf.0)?,
                correct: Some(parse_count(correct.1, correct.0)?),
                predicted: Some(parse_count(predicted.1, predicted.0)?),
            };
            let (head, body) = parse_arrow_rule(fields[3].1, fields[3].0, symbols)?;
            (stats, head, body)
        }
        Dialect::Amie => {
            let cols: Vec<(usize, &str)> = column_offsets(line);
            let get = |i: usize| {
                cols.get(i)
                    .copied()
                    .ok_or_else(|| RuleError::at(line.len(), format!("missing column {i}")))
            };
            let c = &config.amie;
            let (off, text) = get(c.confidence)?;
            let confidence = parse_real(text, off)?;
            let correct = c
                .correct
                .map(|i| get(i).and_then(|(o, t)| parse_count(t, o)))
                .transpose()?;
            let predicted = c
                .predicted
                .map(|i| get(i).and_then(|(o, t)| parse_count(t, o)))
                .transpose()?;
            let (off, text) = get(c.rule)?;
            let (head, body) = parse_amie_rule(text, off, symbols)?;
            (
                RawStats {
                    confidence,
                    correct,
                    predicted,
                },
                head,
                body,
            )
        }
    };
    if body.is_empty() {
        return Err(RuleError::at(line.len(), "empty rule body"));
    }
    if let Some(cap) = config.max_body_len {
        if body.len() > cap {
            return Err(RuleError::at(
                0,
                format!("body has {} atoms, limit is {cap}", body.len()),
            ));
        }
    }
    let (head, body) = normalize(head, body, Some(line.len()))?;
    let strict = dialect == Dialect::Canonical;
    let (predicted, correct, confidence) = match (raw.predicted, raw.correct) {
        (Some(p), Some(c)) => settle_stats(p, c, raw.confidence, strict)?,
        _ => settle_stats(0, 0, raw.confidence, strict)?,
    };
    Ok(Rule {
        head,
        body,
        predicted,
        correct,
        confidence,
    })
}

struct RawStats {
    confidence: f64,
    correct: Option<u64>,
    predicted: Option<u64>,
}

const CONF_TOLERANCE: f64 = 1e-6;

/// Reconciles counts with a supplied confidence. With `predicted > 0` the
/// confidence becomes `correct / predicted`. A supplied confidence that
/// disagrees with its counts is an error in the canonical dialect; elsewhere
/// the counts are dropped and the supplied value is kept.
fn settle_stats(predicted: u64, correct: u64, confidence: f64, strict: bool) -> Result<(u64, u64, f64), RuleError> {
    if !(0.0..=1.0).contains(&confidence) {
        return Err(RuleError::at(0, format!("confidence {confidence} outside [0,1]")));
    }
    if predicted == 0 {
        if correct != 0 && strict {
            return Err(RuleError::at(0, "correct > predicted"));
        }
        return Ok((0, 0, confidence));
    }
    if correct > predicted {
        if strict {
            return Err(RuleError::at(0, "correct > predicted"));
        }
        return Ok((0, 0, confidence));
    }
    let ratio = correct as f64 / predicted as f64;
    if (ratio - confidence).abs() > CONF_TOLERANCE {
        if strict {
            return Err(RuleError::at(
                0,
                format!("confidence {confidence} does not match {correct}/{predicted}"),
            ));
        }
        return Ok((0, 0, confidence));
    }
    Ok((predicted, correct, ratio))
}

/// Splits off the first `n - 1` tab-separated columns; the last keeps any
/// remaining tabs. Returns `(byte offset, text)` pairs.
fn split_columns(line: &str, n: usize) -> Result<Vec<(usize, &str)>, RuleError> {
    let mut out = Vec::with_capacity(n);
    let mut offset = 0;
    let mut rest = line;
    for _ in 0..n - 1 {
        match rest.find('\t') {
            Some(i) => {
                out.push((offset, &rest[..i]));
                offset += i + 1;
                rest = &rest[i + 1..];
            }
            None => return Err(RuleError::at(line.len(), format!("expected {n} tab-separated columns"))),
        }
    }
    out.push((offset, rest));
    Ok(out)
}

fn column_offsets(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut offset = 0;
    for col in line.split('\t') {
        out.push((offset, col));
        offset += col.len() + 1;
    }
    out
}

fn parse_real(text: &str, offset: usize) -> Result<f64, RuleError> {
    let v: f64 = text
        .trim()
        .parse()
        .map_err(|_| RuleError::at(offset, format!("invalid number `{text}`")))?;
    if !v.is_finite() {
        return Err(RuleError::at(offset, format!("invalid number `{text}`")));
    }
    Ok(v)
}

fn parse_count(text: &str, offset: usize) -> Result<u64, RuleError> {
    let t = text.trim();
    if let Ok(v) = t.parse::<u64>() {
        return Ok(v);
    }
    // Some miners print counts as reals (`64.0`).
    match t.parse::<f64>() {
        Ok(v) if v >= 0.0 && v.fract() == 0.0 && v < 1e18 => Ok(v as u64),
        _ => Err(RuleError::at(offset, format!("invalid count `{text}`"))),
    }
}

fn is_variable_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase()) && chars.all(|c| c.is_ascii_digit())
}

/// Raw term as written in the input; variable names not yet normalized.
#[derive(Debug, Clone)]
enum RawTerm {
    Var(String),
    Const(String),
}

#[derive(Debug, Clone)]
struct RawAtom {
    relation: String,
    first: RawTerm,
    second: RawTerm,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
    base: usize,
}

impl<'a> Cursor<'a> {
    fn new(text: &'a str, base: usize) -> Self {
        Self { text, pos: 0, base }
    }

    fn err(&self, reason: impl Into<String>) -> RuleError {
        RuleError::at(self.base + self.pos, reason)
    }

    fn rest(&self) -> &'a str {
        &self.text[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.text.len() - trimmed.len();
    }

    fn at_end(&mut self) -> bool {
        self.skip_ws();
        self.pos == self.text.len()
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.rest().starts_with(c) {
            self.pos += c.len_utf8();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<(), RuleError> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(self.err(format!("expected `{c}`")))
        }
    }

    fn relation(&mut self) -> Result<String, RuleError> {
        self.skip_ws();
        let rest = self.rest();
        let end = rest.find(['(', ',', ')', '"']).unwrap_or(rest.len());
        let name = rest[..end].trim_end();
        if name.is_empty() {
            return Err(self.err("expected relation name"));
        }
        self.pos += end;
        Ok(name.to_owned())
    }

    fn term(&mut self) -> Result<RawTerm, RuleError> {
        self.skip_ws();
        if self.rest().starts_with('"') {
            self.pos += 1;
            let mut label = String::new();
            let mut chars = self.rest().char_indices();
            loop {
                match chars.next() {
                    Some((i, '"')) => {
                        self.pos += i + 1;
                        return Ok(RawTerm::Const(label));
                    }
                    Some((_, '\\')) => match chars.next() {
                        Some((_, c @ ('"' | '\\'))) => label.push(c),
                        _ => return Err(self.err("invalid escape in quoted constant")),
                    },
                    Some((_, c)) => label.push(c),
                    None => return Err(self.err("unterminated quoted constant")),
                }
            }
        }
        let rest = self.rest();
        let end = rest.find([',', ')']).unwrap_or(rest.len());
        let raw = rest[..end].trim();
        if raw.is_empty() {
            return Err(self.err("expected term"));
        }
        self.pos += end;
        Ok(if is_variable_name(raw) {
            RawTerm::Var(raw.to_owned())
        } else {
            RawTerm::Const(raw.to_owned())
        })
    }

    fn atom(&mut self) -> Result<RawAtom, RuleError> {
        let relation = self.relation()?;
        self.expect('(')?;
        let first = self.term()?;
        self.expect(',')?;
        let second = self.term()?;
        self.expect(')')?;
        Ok(RawAtom {
            relation,
            first,
            second,
        })
    }
}

/// Finds `<=` outside double quotes.
fn find_arrow(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let mut in_quotes = false;
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'\\' if in_quotes => i += 1,
            b'"' => in_quotes = !in_quotes,
            b'<' if !in_quotes && bytes.get(i + 1) == Some(&b'=') => return Some(i),
            _ => {}
        }
        i += 1;
    }
    None
}

fn parse_arrow_rule(text: &str, base: usize, symbols: &mut Symbols) -> Result<(Atom, Vec<Atom>), RuleError> {
    let arrow = find_arrow(text).ok_or_else(|| RuleError::at(base, "missing `<=`"))?;
    let mut head_cur = Cursor::new(&text[..arrow], base);
    let head = head_cur.atom()?;
    if !head_cur.at_end() {
        return Err(head_cur.err("unexpected text after head atom"));
    }
    let mut cur = Cursor::new(&text[arrow + 2..], base + arrow + 2);
    let mut body = Vec::new();
    if !cur.at_end() {
        loop {
            body.push(cur.atom()?);
            if cur.at_end() {
                break;
            }
            cur.expect(',')?;
        }
    }
    Ok((
        intern_atom(head, symbols),
        body.into_iter().map(|a| intern_atom(a, symbols)).collect(),
    ))
}

fn strip_angles(s: &str) -> &str {
    s.strip_prefix('<').and_then(|x| x.strip_suffix('>')).unwrap_or(s)
}

fn parse_amie_rule(text: &str, base: usize, symbols: &mut Symbols) -> Result<(Atom, Vec<Atom>), RuleError> {
    let mut tokens: Vec<(usize, &str)> = Vec::new();
    let mut offset = 0;
    for piece in text.split(char::is_whitespace) {
        if !piece.is_empty() {
            tokens.push((base + offset, piece));
        }
        offset += piece.len() + 1;
    }
    let arrow = tokens
        .iter()
        .position(|(_, t)| *t == "=>")
        .ok_or_else(|| RuleError::at(base, "missing `=>`"))?;
    let to_atoms = |toks: &[(usize, &str)]| -> Result<Vec<RawAtom>, RuleError> {
        if !toks.len().is_multiple_of(3) {
            let pos = toks.last().map(|t| t.0).unwrap_or(base);
            return Err(RuleError::at(pos, "atoms must be `subject relation object` triples"));
        }
        toks.chunks(3)
            .map(|c| {
                let term = |(pos, t): (usize, &str)| -> Result<RawTerm, RuleError> {
                    match t.strip_prefix('?') {
                        Some("") => Err(RuleError::at(pos, "empty variable name")),
                        Some(v) => Ok(RawTerm::Var(v.to_owned())),
                        None => Ok(RawTerm::Const(strip_angles(t).to_owned())),
                    }
                };
                Ok(RawAtom {
                    relation: strip_angles(c[1].1).to_owned(),
                    first: term(c[0])?,
                    second: term(c[2])?,
                })
            })
            .collect()
    };
    let body = to_atoms(&tokens[..arrow])?;
    let mut head = to_atoms(&tokens[arrow + 1..])?;
    if head.len() != 1 {
        return Err(RuleError::at(
            tokens.get(arrow + 1).map(|t| t.0).unwrap_or(base + text.len()),
            "expected exactly one head atom",
        ));
    }
    let head = head.pop().unwrap();
    Ok((
        intern_atom(head, symbols),
        body.into_iter().map(|a| intern_atom(a, symbols)).collect(),
    ))
}

fn intern_atom(raw: RawAtom, symbols: &mut Symbols) -> Atom {
    let mut term = |t: RawTerm| match t {
        RawTerm::Var(v) => Term::Var(v),
        RawTerm::Const(c) => Term::Const(symbols.entity(&c)),
    };
    let first = term(raw.first);
    let second = term(raw.second);
    Atom {
        relation: symbols.relation(&raw.relation),
        first,
        second,
    }
}

/// Name of the `n`-th body-only variable: A..W, Z, then A1, B1, ...
fn body_var_name(n: usize) -> String {
    const LETTERS: &[u8] = b"ABCDEFGHIJKLMNOPQRSTUVWZ";
    let letter = LETTERS[n % LETTERS.len()] as char;
    match n / LETTERS.len() {
        0 => letter.to_string(),
        round => format!("{letter}{round}"),
    }
}

/// Renames variables canonically and checks the body is a connected
/// conjunction reaching every head variable.
fn normalize(head: Atom, body: Vec<Atom>, err_pos: Option<usize>) -> Result<(Atom, Vec<Atom>), RuleError> {
    let pos = err_pos.unwrap_or(0);
    if body.is_empty() {
        return Err(RuleError::at(pos, "empty rule body"));
    }
    let mut names: HashMap<String, String> = HashMap::new();
    let rename_head = |t: Term, canonical: &str, names: &mut HashMap<String, String>| match t {
        Term::Var(v) => {
            let n = names.entry(v).or_insert_with(|| canonical.to_owned());
            Term::Var(n.clone())
        }
        c => c,
    };
    let head = Atom {
        relation: head.relation,
        first: rename_head(head.first, "X", &mut names),
        second: rename_head(head.second, "Y", &mut names),
    };
    let head_vars: HashSet<String> = names.values().cloned().collect();
    let mut next = 0;
    let mut rename = |t: Term, names: &mut HashMap<String, String>| match t {
        Term::Var(v) => {
            let n = names.entry(v).or_insert_with(|| {
                let n = body_var_name(next);
                next += 1;
                n
            });
            Term::Var(n.clone())
        }
        c => c,
    };
    let body: Vec<Atom> = body
        .into_iter()
        .map(|a| {
            let first = rename(a.first, &mut names);
            let second = rename(a.second, &mut names);
            Atom {
                relation: a.relation,
                first,
                second,
            }
        })
        .collect();

    let body_vars: HashSet<&str> = body.iter().flat_map(|a| a.terms()).filter_map(Term::as_var).collect();
    for v in &head_vars {
        if !body_vars.contains(v.as_str()) {
            return Err(RuleError::at(
                pos,
                format!("head variable {v} does not occur in the body"),
            ));
        }
    }
    if !is_connected(&head, &body) {
        return Err(RuleError::at(pos, "rule body is not connected"));
    }
    Ok((head, body))
}

/// Union-find over body atoms; atoms sharing a variable are joined. With head
/// variables, every atom must reach one of them; without, the body must form
/// one component.
fn is_connected(head: &Atom, body: &[Atom]) -> bool {
    let n = body.len();
    // Node n stands for the head.
    let mut parent: Vec<usize> = (0..=n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut owner: HashMap<&str, usize> = HashMap::new();
    let head_has_vars = head.terms().iter().any(|t| t.as_var().is_some());
    for t in head.terms() {
        if let Some(v) = t.as_var() {
            owner.insert(v, n);
        }
    }
    for (i, atom) in body.iter().enumerate() {
        for t in atom.terms() {
            if let Some(v) = t.as_var() {
                match owner.get(v) {
                    Some(&j) => {
                        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                        parent[a] = b;
                    }
                    None => {
                        owner.insert(v, i);
                    }
                }
            }
        }
    }
    let root = if head_has_vars {
        find(&mut parent, n)
    } else {
        find(&mut parent, 0)
    };
    (0..n).all(|i| find(&mut parent, i) == root)
}

fn needs_quotes(label: &str) -> bool {
    label.is_empty()
        || is_variable_name(label)
        || label.trim() != label
        || label.contains(['(', ')', ',', '"', '\\', '\t', '\n', '\r'])
        || label.contains("<=")
}

fn write_term(out: &mut String, t: &Term, symbols: &Symbols) {
    match t {
        Term::Var(v) => out.push_str(v),
        Term::Const(e) => {
            let label = symbols.entity_label(*e);
            if needs_quotes(label) {
                out.push('"');
                for c in label.chars() {
                    if c == '"' || c == '\\' {
                        out.push('\\');
                    }
                    out.push(c);
                }
                out.push('"');
            } else {
                out.push_str(label);
            }
        }
    }
}

fn write_atom(out: &mut String, a: &Atom, symbols: &Symbols) {
    out.push_str(symbols.relation_label(a.relation));
    out.push('(');
    write_term(out, &a.first, symbols);
    out.push(',');
    write_term(out, &a.second, symbols);
    out.push(')');
}

/// Six decimals when that reproduces the value exactly, otherwise the
/// shortest round-tripping representation.
pub fn format_confidence(c: f64) -> String {
    let fixed = format!("{c:.6}");
    if fixed.parse::<f64>().ok() == Some(c) {
        fixed
    } else {
        format!("{c}")
    }
}

/// `head <= body1, body2` without statistics.
pub fn format_clause(rule: &Rule, symbols: &Symbols) -> String {
    let mut out = String::new();
    write_atom(&mut out, &rule.head, symbols);
    out.push_str(" <= ");
    for (i, a) in rule.body.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_atom(&mut out, a, symbols);
    }
    out
}

/// Canonical-dialect line (no trailing newline).
pub fn serialize_rule(rule: &Rule, symbols: &Symbols) -> String {
    format!(
        "{}\t{}\t{}\t{}",
        format_confidence(rule.confidence),
        rule.correct,
        rule.predicted,
        format_clause(rule, symbols)
    )
}

/// Rules with a head-relation index. Within each bucket rules are ordered by
/// descending confidence, ties by ascending rule index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RuleSet {
    rules: Vec<Rule>,
    by_head: BTreeMap<RelationId, Vec<usize>>,
}

impl RuleSet {
    /// Keeps the first occurrence of every rule shape.
    pub fn new(rules: Vec<Rule>) -> Self {
        let mut seen = HashSet::new();
        let mut kept = Vec::with_capacity(rules.len());
        for r in rules {
            if seen.insert((r.head.clone(), r.body.clone())) {
                kept.push(r);
            }
        }
        let mut by_head: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
        for (i, r) in kept.iter().enumerate() {
            by_head.entry(r.head.relation).or_default().push(i);
        }
        for bucket in by_head.values_mut() {
            bucket.sort_by(|&a, &b| kept[b].confidence.total_cmp(&kept[a].confidence).then(a.cmp(&b)));
        }
        Self { rules: kept, by_head }
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn get(&self, index: usize) -> Option<&Rule> {
        self.rules.get(index)
    }

    /// Rule indices for a head relation, highest confidence first.
    pub fn for_relation(&self, relation: RelationId) -> &[usize] {
        self.by_head.get(&relation).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn head_relations(&self) -> impl Iterator<Item = RelationId> + '_ {
        self.by_head.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Rule> {
        self.rules.iter()
    }

    /// Subset by rule index, preserving the given order.
    pub fn subset(&self, indices: &[usize]) -> RuleSet {
        RuleSet::new(indices.iter().map(|&i| self.rules[i].clone()).collect())
    }
}

impl FromIterator<Rule> for RuleSet {
    fn from_iter<I: IntoIterator<Item = Rule>>(iter: I) -> Self {
        RuleSet::new(iter.into_iter().collect())
    }
}

/// Reads a rule file. Blank lines and `#` comments are skipped; in the AMIE
/// dialect lines without `=>` (banner and header lines) are skipped too.
pub fn load_ruleset<R: BufRead>(
    source: R,
    dialect: Dialect,
    symbols: &mut Symbols,
    config: &ParseConfig,
) -> Result<RuleSet, RuleError> {
    Ok(RuleSet::new(read_rules(source, dialect, symbols, config)?))
}

/// Parsed rules in file order, duplicates included.
pub fn read_rules<R: BufRead>(
    source: R,
    dialect: Dialect,
    symbols: &mut Symbols,
    config: &ParseConfig,
) -> Result<Vec<Rule>, RuleError> {
    let mut rules = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line.map_err(|e| RuleError::Io(e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if dialect == Dialect::Amie && !line.contains("=>") {
            continue;
        }
        rules.push(parse_rule_with(&line, dialect, symbols, config).map_err(|e| e.with_line(i + 1))?);
    }
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE1: &str = "\
0.64\t64\t100\twf(X,Y) <= internAt(X,Y)
0.44\t44\t100\twf(X,Y) <= studentAt(X,A), locIn(A,B), locIn(Y,B)
0.41\t41\t100\twf(X,Y) <= studentAt(X,A), cooperatesWith(A,Y)
";

    fn parse(line: &str, sym: &mut Symbols) -> Result<Rule, RuleError> {
        parse_rule(line, Dialect::Canonical, sym)
    }

    #[test]
    fn parses_example_rules() {
        let mut sym = Symbols::new();
        let c1 = parse("0.64\t64\t100\twf(X,Y) <= internAt(X,Y)", &mut sym).unwrap();
        assert_eq!(c1.confidence, 0.64);
        assert_eq!((c1.correct, c1.predicted), (64, 100));
        assert_eq!(c1.body.len(), 1);
        let c2 = parse(
            "0.44\t44\t100\twf(X,Y) <= studentAt(X,A), locIn(A,B), locIn(Y,B)",
            &mut sym,
        )
        .unwrap();
        assert_eq!(c2.body.len(), 3);
    }

    #[test]
    fn empty_body_is_rejected() {
        let mut sym = Symbols::new();
        let err = parse("0.5\t1\t2\twf(X,Y) <=", &mut sym).unwrap_err();
        assert!(matches!(err, RuleError::Parse { ref reason, .. } if reason.contains("empty")));
    }

    #[test]
    fn grammar_errors() {
        let mut sym = Symbols::new();
        for bad in [
            "0.5\t1\t2\twf(X,Y) internAt(X,Y)",
            "0.5\t1\t2\twf(X,Y <= internAt(X,Y)",
            "0.5\t1\t2\twf(X,Y) <= internAt(X,Y) junk",
            "0.5\t1\twf(X,Y) <= internAt(X,Y)",
            "abc\t1\t2\twf(X,Y) <= internAt(X,Y)",
            "0.5\t1\t2\twf(X,Y) <= internAt(X,\"Y)",
        ] {
            assert!(parse(bad, &mut sym).is_err(), "{bad}");
        }
    }

    #[test]
    fn inconsistent_canonical_stats_rejected() {
        let mut sym = Symbols::new();
        assert!(parse("0.9\t1\t2\tr(X,Y) <= s(X,Y)", &mut sym).is_err());
        assert!(parse("0.5\t3\t2\tr(X,Y) <= s(X,Y)", &mut sym).is_err());
        assert!(parse("1.5\t0\t0\tr(X,Y) <= s(X,Y)", &mut sym).is_err());
    }

    #[test]
    fn unknown_dialect() {
        assert_eq!(
            "prolog".parse::<Dialect>(),
            Err(RuleError::UnknownDialect("prolog".into()))
        );
        assert_eq!("AnyBURL".parse::<Dialect>(), Ok(Dialect::AnyBurl));
    }

    #[test]
    fn disconnected_rules_rejected() {
        let mut sym = Symbols::new();
        // Y never occurs in the body.
        assert!(parse("0.5\t0\t0\tr(X,Y) <= s(X,A)", &mut sym).is_err());
        // second atom is detached from the head variables
        assert!(parse("0.5\t0\t0\tr(X,Y) <= s(X,Y), t(A,B)", &mut sym).is_err());
        assert!(parse("0.5\t0\t0\tr(X,Y) <= s(X,Y), t(c,d)", &mut sym).is_err());
        // dangling variable attached to X is fine
        assert!(parse("0.5\t0\t0\tr(X,c) <= s(X,A)", &mut sym).is_ok());
    }

    #[test]
    fn variables_are_normalized() {
        let mut sym = Symbols::new();
        let a = parse("0.5\t0\t0\tr(X,Y) <= s(X,A), t(A,Y)", &mut sym).unwrap();
        let b = parse("0.5\t0\t0\tr(P,Q) <= s(P,Z), t(Z,Q)", &mut sym).unwrap();
        assert_eq!(a, b);
        let c = parse("0.5\t0\t0\tr(c,V) <= s(V,B)", &mut sym).unwrap();
        assert_eq!(c.head.second, Term::var("Y"));
        assert_eq!(c.body[0].second, Term::var("A"));
    }

    #[test]
    fn constant_head_round_trips() {
        let mut sym = Symbols::new();
        let r = parse("0.25\t1\t4\tspeaks(X,English) <= livesIn(X,London)", &mut sym).unwrap();
        assert!(matches!(r.head.second, Term::Const(_)));
        let line = serialize_rule(&r, &sym);
        assert_eq!(line, "0.250000\t1\t4\tspeaks(X,English) <= livesIn(X,London)");
        assert_eq!(parse(&line, &mut sym).unwrap(), r);
    }

    #[test]
    fn serializes_c1() {
        let mut sym = Symbols::new();
        let c1 = parse("0.64\t64\t100\twf(X,Y) <= internAt(X,Y)", &mut sym).unwrap();
        assert_eq!(serialize_rule(&c1, &sym), "0.640000\t64\t100\twf(X,Y) <= internAt(X,Y)");
    }

    #[test]
    fn awkward_labels_are_quoted() {
        let mut sym = Symbols::new();
        let odd = sym.entity("Washington,_D.C. (city)");
        let var_like = sym.entity("A");
        let r = Rule::new(
            Atom::new(sym.relation("r"), Term::var("X"), Term::Const(odd)),
            vec![Atom::new(sym.relation("s"), Term::var("X"), Term::Const(var_like))],
            0,
            0,
            0.3,
        )
        .unwrap();
        let line = serialize_rule(&r, &sym);
        assert!(line.contains("\"Washington,_D.C. (city)\""));
        assert!(line.contains("\"A\""));
        assert_eq!(parse(&line, &mut sym).unwrap(), r);
    }

    #[test]
    fn anyburl_line() {
        let mut sym = Symbols::new();
        let r = parse_rule("100\t64\t0.64\twf(X,Y) <= internAt(X,Y)", Dialect::AnyBurl, &mut sym).unwrap();
        assert_eq!((r.predicted, r.correct, r.confidence), (100, 64, 0.64));
        // smoothed confidence that disagrees with the counts stays authoritative
        let r = parse_rule("100\t64\t0.6\twf(X,Y) <= internAt(X,Y)", Dialect::AnyBurl, &mut sym).unwrap();
        assert_eq!((r.predicted, r.correct, r.confidence), (0, 0, 0.6));
    }

    #[test]
    fn amie_line() {
        let mut sym = Symbols::new();
        let line = "?a  <studentAt>  ?b  ?b  <cooperatesWith>  ?c   => ?a  <wf>  ?c\t0.1\t0.3\t0.41\t41\t137\t100\t?a";
        let r = parse_rule(line, Dialect::Amie, &mut sym).unwrap();
        let c3 = parse("0.41\t0\t0\twf(X,Y) <= studentAt(X,A), cooperatesWith(A,Y)", &mut sym).unwrap();
        assert_eq!(r, c3);

        let cfg = ParseConfig {
            amie: AmieColumns {
                rule: 0,
                confidence: 2,
                correct: Some(4),
                predicted: Some(5),
            },
            ..ParseConfig::default()
        };
        let line = "?a  <internAt>  ?b   => ?a  <wf>  ?b\t0.1\t0.64\t0.7\t64\t100\t80\t?a";
        let r = parse_rule_with(line, Dialect::Amie, &mut sym, &cfg).unwrap();
        assert_eq!((r.predicted, r.correct, r.confidence), (100, 64, 0.64));
    }

    #[test]
    fn amie_file_skips_header() {
        let mut sym = Symbols::new();
        let text = "Using HeadCoverage as pruning metric\nRule\tHead Coverage\tStd Confidence\tPCA Confidence\n?a  <p>  ?b   => ?a  <q>  ?b\t0.5\t0.5\t0.6\t1\t2\t2\t?a\n";
        let rs = load_ruleset(text.as_bytes(), Dialect::Amie, &mut sym, &ParseConfig::default()).unwrap();
        assert_eq!(rs.len(), 1);
        assert_eq!(rs.rules()[0].confidence, 0.6);
    }

    #[test]
    fn body_cap() {
        let mut sym = Symbols::new();
        let cfg = ParseConfig {
            max_body_len: Some(2),
            ..ParseConfig::default()
        };
        let line = "0.44\t0\t0\twf(X,Y) <= studentAt(X,A), locIn(A,B), locIn(Y,B)";
        assert!(parse_rule_with(line, Dialect::Canonical, &mut sym, &cfg).is_err());
        let cfg = ParseConfig {
            max_body_len: None,
            ..cfg
        };
        assert!(parse_rule_with(line, Dialect::Canonical, &mut sym, &cfg).is_ok());
    }

    #[test]
    fn ruleset_index_order() {
        let mut sym = Symbols::new();
        let rs = load_ruleset(
            EXAMPLE1.as_bytes(),
            Dialect::Canonical,
            &mut sym,
            &ParseConfig::default(),
        )
        .unwrap();
        let wf = sym.find_relation("wf").unwrap();
        assert_eq!(rs.for_relation(wf), &[0, 1, 2]);

        // reversed file order, same bucket order by confidence
        let reversed: String = EXAMPLE1.lines().rev().map(|l| format!("{l}\n")).collect();
        let rs = load_ruleset(
            reversed.as_bytes(),
            Dialect::Canonical,
            &mut sym,
            &ParseConfig::default(),
        )
        .unwrap();
        let confs: Vec<f64> = rs.for_relation(wf).iter().map(|&i| rs.rules()[i].confidence).collect();
        assert_eq!(confs, [0.64, 0.44, 0.41]);
    }

    #[test]
    fn ruleset_ties_by_index_and_dedup() {
        let mut sym = Symbols::new();
        let text =
            "# comment\n\n0.5\t0\t0\tr(X,Y) <= s(X,Y)\n0.5\t0\t0\tr(X,Y) <= t(X,Y)\n0.9\t0\t0\tr(P,Q) <= s(P,Q)\n";
        let rs = load_ruleset(text.as_bytes(), Dialect::Canonical, &mut sym, &ParseConfig::default()).unwrap();
        assert_eq!(rs.len(), 2);
        assert_eq!(rs.rules()[0].confidence, 0.5);
        let r = sym.find_relation("r").unwrap();
        assert_eq!(rs.for_relation(r), &[0, 1]);
    }

    #[test]
    fn empty_file() {
        let mut sym = Symbols::new();
        let rs = load_ruleset("".as_bytes(), Dialect::Canonical, &mut sym, &ParseConfig::default()).unwrap();
        assert!(rs.is_empty());
    }

    #[test]
    fn load_error_carries_line_number() {
        let mut sym = Symbols::new();
        let text = "0.5\t0\t0\tr(X,Y) <= s(X,Y)\n0.5\t0\t0\tr(X,Y) <=\n";
        let err = load_ruleset(text.as_bytes(), Dialect::Canonical, &mut sym, &ParseConfig::default()).unwrap_err();
        assert!(matches!(err, RuleError::Parse { line: Some(2), .. }));
    }

    #[test]
    fn many_body_variables_get_distinct_names() {
        let names: HashSet<String> = (0..80).map(body_var_name).collect();
        assert_eq!(names.len(), 80);
        assert!(names.iter().all(|n| is_variable_name(n) && n != "X" && n != "Y"));
    }
}
