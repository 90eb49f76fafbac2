//! Concept/question/pair dataset: loading, validation, statistics and
//! demonstration pools.
//!
//! The on-disk format is UTF-8 JSON lines. Every line is one record carrying
//! a `kind` discriminator:
//!
//! ```text
//! {"kind":"concept","id":"c01","name":"Reciprocal","definition":"...","boundary":"..."}
//! {"kind":"question","id":"q0001","text":"Write the reciprocal of 3/7: ____"}
//! {"kind":"pair","concept_id":"c01","question_id":"q0001","label":1,"explanation":"..."}
//! ```
//!
//! Records are written section by section (concepts, questions, pairs) but
//! read in any order; references are resolved once the whole file is read.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::select::{DemonstrationPool, PoolEntry};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading corpus: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("pair ({concept_id}, {question_id}) references unknown {what} `{id}`")]
    DanglingReference { what: &'static str, id: String, concept_id: String, question_id: String },
    #[error("duplicate {what} id `{id}`")]
    DuplicateId { what: &'static str, id: String },
    #[error("duplicate pair ({concept_id}, {question_id})")]
    DuplicatePair { concept_id: String, question_id: String },
    #[error("invalid {what} `{id}`: {message}")]
    Invalid { what: &'static str, id: String, message: String },
}

/// Binary gold judgment for a (concept, question) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Mismatch,
    Match,
}

impl Label {
    pub fn is_match(self) -> bool {
        self == Label::Match
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Mismatch => 0,
            Label::Match => 1,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Label::Mismatch),
            1 => Ok(Label::Match),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeConcept {
    pub id: String,
    /// Original concept term.
    pub name: String,
    /// Expert-written definition.
    #[serde(default)]
    pub definition: String,
    /// Coverage / exclusion text. Rendered after the definition.
    #[serde(default)]
    pub boundary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    /// Question stem, verbatim apart from outer whitespace.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledPair {
    pub concept_id: String,
    pub question_id: String,
    pub label: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explanation: Option<String>,
}

impl LabeledPair {
    pub fn id(&self) -> PairId {
        PairId::new(&self.concept_id, &self.question_id)
    }
}

/// Identity of a labeled pair: (concept id, question id).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PairId {
    pub concept_id: String,
    pub question_id: String,
}

impl PairId {
    pub fn new(concept_id: impl Into<String>, question_id: impl Into<String>) -> Self {
        Self { concept_id: concept_id.into(), question_id: question_id.into() }
    }
}

impl fmt::Display for PairId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.concept_id, self.question_id)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Record {
    Concept(KnowledgeConcept),
    Question(Question),
    Pair(LabeledPair),
}

/// A validated dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    concepts: Vec<KnowledgeConcept>,
    questions: Vec<Question>,
    pairs: Vec<LabeledPair>,
    concept_index: HashMap<String, usize>,
    question_index: HashMap<String, usize>,
    pair_index: HashMap<PairId, usize>,
}

impl Corpus {
    /// Validates and indexes the given records. Question text is trimmed.
    pub fn new(
        concepts: Vec<KnowledgeConcept>,
        mut questions: Vec<Question>,
        pairs: Vec<LabeledPair>,
    ) -> Result<Self, CorpusError> {
        let mut concept_index = HashMap::with_capacity(concepts.len());
        for (i, c) in concepts.iter().enumerate() {
            if c.id.is_empty() {
                return Err(CorpusError::Invalid {
                    what: "concept",
                    id: c.id.clone(),
                    message: "empty id".into(),
                });
            }
            if c.name.trim().is_empty() {
                return Err(CorpusError::Invalid {
                    what: "concept",
                    id: c.id.clone(),
                    message: "empty name".into(),
                });
            }
            if concept_index.insert(c.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { what: "concept", id: c.id.clone() });
            }
        }

        let mut question_index = HashMap::with_capacity(questions.len());
        for (i, q) in questions.iter_mut().enumerate() {
            let trimmed = q.text.trim();
            if trimmed.is_empty() {
                return Err(CorpusError::Invalid {
                    what: "question",
                    id: q.id.clone(),
                    message: "empty text".into(),
                });
            }
            if trimmed.len() != q.text.len() {
                q.text = trimmed.to_string();
            }
            if q.id.is_empty() {
                return Err(CorpusError::Invalid {
                    what: "question",
                    id: q.id.clone(),
                    message: "empty id".into(),
                });
            }
            if question_index.insert(q.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { what: "question", id: q.id.clone() });
            }
        }

        let mut pair_index = HashMap::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            if !concept_index.contains_key(&p.concept_id) {
                return Err(CorpusError::DanglingReference {
                    what: "concept",
                    id: p.concept_id.clone(),
                    concept_id: p.concept_id.clone(),
                    question_id: p.question_id.clone(),
                });
            }
            if !question_index.contains_key(&p.question_id) {
                return Err(CorpusError::DanglingReference {
                    what: "question",
                    id: p.question_id.clone(),
                    concept_id: p.concept_id.clone(),
                    question_id: p.question_id.clone(),
                });
            }
            if pair_index.insert(p.id(), i).is_some() {
                return Err(CorpusError::DuplicatePair {
                    concept_id: p.concept_id.clone(),
                    question_id: p.question_id.clone(),
                });
            }
        }

        Ok(Self { concepts, questions, pairs, concept_index, question_index, pair_index })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let file = File::open(path)?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self, CorpusError> {
        let mut concepts = Vec::new();
        let mut questions = Vec::new();
        let mut pairs = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&line)
                .map_err(|e| CorpusError::Malformed { line: n + 1, message: e.to_string() })?;
            match record {
                Record::Concept(c) => concepts.push(c),
                Record::Question(q) => questions.push(q),
                Record::Pair(p) => pairs.push(p),
            }
        }
        Self::new(concepts, questions, pairs)
    }

    pub fn write(&self, mut w: impl Write) -> io::Result<()> {
        // Records are cloned into the tagged enum so the field layout stays in one place.
        for c in &self.concepts {
            serde_json::to_writer(&mut w, &Record::Concept(c.clone()))?;
            w.write_all(b"\n")?;
        }
        for q in &self.questions {
            serde_json::to_writer(&mut w, &Record::Question(q.clone()))?;
            w.write_all(b"\n")?;
        }
        for p in &self.pairs {
            serde_json::to_writer(&mut w, &Record::Pair(p.clone()))?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> io::Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn concepts(&self) -> &[KnowledgeConcept] {
        &self.concepts
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn pairs(&self) -> &[LabeledPair] {
        &self.pairs
    }

    pub fn concept(&self, id: &str) -> Option<&KnowledgeConcept> {
        self.concept_index.get(id).map(|&i| &self.concepts[i])
    }

    pub fn question(&self, id: &str) -> Option<&Question> {
        self.question_index.get(id).map(|&i| &self.questions[i])
    }

    pub fn pair_index(&self, id: &PairId) -> Option<usize> {
        self.pair_index.get(id).copied()
    }

    /// Pool entry for the pair at `index`, with concept and question resolved.
    pub fn entry(&self, index: usize) -> PoolEntry<'_> {
        let pair = &self.pairs[index];
        PoolEntry {
            index,
            pair,
            concept: &self.concepts[self.concept_index[&pair.concept_id]],
            question: &self.questions[self.question_index[&pair.question_id]],
        }
    }

    pub fn stats(&self) -> CorpusStats {
        corpus_stats(self)
    }

    /// All pairs eligible as demonstrations for `exclude`: everything except
    /// the excluded pair itself and any pair whose question text is
    /// byte-identical to the excluded question's.
    pub fn pool_for(&self, exclude: Option<&PairId>) -> DemonstrationPool<'_> {
        let excluded = exclude.and_then(|id| self.pair_index(id));
        let excluded_text = excluded.map(|i| self.entry(i).question.text.as_str());
        let entries = (0..self.pairs.len())
            .filter(|&i| Some(i) != excluded)
            .map(|i| self.entry(i))
            .filter(|e| Some(e.question.text.as_str()) != excluded_text)
            .collect();
        DemonstrationPool::new(entries)
    }
}

/// Tallies for one concept (or the overall row).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub questions: usize,
    pub matches: usize,
    pub mismatches: usize,
}

impl std::ops::AddAssign for LabelCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.questions += rhs.questions;
        self.matches += rhs.matches;
        self.mismatches += rhs.mismatches;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptStatsRow {
    pub concept_id: String,
    pub name: String,
    pub counts: LabelCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    /// One row per concept, in corpus order.
    pub rows: Vec<ConceptStatsRow>,
    pub overall: LabelCounts,
}

impl CorpusStats {
    pub fn row(&self, concept_id: &str) -> Option<&LabelCounts> {
        self.rows.iter().find(|r| r.concept_id == concept_id).map(|r| &r.counts)
    }

    /// Mismatch-per-match ratio; `None` without matches.
    pub fn mismatch_ratio(&self) -> Option<f64> {
        (self.overall.matches > 0).then(|| self.overall.mismatches as f64 / self.overall.matches as f64)
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut rows: Vec<ConceptStatsRow> = corpus
        .concepts
        .iter()
        .map(|c| ConceptStatsRow {
            concept_id: c.id.clone(),
            name: c.name.clone(),
            counts: LabelCounts::default(),
        })
        .collect();
    for p in &corpus.pairs {
        let counts = &mut rows[corpus.concept_index[&p.concept_id]].counts;
        counts.questions += 1;
        match p.label {
            Label::Match => counts.matches += 1,
            Label::Mismatch => counts.mismatches += 1,
        }
    }
    let mut overall = LabelCounts::default();
    for r in &rows {
        overall += r.counts;
    }
    CorpusStats { rows, overall }
}
