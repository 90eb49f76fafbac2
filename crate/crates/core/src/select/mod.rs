//! Few-shot demonstration selection.
//!
//! Five strategies are supported: uniform random, same concept, match-only,
//! mismatch-only, and diverse questions (one representative per k-means
//! cluster of the question embeddings). The label and concept filters fall
//! back to random top-up when a filtered subfamily is too small; the
//! returned [`Selection`] carries a warning whenever that happens.

mod kmeans;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use kmeans::{kmeans, kmeans_with, nearest_to_centroid, objective, Clustering, KMeansConfig};

use crate::corpus::{Corpus, KnowledgeConcept, Label, LabeledPair, PairId, Question};
use crate::num::{squared_distance, Scalar};
use crate::prompt::{Demonstration, KnowledgeRendering, PromptError};
use crate::rng::{rng_from_seed, sample_indices};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("cluster count {k} out of range for {points} vectors")]
    ClusterCount { k: usize, points: usize },
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("no embedding for question `{0}`")]
    MissingQuestionEmbedding(String),
    #[error("diverse selection needs embeddings attached to the pool")]
    MissingEmbeddings,
    #[error("embedding table covers {table} pairs but the corpus has {corpus}")]
    TableSize { table: usize, corpus: usize },
    #[error("need {needed} demonstrations but only {available} candidates remain")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// How to choose demonstrations; `n` is the demonstration count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SelectionStrategy {
    Random(usize),
    SameKnowledge(usize),
    MatchOnly(usize),
    MismatchOnly(usize),
    Diverse(usize),
}

impl SelectionStrategy {
    pub fn count(self) -> usize {
        match self {
            SelectionStrategy::Random(n)
            | SelectionStrategy::SameKnowledge(n)
            | SelectionStrategy::MatchOnly(n)
            | SelectionStrategy::MismatchOnly(n)
            | SelectionStrategy::Diverse(n) => n,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::Random(_) => "random",
            SelectionStrategy::SameKnowledge(_) => "same",
            SelectionStrategy::MatchOnly(_) => "match",
            SelectionStrategy::MismatchOnly(_) => "mismatch",
            SelectionStrategy::Diverse(_) => "diverse",
        }
    }

    pub fn needs_embeddings(self) -> bool {
        matches!(self, SelectionStrategy::Diverse(_))
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.name(), self.count())
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    /// `name:count`, e.g. `random:4`, `match:2`, `diverse:2`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, count) =
            s.split_once(':').ok_or_else(|| format!("strategy `{s}` is not of the form name:count"))?;
        let n: usize = count
            .trim()
            .parse()
            .map_err(|_| format!("strategy count `{count}` is not a positive integer"))?;
        if n == 0 {
            return Err("strategy count must be at least 1".into());
        }
        match name.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(SelectionStrategy::Random(n)),
            "same" | "same-knowledge" | "knowledge" => Ok(SelectionStrategy::SameKnowledge(n)),
            "match" => Ok(SelectionStrategy::MatchOnly(n)),
            "mismatch" => Ok(SelectionStrategy::MismatchOnly(n)),
            "diverse" => Ok(SelectionStrategy::Diverse(n)),
            other => {
                Err(format!("unknown strategy `{other}` (expected random, same, match, mismatch or diverse)"))
            }
        }
    }
}

impl TryFrom<String> for SelectionStrategy {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SelectionStrategy> for String {
    fn from(s: SelectionStrategy) -> String {
        s.to_string()
    }
}

/// Finite, non-empty vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector<T>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(components: Vec<T>) -> Result<Self, SelectError> {
        if components.is_empty() {
            return Err(SelectError::InvalidEmbedding("zero-dimensional vector".into()));
        }
        if components.iter().any(|c| !c.is_finite_value()) {
            return Err(SelectError::InvalidEmbedding("non-finite component".into()));
        }
        Ok(Self(components))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }
}

impl<T: Float + Scalar> EmbeddingVector<T> {
    /// Scaled to unit length; the zero vector is returned unchanged.
    pub fn normalized(&self) -> Self {
        let norm = self.0.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
        if norm > T::zero() {
            Self(self.0.iter().map(|&x| x / norm).collect())
        } else {
            self.clone()
        }
    }
}

impl<T> AsRef<[T]> for EmbeddingVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.0
    }
}

/// Embeddings for every pair of a corpus, indexed by pair position.
///
/// Clusterings are computed on demand once per cluster count over the whole
/// table, so every target of a run draws from the same partition.
#[derive(Debug)]
pub struct EmbeddingTable<T> {
    vectors: Vec<EmbeddingVector<T>>,
    cluster_seed: u64,
    clusterings: Mutex<HashMap<usize, Arc<Clustering<T>>>>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(vectors: Vec<EmbeddingVector<T>>, cluster_seed: u64) -> Result<Self, SelectError> {
        if let Some(first) = vectors.first() {
            let dim = first.dim();
            if let Some(bad) = vectors.iter().find(|v| v.dim() != dim) {
                return Err(SelectError::DimensionMismatch { expected: dim, found: bad.dim() });
            }
        }
        Ok(Self { vectors, cluster_seed, clusterings: Mutex::new(HashMap::new()) })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vector(&self, pair_index: usize) -> &EmbeddingVector<T> {
        &self.vectors[pair_index]
    }

    pub fn clustering(&self, k: usize) -> Result<Arc<Clustering<T>>, SelectError> {
        let mut cache = self.clusterings.lock().expect("clustering cache poisoned");
        if let Some(c) = cache.get(&k) {
            return Ok(Arc::clone(c));
        }
        let c = Arc::new(kmeans(&self.vectors, k, self.cluster_seed)?);
        cache.insert(k, Arc::clone(&c));
        Ok(c)
    }
}

impl<T: Float + Scalar> EmbeddingTable<T> {
    /// One L2-normalized vector per corpus pair, looked up by question id.
    pub fn for_corpus(
        corpus: &Corpus,
        by_question: &HashMap<String, EmbeddingVector<T>>,
        cluster_seed: u64,
    ) -> Result<Self, SelectError> {
        let vectors = corpus
            .pairs()
            .iter()
            .map(|p| {
                by_question
                    .get(&p.question_id)
                    .map(EmbeddingVector::normalized)
                    .ok_or_else(|| SelectError::MissingQuestionEmbedding(p.question_id.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(vectors, cluster_seed)
    }
}

/// A labeled pair with its concept and question resolved.
#[derive(Debug, Clone, Copy)]
pub struct PoolEntry<'a> {
    /// Position of the pair in the corpus.
    pub index: usize,
    pub pair: &'a LabeledPair,
    pub concept: &'a KnowledgeConcept,
    pub question: &'a Question,
}

/// Candidate demonstrations for one target.
#[derive(Debug, Clone)]
pub struct DemonstrationPool<'a, T = f64> {
    entries: Vec<PoolEntry<'a>>,
    embeddings: Option<&'a EmbeddingTable<T>>,
}

impl<'a> DemonstrationPool<'a, f64> {
    pub fn new(entries: Vec<PoolEntry<'a>>) -> Self {
        Self { entries, embeddings: None }
    }
}

impl<'a, T> DemonstrationPool<'a, T> {
    pub fn with_embeddings<U>(self, table: &'a EmbeddingTable<U>) -> DemonstrationPool<'a, U> {
        DemonstrationPool { entries: self.entries, embeddings: Some(table) }
    }

    pub fn entries(&self) -> &[PoolEntry<'a>] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Why a demonstration was picked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "origin", rename_all = "snake_case")]
pub enum PickOrigin {
    /// Uniform draw from the whole pool.
    Sampled,
    /// Uniform draw from the strategy's filtered subfamily.
    Filtered,
    /// Random top-up after the filtered subfamily ran out.
    Fallback,
    /// Nearest eligible member to a cluster centroid.
    Cluster { cluster: usize, distance: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pick {
    pub index: usize,
    pub pair: PairId,
    pub label: Label,
    #[serde(flatten)]
    pub origin: PickOrigin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub demonstrations: Vec<Demonstration>,
    pub picks: Vec<Pick>,
    pub warnings: Vec<String>,
}

/// Chooses demonstrations for `target` from `pool`.
///
/// Entries sharing the target's identity or question text are never chosen,
/// even if the pool still contains them.
pub fn select_demonstrations<T: Scalar>(
    strategy: SelectionStrategy,
    pool: &DemonstrationPool<'_, T>,
    target: &PoolEntry<'_>,
    seed: u64,
    rendering: KnowledgeRendering,
) -> Result<Selection, SelectError> {
    let n = strategy.count();
    let target_id = target.pair.id();
    let eligible: Vec<&PoolEntry<'_>> = pool
        .entries
        .iter()
        .filter(|e| e.pair.id() != target_id && e.question.text != target.question.text)
        .collect();
    if eligible.len() < n {
        return Err(SelectError::InsufficientCandidates { needed: n, available: eligible.len() });
    }

    let mut warnings = Vec::new();
    let picks: Vec<(usize, PickOrigin)> = match strategy {
        SelectionStrategy::Random(_) => {
            let mut rng = rng_from_seed(seed);
            sample_indices(&mut rng, eligible.len(), n)
                .into_iter()
                .map(|i| (i, PickOrigin::Sampled))
                .collect()
        }
        SelectionStrategy::SameKnowledge(_)
        | SelectionStrategy::MatchOnly(_)
        | SelectionStrategy::MismatchOnly(_) => {
            let keep = |e: &PoolEntry<'_>| match strategy {
                SelectionStrategy::SameKnowledge(_) => e.pair.concept_id == target.pair.concept_id,
                SelectionStrategy::MatchOnly(_) => e.pair.label == Label::Match,
                _ => e.pair.label == Label::Mismatch,
            };
            let (filtered, rest): (Vec<usize>, Vec<usize>) =
                (0..eligible.len()).partition(|&i| keep(eligible[i]));
            let mut rng = rng_from_seed(seed);
            let take = n.min(filtered.len());
            let mut out: Vec<(usize, PickOrigin)> = sample_indices(&mut rng, filtered.len(), take)
                .into_iter()
                .map(|i| (filtered[i], PickOrigin::Filtered))
                .collect();
            if take < n {
                let missing = n - take;
                warnings.push(format!(
                    "{strategy} for {target_id}: only {take} filtered candidates, topped up {missing} at random"
                ));
                out.extend(
                    sample_indices(&mut rng, rest.len(), missing)
                        .into_iter()
                        .map(|i| (rest[i], PickOrigin::Fallback)),
                );
            }
            out
        }
        SelectionStrategy::Diverse(_) => {
            let table = pool.embeddings.ok_or(SelectError::MissingEmbeddings)?;
            diverse_picks(table, &eligible, n, &mut warnings, &target_id)?
        }
    };

    let mut demonstrations = Vec::with_capacity(picks.len());
    let mut out_picks = Vec::with_capacity(picks.len());
    for (i, origin) in picks {
        let e = eligible[i];
        demonstrations.push(Demonstration::from_pair(e.concept, &e.question.text, e.pair, rendering)?);
        out_picks.push(Pick { index: e.index, pair: e.pair.id(), label: e.pair.label, origin });
    }
    Ok(Selection { demonstrations, picks: out_picks, warnings })
}

/// For each cluster in ascending order, the eligible member nearest its
/// centroid. A cluster left without eligible members contributes the
/// nearest eligible entry from anywhere in the pool instead.
fn diverse_picks<T: Scalar>(
    table: &EmbeddingTable<T>,
    eligible: &[&PoolEntry<'_>],
    n: usize,
    warnings: &mut Vec<String>,
    target_id: &PairId,
) -> Result<Vec<(usize, PickOrigin)>, SelectError> {
    if let Some(bad) = eligible.iter().find(|e| e.index >= table.len()) {
        return Err(SelectError::TableSize { table: table.len(), corpus: bad.index + 1 });
    }
    let clustering = table.clustering(n)?;
    let by_pair: HashMap<usize, usize> = eligible.iter().enumerate().map(|(i, e)| (e.index, i)).collect();
    let mut taken: HashSet<usize> = HashSet::new();
    let mut out = Vec::with_capacity(n);

    for (c, centroid) in clustering.centroids.iter().enumerate() {
        let members: Vec<(usize, &[T])> = clustering
            .members(c)
            .into_iter()
            .filter(|pi| by_pair.get(pi).is_some_and(|e| !taken.contains(e)))
            .map(|pi| (pi, table.vector(pi).as_ref()))
            .collect();
        let chosen = match nearest_to_centroid(&members, centroid) {
            Some(pi) => pi,
            None => {
                warnings.push(format!(
                    "diverse:{n} for {target_id}: cluster {c} has no eligible member, using nearest pool entry"
                ));
                let rest: Vec<(usize, &[T])> = eligible
                    .iter()
                    .filter(|e| !taken.contains(&by_pair[&e.index]))
                    .map(|e| (e.index, table.vector(e.index).as_ref()))
                    .collect();
                nearest_to_centroid(&rest, centroid)
                    .ok_or(SelectError::InsufficientCandidates { needed: n, available: eligible.len() })?
            }
        };
        let distance =
            squared_distance(table.vector(chosen).as_ref(), centroid).to_f64().unwrap_or(f64::NAN).sqrt();
        let local = by_pair[&chosen];
        taken.insert(local);
        out.push((local, PickOrigin::Cluster { cluster: c, distance }));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Corpus, KnowledgeConcept, LabeledPair, Question};

    fn corpus(labels: &[(usize, Label)]) -> Corpus {
        let concepts = (0..3)
            .map(|i| KnowledgeConcept {
                id: format!("c{i}"),
                name: format!("concept {i}"),
                definition: format!("definition {i}"),
                boundary: String::new(),
            })
            .collect();
        let questions = (0..labels.len())
            .map(|i| Question { id: format!("q{i}"), text: format!("question text {i}") })
            .collect();
        let pairs = labels
            .iter()
            .enumerate()
            .map(|(i, &(c, label))| LabeledPair {
                concept_id: format!("c{c}"),
                question_id: format!("q{i}"),
                label,
                explanation: None,
            })
            .collect();
        Corpus::new(concepts, questions, pairs).unwrap()
    }

    use Label::{Match as M, Mismatch as X};

    #[test]
    fn strategy_grammar() {
        assert_eq!("match:2".parse(), Ok(SelectionStrategy::MatchOnly(2)));
        assert_eq!("Diverse:4".parse(), Ok(SelectionStrategy::Diverse(4)));
        assert_eq!("same:2".parse(), Ok(SelectionStrategy::SameKnowledge(2)));
        assert!("random:0".parse::<SelectionStrategy>().is_err());
        assert!("random".parse::<SelectionStrategy>().is_err());
        assert!("best:2".parse::<SelectionStrategy>().is_err());
        assert_eq!(SelectionStrategy::MismatchOnly(4).to_string(), "mismatch:4");
    }

    #[test]
    fn match_only_is_label_pure() {
        // target + 3 match + 5 mismatch
        let c = corpus(&[(0, X), (0, M), (1, X), (1, M), (2, X), (2, X), (0, M), (1, X), (2, X)]);
        let target = c.entry(0);
        let pool = c.pool_for(Some(&target.pair.id()));
        for seed in 0..25 {
            let s = select_demonstrations(
                SelectionStrategy::MatchOnly(2),
                &pool,
                &target,
                seed,
                KnowledgeRendering::NameOnly,
            )
            .unwrap();
            assert_eq!(s.picks.len(), 2);
            assert!(s.picks.iter().all(|p| p.label == M && p.origin == PickOrigin::Filtered));
            assert!(s.warnings.is_empty());
            assert!(s.demonstrations.iter().all(|d| d.judgment_text.starts_with("Yes")));
        }
    }

    #[test]
    fn same_knowledge_filters_on_concept() {
        let c = corpus(&[(1, X), (1, M), (1, X), (0, X), (1, X), (2, M), (1, M), (0, M)]);
        let target = c.entry(0);
        let pool = c.pool_for(Some(&target.pair.id()));
        let s = select_demonstrations(
            SelectionStrategy::SameKnowledge(2),
            &pool,
            &target,
            3,
            KnowledgeRendering::Interpreted,
        )
        .unwrap();
        for p in &s.picks {
            assert_eq!(p.pair.concept_id, "c1");
        }
        assert!(s.demonstrations.iter().all(|d| d.knowledge_text == "definition 1"));
    }

    #[test]
    fn short_filter_tops_up_with_warning() {
        let c = corpus(&[(0, X), (0, M), (1, X), (1, X), (2, X)]);
        let target = c.entry(0);
        let pool = c.pool_for(Some(&target.pair.id()));
        let s = select_demonstrations(
            SelectionStrategy::MatchOnly(2),
            &pool,
            &target,
            1,
            KnowledgeRendering::NameOnly,
        )
        .unwrap();
        assert_eq!(s.picks[0].origin, PickOrigin::Filtered);
        assert_eq!(s.picks[0].label, M);
        assert_eq!(s.picks[1].origin, PickOrigin::Fallback);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn pool_too_small_is_an_error() {
        let c = corpus(&[(0, X), (0, M)]);
        let target = c.entry(0);
        let pool = c.pool_for(Some(&target.pair.id()));
        assert!(matches!(
            select_demonstrations(
                SelectionStrategy::Random(2),
                &pool,
                &target,
                0,
                KnowledgeRendering::NameOnly
            ),
            Err(SelectError::InsufficientCandidates { needed: 2, available: 1 })
        ));
    }

    #[test]
    fn target_is_never_selected_even_from_unfiltered_pool() {
        let c = corpus(&[(0, X), (0, M), (1, X)]);
        let target = c.entry(1);
        let pool = c.pool_for(None);
        for seed in 0..20 {
            let s = select_demonstrations(
                SelectionStrategy::Random(2),
                &pool,
                &target,
                seed,
                KnowledgeRendering::NameOnly,
            )
            .unwrap();
            assert!(s.picks.iter().all(|p| p.index != 1));
        }
    }

    #[test]
    fn diverse_requires_embeddings() {
        let c = corpus(&[(0, X), (0, M), (1, X)]);
        let target = c.entry(0);
        let pool = c.pool_for(Some(&target.pair.id()));
        assert!(matches!(
            select_demonstrations(
                SelectionStrategy::Diverse(2),
                &pool,
                &target,
                0,
                KnowledgeRendering::NameOnly
            ),
            Err(SelectError::MissingEmbeddings)
        ));
    }

    #[test]
    fn diverse_replaces_target_with_next_nearest() {
        // Target sits at the centre of the left blob and is clustered with it.
        let c = corpus(&[(0, X), (0, M), (0, X), (1, X), (1, M)]);
        let raw = [[0.0, 0.0], [-1.0, 0.0], [1.0, 0.1], [10.0, 0.0], [10.0, 1.0]];
        let vectors = raw.iter().map(|p| EmbeddingVector::new(p.to_vec()).unwrap()).collect();
        let table = EmbeddingTable::new(vectors, 9).unwrap();
        let target = c.entry(0);
        let pool = c.pool_for(Some(&target.pair.id())).with_embeddings(&table);
        let s = select_demonstrations(
            SelectionStrategy::Diverse(2),
            &pool,
            &target,
            0,
            KnowledgeRendering::NameOnly,
        )
        .unwrap();
        let mut idx: Vec<usize> = s.picks.iter().map(|p| p.index).collect();
        idx.sort();
        // Left centroid (0, 1/30): point 1 is nearer than point 2. Right: 3 and 4 tie, lower index wins.
        assert_eq!(idx, vec![1, 3]);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn normalization() {
        let v = EmbeddingVector::new(vec![3.0f64, 4.0]).unwrap().normalized();
        assert_eq!(v.as_ref(), &[0.6, 0.8]);
        let z = EmbeddingVector::new(vec![0.0f64, 0.0]).unwrap().normalized();
        assert_eq!(z.as_ref(), &[0.0, 0.0]);
        assert!(EmbeddingVector::new(vec![f64::NAN]).is_err());
        assert!(EmbeddingVector::<f64>::new(vec![]).is_err());
    }
}
