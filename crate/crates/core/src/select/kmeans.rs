//! Lloyd's k-means with k-means++ seeding over any [`Scalar`].

use rand::Rng;

use crate::num::{squared_distance, Scalar};
use crate::rng::{derive_seed, rng_from_seed, SampleRng};

use super::SelectError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KMeansConfig {
    /// Lloyd iteration cap per restart.
    pub max_iter: usize,
    /// Independent k-means++ restarts; the lowest final objective wins.
    pub restarts: usize,
    /// When at most this many `k`-subsets of the points exist, each one
    /// seeds a run instead of the random restarts.
    pub exhaustive_seed_limit: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { max_iter: 100, restarts: 8, exhaustive_seed_limit: 64 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<T> {
    /// Cluster index per input vector.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<T>>,
    /// Sum of squared distances to the assigned centroid after each update
    /// step of the winning restart. Never increases.
    pub objective_history: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> Clustering<T> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn objective(&self) -> T {
        *self.objective_history.last().expect("at least one update step")
    }

    /// Member indices of cluster `c`, ascending.
    pub fn members(&self, c: usize) -> Vec<usize> {
        self.assignments.iter().enumerate().filter(|&(_, &a)| a == c).map(|(i, _)| i).collect()
    }
}

/// k-means with the default configuration.
pub fn kmeans<T: Scalar, V: AsRef<[T]>>(
    vectors: &[V],
    k: usize,
    seed: u64,
) -> Result<Clustering<T>, SelectError> {
    kmeans_with(vectors, k, seed, &KMeansConfig::default())
}

pub fn kmeans_with<T: Scalar, V: AsRef<[T]>>(
    vectors: &[V],
    k: usize,
    seed: u64,
    config: &KMeansConfig,
) -> Result<Clustering<T>, SelectError> {
    let points: Vec<&[T]> = vectors.iter().map(AsRef::as_ref).collect();
    if points.is_empty() || k == 0 || k > points.len() {
        return Err(SelectError::ClusterCount { k, points: points.len() });
    }
    let dim = points[0].len();
    if dim == 0 {
        return Err(SelectError::InvalidEmbedding("zero-dimensional vector".into()));
    }
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(SelectError::DimensionMismatch { expected: dim, found: bad.len() });
    }

    let max_iter = config.max_iter.max(1);
    let mut best: Option<Clustering<T>> = None;
    let mut consider = |run: Clustering<T>| {
        if best.as_ref().is_none_or(|b| run.objective() < b.objective()) {
            best = Some(run);
        }
    };
    match seed_subsets(points.len(), k, config.exhaustive_seed_limit) {
        // Few enough candidate seed sets to try them all.
        Some(subsets) => {
            for subset in subsets {
                let seeds = subset.iter().map(|&i| points[i].to_vec()).collect();
                consider(lloyd(&points, k, seeds, max_iter));
            }
        }
        None => {
            for restart in 0..config.restarts.max(1) {
                let mut rng = rng_from_seed(derive_seed(seed, restart as u64));
                let seeds = plus_plus_seeds(&points, k, &mut rng);
                consider(lloyd(&points, k, seeds, max_iter));
            }
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Every `k`-subset of `0..n` in lexicographic order, or `None` when there
/// are more than `limit`.
fn seed_subsets(n: usize, k: usize, limit: usize) -> Option<Vec<Vec<usize>>> {
    let mut count: u128 = 1;
    for i in 0..k {
        count = count * (n - i) as u128 / (i + 1) as u128;
        if count > limit as u128 {
            return None;
        }
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut current: Vec<usize> = (0..k).collect();
    loop {
        out.push(current.clone());
        let Some(i) = (0..k).rev().find(|&i| current[i] < n - k + i) else { break };
        current[i] += 1;
        for j in i + 1..k {
            current[j] = current[j - 1] + 1;
        }
    }
    Some(out)
}

fn plus_plus_seeds<T: Scalar>(points: &[&[T]], k: usize, rng: &mut SampleRng) -> Vec<Vec<T>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> =
        points.iter().map(|p| to_f64(squared_distance(p, points[chosen[0]]))).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut threshold = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &w) in nearest.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(i);
                    if threshold < w {
                        break;
                    }
                    threshold -= w;
                }
            }
            pick.expect("positive total weight")
        } else {
            // Every point coincides with a center already; pick any unused index.
            let unused: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        for (i, p) in points.iter().enumerate() {
            let d = to_f64(squared_distance(p, points[next]));
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    chosen.into_iter().map(|i| points[i].to_vec()).collect()
}

fn to_f64<T: Scalar>(v: T) -> f64 {
    v.to_f64().unwrap_or(f64::INFINITY)
}

fn nearest_centroid<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, squared_distance(p, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(p, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn lloyd<T: Scalar>(points: &[&[T]], k: usize, mut centroids: Vec<Vec<T>>, max_iter: usize) -> Clustering<T> {
    let n = points.len();
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iter {
        let mut changed = false;
        let mut dist = Vec::with_capacity(n);
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest_centroid(p, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dist.push(d);
        }
        if !changed {
            converged = true;
            break;
        }
        iterations += 1;
        repair_empty_clusters(&mut assignments, &mut dist, k);
        centroids = means(points, &assignments, k);
        history.push(objective(points, &assignments, &centroids));
    }
    if hartigan_refine(points, &mut assignments, &mut centroids, max_iter) {
        history.push(objective(points, &assignments, &centroids));
    }
    if history.is_empty() {
        history.push(objective(points, &assignments, &centroids));
    }

    Clustering { assignments, centroids, objective_history: history, iterations, converged }
}

/// Single-point transfers that lower the objective once the centroid shift
/// is accounted for. Lloyd's iteration can stall in partitions that such a
/// move still improves; every partition stable here is also Lloyd-stable.
/// `centroids` must be the member means on entry. Returns whether anything
/// moved.
fn hartigan_refine<T: Scalar>(
    points: &[&[T]],
    assignments: &mut [usize],
    centroids: &mut [Vec<T>],
    max_passes: usize,
) -> bool {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut moved_any = false;
    for _ in 0..max_passes {
        let mut moved = false;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            let na = sizes[a];
            if na < 2 {
                continue;
            }
            let removal = T::from_count(na) / T::from_count(na - 1) * squared_distance(p, &centroids[a]);
            let mut best: Option<(usize, T)> = None;
            for b in (0..k).filter(|&b| b != a) {
                let nb = sizes[b];
                let addition = T::from_count(nb) / T::from_count(nb + 1) * squared_distance(p, &centroids[b]);
                if addition < removal && best.as_ref().is_none_or(|&(_, d)| addition < d) {
                    best = Some((b, addition));
                }
            }
            let Some((b, _)) = best else { continue };
            let nb = sizes[b];
            for (c, &x) in centroids[a].iter_mut().zip(p.iter()) {
                *c = (*c * T::from_count(na) - x) / T::from_count(na - 1);
            }
            for (c, &x) in centroids[b].iter_mut().zip(p.iter()) {
                *c = (*c * T::from_count(nb) + x) / T::from_count(nb + 1);
            }
            sizes[a] -= 1;
            sizes[b] += 1;
            assignments[i] = b;
            moved = true;
        }
        if !moved {
            break;
        }
        moved_any = true;
    }
    if moved_any {
        // Re-derive the means to shed incremental rounding.
        let fresh = means(points, assignments, k);
        centroids.clone_from_slice(&fresh);
    }
    moved_any
}

/// Moves the point farthest from its centroid into each empty cluster,
/// never taking the last member of a cluster.
fn repair_empty_clusters<T: Scalar>(assignments: &mut [usize], dist: &mut [T], k: usize) {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut donor: Option<usize> = None;
        for i in 0..assignments.len() {
            if sizes[assignments[i]] < 2 {
                continue;
            }
            if donor.is_none_or(|d| dist[i] > dist[d]) {
                donor = Some(i);
            }
        }
        let i = donor.expect("k <= n guarantees a cluster with two members");
        sizes[assignments[i]] -= 1;
        assignments[i] = empty;
        sizes[empty] = 1;
        dist[i] = T::zero();
    }
}

fn means<T: Scalar>(points: &[&[T]], assignments: &[usize], k: usize) -> Vec<Vec<T>> {
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, &x) in sums[a].iter_mut().zip(p.iter()) {
            *s = *s + x;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        let c = T::from_count(c);
        for x in s.iter_mut() {
            *x = *x / c;
        }
    }
    sums
}

/// Sum of squared distances from each point to its assigned centroid.
pub fn objective<T: Scalar, V: AsRef<[T]>>(points: &[V], assignments: &[usize], centroids: &[Vec<T>]) -> T {
    points
        .iter()
        .zip(assignments)
        .fold(T::zero(), |acc, (p, &a)| acc + squared_distance(p.as_ref(), &centroids[a]))
}

/// Pool index of the member nearest `centroid`; ties go to the lower index.
/// `None` for an empty member list.
pub fn nearest_to_centroid<T: Scalar, V: AsRef<[T]>>(
    members: &[(usize, V)],
    centroid: &[T],
) -> Option<usize> {
    members
        .iter()
        .map(|(i, v)| (*i, squared_distance(v.as_ref(), centroid)))
        .fold(None, |best: Option<(usize, T)>, (i, d)| match best {
            Some((bi, bd)) if bd < d || (bd == d && bi < i) => Some((bi, bd)),
            _ => Some((i, d)),
        })
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;

    fn pts(raw: &[[f64; 2]]) -> Vec<Vec<f64>> {
        raw.iter().map(|p| p.to_vec()).collect()
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let p = pts(&[[0.0, 0.0], [3.0, 1.0], [7.0, 2.0], [1.0, 9.0]]);
        let c = kmeans(&p, 4, 5).unwrap();
        let mut seen: Vec<usize> = c.assignments.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2, 3]);
        for (i, &a) in c.assignments.iter().enumerate() {
            assert_eq!(c.centroids[a], p[i]);
        }
        assert_eq!(c.objective(), 0.0);
    }

    #[test]
    fn k_one_gives_mean() {
        let p = pts(&[[0.0, 0.0], [2.0, 4.0], [4.0, 2.0]]);
        let c = kmeans(&p, 1, 0).unwrap();
        assert_eq!(c.centroids, vec![vec![2.0, 2.0]]);
        assert!(c.assignments.iter().all(|&a| a == 0));
    }

    #[test]
    fn four_point_split() {
        let p = pts(&[[0.0, 0.0], [0.0, 1.0], [10.0, 0.0], [10.0, 1.0]]);
        for seed in 0..20 {
            let c = kmeans(&p, 2, seed).unwrap();
            assert_eq!(c.assignments[0], c.assignments[1]);
            assert_eq!(c.assignments[2], c.assignments[3]);
            assert_ne!(c.assignments[0], c.assignments[2]);
            assert_eq!(c.centroids[c.assignments[0]], vec![0.0, 0.5]);
            assert_eq!(c.centroids[c.assignments[2]], vec![10.0, 0.5]);
        }
    }

    #[test]
    fn exact_rationals() {
        let r = |a: i64, b: i64| vec![Rational64::from_integer(a), Rational64::from_integer(b)];
        let p = vec![r(0, 0), r(0, 1), r(10, 0), r(10, 1), r(10, 2)];
        let c = kmeans(&p, 2, 3).unwrap();
        // {0,1}: 2 * (1/2)^2 = 1/2; {2,3,4}: 1 + 0 + 1 = 2.
        assert_eq!(c.objective(), Rational64::new(5, 2));
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let p = pts(&[[1.0, 1.0]; 5]);
        let c = kmeans(&p, 3, 11).unwrap();
        for cl in 0..3 {
            assert!(!c.members(cl).is_empty());
        }
    }

    #[test]
    fn repair_moves_farthest_point() {
        let mut assignments = vec![0, 0, 0, 1];
        let mut dist = vec![1.0, 9.0, 4.0, 0.0];
        repair_empty_clusters(&mut assignments, &mut dist, 3);
        assert_eq!(assignments, vec![0, 2, 0, 1]);
    }

    #[test]
    fn errors() {
        let p = pts(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(kmeans(&p, 0, 0), Err(SelectError::ClusterCount { .. })));
        assert!(matches!(kmeans(&p, 3, 0), Err(SelectError::ClusterCount { .. })));
        let ragged = vec![vec![0.0, 0.0], vec![1.0]];
        assert!(matches!(
            kmeans(&ragged, 1, 0),
            Err(SelectError::DimensionMismatch { expected: 2, found: 1 })
        ));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(kmeans(&empty, 1, 0).is_err());
    }

    #[test]
    fn nearest_member() {
        let c = [0.0, 0.0];
        assert_eq!(nearest_to_centroid(&[(4, vec![3.0, 4.0])], &c), Some(4));
        assert_eq!(nearest_to_centroid(&[(1, vec![2.0, 0.0]), (2, vec![0.0, 0.5])], &c), Some(2));
        assert_eq!(nearest_to_centroid(&[(7, vec![1.0, 0.0]), (3, vec![0.0, 1.0])], &c), Some(3));
        let none: [(usize, Vec<f64>); 0] = [];
        assert_eq!(nearest_to_centroid(&none, &c), None);
    }

    #[test]
    fn objective_history_non_increasing() {
        let mut rng = rng_from_seed(4);
        let p: Vec<Vec<f64>> =
            (0..200).map(|_| vec![rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]).collect();
        let c = kmeans_with(&p, 6, 1, &KMeansConfig { max_iter: 100, restarts: 1, exhaustive_seed_limit: 0 })
            .unwrap();
        for w in c.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", c.objective_history);
        }
    }
}
