//! Seeded k-means and silhouette-based choice of k.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Cluster, ConsolidationConfig, ConsolidationError};
use crate::model::MemoryFragment;
use crate::vector::{Embedding, VectorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            restarts: 8,
            seed: 0x5EED,
        }
    }
}

/// A k-means solution: a label per point in `0..k`, all labels used.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.iter().enumerate() {
        let d = squared_distance(point, center);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding. `None` when fewer than `k` distinct points exist.
fn seed_centers(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Vec<f64>>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].to_vec()];
    while centers.len() < k {
        let weights: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut target = rng.random::<f64>() * total;
        let mut chosen = weights.iter().rposition(|w| *w > 0.0)?;
        for (i, w) in weights.iter().enumerate() {
            if *w > 0.0 && target < *w {
                chosen = i;
                break;
            }
            target -= w;
        }
        centers.push(points[chosen].to_vec());
    }
    Some(centers)
}

fn lloyd(points: &[&[f64]], mut centers: Vec<Vec<f64>>, max_iterations: usize) -> Option<KMeansFit> {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..max_iterations {
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if labels[i] != c {
                labels[i] = c;
                changed = true;
            }
        }
        repair_empty(points, &centers, &mut labels, k)?;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&labels) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p.iter()).for_each(|(s, x)| *s += x);
        }
        for (center, (sum, count)) in centers.iter_mut().zip(sums.into_iter().zip(counts)) {
            *center = sum.into_iter().map(|s| s / count as f64).collect();
        }
        if !changed {
            break;
        }
    }
    let inertia = points
        .iter()
        .zip(&labels)
        .map(|(p, &c)| squared_distance(p, &centers[c]))
        .sum();
    Some(KMeansFit { labels, inertia })
}

/// Moves the farthest point of a multi-member cluster into each empty
/// cluster. Fails when no point lies at positive distance from its center.
fn repair_empty(points: &[&[f64]], centers: &[Vec<f64>], labels: &mut [usize], k: usize) -> Option<()> {
    loop {
        let mut counts = vec![0usize; k];
        labels.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return Some(());
        };
        let donor = (0..points.len())
            .filter(|&i| counts[labels[i]] > 1)
            .map(|i| (i, squared_distance(points[i], &centers[labels[i]])))
            .filter(|(_, d)| *d > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))?;
        labels[donor.0] = empty;
    }
}

/// Best of `restarts` seeded k-means++ runs by within-cluster sum of
/// squares. `None` when no run produced `k` non-empty clusters.
pub fn kmeans(points: &[&[f64]], k: usize, config: &KMeansConfig, stream: u64) -> Option<KMeansFit> {
    assert!(k >= 1 && k <= points.len(), "k must lie in 1..=n");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(stream);
    let mut best: Option<KMeansFit> = None;
    for _ in 0..config.restarts.max(1) {
        let Some(centers) = seed_centers(points, k, &mut rng) else {
            continue;
        };
        if let Some(fit) = lloyd(points, centers, config.max_iterations.max(1)) {
            if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
                best = Some(fit);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SilhouetteError {
    #[error("silhouette needs at least two clusters")]
    SingleCluster,
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("{labels} labels for {points} points")]
    LengthMismatch { labels: usize, points: usize },
}

/// Mean silhouette with Euclidean distance. Members of singleton clusters
/// score 0, as does any point whose `a` and `b` are both zero.
pub fn mean_silhouette(labels: &[usize], points: &[&[f64]]) -> Result<f64, SilhouetteError> {
    if labels.len() != points.len() {
        return Err(SilhouetteError::LengthMismatch {
            labels: labels.len(),
            points: points.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    if k < 2 {
        return Err(SilhouetteError::SingleCluster);
    }
    let mut sizes = vec![0usize; k];
    labels.iter().for_each(|&c| sizes[c] += 1);
    if let Some(empty) = sizes.iter().position(|&n| n == 0) {
        return Err(SilhouetteError::EmptyCluster(empty));
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let mut sums = vec![0.0; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sums[labels[j]] += euclidean(p, q);
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let scale = a.max(b);
        if scale > 0.0 {
            total += (b - a) / scale;
        }
    }
    Ok(total / points.len() as f64)
}

/// One evaluated k.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KCandidate {
    pub k: usize,
    /// Empty when k-means found no valid k-partition.
    pub labels: Vec<usize>,
    pub inertia: Option<f64>,
    pub silhouette: Option<f64>,
}

/// How a session's clusters were chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusteringReport {
    pub n: usize,
    pub candidates: Vec<KCandidate>,
    /// Number of clusters produced (n for the singleton fallback).
    pub chosen_k: usize,
    pub mean_silhouette: Option<f64>,
    pub singleton_fallback: bool,
}

/// Selects the silhouette-maximizing candidate, smallest k on ties.
pub fn select_k(candidates: &[KCandidate]) -> Option<&KCandidate> {
    let mut best: Option<&KCandidate> = None;
    for candidate in candidates {
        let Some(s) = candidate.silhouette else {
            continue;
        };
        if best.is_none_or(|b| s > b.silhouette.expect("scored")) {
            best = Some(candidate);
        }
    }
    best
}

/// Partitions one session's fragments.
///
/// n ≤ 2 yields singletons. Otherwise every k in `[k_min, min(k_max, n−1)]`
/// is fitted and the best mean silhouette wins; a negative best, or no
/// scorable k at all, falls back to singletons. Cluster ordinals follow each
/// cluster's smallest member id.
pub fn cluster_session(
    session_index: u32,
    fragments: &[MemoryFragment],
    vectors: &[Embedding],
    config: &ConsolidationConfig,
) -> Result<(Vec<Cluster>, ClusteringReport), ConsolidationError> {
    if fragments.len() != vectors.len() {
        return Err(ConsolidationError::LengthMismatch {
            fragments: fragments.len(),
            vectors: vectors.len(),
        });
    }
    let n = fragments.len();
    if n == 0 {
        return Ok((
            Vec::new(),
            ClusteringReport {
                n,
                candidates: Vec::new(),
                chosen_k: 0,
                mean_silhouette: None,
                singleton_fallback: false,
            },
        ));
    }
    let dim = vectors[0].dimension();
    if let Some(bad) = vectors.iter().find(|v| v.dimension() != dim) {
        return Err(VectorError::DimensionMismatch {
            left: dim,
            right: bad.dimension(),
        }
        .into());
    }
    let points: Vec<&[f64]> = vectors.iter().map(Embedding::values).collect();

    let k_max = config.k_max.min(n.saturating_sub(1));
    let mut candidates = Vec::new();
    if n >= 3 {
        for k in config.k_min.max(2)..=k_max {
            let stream = (u64::from(session_index) << 16) | k as u64;
            let candidate = match kmeans(&points, k, &config.kmeans, stream) {
                Some(fit) => KCandidate {
                    k,
                    silhouette: mean_silhouette(&fit.labels, &points).ok(),
                    inertia: Some(fit.inertia),
                    labels: fit.labels,
                },
                None => KCandidate {
                    k,
                    labels: Vec::new(),
                    inertia: None,
                    silhouette: None,
                },
            };
            candidates.push(candidate);
        }
    }

    let chosen = select_k(&candidates).filter(|c| c.silhouette.expect("scored") >= 0.0);
    let (labels, chosen_k, mean_silhouette, singleton_fallback) = match chosen {
        Some(c) => (c.labels.clone(), c.k, c.silhouette, false),
        None => ((0..n).collect(), n, None, n >= 3),
    };

    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); chosen_k];
    labels.iter().enumerate().for_each(|(i, &c)| groups[c].push(i));
    let mut members: Vec<Vec<&MemoryFragment>> = groups
        .into_iter()
        .map(|g| {
            let mut m: Vec<&MemoryFragment> = g.into_iter().map(|i| &fragments[i]).collect();
            m.sort_by(|a, b| a.fragment_id.cmp(&b.fragment_id));
            m
        })
        .collect();
    members.sort_by(|a, b| a[0].fragment_id.cmp(&b[0].fragment_id));

    let index_of = |id: &str| fragments.iter().position(|f| f.fragment_id == id).expect("member");
    let clusters = members
        .into_iter()
        .enumerate()
        .map(|(ordinal, group)| {
            let centroid = Embedding::mean(group.iter().map(|f| &vectors[index_of(&f.fragment_id)]))?;
            Ok(Cluster {
                cluster_id: format!("s{session_index}-c{}", ordinal + 1),
                session_index,
                member_fragment_ids: group.iter().map(|f| f.fragment_id.clone()).collect(),
                centroid,
            })
        })
        .collect::<Result<Vec<_>, VectorError>>()?;

    Ok((
        clusters,
        ClusteringReport {
            n,
            candidates,
            chosen_k,
            mean_silhouette,
            singleton_fallback,
        },
    ))
}
