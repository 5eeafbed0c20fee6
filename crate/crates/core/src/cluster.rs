//! Taxonomy extraction by clustering behavior vectors: k-medoids (PAM swap
//! search), average-linkage agglomerative, and normalized spectral clustering.
//!
//! All methods use unweighted Euclidean distance. Cluster ids are assigned by
//! descending size, ties by the smallest member index.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archive::{Archive, ArchiveEntry};
use crate::error::{Error, Result};
use crate::metrics::{euclidean, Featurizer};
use crate::sim::simulate;

pub const MAX_SWAP_PASSES: usize = 200;
/// Swap search is local; instances with at most this many candidate medoid
/// sets are finished by exhaustive enumeration, which makes them exact.
pub const EXACT_SUBSET_LIMIT: u64 = 5000;
/// Sample size for the median-distance kernel width heuristic.
pub const SIGMA_SUBSAMPLE: usize = 500;
/// Above this many points the spectral embedding uses subspace iteration
/// instead of a full dense eigendecomposition.
pub const DENSE_EIGEN_MAX: usize = 2000;
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Kmedoids,
    Hierarchical,
    Spectral,
}

impl ClusterMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            ClusterMethod::Kmedoids => "kmedoids",
            ClusterMethod::Hierarchical => "hierarchical",
            ClusterMethod::Spectral => "spectral",
        }
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "kmedoids" | "k-medoids" | "k_medoids" => Ok(ClusterMethod::Kmedoids),
            "hierarchical" => Ok(ClusterMethod::Hierarchical),
            "spectral" => Ok(ClusterMethod::Spectral),
            _ => Err(Error::InvalidConfig(format!(
                "unknown cluster method {s:?} (expected kmedoids, hierarchical or spectral)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Linkage {
    #[default]
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    pub method: ClusterMethod,
    pub k: usize,
    pub seed: u64,
    pub linkage: Linkage,
    /// Gaussian kernel width; `None` means the median pairwise distance of a
    /// seeded subsample.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub affinity_sigma: Option<f64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            method: ClusterMethod::Kmedoids,
            k: 20,
            seed: 0,
            linkage: Linkage::Average,
            affinity_sigma: None,
        }
    }
}

impl ClusterConfig {
    pub fn new(method: ClusterMethod, k: usize) -> Self {
        ClusterConfig {
            method,
            k,
            ..Default::default()
        }
    }

    /// Checks the config against a data set of `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidConfig(format!("k must be at least 2, got {}", self.k)));
        }
        if n < self.k {
            return Err(Error::ArchiveTooSmall { size: n, k: self.k });
        }
        if let Some(s) = self.affinity_sigma {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidConfig(format!("affinity_sigma must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// A partition with one representative point per cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct Clustering {
    /// Cluster id of each point.
    pub labels: Vec<usize>,
    pub sizes: Vec<usize>,
    /// Point index representing each cluster.
    pub representatives: Vec<usize>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Relabels an arbitrary partition (labels in `0..k`, all clusters nonempty)
    /// into size order, picking representatives with `pick`.
    fn from_raw(raw: &[usize], k: usize, pick: impl Fn(&[usize]) -> usize) -> Clustering {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (i, &l) in raw.iter().enumerate() {
            members[l].push(i);
        }
        members.retain(|m| !m.is_empty());
        members.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        let mut labels = vec![0; raw.len()];
        for (c, m) in members.iter().enumerate() {
            for &i in m {
                labels[i] = c;
            }
        }
        Clustering {
            labels,
            sizes: members.iter().map(Vec::len).collect(),
            representatives: members.iter().map(|m| pick(m)).collect(),
        }
    }
}

/// Member closest to the cluster's mean vector, ties to the lowest index.
pub fn closest_to_mean(points: &[Vec<f64>], members: &[usize]) -> usize {
    let dim = points[members[0]].len();
    let mut mean = vec![0.0; dim];
    for &i in members {
        for (m, v) in mean.iter_mut().zip(&points[i]) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= members.len() as f64;
    }
    let mut best = members[0];
    let mut best_d = f64::INFINITY;
    for &i in members {
        let d = euclidean(&points[i], &mean);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Fraction of points whose cluster's majority ground-truth label matches their own.
pub fn purity(labels: &[usize], truth: &[usize]) -> f64 {
    assert_eq!(labels.len(), truth.len());
    if labels.is_empty() {
        return 1.0;
    }
    let mut counts: std::collections::BTreeMap<usize, std::collections::BTreeMap<usize, usize>> =
        Default::default();
    for (&l, &t) in labels.iter().zip(truth) {
        *counts.entry(l).or_default().entry(t).or_default() += 1;
    }
    let majority: usize = counts.values().map(|c| c.values().max().copied().unwrap_or(0)).sum();
    majority as f64 / labels.len() as f64
}

fn check_points(points: &[Vec<f64>]) -> Result<usize> {
    let dim = points.first().map(Vec::len).ok_or(Error::EmptyArchive)?;
    for p in points {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: p.len(),
            });
        }
    }
    Ok(dim)
}

// ---------------------------------------------------------------------------
// k-medoids

#[derive(Clone, Debug, PartialEq)]
pub struct KMedoids {
    /// Point indices of the medoids.
    pub medoids: Vec<usize>,
    /// Position in `medoids` of each point's nearest medoid.
    pub assignment: Vec<usize>,
    /// Sum of point-to-nearest-medoid distances.
    pub cost: f64,
    /// Cost after initialization and after every accepted swap.
    pub cost_history: Vec<f64>,
    /// Full swap passes performed.
    pub passes: usize,
}

struct Nearest {
    slot: Vec<usize>,
    first: Vec<f64>,
    second: Vec<f64>,
}

fn nearest_medoids(points: &[Vec<f64>], medoids: &[usize]) -> Nearest {
    let n = points.len();
    let mut out = Nearest {
        slot: vec![0; n],
        first: vec![f64::INFINITY; n],
        second: vec![f64::INFINITY; n],
    };
    for o in 0..n {
        for (s, &m) in medoids.iter().enumerate() {
            let d = euclidean(&points[o], &points[m]);
            if d < out.first[o] {
                out.second[o] = out.first[o];
                out.first[o] = d;
                out.slot[o] = s;
            } else if d < out.second[o] {
                out.second[o] = d;
            }
        }
    }
    out
}

/// Sum of each point's distance to its nearest medoid.
pub fn medoid_cost(points: &[Vec<f64>], medoids: &[usize]) -> f64 {
    let nearest: Vec<f64> = points
        .iter()
        .map(|p| {
            medoids
                .iter()
                .map(|&m| euclidean(p, &points[m]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    total_cost(&nearest)
}

/// Sums distances in ascending order, so medoid sets that induce the same
/// multiset of distances (e.g. either end of a two-point cluster) cost exactly
/// the same regardless of point order.
fn total_cost(distances: &[f64]) -> f64 {
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    d.iter().sum()
}

/// k-means++ style seeding: first medoid uniform, the rest drawn with
/// probability proportional to squared distance from the chosen set.
fn seed_medoids(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    let mut medoids = vec![first];
    chosen[first] = true;
    let mut d2: Vec<f64> = points.iter().map(|p| euclidean(p, &points[first]).powi(2)).collect();
    while medoids.len() < k {
        let total: f64 = (0..n).filter(|&i| !chosen[i]).map(|i| d2[i]).sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = None;
            for i in (0..n).filter(|&i| !chosen[i]) {
                if d2[i] > 0.0 {
                    pick = Some(i);
                    r -= d2[i];
                    if r < 0.0 {
                        break;
                    }
                }
            }
            pick.expect("positive total weight")
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.gen_range(0..free.len())]
        };
        chosen[pick] = true;
        medoids.push(pick);
        for i in 0..n {
            d2[i] = d2[i].min(euclidean(&points[i], &points[pick]).powi(2));
        }
    }
    medoids
}

fn subset_count(n: usize, k: usize) -> u64 {
    let mut c: u64 = 1;
    for i in 0..k as u64 {
        c = c.saturating_mul(n as u64 - i) / (i + 1);
    }
    c
}

/// Cheapest k-subset of points as medoids; the first one found on ties.
fn exhaustive_medoids(points: &[Vec<f64>], k: usize) -> Option<(Vec<usize>, f64)> {
    let n = points.len();
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let c = medoid_cost(points, &idx);
        if best.as_ref().map_or(true, |(_, b)| c < *b) {
            best = Some((idx.clone(), c));
        }
        // next combination in lexicographic order
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return best;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// PAM-style k-medoids with eager swaps. Each pass tries every non-medoid as a
/// replacement for its best medoid slot and accepts the swap when it lowers the
/// total cost; stops after a pass without swaps or [`MAX_SWAP_PASSES`] passes. Small
/// instances are then checked against every medoid set (see [`EXACT_SUBSET_LIMIT`]).
pub fn k_medoids(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMedoids> {
    check_points(points)?;
    let n = points.len();
    if k < 2 {
        return Err(Error::InvalidConfig(format!("k must be at least 2, got {k}")));
    }
    if n < k {
        return Err(Error::ArchiveTooSmall { size: n, k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut medoids = seed_medoids(points, k, &mut rng);
    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }
    let mut near = nearest_medoids(points, &medoids);
    let mut cost = total_cost(&near.first);
    let mut history = vec![cost];

    // Cost increase from deleting each medoid slot, holding the others.
    let removal_loss = |near: &Nearest| {
        let mut loss = vec![0.0; k];
        for o in 0..n {
            loss[near.slot[o]] += near.second[o] - near.first[o];
        }
        loss
    };
    let mut loss = removal_loss(&near);

    let mut passes = 0;
    while passes < MAX_SWAP_PASSES {
        passes += 1;
        let mut swapped = false;
        for c in 0..n {
            if is_medoid[c] {
                continue;
            }
            let mut delta = loss.clone();
            let mut gain = 0.0;
            for o in 0..n {
                let d = euclidean(&points[o], &points[c]);
                let s = near.slot[o];
                if d < near.first[o] {
                    gain += d - near.first[o];
                    delta[s] += near.first[o] - near.second[o];
                } else if d < near.second[o] {
                    delta[s] += d - near.second[o];
                }
            }
            let (slot, best) = delta
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
            if best + gain >= 0.0 {
                continue;
            }
            let mut trial = medoids.clone();
            trial[slot] = c;
            let trial_near = nearest_medoids(points, &trial);
            let trial_cost = total_cost(&trial_near.first);
            // guards against accepting a swap that only wins by rounding
            if trial_cost < cost {
                is_medoid[medoids[slot]] = false;
                is_medoid[c] = true;
                medoids = trial;
                near = trial_near;
                cost = trial_cost;
                loss = removal_loss(&near);
                history.push(cost);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }

    if subset_count(n, k) <= EXACT_SUBSET_LIMIT {
        if let Some((best, best_cost)) = exhaustive_medoids(points, k) {
            if best_cost < cost {
                near = nearest_medoids(points, &best);
                medoids = best;
                cost = best_cost;
                history.push(cost);
            }
        }
    }

    // A medoid always belongs to its own cluster, even when duplicated.
    let mut assignment = near.slot;
    for (s, &m) in medoids.iter().enumerate() {
        assignment[m] = s;
    }
    Ok(KMedoids {
        medoids,
        assignment,
        cost,
        cost_history: history,
        passes,
    })
}

// ---------------------------------------------------------------------------
// Hierarchical

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    /// A member point of each merged cluster.
    pub a: usize,
    pub b: usize,
    /// Average pairwise distance between the two clusters.
    pub height: f64,
    pub size: usize,
}

/// Full agglomeration history, merges in non-decreasing height order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dendrogram {
    pub n: usize,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    pub fn heights(&self) -> Vec<f64> {
        self.merges.iter().map(|m| m.height).collect()
    }

    /// Partition obtained by applying the first `n - k` merges. Labels are in
    /// `0..k` by first appearance.
    pub fn cut(&self, k: usize) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for m in self.merges.iter().take(self.n.saturating_sub(k)) {
            let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
            parent[ra.max(rb)] = ra.min(rb);
        }
        let mut ids = std::collections::HashMap::new();
        (0..self.n)
            .map(|i| {
                let r = find(&mut parent, i);
                let next = ids.len();
                *ids.entry(r).or_insert(next)
            })
            .collect()
    }
}

#[inline]
fn condensed(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i < j { (i, j) } else { (j, i) };
    n * i - i * (i + 1) / 2 + (j - i - 1)
}

fn condensed_distances(points: &[Vec<f64>]) -> Vec<f64> {
    let n = points.len();
    let mut d = vec![0.0; n * n.saturating_sub(1) / 2];
    let mut rows: Vec<&mut [f64]> = Vec::with_capacity(n);
    let mut rest = &mut d[..];
    for i in 0..n {
        let (row, tail) = rest.split_at_mut(n - i - 1);
        rows.push(row);
        rest = tail;
    }
    rows.into_par_iter().enumerate().for_each(|(i, row)| {
        for (off, slot) in row.iter_mut().enumerate() {
            *slot = euclidean(&points[i], &points[i + 1 + off]);
        }
    });
    d
}

/// Average-linkage agglomeration via the nearest-neighbor chain algorithm,
/// O(n²) time and memory.
pub fn average_linkage(points: &[Vec<f64>]) -> Result<Dendrogram> {
    check_points(points)?;
    let n = points.len();
    let mut d = condensed_distances(points);
    let mut active = vec![true; n];
    let mut size = vec![1usize; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    let mut scan = 0;
    while remaining > 1 {
        if chain.is_empty() {
            while !active[scan] {
                scan += 1;
            }
            chain.push(scan);
        }
        loop {
            let c = *chain.last().unwrap();
            let prev = (chain.len() >= 2).then(|| chain[chain.len() - 2]);
            let mut best = prev;
            let mut best_d = prev.map_or(f64::INFINITY, |p| d[condensed(n, c, p)]);
            for x in 0..n {
                if x != c && active[x] {
                    let dx = d[condensed(n, c, x)];
                    if dx < best_d {
                        best_d = dx;
                        best = Some(x);
                    }
                }
            }
            let b = best.expect("at least two active clusters");
            if Some(b) == prev {
                chain.truncate(chain.len() - 2);
                let (keep, drop) = (c.min(b), c.max(b));
                let (sk, sd) = (size[keep] as f64, size[drop] as f64);
                for x in 0..n {
                    if active[x] && x != keep && x != drop {
                        let merged =
                            (sk * d[condensed(n, keep, x)] + sd * d[condensed(n, drop, x)]) / (sk + sd);
                        d[condensed(n, keep, x)] = merged;
                    }
                }
                active[drop] = false;
                size[keep] += size[drop];
                merges.push(Merge {
                    a: keep,
                    b: drop,
                    height: best_d,
                    size: size[keep],
                });
                remaining -= 1;
                break;
            }
            chain.push(b);
        }
    }
    // Stable: a merge never precedes its children, even at equal heights.
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    Ok(Dendrogram { n, merges })
}

pub fn hierarchical_cluster_points(points: &[Vec<f64>], k: usize) -> Result<Clustering> {
    if k < 1 || k > points.len() {
        return Err(Error::ArchiveTooSmall { size: points.len(), k });
    }
    let dendrogram = average_linkage(points)?;
    let raw = dendrogram.cut(k);
    Ok(Clustering::from_raw(&raw, k, |m| closest_to_mean(points, m)))
}

// ---------------------------------------------------------------------------
// Spectral

/// Median pairwise distance over a seeded subsample of at most
/// [`SIGMA_SUBSAMPLE`] points. Falls back to the median positive distance
/// when more than half the pairs coincide.
pub fn median_heuristic_sigma(points: &[Vec<f64>], seed: u64) -> Result<f64> {
    check_points(points)?;
    let n = points.len();
    let idx: Vec<usize> = if n > SIGMA_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = rand::seq::index::sample(&mut rng, n, SIGMA_SUBSAMPLE).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(idx.len() * idx.len().saturating_sub(1) / 2);
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            dists.push(euclidean(&points[i], &points[j]));
        }
    }
    let median = |v: &mut Vec<f64>| -> Option<f64> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    };
    match median(&mut dists) {
        Some(m) if m > 0.0 => Ok(m),
        _ => {
            dists.retain(|&d| d > 0.0);
            median(&mut dists).ok_or(Error::DegenerateAffinity)
        }
    }
}

/// Gaussian affinity `exp(-‖xi − xj‖² / 2σ²)` with a zero diagonal.
pub fn gaussian_affinity(points: &[Vec<f64>], sigma: f64) -> DMatrix<f64> {
    let n = points.len();
    let denom = 2.0 * sigma * sigma;
    let mut w = DMatrix::zeros(n, n);
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|i| {
                    if i == j {
                        0.0
                    } else {
                        (-euclidean(&points[i], &points[j]).powi(2) / denom).exp()
                    }
                })
                .collect()
        })
        .collect();
    for (j, col) in cols.into_iter().enumerate() {
        w.column_mut(j).copy_from_slice(&col);
    }
    w
}

/// `D^{-1/2} W D^{-1/2}`; isolated vertices get zero rows.
fn normalized_affinity(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = w.row(i).sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    DMatrix::from_fn(n, n, |i, j| inv_sqrt[i] * w[(i, j)] * inv_sqrt[j])
}

/// Symmetric normalized Laplacian `I − D^{-1/2} W D^{-1/2}`.
pub fn normalized_laplacian(w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = w.nrows();
    DMatrix::identity(n, n) - normalized_affinity(w)
}

/// All eigenvalues of the normalized Laplacian, ascending.
pub fn laplacian_spectrum(w: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(normalized_laplacian(w)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

#[derive(Clone, Debug)]
pub struct SpectralEmbedding {
    /// The `k` smallest Laplacian eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// One unit-length row per point.
    pub rows: Vec<Vec<f64>>,
}

/// Rows of the `k` smallest-eigenvalue eigenvectors of the normalized
/// Laplacian of `w`, each scaled to unit length.
pub fn spectral_embedding(w: &DMatrix<f64>, k: usize, seed: u64) -> Result<SpectralEmbedding> {
    let n = w.nrows();
    if k == 0 || k > n {
        return Err(Error::ArchiveTooSmall { size: n, k });
    }
    let (eigenvalues, vectors) = if n <= DENSE_EIGEN_MAX {
        dense_smallest(w, k)
    } else {
        subspace_smallest(w, k, seed)
    };
    let rows = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..k).map(|c| vectors[(i, c)]).collect();
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.iter().map(|v| v / norm).collect()
            } else {
                row
            }
        })
        .collect();
    Ok(SpectralEmbedding { eigenvalues, rows })
}

fn dense_smallest(w: &DMatrix<f64>, k: usize) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(normalized_laplacian(w));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]).then(a.cmp(&b)));
    let values = order[..k].iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(w.nrows(), k, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Block subspace iteration with Rayleigh–Ritz on `I + D^{-1/2} W D^{-1/2}`,
/// whose top eigenpairs are the Laplacian's bottom ones (λ_L = 2 − θ).
fn subspace_smallest(w: &DMatrix<f64>, k: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    const MAX_ITERS: usize = 1000;
    const TOL: f64 = 1e-10;
    let n = w.nrows();
    let b = (2 * k + 10).min(n);
    let mut op = normalized_affinity(w);
    for i in 0..n {
        op[(i, i)] += 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = DMatrix::from_fn(n, b, |_, _| rng.gen::<f64>() - 0.5);
    let mut theta = vec![0.0; b];
    let mut x = y.clone();
    for _ in 0..MAX_ITERS {
        let q = y.qr().q();
        let z = &op * &q;
        let h = q.transpose() * &z;
        let h = (&h + h.transpose()) * 0.5;
        let eig = SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
        let s = DMatrix::from_fn(b, b, |r, c| eig.eigenvectors[(r, order[c])]);
        theta = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        x = &q * &s;
        y = &z * &s;
        let converged = (0..k).all(|c| {
            let resid = (y.column(c) - x.column(c) * theta[c]).norm();
            resid <= TOL * theta[0].abs().max(1.0)
        });
        if converged {
            break;
        }
    }
    let values = theta[..k].iter().map(|t| 2.0 - t).collect();
    (values, x.columns(0, k).into_owned())
}

/// Lloyd's k-means with k-means++ seeding and several seeded restarts; keeps
/// the lowest-inertia run. Every cluster is kept nonempty.
pub fn k_means(rows: &[Vec<f64>], k: usize, seed: u64) -> Vec<usize> {
    const RESTARTS: usize = 10;
    const MAX_ITERS: usize = 300;
    let n = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..RESTARTS {
        let mut centers: Vec<Vec<f64>> =
            seed_medoids(rows, k, &mut rng).into_iter().map(|i| rows[i].clone()).collect();
        let mut labels = vec![usize::MAX; n];
        for _ in 0..MAX_ITERS {
            let mut changed = false;
            for (i, r) in rows.iter().enumerate() {
                let l = nearest_center(r, &centers);
                if labels[i] != l {
                    labels[i] = l;
                    changed = true;
                }
            }
            fill_empty_clusters(rows, &mut labels, &centers, k);
            centers = recompute_centers(rows, &labels, k);
            if !changed {
                break;
            }
        }
        let inertia: f64 = rows
            .iter()
            .zip(&labels)
            .map(|(r, &l)| euclidean(r, &centers[l]).powi(2))
            .sum();
        if best.as_ref().map_or(true, |(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.expect("at least one restart").1
}

fn nearest_center(r: &[f64], centers: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, center) in centers.iter().enumerate() {
        let d = euclidean(r, center);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn recompute_centers(rows: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<f64>> {
    let dim = rows[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (r, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(r) {
            *s += v;
        }
    }
    for (s, &c) in sums.iter_mut().zip(&counts) {
        if c > 0 {
            for v in s.iter_mut() {
                *v /= c as f64;
            }
        }
    }
    sums
}

/// Moves the point farthest from its center into each empty cluster.
fn fill_empty_clusters(rows: &[Vec<f64>], labels: &mut [usize], centers: &[Vec<f64>], k: usize) {
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..rows.len())
            .filter(|&i| counts[labels[i]] > 1)
            .max_by(|&a, &b| {
                euclidean(&rows[a], &centers[labels[a]])
                    .total_cmp(&euclidean(&rows[b], &centers[labels[b]]))
                    .then(b.cmp(&a))
            })
            .expect("more points than clusters");
        labels[donor] = empty;
    }
}

fn all_identical(points: &[Vec<f64>]) -> bool {
    points.iter().all(|p| p == &points[0])
}

/// Spectral clustering; representatives are chosen in the original space.
pub fn spectral_cluster_points(
    points: &[Vec<f64>],
    k: usize,
    sigma: Option<f64>,
    seed: u64,
) -> Result<Clustering> {
    check_points(points)?;
    if k < 1 || k > points.len() {
        return Err(Error::ArchiveTooSmall { size: points.len(), k });
    }
    if all_identical(points) {
        return Err(Error::DegenerateAffinity);
    }
    let sigma = match sigma {
        Some(s) => s,
        None => median_heuristic_sigma(points, seed)?,
    };
    let w = gaussian_affinity(points, sigma);
    let emb = spectral_embedding(&w, k, seed)?;
    let raw = k_means(&emb.rows, k, seed);
    Ok(Clustering::from_raw(&raw, k, |m| closest_to_mean(points, m)))
}

pub fn kmedoids_cluster_points(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Clustering> {
    let km = k_medoids(points, k, seed)?;
    Ok(Clustering::from_raw(&km.assignment, k, |m| {
        *m.iter().find(|i| km.medoids.contains(i)).expect("medoid in its cluster")
    }))
}

/// Clusters raw points with the configured method.
pub fn cluster_points(points: &[Vec<f64>], config: &ClusterConfig) -> Result<Clustering> {
    config.validate(points.len())?;
    match config.method {
        ClusterMethod::Kmedoids => kmedoids_cluster_points(points, config.k, config.seed),
        ClusterMethod::Hierarchical => hierarchical_cluster_points(points, config.k),
        ClusterMethod::Spectral => spectral_cluster_points(points, config.k, config.affinity_sigma, config.seed),
    }
}

// ---------------------------------------------------------------------------
// Taxonomy

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyCandidate {
    pub cluster_id: usize,
    pub cluster_size: usize,
    pub representative: ArchiveEntry,
}

fn archive_points(archive: &Archive) -> Vec<Vec<f64>> {
    archive.entries().iter().map(|e| e.behavior.clone()).collect()
}

pub fn k_medoids_archive(archive: &Archive, config: &ClusterConfig) -> Result<Vec<TaxonomyCandidate>> {
    extract_with(archive, &ClusterConfig { method: ClusterMethod::Kmedoids, ..config.clone() })
}

pub fn hierarchical_cluster(archive: &Archive, config: &ClusterConfig) -> Result<Vec<TaxonomyCandidate>> {
    extract_with(archive, &ClusterConfig { method: ClusterMethod::Hierarchical, ..config.clone() })
}

pub fn spectral_cluster(archive: &Archive, config: &ClusterConfig) -> Result<Vec<TaxonomyCandidate>> {
    extract_with(archive, &ClusterConfig { method: ClusterMethod::Spectral, ..config.clone() })
}

fn extract_with(archive: &Archive, config: &ClusterConfig) -> Result<Vec<TaxonomyCandidate>> {
    let clustering = cluster_points(&archive_points(archive), config)?;
    Ok(clustering
        .representatives
        .iter()
        .zip(&clustering.sizes)
        .enumerate()
        .map(|(cluster_id, (&rep, &size))| TaxonomyCandidate {
            cluster_id,
            cluster_size: size,
            representative: archive.entries()[rep].clone(),
        })
        .collect())
}

/// Clusters the archive and returns one candidate per cluster, largest first.
/// With a featurizer, each representative is re-simulated from its stored
/// genome and seed and must reproduce its stored behavior vector.
pub fn extract_taxonomy(
    archive: &Archive,
    config: &ClusterConfig,
    verify_with: Option<&dyn Featurizer>,
) -> Result<Vec<TaxonomyCandidate>> {
    let candidates = extract_with(archive, config)?;
    if let Some(f) = verify_with {
        for c in &candidates {
            verify_replay(&c.representative, archive, f)?;
        }
    }
    Ok(candidates)
}

/// Re-simulates an entry and compares the recomputed behavior vector.
pub fn verify_replay(entry: &ArchiveEntry, archive: &Archive, featurizer: &dyn Featurizer) -> Result<()> {
    let traj = simulate(&entry.genome, &archive.header.sim, entry.seed)?;
    let bv = featurizer.featurize(&traj)?;
    let diff = if bv.values.len() == entry.behavior.len() {
        bv.values
            .iter()
            .zip(&entry.behavior)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    if diff > REPLAY_TOLERANCE || diff.is_nan() {
        return Err(Error::ReplayMismatch {
            eval_id: entry.eval_id,
            max_abs_diff: diff,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 0.0], [20.0, 0.0], [0.0, 20.0]];
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for _ in 0..30 {
                let r = rng.gen::<f64>();
                let a = rng.gen::<f64>() * std::f64::consts::TAU;
                pts.push(vec![ctr[0] + r * a.cos(), ctr[1] + r * a.sin()]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let km = k_medoids(&pts, 6, 3).unwrap();
        assert_eq!(km.cost, 0.0);
        let h = hierarchical_cluster_points(&pts, 6).unwrap();
        assert!(h.sizes.iter().all(|&s| s == 1));
    }

    #[test]
    fn separated_pairs() {
        let pts = vec![vec![0.0, 0.0], vec![0.1, 0.0], vec![10.0, 10.0], vec![10.0, 10.1]];
        for seed in 0..10 {
            let c = kmedoids_cluster_points(&pts, 2, seed).unwrap();
            assert_eq!(c.labels[0], c.labels[1]);
            assert_eq!(c.labels[2], c.labels[3]);
            assert_ne!(c.labels[0], c.labels[2]);
        }
    }

    #[test]
    fn duplicates_still_yield_k_clusters() {
        let pts = vec![vec![1.0]; 5].into_iter().chain([vec![2.0]]).collect::<Vec<_>>();
        for method in [ClusterMethod::Kmedoids, ClusterMethod::Hierarchical, ClusterMethod::Spectral] {
            let c = cluster_points(&pts, &ClusterConfig::new(method, 3)).unwrap();
            assert_eq!(c.k(), 3, "{method}");
            assert_eq!(c.sizes.iter().sum::<usize>(), 6);
        }
    }

    #[test]
    fn blobs_are_recovered() {
        let (pts, truth) = blobs(1);
        for method in [ClusterMethod::Kmedoids, ClusterMethod::Hierarchical, ClusterMethod::Spectral] {
            let c = cluster_points(&pts, &ClusterConfig::new(method, 3)).unwrap();
            assert_eq!(purity(&c.labels, &truth), 1.0, "{method}");
            for (id, &rep) in c.representatives.iter().enumerate() {
                assert_eq!(c.labels[rep], id);
            }
        }
    }

    #[test]
    fn identical_points_are_degenerate_for_spectral() {
        let pts = vec![vec![0.5, 0.5]; 10];
        assert!(matches!(
            spectral_cluster_points(&pts, 2, None, 0),
            Err(Error::DegenerateAffinity)
        ));
    }

    #[test]
    fn config_validation() {
        let cfg = ClusterConfig::default();
        assert!(matches!(cfg.validate(10), Err(Error::ArchiveTooSmall { size: 10, k: 20 })));
        assert!(ClusterConfig::new(ClusterMethod::Spectral, 1).validate(10).is_err());
        assert_eq!("k-medoids".parse::<ClusterMethod>().unwrap(), ClusterMethod::Kmedoids);
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..120)
            .map(|i| {
                let c = (i % 3) as f64 * 4.0;
                vec![c + rng.gen::<f64>(), rng.gen::<f64>()]
            })
            .collect();
        let w = gaussian_affinity(&pts, 0.8);
        let (dv, _) = dense_smallest(&w, 4);
        let (sv, _) = subspace_smallest(&w, 4, 1);
        for (a, b) in dv.iter().zip(&sv) {
            assert!((a - b).abs() < 1e-8, "{dv:?} vs {sv:?}");
        }
    }
}
