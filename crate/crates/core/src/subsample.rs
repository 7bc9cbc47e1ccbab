//! Dataset construction: sub-volume tiling, velocity moments, k-means with
//! elbow selection, cluster-balanced sampling and train/val/test splits.

use std::ops::RangeInclusive;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FlowState, GridSpec, ScalarField3D};

pub const MAX_ITERATIONS: usize = 300;
pub const RESTARTS: usize = 10;

/// Non-overlapping `size^3` tiles in x-major order; partial edge tiles are dropped.
pub fn extract_subvolumes(state: &FlowState, size: usize) -> Result<Vec<FlowState>> {
    let g = state.grid();
    if size == 0 || g.dims().iter().any(|&n| n < size) {
        return Err(Error::DomainTooSmall(format!(
            "cannot tile {}x{}x{} with {size}^3 blocks",
            g.nx, g.ny, g.nz
        )));
    }
    let sub = GridSpec::cube(size, g.dx)?;
    let cut = |f: &ScalarField3D, o: [usize; 3]| {
        ScalarField3D::from_fn(sub, f.unit().to_string(), |x, y, z| {
            f.get(o[0] + x, o[1] + y, o[2] + z)
        })
    };
    let mut out = Vec::new();
    for bx in 0..g.nx / size {
        for by in 0..g.ny / size {
            for bz in 0..g.nz / size {
                let o = [bx * size, by * size, bz * size];
                out.push(FlowState::new(
                    cut(&state.rho, o),
                    [cut(&state.u[0], o), cut(&state.u[1], o), cut(&state.u[2], o)],
                )?);
            }
        }
    }
    Ok(out)
}

/// Mean, variance, skewness and kurtosis of each velocity component:
/// `[m1, v1, s1, k1, m2, v2, s2, k2, m3, v3, s3, k3]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentVector(pub [f64; 12]);

impl MomentVector {
    pub fn mean(&self, k: usize) -> f64 {
        self.0[4 * k]
    }
    pub fn variance(&self, k: usize) -> f64 {
        self.0[4 * k + 1]
    }
    pub fn skewness(&self, k: usize) -> f64 {
        self.0[4 * k + 2]
    }
    pub fn kurtosis(&self, k: usize) -> f64 {
        self.0[4 * k + 3]
    }
}

impl AsRef<[f64]> for MomentVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Population moments of one sample set. A (numerically) constant channel
/// has skewness 0 and kurtosis 3.
pub fn channel_moments(values: &[f64]) -> [f64; 4] {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in values {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m2 <= (1e-12 * scale).powi(2) {
        return [mean, 0.0, 0.0, 3.0];
    }
    [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2)]
}

pub fn moments(state: &FlowState) -> MomentVector {
    let mut out = [0.0; 12];
    for k in 0..3 {
        out[4 * k..4 * k + 4].copy_from_slice(&channel_moments(state.u[k].values()));
    }
    MomentVector(out)
}

/// Per-dimension z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Divisor per dimension; 1 for constant dimensions.
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Dimensions whose spread is below `1e-12 * max(1, |mean|)` are treated as
    /// constant and only centered.
    pub fn fit<T: AsRef<[f64]>>(rows: &[T]) -> Self {
        let d = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(v, m)| {
                let std = (v / n).sqrt();
                if std <= 1e-12 * m.abs().max(1.0) {
                    1.0
                } else {
                    std
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    /// Centroids in standardized feature space.
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances, standardized space.
    pub inertia: f64,
    /// Inertia after each assignment step of the selected restart.
    pub inertia_history: Vec<f64>,
    pub standardizer: Standardizer,
}

impl ClusterModel {
    pub fn centroids_raw(&self) -> Vec<Vec<f64>> {
        self.centroids.iter().map(|c| self.standardizer.inverse(c)).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding.
fn seed_centroids<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = d2.iter().rposition(|&d| d > 0.0).unwrap();
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

struct Run {
    centroids: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    inertia: f64,
    history: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> Run {
    let k = centroids.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    for _ in 0..MAX_ITERATIONS {
        let mut inertia = 0.0;
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                let (best, d) = centroids
                    .iter()
                    .enumerate()
                    .map(|(c, m)| (c, sq_dist(p, m)))
                    .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                inertia += d;
                best
            })
            .collect();
        if let Some(&prev) = history.last() {
            debug_assert!(
                inertia <= prev * (1.0 + 1e-12) + 1e-12,
                "k-means inertia increased: {prev} -> {inertia}"
            );
        }
        history.push(inertia);
        if next == assignments {
            break;
        }
        assignments = next;
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            sums[c].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    Run {
        inertia: *history.last().unwrap(),
        centroids,
        assignments,
        history,
    }
}

/// Standardized k-means: k-means++ seeding, Lloyd iterations to a fixpoint
/// (at most [`MAX_ITERATIONS`]), best of [`RESTARTS`] seeded restarts.
pub fn kmeans<T: AsRef<[f64]>>(features: &[T], k: usize, seed: u64) -> Result<ClusterModel> {
    if features.is_empty() {
        return Err(Error::EmptyInput("no features to cluster"));
    }
    if k == 0 || k > features.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} must be in 1..={}",
            features.len()
        )));
    }
    let dim = features[0].as_ref().len();
    if features.iter().any(|f| f.as_ref().len() != dim) {
        return Err(Error::InvalidArgument("feature rows differ in length".into()));
    }
    let standardizer = Standardizer::fit(features);
    let points: Vec<Vec<f64>> = features.iter().map(|f| standardizer.transform(f.as_ref())).collect();
    let runs: Vec<Run> = (0..RESTARTS as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r);
            lloyd(&points, seed_centroids(&points, k, &mut rng))
        })
        .collect();
    // Lowest inertia; ties go to the earliest restart.
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .unwrap();
    Ok(ClusterModel {
        k,
        centroids: best.centroids,
        assignments: best.assignments,
        inertia: best.inertia,
        inertia_history: best.history,
        standardizer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    pub k: usize,
    /// `(k, inertia)` for every evaluated k.
    pub curve: Vec<(usize, f64)>,
}

/// Picks the k with the largest discrete second difference of the inertia
/// curve, `I(k-1) - 2 I(k) + I(k+1)`, over interior points of `k_range`.
/// Ties, flat curves and ranges too short for a second difference resolve to
/// the smallest k.
pub fn elbow<T: AsRef<[f64]>>(features: &[T], k_range: RangeInclusive<usize>, seed: u64) -> Result<ElbowResult> {
    let lo = (*k_range.start()).max(1);
    let hi = (*k_range.end()).min(features.len());
    if features.is_empty() {
        return Err(Error::EmptyInput("no features to cluster"));
    }
    if lo > hi {
        return Err(Error::InvalidArgument(format!("empty k range {k_range:?}")));
    }
    let curve = (lo..=hi)
        .map(|k| Ok((k, kmeans(features, k, seed)?.inertia)))
        .collect::<Result<Vec<_>>>()?;
    let flat_tol = 1e-9 * curve[0].1.abs().max(f64::MIN_POSITIVE);
    let mut best = (lo, flat_tol);
    for w in curve.windows(3) {
        let d2 = w[0].1 - 2.0 * w[1].1 + w[2].1;
        if d2 > best.1 {
            best = (w[1].0, d2);
        }
    }
    Ok(ElbowResult { k: best.0, curve })
}

/// Per-cluster quotas summing to `n_target`: every cluster gets an equal share,
/// clusters smaller than their share give up the surplus, which is shared
/// again among the rest. Leftover units go to the lowest-numbered open clusters.
pub fn balanced_quotas(sizes: &[usize], n_target: usize) -> Result<Vec<usize>> {
    let total: usize = sizes.iter().sum();
    if n_target > total {
        return Err(Error::InvalidArgument(format!(
            "cannot select {n_target} of {total} samples"
        )));
    }
    let mut quota = vec![0; sizes.len()];
    let mut remaining = n_target;
    while remaining > 0 {
        let open: Vec<usize> = (0..sizes.len()).filter(|&c| quota[c] < sizes[c]).collect();
        let share = remaining / open.len();
        if share == 0 {
            for &c in open.iter().take(remaining) {
                quota[c] += 1;
            }
            break;
        }
        for &c in &open {
            let add = share.min(sizes[c] - quota[c]);
            quota[c] += add;
            remaining -= add;
        }
    }
    Ok(quota)
}

/// Sorted sample indices drawn per [`balanced_quotas`]; members of each
/// cluster are chosen by a seeded shuffle.
pub fn balanced_select(assignments: &[usize], n_target: usize, seed: u64) -> Result<Vec<usize>> {
    let k = assignments.iter().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); k];
    for (i, &c) in assignments.iter().enumerate() {
        members[c].push(i);
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let quotas = balanced_quotas(&sizes, n_target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_target);
    for (m, q) in members.iter_mut().zip(quotas) {
        m.shuffle(&mut rng);
        out.extend_from_slice(&m[..q]);
    }
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSets {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle, then `floor(n/10)` to validation, `floor(n/10)` to test and
/// the rest to training. Each set is returned sorted.
pub fn split(indices: &[usize], seed: u64) -> SplitSets {
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = indices.len() / 10;
    let n_test = indices.len() / 10;
    let mut val = shuffled[..n_val].to_vec();
    let mut test = shuffled[n_val..n_val + n_test].to_vec();
    let mut train = shuffled[n_val + n_test..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();
    SplitSets { train, val, test }
}
