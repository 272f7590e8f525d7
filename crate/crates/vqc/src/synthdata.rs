//! Synthetic Gaussian-mixture datasets with retained ground-truth parameters,
//! standard scaling, and seeded batching.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, VqcError};
use crate::numcore::Matrix;

/// Minimum allowed ratio of pairwise mean separation to the cluster std.
pub const MIN_SEPARATION_STDS: f64 = 6.0;
/// Separation the built-in mean placements target.
const PLACEMENT_SEPARATION: f64 = 8.0;

/// Generator parameters for a labeled Gaussian mixture.
#[derive(Debug, Clone)]
pub struct MixtureSpec {
    pub n_clusters: usize,
    pub points_per_cluster: usize,
    pub dim: usize,
    pub cluster_means: Matrix, // n_clusters x dim
    pub cluster_std: f64,
    pub seed: u64,
}

impl MixtureSpec {
    /// Default mixture: 10 clusters of 1000 points with unit std, means placed
    /// deterministically from the seed (ring in 2-D, max-min dispersion above).
    pub fn new(dim: usize, seed: u64) -> Self {
        MixtureSpec::with_shape(10, 1000, dim, seed)
    }

    pub fn with_shape(n_clusters: usize, points_per_cluster: usize, dim: usize, seed: u64) -> Self {
        let cluster_means = place_means(n_clusters, dim, seed);
        MixtureSpec {
            n_clusters,
            points_per_cluster,
            dim,
            cluster_means,
            cluster_std: 1.0,
            seed,
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_clusters * self.points_per_cluster
    }

    fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.points_per_cluster == 0 || self.dim == 0 {
            return Err(VqcError::Config("mixture spec needs positive sizes".into()));
        }
        if self.cluster_means.rows() != self.n_clusters || self.cluster_means.cols() != self.dim {
            return Err(VqcError::Config("cluster_means shape mismatch".into()));
        }
        let min_sep = min_pairwise_distance(&self.cluster_means);
        if self.n_clusters > 1 && min_sep < MIN_SEPARATION_STDS * self.cluster_std {
            return Err(VqcError::Config(format!(
                "cluster means too close: min separation {min_sep:.3} < {} stds",
                MIN_SEPARATION_STDS
            )));
        }
        Ok(())
    }
}

/// Per-dimension affine scaler fitted to zero mean, unit variance.
#[derive(Debug, Clone)]
pub struct StandardScaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(data: &Matrix) -> Self {
        let (n, d) = (data.rows(), data.cols());
        let mut means = vec![0.0; d];
        for r in 0..n {
            for (m, &v) in means.iter_mut().zip(data.row(r)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        let mut vars = vec![0.0; d];
        for r in 0..n {
            for c in 0..d {
                let dlt = data.get(r, c) - means[c];
                vars[c] += dlt * dlt;
            }
        }
        let stds = vars
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        StandardScaler { means, stds }
    }

    pub fn transform(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for c in 0..row.len() {
                row[c] = (row[c] - self.means[c]) / self.stds[c];
            }
        }
        out
    }

    pub fn inverse_transform(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for c in 0..row.len() {
                row[c] = row[c] * self.stds[c] + self.means[c];
            }
        }
        out
    }
}

/// Scaled samples with labels, the fitted scaler, and the generating spec.
#[derive(Debug, Clone)]
pub struct GaussianMixtureDataset {
    pub samples: Matrix, // N x dim, standard-scaled
    pub labels: Vec<usize>,
    pub scaler: StandardScaler,
    pub spec: MixtureSpec,
}

impl GaussianMixtureDataset {
    pub fn n_samples(&self) -> usize {
        self.samples.rows()
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// Map points from scaled space back to generator coordinates.
    pub fn unscale(&self, points: &Matrix) -> Matrix {
        self.scaler.inverse_transform(points)
    }

    /// Seeded 90/10 split; returns (train indices, test indices).
    pub fn train_test_split(&self, seed: u64) -> (Vec<usize>, Vec<usize>) {
        let n = self.n_samples();
        let mut idx: Vec<usize> = (0..n).collect();
        shuffle(&mut idx, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x51f7));
        let n_test = (n / 10).clamp(1, n.saturating_sub(1).max(1));
        let test = idx.split_off(n - n_test);
        (idx, test)
    }
}

/// Deterministic sampling of the mixture, then standard scaling fitted on the
/// generated samples.
pub fn generate(spec: &MixtureSpec) -> Result<GaussianMixtureDataset> {
    spec.validate()?;
    let n = spec.n_samples();
    let mut raw = Matrix::zeros(n, spec.dim);
    let mut labels = Vec::with_capacity(n);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut row = 0usize;
    for k in 0..spec.n_clusters {
        for _ in 0..spec.points_per_cluster {
            let out = raw.row_mut(row);
            for (c, o) in out.iter_mut().enumerate() {
                let g: f64 = rng.sample(StandardNormal);
                *o = spec.cluster_means.get(k, c) + spec.cluster_std * g;
            }
            labels.push(k);
            row += 1;
        }
    }
    let scaler = StandardScaler::fit(&raw);
    let samples = scaler.transform(&raw);
    Ok(GaussianMixtureDataset { samples, labels, scaler, spec: clone_spec(spec) })
}

fn clone_spec(spec: &MixtureSpec) -> MixtureSpec {
    spec.clone()
}

/// Seeded shuffled minibatches; every sample appears once per epoch and the
/// final partial batch is included.
pub fn batches(
    ds: &GaussianMixtureDataset,
    batch_size: usize,
    epoch_seed: u64,
) -> Vec<Matrix> {
    batches_of(&ds.samples, &(0..ds.n_samples()).collect::<Vec<_>>(), batch_size, epoch_seed)
}

/// Batches over a subset of rows (used for the train split).
pub fn batches_of(
    samples: &Matrix,
    rows: &[usize],
    batch_size: usize,
    epoch_seed: u64,
) -> Vec<Matrix> {
    assert!(batch_size >= 1);
    let mut idx = rows.to_vec();
    shuffle(&mut idx, &mut ChaCha8Rng::seed_from_u64(epoch_seed));
    idx.chunks(batch_size).map(|chunk| samples.select_rows(chunk)).collect()
}

fn shuffle(idx: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
}

/// Deterministic mean placement: a ring for 2-D, seeded max-min dispersion
/// sampling in higher dimensions. Separation targets 8 stds.
fn place_means(n_clusters: usize, dim: usize, seed: u64) -> Matrix {
    let mut means = Matrix::zeros(n_clusters, dim);
    if n_clusters == 1 {
        return means;
    }
    if dim == 2 {
        // chord = 2 r sin(pi/n) >= 8  =>  r = 8 / (2 sin(pi/n)), plus margin
        let angle0 = (seed as f64 % 360.0).to_radians();
        let r = PLACEMENT_SEPARATION / (2.0 * (std::f64::consts::PI / n_clusters as f64).sin()) * 1.05;
        for k in 0..n_clusters {
            let a = angle0 + 2.0 * std::f64::consts::PI * k as f64 / n_clusters as f64;
            means.set(k, 0, r * a.cos());
            means.set(k, 1, r * a.sin());
        }
        return means;
    }
    // greedy max-min selection from a seeded candidate pool
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let half_box = 4.0 * PLACEMENT_SEPARATION;
    let n_candidates = 4096.max(n_clusters * 64);
    let mut pool = Matrix::zeros(n_candidates, dim);
    for r in 0..n_candidates {
        for v in pool.row_mut(r) {
            *v = rng.gen_range(-half_box..half_box);
        }
    }
    means.row_mut(0).copy_from_slice(pool.row(0));
    let mut d2: Vec<f64> = (0..n_candidates)
        .map(|j| crate::numcore::sq_dist(pool.row(j), means.row(0)))
        .collect();
    for k in 1..n_clusters {
        let (best, _) = d2
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (j, &d)| if d > acc.1 { (j, d) } else { acc });
        means.row_mut(k).copy_from_slice(pool.row(best));
        for j in 0..n_candidates {
            let d = crate::numcore::sq_dist(pool.row(j), means.row(k));
            if d < d2[j] {
                d2[j] = d;
            }
        }
    }
    means
}

fn min_pairwise_distance(means: &Matrix) -> f64 {
    let mut min = f64::INFINITY;
    for i in 0..means.rows() {
        for j in (i + 1)..means.rows() {
            let d = crate::numcore::sq_dist(means.row(i), means.row(j)).sqrt();
            if d < min {
                min = d;
            }
        }
    }
    min
}
