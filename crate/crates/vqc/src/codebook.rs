//! The token set, nearest-neighbor quantization, K-means initialization,
//! EMA statistical updates, and usage statistics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, VqcError};
use crate::numcore::{sq_dist, Matrix};

/// Below this running count a token is frozen instead of divided by ~0.
pub const EMA_COUNT_EPS: f64 = 1e-9;

/// K-means restarts; the run with the lowest final objective wins.
pub const KMEANS_RESTARTS: usize = 10;

/// Token indices assigned to a batch of embeddings, one per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment(pub Vec<usize>);

impl Assignment {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Codebook with EMA accumulator state (running sums M and counts L).
#[derive(Debug, Clone)]
pub struct Codebook {
    tokens: Matrix, // S x D
    ema_sum: Matrix, // S x D
    ema_count: Vec<f64>,
    gamma: f64,
    initialized: bool,
}

impl Codebook {
    pub fn new(size: usize, dim: usize, gamma: f64) -> Result<Self> {
        if size == 0 || dim == 0 {
            return Err(VqcError::Config("codebook size and dim must be >= 1".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(VqcError::Config(format!("gamma must lie in (0,1), got {gamma}")));
        }
        Ok(Codebook {
            tokens: Matrix::zeros(size, dim),
            ema_sum: Matrix::zeros(size, dim),
            ema_count: vec![0.0; size],
            gamma,
            initialized: false,
        })
    }

    /// Restore a codebook from persisted state.
    pub fn from_state(
        tokens: Matrix,
        ema_sum: Matrix,
        ema_count: Vec<f64>,
        gamma: f64,
        initialized: bool,
    ) -> Self {
        assert_eq!(tokens.rows(), ema_sum.rows());
        assert_eq!(tokens.cols(), ema_sum.cols());
        assert_eq!(tokens.rows(), ema_count.len());
        Codebook { tokens, ema_sum, ema_count, gamma, initialized }
    }

    pub fn size(&self) -> usize {
        self.tokens.rows()
    }

    pub fn dim(&self) -> usize {
        self.tokens.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn tokens(&self) -> &Matrix {
        &self.tokens
    }

    pub fn ema_sum(&self) -> &Matrix {
        &self.ema_sum
    }

    pub fn ema_count(&self) -> &[f64] {
        &self.ema_count
    }

    /// Nearest-token lookup for each embedding row. Ties break toward the
    /// lowest token index.
    pub fn quantize(&self, embeddings: &Matrix) -> Result<(Assignment, Matrix)> {
        if !self.initialized {
            return Err(VqcError::Usage("quantize called on an uninitialized codebook".into()));
        }
        if embeddings.cols() != self.dim() {
            return Err(VqcError::Usage(format!(
                "quantize: embeddings have dim {}, codebook has dim {}",
                embeddings.cols(),
                self.dim()
            )));
        }
        let mut indices = Vec::with_capacity(embeddings.rows());
        let mut quantized = Matrix::zeros(embeddings.rows(), self.dim());
        for r in 0..embeddings.rows() {
            let z = embeddings.row(r);
            let k = self.nearest(z);
            indices.push(k);
            quantized.row_mut(r).copy_from_slice(self.tokens.row(k));
        }
        Ok((Assignment(indices), quantized))
    }

    fn nearest(&self, z: &[f64]) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for k in 0..self.size() {
            let d = sq_dist(z, self.tokens.row(k));
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }

    /// K-means over the embeddings: [`KMEANS_RESTARTS`] independent runs of
    /// k-means++ seeding plus Lloyd iterations (until assignments stabilize or
    /// `max_iters` passes), keeping the run with the lowest final objective.
    /// Empty clusters re-seed at the point farthest from its current center.
    /// Seeds the EMA accumulators so the first EMA step is continuous with
    /// the initialization.
    pub fn kmeans_init(
        &mut self,
        embeddings: &Matrix,
        max_iters: usize,
        seed: u64,
    ) -> Result<KmeansTrace> {
        let n = embeddings.rows();
        let s = self.size();
        if n < s {
            return Err(VqcError::Config(format!(
                "kmeans_init needs at least {s} embeddings, got {n}"
            )));
        }
        if embeddings.cols() != self.dim() {
            return Err(VqcError::Config(format!(
                "kmeans_init: embeddings dim {} != codebook dim {}",
                embeddings.cols(),
                self.dim()
            )));
        }
        let mut best: Option<(Matrix, Vec<f64>)> = None;
        for restart in 0..KMEANS_RESTARTS {
            let restart_seed =
                seed.wrapping_add((restart as u64).wrapping_mul(0x9e3779b97f4a7c15));
            let (tokens, objectives) = lloyd(embeddings, s, max_iters, restart_seed);
            let better = match &best {
                None => true,
                Some((_, prev)) => {
                    objectives.last().unwrap() < prev.last().unwrap()
                }
            };
            if better {
                best = Some((tokens, objectives));
            }
        }
        let (tokens, objectives) = best.unwrap();
        self.tokens = tokens;

        // final assignment for accumulator seeding
        let mut counts = vec![0.0f64; s];
        for j in 0..n {
            let z = embeddings.row(j);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for k in 0..s {
                let d = sq_dist(z, self.tokens.row(k));
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            counts[best] += 1.0;
        }
        for k in 0..s {
            let l = counts[k];
            let token = self.tokens.row(k).to_vec();
            for (m, t) in self.ema_sum.row_mut(k).iter_mut().zip(token) {
                *m = t * l;
            }
            self.ema_count[k] = l;
        }
        self.initialized = true;
        Ok(KmeansTrace { objectives })
    }

    /// One EMA statistical update: decayed running sums and counts per token,
    /// then tokens reset to sum / count where the count stays above
    /// [`EMA_COUNT_EPS`].
    pub fn ema_update(&mut self, embeddings: &Matrix, assignment: &Assignment) -> Result<()> {
        if !self.initialized {
            return Err(VqcError::Usage("ema_update on an uninitialized codebook".into()));
        }
        if assignment.len() != embeddings.rows() {
            return Err(VqcError::Usage("ema_update: assignment/embedding length mismatch".into()));
        }
        let s = self.size();
        let mut batch_sum = Matrix::zeros(s, self.dim());
        let mut batch_count = vec![0.0f64; s];
        for (j, &k) in assignment.0.iter().enumerate() {
            if k >= s {
                return Err(VqcError::Usage(format!("assignment index {k} out of range")));
            }
            batch_count[k] += 1.0;
            for (acc, &v) in batch_sum.row_mut(k).iter_mut().zip(embeddings.row(j)) {
                *acc += v;
            }
        }
        let g = self.gamma;
        for k in 0..s {
            for (m, &mk) in self.ema_sum.row_mut(k).iter_mut().zip(batch_sum.row(k)) {
                *m = g * *m + (1.0 - g) * mk;
            }
            self.ema_count[k] = g * self.ema_count[k] + (1.0 - g) * batch_count[k];
            if self.ema_count[k] > EMA_COUNT_EPS {
                let inv = 1.0 / self.ema_count[k];
                let sum = self.ema_sum.row(k).to_vec();
                for (t, m) in self.tokens.row_mut(k).iter_mut().zip(sum) {
                    *t = m * inv;
                }
            }
        }
        Ok(())
    }
}

/// Per-iteration K-means objective values (total squared distance to the
/// nearest center) of the winning restart.
#[derive(Debug, Clone)]
pub struct KmeansTrace {
    pub objectives: Vec<f64>,
}

/// One k-means++-seeded Lloyd run; returns the centers and the per-iteration
/// objective trace.
fn lloyd(embeddings: &Matrix, s: usize, max_iters: usize, seed: u64) -> (Matrix, Vec<f64>) {
    let n = embeddings.rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_seed(embeddings, s, &mut rng);

    let mut assignment = vec![usize::MAX; n];
    let mut objectives = Vec::new();
    for _ in 0..max_iters.max(1) {
        // assignment step
        let mut changed = false;
        let mut objective = 0.0;
        for j in 0..n {
            let z = embeddings.row(j);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for k in 0..s {
                let d = sq_dist(z, centers.row(k));
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            objective += best_d;
            if assignment[j] != best {
                assignment[j] = best;
                changed = true;
            }
        }
        objectives.push(objective);
        if !changed {
            break;
        }
        // update step
        let mut sums = Matrix::zeros(s, embeddings.cols());
        let mut counts = vec![0usize; s];
        for j in 0..n {
            let k = assignment[j];
            counts[k] += 1;
            for (acc, &v) in sums.row_mut(k).iter_mut().zip(embeddings.row(j)) {
                *acc += v;
            }
        }
        for k in 0..s {
            if counts[k] > 0 {
                let inv = 1.0 / counts[k] as f64;
                let row = sums.row(k).to_vec();
                for (t, v) in centers.row_mut(k).iter_mut().zip(row) {
                    *t = v * inv;
                }
            } else {
                // re-seed the empty center at the farthest point
                let far = farthest_point(embeddings, &assignment, &centers);
                centers.row_mut(k).copy_from_slice(embeddings.row(far));
            }
        }
    }
    (centers, objectives)
}

fn plus_plus_seed(embeddings: &Matrix, s: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = embeddings.rows();
    let mut centers = Matrix::zeros(s, embeddings.cols());
    let first = rng.gen_range(0..n);
    centers.row_mut(0).copy_from_slice(embeddings.row(first));

    // distance to nearest chosen center so far
    let mut d2: Vec<f64> = (0..n)
        .map(|j| sq_dist(embeddings.row(j), centers.row(0)))
        .collect();
    for c in 1..s {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            rng.gen_range(0..n)
        } else {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = n - 1;
            for (j, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = j;
                    break;
                }
            }
            chosen
        };
        centers.row_mut(c).copy_from_slice(embeddings.row(pick));
        for j in 0..n {
            let d = sq_dist(embeddings.row(j), centers.row(c));
            if d < d2[j] {
                d2[j] = d;
            }
        }
    }
    centers
}

fn farthest_point(embeddings: &Matrix, assignment: &[usize], centers: &Matrix) -> usize {
    let mut far = 0usize;
    let mut far_d = -1.0;
    for j in 0..embeddings.rows() {
        let d = sq_dist(embeddings.row(j), centers.row(assignment[j]));
        if d > far_d {
            far_d = d;
            far = j;
        }
    }
    far
}

/// exp of the entropy of token usage frequencies; S under uniform usage,
/// 1 under total collapse.
pub fn perplexity(assignment: &Assignment, size: usize) -> Result<f64> {
    if assignment.is_empty() {
        return Err(VqcError::Usage("perplexity of an empty assignment".into()));
    }
    let hist = usage_histogram(assignment, size);
    Ok(perplexity_from_histogram(&hist))
}

/// Perplexity from raw usage counts, with 0 * ln 0 = 0.
pub fn perplexity_from_histogram(hist: &[u64]) -> f64 {
    let n: u64 = hist.iter().sum();
    if n == 0 {
        return 1.0;
    }
    let n = n as f64;
    let mut entropy = 0.0;
    for &c in hist {
        if c > 0 {
            let p = c as f64 / n;
            entropy -= p * p.ln();
        }
    }
    entropy.exp()
}

/// Usage counts per token; sums to the assignment length.
pub fn usage_histogram(assignment: &Assignment, size: usize) -> Vec<u64> {
    let mut hist = vec![0u64; size];
    for &k in &assignment.0 {
        hist[k] += 1;
    }
    hist
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_matrix(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-2.0..2.0)).collect())
    }

    fn init_with_tokens(tokens: Matrix, gamma: f64) -> Codebook {
        let s = tokens.rows();
        let ema_sum = tokens.clone();
        Codebook::from_state(tokens, ema_sum, vec![1.0; s], gamma, true)
    }

    #[test]
    fn quantize_picks_nearest() {
        let cb = init_with_tokens(Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0]]), 0.9);
        let (a, q) = cb.quantize(&Matrix::from_rows(&[vec![0.2, 0.1]])).unwrap();
        assert_eq!(a.0, vec![0]);
        assert_eq!(q.row(0), &[0.0, 0.0]);
    }

    #[test]
    fn quantize_exact_token_hit() {
        let cb = init_with_tokens(Matrix::from_rows(&[vec![3.0], vec![-1.0], vec![7.0]]), 0.9);
        let (a, q) = cb.quantize(&Matrix::from_rows(&[vec![7.0]])).unwrap();
        assert_eq!(a.0, vec![2]);
        assert_eq!(q.get(0, 0), 7.0);
    }

    #[test]
    fn quantize_tie_breaks_to_lowest_index() {
        let cb = init_with_tokens(Matrix::from_rows(&[vec![1.0], vec![-1.0]]), 0.9);
        let (a, _) = cb.quantize(&Matrix::from_rows(&[vec![0.0]])).unwrap();
        assert_eq!(a.0, vec![0]);
    }

    #[test]
    fn quantize_uninitialized_is_usage_error() {
        let cb = Codebook::new(4, 2, 0.9).unwrap();
        assert!(matches!(
            cb.quantize(&Matrix::zeros(1, 2)),
            Err(VqcError::Usage(_))
        ));
    }

    #[test]
    fn quantize_matches_brute_force_oracle() {
        let mut r = rng(21);
        let tokens = random_matrix(64, 3, &mut r);
        let cb = init_with_tokens(tokens.clone(), 0.9);
        let z = random_matrix(256, 3, &mut r);
        let (a, q) = cb.quantize(&z).unwrap();
        for j in 0..z.rows() {
            // exhaustive brute force with explicit tie handling
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for k in 0..64 {
                let d = sq_dist(z.row(j), tokens.row(k));
                if d < best_d {
                    best_d = d;
                    best = k;
                }
            }
            assert_eq!(a.0[j], best);
            assert_eq!(q.row(j), tokens.row(best));
        }
    }

    #[test]
    fn kmeans_single_center_is_global_mean() {
        let mut r = rng(4);
        let z = random_matrix(50, 2, &mut r);
        let mut cb = Codebook::new(1, 2, 0.9).unwrap();
        cb.kmeans_init(&z, 50, 0).unwrap();
        for c in 0..2 {
            let mean: f64 = (0..50).map(|j| z.get(j, c)).sum::<f64>() / 50.0;
            assert!((cb.tokens().get(0, c) - mean).abs() < 1e-9);
        }
    }

    #[test]
    fn kmeans_two_separated_clouds() {
        let mut r = rng(5);
        let mut rows = Vec::new();
        for _ in 0..40 {
            rows.push(vec![10.0 + r.gen_range(-0.5..0.5), 10.0 + r.gen_range(-0.5..0.5)]);
        }
        for _ in 0..40 {
            rows.push(vec![-10.0 + r.gen_range(-0.5..0.5), -10.0 + r.gen_range(-0.5..0.5)]);
        }
        let z = Matrix::from_rows(&rows);
        let mut cb = Codebook::new(2, 2, 0.9).unwrap();
        cb.kmeans_init(&z, 50, 3).unwrap();

        // per-cloud mean oracle
        let mean = |range: std::ops::Range<usize>, c: usize| {
            range.clone().map(|j| z.get(j, c)).sum::<f64>() / range.len() as f64
        };
        let mut found = [false, false];
        for k in 0..2 {
            let t = cb.tokens().row(k);
            if (t[0] - mean(0..40, 0)).abs() < 1e-9 && (t[1] - mean(0..40, 1)).abs() < 1e-9 {
                found[0] = true;
            }
            if (t[0] - mean(40..80, 0)).abs() < 1e-9 && (t[1] - mean(40..80, 1)).abs() < 1e-9 {
                found[1] = true;
            }
        }
        assert!(found[0] && found[1]);
        // accumulator seeding is consistent: M_k = t_k * L_k
        for k in 0..2 {
            assert!((cb.ema_count()[k] - 40.0).abs() < 1e-12);
            for c in 0..2 {
                assert!((cb.ema_sum().get(k, c) - cb.tokens().get(k, c) * 40.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn kmeans_every_point_its_own_center_reaches_zero() {
        let mut r = rng(6);
        let z = random_matrix(8, 2, &mut r);
        let mut cb = Codebook::new(8, 2, 0.9).unwrap();
        let trace = cb.kmeans_init(&z, 50, 1).unwrap();
        assert!(*trace.objectives.last().unwrap() < 1e-18);
    }

    #[test]
    fn kmeans_objective_non_increasing() {
        for seed in 0..20u64 {
            let mut r = rng(seed);
            let z = random_matrix(120, 3, &mut r);
            let mut cb = Codebook::new(10, 3, 0.9).unwrap();
            let trace = cb.kmeans_init(&z, 50, seed).unwrap();
            for w in trace.objectives.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "objective increased: {:?}", trace.objectives);
            }
        }
    }

    #[test]
    fn kmeans_too_few_points_is_config_error() {
        let mut cb = Codebook::new(4, 1, 0.9).unwrap();
        let z = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        assert!(matches!(cb.kmeans_init(&z, 10, 0), Err(VqcError::Config(_))));
    }

    #[test]
    fn ema_scalar_closed_form() {
        // gamma 0.9, M = 10, batch sum m = 20 -> M' = 11
        let mut cb = Codebook::from_state(
            Matrix::from_vec(1, 1, vec![10.0]),
            Matrix::from_vec(1, 1, vec![10.0]),
            vec![1.0],
            0.9,
            true,
        );
        let z = Matrix::from_vec(1, 1, vec![20.0]);
        cb.ema_update(&z, &Assignment(vec![0])).unwrap();
        assert!((cb.ema_sum().get(0, 0) - 11.0).abs() < 1e-12);
        assert!((cb.ema_count()[0] - 1.0).abs() < 1e-12);
        assert!((cb.tokens().get(0, 0) - 11.0).abs() < 1e-12);
    }

    #[test]
    fn ema_unassigned_token_decays_but_holds_position() {
        let mut cb = Codebook::from_state(
            Matrix::from_rows(&[vec![5.0], vec![1.0]]),
            Matrix::from_rows(&[vec![10.0], vec![2.0]]),
            vec![2.0, 2.0],
            0.9,
            true,
        );
        let z = Matrix::from_vec(1, 1, vec![5.0]);
        cb.ema_update(&z, &Assignment(vec![0])).unwrap();
        // token 1 got nothing: accumulators shrink by gamma, position fixed
        assert!((cb.ema_sum().get(1, 0) - 1.8).abs() < 1e-12);
        assert!((cb.ema_count()[1] - 1.8).abs() < 1e-12);
        assert!((cb.tokens().get(1, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ema_matches_naive_loop_oracle() {
        let mut r = rng(33);
        let s = 16;
        let d = 4;
        let tokens = random_matrix(s, d, &mut r);
        let m0 = random_matrix(s, d, &mut r);
        let l0: Vec<f64> = (0..s).map(|_| r.gen_range(0.5..3.0)).collect();
        let gamma = 0.9;
        let mut cb = Codebook::from_state(tokens.clone(), m0.clone(), l0.clone(), gamma, true);

        let z = random_matrix(100, d, &mut r);
        let assign: Vec<usize> = (0..100).map(|_| r.gen_range(0..s)).collect();
        cb.ema_update(&z, &Assignment(assign.clone())).unwrap();

        // naive recomputation
        for k in 0..s {
            let mut m_batch = vec![0.0; d];
            let mut l_batch = 0.0;
            for (j, &a) in assign.iter().enumerate() {
                if a == k {
                    l_batch += 1.0;
                    for c in 0..d {
                        m_batch[c] += z.get(j, c);
                    }
                }
            }
            let l_new = gamma * l0[k] + (1.0 - gamma) * l_batch;
            assert!((cb.ema_count()[k] - l_new).abs() < 1e-12);
            for c in 0..d {
                let m_new = gamma * m0.get(k, c) + (1.0 - gamma) * m_batch[c];
                assert!((cb.ema_sum().get(k, c) - m_new).abs() < 1e-12);
                assert!((cb.tokens().get(k, c) - m_new / l_new).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ema_fixed_point_converges_to_assigned_mean() {
        let mut r = rng(8);
        let z = random_matrix(30, 2, &mut r);
        let assign: Vec<usize> = (0..30).map(|j| j % 3).collect();
        let mut cb = Codebook::from_state(
            random_matrix(3, 2, &mut r),
            random_matrix(3, 2, &mut r),
            vec![1.0; 3],
            0.9,
            true,
        );
        for _ in 0..200 {
            cb.ema_update(&z, &Assignment(assign.clone())).unwrap();
        }
        for k in 0..3 {
            let members: Vec<usize> = (0..30).filter(|j| j % 3 == k).collect();
            for c in 0..2 {
                let mean: f64 =
                    members.iter().map(|&j| z.get(j, c)).sum::<f64>() / members.len() as f64;
                assert!((cb.tokens().get(k, c) - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn perplexity_closed_forms() {
        let one = Assignment(vec![3; 10]);
        assert!((perplexity(&one, 8).unwrap() - 1.0).abs() < 1e-12);

        let uniform = Assignment((0..32).map(|j| j % 8).collect());
        assert!((perplexity(&uniform, 8).unwrap() - 8.0).abs() < 1e-12);

        // counts {2,1,1} over S=4 -> exp(-(0.5 ln 0.5 + 2 * 0.25 ln 0.25))
        let mixed = Assignment(vec![0, 0, 1, 2]);
        let expected = -(0.5f64 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        assert!((perplexity(&mixed, 4).unwrap() - expected.exp()).abs() < 1e-12);
        assert!((perplexity(&mixed, 4).unwrap() - 2.8284).abs() < 1e-3);
    }

    #[test]
    fn perplexity_empty_is_usage_error() {
        assert!(matches!(perplexity(&Assignment(vec![]), 4), Err(VqcError::Usage(_))));
    }

    #[test]
    fn perplexity_bounds_property() {
        let mut r = rng(12);
        for _ in 0..50 {
            let s = r.gen_range(1..40usize);
            let n = r.gen_range(1..200usize);
            let a = Assignment((0..n).map(|_| r.gen_range(0..s)).collect());
            let p = perplexity(&a, s).unwrap();
            assert!(p >= 1.0 - 1e-12);
            assert!(p <= s.min(n) as f64 + 1e-9);
        }
    }

    #[test]
    fn usage_histogram_cases() {
        let a = Assignment(vec![0, 0, 0, 0]);
        assert_eq!(usage_histogram(&a, 2), vec![4, 0]);
        let rr = Assignment((0..8).map(|j| j % 4).collect());
        assert_eq!(usage_histogram(&rr, 4), vec![2, 2, 2, 2]);

        let mut r = rng(2);
        let a = Assignment((0..77).map(|_| r.gen_range(0..9usize)).collect());
        let hist = usage_histogram(&a, 9);
        // naive counting oracle
        for k in 0..9 {
            let c = a.0.iter().filter(|&&x| x == k).count() as u64;
            assert_eq!(hist[k], c);
        }
        assert_eq!(hist.iter().sum::<u64>(), 77);
    }

    #[test]
    fn quantizer_optimality_property() {
        let mut r = rng(77);
        let tokens = random_matrix(32, 4, &mut r);
        let cb = init_with_tokens(tokens.clone(), 0.9);
        let z = random_matrix(200, 4, &mut r);
        let (_, q) = cb.quantize(&z).unwrap();
        for j in 0..z.rows() {
            let chosen = sq_dist(z.row(j), q.row(j));
            for k in 0..tokens.rows() {
                assert!(chosen <= sq_dist(z.row(j), tokens.row(k)) + 1e-15);
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let mut r = rng(99);
        let tokens = random_matrix(8, 2, &mut r);
        let z = random_matrix(40, 2, &mut r);
        let perm: Vec<usize> = {
            let mut p: Vec<usize> = (0..40).collect();
            // Fisher-Yates
            for i in (1..40).rev() {
                let j = r.gen_range(0..=i);
                p.swap(i, j);
            }
            p
        };
        let zp = z.select_rows(&perm);

        let mut cb_a = init_with_tokens(tokens.clone(), 0.9);
        let (a, _) = cb_a.quantize(&z).unwrap();
        cb_a.ema_update(&z, &a).unwrap();

        let mut cb_b = init_with_tokens(tokens, 0.9);
        let (b, _) = cb_b.quantize(&zp).unwrap();
        cb_b.ema_update(&zp, &b).unwrap();

        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(b.0[i], a.0[src]);
        }
        for k in 0..8 {
            for c in 0..2 {
                assert!((cb_a.tokens().get(k, c) - cb_b.tokens().get(k, c)).abs() < 1e-12);
            }
        }
    }
}
