//! Quantitative collapse diagnostics: token allocation (tokens collapse),
//! mode coverage and out-of-distribution reconstructions (embeddings
//! collapse), plus overall usage and reconstruction metrics.

use crate::codebook::{perplexity_from_histogram, Assignment};
use crate::error::Result;
use crate::numcore::{mse, sq_dist, Matrix};
use crate::synthdata::GaussianMixtureDataset;
use crate::vqvae::VqVae;

/// Coverage tolerance in cluster stds.
pub const DEFAULT_COVERAGE_EPSILON: f64 = 3.0;
/// OOD threshold in cluster stds.
pub const DEFAULT_OOD_THRESHOLD: f64 = 4.0;

/// Per-experiment collapse diagnostics on a held-out split.
#[derive(Debug, Clone)]
pub struct CollapseReport {
    pub codebook_perplexity: f64,
    pub usage_histogram: Vec<u64>,
    /// Sample-chunk counts per (ground-truth cluster, token).
    pub allocation_per_cluster: Vec<Vec<u64>>,
    pub allocation_entropy_ratio: f64,
    pub mode_coverage: f64,
    pub ood_fraction: f64,
    pub test_mse: f64,
    pub dead_token_fraction: f64,
}

/// Allocation counts and the distinct-token entropy ratio from raw labels and
/// assignments. `labels` carries one ground-truth cluster per assignment row
/// (samples with several chunks repeat their label).
pub fn allocation_from_assignments(
    labels: &[usize],
    assignment: &Assignment,
    s: usize,
    n_clusters: usize,
) -> (Vec<Vec<u64>>, f64) {
    assert_eq!(labels.len(), assignment.len());
    let mut per_cluster = vec![vec![0u64; s]; n_clusters];
    for (&label, &token) in labels.iter().zip(&assignment.0) {
        per_cluster[label][token] += 1;
    }
    let distinct: Vec<f64> = per_cluster
        .iter()
        .map(|row| row.iter().filter(|&&c| c > 0).count() as f64)
        .collect();
    (per_cluster, distinct_entropy_ratio(&distinct))
}

/// entropy of the normalized distinct-token counts over ln(n_clusters);
/// 1 means perfectly proportional allocation across clusters.
fn distinct_entropy_ratio(distinct: &[f64]) -> f64 {
    let n_clusters = distinct.len();
    if n_clusters <= 1 {
        return 1.0;
    }
    let total: f64 = distinct.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut entropy = 0.0;
    for &d in distinct {
        if d > 0.0 {
            let p = d / total;
            entropy -= p * p.ln();
        }
    }
    entropy / (n_clusters as f64).ln()
}

/// Fraction of cluster means that have at least one decoded point within
/// `epsilon` stds (distances in unscaled generator coordinates).
pub fn coverage_from_points(
    decoded_unscaled: &Matrix,
    means: &Matrix,
    std: f64,
    epsilon: f64,
) -> f64 {
    let n_clusters = means.rows();
    if n_clusters == 0 {
        return 0.0;
    }
    let mut covered = 0usize;
    for k in 0..n_clusters {
        let hit = (0..decoded_unscaled.rows()).any(|j| {
            sq_dist(decoded_unscaled.row(j), means.row(k)).sqrt() / std <= epsilon
        });
        if hit {
            covered += 1;
        }
    }
    covered as f64 / n_clusters as f64
}

/// Fraction of points whose distance to the NEAREST cluster mean exceeds
/// `threshold` stds.
pub fn ood_from_points(points_unscaled: &Matrix, means: &Matrix, std: f64, threshold: f64) -> f64 {
    let n = points_unscaled.rows();
    if n == 0 {
        return 0.0;
    }
    let mut ood = 0usize;
    for j in 0..n {
        let nearest = (0..means.rows())
            .map(|k| sq_dist(points_unscaled.row(j), means.row(k)).sqrt())
            .fold(f64::INFINITY, f64::min);
        if nearest / std > threshold {
            ood += 1;
        }
    }
    ood as f64 / n as f64
}

/// Points every codebook entry decodes to, in unscaled generator coordinates.
/// With one chunk per sample each token is decoded directly; with several,
/// the distinct quantized latents observed on the given rows are decoded.
pub fn decoded_token_points(
    model: &VqVae,
    ds: &GaussianMixtureDataset,
    rows: &[usize],
) -> Result<Matrix> {
    let latents = if model.chunks_per_sample() == 1 {
        model.codebook.tokens().clone()
    } else {
        let batch = ds.samples.select_rows(rows);
        let fwd = model.forward_vq_inference(&batch)?;
        let mut seen: Vec<Vec<f64>> = fwd.quantized.iter_rows().map(|r| r.to_vec()).collect();
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        seen.dedup();
        Matrix::from_rows(&seen)
    };
    let decoded = model.decoder.forward_inference(&latents)?;
    Ok(ds.unscale(&decoded))
}

/// Token allocation diagnostics on the given rows.
pub fn token_allocation(
    model: &VqVae,
    ds: &GaussianMixtureDataset,
    rows: &[usize],
) -> Result<(Vec<u64>, Vec<Vec<u64>>, f64)> {
    let batch = ds.samples.select_rows(rows);
    let fwd = model.forward_vq_inference(&batch)?;
    let chunks = model.chunks_per_sample();
    let labels: Vec<usize> = rows
        .iter()
        .flat_map(|&r| std::iter::repeat(ds.labels[r]).take(chunks))
        .collect();
    let s = model.codebook.size();
    let (per_cluster, ratio) =
        allocation_from_assignments(&labels, &fwd.assignment, s, ds.spec.n_clusters);
    let hist = crate::codebook::usage_histogram(&fwd.assignment, s);
    Ok((hist, per_cluster, ratio))
}

/// Mode coverage at `epsilon` stds on the given rows.
pub fn mode_coverage(
    model: &VqVae,
    ds: &GaussianMixtureDataset,
    rows: &[usize],
    epsilon: f64,
) -> Result<f64> {
    let decoded = decoded_token_points(model, ds, rows)?;
    Ok(coverage_from_points(&decoded, &ds.spec.cluster_means, ds.spec.cluster_std, epsilon))
}

/// OOD reconstruction fraction at `threshold` stds on the given rows.
pub fn ood_fraction(
    model: &VqVae,
    ds: &GaussianMixtureDataset,
    rows: &[usize],
    threshold: f64,
) -> Result<f64> {
    let batch = ds.samples.select_rows(rows);
    let fwd = model.forward_vq_inference(&batch)?;
    let recon = ds.unscale(&fwd.reconstruction);
    Ok(ood_from_points(&recon, &ds.spec.cluster_means, ds.spec.cluster_std, threshold))
}

/// Full collapse report on the given (held-out) rows, using the default
/// coverage epsilon and OOD threshold.
pub fn evaluate(model: &VqVae, ds: &GaussianMixtureDataset, rows: &[usize]) -> Result<CollapseReport> {
    let batch = ds.samples.select_rows(rows);
    let fwd = model.forward_vq_inference(&batch)?;
    let s = model.codebook.size();
    let hist = crate::codebook::usage_histogram(&fwd.assignment, s);
    let chunks = model.chunks_per_sample();
    let labels: Vec<usize> = rows
        .iter()
        .flat_map(|&r| std::iter::repeat(ds.labels[r]).take(chunks))
        .collect();
    let (per_cluster, ratio) =
        allocation_from_assignments(&labels, &fwd.assignment, s, ds.spec.n_clusters);
    let recon_unscaled = ds.unscale(&fwd.reconstruction);
    let dead = hist.iter().filter(|&&c| c == 0).count() as f64 / s as f64;
    Ok(CollapseReport {
        codebook_perplexity: perplexity_from_histogram(&hist),
        usage_histogram: hist,
        allocation_per_cluster: per_cluster,
        allocation_entropy_ratio: ratio,
        mode_coverage: mode_coverage(model, ds, rows, DEFAULT_COVERAGE_EPSILON)?,
        ood_fraction: ood_from_points(
            &recon_unscaled,
            &ds.spec.cluster_means,
            ds.spec.cluster_std,
            DEFAULT_OOD_THRESHOLD,
        ),
        test_mse: mse(&batch, &fwd.reconstruction)?,
        dead_token_fraction: dead,
    })
}
