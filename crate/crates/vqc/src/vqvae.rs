//! Encoder + codebook + decoder assembly: straight-through training objective,
//! autoencoder pretraining, VQ training, and the two-stage pipeline.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codebook::{perplexity_from_histogram, usage_histogram, Assignment, Codebook};
use crate::error::{Result, VqcError};
use crate::numcore::{mse, AdamwConfig, Matrix, Mlp};
use crate::synthdata::{batches_of, GaussianMixtureDataset};

pub const KMEANS_MAX_ITERS: usize = 50;

/// Training hyperparameters. Defaults follow the synthetic-data setup:
/// codebook 128, hidden 32, batch 256, beta 0.25, gamma 0.9, lr 0.001.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub gamma: f64,
    pub beta: f64,
    pub codebook_size: usize,
    pub hidden_dim: usize,
    /// Encoder hidden size; 0 means "same as hidden_dim". The capacity sweep
    /// shrinks this while the decoder keeps hidden_dim.
    pub encoder_hidden_dim: usize,
    /// Token dimension; 0 picks the per-data-dim default (1 for dims 2 and 3,
    /// 4 for dim 8). The encoder's latent width is
    /// token_dim * tokens_per_sample.
    pub token_dim: usize,
    /// How many tokens quantize one sample; the encoder output is split into
    /// this many contiguous token_dim chunks, each quantized independently.
    pub tokens_per_sample: usize,
    pub seed: u64,
    /// 0 = no autoencoder pretraining stage.
    pub pretrain_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 256,
            lr: 1e-3,
            gamma: 0.9,
            beta: 0.25,
            codebook_size: 128,
            hidden_dim: 32,
            encoder_hidden_dim: 0,
            token_dim: 0,
            tokens_per_sample: 1,
            seed: 0,
            pretrain_epochs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(VqcError::Config("batch_size must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(VqcError::Config("gamma must lie in (0,1)".into()));
        }
        if self.beta < 0.0 {
            return Err(VqcError::Config("beta must be >= 0".into()));
        }
        if self.tokens_per_sample == 0 {
            return Err(VqcError::Config("tokens_per_sample must be >= 1".into()));
        }
        Ok(())
    }

    pub fn encoder_hidden(&self) -> usize {
        if self.encoder_hidden_dim == 0 {
            self.hidden_dim
        } else {
            self.encoder_hidden_dim
        }
    }

    pub fn resolved_token_dim(&self, data_dim: usize) -> usize {
        if self.token_dim != 0 {
            self.token_dim
        } else {
            default_token_dim(data_dim)
        }
    }

    pub fn adamw(&self) -> AdamwConfig {
        AdamwConfig { lr: self.lr, ..AdamwConfig::default() }
    }
}

/// Token dimension used for each synthetic data dimension when the config
/// does not pin one: dims 2 and 3 use scalar tokens, dim 8 uses 4.
pub fn default_token_dim(data_dim: usize) -> usize {
    match data_dim {
        8 => 4,
        _ => 1,
    }
}

/// One per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub recon_loss: f64,
    pub commit_loss: f64,
    pub perplexity: f64,
    pub wall_secs: f64,
}

/// Per-epoch history; `init_perplexity` is the codebook usage perplexity of
/// the K-means assignment right after initialization.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub epochs: Vec<EpochRecord>,
    pub init_perplexity: Option<f64>,
}

impl TrainTrace {
    pub fn final_recon_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.recon_loss)
    }

    pub fn final_perplexity(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.perplexity)
    }
}

/// Encoder, decoder, and codebook with the commitment weight and token layout.
pub struct VqVae {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub codebook: Codebook,
    pub beta: f64,
    pub token_dim: usize,
}

/// Value results of one quantized forward pass.
pub struct VqForward {
    pub embeddings: Matrix,
    pub quantized: Matrix,
    pub reconstruction: Matrix,
    pub assignment: Assignment,
}

impl VqVae {
    /// Three-layer encoder and decoder around a fresh codebook. The latent
    /// width equals token_dim * tokens_per_sample (one token per sample by
    /// default), so the encoder bottleneck matches the token layout.
    pub fn new(data_dim: usize, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let token_dim = cfg.resolved_token_dim(data_dim);
        let latent_dim = token_dim * cfg.tokens_per_sample;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let eh = cfg.encoder_hidden();
        let dh = cfg.hidden_dim;
        let encoder = Mlp::new(&[data_dim, eh, eh, latent_dim], &mut rng);
        let decoder = Mlp::new(&[latent_dim, dh, dh, data_dim], &mut rng);
        let codebook = Codebook::new(cfg.codebook_size, token_dim, cfg.gamma)?;
        Ok(VqVae { encoder, decoder, codebook, beta: cfg.beta, token_dim })
    }

    pub fn from_parts(
        encoder: Mlp,
        decoder: Mlp,
        codebook: Codebook,
        beta: f64,
        token_dim: usize,
    ) -> Result<Self> {
        if encoder.out_dim() % token_dim != 0 {
            return Err(VqcError::Config("token_dim must divide encoder output dim".into()));
        }
        if codebook.dim() != token_dim {
            return Err(VqcError::Config("codebook dim must equal token_dim".into()));
        }
        if decoder.in_dim() != encoder.out_dim() {
            return Err(VqcError::Config("decoder input dim must match encoder output".into()));
        }
        Ok(VqVae { encoder, decoder, codebook, beta, token_dim })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn chunks_per_sample(&self) -> usize {
        self.latent_dim() / self.token_dim
    }

    /// Reinterpret an (N x latent) matrix as (N * chunks x token_dim) rows.
    /// Row-major layout makes this a pure reshape.
    pub fn chunk(&self, z: &Matrix) -> Matrix {
        let chunks = self.chunks_per_sample();
        Matrix::from_vec(z.rows() * chunks, self.token_dim, z.as_slice().to_vec())
    }

    fn unchunk(&self, q: &Matrix, n_rows: usize) -> Matrix {
        Matrix::from_vec(n_rows, self.latent_dim(), q.as_slice().to_vec())
    }

    /// Quantized forward pass with gradient caches armed (training path).
    pub fn forward_vq(&mut self, batch: &Matrix) -> Result<VqForward> {
        let z = self.encoder.forward(batch)?;
        let (assignment, q) = self.codebook.quantize(&self.chunk(&z))?;
        let zq = self.unchunk(&q, z.rows());
        let reconstruction = self.decoder.forward(&zq)?;
        Ok(VqForward { embeddings: z, quantized: zq, reconstruction, assignment })
    }

    /// Quantized forward pass without touching gradient caches (eval path).
    pub fn forward_vq_inference(&self, batch: &Matrix) -> Result<VqForward> {
        let z = self.encoder.forward_inference(batch)?;
        let (assignment, q) = self.codebook.quantize(&self.chunk(&z))?;
        let zq = self.unchunk(&q, z.rows());
        let reconstruction = self.decoder.forward_inference(&zq)?;
        Ok(VqForward { embeddings: z, quantized: zq, reconstruction, assignment })
    }

    /// Runs the quantized forward pass with gradient accumulation:
    /// the decoder gets the reconstruction gradient, the encoder gets the
    /// straight-through reconstruction gradient plus the beta-weighted
    /// commitment gradient, and the codebook gets nothing.
    pub fn loss_and_grads(&mut self, batch: &Matrix) -> Result<(f64, f64, VqForward)> {
        let fwd = self.forward_vq(batch)?;
        let recon_loss = mse(batch, &fwd.reconstruction)?;
        let commit_loss = mse(&fwd.embeddings, &fwd.quantized)?;

        let n_el = (batch.rows() * batch.cols()) as f64;
        let mut d_recon = Matrix::zeros(batch.rows(), batch.cols());
        for ((d, &xr), &x) in d_recon
            .as_mut_slice()
            .iter_mut()
            .zip(fwd.reconstruction.as_slice())
            .zip(batch.as_slice())
        {
            *d = 2.0 * (xr - x) / n_el;
        }
        // straight-through: the decoder's input gradient flows to the encoder
        // output as if quantization were the identity
        let d_zq = self.decoder.backward(&d_recon)?;
        let z_el = (fwd.embeddings.rows() * fwd.embeddings.cols()) as f64;
        let mut d_z = d_zq;
        for ((d, &z), &q) in d_z
            .as_mut_slice()
            .iter_mut()
            .zip(fwd.embeddings.as_slice())
            .zip(fwd.quantized.as_slice())
        {
            *d += self.beta * 2.0 * (z - q) / z_el;
        }
        self.encoder.backward(&d_z)?;
        Ok((recon_loss, commit_loss, fwd))
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9e3779b97f4a7c15) ^ (epoch as u64).wrapping_mul(0xd1b54a32d192ed03)
}

fn check_finite(loss: f64, what: &str) -> Result<()> {
    if !loss.is_finite() {
        return Err(VqcError::Divergence(format!("{what} loss is not finite ({loss})")));
    }
    Ok(())
}

/// Plain autoencoder training on reconstruction loss only (no quantization,
/// no commitment term).
pub fn train_autoencoder(
    encoder: &mut Mlp,
    decoder: &mut Mlp,
    ds: &GaussianMixtureDataset,
    rows: &[usize],
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    let adamw = cfg.adamw();
    let mut trace = TrainTrace::default();
    for epoch in 0..epochs {
        let start = Instant::now();
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch in batches_of(&ds.samples, rows, cfg.batch_size, epoch_seed(cfg.seed, epoch)) {
            let z = encoder.forward(&batch)?;
            let recon = decoder.forward(&z)?;
            let loss = mse(&batch, &recon)?;
            check_finite(loss, "autoencoder reconstruction")?;
            let n_el = (batch.rows() * batch.cols()) as f64;
            let mut d_recon = Matrix::zeros(batch.rows(), batch.cols());
            for ((d, &xr), &x) in d_recon
                .as_mut_slice()
                .iter_mut()
                .zip(recon.as_slice())
                .zip(batch.as_slice())
            {
                *d = 2.0 * (xr - x) / n_el;
            }
            let d_z = decoder.backward(&d_recon)?;
            encoder.backward(&d_z)?;
            decoder.adamw_step(&adamw);
            encoder.adamw_step(&adamw);
            loss_sum += loss;
            n_batches += 1;
        }
        trace.epochs.push(EpochRecord {
            recon_loss: loss_sum / n_batches.max(1) as f64,
            commit_loss: 0.0,
            perplexity: 0.0,
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }
    Ok(trace)
}

/// K-means initialization of the codebook over the full training split's
/// encoder outputs; returns the assignment perplexity right after init.
pub fn init_codebook_from_encoder(
    model: &mut VqVae,
    ds: &GaussianMixtureDataset,
    rows: &[usize],
    seed: u64,
) -> Result<f64> {
    let train = ds.samples.select_rows(rows);
    let z = model.encoder.forward_inference(&train)?;
    let chunked = model.chunk(&z);
    model.codebook.kmeans_init(&chunked, KMEANS_MAX_ITERS, seed)?;
    let (assignment, _) = model.codebook.quantize(&chunked)?;
    let hist = usage_histogram(&assignment, model.codebook.size());
    Ok(perplexity_from_histogram(&hist))
}

/// Full VQ training loop: per minibatch a straight-through gradient step on
/// encoder and decoder, then an EMA codebook update. Initializes the codebook
/// with K-means on the training split's encoder outputs when needed.
pub fn train_vqvae(
    model: &mut VqVae,
    ds: &GaussianMixtureDataset,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainTrace> {
    cfg.validate()?;
    let adamw = cfg.adamw();
    let mut trace = TrainTrace::default();
    if !model.codebook.is_initialized() {
        trace.init_perplexity = Some(init_codebook_from_encoder(model, ds, rows, cfg.seed)?);
    }
    let s = model.codebook.size();
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut recon_sum = 0.0;
        let mut commit_sum = 0.0;
        let mut n_batches = 0usize;
        let mut hist = vec![0u64; s];
        for batch in batches_of(&ds.samples, rows, cfg.batch_size, epoch_seed(cfg.seed, epoch)) {
            let (recon_loss, commit_loss, fwd) = model.loss_and_grads(&batch)?;
            check_finite(recon_loss + commit_loss, "vq training")?;
            model.encoder.adamw_step(&adamw);
            model.decoder.adamw_step(&adamw);
            let chunked = model.chunk(&fwd.embeddings);
            model.codebook.ema_update(&chunked, &fwd.assignment)?;
            for &k in &fwd.assignment.0 {
                hist[k] += 1;
            }
            recon_sum += recon_loss;
            commit_sum += commit_loss;
            n_batches += 1;
        }
        trace.epochs.push(EpochRecord {
            recon_loss: recon_sum / n_batches.max(1) as f64,
            commit_loss: commit_sum / n_batches.max(1) as f64,
            perplexity: perplexity_from_histogram(&hist),
            wall_secs: start.elapsed().as_secs_f64(),
        });
    }
    Ok(trace)
}

/// Two-stage pipeline: autoencoder pretraining (when configured), then VQ
/// training from the pretrained weights with K-means codebook initialization
/// on the pretrained encoder's outputs. With pretrain_epochs = 0 this
/// degenerates to plain VQ training from scratch (the baseline arm).
pub fn pretrain_then_finetune(
    ds: &GaussianMixtureDataset,
    rows: &[usize],
    cfg: &TrainConfig,
) -> Result<(VqVae, TrainTrace, TrainTrace)> {
    cfg.validate()?;
    let mut model = VqVae::new(ds.dim(), cfg)?;
    let mut ae_trace = TrainTrace::default();
    if cfg.pretrain_epochs > 0 {
        ae_trace = train_autoencoder(
            &mut model.encoder,
            &mut model.decoder,
            ds,
            rows,
            cfg.pretrain_epochs,
            cfg,
        )?;
    }
    let vq_trace = train_vqvae(&mut model, ds, rows, cfg)?;
    Ok((model, ae_trace, vq_trace))
}
