use rand::Rng;

use crate::error::{Result, VqcError};
use crate::numcore::matrix::Matrix;

/// AdamW hyperparameters; everything except the learning rate defaults to
/// the standard values.
#[derive(Debug, Clone, Copy)]
pub struct AdamwConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamwConfig {
    fn default() -> Self {
        AdamwConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One dense layer: y = x W^T + b, with gradient and AdamW moment buffers.
#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub(crate) weight: Matrix, // out_dim x in_dim
    pub(crate) bias: Vec<f64>,
    pub(crate) grad_weight: Matrix,
    pub(crate) grad_bias: Vec<f64>,
    pub(crate) m_weight: Matrix,
    pub(crate) v_weight: Matrix,
    pub(crate) m_bias: Vec<f64>,
    pub(crate) v_bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        // Kaiming-style uniform fan-in init.
        let w_bound = (6.0 / in_dim as f64).sqrt();
        let b_bound = 1.0 / (in_dim as f64).sqrt();
        let mut weight = Matrix::zeros(out_dim, in_dim);
        for v in weight.as_mut_slice() {
            *v = rng.gen_range(-w_bound..w_bound);
        }
        let bias = (0..out_dim).map(|_| rng.gen_range(-b_bound..b_bound)).collect();
        LinearLayer::from_params(weight, bias)
    }

    /// Build a layer around given parameters with fresh grad/moment buffers.
    pub fn from_params(weight: Matrix, bias: Vec<f64>) -> Self {
        let (out_dim, in_dim) = (weight.rows(), weight.cols());
        assert_eq!(bias.len(), out_dim);
        LinearLayer {
            weight,
            bias,
            grad_weight: Matrix::zeros(out_dim, in_dim),
            grad_bias: vec![0.0; out_dim],
            m_weight: Matrix::zeros(out_dim, in_dim),
            v_weight: Matrix::zeros(out_dim, in_dim),
            m_bias: vec![0.0; out_dim],
            v_bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn grad_weight(&self) -> &Matrix {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &[f64] {
        &self.grad_bias
    }

    fn affine(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul_transpose(&self.weight);
        for r in 0..z.rows() {
            let row = z.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        z
    }
}

struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    layer_inputs: Vec<Matrix>,
    /// Pre-activation output of each layer.
    pre_acts: Vec<Matrix>,
}

/// Feedforward network: ReLU between layers, identity after the last.
pub struct Mlp {
    layers: Vec<LinearLayer>,
    cache: Option<ForwardCache>,
    step: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Mlp {
            layers: self.layers.clone(),
            cache: None,
            step: self.step,
        }
    }
}

impl Mlp {
    /// `dims` chains layer sizes: `[in, h1, ..., out]`.
    pub fn new(dims: &[usize], rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "need at least one layer");
        let layers = dims
            .windows(2)
            .map(|w| LinearLayer::new(w[0], w[1], rng))
            .collect();
        Mlp { layers, cache: None, step: 0 }
    }

    pub fn from_layers(layers: Vec<LinearLayer>, step: u64) -> Self {
        for w in layers.windows(2) {
            assert_eq!(w[0].out_dim(), w[1].in_dim(), "layer dims must chain");
        }
        Mlp { layers, cache: None, step }
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [LinearLayer] {
        &mut self.layers
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Forward pass; caches activations for a subsequent backward call.
    pub fn forward(&mut self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.in_dim() {
            return Err(VqcError::Config(format!(
                "mlp forward: input has {} cols, layer expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre_acts = Vec::with_capacity(n_layers);
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&x);
            layer_inputs.push(x);
            let next = if i + 1 < n_layers {
                let mut a = z.clone();
                for v in a.as_mut_slice() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
                a
            } else {
                z.clone()
            };
            pre_acts.push(z);
            x = next;
        }
        self.cache = Some(ForwardCache { layer_inputs, pre_acts });
        Ok(x)
    }

    /// Forward pass without touching the backward cache.
    pub fn forward_inference(&self, batch: &Matrix) -> Result<Matrix> {
        if batch.cols() != self.in_dim() {
            return Err(VqcError::Config(format!(
                "mlp forward: input has {} cols, layer expects {}",
                batch.cols(),
                self.in_dim()
            )));
        }
        let n_layers = self.layers.len();
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.affine(&x);
            if i + 1 < n_layers {
                for v in z.as_mut_slice() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
            x = z;
        }
        Ok(x)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the input batch. Requires a prior matching forward pass.
    pub fn backward(&mut self, grad_output: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| VqcError::Usage("mlp backward called without a prior forward".into()))?;
        if grad_output.rows() != cache.layer_inputs[0].rows()
            || grad_output.cols() != self.out_dim()
        {
            return Err(VqcError::Usage(format!(
                "mlp backward: grad shape {}x{} does not match forward output",
                grad_output.rows(),
                grad_output.cols()
            )));
        }
        let mut d_z = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let input = &cache.layer_inputs[i];
            // grad_weight += dZ^T X; grad_bias += column sums of dZ
            let gw = d_z.transpose_matmul(input);
            let layer = &mut self.layers[i];
            for (a, b) in layer.grad_weight.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                *a += b;
            }
            for r in 0..d_z.rows() {
                for (gb, &v) in layer.grad_bias.iter_mut().zip(d_z.row(r)) {
                    *gb += v;
                }
            }
            let mut d_x = d_z.matmul(&layer.weight);
            if i > 0 {
                // ReLU subgradient at exactly 0 is 0.
                let pre = &cache.pre_acts[i - 1];
                for (g, &z) in d_x.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            d_z = d_x;
        }
        Ok(d_z)
    }

    pub fn zero_grads(&mut self) {
        for layer in &mut self.layers {
            layer.grad_weight.as_mut_slice().fill(0.0);
            layer.grad_bias.fill(0.0);
        }
    }

    /// Decoupled-weight-decay Adam step over all parameters; zeroes the
    /// gradient buffers and increments the step counter.
    pub fn adamw_step(&mut self, cfg: &AdamwConfig) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for layer in &mut self.layers {
            adamw_update(
                layer.weight.as_mut_slice(),
                layer.grad_weight.as_slice(),
                layer.m_weight.as_mut_slice(),
                layer.v_weight.as_mut_slice(),
                cfg,
                bc1,
                bc2,
            );
            adamw_update(
                &mut layer.bias,
                &layer.grad_bias.clone(),
                &mut layer.m_bias,
                &mut layer.v_bias,
                cfg,
                bc1,
                bc2,
            );
            layer.grad_weight.as_mut_slice().fill(0.0);
            layer.grad_bias.fill(0.0);
        }
    }
}

fn adamw_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    cfg: &AdamwConfig,
    bc1: f64,
    bc2: f64,
) {
    for i in 0..params.len() {
        params[i] -= cfg.lr * cfg.weight_decay * params[i];
        let g = grads[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}
