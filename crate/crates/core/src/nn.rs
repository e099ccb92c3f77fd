//! Dense ReLU networks with exact reverse-mode gradients, the AdamW
//! optimizer, a cosine learning-rate schedule, and sinusoidal time
//! embeddings.
//!
//! Layers are affine maps stored one output unit per row (`out_dim x in_dim`,
//! row-major) with ReLU after every layer except the last; the output layer
//! is identity. Gradients are computed by hand-written backpropagation with
//! the ReLU subgradient fixed to 0 at exactly 0, and can be cross-checked
//! against [`numeric_gradient`], which touches only the forward pass.


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nn, matmul_nt, matmul_tn, Matrix};
use crate::rng::{chacha, uniform};
use crate::scalar::Scalar;

/// Multi-layer perceptron. `layer_dims = [in, h_1, ..., h_L, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet<F> {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix<F>>,
    biases: Vec<Vec<F>>,
}

/// Per-parameter values shaped like a network: one block per layer.
/// Used for gradients and for the optimizer's moment buffers.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub weights: Vec<Matrix<F>>,
    pub biases: Vec<Vec<F>>,
}

/// Activations recorded by [`MlpNet::forward_trace`]: `layers[0]` is the
/// input batch, `layers[l]` the post-ReLU output of layer `l`, and the last
/// entry the identity output.
pub struct Trace<F> {
    layers: Vec<Matrix<F>>,
}

impl<F: Scalar> Trace<F> {
    /// Network output for the traced batch.
    pub fn output(&self) -> &Matrix<F> {
        self.layers.last().expect("trace has at least the input")
    }
}

impl<F: Scalar> MlpNet<F> {
    /// He-uniform initialization: weights uniform in
    /// `[-sqrt(6/fan_in), sqrt(6/fan_in)]`, biases zero.
    pub fn he_uniform(layer_dims: &[usize], seed: u64) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid(format!(
                "network needs at least input and output dims, got {layer_dims:?}"
            )));
        }
        if layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero-width layer in {layer_dims:?}")));
        }
        let mut rng = chacha(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = F::from_f64((6.0 / fan_in as f64).sqrt());
            let data = (0..fan_in * fan_out)
                .map(|_| uniform(&mut rng, -bound, bound))
                .collect();
            weights.push(Matrix::from_flat(fan_out, fan_in, data));
            biases.push(vec![F::zero(); fan_out]);
        }
        Ok(MlpNet {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds from explicit parameter blocks (checkpoint load).
    pub fn from_parts(
        layer_dims: Vec<usize>,
        weights: Vec<Matrix<F>>,
        biases: Vec<Vec<F>>,
    ) -> Result<Self> {
        if layer_dims.len() < 2 {
            return Err(Error::invalid("layer_dims too short".to_string()));
        }
        let n_layers = layer_dims.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::shape("layer count", n_layers, weights.len()));
        }
        for (l, w) in weights.iter().enumerate() {
            if w.rows() != layer_dims[l + 1] {
                return Err(Error::shape(format!("weight block {l} rows"), layer_dims[l + 1], w.rows()));
            }
            if w.cols() != layer_dims[l] {
                return Err(Error::shape(format!("weight block {l} cols"), layer_dims[l], w.cols()));
            }
            if biases[l].len() != layer_dims[l + 1] {
                return Err(Error::shape(
                    format!("bias block {l}"),
                    layer_dims[l + 1],
                    biases[l].len(),
                ));
            }
        }
        Ok(MlpNet {
            layer_dims,
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn weights(&self) -> &[Matrix<F>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<F>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// Forward pass for a batch (one sample per row).
    pub fn forward_batch(&self, input: &Matrix<F>) -> Matrix<F> {
        self.forward_trace(input).layers.pop().unwrap()
    }

    /// Forward pass for one sample.
    pub fn forward(&self, input: &[F]) -> Vec<F> {
        assert_eq!(
            input.len(),
            self.input_dim(),
            "forward: input dim {} does not match network input {}",
            input.len(),
            self.input_dim()
        );
        let batch = Matrix::from_flat(1, input.len(), input.to_vec());
        self.forward_batch(&batch).row(0).to_vec()
    }

    /// Forward pass that records every activation for backpropagation.
    pub fn forward_trace(&self, input: &Matrix<F>) -> Trace<F> {
        assert_eq!(
            input.cols(),
            self.input_dim(),
            "forward_trace: input dim {} does not match network input {}",
            input.cols(),
            self.input_dim()
        );
        let n_layers = self.n_layers();
        let mut layers = Vec::with_capacity(n_layers + 1);
        layers.push(input.clone());
        for l in 0..n_layers {
            let mut z = matmul_nt(layers.last().unwrap(), &self.weights[l]);
            let bias = &self.biases[l];
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for (zi, bi) in row.iter_mut().zip(bias) {
                    *zi += *bi;
                }
            }
            if l + 1 < n_layers {
                for zi in z.data_mut() {
                    if *zi <= F::zero() {
                        *zi = F::zero();
                    }
                }
            }
            layers.push(z);
        }
        Trace { layers }
    }

    /// Exact reverse-mode gradients for the traced batch.
    ///
    /// `upstream` is the loss gradient at the output (`batch x out_dim`).
    /// Returns parameter gradients and the gradient with respect to the
    /// input batch. The ReLU subgradient at exactly 0 is 0.
    pub fn backward(&self, trace: &Trace<F>, upstream: &Matrix<F>) -> (Gradients<F>, Matrix<F>) {
        let n_layers = self.n_layers();
        assert_eq!(
            upstream.cols(),
            self.output_dim(),
            "backward: upstream dim {} does not match output {}",
            upstream.cols(),
            self.output_dim()
        );
        assert_eq!(
            upstream.rows(),
            trace.layers[0].rows(),
            "backward: upstream batch {} does not match trace {}",
            upstream.rows(),
            trace.layers[0].rows()
        );
        let mut grads = Gradients::zeros_like(self);
        let mut g = upstream.clone();
        for l in (0..n_layers).rev() {
            grads.weights[l] = matmul_tn(&g, &trace.layers[l]);
            let db = &mut grads.biases[l];
            for r in 0..g.rows() {
                for (d, gi) in db.iter_mut().zip(g.row(r)) {
                    *d += *gi;
                }
            }
            g = matmul_nn(&g, &self.weights[l]);
            if l > 0 {
                // Post-ReLU activation is positive iff the unit was active.
                let act = &trace.layers[l];
                for r in 0..g.rows() {
                    let gr = g.row_mut(r);
                    for (gi, ai) in gr.iter_mut().zip(act.row(r)) {
                        if *ai <= F::zero() {
                            *gi = F::zero();
                        }
                    }
                }
            }
        }
        (grads, g)
    }

}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &MlpNet<F>) -> Self {
        Gradients {
            weights: net
                .layer_dims
                .windows(2)
                .map(|w| Matrix::zeros(w[1], w[0]))
                .collect(),
            biases: net.layer_dims[1..].iter().map(|&d| vec![F::zero(); d]).collect(),
        }
    }

    /// Adds `other` scaled by `c`.
    pub fn add_scaled(&mut self, other: &Gradients<F>, c: F) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x = c.mul_add(*y, *x);
            }
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = c.mul_add(*y, *x);
            }
        }
    }

    pub fn scale(&mut self, c: F) {
        for w in &mut self.weights {
            for x in w.data_mut() {
                *x *= c;
            }
        }
        for b in &mut self.biases {
            for x in b.iter_mut() {
                *x *= c;
            }
        }
    }

    /// Visits every parameter gradient as (layer index, value).
    pub fn for_each(&self, mut f: impl FnMut(usize, F)) {
        for l in 0..self.weights.len() {
            for w in self.weights[l].data() {
                f(l, *w);
            }
            for b in &self.biases[l] {
                f(l, *b);
            }
        }
    }
}

/// AdamW: Adam moments with bias correction plus decoupled weight decay.
/// Setting `weight_decay = 0` gives plain Adam.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub weight_decay: F,
    step: u64,
    m: Gradients<F>,
    v: Gradients<F>,
}

impl<F: Scalar> AdamW<F> {
    /// Standard coefficients: beta = (0.9, 0.999), eps = 1e-8.
    pub fn new(net: &MlpNet<F>, weight_decay: F) -> Self {
        AdamW {
            beta1: F::from_f64(0.9),
            beta2: F::from_f64(0.999),
            eps: F::from_f64(1e-8),
            weight_decay,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One optimizer step at learning rate `lr`:
    /// `theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta)`.
    ///
    /// Fails without touching the parameters if any gradient entry is not
    /// finite; the error names the offending layer.
    pub fn step(&mut self, net: &mut MlpNet<F>, grads: &Gradients<F>, lr: F) -> Result<()> {
        let mut bad_layer = None;
        grads.for_each(|l, g| {
            if !g.is_finite() && bad_layer.is_none() {
                bad_layer = Some(l);
            }
        });
        if let Some(l) = bad_layer {
            return Err(Error::non_finite(format!("gradient of layer {l}"), l));
        }

        self.step += 1;
        let t = self.step as i32;
        let one = F::one();
        let c1 = one / (one - self.beta1.powi(t));
        let c2 = one / (one - self.beta2.powi(t));
        let coeffs = (self.beta1, self.beta2, self.eps, self.weight_decay);

        fn update_block<F: Scalar>(
            theta: &mut [F],
            g: &[F],
            m: &mut [F],
            v: &mut [F],
            lr: F,
            (b1, b2, eps, wd): (F, F, F, F),
            (c1, c2): (F, F),
        ) {
            let one = F::one();
            for k in 0..theta.len() {
                m[k] = b1 * m[k] + (one - b1) * g[k];
                v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
                let m_hat = m[k] * c1;
                let v_hat = v[k] * c2;
                theta[k] = theta[k] - lr * (m_hat / (v_hat.sqrt() + eps) + wd * theta[k]);
            }
        }

        for l in 0..net.weights.len() {
            update_block(
                net.weights[l].data_mut(),
                grads.weights[l].data(),
                self.m.weights[l].data_mut(),
                self.v.weights[l].data_mut(),
                lr,
                coeffs,
                (c1, c2),
            );
            update_block(
                &mut net.biases[l],
                &grads.biases[l],
                &mut self.m.biases[l],
                &mut self.v.biases[l],
                lr,
                coeffs,
                (c1, c2),
            );
        }
        Ok(())
    }
}

/// Cosine schedule: `base * (1 + cos(pi * step / t_max)) / 2`.
///
/// Steps beyond `t_max` clamp to zero. `t_max = 0` is an error.
pub fn cosine_lr<F: Scalar>(base: F, step: u64, t_max: u64) -> Result<F> {
    if t_max == 0 {
        return Err(Error::invalid("cosine schedule needs t_max > 0".to_string()));
    }
    if step >= t_max {
        return Ok(F::zero());
    }
    let frac = step as f64 / t_max as f64;
    Ok(base * F::from_f64((1.0 + (std::f64::consts::PI * frac).cos()) / 2.0))
}

/// Time features for conditioning a network on `t`.
///
/// Sinusoidal form (even `dim`): for each frequency `f_i` the pair
/// `(sin(f_i t), cos(f_i t))`, concatenated in frequency order. `dim = 1`
/// is the identity feature: the raw time value itself. Wide sinusoidal
/// ladders can drown the spatial channels at small learning rates — see
/// the recipe presets for which form each experiment uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding<F> {
    dim: usize,
    frequencies: Vec<F>,
}

impl<F: Scalar> TimeEmbedding<F> {
    /// `dim = 1` passes the raw time value through unchanged. Even `dim >= 2`
    /// builds the geometric frequency ladder `f_i = 2*pi * 1000^(i / (dim/2 - 1))`
    /// for `i = 0..dim/2` (`dim = 2` uses the single frequency `2*pi`).
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 1 {
            return Ok(TimeEmbedding {
                dim: 1,
                frequencies: Vec::new(),
            });
        }
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::invalid(format!(
                "time embedding dim must be 1 (raw time) or even and >= 2, got {dim}"
            )));
        }
        let half = dim / 2;
        let two_pi = 2.0 * std::f64::consts::PI;
        let frequencies = (0..half)
            .map(|i| {
                let expo = if half == 1 {
                    0.0
                } else {
                    i as f64 / (half - 1) as f64
                };
                F::from_f64(two_pi * 1000f64.powf(expo))
            })
            .collect();
        Ok(TimeEmbedding { dim, frequencies })
    }

    /// Embedding with explicit frequencies (mainly for tests).
    pub fn with_frequencies(frequencies: Vec<F>) -> Self {
        TimeEmbedding {
            dim: 2 * frequencies.len(),
            frequencies,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies(&self) -> &[F] {
        &self.frequencies
    }

    pub fn embed(&self, t: F) -> Vec<F> {
        let mut out = vec![F::zero(); self.dim];
        self.embed_into(t, &mut out);
        out
    }

    /// Writes the embedding into `out` (length must equal `dim`).
    pub fn embed_into(&self, t: F, out: &mut [F]) {
        assert_eq!(out.len(), self.dim, "embedding buffer size");
        if self.frequencies.is_empty() {
            if let Some(slot) = out.first_mut() {
                *slot = t;
            }
            return;
        }
        for (i, f) in self.frequencies.iter().enumerate() {
            let (s, c) = (*f * t).sin_cos();
            out[2 * i] = s;
            out[2 * i + 1] = c;
        }
    }
}

/// Versioned checkpoint for one network plus its time embedding. Extra JSON
/// keys are ignored on load, so model-level wrappers can extend this format.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<F> {
    pub version: u32,
    pub layer_dims: Vec<usize>,
    /// One flat row-major block per layer (`out_dim x in_dim`).
    pub weights: Vec<Vec<F>>,
    pub biases: Vec<Vec<F>>,
    pub time_embedding: TimeEmbedding<F>,
}

/// Current checkpoint version.
pub const CHECKPOINT_VERSION: u32 = 1;

impl<F: Scalar> Checkpoint<F> {
    pub fn from_net(net: &MlpNet<F>, embedding: &TimeEmbedding<F>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            layer_dims: net.layer_dims.clone(),
            weights: net.weights.iter().map(|w| w.data().to_vec()).collect(),
            biases: net.biases.clone(),
            time_embedding: embedding.clone(),
        }
    }

    pub fn into_net(self) -> Result<(MlpNet<F>, TimeEmbedding<F>)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let dims = self.layer_dims;
        if dims.len() < 2 {
            return Err(Error::invalid("checkpoint layer_dims too short".to_string()));
        }
        let mut weights = Vec::new();
        for (l, flat) in self.weights.into_iter().enumerate() {
            let (rows, cols) = (dims[l + 1], dims[l]);
            if flat.len() != rows * cols {
                return Err(Error::shape(format!("checkpoint weights {l}"), rows * cols, flat.len()));
            }
            weights.push(Matrix::from_flat(rows, cols, flat));
        }
        let net = MlpNet::from_parts(dims, weights, self.biases)?;
        Ok((net, self.time_embedding))
    }
}

/// Central-difference gradient of an arbitrary scalar function of the
/// parameters: `(loss(theta + h e_k) - loss(theta - h e_k)) / (2h)` for
/// every parameter. Touches only the forward pass; used to verify
/// [`MlpNet::backward`].
pub fn numeric_gradient<F: Scalar>(
    net: &MlpNet<F>,
    h: F,
    loss: impl Fn(&MlpNet<F>) -> F,
) -> Gradients<F> {
    let mut grads = Gradients::zeros_like(net);
    let two_h = h + h;
    for l in 0..net.weights.len() {
        for k in 0..net.weights[l].data().len() {
            let mut up = net.clone();
            up.weights[l].data_mut()[k] += h;
            let mut down = net.clone();
            down.weights[l].data_mut()[k] -= h;
            grads.weights[l].data_mut()[k] = (loss(&up) - loss(&down)) / two_h;
        }
        for k in 0..net.biases[l].len() {
            let mut up = net.clone();
            up.biases[l][k] += h;
            let mut down = net.clone();
            down.biases[l][k] -= h;
            grads.biases[l][k] = (loss(&up) - loss(&down)) / two_h;
        }
    }
    grads
}
