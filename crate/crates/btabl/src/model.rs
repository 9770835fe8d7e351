//! Temporal-attention bilinear layer: forward pass, log-softmax
//! negative-log-likelihood head, and a hand-derived backward pass that
//! returns *per-sample* parameter gradients (the scale-vector update of the
//! variational optimizer needs squared individual gradients, which summed
//! minibatch gradients cannot provide).
//!
//! Layer equations, for input `X` (D x T):
//!
//! ```text
//! X̄ = W1 X
//! E  = X̄ W
//! A  = row_softmax(E)
//! X̃ = λ (X̄ ⊙ A) + (1-λ) X̄
//! Y  = φ(X̃ W2 + B)
//! ```
//!
//! The flattened output feeds a log-softmax head; the loss is the negative
//! log-likelihood of the true class. A network is an optional stack of
//! plain bilinear layers (`Y = φ(W1 X W2 + B)`, relu) followed by one TABL
//! output layer; the default is the single TABL layer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{hadamard, matmul, row_softmax, Matrix, ShapeError};
use crate::lobdata::LobWindow;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("label {label} out of range [0,{classes})")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("batch must contain at least one sample")]
    EmptyBatch,
    #[error("window is unlabeled; training and loss need labels")]
    MissingLabel,
    #[error("parameter tensor {name} has shape {got_rows}x{got_cols}, expected {want_rows}x{want_cols}")]
    ParamShape { name: &'static str, got_rows: usize, got_cols: usize, want_rows: usize, want_cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    fn apply(&self, z: &Matrix) -> Matrix {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.map(|v| v.max(0.0)),
        }
    }

    /// Derivative evaluated at the pre-activation (relu subgradient 0 at 0).
    fn grad(&self, z: &Matrix) -> Matrix {
        match self {
            Activation::Identity => z.map(|_| 1.0),
            Activation::Relu => z.map(|v| if v > 0.0 { 1.0 } else { 0.0 }),
        }
    }
}

/// Geometry of one layer: D x T in, D' x T' out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TablShape {
    pub d_in: usize,
    pub t_in: usize,
    pub d_out: usize,
    pub t_out: usize,
    pub activation: Activation,
}

impl TablShape {
    pub fn new(d_in: usize, t_in: usize, d_out: usize, t_out: usize, activation: Activation) -> Self {
        assert!(d_in >= 1 && t_in >= 1 && d_out >= 1 && t_out >= 1, "dimensions must be >= 1");
        TablShape { d_in, t_in, d_out, t_out, activation }
    }

    /// Flattened parameter count: D'D + T^2 + TT' + D'T' + 1.
    pub fn param_len(&self) -> usize {
        self.d_out * self.d_in + self.t_in * self.t_in + self.t_in * self.t_out + self.d_out * self.t_out + 1
    }

    fn bilinear_param_len(&self) -> usize {
        self.d_out * self.d_in + self.t_in * self.t_out + self.d_out * self.t_out
    }
}

/// TABL layer parameters. `lambda` is stored unconstrained and clamped to
/// [0,1] inside the forward pass, so Gaussian posterior draws stay valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablParams {
    pub w1: Matrix,
    pub w: Matrix,
    pub w2: Matrix,
    pub b: Matrix,
    pub lambda: f64,
}

impl TablParams {
    pub fn zeros(shape: &TablShape) -> Self {
        TablParams {
            w1: Matrix::zeros(shape.d_out, shape.d_in),
            w: Matrix::zeros(shape.t_in, shape.t_in),
            w2: Matrix::zeros(shape.t_in, shape.t_out),
            b: Matrix::zeros(shape.d_out, shape.t_out),
            lambda: 0.5,
        }
    }

    pub fn lambda_clamped(&self) -> f64 {
        self.lambda.clamp(0.0, 1.0)
    }

    fn check(&self, shape: &TablShape) -> Result<(), ModelError> {
        check_dims("W1", &self.w1, shape.d_out, shape.d_in)?;
        check_dims("W", &self.w, shape.t_in, shape.t_in)?;
        check_dims("W2", &self.w2, shape.t_in, shape.t_out)?;
        check_dims("B", &self.b, shape.d_out, shape.t_out)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BilinearParams {
    pub w1: Matrix,
    pub w2: Matrix,
    pub b: Matrix,
}

fn check_dims(name: &'static str, m: &Matrix, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.shape() != (rows, cols) {
        return Err(ModelError::ParamShape {
            name,
            got_rows: m.rows(),
            got_cols: m.cols(),
            want_rows: rows,
            want_cols: cols,
        });
    }
    Ok(())
}

/// Network geometry: optional hidden bilinear layers (relu) feeding one
/// TABL output layer. Default is the bare TABL layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub d_in: usize,
    pub t_in: usize,
    /// (d_out, t_out) of each hidden bilinear layer, in order.
    pub hidden: Vec<(usize, usize)>,
    pub d_out: usize,
    pub t_out: usize,
    pub output_activation: Activation,
}

impl NetworkShape {
    pub fn single_tabl(d_in: usize, t_in: usize, d_out: usize, t_out: usize) -> Self {
        NetworkShape { d_in, t_in, hidden: Vec::new(), d_out, t_out, output_activation: Activation::Identity }
    }

    pub fn num_classes(&self) -> usize {
        self.d_out * self.t_out
    }

    /// Per-layer shapes, hidden layers first, output TABL last.
    pub fn layer_shapes(&self) -> Vec<TablShape> {
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        let (mut d, mut t) = (self.d_in, self.t_in);
        for &(dh, th) in &self.hidden {
            shapes.push(TablShape::new(d, t, dh, th, Activation::Relu));
            d = dh;
            t = th;
        }
        shapes.push(TablShape::new(d, t, self.d_out, self.t_out, self.output_activation));
        shapes
    }

    pub fn param_len(&self) -> usize {
        let shapes = self.layer_shapes();
        let hidden: usize = shapes[..shapes.len() - 1].iter().map(|s| s.bilinear_param_len()).sum();
        hidden + shapes[shapes.len() - 1].param_len()
    }

    /// Flat-vector indexes of connection weights (W1, W, W2 entries) across
    /// all layers; bias matrices and the mixing coefficient are excluded.
    /// These are the coordinates a dropout mask may zero.
    pub fn connection_indices(&self) -> Vec<usize> {
        let mut idx = Vec::new();
        let mut offset = 0;
        let shapes = self.layer_shapes();
        let last = shapes.len() - 1;
        for (li, s) in shapes.iter().enumerate() {
            let w1 = s.d_out * s.d_in;
            let w = s.t_in * s.t_in;
            let w2 = s.t_in * s.t_out;
            let b = s.d_out * s.t_out;
            if li == last {
                idx.extend(offset..offset + w1 + w + w2);
                offset += w1 + w + w2 + b + 1;
            } else {
                idx.extend(offset..offset + w1 + w2);
                offset += w1 + w2 + b;
            }
        }
        idx
    }
}

/// All trainable parameters, with a canonical flattening: layers in order,
/// each as W1 row-major, then W (TABL only), then W2, then B, then lambda
/// (TABL only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub hidden: Vec<BilinearParams>,
    pub output: TablParams,
}

impl NetworkParams {
    pub fn zeros(shape: &NetworkShape) -> Self {
        let shapes = shape.layer_shapes();
        let hidden = shapes[..shapes.len() - 1]
            .iter()
            .map(|s| BilinearParams {
                w1: Matrix::zeros(s.d_out, s.d_in),
                w2: Matrix::zeros(s.t_in, s.t_out),
                b: Matrix::zeros(s.d_out, s.t_out),
            })
            .collect();
        NetworkParams { hidden, output: TablParams::zeros(&shapes[shapes.len() - 1]) }
    }

    /// Glorot-style random init; lambda starts at 0.5.
    pub fn random_init(shape: &NetworkShape, rng: &mut impl rand::Rng) -> Self {
        use rand_distr::StandardNormal;
        let mut init = |rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let scale = (2.0 / (fan_in + fan_out) as f64).sqrt();
            Matrix::from_vec(
                rows,
                cols,
                (0..rows * cols).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect(),
            )
        };
        let shapes = shape.layer_shapes();
        let hidden = shapes[..shapes.len() - 1]
            .iter()
            .map(|s| BilinearParams {
                w1: init(s.d_out, s.d_in, s.d_in, s.d_out),
                w2: init(s.t_in, s.t_out, s.t_in, s.t_out),
                b: Matrix::zeros(s.d_out, s.t_out),
            })
            .collect();
        let s = shapes[shapes.len() - 1];
        let output = TablParams {
            w1: init(s.d_out, s.d_in, s.d_in, s.d_out),
            w: init(s.t_in, s.t_in, s.t_in, s.t_in),
            w2: init(s.t_in, s.t_out, s.t_in, s.t_out),
            b: Matrix::zeros(s.d_out, s.t_out),
            lambda: 0.5,
        };
        NetworkParams { hidden, output }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.hidden {
            out.extend_from_slice(l.w1.data());
            out.extend_from_slice(l.w2.data());
            out.extend_from_slice(l.b.data());
        }
        out.extend_from_slice(self.output.w1.data());
        out.extend_from_slice(self.output.w.data());
        out.extend_from_slice(self.output.w2.data());
        out.extend_from_slice(self.output.b.data());
        out.push(self.output.lambda);
        out
    }

    pub fn unflatten(shape: &NetworkShape, theta: &[f64]) -> NetworkParams {
        assert_eq!(theta.len(), shape.param_len(), "flat parameter vector has the wrong length");
        let shapes = shape.layer_shapes();
        let mut pos = 0;
        let mut take = |rows: usize, cols: usize| {
            let m = Matrix::from_vec(rows, cols, theta[pos..pos + rows * cols].to_vec());
            pos += rows * cols;
            m
        };
        let mut hidden = Vec::with_capacity(shapes.len() - 1);
        for s in &shapes[..shapes.len() - 1] {
            hidden.push(BilinearParams {
                w1: take(s.d_out, s.d_in),
                w2: take(s.t_in, s.t_out),
                b: take(s.d_out, s.t_out),
            });
        }
        let s = shapes[shapes.len() - 1];
        let output = TablParams {
            w1: take(s.d_out, s.d_in),
            w: take(s.t_in, s.t_in),
            w2: take(s.t_in, s.t_out),
            b: take(s.d_out, s.t_out),
            lambda: theta[theta.len() - 1],
        };
        NetworkParams { hidden, output }
    }
}

/// Intermediates of one TABL layer forward pass.
#[derive(Debug, Clone)]
pub struct TablCache {
    pub x: Matrix,
    pub x_bar: Matrix,
    pub e: Matrix,
    pub a: Matrix,
    pub x_tilde: Matrix,
    pub z: Matrix,
    pub y: Matrix,
    pub lambda_eff: f64,
    activation: Activation,
}

#[derive(Debug, Clone)]
pub struct BilinearCache {
    pub x: Matrix,
    pub u: Matrix,
    pub z: Matrix,
    pub y: Matrix,
    activation: Activation,
}

#[derive(Debug, Clone)]
pub enum LayerCache {
    Bilinear(BilinearCache),
    Tabl(TablCache),
}

/// Forward intermediates for a whole network plus the log-softmax head.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
    pub logits: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl ForwardCache {
    /// The output TABL layer's cache.
    pub fn tabl(&self) -> &TablCache {
        match self.layers.last().expect("network has at least one layer") {
            LayerCache::Tabl(c) => c,
            LayerCache::Bilinear(_) => unreachable!("output layer is always TABL"),
        }
    }
}

fn tabl_layer_forward(x: &Matrix, params: &TablParams, shape: &TablShape) -> Result<TablCache, ModelError> {
    params.check(shape)?;
    if x.shape() != (shape.d_in, shape.t_in) {
        return Err(ModelError::ParamShape {
            name: "X",
            got_rows: x.rows(),
            got_cols: x.cols(),
            want_rows: shape.d_in,
            want_cols: shape.t_in,
        });
    }
    let x_bar = matmul(&params.w1, x)?;
    let e = matmul(&x_bar, &params.w)?;
    let a = row_softmax(&e);
    let lambda = params.lambda_clamped();
    let attended = hadamard(&x_bar, &a)?;
    let x_tilde = attended.scale(lambda).add(&x_bar.scale(1.0 - lambda))?;
    let z = matmul(&x_tilde, &params.w2)?.add(&params.b)?;
    let y = shape.activation.apply(&z);
    Ok(TablCache { x: x.clone(), x_bar, e, a, x_tilde, z, y, lambda_eff: lambda, activation: shape.activation })
}

fn bilinear_layer_forward(
    x: &Matrix,
    params: &BilinearParams,
    shape: &TablShape,
) -> Result<BilinearCache, ModelError> {
    check_dims("W1", &params.w1, shape.d_out, shape.d_in)?;
    check_dims("W2", &params.w2, shape.t_in, shape.t_out)?;
    check_dims("B", &params.b, shape.d_out, shape.t_out)?;
    let u = matmul(&params.w1, x)?;
    let z = matmul(&u, &params.w2)?.add(&params.b)?;
    let y = shape.activation.apply(&z);
    Ok(BilinearCache { x: x.clone(), u, z, y, activation: shape.activation })
}

/// Log-softmax and negative log-likelihood of the true class.
/// `exp(log_probs)` sums to 1 for any finite logits.
pub fn log_softmax_nll(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), ModelError> {
    if label >= logits.len() {
        return Err(ModelError::LabelOutOfRange { label, classes: logits.len() });
    }
    let log_probs = log_softmax(logits);
    Ok((-log_probs[label], log_probs))
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Class probabilities from logits.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).iter().map(|lp| lp.exp()).collect()
}

/// Full network forward pass; logits are the flattened (row-major) output
/// of the TABL layer.
pub fn network_forward(
    x: &Matrix,
    params: &NetworkParams,
    shape: &NetworkShape,
) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    let shapes = shape.layer_shapes();
    assert_eq!(params.hidden.len(), shapes.len() - 1, "parameter/shape layer count mismatch");
    let mut layers = Vec::with_capacity(shapes.len());
    let mut cur = x.clone();
    for (l, s) in params.hidden.iter().zip(&shapes) {
        let cache = bilinear_layer_forward(&cur, l, s)?;
        cur = cache.y.clone();
        layers.push(LayerCache::Bilinear(cache));
    }
    let out_cache = tabl_layer_forward(&cur, &params.output, &shapes[shapes.len() - 1])?;
    let logits = out_cache.y.data().to_vec();
    layers.push(LayerCache::Tabl(out_cache));
    let log_probs = log_softmax(&logits);
    Ok((logits, ForwardCache { layers, logits, log_probs }))
}

/// Single-TABL forward pass with the log-softmax head (the default
/// architecture).
pub fn tabl_forward(
    x: &Matrix,
    params: &TablParams,
    shape: &TablShape,
) -> Result<(Vec<f64>, ForwardCache), ModelError> {
    let cache = tabl_layer_forward(x, params, shape)?;
    let logits = cache.y.data().to_vec();
    let log_probs = log_softmax(&logits);
    Ok((logits.clone(), ForwardCache { layers: vec![LayerCache::Tabl(cache)], logits, log_probs }))
}

struct TablGrads {
    w1: Matrix,
    w: Matrix,
    w2: Matrix,
    b: Matrix,
    lambda: f64,
}

/// Backward through one TABL layer given the upstream dL/dY.
/// Returns the parameter gradients and dL/dX for stacked layers.
fn tabl_layer_backward(cache: &TablCache, params: &TablParams, d_y: &Matrix) -> (TablGrads, Matrix) {
    let d_z = hadamard(d_y, &cache.activation.grad(&cache.z)).expect("dY shape");
    let d_b = d_z.clone();
    let d_w2 = matmul(&cache.x_tilde.transpose(), &d_z).expect("dW2 shape");
    let d_x_tilde = matmul(&d_z, &params.w2.transpose()).expect("dX~ shape");

    // dL/dλ = Σ dX̃ ⊙ (X̄⊙A − X̄); at a clamped boundary an outward
    // gradient is zeroed so descent cannot push λ further outside [0,1].
    let attended = hadamard(&cache.x_bar, &cache.a).expect("attended");
    let d_lambda_raw =
        hadamard(&d_x_tilde, &attended.sub(&cache.x_bar).expect("sub")).expect("dlambda").sum();
    let d_lambda = if params.lambda <= 0.0 {
        if d_lambda_raw > 0.0 {
            0.0
        } else {
            d_lambda_raw
        }
    } else if params.lambda >= 1.0 {
        if d_lambda_raw < 0.0 {
            0.0
        } else {
            d_lambda_raw
        }
    } else {
        d_lambda_raw
    };

    let lambda = cache.lambda_eff;
    // through the attention mask: dA = λ (dX̃ ⊙ X̄), then the softmax
    // Jacobian row-wise: dE_j = a_j (dA_j − Σ_k dA_k a_k)
    let d_a = hadamard(&d_x_tilde, &cache.x_bar).expect("dA").scale(lambda);
    let mut d_e = Matrix::zeros(cache.e.rows(), cache.e.cols());
    for r in 0..cache.e.rows() {
        let a_row = cache.a.row(r);
        let da_row = d_a.row(r);
        let dot: f64 = a_row.iter().zip(da_row).map(|(a, da)| a * da).sum();
        for c in 0..cache.e.cols() {
            d_e.set(r, c, a_row[c] * (da_row[c] - dot));
        }
    }

    // dX̄ collects the mixing path and the attention-energy path
    let d_x_bar_mix = hadamard(&d_x_tilde, &cache.a)
        .expect("mix")
        .scale(lambda)
        .add(&d_x_tilde.scale(1.0 - lambda))
        .expect("mix add");
    let d_x_bar = d_x_bar_mix.add(&matmul(&d_e, &params.w.transpose()).expect("dE W^T")).expect("dXbar");

    let d_w = matmul(&cache.x_bar.transpose(), &d_e).expect("dW");
    let d_w1 = matmul(&d_x_bar, &cache.x.transpose()).expect("dW1");
    let d_x = matmul(&params.w1.transpose(), &d_x_bar).expect("dX");
    (TablGrads { w1: d_w1, w: d_w, w2: d_w2, b: d_b, lambda: d_lambda }, d_x)
}

struct BilinearGrads {
    w1: Matrix,
    w2: Matrix,
    b: Matrix,
}

fn bilinear_layer_backward(
    cache: &BilinearCache,
    params: &BilinearParams,
    d_y: &Matrix,
) -> (BilinearGrads, Matrix) {
    let d_z = hadamard(d_y, &cache.activation.grad(&cache.z)).expect("dY shape");
    let d_b = d_z.clone();
    let d_w2 = matmul(&cache.u.transpose(), &d_z).expect("dW2");
    let d_u = matmul(&d_z, &params.w2.transpose()).expect("dU");
    let d_w1 = matmul(&d_u, &cache.x.transpose()).expect("dW1");
    let d_x = matmul(&params.w1.transpose(), &d_u).expect("dX");
    (BilinearGrads { w1: d_w1, w2: d_w2, b: d_b }, d_x)
}

/// Gradient of the per-sample NLL with respect to the flattened parameter
/// vector, evaluated at the forward pass recorded in `cache`.
pub fn network_backward_per_sample(
    cache: &ForwardCache,
    label: usize,
    params: &NetworkParams,
    shape: &NetworkShape,
) -> Result<Vec<f64>, ModelError> {
    let classes = cache.logits.len();
    if label >= classes {
        return Err(ModelError::LabelOutOfRange { label, classes });
    }
    // d loss / d logits = softmax(logits) − one-hot(label)
    let mut d_logits: Vec<f64> = cache.log_probs.iter().map(|lp| lp.exp()).collect();
    d_logits[label] -= 1.0;

    let out_shape = shape.layer_shapes().pop().expect("output shape");
    let d_y = Matrix::from_vec(out_shape.d_out, out_shape.t_out, d_logits);

    let (tabl_cache, hidden_caches) = match cache.layers.split_last().expect("layers") {
        (LayerCache::Tabl(t), rest) => (t, rest),
        _ => unreachable!("output layer is always TABL"),
    };
    let (out_grads, mut d_x) = tabl_layer_backward(tabl_cache, &params.output, &d_y);

    let mut hidden_grads: Vec<BilinearGrads> = Vec::with_capacity(params.hidden.len());
    for (cache_l, params_l) in hidden_caches.iter().zip(&params.hidden).rev() {
        let bl_cache = match cache_l {
            LayerCache::Bilinear(b) => b,
            LayerCache::Tabl(_) => unreachable!("hidden layers are bilinear"),
        };
        let (g, d_x_next) = bilinear_layer_backward(bl_cache, params_l, &d_x);
        hidden_grads.push(g);
        d_x = d_x_next;
    }
    hidden_grads.reverse();

    let mut flat = Vec::with_capacity(shape.param_len());
    for g in &hidden_grads {
        flat.extend_from_slice(g.w1.data());
        flat.extend_from_slice(g.w2.data());
        flat.extend_from_slice(g.b.data());
    }
    flat.extend_from_slice(out_grads.w1.data());
    flat.extend_from_slice(out_grads.w.data());
    flat.extend_from_slice(out_grads.w2.data());
    flat.extend_from_slice(out_grads.b.data());
    flat.push(out_grads.lambda);
    Ok(flat)
}

/// Single-TABL backward (the spec-level operation): gradient of the NLL at
/// `label` with respect to the canonical flattened parameter vector.
pub fn tabl_backward_per_sample(
    cache: &ForwardCache,
    label: usize,
    params: &TablParams,
) -> Result<Vec<f64>, ModelError> {
    let t = cache.tabl();
    let shape = NetworkShape {
        d_in: t.x.rows(),
        t_in: t.x.cols(),
        hidden: Vec::new(),
        d_out: t.y.rows(),
        t_out: t.y.cols(),
        output_activation: t.activation,
    };
    let net = NetworkParams { hidden: Vec::new(), output: params.clone() };
    network_backward_per_sample(cache, label, &net, &shape)
}

/// Per-sample losses and gradients over a batch.
pub struct BatchGrads {
    pub mean_loss: f64,
    /// Row i is the gradient of sample i's NLL (M x P).
    pub per_sample: Vec<Vec<f64>>,
    /// Column mean of `per_sample`, accumulated in fixed order.
    pub mean: Vec<f64>,
}

/// Forward+backward over a batch of labeled windows at the given parameters.
pub fn batch_forward_backward(
    batch: &[&LobWindow],
    params: &NetworkParams,
    shape: &NetworkShape,
) -> Result<BatchGrads, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let p = shape.param_len();
    let mut per_sample = Vec::with_capacity(batch.len());
    let mut mean = vec![0.0; p];
    let mut loss_sum = 0.0;
    for w in batch {
        let label = w.label.ok_or(ModelError::MissingLabel)?;
        let (logits, cache) = network_forward(&w.x, params, shape)?;
        let (loss, _) = log_softmax_nll(&logits, label)?;
        loss_sum += loss;
        let g = network_backward_per_sample(&cache, label, params, shape)?;
        for (acc, gi) in mean.iter_mut().zip(&g) {
            *acc += gi;
        }
        per_sample.push(g);
    }
    let m = batch.len() as f64;
    for acc in &mut mean {
        *acc /= m;
    }
    Ok(BatchGrads { mean_loss: loss_sum / m, per_sample, mean })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_params(shape: &NetworkShape, seed: u64) -> NetworkParams {
        let mut rng = crate::seed::rng_for(seed, &[1]);
        let mut p = NetworkParams::random_init(shape, &mut rng);
        // bias init is zero; randomize it so gradient checks exercise B
        let randomize = |m: &mut Matrix, rng: &mut rand_chacha::ChaCha8Rng| {
            for v in m.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        };
        for h in &mut p.hidden {
            randomize(&mut h.b, &mut rng);
        }
        randomize(&mut p.output.b, &mut rng);
        p.output.lambda = rng.random_range(0.15..0.85);
        p
    }

    fn random_input(shape: &NetworkShape, seed: u64) -> Matrix {
        let mut rng = crate::seed::rng_for(seed, &[2]);
        Matrix::from_vec(
            shape.d_in,
            shape.t_in,
            (0..shape.d_in * shape.t_in).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    #[test]
    fn identity_configuration_reproduces_input() {
        // D=D', T=T', W1=I, W2=I, B=0, lambda=0, identity activation -> Y = X
        let shape = TablShape::new(3, 3, 3, 3, Activation::Identity);
        let mut params = TablParams::zeros(&shape);
        params.w1 = Matrix::identity(3);
        params.w2 = Matrix::identity(3);
        params.lambda = 0.0;
        // W arbitrary: with lambda=0 it must not matter
        params.w = Matrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 2.0], vec![0.0, 1.0, -2.0]]);
        let x = Matrix::from_rows(&[vec![1.0, -2.0, 3.0], vec![4.0, 5.0, -6.0], vec![7.0, -8.0, 9.0]]);
        let (_, cache) = tabl_forward(&x, &params, &shape).unwrap();
        assert_eq!(cache.tabl().y, x);
    }

    #[test]
    fn lambda_zero_bypasses_attention() {
        let net = NetworkShape::single_tabl(4, 5, 3, 2);
        let shape = net.layer_shapes()[0];
        let mut params = random_params(&net, 3).output;
        params.lambda = 0.0;
        let x = random_input(&net, 4);
        let (logits_a, _) = tabl_forward(&x, &params, &shape).unwrap();
        let mut perturbed = params.clone();
        perturbed.w = perturbed.w.map(|v| v + 0.731);
        let (logits_b, _) = tabl_forward(&x, &perturbed, &shape).unwrap();
        assert_eq!(logits_a, logits_b);
    }

    #[test]
    fn lambda_one_uses_only_the_attended_path() {
        let net = NetworkShape::single_tabl(4, 5, 3, 1);
        let mut params = random_params(&net, 5).output;
        params.lambda = 1.0;
        let shape = net.layer_shapes()[0];
        let x = random_input(&net, 6);
        let (_, cache) = tabl_forward(&x, &params, &shape).unwrap();
        let t = cache.tabl();
        let attended = hadamard(&t.x_bar, &t.a).unwrap();
        assert_eq!(t.x_tilde, attended);
    }

    #[test]
    fn forward_matches_straight_line_transcription() {
        // independent re-implementation of the five equations on nested Vecs
        let net = NetworkShape::single_tabl(2, 3, 2, 2);
        let shape = net.layer_shapes()[0];
        let params = random_params(&net, 7).output;
        let x = random_input(&net, 8);

        let (d, t, d_out, t_out) = (2usize, 3usize, 2usize, 2usize);
        let lambda = params.lambda.clamp(0.0, 1.0);
        let at = |m: &Matrix, r: usize, c: usize| m.get(r, c);
        // X̄ = W1 X
        let mut x_bar = vec![vec![0.0; t]; d_out];
        for i in 0..d_out {
            for j in 0..t {
                for k in 0..d {
                    x_bar[i][j] += at(&params.w1, i, k) * at(&x, k, j);
                }
            }
        }
        // E = X̄ W
        let mut e = vec![vec![0.0; t]; d_out];
        for i in 0..d_out {
            for j in 0..t {
                for k in 0..t {
                    e[i][j] += x_bar[i][k] * at(&params.w, k, j);
                }
            }
        }
        // a_ij = exp(e_ij)/Σ_k exp(e_ik)
        let mut a = vec![vec![0.0; t]; d_out];
        for i in 0..d_out {
            let denom: f64 = (0..t).map(|k| e[i][k].exp()).sum();
            for j in 0..t {
                a[i][j] = e[i][j].exp() / denom;
            }
        }
        // X̃ = λ(X̄⊙A) + (1−λ)X̄,  Y = X̃W2 + B
        let mut y = vec![vec![0.0; t_out]; d_out];
        for i in 0..d_out {
            for j in 0..t_out {
                for k in 0..t {
                    let x_tilde = lambda * x_bar[i][k] * a[i][k] + (1.0 - lambda) * x_bar[i][k];
                    y[i][j] += x_tilde * at(&params.w2, k, j);
                }
                y[i][j] += at(&params.b, i, j);
            }
        }
        let expected: Vec<f64> = y.into_iter().flatten().collect();

        let (logits, _) = tabl_forward(&x, &params, &shape).unwrap();
        for (got, want) in logits.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn log_softmax_uniform_and_saturated() {
        let (loss, log_probs) = log_softmax_nll(&[0.0, 0.0, 0.0], 0).unwrap();
        assert!((loss - 3.0_f64.ln()).abs() < 1e-15);
        let probs: f64 = log_probs.iter().map(|lp| lp.exp()).sum();
        assert!((probs - 1.0).abs() < 1e-12);

        let (loss, _) = log_softmax_nll(&[100.0, 0.0, 0.0], 0).unwrap();
        assert!(loss < 1e-12);
        assert!(log_softmax_nll(&[0.0, 0.0], 5).is_err());
    }

    #[test]
    fn log_softmax_matches_naive_formula() {
        let mut rng = crate::seed::rng_for(9, &[0]);
        for _ in 0..20 {
            let logits: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let label = rng.random_range(0..4);
            let (loss, _) = log_softmax_nll(&logits, label).unwrap();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            let naive = -(logits[label].exp() / denom).ln();
            assert!((loss - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_loss_has_vanishing_gradient() {
        let net = NetworkShape::single_tabl(4, 5, 3, 1);
        let shape = net.layer_shapes()[0];
        let mut params = TablParams::zeros(&shape);
        // W1 = 0 keeps every path except the bias dead; B drives the logits
        // to a huge margin on the true class.
        let mut rng = crate::seed::rng_for(10, &[0]);
        for v in params.w2.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        params.b.set(0, 0, 40.0);
        params.lambda = 0.5;
        let x = random_input(&net, 11);
        let (_, cache) = tabl_forward(&x, &params, &shape).unwrap();
        let g = tabl_backward_per_sample(&cache, 0, &params).unwrap();
        let norm: f64 = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-12, "gradient norm {norm}");
    }

    #[test]
    fn lambda_gradient_vanishes_when_attention_is_degenerate() {
        // T = 1: softmax over a single column gives A = 1, so X̄⊙A = X̄ and
        // the mixing coefficient cannot matter.
        let net = NetworkShape::single_tabl(3, 1, 3, 1);
        let shape = net.layer_shapes()[0];
        let mut params = random_params(&net, 12).output;
        params.lambda = 0.0;
        let x = random_input(&net, 13);
        let (_, cache) = tabl_forward(&x, &params, &shape).unwrap();
        let g = tabl_backward_per_sample(&cache, 1, &params).unwrap();
        assert_eq!(g[g.len() - 1], 0.0);
    }

    fn loss_at(theta: &[f64], shape: &NetworkShape, x: &Matrix, label: usize) -> f64 {
        let params = NetworkParams::unflatten(shape, theta);
        let (logits, _) = network_forward(x, &params, shape).unwrap();
        log_softmax_nll(&logits, label).unwrap().0
    }

    fn finite_difference_check(shape: &NetworkShape, seed: u64) -> f64 {
        let params = random_params(shape, seed);
        let x = random_input(shape, seed.wrapping_add(1000));
        let label = (seed as usize) % shape.num_classes();
        let (_, cache) = network_forward(&x, &params, shape).unwrap();
        let analytic = network_backward_per_sample(&cache, label, &params, shape).unwrap();

        let theta = params.flatten();
        let eps = 1e-5;
        let mut max_rel = 0.0_f64;
        for j in 0..theta.len() {
            let mut plus = theta.clone();
            plus[j] += eps;
            let mut minus = theta.clone();
            minus[j] -= eps;
            let fd = (loss_at(&plus, shape, &x, label) - loss_at(&minus, shape, &x, label)) / (2.0 * eps);
            // the 1e-3 floor keeps near-zero coordinates from amplifying
            // the O(eps^2) truncation error of the central difference
            let rel = (analytic[j] - fd).abs() / analytic[j].abs().max(fd.abs()).max(1e-3);
            max_rel = max_rel.max(rel);
        }
        max_rel
    }

    #[test]
    fn gradients_match_finite_differences_on_random_shapes() {
        let mut rng = crate::seed::rng_for(77, &[0]);
        for round in 0..20u64 {
            let d_in = rng.random_range(2..6);
            let t_in = rng.random_range(2..6);
            let d_out = rng.random_range(2..5);
            let t_out = rng.random_range(1..3);
            let shape = NetworkShape::single_tabl(d_in, t_in, d_out, t_out);
            let max_rel = finite_difference_check(&shape, 100 + round);
            assert!(max_rel < 1e-5, "round {round}: max relative error {max_rel}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_with_hidden_layers() {
        for round in 0..5u64 {
            let shape = NetworkShape {
                d_in: 4,
                t_in: 5,
                hidden: vec![(3, 4)],
                d_out: 3,
                t_out: 1,
                output_activation: Activation::Identity,
            };
            let max_rel = finite_difference_check(&shape, 500 + round);
            assert!(max_rel < 1e-5, "round {round}: max relative error {max_rel}");
        }
    }

    #[test]
    fn flatten_round_trips_exactly() {
        let shape = NetworkShape {
            d_in: 4,
            t_in: 5,
            hidden: vec![(3, 4)],
            d_out: 3,
            t_out: 1,
            output_activation: Activation::Identity,
        };
        let params = random_params(&shape, 21);
        let theta = params.flatten();
        assert_eq!(theta.len(), shape.param_len());
        let back = NetworkParams::unflatten(&shape, &theta);
        assert_eq!(params, back);
        // P = D'D + T^2 + TT' + D'T' + 1 for the bare TABL layer
        let single = NetworkShape::single_tabl(40, 10, 3, 1);
        assert_eq!(single.param_len(), 3 * 40 + 100 + 10 + 3 + 1);
    }

    fn window(x: Matrix, label: usize) -> LobWindow {
        LobWindow { x, label: Some(label), stock_id: 1, day: 1, anchor_event_index: 0 }
    }

    #[test]
    fn batch_of_one_equals_single_sample() {
        let net = NetworkShape::single_tabl(3, 4, 3, 1);
        let params = random_params(&net, 30);
        let w = window(random_input(&net, 31), 2);
        let out = batch_forward_backward(&[&w], &params, &net).unwrap();
        assert_eq!(out.per_sample.len(), 1);
        assert_eq!(out.per_sample[0], out.mean);
    }

    #[test]
    fn duplicated_samples_give_identical_rows() {
        let net = NetworkShape::single_tabl(3, 4, 3, 1);
        let params = random_params(&net, 32);
        let w = window(random_input(&net, 33), 0);
        let batch = vec![&w, &w, &w, &w];
        let out = batch_forward_backward(&batch, &params, &net).unwrap();
        for row in &out.per_sample[1..] {
            assert_eq!(row, &out.per_sample[0]);
        }
    }

    #[test]
    fn mean_gradient_matches_summation_oracle() {
        let net = NetworkShape::single_tabl(3, 4, 3, 1);
        let params = random_params(&net, 34);
        let windows: Vec<LobWindow> =
            (0..8).map(|i| window(random_input(&net, 40 + i), (i % 3) as usize)).collect();
        let refs: Vec<&LobWindow> = windows.iter().collect();
        let out = batch_forward_backward(&refs, &params, &net).unwrap();
        for j in 0..net.param_len() {
            let sum: f64 = out.per_sample.iter().map(|r| r[j]).sum();
            assert!((out.mean[j] - sum / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_batch_is_a_contract_violation() {
        let net = NetworkShape::single_tabl(3, 4, 3, 1);
        let params = NetworkParams::zeros(&net);
        assert!(matches!(batch_forward_backward(&[], &params, &net), Err(ModelError::EmptyBatch)));
    }

    #[test]
    fn connection_indices_exclude_bias_and_lambda() {
        let net = NetworkShape::single_tabl(4, 5, 3, 1);
        let idx = net.connection_indices();
        // W1 (12) + W (25) + W2 (5) entries, bias (3) and lambda excluded
        assert_eq!(idx.len(), 12 + 25 + 5);
        let p = net.param_len();
        assert!(idx.iter().all(|&i| i < p - 4));
    }
}
