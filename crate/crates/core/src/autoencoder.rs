//! Layered encoder/decoder with optional fixed skip connections, the
//! variance-ordering loss and its gradient.
//!
//! Data matrices hold one sample per column. The encoder maps `n` inputs to
//! `m` latent variables,
//!
//! ```text
//! y     = S_e x + f_E(...f_1(x))
//! x_hat = S_d y + f_{E+D}(...f_{E+1}(y))
//! ```
//!
//! where each layer is `f_i(u) = act_i(W_i u + b_i)` and `S_e`, `S_d` are
//! fixed (untrained) skip matrices. With no skips this is the plain ordered
//! autoencoder (AEO); an identity encoder skip and no decoder skip gives the
//! "2-1" residual variant (RAEO).
//!
//! The loss is
//!
//! ```text
//! J = alpha ||X - X_hat||_F^2
//!   + beta  sum_i q_i sum_k (y_ik - mean_i)^2
//!   + gamma ||theta||^2
//! ```
//!
//! with `theta` every trainable weight and bias. Increasing `q_i` along the
//! latent index pushes later latents toward lower variance.

use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Activation, Matrix, Rng};

/// Fixed skip connection around an encoder or decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipKind {
    None,
    /// Rectangular identity `I[out x in]`.
    Identity,
    Fixed {
        matrix: Matrix,
    },
}

impl SkipKind {
    fn validate(&self, out: usize, inp: usize, which: &str) -> Result<()> {
        if let SkipKind::Fixed { matrix } = self {
            if matrix.shape() != (out, inp) {
                return Err(Error::DimensionMismatch(format!(
                    "{which} skip must be {out}x{inp}, got {}x{}",
                    matrix.rows(),
                    matrix.cols()
                )));
            }
        }
        Ok(())
    }

    /// The skip as an explicit `out x inp` matrix, `None` when absent.
    pub fn matrix(&self, out: usize, inp: usize) -> Option<Matrix> {
        match self {
            SkipKind::None => None,
            SkipKind::Identity => Some(Matrix::eye(out, inp)),
            SkipKind::Fixed { matrix } => Some(matrix.clone()),
        }
    }

    fn apply(&self, out: usize, x: &Matrix) -> Result<Option<Matrix>> {
        match self {
            SkipKind::None => Ok(None),
            SkipKind::Identity => {
                let k = out.min(x.rows());
                Ok(Some(Matrix::from_fn(out, x.cols(), |i, j| {
                    if i < k {
                        x[(i, j)]
                    } else {
                        0.0
                    }
                })))
            }
            SkipKind::Fixed { matrix } => matrix.matmul(x).map(Some),
        }
    }

    /// `S^T g` for the backward pass.
    fn apply_transpose(&self, inp: usize, g: &Matrix) -> Result<Option<Matrix>> {
        match self {
            SkipKind::None => Ok(None),
            SkipKind::Identity => {
                let k = inp.min(g.rows());
                Ok(Some(Matrix::from_fn(inp, g.cols(), |i, j| {
                    if i < k {
                        g[(i, j)]
                    } else {
                        0.0
                    }
                })))
            }
            SkipKind::Fixed { matrix } => matrix.t_matmul(g).map(Some),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, SkipKind::None)
    }
}

/// Widths, activations and skips of an autoencoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub n: usize,
    pub m: usize,
    /// Hidden widths of the encoder (`m_1 .. m_{E-1}`).
    pub encoder_hidden: Vec<usize>,
    /// Hidden widths of the decoder (`m_{E+1} .. m_{E+D-1}`).
    pub decoder_hidden: Vec<usize>,
    pub hidden_activation: Activation,
    /// Bias-free layers with linear outputs, the form relations are read from.
    /// When false every layer carries a trainable bias.
    pub extraction_mode: bool,
    pub encoder_skip: SkipKind,
    pub decoder_skip: SkipKind,
}

impl Architecture {
    /// Plain ordered autoencoder with one tanh hidden layer on each side.
    pub fn aeo(n: usize, m: usize, hidden: usize) -> Self {
        Architecture {
            n,
            m,
            encoder_hidden: vec![hidden],
            decoder_hidden: vec![hidden],
            hidden_activation: Activation::Tanh,
            extraction_mode: true,
            encoder_skip: SkipKind::None,
            decoder_skip: SkipKind::None,
        }
    }

    /// Residual variant with an identity encoder skip and no decoder skip.
    pub fn raeo21(n: usize, m: usize, hidden: usize) -> Self {
        Architecture {
            encoder_skip: SkipKind::Identity,
            ..Self::aeo(n, m, hidden)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::Contract(
                "input and latent sizes must be positive".into(),
            ));
        }
        if self
            .encoder_hidden
            .iter()
            .chain(&self.decoder_hidden)
            .any(|w| *w == 0)
        {
            return Err(Error::Contract("layer widths must be positive".into()));
        }
        self.encoder_skip.validate(self.m, self.n, "encoder")?;
        self.decoder_skip.validate(self.n, self.m, "decoder")?;
        Ok(())
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.n];
        d.extend(&self.encoder_hidden);
        d.push(self.m);
        d
    }

    fn decoder_dims(&self) -> Vec<usize> {
        let mut d = vec![self.m];
        d.extend(&self.decoder_hidden);
        d.push(self.n);
        d
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out x in`.
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }

    fn n_params(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    fn pre_activation(&self, u: &Matrix) -> Result<Matrix> {
        let mut z = self.weights.matmul(u)?;
        if let Some(b) = &self.bias {
            z.add_col_broadcast(b);
        }
        Ok(z)
    }
}

/// Weights/biases and activations of every layer, plus the fixed skips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub n: usize,
    pub m: usize,
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
    pub encoder_skip: SkipKind,
    pub decoder_skip: SkipKind,
}

/// Inputs and pre-activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Matrix,
    pub pre: Matrix,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub y: Matrix,
    pub xhat: Matrix,
    pub encoder_caches: Vec<LayerCache>,
    pub decoder_caches: Vec<LayerCache>,
}

/// Weighting of the three loss terms and the per-latent ordering weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub q: Vec<f64>,
}

impl LossConfig {
    /// Checks `alpha, beta, gamma >= 0` and `0 <= q_1 <= ... <= q_m`.
    /// Ties in `q` are accepted with a warning since they leave the tied
    /// latents unordered.
    pub fn validate(&self, m: usize) -> Result<()> {
        if self.q.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{} ordering weights for {m} latent variables",
                self.q.len()
            )));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Contract(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
        }
        if self.q.iter().any(|q| !(*q >= 0.0) || !q.is_finite()) {
            return Err(Error::Contract(
                "ordering weights must be finite and nonnegative".into(),
            ));
        }
        if self.q.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Contract(
                "ordering weights must be nondecreasing".into(),
            ));
        }
        if self.q.windows(2).any(|w| w[1] == w[0]) {
            warn!("ordering weights are not strictly increasing: {:?}", self.q);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub j: f64,
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
}

/// Sub-blocks of the first and last encoder weights split at latent / input
/// index `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    pub a_ep: Matrix,
    pub a_er: Matrix,
    pub a_1p: Matrix,
    pub a_1r: Matrix,
}

impl AutoencoderModel {
    /// Random initialization: weights uniform on `+-1/sqrt(fan_in)`, biases
    /// zero.
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let build = |dims: &[usize], rng: &mut Rng| -> Vec<Layer> {
            let last = dims.len() - 2;
            dims.windows(2)
                .enumerate()
                .map(|(k, w)| {
                    let (inp, out) = (w[0], w[1]);
                    let bound = 1.0 / (inp as f64).sqrt();
                    Layer {
                        weights: rng.uniform_matrix(out, inp, -bound, bound),
                        bias: (!arch.extraction_mode).then(|| vec![0.0; out]),
                        activation: if k == last {
                            Activation::Linear
                        } else {
                            arch.hidden_activation
                        },
                    }
                })
                .collect()
        };
        let encoder = build(&arch.encoder_dims(), rng);
        let decoder = build(&arch.decoder_dims(), rng);
        Self::from_layers(
            arch.n,
            arch.m,
            encoder,
            decoder,
            arch.encoder_skip.clone(),
            arch.decoder_skip.clone(),
        )
    }

    pub fn from_layers(
        n: usize,
        m: usize,
        encoder: Vec<Layer>,
        decoder: Vec<Layer>,
        encoder_skip: SkipKind,
        decoder_skip: SkipKind,
    ) -> Result<Self> {
        let model = AutoencoderModel {
            n,
            m,
            encoder,
            decoder,
            encoder_skip,
            decoder_skip,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let chain = |layers: &[Layer], inp: usize, out: usize, which: &str| -> Result<()> {
            if layers.is_empty() {
                return Err(Error::Contract(format!("{which} needs at least one layer")));
            }
            let mut width = inp;
            for (k, l) in layers.iter().enumerate() {
                if l.inputs() != width {
                    return Err(Error::DimensionMismatch(format!(
                        "{which} layer {} expects {} inputs, previous width is {width}",
                        k + 1,
                        l.inputs()
                    )));
                }
                if let Some(b) = &l.bias {
                    if b.len() != l.outputs() {
                        return Err(Error::DimensionMismatch(format!(
                            "{which} layer {} bias length {} != {}",
                            k + 1,
                            b.len(),
                            l.outputs()
                        )));
                    }
                }
                width = l.outputs();
            }
            if width != out {
                return Err(Error::DimensionMismatch(format!(
                    "{which} output width {width} != {out}"
                )));
            }
            Ok(())
        };
        chain(&self.encoder, self.n, self.m, "encoder")?;
        chain(&self.decoder, self.m, self.n, "decoder")?;
        self.encoder_skip.validate(self.m, self.n, "encoder")?;
        self.decoder_skip.validate(self.n, self.m, "decoder")?;
        Ok(())
    }

    /// Zero biases everywhere and linear encoder/decoder outputs.
    pub fn is_extraction_form(&self) -> bool {
        let layers = || self.encoder.iter().chain(&self.decoder);
        layers().all(|l| l.bias.as_ref().is_none_or(|b| b.iter().all(|v| *v == 0.0)))
            && self.encoder.last().map(|l| l.activation) == Some(Activation::Linear)
            && self.decoder.last().map(|l| l.activation) == Some(Activation::Linear)
    }

    fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(Layer::n_params).sum()
    }

    /// Flattened trainable parameters: for each encoder then decoder layer,
    /// its weights row-major followed by its bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in self.layers() {
            out.extend_from_slice(l.weights.as_slice());
            if let Some(b) = &l.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    pub fn set_params(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "{} parameters for a model with {}",
                theta.len(),
                self.n_params()
            )));
        }
        let mut off = 0;
        for l in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            let w = l.weights.len();
            l.weights
                .as_mut_slice()
                .copy_from_slice(&theta[off..off + w]);
            off += w;
            if let Some(b) = &mut l.bias {
                let k = b.len();
                b.copy_from_slice(&theta[off..off + k]);
                off += k;
            }
        }
        Ok(())
    }

    pub fn with_params(&self, theta: &[f64]) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(theta)?;
        Ok(m)
    }

    /// Position of encoder layer `k`'s weight matrix in the flat parameters.
    pub fn encoder_weight_range(&self, k: usize) -> Range<usize> {
        let start: usize = self.encoder[..k].iter().map(Layer::n_params).sum();
        start..start + self.encoder[k].weights.len()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        if x.rows() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} input variables, got {}",
                self.n,
                x.rows()
            )));
        }
        let (mut y, encoder_caches) = run_chain(&self.encoder, x)?;
        if let Some(s) = self.encoder_skip.apply(self.m, x)? {
            y.add_assign(&s)?;
        }
        let (mut xhat, decoder_caches) = run_chain(&self.decoder, &y)?;
        if let Some(s) = self.decoder_skip.apply(self.n, &y)? {
            xhat.add_assign(&s)?;
        }
        Ok(Forward {
            y,
            xhat,
            encoder_caches,
            decoder_caches,
        })
    }

    /// Latent variables only.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        let (mut y, _) = run_chain(&self.encoder, x)?;
        if let Some(s) = self.encoder_skip.apply(self.m, x)? {
            y.add_assign(&s)?;
        }
        Ok(y)
    }

    pub fn loss(&self, x: &Matrix, cfg: &LossConfig) -> Result<LossTerms> {
        let fwd = self.forward(x)?;
        Ok(self.loss_terms(x, &fwd, cfg))
    }

    fn loss_terms(&self, x: &Matrix, fwd: &Forward, cfg: &LossConfig) -> LossTerms {
        let j1 = cfg.alpha * x.sub(&fwd.xhat).expect("shapes checked").frobenius_sq();
        let j2 = cfg.beta * weighted_scatter(&fwd.y, &cfg.q);
        let j3 = cfg.gamma * self.params().iter().map(|v| v * v).sum::<f64>();
        LossTerms {
            j: j1 + j2 + j3,
            j1,
            j2,
            j3,
        }
    }

    /// Loss terms and the gradient of `J` with respect to [`Self::params`].
    pub fn loss_grad(&self, x: &Matrix, cfg: &LossConfig) -> Result<(LossTerms, Vec<f64>)> {
        if cfg.q.len() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "{} ordering weights for {} latent variables",
                cfg.q.len(),
                self.m
            )));
        }
        let fwd = self.forward(x)?;
        let terms = self.loss_terms(x, &fwd, cfg);

        // dJ1/dXhat
        let d_xhat = fwd.xhat.sub(x)?.scale(2.0 * cfg.alpha);

        let mut dec_grads = Vec::with_capacity(self.decoder.len());
        let mut d_y = backprop_chain(
            &self.decoder,
            &fwd.decoder_caches,
            d_xhat.clone(),
            &mut dec_grads,
        )?;
        if let Some(g) = self.decoder_skip.apply_transpose(self.m, &d_xhat)? {
            d_y.add_assign(&g)?;
        }
        // dJ2/dY = 2 beta q_i (y_ik - mean_i); the mean's own derivative sums to zero
        let means = fwd.y.row_means();
        for (i, (mean, q)) in means.iter().zip(&cfg.q).enumerate() {
            let w = 2.0 * cfg.beta * q;
            if w == 0.0 {
                continue;
            }
            for (g, y) in d_y.row_mut(i).iter_mut().zip(fwd.y.row(i)) {
                *g += w * (y - mean);
            }
        }
        let mut enc_grads = Vec::with_capacity(self.encoder.len());
        backprop_chain(&self.encoder, &fwd.encoder_caches, d_y, &mut enc_grads)?;

        let mut grad = Vec::with_capacity(self.n_params());
        for (dw, db) in enc_grads
            .into_iter()
            .rev()
            .chain(dec_grads.into_iter().rev())
        {
            grad.extend_from_slice(dw.as_slice());
            if let Some(db) = db {
                grad.extend(db);
            }
        }
        if cfg.gamma != 0.0 {
            for (g, t) in grad.iter_mut().zip(self.params()) {
                *g += 2.0 * cfg.gamma * t;
            }
        }
        Ok((terms, grad))
    }

    /// Splits the last encoder weight by rows and the first by columns at `p`.
    pub fn partition(&self, p: usize) -> Result<Partition> {
        if p == 0 || p >= self.m {
            return Err(Error::Contract(format!(
                "partition index must be in 1..{}, got {p}",
                self.m
            )));
        }
        if p >= self.n {
            return Err(Error::Contract(format!(
                "partition index must be below the input count {}",
                self.n
            )));
        }
        let a_e = &self.encoder.last().expect("validated").weights;
        let a_1 = &self.encoder[0].weights;
        Ok(Partition {
            a_ep: a_e.row_block(0, p),
            a_er: a_e.row_block(p, self.m),
            a_1p: a_1.col_block(0, p),
            a_1r: a_1.col_block(p, self.n),
        })
    }
}

/// `sum_i q_i sum_k (y_ik - mean_i)^2`.
fn weighted_scatter(y: &Matrix, q: &[f64]) -> f64 {
    let means = y.row_means();
    (0..y.rows())
        .map(|i| q[i] * y.row(i).iter().map(|v| (v - means[i]).powi(2)).sum::<f64>())
        .sum()
}

fn run_chain(layers: &[Layer], x: &Matrix) -> Result<(Matrix, Vec<LayerCache>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut u = x.clone();
    for l in layers {
        let z = l.pre_activation(&u)?;
        let v = l.activation.activate(&z);
        caches.push(LayerCache { input: u, pre: z });
        u = v;
    }
    Ok((u, caches))
}

/// Backpropagates `d_out` through `layers`, pushing `(dW, db)` in reverse
/// layer order, and returns the gradient with respect to the chain input.
fn backprop_chain(
    layers: &[Layer],
    caches: &[LayerCache],
    d_out: Matrix,
    grads: &mut Vec<(Matrix, Option<Vec<f64>>)>,
) -> Result<Matrix> {
    let mut d_v = d_out;
    for (l, c) in layers.iter().zip(caches).rev() {
        let d_z = match l.activation {
            Activation::Linear => d_v,
            act => d_v.hadamard(&act.activate_deriv(&c.pre))?,
        };
        let d_w = d_z.matmul_t(&c.input)?;
        let d_b = l.bias.as_ref().map(|_| d_z.row_sums());
        d_v = l.weights.t_matmul(&d_z)?;
        grads.push((d_w, d_b));
    }
    Ok(d_v)
}
