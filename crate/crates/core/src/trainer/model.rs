//! Trainable parameters: a two-layer encoder, a causal recurrent context
//! mixer, the mask embedding, and (for the Gumbel-Softmax scheme) the
//! logit projection. Forward and backward passes are hand-derived; the
//! backward passes are checked against finite differences in the tests.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{FrameSequence, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::substream;

pub(crate) fn matvec(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum())
        .collect()
}

/// `m^T g` for an `rows x cols` matrix.
pub(crate) fn matvec_t(m: &[Vec<f64>], g: &[f64]) -> Vec<f64> {
    let cols = m[0].len();
    let mut out = vec![0.0; cols];
    for (row, gi) in m.iter().zip(g) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * gi;
        }
    }
    out
}

/// `acc += g * x^T`.
pub(crate) fn outer_acc(acc: &mut [Vec<f64>], g: &[f64], x: &[f64]) {
    for (row, gi) in acc.iter_mut().zip(g) {
        for (a, xi) in row.iter_mut().zip(x) {
            *a += gi * xi;
        }
    }
}

pub(crate) fn axpy(acc: &mut [f64], scale: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += scale * v;
    }
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| {
            (0..cols)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect()
}

/// Two-layer encoder: `z = W2 tanh(W1 x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

/// Causal recurrent context mixer: `c_t = tanh(W_in u_t + W_rec c_{t-1} + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextParams {
    pub w_in: Vec<Vec<f64>>,
    pub w_rec: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// All trainable parameters except the codebook.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub context: ContextParams,
    pub mask_embedding: Vec<f64>,
    /// `V x d_e` logit projection, present for the Gumbel-Softmax scheme.
    pub gs_projection: Option<Vec<Vec<f64>>>,
}

impl ModelParams {
    /// Gaussian initialization scaled by fan-in, seeded from the config.
    pub fn init(config: &TrainConfig, num_codewords: usize) -> Self {
        let d = config.input_dim;
        let h = config.hidden_dim;
        let de = config.model_dim;
        let mut rng = substream(config.seed, "params-init", &[]);
        let encoder = EncoderParams {
            w1: gaussian_matrix(&mut rng, h, d, 1.0 / (d as f64).sqrt()),
            b1: vec![0.0; h],
            w2: gaussian_matrix(&mut rng, de, h, 1.0 / (h as f64).sqrt()),
            b2: vec![0.0; de],
        };
        let context = ContextParams {
            w_in: gaussian_matrix(&mut rng, de, de, 1.0 / (de as f64).sqrt()),
            w_rec: gaussian_matrix(&mut rng, de, de, 0.5 / (de as f64).sqrt()),
            b: vec![0.0; de],
        };
        let mask_embedding = (0..de)
            .map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let gs_projection = match config.scheme {
            crate::data::QuantScheme::GumbelSoftmax => Some(gaussian_matrix(
                &mut rng,
                num_codewords,
                de,
                1.0 / (de as f64).sqrt(),
            )),
            crate::data::QuantScheme::KMeans => None,
        };
        ModelParams {
            encoder,
            context,
            mask_embedding,
            gs_projection,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.w1[0].len()
    }

    pub fn model_dim(&self) -> usize {
        self.encoder.b2.len()
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.flatten();
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("model parameters are non-finite".into()));
        }
        Ok(())
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for m in [&self.encoder.w1, &self.encoder.w2, &self.context.w_in, &self.context.w_rec] {
            for row in m {
                out.extend_from_slice(row);
            }
        }
        out.extend_from_slice(&self.encoder.b1);
        out.extend_from_slice(&self.encoder.b2);
        out.extend_from_slice(&self.context.b);
        out.extend_from_slice(&self.mask_embedding);
        if let Some(ref p) = self.gs_projection {
            for row in p {
                out.extend_from_slice(row);
            }
        }
        out
    }

    /// Encode a feature sequence into a `T x d_e` frame sequence with the
    /// same duration and utterance id.
    pub fn encode(&self, frames: &FrameSequence) -> Result<FrameSequence> {
        if frames.dim() != self.input_dim() {
            return Err(Error::Validation(format!(
                "input dim {} does not match encoder dim {}",
                frames.dim(),
                self.input_dim()
            )));
        }
        let (_, z) = encoder_forward(&self.encoder, frames.frames());
        FrameSequence::new(z, frames.frame_duration(), frames.utterance_id().to_string())
    }
}

/// Forward pass of the encoder: returns the hidden activations and the
/// per-frame outputs.
pub(crate) fn encoder_forward(
    enc: &EncoderParams,
    x: &[Vec<f64>],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut hs = Vec::with_capacity(x.len());
    let mut zs = Vec::with_capacity(x.len());
    for xt in x {
        let mut h = matvec(&enc.w1, xt);
        for (hi, bi) in h.iter_mut().zip(&enc.b1) {
            *hi = (*hi + bi).tanh();
        }
        let mut z = matvec(&enc.w2, &h);
        for (zi, bi) in z.iter_mut().zip(&enc.b2) {
            *zi += bi;
        }
        hs.push(h);
        zs.push(z);
    }
    (hs, zs)
}

/// Backpropagate `grad_z` through the encoder, accumulating into `grads`.
pub(crate) fn encoder_backward(
    enc: &EncoderParams,
    x: &[Vec<f64>],
    h: &[Vec<f64>],
    grad_z: &[Vec<f64>],
    grads: &mut EncoderGrads,
) {
    for t in 0..x.len() {
        let gz = &grad_z[t];
        outer_acc(&mut grads.w2, gz, &h[t]);
        axpy(&mut grads.b2, 1.0, gz);
        let gh = matvec_t(&enc.w2, gz);
        let gpre: Vec<f64> = gh
            .iter()
            .zip(&h[t])
            .map(|(g, hv)| g * (1.0 - hv * hv))
            .collect();
        outer_acc(&mut grads.w1, &gpre, &x[t]);
        axpy(&mut grads.b1, 1.0, &gpre);
    }
}

/// Forward pass of the context mixer over inputs `u`.
pub(crate) fn context_forward(ctx: &ContextParams, u: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let de = ctx.b.len();
    let mut cs: Vec<Vec<f64>> = Vec::with_capacity(u.len());
    let mut prev = vec![0.0; de];
    for ut in u {
        let mut pre = matvec(&ctx.w_in, ut);
        let rec = matvec(&ctx.w_rec, &prev);
        for ((p, r), b) in pre.iter_mut().zip(&rec).zip(&ctx.b) {
            *p = (*p + r + b).tanh();
        }
        prev = pre.clone();
        cs.push(pre);
    }
    cs
}

/// Backpropagation through time for the context mixer. `grad_c` holds the
/// direct loss gradients on each `c_t`; returns the gradients on the
/// inputs `u_t` and accumulates parameter gradients.
pub(crate) fn context_backward(
    ctx: &ContextParams,
    u: &[Vec<f64>],
    c: &[Vec<f64>],
    grad_c: &[Vec<f64>],
    grads: &mut ContextGrads,
) -> Vec<Vec<f64>> {
    let de = ctx.b.len();
    let t_len = u.len();
    let mut grad_u = vec![vec![0.0; de]; t_len];
    let mut carry = vec![0.0; de];
    for t in (0..t_len).rev() {
        let total: Vec<f64> = grad_c[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        let gpre: Vec<f64> = total
            .iter()
            .zip(&c[t])
            .map(|(g, cv)| g * (1.0 - cv * cv))
            .collect();
        outer_acc(&mut grads.w_in, &gpre, &u[t]);
        if t > 0 {
            outer_acc(&mut grads.w_rec, &gpre, &c[t - 1]);
        }
        axpy(&mut grads.b, 1.0, &gpre);
        grad_u[t] = matvec_t(&ctx.w_in, &gpre);
        carry = matvec_t(&ctx.w_rec, &gpre);
    }
    grad_u
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderGrads {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct ContextGrads {
    pub w_in: Vec<Vec<f64>>,
    pub w_rec: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Gradients of one training step, shaped like the parameters plus the
/// codebook entries.
#[derive(Debug, Clone)]
pub struct StepGrads {
    pub(crate) encoder: EncoderGrads,
    pub(crate) context: ContextGrads,
    pub(crate) mask_embedding: Vec<f64>,
    pub(crate) gs_projection: Option<Vec<Vec<f64>>>,
    /// `V x d_e` gradient on the (single-group) codebook.
    pub(crate) codebook: Vec<Vec<f64>>,
}

fn zeros_like(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    m.iter().map(|row| vec![0.0; row.len()]).collect()
}

impl StepGrads {
    pub(crate) fn zeros(params: &ModelParams, num_codewords: usize) -> Self {
        StepGrads {
            encoder: EncoderGrads {
                w1: zeros_like(&params.encoder.w1),
                b1: vec![0.0; params.encoder.b1.len()],
                w2: zeros_like(&params.encoder.w2),
                b2: vec![0.0; params.encoder.b2.len()],
            },
            context: ContextGrads {
                w_in: zeros_like(&params.context.w_in),
                w_rec: zeros_like(&params.context.w_rec),
                b: vec![0.0; params.context.b.len()],
            },
            mask_embedding: vec![0.0; params.mask_embedding.len()],
            gs_projection: params.gs_projection.as_ref().map(|p| zeros_like(p)),
            codebook: vec![vec![0.0; params.model_dim()]; num_codewords],
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        let matrices = [
            &self.encoder.w1,
            &self.encoder.w2,
            &self.context.w_in,
            &self.context.w_rec,
            &self.codebook,
        ];
        for m in matrices {
            if m.iter().flatten().any(|x| !x.is_finite()) {
                return false;
            }
        }
        if let Some(ref p) = self.gs_projection {
            if p.iter().flatten().any(|x| !x.is_finite()) {
                return false;
            }
        }
        [&self.encoder.b1, &self.encoder.b2, &self.context.b, &self.mask_embedding]
            .iter()
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// Flatten a named view of all gradients (used by loss reports).
    pub fn named(&self) -> std::collections::BTreeMap<String, Vec<f64>> {
        let mut out = std::collections::BTreeMap::new();
        let flat = |m: &[Vec<f64>]| m.iter().flatten().copied().collect::<Vec<f64>>();
        out.insert("encoder.w1".into(), flat(&self.encoder.w1));
        out.insert("encoder.b1".into(), self.encoder.b1.clone());
        out.insert("encoder.w2".into(), flat(&self.encoder.w2));
        out.insert("encoder.b2".into(), self.encoder.b2.clone());
        out.insert("context.w_in".into(), flat(&self.context.w_in));
        out.insert("context.w_rec".into(), flat(&self.context.w_rec));
        out.insert("context.b".into(), self.context.b.clone());
        out.insert("mask_embedding".into(), self.mask_embedding.clone());
        if let Some(ref p) = self.gs_projection {
            out.insert("gs_projection".into(), flat(p));
        }
        out.insert("codebook".into(), flat(&self.codebook));
        out
    }
}

/// Apply one SGD step: `value -= lr * grad` over all parameters.
pub(crate) fn sgd_update(
    params: &mut ModelParams,
    entries: &mut [Vec<f64>],
    grads: &StepGrads,
    lr: f64,
) {
    let update_m = |m: &mut Vec<Vec<f64>>, g: &[Vec<f64>]| {
        for (row, grow) in m.iter_mut().zip(g) {
            for (w, gw) in row.iter_mut().zip(grow) {
                *w -= lr * gw;
            }
        }
    };
    let update_v = |v: &mut Vec<f64>, g: &[f64]| {
        for (w, gw) in v.iter_mut().zip(g) {
            *w -= lr * gw;
        }
    };
    update_m(&mut params.encoder.w1, &grads.encoder.w1);
    update_v(&mut params.encoder.b1, &grads.encoder.b1);
    update_m(&mut params.encoder.w2, &grads.encoder.w2);
    update_v(&mut params.encoder.b2, &grads.encoder.b2);
    update_m(&mut params.context.w_in, &grads.context.w_in);
    update_m(&mut params.context.w_rec, &grads.context.w_rec);
    update_v(&mut params.context.b, &grads.context.b);
    update_v(&mut params.mask_embedding, &grads.mask_embedding);
    if let (Some(p), Some(g)) = (params.gs_projection.as_mut(), grads.gs_projection.as_ref()) {
        update_m(p, g);
    }
    for (entry, g) in entries.iter_mut().zip(&grads.codebook) {
        for (w, gw) in entry.iter_mut().zip(g) {
            *w -= lr * gw;
        }
    }
}
