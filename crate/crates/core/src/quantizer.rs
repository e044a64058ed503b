//! Vector quantization of frame vectors against a codebook.
//!
//! Two schemes are supported. K-means quantization substitutes a frame
//! vector with its nearest codeword and uses a straight-through gradient:
//! the output is written as `q = z + e_v - sg(z)`, so upstream gradients
//! flow unchanged both to `z` and to the selected entry, and to no other
//! entry. Gumbel-Softmax quantization draws selection probabilities from
//! perturbed logits, takes the argmax forward, and routes gradients
//! through the soft distribution.

use crate::data::{Codebook, FrameSequence, QuantizedSequence};
use crate::error::{Error, Result};
use crate::rng::{gumbel, substream};

/// Gumbel-Softmax parameters: the current temperature, one `V x d_g`
/// projection per codebook group producing the logits, and the seed of
/// the per-frame noise stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelParams {
    pub tau: f64,
    pub projection: Vec<Vec<Vec<f64>>>,
    pub noise_seed: u64,
}

/// Scheme selector for [`quantize_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub enum QuantizerChoice {
    KMeans,
    GumbelSoftmax(GumbelParams),
}

impl QuantizerChoice {
    pub fn gumbel(tau: f64, projection: Vec<Vec<Vec<f64>>>, noise_seed: u64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::Domain(format!("tau must be > 0, got {tau}")));
        }
        Ok(QuantizerChoice::GumbelSoftmax(GumbelParams {
            tau,
            projection,
            noise_seed,
        }))
    }
}

/// Result of quantizing one frame: the selected entry per group and the
/// concatenated codeword vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Quantized {
    pub indices: Vec<usize>,
    pub value: Vec<f64>,
}

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest entry of one codebook group, ties to the lowest index.
pub(crate) fn nearest_entry(z: &[f64], group: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (k, e) in group.iter().enumerate() {
        let d = squared_distance(z, e);
        if d < best_d {
            best_d = d;
            best = k;
        }
    }
    best
}

/// K-means quantization of a single frame vector. The frame splits evenly
/// across codebook groups; each part selects its group's nearest entry
/// (Euclidean, ties to the lowest index) and the selections concatenate.
///
/// Gradient contract (straight-through): the derivative of the output with
/// respect to `z` is the identity, the derivative with respect to the
/// selected entry is the identity, and unselected entries get no gradient.
pub fn quantize_km(z: &[f64], codebook: &Codebook) -> Result<Quantized> {
    if z.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation("frame vector has non-finite values".into()));
    }
    if z.len() != codebook.concat_dim() {
        return Err(Error::Validation(format!(
            "frame dim {} does not match codebook concat dim {}",
            z.len(),
            codebook.concat_dim()
        )));
    }
    let d_g = codebook.entry_dim();
    let mut indices = Vec::with_capacity(codebook.num_groups());
    let mut value = Vec::with_capacity(z.len());
    for (g, group) in codebook.entries().iter().enumerate() {
        let part = &z[g * d_g..(g + 1) * d_g];
        let v = nearest_entry(part, group);
        indices.push(v);
        value.extend_from_slice(&group[v]);
    }
    Ok(Quantized { indices, value })
}

/// Selection probabilities `p_j = softmax((l_j + r_j) / tau)` over one
/// group, computed with max-subtraction.
pub fn gs_probs(logits: &[f64], tau: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be > 0, got {tau}")));
    }
    if logits.len() != noise.len() {
        return Err(Error::Validation(format!(
            "{} logits but {} noise values",
            logits.len(),
            noise.len()
        )));
    }
    if logits.is_empty() {
        return Err(Error::Validation("empty logit vector".into()));
    }
    let scores: Vec<f64> = logits
        .iter()
        .zip(noise)
        .map(|(l, r)| (l + r) / tau)
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.iter().map(|e| e / sum).collect())
}

/// Gumbel-Softmax quantization of one group: returns the hard index
/// (argmax of the soft probabilities, ties to the lowest index) and the
/// soft probabilities themselves.
///
/// Gradient contract: the forward pass uses the hard selection, the
/// backward pass flows through the soft probabilities.
pub fn quantize_gs(logits: &[f64], tau: f64, noise: &[f64]) -> Result<(usize, Vec<f64>)> {
    let probs = gs_probs(logits, tau, noise)?;
    let mut hard = 0;
    for (j, p) in probs.iter().enumerate() {
        if *p > probs[hard] {
            hard = j;
        }
    }
    Ok((hard, probs))
}

/// Pull an upstream gradient on the soft probabilities back to the logits
/// through the softmax Jacobian: `dp_j/dl_k = (d_jk p_j - p_j p_k) / tau`.
pub fn gs_backward_logits(probs: &[f64], tau: f64, grad_probs: &[f64]) -> Vec<f64> {
    let weighted: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - weighted) / tau)
        .collect()
}

/// Linear temperature annealing: `tau(0) = tau_start`,
/// `tau(total_steps) = tau_end`.
pub fn anneal_tau(step: usize, total_steps: usize, tau_start: f64, tau_end: f64) -> f64 {
    debug_assert!(step <= total_steps);
    if total_steps == 0 {
        return tau_end;
    }
    let frac = step as f64 / total_steps as f64;
    tau_start + (tau_end - tau_start) * frac
}

/// Per-group Gumbel noise for frame `t`, drawn from the counter-based
/// stream `(noise_seed, "gumbel", [t, g])` so draws are independent of
/// evaluation order.
pub fn frame_noise(noise_seed: u64, t: usize, group: usize, v: usize) -> Vec<f64> {
    let mut rng = substream(noise_seed, "gumbel", &[t as u64, group as u64]);
    (0..v).map(|_| gumbel(&mut rng)).collect()
}

/// Quantize every frame of a sequence. For multi-group codebooks the frame
/// vector splits evenly across groups and the per-group selections are
/// concatenated. Deterministic given the noise seed.
pub fn quantize_sequence(
    frames: &FrameSequence,
    codebook: &Codebook,
    choice: &QuantizerChoice,
) -> Result<QuantizedSequence> {
    if frames.dim() != codebook.concat_dim() {
        return Err(Error::Validation(format!(
            "frame dim {} does not match codebook concat dim {}",
            frames.dim(),
            codebook.concat_dim()
        )));
    }
    let mut indices = Vec::with_capacity(frames.num_frames());
    match choice {
        QuantizerChoice::KMeans => {
            for t in 0..frames.num_frames() {
                indices.push(quantize_km(frames.frame(t), codebook)?.indices);
            }
        }
        QuantizerChoice::GumbelSoftmax(params) => {
            let d_g = codebook.entry_dim();
            let v = codebook.entries_per_group();
            if params.projection.len() != codebook.num_groups() {
                return Err(Error::Validation(format!(
                    "{} projections for {} groups",
                    params.projection.len(),
                    codebook.num_groups()
                )));
            }
            for proj in &params.projection {
                if proj.len() != v || proj.iter().any(|row| row.len() != d_g) {
                    return Err(Error::Validation(format!(
                        "projection must be {v}x{d_g}"
                    )));
                }
            }
            for t in 0..frames.num_frames() {
                let z = frames.frame(t);
                let mut sel = Vec::with_capacity(codebook.num_groups());
                for (g, proj) in params.projection.iter().enumerate() {
                    let part = &z[g * d_g..(g + 1) * d_g];
                    let logits: Vec<f64> = proj
                        .iter()
                        .map(|row| row.iter().zip(part).map(|(w, x)| w * x).sum())
                        .collect();
                    let noise = frame_noise(params.noise_seed, t, g, v);
                    let (hard, _) = quantize_gs(&logits, params.tau, &noise)?;
                    sel.push(hard);
                }
                indices.push(sel);
            }
        }
    }
    QuantizedSequence::from_indices(indices, codebook, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FrameSequence;

    fn book(entries: Vec<Vec<f64>>) -> Codebook {
        Codebook::new(vec![entries], None).unwrap()
    }

    #[test]
    fn km_selects_nearest_entry() {
        // distances 0.9 vs 1.1
        let cb = book(vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let q = quantize_km(&[0.9, 0.0], &cb).unwrap();
        assert_eq!(q.indices, vec![0]);
        assert_eq!(q.value, vec![0.0, 0.0]);
    }

    #[test]
    fn km_exact_match() {
        let cb = book(vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let q = quantize_km(&[2.0, 0.0], &cb).unwrap();
        assert_eq!(q.indices, vec![1]);
        assert_eq!(q.value, vec![2.0, 0.0]);
    }

    #[test]
    fn km_ties_break_to_lowest_index() {
        let cb = book(vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let q = quantize_km(&[1.0, 0.0], &cb).unwrap();
        assert_eq!(q.indices, vec![0]);
    }

    #[test]
    fn km_rejects_non_finite() {
        let cb = book(vec![vec![0.0]]);
        assert!(matches!(
            quantize_km(&[f64::NAN], &cb),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn gs_hand_evaluated_softmax() {
        // logits (ln 2, 0), zero noise, tau 1 -> (2/3, 1/3), hard index 0
        let (hard, p) = quantize_gs(&[2.0f64.ln(), 0.0], 1.0, &[0.0, 0.0]).unwrap();
        assert_eq!(hard, 0);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn gs_equal_logits_are_uniform_with_lowest_index() {
        for tau in [0.3, 1.0, 7.5] {
            let (hard, p) = quantize_gs(&[1.0; 5], tau, &[0.0; 5]).unwrap();
            assert_eq!(hard, 0);
            for pj in &p {
                assert!((pj - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gs_high_temperature_limit_is_uniform() {
        let (_, p) = quantize_gs(&[5.0, 0.0], 1e9, &[0.0, 0.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-8);
        assert!((p[1] - 0.5).abs() < 1e-8);
    }

    #[test]
    fn gs_rejects_non_positive_tau() {
        assert!(matches!(
            quantize_gs(&[0.0, 1.0], 0.0, &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            quantize_gs(&[0.0, 1.0], -1.0, &[0.0, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn anneal_endpoints_and_midpoint() {
        assert_eq!(anneal_tau(0, 100, 2.0, 0.5), 2.0);
        assert_eq!(anneal_tau(100, 100, 2.0, 0.5), 0.5);
        assert!((anneal_tau(50, 100, 2.0, 0.5) - 1.25).abs() < 1e-15);
    }

    #[test]
    fn sequence_of_one_frame_reduces_to_single_op() {
        let cb = book(vec![vec![0.0, 0.0], vec![2.0, 0.0]]);
        let fs = FrameSequence::new(vec![vec![0.9, 0.0]], 0.02, "t".into()).unwrap();
        let q = quantize_sequence(&fs, &cb, &QuantizerChoice::KMeans).unwrap();
        assert_eq!(q.indices(), &[vec![0]]);
        assert_eq!(q.vector(0), quantize_km(&[0.9, 0.0], &cb).unwrap().value);
        assert!(!q.is_corrected());
    }

    #[test]
    fn two_group_output_is_concatenation() {
        let cb = Codebook::new(
            vec![
                vec![vec![0.0, 0.0], vec![4.0, 4.0]],
                vec![vec![-1.0, -1.0], vec![9.0, 9.0]],
            ],
            None,
        )
        .unwrap();
        let fs = FrameSequence::new(vec![vec![4.1, 3.9, 8.5, 9.5]], 0.02, "t".into()).unwrap();
        let q = quantize_sequence(&fs, &cb, &QuantizerChoice::KMeans).unwrap();
        assert_eq!(q.indices(), &[vec![1, 1]]);
        assert_eq!(q.vector(0), &[4.0, 4.0, 9.0, 9.0]);
    }

    #[test]
    fn constant_input_gives_constant_indices() {
        let cb = book(vec![vec![0.0], vec![1.0]]);
        let fs =
            FrameSequence::new(vec![vec![0.8]; 6], 0.02, "t".into()).unwrap();
        let q = quantize_sequence(&fs, &cb, &QuantizerChoice::KMeans).unwrap();
        assert!(q.indices().iter().all(|sel| sel == &vec![1]));
    }

    #[test]
    fn sequence_dimension_mismatch_is_validation_error() {
        let cb = book(vec![vec![0.0, 0.0]]);
        let fs = FrameSequence::new(vec![vec![1.0]], 0.02, "t".into()).unwrap();
        assert!(matches!(
            quantize_sequence(&fs, &cb, &QuantizerChoice::KMeans),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn gs_sequence_is_deterministic_given_seed() {
        let cb = book(vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![-1.0, 1.0]]);
        let proj = vec![vec![vec![0.5, -0.2], vec![0.1, 0.9], vec![-0.7, 0.3]]];
        let fs = FrameSequence::new(
            vec![vec![0.2, -0.4], vec![1.0, 0.8], vec![-0.9, 1.2]],
            0.02,
            "t".into(),
        )
        .unwrap();
        let choice = QuantizerChoice::gumbel(1.0, proj, 77).unwrap();
        let a = quantize_sequence(&fs, &cb, &choice).unwrap();
        let b = quantize_sequence(&fs, &cb, &choice).unwrap();
        assert_eq!(a, b);
    }
}
