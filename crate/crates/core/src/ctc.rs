//! Codeword-phoneme mapping through CTC alignment.
//!
//! A frame vector is softly assigned to codewords by a softmax over
//! negative Euclidean distances. The likelihood of a phoneme sequence is
//! the sum over all frame-level codeword paths that collapse to it (merge
//! repeats, then strip blanks), computed by the standard forward dynamic
//! program in log space. Slot 0 of the codebook (silence) is the blank.
//! Mapping maximizes this likelihood over the codeword vectors, leaving
//! the slot-to-symbol binding fixed.

use crate::data::{Codebook, FrameSequence, PhonemeAlignment, SILENCE};
use crate::error::{Error, Result};
use crate::par::par_map;

/// A `T x V` matrix of per-frame codeword posteriors, stored as logs.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSequence {
    log_probs: Vec<Vec<f64>>,
}

impl PosteriorSequence {
    /// Build from probabilities. Rows must sum to 1 within 1e-9 and every
    /// entry must be in (0, 1].
    pub fn from_probs(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() || probs[0].is_empty() {
            return Err(Error::Validation("posterior matrix must be non-empty".into()));
        }
        let v = probs[0].len();
        for (t, row) in probs.iter().enumerate() {
            if row.len() != v {
                return Err(Error::Validation(format!(
                    "posterior row {t} has {} entries, expected {v}",
                    row.len()
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "posterior row {t} sums to {sum}, expected 1"
                )));
            }
            if row.iter().any(|&p| !(p > 0.0 && p <= 1.0 + 1e-12)) {
                return Err(Error::Validation(format!(
                    "posterior row {t} has entries outside (0, 1]"
                )));
            }
        }
        let log_probs = probs
            .iter()
            .map(|row| row.iter().map(|p| p.ln()).collect())
            .collect();
        Ok(PosteriorSequence { log_probs })
    }

    pub(crate) fn from_log_unchecked(log_probs: Vec<Vec<f64>>) -> Self {
        PosteriorSequence { log_probs }
    }

    pub fn num_frames(&self) -> usize {
        self.log_probs.len()
    }

    pub fn num_codewords(&self) -> usize {
        self.log_probs[0].len()
    }

    pub fn log_probs(&self) -> &[Vec<f64>] {
        &self.log_probs
    }

    /// Convenience exponentiation of the stored log posteriors.
    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.log_probs
            .iter()
            .map(|row| row.iter().map(|lp| lp.exp()).collect())
            .collect()
    }
}

/// Log posterior over codewords for one frame:
/// `log P(v | z) = -|z - e_v| - logsumexp_k(-|z - e_k|)`,
/// computed with max-subtraction.
pub fn softmin_log_posterior(z: &[f64], codebook: &Codebook) -> Result<Vec<f64>> {
    if codebook.num_groups() != 1 {
        return Err(Error::Validation(
            "posterior assignment requires a single-group codebook".into(),
        ));
    }
    if z.len() != codebook.entry_dim() {
        return Err(Error::Validation(format!(
            "frame dim {} does not match codeword dim {}",
            z.len(),
            codebook.entry_dim()
        )));
    }
    let scores: Vec<f64> = codebook.entries()[0]
        .iter()
        .map(|e| {
            -z.iter()
                .zip(e)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(log_softmax_scores(&scores))
}

/// Log-softmax over raw scores with max-subtraction.
fn log_softmax_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + scores
            .iter()
            .map(|s| (s - max).exp())
            .sum::<f64>()
            .ln();
    scores.iter().map(|s| s - lse).collect()
}

/// Posterior over codewords for one frame, in probability space.
pub fn softmin_posterior(z: &[f64], codebook: &Codebook) -> Result<Vec<f64>> {
    Ok(softmin_log_posterior(z, codebook)?
        .iter()
        .map(|lp| lp.exp())
        .collect())
}

/// Posterior matrix for a whole frame sequence.
pub fn posterior_sequence(frames: &FrameSequence, codebook: &Codebook) -> Result<PosteriorSequence> {
    let mut log_probs = Vec::with_capacity(frames.num_frames());
    for t in 0..frames.num_frames() {
        log_probs.push(softmin_log_posterior(frames.frame(t), codebook)?);
    }
    Ok(PosteriorSequence::from_log_unchecked(log_probs))
}

/// Probability of one length-T codeword path: the product of the per-frame
/// posteriors along it.
pub fn path_likelihood(posteriors: &PosteriorSequence, path: &[usize]) -> Result<f64> {
    if path.len() != posteriors.num_frames() {
        return Err(Error::Validation(format!(
            "path length {} does not match T = {}",
            path.len(),
            posteriors.num_frames()
        )));
    }
    let v = posteriors.num_codewords();
    let mut log_p = 0.0;
    for (t, &label) in path.iter().enumerate() {
        if label >= v {
            return Err(Error::Validation(format!(
                "path label {label} at frame {t} is out of range (V = {v})"
            )));
        }
        log_p += posteriors.log_probs()[t][label];
    }
    Ok(log_p.exp())
}

fn lse_pair(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Blank-expanded target: `[b, y1, b, y2, ..., yS, b]`.
fn expand(y: &[usize]) -> Vec<usize> {
    let mut l = Vec::with_capacity(2 * y.len() + 1);
    l.push(SILENCE);
    for &label in y {
        l.push(label);
        l.push(SILENCE);
    }
    l
}

fn validate_target(posteriors: &PosteriorSequence, y: &[usize]) -> Result<()> {
    let v = posteriors.num_codewords();
    for &label in y {
        if label >= v {
            return Err(Error::Validation(format!(
                "target label {label} is out of range (V = {v})"
            )));
        }
        if label == SILENCE {
            return Err(Error::Domain(
                "target sequences may not contain the blank/silence symbol".into(),
            ));
        }
    }
    let repeats = y.windows(2).filter(|w| w[0] == w[1]).count();
    let required = y.len() + repeats;
    if required > posteriors.num_frames() {
        return Err(Error::Domain(format!(
            "target needs at least {required} frames, sequence has {}",
            posteriors.num_frames()
        )));
    }
    Ok(())
}

/// Log likelihood of the label sequence `y` under CTC: the log of the sum
/// over all length-T paths that collapse to `y`.
pub fn ctc_log_likelihood(posteriors: &PosteriorSequence, y: &[usize]) -> Result<f64> {
    let (log_p, _) = forward_with_alpha(posteriors, y)?;
    Ok(log_p)
}

/// CTC likelihood in probability space.
pub fn ctc_likelihood(posteriors: &PosteriorSequence, y: &[usize]) -> Result<f64> {
    Ok(ctc_log_likelihood(posteriors, y)?.exp())
}

fn forward_with_alpha(
    posteriors: &PosteriorSequence,
    y: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    validate_target(posteriors, y)?;
    let lp = posteriors.log_probs();
    let t_len = posteriors.num_frames();
    let l = expand(y);
    let n = l.len();
    let mut alpha = vec![vec![f64::NEG_INFINITY; n]; t_len];
    alpha[0][0] = lp[0][l[0]];
    if n > 1 {
        alpha[0][1] = lp[0][l[1]];
    }
    for t in 1..t_len {
        for s in 0..n {
            let mut m = alpha[t - 1][s];
            if s >= 1 {
                m = lse_pair(m, alpha[t - 1][s - 1]);
            }
            if s >= 2 && l[s] != SILENCE && l[s] != l[s - 2] {
                m = lse_pair(m, alpha[t - 1][s - 2]);
            }
            if m != f64::NEG_INFINITY {
                alpha[t][s] = lp[t][l[s]] + m;
            }
        }
    }
    let log_p = if n >= 2 {
        lse_pair(alpha[t_len - 1][n - 1], alpha[t_len - 1][n - 2])
    } else {
        alpha[t_len - 1][n - 1]
    };
    Ok((log_p, alpha))
}

/// Log likelihood plus its gradient with respect to the log posteriors,
/// obtained by running the forward recursion in reverse (exact
/// reverse-mode differentiation of the dynamic program).
pub fn ctc_grad_log_posteriors(
    posteriors: &PosteriorSequence,
    y: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let (log_p, alpha) = forward_with_alpha(posteriors, y)?;
    let t_len = posteriors.num_frames();
    let v = posteriors.num_codewords();
    let l = expand(y);
    let n = l.len();
    let mut adj = vec![vec![0.0; n]; t_len];
    // d logP / d alpha[T-1][s] for the two accepting states.
    adj[t_len - 1][n - 1] = (alpha[t_len - 1][n - 1] - log_p).exp();
    if n >= 2 {
        adj[t_len - 1][n - 2] = (alpha[t_len - 1][n - 2] - log_p).exp();
    }
    let mut grad = vec![vec![0.0; v]; t_len];
    for t in (1..t_len).rev() {
        for s in 0..n {
            let g = adj[t][s];
            if g == 0.0 || alpha[t][s] == f64::NEG_INFINITY {
                continue;
            }
            grad[t][l[s]] += g;
            // Distribute to the predecessor states with the softmax
            // weights of the log-sum-exp that produced alpha[t][s].
            let m = alpha[t][s] - posteriors.log_probs()[t][l[s]];
            let mut prevs = vec![s];
            if s >= 1 {
                prevs.push(s - 1);
            }
            if s >= 2 && l[s] != SILENCE && l[s] != l[s - 2] {
                prevs.push(s - 2);
            }
            for prev_s in prevs {
                let a = alpha[t - 1][prev_s];
                if a != f64::NEG_INFINITY {
                    adj[t - 1][prev_s] += g * (a - m).exp();
                }
            }
        }
    }
    for s in 0..n {
        if adj[0][s] != 0.0 {
            grad[0][l[s]] += adj[0][s];
        }
    }
    Ok((log_p, grad))
}

/// CTC log likelihood of `y` for an encoded frame sequence, plus its
/// gradient with respect to every codeword vector. Distances shorter than
/// 1e-8 contribute no gradient (the norm is singular there).
pub fn ctc_grad_codebook(
    frames: &FrameSequence,
    codebook: &Codebook,
    y: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let posteriors = posterior_sequence(frames, codebook)?;
    let (log_p, grad_lp) = ctc_grad_log_posteriors(&posteriors, y)?;
    let v = codebook.entries_per_group();
    let d = codebook.entry_dim();
    let probs = posteriors.probs();
    let mut grad = vec![vec![0.0; d]; v];
    for t in 0..frames.num_frames() {
        let z = frames.frame(t);
        let adj_sum: f64 = grad_lp[t].iter().sum();
        for k in 0..v {
            // Chain through log-softmax: d logP/d s_k = adj_k - p_k * sum.
            let ds = grad_lp[t][k] - probs[t][k] * adj_sum;
            if ds == 0.0 {
                continue;
            }
            let e = codebook.entry(0, k);
            let dist = z
                .iter()
                .zip(e)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist < 1e-8 {
                continue;
            }
            // s_k = -|z - e_k|, so d s_k / d e_k = (z - e_k) / |z - e_k|.
            for i in 0..d {
                grad[k][i] += ds * (z[i] - e[i]) / dist;
            }
        }
    }
    Ok((log_p, grad))
}

/// Mapping target: the collapsed alignment labels with silences removed
/// (silence is covered by blank emissions in the paths).
pub fn mapping_target(alignment: &PhonemeAlignment) -> Vec<usize> {
    alignment
        .collapsed()
        .iter()
        .copied()
        .filter(|&p| p != SILENCE)
        .collect()
}

/// Assign phoneme identities to codewords: gradient-ascend the summed CTC
/// log likelihood of the aligned label sequences over the codeword
/// vectors. The frames are taken as already encoded; only the codebook
/// moves. Slot `v` keeps symbol `v` throughout. Returns the mapped
/// codebook and the total log-likelihood trace (entry 0 is the initial
/// value, one entry per step thereafter).
pub fn map_codebook(
    pairs: &[(FrameSequence, PhonemeAlignment)],
    codebook: &Codebook,
    steps: usize,
    lr: f64,
) -> Result<(Codebook, Vec<f64>)> {
    map_codebook_threaded(pairs, codebook, steps, lr, 1)
}

/// [`map_codebook`] with per-utterance evaluation spread over `threads`
/// workers. The per-pair results are reduced in utterance order, so the
/// outcome is identical for any worker count.
pub fn map_codebook_threaded(
    pairs: &[(FrameSequence, PhonemeAlignment)],
    codebook: &Codebook,
    steps: usize,
    lr: f64,
    threads: usize,
) -> Result<(Codebook, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::Validation("mapping requires at least one pair".into()));
    }
    if codebook.num_groups() != 1 {
        return Err(Error::Validation(
            "mapping requires a single-group codebook".into(),
        ));
    }
    let targets: Vec<Vec<usize>> = pairs.iter().map(|(_, a)| mapping_target(a)).collect();
    let v = codebook.entries_per_group();
    let d = codebook.entry_dim();
    let mut entries: Vec<Vec<f64>> = codebook.entries()[0].clone();
    let mut trace = Vec::with_capacity(steps + 1);

    let evaluate = |entries: &[Vec<f64>], threads: usize| -> Result<(f64, Vec<Vec<f64>>)> {
        let book = Codebook::new(vec![entries.to_vec()], None)?;
        let results = par_map(pairs, threads, |i, (frames, _)| {
            ctc_grad_codebook(frames, &book, &targets[i])
        });
        let mut total = 0.0;
        let mut grad = vec![vec![0.0; d]; v];
        for res in results {
            let (log_p, g) = res?;
            total += log_p;
            for k in 0..v {
                for i in 0..d {
                    grad[k][i] += g[k][i];
                }
            }
        }
        Ok((total, grad))
    };

    for step in 0..steps {
        let (total, grad) = evaluate(&entries, threads)?;
        trace.push(total);
        if !total.is_finite() {
            return Err(Error::Training {
                step,
                message: format!("mapping log-likelihood became {total}"),
                trace,
            });
        }
        for k in 0..v {
            for i in 0..d {
                entries[k][i] += lr * grad[k][i];
            }
        }
        if entries
            .iter()
            .any(|e| e.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::Training {
                step,
                message: "codeword vectors became non-finite".into(),
                trace,
            });
        }
    }
    let (final_total, _) = evaluate(&entries, threads)?;
    trace.push(final_total);
    let mapped = codebook.with_entries(vec![entries])?;
    Ok((mapped, trace))
}
