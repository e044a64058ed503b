//! Training pipeline: span masking, the per-step objective (contrastive
//! masked prediction plus the risk-minimization term), source
//! pretraining with a staged codeword-mapping phase, and accent
//! adaptation with codeword-drift reporting.
//!
//! Each step is split into a non-differentiable planning stage
//! ([`plan_step`]: quantizer selections, detected segments, mask
//! positions, distractor draws, and the stop-gradient captures) and a
//! differentiable objective over that frozen plan ([`step_losses`]).
//! Gradients ([`step_gradients`]) are exact derivatives of the frozen
//! objective, which makes the whole step checkable by finite differences.

mod model;
mod synth;

pub use model::{ContextParams, EncoderParams, ModelParams, StepGrads};
pub use synth::{generate_corpus, generate_corpus_threaded, SyntheticCorpusSpec};

use std::path::Path;

use crate::ctc;
use crate::data::{
    Codebook, FrameSequence, PhonemeAlignment, QuantScheme, TrainConfig, SILENCE,
};
use crate::error::{Error, Result};
use crate::losses::{contrastive_loss_grads, total_loss};
use crate::quantizer::{anneal_tau, gs_backward_logits, gs_probs, nearest_entry, QuantizerChoice};
use crate::rng::{gumbel, substream};
use crate::segment::{
    anomaly_scores, cluster_correct, collapse_runs, detect_boundaries, min_gap_frames,
    window_vectors, SegmentSet,
};
use model::{context_backward, context_forward, encoder_backward, encoder_forward};
use model::{matvec, matvec_t, outer_acc, axpy, sgd_update};

/// Scalar losses of one training step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub contrastive: f64,
    pub rm: f64,
    pub total: f64,
}

/// Result of [`pretrain`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub codebook: Codebook,
    pub trace: Vec<LossRecord>,
}

/// Result of [`adapt`]: adapted parameters plus the per-codeword
/// displacement `e_after - e_before`.
#[derive(Debug, Clone)]
pub struct AdaptOutcome {
    pub params: ModelParams,
    pub codebook: Codebook,
    pub drift: Vec<Vec<f64>>,
    pub trace: Vec<LossRecord>,
}

/// Sampled mask positions for a sequence of `t_len` frames: span starts
/// are Bernoulli(`prob`) per frame, spans cover `span` frames, overlaps
/// union. Resamples (with a fresh substream) until at least one frame is
/// masked.
fn mask_positions(t_len: usize, prob: f64, span: usize, seed: u64, key: &[u64]) -> Vec<usize> {
    use rand::Rng;
    for attempt in 0.. {
        let mut idx = key.to_vec();
        idx.push(attempt);
        let mut rng = substream(seed, "mask", &idx);
        let mut masked = vec![false; t_len];
        for t in 0..t_len {
            if rng.random::<f64>() < prob {
                for offset in 0..span {
                    if t + offset < t_len {
                        masked[t + offset] = true;
                    }
                }
            }
        }
        let positions: Vec<usize> = (0..t_len).filter(|&t| masked[t]).collect();
        if !positions.is_empty() {
            return positions;
        }
    }
    unreachable!()
}

/// Mask a sequence: sampled spans are replaced by the mask embedding.
/// Returns the masked sequence and the sorted masked positions.
pub fn apply_mask(
    sequence: &[Vec<f64>],
    mask_embedding: &[f64],
    mask_prob: f64,
    span_len: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    if sequence.is_empty() {
        return Err(Error::Validation("cannot mask an empty sequence".into()));
    }
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(Error::Domain(format!(
            "mask_prob must be in (0, 1), got {mask_prob}"
        )));
    }
    if span_len < 1 {
        return Err(Error::Domain("span_len must be >= 1".into()));
    }
    if sequence.iter().any(|f| f.len() != mask_embedding.len()) {
        return Err(Error::Validation(
            "mask embedding dimension does not match the sequence".into(),
        ));
    }
    let positions = mask_positions(sequence.len(), mask_prob, span_len, seed, &[]);
    let mut masked = sequence.to_vec();
    for &t in &positions {
        masked[t] = mask_embedding.to_vec();
    }
    Ok((masked, positions))
}

/// The frozen, non-differentiable decisions of one training step.
#[derive(Debug, Clone)]
pub struct StepDecisions {
    pub utterance: usize,
    pub tau: f64,
    /// Raw per-frame selections (before correction).
    pub raw_indices: Vec<usize>,
    /// Majority-corrected per-frame selections.
    pub corrected_indices: Vec<usize>,
    pub segments: SegmentSet,
    /// Sorted masked frame positions.
    pub mask: Vec<usize>,
    /// Distractor frame positions, parallel to `mask`.
    pub negatives: Vec<Vec<usize>>,
    /// Per-frame Gumbel noise (Gumbel-Softmax scheme only).
    gumbel_noise: Option<Vec<Vec<f64>>>,
    /// Encoder outputs captured at the base parameters (stop-gradient).
    sg_z: Vec<Vec<f64>>,
    /// Corrected quantized vectors captured at the base parameters.
    sg_zhat: Vec<Vec<f64>>,
    /// Per-frame constant `e_corrected - soft` captured at the base
    /// parameters (Gumbel-Softmax straight-through offset).
    st_offset: Option<Vec<Vec<f64>>>,
}

fn check_trainer_shapes(
    params: &ModelParams,
    codebook: &Codebook,
    config: &TrainConfig,
) -> Result<()> {
    config.validate()?;
    if codebook.num_groups() != 1 {
        return Err(Error::Validation(
            "training requires a single-group codebook".into(),
        ));
    }
    if codebook.entry_dim() != params.model_dim() {
        return Err(Error::Validation(format!(
            "codeword dim {} does not match model dim {}",
            codebook.entry_dim(),
            params.model_dim()
        )));
    }
    if config.scheme == QuantScheme::GumbelSoftmax && params.gs_projection.is_none() {
        return Err(Error::Validation(
            "Gumbel-Softmax scheme needs a logit projection".into(),
        ));
    }
    Ok(())
}

/// Run the non-differentiable stage of one step at the current parameters:
/// encode, quantize, detect segments, majority-correct, draw the mask and
/// the distractors, and capture the stop-gradient values.
pub fn plan_step(
    params: &ModelParams,
    entries: &[Vec<f64>],
    frames: &FrameSequence,
    config: &TrainConfig,
    utterance: usize,
    step: usize,
    total_steps: usize,
) -> Result<StepDecisions> {
    use rand::Rng;
    let t_len = frames.num_frames();
    let (_, z) = encoder_forward(&params.encoder, frames.frames());
    let tau = anneal_tau(step.min(total_steps), total_steps, config.tau_start, config.tau_end);
    let v = entries.len();

    let mut raw_indices = Vec::with_capacity(t_len);
    let mut gumbel_noise = None;
    match config.scheme {
        QuantScheme::KMeans => {
            for zt in &z {
                raw_indices.push(nearest_entry(zt, entries));
            }
        }
        QuantScheme::GumbelSoftmax => {
            let proj = params.gs_projection.as_ref().ok_or_else(|| {
                Error::Validation("Gumbel-Softmax scheme needs a logit projection".into())
            })?;
            let mut noise_all = Vec::with_capacity(t_len);
            for (t, zt) in z.iter().enumerate() {
                let logits = matvec(proj, zt);
                let mut rng = substream(config.seed, "gumbel", &[utterance as u64, t as u64]);
                let noise: Vec<f64> = (0..v).map(|_| gumbel(&mut rng)).collect();
                let probs = gs_probs(&logits, tau, &noise)?;
                let mut hard = 0;
                for (j, p) in probs.iter().enumerate() {
                    if *p > probs[hard] {
                        hard = j;
                    }
                }
                raw_indices.push(hard);
                noise_all.push(noise);
            }
            gumbel_noise = Some(noise_all);
        }
    }

    // Cluster correction on the quantized sequence.
    let book = Codebook::new(vec![entries.to_vec()], None)?;
    let qseq = crate::data::QuantizedSequence::from_indices(
        raw_indices.iter().map(|&i| vec![i]).collect(),
        &book,
        false,
    )?;
    let segments = if t_len >= 2 {
        let windows = window_vectors(&qseq, config.win)?;
        let scores = anomaly_scores(&windows, config.k_neighbors)?;
        let min_gap = min_gap_frames(config.min_peak_gap, frames.frame_duration());
        detect_boundaries(&scores, min_gap)?
    } else {
        SegmentSet::new(vec![], t_len)?
    };
    let corrected = cluster_correct(&qseq, &segments, &book)?;
    let corrected_indices: Vec<usize> = corrected.indices().iter().map(|sel| sel[0]).collect();

    let mask = mask_positions(
        t_len,
        config.mask_prob,
        config.mask_span,
        config.seed,
        &[utterance as u64],
    );
    let mut negatives = Vec::with_capacity(mask.len());
    for &t in &mask {
        let others: Vec<usize> = mask.iter().copied().filter(|&m| m != t).collect();
        let n = config.num_negatives.min(others.len());
        let mut pool = others;
        let mut rng = substream(config.seed, "negatives", &[utterance as u64, t as u64]);
        let mut draws = Vec::with_capacity(n);
        for _ in 0..n {
            let pick = rng.random_range(0..pool.len());
            draws.push(pool.swap_remove(pick));
        }
        negatives.push(draws);
    }

    let sg_zhat: Vec<Vec<f64>> = corrected_indices
        .iter()
        .map(|&ci| entries[ci].clone())
        .collect();
    let st_offset = gumbel_noise.as_ref().map(|noise_all| {
        let proj = params.gs_projection.as_ref().unwrap();
        z.iter()
            .enumerate()
            .map(|(t, zt)| {
                let logits = matvec(proj, zt);
                let probs = gs_probs(&logits, tau, &noise_all[t]).unwrap();
                let mut soft = vec![0.0; entries[0].len()];
                for (p, e) in probs.iter().zip(entries) {
                    axpy(&mut soft, *p, e);
                }
                sg_zhat[t]
                    .iter()
                    .zip(&soft)
                    .map(|(hard, s)| hard - s)
                    .collect()
            })
            .collect()
    });

    Ok(StepDecisions {
        utterance,
        tau,
        raw_indices,
        corrected_indices,
        segments,
        mask,
        negatives,
        gumbel_noise,
        sg_z: z,
        sg_zhat,
        st_offset,
    })
}

struct ForwardCache {
    h: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    /// Straight-through corrected quantized vectors.
    zhat_st: Vec<Vec<f64>>,
    /// Gumbel-Softmax probabilities per frame (GS scheme only).
    probs: Option<Vec<Vec<f64>>>,
    u: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    l_contrastive: f64,
    l_rm: f64,
}

fn forward(
    params: &ModelParams,
    entries: &[Vec<f64>],
    frames: &FrameSequence,
    decisions: &StepDecisions,
    config: &TrainConfig,
) -> Result<ForwardCache> {
    let t_len = frames.num_frames();
    let de = params.model_dim();
    let (h, z) = encoder_forward(&params.encoder, frames.frames());

    let mut zhat_st = Vec::with_capacity(t_len);
    let mut probs_all = None;
    match config.scheme {
        QuantScheme::KMeans => {
            // zhat = z + e_corrected - sg(z).
            for t in 0..t_len {
                let e = &entries[decisions.corrected_indices[t]];
                let row: Vec<f64> = (0..de)
                    .map(|i| z[t][i] + e[i] - decisions.sg_z[t][i])
                    .collect();
                zhat_st.push(row);
            }
        }
        QuantScheme::GumbelSoftmax => {
            // zhat = soft(theta) + (e_corrected - soft) frozen at base.
            let proj = params.gs_projection.as_ref().ok_or_else(|| {
                Error::Validation("Gumbel-Softmax scheme needs a logit projection".into())
            })?;
            let noise_all = decisions.gumbel_noise.as_ref().ok_or_else(|| {
                Error::Validation("step decisions carry no Gumbel noise".into())
            })?;
            let offsets = decisions.st_offset.as_ref().ok_or_else(|| {
                Error::Validation("step decisions carry no straight-through offset".into())
            })?;
            let mut probs_cache = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let logits = matvec(proj, &z[t]);
                let probs = gs_probs(&logits, decisions.tau, &noise_all[t])?;
                let mut soft = vec![0.0; de];
                for (p, e) in probs.iter().zip(entries) {
                    axpy(&mut soft, *p, e);
                }
                let row: Vec<f64> = soft.iter().zip(&offsets[t]).map(|(s, o)| s + o).collect();
                zhat_st.push(row);
                probs_cache.push(probs);
            }
            probs_all = Some(probs_cache);
        }
    }

    let u: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            if decisions.mask.binary_search(&t).is_ok() {
                params.mask_embedding.clone()
            } else {
                zhat_st[t].clone()
            }
        })
        .collect();
    let c = context_forward(&params.context, &u);

    let weight = 1.0 / decisions.mask.len() as f64;
    let mut l_contrastive = 0.0;
    let mut l_rm = 0.0;
    for (mi, &t) in decisions.mask.iter().enumerate() {
        let distractors: Vec<Vec<f64>> = decisions.negatives[mi]
            .iter()
            .map(|&n| zhat_st[n].clone())
            .collect();
        let (loss, _, _, _) =
            contrastive_loss_grads(&c[t], &zhat_st[t], &distractors, config.kappa)?;
        l_contrastive += weight * loss;

        // Risk-minimization with the stop-gradient captures: the first
        // term sees the codeword value, the second the encoder output.
        let e = &entries[decisions.corrected_indices[t]];
        let dist1 = decisions.sg_z[t]
            .iter()
            .zip(e)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dist2 = z[t]
            .iter()
            .zip(&decisions.sg_zhat[t])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        l_rm += weight * (dist1 + config.beta * dist2);
    }

    Ok(ForwardCache {
        h,
        z,
        zhat_st,
        probs: probs_all,
        u,
        c,
        l_contrastive,
        l_rm,
    })
}

/// Evaluate the differentiable step objective over a frozen plan. Returns
/// `(l_contrastive, l_rm)`; the total is `l_contrastive + gamma * l_rm`.
pub fn step_losses(
    params: &ModelParams,
    entries: &[Vec<f64>],
    frames: &FrameSequence,
    decisions: &StepDecisions,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let cache = forward(params, entries, frames, decisions, config)?;
    Ok((cache.l_contrastive, cache.l_rm))
}

/// Losses plus the exact gradients of `l_contrastive + gamma * l_rm` over
/// the frozen plan.
pub fn step_gradients(
    params: &ModelParams,
    entries: &[Vec<f64>],
    frames: &FrameSequence,
    decisions: &StepDecisions,
    config: &TrainConfig,
) -> Result<(f64, f64, StepGrads)> {
    let cache = forward(params, entries, frames, decisions, config)?;
    let t_len = frames.num_frames();
    let de = params.model_dim();
    let mut grads = StepGrads::zeros(params, entries.len());
    let mut grad_z = vec![vec![0.0; de]; t_len];
    let mut grad_zhat_st = vec![vec![0.0; de]; t_len];
    let mut grad_c = vec![vec![0.0; de]; t_len];

    let weight = 1.0 / decisions.mask.len() as f64;
    for (mi, &t) in decisions.mask.iter().enumerate() {
        let distractors: Vec<Vec<f64>> = decisions.negatives[mi]
            .iter()
            .map(|&n| cache.zhat_st[n].clone())
            .collect();
        let (_, gc, gtrue, gdist) =
            contrastive_loss_grads(&cache.c[t], &cache.zhat_st[t], &distractors, config.kappa)?;
        axpy(&mut grad_c[t], weight, &gc);
        axpy(&mut grad_zhat_st[t], weight, &gtrue);
        for (&n, gd) in decisions.negatives[mi].iter().zip(&gdist) {
            axpy(&mut grad_zhat_st[n], weight, gd);
        }

        // Risk-minimization gradients (clipped at the norm singularity).
        let gw = config.gamma * weight;
        let e = &entries[decisions.corrected_indices[t]];
        let diff1: Vec<f64> = e
            .iter()
            .zip(&decisions.sg_z[t])
            .map(|(ei, zi)| ei - zi)
            .collect();
        let dist1 = diff1.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dist1 >= 1e-8 {
            for i in 0..de {
                grads.codebook[decisions.corrected_indices[t]][i] += gw * diff1[i] / dist1;
            }
        }
        let diff2: Vec<f64> = cache.z[t]
            .iter()
            .zip(&decisions.sg_zhat[t])
            .map(|(zi, ei)| zi - ei)
            .collect();
        let dist2 = diff2.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dist2 >= 1e-8 {
            for i in 0..de {
                grad_z[t][i] += gw * config.beta * diff2[i] / dist2;
            }
        }
    }

    // Context network: direct gradients on c_t flow back to the inputs.
    let grad_u = context_backward(&params.context, &cache.u, &cache.c, &grad_c, &mut grads.context);
    for t in 0..t_len {
        if decisions.mask.binary_search(&t).is_ok() {
            axpy(&mut grads.mask_embedding, 1.0, &grad_u[t]);
        } else {
            axpy(&mut grad_zhat_st[t], 1.0, &grad_u[t]);
        }
    }

    // Straight-through quantizer backward.
    match config.scheme {
        QuantScheme::KMeans => {
            for t in 0..t_len {
                axpy(&mut grad_z[t], 1.0, &grad_zhat_st[t]);
                axpy(
                    &mut grads.codebook[decisions.corrected_indices[t]],
                    1.0,
                    &grad_zhat_st[t],
                );
            }
        }
        QuantScheme::GumbelSoftmax => {
            let proj = params.gs_projection.as_ref().unwrap();
            let probs_all = cache.probs.as_ref().unwrap();
            let grads_proj = grads.gs_projection.as_mut().unwrap();
            for t in 0..t_len {
                let g = &grad_zhat_st[t];
                let probs = &probs_all[t];
                // soft = sum_j p_j e_j.
                let mut grad_p = vec![0.0; entries.len()];
                for (j, e) in entries.iter().enumerate() {
                    axpy(&mut grads.codebook[j], probs[j], g);
                    grad_p[j] = e.iter().zip(g).map(|(ei, gi)| ei * gi).sum();
                }
                let grad_logits = gs_backward_logits(probs, decisions.tau, &grad_p);
                outer_acc(grads_proj, &grad_logits, &cache.z[t]);
                axpy(&mut grad_z[t], 1.0, &matvec_t(proj, &grad_logits));
            }
        }
    }

    encoder_backward(
        &params.encoder,
        frames.frames(),
        &cache.h,
        &grad_z,
        &mut grads.encoder,
    );
    Ok((cache.l_contrastive, cache.l_rm, grads))
}

enum Phase<'a> {
    Pretrain {
        pairs: &'a [(FrameSequence, PhonemeAlignment)],
    },
    Adapt,
}

fn run_training(
    features: &[&FrameSequence],
    phase: Phase<'_>,
    params0: &ModelParams,
    codebook0: &Codebook,
    config: &TrainConfig,
) -> Result<(ModelParams, Codebook, Vec<LossRecord>)> {
    check_trainer_shapes(params0, codebook0, config)?;
    if features.is_empty() {
        return Err(Error::Validation("training corpus is empty".into()));
    }
    let mut params = params0.clone();
    let mut entries: Vec<Vec<f64>> = codebook0.entries()[0].clone();
    let mut trace: Vec<LossRecord> = Vec::with_capacity(config.steps);
    let map_at = match phase {
        Phase::Pretrain { .. } => (config.warmup_frac * config.steps as f64).floor() as usize,
        Phase::Adapt => usize::MAX,
    };

    let run_mapping = |params: &ModelParams, entries: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        let Phase::Pretrain { pairs } = &phase else {
            return Ok(entries.to_vec());
        };
        let book = codebook0.with_entries(vec![entries.to_vec()])?;
        let encoded: Vec<(FrameSequence, PhonemeAlignment)> = pairs
            .iter()
            .map(|(f, a)| Ok((params.encode(f)?, a.clone())))
            .collect::<Result<_>>()?;
        let (mapped, _) = ctc::map_codebook(&encoded, &book, config.map_steps, config.map_lr)?;
        Ok(mapped.entries()[0].clone())
    };

    for step in 0..config.steps {
        if step == map_at {
            entries = run_mapping(&params, &entries)?;
        }
        let utterance = step % features.len();
        let frames = features[utterance];
        let decisions = plan_step(
            &params,
            &entries,
            frames,
            config,
            utterance,
            step,
            config.steps,
        )?;
        let (lc, lrm, grads) = step_gradients(&params, &entries, frames, &decisions, config)?;
        let total = total_loss(lc, lrm, config.gamma);
        trace.push(LossRecord {
            step,
            contrastive: lc,
            rm: lrm,
            total,
        });
        if !total.is_finite() || !grads.is_finite() {
            return Err(Error::Training {
                step,
                message: "objective or gradients became non-finite".into(),
                trace: trace.iter().map(|r| r.total).collect(),
            });
        }
        sgd_update(&mut params, &mut entries, &grads, config.learning_rate);
    }
    if map_at >= config.steps && matches!(phase, Phase::Pretrain { .. }) {
        entries = run_mapping(&params, &entries)?;
    }
    let codebook = codebook0.with_entries(vec![entries])?;
    Ok((params, codebook, trace))
}

/// Source pretraining: per step encode, quantize, cluster-correct, mask,
/// contextualize, evaluate the total objective, and apply an SGD update.
/// The codeword-mapping phase runs once after `warmup_frac` of the steps,
/// consuming the corpus alignments; labels stay bound to slots.
pub fn pretrain(
    corpus: &[(FrameSequence, PhonemeAlignment)],
    params: &ModelParams,
    codebook: &Codebook,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let features: Vec<&FrameSequence> = corpus.iter().map(|(f, _)| f).collect();
    let (params, codebook, trace) = run_training(
        &features,
        Phase::Pretrain { pairs: corpus },
        params,
        codebook,
        config,
    )?;
    Ok(TrainOutcome {
        params,
        codebook,
        trace,
    })
}

/// Accent adaptation: the same training loop on target-domain features
/// (no mapping phase, no labels needed). Returns the per-codeword
/// displacement for drift analysis.
pub fn adapt(
    corpus_target: &[FrameSequence],
    params: &ModelParams,
    codebook: &Codebook,
    config: &TrainConfig,
) -> Result<AdaptOutcome> {
    let features: Vec<&FrameSequence> = corpus_target.iter().collect();
    let before = codebook.entries()[0].clone();
    let (params, codebook, trace) =
        run_training(&features, Phase::Adapt, params, codebook, config)?;
    let drift = codebook.entries()[0]
        .iter()
        .zip(&before)
        .map(|(after, before)| after.iter().zip(before).map(|(a, b)| a - b).collect())
        .collect();
    Ok(AdaptOutcome {
        params,
        codebook,
        drift,
        trace,
    })
}

/// Decode one utterance to a collapsed codeword-index sequence: encode,
/// nearest-codeword quantize, cluster-correct, and collapse runs.
pub fn transcribe(
    params: &ModelParams,
    codebook: &Codebook,
    config: &TrainConfig,
    frames: &FrameSequence,
) -> Result<Vec<usize>> {
    let z = params.encode(frames)?;
    let q = crate::quantizer::quantize_sequence(&z, codebook, &QuantizerChoice::KMeans)?;
    let segments = if q.num_frames() >= 2 {
        let windows = window_vectors(&q, config.win)?;
        let scores = anomaly_scores(&windows, config.k_neighbors)?;
        let min_gap = min_gap_frames(config.min_peak_gap, frames.frame_duration());
        detect_boundaries(&scores, min_gap)?
    } else {
        SegmentSet::new(vec![], q.num_frames())?
    };
    let corrected = cluster_correct(&q, &segments, codebook)?;
    let runs = collapse_runs(&corrected);
    Ok(runs
        .segments()
        .iter()
        .map(|&(start, _)| corrected.indices()[start][0])
        .collect())
}

/// Pooled phoneme error rate of the decoder over an aligned corpus:
/// total edits divided by total reference length.
pub fn corpus_per(
    params: &ModelParams,
    codebook: &Codebook,
    config: &TrainConfig,
    corpus: &[(FrameSequence, PhonemeAlignment)],
) -> Result<f64> {
    let mut edits = 0usize;
    let mut ref_len = 0usize;
    for (frames, alignment) in corpus {
        let hyp = transcribe(params, codebook, config, frames)?;
        let reference = alignment.collapsed();
        let (_, counts) = crate::eval::per(reference, &hyp)?;
        edits += counts.total();
        ref_len += reference.len();
    }
    Ok(edits as f64 / ref_len as f64)
}

/// Mean `|z_t - zhat_t|` of the corrected quantization over a corpus.
pub fn mean_quantization_gap(
    params: &ModelParams,
    codebook: &Codebook,
    config: &TrainConfig,
    corpus: &[FrameSequence],
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for frames in corpus {
        let z = params.encode(frames)?;
        let q = crate::quantizer::quantize_sequence(&z, codebook, &QuantizerChoice::KMeans)?;
        let segments = if q.num_frames() >= 2 {
            let windows = window_vectors(&q, config.win)?;
            let scores = anomaly_scores(&windows, config.k_neighbors)?;
            let min_gap = min_gap_frames(config.min_peak_gap, frames.frame_duration());
            detect_boundaries(&scores, min_gap)?
        } else {
            SegmentSet::new(vec![], q.num_frames())?
        };
        let corrected = cluster_correct(&q, &segments, codebook)?;
        for t in 0..z.num_frames() {
            let gap = z
                .frame(t)
                .iter()
                .zip(corrected.vector(t))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            total += gap;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PVQC";
const CHECKPOINT_VERSION: u32 = 1;

/// A versioned training snapshot: configuration, model parameters, the
/// codebook, and the RNG position (master seed plus completed steps).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub codebook: Codebook,
    pub completed_steps: u64,
}

fn push_matrix(bytes: &mut Vec<u8>, m: &[Vec<f64>]) {
    bytes.extend_from_slice(&(m.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.first().map(|r| r.len()).unwrap_or(0) as u32).to_le_bytes());
    for row in m {
        for &x in row {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
    }
}

fn push_vector(bytes: &mut Vec<u8>, v: &[f64]) {
    bytes.extend_from_slice(&(v.len() as u32).to_le_bytes());
    for &x in v {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
}

/// Write a checkpoint file.
pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let kv = checkpoint.config.to_kv_string();
    bytes.extend_from_slice(&(kv.len() as u32).to_le_bytes());
    bytes.extend_from_slice(kv.as_bytes());
    bytes.extend_from_slice(&checkpoint.completed_steps.to_le_bytes());
    let p = &checkpoint.params;
    push_matrix(&mut bytes, &p.encoder.w1);
    push_vector(&mut bytes, &p.encoder.b1);
    push_matrix(&mut bytes, &p.encoder.w2);
    push_vector(&mut bytes, &p.encoder.b2);
    push_matrix(&mut bytes, &p.context.w_in);
    push_matrix(&mut bytes, &p.context.w_rec);
    push_vector(&mut bytes, &p.context.b);
    push_vector(&mut bytes, &p.mask_embedding);
    match &p.gs_projection {
        Some(proj) => {
            bytes.push(1);
            push_matrix(&mut bytes, proj);
        }
        None => bytes.push(0),
    }
    let cb = &checkpoint.codebook;
    push_matrix(&mut bytes, &cb.entries()[0]);
    match cb.labels() {
        Some(labels) => {
            bytes.push(1);
            bytes.extend_from_slice(&(labels.len() as u32).to_le_bytes());
            for l in labels {
                let b = l.as_bytes();
                bytes.extend_from_slice(&(b.len() as u32).to_le_bytes());
                bytes.extend_from_slice(b);
            }
        }
        None => bytes.push(0),
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Read a checkpoint file.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut cur = crate::data::io_cursor(&bytes);
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let kv_len = cur.u32()? as usize;
    let kv = String::from_utf8(cur.take(kv_len)?.to_vec())
        .map_err(|_| Error::Format("config block is not valid UTF-8".into()))?;
    let config = TrainConfig::from_kv_str(&kv)?;
    let completed_steps = cur.u64()?;
    fn read_matrix(cur: &mut crate::data::IoCursor<'_>) -> Result<Vec<Vec<f64>>> {
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let mut m = Vec::with_capacity(rows);
        for _ in 0..rows {
            let mut row = Vec::with_capacity(cols);
            for _ in 0..cols {
                row.push(cur.f64()?);
            }
            m.push(row);
        }
        Ok(m)
    }
    fn read_vector(cur: &mut crate::data::IoCursor<'_>) -> Result<Vec<f64>> {
        let len = cur.u32()? as usize;
        let mut v = Vec::with_capacity(len);
        for _ in 0..len {
            v.push(cur.f64()?);
        }
        Ok(v)
    }
    let w1 = read_matrix(&mut cur)?;
    let b1 = read_vector(&mut cur)?;
    let w2 = read_matrix(&mut cur)?;
    let b2 = read_vector(&mut cur)?;
    let w_in = read_matrix(&mut cur)?;
    let w_rec = read_matrix(&mut cur)?;
    let b = read_vector(&mut cur)?;
    let mask_embedding = read_vector(&mut cur)?;
    let gs_projection = match cur.u8()? {
        0 => None,
        1 => Some(read_matrix(&mut cur)?),
        other => return Err(Error::Format(format!("bad projection flag {other}"))),
    };
    let entries = read_matrix(&mut cur)?;
    let labels = match cur.u8()? {
        0 => None,
        1 => {
            let count = cur.u32()? as usize;
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                let len = cur.u32()? as usize;
                labels.push(
                    String::from_utf8(cur.take(len)?.to_vec())
                        .map_err(|_| Error::Format("label is not valid UTF-8".into()))?,
                );
            }
            Some(labels)
        }
        other => return Err(Error::Format(format!("bad label flag {other}"))),
    };
    cur.expect_end()?;
    let params = ModelParams {
        encoder: EncoderParams { w1, b1, w2, b2 },
        context: ContextParams { w_in, w_rec, b },
        mask_embedding,
        gs_projection,
    };
    params.validate()?;
    let codebook = Codebook::new(vec![entries], labels)?;
    Ok(Checkpoint {
        config,
        params,
        codebook,
        completed_steps,
    })
}

/// Labeled codebook of the default inventory with Gaussian entries.
pub fn initial_codebook(config: &TrainConfig) -> Result<Codebook> {
    let inventory = crate::data::PhonemeInventory::cmu();
    let random = Codebook::random(1, inventory.len(), config.model_dim, 1.0, config.seed);
    Codebook::labeled(random.entries()[0].clone(), &inventory)
}

/// Mapping target helper re-exported for pipelines that strip silences.
pub fn strip_silence(labels: &[usize]) -> Vec<usize> {
    labels.iter().copied().filter(|&l| l != SILENCE).collect()
}
