//! Synthetic accent-shift corpora: random phoneme sequences whose frames
//! are drawn around per-phoneme anchor vectors, with optional per-phoneme
//! accent offsets for the target domain. The generator records the ground
//! truth alignment, which makes end-to-end behavior verifiable.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{AlignedSegment, FrameSequence, PhonemeAlignment, PhonemeInventory};
use crate::error::{Error, Result};
use crate::par::par_map;
use crate::rng::substream;

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpusSpec {
    /// One anchor vector per inventory symbol (40 x input_dim).
    pub anchors: Vec<Vec<f64>>,
    /// Closed frame-count range for each segment (min >= 3: few phonemes
    /// are shorter than 60 ms).
    pub duration_range: (usize, usize),
    /// Closed range for the number of segments per utterance.
    pub segments_range: (usize, usize),
    /// Standard deviation of the additive Gaussian frame noise.
    pub noise_scale: f64,
    /// Per-phoneme accent offsets (zero for the source domain).
    pub accent_offsets: Vec<Vec<f64>>,
    pub utterances: usize,
    pub frame_duration: f64,
    pub seed: u64,
}

impl SyntheticCorpusSpec {
    /// Source-domain spec with Gaussian anchors of the given scale and
    /// zero accent offsets.
    pub fn source(dim: usize, anchor_scale: f64, utterances: usize, seed: u64) -> Self {
        let inventory_size = PhonemeInventory::cmu().len();
        let mut rng = substream(seed, "anchors", &[]);
        let anchors = (0..inventory_size)
            .map(|_| {
                (0..dim)
                    .map(|_| anchor_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        SyntheticCorpusSpec {
            anchors,
            duration_range: (3, 8),
            segments_range: (4, 8),
            noise_scale: 0.1,
            accent_offsets: vec![vec![0.0; dim]; inventory_size],
            utterances,
            frame_duration: FrameSequence::DEFAULT_FRAME_DURATION,
            seed,
        }
    }

    /// Copy of this spec with one phoneme's anchor shifted by `offset`.
    pub fn with_shift(&self, phoneme: usize, offset: Vec<f64>) -> Self {
        let mut spec = self.clone();
        spec.accent_offsets[phoneme] = offset;
        spec
    }

    /// A deterministic unit direction scaled by `distance`, for shifting
    /// one phoneme without hand-picking a vector.
    pub fn shift_vector(&self, phoneme: usize, distance: f64) -> Vec<f64> {
        let dim = self.anchors[0].len();
        let mut rng = substream(self.seed, "shift-direction", &[phoneme as u64]);
        let raw: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        raw.iter().map(|x| distance * x / norm).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let inventory_size = PhonemeInventory::cmu().len();
        if self.anchors.len() != inventory_size {
            return Err(Error::Validation(format!(
                "expected {inventory_size} anchors, got {}",
                self.anchors.len()
            )));
        }
        let dim = self.anchors[0].len();
        if dim == 0 {
            return Err(Error::Validation("anchor dimension must be >= 1".into()));
        }
        for (i, a) in self.anchors.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::Validation(format!("anchor {i} has wrong dim")));
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("anchor {i} is non-finite")));
            }
            for (j, b) in self.anchors.iter().enumerate().take(i) {
                if a == b {
                    return Err(Error::Validation(format!("anchors {j} and {i} coincide")));
                }
            }
        }
        if self.accent_offsets.len() != inventory_size
            || self.accent_offsets.iter().any(|o| o.len() != dim)
        {
            return Err(Error::Validation("accent offsets must be 40 x dim".into()));
        }
        if self.duration_range.0 < 3 || self.duration_range.0 > self.duration_range.1 {
            return Err(Error::Validation(
                "duration range must satisfy 3 <= min <= max".into(),
            ));
        }
        if self.segments_range.0 < 1 || self.segments_range.0 > self.segments_range.1 {
            return Err(Error::Validation(
                "segments range must satisfy 1 <= min <= max".into(),
            ));
        }
        if self.utterances == 0 {
            return Err(Error::Validation("utterance count must be >= 1".into()));
        }
        if !(self.noise_scale >= 0.0) || !(self.frame_duration > 0.0) {
            return Err(Error::Validation("bad noise scale or frame duration".into()));
        }
        Ok(())
    }
}

fn range_draw(rng: &mut impl Rng, range: (usize, usize)) -> usize {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..=range.1)
    }
}

/// Generate the corpus: each utterance is a random phoneme sequence (no
/// immediate repeats); the frames of phoneme `p` are
/// `anchor_p + accent_offset_p + noise`.
pub fn generate_corpus(
    spec: &SyntheticCorpusSpec,
) -> Result<Vec<(FrameSequence, PhonemeAlignment)>> {
    generate_corpus_threaded(spec, 1)
}

/// [`generate_corpus`] over multiple workers. Every utterance has its own
/// substream, so the corpus is identical for any worker count.
pub fn generate_corpus_threaded(
    spec: &SyntheticCorpusSpec,
    threads: usize,
) -> Result<Vec<(FrameSequence, PhonemeAlignment)>> {
    spec.validate()?;
    let inventory_size = spec.anchors.len();
    let ids: Vec<usize> = (0..spec.utterances).collect();
    let utterances = par_map(&ids, threads, |_, &u| {
        let mut rng = substream(spec.seed, "corpus-utt", &[u as u64]);
        let num_segments = range_draw(&mut rng, spec.segments_range);
        let mut segments = Vec::with_capacity(num_segments);
        let mut frames = Vec::new();
        let mut prev_phoneme = usize::MAX;
        for _ in 0..num_segments {
            let mut phoneme = rng.random_range(0..inventory_size);
            while phoneme == prev_phoneme {
                phoneme = rng.random_range(0..inventory_size);
            }
            prev_phoneme = phoneme;
            let duration = range_draw(&mut rng, spec.duration_range);
            let start = frames.len();
            for _ in 0..duration {
                let frame: Vec<f64> = spec.anchors[phoneme]
                    .iter()
                    .zip(&spec.accent_offsets[phoneme])
                    .map(|(a, o)| a + o + spec.noise_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                frames.push(frame);
            }
            segments.push(AlignedSegment {
                start,
                end: frames.len(),
                phoneme,
            });
        }
        let sequence = FrameSequence::new(
            frames,
            spec.frame_duration,
            format!("utt_{u:04}"),
        )?;
        let alignment = PhonemeAlignment::new(segments)?;
        Ok((sequence, alignment))
    });
    utterances.into_iter().collect()
}
