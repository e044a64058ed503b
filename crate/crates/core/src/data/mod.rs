//! Shared domain types: the phoneme inventory, frame sequences, codebooks,
//! quantized sequences, and time-aligned phoneme annotations.
//!
//! All types validate their invariants on construction and are immutable
//! afterwards; "mutation" means building a new value. That makes every
//! type safe to share across concurrent readers.

mod config;
mod io;

pub use config::{QuantScheme, TrainConfig};
pub use io::{
    load_alignment, load_boundaries, load_codebook, load_frame_sequence, load_phoneme_lines,
    save_alignment, save_boundaries, save_codebook, save_frame_sequence, FeatureFormat,
};

pub(crate) use io::Cursor as IoCursor;

pub(crate) fn io_cursor(bytes: &[u8]) -> IoCursor<'_> {
    IoCursor::new(bytes)
}

use crate::error::{Error, Result};
use crate::rng::substream;
use rand::Rng;
use rand_distr::StandardNormal;

/// Index of the silence symbol. Silence also serves as the CTC blank.
pub const SILENCE: usize = 0;

/// The 39 CMU phoneme symbols, preceded by the silence symbol.
const CMU_SYMBOLS: [&str; 40] = [
    "SIL", "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY", "F", "G",
    "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P", "R", "S", "SH", "T", "TH",
    "UH", "UW", "V", "W", "Y", "Z", "ZH",
];

/// Ordered list of the 40 unit labels: silence at slot 0, then the 39 CMU
/// phonemes. Codeword slot `v` is permanently bound to symbol `v`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
}

impl Default for PhonemeInventory {
    fn default() -> Self {
        Self::cmu()
    }
}

impl PhonemeInventory {
    /// The standard inventory: `SIL` plus the CMU phoneme set.
    pub fn cmu() -> Self {
        PhonemeInventory {
            symbols: CMU_SYMBOLS.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Build an inventory from explicit symbols. There must be exactly 40
    /// unique symbols and slot 0 must be the silence symbol `SIL`.
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.len() != 40 {
            return Err(Error::Validation(format!(
                "inventory must have exactly 40 symbols, got {}",
                symbols.len()
            )));
        }
        if symbols[SILENCE] != "SIL" {
            return Err(Error::Validation(
                "inventory slot 0 is reserved for SIL".into(),
            ));
        }
        for (i, s) in symbols.iter().enumerate() {
            if symbols[..i].contains(s) {
                return Err(Error::Validation(format!("duplicate symbol {s:?}")));
            }
        }
        Ok(PhonemeInventory { symbols })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, index: usize) -> &str {
        &self.symbols[index]
    }

    pub fn index_of(&self, symbol: &str) -> Option<usize> {
        self.symbols.iter().position(|s| s == symbol)
    }
}

/// A `T x d` matrix of frame feature vectors with frame-duration metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Vec<f64>>,
    frame_duration: f64,
    utterance_id: String,
}

impl FrameSequence {
    /// Default seconds per frame (the 20 ms hop of the usual feature rate).
    pub const DEFAULT_FRAME_DURATION: f64 = 0.02;

    pub fn new(frames: Vec<Vec<f64>>, frame_duration: f64, utterance_id: String) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Validation("frame sequence must have T >= 1".into()));
        }
        let d = frames[0].len();
        if d == 0 {
            return Err(Error::Validation("frame dimension must be d >= 1".into()));
        }
        for (t, row) in frames.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Validation(format!(
                    "frame {t} has {} values, expected {d}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("frame {t} has non-finite values")));
            }
        }
        if !(frame_duration > 0.0) || !frame_duration.is_finite() {
            return Err(Error::Validation(format!(
                "frame_duration must be positive, got {frame_duration}"
            )));
        }
        Ok(FrameSequence {
            frames,
            frame_duration,
            utterance_id,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn dim(&self) -> usize {
        self.frames[0].len()
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.frames[t]
    }

    pub fn frame_duration(&self) -> f64 {
        self.frame_duration
    }

    pub fn utterance_id(&self) -> &str {
        &self.utterance_id
    }
}

/// `G` groups of `V` codeword vectors of dimension `d_e` each, optionally
/// labeled with inventory symbols (single-group, 40-entry books only).
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Vec<Vec<Vec<f64>>>,
    labels: Option<Vec<String>>,
}

impl Codebook {
    pub fn new(entries: Vec<Vec<Vec<f64>>>, labels: Option<Vec<String>>) -> Result<Self> {
        if entries.is_empty() || entries[0].is_empty() {
            return Err(Error::Validation("codebook must be non-empty".into()));
        }
        let v = entries[0].len();
        let d = entries[0][0].len();
        if d == 0 {
            return Err(Error::Validation("codeword dimension must be >= 1".into()));
        }
        for (g, group) in entries.iter().enumerate() {
            if group.len() != v {
                return Err(Error::Validation(format!(
                    "group {g} has {} entries, expected {v}",
                    group.len()
                )));
            }
            for (k, e) in group.iter().enumerate() {
                if e.len() != d {
                    return Err(Error::Validation(format!(
                        "entry ({g},{k}) has dim {}, expected {d}",
                        e.len()
                    )));
                }
                if e.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Validation(format!(
                        "entry ({g},{k}) has non-finite values"
                    )));
                }
            }
        }
        if let Some(ref labels) = labels {
            if entries.len() != 1 {
                return Err(Error::Validation(
                    "labels are only supported for single-group codebooks".into(),
                ));
            }
            if labels.len() != v {
                return Err(Error::Validation(format!(
                    "{} labels for {v} entries",
                    labels.len()
                )));
            }
            let inventory = PhonemeInventory::cmu();
            if v != inventory.len() {
                return Err(Error::Validation(format!(
                    "labeled codebooks must have {} entries, got {v}",
                    inventory.len()
                )));
            }
            let mut seen = vec![false; inventory.len()];
            for l in labels {
                let idx = inventory
                    .index_of(l)
                    .ok_or_else(|| Error::Vocabulary(l.clone()))?;
                if seen[idx] {
                    return Err(Error::Validation(format!("duplicate label {l:?}")));
                }
                seen[idx] = true;
            }
        }
        Ok(Codebook { entries, labels })
    }

    /// Single-group codebook labeled slot-for-slot with the inventory.
    pub fn labeled(entries: Vec<Vec<f64>>, inventory: &PhonemeInventory) -> Result<Self> {
        if entries.len() != inventory.len() {
            return Err(Error::Validation(format!(
                "expected {} entries for a labeled codebook, got {}",
                inventory.len(),
                entries.len()
            )));
        }
        Codebook::new(vec![entries], Some(inventory.symbols().to_vec()))
    }

    /// Gaussian-initialized codebook (entries scaled by `scale`).
    pub fn random(groups: usize, entries_per_group: usize, dim: usize, scale: f64, seed: u64) -> Self {
        let entries = (0..groups)
            .map(|g| {
                let mut rng = substream(seed, "codebook-init", &[g as u64]);
                (0..entries_per_group)
                    .map(|_| {
                        (0..dim)
                            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Codebook {
            entries,
            labels: None,
        }
    }

    pub fn num_groups(&self) -> usize {
        self.entries.len()
    }

    pub fn entries_per_group(&self) -> usize {
        self.entries[0].len()
    }

    pub fn entry_dim(&self) -> usize {
        self.entries[0][0].len()
    }

    /// Dimension of a concatenated quantized vector: `G * d_e`.
    pub fn concat_dim(&self) -> usize {
        self.num_groups() * self.entry_dim()
    }

    pub fn entry(&self, group: usize, index: usize) -> &[f64] {
        &self.entries[group][index]
    }

    pub fn entries(&self) -> &[Vec<Vec<f64>>] {
        &self.entries
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    /// New codebook with the same labels but different entry values.
    pub fn with_entries(&self, entries: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        Codebook::new(entries, self.labels.clone())
    }
}

/// Per-frame codeword selections plus the concatenated codeword vectors.
/// `corrected` distinguishes the raw quantizer output from the output of
/// majority-vote cluster correction.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedSequence {
    indices: Vec<Vec<usize>>,
    vectors: Vec<Vec<f64>>,
    corrected: bool,
}

impl QuantizedSequence {
    /// Build from per-frame `(group -> entry)` selections; the vectors are
    /// derived from the codebook so they always match the selections.
    pub fn from_indices(
        indices: Vec<Vec<usize>>,
        codebook: &Codebook,
        corrected: bool,
    ) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("quantized sequence must have T >= 1".into()));
        }
        let groups = codebook.num_groups();
        let mut vectors = Vec::with_capacity(indices.len());
        for (t, sel) in indices.iter().enumerate() {
            if sel.len() != groups {
                return Err(Error::Validation(format!(
                    "frame {t} selects {} groups, codebook has {groups}",
                    sel.len()
                )));
            }
            let mut vec = Vec::with_capacity(codebook.concat_dim());
            for (g, &v) in sel.iter().enumerate() {
                if v >= codebook.entries_per_group() {
                    return Err(Error::Validation(format!(
                        "frame {t} group {g} selects entry {v} of {}",
                        codebook.entries_per_group()
                    )));
                }
                vec.extend_from_slice(codebook.entry(g, v));
            }
            vectors.push(vec);
        }
        Ok(QuantizedSequence {
            indices,
            vectors,
            corrected,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, t: usize) -> &[f64] {
        &self.vectors[t]
    }

    pub fn is_corrected(&self) -> bool {
        self.corrected
    }
}

/// One time-aligned phoneme segment: frames `[start, end)` carry `phoneme`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlignedSegment {
    pub start: usize,
    pub end: usize,
    pub phoneme: usize,
}

/// Time-aligned phoneme segments covering `[0, T)`, plus the collapsed
/// label sequence obtained by dropping the timing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeAlignment {
    segments: Vec<AlignedSegment>,
    collapsed: Vec<usize>,
}

impl PhonemeAlignment {
    pub fn new(segments: Vec<AlignedSegment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Validation("alignment must have >= 1 segment".into()));
        }
        if segments[0].start != 0 {
            return Err(Error::Validation(format!(
                "alignment must start at frame 0, got {}",
                segments[0].start
            )));
        }
        let mut prev_end = 0;
        for (i, seg) in segments.iter().enumerate() {
            if seg.start >= seg.end {
                return Err(Error::Validation(format!(
                    "segment {i} has start {} >= end {}",
                    seg.start, seg.end
                )));
            }
            if seg.start != prev_end {
                return Err(Error::Validation(format!(
                    "segment {i} starts at {} but previous segment ends at {prev_end}",
                    seg.start
                )));
            }
            prev_end = seg.end;
        }
        let collapsed = segments.iter().map(|s| s.phoneme).collect();
        Ok(PhonemeAlignment {
            segments,
            collapsed,
        })
    }

    pub fn segments(&self) -> &[AlignedSegment] {
        &self.segments
    }

    /// The label sequence with timing dropped (repeats are kept: two
    /// adjacent segments with the same phoneme stay two entries).
    pub fn collapsed(&self) -> &[usize] {
        &self.collapsed
    }

    pub fn num_frames(&self) -> usize {
        self.segments.last().map(|s| s.end).unwrap_or(0)
    }

    /// Interior segment boundaries: the start frame of every segment but
    /// the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inventory_has_40_unique_symbols_with_silence_first() {
        let inv = PhonemeInventory::cmu();
        assert_eq!(inv.len(), 40);
        assert_eq!(inv.symbol(SILENCE), "SIL");
        for (i, s) in inv.symbols().iter().enumerate() {
            assert_eq!(inv.index_of(s), Some(i));
        }
    }

    #[test]
    fn inventory_rejects_duplicates_and_wrong_size() {
        let mut syms: Vec<String> = PhonemeInventory::cmu().symbols().to_vec();
        syms[5] = syms[4].clone();
        assert!(PhonemeInventory::new(syms).is_err());
        assert!(PhonemeInventory::new(vec!["SIL".into(); 3]).is_err());
    }

    #[test]
    fn frame_sequence_validates() {
        assert!(FrameSequence::new(vec![], 0.02, "x".into()).is_err());
        assert!(FrameSequence::new(vec![vec![1.0], vec![1.0, 2.0]], 0.02, "x".into()).is_err());
        assert!(FrameSequence::new(vec![vec![f64::NAN]], 0.02, "x".into()).is_err());
        assert!(FrameSequence::new(vec![vec![1.0]], 0.0, "x".into()).is_err());
        let fs = FrameSequence::new(vec![vec![1.0, 2.0]], 0.02, "x".into()).unwrap();
        assert_eq!(fs.num_frames(), 1);
        assert_eq!(fs.dim(), 2);
    }

    #[test]
    fn codebook_shapes() {
        // Pipeline configuration: one group of 40 labeled entries.
        let inv = PhonemeInventory::cmu();
        let entries: Vec<Vec<f64>> = (0..40).map(|v| vec![v as f64, 0.0]).collect();
        let cb = Codebook::labeled(entries, &inv).unwrap();
        assert_eq!(cb.num_groups(), 1);
        assert_eq!(cb.entries_per_group(), 40);
        assert_eq!(cb.labels().unwrap()[SILENCE], "SIL");

        // Baseline configuration: two groups of 320 entries.
        let baseline = Codebook::random(2, 320, 8, 1.0, 3);
        assert_eq!(baseline.num_groups(), 2);
        assert_eq!(baseline.entries_per_group(), 320);
        assert_eq!(baseline.concat_dim(), 16);
        assert!(baseline.labels().is_none());
    }

    #[test]
    fn codebook_rejects_bad_labels() {
        let entries: Vec<Vec<f64>> = (0..40).map(|v| vec![v as f64]).collect();
        let mut labels: Vec<String> = PhonemeInventory::cmu().symbols().to_vec();
        labels[1] = "NOT_A_PHONE".into();
        assert!(Codebook::new(vec![entries.clone()], Some(labels)).is_err());
        // Labels on a non-40 codebook are rejected.
        let two: Vec<Vec<f64>> = vec![vec![0.0], vec![1.0]];
        assert!(Codebook::new(vec![two], Some(vec!["SIL".into(), "AA".into()])).is_err());
    }

    #[test]
    fn quantized_vectors_are_concatenated_entries() {
        let cb = Codebook::new(
            vec![
                vec![vec![0.0, 0.0], vec![1.0, 1.0]],
                vec![vec![2.0, 2.0], vec![3.0, 3.0]],
            ],
            None,
        )
        .unwrap();
        let q = QuantizedSequence::from_indices(vec![vec![1, 0]], &cb, false).unwrap();
        assert_eq!(q.vector(0), &[1.0, 1.0, 2.0, 2.0]);
        assert!(QuantizedSequence::from_indices(vec![vec![1]], &cb, false).is_err());
        assert!(QuantizedSequence::from_indices(vec![vec![1, 2]], &cb, false).is_err());
    }

    #[test]
    fn alignment_requires_contiguous_coverage() {
        let seg = |start, end, phoneme| AlignedSegment {
            start,
            end,
            phoneme,
        };
        let a = PhonemeAlignment::new(vec![seg(0, 3, 0), seg(3, 7, 1)]).unwrap();
        assert_eq!(a.collapsed(), &[0, 1]);
        assert_eq!(a.num_frames(), 7);
        assert_eq!(a.boundaries(), vec![3]);
        assert!(PhonemeAlignment::new(vec![seg(0, 3, 1), seg(4, 7, 1)]).is_err());
        assert!(PhonemeAlignment::new(vec![seg(0, 3, 1), seg(2, 7, 1)]).is_err());
        assert!(PhonemeAlignment::new(vec![seg(1, 3, 1)]).is_err());
        assert!(PhonemeAlignment::new(vec![seg(0, 0, 1)]).is_err());
    }

    #[test]
    fn collapsing_keeps_adjacent_repeats() {
        let seg = |start, end, phoneme| AlignedSegment {
            start,
            end,
            phoneme,
        };
        let a = PhonemeAlignment::new(vec![seg(0, 3, 1), seg(3, 7, 1)]).unwrap();
        assert_eq!(a.collapsed(), &[1, 1]);
    }
}
