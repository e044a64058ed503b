//! File formats: feature matrices (CSV and raw binary), alignment text
//! files, codebook binaries, and boundary lists.
//!
//! CSV floats are written with the shortest round-tripping representation,
//! so save-then-load reproduces values bit for bit. The raw binary feature
//! format stores 32-bit floats; values must be f32-representable to round
//! trip exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{AlignedSegment, Codebook, FrameSequence, PhonemeAlignment, PhonemeInventory};
use crate::error::{Error, Result};

/// On-disk layout of a feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    /// Text: optional `# d=.. frame_duration=.. utterance_id=..` header,
    /// then one comma-separated row per frame.
    Csv,
    /// Little-endian binary: `T: u32, d: u32, frame_duration: f32`, then
    /// `T*d` row-major f32 values.
    RawBinary,
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Load a feature matrix as a validated [`FrameSequence`].
pub fn load_frame_sequence(path: &Path, format: FeatureFormat) -> Result<FrameSequence> {
    match format {
        FeatureFormat::Csv => load_csv(path),
        FeatureFormat::RawBinary => load_binary(path),
    }
}

/// Write a feature matrix in the given format.
pub fn save_frame_sequence(path: &Path, seq: &FrameSequence, format: FeatureFormat) -> Result<()> {
    match format {
        FeatureFormat::Csv => save_csv(path, seq),
        FeatureFormat::RawBinary => save_binary(path, seq),
    }
}

fn load_csv(path: &Path) -> Result<FrameSequence> {
    let text = fs::read_to_string(path)?;
    let mut d: Option<usize> = None;
    let mut frame_duration = FrameSequence::DEFAULT_FRAME_DURATION;
    let mut utterance_id = stem_of(path);
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('#') {
            for token in line.trim_start_matches('#').split_whitespace() {
                let Some((key, value)) = token.split_once('=') else {
                    return Err(Error::Format(format!(
                        "line {}: bad header token {token:?}",
                        lineno + 1
                    )));
                };
                match key {
                    "d" => {
                        d = Some(value.parse().map_err(|_| {
                            Error::Format(format!("bad d value {value:?}"))
                        })?)
                    }
                    "frame_duration" => {
                        frame_duration = value.parse().map_err(|_| {
                            Error::Format(format!("bad frame_duration value {value:?}"))
                        })?
                    }
                    "utterance_id" => utterance_id = value.to_string(),
                    other => {
                        return Err(Error::Format(format!("unknown header key {other:?}")))
                    }
                }
            }
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number {cell:?}", lineno + 1)))
            })
            .collect::<Result<_>>()?;
        let expected = *d.get_or_insert(row.len());
        if row.len() != expected {
            return Err(Error::Format(format!(
                "line {}: row has {} values, expected {expected}",
                lineno + 1,
                row.len()
            )));
        }
        frames.push(row);
    }
    FrameSequence::new(frames, frame_duration, utterance_id)
}

fn save_csv(path: &Path, seq: &FrameSequence) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "# d={} frame_duration={} utterance_id={}\n",
        seq.dim(),
        seq.frame_duration(),
        seq.utterance_id()
    ));
    for row in seq.frames() {
        let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

fn load_binary(path: &Path) -> Result<FrameSequence> {
    let mut file = fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.len() < 12 {
        return Err(Error::Format("binary feature file shorter than header".into()));
    }
    let t = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let frame_duration = f32::from_le_bytes(bytes[8..12].try_into().unwrap()) as f64;
    let expected = 12 + 4 * t * d;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "binary feature file has {} bytes, expected {expected} for {t}x{d}",
            bytes.len()
        )));
    }
    let mut frames = Vec::with_capacity(t);
    let mut off = 12;
    for _ in 0..t {
        let mut row = Vec::with_capacity(d);
        for _ in 0..d {
            row.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
            off += 4;
        }
        frames.push(row);
    }
    FrameSequence::new(frames, frame_duration, stem_of(path))
}

fn save_binary(path: &Path, seq: &FrameSequence) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + 4 * seq.num_frames() * seq.dim());
    bytes.extend_from_slice(&(seq.num_frames() as u32).to_le_bytes());
    bytes.extend_from_slice(&(seq.dim() as u32).to_le_bytes());
    bytes.extend_from_slice(&(seq.frame_duration() as f32).to_le_bytes());
    for row in seq.frames() {
        for &x in row {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Parse a time-aligned phoneme file: one `start_frame end_frame SYMBOL`
/// line per segment, contiguous from frame 0.
pub fn load_alignment(path: &Path, inventory: &PhonemeInventory) -> Result<PhonemeAlignment> {
    let text = fs::read_to_string(path)?;
    let mut segments = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(Error::Format(format!(
                "line {}: expected 'start end SYMBOL', got {raw:?}",
                lineno + 1
            )));
        }
        let start: usize = parts[0]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad start frame", lineno + 1)))?;
        let end: usize = parts[1]
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad end frame", lineno + 1)))?;
        let phoneme = inventory
            .index_of(parts[2])
            .ok_or_else(|| Error::Vocabulary(parts[2].to_string()))?;
        segments.push(AlignedSegment {
            start,
            end,
            phoneme,
        });
    }
    PhonemeAlignment::new(segments)
}

pub fn save_alignment(
    path: &Path,
    alignment: &PhonemeAlignment,
    inventory: &PhonemeInventory,
) -> Result<()> {
    let mut out = String::new();
    for seg in alignment.segments() {
        out.push_str(&format!(
            "{} {} {}\n",
            seg.start,
            seg.end,
            inventory.symbol(seg.phoneme)
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

const CODEBOOK_MAGIC: &[u8; 4] = b"PVQB";
const CODEBOOK_VERSION: u32 = 1;

/// Write a codebook: magic, version, shape, f64 entries, label block.
pub fn save_codebook(path: &Path, codebook: &Codebook) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CODEBOOK_MAGIC);
    bytes.extend_from_slice(&CODEBOOK_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(codebook.num_groups() as u32).to_le_bytes());
    bytes.extend_from_slice(&(codebook.entries_per_group() as u32).to_le_bytes());
    bytes.extend_from_slice(&(codebook.entry_dim() as u32).to_le_bytes());
    for group in codebook.entries() {
        for entry in group {
            for &x in entry {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    match codebook.labels() {
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
    let mut file = fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    let bytes = fs::read(path)?;
    let mut cur = Cursor::new(&bytes);
    if cur.take(4)? != CODEBOOK_MAGIC {
        return Err(Error::Format("not a codebook file".into()));
    }
    let version = cur.u32()?;
    if version != CODEBOOK_VERSION {
        return Err(Error::Format(format!("unsupported codebook version {version}")));
    }
    let groups = cur.u32()? as usize;
    let v = cur.u32()? as usize;
    let d = cur.u32()? as usize;
    let mut entries = Vec::with_capacity(groups);
    for _ in 0..groups {
        let mut group = Vec::with_capacity(v);
        for _ in 0..v {
            let mut entry = Vec::with_capacity(d);
            for _ in 0..d {
                entry.push(cur.f64()?);
            }
            group.push(entry);
        }
        entries.push(group);
    }
    let labels = match cur.u8()? {
        0 => None,
        1 => {
            let count = cur.u32()? as usize;
            let mut labels = Vec::with_capacity(count);
            for _ in 0..count {
                let len = cur.u32()? as usize;
                let raw = cur.take(len)?;
                labels.push(
                    String::from_utf8(raw.to_vec())
                        .map_err(|_| Error::Format("label is not valid UTF-8".into()))?,
                );
            }
            Some(labels)
        }
        other => return Err(Error::Format(format!("bad label flag {other}"))),
    };
    cur.expect_end()?;
    Codebook::new(entries, labels)
}

/// Write boundary frame indices, one per line.
pub fn save_boundaries(path: &Path, boundaries: &[usize]) -> Result<()> {
    let mut out = String::new();
    for b in boundaries {
        out.push_str(&b.to_string());
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_boundaries(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        out.push(
            line.parse()
                .map_err(|_| Error::Format(format!("line {}: bad frame index", lineno + 1)))?,
        );
    }
    Ok(out)
}

/// Parse a phoneme-sequence file: one utterance per line, symbols
/// separated by whitespace.
pub fn load_phoneme_lines(path: &Path, inventory: &PhonemeInventory) -> Result<Vec<Vec<usize>>> {
    let text = fs::read_to_string(path)?;
    let mut lines = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let seq: Vec<usize> = line
            .split_whitespace()
            .map(|sym| {
                inventory
                    .index_of(sym)
                    .ok_or_else(|| Error::Vocabulary(sym.to_string()))
            })
            .collect::<Result<_>>()?;
        lines.push(seq);
    }
    Ok(lines)
}

/// Little-endian byte reader shared by the binary formats.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("unexpected end of file".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn expect_end(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format("trailing bytes".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn csv_identity_matrix() {
        let dir = tmp();
        let path = dir.path().join("id.csv");
        fs::write(&path, "1,0\n0,1\n").unwrap();
        let seq = load_frame_sequence(&path, FeatureFormat::Csv).unwrap();
        assert_eq!(seq.frames(), &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(seq.dim(), 2);
        assert_eq!(seq.frame_duration(), FrameSequence::DEFAULT_FRAME_DURATION);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tmp();
        let path = dir.path().join("r.csv");
        let mut rng = substream(11, "io-test", &[0]);
        let frames: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let seq = FrameSequence::new(frames, 0.02, "r".into()).unwrap();
        save_frame_sequence(&path, &seq, FeatureFormat::Csv).unwrap();
        let back = load_frame_sequence(&path, FeatureFormat::Csv).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn csv_wrong_arity_is_format_error() {
        let dir = tmp();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "1,0\n0\n").unwrap();
        match load_frame_sequence(&path, FeatureFormat::Csv) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn csv_non_finite_is_validation_error() {
        let dir = tmp();
        let path = dir.path().join("nan.csv");
        fs::write(&path, "NaN,0\n0,1\n").unwrap();
        match load_frame_sequence(&path, FeatureFormat::Csv) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn binary_round_trip_is_exact_for_f32_values() {
        let dir = tmp();
        let path = dir.path().join("r.bin");
        let mut rng = substream(12, "io-test", &[1]);
        let frames: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f32>() as f64).collect())
            .collect();
        // An f32-representable frame duration round-trips bit for bit.
        let seq = FrameSequence::new(frames, 0.02f32 as f64, "r".into()).unwrap();
        save_frame_sequence(&path, &seq, FeatureFormat::RawBinary).unwrap();
        let back = load_frame_sequence(&path, FeatureFormat::RawBinary).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn binary_truncated_is_format_error() {
        let dir = tmp();
        let path = dir.path().join("t.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&0.02f32.to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes()); // 1 of 6 values
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_frame_sequence(&path, FeatureFormat::RawBinary),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn alignment_parse_and_collapse() {
        let dir = tmp();
        let inv = PhonemeInventory::cmu();
        let path = dir.path().join("a.align");
        fs::write(&path, "0 3 SIL\n3 7 AA\n").unwrap();
        let a = load_alignment(&path, &inv).unwrap();
        assert_eq!(a.segments().len(), 2);
        assert_eq!(a.collapsed(), &[0, inv.index_of("AA").unwrap()]);
    }

    #[test]
    fn alignment_gap_is_validation_error() {
        let dir = tmp();
        let inv = PhonemeInventory::cmu();
        let path = dir.path().join("gap.align");
        fs::write(&path, "0 3 AA\n4 7 AA\n").unwrap();
        assert!(matches!(
            load_alignment(&path, &inv),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn alignment_unknown_symbol_is_vocabulary_error() {
        let dir = tmp();
        let inv = PhonemeInventory::cmu();
        let path = dir.path().join("voc.align");
        fs::write(&path, "0 3 QQ\n").unwrap();
        assert!(matches!(
            load_alignment(&path, &inv),
            Err(Error::Vocabulary(_))
        ));
    }

    #[test]
    fn alignment_adjacent_repeats_survive_round_trip() {
        let dir = tmp();
        let inv = PhonemeInventory::cmu();
        let path = dir.path().join("rep.align");
        fs::write(&path, "0 3 AA\n3 7 AA\n").unwrap();
        let a = load_alignment(&path, &inv).unwrap();
        let aa = inv.index_of("AA").unwrap();
        assert_eq!(a.collapsed(), &[aa, aa]);
        let path2 = dir.path().join("rep2.align");
        save_alignment(&path2, &a, &inv).unwrap();
        assert_eq!(load_alignment(&path2, &inv).unwrap(), a);
    }

    #[test]
    fn codebook_round_trip() {
        let dir = tmp();
        let inv = PhonemeInventory::cmu();
        let mut rng = substream(5, "io-test", &[2]);
        let entries: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..4).map(|_| rng.random::<f64>()).collect())
            .collect();
        let cb = Codebook::labeled(entries, &inv).unwrap();
        let path = dir.path().join("cb.pvqb");
        save_codebook(&path, &cb).unwrap();
        assert_eq!(load_codebook(&path).unwrap(), cb);

        let unlabeled = Codebook::random(2, 7, 3, 1.0, 8);
        let path2 = dir.path().join("cb2.pvqb");
        save_codebook(&path2, &unlabeled).unwrap();
        assert_eq!(load_codebook(&path2).unwrap(), unlabeled);
    }

    #[test]
    fn boundaries_round_trip() {
        let dir = tmp();
        let path = dir.path().join("b.txt");
        save_boundaries(&path, &[3, 9, 14]).unwrap();
        assert_eq!(load_boundaries(&path).unwrap(), vec![3, 9, 14]);
    }

    #[test]
    fn phoneme_lines() {
        let dir = tmp();
        let inv = PhonemeInventory::cmu();
        let path = dir.path().join("p.txt");
        fs::write(&path, "AA B\nSIL\n").unwrap();
        let lines = load_phoneme_lines(&path, &inv).unwrap();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], vec![inv.index_of("AA").unwrap(), inv.index_of("B").unwrap()]);
        assert_eq!(lines[1], vec![0]);
    }
}
