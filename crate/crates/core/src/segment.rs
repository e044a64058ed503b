//! Cluster correction of quantized sequences: windowed kNN anomaly
//! scoring, peak detection under a minimum-gap constraint, majority-vote
//! correction within the detected segments, plus run-length collapsing
//! and the greedy fixed-count merge baseline.

use crate::data::{Codebook, QuantizedSequence};
use crate::error::{Error, Result};
use crate::quantizer::squared_distance;

/// Per-frame anomaly values `s_1 .. s_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyScores {
    scores: Vec<f64>,
}

impl AnomalyScores {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if scores.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Validation(
                "anomaly scores must be finite and non-negative".into(),
            ));
        }
        Ok(AnomalyScores { scores })
    }

    pub fn values(&self) -> &[f64] {
        &self.scores
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Ordered interior boundaries partitioning `[0, T)` into segments. A
/// boundary `b` is the first frame of a new segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentSet {
    boundaries: Vec<usize>,
    num_frames: usize,
}

impl SegmentSet {
    pub fn new(boundaries: Vec<usize>, num_frames: usize) -> Result<Self> {
        if num_frames == 0 {
            return Err(Error::Validation("segment set needs T >= 1".into()));
        }
        for (i, &b) in boundaries.iter().enumerate() {
            if b == 0 || b >= num_frames {
                return Err(Error::Validation(format!(
                    "boundary {b} outside (0, {num_frames})"
                )));
            }
            if i > 0 && boundaries[i - 1] >= b {
                return Err(Error::Validation(
                    "boundaries must be strictly increasing".into(),
                ));
            }
        }
        Ok(SegmentSet {
            boundaries,
            num_frames,
        })
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// Contiguous `(start, end)` intervals covering `[0, T)`.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.boundaries.len() + 1);
        let mut start = 0;
        for &b in &self.boundaries {
            out.push((start, b));
            start = b;
        }
        out.push((start, self.num_frames));
        out
    }
}

/// Minimum peak distance in frames for a given frame duration:
/// `ceil(min_gap_seconds / frame_duration)`.
pub fn min_gap_frames(min_gap_seconds: f64, frame_duration: f64) -> usize {
    (min_gap_seconds / frame_duration).ceil().max(1.0) as usize
}

/// Context windows: row `t` is the concatenation of the quantized vectors
/// over `win` frames starting at `t - win/2`, with edge frames replicated
/// at the sequence boundaries. Row length is `win * d_e`.
pub fn window_vectors(quantized: &QuantizedSequence, win: usize) -> Result<Vec<Vec<f64>>> {
    if win < 1 {
        return Err(Error::Validation("win must be >= 1".into()));
    }
    let t_len = quantized.num_frames();
    let half = (win / 2) as isize;
    let mut out = Vec::with_capacity(t_len);
    for t in 0..t_len as isize {
        let mut row = Vec::with_capacity(win * quantized.vector(0).len());
        for off in 0..win as isize {
            let idx = (t - half + off).clamp(0, t_len as isize - 1) as usize;
            row.extend_from_slice(quantized.vector(idx));
        }
        out.push(row);
    }
    Ok(out)
}

/// kNN anomaly score per window: the sum of squared Euclidean distances to
/// its `min(k, T-1)` nearest other windows of the same utterance, found by
/// exact search (self excluded, distance ties to the earlier index).
pub fn anomaly_scores(windows: &[Vec<f64>], k: usize) -> Result<AnomalyScores> {
    let t_len = windows.len();
    if t_len < 2 {
        return Err(Error::Domain(format!(
            "anomaly scoring needs T >= 2, got {t_len}"
        )));
    }
    if k < 1 {
        return Err(Error::Validation("k must be >= 1".into()));
    }
    let k_eff = k.min(t_len - 1);
    let mut scores = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut dists: Vec<(f64, usize)> = (0..t_len)
            .filter(|&u| u != t)
            .map(|u| (squared_distance(&windows[t], &windows[u]), u))
            .collect();
        dists.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        scores.push(dists[..k_eff].iter().map(|(d, _)| d).sum());
    }
    AnomalyScores::new(scores)
}

/// Peak detection: candidates are strict interior local maxima
/// (`s[t-1] < s[t] > s[t+1]`; plateaus and endpoints are not peaks).
/// Candidates are accepted greedily by descending score (ties to the
/// earlier index), discarding any candidate closer than `min_gap` frames
/// to an already accepted peak. Accepted peaks become boundaries.
pub fn detect_boundaries(scores: &AnomalyScores, min_gap: usize) -> Result<SegmentSet> {
    if min_gap < 1 {
        return Err(Error::Validation("min_gap must be >= 1".into()));
    }
    let s = scores.values();
    let t_len = s.len();
    if t_len == 0 {
        return Err(Error::Validation("empty score vector".into()));
    }
    let mut candidates: Vec<usize> = (1..t_len.saturating_sub(1))
        .filter(|&t| s[t - 1] < s[t] && s[t] > s[t + 1])
        .collect();
    candidates.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).unwrap().then(a.cmp(&b)));
    let mut accepted: Vec<usize> = Vec::new();
    for t in candidates {
        if accepted
            .iter()
            .all(|&a| a.abs_diff(t) >= min_gap)
        {
            accepted.push(t);
        }
    }
    accepted.sort_unstable();
    SegmentSet::new(accepted, t_len)
}

/// Majority-vote correction: within each segment, every frame's selection
/// is replaced by the segment's most frequent selection (ties go to the
/// tied selection that occurs earliest in the segment), and the vectors
/// are rewritten accordingly.
pub fn cluster_correct(
    quantized: &QuantizedSequence,
    segments: &SegmentSet,
    codebook: &Codebook,
) -> Result<QuantizedSequence> {
    if segments.num_frames() != quantized.num_frames() {
        return Err(Error::Validation(format!(
            "segment set covers {} frames, sequence has {}",
            segments.num_frames(),
            quantized.num_frames()
        )));
    }
    let mut corrected = Vec::with_capacity(quantized.num_frames());
    for (start, end) in segments.segments() {
        let span = &quantized.indices()[start..end];
        // Majority selection; ties break to the earliest first occurrence.
        let mut best: Option<(&Vec<usize>, usize)> = None;
        for (i, sel) in span.iter().enumerate() {
            if span[..i].contains(sel) {
                continue;
            }
            let count = span.iter().filter(|s| *s == sel).count();
            if best.map_or(true, |(_, c)| count > c) {
                best = Some((sel, count));
            }
        }
        let winner = best.expect("segments are non-empty").0.clone();
        for _ in start..end {
            corrected.push(winner.clone());
        }
    }
    QuantizedSequence::from_indices(corrected, codebook, true)
}

/// Boundaries wherever consecutive selections differ.
pub fn collapse_runs(quantized: &QuantizedSequence) -> SegmentSet {
    let idx = quantized.indices();
    let boundaries = (1..idx.len()).filter(|&t| idx[t] != idx[t - 1]).collect();
    SegmentSet::new(boundaries, idx.len()).expect("run boundaries are valid by construction")
}

/// Greedy fixed-count segmentation: start from the run-length segments and
/// repeatedly merge the adjacent pair whose representative vectors are
/// closest in Euclidean distance (ties to the leftmost pair), where a
/// merged representative is the frame-weighted mean, until `n` segments
/// remain.
pub fn greedy_nseg(quantized: &QuantizedSequence, n: usize) -> Result<SegmentSet> {
    let runs = collapse_runs(quantized);
    let initial = runs.segments();
    if n < 1 || n > initial.len() {
        return Err(Error::Domain(format!(
            "target segment count {n} outside 1..={}",
            initial.len()
        )));
    }
    struct Seg {
        start: usize,
        end: usize,
        rep: Vec<f64>,
    }
    let mut segs: Vec<Seg> = initial
        .iter()
        .map(|&(start, end)| Seg {
            start,
            end,
            rep: quantized.vector(start).to_vec(),
        })
        .collect();
    while segs.len() > n {
        let mut best_pair = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..segs.len() - 1 {
            let d = squared_distance(&segs[i].rep, &segs[i + 1].rep);
            if d < best_d {
                best_d = d;
                best_pair = i;
            }
        }
        let right = segs.remove(best_pair + 1);
        let left = &mut segs[best_pair];
        let wl = (left.end - left.start) as f64;
        let wr = (right.end - right.start) as f64;
        for (a, b) in left.rep.iter_mut().zip(&right.rep) {
            *a = (*a * wl + b * wr) / (wl + wr);
        }
        left.end = right.end;
    }
    let boundaries = segs.iter().skip(1).map(|s| s.start).collect();
    SegmentSet::new(boundaries, quantized.num_frames())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Codebook;

    fn scalar_book(values: &[f64]) -> Codebook {
        Codebook::new(vec![values.iter().map(|&v| vec![v]).collect()], None).unwrap()
    }

    fn seq(book: &Codebook, indices: &[usize]) -> QuantizedSequence {
        QuantizedSequence::from_indices(
            indices.iter().map(|&i| vec![i]).collect(),
            book,
            false,
        )
        .unwrap()
    }

    #[test]
    fn window_of_one_is_identity() {
        let cb = scalar_book(&[1.0, 2.0, 3.0]);
        let q = seq(&cb, &[0, 1, 2]);
        let w = window_vectors(&q, 1).unwrap();
        assert_eq!(w, vec![vec![1.0], vec![2.0], vec![3.0]]);
    }

    #[test]
    fn constant_sequence_has_identical_windows() {
        let cb = scalar_book(&[5.0]);
        let q = seq(&cb, &[0, 0, 0, 0]);
        let w = window_vectors(&q, 3).unwrap();
        assert!(w.iter().all(|row| row == &w[0]));
    }

    #[test]
    fn windows_replicate_edges() {
        let cb = scalar_book(&[1.0, 2.0, 3.0]);
        let q = seq(&cb, &[0, 1, 2]);
        let w = window_vectors(&q, 3).unwrap();
        assert_eq!(
            w,
            vec![vec![1.0, 1.0, 2.0], vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 3.0]]
        );
    }

    #[test]
    fn even_window_is_left_heavy_with_exact_length() {
        let cb = scalar_book(&[1.0, 2.0, 3.0, 4.0]);
        let q = seq(&cb, &[0, 1, 2, 3]);
        let w = window_vectors(&q, 2).unwrap();
        // Window [t-1, t]: row length win * d_e.
        assert_eq!(w, vec![vec![1.0, 1.0], vec![1.0, 2.0], vec![2.0, 3.0], vec![3.0, 4.0]]);
    }

    #[test]
    fn constant_windows_score_zero() {
        let windows = vec![vec![3.0, 3.0]; 5];
        let s = anomaly_scores(&windows, 3).unwrap();
        assert_eq!(s.values(), &[0.0; 5]);
    }

    #[test]
    fn anomaly_hand_case_two_clusters() {
        let windows = vec![vec![0.0], vec![0.0], vec![10.0], vec![10.0]];
        let s = anomaly_scores(&windows, 2).unwrap();
        assert_eq!(s.values(), &[100.0, 100.0, 100.0, 100.0]);
    }

    #[test]
    fn anomaly_single_frame_is_domain_error() {
        assert!(matches!(
            anomaly_scores(&[vec![1.0]], 2),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn anomaly_matches_exhaustive_oracle() {
        use crate::rng::substream;
        use rand::Rng;
        for case in 0..20u64 {
            let mut rng = substream(case, "segment-test", &[]);
            let t = 2 + (rng.random::<u64>() % 7) as usize;
            let m = 1 + (rng.random::<u64>() % 4) as usize;
            let k = 1 + (rng.random::<u64>() % 9) as usize;
            let windows: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..m).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
                .collect();
            let got = anomaly_scores(&windows, k).unwrap();
            // Oracle: full sort of all pairwise distances per point.
            let k_eff = k.min(t - 1);
            for i in 0..t {
                let mut d: Vec<f64> = (0..t)
                    .filter(|&j| j != i)
                    .map(|j| {
                        windows[i]
                            .iter()
                            .zip(&windows[j])
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum()
                    })
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let want: f64 = d[..k_eff].iter().sum();
                assert_eq!(got.values()[i], want, "case {case} point {i}");
            }
        }
    }

    #[test]
    fn anomaly_scores_reverse_with_the_sequence() {
        let windows = vec![vec![0.0], vec![1.5], vec![0.2], vec![7.0], vec![6.5]];
        let fwd = anomaly_scores(&windows, 2).unwrap();
        let mut rev_windows = windows.clone();
        rev_windows.reverse();
        let rev = anomaly_scores(&rev_windows, 2).unwrap();
        let mut rev_back = rev.values().to_vec();
        rev_back.reverse();
        assert_eq!(fwd.values(), &rev_back[..]);
    }

    #[test]
    fn peaks_with_small_gap() {
        let s = AnomalyScores::new(vec![0.0, 1.0, 0.0, 5.0, 0.0]).unwrap();
        let set = detect_boundaries(&s, 1).unwrap();
        assert_eq!(set.boundaries(), &[1, 3]);
    }

    #[test]
    fn peaks_suppressed_by_gap() {
        let s = AnomalyScores::new(vec![0.0, 1.0, 0.0, 5.0, 0.0]).unwrap();
        let set = detect_boundaries(&s, 3).unwrap();
        assert_eq!(set.boundaries(), &[3]);
    }

    #[test]
    fn monotone_scores_have_no_boundaries() {
        let s = AnomalyScores::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let set = detect_boundaries(&s, 1).unwrap();
        assert!(set.boundaries().is_empty());
        assert_eq!(set.segments(), vec![(0, 4)]);
    }

    #[test]
    fn plateaus_are_not_peaks() {
        let s = AnomalyScores::new(vec![0.0, 2.0, 2.0, 0.0]).unwrap();
        let set = detect_boundaries(&s, 1).unwrap();
        assert!(set.boundaries().is_empty());
    }

    #[test]
    fn majority_correction() {
        let cb = scalar_book(&[0.0, 1.0, 2.0, 3.0]);
        let q = seq(&cb, &[1, 1, 2, 1]);
        let segs = SegmentSet::new(vec![], 4).unwrap();
        let c = cluster_correct(&q, &segs, &cb).unwrap();
        assert_eq!(c.indices(), &[vec![1], vec![1], vec![1], vec![1]]);
        assert!(c.is_corrected());
        assert_eq!(c.vector(2), &[1.0]);
    }

    #[test]
    fn majority_tie_goes_to_earliest_occurrence() {
        let cb = scalar_book(&[0.0, 1.0, 2.0]);
        let q = seq(&cb, &[1, 1, 2, 2]);
        let segs = SegmentSet::new(vec![], 4).unwrap();
        let c = cluster_correct(&q, &segs, &cb).unwrap();
        assert_eq!(c.indices(), &[vec![1], vec![1], vec![1], vec![1]]);
    }

    #[test]
    fn per_segment_majority() {
        let cb = scalar_book(&[0.0, 1.0, 2.0, 3.0]);
        let q = seq(&cb, &[1, 2, 2, 3]);
        let segs = SegmentSet::new(vec![3], 4).unwrap();
        let c = cluster_correct(&q, &segs, &cb).unwrap();
        assert_eq!(c.indices(), &[vec![2], vec![2], vec![2], vec![3]]);
    }

    #[test]
    fn correction_is_idempotent() {
        let cb = scalar_book(&[0.0, 1.0, 2.0]);
        let q = seq(&cb, &[0, 1, 1, 2, 2, 2, 0]);
        let segs = SegmentSet::new(vec![3], 7).unwrap();
        let once = cluster_correct(&q, &segs, &cb).unwrap();
        let twice = cluster_correct(&once, &segs, &cb).unwrap();
        assert_eq!(once.indices(), twice.indices());
    }

    #[test]
    fn collapse_runs_cases() {
        let cb = scalar_book(&[0.0, 1.0, 2.0]);
        assert_eq!(collapse_runs(&seq(&cb, &[1, 1, 2])).boundaries(), &[2]);
        assert!(collapse_runs(&seq(&cb, &[1, 1, 1])).boundaries().is_empty());
        assert_eq!(collapse_runs(&seq(&cb, &[1, 2, 1])).boundaries(), &[1, 2]);
    }

    #[test]
    fn greedy_already_at_target() {
        let cb = scalar_book(&[0.0, 1.0, 2.0]);
        let q = seq(&cb, &[1, 1, 2, 2]);
        let set = greedy_nseg(&q, 2).unwrap();
        assert_eq!(set.segments(), vec![(0, 2), (2, 4)]);
    }

    #[test]
    fn greedy_merges_closest_pair() {
        let cb = scalar_book(&[0.0, 0.1, 5.0]);
        let q = seq(&cb, &[0, 0, 1, 1, 2, 2]);
        let set = greedy_nseg(&q, 2).unwrap();
        assert_eq!(set.boundaries(), &[4]);
    }

    #[test]
    fn greedy_identity_at_run_count() {
        let cb = scalar_book(&[0.0, 1.0, 2.0]);
        let q = seq(&cb, &[0, 1, 1, 2]);
        let runs = collapse_runs(&q);
        let set = greedy_nseg(&q, 3).unwrap();
        assert_eq!(set, runs);
    }

    #[test]
    fn greedy_out_of_range_is_domain_error() {
        let cb = scalar_book(&[0.0, 1.0]);
        let q = seq(&cb, &[0, 1]);
        assert!(matches!(greedy_nseg(&q, 0), Err(Error::Domain(_))));
        assert!(matches!(greedy_nseg(&q, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn min_gap_conversion() {
        assert_eq!(min_gap_frames(0.06, 0.02), 3);
        assert_eq!(min_gap_frames(0.06, 0.025), 3); // ceil(2.4)
        assert_eq!(min_gap_frames(0.06, 0.1), 1);
    }
}
