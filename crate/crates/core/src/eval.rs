//! Evaluation: phoneme error rate, boundary segmentation metrics at a
//! time tolerance, codeword-drift export, and mean / standard-error
//! aggregation.

use crate::data::Codebook;
use crate::error::{Error, Result};

/// Edit operation counts of a minimal alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EditCounts {
    pub deletions: usize,
    pub substitutions: usize,
    pub insertions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.deletions + self.substitutions + self.insertions
    }
}

/// Phoneme error rate `(D + S + I) / |ref|` from a minimal-edit-distance
/// alignment with unit costs. Ties in the alignment backtrace prefer
/// substitution over insertion over deletion.
pub fn per(reference: &[usize], hypothesis: &[usize]) -> Result<(f64, EditCounts)> {
    if reference.is_empty() {
        return Err(Error::Domain("reference sequence is empty".into()));
    }
    let m = reference.len();
    let n = hypothesis.len();
    let mut d = vec![vec![0usize; n + 1]; m + 1];
    for i in 0..=m {
        d[i][0] = i;
    }
    for j in 0..=n {
        d[0][j] = j;
    }
    for i in 1..=m {
        for j in 1..=n {
            let sub = d[i - 1][j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let ins = d[i][j - 1] + 1;
            let del = d[i - 1][j] + 1;
            d[i][j] = sub.min(ins).min(del);
        }
    }
    let mut counts = EditCounts::default();
    let (mut i, mut j) = (m, n);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && reference[i - 1] == hypothesis[j - 1] && d[i][j] == d[i - 1][j - 1] {
            i -= 1;
            j -= 1;
        } else if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + 1 {
            counts.substitutions += 1;
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    Ok((counts.total() as f64 / m as f64, counts))
}

/// Boundary segmentation quality. All fields are fractions in `[0, 1]`
/// except that `r_value` may go negative under heavy over-segmentation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
    pub r_value: f64,
    pub overlap: f64,
}

/// Maximum one-to-one matching between two sorted boundary lists under an
/// absolute tolerance, by the in-order two-pointer sweep. The matched
/// count is the maximum possible, which makes it symmetric in the two
/// arguments.
fn match_count(a: &[f64], b: &[f64], tolerance: f64) -> usize {
    let (mut i, mut j, mut matches) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        if (a[i] - b[j]).abs() <= tolerance {
            matches += 1;
            i += 1;
            j += 1;
        } else if a[i] < b[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    matches
}

fn check_sorted(name: &str, b: &[f64]) -> Result<()> {
    if b.iter().any(|x| !x.is_finite()) {
        return Err(Error::Validation(format!("{name} boundaries must be finite")));
    }
    if b.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Validation(format!("{name} boundaries must be sorted")));
    }
    Ok(())
}

/// Segment id per frame for boundaries given in seconds.
fn frame_segments(boundaries: &[f64], total_frames: usize, frame_duration: f64) -> Vec<usize> {
    let mut cuts: Vec<usize> = boundaries
        .iter()
        .map(|b| (b / frame_duration).round() as isize)
        .filter(|&f| f > 0 && (f as usize) < total_frames)
        .map(|f| f as usize)
        .collect();
    cuts.dedup();
    let mut ids = vec![0usize; total_frames];
    let mut id = 0;
    let mut next_cut = 0;
    for (frame, slot) in ids.iter_mut().enumerate() {
        while next_cut < cuts.len() && cuts[next_cut] == frame {
            id += 1;
            next_cut += 1;
        }
        *slot = id;
    }
    ids
}

/// Boundary precision/recall/F at `tolerance` seconds, the R-value, and
/// the frame-level segment-agreement overlap. `extent` is the utterance
/// length in seconds and `frame_duration` the grid for the overlap
/// computation. Precision and recall are 0 when their denominator is 0.
pub fn boundary_metrics(
    ref_boundaries: &[f64],
    hyp_boundaries: &[f64],
    tolerance: f64,
    extent: f64,
    frame_duration: f64,
) -> Result<BoundaryMetrics> {
    if !(tolerance >= 0.0) {
        return Err(Error::Domain(format!("tolerance must be >= 0, got {tolerance}")));
    }
    if !(extent > 0.0) || !(frame_duration > 0.0) {
        return Err(Error::Domain(
            "extent and frame_duration must be positive".into(),
        ));
    }
    check_sorted("reference", ref_boundaries)?;
    check_sorted("hypothesis", hyp_boundaries)?;

    let matches = match_count(ref_boundaries, hyp_boundaries, tolerance);
    let precision = if hyp_boundaries.is_empty() {
        0.0
    } else {
        matches as f64 / hyp_boundaries.len() as f64
    };
    let recall = if ref_boundaries.is_empty() {
        0.0
    } else {
        matches as f64 / ref_boundaries.len() as f64
    };
    let f_score = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let os = if ref_boundaries.is_empty() {
        0.0
    } else {
        hyp_boundaries.len() as f64 / ref_boundaries.len() as f64 - 1.0
    };
    let r1 = ((1.0 - recall).powi(2) + os * os).sqrt();
    let r2 = (-os + recall - 1.0) / 2.0f64.sqrt();
    let r_value = 1.0 - (r1.abs() + r2.abs()) / 2.0;

    let total_frames = (extent / frame_duration).round().max(1.0) as usize;
    let ref_ids = frame_segments(ref_boundaries, total_frames, frame_duration);
    let hyp_ids = frame_segments(hyp_boundaries, total_frames, frame_duration);
    let num_ref_segments = ref_ids.last().copied().unwrap_or(0) + 1;
    let num_hyp_segments = hyp_ids.last().copied().unwrap_or(0) + 1;
    // Intersection table hyp segment x ref segment.
    let mut inter = vec![vec![0usize; num_ref_segments]; num_hyp_segments];
    for t in 0..total_frames {
        inter[hyp_ids[t]][ref_ids[t]] += 1;
    }
    let covered: usize = inter
        .iter()
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    let overlap = covered as f64 / total_frames as f64;

    Ok(BoundaryMetrics {
        precision,
        recall,
        f_score,
        r_value,
        overlap,
    })
}

/// One row of a codeword-drift table.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftRow {
    /// Phoneme symbol, or the entry index when the books are unlabeled.
    pub label: String,
    /// Euclidean displacement of the codeword.
    pub displacement: f64,
    /// Whether this row is among the `top_n` largest displacements.
    pub top: bool,
    pub before: Vec<f64>,
    pub after: Vec<f64>,
}

/// Per-codeword displacement between two same-shaped codebooks, sorted by
/// descending displacement (ties by entry index). Exactly `top_n` rows
/// carry the top marker.
pub fn export_drift(before: &Codebook, after: &Codebook, top_n: usize) -> Result<Vec<DriftRow>> {
    if before.num_groups() != after.num_groups()
        || before.entries_per_group() != after.entries_per_group()
        || before.entry_dim() != after.entry_dim()
    {
        return Err(Error::Validation("codebook shapes do not match".into()));
    }
    if before.labels() != after.labels() {
        return Err(Error::Validation("codebook labels do not match".into()));
    }
    if before.num_groups() != 1 {
        return Err(Error::Validation(
            "drift export requires single-group codebooks".into(),
        ));
    }
    let v = before.entries_per_group();
    let mut rows: Vec<(usize, DriftRow)> = (0..v)
        .map(|k| {
            let b = before.entry(0, k);
            let a = after.entry(0, k);
            let displacement = b
                .iter()
                .zip(a)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt();
            let label = match before.labels() {
                Some(labels) => labels[k].clone(),
                None => k.to_string(),
            };
            (
                k,
                DriftRow {
                    label,
                    displacement,
                    top: false,
                    before: b.to_vec(),
                    after: a.to_vec(),
                },
            )
        })
        .collect();
    rows.sort_by(|(ka, a), (kb, b)| {
        b.displacement
            .partial_cmp(&a.displacement)
            .unwrap()
            .then(ka.cmp(kb))
    });
    let mut rows: Vec<DriftRow> = rows.into_iter().map(|(_, r)| r).collect();
    for row in rows.iter_mut().take(top_n) {
        row.top = true;
    }
    Ok(rows)
}

/// Render a drift table as CSV with a fixed column order:
/// `phoneme,displacement,top,before_0..,after_0..`.
pub fn drift_to_csv(rows: &[DriftRow]) -> String {
    let dim = rows.first().map(|r| r.before.len()).unwrap_or(0);
    let mut out = String::from("phoneme,displacement,top");
    for i in 0..dim {
        out.push_str(&format!(",before_{i}"));
    }
    for i in 0..dim {
        out.push_str(&format!(",after_{i}"));
    }
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{}",
            row.label,
            row.displacement,
            u8::from(row.top)
        ));
        for x in &row.before {
            out.push_str(&format!(",{x}"));
        }
        for x in &row.after {
            out.push_str(&format!(",{x}"));
        }
        out.push('\n');
    }
    out
}

/// Mean and standard error of a value list. The standard error is 0 for
/// fewer than two values.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::PhonemeInventory;

    #[test]
    fn per_identical_is_zero() {
        let (rate, c) = per(&[1, 2, 3], &[1, 2, 3]).unwrap();
        assert_eq!(rate, 0.0);
        assert_eq!(c, EditCounts::default());
    }

    #[test]
    fn per_single_substitution() {
        let (rate, c) = per(&[1, 2, 3, 4], &[1, 9, 3, 4]).unwrap();
        assert_eq!(rate, 0.25);
        assert_eq!(c.substitutions, 1);
        assert_eq!(c.deletions + c.insertions, 0);
    }

    #[test]
    fn per_total_deletion() {
        let (rate, c) = per(&[1], &[]).unwrap();
        assert_eq!(rate, 1.0);
        assert_eq!(c.deletions, 1);
    }

    #[test]
    fn per_empty_reference_is_domain_error() {
        assert!(matches!(per(&[], &[1]), Err(Error::Domain(_))));
    }

    #[test]
    fn per_counts_reconcile_with_length_difference() {
        // D - I always equals |ref| - |hyp|.
        let cases: &[(&[usize], &[usize])] = &[
            (&[1, 2, 3], &[2, 3, 4, 5]),
            (&[1, 1, 1, 1], &[1]),
            (&[5, 6], &[6, 5]),
        ];
        for (r, h) in cases {
            let (_, c) = per(r, h).unwrap();
            assert_eq!(
                c.deletions as isize - c.insertions as isize,
                r.len() as isize - h.len() as isize
            );
        }
    }

    #[test]
    fn perfect_boundaries() {
        let b = [0.1, 0.3, 0.55];
        let m = boundary_metrics(&b, &b, 0.01, 0.8, 0.02).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f_score, 1.0);
        assert_eq!(m.r_value, 1.0);
        assert_eq!(m.overlap, 1.0);
    }

    #[test]
    fn empty_hypothesis_conventions() {
        let m = boundary_metrics(&[0.2, 0.4], &[], 0.01, 0.6, 0.02).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f_score, 0.0);
    }

    #[test]
    fn within_tolerance_match() {
        let m = boundary_metrics(&[1.0], &[1.005], 0.01, 2.0, 0.02).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
        assert_eq!(m.f_score, 1.0);
    }

    #[test]
    fn out_of_tolerance_no_match() {
        let m = boundary_metrics(&[1.0], &[1.02], 0.01, 2.0, 0.02).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
    }

    #[test]
    fn swap_exchanges_precision_and_recall() {
        let r = [0.1, 0.32, 0.4, 0.77];
        let h = [0.11, 0.5, 0.78];
        let a = boundary_metrics(&r, &h, 0.02, 1.0, 0.02).unwrap();
        let b = boundary_metrics(&h, &r, 0.02, 1.0, 0.02).unwrap();
        assert_eq!(a.precision, b.recall);
        assert_eq!(a.recall, b.precision);
        assert_eq!(a.f_score, b.f_score);
    }

    #[test]
    fn in_order_matching_is_maximal() {
        // Nearest-first matching would pair only one of these.
        let m = boundary_metrics(&[0.0, 1.0], &[0.9, 1.1], 1.0, 2.0, 0.1).unwrap();
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn overlap_counts_majority_covered_frames() {
        // 10 frames; ref splits at 0.1 (frame 5), hyp at 0.12 (frame 6).
        let m = boundary_metrics(&[0.1], &[0.12], 0.05, 0.2, 0.02).unwrap();
        // Hyp segment [0,6): best ref overlap 5 frames; [6,10): 4 frames.
        assert!((m.overlap - 0.9).abs() < 1e-12);
    }

    #[test]
    fn drift_zero_for_identical_books() {
        let cb = Codebook::random(1, 5, 3, 1.0, 4);
        let rows = export_drift(&cb, &cb, 2).unwrap();
        assert!(rows.iter().all(|r| r.displacement == 0.0));
        assert_eq!(rows.iter().filter(|r| r.top).count(), 2);
    }

    #[test]
    fn drift_single_moved_entry_tops_table() {
        let inv = PhonemeInventory::cmu();
        let entries: Vec<Vec<f64>> = (0..40).map(|k| vec![k as f64, 0.0]).collect();
        let before = Codebook::labeled(entries.clone(), &inv).unwrap();
        let mut moved = entries;
        let t_idx = inv.index_of("T").unwrap();
        moved[t_idx][0] += 3.0;
        moved[t_idx][1] += 4.0;
        let after = Codebook::labeled(moved, &inv).unwrap();
        let rows = export_drift(&before, &after, 3).unwrap();
        assert_eq!(rows[0].label, "T");
        assert_eq!(rows[0].displacement, 5.0);
        assert!(rows[0].top);
        assert_eq!(rows.len(), 40);
        assert_eq!(rows.iter().filter(|r| r.top).count(), 3);
    }

    #[test]
    fn drift_shape_mismatch_is_validation_error() {
        let a = Codebook::random(1, 4, 3, 1.0, 1);
        let b = Codebook::random(1, 4, 2, 1.0, 1);
        assert!(matches!(export_drift(&a, &b, 1), Err(Error::Validation(_))));
    }

    #[test]
    fn drift_csv_has_fixed_columns() {
        let cb = Codebook::random(1, 3, 2, 1.0, 9);
        let rows = export_drift(&cb, &cb, 1).unwrap();
        let csv = drift_to_csv(&rows);
        let header = csv.lines().next().unwrap();
        assert_eq!(header, "phoneme,displacement,top,before_0,before_1,after_0,after_1");
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn mean_se_basics() {
        let (m, se) = mean_se(&[2.0, 4.0, 6.0, 8.0]);
        assert_eq!(m, 5.0);
        let var: f64 = 20.0 / 3.0;
        assert!((se - (var / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(mean_se(&[3.0]), (3.0, 0.0));
        assert_eq!(mean_se(&[]), (0.0, 0.0));
    }
}
