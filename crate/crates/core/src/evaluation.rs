//! Classification metrics, operating-point and checkpoint selection, and
//! dataset split bookkeeping.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::OperatingPoint;
use crate::scoring::protocol::map_csv_open;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// Kind of negative example, for hard-negative bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeCategory {
    Random,
    Urban,
    WellPad,
    Cropland,
    Forest,
    Snow,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub id: String,
    pub split: Split,
    pub label: Label,
    pub probability: f64,
    pub negative_category: Option<NegativeCategory>,
}

impl LabeledScore {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(Error::Malformed(format!(
                "example {}: probability {} outside [0, 1]",
                self.id, self.probability
            )));
        }
        if self.label == Label::Positive && self.negative_category.is_some() {
            return Err(Error::Malformed(format!(
                "example {}: negative category on a positive example",
                self.id
            )));
        }
        Ok(())
    }

    pub fn is_positive(&self) -> bool {
        self.label == Label::Positive
    }
}

pub fn read_labeled_scores(path: &Path) -> Result<Vec<LabeledScore>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| map_csv_open(path, e))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<LabeledScore>().enumerate() {
        let row = row.map_err(|e| Error::Malformed(format!("{} row {}: {e}", path.display(), i + 1)))?;
        row.validate()?;
        out.push(row);
    }
    Ok(out)
}

pub fn write_labeled_scores(path: &Path, scores: &[LabeledScore]) -> Result<()> {
    crate::io_util::ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for s in scores {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Confusion counts with prediction `probability >= threshold`.
pub fn confusion(scores: &[LabeledScore], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for s in scores {
        match (s.is_positive(), s.probability >= threshold) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
    /// Set when precision had no predicted positives and was reported as 0.
    pub precision_undefined: bool,
    /// Set when recall had no actual positives and was reported as 0.
    pub recall_undefined: bool,
}

pub fn compute_metrics(c: ConfusionCounts) -> Result<MetricsReport> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Domain("metrics need at least one example".into()));
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        accuracy: ratio(c.tp + c.tn, total),
        precision,
        recall,
        f1,
        counts: c,
        precision_undefined: c.tp + c.fp == 0,
        recall_undefined: c.tp + c.fn_ == 0,
    })
}

/// Counts at one candidate threshold of a precision/recall sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub counts: ConfusionCounts,
}

impl SweepPoint {
    pub fn precision(&self) -> f64 {
        let c = self.counts;
        if c.tp + c.fp == 0 {
            0.0
        } else {
            c.tp as f64 / (c.tp + c.fp) as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let c = self.counts;
        if c.tp + c.fn_ == 0 {
            0.0
        } else {
            c.tp as f64 / (c.tp + c.fn_) as f64
        }
    }

    /// Exact comparison of precisions as rationals.
    fn cmp_precision(&self, other: &SweepPoint) -> Ordering {
        let (a, b) = (self.counts, other.counts);
        let lhs = u128::from(a.tp) * u128::from(b.tp + b.fp);
        let rhs = u128::from(b.tp) * u128::from(a.tp + a.fp);
        // an empty prediction set has precision 0
        match (a.tp + a.fp == 0, b.tp + b.fp == 0) {
            (true, true) => Ordering::Equal,
            (true, false) => 0.cmp(&b.tp),
            (false, true) => a.tp.cmp(&0),
            (false, false) => lhs.cmp(&rhs),
        }
    }
}

/// Confusion counts at every distinct observed probability plus 0,
/// in descending threshold order.
pub fn threshold_sweep(scores: &[LabeledScore]) -> Vec<SweepPoint> {
    let mut sorted: Vec<(f64, bool)> = scores.iter().map(|s| (s.probability, s.is_positive())).collect();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let positives = sorted.iter().filter(|s| s.1).count() as u64;
    let negatives = sorted.len() as u64 - positives;

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == t {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(SweepPoint {
            threshold: t,
            counts: ConfusionCounts {
                tp,
                fp,
                fn_: positives - tp,
                tn: negatives - fp,
            },
        });
    }
    if points.last().is_none_or(|p| p.threshold > 0.0) {
        points.push(SweepPoint {
            threshold: 0.0,
            counts: ConfusionCounts {
                tp: positives,
                fp: negatives,
                fn_: 0,
                tn: 0,
            },
        });
    }
    points
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub operating_point: OperatingPoint,
    pub precision: f64,
    pub recall: f64,
    pub counts: ConfusionCounts,
}

/// Highest-precision threshold among those with recall 1.0; ties go to the
/// larger threshold.
pub fn select_operating_point(scores: &[LabeledScore]) -> Result<ThresholdChoice> {
    if !scores.iter().any(LabeledScore::is_positive) {
        return Err(Error::Domain(
            "operating point selection needs at least one positive example".into(),
        ));
    }
    let mut best: Option<SweepPoint> = None;
    for p in threshold_sweep(scores) {
        if p.counts.fn_ != 0 {
            continue;
        }
        // descending sweep: only a strictly better precision may displace a larger threshold
        if best.is_none_or(|b| p.cmp_precision(&b) == Ordering::Greater) {
            best = Some(p);
        }
    }
    let best = best.expect("the zero threshold always reaches full recall");
    Ok(ThresholdChoice {
        operating_point: OperatingPoint::new(best.threshold)?,
        precision: best.precision(),
        recall: best.recall(),
        counts: best.counts,
    })
}

/// Epoch with the lowest validation loss, earliest on ties.
pub fn select_checkpoint(validation_losses: &[f64]) -> Result<usize> {
    if validation_losses.iter().any(|l| l.is_nan()) {
        return Err(Error::Domain("validation loss is NaN".into()));
    }
    validation_losses
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &l)| match best {
            Some((_, b)) if b <= l => best,
            _ => Some((i, l)),
        })
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Domain("no validation losses".into()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub positive: u64,
    pub negative: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: SplitCounts,
    pub validation: SplitCounts,
    pub test: SplitCounts,
}

/// Split sizes of the published refinery dataset.
pub const REFERENCE_SPLITS: SplitSummary = SplitSummary {
    train: SplitCounts {
        positive: 127,
        negative: 5525,
    },
    validation: SplitCounts {
        positive: 13,
        negative: 693,
    },
    test: SplitCounts {
        positive: 9,
        negative: 697,
    },
};

impl SplitSummary {
    pub fn get(&self, split: Split) -> SplitCounts {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }

    pub fn total(&self) -> u64 {
        [self.train, self.validation, self.test]
            .iter()
            .map(|c| c.positive + c.negative)
            .sum()
    }

    /// Errors with every mismatching split when the counts differ.
    pub fn check(&self, expected: &SplitSummary) -> Result<()> {
        let mismatches: Vec<String> = [Split::Train, Split::Validation, Split::Test]
            .into_iter()
            .filter(|&s| self.get(s) != expected.get(s))
            .map(|s| {
                let (a, e) = (self.get(s), expected.get(s));
                format!(
                    "{s:?}: {}/{} (expected {}/{})",
                    a.positive, a.negative, e.positive, e.negative
                )
            })
            .collect();
        if mismatches.is_empty() {
            Ok(())
        } else {
            Err(Error::Domain(format!("split counts differ: {}", mismatches.join("; "))))
        }
    }
}

pub fn split_summary(scores: &[LabeledScore]) -> SplitSummary {
    let mut summary = SplitSummary::default();
    for s in scores {
        let counts = match s.split {
            Split::Train => &mut summary.train,
            Split::Validation => &mut summary.validation,
            Split::Test => &mut summary.test,
        };
        match s.label {
            Label::Positive => counts.positive += 1,
            Label::Negative => counts.negative += 1,
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ls(label: Label, p: f64) -> LabeledScore {
        LabeledScore {
            id: String::new(),
            split: Split::Validation,
            label,
            probability: p,
            negative_category: None,
        }
    }

    fn set(pos: &[f64], neg: &[f64]) -> Vec<LabeledScore> {
        pos.iter()
            .map(|&p| ls(Label::Positive, p))
            .chain(neg.iter().map(|&p| ls(Label::Negative, p)))
            .collect()
    }

    #[test]
    fn confusion_cases() {
        let s = set(&[1.0, 1.0], &[0.0, 0.0, 0.0]);
        let c = confusion(&s, 0.5);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (2, 0, 0, 3));
        let c = confusion(&set(&[0.2, 0.9], &[0.1, 0.7]), 0.0);
        assert_eq!((c.fn_, c.tn), (0, 0));
    }

    #[test]
    fn reference_test_split_metrics() {
        let m = compute_metrics(ConfusionCounts { tp: 9, fp: 3, fn_: 0, tn: 694 }).unwrap();
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 6.0 / 7.0).abs() < 1e-15);
        assert!((m.accuracy - 703.0 / 706.0).abs() < 1e-15);
        assert!((m.accuracy - 0.9958).abs() < 0.0005);
    }

    #[test]
    fn metric_edge_cases() {
        let m = compute_metrics(ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 1 }).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
        assert!(compute_metrics(ConfusionCounts::default()).is_err());
        let m = compute_metrics(ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 5 }).unwrap();
        assert!(m.precision_undefined && m.recall_undefined);
        assert_eq!(m.f1, 0.0);
    }

    #[test]
    fn operating_point_by_hand() {
        let choice = select_operating_point(&set(&[0.9, 0.6], &[0.7, 0.1])).unwrap();
        assert_eq!(choice.operating_point.threshold(), 0.6);
        assert!((choice.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(choice.recall, 1.0);

        let sep = select_operating_point(&set(&[0.9, 0.8, 0.95], &[0.1, 0.5])).unwrap();
        assert_eq!(sep.operating_point.threshold(), 0.8);
        assert_eq!(sep.precision, 1.0);

        assert!(select_operating_point(&set(&[], &[0.3])).is_err());
    }

    #[test]
    fn zero_threshold_candidate() {
        // positives at exactly 0: only τ = 0 reaches full recall
        let choice = select_operating_point(&set(&[0.0], &[0.4])).unwrap();
        assert_eq!(choice.operating_point.threshold(), 0.0);
        assert_eq!(choice.precision, 0.5);
    }

    #[test]
    fn checkpoints() {
        assert_eq!(select_checkpoint(&[0.5, 0.3, 0.4]).unwrap(), 1);
        assert_eq!(select_checkpoint(&[0.3, 0.3]).unwrap(), 0);
        assert!(select_checkpoint(&[]).is_err());
        assert!(select_checkpoint(&[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn split_bookkeeping() {
        assert_eq!(split_summary(&[]), SplitSummary::default());
        assert_eq!(REFERENCE_SPLITS.total(), 7064);
        let mut s = set(&[0.5], &[0.5, 0.1]);
        s[2].split = Split::Test;
        let summary = split_summary(&s);
        assert_eq!(summary.validation, SplitCounts { positive: 1, negative: 1 });
        assert_eq!(summary.test, SplitCounts { positive: 0, negative: 1 });
        let err = summary.check(&REFERENCE_SPLITS).unwrap_err().to_string();
        assert!(err.contains("Train") && err.contains("Test"));
    }

    #[test]
    fn csv_io() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        std::fs::write(
            &path,
            "id,split,label,probability,negative_category\na,test,positive,0.9,\nb,train,negative,0.2,well_pad\n",
        )
        .unwrap();
        let rows = read_labeled_scores(&path).unwrap();
        assert_eq!(rows[1].negative_category, Some(NegativeCategory::WellPad));
        assert_eq!(rows[0].negative_category, None);
        let out = dir.path().join("out.csv");
        write_labeled_scores(&out, &rows).unwrap();
        assert_eq!(read_labeled_scores(&out).unwrap(), rows);

        std::fs::write(&path, "id,split,label,probability,negative_category\na,test,positive,0.9,snow\n").unwrap();
        assert!(read_labeled_scores(&path).is_err());
        std::fs::write(&path, "id,split,label,probability,negative_category\na,test,maybe,0.9,\n").unwrap();
        assert!(read_labeled_scores(&path).is_err());
    }

    proptest! {
        #[test]
        fn metrics_match_formulas(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 0u64..500) {
            prop_assume!(tp + fp + fn_ + tn > 0);
            let m = compute_metrics(ConfusionCounts { tp, fp, fn_, tn }).unwrap();
            let total = (tp + fp + fn_ + tn) as f64;
            prop_assert!((m.accuracy - (tp + tn) as f64 / total).abs() < 1e-12);
            for v in [m.accuracy, m.precision, m.recall, m.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
            prop_assert_eq!(m.f1 == 0.0, m.precision * m.recall == 0.0);
            if m.precision > 0.0 && m.recall > 0.0 {
                prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12);
                prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
            }
        }

        #[test]
        fn sweep_recall_is_monotone(
            pos in proptest::collection::vec(0.0f64..1.0, 1..40),
            neg in proptest::collection::vec(0.0f64..1.0, 0..40),
        ) {
            let s = set(&pos, &neg);
            let sweep = threshold_sweep(&s);
            prop_assert!(sweep.windows(2).all(|w| w[0].threshold > w[1].threshold));
            prop_assert!(sweep.windows(2).all(|w| w[0].recall() <= w[1].recall()));
            for p in &sweep {
                prop_assert_eq!(p.counts, confusion(&s, p.threshold));
                prop_assert_eq!(p.counts.total(), s.len() as u64);
            }
            let choice = select_operating_point(&s).unwrap();
            prop_assert_eq!(choice.recall, 1.0);
        }
    }
}
