//! Pixel confusion counts and the seven segmentation metrics.
//!
//! Every metric is a ratio of integer counts, computed exactly as a rational
//! and rounded once to `f64`. A zero denominator makes the metric undefined
//! rather than 0, 1 or NaN.

use std::fmt::Write as _;

use num_rational::Ratio;

use crate::error::{Error, Result};
use crate::mask::Mask;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

/// Pixelwise counts with foreground as the positive class.
pub fn confusion(pred: &Mask, gt: &Mask) -> Result<ConfusionCounts> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Data(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

/// Metric names in reporting order.
pub const METRIC_NAMES: [&str; 7] = [
    "accuracy",
    "specificity",
    "precision",
    "sensitivity",
    "f1",
    "jaccard",
    "dice",
];

/// Column headers in reporting order.
pub const METRIC_HEADERS: [&str; 7] = [
    "Accuracy",
    "Specificity",
    "PRE",
    "Sensitivity",
    "F1-score",
    "Jaccard",
    "Dice",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExactMetrics {
    pub accuracy: Option<Ratio<u64>>,
    pub specificity: Option<Ratio<u64>>,
    pub precision: Option<Ratio<u64>>,
    pub sensitivity: Option<Ratio<u64>>,
    pub f1: Option<Ratio<u64>>,
    pub jaccard: Option<Ratio<u64>>,
    pub dice: Option<Ratio<u64>>,
}

impl ExactMetrics {
    pub fn as_array(&self) -> [Option<Ratio<u64>>; 7] {
        [
            self.accuracy,
            self.specificity,
            self.precision,
            self.sensitivity,
            self.f1,
            self.jaccard,
            self.dice,
        ]
    }
}

/// The seven metrics; `None` marks an undefined value.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub sensitivity: Option<f64>,
    pub f1: Option<f64>,
    pub jaccard: Option<f64>,
    pub dice: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<Ratio<u64>> {
    (den != 0).then(|| Ratio::new(num, den))
}

fn to_f64(r: Ratio<u64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn exact(c: &ConfusionCounts) -> ExactMetrics {
    let precision = ratio(c.tp, c.tp + c.fp);
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r != Ratio::from_integer(0) => {
            // 2PR/(P+R) reduces to 2TP/(2TP+FP+FN); evaluated in that form to
            // keep the integers small.
            let v = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_);
            debug_assert_eq!(
                v,
                Some(Ratio::from_integer(2) * p * r / (p + r)),
                "f1 reduction"
            );
            v
        }
        _ => None,
    };
    ExactMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        specificity: ratio(c.tn, c.tn + c.fp),
        precision,
        sensitivity,
        f1,
        jaccard: ratio(c.tp, c.tp + c.fp + c.fn_),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
    }
}

pub fn report(c: &ConfusionCounts) -> MetricsReport {
    MetricsReport::from_exact(&exact(c))
}

impl MetricsReport {
    pub fn from_exact(e: &ExactMetrics) -> Self {
        let [accuracy, specificity, precision, sensitivity, f1, jaccard, dice] =
            e.as_array().map(|v| v.map(to_f64));
        Self {
            accuracy,
            specificity,
            precision,
            sensitivity,
            f1,
            jaccard,
            dice,
        }
    }

    pub fn as_array(&self) -> [Option<f64>; 7] {
        [
            self.accuracy,
            self.specificity,
            self.precision,
            self.sensitivity,
            self.f1,
            self.jaccard,
            self.dice,
        ]
    }

    fn from_array(a: [Option<f64>; 7]) -> Self {
        let [accuracy, specificity, precision, sensitivity, f1, jaccard, dice] = a;
        Self {
            accuracy,
            specificity,
            precision,
            sensitivity,
            f1,
            jaccard,
            dice,
        }
    }

    /// Percentages with two decimals separated by ` / `, `—` for undefined.
    pub fn table_row(&self) -> String {
        self.as_array()
            .iter()
            .map(|v| match v {
                Some(x) => format!("{:.2}", x * 100.0),
                None => "—".to_string(),
            })
            .collect::<Vec<_>>()
            .join(" / ")
    }

    /// Header plus one row, columns in reporting order.
    pub fn table(&self, label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12}{}", "", METRIC_HEADERS.join(" / "));
        let _ = writeln!(s, "{label:<12}{}", self.table_row());
        s
    }

    /// One `name=value` line per metric, `undefined` when not defined.
    pub fn records(&self, prefix: &str) -> String {
        let mut s = String::new();
        for (name, v) in METRIC_NAMES.iter().zip(self.as_array()) {
            match v {
                Some(x) => {
                    let _ = writeln!(s, "{prefix}{name}={x:.8}");
                }
                None => {
                    let _ = writeln!(s, "{prefix}{name}=undefined");
                }
            }
        }
        s
    }
}

/// Pools counts over all samples, then reports.
pub fn aggregate_micro(counts: &[ConfusionCounts]) -> Result<MetricsReport> {
    if counts.is_empty() {
        return Err(Error::Usage("aggregate of zero samples".into()));
    }
    let pooled = counts.iter().copied().fold(ConfusionCounts::default(), |a, b| a + b);
    Ok(report(&pooled))
}

/// Mean of per-sample metrics, each averaged over the samples where it is defined.
pub fn aggregate_macro(counts: &[ConfusionCounts]) -> Result<MetricsReport> {
    if counts.is_empty() {
        return Err(Error::Usage("aggregate of zero samples".into()));
    }
    let mut sums = [0.0f64; 7];
    let mut n = [0usize; 7];
    for c in counts {
        for (k, v) in report(c).as_array().into_iter().enumerate() {
            if let Some(x) = v {
                sums[k] += x;
                n[k] += 1;
            }
        }
    }
    let mut out = [None; 7];
    for k in 0..7 {
        if n[k] > 0 {
            out[k] = Some(sums[k] / n[k] as f64);
        }
    }
    Ok(MetricsReport::from_array(out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionCounts {
        ConfusionCounts { tp, fp, fn_, tn }
    }

    #[test]
    fn confusion_examples() {
        let gt = Mask::from_fn(128, 128, |y, x| y < 10 && x < 10);
        assert_eq!(confusion(&gt, &gt).unwrap(), counts(100, 0, 0, 16284));
        let c = confusion(&gt.complement(), &gt).unwrap();
        assert_eq!((c.tp, c.tn), (0, 0));

        let gt = Mask::new(3, 3, vec![1, 1, 0, 1, 1, 0, 0, 0, 0]).unwrap();
        let pred = Mask::new(3, 3, vec![1, 1, 0, 1, 0, 1, 0, 0, 0]).unwrap();
        assert_eq!(confusion(&pred, &gt).unwrap(), counts(3, 1, 1, 4));
        assert!(confusion(&Mask::zeros(2, 3), &Mask::zeros(3, 2)).is_err());
    }

    #[test]
    fn report_example() {
        let r = report(&counts(3, 1, 1, 5));
        assert_eq!(r.precision, Some(0.75));
        assert_eq!(r.sensitivity, Some(0.75));
        assert_eq!(r.dice, Some(0.75));
        assert_eq!(r.f1, Some(0.75));
        assert_eq!(r.jaccard, Some(0.6));
        assert_eq!(r.accuracy, Some(0.8));
        assert_eq!(r.specificity, Some(5.0 / 6.0));
    }

    #[test]
    fn perfect_and_undefined() {
        let r = report(&counts(10, 0, 0, 10));
        assert!(r.as_array().iter().all(|v| *v == Some(1.0)));
        let r = report(&counts(0, 0, 0, 50));
        assert_eq!(r.accuracy, Some(1.0));
        assert_eq!(r.dice, None);
        assert_eq!(r.precision, None);
        assert!(r.table_row().ends_with("—"));
        assert!(r.records("").contains("dice=undefined"));
    }

    #[test]
    fn table_format() {
        let r = MetricsReport {
            accuracy: Some(0.9888),
            specificity: Some(0.9953),
            precision: Some(0.9534),
            sensitivity: Some(0.9120),
            f1: Some(0.9374),
            jaccard: None,
            dice: Some(0.9274),
        };
        assert_eq!(r.table_row(), "98.88 / 99.53 / 95.34 / 91.20 / 93.74 / — / 92.74");
        assert!(r.table("x").starts_with(&format!("{:<12}Accuracy / Specificity / PRE", "")));
    }

    #[test]
    fn micro_aggregation() {
        let one = counts(3, 1, 1, 5);
        assert_eq!(aggregate_micro(&[one]).unwrap(), report(&one));
        assert_eq!(aggregate_micro(&[one, one]).unwrap(), report(&one));
        let r = aggregate_micro(&[counts(1, 0, 1, 2), counts(3, 1, 0, 0)]).unwrap();
        // pooled (4, 1, 1, 2)
        assert_eq!(r.dice, Some(0.8));
        assert_eq!(r.jaccard, Some(4.0 / 6.0));
        assert!(aggregate_micro(&[]).is_err());
    }

    #[test]
    fn macro_skips_undefined() {
        let r = aggregate_macro(&[counts(0, 0, 0, 4), counts(1, 0, 1, 2)]).unwrap();
        assert_eq!(r.dice, Some(2.0 / 3.0));
        assert_eq!(r.accuracy, Some((1.0 + 0.75) / 2.0));
    }
}
