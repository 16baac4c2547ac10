use serde::{Deserialize, Serialize};

/// Classification quality over a set of bags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl Metrics {
    /// Metrics for `num_classes` classes. Any 0/0 precision, recall or F1
    /// counts as 0.
    pub fn from_predictions(predicted: &[usize], actual: &[usize], num_classes: usize) -> Self {
        assert_eq!(predicted.len(), actual.len());
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &a) in predicted.iter().zip(actual) {
            confusion[a][p] += 1;
        }
        let total = predicted.len() as f64;
        let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
        for c in 0..num_classes {
            let tp = confusion[c][c] as f64;
            let pred_c: usize = (0..num_classes).map(|a| confusion[a][c]).sum();
            let true_c: usize = confusion[c].iter().sum();
            let p = ratio(tp, pred_c as f64);
            let r = ratio(tp, true_c as f64);
            p_sum += p;
            r_sum += r;
            f_sum += ratio(2.0 * p * r, p + r);
        }
        let k = num_classes as f64;
        Self {
            accuracy: ratio(correct as f64, total),
            macro_precision: p_sum / k,
            macro_recall: r_sum / k,
            macro_f1: f_sum / k,
            confusion,
        }
    }

    /// Per-class F1 scores.
    pub fn class_f1(&self) -> Vec<f64> {
        let k = self.confusion.len();
        (0..k)
            .map(|c| {
                let tp = self.confusion[c][c] as f64;
                let pred_c: usize = (0..k).map(|a| self.confusion[a][c]).sum();
                let true_c: usize = self.confusion[c].iter().sum();
                let p = ratio(tp, pred_c as f64);
                let r = ratio(tp, true_c as f64);
                ratio(2.0 * p * r, p + r)
            })
            .collect()
    }
}

/// The four headline metrics, e.g. a mean or standard deviation over folds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl MetricSummary {
    fn of(m: &Metrics) -> [f64; 4] {
        [m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self {
            accuracy: a[0],
            macro_precision: a[1],
            macro_recall: a[2],
            macro_f1: a[3],
        }
    }

    /// Mean and population standard deviation across `runs`.
    pub fn mean_std(runs: &[&Metrics]) -> (Self, Self) {
        let n = runs.len().max(1) as f64;
        let mut mean = [0.0; 4];
        for m in runs {
            for (acc, v) in mean.iter_mut().zip(Self::of(m)) {
                *acc += v / n;
            }
        }
        let mut var = [0.0; 4];
        for m in runs {
            for ((acc, v), mu) in var.iter_mut().zip(Self::of(m)).zip(mean) {
                *acc += (v - mu).powi(2) / n;
            }
        }
        (Self::from_array(mean), Self::from_array(var.map(f64::sqrt)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let m = Metrics::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn constant_predictor_on_balanced_binary() {
        let actual = [0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let m = Metrics::from_predictions(&[0; 10], &actual, 2);
        assert_eq!(m.accuracy, 0.5);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_precision - 0.25).abs() < 1e-15);
        assert_eq!(m.macro_recall, 0.5);
        assert_eq!(m.confusion, vec![vec![5, 0], vec![5, 0]]);
    }

    #[test]
    fn mean_std() {
        let a = Metrics::from_predictions(&[0, 1], &[0, 1], 2);
        let b = Metrics::from_predictions(&[0, 0], &[0, 1], 2);
        let (mean, std) = MetricSummary::mean_std(&[&a, &b]);
        assert_eq!(mean.accuracy, 0.75);
        assert_eq!(std.accuracy, 0.25);
    }
}
