use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::Variant;

/// Confusion counts (rows = truth, columns = prediction) and the scores
/// derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub confusion: Vec<Vec<u64>>,
    /// Recall per class; `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
    pub oa: f64,
    /// Mean recall over classes present in the test set.
    pub aa: f64,
    pub kappa: f64,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let c = confusion.len();
        if confusion.iter().any(|row| row.len() != c) {
            return Err(Error::Eval("confusion matrix must be square".into()));
        }
        let total: u64 = confusion.iter().flatten().sum();
        if total == 0 {
            return Err(Error::Eval("empty test set".into()));
        }
        let n = total as f64;
        let trace: u64 = (0..c).map(|k| confusion[k][k]).sum();
        let rows: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        let cols: Vec<u64> = (0..c)
            .map(|j| confusion.iter().map(|r| r[j]).sum())
            .collect();
        let per_class: Vec<Option<f64>> = (0..c)
            .map(|k| (rows[k] > 0).then(|| confusion[k][k] as f64 / rows[k] as f64))
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        let aa = present.iter().sum::<f64>() / present.len() as f64;
        let oa = trace as f64 / n;
        let pe = (0..c).map(|k| rows[k] as f64 * cols[k] as f64).sum::<f64>() / (n * n);
        // pe == 1 only when every count sits in one cell, i.e. perfect agreement.
        let kappa = if pe >= 1.0 {
            1.0
        } else {
            (oa - pe) / (1.0 - pe)
        };
        Ok(Self {
            confusion,
            per_class,
            oa,
            aa,
            kappa,
        })
    }

    /// Accumulates `(truth, prediction)` pairs over `classes` classes.
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Eval(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::Label {
                    label: t.max(p),
                    classes,
                });
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    pub fn confusion_csv(&self) -> String {
        confusion_csv(&self.confusion)
    }
}

/// Header row `truth\pred,1,..,C`, then one row per true class.
pub fn confusion_csv(confusion: &[Vec<u64>]) -> String {
    let c = confusion.len();
    let mut s = String::from("truth\\pred");
    for j in 1..=c {
        let _ = write!(s, ",{j}");
    }
    s.push('\n');
    for (k, row) in confusion.iter().enumerate() {
        let _ = write!(s, "{}", k + 1);
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Per-session reports of one variant with their means.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionsReport {
    pub variant: Variant,
    pub sessions: Vec<EvalReport>,
    pub mean_oa: f64,
    pub mean_aa: f64,
    pub mean_kappa: f64,
    /// Mean recall per class over the sessions in which the class is present.
    pub mean_per_class: Vec<Option<f64>>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl SessionsReport {
    pub fn new(variant: Variant, sessions: Vec<EvalReport>) -> Result<Self> {
        let first = sessions
            .first()
            .ok_or_else(|| Error::Eval("no sessions to aggregate".into()))?;
        let classes = first.per_class.len();
        Ok(Self {
            variant,
            mean_oa: mean(sessions.iter().map(|r| r.oa)).unwrap_or(0.0),
            mean_aa: mean(sessions.iter().map(|r| r.aa)).unwrap_or(0.0),
            mean_kappa: mean(sessions.iter().map(|r| r.kappa)).unwrap_or(0.0),
            mean_per_class: (0..classes)
                .map(|k| mean(sessions.iter().filter_map(|r| r.per_class[k])))
                .collect(),
            sessions,
        })
    }

    /// Confusion counts summed over sessions.
    pub fn summed_confusion(&self) -> Vec<Vec<u64>> {
        let mut sum = self.sessions[0].confusion.clone();
        for r in &self.sessions[1..] {
            for (a, b) in sum.iter_mut().flatten().zip(r.confusion.iter().flatten()) {
                *a += b;
            }
        }
        sum
    }

    /// `key = value` lines, every key prefixed with `prefix`.
    pub fn write_keys(&self, out: &mut String, prefix: &str) {
        let _ = writeln!(out, "{prefix}sessions = {}", self.sessions.len());
        let _ = writeln!(out, "{prefix}test_pixels = {}", self.sessions[0].total());
        let _ = writeln!(out, "{prefix}oa = {}", self.mean_oa);
        let _ = writeln!(out, "{prefix}aa = {}", self.mean_aa);
        let _ = writeln!(out, "{prefix}kappa = {}", self.mean_kappa);
        for (k, v) in self.mean_per_class.iter().enumerate() {
            let _ = writeln!(out, "{prefix}class_{}_acc = {}", k + 1, fmt_opt(*v));
        }
        for (i, r) in self.sessions.iter().enumerate() {
            let _ = writeln!(out, "{prefix}session_{i}_oa = {}", r.oa);
            let _ = writeln!(out, "{prefix}session_{i}_aa = {}", r.aa);
            let _ = writeln!(out, "{prefix}session_{i}_kappa = {}", r.kappa);
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

/// Metrics report of a single evaluation.
pub fn report_text(variant: Variant, r: &EvalReport) -> String {
    let mut s = format!("variant = {variant}\ntest_pixels = {}\n", r.total());
    let _ = writeln!(s, "oa = {}\naa = {}\nkappa = {}", r.oa, r.aa, r.kappa);
    for (k, v) in r.per_class.iter().enumerate() {
        let _ = writeln!(s, "class_{}_acc = {}", k + 1, fmt_opt(*v));
    }
    s
}

/// Parses a `key = value` report back into pairs, for consumers and tests.
pub fn parse_report(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_class_is_excluded_from_aa() {
        let r = EvalReport::from_confusion(vec![vec![3, 1], vec![0, 0]]).unwrap();
        assert_eq!(r.per_class, vec![Some(0.75), None]);
        assert_eq!(r.aa, 0.75);
    }

    #[test]
    fn single_cell_is_perfect() {
        let r = EvalReport::from_confusion(vec![vec![5, 0], vec![0, 0]]).unwrap();
        assert_eq!((r.oa, r.kappa), (1.0, 1.0));
    }

    #[test]
    fn csv_layout() {
        assert_eq!(
            confusion_csv(&[vec![1, 2], vec![3, 4]]),
            "truth\\pred,1,2\n1,1,2\n2,3,4\n"
        );
    }
}
