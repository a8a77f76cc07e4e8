use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataset::{Label, N_CLASSES};
use crate::error::{Error, Result};

/// Counts indexed `[actual][predicted]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; N_CLASSES]; N_CLASSES],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; N_CLASSES]; N_CLASSES]) -> Self {
        Self { counts }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Self::default();
        for (actual, predicted) in pairs {
            m.counts[actual][predicted] += 1;
        }
        m
    }

    pub fn add(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..N_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.total())
    }

    pub fn precision(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.predicted(class))
    }

    pub fn recall(&self, class: usize) -> f64 {
        ratio(self.counts[class][class], self.support(class))
    }

    pub fn f1(&self, class: usize) -> f64 {
        let (p, r) = (self.precision(class), self.recall(class));
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

/// Division with the 0/0 = 0 convention used by every metric here.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for pooled reports.
    pub fold: Option<usize>,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    pub accuracy: f64,
    pub correct: u64,
    pub total: u64,
}

impl EvalReport {
    pub fn from_confusion(fold: Option<usize>, confusion: ConfusionMatrix) -> Result<Self> {
        if confusion.total() == 0 {
            return Err(Error::EmptyFold(fold.unwrap_or(usize::MAX)));
        }
        let per_class = Label::ALL
            .iter()
            .map(|l| {
                let c = l.index();
                ClassMetrics {
                    label: l.to_string(),
                    precision: confusion.precision(c),
                    recall: confusion.recall(c),
                    f1: confusion.f1(c),
                    support: confusion.support(c),
                }
            })
            .collect();
        Ok(Self {
            fold,
            accuracy: confusion.accuracy(),
            correct: confusion.correct(),
            total: confusion.total(),
            confusion,
            per_class,
        })
    }

    pub fn macro_f1(&self) -> f64 {
        self.per_class.iter().map(|c| c.f1).sum::<f64>() / self.per_class.len() as f64
    }

    /// Plain-text rendering: a metric table followed by the confusion matrix.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        match self.fold {
            Some(f) => writeln!(s, "fold {f}").unwrap(),
            None => writeln!(s, "pooled").unwrap(),
        }
        writeln!(s, "{:<12} {:>9} {:>9} {:>9} {:>8}", "class", "precision", "recall", "f1", "support").unwrap();
        for c in &self.per_class {
            writeln!(s, "{:<12} {:>9.4} {:>9.4} {:>9.4} {:>8}", c.label, c.precision, c.recall, c.f1, c.support).unwrap();
        }
        writeln!(s, "accuracy {:.4} ({}/{})", self.accuracy, self.correct, self.total).unwrap();
        writeln!(s, "confusion (rows actual, columns predicted)").unwrap();
        write!(s, "{:<12}", "").unwrap();
        for l in Label::ALL {
            write!(s, " {:>10}", l.as_str()).unwrap();
        }
        writeln!(s).unwrap();
        for (l, row) in Label::ALL.iter().zip(&self.confusion.counts) {
            write!(s, "{:<12}", l.as_str()).unwrap();
            for c in row {
                write!(s, " {c:>10}").unwrap();
            }
            writeln!(s).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub folds: Vec<EvalReport>,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub pooled: EvalReport,
}

impl CrossValidationReport {
    pub fn from_folds(folds: Vec<EvalReport>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::InvalidConfig("no folds to aggregate".into()));
        }
        let mut pooled = ConfusionMatrix::default();
        for f in &folds {
            pooled.add(&f.confusion);
        }
        let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        Ok(Self {
            mean_accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            min_accuracy: accs.iter().copied().fold(f64::INFINITY, f64::min),
            max_accuracy: accs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            pooled: EvalReport::from_confusion(None, pooled)?,
            folds,
        })
    }

    /// Index of the fold with the highest accuracy; ties go to the lowest.
    pub fn best_fold(&self) -> usize {
        let accs: Vec<f64> = self.folds.iter().map(|f| f.accuracy).collect();
        crate::nn::argmax(&accs)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for f in &self.folds {
            s.push_str(&f.to_text());
            s.push('\n');
        }
        s.push_str(&self.pooled.to_text());
        writeln!(
            s,
            "\nmean accuracy over {} folds: {:.4} (min {:.4}, max {:.4})",
            self.folds.len(),
            self.mean_accuracy,
            self.min_accuracy,
            self.max_accuracy
        )
        .unwrap();
        s
    }
}
