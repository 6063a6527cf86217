//! Confusion matrices, classification reports and training-curve files.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpochRecord, TrainHistory};

/// `counts[true][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::shape("confusion matrix must be square and non-empty"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes()).map(|i| self.counts[i][i]).sum()
    }

    /// Header `true\pred,0,..,K-1`, one row per true class.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in 0..self.num_classes() {
            write!(s, ",{c}").unwrap();
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

pub fn confusion(y_true: &[usize], y_pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if y_true.len() != y_pred.len() {
        return Err(Error::shape(format!(
            "{} true labels for {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if k == 0 {
        return Err(Error::param("confusion matrix needs at least one class"));
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (i, (&t, &p)) in y_true.iter().zip(y_pred).enumerate() {
        if t >= k || p >= k {
            return Err(Error::data(format!("row {i}: label pair ({t}, {p}) outside [0, {k})")));
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix { counts })
}

/// Percentages in `[0, 100]`, unrounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub classes: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub total: u64,
    /// Set when a precision or recall denominator was zero and scored as 0.
    pub zero_division: bool,
    pub warnings: Vec<String>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

pub fn report(cm: &ConfusionMatrix) -> Result<ClassificationReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::data("cannot report on an all-zero confusion matrix"));
    }
    let k = cm.num_classes();
    let mut warnings = Vec::new();
    let mut classes = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.get(c, c);
        let predicted: u64 = (0..k).map(|t| cm.get(t, c)).sum();
        let support: u64 = cm.counts[c].iter().sum();
        let precision = ratio(tp, predicted).unwrap_or_else(|| {
            warnings.push(format!("class {c}: no predictions, precision set to 0"));
            0.0
        });
        let recall = ratio(tp, support).unwrap_or_else(|| {
            warnings.push(format!("class {c}: no true samples, recall set to 0"));
            0.0
        });
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        classes.push(ClassMetrics {
            class: c,
            precision,
            recall,
            f1,
            support,
        });
    }
    let mean = |f: fn(&ClassMetrics) -> f64| classes.iter().map(f).sum::<f64>() / k as f64;
    Ok(ClassificationReport {
        macro_precision: mean(|m| m.precision),
        macro_recall: mean(|m| m.recall),
        macro_f1: mean(|m| m.f1),
        accuracy: 100.0 * cm.trace() as f64 / total as f64,
        total,
        zero_division: !warnings.is_empty(),
        warnings,
        classes,
    })
}

impl ClassificationReport {
    /// Aligned plain text: per-class rows, macro average, accuracy; two
    /// decimals, no support column.
    pub fn render(&self) -> String {
        let mut s = format!("{:>12}{:>11}{:>10}{:>10}\n", "", "precision", "recall", "f1-score");
        for m in &self.classes {
            writeln!(
                s,
                "{:>12}{:>11.2}{:>10.2}{:>10.2}",
                m.class, m.precision, m.recall, m.f1
            )
            .unwrap();
        }
        s.push('\n');
        writeln!(
            s,
            "{:>12}{:>11.2}{:>10.2}{:>10.2}",
            "macro avg", self.macro_precision, self.macro_recall, self.macro_f1
        )
        .unwrap();
        writeln!(s, "{:>12}{:>11}{:>10}{:>10.2}", "accuracy", "", "", self.accuracy).unwrap();
        for w in &self.warnings {
            writeln!(s, "warning: {w}").unwrap();
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Write `epoch,train_loss,train_acc,val_loss,val_acc`; missing validation
/// values are empty cells. Fails without creating a file if `history` is empty.
pub fn emit_curves(history: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if history.is_empty() {
        return Err(Error::data("no epochs recorded; curve file not written"));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e.to_string()));
    w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        .map_err(io)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for e in &history.epochs {
        w.write_record([
            e.epoch.to_string(),
            format!("{:?}", e.train_loss),
            format!("{:?}", e.train_acc),
            opt(e.val_loss),
            opt(e.val_acc),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_curves(path: impl AsRef<Path>) -> Result<TrainHistory> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let name = path.display();
    let mut epochs = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("{name}: {e}")))?;
        let num = |c: usize| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::data(format!("{name}: row {}: bad value in column {c}", i + 1)))
        };
        let opt = |c: usize| -> Result<Option<f64>> {
            match rec.get(c) {
                Some("") => Ok(None),
                _ => num(c).map(Some),
            }
        };
        epochs.push(EpochRecord {
            epoch: num(0)? as usize,
            train_loss: num(1)?,
            train_acc: num(2)?,
            val_loss: opt(3)?,
            val_acc: opt(4)?,
        });
    }
    Ok(TrainHistory { epochs })
}
