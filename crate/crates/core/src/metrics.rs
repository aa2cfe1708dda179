//! Confusion matrices and per-class / macro precision, recall and F1.
//!
//! A zero denominator yields 0. Macro values are unweighted means over all
//! three classes, whatever their support; macro F1 is the mean of the
//! per-class F1 scores.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentClass;
use crate::error::{io_err, EvalError};

/// `cells[gold][predicted]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub cells: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn row_sum(&self, gold: usize) -> u64 {
        self.cells[gold].iter().sum()
    }

    pub fn column_sum(&self, predicted: usize) -> u64 {
        self.cells.iter().map(|r| r[predicted]).sum()
    }

    /// Adds another matrix cell-wise (partial results merge associatively).
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, other_row) in self.cells.iter_mut().zip(&other.cells) {
            for (c, o) in row.iter_mut().zip(other_row) {
                *c += o;
            }
        }
    }
}

pub fn confusion_matrix(gold: &[SentimentClass], pred: &[SentimentClass]) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred.len()));
    }
    let mut m = ConfusionMatrix::default();
    for (g, p) in gold.iter().zip(pred) {
        m.cells[g.index()][p.index()] += 1;
    }
    Ok(m)
}

/// As [`confusion_matrix`] over raw integer codes, rejecting codes outside
/// 0..=2.
pub fn confusion_matrix_from_codes(gold: &[i64], pred: &[i64]) -> Result<ConfusionMatrix, EvalError> {
    let parse = |codes: &[i64]| -> Result<Vec<SentimentClass>, EvalError> {
        codes
            .iter()
            .map(|&c| SentimentClass::from_code(c).map_err(|_| EvalError::BadClass(c)))
            .collect()
    };
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch(gold.len(), pred.len()));
    }
    confusion_matrix(&parse(gold)?, &parse(pred)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn per_class_prf(m: &ConfusionMatrix) -> [Prf; 3] {
    std::array::from_fn(|c| {
        let tp = m.cells[c][c];
        let precision = ratio(tp, m.column_sum(c));
        let recall = ratio(tp, m.row_sum(c));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    })
}

pub fn macro_prf(per_class: &[Prf; 3]) -> Prf {
    let mean = |f: fn(&Prf) -> f64| per_class.iter().map(f).sum::<f64>() / 3.0;
    Prf {
        precision: mean(|p| p.precision),
        recall: mean(|p| p.recall),
        f1: mean(|p| p.f1),
    }
}

/// Macro F1 of `pred` against `gold`.
pub fn macro_f1(gold: &[SentimentClass], pred: &[SentimentClass]) -> Result<f64, EvalError> {
    Ok(macro_prf(&per_class_prf(&confusion_matrix(gold, pred)?)).f1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub model_id: String,
    pub split: String,
    pub n_examples: u64,
    pub confusion: ConfusionMatrix,
    pub per_class: [Prf; 3],
    pub macro_avg: Prf,
}

impl EvaluationReport {
    pub fn new(model_id: impl Into<String>, split: impl Into<String>, confusion: ConfusionMatrix) -> Self {
        let per_class = per_class_prf(&confusion);
        Self {
            model_id: model_id.into(),
            split: split.into(),
            n_examples: confusion.total(),
            confusion,
            macro_avg: macro_prf(&per_class),
            per_class,
        }
    }

    pub fn from_predictions(
        model_id: impl Into<String>,
        split: impl Into<String>,
        gold: &[SentimentClass],
        pred: &[SentimentClass],
    ) -> Result<Self, EvalError> {
        Ok(Self::new(model_id, split, confusion_matrix(gold, pred)?))
    }
}

#[derive(Serialize, Deserialize)]
struct ClassEntry {
    class: u8,
    name: String,
    #[serde(flatten)]
    scores: Prf,
}

#[derive(Serialize, Deserialize)]
struct RoundedPrf {
    precision: String,
    recall: String,
    f1: String,
}

impl From<&Prf> for RoundedPrf {
    fn from(p: &Prf) -> Self {
        Self {
            precision: round_half_up_2(p.precision),
            recall: round_half_up_2(p.recall),
            f1: round_half_up_2(p.f1),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Presentation {
    per_class: Vec<RoundedPrf>,
    #[serde(rename = "macro")]
    macro_avg: RoundedPrf,
}

/// On-disk layout of a report.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportFile {
    model_id: String,
    split: String,
    n_examples: u64,
    confusion: ConfusionMatrix,
    per_class: Vec<ClassEntry>,
    #[serde(rename = "macro")]
    macro_avg: Prf,
    presentation: Presentation,
}

/// Serializes a report as pretty-printed JSON with a trailing newline.
pub fn report_json(report: &EvaluationReport) -> String {
    let file = ReportFile {
        model_id: report.model_id.clone(),
        split: report.split.clone(),
        n_examples: report.n_examples,
        confusion: report.confusion,
        per_class: SentimentClass::ALL
            .iter()
            .zip(&report.per_class)
            .map(|(c, p)| ClassEntry {
                class: c.code(),
                name: c.name().to_owned(),
                scores: *p,
            })
            .collect(),
        macro_avg: report.macro_avg,
        presentation: Presentation {
            per_class: report.per_class.iter().map(RoundedPrf::from).collect(),
            macro_avg: RoundedPrf::from(&report.macro_avg),
        },
    };
    let mut out = serde_json::to_string_pretty(&file).expect("report serializes");
    out.push('\n');
    out
}

pub fn write_report(report: &EvaluationReport, path: &Path) -> Result<(), EvalError> {
    std::fs::write(path, report_json(report)).map_err(io_err::<EvalError, _>(path))
}

pub fn read_report(path: &Path) -> Result<EvaluationReport, EvalError> {
    let raw = std::fs::read_to_string(path).map_err(io_err::<EvalError, _>(path))?;
    let format = |message: String| EvalError::Format {
        path: path.to_owned(),
        message,
    };
    let file: ReportFile = serde_json::from_str(&raw).map_err(|e| format(e.to_string()))?;
    if file.per_class.len() != 3 {
        return Err(format(format!("expected 3 per_class entries, found {}", file.per_class.len())));
    }
    if file.n_examples != file.confusion.total() {
        return Err(format(format!(
            "n_examples {} differs from the confusion total {}",
            file.n_examples,
            file.confusion.total()
        )));
    }
    for (i, entry) in file.per_class.iter().enumerate() {
        if usize::from(entry.class) != i {
            return Err(format(format!("per_class entry {i} has class {}", entry.class)));
        }
    }
    Ok(EvaluationReport {
        model_id: file.model_id,
        split: file.split,
        n_examples: file.n_examples,
        confusion: file.confusion,
        per_class: std::array::from_fn(|i| file.per_class[i].scores),
        macro_avg: file.macro_avg,
    })
}

/// Two-decimal presentation, rounding half away from zero on the shortest
/// decimal representation of `x` (so 0.805 becomes "0.81").
pub fn round_half_up_2(x: f64) -> String {
    assert!(x.is_finite(), "cannot round {x}");
    let repr = format!("{}", x.abs());
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let mut digits: Vec<u8> = int_part.bytes().map(|b| b - b'0').collect();
    let frac: Vec<u8> = frac_part.bytes().map(|b| b - b'0').collect();
    digits.push(frac.first().copied().unwrap_or(0));
    digits.push(frac.get(1).copied().unwrap_or(0));
    if frac.get(2).copied().unwrap_or(0) >= 5 {
        let mut i = digits.len();
        loop {
            if i == 0 {
                digits.insert(0, 1);
                break;
            }
            i -= 1;
            if digits[i] == 9 {
                digits[i] = 0;
            } else {
                digits[i] += 1;
                break;
            }
        }
    }
    let split = digits.len() - 2;
    let text: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    let negative = x < 0.0 && text.bytes().any(|b| b != b'0');
    format!("{}{}.{}", if negative { "-" } else { "" }, &text[..split], &text[split..])
}
