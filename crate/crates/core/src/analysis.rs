//! Misclassification mining and two-model disagreement triage.
//!
//! A severe error confuses the two extreme classes (gold 2 predicted 0 or
//! gold 0 predicted 2). Triage reports are written twice: a TSV that
//! round-trips losslessly and a markdown table for reading. Reviewers fill
//! the `pattern_tag` column of the TSV and ingest it back for a tag summary.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::SentimentClass;
use crate::error::{io_err, EvalError};

/// Characters of review text shown in the markdown table.
pub const DISPLAY_TEXT_CHARS: usize = 1000;

const TRIAGE_HEADER: [&str; 8] = [
    "unique_id",
    "gold",
    "pred_a",
    "pred_b",
    "severity",
    "bucket",
    "pattern_tag",
    "text",
];

fn check_lengths(lens: &[usize]) -> Result<(), EvalError> {
    match lens.iter().find(|&&l| l != lens[0]) {
        Some(&other) => Err(EvalError::LengthMismatch(lens[0], other)),
        None => Ok(()),
    }
}

pub fn is_severe(gold: SentimentClass, pred: SentimentClass) -> bool {
    matches!(
        (gold, pred),
        (SentimentClass::Positive, SentimentClass::Negative) | (SentimentClass::Negative, SentimentClass::Positive)
    )
}

/// Ascending indices where `pred` differs from `gold`.
pub fn misclassified_indices(gold: &[SentimentClass], pred: &[SentimentClass]) -> Result<Vec<usize>, EvalError> {
    check_lengths(&[gold.len(), pred.len()])?;
    Ok((0..gold.len()).filter(|&i| gold[i] != pred[i]).collect())
}

/// Ascending indices of severe errors.
pub fn severe_errors(gold: &[SentimentClass], pred: &[SentimentClass]) -> Result<Vec<usize>, EvalError> {
    check_lengths(&[gold.len(), pred.len()])?;
    Ok((0..gold.len()).filter(|&i| is_severe(gold[i], pred[i])).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bucket {
    BothRight,
    BothWrong,
    AWrongBRight,
    ARightBWrong,
}

impl Bucket {
    pub const ALL: [Bucket; 4] = [Self::BothRight, Self::BothWrong, Self::AWrongBRight, Self::ARightBWrong];

    pub fn of(gold: SentimentClass, pred_a: SentimentClass, pred_b: SentimentClass) -> Self {
        match (pred_a == gold, pred_b == gold) {
            (true, true) => Self::BothRight,
            (false, false) => Self::BothWrong,
            (false, true) => Self::AWrongBRight,
            (true, false) => Self::ARightBWrong,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::BothRight => "both_right",
            Self::BothWrong => "both_wrong",
            Self::AWrongBRight => "a_wrong_b_right",
            Self::ARightBWrong => "a_right_b_wrong",
        }
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Bucket {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| format!("unknown bucket {s:?}"))
    }
}

/// Index sets of the four buckets, each ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DisagreementPartition {
    pub both_right: Vec<usize>,
    pub both_wrong: Vec<usize>,
    pub a_wrong_b_right: Vec<usize>,
    pub a_right_b_wrong: Vec<usize>,
}

impl DisagreementPartition {
    pub fn get(&self, bucket: Bucket) -> &[usize] {
        match bucket {
            Bucket::BothRight => &self.both_right,
            Bucket::BothWrong => &self.both_wrong,
            Bucket::AWrongBRight => &self.a_wrong_b_right,
            Bucket::ARightBWrong => &self.a_right_b_wrong,
        }
    }

    pub fn total(&self) -> usize {
        Bucket::ALL.iter().map(|&b| self.get(b).len()).sum()
    }
}

pub fn disagreement_partition(
    gold: &[SentimentClass],
    pred_a: &[SentimentClass],
    pred_b: &[SentimentClass],
) -> Result<DisagreementPartition, EvalError> {
    check_lengths(&[gold.len(), pred_a.len(), pred_b.len()])?;
    let mut p = DisagreementPartition::default();
    for i in 0..gold.len() {
        let set = match Bucket::of(gold[i], pred_a[i], pred_b[i]) {
            Bucket::BothRight => &mut p.both_right,
            Bucket::BothWrong => &mut p.both_wrong,
            Bucket::AWrongBRight => &mut p.a_wrong_b_right,
            Bucket::ARightBWrong => &mut p.a_right_b_wrong,
        };
        set.push(i);
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Severe,
    Ordinary,
}

impl Severity {
    /// Severe when any model that got the example wrong confused the
    /// extreme classes.
    pub fn of(gold: SentimentClass, pred_a: SentimentClass, pred_b: SentimentClass) -> Self {
        if is_severe(gold, pred_a) || is_severe(gold, pred_b) {
            Self::Severe
        } else {
            Self::Ordinary
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Severe => "severe",
            Self::Ordinary => "ordinary",
        }
    }
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Severity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "severe" => Ok(Self::Severe),
            "ordinary" => Ok(Self::Ordinary),
            _ => Err(format!("unknown severity {s:?}")),
        }
    }
}

/// Reviewer-assigned error category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternTag {
    Mislabeled,
    ContradictoryLanguage,
    NonDomainSentiment,
    MedicalDomainSentiment,
    Other,
}

impl PatternTag {
    pub const ALL: [PatternTag; 5] = [
        Self::Mislabeled,
        Self::ContradictoryLanguage,
        Self::NonDomainSentiment,
        Self::MedicalDomainSentiment,
        Self::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Mislabeled => "Mislabeled",
            Self::ContradictoryLanguage => "ContradictoryLanguage",
            Self::NonDomainSentiment => "NonDomainSentiment",
            Self::MedicalDomainSentiment => "MedicalDomainSentiment",
            Self::Other => "Other",
        }
    }
}

impl fmt::Display for PatternTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PatternTag {
    type Err = String;

    /// Case, spacing and punctuation are ignored, and a trailing
    /// "examples"/"statements" is accepted, so "Non-domain sentiment
    /// statements" parses.
    fn from_str(s: &str) -> Result<Self, String> {
        let key: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .flat_map(char::to_lowercase)
            .collect();
        let key = key
            .strip_suffix("statements")
            .or_else(|| key.strip_suffix("examples"))
            .unwrap_or(&key);
        match key {
            "mislabeled" | "mislabelled" => Ok(Self::Mislabeled),
            "contradictorylanguage" => Ok(Self::ContradictoryLanguage),
            "nondomainsentiment" => Ok(Self::NonDomainSentiment),
            "medicaldomainsentiment" => Ok(Self::MedicalDomainSentiment),
            "other" => Ok(Self::Other),
            _ => Err(format!(
                "unknown pattern tag {s:?} (expected one of {})",
                Self::ALL.map(Self::as_str).join(", ")
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementRecord {
    pub unique_id: String,
    pub text: String,
    pub gold: SentimentClass,
    pub pred_a: SentimentClass,
    pub pred_b: SentimentClass,
    pub severity: Severity,
    pub bucket: Bucket,
    pub pattern_tag: Option<PatternTag>,
}

impl DisagreementRecord {
    pub fn new(
        unique_id: impl Into<String>,
        text: impl Into<String>,
        gold: SentimentClass,
        pred_a: SentimentClass,
        pred_b: SentimentClass,
    ) -> Self {
        Self {
            unique_id: unique_id.into(),
            text: text.into(),
            gold,
            pred_a,
            pred_b,
            severity: Severity::of(gold, pred_a, pred_b),
            bucket: Bucket::of(gold, pred_a, pred_b),
            pattern_tag: None,
        }
    }
}

/// One record per example, in input order.
pub fn build_records(
    ids: &[String],
    texts: &[String],
    gold: &[SentimentClass],
    pred_a: &[SentimentClass],
    pred_b: &[SentimentClass],
) -> Result<Vec<DisagreementRecord>, EvalError> {
    check_lengths(&[ids.len(), texts.len(), gold.len(), pred_a.len(), pred_b.len()])?;
    Ok((0..gold.len())
        .map(|i| DisagreementRecord::new(ids[i].clone(), texts[i].clone(), gold[i], pred_a[i], pred_b[i]))
        .collect())
}

/// Record selection; `None` fields accept everything.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TriageFilter {
    pub severity: Option<Severity>,
    pub buckets: Option<Vec<Bucket>>,
}

impl TriageFilter {
    /// Everything except `both_right`.
    pub fn errors() -> Self {
        Self {
            severity: None,
            buckets: Some(vec![Bucket::BothWrong, Bucket::AWrongBRight, Bucket::ARightBWrong]),
        }
    }

    pub fn matches(&self, r: &DisagreementRecord) -> bool {
        self.severity.is_none_or(|s| s == r.severity) && self.buckets.as_ref().is_none_or(|b| b.contains(&r.bucket))
    }
}

/// Display names for the two compared models.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelNames {
    pub a: String,
    pub b: String,
}

impl Default for ModelNames {
    fn default() -> Self {
        Self {
            a: "model_a".into(),
            b: "model_b".into(),
        }
    }
}

/// Paths written by [`emit_triage_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriagePaths {
    pub table: PathBuf,
    pub markdown: PathBuf,
    pub written: usize,
}

/// Writes the records matching `filter` to `path` (TSV) and to the same path
/// with an `.md` extension (markdown table).
pub fn emit_triage_report(
    records: &[DisagreementRecord],
    path: &Path,
    filter: &TriageFilter,
    names: &ModelNames,
) -> Result<TriagePaths, EvalError> {
    let selected: Vec<&DisagreementRecord> = records.iter().filter(|r| filter.matches(r)).collect();
    write_triage_tsv(&selected, path)?;
    let markdown = path.with_extension("md");
    std::fs::write(&markdown, triage_markdown(&selected, names)).map_err(io_err::<EvalError, _>(&markdown))?;
    Ok(TriagePaths {
        table: path.to_owned(),
        markdown,
        written: selected.len(),
    })
}

fn write_triage_tsv(records: &[&DisagreementRecord], path: &Path) -> Result<(), EvalError> {
    let csv_err = |e: csv::Error| EvalError::Format {
        path: path.to_owned(),
        message: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(TRIAGE_HEADER).map_err(csv_err)?;
    for r in records {
        let tag = r.pattern_tag.map_or("", PatternTag::as_str);
        w.write_record([
            r.unique_id.as_str(),
            &r.gold.code().to_string(),
            &r.pred_a.code().to_string(),
            &r.pred_b.code().to_string(),
            r.severity.as_str(),
            r.bucket.as_str(),
            tag,
            r.text.as_str(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err::<EvalError, _>(path))
}

fn display_text(text: &str) -> String {
    let mut shown: String = text.chars().take(DISPLAY_TEXT_CHARS).collect();
    if text.chars().count() > DISPLAY_TEXT_CHARS {
        shown.push('…');
    }
    markdown_cell(&shown)
}

fn markdown_cell(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('|', "\\|")
        .replace(['\n', '\r', '\t'], " ")
}

fn triage_markdown(records: &[&DisagreementRecord], names: &ModelNames) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "Model A: {}; model B: {}; {} record(s).\n\n",
        markdown_cell(&names.a),
        markdown_cell(&names.b),
        records.len()
    ));
    out.push_str("| ID | Review Text | Label | Wrong | Correct | Severity | Pattern tag |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in records {
        let a = format!("{} ({})", markdown_cell(&names.a), r.pred_a.code());
        let b = format!("{} ({})", markdown_cell(&names.b), r.pred_b.code());
        let (wrong, correct) = match r.bucket {
            Bucket::BothRight => ("-".to_owned(), format!("{a}, {b}")),
            Bucket::BothWrong => (format!("{a}, {b}"), "-".to_owned()),
            Bucket::AWrongBRight => (a, b),
            Bucket::ARightBWrong => (b, a),
        };
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            markdown_cell(&r.unique_id),
            display_text(&r.text),
            r.gold.code(),
            wrong,
            correct,
            r.severity,
            r.pattern_tag.map_or("", PatternTag::as_str)
        ));
    }
    out
}

/// Reads a triage TSV, possibly with reviewer-filled tags. Rows whose
/// severity or bucket disagree with their labels are rejected.
pub fn ingest_triage(path: &Path) -> Result<Vec<DisagreementRecord>, EvalError> {
    let format = |row: u64, message: String| EvalError::Format {
        path: path.to_owned(),
        message: format!("row {row}: {message}"),
    };
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_path(path)
        .map_err(|e| format(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| format(1, e.to_string()))?.clone();
    if header.iter().ne(TRIAGE_HEADER) {
        return Err(format(1, format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let n = i as u64 + 2;
        let row = row.map_err(|e| format(n, e.to_string()))?;
        let class = |col: usize| -> Result<SentimentClass, EvalError> {
            let v = row[col].trim();
            v.parse::<i64>()
                .ok()
                .and_then(|c| SentimentClass::from_code(c).ok())
                .ok_or_else(|| format(n, format!("{} {v:?} is not 0, 1 or 2", TRIAGE_HEADER[col])))
        };
        let mut record = DisagreementRecord::new(&row[0], &row[7], class(1)?, class(2)?, class(3)?);
        let severity: Severity = row[4].trim().parse().map_err(|e| format(n, e))?;
        let bucket: Bucket = row[5].trim().parse().map_err(|e| format(n, e))?;
        if severity != record.severity || bucket != record.bucket {
            return Err(format(
                n,
                format!(
                    "severity/bucket {severity}/{bucket} disagree with labels (expected {}/{})",
                    record.severity, record.bucket
                ),
            ));
        }
        let tag = row[6].trim();
        if !tag.is_empty() {
            record.pattern_tag = Some(tag.parse().map_err(|e| format(n, e))?);
        }
        out.push(record);
    }
    Ok(out)
}

/// Count of each tag over tagged records; untagged records are skipped.
pub fn tag_summary(records: &[DisagreementRecord]) -> BTreeMap<PatternTag, usize> {
    let mut counts = BTreeMap::new();
    for tag in records.iter().filter_map(|r| r.pattern_tag) {
        *counts.entry(tag).or_insert(0) += 1;
    }
    counts
}

/// Writes a tag summary as a two-column markdown table.
pub fn write_tag_summary(summary: &BTreeMap<PatternTag, usize>, untagged: usize, path: &Path) -> Result<(), EvalError> {
    let mut out = Vec::new();
    let total: usize = summary.values().sum();
    let write = |out: &mut Vec<u8>| -> std::io::Result<()> {
        writeln!(out, "| Pattern tag | Count |")?;
        writeln!(out, "|---|---|")?;
        for tag in PatternTag::ALL {
            writeln!(out, "| {tag} | {} |", summary.get(&tag).copied().unwrap_or(0))?;
        }
        writeln!(out, "| (tagged total) | {total} |")?;
        writeln!(out, "| (untagged) | {untagged} |")
    };
    write(&mut out).expect("writing to memory");
    std::fs::write(path, out).map_err(io_err::<EvalError, _>(path))
}
