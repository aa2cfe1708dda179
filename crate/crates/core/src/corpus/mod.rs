//! Review corpus ingestion: raw-file parsing, text cleaning, rating binning,
//! class counts and seeded stratified subsampling.

mod text;

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, DataError};

pub use text::{clean_text, decode_entities};

/// Three-way sentiment label. The integer codes are part of the data format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
#[repr(u8)]
pub enum SentimentClass {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl SentimentClass {
    pub const ALL: [SentimentClass; 3] = [Self::Negative, Self::Neutral, Self::Positive];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_code(code: i64) -> Result<Self, DataError> {
        match code {
            0 => Ok(Self::Negative),
            1 => Ok(Self::Neutral),
            2 => Ok(Self::Positive),
            other => Err(DataError::BadClass(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Neutral => "neutral",
            Self::Positive => "positive",
        }
    }
}

impl From<SentimentClass> for u8 {
    fn from(c: SentimentClass) -> u8 {
        c.code()
    }
}

impl TryFrom<u8> for SentimentClass {
    type Error = DataError;

    fn try_from(code: u8) -> Result<Self, DataError> {
        Self::from_code(code as i64)
    }
}

impl fmt::Display for SentimentClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One row of the raw dataset distribution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReview {
    pub unique_id: String,
    pub drug_name: String,
    pub condition: String,
    pub review_text: String,
    pub rating: u8,
    pub date: String,
    pub useful_count: u64,
}

/// A cleaned review with its binned label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub unique_id: String,
    pub text: String,
    pub label: SentimentClass,
    pub original_rating: u8,
}

impl LabeledExample {
    pub fn from_raw(raw: &RawReview) -> Result<Self, DataError> {
        Ok(Self {
            unique_id: raw.unique_id.clone(),
            text: clean_text(&raw.review_text),
            label: bin_rating(raw.rating as i64)?,
            original_rating: raw.rating,
        })
    }
}

/// Per-class example counts for one data segment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub negative: usize,
    pub neutral: usize,
    pub positive: usize,
}

impl ClassCounts {
    pub fn from_labels<I: IntoIterator<Item = SentimentClass>>(labels: I) -> Self {
        let mut counts = Self::default();
        for label in labels {
            *counts.get_mut(label) += 1;
        }
        counts
    }

    pub fn get(&self, class: SentimentClass) -> usize {
        match class {
            SentimentClass::Negative => self.negative,
            SentimentClass::Neutral => self.neutral,
            SentimentClass::Positive => self.positive,
        }
    }

    fn get_mut(&mut self, class: SentimentClass) -> &mut usize {
        match class {
            SentimentClass::Negative => &mut self.negative,
            SentimentClass::Neutral => &mut self.neutral,
            SentimentClass::Positive => &mut self.positive,
        }
    }

    pub fn total(&self) -> usize {
        self.negative + self.neutral + self.positive
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.negative, self.neutral, self.positive)
    }
}

/// Maps a 1–10 star rating onto the three sentiment classes:
/// ≤4 negative, 5–8 neutral, ≥9 positive.
pub fn bin_rating(rating: i64) -> Result<SentimentClass, DataError> {
    match rating {
        1..=4 => Ok(SentimentClass::Negative),
        5..=8 => Ok(SentimentClass::Neutral),
        9..=10 => Ok(SentimentClass::Positive),
        other => Err(DataError::RatingOutOfRange(other)),
    }
}

pub fn class_counts(examples: &[LabeledExample]) -> ClassCounts {
    ClassCounts::from_labels(examples.iter().map(|e| e.label))
}

/// What `load_raw` does with a row it cannot parse.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum RowPolicy {
    #[default]
    Abort,
    /// Drop the row and log a warning.
    Skip,
}

const RAW_COLUMNS: [&str; 7] = [
    "uniqueID",
    "drugName",
    "condition",
    "review",
    "rating",
    "date",
    "usefulCount",
];

/// Reads a raw review file (tab-separated, or comma-separated when the
/// extension is `.csv`) with the seven-column header of the public dataset
/// distribution. The first header cell may be blank, as in the published
/// `.tsv` files.
pub fn load_raw(path: &Path, policy: RowPolicy) -> Result<Vec<RawReview>, DataError> {
    let delimiter = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => b',',
        _ => b'\t',
    };
    let file = File::open(path).map_err(io_err::<DataError, _>(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(file);

    let mut records = reader.byte_records();
    let header = match records.next() {
        None => {
            return Err(DataError::Format {
                path: path.to_owned(),
                message: "file is empty (expected a header row)".into(),
            })
        }
        Some(h) => h.map_err(|e| csv_error(path, 1, e))?,
    };
    check_header(path, &header)?;

    let mut reviews = Vec::new();
    let mut skipped = 0usize;
    for (i, record) in records.enumerate() {
        // Header is row 1; data rows are numbered from 2.
        let row = i as u64 + 2;
        let parsed = record
            .map_err(|e| csv_error(path, row, e))
            .and_then(|r| parse_row(path, row, &r));
        match parsed {
            Ok(review) => reviews.push(review),
            Err(err) if policy == RowPolicy::Skip => {
                log::warn!("skipping row: {err}");
                skipped += 1;
            }
            Err(err) => return Err(err),
        }
    }
    if skipped > 0 {
        log::warn!("{}: skipped {skipped} malformed rows", path.display());
    }
    Ok(reviews)
}

fn csv_error(path: &Path, row: u64, err: csv::Error) -> DataError {
    DataError::MalformedRow {
        path: path.to_owned(),
        row,
        message: err.to_string(),
    }
}

fn check_header(path: &Path, header: &csv::ByteRecord) -> Result<(), DataError> {
    let names: Vec<String> = header
        .iter()
        .map(|f| String::from_utf8_lossy(f).trim().trim_start_matches('\u{FEFF}').to_string())
        .collect();
    let ok = names.len() == RAW_COLUMNS.len()
        && names.iter().zip(RAW_COLUMNS).enumerate().all(|(i, (got, want))| {
            got.eq_ignore_ascii_case(want) || (i == 0 && got.is_empty())
        });
    if ok {
        Ok(())
    } else {
        Err(DataError::Format {
            path: path.to_owned(),
            message: format!("unexpected header {names:?}, expected {RAW_COLUMNS:?}"),
        })
    }
}

fn parse_row(path: &Path, row: u64, record: &csv::ByteRecord) -> Result<RawReview, DataError> {
    let malformed = |message: String| DataError::MalformedRow {
        path: path.to_owned(),
        row,
        message,
    };
    if record.len() != RAW_COLUMNS.len() {
        return Err(malformed(format!(
            "expected {} columns, found {}",
            RAW_COLUMNS.len(),
            record.len()
        )));
    }
    let field = |i: usize| -> Result<String, DataError> {
        std::str::from_utf8(&record[i])
            .map(str::to_owned)
            .map_err(|e| malformed(format!("column {}: {e}", RAW_COLUMNS[i])))
    };
    let review_text = field(3)?;
    if review_text.trim().is_empty() {
        return Err(malformed("empty review text".into()));
    }
    let rating_raw = field(4)?;
    let rating = parse_integral(&rating_raw)
        .filter(|r| (1..=10).contains(r))
        .ok_or_else(|| DataError::BadRating {
            path: path.to_owned(),
            row,
            value: rating_raw.clone(),
        })?;
    let useful_raw = field(6)?;
    let useful_count = parse_integral(&useful_raw)
        .filter(|c| *c >= 0)
        .ok_or_else(|| malformed(format!("usefulCount {useful_raw:?} is not a non-negative integer")))?;
    Ok(RawReview {
        unique_id: field(0)?.trim().to_owned(),
        drug_name: field(1)?,
        condition: field(2)?,
        review_text,
        rating: rating as u8,
        date: field(5)?,
        useful_count: useful_count as u64,
    })
}

/// Parses "9" or "9.0"; rejects non-integral values like "9.5".
fn parse_integral(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    let v: f64 = s.parse().ok()?;
    (v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15).then_some(v as i64)
}

/// Indices (ascending) of a per-class seeded sample without replacement of
/// `floor(fraction * class_count)` items from each class.
pub fn stratified_indices(
    labels: &[SentimentClass],
    fraction: f64,
    seed: u64,
) -> Result<Vec<usize>, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::InvalidFraction(fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::new();
    for class in SentimentClass::ALL {
        let members: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == class)
            .map(|(i, _)| i)
            .collect();
        let take = (fraction * members.len() as f64).floor() as usize;
        if take == members.len() {
            chosen.extend_from_slice(&members);
        } else {
            let picks = rand::seq::index::sample(&mut rng, members.len(), take);
            chosen.extend(picks.into_iter().map(|p| members[p]));
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Seeded stratified subsample; output keeps the input order.
pub fn stratified_subsample(
    examples: &[LabeledExample],
    fraction: f64,
    seed: u64,
) -> Result<Vec<LabeledExample>, DataError> {
    let labels: Vec<_> = examples.iter().map(|e| e.label).collect();
    Ok(stratified_indices(&labels, fraction, seed)?
        .into_iter()
        .map(|i| examples[i].clone())
        .collect())
}

const PREPARED_HEADER: [&str; 4] = ["unique_id", "text", "label", "original_rating"];

/// Writes the prepared (cleaned, binned) corpus as unquoted TSV.
pub fn write_prepared(path: &Path, examples: &[LabeledExample]) -> Result<(), DataError> {
    for (i, ex) in examples.iter().enumerate() {
        if ex.unique_id.contains(['\t', '\n', '\r']) || ex.text.contains(['\t', '\n', '\r']) {
            return Err(DataError::Format {
                path: path.to_owned(),
                message: format!("example {i}: field contains a tab or newline"),
            });
        }
    }
    let file = File::create(path).map_err(io_err::<DataError, _>(path))?;
    let mut w = BufWriter::new(file);
    let write_all = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{}", PREPARED_HEADER.join("\t"))?;
        for ex in examples {
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                ex.unique_id,
                ex.text,
                ex.label.code(),
                ex.original_rating
            )?;
        }
        w.flush()
    };
    write_all(&mut w).map_err(io_err::<DataError, _>(path))
}

/// Reads a file produced by [`write_prepared`], checking the label/rating
/// invariant on every row.
pub fn read_prepared(path: &Path) -> Result<Vec<LabeledExample>, DataError> {
    let content = std::fs::read_to_string(path).map_err(io_err::<DataError, _>(path))?;
    let mut lines = content.lines();
    let header = lines.next().ok_or_else(|| DataError::Format {
        path: path.to_owned(),
        message: "missing header".into(),
    })?;
    if header.split('\t').ne(PREPARED_HEADER) {
        return Err(DataError::Format {
            path: path.to_owned(),
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = i as u64 + 2;
        let malformed = |message: String| DataError::MalformedRow {
            path: path.to_owned(),
            row,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(malformed(format!("expected 4 columns, found {}", fields.len())));
        }
        let label_code: i64 = fields[2]
            .parse()
            .map_err(|_| malformed(format!("bad label {:?}", fields[2])))?;
        let label = SentimentClass::from_code(label_code).map_err(|e| malformed(e.to_string()))?;
        let rating: i64 = fields[3]
            .parse()
            .map_err(|_| malformed(format!("bad rating {:?}", fields[3])))?;
        let binned = bin_rating(rating).map_err(|e| malformed(e.to_string()))?;
        if binned != label {
            return Err(malformed(format!(
                "label {label} does not match rating {rating}"
            )));
        }
        out.push(LabeledExample {
            unique_id: fields[0].to_owned(),
            text: fields[1].to_owned(),
            label,
            original_rating: rating as u8,
        });
    }
    Ok(out)
}
