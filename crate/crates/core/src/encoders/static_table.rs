//! Static word embeddings in word2vec text or binary format.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::EncodedExample;
use crate::error::EncodeError;

/// Word → row lookup with the two reserved rows that follow the pretrained
/// vocabulary: padding, then unknown.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaticVocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl StaticVocab {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, EncodeError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(EncodeError::Tokenizer(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Pretrained tokens only, in row order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn pad_index(&self) -> u32 {
        self.tokens.len() as u32
    }

    pub fn unk_index(&self) -> u32 {
        self.tokens.len() as u32 + 1
    }

    /// Rows including pad and unk.
    pub fn rows(&self) -> usize {
        self.tokens.len() + 2
    }

    pub fn lookup(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or_else(|| self.unk_index())
    }
}

#[derive(Debug, Clone)]
pub struct StaticEmbeddingTable {
    pub vocab: StaticVocab,
    /// `rows × dimension`; the pad row is zero, the unk row seeded uniform.
    pub vectors: Array2<f64>,
}

impl StaticEmbeddingTable {
    pub fn dimension(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn pad_index(&self) -> u32 {
        self.vocab.pad_index()
    }

    pub fn unk_index(&self) -> u32 {
        self.vocab.unk_index()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingFormat {
    Text,
    Binary,
}

impl EmbeddingFormat {
    /// `.bin` means binary; anything else is read as text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") => Self::Binary,
            _ => Self::Text,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadEmbeddingOptions<'a> {
    pub format: Option<EmbeddingFormat>,
    /// When set, only these tokens are kept. Large pretrained files hold
    /// millions of rows, most never seen in the corpus.
    pub keep: Option<&'a HashSet<String>>,
}

pub const UNK_INIT_RANGE: f64 = 0.05;

pub fn load_static_embeddings(path: &Path, seed: u64) -> Result<StaticEmbeddingTable, EncodeError> {
    load_static_embeddings_with(path, seed, &LoadEmbeddingOptions::default())
}

pub fn load_static_embeddings_with(
    path: &Path,
    seed: u64,
    options: &LoadEmbeddingOptions<'_>,
) -> Result<StaticEmbeddingTable, EncodeError> {
    let io = |source| EncodeError::Io {
        path: path.to_owned(),
        source,
    };
    let mut reader = BufReader::new(File::open(path).map_err(io)?);
    let err = |line: usize, message: String| EncodeError::Embedding {
        path: path.to_owned(),
        line,
        message,
    };

    let mut header = String::new();
    reader.read_line(&mut header).map_err(io)?;
    let dims: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match dims.as_slice() {
        [n, d] => (
            n.parse::<usize>().map_err(|_| err(1, format!("bad vocabulary size {n:?}")))?,
            d.parse::<usize>().map_err(|_| err(1, format!("bad dimension {d:?}")))?,
        ),
        _ => return Err(err(1, format!("expected \"<count> <dimension>\", got {:?}", header.trim_end()))),
    };
    if dim == 0 {
        return Err(err(1, "dimension must be positive".into()));
    }

    let mut tokens = Vec::new();
    let mut seen = HashSet::new();
    let mut data: Vec<f64> = Vec::new();
    let mut keep_row = |token: String, values: &mut dyn Iterator<Item = f64>, line: usize| {
        if options.keep.is_some_and(|k| !k.contains(&token)) {
            return;
        }
        if !seen.insert(token.clone()) {
            log::warn!("{}: line {line}: duplicate token {token:?}, keeping the first", path.display());
            return;
        }
        tokens.push(token);
        data.extend(values);
    };

    match options.format.unwrap_or_else(|| EmbeddingFormat::from_path(path)) {
        EmbeddingFormat::Text => {
            let mut lines = 0usize;
            for (i, line) in reader.lines().enumerate() {
                let line_no = i + 2;
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                lines += 1;
                let mut parts = line.split_whitespace();
                let token = parts.next().unwrap().to_owned();
                let values: Vec<f64> = parts
                    .map(|p| p.parse::<f64>().map_err(|_| err(line_no, format!("bad value {p:?}"))))
                    .collect::<Result<_, _>>()?;
                if values.len() != dim {
                    return Err(err(line_no, format!("expected {dim} values, found {}", values.len())));
                }
                if lines > count {
                    return Err(err(line_no, format!("more rows than the declared {count}")));
                }
                keep_row(token, &mut values.into_iter(), line_no);
            }
            if lines != count {
                return Err(err(lines + 1, format!("declared {count} rows, found {lines}")));
            }
        }
        EmbeddingFormat::Binary => {
            let mut buf = vec![0u8; dim * 4];
            for row in 0..count {
                let line_no = row + 2;
                let mut word = Vec::new();
                reader.read_until(b' ', &mut word).map_err(io)?;
                if word.last() != Some(&b' ') {
                    return Err(err(line_no, format!("declared {count} rows, found {row}")));
                }
                word.pop();
                let start = word.iter().position(|b| !b.is_ascii_whitespace()).unwrap_or(word.len());
                let token = String::from_utf8_lossy(&word[start..]).into_owned();
                reader
                    .read_exact(&mut buf)
                    .map_err(|_| err(line_no, "truncated vector".into()))?;
                let mut values = buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
                keep_row(token, &mut values, line_no);
            }
        }
    }

    let n = tokens.len();
    let mut vectors = Array2::zeros((n + 2, dim));
    vectors
        .slice_mut(ndarray::s![..n, ..])
        .assign(&Array2::from_shape_vec((n, dim), data).expect("row-major data"));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in vectors.row_mut(n + 1).iter_mut() {
        *v = rng.random_range(-UNK_INIT_RANGE..=UNK_INIT_RANGE);
    }
    Ok(StaticEmbeddingTable {
        vocab: StaticVocab::from_tokens(tokens)?,
        vectors,
    })
}

fn is_separator(c: char) -> bool {
    c.is_whitespace() || c.is_ascii_punctuation() || super::wordpiece::is_unicode_punctuation(c)
}

/// Lowercased word tokens: maximal runs of characters that are neither
/// whitespace nor punctuation.
pub fn static_tokens(text: &str) -> Vec<String> {
    text.split(is_separator)
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Head-truncated, right-padded encoding over a static vocabulary.
pub fn encode_static(text: &str, vocab: &StaticVocab, max_len: usize) -> EncodedExample {
    let ids = static_tokens(text)
        .iter()
        .take(max_len)
        .map(|t| vocab.lookup(t))
        .collect();
    EncodedExample::from_ids(ids, max_len, vocab.pad_index())
}
