//! BERT WordPiece tokenization, loaded from a checkpoint's `vocab.txt` and
//! optional `tokenizer_config.json`.
//!
//! Normalization follows the reference BERT pipeline: drop control
//! characters, map whitespace to spaces, pad CJK ideographs with spaces,
//! optionally strip accents and lowercase, split on whitespace and
//! punctuation, then greedy longest-match-first subword lookup with a `##`
//! continuation prefix.

use std::collections::HashMap;
use std::path::Path;

use icu_normalizer::DecomposingNormalizerBorrowed;
use icu_properties::props::{GeneralCategory, GeneralCategoryGroup};
use icu_properties::CodePointMapData;
use serde::{Deserialize, Serialize};

use super::EncodedExample;
use crate::error::EncodeError;

const MAX_INPUT_CHARS_PER_WORD: usize = 100;
const CONTINUATION_PREFIX: &str = "##";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizerConfig {
    pub do_lower_case: bool,
    /// `None` follows `do_lower_case`.
    pub strip_accents: Option<bool>,
    pub tokenize_chinese_chars: bool,
    pub unk_token: String,
    pub cls_token: String,
    pub sep_token: String,
    pub pad_token: String,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self {
            do_lower_case: true,
            strip_accents: None,
            tokenize_chinese_chars: true,
            unk_token: "[UNK]".into(),
            cls_token: "[CLS]".into(),
            sep_token: "[SEP]".into(),
            pad_token: "[PAD]".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    config: TokenizerConfig,
    vocab: Vec<String>,
    index: HashMap<String, u32>,
    unk_id: u32,
    cls_id: u32,
    sep_id: u32,
    pad_id: u32,
}

impl WordPieceTokenizer {
    pub fn new(vocab: Vec<String>, config: TokenizerConfig) -> Result<Self, EncodeError> {
        // Later duplicates win, as in the reference loader.
        let index: HashMap<String, u32> = vocab
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let special = |t: &str| {
            index
                .get(t)
                .copied()
                .ok_or_else(|| EncodeError::Tokenizer(format!("special token {t:?} missing from vocabulary")))
        };
        Ok(Self {
            unk_id: special(&config.unk_token)?,
            cls_id: special(&config.cls_token)?,
            sep_id: special(&config.sep_token)?,
            pad_id: special(&config.pad_token)?,
            config,
            vocab,
            index,
        })
    }

    /// Reads `vocab.txt` and, when present, `tokenizer_config.json`.
    pub fn from_dir(dir: &Path) -> Result<Self, EncodeError> {
        let vocab_path = dir.join("vocab.txt");
        let text = std::fs::read_to_string(&vocab_path).map_err(|source| EncodeError::Io {
            path: vocab_path.clone(),
            source,
        })?;
        let vocab: Vec<String> = text
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_owned())
            .collect();
        // Trailing newline leaves one empty element.
        let vocab = match vocab.split_last() {
            Some((last, rest)) if last.is_empty() => rest.to_vec(),
            _ => vocab,
        };
        let config_path = dir.join("tokenizer_config.json");
        let config = if config_path.exists() {
            let raw = std::fs::read_to_string(&config_path).map_err(|source| EncodeError::Io {
                path: config_path.clone(),
                source,
            })?;
            serde_json::from_str(&raw)
                .map_err(|e| EncodeError::Tokenizer(format!("{}: {e}", config_path.display())))?
        } else {
            TokenizerConfig::default()
        };
        Self::new(vocab, config)
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.config
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn cls_id(&self) -> u32 {
        self.cls_id
    }

    pub fn sep_id(&self) -> u32 {
        self.sep_id
    }

    pub fn pad_id(&self) -> u32 {
        self.pad_id
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn normalize(&self, text: &str) -> String {
        let mut out = String::with_capacity(text.len());
        for c in text.chars() {
            if c == '\0' || c == '\u{FFFD}' || is_control(c) {
                continue;
            }
            if is_whitespace(c) {
                out.push(' ');
            } else if self.config.tokenize_chinese_chars && is_chinese_char(c) {
                out.push(' ');
                out.push(c);
                out.push(' ');
            } else {
                out.push(c);
            }
        }
        if self.config.strip_accents.unwrap_or(self.config.do_lower_case) {
            let decomposed = DecomposingNormalizerBorrowed::new_nfd().normalize(&out).into_owned();
            let gc = CodePointMapData::<GeneralCategory>::new();
            out = decomposed
                .chars()
                .filter(|&c| gc.get(c) != GeneralCategory::NonspacingMark)
                .collect();
        }
        if self.config.do_lower_case {
            out = out.chars().flat_map(char::to_lowercase).collect();
        }
        out
    }

    /// Word-level pieces before subword lookup.
    pub fn pre_tokenize(&self, text: &str) -> Vec<String> {
        let normalized = self.normalize(text);
        let mut words = Vec::new();
        for chunk in normalized.split(char::is_whitespace).filter(|w| !w.is_empty()) {
            let mut current = String::new();
            for c in chunk.chars() {
                if is_bert_punctuation(c) {
                    if !current.is_empty() {
                        words.push(std::mem::take(&mut current));
                    }
                    words.push(c.to_string());
                } else {
                    current.push(c);
                }
            }
            if !current.is_empty() {
                words.push(current);
            }
        }
        words
    }

    fn word_piece(&self, word: &str, out: &mut Vec<u32>) {
        if word.chars().count() > MAX_INPUT_CHARS_PER_WORD {
            out.push(self.unk_id);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < word.len() {
            let mut end = word.len();
            let mut found = None;
            while start < end {
                let piece = &word[start..end];
                let id = if start > 0 {
                    self.index.get(&format!("{CONTINUATION_PREFIX}{piece}"))
                } else {
                    self.index.get(piece)
                };
                if let Some(&id) = id {
                    found = Some(id);
                    break;
                }
                end = word[..end].char_indices().next_back().map_or(0, |(i, _)| i);
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.unk_id);
                    return;
                }
            }
        }
        out.extend(pieces);
    }

    /// Subword ids without the sequence markers.
    pub fn tokenize_ids(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in self.pre_tokenize(text) {
            self.word_piece(&word, &mut ids);
        }
        ids
    }

    pub fn tokens(&self, text: &str) -> Vec<&str> {
        self.tokenize_ids(text)
            .into_iter()
            .map(|i| self.vocab[i as usize].as_str())
            .collect()
    }
}

/// `[CLS] pieces… [SEP]`, head-truncated to `max_len` and right-padded.
pub fn encode_subword(text: &str, tokenizer: &WordPieceTokenizer, max_len: usize) -> EncodedExample {
    assert!(max_len >= 2, "max_len must leave room for the sequence markers");
    let mut pieces = tokenizer.tokenize_ids(text);
    pieces.truncate(max_len - 2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(tokenizer.cls_id);
    ids.extend(pieces);
    ids.push(tokenizer.sep_id);
    EncodedExample::from_ids(ids, max_len, tokenizer.pad_id)
}

fn is_whitespace(c: char) -> bool {
    matches!(c, '\t' | '\n' | '\r') || c.is_whitespace()
}

fn is_control(c: char) -> bool {
    if matches!(c, '\t' | '\n' | '\r') {
        return false;
    }
    GeneralCategoryGroup::Other.contains(CodePointMapData::<GeneralCategory>::new().get(c))
}

pub(crate) fn is_unicode_punctuation(c: char) -> bool {
    GeneralCategoryGroup::Punctuation.contains(CodePointMapData::<GeneralCategory>::new().get(c))
}

fn is_bert_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || is_unicode_punctuation(c)
}

fn is_chinese_char(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF
        | 0x3400..=0x4DBF
        | 0x20000..=0x2A6DF
        | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F
        | 0x2B820..=0x2CEAF
        | 0xF900..=0xFAFF
        | 0x2F800..=0x2FA1F)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(words: &[&str], lower: bool) -> WordPieceTokenizer {
        let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"].iter().map(|s| s.to_string()).collect();
        vocab.extend(words.iter().map(|s| s.to_string()));
        WordPieceTokenizer::new(
            vocab,
            TokenizerConfig {
                do_lower_case: lower,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn greedy_longest_match() {
        let t = tok(&["un", "##aff", "##able", "##a", "runn", "##ing", ","], true);
        assert_eq!(t.tokens("UNaffable running,"), ["un", "##aff", "##able", "runn", "##ing", ","]);
        // unmatched remainder turns the whole word into [UNK]
        assert_eq!(t.tokens("unx"), ["[UNK]"]);
    }

    #[test]
    fn cased_keeps_case_and_accents() {
        let t = tok(&["Café", "café", "cafe"], false);
        assert_eq!(t.tokens("Café"), ["Café"]);
        let t = tok(&["Café", "café", "cafe"], true);
        assert_eq!(t.tokens("Café"), ["cafe"]);
    }

    #[test]
    fn markers_and_padding() {
        let t = tok(&["good"], true);
        let e = encode_subword("good", &t, 6);
        assert_eq!(e.token_ids, vec![2, 4, 3, 0, 0, 0]);
        assert_eq!(e.attention_mask, vec![1, 1, 1, 0, 0, 0]);
        let e = encode_subword("", &t, 4);
        assert_eq!(e.token_ids, vec![2, 3, 0, 0]);
        assert_eq!(e.real_len(), 2);
    }

    #[test]
    fn truncation_ends_with_separator() {
        let t = tok(&["w"], true);
        let text = vec!["w"; 300].join(" ");
        let e = encode_subword(&text, &t, 128);
        assert_eq!(e.token_ids.len(), 128);
        assert_eq!(e.token_ids[0], t.cls_id());
        assert_eq!(e.token_ids[127], t.sep_id());
        assert!(e.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn missing_special_token() {
        let err = WordPieceTokenizer::new(vec!["[PAD]".into()], TokenizerConfig::default()).unwrap_err();
        assert!(err.to_string().contains("[UNK]"));
    }

    #[test]
    fn long_word_is_unknown() {
        let t = tok(&["a", "##a"], true);
        assert_eq!(t.tokens(&"a".repeat(101)), ["[UNK]"]);
        assert_eq!(t.tokens(&"a".repeat(3)), ["a", "##a", "##a"]);
    }
}
