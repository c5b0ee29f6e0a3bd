//! Static word-vector tables in the word2vec text export format.
//!
//! ```text
//! 2 3
//! cat 1 0 0
//! dog 0 1 0
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::annotation::normalize_label;
use crate::error::{read_file, write_file, Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    word_dim: usize,
    words: Vec<String>,
    vectors: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    duplicates: Vec<String>,
}

/// Result of embedding a (possibly multi-word) label.
#[derive(Clone, Debug, PartialEq)]
pub struct PhraseEmbedding {
    pub vector: Vec<f64>,
    /// Set when no token of the phrase was found; `vector` is then all zeros.
    pub oov: bool,
    pub known_tokens: usize,
    pub total_tokens: usize,
}

impl EmbeddingTable {
    pub fn new(word_dim: usize) -> Self {
        EmbeddingTable {
            word_dim,
            ..Default::default()
        }
    }

    /// Inserts or replaces a word. The word is normalized like a label.
    pub fn insert(&mut self, word: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.word_dim {
            return Err(Error::dim(format!("embedding {word:?}"), self.word_dim, vector.len()));
        }
        let word = normalize_label(word);
        match self.index.get(&word) {
            Some(&i) => {
                self.duplicates.push(word);
                self.vectors[i] = vector;
            }
            None => {
                self.index.insert(word.clone(), self.words.len());
                self.words.push(word);
                self.vectors.push(vector);
            }
        }
        Ok(())
    }

    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::Malformed(format!("not UTF-8: {e}")))?;
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

        let (_, header) = lines.next().ok_or_else(|| Error::Malformed("empty embedding table".into()))?;
        let mut head = header.split_whitespace();
        let parse_usize = |tok: Option<&str>, what: &str| -> Result<usize> {
            tok.and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::Malformed(format!("header line must be \"vocab_size dim\" ({what})")))
        };
        let vocab_size = parse_usize(head.next(), "vocab_size")?;
        let word_dim = parse_usize(head.next(), "dim")?;
        if head.next().is_some() {
            return Err(Error::Malformed("header line has extra fields".into()));
        }
        if word_dim == 0 {
            return Err(Error::invalid("header.dim", "must be positive"));
        }

        let mut table = EmbeddingTable::new(word_dim);
        let mut rows = 0usize;
        for (lineno, line) in lines {
            let mut toks = line.split_whitespace();
            let word = toks.next().expect("non-blank line has a token");
            let vector = toks
                .map(|t| {
                    t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                        Error::Malformed(format!("line {}: non-numeric component {t:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if vector.len() != word_dim {
                return Err(Error::dim(format!("line {} ({word:?})", lineno + 1), word_dim, vector.len()));
            }
            table.insert(word, vector)?;
            rows += 1;
        }
        if rows != vocab_size {
            return Err(Error::Malformed(format!(
                "header declares {vocab_size} rows but {rows} were found"
            )));
        }
        for w in &table.duplicates {
            log::warn!("duplicate embedding row for {w:?}; last occurrence wins");
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&read_file(path)?).map_err(|e| e.in_file(path))
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.words.len(), self.word_dim);
        for (w, v) in self.words.iter().zip(&self.vectors) {
            out.push_str(w);
            for x in v {
                write!(out, " {x}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_text().as_bytes())
    }

    pub fn word_dim(&self) -> usize {
        self.word_dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Words that appeared more than once while loading.
    pub fn duplicates(&self) -> &[String] {
        &self.duplicates
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(&normalize_label(word))
            .map(|&i| self.vectors[i].as_slice())
    }

    /// Mean embedding of the phrase's in-vocabulary tokens.
    ///
    /// Tokens are lowercased and split on whitespace and hyphens. Token
    /// vectors are summed in sorted token order so the result does not depend
    /// on word order.
    pub fn embed_phrase(&self, phrase: &str) -> PhraseEmbedding {
        let lowered = phrase.to_lowercase();
        let mut tokens: Vec<&str> = lowered
            .split(|c: char| c.is_whitespace() || c == '-')
            .filter(|t| !t.is_empty())
            .collect();
        tokens.sort_unstable();

        let mut vector = vec![0.0; self.word_dim];
        let mut known = 0usize;
        for t in &tokens {
            if let Some(&i) = self.index.get(*t) {
                for (acc, x) in vector.iter_mut().zip(&self.vectors[i]) {
                    *acc += x;
                }
                known += 1;
            }
        }
        if known > 0 {
            let inv = 1.0 / known as f64;
            vector.iter_mut().for_each(|x| *x *= inv);
        }
        PhraseEmbedding {
            vector,
            oov: known == 0,
            known_tokens: known,
            total_tokens: tokens.len(),
        }
    }
}
