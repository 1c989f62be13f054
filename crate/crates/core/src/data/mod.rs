//! Treebank IO, vocabularies and input embeddings.

mod conll;
mod embed;
mod vocab;

use std::path::Path;

pub use conll::{read_conll, read_conll_from, write_conll, write_conll_to, write_gold_to, Prediction};
pub use embed::{
    resolve, sample_input_drops, DropDecision, EmbeddingTables, InputDropout, Pretrained, TokenIds,
};
pub use vocab::Vocab;

/// One dependency-annotated sentence. Tokens are 1-indexed in `heads`;
/// 0 denotes the root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub words: Vec<String>,
    pub tags: Vec<String>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl Sentence {
    pub fn new(
        words: Vec<String>,
        tags: Vec<String>,
        heads: Vec<usize>,
        labels: Vec<String>,
    ) -> Result<Self, DataError> {
        let n = words.len();
        if n == 0 || tags.len() != n || heads.len() != n || labels.len() != n {
            return Err(DataError::Contract(format!(
                "sentence columns disagree: {} words, {} tags, {} heads, {} labels",
                n,
                tags.len(),
                heads.len(),
                labels.len()
            )));
        }
        if let Some((i, &h)) = heads.iter().enumerate().find(|&(i, &h)| h > n || h == i + 1) {
            return Err(DataError::Contract(format!("token {} has invalid head {h}", i + 1)));
        }
        Ok(Sentence { words, tags, heads, labels })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },
    #[error("embedding file line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Contract(String),
}

impl DataError {
    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        DataError::Io { path: path.as_ref().display().to_string(), source }
    }
}
