use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Sentence;

pub const OOV_WORD: &str = "<oov>";
pub const ROOT_WORD: &str = "<root>";
pub const UNK_TAG: &str = "<unk-tag>";
pub const ROOT_TAG: &str = "<ROOT>";

/// Word, tag and label inventories.
///
/// Word ids 0 and 1 are the OOV and root entries, tag ids 0 and 1 the
/// unknown-tag and root entries. Remaining ids are assigned by descending
/// training frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabLists", into = "VocabLists")]
pub struct Vocab {
    words: Vec<String>,
    word_counts: Vec<usize>,
    tags: Vec<String>,
    labels: Vec<String>,
    word_index: HashMap<String, usize>,
    tag_index: HashMap<String, usize>,
    label_index: HashMap<String, usize>,
}

#[derive(Clone, Serialize, Deserialize)]
struct VocabLists {
    words: Vec<String>,
    word_counts: Vec<usize>,
    tags: Vec<String>,
    labels: Vec<String>,
}

impl From<VocabLists> for Vocab {
    fn from(l: VocabLists) -> Self {
        Vocab::from_lists(l.words, l.word_counts, l.tags, l.labels)
    }
}

impl From<Vocab> for VocabLists {
    fn from(v: Vocab) -> Self {
        VocabLists { words: v.words, word_counts: v.word_counts, tags: v.tags, labels: v.labels }
    }
}

fn index(items: &[String]) -> HashMap<String, usize> {
    items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
}

fn by_frequency(counts: HashMap<String, usize>) -> Vec<(String, usize)> {
    let mut items: Vec<_> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items
}

impl Vocab {
    pub const OOV: usize = 0;
    pub const ROOT: usize = 1;
    pub const UNK_TAG: usize = 0;
    pub const ROOT_TAG: usize = 1;

    pub fn build(train: &[Sentence], min_count: usize) -> Vocab {
        let mut word_counts = HashMap::new();
        let mut tag_counts = HashMap::new();
        let mut label_counts = HashMap::new();
        for s in train {
            for w in &s.words {
                *word_counts.entry(w.to_lowercase()).or_insert(0) += 1;
            }
            for t in &s.tags {
                *tag_counts.entry(t.clone()).or_insert(0) += 1;
            }
            for l in &s.labels {
                *label_counts.entry(l.clone()).or_insert(0) += 1;
            }
        }
        let mut words = vec![OOV_WORD.to_string(), ROOT_WORD.to_string()];
        let mut counts = vec![0, 0];
        for (w, c) in by_frequency(word_counts) {
            if c >= min_count {
                words.push(w);
                counts.push(c);
            }
        }
        let mut tags = vec![UNK_TAG.to_string(), ROOT_TAG.to_string()];
        tags.extend(by_frequency(tag_counts).into_iter().map(|(t, _)| t));
        let labels = by_frequency(label_counts).into_iter().map(|(l, _)| l).collect();
        Vocab::from_lists(words, counts, tags, labels)
    }

    fn from_lists(
        words: Vec<String>,
        word_counts: Vec<usize>,
        tags: Vec<String>,
        labels: Vec<String>,
    ) -> Vocab {
        Vocab {
            word_index: index(&words),
            tag_index: index(&tags),
            label_index: index(&labels),
            words,
            word_counts,
            tags,
            labels,
        }
    }

    /// Trained word id of a surface form, if it has one.
    pub fn word_id(&self, form: &str) -> Option<usize> {
        self.word_index.get(&form.to_lowercase()).copied()
    }

    /// Tag id; unseen tags map to [`Vocab::UNK_TAG`].
    pub fn tag_id(&self, tag: &str) -> usize {
        self.tag_index.get(tag).copied().unwrap_or(Self::UNK_TAG)
    }

    pub fn label_id(&self, label: &str) -> Option<usize> {
        self.label_index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn word(&self, id: usize) -> &str {
        &self.words[id]
    }

    pub fn word_count(&self, id: usize) -> usize {
        self.word_counts[id]
    }

    pub fn num_words(&self) -> usize {
        self.words.len()
    }

    pub fn num_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn num_labels(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}
