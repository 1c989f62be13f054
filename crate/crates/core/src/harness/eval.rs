use std::path::Path;

use serde::Serialize;

use crate::data::{read_conll, Sentence};

use super::HarnessError;

/// Gold POS tags excluded from scoring under the default policy.
pub const PUNCT_TAGS: [&str; 5] = ["``", "''", ":", ",", "."];

pub fn is_punct(tag: &str) -> bool {
    PUNCT_TAGS.contains(&tag)
}

/// Attachment scores in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub uas: f64,
    pub las: f64,
    pub tokens_scored: usize,
    pub tokens_excluded: usize,
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "UAS {:.2}  LAS {:.2}  ({} tokens scored, {} excluded)",
            self.uas, self.las, self.tokens_scored, self.tokens_excluded
        )
    }
}

/// Scores `pred` against `gold`. With `exclude_punct`, tokens whose gold
/// tag is punctuation are skipped. An empty denominator scores 100.
pub fn evaluate_sentences(
    gold: &[Sentence],
    pred: &[Sentence],
    exclude_punct: bool,
) -> Result<EvalReport, HarnessError> {
    if gold.len() != pred.len() {
        return Err(HarnessError::Alignment {
            sentence: gold.len().min(pred.len()),
            message: format!("gold has {} sentences, prediction has {}", gold.len(), pred.len()),
        });
    }
    let (mut scored, mut excluded, mut heads_ok, mut both_ok) = (0usize, 0usize, 0usize, 0usize);
    for (k, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(HarnessError::Alignment {
                sentence: k,
                message: format!("gold has {} tokens, prediction has {}", g.len(), p.len()),
            });
        }
        for i in 0..g.len() {
            if exclude_punct && is_punct(&g.tags[i]) {
                excluded += 1;
                continue;
            }
            scored += 1;
            if g.heads[i] == p.heads[i] {
                heads_ok += 1;
                if g.labels[i] == p.labels[i] {
                    both_ok += 1;
                }
            }
        }
    }
    let pct = |x: usize| if scored == 0 { 100.0 } else { 100.0 * x as f64 / scored as f64 };
    Ok(EvalReport { uas: pct(heads_ok), las: pct(both_ok), tokens_scored: scored, tokens_excluded: excluded })
}

pub fn evaluate(
    gold: impl AsRef<Path>,
    pred: impl AsRef<Path>,
    exclude_punct: bool,
) -> Result<EvalReport, HarnessError> {
    let gold = read_conll(gold)?;
    let pred = read_conll(pred)?;
    evaluate_sentences(&gold, &pred, exclude_punct)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(tags: &[&str], heads: &[usize], labels: &[&str]) -> Sentence {
        Sentence::new(
            (0..tags.len()).map(|i| format!("w{i}")).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
            heads.to_vec(),
            labels.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn three_of_four_heads_two_labels() {
        let gold = sent(&["DT", "NN", "VB", "NN"], &[2, 3, 0, 3], &["det", "nsubj", "root", "dobj"]);
        let pred = sent(&["DT", "NN", "VB", "NN"], &[2, 3, 0, 2], &["det", "dobj", "root", "dobj"]);
        let r = evaluate_sentences(&[gold], &[pred], true).unwrap();
        assert_eq!((r.uas, r.las, r.tokens_scored), (75.0, 50.0, 4));
    }

    #[test]
    fn punctuation_changes_denominator() {
        let tags = ["NN", "VB", "NN", ",", "."];
        let gold = sent(&tags, &[2, 0, 2, 2, 2], &["a", "root", "b", "p", "p"]);
        let pred = sent(&tags, &[2, 0, 2, 2, 1], &["a", "root", "b", "p", "p"]);
        let r = evaluate_sentences(&[gold.clone()], &[pred.clone()], true).unwrap();
        assert_eq!((r.tokens_scored, r.tokens_excluded, r.uas), (3, 2, 100.0));
        let r = evaluate_sentences(&[gold], &[pred], false).unwrap();
        assert_eq!((r.tokens_scored, r.uas), (5, 80.0));
    }

    #[test]
    fn misalignment_names_sentence() {
        let a = sent(&["NN"], &[0], &["root"]);
        let b = sent(&["NN", "NN"], &[0, 1], &["root", "x"]);
        match evaluate_sentences(&[a.clone(), a.clone()], &[a.clone(), b], true) {
            Err(HarnessError::Alignment { sentence: 1, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            evaluate_sentences(&[a.clone()], &[], true),
            Err(HarnessError::Alignment { sentence: 0, .. })
        ));
    }
}
