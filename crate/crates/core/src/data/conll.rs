use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{DataError, Sentence};

// 0-based column positions.
const FORM: usize = 1;
const CPOS: usize = 3;
const POS: usize = 4;
const HEAD: usize = 6;
const DEPREL: usize = 7;

pub fn read_conll(path: impl AsRef<Path>) -> Result<Vec<Sentence>, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    read_conll_from(BufReader::new(file))
}

/// Reads tab-separated CoNLL-X / CoNLL-U style blocks. Comment lines and
/// rows with non-integer ids (multiword tokens, empty nodes) are skipped.
pub fn read_conll_from(reader: impl BufRead) -> Result<Vec<Sentence>, DataError> {
    let mut sentences = Vec::new();
    let mut block = Block::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| DataError::Io { path: "<input>".into(), source: e })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            if let Some(s) = block.finish()? {
                sentences.push(s);
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() <= DEPREL {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("expected at least {} columns, found {}", DEPREL + 1, fields.len()),
            });
        }
        let Ok(id) = fields[0].parse::<usize>() else {
            continue;
        };
        if id != block.words.len() + 1 {
            return Err(DataError::Parse {
                line: line_no,
                message: format!("token id {id} out of sequence"),
            });
        }
        let head = fields[HEAD].parse::<usize>().map_err(|_| DataError::Parse {
            line: line_no,
            message: format!("HEAD `{}` is not an integer", fields[HEAD]),
        })?;
        let tag = if fields[POS] == "_" { fields[CPOS] } else { fields[POS] };
        if block.words.is_empty() {
            block.first_line = line_no;
        }
        block.words.push(fields[FORM].to_string());
        block.tags.push(tag.to_string());
        block.heads.push((head, line_no));
        block.labels.push(fields[DEPREL].to_string());
    }
    if let Some(s) = block.finish()? {
        sentences.push(s);
    }
    Ok(sentences)
}

#[derive(Default)]
struct Block {
    first_line: usize,
    words: Vec<String>,
    tags: Vec<String>,
    heads: Vec<(usize, usize)>,
    labels: Vec<String>,
}

impl Block {
    fn finish(&mut self) -> Result<Option<Sentence>, DataError> {
        if self.words.is_empty() {
            return Ok(None);
        }
        let n = self.words.len();
        for (i, &(head, line)) in self.heads.iter().enumerate() {
            if head > n || head == i + 1 {
                return Err(DataError::Validation {
                    line,
                    message: format!("HEAD {head} invalid for token {} of {n}", i + 1),
                });
            }
        }
        let block = std::mem::take(self);
        Ok(Some(Sentence {
            words: block.words,
            tags: block.tags,
            heads: block.heads.into_iter().map(|(h, _)| h).collect(),
            labels: block.labels,
        }))
    }
}

/// Predicted analysis of one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

/// Writes sentences with the given predicted heads and labels.
pub fn write_conll(
    path: impl AsRef<Path>,
    sentences: &[Sentence],
    predictions: &[Prediction],
) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_conll_to(&mut w, sentences, predictions)?;
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn write_conll_to(
    w: &mut impl Write,
    sentences: &[Sentence],
    predictions: &[Prediction],
) -> Result<(), DataError> {
    if sentences.len() != predictions.len() {
        return Err(DataError::Contract(format!(
            "{} sentences but {} predictions",
            sentences.len(),
            predictions.len()
        )));
    }
    for (idx, (s, p)) in sentences.iter().zip(predictions).enumerate() {
        if p.heads.len() != s.len() || p.labels.len() != s.len() {
            return Err(DataError::Contract(format!(
                "sentence {idx}: prediction covers {} heads / {} labels for {} tokens",
                p.heads.len(),
                p.labels.len(),
                s.len()
            )));
        }
        write_block(w, s, &p.heads, &p.labels).map_err(|e| DataError::io("<output>", e))?;
    }
    Ok(())
}

/// Writes sentences with their own (gold) annotation.
pub fn write_gold_to(w: &mut impl Write, sentences: &[Sentence]) -> Result<(), DataError> {
    for s in sentences {
        write_block(w, s, &s.heads, &s.labels).map_err(|e| DataError::io("<output>", e))?;
    }
    Ok(())
}

fn write_block(
    w: &mut impl Write,
    s: &Sentence,
    heads: &[usize],
    labels: &[String],
) -> std::io::Result<()> {
    for i in 0..s.len() {
        writeln!(
            w,
            "{}\t{}\t_\t{}\t{}\t_\t{}\t{}\t_\t_",
            i + 1,
            s.words[i],
            s.tags[i],
            s.tags[i],
            heads[i],
            labels[i]
        )?;
    }
    writeln!(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Vec<Sentence>, DataError> {
        read_conll_from(text.as_bytes())
    }

    #[test]
    fn reads_two_token_block() {
        let text = "1\tCasey\t_\tNNP\tNNP\t_\t2\tnsubj\t_\t_\n2\thugged\t_\tVBD\tVBD\t_\t0\troot\t_\t_\n";
        let s = parse(text).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].heads, vec![2, 0]);
        assert_eq!(s[0].tags, vec!["NNP", "VBD"]);
        assert_eq!(s[0].labels, vec!["nsubj", "root"]);
    }

    #[test]
    fn empty_input_has_no_sentences() {
        assert!(parse("").unwrap().is_empty());
        assert!(parse("\n\n# just a comment\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_head_names_line() {
        let text = "# c\n1\ta\t_\tX\tX\t_\t0\troot\t_\t_\n\n1\tb\t_\tX\tX\t_\tx\troot\t_\t_\n";
        match parse(text) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn out_of_range_and_self_heads_are_rejected() {
        let text = "1\ta\t_\tX\tX\t_\t3\tdep\t_\t_\n2\tb\t_\tX\tX\t_\t0\troot\t_\t_\n";
        assert!(matches!(parse(text), Err(DataError::Validation { line: 1, .. })));
        let text = "1\ta\t_\tX\tX\t_\t1\tdep\t_\t_\n";
        assert!(matches!(parse(text), Err(DataError::Validation { .. })));
    }

    #[test]
    fn skips_comments_and_multiword_rows() {
        let text = "# sent_id = 1\n1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_\n1\tdo\t_\tVB\t_\t_\t0\troot\t_\t_\n\
                    2\tn't\t_\tRB\t_\t_\t1\tneg\t_\t_\n2.1\tx\t_\t_\t_\t_\t_\t_\t_\t_\n";
        let s = parse(text).unwrap();
        assert_eq!(s[0].words, vec!["do", "n't"]);
        // POS falls back to column 4 when column 5 is empty
        assert_eq!(s[0].tags, vec!["VB", "RB"]);
    }

    #[test]
    fn single_token_roundtrip_and_colon_labels() {
        let s = vec![Sentence {
            words: vec!["Hi".into()],
            tags: vec!["UH".into()],
            heads: vec![0],
            labels: vec!["root".into()],
        }];
        let preds = vec![Prediction { heads: vec![0], labels: vec!["acl:relcl".into()] }];
        let mut out = Vec::new();
        write_conll_to(&mut out, &s, &preds).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().filter(|l| !l.is_empty()).count(), 1);
        let back = parse(&text).unwrap();
        assert_eq!(back[0].heads, vec![0]);
        assert_eq!(back[0].labels, vec!["acl:relcl"]);
    }

    #[test]
    fn missing_prediction_is_a_contract_error() {
        let s = vec![Sentence {
            words: vec!["a".into(), "b".into()],
            tags: vec!["X".into(), "X".into()],
            heads: vec![2, 0],
            labels: vec!["dep".into(), "root".into()],
        }];
        let preds = vec![Prediction { heads: vec![0], labels: vec!["root".into()] }];
        assert!(matches!(
            write_conll_to(&mut Vec::new(), &s, &preds),
            Err(DataError::Contract(_))
        ));
    }
}
