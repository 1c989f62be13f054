use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;

use super::{DataError, Sentence, Vocab};
use crate::tensor::{Graph, ParamId, Scalar, Tensor, TensorError, Var};

/// Frozen pretrained word vectors indexed by lowercased token.
#[derive(Clone, Debug, PartialEq)]
pub struct Pretrained<T> {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    table: Option<Tensor<T>>,
    dim: usize,
}

impl<T: Scalar> Pretrained<T> {
    pub fn empty(dim: usize) -> Self {
        Pretrained { tokens: Vec::new(), index: HashMap::new(), table: None, dim }
    }

    pub fn from_parts(tokens: Vec<String>, table: Tensor<T>) -> Result<Self, DataError> {
        if table.rows() != tokens.len() {
            return Err(DataError::Contract(format!(
                "{} pretrained tokens for {} rows",
                tokens.len(),
                table.rows()
            )));
        }
        let dim = table.cols();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Pretrained { tokens, index, table: Some(table), dim })
    }

    /// Parses a text file with one token followed by `dim` reals per line.
    pub fn load(path: impl AsRef<Path>, dim: usize) -> Result<Self, DataError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| DataError::io(path, e))?;
        Self::read(BufReader::new(file), dim)
    }

    pub fn read(reader: impl BufRead, dim: usize) -> Result<Self, DataError> {
        let mut tokens = Vec::new();
        let mut index = HashMap::new();
        let mut values = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| DataError::Io { path: "<embeddings>".into(), source: e })?;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else { continue };
            let row: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DataError::Format { line: line_no, message: e.to_string() })?;
            if row.len() != dim {
                return Err(DataError::Format {
                    line: line_no,
                    message: format!("expected {dim} values, found {}", row.len()),
                });
            }
            let token = token.to_lowercase();
            if index.contains_key(&token) {
                continue;
            }
            index.insert(token.clone(), tokens.len());
            tokens.push(token);
            values.extend(row.into_iter().map(T::of));
        }
        let table = if tokens.is_empty() {
            None
        } else {
            Some(Tensor::new(vec![tokens.len(), dim], values).expect("rows checked"))
        };
        Ok(Pretrained { tokens, index, table, dim })
    }

    pub fn row_of(&self, form: &str) -> Option<usize> {
        self.index.get(&form.to_lowercase()).copied()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.table.as_ref().expect("non-empty table").row(i)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn table(&self) -> Option<&Tensor<T>> {
        self.table.as_ref()
    }
}

/// Table lookups for one token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenIds {
    /// Row of the trained word table; `None` when only a pretrained row exists.
    pub word: Option<usize>,
    pub pretrained: Option<usize>,
    pub tag: usize,
}

/// Resolves a sentence to table rows, with the root token at position 0.
pub fn resolve<T: Scalar>(s: &Sentence, vocab: &Vocab, pretrained: &Pretrained<T>) -> Vec<TokenIds> {
    let mut ids = Vec::with_capacity(s.len() + 1);
    ids.push(TokenIds { word: Some(Vocab::ROOT), pretrained: None, tag: Vocab::ROOT_TAG });
    for (w, t) in s.words.iter().zip(&s.tags) {
        let trained = vocab.word_id(w);
        let pre = pretrained.row_of(w);
        let word = match (trained, pre) {
            (None, None) => Some(Vocab::OOV),
            (trained, _) => trained,
        };
        ids.push(TokenIds { word, pretrained: pre, tag: vocab.tag_id(t) });
    }
    ids
}

/// Which input streams feed the encoder and how often they are dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputDropout {
    pub word_rate: f64,
    pub tag_rate: f64,
    pub use_tags: bool,
}

impl Default for InputDropout {
    fn default() -> Self {
        InputDropout { word_rate: 0.33, tag_rate: 0.33, use_tags: true }
    }
}

/// Per-token outcome of input dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct DropDecision {
    pub word: bool,
    pub tag: bool,
}

impl DropDecision {
    /// Scale factors applied to (word part, tag part).
    pub fn scales(self, use_tags: bool) -> (f64, f64) {
        if !use_tags {
            return (if self.word { 0.0 } else { 1.0 }, 0.0);
        }
        match (self.word, self.tag) {
            (false, false) => (1.0, 1.0),
            (true, false) => (0.0, 2.0),
            (false, true) => (2.0, 0.0),
            (true, true) => (0.0, 0.0),
        }
    }
}

/// Samples word and tag drops independently for every real token; the
/// root at position 0 is never dropped.
pub fn sample_input_drops(len_with_root: usize, spec: &InputDropout, rng: &mut impl Rng) -> Vec<DropDecision> {
    let mut out = vec![DropDecision::default(); len_with_root];
    for d in out.iter_mut().skip(1) {
        d.word = rng.gen::<f64>() < spec.word_rate;
        d.tag = spec.use_tags && rng.gen::<f64>() < spec.tag_rate;
    }
    out
}

/// Trained word and tag tables (learned) plus the frozen pretrained table.
#[derive(Clone, Debug)]
pub struct EmbeddingTables<T> {
    pub words: ParamId,
    pub tags: ParamId,
    pub pretrained: Pretrained<T>,
    pub dim: usize,
    pub use_tags: bool,
}

impl<T: Scalar> EmbeddingTables<T> {
    /// Width of each embedded token.
    pub fn output_dim(&self) -> usize {
        if self.use_tags {
            2 * self.dim
        } else {
            self.dim
        }
    }

    /// Embeds `ids` as an `(n+1) × output_dim` matrix. `drops` is `None`
    /// at inference, which leaves every token unscaled.
    pub fn embed(
        &self,
        g: &mut Graph<'_, T>,
        ids: &[TokenIds],
        drops: Option<&[DropDecision]>,
    ) -> Result<Var, TensorError> {
        let table = g.param(self.words);
        let word_rows: Vec<Option<usize>> = ids.iter().map(|t| t.word).collect();
        let mut words = g.gather_rows(table, &word_rows)?;
        if !self.pretrained.is_empty() && ids.iter().any(|t| t.pretrained.is_some()) {
            let mut pre = Tensor::zeros(&[ids.len(), self.dim]);
            for (i, t) in ids.iter().enumerate() {
                if let Some(r) = t.pretrained {
                    pre.data_mut()[i * self.dim..(i + 1) * self.dim].copy_from_slice(self.pretrained.row(r));
                }
            }
            let pre = g.constant(pre)?;
            words = g.add(words, pre)?;
        }
        let tags = if self.use_tags {
            let table = g.param(self.tags);
            let rows: Vec<Option<usize>> = ids.iter().map(|t| Some(t.tag)).collect();
            Some(g.gather_rows(table, &rows)?)
        } else {
            None
        };
        if let Some(drops) = drops {
            let (ws, ts): (Vec<f64>, Vec<f64>) = drops.iter().map(|d| d.scales(self.use_tags)).unzip();
            words = self.scale_rows(g, words, &ws)?;
            if let Some(t) = tags {
                let scaled = self.scale_rows(g, t, &ts)?;
                return g.concat_cols(&[words, scaled]);
            }
        }
        match tags {
            Some(t) => g.concat_cols(&[words, t]),
            None => Ok(words),
        }
    }

    fn scale_rows(&self, g: &mut Graph<'_, T>, x: Var, scales: &[f64]) -> Result<Var, TensorError> {
        let mut m = Tensor::zeros(&[scales.len(), self.dim]);
        for (i, &s) in scales.iter().enumerate() {
            m.data_mut()[i * self.dim..(i + 1) * self.dim].fill(T::of(s));
        }
        let m = g.constant(m)?;
        g.mul(x, m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn line(token: &str, n: usize) -> String {
        let vals: Vec<String> = (0..n).map(|i| format!("{}", i as f64 * 0.01)).collect();
        format!("{token} {}\n", vals.join(" "))
    }

    #[test]
    fn pretrained_rows_and_dimension_check() {
        let text = line("Cat", 100) + &line("dog", 100);
        let p = Pretrained::<f32>::read(text.as_bytes(), 100).unwrap();
        assert_eq!(p.row_of("cat"), Some(0));
        assert_eq!(p.row_of("CAT"), Some(0));
        assert!((p.row(0)[3] - 0.03).abs() < 1e-7);
        let bad = line("ok", 100) + &line("short", 99);
        match Pretrained::<f32>::read(bad.as_bytes(), 100) {
            Err(DataError::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn fixture() -> (ParamStore<f64>, EmbeddingTables<f64>, Vec<TokenIds>) {
        let mut store = ParamStore::new();
        let words = store.add(
            "w",
            Tensor::from_rows(&[&[0.5, 0.5], &[1.0, 2.0], &[3.0, 4.0]]).unwrap(),
        );
        let tags = store.add("t", Tensor::from_rows(&[&[0., 0.], &[5.0, 6.0], &[7.0, 8.0]]).unwrap());
        let pretrained =
            Pretrained::from_parts(vec!["zebra".into()], Tensor::from_rows(&[&[10.0, 20.0]]).unwrap())
                .unwrap();
        let tables = EmbeddingTables { words, tags, pretrained, dim: 2, use_tags: true };
        let ids = vec![
            TokenIds { word: Some(1), pretrained: None, tag: 1 },
            TokenIds { word: Some(2), pretrained: None, tag: 2 },
            TokenIds { word: None, pretrained: Some(0), tag: 2 },
        ];
        (store, tables, ids)
    }

    #[test]
    fn inference_concatenates_word_and_tag() {
        let (store, tables, ids) = fixture();
        let mut g = Graph::new(&store);
        let x = tables.embed(&mut g, &ids, None).unwrap();
        let x = g.value(x);
        assert_eq!(x.shape(), &[3, 4]);
        assert_eq!(x.row(1), &[3.0, 4.0, 7.0, 8.0]);
        // pretrained-only token: zero trained row + pretrained row
        assert_eq!(x.row(2), &[10.0, 20.0, 7.0, 8.0]);
    }

    #[test]
    fn forced_drops_follow_the_three_cases() {
        let (store, tables, ids) = fixture();
        let drops = [
            DropDecision::default(),
            DropDecision { word: true, tag: false },
            DropDecision { word: true, tag: true },
        ];
        let mut g = Graph::new(&store);
        let x = tables.embed(&mut g, &ids, Some(&drops)).unwrap();
        let x = g.value(x);
        assert_eq!(x.row(0), &[1.0, 2.0, 5.0, 6.0]);
        assert_eq!(x.row(1), &[0.0, 0.0, 14.0, 16.0]);
        assert_eq!(x.row(2), &[0.0; 4]);
        let drops = [DropDecision::default(), DropDecision { word: false, tag: true }, DropDecision::default()];
        let mut g = Graph::new(&store);
        let x = tables.embed(&mut g, &ids, Some(&drops)).unwrap();
        assert_eq!(g.value(x).row(1), &[6.0, 8.0, 0.0, 0.0]);
    }

    #[test]
    fn resolution_uses_either_table() {
        let train = vec![Sentence {
            words: vec!["the".into(), "The".into(), "kim".into()],
            tags: vec!["DT".into(), "DT".into(), "NNP".into()],
            heads: vec![3, 3, 0],
            labels: vec!["det".into(), "det".into(), "root".into()],
        }];
        let vocab = Vocab::build(&train, 2);
        let pre = Pretrained::<f32>::read(line("cat", 3).as_bytes(), 3).unwrap();
        let s = Sentence {
            words: vec!["THE".into(), "kim".into(), "cat".into()],
            tags: vec!["DT".into(), "NNP".into(), "NEW".into()],
            heads: vec![2, 0, 2],
            labels: vec!["a".into(), "b".into(), "c".into()],
        };
        let ids = resolve(&s, &vocab, &pre);
        assert_eq!(ids[0].word, Some(Vocab::ROOT));
        assert_eq!(ids[1].word, vocab.word_id("the"));
        // seen once, no pretrained row
        assert_eq!(ids[2].word, Some(Vocab::OOV));
        assert_eq!(ids[3], TokenIds { word: None, pretrained: Some(0), tag: Vocab::UNK_TAG });
    }

    #[test]
    fn drop_sampling_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = InputDropout::default();
        let drops = sample_input_drops(100_001, &spec, &mut rng);
        assert_eq!(drops[0], DropDecision::default());
        let words = drops.iter().filter(|d| d.word).count() as f64 / 100_000.0;
        let both = drops.iter().filter(|d| d.word && d.tag).count() as f64 / 100_000.0;
        assert!((words - 0.33).abs() < 0.01);
        assert!((both - 0.33 * 0.33).abs() < 0.01);
    }
}
