//! The full parser: embeddings, recurrent encoder and scorer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{resolve, sample_input_drops, EmbeddingTables, Pretrained, Sentence, Vocab};
use crate::decode::{assign_labels, greedy_heads, mst_decode, DecodeError, ParseTree};
use crate::harness::{Config, ConfigError};
use crate::init;
use crate::recurrent::{sample_variational_masks, RecurrentStack};
use crate::scorer::{masked_arc_matrix, parser_loss_sum, Prepared, ScoreSet, ScorerDropout, ScorerParams};
use crate::tensor::{Graph, ParamStore, Scalar, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sentence {sentence}: label `{label}` is not in the vocabulary")]
    UnknownLabel { sentence: usize, label: String },
}

impl ModelError {
    pub fn is_numeric(&self) -> bool {
        matches!(self, ModelError::Tensor(TensorError::Numeric { .. }))
    }
}

#[derive(Clone, Debug)]
pub struct ParserModel<T: Scalar> {
    pub config: Config,
    pub vocab: Vocab,
    pub params: ParamStore<T>,
    pub embeddings: EmbeddingTables<T>,
    pub encoder: RecurrentStack,
    pub scorer: ScorerParams,
}

/// One sentence's forward pass, kept for loss or decoding.
pub struct Forward {
    pub prepared: Prepared,
    pub arc: Var,
}

impl<T: Scalar> ParserModel<T> {
    /// Fresh parameters for `config`. Trained word vectors start at zero
    /// when a pretrained table is supplied, so the sum starts at the
    /// pretrained vector.
    pub fn new(
        config: Config,
        vocab: Vocab,
        pretrained: Pretrained<T>,
        rng: &mut impl Rng,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        let dim = config.embedding_size;
        if !pretrained.is_empty() && pretrained.dim() != dim {
            return Err(ConfigError::Invalid {
                key: "pretrained_embeddings".into(),
                message: format!("vectors have {} values, embedding_size is {dim}", pretrained.dim()),
            }
            .into());
        }
        let mut params = ParamStore::new();
        let scale = 1.0 / (dim as f64).sqrt();
        let word_init = if pretrained.is_empty() {
            init::normal(&[vocab.num_words(), dim], scale, rng)
        } else {
            Tensor::zeros(&[vocab.num_words(), dim])
        };
        let words = params.add("embed.words", word_init);
        let tags = params.add("embed.tags", init::normal(&[vocab.num_tags(), dim], scale, rng));
        let spec = config.input_dropout_spec();
        let embeddings = EmbeddingTables { words, tags, pretrained, dim, use_tags: spec.use_tags };
        let hidden = config.effective_lstm_size();
        let encoder =
            RecurrentStack::new(&mut params, config.cell, embeddings.output_dim(), hidden, config.lstm_depth, rng);
        let scorer = ScorerParams::new(
            &mut params,
            config.classifier,
            encoder.output_dim(),
            config.arc_mlp_size,
            config.label_mlp_size,
            config.mlp_attention_size,
            vocab.num_labels().max(1),
            rng,
        );
        Ok(ParserModel { config, vocab, params, embeddings, encoder, scorer })
    }

    /// Embeds, encodes and scores arcs. `noise` enables every dropout,
    /// drawing all masks from the given generator.
    pub fn forward(
        &self,
        g: &mut Graph<'_, T>,
        s: &Sentence,
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward, ModelError> {
        let ids = resolve(s, &self.vocab, &self.embeddings.pretrained);
        let c = &self.config;
        let prepared = match noise {
            Some(rng) => {
                let drops = sample_input_drops(ids.len(), &c.input_dropout_spec(), rng);
                let x = self.embeddings.embed(g, &ids, Some(&drops))?;
                let masks = sample_variational_masks(&self.encoder, c.lstm_dropout, rng)?;
                let r = self.encoder.forward(g, x, Some(&masks))?;
                let rates = ScorerDropout { arc_rate: c.arc_mlp_dropout, label_rate: c.label_mlp_dropout };
                self.scorer.prepare(g, r, Some((rates, rng)))?
            }
            None => {
                let x = self.embeddings.embed(g, &ids, None)?;
                let r = self.encoder.forward(g, x, None)?;
                self.scorer.prepare(g, r, None)?
            }
        };
        let arc = self.scorer.arc_scores(g, &prepared)?;
        Ok(Forward { prepared, arc })
    }

    pub fn gold_labels(&self, s: &Sentence, index: usize) -> Result<Vec<usize>, ModelError> {
        s.labels
            .iter()
            .map(|l| {
                self.vocab
                    .label_id(l)
                    .ok_or_else(|| ModelError::UnknownLabel { sentence: index, label: l.clone() })
            })
            .collect()
    }

    /// Summed arc and label cross-entropy of a gold sentence, with the
    /// labels scored at the gold heads.
    pub fn loss_sum(
        &self,
        g: &mut Graph<'_, T>,
        s: &Sentence,
        gold_labels: &[usize],
        noise: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Forward), ModelError> {
        let f = self.forward(g, s, noise)?;
        let label = self.scorer.label_scores(g, &f.prepared, &s.heads)?;
        let loss = parser_loss_sum(g, ScoreSet { arc: f.arc, label }, &s.heads, gold_labels)?;
        Ok((loss, f))
    }

    /// Decodes a sentence without dropout. `use_mst` selects the tree
    /// decoder; otherwise each token takes its best-scoring head.
    pub fn parse(&self, s: &Sentence, use_mst: bool) -> Result<ParseTree, ModelError> {
        let mut g = Graph::new(&self.params);
        let f = self.forward(&mut g, s, None)?;
        let arc = masked_arc_matrix(g.value(f.arc));
        let heads = if use_mst { mst_decode(&arc, self.config.single_root)? } else { greedy_heads(&arc) };
        let label = self.scorer.label_scores(&mut g, &f.prepared, &heads)?;
        let labels = assign_labels(g.value(label));
        Ok(ParseTree::new(heads, labels))
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::is_tree;
    use crate::recurrent::CellKind;
    use crate::scorer::Classifier;
    use rand::SeedableRng;

    fn toy() -> Vec<Sentence> {
        let mk = |w: &[&str], t: &[&str], h: &[usize], l: &[&str]| {
            Sentence::new(
                w.iter().map(|s| s.to_string()).collect(),
                t.iter().map(|s| s.to_string()).collect(),
                h.to_vec(),
                l.iter().map(|s| s.to_string()).collect(),
            )
            .unwrap()
        };
        vec![
            mk(&["the", "dog", "barks"], &["DT", "NN", "VBZ"], &[2, 3, 0], &["det", "nsubj", "root"]),
            mk(&["a", "dog", "sleeps", "."], &["DT", "NN", "VBZ", "."], &[2, 3, 0, 3], &["det", "nsubj", "root", "punct"]),
            mk(&["dogs"], &["NNS"], &[0], &["root"]),
        ]
    }

    fn tiny(classifier: Classifier, cell: CellKind) -> Config {
        Config {
            embedding_size: 4,
            lstm_size: 5,
            lstm_depth: 1,
            arc_mlp_size: 4,
            label_mlp_size: 3,
            mlp_attention_size: 4,
            classifier,
            cell,
            min_count: 1,
            ..Config::default()
        }
    }

    #[test]
    fn parse_produces_trees_for_every_variant() {
        let train = toy();
        let vocab = Vocab::build(&train, 1);
        for classifier in [Classifier::DeepBiaffine, Classifier::ShallowBiaffine, Classifier::Mlp] {
            for cell in [CellKind::Lstm, CellKind::Gru, CellKind::CifLstm] {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let model =
                    ParserModel::<f32>::new(tiny(classifier, cell), vocab.clone(), Pretrained::empty(4), &mut rng)
                        .unwrap();
                for s in &train {
                    let t = model.parse(s, true).unwrap();
                    assert!(t.is_tree && is_tree(&t.heads));
                    assert_eq!(t.labels.len(), s.len());
                    assert_eq!(model.parse(s, true).unwrap(), t);
                }
                let single = model.parse(&train[2], true).unwrap();
                assert_eq!(single.heads, vec![0]);
            }
        }
    }

    #[test]
    fn loss_is_finite_with_and_without_noise() {
        let train = toy();
        let vocab = Vocab::build(&train, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ParserModel::<f64>::new(tiny(Classifier::DeepBiaffine, CellKind::Lstm), vocab, Pretrained::empty(4), &mut rng)
            .unwrap();
        let labels = model.gold_labels(&train[1], 1).unwrap();
        let mut g = Graph::new(&model.params);
        let (clean, _) = model.loss_sum(&mut g, &train[1], &labels, None).unwrap();
        let mut noise = ChaCha8Rng::seed_from_u64(2);
        let (noisy, _) = model.loss_sum(&mut g, &train[1], &labels, Some(&mut noise)).unwrap();
        assert!(g.scalar(clean).is_finite() && g.scalar(noisy).is_finite());
        // zero-initialised biaffine scorers give uniform arc and label distributions
        let n = 4.0f64;
        let expected = 4.0 * (n.ln() + (model.vocab.num_labels() as f64).ln());
        assert!((g.scalar(clean) - expected).abs() < 1e-9);
    }

    #[test]
    fn wrong_pretrained_dimension_is_rejected() {
        let vocab = Vocab::build(&toy(), 1);
        let pre = Pretrained::<f32>::from_parts(vec!["dog".into()], Tensor::zeros(&[1, 3])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = ParserModel::new(tiny(Classifier::DeepBiaffine, CellKind::Lstm), vocab, pre, &mut rng).unwrap_err();
        assert!(matches!(err, ModelError::Config(_)));
    }
}
