use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Pretrained, Sentence, Vocab};
use crate::decode::{greedy_heads, ParseTree};
use crate::model::{ModelError, ParserModel};
use crate::optim::{AdamConfig, OptimState};
use crate::scorer::masked_arc_matrix;
use crate::tensor::{GradStore, Graph, Scalar, TensorError};

use super::{evaluate_sentences, Config, EvalReport, HarnessError, PunctPolicy};

/// Metrics recorded at the end of every epoch.
#[derive(Clone, Debug, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub step: u64,
    pub learning_rate: f64,
    pub train_loss: f64,
    /// Greedy attachment accuracy on the training batches, under dropout.
    pub train_uas: f64,
    pub dev: Option<EvalReport>,
}

pub struct TrainOutcome<T: Scalar> {
    /// The best-dev-LAS checkpoint (the final one when there is no dev set).
    pub model: ParserModel<T>,
    pub log: Vec<EpochLog>,
    /// Mean per-token loss of every optimizer step.
    pub step_losses: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Groups sentence indices of similar length into batches of at most
/// `max_tokens` tokens. A longer sentence forms a batch of its own.
pub fn make_batches(sentences: &[Sentence], max_tokens: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    order.sort_by_key(|&i| (sentences[i].len(), i));
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut tokens = 0;
    for i in order {
        let n = sentences[i].len();
        if !current.is_empty() && tokens + n > max_tokens {
            batches.push(std::mem::take(&mut current));
            tokens = 0;
        }
        current.push(i);
        tokens += n;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn diverged(step: u64, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Diverged { step, message: e.to_string() }
}

/// Parses every sentence.
pub fn parse_all<T: Scalar>(
    model: &ParserModel<T>,
    sentences: &[Sentence],
    use_mst: bool,
) -> Result<Vec<ParseTree>, ModelError> {
    sentences.iter().map(|s| model.parse(s, use_mst)).collect()
}

/// Copies of `sentences` carrying the predicted heads and labels.
pub fn with_predictions(vocab: &Vocab, sentences: &[Sentence], trees: &[ParseTree]) -> Vec<Sentence> {
    sentences
        .iter()
        .zip(trees)
        .map(|(s, t)| Sentence {
            heads: t.heads.clone(),
            labels: t.labels.iter().map(|&l| vocab.label(l).to_string()).collect(),
            ..s.clone()
        })
        .collect()
}

pub fn evaluate_model<T: Scalar>(
    model: &ParserModel<T>,
    gold: &[Sentence],
    use_mst: bool,
) -> Result<EvalReport, HarnessError> {
    let trees = parse_all(model, gold, use_mst)?;
    let pred = with_predictions(&model.vocab, gold, &trees);
    evaluate_sentences(gold, &pred, model.config.punct == PunctPolicy::Exclude)
}

impl From<&Config> for AdamConfig {
    fn from(c: &Config) -> Self {
        AdamConfig {
            alpha: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            anneal_base: c.anneal_base,
            anneal_steps: c.anneal_steps,
        }
    }
}

/// Trains until the first epoch boundary at or after `max_steps`
/// optimizer steps, evaluating on `dev` after each epoch.
pub fn train<T: Scalar>(
    config: &Config,
    train: &[Sentence],
    dev: &[Sentence],
    pretrained: Pretrained<T>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainOutcome<T>, HarnessError> {
    config.validate()?;
    if train.is_empty() {
        return Err(HarnessError::Data(crate::data::DataError::Contract("training set is empty".into())));
    }
    let vocab = Vocab::build(train, config.min_count);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = ParserModel::new(config.clone(), vocab, pretrained, &mut init_rng)?;
    let gold_labels: Vec<Vec<usize>> =
        train.iter().enumerate().map(|(k, s)| model.gold_labels(s, k)).collect::<Result<_, _>>()?;
    let mut optim = OptimState::new(AdamConfig::from(config), &model.params);
    let mut grads = GradStore::zeros_like(&model.params);
    let mut batches = make_batches(train, config.batch_tokens);
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<(f64, usize, crate::tensor::ParamStore<T>)> = None;
    let mut epoch = 0;
    while optim.t < config.max_steps.max(1) {
        epoch += 1;
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        batches.shuffle(&mut order_rng);
        let (mut epoch_loss, mut epoch_tokens, mut epoch_correct) = (0.0, 0usize, 0usize);
        for batch in &batches {
            let step = optim.t;
            let mut rng = step_rng(config.seed, step);
            let tokens: usize = batch.iter().map(|&i| train[i].len()).sum();
            let scale = T::of(1.0 / tokens as f64);
            grads.zero();
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = &train[i];
                let mut g = Graph::new(&model.params);
                let (loss, f) = model
                    .loss_sum(&mut g, s, &gold_labels[i], Some(&mut rng))
                    .map_err(|e| if e.is_numeric() { diverged(step, &e) } else { e.into() })?;
                let value = g.scalar(loss).as_f64();
                if !value.is_finite() {
                    return Err(diverged(step, "loss is not finite"));
                }
                batch_loss += value;
                let heads = greedy_heads(&masked_arc_matrix(g.value(f.arc)));
                epoch_correct += heads.iter().zip(&s.heads).filter(|(a, b)| a == b).count();
                g.backward_into(loss, scale, &mut grads).map_err(|e| match e {
                    TensorError::Numeric { .. } => diverged(step, &e),
                    other => ModelError::from(other).into(),
                })?;
            }
            optim.step(&mut model.params, &grads).map_err(|e| diverged(step, e))?;
            step_losses.push(batch_loss / tokens as f64);
            epoch_loss += batch_loss;
            epoch_tokens += tokens;
        }
        let dev_report = if dev.is_empty() { None } else { Some(evaluate_model(&model, dev, true)?) };
        if let Some(r) = dev_report {
            if best.as_ref().map_or(true, |(las, _, _)| r.las > *las) {
                best = Some((r.las, epoch, model.params.clone()));
            }
        }
        let entry = EpochLog {
            epoch,
            step: optim.t,
            learning_rate: optim.config.lr_at(optim.t),
            train_loss: epoch_loss / epoch_tokens as f64,
            train_uas: 100.0 * epoch_correct as f64 / epoch_tokens as f64,
            dev: dev_report,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, params)) = best {
        model.params = params;
    }
    Ok(TrainOutcome { model, log, step_losses, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(n: usize) -> Sentence {
        Sentence::new(
            vec!["w".into(); n],
            vec!["T".into(); n],
            (0..n).map(|i| if i == 0 { 0 } else { 1 }).collect(),
            vec!["l".into(); n],
        )
        .unwrap()
    }

    #[test]
    fn batches_respect_token_budget() {
        let data: Vec<Sentence> = [3, 9, 2, 5, 5, 12, 1].iter().map(|&n| sent(n)).collect();
        let batches = make_batches(&data, 10);
        let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
        seen.sort();
        assert_eq!(seen, (0..data.len()).collect::<Vec<_>>());
        for b in &batches {
            let tokens: usize = b.iter().map(|&i| data[i].len()).sum();
            assert!(tokens <= 10 || b.len() == 1);
        }
        // lengths are bucketed in ascending order
        assert_eq!(batches[0], vec![6, 2, 0]);
    }
}
