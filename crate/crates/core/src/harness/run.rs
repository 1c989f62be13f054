//! File-level entry points used by the command-line tool.

use std::path::Path;

use serde::Serialize;

use crate::data::{read_conll, write_conll, Prediction, Pretrained, Sentence};
use crate::tensor::{Precision, Scalar};

use super::{save, train, AnyModel, Config, EpochLog, EvalReport, HarnessError};

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub steps: u64,
    pub best_epoch: Option<usize>,
    pub best_dev: Option<EvalReport>,
    pub parameters: usize,
}

fn train_at<T: Scalar>(
    config: &Config,
    train_set: &[Sentence],
    dev_set: &[Sentence],
    out: &Path,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainSummary, HarnessError> {
    let pretrained = match &config.pretrained_embeddings {
        Some(p) => Pretrained::<T>::load(p, config.embedding_size)?,
        None => Pretrained::empty(config.embedding_size),
    };
    let outcome = train(config, train_set, dev_set, pretrained, on_epoch)?;
    save(&outcome.model, out)?;
    let log_path = out.join("train_log.json");
    let json = serde_json::to_string_pretty(&outcome.log).expect("log serializes");
    std::fs::write(&log_path, json).map_err(|e| HarnessError::io(&log_path, e))?;
    let best_dev = outcome.best_epoch.and_then(|e| outcome.log[e - 1].dev);
    Ok(TrainSummary {
        epochs: outcome.log.len(),
        steps: outcome.log.last().map_or(0, |l| l.step),
        best_epoch: outcome.best_epoch,
        best_dev,
        parameters: outcome.model.num_parameters(),
    })
}

/// Trains on `train_path`, selects on `dev_path` and writes the model to `out`.
pub fn train_files(
    config: &Config,
    train_path: impl AsRef<Path>,
    dev_path: impl AsRef<Path>,
    out: impl AsRef<Path>,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<TrainSummary, HarnessError> {
    let train_set = read_conll(train_path)?;
    let dev_set = read_conll(dev_path)?;
    match config.precision {
        Precision::F32 => train_at::<f32>(config, &train_set, &dev_set, out.as_ref(), on_epoch),
        Precision::F64 => train_at::<f64>(config, &train_set, &dev_set, out.as_ref(), on_epoch),
    }
}

/// Parses `input` with `model` and writes the predictions to `output`.
/// Returns the number of sentences parsed.
pub fn parse_file(
    model: &AnyModel,
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    use_mst: bool,
) -> Result<usize, HarnessError> {
    let sentences = read_conll(input)?;
    let vocab = model.vocab();
    let predictions = sentences
        .iter()
        .map(|s| {
            let t = model.parse(s, use_mst)?;
            Ok(Prediction { heads: t.heads, labels: t.labels.iter().map(|&l| vocab.label(l).to_string()).collect() })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    write_conll(output, &sentences, &predictions)?;
    Ok(sentences.len())
}
