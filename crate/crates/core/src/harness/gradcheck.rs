//! End-to-end gradient check of a tiny parser at 64-bit precision.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{Pretrained, Sentence, Vocab};
use crate::model::{ModelError, ParserModel};
use crate::recurrent::CellKind;
use crate::scorer::Classifier;
use crate::tensor::{grad_check, GradStore, Graph, OpKind, ParamStore, Tensor, TensorError};

use super::Config;

/// Finite-difference step.
pub const EPS: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub seeds: Vec<u64>,
    pub errors: Vec<f64>,
    pub max_error: f64,
    /// Error with every cross-entropy backward rule scaled by 1.1.
    pub negative_control: f64,
}

fn toy_sentences() -> Vec<Sentence> {
    let mk = |w: &str, t: &str, h: &[usize], l: &str| {
        Sentence::new(
            w.split(' ').map(String::from).collect(),
            t.split(' ').map(String::from).collect(),
            h.to_vec(),
            l.split(' ').map(String::from).collect(),
        )
        .expect("valid toy sentence")
    };
    vec![
        mk("the cat sat", "DT NN VBD", &[2, 3, 0], "det nsubj root"),
        mk("cats sat on mats", "NNS VBD IN NNS", &[2, 0, 2, 3], "nsubj root prep pobj"),
    ]
}

/// The configuration checked: one BiLSTM layer of 5 units and MLPs of 4
/// (arc) and 3 (label), with every dropout active. The MLP-attention
/// variant uses 4 hidden units.
pub fn gradcheck_config() -> Config {
    Config {
        embedding_size: 3,
        lstm_size: 5,
        lstm_depth: 1,
        arc_mlp_size: 4,
        label_mlp_size: 3,
        mlp_attention_size: 4,
        min_count: 1,
        precision: crate::tensor::Precision::F64,
        ..Config::default()
    }
}

fn objective(
    model: &ParserModel<f64>,
    params: &ParamStore<f64>,
    sentences: &[Sentence],
    labels: &[Vec<usize>],
    noise_seed: u64,
    fault: Option<(OpKind, f64)>,
) -> Result<(f64, GradStore<f64>), ModelError> {
    let mut g = Graph::new(params);
    if let Some((kind, factor)) = fault {
        g.inject_backward_fault(kind, factor);
    }
    // identical dropout masks on every evaluation
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut total = None;
    let mut tokens = 0;
    for (s, l) in sentences.iter().zip(labels) {
        let (loss, _) = model.loss_sum(&mut g, s, l, Some(&mut rng))?;
        total = Some(match total {
            Some(t) => g.add(t, loss)?,
            None => loss,
        });
        tokens += s.len();
    }
    let total = total.expect("at least one sentence");
    let loss = g.scale(total, 1.0 / tokens as f64)?;
    Ok((g.scalar(loss), g.backward(loss)?))
}

/// Max relative gradient error of the tiny parser under `seed`, with all
/// parameters drawn uniformly from [-0.5, 0.5].
pub fn model_gradcheck(
    classifier: Classifier,
    cell: CellKind,
    seed: u64,
    fault: Option<(OpKind, f64)>,
) -> Result<f64, ModelError> {
    let sentences = toy_sentences();
    let config = Config { classifier, cell, ..gradcheck_config() };
    let vocab = Vocab::build(&sentences, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pretrained = Pretrained::from_parts(
        vec!["cat".into(), "mats".into()],
        Tensor::new(vec![2, 3], (0..6).map(|_| rng.gen_range(-0.5..0.5)).collect())?,
    )
    .map_err(|e| ModelError::Tensor(TensorError::Contract(e.to_string())))?;
    let mut model = ParserModel::<f64>::new(config, vocab, pretrained, &mut rng)?;
    for t in model.params.tensors_mut() {
        for x in t.data_mut() {
            *x = rng.gen_range(-0.5..0.5);
        }
    }
    let labels: Vec<Vec<usize>> =
        sentences.iter().enumerate().map(|(k, s)| model.gold_labels(s, k)).collect::<Result<_, _>>()?;
    let noise_seed = seed.wrapping_add(1000);
    let mut params = model.params.clone();
    let err = grad_check(
        &mut params,
        |p| {
            objective(&model, p, &sentences, &labels, noise_seed, None)
                .map(|r| r.0)
                .map_err(|e| TensorError::Contract(e.to_string()))
        },
        |p| {
            objective(&model, p, &sentences, &labels, noise_seed, fault)
                .map(|r| r.1)
                .map_err(|e| TensorError::Contract(e.to_string()))
        },
        EPS,
    )?;
    model.params = params;
    Ok(err)
}

/// Checks the deep biaffine LSTM parser on seeds `0..seeds`, plus one
/// corrupted-gradient control.
pub fn gradcheck_suite(seeds: u64) -> Result<GradcheckReport, ModelError> {
    let seeds: Vec<u64> = (0..seeds).collect();
    let errors = seeds
        .iter()
        .map(|&s| model_gradcheck(Classifier::DeepBiaffine, CellKind::Lstm, s, None))
        .collect::<Result<Vec<_>, _>>()?;
    let negative_control = model_gradcheck(
        Classifier::DeepBiaffine,
        CellKind::Lstm,
        0,
        Some((OpKind::SoftmaxCrossEntropy, 1.1)),
    )?;
    let max_error = errors.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport { seeds, errors, max_error, negative_control })
}
