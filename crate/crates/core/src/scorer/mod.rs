//! Arc and label scoring on top of the recurrent states.
//!
//! Row 0 of every per-token matrix is the root. It is a candidate head
//! only, so score matrices have `n` rows (dependents 1..n) and `n + 1`
//! arc columns (heads 0..n).

use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::init;
use crate::recurrent::dropout_mask;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, TensorError, Var};


/// Classifier variants. `Shallow300` is the shallow classifier on a
/// 300-wide encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classifier {
    DeepBiaffine,
    ShallowBiaffine,
    Shallow300,
    Mlp,
}

impl Classifier {
    pub fn name(self) -> &'static str {
        match self {
            Classifier::DeepBiaffine => "deep-biaffine",
            Classifier::ShallowBiaffine => "shallow-biaffine",
            Classifier::Shallow300 => "shallow-300",
            Classifier::Mlp => "mlp",
        }
    }

    pub fn is_shallow(self) -> bool {
        matches!(self, Classifier::ShallowBiaffine | Classifier::Shallow300)
    }
}

impl FromStr for Classifier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deep-biaffine" | "deep" => Ok(Classifier::DeepBiaffine),
            "shallow-biaffine" | "shallow" => Ok(Classifier::ShallowBiaffine),
            "shallow-300" => Ok(Classifier::Shallow300),
            "mlp" => Ok(Classifier::Mlp),
            other => Err(format!(
                "unknown classifier `{other}` (expected deep-biaffine, shallow-biaffine, shallow-300 or mlp)"
            )),
        }
    }
}

/// `x·W + b`, optionally followed by a ReLU.
#[derive(Clone, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Dense {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut impl Rng,
    ) -> Dense {
        let weight = store.add(format!("{prefix}.W"), init::glorot(input_dim, output_dim, rng));
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros(&[1, output_dim]));
        Dense { weight, bias, input_dim, output_dim }
    }

    pub fn linear<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let xw = g.matmul(x, w)?;
        g.add_bias(xw, b)
    }

    pub fn relu<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        let y = self.linear(g, x)?;
        g.relu(y)
    }
}

/// Fixed-class affine classifier `W·x + b`, stored as a `d_in × classes`
/// matrix so rows of `x` can be scored in one product.
#[derive(Clone, Debug)]
pub struct AffineClassifierParams(pub Dense);

impl AffineClassifierParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        AffineClassifierParams(Dense::new(store, prefix, input_dim, classes, rng))
    }

    pub fn scores<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
        self.0.linear(g, x)
    }
}

/// The four dimension-reducing ReLU layers of the deep classifier.
#[derive(Clone, Debug)]
pub struct MlpBank {
    pub arc_dep: Dense,
    pub arc_head: Dense,
    pub label_dep: Dense,
    pub label_head: Dense,
}

/// Token representations handed to the biaffine scorers, root row included.
#[derive(Clone, Copy, Debug)]
pub struct Reduced {
    pub arc_dep: Var,
    pub arc_head: Var,
    pub label_dep: Var,
    pub label_head: Var,
}

/// Dropout applied to the scorer inputs during training.
#[derive(Clone, Copy, Debug)]
pub struct ScorerDropout {
    pub arc_rate: f64,
    pub label_rate: f64,
}

impl MlpBank {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        arc_dim: usize,
        label_dim: usize,
        rng: &mut impl Rng,
    ) -> MlpBank {
        MlpBank {
            arc_dep: Dense::new(store, "mlp.arc_dep", input_dim, arc_dim, rng),
            arc_head: Dense::new(store, "mlp.arc_head", input_dim, arc_dim, rng),
            label_dep: Dense::new(store, "mlp.label_dep", input_dim, label_dim, rng),
            label_head: Dense::new(store, "mlp.label_head", input_dim, label_dim, rng),
        }
    }

    /// Applies the four layers to `r`. During training each output matrix
    /// gets its own dropout mask, shared by every token of the sentence.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        r: Var,
        dropout: Option<(ScorerDropout, &mut dyn rand::RngCore)>,
    ) -> Result<Reduced, TensorError> {
        let arc_dep = self.arc_dep.relu(g, r)?;
        let arc_head = self.arc_head.relu(g, r)?;
        let label_dep = self.label_dep.relu(g, r)?;
        let label_head = self.label_head.relu(g, r)?;
        let Some((rates, rng)) = dropout else {
            return Ok(Reduced { arc_dep, arc_head, label_dep, label_head });
        };
        Ok(Reduced {
            arc_dep: locked_dropout(g, arc_dep, rates.arc_rate, rng)?,
            arc_head: locked_dropout(g, arc_head, rates.arc_rate, rng)?,
            label_dep: locked_dropout(g, label_dep, rates.label_rate, rng)?,
            label_head: locked_dropout(g, label_head, rates.label_rate, rng)?,
        })
    }
}

/// Multiplies every row of `x` by the same inverted-dropout mask.
pub fn locked_dropout<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    rate: f64,
    rng: &mut dyn rand::RngCore,
) -> Result<Var, TensorError> {
    if rate <= 0.0 {
        return Ok(x);
    }
    let (rows, cols) = (g.value(x).rows(), g.value(x).cols());
    let mask: Vec<T> = dropout_mask(cols, rate, rng);
    let tiled: Vec<T> = (0..rows).flat_map(|_| mask.iter().copied()).collect();
    let m = g.constant(Tensor::from_parts(vec![rows, cols], tiled))?;
    g.mul(x, m)
}

fn append_ones<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
    let rows = g.value(x).rows();
    let ones = g.constant(Tensor::full(&[rows, 1], T::one()))?;
    g.concat_cols(&[x, ones])
}

fn dependents<T: Scalar>(g: &mut Graph<'_, T>, x: Var) -> Result<Var, TensorError> {
    let rows = g.value(x).rows();
    if rows < 2 {
        return Err(TensorError::Contract("a sentence needs at least one token besides the root".into()));
    }
    g.slice_rows(x, 1, rows - 1)
}

/// Variable-class biaffine arc scorer. The weight is stored bias-augmented
/// on the dependent side: `(d+1) × d`, whose first `d` rows pair dependent
/// and head features and whose last row is the head prior `u2`.
#[derive(Clone, Debug)]
pub struct ArcScorerParams {
    pub weight: ParamId,
    pub dim: usize,
}

impl ArcScorerParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dim: usize) -> Self {
        let weight = store.add("arc.U", Tensor::zeros(&[dim + 1, dim]));
        ArcScorerParams { weight, dim }
    }

    /// `U1` with the head on the left: `s[i][j] = h_jᵀ·U1·h_i + h_jᵀ·u2`.
    pub fn u1<T: Scalar>(&self, store: &ParamStore<T>) -> Tensor<T> {
        let w = store.get(self.weight);
        let d = self.dim;
        let mut out = Tensor::zeros(&[d, d]);
        for a in 0..d {
            for b in 0..d {
                out.set(b, a, w.get(a, b));
            }
        }
        out
    }

    pub fn u2<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<T> {
        store.get(self.weight).row(self.dim).to_vec()
    }

    /// Writes `U1` (head-left convention) and `u2` into the stored weight.
    pub fn set<T: Scalar>(&self, store: &mut ParamStore<T>, u1: &Tensor<T>, u2: &[T]) {
        let d = self.dim;
        let w = store.get_mut(self.weight);
        for a in 0..d {
            for b in 0..d {
                w.set(a, b, u1.get(b, a));
            }
        }
        for (b, &v) in u2.iter().enumerate() {
            w.set(d, b, v);
        }
    }

    /// `n × (n+1)` arc scores from `(n+1) × d` dependent and head matrices.
    pub fn scores<T: Scalar>(&self, g: &mut Graph<'_, T>, dep: Var, head: Var) -> Result<Var, TensorError> {
        let dep = dependents(g, dep)?;
        let dep = append_ones(g, dep)?;
        let u = g.param(self.weight);
        let projected = g.matmul(dep, u)?;
        g.matmul_t(projected, head)
    }
}

/// Fixed-class biaffine label scorer:
/// `s_i[k] = (h_{y_i}⊕1)ᵀ·U1[k]·(h_i⊕1) + (h_{y_i}⊕h_i)ᵀ·U2[:,k] + b[k]`.
#[derive(Clone, Debug)]
pub struct LabelScorerParams {
    pub bilinear: ParamId,
    pub linear: ParamId,
    pub bias: ParamId,
    pub dim: usize,
    pub classes: usize,
}

impl LabelScorerParams {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, dim: usize, classes: usize) -> Self {
        LabelScorerParams {
            bilinear: store.add("label.U1", Tensor::zeros(&[classes, dim + 1, dim + 1])),
            linear: store.add("label.U2", Tensor::zeros(&[2 * dim, classes])),
            bias: store.add("label.b", Tensor::zeros(&[1, classes])),
            dim,
            classes,
        }
    }

    /// Number of entries in the bilinear tensor.
    pub fn bilinear_count(&self) -> usize {
        (self.dim + 1) * self.classes * (self.dim + 1)
    }

    /// `n × c` label scores for each dependent under `heads` (0 = root).
    pub fn scores<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        dep: Var,
        head: Var,
        heads: &[usize],
    ) -> Result<Var, TensorError> {
        let h_head = gather_heads(g, head, heads)?;
        let h_dep = dependents(g, dep)?;
        let left = append_ones(g, h_head)?;
        let right = append_ones(g, h_dep)?;
        let u1 = g.param(self.bilinear);
        let bil = g.bilinear(left, u1, right)?;
        let both = g.concat_cols(&[h_head, h_dep])?;
        let u2 = g.param(self.linear);
        let lin = g.matmul(both, u2)?;
        let sum = g.add(bil, lin)?;
        let b = g.param(self.bias);
        g.add_bias(sum, b)
    }
}

fn gather_heads<T: Scalar>(g: &mut Graph<'_, T>, head: Var, heads: &[usize]) -> Result<Var, TensorError> {
    let rows = g.value(head).rows();
    if heads.len() + 1 != rows {
        return Err(TensorError::Contract(format!(
            "{} heads given for a sentence of {} tokens",
            heads.len(),
            rows - 1
        )));
    }
    if let Some((i, &h)) = heads.iter().enumerate().find(|&(_, &h)| h >= rows) {
        return Err(TensorError::Contract(format!("dependent {} has head {h} out of range", i + 1)));
    }
    let idx: Vec<Option<usize>> = heads.iter().map(|&h| Some(h)).collect();
    g.gather_rows(head, &idx)
}

/// MLP attention: `score(i, j) = vᵀ·relu(W_h·r_j + W_d·r_i + b)`.
#[derive(Clone, Debug)]
pub struct MlpArcScorer {
    pub head_weight: ParamId,
    pub dep_weight: ParamId,
    pub bias: ParamId,
    pub v: ParamId,
    pub hidden: usize,
}

impl MlpArcScorer {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, input_dim: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        MlpArcScorer {
            head_weight: store.add("arc_mlp.W_head", init::glorot(input_dim, hidden, rng)),
            dep_weight: store.add("arc_mlp.W_dep", init::glorot(input_dim, hidden, rng)),
            bias: store.add("arc_mlp.b", Tensor::zeros(&[1, hidden])),
            v: store.add("arc_mlp.v", init::glorot(hidden, 1, rng)),
            hidden,
        }
    }

    pub fn scores<T: Scalar>(&self, g: &mut Graph<'_, T>, r: Var) -> Result<Var, TensorError> {
        let wh = g.param(self.head_weight);
        let wd = g.param(self.dep_weight);
        let b = g.param(self.bias);
        let v = g.param(self.v);
        let heads = g.matmul(r, wh)?;
        let deps = dependents(g, r)?;
        let deps = g.matmul(deps, wd)?;
        let n = g.value(deps).rows();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let di = g.row(deps, i)?;
            let shift = g.add(di, b)?;
            let pre = g.add_bias(heads, shift)?;
            let hid = g.relu(pre)?;
            let col = g.matmul(hid, v)?;
            rows.push(g.transpose(col)?);
        }
        g.concat_rows(&rows)
    }
}

/// MLP label classifier: one ReLU layer over `r_{y_i} ⊕ r_i` followed by
/// an affine output layer.
#[derive(Clone, Debug)]
pub struct MlpLabelScorer {
    pub hidden: Dense,
    pub output: AffineClassifierParams,
}

impl MlpLabelScorer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        hidden: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> Self {
        MlpLabelScorer {
            hidden: Dense::new(store, "label_mlp.hidden", 2 * input_dim, hidden, rng),
            output: AffineClassifierParams::new(store, "label_mlp.out", hidden, classes, rng),
        }
    }

    pub fn scores<T: Scalar>(&self, g: &mut Graph<'_, T>, r: Var, heads: &[usize]) -> Result<Var, TensorError> {
        let h_head = gather_heads(g, r, heads)?;
        let h_dep = dependents(g, r)?;
        let both = g.concat_cols(&[h_head, h_dep])?;
        let hid = self.hidden.relu(g, both)?;
        self.output.scores(g, hid)
    }
}

/// Scorer parameters for one classifier variant.
#[derive(Clone, Debug)]
pub enum ScorerParams {
    /// Biaffine scorers, preceded by the MLP bank unless shallow.
    Biaffine { mlps: Option<MlpBank>, arc: ArcScorerParams, label: LabelScorerParams },
    Mlp { arc: MlpArcScorer, label: MlpLabelScorer },
}

/// Scorer inputs prepared once per sentence.
#[derive(Clone, Copy, Debug)]
pub struct Prepared(Reduced);

/// Arc and label scores of one sentence in the graph.
#[derive(Clone, Copy, Debug)]
pub struct ScoreSet {
    pub arc: Var,
    pub label: Var,
}

impl ScorerParams {
    /// Builds the scorer for `classifier` over `input_dim`-wide encoder states.
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        classifier: Classifier,
        input_dim: usize,
        arc_dim: usize,
        label_dim: usize,
        attention_dim: usize,
        classes: usize,
        rng: &mut impl Rng,
    ) -> ScorerParams {
        match classifier {
            Classifier::DeepBiaffine => ScorerParams::Biaffine {
                mlps: Some(MlpBank::new(store, input_dim, arc_dim, label_dim, rng)),
                arc: ArcScorerParams::new(store, arc_dim),
                label: LabelScorerParams::new(store, label_dim, classes),
            },
            Classifier::ShallowBiaffine | Classifier::Shallow300 => ScorerParams::Biaffine {
                mlps: None,
                arc: ArcScorerParams::new(store, input_dim),
                label: LabelScorerParams::new(store, input_dim, classes),
            },
            Classifier::Mlp => ScorerParams::Mlp {
                arc: MlpArcScorer::new(store, input_dim, attention_dim, rng),
                label: MlpLabelScorer::new(store, input_dim, attention_dim, classes, rng),
            },
        }
    }

    /// Applies the MLP bank (deep variant) and training dropout. Without an
    /// MLP bank the dropout falls on the encoder output itself.
    pub fn prepare<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        r: Var,
        dropout: Option<(ScorerDropout, &mut dyn rand::RngCore)>,
    ) -> Result<Prepared, TensorError> {
        match self {
            ScorerParams::Biaffine { mlps: Some(bank), .. } => Ok(Prepared(bank.forward(g, r, dropout)?)),
            _ => {
                let r = match dropout {
                    Some((rates, rng)) => locked_dropout(g, r, rates.arc_rate, rng)?,
                    None => r,
                };
                Ok(Prepared(Reduced { arc_dep: r, arc_head: r, label_dep: r, label_head: r }))
            }
        }
    }

    pub fn arc_scores<T: Scalar>(&self, g: &mut Graph<'_, T>, p: &Prepared) -> Result<Var, TensorError> {
        match self {
            ScorerParams::Biaffine { arc, .. } => arc.scores(g, p.0.arc_dep, p.0.arc_head),
            ScorerParams::Mlp { arc, .. } => arc.scores(g, p.0.arc_dep),
        }
    }

    pub fn label_scores<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        p: &Prepared,
        heads: &[usize],
    ) -> Result<Var, TensorError> {
        match self {
            ScorerParams::Biaffine { label, .. } => label.scores(g, p.0.label_dep, p.0.label_head, heads),
            ScorerParams::Mlp { label, .. } => label.scores(g, p.0.label_dep, heads),
        }
    }

    pub fn score<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        p: &Prepared,
        heads: &[usize],
    ) -> Result<ScoreSet, TensorError> {
        Ok(ScoreSet { arc: self.arc_scores(g, p)?, label: self.label_scores(g, p, heads)? })
    }

    pub fn label_params(&self) -> Option<&LabelScorerParams> {
        match self {
            ScorerParams::Biaffine { label, .. } => Some(label),
            ScorerParams::Mlp { .. } => None,
        }
    }
}

/// Summed arc and label cross-entropy over the dependents of one sentence.
/// Row `i` of the arc matrix never offers token `i + 1` as its own head.
pub fn parser_loss_sum<T: Scalar>(
    g: &mut Graph<'_, T>,
    scores: ScoreSet,
    gold_heads: &[usize],
    gold_labels: &[usize],
) -> Result<Var, TensorError> {
    if gold_heads.iter().enumerate().any(|(i, &h)| h == i + 1) {
        return Err(TensorError::Contract("gold head is a self-loop".into()));
    }
    let selfs: Vec<Option<usize>> = (0..gold_heads.len()).map(|i| Some(i + 1)).collect();
    let arc = g.softmax_cross_entropy(scores.arc, gold_heads, &selfs)?;
    let none = vec![None; gold_labels.len()];
    let label = g.softmax_cross_entropy(scores.label, gold_labels, &none)?;
    g.add(arc, label)
}

/// Per-dependent mean of [`parser_loss_sum`].
pub fn parser_loss<T: Scalar>(
    g: &mut Graph<'_, T>,
    scores: ScoreSet,
    gold_heads: &[usize],
    gold_labels: &[usize],
) -> Result<Var, TensorError> {
    let total = parser_loss_sum(g, scores, gold_heads, gold_labels)?;
    g.scale(total, T::of(1.0 / gold_heads.len().max(1) as f64))
}

/// Copies an arc score matrix out of the graph with self-heads set to −∞.
pub fn masked_arc_matrix<T: Scalar>(arc: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..arc.rows())
        .map(|i| {
            let mut row: Vec<f64> = arc.row(i).iter().map(|x| x.as_f64()).collect();
            row[i + 1] = f64::NEG_INFINITY;
            row
        })
        .collect()
}
