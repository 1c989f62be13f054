//! Bidirectional multi-layer recurrent encoder with variational dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::harness::ConfigError;
use crate::init;
use crate::tensor::{Graph, ParamId, ParamStore, Scalar, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Lstm,
    Gru,
    /// LSTM with coupled input/forget gates (`f = 1 - i`) and an affine candidate.
    CifLstm,
}

impl CellKind {
    pub fn gate_blocks(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru | CellKind::CifLstm => 3,
        }
    }

    fn has_memory(self) -> bool {
        !matches!(self, CellKind::Gru)
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::CifLstm => "cif-lstm",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "cif-lstm" | "cif_lstm" | "ciflstm" => Ok(CellKind::CifLstm),
            other => Err(format!("unknown cell `{other}` (expected lstm, gru or cif-lstm)")),
        }
    }
}

/// Weights of one recurrent cell in one direction.
///
/// Gate blocks are laid out column-wise: lstm `[i f o ĉ]`, gru `[z r n]`,
/// cif-lstm `[i o ĉ]`. The gru candidate's recurrent block is kept as a
/// separate matrix because it multiplies the reset-gated state.
#[derive(Clone, Debug)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub hidden: usize,
    pub input_weights: ParamId,
    pub recurrent_weights: ParamId,
    pub candidate_recurrent: Option<ParamId>,
    pub bias: ParamId,
    pub initial_hidden: ParamId,
    pub initial_cell: Option<ParamId>,
}

impl CellParams {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        prefix: &str,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let blocks = kind.gate_blocks();
        let mut w_in = Tensor::zeros(&[input_dim, blocks * hidden]);
        for b in 0..blocks {
            let block = init::glorot::<T>(input_dim, hidden, rng);
            for i in 0..input_dim {
                for j in 0..hidden {
                    w_in.set(i, b * hidden + j, block.get(i, j));
                }
            }
        }
        let rec_blocks = if kind == CellKind::Gru { 2 } else { blocks };
        let w_rec = init::orthogonal_blocks::<T>(hidden, rec_blocks, rng);
        let mut bias = Tensor::zeros(&[blocks * hidden]);
        if kind == CellKind::Lstm {
            bias.data_mut()[hidden..2 * hidden].fill(T::one());
        }
        let input_weights = store.add(format!("{prefix}.input_weights"), w_in);
        let recurrent_weights = store.add(format!("{prefix}.recurrent_weights"), w_rec);
        let candidate_recurrent = (kind == CellKind::Gru).then(|| {
            store.add(
                format!("{prefix}.candidate_recurrent"),
                init::orthogonal_blocks::<T>(hidden, 1, rng),
            )
        });
        let bias = store.add(format!("{prefix}.bias"), bias);
        let initial_hidden = store.add(format!("{prefix}.h0"), Tensor::zeros(&[1, hidden]));
        let initial_cell = kind
            .has_memory()
            .then(|| store.add(format!("{prefix}.c0"), Tensor::zeros(&[1, hidden])));
        CellParams {
            kind,
            input_dim,
            hidden,
            input_weights,
            recurrent_weights,
            candidate_recurrent,
            bias,
            initial_hidden,
            initial_cell,
        }
    }

    /// Input, recurrent and bias weights; learned initial states excluded.
    pub fn weight_count(&self) -> usize {
        self.kind.gate_blocks() * (self.input_dim + self.hidden + 1) * self.hidden
    }

    pub fn initial_state(&self, g: &mut Graph<'_, impl Scalar>) -> CellState {
        CellState { h: g.param(self.initial_hidden), c: self.initial_cell.map(|c| g.param(c)) }
    }
}

/// Hidden (and, for LSTM variants, memory) state after a step.
#[derive(Clone, Copy, Debug)]
pub struct CellState {
    pub h: Var,
    pub c: Option<Var>,
}

/// Gate activations exposed for inspection.
#[derive(Clone, Copy, Debug, Default)]
pub struct GateTrace {
    pub input: Option<Var>,
    pub forget: Option<Var>,
    pub output: Option<Var>,
}

/// One recurrent step from a raw `1 × input_dim` input.
///
/// `masks` are the (input, recurrent) dropout masks; they are applied to
/// `x` and to the previous hidden state before the gate products.
pub fn cell_step<T: Scalar>(
    g: &mut Graph<'_, T>,
    params: &CellParams,
    x: Var,
    state: CellState,
    masks: Option<(&[T], &[T])>,
) -> Result<(CellState, GateTrace), TensorError> {
    let xd = g.value(x).cols();
    if xd != params.input_dim || g.value(state.h).cols() != params.hidden {
        return Err(TensorError::Contract(format!(
            "cell expects input {} / state {}, got {} / {}",
            params.input_dim,
            params.hidden,
            xd,
            g.value(state.h).cols()
        )));
    }
    if params.kind.has_memory() != state.c.is_some() {
        return Err(TensorError::Contract("memory state does not match cell kind".into()));
    }
    let (x, rec_mask) = match masks {
        Some((input, recurrent)) => {
            let m = g.constant(Tensor::matrix(1, input.len(), input.to_vec())?)?;
            let r = g.constant(Tensor::matrix(1, recurrent.len(), recurrent.to_vec())?)?;
            (g.mul(x, m)?, Some(r))
        }
        None => (x, None),
    };
    let w = g.param(params.input_weights);
    let b = g.param(params.bias);
    let xw = g.matmul(x, w)?;
    let xw = g.add_bias(xw, b)?;
    step_projected(g, params, xw, state, rec_mask)
}

/// Step given the already projected input row `x·W + b`.
fn step_projected<T: Scalar>(
    g: &mut Graph<'_, T>,
    p: &CellParams,
    xw: Var,
    state: CellState,
    rec_mask: Option<Var>,
) -> Result<(CellState, GateTrace), TensorError> {
    let h = p.hidden;
    let h_in = match rec_mask {
        Some(m) => g.mul(state.h, m)?,
        None => state.h,
    };
    let u = g.param(p.recurrent_weights);
    match p.kind {
        CellKind::Lstm => {
            let hu = g.matmul(h_in, u)?;
            let pre = g.add(xw, hu)?;
            let i = g.slice_cols(pre, 0, h)?;
            let f = g.slice_cols(pre, h, h)?;
            let o = g.slice_cols(pre, 2 * h, h)?;
            let cand = g.slice_cols(pre, 3 * h, h)?;
            let i = g.sigmoid(i)?;
            let f = g.sigmoid(f)?;
            let o = g.sigmoid(o)?;
            let cand = g.tanh(cand)?;
            let keep = g.mul(f, state.c.expect("lstm state"))?;
            let write = g.mul(i, cand)?;
            let c = g.add(keep, write)?;
            let tc = g.tanh(c)?;
            let h_new = g.mul(o, tc)?;
            Ok((
                CellState { h: h_new, c: Some(c) },
                GateTrace { input: Some(i), forget: Some(f), output: Some(o) },
            ))
        }
        CellKind::CifLstm => {
            let hu = g.matmul(h_in, u)?;
            let pre = g.add(xw, hu)?;
            let i = g.slice_cols(pre, 0, h)?;
            let o = g.slice_cols(pre, h, h)?;
            let cand = g.slice_cols(pre, 2 * h, h)?;
            let i = g.sigmoid(i)?;
            let o = g.sigmoid(o)?;
            let f = g.one_minus(i)?;
            let keep = g.mul(f, state.c.expect("cif-lstm state"))?;
            let write = g.mul(i, cand)?;
            let c = g.add(keep, write)?;
            let tc = g.tanh(c)?;
            let h_new = g.mul(o, tc)?;
            Ok((
                CellState { h: h_new, c: Some(c) },
                GateTrace { input: Some(i), forget: Some(f), output: Some(o) },
            ))
        }
        CellKind::Gru => {
            let hu = g.matmul(h_in, u)?;
            let x_gates = g.slice_cols(xw, 0, 2 * h)?;
            let x_cand = g.slice_cols(xw, 2 * h, h)?;
            let gates = g.add(x_gates, hu)?;
            let gates = g.sigmoid(gates)?;
            let z = g.slice_cols(gates, 0, h)?;
            let r = g.slice_cols(gates, h, h)?;
            let reset = g.mul(r, h_in)?;
            let uc = g.param(p.candidate_recurrent.expect("gru candidate weights"));
            let hc = g.matmul(reset, uc)?;
            let cand = g.add(x_cand, hc)?;
            let cand = g.tanh(cand)?;
            let one_minus_z = g.one_minus(z)?;
            let new_part = g.mul(one_minus_z, cand)?;
            let old_part = g.mul(z, state.h)?;
            let h_new = g.add(new_part, old_part)?;
            Ok((CellState { h: h_new, c: None }, GateTrace { input: Some(z), ..Default::default() }))
        }
    }
}

/// Stack of bidirectional layers.
#[derive(Clone, Debug)]
pub struct RecurrentStack {
    pub kind: CellKind,
    pub hidden: usize,
    pub layers: Vec<[CellParams; 2]>,
}

impl RecurrentStack {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        kind: CellKind,
        input_dim: usize,
        hidden: usize,
        depth: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..depth)
            .map(|l| {
                let d_in = if l == 0 { input_dim } else { 2 * hidden };
                [
                    CellParams::new(store, &format!("rnn.{l}.fw"), kind, d_in, hidden, rng),
                    CellParams::new(store, &format!("rnn.{l}.bw"), kind, d_in, hidden, rng),
                ]
            })
            .collect();
        RecurrentStack { kind, hidden, layers }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn weight_count(&self) -> usize {
        self.layers.iter().flatten().map(CellParams::weight_count).sum()
    }

    /// Encodes `x` (`(n+1) × input_dim`, root first) into `(n+1) × 2h`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        masks: Option<&VariationalMasks<T>>,
    ) -> Result<Var, TensorError> {
        let mut input = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let fw = run_direction(g, &layer[0], input, masks.map(|m| &m.layers[l][0]), false)?;
            let bw = run_direction(g, &layer[1], input, masks.map(|m| &m.layers[l][1]), true)?;
            input = g.concat_cols(&[fw, bw])?;
        }
        Ok(input)
    }
}

fn run_direction<T: Scalar>(
    g: &mut Graph<'_, T>,
    p: &CellParams,
    x: Var,
    masks: Option<&DirectionMasks<T>>,
    reverse: bool,
) -> Result<Var, TensorError> {
    let steps = g.value(x).rows();
    let (x, rec_mask) = match masks {
        Some(m) => {
            let mut tiled = Tensor::zeros(&[steps, m.input.len()]);
            for r in 0..steps {
                tiled.data_mut()[r * m.input.len()..(r + 1) * m.input.len()].copy_from_slice(&m.input);
            }
            let tiled = g.constant(tiled)?;
            let rec = g.constant(Tensor::matrix(1, m.recurrent.len(), m.recurrent.clone())?)?;
            (g.mul(x, tiled)?, Some(rec))
        }
        None => (x, None),
    };
    let w = g.param(p.input_weights);
    let b = g.param(p.bias);
    let xw = g.matmul(x, w)?;
    let xw = g.add_bias(xw, b)?;
    let mut state = p.initial_state(g);
    let mut outputs = Vec::with_capacity(steps);
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let row = g.row(xw, t)?;
        state = step_projected(g, p, row, state, rec_mask)?.0;
        outputs.push(state.h);
    }
    if reverse {
        outputs.reverse();
    }
    g.concat_rows(&outputs)
}

/// Dropout masks of one direction of one layer. Entries are `0` or `1/(1-p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionMasks<T> {
    pub input: Vec<T>,
    pub recurrent: Vec<T>,
}

/// Per-sentence masks, reused at every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationalMasks<T> {
    pub layers: Vec<[DirectionMasks<T>; 2]>,
}

/// Inverted-dropout mask of `len` entries.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<T> {
    if rate == 0.0 {
        return vec![T::one(); len];
    }
    let keep = T::of(1.0 / (1.0 - rate));
    (0..len).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect()
}

pub(crate) fn check_rate(key: &str, rate: f64) -> Result<(), ConfigError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ConfigError::Invalid {
            key: key.to_string(),
            message: format!("dropout rate {rate} must lie in [0, 1)"),
        });
    }
    Ok(())
}

pub fn sample_variational_masks<T: Scalar>(
    stack: &RecurrentStack,
    rate: f64,
    rng: &mut impl Rng,
) -> Result<VariationalMasks<T>, ConfigError> {
    check_rate("lstm_dropout", rate)?;
    let layers = stack
        .layers
        .iter()
        .map(|layer| {
            let mut sample = |p: &CellParams| DirectionMasks {
                input: dropout_mask(p.input_dim, rate, rng),
                recurrent: dropout_mask(p.hidden, rate, rng),
            };
            [sample(&layer[0]), sample(&layer[1])]
        })
        .collect();
    Ok(VariationalMasks { layers })
}
