//! Single-step neuron updates: LIF / RLIF membranes, spiking and plain LSTM
//! cells, the Heaviside spike and its arctan surrogate.
//!
//! States are batched: every state matrix is `[batch × units]`, so a single
//! sample is simply a one-row state. Weight matrices carry their bias in row
//! 0 (a constant-1 input channel) followed by one row per input feature.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{kernels, vmath, Matrix};

/// How the spike nonlinearity behaves in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientMode {
    /// Heaviside spikes forward, arctan surrogate derivative backward.
    #[default]
    Surrogate,
    /// `½ + arctan(πx)/π` forward as well, which makes the whole network
    /// differentiable. Only meant for finite-difference gradient checks.
    Smooth,
}

/// Source of the recurrent term of RLIF / SLSTM layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recurrence {
    /// `V` multiplies the preceding layer's output from the previous step.
    #[default]
    PaperLiteral,
    /// `V` multiplies this layer's own output from the previous step.
    #[serde(rename = "self")]
    SelfFeedback,
}

pub fn surrogate(x: f64) -> f64 {
    (PI * x).atan() / PI
}

pub fn surrogate_grad(x: f64) -> f64 {
    let px = PI * x;
    1.0 / (1.0 + px * px)
}

/// Output of the spike nonlinearity for `x = U − U_thr`.
#[inline]
pub fn fire(x: f64, mode: GradientMode) -> f64 {
    match mode {
        GradientMode::Surrogate => {
            if x >= 0.0 {
                1.0
            } else {
                0.0
            }
        }
        GradientMode::Smooth => 0.5 + surrogate(x),
    }
}

/// 1 where `membrane ≥ threshold`, elementwise.
pub fn spike_activation(membrane: &[f64], threshold: &[f64]) -> Result<Vec<f64>> {
    if membrane.len() != threshold.len() {
        return Err(Error::shape(
            "spike_activation",
            membrane.len(),
            threshold.len(),
        ));
    }
    Ok(membrane
        .iter()
        .zip(threshold)
        .map(|(u, t)| fire(u - t, GradientMode::Surrogate))
        .collect())
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    vmath::sigmoid(x)
}

/// `out[rows × out] = bias + x[rows × in] · W[1..]`, with `W` laid out as
/// `(in + 1) × out`. With `sparse` the zero entries of `x` are skipped.
pub(crate) fn affine_into(x: &[f64], rows: usize, w: &Matrix, out: &mut [f64], sparse: bool) {
    let n_in = w.rows() - 1;
    let n_out = w.cols();
    let bias = w.row(0);
    for r in 0..rows {
        out[r * n_out..(r + 1) * n_out].copy_from_slice(bias);
    }
    let body = w.rows_slice(1, w.rows());
    if sparse {
        kernels::gemm_sparse_a(x, body, out, rows, n_in, n_out);
    } else {
        kernels::gemm(x, body, out, rows, n_in, n_out);
    }
}

/// `out += x · V` for a bias-free recurrent matrix.
pub(crate) fn recurrent_into(x: &[f64], rows: usize, v: &Matrix, out: &mut [f64], sparse: bool) {
    if sparse {
        kernels::gemm_sparse_a(x, v.data(), out, rows, v.rows(), v.cols());
    } else {
        kernels::gemm(x, v.data(), out, rows, v.rows(), v.cols());
    }
}

fn check_cols(op: &'static str, m: &Matrix, cols: usize) -> Result<()> {
    if m.cols() != cols {
        return Err(Error::shape(op, format!("{cols} columns"), m.cols()));
    }
    Ok(())
}

fn check_rows(op: &'static str, m: &Matrix, rows: usize) -> Result<()> {
    if m.rows() != rows {
        return Err(Error::shape(op, format!("{rows} rows"), m.rows()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifState {
    pub membrane: Matrix,
    pub spikes: Matrix,
}

impl LifState {
    pub fn zeros(batch: usize, units: usize) -> Self {
        Self {
            membrane: Matrix::zeros(batch, units),
            spikes: Matrix::zeros(batch, units),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LifParams {
    /// `(inputs + 1) × units`, bias in row 0.
    pub weights: Matrix,
    /// `inputs × units` (paper-literal) or `units × units` (self feedback).
    pub rec_weights: Option<Matrix>,
    pub recurrence: Recurrence,
    /// `1 × units`, each in `(0, 1]`.
    pub decay: Matrix,
    /// `1 × units`, each positive.
    pub threshold: Matrix,
}

impl LifParams {
    pub fn units(&self) -> usize {
        self.weights.cols()
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows() - 1
    }

    fn validate(&self) -> Result<()> {
        let n = self.units();
        check_cols("lif params: decay", &self.decay, n)?;
        check_cols("lif params: threshold", &self.threshold, n)?;
        if let Some(v) = &self.rec_weights {
            check_cols("lif params: recurrent weights", v, n)?;
            let rows = match self.recurrence {
                Recurrence::PaperLiteral => self.inputs(),
                Recurrence::SelfFeedback => n,
            };
            check_rows("lif params: recurrent weights", v, rows)?;
        }
        Ok(())
    }
}

/// Membrane update shared by the step API and the unrolled network.
#[inline]
pub(crate) fn lif_membrane(beta: f64, u_prev: f64, drive: f64, s_prev: f64, thr: f64) -> f64 {
    beta * u_prev + drive - s_prev * thr
}

/// One LIF / RLIF step:
/// `U_t = β⊙U_{t−1} + W·x_t [+ V·x_{t−1}] − s_{t−1}⊙U_thr`, `s_t = H(U_t − U_thr)`.
///
/// `prev_input` is the preceding layer's output at `t − 1`; it is only read
/// for paper-literal recurrence (and may be `None` at `t = 0`).
pub fn lif_step(
    state: &LifState,
    input: &Matrix,
    params: &LifParams,
    prev_input: Option<&Matrix>,
) -> Result<LifState> {
    lif_step_with(state, input, params, prev_input, GradientMode::Surrogate)
}

pub fn lif_step_with(
    state: &LifState,
    input: &Matrix,
    params: &LifParams,
    prev_input: Option<&Matrix>,
    mode: GradientMode,
) -> Result<LifState> {
    params.validate()?;
    let (batch, n) = (input.rows(), params.units());
    check_cols("lif_step: input", input, params.inputs())?;
    check_rows("lif_step: membrane", &state.membrane, batch)?;
    check_cols("lif_step: membrane", &state.membrane, n)?;
    check_rows("lif_step: spikes", &state.spikes, batch)?;
    check_cols("lif_step: spikes", &state.spikes, n)?;

    let mut drive = Matrix::zeros(batch, n);
    affine_into(
        input.data(),
        batch,
        &params.weights,
        drive.data_mut(),
        false,
    );
    if let Some(v) = &params.rec_weights {
        match params.recurrence {
            Recurrence::PaperLiteral => {
                if let Some(prev) = prev_input {
                    if prev.shape() != input.shape() {
                        return Err(Error::shape(
                            "lif_step: prev_input",
                            format!("{:?}", input.shape()),
                            format!("{:?}", prev.shape()),
                        ));
                    }
                    recurrent_into(prev.data(), batch, v, drive.data_mut(), false);
                }
            }
            Recurrence::SelfFeedback => {
                recurrent_into(state.spikes.data(), batch, v, drive.data_mut(), true);
            }
        }
    }

    let beta = params.decay.data();
    let thr = params.threshold.data();
    let mut next = LifState::zeros(batch, n);
    for b in 0..batch {
        for j in 0..n {
            let idx = b * n + j;
            let u = lif_membrane(
                beta[j],
                state.membrane.data()[idx],
                drive.data()[idx],
                state.spikes.data()[idx],
                thr[j],
            );
            next.membrane.data_mut()[idx] = u;
            next.spikes.data_mut()[idx] = fire(u - thr[j], mode);
        }
    }
    Ok(next)
}

/// Gate block order inside the fused LSTM weight matrices.
pub const GATE_FORGET: usize = 0;
pub const GATE_INPUT: usize = 1;
pub const GATE_OUTPUT: usize = 2;
pub const GATE_CELL: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct SlstmState {
    pub cell: Matrix,
    /// Doubles as the membrane potential.
    pub hidden: Matrix,
    pub spikes: Matrix,
}

impl SlstmState {
    pub fn zeros(batch: usize, units: usize) -> Self {
        Self {
            cell: Matrix::zeros(batch, units),
            hidden: Matrix::zeros(batch, units),
            spikes: Matrix::zeros(batch, units),
        }
    }
}

/// Fused gate weights. Columns hold four blocks of `units` in the order
/// forget, input, output, cell candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct SlstmParams {
    /// `(inputs + 1) × 4·units`, bias in row 0.
    pub weights: Matrix,
    /// `inputs × 4·units` (paper-literal) or `units × 4·units` (self feedback).
    pub rec_weights: Matrix,
    pub recurrence: Recurrence,
    /// `1 × units`. Unused by the non-spiking LSTM.
    pub threshold: Matrix,
}

impl SlstmParams {
    pub fn units(&self) -> usize {
        self.weights.cols() / 4
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows() - 1
    }

    /// Assembles fused parameters from per-gate `(W, V)` pairs.
    pub fn from_gates(
        forget: (&Matrix, &Matrix),
        input: (&Matrix, &Matrix),
        output: (&Matrix, &Matrix),
        cell: (&Matrix, &Matrix),
        threshold: Matrix,
        recurrence: Recurrence,
    ) -> Result<Self> {
        let gates = [forget, input, output, cell];
        let n = forget.0.cols();
        let (wr, vr) = (forget.0.rows(), forget.1.rows());
        for (w, v) in gates {
            if w.shape() != (wr, n) || v.shape() != (vr, n) {
                return Err(Error::shape(
                    "SlstmParams::from_gates",
                    "equal gate shapes",
                    "mismatched gates",
                ));
            }
        }
        let fuse = |parts: [&Matrix; 4]| {
            let rows = parts[0].rows();
            let mut m = Matrix::zeros(rows, 4 * n);
            for (g, src) in parts.iter().enumerate() {
                for r in 0..rows {
                    m.row_mut(r)[g * n..(g + 1) * n].copy_from_slice(src.row(r));
                }
            }
            m
        };
        let weights = fuse(gates.map(|g| g.0));
        let rec_weights = fuse(gates.map(|g| g.1));
        let p = Self {
            weights,
            rec_weights,
            recurrence,
            threshold,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        let n = self.units();
        if self.weights.cols() != 4 * n {
            return Err(Error::shape(
                "slstm params: weights",
                "4·units columns",
                self.weights.cols(),
            ));
        }
        check_cols("slstm params: recurrent weights", &self.rec_weights, 4 * n)?;
        let rows = match self.recurrence {
            Recurrence::PaperLiteral => self.inputs(),
            Recurrence::SelfFeedback => n,
        };
        check_rows("slstm params: recurrent weights", &self.rec_weights, rows)?;
        check_cols("slstm params: threshold", &self.threshold, n)
    }
}

/// Post-activation gates for one unit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Gates {
    pub forget: f64,
    pub input: f64,
    pub output: f64,
    pub cand: f64,
}

#[inline]
pub(crate) fn activate_gates(z: &[f64], n: usize, j: usize) -> Gates {
    Gates {
        forget: sigmoid(z[GATE_FORGET * n + j]),
        input: sigmoid(z[GATE_INPUT * n + j]),
        output: sigmoid(z[GATE_OUTPUT * n + j]),
        cand: vmath::tanh(z[GATE_CELL * n + j]),
    }
}

fn gate_preactivations(
    input: &Matrix,
    params: &SlstmParams,
    prev_input: Option<&Matrix>,
    own_prev: &Matrix,
    own_sparse: bool,
) -> Result<Matrix> {
    let batch = input.rows();
    check_cols("lstm step: input", input, params.inputs())?;
    let mut z = Matrix::zeros(batch, 4 * params.units());
    affine_into(input.data(), batch, &params.weights, z.data_mut(), false);
    match params.recurrence {
        Recurrence::PaperLiteral => {
            if let Some(prev) = prev_input {
                if prev.shape() != input.shape() {
                    return Err(Error::shape(
                        "lstm step: prev_input",
                        format!("{:?}", input.shape()),
                        format!("{:?}", prev.shape()),
                    ));
                }
                recurrent_into(prev.data(), batch, &params.rec_weights, z.data_mut(), false);
            }
        }
        Recurrence::SelfFeedback => {
            recurrent_into(
                own_prev.data(),
                batch,
                &params.rec_weights,
                z.data_mut(),
                own_sparse,
            );
        }
    }
    Ok(z)
}

/// One spiking-LSTM step. The hidden output acts as membrane potential:
/// `h_t = o⊙tanh(c_t) − s_{t−1}⊙U_thr`, `s_t = H(h_t − U_thr)`.
pub fn slstm_step(
    state: &SlstmState,
    prev_layer_t: &Matrix,
    params: &SlstmParams,
    prev_layer_prev_t: Option<&Matrix>,
) -> Result<SlstmState> {
    slstm_step_with(
        state,
        prev_layer_t,
        params,
        prev_layer_prev_t,
        GradientMode::Surrogate,
    )
}

pub fn slstm_step_with(
    state: &SlstmState,
    prev_layer_t: &Matrix,
    params: &SlstmParams,
    prev_layer_prev_t: Option<&Matrix>,
    mode: GradientMode,
) -> Result<SlstmState> {
    params.validate()?;
    let (batch, n) = (prev_layer_t.rows(), params.units());
    for (name, m) in [
        ("cell", &state.cell),
        ("hidden", &state.hidden),
        ("spikes", &state.spikes),
    ] {
        if m.shape() != (batch, n) {
            return Err(Error::shape(
                "slstm_step: state",
                format!("{batch}x{n}"),
                format!("{name} {:?}", m.shape()),
            ));
        }
    }
    let z = gate_preactivations(prev_layer_t, params, prev_layer_prev_t, &state.spikes, true)?;
    let thr = params.threshold.data();
    let mut next = SlstmState::zeros(batch, n);
    for b in 0..batch {
        let zrow = z.row(b);
        for j in 0..n {
            let idx = b * n + j;
            let g = activate_gates(zrow, n, j);
            let c = g.forget * state.cell.data()[idx] + g.input * g.cand;
            let h = g.output * vmath::tanh(c) - state.spikes.data()[idx] * thr[j];
            next.cell.data_mut()[idx] = c;
            next.hidden.data_mut()[idx] = h;
            next.spikes.data_mut()[idx] = fire(h - thr[j], mode);
        }
    }
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub cell: Matrix,
    pub hidden: Matrix,
}

impl LstmState {
    pub fn zeros(batch: usize, units: usize) -> Self {
        Self {
            cell: Matrix::zeros(batch, units),
            hidden: Matrix::zeros(batch, units),
        }
    }
}

/// Conventional LSTM step (no spikes, reset or threshold), used by the
/// non-spiking baseline.
pub fn lstm_step(
    state: &LstmState,
    prev_layer_t: &Matrix,
    params: &SlstmParams,
    prev_layer_prev_t: Option<&Matrix>,
) -> Result<LstmState> {
    params.validate()?;
    let (batch, n) = (prev_layer_t.rows(), params.units());
    let z = gate_preactivations(
        prev_layer_t,
        params,
        prev_layer_prev_t,
        &state.hidden,
        false,
    )?;
    let mut next = LstmState::zeros(batch, n);
    for b in 0..batch {
        let zrow = z.row(b);
        for j in 0..n {
            let idx = b * n + j;
            let g = activate_gates(zrow, n, j);
            let c = g.forget * state.cell.data()[idx] + g.input * g.cand;
            next.cell.data_mut()[idx] = c;
            next.hidden.data_mut()[idx] = g.output * vmath::tanh(c);
        }
    }
    Ok(next)
}
