//! Unrolled forward pass.
//!
//! Layers are evaluated one at a time over the whole sequence. For
//! feed-forward stacks this is equivalent to stepping all layers in time
//! lockstep, and it lets every input projection `W·x_t` (and the
//! paper-literal recurrent projection `V·x_{t−1}`) run as one large product
//! over all `steps·batch` rows. Only self-feedback recurrence needs a
//! product inside the time loop.

use crate::codec::decoder_membrane;
use crate::error::{Error, Result};
use crate::linalg::{vmath, Matrix};
use crate::neuron::{
    affine_into, fire, lif_membrane, recurrent_into, GradientMode, LifParams, Recurrence,
    SlstmParams,
};

use super::params::{LayerParams, NetworkParams};
use super::sequence::StateSequence;
use super::spec::{Activation, LayerKind, NetworkSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ForwardOptions {
    pub mode: GradientMode,
    /// Keep every layer's internal state for BPTT and profiling.
    pub record: bool,
}

impl ForwardOptions {
    pub fn recorded(mode: GradientMode) -> Self {
        Self { mode, record: true }
    }
}

/// Internal state of one layer over all steps; every matrix is
/// `(steps·batch) × units` in time-major row order.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerTrace {
    Input {
        x: Matrix,
    },
    Lif {
        membrane: Matrix,
        spikes: Matrix,
    },
    Slstm {
        /// Post-activation gates, four blocks of `units` (forget, input,
        /// output, candidate).
        gates: Matrix,
        cell: Matrix,
        tanh_cell: Matrix,
        hidden: Matrix,
        spikes: Matrix,
    },
    Lstm {
        gates: Matrix,
        cell: Matrix,
        tanh_cell: Matrix,
        hidden: Matrix,
    },
    Dense {
        out: Matrix,
    },
    Decoder {
        membrane: Matrix,
    },
    Population {
        out: Matrix,
    },
}

impl LayerTrace {
    /// What the layer passes to the next one.
    pub fn output(&self) -> &Matrix {
        match self {
            LayerTrace::Input { x } => x,
            LayerTrace::Lif { spikes, .. } | LayerTrace::Slstm { spikes, .. } => spikes,
            LayerTrace::Lstm { hidden, .. } => hidden,
            LayerTrace::Dense { out } | LayerTrace::Population { out } => out,
            LayerTrace::Decoder { membrane } => membrane,
        }
    }

    pub fn spikes(&self) -> Option<&Matrix> {
        match self {
            LayerTrace::Lif { spikes, .. } | LayerTrace::Slstm { spikes, .. } => Some(spikes),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardRecord {
    pub steps: usize,
    pub batch: usize,
    pub mode: GradientMode,
    /// One trace per layer when recorded, otherwise empty.
    pub traces: Vec<LayerTrace>,
    /// `[steps × batch × output_features]`
    pub output: StateSequence,
}

impl ForwardRecord {
    pub fn is_recorded(&self) -> bool {
        !self.traces.is_empty()
    }
}

/// Runs the network over a `[steps × batch × input_features]` sequence.
pub fn forward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    input: &StateSequence,
    opts: ForwardOptions,
) -> Result<ForwardRecord> {
    spec.validate()?;
    if params.layers.len() != spec.layers.len() {
        return Err(Error::shape(
            "forward: parameters",
            spec.layers.len(),
            params.layers.len(),
        ));
    }
    if input.steps() != spec.steps || input.units() != spec.input_features {
        return Err(Error::shape(
            "forward: input",
            format!("{} steps x {} features", spec.steps, spec.input_features),
            format!("{} steps x {} features", input.steps(), input.units()),
        ));
    }
    if input.batch() == 0 {
        return Err(Error::Empty("forward needs at least one sample"));
    }
    if !input.values().all_finite() {
        return Err(Error::Divergence("non-finite network input".into()));
    }
    let (steps, batch) = (input.steps(), input.batch());
    let mut traces = Vec::with_capacity(spec.layers.len());
    let mut current = LayerTrace::Input {
        x: input.values().clone(),
    };

    for i in 1..spec.layers.len() {
        let kind = spec.layers[i].kind;
        let ctx = Ctx {
            steps,
            batch,
            mode: opts.mode,
            sparse_in: spec.layers[i - 1].kind.is_spiking() && opts.mode == GradientMode::Surrogate,
        };
        let x = current.output();
        let next = match (&params.layers[i], kind) {
            (LayerParams::Lif(p), LayerKind::Lif | LayerKind::Rlif) => lif_layer(&ctx, x, p),
            (LayerParams::Slstm(p), LayerKind::Slstm) => slstm_layer(&ctx, x, p, true),
            (LayerParams::Lstm(p), LayerKind::Lstm) => slstm_layer(&ctx, x, p, false),
            (LayerParams::Dense(w), LayerKind::Dense { activation }) => {
                dense_layer(&ctx, x, w, activation)
            }
            (LayerParams::Decoder(p), LayerKind::Decoder) => {
                let mut u = Matrix::zeros(steps * batch, p.weights.cols());
                affine_into(
                    x.data(),
                    steps * batch,
                    &p.weights,
                    u.data_mut(),
                    ctx.sparse_in,
                );
                integrate(&ctx, &mut u, p.decay.data());
                LayerTrace::Decoder { membrane: u }
            }
            (LayerParams::Population, LayerKind::Population) => LayerTrace::Population {
                out: population_layer(x, spec.layers[i].width),
            },
            _ => {
                return Err(Error::shape(
                    "forward: parameters",
                    kind.label(),
                    "different layer kind",
                ))
            }
        };
        if !next.output().all_finite() {
            return Err(Error::Divergence(format!(
                "non-finite output in layer {i} ({})",
                kind.label()
            )));
        }
        let prev = std::mem::replace(&mut current, next);
        if opts.record {
            traces.push(prev);
        }
    }

    let output = StateSequence::from_matrix(steps, batch, current.output().clone())?;
    if opts.record {
        traces.push(current);
    }
    Ok(ForwardRecord {
        steps,
        batch,
        mode: opts.mode,
        traces,
        output,
    })
}

struct Ctx {
    steps: usize,
    batch: usize,
    mode: GradientMode,
    sparse_in: bool,
}

impl Ctx {
    fn rows(&self) -> usize {
        self.steps * self.batch
    }
}

/// Input projection for all steps, plus the paper-literal recurrent term.
fn projected(
    ctx: &Ctx,
    x: &Matrix,
    w: &Matrix,
    v: Option<&Matrix>,
    recurrence: Recurrence,
) -> Matrix {
    let mut z = Matrix::zeros(ctx.rows(), w.cols());
    affine_into(x.data(), ctx.rows(), w, z.data_mut(), ctx.sparse_in);
    if let (Some(v), Recurrence::PaperLiteral) = (v, recurrence) {
        let shifted = (ctx.steps - 1) * ctx.batch;
        recurrent_into(
            x.rows_slice(0, shifted),
            shifted,
            v,
            z.rows_slice_mut(ctx.batch, ctx.rows()),
            ctx.sparse_in,
        );
    }
    z
}

fn lif_layer(ctx: &Ctx, x: &Matrix, p: &LifParams) -> LayerTrace {
    let n = p.units();
    let (b_sz, beta, thr) = (ctx.batch, p.decay.data(), p.threshold.data());
    let self_rec = match (&p.rec_weights, p.recurrence) {
        (Some(v), Recurrence::SelfFeedback) => Some(v),
        _ => None,
    };
    // The drive is overwritten in place by the membrane potential.
    let mut u = projected(ctx, x, &p.weights, p.rec_weights.as_ref(), p.recurrence);
    let mut s = Matrix::zeros(ctx.rows(), n);
    for t in 0..ctx.steps {
        if let (Some(v), true) = (self_rec, t > 0) {
            let prev = s.rows_slice((t - 1) * b_sz, t * b_sz);
            recurrent_into(
                prev,
                b_sz,
                v,
                u.rows_slice_mut(t * b_sz, (t + 1) * b_sz),
                ctx.mode == GradientMode::Surrogate,
            );
        }
        for b in 0..b_sz {
            let row = t * b_sz + b;
            for j in 0..n {
                let (u_prev, s_prev) = if t == 0 {
                    (0.0, 0.0)
                } else {
                    let r = (row - b_sz) * n + j;
                    (u.data()[r], s.data()[r])
                };
                let idx = row * n + j;
                let val = lif_membrane(beta[j], u_prev, u.data()[idx], s_prev, thr[j]);
                u.data_mut()[idx] = val;
                s.data_mut()[idx] = fire(val - thr[j], ctx.mode);
            }
        }
    }
    LayerTrace::Lif {
        membrane: u,
        spikes: s,
    }
}

fn slstm_layer(ctx: &Ctx, x: &Matrix, p: &SlstmParams, spiking: bool) -> LayerTrace {
    let n = p.units();
    let b_sz = ctx.batch;
    let thr = p.threshold.data();
    let mut gates = Matrix::zeros(ctx.rows(), 4 * n);
    let mut cell = Matrix::zeros(ctx.rows(), n);
    let mut tanh_cell = Matrix::zeros(ctx.rows(), n);
    let mut hidden = Matrix::zeros(ctx.rows(), n);
    let mut spikes = Matrix::zeros(if spiking { ctx.rows() } else { 0 }, n);

    for t in 0..ctx.steps {
        // Projected step by step so the gate rows stay in cache.
        let (lo, hi) = (t * b_sz, (t + 1) * b_sz);
        affine_into(
            x.rows_slice(lo, hi),
            b_sz,
            &p.weights,
            gates.rows_slice_mut(lo, hi),
            ctx.sparse_in,
        );
        if p.recurrence == Recurrence::PaperLiteral && t > 0 {
            recurrent_into(
                x.rows_slice(lo - b_sz, lo),
                b_sz,
                &p.rec_weights,
                gates.rows_slice_mut(lo, hi),
                ctx.sparse_in,
            );
        }
        if p.recurrence == Recurrence::SelfFeedback && t > 0 {
            let own = if spiking { &spikes } else { &hidden };
            let prev = own.rows_slice((t - 1) * b_sz, t * b_sz);
            let sparse = spiking && ctx.mode == GradientMode::Surrogate;
            recurrent_into(
                prev,
                b_sz,
                &p.rec_weights,
                gates.rows_slice_mut(t * b_sz, (t + 1) * b_sz),
                sparse,
            );
        }
        for grow in gates.rows_slice_mut(lo, hi).chunks_exact_mut(4 * n) {
            vmath::sigmoid_in_place(&mut grow[..3 * n]);
            vmath::tanh_in_place(&mut grow[3 * n..]);
        }
        {
            let (done, rest) = cell.data_mut().split_at_mut(lo * n);
            let cur = &mut rest[..b_sz * n];
            let prev = if t == 0 {
                None
            } else {
                Some(&done[(lo - b_sz) * n..])
            };
            for (b, crow) in cur.chunks_exact_mut(n).enumerate() {
                let g = gates.row(lo + b);
                for j in 0..n {
                    let c_prev = prev.map_or(0.0, |p| p[b * n + j]);
                    crow[j] = g[j] * c_prev + g[n + j] * g[3 * n + j];
                }
            }
        }
        let m_rows = tanh_cell.rows_slice_mut(lo, hi);
        m_rows.copy_from_slice(cell.rows_slice(lo, hi));
        vmath::tanh_in_place(m_rows);
        for b in 0..b_sz {
            let row = lo + b;
            let o = &gates.row(row)[2 * n..3 * n];
            let m = tanh_cell.row(row);
            let h = hidden.row_mut(row);
            for j in 0..n {
                h[j] = o[j] * m[j];
            }
            if spiking {
                if t > 0 {
                    let s_prev = spikes.row(row - b_sz);
                    for j in 0..n {
                        h[j] -= s_prev[j] * thr[j];
                    }
                }
                let h = hidden.row(row);
                let s = spikes.row_mut(row);
                for j in 0..n {
                    s[j] = fire(h[j] - thr[j], ctx.mode);
                }
            }
        }
    }
    if spiking {
        LayerTrace::Slstm {
            gates,
            cell,
            tanh_cell,
            hidden,
            spikes,
        }
    } else {
        LayerTrace::Lstm {
            gates,
            cell,
            tanh_cell,
            hidden,
        }
    }
}

fn dense_layer(ctx: &Ctx, x: &Matrix, w: &Matrix, activation: Activation) -> LayerTrace {
    let mut out = Matrix::zeros(ctx.rows(), w.cols());
    affine_into(x.data(), ctx.rows(), w, out.data_mut(), ctx.sparse_in);
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = activation.apply(*v));
    LayerTrace::Dense { out }
}

/// Leaky integration in place: `u_t = β⊙u_{t−1} + drive_t`.
fn integrate(ctx: &Ctx, u: &mut Matrix, beta: &[f64]) {
    let n = u.cols();
    let stride = ctx.batch * n;
    for t in 1..ctx.steps {
        let (done, rest) = u.data_mut().split_at_mut(t * stride);
        let prev = &done[(t - 1) * stride..];
        for (k, cur) in rest[..stride].iter_mut().enumerate() {
            *cur = decoder_membrane(beta[k % n], prev[k], *cur);
        }
    }
}

fn population_layer(x: &Matrix, outputs: usize) -> Matrix {
    let size = x.cols() / outputs;
    let mut out = Matrix::zeros(x.rows(), outputs);
    for r in 0..x.rows() {
        for (k, chunk) in x.row(r).chunks(size).enumerate() {
            out.set(r, k, chunk.iter().sum::<f64>() / size as f64);
        }
    }
    out
}

/// One dense layer step: `φ(b + W·x)`.
pub fn dense_step(input: &Matrix, weights: &Matrix, activation: Activation) -> Result<Matrix> {
    if input.cols() + 1 != weights.rows() {
        return Err(Error::shape("dense_step", weights.rows() - 1, input.cols()));
    }
    let mut out = Matrix::zeros(input.rows(), weights.cols());
    affine_into(input.data(), input.rows(), weights, out.data_mut(), false);
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = activation.apply(*v));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{decode_step, population_vote_all, DecoderState};
    use crate::linalg::SeededRng;
    use crate::network::Preset;
    use crate::neuron::{lif_step, lstm_step, slstm_step, LifState, LstmState, SlstmState};

    fn random_input(spec: &NetworkSpec, batch: usize, seed: u64) -> StateSequence {
        let mut rng = SeededRng::new(seed);
        let m = Matrix::uniform(spec.steps * batch, spec.input_features, 2.0, &mut rng).unwrap();
        StateSequence::from_matrix(spec.steps, batch, m).unwrap()
    }

    fn run(spec: &NetworkSpec, params: &NetworkParams, x: &StateSequence) -> ForwardRecord {
        forward(
            spec,
            params,
            x,
            ForwardOptions::recorded(GradientMode::Surrogate),
        )
        .unwrap()
    }

    /// Steps every layer in time lockstep with the single-step API.
    fn stepwise(spec: &NetworkSpec, params: &NetworkParams, x: &StateSequence) -> Matrix {
        let (steps, batch) = (x.steps(), x.batch());
        let step_matrix = |seq: &[Matrix], t: usize| seq[t].clone();
        let mut seq: Vec<Matrix> = (0..steps)
            .map(|t| Matrix::from_vec(batch, x.units(), x.step(t).to_vec()).unwrap())
            .collect();
        for (i, l) in spec.layers.iter().enumerate().skip(1) {
            let mut out = Vec::with_capacity(steps);
            match &params.layers[i] {
                LayerParams::Lif(p) => {
                    let mut s = LifState::zeros(batch, l.width);
                    for t in 0..steps {
                        let prev = (t > 0).then(|| step_matrix(&seq, t - 1));
                        s = lif_step(&s, &seq[t], p, prev.as_ref()).unwrap();
                        out.push(s.spikes.clone());
                    }
                }
                LayerParams::Slstm(p) => {
                    let mut s = SlstmState::zeros(batch, l.width);
                    for t in 0..steps {
                        let prev = (t > 0).then(|| step_matrix(&seq, t - 1));
                        s = slstm_step(&s, &seq[t], p, prev.as_ref()).unwrap();
                        out.push(s.spikes.clone());
                    }
                }
                LayerParams::Lstm(p) => {
                    let mut s = LstmState::zeros(batch, l.width);
                    for t in 0..steps {
                        let prev = (t > 0).then(|| step_matrix(&seq, t - 1));
                        s = lstm_step(&s, &seq[t], p, prev.as_ref()).unwrap();
                        out.push(s.hidden.clone());
                    }
                }
                LayerParams::Dense(w) => {
                    let LayerKind::Dense { activation } = l.kind else {
                        unreachable!()
                    };
                    out = seq
                        .iter()
                        .map(|h| dense_step(h, w, activation).unwrap())
                        .collect();
                }
                LayerParams::Decoder(p) => {
                    let mut s = DecoderState::zeros(batch, l.width);
                    for h in &seq {
                        s = decode_step(&s, h, p).unwrap();
                        out.push(s.membrane.clone());
                    }
                }
                LayerParams::Population => {
                    for u in &seq {
                        let mut m = Matrix::zeros(batch, l.width);
                        for b in 0..batch {
                            m.row_mut(b)
                                .copy_from_slice(&population_vote_all(u.row(b), l.width).unwrap());
                        }
                        out.push(m);
                    }
                }
                LayerParams::Input => unreachable!(),
            }
            seq = out;
        }
        let cols = seq[0].cols();
        Matrix::from_vec(
            steps * batch,
            cols,
            seq.into_iter().flat_map(Matrix::into_vec).collect(),
        )
        .unwrap()
    }

    #[test]
    fn unrolled_pass_matches_stepwise_api() {
        for (k, preset) in Preset::ALL.into_iter().enumerate() {
            let spec = preset.spec(7, 6, 3);
            let params = NetworkParams::init(&spec, &mut SeededRng::new(40 + k as u64)).unwrap();
            let x = random_input(&spec, 3, 50 + k as u64);
            let rec = run(&spec, &params, &x);
            assert_eq!(
                rec.output.values(),
                &stepwise(&spec, &params, &x),
                "{preset}"
            );
        }
    }

    #[test]
    fn self_feedback_matches_stepwise_api() {
        for preset in [Preset::RoRlif, Preset::PlasticSlstm, Preset::PlasticLstm] {
            let mut spec = preset.spec(6, 5, 2);
            spec.recurrence = Recurrence::SelfFeedback;
            let mut params = NetworkParams::init(&spec, &mut SeededRng::new(3)).unwrap();
            // Large drive so that spikes actually feed back.
            for (_, t) in params.tensors_mut() {
                t.scale(3.0);
            }
            params.project();
            let x = random_input(&spec, 2, 4);
            assert_eq!(
                run(&spec, &params, &x).output.values(),
                &stepwise(&spec, &params, &x),
                "{preset}"
            );
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        for preset in Preset::ALL {
            let spec = preset.spec(5, 4, 2);
            let params = NetworkParams::init(&spec, &mut SeededRng::new(1)).unwrap();
            let mut zero = params.clone();
            for l in &mut zero.layers {
                match l {
                    LayerParams::Lif(p) => p.weights.fill(0.0),
                    LayerParams::Slstm(p) | LayerParams::Lstm(p) => {
                        p.weights.fill(0.0);
                        p.rec_weights.fill(0.0);
                    }
                    LayerParams::Dense(w) => w.fill(0.0),
                    LayerParams::Decoder(p) => p.weights.fill(0.0),
                    _ => {}
                }
            }
            let rec = run(&spec, &zero, &random_input(&spec, 3, 2));
            assert!(
                rec.output.values().data().iter().all(|&v| v == 0.0),
                "{preset}"
            );
        }
    }

    #[test]
    fn rlif_with_zero_recurrence_equals_lif() {
        let lif = Preset::ElasticLif.spec(8, 5, 3);
        let rlif = Preset::RoRlif.spec(8, 5, 3);
        let p_lif = NetworkParams::init(&lif, &mut SeededRng::new(9)).unwrap();
        let mut p_rlif = NetworkParams::init(&rlif, &mut SeededRng::new(9)).unwrap();
        for (a, b) in p_rlif.layers.iter_mut().zip(&p_lif.layers) {
            *a = b.clone();
            if let LayerParams::Lif(r) = a {
                r.rec_weights = Some(Matrix::zeros(r.inputs(), r.units()));
            }
        }
        let x = random_input(&lif, 4, 10);
        assert_eq!(run(&lif, &p_lif, &x).output, run(&rlif, &p_rlif, &x).output);
    }

    #[test]
    fn single_lif_unit_hand_trace() {
        let spec = NetworkSpec {
            input_features: 1,
            output_features: 1,
            steps: 3,
            recurrence: Recurrence::PaperLiteral,
            layers: vec![
                super::super::LayerSpec::new(LayerKind::Input, 1),
                super::super::LayerSpec::new(LayerKind::Lif, 1),
                super::super::LayerSpec::new(LayerKind::Decoder, 1),
                super::super::LayerSpec::new(LayerKind::Population, 1),
            ],
        };
        let lif = LifParams {
            weights: Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(),
            rec_weights: None,
            recurrence: Recurrence::PaperLiteral,
            decay: Matrix::row_vector(vec![0.9]),
            threshold: Matrix::row_vector(vec![1.0]),
        };
        let dec = crate::codec::DecoderParams {
            weights: Matrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(),
            decay: Matrix::row_vector(vec![0.5]),
        };
        let params = NetworkParams {
            layers: vec![
                LayerParams::Input,
                LayerParams::Lif(lif),
                LayerParams::Decoder(dec),
                LayerParams::Population,
            ],
        };
        let x = StateSequence::from_samples(&[&[0.85, 0.4, 0.0]], 3, 1).unwrap();
        let rec = run(&spec, &params, &x);
        let LayerTrace::Lif { membrane, spikes } = &rec.traces[1] else {
            panic!()
        };
        let u2 = 0.9 * 0.85 + 0.4;
        assert_eq!(membrane.data(), &[0.85, u2, 0.9 * u2 - 1.0]);
        assert_eq!(spikes.data(), &[0.0, 1.0, 0.0]);
        assert_eq!(rec.output.values().data(), &[0.0, 1.0, 0.5]);
    }

    #[test]
    fn outputs_are_causal() {
        for preset in Preset::ALL {
            let spec = preset.spec(10, 6, 2);
            let params = NetworkParams::init(&spec, &mut SeededRng::new(5)).unwrap();
            let x = random_input(&spec, 2, 6);
            let mut y = x.clone();
            for t in 6..10 {
                y.step_mut(t).iter_mut().for_each(|v| *v += 1.5);
            }
            let (a, b) = (run(&spec, &params, &x), run(&spec, &params, &y));
            for t in 0..6 {
                assert_eq!(a.output.step(t), b.output.step(t), "{preset}");
            }
        }
    }

    #[test]
    fn recorded_spikes_are_binary() {
        for preset in [Preset::ElasticLif, Preset::RoRlif, Preset::PlasticSlstm] {
            let spec = preset.spec(12, 8, 2);
            let params = NetworkParams::init(&spec, &mut SeededRng::new(8)).unwrap();
            let rec = run(&spec, &params, &random_input(&spec, 5, 7));
            assert_eq!(rec.traces.len(), spec.layers.len());
            for tr in &rec.traces {
                if let Some(s) = tr.spikes() {
                    assert_eq!(s.rows(), 12 * 5);
                    assert!(s.data().iter().all(|&v| v == 0.0 || v == 1.0));
                }
            }
        }
    }

    #[test]
    fn unrecorded_pass_keeps_no_traces() {
        let spec = Preset::ElasticLif.spec(4, 4, 2);
        let params = NetworkParams::init(&spec, &mut SeededRng::new(1)).unwrap();
        let x = random_input(&spec, 2, 1);
        let rec = forward(&spec, &params, &x, ForwardOptions::default()).unwrap();
        assert!(!rec.is_recorded());
        assert_eq!(rec.output, run(&spec, &params, &x).output);
    }

    #[test]
    fn shape_and_divergence_errors() {
        let spec = Preset::ElasticLif.spec(4, 4, 2);
        let params = NetworkParams::init(&spec, &mut SeededRng::new(1)).unwrap();
        let short = StateSequence::zeros(3, 2, 1);
        assert!(matches!(
            forward(&spec, &params, &short, ForwardOptions::default()),
            Err(Error::Shape { .. })
        ));
        let mut bad = params.clone();
        if let LayerParams::Decoder(p) = &mut bad.layers[4] {
            p.weights.data_mut()[0] = f64::INFINITY;
        }
        let x = StateSequence::zeros(4, 2, 1);
        assert!(matches!(
            forward(&spec, &bad, &x, ForwardOptions::default()),
            Err(Error::Divergence(_))
        ));
    }

    #[test]
    fn dense_step_examples() {
        let x = Matrix::from_vec(1, 3, vec![0.3, -1.0, 2.0]).unwrap();
        let mut w = Matrix::zeros(4, 3);
        for i in 0..3 {
            w.set(i + 1, i, 1.0);
        }
        assert_eq!(dense_step(&x, &w, Activation::Identity).unwrap(), x);
        assert_eq!(
            dense_step(&Matrix::zeros(1, 3), &w, Activation::Tanh)
                .unwrap()
                .data(),
            &[0.0; 3]
        );

        let mut rng = SeededRng::new(2);
        let w = Matrix::uniform(4, 2, 1.0, &mut rng).unwrap();
        let y = dense_step(&x, &w, Activation::Sigmoid).unwrap();
        for j in 0..2 {
            let z = w.get(0, j) + (0..3).map(|i| x.get(0, i) * w.get(i + 1, j)).sum::<f64>();
            assert!((y.get(0, j) - 1.0 / (1.0 + (-z).exp())).abs() < 1e-12);
        }
        assert!(dense_step(&Matrix::zeros(1, 2), &w, Activation::Identity).is_err());
    }
}
