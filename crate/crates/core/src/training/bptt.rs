//! Reverse-time gradient accumulation through the unrolled network.
//!
//! Every spike `s = H(U − U_thr)` is differentiated with the arctan
//! surrogate `1/(1 + (π(U − U_thr))²)`. In smooth mode that derivative is
//! exact, so gradients then match finite differences of the forward pass.

use serde::{Deserialize, Serialize};

use crate::codec::DecoderParams;
use crate::error::{Error, Result};
use crate::linalg::{kernels, Matrix};
use crate::network::{
    Activation, ForwardRecord, LayerKind, LayerParams, LayerTrace, NetworkParams, NetworkSpec,
    StateSequence,
};
use crate::neuron::{surrogate_grad, LifParams, Recurrence, SlstmParams};

/// Whether gradient flows through the spike in the reset term
/// `−s_{t−1}⊙U_thr`. The threshold factor of that term is always
/// differentiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetGrad {
    #[default]
    Detached,
    Full,
}

/// Gradients of the loss with respect to every parameter, given the
/// gradient with respect to the network output.
pub fn bptt_backward(
    spec: &NetworkSpec,
    params: &NetworkParams,
    record: &ForwardRecord,
    grad_output: &StateSequence,
    reset: ResetGrad,
) -> Result<NetworkParams> {
    if !record.is_recorded() {
        return Err(Error::Config(
            "bptt_backward needs a forward pass run with record = true".into(),
        ));
    }
    if record.traces.len() != spec.layers.len() || params.layers.len() != spec.layers.len() {
        return Err(Error::shape(
            "bptt_backward: layers",
            spec.layers.len(),
            record.traces.len(),
        ));
    }
    if !grad_output.same_shape(&record.output) {
        return Err(Error::shape(
            "bptt_backward: output gradient",
            format!(
                "{}x{}x{}",
                record.steps,
                record.batch,
                record.output.units()
            ),
            format!(
                "{}x{}x{}",
                grad_output.steps(),
                grad_output.batch(),
                grad_output.units()
            ),
        ));
    }
    let ctx = Ctx {
        steps: record.steps,
        batch: record.batch,
        reset,
    };
    let mut grads = params.zeros_like();
    let mut g = grad_output.values().clone();
    for i in (1..spec.layers.len()).rev() {
        let x = record.traces[i - 1].output();
        let need_in = i > 1;
        let g_in = match (&params.layers[i], &record.traces[i], &mut grads.layers[i]) {
            (LayerParams::Lif(p), LayerTrace::Lif { membrane, spikes }, LayerParams::Lif(gp)) => {
                lif_backward(&ctx, x, p, membrane, spikes, &g, gp, need_in)
            }
            (
                LayerParams::Slstm(p),
                LayerTrace::Slstm {
                    gates,
                    cell,
                    tanh_cell,
                    hidden,
                    spikes,
                },
                LayerParams::Slstm(gp),
            ) => {
                let t = GateTrace {
                    gates,
                    cell,
                    tanh_cell,
                    hidden,
                    spikes: Some(spikes),
                };
                slstm_backward(&ctx, x, p, &t, &g, gp, need_in)
            }
            (
                LayerParams::Lstm(p),
                LayerTrace::Lstm {
                    gates,
                    cell,
                    tanh_cell,
                    hidden,
                },
                LayerParams::Lstm(gp),
            ) => {
                let t = GateTrace {
                    gates,
                    cell,
                    tanh_cell,
                    hidden,
                    spikes: None,
                };
                slstm_backward(&ctx, x, p, &t, &g, gp, need_in)
            }
            (LayerParams::Dense(w), LayerTrace::Dense { out }, LayerParams::Dense(gw)) => {
                let LayerKind::Dense { activation } = spec.layers[i].kind else {
                    return Err(Error::shape(
                        "bptt_backward",
                        "dense layer",
                        spec.layers[i].kind.label(),
                    ));
                };
                dense_backward(&ctx, x, w, out, activation, &g, gw, need_in)
            }
            (
                LayerParams::Decoder(p),
                LayerTrace::Decoder { membrane },
                LayerParams::Decoder(gp),
            ) => decoder_backward(&ctx, x, p, membrane, &g, gp, need_in),
            (LayerParams::Population, LayerTrace::Population { .. }, _) => {
                Some(population_backward(&g, x.cols()))
            }
            _ => {
                return Err(Error::shape(
                    "bptt_backward",
                    "trace matching parameters",
                    format!("layer {i}"),
                ))
            }
        };
        match g_in {
            Some(next) => g = next,
            None => break,
        }
    }
    Ok(grads)
}

struct Ctx {
    steps: usize,
    batch: usize,
    reset: ResetGrad,
}

impl Ctx {
    fn rows(&self) -> usize {
        self.steps * self.batch
    }
}

/// Gradients of `Z = bias + X·W_body`: adds into `gw` and returns `∂L/∂X`
/// when asked.
fn affine_backward(
    ctx: &Ctx,
    x: &Matrix,
    w: &Matrix,
    gz: &Matrix,
    gw: &mut Matrix,
    need_in: bool,
) -> Option<Matrix> {
    let (rows, n_in, n) = (ctx.rows(), w.rows() - 1, w.cols());
    kernels::column_sums_into(gz.data(), rows, n, gw.row_mut(0));
    kernels::gemm_tn(
        x.data(),
        gz.data(),
        gw.rows_slice_mut(1, n_in + 1),
        rows,
        n_in,
        n,
    );
    need_in.then(|| {
        let wt = kernels::transpose(w.rows_slice(1, n_in + 1), n_in, n);
        let mut g_in = Matrix::zeros(rows, n_in);
        kernels::gemm(gz.data(), &wt, g_in.data_mut(), rows, n, n_in);
        g_in
    })
}

/// Gradients of the paper-literal term `Z[t] += X[t−1]·V`.
fn shifted_backward(
    ctx: &Ctx,
    src: &Matrix,
    v: &Matrix,
    gz: &Matrix,
    gv: &mut Matrix,
    g_src: Option<&mut Matrix>,
) {
    let shifted = (ctx.steps - 1) * ctx.batch;
    let (k, n) = (v.rows(), v.cols());
    kernels::gemm_tn(
        src.rows_slice(0, shifted),
        gz.rows_slice(ctx.batch, ctx.rows()),
        gv.data_mut(),
        shifted,
        k,
        n,
    );
    if let Some(g_src) = g_src {
        let vt = kernels::transpose(v.data(), k, n);
        kernels::gemm(
            gz.rows_slice(ctx.batch, ctx.rows()),
            &vt,
            g_src.rows_slice_mut(0, shifted),
            shifted,
            n,
            k,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn lif_backward(
    ctx: &Ctx,
    x: &Matrix,
    p: &LifParams,
    membrane: &Matrix,
    spikes: &Matrix,
    g_out: &Matrix,
    gp: &mut LifParams,
    need_in: bool,
) -> Option<Matrix> {
    let (n, b_sz) = (p.units(), ctx.batch);
    let stride = b_sz * n;
    let (beta, thr) = (p.decay.data(), p.threshold.data());
    let self_vt = match (&p.rec_weights, p.recurrence) {
        (Some(v), Recurrence::SelfFeedback) => Some(kernels::transpose(v.data(), n, n)),
        _ => None,
    };
    let (u, s, go) = (membrane.data(), spikes.data(), g_out.data());
    let mut gz = Matrix::zeros(ctx.rows(), n);
    let mut gthr = vec![0.0; n];
    let mut gbeta = vec![0.0; n];
    let mut gu_next = vec![0.0; stride];
    let mut from_next = vec![0.0; stride];

    for t in (0..ctx.steps).rev() {
        let base = t * stride;
        for k in (0..stride).step_by(n) {
            for j in 0..n {
                let (k, idx) = (k + j, base + k + j);
                let gs = go[idx] + from_next[k];
                let d = surrogate_grad(u[idx] - thr[j]);
                let gu = beta[j] * gu_next[k] + gs * d;
                gthr[j] -= gs * d;
                if t > 0 {
                    gthr[j] -= s[idx - stride] * gu;
                    gbeta[j] += gu * u[idx - stride];
                }
                gu_next[k] = gu;
            }
        }
        gz.data_mut()[base..base + stride].copy_from_slice(&gu_next);
        match ctx.reset {
            ResetGrad::Full => {
                for (dst, g) in from_next.chunks_exact_mut(n).zip(gu_next.chunks_exact(n)) {
                    for ((d, &g), &th) in dst.iter_mut().zip(g).zip(thr) {
                        *d = -th * g;
                    }
                }
            }
            ResetGrad::Detached => from_next.fill(0.0),
        }
        if let (Some(vt), true) = (&self_vt, t > 0) {
            kernels::gemm(&gu_next, vt, &mut from_next, b_sz, n, n);
        }
    }

    gp.decay.data_mut().copy_from_slice(&gbeta);
    gp.threshold.data_mut().copy_from_slice(&gthr);
    let mut g_in = affine_backward(ctx, x, &p.weights, &gz, &mut gp.weights, need_in);
    if let (Some(v), Some(gv)) = (&p.rec_weights, &mut gp.rec_weights) {
        match p.recurrence {
            Recurrence::PaperLiteral => shifted_backward(ctx, x, v, &gz, gv, g_in.as_mut()),
            Recurrence::SelfFeedback => shifted_backward(ctx, spikes, v, &gz, gv, None),
        }
    }
    g_in
}

struct GateTrace<'a> {
    gates: &'a Matrix,
    cell: &'a Matrix,
    tanh_cell: &'a Matrix,
    hidden: &'a Matrix,
    spikes: Option<&'a Matrix>,
}

fn slstm_backward(
    ctx: &Ctx,
    x: &Matrix,
    p: &SlstmParams,
    tr: &GateTrace,
    g_out: &Matrix,
    gp: &mut SlstmParams,
    need_in: bool,
) -> Option<Matrix> {
    let (n, b_sz) = (p.units(), ctx.batch);
    let stride = b_sz * n;
    let thr = p.threshold.data();
    let self_vt = (p.recurrence == Recurrence::SelfFeedback)
        .then(|| kernels::transpose(p.rec_weights.data(), n, 4 * n));
    let (gates, cell, m_all, hidden, go) = (
        tr.gates.data(),
        tr.cell.data(),
        tr.tanh_cell.data(),
        tr.hidden.data(),
        g_out.data(),
    );
    let mut gz = Matrix::zeros(ctx.rows(), 4 * n);
    let mut gthr = vec![0.0; n];
    let mut gc_next = vec![0.0; stride];
    let mut from_next = vec![0.0; stride];
    let mut gh_t = vec![0.0; stride];

    let gz_all = gz.data_mut();
    for t in (0..ctx.steps).rev() {
        for b in 0..b_sz {
            let row = t * b_sz + b;
            let grow = &gates[row * 4 * n..(row + 1) * 4 * n];
            let (fs, rest) = grow.split_at(n);
            let (is, rest) = rest.split_at(n);
            let (os, gs_) = rest.split_at(n);
            let gzr = &mut gz_all[row * 4 * n..(row + 1) * 4 * n];
            let k0 = b * n;
            let idx0 = t * stride + k0;
            for j in 0..n {
                let (k, idx) = (k0 + j, idx0 + j);
                let (f, i, o, g) = (fs[j], is[j], os[j], gs_[j]);
                let m = m_all[idx];
                let c_prev = if t > 0 { cell[idx - stride] } else { 0.0 };
                let gs = go[idx] + from_next[k];
                let gh = match tr.spikes {
                    Some(s) => {
                        let d = surrogate_grad(hidden[idx] - thr[j]);
                        let gh = gs * d;
                        gthr[j] -= gh;
                        if t > 0 {
                            gthr[j] -= s.data()[idx - stride] * gh;
                        }
                        gh
                    }
                    None => gs,
                };
                let gc = gc_next[k] + gh * o * (1.0 - m * m);
                gzr[j] = gc * c_prev * f * (1.0 - f);
                gzr[n + j] = gc * g * i * (1.0 - i);
                gzr[2 * n + j] = gh * m * o * (1.0 - o);
                gzr[3 * n + j] = gc * i * (1.0 - g * g);
                gc_next[k] = gc * f;
                gh_t[k] = gh;
            }
        }
        match (ctx.reset, tr.spikes.is_some()) {
            (ResetGrad::Full, true) => {
                for (dst, g) in from_next.chunks_exact_mut(n).zip(gh_t.chunks_exact(n)) {
                    for ((d, &g), &th) in dst.iter_mut().zip(g).zip(thr) {
                        *d = -th * g;
                    }
                }
            }
            _ => from_next.fill(0.0),
        }
        if let (Some(vt), true) = (&self_vt, t > 0) {
            let rows = &gz_all[t * b_sz * 4 * n..(t + 1) * b_sz * 4 * n];
            kernels::gemm(rows, vt, &mut from_next, b_sz, 4 * n, n);
        }
    }

    if tr.spikes.is_some() {
        gp.threshold.data_mut().copy_from_slice(&gthr);
    }
    let mut g_in = affine_backward(ctx, x, &p.weights, &gz, &mut gp.weights, need_in);
    match p.recurrence {
        Recurrence::PaperLiteral => shifted_backward(
            ctx,
            x,
            &p.rec_weights,
            &gz,
            &mut gp.rec_weights,
            g_in.as_mut(),
        ),
        Recurrence::SelfFeedback => {
            let own = tr.spikes.unwrap_or(tr.hidden);
            shifted_backward(ctx, own, &p.rec_weights, &gz, &mut gp.rec_weights, None)
        }
    }
    g_in
}

#[allow(clippy::too_many_arguments)]
fn dense_backward(
    ctx: &Ctx,
    x: &Matrix,
    w: &Matrix,
    out: &Matrix,
    activation: Activation,
    g_out: &Matrix,
    gw: &mut Matrix,
    need_in: bool,
) -> Option<Matrix> {
    let mut gz = g_out.clone();
    for (g, y) in gz.data_mut().iter_mut().zip(out.data()) {
        *g *= activation.derivative_from_output(*y);
    }
    affine_backward(ctx, x, w, &gz, gw, need_in)
}

fn decoder_backward(
    ctx: &Ctx,
    x: &Matrix,
    p: &DecoderParams,
    membrane: &Matrix,
    g_out: &Matrix,
    gp: &mut DecoderParams,
    need_in: bool,
) -> Option<Matrix> {
    let n = p.weights.cols();
    let stride = ctx.batch * n;
    let beta = p.decay.data();
    let u = membrane.data();
    let mut gz = g_out.clone();
    let mut gbeta = vec![0.0; n];
    for t in (0..ctx.steps).rev() {
        let base = t * stride;
        for k in 0..stride {
            let j = k % n;
            if t + 1 < ctx.steps {
                let carried = beta[j] * gz.data()[base + stride + k];
                gz.data_mut()[base + k] += carried;
            }
            if t > 0 {
                gbeta[j] += gz.data()[base + k] * u[base - stride + k];
            }
        }
    }
    gp.decay.data_mut().copy_from_slice(&gbeta);
    affine_backward(ctx, x, &p.weights, &gz, &mut gp.weights, need_in)
}

fn population_backward(g: &Matrix, decoder_width: usize) -> Matrix {
    let size = decoder_width / g.cols();
    let mut g_in = Matrix::zeros(g.rows(), decoder_width);
    for r in 0..g.rows() {
        for (k, &v) in g.row(r).iter().enumerate() {
            g_in.row_mut(r)[k * size..(k + 1) * size].fill(v / size as f64);
        }
    }
    g_in
}
