//! Central finite-difference verification of [`bptt_backward`].

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{Matrix, SeededRng};
use crate::network::{
    forward, ForwardOptions, LayerKind, LayerSpec, NetworkParams, NetworkSpec, Preset,
    StateSequence,
};
use crate::neuron::{GradientMode, Recurrence};

use super::bptt::{bptt_backward, ResetGrad};
use super::loss::LossKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub mode: GradientMode,
    pub reset: ResetGrad,
    /// Coordinates sampled per tensor; smaller tensors are checked fully.
    pub coords_per_tensor: usize,
    pub step: f64,
    /// Gradients smaller than this are compared in absolute terms.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            mode: GradientMode::Smooth,
            reset: ResetGrad::Full,
            coords_per_tensor: 20,
            step: 1e-5,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorCheck {
    pub name: String,
    pub coordinates: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
}

/// `|a − b| / max(|a|, |b|, floor)`
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Compares analytic MSE gradients with central differences at randomly
/// chosen coordinates of every trainable tensor.
pub fn gradient_check(
    spec: &NetworkSpec,
    params: &NetworkParams,
    input: &StateSequence,
    target: &StateSequence,
    opts: &GradCheckOptions,
    rng: &mut SeededRng,
) -> Result<GradCheckReport> {
    let fwd = ForwardOptions {
        mode: opts.mode,
        record: true,
    };
    let rec = forward(spec, params, input, fwd)?;
    let (_, g_out) = LossKind::Mse.eval(&rec.output, target)?;
    let grads = bptt_backward(spec, params, &rec, &g_out, opts.reset)?;

    let loss_at = |p: &NetworkParams| -> Result<f64> {
        let out = forward(
            spec,
            p,
            input,
            ForwardOptions {
                mode: opts.mode,
                record: false,
            },
        )?
        .output;
        LossKind::Mse.value(&out, target)
    };

    let names: Vec<(String, usize)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, _, m)| (n, m.len()))
        .collect();
    let analytic: Vec<Vec<f64>> = grads
        .named_tensors()
        .into_iter()
        .map(|(_, _, m)| m.data().to_vec())
        .collect();
    let mut tensors = Vec::with_capacity(names.len());
    for (ti, (name, len)) in names.iter().enumerate() {
        let coords: Vec<usize> = if *len <= opts.coords_per_tensor {
            (0..*len).collect()
        } else {
            (0..opts.coords_per_tensor)
                .map(|_| rng.below(*len))
                .collect()
        };
        let mut worst = 0.0f64;
        for &c in &coords {
            let mut plus = params.clone();
            plus.tensors_mut()[ti].1.data_mut()[c] += opts.step;
            let mut minus = params.clone();
            minus.tensors_mut()[ti].1.data_mut()[c] -= opts.step;
            let fd = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * opts.step);
            worst = worst.max(relative_error(analytic[ti][c], fd, opts.floor));
        }
        tensors.push(TensorCheck {
            name: name.clone(),
            coordinates: coords.len(),
            max_rel_error: worst,
        });
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
    })
}

fn random_pair(
    spec: &NetworkSpec,
    batch: usize,
    rng: &mut SeededRng,
) -> Result<(StateSequence, StateSequence)> {
    let rows = spec.steps * batch;
    let x = StateSequence::from_matrix(
        spec.steps,
        batch,
        Matrix::uniform(rows, spec.input_features, 1.5, rng)?,
    )?;
    let y = StateSequence::from_matrix(
        spec.steps,
        batch,
        Matrix::uniform(rows, spec.output_features, 1.0, rng)?,
    )?;
    Ok((x, y))
}

/// Miniature network for a preset: two hidden layers of four units over five
/// steps (four decoder neurons).
pub fn miniature_spec(preset: Preset, recurrence: Recurrence) -> NetworkSpec {
    let mut spec = preset.spec_with_depth(5, 2, 4, 4);
    spec.recurrence = recurrence;
    spec
}

/// Smooth-mode check of a preset's miniature network.
pub fn preset_gradient_check(
    preset: Preset,
    recurrence: Recurrence,
    seed: u64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let spec = miniature_spec(preset, recurrence);
    let mut rng = SeededRng::new(seed);
    let params = NetworkParams::init(&spec, &mut rng)?;
    let (x, y) = random_pair(&spec, 3, &mut rng)?;
    gradient_check(&spec, &params, &x, &y, opts, &mut rng)
}

/// Input → decoder → population: no spikes, so the surrogate-mode gradient
/// is exact.
pub fn decoder_gradient_check(seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let spec = NetworkSpec {
        input_features: 2,
        output_features: 2,
        steps: 6,
        recurrence: Recurrence::PaperLiteral,
        layers: vec![
            LayerSpec::new(LayerKind::Input, 2),
            LayerSpec::new(LayerKind::Decoder, 6),
            LayerSpec::new(LayerKind::Population, 2),
        ],
    };
    let mut rng = SeededRng::new(seed);
    let params = NetworkParams::init(&spec, &mut rng)?;
    let (x, y) = random_pair(&spec, 3, &mut rng)?;
    gradient_check(&spec, &params, &x, &y, opts, &mut rng)
}
