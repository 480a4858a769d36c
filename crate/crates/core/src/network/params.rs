use crate::codec::DecoderParams;
use crate::error::{Error, Result};
use crate::linalg::{uniform_init, Matrix, SeededRng};
use crate::neuron::{LifParams, Recurrence, SlstmParams};

use super::spec::{LayerKind, NetworkSpec};

/// Range of the uniform draw for initial membrane decay rates.
pub const DECAY_INIT: (f64, f64) = (0.4, 0.9);
/// Initial firing threshold of LIF / RLIF neurons.
pub const LIF_THRESHOLD_INIT: f64 = 1.0;
/// Initial firing threshold of spiking LSTM neurons. Their membrane
/// `o⊙tanh(c)` lies strictly inside (−1, 1), so a threshold of 1 could never
/// be reached.
pub const SLSTM_THRESHOLD_INIT: f64 = 0.5;
/// Smallest threshold kept after an optimizer step.
pub const MIN_THRESHOLD: f64 = 1e-3;

/// How a tensor is constrained after an optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight,
    /// Clamped to `[0, 1]`.
    Decay,
    /// Clamped to `[MIN_THRESHOLD, ∞)`.
    Threshold,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Input,
    Lif(LifParams),
    Slstm(SlstmParams),
    /// Shares the fused gate layout; the threshold is unused and excluded
    /// from the trainable tensors.
    Lstm(SlstmParams),
    Dense(Matrix),
    Decoder(DecoderParams),
    Population,
}

impl LayerParams {
    /// Trainable tensors in a fixed order, with short names.
    pub fn tensors(&self) -> Vec<(&'static str, TensorRole, &Matrix)> {
        use TensorRole::*;
        match self {
            LayerParams::Input | LayerParams::Population => vec![],
            LayerParams::Lif(p) => {
                let mut v = vec![("w", Weight, &p.weights)];
                if let Some(r) = &p.rec_weights {
                    v.push(("v", Weight, r));
                }
                v.push(("beta", Decay, &p.decay));
                v.push(("thr", Threshold, &p.threshold));
                v
            }
            LayerParams::Slstm(p) => vec![
                ("w", Weight, &p.weights),
                ("v", Weight, &p.rec_weights),
                ("thr", Threshold, &p.threshold),
            ],
            LayerParams::Lstm(p) => vec![("w", Weight, &p.weights), ("v", Weight, &p.rec_weights)],
            LayerParams::Dense(w) => vec![("w", Weight, w)],
            LayerParams::Decoder(p) => vec![("w", Weight, &p.weights), ("beta", Decay, &p.decay)],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorRole, &mut Matrix)> {
        use TensorRole::*;
        match self {
            LayerParams::Input | LayerParams::Population => vec![],
            LayerParams::Lif(p) => {
                let mut v = vec![(Weight, &mut p.weights)];
                if let Some(r) = &mut p.rec_weights {
                    v.push((Weight, r));
                }
                v.push((Decay, &mut p.decay));
                v.push((Threshold, &mut p.threshold));
                v
            }
            LayerParams::Slstm(p) => vec![
                (Weight, &mut p.weights),
                (Weight, &mut p.rec_weights),
                (Threshold, &mut p.threshold),
            ],
            LayerParams::Lstm(p) => vec![(Weight, &mut p.weights), (Weight, &mut p.rec_weights)],
            LayerParams::Dense(w) => vec![(Weight, w)],
            LayerParams::Decoder(p) => vec![(Weight, &mut p.weights), (Decay, &mut p.decay)],
        }
    }

    /// Same structure, every tensor zeroed.
    pub fn zeros_like(&self) -> LayerParams {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }
}

/// Parameters of every layer, aligned with `NetworkSpec::layers`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<LayerParams>,
}

impl NetworkParams {
    /// Random initialization. Weights and biases are uniform on
    /// `±1/√fan_in`, decays uniform on [`DECAY_INIT`], thresholds constant.
    pub fn init(spec: &NetworkSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, l) in spec.layers.iter().enumerate() {
            let n = l.width;
            let n_in = if i == 0 { 0 } else { spec.layers[i - 1].width };
            let rec_rows = match spec.recurrence {
                Recurrence::PaperLiteral => n_in,
                Recurrence::SelfFeedback => n,
            };
            let p = match l.kind {
                LayerKind::Input => LayerParams::Input,
                LayerKind::Lif | LayerKind::Rlif => {
                    let weights = uniform_init(n_in + 1, n, n_in, rng)?;
                    let rec_weights = match l.kind {
                        LayerKind::Rlif => Some(uniform_init(rec_rows, n, rec_rows, rng)?),
                        _ => None,
                    };
                    LayerParams::Lif(LifParams {
                        weights,
                        rec_weights,
                        recurrence: spec.recurrence,
                        decay: decay_init(n, rng),
                        threshold: Matrix::filled(1, n, LIF_THRESHOLD_INIT),
                    })
                }
                LayerKind::Slstm | LayerKind::Lstm => {
                    let weights = uniform_init(n_in + 1, 4 * n, n_in, rng)?;
                    let rec_weights = uniform_init(rec_rows, 4 * n, rec_rows, rng)?;
                    let threshold = Matrix::filled(1, n, SLSTM_THRESHOLD_INIT);
                    let p = SlstmParams {
                        weights,
                        rec_weights,
                        recurrence: spec.recurrence,
                        threshold,
                    };
                    if l.kind == LayerKind::Slstm {
                        LayerParams::Slstm(p)
                    } else {
                        LayerParams::Lstm(p)
                    }
                }
                LayerKind::Dense { .. } => {
                    LayerParams::Dense(uniform_init(n_in + 1, n, n_in, rng)?)
                }
                LayerKind::Decoder => LayerParams::Decoder(DecoderParams {
                    weights: uniform_init(n_in + 1, n, n_in, rng)?,
                    decay: decay_init(n, rng),
                }),
                LayerKind::Population => LayerParams::Population,
            };
            layers.push(p);
        }
        Ok(Self { layers })
    }

    /// Every tensor with a dotted name such as `layer2.w`.
    pub fn named_tensors(&self) -> Vec<(String, TensorRole, &Matrix)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                l.tensors()
                    .into_iter()
                    .map(move |(n, r, m)| (format!("layer{i}.{n}"), r, m))
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<(TensorRole, &mut Matrix)> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }

    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            layers: self.layers.iter().map(LayerParams::zeros_like).collect(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, m)| m.len()).sum()
    }

    /// Adds `other` tensor by tensor.
    pub fn accumulate(&mut self, other: &NetworkParams) {
        let src: Vec<&Matrix> = other
            .named_tensors()
            .into_iter()
            .map(|(_, _, m)| m)
            .collect();
        for ((_, dst), s) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.named_tensors()
            .iter()
            .map(|(_, _, m)| m.sum_of_squares())
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, _, m)| m.all_finite())
    }

    /// Checks that every tensor has the shape `spec` implies.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let mut rng = SeededRng::new(0);
        let reference = NetworkParams::init(spec, &mut rng)?;
        let want: Vec<_> = reference
            .named_tensors()
            .into_iter()
            .map(|(n, _, m)| (n, m.shape()))
            .collect();
        let got: Vec<_> = self
            .named_tensors()
            .into_iter()
            .map(|(n, _, m)| (n, m.shape()))
            .collect();
        if want != got || self.layers.len() != reference.layers.len() {
            return Err(Error::shape(
                "parameters vs spec",
                format!("{want:?}"),
                format!("{got:?}"),
            ));
        }
        for (a, b) in self.layers.iter().zip(&reference.layers) {
            if std::mem::discriminant(a) != std::mem::discriminant(b) {
                return Err(Error::shape(
                    "parameters vs spec",
                    "matching layer kinds",
                    "different layer kinds",
                ));
            }
        }
        Ok(())
    }

    /// Projects decays into `[0, 1]` and thresholds above [`MIN_THRESHOLD`].
    pub fn project(&mut self) {
        for (role, t) in self.tensors_mut() {
            match role {
                TensorRole::Weight => {}
                TensorRole::Decay => t.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0)),
                TensorRole::Threshold => t
                    .data_mut()
                    .iter_mut()
                    .for_each(|v| *v = v.max(MIN_THRESHOLD)),
            }
        }
    }
}

fn decay_init(n: usize, rng: &mut SeededRng) -> Matrix {
    Matrix::row_vector(
        (0..n)
            .map(|_| rng.uniform(DECAY_INIT.0, DECAY_INIT.1))
            .collect(),
    )
}
