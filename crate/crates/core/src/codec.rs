//! Moving between real values and the spike domain.
//!
//! Inputs enter by constant current injection: the real value itself drives
//! the first spiking layer at every step. Outputs leave through a decoder of
//! leaky integrators, which never spike or reset, followed by population
//! voting, which averages each group of `n_o` decoder membranes into one real
//! output feature.
//!
//! Rate, latency and delta-modulation codes are not supported.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::neuron::affine_into;

/// Passes a `[steps × features]` input through unchanged.
pub fn constant_current_encode(x: &Matrix) -> Result<Matrix> {
    if x.rows() == 0 {
        return Err(Error::Empty(
            "constant current encoding needs at least one step",
        ));
    }
    Ok(x.clone())
}

/// Broadcasts a per-sample scalar (e.g. a yield strength) to every step.
pub fn broadcast_scalar(value: f64, steps: usize) -> Result<Matrix> {
    if steps == 0 {
        return Err(Error::Empty(
            "constant current encoding needs at least one step",
        ));
    }
    Ok(Matrix::filled(steps, 1, value))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    /// `[batch × units]`
    pub membrane: Matrix,
}

impl DecoderState {
    pub fn zeros(batch: usize, units: usize) -> Self {
        Self {
            membrane: Matrix::zeros(batch, units),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// `(inputs + 1) × units`, bias in row 0.
    pub weights: Matrix,
    /// `1 × units`
    pub decay: Matrix,
}

/// `U_t = β⊙U_{t−1} + W·h_t`
pub fn decode_step(
    state: &DecoderState,
    prev_layer_t: &Matrix,
    params: &DecoderParams,
) -> Result<DecoderState> {
    let (batch, n) = (prev_layer_t.rows(), params.weights.cols());
    if prev_layer_t.cols() + 1 != params.weights.rows() {
        return Err(Error::shape(
            "decode_step: input",
            params.weights.rows() - 1,
            prev_layer_t.cols(),
        ));
    }
    if params.decay.cols() != n || state.membrane.shape() != (batch, n) {
        return Err(Error::shape(
            "decode_step: state",
            format!("{batch}x{n}"),
            format!(
                "{:?} / decay {}",
                state.membrane.shape(),
                params.decay.cols()
            ),
        ));
    }
    let mut drive = Matrix::zeros(batch, n);
    affine_into(
        prev_layer_t.data(),
        batch,
        &params.weights,
        drive.data_mut(),
        true,
    );
    let beta = params.decay.data();
    let mut next = DecoderState::zeros(batch, n);
    for b in 0..batch {
        for j in 0..n {
            let idx = b * n + j;
            next.membrane.data_mut()[idx] =
                decoder_membrane(beta[j], state.membrane.data()[idx], drive.data()[idx]);
        }
    }
    Ok(next)
}

#[inline]
pub(crate) fn decoder_membrane(beta: f64, u_prev: f64, drive: f64) -> f64 {
    beta * u_prev + drive
}

/// Arithmetic mean of one population of decoder membranes.
pub fn population_vote(membrane: &[f64]) -> Result<f64> {
    if membrane.is_empty() {
        return Err(Error::Empty("population voting needs at least one neuron"));
    }
    Ok(membrane.iter().sum::<f64>() / membrane.len() as f64)
}

/// Votes every output feature: `membrane` holds `outputs` consecutive
/// populations of equal size.
pub fn population_vote_all(membrane: &[f64], outputs: usize) -> Result<Vec<f64>> {
    if outputs == 0 || membrane.len() % outputs != 0 {
        return Err(Error::shape(
            "population_vote_all",
            format!("multiple of {outputs}"),
            membrane.len(),
        ));
    }
    membrane
        .chunks(membrane.len() / outputs)
        .map(population_vote)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;

    #[test]
    fn encode_examples() {
        assert_eq!(broadcast_scalar(0.5, 3).unwrap().data(), &[0.5, 0.5, 0.5]);
        let seq = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(constant_current_encode(&seq).unwrap(), seq);
        assert!(broadcast_scalar(1.0, 0).is_err());
        assert!(constant_current_encode(&Matrix::zeros(0, 1)).is_err());
    }

    fn identity_decoder(n: usize, beta: f64) -> DecoderParams {
        let mut w = Matrix::zeros(n + 1, n);
        for i in 0..n {
            w.set(i + 1, i, 1.0);
        }
        DecoderParams {
            weights: w,
            decay: Matrix::row_vector(vec![beta; n]),
        }
    }

    #[test]
    fn memoryless_decoder() {
        let p = identity_decoder(2, 0.0);
        let s = decode_step(
            &DecoderState::zeros(1, 2),
            &Matrix::row_vector(vec![2.0, 4.0]),
            &p,
        )
        .unwrap();
        assert_eq!(s.membrane.data(), &[2.0, 4.0]);
    }

    #[test]
    fn pure_integrator_holds() {
        let p = identity_decoder(1, 1.0);
        let mut s = DecoderState {
            membrane: Matrix::row_vector(vec![1.0]),
        };
        for _ in 0..2 {
            s = decode_step(&s, &Matrix::row_vector(vec![0.0]), &p).unwrap();
        }
        assert_eq!(s.membrane.data(), &[1.0]);
    }

    #[test]
    fn rollout_matches_geometric_sum() {
        let mut rng = SeededRng::new(12);
        let (n_in, n) = (4, 3);
        let p = DecoderParams {
            weights: Matrix::uniform(n_in + 1, n, 1.0, &mut rng).unwrap(),
            decay: Matrix::row_vector((0..n).map(|_| rng.uniform(0.2, 0.95)).collect()),
        };
        let inputs: Vec<Matrix> = (0..3)
            .map(|_| Matrix::uniform(1, n_in, 1.0, &mut rng).unwrap())
            .collect();
        let mut s = DecoderState::zeros(1, n);
        for x in &inputs {
            s = decode_step(&s, x, &p).unwrap();
        }
        for j in 0..n {
            let beta = p.decay.get(0, j);
            let mut want = 0.0;
            for (k, x) in inputs.iter().enumerate() {
                let drive = p.weights.get(0, j)
                    + (0..n_in)
                        .map(|i| x.get(0, i) * p.weights.get(i + 1, j))
                        .sum::<f64>();
                want += beta.powi((inputs.len() - 1 - k) as i32) * drive;
            }
            assert!((s.membrane.get(0, j) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn decoder_is_lipschitz_in_its_input() {
        let mut rng = SeededRng::new(13);
        let p = DecoderParams {
            weights: Matrix::uniform(6, 4, 1.0, &mut rng).unwrap(),
            decay: Matrix::row_vector(vec![0.5; 4]),
        };
        let x = Matrix::uniform(1, 5, 1.0, &mut rng).unwrap();
        let mut y = x.clone();
        y.data_mut()[2] += 1e-3;
        let s0 = DecoderState::zeros(1, 4);
        let a = decode_step(&s0, &x, &p).unwrap();
        let b = decode_step(&s0, &y, &p).unwrap();
        let du: f64 = a
            .membrane
            .data()
            .iter()
            .zip(b.membrane.data())
            .map(|(u, v)| (u - v).powi(2))
            .sum::<f64>()
            .sqrt();
        let w_norm = p.weights.sum_of_squares().sqrt();
        assert!(du <= w_norm * 1e-3 + 1e-15);
        assert!(du > 0.0);
    }

    #[test]
    fn vote_examples() {
        assert_eq!(population_vote(&[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(population_vote(&[0.25; 7]).unwrap(), 0.25);
        assert!(population_vote(&[]).is_err());
        assert_eq!(
            population_vote_all(&[1.0, 3.0, 5.0, 7.0], 2).unwrap(),
            vec![2.0, 6.0]
        );
    }

    #[test]
    fn vote_matches_naive_mean() {
        let mut rng = SeededRng::new(14);
        let v: Vec<f64> = (0..64).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let mut s = 0.0;
        for x in &v {
            s += x;
        }
        assert!((population_vote(&v).unwrap() - s / 64.0).abs() < 1e-14);
    }
}
