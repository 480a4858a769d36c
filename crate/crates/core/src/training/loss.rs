use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::StateSequence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    Mse,
    Mae,
}

impl LossKind {
    /// Loss value and its gradient with respect to `pred`.
    pub fn eval(
        self,
        pred: &StateSequence,
        target: &StateSequence,
    ) -> Result<(f64, StateSequence)> {
        match self {
            LossKind::Mse => mse_with_grad(pred, target),
            LossKind::Mae => mae_with_grad(pred, target),
        }
    }

    pub fn value(self, pred: &StateSequence, target: &StateSequence) -> Result<f64> {
        check(pred, target)?;
        let n = pred.values().len() as f64;
        let pairs = pred.values().data().iter().zip(target.values().data());
        Ok(match self {
            LossKind::Mse => pairs.map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n,
            LossKind::Mae => pairs.map(|(p, t)| (p - t).abs()).sum::<f64>() / n,
        })
    }
}

fn check(pred: &StateSequence, target: &StateSequence) -> Result<()> {
    if !pred.same_shape(target) {
        return Err(Error::shape(
            "loss",
            format!("{}x{}x{}", target.steps(), target.batch(), target.units()),
            format!("{}x{}x{}", pred.steps(), pred.batch(), pred.units()),
        ));
    }
    if pred.values().is_empty() {
        return Err(Error::Empty("loss over an empty sequence"));
    }
    Ok(())
}

/// Mean squared error over steps × batch × features.
pub fn mse_loss(pred: &StateSequence, target: &StateSequence) -> Result<f64> {
    LossKind::Mse.value(pred, target)
}

/// Same normalization as [`mse_loss`]; pass a different `count` to get the
/// gradient of a loss averaged over a larger batch than `pred` holds.
pub(crate) fn mse_grad_scaled(
    pred: &StateSequence,
    target: &StateSequence,
    count: f64,
) -> StateSequence {
    let mut g = pred.clone();
    for (gv, t) in g
        .values_mut()
        .data_mut()
        .iter_mut()
        .zip(target.values().data())
    {
        *gv = 2.0 * (*gv - t) / count;
    }
    g
}

pub(crate) fn mae_grad_scaled(
    pred: &StateSequence,
    target: &StateSequence,
    count: f64,
) -> StateSequence {
    let mut g = pred.clone();
    for (gv, t) in g
        .values_mut()
        .data_mut()
        .iter_mut()
        .zip(target.values().data())
    {
        let d = *gv - t;
        *gv = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        } / count;
    }
    g
}

fn mse_with_grad(pred: &StateSequence, target: &StateSequence) -> Result<(f64, StateSequence)> {
    let l = mse_loss(pred, target)?;
    Ok((l, mse_grad_scaled(pred, target, pred.values().len() as f64)))
}

fn mae_with_grad(pred: &StateSequence, target: &StateSequence) -> Result<(f64, StateSequence)> {
    let l = LossKind::Mae.value(pred, target)?;
    Ok((l, mae_grad_scaled(pred, target, pred.values().len() as f64)))
}

/// Which part of each sample's history enters the relative error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// The whole `[steps × features]` history as one vector.
    AllSteps,
    /// Only the features at the final step.
    LastStep,
}

/// `(1/n_s) Σ ‖ref_i − pred_i‖₂ / ‖ref_i‖₂` over per-sample vectors.
pub fn mean_relative_error_vectors(pred: &[&[f64]], reference: &[&[f64]]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::shape(
            "mean_relative_error",
            reference.len(),
            pred.len(),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Empty(
            "mean relative error needs at least one sample",
        ));
    }
    let mut total = 0.0;
    for (i, (p, r)) in pred.iter().zip(reference).enumerate() {
        if p.len() != r.len() {
            return Err(Error::shape(
                "mean_relative_error: sample",
                r.len(),
                p.len(),
            ));
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroReference { sample: i });
        }
        let diff = p
            .iter()
            .zip(r.iter())
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>()
            .sqrt();
        total += diff / norm;
    }
    Ok(total / pred.len() as f64)
}

/// Mean relative error between two `[steps × batch × features]` sequences,
/// one vector per batch element.
pub fn mean_relative_error(
    pred: &StateSequence,
    reference: &StateSequence,
    mode: ErrorMode,
) -> Result<f64> {
    check(pred, reference)?;
    let pick = |s: &StateSequence, b: usize| match mode {
        ErrorMode::AllSteps => s.sample(b),
        ErrorMode::LastStep => s.at(s.steps() - 1, b).to_vec(),
    };
    let p: Vec<Vec<f64>> = (0..pred.batch()).map(|b| pick(pred, b)).collect();
    let r: Vec<Vec<f64>> = (0..pred.batch()).map(|b| pick(reference, b)).collect();
    let p: Vec<&[f64]> = p.iter().map(Vec::as_slice).collect();
    let r: Vec<&[f64]> = r.iter().map(Vec::as_slice).collect();
    mean_relative_error_vectors(&p, &r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Matrix, SeededRng};

    fn seq(steps: usize, batch: usize, units: usize, seed: u64) -> StateSequence {
        let mut rng = SeededRng::new(seed);
        StateSequence::from_matrix(
            steps,
            batch,
            Matrix::uniform(steps * batch, units, 3.0, &mut rng).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn mse_examples() {
        let a = seq(4, 3, 2, 1);
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.values_mut().data_mut().iter_mut().for_each(|v| *v += 1.0);
        assert!((mse_loss(&b, &a).unwrap() - 1.0).abs() < 1e-15);
        assert!(mse_loss(&a, &seq(4, 2, 2, 1)).is_err());
    }

    #[test]
    fn mse_matches_naive_loop() {
        let (p, t) = (seq(5, 4, 3, 2), seq(5, 4, 3, 3));
        let mut s = 0.0;
        for step in 0..5 {
            for b in 0..4 {
                for f in 0..3 {
                    s += (p.at(step, b)[f] - t.at(step, b)[f]).powi(2);
                }
            }
        }
        assert!((mse_loss(&p, &t).unwrap() - s / 60.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (p, t) = (seq(3, 2, 2, 4), seq(3, 2, 2, 5));
        for kind in [LossKind::Mse, LossKind::Mae] {
            let (_, g) = kind.eval(&p, &t).unwrap();
            for i in 0..p.values().len() {
                let h = 1e-6;
                let mut a = p.clone();
                a.values_mut().data_mut()[i] += h;
                let mut b = p.clone();
                b.values_mut().data_mut()[i] -= h;
                let fd = (kind.value(&a, &t).unwrap() - kind.value(&b, &t).unwrap()) / (2.0 * h);
                assert!((fd - g.values().data()[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn relative_error_examples() {
        let r: [&[f64]; 1] = [&[2.0]];
        let p: [&[f64]; 1] = [&[1.0]];
        assert_eq!(mean_relative_error_vectors(&p, &r).unwrap(), 0.5);
        assert_eq!(mean_relative_error_vectors(&r, &r).unwrap(), 0.0);
        let z: [&[f64]; 1] = [&[0.0]];
        assert!(matches!(
            mean_relative_error_vectors(&p, &z),
            Err(Error::ZeroReference { sample: 0 })
        ));
    }

    #[test]
    fn relative_error_matches_naive_oracle() {
        let (p, r) = (seq(6, 10, 1, 6), seq(6, 10, 1, 7));
        for mode in [ErrorMode::AllSteps, ErrorMode::LastStep] {
            let mut want = 0.0;
            for b in 0..10 {
                let steps: Vec<usize> = match mode {
                    ErrorMode::AllSteps => (0..6).collect(),
                    ErrorMode::LastStep => vec![5],
                };
                let (mut num, mut den) = (0.0, 0.0);
                for t in steps {
                    num += (r.at(t, b)[0] - p.at(t, b)[0]).powi(2);
                    den += r.at(t, b)[0].powi(2);
                }
                want += num.sqrt() / den.sqrt();
            }
            assert!((mean_relative_error(&p, &r, mode).unwrap() - want / 10.0).abs() < 1e-12);
        }
    }
}
