//! One-dimensional constitutive models used as ground truth, and the
//! datasets built from them.

mod dataset;

pub use dataset::{
    build_dataset, DatasetMeta, DatasetSplits, Experiment, GenConfig, MaterialConstants, Samples,
    SplitSizes,
};

use crate::error::{Error, Result};
use crate::linalg::SeededRng;

/// Young's modulus used by all experiments, in MPa.
pub const YOUNGS_MODULUS: f64 = 2.1e5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticParams {
    pub youngs_modulus: f64,
}

impl Default for ElasticParams {
    fn default() -> Self {
        Self {
            youngs_modulus: YOUNGS_MODULUS,
        }
    }
}

/// `σ = E·ε`
pub fn elastic_stress(strain: f64, params: &ElasticParams) -> f64 {
    params.youngs_modulus * strain
}

/// `ε = σ/E + offset·(σ/σ_Y)ⁿ`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RambergOsgoodParams {
    pub youngs_modulus: f64,
    pub yield_strength: f64,
    pub exponent: f64,
    pub offset: f64,
}

impl RambergOsgoodParams {
    pub fn new(yield_strength: f64) -> Self {
        Self {
            youngs_modulus: YOUNGS_MODULUS,
            yield_strength,
            exponent: 10.0,
            offset: 0.002,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0
            && self.yield_strength > 0.0
            && self.exponent >= 1.0
            && self.offset >= 0.0)
        {
            return Err(Error::Config(format!(
                "invalid Ramberg-Osgood parameters {self:?}"
            )));
        }
        Ok(())
    }

    /// Strain at stress `σ`.
    pub fn strain(&self, stress: f64) -> f64 {
        stress / self.youngs_modulus
            + self.offset * (stress / self.yield_strength).powf(self.exponent)
    }

    fn slope(&self, stress: f64) -> f64 {
        let p = &self;
        1.0 / p.youngs_modulus
            + p.offset * p.exponent * stress.powf(p.exponent - 1.0)
                / p.yield_strength.powf(p.exponent)
    }
}

const RO_MAX_ITER: usize = 100;

fn ro_tolerance(strain: f64) -> f64 {
    1e-12 * strain.max(1e-6)
}

/// Newton iteration on `g(σ) = ε(σ) − ε` from `σ₀ = min(E·ε, σ_Y)`. Returns
/// the stress and the iteration count, or a solver error after 100 steps.
pub fn ramberg_osgood_newton(strain: f64, params: &RambergOsgoodParams) -> Result<(f64, usize)> {
    params.validate()?;
    check_strain(strain)?;
    if strain == 0.0 {
        return Ok((0.0, 0));
    }
    let tol = ro_tolerance(strain);
    let mut s = (params.youngs_modulus * strain).min(params.yield_strength);
    for it in 0..RO_MAX_ITER {
        let g = params.strain(s) - strain;
        if g.abs() < tol {
            return Ok((s, it));
        }
        s -= g / params.slope(s);
        if !s.is_finite() || s < 0.0 {
            break;
        }
    }
    Err(Error::Solver(format!(
        "Ramberg-Osgood Newton did not converge for strain {strain}"
    )))
}

/// Stress for a given total strain: Newton, with bisection on
/// `[0, E·ε + σ_Y]` if Newton fails.
pub fn ramberg_osgood_stress(strain: f64, params: &RambergOsgoodParams) -> Result<f64> {
    match ramberg_osgood_newton(strain, params) {
        Ok((s, _)) => Ok(s),
        Err(Error::Solver(_)) => ramberg_osgood_bisect(strain, params),
        Err(e) => Err(e),
    }
}

fn ramberg_osgood_bisect(strain: f64, params: &RambergOsgoodParams) -> Result<f64> {
    let (mut lo, mut hi) = (0.0, params.youngs_modulus * strain + params.yield_strength);
    let tol = ro_tolerance(strain);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        let g = params.strain(mid) - strain;
        if g.abs() < tol || hi - lo <= f64::EPSILON * hi {
            return Ok(mid);
        }
        if g > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Err(Error::Solver(format!(
        "Ramberg-Osgood bisection failed for strain {strain}"
    )))
}

fn check_strain(strain: f64) -> Result<()> {
    if !strain.is_finite() || strain < 0.0 {
        return Err(Error::Data(format!(
            "Ramberg-Osgood strain must be finite and non-negative, got {strain}"
        )));
    }
    Ok(())
}

/// Rate-independent plasticity with linear isotropic hardening.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlasticityParams {
    pub youngs_modulus: f64,
    pub yield_strength: f64,
    pub hardening_modulus: f64,
}

impl Default for PlasticityParams {
    fn default() -> Self {
        Self {
            youngs_modulus: YOUNGS_MODULUS,
            yield_strength: 300.0,
            hardening_modulus: 2.1e4,
        }
    }
}

impl PlasticityParams {
    /// Yield function `f = |σ| − (σ_Y + K·α)`.
    pub fn yield_function(&self, stress: f64, alpha: f64) -> f64 {
        stress.abs() - (self.yield_strength + self.hardening_modulus * alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlasticState {
    pub plastic_strain: f64,
    /// Accumulated equivalent plastic strain.
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnMap {
    pub stress: f64,
    pub state: PlasticState,
    /// Plastic multiplier of this increment; zero on elastic steps.
    pub delta_gamma: f64,
}

/// Elastic predictor, plastic corrector.
pub fn return_map_step(state: &PlasticState, strain: f64, params: &PlasticityParams) -> ReturnMap {
    let e = params.youngs_modulus;
    let trial = e * (strain - state.plastic_strain);
    let f_trial = params.yield_function(trial, state.alpha);
    if f_trial <= 0.0 {
        return ReturnMap {
            stress: trial,
            state: *state,
            delta_gamma: 0.0,
        };
    }
    let dg = f_trial / (e + params.hardening_modulus);
    let next = PlasticState {
        plastic_strain: state.plastic_strain + dg * trial.signum(),
        alpha: state.alpha + dg,
    };
    ReturnMap {
        stress: e * (strain - next.plastic_strain),
        state: next,
        delta_gamma: dg,
    }
}

/// Stress history along a strain path, starting from the virgin state.
pub fn return_map_path(strains: &[f64], params: &PlasticityParams) -> Vec<ReturnMap> {
    let mut state = PlasticState::default();
    strains
        .iter()
        .map(|&eps| {
            let r = return_map_step(&state, eps, params);
            state = r.state;
            r
        })
        .collect()
}

/// Ramp from 0 to `ε_max` over the first `⌈0.6·steps⌉` steps, then unload
/// linearly to `r·ε_max`, with `ε_max ~ U[strain_range]` and
/// `r ~ U[ratio_range]`.
pub fn sample_load_path(
    rng: &mut SeededRng,
    steps: usize,
    strain_range: (f64, f64),
    ratio_range: (f64, f64),
) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::Config(format!(
            "a load path needs at least 2 steps, got {steps}"
        )));
    }
    let eps_max = rng.uniform(strain_range.0, strain_range.1);
    let ratio = rng.uniform(ratio_range.0, ratio_range.1);
    let n_load = (0.6 * steps as f64).ceil() as usize;
    let n_unload = steps - n_load;
    let mut path: Vec<f64> = (0..n_load)
        .map(|t| eps_max * t as f64 / (n_load - 1) as f64)
        .collect();
    path.extend(
        (1..=n_unload).map(|k| eps_max - (1.0 - ratio) * eps_max * k as f64 / n_unload as f64),
    );
    Ok(path)
}

/// `steps` equally spaced values from 0 to `end`.
pub fn linear_ramp(end: f64, steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![end];
    }
    (0..steps)
        .map(|t| end * t as f64 / (steps - 1) as f64)
        .collect()
}
