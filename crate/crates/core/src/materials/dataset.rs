use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng, Standardizer};
use crate::network::StateSequence;

use super::{
    elastic_stress, linear_ramp, ramberg_osgood_stress, return_map_path, sample_load_path,
    ElasticParams, PlasticityParams, RambergOsgoodParams, YOUNGS_MODULUS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Elastic,
    RambergOsgood,
    Plasticity,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [
        Experiment::Elastic,
        Experiment::RambergOsgood,
        Experiment::Plasticity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Elastic => "elastic",
            Experiment::RambergOsgood => "ramberg-osgood",
            Experiment::Plasticity => "plasticity",
        }
    }

    pub fn default_steps(self) -> usize {
        match self {
            Experiment::Elastic => 5,
            Experiment::RambergOsgood => 20,
            Experiment::Plasticity => 100,
        }
    }

    pub fn default_sizes(self) -> SplitSizes {
        let train = match self {
            Experiment::Plasticity => 10240,
            _ => 1024,
        };
        SplitSizes {
            train,
            val: 1024,
            test: 1024,
        }
    }

    pub fn default_constants(self) -> MaterialConstants {
        match self {
            Experiment::Elastic => MaterialConstants::Elastic {
                youngs_modulus: YOUNGS_MODULUS,
                strain_max_range: [0.0, 0.001],
            },
            Experiment::RambergOsgood => MaterialConstants::RambergOsgood {
                youngs_modulus: YOUNGS_MODULUS,
                exponent: 10.0,
                offset: 0.002,
                yield_strength_range: [100.0, 500.0],
                strain_max: 0.01,
            },
            Experiment::Plasticity => {
                let p = PlasticityParams::default();
                MaterialConstants::Plasticity {
                    youngs_modulus: p.youngs_modulus,
                    yield_strength: p.yield_strength,
                    hardening_modulus: p.hardening_modulus,
                    strain_max_range: [0.0, 0.01],
                    unload_ratio_range: [0.2, 0.8],
                }
            }
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown experiment '{s}' (expected elastic, ramberg-osgood or plasticity)"
                ))
            })
    }
}

/// Material constants and sampling ranges of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case")]
pub enum MaterialConstants {
    /// Input: strain ramp `0 → ε_max`, `ε_max ~ U[strain_max_range]`.
    Elastic {
        youngs_modulus: f64,
        strain_max_range: [f64; 2],
    },
    /// Input: `σ_Y ~ U[yield_strength_range]` at every step; the strain ramp
    /// `0 → strain_max` is shared by all samples.
    RambergOsgood {
        youngs_modulus: f64,
        exponent: f64,
        offset: f64,
        yield_strength_range: [f64; 2],
        strain_max: f64,
    },
    /// Input: sampled load-unload strain path.
    Plasticity {
        youngs_modulus: f64,
        yield_strength: f64,
        hardening_modulus: f64,
        strain_max_range: [f64; 2],
        unload_ratio_range: [f64; 2],
    },
}

impl MaterialConstants {
    pub fn experiment(&self) -> Experiment {
        match self {
            MaterialConstants::Elastic { .. } => Experiment::Elastic,
            MaterialConstants::RambergOsgood { .. } => Experiment::RambergOsgood,
            MaterialConstants::Plasticity { .. } => Experiment::Plasticity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub steps: usize,
    pub sizes: SplitSizes,
    pub seed: u64,
    pub constants: MaterialConstants,
}

impl GenConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            steps: experiment.default_steps(),
            sizes: experiment.default_sizes(),
            seed,
            constants: experiment.default_constants(),
        }
    }
}

/// Contents of the JSON sidecar written next to the split CSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub experiment: Experiment,
    pub steps: usize,
    pub seed: u64,
    pub sizes: SplitSizes,
    pub input_mean: f64,
    pub input_std: f64,
    pub target_mean: f64,
    pub target_std: f64,
    pub material: MaterialConstants,
}

impl DatasetMeta {
    pub fn input_scale(&self) -> Result<Standardizer> {
        Standardizer::new(self.input_mean, self.input_std)
    }

    pub fn target_scale(&self) -> Result<Standardizer> {
        Standardizer::new(self.target_mean, self.target_std)
    }

    /// Strain history of a sample, for plotting. For Ramberg-Osgood the
    /// input is the yield strength, and the strain is the shared ramp.
    pub fn strain(&self, input: &[f64]) -> Vec<f64> {
        match self.material {
            MaterialConstants::RambergOsgood { strain_max, .. } => {
                linear_ramp(strain_max, self.steps)
            }
            _ => input.to_vec(),
        }
    }
}

/// Raw (physical-unit) samples: one row per sample, one column per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub inputs: Matrix,
    pub targets: Matrix,
}

impl Samples {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn steps(&self) -> usize {
        self.inputs.cols()
    }

    /// Standardized `[steps × batch × 1]` input and target sequences of the
    /// selected samples, in the given order.
    pub fn sequences(
        &self,
        indices: &[usize],
        meta: &DatasetMeta,
    ) -> Result<(StateSequence, StateSequence)> {
        let (xs, ys) = (meta.input_scale()?, meta.target_scale()?);
        let steps = self.steps();
        let mut x = StateSequence::zeros(steps, indices.len(), 1);
        let mut y = StateSequence::zeros(steps, indices.len(), 1);
        for (b, &i) in indices.iter().enumerate() {
            if i >= self.len() {
                return Err(Error::shape(
                    "Samples::sequences",
                    format!("index < {}", self.len()),
                    i,
                ));
            }
            for t in 0..steps {
                x.at_mut(t, b)[0] = (self.inputs.get(i, t) - xs.mean) / xs.std;
                y.at_mut(t, b)[0] = (self.targets.get(i, t) - ys.mean) / ys.std;
            }
        }
        Ok((x, y))
    }

    /// Every sample in storage order.
    pub fn all_sequences(&self, meta: &DatasetMeta) -> Result<(StateSequence, StateSequence)> {
        self.sequences(&(0..self.len()).collect::<Vec<_>>(), meta)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let steps = self.steps();
        let header: Vec<String> = (0..steps)
            .map(|t| format!("x_t{t}"))
            .chain((0..steps).map(|t| format!("y_t{t}")))
            .collect();
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let row: Vec<String> = self
                .inputs
                .row(i)
                .iter()
                .chain(self.targets.row(i))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row).map_err(csv_err)?;
        }
        let mut inner = w
            .into_inner()
            .map_err(|e| Error::io(path, e.into_error()))?;
        inner.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, steps: usize) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() != 2 * steps {
            return Err(Error::Data(format!(
                "{}: expected {} columns, found {}",
                path.display(),
                2 * steps,
                header.len()
            )));
        }
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Data(format!(
                        "{}: row {}: '{field}' is not a number",
                        path.display(),
                        line + 1
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::Data(format!(
                        "{}: row {}: non-finite value",
                        path.display(),
                        line + 1
                    )));
                }
                if c < steps {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        let n = xs.len() / steps;
        Ok(Self {
            inputs: Matrix::from_vec(n, steps, xs)?,
            targets: Matrix::from_vec(n, steps, ys)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub meta: DatasetMeta,
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
}

pub const SIDECAR: &str = "dataset.json";
pub const SPLIT_FILES: [&str; 3] = ["train.csv", "val.csv", "test.csv"];

impl DatasetSplits {
    pub fn splits(&self) -> [&Samples; 3] {
        [&self.train, &self.val, &self.test]
    }

    /// Writes `train.csv`, `val.csv`, `test.csv` and `dataset.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, s) in SPLIT_FILES.iter().zip(self.splits()) {
            s.write_csv(&dir.join(name))?;
        }
        let path = dir.join(SIDECAR);
        let text = serde_json::to_string_pretty(&self.meta).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        let read = |name: &str| Samples::read_csv(&dir.join(name), meta.steps);
        let (train, val, test) = (
            read(SPLIT_FILES[0])?,
            read(SPLIT_FILES[1])?,
            read(SPLIT_FILES[2])?,
        );
        let sizes = SplitSizes {
            train: train.len(),
            val: val.len(),
            test: test.len(),
        };
        if sizes != meta.sizes {
            return Err(Error::Data(format!(
                "{}: sizes {:?} disagree with the CSV files {:?}",
                path.display(),
                meta.sizes,
                sizes
            )));
        }
        meta.input_scale()?;
        meta.target_scale()?;
        Ok(Self {
            meta,
            train,
            val,
            test,
        })
    }
}

fn generate_sample(
    rng: &mut SeededRng,
    steps: usize,
    c: &MaterialConstants,
) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(match *c {
        MaterialConstants::Elastic {
            youngs_modulus,
            strain_max_range,
        } => {
            let eps = linear_ramp(rng.uniform(strain_max_range[0], strain_max_range[1]), steps);
            let p = ElasticParams { youngs_modulus };
            let sigma = eps.iter().map(|&e| elastic_stress(e, &p)).collect();
            (eps, sigma)
        }
        MaterialConstants::RambergOsgood {
            youngs_modulus,
            exponent,
            offset,
            yield_strength_range,
            strain_max,
        } => {
            let sy = rng.uniform(yield_strength_range[0], yield_strength_range[1]);
            let p = RambergOsgoodParams {
                youngs_modulus,
                yield_strength: sy,
                exponent,
                offset,
            };
            let sigma = linear_ramp(strain_max, steps)
                .into_iter()
                .map(|e| ramberg_osgood_stress(e, &p))
                .collect::<Result<Vec<_>>>()?;
            (vec![sy; steps], sigma)
        }
        MaterialConstants::Plasticity {
            youngs_modulus,
            yield_strength,
            hardening_modulus,
            strain_max_range,
            unload_ratio_range,
        } => {
            let eps = sample_load_path(
                rng,
                steps,
                (strain_max_range[0], strain_max_range[1]),
                (unload_ratio_range[0], unload_ratio_range[1]),
            )?;
            let p = PlasticityParams {
                youngs_modulus,
                yield_strength,
                hardening_modulus,
            };
            let sigma = return_map_path(&eps, &p).iter().map(|r| r.stress).collect();
            (eps, sigma)
        }
    })
}

fn generate_split(
    rng: &mut SeededRng,
    n: usize,
    steps: usize,
    c: &MaterialConstants,
) -> Result<Samples> {
    let mut xs = Vec::with_capacity(n * steps);
    let mut ys = Vec::with_capacity(n * steps);
    for _ in 0..n {
        // Each sample draws from its own stream.
        let (x, y) = generate_sample(&mut rng.split(), steps, c)?;
        xs.extend(x);
        ys.extend(y);
    }
    Ok(Samples {
        inputs: Matrix::from_vec(n, steps, xs)?,
        targets: Matrix::from_vec(n, steps, ys)?,
    })
}

/// Generates train, validation and test splits. Standardization statistics
/// come from the training split only.
pub fn build_dataset(cfg: &GenConfig) -> Result<DatasetSplits> {
    let s = cfg.sizes;
    if s.train == 0 || s.val == 0 || s.test == 0 {
        return Err(Error::Config(format!(
            "dataset sizes must be positive, got {s:?}"
        )));
    }
    if cfg.steps < 2 {
        return Err(Error::Config(format!(
            "datasets need at least 2 steps, got {}",
            cfg.steps
        )));
    }
    let mut master = SeededRng::new(cfg.seed);
    let mut streams: Vec<SeededRng> = (0..3).map(|_| master.split()).collect();
    let train = generate_split(&mut streams[0], s.train, cfg.steps, &cfg.constants)?;
    let val = generate_split(&mut streams[1], s.val, cfg.steps, &cfg.constants)?;
    let test = generate_split(&mut streams[2], s.test, cfg.steps, &cfg.constants)?;
    let xs = Standardizer::fit(train.inputs.data())?;
    let ys = Standardizer::fit(train.targets.data())?;
    let meta = DatasetMeta {
        experiment: cfg.constants.experiment(),
        steps: cfg.steps,
        seed: cfg.seed,
        sizes: s,
        input_mean: xs.mean,
        input_std: xs.std,
        target_mean: ys.mean,
        target_std: ys.std,
        material: cfg.constants,
    };
    Ok(DatasetSplits {
        meta,
        train,
        val,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(experiment: Experiment, seed: u64) -> DatasetSplits {
        let mut cfg = GenConfig::new(experiment, seed);
        cfg.sizes = SplitSizes {
            train: 64,
            val: 16,
            test: 8,
        };
        build_dataset(&cfg).unwrap()
    }

    #[test]
    fn default_sizes() {
        assert_eq!(
            Experiment::Elastic.default_sizes(),
            SplitSizes {
                train: 1024,
                val: 1024,
                test: 1024
            }
        );
        assert_eq!(Experiment::Plasticity.default_sizes().train, 10240);
    }

    #[test]
    fn standardized_train_split_is_centered() {
        for e in Experiment::ALL {
            let d = small(e, 1);
            let (x, y) = d.train.all_sequences(&d.meta).unwrap();
            for s in [x, y] {
                let v = s.values().data();
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / v.len() as f64;
                assert!(mean.abs() < 1e-10, "{e}: {mean}");
                assert!((var.sqrt() - 1.0).abs() < 1e-10, "{e}");
            }
        }
    }

    #[test]
    fn statistics_ignore_val_and_test() {
        let mut cfg = GenConfig::new(Experiment::Plasticity, 5);
        cfg.sizes = SplitSizes {
            train: 32,
            val: 8,
            test: 8,
        };
        let a = build_dataset(&cfg).unwrap();
        cfg.sizes.val = 40;
        cfg.sizes.test = 3;
        let b = build_dataset(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(
            (a.meta.input_mean, a.meta.target_std),
            (b.meta.input_mean, b.meta.target_std)
        );
        let fit = Standardizer::fit(a.train.targets.data()).unwrap();
        assert_eq!((a.meta.target_mean, a.meta.target_std), (fit.mean, fit.std));
    }

    #[test]
    fn experiment_shapes() {
        let d = small(Experiment::Elastic, 2);
        assert_eq!(d.train.steps(), 5);
        for i in 0..d.train.len() {
            let x = d.train.inputs.row(i);
            assert_eq!(x[0], 0.0);
            assert!(x[4] <= 0.001);
            assert_eq!(d.train.targets.get(i, 3), 2.1e5 * x[3]);
        }
        let d = small(Experiment::RambergOsgood, 3);
        assert_eq!(d.train.steps(), 20);
        for i in 0..d.train.len() {
            let x = d.train.inputs.row(i);
            assert!(x.iter().all(|&v| v == x[0] && (100.0..=500.0).contains(&v)));
        }
        assert_eq!(d.meta.strain(d.train.inputs.row(0))[19], 0.01);
        let d = small(Experiment::Plasticity, 4);
        assert_eq!(d.train.steps(), 100);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            small(Experiment::Plasticity, 9),
            small(Experiment::Plasticity, 9)
        );
        assert_ne!(
            small(Experiment::Plasticity, 9).train,
            small(Experiment::Plasticity, 10).train
        );
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = small(Experiment::RambergOsgood, 6);
        d.write(dir.path()).unwrap();
        assert_eq!(DatasetSplits::read(dir.path()).unwrap(), d);
        std::fs::write(dir.path().join("val.csv"), "x_t0\n1\n").unwrap();
        assert!(DatasetSplits::read(dir.path()).is_err());
    }
}
