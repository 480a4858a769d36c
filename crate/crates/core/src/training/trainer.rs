use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::materials::{DatasetMeta, DatasetSplits, Samples};
use crate::network::{forward, ForwardOptions, NetworkParams, NetworkSpec, Preset, StateSequence};
use crate::neuron::GradientMode;

use super::adamw::{adamw_step, clip_global_norm, AdamWConfig, AdamWState};
use super::bptt::{bptt_backward, ResetGrad};
use super::loss::{mae_grad_scaled, mean_relative_error, mse_grad_scaled, ErrorMode, LossKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(flatten)]
    pub optimizer: AdamWConfig,
    pub seed: u64,
    #[serde(default)]
    pub preset: Option<Preset>,
    #[serde(default)]
    pub loss: LossKind,
    #[serde(default)]
    pub gradient_mode: GradientMode,
    #[serde(default)]
    pub reset: ResetGrad,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Samples per forward/backward chunk. Bounds memory and fixes the
    /// gradient reduction order independently of `threads`. Small chunks
    /// keep the recorded traces out of fresh pages.
    pub chunk_size: usize,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 1024,
            optimizer: AdamWConfig::default(),
            seed: 0,
            preset: None,
            loss: LossKind::Mse,
            gradient_mode: GradientMode::Surrogate,
            reset: ResetGrad::Detached,
            clip_norm: Some(1.0),
            chunk_size: 64,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.chunk_size == 0 || self.threads == 0 {
            return Err(Error::Config(
                "batch size, chunk size and threads must be positive".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::Config(format!(
                    "clip norm must be positive, got {c}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub loss: f64,
    /// Mean relative error over whole histories, in physical units.
    pub all_steps: f64,
    /// Mean relative error of the final step.
    pub last_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub parameter_count: usize,
    /// Epoch 0 holds the metrics of the initial parameters.
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub snapshot_id: String,
    pub train: SplitMetrics,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
    /// Set when training stopped on a non-finite loss or gradient; the
    /// snapshot is then the last good one.
    pub diverged: Option<String>,
}

impl TrainReport {
    /// `epoch,train_loss,val_loss` lines with a header.
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            s.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters of the best validation epoch.
    pub best: NetworkParams,
}

/// Runs `f(0..n)` on up to `threads` workers and returns results in index
/// order.
fn map_ordered<T: Send>(n: usize, threads: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    if threads <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let workers = threads.min(n);
    let mut parts: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let f = &f;
                s.spawn(move || {
                    (w..n)
                        .step_by(workers)
                        .map(|i| (i, f(i)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    for part in parts.iter_mut() {
        for (i, v) in part.drain(..) {
            out[i] = Some(v);
        }
    }
    out.into_iter()
        .map(|v| v.expect("every index computed"))
        .collect()
}

struct Chunked<'a> {
    spec: &'a NetworkSpec,
    meta: &'a DatasetMeta,
    cfg: &'a TrainConfig,
}

impl Chunked<'_> {
    /// Loss and parameter gradient of one mini-batch.
    fn batch_gradient(
        &self,
        params: &NetworkParams,
        samples: &Samples,
        batch: &[usize],
    ) -> Result<(f64, NetworkParams)> {
        let count = (self.spec.steps * batch.len() * self.spec.output_features) as f64;
        let chunks: Vec<&[usize]> = batch.chunks(self.cfg.chunk_size).collect();
        let results = map_ordered(
            chunks.len(),
            self.cfg.threads,
            |c| -> Result<(f64, NetworkParams)> {
                let (x, y) = samples.sequences(chunks[c], self.meta)?;
                let opts = ForwardOptions {
                    mode: self.cfg.gradient_mode,
                    record: true,
                };
                let rec = forward(self.spec, params, &x, opts)?;
                let (loss_sum, g) = match self.cfg.loss {
                    LossKind::Mse => (
                        sq_sum(&rec.output, &y),
                        mse_grad_scaled(&rec.output, &y, count),
                    ),
                    LossKind::Mae => (
                        abs_sum(&rec.output, &y),
                        mae_grad_scaled(&rec.output, &y, count),
                    ),
                };
                let grads = bptt_backward(self.spec, params, &rec, &g, self.cfg.reset)?;
                Ok((loss_sum, grads))
            },
        );
        let mut total = params.zeros_like();
        let mut loss = 0.0;
        for r in results {
            let (l, g) = r?;
            loss += l;
            total.accumulate(&g);
        }
        Ok((loss / count, total))
    }

    /// Standardized predictions for every sample, `[steps × n × d_y]`.
    fn predict(&self, params: &NetworkParams, samples: &Samples) -> Result<StateSequence> {
        let n = samples.len();
        let idx: Vec<usize> = (0..n).collect();
        let chunks: Vec<&[usize]> = idx.chunks(self.cfg.chunk_size).collect();
        let outs = map_ordered(
            chunks.len(),
            self.cfg.threads,
            |c| -> Result<StateSequence> {
                let (x, _) = samples.sequences(chunks[c], self.meta)?;
                let opts = ForwardOptions {
                    mode: self.cfg.gradient_mode,
                    record: false,
                };
                Ok(forward(self.spec, params, &x, opts)?.output)
            },
        );
        let steps = self.spec.steps;
        let d_y = self.spec.output_features;
        let mut all = StateSequence::zeros(steps, n, d_y);
        let mut offset = 0;
        for out in outs {
            let out = out?;
            for t in 0..steps {
                for b in 0..out.batch() {
                    all.at_mut(t, offset + b).copy_from_slice(out.at(t, b));
                }
            }
            offset += out.batch();
        }
        Ok(all)
    }

    fn loss(&self, params: &NetworkParams, samples: &Samples) -> Result<f64> {
        let pred = self.predict(params, samples)?;
        let (_, y) = samples.all_sequences(self.meta)?;
        self.cfg.loss.value(&pred, &y)
    }

    fn metrics(&self, params: &NetworkParams, samples: &Samples) -> Result<SplitMetrics> {
        let pred = self.predict(params, samples)?;
        let (_, y) = samples.all_sequences(self.meta)?;
        let loss = self.cfg.loss.value(&pred, &y)?;
        let pred_phys = destandardize_targets(&pred, self.meta)?;
        let ref_phys = raw_targets(samples);
        Ok(SplitMetrics {
            loss,
            all_steps: mean_relative_error(&pred_phys, &ref_phys, ErrorMode::AllSteps)?,
            last_step: mean_relative_error(&pred_phys, &ref_phys, ErrorMode::LastStep)?,
        })
    }
}

fn sq_sum(p: &StateSequence, t: &StateSequence) -> f64 {
    p.values()
        .data()
        .iter()
        .zip(t.values().data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn abs_sum(p: &StateSequence, t: &StateSequence) -> f64 {
    p.values()
        .data()
        .iter()
        .zip(t.values().data())
        .map(|(a, b)| (a - b).abs())
        .sum()
}

/// Physical-unit targets as a `[steps × n × 1]` sequence.
pub fn raw_targets(samples: &Samples) -> StateSequence {
    let (n, steps) = (samples.len(), samples.steps());
    let mut s = StateSequence::zeros(steps, n, 1);
    for i in 0..n {
        for t in 0..steps {
            s.at_mut(t, i)[0] = samples.targets.get(i, t);
        }
    }
    s
}

fn destandardize_targets(pred: &StateSequence, meta: &DatasetMeta) -> Result<StateSequence> {
    let scale = meta.target_scale()?;
    let mut out = pred.clone();
    out.values_mut()
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = *v * scale.std + scale.mean);
    Ok(out)
}

/// Physical-unit predictions for every sample, one row per sample and one
/// column per step (single-output networks).
pub fn predict_samples(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &Samples,
    meta: &DatasetMeta,
    cfg: &TrainConfig,
) -> Result<Matrix> {
    check_data(spec, meta)?;
    let ctx = Chunked { spec, meta, cfg };
    let pred = destandardize_targets(&ctx.predict(params, data)?, meta)?;
    let (n, steps) = (data.len(), spec.steps);
    let mut m = Matrix::zeros(n, steps);
    for i in 0..n {
        for t in 0..steps {
            m.set(i, t, pred.at(t, i)[0]);
        }
    }
    Ok(m)
}

/// Loss and both relative-error metrics of `params` on one split.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &NetworkParams,
    data: &Samples,
    meta: &DatasetMeta,
    cfg: &TrainConfig,
) -> Result<SplitMetrics> {
    check_data(spec, meta)?;
    Chunked { spec, meta, cfg }.metrics(params, data)
}

fn check_data(spec: &NetworkSpec, meta: &DatasetMeta) -> Result<()> {
    if spec.steps != meta.steps || spec.input_features != 1 || spec.output_features != 1 {
        return Err(Error::shape(
            "network vs dataset",
            format!("{} steps, 1 input, 1 output", meta.steps),
            format!(
                "{} steps, {} inputs, {} outputs",
                spec.steps, spec.input_features, spec.output_features
            ),
        ));
    }
    Ok(())
}

/// Trains from a seeded initialization. The parameters with the lowest
/// validation loss (including the initial ones, epoch 0) are kept and
/// evaluated on every split.
pub fn train(spec: &NetworkSpec, data: &DatasetSplits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut master = SeededRng::new(cfg.seed);
    let mut init_rng = master.split();
    let params = NetworkParams::init(spec, &mut init_rng)?;
    train_from(spec, data, cfg, params, master.split())
}

/// Like [`train`] but from given parameters; `shuffle_rng` orders the
/// mini-batches.
pub fn train_from(
    spec: &NetworkSpec,
    data: &DatasetSplits,
    cfg: &TrainConfig,
    mut params: NetworkParams,
    mut shuffle_rng: SeededRng,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    spec.validate()?;
    params.check_against(spec)?;
    check_data(spec, &data.meta)?;
    let ctx = Chunked {
        spec,
        meta: &data.meta,
        cfg,
    };

    let mut epochs = vec![EpochRecord {
        epoch: 0,
        train_loss: ctx.loss(&params, &data.train)?,
        val_loss: ctx.loss(&params, &data.val)?,
    }];
    let mut best = params.clone();
    let (mut best_epoch, mut best_val) = (0, epochs[0].val_loss);
    let mut opt = AdamWState::new(&params);
    let mut diverged = None;
    if !best_val.is_finite() {
        return Err(Error::Divergence(
            "initial validation loss is not finite".into(),
        ));
    }

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    'epochs: for epoch in 1..=cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let step = ctx
                .batch_gradient(&params, &data.train, batch)
                .and_then(|(loss, mut g)| {
                    if !loss.is_finite() {
                        return Err(Error::Divergence(format!(
                            "non-finite training loss in epoch {epoch}"
                        )));
                    }
                    if let Some(c) = cfg.clip_norm {
                        clip_global_norm(&mut g, c);
                    }
                    adamw_step(&mut params, &g, &mut opt, &cfg.optimizer)?;
                    params.project();
                    Ok(loss)
                });
            match step {
                Ok(loss) => loss_sum += loss * batch.len() as f64,
                Err(Error::Divergence(msg)) => {
                    diverged = Some(msg);
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let val_loss = match ctx.loss(&params, &data.val) {
            Ok(v) if v.is_finite() => v,
            Ok(_) => {
                diverged = Some(format!("non-finite validation loss in epoch {epoch}"));
                break;
            }
            Err(Error::Divergence(msg)) => {
                diverged = Some(msg);
                break;
            }
            Err(e) => return Err(e),
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / data.train.len() as f64,
            val_loss,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = params.clone();
        }
    }

    let report = TrainReport {
        config: cfg.clone(),
        parameter_count: best.parameter_count(),
        epochs,
        best_epoch,
        best_val_loss: best_val,
        snapshot_id: format!("epoch-{best_epoch}"),
        train: ctx.metrics(&best, &data.train)?,
        val: ctx.metrics(&best, &data.val)?,
        test: ctx.metrics(&best, &data.test)?,
        diverged,
    };
    Ok(TrainOutcome { report, best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{build_dataset, Experiment, GenConfig, SplitSizes};

    fn tiny_data(seed: u64) -> DatasetSplits {
        let mut g = GenConfig::new(Experiment::Elastic, seed);
        g.sizes = SplitSizes {
            train: 64,
            val: 32,
            test: 32,
        };
        build_dataset(&g).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 32,
            chunk_size: 16,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_reports_initial_metrics() {
        let data = tiny_data(1);
        let spec = Preset::ElasticLif.spec(5, 8, 4);
        let out = train(&spec, &data, &cfg(0)).unwrap();
        assert_eq!(out.report.epochs.len(), 1);
        assert_eq!(out.report.best_epoch, 0);
        let init = NetworkParams::init(&spec, &mut SeededRng::new(3).split()).unwrap();
        assert_eq!(out.best, init);
        assert_eq!(out.report.val.loss, out.report.epochs[0].val_loss);
    }

    #[test]
    fn training_reduces_loss_and_selects_best_epoch() {
        let data = tiny_data(2);
        let spec = Preset::ElasticLif.spec(5, 16, 4);
        let out = train(&spec, &data, &cfg(40)).unwrap();
        let r = &out.report;
        assert!(r.diverged.is_none());
        assert!(r.epochs.last().unwrap().train_loss < r.epochs[0].train_loss);
        let min = r
            .epochs
            .iter()
            .map(|e| e.val_loss)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(r.best_val_loss, min);
        assert_eq!(r.epochs[r.best_epoch].val_loss, min);
        assert_eq!(r.val.loss, min);
    }

    #[test]
    fn reports_are_bit_identical_and_thread_independent() {
        let data = tiny_data(3);
        let spec = Preset::RoRlif.spec(5, 8, 4);
        let a = train(&spec, &data, &cfg(3)).unwrap();
        let b = train(&spec, &data, &cfg(3)).unwrap();
        let c = train(
            &spec,
            &data,
            &TrainConfig {
                threads: 3,
                ..cfg(3)
            },
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(a.best, c.best);
        assert_eq!(a.report.epochs, c.report.epochs);
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }

    #[test]
    fn chunking_matches_single_chunk_gradient() {
        let data = tiny_data(4);
        let spec = Preset::PlasticSlstm.spec(5, 6, 2);
        let params = NetworkParams::init(&spec, &mut SeededRng::new(1)).unwrap();
        let batch: Vec<usize> = (0..20).collect();
        let one = TrainConfig {
            chunk_size: 20,
            ..cfg(1)
        };
        let many = TrainConfig {
            chunk_size: 6,
            ..cfg(1)
        };
        let (la, ga) = Chunked {
            spec: &spec,
            meta: &data.meta,
            cfg: &one,
        }
        .batch_gradient(&params, &data.train, &batch)
        .unwrap();
        let (lb, gb) = Chunked {
            spec: &spec,
            meta: &data.meta,
            cfg: &many,
        }
        .batch_gradient(&params, &data.train, &batch)
        .unwrap();
        assert!((la - lb).abs() < 1e-12);
        let mut diff = ga.clone();
        diff.scale(-1.0);
        diff.accumulate(&gb);
        assert!(diff.global_norm() < 1e-12 * ga.global_norm().max(1.0));
    }

    #[test]
    fn metrics_csv_layout() {
        let data = tiny_data(5);
        let spec = Preset::ElasticLif.spec(5, 4, 2);
        let out = train(&spec, &data, &cfg(2)).unwrap();
        let csv = out.report.metrics_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,val_loss");
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("0,"));
    }

    #[test]
    fn mismatched_dataset_is_rejected() {
        let data = tiny_data(6);
        let spec = Preset::ElasticLif.spec(7, 4, 2);
        assert!(matches!(
            train(&spec, &data, &cfg(1)),
            Err(Error::Shape { .. })
        ));
    }
}
