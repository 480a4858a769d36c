use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use spikereg::materials::{
    build_dataset, DatasetMeta, DatasetSplits, Experiment, GenConfig, Samples, SplitSizes,
};
use spikereg::network::{forward, ForwardOptions, NetworkParams, NetworkSpec, Preset};
use spikereg::neuron::GradientMode;
use spikereg::profiling::{
    count_events, report_from_counts, sparsity_stats, DeviceProfiles, EnergyReport, LayerCounts,
    LayerSparsity,
};
use spikereg::training::gradcheck::{
    decoder_gradient_check, preset_gradient_check, GradCheckOptions, GradCheckReport,
};
use spikereg::training::{
    evaluate, predict_samples, train, AdamWConfig, SplitMetrics, TrainConfig,
};
use spikereg::{snapshot, Error, Result};

use crate::config::{write_json, RunConfig, Split};

/// Gradient checks above this fail the run.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn default_preset(e: Experiment) -> Preset {
    match e {
        Experiment::Elastic => Preset::ElasticLif,
        Experiment::RambergOsgood => Preset::RoRlif,
        Experiment::Plasticity => Preset::PlasticSlstm,
    }
}

pub fn gen(mut cfg: RunConfig) -> Result<()> {
    let experiment = match (cfg.experiment, &cfg.material) {
        (Some(e), Some(m)) if m.experiment() != e => {
            return Err(Error::Config(format!(
                "material constants are for {}, not {e}",
                m.experiment()
            )));
        }
        (Some(e), _) => e,
        (None, Some(m)) => m.experiment(),
        (None, None) => return Err(Error::Config("gen needs --experiment".into())),
    };
    let seed = cfg.resolve_seed()?;
    let mut g = GenConfig::new(experiment, seed);
    g.steps = cfg.dt.unwrap_or(g.steps);
    g.sizes = SplitSizes {
        train: cfg.train_size.unwrap_or(g.sizes.train),
        val: cfg.val_size.unwrap_or(g.sizes.val),
        test: cfg.test_size.unwrap_or(g.sizes.test),
    };
    g.constants = cfg.material.unwrap_or(g.constants);
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("data"));

    cfg.experiment = Some(experiment);
    cfg.dt = Some(g.steps);
    cfg.train_size = Some(g.sizes.train);
    cfg.val_size = Some(g.sizes.val);
    cfg.test_size = Some(g.sizes.test);
    cfg.material = Some(g.constants);
    cfg.out = Some(out.clone());

    let data = build_dataset(&g)?;
    data.write(&out)?;
    cfg.write_echo(&out)?;
    println!(
        "wrote {} dataset ({} / {} / {} samples, {} steps) to {}",
        experiment,
        g.sizes.train,
        g.sizes.val,
        g.sizes.test,
        g.steps,
        out.display()
    );
    Ok(())
}

/// Training settings shared by `train` and `eval`, with defaults filled in.
fn train_config(cfg: &mut RunConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let opt = AdamWConfig {
        learning_rate: cfg.learning_rate.unwrap_or(d.optimizer.learning_rate),
        weight_decay: cfg.weight_decay.unwrap_or(d.optimizer.weight_decay),
        ..d.optimizer
    };
    let clip = cfg.clip_norm.unwrap_or(d.clip_norm.unwrap_or(0.0));
    let tc = TrainConfig {
        epochs: cfg.epochs.unwrap_or(d.epochs),
        batch_size: cfg.batch_size.unwrap_or(d.batch_size),
        optimizer: opt,
        seed: cfg.resolve_seed()?,
        preset: cfg.preset,
        loss: cfg.loss.unwrap_or(d.loss),
        gradient_mode: cfg.gradient_mode.unwrap_or(d.gradient_mode),
        reset: cfg.reset.unwrap_or(d.reset),
        clip_norm: (clip != 0.0).then_some(clip),
        chunk_size: cfg.chunk_size.unwrap_or(d.chunk_size),
        threads: cfg.resolve_threads(),
    };
    tc.validate()?;
    cfg.epochs = Some(tc.epochs);
    cfg.batch_size = Some(tc.batch_size);
    cfg.learning_rate = Some(opt.learning_rate);
    cfg.weight_decay = Some(opt.weight_decay);
    cfg.loss = Some(tc.loss);
    cfg.gradient_mode = Some(tc.gradient_mode);
    cfg.reset = Some(tc.reset);
    cfg.clip_norm = Some(clip);
    cfg.chunk_size = Some(tc.chunk_size);
    Ok(tc)
}

fn read_data(cfg: &mut RunConfig) -> Result<DatasetSplits> {
    let dir = cfg.data.clone().unwrap_or_else(|| PathBuf::from("data"));
    cfg.data = Some(dir.clone());
    DatasetSplits::read(&dir)
}

#[derive(Serialize)]
struct GradCheckOutput {
    tolerance: f64,
    preset: GradCheckReport,
    decoder: Option<GradCheckReport>,
    max_rel_error: f64,
}

fn grad_check(preset: Preset, cfg: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let opts = GradCheckOptions::default();
    let rep = preset_gradient_check(preset, cfg.recurrence.unwrap_or_default(), seed, &opts)?;
    let decoder = match preset {
        Preset::PlasticLstm => None,
        _ => Some(decoder_gradient_check(
            seed,
            &GradCheckOptions {
                mode: GradientMode::Surrogate,
                ..opts
            },
        )?),
    };
    let max = decoder
        .iter()
        .map(|d| d.max_rel_error)
        .fold(rep.max_rel_error, f64::max);
    let result = GradCheckOutput {
        tolerance: GRAD_CHECK_TOLERANCE,
        preset: rep,
        decoder,
        max_rel_error: max,
    };
    write_json(&out.join("gradcheck.json"), &result)?;
    println!("gradient check: max relative error {max:.3e} (tolerance {GRAD_CHECK_TOLERANCE:e})");
    if !(max < GRAD_CHECK_TOLERANCE) {
        return Err(Error::Divergence(format!(
            "gradient check failed: max relative error {max:e}"
        )));
    }
    Ok(())
}

pub fn train_cmd(mut cfg: RunConfig) -> Result<()> {
    let data = read_data(&mut cfg)?;
    let meta = &data.meta;
    if let Some(e) = cfg.experiment.filter(|e| *e != meta.experiment) {
        return Err(Error::Config(format!(
            "dataset holds {} samples, not {e}",
            meta.experiment
        )));
    }
    cfg.experiment = Some(meta.experiment);
    let steps = cfg.dt.unwrap_or(meta.steps);
    if steps != meta.steps {
        return Err(Error::Config(format!(
            "--dt {steps} but the dataset has {} steps",
            meta.steps
        )));
    }
    cfg.dt = Some(steps);
    let preset = cfg
        .preset
        .unwrap_or_else(|| default_preset(meta.experiment));
    cfg.preset = Some(preset);
    let (layers, n_u, n_o) = (
        cfg.layers.unwrap_or(3),
        cfg.n_u.unwrap_or(64),
        cfg.n_o.unwrap_or(16),
    );
    let recurrence = cfg.recurrence.unwrap_or_default();
    (cfg.layers, cfg.n_u, cfg.n_o, cfg.recurrence) =
        (Some(layers), Some(n_u), Some(n_o), Some(recurrence));
    let mut spec = preset.spec_with_depth(steps, layers, n_u, n_o);
    spec.recurrence = recurrence;
    spec.validate()?;
    let tc = train_config(&mut cfg)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    cfg.out = Some(out.clone());
    ensure_dir(&out)?;
    cfg.write_echo(&out)?;

    if cfg.grad_check == Some(true) {
        grad_check(preset, &cfg, tc.seed, &out)?;
    }

    let outcome = train(&spec, &data, &tc)?;
    let rep = &outcome.report;
    write_json(&out.join("report.json"), rep)?;
    let path = out.join("metrics.csv");
    std::fs::write(&path, rep.metrics_csv()).map_err(|e| Error::io(&path, e))?;
    snapshot::write(&out.join("snapshot.bin"), &spec, &outcome.best)?;
    println!(
        "best epoch {} (val loss {:.6e}); test error all steps {:.6e}, last step {:.6e}",
        rep.best_epoch, rep.best_val_loss, rep.test.all_steps, rep.test.last_step
    );
    match &rep.diverged {
        Some(why) => Err(Error::Divergence(format!("training diverged: {why}"))),
        None => Ok(()),
    }
}

fn pick(data: &DatasetSplits, split: Split) -> &Samples {
    match split {
        Split::Train => &data.train,
        Split::Val => &data.val,
        Split::Test => &data.test,
    }
}

/// Loads the snapshot and dataset split named by `cfg`.
fn load_inputs(cfg: &mut RunConfig) -> Result<(NetworkSpec, NetworkParams, DatasetSplits, Split)> {
    let path = cfg
        .snapshot
        .clone()
        .ok_or_else(|| Error::Config("--snapshot is required".into()))?;
    let (spec, params) = snapshot::read(&path)?;
    let data = read_data(cfg)?;
    if spec.steps != data.meta.steps {
        return Err(Error::shape(
            "snapshot vs dataset steps",
            data.meta.steps,
            spec.steps,
        ));
    }
    cfg.experiment = Some(data.meta.experiment);
    cfg.dt = Some(spec.steps);
    let split = cfg.split.unwrap_or(Split::Test);
    cfg.split = Some(split);
    Ok((spec, params, data, split))
}

/// Recorded inference forward passes over `samples`, `chunk` sequences at
/// a time.
fn for_each_recorded(
    spec: &NetworkSpec,
    params: &NetworkParams,
    samples: &Samples,
    meta: &DatasetMeta,
    chunk: usize,
    mut f: impl FnMut(&spikereg::network::ForwardRecord) -> Result<()>,
) -> Result<()> {
    let idx: Vec<usize> = (0..samples.len()).collect();
    for c in idx.chunks(chunk) {
        let (x, _) = samples.sequences(c, meta)?;
        let rec = forward(
            spec,
            params,
            &x,
            ForwardOptions::recorded(GradientMode::Surrogate),
        )?;
        f(&rec)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalOutput {
    split: Split,
    samples: usize,
    steps: usize,
    #[serde(flatten)]
    metrics: SplitMetrics,
    sparsity: Vec<LayerSparsity>,
}

pub fn eval(mut cfg: RunConfig) -> Result<()> {
    let (spec, params, data, split) = load_inputs(&mut cfg)?;
    let tc = train_config(&mut cfg)?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("eval"));
    cfg.out = Some(out.clone());
    ensure_dir(&out)?;
    cfg.write_echo(&out)?;
    let (samples, meta) = (pick(&data, split), &data.meta);

    let metrics = evaluate(&spec, &params, samples, meta, &tc)?;
    let pred = predict_samples(&spec, &params, samples, meta, &tc)?;
    let mut csv = String::from("sample,t,strain,stress_ref,stress_pred\n");
    for i in 0..samples.len() {
        let strain = meta.strain(samples.inputs.row(i));
        for t in 0..spec.steps {
            writeln!(
                csv,
                "{i},{t},{},{},{}",
                strain[t],
                samples.targets.get(i, t),
                pred.get(i, t)
            )
            .unwrap();
        }
    }
    let path = out.join("predictions.csv");
    std::fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;

    let mut sparsity: Vec<LayerSparsity> = Vec::new();
    let mut slots = 0u64;
    for_each_recorded(&spec, &params, samples, meta, tc.chunk_size, |rec| {
        let s = sparsity_stats(rec, &spec)?;
        if sparsity.is_empty() {
            sparsity = s;
        } else {
            sparsity
                .iter_mut()
                .zip(&s)
                .for_each(|(a, b)| a.spikes += b.spikes);
        }
        slots += (rec.steps * rec.batch) as u64;
        Ok(())
    })?;
    for s in &mut sparsity {
        s.rate = s.spikes as f64 / (slots * spec.layers[s.layer].width as u64) as f64;
    }

    let result = EvalOutput {
        split,
        samples: samples.len(),
        steps: spec.steps,
        metrics,
        sparsity,
    };
    write_json(&out.join("metrics.json"), &result)?;
    println!(
        "{} split ({} samples): loss {:.6e}, error all steps {:.6e}, last step {:.6e}",
        split.name(),
        samples.len(),
        metrics.loss,
        metrics.all_steps,
        metrics.last_step
    );
    Ok(())
}

/// Event counts over a whole split, summed chunk by chunk.
pub fn profile_split(
    spec: &NetworkSpec,
    params: &NetworkParams,
    samples: &Samples,
    meta: &DatasetMeta,
    chunk: usize,
    devices: &DeviceProfiles,
) -> Result<EnergyReport> {
    let mut total: Option<Vec<LayerCounts>> = None;
    for_each_recorded(spec, params, samples, meta, chunk, |rec| {
        let c = count_events(rec, spec)?;
        match &mut total {
            Some(t) => t.iter_mut().zip(&c).for_each(|(a, b)| a.add(b)),
            None => total = Some(c),
        }
        Ok(())
    })?;
    let total = total.ok_or(Error::Empty("profiling needs at least one sample"))?;
    report_from_counts(spec, &total, samples.len(), devices)
}

pub fn profile(mut cfg: RunConfig, devices_file: Option<&Path>) -> Result<()> {
    if let Some(p) = devices_file {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        cfg.devices = Some(DeviceProfiles::from_json(&text)?);
    }
    let devices = cfg.devices.clone().unwrap_or_default();
    devices.validate()?;
    cfg.devices = Some(devices.clone());
    let (spec, params, data, split) = load_inputs(&mut cfg)?;
    let chunk = cfg.chunk_size.unwrap_or(TrainConfig::default().chunk_size);
    if chunk == 0 {
        return Err(Error::Config("chunk size must be positive".into()));
    }
    cfg.chunk_size = Some(chunk);
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("profile"));
    cfg.out = Some(out.clone());
    ensure_dir(&out)?;
    cfg.write_echo(&out)?;

    let report = profile_split(
        &spec,
        &params,
        pick(&data, split),
        &data.meta,
        chunk,
        &devices,
    )?;
    let path = out.join("energy.json");
    std::fs::write(&path, report.to_json() + "\n").map_err(|e| Error::io(&path, e))?;
    let table = report.to_table();
    let path = out.join("energy.txt");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    Ok(())
}
