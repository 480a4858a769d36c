//! Spike sparsity, event-based versus dense energy estimates, and parameter
//! memory.
//!
//! Counts cover the whole recorded batch; energies are per sample (one
//! sequence of `steps` forward steps). Gated layers count each of their four
//! gates as a unit, both for fan-out and for neuron updates.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::network::{ForwardRecord, LayerKind, NetworkSpec};
use crate::neuron::{GradientMode, Recurrence};

const BYTES_PER_PARAMETER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    /// Joules per (presynaptic spike × postsynaptic unit) event.
    pub energy_per_synaptic_event: f64,
    /// Joules per unit per time step.
    pub energy_per_neuron_update: f64,
    /// Joules per multiply-accumulate on a dense device.
    pub energy_per_mac: f64,
}

impl DeviceProfile {
    /// Loihi-like figures: 23.6 pJ per synaptic operation, 81 pJ per neuron
    /// update.
    pub fn loihi() -> Self {
        Self {
            name: "Loihi".into(),
            energy_per_synaptic_event: 23.6e-12,
            energy_per_neuron_update: 81e-12,
            energy_per_mac: 23.6e-12,
        }
    }

    /// GPU-like figures: 0.3 nJ per operation.
    pub fn gpu() -> Self {
        Self {
            name: "GPU".into(),
            energy_per_synaptic_event: 0.3e-9,
            energy_per_neuron_update: 0.3e-9,
            energy_per_mac: 0.3e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = [
            self.energy_per_synaptic_event,
            self.energy_per_neuron_update,
            self.energy_per_mac,
        ];
        if e.iter().all(|v| v.is_finite() && *v >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "device profile {:?} needs finite non-negative energies",
                self.name
            )))
        }
    }
}

/// The event-driven device running the spiking network and the dense device
/// running its non-spiking equivalent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfiles {
    pub spiking: DeviceProfile,
    pub dense: DeviceProfile,
}

impl Default for DeviceProfiles {
    fn default() -> Self {
        Self {
            spiking: DeviceProfile::loihi(),
            dense: DeviceProfile::gpu(),
        }
    }
}

impl DeviceProfiles {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("device profiles: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.spiking.validate()?;
        self.dense.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSparsity {
    pub layer: usize,
    pub kind: String,
    pub spikes: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub layer: usize,
    pub kind: String,
    pub units: usize,
    pub parameters: usize,
    pub spike_count: u64,
    pub synaptic_events: u64,
    pub neuron_updates: u64,
    pub dense_macs: u64,
    /// Joules per sample on the spiking device.
    pub spiking_energy: f64,
    /// Joules per sample on the dense device.
    pub dense_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub samples: usize,
    pub steps: usize,
    pub devices: DeviceProfiles,
    pub layers: Vec<LayerEnergy>,
    pub spiking_total: f64,
    pub dense_total: f64,
    /// `dense_total / spiking_total`; absent when the spiking total is zero.
    pub reduction: Option<f64>,
    pub parameter_count: usize,
    pub synaptic_memory_bytes: usize,
}

fn nonzero(values: &[f64]) -> u64 {
    values.iter().filter(|v| **v != 0.0).count() as u64
}

fn need_recorded(record: &ForwardRecord, spec: &NetworkSpec) -> Result<()> {
    if !record.is_recorded() {
        return Err(Error::Config(
            "profiling needs a recorded forward pass".into(),
        ));
    }
    if record.traces.len() != spec.layers.len() {
        return Err(Error::shape(
            "profiling: traces",
            spec.layers.len(),
            record.traces.len(),
        ));
    }
    Ok(())
}

/// Spike rate of every spiking layer: spikes / (steps × batch × units).
pub fn sparsity_stats(record: &ForwardRecord, spec: &NetworkSpec) -> Result<Vec<LayerSparsity>> {
    need_recorded(record, spec)?;
    let mut out = Vec::new();
    for (i, (l, tr)) in spec.layers.iter().zip(&record.traces).enumerate() {
        if let (true, Some(s)) = (l.kind.is_spiking(), tr.spikes()) {
            let spikes = nonzero(s.data());
            out.push(LayerSparsity {
                layer: i,
                kind: l.kind.label().into(),
                spikes,
                rate: spikes as f64 / s.len().max(1) as f64,
            });
        }
    }
    Ok(out)
}

fn gate_multiplicity(kind: LayerKind) -> usize {
    match kind {
        LayerKind::Slstm | LayerKind::Lstm => 4,
        _ => 1,
    }
}

fn has_recurrent(kind: LayerKind) -> bool {
    matches!(kind, LayerKind::Rlif | LayerKind::Slstm | LayerKind::Lstm)
}

/// Rows of the recurrent matrix of layer `i`.
fn recurrent_rows(spec: &NetworkSpec, i: usize) -> usize {
    match spec.recurrence {
        Recurrence::PaperLiteral => spec.layers[i - 1].width,
        Recurrence::SelfFeedback => spec.layers[i].width,
    }
}

/// Trainable parameters of layer `i`, as laid out by `NetworkParams::init`.
pub fn layer_parameter_count(spec: &NetworkSpec, i: usize) -> usize {
    if i == 0 {
        return 0;
    }
    let l = spec.layers[i];
    let (n, n_in) = (l.width, spec.layers[i - 1].width);
    let g = gate_multiplicity(l.kind);
    let rec = if has_recurrent(l.kind) {
        recurrent_rows(spec, i) * g * n
    } else {
        0
    };
    match l.kind {
        LayerKind::Input | LayerKind::Population => 0,
        LayerKind::Lif | LayerKind::Rlif => (n_in + 1) * n + rec + 2 * n,
        LayerKind::Slstm => (n_in + 1) * g * n + rec + n,
        LayerKind::Lstm => (n_in + 1) * g * n + rec,
        LayerKind::Dense { .. } => (n_in + 1) * n,
        LayerKind::Decoder => (n_in + 1) * n + n,
    }
}

pub fn parameter_count(spec: &NetworkSpec) -> usize {
    (0..spec.layers.len())
        .map(|i| layer_parameter_count(spec, i))
        .sum()
}

/// Presynaptic activity of a layer output: the number of spikes for a
/// spiking layer, every entry for a real-valued one.
fn presynaptic(kind: LayerKind, values: &[f64]) -> u64 {
    if kind.is_spiking() {
        nonzero(values)
    } else {
        values.len() as u64
    }
}

/// Activity counts of one layer, summed over a whole record.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LayerCounts {
    pub spike_count: u64,
    pub synaptic_events: u64,
    pub neuron_updates: u64,
    pub dense_macs: u64,
}

impl LayerCounts {
    pub fn add(&mut self, other: &LayerCounts) {
        self.spike_count += other.spike_count;
        self.synaptic_events += other.synaptic_events;
        self.neuron_updates += other.neuron_updates;
        self.dense_macs += other.dense_macs;
    }
}

/// Counts for layers `1..`, in order. Chunks of one dataset can be counted
/// separately and added.
pub fn count_events(record: &ForwardRecord, spec: &NetworkSpec) -> Result<Vec<LayerCounts>> {
    need_recorded(record, spec)?;
    if record.mode != GradientMode::Surrogate {
        return Err(Error::Config(
            "energy accounting needs binary spikes (surrogate mode)".into(),
        ));
    }
    let rows = (record.steps * record.batch) as u64;
    let shifted_rows = (record.steps - 1) * record.batch;
    let mut out = Vec::with_capacity(spec.layers.len() - 1);
    for i in 1..spec.layers.len() {
        let (l, prev) = (spec.layers[i], spec.layers[i - 1]);
        let g = gate_multiplicity(l.kind) as u64;
        let n = l.width as u64;
        let mut c = LayerCounts {
            spike_count: record.traces[i].spikes().map_or(0, |s| nonzero(s.data())),
            ..LayerCounts::default()
        };
        if !matches!(l.kind, LayerKind::Input | LayerKind::Population) {
            let x: &Matrix = record.traces[i - 1].output();
            c.synaptic_events = presynaptic(prev.kind, x.data()) * n * g;
            c.dense_macs = rows * prev.width as u64 * n * g;
            c.neuron_updates = rows * n * g;
        }
        if has_recurrent(l.kind) && shifted_rows > 0 {
            let (kind, src) = match spec.recurrence {
                Recurrence::PaperLiteral => (prev.kind, record.traces[i - 1].output()),
                Recurrence::SelfFeedback => (
                    l.kind,
                    record.traces[i]
                        .spikes()
                        .unwrap_or(record.traces[i].output()),
                ),
            };
            c.synaptic_events +=
                presynaptic(kind, &src.data()[..shifted_rows * src.cols()]) * n * g;
            c.dense_macs += (shifted_rows * recurrent_rows(spec, i)) as u64 * n * g;
        }
        out.push(c);
    }
    Ok(out)
}

/// Prices `counts` (from [`count_events`], possibly summed over chunks)
/// for `samples` sequences.
pub fn report_from_counts(
    spec: &NetworkSpec,
    counts: &[LayerCounts],
    samples: usize,
    devices: &DeviceProfiles,
) -> Result<EnergyReport> {
    devices.validate()?;
    if counts.len() + 1 != spec.layers.len() {
        return Err(Error::shape(
            "report_from_counts",
            spec.layers.len() - 1,
            counts.len(),
        ));
    }
    if samples == 0 {
        return Err(Error::Empty("energy report needs at least one sample"));
    }
    let (sp, de) = (&devices.spiking, &devices.dense);
    let per = samples as f64;
    let layers: Vec<LayerEnergy> = counts
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let i = k + 1;
            let l = spec.layers[i];
            LayerEnergy {
                layer: i,
                kind: l.kind.label().into(),
                units: l.width,
                parameters: layer_parameter_count(spec, i),
                spike_count: c.spike_count,
                synaptic_events: c.synaptic_events,
                neuron_updates: c.neuron_updates,
                dense_macs: c.dense_macs,
                spiking_energy: (c.synaptic_events as f64 * sp.energy_per_synaptic_event
                    + c.neuron_updates as f64 * sp.energy_per_neuron_update)
                    / per,
                dense_energy: c.dense_macs as f64 * de.energy_per_mac / per,
            }
        })
        .collect();
    let spiking_total: f64 = layers.iter().map(|l| l.spiking_energy).sum();
    let dense_total: f64 = layers.iter().map(|l| l.dense_energy).sum();
    let parameter_count = parameter_count(spec);
    Ok(EnergyReport {
        samples,
        steps: spec.steps,
        devices: devices.clone(),
        layers,
        spiking_total,
        dense_total,
        reduction: (spiking_total > 0.0).then(|| dense_total / spiking_total),
        parameter_count,
        synaptic_memory_bytes: BYTES_PER_PARAMETER * parameter_count,
    })
}

pub fn estimate_energy(
    record: &ForwardRecord,
    spec: &NetworkSpec,
    devices: &DeviceProfiles,
) -> Result<EnergyReport> {
    devices.validate()?;
    report_from_counts(spec, &count_events(record, spec)?, record.batch, devices)
}

impl EnergyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text table, energies in nJ per sample.
    pub fn to_table(&self) -> String {
        let nj = |j: f64| format!("{:.3e}", j * 1e9);
        let mut counts = std::collections::HashMap::new();
        let mut rows: Vec<[String; 3]> = vec![[
            "Architecture".into(),
            format!("{} (nJ)", self.devices.spiking.name),
            format!("{} (nJ)", self.devices.dense.name),
        ]];
        for l in &self.layers {
            let k = counts.entry(l.kind.clone()).or_insert(0);
            *k += 1;
            rows.push([
                format!("  {}{}", l.kind.to_uppercase(), k),
                nj(l.spiking_energy),
                nj(l.dense_energy),
            ]);
        }
        rows.push([
            "Total Energy".into(),
            nj(self.spiking_total),
            nj(self.dense_total),
        ]);
        let reduction = self.reduction.map_or("n/a".into(), |r| format!("x{r:.0}"));
        rows.push(["Reduction".into(), reduction, String::new()]);
        let mb = self.synaptic_memory_bytes as f64 / 1e6;
        rows.push([
            "Synaptic Memory".into(),
            format!("{mb:.3} MB"),
            String::new(),
        ]);

        let w0 = rows.iter().map(|r| r[0].len()).max().unwrap_or(0);
        let w1 = rows.iter().map(|r| r[1].len()).max().unwrap_or(0);
        let mut out = String::new();
        for r in &rows {
            let line = format!("{:<w0$} | {:>w1$} | {}", r[0], r[1], r[2]);
            let _ = writeln!(out, "{}", line.trim_end());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SeededRng;
    use crate::network::{
        forward, ForwardOptions, NetworkParams, Preset, StateSequence, TensorRole,
    };

    /// Initialized parameters with every weight and bias zeroed.
    fn silent(spec: &NetworkSpec) -> NetworkParams {
        let mut p = NetworkParams::init(spec, &mut SeededRng::new(1)).unwrap();
        for (role, t) in p.tensors_mut() {
            if role == TensorRole::Weight {
                t.fill(0.0);
            }
        }
        p
    }

    fn run(preset: Preset, scale: f64, seed: u64) -> (NetworkSpec, ForwardRecord) {
        let spec = preset.spec(8, 6, 3);
        let mut rng = SeededRng::new(seed);
        let mut p = NetworkParams::init(&spec, &mut rng).unwrap();
        p.scale(scale);
        p.project();
        let x = StateSequence::from_matrix(8, 4, Matrix::uniform(32, 1, 2.0, &mut rng).unwrap())
            .unwrap();
        let rec = forward(
            &spec,
            &p,
            &x,
            ForwardOptions::recorded(GradientMode::Surrogate),
        )
        .unwrap();
        (spec, rec)
    }

    #[test]
    fn parameter_count_matches_initialized_params() {
        for preset in Preset::ALL {
            for rec in [Recurrence::PaperLiteral, Recurrence::SelfFeedback] {
                let mut spec = preset.spec(5, 7, 3);
                spec.recurrence = rec;
                let p = NetworkParams::init(&spec, &mut SeededRng::new(1)).unwrap();
                assert_eq!(
                    parameter_count(&spec),
                    p.parameter_count(),
                    "{preset} {rec:?}"
                );
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_rates() {
        let (spec, _) = run(Preset::ElasticLif, 1.0, 1);
        let p = silent(&spec);
        let x = StateSequence::from_matrix(8, 2, Matrix::filled(16, 1, 1.0)).unwrap();
        let rec = forward(
            &spec,
            &p,
            &x,
            ForwardOptions::recorded(GradientMode::Surrogate),
        )
        .unwrap();
        let s = sparsity_stats(&rec, &spec).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|l| l.rate == 0.0 && l.spikes == 0));
    }

    #[test]
    fn rates_match_recount() {
        let (spec, rec) = run(Preset::ElasticLif, 6.0, 3);
        for l in sparsity_stats(&rec, &spec).unwrap() {
            let s = rec.traces[l.layer].spikes().unwrap();
            let mut count = 0;
            for r in 0..s.rows() {
                for c in 0..s.cols() {
                    if s.get(r, c) == 1.0 {
                        count += 1;
                    }
                }
            }
            assert_eq!(l.spikes, count);
            assert_eq!(l.rate, count as f64 / (8 * 4 * 6) as f64);
        }
    }

    #[test]
    fn totals_are_layer_sums() {
        let (spec, rec) = run(Preset::PlasticSlstm, 3.0, 5);
        let r = estimate_energy(&rec, &spec, &DeviceProfiles::default()).unwrap();
        let s: f64 = r.layers.iter().map(|l| l.spiking_energy).sum();
        let d: f64 = r.layers.iter().map(|l| l.dense_energy).sum();
        assert_eq!(s, r.spiking_total);
        assert_eq!(d, r.dense_total);
        assert_eq!(r.reduction, Some(d / s));
        assert_eq!(r.synaptic_memory_bytes, 4 * r.parameter_count);
    }

    #[test]
    fn silent_network_costs_only_neuron_updates() {
        let (spec, _) = run(Preset::ElasticLif, 1.0, 1);
        let p = silent(&spec);
        let x = StateSequence::from_matrix(8, 2, Matrix::filled(16, 1, 1.0)).unwrap();
        let rec = forward(
            &spec,
            &p,
            &x,
            ForwardOptions::recorded(GradientMode::Surrogate),
        )
        .unwrap();
        let r = estimate_energy(&rec, &spec, &DeviceProfiles::default()).unwrap();
        for l in &r.layers[1..] {
            assert_eq!(l.synaptic_events, 0, "{}", l.kind);
        }
        let e_upd = DeviceProfile::loihi().energy_per_neuron_update;
        for l in &r.layers[1..] {
            assert!(
                (l.spiking_energy - l.neuron_updates as f64 * e_upd / 2.0).abs()
                    <= 1e-12 * l.spiking_energy
            );
        }
    }

    #[test]
    fn missing_profile_is_config_error() {
        let text = r#"{"spiking": {"name": "x", "energy_per_synaptic_event": 1, "energy_per_neuron_update": 1, "energy_per_mac": 1}}"#;
        assert!(matches!(
            DeviceProfiles::from_json(text),
            Err(Error::Config(_))
        ));
        let neg = DeviceProfiles {
            spiking: DeviceProfile {
                energy_per_mac: -1.0,
                ..DeviceProfile::loihi()
            },
            ..DeviceProfiles::default()
        };
        let (spec, rec) = run(Preset::ElasticLif, 1.0, 1);
        assert!(matches!(
            estimate_energy(&rec, &spec, &neg),
            Err(Error::Config(_))
        ));
        let json = serde_json::to_string(&DeviceProfiles::default()).unwrap();
        assert_eq!(
            DeviceProfiles::from_json(&json).unwrap(),
            DeviceProfiles::default()
        );
    }

    #[test]
    fn chunk_counts_add_up() {
        let (spec, rec) = run(Preset::RoRlif, 4.0, 6);
        let whole = count_events(&rec, &spec).unwrap();
        let x = StateSequence::from_matrix(8, 4, rec.traces[0].output().clone()).unwrap();
        let p = {
            let mut rng = SeededRng::new(6);
            let mut p = NetworkParams::init(&spec, &mut rng).unwrap();
            p.scale(4.0);
            p.project();
            p
        };
        let mut sum = vec![LayerCounts::default(); whole.len()];
        for b in 0..4 {
            let xb = StateSequence::from_samples(&[&x.sample(b)], 8, 1).unwrap();
            let rb = forward(
                &spec,
                &p,
                &xb,
                ForwardOptions::recorded(GradientMode::Surrogate),
            )
            .unwrap();
            for (s, c) in sum.iter_mut().zip(count_events(&rb, &spec).unwrap()) {
                s.add(&c);
            }
        }
        assert_eq!(sum, whole);
    }

    #[test]
    fn lstm_memory_is_about_four_times_lif() {
        let lif = parameter_count(&Preset::ElasticLif.spec(10, 64, 16));
        let lstm = parameter_count(&Preset::PlasticSlstm.spec(10, 64, 16));
        let ratio = lstm as f64 / lif as f64;
        assert!((3.0..9.0).contains(&ratio), "{ratio}");
    }

    #[test]
    fn table_has_one_row_per_layer() {
        let (spec, rec) = run(Preset::RoRlif, 3.0, 2);
        let r = estimate_energy(&rec, &spec, &DeviceProfiles::default()).unwrap();
        let t = r.to_table();
        assert_eq!(t.lines().count(), 1 + r.layers.len() + 3);
        assert!(t.contains("RLIF3") && t.contains("Reduction") && t.contains("Synaptic Memory"));
        let back: EnergyReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
