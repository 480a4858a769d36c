use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuron::Recurrence;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Tanh => crate::linalg::vmath::tanh(z),
            Activation::Sigmoid => crate::neuron::sigmoid(z),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerKind {
    /// Constant current injection of the real-valued input.
    Input,
    Lif,
    Rlif,
    Slstm,
    /// Conventional LSTM, for the non-spiking baseline.
    Lstm,
    Dense {
        #[serde(default)]
        activation: Activation,
    },
    /// Non-resetting leaky integrators; `width` counts all of them, i.e.
    /// `output_features × n_o`.
    Decoder,
    /// Mean over each group of decoder neurons; `width = output_features`.
    Population,
}

impl LayerKind {
    /// Whether the layer emits binary spikes.
    pub fn is_spiking(self) -> bool {
        matches!(self, LayerKind::Lif | LayerKind::Rlif | LayerKind::Slstm)
    }

    pub fn label(self) -> &'static str {
        match self {
            LayerKind::Input => "input",
            LayerKind::Lif => "lif",
            LayerKind::Rlif => "rlif",
            LayerKind::Slstm => "slstm",
            LayerKind::Lstm => "lstm",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Decoder => "decoder",
            LayerKind::Population => "population",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(flatten)]
    pub kind: LayerKind,
    pub width: usize,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, width: usize) -> Self {
        Self { kind, width }
    }
}

/// Ordered layer list describing a sequence-to-sequence regression network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_features: usize,
    pub output_features: usize,
    pub steps: usize,
    #[serde(default)]
    pub recurrence: Recurrence,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("network spec: {msg}")));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.layers.len() < 2 {
            return bad("need an input layer and at least one more layer".into());
        }
        if let Some(l) = self.layers.iter().find(|l| l.width == 0) {
            return bad(format!("{} layer has zero width", l.kind.label()));
        }
        let first = self.layers[0];
        if first.kind != LayerKind::Input || first.width != self.input_features {
            return bad(format!(
                "first layer must be the input with width {} (got {} x {})",
                self.input_features,
                first.kind.label(),
                first.width
            ));
        }
        if self.layers[1..].iter().any(|l| l.kind == LayerKind::Input) {
            return bad("input layer may only appear first".into());
        }
        let last = self.layers[self.layers.len() - 1];
        match last.kind {
            LayerKind::Population => {
                let dec = self.layers[self.layers.len() - 2];
                if dec.kind != LayerKind::Decoder {
                    return bad("population layer must follow a decoder".into());
                }
                if last.width != self.output_features {
                    return bad(format!(
                        "population width {} != output features {}",
                        last.width, self.output_features
                    ));
                }
                if dec.width % last.width != 0 {
                    return bad(format!(
                        "decoder width {} not divisible into {} populations",
                        dec.width, last.width
                    ));
                }
            }
            LayerKind::Dense { .. } => {
                if last.width != self.output_features {
                    return bad(format!(
                        "output width {} != output features {}",
                        last.width, self.output_features
                    ));
                }
            }
            other => {
                return bad(format!(
                    "network must end in population or dense, not {}",
                    other.label()
                ))
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.kind == LayerKind::Decoder
                && self.layers.get(i + 1).map(|n| n.kind) != Some(LayerKind::Population)
            {
                return bad("decoder must be followed by population".into());
            }
            if l.kind == LayerKind::Population && i + 1 != self.layers.len() {
                return bad("population must be the last layer".into());
            }
        }
        Ok(())
    }

    /// Decoder neurons per output feature, if the network has a decoder.
    pub fn population_size(&self) -> Option<usize> {
        let n = self.layers.len();
        (self.layers[n - 1].kind == LayerKind::Population)
            .then(|| self.layers[n - 2].width / self.layers[n - 1].width)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: NetworkSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("network spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }
}

/// The experiment topologies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Three LIF layers, decoder, population.
    ElasticLif,
    /// Three RLIF layers, decoder, population.
    RoRlif,
    /// Three spiking LSTM layers, decoder, population.
    PlasticSlstm,
    /// Three LSTM layers, a tanh dense layer and an identity dense output.
    PlasticLstm,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::ElasticLif,
        Preset::RoRlif,
        Preset::PlasticSlstm,
        Preset::PlasticLstm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ElasticLif => "elastic-lif",
            Preset::RoRlif => "ro-rlif",
            Preset::PlasticSlstm => "plastic-slstm",
            Preset::PlasticLstm => "plastic-lstm",
        }
    }

    pub fn hidden_kind(self) -> LayerKind {
        match self {
            Preset::ElasticLif => LayerKind::Lif,
            Preset::RoRlif => LayerKind::Rlif,
            Preset::PlasticSlstm => LayerKind::Slstm,
            Preset::PlasticLstm => LayerKind::Lstm,
        }
    }

    /// Builds a single-input, single-output topology with `hidden` layers of
    /// width `n_u` and `n_o` decoder neurons.
    pub fn spec_with_depth(
        self,
        steps: usize,
        hidden: usize,
        n_u: usize,
        n_o: usize,
    ) -> NetworkSpec {
        let mut layers = vec![LayerSpec::new(LayerKind::Input, 1)];
        layers.extend((0..hidden).map(|_| LayerSpec::new(self.hidden_kind(), n_u)));
        match self {
            Preset::PlasticLstm => {
                layers.push(LayerSpec::new(
                    LayerKind::Dense {
                        activation: Activation::Tanh,
                    },
                    n_u,
                ));
                layers.push(LayerSpec::new(
                    LayerKind::Dense {
                        activation: Activation::Identity,
                    },
                    1,
                ));
            }
            _ => {
                layers.push(LayerSpec::new(LayerKind::Decoder, n_o));
                layers.push(LayerSpec::new(LayerKind::Population, 1));
            }
        }
        NetworkSpec {
            input_features: 1,
            output_features: 1,
            steps,
            recurrence: Recurrence::PaperLiteral,
            layers,
        }
    }

    pub fn spec(self, steps: usize, n_u: usize, n_o: usize) -> NetworkSpec {
        self.spec_with_depth(steps, 3, n_u, n_o)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown preset '{s}'")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for p in Preset::ALL {
            p.spec(5, 8, 4).validate().unwrap();
        }
    }

    #[test]
    fn json_round_trip_and_schema() {
        let spec = Preset::PlasticLstm.spec(100, 16, 4);
        let text = spec.to_json();
        assert!(text.contains("\"kind\": \"dense\""));
        assert!(text.contains("\"activation\": \"tanh\""));
        assert_eq!(NetworkSpec::from_json(&text).unwrap(), spec);
    }

    #[test]
    fn hand_written_json() {
        let text = r#"{
            "input_features": 1, "output_features": 2, "steps": 4,
            "recurrence": "self",
            "layers": [
                {"kind": "input", "width": 1},
                {"kind": "rlif", "width": 8},
                {"kind": "decoder", "width": 6},
                {"kind": "population", "width": 2}
            ]
        }"#;
        let spec = NetworkSpec::from_json(text).unwrap();
        assert_eq!(spec.recurrence, Recurrence::SelfFeedback);
        assert_eq!(spec.population_size(), Some(3));
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = Preset::ElasticLif.spec(5, 8, 4);
        s.layers.swap(4, 5);
        assert!(s.validate().is_err());

        let mut s = Preset::ElasticLif.spec(5, 8, 4);
        s.layers[0].width = 2;
        assert!(s.validate().is_err());

        let mut s = Preset::ElasticLif.spec(5, 8, 4);
        s.layers[2].width = 0;
        assert!(s.validate().is_err());

        let mut s = Preset::ElasticLif.spec(5, 8, 4);
        s.layers[4].width = 3;
        s.output_features = 2;
        s.layers[5].width = 2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn preset_names_parse() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }
}
