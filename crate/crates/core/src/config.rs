//! Network description and its file schema.
//!
//! Configurations are TOML documents. Unknown keys are rejected everywhere so
//! that a misspelled parameter never silently falls back to a default.

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::transfer::TransferFunction;
use crate::weights::WeightLaw;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NeuronModel {
    /// Analog formal neuron with logistic transfer of the given gain.
    AnalogFormal {
        #[serde(default = "unit_gain")]
        gain: f64,
    },
    /// Binary formal neuron (Heaviside transfer).
    BinaryFormal,
    /// Discrete-time leaky integrate-and-fire neuron. The potential is
    /// stored shifted by `-threshold`; `reset < 0 < threshold`.
    IntegrateFire { leak: f64, reset: f64 },
}

fn unit_gain() -> f64 {
    1.0
}

impl Default for NeuronModel {
    fn default() -> Self {
        NeuronModel::AnalogFormal { gain: 1.0 }
    }
}

impl NeuronModel {
    pub fn analog(gain: f64) -> Self {
        NeuronModel::AnalogFormal { gain }
    }

    /// Validated integrate-and-fire model for a given threshold.
    pub fn integrate_fire(leak: f64, reset: f64, threshold: f64) -> Result<Self> {
        let m = NeuronModel::IntegrateFire { leak, reset };
        m.validate(threshold)?;
        Ok(m)
    }

    pub fn transfer(&self) -> TransferFunction<f64> {
        match *self {
            NeuronModel::AnalogFormal { gain } => TransferFunction::Logistic { gain },
            NeuronModel::BinaryFormal | NeuronModel::IntegrateFire { .. } => TransferFunction::Heaviside,
        }
    }

    pub fn validate(&self, threshold: f64) -> Result<()> {
        match *self {
            NeuronModel::AnalogFormal { gain } if !(gain > 0.0 && gain.is_finite()) => {
                Err(Error::config(format!("logistic gain must be positive (got {gain})")))
            }
            NeuronModel::IntegrateFire { leak, .. } if !(leak > 0.0 && leak < 1.0) => {
                Err(Error::config(format!("leak must lie in (0, 1) (got {leak})")))
            }
            NeuronModel::IntegrateFire { reset, .. } if !(reset < 0.0 && 0.0 < threshold) => Err(Error::config(
                format!("discrete integrate-and-fire needs reset < 0 < threshold (got reset {reset}, threshold {threshold})"),
            )),
            _ => Ok(()),
        }
    }

    /// Leak map applied to the unshifted potential `v`.
    #[inline]
    pub fn leak_map(&self, v: f64, threshold: f64) -> f64 {
        match *self {
            NeuronModel::IntegrateFire { leak, reset } => leak_map(v, leak, reset, threshold),
            _ => 0.0,
        }
    }
}

/// `phi(v) = leak * v` if `reset / leak < v < threshold`, else `reset`.
#[inline]
pub fn leak_map(v: f64, leak: f64, reset: f64, threshold: f64) -> f64 {
    if reset / leak < v && v < threshold {
        leak * v
    } else {
        reset
    }
}

/// Law of the i.i.d. initial potentials `u_i(0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialLaw {
    PointMass { value: f64 },
    Gaussian { mean: f64, std: f64 },
}

impl Default for InitialLaw {
    fn default() -> Self {
        InitialLaw::Gaussian { mean: 0.0, std: 1.0 }
    }
}

impl InitialLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            InitialLaw::PointMass { value } => value,
            InitialLaw::Gaussian { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            InitialLaw::PointMass { .. } => 0.0,
            InitialLaw::Gaussian { std, .. } => std * std,
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        match *self {
            InitialLaw::PointMass { value } => value,
            InitialLaw::Gaussian { mean, std } => mean + std * rng.sample::<f64, _>(StandardNormal),
        }
    }
}

/// All quenched and statistical parameters of one network family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    #[serde(default)]
    pub model: NeuronModel,
    /// Number of neurons N.
    pub n: usize,
    /// Number of update steps T; trajectories cover `t = 0..=T`.
    pub horizon: usize,
    pub threshold: f64,
    /// Standard deviation of the synaptic noise.
    pub noise: f64,
    pub weights: WeightLaw,
    #[serde(default)]
    pub initial: InitialLaw,
    #[serde(default)]
    pub seed: u64,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("n must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("horizon must be >= 1"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config(format!("noise must be >= 0 (got {})", self.noise)));
        }
        if !self.threshold.is_finite() {
            return Err(Error::config("threshold must be finite"));
        }
        if let InitialLaw::Gaussian { std, .. } = self.initial {
            if std < 0.0 {
                return Err(Error::config("initial std must be >= 0"));
            }
        }
        self.model.validate(self.threshold)?;
        self.weights.validate(self.n)
    }

    pub fn transfer(&self) -> TransferFunction<f64> {
        self.model.transfer()
    }

    /// `(mean, variance)` scales of a Gaussian law, `None` for dilute laws.
    pub fn gaussian_scales(&self) -> Option<(f64, f64)> {
        match self.weights {
            WeightLaw::Gaussian { mean, variance } => Some((mean, variance)),
            WeightLaw::DiluteTwoPoint { .. } => None,
        }
    }
}

/// Parses a TOML string into `T`, rejecting unknown keys.
pub fn from_toml_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
        n = 100
        horizon = 20
        threshold = 0.0
        noise = 0.1
        seed = 7

        [model]
        kind = "analog-formal"
        gain = 1.0

        [weights]
        law = "gaussian"
        mean = 0.0
        variance = 4.0

        [initial]
        law = "point-mass"
        value = 0.3
    "#;

    #[test]
    fn parses_documented_schema() {
        let c: NetworkConfig = from_toml_str(SAMPLE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.n, 100);
        assert_eq!(c.weights, WeightLaw::gaussian(0.0, 4.0));
        assert_eq!(c.initial, InitialLaw::PointMass { value: 0.3 });
    }

    #[test]
    fn rejects_unknown_keys_with_location() {
        let bad = SAMPLE.replace("noise = 0.1", "noise = 0.1\nJbar = 1.0");
        let err = from_toml_str::<NetworkConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("Jbar"), "{err}");
        assert!(err.contains("line"), "{err}");
        let bad = SAMPLE.replace("variance = 4.0", "variance = 4.0\nvar = 1.0");
        assert!(from_toml_str::<NetworkConfig>(&bad).is_err());
    }

    #[test]
    fn integrate_fire_invariants() {
        assert!(NeuronModel::integrate_fire(0.5, -1.0, 1.0).is_ok());
        assert!(NeuronModel::integrate_fire(1.0, -1.0, 1.0).is_err());
        assert!(NeuronModel::integrate_fire(0.5, 0.5, 1.0).is_err());
        assert!(NeuronModel::integrate_fire(0.5, -1.0, -0.1).is_err());
    }

    #[test]
    fn leak_map_branches() {
        // inside (reset/leak, threshold) = (-2, 1): leak applies
        assert_eq!(leak_map(0.5, 0.5, -1.0, 1.0), 0.25);
        // at or above threshold: reset
        assert_eq!(leak_map(1.5, 0.5, -1.0, 1.0), -1.0);
        assert_eq!(leak_map(1.0, 0.5, -1.0, 1.0), -1.0);
        // below reset / leak: clipped to reset
        assert_eq!(leak_map(-3.0, 0.5, -1.0, 1.0), -1.0);
    }

    #[test]
    fn size_and_horizon_must_be_positive() {
        let mut c: NetworkConfig = from_toml_str(SAMPLE).unwrap();
        c.n = 0;
        assert!(c.validate().is_err());
        c.n = 1;
        c.horizon = 0;
        assert!(c.validate().is_err());
        c.horizon = 1;
        c.noise = -1.0;
        assert!(c.validate().is_err());
    }
}
