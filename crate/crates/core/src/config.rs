//! Run configuration, serialised as TOML.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costate_net::CostateInit;
use crate::error::{Error, Result};
use crate::hamiltonian::LagrangianParams;
use crate::harness::signal::{SignalKind, SignalSpec};
use crate::optim::OptimizerRegistry;
use crate::state_model::Activation;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub neurons: usize,
    #[serde(default = "yes")]
    pub self_loops: bool,
    pub activation: Activation,
    #[serde(default = "one")]
    pub leak_scale: f64,
    /// Initial `w`, `b`, `k` drawn uniformly from `[-init_scale, init_scale]`.
    #[serde(default = "half")]
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostateSpec {
    pub hidden_width: usize,
    pub activation: Activation,
    /// Concatenate the input signal to the state at the costate net's input.
    #[serde(default)]
    pub feed_input: bool,
    #[serde(default)]
    pub init: CostateInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Euler step.
    pub tau: f64,
    /// Number of time steps.
    pub n_t: usize,
    /// Inner descent iterations per step.
    pub n_iter: usize,
    /// Inner learning rate (initial rate for adam).
    pub learning_rate: f64,
    /// Weight of the `|phi|^2` term in the consistency loss.
    pub epsilon: f64,
    pub optimizer: String,
    pub seed: u64,
    #[serde(default)]
    pub t0: f64,
    pub lagrangian: LagrangianParams,
    pub network: NetworkSpec,
    pub costate: CostateSpec,
    pub signal: SignalSpec,
}

fn yes() -> bool {
    true
}
fn one() -> f64 {
    1.0
}
fn half() -> f64 {
    0.5
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.n_t == 0 {
            return Err(Error::Config("n_t must be >= 1".into()));
        }
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be >= 1".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !OptimizerRegistry::default().names().any(|n| n == self.optimizer) {
            return Err(Error::Config(format!("unknown optimizer `{}`", self.optimizer)));
        }
        if self.network.neurons == 0 || self.costate.hidden_width == 0 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        if !(self.network.init_scale >= 0.0) {
            return Err(Error::Config("network.init_scale must be >= 0".into()));
        }
        self.lagrangian.validate()?;
        self.signal.validate()
    }

    /// End of the simulated horizon, `t0 + n_t * tau`.
    pub fn horizon_end(&self) -> f64 {
        self.t0 + self.n_t as f64 * self.tau
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Sine tracking with no input.
    pub fn case_a() -> Self {
        Self {
            tau: 0.5,
            n_t: 10_000,
            n_iter: 100,
            learning_rate: 1e-5,
            epsilon: 1e3,
            optimizer: "plain_gd".into(),
            seed: 1,
            t0: 0.0,
            lagrangian: LagrangianParams {
                q: 1e4,
                r1: 1e3,
                r2: 1e5,
                regularize_params: true,
            },
            network: NetworkSpec {
                neurons: 2,
                self_loops: true,
                activation: Activation::Tanh,
                leak_scale: 0.5,
                init_scale: 0.5,
            },
            costate: CostateSpec {
                hidden_width: 20,
                activation: Activation::Relu,
                feed_input: false,
                init: CostateInit::default(),
            },
            signal: SignalSpec {
                kind: SignalKind::Sine,
                frequency: 0.001,
                ..SignalSpec::default()
            },
        }
    }

    /// Sign of a sine input.
    pub fn case_b() -> Self {
        Self {
            n_t: 15_000,
            learning_rate: 1e-3,
            epsilon: 1e4,
            optimizer: "adam".into(),
            lagrangian: LagrangianParams {
                q: 1e5,
                r1: 1e3,
                r2: 1e2,
                regularize_params: true,
            },
            costate: CostateSpec {
                hidden_width: 20,
                activation: Activation::Tanh,
                feed_input: true,
                init: CostateInit::default(),
            },
            signal: SignalSpec {
                kind: SignalKind::SignOfSine,
                frequency: 0.002,
                ..SignalSpec::default()
            },
            ..Self::case_a()
        }
    }

    /// Sine vs square wave classification.
    pub fn case_c() -> Self {
        Self {
            n_t: 20_000,
            signal: SignalSpec {
                kind: SignalKind::PiecewiseWaves,
                frequency: 0.002,
                amplitude: 0.5,
                psi: 2000.0,
                ..SignalSpec::default()
            },
            ..Self::case_b()
        }
    }
}
