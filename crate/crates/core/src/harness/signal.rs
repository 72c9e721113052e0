//! Input and target signals for the tracking experiments.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::Drive;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    /// No input, zero target.
    None,
    /// No input, target `A sin(2 pi f s)`.
    Sine,
    /// Input `A sin(2 pi f s)`, target its sign.
    SignOfSine,
    /// Input alternates between a sine and a square wave, target says which.
    PiecewiseWaves,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub kind: SignalKind,
    /// Hz.
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    /// Time constant of the `1 - exp(-s / psi)` ramp (piecewise only).
    #[serde(default = "default_psi")]
    pub psi: f64,
    /// Segment durations are uniform in `[min_periods, max_periods]` periods.
    #[serde(default = "default_min_periods")]
    pub min_periods: f64,
    #[serde(default = "default_max_periods")]
    pub max_periods: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

fn default_frequency() -> f64 {
    0.001
}
fn default_amplitude() -> f64 {
    1.0
}
fn default_psi() -> f64 {
    2000.0
}
fn default_min_periods() -> f64 {
    2.0
}
fn default_max_periods() -> f64 {
    6.0
}
fn default_seed() -> u64 {
    7
}

impl Default for SignalSpec {
    fn default() -> Self {
        Self {
            kind: SignalKind::None,
            frequency: default_frequency(),
            amplitude: default_amplitude(),
            psi: default_psi(),
            min_periods: default_min_periods(),
            max_periods: default_max_periods(),
            seed: default_seed(),
        }
    }
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind != SignalKind::None && !(self.frequency > 0.0) {
            return Err(Error::Config(format!(
                "signal frequency must be > 0, got {}",
                self.frequency
            )));
        }
        if self.kind == SignalKind::PiecewiseWaves {
            if !(self.psi > 0.0) {
                return Err(Error::Config("signal psi must be > 0".into()));
            }
            if !(self.min_periods > 0.0) || self.max_periods < self.min_periods {
                return Err(Error::Config(
                    "segment periods must satisfy 0 < min_periods <= max_periods".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        match self.kind {
            SignalKind::None | SignalKind::Sine => 0,
            SignalKind::SignOfSine | SignalKind::PiecewiseWaves => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wave {
    Sine,
    Square,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub wave: Wave,
}

/// A signal bound to its time domain `[start, end]`.
#[derive(Debug, Clone)]
pub struct Signal {
    spec: SignalSpec,
    start: f64,
    end: f64,
    segments: Vec<Segment>,
}

impl Signal {
    pub fn new(spec: SignalSpec, start: f64, end: f64) -> Result<Self> {
        spec.validate()?;
        if !(end >= start) {
            return Err(Error::Config(format!("signal domain [{start}, {end}] is empty")));
        }
        let segments = if spec.kind == SignalKind::PiecewiseWaves {
            schedule(&spec, start, end)
        } else {
            Vec::new()
        };
        Ok(Self {
            spec,
            start,
            end,
            segments,
        })
    }

    pub fn spec(&self) -> &SignalSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    fn segment_at(&self, s: f64) -> &Segment {
        let idx = self.segments.partition_point(|seg| seg.end <= s);
        &self.segments[idx.min(self.segments.len() - 1)]
    }

    pub fn sample(&self, s: f64) -> Result<Drive> {
        if !(s >= self.start && s <= self.end) {
            return Err(Error::Domain {
                s,
                start: self.start,
                end: self.end,
            });
        }
        let sp = &self.spec;
        let phase = 2.0 * PI * sp.frequency * s;
        Ok(match sp.kind {
            SignalKind::None => Drive::target(0.0),
            SignalKind::Sine => Drive::target(sp.amplitude * phase.sin()),
            SignalKind::SignOfSine => {
                let u = sp.amplitude * phase.sin();
                Drive {
                    u: vec![u],
                    z: if u >= 0.0 { 1.0 } else { -1.0 },
                }
            }
            SignalKind::PiecewiseWaves => {
                let ramp = 1.0 - (-s / sp.psi).exp();
                let (raw, z) = match self.segment_at(s).wave {
                    Wave::Sine => (sp.amplitude * phase.sin(), 1.0),
                    Wave::Square => {
                        let k = (2.0 * sp.frequency * s).floor();
                        let sign = if k.rem_euclid(2.0) == 0.0 { 1.0 } else { -1.0 };
                        (-sp.amplitude * sign, -1.0)
                    }
                };
                Drive {
                    u: vec![ramp * raw],
                    z,
                }
            }
        })
    }
}

/// Alternating sine/square segments, starting with a sine, covering
/// `[start, end]` without gaps; the last one is clipped at `end`.
fn schedule(spec: &SignalSpec, start: f64, end: f64) -> Vec<Segment> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let period = 1.0 / spec.frequency;
    let mut segments = Vec::new();
    let mut t = start;
    let mut wave = Wave::Sine;
    loop {
        let periods = if spec.max_periods > spec.min_periods {
            rng.gen_range(spec.min_periods..spec.max_periods)
        } else {
            spec.min_periods
        };
        let seg_end = (t + periods * period).min(end);
        segments.push(Segment {
            start: t,
            end: seg_end,
            wave,
        });
        if seg_end >= end {
            break;
        }
        t = seg_end;
        wave = match wave {
            Wave::Sine => Wave::Square,
            Wave::Square => Wave::Sine,
        };
    }
    segments
}
