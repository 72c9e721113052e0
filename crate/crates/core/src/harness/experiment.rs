//! Named experiments and the registry the CLI dispatches through.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::SimConfig;
use crate::error::{Error, Result};
use crate::harness::analytics::{mean_at_fraction, tracking_error, RunningMean};
use crate::harness::output::{Metrics, TraceWriter};
use crate::harness::plot::{save_line_plot, Series};
use crate::lq_analytic::{lq_asymptote, lq_closed_form, lq_forward_flow_bridge, LqParams};
use crate::riccati_flow::Simulation;

/// Values that take precedence over the preset or config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_t: Option<usize>,
    pub tau: Option<f64>,
    pub n_iter: Option<usize>,
    pub learning_rate: Option<f64>,
    pub epsilon: Option<f64>,
    pub optimizer: Option<String>,
}

impl Overrides {
    pub fn apply(&self, c: &mut SimConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.n_t {
            c.n_t = v;
        }
        if let Some(v) = self.tau {
            c.tau = v;
        }
        if let Some(v) = self.n_iter {
            c.n_iter = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.epsilon {
            c.epsilon = v;
        }
        if let Some(v) = &self.optimizer {
            c.optimizer = v.clone();
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub config_file: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub overrides: Overrides,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub summary: String,
    pub metrics: Option<Metrics>,
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &str;
    fn summary(&self) -> &str;
    fn run(&self, opts: &RunOptions) -> Result<RunReport>;
}

/// A CTRNN tracking run built from a preset.
pub struct TrackingExperiment {
    name: String,
    summary: String,
    preset: fn() -> SimConfig,
}

impl TrackingExperiment {
    pub fn new(name: &str, summary: &str, preset: fn() -> SimConfig) -> Self {
        Self {
            name: name.into(),
            summary: summary.into(),
            preset,
        }
    }

    /// Preset, then config file (replaces the preset), then overrides.
    pub fn resolve(&self, opts: &RunOptions) -> Result<SimConfig> {
        let mut c = match &opts.config_file {
            Some(p) => SimConfig::load(p)?,
            None => (self.preset)(),
        };
        opts.overrides.apply(&mut c);
        c.validate()?;
        Ok(c)
    }
}

impl Experiment for TrackingExperiment {
    fn name(&self) -> &str {
        &self.name
    }

    fn summary(&self) -> &str {
        &self.summary
    }

    fn run(&self, opts: &RunOptions) -> Result<RunReport> {
        let config = self.resolve(opts)?;
        let run = run_tracking(&config, opts.out_dir.as_deref())?;
        Ok(RunReport {
            summary: run.summary,
            metrics: Some(run.metrics),
        })
    }
}

/// Riccati coefficient learned through the generic update on the scalar LQ problem.
pub struct LqExperiment {
    pub params: LqParams,
    pub tau: f64,
    pub steps: usize,
    pub theta0: f64,
}

impl Default for LqExperiment {
    fn default() -> Self {
        Self {
            params: LqParams::unit(),
            tau: 0.01,
            steps: 3000,
            theta0: 0.0,
        }
    }
}

impl Experiment for LqExperiment {
    fn name(&self) -> &str {
        "lq"
    }

    fn summary(&self) -> &str {
        "scalar LQ: learned Riccati coefficient vs closed form"
    }

    fn run(&self, opts: &RunOptions) -> Result<RunReport> {
        let tau = opts.overrides.tau.unwrap_or(self.tau);
        let steps = opts.overrides.n_t.unwrap_or(self.steps);
        let r = run_lq(&self.params, tau, steps, self.theta0, opts.out_dir.as_deref())?;
        Ok(RunReport {
            summary: r.summary(),
            metrics: None,
        })
    }
}

pub struct ExperimentRegistry {
    entries: BTreeMap<String, Box<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, exp: Box<dyn Experiment>) {
        self.entries.insert(exp.name().to_string(), exp);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Experiment> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown experiment `{name}` (known: {})",
                self.names().collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn Experiment> {
        self.entries.values().map(|b| b.as_ref())
    }
}

impl Default for ExperimentRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(TrackingExperiment::new(
            "a",
            "sine target, no input",
            SimConfig::case_a,
        )));
        r.register(Box::new(TrackingExperiment::new(
            "b",
            "sign of a sine input",
            SimConfig::case_b,
        )));
        r.register(Box::new(TrackingExperiment::new(
            "c",
            "sine vs square wave classification",
            SimConfig::case_c,
        )));
        r.register(Box::new(LqExperiment::default()));
        r
    }
}

/// Tracking windows span one signal period, at most half the horizon.
pub fn tracking_window(config: &SimConfig) -> f64 {
    let horizon = config.n_t as f64 * config.tau;
    let period = if config.signal.frequency > 0.0 {
        1.0 / config.signal.frequency
    } else {
        horizon
    };
    period.min(0.5 * horizon).max(config.tau)
}

#[derive(Debug)]
pub struct TrackingRun {
    pub metrics: Metrics,
    pub summary: String,
}

/// Runs the simulation, streaming the trace and writing artifacts when
/// `out` is given. Divergence is reported as an error after the metrics
/// file (with `diverged = true`) has been written.
pub fn run_tracking(config: &SimConfig, out: Option<&Path>) -> Result<TrackingRun> {
    let started = Instant::now();
    let mut sim = Simulation::from_config(config)?;
    let layout = sim.flow().problem().layout();
    let (n, c) = (layout.state_dim(), layout.control_dim());

    let mut writer = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.toml"), config.to_toml_string()?)?;
            Some(TraceWriter::new(
                std::io::BufWriter::new(fs::File::create(dir.join("trace.csv"))?),
                n,
                c,
            )?)
        }
        None => None,
    };

    let mut mean = RunningMean::new(config.tau);
    let mut curve = Vec::with_capacity(config.n_t);
    let mut readout = Vec::with_capacity(config.n_t);
    let mut target = Vec::with_capacity(config.n_t);
    let mut failure = None;
    while let Some(rec) = sim.advance() {
        match rec {
            Ok(r) => {
                curve.push(mean.push(r.lagrangian));
                readout.push(r.pi_x);
                target.push(r.z);
                if let Some(w) = writer.as_mut() {
                    w.write(&r)?;
                }
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(w) = writer.as_mut() {
        w.flush()?;
    }

    let (rms_first, rms_last) = if readout.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        tracking_error(&readout, &target, config.tau, tracking_window(config))?
    };
    let metrics = Metrics {
        final_avg_lagrangian: curve.last().map_or(f64::NAN, |p| p.1),
        avg_lagrangian_at_10pct: mean_at_fraction(&curve, 0.1).unwrap_or(f64::NAN),
        rms_first,
        rms_last,
        diverged: failure.is_some(),
        wall_time_s: started.elapsed().as_secs_f64(),
        steps: curve.len(),
    };

    if let Some(dir) = out {
        metrics.write(&dir.join("metrics.json"))?;
        let times: Vec<f64> = curve.iter().map(|p| config.t0 + p.0 - config.tau).collect();
        save_line_plot(
            &dir.join("response.svg"),
            "response vs target",
            "s",
            &[
                Series {
                    label: "target",
                    color: "gray",
                    points: times.iter().copied().zip(target.iter().copied()).collect(),
                },
                Series {
                    label: "response",
                    color: "crimson",
                    points: times.iter().copied().zip(readout.iter().copied()).collect(),
                },
            ],
        )?;
        save_line_plot(
            &dir.join("avg_lagrangian.svg"),
            "average Lagrangian",
            "s",
            &[Series {
                label: "mean of l over [0, s]",
                color: "navy",
                points: curve.clone(),
            }],
        )?;
        sim.flow().costate().save_snapshot(&dir.join("theta_final.txt"))?;
    }

    if let Some(e) = failure {
        return Err(e);
    }
    let summary = format!(
        "steps={} avg_lagrangian(10%)={:.6e} avg_lagrangian(T)={:.6e} rms_first={:.4} rms_last={:.4} wall={:.1}s",
        metrics.steps,
        metrics.avg_lagrangian_at_10pct,
        metrics.final_avg_lagrangian,
        metrics.rms_first,
        metrics.rms_last,
        metrics.wall_time_s
    );
    Ok(TrackingRun { metrics, summary })
}

#[derive(Debug, Clone)]
pub struct LqRun {
    pub s: Vec<f64>,
    pub numeric: Vec<f64>,
    pub closed_form: Vec<f64>,
    pub asymptote: f64,
    pub max_abs_error: f64,
}

impl LqRun {
    pub fn summary(&self) -> String {
        format!(
            "steps={} theta(T)={:.9} asymptote={:.9} max|numeric-closed_form|={:.3e}",
            self.s.len() - 1,
            self.numeric.last().copied().unwrap_or(f64::NAN),
            self.asymptote,
            self.max_abs_error
        )
    }
}

/// Integrates the Riccati coefficient forward with the generic update and
/// compares it with the closed form. Writes `lq.csv` and `lq.svg` when `out` is given.
pub fn run_lq(params: &LqParams, tau: f64, steps: usize, theta0: f64, out: Option<&Path>) -> Result<LqRun> {
    let traj = lq_forward_flow_bridge(params, theta0, tau, steps)?;
    let asymptote = lq_asymptote(params)?;
    let s: Vec<f64> = (0..=steps).map(|j| j as f64 * tau).collect();
    // the closed form assumes theta(0) = 0
    let closed_form: Vec<f64> = s.iter().map(|&t| lq_closed_form(t, params)).collect::<Result<_>>()?;
    let max_abs_error = traj
        .thetas
        .iter()
        .zip(&closed_form)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("lq.csv"))?;
        w.write_record(["s", "theta_numeric", "theta_closed_form", "asymptote"])?;
        for j in 0..s.len() {
            w.write_record([
                s[j].to_string(),
                traj.thetas[j].to_string(),
                closed_form[j].to_string(),
                asymptote.to_string(),
            ])?;
        }
        w.flush()?;
        save_line_plot(
            &dir.join("lq.svg"),
            "Riccati coefficient",
            "s",
            &[
                Series {
                    label: "closed form",
                    color: "gray",
                    points: s.iter().copied().zip(closed_form.iter().copied()).collect(),
                },
                Series {
                    label: "numeric",
                    color: "crimson",
                    points: s.iter().copied().zip(traj.thetas.iter().copied()).collect(),
                },
            ],
        )?;
    }

    Ok(LqRun {
        s,
        numeric: traj.thetas,
        closed_form,
        asymptote,
        max_abs_error,
    })
}
