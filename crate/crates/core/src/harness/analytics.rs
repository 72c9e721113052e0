//! Running average of the Lagrangian and tracking error windows.

use crate::error::{Error, Result};

/// Left-Riemann running mean: after `j` samples the mean is
/// `(sum_{k<j} l_k tau) / (j tau)`.
#[derive(Debug, Clone, Copy)]
pub struct RunningMean {
    tau: f64,
    integral: f64,
    count: usize,
}

impl RunningMean {
    pub fn new(tau: f64) -> Self {
        Self {
            tau,
            integral: 0.0,
            count: 0,
        }
    }

    /// Adds one sample and returns `(s, mean over [0, s])`.
    pub fn push(&mut self, value: f64) -> (f64, f64) {
        self.integral += value * self.tau;
        self.count += 1;
        let s = self.count as f64 * self.tau;
        (s, self.integral / s)
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

pub fn average_lagrangian(values: &[f64], tau: f64) -> Vec<(f64, f64)> {
    let mut acc = RunningMean::new(tau);
    values.iter().map(|&v| acc.push(v)).collect()
}

/// Mean at the sample closest to `fraction` of the run (at least one sample).
pub fn mean_at_fraction(curve: &[(f64, f64)], fraction: f64) -> Option<f64> {
    if curve.is_empty() {
        return None;
    }
    let j = ((fraction * curve.len() as f64).round() as usize).clamp(1, curve.len());
    Some(curve[j - 1].1)
}

fn rms(errors: &[f64]) -> f64 {
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// RMS of `pi(x) - z` over the first and last `window` seconds.
pub fn tracking_error(readout: &[f64], target: &[f64], tau: f64, window: f64) -> Result<(f64, f64)> {
    if readout.len() != target.len() || readout.is_empty() {
        return Err(Error::Evaluation("tracking error needs equal, non-empty series".into()));
    }
    if !(window > 0.0) || !(tau > 0.0) {
        return Err(Error::Evaluation("tracking window and tau must be > 0".into()));
    }
    let n = ((window / tau).round() as usize).clamp(1, readout.len());
    let errors: Vec<f64> = readout.iter().zip(target).map(|(y, z)| y - z).collect();
    Ok((rms(&errors[..n]), rms(&errors[errors.len() - n..])))
}
