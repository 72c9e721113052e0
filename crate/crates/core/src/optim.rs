//! First-order optimizers for the inner descent on the consistency loss,
//! registered by name so configs and the CLI can pick one at runtime.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::state_model::Vector;

pub trait InnerOptimizer: Send {
    fn name(&self) -> &'static str;
    /// Clear any per-solve state (moments, step counters).
    fn reset(&mut self, dim: usize);
    /// Apply one update to `phi` given the gradient at `phi`.
    fn step(&mut self, phi: &mut Vector, grad: &Vector);
}

/// `phi <- phi - lr * grad`
#[derive(Debug, Clone)]
pub struct PlainGd {
    pub lr: f64,
}

impl InnerOptimizer for PlainGd {
    fn name(&self) -> &'static str {
        "plain_gd"
    }

    fn reset(&mut self, _dim: usize) {}

    fn step(&mut self, phi: &mut Vector, grad: &Vector) {
        phi.axpy(-self.lr, grad, 1.0);
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vector,
    v: Vector,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: Vector::zeros(0),
            v: Vector::zeros(0),
            t: 0,
        }
    }
}

impl InnerOptimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn reset(&mut self, dim: usize) {
        self.m = Vector::zeros(dim);
        self.v = Vector::zeros(dim);
        self.t = 0;
    }

    fn step(&mut self, phi: &mut Vector, grad: &Vector) {
        if self.m.len() != phi.len() {
            self.reset(phi.len());
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..phi.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            phi[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

type Factory = fn(f64) -> Box<dyn InnerOptimizer>;

/// Name -> constructor table. The argument is the (initial) learning rate.
pub struct OptimizerRegistry {
    entries: BTreeMap<&'static str, Factory>,
}

impl OptimizerRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: &'static str, factory: Factory) {
        self.entries.insert(name, factory);
    }

    pub fn build(&self, name: &str, lr: f64) -> Result<Box<dyn InnerOptimizer>> {
        if !(lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        self.entries
            .get(name)
            .map(|f| f(lr))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown optimizer `{name}` (known: {})",
                    self.names().collect::<Vec<_>>().join(", ")
                ))
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.keys().copied()
    }
}

impl Default for OptimizerRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("plain_gd", |lr| Box::new(PlainGd { lr }));
        r.register("adam", |lr| Box::new(Adam::new(lr)));
        r
    }
}
