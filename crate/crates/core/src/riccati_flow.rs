//! Forward-in-time costate learning.
//!
//! At each step the costate estimate `p = mu(x; theta)` fixes the control,
//! the state derivative and `H_x`. The parameter velocity `delta_theta` is
//! then fitted so that the chain-rule derivative of `mu` agrees with
//! Hamilton's `p' = -H_x`:
//!
//! ```text
//! Omega(phi) = 1/2 |mu_x x' + mu_theta phi + H_x|^2 + eps/2 |phi|^2
//! ```
//!
//! and `theta` moves against it, `theta' = -delta_theta`.

use nalgebra::linalg::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::costate_net::{CostateArch, CostateEstimator, CostateNet, Matrix};
use crate::error::{check_len, Error, Result};
use crate::hamiltonian::{ControlProblem, Drive, TrackingProblem};
use crate::harness::signal::Signal;
use crate::optim::{InnerOptimizer, OptimizerRegistry};
use crate::state_model::{euler_step, ActivationSpec, NetworkGraph, Vector};

/// The quadratic consistency loss at one time step.
#[derive(Debug, Clone)]
pub struct OmegaSystem {
    /// `mu_x x' + H_x`
    base: Vector,
    jtheta: Matrix,
    eps: f64,
}

impl OmegaSystem {
    pub fn new(jx: &Matrix, x_dot: &Vector, jtheta: Matrix, hx: &Vector, eps: f64) -> Result<Self> {
        let n = hx.len();
        check_len("mu_x rows", n, jx.nrows())?;
        check_len("mu_x cols", x_dot.len(), jx.ncols())?;
        check_len("mu_theta rows", n, jtheta.nrows())?;
        if !(eps >= 0.0) {
            return Err(Error::Config(format!("eps must be >= 0, got {eps}")));
        }
        Ok(Self {
            base: jx * x_dot + hx,
            jtheta,
            eps,
        })
    }

    pub fn num_params(&self) -> usize {
        self.jtheta.ncols()
    }

    pub fn residual(&self, phi: &Vector) -> Vector {
        &self.base + &self.jtheta * phi
    }

    pub fn loss(&self, phi: &Vector) -> f64 {
        0.5 * self.residual(phi).norm_squared() + 0.5 * self.eps * phi.norm_squared()
    }

    pub fn gradient(&self, phi: &Vector) -> Vector {
        self.loss_and_gradient(phi).1
    }

    pub fn loss_and_gradient(&self, phi: &Vector) -> (f64, Vector) {
        let r = self.residual(phi);
        let loss = 0.5 * r.norm_squared() + 0.5 * self.eps * phi.norm_squared();
        let mut g = phi * self.eps;
        g.gemv_tr(1.0, &self.jtheta, &r, 1.0);
        (loss, g)
    }

    /// `J_theta^T J_theta + eps I`
    pub fn hessian(&self) -> Matrix {
        let m = self.num_params();
        self.jtheta.tr_mul(&self.jtheta) + Matrix::identity(m, m) * self.eps
    }

    /// Unique minimiser of the loss. With `eps > 0` this uses the
    /// `n x n` dual system `phi = -J^T (J J^T + eps I)^{-1} base`.
    pub fn closed_form_min(&self) -> Result<Vector> {
        let n = self.base.len();
        if self.eps > 0.0 {
            let gram = &self.jtheta * self.jtheta.transpose() + Matrix::identity(n, n) * self.eps;
            let chol = Cholesky::new(gram)
                .ok_or_else(|| Error::RankDeficient("dual normal matrix not positive definite".into()))?;
            let y = chol.solve(&self.base);
            return Ok(-(self.jtheta.transpose() * y));
        }
        let m = self.num_params();
        if m > n {
            return Err(Error::RankDeficient(format!(
                "eps = 0 with {m} parameters but only {n} residual rows"
            )));
        }
        let sv = self.jtheta.singular_values();
        let max = sv.max();
        let min = sv.min();
        if !(max > 0.0) || min <= max * 1e-12 {
            return Err(Error::RankDeficient(format!(
                "J_theta^T J_theta is singular (singular values in [{min:e}, {max:e}])"
            )));
        }
        let chol = Cholesky::new(self.hessian())
            .ok_or_else(|| Error::RankDeficient("normal matrix not positive definite".into()))?;
        let rhs = -(self.jtheta.transpose() * &self.base);
        Ok(chol.solve(&rhs))
    }
}

pub fn omega_loss(phi: &Vector, jx: &Matrix, jtheta: &Matrix, x_dot: &Vector, hx: &Vector, eps: f64) -> Result<f64> {
    Ok(OmegaSystem::new(jx, x_dot, jtheta.clone(), hx, eps)?.loss(phi))
}

pub fn omega_gradient(
    phi: &Vector,
    jx: &Matrix,
    jtheta: &Matrix,
    x_dot: &Vector,
    hx: &Vector,
    eps: f64,
) -> Result<Vector> {
    Ok(OmegaSystem::new(jx, x_dot, jtheta.clone(), hx, eps)?.gradient(phi))
}

pub fn omega_closed_form_min(jx: &Matrix, jtheta: &Matrix, x_dot: &Vector, hx: &Vector, eps: f64) -> Result<Vector> {
    OmegaSystem::new(jx, x_dot, jtheta.clone(), hx, eps)?.closed_form_min()
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    pub phi: Vector,
    pub final_loss: f64,
    /// Loss before each of the `n_iter` updates.
    pub losses: Vec<f64>,
}

/// Runs `n_iter` optimizer steps on the consistency loss from `init`.
pub fn inner_descent(
    init: Vector,
    system: &OmegaSystem,
    n_iter: usize,
    optimizer: &mut dyn InnerOptimizer,
) -> Result<InnerOutcome> {
    if n_iter == 0 {
        return Err(Error::Config("n_iter must be >= 1".into()));
    }
    check_len("inner descent phi", system.num_params(), init.len())?;
    optimizer.reset(init.len());
    let mut phi = init;
    let mut losses = Vec::with_capacity(n_iter);
    for iter in 0..n_iter {
        let (loss, grad) = system.loss_and_gradient(&phi);
        if !loss.is_finite() {
            return Err(Error::InnerDivergence { iter });
        }
        losses.push(loss);
        optimizer.step(&mut phi, &grad);
    }
    let final_loss = system.loss(&phi);
    if !final_loss.is_finite() {
        return Err(Error::InnerDivergence { iter: n_iter });
    }
    Ok(InnerOutcome {
        phi,
        final_loss,
        losses,
    })
}

/// Euler step of `theta' = -delta_theta`.
pub fn theta_update(theta: &Vector, delta_theta: &Vector, tau: f64) -> Vector {
    theta - delta_theta * tau
}

/// One row of the simulation trace, taken before the Euler update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub z: f64,
    pub u: Vec<f64>,
    pub pi_x: f64,
    pub lagrangian: f64,
    pub omega_final: f64,
    pub hamiltonian: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub alpha: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSettings {
    pub tau: f64,
    pub n_iter: usize,
    pub eps: f64,
    pub t0: f64,
}

impl FlowSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be > 0, got {}", self.tau)));
        }
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be >= 1".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config(format!("eps must be >= 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// State carried from one time step to the next.
pub struct ForwardFlow<P, C> {
    problem: P,
    costate: C,
    optimizer: Box<dyn InnerOptimizer>,
    settings: FlowSettings,
    x: Vector,
    /// Warm start for the next inner descent.
    phi: Vector,
    step: usize,
}

fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl<P: ControlProblem, C: CostateEstimator> ForwardFlow<P, C> {
    pub fn new(
        problem: P,
        costate: C,
        optimizer: Box<dyn InnerOptimizer>,
        settings: FlowSettings,
        x0: Vector,
    ) -> Result<Self> {
        settings.validate()?;
        check_len("initial state", problem.state_dim(), x0.len())?;
        check_len("costate output", problem.state_dim(), costate.state_dim())?;
        let phi = Vector::zeros(costate.num_params());
        Ok(Self {
            problem,
            costate,
            optimizer,
            settings,
            x: x0,
            phi,
            step: 0,
        })
    }

    pub fn problem(&self) -> &P {
        &self.problem
    }

    pub fn costate(&self) -> &C {
        &self.costate
    }

    pub fn state(&self) -> &Vector {
        &self.x
    }

    pub fn phi(&self) -> &Vector {
        &self.phi
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn settings(&self) -> &FlowSettings {
        &self.settings
    }

    pub fn time(&self) -> f64 {
        self.settings.t0 + self.step as f64 * self.settings.tau
    }

    /// Advance one Euler step.
    pub fn step(&mut self, drive: &Drive) -> Result<TraceRecord> {
        let step = self.step;
        let diverged = |what: &str| Error::Diverged {
            step,
            what: what.to_string(),
        };
        if !all_finite(&self.x) {
            return Err(diverged("non-finite state"));
        }
        if !all_finite(self.costate.params()) {
            return Err(diverged("non-finite costate parameters"));
        }
        let s = &self.settings;
        let x = &self.x;

        let p = self.costate.forward(x, &drive.u)?;
        if !all_finite(&p) {
            return Err(diverged("non-finite costate"));
        }
        let alpha = self.problem.optimal_control(x, &p, drive)?;
        let x_dot = self.problem.dynamics(x, &alpha, drive)?;
        let lagrangian = self.problem.lagrangian(x, &alpha, drive);
        let hamiltonian = p.dot(&x_dot) + lagrangian;
        let hx = self.problem.dynamics_vjp_x(x, &alpha, drive, &p)?
            + self.problem.lagrangian_grad_x(x, &alpha, drive);

        let jx = self.costate.jacobian_x(x, &drive.u)?;
        let jtheta = self.costate.jacobian_theta(x, &drive.u)?;
        let system = OmegaSystem::new(&jx, &x_dot, jtheta, &hx, s.eps)?;
        let outcome = inner_descent(self.phi.clone(), &system, s.n_iter, self.optimizer.as_mut())
            .map_err(|e| match e {
                Error::InnerDivergence { iter } => {
                    diverged(&format!("inner descent blew up at iteration {iter}"))
                }
                other => other,
            })?;

        let theta_new = theta_update(self.costate.params(), &outcome.phi, s.tau);
        let x_new = euler_step(x, &x_dot, s.tau)?;
        if !all_finite(&theta_new) || !all_finite(&x_new) {
            return Err(diverged("non-finite update"));
        }

        let record = TraceRecord {
            step,
            t: s.t0 + step as f64 * s.tau,
            z: drive.z,
            u: drive.u.clone(),
            pi_x: self.problem.readout(x),
            lagrangian,
            omega_final: outcome.final_loss,
            hamiltonian,
            x: x.as_slice().to_vec(),
            p: p.as_slice().to_vec(),
            alpha: alpha.as_slice().to_vec(),
        };

        self.costate.set_params(theta_new)?;
        self.x = x_new;
        self.phi = outcome.phi;
        self.step += 1;
        Ok(record)
    }
}

/// The tracking setup driven by a signal, built from a [`SimConfig`].
pub struct Simulation {
    flow: ForwardFlow<TrackingProblem, CostateNet>,
    signal: Signal,
    n_steps: usize,
}

impl Simulation {
    pub fn from_config(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let signal = Signal::new(config.signal.clone(), config.t0, config.horizon_end())?;
        let d = signal.input_dim();
        let net = &config.network;
        let graph = NetworkGraph::fully_connected(net.neurons, d, net.self_loops)?;
        let act = ActivationSpec::with_leak(net.activation, net.leak_scale)?;
        let problem = TrackingProblem::new(graph, act, config.lagrangian)?;
        let layout = problem.layout();

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut x0 = Vector::zeros(layout.state_dim());
        for i in layout.params() {
            x0[i] = if net.init_scale > 0.0 {
                rand::Rng::gen_range(&mut rng, -net.init_scale..=net.init_scale)
            } else {
                0.0
            };
        }
        let arch = CostateArch {
            state_dim: layout.state_dim(),
            signal_dim: if config.costate.feed_input { d } else { 0 },
            hidden_width: config.costate.hidden_width,
            hidden: config.costate.activation,
        };
        let costate = CostateNet::random(arch, config.costate.init, &mut rng)?;
        let optimizer = OptimizerRegistry::default().build(&config.optimizer, config.learning_rate)?;
        let settings = FlowSettings {
            tau: config.tau,
            n_iter: config.n_iter,
            eps: config.epsilon,
            t0: config.t0,
        };
        Ok(Self {
            flow: ForwardFlow::new(problem, costate, optimizer, settings, x0)?,
            signal,
            n_steps: config.n_t,
        })
    }

    pub fn flow(&self) -> &ForwardFlow<TrackingProblem, CostateNet> {
        &self.flow
    }

    pub fn signal(&self) -> &Signal {
        &self.signal
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn is_done(&self) -> bool {
        self.flow.step_index() >= self.n_steps
    }

    /// One step of the main loop, or `None` once all steps have run.
    pub fn advance(&mut self) -> Option<Result<TraceRecord>> {
        if self.is_done() {
            return None;
        }
        let drive = match self.signal.sample(self.flow.time()) {
            Ok(d) => d,
            Err(e) => return Some(Err(e)),
        };
        Some(self.flow.step(&drive))
    }
}

impl Iterator for Simulation {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        self.advance()
    }
}

/// Runs the whole configured simulation and collects the trace.
pub fn run_simulation(config: &SimConfig) -> Result<Vec<TraceRecord>> {
    Simulation::from_config(config)?.collect()
}
