//! Scalar linear-quadratic problem: `f = A x + B a`, `l = Q x^2/2 + R a^2/2`.
//!
//! Hamilton's equations for this problem are unstable forward in time. The
//! Riccati coefficient `theta` of the linear costate `p = theta x` obeys
//! `theta' = (B^2/R) theta^2 - 2 A theta - Q`; integrating the sign-flipped
//! equation forward from `theta = 0` converges to the infinite-horizon
//! solution `lambda_1 R / B^2`.

use crate::costate_net::{CostateEstimator, Matrix};
use crate::error::{check_len, Error, Result};
use crate::hamiltonian::{ControlProblem, Drive};
use crate::riccati_flow::{theta_update, OmegaSystem};
use crate::state_model::Vector;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
}

impl LqParams {
    pub fn new(a: f64, b: f64, q: f64, r: f64) -> Result<Self> {
        if !(q > 0.0) || !(r > 0.0) {
            return Err(Error::Config(format!("LQ needs Q > 0 and R > 0 (Q={q}, R={r})")));
        }
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Config("LQ drift and gain must be finite".into()));
        }
        Ok(Self { a, b, q, r })
    }

    pub fn unit() -> Self {
        Self {
            a: 0.0,
            b: 1.0,
            q: 1.0,
            r: 1.0,
        }
    }

    /// Growth rate of the unstable Hamiltonian mode, `sqrt(A^2 + B^2 Q / R)`.
    pub fn hamilton_rate(&self) -> f64 {
        (self.a * self.a + self.b * self.b * self.q / self.r).sqrt()
    }

    /// `lambda_{1,2} = A +- sqrt(A^2 + Q B^2 / R)`
    pub fn eigenvalues(&self) -> (f64, f64) {
        let w = self.hamilton_rate();
        (self.a + w, self.a - w)
    }

    fn require_gain(&self) -> Result<()> {
        if self.b == 0.0 {
            Err(Error::Evaluation("closed form needs B != 0".into()))
        } else {
            Ok(())
        }
    }
}

pub fn lq_hamiltonian(x: f64, rho: f64, p: &LqParams) -> f64 {
    p.q * x * x / 2.0 - p.b * p.b * rho * rho / (2.0 * p.r) + p.a * x * rho
}

/// `(x', p') = (-B^2 p / R + A x, -Q x - A p)`
pub fn lq_hamilton_rhs(x: f64, costate: f64, p: &LqParams) -> (f64, f64) {
    (
        -p.b * p.b * costate / p.r + p.a * x,
        -p.q * x - p.a * costate,
    )
}

pub fn lq_riccati_rhs(theta: f64, p: &LqParams) -> f64 {
    p.b * p.b / p.r * theta * theta - 2.0 * p.a * theta - p.q
}

pub fn lq_time_reversed_rhs(theta: f64, p: &LqParams) -> f64 {
    -lq_riccati_rhs(theta, p)
}

/// Solution of the time-reversed Riccati equation with `theta(0) = 0`.
pub fn lq_closed_form(s: f64, p: &LqParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::Evaluation(format!("closed form needs s >= 0, got {s}")));
    }
    p.require_gain()?;
    let (l1, l2) = p.eigenvalues();
    // divide numerator and denominator by e^{l1 s}; l2 - l1 < 0 keeps this bounded
    let e = ((l2 - l1) * s).exp();
    let den = l2 - l1 * e;
    if den.abs() < 1e-300 {
        return Err(Error::Evaluation(format!("closed form denominator vanishes at s={s}")));
    }
    Ok(p.r / (p.b * p.b) * l1 * l2 * (1.0 - e) / den)
}

/// Infinite-horizon limit `lambda_1 R / B^2`.
pub fn lq_asymptote(p: &LqParams) -> Result<f64> {
    p.require_gain()?;
    Ok(p.eigenvalues().0 * p.r / (p.b * p.b))
}

/// Classic fourth-order Runge-Kutta step.
pub fn rk4_step<const N: usize>(y: [f64; N], dt: f64, f: impl Fn([f64; N]) -> [f64; N]) -> [f64; N] {
    let add = |a: [f64; N], b: [f64; N], h: f64| -> [f64; N] { std::array::from_fn(|i| a[i] + h * b[i]) };
    let k1 = f(y);
    let k2 = f(add(y, k1, dt / 2.0));
    let k3 = f(add(y, k2, dt / 2.0));
    let k4 = f(add(y, k3, dt));
    std::array::from_fn(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonSample {
    pub t: f64,
    pub x: f64,
    pub p: f64,
}

/// RK4 integration of the LQ Hamilton equations forward from `(x0, p0)`.
pub fn integrate_hamilton(params: &LqParams, x0: f64, p0: f64, dt: f64, steps: usize) -> Vec<HamiltonSample> {
    let mut out = Vec::with_capacity(steps + 1);
    let mut y = [x0, p0];
    out.push(HamiltonSample { t: 0.0, x: x0, p: p0 });
    for k in 1..=steps {
        y = rk4_step(y, dt, |[x, p]| {
            let (dx, dp) = lq_hamilton_rhs(x, p, params);
            [dx, dp]
        });
        out.push(HamiltonSample {
            t: k as f64 * dt,
            x: y[0],
            p: y[1],
        });
    }
    out
}

/// Least-squares slope of `ln |(x, p)|` against time over the final third.
pub fn fit_growth_rate(traj: &[HamiltonSample]) -> Result<f64> {
    let tail = &traj[traj.len() * 2 / 3..];
    if tail.len() < 2 {
        return Err(Error::Evaluation("trajectory too short to fit a rate".into()));
    }
    let pts: Vec<(f64, f64)> = tail
        .iter()
        .map(|s| (s.t, (s.x * s.x + s.p * s.p).sqrt().ln()))
        .collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ml = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|(t, l)| (t - mt) * (l - ml)).sum();
    let var: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    if !(var > 0.0) || !cov.is_finite() {
        return Err(Error::Evaluation("degenerate trajectory for rate fit".into()));
    }
    Ok(cov / var)
}

/// The scalar LQ problem behind the generic [`ControlProblem`] interface.
#[derive(Debug, Clone, Copy)]
pub struct ScalarLq(pub LqParams);

impl ControlProblem for ScalarLq {
    fn state_dim(&self) -> usize {
        1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &Vector, alpha: &Vector, _drive: &Drive) -> Result<Vector> {
        check_len("lq state", 1, x.len())?;
        check_len("lq control", 1, alpha.len())?;
        Ok(Vector::from_element(1, self.0.a * x[0] + self.0.b * alpha[0]))
    }

    fn dynamics_vjp_x(&self, _x: &Vector, _alpha: &Vector, _drive: &Drive, p: &Vector) -> Result<Vector> {
        Ok(p * self.0.a)
    }

    fn dynamics_vjp_alpha(&self, _x: &Vector, _alpha: &Vector, _drive: &Drive, p: &Vector) -> Result<Vector> {
        Ok(p * self.0.b)
    }

    fn lagrangian(&self, x: &Vector, alpha: &Vector, _drive: &Drive) -> f64 {
        self.0.q * x[0] * x[0] / 2.0 + self.0.r * alpha[0] * alpha[0] / 2.0
    }

    fn lagrangian_grad_x(&self, x: &Vector, _alpha: &Vector, _drive: &Drive) -> Vector {
        x * self.0.q
    }

    fn lagrangian_grad_alpha(&self, _x: &Vector, alpha: &Vector, _drive: &Drive) -> Vector {
        alpha * self.0.r
    }

    fn optimal_control(&self, _x: &Vector, p: &Vector, _drive: &Drive) -> Result<Vector> {
        check_len("lq costate", 1, p.len())?;
        Ok(p * (-self.0.b / self.0.r))
    }
}

/// `mu(x; theta) = theta x` on a scalar state.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCostate {
    theta: Vector,
}

impl LinearCostate {
    pub fn new(theta: f64) -> Self {
        Self {
            theta: Vector::from_element(1, theta),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta[0]
    }
}

impl CostateEstimator for LinearCostate {
    fn state_dim(&self) -> usize {
        1
    }

    fn num_params(&self) -> usize {
        1
    }

    fn params(&self) -> &Vector {
        &self.theta
    }

    fn set_params(&mut self, theta: Vector) -> Result<()> {
        check_len("linear costate theta", 1, theta.len())?;
        self.theta = theta;
        Ok(())
    }

    fn forward(&self, x: &Vector, _u: &[f64]) -> Result<Vector> {
        check_len("linear costate x", 1, x.len())?;
        Ok(x * self.theta[0])
    }

    fn jacobian_x(&self, _x: &Vector, _u: &[f64]) -> Result<Matrix> {
        Ok(Matrix::from_element(1, 1, self.theta[0]))
    }

    fn jacobian_theta(&self, x: &Vector, _u: &[f64]) -> Result<Matrix> {
        check_len("linear costate x", 1, x.len())?;
        Ok(Matrix::from_element(1, 1, x[0]))
    }
}

/// `delta_theta` produced by the generic consistency loss (with `eps = 0`)
/// for the linear costate on the LQ problem, evaluated at state `x`.
pub fn generic_delta_theta(params: &LqParams, theta: f64, x: f64) -> Result<f64> {
    let problem = ScalarLq(*params);
    let mu = LinearCostate::new(theta);
    let xv = Vector::from_element(1, x);
    let drive = Drive::target(0.0);
    let p = mu.forward(&xv, &[])?;
    let alpha = problem.optimal_control(&xv, &p, &drive)?;
    let x_dot = problem.dynamics(&xv, &alpha, &drive)?;
    let hx = problem.hamiltonian_grad_x(&xv, &p, &drive)?;
    let system = OmegaSystem::new(
        &mu.jacobian_x(&xv, &[])?,
        &x_dot,
        mu.jacobian_theta(&xv, &[])?,
        &hx,
        0.0,
    )?;
    Ok(system.closed_form_min()?[0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BridgeTrajectory {
    pub tau: f64,
    /// `n_steps + 1` values, starting at `theta0`.
    pub thetas: Vec<f64>,
    /// `delta_theta` used at each step.
    pub deltas: Vec<f64>,
}

/// Drives `theta` with the generic consistency-loss minimiser and the
/// time-reversed update on the scalar LQ problem.
///
/// `delta_theta` does not depend on `x` (for `x != 0`), so the flow is
/// evaluated at the fixed probe state `x = 1`. Stable Euler integration
/// needs roughly `tau < R / (B^2 |theta_max|)`.
pub fn lq_forward_flow_bridge(params: &LqParams, theta0: f64, tau: f64, n_steps: usize) -> Result<BridgeTrajectory> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("tau must be > 0, got {tau}")));
    }
    let mut thetas = Vec::with_capacity(n_steps + 1);
    let mut deltas = Vec::with_capacity(n_steps);
    let mut theta = Vector::from_element(1, theta0);
    thetas.push(theta0);
    for step in 0..n_steps {
        let delta = generic_delta_theta(params, theta[0], 1.0)?;
        theta = theta_update(&theta, &Vector::from_element(1, delta), tau);
        if !theta[0].is_finite() {
            return Err(Error::Diverged {
                step,
                what: "Riccati coefficient left the finite range".into(),
            });
        }
        deltas.push(delta);
        thetas.push(theta[0]);
    }
    Ok(BridgeTrajectory {
        tau,
        thetas,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hamiltonian_substitution() {
        let u = LqParams::unit();
        assert_eq!(lq_hamiltonian(0.0, 0.0, &u), 0.0);
        assert_eq!(lq_hamiltonian(1.0, 1.0, &u), 0.0);
    }

    #[test]
    fn hamilton_rhs_substitution() {
        let u = LqParams::unit();
        assert_eq!(lq_hamilton_rhs(0.0, 0.0, &u), (0.0, 0.0));
        assert_eq!(lq_hamilton_rhs(1.0, 0.0, &u), (0.0, -1.0));
    }

    #[test]
    fn riccati_rhs_values() {
        let u = LqParams::unit();
        assert_eq!(lq_riccati_rhs(0.0, &u), -1.0);
        assert_eq!(lq_time_reversed_rhs(0.0, &u), 1.0);
        assert_eq!(lq_riccati_rhs(1.0, &u), 0.0);
        let p = LqParams::new(0.3, -1.2, 2.0, 0.7).unwrap();
        for th in [-3.0, 0.1, 2.5] {
            assert_eq!(lq_riccati_rhs(th, &p) + lq_time_reversed_rhs(th, &p), 0.0);
        }
    }

    #[test]
    fn closed_form_is_tanh_for_unit_params() {
        let u = LqParams::unit();
        assert_eq!(lq_closed_form(0.0, &u).unwrap(), 0.0);
        for s in [0.1, 0.5, 1.0, 3.0, 10.0, 800.0] {
            assert_relative_eq!(lq_closed_form(s, &u).unwrap(), s.tanh(), epsilon = 1e-14);
        }
        assert_eq!(lq_asymptote(&u).unwrap(), 1.0);
        let (l1, _) = u.eigenvalues();
        let far = lq_closed_form(20.0 / l1, &u).unwrap();
        assert!((far - 1.0).abs() < 1e-6);
    }

    #[test]
    fn parameter_validation() {
        assert!(LqParams::new(1.0, 1.0, 0.0, 1.0).is_err());
        assert!(LqParams::new(1.0, 1.0, 1.0, -1.0).is_err());
        let p = LqParams::new(1.0, 0.0, 1.0, 1.0).unwrap();
        assert!(lq_closed_form(1.0, &p).is_err());
        assert!(lq_asymptote(&p).is_err());
        assert!(lq_closed_form(-1.0, &LqParams::unit()).is_err());
    }

    #[test]
    fn generic_costate_derivative_reduces_to_lq() {
        let p = LqParams::new(0.4, 1.3, 2.0, 0.5).unwrap();
        let pb = ScalarLq(p);
        let (x, c) = (0.7, -1.1);
        let got = pb
            .costate_derivative(&Vector::from_element(1, x), &Vector::from_element(1, c), &Drive::target(0.0))
            .unwrap();
        assert_relative_eq!(got[0], -p.q * x - p.a * c, epsilon = 1e-14);
        assert_relative_eq!(got[0], lq_hamilton_rhs(x, c, &p).1, epsilon = 1e-14);
    }

    #[test]
    fn bridge_fixed_point_is_constant() {
        let u = LqParams::unit();
        let tr = lq_forward_flow_bridge(&u, 1.0, 0.01, 200).unwrap();
        assert!(tr.thetas.iter().all(|t| (t - 1.0).abs() < 1e-10));
    }

    #[test]
    fn rk4_exact_on_linear_decay() {
        let mut y = [1.0];
        for _ in 0..100 {
            y = rk4_step(y, 0.01, |[v]| [-v]);
        }
        assert_relative_eq!(y[0], (-1.0f64).exp(), epsilon = 1e-10);
    }
}
