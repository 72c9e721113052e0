//! Lagrangian, pseudo-Hamiltonian and Hamilton's costate equation for
//! control problems whose control enters linearly and is penalised
//! quadratically, so the minimising control has a closed form.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::state_model::{
    ctrnn_vjp_x, state_derivative, ActivationSpec, ControlVector, NetworkGraph, StateLayout,
    Vector,
};

/// One sample of the exogenous signals at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct Drive {
    /// Input fed to the network (may be empty).
    pub u: Vec<f64>,
    /// Tracking target.
    pub z: f64,
}

impl Drive {
    pub fn target(z: f64) -> Self {
        Self { u: Vec::new(), z }
    }
}

/// A control problem `x' = f(x, a, s)`, `l(a, x, s)` whose pseudo-Hamiltonian
/// `p . f + l` is minimised in closed form.
pub trait ControlProblem {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;

    /// Scalar output compared against the tracking target.
    fn readout(&self, x: &Vector) -> f64 {
        x[0]
    }

    fn dynamics(&self, x: &Vector, alpha: &Vector, drive: &Drive) -> Result<Vector>;
    /// `p^T df/dx`
    fn dynamics_vjp_x(&self, x: &Vector, alpha: &Vector, drive: &Drive, p: &Vector) -> Result<Vector>;
    /// `p^T df/da`
    fn dynamics_vjp_alpha(&self, x: &Vector, alpha: &Vector, drive: &Drive, p: &Vector)
        -> Result<Vector>;

    fn lagrangian(&self, x: &Vector, alpha: &Vector, drive: &Drive) -> f64;
    fn lagrangian_grad_x(&self, x: &Vector, alpha: &Vector, drive: &Drive) -> Vector;
    fn lagrangian_grad_alpha(&self, x: &Vector, alpha: &Vector, drive: &Drive) -> Vector;

    /// `argmin_a p . f(x, a) + l(a, x)`
    fn optimal_control(&self, x: &Vector, p: &Vector, drive: &Drive) -> Result<Vector>;

    fn pseudo_hamiltonian(&self, x: &Vector, p: &Vector, alpha: &Vector, drive: &Drive) -> Result<f64> {
        check_len("costate", self.state_dim(), p.len())?;
        Ok(p.dot(&self.dynamics(x, alpha, drive)?) + self.lagrangian(x, alpha, drive))
    }

    fn pseudo_hamiltonian_grad_alpha(
        &self,
        x: &Vector,
        p: &Vector,
        alpha: &Vector,
        drive: &Drive,
    ) -> Result<Vector> {
        Ok(self.dynamics_vjp_alpha(x, alpha, drive, p)? + self.lagrangian_grad_alpha(x, alpha, drive))
    }

    fn hamiltonian_value(&self, x: &Vector, p: &Vector, drive: &Drive) -> Result<f64> {
        let alpha = self.optimal_control(x, p, drive)?;
        self.pseudo_hamiltonian(x, p, &alpha, drive)
    }

    /// `H_x` with the optimal control held fixed (envelope form).
    fn hamiltonian_grad_x(&self, x: &Vector, p: &Vector, drive: &Drive) -> Result<Vector> {
        let alpha = self.optimal_control(x, p, drive)?;
        Ok(self.dynamics_vjp_x(x, &alpha, drive, p)? + self.lagrangian_grad_x(x, &alpha, drive))
    }

    /// `p' = -H_x`
    fn costate_derivative(&self, x: &Vector, p: &Vector, drive: &Drive) -> Result<Vector> {
        Ok(-self.hamiltonian_grad_x(x, p, drive)?)
    }
}

/// Weights of the tracking Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagrangianParams {
    pub q: f64,
    pub r1: f64,
    pub r2: f64,
    /// Include `w`, `b`, `k` in the `r1` sum (otherwise only non-output `y`).
    #[serde(default = "yes")]
    pub regularize_params: bool,
}

fn yes() -> bool {
    true
}

impl LagrangianParams {
    pub fn new(q: f64, r1: f64, r2: f64) -> Result<Self> {
        let p = Self {
            q,
            r1,
            r2,
            regularize_params: true,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q >= 0.0) || !(self.r1 >= 0.0) {
            return Err(Error::Config(format!(
                "q and r1 must be >= 0 (q={}, r1={})",
                self.q, self.r1
            )));
        }
        if !(self.r2 > 0.0) {
            return Err(Error::SingularControl(self.r2));
        }
        Ok(())
    }
}

/// Closed-form minimiser `alpha* = -p_params / r2` over the parameter block.
pub fn optimal_control(layout: StateLayout, p: &[f64], r2: f64) -> Result<ControlVector> {
    check_len("costate", layout.state_dim(), p.len())?;
    if !(r2 > 0.0) {
        return Err(Error::SingularControl(r2));
    }
    let alpha: Vec<f64> = p[layout.params()].iter().map(|pi| -pi / r2).collect();
    ControlVector::unflatten(layout, &alpha)
}

/// Tracking problem on a CTRNN whose parameters are part of the state.
#[derive(Debug, Clone)]
pub struct TrackingProblem {
    graph: NetworkGraph,
    act: ActivationSpec,
    weights: LagrangianParams,
    regularized: Vec<bool>,
}

impl TrackingProblem {
    pub fn new(graph: NetworkGraph, act: ActivationSpec, weights: LagrangianParams) -> Result<Self> {
        weights.validate()?;
        let layout = graph.layout();
        let mut regularized = vec![false; layout.state_dim()];
        for i in layout.y() {
            regularized[i] = !graph.outputs().contains(&i);
        }
        if weights.regularize_params {
            for i in layout.params() {
                regularized[i] = true;
            }
        }
        Ok(Self {
            graph,
            act,
            weights,
            regularized,
        })
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn activation(&self) -> &ActivationSpec {
        &self.act
    }

    pub fn weights(&self) -> &LagrangianParams {
        &self.weights
    }

    pub fn layout(&self) -> StateLayout {
        self.graph.layout()
    }

    /// `pi(x)`: the first output neuron.
    pub fn output_index(&self) -> usize {
        self.graph.outputs()[0]
    }

    /// Which state coordinates carry the `r1` penalty.
    pub fn regularized_coords(&self) -> &[bool] {
        &self.regularized
    }
}

impl ControlProblem for TrackingProblem {
    fn state_dim(&self) -> usize {
        self.layout().state_dim()
    }

    fn control_dim(&self) -> usize {
        self.layout().control_dim()
    }

    fn readout(&self, x: &Vector) -> f64 {
        x[self.output_index()]
    }

    fn dynamics(&self, x: &Vector, alpha: &Vector, drive: &Drive) -> Result<Vector> {
        state_derivative(&self.graph, &self.act, x.as_slice(), alpha.as_slice(), &drive.u)
    }

    fn dynamics_vjp_x(&self, x: &Vector, _alpha: &Vector, drive: &Drive, p: &Vector) -> Result<Vector> {
        let layout = self.layout();
        check_len("costate", layout.state_dim(), p.len())?;
        ctrnn_vjp_x(&self.graph, &self.act, x.as_slice(), &drive.u, &p.as_slice()[layout.y()])
    }

    fn dynamics_vjp_alpha(&self, _x: &Vector, _alpha: &Vector, _drive: &Drive, p: &Vector) -> Result<Vector> {
        let layout = self.layout();
        check_len("costate", layout.state_dim(), p.len())?;
        Ok(Vector::from_column_slice(&p.as_slice()[layout.params()]))
    }

    fn lagrangian(&self, x: &Vector, alpha: &Vector, drive: &Drive) -> f64 {
        let w = &self.weights;
        let err = self.readout(x) - drive.z;
        let state_sq: f64 = x
            .iter()
            .zip(&self.regularized)
            .filter(|(_, &r)| r)
            .map(|(v, _)| v * v)
            .sum();
        0.5 * w.q * err * err + 0.5 * w.r1 * state_sq + 0.5 * w.r2 * alpha.norm_squared()
    }

    fn lagrangian_grad_x(&self, x: &Vector, _alpha: &Vector, drive: &Drive) -> Vector {
        let w = &self.weights;
        let mut g = Vector::from_iterator(
            x.len(),
            x.iter()
                .zip(&self.regularized)
                .map(|(v, &r)| if r { w.r1 * v } else { 0.0 }),
        );
        let o = self.output_index();
        g[o] += w.q * (x[o] - drive.z);
        g
    }

    fn lagrangian_grad_alpha(&self, _x: &Vector, alpha: &Vector, _drive: &Drive) -> Vector {
        alpha * self.weights.r2
    }

    fn optimal_control(&self, _x: &Vector, p: &Vector, _drive: &Drive) -> Result<Vector> {
        Ok(optimal_control(self.layout(), p.as_slice(), self.weights.r2)?.flatten())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state_model::Activation;
    use approx::assert_relative_eq;

    fn problem(q: f64, r1: f64, r2: f64) -> TrackingProblem {
        let g = NetworkGraph::fully_connected(2, 1, true).unwrap();
        let act = ActivationSpec::with_leak(Activation::Tanh, 0.5).unwrap();
        TrackingProblem::new(g, act, LagrangianParams::new(q, r1, r2).unwrap()).unwrap()
    }

    #[test]
    fn lagrangian_by_hand() {
        let pb = problem(2.0, 0.0, 1e-300);
        let x0 = Vector::zeros(10);
        let a0 = Vector::zeros(8);
        assert_eq!(pb.lagrangian(&x0, &a0, &Drive::target(0.0)), 0.0);

        let mut x = Vector::zeros(10);
        x[0] = 1.0;
        assert_eq!(pb.lagrangian(&x, &a0, &Drive::target(0.0)), 1.0);

        let pb = problem(0.0, 0.0, 2.0);
        let mut a = Vector::zeros(8);
        a[0] = 3.0;
        a[5] = 4.0;
        assert_eq!(pb.lagrangian(&x0, &a, &Drive::target(0.0)), 25.0);
    }

    #[test]
    fn tracking_gradient_by_hand() {
        let pb = problem(1e4, 0.0, 1.0);
        let mut x = Vector::zeros(10);
        x[0] = 0.5;
        let g = pb.lagrangian_grad_x(&x, &Vector::zeros(8), &Drive::target(1.0));
        assert_eq!(g[0], -5000.0);
        assert!(g.iter().skip(1).all(|&v| v == 0.0));
        let g0 = pb.lagrangian_grad_x(&Vector::zeros(10), &Vector::zeros(8), &Drive::target(0.0));
        assert_eq!(g0, Vector::zeros(10));
    }

    #[test]
    fn regularization_scope_follows_flag() {
        let pb = problem(1.0, 1.0, 1.0);
        let r = pb.regularized_coords();
        assert!(!r[0]);
        assert!(r[1..].iter().all(|&v| v));

        let g = NetworkGraph::fully_connected(2, 1, true).unwrap();
        let mut w = LagrangianParams::new(1.0, 1.0, 1.0).unwrap();
        w.regularize_params = false;
        let pb = TrackingProblem::new(g, ActivationSpec::new(Activation::Tanh), w).unwrap();
        assert_eq!(
            pb.regularized_coords(),
            &[false, true, false, false, false, false, false, false, false, false]
        );
    }

    #[test]
    fn optimal_control_closed_form() {
        let layout = NetworkGraph::fully_connected(2, 1, true).unwrap().layout();
        let zero = optimal_control(layout, &[0.0; 10], 2.0).unwrap();
        assert!(zero.flatten().iter().all(|&v| v == 0.0));

        let mut p = [0.0; 10];
        p[layout.w().start] = 1.0;
        let a = optimal_control(layout, &p, 2.0).unwrap();
        assert_eq!(a.omega[0], -0.5);

        assert!(matches!(
            optimal_control(layout, &p, 0.0),
            Err(Error::SingularControl(_))
        ));
    }

    #[test]
    fn zero_problem_has_zero_hamiltonian() {
        let pb = problem(1.0, 1.0, 1.0);
        let x = Vector::zeros(10);
        let p = Vector::zeros(10);
        let d = Drive {
            u: vec![0.0],
            z: 0.0,
        };
        assert_eq!(pb.hamiltonian_value(&x, &p, &d).unwrap(), 0.0);
        assert_eq!(pb.costate_derivative(&x, &p, &d).unwrap(), Vector::zeros(10));
    }

    #[test]
    fn zero_costate_reduces_hx_to_lagrangian_gradient() {
        let pb = problem(3.0, 2.0, 5.0);
        let x = Vector::from_fn(10, |i, _| 0.1 * i as f64 - 0.4);
        let d = Drive {
            u: vec![0.3],
            z: 0.2,
        };
        let hx = pb.hamiltonian_grad_x(&x, &Vector::zeros(10), &d).unwrap();
        let lx = pb.lagrangian_grad_x(&x, &Vector::zeros(8), &d);
        assert_eq!(hx, lx);
    }

    #[test]
    fn single_linear_neuron_hx_by_hand() {
        // m=1, no edges, no input, linear sigma, leak 1:
        // f = (-y + b, nu); l = q/2 (y - z)^2 + r1/2 b^2 + r2/2 nu^2
        // H_x = (-p_y + q (y - z),  p_y + r1 b)
        let g = NetworkGraph::new(1, [], 0, vec![0]).unwrap();
        let pb = TrackingProblem::new(
            g,
            ActivationSpec::new(Activation::Linear),
            LagrangianParams::new(3.0, 0.5, 2.0).unwrap(),
        )
        .unwrap();
        let x = Vector::from_vec(vec![0.7, -0.2]);
        let p = Vector::from_vec(vec![1.5, 0.4]);
        let hx = pb.hamiltonian_grad_x(&x, &p, &Drive::target(0.1)).unwrap();
        assert_relative_eq!(hx[0], -1.5 + 3.0 * 0.6, epsilon = 1e-12);
        assert_relative_eq!(hx[1], 1.5 + 0.5 * -0.2, epsilon = 1e-12);
    }
}
