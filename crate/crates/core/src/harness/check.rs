//! Self-check suite behind the `check` subcommand: finite-difference and
//! closed-form cross-checks on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SimConfig;
use crate::costate_net::{CostateArch, CostateEstimator, CostateInit, CostateNet, Matrix};
use crate::error::Result;
use crate::hamiltonian::{ControlProblem, Drive, LagrangianParams, TrackingProblem};
use crate::lq_analytic::{
    fit_growth_rate, generic_delta_theta, integrate_hamilton, lq_riccati_rhs, LqParams,
};
use crate::optim::PlainGd;
use crate::riccati_flow::{inner_descent, run_simulation, OmegaSystem};
use crate::state_model::{Activation, ActivationSpec, NetworkGraph, Vector};

use super::experiment::run_lq;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {:<24} {}", self.name, self.detail)
    }
}

fn outcome(name: &'static str, r: Result<(bool, String)>) -> CheckOutcome {
    match r {
        Ok((passed, detail)) => CheckOutcome { name, passed, detail },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

pub fn run_all() -> Vec<CheckOutcome> {
    vec![
        outcome("lq_instability", lq_instability()),
        outcome("lq_closed_form", lq_closed_form_check()),
        outcome("riccati_reduction", riccati_reduction()),
        outcome("jacobians", jacobians()),
        outcome("inner_descent", inner_optimality()),
        outcome("envelope", envelope()),
        outcome("determinism", determinism()),
    ]
}

fn lq_instability() -> Result<(bool, String)> {
    let p = LqParams::unit();
    let rate = fit_growth_rate(&integrate_hamilton(&p, 1.0, 0.0, 1e-3, 10_000))?;
    let rel = (rate - p.hamilton_rate()).abs() / p.hamilton_rate();
    Ok((rel < 0.05, format!("fitted rate {rate:.5}, relative error {rel:.2e}")))
}

fn lq_closed_form_check() -> Result<(bool, String)> {
    let r = run_lq(&LqParams::unit(), 0.01, 3000, 0.0, None)?;
    let end = (r.numeric.last().copied().unwrap_or(f64::NAN) - r.asymptote).abs();
    Ok((
        r.max_abs_error < 5e-3 && end < 1e-3,
        format!("max error {:.2e}, end gap {end:.2e}", r.max_abs_error),
    ))
}

fn riccati_reduction() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = LqParams::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(0.2..2.0),
            rng.gen_range(0.1..3.0),
            rng.gen_range(0.1..3.0),
        )?;
        let theta = rng.gen_range(-3.0..3.0);
        let d = generic_delta_theta(&p, theta, 1.0)?;
        worst = worst.max((d - lq_riccati_rhs(theta, &p)).abs());
    }
    Ok((worst < 1e-8, format!("max |delta - rhs| {worst:.2e}")))
}

struct Instance {
    problem: TrackingProblem,
    net: CostateNet,
    x: Vector,
    drive: Drive,
}

fn instance(rng: &mut ChaCha8Rng, hidden: Activation) -> Result<Instance> {
    let m = rng.gen_range(1..=3);
    let d = rng.gen_range(0..=1);
    let graph = NetworkGraph::fully_connected(m, d, true)?;
    let act = ActivationSpec::with_leak(Activation::Tanh, 0.5)?;
    let weights = LagrangianParams::new(
        rng.gen_range(0.5..5.0),
        rng.gen_range(0.1..2.0),
        rng.gen_range(0.5..5.0),
    )?;
    let problem = TrackingProblem::new(graph, act, weights)?;
    let n = problem.state_dim();
    let arch = CostateArch {
        state_dim: n,
        signal_dim: d,
        hidden_width: rng.gen_range(2..=6),
        hidden,
    };
    let net = CostateNet::random(arch, CostateInit::default(), rng)?;
    let x = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let drive = Drive {
        u: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        z: rng.gen_range(-1.0..1.0),
    };
    Ok(Instance { problem, net, x, drive })
}

fn near_kink(inst: &Instance) -> Result<bool> {
    if inst.net.arch().hidden != Activation::Relu {
        return Ok(false);
    }
    Ok(inst
        .net
        .pre_activations(&inst.x, &inst.drive.u)?
        .iter()
        .any(|a| a.abs() < 1e-3))
}

fn central_jacobian(x: &Vector, h: f64, f: impl Fn(&Vector) -> Result<Vector>) -> Result<Matrix> {
    let rows = f(x)?.len();
    let mut j = Matrix::zeros(rows, x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (f(&xp)? - f(&xm)?) / (2.0 * h);
        j.set_column(i, &col);
    }
    Ok(j)
}

fn rel_err(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).norm() / b.norm().max(1e-12)
}

fn jacobians() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = [0.0f64; 4];
    let mut done = 0;
    while done < 20 {
        let hidden = if done % 2 == 0 { Activation::Tanh } else { Activation::Relu };
        let inst = instance(&mut rng, hidden)?;
        if near_kink(&inst)? {
            continue;
        }
        let (x, u, drive) = (&inst.x, &inst.drive.u, &inst.drive);
        let h = 1e-6;

        let fd = central_jacobian(x, h, |x| inst.net.forward(x, u))?;
        worst[0] = worst[0].max(rel_err(&inst.net.jacobian_x(x, u)?, &fd));

        let theta = inst.net.params().clone();
        let fd = central_jacobian(&theta, h, |t| {
            CostateNet::new(*inst.net.arch(), t.clone())?.forward(x, u)
        })?;
        worst[1] = worst[1].max(rel_err(&inst.net.jacobian_theta(x, u)?, &fd));

        let alpha = Vector::from_fn(inst.problem.control_dim(), |_, _| rng.gen_range(-1.0..1.0));
        let fd = central_jacobian(x, h, |x| {
            Ok(Vector::from_element(1, inst.problem.lagrangian(x, &alpha, drive)))
        })?;
        let g = inst.problem.lagrangian_grad_x(x, &alpha, drive);
        worst[2] = worst[2].max(rel_err(&Matrix::from_row_slice(1, g.len(), g.as_slice()), &fd));

        let p = inst.net.forward(x, u)?;
        let fd = central_jacobian(x, h, |x| {
            Ok(Vector::from_element(1, inst.problem.hamiltonian_value(x, &p, drive)?))
        })?;
        let g = inst.problem.hamiltonian_grad_x(x, &p, drive)?;
        worst[3] = worst[3].max(rel_err(&Matrix::from_row_slice(1, g.len(), g.as_slice()), &fd));
        done += 1;
    }
    Ok((
        worst.iter().all(|&w| w < 1e-5),
        format!(
            "mu_x {:.1e}, mu_theta {:.1e}, l_x {:.1e}, H_x {:.1e}",
            worst[0], worst[1], worst[2], worst[3]
        ),
    ))
}

fn inner_optimality() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inst = instance(&mut rng, Activation::Tanh)?;
    let (x, u, drive) = (&inst.x, &inst.drive.u, &inst.drive);
    let p = inst.net.forward(x, u)?;
    let alpha = inst.problem.optimal_control(x, &p, drive)?;
    let x_dot = inst.problem.dynamics(x, &alpha, drive)?;
    let hx = inst.problem.hamiltonian_grad_x(x, &p, drive)?;
    let system = OmegaSystem::new(
        &inst.net.jacobian_x(x, u)?,
        &x_dot,
        inst.net.jacobian_theta(x, u)?,
        &hx,
        0.1,
    )?;
    let lr = 1.0 / system.hessian().symmetric_eigenvalues().max();
    let out = inner_descent(
        Vector::zeros(system.num_params()),
        &system,
        20_000,
        &mut PlainGd { lr },
    )?;
    let mut seq = out.losses.clone();
    seq.push(out.final_loss);
    // rounding noise once converged
    let monotone = seq
        .windows(2)
        .all(|w| w[1] <= w[0] + 4.0 * f64::EPSILON * w[0].abs());
    let best = system.loss(&system.closed_form_min()?);
    let gap = out.final_loss - best;
    Ok((monotone && gap.abs() < 1e-4, format!("monotone {monotone}, gap {gap:.2e}")))
}

fn envelope() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut max_grad = 0.0f64;
    let mut violations = 0;
    for _ in 0..20 {
        let inst = instance(&mut rng, Activation::Tanh)?;
        let (x, drive) = (&inst.x, &inst.drive);
        let p = Vector::from_fn(x.len(), |_, _| rng.gen_range(-2.0..2.0));
        let a = inst.problem.optimal_control(x, &p, drive)?;
        let g = inst.problem.pseudo_hamiltonian_grad_alpha(x, &p, &a, drive)?;
        max_grad = max_grad.max(g.amax());
        let h0 = inst.problem.pseudo_hamiltonian(x, &p, &a, drive)?;
        for _ in 0..1000 {
            let d = Vector::from_fn(a.len(), |_, _| rng.gen_range(-1.0..1.0));
            if inst.problem.pseudo_hamiltonian(x, &p, &(&a + d), drive)? < h0 {
                violations += 1;
            }
        }
    }
    Ok((
        max_grad < 1e-10 && violations == 0,
        format!("max |grad| {max_grad:.1e}, violations {violations}"),
    ))
}

fn determinism() -> Result<(bool, String)> {
    let mut c = SimConfig::case_b();
    c.n_t = 200;
    let a = run_simulation(&c)?;
    let b = run_simulation(&c)?;
    Ok((a == b, format!("{} steps compared", a.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_checks_pass() {
        for o in [
            outcome("riccati_reduction", riccati_reduction()),
            outcome("envelope", envelope()),
            outcome("jacobians", jacobians()),
        ] {
            assert!(o.passed, "{o}");
        }
    }
}
