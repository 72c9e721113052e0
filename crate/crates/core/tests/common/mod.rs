#![allow(dead_code)]

use costate_flow::costate_net::{CostateArch, CostateInit, CostateNet, Matrix};
use costate_flow::hamiltonian::{Drive, LagrangianParams, TrackingProblem};
use costate_flow::state_model::{Activation, ActivationSpec, NetworkGraph, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Central differences, one column per coordinate of `x`.
pub fn fd_jacobian(x: &Vector, h: f64, f: impl Fn(&Vector) -> Vector) -> Matrix {
    let rows = f(x).len();
    let mut j = Matrix::zeros(rows, x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        j.set_column(i, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

pub fn fd_gradient(x: &Vector, h: f64, f: impl Fn(&Vector) -> f64) -> Vector {
    let j = fd_jacobian(x, h, |x| Vector::from_element(1, f(x)));
    j.row(0).transpose()
}

/// Largest elementwise relative error, with `floor` guarding entries near zero.
pub fn max_rel_err(a: &Matrix, b: &Matrix, floor: f64) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

pub fn max_rel_err_vec(a: &Vector, b: &Vector, floor: f64) -> f64 {
    max_rel_err(&Matrix::from_column_slice(a.len(), 1, a.as_slice()), &Matrix::from_column_slice(b.len(), 1, b.as_slice()), floor)
}

pub struct Instance {
    pub problem: TrackingProblem,
    pub net: CostateNet,
    pub x: Vector,
    pub drive: Drive,
}

pub fn random_problem(rng: &mut ChaCha8Rng, act: Activation) -> (TrackingProblem, usize) {
    let m = rng.gen_range(1..=3);
    let d = rng.gen_range(0..=2);
    let graph = NetworkGraph::fully_connected(m, d, rng.gen_bool(0.5)).unwrap();
    let spec = ActivationSpec::with_leak(act, rng.gen_range(0.1..1.5)).unwrap();
    let mut weights =
        LagrangianParams::new(rng.gen_range(0.1..10.0), rng.gen_range(0.1..5.0), rng.gen_range(0.5..5.0))
            .unwrap();
    weights.regularize_params = rng.gen_bool(0.5);
    (TrackingProblem::new(graph, spec, weights).unwrap(), d)
}

pub fn random_instance(rng: &mut ChaCha8Rng, gamma: Activation, hidden: Activation) -> Instance {
    let (problem, d) = random_problem(rng, gamma);
    let n = problem.layout().state_dim();
    let feed = rng.gen_bool(0.5);
    let arch = CostateArch {
        state_dim: n,
        signal_dim: if feed { d } else { 0 },
        hidden_width: rng.gen_range(2..=8),
        hidden,
    };
    let net = CostateNet::random(arch, CostateInit::default(), rng).unwrap();
    let x = random_vec(rng, n, 1.0);
    let drive = Drive {
        u: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        z: rng.gen_range(-1.0..1.0),
    };
    Instance { problem, net, x, drive }
}

/// Signal slice the costate net actually sees.
pub fn net_input(inst: &Instance) -> Vec<f64> {
    inst.drive.u[..inst.net.arch().signal_dim].to_vec()
}

pub fn relu_kink_free(net: &CostateNet, x: &Vector, u: &[f64]) -> bool {
    net.arch().hidden != Activation::Relu || net.pre_activations(x, u).unwrap().iter().all(|a| a.abs() >= 1e-3)
}

/// Draws instances until one has no relu pre-activation within 1e-3 of zero.
pub fn kink_free_instances(seed: u64, count: usize, hidden: Activation) -> Vec<Instance> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let inst = random_instance(&mut r, Activation::Tanh, hidden);
        if relu_kink_free(&inst.net, &inst.x, &net_input(&inst)) {
            out.push(inst);
        }
    }
    out
}
