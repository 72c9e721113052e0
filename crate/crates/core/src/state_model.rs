//! CTRNN state model with the network parameters folded into the state.
//!
//! The flat state vector has the layout
//!
//! ```text
//! [ y_0 .. y_{m-1} | w (edges sorted by (i, j)) | b_0 .. b_{m-1} | k (m x d, row-major) ]
//! ```
//!
//! and the control vector is the parameter block of that layout: the
//! time-derivatives of `w`, `b` and `k`.

use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

pub type Vector = DVector<f64>;

/// Scalar activation with its exact derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Linear,
}

impl Activation {
    pub fn eval(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
            Activation::Linear => a,
        }
    }

    /// First derivative. The relu derivative at 0 is taken as 0.
    pub fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = a.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub kind: Activation,
    /// Multiplier on the `-y` leak term.
    #[serde(default = "default_leak")]
    pub leak_scale: f64,
}

fn default_leak() -> f64 {
    1.0
}

impl ActivationSpec {
    pub fn new(kind: Activation) -> Self {
        Self {
            kind,
            leak_scale: 1.0,
        }
    }

    pub fn with_leak(kind: Activation, leak_scale: f64) -> Result<Self> {
        if !(leak_scale >= 0.0) {
            return Err(Error::Config(format!(
                "leak_scale must be >= 0, got {leak_scale}"
            )));
        }
        Ok(Self { kind, leak_scale })
    }
}

/// Directed graph of the recurrent network. An edge `(j, i)` is the arc
/// `j -> i` carrying weight `w_ij`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    num_neurons: usize,
    /// Sorted lexicographically by `(i, j)`; this is also the `w` block order.
    edges: Vec<(usize, usize)>,
    input_dim: usize,
    outputs: Vec<usize>,
}

impl NetworkGraph {
    pub fn new(
        num_neurons: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        input_dim: usize,
        outputs: Vec<usize>,
    ) -> Result<Self> {
        if num_neurons == 0 {
            return Err(Error::Config("network needs at least one neuron".into()));
        }
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        for &(j, i) in &edges {
            if j >= num_neurons || i >= num_neurons {
                return Err(Error::Config(format!(
                    "edge ({j},{i}) has an endpoint outside 0..{num_neurons}"
                )));
            }
        }
        edges.sort_by_key(|&(j, i)| (i, j));
        let before = edges.len();
        edges.dedup();
        if edges.len() != before {
            return Err(Error::Config("duplicate edge in network graph".into()));
        }
        if outputs.is_empty() {
            return Err(Error::Config("network needs at least one output".into()));
        }
        for (n, &o) in outputs.iter().enumerate() {
            if o >= num_neurons {
                return Err(Error::Config(format!("output index {o} out of range")));
            }
            if outputs[..n].contains(&o) {
                return Err(Error::Config(format!("output index {o} repeated")));
            }
        }
        Ok(Self {
            num_neurons,
            edges,
            input_dim,
            outputs,
        })
    }

    /// All ordered pairs, self-loops included; output is neuron 0.
    pub fn fully_connected(num_neurons: usize, input_dim: usize, self_loops: bool) -> Result<Self> {
        let edges = (0..num_neurons)
            .flat_map(|i| (0..num_neurons).map(move |j| (j, i)))
            .filter(|&(j, i)| self_loops || i != j);
        Self::new(num_neurons, edges, input_dim, vec![0])
    }

    pub fn num_neurons(&self) -> usize {
        self.num_neurons
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    /// `pa(i) = { j : (j, i) in E }`
    pub fn parents(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |&&(_, dst)| dst == i)
            .map(|&(src, _)| src)
    }

    /// `ch(i) = { j : (i, j) in E }`
    pub fn children(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |&&(src, _)| src == i)
            .map(|&(_, dst)| dst)
    }

    pub fn layout(&self) -> StateLayout {
        StateLayout {
            neurons: self.num_neurons,
            edges: self.edges.len(),
            inputs: self.input_dim,
        }
    }
}

/// Offsets of the blocks in the flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub neurons: usize,
    pub edges: usize,
    pub inputs: usize,
}

impl StateLayout {
    pub fn y(&self) -> Range<usize> {
        0..self.neurons
    }

    pub fn w(&self) -> Range<usize> {
        let s = self.neurons;
        s..s + self.edges
    }

    pub fn b(&self) -> Range<usize> {
        let s = self.neurons + self.edges;
        s..s + self.neurons
    }

    pub fn k(&self) -> Range<usize> {
        let s = 2 * self.neurons + self.edges;
        s..s + self.neurons * self.inputs
    }

    /// Range of the parameter block, i.e. where the control lands.
    pub fn params(&self) -> Range<usize> {
        self.neurons..self.state_dim()
    }

    pub fn state_dim(&self) -> usize {
        2 * self.neurons + self.edges + self.neurons * self.inputs
    }

    pub fn control_dim(&self) -> usize {
        self.neurons + self.edges + self.neurons * self.inputs
    }
}

/// Structured view of the state `(y, w, b, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    /// Row-major `m x d`.
    pub k: Vec<f64>,
}

impl StateVector {
    pub fn zeros(layout: StateLayout) -> Self {
        Self {
            y: vec![0.0; layout.neurons],
            w: vec![0.0; layout.edges],
            b: vec![0.0; layout.neurons],
            k: vec![0.0; layout.neurons * layout.inputs],
        }
    }

    pub fn flatten(&self) -> Vector {
        Vector::from_iterator(
            self.y.len() + self.w.len() + self.b.len() + self.k.len(),
            self.y
                .iter()
                .chain(&self.w)
                .chain(&self.b)
                .chain(&self.k)
                .copied(),
        )
    }

    pub fn unflatten(layout: StateLayout, x: &[f64]) -> Result<Self> {
        check_len("state vector", layout.state_dim(), x.len())?;
        Ok(Self {
            y: x[layout.y()].to_vec(),
            w: x[layout.w()].to_vec(),
            b: x[layout.b()].to_vec(),
            k: x[layout.k()].to_vec(),
        })
    }
}

/// Structured view of the control `(omega, nu, chi)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    pub omega: Vec<f64>,
    pub nu: Vec<f64>,
    pub chi: Vec<f64>,
}

impl ControlVector {
    pub fn flatten(&self) -> Vector {
        Vector::from_iterator(
            self.omega.len() + self.nu.len() + self.chi.len(),
            self.omega
                .iter()
                .chain(&self.nu)
                .chain(&self.chi)
                .copied(),
        )
    }

    pub fn unflatten(layout: StateLayout, alpha: &[f64]) -> Result<Self> {
        check_len("control vector", layout.control_dim(), alpha.len())?;
        let (omega, rest) = alpha.split_at(layout.edges);
        let (nu, chi) = rest.split_at(layout.neurons);
        Ok(Self {
            omega: omega.to_vec(),
            nu: nu.to_vec(),
            chi: chi.to_vec(),
        })
    }
}

fn pre_activations(
    graph: &NetworkGraph,
    y: &[f64],
    w: &[f64],
    b: &[f64],
    k: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    let m = graph.num_neurons;
    let d = graph.input_dim;
    check_len("ctrnn y", m, y.len())?;
    check_len("ctrnn w", graph.edges.len(), w.len())?;
    check_len("ctrnn b", m, b.len())?;
    check_len("ctrnn k", m * d, k.len())?;
    check_len("ctrnn u", d, u.len())?;

    let mut a = b.to_vec();
    for (e, &(j, i)) in graph.edges.iter().enumerate() {
        a[i] += w[e] * y[j];
    }
    for (i, ai) in a.iter_mut().enumerate() {
        *ai += k[i * d..(i + 1) * d]
            .iter()
            .zip(u)
            .map(|(kij, uj)| kij * uj)
            .sum::<f64>();
    }
    Ok(a)
}

/// `y'_i = -leak * y_i + sigma(sum_{j in pa(i)} w_ij y_j + b_i + sum_j k_ij u_j)`
pub fn ctrnn_forward(
    graph: &NetworkGraph,
    act: &ActivationSpec,
    y: &[f64],
    w: &[f64],
    b: &[f64],
    k: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    let a = pre_activations(graph, y, w, b, k, u)?;
    Ok(a.iter()
        .zip(y)
        .map(|(&ai, &yi)| -act.leak_scale * yi + act.kind.eval(ai))
        .collect())
}

/// Full state derivative: the `y` block follows the CTRNN, the parameter
/// blocks are the control itself.
pub fn state_derivative(
    graph: &NetworkGraph,
    act: &ActivationSpec,
    x: &[f64],
    alpha: &[f64],
    u: &[f64],
) -> Result<Vector> {
    let layout = graph.layout();
    check_len("state vector", layout.state_dim(), x.len())?;
    check_len("control vector", layout.control_dim(), alpha.len())?;
    let y_dot = ctrnn_forward(
        graph,
        act,
        &x[layout.y()],
        &x[layout.w()],
        &x[layout.b()],
        &x[layout.k()],
        u,
    )?;
    let mut dx = Vector::zeros(layout.state_dim());
    dx.as_mut_slice()[layout.y()].copy_from_slice(&y_dot);
    dx.as_mut_slice()[layout.params()].copy_from_slice(alpha);
    Ok(dx)
}

/// Vector-Jacobian product `p_y^T * d(gamma)/dx` over the whole state.
///
/// Only the `y` block of the state derivative depends on `x`; the parameter
/// blocks equal the control, so their rows of `df/dx` are zero.
pub fn ctrnn_vjp_x(
    graph: &NetworkGraph,
    act: &ActivationSpec,
    x: &[f64],
    u: &[f64],
    p_y: &[f64],
) -> Result<Vector> {
    let layout = graph.layout();
    let m = layout.neurons;
    let d = layout.inputs;
    check_len("state vector", layout.state_dim(), x.len())?;
    check_len("costate y block", m, p_y.len())?;
    let y = &x[layout.y()];
    let w = &x[layout.w()];
    let a = pre_activations(graph, y, w, &x[layout.b()], &x[layout.k()], u)?;
    // g_i = p_i * sigma'(a_i)
    let g: Vec<f64> = a
        .iter()
        .zip(p_y)
        .map(|(&ai, &pi)| pi * act.kind.derivative(ai))
        .collect();

    let mut out = Vector::zeros(layout.state_dim());
    let out_s = out.as_mut_slice();
    for i in 0..m {
        out_s[i] = -act.leak_scale * p_y[i];
    }
    let w_off = layout.w().start;
    for (e, &(j, i)) in graph.edges.iter().enumerate() {
        out_s[j] += g[i] * w[e];
        out_s[w_off + e] = g[i] * y[j];
    }
    let b_off = layout.b().start;
    out_s[b_off..b_off + m].copy_from_slice(&g);
    let k_off = layout.k().start;
    for i in 0..m {
        for j in 0..d {
            out_s[k_off + i * d + j] = g[i] * u[j];
        }
    }
    Ok(out)
}

/// Explicit Euler: `x + tau * dx`.
pub fn euler_step(x: &Vector, dx: &Vector, tau: f64) -> Result<Vector> {
    check_len("euler step", x.len(), dx.len())?;
    if !(tau > 0.0) {
        return Err(Error::Config(format!("Euler step must be > 0, got {tau}")));
    }
    Ok(x + dx * tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_neuron_one_edge() -> NetworkGraph {
        NetworkGraph::new(2, [(1, 0)], 0, vec![0]).unwrap()
    }

    #[test]
    fn zero_everything_gives_zero_derivative() {
        let g = NetworkGraph::fully_connected(2, 1, true).unwrap();
        let act = ActivationSpec::new(Activation::Tanh);
        let y = ctrnn_forward(&g, &act, &[0.0; 2], &[0.0; 4], &[0.0; 2], &[0.0; 2], &[0.0])
            .unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn single_linear_neuron() {
        let g = NetworkGraph::new(1, [], 0, vec![0]).unwrap();
        let act = ActivationSpec::new(Activation::Linear);
        let y = ctrnn_forward(&g, &act, &[0.2], &[], &[0.5], &[], &[]).unwrap();
        assert_relative_eq!(y[0], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn leaky_tanh_pair() {
        let g = two_neuron_one_edge();
        let act = ActivationSpec::with_leak(Activation::Tanh, 0.5).unwrap();
        let y = ctrnn_forward(&g, &act, &[0.0, 0.5], &[1.0], &[0.0, 0.0], &[], &[]).unwrap();
        // tanh(0.5) evaluated independently
        assert_relative_eq!(y[0], 0.462_117_157_260_009_8, epsilon = 1e-12);
        assert_relative_eq!(y[1], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let g = two_neuron_one_edge();
        let act = ActivationSpec::new(Activation::Tanh);
        let err = ctrnn_forward(&g, &act, &[0.0], &[1.0], &[0.0, 0.0], &[], &[]).unwrap_err();
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn graph_validation() {
        assert!(NetworkGraph::new(2, [(2, 0)], 0, vec![0]).is_err());
        assert!(NetworkGraph::new(2, [(0, 1), (0, 1)], 0, vec![0]).is_err());
        assert!(NetworkGraph::new(2, [], 0, vec![0, 0]).is_err());
        assert!(NetworkGraph::new(2, [], 0, vec![3]).is_err());
        let g = NetworkGraph::fully_connected(3, 0, false).unwrap();
        assert_eq!(g.edges().len(), 6);
        assert_eq!(g.parents(1).collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(g.children(1).collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn edge_order_is_lexicographic_in_i_then_j() {
        let g = NetworkGraph::new(2, [(1, 1), (0, 1), (1, 0), (0, 0)], 0, vec![0]).unwrap();
        assert_eq!(g.edges(), &[(0, 0), (1, 0), (0, 1), (1, 1)]);
    }

    #[test]
    fn layout_dimensions() {
        let g = NetworkGraph::fully_connected(2, 1, true).unwrap();
        let l = g.layout();
        assert_eq!(l.state_dim(), 2 + 4 + 2 + 2);
        assert_eq!(l.control_dim(), 8);
        assert_eq!(l.params(), 2..10);
        assert_eq!(l.k(), 8..10);
    }

    #[test]
    fn zero_control_leaves_params_still() {
        let g = NetworkGraph::fully_connected(2, 1, true).unwrap();
        let act = ActivationSpec::new(Activation::Tanh);
        let l = g.layout();
        let x = Vector::from_fn(l.state_dim(), |i, _| 0.1 * i as f64 - 0.3);
        let dx = state_derivative(&g, &act, x.as_slice(), &vec![0.0; 8], &[0.7]).unwrap();
        assert!(dx.as_slice()[l.params()].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_control_from_rest() {
        let g = NetworkGraph::fully_connected(2, 1, true).unwrap();
        let act = ActivationSpec::new(Activation::Tanh);
        let x = Vector::zeros(10);
        let dx = state_derivative(&g, &act, x.as_slice(), &vec![1.0; 8], &[0.0]).unwrap();
        assert_eq!(&dx.as_slice()[..2], &[0.0, 0.0]);
        assert!(dx.as_slice()[2..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn euler_arithmetic() {
        let x = Vector::from_vec(vec![1.0, 2.0]);
        assert_eq!(euler_step(&x, &Vector::zeros(2), 0.5).unwrap(), x);
        let y = euler_step(&Vector::from_vec(vec![0.0]), &Vector::from_vec(vec![2.0]), 0.5).unwrap();
        assert_eq!(y[0], 1.0);
        assert!(euler_step(&x, &x, 0.0).is_err());
    }

    #[test]
    fn euler_geometric_decay() {
        let mut x = Vector::from_vec(vec![1.0]);
        for _ in 0..100 {
            let dx = -&x;
            x = euler_step(&x, &dx, 0.01).unwrap();
        }
        assert_relative_eq!(x[0], 0.99f64.powi(100), epsilon = 1e-14);
        assert_relative_eq!(x[0], 0.36603, epsilon = 1e-5);
    }

    #[test]
    fn activation_derivatives_match_central_differences() {
        let h = 1e-6;
        for kind in [Activation::Tanh, Activation::Relu, Activation::Linear] {
            for &a in &[-2.3, -0.7, 0.3, 1.1, 2.9] {
                let fd = (kind.eval(a + h) - kind.eval(a - h)) / (2.0 * h);
                let exact = kind.derivative(a);
                let rel = (fd - exact).abs() / exact.abs().max(1e-12);
                assert!(rel < 1e-6 || (fd - exact).abs() < 1e-9, "{kind:?} at {a}");
            }
        }
        assert_eq!(Activation::Relu.derivative(0.0), 0.0);
    }
}
