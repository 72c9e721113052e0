mod common;

use costate_flow::state_model::{
    ctrnn_forward, euler_step, state_derivative, Activation, ActivationSpec, ControlVector, NetworkGraph,
    StateVector, Vector,
};
use proptest::prelude::*;

fn graph_strategy() -> impl Strategy<Value = NetworkGraph> {
    (1usize..4, 0usize..3, any::<bool>())
        .prop_map(|(m, d, loops)| NetworkGraph::fully_connected(m, d, loops).unwrap())
}

fn reference_forward(g: &NetworkGraph, leak: f64, y: &[f64], w: &[f64], b: &[f64], k: &[f64], u: &[f64]) -> Vec<f64> {
    let d = g.input_dim();
    (0..g.num_neurons())
        .map(|i| {
            let mut a = b[i];
            for (e, &(j, ii)) in g.edges().iter().enumerate() {
                if ii == i {
                    a += w[e] * y[j];
                }
            }
            for j in 0..d {
                a += k[i * d + j] * u[j];
            }
            -leak * y[i] + a.tanh()
        })
        .collect()
}

proptest! {
    #[test]
    fn state_layout_round_trip(g in graph_strategy(), seed in any::<u64>()) {
        let layout = g.layout();
        let mut r = common::rng(seed);
        let x = common::random_vec(&mut r, layout.state_dim(), 3.0);
        let sv = StateVector::unflatten(layout, x.as_slice()).unwrap();
        prop_assert_eq!(sv.flatten(), x.clone());
        prop_assert_eq!(StateVector::unflatten(layout, sv.flatten().as_slice()).unwrap(), sv);

        let a = common::random_vec(&mut r, layout.control_dim(), 3.0);
        let cv = ControlVector::unflatten(layout, a.as_slice()).unwrap();
        prop_assert_eq!(cv.flatten(), a);
    }

    #[test]
    fn linear_activation_superposes(g in graph_strategy(), seed in any::<u64>(), leak in 0.0f64..2.0) {
        let act = ActivationSpec::with_leak(Activation::Linear, leak).unwrap();
        let (m, e, d) = (g.num_neurons(), g.edges().len(), g.input_dim());
        let mut r = common::rng(seed);
        let w = common::random_vec(&mut r, e, 1.0);
        let k = common::random_vec(&mut r, m * d, 1.0);
        let draw = |r: &mut _| (
            common::random_vec(r, m, 1.0),
            common::random_vec(r, m, 1.0),
            common::random_vec(r, d, 1.0),
        );
        let (y1, b1, u1) = draw(&mut r);
        let (y2, b2, u2) = draw(&mut r);
        let f = |y: &Vector, b: &Vector, u: &Vector| {
            Vector::from_vec(ctrnn_forward(&g, &act, y.as_slice(), w.as_slice(), b.as_slice(), k.as_slice(), u.as_slice()).unwrap())
        };
        let lhs = f(&(&y1 + &y2), &(&b1 + &b2), &(&u1 + &u2));
        let rhs = f(&y1, &b1, &u1) + f(&y2, &b2, &u2);
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }

    #[test]
    fn zero_control_freezes_parameters(g in graph_strategy(), seed in any::<u64>(), steps in 1usize..50) {
        let layout = g.layout();
        let act = ActivationSpec::with_leak(Activation::Tanh, 0.5).unwrap();
        let mut r = common::rng(seed);
        let x0 = common::random_vec(&mut r, layout.state_dim(), 1.0);
        let u = common::random_vec(&mut r, layout.inputs, 1.0);
        let zero = Vector::zeros(layout.control_dim());
        let mut x = x0.clone();
        for _ in 0..steps {
            let dx = state_derivative(&g, &act, x.as_slice(), zero.as_slice(), u.as_slice()).unwrap();
            x = euler_step(&x, &dx, 0.5).unwrap();
        }
        prop_assert_eq!(&x.as_slice()[layout.params()], &x0.as_slice()[layout.params()]);
    }

    #[test]
    fn forward_matches_reference(g in graph_strategy(), seed in any::<u64>(), leak in 0.0f64..2.0) {
        let act = ActivationSpec::with_leak(Activation::Tanh, leak).unwrap();
        let (m, e, d) = (g.num_neurons(), g.edges().len(), g.input_dim());
        let mut r = common::rng(seed);
        let v: Vec<Vector> = [m, e, m, m * d, d].iter().map(|&n| common::random_vec(&mut r, n, 2.0)).collect();
        let got = ctrnn_forward(&g, &act, v[0].as_slice(), v[1].as_slice(), v[2].as_slice(), v[3].as_slice(), v[4].as_slice()).unwrap();
        let want = reference_forward(&g, leak, v[0].as_slice(), v[1].as_slice(), v[2].as_slice(), v[3].as_slice(), v[4].as_slice());
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() <= 1e-14);
        }
    }
}

#[test]
fn two_neuron_example_by_hand() {
    let g = NetworkGraph::new(2, [(1, 0)], 0, vec![0]).unwrap();
    let act = ActivationSpec::with_leak(Activation::Tanh, 0.5).unwrap();
    let y = ctrnn_forward(&g, &act, &[0.0, 0.5], &[1.0], &[0.0, 0.0], &[], &[]).unwrap();
    assert!((y[0] - 0.46211715726000974).abs() < 1e-15);
    assert_eq!(y[1], -0.25);
}

#[test]
fn experiment_graph_has_four_edges() {
    let g = NetworkGraph::fully_connected(2, 0, true).unwrap();
    // stored as (j, i), ordered by (i, j): w_00, w_01, w_10, w_11
    assert_eq!(g.edges(), &[(0, 0), (1, 0), (0, 1), (1, 1)]);
    let l = g.layout();
    assert_eq!((l.state_dim(), l.control_dim()), (8, 6));
    let g = NetworkGraph::fully_connected(2, 1, true).unwrap();
    assert_eq!((g.layout().state_dim(), g.layout().control_dim()), (10, 8));
}
