use epigraph_core::forecast::{iterate_forecast, invert_step, ExpectationState, StepMatrix};
use epigraph_core::graph::{diffusion_generator, step_matrix, transition_matrix};
use epigraph_core::ode::{solve, SirGraph};
use epigraph_core::sim::{run_groups, run_sei, run_sir, EpidemicState, ModelParams, NodeState};
use epigraph_core::{Compartment, GraphSpec, Matrix};
use proptest::prelude::*;

fn weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05f64..1.0, n).prop_map(|w| {
        let t: f64 = w.iter().sum();
        w.into_iter().map(|x| x / t).collect()
    })
}

/// Connected graph: a path plus random chords.
fn graph() -> impl Strategy<Value = GraphSpec> {
    (2usize..6).prop_flat_map(|n| {
        let chords = prop::collection::vec((0..n, 0..n), 0..n);
        (weights(n), chords, 1u64..6).prop_map(move |(pi, chords, m)| {
            let mut edges: Vec<[usize; 2]> = (1..n).map(|k| [k - 1, k]).collect();
            edges.extend(chords.into_iter().filter(|(a, b)| a != b).map(|(a, b)| [a, b]));
            GraphSpec::new(n, edges, pi, m).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chains_are_reversible_with_prescribed_law(g in graph()) {
        let q = transition_matrix(&g).unwrap();
        prop_assert!(q.row_sum_residual() < 1e-12);
        prop_assert!(q.reversibility_residual() < 1e-12);
        prop_assert!(q.stationarity_residual() < 1e-12);
        prop_assert!(q.matrix().as_slice().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn generator_rows_sum_to_zero(g in graph()) {
        let d = diffusion_generator(&g).unwrap();
        prop_assert!(d.row_sum_residual() < 1e-12);
        // detailed balance of the generator: π_i G_ij = π_j G_ji
        for i in 0..g.node_count {
            for j in 0..g.node_count {
                prop_assert!((g.pi[i] * d.delta[(i, j)] - g.pi[j] * d.delta[(j, i)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn chain_binomial_conserves_population(
        g in graph(),
        counts in prop::collection::vec((0u64..200, 0u64..20), 6),
        lambda in 0.0f64..0.05,
        gamma in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let n = g.node_count;
        let init: Vec<NodeState> = counts[..n].iter().map(|&(s, i)| NodeState::new(s, i, 0)).collect();
        let total: u64 = init.iter().map(NodeState::total).sum();
        let q = transition_matrix(&g).unwrap();
        let p = ModelParams::uniform(n, lambda, gamma, 1.0);
        for ts in [run_sir(&q, &p, &init, 30, seed).unwrap(), run_sei(&q, &p, &init, 30, seed).unwrap()] {
            for k in 0..ts.len() {
                prop_assert_eq!(ts.population(k), total as f64);
            }
        }
        let two = EpidemicState { groups: vec![init.clone(), init.clone()] };
        let ts = run_groups(&[q.clone(), q], &p, &two, 30, seed).unwrap();
        for k in 0..ts.len() {
            prop_assert_eq!(ts.population(k), 2.0 * total as f64);
        }
    }

    #[test]
    fn forecast_scales_with_population(
        s in 10.0f64..1000.0,
        i in 1.0f64..50.0,
        lambda in 1e-4f64..1e-2,
        gamma in 0.0f64..0.2,
        c in 0.1f64..100.0,
    ) {
        let q = epigraph_core::TransitionMatrix::identity(1);
        let a = iterate_forecast(&ExpectationState::single(s, i), &ModelParams::uniform(1, lambda, gamma, 0.5), &q, 50).unwrap();
        let b = iterate_forecast(&ExpectationState::single(c * s, c * i), &ModelParams::uniform(1, lambda / c, gamma, 0.5), &q, 50).unwrap();
        for k in 0..a.len() {
            for comp in [Compartment::S, Compartment::I, Compartment::R] {
                let (x, y) = (a.total(k, comp), b.total(k, comp));
                prop_assert!((c * x - y).abs() <= 1e-9 * y.abs().max(1.0));
            }
        }
    }

    #[test]
    fn step_matrix_is_stochastic_and_reversible(g in graph(), eps in 0.001f64..1.0, h in 0.01f64..1.0) {
        let q = step_matrix(&g, eps, h).unwrap();
        prop_assert!(q.row_sum_residual() < 1e-12);
        prop_assert!(q.reversibility_residual() < 1e-12);
    }

    #[test]
    fn ode_conserves_node_mass(g in graph(), eps in 0.0f64..0.5) {
        let n = g.node_count;
        let delta = diffusion_generator(&g).unwrap();
        let sys = SirGraph::new(vec![0.3 / 1000.0; n], vec![0.05; n], eps, delta).unwrap();
        let mut y0 = vec![1000.0; n];
        y0.extend((0..n).map(|j| if j == 0 { 10.0 } else { 0.0 }));
        y0.extend(vec![0.0; n]);
        let total: f64 = y0.iter().sum();
        let sol = solve(&sys, &y0, 50.0, 0.1).unwrap();
        for y in &sol.states {
            prop_assert!((y.iter().sum::<f64>() - total).abs() < 1e-8 * total);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn inverse_step_round_trips(
        s in 0.0f64..1e3,
        i in 0.0f64..1e3,
        lambda in 1e-5f64..1e-3,
        gamma in 0.0f64..0.5,
        h in 0.01f64..1.0,
    ) {
        let [i1, s1] = StepMatrix::new(i, lambda, gamma, h).apply([i, s]);
        let (s0, i0) = invert_step(s1, i1, i, lambda, gamma, h);
        prop_assert!((s0 - s).abs() < 1e-9 && (i0 - i).abs() < 1e-9, "{} {} vs {} {}", s0, i0, s, i);
    }
}

#[test]
fn step_matrix_expansion_is_second_order() {
    // Q_h = Id − εhΔ + O(h²), with h chosen so 1/(εh) is an integer
    let g = GraphSpec::line(4).with_pi(vec![0.1, 0.2, 0.3, 0.4]);
    let delta = diffusion_generator(&g).unwrap();
    let eps = 0.1;
    let hs = [0.5, 0.25, 0.125, 0.0625, 0.03125];
    let res: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let q = step_matrix(&g, eps, h).unwrap();
            let approx = Matrix::identity(4).sub(&delta.delta.scale(eps * h));
            q.matrix().sub(&approx).max_abs()
        })
        .collect();
    let slope = epigraph_core::stats::log_log_slope(&hs, &res).slope;
    assert!((1.7..=2.3).contains(&slope), "slope {slope}, residuals {res:?}");
}
