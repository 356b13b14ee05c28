use nalgebra::DMatrix;
use proptest::prelude::*;

use opinet_core::degroot::{empirical_halving_time, simulate, step};
use opinet_core::graph::{
    build_combination_matrix, generate_connected_graph, generate_graph, is_strongly_connected, AgentProfile, AgentType,
    CombinationMatrix, GraphSpec,
};
use opinet_core::scoring::Stance;
use opinet_core::spectral::{perron_vector, predict_consensus, second_eigenvalue_modulus, DEFAULT_PERRON_MAX_ITER, DEFAULT_PERRON_TOL};

/// Column-normalized random weights on a connected ER support.
fn matrix_strategy() -> impl Strategy<Value = CombinationMatrix> {
    (2usize..12, 0.3f64..1.0, any::<u64>()).prop_flat_map(|(k, p, seed)| {
        prop::collection::vec(0.05f64..1.0, k * k).prop_map(move |w| {
            let g = generate_connected_graph(&GraphSpec::erdos_renyi(k, p, seed), 1000).unwrap().graph;
            let mut m = DMatrix::zeros(k, k);
            for to in 0..k {
                let s: f64 = g.in_neighbors(to).iter().map(|&f| w[f * k + to]).sum();
                for &from in g.in_neighbors(to) {
                    m[(from, to)] = w[from * k + to] / s;
                }
            }
            CombinationMatrix::from_matrix(m).unwrap()
        })
    })
}

fn opinions(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn update_stays_in_hull(a in matrix_strategy(), seed in any::<u64>()) {
        let k = a.agents();
        let mu: Vec<f64> = (0..k).map(|i| ((seed.wrapping_mul(i as u64 + 7) >> 11) as f64) / (1u64 << 53) as f64).collect();
        let next = step(&a, &mu).unwrap();
        let (lo, hi) = mu.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        for v in &next {
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn range_never_grows(a in matrix_strategy(), mu in opinions(12)) {
        let mu = &mu[..a.agents()];
        let traj = simulate(&a, mu, 30).unwrap();
        let spread = |r: &[f64]| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - r.iter().cloned().fold(f64::INFINITY, f64::min);
        for w in traj.rounds().windows(2) {
            prop_assert!(spread(&w[1]) <= spread(&w[0]) + 1e-12);
        }
    }

    #[test]
    fn perron_vector_is_fixed_point(a in matrix_strategy()) {
        let pi = perron_vector(&a, DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITER).unwrap();
        prop_assert!((pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(pi.iter().all(|p| *p > 0.0));
        let api = a.matrix() * nalgebra::DVector::from_vec(pi.clone());
        for (x, y) in api.iter().zip(&pi) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn weighted_average_is_conserved(a in matrix_strategy(), mu in opinions(12)) {
        let mu = &mu[..a.agents()];
        let pi = perron_vector(&a, DEFAULT_PERRON_TOL, DEFAULT_PERRON_MAX_ITER).unwrap();
        let c0 = predict_consensus(&a, mu).unwrap();
        let traj = simulate(&a, mu, 5).unwrap();
        for r in traj.rounds() {
            let c: f64 = pi.iter().zip(r).map(|(p, m)| p * m).sum();
            prop_assert!((c - c0).abs() < 1e-9);
        }
    }

    #[test]
    fn lambda2_below_one(a in matrix_strategy()) {
        let l2 = second_eigenvalue_modulus(&a).unwrap();
        prop_assert!((0.0..1.0).contains(&l2));
    }
}

#[test]
fn fully_connected_uniform_weights_converge_in_one_step() {
    let k = 5;
    let a = CombinationMatrix::from_rows(&vec![vec![0.2; k]; k]).unwrap();
    let traj = simulate(&a, &[0.0, 0.25, 0.5, 0.75, 1.0], 3).unwrap();
    assert!(traj.rounds()[1].iter().all(|v| (v - 0.5).abs() < 1e-15));
    assert!(second_eigenvalue_modulus(&a).unwrap() < 1e-12);
    assert_eq!(empirical_halving_time(&traj).unwrap(), Some(0.5));
}

#[test]
fn ring_profiles_give_primitive_matrix() {
    let spec = GraphSpec::ring(6);
    let g = generate_graph(&spec).unwrap();
    assert!(is_strongly_connected(&g));
    let profiles: Vec<AgentProfile> = (0..6).map(|_| AgentProfile::new(AgentType::OpenMinded, Stance::Neutral)).collect();
    let a = build_combination_matrix(&g, &profiles).unwrap();
    assert!(a.is_primitive());
    let l2 = second_eigenvalue_modulus(&a).unwrap();
    assert!(l2 > 0.5 && l2 < 1.0);
}
