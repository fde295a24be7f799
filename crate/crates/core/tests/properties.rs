//! Cross-module invariants as property tests.

use proptest::prelude::*;

use mfld_core::cube::{CubeFunction, CubeMeasure};
use mfld_core::gaussian::{fisher_and_kl, GaussianMixture};
use mfld_core::graphs::{hom_density, Adjacency, SimpleGraph, SubgraphModel};
use mfld_core::meanfield::{solve_gibbs, MeanFieldOptions, MeanFieldProblem, Objective};
use mfld_core::transport::{tv_distance, w1_exact};

fn measure(n: usize) -> impl Strategy<Value = CubeMeasure> {
    prop::collection::vec(-2.0..2.0f64, 1 << n).prop_map(move |v| CubeMeasure::from_log_density(n, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn w1_is_a_metric((a, b, c) in (1usize..=4).prop_flat_map(|n| (measure(n), measure(n), measure(n)))) {
        let ab = w1_exact(&a, &b).unwrap().0;
        let ba = w1_exact(&b, &a).unwrap().0;
        let ac = w1_exact(&a, &c).unwrap().0;
        let cb = w1_exact(&c, &b).unwrap().0;
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!(ab <= ac + cb + 1e-9);
        // Hamming distance is at least 1 off the diagonal
        prop_assert!(ab >= tv_distance(&a, &b).unwrap() - 1e-9);
        prop_assert!(ab <= a.n() as f64 * tv_distance(&a, &b).unwrap() + 1e-9);
    }

    #[test]
    fn gibbs_objective_never_exceeds_log_partition(vals in prop::collection::vec(-1.5..1.5f64, 16), p in 0.1..0.9f64) {
        let f = CubeFunction::new(4, vals).unwrap();
        let prob = MeanFieldProblem::new(
            Objective::Table(f),
            p,
            MeanFieldOptions { restarts: 4, ..Default::default() },
        ).unwrap();
        let r = solve_gibbs(&prob).unwrap();
        prop_assert!(r.objective <= r.log_partition.unwrap() + 1e-9);
    }

    #[test]
    fn fisher_dominates_twice_kl(
        w in 0.05..0.95f64,
        c0 in -3.0..3.0f64,
        c1 in -3.0..3.0f64,
    ) {
        let nu = GaussianMixture::new(vec![w, 1.0 - w], vec![vec![c0], vec![c1]]).unwrap();
        let (fisher, kl) = fisher_and_kl(&nu, 161);
        prop_assert!(kl >= -1e-12);
        prop_assert!(fisher >= 2.0 * kl - 1e-9);
        // gradient of f stays in the hull of the centers
        for x in [-5.0, -0.3, 0.0, 1.7, 6.0] {
            let g = nu.f_grad(&[x]).1[0];
            prop_assert!(g >= c0.min(c1) - 1e-12 && g <= c0.max(c1) + 1e-12);
        }
    }

    #[test]
    fn hom_densities_lie_in_unit_interval(bits in 0usize..(1 << 10)) {
        let g = Adjacency::from_vertex(5, bits);
        for h in [SimpleGraph::edge(), SimpleGraph::triangle(), SimpleGraph::path(3), SimpleGraph::complete(4)] {
            let t = hom_density(&h, &g).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
        }
        let edge = hom_density(&SimpleGraph::edge(), &g).unwrap();
        let tri = hom_density(&SimpleGraph::triangle(), &g).unwrap();
        // Kruskal-Katona style: t(K3) <= t(K2)^{3/2}
        prop_assert!(tri <= edge.powf(1.5) + 1e-12);
    }

    #[test]
    fn triangle_gradient_is_exact(bits in 0usize..(1 << 10)) {
        let m = SubgraphModel::triangle(5).unwrap();
        let f = m.to_cube_function().unwrap();
        let a = m.subgraph_grad(bits);
        let b = f.discrete_gradient(bits);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }
}
