use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::algebra::NilpotentAlgebra;
use crate::group::{LinearFlow, SemidirectGroup};
use crate::lcs::{ControlBox, ControlSystem};
use crate::spectral::Derivation;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(xs)
}

fn scalar(a: f64, r: f64) -> ControlSystem {
    let alg = NilpotentAlgebra::preset("abelian:1").unwrap();
    let d = Derivation::new(DMatrix::from_element(1, 1, a), &alg).unwrap();
    let g = SemidirectGroup::nilpotent(alg);
    let f = LinearFlow::new(&g, d, DVector::zeros(0)).unwrap();
    ControlSystem::new(g, f, vec![v(&[1.0])], vec![], ControlBox::symmetric(1, r).unwrap()).unwrap()
}

fn rotation() -> ControlSystem {
    let alg = NilpotentAlgebra::preset("abelian:2").unwrap();
    let r = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
    let g = SemidirectGroup::new(alg.clone(), 1, vec![r], vec![]).unwrap();
    let d = Derivation::new(-DMatrix::identity(2, 2), &alg).unwrap();
    let f = LinearFlow::new(&g, d, v(&[0.0])).unwrap();
    ControlSystem::new(g, f, vec![v(&[1.0, 0.0])], vec![], ControlBox::symmetric(1, 1.0).unwrap()).unwrap()
}

fn scalar_graph(a: f64, eps: f64, delta: f64) -> (ControlSystem, ChainGraph) {
    let sys = scalar(a, 1.0);
    let w = GridWindow::new(sys.group(), 0, &[-2.0], &[2.0], delta).unwrap();
    let p = GraphParams::standard(&sys, eps, 1.0, 4).unwrap();
    let g = build_chain_graph(&sys, &w, &p, 1).unwrap();
    (sys, g)
}

#[test]
fn scalar_stable_set_is_control_interval() {
    let (sys, g) = scalar_graph(-1.0, 0.1, 0.05);
    let sets = extract_chain_sets(sys.group(), &g);
    assert_eq!(sets.len(), 1);
    let s = &sets[0];
    let slack = 0.1 + 2.0 * 0.05;
    assert!((s.hull_lo[0] + 1.0).abs() <= slack, "lo {}", s.hull_lo[0]);
    assert!((s.hull_hi[0] - 1.0).abs() <= slack, "hi {}", s.hull_hi[0]);
    assert!(s.contains_identity && s.contains_central_fiber);
    assert_eq!(g.audit.failures, 0);
    assert!(g.audit.checked > 0);
}

#[test]
fn scalar_unstable_set_is_control_interval() {
    let (sys, g) = scalar_graph(1.0, 0.1, 0.05);
    let sets = extract_chain_sets(sys.group(), &g);
    assert_eq!(sets.len(), 1);
    let s = &sets[0];
    let slack = 0.1 + 2.0 * 0.05;
    assert!((s.hull_lo[0] + 1.0).abs() <= slack);
    assert!((s.hull_hi[0] - 1.0).abs() <= slack);
    assert!(g.truncated > 0);
}

#[test]
fn contraction_without_controls_collapses_to_origin() {
    let sys = scalar(-1.0, 1e-3);
    let w = GridWindow::symmetric(sys.group(), 0, &[1.0], 0.1).unwrap();
    let p = GraphParams {
        eps: 0.1,
        tau: 1.0,
        time_samples: vec![1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0],
        controls: vec![vec![0.0]],
    };
    let g = build_chain_graph(&sys, &w, &p, 0).unwrap();
    // away from the acceptance radius of the origin, edges move inward
    let coord = |id: u64| g.window.center_coords(id)[0];
    let r = g.acceptance_radius();
    assert!(g
        .edges
        .iter()
        .filter(|e| coord(e.from).abs() > r)
        .all(|e| coord(e.to).abs() <= coord(e.from).abs() + 1e-12));
    let sets = extract_chain_sets(sys.group(), &g);
    assert_eq!(sets.len(), 1);
    assert!(sets[0].nodes.iter().all(|n| coord(*n).abs() < 0.15));
    assert!(sets[0].contains_identity);
}

#[test]
fn ball_matches_brute_force_on_heisenberg() {
    let alg = NilpotentAlgebra::preset("heisenberg3").unwrap();
    let g = SemidirectGroup::nilpotent(alg);
    let w = GridWindow::symmetric(&g, 0, &[1.0, 1.0, 1.5], 0.2).unwrap();
    let mut q = BallQuery::new(&g, &w);
    for p in [[0.3, -0.7, 0.2], [0.9, 0.9, -1.2], [-0.5, 0.1, 1.4]] {
        let land = Landing::at(&g, g.point(DVector::zeros(0), v(&p)).unwrap());
        let fast = q.ball(&land, 0.45);
        let slow: Vec<u64> = (0..w.node_count())
            .filter(|id| g.distance(&land.point, &w.center(*id)) < 0.45)
            .collect();
        assert_eq!(fast, slow);
    }
}

#[test]
fn ball_matches_brute_force_with_rotation() {
    let sys = rotation();
    let g = sys.group();
    let w = GridWindow::symmetric(g, 16, &[1.0, 1.0], 0.2).unwrap();
    let mut q = BallQuery::new(g, &w);
    for (h, x) in [(0.3, [0.2, -0.4]), (6.1, [0.9, 0.1])] {
        let land = Landing::at(g, g.point(v(&[h]), v(&x)).unwrap());
        let fast = q.ball(&land, 0.5);
        let slow: Vec<u64> = (0..w.node_count())
            .filter(|id| g.distance(&land.point, &w.center(*id)) < 0.5)
            .collect();
        assert_eq!(fast, slow);
    }
}

#[test]
fn landings_agree_with_direct_integration() {
    let alg = NilpotentAlgebra::preset("heisenberg3").unwrap();
    let d = Derivation::new(DMatrix::from_diagonal(&v(&[-1.0, -0.5, -1.5])), &alg).unwrap();
    let g = SemidirectGroup::nilpotent(alg);
    let f = LinearFlow::new(&g, d, DVector::zeros(0)).unwrap();
    let sys = ControlSystem::new(g, f, vec![v(&[1.0, 1.0, 0.0])], vec![], ControlBox::symmetric(1, 1.0).unwrap())
        .unwrap();
    let w = GridWindow::symmetric(sys.group(), 0, &[1.0, 1.0, 1.0], 0.5).unwrap();
    let p = GraphParams::standard(&sys, 0.2, 1.0, 4).unwrap();
    let mut lander = Lander::new(&sys, &w, &p.controls, p.tau, &p.time_samples, p.eps).unwrap();
    let id = w.index_of(&[0, 2, 1]);
    let mut seen = Vec::new();
    lander.walk(id, 1, |_, l, slot, t| {
        if slot.is_some() {
            seen.push((t, l.point));
        }
    });
    assert_eq!(seen.len(), 4);
    for (t, pt) in seen {
        let ctl = crate::lcs::ControlFunction::constant(v(&p.controls[1]), 0.0, t).unwrap();
        let direct = sys.solve(t, &w.center(id), &ctl).unwrap();
        assert!(sys.group().distance(&direct, &pt) < 1e-6);
    }
}

#[test]
fn rotation_set_contains_full_fiber() {
    let sys = rotation();
    let w = GridWindow::symmetric(sys.group(), 16, &[1.6, 1.6], 0.2).unwrap();
    let p = GraphParams::standard(&sys, 0.3, 1.0, 4).unwrap();
    let g = build_chain_graph(&sys, &w, &p, 3).unwrap();
    let sets = extract_chain_sets(sys.group(), &g);
    assert_eq!(sets.len(), 1, "{:?}", sets.iter().map(|s| s.nodes.len()).collect::<Vec<_>>());
    assert!(sets[0].contains_central_fiber);
    let fiber = w.central_fiber();
    assert_eq!(fiber.len(), 16);
    let ctx = VerifyContext::from_system(&sys, &w).unwrap();
    assert!(ctx.g0_compact);
    let rep = verify_uniqueness_and_containment(&sets, &fiber, &ctx);
    assert_eq!(rep.verdict, Verdict::Pass, "{:?}", rep.failures);
    // polar oracle: r' <= -r + 1 keeps the set inside |x| <= 1 + slack
    for n in &sets[0].nodes {
        assert!(w.center(*n).x.norm() <= 1.0 + 0.3 + 0.2 * 1.5);
    }
}

#[test]
fn zero_axis_is_flagged_unbounded() {
    let alg = NilpotentAlgebra::preset("abelian:2").unwrap();
    let d = Derivation::new(DMatrix::from_diagonal(&v(&[0.0, -1.0])), &alg).unwrap();
    let g = SemidirectGroup::nilpotent(alg);
    let f = LinearFlow::new(&g, d, DVector::zeros(0)).unwrap();
    let sys = ControlSystem::new(g, f, vec![v(&[1.0, 0.0])], vec![], ControlBox::symmetric(1, 1.0).unwrap()).unwrap();
    let w = GridWindow::new(sys.group(), 0, &[-1.0, -1.0], &[1.0, 1.0], 0.1).unwrap();
    let p = GraphParams::standard(&sys, 0.1, 1.0, 4).unwrap();
    let graph = build_chain_graph(&sys, &w, &p, 0).unwrap();
    let sets = extract_chain_sets(sys.group(), &graph);
    let ctx = VerifyContext::from_system(&sys, &w).unwrap();
    assert!(!ctx.g0_compact);
    assert_eq!(ctx.unbounded_axes, vec![0]);
    let rep = verify_uniqueness_and_containment(&sets, &w.central_fiber(), &ctx);
    assert_eq!(rep.verdict, Verdict::NotApplicable);
    assert!(rep.boundary_axes.contains(&0));
    assert!(!rep.boundary_axes.contains(&1));
}

#[test]
fn no_dynamics_gives_no_sets() {
    let sys = scalar(0.0, 1e-3);
    let w = GridWindow::symmetric(sys.group(), 0, &[1.0], 0.2).unwrap();
    let p = GraphParams {
        eps: 0.05,
        tau: 1.0,
        time_samples: vec![1.0],
        controls: vec![vec![0.0]],
    };
    let g = build_chain_graph(&sys, &w, &p, 0).unwrap();
    // only self-loops
    assert_eq!(g.edges.len() as u64, w.node_count());
    assert!(g.edges.iter().all(|e| e.from == e.to));
    assert!(extract_chain_sets(sys.group(), &g).is_empty());
}

#[test]
fn empty_graph_has_no_sets() {
    let sys = scalar(-1.0, 1.0);
    let w = GridWindow::symmetric(sys.group(), 0, &[1.0], 0.2).unwrap();
    let g = ChainGraph {
        window: w,
        params: GraphParams::standard(&sys, 0.1, 1.0, 4).unwrap(),
        edges: vec![],
        truncated: 0,
        audit: AuditReport::default(),
    };
    assert!(extract_chain_sets(sys.group(), &g).is_empty());
    assert!(strongly_connected_components(&g).is_empty());
}

#[test]
fn scc_examples() {
    // two sinks with self-loops
    let comps = super::graph::scc_of(&[0, 1, 2], [(0, 1), (0, 2), (1, 1), (2, 2)].into_iter());
    assert_eq!(comps, vec![vec![0], vec![1], vec![2]]);
    let nodes: Vec<u64> = (0..5).collect();
    let all = nodes.iter().flat_map(|a| nodes.iter().map(move |b| (*a, *b)));
    assert_eq!(super::graph::scc_of(&nodes, all), vec![nodes.clone()]);
}

#[test]
fn invalid_parameters_are_rejected() {
    let sys = scalar(-1.0, 1.0);
    let w = GridWindow::symmetric(sys.group(), 0, &[1.0], 0.2).unwrap();
    let mut p = GraphParams::standard(&sys, 0.1, 1.0, 4).unwrap();
    p.controls.clear();
    assert!(matches!(build_chain_graph(&sys, &w, &p, 0), Err(crate::Error::NoControls)));
    let mut p = GraphParams::standard(&sys, 0.1, 1.0, 4).unwrap();
    p.time_samples = vec![0.5];
    assert!(build_chain_graph(&sys, &w, &p, 0).is_err());
    assert!(GraphParams::standard(&sys, -0.1, 1.0, 4).is_err());
}

#[test]
fn enriching_the_family_only_adds_edges() {
    let sys = scalar(-1.0, 1.0);
    let w = GridWindow::symmetric(sys.group(), 0, &[2.0], 0.1).unwrap();
    let small = GraphParams {
        eps: 0.1,
        tau: 1.0,
        time_samples: vec![1.0, 2.0],
        controls: vec![vec![0.0], vec![1.0]],
    };
    let big = GraphParams {
        time_samples: vec![1.0, 1.5, 2.0],
        controls: vec![vec![0.0], vec![1.0], vec![-1.0], vec![0.5]],
        ..small.clone()
    };
    let a = build_chain_graph(&sys, &w, &small, 0).unwrap();
    let b = build_chain_graph(&sys, &w, &big, 0).unwrap();
    assert!(a.edges.iter().all(|e| b.has_edge(e.from, e.to)));
    assert!(b.edges.len() > a.edges.len());
}

#[test]
fn shrinking_eps_nests_sets() {
    let sys = scalar(-1.0, 1.0);
    let mut prev: Option<(f64, f64)> = None;
    for eps in [0.2, 0.1, 0.05] {
        let delta = eps / 2.0;
        let w = GridWindow::new(sys.group(), 0, &[-2.0], &[2.0], delta).unwrap();
        let p = GraphParams::standard(&sys, eps, 1.0, 4).unwrap();
        let g = build_chain_graph(&sys, &w, &p, 0).unwrap();
        let sets = extract_chain_sets(sys.group(), &g);
        assert_eq!(sets.len(), 1);
        let hull = (sets[0].hull_lo[0], sets[0].hull_hi[0]);
        if let Some((lo, hi)) = prev {
            assert!(hull.0 >= lo - delta - 1e-12 && hull.1 <= hi + delta + 1e-12);
        }
        prev = Some(hull);
    }
}

#[test]
fn jump_and_tube_extents() {
    let (sys, g) = scalar_graph(-1.0, 0.1, 0.05);
    let sets = extract_chain_sets(sys.group(), &g);
    let jt = jump_and_tube_sets(&sys, &g, &sets[0]).unwrap();
    assert_eq!(jt.jump_nodes, sets[0].nodes);
    assert!(jt.jump_extents[0] >= sets[0].level_extents[0]);
    assert!(jt.tube_extents[0] <= jt.jump_extents[0] + jt.field_bound * 2.0 * g.params.tau);
    assert!(jt.tube_extents[0] >= jt.jump_extents[0] - 1e-12);
}

#[test]
fn contraction_tube_shrinks_with_tau() {
    let sys = scalar(-1.0, 1e-3);
    let w = GridWindow::symmetric(sys.group(), 0, &[1.0], 0.1).unwrap();
    let mut last = f64::INFINITY;
    for tau in [0.5, 1.0, 2.0] {
        let p = GraphParams {
            eps: 0.1,
            tau,
            time_samples: vec![tau, 2.0 * tau],
            controls: vec![vec![0.0]],
        };
        let g = build_chain_graph(&sys, &w, &p, 0).unwrap();
        let sets = extract_chain_sets(sys.group(), &g);
        // tube measured from the start node x = 1 only
        let far = ChainSet {
            nodes: vec![w.node_count() - 1],
            ..sets[0].clone()
        };
        let mut ext = 0.0_f64;
        let mut lander = Lander::new(&sys, &w, &p.controls, tau, &p.time_samples, p.eps).unwrap();
        lander.walk(far.nodes[0], 0, |_, l, _, t| {
            if (t - 2.0 * tau).abs() < 1e-12 {
                ext = l.point.x[0].abs();
            }
        });
        assert!((ext - (-2.0 * tau as f64).exp()).abs() < 1e-6);
        assert!(ext < last);
        last = ext;
    }
}

#[test]
fn scalar_bound_formula() {
    let sys = scalar(-1.0, 1.0);
    let est = estimate_bounds(&sys, 1.0, 0).unwrap();
    let l = &est.levels[0];
    assert_eq!(l.kappa, 1.0);
    assert!((l.mu - 0.9).abs() < 1e-12);
    assert!((l.c - 2.0).abs() < 1e-12);
    let want = 2.0 * 2.0 * (1.0 + 1.0 / 0.9) / (1.0 - (-0.9_f64).exp());
    assert!((l.bound - want).abs() < 1e-9);
    assert!(l.bound >= 1.0);
}

#[test]
fn bound_limits_and_pole() {
    let far = theoretical_bound(1.0, 1.0, 1.0, 60.0, 1).unwrap();
    assert!((far - 4.0).abs() < 1e-12);
    assert!(theoretical_bound(1.2, 1.0, 1.0, 0.1, 1).is_err());
    let near = theoretical_bound(1.2, 1.0, 1.0, 1.2_f64.ln() + 1e-9, 1).unwrap();
    assert!(near > 1e6);
}

#[test]
fn heisenberg_bounds_are_finite_and_ordered() {
    let alg = NilpotentAlgebra::preset("heisenberg3").unwrap();
    let d = Derivation::new(DMatrix::from_diagonal(&v(&[1.0, 2.0, 3.0])), &alg).unwrap();
    let g = SemidirectGroup::nilpotent(alg);
    let f = LinearFlow::new(&g, d, DVector::zeros(0)).unwrap();
    let sys = ControlSystem::new(g, f, vec![v(&[1.0, 1.0, 0.0])], vec![], ControlBox::symmetric(1, 1.0).unwrap())
        .unwrap();
    let est = estimate_bounds(&sys, 1.0, 0).unwrap();
    assert_eq!(est.levels.len(), 2);
    assert!(est.levels.iter().all(|l| l.factor < 1.0 && l.bound.is_finite()));
    assert!((est.levels[0].source_max - 2.0_f64.sqrt()).abs() < 1e-12);
    let hw = est.half_widths(&sys);
    assert!((hw[0] - 1.5 * est.levels[0].bound).abs() < 1e-9);
    assert!((hw[2] - 1.5 * est.levels[1].bound).abs() < 1e-9);
}

#[test]
fn non_hyperbolic_block_is_reported() {
    let sys = scalar(0.0, 1.0);
    assert!(matches!(estimate_bounds(&sys, 1.0, 0), Err(crate::Error::NotHyperbolic(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn audited_edges_reintegrate(a in -1.5_f64..1.5, seed in 0u64..1000) {
        prop_assume!(a.abs() > 0.2);
        let sys = scalar(a, 1.0);
        let w = GridWindow::symmetric(sys.group(), 0, &[1.5], 0.1).unwrap();
        let p = GraphParams::standard(&sys, 0.1, 0.7, 4).unwrap();
        let g = build_chain_graph(&sys, &w, &p, seed).unwrap();
        prop_assert_eq!(g.audit.failures, 0);
        let e = &g.edges;
        prop_assert!(e.windows(2).all(|p| (p[0].from, p[0].to) < (p[1].from, p[1].to)));
    }
}
