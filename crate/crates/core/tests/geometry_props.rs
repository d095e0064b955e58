use nalgebra::DVector;
use proptest::prelude::*;

use botw_core::geometry::{builtin_instance, PolytopeActionSet, MEMBERSHIP_TOL, RECONSTRUCTION_TOL};

fn polygon(k: usize, phase: f64) -> PolytopeActionSet {
    let verts: Vec<DVector<f64>> = (0..k)
        .map(|j| {
            let a = phase + 2.0 * std::f64::consts::PI * j as f64 / k as f64;
            DVector::from_vec(vec![a.cos(), a.sin()])
        })
        .collect();
    let halfspaces = (0..k)
        .map(|j| {
            let (p, q) = (&verts[j], &verts[(j + 1) % k]);
            let e = q - p;
            let n = DVector::from_vec(vec![e[1], -e[0]]);
            let b = n.dot(p);
            (n, b)
        })
        .collect();
    PolytopeActionSet::new(verts, halfspaces).unwrap()
}

fn sets() -> impl Strategy<Value = PolytopeActionSet> {
    prop_oneof![
        (3usize..9, 0.0..1.0f64).prop_map(|(k, phase)| polygon(k, phase)),
        (2usize..5).prop_map(|d| builtin_instance("hypercube", d).unwrap()),
        (2usize..5).prop_map(|d| builtin_instance("simplex", d).unwrap()),
    ]
}

/// A convex combination of the vertices with random weights.
fn point_in(set: &PolytopeActionSet, raw: &[f64]) -> DVector<f64> {
    let n = set.num_vertices();
    let w: Vec<f64> = (0..n).map(|i| raw[i % raw.len()] + 1e-3).collect();
    let total: f64 = w.iter().sum();
    set.vertices().iter().zip(&w).fold(DVector::zeros(set.dimension()), |acc, (v, wi)| acc + v * (wi / total))
}

fn bisect_gauge(set: &PolytopeActionSet, pole: &DVector<f64>, x: &DVector<f64>) -> f64 {
    // smallest r with pole + (x - pole) / r inside
    let inside = |r: f64| set.membership(&(pole + (x - pole) / r), 1e-12);
    let (mut lo, mut hi) = (0.0, 1.0);
    while !inside(hi) {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if inside(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn convex_combinations_are_members(set in sets(), raw in prop::collection::vec(0.0..1.0f64, 1..12)) {
        let x = point_in(&set, &raw);
        prop_assert!(set.membership(&x, MEMBERSHIP_TOL));
        for v in set.vertices() {
            prop_assert!(set.membership(v, MEMBERSHIP_TOL));
        }
    }

    #[test]
    fn far_points_are_not_members(set in sets(), dir in prop::collection::vec(-1.0..1.0f64, 4)) {
        let d = set.dimension();
        let u = DVector::from_fn(d, |i, _| dir[i % dir.len()] + 0.01);
        let far = set.vertex_centroid() + u.normalize() * (4.0 * set.max_vertex_norm() + 1.0);
        prop_assert!(!set.membership(&far, MEMBERSHIP_TOL));
    }

    #[test]
    fn decomposition_reconstructs_with_small_support(set in sets(), raw in prop::collection::vec(0.0..1.0f64, 1..12)) {
        let x = point_in(&set, &raw);
        let combo = set.caratheodory_decompose(&x).unwrap();
        prop_assert!(combo.len() <= set.dimension() + 1);
        let total: f64 = combo.support().iter().map(|(_, w)| w).sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(combo.support().iter().all(|&(_, w)| w >= 0.0));
        prop_assert!((set.combination_point(&combo) - &x).amax() < RECONSTRUCTION_TOL);
    }

    #[test]
    fn gauge_matches_bisection(
        set in sets(),
        pole_idx in 0usize..32,
        raw in prop::collection::vec(0.0..1.0f64, 1..12),
        stretch in 0.05..1.0f64,
    ) {
        let pole = set.vertex(pole_idx % set.num_vertices()).clone();
        let x = &pole + (point_in(&set, &raw) - &pole) * stretch;
        prop_assume!((&x - &pole).norm() > 1e-6);
        let g = set.minkowski_gauge(&pole, &x).unwrap();
        let b = bisect_gauge(&set, &pole, &x);
        prop_assert!((g - b).abs() <= 1e-9, "gauge {g} bisection {b}");
    }

    #[test]
    fn gauge_clamps_outside_the_set(set in sets(), raw in prop::collection::vec(0.0..1.0f64, 1..12), stretch in 1.5..4.0f64) {
        let centre = set.vertex_centroid();
        let x = &centre + (point_in(&set, &raw) - &centre) * stretch;
        prop_assume!(!set.membership(&x, 1e-9));
        prop_assert_eq!(set.minkowski_gauge(&centre, &x).unwrap(), 1.0);
    }

    #[test]
    fn lottery_follows_weights(set in sets(), raw in prop::collection::vec(0.0..1.0f64, 1..12), u in 0.0..1.0f64) {
        let combo = set.caratheodory_decompose(&point_in(&set, &raw)).unwrap();
        let pick = combo.sample_with(u);
        prop_assert!(combo.support().iter().any(|&(i, w)| i == pick && w > 0.0));
    }
}

#[test]
fn json_round_trip_keeps_the_set() {
    for set in [polygon(5, 0.3), builtin_instance("hypercube", 3).unwrap(), builtin_instance("simplex", 4).unwrap()] {
        let text = serde_json::to_string(&set).unwrap();
        let back: PolytopeActionSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back.vertices(), set.vertices());
        assert!((back.normals() - set.normals()).amax() < 1e-15);
        assert!((back.offsets() - set.offsets()).amax() < 1e-15);
    }
}
