//! Property tests for the invariants of each module.

use std::f64::consts::PI;

use flexoct::builders::{build_type1, build_type2, build_type3_flat};
use flexoct::cli_io::{obj_string, parse_obj, parse_path_csv, path_csv_string};
use flexoct::flexion::{flex_path, rigid_alignment_residual, DriveSpec, FlexionPath};
use flexoct::octa_model::{
    all_dihedrals, edge_lengths, facet_angles, neighbors_cyclic, type3_residual, validate, vertex_face_angles, EdgeKey,
    Facet, OctaRealization, VertexLabel,
};
use flexoct::sampling::{
    random_face_angles, random_realization, random_scalene_triangle, random_type1_input, random_type2_input, rng,
};
use flexoct::spherical_linkage::{
    classify, reconstruct_angles, solve_conjugate, tetra_coeffs, FaceAngles, HalfTangent, LinkageTag,
};
use flexoct::verifiers::HexagonKey;
use flexoct::Vec3;
use nalgebra::{Rotation3, Unit};
use proptest::prelude::*;
use rand::Rng;

use VertexLabel::*;

fn edge(s: &str) -> EdgeKey {
    s.parse().unwrap()
}

fn wrapped_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn face() -> impl Strategy<Value = f64> {
    1e-3..PI - 1e-3
}

/// General, adjacent-equal and opposite-equal face quadruples.
fn face_angles() -> impl Strategy<Value = FaceAngles> {
    prop_oneof![
        (face(), face(), face(), face()).prop_filter_map("invalid", |(a, b, g, d)| FaceAngles::new(a, b, g, d).ok()),
        (face(), face()).prop_filter_map("invalid", |(a, b)| FaceAngles::new(a, b, b, a).ok()),
        (face(), face()).prop_filter_map("invalid", |(a, b)| FaceAngles::new(a, b, a, b).ok()),
    ]
}

fn rigid_motion(axis: [f64; 3], angle: f64, shift: [f64; 3]) -> impl Fn(Vec3) -> Vec3 {
    let axis = Vec3::from(axis);
    let axis = if axis.norm() < 1e-3 { Vec3::z() } else { axis };
    let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
    let shift = Vec3::from(shift);
    move |p| rot * p + shift
}

fn vec3() -> impl Strategy<Value = [f64; 3]> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn conjugate_symmetry(fa in face_angles(), t in -50.0..50.0f64, u in -50.0..50.0f64) {
        let c = tetra_coeffs(&fa);
        prop_assert_eq!(c.eval(t, u), c.eval(-t, -u));
    }

    #[test]
    fn conjugate_roots_satisfy_equation(fa in face_angles(), t in -20.0..20.0f64) {
        let c = tetra_coeffs(&fa);
        if let Ok(roots) = solve_conjugate(&c, HalfTangent::Finite(t)) {
            for u in roots.all() {
                let r = c.residual(HalfTangent::Finite(t), u) / c.magnitude();
                prop_assert!(r <= 1e-10, "t = {t}, u = {u:?}, residual {r:e}");
            }
        }
    }

    #[test]
    fn reconstruction_recovers_angles(fa in (0.05..PI - 0.05, 0.05..PI - 0.05, 0.05..PI - 0.05, 0.05..PI - 0.05)) {
        let Ok(fa) = FaceAngles::new(fa.0, fa.1, fa.2, fa.3) else { return Ok(()) };
        let c = tetra_coeffs(&fa);
        if let Ok(systems) = reconstruct_angles(&c) {
            let err = systems
                .iter()
                .map(|s| s.to_array().iter().zip(fa.to_array()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
                .fold(f64::INFINITY, f64::min);
            prop_assert!(err <= 1e-7, "{fa:?} -> {systems:?}");
        }
    }

    #[test]
    fn classification_survives_supplementing_beta_delta(fa in face_angles()) {
        let [a, b, g, d] = fa.to_array();
        let other = FaceAngles::new(a, PI - b, g, PI - d).unwrap();
        prop_assert_eq!(classify(&fa, 1e-9).tag, classify(&other, 1e-9).tag);
    }

    #[test]
    fn rhomboidal_reduced_form(a in face(), b in face(), t in -5.0..5.0f64, u in -5.0..5.0f64) {
        let fa = FaceAngles::new(a, b, b, a).unwrap();
        let c = tetra_coeffs(&fa);
        let cls = classify(&fa, 1e-9);
        prop_assume!(cls.tag == LinkageTag::Rhomboidal);
        let reduced = u * (c.a * t * t * u + 2.0 * c.c * t + c.d * u);
        let scale = c.magnitude() * (1.0 + t * t) * (1.0 + u * u);
        prop_assert!((c.eval(t, u) - reduced).abs() <= 1e-12 * scale);
    }

    #[test]
    fn edge_lengths_invariant_under_rigid_motions(
        seed in any::<u64>(), axis in vec3(), angle in -PI..PI, shift in vec3(), mirror in any::<bool>()
    ) {
        let r = random_realization(&mut rng(seed));
        let motion = rigid_motion(axis, angle, shift);
        let moved = r.map(|p| {
            let q = motion(p);
            if mirror { Vec3::new(-q.x, q.y, q.z) } else { q }
        });
        let (l0, l1) = (edge_lengths(&r).unwrap(), edge_lengths(&moved).unwrap());
        prop_assert!(l0.max_relative_deviation(&l1) <= 1e-12);
    }

    #[test]
    fn face_angles_match_facet_angles(seed in any::<u64>()) {
        let r = random_realization(&mut rng(seed));
        for v in VertexLabel::ALL {
            let ring = neighbors_cyclic(v);
            let e = |i: usize| EdgeKey::new(v, ring[i]).unwrap();
            let mut fa = vertex_face_angles(&r, v, (e(0), e(1))).unwrap().to_array();
            prop_assert!(fa.iter().all(|&x| x > 0.0 && x < PI));
            let mut expected: Vec<f64> = Facet::ALL
                .iter()
                .filter(|f| f.contains(v))
                .map(|&f| {
                    let i = f.vertices().iter().position(|&x| x == v).unwrap();
                    facet_angles(&r, f)[i]
                })
                .collect();
            fa.sort_by(f64::total_cmp);
            expected.sort_by(f64::total_cmp);
            for (x, y) in fa.iter().zip(&expected) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn dihedrals_flip_sign_under_reflection(seed in any::<u64>()) {
        let r = random_realization(&mut rng(seed));
        let mirrored = r.map(|p| Vec3::new(p.x, p.y, -p.z));
        let (d0, d1) = (all_dihedrals(&r).unwrap(), all_dihedrals(&mirrored).unwrap());
        for (x, y) in d0.iter().zip(&d1) {
            prop_assert!(wrapped_diff(*x, -*y) <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn dihedrals_are_stable_under_small_perturbations(seed in any::<u64>()) {
        let mut g = rng(seed);
        let r = random_realization(&mut g);
        let eps = 1e-9 * r.diameter();
        let mut perturbed = r;
        for v in VertexLabel::ALL {
            let dx = Vec3::new(g.random_range(-eps..eps), g.random_range(-eps..eps), g.random_range(-eps..eps));
            perturbed.set(v, r.get(v) + dx);
        }
        let (d0, d1) = (all_dihedrals(&r).unwrap(), all_dihedrals(&perturbed).unwrap());
        for (x, y) in d0.iter().zip(&d1) {
            prop_assert!(wrapped_diff(*x, *y) <= 1e-6);
        }
    }

    #[test]
    fn type1_builder_equalities(seed in any::<u64>()) {
        let (a, b, f, axis) = random_type1_input(&mut rng(seed), 0.02);
        let r = build_type1(a, b, f, &axis).unwrap();
        let el = edge_lengths(&r).unwrap();
        let mean = el.mean();
        for (x, y) in [("AB", "DE"), ("AF", "DC"), ("BF", "EC"), ("AC", "DF"), ("AE", "DB"), ("BC", "EF")] {
            prop_assert!((el.get(edge(x)) - el.get(edge(y))).abs() <= 1e-12 * mean.max(1.0));
        }
        for (p, q) in [(A, D), (B, E), (C, F)] {
            let mid = (r.get(p) + r.get(q)) / 2.0;
            prop_assert!(axis.distance(mid) <= 1e-12 * r.diameter().max(1.0));
        }
        prop_assert!(validate(&el).is_empty());
    }

    #[test]
    fn type2_builder_is_mirror_symmetric(seed in any::<u64>()) {
        let (c, f, a, e, plane) = random_type2_input(&mut rng(seed), 0.02);
        let r = build_type2(c, f, a, e, &plane).unwrap();
        let swap = |v: VertexLabel| match v {
            A => D,
            D => A,
            B => E,
            E => B,
            other => other,
        };
        let reflected = r.map(|p| plane.reflect(p));
        let relabeled = OctaRealization::new(VertexLabel::ALL.map(|v| reflected.get(swap(v))));
        for v in VertexLabel::ALL {
            prop_assert!((relabeled.get(v) - r.get(v)).norm() <= 1e-12 * r.diameter().max(1.0));
        }
        prop_assert!(validate(&edge_lengths(&r).unwrap()).is_empty());
    }

    #[test]
    fn type3_builder_is_compatible(seed in any::<u64>(), w in [0.05..1.0f64, 0.05..1.0f64, 0.05..1.0f64]) {
        let (a, b, c) = random_scalene_triangle(&mut rng(seed));
        let s = w[0] + w[1] + w[2];
        let p = (a * w[0] + b * w[1] + c * w[2]) / s;
        if let Ok((con, r)) = build_type3_flat(a, b, c, p) {
            prop_assert!(con.ceva_residual <= 1e-9, "ceva residual {:e}", con.ceva_residual);
            let res = type3_residual(&r, 1e-9).unwrap();
            prop_assert!(res <= 1e-9, "type3 residual {res:e}");
            prop_assert!(validate(&edge_lengths(&r).unwrap()).is_empty());
        }
    }

    #[test]
    fn obj_round_trip_is_exact(seed in any::<u64>()) {
        let r = random_realization(&mut rng(seed));
        let back = parse_obj(&obj_string(&r, Some("frame"))).unwrap();
        prop_assert_eq!(r, back);
    }
}

fn short_path(seed: u64, pinned: [VertexLabel; 3]) -> FlexionPath {
    let (a, b, f, axis) = random_type1_input(&mut rng(seed), 0.05);
    let r = build_type1(a, b, f, &axis).unwrap();
    let drive = DriveSpec { max_steps: 40, initial_step: 0.005, max_step: 0.01, pinned, ..DriveSpec::default() };
    flex_path(&r, &edge_lengths(&r).unwrap(), &drive).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn paths_keep_lengths_and_advance(seed in any::<u64>()) {
        let path = short_path(seed, [A, B, C]);
        prop_assert!(path.max_edge_deviation() <= 1e-9);
        for w in path.frames.windows(2) {
            prop_assert!(w[1].arclength > w[0].arclength);
        }
    }

    #[test]
    fn csv_round_trip(seed in any::<u64>()) {
        let path = short_path(seed, [A, B, C]);
        let rows = parse_path_csv(&path_csv_string(&path)).unwrap();
        prop_assert_eq!(rows.len(), path.frames.len());
        for (row, frame) in rows.iter().zip(&path.frames) {
            prop_assert_eq!(row.arclength, frame.arclength);
            prop_assert_eq!(row.dihedrals, frame.dihedrals);
            prop_assert_eq!(row.flat, frame.flat);
        }
    }

    /// The traced curve does not depend on which facet is held fixed.
    #[test]
    fn pinning_does_not_change_the_curve(seed in any::<u64>()) {
        let p1 = short_path(seed, [A, B, C]);
        let p2 = short_path(seed, [D, F, E]);
        let bc = edge("BC").index();
        let theta: Vec<f64> = p1.frames.iter().map(|f| f.dihedrals[bc]).collect();
        prop_assume!(theta.windows(2).all(|w| w[1] > w[0]));
        let mut compared = 0;
        for f in &p2.frames {
            let x = f.dihedrals[bc];
            let Some(k) = theta.windows(2).position(|w| w[0] <= x && x <= w[1]) else { continue };
            let s = (x - theta[k]) / (theta[k + 1] - theta[k]);
            let (d0, d1) = (&p1.frames[k].dihedrals, &p1.frames[k + 1].dihedrals);
            for i in 0..12 {
                let interp = d0[i] + s * (d1[i] - d0[i]);
                prop_assert!(wrapped_diff(interp, f.dihedrals[i]) <= 1e-3, "edge {i}: {interp} vs {}", f.dihedrals[i]);
            }
            let lengths = f.realization.raw_edge_lengths();
            for (x, y) in lengths.iter().zip(&p1.edge_lengths) {
                prop_assert!((x - y).abs() <= 1e-9 * y);
            }
            compared += 1;
        }
        prop_assert!(compared > 5);
        let r0 = &p1.frames[0].realization;
        prop_assert!(rigid_alignment_residual(r0, &p2.frames[0].realization) <= 1e-12 * r0.diameter());
    }
}

#[test]
fn discriminant_spot_value() {
    let third = PI / 3.0;
    let fa = FaceAngles::new(third, third, third, third).unwrap();
    assert!((tetra_coeffs(&fa).discriminant() - 5.0625).abs() <= 1e-12);
    assert!((fa.discriminant_closed_form() - 5.0625).abs() <= 1e-12);
}

#[test]
fn sampled_face_angles_are_open() {
    let mut g = rng(7);
    for _ in 0..1000 {
        let fa = random_face_angles(&mut g).to_array();
        assert!(fa.iter().all(|&x| x > 0.0 && x < PI));
    }
}

#[test]
fn hexagon_corners_are_facet_corners() {
    for h in HexagonKey::ALL {
        let v = h.vertices();
        for i in 0..6 {
            let (p, q, s) = (v[(i + 5) % 6], v[i], v[(i + 1) % 6]);
            assert!(Facet::ALL.iter().any(|f| f.contains(p) && f.contains(q) && f.contains(s)), "{h:?} at {q:?}");
        }
    }
}
