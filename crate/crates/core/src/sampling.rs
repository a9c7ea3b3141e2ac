//! Seeded random inputs for tests and parameter sweeps.
//!
//! Set `FLEXOCT_SEED` to reproduce a run.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::builders::{build_type1, build_type2, Line3, Plane3};
use crate::octa_model::{first_degenerate_facet, Facet, OctaRealization};
use crate::spherical_linkage::FaceAngles;
use crate::{Vec2, Vec3};

pub const SEED_ENV: &str = "FLEXOCT_SEED";

/// `FLEXOCT_SEED` if set and parseable, otherwise `default`.
pub fn seed_from_env(default: u64) -> u64 {
    std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(default)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_face_angles<R: Rng>(rng: &mut R) -> FaceAngles {
    random_face_angles_within(rng, 1e-3)
}

/// Face angles uniform in `[margin, π − margin]`.
pub fn random_face_angles_within<R: Rng>(rng: &mut R, margin: f64) -> FaceAngles {
    let mut a = || rng.random_range(margin..PI - margin);
    FaceAngles::new(a(), a(), a(), a()).expect("angles in range")
}

fn random_point<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Smallest facet area over the squared diameter.
pub fn shape_quality(r: &OctaRealization) -> f64 {
    let d2 = r.diameter().powi(2);
    Facet::ALL.iter().map(|&f| r.facet_area(f) / d2).fold(f64::INFINITY, f64::min)
}

/// Points `A`, `B`, `F` for [`build_type1`] about the z-axis, with facets no
/// thinner than `min_quality`.
pub fn random_type1_input<R: Rng>(rng: &mut R, min_quality: f64) -> (Vec3, Vec3, Vec3, Line3) {
    let axis = Line3::z_axis();
    loop {
        let (a, b, f) = (random_point(rng, -1.0, 1.0), random_point(rng, -1.0, 1.0), random_point(rng, -1.0, 1.0));
        if [a, b, f].iter().any(|p| axis.distance(*p) < 0.3) {
            continue;
        }
        if let Ok(r) = build_type1(a, b, f, &axis) {
            if shape_quality(&r) >= min_quality {
                return (a, b, f, axis);
            }
        }
    }
}

/// Points `C`, `F` on the plane `y = 0` and `A`, `E` off it, for [`build_type2`].
pub fn random_type2_input<R: Rng>(rng: &mut R, min_quality: f64) -> (Vec3, Vec3, Vec3, Vec3, Plane3) {
    let plane = Plane3::new(Vec3::zeros(), Vec3::y());
    loop {
        let c = Vec3::new(rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0));
        let f = Vec3::new(rng.random_range(-1.0..1.0), 0.0, rng.random_range(-1.0..1.0));
        let mut off = || {
            let y = rng.random_range(0.3..1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            Vec3::new(rng.random_range(-1.0..1.0), y, rng.random_range(-1.0..1.0))
        };
        let (a, e) = (off(), off());
        if let Ok(r) = build_type2(c, f, a, e, &plane) {
            if shape_quality(&r) >= min_quality {
                return (c, f, a, e, plane);
            }
        }
    }
}

/// A scalene triangle with sides differing by at least 10% and all angles
/// at least 20°.
pub fn random_scalene_triangle<R: Rng>(rng: &mut R) -> (Vec2, Vec2, Vec2) {
    loop {
        let a = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let b = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let c = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut s = [(b - c).norm(), (c - a).norm(), (a - b).norm()];
        s.sort_by(f64::total_cmp);
        if s[0] < 0.3 || s[1] < 1.1 * s[0] || s[2] < 1.1 * s[1] {
            continue;
        }
        let angle = |p: Vec2, q: Vec2, r: Vec2| {
            let (u, v) = (q - p, r - p);
            (u.x * v.y - u.y * v.x).abs().atan2(u.dot(&v))
        };
        let min_angle = angle(a, b, c).min(angle(b, c, a)).min(angle(c, a, b));
        if min_angle >= 20f64.to_radians() {
            return (a, b, c);
        }
    }
}

/// Six points in `[-1, 1]³` forming non-degenerate facets.
pub fn random_realization<R: Rng>(rng: &mut R) -> OctaRealization {
    loop {
        let r = OctaRealization::new(std::array::from_fn(|_| random_point(rng, -1.0, 1.0)));
        if first_degenerate_facet(&r).is_none() && shape_quality(&r) > 1e-3 {
            return r;
        }
    }
}
