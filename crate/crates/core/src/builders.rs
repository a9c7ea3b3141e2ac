//! Constructions of the three families of flexible octahedra.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::octa_model::{first_degenerate_facet, type3_residual, OctaRealization, VertexLabel};
use crate::{Vec2, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("points {0} must lie on the mirror plane (distance {1:e})")]
    PointsNotOnPlane(String, f64),
    #[error("concurrency point yields a zero rotation at vertex {0}")]
    DegenerateConcurrency(VertexLabel),
    #[error("construction lines for vertex {0} do not meet at a finite point")]
    UnboundedIntersection(VertexLabel),
    #[error("concurrency point must lie strictly inside the triangle")]
    PointOutsideTriangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line3 {
    pub point: Vec3,
    pub direction: Vec3,
}

impl Line3 {
    pub fn new(point: Vec3, direction: Vec3) -> Self {
        Self { point, direction }
    }

    pub fn z_axis() -> Self {
        Self::new(Vec3::zeros(), Vec3::z())
    }

    fn unit(&self) -> Result<Vec3, BuildError> {
        self.direction.try_normalize(1e-300).ok_or_else(|| BuildError::DegenerateInput("axis direction is zero".into()))
    }

    pub fn project(&self, x: Vec3) -> Vec3 {
        let d = self.direction.normalize();
        self.point + d * d.dot(&(x - self.point))
    }

    pub fn distance(&self, x: Vec3) -> f64 {
        (x - self.project(x)).norm()
    }

    /// Rotation by π about the line.
    pub fn half_turn(&self, x: Vec3) -> Vec3 {
        2.0 * self.project(x) - x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane3 {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane3 {
    pub fn new(point: Vec3, normal: Vec3) -> Self {
        Self { point, normal }
    }

    pub fn signed_distance(&self, x: Vec3) -> f64 {
        self.normal.normalize().dot(&(x - self.point))
    }

    pub fn reflect(&self, x: Vec3) -> Vec3 {
        x - 2.0 * self.signed_distance(x) * self.normal.normalize()
    }
}

/// Relative distance under which two vertices or a facet count as collapsed.
const COLLAPSE_TOL: f64 = 1e-9;

fn check_nondegenerate(r: &OctaRealization) -> Result<(), BuildError> {
    let diam = r.diameter();
    if !(diam > 0.0 && diam.is_finite()) {
        return Err(BuildError::DegenerateInput("all vertices coincide".into()));
    }
    for i in 0..6 {
        for j in i + 1..6 {
            if (r.points[i] - r.points[j]).norm() <= COLLAPSE_TOL * diam {
                return Err(BuildError::DegenerateInput(format!(
                    "vertices {} and {} coincide",
                    VertexLabel::ALL[i],
                    VertexLabel::ALL[j]
                )));
            }
        }
    }
    for f in crate::octa_model::Facet::ALL {
        if r.facet_area(f) <= COLLAPSE_TOL * diam * diam {
            return Err(BuildError::DegenerateInput(format!("facet {f} collapses")));
        }
    }
    debug_assert!(first_degenerate_facet(r).is_none());
    Ok(())
}

/// Type I: `D`, `E`, `C` are the half-turn images of `A`, `B`, `F` about `axis`.
pub fn build_type1(pa: Vec3, pb: Vec3, pf: Vec3, axis: &Line3) -> Result<OctaRealization, BuildError> {
    axis.unit()?;
    let r = OctaRealization::new([pa, pb, axis.half_turn(pf), axis.half_turn(pa), axis.half_turn(pb), pf]);
    check_nondegenerate(&r)?;
    Ok(r)
}

/// The rigid assembly with the same edge lengths on the sides it shares with
/// [`build_type1`]: `C` and `E` are reflected through the plane containing
/// `A`, `D` and the axis.
pub fn build_type1_mirror(pa: Vec3, pb: Vec3, pf: Vec3, axis: &Line3) -> Result<OctaRealization, BuildError> {
    let base = build_type1(pa, pb, pf, axis)?;
    let d = axis.unit()?;
    let ad = base.get(VertexLabel::D) - pa;
    let normal = ad
        .cross(&d)
        .try_normalize(COLLAPSE_TOL)
        .ok_or_else(|| BuildError::DegenerateInput("A lies on the axis".into()))?;
    let sigma = Plane3::new(pa, normal);
    let mut r = base;
    r.set(VertexLabel::C, sigma.reflect(base.get(VertexLabel::C)));
    r.set(VertexLabel::E, sigma.reflect(base.get(VertexLabel::E)));
    check_nondegenerate(&r)?;
    Ok(r)
}

/// Type II: `C`, `F` on the plane, `D` and `B` the mirror images of `A` and `E`.
pub fn build_type2(pc: Vec3, pf: Vec3, pa: Vec3, pe: Vec3, plane: &Plane3) -> Result<OctaRealization, BuildError> {
    if plane.normal.norm() == 0.0 {
        return Err(BuildError::DegenerateInput("plane normal is zero".into()));
    }
    let scale = [pc, pf, pa, pe].iter().map(|p| p.amax()).fold(1.0, f64::max);
    for (name, p) in [("C", pc), ("F", pf)] {
        let dist = plane.signed_distance(p).abs();
        if dist > 1e-12 * scale {
            return Err(BuildError::PointsNotOnPlane(name.into(), dist));
        }
    }
    for (name, p) in [("A", pa), ("E", pe)] {
        if plane.signed_distance(p).abs() <= COLLAPSE_TOL * scale {
            return Err(BuildError::DegenerateInput(format!("{name} lies on the mirror plane")));
        }
    }
    let r = OctaRealization::new([pa, plane.reflect(pe), pc, plane.reflect(pa), pe, pf]);
    check_nondegenerate(&r)?;
    Ok(r)
}

/// Data of the flat Type III construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Type3Construction {
    pub a: Vec2,
    pub b: Vec2,
    pub c: Vec2,
    /// Common point of the three cevians.
    pub p: Vec2,
    pub incenter: Vec2,
    /// Signed rotation applied to the triangle angle at `A`, `B`, `C`.
    pub rotation_angles: [f64; 3],
    pub d: Vec2,
    pub e: Vec2,
    pub f: Vec2,
    /// `|P − 1|` for the closing product of the three unicursal relations.
    pub ceva_residual: f64,
    /// `|P − 1|` for the trigonometric Ceva product of the cevians through `p`.
    pub trig_ceva_residual: f64,
    /// Largest distance of `p` from the cevians recovered from the built
    /// points, relative to the diameter.
    pub concurrency_residual: f64,
}

fn rot(v: Vec2, theta: f64) -> Vec2 {
    let (s, c) = theta.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn polar(v: Vec2) -> f64 {
    v.y.atan2(v.x)
}

pub(crate) fn wrap_angle(x: f64) -> f64 {
    let y = (x + PI).rem_euclid(2.0 * PI) - PI;
    if y <= -PI {
        PI
    } else {
        y
    }
}

fn cross2(a: Vec2, b: Vec2) -> f64 {
    a.x * b.y - a.y * b.x
}

fn intersect_lines(p: Vec2, u: Vec2, q: Vec2, v: Vec2, diam: f64, label: VertexLabel) -> Result<Vec2, BuildError> {
    let den = cross2(u, v);
    if den.abs() <= 1e-12 * u.norm() * v.norm() {
        return Err(BuildError::UnboundedIntersection(label));
    }
    let s = cross2(q - p, v) / den;
    let x = p + u * s;
    if !((x - p).norm() <= 1e6 * diam) {
        return Err(BuildError::UnboundedIntersection(label));
    }
    Ok(x)
}

/// Flat Type III octahedron on the base triangle `ABC` with cevians through `p`.
///
/// Each angle of the triangle is turned in its plane by twice the angle from
/// the internal bisector to the cevian, and the new sides meet in `D`, `E`, `F`.
pub fn build_type3_flat(
    a: Vec2,
    b: Vec2,
    c: Vec2,
    p: Vec2,
) -> Result<(Type3Construction, OctaRealization), BuildError> {
    let diam = (a - b).norm().max((b - c).norm()).max((c - a).norm());
    let area2 = cross2(b - a, c - a);
    if !(area2.abs() > COLLAPSE_TOL * diam * diam) {
        return Err(BuildError::DegenerateInput("base triangle is degenerate".into()));
    }
    let inside = [cross2(b - a, p - a), cross2(c - b, p - b), cross2(a - c, p - c)]
        .iter()
        .all(|&s| s * area2.signum() > COLLAPSE_TOL * diam * diam);
    if !inside {
        return Err(BuildError::PointOutsideTriangle);
    }
    let (la, lb, lc) = ((b - c).norm(), (c - a).norm(), (a - b).norm());
    let incenter = (a * la + b * lb + c * lc) / (la + lb + lc);

    let verts = [(VertexLabel::A, a), (VertexLabel::B, b), (VertexLabel::C, c)];
    let mut theta = [0.0; 3];
    for (i, (label, v)) in verts.iter().enumerate() {
        theta[i] = 2.0 * wrap_angle(polar(p - v) - polar(incenter - v));
        if theta[i].abs() <= 1e-9 {
            return Err(BuildError::DegenerateConcurrency(*label));
        }
    }
    let [ta, tb, tc] = theta;
    let f = intersect_lines(a, rot(b - a, ta), b, rot(a - b, tb), diam, VertexLabel::F)?;
    let e = intersect_lines(a, rot(c - a, ta), c, rot(a - c, tc), diam, VertexLabel::E)?;
    let d = intersect_lines(b, rot(c - b, tb), c, rot(b - c, tc), diam, VertexLabel::D)?;

    let lift = |v: Vec2| Vec3::new(v.x, v.y, 0.0);
    let r = OctaRealization::new([lift(a), lift(b), lift(c), lift(d), lift(e), lift(f)]);
    check_nondegenerate(&r)?;

    let sin_at = |v: Vec2, x: Vec2, y: Vec2| cross2(x - v, y - v).abs() / ((x - v).norm() * (y - v).norm());
    let trig_ceva =
        sin_at(a, b, p) / sin_at(a, p, c) * sin_at(b, c, p) / sin_at(b, p, a) * sin_at(c, a, p) / sin_at(c, p, b);

    // rotation angles read back from the built points
    let measured = [
        wrap_angle(polar(f - a) - polar(b - a)),
        wrap_angle(polar(d - b) - polar(c - b)),
        wrap_angle(polar(e - c) - polar(a - c)),
    ];
    let mut concurrency_residual: f64 = 0.0;
    for ((_, v), th) in verts.iter().zip(measured) {
        let dir = rot(incenter - v, 0.5 * th).normalize();
        concurrency_residual = concurrency_residual.max(cross2(dir, p - v).abs() / diam);
    }

    let ceva_residual = type3_residual(&r, 1e-9).map_err(BuildError::DegenerateInput)?;
    let construction = Type3Construction {
        a,
        b,
        c,
        p,
        incenter,
        rotation_angles: theta,
        d,
        e,
        f,
        ceva_residual,
        trig_ceva_residual: (trig_ceva - 1.0).abs(),
        concurrency_residual,
    };
    Ok((construction, r))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octa_model::{classify_edge_lengths, edge_lengths, validate, EdgeKey, OPPOSITE_EDGE_PAIRS};
    use approx::assert_abs_diff_eq;
    use VertexLabel::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn type1_example() {
        let r = build_type1(v(1.0, 0.0, 0.5), v(0.1, 1.0, -0.4), v(0.7, -0.8, 0.1), &Line3::z_axis()).unwrap();
        assert_eq!(r.get(D), v(-1.0, 0.0, 0.5));
        assert_eq!(r.get(E), v(-0.1, -1.0, -0.4));
        assert_eq!(r.get(C), v(-0.7, 0.8, 0.1));
        let el = edge_lengths(&r).unwrap();
        for (x, y) in OPPOSITE_EDGE_PAIRS {
            assert_abs_diff_eq!(el.get(x), el.get(y), epsilon = 1e-12);
        }
        for (p, q) in [(A, D), (B, E), (C, F)] {
            let mid = 0.5 * (r.get(p) + r.get(q));
            assert!(Line3::z_axis().distance(mid) < 1e-12);
            assert_abs_diff_eq!((r.get(p) - r.get(q)).dot(&Vec3::z()), 0.0, epsilon = 1e-12);
        }
        assert!(validate(&el).is_empty());
    }

    #[test]
    fn mirror_keeps_type1_conditions() {
        let args = (v(1.0, 0.0, 0.5), v(0.1, 1.0, -0.4), v(0.7, -0.8, 0.1));
        let r1 = build_type1(args.0, args.1, args.2, &Line3::z_axis()).unwrap();
        let r2 = build_type1_mirror(args.0, args.1, args.2, &Line3::z_axis()).unwrap();
        let (l1, l2) = (edge_lengths(&r1).unwrap(), edge_lengths(&r2).unwrap());
        assert!(classify_edge_lengths(&l2, None, 1e-9).matches_type1);
        // the reflected pair keeps its own sides and the sides it shares with A, D
        for name in ["AB", "CA", "DE", "FD", "CD", "DB", "AE", "EC", "BF", "FA"] {
            let e: EdgeKey = name.parse().unwrap();
            assert_abs_diff_eq!(l1.get(e), l2.get(e), epsilon = 1e-12);
        }
    }

    #[test]
    fn type1_rejects_point_on_axis() {
        let err = build_type1(v(0.0, 0.0, 0.5), v(0.1, 1.0, -0.4), v(0.7, -0.8, 0.1), &Line3::z_axis());
        assert!(matches!(err, Err(BuildError::DegenerateInput(_))));
    }

    #[test]
    fn type2_example() {
        let plane = Plane3::new(Vec3::zeros(), Vec3::y());
        let r = build_type2(v(0.0, 0.0, 1.0), v(0.2, 0.0, -1.0), v(1.0, 0.7, 0.3), v(-0.9, 0.5, -0.2), &plane).unwrap();
        assert_eq!(r.get(D), v(1.0, -0.7, 0.3));
        assert_eq!(r.get(B), v(-0.9, -0.5, -0.2));
        let el = edge_lengths(&r).unwrap();
        let rep = classify_edge_lengths(&el, None, 1e-9);
        assert!(rep.matches_type2.contains(&(C, F)));
        assert_abs_diff_eq!(el.get("AB".parse().unwrap()), el.get("DE".parse().unwrap()), epsilon = 1e-12);
    }

    #[test]
    fn type2_requires_points_on_plane() {
        let plane = Plane3::new(Vec3::zeros(), Vec3::y());
        let err = build_type2(v(0.0, 0.1, 1.0), v(0.2, 0.0, -1.0), v(1.0, 0.7, 0.3), v(-0.9, 0.5, -0.2), &plane);
        assert!(matches!(err, Err(BuildError::PointsNotOnPlane(..))));
    }

    #[test]
    fn type3_centroid_example() {
        let (a, b, c) = (Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0), Vec2::new(1.0, 2.5));
        let (k, r) = build_type3_flat(a, b, c, (a + b + c) / 3.0).unwrap();
        assert!(k.ceva_residual <= 1e-10, "{}", k.ceva_residual);
        assert!(k.trig_ceva_residual <= 1e-10);
        assert!(k.concurrency_residual <= 1e-10);
        assert_abs_diff_eq!(k.d.x, 0.8785, epsilon = 1e-4);
        assert_abs_diff_eq!(k.d.y, 2.5556, epsilon = 1e-4);
        assert_abs_diff_eq!(k.e.x, 0.8406, epsilon = 1e-4);
        assert_abs_diff_eq!(k.f.y, -0.0337, epsilon = 1e-4);
        assert!(validate(&edge_lengths(&r).unwrap()).is_empty());
    }

    #[test]
    fn type3_incenter_is_degenerate() {
        let (a, b, c) = (Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0), Vec2::new(1.0, 2.5));
        let (la, lb, lc) = ((b - c).norm(), (c - a).norm(), (a - b).norm());
        let i = (a * la + b * lb + c * lc) / (la + lb + lc);
        assert!(matches!(build_type3_flat(a, b, c, i), Err(BuildError::DegenerateConcurrency(_))));
    }

    #[test]
    fn type3_rejects_outside_point() {
        let (a, b, c) = (Vec2::new(0.0, 0.0), Vec2::new(4.0, 0.0), Vec2::new(1.0, 2.5));
        assert_eq!(build_type3_flat(a, b, c, Vec2::new(5.0, 5.0)).unwrap_err(), BuildError::PointOutsideTriangle);
    }
}
