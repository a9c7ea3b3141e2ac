//! Triangle intersection tests used for facet-crossing detection.
//!
//! Orientation signs come from the adaptive exact predicates of `robust`;
//! triangles that share a vertex are handled through their plane line.

use robust::{orient2d, orient3d, Coord, Coord3D};

use crate::Vec3;

fn c3(p: Vec3) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

fn o3(a: Vec3, b: Vec3, c: Vec3, d: Vec3) -> f64 {
    orient3d(c3(a), c3(b), c3(c), c3(d))
}

fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Drops the coordinate along the dominant axis of `n`.
fn project(n: Vec3) -> impl Fn(Vec3) -> Coord<f64> {
    let (ax, ay, az) = (n.x.abs(), n.y.abs(), n.z.abs());
    let drop = if ax >= ay && ax >= az {
        0
    } else if ay >= az {
        1
    } else {
        2
    };
    move |p: Vec3| match drop {
        0 => Coord { x: p.y, y: p.z },
        1 => Coord { x: p.z, y: p.x },
        _ => Coord { x: p.x, y: p.y },
    }
}

fn o2(a: Coord<f64>, b: Coord<f64>, c: Coord<f64>) -> i8 {
    sgn(orient2d(a, b, c))
}

fn segments_meet_2d(p: Coord<f64>, q: Coord<f64>, a: Coord<f64>, b: Coord<f64>) -> bool {
    let (d1, d2) = (o2(a, b, p), o2(a, b, q));
    let (d3, d4) = (o2(p, q, a), o2(p, q, b));
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    let on = |x: Coord<f64>, y: Coord<f64>, z: Coord<f64>| {
        x.x.min(y.x) <= z.x && z.x <= x.x.max(y.x) && x.y.min(y.y) <= z.y && z.y <= x.y.max(y.y)
    };
    (d1 == 0 && on(a, b, p)) || (d2 == 0 && on(a, b, q)) || (d3 == 0 && on(p, q, a)) || (d4 == 0 && on(p, q, b))
}

fn point_in_triangle_2d(p: Coord<f64>, t: [Coord<f64>; 3]) -> bool {
    let s = [o2(t[0], t[1], p), o2(t[1], t[2], p), o2(t[2], t[0], p)];
    !(s.iter().any(|&x| x > 0) && s.iter().any(|&x| x < 0))
}

fn coplanar_triangles_meet(t1: [Vec3; 3], t2: [Vec3; 3]) -> bool {
    let n = (t1[1] - t1[0]).cross(&(t1[2] - t1[0]));
    let pr = project(n);
    let a = t1.map(&pr);
    let b = t2.map(&pr);
    for i in 0..3 {
        for j in 0..3 {
            if segments_meet_2d(a[i], a[(i + 1) % 3], b[j], b[(j + 1) % 3]) {
                return true;
            }
        }
    }
    point_in_triangle_2d(a[0], b) || point_in_triangle_2d(b[0], a)
}

/// Closed segment `pq` against closed triangle `t`, for `pq` not in the plane of `t`.
fn segment_hits_triangle(p: Vec3, q: Vec3, t: [Vec3; 3]) -> bool {
    let (sp, sq) = (sgn(o3(t[0], t[1], t[2], p)), sgn(o3(t[0], t[1], t[2], q)));
    if sp * sq > 0 || (sp == 0 && sq == 0) {
        return false;
    }
    let s = [sgn(o3(p, q, t[0], t[1])), sgn(o3(p, q, t[1], t[2])), sgn(o3(p, q, t[2], t[0]))];
    !(s.iter().any(|&x| x > 0) && s.iter().any(|&x| x < 0))
}

/// Whether two vertex-disjoint closed triangles intersect.
pub(crate) fn triangles_intersect(t1: [Vec3; 3], t2: [Vec3; 3]) -> bool {
    let side2: Vec<i8> = t2.iter().map(|&p| sgn(o3(t1[0], t1[1], t1[2], p))).collect();
    if side2.iter().all(|&s| s == 0) {
        return coplanar_triangles_meet(t1, t2);
    }
    if side2.iter().all(|&s| s > 0) || side2.iter().all(|&s| s < 0) {
        return false;
    }
    let side1: Vec<i8> = t1.iter().map(|&p| sgn(o3(t2[0], t2[1], t2[2], p))).collect();
    if side1.iter().all(|&s| s > 0) || side1.iter().all(|&s| s < 0) {
        return false;
    }
    (0..3).any(|i| segment_hits_triangle(t1[i], t1[(i + 1) % 3], t2))
        || (0..3).any(|i| segment_hits_triangle(t2[i], t2[(i + 1) % 3], t1))
}

/// Whether direction `w` lies strictly inside the planar wedge spanned by `e1`, `e2`.
fn in_wedge(w: Vec3, e1: Vec3, e2: Vec3, tol: f64) -> bool {
    let n = e1.cross(&e2);
    let scale = n.norm() * w.norm();
    e1.cross(&w).dot(&n) > tol * scale * e1.norm() && w.cross(&e2).dot(&n) > tol * scale * e2.norm()
}

/// Whether triangles `(v, a, b)` and `(v, c, d)` meet anywhere besides `v`.
pub(crate) fn wedges_cross(v: Vec3, a: Vec3, b: Vec3, c: Vec3, d: Vec3, tol: f64) -> bool {
    let (e1, e2, f1, f2) = (a - v, b - v, c - v, d - v);
    let n1 = e1.cross(&e2);
    let n2 = f1.cross(&f2);
    let line = n1.cross(&n2);
    if line.norm() <= tol * n1.norm() * n2.norm() {
        if o3(v, a, b, c) != 0.0 || o3(v, a, b, d) != 0.0 {
            return false;
        }
        // coplanar wedges overlap iff a side of one enters the other, or they coincide
        let same = |x: Vec3, y: Vec3| x.cross(&y).norm() <= tol * x.norm() * y.norm() && x.dot(&y) > 0.0;
        return in_wedge(f1, e1, e2, tol)
            || in_wedge(f2, e1, e2, tol)
            || in_wedge(e1, f1, f2, tol)
            || in_wedge(e2, f1, f2, tol)
            || ((same(e1, f1) || same(e1, f2)) && (same(e2, f1) || same(e2, f2)));
    }
    // the planes meet along v + s·line; each triangle covers a segment of it from v
    let along = |w: Vec3| in_wedge(w, e1, e2, tol) && in_wedge(w, f1, f2, tol);
    along(line) || along(-line)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    #[test]
    fn piercing_triangles() {
        let t1 = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        let t2 = [v(0.5, 0.5, -1.0), v(0.5, 0.5, 1.0), v(3.0, 3.0, 0.0)];
        assert!(triangles_intersect(t1, t2));
        let t3 = [v(0.5, 0.5, 1.0), v(0.5, 0.7, 2.0), v(3.0, 3.0, 1.0)];
        assert!(!triangles_intersect(t1, t3));
    }

    #[test]
    fn touching_at_a_point_counts() {
        let t1 = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        let t2 = [v(0.5, 0.5, 0.0), v(0.5, 0.5, 1.0), v(0.7, 0.4, 1.0)];
        assert!(triangles_intersect(t1, t2));
    }

    #[test]
    fn coplanar_overlap() {
        let t1 = [v(0.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(0.0, 2.0, 0.0)];
        let t2 = [v(0.5, 0.5, 0.0), v(3.0, 0.5, 0.0), v(0.5, 3.0, 0.0)];
        assert!(triangles_intersect(t1, t2));
        let t3 = [v(5.0, 5.0, 0.0), v(6.0, 5.0, 0.0), v(5.0, 6.0, 0.0)];
        assert!(!triangles_intersect(t1, t3));
    }

    #[test]
    fn shared_vertex_wedges() {
        let o = Vec3::zeros();
        // two fins through the origin that cut each other
        assert!(wedges_cross(o, v(1.0, -0.2, 0.0), v(1.0, 0.2, 0.0), v(1.0, 0.0, -0.2), v(1.0, 0.0, 0.2), 1e-12));
        // corner of a cube: faces meet only along edges, not beyond the vertex
        assert!(!wedges_cross(o, v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0), v(-1.0, 0.0, 1.0), 1e-12));
    }
}
