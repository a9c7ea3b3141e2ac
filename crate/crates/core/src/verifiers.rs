//! Checks of classical flexible-octahedron theorems along realized paths.

use nalgebra::{DMatrix, Matrix3};
use serde::Serialize;
use thiserror::Error;

use crate::flexion::FlexionPath;
use crate::octa_model::{
    neighbors_cyclic, EdgeKey, Facet, OctaError, OctaRealization, VertexLabel, VertexLinkage, OPPOSITE_EDGE_PAIRS,
};
use crate::spherical_linkage::{opposite_dihedral_line, OppositeDihedralLine};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("facet planes are nearly parallel (conditioning {0:e})")]
    NearParallelPlanes(f64),
    #[error("need at least 3 frames, got {0}")]
    InsufficientFrames(usize),
    #[error("path has no frames")]
    EmptyPath,
    #[error("edges {0} and {1} are not opposite at vertex {2}")]
    NotOpposite(EdgeKey, EdgeKey, VertexLabel),
    #[error(transparent)]
    Geometry(#[from] OctaError),
}

/// Reference facet for the concurrency check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum BaseFacet {
    ABC,
    DEF,
}

impl BaseFacet {
    /// The facets on the three sides of the base, and the opposite facet.
    fn planes(self) -> ([Facet; 3], Facet) {
        let [abc, dfe, cbd, ace, baf, aef, bfd, cde] = Facet::ALL;
        match self {
            BaseFacet::ABC => ([cbd, ace, baf], dfe),
            BaseFacet::DEF => ([cde, aef, bfd], abc),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcurrencyResult {
    pub base: BaseFacet,
    /// Common point of the three side planes.
    pub meet_point: Vec3,
    /// Largest distance between the points where each pair of side planes
    /// meets the opposite plane, over the diameter.
    pub spread: f64,
    /// Distance of the meet point from the opposite plane, over the diameter.
    pub residual: f64,
}

/// Conditioning below which plane systems are rejected.
pub const PLANE_CONDITION_TOL: f64 = 1e-9;

fn plane(r: &OctaRealization, f: Facet) -> (Vec3, f64) {
    let n = r.facet_normal(f).normalize();
    (n, n.dot(&r.get(f.0[0])))
}

fn meet(planes: [(Vec3, f64); 3]) -> Result<Vec3, VerifyError> {
    let m = Matrix3::from_rows(&planes.map(|(n, _)| n.transpose()));
    let s = m.singular_values();
    let cond = s.min() / s.max();
    if !(cond > PLANE_CONDITION_TOL) {
        return Err(VerifyError::NearParallelPlanes(cond));
    }
    let rhs = Vec3::new(planes[0].1, planes[1].1, planes[2].1);
    m.lu().solve(&rhs).ok_or(VerifyError::NearParallelPlanes(0.0))
}

/// Meet point of the three facet planes through the sides of `base`,
/// measured against the plane of the opposite facet.
pub fn mannheim_point(r: &OctaRealization, base: BaseFacet) -> Result<ConcurrencyResult, VerifyError> {
    let (sides, opp) = base.planes();
    let diam = r.diameter();
    let p = sides.map(|f| plane(r, f));
    let o = plane(r, opp);
    let meet_point = meet(p)?;
    let residual = (o.0.dot(&meet_point) - o.1).abs() / diam;
    let pts: Vec<Vec3> = [(0, 1), (1, 2), (2, 0)].iter().filter_map(|&(i, j)| meet([p[i], p[j], o]).ok()).collect();
    let mut spread: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            spread = spread.max((pts[i] - pts[j]).norm() / diam);
        }
    }
    Ok(ConcurrencyResult { base, meet_point, spread, residual })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PairRelation {
    Equal,
    Supplementary,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairTrace {
    pub edges: (EdgeKey, EdgeKey),
    pub relation: PairRelation,
    /// `max |cos θ₁ − cos θ₂|` over the path.
    pub equal_deviation: f64,
    /// `max |cos θ₁ + cos θ₂|` over the path.
    pub supplementary_deviation: f64,
}

impl PairTrace {
    /// Deviation of the classified branch, or the smaller one when unclassified.
    pub fn deviation(&self) -> f64 {
        match self.relation {
            PairRelation::Equal => self.equal_deviation,
            PairRelation::Supplementary => self.supplementary_deviation,
            PairRelation::None => self.equal_deviation.min(self.supplementary_deviation),
        }
    }
}

pub const RELATION_MATCH_TOL: f64 = 1e-6;
pub const RELATION_REJECT_TOL: f64 = 1e-3;

pub fn opposite_dihedral_trace(path: &FlexionPath) -> Result<Vec<PairTrace>, VerifyError> {
    if path.frames.is_empty() {
        return Err(VerifyError::EmptyPath);
    }
    Ok(OPPOSITE_EDGE_PAIRS
        .iter()
        .map(|&(x, y)| {
            let (mut eq, mut sup) = (0.0_f64, 0.0_f64);
            for f in &path.frames {
                let (c1, c2) = (f.dihedrals[x.index()].cos(), f.dihedrals[y.index()].cos());
                eq = eq.max((c1 - c2).abs());
                sup = sup.max((c1 + c2).abs());
            }
            let relation = if eq <= RELATION_MATCH_TOL && sup > RELATION_REJECT_TOL {
                PairRelation::Equal
            } else if sup <= RELATION_MATCH_TOL && eq > RELATION_REJECT_TOL {
                PairRelation::Supplementary
            } else {
                PairRelation::None
            };
            PairTrace { edges: (x, y), relation, equal_deviation: eq, supplementary_deviation: sup }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum HexagonKey {
    ABCDEF,
    ABFDEC,
    AECDBF,
    AEFDBC,
}

impl HexagonKey {
    pub const ALL: [HexagonKey; 4] = [HexagonKey::ABCDEF, HexagonKey::ABFDEC, HexagonKey::AECDBF, HexagonKey::AEFDBC];

    pub fn vertices(self) -> [VertexLabel; 6] {
        use VertexLabel::*;
        match self {
            HexagonKey::ABCDEF => [A, B, C, D, E, F],
            HexagonKey::ABFDEC => [A, B, F, D, E, C],
            HexagonKey::AECDBF => [A, E, C, D, B, F],
            HexagonKey::AEFDBC => [A, E, F, D, B, C],
        }
    }

    pub fn sides(self) -> [EdgeKey; 6] {
        let v = self.vertices();
        std::array::from_fn(|i| EdgeKey::new(v[i], v[(i + 1) % 6]).expect("hexagon side is an edge"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HexagonTrace {
    pub key: HexagonKey,
    pub sides: [f64; 6],
    /// Angle at each hexagon vertex between its two hexagon sides.
    pub angles: [f64; 6],
    /// Largest change of a side over the path, relative to the mean side.
    pub side_variation: f64,
    pub angle_variation: f64,
}

fn hexagon_measure(r: &OctaRealization, key: HexagonKey) -> ([f64; 6], [f64; 6]) {
    let v = key.vertices();
    let sides = key.sides().map(|e| r.edge_length(e));
    let angles = std::array::from_fn(|i| r.angle_at(v[i], v[(i + 5) % 6], v[(i + 1) % 6]));
    (sides, angles)
}

pub fn hexagon_traces(path: &FlexionPath) -> Result<Vec<HexagonTrace>, VerifyError> {
    let first = path.frames.first().ok_or(VerifyError::EmptyPath)?;
    Ok(HexagonKey::ALL
        .iter()
        .map(|&key| {
            let (sides, angles) = hexagon_measure(&first.realization, key);
            let mean = sides.iter().sum::<f64>() / 6.0;
            let (mut dv, mut da) = (0.0_f64, 0.0_f64);
            for f in &path.frames {
                let (s, a) = hexagon_measure(&f.realization, key);
                for i in 0..6 {
                    dv = dv.max((s[i] - sides[i]).abs() / mean);
                    da = da.max((a[i] - angles[i]).abs());
                }
            }
            HexagonTrace { key, sides, angles, side_variation: dv, angle_variation: da }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineFit {
    pub vertex: VertexLabel,
    pub edges: (EdgeKey, EdgeKey),
    /// Total-least-squares line, normalised.
    pub fitted: OppositeDihedralLine,
    /// Line from the face angles at the vertex, normalised.
    pub analytic: OppositeDihedralLine,
    /// Largest residual of the samples against the fitted line.
    pub max_residual: f64,
    /// Largest residual of the samples against the analytic line.
    pub analytic_residual: f64,
    /// Largest coefficient difference between the two lines.
    pub agreement: f64,
    /// The samples do not spread along any direction.
    pub rank_deficient: bool,
}

/// Fits `l cos φ + m cos θ + n = 0` to the dihedrals at two opposite edges of `vertex`.
pub fn dihedral_cos_line_fit(
    path: &FlexionPath,
    vertex: VertexLabel,
    edges: (EdgeKey, EdgeKey),
) -> Result<LineFit, VerifyError> {
    let n = path.frames.len();
    if n < 3 {
        return Err(VerifyError::InsufficientFrames(n));
    }
    let not_opposite = || VerifyError::NotOpposite(edges.0, edges.1, vertex);
    let x = edges.0.other(vertex).ok_or_else(not_opposite)?;
    let y = edges.1.other(vertex).ok_or_else(not_opposite)?;
    let ring = neighbors_cyclic(vertex);
    let i = ring.iter().position(|&w| w == x).expect("neighbour");
    if ring[(i + 2) % 4] != y {
        return Err(not_opposite());
    }
    let lk = VertexLinkage::new(vertex, edges.0, EdgeKey::new(vertex, ring[(i + 1) % 4]).expect("edge"))?;
    debug_assert_eq!(lk.n_edge(), edges.1);
    let analytic = opposite_dihedral_line(&lk.face_angles(&path.frames[0].realization)?).normalized();

    let samples: Vec<(f64, f64)> =
        path.frames.iter().map(|f| (f.dihedrals[edges.0.index()].cos(), f.dihedrals[edges.1.index()].cos())).collect();
    let (mx, my) = samples.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n as f64, b + y / n as f64));
    let centered = DMatrix::from_fn(n, 2, |r, c| if c == 0 { samples[r].0 - mx } else { samples[r].1 - my });
    let svd = centered.svd(false, true);
    let vt = svd.v_t.expect("v_t");
    let s = &svd.singular_values;
    let (imin, imax) = if s[0] <= s[1] { (0, 1) } else { (1, 0) };
    let rank_deficient = s[imax] <= 1e-12 * (n as f64).sqrt();
    let (l, m) = (vt[(imin, 0)], vt[(imin, 1)]);
    let fitted = OppositeDihedralLine { l, m, n: -(l * mx + m * my) }.normalized();
    let fitted = if fitted.l * analytic.l + fitted.m * analytic.m < 0.0 {
        OppositeDihedralLine { l: -fitted.l, m: -fitted.m, n: -fitted.n }
    } else {
        fitted
    };
    let worst =
        |line: &OppositeDihedralLine| samples.iter().map(|&(p, q)| line.residual(p, q).abs()).fold(0.0, f64::max);
    let aligned = |p: &OppositeDihedralLine, q: &OppositeDihedralLine| {
        (p.l - q.l).abs().max((p.m - q.m).abs()).max((p.n - q.n).abs())
    };
    Ok(LineFit {
        vertex,
        edges,
        fitted,
        analytic,
        max_residual: worst(&fitted),
        analytic_residual: worst(&analytic),
        agreement: aligned(&fitted, &analytic),
        rank_deficient,
    })
}

/// The two opposite edge pairs at a vertex.
pub fn opposite_pairs_at(v: VertexLabel) -> [(EdgeKey, EdgeKey); 2] {
    let ring = neighbors_cyclic(v);
    let e = |i: usize| EdgeKey::new(v, ring[i]).expect("edge");
    [(e(0), e(2)), (e(1), e(3))]
}

/// Every line fit of a path: both opposite pairs at each of the six vertices.
pub fn all_line_fits(path: &FlexionPath) -> Result<Vec<LineFit>, VerifyError> {
    let mut out = Vec::with_capacity(12);
    for v in VertexLabel::ALL {
        for pair in opposite_pairs_at(v) {
            out.push(dihedral_cos_line_fit(path, v, pair)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octa_model::{edge_lengths, OctaEdgeLengths};

    fn single(r: OctaRealization) -> FlexionPath {
        let el = edge_lengths(&r).unwrap();
        FlexionPath::from_realizations(vec![r], &el, 1e-8).unwrap()
    }

    #[test]
    fn hexagon_sides_are_edges() {
        let names: Vec<String> = HexagonKey::ABCDEF.sides().iter().map(|e| e.to_string()).collect();
        assert_eq!(names, ["AB", "BC", "CD", "DE", "EF", "FA"]);
        for k in HexagonKey::ALL {
            k.sides();
        }
    }

    #[test]
    fn single_frame_traces() {
        let p = single(OctaRealization::regular());
        for h in hexagon_traces(&p).unwrap() {
            assert_eq!(h.side_variation, 0.0);
            assert_eq!(h.angle_variation, 0.0);
        }
        for t in opposite_dihedral_trace(&p).unwrap() {
            assert_eq!(t.relation, PairRelation::Equal);
        }
        assert_eq!(
            dihedral_cos_line_fit(&p, VertexLabel::A, opposite_pairs_at(VertexLabel::A)[0]),
            Err(VerifyError::InsufficientFrames(1))
        );
    }

    #[test]
    fn constant_path_is_rank_deficient() {
        let r = OctaRealization::regular();
        let el = OctaEdgeLengths::uniform(2f64.sqrt()).unwrap();
        let p = FlexionPath::from_realizations(vec![r; 4], &el, 1e-8).unwrap();
        let fit = dihedral_cos_line_fit(&p, VertexLabel::A, opposite_pairs_at(VertexLabel::A)[0]).unwrap();
        assert!(fit.rank_deficient);
    }

    #[test]
    fn parallel_side_planes_are_rejected() {
        // D, E, F straight above the side lines of ABC: all three side planes are vertical
        let r = OctaRealization::from_arrays([
            [0.0, 0.0, 0.0],
            [2.0, 0.0, 0.0],
            [0.0, 2.0, 0.0],
            [1.0, 1.0, 1.0],
            [0.0, 0.5, 1.0],
            [0.7, 0.0, -1.0],
        ]);
        assert!(matches!(mannheim_point(&r, BaseFacet::ABC), Err(VerifyError::NearParallelPlanes(_))));
    }

    #[test]
    fn regular_mannheim_is_computed() {
        // the side planes of a regular octahedron meet off the opposite plane
        let res = mannheim_point(&OctaRealization::regular(), BaseFacet::ABC).unwrap();
        assert!(res.residual > 0.1);
    }

    #[test]
    fn non_opposite_pair_is_rejected() {
        let r = OctaRealization::regular();
        let el = edge_lengths(&r).unwrap();
        let p = FlexionPath::from_realizations(vec![r; 3], &el, 1e-8).unwrap();
        let ab: EdgeKey = "AB".parse().unwrap();
        let ac: EdgeKey = "AC".parse().unwrap();
        assert!(matches!(dihedral_cos_line_fit(&p, VertexLabel::A, (ab, ac)), Err(VerifyError::NotOpposite(..))));
    }
}
