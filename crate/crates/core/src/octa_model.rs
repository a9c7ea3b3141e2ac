//! Octahedral combinatorics, realizations and measurements.
//!
//! Vertices are `A..F` with opposite pairs `A–D`, `B–E`, `C–F`. Every other
//! vertex pair is an edge. Facets are wound consistently (outward for the
//! regular octahedron with `A = +x`, `B = +y`, `C = +z`).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::spherical_linkage::{self, classify, unicursal_constants_with_tol, FaceAngles, LinkageError, LinkageTag};
use crate::Vec3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OctaError {
    #[error("facet {0} is degenerate")]
    DegenerateFacet(Facet),
    #[error("edges {0} and {1} do not share a facet at vertex {2}")]
    NonAdjacentEdges(EdgeKey, EdgeKey, VertexLabel),
    #[error("edge {0} is not incident to vertex {1}")]
    EdgeNotAtVertex(EdgeKey, VertexLabel),
    #[error("edge length {edge} = {value} must be positive and finite")]
    InvalidLength { edge: EdgeKey, value: f64 },
    #[error("missing {0}")]
    Missing(String),
    #[error(transparent)]
    Linkage(#[from] LinkageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VertexLabel {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl VertexLabel {
    pub const ALL: [VertexLabel; 6] =
        [VertexLabel::A, VertexLabel::B, VertexLabel::C, VertexLabel::D, VertexLabel::E, VertexLabel::F];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn opposite(self) -> Self {
        Self::ALL[(self.index() + 3) % 6]
    }

    pub fn as_char(self) -> char {
        (b'A' + self as u8) as char
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c {
            'A'..='F' => Self::from_index(c as usize - 'A' as usize),
            _ => None,
        }
    }
}

impl fmt::Display for VertexLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

use VertexLabel::{A, B, C, D, E, F};

/// One of the 12 edges, stored in the canonical orientation of [`EdgeKey::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeKey(VertexLabel, VertexLabel);

impl EdgeKey {
    /// The fixed edge order used by every table and export.
    pub const ALL: [EdgeKey; 12] = [
        EdgeKey(A, B),
        EdgeKey(B, C),
        EdgeKey(C, A),
        EdgeKey(D, E),
        EdgeKey(E, F),
        EdgeKey(F, D),
        EdgeKey(C, D),
        EdgeKey(D, B),
        EdgeKey(A, E),
        EdgeKey(E, C),
        EdgeKey(B, F),
        EdgeKey(F, A),
    ];

    /// The edge joining `x` and `y`, in either order. `None` for opposite or equal vertices.
    pub fn new(x: VertexLabel, y: VertexLabel) -> Option<Self> {
        Self::ALL.iter().copied().find(|e| (e.0 == x && e.1 == y) || (e.0 == y && e.1 == x))
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).expect("canonical edge")
    }

    pub fn endpoints(self) -> (VertexLabel, VertexLabel) {
        (self.0, self.1)
    }

    pub fn contains(self, v: VertexLabel) -> bool {
        self.0 == v || self.1 == v
    }

    /// The endpoint other than `v`.
    pub fn other(self, v: VertexLabel) -> Option<VertexLabel> {
        if self.0 == v {
            Some(self.1)
        } else if self.1 == v {
            Some(self.0)
        } else {
            None
        }
    }

    /// Image under the opposite-vertex map, e.g. `AB -> DE`.
    pub fn opposite(self) -> EdgeKey {
        EdgeKey::new(self.0.opposite(), self.1.opposite()).expect("opposite of an edge is an edge")
    }

    pub fn name(self) -> String {
        format!("{}{}", self.0, self.1)
    }

    /// The two facets on this edge: the first traverses it as stored, the second reversed.
    pub fn facets(self) -> (Facet, Facet) {
        let fwd = Facet::ALL.iter().copied().find(|f| f.has_directed(self.0, self.1));
        let rev = Facet::ALL.iter().copied().find(|f| f.has_directed(self.1, self.0));
        (fwd.expect("edge has a forward facet"), rev.expect("edge has a reverse facet"))
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.0, self.1)
    }
}

impl FromStr for EdgeKey {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<char> = s.trim().chars().collect();
        if chars.len() != 2 {
            return Err(format!("edge name must be two vertex letters, got {s:?}"));
        }
        let x = VertexLabel::from_char(chars[0]).ok_or_else(|| format!("unknown vertex {:?}", chars[0]))?;
        let y = VertexLabel::from_char(chars[1]).ok_or_else(|| format!("unknown vertex {:?}", chars[1]))?;
        EdgeKey::new(x, y).ok_or_else(|| format!("{s} is not an edge of the octahedron"))
    }
}

impl Serialize for EdgeKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for EdgeKey {
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The six pairs of opposite edges.
pub const OPPOSITE_EDGE_PAIRS: [(EdgeKey, EdgeKey); 6] = [
    (EdgeKey(A, B), EdgeKey(D, E)),
    (EdgeKey(B, C), EdgeKey(E, F)),
    (EdgeKey(C, A), EdgeKey(F, D)),
    (EdgeKey(A, E), EdgeKey(D, B)),
    (EdgeKey(B, F), EdgeKey(E, C)),
    (EdgeKey(C, D), EdgeKey(F, A)),
];

/// A triangular facet with its winding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Facet(pub [VertexLabel; 3]);

impl Facet {
    /// The eight facets, consistently wound.
    pub const ALL: [Facet; 8] = [
        Facet([A, B, C]),
        Facet([D, F, E]),
        Facet([C, B, D]),
        Facet([A, C, E]),
        Facet([B, A, F]),
        Facet([A, E, F]),
        Facet([B, F, D]),
        Facet([C, D, E]),
    ];

    pub fn vertices(self) -> [VertexLabel; 3] {
        self.0
    }

    pub fn contains(self, v: VertexLabel) -> bool {
        self.0.contains(&v)
    }

    /// Whether the winding visits `p` immediately followed by `q`.
    pub fn has_directed(self, p: VertexLabel, q: VertexLabel) -> bool {
        (0..3).any(|i| self.0[i] == p && self.0[(i + 1) % 3] == q)
    }

    /// The vertex not on edge `{p, q}`.
    pub fn third(self, p: VertexLabel, q: VertexLabel) -> Option<VertexLabel> {
        if !(self.contains(p) && self.contains(q)) {
            return None;
        }
        self.0.iter().copied().find(|&v| v != p && v != q)
    }

    /// The facet with opposite labels (e.g. `ABC <-> DFE`).
    pub fn opposite(self) -> Facet {
        let img = self.0.map(VertexLabel::opposite);
        *Facet::ALL.iter().find(|f| img.iter().all(|v| f.contains(*v))).expect("opposite facet exists")
    }

    pub fn shared_vertices(self, other: Facet) -> usize {
        self.0.iter().filter(|v| other.contains(**v)).count()
    }
}

impl Serialize for Facet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}{}", self.0[0], self.0[1], self.0[2])
    }
}

/// The four neighbours of `v` in the cyclic order induced by the facet winding.
pub fn neighbors_cyclic(v: VertexLabel) -> [VertexLabel; 4] {
    // each facet (v, x, y) in winding order contributes the link edge x -> y
    let mut next = BTreeMap::new();
    for f in Facet::ALL {
        let vs = f.0;
        if let Some(i) = vs.iter().position(|&w| w == v) {
            next.insert(vs[(i + 1) % 3], vs[(i + 2) % 3]);
        }
    }
    let start = *next.keys().next().expect("vertex has neighbours");
    let mut out = [start; 4];
    for i in 1..4 {
        out[i] = next[&out[i - 1]];
    }
    out
}

/// Twelve edge lengths in the order of [`EdgeKey::ALL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OctaEdgeLengths([f64; 12]);

impl OctaEdgeLengths {
    pub fn new(values: [f64; 12]) -> Result<Self, OctaError> {
        for (e, &value) in EdgeKey::ALL.iter().zip(&values) {
            if !(value > 0.0 && value.is_finite()) {
                return Err(OctaError::InvalidLength { edge: *e, value });
            }
        }
        Ok(Self(values))
    }

    pub fn uniform(len: f64) -> Result<Self, OctaError> {
        Self::new([len; 12])
    }

    pub fn get(&self, e: EdgeKey) -> f64 {
        self.0[e.index()]
    }

    pub fn between(&self, x: VertexLabel, y: VertexLabel) -> Option<f64> {
        EdgeKey::new(x, y).map(|e| self.get(e))
    }

    pub fn values(&self) -> [f64; 12] {
        self.0
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / 12.0
    }

    pub fn to_map(&self) -> BTreeMap<EdgeKey, f64> {
        EdgeKey::ALL.iter().map(|&e| (e, self.get(e))).collect()
    }

    pub fn from_map(map: &BTreeMap<EdgeKey, f64>) -> Result<Self, OctaError> {
        let mut values = [0.0; 12];
        for (i, e) in EdgeKey::ALL.iter().enumerate() {
            values[i] = *map.get(e).ok_or_else(|| OctaError::Missing(format!("edge {e}")))?;
        }
        Self::new(values)
    }

    /// Largest deviation from `other`, relative to this set's mean edge.
    pub fn max_relative_deviation(&self, other: &OctaEdgeLengths) -> f64 {
        let mean = self.mean();
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).abs() / mean).fold(0.0, f64::max)
    }
}

impl Serialize for OctaEdgeLengths {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_map().serialize(s)
    }
}

impl<'de> Deserialize<'de> for OctaEdgeLengths {
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let map = BTreeMap::<EdgeKey, f64>::deserialize(d)?;
        Self::from_map(&map).map_err(serde::de::Error::custom)
    }
}

/// Six labelled points in 3-space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OctaRealization {
    pub points: [Vec3; 6],
}

impl OctaRealization {
    pub fn new(points: [Vec3; 6]) -> Self {
        Self { points }
    }

    pub fn from_arrays(points: [[f64; 3]; 6]) -> Self {
        Self { points: points.map(Vec3::from) }
    }

    /// The regular octahedron with vertices at the unit coordinate points.
    pub fn regular() -> Self {
        Self::from_arrays([
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, -1.0],
        ])
    }

    pub fn get(&self, v: VertexLabel) -> Vec3 {
        self.points[v.index()]
    }

    pub fn set(&mut self, v: VertexLabel, p: Vec3) {
        self.points[v.index()] = p;
    }

    pub fn map(&self, f: impl Fn(Vec3) -> Vec3) -> Self {
        Self { points: self.points.map(f) }
    }

    pub fn to_flat(&self) -> [f64; 18] {
        let mut out = [0.0; 18];
        for (i, p) in self.points.iter().enumerate() {
            out[3 * i..3 * i + 3].copy_from_slice(p.as_slice());
        }
        out
    }

    pub fn from_flat(x: &[f64]) -> Self {
        assert_eq!(x.len(), 18, "realization needs 18 coordinates");
        Self { points: std::array::from_fn(|i| Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])) }
    }

    pub fn centroid(&self) -> Vec3 {
        self.points.iter().sum::<Vec3>() / 6.0
    }

    /// Largest distance between two vertices.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..6 {
            for j in i + 1..6 {
                d = d.max((self.points[i] - self.points[j]).norm());
            }
        }
        d
    }

    pub fn facet_normal(&self, f: Facet) -> Vec3 {
        let [p, q, r] = f.0.map(|v| self.get(v));
        (q - p).cross(&(r - p))
    }

    pub fn facet_area(&self, f: Facet) -> f64 {
        0.5 * self.facet_normal(f).norm()
    }

    /// Unsigned angle at `v` in the triangle `x v y`.
    pub fn angle_at(&self, v: VertexLabel, x: VertexLabel, y: VertexLabel) -> f64 {
        angle_between(self.get(x) - self.get(v), self.get(y) - self.get(v))
    }

    pub fn edge_length(&self, e: EdgeKey) -> f64 {
        let (p, q) = e.endpoints();
        (self.get(p) - self.get(q)).norm()
    }

    /// Lengths without facet checks.
    pub fn raw_edge_lengths(&self) -> [f64; 12] {
        EdgeKey::ALL.map(|e| self.edge_length(e))
    }
}

impl Serialize for OctaRealization {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let map: BTreeMap<VertexLabel, [f64; 3]> = VertexLabel::ALL.iter().map(|&v| (v, self.get(v).into())).collect();
        map.serialize(s)
    }
}

impl<'de> Deserialize<'de> for OctaRealization {
    fn deserialize<De: serde::Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        let map = BTreeMap::<VertexLabel, [f64; 3]>::deserialize(d)?;
        let mut pts = [[0.0; 3]; 6];
        for v in VertexLabel::ALL {
            pts[v.index()] = *map.get(&v).ok_or_else(|| serde::de::Error::custom(format!("missing vertex {v}")))?;
        }
        if pts.iter().flatten().any(|x| !x.is_finite()) {
            return Err(serde::de::Error::custom("vertex coordinates must be finite"));
        }
        Ok(Self::from_arrays(pts))
    }
}

pub(crate) fn angle_between(a: Vec3, b: Vec3) -> f64 {
    a.cross(&b).norm().atan2(a.dot(&b))
}

/// Relative area threshold below which a facet counts as degenerate.
pub const DEGENERATE_AREA_TOL: f64 = 1e-12;

/// First facet whose area is negligible against the squared diameter.
pub fn first_degenerate_facet(r: &OctaRealization) -> Option<Facet> {
    let scale = r.diameter().powi(2);
    Facet::ALL.iter().copied().find(|&f| !(r.facet_area(f) > DEGENERATE_AREA_TOL * scale))
}

pub fn edge_lengths(r: &OctaRealization) -> Result<OctaEdgeLengths, OctaError> {
    if let Some(f) = first_degenerate_facet(r) {
        return Err(OctaError::DegenerateFacet(f));
    }
    OctaEdgeLengths::new(r.raw_edge_lengths())
}

/// Signed interior dihedral at `e` in `(−π, π]`.
///
/// The magnitude is the interior angle between the two facets for a convex
/// edge. Reflecting the realization negates the value, so `tan(φ/2)` is the
/// half-tangent of the interior angle for reflex edges too.
pub fn dihedral_angle(r: &OctaRealization, e: EdgeKey) -> Result<f64, OctaError> {
    let (f1, f2) = e.facets();
    for f in [f1, f2] {
        let scale = r.diameter().powi(2);
        if !(r.facet_area(f) > DEGENERATE_AREA_TOL * scale) {
            return Err(OctaError::DegenerateFacet(f));
        }
    }
    let (p, q) = e.endpoints();
    Ok(signed_dihedral(
        r.get(p),
        r.get(q),
        r.get(f1.third(p, q).expect("facet on edge")),
        r.get(f2.third(p, q).expect("facet on edge")),
    ))
}

/// Dihedral along `p -> q` between the half-planes through `r1` and `r2`.
pub(crate) fn signed_dihedral(p: Vec3, q: Vec3, r1: Vec3, r2: Vec3) -> f64 {
    let e = (q - p).normalize();
    let perp = |x: Vec3| {
        let d = x - p;
        (d - e * d.dot(&e)).normalize()
    };
    let w1 = perp(r1);
    let w2 = perp(r2);
    let phi = (-w1.cross(&w2).dot(&e)).atan2(w1.dot(&w2));
    if phi <= -PI {
        PI
    } else {
        phi
    }
}

pub fn all_dihedrals(r: &OctaRealization) -> Result<[f64; 12], OctaError> {
    let mut out = [0.0; 12];
    for (i, &e) in EdgeKey::ALL.iter().enumerate() {
        out[i] = dihedral_angle(r, e)?;
    }
    Ok(out)
}

/// Labels of the tetrahedral angle at a vertex, in linkage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VertexLinkage {
    pub apex: VertexLabel,
    /// Endpoint of the `t` edge (ray `SA`).
    pub t_end: VertexLabel,
    /// Endpoint of the `u` edge (ray `SB`).
    pub u_end: VertexLabel,
    /// Far endpoint of the face `β` at the `t` edge (ray `SM`).
    pub m_end: VertexLabel,
    /// Far endpoint of the face `δ` at the `u` edge (ray `SN`).
    pub n_end: VertexLabel,
}

impl VertexLinkage {
    pub fn new(v: VertexLabel, t_edge: EdgeKey, u_edge: EdgeKey) -> Result<Self, OctaError> {
        let x = t_edge.other(v).ok_or(OctaError::EdgeNotAtVertex(t_edge, v))?;
        let y = u_edge.other(v).ok_or(OctaError::EdgeNotAtVertex(u_edge, v))?;
        let ring = neighbors_cyclic(v);
        let i = ring.iter().position(|&w| w == x).expect("neighbour");
        let j = ring.iter().position(|&w| w == y).expect("neighbour");
        let step = (j + 4 - i) % 4;
        if step != 1 && step != 3 {
            return Err(OctaError::NonAdjacentEdges(t_edge, u_edge, v));
        }
        // walking away from y on either side
        let (m, n) =
            if step == 1 { (ring[(i + 3) % 4], ring[(j + 1) % 4]) } else { (ring[(i + 1) % 4], ring[(j + 3) % 4]) };
        Ok(Self { apex: v, t_end: x, u_end: y, m_end: m, n_end: n })
    }

    pub fn t_edge(&self) -> EdgeKey {
        EdgeKey::new(self.apex, self.t_end).expect("edge")
    }

    pub fn u_edge(&self) -> EdgeKey {
        EdgeKey::new(self.apex, self.u_end).expect("edge")
    }

    /// Edge `SM`, the other edge of the face `β`.
    pub fn m_edge(&self) -> EdgeKey {
        EdgeKey::new(self.apex, self.m_end).expect("edge")
    }

    /// Edge `SN`, opposite to the `t` edge in the tetrahedral angle.
    pub fn n_edge(&self) -> EdgeKey {
        EdgeKey::new(self.apex, self.n_end).expect("edge")
    }

    pub fn face_angles(&self, r: &OctaRealization) -> Result<FaceAngles, OctaError> {
        let v = self.apex;
        Ok(FaceAngles::new(
            r.angle_at(v, self.t_end, self.u_end),
            r.angle_at(v, self.t_end, self.m_end),
            r.angle_at(v, self.m_end, self.n_end),
            r.angle_at(v, self.u_end, self.n_end),
        )?)
    }
}

/// Face angles at `v` with `α` between the two given edges.
pub fn vertex_face_angles(
    r: &OctaRealization,
    v: VertexLabel,
    pair: (EdgeKey, EdgeKey),
) -> Result<FaceAngles, OctaError> {
    VertexLinkage::new(v, pair.0, pair.1)?.face_angles(r)
}

/// Default length-equality tolerance, relative to the mean edge.
pub const DEFAULT_LENGTH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexTypeReport {
    pub matches_type1: bool,
    pub type1_max_deviation: f64,
    /// Opposite-vertex pairs `(X, X′)` for which the mirror pattern holds.
    pub matches_type2: Vec<(VertexLabel, VertexLabel)>,
    pub type3_residual: Option<f64>,
    pub notes: Vec<String>,
}

/// Edge pairs swapped by a mirror fixing `x` and its opposite vertex.
pub fn type2_pairs(x: VertexLabel) -> Vec<(EdgeKey, EdgeKey)> {
    let xo = x.opposite();
    let swap = |v: VertexLabel| if v == x || v == xo { v } else { v.opposite() };
    let mut pairs = Vec::new();
    for e in EdgeKey::ALL {
        let (p, q) = e.endpoints();
        let img = EdgeKey::new(swap(p), swap(q)).expect("image is an edge");
        if e.index() < img.index() {
            pairs.push((e, img));
        }
    }
    pairs
}

/// Checks the necessary length conditions of the three flexible types.
///
/// `tol` is relative to the mean edge length. The Type III residual needs a
/// flat realization whose angles at `A`, `B`, `C` are all unicursal.
pub fn classify_edge_lengths(el: &OctaEdgeLengths, flat: Option<&OctaRealization>, tol: f64) -> FlexTypeReport {
    let mean = el.mean();
    let dev = |(x, y): (EdgeKey, EdgeKey)| (el.get(x) - el.get(y)).abs() / mean;
    let type1_max_deviation = OPPOSITE_EDGE_PAIRS.iter().copied().map(dev).fold(0.0, f64::max);
    let matches_type1 = type1_max_deviation <= tol;
    let mut notes = Vec::new();
    if matches_type1 {
        notes.push("opposite edges are pairwise equal; this is necessary for a Type I flex, not sufficient".into());
    }
    let matches_type2: Vec<_> = [A, B, C]
        .into_iter()
        .filter(|&x| type2_pairs(x).into_iter().all(|p| dev(p) <= tol))
        .map(|x| (x, x.opposite()))
        .collect();
    if !matches_type2.is_empty() {
        notes.push("mirror length pattern found; this is necessary for a Type II flex, not sufficient".into());
    }
    let type3_residual = flat.and_then(|r| match type3_residual(r, tol.max(1e-9)) {
        Ok(v) => Some(v),
        Err(msg) => {
            notes.push(format!("no Type III residual: {msg}"));
            None
        }
    });
    FlexTypeReport { matches_type1, type1_max_deviation, matches_type2, type3_residual, notes }
}

/// Compatibility residual of the three unicursal relations at `A`, `B`, `C`.
///
/// With `t, u, v` the half-tangents at `BC`, `CA`, `AB`, each vertex gives a
/// relation `x · y^s = k` (`s = ±1`). They share a one-parameter family of
/// solutions iff the exponents multiply to `−1` and the constants close up;
/// the residual is `|P − 1|` for the closing product `P`, minimised over
/// the two components at each vertex.
pub fn type3_residual(r: &OctaRealization, tol: f64) -> Result<f64, String> {
    let bc = EdgeKey::new(B, C).unwrap();
    let ca = EdgeKey::new(C, A).unwrap();
    let ab = EdgeKey::new(A, B).unwrap();
    let constants = |v: VertexLabel, t_edge: EdgeKey, u_edge: EdgeKey| -> Result<(i32, [f64; 2]), String> {
        let angles = vertex_face_angles(r, v, (t_edge, u_edge)).map_err(|e| e.to_string())?;
        if classify(&angles, tol).tag != LinkageTag::Unicursal {
            return Err(format!("vertex {v} is not unicursal"));
        }
        let k = unicursal_constants_with_tol(&angles, tol).map_err(|e| e.to_string())?;
        Ok((k.branch.exponent(), k.constants()))
    };
    // C: t u^sc = kc, B: v t^sb = kb, A: u v^sa = ka
    let (sc, kc) = constants(C, bc, ca)?;
    let (sb, kb) = constants(B, ab, bc)?;
    let (sa, ka) = constants(A, ca, ab)?;
    if sa * sb * sc != -1 {
        return Ok(f64::INFINITY);
    }
    // u = kc^sc t^-sc, v = kb t^-sb, so u v^sa = kc^sc kb^sa
    let mut best = f64::INFINITY;
    for &a in &ka {
        for &b in &kb {
            for &c in &kc {
                let p = c.powi(sc) * b.powi(sa) / a;
                if p.is_finite() {
                    best = best.min((p - 1.0).abs());
                }
            }
        }
    }
    Ok(best)
}

/// A facet whose side lengths violate a strict triangle inequality.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FacetViolation {
    pub facet: String,
    pub sides: [f64; 3],
}

pub fn validate(el: &OctaEdgeLengths) -> Vec<FacetViolation> {
    Facet::ALL
        .iter()
        .filter_map(|f| {
            let [p, q, r] = f.0;
            let s = [el.between(p, q).expect("edge"), el.between(q, r).expect("edge"), el.between(r, p).expect("edge")];
            let ok = s[0] < s[1] + s[2] && s[1] < s[0] + s[2] && s[2] < s[0] + s[1];
            (!ok).then(|| FacetViolation { facet: f.to_string(), sides: s })
        })
        .collect()
}

/// Unsigned facet angles at each vertex of facet `f`, in winding order.
pub fn facet_angles(r: &OctaRealization, f: Facet) -> [f64; 3] {
    let [p, q, s] = f.0;
    [r.angle_at(p, q, s), r.angle_at(q, s, p), r.angle_at(s, p, q)]
}

/// Cosines of the two unsigned dihedrals at `SA` and `SN` of a vertex linkage.
pub fn opposite_dihedral_cosines(r: &OctaRealization, lk: &VertexLinkage) -> Result<(f64, f64), OctaError> {
    Ok((dihedral_angle(r, lk.t_edge())?.cos(), dihedral_angle(r, lk.n_edge())?.cos()))
}

/// Residual of the tetrahedral-angle equation at a vertex, measured on `r`.
pub fn vertex_equation_residual(r: &OctaRealization, lk: &VertexLinkage) -> Result<f64, OctaError> {
    let angles = lk.face_angles(r)?;
    let coeffs = spherical_linkage::tetra_coeffs(&angles);
    let t = spherical_linkage::HalfTangent::from_dihedral(dihedral_angle(r, lk.t_edge())?);
    let u = spherical_linkage::HalfTangent::from_dihedral(dihedral_angle(r, lk.u_edge())?);
    Ok(coeffs.residual(t, u) / coeffs.magnitude())
}
