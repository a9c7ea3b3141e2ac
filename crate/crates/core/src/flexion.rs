//! Infinitesimal rigidity and finite flexion by predictor–corrector continuation.
//!
//! Continuation works on normalised coordinates (initial diameter 1, vertex
//! `A` at the origin). The constraint map has 18 rows: the 12 squared-edge
//! residuals and 6 pins that fix one facet's frame (its first vertex fixed,
//! the second on a line, the third on a plane). On a flexible octahedron its
//! Jacobian has a one-dimensional kernel, the path tangent.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use log::debug;
use nalgebra::{DMatrix, DVector, Dyn, Matrix3, SVD};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builders::wrap_angle;
use crate::intersect::{triangles_intersect, wedges_cross};
use crate::octa_model::{
    all_dihedrals, dihedral_angle, EdgeKey, Facet, OctaEdgeLengths, OctaError, OctaRealization, VertexLabel,
};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RigidityReport {
    /// Singular values of the 12×18 rigidity matrix, descending.
    pub singular_values: Vec<f64>,
    pub rank: usize,
    /// `12 − rank`, the number of non-trivial infinitesimal flexes for a
    /// non-flat framework.
    pub flex_dimension: usize,
    /// Set for coplanar configurations, where the count above is not meaningful.
    pub degenerate_flag: bool,
}

/// Jacobian of the squared edge lengths with respect to the 18 coordinates.
///
/// Rows follow [`EdgeKey::ALL`]; columns are `x_A, y_A, z_A, x_B, …`.
pub fn rigidity_matrix(r: &OctaRealization, _el: &OctaEdgeLengths) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(12, 18);
    for (row, e) in EdgeKey::ALL.iter().enumerate() {
        let (p, q) = e.endpoints();
        let d = 2.0 * (r.get(p) - r.get(q));
        for k in 0..3 {
            m[(row, 3 * p.index() + k)] = d[k];
            m[(row, 3 * q.index() + k)] = -d[k];
        }
    }
    m
}

/// SVD with an iteration cap; `None` for non-finite input or no convergence.
pub(crate) fn svd(m: DMatrix<f64>) -> Option<SVD<f64, Dyn, Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    SVD::try_new(m, true, true, f64::EPSILON, 10_000)
}

fn sorted_singular_values(m: DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = match svd(m) {
        Some(d) => d.singular_values.iter().copied().collect(),
        None => vec![f64::NAN],
    };
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn flex_dimension(r: &OctaRealization, el: &OctaEdgeLengths, rank_tol: f64) -> RigidityReport {
    let s = sorted_singular_values(rigidity_matrix(r, el));
    let thresh = rank_tol * s.first().copied().unwrap_or(0.0);
    let rank = s.iter().filter(|&&x| x > thresh).count();
    RigidityReport {
        singular_values: s,
        rank,
        flex_dimension: 12 - rank,
        degenerate_flag: detect_flat(r, DEFAULT_FLAT_TOL).flat,
    }
}

pub const DEFAULT_FLAT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Flatness {
    /// Smallest singular value of the centred 6×3 coordinate matrix over its
    /// Frobenius norm.
    pub measure: f64,
    pub flat: bool,
}

pub fn detect_flat(r: &OctaRealization, tol: f64) -> Flatness {
    let c = r.centroid();
    let m = DMatrix::from_fn(6, 3, |i, k| r.points[i][k] - c[k]);
    let fro = m.norm();
    let s = sorted_singular_values(m);
    let measure = if fro > 0.0 { s[2] / fro } else { 0.0 };
    Flatness { measure, flat: measure <= tol }
}

/// Relative tolerance on the plane-line angle used for shared-vertex facets.
const WEDGE_TOL: f64 = 1e-12;

/// Non-adjacent facet pairs whose closed triangles intersect.
///
/// Pairs sharing an edge are never reported; pairs sharing a vertex are
/// reported when they meet anywhere else.
pub fn facet_crossings(r: &OctaRealization) -> Vec<(Facet, Facet)> {
    let mut out = Vec::new();
    for i in 0..8 {
        for j in i + 1..8 {
            let (f, g) = (Facet::ALL[i], Facet::ALL[j]);
            let hit = match f.shared_vertices(g) {
                0 => triangles_intersect(f.0.map(|v| r.get(v)), g.0.map(|v| r.get(v))),
                1 => {
                    let v = *f.0.iter().find(|v| g.contains(**v)).expect("shared vertex");
                    let [a, b] = others(f, v);
                    let [c, d] = others(g, v);
                    wedges_cross(r.get(v), r.get(a), r.get(b), r.get(c), r.get(d), WEDGE_TOL)
                }
                _ => false,
            };
            if hit {
                out.push((f, g));
            }
        }
    }
    out
}

fn others(f: Facet, v: VertexLabel) -> [VertexLabel; 2] {
    let o: Vec<_> = f.0.iter().copied().filter(|&w| w != v).collect();
    [o[0], o[1]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// The driven dihedral increases at the start.
    #[default]
    Increasing,
    Decreasing,
}

/// Controls for [`flex_path`]. Step lengths are in units of the initial diameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriveSpec {
    pub edge: EdgeKey,
    /// Stop once the driven signed dihedral leaves `[lo, hi]`.
    pub range: Option<[f64; 2]>,
    pub max_steps: usize,
    pub initial_step: f64,
    pub max_step: f64,
    pub min_step_ratio: f64,
    pub corrector_tol: f64,
    pub max_iters: usize,
    pub rank_tol: f64,
    pub flat_tol: f64,
    pub pinned: [VertexLabel; 3],
    pub stop_after_flat_events: Option<usize>,
    pub direction: Direction,
}

impl Default for DriveSpec {
    fn default() -> Self {
        Self {
            edge: "BC".parse().expect("edge"),
            range: None,
            max_steps: 200,
            initial_step: 0.02,
            max_step: 0.05,
            min_step_ratio: 1e-6,
            corrector_tol: 1e-12,
            max_iters: 25,
            rank_tol: 1e-7,
            flat_tol: DEFAULT_FLAT_TOL,
            pinned: [VertexLabel::A, VertexLabel::B, VertexLabel::C],
            stop_after_flat_events: None,
            direction: Direction::Increasing,
        }
    }
}

impl DriveSpec {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("initial_step", self.initial_step),
            ("max_step", self.max_step),
            ("min_step_ratio", self.min_step_ratio),
            ("corrector_tol", self.corrector_tol),
            ("rank_tol", self.rank_tol),
            ("flat_tol", self.flat_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("drive.{name} must be positive, got {v}"));
            }
        }
        if self.max_step < self.initial_step {
            return Err("drive.max_step must be at least drive.initial_step".into());
        }
        if self.max_iters == 0 {
            return Err("drive.max_iters must be positive".into());
        }
        let [p, q, s] = self.pinned;
        if p == q || q == s || p == s {
            return Err("drive.pinned must name three distinct vertices".into());
        }
        if let Some([lo, hi]) = self.range {
            if !(lo < hi) {
                return Err("drive.range must satisfy lo < hi".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frame {
    pub realization: OctaRealization,
    pub arclength: f64,
    /// Signed dihedrals in [`EdgeKey::ALL`] order.
    pub dihedrals: [f64; 12],
    /// Largest edge-length deviation relative to the mean edge.
    pub max_edge_deviation: f64,
    pub flatness: f64,
    pub flat: bool,
    pub crossings: Vec<(Facet, Facet)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FlexEvent {
    /// `frame` is flat. When the crossing could not be pinned down, the flat
    /// configuration lies between `frame − 1` and `frame` instead.
    Flat {
        frame: usize,
    },
    FacetCrossingsChanged {
        frame: usize,
        added: Vec<(Facet, Facet)>,
        removed: Vec<(Facet, Facet)>,
    },
    Stall {
        frame: usize,
        step: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StepCap,
    RangeEnd,
    FlatEventLimit,
    Stall,
    BranchAmbiguity,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlexionPath {
    pub frames: Vec<Frame>,
    pub events: Vec<FlexEvent>,
    pub termination: Termination,
    pub edge_lengths: [f64; 12],
    pub drive: DriveSpec,
}

impl FlexionPath {
    pub fn flat_events(&self) -> usize {
        self.events.iter().filter(|e| matches!(e, FlexEvent::Flat { .. })).count()
    }

    pub fn max_edge_deviation(&self) -> f64 {
        self.frames.iter().map(|f| f.max_edge_deviation).fold(0.0, f64::max)
    }

    /// Builds a path from bare realizations (e.g. re-imported frames).
    pub fn from_realizations(
        realizations: Vec<OctaRealization>,
        el: &OctaEdgeLengths,
        flat_tol: f64,
    ) -> Result<Self, OctaError> {
        let mut frames = Vec::with_capacity(realizations.len());
        let mut s = 0.0;
        let mut prev: Option<OctaRealization> = None;
        for r in realizations {
            if let Some(p) = prev {
                s += (0..6).map(|i| (r.points[i] - p.points[i]).norm_squared()).sum::<f64>().sqrt();
            }
            frames.push(make_frame(&r, el, s, flat_tol)?);
            prev = Some(r);
        }
        Ok(Self {
            frames,
            events: Vec::new(),
            termination: Termination::StepCap,
            edge_lengths: el.values(),
            drive: DriveSpec::default(),
        })
    }
}

#[derive(Debug, Error)]
pub enum FlexError {
    #[error("octahedron is not flexible (flex dimension {flex_dimension})")]
    NotFlexible { flex_dimension: usize },
    #[error("continuation stalled after {} frames (step {step:e})", path.frames.len())]
    ContinuationStall { step: f64, path: Box<FlexionPath> },
    #[error("tangent space has dimension {null_dim} at frame {frame}")]
    BranchAmbiguity { frame: usize, null_dim: usize, path: Box<FlexionPath> },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Geometry(#[from] OctaError),
}

impl FlexError {
    /// Frames computed before the failure, if any.
    pub fn partial_path(&self) -> Option<&FlexionPath> {
        match self {
            FlexError::ContinuationStall { path, .. } | FlexError::BranchAmbiguity { path, .. } => Some(path),
            _ => None,
        }
    }
}

fn make_frame(r: &OctaRealization, el: &OctaEdgeLengths, arclength: f64, flat_tol: f64) -> Result<Frame, OctaError> {
    let flatness = detect_flat(r, flat_tol);
    let lengths = OctaEdgeLengths::new(r.raw_edge_lengths())?;
    Ok(Frame {
        realization: *r,
        arclength,
        dihedrals: all_dihedrals(r)?,
        max_edge_deviation: el.max_relative_deviation(&lengths),
        flatness: flatness.measure,
        flat: flatness.flat,
        crossings: facet_crossings(r),
    })
}

/// Constraint system in normalised coordinates.
struct System {
    origin: Vec3,
    scale: f64,
    sq_len: [f64; 12],
    pinned: [usize; 3],
    /// Two unit normals of the line of the second pinned vertex.
    line_normals: [Vec3; 2],
    plane_normal: Vec3,
}

impl System {
    fn new(r0: &OctaRealization, el: &OctaEdgeLengths, pinned: [VertexLabel; 3]) -> Result<Self, FlexError> {
        let scale = r0.diameter();
        let origin = r0.get(pinned[0]);
        let b = (r0.get(pinned[1]) - origin) / scale;
        let c = (r0.get(pinned[2]) - origin) / scale;
        let n = b.cross(&c);
        if n.norm() <= 1e-9 * b.norm() * c.norm() {
            return Err(FlexError::InvalidInput("pinned vertices are collinear".into()));
        }
        let n = n.normalize();
        let m = n.cross(&b.normalize());
        Ok(Self {
            origin,
            scale,
            sq_len: el.values().map(|l| (l / scale).powi(2)),
            pinned: pinned.map(VertexLabel::index),
            line_normals: [n, m],
            plane_normal: n,
        })
    }

    fn to_x(&self, r: &OctaRealization) -> DVector<f64> {
        DVector::from_iterator(18, r.map(|p| (p - self.origin) / self.scale).to_flat())
    }

    fn to_realization(&self, x: &DVector<f64>) -> OctaRealization {
        OctaRealization::from_flat(x.as_slice()).map(|p| self.origin + p * self.scale)
    }

    fn point(x: &DVector<f64>, i: usize) -> Vec3 {
        Vec3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2])
    }

    fn residual(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut h = DVector::zeros(18);
        for (row, e) in EdgeKey::ALL.iter().enumerate() {
            let (p, q) = e.endpoints();
            h[row] = (Self::point(x, p.index()) - Self::point(x, q.index())).norm_squared() - self.sq_len[row];
        }
        let a = Self::point(x, self.pinned[0]);
        let b = Self::point(x, self.pinned[1]);
        let c = Self::point(x, self.pinned[2]);
        h[12] = a.x;
        h[13] = a.y;
        h[14] = a.z;
        h[15] = self.line_normals[0].dot(&b);
        h[16] = self.line_normals[1].dot(&b);
        h[17] = self.plane_normal.dot(&c);
        h
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(18, 18);
        for (row, e) in EdgeKey::ALL.iter().enumerate() {
            let (p, q) = e.endpoints();
            let d = 2.0 * (Self::point(x, p.index()) - Self::point(x, q.index()));
            for k in 0..3 {
                j[(row, 3 * p.index() + k)] = d[k];
                j[(row, 3 * q.index() + k)] = -d[k];
            }
        }
        for k in 0..3 {
            j[(12 + k, 3 * self.pinned[0] + k)] = 1.0;
            j[(15, 3 * self.pinned[1] + k)] = self.line_normals[0][k];
            j[(16, 3 * self.pinned[1] + k)] = self.line_normals[1][k];
            j[(17, 3 * self.pinned[2] + k)] = self.plane_normal[k];
        }
        j
    }

    /// Second directional derivative `H''[v, v]`.
    fn second_derivative(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut h = DVector::zeros(18);
        for (row, e) in EdgeKey::ALL.iter().enumerate() {
            let (p, q) = e.endpoints();
            h[row] = 2.0 * (Self::point(v, p.index()) - Self::point(v, q.index())).norm_squared();
        }
        h
    }

    /// Signed heights of the non-pinned vertices over the pinned plane.
    fn heights(&self, x: &DVector<f64>) -> Vec<f64> {
        (0..6).filter(|i| !self.pinned.contains(i)).map(|i| self.plane_normal.dot(&Self::point(x, i))).collect()
    }

    /// Gauss–Newton on `H(y) = 0`, with an optional hyperplane `τ·(y − x̂) = 0`.
    fn correct(
        &self,
        mut y: DVector<f64>,
        plane: Option<(&DVector<f64>, &DVector<f64>)>,
        tol: f64,
        max_iters: usize,
    ) -> Option<(DVector<f64>, usize)> {
        let rows = if plane.is_some() { 19 } else { 18 };
        let mut prev_norm = f64::INFINITY;
        for it in 0..=max_iters {
            let h = self.residual(&y);
            let mut f = DVector::zeros(rows);
            f.rows_mut(0, 18).copy_from(&h);
            if let Some((tau, xp)) = plane {
                f[18] = tau.dot(&(&y - xp));
            }
            let norm = f.amax();
            if norm <= tol {
                return Some((y, it));
            }
            if it == max_iters || !norm.is_finite() || (it > 3 && norm > 0.5 * prev_norm && norm > 1e3 * tol) {
                return None;
            }
            prev_norm = norm;
            let mut jac = DMatrix::zeros(rows, 18);
            jac.rows_mut(0, 18).copy_from(&self.jacobian(&y));
            if let Some((tau, _)) = plane {
                jac.row_mut(18).copy_from(&tau.transpose());
            }
            let d = svd(jac)?;
            let eps = 1e-13 * d.singular_values.max();
            let dx = d.solve(&f, eps).ok()?;
            if dx.amax() > 0.5 {
                return None;
            }
            y -= dx;
        }
        None
    }
}

/// Kernel basis and left-kernel basis of a square Jacobian.
struct Kernel {
    null: Vec<DVector<f64>>,
    left_null: Vec<DVector<f64>>,
}

fn kernel(j: &DMatrix<f64>, rank_tol: f64) -> Option<Kernel> {
    let d = svd(j.clone())?;
    let u = d.u.as_ref().expect("u");
    let vt = d.v_t.as_ref().expect("v_t");
    let s = &d.singular_values;
    let smax = s.max();
    let mut null = Vec::new();
    let mut left_null = Vec::new();
    for i in 0..s.len() {
        if s[i] <= rank_tol * smax {
            null.push(vt.row(i).transpose());
            left_null.push(u.column(i).into_owned());
        }
    }
    if null.is_empty() {
        // numerically the tangent is the weakest direction
        let i = s.imin();
        null.push(vt.row(i).transpose());
        left_null.push(u.column(i).into_owned());
    }
    Some(Kernel { null, left_null })
}

/// Unit vectors `c` with `cᵀ Q c = 0` for every form, one per ± pair.
fn common_isotropic_directions(forms: &[DMatrix<f64>]) -> Vec<DVector<f64>> {
    let k = forms[0].nrows();
    let scale = forms.iter().map(|q| q.amax()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut starts = Vec::new();
    let total = 3usize.pow(k as u32);
    for code in 1..total {
        let mut v = DVector::zeros(k);
        let mut c = code;
        for i in 0..k {
            v[i] = (c % 3) as f64 - 1.0;
            c /= 3;
        }
        starts.push(v.normalize());
    }
    let mut roots: Vec<DVector<f64>> = Vec::new();
    for mut c in starts {
        for _ in 0..100 {
            let m = forms.len();
            let mut f = DVector::zeros(m + 1);
            let mut jac = DMatrix::zeros(m + 1, k);
            for (i, q) in forms.iter().enumerate() {
                let qc = q * &c;
                f[i] = c.dot(&qc) / scale;
                jac.row_mut(i).copy_from(&(2.0 * qc / scale).transpose());
            }
            f[m] = c.norm_squared() - 1.0;
            jac.row_mut(m).copy_from(&(2.0 * &c).transpose());
            if f.amax() <= 1e-14 {
                break;
            }
            match svd(jac).map(|d| d.solve(&f, 1e-14)) {
                Some(Ok(dx)) => c -= dx,
                _ => break,
            }
        }
        if c.iter().any(|v| !v.is_finite()) || c.norm() == 0.0 {
            continue;
        }
        let c = c.normalize();
        let res = forms.iter().map(|q| (c.dot(&(q * &c)) / scale).abs()).fold(0.0, f64::max);
        if res <= 1e-10 && !roots.iter().any(|r| r.dot(&c).abs() >= 1.0 - 1e-6) {
            roots.push(c);
        }
    }
    roots
}

/// Second-order analysis at a point whose kernel has dimension > 1.
///
/// Returns `(v, w)` with `J v = 0` and `J w = −H''[v, v]`, or the number of
/// admissible directions when there is not exactly one.
fn second_order_direction(sys: &System, j: &DMatrix<f64>, ker: &Kernel) -> Result<(DVector<f64>, DVector<f64>), usize> {
    let k = ker.null.len();
    let n = DMatrix::from_columns(&ker.null);
    let forms: Vec<DMatrix<f64>> = ker
        .left_null
        .iter()
        .map(|w| {
            let mut q = DMatrix::zeros(k, k);
            for (row, e) in EdgeKey::ALL.iter().enumerate() {
                let (p, s) = e.endpoints();
                let g = n.rows(3 * p.index(), 3) - n.rows(3 * s.index(), 3);
                q += 2.0 * w[row] * g.transpose() * g;
            }
            q
        })
        .collect();
    let roots = common_isotropic_directions(&forms);
    if roots.len() != 1 {
        return Err(roots.len());
    }
    let v = &n * &roots[0];
    let b = -sys.second_derivative(&v);
    let d = svd(j.clone()).ok_or(0usize)?;
    let eps = 1e-9 * d.singular_values.max();
    let w = d.solve(&b, eps).map_err(|_| 0usize)?;
    Ok((v, w))
}

/// Follows the flex of `r0` while keeping the edge lengths `el`.
pub fn flex_path(r0: &OctaRealization, el: &OctaEdgeLengths, drive: &DriveSpec) -> Result<FlexionPath, FlexError> {
    drive.validate().map_err(FlexError::InvalidInput)?;
    let start_dev = el.max_relative_deviation(&OctaEdgeLengths::new(r0.raw_edge_lengths())?);
    if start_dev > 1e-6 {
        return Err(FlexError::InvalidInput(format!(
            "initial realization deviates from the edge lengths by {start_dev:e}"
        )));
    }
    let sys = System::new(r0, el, drive.pinned)?;
    let tol = drive.corrector_tol;
    let mut x = sys.correct(sys.to_x(r0), None, tol, drive.max_iters).map(|(y, _)| y).ok_or_else(|| {
        FlexError::InvalidInput("initial realization could not be projected onto the edge lengths".into())
    })?;

    let r_start = sys.to_realization(&x);
    let mut path = FlexionPath {
        frames: vec![make_frame(&r_start, el, 0.0, drive.flat_tol)?],
        events: Vec::new(),
        termination: Termination::StepCap,
        edge_lengths: el.values(),
        drive: drive.clone(),
    };
    let start_flat = path.frames[0].flat;

    let driven = drive.edge;
    let sign = match drive.direction {
        Direction::Increasing => 1.0,
        Direction::Decreasing => -1.0,
    };
    let driven_change = |a: &DVector<f64>, b: &DVector<f64>| -> f64 {
        let d0 = dihedral_angle(&sys.to_realization(a), driven).unwrap_or(0.0);
        let d1 = dihedral_angle(&sys.to_realization(b), driven).unwrap_or(0.0);
        wrap_angle(d1 - d0)
    };

    let h0 = drive.initial_step;
    let mut h = h0;
    let j0 = sys.jacobian(&x);
    let ker0 = kernel(&j0, drive.rank_tol)
        .ok_or_else(|| FlexError::InvalidInput("singular value decomposition did not converge".into()))?;

    // first step: a tangent, or a curved predictor at a singular start
    let mut tangent: DVector<f64>;
    let mut curvature: Option<DVector<f64>> = None;
    if ker0.null.len() == 1 {
        if !start_flat {
            let rep = flex_dimension(&r_start, el, drive.rank_tol);
            if rep.flex_dimension == 0 {
                return Err(FlexError::NotFlexible { flex_dimension: 0 });
            }
        }
        tangent = ker0.null[0].clone();
        let probe = &x + 1e-6 * &tangent;
        if sign * driven_change(&x, &probe) < 0.0 {
            tangent = -tangent;
        }
    } else if start_flat {
        match second_order_direction(&sys, &j0, &ker0) {
            Ok((v, w)) => {
                let probe = &x + 1e-4 * &v + 0.5e-8 * &w;
                let flip = sign * driven_change(&x, &probe) < 0.0;
                tangent = if flip { -v } else { v };
                curvature = Some(w);
            }
            Err(0) => return Err(FlexError::NotFlexible { flex_dimension: 0 }),
            Err(n) => {
                path.termination = Termination::BranchAmbiguity;
                return Err(FlexError::BranchAmbiguity { frame: 0, null_dim: n, path: Box::new(path) });
            }
        }
    } else {
        let rep = flex_dimension(&r_start, el, drive.rank_tol);
        path.termination = Termination::BranchAmbiguity;
        return Err(FlexError::BranchAmbiguity { frame: 0, null_dim: rep.flex_dimension, path: Box::new(path) });
    }
    tangent.normalize_mut();

    let mut arclength = 0.0;
    let mut prev_heights = sys.heights(&x);
    let mut prev_crossings: BTreeSet<(usize, usize)> = crossing_ids(&path.frames[0].crossings);
    let mut flat_count = 0usize;

    for step in 0..drive.max_steps {
        let mut accepted = None;
        while accepted.is_none() {
            let pred = match &curvature {
                Some(w) => &x + h * &tangent + 0.5 * h * h * w,
                None => &x + h * &tangent,
            };
            let dir = (&pred - &x).normalize();
            let corrected = sys
                .correct(pred.clone(), Some((&dir, &pred)), tol, drive.max_iters)
                .and_then(|(y, iters)| kernel(&sys.jacobian(&y), drive.rank_tol).map(|k| (y, iters, k)));
            if let Some((y, iters, ker)) = corrected {
                let jump = (&y - &pred).norm();
                let near_flat = detect_flat(&sys.to_realization(&y), 1e-6).flat;
                let secant = (&y - &x).normalize();
                let new_tangent = if ker.null.len() > 1 && near_flat {
                    secant.clone()
                } else if ker.null.len() > 1 {
                    path.termination = Termination::BranchAmbiguity;
                    let n = ker.null.len();
                    return Err(FlexError::BranchAmbiguity {
                        frame: path.frames.len(),
                        null_dim: n,
                        path: Box::new(path),
                    });
                } else {
                    let t = ker.null[0].normalize();
                    if t.dot(&secant) < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let smooth = new_tangent.dot(&secant) > 0.9 && secant.dot(&dir) > 0.9 && jump <= 0.5 * h;
                if smooth {
                    accepted = Some((y, new_tangent, iters));
                    continue;
                }
            }
            h *= 0.5;
            if h < drive.min_step_ratio * h0 {
                let frame = path.frames.len();
                path.events.push(FlexEvent::Stall { frame, step: h });
                path.termination = Termination::Stall;
                return Err(FlexError::ContinuationStall { step: h, path: Box::new(path) });
            }
        }
        let (y, new_tangent, iters) = accepted.expect("accepted step");
        let heights = sys.heights(&y);
        let r = sys.to_realization(&y);
        let frame = make_frame(&r, el, arclength + (&y - &x).norm() * sys.scale, drive.flat_tol)?;

        if !frame.flat && crossed_flat(&prev_heights, &heights) {
            // land on the flat configuration inside the step
            if let Some(z) = locate_flat(&sys, &x, &y, &prev_heights, &heights, tol, drive.max_iters) {
                let fz =
                    make_frame(&sys.to_realization(&z), el, arclength + (&z - &x).norm() * sys.scale, drive.flat_tol)?;
                path.events.push(FlexEvent::Flat { frame: path.frames.len() });
                flat_count += 1;
                push_frame(&mut path, fz, &mut prev_crossings);
                if drive.stop_after_flat_events.is_some_and(|n| flat_count >= n) {
                    path.termination = Termination::FlatEventLimit;
                    return Ok(path);
                }
            } else {
                path.events.push(FlexEvent::Flat { frame: path.frames.len() });
                flat_count += 1;
            }
        } else if frame.flat {
            path.events.push(FlexEvent::Flat { frame: path.frames.len() });
            flat_count += 1;
        }
        arclength = frame.arclength;
        let driven_now = frame.dihedrals[driven.index()];
        push_frame(&mut path, frame, &mut prev_crossings);
        debug!("step {step}: h = {h:.3e}, iters = {iters}, s = {arclength:.6}");

        x = y;
        tangent = new_tangent;
        curvature = None;
        prev_heights = heights;
        if iters <= 3 {
            h = (h * 1.5).min(drive.max_step);
        }

        if let Some([lo, hi]) = drive.range {
            if driven_now < lo || driven_now > hi {
                path.termination = Termination::RangeEnd;
                return Ok(path);
            }
        }
        if drive.stop_after_flat_events.is_some_and(|n| flat_count >= n) {
            path.termination = Termination::FlatEventLimit;
            return Ok(path);
        }
    }
    path.termination = Termination::StepCap;
    Ok(path)
}

fn push_frame(path: &mut FlexionPath, frame: Frame, prev: &mut BTreeSet<(usize, usize)>) {
    let crossings = crossing_ids(&frame.crossings);
    if crossings != *prev {
        let ids = |s: &BTreeSet<(usize, usize)>| s.iter().map(|&(i, j)| (Facet::ALL[i], Facet::ALL[j])).collect();
        path.events.push(FlexEvent::FacetCrossingsChanged {
            frame: path.frames.len(),
            added: ids(&crossings.difference(prev).copied().collect()),
            removed: ids(&prev.difference(&crossings).copied().collect()),
        });
    }
    *prev = crossings;
    path.frames.push(frame);
}

/// Flat configuration near the chord from `x` to `y`: Gauss–Newton on the
/// edge equations together with zero heights, which has full column rank at
/// a generic flat state even though the edge Jacobian alone does not.
fn locate_flat(
    sys: &System,
    x: &DVector<f64>,
    y: &DVector<f64>,
    hx: &[f64],
    hy: &[f64],
    tol: f64,
    max_iters: usize,
) -> Option<DVector<f64>> {
    let s = hx.iter().zip(hy).map(|(a, b)| a / (a - b)).sum::<f64>() / hx.len() as f64;
    let mut z = x + s * (y - x);
    let free: Vec<usize> = (0..6).filter(|i| !sys.pinned.contains(i)).collect();
    let rows = 18 + free.len();
    for _ in 0..max_iters {
        let mut f = DVector::zeros(rows);
        f.rows_mut(0, 18).copy_from(&sys.residual(&z));
        f.rows_mut(18, free.len()).copy_from_slice(&sys.heights(&z));
        if f.amax() <= tol {
            return Some(z);
        }
        let mut jac = DMatrix::zeros(rows, 18);
        jac.rows_mut(0, 18).copy_from(&sys.jacobian(&z));
        for (r, &i) in free.iter().enumerate() {
            for k in 0..3 {
                jac[(18 + r, 3 * i + k)] = sys.plane_normal[k];
            }
        }
        let d = svd(jac)?;
        let eps = 1e-13 * d.singular_values.max();
        let dz = d.solve(&f, eps).ok()?;
        if !(dz.amax() <= 0.5) {
            return None;
        }
        z -= dz;
    }
    None
}

fn crossed_flat(before: &[f64], after: &[f64]) -> bool {
    if before.iter().zip(after).any(|(a, b)| a * b >= 0.0) {
        return false;
    }
    // the heights should vanish together
    let s: Vec<f64> = before.iter().zip(after).map(|(a, b)| a / (a - b)).collect();
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    hi - lo <= 0.2
}

fn crossing_ids(c: &[(Facet, Facet)]) -> BTreeSet<(usize, usize)> {
    let id = |f: &Facet| Facet::ALL.iter().position(|g| g == f).expect("facet");
    c.iter().map(|(f, g)| (id(f), id(g))).collect()
}

/// Rotation taking frame `b` onto frame `a` in the least-squares sense, with
/// translation; returns the largest residual distance.
pub fn rigid_alignment_residual(a: &OctaRealization, b: &OctaRealization) -> f64 {
    let (ca, cb) = (a.centroid(), b.centroid());
    let mut h = Matrix3::zeros();
    for i in 0..6 {
        h += (b.points[i] - cb) * (a.points[i] - ca).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut rot = vt.transpose() * u.transpose();
    if rot.determinant() < 0.0 {
        let mut fix = Matrix3::identity();
        fix[(2, 2)] = -1.0;
        rot = vt.transpose() * fix * u.transpose();
    }
    (0..6).map(|i| (rot * (b.points[i] - cb) + ca - a.points[i]).norm()).fold(0.0, f64::max)
}

/// Half the angular range of a set of dihedral samples, wrap-aware.
pub fn dihedral_span(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let base = samples[0];
    let (lo, hi) =
        samples.iter().map(|&s| wrap_angle(s - base)).fold((0.0_f64, 0.0_f64), |(l, h), d| (l.min(d), h.max(d)));
    (hi - lo).min(2.0 * PI)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builders::{build_type1, build_type1_mirror, build_type3_flat, Line3};
    use crate::octa_model::edge_lengths;
    use crate::{Vec2, Vec3};
    use approx::assert_abs_diff_eq;

    fn type1() -> OctaRealization {
        build_type1(Vec3::new(1.0, 0.0, 0.5), Vec3::new(0.1, 1.0, -0.4), Vec3::new(0.7, -0.8, 0.1), &Line3::z_axis())
            .unwrap()
    }

    #[test]
    fn regular_is_rigid_and_trivial_motions_are_in_kernel() {
        let r = OctaRealization::regular();
        let el = edge_lengths(&r).unwrap();
        let rep = flex_dimension(&r, &el, 1e-7);
        assert_eq!(rep.rank, 12);
        assert_eq!(rep.flex_dimension, 0);
        let m = rigidity_matrix(&r, &el);
        for k in 0..3 {
            let mut t = DVector::zeros(18);
            for i in 0..6 {
                t[3 * i + k] = 1.0;
            }
            assert!((&m * &t).amax() < 1e-12);
            let axis = Vec3::ith(k, 1.0);
            let rot = DVector::from_iterator(18, r.map(|p| axis.cross(&p)).to_flat());
            assert!((&m * &rot).amax() < 1e-12);
        }
    }

    #[test]
    fn flatness_measure() {
        assert_abs_diff_eq!(detect_flat(&OctaRealization::regular(), 1e-8).measure, 1.0 / 3f64.sqrt(), epsilon = 1e-12);
        let (_, r) = build_type3_flat(
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(1.0, 2.5),
            Vec2::new(5.0 / 3.0, 2.5 / 3.0),
        )
        .unwrap();
        assert!(detect_flat(&r, 1e-8).flat);
    }

    #[test]
    fn crossings() {
        assert!(facet_crossings(&OctaRealization::regular()).is_empty());
        let c = facet_crossings(&type1());
        assert!(!c.is_empty());
        for (f, g) in c {
            assert!(f.shared_vertices(g) < 2);
        }
    }

    #[test]
    fn type1_has_a_flex_and_mirror_does_not() {
        let r = type1();
        let el = edge_lengths(&r).unwrap();
        assert!(flex_dimension(&r, &el, 1e-7).flex_dimension >= 1);
        let m = build_type1_mirror(
            Vec3::new(1.0, 0.0, 0.5),
            Vec3::new(0.1, 1.0, -0.4),
            Vec3::new(0.7, -0.8, 0.1),
            &Line3::z_axis(),
        )
        .unwrap();
        let elm = edge_lengths(&m).unwrap();
        assert_eq!(flex_dimension(&m, &elm, 1e-7).flex_dimension, 0);
        assert!(matches!(flex_path(&m, &elm, &DriveSpec::default()), Err(FlexError::NotFlexible { .. })));
    }

    #[test]
    fn type1_short_path_keeps_lengths() {
        let r = type1();
        let el = edge_lengths(&r).unwrap();
        let drive = DriveSpec { max_steps: 30, ..DriveSpec::default() };
        let path = flex_path(&r, &el, &drive).unwrap();
        assert_eq!(path.frames.len(), 31);
        assert!(path.max_edge_deviation() < 1e-9);
        let d = &path.frames[1].dihedrals;
        assert!(d[1] > path.frames[0].dihedrals[1]);
        for w in path.frames.windows(2) {
            assert!(w[1].arclength > w[0].arclength);
        }
    }

    #[test]
    fn type3_leaves_flat_state() {
        let (_, r) = build_type3_flat(
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(1.0, 2.5),
            Vec2::new(5.0 / 3.0, 2.5 / 3.0),
        )
        .unwrap();
        let el = edge_lengths(&r).unwrap();
        let drive = DriveSpec { stop_after_flat_events: Some(1), max_steps: 400, ..DriveSpec::default() };
        let path = flex_path(&r, &el, &drive).unwrap();
        assert_eq!(path.termination, Termination::FlatEventLimit);
        assert!(!path.frames[1].flat);
        assert!(path.max_edge_deviation() < 1e-9);
    }
}
