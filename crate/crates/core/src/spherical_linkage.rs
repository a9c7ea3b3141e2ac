//! The articulated tetrahedral angle (a spherical four-bar linkage).
//!
//! A tetrahedral angle with apex `S` has four rays `SA`, `SB`, `SN`, `SM` in
//! cyclic order and four fixed face angles:
//!
//! * `alpha = ∠ASB`, the face between the two tracked edges,
//! * `beta = ∠ASM`, the other face at `SA`,
//! * `delta = ∠NSB`, the other face at `SB`,
//! * `gamma = ∠MSN`, the face opposite `alpha`.
//!
//! Writing `t = tan(φ/2)` and `u = tan(ψ/2)` for the dihedrals at `SA` and
//! `SB`, the linkage obeys the biquadratic
//!
//! ```text
//! A t²u² + B t² + 2C tu + D u² + E = 0
//! ```
//!
//! whose coefficients are produced by [`tetra_coeffs`]. Both dihedrals are
//! measured from the face `ASB` towards the same side of it, so `(t, u)` and
//! `(-t, -u)` always solve the equation together.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default relative tolerance for deciding that a coefficient vanishes.
pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinkageError {
    #[error("face angle {name} = {value} is outside the open interval (0, pi)")]
    InvalidAngle { name: &'static str, value: f64 },
    #[error("no real conjugate dihedral: discriminant {discriminant:e} is negative")]
    NoRealRoot { discriminant: f64 },
    #[error("the equation places no constraint on u for this input dihedral")]
    DegenerateQuadratic,
    #[error("tetrahedral angle is not unicursal (opposite faces are not equal or supplementary)")]
    NotUnicursal,
    #[error("coefficient C vanishes; the face angles are not determined")]
    SingularC,
    #[error("reality condition fails: {0}")]
    Unreal(&'static str),
    #[error("four-bar side {name} = {value} must be positive")]
    NonPositiveSide { name: &'static str, value: f64 },
}

/// The four face angles of an articulated tetrahedral angle, each in `(0, π)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct FaceAngles {
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
}

impl FaceAngles {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self, LinkageError> {
        for (name, value) in [("alpha", alpha), ("beta", beta), ("gamma", gamma), ("delta", delta)] {
            if !(value > 0.0 && value < PI) {
                return Err(LinkageError::InvalidAngle { name, value });
            }
        }
        Ok(Self { alpha, beta, gamma, delta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    /// The same linkage with the roles of the two tracked edges exchanged.
    pub fn swapped(self) -> Self {
        Self { alpha: self.alpha, beta: self.delta, gamma: self.gamma, delta: self.beta }
    }

    /// `16 sin²α sin²β sin²γ sin²δ`, the closed form of the decomposition discriminant.
    pub fn discriminant_closed_form(&self) -> f64 {
        let p = self.alpha.sin() * self.beta.sin() * self.gamma.sin() * self.delta.sin();
        16.0 * p * p
    }
}

impl TryFrom<[f64; 4]> for FaceAngles {
    type Error = LinkageError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<FaceAngles> for [f64; 4] {
    fn from(f: FaceAngles) -> Self {
        f.to_array()
    }
}

/// Coefficients `(A, B, C, D, E)` of the tetrahedral-angle equation.
///
/// The planar four-bar limit reuses this type for its primed coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TetraCoeffs {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
}

impl TetraCoeffs {
    pub const fn new(a: f64, b: f64, c: f64, d: f64, e: f64) -> Self {
        Self { a, b, c, d, e }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.a, self.b, self.c, self.d, self.e]
    }

    /// Largest coefficient magnitude.
    pub fn magnitude(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `(C² − AE − BD)² − 4ABDE`; it vanishes exactly when the equation
    /// factors for a generic reason.
    ///
    /// Evaluated in double-double arithmetic: the two terms nearly cancel
    /// when a face angle approaches 0 or π.
    pub fn discriminant(&self) -> f64 {
        let [a, b, c, d, e] = self.to_array().map(Dd::from);
        let s = c.mul(c).sub(a.mul(e)).sub(b.mul(d));
        let four = Dd::from(4.0);
        s.mul(s).sub(four.mul(a).mul(b).mul(d.mul(e))).value()
    }

    /// Coefficients of the same relation written in `(1/t, 1/u)`.
    pub fn reversed(self) -> Self {
        Self { a: self.e, b: self.d, c: self.c, d: self.b, e: self.a }
    }

    /// Value of the left-hand side at finite `(t, u)`.
    pub fn eval(&self, t: f64, u: f64) -> f64 {
        self.a * t * t * u * u + self.b * t * t + 2.0 * self.c * t * u + self.d * u * u + self.e
    }

    /// Residual of the equation, homogenised so that either argument may be
    /// at infinity, and divided by `(1 + t²)(1 + u²)` so it stays bounded.
    pub fn residual(&self, t: HalfTangent, u: HalfTangent) -> f64 {
        match (t, u) {
            (HalfTangent::Finite(t), HalfTangent::Finite(u)) => self.eval(t, u) / ((1.0 + t * t) * (1.0 + u * u)),
            (HalfTangent::Infinite, HalfTangent::Finite(u)) => (self.a * u * u + self.b) / (1.0 + u * u),
            (HalfTangent::Finite(t), HalfTangent::Infinite) => (self.a * t * t + self.d) / (1.0 + t * t),
            (HalfTangent::Infinite, HalfTangent::Infinite) => self.a,
        }
    }

    /// Whether `other` is a nonzero multiple of `self` within relative tolerance `tol`.
    pub fn is_proportional_to(&self, other: &TetraCoeffs, tol: f64) -> bool {
        proportionality_error(self, other) <= tol
    }
}

/// Relative distance between two coefficient vectors after removing the
/// best (possibly negative) scale factor. Zero when exactly proportional.
pub fn proportionality_error(x: &TetraCoeffs, y: &TetraCoeffs) -> f64 {
    let xa = x.to_array();
    let ya = y.to_array();
    let xx: f64 = xa.iter().map(|v| v * v).sum();
    let yy: f64 = ya.iter().map(|v| v * v).sum();
    if xx == 0.0 || yy == 0.0 {
        return if xx == yy { 0.0 } else { f64::INFINITY };
    }
    let xy: f64 = xa.iter().zip(&ya).map(|(p, q)| p * q).sum();
    let lambda = xy / xx;
    let err: f64 = xa.iter().zip(&ya).map(|(p, q)| (q - lambda * p).powi(2)).sum();
    (err / yy).sqrt()
}

/// Half-angle tangent of a dihedral in `(−π, π]`; `π` itself is kept at infinity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HalfTangent {
    Finite(f64),
    Infinite,
}

impl HalfTangent {
    /// Dihedrals within `1e-15` of `±π` map to [`HalfTangent::Infinite`].
    pub fn from_dihedral(phi: f64) -> Self {
        let half = 0.5 * phi;
        if half.cos().abs() <= 1e-15 {
            HalfTangent::Infinite
        } else {
            HalfTangent::Finite(half.tan())
        }
    }

    pub fn to_dihedral(self) -> f64 {
        match self {
            HalfTangent::Finite(t) => 2.0 * t.atan(),
            HalfTangent::Infinite => PI,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            HalfTangent::Finite(t) => Some(t),
            HalfTangent::Infinite => None,
        }
    }
}

impl fmt::Display for HalfTangent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HalfTangent::Finite(t) => write!(f, "{t}"),
            HalfTangent::Infinite => f.write_str("inf"),
        }
    }
}

/// Unevaluated sum `hi + lo` with error-free products and sums.
#[derive(Debug, Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }
}

impl Dd {
    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        Dd { hi: s, lo: (a - (s - bb)) + (b - bb) }
    }

    fn add(self, o: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, o.hi);
        Dd::two_sum(s.hi, s.lo + self.lo + o.lo)
    }

    fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let err = self.hi.mul_add(o.hi, -p);
        Dd::two_sum(p, err + self.hi * o.lo + self.lo * o.hi)
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Coefficients of the equation for the given face angles.
pub fn tetra_coeffs(angles: &FaceAngles) -> TetraCoeffs {
    let FaceAngles { alpha, beta, gamma, delta } = *angles;
    // cos γ − cos x in product form, which keeps small differences accurate
    let diff = |x: f64| 2.0 * (0.5 * (x + gamma)).sin() * (0.5 * (x - gamma)).sin();
    TetraCoeffs {
        a: diff(alpha + beta + delta),
        b: diff(alpha + beta - delta),
        c: -2.0 * beta.sin() * delta.sin(),
        d: diff(alpha - beta + delta),
        e: diff(alpha - beta - delta),
    }
}

/// Roots `u` of the equation for one fixed `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConjugateRoots {
    /// Two real roots, equal when the discriminant vanishes.
    Two(f64, f64),
    /// The `u²` coefficient vanishes: one finite root; the other sits at
    /// infinity (dihedral `π`).
    Linear(f64),
    /// Both roots at infinity.
    AtInfinity,
}

impl ConjugateRoots {
    pub fn finite_roots(&self) -> Vec<f64> {
        match *self {
            ConjugateRoots::Two(u1, u2) => vec![u1, u2],
            ConjugateRoots::Linear(u) => vec![u],
            ConjugateRoots::AtInfinity => Vec::new(),
        }
    }

    pub fn all(&self) -> Vec<HalfTangent> {
        match *self {
            ConjugateRoots::Two(u1, u2) => vec![HalfTangent::Finite(u1), HalfTangent::Finite(u2)],
            ConjugateRoots::Linear(u) => vec![HalfTangent::Finite(u), HalfTangent::Infinite],
            ConjugateRoots::AtInfinity => vec![HalfTangent::Infinite, HalfTangent::Infinite],
        }
    }
}

/// Solves the equation for `u` given `t`.
///
/// Uses `u = (−Ct ± √F(t)) / (At² + D)` with `F(t) = C²t² − (At² + D)(Bt² + E)`,
/// evaluated in the cancellation-free form.
pub fn solve_conjugate(coeffs: &TetraCoeffs, t: HalfTangent) -> Result<ConjugateRoots, LinkageError> {
    // qa u² + 2 qh u + qc = 0
    let (qa, qh, qc, weight) = match t {
        HalfTangent::Finite(t) => {
            let t2 = t * t;
            (coeffs.a * t2 + coeffs.d, coeffs.c * t, coeffs.b * t2 + coeffs.e, 1.0 + t2)
        }
        HalfTangent::Infinite => (coeffs.a, 0.0, coeffs.b, 1.0),
    };
    let scale = coeffs.magnitude().max(f64::MIN_POSITIVE) * weight;
    let eps = 1e-13 * scale;
    let lead_zero = qa.abs() <= eps;
    let mid_zero = qh.abs() <= eps;
    let tail_zero = qc.abs() <= eps;

    if lead_zero {
        return match (mid_zero, tail_zero) {
            (true, true) => Err(LinkageError::DegenerateQuadratic),
            (true, false) => Ok(ConjugateRoots::AtInfinity),
            (false, _) => Ok(ConjugateRoots::Linear(-qc / (2.0 * qh))),
        };
    }

    let disc = qh * qh - qa * qc;
    if disc < -1e-12 * scale * scale {
        return Err(LinkageError::NoRealRoot { discriminant: disc });
    }
    let root = disc.max(0.0).sqrt();
    let q = -(qh + qh.signum() * root);
    if q == 0.0 {
        return Ok(ConjugateRoots::Two(0.0, 0.0));
    }
    Ok(ConjugateRoots::Two(q / qa, qc / q))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkageTag {
    General,
    Rhomboidal,
    Unicursal,
}

/// A pair of coefficients that can vanish together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoeffPair {
    BE,
    AD,
    BD,
    AE,
}

/// Face-angle relation implied by a vanishing coefficient pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaceRelation {
    /// `δ = α`, `γ = β`
    AdjacentEqual,
    /// `δ = π − α`, `γ = π − β`
    AdjacentSupplementary,
    /// `δ = β`, `γ = α`
    OppositeEqual,
    /// `δ = π − β`, `γ = π − α`
    OppositeSupplementary,
}

impl CoeffPair {
    pub fn relation(self) -> FaceRelation {
        match self {
            CoeffPair::BE => FaceRelation::AdjacentEqual,
            CoeffPair::AD => FaceRelation::AdjacentSupplementary,
            CoeffPair::BD => FaceRelation::OppositeEqual,
            CoeffPair::AE => FaceRelation::OppositeSupplementary,
        }
    }

    pub fn tag(self) -> LinkageTag {
        match self {
            CoeffPair::BE | CoeffPair::AD => LinkageTag::Rhomboidal,
            CoeffPair::BD | CoeffPair::AE => LinkageTag::Unicursal,
        }
    }

    fn values(self, c: &TetraCoeffs) -> (f64, f64) {
        match self {
            CoeffPair::BE => (c.b, c.e),
            CoeffPair::AD => (c.a, c.d),
            CoeffPair::BD => (c.b, c.d),
            CoeffPair::AE => (c.a, c.e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageClass {
    pub tag: LinkageTag,
    pub branch: Option<CoeffPair>,
    pub relation: Option<FaceRelation>,
    /// A rhomboidal pair that also vanished when the unicursal one took precedence.
    pub also_rhomboidal: Option<CoeffPair>,
}

/// Classifies the linkage by which coefficient pair vanishes.
///
/// A pair vanishes when both entries are at most `tol` times the largest
/// coefficient magnitude. Unicursal pairs are tested first.
pub fn classify(angles: &FaceAngles, tol: f64) -> LinkageClass {
    classify_coeffs(&tetra_coeffs(angles), tol)
}

pub fn classify_coeffs(coeffs: &TetraCoeffs, tol: f64) -> LinkageClass {
    let limit = tol * coeffs.magnitude();
    let vanishes = |p: CoeffPair| {
        let (x, y) = p.values(coeffs);
        x.abs() <= limit && y.abs() <= limit
    };
    let unicursal = [CoeffPair::BD, CoeffPair::AE].into_iter().find(|&p| vanishes(p));
    let rhomboidal = [CoeffPair::BE, CoeffPair::AD].into_iter().find(|&p| vanishes(p));
    match (unicursal, rhomboidal) {
        (Some(u), r) => LinkageClass {
            tag: LinkageTag::Unicursal,
            branch: Some(u),
            relation: Some(u.relation()),
            also_rhomboidal: r,
        },
        (None, Some(r)) => LinkageClass {
            tag: LinkageTag::Rhomboidal,
            branch: Some(r),
            relation: Some(r.relation()),
            also_rhomboidal: None,
        },
        (None, None) => LinkageClass { tag: LinkageTag::General, branch: None, relation: None, also_rhomboidal: None },
    }
}

/// Form of the decomposed unicursal relation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnicursalBranch {
    /// `t·u = k`
    Product,
    /// `t/u = k`
    Ratio,
}

impl UnicursalBranch {
    /// Exponent `s` in `t · u^s = k`.
    pub fn exponent(self) -> i32 {
        match self {
            UnicursalBranch::Product => 1,
            UnicursalBranch::Ratio => -1,
        }
    }
}

/// The two constants of a decomposed unicursal equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnicursalConstants {
    pub branch: UnicursalBranch,
    pub k_a: f64,
    pub k_b: f64,
}

impl UnicursalConstants {
    pub fn constants(&self) -> [f64; 2] {
        [self.k_a, self.k_b]
    }

    /// The conjugate half-tangent on one component: `u = k/t` or `u = t/k`.
    pub fn conjugate(&self, k: f64, t: f64) -> f64 {
        match self.branch {
            UnicursalBranch::Product => k / t,
            UnicursalBranch::Ratio => t / k,
        }
    }
}

pub fn unicursal_constants(angles: &FaceAngles) -> Result<UnicursalConstants, LinkageError> {
    unicursal_constants_with_tol(angles, DEFAULT_CLASSIFY_TOL)
}

pub fn unicursal_constants_with_tol(angles: &FaceAngles, tol: f64) -> Result<UnicursalConstants, LinkageError> {
    let class = classify(angles, tol);
    let (alpha, beta) = (angles.alpha, angles.beta);
    let half_diff = 0.5 * (alpha - beta);
    let half_sum = 0.5 * (alpha + beta);
    match class.branch {
        Some(CoeffPair::BD) => Ok(UnicursalConstants {
            branch: UnicursalBranch::Product,
            k_a: half_diff.cos() / half_sum.cos(),
            k_b: (-half_diff).sin() / half_sum.sin(),
        }),
        Some(CoeffPair::AE) => Ok(UnicursalConstants {
            branch: UnicursalBranch::Ratio,
            k_a: half_diff.sin() / half_sum.sin(),
            k_b: -half_diff.cos() / half_sum.cos(),
        }),
        _ => Err(LinkageError::NotUnicursal),
    }
}

/// Recovers face angles from coefficients.
///
/// Returns two systems: the one with `sin α > 0` read directly from the
/// coefficients, and its partner `(α, π − β, γ, π − δ)` obtained from the
/// other sign of `sin α`. The partner regenerates the coefficients of the same
/// relation written in `(1/t, 1/u)`, i.e. [`TetraCoeffs::reversed`].
pub fn reconstruct_angles(coeffs: &TetraCoeffs) -> Result<[FaceAngles; 2], LinkageError> {
    let TetraCoeffs { a, b, c, d, e } = *coeffs;
    let scale = coeffs.magnitude();
    if scale == 0.0 || c.abs() <= 1e-12 * scale {
        return Err(LinkageError::SingularC);
    }
    let tol = 1e-12;
    let cos_alpha = -(a - b - d + e) / (2.0 * c);
    if cos_alpha.abs() >= 1.0 - tol {
        return Err(LinkageError::Unreal("|cos alpha| must be below 1"));
    }
    let alpha = cos_alpha.acos();
    let sin_alpha = alpha.sin();

    // tan β = −2C sin α / (A − B + D − E); β ∈ (0, π) so sin β > 0.
    let face_from_tan = |num: f64, den: f64, what: &'static str| -> Result<f64, LinkageError> {
        if num.abs() <= tol * scale {
            return Err(LinkageError::Unreal(what));
        }
        Ok(num.abs().atan2(den * num.signum()))
    };
    let beta = face_from_tan(-2.0 * c * sin_alpha, a - b + d - e, "tan beta is zero")?;
    let delta = face_from_tan(-2.0 * c * sin_alpha, a + b - d - e, "tan delta is zero")?;

    let cos_gamma = cos_alpha * beta.cos() * delta.cos() - (a + b + d + e) / (2.0 * c) * beta.sin() * delta.sin();
    if cos_gamma.abs() >= 1.0 - tol {
        return Err(LinkageError::Unreal("|cos gamma| must be below 1"));
    }
    let gamma = cos_gamma.acos();
    let first = FaceAngles::new(alpha, beta, gamma, delta)?;
    let second = FaceAngles::new(alpha, PI - beta, gamma, PI - delta)?;
    Ok([first, second])
}

/// Linear relation `l cos φ + m cos θ + n = 0` between the dihedral `φ` at
/// `SA` and the dihedral `θ` at the opposite edge `SN`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OppositeDihedralLine {
    pub l: f64,
    pub m: f64,
    pub n: f64,
}

impl OppositeDihedralLine {
    pub fn residual(&self, cos_phi: f64, cos_theta: f64) -> f64 {
        self.l * cos_phi + self.m * cos_theta + self.n
    }

    /// Scaled so that `l² + m² = 1` with the first nonzero of `(l, m)` positive.
    pub fn normalized(&self) -> Self {
        let norm = self.l.hypot(self.m);
        if norm == 0.0 {
            return *self;
        }
        let lead = if self.l.abs() >= self.m.abs() { self.l } else { self.m };
        let s = lead.signum() / norm;
        Self { l: self.l * s, m: self.m * s, n: self.n * s }
    }

    /// Largest coefficient difference after normalising both lines.
    pub fn distance(&self, other: &OppositeDihedralLine) -> f64 {
        let p = self.normalized();
        let q = other.normalized();
        (p.l - q.l).abs().max((p.m - q.m).abs()).max((p.n - q.n).abs())
    }
}

pub fn opposite_dihedral_line(angles: &FaceAngles) -> OppositeDihedralLine {
    let FaceAngles { alpha, beta, gamma, delta } = *angles;
    OppositeDihedralLine {
        l: alpha.sin() * beta.sin(),
        m: -gamma.sin() * delta.sin(),
        n: alpha.cos() * beta.cos() - gamma.cos() * delta.cos(),
    }
}

/// Limit coefficients of a planar four-bar with sides `a` (between the two
/// tracked joints), `b` (at the `t` joint), `c` (opposite `a`) and `d` (at the
/// `u` joint), scaled so that `C′ = −4bd`.
pub fn planar_fourbar_coeffs(a: f64, b: f64, c: f64, d: f64) -> Result<TetraCoeffs, LinkageError> {
    for (name, value) in [("a", a), ("b", b), ("c", c), ("d", d)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(LinkageError::NonPositiveSide { name, value });
        }
    }
    let c2 = c * c;
    Ok(TetraCoeffs {
        a: (a + b + d).powi(2) - c2,
        b: (a + b - d).powi(2) - c2,
        c: -4.0 * b * d,
        d: (a - b + d).powi(2) - c2,
        e: (a - b - d).powi(2) - c2,
    })
}
