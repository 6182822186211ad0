//! Conicity matrix, conical certificates, the rotation law of the limit
//! eigenbasis, intersection location and structural-stability probing.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{spectral_norm, ControlPoint, OperatorTriple};
use crate::nonmixing::{NonMixingError, NonMixingField};
use crate::spectral::{eigensystem, Region, SpectralError};
use crate::tolerances::Tolerances;

pub const INTERSECTION_SCHEMA: &str = "conic-climb/intersection/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConicalError {
    #[error("input vectors are not orthonormal (defect {0:e})")]
    NotOrthonormal(f64),
    #[error("levels {lower} and {upper} are not degenerate at {point}: gap {gap:e} >= tolerance {tol:e}", upper = .lower + 1)]
    NotDegenerate { point: ControlPoint, lower: usize, gap: f64, tol: f64 },
    #[error("pair ({lower}, {upper}) at {point} is not isolated from the neighbouring level (gap {gap:e})", upper = .lower + 1)]
    NotIsolated { point: ControlPoint, lower: usize, gap: f64 },
    #[error("intersection is not conical: |det M| = {det:e} <= {tol:e}")]
    NotConical { det: f64, tol: f64 },
    #[error("level pair ({lower}, {upper}) does not exist for dimension {dim}", upper = .lower + 1)]
    InvalidPair { lower: usize, dim: usize },
    #[error("locator left the region at {0}")]
    LeftRegion(ControlPoint),
    #[error("no descent at {point}: descent rate {rate:e}")]
    NoDescent { point: ControlPoint, rate: f64 },
    #[error("locator exceeded {0} steps")]
    MaxSteps(usize),
    #[error("gap polish did not converge from {0}")]
    PolishFailed(ControlPoint),
    #[error("flow failure: {0}")]
    Flow(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Rows indexed by `(H1, H2)`, columns by (cross term, half-difference term).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicityMatrix {
    pub m: [[f64; 2]; 2],
}

impl ConicityMatrix {
    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    /// `(cos a, sin a) M`.
    pub fn row(&self, a: f64) -> [f64; 2] {
        let (s, c) = a.sin_cos();
        [c * self.m[0][0] + s * self.m[1][0], c * self.m[0][1] + s * self.m[1][1]]
    }

    /// `M (x0, x1)^T`.
    pub fn apply(&self, x: [f64; 2]) -> [f64; 2] {
        [self.m[0][0] * x[0] + self.m[0][1] * x[1], self.m[1][0] * x[0] + self.m[1][1] * x[1]]
    }

    fn negate_cross(&self) -> Self {
        Self { m: [[-self.m[0][0], self.m[0][1]], [-self.m[1][0], self.m[1][1]]] }
    }
}

fn bilinear(a: &DVector<f64>, h: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    a.dot(&(h * b))
}

/// Conicity matrix of the pair without the orthonormality check.
pub(crate) fn conicity_unchecked(model: &OperatorTriple, psi1: &DVector<f64>, psi2: &DVector<f64>) -> ConicityMatrix {
    let row = |h: &DMatrix<f64>| {
        let h2 = h * psi2;
        let cross = psi1.dot(&h2);
        let half = 0.5 * (psi2.dot(&h2) - bilinear(psi1, h, psi1));
        [cross, half]
    };
    ConicityMatrix { m: [row(model.h1()), row(model.h2())] }
}

pub fn conicity_matrix(model: &OperatorTriple, psi1: &DVector<f64>, psi2: &DVector<f64>) -> Result<ConicityMatrix, ConicalError> {
    let defect = (psi1.norm() - 1.0).abs().max((psi2.norm() - 1.0).abs()).max(psi1.dot(psi2).abs());
    if !(defect <= 1e-10) || psi1.len() != model.dim() || psi2.len() != model.dim() {
        return Err(ConicalError::NotOrthonormal(defect));
    }
    Ok(conicity_unchecked(model, psi1, psi2))
}

/// Which of the two monotone branches of the rotation angle is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Range `[0, pi)`.
    Increasing,
    /// Range `(-pi, 0]`.
    Decreasing,
}

/// A certified conical crossing between levels `lower` and `lower + 1`.
///
/// `limit_basis` holds the limits of the two eigenvectors along the ray of
/// direction `(1, 0)`; the sign of the second vector fixes the branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "IntersectionFile", try_from = "IntersectionFile")]
pub struct Intersection {
    pub point: ControlPoint,
    pub lower: usize,
    pub gap: f64,
    pub cone_constant: f64,
    pub limit_basis: [DVector<f64>; 2],
    pub conicity: ConicityMatrix,
    pub branch: Branch,
}

#[derive(Serialize, Deserialize)]
struct IntersectionFile {
    schema: String,
    point: [f64; 2],
    band: [usize; 2],
    gap: f64,
    #[serde(rename = "det_M")]
    det_m: f64,
    cone_constant: f64,
    limit_basis: [Vec<f64>; 2],
    conicity: [[f64; 2]; 2],
    branch: Branch,
}

impl From<Intersection> for IntersectionFile {
    fn from(i: Intersection) -> Self {
        Self {
            schema: INTERSECTION_SCHEMA.into(),
            point: i.point.as_array(),
            band: [i.lower, i.lower + 1],
            gap: i.gap,
            det_m: i.conicity.det(),
            cone_constant: i.cone_constant,
            limit_basis: [i.limit_basis[0].as_slice().to_vec(), i.limit_basis[1].as_slice().to_vec()],
            conicity: i.conicity.m,
            branch: i.branch,
        }
    }
}

impl TryFrom<IntersectionFile> for Intersection {
    type Error = String;
    fn try_from(f: IntersectionFile) -> Result<Self, String> {
        if f.schema != INTERSECTION_SCHEMA {
            return Err(format!("unsupported schema tag {:?}", f.schema));
        }
        if f.band[1] != f.band[0] + 1 || f.limit_basis[0].len() != f.limit_basis[1].len() {
            return Err("malformed intersection certificate".into());
        }
        Ok(Self {
            point: f.point.into(),
            lower: f.band[0],
            gap: f.gap,
            cone_constant: f.cone_constant,
            limit_basis: [DVector::from_vec(f.limit_basis[0].clone()), DVector::from_vec(f.limit_basis[1].clone())],
            conicity: ConicityMatrix { m: f.conicity },
            branch: f.branch,
        })
    }
}

/// Maps any angle into `[0, 2pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Shortest signed angular distance `a - b`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    if d > PI {
        d - TAU
    } else {
        d
    }
}

/// For an `M` with positive determinant, the solution `x = 2 Xi in [0, pi)`
/// of `(cos a, sin a) M (cos x, sin x)^T = 0` for `a in [0, pi)`.
fn half_turn(m: &ConicityMatrix, a: f64) -> f64 {
    let r = m.row(a);
    let x = r[0].atan2(-r[1]).rem_euclid(PI);
    // x(a) is increasing with x(0) = 0 and x(a_mid) = pi/2; resolve the
    // mod-pi ambiguity next to both ends of the interval.
    let a_mid = m.m[0][1].atan2(-m.m[1][1]).rem_euclid(PI);
    if a < a_mid && x > FRAC_PI_2 {
        (x - PI).max(0.0)
    } else if a > a_mid && x < FRAC_PI_2 {
        x + PI
    } else {
        x
    }
    .min(PI)
}

/// Inverse of [`half_turn`]: the `a in [0, pi)` with `half_turn(a) = x`.
fn half_turn_inverse(m: &ConicityMatrix, x: f64) -> f64 {
    let v = m.apply([x.cos(), x.sin()]);
    let a = v[0].atan2(-v[1]).rem_euclid(PI);
    let a_mid = m.m[0][1].atan2(-m.m[1][1]).rem_euclid(PI);
    if x < FRAC_PI_2 && a > a_mid {
        (a - PI).max(0.0)
    } else if x > FRAC_PI_2 && a < a_mid {
        a + PI
    } else {
        a
    }
}

impl Intersection {
    /// Conicity matrix with positive determinant together with the sign of the branch.
    fn increasing_form(&self) -> (ConicityMatrix, f64) {
        if self.conicity.det() >= 0.0 {
            (self.conicity, 1.0)
        } else {
            (self.conicity.negate_cross(), -1.0)
        }
    }

    /// Rotation angle of the limit eigenbasis for approach direction `alpha`.
    ///
    /// Range `[0, pi)` on the increasing branch, `(-pi, 0]` on the decreasing one;
    /// `xi(0) = 0` and `xi(alpha + pi) = xi(alpha) +- pi/2`.
    pub fn xi(&self, alpha: f64) -> f64 {
        let (m, sign) = self.increasing_form();
        let a = wrap_angle(alpha);
        let (half, a) = if a >= PI { (1.0, a - PI) } else { (0.0, a) };
        sign * (0.5 * half_turn(&m, a) + half * FRAC_PI_2)
    }

    /// The angle in `[0, 2pi)` whose rotation angle is `y` modulo `pi`.
    pub fn xi_inverse(&self, y: f64) -> f64 {
        let (m, sign) = self.increasing_form();
        let y = (sign * y).rem_euclid(PI);
        let (half, y) = if y >= FRAC_PI_2 { (1.0, y - FRAC_PI_2) } else { (0.0, y) };
        wrap_angle(half_turn_inverse(&m, 2.0 * y) + half * PI)
    }

    /// Residual of `(cos a, sin a) M (cos 2 xi, sin 2 xi)^T = 0`.
    pub fn xi_residual(&self, alpha: f64) -> f64 {
        let r = self.conicity.row(alpha);
        let x = 2.0 * self.xi(alpha);
        (r[0] * x.cos() + r[1] * x.sin()).abs()
    }

    /// Limits of `(phi_j, phi_{j+1})` along the ray from the intersection in direction `alpha`.
    pub fn limit_basis_at(&self, alpha: f64) -> [DVector<f64>; 2] {
        let (s, c) = self.xi(alpha).sin_cos();
        let [p, q] = &self.limit_basis;
        [p * c + q * s, q * c - p * s]
    }

    /// Same crossing described on the other branch.
    pub fn with_branch(&self, branch: Branch) -> Self {
        let mut out = self.clone();
        if branch != self.branch {
            out.limit_basis[1] = -&out.limit_basis[1];
            out.conicity = out.conicity.negate_cross();
            out.branch = branch;
        }
        out
    }
}

/// `|H(u)| + |H1| + |H2|`, the scale against which gaps are called degenerate.
pub fn degeneracy_tol(model: &OperatorTriple, u: ControlPoint, tol: &Tolerances) -> f64 {
    tol.degeneracy_rel * (spectral_norm(&model.assemble(u)) + model.lipschitz())
}

pub fn conical_tol(model: &OperatorTriple, tol: &Tolerances) -> f64 {
    tol.conical_rel * model.lipschitz().powi(2)
}

const CONE_RAYS: usize = 64;

/// Certifies that `candidate` is a conical crossing of levels `(lower, lower+1)`.
pub fn is_conical(model: &OperatorTriple, candidate: ControlPoint, lower: usize, tol: &Tolerances) -> Result<Intersection, ConicalError> {
    if lower + 1 >= model.dim() {
        return Err(ConicalError::InvalidPair { lower, dim: model.dim() });
    }
    let es = eigensystem(model, candidate)?;
    let gap = es.gap(lower);
    let dtol = degeneracy_tol(model, candidate, tol);
    if !(gap < dtol) {
        return Err(ConicalError::NotDegenerate { point: candidate, lower, gap, tol: dtol });
    }
    let mut side = f64::INFINITY;
    if lower > 0 {
        side = side.min(es.values[lower] - es.values[lower - 1]);
    }
    if lower + 2 < model.dim() {
        side = side.min(es.values[lower + 2] - es.values[lower + 1]);
    }
    if !(side > 1e3 * dtol) {
        return Err(ConicalError::NotIsolated { point: candidate, lower, gap: side });
    }
    let psi1 = es.vector(lower);
    let psi2 = es.vector(lower + 1);
    let raw = conicity_unchecked(model, &psi1, &psi2);
    let ctol = conical_tol(model, tol);
    if !(raw.det().abs() > ctol) {
        return Err(ConicalError::NotConical { det: raw.det().abs(), tol: ctol });
    }

    // Limit along the ray (1, 0): diagonalize H1 restricted to the eigenspace.
    let h1p2 = model.h1() * &psi2;
    let a11 = bilinear(&psi1, model.h1(), &psi1);
    let a12 = psi1.dot(&h1p2);
    let a22 = psi2.dot(&h1p2);
    let eig = Matrix2::new(a11, a12, a12, a22).symmetric_eigen();
    let (lo, hi) = if eig.eigenvalues[0] <= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let cl: Vector2<f64> = eig.eigenvectors.column(lo).into_owned();
    let ch: Vector2<f64> = eig.eigenvectors.column(hi).into_owned();
    let phi0 = &psi1 * cl[0] + &psi2 * cl[1];
    let mut phi1 = &psi1 * ch[0] + &psi2 * ch[1];
    let mut conicity = conicity_unchecked(model, &phi0, &phi1);
    if conicity.det() < 0.0 {
        phi1 = -phi1;
        conicity = conicity_unchecked(model, &phi0, &phi1);
    }

    let r = cone_probe_radius(model, candidate);
    let mut cone = f64::INFINITY;
    for k in 0..CONE_RAYS {
        let u = candidate + ControlPoint::polar(r, TAU * k as f64 / CONE_RAYS as f64);
        cone = cone.min(eigensystem(model, u)?.gap(lower) / r);
    }

    Ok(Intersection {
        point: candidate,
        lower,
        gap,
        cone_constant: cone,
        limit_basis: [phi0, phi1],
        conicity,
        branch: Branch::Increasing,
    })
}

/// Ray radius used to estimate the cone constant.
pub fn cone_probe_radius(model: &OperatorTriple, u: ControlPoint) -> f64 {
    let scale = spectral_norm(&model.assemble(u)) + model.lipschitz();
    1e-4 * scale / model.lipschitz()
}

/// Newton iteration on the two traceless components of `H` restricted to the
/// pair, starting close to a crossing.
pub fn polish(model: &OperatorTriple, lower: usize, start: ControlPoint, region: &Region, tol: &Tolerances) -> Result<ControlPoint, ConicalError> {
    let mut u = start;
    for _ in 0..60 {
        let es = eigensystem(model, u)?;
        let gap = es.gap(lower);
        if gap < 1e-3 * degeneracy_tol(model, u, tol) {
            return Ok(u);
        }
        let a = es.vector(lower);
        let b = es.vector(lower + 1);
        let m = conicity_unchecked(model, &a, &b);
        // d/du of (half-difference, cross) = [[m01, m11], [m00, m10]].
        let jac = Matrix2::new(m.m[0][1], m.m[1][1], m.m[0][0], m.m[1][0]);
        let step = jac
            .try_inverse()
            .map(|inv| inv * Vector2::new(-0.5 * gap, 0.0))
            .ok_or(ConicalError::PolishFailed(u))?;
        let next = u + ControlPoint::new(step[0], step[1]);
        if !next.is_finite() {
            return Err(ConicalError::PolishFailed(u));
        }
        if !region.contains(next) {
            return Err(ConicalError::LeftRegion(next));
        }
        let moved = next.dist(u);
        u = next;
        if moved <= 1e-15 * (1.0 + u.norm()) {
            return Ok(u);
        }
    }
    let es = eigensystem(model, u)?;
    if es.gap(lower) < degeneracy_tol(model, u, tol) {
        Ok(u)
    } else {
        Err(ConicalError::PolishFailed(u))
    }
}

fn flow_error(e: NonMixingError) -> ConicalError {
    match e {
        NonMixingError::LeftRegion(p) => ConicalError::LeftRegion(p),
        NonMixingError::NoDescent { point, rate } => ConicalError::NoDescent { point, rate },
        NonMixingError::MaxSteps(n) => ConicalError::MaxSteps(n),
        NonMixingError::Certificate(c) => c,
        NonMixingError::Spectral(s) => ConicalError::Spectral(s),
        other => ConicalError::Flow(other.to_string()),
    }
}

/// Follows the non-mixing flow from `seed` until the pair gap is small, then
/// polishes the crossing and certifies it.
pub fn locate_intersection(
    model: &OperatorTriple,
    lower: usize,
    seed: ControlPoint,
    region: Region,
    tol: &Tolerances,
) -> Result<Intersection, ConicalError> {
    if lower + 1 >= model.dim() {
        return Err(ConicalError::InvalidPair { lower, dim: model.dim() });
    }
    let field = NonMixingField::new(model, lower, region, *tol);
    let close = field.switch_gap();
    let es = eigensystem(model, seed)?;
    let near = if es.gap(lower) <= close {
        seed
    } else {
        field.descend(seed, close).map_err(flow_error)?
    };
    let point = polish(model, lower, near, &region, tol)?;
    is_conical(model, point, lower, tol)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeTrial {
    pub trial: usize,
    pub point: Option<[f64; 2]>,
    pub displacement: Option<f64>,
    pub det_m: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub delta: f64,
    pub trials: Vec<ProbeTrial>,
    pub max_displacement: f64,
    pub min_abs_det: f64,
    pub all_certified: bool,
}

/// Random symmetric matrix with spectral norm exactly `delta`.
fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, delta: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let s: DMatrix<f64> = (&a + a.transpose()) * 0.5;
    let norm = spectral_norm(&s);
    if norm == 0.0 {
        s
    } else {
        s * (delta / norm)
    }
}

/// Perturbs the whole triple `trials` times and relocates the crossing.
pub fn stability_probe(
    model: &OperatorTriple,
    intersection: &Intersection,
    delta: f64,
    trials: usize,
    seed: u64,
    search_radius: f64,
    tol: &Tolerances,
) -> StabilityReport {
    let n = model.dim();
    let results: Vec<ProbeTrial> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(trial as u64));
            let h0 = model.h0() + random_symmetric(&mut rng, n, delta);
            let h1 = model.h1() + random_symmetric(&mut rng, n, delta);
            let h2 = model.h2() + random_symmetric(&mut rng, n, delta);
            let outcome = OperatorTriple::new(h0, h1, h2)
                .map_err(|e| e.to_string())
                .and_then(|perturbed| {
                    let region = Region::disc(intersection.point, search_radius);
                    locate_intersection(&perturbed, intersection.lower, intersection.point, region, tol).map_err(|e| e.to_string())
                });
            match outcome {
                Ok(found) => ProbeTrial {
                    trial,
                    point: Some(found.point.as_array()),
                    displacement: Some(found.point.dist(intersection.point)),
                    det_m: Some(found.conicity.det().abs()),
                    error: None,
                },
                Err(e) => ProbeTrial { trial, point: None, displacement: None, det_m: None, error: Some(e) },
            }
        })
        .collect();
    let max_displacement = results.iter().filter_map(|t| t.displacement).fold(0.0, f64::max);
    let min_abs_det = results.iter().filter_map(|t| t.det_m).fold(f64::INFINITY, f64::min);
    let all_certified = results.iter().all(|t| t.error.is_none());
    StabilityReport { delta, trials: results, max_displacement, min_abs_det, all_certified }
}
