//! Full, adiabatic and effective two-level propagators along a planned
//! path, and overlap-based error metrics.

use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlPoint, OperatorTriple};
use crate::nonmixing::SegmentKind;
use crate::planner::ControlPath;
use crate::spectral::{align_signs, decompose, eigensystem, EigenSystem, SpectralError};
use crate::spline::PlanarSpline;
use crate::tolerances::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagateError {
    #[error("step budget exceeded: {needed} steps needed, limit {limit}")]
    StepBudgetExceeded { needed: u64, limit: u64 },
    #[error("norm drifted by {0:e}")]
    NormDrift(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("coupling {b:e} exceeds {bound:e} on non-mixing segment {segment} at tau = {tau}")]
    CouplingViolation { segment: usize, tau: f64, b: f64, bound: f64 },
    #[error("eigenvector lost on segment {segment} at tau = {tau} (overlap {overlap:.3})")]
    TrackingLost { segment: usize, tau: f64, overlap: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Complex state stored as real and imaginary parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumState {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl QuantumState {
    pub fn real(v: &DVector<f64>) -> Self {
        Self { re: v.iter().copied().collect(), im: vec![0.0; v.len()] }
    }

    pub fn dim(&self) -> usize {
        self.re.len()
    }

    pub fn norm(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `|<v, psi>|` for a real vector `v`.
    pub fn overlap(&self, v: &DVector<f64>) -> f64 {
        let a: f64 = v.iter().zip(&self.re).map(|(x, y)| x * y).sum();
        let b: f64 = v.iter().zip(&self.im).map(|(x, y)| x * y).sum();
        a.hypot(b)
    }

    fn parts(&self) -> (DVector<f64>, DVector<f64>) {
        (DVector::from_vec(self.re.clone()), DVector::from_vec(self.im.clone()))
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.re.iter().zip(&other.re).chain(self.im.iter().zip(&other.im)).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// The eigenvector of level `level` at `u`.
pub fn eigenstate(model: &OperatorTriple, u: ControlPoint, level: usize) -> Result<QuantumState, PropagateError> {
    let es = eigensystem(model, u)?;
    if level >= es.dim() {
        return Err(PropagateError::InvalidInput(format!("level {level} >= dimension {}", es.dim())));
    }
    Ok(QuantumState::real(&es.vector(level)))
}

/// Overlap moduli with levels `lo..=hi` at a point and the mass outside them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlaps {
    pub moduli: Vec<f64>,
    pub leak: f64,
}

pub fn overlaps(model: &OperatorTriple, u: ControlPoint, psi: &QuantumState, lo: usize, hi: usize, tol: &Tolerances) -> Result<Overlaps, PropagateError> {
    let es = eigensystem(model, u)?;
    crate::spectral::check_simple(model, &es, lo, hi, tol, 0)?;
    let moduli: Vec<f64> = (lo..=hi).map(|l| psi.overlap(&es.vector(l))).collect();
    let inside: f64 = moduli.iter().map(|m| m * m).sum();
    Ok(Overlaps { moduli, leak: (psi.norm().powi(2) - inside).max(0.0) })
}

/// Distance of the overlap moduli from the target plus the leaked mass.
pub fn spread_error(moduli: &[f64], leak: f64, target: &[f64]) -> f64 {
    let n = moduli.len().max(target.len());
    let d: f64 = (0..n)
        .map(|l| moduli.get(l).copied().unwrap_or(0.0) - target.get(l).copied().unwrap_or(0.0))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    d + leak
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub method: String,
    pub epsilon: f64,
    pub overlaps: Vec<f64>,
    pub leak: f64,
    pub target: Vec<f64>,
    pub error: f64,
    pub steps: u64,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_state: Option<QuantumState>,
}

/// Per-segment data for stepping.
struct SegmentPlan {
    index: usize,
    spline: Option<PlanarSpline>,
    s0: f64,
    span: f64,
    tau0: f64,
    dtau: f64,
    steps: u64,
}

impl SegmentPlan {
    fn point(&self, w: f64) -> ControlPoint {
        match &self.spline {
            Some(sp) => sp.point(self.s0 + w * self.span),
            None => ControlPoint::ORIGIN,
        }
    }

    /// `|d gamma / d tau|` at fraction `w`.
    fn speed(&self, w: f64) -> f64 {
        match &self.spline {
            Some(sp) if self.dtau > 0.0 => sp.jet(self.s0 + w * self.span).velocity.norm() * self.span / self.dtau,
            _ => 0.0,
        }
    }
}

fn h_bound(model: &OperatorTriple, path: &ControlPath) -> f64 {
    let n0 = crate::model::spectral_norm(model.h0());
    let [n1, n2] = model.control_norms();
    path.segments
        .iter()
        .flat_map(|s| s.points())
        .map(|u| n0 + u.u1.abs() * n1 + u.u2.abs() * n2)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
}

fn step_plan(model: &OperatorTriple, path: &ControlPath, epsilon: f64, tol: &Tolerances) -> Result<Vec<SegmentPlan>, PropagateError> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(PropagateError::InvalidInput(format!("epsilon must be positive, got {epsilon}")));
    }
    let max_dtau = tol.c_step * epsilon / h_bound(model, path);
    let mut plans = Vec::new();
    let mut total: u64 = 0;
    for (index, seg) in path.segments.iter().enumerate() {
        let tau0 = path.knots[index];
        let dtau = path.knots[index + 1] - tau0;
        let (spline, s0, span) = if seg.len() > 1 { (Some(seg.spline()), seg.params[0], seg.param_span()) } else { (None, 0.0, 0.0) };
        let steps = if dtau > 0.0 && spline.is_some() { (dtau / max_dtau).ceil().max(1.0) as u64 } else { 0 };
        total = total.saturating_add(steps);
        plans.push(SegmentPlan { index, spline, s0, span, tau0, dtau, steps });
    }
    if total > tol.max_steps {
        return Err(PropagateError::StepBudgetExceeded { needed: total, limit: tol.max_steps });
    }
    Ok(plans)
}

/// Applies `exp(-i delta H)` for real symmetric `H` to `(x, y) = psi`.
fn apply_real_exponential(h: &DMatrix<f64>, delta: f64, x: &mut DVector<f64>, y: &mut DVector<f64>) -> Result<(), PropagateError> {
    let (vals, vecs) = decompose(h).ok_or_else(|| PropagateError::InvalidInput("non-finite Hamiltonian".into()))?;
    let w = vecs.tr_mul(x);
    let z = vecs.tr_mul(y);
    let mut a = w.clone();
    let mut b = z.clone();
    for k in 0..vals.len() {
        let (s, c) = (delta * vals[k]).sin_cos();
        a[k] = w[k] * c + z[k] * s;
        b[k] = z[k] * c - w[k] * s;
    }
    *x = &vecs * a;
    *y = &vecs * b;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    method: &str,
    model: &OperatorTriple,
    path: &ControlPath,
    epsilon: f64,
    psi: QuantumState,
    steps: u64,
    started: Instant,
    tol: &Tolerances,
) -> Result<SimulationResult, PropagateError> {
    let drift = (psi.norm() - 1.0).abs();
    if drift > tol.norm_tol {
        return Err(PropagateError::NormDrift(drift));
    }
    let ov = overlaps(model, path.end(), &psi, path.band.lo(), path.band.hi(), tol)?;
    Ok(SimulationResult {
        method: method.into(),
        epsilon,
        error: spread_error(&ov.moduli, ov.leak, &path.target),
        overlaps: ov.moduli,
        leak: ov.leak,
        target: path.target.clone(),
        steps,
        seconds: started.elapsed().as_secs_f64(),
        final_state: Some(psi),
    })
}

/// Solves `i eps dpsi/dtau = H(gamma(tau)) psi` on `[0, 1]` with the
/// exponential midpoint rule.
pub fn propagate_full(model: &OperatorTriple, path: &ControlPath, epsilon: f64, psi0: &QuantumState, tol: &Tolerances) -> Result<SimulationResult, PropagateError> {
    let started = Instant::now();
    check_state(model, psi0, tol)?;
    let plans = step_plan(model, path, epsilon, tol)?;
    let (mut x, mut y) = psi0.parts();
    let mut steps = 0;
    for p in &plans {
        let h = p.dtau / p.steps.max(1) as f64;
        for n in 0..p.steps {
            let w = (n as f64 + 0.5) / p.steps as f64;
            apply_real_exponential(&model.assemble(p.point(w)), h / epsilon, &mut x, &mut y)?;
            steps += 1;
        }
    }
    let psi = QuantumState { re: x.iter().copied().collect(), im: y.iter().copied().collect() };
    finish("full", model, path, epsilon, psi, steps, started, tol)
}

fn check_state(model: &OperatorTriple, psi: &QuantumState, tol: &Tolerances) -> Result<(), PropagateError> {
    if psi.dim() != model.dim() || psi.im.len() != psi.re.len() {
        return Err(PropagateError::InvalidInput(format!("state of dimension {} for a model of dimension {}", psi.dim(), model.dim())));
    }
    if (psi.norm() - 1.0).abs() > tol.norm_tol {
        return Err(PropagateError::InvalidInput(format!("initial state has norm {}", psi.norm())));
    }
    Ok(())
}

/// Block partition of all levels: band levels separately except the pair
/// meeting at the segment's crossing, everything outside the band lumped.
fn blocks(path: &ControlPath, segment: usize, dim: usize) -> Vec<(usize, usize)> {
    let (lo, hi) = (path.band.lo(), path.band.hi());
    let merged = path.segments[segment]
        .vertex
        .filter(|_| matches!(path.segments[segment].kind, SegmentKind::Incoming | SegmentKind::Outgoing))
        .map(|v| path.intersections[v.intersection].lower);
    let mut out = Vec::new();
    if lo > 0 {
        out.push((0, lo - 1));
    }
    let mut l = lo;
    while l <= hi {
        if Some(l) == merged && l < hi {
            out.push((l, l + 1));
            l += 2;
        } else {
            out.push((l, l));
            l += 1;
        }
    }
    if hi + 1 < dim {
        out.push((hi + 1, dim - 1));
    }
    out
}

fn block_projectors(es: &EigenSystem, parts: &[(usize, usize)]) -> Vec<DMatrix<f64>> {
    parts.iter().map(|&(a, b)| crate::spectral::projector(es, a, b)).collect()
}

/// Occupations of the partition blocks, for diagnostics.
pub fn block_occupations(model: &OperatorTriple, u: ControlPoint, psi: &QuantumState, parts: &[(usize, usize)]) -> Result<Vec<f64>, PropagateError> {
    let es = eigensystem(model, u)?;
    Ok(parts.iter().map(|&(a, b)| (a..=b).map(|l| psi.overlap(&es.vector(l)).powi(2)).sum()).collect())
}

/// Partition used by [`propagate_adiabatic`] on a given segment.
pub fn segment_partition(path: &ControlPath, segment: usize, dim: usize) -> Vec<(usize, usize)> {
    blocks(path, segment, dim)
}

/// Orthogonal map taking every block range at one point onto the block range
/// at the next: the polar factor of `sum_a P_a(next) P_a(prev)`.
fn block_transport(prev: &[DMatrix<f64>], next: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = prev[0].nrows();
    let w = prev.iter().zip(next).fold(DMatrix::zeros(n, n), |acc, (p0, p1)| acc + p1 * p0);
    let svd = w.svd(true, true);
    svd.u.expect("left singular vectors") * svd.v_t.expect("right singular vectors")
}

/// `exp(-i delta H)` for `H = V diag(values) V^T`.
fn apply_spectral_exponential(es: &EigenSystem, delta: f64, x: &mut DVector<f64>, y: &mut DVector<f64>) {
    let w = es.vectors.tr_mul(x);
    let z = es.vectors.tr_mul(y);
    let mut a = w.clone();
    let mut b = z.clone();
    for k in 0..es.values.len() {
        let (s, c) = (delta * es.values[k]).sin_cos();
        a[k] = w[k] * c + z[k] * s;
        b[k] = z[k] * c - w[k] * s;
    }
    *x = &es.vectors * a;
    *y = &es.vectors * b;
}

/// Solves `i eps dpsi/dtau = (H - i eps sum P_a P_a') psi`.
///
/// Each step is split into half steps of the frozen Hamiltonian at its ends
/// around an exact transport of the block ranges, so the occupation of every
/// partition block is conserved up to rounding.
pub fn propagate_adiabatic(model: &OperatorTriple, path: &ControlPath, epsilon: f64, psi0: &QuantumState, tol: &Tolerances) -> Result<SimulationResult, PropagateError> {
    let started = Instant::now();
    check_state(model, psi0, tol)?;
    let plans = step_plan(model, path, epsilon, tol)?;
    let dim = model.dim();
    let (mut x, mut y) = psi0.parts();
    let mut steps = 0;
    for p in &plans {
        if p.steps == 0 {
            continue;
        }
        let parts = blocks(path, p.index, dim);
        let half = 0.5 * p.dtau / p.steps as f64 / epsilon;
        let mut es = eigensystem(model, p.point(0.0))?;
        let mut proj = block_projectors(&es, &parts);
        for n in 0..p.steps {
            let es_next = eigensystem(model, p.point((n + 1) as f64 / p.steps as f64))?;
            let proj_next = block_projectors(&es_next, &parts);
            apply_spectral_exponential(&es, half, &mut x, &mut y);
            let t = block_transport(&proj, &proj_next);
            x = &t * &x;
            y = &t * &y;
            apply_spectral_exponential(&es_next, half, &mut x, &mut y);
            es = es_next;
            proj = proj_next;
            steps += 1;
        }
    }
    let psi = QuantumState { re: x.iter().copied().collect(), im: y.iter().copied().collect() };
    finish("adiabatic", model, path, epsilon, psi, steps, started, tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectiveMode {
    /// Keeps the coupling `b` off non-mixing segments.
    Coupled,
    /// Drops `b` everywhere: pure phases plus the vertex rotations.
    Adiabatic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveResult {
    pub epsilon: f64,
    pub amplitudes: [Complex<f64>; 2],
    pub moduli: [f64; 2],
    pub steps: u64,
    /// Largest `|b| / bound` seen on non-mixing segments.
    pub worst_coupling_ratio: f64,
}

/// `exp(-i delta [[l0, i e b], [-i e b, l1]])` applied to `c`.
fn effective_step(l0: f64, l1: f64, eb: f64, delta: f64, c: [Complex<f64>; 2]) -> [Complex<f64>; 2] {
    let m = 0.5 * (l0 + l1);
    let d = 0.5 * (l0 - l1);
    let q = -eb;
    let om = d.hypot(q);
    let (s, co) = (delta * om).sin_cos();
    let sinc = if om > 0.0 { s / om } else { delta };
    let i = Complex::new(0.0, 1.0);
    // H - m I = d sz + q sy with sy = [[0, -i], [i, 0]].
    let u00 = Complex::new(co, 0.0) - i * sinc * d;
    let u11 = Complex::new(co, 0.0) + i * sinc * d;
    let u01 = -i * sinc * Complex::new(0.0, -q);
    let u10 = -i * sinc * Complex::new(0.0, q);
    let phase = Complex::from_polar(1.0, -delta * m);
    [phase * (u00 * c[0] + u01 * c[1]), phase * (u10 * c[0] + u11 * c[1])]
}

/// Integrates the reduced two-level system of the crossing pair `(lower, lower + 1)`.
///
/// Frames are sign-tracked along each segment; at a vertex the amplitudes are
/// carried over through the overlaps of the limit bases for the incoming and
/// outgoing directions.
pub fn propagate_effective(
    model: &OperatorTriple,
    path: &ControlPath,
    lower: usize,
    epsilon: f64,
    c0: [Complex<f64>; 2],
    mode: EffectiveMode,
    tol: &Tolerances,
) -> Result<EffectiveResult, PropagateError> {
    if lower + 1 >= model.dim() {
        return Err(PropagateError::InvalidInput(format!("pair ({lower}, {}) outside dimension {}", lower + 1, model.dim())));
    }
    let plans = step_plan(model, path, epsilon, tol)?;
    let lip = model.lipschitz();
    let mut c = c0;
    let mut steps = 0;
    let mut worst = 0.0f64;
    // Frame (columns lower, lower+1) at the end of the previous segment.
    let mut carried: Option<DMatrix<f64>> = None;
    for p in &plans {
        if p.steps == 0 {
            continue;
        }
        let seg = &path.segments[p.index];
        let vertex = seg.vertex.filter(|v| path.intersections[v.intersection].lower == lower);
        let frame_at = |w: f64| -> Result<DMatrix<f64>, PropagateError> {
            if let Some(v) = vertex {
                let inter = &path.intersections[v.intersection];
                let at_vertex = match seg.kind {
                    SegmentKind::Incoming => w >= 1.0,
                    SegmentKind::Outgoing => w <= 0.0,
                    SegmentKind::Connector => false,
                };
                if at_vertex {
                    return Ok(DMatrix::from_columns(&inter.limit_basis_at(v.angle)));
                }
            }
            let es = eigensystem(model, p.point(w))?;
            Ok(DMatrix::from_columns(&[es.vector(lower), es.vector(lower + 1)]))
        };
        let mut prev = frame_at(0.0)?;
        if let Some(old) = &carried {
            let is_vertex_start = vertex.is_some() && seg.kind == SegmentKind::Outgoing;
            if is_vertex_start {
                // Rotation between the limit bases, no sign alignment.
                let o = prev.tr_mul(old);
                c = [
                    Complex::new(o[(0, 0)], 0.0) * c[0] + Complex::new(o[(0, 1)], 0.0) * c[1],
                    Complex::new(o[(1, 0)], 0.0) * c[0] + Complex::new(o[(1, 1)], 0.0) * c[1],
                ];
            } else {
                let signs = align_signs(old, &mut prev, 0, 1, tol.overlap_min)
                    .map_err(|(_, overlap)| PropagateError::TrackingLost { segment: p.index, tau: p.tau0, overlap })?;
                let _ = signs;
            }
        }
        let h = p.dtau / p.steps as f64;
        for n in 0..p.steps {
            let w1 = (n + 1) as f64 / p.steps as f64;
            let wm = (n as f64 + 0.5) / p.steps as f64;
            let mut next = frame_at(w1)?;
            align_signs(&prev, &mut next, 0, 1, tol.overlap_min).map_err(|(_, overlap)| PropagateError::TrackingLost {
                segment: p.index,
                tau: p.tau0 + w1 * p.dtau,
                overlap,
            })?;
            let mid = eigensystem(model, p.point(wm))?;
            let (l0, l1) = (mid.values[lower], mid.values[lower + 1]);
            let f0 = (next.column(0) - prev.column(0)) / h;
            let f1 = (next.column(1) + prev.column(1)) * 0.5;
            let b = f1.dot(&f0);
            let coupling = if seg.non_mixing {
                let bound = tol.b_tol_rel * lip * p.speed(wm) / (l1 - l0).max(f64::MIN_POSITIVE);
                worst = worst.max(b.abs() / bound);
                if b.abs() > bound {
                    return Err(PropagateError::CouplingViolation { segment: p.index, tau: p.tau0 + wm * p.dtau, b, bound });
                }
                0.0
            } else {
                match mode {
                    EffectiveMode::Coupled => b,
                    EffectiveMode::Adiabatic => 0.0,
                }
            };
            c = effective_step(l0, l1, epsilon * coupling, h / epsilon, c);
            prev = next;
            steps += 1;
        }
        carried = Some(prev);
    }
    Ok(EffectiveResult { epsilon, moduli: [c[0].norm(), c[1].norm()], amplitudes: c, steps, worst_coupling_ratio: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conical::is_conical;
    use crate::model::builtin;
    use crate::planner::{plan, ConnectorSpec, PlanConfig, PlanRequest, SpreadTarget};
    use crate::spectral::{certify_band, Region};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::FRAC_PI_4;

    fn pauli_band() -> (OperatorTriple, crate::spectral::Band) {
        let m = builtin("pauli2").unwrap();
        let band = certify_band(&m, 0, 1, Region::disc(ControlPoint::ORIGIN, 3.0), 4.0).unwrap();
        (m, band)
    }

    fn pauli_vertex_path(p: Vec<f64>, start: ControlPoint) -> (OperatorTriple, ControlPath) {
        let (m, band) = pauli_band();
        let i = is_conical(&m, ControlPoint::ORIGIN, 0, &Tolerances::default()).unwrap();
        let target = SpreadTarget::new(p).unwrap();
        let req = PlanRequest {
            model: &m,
            band: &band,
            intersections: std::slice::from_ref(&i),
            start,
            end: None,
            target: &target,
            config: PlanConfig { entry_radius: 1.0, exit_length: 1.0, approach: Some(0.0), ..Default::default() },
            tol: Tolerances::default(),
        };
        let path = plan(&req).unwrap();
        (m, path)
    }

    #[test]
    fn stationary_eigenstate() {
        let (m, band) = pauli_band();
        let u = ControlPoint::new(0.7, -0.2);
        let path = ControlPath::stationary(&m, &band, u, vec![0.0, 1.0]).unwrap();
        let psi0 = eigenstate(&m, u, 1).unwrap();
        let ov = overlaps(&m, u, &psi0, 0, 1, &Tolerances::default()).unwrap();
        assert!((ov.moduli[1] - 1.0).abs() < 1e-12);
        let r = propagate_full(&m, &path, 1e-2, &psi0, &Tolerances::default()).unwrap();
        assert!((r.overlaps[1] - 1.0).abs() < 1e-9);
        assert!(r.error < 1e-9);
    }

    #[test]
    fn overlap_identities() {
        let m = builtin("three_level").unwrap();
        let u = ControlPoint::new(0.3, 0.4);
        let tol = Tolerances::default();
        let psi = eigenstate(&m, u, 2).unwrap();
        let ov = overlaps(&m, u, &psi, 0, 2, &tol).unwrap();
        assert!((ov.moduli[2] - 1.0).abs() < 1e-12 && ov.moduli[0] < 1e-12 && ov.moduli[1] < 1e-12);
        let ov = overlaps(&m, u, &psi, 0, 1, &tol).unwrap();
        assert!(ov.moduli.iter().all(|v| *v < 1e-12) && (ov.leak - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let re: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let im: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = re.iter().chain(&im).map(|v: &f64| v * v).sum::<f64>().sqrt();
            let psi = QuantumState { re: re.iter().map(|v| v / n).collect(), im: im.iter().map(|v| v / n).collect() };
            let ov = overlaps(&m, u, &psi, 0, 2, &tol).unwrap();
            let s: f64 = ov.moduli.iter().map(|v| v * v).sum();
            assert!((s + ov.leak - 1.0).abs() < 1e-12);
            // Sign flips of eigenvectors leave moduli unchanged.
            let es = eigensystem(&m, u).unwrap();
            assert!((psi.overlap(&(-es.vector(1))) - ov.moduli[1]).abs() < 1e-15);
        }
    }

    #[test]
    fn real_exponential_matches_two_level_closed_form() {
        let h = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.4, -0.3]);
        let mut x = DVector::from_vec(vec![1.0, 0.0]);
        let mut y = DVector::zeros(2);
        let t = 1.7;
        apply_real_exponential(&h, t, &mut x, &mut y).unwrap();
        // exp(-i t (a.sigma)) e0 with |a| = 0.5.
        let (s, c) = (0.5 * t).sin_cos();
        assert!((x[0] - c).abs() < 1e-14 && (y[0] + s * 0.6).abs() < 1e-14);
        assert!(x[1].abs() < 1e-14 && (y[1] + s * 0.8).abs() < 1e-14);
    }

    #[test]
    fn effective_step_closed_form() {
        let c = [Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)];
        let out = effective_step(0.0, 0.0, 0.5, 1.0, c);
        // [[0, i b], [-i b, 0]] = -b sy; exp(i b t sy) e0 = (cos bt, -sin bt)... real rotation.
        assert!((out[0].re - 0.5f64.cos()).abs() < 1e-14 && (out[1].re + 0.5f64.sin()).abs() < 1e-14);
        let p = effective_step(1.0, -1.0, 0.0, 0.3, c);
        assert!((p[0] - Complex::from_polar(1.0, -0.3)).norm() < 1e-14);
    }

    #[test]
    fn full_transfer_on_pauli() {
        let (m, path) = pauli_vertex_path(vec![0.0, 1.0], ControlPoint::new(2.0, 0.2));
        let psi0 = eigenstate(&m, path.start(), 0).unwrap();
        let r = propagate_full(&m, &path, 1e-2, &psi0, &Tolerances::default()).unwrap();
        assert!(r.overlaps[1].powi(2) >= 0.99, "{:?}", r.overlaps);
        assert!((r.final_state.unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn effective_split_at_quarter_turn() {
        let (m, path) = pauli_vertex_path(vec![0.5f64.sqrt(), 0.5f64.sqrt()], ControlPoint::new(2.0, 0.0));
        let tol = Tolerances::default();
        let c0 = [Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)];
        let r = propagate_effective(&m, &path, 0, 1e-2, c0, EffectiveMode::Adiabatic, &tol).unwrap();
        assert!((r.moduli[0] - FRAC_PI_4.cos()).abs() < 1e-8, "{:?}", r.moduli);
        assert!((r.moduli[1] - FRAC_PI_4.sin()).abs() < 1e-8);
        let r = propagate_effective(&m, &path, 0, 1e-2, c0, EffectiveMode::Coupled, &tol).unwrap();
        assert!(r.worst_coupling_ratio < 1.0);
    }

    #[test]
    fn zero_split_is_identity() {
        let (m, path) = pauli_vertex_path(vec![1.0, 0.0], ControlPoint::new(2.0, 0.0));
        let c0 = [Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)];
        let r = propagate_effective(&m, &path, 0, 1e-2, c0, EffectiveMode::Adiabatic, &Tolerances::default()).unwrap();
        assert!((r.moduli[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn adiabatic_conserves_blocks_and_tracks_full() {
        let (m, path) = pauli_vertex_path(vec![0.0, 1.0], ControlPoint::new(2.0, 0.4));
        let tol = Tolerances::default();
        let psi0 = eigenstate(&m, path.start(), 0).unwrap();
        let mut dist = Vec::new();
        for eps in [2e-2, 1e-2] {
            let a = propagate_adiabatic(&m, &path, eps, &psi0, &tol).unwrap();
            let f = propagate_full(&m, &path, eps, &psi0, &tol).unwrap();
            let (fa, ff) = (a.final_state.unwrap(), f.final_state.unwrap());
            // Overlap moduli compared; global phases cancel.
            let d: f64 = a.overlaps.iter().zip(&f.overlaps).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            dist.push(d);
            assert!((fa.norm() - 1.0).abs() < 1e-9 && (ff.norm() - 1.0).abs() < 1e-9);
            // Connector segment: single-level blocks keep level 0 occupied.
            assert!(a.overlaps[1] > 0.999);
        }
        assert!(dist[1] < dist[0] * 0.75, "{dist:?}");
    }

    #[test]
    fn adiabatic_block_occupation_is_invariant() {
        let m = builtin("three_level").unwrap();
        let band = certify_band(&m, 0, 2, Region::rect([0.0, 2.5], [-1.0, 1.0]), 4.0).unwrap();
        let tol = Tolerances::default();
        let spec = ConnectorSpec { model: &m, lo: 0, hi: 2, region: band.region, tol, config: Default::default() };
        let path = ControlPath::connector_only(&spec, &band, ControlPoint::new(0.5, 0.5), ControlPoint::new(2.0, -0.5), vec![1.0, 0.0, 0.0]).unwrap();
        let psi0 = QuantumState { re: vec![0.6, 0.0, 0.0], im: vec![0.0, 0.8, 0.0] };
        let es0 = eigensystem(&m, path.start()).unwrap();
        let parts = segment_partition(&path, 0, 3);
        let before: Vec<f64> = parts.iter().map(|&(a, _)| psi0.overlap(&es0.vector(a)).powi(2)).collect();
        let r = propagate_adiabatic(&m, &path, 5e-2, &psi0, &tol).unwrap();
        let after = block_occupations(&m, path.end(), r.final_state.as_ref().unwrap(), &parts).unwrap();
        for (a, b) in before.iter().zip(&after) {
            assert!((a - b).abs() < 1e-8, "{before:?} {after:?}");
        }
    }

    #[test]
    fn step_halving_converges() {
        let (m, path) = pauli_vertex_path(vec![0.0, 1.0], ControlPoint::new(2.0, 0.4));
        let tol = Tolerances::default();
        let psi0 = eigenstate(&m, path.start(), 0).unwrap();
        let a = propagate_full(&m, &path, 2e-2, &psi0, &tol).unwrap().final_state.unwrap();
        let b = propagate_full(&m, &path, 2e-2, &psi0, &Tolerances { c_step: tol.c_step / 2.0, ..tol }).unwrap().final_state.unwrap();
        let c = propagate_full(&m, &path, 2e-2, &psi0, &Tolerances { c_step: tol.c_step / 4.0, ..tol }).unwrap().final_state.unwrap();
        let (d1, d2) = (a.distance(&b), b.distance(&c));
        assert!(d2 < d1 / 3.0, "{d1:e} {d2:e}");
    }

    #[test]
    fn budget_and_input_errors() {
        let (m, path) = pauli_vertex_path(vec![0.0, 1.0], ControlPoint::new(2.0, 0.4));
        let psi0 = eigenstate(&m, path.start(), 0).unwrap();
        let tight = Tolerances { max_steps: 10, ..Default::default() };
        assert!(matches!(propagate_full(&m, &path, 1e-3, &psi0, &tight), Err(PropagateError::StepBudgetExceeded { .. })));
        assert!(matches!(propagate_full(&m, &path, 0.0, &psi0, &Tolerances::default()), Err(PropagateError::InvalidInput(_))));
        let bad = QuantumState { re: vec![1.0, 1.0], im: vec![0.0, 0.0] };
        assert!(matches!(propagate_full(&m, &path, 1e-2, &bad, &Tolerances::default()), Err(PropagateError::InvalidInput(_))));
    }
}
