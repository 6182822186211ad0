//! Eigendecomposition with a fixed sign convention, band gap certificates,
//! spectral projectors and sign-continuous eigenvector tracking.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlPoint, OperatorTriple};
use crate::tolerances::Tolerances;

pub const BAND_SCHEMA: &str = "conic-climb/band/1";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("eigendecomposition failed at {0}: non-finite matrix entries")]
    Decomposition(ControlPoint),
    #[error("band gap not certified: worst grid point {point} has margin {margin:e}")]
    GapNotCertified { point: ControlPoint, margin: f64 },
    #[error("eigenvalue {index} is degenerate along the curve at sample {sample} (gap {gap:e})")]
    DegenerateAlongCurve { index: usize, sample: usize, gap: f64 },
    #[error("eigenvector {index} lost between samples {sample} and {next} (overlap {overlap:.4})", next = .sample + 1)]
    TrackingLost { index: usize, sample: usize, overlap: f64 },
    #[error("invalid band [{lo}, {hi}] for dimension {dim}")]
    InvalidBand { lo: usize, hi: usize, dim: usize },
    #[error("invalid region or grid: {0}")]
    InvalidRegion(String),
}

/// Full eigendecomposition of `H(u)`, values ascending.
///
/// Each eigenvector has its largest-magnitude component positive (lowest
/// index wins ties), so the result is reproducible.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSystem {
    pub u: ControlPoint,
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigenSystem {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn vector(&self, i: usize) -> DVector<f64> {
        self.vectors.column(i).into_owned()
    }

    /// `lambda_{j+1} - lambda_j`.
    pub fn gap(&self, j: usize) -> f64 {
        self.values[j + 1] - self.values[j]
    }

    /// Spectral norm of `H(u)`.
    pub fn norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Sorted eigendecomposition of a symmetric matrix with the fixed sign convention.
pub fn decompose(h: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    if h.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let eig = h.clone().symmetric_eigen();
    let n = h.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let mut best = 0;
        for k in 1..n {
            if v[k].abs() > v[best].abs() {
                best = k;
            }
        }
        let s = if v[best] < 0.0 { -1.0 } else { 1.0 };
        vectors.set_column(col, &(v * s));
    }
    Some((values, vectors))
}

pub fn eigensystem(model: &OperatorTriple, u: ControlPoint) -> Result<EigenSystem, SpectralError> {
    let h = model.assemble(u);
    let (values, vectors) = decompose(&h).ok_or(SpectralError::Decomposition(u))?;
    Ok(EigenSystem { u, values, vectors })
}

/// Region of control space over which a band is certified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Rect { u1: [f64; 2], u2: [f64; 2] },
    Disc { center: [f64; 2], radius: f64 },
}

impl Region {
    pub fn disc(center: ControlPoint, radius: f64) -> Self {
        Region::Disc { center: center.as_array(), radius }
    }

    pub fn rect(u1: [f64; 2], u2: [f64; 2]) -> Self {
        Region::Rect { u1, u2 }
    }

    pub fn contains(&self, u: ControlPoint) -> bool {
        match *self {
            Region::Rect { u1, u2 } => u.u1 >= u1[0] && u.u1 <= u1[1] && u.u2 >= u2[0] && u.u2 <= u2[1],
            Region::Disc { center, radius } => u.dist(center.into()) <= radius,
        }
    }

    pub fn diameter(&self) -> f64 {
        match *self {
            Region::Rect { u1, u2 } => (u1[1] - u1[0]).hypot(u2[1] - u2[0]),
            Region::Disc { radius, .. } => 2.0 * radius,
        }
    }

    pub fn center(&self) -> ControlPoint {
        match *self {
            Region::Rect { u1, u2 } => ControlPoint::new(0.5 * (u1[0] + u1[1]), 0.5 * (u2[0] + u2[1])),
            Region::Disc { center, .. } => center.into(),
        }
    }

    /// `[u1_lo, u1_hi, u2_lo, u2_hi]`.
    pub fn bounding_box(&self) -> [f64; 4] {
        match *self {
            Region::Rect { u1, u2 } => [u1[0], u1[1], u2[0], u2[1]],
            Region::Disc { center, radius } => {
                [center[0] - radius, center[0] + radius, center[1] - radius, center[1] + radius]
            }
        }
    }

    fn validate(&self) -> Result<(), SpectralError> {
        let ok = match *self {
            Region::Rect { u1, u2 } => u1[0] <= u1[1] && u2[0] <= u2[1] && u1.iter().chain(&u2).all(|v| v.is_finite()),
            Region::Disc { center, radius } => radius >= 0.0 && radius.is_finite() && center.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(SpectralError::InvalidRegion(format!("{self:?}")))
        }
    }

    /// Square grid with spacing `h <= 1/density` such that every point of the
    /// region lies within `h / sqrt(2)` of some node. Returns `(nodes, h)`.
    pub fn covering_grid(&self, density: f64) -> (Vec<ControlPoint>, f64) {
        let [a, b, c, d] = self.bounding_box();
        let nx = (((b - a) * density).ceil() as usize).max(1);
        let ny = (((d - c) * density).ceil() as usize).max(1);
        let h = ((b - a) / nx as f64).max((d - c) / ny as f64).max(f64::MIN_POSITIVE);
        let hx = (b - a) / nx as f64;
        let hy = (d - c) / ny as f64;
        let keep = |p: ControlPoint| match *self {
            Region::Rect { .. } => true,
            Region::Disc { center, radius } => p.dist(center.into()) <= radius + h / std::f64::consts::SQRT_2 + 1e-15,
        };
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for iy in 0..=ny {
            for ix in 0..=nx {
                let p = ControlPoint::new(a + ix as f64 * hx, c + iy as f64 * hy);
                if keep(p) {
                    nodes.push(p);
                }
            }
        }
        (nodes, h)
    }
}

/// Contiguous eigenvalue indices `lo..=hi` with a certified separation from
/// the rest of the spectrum over `region`. `gamma == None` means the band is
/// the whole spectrum and the separation is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub schema: String,
    pub indices: [usize; 2],
    pub region: Region,
    pub gamma: Option<f64>,
    pub unbounded: bool,
    pub grid_density: f64,
    pub grid_spacing: f64,
    pub worst_point: Option<ControlPoint>,
}

impl Band {
    pub fn lo(&self) -> usize {
        self.indices[0]
    }

    pub fn hi(&self) -> usize {
        self.indices[1]
    }
}

/// Separation of levels `lo..=hi` from the rest of the spectrum at one point.
pub fn band_separation(values: &DVector<f64>, lo: usize, hi: usize) -> f64 {
    let mut sep = f64::INFINITY;
    if lo > 0 {
        sep = sep.min(values[lo] - values[lo - 1]);
    }
    if hi + 1 < values.len() {
        sep = sep.min(values[hi + 1] - values[hi]);
    }
    sep
}

fn check_band(dim: usize, lo: usize, hi: usize) -> Result<(), SpectralError> {
    if lo > hi || hi >= dim {
        Err(SpectralError::InvalidBand { lo, hi, dim })
    } else {
        Ok(())
    }
}

/// Certifies that levels `lo..=hi` stay separated from the rest of the
/// spectrum on `region`.
///
/// The minimum separation over a covering grid is reduced by the Lipschitz
/// margin `sqrt(2) * sqrt(|H1|^2 + |H2|^2) * h`, which bounds the change of
/// any eigenvalue difference between a region point and its nearest node.
pub fn certify_band(
    model: &OperatorTriple,
    lo: usize,
    hi: usize,
    region: Region,
    grid_density: f64,
) -> Result<Band, SpectralError> {
    check_band(model.dim(), lo, hi)?;
    region.validate()?;
    if !(grid_density >= 2.0) {
        return Err(SpectralError::InvalidRegion(format!("grid density {grid_density} < 2")));
    }
    let (nodes, h) = region.covering_grid(grid_density);
    let mut band = Band {
        schema: BAND_SCHEMA.into(),
        indices: [lo, hi],
        region,
        gamma: None,
        unbounded: true,
        grid_density,
        grid_spacing: h,
        worst_point: None,
    };
    if lo == 0 && hi + 1 == model.dim() {
        return Ok(band);
    }
    let (worst, idx) = nodes
        .par_iter()
        .enumerate()
        .map(|(i, &u)| {
            let sep = match eigensystem(model, u) {
                Ok(es) => band_separation(&es.values, lo, hi),
                Err(_) => f64::NEG_INFINITY,
            };
            (sep, i)
        })
        .reduce(|| (f64::INFINITY, usize::MAX), |a, b| if (b.0, b.1) < (a.0, a.1) { b } else { a });
    let [n1, n2] = model.control_norms();
    let margin = std::f64::consts::SQRT_2 * n1.hypot(n2) * h;
    let gamma = worst - margin;
    let point = nodes[idx];
    if !(gamma > 0.0) {
        return Err(SpectralError::GapNotCertified { point, margin: gamma });
    }
    band.gamma = Some(gamma);
    band.unbounded = false;
    band.worst_point = Some(point);
    Ok(band)
}

/// Orthogonal projector onto the eigenvectors `lo..=hi`.
pub fn projector(es: &EigenSystem, lo: usize, hi: usize) -> DMatrix<f64> {
    let v = es.vectors.columns(lo, hi - lo + 1);
    v * v.transpose()
}

/// Eigensystem along a curve with the band eigenvectors sign-aligned to the
/// previous sample. `signs[i - lo]` is the factor applied to the canonical
/// eigenvector `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackedFrame {
    pub sample: usize,
    pub eig: EigenSystem,
    pub signs: Vec<f64>,
}

/// Degeneracy scale used by the simplicity test: `|H(u)| + |H1| + |H2|`.
pub fn degeneracy_scale(model: &OperatorTriple, es: &EigenSystem) -> f64 {
    es.norm() + model.lipschitz()
}

/// Checks that every level of `lo..=hi` is simple at this point.
pub fn check_simple(
    model: &OperatorTriple,
    es: &EigenSystem,
    lo: usize,
    hi: usize,
    tol: &Tolerances,
    sample: usize,
) -> Result<(), SpectralError> {
    let simple_tol = tol.simple_rel * degeneracy_scale(model, es);
    for i in lo..=hi {
        let mut g = f64::INFINITY;
        if i > 0 {
            g = g.min(es.values[i] - es.values[i - 1]);
        }
        if i + 1 < es.dim() {
            g = g.min(es.values[i + 1] - es.values[i]);
        }
        if !(g > simple_tol) {
            return Err(SpectralError::DegenerateAlongCurve { index: i, sample, gap: g });
        }
    }
    Ok(())
}

/// Flips signs of `next` columns `lo..=hi` so each has nonnegative overlap
/// with `prev`. Fails if some |overlap| is not above `overlap_min`.
pub fn align_signs(
    prev: &DMatrix<f64>,
    next: &mut DMatrix<f64>,
    lo: usize,
    hi: usize,
    overlap_min: f64,
) -> Result<Vec<f64>, (usize, f64)> {
    let mut signs = Vec::with_capacity(hi - lo + 1);
    for i in lo..=hi {
        let ov = prev.column(i).dot(&next.column(i));
        if !(ov.abs() > overlap_min) {
            return Err((i, ov.abs()));
        }
        let s = if ov < 0.0 { -1.0 } else { 1.0 };
        if s < 0.0 {
            let flipped = next.column(i) * -1.0;
            next.set_column(i, &flipped);
        }
        signs.push(s);
    }
    Ok(signs)
}

pub fn track_along(
    model: &OperatorTriple,
    samples: &[ControlPoint],
    lo: usize,
    hi: usize,
    tol: &Tolerances,
) -> Result<Vec<TrackedFrame>, SpectralError> {
    check_band(model.dim(), lo, hi)?;
    let mut frames: Vec<TrackedFrame> = Vec::with_capacity(samples.len());
    for (k, &u) in samples.iter().enumerate() {
        let mut eig = eigensystem(model, u)?;
        check_simple(model, &eig, lo, hi, tol, k)?;
        let signs = match frames.last() {
            None => vec![1.0; hi - lo + 1],
            Some(prev) => {
                let canon = align_signs(&prev.eig.vectors, &mut eig.vectors, lo, hi, tol.overlap_min)
                    .map_err(|(index, overlap)| SpectralError::TrackingLost { index, sample: k - 1, overlap })?;
                canon.iter().zip(&prev.signs).map(|(a, b)| a * b).collect()
            }
        };
        frames.push(TrackedFrame { sample: k, eig, signs });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_galerkin, builtin};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn check_invariants(model: &OperatorTriple, es: &EigenSystem) {
        let h = model.assemble(es.u);
        let hn = es.norm().max(1e-300);
        for i in 0..es.dim() {
            assert!(i == 0 || es.values[i] >= es.values[i - 1]);
            let r = (&h * es.vector(i) - es.vector(i) * es.values[i]).norm();
            assert!(r <= 1e-10 * (1.0 + es.values[i].abs()) * hn.max(1.0), "residual {r}");
        }
        let gram = es.vectors.transpose() * &es.vectors;
        assert!((gram - DMatrix::<f64>::identity(es.dim(), es.dim())).amax() < 1e-10);
    }

    #[test]
    fn pauli_values_are_plus_minus_radius() {
        let m = builtin("pauli2").unwrap();
        let es = eigensystem(&m, ControlPoint::new(0.3, 0.4)).unwrap();
        assert!((es.values[0] + 0.5).abs() < 1e-15);
        assert!((es.values[1] - 0.5).abs() < 1e-15);
        check_invariants(&m, &es);
        let zero = eigensystem(&m, ControlPoint::ORIGIN).unwrap();
        assert_eq!(zero.values.as_slice(), &[0.0, 0.0]);
        check_invariants(&m, &zero);
    }

    #[test]
    fn free_galerkin_spectrum() {
        let z = vec![0.0; 9];
        let m = build_galerkin(5, &z, &z, &z, 40).unwrap();
        let es = eigensystem(&m, ControlPoint::new(0.7, -0.2)).unwrap();
        for (k, v) in es.values.iter().enumerate() {
            assert!((v - ((k + 1) * (k + 1)) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn sign_convention_is_deterministic() {
        let m = builtin("three_level").unwrap();
        let a = eigensystem(&m, ControlPoint::new(0.1, 0.9)).unwrap();
        let b = eigensystem(&m, ControlPoint::new(0.1, 0.9)).unwrap();
        assert_eq!(a, b);
        for i in 0..3 {
            let v = a.vector(i);
            let imax = v.iamax();
            assert!(v[imax] > 0.0);
        }
    }

    #[test]
    fn non_finite_input_is_an_error() {
        let m = builtin("pauli2").unwrap();
        assert!(eigensystem(&m, ControlPoint::new(f64::NAN, 0.0)).is_err());
    }

    #[test]
    fn full_band_is_unbounded() {
        let m = builtin("pauli2").unwrap();
        let b = certify_band(&m, 0, 1, Region::disc(ControlPoint::ORIGIN, 1.0), 10.0).unwrap();
        assert!(b.unbounded);
        assert!(b.gamma.is_none());
    }

    /// Brute-force minimum separation on a much finer grid.
    fn scan_min_separation(m: &OperatorTriple, lo: usize, hi: usize, c: ControlPoint, r: f64) -> f64 {
        let n = 400;
        let mut best = f64::INFINITY;
        for i in 0..=n {
            for k in 0..=n {
                let p = ControlPoint::new(c.u1 - r + 2.0 * r * i as f64 / n as f64, c.u2 - r + 2.0 * r * k as f64 / n as f64);
                if p.dist(c) <= r {
                    let es = eigensystem(m, p).unwrap();
                    best = best.min(band_separation(&es.values, lo, hi));
                }
            }
        }
        best
    }

    #[test]
    fn three_level_band_near_lower_crossing() {
        let m = builtin("three_level").unwrap();
        let c = ControlPoint::new(1.25, 0.0);
        let b = certify_band(&m, 0, 1, Region::disc(c, 0.3), 40.0).unwrap();
        let gamma = b.gamma.unwrap();
        assert!(gamma > 0.0);
        let oracle = scan_min_separation(&m, 0, 1, c, 0.3);
        assert!(gamma <= oracle + 1e-12, "certified {gamma} exceeds scanned {oracle}");
    }

    #[test]
    fn three_level_band_fails_over_upper_crossing() {
        let m = builtin("three_level").unwrap();
        let c = ControlPoint::new(-1.25, 0.0);
        let oracle = scan_min_separation(&m, 0, 1, c, 0.3);
        assert!(oracle < 1e-2);
        match certify_band(&m, 0, 1, Region::disc(c, 0.3), 40.0) {
            Err(SpectralError::GapNotCertified { margin, .. }) => assert!(margin <= 0.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn band_serializes() {
        let m = builtin("three_level").unwrap();
        let b = certify_band(&m, 0, 1, Region::disc(ControlPoint::new(1.25, 0.0), 0.2), 20.0).unwrap();
        let text = serde_json::to_string(&b).unwrap();
        let back: Band = serde_json::from_str(&text).unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn projector_properties() {
        let m = builtin("pauli2").unwrap();
        let es = eigensystem(&m, ControlPoint::new(1.0, 0.0)).unwrap();
        let p0 = projector(&es, 0, 0);
        assert!((p0 - DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0])).amax() < 1e-15);
        assert!((projector(&es, 0, 1) - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);

        let g = builtin("galerkin_demo").unwrap();
        let es = eigensystem(&g, ControlPoint::new(0.3, -0.8)).unwrap();
        let p = projector(&es, 1, 3);
        assert!((&p * &p - &p).amax() < 1e-10);
        assert!((&p - p.transpose()).amax() < 1e-10);
        assert!((p.trace() - 3.0).abs() < 1e-10);
    }

    #[test]
    fn pauli_circle_tracks_smoothly() {
        let m = builtin("pauli2").unwrap();
        let samples: Vec<ControlPoint> = (0..100)
            .map(|k| ControlPoint::polar(1.0, std::f64::consts::FRAC_PI_2 * k as f64 / 99.0))
            .collect();
        let frames = track_along(&m, &samples, 0, 1, &Tolerances::default()).unwrap();
        for w in frames.windows(2) {
            for i in 0..2 {
                assert!(w[0].eig.vector(i).dot(&w[1].eig.vector(i)) > 0.99);
            }
        }
        // Lower eigenvector at angle s is (-sin(s/2), cos(s/2)) up to sign.
        for (f, u) in frames.iter().zip(&samples) {
            let s = u.angle();
            let v = f.eig.vector(0);
            assert!((v[0].abs() - (s / 2.0).sin()).abs() < 1e-12);
            assert!((v[1].abs() - (s / 2.0).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_through_origin_is_degenerate() {
        let m = builtin("pauli2").unwrap();
        let samples: Vec<ControlPoint> = (0..11).map(|k| ControlPoint::new(-1.0 + 0.2 * k as f64, 0.0)).collect();
        assert!(matches!(
            track_along(&m, &samples, 0, 1, &Tolerances::default()),
            Err(SpectralError::DegenerateAlongCurve { sample: 5, .. })
        ));
    }

    #[test]
    fn coarse_curve_loses_tracking() {
        let m = builtin("pauli2").unwrap();
        let samples = [ControlPoint::new(1.0, 0.0), ControlPoint::new(-1.0, 0.1)];
        assert!(matches!(
            track_along(&m, &samples, 0, 1, &Tolerances::default()),
            Err(SpectralError::TrackingLost { .. })
        ));
    }

    #[test]
    fn constant_curve_gives_identical_frames() {
        let m = builtin("three_level").unwrap();
        let samples = vec![ControlPoint::new(0.2, 0.5); 5];
        let frames = track_along(&m, &samples, 0, 2, &Tolerances::default()).unwrap();
        for f in &frames[1..] {
            assert_eq!(f.eig, frames[0].eig);
        }
    }

    #[test]
    fn eigenvalues_are_lipschitz() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let n = rng.random_range(2..6);
            let mut mk = || {
                let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                (&a + a.transpose()) * 0.5
            };
            let model = OperatorTriple::new(mk(), mk(), mk()).unwrap();
            let l = model.lipschitz();
            let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.5..2.0));
            let curve = |t: f64| ControlPoint::new(a + (c * t).sin(), b * t + 0.3 * t * t);
            for _ in 0..100 {
                let t = rng.random_range(-1.0..1.0);
                let h = rng.random_range(1e-4..0.1);
                let e0 = eigensystem(&model, curve(t)).unwrap();
                let e1 = eigensystem(&model, curve(t + h)).unwrap();
                let du = curve(t + h).dist(curve(t));
                for i in 0..n {
                    assert!((e1.values[i] - e0.values[i]).abs() <= l * du + 1e-9);
                }
            }
        }
    }

    #[test]
    fn off_diagonal_identity_converges_at_first_order() {
        let m = builtin("three_level").unwrap();
        let curve = |t: f64| ControlPoint::new(0.3 + 0.5 * t, 0.4 + 0.2 * t * t);
        let dcurve = |t: f64| ControlPoint::new(0.5, 0.4 * t);
        let t = 0.3;
        let residual = |h: f64| {
            let s = [curve(t), curve(t + h)];
            let fr = track_along(&m, &s, 0, 2, &Tolerances::default()).unwrap();
            let (l, mm) = (0, 1);
            let dphi = (fr[1].eig.vector(mm) - fr[0].eig.vector(mm)) / h;
            let lhs = (fr[0].eig.values[mm] - fr[0].eig.values[l]) * fr[0].eig.vector(l).dot(&dphi);
            let rhs = fr[0].eig.vector(l).dot(&(m.directional(dcurve(t)) * fr[0].eig.vector(mm)));
            (lhs - rhs).abs()
        };
        let r1 = residual(1e-3);
        let r2 = residual(5e-4);
        let order = (r1 / r2).log2();
        assert!(order >= 0.9, "order {order} ({r1:e}, {r2:e})");
    }

    #[test]
    fn projector_is_lipschitz_on_certified_band() {
        let m = builtin("three_level").unwrap();
        let c = ControlPoint::new(1.25, 0.0);
        certify_band(&m, 0, 1, Region::disc(c, 0.3), 40.0).unwrap();
        let estimate = |h: f64| {
            let mut worst = 0.0f64;
            for k in 0..32 {
                let a = ControlPoint::polar(0.2, k as f64 * 0.2) + c;
                let b = a + ControlPoint::polar(h, 1.0 + k as f64);
                let pa = projector(&eigensystem(&m, a).unwrap(), 0, 1);
                let pb = projector(&eigensystem(&m, b).unwrap(), 0, 1);
                worst = worst.max((pa - pb).norm() / h);
            }
            worst
        };
        let (c1, c2) = (estimate(1e-3), estimate(5e-4));
        assert!(c1.is_finite() && (c1 - c2).abs() < 0.05 * c1.max(1e-12) + 1e-9);
    }

    proptest! {
        #[test]
        fn random_eigensystems_satisfy_invariants(seed in 0u64..1000, u1 in -3.0f64..3.0, u2 in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(2..8);
            let mut mk = || {
                let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                (&a + a.transpose()) * 0.5
            };
            let model = OperatorTriple::new(mk(), mk(), mk()).unwrap();
            let es = eigensystem(&model, ControlPoint::new(u1, u2)).unwrap();
            check_invariants(&model, &es);
        }
    }
}
