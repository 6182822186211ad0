//! Path synthesis for spread control: connectors with simple band spectrum,
//! incoming and outgoing non-mixing curves, splitting-angle selection and
//! the global time parametrization.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conical::{wrap_angle, ConicalError, Intersection};
use crate::model::{ControlPoint, OperatorTriple};
use crate::nonmixing::{exit_curve, integrate_to_singularity, two_jet, CurveSegment, NonMixingError, NonMixingField, SegmentKind, SegmentVertex};
use crate::spectral::{eigensystem, Band, Region, SpectralError};
use crate::spline::{PlanarSpline, QuinticHermite};
use crate::tolerances::Tolerances;

pub const PATH_SCHEMA: &str = "conic-climb/path/1";

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid spread target: {0}")]
    InvalidTarget(String),
    #[error("target puts mass {mass:e} above level {top}, the highest level reachable through the supplied intersections")]
    InconsistentTarget { mass: f64, top: usize },
    #[error("intersection {index} couples levels ({lower}, {}), expected ({expected}, {})", .lower + 1, .expected + 1)]
    IntersectionOrder { index: usize, lower: usize, expected: usize },
    #[error("band spectrum not simple at {point} (gap {gap:e})")]
    NotSimple { point: ControlPoint, gap: f64 },
    #[error("no simple-spectrum connector found; blocking point {blocking} with gap {gap:e}")]
    NoSimplePathFound { blocking: ControlPoint, gap: f64 },
    #[error("incoming curve from {entry} reached a crossing at {reached}, expected {expected}")]
    WrongCrossing { entry: ControlPoint, reached: ControlPoint, expected: ControlPoint },
    #[error("curve leaves the region at {0}")]
    LeftRegion(ControlPoint),
    #[error("invalid path: {0}")]
    InvalidPath(String),
    #[error(transparent)]
    NonMixing(#[from] NonMixingError),
    #[error(transparent)]
    Certificate(#[from] ConicalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("path file: {0}")]
    Format(#[from] serde_json::Error),
}

/// Prescribed moduli of the final amplitudes on consecutive levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadTarget {
    pub p: Vec<f64>,
}

impl SpreadTarget {
    pub fn new(p: Vec<f64>) -> Result<Self, PlanError> {
        if p.is_empty() {
            return Err(PlanError::InvalidTarget("empty amplitude vector".into()));
        }
        if let Some(v) = p.iter().find(|v| !(**v >= 0.0 && **v <= 1.0)) {
            return Err(PlanError::InvalidTarget(format!("amplitude {v} outside [0, 1]")));
        }
        let s: f64 = p.iter().map(|v| v * v).sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(PlanError::InvalidTarget(format!("sum of squared amplitudes must equal 1, got {s:.15}")));
        }
        Ok(Self { p })
    }

    pub fn get(&self, l: usize) -> f64 {
        self.p.get(l).copied().unwrap_or(0.0)
    }

    /// Splitting angle at the crossing of levels `(j, j+1)`.
    pub fn beta(&self, j: usize) -> f64 {
        let kept: f64 = (0..=j).map(|l| self.get(l).powi(2)).sum();
        let rest = (1.0 - kept).max(0.0).sqrt();
        let pj = self.get(j);
        if rest == 0.0 && pj == 0.0 {
            0.0
        } else {
            rest.atan2(pj)
        }
    }

    /// Moduli produced by applying the per-vertex splits to the source level.
    pub fn bookkeeping(&self, vertices: usize) -> Vec<f64> {
        let mut out = vec![0.0; vertices + 1];
        let mut carried = 1.0;
        for (j, slot) in out.iter_mut().enumerate().take(vertices) {
            let b = self.beta(j);
            *slot = carried * b.cos();
            carried *= b.sin();
        }
        out[vertices] = carried;
        out
    }
}

/// Both outgoing angles whose limit basis is rotated by `+beta` and `-beta`
/// relative to the one reached along `alpha_minus`, with the `k` used to
/// bring `Xi(alpha_minus) +- beta + k pi` back into the range of `Xi`.
pub fn splitting_angles(intersection: &Intersection, alpha_minus: f64, beta: f64) -> [(f64, i64); 2] {
    let base = intersection.xi(alpha_minus);
    let (lo, hi) = if base >= 0.0 { (0.0, PI) } else { (-PI, 0.0) };
    let solve = |y: f64| {
        let k = if y < lo { 1 } else if y >= hi { -1 } else { 0 };
        let alpha = if beta == 0.0 { wrap_angle(alpha_minus) } else { intersection.xi_inverse(y + k as f64 * PI) };
        (alpha, k)
    };
    [solve(base + beta), solve(base - beta)]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectorConfig {
    pub max_retries: usize,
    /// Number of random waypoints per detour candidate.
    pub waypoints: usize,
    /// Nodes per unit length of the gap map.
    pub grid_density: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for ConnectorConfig {
    fn default() -> Self {
        Self { max_retries: 256, waypoints: 2, grid_density: 20.0, samples: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    /// Distance from each crossing at which the incoming curve starts.
    pub entry_radius: f64,
    /// Approach directions (angle seen from the crossing) per vertex; when
    /// absent the entry point faces the current end of the path.
    pub approach: Option<f64>,
    /// Arc length of every outgoing curve.
    pub exit_length: f64,
    pub connector: ConnectorConfig,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self { entry_radius: 0.5, approach: None, exit_length: 0.5, connector: ConnectorConfig::default() }
    }
}

/// Smallest gap between consecutive levels of `lo..=hi`.
pub fn band_min_gap(model: &OperatorTriple, u: ControlPoint, lo: usize, hi: usize) -> Result<f64, SpectralError> {
    let es = eigensystem(model, u)?;
    Ok((lo..hi).map(|j| es.gap(j)).fold(f64::INFINITY, f64::min))
}

/// Minimum intra-band gap on a grid over the region, bilinearly interpolated.
#[derive(Debug, Clone)]
pub struct GapMap {
    origin: ControlPoint,
    h: [f64; 2],
    n: [usize; 2],
    values: Vec<f64>,
}

impl GapMap {
    pub fn new(model: &OperatorTriple, lo: usize, hi: usize, region: &Region, density: f64) -> Self {
        let [a, b, c, d] = region.bounding_box();
        let nx = (((b - a) * density).ceil() as usize).max(1);
        let ny = (((d - c) * density).ceil() as usize).max(1);
        let h = [(b - a) / nx as f64, (d - c) / ny as f64];
        let values = (0..(nx + 1) * (ny + 1))
            .into_par_iter()
            .map(|k| {
                let u = ControlPoint::new(a + (k % (nx + 1)) as f64 * h[0], c + (k / (nx + 1)) as f64 * h[1]);
                band_min_gap(model, u, lo, hi).unwrap_or(0.0)
            })
            .collect();
        Self { origin: ControlPoint::new(a, c), h, n: [nx, ny], values }
    }

    pub fn at(&self, u: ControlPoint) -> f64 {
        let fx = ((u.u1 - self.origin.u1) / self.h[0].max(f64::MIN_POSITIVE)).clamp(0.0, self.n[0] as f64);
        let fy = ((u.u2 - self.origin.u2) / self.h[1].max(f64::MIN_POSITIVE)).clamp(0.0, self.n[1] as f64);
        let ix = (fx.floor() as usize).min(self.n[0].saturating_sub(1));
        let iy = (fy.floor() as usize).min(self.n[1].saturating_sub(1));
        let (tx, ty) = (fx - ix as f64, fy - iy as f64);
        let w = self.n[0] + 1;
        let v = |i: usize, j: usize| self.values[(j.min(self.n[1])) * w + i.min(self.n[0])];
        (1.0 - tx) * (1.0 - ty) * v(ix, iy) + tx * (1.0 - ty) * v(ix + 1, iy) + (1.0 - tx) * ty * v(ix, iy + 1) + tx * ty * v(ix + 1, iy + 1)
    }
}

/// Endpoint constraints and certification data for [`connector`].
#[derive(Debug, Clone, Copy)]
pub struct ConnectorSpec<'a> {
    pub model: &'a OperatorTriple,
    pub lo: usize,
    pub hi: usize,
    pub region: Region,
    pub tol: Tolerances,
    pub config: ConnectorConfig,
}

impl ConnectorSpec<'_> {
    fn gap_floor(&self) -> f64 {
        self.tol.connector_gap_rel * self.model.lipschitz()
    }

    fn sample(&self, spline: &PlanarSpline, n: usize) -> Vec<ControlPoint> {
        let (t0, t1) = spline.domain();
        (0..n).map(|k| spline.point(t0 + (t1 - t0) * k as f64 / (n - 1) as f64)).collect()
    }

    fn through(&self, nodes: &[ControlPoint], start: Option<ControlPoint>, end: Option<ControlPoint>) -> PlanarSpline {
        let mut t = vec![0.0];
        for w in nodes.windows(2) {
            t.push(t.last().unwrap() + w[1].dist(w[0]));
        }
        PlanarSpline::natural(&t, nodes, start, end)
    }

    /// Worst point of a candidate curve: `(gap, point)`; points outside the region count as gap `-inf`.
    fn worst(&self, pts: &[ControlPoint]) -> Result<(f64, ControlPoint), SpectralError> {
        let gaps: Vec<(f64, ControlPoint)> = pts
            .par_iter()
            .map(|&u| {
                if !self.region.contains(u) {
                    return Ok((f64::NEG_INFINITY, u));
                }
                Ok((band_min_gap(self.model, u, self.lo, self.hi)?, u))
            })
            .collect::<Result<_, SpectralError>>()?;
        Ok(gaps.into_iter().fold((f64::INFINITY, ControlPoint::ORIGIN), |a, b| if b.0 < a.0 { b } else { a }))
    }
}

/// A C2 spline from `from` to `to` along which the band stays simple.
///
/// `start`/`end` are unit tangents to match (free ends use natural
/// conditions). The direct spline is tried first, then detours through
/// random waypoints screened on a gap map.
pub fn connector(
    spec: &ConnectorSpec,
    from: ControlPoint,
    to: ControlPoint,
    start: Option<ControlPoint>,
    end: Option<ControlPoint>,
) -> Result<CurveSegment, PlanError> {
    for p in [from, to] {
        let g = band_min_gap(spec.model, p, spec.lo, spec.hi)?;
        if !(g > spec.gap_floor()) {
            return Err(PlanError::NotSimple { point: p, gap: g });
        }
        if !spec.region.contains(p) {
            return Err(PlanError::LeftRegion(p));
        }
    }
    if from.dist(to) < 1e-12 {
        return Ok(CurveSegment { kind: SegmentKind::Connector, non_mixing: false, params: vec![0.0], u1: vec![from.u1], u2: vec![from.u2], vertex: None });
    }
    let n = spec.config.samples.max(16);
    let floor = spec.gap_floor();
    let direct = spec.sample(&spec.through(&[from, to], start, end), n);
    let (gap, blocking) = spec.worst(&direct)?;
    if gap > floor {
        return Ok(CurveSegment::from_points(SegmentKind::Connector, &direct)?);
    }

    let map = GapMap::new(spec.model, spec.lo, spec.hi, &spec.region, spec.config.grid_density);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.config.seed);
    let [a, b, c, d] = spec.region.bounding_box();
    let mut best: Option<(f64, Vec<ControlPoint>)> = None;
    for _ in 0..spec.config.max_retries {
        let mut nodes = vec![from];
        for _ in 0..spec.config.waypoints.max(1) {
            nodes.push(ControlPoint::new(rng.random_range(a..=b), rng.random_range(c..=d)));
        }
        nodes.push(to);
        if nodes.iter().any(|&p| !spec.region.contains(p)) {
            continue;
        }
        let coarse = spec.sample(&spec.through(&nodes, start, end), 256);
        if coarse.iter().any(|&p| !spec.region.contains(p) || map.at(p) <= 2.0 * floor) {
            continue;
        }
        let length: f64 = coarse.windows(2).map(|w| w[1].dist(w[0])).sum();
        if best.as_ref().is_none_or(|(l, _)| length < *l) {
            best = Some((length, nodes));
        }
    }
    // Verify candidates exactly, shortest first.
    if let Some((_, nodes)) = best {
        let pts = spec.sample(&spec.through(&nodes, start, end), n);
        if spec.worst(&pts)?.0 > floor {
            return Ok(CurveSegment::from_points(SegmentKind::Connector, &pts)?);
        }
    }
    Err(PlanError::NoSimplePathFound { blocking, gap })
}

/// Per-crossing record of a planned path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    /// Index into [`ControlPath::intersections`].
    pub intersection: usize,
    pub lower: usize,
    pub point: ControlPoint,
    pub alpha_minus: f64,
    pub alpha_plus: f64,
    pub beta: f64,
    /// 1 when the `+beta` solution was used, 2 for `-beta`.
    pub option: u8,
    pub k: i64,
    pub xi_minus: f64,
    pub xi_plus: f64,
    pub incoming: usize,
    pub outgoing: usize,
}

/// A planned control curve, parametrized by `tau in [0, 1]` proportionally
/// to arc length.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlPath {
    pub schema: String,
    pub model: String,
    pub band: Band,
    pub target: Vec<f64>,
    pub segments: Vec<CurveSegment>,
    pub vertices: Vec<Vertex>,
    /// Global parameter at segment boundaries, `segments.len() + 1` values.
    pub knots: Vec<f64>,
    pub intersections: Vec<Intersection>,
    pub variant: String,
}

impl ControlPath {
    fn assemble(model: &OperatorTriple, band: &Band, target: Vec<f64>, segments: Vec<CurveSegment>, vertices: Vec<Vertex>, intersections: Vec<Intersection>, variant: &str) -> Result<Self, PlanError> {
        let mut path = Self {
            schema: PATH_SCHEMA.into(),
            model: model.name().to_string(),
            band: band.clone(),
            target,
            segments,
            vertices,
            knots: Vec::new(),
            intersections,
            variant: variant.into(),
        };
        path.reparametrize();
        path.validate()?;
        Ok(path)
    }

    fn reparametrize(&mut self) {
        let lengths: Vec<f64> = self.segments.iter().map(|s| if s.len() > 1 { s.param_span() } else { 0.0 }).collect();
        let total: f64 = lengths.iter().sum();
        let mut knots = vec![0.0];
        let mut acc = 0.0;
        for l in &lengths {
            acc += l;
            knots.push(if total > 0.0 { acc / total } else { 0.0 });
        }
        *knots.last_mut().unwrap() = 1.0;
        self.knots = knots;
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        if self.segments.is_empty() {
            return Err(PlanError::InvalidPath("no segments".into()));
        }
        if self.knots.len() != self.segments.len() + 1 {
            return Err(PlanError::InvalidPath("knot count does not match segments".into()));
        }
        for s in &self.segments {
            if s.len() > 1 {
                s.validate()?;
            }
        }
        for (i, w) in self.segments.windows(2).enumerate() {
            let gap = w[0].end().dist(w[1].start());
            if gap > 1e-8 {
                return Err(PlanError::InvalidPath(format!("segments {i} and {} are {gap:e} apart", i + 1)));
            }
        }
        for v in &self.vertices {
            let ok = self.segments.get(v.incoming).is_some_and(|s| s.end().dist(v.point) <= 1e-8)
                && self.segments.get(v.outgoing).is_some_and(|s| s.start().dist(v.point) <= 1e-8);
            if !ok {
                return Err(PlanError::InvalidPath(format!("vertex at {} is not a segment junction", v.point)));
            }
        }
        Ok(())
    }

    pub fn start(&self) -> ControlPoint {
        self.segments[0].start()
    }

    pub fn end(&self) -> ControlPoint {
        self.segments.last().unwrap().end()
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().filter(|s| s.len() > 1).map(|s| s.param_span()).sum()
    }

    /// Segment index and local parameter for a global `tau`.
    pub fn locate(&self, tau: f64) -> (usize, f64) {
        let tau = tau.clamp(0.0, 1.0);
        let mut i = self.knots.partition_point(|&k| k <= tau).saturating_sub(1).min(self.segments.len() - 1);
        while self.segments[i].len() < 2 && i + 1 < self.segments.len() {
            i += 1;
        }
        let s = &self.segments[i];
        if s.len() < 2 {
            return (i, s.params[0]);
        }
        let (k0, k1) = (self.knots[i], self.knots[i + 1]);
        let w = if k1 > k0 { ((tau - k0) / (k1 - k0)).clamp(0.0, 1.0) } else { 0.0 };
        (i, s.params[0] + w * s.param_span())
    }

    pub fn point(&self, tau: f64) -> ControlPoint {
        let (i, s) = self.locate(tau);
        let seg = &self.segments[i];
        if seg.len() < 2 {
            seg.start()
        } else {
            seg.spline().point(s)
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("path serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, PlanError> {
        let path: Self = serde_json::from_str(text)?;
        if path.schema != PATH_SCHEMA {
            return Err(PlanError::InvalidPath(format!("unsupported schema tag {:?}", path.schema)));
        }
        path.validate()?;
        Ok(path)
    }

    pub fn save(&self, file: impl AsRef<Path>) -> Result<(), PlanError> {
        std::fs::write(file, self.to_json())?;
        Ok(())
    }

    pub fn load(file: impl AsRef<Path>) -> Result<Self, PlanError> {
        Self::from_json(&std::fs::read_to_string(file)?)
    }
}

/// Inputs of [`plan`].
#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub model: &'a OperatorTriple,
    pub band: &'a Band,
    /// Crossings of levels `(lo, lo+1), (lo+1, lo+2), ...` in climbing order.
    pub intersections: &'a [Intersection],
    pub start: ControlPoint,
    pub end: Option<ControlPoint>,
    pub target: &'a SpreadTarget,
    pub config: PlanConfig,
    pub tol: Tolerances,
}

/// Synthesizes the climbing path: connector, incoming curve, vertex and
/// outgoing curve for every crossing, then an optional final connector.
pub fn plan(req: &PlanRequest) -> Result<ControlPath, PlanError> {
    let (model, band, tol) = (req.model, req.band, req.tol);
    let lo = band.lo();
    let m = req.intersections.len();
    let above: f64 = req.target.p.iter().skip(m + 1).map(|v| v * v).sum();
    if above > 0.0 {
        return Err(PlanError::InconsistentTarget { mass: above, top: lo + m });
    }
    if lo + m > band.hi() {
        return Err(PlanError::InvalidPath(format!("{m} crossings climb past the band [{lo}, {}]", band.hi())));
    }
    for (index, i) in req.intersections.iter().enumerate() {
        if i.lower != lo + index {
            return Err(PlanError::IntersectionOrder { index, lower: i.lower, expected: lo + index });
        }
    }
    let region = band.region;
    let spec = ConnectorSpec { model, lo: band.lo(), hi: band.hi(), region, tol, config: req.config.connector };

    let mut segments: Vec<CurveSegment> = Vec::new();
    let mut vertices = Vec::new();
    let mut current = req.start;
    let mut heading: Option<ControlPoint> = None;
    for (j, inter) in req.intersections.iter().enumerate() {
        let field = NonMixingField::new(model, inter.lower, region, tol);
        let dir = match req.config.approach.filter(|_| j == 0) {
            Some(a) => ControlPoint::polar(1.0, a),
            None => (current - inter.point).normalized(),
        };
        let entry = inter.point + dir * req.config.entry_radius;
        let (mut incoming, reached, alpha_minus) = integrate_to_singularity(&field, entry)?;
        if reached.point.dist(inter.point) > 1e-6 * (1.0 + inter.point.norm()) {
            return Err(PlanError::WrongCrossing { entry, reached: reached.point, expected: inter.point });
        }
        let into = field.eval(entry)?.vector.normalized();
        let link = connector(&ConnectorSpec { config: ConnectorConfig { seed: spec.config.seed.wrapping_add(j as u64), ..spec.config }, ..spec }, current, entry, heading, Some(into))?;
        if link.len() > 1 && link.param_span() > 1e-9 {
            segments.push(link);
        }

        let beta = req.target.beta(j);
        let options = splitting_angles(inter, alpha_minus, beta);
        let mut chosen = None;
        let mut last_err = None;
        for (n, &(alpha_plus, k)) in options.iter().enumerate() {
            match exit_curve(&field, inter, alpha_plus, req.config.exit_length) {
                Ok(seg) => {
                    chosen = Some((seg, alpha_plus, k, n as u8 + 1));
                    break;
                }
                Err(e @ NonMixingError::LeftRegion(_)) => last_err = Some(e),
                Err(e) => return Err(e.into()),
            }
        }
        let Some((mut outgoing, alpha_plus, k, option)) = chosen else {
            return Err(last_err.map(PlanError::from).unwrap_or(PlanError::InvalidPath("no exit".into())));
        };
        // Snap both curves onto the certified crossing.
        let last = incoming.len() - 1;
        incoming.u1[last] = inter.point.u1;
        incoming.u2[last] = inter.point.u2;
        outgoing.u1[0] = inter.point.u1;
        outgoing.u2[0] = inter.point.u2;
        incoming.vertex = Some(SegmentVertex { intersection: j, angle: alpha_minus });
        outgoing.vertex = Some(SegmentVertex { intersection: j, angle: alpha_plus });

        let n_in = segments.len();
        segments.push(incoming);
        segments.push(outgoing);
        vertices.push(Vertex {
            intersection: j,
            lower: inter.lower,
            point: inter.point,
            alpha_minus,
            alpha_plus,
            beta,
            option,
            k,
            xi_minus: inter.xi(alpha_minus),
            xi_plus: inter.xi(alpha_plus),
            incoming: n_in,
            outgoing: n_in + 1,
        });
        let out = segments.last().unwrap();
        current = out.end();
        heading = Some(two_jet(out, true)?.tangent.normalized());
    }
    if let Some(end) = req.end {
        let link = connector(&ConnectorSpec { config: ConnectorConfig { seed: spec.config.seed.wrapping_add(m as u64), ..spec.config }, ..spec }, current, end, heading, None)?;
        if link.len() > 1 && link.param_span() > 1e-9 || segments.is_empty() {
            segments.push(link);
        }
    }
    if segments.is_empty() {
        segments.push(CurveSegment { kind: SegmentKind::Connector, non_mixing: false, params: vec![0.0], u1: vec![current.u1], u2: vec![current.u2], vertex: None });
    }
    ControlPath::assemble(model, band, req.target.p.clone(), segments, vertices, req.intersections.to_vec(), "non_mixing")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantMode {
    /// Same one-sided tangents, curvature perturbed by `0.5 / diameter`.
    GenericC2,
    /// Same one-sided 2-jets as the non-mixing curves.
    JetMatched,
}

impl VariantMode {
    pub fn name(self) -> &'static str {
        match self {
            VariantMode::GenericC2 => "generic_c2",
            VariantMode::JetMatched => "jet_matched",
        }
    }
}

fn hermite_segment(kind: SegmentKind, q: &QuinticHermite, samples: usize) -> Result<CurveSegment, NonMixingError> {
    let pts: Vec<ControlPoint> = (0..samples).map(|k| q.jet(k as f64 / (samples - 1) as f64).point).collect();
    CurveSegment::from_points(kind, &pts)
}

/// Replaces every incoming/outgoing pair by polynomial curves through the
/// same crossing with the same one-sided tangents.
pub fn vertexless_variants(path: &ControlPath, mode: VariantMode, samples: usize) -> Result<ControlPath, PlanError> {
    let kappa = 0.5 / path.band.region.diameter();
    let mut segments = path.segments.clone();
    for v in &path.vertices {
        for (idx, at_vertex_end) in [(v.incoming, true), (v.outgoing, false)] {
            let seg = &path.segments[idx];
            let span = seg.param_span();
            let near = two_jet(seg, at_vertex_end)?;
            let far = two_jet(seg, !at_vertex_end)?;
            let t = near.tangent.normalized();
            let vertex_acc = match mode {
                VariantMode::JetMatched => near.curvature,
                VariantMode::GenericC2 => near.curvature + t.perp() * kappa,
            };
            let (s, e) = (seg.start(), seg.end());
            let q = if at_vertex_end {
                QuinticHermite::new(s, far.tangent * span, far.curvature * (span * span), e, near.tangent * span, vertex_acc * (span * span))
            } else {
                QuinticHermite::new(s, near.tangent * span, vertex_acc * (span * span), e, far.tangent * span, far.curvature * (span * span))
            };
            let mut replaced = hermite_segment(seg.kind, &q, samples.max(16))?;
            if let Some(p) = replaced.points().into_iter().find(|p| !path.band.region.contains(*p)) {
                return Err(PlanError::LeftRegion(p));
            }
            replaced.vertex = seg.vertex;
            segments[idx] = replaced;
        }
    }
    ControlPath::assemble_from(path, segments, mode.name())
}

impl ControlPath {
    fn assemble_from(base: &ControlPath, segments: Vec<CurveSegment>, variant: &str) -> Result<Self, PlanError> {
        let mut path = Self { segments, variant: variant.into(), knots: Vec::new(), ..base.clone() };
        path.reparametrize();
        path.validate()?;
        Ok(path)
    }

    /// A path that stays at one point.
    pub fn stationary(model: &OperatorTriple, band: &Band, u: ControlPoint, target: Vec<f64>) -> Result<Self, PlanError> {
        let seg = CurveSegment { kind: SegmentKind::Connector, non_mixing: false, params: vec![0.0], u1: vec![u.u1], u2: vec![u.u2], vertex: None };
        Self::assemble(model, band, target, vec![seg], Vec::new(), Vec::new(), "stationary")
    }

    /// A single connector path between two points.
    pub fn connector_only(spec: &ConnectorSpec, band: &Band, from: ControlPoint, to: ControlPoint, target: Vec<f64>) -> Result<Self, PlanError> {
        let seg = connector(spec, from, to, None, None)?;
        Self::assemble(spec.model, band, target, vec![seg], Vec::new(), Vec::new(), "connector")
    }

}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conical::{angle_diff, is_conical, locate_intersection};
    use crate::model::builtin;
    use crate::spectral::certify_band;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, TAU};

    fn pauli_setup() -> (OperatorTriple, Band, Intersection) {
        let m = builtin("pauli2").unwrap();
        let band = certify_band(&m, 0, 1, Region::disc(ControlPoint::ORIGIN, 2.0), 4.0).unwrap();
        let i = is_conical(&m, ControlPoint::ORIGIN, 0, &Tolerances::default()).unwrap();
        (m, band, i)
    }

    #[test]
    fn target_validation_names_the_invariant() {
        let e = SpreadTarget::new(vec![0.5, 0.5]).unwrap_err();
        assert!(e.to_string().contains("sum of squared amplitudes"));
        assert!(SpreadTarget::new(vec![1.2, 0.0]).is_err());
        assert!(SpreadTarget::new(vec![]).is_err());
        assert!(SpreadTarget::new(vec![0.6, 0.8]).is_ok());
    }

    #[test]
    fn betas_for_standard_targets() {
        assert_eq!(SpreadTarget::new(vec![0.0, 1.0]).unwrap().beta(0), FRAC_PI_2);
        assert_eq!(SpreadTarget::new(vec![1.0, 0.0]).unwrap().beta(0), 0.0);
        let h = 0.5f64.sqrt();
        assert!((SpreadTarget::new(vec![h, h]).unwrap().beta(0) - FRAC_PI_4).abs() < 1e-15);
        let t = SpreadTarget::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!((t.beta(0), t.beta(1)), (FRAC_PI_2, FRAC_PI_2));
        let t = SpreadTarget::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert_eq!((t.beta(0), t.beta(1)), (0.0, 0.0));
    }

    #[test]
    fn pauli_splitting_angles() {
        let (_, _, i) = pauli_setup();
        let [(a1, _), (a2, _)] = splitting_angles(&i, 0.0, FRAC_PI_4);
        assert!((a1 - FRAC_PI_2).abs() < 1e-12);
        assert!((a2 - 3.0 * FRAC_PI_2).abs() < 1e-12);
        for a in [0.0, 1.0, 4.0] {
            let [(x, _), (y, _)] = splitting_angles(&i, a, 0.0);
            assert_eq!((x, y), (a, a));
            let [(x, _), (y, _)] = splitting_angles(&i, a, FRAC_PI_2);
            assert!(angle_diff(x, a + PI).abs() < 1e-12 && angle_diff(y, a + PI).abs() < 1e-12);
        }
    }

    #[test]
    fn splitting_angles_realize_beta() {
        let m = builtin("three_level").unwrap();
        let tol = Tolerances::default();
        let i = locate_intersection(&m, 0, ControlPoint::new(1.4, 0.2), Region::disc(ControlPoint::new(1.25, 0.0), 0.5), &tol).unwrap();
        for ka in 0..24 {
            let am = TAU * (ka as f64 + 0.3) / 24.0;
            for kb in 0..=8 {
                let beta = FRAC_PI_2 * kb as f64 / 8.0;
                for (ap, _) in splitting_angles(&i, am, beta) {
                    let d = i.xi(ap) - i.xi(am);
                    assert!((d.cos().abs() - beta.cos()).abs() < 1e-10);
                    assert!((d.sin().abs() - beta.sin()).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn bookkeeping_reproduces_moduli() {
        let h = 1.0 / 3.0f64.sqrt();
        for p in [vec![0.0, 0.0, 1.0], vec![h, h, h], vec![0.6, 0.0, 0.8], vec![1.0, 0.0, 0.0], vec![0.0, 0.6, 0.8]] {
            let t = SpreadTarget::new(p.clone()).unwrap();
            let q = t.bookkeeping(2);
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn straight_connector_is_kept() {
        let (m, band, _) = pauli_setup();
        let spec = ConnectorSpec { model: &m, lo: 0, hi: 1, region: band.region, tol: Tolerances::default(), config: ConnectorConfig::default() };
        let (a, b) = (ControlPoint::new(1.0, 0.5), ControlPoint::new(1.0, -0.5));
        let seg = connector(&spec, a, b, None, None).unwrap();
        assert!((seg.chord_length() - 1.0).abs() < 1e-9);
        assert!(seg.points().iter().all(|p| (p.u1 - 1.0).abs() < 1e-12));
        let zero = connector(&spec, a, a, None, None).unwrap();
        assert_eq!(zero.len(), 1);
    }

    #[test]
    fn connector_detours_around_crossing() {
        let m = builtin("three_level").unwrap();
        let band = certify_band(&m, 0, 2, Region::rect([0.0, 2.5], [-1.0, 1.0]), 4.0).unwrap();
        let spec = ConnectorSpec { model: &m, lo: 0, hi: 2, region: band.region, tol: Tolerances::default(), config: ConnectorConfig::default() };
        let seg = connector(&spec, ControlPoint::new(0.5, 0.0), ControlPoint::new(2.0, 0.0), None, None).unwrap();
        let floor = spec.gap_floor();
        // Independent check on a finer resampling of the stored curve.
        let sp = seg.spline();
        let (t0, t1) = sp.domain();
        for k in 0..=5000 {
            let u = sp.point(t0 + (t1 - t0) * k as f64 / 5000.0);
            assert!(band_min_gap(&m, u, 0, 2).unwrap() > 0.5 * floor);
        }
        assert!(seg.points().iter().any(|p| p.u2.abs() > 1e-3));
    }

    #[test]
    fn full_transfer_plan_on_pauli() {
        let (m, band, i) = pauli_setup();
        let target = SpreadTarget::new(vec![0.0, 1.0]).unwrap();
        let req = PlanRequest {
            model: &m,
            band: &band,
            intersections: std::slice::from_ref(&i),
            start: ControlPoint::new(1.0, 0.4),
            end: None,
            target: &target,
            config: PlanConfig::default(),
            tol: Tolerances::default(),
        };
        let path = plan(&req).unwrap();
        assert_eq!(path.vertices.len(), 1);
        let v = &path.vertices[0];
        assert!(angle_diff(v.alpha_plus, v.alpha_minus + PI).abs() < 1e-9);
        assert_eq!(path.segments.len(), 3);
        assert_eq!(path.knots.first(), Some(&0.0));
        assert_eq!(path.knots.last(), Some(&1.0));
        assert!(path.point(0.0).dist(req.start) < 1e-12);
        let back = ControlPath::from_json(&path.to_json()).unwrap();
        assert_eq!(back.segments, path.segments);
        assert_eq!(back.vertices, path.vertices);
    }

    #[test]
    fn half_split_plan_on_pauli() {
        let (m, band, i) = pauli_setup();
        let h = 0.5f64.sqrt();
        let target = SpreadTarget::new(vec![h, h]).unwrap();
        let req = PlanRequest {
            model: &m,
            band: &band,
            intersections: std::slice::from_ref(&i),
            start: ControlPoint::new(-1.0, 0.3),
            end: Some(ControlPoint::new(1.0, 1.0)),
            target: &target,
            config: PlanConfig { approach: Some(0.0), ..Default::default() },
            tol: Tolerances::default(),
        };
        let path = plan(&req).unwrap();
        let v = &path.vertices[0];
        assert!(angle_diff(v.alpha_minus, 0.0).abs() < 1e-9);
        assert!((v.beta - FRAC_PI_4).abs() < 1e-15);
        assert!(angle_diff(v.alpha_plus, FRAC_PI_2).abs() < 1e-9);
        assert!(path.end().dist(ControlPoint::new(1.0, 1.0)) < 1e-12);
    }

    #[test]
    fn three_level_plan_has_two_vertices() {
        let m = builtin("three_level").unwrap();
        let tol = Tolerances::default();
        let band = certify_band(&m, 0, 2, Region::rect([-2.0, 2.0], [-1.0, 1.0]), 4.0).unwrap();
        let i0 = locate_intersection(&m, 0, ControlPoint::new(1.4, 0.2), band.region, &tol).unwrap();
        let i1 = locate_intersection(&m, 1, ControlPoint::new(-1.4, 0.2), band.region, &tol).unwrap();
        let target = SpreadTarget::new(vec![0.0, 0.0, 1.0]).unwrap();
        let req = PlanRequest {
            model: &m,
            band: &band,
            intersections: &[i0, i1],
            start: ControlPoint::new(1.5, 0.6),
            end: None,
            target: &target,
            config: PlanConfig { entry_radius: 0.3, exit_length: 0.3, ..Default::default() },
            tol,
        };
        let path = plan(&req).unwrap();
        assert_eq!(path.vertices.len(), 2);
        assert!(path.vertices.iter().all(|v| v.beta == FRAC_PI_2));
    }

    #[test]
    fn mass_above_last_crossing_is_rejected() {
        let (m, band, i) = pauli_setup();
        let target = SpreadTarget::new(vec![0.0, 0.0, 1.0]).unwrap();
        let req = PlanRequest {
            model: &m,
            band: &band,
            intersections: std::slice::from_ref(&i),
            start: ControlPoint::new(1.0, 0.4),
            end: None,
            target: &target,
            config: PlanConfig::default(),
            tol: Tolerances::default(),
        };
        assert!(matches!(plan(&req), Err(PlanError::InconsistentTarget { .. })));
    }

    #[test]
    fn variants_keep_tangents_and_region() {
        let (m, band, i) = pauli_setup();
        let target = SpreadTarget::new(vec![0.0, 1.0]).unwrap();
        let req = PlanRequest {
            model: &m,
            band: &band,
            intersections: std::slice::from_ref(&i),
            start: ControlPoint::new(1.0, 0.4),
            end: None,
            target: &target,
            config: PlanConfig::default(),
            tol: Tolerances::default(),
        };
        let path = plan(&req).unwrap();
        let v = &path.vertices[0];
        for mode in [VariantMode::GenericC2, VariantMode::JetMatched] {
            let var = vertexless_variants(&path, mode, 2000).unwrap();
            let inc = two_jet(&var.segments[v.incoming], true).unwrap();
            let out = two_jet(&var.segments[v.outgoing], false).unwrap();
            assert!(angle_diff((-inc.tangent).angle(), v.alpha_minus).abs() < 1e-6);
            assert!(angle_diff(out.tangent.angle(), v.alpha_plus).abs() < 1e-6);
            assert!(var.segments.iter().flat_map(|s| s.points()).all(|p| band.region.contains(p)));
            let kappa = inc.curvature.norm() / inc.tangent.norm().powi(2);
            match mode {
                VariantMode::JetMatched => {
                    assert!(kappa < 1e-4);
                    // Coincides with the ray near the vertex.
                    for p in var.segments[v.outgoing].points().iter().take(200) {
                        let r = p.dist(v.point);
                        let off = (*p - v.point).dot(ControlPoint::polar(1.0, v.alpha_plus).perp()).abs();
                        assert!(off <= 1e-3 * r * r * r + 1e-10);
                    }
                }
                VariantMode::GenericC2 => assert!((kappa - 0.5 / band.region.diameter()).abs() < 1e-3),
            }
        }
    }
}
