//! The non-mixing vector field of a level pair, its integral curves into and
//! out of a conical crossing, and endpoint 2-jets of curve segments.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conical::{conical_tol, conicity_unchecked, degeneracy_tol, is_conical, polish, wrap_angle, ConicalError, Intersection};
use crate::model::{ControlPoint, OperatorTriple};
use crate::ode::{integrate, Dp45Options, Flow, OdeError};
use crate::spectral::{align_signs, eigensystem, Region, SpectralError};
use crate::spline::PlanarSpline;
use crate::tolerances::Tolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonMixingError {
    #[error("curve left the region at {0}")]
    LeftRegion(ControlPoint),
    #[error("no descent at {point}: descent rate {rate:e}")]
    NoDescent { point: ControlPoint, rate: f64 },
    #[error("integration exceeded {0} steps")]
    MaxSteps(usize),
    #[error("too close to the crossing at {point} (gap {gap:e})")]
    Degenerate { point: ControlPoint, gap: f64 },
    #[error("integration anomaly: {0}")]
    Anomaly(String),
    #[error("segment has {0} samples, need at least 5")]
    InsufficientSamples(usize),
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
    #[error(transparent)]
    Certificate(#[from] ConicalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

fn ode_error(e: OdeError<NonMixingError>) -> NonMixingError {
    match e {
        OdeError::Rhs(e) => e,
        OdeError::MaxSteps(n) => NonMixingError::MaxSteps(n),
        OdeError::StepTooSmall { t, h } => NonMixingError::Anomaly(format!("step size {h:e} underflow at {t}")),
    }
}

/// One evaluation of the field.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub u: ControlPoint,
    /// The field vector; the pair gap decreases along it at rate `rate`.
    pub vector: ControlPoint,
    pub gap: f64,
    /// Descent rate `F(u) = 2 |det M|` of the pair gap along the field.
    pub rate: f64,
    /// `det M` in the eigenbasis returned by the solver at `u`.
    pub det: f64,
    pub pair: [DVector<f64>; 2],
}

/// Non-mixing field of the pair `(lower, lower + 1)` on `region`.
#[derive(Debug, Clone, Copy)]
pub struct NonMixingField<'a> {
    pub model: &'a OperatorTriple,
    pub lower: usize,
    pub region: Region,
    pub tol: Tolerances,
    sign: f64,
}

impl<'a> NonMixingField<'a> {
    pub fn new(model: &'a OperatorTriple, lower: usize, region: Region, tol: Tolerances) -> Self {
        Self { model, lower, region, tol, sign: 1.0 }
    }

    /// Same field with the sign rule inverted; gaps then grow along it.
    pub fn sabotaged(mut self) -> Self {
        self.sign = -self.sign;
        self
    }

    pub fn switch_radius(&self) -> f64 {
        self.tol.switch_frac * self.region.diameter()
    }

    /// Gap below which the Cartesian flow hands off to the polar form.
    pub fn switch_gap(&self) -> f64 {
        self.model.lipschitz() * self.switch_radius()
    }

    pub fn eval(&self, u: ControlPoint) -> Result<FieldSample, NonMixingError> {
        let es = eigensystem(self.model, u)?;
        let gap = es.gap(self.lower);
        if !(gap > degeneracy_tol(self.model, u, &self.tol)) {
            return Err(NonMixingError::Degenerate { point: u, gap });
        }
        let a = es.vector(self.lower);
        let b = es.vector(self.lower + 1);
        let m = conicity_unchecked(self.model, &a, &b);
        let raw = ControlPoint::new(-m.m[1][0], m.m[0][0]);
        let det = m.det();
        // The gap derivative along `raw` is 2 det M.
        let s = if det > 0.0 { -1.0 } else { 1.0 } * self.sign;
        Ok(FieldSample { u, vector: raw * s, gap, rate: 2.0 * det.abs(), det, pair: [a, b] })
    }

    /// Gradient of the pair gap.
    pub fn gap_gradient(&self, sample: &FieldSample) -> ControlPoint {
        let [a, b] = &sample.pair;
        let d = |h: &nalgebra::DMatrix<f64>| b.dot(&(h * b)) - a.dot(&(h * a));
        ControlPoint::new(d(self.model.h1()), d(self.model.h2()))
    }

    fn speed(&self, gap: f64) -> f64 {
        // Scaled so a unit step never jumps over the crossing.
        let g = gap / (2.0 * self.model.lipschitz());
        g / (1.0 + g / self.region.diameter())
    }

    fn step_opts(&self, h_max: f64) -> Dp45Options {
        Dp45Options { atol: self.tol.ode_atol, rtol: 0.0, h_init: h_max.min(1e-3), h_max, h_min: 1e-14, max_steps: 2_000_000 }
    }

    fn check_descent(&self, s: &FieldSample) -> Result<(), NonMixingError> {
        if !(s.rate > 2.0 * conical_tol(self.model, &self.tol)) {
            return Err(NonMixingError::NoDescent { point: s.u, rate: s.rate });
        }
        Ok(())
    }

    /// Integrates along `direction * X` (unit speed rescaled near the crossing)
    /// until `stop(gap, arc_length)` holds. Returns the accepted points.
    fn flow(
        &self,
        start: ControlPoint,
        direction: f64,
        h_max: f64,
        mut stop: impl FnMut(f64, f64) -> bool,
    ) -> Result<Vec<(ControlPoint, f64)>, NonMixingError> {
        let mut out: Vec<(ControlPoint, f64)> = Vec::new();
        let mut prev_pair: Option<nalgebra::DMatrix<f64>> = None;
        let rhs = |_: f64, y: &[f64; 3]| -> Result<[f64; 3], NonMixingError> {
            let s = self.eval(ControlPoint::new(y[0], y[1]))?;
            let v = s.vector.normalized() * (direction * self.speed(s.gap));
            Ok([v.u1, v.u2, self.speed(s.gap)])
        };
        let observe = |_: f64, y: &[f64; 3]| -> Result<Flow, NonMixingError> {
            let u = ControlPoint::new(y[0], y[1]);
            if !self.region.contains(u) {
                return Err(NonMixingError::LeftRegion(u));
            }
            let s = self.eval(u)?;
            self.check_descent(&s)?;
            let mut pair = nalgebra::DMatrix::from_columns(&s.pair);
            if let Some(prev) = &prev_pair {
                align_signs(prev, &mut pair, 0, 1, self.tol.overlap_min).map_err(|(i, ov)| {
                    NonMixingError::Anomaly(format!("eigenvector {} lost at {u} (overlap {ov:.3})", self.lower + i))
                })?;
            }
            prev_pair = Some(pair);
            out.push((u, s.gap));
            Ok(if stop(s.gap, y[2]) { Flow::Stop } else { Flow::Continue })
        };
        integrate(rhs, 0.0, [start.u1, start.u2, 0.0], 1e6, &self.step_opts(h_max), observe).map_err(ode_error)?;
        Ok(out)
    }

    fn sample_step(&self) -> f64 {
        10.0 / self.tol.samples_per_segment.max(10) as f64
    }

    /// Follows the field from `start` until the pair gap drops below `stop_gap`.
    pub fn descend(&self, start: ControlPoint, stop_gap: f64) -> Result<ControlPoint, NonMixingError> {
        let pts = self.flow(start, 1.0, 0.05, |g, _| g < stop_gap)?;
        Ok(pts.last().map(|p| p.0).unwrap_or(start))
    }

    /// Time-parametrized integral curve `u' = X(u)` for `duration`, sampled at
    /// every accepted step (step at most `max_dt`).
    pub fn trace(&self, start: ControlPoint, duration: f64, max_dt: f64) -> Result<Vec<FlowSample>, NonMixingError> {
        let mut out = Vec::new();
        let rhs = |_: f64, y: &[f64; 2]| -> Result<[f64; 2], NonMixingError> {
            let s = self.eval(ControlPoint::new(y[0], y[1]))?;
            Ok([s.vector.u1, s.vector.u2])
        };
        let observe = |t: f64, y: &[f64; 2]| -> Result<Flow, NonMixingError> {
            let u = ControlPoint::new(y[0], y[1]);
            if !self.region.contains(u) {
                return Ok(Flow::Stop);
            }
            let s = self.eval(u)?;
            if s.gap < self.switch_gap() {
                return Ok(Flow::Stop);
            }
            out.push(FlowSample { t, u, gap: s.gap, rate: s.rate });
            Ok(Flow::Continue)
        };
        let opts = Dp45Options { atol: self.tol.ode_atol * 1e-2, rtol: 0.0, h_init: max_dt, h_max: max_dt, h_min: 1e-14, max_steps: 10_000_000 };
        integrate(rhs, 0.0, [start.u1, start.u2], duration, &opts, observe).map_err(ode_error)?;
        Ok(out)
    }

    /// `d theta / d ln rho` of the field written in polar coordinates around `center`.
    fn polar_slope(&self, center: ControlPoint, rho: f64, theta: f64, incoming: bool) -> Result<f64, NonMixingError> {
        let u = center + ControlPoint::polar(rho, theta);
        let s = self.eval(u)?;
        let er = ControlPoint::polar(1.0, theta);
        let radial = s.vector.dot(er);
        if !(radial < 0.0) {
            return Err(NonMixingError::Anomaly(format!(
                "field is not inward at {u} (radial component {radial:e}) while {}",
                if incoming { "approaching" } else { "leaving" }
            )));
        }
        Ok(s.vector.dot(er.perp()) / radial)
    }

    /// Integrates `theta(ln rho)` between two radii; returns `(rho, theta)` samples.
    fn polar(&self, center: ControlPoint, rho_from: f64, rho_to: f64, theta0: f64, incoming: bool) -> Result<Vec<(f64, f64)>, NonMixingError> {
        let mut out = Vec::new();
        let rhs = |l: f64, y: &[f64; 1]| -> Result<[f64; 1], NonMixingError> { Ok([self.polar_slope(center, l.exp(), y[0], incoming)?]) };
        let observe = |l: f64, y: &[f64; 1]| -> Result<Flow, NonMixingError> {
            let u = center + ControlPoint::polar(l.exp(), y[0]);
            if !self.region.contains(u) {
                return Err(NonMixingError::LeftRegion(u));
            }
            out.push((l.exp(), y[0]));
            Ok(Flow::Continue)
        };
        let opts = Dp45Options { atol: self.tol.ode_atol, rtol: 0.0, h_init: 1e-3, h_max: 0.01, h_min: 1e-14, max_steps: 1_000_000 };
        integrate(rhs, rho_from.ln(), [theta0], rho_to.ln(), &opts, observe).map_err(ode_error)?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSample {
    pub t: f64,
    pub u: ControlPoint,
    pub gap: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    Connector,
    Incoming,
    Outgoing,
}

/// Vertex data carried by a segment touching a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentVertex {
    /// Index into the path's intersection list.
    pub intersection: usize,
    /// Incoming angle on incoming segments, outgoing angle on outgoing ones.
    pub angle: f64,
}

/// A sampled curve piece. `params` are strictly increasing; planned segments
/// use arc length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSegment {
    pub kind: SegmentKind,
    /// True when the segment is an integral curve of the non-mixing field.
    pub non_mixing: bool,
    pub params: Vec<f64>,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vertex: Option<SegmentVertex>,
}

impl CurveSegment {
    pub fn new(kind: SegmentKind, params: Vec<f64>, points: &[ControlPoint]) -> Result<Self, NonMixingError> {
        let seg = Self {
            kind,
            non_mixing: false,
            params,
            u1: points.iter().map(|p| p.u1).collect(),
            u2: points.iter().map(|p| p.u2).collect(),
            vertex: None,
        };
        seg.validate()?;
        Ok(seg)
    }

    /// Arc-length parametrized segment through `points` (duplicates dropped).
    pub fn from_points(kind: SegmentKind, points: &[ControlPoint]) -> Result<Self, NonMixingError> {
        let mut kept: Vec<ControlPoint> = Vec::with_capacity(points.len());
        let mut params = Vec::with_capacity(points.len());
        let mut s = 0.0;
        for &p in points {
            if let Some(&last) = kept.last() {
                let d = p.dist(last);
                if d <= 1e-14 {
                    continue;
                }
                s += d;
            }
            kept.push(p);
            params.push(s);
        }
        Self::new(kind, params, &kept)
    }

    pub fn validate(&self) -> Result<(), NonMixingError> {
        let n = self.params.len();
        if n < 2 || self.u1.len() != n || self.u2.len() != n {
            return Err(NonMixingError::InvalidSegment(format!("{n} samples with mismatched coordinates")));
        }
        if self.params.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(NonMixingError::InvalidSegment("parameters are not strictly increasing".into()));
        }
        if self.u1.iter().chain(&self.u2).chain(&self.params).any(|v| !v.is_finite()) {
            return Err(NonMixingError::InvalidSegment("non-finite sample".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn point(&self, i: usize) -> ControlPoint {
        ControlPoint::new(self.u1[i], self.u2[i])
    }

    pub fn points(&self) -> Vec<ControlPoint> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    pub fn start(&self) -> ControlPoint {
        self.point(0)
    }

    pub fn end(&self) -> ControlPoint {
        self.point(self.len() - 1)
    }

    pub fn param_span(&self) -> f64 {
        self.params[self.len() - 1] - self.params[0]
    }

    pub fn spline(&self) -> PlanarSpline {
        PlanarSpline::new(&self.params, &self.points(), None, None)
    }

    /// Polyline length.
    pub fn chord_length(&self) -> f64 {
        (1..self.len()).map(|i| self.point(i).dist(self.point(i - 1))).sum()
    }
}

/// Endpoint derivatives of a segment with respect to its parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoJet {
    pub tangent: ControlPoint,
    pub curvature: ControlPoint,
}

/// One-sided finite differences with Richardson extrapolation at the start
/// (`at_end = false`) or the end of a segment.
pub fn two_jet(segment: &CurveSegment, at_end: bool) -> Result<TwoJet, NonMixingError> {
    if segment.len() < 5 {
        return Err(NonMixingError::InsufficientSamples(segment.len()));
    }
    let spline = segment.spline();
    let (t0, t1) = spline.domain();
    let (origin, dir) = if at_end { (t1, -1.0) } else { (t0, 1.0) };
    let f = |h: f64, k: usize| spline.point(origin + dir * h * k as f64);
    let d1 = |h: f64| (f(h, 0) * 3.0 - f(h, 1) * 4.0 + f(h, 2)) * (-dir / (2.0 * h));
    let d2 = |h: f64| (f(h, 0) * 2.0 - f(h, 1) * 5.0 + f(h, 2) * 4.0 - f(h, 3)) * (1.0 / (h * h));
    let h = 1e-3 * (t1 - t0);
    let rich = |a: ControlPoint, b: ControlPoint| (b * 4.0 - a) * (1.0 / 3.0);
    Ok(TwoJet { tangent: rich(d1(h), d1(h / 2.0)), curvature: rich(d2(h), d2(h / 2.0)) })
}

/// Follows the field from `start` into the crossing of its pair.
///
/// Returns the incoming segment (ending exactly at the crossing, carrying the
/// incoming angle `alpha_minus` with unit tangent `-(cos, sin)(alpha_minus)`)
/// and the certificate of the crossing reached.
pub fn integrate_to_singularity(field: &NonMixingField, start: ControlPoint) -> Result<(CurveSegment, Intersection, f64), NonMixingError> {
    if !field.region.contains(start) {
        return Err(NonMixingError::LeftRegion(start));
    }
    let switch_gap = field.switch_gap();
    let cart = field.flow(start, 1.0, field.sample_step(), |g, _| g < switch_gap)?;
    let handoff = cart.last().map(|p| p.0).unwrap_or(start);
    let centre = polish(field.model, field.lower, handoff, &field.region, &field.tol)?;
    let intersection = is_conical(field.model, centre, field.lower, &field.tol)?;

    let rel = handoff - centre;
    let rho0 = rel.norm();
    let rho_end = rho0 * 1e-3;
    let polar = field.polar(centre, rho0, rho_end, rel.angle(), true)?;
    let &(rho_last, theta_last) = polar.last().expect("polar integration records its start");
    let alpha_minus = wrap_angle(theta_last - field.polar_slope(centre, rho_last, theta_last, true)?);

    let mut points: Vec<ControlPoint> = cart.iter().map(|p| p.0).collect();
    points.extend(polar.iter().skip(1).map(|&(r, t)| centre + ControlPoint::polar(r, t)));
    points.push(centre);
    let mut seg = CurveSegment::from_points(SegmentKind::Incoming, &points)?;
    seg.non_mixing = true;
    seg.vertex = Some(SegmentVertex { intersection: 0, angle: alpha_minus });
    Ok((seg, intersection, alpha_minus))
}

/// Integral curve of `-X` leaving the crossing with unit tangent
/// `(cos, sin)(alpha_plus)`, continued until its arc length reaches `length`.
pub fn exit_curve(field: &NonMixingField, intersection: &Intersection, alpha_plus: f64, length: f64) -> Result<CurveSegment, NonMixingError> {
    let centre = intersection.point;
    let rho_switch = field.switch_radius().min(length);
    let rho_start = rho_switch * 1e-3;
    let slope = field.polar_slope(centre, rho_start, alpha_plus, false)?;
    let polar = field.polar(centre, rho_start, rho_switch, alpha_plus + slope, false)?;

    let mut points = vec![centre];
    points.extend(polar.iter().map(|&(r, t)| centre + ControlPoint::polar(r, t)));
    let done: f64 = points.windows(2).map(|w| w[1].dist(w[0])).sum();
    if length > done {
        let from = *points.last().unwrap();
        let rest = length - done;
        let cart = field.flow(from, -1.0, field.sample_step(), |_, s| s >= rest)?;
        points.extend(cart.iter().skip(1).map(|p| p.0));
    }
    let mut seg = CurveSegment::from_points(SegmentKind::Outgoing, &points)?;
    seg.non_mixing = true;
    seg.vertex = Some(SegmentVertex { intersection: 0, angle: wrap_angle(alpha_plus) });
    Ok(seg)
}
