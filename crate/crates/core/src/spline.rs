//! Cubic splines on arbitrary increasing knots and planar curves built from them.

use crate::model::ControlPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndCondition {
    Natural,
    /// Prescribed first derivative.
    Clamped(f64),
    /// First derivative from a one-sided quadratic through the three end samples.
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

/// Derivative at `x[0]` of the quadratic through the first three samples.
fn one_sided_slope(x: [f64; 3], y: [f64; 3]) -> f64 {
    let h0 = x[1] - x[0];
    let h1 = x[2] - x[1];
    -y[0] * (2.0 * h0 + h1) / (h0 * (h0 + h1)) + y[1] * (h0 + h1) / (h0 * h1) - y[2] * h0 / (h1 * (h0 + h1))
}

impl CubicSpline {
    /// Needs at least two strictly increasing knots.
    pub fn new(x: &[f64], y: &[f64], start: EndCondition, end: EndCondition) -> Self {
        assert!(x.len() >= 2 && x.len() == y.len(), "spline needs >= 2 matching samples");
        let n = x.len() - 1;
        let resolve = |cond: EndCondition, at_start: bool| match cond {
            EndCondition::Estimated if n >= 2 => {
                if at_start {
                    EndCondition::Clamped(one_sided_slope([x[0], x[1], x[2]], [y[0], y[1], y[2]]))
                } else {
                    let s = one_sided_slope([-x[n], -x[n - 1], -x[n - 2]], [y[n], y[n - 1], y[n - 2]]);
                    EndCondition::Clamped(-s)
                }
            }
            EndCondition::Estimated => EndCondition::Natural,
            c => c,
        };
        let start = resolve(start, true);
        let end = resolve(end, false);

        let h: Vec<f64> = (0..n).map(|i| x[i + 1] - x[i]).collect();
        let mut a = vec![0.0; n + 1];
        let mut b = vec![0.0; n + 1];
        let mut c = vec![0.0; n + 1];
        let mut d = vec![0.0; n + 1];
        match start {
            EndCondition::Clamped(s) => {
                b[0] = 2.0 * h[0];
                c[0] = h[0];
                d[0] = 6.0 * ((y[1] - y[0]) / h[0] - s);
            }
            _ => b[0] = 1.0,
        }
        for i in 1..n {
            a[i] = h[i - 1];
            b[i] = 2.0 * (h[i - 1] + h[i]);
            c[i] = h[i];
            d[i] = 6.0 * ((y[i + 1] - y[i]) / h[i] - (y[i] - y[i - 1]) / h[i - 1]);
        }
        match end {
            EndCondition::Clamped(s) => {
                a[n] = h[n - 1];
                b[n] = 2.0 * h[n - 1];
                d[n] = 6.0 * (s - (y[n] - y[n - 1]) / h[n - 1]);
            }
            _ => b[n] = 1.0,
        }
        for i in 1..=n {
            let w = a[i] / b[i - 1];
            b[i] -= w * c[i - 1];
            d[i] -= w * d[i - 1];
        }
        let mut m = vec![0.0; n + 1];
        m[n] = d[n] / b[n];
        for i in (0..n).rev() {
            m[i] = (d[i] - c[i] * m[i + 1]) / b[i];
        }
        Self { x: x.to_vec(), y: y.to_vec(), m }
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], *self.x.last().unwrap())
    }

    /// Value, first and second derivative. Outside the knots the end cubic is extended.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let n = self.x.len() - 1;
        let k = self.x.partition_point(|&v| v <= t).saturating_sub(1).min(n - 1);
        let h = self.x[k + 1] - self.x[k];
        let a = (self.x[k + 1] - t) / h;
        let b = (t - self.x[k]) / h;
        let (mk, mk1) = (self.m[k], self.m[k + 1]);
        let f = a * self.y[k] + b * self.y[k + 1] + ((a * a * a - a) * mk + (b * b * b - b) * mk1) * h * h / 6.0;
        let df = (self.y[k + 1] - self.y[k]) / h - (3.0 * a * a - 1.0) / 6.0 * h * mk + (3.0 * b * b - 1.0) / 6.0 * h * mk1;
        let ddf = a * mk + b * mk1;
        (f, df, ddf)
    }
}

/// Point, velocity and acceleration of a planar curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveJet {
    pub point: ControlPoint,
    pub velocity: ControlPoint,
    pub acceleration: ControlPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarSpline {
    sx: CubicSpline,
    sy: CubicSpline,
}

impl PlanarSpline {
    pub fn new(t: &[f64], points: &[ControlPoint], start: Option<ControlPoint>, end: Option<ControlPoint>) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| p.u1).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.u2).collect();
        let cond = |d: Option<ControlPoint>, pick: fn(ControlPoint) -> f64| match d {
            Some(v) => EndCondition::Clamped(pick(v)),
            None => EndCondition::Estimated,
        };
        Self {
            sx: CubicSpline::new(t, &xs, cond(start, |p| p.u1), cond(end, |p| p.u1)),
            sy: CubicSpline::new(t, &ys, cond(start, |p| p.u2), cond(end, |p| p.u2)),
        }
    }

    /// Spline with natural end conditions, used for free connector ends.
    pub fn natural(t: &[f64], points: &[ControlPoint], start: Option<ControlPoint>, end: Option<ControlPoint>) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| p.u1).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.u2).collect();
        let cond = |d: Option<ControlPoint>, pick: fn(ControlPoint) -> f64| match d {
            Some(v) => EndCondition::Clamped(pick(v)),
            None => EndCondition::Natural,
        };
        Self {
            sx: CubicSpline::new(t, &xs, cond(start, |p| p.u1), cond(end, |p| p.u1)),
            sy: CubicSpline::new(t, &ys, cond(start, |p| p.u2), cond(end, |p| p.u2)),
        }
    }

    pub fn domain(&self) -> (f64, f64) {
        self.sx.domain()
    }

    pub fn point(&self, t: f64) -> ControlPoint {
        ControlPoint::new(self.sx.eval(t).0, self.sy.eval(t).0)
    }

    pub fn jet(&self, t: f64) -> CurveJet {
        let (x, dx, ddx) = self.sx.eval(t);
        let (y, dy, ddy) = self.sy.eval(t);
        CurveJet {
            point: ControlPoint::new(x, y),
            velocity: ControlPoint::new(dx, dy),
            acceleration: ControlPoint::new(ddx, ddy),
        }
    }
}

/// Quintic Hermite interpolant on `t in [0, 1]` matching position, first and
/// second derivative at both ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuinticHermite {
    coeffs: [ControlPoint; 6],
}

impl QuinticHermite {
    pub fn new(p0: ControlPoint, v0: ControlPoint, a0: ControlPoint, p1: ControlPoint, v1: ControlPoint, a1: ControlPoint) -> Self {
        let c0 = p0;
        let c1 = v0;
        let c2 = a0 * 0.5;
        // Remaining coefficients solve the 3x3 end system in closed form.
        let r0 = p1 - p0 - v0 - a0 * 0.5;
        let r1 = v1 - v0 - a0;
        let r2 = a1 - a0;
        let c3 = r0 * 10.0 - r1 * 4.0 + r2 * 0.5;
        let c4 = r0 * -15.0 + r1 * 7.0 - r2;
        let c5 = r0 * 6.0 - r1 * 3.0 + r2 * 0.5;
        Self { coeffs: [c0, c1, c2, c3, c4, c5] }
    }

    pub fn jet(&self, t: f64) -> CurveJet {
        let c = &self.coeffs;
        let mut p = c[5];
        for k in (0..5).rev() {
            p = p * t + c[k];
        }
        let mut v = c[5] * 5.0;
        for k in (1..5).rev() {
            v = v * t + c[k] * k as f64;
        }
        let mut a = c[5] * 20.0;
        for k in (2..5).rev() {
            a = a * t + c[k] * (k * (k - 1)) as f64;
        }
        CurveJet { point: p, velocity: v, acceleration: a }
    }
}
