//! Dormand-Prince 5(4) integrator with fallible right-hand sides and an
//! observer that may stop the integration early.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dp45Options {
    pub atol: f64,
    pub rtol: f64,
    pub h_init: f64,
    pub h_max: f64,
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Dp45Options {
    fn default() -> Self {
        Self { atol: 1e-10, rtol: 1e-10, h_init: 1e-3, h_max: f64::INFINITY, h_min: 1e-14, max_steps: 1_000_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeError<E> {
    Rhs(E),
    MaxSteps(usize),
    StepTooSmall { t: f64, h: f64 },
}

impl<E> From<E> for OdeError<E> {
    fn from(e: E) -> Self {
        OdeError::Rhs(e)
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` towards `t_end` (either direction).
/// `observe` sees the initial point and every accepted step; returning
/// [`Flow::Stop`] ends the integration at that point.
pub fn integrate<const N: usize, E>(
    mut f: impl FnMut(f64, &[f64; N]) -> Result<[f64; N], E>,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &Dp45Options,
    mut observe: impl FnMut(f64, &[f64; N]) -> Result<Flow, E>,
) -> Result<(f64, [f64; N]), OdeError<E>> {
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut t = t0;
    let mut y = y0;
    if observe(t, &y)? == Flow::Stop || t == t_end {
        return Ok((t, y));
    }
    let mut h = opts.h_init.min(opts.h_max).min((t_end - t0).abs());
    let mut k = [[0.0; N]; 7];
    k[0] = f(t, &y)?;
    let mut steps = 0usize;
    loop {
        if steps >= opts.max_steps {
            return Err(OdeError::MaxSteps(steps));
        }
        steps += 1;
        let remaining = (t_end - t).abs();
        let last = h >= remaining;
        let step = if last { remaining } else { h };
        for s in 1..7 {
            let mut ys = y;
            for (i, v) in ys.iter_mut().enumerate() {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * k[j][i];
                }
                *v += dir * step * acc;
            }
            k[s] = f(t + dir * step * C[s], &ys)?;
        }
        let mut y5 = y;
        let mut err = 0.0f64;
        for i in 0..N {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][i];
                d4 += B4[s] * k[s][i];
            }
            y5[i] += dir * step * d5;
            let sc = opts.atol + opts.rtol * y[i].abs().max(y5[i].abs());
            err = err.max((step * (d5 - d4)).abs() / sc);
        }
        if err <= 1.0 || step <= opts.h_min {
            t = if last { t_end } else { t + dir * step };
            y = y5;
            k[0] = k[6];
            if observe(t, &y)? == Flow::Stop || last {
                return Ok((t, y));
            }
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h = (step * factor).min(opts.h_max);
        if h < opts.h_min && err > 1.0 {
            return Err(OdeError::StepTooSmall { t, h });
        }
    }
}
