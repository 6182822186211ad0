//! Epsilon sweeps, log-log slope fits and the reference scenarios used by
//! the acceptance suite.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::conical::{is_conical, locate_intersection, ConicalError};
use crate::model::{builtin, ControlPoint, ModelError, OperatorTriple};
use crate::planner::{plan, vertexless_variants, ControlPath, PlanConfig, PlanError, PlanRequest, SpreadTarget, VariantMode};
use crate::propagate::{eigenstate, propagate_adiabatic, propagate_full, PropagateError, SimulationResult};
use crate::spectral::{certify_band, Region, SpectralError};
use crate::tolerances::Tolerances;

pub const SWEEP_SCHEMA: &str = "conic-climb/sweep/1";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("slope fit needs at least 4 positive points, got {0}")]
    TooFewPoints(usize),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Certificate(#[from] ConicalError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Propagate(#[from] PropagateError),
    #[error("CSV output: {0}")]
    Csv(#[from] csv::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// `n` values from `hi` down to `lo`, equally spaced in `log`.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    (0..n).map(|k| (hi.ln() + (lo.ln() - hi.ln()) * k as f64 / (n - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence half-width of the slope.
    pub half_width: f64,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

/// Least-squares fit of `ln error = intercept + slope ln epsilon`.
pub fn fit_slope(epsilons: &[f64], errors: &[f64]) -> Result<SlopeFit, ExperimentError> {
    let pts: Vec<(f64, f64)> = epsilons
        .iter()
        .zip(errors)
        .filter(|(e, r)| **e > 0.0 && **r > 0.0 && r.is_finite())
        .map(|(e, r)| (e.ln(), r.ln()))
        .collect();
    let n = pts.len();
    if n < 4 {
        return Err(ExperimentError::TooFewPoints(n));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = pts.iter().map(|p| p.1 - intercept - slope * p.0).collect();
    let sse: f64 = residuals.iter().map(|r| r * r).sum();
    let se = (sse / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).map(|d| d.inverse_cdf(0.975)).unwrap_or(f64::NAN);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    Ok(SlopeFit { slope, intercept, half_width: t * se, residuals, r_squared })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    Adiabatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub epsilons: Vec<f64>,
    pub method: Method,
    /// Expected exponent and accepted distance from it.
    pub expected: Option<(f64, f64)>,
    /// Permits epsilon below 1e-3.
    pub allow_small: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(ExperimentError::InvalidSweep(format!("epsilon {e} is not positive")));
        }
        let mut sorted = self.epsilons.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() < 4 {
            return Err(ExperimentError::InvalidSweep(format!("need at least 4 distinct epsilon values, got {}", sorted.len())));
        }
        let decades = (sorted[sorted.len() - 1] / sorted[0]).log10();
        if decades < 1.5 - 1e-12 {
            return Err(ExperimentError::InvalidSweep(format!("epsilon range spans {decades:.2} decades, need at least 1.5")));
        }
        if !self.allow_small && sorted[0] < 1e-3 * (1.0 - 1e-12) {
            return Err(ExperimentError::InvalidSweep(format!("epsilon {:e} is below 1e-3; pass the small-epsilon flag to allow it", sorted[0])));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub error: Option<f64>,
    pub overlaps: Vec<f64>,
    pub leak: Option<f64>,
    pub steps: u64,
    pub seconds: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub schema: String,
    pub model: String,
    pub variant: String,
    pub method: Method,
    pub rows: Vec<SweepRow>,
    pub fit: Option<SlopeFit>,
    pub fit_error: Option<String>,
    pub expected: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: Option<bool>,
}

impl ScalingReport {
    /// Copy with wall-clock fields zeroed, for reproducible output.
    pub fn without_timings(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.rows {
            r.seconds = 0.0;
        }
        out
    }

    pub fn write_csv(&self, out: impl Write, timings: bool) -> Result<(), ExperimentError> {
        let width = self.rows.iter().map(|r| r.overlaps.len()).max().unwrap_or(0);
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["epsilon".to_string(), "error".into()];
        header.extend((0..width).map(|l| format!("overlap_{l}")));
        header.extend(["leak".to_string(), "steps".into(), "seconds".into()]);
        w.write_record(&header)?;
        let num = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![format!("{:e}", r.epsilon), num(r.error)];
            rec.extend((0..width).map(|l| num(r.overlaps.get(l).copied())));
            rec.push(num(r.leak));
            rec.push(r.steps.to_string());
            rec.push(if timings { format!("{:.6}", r.seconds) } else { String::new() });
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_one(model: &OperatorTriple, path: &ControlPath, eps: f64, method: Method, tol: &Tolerances) -> Result<SimulationResult, PropagateError> {
    let psi0 = eigenstate(model, path.start(), path.band.lo())?;
    match method {
        Method::Full => propagate_full(model, path, eps, &psi0, tol),
        Method::Adiabatic => propagate_adiabatic(model, path, eps, &psi0, tol),
    }
}

/// Runs the path at every epsilon (in parallel, rows in input order) and fits
/// the error exponent.
pub fn sweep(model: &OperatorTriple, path: &ControlPath, spec: &SweepSpec, tol: &Tolerances) -> Result<ScalingReport, ExperimentError> {
    spec.validate()?;
    let rows: Vec<SweepRow> = spec
        .epsilons
        .par_iter()
        .map(|&eps| match run_one(model, path, eps, spec.method, tol) {
            Ok(r) => SweepRow { epsilon: eps, error: Some(r.error), overlaps: r.overlaps, leak: Some(r.leak), steps: r.steps, seconds: r.seconds, failure: None },
            Err(e) => SweepRow { epsilon: eps, error: None, overlaps: Vec::new(), leak: None, steps: 0, seconds: 0.0, failure: Some(e.to_string()) },
        })
        .collect();
    let ok: Vec<&SweepRow> = rows.iter().filter(|r| r.error.is_some()).collect();
    let eps: Vec<f64> = ok.iter().map(|r| r.epsilon).collect();
    let errs: Vec<f64> = ok.iter().map(|r| r.error.unwrap()).collect();
    let (fit, fit_error) = match fit_slope(&eps, &errs) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let pass = match (&fit, spec.expected) {
        (Some(f), Some((q, w))) => Some((f.slope - q).abs() <= w),
        (None, Some(_)) => Some(false),
        _ => None,
    };
    Ok(ScalingReport {
        schema: SWEEP_SCHEMA.into(),
        model: model.name().into(),
        variant: path.variant.clone(),
        method: spec.method,
        rows,
        fit,
        fit_error,
        expected: spec.expected.map(|e| e.0),
        tolerance: spec.expected.map(|e| e.1),
        pass,
    })
}

/// Reference two-level geometry: the crossing of `pauli2` at the origin,
/// approached along the positive `u1` axis from an off-axis start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PauliGeometry {
    pub region_radius: f64,
    pub start: ControlPoint,
    pub entry_radius: f64,
    pub exit_length: f64,
}

impl Default for PauliGeometry {
    fn default() -> Self {
        Self { region_radius: 50.0, start: ControlPoint::new(40.0, 3.0), entry_radius: 20.0, exit_length: 20.0 }
    }
}

/// Planned `pauli2` vertex path splitting the ground state with angle `beta`.
pub fn pauli_vertex_path(geometry: &PauliGeometry, beta: f64, tol: &Tolerances) -> Result<(OperatorTriple, ControlPath), ExperimentError> {
    let model = builtin("pauli2")?;
    let band = certify_band(&model, 0, 1, Region::disc(ControlPoint::ORIGIN, geometry.region_radius), 4.0)?;
    let crossing = is_conical(&model, ControlPoint::ORIGIN, 0, tol)?;
    let (c, s) = (beta.cos(), beta.sin());
    // Flush rounding residue at beta = 0 and pi/2 to exact zeros.
    let clean = |v: f64| if v.abs() < 1e-15 { 0.0 } else { v };
    let target = SpreadTarget::new(vec![clean(c), clean(s)])?;
    let req = PlanRequest {
        model: &model,
        band: &band,
        intersections: std::slice::from_ref(&crossing),
        start: geometry.start,
        end: None,
        target: &target,
        config: PlanConfig { entry_radius: geometry.entry_radius, exit_length: geometry.exit_length, approach: Some(0.0), ..Default::default() },
        tol: *tol,
    };
    let path = plan(&req)?;
    Ok((model, path))
}

/// The same path with its non-mixing pieces replaced.
pub fn variant_path(path: &ControlPath, mode: VariantMode) -> Result<ControlPath, ExperimentError> {
    Ok(vertexless_variants(path, mode, 4000)?)
}

/// Two-vertex climb on `three_level` towards `target`.
pub fn three_level_path(target: &[f64], tol: &Tolerances) -> Result<(OperatorTriple, ControlPath), ExperimentError> {
    let model = builtin("three_level")?;
    let band = certify_band(&model, 0, 2, Region::rect([-3.0, 3.0], [-2.0, 2.0]), 4.0)?;
    let i0 = locate_intersection(&model, 0, ControlPoint::new(1.3, 0.1), band.region, tol)?;
    let i1 = locate_intersection(&model, 1, ControlPoint::new(-1.3, 0.1), band.region, tol)?;
    let target = SpreadTarget::new(target.to_vec())?;
    let req = PlanRequest {
        model: &model,
        band: &band,
        intersections: &[i0, i1],
        start: ControlPoint::new(2.5, 0.8),
        end: None,
        target: &target,
        config: PlanConfig { entry_radius: 0.5, exit_length: 0.8, approach: None, ..Default::default() },
        tol: *tol,
    };
    let path = plan(&req)?;
    Ok((model, path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn log_space_endpoints() {
        let v = log_space(1e-3, 1e-1, 7);
        assert_eq!(v.len(), 7);
        assert!((v[0] - 1e-1).abs() < 1e-15 && (v[6] - 1e-3).abs() < 1e-17);
        assert!((v[3] - 1e-2).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn synthetic_power_law_recovered(q in 0.2f64..2.0, a in 1e-3f64..10.0) {
            let eps = log_space(1e-3, 1e-1, 6);
            let err: Vec<f64> = eps.iter().map(|e| a * e.powf(q)).collect();
            let fit = fit_slope(&eps, &err).unwrap();
            prop_assert!((fit.slope - q).abs() < 1e-6);
            prop_assert!((fit.intercept - a.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn fit_needs_four_points() {
        assert!(matches!(fit_slope(&[1e-1, 1e-2, 1e-3], &[1.0, 0.1, 0.01]), Err(ExperimentError::TooFewPoints(3))));
        assert!(matches!(fit_slope(&[1e-1, 1e-2, 1e-3, 1e-4], &[1.0, 0.0, 0.01, 1e-3]), Err(ExperimentError::TooFewPoints(3))));
    }

    #[test]
    fn noisy_fit_has_positive_half_width() {
        let eps = log_space(1e-3, 1e-1, 6);
        let err: Vec<f64> = eps.iter().enumerate().map(|(k, e)| e * if k % 2 == 0 { 1.1 } else { 0.9 }).collect();
        let fit = fit_slope(&eps, &err).unwrap();
        assert!(fit.half_width > 0.0 && (fit.slope - 1.0).abs() < 0.1);
    }

    #[test]
    fn sweep_spec_validation() {
        let ok = SweepSpec { epsilons: log_space(1e-3, 1e-1, 6), method: Method::Full, expected: None, allow_small: false };
        assert!(ok.validate().is_ok());
        let narrow = SweepSpec { epsilons: log_space(1e-2, 1e-1, 6), ..ok.clone() };
        assert!(narrow.validate().is_err());
        let small = SweepSpec { epsilons: log_space(1e-4, 1e-2, 6), ..ok.clone() };
        assert!(small.validate().is_err());
        assert!(SweepSpec { allow_small: true, ..small }.validate().is_ok());
        let few = SweepSpec { epsilons: vec![1e-1, 1e-2, 1e-3], ..ok.clone() };
        assert!(few.validate().is_err());
        let neg = SweepSpec { epsilons: vec![1e-1, 1e-2, 1e-3, -1.0], ..ok };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn csv_has_one_row_per_epsilon() {
        let report = ScalingReport {
            schema: SWEEP_SCHEMA.into(),
            model: "m".into(),
            variant: "v".into(),
            method: Method::Full,
            rows: vec![
                SweepRow { epsilon: 0.1, error: Some(0.01), overlaps: vec![0.1, 0.99], leak: Some(0.0), steps: 10, seconds: 0.5, failure: None },
                SweepRow { epsilon: 0.01, error: None, overlaps: vec![], leak: None, steps: 0, seconds: 0.0, failure: Some("x".into()) },
            ],
            fit: None,
            fit_error: None,
            expected: None,
            tolerance: None,
            pass: None,
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epsilon,error,overlap_0,overlap_1,leak,steps,seconds");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",10,"));
    }

    #[test]
    fn connector_only_sweep_has_unit_slope() {
        let tol = Tolerances::default();
        let model = builtin("pauli2").unwrap();
        let band = certify_band(&model, 0, 1, Region::disc(ControlPoint::ORIGIN, 50.0), 4.0).unwrap();
        let spec = crate::planner::ConnectorSpec { model: &model, lo: 0, hi: 1, region: band.region, tol, config: Default::default() };
        let path = ControlPath::connector_only(&spec, &band, ControlPoint::new(30.0, 10.0), ControlPoint::new(10.0, 30.0), vec![1.0, 0.0]).unwrap();
        let sweep_spec = SweepSpec { epsilons: log_space(1e-3, 1e-1, 6), method: Method::Full, expected: Some((1.0, 0.15)), allow_small: false };
        let r = sweep(&model, &path, &sweep_spec, &tol).unwrap();
        assert_eq!(r.pass, Some(true), "{:?}", r.fit);
    }
}
