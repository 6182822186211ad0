use serde::{Deserialize, Serialize};

/// Numerical thresholds shared by the spectral, conical, non-mixing and
/// propagation code. Every field can be overridden from the CLI through
/// `--tol-overrides '{"name": value}'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Eigenvalues closer than `simple_rel * scale` count as degenerate along curves.
    pub simple_rel: f64,
    /// Minimum |overlap| between consecutive tracked eigenvectors.
    pub overlap_min: f64,
    /// A pair is "degenerate" at a point when its gap is below `degeneracy_rel * scale`.
    pub degeneracy_rel: f64,
    /// |det M| must exceed `conical_rel * (|H1| + |H2|)^2`.
    pub conical_rel: f64,
    /// Absolute tolerance of the embedded Runge-Kutta integrator on u.
    pub ode_atol: f64,
    /// Cartesian to polar handoff radius as a fraction of the region diameter.
    pub switch_frac: f64,
    /// Propagator step bound: dtau <= c_step * eps / |H|.
    pub c_step: f64,
    /// Hard cap on propagator steps for one run.
    pub max_steps: u64,
    /// Allowed drift of the state norm at the end of a run.
    pub norm_tol: f64,
    /// Mixing coefficient bound on non-mixing segments, relative to (|H1|+|H2|)|u'|/gap.
    pub b_tol_rel: f64,
    /// Connector paths must keep every band gap above `connector_gap_rel * (|H1|+|H2|)`.
    pub connector_gap_rel: f64,
    /// Sample density of integrated and planned curve segments.
    pub samples_per_segment: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            simple_rel: 1e-8,
            overlap_min: 0.9,
            degeneracy_rel: 1e-8,
            conical_rel: 1e-6,
            ode_atol: 1e-10,
            switch_frac: 1e-3,
            c_step: 0.1,
            max_steps: 100_000_000,
            norm_tol: 1e-9,
            b_tol_rel: 1e-4,
            connector_gap_rel: 1e-2,
            samples_per_segment: 10_000,
        }
    }
}

impl Tolerances {
    /// Applies a JSON object of overrides on top of `self`.
    pub fn with_overrides(&self, json: &str) -> Result<Self, serde_json::Error> {
        let mut base = serde_json::to_value(self)?;
        let patch: serde_json::Value = serde_json::from_str(json)?;
        if let (Some(obj), Some(p)) = (base.as_object_mut(), patch.as_object()) {
            for (k, v) in p {
                obj.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(base)
    }
}
