//! Operator triples `(H0, H1, H2)` and the family `H(u) = H0 + u1 H1 + u2 H2`.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_SCHEMA: &str = "conic-climb/model/1";
pub const BUILTIN_NAMES: [&str; 3] = ["pauli2", "three_level", "galerkin_demo"];

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model file parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("matrix {name} is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { name: &'static str, asymmetry: f64 },
    #[error("matrix {name} has {got} entries, expected dim^2 = {expected}")]
    Length { name: &'static str, expected: usize, got: usize },
    #[error("invalid dimension {0}: need dim >= 2 and square matrices of equal size")]
    Dimension(usize),
    #[error("matrix {0} contains non-finite entries")]
    NonFinite(&'static str),
    #[error("unsupported schema tag {0:?}")]
    Schema(String),
    #[error("unknown model {name:?}; available: {}", .available.join(", "))]
    UnknownModel { name: String, available: Vec<String> },
    #[error("invalid sampling grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("cannot read model file {path}: {source}")]
    File { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlPoint {
    pub u1: f64,
    pub u2: f64,
}

impl ControlPoint {
    pub const ORIGIN: ControlPoint = ControlPoint { u1: 0.0, u2: 0.0 };

    pub fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn polar(radius: f64, angle: f64) -> Self {
        Self::new(radius * angle.cos(), radius * angle.sin())
    }

    pub fn norm(self) -> f64 {
        self.u1.hypot(self.u2)
    }

    pub fn dot(self, other: Self) -> f64 {
        self.u1 * other.u1 + self.u2 * other.u2
    }

    /// Polar angle in `[0, 2pi)`.
    pub fn angle(self) -> f64 {
        self.u2.atan2(self.u1).rem_euclid(std::f64::consts::TAU)
    }

    pub fn dist(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.u1.is_finite() && self.u2.is_finite()
    }

    /// Counter-clockwise quarter turn.
    pub fn perp(self) -> Self {
        Self::new(-self.u2, self.u1)
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n == 0.0 {
            self
        } else {
            self * (1.0 / n)
        }
    }

    pub fn as_array(self) -> [f64; 2] {
        [self.u1, self.u2]
    }
}

impl From<[f64; 2]> for ControlPoint {
    fn from(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl Add for ControlPoint {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.u1 + o.u1, self.u2 + o.u2)
    }
}

impl Sub for ControlPoint {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.u1 - o.u1, self.u2 - o.u2)
    }
}

impl Mul<f64> for ControlPoint {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.u1 * s, self.u2 * s)
    }
}

impl Neg for ControlPoint {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.u1, -self.u2)
    }
}

impl fmt::Display for ControlPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.u1, self.u2)
    }
}

/// A degenerate point recorded alongside a model. Informational only: nothing
/// downstream trusts it without running the locator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownIntersection {
    /// Lower index `j` of the crossing pair `(j, j+1)`.
    pub lower: usize,
    pub point: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub known_intersections: Vec<KnownIntersection>,
}

/// Three real symmetric matrices of equal size. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorTriple {
    h0: DMatrix<f64>,
    h1: DMatrix<f64>,
    h2: DMatrix<f64>,
    norms: [f64; 2],
    pub metadata: ModelMetadata,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: String,
    dim: usize,
    h0: Vec<f64>,
    h1: Vec<f64>,
    h2: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<ModelMetadata>,
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Largest |eigenvalue| of a symmetric matrix.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

impl OperatorTriple {
    pub fn new(h0: DMatrix<f64>, h1: DMatrix<f64>, h2: DMatrix<f64>) -> Result<Self, ModelError> {
        let dim = h0.nrows();
        if dim < 2 {
            return Err(ModelError::Dimension(dim));
        }
        for (name, m) in [("h0", &h0), ("h1", &h1), ("h2", &h2)] {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(ModelError::Dimension(m.nrows().max(m.ncols())));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(ModelError::NonFinite(name));
            }
            let scale = m.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
            let asym = asymmetry(m);
            if asym > 1e-12 * scale {
                return Err(ModelError::NotSymmetric { name, asymmetry: asym });
            }
        }
        let norms = [spectral_norm(&h1), spectral_norm(&h2)];
        Ok(Self { h0, h1, h2, norms, metadata: ModelMetadata::default() })
    }

    pub fn with_metadata(mut self, metadata: ModelMetadata) -> Self {
        self.metadata = metadata;
        self
    }

    pub fn dim(&self) -> usize {
        self.h0.nrows()
    }

    pub fn h0(&self) -> &DMatrix<f64> {
        &self.h0
    }

    pub fn h1(&self) -> &DMatrix<f64> {
        &self.h1
    }

    pub fn h2(&self) -> &DMatrix<f64> {
        &self.h2
    }

    /// `(|H1|_2, |H2|_2)`.
    pub fn control_norms(&self) -> [f64; 2] {
        self.norms
    }

    /// `|H1|_2 + |H2|_2`, the Lipschitz constant of every eigenvalue in `u`.
    pub fn lipschitz(&self) -> f64 {
        self.norms[0] + self.norms[1]
    }

    pub fn assemble(&self, u: ControlPoint) -> DMatrix<f64> {
        self.h0.zip_zip_map(&self.h1, &self.h2, |a, b, c| a + u.u1 * b + u.u2 * c)
    }

    /// `c1 H1 + c2 H2`, the derivative of `H` along the direction `c`.
    pub fn directional(&self, c: ControlPoint) -> DMatrix<f64> {
        &self.h1 * c.u1 + &self.h2 * c.u2
    }

    pub fn name(&self) -> &str {
        self.metadata.name.as_deref().unwrap_or("unnamed")
    }

    pub fn to_json(&self) -> String {
        let flat = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        let file = ModelFile {
            schema: MODEL_SCHEMA.to_string(),
            dim: self.dim(),
            h0: flat(&self.h0),
            h1: flat(&self.h1),
            h2: flat(&self.h2),
            metadata: Some(self.metadata.clone()),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let file: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        if file.schema != MODEL_SCHEMA {
            return Err(ModelError::Schema(file.schema));
        }
        if file.dim < 2 {
            return Err(ModelError::Dimension(file.dim));
        }
        let n2 = file.dim * file.dim;
        let mut mats = Vec::with_capacity(3);
        for (name, data) in [("h0", &file.h0), ("h1", &file.h1), ("h2", &file.h2)] {
            if data.len() != n2 {
                return Err(ModelError::Length { name, expected: n2, got: data.len() });
            }
            mats.push(DMatrix::from_row_slice(file.dim, file.dim, data));
        }
        let h2 = mats.pop().unwrap();
        let h1 = mats.pop().unwrap();
        let h0 = mats.pop().unwrap();
        Ok(Self::new(h0, h1, h2)?.with_metadata(file.metadata.unwrap_or_default()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::File { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

/// Resolves `builtin:NAME` or a path to a model file.
pub fn resolve(spec: &str) -> Result<OperatorTriple, ModelError> {
    match spec.strip_prefix("builtin:") {
        Some(name) => builtin(name),
        None => OperatorTriple::load(spec),
    }
}

pub fn builtin(name: &str) -> Result<OperatorTriple, ModelError> {
    let model = match name {
        "pauli2" => {
            let h0 = DMatrix::zeros(2, 2);
            let h1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
            let h2 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
            OperatorTriple::new(h0, h1, h2)?.with_metadata(ModelMetadata {
                name: Some("pauli2".into()),
                description: Some("u1 sigma_z + u2 sigma_x, conical crossing at the origin".into()),
                known_intersections: vec![KnownIntersection { lower: 0, point: [0.0, 0.0] }],
            })
        }
        "three_level" => {
            // Tridiagonal in u2 != 0, so crossings sit on the u2 = 0 axis where the
            // diagonal entries 1+u1, 0.2 u1, u1-1 coincide pairwise.
            let h0 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0, -1.0]));
            let h1 = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.2, 1.0]));
            let h2 = DMatrix::from_row_slice(3, 3, &[0.3, 1.0, 0.0, 1.0, 0.0, 0.7, 0.0, 0.7, -0.2]);
            OperatorTriple::new(h0, h1, h2)?.with_metadata(ModelMetadata {
                name: Some("three_level".into()),
                description: Some("3-level family with crossings (0,1) and (1,2) on the u1 axis".into()),
                known_intersections: vec![
                    KnownIntersection { lower: 0, point: [1.25, 0.0] },
                    KnownIntersection { lower: 1, point: [-1.25, 0.0] },
                ],
            })
        }
        "galerkin_demo" => {
            let m = 1024;
            let xs: Vec<f64> = (0..=m).map(|i| std::f64::consts::PI * i as f64 / m as f64).collect();
            let v0: Vec<f64> = xs.iter().map(|x| 3.0 * (2.0 * x).sin().powi(2)).collect();
            let v1: Vec<f64> = xs.iter().map(|x| 4.0 * x.cos()).collect();
            let v2: Vec<f64> = xs.iter().map(|x| 4.0 * (2.0 * x).cos()).collect();
            let mut model = build_galerkin(6, &v0, &v1, &v2, 512)?;
            model.metadata = ModelMetadata {
                name: Some("galerkin_demo".into()),
                description: Some("6-mode sine Galerkin truncation of -d2/dx2 + V0 + u1 V1 + u2 V2 on [0, pi]".into()),
                known_intersections: vec![],
            };
            model
        }
        other => {
            return Err(ModelError::UnknownModel {
                name: other.to_string(),
                available: BUILTIN_NAMES.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(model)
}

/// Natural cubic spline through uniform samples on `[0, pi]`.
struct UniformSpline {
    h: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl UniformSpline {
    fn new(y: &[f64]) -> Self {
        let n = y.len() - 1;
        let h = std::f64::consts::PI / n as f64;
        let mut m = vec![0.0; n + 1];
        if n >= 2 {
            // Thomas algorithm on 4 m_i + m_{i-1} + m_{i+1} = 6 (second difference) / h^2.
            let mut c = vec![0.0; n + 1];
            let mut d = vec![0.0; n + 1];
            for i in 1..n {
                let rhs = 6.0 * (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
                let denom = 4.0 - c[i - 1];
                c[i] = 1.0 / denom;
                d[i] = (rhs - d[i - 1]) / denom;
            }
            for i in (1..n).rev() {
                m[i] = d[i] - c[i] * m[i + 1];
            }
        }
        Self { h, y: y.to_vec(), m }
    }

    fn eval(&self, x: f64) -> f64 {
        let n = self.y.len() - 1;
        let k = ((x / self.h).floor() as isize).clamp(0, n as isize - 1) as usize;
        let t = x - k as f64 * self.h;
        let s = self.h - t;
        let h = self.h;
        self.m[k] * s.powi(3) / (6.0 * h)
            + self.m[k + 1] * t.powi(3) / (6.0 * h)
            + (self.y[k] / h - self.m[k] * h / 6.0) * s
            + (self.y[k + 1] / h - self.m[k + 1] * h / 6.0) * t
    }
}

/// Sine-basis Galerkin matrices for `-d2/dx2 + V0 + u1 V1 + u2 V2` with Dirichlet
/// conditions on `[0, pi]`.
///
/// Potentials are samples on a uniform grid including both endpoints; they are
/// interpolated by natural cubic splines and integrated with composite Simpson
/// on `quad_points` subintervals.
pub fn build_galerkin(
    n_modes: usize,
    v0: &[f64],
    v1: &[f64],
    v2: &[f64],
    quad_points: usize,
) -> Result<OperatorTriple, ModelError> {
    if n_modes < 2 {
        return Err(ModelError::InvalidGrid(format!("n_modes = {n_modes}, need at least 2")));
    }
    if quad_points < 4 * n_modes {
        return Err(ModelError::InvalidGrid(format!(
            "quad_points = {quad_points} is below 4 * n_modes = {}",
            4 * n_modes
        )));
    }
    if !quad_points.is_multiple_of(2) {
        return Err(ModelError::InvalidGrid(format!("quad_points = {quad_points} must be even for Simpson")));
    }
    for (name, v) in [("v0", v0), ("v1", v1), ("v2", v2)] {
        if v.len() < 2 {
            return Err(ModelError::InvalidGrid(format!("{name} has {} samples, need at least 2", v.len())));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::InvalidGrid(format!("{name} has non-finite samples")));
        }
    }

    let pi = std::f64::consts::PI;
    let h = pi / quad_points as f64;
    let nodes: Vec<f64> = (0..=quad_points).map(|i| i as f64 * h).collect();
    let weights: Vec<f64> = (0..=quad_points)
        .map(|i| {
            let w = if i == 0 || i == quad_points { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            w * h / 3.0
        })
        .collect();
    let norm = (2.0 / pi).sqrt();
    let basis: Vec<Vec<f64>> = (1..=n_modes)
        .map(|k| nodes.iter().map(|x| norm * (k as f64 * x).sin()).collect())
        .collect();

    let project = |v: &[f64]| {
        let spline = UniformSpline::new(v);
        let vals: Vec<f64> = nodes.iter().map(|&x| spline.eval(x)).collect();
        let mut m = DMatrix::zeros(n_modes, n_modes);
        for j in 0..n_modes {
            for k in j..n_modes {
                let s: f64 = (0..nodes.len()).map(|i| weights[i] * basis[j][i] * vals[i] * basis[k][i]).sum();
                m[(j, k)] = s;
                m[(k, j)] = s;
            }
        }
        m
    };

    let mut h0 = project(v0);
    for j in 0..n_modes {
        h0[(j, j)] += ((j + 1) * (j + 1)) as f64;
    }
    let h1 = project(v1);
    let h2 = project(v2);
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    OperatorTriple::new(sym(h0), sym(h1), sym(h2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..=n).map(|i| f(std::f64::consts::PI * i as f64 / n as f64)).collect()
    }

    #[test]
    fn zero_controls_give_h0() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            assert_eq!(m.assemble(ControlPoint::ORIGIN), *m.h0());
        }
    }

    #[test]
    fn pauli_assembly() {
        let m = builtin("pauli2").unwrap();
        let h = m.assemble(ControlPoint::new(0.3, 0.4));
        let expected = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, 0.4, -0.3]);
        assert_eq!(h, expected);
    }

    #[test]
    fn galerkin_assembly_is_linear() {
        let v = grid(256, |x| x.sin() + 0.3 * x);
        let m = build_galerkin(10, &v, &grid(256, |x| x.cos()), &grid(256, |x| x * x), 200).unwrap();
        let h = m.assemble(ControlPoint::new(1.0, 1.0));
        let direct = m.h0() + m.h1() + m.h2();
        assert!((h - direct).amax() <= 1e-15);
    }

    #[test]
    fn round_trip_is_bitwise() {
        for name in BUILTIN_NAMES {
            let m = builtin(name).unwrap();
            let back = OperatorTriple::from_json(&m.to_json()).unwrap();
            assert_eq!(back, m);
        }
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let m = builtin("three_level").unwrap();
        m.save(&path).unwrap();
        assert_eq!(OperatorTriple::load(&path).unwrap(), m);
    }

    #[test]
    fn asymmetric_h1_is_named() {
        let text = r#"{"schema":"conic-climb/model/1","dim":2,
            "h0":[0,0,0,0],"h1":[1,0.5,0,-1],"h2":[0,1,1,0]}"#;
        match OperatorTriple::from_json(text) {
            Err(e @ ModelError::NotSymmetric { name: "h1", .. }) => assert!(e.to_string().contains("h1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_array_reports_expected_length() {
        let text = r#"{"schema":"conic-climb/model/1","dim":2,
            "h0":[0,0,0,0],"h1":[1,0,0],"h2":[0,1,1,0]}"#;
        match OperatorTriple::from_json(text) {
            Err(e @ ModelError::Length { expected: 4, got: 3, .. }) => assert!(e.to_string().contains('4')),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = OperatorTriple::from_json("{\n  \"schema\": oops }").unwrap_err();
        match err {
            ModelError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_builtin_lists_names() {
        let msg = builtin("unknown").unwrap_err().to_string();
        for name in BUILTIN_NAMES {
            assert!(msg.contains(name), "{msg}");
        }
    }

    #[test]
    fn builtin_shapes() {
        assert_eq!(builtin("pauli2").unwrap().dim(), 2);
        assert_eq!(*builtin("pauli2").unwrap().h1(), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]));
        assert_eq!(builtin("three_level").unwrap().dim(), 3);
        assert_eq!(builtin("galerkin_demo").unwrap().dim(), 6);
    }

    #[test]
    fn free_laplacian() {
        let z = vec![0.0; 65];
        let m = build_galerkin(4, &z, &z, &z, 64).unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, 9.0, 16.0]));
        assert!((m.h0() - expected).amax() < 1e-14);
        assert_eq!(m.h1().amax(), 0.0);
        assert_eq!(m.h2().amax(), 0.0);
    }

    #[test]
    fn constant_potential_gives_identity() {
        let one = vec![1.0; 33];
        let z = vec![0.0; 33];
        let m = build_galerkin(3, &z, &one, &z, 120).unwrap();
        assert!((m.h1() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn cosine_coupling_matches_trapezoid_oracle() {
        let v1 = grid(4096, f64::cos);
        let z = vec![0.0; 4097];
        let m = build_galerkin(2, &z, &v1, &z, 2000).unwrap();
        let n = 1_000_000;
        let pi = std::f64::consts::PI;
        let dx = pi / n as f64;
        let f = |x: f64| (2.0 / pi) * x.sin() * x.cos() * (2.0 * x).sin();
        let mut s = 0.5 * (f(0.0) + f(pi));
        for i in 1..n {
            s += f(i as f64 * dx);
        }
        let oracle = s * dx;
        assert_abs_diff_eq!(m.h1()[(0, 1)], oracle, epsilon = 1e-9);
        assert_abs_diff_eq!(oracle, 0.5, epsilon = 1e-9);
    }

    #[test]
    fn galerkin_preconditions() {
        let v = vec![0.0; 10];
        assert!(matches!(build_galerkin(1, &v, &v, &v, 64), Err(ModelError::InvalidGrid(_))));
        assert!(matches!(build_galerkin(8, &v, &v, &v, 16), Err(ModelError::InvalidGrid(_))));
        assert!(matches!(build_galerkin(2, &v, &v, &v, 33), Err(ModelError::InvalidGrid(_))));
        assert!(matches!(build_galerkin(2, &v[..1], &v, &v, 32), Err(ModelError::InvalidGrid(_))));
    }

    #[test]
    fn galerkin_quadrature_converges() {
        let v0 = grid(512, |x| (3.0 * x).sin().powi(2));
        let v1 = grid(512, |x| (-x).exp());
        let v2 = grid(512, |x| x * (std::f64::consts::PI - x));
        let coarse = build_galerkin(5, &v0, &v1, &v2, 1000).unwrap();
        let fine = build_galerkin(5, &v0, &v1, &v2, 2000).unwrap();
        for (a, b) in [(coarse.h0(), fine.h0()), (coarse.h1(), fine.h1()), (coarse.h2(), fine.h2())] {
            assert!((a - b).amax() < 1e-8, "{:e}", (a - b).amax());
        }
    }

    fn sym_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
        proptest::collection::vec(-2.0f64..2.0, n * n).prop_map(move |v| {
            let m = DMatrix::from_vec(n, n, v);
            (&m + m.transpose()) * 0.5
        })
    }

    proptest! {
        #[test]
        fn assemble_is_affine(a in sym_matrix(3), b in sym_matrix(3), c in sym_matrix(3),
                              u in (-3.0f64..3.0, -3.0f64..3.0), v in (-3.0f64..3.0, -3.0f64..3.0)) {
            let m = OperatorTriple::new(a, b, c).unwrap();
            let u = ControlPoint::new(u.0, u.1);
            let v = ControlPoint::new(v.0, v.1);
            let h = m.assemble(u);
            prop_assert_eq!(h.clone(), h.transpose());
            let combo = m.assemble(u + v) - m.assemble(u) - m.assemble(v) + m.assemble(ControlPoint::ORIGIN);
            prop_assert!(combo.amax() < 1e-13);
        }
    }
}
