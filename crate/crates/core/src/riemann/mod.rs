//! Motor-imagery classification on the manifold of symmetric positive-definite
//! covariance matrices: affine-invariant distance, Karcher means and the
//! minimum-distance-to-mean classifier with its certainty score.

mod dataset;
mod synth;

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use dataset::{read_dataset, read_model, write_dataset, write_model, DatasetRecord};
pub use synth::{EegStream, EegSynth, SignalWindow};

pub const CLASS_COUNT: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RiemannError {
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("window contains non-finite samples")]
    NonFinite,
    #[error("no samples for class {0}")]
    MissingClass(usize),
    #[error("empty input")]
    Empty,
    #[error("{0}")]
    Format(String),
}

/// The four motor-imagery classes, numbered as on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum MiClass {
    Left = 0,
    Right = 1,
    BothHands = 2,
    BothFeet = 3,
}

impl MiClass {
    pub const ALL: [MiClass; 4] = [MiClass::Left, MiClass::Right, MiClass::BothHands, MiClass::BothFeet];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MiClass::Left => "left",
            MiClass::Right => "right",
            MiClass::BothHands => "both_hands",
            MiClass::BothFeet => "both_feet",
        }
    }
}

impl TryFrom<u8> for MiClass {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Self::from_index(v as usize).ok_or_else(|| format!("class {v} is not in 0..=3"))
    }
}

impl From<MiClass> for u8 {
    fn from(c: MiClass) -> u8 {
        c as u8
    }
}

impl fmt::Display for MiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

const SYMMETRY_TOL: f64 = 1e-9;

impl SpdMatrix {
    /// Validates and symmetrizes `m`.
    pub fn new(m: DMatrix<f64>) -> Result<Self, RiemannError> {
        if !m.is_square() {
            return Err(RiemannError::NotSpd(format!("{}x{} is not square", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(RiemannError::NonFinite);
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > SYMMETRY_TOL * scale {
            return Err(RiemannError::NotSpd("asymmetric".into()));
        }
        let sym = (&m + m.transpose()) * 0.5;
        if sym.clone().cholesky().is_none() {
            return Err(RiemannError::NotSpd("not positive definite".into()));
        }
        Ok(Self(sym))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        Self(DMatrix::identity(dim, dim) * s)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// Upper triangle in row-major order.
    pub fn upper(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).map(|(i, j)| self.0[(i, j)]).collect()
    }

    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self, RiemannError> {
        if upper.len() != dim * (dim + 1) / 2 {
            return Err(RiemannError::Format(format!("{} entries for dim {dim}", upper.len())));
        }
        let mut m = DMatrix::zeros(dim, dim);
        let mut k = 0;
        for i in 0..dim {
            for j in i..dim {
                m[(i, j)] = upper[k];
                m[(j, i)] = upper[k];
                k += 1;
            }
        }
        Self::new(m)
    }

    /// Congruence `Gᵀ A G`.
    pub fn congruence(&self, g: &DMatrix<f64>) -> Result<Self, RiemannError> {
        Self::new(g.transpose() * &self.0 * g)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect()
    }

    fn map_eigen(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        map_symmetric(&self.0, f)
    }

    pub fn sqrt(&self) -> Self {
        Self(self.map_eigen(f64::sqrt))
    }

    pub fn inv_sqrt(&self) -> Self {
        Self(self.map_eigen(|l| 1.0 / l.sqrt()))
    }

    /// Principal matrix logarithm; symmetric, not SPD in general.
    pub fn log(&self) -> DMatrix<f64> {
        self.map_eigen(f64::ln)
    }

    /// Exponential of a symmetric matrix.
    pub fn exp_symmetric(m: &DMatrix<f64>) -> Self {
        Self(map_symmetric(m, f64::exp))
    }
}

/// Applies `f` to the eigenvalues of a symmetric matrix.
fn map_symmetric(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mapped = eig.eigenvalues.map(f);
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&mapped) * v.transpose();
    (&out + out.transpose()) * 0.5
}

/// Sample covariance `X Xᵀ / n` shrunk toward `tr/d · I`.
pub fn covariance(window: &SignalWindow, shrinkage: f64) -> Result<SpdMatrix, RiemannError> {
    covariance_of(&window.data, shrinkage)
}

pub fn covariance_of(data: &DMatrix<f64>, shrinkage: f64) -> Result<SpdMatrix, RiemannError> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(RiemannError::NonFinite);
    }
    if data.ncols() == 0 || data.nrows() == 0 {
        return Err(RiemannError::Empty);
    }
    let d = data.nrows();
    let lambda = shrinkage.clamp(0.0, 1.0);
    let sample = (data * data.transpose()) / data.ncols() as f64;
    let target = sample.trace() / d as f64;
    let mut c = sample * (1.0 - lambda);
    for i in 0..d {
        c[(i, i)] += lambda * target;
    }
    SpdMatrix::new(c)
}

/// Affine-invariant distance: the Frobenius norm of `log(A^{-1/2} B A^{-1/2})`.
pub fn riemann_distance(a: &SpdMatrix, b: &SpdMatrix) -> Result<f64, RiemannError> {
    if a.dim() != b.dim() {
        return Err(RiemannError::DimMismatch(a.dim(), b.dim()));
    }
    // Generalized eigenvalues of (B, A) through A = L Lᵀ: those of L⁻¹ B L⁻ᵀ.
    let l = a.0.clone().cholesky().ok_or_else(|| RiemannError::NotSpd("cholesky failed".into()))?.unpack();
    let y = l.solve_lower_triangular(&b.0).ok_or_else(|| RiemannError::NotSpd("singular factor".into()))?;
    let c = l
        .solve_lower_triangular(&y.transpose())
        .ok_or_else(|| RiemannError::NotSpd("singular factor".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c).eigenvalues;
    if eig.iter().any(|&l| l.is_nan() || l <= 0.0) {
        return Err(RiemannError::NotSpd("non-positive generalized eigenvalue".into()));
    }
    Ok(eig.iter().map(|l| l.ln().powi(2)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct KarcherMean {
    pub mean: SpdMatrix,
    pub iterations: usize,
    /// Frobenius norm of the tangent-space mean at the returned point.
    pub residual: f64,
    pub converged: bool,
}

pub const KARCHER_TOL: f64 = 1e-8;
pub const KARCHER_MAX_ITER: usize = 50;

/// Fixed-point iteration for the Riemannian (Karcher) mean, started from the
/// arithmetic mean.
pub fn karcher_mean(matrices: &[SpdMatrix]) -> Result<KarcherMean, RiemannError> {
    let first = matrices.first().ok_or(RiemannError::Empty)?;
    let d = first.dim();
    if let Some(bad) = matrices.iter().find(|m| m.dim() != d) {
        return Err(RiemannError::DimMismatch(d, bad.dim()));
    }
    let n = matrices.len() as f64;
    let mut mean = SpdMatrix::new(matrices.iter().fold(DMatrix::zeros(d, d), |acc, m| acc + &m.0) / n)?;
    let mut residual = f64::INFINITY;
    for it in 0..=KARCHER_MAX_ITER {
        let root = mean.sqrt();
        let inv_root = mean.inv_sqrt();
        let tangent = matrices.iter().fold(DMatrix::zeros(d, d), |acc, m| {
            acc + map_symmetric(&(&inv_root.0 * &m.0 * &inv_root.0), f64::ln)
        }) / n;
        residual = tangent.norm();
        if residual < KARCHER_TOL || it == KARCHER_MAX_ITER {
            let converged = residual < KARCHER_TOL;
            if !converged {
                log::warn!("karcher mean stopped after {it} iterations, residual {residual:.3e}");
            }
            return Ok(KarcherMean { mean, iterations: it, residual, converged });
        }
        let step = SpdMatrix::exp_symmetric(&tangent);
        mean = SpdMatrix::new(&root.0 * &step.0 * &root.0)?;
    }
    unreachable!("loop returns on its last iteration; residual {residual}")
}

#[derive(Debug, Clone, PartialEq)]
pub struct MdmModel {
    pub class_means: Vec<SpdMatrix>,
    pub dim: usize,
}

impl MdmModel {
    pub fn new(class_means: Vec<SpdMatrix>) -> Result<Self, RiemannError> {
        if class_means.len() != CLASS_COUNT {
            return Err(RiemannError::Format(format!("model needs {CLASS_COUNT} means, got {}", class_means.len())));
        }
        let dim = class_means[0].dim();
        if let Some(m) = class_means.iter().find(|m| m.dim() != dim) {
            return Err(RiemannError::DimMismatch(dim, m.dim()));
        }
        Ok(Self { class_means, dim })
    }
}

pub fn fit_mdm(labeled: &[(SpdMatrix, MiClass)]) -> Result<MdmModel, RiemannError> {
    let means = MiClass::ALL
        .iter()
        .map(|&c| {
            let members: Vec<SpdMatrix> = labeled.iter().filter(|(_, l)| *l == c).map(|(m, _)| m.clone()).collect();
            if members.is_empty() {
                return Err(RiemannError::MissingClass(c.index()));
            }
            Ok(karcher_mean(&members)?.mean)
        })
        .collect::<Result<Vec<_>, _>>()?;
    MdmModel::new(means)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertaintyScore {
    pub value: f64,
    pub distances: [f64; CLASS_COUNT],
}

/// Mean class distance minus the smallest one.
pub fn certainty(distances: &[f64]) -> f64 {
    if distances.is_empty() {
        return 0.0;
    }
    let min = distances.iter().copied().fold(f64::INFINITY, f64::min);
    // Summing gaps to the minimum keeps every term non-negative, so the score
    // is zero exactly when all distances are equal.
    distances.iter().map(|d| d - min).sum::<f64>() / distances.len() as f64
}

/// Nearest class mean (lowest index on ties) and its certainty.
pub fn predict(model: &MdmModel, x: &SpdMatrix) -> Result<(MiClass, CertaintyScore), RiemannError> {
    let mut distances = [0.0; CLASS_COUNT];
    for (d, mean) in distances.iter_mut().zip(&model.class_means) {
        *d = riemann_distance(mean, x)?;
    }
    Ok(classify_distances(distances))
}

pub fn classify_distances(distances: [f64; CLASS_COUNT]) -> (MiClass, CertaintyScore) {
    let mut best = 0;
    for (i, d) in distances.iter().enumerate() {
        if *d < distances[best] {
            best = i;
        }
    }
    (MiClass::ALL[best], CertaintyScore { value: certainty(&distances), distances })
}
