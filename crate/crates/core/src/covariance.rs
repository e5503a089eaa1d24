//! Centered feature-space covariance operators and their spectral data.
//!
//! A [`CovarianceModel`] is the single source of spectral truth for the rest
//! of the crate: filters, measurement statistics and scores are all expressed
//! as functions of its eigenvalues, in the basis of its eigenvectors.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::C64;

/// Maximum accepted deviation of `<phi|phi>` from 1 for a feature state.
pub const NORM_TOLERANCE: f64 = 1e-6;
/// Tolerance on `|A - A^dagger|` entries for accepting a Hermitian matrix.
pub const HERMITIAN_TOLERANCE: f64 = 1e-12;
/// Eigenvalues in `[-PSD_TOLERANCE, 0)` are clamped to zero.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// A set of unit-norm complex feature vectors `|phi_i>`.
#[derive(Clone, Debug)]
pub struct FeatureDataset {
    vectors: Vec<DVector<C64>>,
    dim: usize,
}

impl FeatureDataset {
    pub fn new(vectors: Vec<DVector<C64>>) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::Invalid("dataset has no vectors".into()))?;
        let dim = first.len();
        if dim < 2 {
            return Err(Error::Invalid(format!("dimension must be at least 2, got {dim}")));
        }
        for (index, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let norm_sq = v.norm_squared();
            if (norm_sq - 1.0).abs() > NORM_TOLERANCE || !norm_sq.is_finite() {
                return Err(Error::NotNormalized { index, norm_sq });
            }
        }
        Ok(Self { vectors, dim })
    }

    /// Builds a dataset from real vectors, embedding them as complex.
    pub fn from_real(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(
            rows.iter()
                .map(|r| DVector::from_iterator(r.len(), r.iter().map(|&x| C64::new(x, 0.0))))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[DVector<C64>] {
        &self.vectors
    }

    /// Empirical mean `|m> = (1/N) sum_i |phi_i>`, left subnormalized.
    pub fn mean(&self) -> DVector<C64> {
        let mut m = DVector::zeros(self.dim);
        for v in &self.vectors {
            m += v;
        }
        m / C64::new(self.len() as f64, 0.0)
    }

    /// Feature-state average `(1/N) sum_i |phi_i><phi_i|`.
    pub fn second_moment(&self) -> DMatrix<C64> {
        let mut rho = DMatrix::zeros(self.dim, self.dim);
        for v in &self.vectors {
            rho += v * v.adjoint();
        }
        rho / C64::new(self.len() as f64, 0.0)
    }
}

/// Hermitian PSD covariance operator with a cached, sorted eigendecomposition.
#[derive(Clone, Debug)]
pub struct CovarianceModel {
    matrix: DMatrix<C64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<C64>,
    total_variance: f64,
    mean_vector: Option<DVector<C64>>,
    mean_norm_sq: Option<f64>,
}

/// A test vector with the mean branch subtracted.
#[derive(Clone, Debug)]
pub struct CenteredInput {
    pub raw: DVector<C64>,
    pub centered: DVector<C64>,
    pub nu: f64,
    pub success_probability: f64,
    /// Set when the input coincides with the feature-space mean (`nu == 0`).
    pub degenerate: bool,
}

/// Inputs whose centered squared norm falls below this are treated as the mean.
pub const DEGENERATE_NU: f64 = 1e-24;

impl CovarianceModel {
    /// `C_phi = rho_bar - |m><m|`, accumulated as `(1/N) sum_i |z_i><z_i|`
    /// with `z_i = phi_i - m` so the result is PSD by construction.
    pub fn build_centered(data: &FeatureDataset) -> Result<Self> {
        let mean = data.mean();
        let d = data.dim();
        let mut c = DMatrix::zeros(d, d);
        for v in data.vectors() {
            let z = v - &mean;
            c += &z * z.adjoint();
        }
        c /= C64::new(data.len() as f64, 0.0);
        let alpha = mean.norm_squared();
        let mut model = Self::build_from_matrix(c)?;
        model.mean_vector = Some(mean);
        model.mean_norm_sq = Some(alpha);
        Ok(model)
    }

    /// Uncentered variant: `C = rho_bar`, no mean branch.
    pub fn build_uncentered(data: &FeatureDataset) -> Result<Self> {
        Self::build_from_matrix(data.second_moment())
    }

    /// Accepts an externally supplied Hermitian PSD matrix.
    pub fn build_from_matrix(matrix: DMatrix<C64>) -> Result<Self> {
        let d = matrix.nrows();
        if d != matrix.ncols() {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: matrix.ncols(),
            });
        }
        if d < 2 {
            return Err(Error::Invalid(format!("dimension must be at least 2, got {d}")));
        }
        if matrix.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Invalid("matrix has non-finite entries".into()));
        }
        let scale = matrix.iter().map(|z| z.norm()).fold(1.0f64, f64::max);
        let mut deviation = 0.0f64;
        for i in 0..d {
            for j in 0..d {
                deviation = deviation.max((matrix[(i, j)] - matrix[(j, i)].conj()).norm());
            }
        }
        if deviation > HERMITIAN_TOLERANCE * scale {
            return Err(Error::NotHermitian(deviation));
        }
        let hermitian = (&matrix + matrix.adjoint()) * C64::new(0.5, 0.0);
        let (values, vectors) = hermitian_eigen(&hermitian);
        let smallest = values.last().copied().unwrap_or(0.0);
        if smallest < -PSD_TOLERANCE {
            return Err(Error::NotPositive(smallest));
        }
        let eigenvalues: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
        let total_variance = eigenvalues.iter().sum();
        Ok(Self {
            matrix: hermitian,
            eigenvalues,
            eigenvectors: vectors,
            total_variance,
            mean_vector: None,
            mean_norm_sq: None,
        })
    }

    /// Diagonal model with the given spectrum and the standard basis as eigenbasis.
    pub fn from_spectrum(spectrum: &[f64]) -> Result<Self> {
        let d = spectrum.len();
        let matrix = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(spectrum[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        Self::build_from_matrix(matrix)
    }

    /// Reassembles a model from stored spectral data, checking every invariant.
    pub fn from_parts(
        matrix: DMatrix<C64>,
        eigenvalues: Vec<f64>,
        eigenvectors: DMatrix<C64>,
        mean_vector: Option<DVector<C64>>,
    ) -> Result<Self> {
        let d = matrix.nrows();
        if matrix.ncols() != d || eigenvalues.len() != d || eigenvectors.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: eigenvalues.len(),
            });
        }
        if eigenvalues.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Invalid("eigenvalues are not sorted non-increasing".into()));
        }
        if eigenvalues.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return Err(Error::Invalid("eigenvalues must be finite and non-negative".into()));
        }
        let gram = eigenvectors.adjoint() * &eigenvectors;
        let ortho = (gram - DMatrix::identity(d, d))
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if ortho > 1e-10 {
            return Err(Error::Invalid(format!("eigenvectors not orthonormal ({ortho:e})")));
        }
        let diag = DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(eigenvalues[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let rebuilt = &eigenvectors * diag * eigenvectors.adjoint();
        let err = (rebuilt - &matrix).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if err > 1e-10 {
            return Err(Error::Invalid(format!(
                "eigen data does not reproduce matrix ({err:e})"
            )));
        }
        if let Some(m) = &mean_vector {
            if m.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: m.len(),
                });
            }
        }
        let mean_norm_sq = mean_vector.as_ref().map(|m| m.norm_squared());
        Ok(Self {
            matrix,
            total_variance: eigenvalues.iter().sum(),
            eigenvalues,
            eigenvectors,
            mean_vector,
            mean_norm_sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    /// Eigenvalues sorted non-increasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Unitary whose columns are the eigenvectors `u_j`.
    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.eigenvectors
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn mean_vector(&self) -> Option<&DVector<C64>> {
        self.mean_vector.as_ref()
    }

    /// `alpha = <m|m>`, present for centered models.
    pub fn mean_norm_sq(&self) -> Option<f64> {
        self.mean_norm_sq
    }

    pub fn is_centered(&self) -> bool {
        self.mean_vector.is_some()
    }

    /// `rho_bar = C + |m><m|`, the feature-state average of a centered model.
    pub fn second_moment(&self) -> Option<DMatrix<C64>> {
        self.mean_vector.as_ref().map(|m| &self.matrix + m * m.adjoint())
    }

    /// Coordinates `c_j = <u_j|v>` in the eigenbasis.
    pub fn coefficients(&self, v: &DVector<C64>) -> Vec<C64> {
        (self.eigenvectors.adjoint() * v).iter().copied().collect()
    }

    /// Maps an operator written in the eigenbasis back to the computational basis.
    pub fn to_computational(&self, op: &DMatrix<C64>) -> DMatrix<C64> {
        &self.eigenvectors * op * self.eigenvectors.adjoint()
    }

    /// Centers a test vector with the stored mean branch.
    pub fn center_input(&self, raw: &DVector<C64>) -> Result<CenteredInput> {
        let mean = self.mean_vector.as_ref().ok_or(Error::MissingMean)?;
        if raw.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: raw.len(),
            });
        }
        let centered = raw - mean;
        let nu = centered.norm_squared();
        Ok(CenteredInput {
            raw: raw.clone(),
            centered,
            nu,
            success_probability: nu / 4.0,
            degenerate: nu <= DEGENERATE_NU,
        })
    }

    /// Hex SHA-256 over the eigenvalues and eigenvectors, used to tie filters
    /// and thresholds to the basis they were computed in.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for v in &self.eigenvalues {
            hasher.update(v.to_le_bytes());
        }
        for z in self.eigenvectors.iter() {
            hasher.update(z.re.to_le_bytes());
            hasher.update(z.im.to_le_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Sorted Hermitian eigendecomposition. Diagonal input takes an exact path;
/// everything else goes through nalgebra's tridiagonal QR. Eigenvalues come
/// back non-increasing with ties in decomposition order, and each eigenvector
/// is phase-fixed so its largest-magnitude entry is real and positive.
pub(crate) fn hermitian_eigen(h: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let d = h.nrows();
    let is_diagonal = (0..d).all(|i| (0..d).all(|j| i == j || h[(i, j)] == C64::new(0.0, 0.0)));
    let (raw_values, raw_vectors): (Vec<f64>, DMatrix<C64>) = if is_diagonal {
        ((0..d).map(|i| h[(i, i)].re).collect(), DMatrix::identity(d, d))
    } else {
        let eig = SymmetricEigen::new(h.clone());
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| raw_values[b].total_cmp(&raw_values[a]));
    let values = order.iter().map(|&i| raw_values[i]).collect();
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &src) in order.iter().enumerate() {
        let mut v = raw_vectors.column(src).into_owned();
        let pivot = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, z)| {
                if z.norm() > best.1 + 1e-14 {
                    (i, z.norm())
                } else {
                    best
                }
            })
            .0;
        let phase = v[pivot] / C64::new(v[pivot].norm(), 0.0);
        if phase.norm() > 0.0 {
            v /= phase;
        }
        let norm = v.norm();
        v /= C64::new(norm, 0.0);
        vectors.set_column(col, &v);
    }
    (values, vectors)
}

/// Nonzero spectra of `C_phi` (feature space) and `K_c / N` (Gram space),
/// computed independently of each other.
pub fn kernel_spectrum_check(data: &FeatureDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    const ZERO: f64 = 1e-12;
    let model = CovarianceModel::build_centered(data)?;
    let feature: Vec<f64> = model.eigenvalues().iter().copied().filter(|&l| l > ZERO).collect();

    let n = data.len();
    let vs = data.vectors();
    let gram = DMatrix::from_fn(n, n, |i, j| vs[i].dotc(&vs[j]));
    let inv_n = 1.0 / n as f64;
    let centering = DMatrix::from_fn(n, n, |i, j| C64::new(if i == j { 1.0 - inv_n } else { -inv_n }, 0.0));
    let kc = &centering * gram * &centering * C64::new(inv_n, 0.0);
    let kc = (&kc + kc.adjoint()) * C64::new(0.5, 0.0);
    let (values, _) = hermitian_eigen(&kc);
    let gram_space = values.into_iter().filter(|&l| l > ZERO).collect();
    Ok((feature, gram_space))
}
