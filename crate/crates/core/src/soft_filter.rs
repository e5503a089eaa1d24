//! Fermi-Dirac soft filters and the scalar dual problem that selects them.
//!
//! Every filter here commutes with the covariance operator, so it is stored
//! as an occupation vector in the model's eigenbasis. Dense matrices are only
//! built on request via [`dense_effect`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::numeric::{binary_entropy, sigmoid, softplus};
use crate::C64;

/// An effect `0 <= E <= 1` that is diagonal in the model eigenbasis.
pub trait DiagonalEffect {
    fn occupations(&self) -> &[f64];

    fn trace(&self) -> f64 {
        self.occupations().iter().sum()
    }
}

impl DiagonalEffect for [f64] {
    fn occupations(&self) -> &[f64] {
        self
    }
}

impl DiagonalEffect for Vec<f64> {
    fn occupations(&self) -> &[f64] {
        self
    }
}

/// Diagonal effect without a Fermi-Dirac parameterization (window effects,
/// soft components, explained-variance limits).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralEffect {
    pub occupations: Vec<f64>,
}

impl DiagonalEffect for SpectralEffect {
    fn occupations(&self) -> &[f64] {
        &self.occupations
    }
}

/// `M_{T,mu} = (1 + exp((mu - C)/T))^{-1}` held as occupations `m_j`.
///
/// A temperature of zero marks a hard projector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftFilter {
    pub occupations: Vec<f64>,
    pub temperature: f64,
    pub chemical_potential: f64,
    pub model_fingerprint: String,
}

impl DiagonalEffect for SoftFilter {
    fn occupations(&self) -> &[f64] {
        &self.occupations
    }
}

/// `m = 1/(1 + exp((mu - lambda)/T))`.
#[inline]
pub fn occupation(lambda: f64, temperature: f64, mu: f64) -> f64 {
    sigmoid((lambda - mu) / temperature)
}

fn occupations_of(spectrum: &[f64], temperature: f64, mu: f64) -> Vec<f64> {
    spectrum.iter().map(|&l| occupation(l, temperature, mu)).collect()
}

fn filter_trace(spectrum: &[f64], temperature: f64, mu: f64) -> f64 {
    spectrum.iter().map(|&l| occupation(l, temperature, mu)).sum()
}

pub fn fermi_dirac_filter(model: &CovarianceModel, temperature: f64, mu: f64) -> SoftFilter {
    assert!(temperature > 0.0, "temperature must be positive");
    SoftFilter {
        occupations: occupations_of(model.eigenvalues(), temperature, mu),
        temperature,
        chemical_potential: mu,
        model_fingerprint: model.fingerprint(),
    }
}

/// `Phi_T(mu) = mu k + T sum_j ln(1 + exp((lambda_j - mu)/T))`.
pub fn dual_objective(model: &CovarianceModel, temperature: f64, mu: f64, k: usize) -> f64 {
    let tail: f64 = model
        .eigenvalues()
        .iter()
        .map(|&l| softplus((l - mu) / temperature))
        .sum();
    mu * k as f64 + temperature * tail
}

/// `Phi_T'(mu) = k - Tr M_{T,mu}`.
pub fn dual_gradient(model: &CovarianceModel, temperature: f64, mu: f64, k: usize) -> f64 {
    k as f64 - filter_trace(model.eigenvalues(), temperature, mu)
}

/// `Phi_T''(mu) = (1/T) sum_j m_j (1 - m_j)`.
pub fn dual_hessian(model: &CovarianceModel, temperature: f64, mu: f64) -> f64 {
    model
        .eigenvalues()
        .iter()
        .map(|&l| {
            let m = occupation(l, temperature, mu);
            m * (1.0 - m)
        })
        .sum::<f64>()
        / temperature
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualMethod {
    #[default]
    Bisection,
    GradientDescent,
    Newton,
}

#[derive(Clone, Debug)]
pub struct DualSolveReport {
    pub mu_star: f64,
    pub iterations: usize,
    pub final_gradient: f64,
    pub method: DualMethod,
    pub bracket: (f64, f64),
    /// Every iterate visited, starting point first.
    pub trajectory: Vec<f64>,
}

/// The interval `I_T = [lambda_d + T ln((d-k)/k), lambda_1 + T ln((d-k)/k)]`
/// that contains `mu*`.
pub fn dual_bracket(model: &CovarianceModel, temperature: f64, k: usize) -> (f64, f64) {
    let l = model.eigenvalues();
    let d = l.len();
    let shift = temperature * ((d - k) as f64 / k as f64).ln();
    (l[d - 1] + shift, l[0] + shift)
}

fn check_rank(d: usize, k: usize) -> Result<()> {
    if k == 0 || k >= d {
        return Err(Error::Invalid(format!("rank budget k={k} outside 1..={}", d - 1)));
    }
    Ok(())
}

const BISECTION_CAP: usize = 200;
const NEWTON_CAP: usize = 200;
const GD_CAP_FLOOR: usize = 1_000;
const GD_CAP_CEIL: usize = 5_000_000;

/// Solves the trace equation `Tr M_{T,mu} = k` for the chemical potential.
pub fn solve_mu(
    model: &CovarianceModel,
    temperature: f64,
    k: usize,
    method: DualMethod,
    tol: f64,
) -> Result<DualSolveReport> {
    if !(temperature > 0.0) {
        return Err(Error::Invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    check_rank(model.dim(), k)?;
    let spectrum = model.eigenvalues();
    let bracket = dual_bracket(model, temperature, k);
    let target = k as f64;
    let gradient = |mu: f64| target - filter_trace(spectrum, temperature, mu);
    match method {
        DualMethod::Bisection => {
            let (mut lo, mut hi) = bracket;
            let mut trajectory = Vec::new();
            let mut mu = 0.5 * (lo + hi);
            let mut g = gradient(mu);
            trajectory.push(mu);
            let mut iterations = 0;
            while g.abs() > tol && iterations < BISECTION_CAP {
                if g < 0.0 {
                    lo = mu;
                } else {
                    hi = mu;
                }
                let next = 0.5 * (lo + hi);
                iterations += 1;
                if next == lo || next == hi {
                    // bracket has collapsed to adjacent floats
                    break;
                }
                mu = next;
                g = gradient(mu);
                trajectory.push(mu);
            }
            Ok(DualSolveReport {
                mu_star: mu,
                iterations,
                final_gradient: g,
                method,
                bracket,
                trajectory,
            })
        }
        DualMethod::GradientDescent => {
            let step = 4.0 * temperature / spectrum.len() as f64;
            let spread = spectrum[0] - spectrum[spectrum.len() - 1];
            let theoretical =
                spectrum.len() as f64 * spread * spread / (8.0 * temperature * tol.max(f64::MIN_POSITIVE));
            let cap = ((10.0 * theoretical.ceil()).min(GD_CAP_CEIL as f64) as usize).max(GD_CAP_FLOOR);
            let mut mu = 0.5 * (bracket.0 + bracket.1);
            let mut trajectory = vec![mu];
            let mut g = gradient(mu);
            let mut iterations = 0;
            while g.abs() > tol {
                if iterations >= cap {
                    return Err(Error::NoConvergence {
                        method: "gradient descent",
                        iterations,
                        gradient: g,
                    });
                }
                mu = (mu - step * g).clamp(bracket.0, bracket.1);
                g = gradient(mu);
                iterations += 1;
                trajectory.push(mu);
            }
            Ok(DualSolveReport {
                mu_star: mu,
                iterations,
                final_gradient: g,
                method,
                bracket,
                trajectory,
            })
        }
        DualMethod::Newton => {
            // Newton steps are kept inside a sign-change bracket that starts as
            // I_T; a step leaving it is replaced by the bracket midpoint.
            let (mut lo, mut hi) = bracket;
            let mut mu = 0.5 * (lo + hi);
            let mut trajectory = vec![mu];
            let mut iterations = 0;
            loop {
                let g = gradient(mu);
                if g.abs() <= tol {
                    return Ok(DualSolveReport {
                        mu_star: mu,
                        iterations,
                        final_gradient: g,
                        method,
                        bracket,
                        trajectory,
                    });
                }
                if iterations >= NEWTON_CAP {
                    return Err(Error::NoConvergence {
                        method: "newton",
                        iterations,
                        gradient: g,
                    });
                }
                if g < 0.0 {
                    lo = mu;
                } else {
                    hi = mu;
                }
                let h = dual_hessian(model, temperature, mu);
                let candidate = mu - g / h;
                let next = if h > 0.0 && candidate > lo && candidate < hi {
                    candidate
                } else {
                    0.5 * (lo + hi)
                };
                iterations += 1;
                if next == mu {
                    return Ok(DualSolveReport {
                        mu_star: mu,
                        iterations,
                        final_gradient: g,
                        method,
                        bracket,
                        trajectory,
                    });
                }
                mu = next;
                trajectory.push(mu);
            }
        }
    }
}

/// Chemical potential on the trace-constrained path whose covariance-probe
/// tail hits `theta`: `sum_j (lambda_j / V_C) m_j(T, mu) = theta`.
pub fn solve_mu_for_variance(model: &CovarianceModel, temperature: f64, theta: f64, tol: f64) -> Result<f64> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Invalid(format!("variance level must lie in (0,1), got {theta}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::Invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let v = model.total_variance();
    if !(v > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let spectrum = model.eigenvalues();
    let tail = |mu: f64| -> f64 { spectrum.iter().map(|&l| l / v * occupation(l, temperature, mu)).sum() };
    let mut width = 50.0 * temperature + (spectrum[0] - spectrum[spectrum.len() - 1]) + 1.0;
    let mut lo = spectrum[spectrum.len() - 1] - width;
    let mut hi = spectrum[0] + width;
    let mut expansions = 0;
    while tail(lo) < theta || tail(hi) > theta {
        if expansions == 60 {
            return Err(Error::BracketExpansion(expansions));
        }
        lo -= width;
        hi += width;
        width *= 2.0;
        expansions += 1;
    }
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        let g = tail(mid) - theta;
        if g.abs() <= tol || mid == lo || mid == hi {
            return Ok(mid);
        }
        if g > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Rank-`k` projector onto the leading eigenvectors (stable order on ties).
pub fn hard_projector(model: &CovarianceModel, k: usize) -> Result<SoftFilter> {
    check_rank(model.dim(), k)?;
    let l = model.eigenvalues();
    Ok(SoftFilter {
        occupations: (0..l.len()).map(|j| if j < k { 1.0 } else { 0.0 }).collect(),
        temperature: 0.0,
        chemical_potential: 0.5 * (l[k - 1] + l[k]),
        model_fingerprint: model.fingerprint(),
    })
}

/// `v_hard = sum_{j<=k} lambda_j`, the optimal Fantope value.
pub fn hard_value(model: &CovarianceModel, k: usize) -> Result<f64> {
    check_rank(model.dim(), k)?;
    Ok(model.eigenvalues()[..k].iter().sum())
}

/// Fermi-Dirac entropy `S_FD(M) = sum_j h(m_j)`.
pub fn fd_entropy<E: DiagonalEffect + ?Sized>(effect: &E) -> f64 {
    effect.occupations().iter().map(|&m| binary_entropy(m)).sum()
}

/// `Tr(C M)`.
pub fn retained_variance<E: DiagonalEffect + ?Sized>(model: &CovarianceModel, effect: &E) -> f64 {
    model
        .eigenvalues()
        .iter()
        .zip(effect.occupations())
        .map(|(l, m)| l * m)
        .sum()
}

/// `Tr(rho_C M) = Tr(C M) / V_C`.
pub fn normalized_retained_variance<E: DiagonalEffect + ?Sized>(model: &CovarianceModel, effect: &E) -> Result<f64> {
    let v = model.total_variance();
    if !(v > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(retained_variance(model, effect) / v)
}

#[derive(Clone, Copy, Debug)]
pub struct GapCheck {
    /// `v_hard - Tr(C M*)`.
    pub gap: f64,
    /// `T d h(k/d)`.
    pub bound: f64,
    pub mu_star: f64,
}

impl GapCheck {
    pub fn holds(&self) -> bool {
        self.gap >= -1e-10 && self.gap <= self.bound + 1e-12
    }
}

/// Soft-versus-hard retained variance gap and its entropy bound.
pub fn soft_hard_gap_check(model: &CovarianceModel, temperature: f64, k: usize) -> Result<GapCheck> {
    let report = solve_mu(model, temperature, k, DualMethod::Bisection, 1e-13)?;
    let filter = fermi_dirac_filter(model, temperature, report.mu_star);
    let d = model.dim();
    Ok(GapCheck {
        gap: hard_value(model, k)? - retained_variance(model, &filter),
        bound: temperature * d as f64 * binary_entropy(k as f64 / d as f64),
        mu_star: report.mu_star,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OperatorGap {
    /// `epsilon = ||M* - P_k||_op`, `bound = exp(-g/T)`.
    Applicable { epsilon: f64, bound: f64, gap: f64 },
    /// `mu*` is not strictly inside `(lambda_{k+1}, lambda_k)`.
    NotApplicable,
}

pub fn operator_gap_to_hard(model: &CovarianceModel, temperature: f64, k: usize) -> Result<OperatorGap> {
    let report = solve_mu(model, temperature, k, DualMethod::Bisection, 1e-13)?;
    let mu = report.mu_star;
    let l = model.eigenvalues();
    if !(l[k - 1] > mu && mu > l[k]) {
        return Ok(OperatorGap::NotApplicable);
    }
    // 1 - m_j is evaluated as the mirrored logistic so tiny deviations keep
    // their relative precision
    let epsilon = l
        .iter()
        .enumerate()
        .map(|(j, &lambda)| {
            if j < k {
                occupation(mu, temperature, lambda)
            } else {
                occupation(lambda, temperature, mu)
            }
        })
        .fold(0.0, f64::max);
    let gap = (l[k - 1] - mu).min(mu - l[k]);
    Ok(OperatorGap::Applicable {
        epsilon,
        bound: (-gap / temperature).exp(),
        gap,
    })
}

/// Soft spectral resolution `D_k = M_k - M_{k-1}` from a strictly decreasing
/// ladder of chemical potentials `mu_1 > ... > mu_{d-1}`.
pub fn soft_components(model: &CovarianceModel, mus: &[f64], temperature: f64) -> Result<Vec<SpectralEffect>> {
    let d = model.dim();
    if mus.len() != d - 1 {
        return Err(Error::DimensionMismatch {
            expected: d - 1,
            found: mus.len(),
        });
    }
    if let Some(i) = mus.windows(2).position(|w| !(w[0] > w[1])) {
        return Err(Error::NonMonotone(i + 1));
    }
    let filters: Vec<Vec<f64>> = mus
        .iter()
        .map(|&mu| occupations_of(model.eigenvalues(), temperature, mu))
        .collect();
    Ok(components_from_ladder(d, &filters))
}

/// Telescopes nested occupation vectors `M_1 <= ... <= M_{d-1}` into `D_1..D_d`
/// with `M_0 = 0` and `M_d = 1`.
pub(crate) fn components_from_ladder(d: usize, ladder: &[Vec<f64>]) -> Vec<SpectralEffect> {
    let zero = vec![0.0; d];
    let one = vec![1.0; d];
    let mut out = Vec::with_capacity(d);
    let mut prev = &zero;
    for current in ladder.iter().chain(std::iter::once(&one)) {
        out.push(SpectralEffect {
            occupations: current.iter().zip(prev).map(|(a, b)| a - b).collect(),
        });
        prev = current;
    }
    out
}

/// Mean-squared reconstruction error `E(M) = sum_j lambda_j (1 - m_j)^2`.
pub fn reconstruction_error<E: DiagonalEffect + ?Sized>(model: &CovarianceModel, effect: &E) -> f64 {
    model
        .eigenvalues()
        .iter()
        .zip(effect.occupations())
        .map(|(l, m)| l * (1.0 - m) * (1.0 - m))
        .sum()
}

/// Materializes a diagonal effect as a dense matrix in the computational basis.
pub fn dense_effect<E: DiagonalEffect + ?Sized>(model: &CovarianceModel, effect: &E) -> DMatrix<C64> {
    let d = model.dim();
    let occ = effect.occupations();
    let diag = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            C64::new(occ[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    model.to_computational(&diag)
}

/// Optimizer of the fixed-variance problem,
/// `M_lambda = (1 + exp((1 - lambda C)/T'))^{-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedVarianceFilter {
    pub occupations: Vec<f64>,
    pub lambda_multiplier: f64,
    pub entropy_scale: f64,
    /// `1/lambda`, only for `lambda > 0`.
    pub effective_mu: Option<f64>,
    /// `T'/lambda`, only for `lambda > 0`.
    pub effective_temperature: Option<f64>,
}

impl DiagonalEffect for FixedVarianceFilter {
    fn occupations(&self) -> &[f64] {
        &self.occupations
    }
}

pub fn fixed_variance_occupation(lambda_j: f64, t_prime: f64, multiplier: f64) -> f64 {
    sigmoid((multiplier * lambda_j - 1.0) / t_prime)
}

pub fn fixed_variance_filter(model: &CovarianceModel, t_prime: f64, lambda: f64) -> FixedVarianceFilter {
    assert!(t_prime > 0.0, "entropy scale must be positive");
    let positive = lambda > 0.0;
    FixedVarianceFilter {
        occupations: model
            .eigenvalues()
            .iter()
            .map(|&l| fixed_variance_occupation(l, t_prime, lambda))
            .collect(),
        lambda_multiplier: lambda,
        entropy_scale: t_prime,
        effective_mu: positive.then(|| 1.0 / lambda),
        effective_temperature: positive.then(|| t_prime / lambda),
    }
}
