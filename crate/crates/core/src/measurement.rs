//! Exact simulation of the modified thermal measurement.
//!
//! The control register is a logistic wavepacket of width `t1`; evolving with
//! `exp(-i p C / t2)` shifts it by `lambda_j / t2` on eigenmode `j`. Position
//! statistics are therefore a finite mixture of shifted logistics, which is
//! evaluated and sampled here in closed form without discretizing the qumode.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::{hermitian_eigen, CovarianceModel};
use crate::error::{Error, Result};
use crate::numeric::{self, integrate_adaptive, logistic_interval_mass};
use crate::rng::{fill_indexed, CounterRng};
use crate::soft_filter::{fermi_dirac_filter, SoftFilter, SpectralEffect};
use crate::C64;

pub use crate::numeric::{logistic_cdf, logistic_density};

/// Control width `t1`, evolution scale `t2` and control displacement `delta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementConfig {
    pub t1: f64,
    pub t2: f64,
    #[serde(default)]
    pub delta: f64,
}

impl MeasurementConfig {
    pub fn new(t1: f64, t2: f64, delta: f64) -> Result<Self> {
        let config = Self { t1, t2, delta };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t1 > 0.0 && self.t1.is_finite()) || !(self.t2 > 0.0 && self.t2.is_finite()) {
            return Err(Error::Invalid(format!(
                "control width and evolution scale must be positive (t1={}, t2={})",
                self.t1, self.t2
            )));
        }
        if !self.delta.is_finite() {
            return Err(Error::Invalid("control displacement must be finite".into()));
        }
        Ok(())
    }

    /// `T = t1 * t2`.
    pub fn effective_temperature(&self) -> f64 {
        self.t1 * self.t2
    }

    /// Chemical potential selected by threshold `beta`: `(beta - delta) t2`.
    pub fn mu_for_threshold(&self, beta: f64) -> f64 {
        (beta - self.delta) * self.t2
    }

    /// Inverse of [`Self::mu_for_threshold`].
    pub fn threshold_for_mu(&self, mu: f64) -> f64 {
        mu / self.t2 + self.delta
    }

    /// Position of eigenmode peaks: `delta + lambda_j / t2`.
    pub fn centers(&self, spectrum: &[f64]) -> Vec<f64> {
        spectrum.iter().map(|&l| self.delta + l / self.t2).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProbeKind {
    MaximallyMixed,
    CovarianceProbe,
    Pure(nalgebra::DVector<C64>),
    Density(DMatrix<C64>),
}

impl ProbeKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProbeKind::MaximallyMixed => "maximally_mixed",
            ProbeKind::CovarianceProbe => "covariance_probe",
            ProbeKind::Pure(_) => "pure",
            ProbeKind::Density(_) => "density",
        }
    }
}

/// Data-register probe, cached as eigenbasis populations `p_j = <u_j|rho|u_j>`.
#[derive(Clone, Debug)]
pub struct ProbeState {
    pub kind: ProbeKind,
    pub diagonal_weights: Vec<f64>,
    /// Full state in the eigenbasis; absent for the diagonal probes.
    pub full_matrix_in_eigenbasis: Option<DMatrix<C64>>,
}

/// Serializable summary of a probe, as written into sample sidecars.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeDescriptor {
    pub kind: String,
    pub weights: Vec<f64>,
}

impl ProbeState {
    /// `tau_mm = 1/d`.
    pub fn maximally_mixed(model: &CovarianceModel) -> Self {
        let d = model.dim();
        Self {
            kind: ProbeKind::MaximallyMixed,
            diagonal_weights: vec![1.0 / d as f64; d],
            full_matrix_in_eigenbasis: None,
        }
    }

    /// `rho_C = C / V_C`.
    pub fn covariance_probe(model: &CovarianceModel) -> Result<Self> {
        let v = model.total_variance();
        if !(v > 0.0) {
            return Err(Error::ZeroVariance);
        }
        Ok(Self {
            kind: ProbeKind::CovarianceProbe,
            diagonal_weights: normalize(model.eigenvalues().iter().map(|l| l / v).collect()),
            full_matrix_in_eigenbasis: None,
        })
    }

    /// Pure probe `|v><v| / <v|v>` for a vector in the computational basis.
    pub fn pure(model: &CovarianceModel, v: &nalgebra::DVector<C64>) -> Result<Self> {
        if v.len() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                found: v.len(),
            });
        }
        let norm_sq = v.norm_squared();
        if !(norm_sq > 0.0) {
            return Err(Error::Invalid("pure probe vector is zero".into()));
        }
        let coeffs = model.eigenvectors().adjoint() * v / C64::new(norm_sq.sqrt(), 0.0);
        let full = &coeffs * coeffs.adjoint();
        Ok(Self {
            kind: ProbeKind::Pure(v.clone()),
            diagonal_weights: normalize(coeffs.iter().map(|c| c.norm_sqr()).collect()),
            full_matrix_in_eigenbasis: Some(full),
        })
    }

    /// Arbitrary density matrix in the computational basis.
    pub fn density(model: &CovarianceModel, rho: &DMatrix<C64>) -> Result<Self> {
        let d = model.dim();
        if rho.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: rho.nrows(),
            });
        }
        let herm = (rho - rho.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm > 1e-10 {
            return Err(Error::NotHermitian(herm));
        }
        let trace: f64 = (0..d).map(|i| rho[(i, i)].re).sum();
        if (trace - 1.0).abs() > 1e-10 {
            return Err(Error::Invalid(format!("density matrix has trace {trace}")));
        }
        let (values, _) = hermitian_eigen(&((rho + rho.adjoint()) * C64::new(0.5, 0.0)));
        if let Some(&min) = values.last() {
            if min < -1e-10 {
                return Err(Error::NotPositive(min));
            }
        }
        let u = model.eigenvectors();
        let full = u.adjoint() * rho * u;
        Ok(Self {
            kind: ProbeKind::Density(rho.clone()),
            diagonal_weights: normalize((0..d).map(|j| full[(j, j)].re.max(0.0)).collect()),
            full_matrix_in_eigenbasis: Some(full),
        })
    }

    /// Normalized centered test input as a pure probe.
    pub fn from_centered(model: &CovarianceModel, centered: &crate::covariance::CenteredInput) -> Result<Self> {
        if centered.degenerate {
            return Err(Error::Invalid("centered input is degenerate (nu = 0)".into()));
        }
        Self::pure(model, &centered.centered)
    }

    pub fn descriptor(&self) -> ProbeDescriptor {
        ProbeDescriptor {
            kind: self.kind.name().to_string(),
            weights: self.diagonal_weights.clone(),
        }
    }
}

fn normalize(mut w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    }
    w
}

/// Exact output position density `sum_j p_j g_{t1}(q - delta - lambda_j / t2)`.
pub fn position_density(model: &CovarianceModel, config: &MeasurementConfig, probe: &ProbeState, q: f64) -> f64 {
    config
        .centers(model.eigenvalues())
        .iter()
        .zip(&probe.diagonal_weights)
        .map(|(&c, &p)| p * logistic_density(config.t1, q - c))
        .sum()
}

/// Exact output CDF `sum_j p_j F_{t1}(beta - delta - lambda_j / t2)`.
pub fn position_cdf(model: &CovarianceModel, config: &MeasurementConfig, probe: &ProbeState, beta: f64) -> f64 {
    config
        .centers(model.eigenvalues())
        .iter()
        .zip(&probe.diagonal_weights)
        .map(|(&c, &p)| p * logistic_cdf(config.t1, beta - c))
        .sum()
}

/// Exact tail `Pr(q > beta) = sum_j p_j (1 - F_{t1}(beta - c_j))`, evaluated
/// through the survival form.
pub fn position_tail(model: &CovarianceModel, config: &MeasurementConfig, probe: &ProbeState, beta: f64) -> f64 {
    config
        .centers(model.eigenvalues())
        .iter()
        .zip(&probe.diagonal_weights)
        .map(|(&c, &p)| p * logistic_cdf(config.t1, c - beta))
        .sum()
}

/// Position outcomes from one simulated measurement run.
#[derive(Clone, Debug)]
pub struct PositionSampleSet {
    pub samples: Vec<f64>,
    pub seed: u64,
    pub probe: ProbeDescriptor,
    pub config: MeasurementConfig,
}

/// Words of ChaCha output consumed per sample (mode choice + logistic draw).
const WORDS_PER_SAMPLE: u64 = 4;
const CHUNK: usize = 8192;

struct Mixture<'a> {
    cumulative: Vec<f64>,
    total: f64,
    last_live: usize,
    centers: &'a [f64],
    t1: f64,
}

impl<'a> Mixture<'a> {
    fn new(centers: &'a [f64], weights: &[f64], t1: f64) -> Self {
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights {
            acc += w;
            cumulative.push(acc);
        }
        Self {
            cumulative,
            total: acc,
            last_live: weights.iter().rposition(|&w| w > 0.0).unwrap_or(0),
            centers,
            t1,
        }
    }

    /// Mode choice followed by an inverse-CDF logistic draw (two u64).
    fn draw(&self, rng: &mut CounterRng) -> f64 {
        let pick = rng.open01() * self.total;
        let j = self
            .cumulative
            .iter()
            .position(|&c| pick < c)
            .unwrap_or(self.last_live)
            .min(self.last_live);
        let u = rng.open01();
        self.centers[j] + self.t1 * (u / (1.0 - u)).ln()
    }
}

/// Draws `count` samples from a logistic mixture with the given centers and
/// weights. Sample `s` always uses the same slice of the `(seed, stream)`
/// generator, so the output is independent of thread count.
pub(crate) fn sample_mixture(
    centers: &[f64],
    weights: &[f64],
    t1: f64,
    count: usize,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let mixture = Mixture::new(centers, weights, t1);
    let mut out = Vec::new();
    fill_indexed(count, CHUNK, &mut out, |start, slice| {
        let mut rng = CounterRng::at(seed, stream, start as u64, WORDS_PER_SAMPLE);
        for q in slice.iter_mut() {
            *q = mixture.draw(&mut rng);
        }
    });
    out
}

/// Number of samples strictly above `beta`.
pub(crate) fn count_above(
    centers: &[f64],
    weights: &[f64],
    t1: f64,
    beta: f64,
    count: usize,
    seed: u64,
    stream: u64,
) -> u64 {
    sample_mixture(centers, weights, t1, count, seed, stream)
        .iter()
        .filter(|&&q| q > beta)
        .count() as u64
}

const WORDS_PER_SHOT: u64 = 6;

/// Unpostselected pipeline: each shot first succeeds with probability
/// `herald`, then (on success) measures a position from the mixture.
/// Returns `(successes, successes with q > beta)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn heralded_tail_counts(
    herald: f64,
    centers: &[f64],
    weights: &[f64],
    t1: f64,
    beta: f64,
    shots: usize,
    seed: u64,
    stream: u64,
) -> (u64, u64) {
    let mixture = Mixture::new(centers, weights, t1);
    let mut outcomes: Vec<u8> = Vec::new();
    fill_indexed(shots, CHUNK, &mut outcomes, |start, slice| {
        let mut rng = CounterRng::at(seed, stream, start as u64, WORDS_PER_SHOT);
        for o in slice.iter_mut() {
            // every shot consumes three draws so the stride stays fixed
            let success = rng.open01() < herald;
            let q = mixture.draw(&mut rng);
            *o = match (success, q > beta) {
                (false, _) => 0,
                (true, false) => 1,
                (true, true) => 2,
            };
        }
    });
    let successes = outcomes.iter().filter(|&&o| o > 0).count() as u64;
    let joint = outcomes.iter().filter(|&&o| o == 2).count() as u64;
    (successes, joint)
}

/// Simulates `count` runs of the measurement on `probe`.
pub fn sample_positions(
    model: &CovarianceModel,
    config: &MeasurementConfig,
    probe: &ProbeState,
    count: usize,
    seed: u64,
) -> Result<PositionSampleSet> {
    config.validate()?;
    if count == 0 {
        return Err(Error::Invalid("sample count must be at least 1".into()));
    }
    let samples = sample_mixture(
        &config.centers(model.eigenvalues()),
        &probe.diagonal_weights,
        config.t1,
        count,
        seed,
        0,
    );
    Ok(PositionSampleSet {
        samples,
        seed,
        probe: probe.descriptor(),
        config: *config,
    })
}

/// Binary effect of the tail event `q > beta`; equal to the Fermi-Dirac filter
/// at `T = t1 t2`, `mu = (beta - delta) t2`.
pub fn effect_from_threshold(model: &CovarianceModel, config: &MeasurementConfig, beta: f64) -> SoftFilter {
    fermi_dirac_filter(model, config.effective_temperature(), config.mu_for_threshold(beta))
}

/// Diagonal of the position Kraus operator `K_q`: `sqrt(g_{t1}(q - c_j))`.
pub fn kraus_density(model: &CovarianceModel, config: &MeasurementConfig, q: f64) -> Vec<f64> {
    config
        .centers(model.eigenvalues())
        .iter()
        .map(|&c| logistic_density(config.t1, q - c).sqrt())
        .collect()
}

/// Position window `(lo, hi]`; either end may be infinite.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || !(lo < hi) || lo == f64::INFINITY || hi == f64::NEG_INFINITY {
            return Err(Error::Invalid(format!("empty or inverted window ({lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn tail(beta: f64) -> Self {
        Self {
            lo: beta,
            hi: f64::INFINITY,
        }
    }

    pub fn full() -> Self {
        Self {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    /// Adjacent quantile windows `W_1 = (b_1, inf)`, `W_k = (b_k, b_{k-1}]`,
    /// `W_d = (-inf, b_{d-1}]` from a decreasing threshold ladder.
    pub fn ladder(thresholds: &[f64]) -> Result<Vec<Self>> {
        let mut edges = vec![f64::INFINITY];
        edges.extend_from_slice(thresholds);
        edges.push(f64::NEG_INFINITY);
        edges.windows(2).map(|w| Self::new(w[1], w[0])).collect()
    }
}

/// `E(W) = int_W K_q^2 dq`, in closed form as logistic CDF differences.
pub fn window_effect(model: &CovarianceModel, config: &MeasurementConfig, window: Window) -> Result<SpectralEffect> {
    let window = Window::new(window.lo, window.hi)?;
    Ok(SpectralEffect {
        occupations: config
            .centers(model.eigenvalues())
            .iter()
            .map(|&c| logistic_interval_mass(config.t1, c, window.lo, window.hi))
            .collect(),
    })
}

/// Absolute tolerance of the overlap quadrature.
pub const GAMMA_TOLERANCE: f64 = 1e-10;
/// Integration range beyond the outermost peak, in units of `t1`.
const GAMMA_CLIP: f64 = 40.0;

/// Window-overlap factor
/// `Gamma_ij = int_W sqrt(g(q - c_i) g(q - c_j)) dq`.
pub fn gamma_overlap(model: &CovarianceModel, config: &MeasurementConfig, window: Window, i: usize, j: usize) -> f64 {
    let centers = config.centers(model.eigenvalues());
    gamma_between(config.t1, centers[i], centers[j], window)
}

fn gamma_between(t1: f64, ci: f64, cj: f64, window: Window) -> f64 {
    if ci == cj {
        return logistic_interval_mass(t1, ci, window.lo, window.hi);
    }
    let (left, right) = (ci.min(cj), ci.max(cj));
    let lo = window.lo.max(left - GAMMA_CLIP * t1);
    let hi = window.hi.min(right + GAMMA_CLIP * t1);
    if !(lo < hi) {
        return 0.0;
    }
    let integrand = |q: f64| (logistic_density(t1, q - ci) * logistic_density(t1, q - cj)).sqrt();
    let mut cuts = vec![lo];
    for c in [left, right] {
        if c > lo && c < hi {
            cuts.push(c);
        }
    }
    cuts.push(hi);
    let share = GAMMA_TOLERANCE / (cuts.len() - 1) as f64;
    cuts.windows(2)
        .map(|w| integrate_adaptive(integrand, w[0], w[1], share))
        .sum()
}

/// Full `d x d` overlap matrix for a window.
pub fn gamma_matrix(model: &CovarianceModel, config: &MeasurementConfig, window: Window) -> DMatrix<f64> {
    let centers = config.centers(model.eigenvalues());
    let d = centers.len();
    let mut g = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = gamma_between(config.t1, centers[i], centers[j], window);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

#[derive(Clone, Debug)]
pub struct Postselected {
    /// Output state in the model eigenbasis.
    pub state: DMatrix<C64>,
    pub acceptance_probability: f64,
}

/// Smallest acceptance probability treated as a non-empty branch.
pub const MIN_ACCEPTANCE: f64 = 1e-12;

/// Data-register state conditioned on `q` landing in `window`.
pub fn postselected_state(
    model: &CovarianceModel,
    config: &MeasurementConfig,
    probe: &ProbeState,
    window: Window,
) -> Result<Postselected> {
    let effect = window_effect(model, config, window)?;
    let d = model.dim();
    let acceptance: f64 = effect
        .occupations
        .iter()
        .zip(&probe.diagonal_weights)
        .map(|(e, p)| e * p)
        .sum();
    if !(acceptance > MIN_ACCEPTANCE) {
        return Err(Error::EmptyBranch(acceptance));
    }
    let state = match &probe.full_matrix_in_eigenbasis {
        None => DMatrix::from_fn(d, d, |i, j| {
            if i == j {
                C64::new(effect.occupations[i] * probe.diagonal_weights[i] / acceptance, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }),
        Some(rho) => {
            let gamma = gamma_matrix(model, config, window);
            // diagonal Gamma equals the closed-form window effect
            let norm: f64 = (0..d).map(|i| gamma[(i, i)] * rho[(i, i)].re).sum();
            if !(norm > MIN_ACCEPTANCE) {
                return Err(Error::EmptyBranch(norm));
            }
            DMatrix::from_fn(d, d, |i, j| rho[(i, j)] * C64::new(gamma[(i, j)] / norm, 0.0))
        }
    };
    Ok(Postselected {
        state,
        acceptance_probability: acceptance,
    })
}

fn unitary_from_hermitian(h: &DMatrix<C64>, time: f64) -> DMatrix<C64> {
    // exp(-i t H) via the eigendecomposition of H
    let (values, vectors) = hermitian_eigen(h);
    let d = values.len();
    let phases = DMatrix::from_fn(d, d, |i, j| {
        if i == j {
            C64::from_polar(1.0, -time * values[i])
        } else {
            C64::new(0.0, 0.0)
        }
    });
    &vectors * phases * vectors.adjoint()
}

fn operator_norm(a: &DMatrix<C64>) -> f64 {
    let gram = a.adjoint() * a;
    let gram = (&gram + gram.adjoint()) * C64::new(0.5, 0.0);
    let (values, _) = hermitian_eigen(&gram);
    values.first().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Operator-norm error of `R` first-order rounds
/// `(exp(+i D p |m><m|) exp(-i D p rho_bar))^R` against `exp(-i p C / t2)`,
/// with `D = 1 / (R t2)` and a scalar `p` standing in for the momentum.
pub fn trotter_round_error(model: &CovarianceModel, momentum: f64, rounds: usize, t2: f64) -> Result<f64> {
    if rounds == 0 {
        return Err(Error::Invalid("at least one round is required".into()));
    }
    if !(t2 > 0.0) {
        return Err(Error::Invalid("evolution scale must be positive".into()));
    }
    let mean = model.mean_vector().ok_or(Error::MissingMean)?;
    let rho_bar = model.second_moment().ok_or(Error::MissingMean)?;
    let d = model.dim();
    let step = momentum / (rounds as f64 * t2);

    let empirical = unitary_from_hermitian(&rho_bar, step);
    let alpha = mean.norm_squared();
    let mean_term = if alpha > 0.0 {
        // exp(+i s |m><m|) = 1 + (e^{i s alpha} - 1) |m><m| / alpha
        let factor = (C64::from_polar(1.0, step * alpha) - C64::new(1.0, 0.0)) / C64::new(alpha, 0.0);
        DMatrix::identity(d, d) + mean * mean.adjoint() * factor
    } else {
        DMatrix::identity(d, d)
    };
    let round = mean_term * empirical;
    let mut product = DMatrix::identity(d, d);
    for _ in 0..rounds {
        product = &round * product;
    }
    let target = unitary_from_hermitian(model.matrix(), momentum / t2);
    Ok(operator_norm(&(product - target)))
}

/// Exposes the logistic density used by the measurement at a given width and center.
pub fn mode_density(t1: f64, center: f64, q: f64) -> f64 {
    numeric::logistic_density(t1, q - center)
}
