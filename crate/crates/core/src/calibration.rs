//! Thresholds from position samples, and how many samples to draw.
//!
//! Rank thresholds come from the maximally mixed probe (tail mass `k/d`);
//! variance thresholds come from the covariance probe (tail mass `theta`).
//! Both are read off one sorted sample set, so every threshold in a ladder
//! shares the same statistical event.

use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::measurement::{
    count_above, effect_from_threshold, heralded_tail_counts, MeasurementConfig, PositionSampleSet,
};
use crate::numeric::BernoulliEstimate;
use crate::rng::derive_seed;
use crate::soft_filter::{
    components_from_ladder, fixed_variance_filter, normalized_retained_variance, retained_variance, solve_mu,
    solve_mu_for_variance, DualMethod, FixedVarianceFilter, SpectralEffect,
};

/// Sorted position samples.
#[derive(Clone, Debug)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Invalid("empirical CDF needs at least one sample".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!("sample {i} is not finite")));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn from_sample_set(set: &PositionSampleSet) -> Result<Self> {
        Self::new(set.samples.clone())
    }

    pub fn count(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted_samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `G(beta) = #{q > beta} / S`.
    pub fn survival(&self, beta: f64) -> f64 {
        let at_or_below = self.sorted.partition_point(|&x| x <= beta);
        (self.sorted.len() - at_or_below) as f64 / self.sorted.len() as f64
    }

    /// `F(beta) = 1 - G(beta)`.
    pub fn cdf(&self, beta: f64) -> f64 {
        1.0 - self.survival(beta)
    }

    /// The `r`-th smallest sample, 1-based.
    pub fn order_statistic(&self, r: usize) -> f64 {
        self.sorted[r.clamp(1, self.sorted.len()) - 1]
    }

    /// `inf{beta : F(beta) >= 1 - k/d}`, the `ceil(S (d-k)/d)`-th order statistic.
    pub fn rank_quantile_position(&self, d: usize, k: usize) -> usize {
        let s = self.sorted.len() as u128;
        let num = s * (d - k) as u128;
        (num.div_ceil(d as u128)) as usize
    }

    /// `inf{beta : G(beta) <= theta}`, the `(S - floor(theta S))`-th order statistic.
    pub fn tail_quantile_position(&self, theta: f64) -> usize {
        let s = self.sorted.len();
        let allowed = ((theta * s as f64).floor() as usize).min(s - 1);
        s - allowed
    }

    /// Largest 1-based position whose sample is strictly below `value`, if any.
    fn position_below(&self, value: f64) -> Option<usize> {
        let n = self.sorted.partition_point(|&x| x < value);
        (n > 0).then_some(n)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ThresholdSource {
    Empirical {
        #[serde(rename = "S")]
        samples: usize,
        seed: u64,
    },
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub k: usize,
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEntry {
    pub theta: f64,
    pub beta: f64,
}

/// Rank-indexed thresholds, ascending in `k` (so strictly decreasing in `beta`).
#[derive(Clone, Debug, PartialEq)]
pub struct RankThresholds {
    pub dim: usize,
    pub entries: Vec<RankEntry>,
    pub source: ThresholdSource,
    pub config: MeasurementConfig,
    pub warnings: Vec<String>,
}

/// Variance-indexed thresholds, ascending in `theta`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceThresholds {
    pub entries: Vec<VarianceEntry>,
    pub source: ThresholdSource,
    pub config: MeasurementConfig,
    pub warnings: Vec<String>,
}

impl RankThresholds {
    pub fn beta(&self, k: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.k == k).map(|e| e.beta)
    }

    /// True when every `k = 1..d-1` is present.
    pub fn is_full_ladder(&self) -> bool {
        self.entries.len() == self.dim - 1 && self.entries.iter().enumerate().all(|(i, e)| e.k == i + 1)
    }

    /// Soft spectral resolution `D_k = M(beta_k) - M(beta_{k-1})`, `k = 1..d`.
    pub fn soft_resolution(&self, model: &CovarianceModel) -> Result<Vec<SpectralEffect>> {
        if model.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: model.dim(),
            });
        }
        if !self.is_full_ladder() {
            return Err(Error::Invalid(
                "soft resolution needs thresholds for every k = 1..d-1".into(),
            ));
        }
        let ladder: Vec<Vec<f64>> = self
            .entries
            .iter()
            .map(|e| effect_from_threshold(model, &self.config, e.beta).occupations)
            .collect();
        Ok(components_from_ladder(self.dim, &ladder))
    }
}

impl VarianceThresholds {
    pub fn beta(&self, theta: f64) -> Option<f64> {
        self.entries.iter().find(|e| e.theta == theta).map(|e| e.beta)
    }
}

fn check_ks(d: usize, ks: &[usize]) -> Result<Vec<usize>> {
    if ks.is_empty() {
        return Err(Error::Invalid("no rank levels requested".into()));
    }
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k >= d) {
        return Err(Error::Invalid(format!("rank level k={k} outside 1..={}", d - 1)));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

fn check_thetas(thetas: &[f64]) -> Result<Vec<f64>> {
    if thetas.is_empty() {
        return Err(Error::Invalid("no variance levels requested".into()));
    }
    if let Some(&t) = thetas.iter().find(|&&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::Invalid(format!("variance level {t} outside (0,1)")));
    }
    let mut thetas = thetas.to_vec();
    thetas.sort_by(f64::total_cmp);
    thetas.dedup();
    Ok(thetas)
}

/// Reads thresholds at the given order-statistic positions (ordered so the
/// values should strictly decrease) and repairs ties by stepping down to the
/// next smaller sample. Ties that cannot be broken are kept with a warning.
fn read_ladder(cdf: &EmpiricalCdf, positions: &[usize], labels: &[String], warnings: &mut Vec<String>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(positions.len());
    for (i, &r) in positions.iter().enumerate() {
        let mut value = cdf.order_statistic(r);
        if let Some(&prev) = out.last() {
            if value >= prev {
                match cdf.position_below(prev) {
                    Some(p) => {
                        value = cdf.order_statistic(p);
                        let msg = format!(
                            "{}: tied with the previous level, moved down to order statistic {p}",
                            labels[i]
                        );
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                    None => {
                        let msg = format!(
                            "{}: tied with the previous level and no smaller sample exists",
                            labels[i]
                        );
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                }
            }
        }
        out.push(value);
    }
    out
}

fn few_samples_warning(cdf: &EmpiricalCdf, d: usize, warnings: &mut Vec<String>) {
    if cdf.count() < d {
        let msg = format!(
            "only {} samples for dimension {d}; quantiles below 1/d resolution",
            cdf.count()
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
}

/// Empirical rank ladder `beta_k = inf{beta : F(beta) >= 1 - k/d}` from
/// maximally-mixed-probe samples.
pub fn calibrate_ranks(
    cdf: &EmpiricalCdf,
    d: usize,
    ks: &[usize],
    config: MeasurementConfig,
    seed: u64,
) -> Result<RankThresholds> {
    let ks = check_ks(d, ks)?;
    let mut warnings = Vec::new();
    few_samples_warning(cdf, d, &mut warnings);
    let positions: Vec<usize> = ks.iter().map(|&k| cdf.rank_quantile_position(d, k)).collect();
    let labels: Vec<String> = ks.iter().map(|k| format!("k={k}")).collect();
    let betas = read_ladder(cdf, &positions, &labels, &mut warnings);
    Ok(RankThresholds {
        dim: d,
        entries: ks.iter().zip(betas).map(|(&k, beta)| RankEntry { k, beta }).collect(),
        source: ThresholdSource::Empirical {
            samples: cdf.count(),
            seed,
        },
        config,
        warnings,
    })
}

/// [`calibrate_ranks`] on a sample set, which must come from the maximally mixed probe.
pub fn calibrate_ranks_from(set: &PositionSampleSet, d: usize, ks: &[usize]) -> Result<RankThresholds> {
    if set.probe.kind != "maximally_mixed" {
        return Err(Error::Invalid(format!(
            "rank calibration needs maximally mixed probe samples, got {}",
            set.probe.kind
        )));
    }
    calibrate_ranks(&EmpiricalCdf::from_sample_set(set)?, d, ks, set.config, set.seed)
}

/// Population thresholds `beta*_k = mu*_k / t2 + delta`.
pub fn calibrate_exact_ranks(
    model: &CovarianceModel,
    config: MeasurementConfig,
    ks: &[usize],
    tol: f64,
) -> Result<RankThresholds> {
    config.validate()?;
    let ks = check_ks(model.dim(), ks)?;
    let temperature = config.effective_temperature();
    let mut entries = Vec::with_capacity(ks.len());
    for &k in &ks {
        let mu = solve_mu(model, temperature, k, DualMethod::Bisection, tol)?.mu_star;
        entries.push(RankEntry {
            k,
            beta: config.threshold_for_mu(mu),
        });
    }
    if let Some(i) = entries.windows(2).position(|w| !(w[0].beta > w[1].beta)) {
        return Err(Error::NonMonotone(i + 1));
    }
    Ok(RankThresholds {
        dim: model.dim(),
        entries,
        source: ThresholdSource::Exact,
        config,
        warnings: Vec::new(),
    })
}

/// Empirical variance thresholds `beta_theta = inf{beta : G_C(beta) <= theta}`
/// from covariance-probe samples.
pub fn calibrate_variance(
    cdf: &EmpiricalCdf,
    thetas: &[f64],
    config: MeasurementConfig,
    seed: u64,
) -> Result<VarianceThresholds> {
    let thetas = check_thetas(thetas)?;
    let mut warnings = Vec::new();
    let positions: Vec<usize> = thetas.iter().map(|&t| cdf.tail_quantile_position(t)).collect();
    let labels: Vec<String> = thetas.iter().map(|t| format!("theta={t}")).collect();
    let betas = read_ladder(cdf, &positions, &labels, &mut warnings);
    Ok(VarianceThresholds {
        entries: thetas
            .iter()
            .zip(betas)
            .map(|(&theta, beta)| VarianceEntry { theta, beta })
            .collect(),
        source: ThresholdSource::Empirical {
            samples: cdf.count(),
            seed,
        },
        config,
        warnings,
    })
}

/// [`calibrate_variance`] on a sample set, which must come from the covariance probe.
pub fn calibrate_variance_from(set: &PositionSampleSet, thetas: &[f64]) -> Result<VarianceThresholds> {
    if set.probe.kind != "covariance_probe" {
        return Err(Error::Invalid(format!(
            "variance calibration needs covariance probe samples, got {}",
            set.probe.kind
        )));
    }
    calibrate_variance(&EmpiricalCdf::from_sample_set(set)?, thetas, set.config, set.seed)
}

/// Population variance thresholds on the trace-constrained filter path.
pub fn calibrate_exact_variance(
    model: &CovarianceModel,
    config: MeasurementConfig,
    thetas: &[f64],
    tol: f64,
) -> Result<VarianceThresholds> {
    config.validate()?;
    let thetas = check_thetas(thetas)?;
    let temperature = config.effective_temperature();
    let mut entries = Vec::with_capacity(thetas.len());
    for &theta in &thetas {
        let mu = solve_mu_for_variance(model, temperature, theta, tol)?;
        entries.push(VarianceEntry {
            theta,
            beta: config.threshold_for_mu(mu),
        });
    }
    if let Some(i) = entries.windows(2).position(|w| !(w[0].beta > w[1].beta)) {
        return Err(Error::NonMonotone(i + 1));
    }
    Ok(VarianceThresholds {
        entries,
        source: ThresholdSource::Exact,
        config,
        warnings: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum SampleTask {
    AllRank,
    FixedRank {
        k: usize,
    },
    Fractional,
    VarianceProfile,
    /// Bisection over a multiplier interval of the given width.
    FixedVariance {
        theta: f64,
        t_prime: f64,
        interval: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBudget {
    pub eta: f64,
    pub delta_fail: f64,
    pub d: usize,
    pub task: SampleTask,
}

impl SampleBudget {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Invalid(format!(
                "accuracy eta must be positive, got {}",
                self.eta
            )));
        }
        if !(self.delta_fail > 0.0 && self.delta_fail < 1.0) {
            return Err(Error::Invalid(format!(
                "failure probability must lie in (0,1), got {}",
                self.delta_fail
            )));
        }
        if self.d < 2 {
            return Err(Error::Invalid("dimension must be at least 2".into()));
        }
        match self.task {
            SampleTask::FixedRank { k } if k == 0 || k >= self.d => {
                Err(Error::Invalid(format!("rank level k={k} outside 1..={}", self.d - 1)))
            }
            SampleTask::FixedVariance {
                theta,
                t_prime,
                interval,
            } => {
                if !(theta > 0.0 && theta < 1.0) || !(t_prime > 0.0) || !(interval > 0.0 && interval.is_finite()) {
                    Err(Error::Invalid(
                        "fixed-variance task needs theta in (0,1), T' > 0 and a positive interval".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Bisection steps needed to shrink `interval` below `eta`.
pub fn bisection_steps(interval: f64, eta: f64) -> u64 {
    ((interval / eta).log2().ceil()).max(1.0) as u64
}

/// Sample count sufficient for the requested guarantee. For the fixed-variance
/// task this is the per-step count; multiply by [`bisection_steps`] for the
/// total. That count is sufficient, not tight.
pub fn plan_samples(budget: &SampleBudget) -> Result<u64> {
    budget.validate()?;
    let eta = budget.eta;
    let d = budget.d as f64;
    let log_term = (2.0 / budget.delta_fail).ln();
    let count = match budget.task {
        SampleTask::AllRank => d * d / (2.0 * eta * eta) * log_term,
        SampleTask::FixedRank { k } => {
            let k = k as f64;
            (2.0 * k * (d - k) / (eta * eta) + 2.0 * d / (3.0 * eta)) * log_term
        }
        SampleTask::Fractional | SampleTask::VarianceProfile => log_term / (2.0 * eta * eta),
        SampleTask::FixedVariance { interval, .. } => {
            let steps = bisection_steps(interval, eta) as f64;
            (2.0 * steps / budget.delta_fail).ln() / (2.0 * eta * eta)
        }
    };
    Ok(count.ceil() as u64)
}

/// `M_theta = P_{K-1} + a |u_K><u_K|`, the zero-temperature limit of the
/// variance-calibrated filter.
pub fn variance_limit_filter(model: &CovarianceModel, theta: f64) -> Result<SpectralEffect> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Invalid(format!("variance level {theta} outside (0,1)")));
    }
    let v = model.total_variance();
    if !(v > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let target = theta * v;
    let spectrum = model.eigenvalues();
    let mut below = 0.0;
    for (idx, &l) in spectrum.iter().enumerate() {
        if below + l >= target {
            if !(l > 0.0) {
                break;
            }
            let a = ((target - below) / l).clamp(0.0, 1.0);
            let mut occupations = vec![0.0; spectrum.len()];
            occupations[..idx].iter_mut().for_each(|m| *m = 1.0);
            occupations[idx] = a;
            return Ok(SpectralEffect { occupations });
        }
        below += l;
    }
    Err(Error::Infeasible(format!(
        "variance level {theta} is not reachable on the support of the spectrum"
    )))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum VarianceTarget {
    /// `Tr(rho_C M) = theta`.
    Normalized(f64),
    /// `Tr(C M) = gamma`.
    Unnormalized(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Evaluation {
    /// Closed-form retained variance.
    Exact,
    /// Monte Carlo with `per_step_samples` shots per evaluation.
    Sampled {
        per_step_samples: usize,
        seed: u64,
        t2: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BisectionStep {
    pub lo: f64,
    pub hi: f64,
    pub lambda: f64,
    pub estimate: f64,
}

#[derive(Clone, Debug)]
pub struct FixedVarianceReport {
    pub lambda: f64,
    pub filter: FixedVarianceFilter,
    /// Bracket after expansion, before bisection.
    pub bracket: (f64, f64),
    pub expansions: usize,
    pub trajectory: Vec<BisectionStep>,
}

/// Doublings allowed when growing the multiplier bracket.
pub const BRACKET_DOUBLINGS: usize = 60;

/// Estimate of `p_cond = Tr(rho_C M_lambda)` from covariance-probe samples run
/// with the multiplier-scaled evolution (`t1 = T'/t2`, threshold `1/t2`).
pub fn estimate_conditional(
    model: &CovarianceModel,
    t_prime: f64,
    lambda: f64,
    t2: f64,
    shots: usize,
    seed: u64,
    stream: u64,
) -> Result<BernoulliEstimate> {
    let (centers, weights, t1) = scaled_measurement(model, t_prime, lambda, t2)?;
    let successes = count_above(&centers, &weights, t1, 1.0 / t2, shots, seed, stream);
    Ok(BernoulliEstimate {
        successes,
        trials: shots as u64,
    })
}

/// Estimate of `p_joint = Tr(C M_lambda) / 4`: the centered covariance probe is
/// heralded with probability `V_C / 4`, then measured.
pub fn estimate_joint(
    model: &CovarianceModel,
    t_prime: f64,
    lambda: f64,
    t2: f64,
    shots: usize,
    seed: u64,
    stream: u64,
) -> Result<BernoulliEstimate> {
    let (centers, weights, t1) = scaled_measurement(model, t_prime, lambda, t2)?;
    let herald = model.total_variance() / 4.0;
    let (_, joint) = heralded_tail_counts(herald, &centers, &weights, t1, 1.0 / t2, shots, seed, stream);
    Ok(BernoulliEstimate {
        successes: joint,
        trials: shots as u64,
    })
}

fn scaled_measurement(
    model: &CovarianceModel,
    t_prime: f64,
    lambda: f64,
    t2: f64,
) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if !(t_prime > 0.0) || !(t2 > 0.0) {
        return Err(Error::Invalid(
            "entropy scale and evolution scale must be positive".into(),
        ));
    }
    let v = model.total_variance();
    if !(v > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let centers = model.eigenvalues().iter().map(|&l| lambda * l / t2).collect();
    let weights = model.eigenvalues().iter().map(|&l| l / v).collect();
    Ok((centers, weights, t_prime / t2))
}

/// Bisection for the multiplier `lambda` of the fixed-variance filter.
pub fn fixed_variance_bisection(
    model: &CovarianceModel,
    t_prime: f64,
    target: VarianceTarget,
    evaluation: Evaluation,
    steps: usize,
) -> Result<FixedVarianceReport> {
    if !(t_prime > 0.0) {
        return Err(Error::Invalid("entropy scale must be positive".into()));
    }
    let v = model.total_variance();
    if !(v > 0.0) {
        return Err(Error::ZeroVariance);
    }
    // compare on the probability scale actually measured
    let goal = match target {
        VarianceTarget::Normalized(theta) if theta > 0.0 && theta < 1.0 => theta,
        VarianceTarget::Unnormalized(gamma) if gamma > 0.0 && gamma < v => gamma / 4.0,
        _ => return Err(Error::Invalid(format!("variance target {target:?} out of range"))),
    };
    let mut stream = 0u64;
    let mut evaluate = |lambda: f64| -> Result<f64> {
        stream += 1;
        match evaluation {
            Evaluation::Exact => {
                let f = fixed_variance_filter(model, t_prime, lambda);
                Ok(match target {
                    VarianceTarget::Normalized(_) => normalized_retained_variance(model, &f)?,
                    VarianceTarget::Unnormalized(_) => retained_variance(model, &f) / 4.0,
                })
            }
            Evaluation::Sampled {
                per_step_samples,
                seed,
                t2,
            } => {
                let seed = derive_seed(seed, "fixed-variance");
                let est = match target {
                    VarianceTarget::Normalized(_) => {
                        estimate_conditional(model, t_prime, lambda, t2, per_step_samples, seed, stream)?
                    }
                    VarianceTarget::Unnormalized(_) => {
                        estimate_joint(model, t_prime, lambda, t2, per_step_samples, seed, stream)?
                    }
                };
                Ok(est.value())
            }
        }
    };

    let scale = 2.0 / model.eigenvalues()[0];
    let mut lo = 0.0;
    let mut hi = scale;
    let mut expansions = 0;
    while evaluate(hi)? < goal {
        if expansions == BRACKET_DOUBLINGS {
            return Err(Error::BracketExpansion(expansions));
        }
        lo = hi;
        hi *= 2.0;
        expansions += 1;
    }
    if lo == 0.0 {
        // target may sit below p(0) = sigmoid(-1/T'), which needs lambda < 0
        let mut width = scale;
        while evaluate(lo)? > goal {
            if expansions == BRACKET_DOUBLINGS {
                return Err(Error::BracketExpansion(expansions));
            }
            hi = lo;
            lo -= width;
            width *= 2.0;
            expansions += 1;
        }
    }
    let bracket = (lo, hi);
    let mut trajectory = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let estimate = evaluate(mid)?;
        trajectory.push(BisectionStep {
            lo,
            hi,
            lambda: mid,
            estimate,
        });
        if estimate < goal {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = 0.5 * (lo + hi);
    Ok(FixedVarianceReport {
        lambda,
        filter: fixed_variance_filter(model, t_prime, lambda),
        bracket,
        expansions,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{position_cdf, position_tail, sample_positions, ProbeState};
    use crate::soft_filter::DiagonalEffect;

    fn diag(l: &[f64]) -> CovarianceModel {
        CovarianceModel::from_spectrum(l).unwrap()
    }

    fn cfg(t1: f64, t2: f64) -> MeasurementConfig {
        MeasurementConfig::new(t1, t2, 0.0).unwrap()
    }

    #[test]
    fn empirical_cdf_is_right_continuous() {
        let cdf = EmpiricalCdf::new(vec![3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(cdf.cdf(2.0), 0.75);
        assert_eq!(cdf.survival(2.0), 0.25);
        assert_eq!(cdf.cdf(0.5), 0.0);
        assert_eq!(cdf.cdf(3.0), 1.0);
        assert!(EmpiricalCdf::new(vec![]).is_err());
        assert!(EmpiricalCdf::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn rank_quantile_is_the_infimum() {
        let samples: Vec<f64> = (1..=10).map(f64::from).collect();
        let cdf = EmpiricalCdf::new(samples).unwrap();
        // d = 4, k = 1: F >= 3/4 first at the 8th sample
        let t = calibrate_ranks(&cdf, 4, &[1, 2, 3], cfg(1.0, 1.0), 0).unwrap();
        assert_eq!(t.beta(1), Some(8.0));
        assert_eq!(t.beta(2), Some(5.0));
        assert_eq!(t.beta(3), Some(3.0));
        for e in &t.entries {
            assert!(cdf.cdf(e.beta) >= 1.0 - e.k as f64 / 4.0);
            assert!(cdf.cdf(e.beta - 1e-9) < 1.0 - e.k as f64 / 4.0);
        }
    }

    #[test]
    fn tail_quantile_is_the_infimum() {
        let samples: Vec<f64> = (1..=10).map(f64::from).collect();
        let cdf = EmpiricalCdf::new(samples).unwrap();
        let t = calibrate_variance(&cdf, &[0.25, 0.5], cfg(1.0, 1.0), 0).unwrap();
        for e in &t.entries {
            assert!(cdf.survival(e.beta) <= e.theta);
            assert!(cdf.survival(e.beta - 1e-9) > e.theta);
        }
        let t = calibrate_variance(&cdf, &[0.999], cfg(1.0, 1.0), 0).unwrap();
        assert_eq!(t.entries[0].beta, 1.0);
    }

    #[test]
    fn identical_samples_share_one_threshold() {
        let cdf = EmpiricalCdf::new(vec![0.7; 50]).unwrap();
        let t = calibrate_ranks(&cdf, 4, &[1, 2, 3], cfg(1.0, 1.0), 0).unwrap();
        assert!(t.entries.iter().all(|e| e.beta == 0.7));
        assert_eq!(t.warnings.len(), 2);
    }

    #[test]
    fn ties_are_nudged_down() {
        let cdf = EmpiricalCdf::new(vec![0.0, 1.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        let t = calibrate_ranks(&cdf, 3, &[1, 2], cfg(1.0, 1.0), 0).unwrap();
        assert_eq!(t.beta(1), Some(1.0));
        assert_eq!(t.beta(2), Some(0.0));
        assert_eq!(t.warnings.len(), 1);
    }

    #[test]
    fn few_samples_warn() {
        let cdf = EmpiricalCdf::new(vec![0.0, 1.0]).unwrap();
        let t = calibrate_ranks(&cdf, 4, &[1, 2, 3], cfg(1.0, 1.0), 0).unwrap();
        assert!(t.warnings.iter().any(|w| w.contains("only 2 samples")));
    }

    #[test]
    fn rank_levels_are_validated() {
        let cdf = EmpiricalCdf::new(vec![0.0, 1.0]).unwrap();
        assert!(calibrate_ranks(&cdf, 4, &[0], cfg(1.0, 1.0), 0).is_err());
        assert!(calibrate_ranks(&cdf, 4, &[4], cfg(1.0, 1.0), 0).is_err());
        assert!(calibrate_variance(&cdf, &[1.0], cfg(1.0, 1.0), 0).is_err());
    }

    #[test]
    fn exact_two_mode_threshold() {
        let m = diag(&[2.0, 1.0]);
        let c = cfg(0.1, 2.0);
        let t = calibrate_exact_ranks(&m, c, &[1], 1e-13).unwrap();
        assert!((t.beta(1).unwrap() - 1.5 / 2.0).abs() < 1e-12);
    }

    #[test]
    fn exact_quantile_equation() {
        let m = diag(&[1.3, 0.9, 0.4, 0.35, 0.1, 0.0]);
        let c = MeasurementConfig::new(0.05, 0.8, 0.2).unwrap();
        let t = calibrate_exact_ranks(&m, c, &[1, 2, 3, 4, 5], 1e-13).unwrap();
        let probe = ProbeState::maximally_mixed(&m);
        for e in &t.entries {
            let tail = 1.0 - position_cdf(&m, &c, &probe, e.beta);
            assert!((tail - e.k as f64 / 6.0).abs() < 1e-10);
        }
    }

    #[test]
    fn exact_variance_thresholds() {
        let m = diag(&[1.0, 1.0]);
        let c = cfg(0.3, 1.0);
        let t = calibrate_exact_variance(&m, c, &[0.5], 1e-13).unwrap();
        // equal weights: the median of the mixture sits at the common peak
        assert!((t.entries[0].beta - 1.0).abs() < 1e-10);
        let probe = ProbeState::covariance_probe(&m).unwrap();
        assert!((position_tail(&m, &c, &probe, t.entries[0].beta) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn planner_formulas() {
        let plan = |d, task| {
            plan_samples(&SampleBudget {
                eta: 0.1,
                delta_fail: 0.05,
                d,
                task,
            })
            .unwrap()
        };
        assert_eq!(plan(4, SampleTask::AllRank), 2952);
        assert_eq!(plan(4, SampleTask::FixedRank { k: 1 }), 2312);
        assert_eq!(plan(4, SampleTask::Fractional), 185);
        assert_eq!(plan(256, SampleTask::VarianceProfile), 185);
        let fv = plan(
            4,
            SampleTask::FixedVariance {
                theta: 0.5,
                t_prime: 0.1,
                interval: 10.0,
            },
        );
        // 7 steps: ln(280)/0.02
        assert_eq!(fv, (280f64.ln() / 0.02).ceil() as u64);
        assert!(plan_samples(&SampleBudget {
            eta: 0.0,
            delta_fail: 0.05,
            d: 4,
            task: SampleTask::AllRank
        })
        .is_err());
    }

    #[test]
    fn variance_limit_examples() {
        let m = diag(&[3.0, 1.0]);
        let f = variance_limit_filter(&m, 0.9).unwrap();
        assert!((f.occupations[0] - 1.0).abs() < 1e-15);
        assert!((f.occupations[1] - 0.6).abs() < 1e-12);
        let f = variance_limit_filter(&m, 0.75).unwrap();
        assert_eq!(f.occupations, vec![1.0, 0.0]);
        let m = diag(&[1.0, 0.0]);
        assert!(variance_limit_filter(&m, 0.5).is_ok());
    }

    #[test]
    fn exact_bisection_on_scaled_identity() {
        let c = 0.25;
        let m = diag(&[c; 4]);
        let tp = 0.2;
        for &theta in &[0.05f64, 0.3, 0.5, 0.9] {
            let analytic = (1.0 - tp * ((1.0 - theta) / theta).ln()) / c;
            let r = fixed_variance_bisection(&m, tp, VarianceTarget::Normalized(theta), Evaluation::Exact, 80).unwrap();
            assert!(
                (r.lambda - analytic).abs() < 1e-6,
                "{theta}: {} vs {analytic}",
                r.lambda
            );
        }
    }

    #[test]
    fn exact_bisection_unnormalized() {
        let m = diag(&[0.5, 0.3, 0.1]);
        let gamma = 0.45;
        let r = fixed_variance_bisection(&m, 0.05, VarianceTarget::Unnormalized(gamma), Evaluation::Exact, 80).unwrap();
        assert!((retained_variance(&m, &r.filter) - gamma).abs() < 1e-9);
        let ests: Vec<f64> = r.trajectory.iter().map(|s| s.estimate).collect();
        let lambdas: Vec<f64> = r.trajectory.iter().map(|s| s.lambda).collect();
        for i in 0..lambdas.len() {
            for j in 0..lambdas.len() {
                if lambdas[i] < lambdas[j] {
                    assert!(ests[i] <= ests[j]);
                }
            }
        }
    }

    #[test]
    fn sampled_bisection_lands_near_target() {
        let m = diag(&[0.6, 0.3, 0.1]);
        let r = fixed_variance_bisection(
            &m,
            0.1,
            VarianceTarget::Normalized(0.7),
            Evaluation::Sampled {
                per_step_samples: 20_000,
                seed: 4,
                t2: 1.0,
            },
            20,
        )
        .unwrap();
        let theta = normalized_retained_variance(&m, &r.filter).unwrap();
        assert!((theta - 0.7).abs() < 0.03, "{theta}");
    }

    #[test]
    fn sampled_rank_ladder_tracks_trace() {
        let m = diag(&[1.0, 0.7, 0.3, 0.1]);
        let c = cfg(0.05, 1.0);
        let probe = ProbeState::maximally_mixed(&m);
        let set = sample_positions(&m, &c, &probe, 50_000, 11).unwrap();
        let t = calibrate_ranks_from(&set, 4, &[1, 2, 3]).unwrap();
        for e in &t.entries {
            let trace = effect_from_threshold(&m, &c, e.beta).trace();
            assert!((trace - e.k as f64).abs() < 0.05, "{}: {trace}", e.k);
        }
        let comps = t.soft_resolution(&m).unwrap();
        let total: Vec<f64> = (0..4).map(|j| comps.iter().map(|d| d.occupations[j]).sum()).collect();
        assert!(total.iter().all(|&x| (x - 1.0).abs() < 1e-12));
        assert!(calibrate_variance_from(&set, &[0.5]).is_err());
    }
}
