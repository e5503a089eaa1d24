//! Scoring new inputs against calibrated filters.
//!
//! All scores are computed from the eigenbasis coefficients `c_j = <u_j|z_x>`
//! of the centered input; no dense filter matrix is ever formed.

use serde::{Deserialize, Serialize};

use crate::calibration::{RankThresholds, VarianceThresholds};
use crate::covariance::{CenteredInput, CovarianceModel};
use crate::error::{Error, Result};
use crate::measurement::{count_above, effect_from_threshold, heralded_tail_counts, MeasurementConfig};
use crate::numeric::BernoulliEstimate;
use crate::soft_filter::DiagonalEffect;

/// `s = <z|M|z>` and `s_bar = s / nu`; `s_bar` is `None` for degenerate inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub s: f64,
    pub s_bar: Option<f64>,
    pub nu: f64,
}

impl Score {
    pub fn is_degenerate(&self) -> bool {
        self.s_bar.is_none()
    }
}

fn energies(model: &CovarianceModel, centered: &CenteredInput) -> Result<Vec<f64>> {
    if centered.centered.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: centered.centered.len(),
        });
    }
    Ok(model
        .coefficients(&centered.centered)
        .iter()
        .map(|c| c.norm_sqr())
        .collect())
}

fn score_from_energies(occupations: &[f64], weights: &[f64], centered: &CenteredInput) -> Score {
    if centered.degenerate {
        return Score {
            s: 0.0,
            s_bar: None,
            nu: centered.nu,
        };
    }
    let s: f64 = occupations.iter().zip(weights).map(|(m, w)| m * w).sum();
    Score {
        s,
        s_bar: Some((s / centered.nu).clamp(0.0, 1.0)),
        nu: centered.nu,
    }
}

/// Soft subspace score of a centered input under a diagonal effect.
pub fn score<E: DiagonalEffect + ?Sized>(
    model: &CovarianceModel,
    effect: &E,
    centered: &CenteredInput,
) -> Result<Score> {
    let occ = effect.occupations();
    if occ.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            found: occ.len(),
        });
    }
    Ok(score_from_energies(occ, &energies(model, centered)?, centered))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledScore {
    pub label: String,
    pub s: f64,
    pub s_bar: Option<f64>,
}

/// Rejects thresholds calibrated under a different measurement configuration.
pub fn ensure_same_config(calibrated: &MeasurementConfig, deployed: &MeasurementConfig) -> Result<()> {
    let bits = |c: &MeasurementConfig| [c.t1.to_bits(), c.t2.to_bits(), c.delta.to_bits()];
    if bits(calibrated) != bits(deployed) {
        return Err(Error::Invalid(format!(
            "thresholds were calibrated at {calibrated:?} but deployment uses {deployed:?}"
        )));
    }
    Ok(())
}

/// Scores at every rank threshold, ascending in `k`.
pub fn score_rank_thresholds(
    model: &CovarianceModel,
    thresholds: &RankThresholds,
    deployed: &MeasurementConfig,
    centered: &CenteredInput,
) -> Result<Vec<LabeledScore>> {
    ensure_same_config(&thresholds.config, deployed)?;
    let w = energies(model, centered)?;
    Ok(thresholds
        .entries
        .iter()
        .map(|e| {
            let f = effect_from_threshold(model, deployed, e.beta);
            let sc = score_from_energies(&f.occupations, &w, centered);
            LabeledScore {
                label: format!("k={}", e.k),
                s: sc.s,
                s_bar: sc.s_bar,
            }
        })
        .collect())
}

/// Scores at every variance threshold, ascending in `theta`.
pub fn score_variance_thresholds(
    model: &CovarianceModel,
    thresholds: &VarianceThresholds,
    deployed: &MeasurementConfig,
    centered: &CenteredInput,
) -> Result<Vec<LabeledScore>> {
    ensure_same_config(&thresholds.config, deployed)?;
    let w = energies(model, centered)?;
    Ok(thresholds
        .entries
        .iter()
        .map(|e| {
            let f = effect_from_threshold(model, deployed, e.beta);
            let sc = score_from_energies(&f.occupations, &w, centered);
            LabeledScore {
                label: format!("theta={}", e.theta),
                s: sc.s,
                s_bar: sc.s_bar,
            }
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeScore {
    pub k: usize,
    pub s: f64,
    pub s_bar: f64,
}

/// Per-bin soft spectral energies of one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreProfile {
    pub per_mode_energy: Vec<f64>,
    pub per_mode_probability: Vec<f64>,
    pub nu: f64,
    /// `K = 1..d`; the last entry is the whole space.
    pub cumulative: Vec<CumulativeScore>,
}

impl ScoreProfile {
    /// `nu - s_K`.
    pub fn residual(&self, k: usize) -> Option<f64> {
        self.cumulative.get(k.checked_sub(1)?).map(|c| self.nu - c.s)
    }

    /// `1 - s_bar_K`.
    pub fn normalized_residual(&self, k: usize) -> Option<f64> {
        self.cumulative.get(k.checked_sub(1)?).map(|c| 1.0 - c.s_bar)
    }
}

/// Resolves the centered energy into the adjacent quantile bins of a full
/// rank ladder.
pub fn spectral_profile(
    model: &CovarianceModel,
    thresholds: &RankThresholds,
    centered: &CenteredInput,
) -> Result<ScoreProfile> {
    if centered.degenerate {
        return Err(Error::DegenerateInput);
    }
    let components = thresholds.soft_resolution(model)?;
    let w = energies(model, centered)?;
    let nu = centered.nu;
    let e: Vec<f64> = components
        .iter()
        .map(|d| d.occupations.iter().zip(&w).map(|(a, b)| a * b).sum())
        .collect();
    let pi: Vec<f64> = e.iter().map(|x| x / nu).collect();
    let mut cumulative = Vec::with_capacity(e.len());
    let (mut s, mut s_bar) = (0.0, 0.0);
    for (k, (ek, pk)) in e.iter().zip(&pi).enumerate() {
        s += ek;
        s_bar += pk;
        cumulative.push(CumulativeScore { k: k + 1, s, s_bar });
    }
    Ok(ScoreProfile {
        per_mode_energy: e,
        per_mode_probability: pi,
        nu,
        cumulative,
    })
}

fn centered_probe(
    model: &CovarianceModel,
    config: &MeasurementConfig,
    centered: &CenteredInput,
) -> Result<(Vec<f64>, Vec<f64>)> {
    config.validate()?;
    let w = energies(model, centered)?;
    let weights = if centered.degenerate {
        vec![1.0 / model.dim() as f64; model.dim()]
    } else {
        w.iter().map(|x| x / centered.nu).collect()
    };
    Ok((config.centers(model.eigenvalues()), weights))
}

/// Frequency of `q > beta` when the normalized centered input is measured
/// directly; its expectation is the normalized score.
pub fn tail_frequency(
    model: &CovarianceModel,
    config: &MeasurementConfig,
    centered: &CenteredInput,
    beta: f64,
    shots: usize,
    seed: u64,
) -> Result<BernoulliEstimate> {
    if centered.degenerate {
        return Err(Error::DegenerateInput);
    }
    if shots == 0 {
        return Err(Error::Invalid("at least one shot is required".into()));
    }
    let (centers, weights) = centered_probe(model, config, centered)?;
    Ok(BernoulliEstimate {
        successes: count_above(&centers, &weights, config.t1, beta, shots, seed, 0),
        trials: shots as u64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointEstimate {
    /// Shots where centering succeeded and `q > beta`; mean `s / 4`.
    pub p_joint: BernoulliEstimate,
    /// Shots where centering succeeded; mean `nu / 4`.
    pub p_success: BernoulliEstimate,
    /// `p_joint / p_success`, undefined without successes.
    pub s_bar: Option<f64>,
}

/// Simulates the unpostselected pipeline: centered-state preparation that
/// succeeds with probability `nu / 4`, followed by the thermal measurement.
pub fn joint_score_estimate(
    model: &CovarianceModel,
    config: &MeasurementConfig,
    beta: f64,
    raw: &nalgebra::DVector<crate::C64>,
    shots: usize,
    seed: u64,
) -> Result<JointEstimate> {
    if shots == 0 {
        return Err(Error::Invalid("at least one shot is required".into()));
    }
    let centered = model.center_input(raw)?;
    let (centers, weights) = centered_probe(model, config, &centered)?;
    let herald = if centered.degenerate {
        0.0
    } else {
        centered.success_probability
    };
    let (successes, joint) = heralded_tail_counts(herald, &centers, &weights, config.t1, beta, shots, seed, 0);
    let trials = shots as u64;
    Ok(JointEstimate {
        p_joint: BernoulliEstimate {
            successes: joint,
            trials,
        },
        p_success: BernoulliEstimate { successes, trials },
        s_bar: (successes > 0).then(|| joint as f64 / successes as f64),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub pi: Vec<f64>,
    pub e: Vec<f64>,
}

/// One record of a score report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub nu: f64,
    #[serde(default)]
    pub degenerate: bool,
    pub scores: Vec<LabeledScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSummary>,
}
