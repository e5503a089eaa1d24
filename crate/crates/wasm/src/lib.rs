//! Browser bindings: a diagonal model given by its spectrum, measured under
//! a chosen configuration. Each export returns a flat `Float64Array`.

use fermipca::calibration::calibrate_exact_ranks;
use fermipca::measurement::{effect_from_threshold, position_density, sample_positions};
use fermipca::{CovarianceModel, Error, MeasurementConfig, ProbeState, Result};
use wasm_bindgen::prelude::wasm_bindgen;
use wasm_bindgen::JsValue;

const EXACT_TOL: f64 = 1e-13;
const MARGIN: f64 = 12.0;
const MAX_SAMPLES: usize = 2_000_000;

fn setup(spectrum: &[f64], t1: f64, t2: f64, delta: f64) -> Result<(CovarianceModel, MeasurementConfig)> {
    let mut sorted = spectrum.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    Ok((
        CovarianceModel::from_spectrum(&sorted)?,
        MeasurementConfig::new(t1, t2, delta)?,
    ))
}

fn probe(model: &CovarianceModel, name: &str) -> Result<ProbeState> {
    match name {
        "mixed" => Ok(ProbeState::maximally_mixed(model)),
        "covariance" => ProbeState::covariance_probe(model),
        other => Err(Error::Invalid(format!("unknown probe {other:?}"))),
    }
}

fn range(model: &CovarianceModel, config: &MeasurementConfig) -> (f64, f64) {
    let centers = config.centers(model.eigenvalues());
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - MARGIN * config.t1;
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + MARGIN * config.t1;
    (lo, hi)
}

/// `[q_0, f_0, q_1, f_1, ...]` on an even grid.
pub fn density_points(
    spectrum: &[f64],
    t1: f64,
    t2: f64,
    delta: f64,
    probe_name: &str,
    points: usize,
) -> Result<Vec<f64>> {
    let (model, config) = setup(spectrum, t1, t2, delta)?;
    let p = probe(&model, probe_name)?;
    if points < 2 {
        return Err(Error::Invalid("need at least 2 points".into()));
    }
    let (lo, hi) = range(&model, &config);
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .flat_map(|i| {
            let q = lo + step * i as f64;
            [q, position_density(&model, &config, &p, q)]
        })
        .collect())
}

/// Population rank thresholds for `k = 1..d-1` followed by the `d x (d-1)`
/// occupations, row `j` holding mode `j` across the ladder.
pub fn ladder(spectrum: &[f64], t1: f64, t2: f64, delta: f64) -> Result<Vec<f64>> {
    let (model, config) = setup(spectrum, t1, t2, delta)?;
    let ks: Vec<usize> = (1..model.dim()).collect();
    let t = calibrate_exact_ranks(&model, config, &ks, EXACT_TOL)?;
    let mut out: Vec<f64> = t.entries.iter().map(|e| e.beta).collect();
    let effects: Vec<_> = t
        .entries
        .iter()
        .map(|e| effect_from_threshold(&model, &config, e.beta))
        .collect();
    for j in 0..model.dim() {
        out.extend(effects.iter().map(|f| f.occupations[j]));
    }
    Ok(out)
}

/// `[lo, hi, c_0, ..., c_{bins-1}]`: a histogram of simulated outcomes.
#[allow(clippy::too_many_arguments)]
pub fn histogram(
    spectrum: &[f64],
    t1: f64,
    t2: f64,
    delta: f64,
    probe_name: &str,
    count: usize,
    seed: u64,
    bins: usize,
) -> Result<Vec<f64>> {
    let (model, config) = setup(spectrum, t1, t2, delta)?;
    let p = probe(&model, probe_name)?;
    if bins == 0 || count > MAX_SAMPLES {
        return Err(Error::Invalid(format!(
            "need 1+ bins and at most {MAX_SAMPLES} samples"
        )));
    }
    let set = sample_positions(&model, &config, &p, count, seed)?;
    let (lo, hi) = range(&model, &config);
    let width = (hi - lo) / bins as f64;
    let mut out = vec![0.0; bins + 2];
    out[0] = lo;
    out[1] = hi;
    for q in set.samples {
        if q >= lo && q < hi {
            let b = (((q - lo) / width) as usize).min(bins - 1);
            out[b + 2] += 1.0;
        }
    }
    Ok(out)
}

fn js(r: Result<Vec<f64>>) -> std::result::Result<Vec<f64>, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = densityCurve)]
pub fn density_curve(
    spectrum: &[f64],
    t1: f64,
    t2: f64,
    delta: f64,
    probe: &str,
    points: usize,
) -> std::result::Result<Vec<f64>, JsValue> {
    js(density_points(spectrum, t1, t2, delta, probe, points))
}

#[wasm_bindgen(js_name = rankLadder)]
pub fn rank_ladder(spectrum: &[f64], t1: f64, t2: f64, delta: f64) -> std::result::Result<Vec<f64>, JsValue> {
    js(ladder(spectrum, t1, t2, delta))
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = sampleHistogram)]
pub fn sample_histogram(
    spectrum: &[f64],
    t1: f64,
    t2: f64,
    delta: f64,
    probe: &str,
    count: usize,
    seed: u32,
    bins: usize,
) -> std::result::Result<Vec<f64>, JsValue> {
    js(histogram(spectrum, t1, t2, delta, probe, count, u64::from(seed), bins))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn density_integrates_to_one() {
        let pts = density_points(&[2.0, 1.0, 0.5], 0.05, 1.0, 0.0, "covariance", 2000).unwrap();
        let step = pts[2] - pts[0];
        let mass: f64 = pts.chunks(2).map(|p| p[1]).sum::<f64>() * step;
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }

    #[test]
    fn ladder_matches_two_mode_midpoint() {
        let out = ladder(&[2.0, 1.0], 0.05, 1.0, 0.0).unwrap();
        assert_eq!(out.len(), 1 + 2);
        assert!((out[0] - 1.5).abs() < 1e-10);
        assert!((out[1] + out[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_counts_every_sample_in_range() {
        let out = histogram(&[1.0, 0.3], 0.05, 1.0, 0.0, "mixed", 10_000, 7, 40).unwrap();
        let total: f64 = out[2..].iter().sum();
        assert!(total > 9_990.0 && total <= 10_000.0);
        assert_eq!(
            out,
            histogram(&[1.0, 0.3], 0.05, 1.0, 0.0, "mixed", 10_000, 7, 40).unwrap()
        );
    }

    #[test]
    fn unknown_probe_is_rejected() {
        assert!(density_points(&[1.0, 0.5], 0.05, 1.0, 0.0, "pure", 10).is_err());
    }
}
