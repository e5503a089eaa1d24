//! Subcommand implementations. Each reads its inputs, records them in a run
//! manifest, and writes outputs that embed the manifest hash.

use fermipca::calibration::{
    bisection_steps, calibrate_exact_ranks, calibrate_exact_variance, calibrate_ranks_from, calibrate_variance_from,
    fixed_variance_bisection, plan_samples, Evaluation, SampleBudget, SampleTask, ThresholdSource, VarianceTarget,
};
use fermipca::inference::{
    score_rank_thresholds, score_variance_thresholds, spectral_profile, tail_frequency, LabeledScore, ProfileSummary,
    ScoreProfile, ScoreRecord,
};
use fermipca::io::{self, ThresholdFile, ThresholdKind};
use fermipca::measurement::{position_density, sample_positions, trotter_round_error};
use fermipca::rng::derive_seed;
use fermipca::soft_filter::{normalized_retained_variance, retained_variance};
use fermipca::{CovarianceModel, Error, MeasurementConfig, ProbeState, Result};
use serde::Serialize;
use serde_json::json;

use crate::manifest::{ConfigRecord, RunManifest};
use crate::{
    BuildArgs, CalibrateArgs, CalibrationMode, DensityArgs, DeployArgs, PlanArgs, PlanTask, ProbeChoice, ProfileArgs,
    SamplingArgs, ScoreArgs, TrotterArgs,
};

/// Tolerance for population thresholds.
const EXACT_TOL: f64 = 1e-13;
/// Bisection steps when none are given and no accuracy target fixes them.
const DEFAULT_STEPS: usize = 60;
/// Grid half-margin beyond the outermost mode center, in units of `t1`.
const DENSITY_MARGIN: f64 = 20.0;

fn config_record(config: &MeasurementConfig) -> ConfigRecord {
    ConfigRecord {
        t1: Some(config.t1),
        t2: Some(config.t2),
        delta: Some(config.delta),
        t_prime: None,
    }
}

fn embed_json(value: impl Serialize, manifest: &RunManifest) -> Result<serde_json::Value> {
    let mut value = serde_json::to_value(value)?;
    match &mut value {
        serde_json::Value::Object(map) => {
            map.insert("manifest".into(), manifest.embed());
        }
        _ => return Err(Error::Invalid("output is not a JSON object".into())),
    }
    Ok(value)
}

pub fn build(args: &BuildArgs) -> Result<()> {
    let data = io::read_dataset(&args.input)?;
    if data.len() == 1 {
        log::warn!("dataset has a single vector; the centered covariance is zero");
    }
    let model = if args.uncentered {
        CovarianceModel::build_uncentered(&data)?
    } else {
        CovarianceModel::build_centered(&data)?
    };
    let mut manifest = RunManifest::new("build");
    manifest.input(&args.input)?;
    manifest.output(&args.out);
    manifest.options = json!({ "centered": !args.uncentered, "vectors": data.len(), "dim": data.dim() });
    io::write_model(&args.out, &model, Some(manifest.embed()))?;
    log::info!(
        "built {}-dimensional model from {} vectors, total variance {}",
        model.dim(),
        data.len(),
        model.total_variance()
    );
    Ok(())
}

fn lambda_max_interval(model: &CovarianceModel) -> Result<f64> {
    let top = model.eigenvalues()[0];
    if top <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok(2.0 / top)
}

pub fn plan(args: &PlanArgs) -> Result<()> {
    let mut manifest = RunManifest::new("plan");
    let model = match &args.model {
        Some(path) => {
            manifest.input(path)?;
            Some(io::read_model(path)?)
        }
        None => None,
    };
    let d = args
        .d
        .or(model.as_ref().map(|m| m.dim()))
        .ok_or_else(|| Error::Invalid("--d or --model is required".into()))?;
    let need =
        |v: Option<f64>, name: &str| v.ok_or_else(|| Error::Invalid(format!("--{name} is required for this task")));
    let task = match args.task {
        PlanTask::AllRank => SampleTask::AllRank,
        PlanTask::FixedRank => SampleTask::FixedRank {
            k: args
                .k
                .ok_or_else(|| Error::Invalid("--k is required for fixed-rank".into()))?,
        },
        PlanTask::Fractional => SampleTask::Fractional,
        PlanTask::VarianceProfile => SampleTask::VarianceProfile,
        PlanTask::FixedVariance => {
            let interval = match (args.interval, &model) {
                (Some(w), _) => w,
                (None, Some(m)) => lambda_max_interval(m)?,
                (None, None) => {
                    return Err(Error::Invalid(
                        "--interval or --model is required for fixed-variance".into(),
                    ))
                }
            };
            SampleTask::FixedVariance {
                theta: need(args.theta, "theta")?,
                t_prime: need(args.t_prime, "t-prime")?,
                interval,
            }
        }
    };
    let budget = SampleBudget {
        eta: args.eta,
        delta_fail: args.delta_fail,
        d,
        task,
    };
    let samples = plan_samples(&budget)?;
    let mut report = json!({ "budget": budget, "samples": samples });
    if let SampleTask::FixedVariance { interval, .. } = task {
        let steps = bisection_steps(interval, args.eta);
        report["bisection_steps"] = json!(steps);
        report["total_samples"] = json!(samples.saturating_mul(steps));
    }
    if let Some(m) = &model {
        // the centered probe succeeds with probability V_C/4, so raw attempts scale by 4/V_C
        if m.total_variance() > 0.0 {
            report["raw_attempt_factor"] = json!(4.0 / m.total_variance());
        }
    }
    manifest.samples = Some(samples);
    manifest.options =
        json!({ "task": format!("{:?}", args.task), "eta": args.eta, "delta_fail": args.delta_fail, "d": d });
    if let Some(out) = &args.out {
        manifest.output(out);
    }
    let report = embed_json(report, &manifest)?;
    log::info!("planned S = {samples}");
    match &args.out {
        Some(out) => io::write_json(out, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn planned_samples(sampling: &SamplingArgs, d: usize, task: SampleTask) -> Result<usize> {
    if let Some(s) = sampling.samples {
        return Ok(s);
    }
    match (sampling.eta, sampling.delta_fail) {
        (Some(eta), Some(delta_fail)) => {
            let s = plan_samples(&SampleBudget {
                eta,
                delta_fail,
                d,
                task,
            })?;
            log::info!("planned S = {s} from eta = {eta}, delta = {delta_fail}");
            usize::try_from(s).map_err(|_| Error::Invalid(format!("planned sample count {s} is too large")))
        }
        _ => Err(Error::Invalid(
            "give --samples, --eta with --delta-fail, or --exact".into(),
        )),
    }
}

fn default_ks(model: &CovarianceModel, ks: &[usize]) -> Vec<usize> {
    if ks.is_empty() {
        (1..model.dim()).collect()
    } else {
        ks.to_vec()
    }
}

fn density_rows(
    model: &CovarianceModel,
    config: &MeasurementConfig,
    probe: &ProbeState,
    points: usize,
) -> Result<Vec<Vec<f64>>> {
    if points < 2 {
        return Err(Error::Invalid("density grid needs at least 2 points".into()));
    }
    let centers = config.centers(model.eigenvalues());
    let lo = centers.iter().copied().fold(f64::INFINITY, f64::min) - DENSITY_MARGIN * config.t1;
    let hi = centers.iter().copied().fold(f64::NEG_INFINITY, f64::max) + DENSITY_MARGIN * config.t1;
    let step = (hi - lo) / (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            let q = lo + step * i as f64;
            vec![q, position_density(model, config, probe, q)]
        })
        .collect())
}

pub fn calibrate(args: &CalibrateArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let mut manifest = RunManifest::new("calibrate");
    manifest.input(&args.model)?;
    manifest.output(&args.out);
    for path in [&args.density_csv, &args.samples_out].into_iter().flatten() {
        manifest.output(path);
    }
    if args.mode == CalibrationMode::FixedVariance {
        return calibrate_fixed_variance(args, &model, manifest);
    }

    let config = MeasurementConfig::new(args.t1, args.t2, args.delta)?;
    manifest.config = config_record(&config);
    let probe = match args.mode {
        CalibrationMode::Rank => ProbeState::maximally_mixed(&model),
        _ => ProbeState::covariance_probe(&model)?,
    };
    let ks = default_ks(&model, &args.ks);
    manifest.options = match args.mode {
        CalibrationMode::Rank => json!({ "mode": "rank", "exact": args.exact, "ks": ks }),
        _ => json!({ "mode": "variance", "exact": args.exact, "thetas": args.thetas }),
    };

    let mut file: ThresholdFile;
    if args.exact {
        file = match args.mode {
            CalibrationMode::Rank => (&calibrate_exact_ranks(&model, config, &ks, EXACT_TOL)?).into(),
            _ => (&calibrate_exact_variance(&model, config, &args.thetas, EXACT_TOL)?).into(),
        };
    } else {
        let task = match args.mode {
            CalibrationMode::Rank if ks.len() == 1 => SampleTask::FixedRank { k: ks[0] },
            CalibrationMode::Rank => SampleTask::AllRank,
            _ => SampleTask::VarianceProfile,
        };
        let count = planned_samples(&args.sampling, model.dim(), task)?;
        let tag = match args.mode {
            CalibrationMode::Rank => "calibrate/rank",
            _ => "calibrate/variance",
        };
        let stream_seed = derive_seed(args.sampling.seed, tag);
        manifest.seed = Some(args.sampling.seed);
        manifest.samples = Some(count as u64);
        let set = sample_positions(&model, &config, &probe, count, stream_seed)?;
        file = match args.mode {
            CalibrationMode::Rank => (&calibrate_ranks_from(&set, model.dim(), &ks)?).into(),
            _ => (&calibrate_variance_from(&set, &args.thetas)?).into(),
        };
        if let Some(path) = &args.samples_out {
            io::write_samples(path, &set, Some(manifest.embed()))?;
        }
    }
    for w in &file.warnings {
        log::warn!("{w}");
    }
    if let Some(path) = &args.density_csv {
        let rows = density_rows(&model, &config, &probe, 512)?;
        io::write_table_csv(path, &["q", "f_C"], &rows, Some(&manifest.csv_comment()))?;
    }
    file.manifest = Some(manifest.embed());
    io::write_json(&args.out, &file)?;
    log::info!("wrote {} thresholds to {}", file.entries.len(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FixedVarianceOutput {
    kind: &'static str,
    target: VarianceTarget,
    t_prime: f64,
    lambda: f64,
    occupations: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effective_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    effective_temperature: Option<f64>,
    retained_variance: f64,
    normalized_retained_variance: f64,
    bracket: (f64, f64),
    expansions: usize,
    steps: usize,
    source: ThresholdSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_step_samples: Option<usize>,
    trajectory: Vec<fermipca::calibration::BisectionStep>,
}

fn calibrate_fixed_variance(args: &CalibrateArgs, model: &CovarianceModel, mut manifest: RunManifest) -> Result<()> {
    let target = match (args.theta, args.gamma) {
        (Some(theta), None) => VarianceTarget::Normalized(theta),
        (None, Some(gamma)) => VarianceTarget::Unnormalized(gamma),
        _ => {
            return Err(Error::Invalid(
                "fixed-variance needs exactly one of --theta or --gamma".into(),
            ))
        }
    };
    if !(args.t2 > 0.0 && args.t2.is_finite()) {
        return Err(Error::Invalid(format!("t2 must be positive, got {}", args.t2)));
    }
    manifest.config = ConfigRecord {
        t1: Some(args.t_prime / args.t2),
        t2: Some(args.t2),
        delta: Some(0.0),
        t_prime: Some(args.t_prime),
    };
    let interval = lambda_max_interval(model)?;
    let (evaluation, steps, per_step, source) = if args.exact {
        let steps = args.steps.unwrap_or(DEFAULT_STEPS);
        (Evaluation::Exact, steps, None, ThresholdSource::Exact)
    } else {
        let theta_for_plan = match target {
            VarianceTarget::Normalized(t) => t,
            VarianceTarget::Unnormalized(g) => g / model.total_variance(),
        };
        let task = SampleTask::FixedVariance {
            theta: theta_for_plan,
            t_prime: args.t_prime,
            interval,
        };
        let per_step = planned_samples(&args.sampling, model.dim(), task)?;
        let steps = match (args.steps, args.sampling.eta) {
            (Some(s), _) => s,
            (None, Some(eta)) => bisection_steps(interval, eta) as usize,
            (None, None) => DEFAULT_STEPS,
        };
        let seed = derive_seed(args.sampling.seed, "calibrate/fixed-variance");
        manifest.seed = Some(args.sampling.seed);
        manifest.samples = Some(per_step as u64);
        (
            Evaluation::Sampled {
                per_step_samples: per_step,
                seed,
                t2: args.t2,
            },
            steps,
            Some(per_step),
            ThresholdSource::Empirical {
                samples: per_step,
                seed,
            },
        )
    };
    manifest.options = json!({ "mode": "fixed-variance", "exact": args.exact, "target": target, "steps": steps });
    let report = fixed_variance_bisection(model, args.t_prime, target, evaluation, steps)?;
    let output = FixedVarianceOutput {
        kind: "fixed_variance",
        target,
        t_prime: args.t_prime,
        lambda: report.lambda,
        retained_variance: retained_variance(model, &report.filter),
        normalized_retained_variance: normalized_retained_variance(model, &report.filter)?,
        occupations: report.filter.occupations.clone(),
        effective_mu: report.filter.effective_mu,
        effective_temperature: report.filter.effective_temperature,
        bracket: report.bracket,
        expansions: report.expansions,
        steps,
        source,
        per_step_samples: per_step,
        trajectory: report.trajectory,
    };
    io::write_json(&args.out, &embed_json(&output, &manifest)?)?;
    log::info!("fixed-variance multiplier lambda = {}", report.lambda);
    Ok(())
}

fn deployed_config(file: &ThresholdFile, deploy: &DeployArgs) -> Result<MeasurementConfig> {
    MeasurementConfig::new(
        deploy.t1.unwrap_or(file.config.t1),
        deploy.t2.unwrap_or(file.config.t2),
        deploy.delta.unwrap_or(file.config.delta),
    )
}

#[derive(Serialize)]
struct SampledScore {
    label: String,
    s: Option<f64>,
    s_bar: Option<f64>,
    standard_error: Option<f64>,
    successes: u64,
    shots: u64,
}

#[derive(Serialize)]
struct SampledRecord {
    nu: f64,
    degenerate: bool,
    scores: Vec<SampledScore>,
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let file: ThresholdFile = io::read_json(&args.thresholds)?;
    let inputs = io::read_inputs(&args.inputs)?;
    let config = deployed_config(&file, &args.deploy)?;
    let mut manifest = RunManifest::new("score");
    for p in [&args.model, &args.thresholds, &args.inputs] {
        manifest.input(p)?;
    }
    manifest.output(&args.out);
    manifest.config = config_record(&config);
    manifest.options = json!({ "shots": args.shots });
    if args.shots > 0 {
        manifest.seed = Some(args.seed);
        manifest.samples = Some(args.shots as u64);
    }

    let rank = match file.kind {
        ThresholdKind::Rank => Some(file.to_rank(model.dim())?),
        ThresholdKind::Variance => None,
    };
    let variance = match file.kind {
        ThresholdKind::Variance => Some(file.to_variance()?),
        ThresholdKind::Rank => None,
    };
    let labeled = |centered: &fermipca::CenteredInput| -> Result<Vec<LabeledScore>> {
        match (&rank, &variance) {
            (Some(r), _) => score_rank_thresholds(&model, r, &config, centered),
            (_, Some(v)) => score_variance_thresholds(&model, v, &config, centered),
            _ => unreachable!("threshold kind is rank or variance"),
        }
    };
    let betas: Vec<f64> = match (&rank, &variance) {
        (Some(r), _) => r.entries.iter().map(|e| e.beta).collect(),
        (_, Some(v)) => v.entries.iter().map(|e| e.beta).collect(),
        _ => unreachable!("threshold kind is rank or variance"),
    };

    let mut records = Vec::with_capacity(inputs.len());
    let mut degenerate_count = 0;
    for (i, raw) in inputs.iter().enumerate() {
        let centered = model.center_input(raw)?;
        degenerate_count += usize::from(centered.degenerate);
        let exact = labeled(&centered)?;
        let record = if args.shots == 0 {
            let profile = match &rank {
                Some(r) if r.is_full_ladder() && !centered.degenerate => {
                    let p = spectral_profile(&model, r, &centered)?;
                    Some(ProfileSummary {
                        pi: p.per_mode_probability,
                        e: p.per_mode_energy,
                    })
                }
                _ => None,
            };
            serde_json::to_value(ScoreRecord {
                nu: centered.nu,
                degenerate: centered.degenerate,
                scores: exact,
                profile,
            })?
        } else {
            let mut scores = Vec::with_capacity(exact.len());
            for (entry, &beta) in exact.iter().zip(&betas) {
                let (s, s_bar, se, successes) = if centered.degenerate {
                    (Some(0.0), None, None, 0)
                } else {
                    let seed = derive_seed(args.seed, &format!("score/{i}/{}", entry.label));
                    let est = tail_frequency(&model, &config, &centered, beta, args.shots, seed)?;
                    let v = est.value();
                    (
                        Some(v * centered.nu),
                        Some(v),
                        Some(est.standard_error()),
                        est.successes,
                    )
                };
                scores.push(SampledScore {
                    label: entry.label.clone(),
                    s,
                    s_bar,
                    standard_error: se,
                    successes,
                    shots: args.shots as u64,
                });
            }
            serde_json::to_value(SampledRecord {
                nu: centered.nu,
                degenerate: centered.degenerate,
                scores,
            })?
        };
        records.push(record);
    }
    if degenerate_count > 0 {
        log::warn!("{degenerate_count} input(s) coincide with the mean; their normalized scores are undefined");
    }
    let mode = if args.shots == 0 { "exact" } else { "monte_carlo" };
    let report = embed_json(
        json!({ "mode": mode, "shots": args.shots, "records": records }),
        &manifest,
    )?;
    io::write_json(&args.out, &report)?;
    log::info!("scored {} inputs against {} thresholds", inputs.len(), betas.len());
    Ok(())
}

#[derive(Serialize)]
struct ProfileRecord {
    nu: f64,
    degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    profile: Option<ScoreProfile>,
    /// `1 - s_bar_K` for `K = 1..d`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    normalized_residuals: Vec<f64>,
}

pub fn profile(args: &ProfileArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let file: ThresholdFile = io::read_json(&args.thresholds)?;
    let thresholds = file.to_rank(model.dim())?;
    let config = deployed_config(&file, &args.deploy)?;
    fermipca::inference::ensure_same_config(&thresholds.config, &config)?;
    let inputs = io::read_inputs(&args.inputs)?;
    let mut manifest = RunManifest::new("profile");
    for p in [&args.model, &args.thresholds, &args.inputs] {
        manifest.input(p)?;
    }
    manifest.output(&args.out);
    manifest.config = config_record(&config);
    manifest.options = json!({});

    let mut records = Vec::with_capacity(inputs.len());
    for raw in &inputs {
        let centered = model.center_input(raw)?;
        let record = if centered.degenerate {
            ProfileRecord {
                nu: centered.nu,
                degenerate: true,
                profile: None,
                normalized_residuals: Vec::new(),
            }
        } else {
            let p = spectral_profile(&model, &thresholds, &centered)?;
            let normalized_residuals = (1..=p.cumulative.len())
                .filter_map(|k| p.normalized_residual(k))
                .collect();
            ProfileRecord {
                nu: centered.nu,
                degenerate: false,
                profile: Some(p),
                normalized_residuals,
            }
        };
        records.push(record);
    }
    io::write_json(&args.out, &embed_json(json!({ "records": records }), &manifest)?)?;
    log::info!("profiled {} inputs", inputs.len());
    Ok(())
}

pub fn density(args: &DensityArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let config = MeasurementConfig::new(args.t1, args.t2, args.delta)?;
    let probe = match args.probe {
        ProbeChoice::Mixed => ProbeState::maximally_mixed(&model),
        ProbeChoice::Covariance => ProbeState::covariance_probe(&model)?,
    };
    let mut manifest = RunManifest::new("density");
    manifest.input(&args.model)?;
    manifest.output(&args.out);
    manifest.config = config_record(&config);
    manifest.options = json!({ "probe": probe.kind.name(), "points": args.points });
    let rows = density_rows(&model, &config, &probe, args.points)?;
    io::write_table_csv(&args.out, &["q", "f"], &rows, Some(&manifest.csv_comment()))?;
    Ok(())
}

/// Least-squares slope of `log err` against `log R` and the mean of `R err`
/// over the second half of the sweep.
fn trotter_fit(points: &[(usize, f64)]) -> (f64, f64) {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|&(r, e)| ((r as f64).ln(), e.ln()))
        .collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let tail = &points[points.len() / 2..];
    let constant = tail.iter().map(|&(r, e)| r as f64 * e).sum::<f64>() / tail.len() as f64;
    (sxy / sxx, constant)
}

pub fn trotter_check(args: &TrotterArgs) -> Result<()> {
    let model = io::read_model(&args.model)?;
    let mut rounds = args.rounds.clone();
    rounds.sort_unstable();
    rounds.dedup();
    if rounds.len() < 2 {
        return Err(Error::Invalid("give at least two distinct round counts".into()));
    }
    let mut manifest = RunManifest::new("trotter-check");
    manifest.input(&args.model)?;
    manifest.output(&args.out);
    manifest.config = ConfigRecord {
        t2: Some(args.t2),
        ..ConfigRecord::default()
    };
    manifest.options = json!({ "momentum": args.momentum, "rounds": rounds });
    let mut points = Vec::with_capacity(rounds.len());
    for &r in &rounds {
        points.push((r, trotter_round_error(&model, args.momentum, r, args.t2)?));
    }
    let rows: Vec<Vec<f64>> = points.iter().map(|&(r, e)| vec![r as f64, e]).collect();
    io::write_table_csv(&args.out, &["R", "error"], &rows, Some(&manifest.csv_comment()))?;
    let (slope, constant) = trotter_fit(&points);
    log::info!("log-log slope {slope:.4}, R * error -> {constant:.4e}");
    let summary = embed_json(json!({ "slope": slope, "constant": constant }), &manifest)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trotter_fit_recovers_inverse_law() {
        let points: Vec<(usize, f64)> = [8, 16, 32, 64].iter().map(|&r| (r, 0.3 / r as f64)).collect();
        let (slope, constant) = trotter_fit(&points);
        assert!((slope + 1.0).abs() < 1e-12);
        assert!((constant - 0.3).abs() < 1e-12);
    }

    #[test]
    fn density_grid_covers_all_modes() {
        let model = CovarianceModel::from_spectrum(&[2.0, 1.0]).unwrap();
        let config = MeasurementConfig::new(0.05, 1.0, 0.0).unwrap();
        let rows = density_rows(&model, &config, &ProbeState::maximally_mixed(&model), 512).unwrap();
        assert_eq!(rows.len(), 512);
        let step = rows[1][0] - rows[0][0];
        let mass: f64 = rows.iter().map(|r| r[1]).sum::<f64>() * step;
        assert!((mass - 1.0).abs() < 1e-3, "{mass}");
    }
}
