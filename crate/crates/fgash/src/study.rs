//! Parameter sweeps: Monte Carlo convergence, the weak-coupling
//! transition-rate law, and trajectories needed to reach an error threshold.

use std::collections::BTreeMap;

use fgash_core::reconstruction::{l2_error, WaveFunctionGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::{SimulationConfig, StudyConfig};
use crate::ensemble::{DriverSnapshot, EnsembleDriver};
use crate::error::{AppError, AppResult};
use crate::pipeline::{ReferenceSummary, RunSummary, Setup};
use fgash_core::potentials::BuiltinModel;

/// Points needed for a fit.
pub const MIN_FIT_POINTS: usize = 4;

/// Bootstrap resamples for the convergence-slope interval.
pub const BOOTSTRAP_RESAMPLES: usize = 2000;

const BOOTSTRAP_SEED: u64 = 0x5EED_B007;

/// Default trajectory cap of the threshold searches.
pub const DEFAULT_MAX_TRAJECTORIES: u64 = 1_000_000;

/// Least-squares line `y = intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    /// Half-width of the 95% interval for the slope.
    pub half_width: f64,
    pub points: usize,
}

/// Ordinary least squares with a Student-t interval for the slope.
pub fn linear_fit(x: &[f64], y: &[f64]) -> AppResult<LinearFit> {
    let n = x.len();
    if n != y.len() {
        return Err(AppError::invalid("fit needs as many x as y values"));
    }
    if n < MIN_FIT_POINTS {
        return Err(AppError::invalid(format!(
            "a fit needs at least {MIN_FIT_POINTS} points, got {n}"
        )));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) || !sxx.is_finite() {
        return Err(AppError::invalid("fit needs at least two distinct finite x values"));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let dof = (n - 2) as f64;
    let slope_stderr = (ss / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).expect("dof > 0").inverse_cdf(0.975);
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
        residual: (ss / n as f64).sqrt(),
        half_width: t * slope_stderr,
        points: n,
    })
}

/// One sweep value with its metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyPoint {
    pub value: f64,
    /// The fitted quantity; absent when the trajectory cap was reached.
    pub metric: Option<f64>,
    /// Standard error of `metric` over replicates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread: Option<f64>,
    pub exceeded: bool,
    /// Per-replicate errors at the reported trajectory count.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub replicate_errors: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSummary>,
}

impl StudyPoint {
    fn new(value: f64, metric: Option<f64>) -> Self {
        Self {
            value,
            metric,
            spread: None,
            exceeded: metric.is_none(),
            replicate_errors: Vec::new(),
            run: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub study: String,
    pub variable: String,
    pub metric: String,
    /// `"log"` or `"linear"` axes of the fit.
    pub fit_axes: (String, String),
    pub points: Vec<StudyPoint>,
    pub fit: LinearFit,
    /// Interval half-width used for acceptance; bootstrap when replicated.
    pub slope_half_width: f64,
    /// Secondary fits, keyed by metric name.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub other_fits: BTreeMap<String, LinearFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub monotone: Option<bool>,
    /// Largest over smallest metric among points below the cap.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spread_ratio: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

fn study_settings(config: &SimulationConfig) -> StudyConfig {
    config.study.clone().unwrap_or_default()
}

fn replicate_seed(master: u64, replicate: usize) -> u64 {
    master.wrapping_add(replicate as u64)
}

fn relative_error(estimate: &WaveFunctionGrid<1>, reference: &WaveFunctionGrid<1>) -> AppResult<f64> {
    Ok(l2_error(estimate, reference, true)?)
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn log_fit(points: &[(f64, f64)]) -> AppResult<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = points.iter().map(|&(a, b)| (a.ln(), b.ln())).unzip();
    linear_fit(&x, &y)
}

/// Relative error against trajectory count, averaged over seed replicates;
/// fits `log error` against `log N` with a bootstrap interval over seeds.
pub fn study_convergence(config: &SimulationConfig) -> AppResult<StudyResult> {
    let settings = study_settings(config);
    let mut counts = settings
        .trajectory_counts
        .ok_or_else(|| AppError::invalid("study.trajectory_counts is required"))?;
    counts.sort_unstable();
    counts.dedup();
    if counts.len() < MIN_FIT_POINTS {
        return Err(AppError::invalid(format!(
            "study.trajectory_counts needs at least {MIN_FIT_POINTS} distinct values, got {}",
            counts.len()
        )));
    }
    let replicates = settings.replicates.unwrap_or(20);
    if replicates < 2 {
        return Err(AppError::invalid("study.replicates must be at least 2"));
    }
    let setup = Setup::new(config)?;
    let reference = setup.reference()?;
    // errors[r][k]: replicate r at counts[k]
    let mut errors = Vec::with_capacity(replicates);
    for r in 0..replicates {
        let mut driver = setup.driver(replicate_seed(config.run.master_seed, r))?;
        let mut row = Vec::with_capacity(counts.len());
        for &n in &counts {
            driver.extend_to(n)?;
            row.push(relative_error(&driver.estimate()?.mean, &reference)?);
        }
        errors.push(row);
    }
    let column = |rows: &[&Vec<f64>], k: usize| rows.iter().map(|row| row[k]).collect::<Vec<_>>();
    let all: Vec<&Vec<f64>> = errors.iter().collect();
    let mut points = Vec::new();
    let mut means = Vec::new();
    for (k, &n) in counts.iter().enumerate() {
        let col = column(&all, k);
        let (m, se) = mean_and_stderr(&col);
        means.push((n as f64, m));
        let mut p = StudyPoint::new(n as f64, Some(m));
        p.spread = Some(se);
        p.replicate_errors = col;
        points.push(p);
    }
    let fit = log_fit(&means)?;

    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let sample: Vec<&Vec<f64>> = (0..replicates)
            .map(|_| &errors[rng.random_range(0..replicates)])
            .collect();
        let pts: Vec<(f64, f64)> = counts
            .iter()
            .enumerate()
            .map(|(k, &n)| (n as f64, mean_and_stderr(&column(&sample, k)).0))
            .collect();
        slopes.push(log_fit(&pts)?.slope);
    }
    slopes.sort_by(f64::total_cmp);
    let quantile = |q: f64| slopes[((q * (slopes.len() - 1) as f64).round()) as usize];
    let half_width = 0.5 * (quantile(0.975) - quantile(0.025));

    Ok(StudyResult {
        study: "conv".into(),
        variable: "trajectories".into(),
        metric: "relative_l2_error".into(),
        fit_axes: ("log".into(), "log".into()),
        points,
        fit,
        slope_half_width: half_width,
        other_fits: BTreeMap::new(),
        monotone: None,
        spread_ratio: None,
        threshold: None,
    })
}

/// Transition rate `R` against δ. The fitted metric is the estimate of
/// `‖u1‖²/‖u0‖²` with the Monte Carlo variance removed; the raw estimate
/// and the reference rate are fitted as well.
pub fn study_marcus(config: &SimulationConfig) -> AppResult<StudyResult> {
    let settings = study_settings(config);
    let mut deltas = settings
        .deltas
        .ok_or_else(|| AppError::invalid("study.deltas is required"))?;
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    if deltas.len() < MIN_FIT_POINTS {
        return Err(AppError::invalid(format!(
            "study.deltas needs at least {MIN_FIT_POINTS} distinct values, got {}",
            deltas.len()
        )));
    }
    if deltas[0] <= 0.0 {
        return Err(AppError::invalid("study.deltas must be positive"));
    }
    let mut points = Vec::new();
    let (mut corrected, mut raw, mut exact) = (Vec::new(), Vec::new(), Vec::new());
    for &delta in &deltas {
        let mut c = config.clone();
        c.run.delta = delta;
        let setup = Setup::new(&c)?;
        let mut driver = setup.driver(c.run.master_seed)?;
        driver.extend_to(c.run.trajectories)?;
        let estimate = driver.estimate()?;
        let reference = if c.reference.enabled {
            Some(setup.reference()?)
        } else {
            None
        };
        let summary = RunSummary::new(&setup, &estimate, reference.as_ref())?;
        corrected.push((delta, summary.transition_rate_corrected));
        raw.push((delta, summary.transition_rate));
        if let Some(ReferenceSummary { transition_rate, .. }) = &summary.reference {
            exact.push((delta, *transition_rate));
        }
        let mut p = StudyPoint::new(delta, Some(summary.transition_rate_corrected));
        p.run = Some(summary);
        points.push(p);
    }
    if corrected.iter().any(|&(_, r)| !(r > 0.0)) {
        return Err(AppError::invalid(
            "a corrected transition rate is not positive; increase run.trajectories",
        ));
    }
    let fit = log_fit(&corrected)?;
    let mut other_fits = BTreeMap::new();
    other_fits.insert("transition_rate_raw".to_owned(), log_fit(&raw)?);
    if exact.len() == deltas.len() {
        other_fits.insert("reference_transition_rate".to_owned(), log_fit(&exact)?);
    }
    Ok(StudyResult {
        study: "marcus".into(),
        variable: "delta".into(),
        metric: "transition_rate_corrected".into(),
        fit_axes: ("log".into(), "log".into()),
        points,
        slope_half_width: fit.half_width,
        fit,
        other_fits,
        monotone: None,
        spread_ratio: None,
        threshold: None,
    })
}

/// Outcome of a trajectory-count search.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdSearch {
    /// Smallest probed count whose median error met the threshold.
    pub trajectories: Option<u64>,
    pub replicate_errors: Vec<f64>,
    /// `(N, median error)` of every probe in order.
    pub probes: Vec<(u64, f64)>,
}

/// Doubling from `start` until the median error over the replicates meets
/// `threshold`, then bisection down to `1/16` of the bracket. Replicates
/// advance in lockstep; bisection rewinds them to the lower bracket.
pub fn trajectories_to_threshold(
    setup: &Setup,
    reference: &WaveFunctionGrid<1>,
    replicates: usize,
    threshold: f64,
    start: u64,
    cap: u64,
) -> AppResult<ThresholdSearch> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(AppError::invalid(format!(
            "study.threshold must lie in (0, 1), got {threshold}"
        )));
    }
    if replicates == 0 || start == 0 || cap < start {
        return Err(AppError::invalid("need replicates ≥ 1 and 1 ≤ start ≤ cap"));
    }
    let master = setup.config.run.master_seed;
    let mut drivers = (0..replicates)
        .map(|r| setup.driver(replicate_seed(master, r)))
        .collect::<AppResult<Vec<EnsembleDriver<'_, BuiltinModel>>>>()?;
    let mut probes = Vec::new();
    let mut probe = |drivers: &mut [EnsembleDriver<'_, BuiltinModel>], n: u64| -> AppResult<Vec<f64>> {
        let mut errs = Vec::with_capacity(drivers.len());
        for d in drivers.iter_mut() {
            d.extend_to(n)?;
            errs.push(relative_error(&d.estimate()?.mean, reference)?);
        }
        probes.push((n, median(&errs)));
        Ok(errs)
    };

    let mut lower: Option<Vec<DriverSnapshot>> = None;
    let mut n = start;
    let (mut hi, mut hi_errors) = loop {
        let errs = probe(&mut drivers, n)?;
        if median(&errs) <= threshold {
            break (n, errs);
        }
        if n >= cap {
            return Ok(ThresholdSearch {
                trajectories: None,
                replicate_errors: errs,
                probes,
            });
        }
        lower = Some(drivers.iter().map(EnsembleDriver::snapshot).collect());
        n = (2 * n).min(cap);
    };
    if let Some(mut snaps) = lower {
        let mut lo = snaps[0].trajectories();
        let resolution = (hi / 16).max(1);
        while hi - lo > resolution {
            let mid = lo + (hi - lo) / 2;
            for (d, s) in drivers.iter_mut().zip(&snaps) {
                d.restore(s);
            }
            let errs = probe(&mut drivers, mid)?;
            if median(&errs) <= threshold {
                hi = mid;
                hi_errors = errs;
            } else {
                lo = mid;
                snaps = drivers.iter().map(EnsembleDriver::snapshot).collect();
            }
        }
    }
    Ok(ThresholdSearch {
        trajectories: Some(hi),
        replicate_errors: hi_errors,
        probes,
    })
}

fn threshold_settings(settings: &StudyConfig) -> AppResult<(usize, f64, u64, u64)> {
    let threshold = settings
        .threshold
        .ok_or_else(|| AppError::invalid("study.threshold is required"))?;
    Ok((
        settings.replicates.unwrap_or(3).max(1),
        threshold,
        settings.start_trajectories.unwrap_or(64),
        settings.max_trajectories.unwrap_or(DEFAULT_MAX_TRAJECTORIES),
    ))
}

fn search_point(config: &SimulationConfig, value: f64, settings: &StudyConfig) -> AppResult<StudyPoint> {
    let (replicates, threshold, start, cap) = threshold_settings(settings)?;
    let setup = Setup::new(config)?;
    let reference = setup.reference()?;
    let search = trajectories_to_threshold(&setup, &reference, replicates, threshold, start, cap)?;
    let mut p = StudyPoint::new(value, search.trajectories.map(|n| n as f64));
    p.replicate_errors = search.replicate_errors;
    Ok(p)
}

/// Trajectories needed to reach the error threshold as δ grows, with a
/// fit of `log N` against δ and a monotonicity check.
pub fn study_trajectory_scaling(config: &SimulationConfig) -> AppResult<StudyResult> {
    let settings = study_settings(config);
    let mut deltas = settings
        .deltas
        .clone()
        .ok_or_else(|| AppError::invalid("study.deltas is required"))?;
    deltas.sort_by(f64::total_cmp);
    deltas.dedup();
    let (_, threshold, _, _) = threshold_settings(&settings)?;
    let mut points = Vec::new();
    for &delta in &deltas {
        let mut c = config.clone();
        c.run.delta = delta;
        points.push(search_point(&c, delta, &settings)?);
    }
    let reached: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| p.metric.map(|m| (p.value, m.ln())))
        .collect();
    let (x, y): (Vec<f64>, Vec<f64>) = reached.into_iter().unzip();
    let fit = linear_fit(&x, &y)?;
    let counts: Vec<f64> = points.iter().map(|p| p.metric.unwrap_or(f64::INFINITY)).collect();
    let monotone = counts.windows(2).all(|w| w[0] <= w[1]);
    Ok(StudyResult {
        study: "ntraj".into(),
        variable: "delta".into(),
        metric: "trajectories_to_threshold".into(),
        fit_axes: ("linear".into(), "log".into()),
        points,
        slope_half_width: fit.half_width,
        fit,
        other_fits: BTreeMap::new(),
        monotone: Some(monotone),
        spread_ratio: None,
        threshold: Some(threshold),
    })
}

/// `base` rescaled to the avoided-crossing family at `epsilon`: `δ = √ε`,
/// `α = 1/(2ε)`, centre `-2√ε`, `T = 3√ε`, domain `±24√ε` with `Δx ≤ ε/4`.
pub fn avoided_config(base: &SimulationConfig, epsilon: f64) -> SimulationConfig {
    let family = crate::experiments::avoided_crossing(epsilon);
    let mut c = base.clone();
    c.run.epsilon = epsilon;
    c.run.delta = family.run.delta;
    c.run.final_time = family.run.final_time;
    c.run.dt = None;
    c.reference.dt = None;
    c.packet = family.packet;
    c.grid = family.grid;
    c
}

/// Trajectories needed to reach the threshold across the avoided-crossing
/// family; reports the spread of `N` over the ε sweep.
pub fn study_avoided(config: &SimulationConfig) -> AppResult<StudyResult> {
    let settings = study_settings(config);
    let mut epsilons = settings
        .epsilons
        .clone()
        .ok_or_else(|| AppError::invalid("study.epsilons is required"))?;
    epsilons.sort_by(|a, b| b.total_cmp(a));
    epsilons.dedup();
    let (_, threshold, _, _) = threshold_settings(&settings)?;
    let mut points = Vec::new();
    for &eps in &epsilons {
        points.push(search_point(&avoided_config(config, eps), eps, &settings)?);
    }
    let reached: Vec<(f64, f64)> = points.iter().filter_map(|p| p.metric.map(|m| (p.value, m))).collect();
    let fit = log_fit(&reached)?;
    let spread_ratio = if reached.len() == points.len() {
        let max = reached.iter().map(|p| p.1).fold(f64::MIN, f64::max);
        let min = reached.iter().map(|p| p.1).fold(f64::MAX, f64::min);
        Some(max / min)
    } else {
        None
    };
    Ok(StudyResult {
        study: "avoided".into(),
        variable: "epsilon".into(),
        metric: "trajectories_to_threshold".into(),
        fit_axes: ("log".into(), "log".into()),
        points,
        slope_half_width: fit.half_width,
        fit,
        other_fits: BTreeMap::new(),
        monotone: None,
        spread_ratio,
        threshold: Some(threshold),
    })
}
