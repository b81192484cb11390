//! Monte Carlo harness for the finite-size behaviour of the estimators.
//!
//! Each experiment sweeps the snapshot count `N` with `M = round(c·N)`.
//! The source matrix is drawn once per `N` from `derive_seed(base, [N])`
//! and the noise of trial `t` from `derive_seed(base, [N, t])`, so a report
//! is a pure function of the configuration whatever the thread count.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::estimator::{
    classical_eta, extract_doas_intervals_with, improved_eta, DoaObjective, improved_weights, pseudo_spectrum, Grid,
    WeightMethod,
};
use crate::model::{build_scenario, sample_observation, true_projector, Scenario, ScenarioConfig};
use crate::rmt::{
    check_separation, choose_contour, find_support, noiseless_contour, ContourSpec,
    DeterministicInput,
};
use crate::seed::derive_seed;
use crate::spectrum::decompose;
use crate::{Error, EstimatorError};

/// Noise level of a scenario template.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Noise {
    Sigma2(f64),
    /// `σ² = λ_min(BB*) / (f·√c)`: the weakest source sits `f` times above
    /// the detection threshold.
    ThresholdFactor(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTemplate {
    pub angles: Vec<f64>,
    pub powers: Vec<f64>,
    pub c: f64,
    pub noise: Noise,
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
}

fn default_norm_bound() -> f64 {
    1e3
}

fn default_grid_cap() -> usize {
    20_000
}

fn default_objective() -> DoaObjective {
    DoaObjective::Signed
}

fn default_method() -> WeightMethod {
    WeightMethod::Residue
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioTemplate,
    pub n_list: Vec<usize>,
    pub trials: usize,
    pub base_seed: u64,
    /// Upper bound on the default `N²` grid.
    #[serde(default = "default_grid_cap")]
    pub grid_cap: usize,
    /// Fixed grid size replacing the `N²` policy.
    #[serde(default)]
    pub grid_size: Option<usize>,
    #[serde(default = "default_method")]
    pub method: WeightMethod,
    /// Thresholds `t₁⁻, t₁⁺, t₂⁻, t₂⁺` used instead of the contour derived
    /// from the deterministic support.
    #[serde(default)]
    pub contour: Option<[f64; 4]>,
    /// Minimization rule of the DoA experiment; the other rule is reported
    /// alongside under a `_modulus` or `_signed` suffix.
    #[serde(default = "default_objective")]
    pub doa_objective: DoaObjective,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |msg: String| Err(Error::Experiment(msg));
        if self.n_list.is_empty() {
            return bad("n_list is empty".into());
        }
        if self.n_list.windows(2).any(|p| p[0] >= p[1]) {
            return bad("n_list must be strictly ascending".into());
        }
        if self.trials == 0 {
            return bad("trials must be positive".into());
        }
        let t = &self.scenario;
        if !(t.c > 0.0 && t.c < 1.0) {
            return bad(format!("c must lie in (0, 1), got {}", t.c));
        }
        match t.noise {
            Noise::Sigma2(s) if !(s >= 0.0 && s.is_finite()) => {
                return bad(format!("sigma2 must be non-negative, got {s}"))
            }
            Noise::ThresholdFactor(f) if !(f > 0.0 && f.is_finite()) => {
                return bad(format!("threshold_factor must be positive, got {f}"))
            }
            Noise::ThresholdFactor(_) if t.angles.is_empty() => {
                return bad("threshold_factor needs at least one source".into())
            }
            _ => {}
        }
        if let Some([a, b, c, d]) = self.contour {
            ContourSpec::from_thresholds(a, b, c, d)?;
        }
        if self.grid_cap == 0 || self.grid_size == Some(0) {
            return bad("grid size must be positive".into());
        }
        for &n in &self.n_list {
            let m = array_size(t.c, n);
            if m == 0 || m >= n || m <= t.angles.len() {
                return bad(format!("N={n} gives M={m}, need K < M < N"));
            }
            let cn = m as f64 / n as f64;
            if (cn - t.c).abs() > 1e-2 {
                return bad(format!("N={n} gives c_N={cn}, more than 1e-2 from c={}", t.c));
            }
        }
        Ok(())
    }

    fn grid(&self, n: usize) -> Grid {
        match self.grid_size {
            Some(size) => Grid::Uniform { size },
            None => Grid::for_snapshots(n, self.grid_cap),
        }
    }
}

pub fn array_size(c: f64, n: usize) -> usize {
    (c * n as f64).round() as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    UniformConsistency,
    DoaConsistency,
    EscapeDiagnostics,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::UniformConsistency => "uniform_consistency",
            ExperimentKind::DoaConsistency => "doa_consistency",
            ExperimentKind::EscapeDiagnostics => "escape_diagnostics",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub experiment: ExperimentKind,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub trial_count: usize,
    pub metric: String,
    pub source_index: Option<usize>,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    /// Trials that produced no value for this metric.
    pub failures: usize,
    /// Base seed; per-trial seeds follow from it by `derive_seed`.
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
    #[serde(skip)]
    pub wall_clock: Duration,
}

impl ExperimentReport {
    /// The row for `metric` at `n`, if present.
    pub fn row(&self, n: usize, metric: &str, source: Option<usize>) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.metric == metric && r.source_index == source)
    }

    pub fn median(&self, n: usize, metric: &str, source: Option<usize>) -> Option<f64> {
        self.row(n, metric, source).map(|r| r.median)
    }
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

struct RowContext {
    experiment: ExperimentKind,
    n: usize,
    m: usize,
    k: usize,
    trials: usize,
    seed: u64,
}

impl RowContext {
    fn stats(&self, metric: &str, source: Option<usize>, values: &[Option<f64>]) -> Option<ReportRow> {
        let mut data: Vec<f64> = values.iter().flatten().copied().collect();
        if data.is_empty() {
            return None;
        }
        data.sort_by(f64::total_cmp);
        Some(self.row(
            metric,
            source,
            [quantile(&data, 0.5), quantile(&data, 0.25), quantile(&data, 0.75)],
            values.len() - data.len(),
        ))
    }

    fn count(&self, metric: &str, count: usize) -> ReportRow {
        let c = count as f64;
        self.row(metric, None, [c, c, c], 0)
    }

    fn row(&self, metric: &str, source: Option<usize>, q: [f64; 3], failures: usize) -> ReportRow {
        ReportRow {
            experiment: self.experiment,
            n: self.n,
            m: self.m,
            k: self.k,
            trial_count: self.trials,
            metric: metric.to_string(),
            source_index: source,
            median: q[0],
            q25: q[1],
            q75: q[2],
            failures,
            seed: self.seed,
        }
    }
}

/// Scenario, deterministic input and contour at one `N`.
pub struct Setup {
    pub scenario: Scenario,
    pub input: DeterministicInput,
    /// Contour, or the reason none could be chosen.
    pub contour: Result<ContourSpec, Error>,
    /// Separation verdict of the deterministic profile; `None` when the
    /// support could not be analysed.
    pub separated: Option<bool>,
}

pub fn setup(cfg: &ExperimentConfig, n: usize) -> Result<Setup, Error> {
    let t = &cfg.scenario;
    let m = array_size(t.c, n);
    let base = build_scenario(&ScenarioConfig {
        m,
        n,
        angles: t.angles.clone(),
        powers: t.powers.clone(),
        sigma2: 1.0,
        seed: derive_seed(cfg.base_seed, &[n as u64]),
        norm_bound: t.norm_bound,
    })?;
    let sigma2 = match t.noise {
        Noise::Sigma2(s) => s,
        Noise::ThresholdFactor(f) => {
            let lmin = base.min_signal_eigenvalue().unwrap_or(0.0);
            lmin / (f * base.c().sqrt())
        }
    };
    let scenario = base.with_sigma2(sigma2);
    let input = DeterministicInput::from_scenario(&scenario)?;

    let (contour, separated) = if sigma2 == 0.0 {
        (noiseless_contour(&input).map_err(Error::from), Some(true))
    } else {
        match find_support(&input) {
            Ok(profile) => {
                let verdict = check_separation(&profile, &input, scenario.k()).holds();
                (choose_contour(&profile).map_err(Error::from), Some(verdict))
            }
            Err(e) => (Err(e.into()), None),
        }
    };
    let contour = match cfg.contour {
        Some([a, b, c, d]) => ContourSpec::from_thresholds(a, b, c, d).map_err(Error::from),
        None => contour,
    };
    Ok(Setup {
        scenario,
        input,
        contour,
        separated,
    })
}

#[derive(Clone, Copy, Debug, Default)]
struct FailureTally {
    pole_too_close: usize,
    other: usize,
}

impl FailureTally {
    fn record(&mut self, e: &EstimatorError) {
        match e {
            EstimatorError::PoleTooClose { .. } => self.pole_too_close += 1,
            _ => self.other += 1,
        }
    }
}

fn run_per_n<T, F>(
    cfg: &ExperimentConfig,
    kind: ExperimentKind,
    trial: F,
    mut summarize: impl FnMut(&RowContext, &Setup, &[Result<T, EstimatorError>], &mut Vec<ReportRow>),
) -> Result<ExperimentReport, Error>
where
    T: Send,
    F: Fn(&Setup, &ContourSpec, u64) -> Result<T, EstimatorError> + Sync,
{
    cfg.validate()?;
    let start = Instant::now();
    let mut rows = Vec::new();
    for &n in &cfg.n_list {
        let s = setup(cfg, n)?;
        let ctx = RowContext {
            experiment: kind,
            n,
            m: s.scenario.m,
            k: s.scenario.k(),
            trials: cfg.trials,
            seed: cfg.base_seed,
        };
        let separation_failures = if s.separated == Some(true) { 0 } else { cfg.trials };
        // without a contour every trial counts as a separation failure
        if let Ok(contour) = &s.contour {
            let results: Vec<Result<T, EstimatorError>> = (0..cfg.trials)
                .into_par_iter()
                .map(|t| trial(&s, contour, derive_seed(cfg.base_seed, &[n as u64, t as u64])))
                .collect();
            summarize(&ctx, &s, &results, &mut rows);
            let mut tally = FailureTally::default();
            results.iter().filter_map(|r| r.as_ref().err()).for_each(|e| tally.record(e));
            rows.push(ctx.count("pole_too_close", tally.pole_too_close));
            rows.push(ctx.count("other_failures", tally.other));
        }
        rows.push(ctx.count("separation_failures", separation_failures));
    }
    Ok(ExperimentReport {
        rows,
        wall_clock: start.elapsed(),
    })
}

struct UniformTrial {
    sup_improved: f64,
    sup_classical: f64,
}

/// Sup-grid errors `sup_θ |η̃ − η|` and `sup_θ |η̂ − η|` against the true
/// noise-subspace quadratic form.
pub fn run_uniform_consistency(cfg: &ExperimentConfig) -> Result<ExperimentReport, Error> {
    let truths: Vec<(usize, Vec<f64>)> = cfg
        .n_list
        .iter()
        .map(|&n| {
            let s = setup(cfg, n)?;
            let truth = true_projector(&s.scenario)?;
            let grid = cfg.grid(n).angles();
            Ok((n, grid.par_iter().map(|&t| truth.eta(t)).collect()))
        })
        .collect::<Result<_, Error>>()?;
    run_per_n(
        cfg,
        ExperimentKind::UniformConsistency,
        |s, contour, seed| {
            let n = s.scenario.n;
            let spec = decompose(&sample_observation(&s.scenario, seed), s.input.sigma2)?;
            let weights = improved_weights(&spec, contour, cfg.method)?;
            let ps = pseudo_spectrum(&spec, &weights, s.scenario.k(), &cfg.grid(n));
            let eta = &truths.iter().find(|(m, _)| *m == n).expect("truth per N").1;
            let sup = |v: &[f64]| v.iter().zip(eta).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            Ok(UniformTrial {
                sup_improved: sup(&ps.values_improved),
                sup_classical: sup(&ps.values_classical),
            })
        },
        |ctx, s, results, rows| {
            let pick = |f: fn(&UniformTrial) -> f64| -> Vec<Option<f64>> {
                results.iter().map(|r| r.as_ref().ok().map(f)).collect()
            };
            rows.extend(ctx.stats("sup_err_improved", None, &pick(|t| t.sup_improved)));
            rows.extend(ctx.stats("sup_err_classical", None, &pick(|t| t.sup_classical)));
            let size = cfg.grid(s.scenario.n).angles().len();
            rows.push(ctx.count("grid_size", size));
        },
    )
}

/// Search intervals centred at the true angles with half-width a quarter
/// of the smallest circular spacing (`π/2` for a single source).
pub fn doa_intervals(angles: &[f64]) -> Vec<(f64, f64)> {
    let k = angles.len();
    let mut spacing = PI;
    for i in 0..k {
        for j in i + 1..k {
            let d = (angles[i] - angles[j]).rem_euclid(2.0 * PI);
            spacing = spacing.min(d.min(2.0 * PI - d));
        }
    }
    let half = if k == 1 { PI / 2.0 } else { spacing / 4.0 };
    angles.iter().map(|&t| (t - half, t + half)).collect()
}

struct DoaTrial {
    improved: Vec<f64>,
    classical: Vec<f64>,
    /// Improved estimates under the alternative objective.
    improved_alt: Vec<f64>,
}

fn rmse(est: &[f64], truth: &[f64]) -> f64 {
    let s: f64 = est.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
    (s / truth.len() as f64).sqrt()
}

/// Per-source `N·|θ̃_k − θ_k|` for both estimators plus per-trial angular RMSE.
pub fn run_doa_consistency(cfg: &ExperimentConfig) -> Result<ExperimentReport, Error> {
    if cfg.scenario.angles.is_empty() {
        return Err(Error::Experiment("DoA consistency needs at least one source".into()));
    }
    let (objective, alt, alt_suffix) = match cfg.doa_objective {
        DoaObjective::Signed => (DoaObjective::Signed, DoaObjective::Modulus, "modulus"),
        DoaObjective::Modulus => (DoaObjective::Modulus, DoaObjective::Signed, "signed"),
    };
    let alt_metric = format!("n_abs_err_improved_{alt_suffix}");
    run_per_n(
        cfg,
        ExperimentKind::DoaConsistency,
        |s, contour, seed| {
            let k = s.scenario.k();
            let spec = decompose(&sample_observation(&s.scenario, seed), s.input.sigma2)?;
            let weights = improved_weights(&spec, contour, cfg.method)?;
            let intervals = doa_intervals(&s.scenario.angles);
            let eta = |t| improved_eta(&weights, &spec, t);
            let extract = |f: &dyn Fn(f64) -> f64, o| {
                extract_doas_intervals_with(f, &intervals, o).map(|e| e.estimates)
            };
            Ok(DoaTrial {
                improved: extract(&eta, objective)?,
                classical: extract(&|t| classical_eta(&spec, k, t), objective)?,
                improved_alt: extract(&eta, alt)?,
            })
        },
        |ctx, s, results, rows| {
            let truth = &s.scenario.angles;
            let n = ctx.n as f64;
            let select = |t: &DoaTrial, which: usize| -> Vec<f64> {
                match which {
                    0 => t.improved.clone(),
                    1 => t.classical.clone(),
                    _ => t.improved_alt.clone(),
                }
            };
            let per_source = [
                ("n_abs_err_improved", 0),
                ("n_abs_err_classical", 1),
                (alt_metric.as_str(), 2),
            ];
            for (i, &theta) in truth.iter().enumerate() {
                for &(metric, which) in &per_source {
                    let values: Vec<Option<f64>> = results
                        .iter()
                        .map(|r| r.as_ref().ok().map(|t| n * (select(t, which)[i] - theta).abs()))
                        .collect();
                    rows.extend(ctx.stats(metric, Some(i), &values));
                }
            }
            for (metric, which) in [("rmse_improved", 0), ("rmse_classical", 1)] {
                let values: Vec<Option<f64>> = results
                    .iter()
                    .map(|r| r.as_ref().ok().map(|t| rmse(&select(t, which), truth)))
                    .collect();
                rows.extend(ctx.stats(metric, None, &values));
            }
        },
    )
}

/// Localisation diagnostics of one realisation against a fixed contour.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EscapeTrial {
    /// Some `λ̂_k` lies outside the bands.
    pub e1: bool,
    /// Some `ω̂_k` lies outside the bands.
    pub e2: bool,
    /// `#{k : λ̂_k < t₁⁺} ≠ M − K` or `#{k : ω̂_k < t₁⁺} ≠ M − K`.
    pub count_violation: bool,
}

impl EscapeTrial {
    pub fn localization_failure(&self) -> bool {
        self.e1 || self.e2 || self.count_violation
    }
}

pub fn escape_trial(
    lambdas: &[f64],
    omegas: &[f64],
    contour: &ContourSpec,
    noise_count: usize,
) -> EscapeTrial {
    let below = |v: &[f64]| v.iter().filter(|&&x| x < contour.t1_plus).count();
    EscapeTrial {
        e1: lambdas.iter().any(|&x| !contour.in_band(x)),
        e2: omegas.iter().any(|&x| !contour.in_band(x)),
        count_violation: below(lambdas) != noise_count || below(omegas) != noise_count,
    }
}

/// Counts of the escape events `E₁`, `E₂` and of count-identity violations.
pub fn run_escape_diagnostics(cfg: &ExperimentConfig) -> Result<ExperimentReport, Error> {
    run_per_n(
        cfg,
        ExperimentKind::EscapeDiagnostics,
        |s, contour, seed| {
            let spec = decompose(&sample_observation(&s.scenario, seed), s.input.sigma2)?;
            let noise_count = s.scenario.m - s.scenario.k();
            Ok(escape_trial(&spec.lambdas, &spec.omegas, contour, noise_count))
        },
        |ctx, _, results, rows| {
            let count = |f: fn(&EscapeTrial) -> bool| {
                results.iter().filter(|r| r.as_ref().is_ok_and(f)).count()
            };
            rows.push(ctx.count("escape_e1", count(|t| t.e1)));
            rows.push(ctx.count("escape_e2", count(|t| t.e2)));
            rows.push(ctx.count("count_identity_violations", count(|t| t.count_violation)));
            rows.push(ctx.count("localization_failures", count(EscapeTrial::localization_failure)));
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
}

pub const CSV_HEADER: &str =
    "experiment,N,M,K,trial_count,metric,source_index,median,q25,q75,failures,seed";

pub fn render_report(report: &ExperimentReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("rows serialize");
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from(CSV_HEADER);
            s.push('\n');
            for r in &report.rows {
                let source = r.source_index.map(|i| i.to_string()).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{:.16e},{:.16e},{:.16e},{},{}",
                    r.experiment.name(),
                    r.n,
                    r.m,
                    r.k,
                    r.trial_count,
                    r.metric,
                    source,
                    r.median,
                    r.q25,
                    r.q75,
                    r.failures,
                    r.seed
                );
            }
            s
        }
    }
}

pub fn emit_report(report: &ExperimentReport, format: ReportFormat, path: &Path) -> Result<(), Error> {
    std::fs::write(path, render_report(report, format))
        .map_err(|e| Error::Experiment(format!("cannot write {}: {e}", path.display())))
}
