//! `gmusic`: simulation, support analysis, estimation and Monte Carlo runs.

mod io;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use gmusic::estimator::{
    estimate_sigma2, extract_doas_intervals_with, extract_doas_topk, improved_eta,
    improved_weights, pseudo_spectrum, DoaObjective, Grid, WeightMethod,
};
use gmusic::experiments::{
    emit_report, render_report, run_doa_consistency, run_escape_diagnostics,
    run_uniform_consistency, ExperimentConfig, ExperimentReport, ReportFormat,
};
use gmusic::model::{build_scenario, sample_observation, ScenarioConfig};
use gmusic::rmt::{
    check_separation, choose_contour, find_support, noiseless_contour, ContourSpec,
    DeterministicInput, SeparationReport, SupportProfile,
};
use gmusic::spectrum::{decompose_matrix, SpectralDecomposition};
use gmusic::{Error, EstimatorError, RmtError, C64};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

/// Seed used when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 0x5EED;

/// Default cap on the `N²` pseudo-spectrum grid.
const GRID_CAP: usize = 20_000;

#[derive(Parser, Debug)]
#[command(name = "gmusic", version, about = "Subspace DoA estimation with random-matrix corrected weights")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Random seed; defaults to a fixed constant so runs are reproducible.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Largest accepted imaginary residue of the estimator weights.
    #[arg(long, global = true, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Json => ReportFormat::Json,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Support clusters, separation verdicts and contour for given eigenvalues of BB*.
    Support {
        /// Eigenvalue file, one value per line.
        #[arg(long)]
        eigs: PathBuf,
        #[arg(long)]
        sigma2: f64,
        #[arg(long)]
        c: f64,
    },
    /// Pseudo-spectra and DoA estimates from an observed matrix.
    Estimate(EstimateArgs),
    /// Draw one observation of a scenario (JSON scenario config).
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Uniform-consistency Monte Carlo run.
    McConsistency {
        #[arg(long)]
        config: PathBuf,
    },
    /// DoA-consistency Monte Carlo run.
    McDoa {
        #[arg(long)]
        config: PathBuf,
    },
    /// Escape-event Monte Carlo run.
    McEscape {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Matrix file with header `# complex M N`.
    #[arg(long)]
    input: PathBuf,
    /// Number of sources.
    #[arg(long)]
    k: usize,
    #[arg(long, conflicts_with = "estimate_sigma2", required_unless_present = "estimate_sigma2")]
    sigma2: Option<f64>,
    /// Plug in the mean of the M−K smallest eigenvalues for σ².
    #[arg(long)]
    estimate_sigma2: bool,
    /// Grid size; defaults to min(N², 20000).
    #[arg(long)]
    grid: Option<usize>,
    /// Search intervals `a:b`, comma separated, one per source.
    #[arg(long, value_delimiter = ',', conflicts_with = "topk")]
    intervals: Option<Vec<String>>,
    /// Pick the K deepest grid minima instead of searching intervals.
    #[arg(long)]
    topk: bool,
    /// Thresholds `t1m,t1p,t2m,t2p`, bypassing the support analysis.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    contour: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value_t = MethodArg::Residue)]
    method: MethodArg,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::Modulus)]
    objective: ObjectiveArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Residue,
    Quadrature,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ObjectiveArg {
    Modulus,
    Signed,
}

/// Failure of a command together with the stage that raised it.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Parse { path: String, source: io::ParseError },
    #[error("{path}: {message}")]
    Config { path: String, message: String },
    #[error("{0}")]
    Io(String),
    #[error("[{stage}] {source}")]
    Module { stage: &'static str, source: Error },
}

/// Attach the pipeline stage to a library error.
fn at<E: Into<Error>>(stage: &'static str) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Module {
        stage,
        source: e.into(),
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Parse { .. } | CliError::Config { .. } => 2,
            CliError::Io(_) => 1,
            CliError::Module { source, .. } => module_exit_code(source),
        }
    }
}

fn rmt_exit_code(e: &RmtError) -> u8 {
    match e {
        RmtError::SupportSearchFailed(_) => 3,
        RmtError::SeparationViolated(_) => 4,
        _ => 7,
    }
}

fn module_exit_code(e: &Error) -> u8 {
    match e {
        Error::Rmt(r) | Error::Estimator(EstimatorError::Rmt(r)) => rmt_exit_code(r),
        Error::Model(_) => 5,
        Error::Spectrum(_) | Error::Estimator(EstimatorError::Spectrum(_)) => 6,
        Error::Estimator(EstimatorError::PoleTooClose { .. }) => 8,
        Error::Estimator(EstimatorError::QuadratureNoConvergence { .. }) => 9,
        Error::Estimator(EstimatorError::TooFewMinima { .. }) => 10,
        Error::Estimator(_) => 11,
        Error::Experiment(_) => 12,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Deserialize a JSON config, reporting schema violations by JSON pointer.
fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = read(path)?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let pointer = e
            .path()
            .iter()
            .map(|seg| format!("/{}", seg.to_string().trim_start_matches('.').trim_matches(['[', ']'])))
            .collect::<String>();
        CliError::Config {
            path: path.display().to_string(),
            message: format!("at {}: {}", if pointer.is_empty() { "/" } else { &pointer }, e.inner()),
        }
    })
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable output");
    s.push('\n');
    s
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("--{name} must be positive and finite, got {v}")))
    }
}

fn cmd_support(g: &Global, eigs: &Path, sigma2: f64, c: f64) -> Result<(), CliError> {
    let lambdas = io::parse_eigenvalues(&read(eigs)?).map_err(|source| CliError::Parse {
        path: eigs.display().to_string(),
        source,
    })?;
    positive("sigma2", sigma2)?;
    if !(c > 0.0 && c < 1.0) {
        return Err(CliError::Usage(format!("--c must lie in (0, 1), got {c}")));
    }
    let input = DeterministicInput::new(lambdas, sigma2, c).map_err(at("input"))?;
    let profile = find_support(&input).map_err(at("support"))?;
    let report = check_separation(&profile, &input, input.k());
    let contour = choose_contour(&profile);
    let text = match g.format {
        Format::Json => pretty(&support_json(&profile, &report, contour.as_ref().ok())),
        Format::Csv => io::float_table(
            &["x_minus", "x_plus", "w_minus", "w_plus"],
            profile
                .clusters
                .iter()
                .map(|c| vec![c.x_minus, c.x_plus, c.w_minus, c.w_plus]),
        ),
    };
    write_output(g.out.as_deref(), &text)?;
    contour.map(|_| ()).map_err(at("contour"))
}

fn support_json(profile: &SupportProfile, report: &SeparationReport, contour: Option<&ContourSpec>) -> serde_json::Value {
    json!({
        "q": profile.q(),
        "clusters": profile.clusters,
        "association": profile.association,
        "eigenvalues": profile.eigenvalues,
        "separation": {
            "signal_separated": report.signal_separated,
            "clusters_separated": report.clusters_separated,
            "holds": report.holds(),
            "signal_margin": report.signal_margin,
            "lower_edge_margin": report.lower_edge_margin,
            "gap_margin": report.gap_margin,
        },
        "contour": contour,
    })
}

/// Deterministic input approximated from data: zeros for the noise block
/// and `ŵ(λ̂_k)` for the `K` largest sample eigenvalues, with `m̂` taken
/// over the noise eigenvalues only.
fn plug_in_input(spec: &SpectralDecomposition, k: usize) -> Result<DeterministicInput, RmtError> {
    let m = spec.dim();
    let (s2, c) = (spec.sigma2, spec.c);
    let noise = &spec.lambdas[..m - k];
    let mut lambdas = vec![0.0; m - k];
    for &x in &spec.lambdas[m - k..] {
        let mhat: f64 = noise.iter().map(|l| 1.0 / (l - x)).sum::<f64>() / m as f64;
        let b = 1.0 + s2 * c * mhat;
        lambdas.push((x * b * b - s2 * (1.0 - c) * b).max(0.0));
    }
    DeterministicInput::new(lambdas, s2, c)
}

fn parse_interval(s: &str) -> Result<(f64, f64), CliError> {
    let bad = || CliError::Usage(format!("interval `{s}` is not of the form a:b"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

fn cmd_estimate(g: &Global, a: &EstimateArgs) -> Result<(), CliError> {
    positive("tol", g.tol)?;
    let sigma = io::parse_matrix(&read(&a.input)?).map_err(|source| CliError::Parse {
        path: a.input.display().to_string(),
        source,
    })?;
    let (m, n) = sigma.shape();
    if a.k == 0 || a.k >= m {
        return Err(CliError::Usage(format!("--k must lie in 1..{m}, got {}", a.k)));
    }
    if a.grid == Some(0) {
        return Err(CliError::Usage("--grid must be positive".into()));
    }
    let intervals = match &a.intervals {
        Some(list) => {
            let iv = list.iter().map(|s| parse_interval(s)).collect::<Result<Vec<_>, _>>()?;
            if iv.len() != a.k {
                return Err(CliError::Usage(format!("{} intervals given for K = {}", iv.len(), a.k)));
            }
            Some(iv)
        }
        None => None,
    };
    if let Some(s) = a.sigma2 {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(CliError::Usage(format!("--sigma2 must be non-negative, got {s}")));
        }
    }

    let mut spec = decompose_matrix(&sigma, a.sigma2.unwrap_or(0.0)).map_err(at("decompose"))?;
    if a.estimate_sigma2 {
        let s2 = estimate_sigma2(&spec, a.k);
        spec = decompose_matrix(&sigma, s2).map_err(at("decompose"))?;
    }
    let contour = match &a.contour {
        Some(t) if t.len() != 4 => {
            return Err(CliError::Usage(format!("--contour takes 4 thresholds, got {}", t.len())))
        }
        Some(t) => ContourSpec::from_thresholds(t[0], t[1], t[2], t[3]).map_err(at("contour"))?,
        None => {
            let input = plug_in_input(&spec, a.k).map_err(at("plug-in"))?;
            if spec.sigma2 == 0.0 {
                noiseless_contour(&input).map_err(at("contour"))?
            } else {
                let profile = find_support(&input).map_err(at("support"))?;
                choose_contour(&profile).map_err(at("contour"))?
            }
        }
    };
    let method = match a.method {
        MethodArg::Residue => WeightMethod::Residue,
        MethodArg::Quadrature => WeightMethod::Quadrature,
    };
    let weights = improved_weights(&spec, &contour, method).map_err(at("weights"))?;
    if let Some(bad) = weights.imag_residue.iter().find(|v| v.abs() > g.tol) {
        return Err(CliError::Module {
            stage: "weights",
            source: Error::Estimator(EstimatorError::InvalidInput(format!(
                "imaginary residue {bad:.3e} exceeds --tol {:.3e}",
                g.tol
            ))),
        });
    }
    let grid = a.grid.map_or(Grid::for_snapshots(n, GRID_CAP), |size| Grid::Uniform { size });
    let ps = pseudo_spectrum(&spec, &weights, a.k, &grid);
    let eta = |t: f64| improved_eta(&weights, &spec, t);
    let objective = match a.objective {
        ObjectiveArg::Modulus => DoaObjective::Modulus,
        ObjectiveArg::Signed => DoaObjective::Signed,
    };
    let doas = match intervals {
        Some(iv) => extract_doas_intervals_with(&eta, &iv, objective),
        None => extract_doas_topk(&ps, a.k, 2.0 * std::f64::consts::PI / m as f64, &eta),
    }
    .map_err(at("extract"))?;

    let spectrum = match g.format {
        Format::Csv => io::float_table(
            &["theta", "classical", "improved"],
            (0..ps.grid.len()).map(|i| vec![ps.grid[i], ps.values_classical[i], ps.values_improved[i]]),
        ),
        Format::Json => pretty(&ps),
    };
    if let Some(out) = &g.out {
        write_output(Some(out), &spectrum)?;
    }
    let summary = json!({
        "M": m,
        "N": n,
        "K": a.k,
        "sigma2": spec.sigma2,
        "sigma2_estimated": a.estimate_sigma2,
        "contour": contour,
        "rho": weights.rho,
        "estimates": doas.estimates,
        "intervals": doas.intervals,
        "residuals": doas.residuals,
    });
    print!("{}", pretty(&summary));
    Ok(())
}

fn cmd_simulate(g: &Global, config: &Path) -> Result<(), CliError> {
    let cfg: ScenarioConfig = load_config(config)?;
    let scenario = build_scenario(&cfg).map_err(at("scenario"))?;
    let obs = sample_observation(&scenario, g.seed.unwrap_or(DEFAULT_SEED));
    let text = match g.format {
        Format::Csv => io::format_matrix(&obs.sigma_matrix),
        Format::Json => {
            let rows: Vec<Vec<[f64; 2]>> = obs
                .sigma_matrix
                .row_iter()
                .map(|r| r.iter().map(|z: &C64| [z.re, z.im]).collect())
                .collect();
            pretty(&json!({ "M": scenario.m, "N": scenario.n, "seed": obs.seed, "rows": rows }))
        }
    };
    write_output(g.out.as_deref(), &text)
}

fn cmd_mc(
    g: &Global,
    config: &Path,
    run: fn(&ExperimentConfig) -> Result<ExperimentReport, Error>,
) -> Result<(), CliError> {
    let mut cfg: ExperimentConfig = load_config(config)?;
    if let Some(seed) = g.seed {
        cfg.base_seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Config {
        path: config.display().to_string(),
        message: e.to_string(),
    })?;
    let report = run(&cfg).map_err(at("experiment"))?;
    eprintln!("wall clock: {:.3} s", report.wall_clock.as_secs_f64());
    match &g.out {
        Some(p) => emit_report(&report, g.format.into(), p).map_err(|e| CliError::Io(e.to_string())),
        None => {
            print!("{}", render_report(&report, g.format.into()));
            Ok(())
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(t) = cli.global.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start {t} threads: {e}")))?;
    }
    let g = &cli.global;
    match &cli.command {
        Command::Support { eigs, sigma2, c } => cmd_support(g, eigs, *sigma2, *c),
        Command::Estimate(a) => cmd_estimate(g, a),
        Command::Simulate { config } => cmd_simulate(g, config),
        Command::McConsistency { config } => cmd_mc(g, config, run_uniform_consistency),
        Command::McDoa { config } => cmd_mc(g, config, run_doa_consistency),
        Command::McEscape { config } => cmd_mc(g, config, run_escape_diagnostics),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
