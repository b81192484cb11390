//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs without the libtest harness so the verdicts always print.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use gmusic::estimator::{
    classical_eta, deterministic_weights, extract_doas_intervals, extract_doas_topk, improved_eta,
    improved_weights, pseudo_spectrum, Grid, WeightMethod,
};
use gmusic::experiments::{
    render_report, run_doa_consistency, run_escape_diagnostics, run_uniform_consistency,
    setup, ExperimentConfig, ExperimentReport, Noise, ReportFormat, ScenarioTemplate,
};
use gmusic::estimator::DoaObjective;
use gmusic::model::{build_scenario, sample_observation, ScenarioConfig};
use gmusic::nalgebra::DMatrix;
use gmusic::rmt::{
    choose_contour, find_support, noiseless_contour, solve_canonical, DeterministicInput,
};
use gmusic::seed::rng_from_seed;
use gmusic::spectrum::{decompose, secular_roots};
use gmusic::C64;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Criterion-7 sweep: two sources at 0.2 and 0.5 rad with the weakest
/// eigenvalue of BB* at four times the detection threshold.
fn sweep_config(trials: usize) -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioTemplate {
            angles: vec![0.2, 0.5],
            powers: vec![1.0, 1.0],
            c: 0.5,
            noise: Noise::ThresholdFactor(4.0),
            norm_bound: 1e3,
        },
        n_list: vec![40, 80, 160, 320],
        trials,
        base_seed: 20_240_601,
        grid_cap: 20_000,
        grid_size: None,
        method: WeightMethod::Residue,
        contour: None,
        doa_objective: DoaObjective::Signed,
    }
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|p| p[1] < p[0])
}

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn medians(r: &ExperimentReport, ns: &[usize], metric: &str, source: Option<usize>) -> Vec<f64> {
    ns.iter()
        .map(|&n| r.median(n, metric, source).unwrap_or(f64::NAN))
        .collect()
}

fn c1_secular_structure() -> Verdict {
    let mut rng = rng_from_seed(1);
    let mut worst_trace = 0.0_f64;
    let mut worst_dense = 0.0_f64;
    let mut interlace_fail = 0;
    for inst in 0..1000 {
        let m = rng.random_range(1..=200);
        let sigma2 = rng.random_range(0.1..3.0);
        let c = rng.random_range(0.05..0.95);
        let mut lambdas: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..10.0_f64).powi(2) / 10.0).collect();
        if inst % 5 == 0 {
            // repeated eigenvalues
            for k in 1..m {
                if rng.random_bool(0.3) {
                    lambdas[k] = lambdas[k - 1];
                }
            }
        }
        lambdas.sort_by(f64::total_cmp);
        let omegas = secular_roots(&lambdas, sigma2 * c);
        for k in 0..m {
            let upper = if k + 1 < m { lambdas[k + 1] } else { f64::INFINITY };
            if !(lambdas[k] <= omegas[k] && omegas[k] <= upper) {
                interlace_fail += 1;
            }
        }
        let sum_l: f64 = lambdas.iter().sum();
        let sum_w: f64 = omegas.iter().sum();
        worst_trace = worst_trace.max((sum_w - sum_l - sigma2 * c).abs() / (1.0 + sum_l));
        if m <= 40 {
            // dense oracle: eigenvalues of Λ + ρ 11ᵀ
            let rho = sigma2 * c / m as f64;
            let dense = DMatrix::from_fn(m, m, |i, j| rho + if i == j { lambdas[i] } else { 0.0 });
            let mut eig: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&omegas) {
                worst_dense = worst_dense.max((a - b).abs() / (1.0 + sum_l));
            }
        }
    }
    verdict(
        interlace_fail == 0 && worst_trace <= 1e-12 && worst_dense <= 1e-10,
        format!(
            "1000 instances, interlacing violations {interlace_fail}, max trace error {worst_trace:.2e} (tol 1e-12), max dense-eigensolver gap {worst_dense:.2e}"
        ),
    )
}

fn c2_mp_edges() -> Verdict {
    let mut worst = 0.0_f64;
    let mut clusters_ok = true;
    for sigma2 in [0.5, 1.0, 2.0] {
        for c in [0.1, 0.25, 0.5, 0.9] {
            let input = DeterministicInput::new(vec![0.0; 10], sigma2, c).unwrap();
            let p = find_support(&input).unwrap();
            clusters_ok &= p.q() == 1;
            let cl = p.clusters[0];
            let sc = c.sqrt();
            for (got, want) in [
                (cl.x_minus, sigma2 * (1.0 - sc).powi(2)),
                (cl.x_plus, sigma2 * (1.0 + sc).powi(2)),
                (cl.w_minus, -sigma2 * sc),
                (cl.w_plus, sigma2 * sc),
            ] {
                worst = worst.max((got - want).abs());
            }
        }
    }
    verdict(
        clusters_ok && worst <= 1e-10,
        format!("12 (σ², c) pairs, single cluster each, max edge error {worst:.2e} (tol 1e-10)"),
    )
}

/// Relative residual of the canonical equation, evaluated independently of
/// the solver.
fn canonical_residual(input: &DeterministicInput, z: C64, m: C64) -> f64 {
    let (s, c) = (input.sigma2, input.c);
    let b = 1.0 + s * c * m;
    let rhs: C64 = input
        .true_lambdas
        .iter()
        .map(|&l| (-z * b + s * (1.0 - c) + l / b).inv())
        .sum::<C64>()
        / input.dim() as f64;
    (m - rhs).norm() / m.norm()
}

fn c3_canonical_equation() -> Verdict {
    let mut rng = rng_from_seed(3);
    let mut worst_res = 0.0_f64;
    let mut worst_quad = 0.0_f64;
    let mut branch_fail = 0;
    let mut solve_fail = 0;
    for i in 0..1000 {
        let m = rng.random_range(5..=50);
        let k = if i % 4 == 0 { 0 } else { rng.random_range(1..=3.min(m - 1)) };
        let sigma2 = rng.random_range(0.5..2.0);
        let c = rng.random_range(0.1..0.9);
        let mut lambdas = vec![0.0; m - k];
        lambdas.extend((0..k).map(|_| rng.random_range(1.0..10.0)));
        let input = DeterministicInput::new(lambdas, sigma2, c).unwrap();
        let y = 10f64.powf(rng.random_range(-3.0..1.0)) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let z = C64::new(rng.random_range(-1.0..15.0), y);
        let Ok(sol) = solve_canonical(&input, z) else {
            solve_fail += 1;
            continue;
        };
        worst_res = worst_res.max(canonical_residual(&input, z, sol));
        let b = 1.0 + sigma2 * c * sol;
        if !(sol.im * z.im > 0.0 && b.re >= 0.5 - 1e-9) {
            branch_fail += 1;
        }
        if k == 0 {
            // σ²c z m² + (z − σ²(1−c)) m + 1 = 0, root in the half-plane of z
            let qa = sigma2 * c * z;
            let qb = z - sigma2 * (1.0 - c);
            let disc = (qb * qb - 4.0 * qa).sqrt();
            let roots = [(-qb + disc) / (2.0 * qa), (-qb - disc) / (2.0 * qa)];
            let root = roots
                .into_iter()
                .find(|r| r.im * z.im > 0.0 && (1.0 + sigma2 * c * r).re >= 0.5 - 1e-9)
                .unwrap_or(roots[0]);
            worst_quad = worst_quad.max((root - sol).norm());
        }
    }
    verdict(
        solve_fail == 0 && branch_fail == 0 && worst_res <= 1e-12 && worst_quad <= 1e-10,
        format!(
            "1000 z, solver failures {solve_fail}, branch violations {branch_fail}, max relative residual {worst_res:.2e} (tol 1e-12), max quadratic-formula gap {worst_quad:.2e} (tol 1e-10)"
        ),
    )
}

fn c4_deterministic_projector() -> Verdict {
    let mut lambdas = vec![0.0; 18];
    lambdas.extend([5.0, 8.0]);
    let input = DeterministicInput::new(lambdas, 1.0, 0.5).unwrap();
    let contour = choose_contour(&find_support(&input).unwrap()).unwrap();
    let w = deterministic_weights(&input, &contour).unwrap();
    let worst = w
        .iter()
        .enumerate()
        .map(|(j, v)| (v - if j < 18 { 1.0 } else { 0.0 }).abs())
        .fold(0.0, f64::max);
    verdict(
        worst <= 1e-6,
        format!("M=20, λ(BB*) = (0×18, 5, 8): max deviation from (1,…,1,0,0) {worst:.2e} (tol 1e-6)"),
    )
}

fn criterion_scenario(n: usize, sigma2: f64) -> gmusic::model::Scenario {
    build_scenario(&ScenarioConfig {
        m: n / 2,
        n,
        angles: vec![0.2, 1.2],
        powers: vec![5.0, 8.0],
        sigma2,
        seed: 4,
        norm_bound: 1e3,
    })
    .unwrap()
}

fn c5_weight_equivalence() -> Verdict {
    let s = criterion_scenario(40, 1.0);
    let input = DeterministicInput::from_scenario(&s).unwrap();
    let contour = choose_contour(&find_support(&input).unwrap()).unwrap();
    let mut worst = 0.0_f64;
    let mut worst_imag = 0.0_f64;
    let mut failures = 0;
    for t in 0..100 {
        let spec = decompose(&sample_observation(&s, 1000 + t), 1.0).unwrap();
        match (
            improved_weights(&spec, &contour, WeightMethod::Residue),
            improved_weights(&spec, &contour, WeightMethod::Quadrature),
        ) {
            (Ok(a), Ok(b)) => {
                for (x, y) in a.rho.iter().zip(&b.rho) {
                    worst = worst.max((x - y).abs());
                }
                for v in a.imag_residue.iter().chain(&b.imag_residue) {
                    worst_imag = worst_imag.max(v.abs());
                }
            }
            _ => failures += 1,
        }
    }
    verdict(
        failures == 0 && worst <= 1e-8 && worst_imag <= 1e-8,
        format!(
            "100 realizations at N=40, weight failures {failures}, max |ρ_res − ρ_quad| {worst:.2e} (tol 1e-8), max imaginary residue {worst_imag:.2e}"
        ),
    )
}

fn c6_noiseless_exactness() -> Verdict {
    let s = build_scenario(&ScenarioConfig {
        m: 40,
        n: 80,
        angles: vec![0.2, 0.5],
        powers: vec![1.0, 1.0],
        sigma2: 0.0,
        seed: 6,
        norm_bound: 1e3,
    })
    .unwrap();
    let input = DeterministicInput::from_scenario(&s).unwrap();
    let contour = noiseless_contour(&input).unwrap();
    let spec = decompose(&sample_observation(&s, 0), 0.0).unwrap();
    let w = improved_weights(&spec, &contour, WeightMethod::Residue).unwrap();
    let eta = |t: f64| improved_eta(&w, &spec, t);
    let intervals = extract_doas_intervals(&eta, &[(0.1, 0.35), (0.35, 0.6)]).unwrap();
    let ps = pseudo_spectrum(&spec, &w, 2, &Grid::Uniform { size: 6400 });
    let topk = extract_doas_topk(&ps, 2, 2.0 * PI / 40.0, &eta).unwrap();
    let worst = intervals
        .estimates
        .iter()
        .chain(&topk.estimates)
        .zip(s.angles.iter().chain(&s.angles))
        .map(|(e, t)| (e - t).abs())
        .fold(0.0, f64::max);
    let classical_at_truth = s.angles.iter().map(|&t| classical_eta(&spec, 2, t)).fold(0.0, f64::max);
    verdict(
        worst <= 1e-6,
        format!(
            "K=2, M=40, σ²=0: max |θ̃ − θ| {worst:.2e} rad over interval and top-K extraction (tol 1e-6); η̂ at truth {classical_at_truth:.1e}"
        ),
    )
}

fn c7_c8_trends() -> (Verdict, Verdict) {
    let cfg = sweep_config(50);
    let ns = cfg.n_list.clone();
    let uni = run_uniform_consistency(&cfg).unwrap();
    let imp = medians(&uni, &ns, "sup_err_improved", None);
    let cls = medians(&uni, &ns, "sup_err_classical", None);
    let v7 = verdict(
        strictly_decreasing(&imp) && imp[3] < cls[3],
        format!(
            "N=(40,80,160,320), 50 trials: median sup|η̃−η| {} strictly decreasing; at N=320 {:.4} < classical {:.4}",
            fmt_list(&imp),
            imp[3],
            cls[3]
        ),
    );

    let doa = run_doa_consistency(&cfg).unwrap();
    let s0 = medians(&doa, &ns, "n_abs_err_improved", Some(0));
    let s1 = medians(&doa, &ns, "n_abs_err_improved", Some(1));
    let m0 = medians(&doa, &ns, "n_abs_err_improved_modulus", Some(0));
    let m1 = medians(&doa, &ns, "n_abs_err_improved_modulus", Some(1));
    let v8 = verdict(
        strictly_decreasing(&s0) && strictly_decreasing(&s1),
        format!(
            "median N|θ̃_k−θ_k| (argmin η̃): k=1 {}, k=2 {}; argmin |η̃| for reference: k=1 {}, k=2 {}",
            fmt_list(&s0),
            fmt_list(&s1),
            fmt_list(&m0),
            fmt_list(&m1)
        ),
    );
    (v7, v8)
}

fn escape_config(powers: Vec<f64>, contour: Option<[f64; 4]>) -> ExperimentConfig {
    ExperimentConfig {
        scenario: ScenarioTemplate {
            angles: vec![0.2, 1.2],
            powers,
            c: 0.5,
            noise: Noise::Sigma2(1.0),
            norm_bound: 1e3,
        },
        n_list: vec![160],
        trials: 200,
        base_seed: 9,
        grid_cap: 20_000,
        grid_size: None,
        method: WeightMethod::Residue,
        contour,
        doa_objective: DoaObjective::Signed,
    }
}

fn c9_escapes() -> Verdict {
    let cfg = escape_config(vec![5.0, 8.0], None);
    let r = run_escape_diagnostics(&cfg).unwrap();
    let get = |r: &ExperimentReport, m: &str| r.median(160, m, None).unwrap_or(f64::NAN);
    let (e1, e2, cv, sep) = (
        get(&r, "escape_e1"),
        get(&r, "escape_e2"),
        get(&r, "count_identity_violations"),
        get(&r, "separation_failures"),
    );

    let c = setup(&cfg, 160).unwrap().contour.unwrap();
    let control = escape_config(vec![0.3, 8.0], Some([c.t1_minus, c.t1_plus, c.t2_minus, c.t2_plus]));
    let separated = setup(&control, 160).unwrap().separated;
    let rc = run_escape_diagnostics(&control).unwrap();
    let leaks = get(&rc, "localization_failures");
    verdict(
        e1 == 0.0 && e2 == 0.0 && cv == 0.0 && sep == 0.0 && separated == Some(false) && leaks > 100.0,
        format!(
            "N=160, 200 trials: E1 {e1}, E2 {e2}, count-identity violations {cv}; negative control (separation fails) localization failures {leaks}/200 (need > 100)"
        ),
    )
}

fn c10_determinism() -> Verdict {
    let cfg = sweep_config(10);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let r = run_uniform_consistency(&cfg).unwrap();
                (render_report(&r, ReportFormat::Csv), render_report(&r, ReportFormat::Json))
            })
    };
    let one = run(1);
    let four = run(4);
    let again = run(4);
    verdict(
        one == four && four == again,
        format!(
            "10-trial sweep rendered as CSV ({} bytes) and JSON ({} bytes): identical across 1 and 4 threads and on repeat",
            one.0.len(),
            one.1.len()
        ),
    )
}

fn main() {
    // cargo test passes libtest flags; a filter other than ours skips the suite
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }

    let mut results: Vec<(u32, &str, Verdict, Duration, Duration)> = Vec::new();
    let mut timed = |id: u32, name: &'static str, budget: u64, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        results.push((id, name, v, start.elapsed(), Duration::from_secs(budget)));
    };
    timed(1, "secular structure", 30, &c1_secular_structure);
    timed(2, "Marchenko-Pastur edges", 5, &c2_mp_edges);
    timed(3, "canonical equation", 60, &c3_canonical_equation);
    timed(4, "deterministic projector identity", 10, &c4_deterministic_projector);
    timed(5, "residue vs quadrature weights", 120, &c5_weight_equivalence);
    timed(6, "noiseless exactness", 5, &c6_noiseless_exactness);

    let start = Instant::now();
    let (v7, v8) = c7_c8_trends();
    let shared = start.elapsed();
    results.push((7, "uniform-consistency trend", v7, shared, Duration::from_secs(600)));
    results.push((8, "DoA-consistency trend", v8, shared, Duration::from_secs(600)));

    let mut timed = |id: u32, name: &'static str, budget: u64, f: &dyn Fn() -> Verdict| {
        let start = Instant::now();
        let v = f();
        results.push((id, name, v, start.elapsed(), Duration::from_secs(budget)));
    };
    timed(9, "escape diagnostics", 180, &c9_escapes);
    timed(10, "determinism across threads", 600, &c10_determinism);

    let mut failed = 0;
    println!();
    for (id, name, v, took, budget) in &results {
        let ok = v.pass && took <= budget;
        failed += usize::from(!ok);
        println!(
            "{} criterion {id:>2} ({name}): {} [{:.2} s, budget {} s]",
            if ok { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("\nacceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
