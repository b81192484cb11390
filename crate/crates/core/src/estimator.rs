//! Subspace pseudo-spectra and direction-of-arrival extraction.
//!
//! The classical estimate of `η(θ) = a(θ)*Π a(θ)` projects onto the `M−K`
//! smallest eigenvectors of `ΣΣ*`. The improved estimate replaces that 0/1
//! weighting by
//!
//! ```text
//! ρ_j = (1/2πi) ∮_{∂R⁻} ĝ(z) / (λ̂_j − z) dz,      η̃(θ) = Σ_j ρ_j |a(θ)* û_j|²,
//! ```
//!
//! where `∂R⁻` is the clockwise boundary of a rectangle that encloses the
//! noise eigenvalues and their secular roots only. Two independent routes
//! compute the weights: residues at the enclosed poles, and composite
//! Gauss–Legendre quadrature along the rectangle.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::model::steering;
use crate::quadrature::{golden_section, panel_rule};
use crate::rmt::{self, ContourSpec, DeterministicInput};
use crate::spectrum::SpectralDecomposition;
use crate::{EstimatorError, C64};

/// Nodes of the circular rule used for each residue.
pub const RESIDUE_NODES: usize = 64;
/// Convergence threshold between successive panel doublings.
pub const QUADRATURE_TOL: f64 = 1e-10;
/// Cap on quadrature nodes per rectangle side.
pub const QUADRATURE_MAX_NODES: usize = 1 << 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMethod {
    Residue,
    Quadrature,
}

/// Per-eigenvector weights of the improved estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub rho: Vec<f64>,
    /// Imaginary parts discarded from each `ρ_j`; zero up to rounding.
    pub imag_residue: Vec<f64>,
    pub method: WeightMethod,
}

impl WeightVector {
    /// Indicator weights of the classical estimator: 1 on the `M−K`
    /// smallest eigenvalues.
    pub fn classical(m: usize, k: usize) -> Self {
        let rho = (0..m).map(|j| if j < m - k { 1.0 } else { 0.0 }).collect();
        WeightVector {
            rho,
            imag_residue: vec![0.0; m],
            method: WeightMethod::Residue,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        WeightVector {
            rho: self.rho.iter().map(|r| r * factor).collect(),
            ..self.clone()
        }
    }
}

/// Distinct real poles of `ĝ(z)/(λ̂_j − z)`: the `λ̂_k` and `ω̂_k`.
fn distinct_poles(spec: &SpectralDecomposition) -> Vec<f64> {
    let mut poles: Vec<f64> = spec.lambdas.iter().chain(&spec.omegas).copied().collect();
    poles.sort_by(f64::total_cmp);
    let tol = 1e-12 * (1.0 + poles.last().copied().unwrap_or(0.0).abs());
    let mut out: Vec<f64> = Vec::with_capacity(poles.len());
    for p in poles {
        match out.last() {
            Some(&q) if p - q <= tol => {}
            _ => out.push(p),
        }
    }
    out
}

fn check_margin(poles: &[f64], contour: &ContourSpec) -> Result<(), EstimatorError> {
    let margin = 3.0 * contour.epsilon;
    for &p in poles {
        let d = contour.boundary_distance(p);
        if d <= margin {
            return Err(EstimatorError::PoleTooClose {
                pole: p,
                distance: d,
                margin,
            });
        }
    }
    Ok(())
}

pub fn improved_weights(
    spec: &SpectralDecomposition,
    contour: &ContourSpec,
    method: WeightMethod,
) -> Result<WeightVector, EstimatorError> {
    let poles = distinct_poles(spec);
    check_margin(&poles, contour)?;
    let weights = match method {
        WeightMethod::Residue => residue_weights(spec, contour, &poles),
        WeightMethod::Quadrature => quadrature_weights(spec, contour)?,
    };
    let (rho, imag_residue) = weights.iter().map(|w| (w.re, w.im)).unzip();
    Ok(WeightVector {
        rho,
        imag_residue,
        method,
    })
}

/// `ρ_j = −Σ_{p inside} Res_p[ĝ(z)/(λ̂_j − z)]`, each residue by the
/// trapezoidal rule on a small circle around `p`.
fn residue_weights(
    spec: &SpectralDecomposition,
    contour: &ContourSpec,
    poles: &[f64],
) -> Vec<C64> {
    let m = spec.dim();
    let mut acc = vec![C64::new(0.0, 0.0); m];
    for (i, &p) in poles.iter().enumerate() {
        if !contour.encloses(p) {
            continue;
        }
        let left = i.checked_sub(1).map_or(f64::INFINITY, |l| p - poles[l]);
        let right = poles.get(i + 1).map_or(f64::INFINITY, |&r| r - p);
        let radius = left.min(right).min(3.0 * contour.epsilon) / 4.0;
        for n in 0..RESIDUE_NODES {
            let t = 2.0 * PI * (n as f64 + 0.5) / RESIDUE_NODES as f64;
            let offset = C64::from_polar(radius, t);
            let z = p + offset;
            let g = spec.g_hat_unchecked(z) * offset / RESIDUE_NODES as f64;
            for (a, &l) in acc.iter_mut().zip(&spec.lambdas) {
                *a += g / (l - z);
            }
        }
    }
    acc.iter().map(|a| -a).collect()
}

/// Points and weights of a composite Gauss–Legendre rule along the
/// counter-clockwise rectangle boundary, `panels` panels per side.
fn rectangle_rule(contour: &ContourSpec, panels: usize) -> Vec<(C64, C64)> {
    let (x, w) = panel_rule();
    let corners = [
        C64::new(contour.left(), -contour.y),
        C64::new(contour.right(), -contour.y),
        C64::new(contour.right(), contour.y),
        C64::new(contour.left(), contour.y),
    ];
    let mut out = Vec::with_capacity(4 * panels * x.len());
    for side in 0..4 {
        let a = corners[side];
        let b = corners[(side + 1) % 4];
        let step = (b - a) / panels as f64;
        for p in 0..panels {
            let start = a + step * p as f64;
            for (xi, wi) in x.iter().zip(w) {
                let z = start + step * (0.5 * (xi + 1.0));
                out.push((z, step * (0.5 * wi)));
            }
        }
    }
    out
}

/// Integrate `f(z, weight, accumulator)` around the rectangle with panel
/// doubling until the accumulated vector settles to `QUADRATURE_TOL`.
fn integrate_rectangle<F>(contour: &ContourSpec, len: usize, f: F) -> Result<Vec<C64>, EstimatorError>
where
    F: Fn(C64, C64, &mut [C64]) -> Result<(), EstimatorError> + Sync,
{
    let mut panels = 4;
    let mut previous: Option<Vec<C64>> = None;
    let mut last_change = f64::INFINITY;
    while panels * panel_rule().0.len() <= QUADRATURE_MAX_NODES {
        let rule = rectangle_rule(contour, panels);
        let partials: Vec<Vec<C64>> = rule
            .par_chunks(256)
            .map(|chunk| {
                let mut acc = vec![C64::new(0.0, 0.0); len];
                for &(z, w) in chunk {
                    f(z, w, &mut acc)?;
                }
                Ok(acc)
            })
            .collect::<Result<_, EstimatorError>>()?;
        let mut total = vec![C64::new(0.0, 0.0); len];
        for part in &partials {
            for (t, v) in total.iter_mut().zip(part) {
                *t += v;
            }
        }
        // counter-clockwise integral → clockwise, divided by 2πi
        let scale = C64::new(0.0, -1.0 / (2.0 * PI));
        for t in total.iter_mut() {
            *t = -*t * scale;
        }
        if let Some(prev) = &previous {
            last_change = total
                .iter()
                .zip(prev)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if last_change < QUADRATURE_TOL {
                return Ok(total);
            }
        }
        previous = Some(total);
        panels *= 2;
    }
    Err(EstimatorError::QuadratureNoConvergence { last_change })
}

fn quadrature_weights(
    spec: &SpectralDecomposition,
    contour: &ContourSpec,
) -> Result<Vec<C64>, EstimatorError> {
    integrate_rectangle(contour, spec.dim(), |z, w, acc| {
        let g = spec.g_hat_unchecked(z) * w;
        for (a, &l) in acc.iter_mut().zip(&spec.lambdas) {
            *a += g / (l - z);
        }
        Ok(())
    })
}

/// Weights of the deterministic projector identity: the same contour
/// integral with `(m̂, λ̂)` replaced by `(m, λ(BB*))`, i.e.
/// `(1/2πi) ∮⁻ w′(z) / (λ_k − w(z)) dz` for each eigenvalue of `BB*`.
/// Separated inputs give 1 on the zero eigenvalues and 0 elsewhere.
pub fn deterministic_weights(
    input: &DeterministicInput,
    contour: &ContourSpec,
) -> Result<Vec<f64>, EstimatorError> {
    let lambdas = &input.true_lambdas;
    let out = integrate_rectangle(contour, lambdas.len(), |z, w, acc| {
        let m = rmt::solve_canonical(input, z)?;
        let dm = rmt::canonical_derivative(input, z, m);
        let wz = rmt::w_from_m(input, z, m);
        let dw = rmt::w_prime(input, z, m, dm) * w;
        for (a, &l) in acc.iter_mut().zip(lambdas) {
            *a += dw / (l - wz);
        }
        Ok(())
    })?;
    Ok(out.iter().map(|v| v.re).collect())
}

/// `|a(θ)* û_j|²` for every eigenvector, in eigenvalue order.
pub fn steering_projections(spec: &SpectralDecomposition, theta: f64) -> Vec<f64> {
    let a = steering(theta, spec.dim());
    spec.vectors
        .column_iter()
        .map(|u| a.dotc(&u).norm_sqr())
        .collect()
}

/// `η̂(θ) = Σ_{j ≤ M−K} |a(θ)* û_j|²`.
pub fn classical_eta(spec: &SpectralDecomposition, k: usize, theta: f64) -> f64 {
    let m = spec.dim();
    steering_projections(spec, theta)[..m - k].iter().sum()
}

/// `η̃(θ) = Σ_j ρ_j |a(θ)* û_j|²`.
pub fn improved_eta(weights: &WeightVector, spec: &SpectralDecomposition, theta: f64) -> f64 {
    steering_projections(spec, theta)
        .iter()
        .zip(&weights.rho)
        .map(|(p, r)| p * r)
        .sum()
}

/// Evaluation angles of a pseudo-spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    /// `{−π + 2πk/G : k = 0, …, G−1}`.
    Uniform { size: usize },
    /// Arbitrary strictly increasing angles.
    Explicit(Vec<f64>),
}

impl Grid {
    /// The default grid for `N` snapshots: `N²` points capped at `cap`.
    pub fn for_snapshots(n: usize, cap: usize) -> Self {
        Grid::Uniform {
            size: (n * n).min(cap).max(1),
        }
    }

    pub fn angles(&self) -> Vec<f64> {
        match self {
            Grid::Uniform { size } => (0..*size)
                .map(|k| -PI + 2.0 * PI * k as f64 / *size as f64)
                .collect(),
            Grid::Explicit(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoSpectrum {
    pub grid: Vec<f64>,
    pub values_classical: Vec<f64>,
    pub values_improved: Vec<f64>,
    /// The grid samples the full circle uniformly.
    pub periodic: bool,
}

/// `|a(θ_g)* û_j|²` on the uniform grid for one eigenvector, by one FFT of
/// the alternating-sign eigenvector.
fn uniform_projections(
    u: &[C64],
    size: usize,
    fft: &Arc<dyn rustfft::Fft<f64>>,
    buffer: &mut [C64],
) {
    let scale = 1.0 / (u.len() as f64).sqrt();
    buffer.iter_mut().for_each(|b| *b = C64::new(0.0, 0.0));
    for (m, &v) in u.iter().enumerate() {
        let sign = if m % 2 == 0 { scale } else { -scale };
        buffer[m % size] += v * sign;
    }
    fft.process(buffer);
}

pub fn pseudo_spectrum(
    spec: &SpectralDecomposition,
    weights: &WeightVector,
    k: usize,
    grid: &Grid,
) -> PseudoSpectrum {
    let m = spec.dim();
    match grid {
        Grid::Uniform { size } => {
            let size = *size;
            let fft = FftPlanner::new().plan_fft_forward(size);
            let mut classical = vec![0.0; size];
            let mut improved = vec![0.0; size];
            let mut buffer = vec![C64::new(0.0, 0.0); size];
            for j in 0..m {
                let u: Vec<C64> = spec.vectors.column(j).iter().copied().collect();
                uniform_projections(&u, size, &fft, &mut buffer);
                let rho = weights.rho[j];
                let noise = j < m - k;
                for (g, b) in buffer.iter().enumerate() {
                    let p = b.norm_sqr();
                    improved[g] += rho * p;
                    if noise {
                        classical[g] += p;
                    }
                }
            }
            PseudoSpectrum {
                grid: grid.angles(),
                values_classical: classical,
                values_improved: improved,
                periodic: true,
            }
        }
        Grid::Explicit(angles) => {
            let values: Vec<(f64, f64)> = angles
                .par_iter()
                .map(|&t| {
                    let proj = steering_projections(spec, t);
                    let c: f64 = proj[..m - k].iter().sum();
                    let i: f64 = proj.iter().zip(&weights.rho).map(|(p, r)| p * r).sum();
                    (c, i)
                })
                .collect();
            let (values_classical, values_improved) = values.into_iter().unzip();
            PseudoSpectrum {
                grid: angles.clone(),
                values_classical,
                values_improved,
                periodic: false,
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoAEstimates {
    pub intervals: Vec<(f64, f64)>,
    pub estimates: Vec<f64>,
    /// `|η̃|` at each estimate.
    pub residuals: Vec<f64>,
}

/// Coarse-scan resolution of [`extract_doas_intervals`].
pub const INTERVAL_SCAN_POINTS: usize = 512;
/// Angle tolerance of the golden-section refinement.
pub const ANGLE_TOL: f64 = 1e-10;

fn minimize_on_interval(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let step = (b - a) / INTERVAL_SCAN_POINTS as f64;
    let mut best = (0usize, f64::INFINITY);
    for i in 0..=INTERVAL_SCAN_POINTS {
        let v = f(a + step * i as f64);
        if v < best.1 {
            best = (i, v);
        }
    }
    let center = a + step * best.0 as f64;
    let lo = (center - step).max(a);
    let hi = (center + step).min(b);
    let (x, v) = golden_section(f, lo, hi, ANGLE_TOL);
    if v <= best.1 {
        (x, v)
    } else {
        (center, best.1)
    }
}

/// What [`extract_doas_intervals_with`] minimizes on each interval.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoaObjective {
    /// `|η(θ)|`. When the estimate dips below zero this lands on one of
    /// the two zero crossings around the dip instead of its bottom.
    Modulus,
    /// `η(θ)` itself.
    Signed,
}

/// `θ̃_k = argmin_{θ ∈ I_k} |η(θ)|` for each interval. Ties on the coarse
/// scan resolve to the smallest angle.
pub fn extract_doas_intervals(
    evaluator: &dyn Fn(f64) -> f64,
    intervals: &[(f64, f64)],
) -> Result<DoAEstimates, EstimatorError> {
    extract_doas_intervals_with(evaluator, intervals, DoaObjective::Modulus)
}

pub fn extract_doas_intervals_with(
    evaluator: &dyn Fn(f64) -> f64,
    intervals: &[(f64, f64)],
    objective: DoaObjective,
) -> Result<DoAEstimates, EstimatorError> {
    let objective = |t: f64| match objective {
        DoaObjective::Modulus => evaluator(t).abs(),
        DoaObjective::Signed => evaluator(t),
    };
    let mut estimates = Vec::with_capacity(intervals.len());
    let mut residuals = Vec::with_capacity(intervals.len());
    for &(a, b) in intervals {
        if a.is_nan() || b.is_nan() || b <= a {
            return Err(EstimatorError::EmptyInterval(a, b));
        }
        let (x, _) = minimize_on_interval(&objective, a, b);
        estimates.push(x);
        residuals.push(evaluator(x).abs());
    }
    Ok(DoAEstimates {
        intervals: intervals.to_vec(),
        estimates,
        residuals,
    })
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// The `K` deepest strict local minima of the improved pseudo-spectrum,
/// at least `min_spacing` apart, each refined by golden-section search in
/// its bracketing grid cells with `refine`.
pub fn extract_doas_topk(
    pspec: &PseudoSpectrum,
    k: usize,
    min_spacing: f64,
    refine: &dyn Fn(f64) -> f64,
) -> Result<DoAEstimates, EstimatorError> {
    let g = pspec.grid.len();
    if k == 0 || g < 2 * k + 1 {
        return Err(EstimatorError::InvalidInput(format!(
            "need K ≥ 1 and at least 2K+1 grid points, got K={k}, {g} points"
        )));
    }
    let v = &pspec.values_improved;
    let mut minima: Vec<usize> = (0..g)
        .filter(|&i| {
            let (prev, next) = if pspec.periodic {
                ((i + g - 1) % g, (i + 1) % g)
            } else if i == 0 || i == g - 1 {
                return false;
            } else {
                (i - 1, i + 1)
            };
            v[i] < v[prev] && v[i] < v[next]
        })
        .collect();
    minima.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));

    let mut picked: Vec<usize> = Vec::with_capacity(k);
    for i in minima {
        if picked
            .iter()
            .all(|&j| circular_distance(pspec.grid[i], pspec.grid[j]) >= min_spacing)
        {
            picked.push(i);
            if picked.len() == k {
                break;
            }
        }
    }
    if picked.len() < k {
        return Err(EstimatorError::TooFewMinima {
            found: picked.len(),
            wanted: k,
        });
    }
    picked.sort_by(|&a, &b| pspec.grid[a].total_cmp(&pspec.grid[b]));

    let mut out = DoAEstimates {
        intervals: Vec::with_capacity(k),
        estimates: Vec::with_capacity(k),
        residuals: Vec::with_capacity(k),
    };
    for i in picked {
        let center = pspec.grid[i];
        let (lo, hi) = if pspec.periodic {
            let step = 2.0 * PI / g as f64;
            (center - step, center + step)
        } else {
            (pspec.grid[i - 1], pspec.grid[i + 1])
        };
        let (x, val) = golden_section(refine, lo, hi, ANGLE_TOL);
        let (x, val) = if val <= v[i] { (x, val) } else { (center, v[i]) };
        out.intervals.push((lo, hi));
        out.estimates.push(x);
        out.residuals.push(val.abs());
    }
    Ok(out)
}

/// Plug-in noise level `(1/(M−K)) Σ_{k ≤ M−K} λ̂_k`: a heuristic for data
/// with unknown `σ²`.
pub fn estimate_sigma2(spec: &SpectralDecomposition, k: usize) -> f64 {
    let noise = &spec.lambdas[..spec.dim() - k];
    noise.iter().sum::<f64>() / noise.len() as f64
}
