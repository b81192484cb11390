//! Deterministic equivalents of the information-plus-noise spectrum.
//!
//! Everything here depends only on `σ²`, `c = M/N` and the eigenvalues of
//! `BB*`. The Stieltjes transform `m(z)` of the limiting eigenvalue
//! distribution solves the canonical equation
//!
//! ```text
//! m = (1/M) Σ_k 1 / (−z b + σ²(1−c) + λ_k / b),    b = 1 + σ²c m,
//! ```
//!
//! and the support of that distribution is read off the non-negative local
//! extrema of
//!
//! ```text
//! φ(w) = w (1 − σ²c f(w))² + σ²(1−c) (1 − σ²c f(w)),   f(w) = (1/M) Σ_k 1/(λ_k − w).
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::Scenario;
use crate::{RmtError, C64};

/// Damping factor of the fixed-point iteration.
const DAMPING: f64 = 0.5;
const FIXED_POINT_CAP: usize = 10_000;
const NEWTON_CAP: usize = 60;
/// Spacing factor of the continuation in `Im z`.
const CONTINUATION_RATIO: f64 = 0.5;
/// Relative residual accepted for a canonical-equation solution.
const RESIDUAL_TOL: f64 = 1e-12;

/// Eigenvalues of `BB*` with the noise level and aspect ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDeterministicInput")]
pub struct DeterministicInput {
    /// Ascending; values within `1e-12·(1 + λ_max)` of zero are stored as 0.
    pub true_lambdas: Vec<f64>,
    pub sigma2: f64,
    pub c: f64,
    #[serde(skip)]
    atoms: Vec<Atom>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDeterministicInput {
    true_lambdas: Vec<f64>,
    sigma2: f64,
    c: f64,
}

impl TryFrom<RawDeterministicInput> for DeterministicInput {
    type Error = RmtError;

    fn try_from(raw: RawDeterministicInput) -> Result<Self, RmtError> {
        DeterministicInput::new(raw.true_lambdas, raw.sigma2, raw.c)
    }
}

/// A distinct eigenvalue with its mass `multiplicity / M`.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Atom {
    value: f64,
    mass: f64,
}

impl DeterministicInput {
    pub fn new(mut true_lambdas: Vec<f64>, sigma2: f64, c: f64) -> Result<Self, RmtError> {
        if true_lambdas.is_empty() {
            return Err(RmtError::InvalidInput("no eigenvalues".into()));
        }
        if !(c > 0.0 && c < 1.0) {
            return Err(RmtError::InvalidInput(format!("need 0 < c < 1, got {c}")));
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(RmtError::InvalidInput(format!(
                "noise variance must be finite and non-negative, got {sigma2}"
            )));
        }
        if true_lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(RmtError::InvalidInput(
                "eigenvalues must be finite and non-negative".into(),
            ));
        }
        true_lambdas.sort_by(f64::total_cmp);
        let top = *true_lambdas.last().expect("non-empty");
        let zero_tol = 1e-12 * (1.0 + top);
        for l in true_lambdas.iter_mut() {
            if *l <= zero_tol {
                *l = 0.0;
            }
        }
        if true_lambdas[0] != 0.0 {
            return Err(RmtError::InvalidInput(
                "BB* must have a non-trivial kernel (K < M)".into(),
            ));
        }
        let mut input = DeterministicInput {
            true_lambdas,
            sigma2,
            c,
            atoms: Vec::new(),
        };
        input.atoms = input.group_atoms();
        Ok(input)
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self, RmtError> {
        Self::new(scenario.bb_eigenvalues.clone(), scenario.sigma2, scenario.c())
    }

    fn group_atoms(&self) -> Vec<Atom> {
        let m = self.true_lambdas.len() as f64;
        let tol = 1e-12 * (1.0 + self.lambda_max());
        let mut atoms: Vec<Atom> = Vec::new();
        for &l in &self.true_lambdas {
            match atoms.last_mut() {
                Some(a) if l - a.value <= tol => a.mass += 1.0 / m,
                _ => atoms.push(Atom {
                    value: l,
                    mass: 1.0 / m,
                }),
            }
        }
        atoms
    }

    fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.true_lambdas.len()
    }

    /// Number of non-zero eigenvalues.
    pub fn k(&self) -> usize {
        self.true_lambdas.iter().filter(|&&l| l > 0.0).count()
    }

    pub fn lambda_max(&self) -> f64 {
        *self.true_lambdas.last().expect("non-empty")
    }
}

/// Right-hand side of the canonical equation and its partial derivatives.
struct CanonicalTerms {
    value: C64,
    d_m: C64,
    d_z: C64,
}

fn canonical_terms(input: &DeterministicInput, z: C64, m: C64) -> CanonicalTerms {
    let s = input.sigma2;
    let c = input.c;
    let b = 1.0 + s * c * m;
    let base = -z * b + s * (1.0 - c);
    let mut value = C64::new(0.0, 0.0);
    let mut d_m = C64::new(0.0, 0.0);
    let mut d_z = C64::new(0.0, 0.0);
    for atom in input.atoms() {
        let inv = (base + atom.value / b).inv();
        let inv2 = inv * inv;
        value += atom.mass * inv;
        d_m += atom.mass * s * c * (z + atom.value / (b * b)) * inv2;
        d_z += atom.mass * b * inv2;
    }
    CanonicalTerms { value, d_m, d_z }
}

fn relative_residual(input: &DeterministicInput, z: C64, m: C64) -> f64 {
    (m - canonical_terms(input, z, m).value).norm() / m.norm().max(f64::MIN_POSITIVE)
}

fn newton(input: &DeterministicInput, z: C64, start: C64) -> Option<C64> {
    let mut m = start;
    for _ in 0..NEWTON_CAP {
        let t = canonical_terms(input, z, m);
        let step = (m - t.value) / (1.0 - t.d_m);
        if !step.re.is_finite() || !step.im.is_finite() {
            return None;
        }
        m -= step;
        if step.norm() <= 1e-15 * (1.0 + m.norm()) {
            return Some(m);
        }
    }
    (relative_residual(input, z, m) <= RESIDUAL_TOL).then_some(m)
}

fn damped_fixed_point(input: &DeterministicInput, z: C64, start: C64) -> C64 {
    let mut m = start;
    for _ in 0..FIXED_POINT_CAP {
        let next = (1.0 - DAMPING) * m + DAMPING * canonical_terms(input, z, m).value;
        let step = (next - m).norm();
        m = next;
        if step <= 1e-13 * (1.0 + m.norm()) {
            break;
        }
    }
    m
}

fn on_branch(input: &DeterministicInput, z: C64, m: C64) -> bool {
    let b = 1.0 + input.sigma2 * input.c * m;
    (m.im * z.im > 0.0 || z.im == 0.0) && b.re >= 0.5 - 1e-9
}

/// One continuation level: Newton from the warm start, falling back to the
/// damped iteration when Newton leaves the Stieltjes branch.
fn solve_level(input: &DeterministicInput, z: C64, warm: C64) -> Option<C64> {
    if let Some(m) = newton(input, z, warm) {
        if on_branch(input, z, m) {
            return Some(m);
        }
    }
    let m = damped_fixed_point(input, z, warm);
    let m = newton(input, z, m).unwrap_or(m);
    (on_branch(input, z, m) && relative_residual(input, z, m) <= RESIDUAL_TOL).then_some(m)
}

fn no_convergence(z: C64) -> RmtError {
    RmtError::NoConvergence { z: format!("{z}") }
}

/// Stieltjes transform `m(z)` of the deterministic equivalent, `Im z ≠ 0`.
///
/// Solved by continuation in `Im z` from `max(1, 2|z|)` down to the target,
/// each level warm-started from the previous one.
pub fn solve_canonical(input: &DeterministicInput, z: C64) -> Result<C64, RmtError> {
    if z.im == 0.0 || !z.re.is_finite() || !z.im.is_finite() {
        return Err(RmtError::InvalidInput(format!(
            "solve_canonical needs a finite z off the real axis, got {z}"
        )));
    }
    if z.im < 0.0 {
        return solve_canonical(input, z.conj()).map(|m| m.conj());
    }
    let target = z.im;
    let mut y = target.max(1.0_f64.max(2.0 * z.norm()));
    let mut m = -C64::new(z.re, y).inv();
    loop {
        let zy = C64::new(z.re, y);
        m = solve_level(input, zy, m).ok_or_else(|| no_convergence(zy))?;
        if y == target {
            break;
        }
        y = (y * CONTINUATION_RATIO).max(target);
    }
    Ok(m)
}

/// Boundary value `m(x) = lim_{h↓0} m(x + ih)`.
pub fn limit_to_real(input: &DeterministicInput, x: f64) -> Result<C64, RmtError> {
    if !x.is_finite() {
        return Err(RmtError::InvalidInput(format!("non-finite x = {x}")));
    }
    let mut h = 1.0;
    let mut m = solve_canonical(input, C64::new(x, h))?;
    while h > 1e-9 {
        h = (h * 0.25).max(1e-9);
        let z = C64::new(x, h);
        m = solve_level(input, z, m).ok_or_else(|| no_convergence(z))?;
    }
    // Polish on the axis itself; near a support edge Newton stalls and the
    // h = 1e-9 value is kept.
    let z = C64::new(x, 0.0);
    if let Some(polished) = newton(input, z, m) {
        let b = 1.0 + input.sigma2 * input.c * polished;
        if polished.im >= -1e-12
            && b.re >= 0.5 - 1e-9
            && (polished - m).norm() < 1e-2 * (1.0 + m.norm())
        {
            m = polished;
        }
    }
    Ok(C64::new(m.re, m.im.max(0.0)))
}

fn m_anywhere(input: &DeterministicInput, z: C64) -> Result<C64, RmtError> {
    if z.im == 0.0 {
        limit_to_real(input, z.re)
    } else {
        solve_canonical(input, z)
    }
}

/// `dm/dz` at a solution `m` of the canonical equation.
pub fn canonical_derivative(input: &DeterministicInput, z: C64, m: C64) -> C64 {
    let t = canonical_terms(input, z, m);
    t.d_z / (1.0 - t.d_m)
}

/// `T(z)` in the eigenbasis of `BB*` (diagonal, ordered like `true_lambdas`).
pub fn t_matrix(input: &DeterministicInput, z: C64, m: C64) -> DMatrix<C64> {
    let s = input.sigma2;
    let c = input.c;
    let b = 1.0 + s * c * m;
    let base = -z * b + s * (1.0 - c);
    let diag: Vec<C64> = input
        .true_lambdas
        .iter()
        .map(|&l| (base + l / b).inv())
        .collect();
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
}

/// `w(z) = z b² − σ²(1−c) b` with `b = 1 + σ²c m(z)`; real `z` uses the
/// boundary value of `m`.
pub fn w_of_z(input: &DeterministicInput, z: C64) -> Result<C64, RmtError> {
    let m = m_anywhere(input, z)?;
    Ok(w_from_m(input, z, m))
}

pub(crate) fn w_from_m(input: &DeterministicInput, z: C64, m: C64) -> C64 {
    let b = 1.0 + input.sigma2 * input.c * m;
    z * b * b - input.sigma2 * (1.0 - input.c) * b
}

/// `w′(z)` given `m(z)` and `m′(z)`.
pub(crate) fn w_prime(input: &DeterministicInput, z: C64, m: C64, dm: C64) -> C64 {
    let sc = input.sigma2 * input.c;
    let b = 1.0 + sc * m;
    let db = sc * dm;
    b * b + 2.0 * z * b * db - input.sigma2 * (1.0 - input.c) * db
}

fn f_and_derivative(input: &DeterministicInput, w: f64) -> Result<(f64, f64), RmtError> {
    let tol = 1e-14 * (1.0 + input.lambda_max());
    let mut f = 0.0;
    let mut df = 0.0;
    for atom in input.atoms() {
        let d = atom.value - w;
        if d.abs() < tol {
            return Err(RmtError::PoleHit(w));
        }
        f += atom.mass / d;
        df += atom.mass / (d * d);
    }
    Ok((f, df))
}

/// `φ(w)`, real and finite off the eigenvalues of `BB*`.
pub fn phi(input: &DeterministicInput, w: f64) -> Result<f64, RmtError> {
    let (f, _) = f_and_derivative(input, w)?;
    let u = 1.0 - input.sigma2 * input.c * f;
    Ok(w * u * u + input.sigma2 * (1.0 - input.c) * u)
}

/// `φ′(w) = u² − σ²c f′(w) (2wu + σ²(1−c))` with `u = 1 − σ²c f(w)`.
pub fn phi_prime(input: &DeterministicInput, w: f64) -> Result<f64, RmtError> {
    let (f, df) = f_and_derivative(input, w)?;
    let sc = input.sigma2 * input.c;
    let u = 1.0 - sc * f;
    Ok(u * u - sc * df * (2.0 * w * u + input.sigma2 * (1.0 - input.c)))
}

/// One connected component `[x⁻, x⁺]` of the support and the preimages
/// `w⁻ < w⁺` of its edges under `φ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub w_minus: f64,
    pub w_plus: f64,
    pub x_minus: f64,
    pub x_plus: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportProfile {
    pub clusters: Vec<Cluster>,
    /// Cluster index (0-based) of each entry of `eigenvalues`.
    pub association: Vec<usize>,
    /// The eigenvalues of `BB*` the profile was computed from, ascending.
    pub eigenvalues: Vec<f64>,
}

impl SupportProfile {
    pub fn q(&self) -> usize {
        self.clusters.len()
    }

    /// Whether `x` lies in the support.
    pub fn contains(&self, x: f64) -> bool {
        self.clusters.iter().any(|c| x >= c.x_minus && x <= c.x_plus)
    }

    /// Distance from a complex point to the support.
    pub fn distance(&self, z: C64) -> f64 {
        self.clusters
            .iter()
            .map(|c| {
                let dx = if z.re < c.x_minus {
                    c.x_minus - z.re
                } else if z.re > c.x_plus {
                    z.re - c.x_plus
                } else {
                    0.0
                };
                dx.hypot(z.im)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ExtremumKind {
    Max,
    Min,
}

#[derive(Clone, Copy, Debug)]
struct Extremum {
    w: f64,
    value: f64,
    kind: ExtremumKind,
}

const BASE_SCAN_POINTS: usize = 512;
const SCAN_RETRIES: usize = 3;

/// Offsets in `(0, 1)` clustered geometrically towards 0.
fn graded_towards_zero(points: usize) -> Vec<f64> {
    let lo = 1e-12_f64.ln();
    (0..points)
        .map(|i| (lo * (1.0 - i as f64 / (points - 1) as f64)).exp())
        .collect()
}

/// Offsets in `(0, 1)` clustered towards both ends.
fn graded_two_sided(points: usize) -> Vec<f64> {
    let half = graded_towards_zero(points / 2);
    let mut out: Vec<f64> = half.iter().map(|t| 0.5 * t).collect();
    out.extend(half.iter().rev().map(|t| 1.0 - 0.5 * t));
    out.dedup();
    out
}

fn bisect_critical(input: &DeterministicInput, mut lo: f64, mut hi: f64, d_lo: f64) -> f64 {
    let rising = d_lo > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || hi - lo <= 1e-15 * mid.abs() {
            break;
        }
        let d = phi_prime(input, mid).unwrap_or(if rising { 1.0 } else { -1.0 });
        if (d > 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn scan_points(
    input: &DeterministicInput,
    grid: &[f64],
    out: &mut Vec<Extremum>,
) -> Result<(), RmtError> {
    let mut prev: Option<(f64, f64)> = None;
    for &w in grid {
        let d = match phi_prime(input, w) {
            Ok(d) if d.is_finite() => d,
            _ => continue,
        };
        if let Some((pw, pd)) = prev {
            if (pd > 0.0) != (d > 0.0) && pd != 0.0 {
                let root = bisect_critical(input, pw, w, pd);
                let kind = if pd > 0.0 {
                    ExtremumKind::Max
                } else {
                    ExtremumKind::Min
                };
                out.push(Extremum {
                    w: root,
                    value: phi(input, root)?,
                    kind,
                });
            }
        }
        prev = Some((w, d));
    }
    Ok(())
}

fn collect_extrema(input: &DeterministicInput, points: usize) -> Result<Vec<Extremum>, RmtError> {
    let s = input.sigma2;
    let sqrt_c = input.c.sqrt();
    let atoms: Vec<f64> = input.atoms().iter().map(|a| a.value).collect();
    let mut extrema = Vec::new();

    // (−W, 0); widen until φ is increasing at the far end.
    let mut width = 10.0 * s * sqrt_c;
    for _ in 0..200 {
        if phi_prime(input, -width)? > 0.0 {
            break;
        }
        width *= 2.0;
    }
    let grid: Vec<f64> = graded_towards_zero(points)
        .into_iter()
        .rev()
        .map(|t| -width * t)
        .collect();
    scan_points(input, &grid, &mut extrema)?;

    for pair in atoms.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let grid: Vec<f64> = graded_two_sided(points)
            .into_iter()
            .map(|t| a + (b - a) * t)
            .filter(|&w| w > a && w < b)
            .collect();
        scan_points(input, &grid, &mut extrema)?;
    }

    let top = *atoms.last().expect("non-empty");
    let mut reach = s * (1.0 + sqrt_c).powi(2) + 1.0;
    for _ in 0..200 {
        if phi_prime(input, top + reach)? > 0.0 {
            break;
        }
        reach *= 2.0;
    }
    let grid: Vec<f64> = graded_towards_zero(points)
        .into_iter()
        .map(|t| top + reach * t)
        .filter(|&w| w > top)
        .collect();
    scan_points(input, &grid, &mut extrema)?;
    Ok(extrema)
}

fn assemble_profile(
    input: &DeterministicInput,
    extrema: &[Extremum],
) -> Result<SupportProfile, String> {
    let floor = -1e-12 * (1.0 + input.sigma2 + input.lambda_max());
    let mut kept: Vec<Extremum> = extrema.iter().copied().filter(|e| e.value >= floor).collect();
    kept.sort_by(|a, b| a.w.total_cmp(&b.w));
    if kept.is_empty() || !kept.len().is_multiple_of(2) {
        return Err(format!("{} non-negative extrema retained", kept.len()));
    }
    let mut clusters = Vec::with_capacity(kept.len() / 2);
    for pair in kept.chunks(2) {
        let (lo, hi) = (pair[0], pair[1]);
        if lo.kind != ExtremumKind::Max || hi.kind != ExtremumKind::Min {
            return Err(format!("extrema at {} and {} do not alternate", lo.w, hi.w));
        }
        clusters.push(Cluster {
            w_minus: lo.w,
            w_plus: hi.w,
            x_minus: lo.value.max(0.0),
            x_plus: hi.value.max(0.0),
        });
    }
    if !(clusters[0].w_minus < 0.0 && clusters[0].w_plus > 0.0) {
        return Err("first cluster preimages do not straddle zero".into());
    }
    for pair in clusters.windows(2) {
        if pair[1].w_minus < pair[0].w_plus || pair[1].x_minus < pair[0].x_plus {
            return Err("clusters are not ordered".into());
        }
    }
    if clusters.iter().any(|c| c.x_minus >= c.x_plus) {
        return Err("empty cluster".into());
    }
    let mut association = Vec::with_capacity(input.dim());
    for &l in &input.true_lambdas {
        let q = clusters
            .iter()
            .position(|c| l > c.w_minus && l < c.w_plus)
            .ok_or_else(|| format!("eigenvalue {l} is not associated to any cluster"))?;
        association.push(q);
    }
    Ok(SupportProfile {
        clusters,
        association,
        eigenvalues: input.true_lambdas.clone(),
    })
}

/// Support `∪ [x_q⁻, x_q⁺]` from the non-negative local extrema of `φ`.
///
/// `φ′` is scanned on graded grids between consecutive distinct eigenvalues
/// (its poles), left of zero and right of the largest eigenvalue; sign
/// changes are refined by bisection. The grid is doubled up to three times
/// before giving up.
pub fn find_support(input: &DeterministicInput) -> Result<SupportProfile, RmtError> {
    if input.sigma2 <= 0.0 {
        return Err(RmtError::SupportSearchFailed(
            "noise variance is zero; φ has no extrema".into(),
        ));
    }
    let mut points = BASE_SCAN_POINTS;
    let mut last_reason = String::new();
    for _ in 0..=SCAN_RETRIES {
        let extrema = collect_extrema(input, points)?;
        match assemble_profile(input, &extrema) {
            Ok(profile) => return Ok(profile),
            Err(reason) => last_reason = reason,
        }
        points *= 2;
    }
    Err(RmtError::SupportSearchFailed(last_reason))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    /// No non-zero eigenvalue of `BB*` is associated to the first cluster.
    pub signal_separated: bool,
    /// `x₁⁻ > 0` and, with sources, `x₁⁺ < x₂⁻`.
    pub clusters_separated: bool,
    /// `λ_{M−K+1} − w₁⁺`; absent without sources.
    pub signal_margin: Option<f64>,
    /// `x₁⁻`.
    pub lower_edge_margin: f64,
    /// `x₂⁻ − x₁⁺`; absent with a single cluster.
    pub gap_margin: Option<f64>,
}

impl SeparationReport {
    pub fn holds(&self) -> bool {
        self.signal_separated && self.clusters_separated
    }
}

pub fn check_separation(
    profile: &SupportProfile,
    input: &DeterministicInput,
    k: usize,
) -> SeparationReport {
    let first = profile.clusters[0];
    let m = input.dim();
    let signal_margin = (k > 0).then(|| input.true_lambdas[m - k] - first.w_plus);
    let gap_margin = profile.clusters.get(1).map(|c| c.x_minus - first.x_plus);
    let signal_separated = signal_margin.is_none_or(|d| d > 0.0);
    let clusters_separated =
        first.x_minus > 0.0 && (k == 0 || gap_margin.is_some_and(|g| g > 0.0));
    SeparationReport {
        signal_separated,
        clusters_separated,
        signal_margin,
        lower_edge_margin: first.x_minus,
        gap_margin,
    }
}

/// Relative placement of the thresholds between the support edges.
pub const CONTOUR_GAMMA: f64 = 0.25;

/// Thresholds `t₁⁻ < t₁⁺ < t₂⁻ < t₂⁺` around the noise and signal clusters,
/// the margin `ε` and the half-height `y` of the integration rectangle
/// `[t₁⁻ − 3ε, t₁⁺ + 3ε] × [−y, y]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub t1_minus: f64,
    pub t1_plus: f64,
    pub t2_minus: f64,
    pub t2_plus: f64,
    pub epsilon: f64,
    pub y: f64,
}

impl ContourSpec {
    /// Contour from user-supplied thresholds; only their ordering is required.
    pub fn from_thresholds(
        t1_minus: f64,
        t1_plus: f64,
        t2_minus: f64,
        t2_plus: f64,
    ) -> Result<Self, RmtError> {
        let ordered = t1_minus < t1_plus && t1_plus < t2_minus && t2_minus < t2_plus;
        if !ordered || ![t1_minus, t1_plus, t2_minus, t2_plus].iter().all(|t| t.is_finite()) {
            return Err(RmtError::InvalidInput(format!(
                "thresholds must be finite and increasing, got {t1_minus}, {t1_plus}, {t2_minus}, {t2_plus}"
            )));
        }
        let epsilon = (t1_plus - t1_minus).min(t2_minus - t1_plus) / 16.0;
        let y = (3.5 * epsilon).max((t1_plus - t1_minus) / 2.0);
        Ok(ContourSpec {
            t1_minus,
            t1_plus,
            t2_minus,
            t2_plus,
            epsilon,
            y,
        })
    }

    /// Left edge `t₁⁻ − 3ε` of the rectangle.
    pub fn left(&self) -> f64 {
        self.t1_minus - 3.0 * self.epsilon
    }

    /// Right edge `t₁⁺ + 3ε` of the rectangle.
    pub fn right(&self) -> f64 {
        self.t1_plus + 3.0 * self.epsilon
    }

    /// Whether a real point lies strictly inside the rectangle.
    pub fn encloses(&self, x: f64) -> bool {
        x > self.left() && x < self.right()
    }

    /// Distance from a real point to the rectangle boundary.
    pub fn boundary_distance(&self, x: f64) -> f64 {
        if self.encloses(x) {
            (x - self.left()).min(self.right() - x).min(self.y)
        } else if x <= self.left() {
            self.left() - x
        } else {
            x - self.right()
        }
    }

    /// Membership in the band `[t₁⁻−ε, t₁⁺+ε] ∪ [t₂⁻−ε, t₂⁺+ε]`.
    pub fn in_band(&self, x: f64) -> bool {
        let e = self.epsilon;
        (x >= self.t1_minus - e && x <= self.t1_plus + e)
            || (x >= self.t2_minus - e && x <= self.t2_plus + e)
    }

    /// Whether the ordering and side conditions of a contour built from a
    /// separated profile hold.
    pub fn satisfies_invariants(&self, profile: &SupportProfile) -> bool {
        let first = profile.clusters[0];
        let last = profile.clusters[profile.q() - 1];
        let mut ok = 0.0 < self.left()
            && self.t1_minus < first.x_minus
            && first.x_plus < self.t1_plus
            && self.t1_plus < self.t2_minus
            && self.epsilon < self.y / 3.0
            && self.right() < self.t2_minus - 3.0 * self.epsilon;
        if let Some(second) = profile.clusters.get(1) {
            ok &= self.t2_minus < second.x_minus && last.x_plus < self.t2_plus;
        }
        ok
    }
}

pub fn choose_contour(profile: &SupportProfile) -> Result<ContourSpec, RmtError> {
    let first = profile.clusters[0];
    if first.x_minus <= 0.0 {
        return Err(RmtError::SeparationViolated(format!(
            "lower edge of the noise cluster is {}",
            first.x_minus
        )));
    }
    let signal_in_noise = profile
        .eigenvalues
        .iter()
        .zip(&profile.association)
        .any(|(&l, &q)| l > 0.0 && q == 0);
    if signal_in_noise {
        return Err(RmtError::SeparationViolated(
            "a non-zero eigenvalue of BB* is associated to the noise cluster".into(),
        ));
    }
    let has_signal = profile.eigenvalues.iter().any(|&l| l > 0.0);
    let g = CONTOUR_GAMMA;
    let last = profile.clusters[profile.q() - 1];
    let t1_minus = first.x_minus * (1.0 - g);
    let t2_plus = last.x_plus * (1.0 + g);
    let (t1_plus, t2_minus, gap) = match profile.clusters.get(1) {
        Some(second) => {
            let gap = second.x_minus - first.x_plus;
            if gap <= 0.0 {
                return Err(RmtError::SeparationViolated(format!(
                    "clusters 1 and 2 touch (gap {gap})"
                )));
            }
            (first.x_plus + g * gap, second.x_minus - g * gap, gap)
        }
        None if has_signal => {
            return Err(RmtError::SeparationViolated(
                "sources present but the support has a single cluster".into(),
            ))
        }
        None => {
            // No signal cluster: the upper band is empty and only bounds
            // the rectangle.
            let gap = first.x_plus - first.x_minus;
            let t1_plus = first.x_plus + g * gap;
            (t1_plus, 0.5 * (t1_plus + t2_plus.max(t1_plus + gap)), gap)
        }
    };
    let t2_plus = t2_plus.max(t2_minus + g * gap);
    let epsilon = t1_minus.min(g * gap) / 4.0;
    let y = (3.5 * epsilon).max((t1_plus - t1_minus) / 2.0);
    Ok(ContourSpec {
        t1_minus,
        t1_plus,
        t2_minus,
        t2_plus,
        epsilon,
        y,
    })
}

/// Contour for `σ² = 0`, where the spectrum is `{0} ∪ λ(BB*)` and no
/// support analysis is needed: enclose a neighbourhood of zero that stays
/// clear of the weakest source.
pub fn noiseless_contour(input: &DeterministicInput) -> Result<ContourSpec, RmtError> {
    let m = input.dim();
    let (low, high) = if input.k() == 0 {
        (1.0, 2.0)
    } else {
        (input.true_lambdas[m - input.k()], 2.0 * input.lambda_max())
    };
    ContourSpec::from_thresholds(-low / 4.0, low / 4.0, low / 2.0, high)
}
