//! Uniform linear array scenario, observation sampling and exact ground truth.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::seed::rng_from_seed;
use crate::{ModelError, C64};

/// Largest condition number of `A*A` accepted before the steering matrix is
/// declared degenerate.
pub const MAX_GRAM_CONDITION: f64 = 1e12;

/// Unit-norm steering vector `(1, e^{iθ}, …, e^{i(M-1)θ})ᵀ / √M`.
pub fn steering(theta: f64, m: usize) -> DVector<C64> {
    let scale = 1.0 / (m as f64).sqrt();
    DVector::from_fn(m, |k, _| C64::from_polar(scale, k as f64 * theta))
}

/// `a(θ₁)* a(θ₂)` in closed form, without forming either vector.
pub fn steering_inner(theta1: f64, theta2: f64, m: usize) -> C64 {
    let delta = theta2 - theta1;
    // (1/M) Σ_{k=0}^{M-1} e^{ikδ} = e^{-iδ} q_M(-δ/2π)
    C64::from_polar(1.0, -delta) * exp_sum_q_closed(-delta / (2.0 * PI), m)
}

/// `q_M(α) = (1/M) Σ_{k=1}^{M} e^{-i2πkα}` by direct summation.
pub fn exp_sum_q(alpha: f64, m: usize) -> C64 {
    let sum: C64 = (1..=m)
        .map(|k| C64::from_polar(1.0, -2.0 * PI * k as f64 * alpha))
        .sum();
    sum / m as f64
}

/// Geometric-series form of [`exp_sum_q`]:
/// `e^{-iπ(M+1)α} sin(πMα) / (M sin πα)`.
pub fn exp_sum_q_closed(alpha: f64, m: usize) -> C64 {
    let s = (PI * alpha).sin();
    if s.abs() < 1e-8 {
        return exp_sum_q(alpha, m);
    }
    let mf = m as f64;
    let ratio = (PI * mf * alpha).sin() / (mf * s);
    C64::from_polar(1.0, -PI * (mf + 1.0) * alpha) * ratio
}

fn default_norm_bound() -> f64 {
    1e3
}

/// Parameters from which a [`Scenario`] is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub m: usize,
    pub n: usize,
    /// Source angles in (−π, π]; sorted on construction.
    pub angles: Vec<f64>,
    /// Per-source power, one per angle.
    pub powers: Vec<f64>,
    pub sigma2: f64,
    /// Seed of the stream that draws the source phases.
    pub seed: u64,
    /// Upper bound on the spectral norm of `B`.
    #[serde(default = "default_norm_bound")]
    pub norm_bound: f64,
}

/// Deterministic ground truth of one experiment: `B = A(θ) S / √N`.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub m: usize,
    pub n: usize,
    pub angles: Vec<f64>,
    pub sigma2: f64,
    pub source_matrix: DMatrix<C64>,
    pub steering_matrix: DMatrix<C64>,
    pub b: DMatrix<C64>,
    /// Eigenvalues of `BB*`, ascending; the first `M-K` are exactly zero.
    pub bb_eigenvalues: Vec<f64>,
}

impl Scenario {
    pub fn k(&self) -> usize {
        self.angles.len()
    }

    pub fn c(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    /// Smallest non-zero eigenvalue of `BB*`, or `None` without sources.
    pub fn min_signal_eigenvalue(&self) -> Option<f64> {
        (self.k() > 0).then(|| self.bb_eigenvalues[self.m - self.k()])
    }

    /// Same scenario with a different noise level.
    pub fn with_sigma2(&self, sigma2: f64) -> Scenario {
        Scenario {
            sigma2,
            ..self.clone()
        }
    }
}

fn wrap_angle(theta: f64) -> f64 {
    // into (−π, π]
    let t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t - 2.0 * PI
    } else {
        t
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    wrap_angle(a - b).abs()
}

pub fn build_scenario(config: &ScenarioConfig) -> Result<Scenario, ModelError> {
    let (m, n) = (config.m, config.n);
    let k = config.angles.len();
    if m == 0 || n == 0 || m >= n {
        return Err(ModelError::InvalidDimensions(format!(
            "need 0 < M < N, got M={m}, N={n}"
        )));
    }
    if k >= m {
        return Err(ModelError::InvalidDimensions(format!(
            "need K < M, got K={k}, M={m}"
        )));
    }
    if config.powers.len() != k {
        return Err(ModelError::InvalidDimensions(format!(
            "{} powers given for {k} angles",
            config.powers.len()
        )));
    }
    if !(config.sigma2 >= 0.0 && config.sigma2.is_finite()) {
        return Err(ModelError::InvalidParameter(format!(
            "noise variance must be finite and non-negative, got {}",
            config.sigma2
        )));
    }
    if let Some(p) = config.powers.iter().find(|p| !(**p > 0.0 && p.is_finite())) {
        return Err(ModelError::InvalidParameter(format!(
            "source powers must be positive, got {p}"
        )));
    }
    if config.angles.iter().any(|a| !a.is_finite()) {
        return Err(ModelError::InvalidParameter("non-finite angle".into()));
    }

    let mut sources: Vec<(f64, f64)> = config
        .angles
        .iter()
        .map(|&a| wrap_angle(a))
        .zip(config.powers.iter().copied())
        .collect();
    sources.sort_by(|a, b| a.0.total_cmp(&b.0));
    for i in 0..k {
        for j in i + 1..k {
            if angular_distance(sources[i].0, sources[j].0) < 1e-12 {
                return Err(ModelError::DuplicateAngles(sources[i].0));
            }
        }
    }
    let angles: Vec<f64> = sources.iter().map(|s| s.0).collect();

    let steering_matrix =
        DMatrix::from_fn(m, k, |row, col| steering(angles[col], m)[row]);

    // Unit-modulus source symbols with uniform phases, scaled per source.
    let mut rng = rng_from_seed(config.seed);
    let phase = Uniform::new(-PI, PI).expect("valid phase range");
    let mut source_matrix = DMatrix::<C64>::zeros(k, n);
    for col in 0..n {
        for row in 0..k {
            let amp = sources[row].1.sqrt();
            source_matrix[(row, col)] = C64::from_polar(amp, phase.sample(&mut rng));
        }
    }

    let b = &steering_matrix * &source_matrix * C64::new(1.0 / (n as f64).sqrt(), 0.0);
    let bb_eigenvalues = bb_spectrum(&steering_matrix, &source_matrix, m, n)?;

    if let Some(&top) = bb_eigenvalues.last() {
        if top.sqrt() > config.norm_bound {
            return Err(ModelError::NormBoundExceeded {
                norm: top.sqrt(),
                bound: config.norm_bound,
            });
        }
    }
    if k > 0 {
        let smallest = bb_eigenvalues[m - k];
        let largest = bb_eigenvalues[m - 1];
        if smallest.is_nan() || smallest <= 1e-10 * largest {
            return Err(ModelError::RankDeficient { expected: k });
        }
    }

    Ok(Scenario {
        m,
        n,
        angles,
        sigma2: config.sigma2,
        source_matrix,
        steering_matrix,
        b,
        bb_eigenvalues,
    })
}

/// Eigenvalues of `BB* = A (SS*/N) A*`, computed on the K×K Hermitian
/// matrix `L* A*A L` with `SS*/N = L L*`.
fn bb_spectrum(
    a: &DMatrix<C64>,
    s: &DMatrix<C64>,
    m: usize,
    n: usize,
) -> Result<Vec<f64>, ModelError> {
    let k = a.ncols();
    let mut out = vec![0.0; m];
    if k == 0 {
        return Ok(out);
    }
    let source_cov = s * s.adjoint() * C64::new(1.0 / n as f64, 0.0);
    let chol = nalgebra::Cholesky::new(source_cov)
        .ok_or(ModelError::RankDeficient { expected: k })?;
    let l = chol.l();
    let h = l.adjoint() * a.adjoint() * a * &l;
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    let mut eig: Vec<f64> = h.symmetric_eigenvalues().iter().map(|v| v.max(0.0)).collect();
    eig.sort_by(f64::total_cmp);
    out[m - k..].copy_from_slice(&eig);
    Ok(out)
}

/// One noisy realization `Σ = B + W`.
#[derive(Clone, Debug)]
pub struct Observation {
    pub sigma_matrix: DMatrix<C64>,
    pub seed: u64,
}

/// Draw `W` with i.i.d. circular complex Gaussian entries of variance `σ²/N`.
///
/// Entries are drawn in column-major order, real part before imaginary part,
/// from `ChaCha20Rng::seed_from_u64(seed)`.
pub fn sample_observation(scenario: &Scenario, seed: u64) -> Observation {
    let (m, n) = (scenario.m, scenario.n);
    let mut sigma_matrix = scenario.b.clone();
    if scenario.sigma2 > 0.0 {
        let std = (scenario.sigma2 / (2.0 * n as f64)).sqrt();
        let mut rng = rng_from_seed(seed);
        for col in 0..n {
            for row in 0..m {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                sigma_matrix[(row, col)] += C64::new(std * re, std * im);
            }
        }
    }
    Observation { sigma_matrix, seed }
}

/// Projector onto the kernel of `BB*` plus a fast evaluator of `a(θ)*Π a(θ)`.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub noise_projector: DMatrix<C64>,
    angles: Vec<f64>,
    m: usize,
    gram_inverse: DMatrix<C64>,
}

impl GroundTruth {
    /// `η(θ) = 1 − a(θ)*A(A*A)⁻¹A*a(θ)`, clamped to `[0, 1]`.
    pub fn eta(&self, theta: f64) -> f64 {
        if self.angles.is_empty() {
            return 1.0;
        }
        let proj = DVector::from_iterator(
            self.angles.len(),
            self.angles.iter().map(|&tk| steering_inner(tk, theta, self.m)),
        );
        let quad = proj.dotc(&(&self.gram_inverse * &proj)).re;
        (1.0 - quad).clamp(0.0, 1.0)
    }
}

fn gram_inverse(scenario: &Scenario) -> Result<DMatrix<C64>, ModelError> {
    let a = &scenario.steering_matrix;
    let gram = a.adjoint() * a;
    let eig = gram.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if cond > MAX_GRAM_CONDITION {
        return Err(ModelError::DegenerateSteering { condition: cond });
    }
    gram.try_inverse()
        .ok_or(ModelError::DegenerateSteering { condition: cond })
}

pub fn true_projector(scenario: &Scenario) -> Result<GroundTruth, ModelError> {
    let m = scenario.m;
    if scenario.k() == 0 {
        return Ok(GroundTruth {
            noise_projector: DMatrix::identity(m, m),
            angles: Vec::new(),
            m,
            gram_inverse: DMatrix::zeros(0, 0),
        });
    }
    let a = &scenario.steering_matrix;
    let gram_inverse = gram_inverse(scenario)?;
    let signal = a * &gram_inverse * a.adjoint();
    let noise_projector = DMatrix::<C64>::identity(m, m) - signal;
    Ok(GroundTruth {
        noise_projector,
        angles: scenario.angles.clone(),
        m,
        gram_inverse,
    })
}

pub fn true_eta(scenario: &Scenario, theta: f64) -> Result<f64, ModelError> {
    Ok(true_projector(scenario)?.eta(theta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(m: usize, n: usize, angles: &[f64], powers: &[f64]) -> ScenarioConfig {
        ScenarioConfig {
            m,
            n,
            angles: angles.to_vec(),
            powers: powers.to_vec(),
            sigma2: 1.0,
            seed: 11,
            norm_bound: 1e3,
        }
    }

    #[test]
    fn steering_examples() {
        let a = steering(0.0, 4);
        for v in a.iter() {
            assert!((v - C64::new(0.5, 0.0)).norm() < 1e-15);
        }
        let a = steering(PI, 2);
        let h = 1.0 / 2f64.sqrt();
        assert!((a[0] - C64::new(h, 0.0)).norm() < 1e-15);
        assert!((a[1] - C64::new(-h, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn steering_inner_matches_vectors() {
        for &(t1, t2, m) in &[(0.1, 0.7, 8usize), (-2.0, 2.5, 33), (0.3, 0.3, 5)] {
            let direct = steering(t1, m).dotc(&steering(t2, m));
            assert!((direct - steering_inner(t1, t2, m)).norm() < 1e-13);
        }
    }

    #[test]
    fn exp_sum_examples() {
        assert!((exp_sum_q(0.0, 7) - C64::new(1.0, 0.0)).norm() < 1e-15);
        assert!(exp_sum_q(0.25, 4).norm() < 1e-15);
        assert!((exp_sum_q(1.0, 9) - C64::new(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn no_sources_gives_zero_b() {
        let s = build_scenario(&config(5, 9, &[], &[])).unwrap();
        assert!(s.b.iter().all(|v| *v == C64::new(0.0, 0.0)));
        assert!(s.bb_eigenvalues.iter().all(|v| *v == 0.0));
        let truth = true_projector(&s).unwrap();
        assert_eq!(truth.noise_projector, DMatrix::identity(5, 5));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(
            build_scenario(&config(4, 8, &[0.1, 0.2, 0.3, 0.4], &[1.0; 4])),
            Err(ModelError::InvalidDimensions(_))
        ));
        assert!(matches!(
            build_scenario(&config(8, 8, &[0.1], &[1.0])),
            Err(ModelError::InvalidDimensions(_))
        ));
        assert!(matches!(
            build_scenario(&config(8, 16, &[0.1, 0.1], &[1.0, 1.0])),
            Err(ModelError::DuplicateAngles(_))
        ));
        assert!(matches!(
            build_scenario(&config(8, 16, &[0.1], &[0.0])),
            Err(ModelError::InvalidParameter(_))
        ));
    }

    #[test]
    fn rank_of_bb_matches_numerical_rank() {
        let s = build_scenario(&config(40, 80, &[0.2, 0.5], &[1.0, 1.0])).unwrap();
        let sv = s.b.clone().singular_values();
        let top = sv.max();
        let rank = sv.iter().filter(|&&v| v * v > 1e-10 * top * top).count();
        assert_eq!(rank, 2);
        // eigenvalues of BB* agree with squared singular values
        let mut sq: Vec<f64> = sv.iter().map(|v| v * v).collect();
        sq.sort_by(f64::total_cmp);
        for (a, b) in sq.iter().rev().zip(s.bb_eigenvalues.iter().rev()).take(2) {
            assert!((a - b).abs() < 1e-12 * top * top);
        }
    }

    #[test]
    fn scenario_is_deterministic_per_seed() {
        let c = config(6, 12, &[0.3, -1.0], &[2.0, 1.0]);
        let a = build_scenario(&c).unwrap();
        let b = build_scenario(&c).unwrap();
        assert_eq!(a.b, b.b);
        assert_eq!(a.angles, vec![-1.0, 0.3]);
    }

    #[test]
    fn zero_noise_observation_is_b() {
        let mut c = config(6, 12, &[0.3], &[1.0]);
        c.sigma2 = 0.0;
        let s = build_scenario(&c).unwrap();
        assert_eq!(sample_observation(&s, 5).sigma_matrix, s.b);
    }

    #[test]
    fn eta_vanishes_at_true_angles() {
        let s = build_scenario(&config(10, 30, &[-0.4, 0.9], &[1.0, 3.0])).unwrap();
        let truth = true_projector(&s).unwrap();
        for &t in &s.angles {
            assert!(truth.eta(t) < 1e-12);
        }
        for col in 0..2 {
            let pa = &truth.noise_projector * s.steering_matrix.column(col);
            assert!(pa.norm() < 1e-12);
        }
        let tr: C64 = truth.noise_projector.trace();
        assert!((tr.re - 8.0).abs() < 1e-12 && tr.im.abs() < 1e-12);
    }

    #[test]
    fn eta_orthogonal_pair() {
        let s = build_scenario(&config(2, 4, &[0.0], &[1.0])).unwrap();
        assert!((true_eta(&s, PI).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_steering_detected() {
        let s = build_scenario(&config(6, 12, &[0.1, 0.1 + 1e-9], &[1.0, 1.0]));
        // Either the source covariance or the gram matrix gives out first.
        match s {
            Err(ModelError::RankDeficient { .. }) => {}
            Ok(s) => assert!(matches!(
                true_projector(&s),
                Err(ModelError::DegenerateSteering { .. })
            )),
            Err(e) => panic!("unexpected {e}"),
        }
    }
}
