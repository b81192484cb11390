//! Empirical spectral quantities of `ΣΣ*`: eigenpairs, the Stieltjes
//! transform `m̂`, and the secular roots `ω̂` of `1 + σ²c m̂(z) = 0`.

use nalgebra::DMatrix;

use crate::model::Observation;
use crate::{SpectrumError, C64};

const SVD_MAX_ITER: usize = 10_000;

/// Eigen-structure of `ΣΣ*` together with the secular roots it induces.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    /// Eigenvalues of `ΣΣ*`, ascending.
    pub lambdas: Vec<f64>,
    /// Unitary matrix whose k-th column is the eigenvector of `lambdas[k]`.
    pub vectors: DMatrix<C64>,
    /// Eigenvalues of `diag(λ̂) + (σ²c/M) 𝟙𝟙ᵀ`, ascending.
    pub omegas: Vec<f64>,
    pub c: f64,
    pub sigma2: f64,
}

pub fn decompose(
    observation: &Observation,
    sigma2: f64,
) -> Result<SpectralDecomposition, SpectrumError> {
    decompose_matrix(&observation.sigma_matrix, sigma2)
}

/// Eigendecomposition of `ΣΣ*` through the SVD of `Σ`.
pub fn decompose_matrix(
    sigma: &DMatrix<C64>,
    sigma2: f64,
) -> Result<SpectralDecomposition, SpectrumError> {
    let (m, n) = sigma.shape();
    if m == 0 || m >= n {
        return Err(SpectrumError::InvalidInput(format!(
            "need 0 < M < N, got {m}x{n}"
        )));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(SpectrumError::InvalidInput(format!(
            "noise variance must be finite and non-negative, got {sigma2}"
        )));
    }
    let svd = sigma
        .clone()
        .try_svd(true, false, f64::EPSILON, SVD_MAX_ITER)
        .ok_or(SpectrumError::NumericalFailure)?;
    let u = svd.u.ok_or(SpectrumError::NumericalFailure)?;
    let sv = svd.singular_values;

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| sv[a].total_cmp(&sv[b]).then(a.cmp(&b)));
    let lambdas: Vec<f64> = order.iter().map(|&i| sv[i] * sv[i]).collect();
    let vectors = DMatrix::from_fn(m, m, |row, col| u[(row, order[col])]);

    let c = m as f64 / n as f64;
    let omegas = secular_roots(&lambdas, sigma2 * c);
    Ok(SpectralDecomposition {
        lambdas,
        vectors,
        omegas,
        c,
        sigma2,
    })
}

/// Eigenvalues of `diag(λ) + (ρ/M) 𝟙𝟙ᵀ`, i.e. the roots of
/// `1 + (ρ/M) Σ_k 1/(λ_k − x) = 0` plus the deflated copies of repeated λ.
///
/// `lambdas` must be ascending. Values closer than `1e-12·(1 + |λ_max|)`
/// are merged into one pole; a pole of multiplicity `p` contributes `p − 1`
/// outputs equal to it.
pub fn secular_roots(lambdas: &[f64], rho: f64) -> Vec<f64> {
    let m = lambdas.len();
    if m == 0 || rho <= 0.0 {
        return lambdas.to_vec();
    }
    let tol = 1e-12 * (1.0 + lambdas[m - 1].abs());

    let mut poles: Vec<(f64, usize)> = Vec::new();
    for &l in lambdas {
        match poles.last_mut() {
            Some((d, p)) if l - *d <= tol => *p += 1,
            _ => poles.push((l, 1)),
        }
    }
    let weights: Vec<f64> = poles.iter().map(|&(_, p)| rho * p as f64 / m as f64).collect();
    let values: Vec<f64> = poles.iter().map(|&(d, _)| d).collect();

    let mut out = Vec::with_capacity(m);
    for (i, &(d, p)) in poles.iter().enumerate() {
        out.extend(std::iter::repeat_n(d, p - 1));
        let root = match values.get(i + 1) {
            Some(&next) => gap_root(&values, &weights, i, next - d),
            None => last_root(&values, &weights, rho),
        };
        out.push(root);
    }
    out
}

/// Secular function in shifted coordinates: `1 + Σ w_l / (δ_l − τ)` with
/// `δ_l = d_l − origin`, and its derivative.
fn shifted_secular(deltas: &[f64], weights: &[f64], tau: f64) -> (f64, f64) {
    let mut f = 1.0;
    let mut df = 0.0;
    for (d, w) in deltas.iter().zip(weights) {
        let r = 1.0 / (d - tau);
        f += w * r;
        df += w * r * r;
    }
    (f, df)
}

fn gap_root(values: &[f64], weights: &[f64], i: usize, gap: f64) -> f64 {
    let left = values[i];
    let right = values[i + 1];
    // Pick the nearer pole as origin so the root is resolved relative to it.
    let mid_deltas: Vec<f64> = values.iter().map(|v| v - left).collect();
    let (f_mid, _) = shifted_secular(&mid_deltas, weights, gap / 2.0);
    if f_mid >= 0.0 {
        let tau = solve_shifted(&mid_deltas, weights, 0.0, gap / 2.0, gap);
        left + tau
    } else {
        let deltas: Vec<f64> = values.iter().map(|v| v - right).collect();
        let tau = solve_shifted(&deltas, weights, -gap / 2.0, 0.0, gap);
        right + tau
    }
}

fn last_root(values: &[f64], weights: &[f64], rho: f64) -> f64 {
    let origin = *values.last().expect("at least one pole");
    let deltas: Vec<f64> = values.iter().map(|v| v - origin).collect();
    let (f_hi, _) = shifted_secular(&deltas, weights, rho);
    if f_hi <= 0.0 {
        // f(ρ) ≥ 0 analytically; equality only in the single-pole case.
        return origin + rho;
    }
    origin + solve_shifted(&deltas, weights, 0.0, rho, rho)
}

/// Root of the increasing shifted secular function on `(lo, hi)`, where
/// `f(lo) < 0 < f(hi)` (endpoints may be poles).
fn solve_shifted(deltas: &[f64], weights: &[f64], mut lo: f64, mut hi: f64, gap: f64) -> f64 {
    let mut tau = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (f, df) = shifted_secular(deltas, weights, tau);
        if f == 0.0 {
            return tau;
        }
        if f < 0.0 {
            lo = tau;
        } else {
            hi = tau;
        }
        let width = hi - lo;
        if width <= 2.0 * f64::EPSILON * tau.abs().max(f64::MIN_POSITIVE) {
            break;
        }
        let next = if width < 1e-3 * gap {
            let newton = tau - f / df;
            if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            }
        } else {
            0.5 * (lo + hi)
        };
        if (next - tau).abs() <= 1e-16 * tau.abs() {
            return next;
        }
        tau = next;
    }
    tau
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    fn pole_scale(&self) -> f64 {
        1.0 + self.lambdas.last().copied().unwrap_or(0.0).abs()
    }

    fn check_pole(&self, z: C64, points: &[f64]) -> Result<(), SpectrumError> {
        let dist = points
            .iter()
            .map(|&l| (C64::new(l, 0.0) - z).norm())
            .fold(f64::INFINITY, f64::min);
        if dist < 1e-14 * self.pole_scale() {
            return Err(SpectrumError::PoleHit {
                z: format!("{z}"),
                distance: dist,
            });
        }
        Ok(())
    }

    /// `(m̂(z), m̂′(z))` without pole checks.
    pub(crate) fn moments_unchecked(&self, z: C64) -> (C64, C64) {
        let mut m = C64::new(0.0, 0.0);
        let mut dm = C64::new(0.0, 0.0);
        for &l in &self.lambdas {
            let r = (C64::new(l, 0.0) - z).inv();
            m += r;
            dm += r * r;
        }
        let inv = 1.0 / self.dim() as f64;
        (m * inv, dm * inv)
    }

    /// `m̂(z) = (1/M) Σ 1/(λ̂_k − z)` and its derivative.
    pub fn empirical_stieltjes(&self, z: C64) -> Result<(C64, C64), SpectrumError> {
        self.check_pole(z, &self.lambdas)?;
        Ok(self.moments_unchecked(z))
    }

    /// `b̂(z) = 1 + σ²c m̂(z)`.
    pub fn b_hat(&self, z: C64) -> Result<C64, SpectrumError> {
        let (m, _) = self.empirical_stieltjes(z)?;
        Ok(1.0 + self.sigma2 * self.c * m)
    }

    /// `ŵ(z) = z b̂(z)² − σ²(1−c) b̂(z)`.
    pub fn w_hat(&self, z: C64) -> Result<C64, SpectrumError> {
        let b = self.b_hat(z)?;
        Ok(z * b * b - self.sigma2 * (1.0 - self.c) * b)
    }

    /// `ĝ(z) = ŵ′(z) / b̂(z)`.
    pub fn g_hat(&self, z: C64) -> Result<C64, SpectrumError> {
        self.check_pole(z, &self.lambdas)?;
        self.check_pole(z, &self.omegas)?;
        Ok(self.g_hat_unchecked(z))
    }

    /// `ĝ = b̂ + 2σ²c z m̂′ − σ⁴c(1−c) m̂′/b̂`, from differentiating `ŵ`.
    pub(crate) fn g_hat_unchecked(&self, z: C64) -> C64 {
        let (m, dm) = self.moments_unchecked(z);
        let s = self.sigma2;
        let c = self.c;
        let b = 1.0 + s * c * m;
        b + 2.0 * s * c * z * dm - s * s * c * (1.0 - c) * dm / b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_sigma(m: usize, n: usize, seed: u64) -> DMatrix<C64> {
        use rand::Rng;
        let mut rng = crate::seed::rng_from_seed(seed);
        DMatrix::from_fn(m, n, |_, _| C64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
    }

    #[test]
    fn reconstruction_of_random_matrix() {
        let sigma = random_sigma(8, 16, 3);
        let spec = decompose_matrix(&sigma, 1.0).unwrap();
        let gram = &sigma * sigma.adjoint();
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            8,
            spec.lambdas.iter().map(|&l| C64::new(l, 0.0)),
        ));
        let rebuilt = &spec.vectors * lam * spec.vectors.adjoint();
        let err = (gram - rebuilt).norm();
        assert!(err <= 1e-10 * (1.0 + spec.lambdas[7]), "err {err}");
        assert!(spec.lambdas.windows(2).all(|w| w[0] <= w[1]));
        assert!(spec.lambdas.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn zero_matrix_and_row_vector() {
        let spec = decompose_matrix(&DMatrix::zeros(3, 5), 1.0).unwrap();
        assert!(spec.lambdas.iter().all(|&l| l == 0.0));
        let v = random_sigma(1, 6, 9);
        let spec = decompose_matrix(&v, 1.0).unwrap();
        let norm2: f64 = v.iter().map(|x| x.norm_sqr()).sum();
        assert!((spec.lambdas[0] - norm2).abs() < 1e-14);
    }

    #[test]
    fn rejects_wide_shapes() {
        assert!(decompose_matrix(&DMatrix::zeros(4, 4), 1.0).is_err());
    }

    #[test]
    fn secular_two_by_two() {
        // [[1.15, 0.15], [0.15, 2.15]]
        let tr = 3.3_f64;
        let det = 1.15 * 2.15 - 0.15 * 0.15;
        let disc = (tr * tr / 4.0 - det).sqrt();
        let expected = [tr / 2.0 - disc, tr / 2.0 + disc];
        let got = secular_roots(&[1.0, 2.0], 0.3);
        for (g, e) in got.iter().zip(expected) {
            assert!((g - e).abs() < 1e-14, "{g} vs {e}");
        }
        assert!((got[0] - 1.127985).abs() < 1e-6);
    }

    #[test]
    fn secular_fully_degenerate() {
        assert_eq!(secular_roots(&[0.0, 0.0, 0.0], 0.3), vec![0.0, 0.0, 0.3]);
    }

    #[test]
    fn secular_partial_multiplicity() {
        let l = [0.5, 1.0, 1.0, 1.0, 3.0];
        let w = secular_roots(&l, 0.7);
        assert_eq!(w.iter().filter(|&&x| x == 1.0).count(), 2);
        assert!(w[0] > 0.5 && w[0] < 1.0);
        assert!(w[3] > 1.0 && w[3] < 3.0);
        assert!(w[4] > 3.0 && w[4] <= 3.7);
        let trace: f64 = w.iter().sum::<f64>() - l.iter().sum::<f64>();
        assert!((trace - 0.7).abs() < 1e-13);
    }

    #[test]
    fn stieltjes_single_atom() {
        let spec = SpectralDecomposition {
            lambdas: vec![0.0; 4],
            vectors: DMatrix::identity(4, 4),
            omegas: secular_roots(&[0.0; 4], 0.5),
            c: 0.5,
            sigma2: 1.0,
        };
        let (m, dm) = spec.empirical_stieltjes(C64::i()).unwrap();
        assert!((m - C64::i()).norm() < 1e-15);
        assert!((dm - C64::new(-1.0, 0.0)).norm() < 1e-15);
        let y = 1e6;
        let (m, _) = spec.empirical_stieltjes(C64::new(0.0, y)).unwrap();
        assert!((C64::new(0.0, -y) * m - 1.0).norm() < 1e-5);
        assert!(matches!(
            spec.empirical_stieltjes(C64::new(0.0, 0.0)),
            Err(SpectrumError::PoleHit { .. })
        ));
    }

    #[test]
    fn noiseless_degeneration() {
        let sigma = random_sigma(4, 9, 1);
        let spec = decompose_matrix(&sigma, 0.0).unwrap();
        let z = C64::new(0.3, 0.7);
        assert_eq!(spec.b_hat(z).unwrap(), C64::new(1.0, 0.0));
        assert!((spec.w_hat(z).unwrap() - z).norm() < 1e-15);
        assert!((spec.g_hat(z).unwrap() - 1.0).norm() < 1e-15);
        assert_eq!(spec.omegas, spec.lambdas);
    }

    #[test]
    fn b_hat_vanishes_at_secular_roots() {
        let spec = decompose_matrix(&random_sigma(6, 14, 21), 0.8).unwrap();
        for &w in &spec.omegas {
            let b = spec.b_hat(C64::new(w, 0.0)).unwrap();
            let (m, _) = spec.empirical_stieltjes(C64::new(w, 0.0)).unwrap();
            assert!(b.norm() <= 1e-9 * (1.0 + spec.sigma2 * spec.c * m.norm()));
        }
    }

    #[test]
    fn g_hat_matches_central_difference() {
        let spec = decompose_matrix(&random_sigma(6, 14, 5), 0.8).unwrap();
        let center = 0.5 * (spec.lambdas[0] + spec.lambdas[5]);
        let radius = spec.lambdas[5] - spec.lambdas[0];
        let h = 1e-6;
        for k in 0..16 {
            let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.25) / 16.0;
            let z = C64::new(center, 0.0) + C64::from_polar(radius, t);
            let g = spec.g_hat(z).unwrap();
            let fd = (spec.w_hat(z + h).unwrap() - spec.w_hat(z - h).unwrap())
                / (2.0 * h * spec.b_hat(z).unwrap());
            assert!((g - fd).norm() <= 1e-6 * (1.0 + g.norm()), "{g} vs {fd}");
        }
    }

    #[test]
    fn b_hat_sign_right_of_spectrum() {
        let spec = decompose_matrix(&random_sigma(5, 12, 8), 1.0).unwrap();
        let top = spec.lambdas[4];
        let w = spec.omegas[4];
        for i in 1..20 {
            let x = top + (w - top) * i as f64 / 20.0;
            assert!(spec.b_hat(C64::new(x, 0.0)).unwrap().re < 0.0);
            let x = w + i as f64 * 0.3;
            assert!(spec.b_hat(C64::new(x, 0.0)).unwrap().re > 0.0);
        }
    }

    proptest! {
        #[test]
        fn interlacing_and_trace(mut l in proptest::collection::vec(0.0f64..10.0, 1..40), rho in 0.01f64..5.0) {
            l.sort_by(f64::total_cmp);
            let w = secular_roots(&l, rho);
            prop_assert_eq!(w.len(), l.len());
            for k in 0..l.len() {
                prop_assert!(l[k] <= w[k]);
                if k + 1 < l.len() { prop_assert!(w[k] <= l[k + 1]); }
            }
            let sl: f64 = l.iter().sum();
            let sw: f64 = w.iter().sum();
            prop_assert!((sw - sl - rho).abs() <= 1e-12 * (1.0 + sl));
        }

        #[test]
        fn stieltjes_upper_half_plane(x in -3.0f64..3.0, y in 0.01f64..5.0, seed in 0u64..1000) {
            let spec = decompose_matrix(&random_sigma(4, 9, seed), 1.0).unwrap();
            let z = C64::new(x, y);
            let (m, dm) = spec.empirical_stieltjes(z).unwrap();
            prop_assert!(m.im > 0.0);
            let dist = spec.lambdas.iter().map(|&l| (z - l).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(m.norm() <= 1.0 / dist * (1.0 + 1e-12));
            prop_assert!(dm.norm() <= 1.0 / (dist * dist) * (1.0 + 1e-12));
            let b = spec.b_hat(z).unwrap();
            prop_assert!(1.0 / b.norm() <= z.norm() / y * (1.0 + 1e-12));
        }
    }
}
