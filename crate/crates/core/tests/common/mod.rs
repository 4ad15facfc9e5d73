//! Brute-force references shared by the integration suites. Everything here
//! works densely in the original residual coordinates and shares no code
//! with the closed forms under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hrb_core::dynamics::{Method, SgdNoise, TrainConfig};
use hrb_core::specgen::{Dataset, DatasetSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(P, P₁)` of the residual process by direct recursion:
/// `r_{t+1} = K_d r_t + ξ_t`, `r₀ ~ N(-y, σw² K)`, `Cov ξ = Q`.
///
/// `P₁ = (1/T) Σ_{t<T} E[r_t r_tᵀ]` and `P = P₁ - m mᵀ` with
/// `m = (1/T) Σ_{t<T} E[r_t]`.
pub fn brute_force_p(
    kernel: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_w_sq: f64,
    kd: &DMatrix<f64>,
    noise: Option<&DMatrix<f64>>,
    steps: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = y.len();
    let mut second = kernel * sigma_w_sq + y * y.transpose();
    let mut mean = -y.clone();
    let mut p1 = DMatrix::zeros(n, n);
    let mut m = DVector::zeros(n);
    for t in 0..steps {
        p1 += &second;
        m += &mean;
        if t + 1 < steps {
            second = kd * &second * kd.transpose();
            if let Some(q) = noise {
                second += q;
            }
            mean = kd * &mean;
        }
    }
    let t = steps as f64;
    p1 /= t;
    m /= t;
    let p = &p1 - &m * m.transpose();
    (p, p1)
}

/// The contraction and per-step noise covariance implied by `config`.
pub fn dense_dynamics(ds: &Dataset, config: &TrainConfig) -> (DMatrix<f64>, Option<DMatrix<f64>>) {
    let k = ds.kernel();
    let n = ds.n();
    let shift = match config.method {
        Method::WeightDecay { lambda_wd } => lambda_wd,
        _ => 0.0,
    };
    let kd = DMatrix::identity(n, n) - (&k + DMatrix::identity(n, n) * shift) * config.alpha;
    let noise = match config.method {
        Method::Sgd { batch_size, noise: SgdNoise::Kernel } => {
            Some(&k * &k * (config.alpha * config.alpha / batch_size as f64))
        }
        _ => None,
    };
    (kd, noise)
}

pub fn brute_force_for(ds: &Dataset, config: &TrainConfig) -> (DMatrix<f64>, DMatrix<f64>) {
    let (kd, noise) = dense_dynamics(ds, config);
    brute_force_p(&ds.kernel(), &ds.y, ds.spec.sigma_w_sq, &kd, noise.as_ref(), config.steps)
}

/// Plain weight-space gradient descent on `(1/2n)‖X w - y‖²`, returning the
/// residuals `r_0 .. r_{T-1}`.
pub fn weight_space_gd(x: &DMatrix<f64>, y: &DVector<f64>, w0: &DVector<f64>, alpha: f64, steps: usize) -> Vec<DVector<f64>> {
    let n = x.nrows() as f64;
    let mut w = w0.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let r = x * &w - y;
        w -= x.transpose() * &r * (alpha / n);
        out.push(r);
    }
    out
}

/// `Σ_{k<terms} K_dᵏ Q K_dᵏ`.
pub fn truncated_lyapunov(kd: &DMatrix<f64>, q: &DMatrix<f64>, terms: usize) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(q.nrows(), q.ncols());
    let mut term = q.clone();
    for _ in 0..terms {
        acc += &term;
        term = kd * &term * kd.transpose();
    }
    acc
}

/// Multi-kernel `P(M,T)` by brute force: each kernel runs its own residual
/// process from `N(-y, σw² K_m)`; second moments are averaged across kernels
/// and the pooled mean is subtracted.
pub fn multi_kernel_brute(kernels: &[DMatrix<f64>], y: &DVector<f64>, sigma_w_sq: f64, alpha: f64, steps: usize) -> DMatrix<f64> {
    let n = y.len();
    let mut p1 = DMatrix::zeros(n, n);
    let mut m = DVector::zeros(n);
    for k in kernels {
        let kd = DMatrix::identity(n, n) - k * alpha;
        let (p, p1_m) = brute_force_p(k, y, sigma_w_sq, &kd, None, steps);
        p1 += &p1_m;
        // Recover this kernel's time-averaged mean from P₁ - P = m mᵀ.
        let mean = time_averaged_mean(&kd, y, steps);
        debug_assert!(((&p1_m - &p) - &mean * mean.transpose()).norm() < 1e-8 * p1_m.norm().max(1.0));
        m += mean;
    }
    let count = kernels.len() as f64;
    p1 /= count;
    m /= count;
    p1 - &m * m.transpose()
}

pub fn time_averaged_mean(kd: &DMatrix<f64>, y: &DVector<f64>, steps: usize) -> DVector<f64> {
    let mut mean = -y.clone();
    let mut acc = DVector::zeros(y.len());
    for _ in 0..steps {
        acc += &mean;
        mean = kd * &mean;
    }
    acc / steps as f64
}

pub fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// A random sloppy dataset spec with `n ≤ max_n`.
pub fn random_spec<R: Rng>(rng: &mut R, max_n: usize) -> DatasetSpec {
    let n = rng.random_range(4..=max_n);
    let c_lo = 0.05f64.max(1.5 / n as f64);
    DatasetSpec {
        n,
        d: n + rng.random_range(1..=n + 10),
        c: rng.random_range(c_lo..=1.0),
        sigma_star_sq: 10f64.powf(rng.random_range(-1.0..=1.0)),
        sigma_w_sq: 10f64.powf(rng.random_range(-1.5..=0.5)),
        seed: rng.random(),
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
