//! The trajectory-PCA matrix, empirically and in closed form.
//!
//! For an ensemble started at `r₀ ~ N(-y, σw² K)` the PCA matrix splits as
//! `P(T) = P₁(T) - P₂(T)` with
//!
//! ```text
//! P₁(T) = (1/T) Σ_{t<T} K_dᵗ (σw² K + y yᵀ) K_dᵗ,    P₂(T) = K_T y yᵀ K_T,
//! ```
//!
//! `K_d = I - αK` and `K_T = (1/T) Σ_{t<T} K_dᵗ`. In the eigenbasis of `K`
//! every piece is an entrywise closed form, which is how everything here is
//! computed.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Gram, Method, Simulator, SpectralModel, TrainConfig, TrajectorySource};
use crate::error::{Error, Result};
use crate::linalg::{clamp_psd, geometric_sum, sym_eigen, PSD_CLAMP_TOL};
use crate::specgen::Dataset;

/// Trajectories per chunk in the streaming PCA; chunk boundaries fix the
/// summation order, so results do not depend on the thread count.
const CHUNK: usize = 64;

/// Number of batches used for Monte Carlo error bars.
const ERROR_BATCHES: usize = 20;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PcaDecomposition {
    /// Eigenvalues of `P`, descending.
    pub lambda_p: Vec<f64>,
    /// Eigenvalues of `P₁`.
    pub lambda_p1: Option<Vec<f64>>,
    /// Eigenvalues of `T P₁^σw`.
    pub lambda_sigma_w: Option<Vec<f64>>,
    /// Eigenvalues of `T P₁^y`.
    pub lambda_y: Option<Vec<f64>>,
    /// The single nonzero eigenvalue of `P₂`, `‖K_T y‖²`.
    pub lambda_p2: Option<f64>,
    /// Cumulative fraction of `tr P` captured by the leading eigenvalues.
    pub explained_variance: Vec<f64>,
    /// Batch-means standard errors of `lambda_p` (empirical only).
    pub lambda_p_stderr: Option<Vec<f64>>,
    /// Set when `P` is identically zero or built from a single point.
    pub degenerate: bool,
    /// Eigenvectors of `P` in residual coordinates, one column per value.
    #[serde(skip)]
    pub basis: Option<DMatrix<f64>>,
    /// `P` itself, in residual coordinates.
    #[serde(skip)]
    pub matrix: Option<DMatrix<f64>>,
}

impl PcaDecomposition {
    pub fn dim(&self) -> usize {
        self.lambda_p.len()
    }

    pub fn trace(&self) -> f64 {
        self.lambda_p.iter().sum()
    }
}

/// Descending eigenvalues of a symmetric PSD matrix, with roundoff
/// negatives clamped.
fn psd_spectrum(m: &DMatrix<f64>, what: &str) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let eig = sym_eigen(m);
    let mut values: Vec<f64> = eig.values.iter().copied().collect();
    clamp_psd(&mut values, PSD_CLAMP_TOL, what)?;
    Ok((values, eig.basis))
}

fn psd_values(m: &DMatrix<f64>, what: &str) -> Result<Vec<f64>> {
    psd_spectrum(m, what).map(|(v, _)| v)
}

fn explained(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return vec![0.0; values.len()];
    }
    let mut acc = 0.0;
    let mut out: Vec<f64> = values
        .iter()
        .map(|v| {
            acc += v;
            (acc / total).min(1.0)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

/// Diagonal of `K_T` in the eigenbasis of `K`: `(1 - qᵢᵀ)/(α T λᵢ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KtOperator {
    pub diag: DVector<f64>,
}

impl KtOperator {
    pub fn new(model: &SpectralModel) -> Self {
        Self::from_rates(&model.rates, model.alpha, model.steps)
    }

    pub fn from_rates(rates: &DVector<f64>, alpha: f64, steps: usize) -> Self {
        let t = steps as f64;
        KtOperator {
            diag: rates.map(|l| geometric_sum(1.0 - alpha * l, alpha * l, steps) / t),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.diag.component_mul(v)
    }
}

/// Finite geometric sums `S_ij = Σ_{t<T} (qᵢ qⱼ)ᵗ`.
fn pair_sums(model: &SpectralModel) -> DMatrix<f64> {
    let n = model.dim();
    let q = model.contraction();
    let mut s = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = geometric_sum(q[i] * q[j], model.one_minus_qq(i, j), model.steps);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

/// The closed-form pieces of `P(T)` in the eigenbasis of the model.
#[derive(Debug, Clone)]
pub struct AnalyticParts {
    /// `T P₁^σw`, diagonal.
    pub t_p1_sigma_w: DVector<f64>,
    /// `T P₁^y`.
    pub t_p1_y: DMatrix<f64>,
    /// `K_T ỹ` (so `P₂ = m mᵀ`).
    pub mean_shift: DVector<f64>,
    /// `P_ξ - (1/T) Σ_t K_dᵗ P_ξ K_dᵗ`, present only under SGD noise.
    pub noise: Option<DMatrix<f64>>,
    /// `P(T)` in the eigenbasis.
    pub p: DMatrix<f64>,
    /// `P₁(T)` in the eigenbasis, including the noise term under SGD.
    pub p1: DMatrix<f64>,
}

impl AnalyticParts {
    pub fn new(model: &SpectralModel, noise_cov: Option<&DMatrix<f64>>) -> Result<Self> {
        let n = model.dim();
        let t = model.steps as f64;
        let s = pair_sums(model);
        let y = &model.targets;
        let t_p1_sigma_w =
            DVector::from_fn(n, |i, _| model.sigma_w_sq * model.init_variances[i] * s[(i, i)]);
        let t_p1_y = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * s[(i, j)]);
        let kt = KtOperator::new(model);
        let m = kt.apply(y);

        // The target term and the mean shift cancel exactly at T = 1, so they
        // are combined before the initialization term is added.
        let mut p = DMatrix::from_fn(n, n, |i, j| t_p1_y[(i, j)] / t - m[i] * m[j]);
        for i in 0..n {
            p[(i, i)] += t_p1_sigma_w[i] / t;
        }
        let mut p1 = t_p1_y.clone() / t;
        for i in 0..n {
            p1[(i, i)] += t_p1_sigma_w[i] / t;
        }

        let noise = match noise_cov {
            Some(q) => {
                if q.shape() != (n, n) {
                    return Err(Error::Dimension(format!(
                        "noise covariance is {}x{}, model has dimension {n}",
                        q.nrows(),
                        q.ncols()
                    )));
                }
                // P_ξ - (1/T) Σ_t K_dᵗ P_ξ K_dᵗ = P_ξ ∘ (1 - S/T), evaluated
                // without forming P_ξ so that directions with qᵢqⱼ ≈ 1 stay
                // finite.
                let cq = model.contraction();
                let term = DMatrix::from_fn(n, n, |i, j| {
                    q[(i, j)] * horizon_noise_factor(cq[i] * cq[j], model.one_minus_qq(i, j), s[(i, j)], model.steps)
                });
                p += &term;
                p1 += &term;
                Some(term)
            }
            None => None,
        };
        Ok(AnalyticParts {
            t_p1_sigma_w,
            t_p1_y,
            mean_shift: m,
            noise,
            p,
            p1,
        })
    }

    pub fn lambda_p2(&self) -> f64 {
        self.mean_shift.norm_squared()
    }
}

/// Closed-form decomposition for a spectral model, optionally with a rotated
/// per-step noise covariance.
pub fn analytic_from_model(model: &SpectralModel, noise_cov: Option<&DMatrix<f64>>) -> Result<PcaDecomposition> {
    let parts = AnalyticParts::new(model, noise_cov)?;
    let (lambda_p, vecs) = psd_spectrum(&parts.p, "P(T)")?;
    let lambda_p1 = psd_values(&parts.p1, "P1(T)")?;
    let mut lambda_sigma_w: Vec<f64> = parts.t_p1_sigma_w.iter().map(|v| v.max(0.0)).collect();
    lambda_sigma_w.sort_by(|a, b| b.total_cmp(a));
    let lambda_y = psd_values(&parts.t_p1_y, "T P1^y(T)")?;
    let degenerate = lambda_p.iter().all(|&v| v == 0.0);
    Ok(PcaDecomposition {
        explained_variance: explained(&lambda_p),
        lambda_p,
        lambda_p1: Some(lambda_p1),
        lambda_sigma_w: Some(lambda_sigma_w),
        lambda_y: Some(lambda_y),
        lambda_p2: Some(parts.lambda_p2()),
        lambda_p_stderr: None,
        degenerate,
        basis: Some(&model.basis * vecs),
        matrix: Some(&model.basis * &parts.p * model.basis.transpose()),
    })
}

/// Closed-form `P(T)` for a dataset trained with `config`. SGD configs are
/// routed to [`sgd_analytic_pca`]; weight decay uses the shifted spectrum.
pub fn analytic_pca(dataset: &Dataset, config: &TrainConfig) -> Result<PcaDecomposition> {
    match config.method {
        Method::Sgd { .. } => sgd_analytic_pca(dataset, config),
        _ => analytic_from_model(&SpectralModel::from_dataset(dataset, config)?, None),
    }
}

/// Closed-form `P_sgd(T) = P₁ + P_ξ - (1/T) Σ K_dᵗ P_ξ K_dᵗ - P₂`.
pub fn sgd_analytic_pca(dataset: &Dataset, config: &TrainConfig) -> Result<PcaDecomposition> {
    if !matches!(config.method, Method::Sgd { .. }) {
        return Err(Error::InvalidConfig(format!(
            "expected method sgd, got {}",
            config.method.name()
        )));
    }
    let sim = Simulator::for_dataset(dataset, config)?;
    analytic_from_model(sim.model(), sim.noise_covariance().as_ref())
}

/// `P_ξ = (α/B)(2I - αK)⁻¹ K`, the stationary SGD covariance under the
/// kernel noise model, as a diagonal in the eigenbasis of `K`.
pub fn sgd_stationary_diag(dataset: &Dataset, alpha: f64, batch_size: usize) -> DVector<f64> {
    let b = batch_size as f64;
    dataset.eig.values.map(|l| (alpha / b) * l / (2.0 - alpha * l))
}

/// Solves `K_d P K_d - P + Q = 0` for diagonal `K_d = diag(q)`:
/// `P_ij = Q_ij / (1 - qᵢ qⱼ)`.
pub fn solve_dlyap(q: &DVector<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_contractive(q)?;
    if rhs.shape() != (q.len(), q.len()) {
        return Err(Error::Dimension(format!(
            "contraction of size {} with a {}x{} right-hand side",
            q.len(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    Ok(DMatrix::from_fn(q.len(), q.len(), |i, j| rhs[(i, j)] / (1.0 - q[i] * q[j])))
}

/// [`solve_dlyap`] for a dense symmetric `K_d`, solved in its eigenbasis.
pub fn solve_dlyap_sym(kd: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !kd.is_square() || rhs.shape() != kd.shape() {
        return Err(Error::Dimension(format!(
            "K_d is {}x{}, Q is {}x{}",
            kd.nrows(),
            kd.ncols(),
            rhs.nrows(),
            rhs.ncols()
        )));
    }
    let eig = crate::linalg::sym_eigen(&((kd + kd.transpose()) * 0.5));
    let v = &eig.basis;
    let inner = solve_dlyap(&eig.values, &(v.transpose() * rhs * v))?;
    Ok(eig.conjugate_out(&inner))
}

/// `(1/T) Σ_{t<T} Σ_{s<t} xˢ = (T - S)/(T (1 - x))`, with `S = Σ_{t<T} xᵗ`.
///
/// The closed form loses precision when `T (1 - x)` is small; there the
/// weighted sum `(1/T) Σ_{s ≤ T-2} (T-1-s) xˢ` is evaluated directly.
fn horizon_noise_factor(x: f64, one_minus_x: f64, s: f64, steps: usize) -> f64 {
    let t = steps as f64;
    if t * one_minus_x.abs() > 0.5 {
        return (t - s) / (t * one_minus_x);
    }
    let mut acc = 0.0;
    let mut pow = 1.0;
    for k in 0..steps.saturating_sub(1) {
        acc += (t - 1.0 - k as f64) * pow;
        pow *= x;
    }
    acc / t
}

fn check_contractive(q: &DVector<f64>) -> Result<()> {
    match q.iter().find(|v| !(v.abs() < 1.0)) {
        Some(&v) => Err(Error::NonContractive(v.abs())),
        None => Ok(()),
    }
}

/// Maps the discrete Lyapunov problem to the continuous one solved by the
/// same `P`: returns the spectrum of `K̃_d = (K_d - I)(K_d + I)⁻¹` and
/// `BBᵀ = 2 (K_d + I)⁻¹ Q (K_d + I)⁻¹`.
pub fn continuous_transform(q: &DVector<f64>, rhs: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_contractive(q)?;
    let ktilde = q.map(|v| (v - 1.0) / (v + 1.0));
    let bbt = DMatrix::from_fn(q.len(), q.len(), |i, j| 2.0 * rhs[(i, j)] / ((1.0 + q[i]) * (1.0 + q[j])));
    Ok((ktilde, bbt))
}

/// `b/a = (λ₁/λₙ)(2 - αλₙ)/(2 - αλ₁)`, the condition number of `K̃_d`.
pub fn transformed_condition(alpha: f64, lambda_1: f64, lambda_n: f64) -> f64 {
    (lambda_1 / lambda_n) * (2.0 - alpha * lambda_n) / (2.0 - alpha * lambda_1)
}

/// Trajectory PCA `P(N,T)` of a replayable ensemble, streamed in two passes
/// (mean, then centered scatter) without storing trajectories.
pub fn empirical_pca<S: TrajectorySource + ?Sized>(source: &S) -> Result<PcaDecomposition> {
    let (n, steps, count) = (source.dim(), source.steps(), source.trajectories());
    let points = steps * count;
    if points <= 1 {
        let zero = vec![0.0; n];
        return Ok(PcaDecomposition {
            explained_variance: explained(&zero),
            lambda_p: zero,
            degenerate: true,
            matrix: Some(DMatrix::zeros(n, n)),
            ..Default::default()
        });
    }
    let chunks: Vec<(usize, usize)> = (0..count)
        .step_by(CHUNK)
        .map(|s| (s, (s + CHUNK).min(count)))
        .collect();

    // Sums are taken relative to the first point, which keeps the mean exact
    // when every point coincides and limits cancellation otherwise.
    let origin = {
        let mut buf = DMatrix::zeros(n, steps);
        source.write_trajectory(0, &mut buf);
        buf.column(0).into_owned()
    };
    let sums: Vec<DVector<f64>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut buf = DMatrix::zeros(n, steps);
            let mut acc = DVector::zeros(n);
            for i in lo..hi {
                source.write_trajectory(i, &mut buf);
                for col in buf.column_iter() {
                    acc += col - &origin;
                }
            }
            acc
        })
        .collect();
    let total_points = points as f64;
    let offset = sums.iter().fold(DVector::zeros(n), |a, s| a + s) / total_points;
    let mean = &origin + &offset;

    let scatters: Vec<DMatrix<f64>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut buf = DMatrix::zeros(n, steps);
            let mut acc = DMatrix::zeros(n, n);
            for i in lo..hi {
                source.write_trajectory(i, &mut buf);
                for mut col in buf.column_iter_mut() {
                    col -= &mean;
                }
                let bt = buf.transpose();
                acc.gemm(1.0, &buf, &bt, 1.0);
            }
            acc
        })
        .collect();
    let scatter = scatters.iter().fold(DMatrix::zeros(n, n), |a, s| a + s);
    let p_work = scatter / total_points;

    let (lambda_p, vecs) = psd_spectrum(&p_work, "P(N,T)")?;
    let lambda_p_stderr = batch_errors(&chunks, &sums, &scatters, &offset, steps)?;
    let (basis, matrix) = match source.basis() {
        Some(b) => (b * &vecs, b * &p_work * b.transpose()),
        None => (vecs, p_work),
    };
    let degenerate = lambda_p.iter().all(|&v| v == 0.0);
    Ok(PcaDecomposition {
        explained_variance: explained(&lambda_p),
        lambda_p,
        lambda_p_stderr,
        degenerate,
        basis: Some(basis),
        matrix: Some(matrix),
        ..Default::default()
    })
}

/// Batch-means standard errors of the eigenvalues: chunks are grouped into
/// [`ERROR_BATCHES`] contiguous batches, each batch's own PCA matrix is
/// recovered from its scatter about the global mean, and the spread of the
/// batch spectra gives the error bar.
fn batch_errors(
    chunks: &[(usize, usize)],
    sums: &[DVector<f64>],
    scatters: &[DMatrix<f64>],
    offset: &DVector<f64>,
    steps: usize,
) -> Result<Option<Vec<f64>>> {
    if chunks.len() < 2 * ERROR_BATCHES {
        return Ok(None);
    }
    let per = chunks.len() / ERROR_BATCHES;
    let spectra: Vec<Vec<f64>> = (0..ERROR_BATCHES)
        .into_par_iter()
        .map(|b| {
            let range = b * per..if b + 1 == ERROR_BATCHES { chunks.len() } else { (b + 1) * per };
            let points: usize = chunks[range.clone()].iter().map(|(lo, hi)| (hi - lo) * steps).sum();
            let np = points as f64;
            let mut s = DMatrix::zeros(offset.len(), offset.len());
            let mut sum = DVector::zeros(offset.len());
            for k in range {
                s += &scatters[k];
                sum += &sums[k];
            }
            // Σ_b (r - m_b)(r - m_b)ᵀ = Σ_b (r - m)(r - m)ᵀ - n_b (m_b - m)(m_b - m)ᵀ
            let shift = sum / np - offset;
            s.ger(-np, &shift, &shift, 1.0);
            psd_values(&(s / np), "batch P(N,T)")
        })
        .collect::<Result<_>>()?;
    let g = ERROR_BATCHES as f64;
    let n = offset.len();
    Ok(Some(
        (0..n)
            .map(|k| {
                let mu = spectra.iter().map(|s| s[k]).sum::<f64>() / g;
                let var = spectra.iter().map(|s| (s[k] - mu).powi(2)).sum::<f64>() / (g - 1.0);
                (var / g).sqrt()
            })
            .collect(),
    ))
}

/// `P(M,T) = (1/M) Σ_m P₁⁽ᵐ⁾(T) - P₂(M,T)` for an ensemble of kernels sharing
/// step size and horizon, with `P₂(M,T) = K_{T,M} y yᵀ K_{T,M}`.
pub fn multi_kernel_pca(
    grams: &[Gram],
    y: &DVector<f64>,
    config: &TrainConfig,
    sigma_w_sq: f64,
) -> Result<PcaDecomposition> {
    let first = grams
        .first()
        .ok_or_else(|| Error::InvalidConfig("kernel ensemble is empty".into()))?;
    let n = first.dim();
    if let Some(g) = grams.iter().find(|g| g.dim() != n) {
        return Err(Error::Dimension(format!("Gram matrices of sizes {n} and {}", g.dim())));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!("{} targets for Gram matrices of size {n}", y.len())));
    }
    if grams.iter().any(|g| (g.lambda_1() - 1.0).abs() > 1e-8) {
        log::warn!("kernel ensemble is not normalized to a unit top eigenvalue");
    }
    let m = grams.len() as f64;
    let t = config.steps as f64;
    let pieces: Vec<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> = grams
        .par_iter()
        .map(|g| {
            let model = SpectralModel::from_gram(g, y, config, sigma_w_sq)?;
            let parts = AnalyticParts::new(&model, None)?;
            let v = &model.basis;
            let kt = KtOperator::new(&model);
            let conj = |inner: &DMatrix<f64>| v * inner * v.transpose();
            Ok((
                conj(&DMatrix::from_diagonal(&parts.t_p1_sigma_w)),
                conj(&parts.t_p1_y),
                conj(&DMatrix::from_diagonal(&kt.diag)),
                conj(&parts.p1),
            ))
        })
        .collect::<Result<_>>()?;
    let mut sig = DMatrix::zeros(n, n);
    let mut tgt = DMatrix::zeros(n, n);
    let mut kt = DMatrix::zeros(n, n);
    let mut p1 = DMatrix::zeros(n, n);
    for (a, b, c, d) in &pieces {
        sig += a;
        tgt += b;
        kt += c;
        p1 += d;
    }
    sig /= m;
    tgt /= m;
    kt /= m;
    p1 /= m;
    let shift = &kt * y;
    let mut p = &tgt / t + &sig / t;
    p.ger(-1.0, &shift, &shift, 1.0);
    let p = (&p + p.transpose()) * 0.5;

    let (lambda_p, basis) = psd_spectrum(&p, "P(M,T)")?;
    let degenerate = lambda_p.iter().all(|&v| v == 0.0);
    Ok(PcaDecomposition {
        explained_variance: explained(&lambda_p),
        lambda_p,
        lambda_p1: Some(psd_values(&p1, "P1(M,T)")?),
        lambda_sigma_w: Some(psd_values(&sig, "T P1^sigma_w(M,T)")?),
        lambda_y: Some(psd_values(&tgt, "T P1^y(M,T)")?),
        lambda_p2: Some(shift.norm_squared()),
        lambda_p_stderr: None,
        degenerate,
        basis: Some(basis),
        matrix: Some(p),
    })
}

/// Hyper-ribbon dimension of a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RibbonDim {
    pub dim: usize,
    pub degenerate: bool,
}

/// Smallest `k` whose leading eigenvalues carry at least `threshold` of the
/// total mass. Negative entries are treated as zero.
pub fn hyper_ribbon_dim(eigenvalues: &[f64], threshold: f64) -> Result<RibbonDim> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "explained-variance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut values: Vec<f64> = eigenvalues.iter().map(|v| v.max(0.0)).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("spectrum contains non-finite values".into()));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Ok(RibbonDim {
            dim: 0,
            degenerate: true,
        });
    }
    // Compare the discarded tail against (1 - threshold) of the mass; at
    // threshold 1 this keeps every nonzero eigenvalue.
    let allowance = (1.0 - threshold) * total * (1.0 + 4.0 * f64::EPSILON);
    let mut tail = vec![0.0; values.len() + 1];
    for k in (0..values.len()).rev() {
        tail[k] = tail[k + 1] + values[k];
    }
    let dim = (1..=values.len()).find(|&k| tail[k] <= allowance).unwrap_or(values.len());
    Ok(RibbonDim {
        dim,
        degenerate: false,
    })
}
