//! Synthetic sloppy regression problems and slope estimation.
//!
//! A dataset is built directly from its target spectrum: with random
//! orthonormal factors `U` (n × n) and `W` (d × n),
//! `X = U diag(sqrt(n λ)) Wᵀ` gives `K = X Xᵀ / n = U diag(λ) Uᵀ` exactly, so
//! the eigensystem of `K` is known without a solver.
//!
//! Weight vectors are drawn with per-coordinate variance `σ² / n`. With
//! `K = X Xᵀ / n` this makes `Cov(X w) = σ² K`, which is the scale the
//! closed-form PCA expressions and the target-norm concentration
//! `‖y‖² ≈ σ*² tr K` are written in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{random_orthonormal, sym_eigenvalues, Eigensystem};
use crate::rng::{purpose, standard_normals, stream};

/// Default relative floor for [`estimate_slope`]; eigenvalues below
/// `floor * λ₁` are treated as numerical noise.
pub const DEFAULT_FIT_FLOOR: f64 = 1e-12;

/// Parameters of a synthetic sloppy regression problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    /// Number of samples.
    pub n: usize,
    /// Input dimension; must exceed `n`.
    pub d: usize,
    /// Per-index log-decay rate of the input-correlation spectrum.
    pub c: f64,
    /// Variance of the true weights.
    pub sigma_star_sq: f64,
    /// Variance of the initial weights.
    pub sigma_w_sq: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidSpec("n must be positive".into()));
        }
        if self.n >= self.d {
            return Err(Error::InvalidSpec(format!(
                "model must be over-parameterized (n < d), got n = {} and d = {}",
                self.n, self.d
            )));
        }
        if !self.c.is_finite() || self.c * self.n as f64 <= 1.0 {
            return Err(Error::InvalidSpec(format!(
                "spectrum must be sloppy (c > 1/n), got c = {} with n = {}",
                self.c, self.n
            )));
        }
        if !(self.sigma_star_sq > 0.0) || !self.sigma_star_sq.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "true-weight variance must be positive, got {}",
                self.sigma_star_sq
            )));
        }
        if !(self.sigma_w_sq >= 0.0) || !self.sigma_w_sq.is_finite() {
            return Err(Error::InvalidSpec(format!(
                "initial-weight variance must be non-negative, got {}",
                self.sigma_w_sq
            )));
        }
        Ok(())
    }

    /// `λᵢ = exp(-(i-1) c)` for `i = 1..=n`.
    pub fn spectrum(&self) -> DVector<f64> {
        sloppy_spectrum(self.n, self.c)
    }
}

pub fn sloppy_spectrum(n: usize, c: f64) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|i| (-(i as f64) * c).exp()))
}

/// A synthetic regression problem together with the eigensystem of its
/// input-correlation matrix `K = X Xᵀ / n`.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// n × d inputs, one sample per row.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub w_star: DVector<f64>,
    /// Eigensystem of `K`, eigenvalues descending.
    pub eig: Eigensystem,
    pub spec: DatasetSpec,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// `K = X Xᵀ / n`, formed densely.
    pub fn kernel(&self) -> DMatrix<f64> {
        crate::linalg::correlation_gram(&self.x)
    }

    pub fn lambda_1(&self) -> f64 {
        self.eig.values[0]
    }

    pub fn lambda_n(&self) -> f64 {
        self.eig.values[self.n() - 1]
    }

    /// Targets rotated into the eigenbasis of `K`.
    pub fn rotated_targets(&self) -> DVector<f64> {
        self.eig.rotate_in(&self.y)
    }

    pub fn norm_y_sq(&self) -> f64 {
        self.y.norm_squared()
    }

    /// Short content hash of `X` and `y`, used to tie ensembles and reports
    /// to the data they came from.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n() as u64).to_le_bytes());
        h.update((self.d() as u64).to_le_bytes());
        for v in self.x.iter().chain(self.y.iter()) {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Builds the dataset described by `spec`. Deterministic in `spec.seed`.
pub fn synthesize_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, d) = (spec.n, spec.d);
    let lambda = spec.spectrum();
    let u = random_orthonormal(n, n, &mut stream(spec.seed, &[purpose::DESIGN_LEFT]));
    let w = random_orthonormal(d, n, &mut stream(spec.seed, &[purpose::DESIGN_RIGHT]));
    let scale = DVector::from_iterator(n, lambda.iter().map(|l| (n as f64 * l).sqrt()));
    let x = &u * DMatrix::from_diagonal(&scale) * w.transpose();
    let w_star = sample_true_weights(spec, 0);
    let y = &x * &w_star;
    Ok(Dataset {
        x,
        y,
        w_star,
        eig: Eigensystem {
            basis: u,
            values: lambda,
        },
        spec: *spec,
    })
}

fn scaled_gaussian(seed: u64, path: &[u64], len: usize, variance: f64, n: usize) -> DVector<f64> {
    if variance == 0.0 {
        return DVector::zeros(len);
    }
    let sd = (variance / n as f64).sqrt();
    let z = standard_normals(&mut stream(seed, path), len);
    DVector::from_iterator(len, z.into_iter().map(|v| v * sd))
}

/// True weights for replicate `replicate`; replicate 0 is the one stored in
/// the dataset. Per-coordinate variance is `σ*² / n`.
pub fn sample_true_weights(spec: &DatasetSpec, replicate: u64) -> DVector<f64> {
    scaled_gaussian(
        spec.seed,
        &[purpose::TRUE_WEIGHTS, replicate],
        spec.d,
        spec.sigma_star_sq,
        spec.n,
    )
}

/// Initial weights of trajectory `trajectory_index`, drawn from a stream
/// derived from `(seed, trajectory_index)`. Per-coordinate variance is
/// `σw² / n`; a zero variance yields the zero vector.
pub fn sample_initial_weights(spec: &DatasetSpec, trajectory_index: u64) -> DVector<f64> {
    scaled_gaussian(
        spec.seed,
        &[purpose::INITIAL_WEIGHTS, trajectory_index],
        spec.d,
        spec.sigma_w_sq,
        spec.n,
    )
}

/// Least-squares fit of `ln λᵢ` against `i - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeEstimate {
    pub c_hat: f64,
    /// `None` when the spectrum is flat and the fit is degenerate.
    pub r_squared: Option<f64>,
    /// 1-based, inclusive range of the eigenvalues used in the fit.
    pub index_range: (usize, usize),
    /// Full spectrum, sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Set when the fitted eigenvalues are all equal (including the all-zero
    /// spectrum); `c_hat` is then 0.
    pub flat: bool,
}

/// Estimates the sloppy slope of a sample-by-feature matrix.
///
/// Columns are centered and the spectrum of the empirical correlation
/// matrix is computed from whichever of the n × n and d × d forms is
/// smaller; both share their nonzero eigenvalues.
pub fn estimate_slope(features: &DMatrix<f64>, fit_floor: f64) -> Result<SlopeEstimate> {
    let (n, d) = features.shape();
    if n < 3 {
        return Err(Error::InsufficientSpectrum(format!(
            "need at least 3 samples, got {n}"
        )));
    }
    let mut centered = features.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let corr = if n <= d {
        &centered * centered.transpose() / n as f64
    } else {
        centered.transpose() * &centered / n as f64
    };
    fit_spectrum(&sym_eigenvalues(&corr), fit_floor)
}

/// Fits the slope of an explicit spectrum (sorted or not).
pub fn fit_spectrum(eigenvalues: &[f64], fit_floor: f64) -> Result<SlopeEstimate> {
    if !(fit_floor > 0.0 && fit_floor < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "fit floor must lie in (0, 1), got {fit_floor}"
        )));
    }
    let mut values = eigenvalues.to_vec();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("spectrum contains non-finite values".into()));
    }
    values.sort_by(|a, b| b.total_cmp(a));
    if values.len() < 3 {
        return Err(Error::InsufficientSpectrum(format!(
            "need at least 3 eigenvalues, got {}",
            values.len()
        )));
    }
    let top = values[0].max(0.0);
    let bottom = values[values.len() - 1].max(0.0);
    if top - bottom <= 1e-9 * top || top == 0.0 {
        return Ok(SlopeEstimate {
            c_hat: 0.0,
            r_squared: None,
            index_range: (1, values.len()),
            flat: true,
            eigenvalues: values,
        });
    }
    let used = values.iter().take_while(|&&v| v > fit_floor * top).count();
    if used < 3 {
        return Err(Error::InsufficientSpectrum(format!(
            "only {used} eigenvalue(s) above {fit_floor:e} * lambda_1"
        )));
    }
    let fitted_bottom = values[used - 1];
    if top - fitted_bottom <= 1e-9 * top {
        return Ok(SlopeEstimate {
            c_hat: 0.0,
            r_squared: None,
            index_range: (1, used),
            flat: true,
            eigenvalues: values,
        });
    }
    let xs: Vec<f64> = (0..used).map(|i| i as f64).collect();
    let ys: Vec<f64> = values[..used].iter().map(|v| v.ln()).collect();
    let m = used as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { Some(1.0 - ss_res / ss_tot) } else { None };
    Ok(SlopeEstimate {
        c_hat: -slope,
        r_squared,
        index_range: (1, used),
        flat: false,
        eigenvalues: values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, d: usize, c: f64) -> DatasetSpec {
        DatasetSpec {
            n,
            d,
            c,
            sigma_star_sq: 2.0,
            sigma_w_sq: 0.1,
            seed: 7,
        }
    }

    #[test]
    fn prescribed_spectrum_endpoints() {
        let ds = synthesize_dataset(&spec(50, 100, 0.1)).unwrap();
        assert_eq!(ds.lambda_1(), 1.0);
        assert!((ds.lambda_n() - (-4.9f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn slope_near_boundary() {
        assert!(synthesize_dataset(&spec(50, 100, 0.02)).is_err());
        assert!(synthesize_dataset(&spec(50, 100, 1e-9)).is_err());
        let ds = synthesize_dataset(&spec(50, 100, 0.021)).unwrap();
        assert!((ds.lambda_n() - (-49.0f64 * 0.021).exp()).abs() < 1e-15);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(matches!(
            synthesize_dataset(&spec(100, 100, 0.1)),
            Err(Error::InvalidSpec(_))
        ));
        let mut s = spec(10, 20, 0.5);
        s.sigma_star_sq = 0.0;
        assert!(synthesize_dataset(&s).is_err());
        s.sigma_star_sq = 1.0;
        s.sigma_w_sq = -1.0;
        assert!(synthesize_dataset(&s).is_err());
    }

    #[test]
    fn targets_are_linear_in_true_weights() {
        let ds = synthesize_dataset(&spec(20, 40, 0.3)).unwrap();
        let y = &ds.x * &ds.w_star;
        assert!((y - &ds.y).norm() <= 1e-10 * ds.y.norm());
    }

    #[test]
    fn kernel_matches_stored_eigensystem() {
        let ds = synthesize_dataset(&spec(30, 45, 0.4)).unwrap();
        let k = ds.kernel();
        assert!((ds.eig.reconstruct() - k).norm() <= 1e-10 * ds.lambda_1());
        assert!(ds.eig.values.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn zero_variance_initialization() {
        let mut s = spec(10, 20, 0.5);
        s.sigma_w_sq = 0.0;
        assert!(sample_initial_weights(&s, 3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn initial_weights_replay() {
        let s = spec(10, 20, 0.5);
        let a = sample_initial_weights(&s, 11);
        let b = sample_initial_weights(&s, 11);
        assert_eq!(a.as_slice(), b.as_slice());
        assert_ne!(a.as_slice(), sample_initial_weights(&s, 12).as_slice());
    }

    #[test]
    fn exact_geometric_spectrum() {
        let e = (-1.0f64).exp();
        let est = fit_spectrum(&[1.0, e, e * e], DEFAULT_FIT_FLOOR).unwrap();
        assert!((est.c_hat - 1.0).abs() < 1e-12);
        assert!((est.r_squared.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(est.index_range, (1, 3));
    }

    #[test]
    fn flat_spectrum_is_flagged() {
        // Centering removes one direction; the remaining five are equal.
        let est = estimate_slope(&DMatrix::identity(6, 6), DEFAULT_FIT_FLOOR).unwrap();
        assert!(est.flat);
        assert_eq!(est.c_hat, 0.0);
        assert_eq!(est.index_range, (1, 5));
        let flat = fit_spectrum(&[0.5; 8], DEFAULT_FIT_FLOOR).unwrap();
        assert!(flat.flat);
        assert_eq!(flat.c_hat, 0.0);
        assert!(flat.r_squared.is_none());
    }

    #[test]
    fn constant_features_are_flat() {
        let est = estimate_slope(&DMatrix::from_element(10, 4, 3.5), DEFAULT_FIT_FLOOR).unwrap();
        assert!(est.flat);
        assert_eq!(est.c_hat, 0.0);
    }

    #[test]
    fn single_column_is_insufficient() {
        let col = DMatrix::from_fn(12, 1, |i, _| i as f64);
        assert!(matches!(
            estimate_slope(&col, DEFAULT_FIT_FLOOR),
            Err(Error::InsufficientSpectrum(_))
        ));
    }

    #[test]
    fn fit_floor_domain() {
        assert!(fit_spectrum(&[1.0, 0.5, 0.25], 0.0).is_err());
        assert!(fit_spectrum(&[1.0, 0.5, 0.25], 1.0).is_err());
    }
}
