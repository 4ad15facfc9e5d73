//! Residual dynamics and trajectory ensembles.
//!
//! Every training method handled here keeps the residual `r_t` on a linear
//! recursion `r_{t+1} = (I - αK) r_t (+ noise)`. All of them are evolved in
//! the eigenbasis of `K`, where the update is a diagonal scaling by
//! `qᵢ = 1 - αλᵢ`, and rotated back to residual coordinates only when an
//! ensemble is materialized.
//!
//! Large ensembles are never stored: a [`Simulator`] regenerates any
//! trajectory on demand from its seeded streams, which is what the streaming
//! PCA in [`crate::manifold`] consumes.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{clamp_psd, sym_eigen, Eigensystem, PSD_CLAMP_TOL};
use crate::rng::{fill_standard_normal, purpose, stream};
use crate::specgen::{sample_initial_weights, Dataset, DatasetSpec};

/// Tolerance on `αλ₁ = 1`, the edge of the stable step-size range.
const STEP_EDGE_TOL: f64 = 1e-12;

/// Residual-space covariance model of the Langevin SGD noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SgdNoise {
    /// Residual noise `(α/√B) X ξ` with covariance `(α²/B) K²`, the form the
    /// closed-form SGD analysis and its head bound assume.
    #[default]
    Kernel,
    /// `ξ ~ N(0, D)` with `D = XᵀX/n - x̄ᵀx̄`, the input covariance.
    InputCovariance,
    /// No noise; SGD reduces to gradient descent.
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Gd,
    Sgd {
        batch_size: usize,
        #[serde(default)]
        noise: SgdNoise,
    },
    WeightDecay {
        lambda_wd: f64,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Gd => "gd",
            Method::Sgd { .. } => "sgd",
            Method::WeightDecay { .. } => "weight_decay",
        }
    }

    /// Shift applied to the spectrum of `K` by the method.
    pub fn spectral_shift(&self) -> f64 {
        match self {
            Method::WeightDecay { lambda_wd } => *lambda_wd,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Step size α.
    pub alpha: f64,
    /// Number of weight updates; trajectories hold `r_0 .. r_{T-1}`.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Ensemble size.
    #[serde(rename = "N")]
    pub trajectories: usize,
    #[serde(flatten)]
    pub method: Method,
}

impl TrainConfig {
    pub fn gd(alpha: f64, steps: usize, trajectories: usize) -> Self {
        TrainConfig {
            alpha,
            steps,
            trajectories,
            method: Method::Gd,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.alpha
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidConfig("T must be at least 1".into()));
        }
        if self.trajectories == 0 {
            return Err(Error::InvalidConfig("N must be at least 1".into()));
        }
        match self.method {
            Method::Sgd { batch_size, .. } if batch_size == 0 => {
                Err(Error::InvalidConfig("batch size must be at least 1".into()))
            }
            Method::WeightDecay { lambda_wd } if !(lambda_wd >= 0.0) || !lambda_wd.is_finite() => {
                Err(Error::InvalidConfig(format!(
                    "weight decay must be non-negative, got {lambda_wd}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Checks `α λ_top ≤ 1`. The edge `α λ_top = 1` is accepted with a
    /// warning.
    pub fn check_step(&self, lambda_top: f64) -> Result<()> {
        self.validate()?;
        let x = self.alpha * lambda_top;
        if x > 1.0 + STEP_EDGE_TOL {
            return Err(Error::StepTooLarge(x));
        }
        if x > 1.0 - STEP_EDGE_TOL {
            log::debug!("step size at the stability edge: alpha * lambda_1 = {x}");
        }
        Ok(())
    }
}

/// Spectrum of `K_λ = K + λ I` used by weight-decayed training.
pub fn weight_decay_operator(dataset: &Dataset, lambda_wd: f64) -> Result<DVector<f64>> {
    if !(lambda_wd >= 0.0) || !lambda_wd.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "weight decay must be non-negative, got {lambda_wd}"
        )));
    }
    Ok(dataset.eig.values.add_scalar(lambda_wd))
}

/// Linear residual dynamics expressed in an orthonormal eigenbasis.
///
/// The ensemble starts from `r₀ ~ N(-y, σw² V diag(init_variances) Vᵀ)` and
/// evolves as `ρ_{t+1} = diag(1 - α rates) ρ_t` in rotated coordinates
/// `ρ = Vᵀ r`.
#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub basis: DMatrix<f64>,
    /// Eigenvalues driving the contraction, descending.
    pub rates: DVector<f64>,
    /// Eigenvalues of the initial residual covariance, in units of `σw²`.
    pub init_variances: DVector<f64>,
    /// `Vᵀ y`.
    pub targets: DVector<f64>,
    pub alpha: f64,
    pub sigma_w_sq: f64,
    pub steps: usize,
}

impl SpectralModel {
    pub fn new(
        eig: &Eigensystem,
        rates: DVector<f64>,
        init_variances: DVector<f64>,
        y: &DVector<f64>,
        alpha: f64,
        sigma_w_sq: f64,
        steps: usize,
    ) -> Result<Self> {
        let n = eig.dim();
        if rates.len() != n || init_variances.len() != n || y.len() != n {
            return Err(Error::Dimension(format!(
                "eigenbasis of size {n} paired with rates {}, variances {}, targets {}",
                rates.len(),
                init_variances.len(),
                y.len()
            )));
        }
        Ok(SpectralModel {
            basis: eig.basis.clone(),
            rates,
            init_variances,
            targets: eig.rotate_in(y),
            alpha,
            sigma_w_sq,
            steps,
        })
    }

    /// Model of a dataset trained with `config`. Weight decay shifts the
    /// rates by `λ_wd`; the initial covariance stays `σw² K`.
    pub fn from_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let shift = config.method.spectral_shift();
        config.check_step(dataset.lambda_1() + shift)?;
        Self::new(
            &dataset.eig,
            dataset.eig.values.add_scalar(shift),
            dataset.eig.values.clone(),
            &dataset.y,
            config.alpha,
            dataset.spec.sigma_w_sq,
            config.steps,
        )
    }

    /// Model of kernel gradient descent on a Gram matrix.
    pub fn from_gram(gram: &Gram, y: &DVector<f64>, config: &TrainConfig, sigma_w_sq: f64) -> Result<Self> {
        config.check_step(gram.lambda_1())?;
        if !(sigma_w_sq >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "initial-weight variance must be non-negative, got {sigma_w_sq}"
            )));
        }
        Self::new(
            &gram.eig,
            gram.eig.values.clone(),
            gram.eig.values.clone(),
            y,
            config.alpha,
            sigma_w_sq,
            config.steps,
        )
    }

    pub fn dim(&self) -> usize {
        self.rates.len()
    }

    /// `qᵢ = 1 - α λᵢ`.
    pub fn contraction(&self) -> DVector<f64> {
        self.rates.map(|l| 1.0 - self.alpha * l)
    }

    /// `1 - qᵢ qⱼ`, computed without cancellation.
    pub fn one_minus_qq(&self, i: usize, j: usize) -> f64 {
        let (a, li, lj) = (self.alpha, self.rates[i], self.rates[j]);
        a * (li + lj) - a * a * li * lj
    }

    pub fn with_steps(&self, steps: usize) -> Self {
        let mut m = self.clone();
        m.steps = steps;
        m
    }
}

/// A source of trajectories that can be replayed on demand.
///
/// Trajectories are written in "working" coordinates; [`basis`] maps them to
/// residual coordinates (`r = basis · ρ`). Sources must be deterministic:
/// writing the same index twice yields identical data.
///
/// [`basis`]: TrajectorySource::basis
pub trait TrajectorySource: Sync {
    fn dim(&self) -> usize;
    fn steps(&self) -> usize;
    fn trajectories(&self) -> usize;
    /// Writes trajectory `index` into `out` (dim × steps, one column per step).
    fn write_trajectory(&self, index: usize, out: &mut DMatrix<f64>);
    /// Orthogonal map from working to residual coordinates, `None` for the
    /// identity.
    fn basis(&self) -> Option<&DMatrix<f64>>;
}

#[derive(Debug, Clone)]
enum InitialState {
    /// `r₀ = X w₀ - y` with `w₀` from the per-trajectory weight streams.
    Weights {
        x: DMatrix<f64>,
        y: DVector<f64>,
        spec: DatasetSpec,
    },
    /// `r₀ = X w₀ - y` with caller-provided weights, one per trajectory.
    Explicit {
        x: DMatrix<f64>,
        y: DVector<f64>,
        weights: Vec<DVector<f64>>,
    },
    /// `r₀ ~ N(-y, σw² K)` drawn directly in the eigenbasis.
    Spectral,
}

#[derive(Debug, Clone)]
enum NoiseFactor {
    /// Rotated noise `scale · diag(d) z`, `z ∈ R^n`.
    Diagonal(DVector<f64>),
    /// Rotated noise `scale · F z`, `z ∈ R^{cols(F)}`.
    Dense(DMatrix<f64>),
}

#[derive(Debug, Clone)]
struct Noise {
    factor: NoiseFactor,
    scale: f64,
}

impl Noise {
    fn width(&self) -> usize {
        match &self.factor {
            NoiseFactor::Diagonal(d) => d.len(),
            NoiseFactor::Dense(f) => f.ncols(),
        }
    }

    fn add_to(&self, seed: u64, trajectory: usize, step: usize, rho: &mut DVector<f64>, z: &mut [f64]) {
        let mut rng = stream(seed, &[purpose::SGD_NOISE, trajectory as u64, step as u64]);
        fill_standard_normal(&mut rng, z);
        match &self.factor {
            NoiseFactor::Diagonal(d) => {
                for ((r, &dk), &zk) in rho.iter_mut().zip(d.iter()).zip(z.iter()) {
                    *r += self.scale * dk * zk;
                }
            }
            NoiseFactor::Dense(f) => {
                let zv = DVector::from_column_slice(z);
                rho.gemv(self.scale, f, &zv, 1.0);
            }
        }
    }

    /// Rotated residual-space covariance of one noise increment.
    fn covariance(&self) -> DMatrix<f64> {
        let s2 = self.scale * self.scale;
        match &self.factor {
            NoiseFactor::Diagonal(d) => DMatrix::from_diagonal(&d.map(|v| s2 * v * v)),
            NoiseFactor::Dense(f) => f * f.transpose() * s2,
        }
    }
}

/// Replayable ensemble generator for one (model, initialization, noise)
/// combination.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: SpectralModel,
    init: InitialState,
    noise: Option<Noise>,
    trajectories: usize,
    seed: u64,
    dataset_ref: String,
    config: TrainConfig,
}

impl Simulator {
    /// Simulator for training `dataset` with `config` (any method).
    pub fn for_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let model = SpectralModel::from_dataset(dataset, config)?;
        let noise = match config.method {
            Method::Sgd { batch_size, noise } => {
                sgd_noise(dataset, &model, noise, config.alpha / (batch_size as f64).sqrt())?
            }
            _ => None,
        };
        Ok(Simulator {
            model,
            init: InitialState::Weights {
                x: dataset.x.clone(),
                y: dataset.y.clone(),
                spec: dataset.spec,
            },
            noise,
            trajectories: config.trajectories,
            seed: dataset.spec.seed,
            dataset_ref: dataset.fingerprint(),
            config: *config,
        })
    }

    /// Simulator for kernel gradient descent on `gram` with targets `y`.
    pub fn for_gram(
        gram: &Gram,
        y: &DVector<f64>,
        config: &TrainConfig,
        sigma_w_sq: f64,
        seed: u64,
    ) -> Result<Self> {
        if !matches!(config.method, Method::Gd) {
            return Err(Error::InvalidConfig(
                "kernel gradient descent supports method gd only".into(),
            ));
        }
        let model = SpectralModel::from_gram(gram, y, config, sigma_w_sq)?;
        Ok(Simulator {
            model,
            init: InitialState::Spectral,
            noise: None,
            trajectories: config.trajectories,
            seed,
            dataset_ref: gram.fingerprint(),
            config: *config,
        })
    }

    /// Replaces the sampled initial weights with explicit ones; the ensemble
    /// size becomes `weights.len()`.
    pub fn with_initial_weights(mut self, weights: Vec<DVector<f64>>) -> Result<Self> {
        let (x, y) = match &self.init {
            InitialState::Weights { x, y, .. } | InitialState::Explicit { x, y, .. } => (x.clone(), y.clone()),
            InitialState::Spectral => {
                return Err(Error::InvalidConfig(
                    "explicit initial weights need a dataset-backed simulator".into(),
                ))
            }
        };
        if let Some(w) = weights.iter().find(|w| w.len() != x.ncols()) {
            return Err(Error::Dimension(format!(
                "initial weights of length {} for inputs of dimension {}",
                w.len(),
                x.ncols()
            )));
        }
        self.trajectories = weights.len();
        self.init = InitialState::Explicit { x, y, weights };
        Ok(self)
    }

    pub fn model(&self) -> &SpectralModel {
        &self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Rotated covariance of one SGD noise increment, if noise is active.
    pub fn noise_covariance(&self) -> Option<DMatrix<f64>> {
        self.noise.as_ref().map(Noise::covariance)
    }

    /// Initial residual of trajectory `index`, in residual coordinates.
    pub fn initial_residual(&self, index: usize) -> DVector<f64> {
        match &self.init {
            InitialState::Weights { x, y, spec } => x * sample_initial_weights(spec, index as u64) - y,
            InitialState::Explicit { x, y, weights } => x * &weights[index] - y,
            InitialState::Spectral => self.model.basis.clone() * self.initial_rotated(index),
        }
    }

    fn initial_rotated(&self, index: usize) -> DVector<f64> {
        match &self.init {
            InitialState::Spectral => {
                let n = self.model.dim();
                let mut z = vec![0.0; n];
                if self.model.sigma_w_sq > 0.0 {
                    fill_standard_normal(&mut stream(self.seed, &[purpose::KERNEL_INIT, index as u64]), &mut z);
                }
                DVector::from_fn(n, |k, _| {
                    let sd = (self.model.sigma_w_sq * self.model.init_variances[k].max(0.0)).sqrt();
                    -self.model.targets[k] + sd * z[k]
                })
            }
            _ => self.model.basis.tr_mul(&self.initial_residual(index)),
        }
    }

    /// Stores every trajectory in residual coordinates.
    pub fn materialize(&self) -> TrajectoryEnsemble {
        let (n, steps) = (self.model.dim(), self.model.steps);
        let mut data = vec![0.0; self.trajectories * steps * n];
        data.par_chunks_mut((steps * n).max(1))
            .enumerate()
            .for_each(|(i, chunk)| {
                let mut rot = DMatrix::zeros(n, steps);
                self.write_trajectory(i, &mut rot);
                let mut res = &self.model.basis * rot;
                if !matches!(self.init, InitialState::Spectral) {
                    res.set_column(0, &self.initial_residual(i));
                }
                chunk.copy_from_slice(res.as_slice());
            });
        TrajectoryEnsemble {
            n,
            steps,
            trajectories: self.trajectories,
            data,
            dataset_ref: self.dataset_ref.clone(),
            config: Some(self.config),
        }
    }
}

impl TrajectorySource for Simulator {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn steps(&self) -> usize {
        self.model.steps
    }

    fn trajectories(&self) -> usize {
        self.trajectories
    }

    fn write_trajectory(&self, index: usize, out: &mut DMatrix<f64>) {
        let q = self.model.contraction();
        let mut rho = self.initial_rotated(index);
        let mut z = vec![0.0; self.noise.as_ref().map_or(0, Noise::width)];
        for t in 0..self.model.steps {
            out.set_column(t, &rho);
            if t + 1 < self.model.steps {
                rho.component_mul_assign(&q);
                if let Some(noise) = &self.noise {
                    noise.add_to(self.seed, index, t, &mut rho, &mut z);
                }
            }
        }
    }

    fn basis(&self) -> Option<&DMatrix<f64>> {
        Some(&self.model.basis)
    }
}

fn sgd_noise(dataset: &Dataset, model: &SpectralModel, kind: SgdNoise, scale: f64) -> Result<Option<Noise>> {
    match kind {
        SgdNoise::Disabled => Ok(None),
        // X ξ with ξ ~ N(0, XᵀX/n²) has covariance K², i.e. diag(λ²) in the
        // eigenbasis of K.
        SgdNoise::Kernel => Ok(Some(Noise {
            factor: NoiseFactor::Diagonal(dataset.eig.values.clone()),
            scale,
        })),
        SgdNoise::InputCovariance => {
            let d = input_covariance(&dataset.x);
            let mut eig = sym_eigen(&d);
            let mut values: Vec<f64> = eig.values.iter().copied().collect();
            clamp_psd(&mut values, PSD_CLAMP_TOL, "input covariance D")?;
            eig.values = DVector::from_vec(values);
            let root = DMatrix::from_diagonal(&eig.values.map(f64::sqrt));
            let factor = model.basis.tr_mul(&dataset.x) * eig.basis * root;
            Ok(Some(Noise {
                factor: NoiseFactor::Dense(factor),
                scale,
            }))
        }
    }
}

/// `D = XᵀX/n - x̄ᵀx̄`, the covariance matrix of the inputs.
pub fn input_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mean = x.row_mean();
    x.tr_mul(x) / n - mean.transpose() * mean
}

/// A stored ensemble of residual trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    pub n: usize,
    pub steps: usize,
    pub trajectories: usize,
    /// Row-major `[trajectory][step][component]`.
    pub data: Vec<f64>,
    pub dataset_ref: String,
    pub config: Option<TrainConfig>,
}

impl TrajectoryEnsemble {
    pub fn residual(&self, trajectory: usize, step: usize) -> &[f64] {
        let start = (trajectory * self.steps + step) * self.n;
        &self.data[start..start + self.n]
    }

    /// Whether `‖r_{t+1}‖ ≤ ‖r_t‖ (1 + rel_tol)` along every trajectory.
    pub fn norms_nonincreasing(&self, rel_tol: f64) -> bool {
        (0..self.trajectories).all(|i| {
            (1..self.steps).all(|t| {
                let prev = norm(self.residual(i, t - 1));
                norm(self.residual(i, t)) <= prev * (1.0 + rel_tol) + f64::MIN_POSITIVE
            })
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl TrajectorySource for TrajectoryEnsemble {
    fn dim(&self) -> usize {
        self.n
    }

    fn steps(&self) -> usize {
        self.steps
    }

    fn trajectories(&self) -> usize {
        self.trajectories
    }

    fn write_trajectory(&self, index: usize, out: &mut DMatrix<f64>) {
        let len = self.steps * self.n;
        out.as_mut_slice()
            .copy_from_slice(&self.data[index * len..(index + 1) * len]);
    }

    fn basis(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

fn require_method(config: &TrainConfig, expected: &str) -> Result<()> {
    if config.method.name() != expected {
        return Err(Error::InvalidConfig(format!(
            "expected method {expected}, got {}",
            config.method.name()
        )));
    }
    Ok(())
}

/// Full-batch gradient descent ensemble.
pub fn gd_ensemble(dataset: &Dataset, config: &TrainConfig) -> Result<TrajectoryEnsemble> {
    require_method(config, "gd")?;
    Ok(Simulator::for_dataset(dataset, config)?.materialize())
}

/// Langevin-approximated SGD ensemble.
pub fn sgd_ensemble(dataset: &Dataset, config: &TrainConfig) -> Result<TrajectoryEnsemble> {
    require_method(config, "sgd")?;
    Ok(Simulator::for_dataset(dataset, config)?.materialize())
}

/// Gradient descent under the weight-decayed operator `K + λ I`.
pub fn weight_decay_ensemble(dataset: &Dataset, config: &TrainConfig) -> Result<TrajectoryEnsemble> {
    require_method(config, "weight_decay")?;
    Ok(Simulator::for_dataset(dataset, config)?.materialize())
}

/// Kernel gradient descent ensemble on a Gram matrix.
pub fn kernel_gd_ensemble(
    gram: &Gram,
    targets: &DVector<f64>,
    config: &TrainConfig,
    sigma_w_sq: f64,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    Ok(Simulator::for_gram(gram, targets, config, sigma_w_sq, seed)?.materialize())
}

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `k(x, x') = x·x'`.
    Linear,
    /// `k(x, x') = exp(-‖x - x'‖² / (bandwidth · d))`; bandwidth 1 is the
    /// `exp(-‖x - x'‖²/d)` convention.
    Rbf { bandwidth: f64 },
    /// A ready-made Gram matrix, used as is (already divided by n).
    Precomputed(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Rescale so that the largest eigenvalue is 1.
    pub normalize: bool,
}

impl KernelSpec {
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            normalize: false,
        }
    }

    pub fn rbf(bandwidth: f64) -> Self {
        KernelSpec {
            kind: KernelKind::Rbf { bandwidth },
            normalize: false,
        }
    }

    pub fn normalized(mut self) -> Self {
        self.normalize = true;
        self
    }
}

/// Gram matrix `K_ij = k(x_i, x_j)/n` with its eigensystem.
#[derive(Debug, Clone)]
pub struct Gram {
    pub matrix: DMatrix<f64>,
    pub eig: Eigensystem,
    /// Factor applied by normalization (1 when not normalized).
    pub scale: f64,
}

impl Gram {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn lambda_1(&self) -> f64 {
        self.eig.values[0]
    }

    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in self.matrix.iter() {
            h.update(v.to_le_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }
}

/// Builds a Gram matrix from sample-by-feature `inputs`.
pub fn build_gram(inputs: &DMatrix<f64>, kernel: &KernelSpec) -> Result<Gram> {
    let mut matrix = match &kernel.kind {
        KernelKind::Linear => {
            ensure_inputs(inputs)?;
            crate::linalg::correlation_gram(inputs)
        }
        KernelKind::Rbf { bandwidth } => {
            ensure_inputs(inputs)?;
            if !(*bandwidth > 0.0) || !bandwidth.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "RBF bandwidth must be positive, got {bandwidth}"
                )));
            }
            let (n, d) = inputs.shape();
            let width = bandwidth * d as f64;
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..=i {
                    let dist2 = (inputs.row(i) - inputs.row(j)).norm_squared();
                    let v = (-dist2 / width).exp() / n as f64;
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            k
        }
        KernelKind::Precomputed(m) => {
            if !m.is_square() || m.nrows() == 0 {
                return Err(Error::Dimension(format!(
                    "precomputed Gram matrix must be square and non-empty, got {}x{}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format("precomputed Gram matrix has non-finite entries".into()));
            }
            let scale = m.amax().max(f64::MIN_POSITIVE);
            let asym = (m - m.transpose()).amax();
            if asym > 1e-8 * scale {
                return Err(Error::Indefinite(format!(
                    "precomputed Gram matrix is not symmetric (max asymmetry {asym:e})"
                )));
            }
            (m + m.transpose()) * 0.5
        }
    };
    let mut eig = sym_eigen(&matrix);
    let mut values: Vec<f64> = eig.values.iter().copied().collect();
    clamp_psd(&mut values, PSD_CLAMP_TOL, "Gram matrix")?;
    eig.values = DVector::from_vec(values);
    let mut scale = 1.0;
    if kernel.normalize {
        let top = eig.values[0];
        if !(top > 0.0) {
            return Err(Error::Indefinite("cannot normalize a zero Gram matrix".into()));
        }
        scale = 1.0 / top;
        matrix *= scale;
        eig.values *= scale;
    }
    Ok(Gram { matrix, eig, scale })
}

fn ensure_inputs(inputs: &DMatrix<f64>) -> Result<()> {
    if inputs.nrows() == 0 || inputs.ncols() == 0 {
        return Err(Error::Dimension("kernel inputs must be non-empty".into()));
    }
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("kernel inputs contain non-finite values".into()));
    }
    Ok(())
}
