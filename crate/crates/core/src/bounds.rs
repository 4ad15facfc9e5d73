//! Analytic eigenvalue bounds on the trajectory-PCA spectrum and their
//! verification against the closed-form spectra.
//!
//! The bounds all follow one pattern. The target Gramian `T P₁^y` has a
//! spectrum that decays at least like `ρ^{-k}`, where `ρ` depends only on
//! the condition number of `K`. The initialization term `T P₁^σw` is bounded
//! entrywise. Weyl's inequality then combines the two, splitting the index
//! range at `k*`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{build_gram, Gram, KernelSpec, Method, SgdNoise, SpectralModel, TrainConfig};
use crate::error::{Error, Result};
use crate::linalg::geometric_sum;
use crate::manifold::{analytic_pca, multi_kernel_pca, PcaDecomposition};
use crate::rng::{purpose, stream};
use crate::specgen::{fit_spectrum, synthesize_dataset, Dataset, DatasetSpec, DEFAULT_FIT_FLOOR};

pub const REPORT_SCHEMA: u32 = 1;

/// Relative slack allowed before a bound counts as violated.
pub const BOUND_REL_TOL: f64 = 1e-9;

/// Upper bound on `λᵢ^σw`: `(σw²/α) min{1, 2Tαλᵢ}/(2 - αλᵢ)`.
pub fn sigma_w_bound(alpha: f64, steps: usize, sigma_w_sq: f64, lambda_i: f64) -> Result<f64> {
    let x = alpha * lambda_i;
    if x > 1.0 + 1e-12 {
        return Err(Error::StepTooLarge(x));
    }
    if steps == 0 {
        return Err(Error::InvalidConfig("T must be at least 1".into()));
    }
    let t = steps as f64;
    Ok(sigma_w_sq / alpha * (2.0 * t * x).min(1.0) / (2.0 - x))
}

/// `ρ = exp(π² / (2 ln(8λ₁/λₙ - 4)))`.
pub fn rho_of_spectrum(lambda_1: f64, lambda_n: f64) -> Result<f64> {
    if !(lambda_n > 0.0) || !(lambda_1 > lambda_n) || !lambda_1.is_finite() {
        return Err(Error::BoundUndefined(format!(
            "decay rate needs lambda_1 > lambda_n > 0, got {lambda_1} and {lambda_n}"
        )));
    }
    let kappa = lambda_1 / lambda_n;
    let arg = 8.0 * kappa - 4.0;
    Ok((std::f64::consts::PI.powi(2) / (2.0 * arg.ln())).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBound {
    /// `4ρ^{-2i}/(1 + ρ^{-4i})²`.
    pub tight: f64,
    /// `4ρ^{-2i}`.
    pub loose: f64,
}

/// Bound on `λ_{1+2i}^y / λ₁^y`.
pub fn lemma1_ratio_bound(i: usize, rho: f64) -> RatioBound {
    let a = rho.powf(-2.0 * i as f64);
    RatioBound {
        tight: 4.0 * a / (1.0 + a * a).powi(2),
        loose: 4.0 * a,
    }
}

/// Lemma 1 bound for the 1-based index `k` of a sorted spectrum. Even
/// indices inherit the bound of the odd index just above them.
pub fn lemma1_index_bound(k: usize, rho: f64) -> RatioBound {
    lemma1_ratio_bound((k.max(1) - 1) / 2, rho)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Interval {
    /// `‖y‖²`.
    pub lower: f64,
    /// `λ̃ₙ ‖y‖²`.
    pub upper: f64,
    /// `σ*² tr K`, where `‖y‖²` concentrates.
    pub concentration_center: f64,
    /// `λ̃ᵢ = Σ_{t<T} (1 - αλᵢ)^{2t}`, in the order of the spectrum.
    pub lambda_tilde: Vec<f64>,
}

pub fn lemma2_interval(dataset: &Dataset, config: &TrainConfig) -> Result<Lemma2Interval> {
    let model = SpectralModel::from_dataset(dataset, config)?;
    let lambda_tilde: Vec<f64> = model
        .rates
        .iter()
        .map(|&l| {
            let q = 1.0 - model.alpha * l;
            geometric_sum(q * q, model.alpha * l * (2.0 - model.alpha * l), model.steps)
        })
        .collect();
    let top = lambda_tilde.iter().copied().fold(0.0, f64::max);
    let norm_y_sq = dataset.norm_y_sq();
    Ok(Lemma2Interval {
        lower: norm_y_sq,
        upper: top * norm_y_sq,
        concentration_center: dataset.spec.sigma_star_sq * dataset.eig.values.sum(),
        lambda_tilde,
    })
}

/// Which split of the index range the Lemma 3 proof uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaRegime {
    /// `2Tα ≤ 1`: no usable split, the bound is the trivial 1.
    Outside,
    /// Split at `k*`.
    ShortTime,
    /// Both splits apply; the smaller bound is used.
    Intermediate,
    /// Split at `n/2`, which leaves only the head branch.
    LongTime,
}

/// Everything the index bounds need about one training setup.
#[derive(Debug, Clone)]
pub struct BoundContext {
    /// Spectrum driving the dynamics, descending.
    pub rates: DVector<f64>,
    pub c: f64,
    pub alpha: f64,
    pub steps: usize,
    pub sigma_w_sq: f64,
    pub norm_y_sq: f64,
    pub rho: f64,
}

impl BoundContext {
    /// Context for a dataset; weight decay shifts the spectrum, `c` stays the
    /// dataset slope.
    pub fn for_dataset(dataset: &Dataset, config: &TrainConfig) -> Result<Self> {
        let model = SpectralModel::from_dataset(dataset, config)?;
        let n = model.dim();
        let rho = rho_of_spectrum(model.rates[0], model.rates[n - 1])?;
        Ok(BoundContext {
            rates: model.rates,
            c: dataset.spec.c,
            alpha: config.alpha,
            steps: config.steps,
            sigma_w_sq: dataset.spec.sigma_w_sq,
            norm_y_sq: dataset.norm_y_sq(),
            rho,
        })
    }

    pub fn n(&self) -> usize {
        self.rates.len()
    }

    /// `k* = min{ln(2Tα)/(2c), n/2}`, or `None` when `2Tα ≤ 1`.
    pub fn k_star(&self) -> Option<f64> {
        let arg = 2.0 * self.steps as f64 * self.alpha;
        if arg <= 1.0 {
            return None;
        }
        let half = self.n() as f64 / 2.0;
        if self.c > 0.0 {
            Some((arg.ln() / (2.0 * self.c)).min(half))
        } else {
            Some(half)
        }
    }

    pub fn regime(&self) -> LemmaRegime {
        if self.k_star().is_none() {
            return LemmaRegime::Outside;
        }
        let n = self.n();
        let kappa = self.rates[0] / self.rates[n - 1];
        let t = self.steps as f64;
        let (a, b) = (kappa / 2.0, kappa / (2.0 * self.alpha));
        let (lo, hi) = (a.min(b), a.max(b));
        if t < lo {
            LemmaRegime::ShortTime
        } else if t >= hi {
            LemmaRegime::LongTime
        } else {
            LemmaRegime::Intermediate
        }
    }

    /// `σw² / (α ‖y‖²)`.
    fn init_weight(&self) -> f64 {
        self.sigma_w_sq / (self.alpha * self.norm_y_sq)
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i == 0 || i > self.n() {
            return Err(Error::IndexOutOfRange { index: i, len: self.n() });
        }
        Ok(())
    }

    /// Rate at a real-valued 1-based subscript, floored and clamped.
    fn rate_at(&self, sub: f64) -> f64 {
        let k = (sub.floor() as i64).clamp(1, self.n() as i64) as usize;
        self.rates[k - 1]
    }

    /// Weyl split of the index range at `k`.
    fn split_bound(&self, i: usize, k: f64) -> (f64, Branch) {
        let w = self.init_weight();
        let fi = i as f64;
        if fi <= 2.0 * k {
            let v = (4.0 * self.rho.powf(-(fi - 1.0)) + w).min(1.0);
            (v, Branch::Head)
        } else {
            let t = self.steps as f64;
            let lam = self.rate_at(fi - k + 1.0);
            let v = 4.0 * self.rho.powf(-(k - 1.0)) + w * (2.0 * self.alpha * t * lam).min(1.0);
            (v, Branch::Tail)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Head,
    Tail,
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexBound {
    pub value: f64,
    pub branch: Branch,
    pub regime: LemmaRegime,
}

/// Lemma 3 bound on `λᵢ^{P₁}/λ₁^{P₁}` from a context.
pub fn lemma3_from_context(i: usize, ctx: &BoundContext) -> Result<IndexBound> {
    ctx.check_index(i)?;
    let regime = ctx.regime();
    let half = ctx.n() as f64 / 2.0;
    let (value, branch) = match regime {
        LemmaRegime::Outside => (1.0, Branch::Trivial),
        LemmaRegime::ShortTime => ctx.split_bound(i, ctx.k_star().unwrap_or(half)),
        LemmaRegime::LongTime => ctx.split_bound(i, half),
        LemmaRegime::Intermediate => {
            let a = ctx.split_bound(i, ctx.k_star().unwrap_or(half));
            let b = ctx.split_bound(i, half);
            if a.0 <= b.0 {
                a
            } else {
                b
            }
        }
    };
    Ok(IndexBound { value, branch, regime })
}

pub fn lemma3_bound(i: usize, dataset: &Dataset, config: &TrainConfig) -> Result<IndexBound> {
    lemma3_from_context(i, &BoundContext::for_dataset(dataset, config)?)
}

fn head_only(i: usize, ctx: &BoundContext, extra: f64) -> Result<f64> {
    ctx.check_index(i)?;
    let k = ctx.k_star().ok_or_else(|| {
        Error::BoundUndefined("2 T alpha <= 1 leaves no head range".into())
    })?;
    if i as f64 > 2.0 * k {
        return Err(Error::HeadBoundOnly { index: i, limit: 2.0 * k });
    }
    Ok((4.0 * ctx.rho.powf(-(i as f64 - 1.0)) + ctx.init_weight() + extra / ctx.norm_y_sq).min(1.0))
}

/// `min{1, 4ρ^{-(i-1)} + (σw²/α + α/B)/‖y‖²}` for `i ≤ 2k*`.
pub fn sgd_head_from_context(i: usize, ctx: &BoundContext, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    head_only(i, ctx, ctx.alpha / batch_size as f64)
}

/// Head bound with the noise term scaled by the horizon:
/// `min{1, 4ρ^{-(i-1)} + (σw²/α + T (α/B) λ₁/(2 - αλ₁))/‖y‖²}`.
///
/// The noise part of `T P₁` is bounded by `T P_ξ`, whose top eigenvalue is
/// `T (α/B) λ₁/(2 - αλ₁)`; the `α/B` form above drops the factor `T` and
/// fails once `T α/B` is comparable to `‖y‖²`.
pub fn sgd_horizon_head_from_context(i: usize, ctx: &BoundContext, batch_size: usize) -> Result<f64> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    let l1 = ctx.rates[0];
    let stationary_top = ctx.alpha / batch_size as f64 * l1 / (2.0 - ctx.alpha * l1);
    head_only(i, ctx, ctx.steps as f64 * stationary_top)
}

pub fn sgd_head_bound(i: usize, dataset: &Dataset, config: &TrainConfig) -> Result<f64> {
    let Method::Sgd { batch_size, .. } = config.method else {
        return Err(Error::InvalidConfig("SGD head bound needs an sgd config".into()));
    };
    sgd_head_from_context(i, &BoundContext::for_dataset(dataset, config)?, batch_size)
}

/// `min{1, 4ρ_λ^{-(i-1)} + (σw²/α + λ)/‖y‖²}` with `ρ_λ` from the shifted
/// spectrum.
pub fn weight_decay_head_bound(
    i: usize,
    dataset: &Dataset,
    config: &TrainConfig,
    lambda_wd: f64,
) -> Result<f64> {
    let cfg = config.with_method(Method::WeightDecay { lambda_wd });
    let ctx = BoundContext::for_dataset(dataset, &cfg)?;
    head_only(i, &ctx, lambda_wd)
}

/// Per-kernel quantities for the kernel-ensemble bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelEnsembleContext {
    pub rho: Vec<f64>,
    pub slopes: Vec<f64>,
    pub k_star: Option<f64>,
    #[serde(skip)]
    spectra: Vec<DVector<f64>>,
    alpha: f64,
    steps: usize,
    sigma_w_sq: f64,
    norm_y_sq: f64,
}

impl KernelEnsembleContext {
    pub fn new(grams: &[Gram], config: &TrainConfig, sigma_w_sq: f64, norm_y_sq: f64) -> Result<Self> {
        if grams.is_empty() {
            return Err(Error::InvalidConfig("kernel ensemble is empty".into()));
        }
        let n = grams[0].dim();
        if grams.iter().any(|g| g.dim() != n) {
            return Err(Error::Dimension("Gram matrices of different sizes".into()));
        }
        if let Some(g) = grams.iter().find(|g| (g.lambda_1() - 1.0).abs() > 1e-8) {
            return Err(Error::InvalidConfig(format!(
                "kernel ensemble bound needs normalized kernels, got lambda_1 = {}",
                g.lambda_1()
            )));
        }
        config.check_step(1.0)?;
        let mut rho = Vec::with_capacity(grams.len());
        let mut slopes = Vec::with_capacity(grams.len());
        for g in grams {
            let values: Vec<f64> = g.eig.values.iter().copied().collect();
            rho.push(rho_of_spectrum(values[0], values[n - 1])?);
            let fit = fit_spectrum(&values, DEFAULT_FIT_FLOOR)?;
            slopes.push(fit.c_hat);
        }
        let arg = 2.0 * config.steps as f64 * config.alpha;
        let half = n as f64 / 2.0;
        let k_star = (arg > 1.0).then(|| {
            slopes
                .iter()
                .map(|&c| if c > 0.0 { arg.ln() / (2.0 * c) } else { half })
                .fold(half, f64::min)
        });
        Ok(KernelEnsembleContext {
            rho,
            slopes,
            k_star,
            spectra: grams.iter().map(|g| g.eig.values.clone()).collect(),
            alpha: config.alpha,
            steps: config.steps,
            sigma_w_sq,
            norm_y_sq,
        })
    }

    pub fn bound(&self, i: usize) -> Result<IndexBound> {
        let n = self.spectra[0].len();
        if i == 0 || i > n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        let Some(k) = self.k_star else {
            return Ok(IndexBound {
                value: 1.0,
                branch: Branch::Trivial,
                regime: LemmaRegime::Outside,
            });
        };
        let m = self.rho.len() as f64;
        let w = self.sigma_w_sq / (self.alpha * self.norm_y_sq);
        let stretched = ((i - 1) / self.rho.len()) as f64;
        let (value, branch) = if i as f64 <= 2.0 * k {
            let s: f64 = self.rho.iter().map(|r| r.powf(-stretched)).sum();
            ((4.0 / m * s + w).min(1.0), Branch::Head)
        } else {
            let t = self.steps as f64;
            let sub = ((stretched - k + 2.0).floor() as i64).clamp(1, n as i64) as usize;
            let s: f64 = self
                .rho
                .iter()
                .zip(&self.spectra)
                .map(|(r, lam)| 4.0 * r.powf(-(k - 1.0)) + w * (2.0 * self.alpha * t * lam[sub - 1]).min(1.0))
                .sum();
            (s / m, Branch::Tail)
        };
        Ok(IndexBound {
            value,
            branch,
            regime: LemmaRegime::ShortTime,
        })
    }
}

/// Bound on `λᵢ^{P₁}/λ₁^{P₁}` for an ensemble of `M` normalized kernels.
pub fn kernel_ensemble_bound(
    i: usize,
    grams: &[Gram],
    config: &TrainConfig,
    sigma_w_sq: f64,
    norm_y_sq: f64,
) -> Result<IndexBound> {
    KernelEnsembleContext::new(grams, config, sigma_w_sq, norm_y_sq)?.bound(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundFamily {
    SigmaW,
    Lemma1Tight,
    Lemma1Loose,
    Lemma2Lower,
    Lemma2Upper,
    Lemma3,
    SgdHead,
    SgdHeadHorizon,
    WeightDecayHead,
    KernelEnsemble,
    WeylUpper,
    WeylLower,
    P2Decay,
}

impl BoundFamily {
    pub fn name(&self) -> &'static str {
        match self {
            BoundFamily::SigmaW => "sigma_w",
            BoundFamily::Lemma1Tight => "lemma1_tight",
            BoundFamily::Lemma1Loose => "lemma1_loose",
            BoundFamily::Lemma2Lower => "lemma2_lower",
            BoundFamily::Lemma2Upper => "lemma2_upper",
            BoundFamily::Lemma3 => "lemma3",
            BoundFamily::SgdHead => "sgd_head",
            BoundFamily::SgdHeadHorizon => "sgd_head_horizon",
            BoundFamily::WeightDecayHead => "weight_decay_head",
            BoundFamily::KernelEnsemble => "kernel_ensemble",
            BoundFamily::WeylUpper => "weyl_upper",
            BoundFamily::WeylLower => "weyl_lower",
            BoundFamily::P2Decay => "p2_decay",
        }
    }
}

/// One bound evaluation: `numeric ≤ bound` is the claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub family: BoundFamily,
    pub index: usize,
    pub numeric: f64,
    pub bound: f64,
    pub satisfied: bool,
    /// `(bound - numeric) / max(|bound|, scale)`.
    pub slack: f64,
    /// Absolute scale below which differences are roundoff.
    #[serde(skip)]
    pub scale: f64,
}

impl BoundRecord {
    pub fn new(family: BoundFamily, index: usize, numeric: f64, bound: f64, scale: f64) -> Self {
        let mut r = BoundRecord {
            family,
            index,
            numeric,
            bound,
            satisfied: false,
            slack: 0.0,
            scale,
        };
        r.evaluate();
        r
    }

    fn evaluate(&mut self) {
        let denom = self.bound.abs().max(self.scale);
        self.slack = if denom > 0.0 {
            (self.bound - self.numeric) / denom
        } else {
            self.bound - self.numeric
        };
        self.satisfied = self.numeric.is_finite()
            && self.bound.is_finite()
            && self.numeric <= self.bound + BOUND_REL_TOL * denom;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub n: usize,
    pub d: Option<usize>,
    pub c: Option<f64>,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub sigma_w_sq: f64,
    pub sigma_star_sq: Option<f64>,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub hrb_schema: u32,
    pub config_summary: ConfigSummary,
    pub rho: f64,
    pub k_star: Option<f64>,
    pub regime: LemmaRegime,
    pub lemma2_interval: Option<Lemma2Interval>,
    /// Fitted per-index log-decay of `λ^y` divided by `ln ρ`; values near 2
    /// mean the spectrum decays twice as fast as the Lemma 1 guarantee.
    pub lemma1_decay_ratio: Option<f64>,
    pub per_index: Vec<BoundRecord>,
    pub violations: Vec<BoundRecord>,
}

impl BoundReport {
    fn new(config_summary: ConfigSummary, rho: f64, k_star: Option<f64>, regime: LemmaRegime) -> Self {
        BoundReport {
            hrb_schema: REPORT_SCHEMA,
            config_summary,
            rho,
            k_star,
            regime,
            lemma2_interval: None,
            lemma1_decay_ratio: None,
            per_index: Vec::new(),
            violations: Vec::new(),
        }
    }

    pub fn push(&mut self, record: BoundRecord) {
        if !record.satisfied {
            self.violations.push(record.clone());
        }
        self.per_index.push(record);
    }

    /// Replaces the bound value of one record and re-evaluates it. Returns
    /// whether the record exists.
    pub fn override_bound(&mut self, family: BoundFamily, index: usize, bound: f64) -> bool {
        let Some(pos) = self.per_index.iter().position(|r| r.family == family && r.index == index) else {
            return false;
        };
        let rec = &mut self.per_index[pos];
        rec.bound = bound;
        rec.evaluate();
        let rec = rec.clone();
        self.violations.retain(|v| !(v.family == family && v.index == index));
        if !rec.satisfied {
            self.violations.push(rec);
        }
        true
    }

    pub fn families(&self) -> Vec<BoundFamily> {
        let mut f: Vec<BoundFamily> = self.per_index.iter().map(|r| r.family).collect();
        f.sort();
        f.dedup();
        f
    }

    pub fn records(&self, family: BoundFamily) -> impl Iterator<Item = &BoundRecord> {
        self.per_index.iter().filter(move |r| r.family == family)
    }

    /// Per-index table as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("family,index,numeric,bound,satisfied,slack\n");
        for r in &self.per_index {
            out.push_str(&format!(
                "{},{},{:e},{:e},{},{:e}\n",
                r.family.name(),
                r.index,
                r.numeric,
                r.bound,
                r.satisfied,
                r.slack
            ));
        }
        out
    }
}

/// Least-squares slope of `ln(λ_k/λ₁)` against `k`, over ratios above 1e-12.
fn decay_rate(values: &[f64]) -> Option<f64> {
    let top = *values.first()?;
    if !(top > 0.0) {
        return None;
    }
    let pts: Vec<(f64, f64)> = values
        .iter()
        .enumerate()
        .take_while(|(_, &v)| v / top > 1e-12)
        .map(|(k, &v)| (k as f64, (v / top).ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(-sxy / sxx)
}

fn weyl_records(report: &mut BoundReport, pca: &PcaDecomposition) {
    let (Some(p1), Some(p2)) = (pca.lambda_p1.as_ref(), pca.lambda_p2) else {
        return;
    };
    let scale = p1[0];
    let p = &pca.lambda_p;
    for i in 0..p.len() {
        report.push(BoundRecord::new(BoundFamily::WeylUpper, i + 1, p[i], p1[i], scale));
        let below = p1.get(i + 1).copied().unwrap_or(0.0).max(p1[i] - p2);
        report.push(BoundRecord::new(BoundFamily::WeylLower, i + 1, below, p[i], scale));
    }
}

/// Ratios `λ_k/λ₁` of a spectrum (zero when `λ₁` vanishes).
fn ratios(values: &[f64]) -> Vec<f64> {
    let top = values[0];
    values.iter().map(|&v| if top > 0.0 { v / top } else { 0.0 }).collect()
}

/// Evaluates every bound that applies to `config` on `dataset`.
pub fn verify_bounds(dataset: &Dataset, config: &TrainConfig) -> Result<BoundReport> {
    let ctx = BoundContext::for_dataset(dataset, config)?;
    let pca = analytic_pca(dataset, config)?;
    let summary = ConfigSummary {
        n: dataset.n(),
        d: Some(dataset.d()),
        c: Some(dataset.spec.c),
        alpha: config.alpha,
        steps: config.steps,
        sigma_w_sq: dataset.spec.sigma_w_sq,
        sigma_star_sq: Some(dataset.spec.sigma_star_sq),
        method: config.method.name().to_string(),
    };
    let mut report = BoundReport::new(summary, ctx.rho, ctx.k_star(), ctx.regime());
    let n = dataset.n();

    let sigma = pca.lambda_sigma_w.as_ref().expect("analytic decomposition");
    for i in 0..n {
        let b = sigma_w_bound(ctx.alpha, ctx.steps, ctx.sigma_w_sq, ctx.rates[i])?;
        report.push(BoundRecord::new(BoundFamily::SigmaW, i + 1, sigma[i], b, 0.0));
    }

    let lam_y = pca.lambda_y.as_ref().expect("analytic decomposition");
    let y_ratio = ratios(lam_y);
    for (k, &r) in y_ratio.iter().enumerate() {
        let b = lemma1_index_bound(k + 1, ctx.rho);
        report.push(BoundRecord::new(BoundFamily::Lemma1Tight, k + 1, r, b.tight, 1.0));
        report.push(BoundRecord::new(BoundFamily::Lemma1Loose, k + 1, r, b.loose, 1.0));
    }
    report.lemma1_decay_ratio = decay_rate(lam_y).map(|r| r / ctx.rho.ln());

    let interval = lemma2_interval(dataset, config)?;
    report.push(BoundRecord::new(BoundFamily::Lemma2Lower, 1, interval.lower, lam_y[0], 0.0));
    report.push(BoundRecord::new(BoundFamily::Lemma2Upper, 1, lam_y[0], interval.upper, 0.0));
    report.lemma2_interval = Some(interval);

    let p1_ratio = ratios(pca.lambda_p1.as_ref().expect("analytic decomposition"));
    for i in 1..=n {
        match config.method {
            Method::Gd => {
                let b = lemma3_from_context(i, &ctx)?;
                report.push(BoundRecord::new(BoundFamily::Lemma3, i, p1_ratio[i - 1], b.value, 1.0));
            }
            Method::Sgd { batch_size, noise } => {
                if noise == SgdNoise::InputCovariance {
                    continue;
                }
                match sgd_head_from_context(i, &ctx, batch_size) {
                    Ok(b) => report.push(BoundRecord::new(BoundFamily::SgdHead, i, p1_ratio[i - 1], b, 1.0)),
                    Err(Error::HeadBoundOnly { .. } | Error::BoundUndefined(_)) => break,
                    Err(e) => return Err(e),
                }
                let b = sgd_horizon_head_from_context(i, &ctx, batch_size)?;
                report.push(BoundRecord::new(BoundFamily::SgdHeadHorizon, i, p1_ratio[i - 1], b, 1.0));
            }
            Method::WeightDecay { lambda_wd } => match head_only(i, &ctx, lambda_wd) {
                Ok(b) => report.push(BoundRecord::new(BoundFamily::WeightDecayHead, i, p1_ratio[i - 1], b, 1.0)),
                Err(Error::HeadBoundOnly { .. } | Error::BoundUndefined(_)) => break,
                Err(e) => return Err(e),
            },
        }
    }

    weyl_records(&mut report, &pca);
    let lam_n = ctx.rates[n - 1];
    let t = ctx.steps as f64;
    let p2_bound = ctx.norm_y_sq / (ctx.alpha * t * lam_n).powi(2);
    report.push(BoundRecord::new(BoundFamily::P2Decay, 1, pca.lambda_p2.unwrap_or(0.0), p2_bound, 0.0));
    Ok(report)
}

/// Checks the kernel-ensemble bound against `multi_kernel_pca`.
pub fn verify_kernel_bounds(
    grams: &[Gram],
    y: &DVector<f64>,
    config: &TrainConfig,
    sigma_w_sq: f64,
) -> Result<BoundReport> {
    let norm_y_sq = y.norm_squared();
    let kctx = KernelEnsembleContext::new(grams, config, sigma_w_sq, norm_y_sq)?;
    let pca = multi_kernel_pca(grams, y, config, sigma_w_sq)?;
    let n = grams[0].dim();
    let summary = ConfigSummary {
        n,
        d: None,
        c: kctx.slopes.iter().copied().reduce(f64::min),
        alpha: config.alpha,
        steps: config.steps,
        sigma_w_sq,
        sigma_star_sq: None,
        method: format!("kernel_ensemble(M={})", grams.len()),
    };
    let rho = kctx.rho.iter().copied().fold(f64::INFINITY, f64::min);
    let regime = if kctx.k_star.is_some() { LemmaRegime::ShortTime } else { LemmaRegime::Outside };
    let mut report = BoundReport::new(summary, rho, kctx.k_star, regime);
    let p1_ratio = ratios(pca.lambda_p1.as_ref().expect("analytic decomposition"));
    for i in 1..=n {
        let b = kctx.bound(i)?;
        report.push(BoundRecord::new(BoundFamily::KernelEnsemble, i, p1_ratio[i - 1], b.value, 1.0));
    }
    weyl_records(&mut report, &pca);
    Ok(report)
}

/// One randomly drawn configuration of the dominance sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCase {
    pub index: usize,
    pub spec: DatasetSpec,
    pub alpha: f64,
    #[serde(rename = "T")]
    pub steps: usize,
    pub batch_size: usize,
    pub lambda_wd: f64,
    pub rbf_bandwidths: [f64; 3],
}

impl SweepCase {
    /// Draws case `index` of the sweep seeded by `seed`. Ranges: n in
    /// [10, 80], c in [0.05, 1] (and above 1/n), T log-uniform in [2, 1e4],
    /// α in (0, 1], σw²/σ*² log-uniform in [1e-2, 1e2].
    pub fn draw(seed: u64, index: usize) -> Self {
        let mut rng = stream(seed, &[purpose::SWEEP, index as u64]);
        let n = rng.random_range(10..=80usize);
        let c_lo = 0.05f64.max(1.5 / n as f64);
        let c = rng.random_range(c_lo..=1.0);
        let steps = 10f64.powf(rng.random_range(2f64.log10()..=4.0)).round() as usize;
        // A fifth of the cases sit exactly on the stability edge.
        let alpha = if rng.random_bool(0.2) { 1.0 } else { rng.random_range(0.01..=1.0) };
        let sigma_w_sq = 10f64.powf(rng.random_range(-1.0..=1.0));
        let ratio = 10f64.powf(rng.random_range(-2.0..=2.0));
        let batch_size = [1usize, 8, 64][rng.random_range(0..3)];
        let lambda_wd = 10f64.powf(rng.random_range(-3.0..=-1.0));
        let b0 = 10f64.powf(rng.random_range(-1.0..=0.0));
        let spec = DatasetSpec {
            n,
            d: 2 * n,
            c,
            sigma_star_sq: sigma_w_sq / ratio,
            sigma_w_sq,
            seed: crate::rng::derive_seed(seed, &[purpose::SWEEP, index as u64, 1]),
        };
        SweepCase {
            index,
            spec,
            alpha,
            steps,
            batch_size,
            lambda_wd,
            rbf_bandwidths: [b0, 3.0 * b0, 9.0 * b0],
        }
    }

    /// GD, SGD, weight-decay and kernel-ensemble reports for this case.
    pub fn reports(&self) -> Result<Vec<BoundReport>> {
        let ds = synthesize_dataset(&self.spec)?;
        let gd = TrainConfig::gd(self.alpha, self.steps, 1);
        let sgd = gd.with_method(Method::Sgd {
            batch_size: self.batch_size,
            noise: SgdNoise::Kernel,
        });
        // The shifted top eigenvalue is 1 + λ_wd; keep α on the stable side.
        let wd = TrainConfig::gd(self.alpha / (1.0 + self.lambda_wd), self.steps, 1).with_method(Method::WeightDecay {
            lambda_wd: self.lambda_wd,
        });
        let grams = self
            .rbf_bandwidths
            .iter()
            .map(|&b| build_gram(&ds.x, &KernelSpec::rbf(b).normalized()))
            .collect::<Result<Vec<_>>>()?;
        Ok(vec![
            verify_bounds(&ds, &gd)?,
            verify_bounds(&ds, &sgd)?,
            verify_bounds(&ds, &wd)?,
            verify_kernel_bounds(&grams, &ds.y, &gd, self.spec.sigma_w_sq)?,
        ])
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub case: SweepCase,
    pub checks: usize,
    pub violations: Vec<(String, BoundRecord)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepSummary {
    pub hrb_schema: u32,
    pub seed: u64,
    pub cases: Vec<SweepOutcome>,
}

impl SweepSummary {
    pub fn total_checks(&self) -> usize {
        self.cases.iter().map(|c| c.checks).sum()
    }

    pub fn total_violations(&self) -> usize {
        self.cases.iter().map(|c| c.violations.len()).sum()
    }

    pub fn failed_cases(&self) -> usize {
        self.cases.iter().filter(|c| c.error.is_some()).count()
    }

    /// Violation counts keyed by bound family.
    pub fn violations_by_family(&self) -> Vec<(BoundFamily, usize)> {
        let mut counts = std::collections::BTreeMap::new();
        for c in &self.cases {
            for (_, r) in &c.violations {
                *counts.entry(r.family).or_insert(0usize) += 1;
            }
        }
        counts.into_iter().collect()
    }
}

/// Randomized dominance sweep over `count` configurations.
pub fn dominance_sweep(seed: u64, count: usize) -> SweepSummary {
    let cases = (0..count)
        .into_par_iter()
        .map(|k| {
            let case = SweepCase::draw(seed, k);
            match case.reports() {
                Ok(reports) => SweepOutcome {
                    checks: reports.iter().map(|r| r.per_index.len()).sum(),
                    violations: reports
                        .iter()
                        .flat_map(|r| r.violations.iter().map(|v| (r.config_summary.method.clone(), v.clone())))
                        .collect(),
                    error: None,
                    case,
                },
                Err(e) => SweepOutcome {
                    checks: 0,
                    violations: Vec::new(),
                    error: Some(e.to_string()),
                    case,
                },
            }
        })
        .collect();
    SweepSummary {
        hrb_schema: REPORT_SCHEMA,
        seed,
        cases,
    }
}

/// Rank of a symmetric PSD matrix given by its eigenvalues.
pub fn numerical_rank(values: &[f64], rel_tol: f64) -> usize {
    let top = values.iter().copied().fold(0.0, f64::max);
    values.iter().filter(|&&v| v > rel_tol * top).count()
}

/// Dense `Σ_{t<T} K_dᵗ y yᵀ K_dᵗ` (kept for small cross-checks).
pub fn target_gramian(kernel: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, steps: usize) -> DMatrix<f64> {
    let n = kernel.nrows();
    let kd = DMatrix::identity(n, n) - kernel * alpha;
    let mut v = y.clone();
    let mut acc = DMatrix::zeros(n, n);
    for _ in 0..steps {
        acc.ger(1.0, &v, &v, 1.0);
        v = &kd * v;
    }
    acc
}
