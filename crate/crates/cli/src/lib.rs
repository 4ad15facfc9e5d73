//! Command-line driver: dataset generation, training, PCA, bound checks,
//! phase sweeps and spectrum estimation, each writing its artifacts plus a
//! hashed manifest.

pub mod config;
pub mod output;
pub mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use hrb_core::bounds::{dominance_sweep, verify_bounds, BoundFamily};
use hrb_core::dynamics::Simulator;
use hrb_core::error::ErrorKind;
use hrb_core::formats::{
    decode_hrb1, encode_hrb1, matrix_to_csv, parse_feature_csv, spectrum_to_csv, trajectories_to_csv,
    vector_to_csv, HRB1_MAGIC,
};
use hrb_core::linalg::relative_frobenius;
use hrb_core::manifold::{analytic_pca, empirical_pca, hyper_ribbon_dim, PcaDecomposition};
use hrb_core::phase::{extract_isosurface, sweep, PhaseGridSpec};
use hrb_core::specgen::{estimate_slope, synthesize_dataset, DEFAULT_FIT_FLOOR};

use config::{Format, PcaMode, RunConfig};
use output::Artifacts;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Contour levels written by `phase`.
const CONTOUR_LEVELS: [usize; 2] = [3, 10];

#[derive(Debug, Parser)]
#[command(name = "hrb", version, about = "Hyper-ribbon experiments on linear models")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Named parameter set (fig3, fig4, fig5, fig6, fig7, fig7a, fig7b, fig7c).
    #[arg(long, global = true, value_name = "NAME")]
    pub preset: Option<String>,
    /// Output directory; falls back to the config, then $HRB_OUT, then ./hrb-out.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Overrides every seed in the configuration.
    #[arg(long, global = true, value_name = "U64")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a dataset and write X, y, w* and the spectrum of K.
    Gen,
    /// Train, compute PCA spectra and check the eigenvalue bounds.
    Run {
        #[arg(long, value_enum)]
        mode: Option<PcaMode>,
    },
    /// Hyper-ribbon dimension over a (T, c, ratio) grid.
    Phase,
    /// Spectrum and slope of a CSV feature matrix, or PCA of an HRB1 ensemble.
    Spectrum {
        path: PathBuf,
        /// Eigenvalues below floor * lambda_1 are excluded from the fit.
        #[arg(long, default_value_t = DEFAULT_FIT_FLOOR)]
        floor: f64,
        /// Explained-variance threshold for HRB1 input.
        #[arg(long, default_value_t = 0.95)]
        threshold: f64,
    },
    /// Randomized bound-dominance sweep.
    BoundsSweep {
        #[arg(long)]
        count: Option<usize>,
    },
}

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<hrb_core::Error>() {
            return match e.kind() {
                ErrorKind::Validation => EXIT_VALIDATION,
                ErrorKind::Numerical => EXIT_NUMERICAL,
                ErrorKind::Io => EXIT_IO,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(hrb_core::Error::InvalidConfig("--threads must be positive".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    pool.install(|| dispatch(&cli))
}

fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Spectrum { path, floor, threshold } => {
            let out = output_dir(cli, None);
            cmd_spectrum(path, *floor, *threshold, &out)
        }
        Command::Gen => {
            let cfg = load_config(cli, "fig5")?;
            cmd_gen(&cfg, &output_dir(cli, Some(&cfg)))
        }
        Command::Run { mode } => {
            let mut cfg = load_config(cli, "fig5")?;
            if let Some(m) = mode {
                cfg.pca.mode = *m;
            }
            cmd_run(&cfg, &output_dir(cli, Some(&cfg)))
        }
        Command::Phase => {
            let cfg = load_config(cli, "fig7")?;
            cmd_phase(&cfg, &output_dir(cli, Some(&cfg)))
        }
        Command::BoundsSweep { count } => {
            let mut cfg = load_config(cli, "fig5")?;
            let mut sweep = cfg.bounds.sweep.unwrap_or_default();
            if let Some(c) = count {
                sweep.count = *c;
            }
            if let Some(s) = cli.seed {
                sweep.seed = s;
            }
            cfg.bounds.sweep = Some(sweep);
            cfg.validate()?;
            cmd_bounds_sweep(&cfg, &output_dir(cli, Some(&cfg)))
        }
    }
}

/// Config from `--config`, else `--preset`, else `fallback`; seeds
/// overridden and every section validated.
pub fn load_config(cli: &Cli, fallback: &str) -> anyhow::Result<RunConfig> {
    let mut cfg = match (&cli.config, &cli.preset) {
        (Some(_), Some(_)) => {
            return Err(hrb_core::Error::InvalidConfig("--config and --preset are mutually exclusive".into()).into())
        }
        (Some(path), None) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            RunConfig::from_json(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        (None, name) => {
            let name = name.as_deref().unwrap_or(fallback);
            config::preset(name).ok_or_else(|| {
                hrb_core::Error::InvalidConfig(format!(
                    "unknown preset {name:?}; available: {}",
                    config::PRESETS.join(", ")
                ))
            })?
        }
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate().context("validating config")?;
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.dir.clone()))
        .or_else(|| std::env::var_os("HRB_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("hrb-out"))
}

fn commit<M: Serialize>(artifacts: Artifacts, dir: &Path, command: &str, meta: &M) -> anyhow::Result<()> {
    let written = artifacts
        .commit(dir, command, meta)
        .with_context(|| format!("writing outputs to {}", dir.display()))?;
    log::info!("wrote {} files to {}", written.len(), dir.display());
    Ok(())
}

pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ds = synthesize_dataset(&cfg.dataset).context("stage dataset")?;
    let mut art = Artifacts::default();
    art.add("X.csv", matrix_to_csv(&ds.x));
    art.add("y.csv", vector_to_csv("y", &ds.y));
    art.add("w_star.csv", vector_to_csv("w_star", &ds.w_star));
    art.add("spectrum_K.csv", vector_to_csv("lambda_K", &ds.eig.values));
    let meta = json!({
        "dataset": cfg.dataset,
        "lambda_1": ds.lambda_1(),
        "lambda_n": ds.lambda_n(),
        "norm_y_sq": ds.norm_y_sq(),
        "fingerprint": ds.fingerprint(),
    });
    commit(art, out, "gen", &meta)
}

#[derive(Debug, Serialize)]
struct SpectrumSummary {
    dim: usize,
    trace: f64,
    lambda_1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_p2: Option<f64>,
    degenerate: bool,
}

fn summarize(pca: &PcaDecomposition, threshold: f64) -> anyhow::Result<SpectrumSummary> {
    Ok(SpectrumSummary {
        dim: hyper_ribbon_dim(&pca.lambda_p, threshold)?.dim,
        trace: pca.trace(),
        lambda_1: pca.lambda_p.first().copied().unwrap_or(0.0),
        lambda_p2: pca.lambda_p2,
        degenerate: pca.degenerate,
    })
}

#[derive(Debug, Serialize)]
struct HorizonSummary {
    #[serde(rename = "T")]
    steps: usize,
    alpha: f64,
    method: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    analytic: Option<SpectrumSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    empirical: Option<SpectrumSummary>,
    /// `‖P(N,T) − P(T)‖_F / ‖P(T)‖_F` when both modes ran.
    #[serde(skip_serializing_if = "Option::is_none")]
    frobenius_gap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound_checks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bound_violations: Option<Vec<(BoundFamily, usize)>>,
}

pub fn cmd_run(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let ds = synthesize_dataset(&cfg.dataset).context("stage dataset")?;
    let horizons = cfg.train.horizons();
    let sweep = cfg.train.t_sweep.is_some();
    let mut art = Artifacts::default();
    let mut summaries = Vec::new();
    for &steps in &horizons {
        let suffix = if sweep { format!("_T{steps}") } else { String::new() };
        let tc = cfg.train.config(steps, ds.lambda_1()).context("stage train")?;
        log::info!("T = {steps}: {} with alpha = {}", tc.method.name(), tc.alpha);

        let analytic = if cfg.pca.mode.analytic() {
            Some(analytic_pca(&ds, &tc).context("stage pca (analytic)")?)
        } else {
            None
        };
        let empirical = if cfg.pca.mode.empirical() {
            let sim = Simulator::for_dataset(&ds, &tc).context("stage train")?;
            if cfg.pca.dump_trajectories {
                let ens = sim.materialize();
                art.add(format!("ensemble{suffix}.hrb1"), encode_hrb1(&ens));
                if cfg.output.wants(Format::Csv) {
                    art.add(format!("trajectories{suffix}.csv"), trajectories_to_csv(&ens));
                }
            }
            Some(empirical_pca(&sim).context("stage pca (empirical)")?)
        } else {
            None
        };
        let frobenius_gap = match (&analytic, &empirical) {
            (Some(a), Some(e)) => match (&a.matrix, &e.matrix) {
                (Some(pa), Some(pe)) => Some(relative_frobenius(pe, pa)),
                _ => None,
            },
            _ => None,
        };

        let report = if cfg.bounds.enabled {
            Some(verify_bounds(&ds, &tc).context("stage bounds")?)
        } else {
            None
        };

        if cfg.output.wants(Format::Csv) {
            if let Some(a) = &analytic {
                art.add(format!("spectrum_analytic{suffix}.csv"), spectrum_to_csv(a));
            }
            if let Some(e) = &empirical {
                art.add(format!("spectrum_empirical{suffix}.csv"), spectrum_to_csv(e));
            }
            if let Some(r) = &report {
                art.add(format!("bounds{suffix}.csv"), r.to_csv());
            }
        }
        if cfg.output.wants(Format::Json) {
            if let Some(r) = &report {
                art.add_json(format!("bounds{suffix}.json"), r);
            }
        }
        if cfg.output.wants(Format::Svg) {
            let mut series: Vec<(&str, &[f64])> = Vec::new();
            if let Some(a) = &analytic {
                series.push(("P", &a.lambda_p));
                for (name, v) in [("P1", &a.lambda_p1), ("T P1 sigma_w", &a.lambda_sigma_w), ("T P1 y", &a.lambda_y)] {
                    if let Some(v) = v {
                        series.push((name, v));
                    }
                }
            }
            if let Some(e) = &empirical {
                series.push(("P(N,T)", &e.lambda_p));
            }
            let title = format!("PCA eigenvalues, {} at T = {steps}", tc.method.name());
            art.add(format!("spectrum{suffix}.svg"), svg::eigen_curves(&title, &series));
        }
        if let Some(r) = &report {
            if !r.violations.is_empty() {
                log::warn!("T = {steps}: {} bound violation(s)", r.violations.len());
            }
        }
        summaries.push(HorizonSummary {
            steps,
            alpha: tc.alpha,
            method: tc.method.name(),
            analytic: analytic.as_ref().map(|p| summarize(p, cfg.pca.threshold)).transpose()?,
            empirical: empirical.as_ref().map(|p| summarize(p, cfg.pca.threshold)).transpose()?,
            frobenius_gap,
            bound_checks: report.as_ref().map(|r| r.per_index.len()),
            bound_violations: report.as_ref().map(|r| {
                r.families()
                    .into_iter()
                    .map(|f| (f, r.violations.iter().filter(|v| v.family == f).count()))
                    .filter(|&(_, n)| n > 0)
                    .collect()
            }),
        });
    }
    art.add_json("summary.json", &summaries);
    let meta = json!({ "config": cfg, "fingerprint": ds.fingerprint() });
    commit(art, out, "run", &meta)
}

pub fn cmd_phase(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let spec = cfg.phase.clone().unwrap_or_else(PhaseGridSpec::default);
    let grid = sweep(&spec).context("stage phase")?;
    let mut art = Artifacts::default();
    if cfg.output.wants(Format::Csv) {
        art.add("phase.csv", grid.to_csv());
    }
    let contours: Vec<_> = CONTOUR_LEVELS
        .iter()
        .map(|&level| extract_isosurface(&grid, level).map(|slices| json!({ "level": level, "slices": slices })))
        .collect::<Result<_, _>>()?;
    if cfg.output.wants(Format::Json) {
        art.add_json("phase.json", &grid);
        art.add_json("contours.json", &contours);
    }
    if cfg.output.wants(Format::Svg) {
        for r in 0..spec.ratio_values.len() {
            art.add(format!("phase_ratio_{}.svg", spec.ratio_values[r]), grid.slice_svg(r));
        }
    }
    let modal: Vec<_> = (0..spec.ratio_values.len())
        .map(|r| json!({ "ratio": spec.ratio_values[r], "modal_dim": grid.modal_dim(r) }))
        .collect();
    let meta = json!({ "phase": spec, "modal": modal, "failed_cells": grid.errors.len() });
    commit(art, out, "phase", &meta)?;
    if grid.all_failed() {
        let first = grid.errors.first().map(|e| e.message.as_str()).unwrap_or("no cells");
        return Err(hrb_core::Error::BoundUndefined(format!("every phase cell failed; first: {first}")).into());
    }
    if !grid.errors.is_empty() {
        log::warn!("{} phase cell(s) failed; see phase.json", grid.errors.len());
    }
    Ok(())
}

pub fn cmd_spectrum(path: &Path, floor: f64, threshold: f64, out: &Path) -> anyhow::Result<()> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let mut art = Artifacts::default();
    let source = path.display().to_string();
    if bytes.starts_with(HRB1_MAGIC) {
        let ens = decode_hrb1(&bytes).with_context(|| format!("decoding {source}"))?;
        let pca = empirical_pca(&ens).context("stage pca (empirical)")?;
        let summary = summarize(&pca, threshold)?;
        art.add("spectrum.csv", spectrum_to_csv(&pca));
        art.add_json("pca.json", &pca);
        let meta = json!({ "input": source, "summary": summary });
        return commit(art, out, "spectrum", &meta);
    }
    let text = String::from_utf8(bytes).map_err(|e| hrb_core::Error::Format(format!("{source}: {e}")))?;
    let features = parse_feature_csv(&text).with_context(|| format!("parsing {source}"))?;
    let fit = estimate_slope(&features, floor)?;
    if fit.flat {
        log::warn!("flat spectrum: c_hat = 0");
    }
    let values = nalgebra::DVector::from_column_slice(&fit.eigenvalues);
    art.add("spectrum.csv", vector_to_csv("lambda", &values));
    art.add_json("slope.json", &fit);
    let meta = json!({
        "input": source,
        "samples": features.nrows(),
        "features": features.ncols(),
        "c_hat": fit.c_hat,
        "flat": fit.flat,
    });
    commit(art, out, "spectrum", &meta)
}

pub fn cmd_bounds_sweep(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let Some(params) = cfg.bounds.sweep else {
        bail!(hrb_core::Error::InvalidConfig("bounds.sweep is not set".into()));
    };
    let summary = dominance_sweep(params.seed, params.count);
    let mut art = Artifacts::default();
    if cfg.output.wants(Format::Json) {
        art.add_json("sweep.json", &summary);
    }
    if cfg.output.wants(Format::Csv) {
        let mut csv = String::from("case,method,family,index,numeric,bound,slack\n");
        for case in &summary.cases {
            for (method, r) in &case.violations {
                csv.push_str(&format!(
                    "{},{method},{},{},{:e},{:e},{:e}\n",
                    case.case.index,
                    r.family.name(),
                    r.index,
                    r.numeric,
                    r.bound,
                    r.slack
                ));
            }
        }
        art.add("violations.csv", csv);
    }
    let by_family: Vec<_> = summary
        .violations_by_family()
        .into_iter()
        .map(|(f, n)| json!({ "family": f.name(), "violations": n }))
        .collect();
    for (f, n) in summary.violations_by_family() {
        log::warn!("{}: {n} violation(s)", f.name());
    }
    let meta = json!({
        "seed": params.seed,
        "cases": params.count,
        "checks": summary.total_checks(),
        "violations": summary.total_violations(),
        "failed_cases": summary.failed_cases(),
        "by_family": by_family,
    });
    commit(art, out, "bounds-sweep", &meta)
}
