//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report is printed even
//! when test output is captured. The process fails on any FAIL that is not
//! listed in `KNOWN_FAILURES`.

mod common;

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use hrb_core::bounds::{dominance_sweep, sgd_head_bound, BoundFamily, SweepCase};
use hrb_core::dynamics::{build_gram, KernelSpec, Method, SgdNoise, Simulator, TrainConfig};
use hrb_core::linalg::{random_orthonormal, relative_frobenius, sym_eigenvalues};
use hrb_core::manifold::{
    analytic_pca, continuous_transform, empirical_pca, multi_kernel_pca, sgd_analytic_pca, solve_dlyap, solve_dlyap_sym,
};
use hrb_core::phase::{sweep, PhaseGridSpec, PRESET_RATIOS};
use hrb_core::specgen::{estimate_slope, sample_true_weights, synthesize_dataset, DatasetSpec, DEFAULT_FIT_FLOOR};

use common::*;

/// Criteria whose FAIL is understood and recorded: the SGD head bound as
/// stated omits the horizon factor on its noise term (see criterion 4).
const KNOWN_FAILURES: [u32; 1] = [4];

const SWEEP_SEED: u64 = 7;
const SWEEP_CASES: usize = 100;

struct Outcome {
    pass: bool,
    detail: String,
    limit: Duration,
}

fn fig5_spec() -> DatasetSpec {
    DatasetSpec {
        n: 50,
        d: 100,
        c: 0.2,
        sigma_star_sq: 2.0,
        sigma_w_sq: 0.1,
        seed: 7,
    }
}

fn exact_t1_identity() -> Outcome {
    let ds = synthesize_dataset(&fig5_spec()).unwrap();
    let pca = analytic_pca(&ds, &TrainConfig::gd(1.0 / ds.lambda_1(), 1, 1)).unwrap();
    let sw = ds.spec.sigma_w_sq;
    let err = pca
        .lambda_p
        .iter()
        .zip(ds.eig.values.iter())
        .map(|(p, k)| (p - sw * k).abs() / (sw * k))
        .fold(0.0, f64::max);
    Outcome {
        pass: err <= 1e-12,
        detail: format!("max relative error {err:.2e} (tol 1e-12)"),
        limit: Duration::from_secs(1),
    }
}

fn closed_form_vs_direct_sum() -> Outcome {
    let mut rng = rng(2024);
    let mut worst: f64 = 0.0;
    for k in 0..20 {
        let spec = random_spec(&mut rng, 30);
        let ds = synthesize_dataset(&spec).unwrap();
        let steps = rng.random_range(1..=200);
        let method = match k % 3 {
            0 => Method::Gd,
            1 => Method::Sgd {
                batch_size: [1, 4, 32][rng.random_range(0..3)],
                noise: SgdNoise::Kernel,
            },
            _ => Method::WeightDecay {
                lambda_wd: 10f64.powf(rng.random_range(-3.0..=-1.0)),
            },
        };
        let top = ds.lambda_1() + method.spectral_shift();
        let alpha = if rng.random_bool(0.25) { 1.0 / top } else { rng.random_range(0.05..=1.0) / top };
        let cfg = TrainConfig::gd(alpha, steps, 1).with_method(method);
        let p = analytic_pca(&ds, &cfg).unwrap().matrix.unwrap();
        let (oracle, _) = brute_force_for(&ds, &cfg);
        worst = worst.max(rel_frobenius(&p, &oracle));
    }
    Outcome {
        pass: worst <= 1e-10,
        detail: format!("worst relative Frobenius gap {worst:.2e} over 20 configs (tol 1e-10)"),
        limit: Duration::from_secs(30),
    }
}

fn monte_carlo_convergence() -> Outcome {
    let sizes = [625usize, 1250, 2500, 5000, 10_000, 20_000];
    // Each replicate draws its own dataset and ensemble; the RMS over
    // replicates estimates the expected error at each N.
    let replicates = 8u64;
    let mut rms = Vec::new();
    let mut headline = f64::NAN;
    for &n_traj in &sizes {
        let mut sq = 0.0;
        for r in 0..replicates {
            let spec = DatasetSpec {
                seed: 7 + r,
                ..fig5_spec()
            };
            let ds = synthesize_dataset(&spec).unwrap();
            let cfg = TrainConfig::gd(1.0 / ds.lambda_1(), 50, n_traj);
            let exact = analytic_pca(&ds, &cfg).unwrap().matrix.unwrap();
            let sim = Simulator::for_dataset(&ds, &cfg).unwrap();
            let emp = empirical_pca(&sim).unwrap().matrix.unwrap();
            let err = relative_frobenius(&emp, &exact);
            if r == 0 && n_traj == 20_000 {
                headline = err;
            }
            sq += err * err;
        }
        rms.push((sq / replicates as f64).sqrt());
    }
    let ns: Vec<f64> = sizes.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&ns, &rms);
    Outcome {
        pass: headline < 0.05 && (-0.6..=-0.4).contains(&slope),
        detail: format!(
            "error {headline:.4} at N=2e4 (tol 0.05); log-log slope {slope:.3} (want [-0.6, -0.4]); rms errors {:?}",
            rms.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        ),
        limit: Duration::from_secs(180),
    }
}

fn dominance_suite(summary: &hrb_core::bounds::SweepSummary) -> Outcome {
    let required = [
        BoundFamily::SigmaW,
        BoundFamily::Lemma1Tight,
        BoundFamily::Lemma1Loose,
        BoundFamily::Lemma2Lower,
        BoundFamily::Lemma2Upper,
        BoundFamily::Lemma3,
        BoundFamily::SgdHead,
        BoundFamily::WeightDecayHead,
        BoundFamily::KernelEnsemble,
    ];
    let by_family = summary.violations_by_family();
    let count = |f: BoundFamily| by_family.iter().find(|v| v.0 == f).map_or(0, |v| v.1);
    let failing: Vec<String> = required
        .iter()
        .filter(|&&f| count(f) > 0)
        .map(|&f| format!("{}={}", f.name(), count(f)))
        .collect();
    let sgd_cases = summary
        .cases
        .iter()
        .filter(|c| c.violations.iter().any(|v| v.1.family == BoundFamily::SgdHead))
        .count();

    // Re-derive the first SGD head violation with the dense recursion to make
    // sure it is a property of the bound, not of the closed form.
    let mut confirmation = String::new();
    if let Some((case, rec)) = summary
        .cases
        .iter()
        .find_map(|c| c.violations.iter().find(|v| v.1.family == BoundFamily::SgdHead).map(|v| (&c.case, &v.1)))
    {
        let (ratio, bound) = recheck_sgd_violation(case, rec.index);
        confirmation = format!(
            "; case {} (n={}, T={}, B={}) index {}: direct recursion ratio {ratio:.4e} > bound {bound:.4e}",
            case.index, case.spec.n, case.steps, case.batch_size, rec.index
        );
    }
    Outcome {
        pass: failing.is_empty() && summary.failed_cases() == 0,
        detail: format!(
            "{} cases, {} checks, {} failed cases; violations: [{}]; SGD head violated in {sgd_cases} case(s), horizon-corrected SGD head violations: {}{confirmation}",
            summary.cases.len(),
            summary.total_checks(),
            summary.failed_cases(),
            failing.join(", "),
            count(BoundFamily::SgdHeadHorizon),
        ),
        limit: Duration::from_secs(300),
    }
}

/// `(λ_i^{P₁}/λ_1^{P₁}, stated bound)` for an SGD sweep case, from the dense
/// oracle.
fn recheck_sgd_violation(case: &SweepCase, index: usize) -> (f64, f64) {
    let ds = synthesize_dataset(&case.spec).unwrap();
    let cfg = TrainConfig::gd(case.alpha, case.steps, 1).with_method(Method::Sgd {
        batch_size: case.batch_size,
        noise: SgdNoise::Kernel,
    });
    let (_, p1) = brute_force_for(&ds, &cfg);
    let mut values = sym_eigenvalues(&p1);
    values.sort_by(|a, b| b.total_cmp(a));
    let bound = sgd_head_bound(index, &ds, &cfg).unwrap();
    (values[index - 1] / values[0], bound)
}

/// Set when only the stated SGD head bound fails and the horizon-corrected
/// variant and the direct recursion agree with the analysis.
fn sgd_failure_is_explained(summary: &hrb_core::bounds::SweepSummary) -> bool {
    let by_family = summary.violations_by_family();
    if summary.failed_cases() > 0 || by_family.iter().any(|(f, _)| *f != BoundFamily::SgdHead) {
        return false;
    }
    summary.cases.iter().all(|c| {
        c.violations.iter().take(1).all(|(_, rec)| {
            let (ratio, bound) = recheck_sgd_violation(&c.case, rec.index);
            ratio > bound
        })
    })
}

fn weyl_and_p2(summary: &hrb_core::bounds::SweepSummary) -> Outcome {
    let by_family = summary.violations_by_family();
    let count = |f: BoundFamily| by_family.iter().find(|v| v.0 == f).map_or(0, |v| v.1);
    let (up, low, p2) = (
        count(BoundFamily::WeylUpper),
        count(BoundFamily::WeylLower),
        count(BoundFamily::P2Decay),
    );
    let checks: usize = summary
        .cases
        .iter()
        .map(|c| c.checks)
        .sum::<usize>();
    Outcome {
        pass: up + low + p2 == 0 && summary.failed_cases() == 0,
        detail: format!(
            "violations over {} configurations ({checks} checks in total): Weyl upper {up}, Weyl lower {low}, P2 {p2}",
            summary.cases.len()
        ),
        limit: Duration::from_secs(300),
    }
}

fn target_norm_concentration() -> Outcome {
    let spec = DatasetSpec {
        n: 50,
        d: 100,
        c: 0.1,
        sigma_star_sq: 2.0,
        sigma_w_sq: 1.0,
        seed: 11,
    };
    let ds = synthesize_dataset(&spec).unwrap();
    let draws = 1000;
    let mean = (0..draws)
        .map(|r| (&ds.x * sample_true_weights(&spec, r)).norm_squared())
        .sum::<f64>()
        / draws as f64;
    let expected = spec.sigma_star_sq * ds.eig.values.sum();
    let rel = (mean - expected).abs() / expected;
    Outcome {
        pass: rel <= 0.02,
        detail: format!("mean |y|^2 = {mean:.4}, sigma*^2 tr K = {expected:.4}, relative gap {rel:.4} (tol 0.02)"),
        limit: Duration::from_secs(30),
    }
}

fn tail_grows_with_horizon() -> Outcome {
    let spec = DatasetSpec {
        n: 50,
        d: 100,
        c: 0.1,
        sigma_star_sq: 2.0,
        sigma_w_sq: 1.0,
        seed: 7,
    };
    let ds = synthesize_dataset(&spec).unwrap();
    let alpha = 1.0 / ds.lambda_1();
    let horizons = [5usize, 50, 500, 5000];
    // Tails of T·P(N,T), the unnormalized scatter per trajectory.
    let tails: Vec<(Vec<f64>, Vec<f64>)> = horizons
        .iter()
        .map(|&t| {
            let sim = Simulator::for_dataset(&ds, &TrainConfig::gd(alpha, t, 5000)).unwrap();
            let pca = empirical_pca(&sim).unwrap();
            let se = pca.lambda_p_stderr.expect("enough chunks for error bars");
            let scale = t as f64;
            (
                pca.lambda_p[25..].iter().map(|v| v * scale).collect(),
                se[25..].iter().map(|v| v * scale).collect(),
            )
        })
        .collect();
    let mut worst_z = f64::INFINITY;
    for w in tails.windows(2) {
        let ((a, sa), (b, sb)) = (&w[0], &w[1]);
        for k in 0..a.len() {
            let z = (b[k] - a[k]) / (sa[k] * sa[k] + sb[k] * sb[k]).sqrt().max(f64::MIN_POSITIVE);
            worst_z = worst_z.min(z);
        }
    }
    Outcome {
        pass: worst_z >= -3.0,
        detail: format!(
            "T*lambda_26 across T={horizons:?}: {:?}; worst standardized decrease {worst_z:.2} (allowed -3)",
            tails.iter().map(|t| format!("{:.3e}", t.0[0])).collect::<Vec<_>>()
        ),
        limit: Duration::from_secs(300),
    }
}

fn phase_trends() -> Outcome {
    let ratio = |name: &str| PRESET_RATIOS.iter().find(|p| p.0 == name).unwrap().1;
    let spec = PhaseGridSpec {
        ratio_values: vec![ratio("fig7c"), ratio("fig7b"), ratio("fig7a")],
        ..Default::default()
    };
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sweep(&spec).unwrap())
    };
    let grid = run(1);
    let again = run(4);
    let identical = grid.to_csv() == again.to_csv();
    let (nt, nc, _) = spec.shape();
    let mut ordered = 0;
    for t in 0..nt {
        for c in 0..nc {
            if let (Some(hi), Some(lo)) = (grid.dim(t, c, 2), grid.dim(t, c, 0)) {
                ordered += usize::from(hi <= lo);
            }
        }
    }
    let frac = ordered as f64 / (nt * nc) as f64;
    let modal = grid.modal_dim(2);
    Outcome {
        pass: frac >= 0.9 && modal.is_some_and(|m| m <= 3) && identical && grid.errors.is_empty(),
        detail: format!(
            "(a) dims(4.38) <= dims(0.33) on {:.1}% of {nt}x{nc} cells (want >= 90%); (b) modal dim at 4.38 = {modal:?} (want <= 3); (c) CSV identical across 1 and 4 threads: {identical}",
            100.0 * frac
        ),
        limit: Duration::from_secs(600),
    }
}

fn sgd_invariance() -> Outcome {
    let spec = fig5_spec();
    let ds = synthesize_dataset(&spec).unwrap();
    let doubled = synthesize_dataset(&DatasetSpec {
        sigma_w_sq: 2.0 * spec.sigma_w_sq,
        ..spec
    })
    .unwrap();
    let base = TrainConfig::gd(0.3, 200, 1).with_method(Method::Sgd {
        batch_size: 4,
        noise: SgdNoise::Kernel,
    });
    let scaled = TrainConfig::gd(0.6, 200, 1).with_method(Method::Sgd {
        batch_size: 8,
        noise: SgdNoise::Kernel,
    });
    let mut exact = true;
    let mut checked = 0;
    for i in 1..=ds.n() {
        match (sgd_head_bound(i, &ds, &base), sgd_head_bound(i, &doubled, &scaled)) {
            (Ok(a), Ok(b)) => {
                exact &= a == b;
                checked += 1;
            }
            _ => break,
        }
    }
    let gd = TrainConfig::gd(0.5, 80, 1);
    let quiet = gd.with_method(Method::Sgd {
        batch_size: 4,
        noise: SgdNoise::Disabled,
    });
    let a = analytic_pca(&ds, &gd).unwrap().matrix.unwrap();
    let b = sgd_analytic_pca(&ds, &quiet).unwrap().matrix.unwrap();
    let gap = relative_frobenius(&b, &a);
    Outcome {
        pass: exact && checked > 0 && gap <= 1e-12,
        detail: format!(
            "head bound bitwise invariant on {checked} indices: {exact}; noiseless SGD vs GD gap {gap:.2e} (tol 1e-12)"
        ),
        limit: Duration::from_secs(10),
    }
}

fn lyapunov_solver() -> Outcome {
    let mut rng = rng(99);
    let (mut worst_res, mut worst_oracle, mut worst_cont) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..10 {
        let n = rng.random_range(3..=25);
        let q: DVector<f64> = DVector::from_fn(n, |_, _| rng.random_range(-0.9..=0.9));
        let basis = random_orthonormal(n, n, &mut rng);
        let kd = &basis * DMatrix::from_diagonal(&q) * basis.transpose();
        let f = DMatrix::from_fn(n, n + 2, |_, _| rng.random_range(-1.0..=1.0));
        let rhs = &f * f.transpose();
        let p = solve_dlyap_sym(&kd, &rhs).unwrap();
        let residual = &kd * &p * &kd - &p + &rhs;
        worst_res = worst_res.max(residual.norm() / rhs.norm());
        worst_oracle = worst_oracle.max(rel_frobenius(&p, &truncated_lyapunov(&kd, &rhs, 1000)));

        let inner = basis.transpose() * &rhs * &basis;
        let pd = solve_dlyap(&q, &inner).unwrap();
        let (kt, bbt) = continuous_transform(&q, &inner).unwrap();
        let kt = DMatrix::from_diagonal(&kt);
        let cont = &kt * &pd + &pd * &kt + &bbt;
        worst_cont = worst_cont.max(cont.norm() / bbt.norm());
    }
    Outcome {
        pass: worst_res <= 1e-8 && worst_oracle <= 1e-8 && worst_cont <= 1e-8,
        detail: format!(
            "residual {worst_res:.2e}, vs 1000-term sum {worst_oracle:.2e}, continuous residual {worst_cont:.2e} (tol 1e-8)"
        ),
        limit: Duration::from_secs(10),
    }
}

fn kernel_path() -> Outcome {
    let spec = DatasetSpec {
        n: 30,
        d: 60,
        c: 0.25,
        sigma_star_sq: 1.5,
        sigma_w_sq: 0.3,
        seed: 5,
    };
    let ds = synthesize_dataset(&spec).unwrap();
    let cfg = TrainConfig::gd(0.8 / ds.lambda_1(), 120, 1);
    let linear = build_gram(&ds.x, &KernelSpec::linear()).unwrap();
    let single = multi_kernel_pca(std::slice::from_ref(&linear), &ds.y, &cfg, spec.sigma_w_sq)
        .unwrap()
        .matrix
        .unwrap();
    let reference = analytic_pca(&ds, &cfg).unwrap().matrix.unwrap();
    let gap = relative_frobenius(&single, &reference);

    let grams: Vec<_> = [0.3, 1.0, 3.0]
        .iter()
        .map(|&b| build_gram(&ds.x, &KernelSpec::rbf(b).normalized()).unwrap())
        .collect();
    let kcfg = TrainConfig::gd(1.0, 120, 1);
    let report = hrb_core::bounds::verify_kernel_bounds(&grams, &ds.y, &kcfg, spec.sigma_w_sq).unwrap();
    let eq12 = report.records(BoundFamily::KernelEnsemble).count();
    let eq12_bad = report.violations.iter().filter(|v| v.family == BoundFamily::KernelEnsemble).count();
    let mats: Vec<DMatrix<f64>> = grams.iter().map(|g| g.matrix.clone()).collect();
    let pooled = multi_kernel_pca(&grams, &ds.y, &kcfg, spec.sigma_w_sq).unwrap().matrix.unwrap();
    let brute_gap = rel_frobenius(&pooled, &multi_kernel_brute(&mats, &ds.y, spec.sigma_w_sq, 1.0, 120));
    Outcome {
        pass: gap <= 1e-10 && eq12 > 0 && eq12_bad == 0 && brute_gap <= 1e-10,
        detail: format!(
            "M=1 linear vs linear model gap {gap:.2e} (tol 1e-10); M=3 RBF: {eq12_bad}/{eq12} bound violations, pooled P vs brute force {brute_gap:.2e}"
        ),
        limit: Duration::from_secs(10),
    }
}

fn slope_round_trip() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut fits = Vec::new();
    for c in [0.1, 0.3, 0.5] {
        let ds = synthesize_dataset(&DatasetSpec {
            n: 50,
            d: 100,
            c,
            sigma_star_sq: 1.0,
            sigma_w_sq: 1.0,
            seed: 3,
        })
        .unwrap();
        let fit = estimate_slope(&ds.x, DEFAULT_FIT_FLOOR).unwrap();
        worst = worst.max((fit.c_hat - c).abs() / c);
        fits.push(format!("{c}->{:.4}", fit.c_hat));
    }
    Outcome {
        pass: worst <= 0.05,
        detail: format!("{} ; worst relative error {worst:.4} (tol 0.05)", fits.join(", ")),
        limit: Duration::from_secs(10),
    }
}

fn main() {
    let sweep_start = Instant::now();
    let summary = dominance_sweep(SWEEP_SEED, SWEEP_CASES);
    let sweep_time = sweep_start.elapsed();

    let criteria: Vec<(u32, &str, Box<dyn Fn() -> Outcome>)> = vec![
        (1, "T=1 identity", Box::new(exact_t1_identity)),
        (2, "closed form vs direct summation", Box::new(closed_form_vs_direct_sum)),
        (3, "Monte Carlo convergence", Box::new(monte_carlo_convergence)),
        (4, "bound dominance suite", Box::new(|| dominance_suite(&summary))),
        (5, "Weyl sandwich and P2 bound", Box::new(|| weyl_and_p2(&summary))),
        (6, "target norm concentration", Box::new(target_norm_concentration)),
        (7, "tail growth with T", Box::new(tail_grows_with_horizon)),
        (8, "phase diagram trends", Box::new(phase_trends)),
        (9, "SGD invariance", Box::new(sgd_invariance)),
        (10, "Lyapunov solver", Box::new(lyapunov_solver)),
        (11, "kernel path", Box::new(kernel_path)),
        (12, "slope round trip", Box::new(slope_round_trip)),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();

    let mut unexpected = Vec::new();
    for (id, name, check) in &criteria {
        if !filter.is_empty() && !filter.contains(id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let mut elapsed = start.elapsed();
        if matches!(id, 4 | 5) {
            elapsed += sweep_time;
        }
        let in_time = elapsed <= outcome.limit;
        let pass = outcome.pass && in_time;
        println!(
            "criterion {id:>2} {} {name}: {}; {:.2} s (limit {} s)",
            if pass { "PASS" } else { "FAIL" },
            outcome.detail,
            elapsed.as_secs_f64(),
            outcome.limit.as_secs()
        );
        if !pass {
            let known = KNOWN_FAILURES.contains(id) && in_time && *id == 4 && sgd_failure_is_explained(&summary);
            if known {
                println!(
                    "             known failure: the stated SGD head bound drops the factor T on its noise term; the horizon-corrected bound holds"
                );
            } else {
                unexpected.push(*id);
            }
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected acceptance failures: {unexpected:?}");
        std::process::exit(1);
    }
}
