//! Acceptance criteria at desk scale. Prints one PASS/FAIL line per
//! criterion and exits nonzero when any fails.

use std::time::Instant;

use speclab_cli::config::{DensityConfig, ExperimentConfig, FrontierConfig, Grid, KStarWindow, VerifyConfig};
use speclab_cli::verify::{default_kernels, default_spectra};
use speclab_cli::{execute, run, Experiment, ExponentReport, Report};
use speclab_core::{
    critical_point_trajectory, critical_prune_rate, frontier_rate_argmax, log_grid, loss, prune_curve, prune_excess,
    quantization_excess_closed, quantization_excess_mc, sandwich_diagnostic, time_at_index, CutRule, DensingConfig,
    DynamicsKernel, FrontierMethod, PerturbationSpec, PruneControl, PruneSpec, RateKind, RegimeThresholds,
    SpectrumModel, Weighting,
};

const K_MAX: u64 = 10_000_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn model(a: f64, b: f64) -> SpectrumModel {
    SpectrumModel::unit(a, b, K_MAX).unwrap()
}

fn ntk() -> DynamicsKernel {
    DynamicsKernel::ntk()
}

fn cfg(exp: Experiment, m: SpectrumModel, k: DynamicsKernel) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(exp, m, k);
    c.fit_window = Some(KStarWindow { k_star_min: 1e2, k_star_max: 1e5 });
    c
}

fn exponent<'a>(r: &'a Report, name: &str) -> &'a ExponentReport {
    r.exponents.iter().find(|e| e.name == name).unwrap_or_else(|| panic!("no exponent {name}"))
}

/// Loss slope on the `k* in [1e2, 1e5]` window against `-chi`.
fn loss_exponent(kernel: DynamicsKernel, chi: f64, tol: f64, min_r2: f64) -> Outcome {
    let r = execute(&cfg(Experiment::Loss, model(2.5, 2.0), kernel)).unwrap();
    let e = exponent(&r, "chi");
    let slope = -e.fitted;
    let pass = (slope + chi).abs() <= tol && e.r_squared >= min_r2;
    Outcome {
        pass,
        detail: format!(
            "slope {slope:.5} vs {:.4} +/- {tol} (r2 {:.6} >= {min_r2}, {} points)",
            -chi,
            e.r_squared,
            e.window[1] - e.window[0]
        ),
    }
}

fn ac1() -> Outcome {
    loss_exponent(ntk(), 0.75, 0.04, 0.99)
}

fn ac2() -> Outcome {
    loss_exponent(DynamicsKernel::feature_learning(0.0), 1.5, 0.08, 0.95)
}

fn ac3() -> Outcome {
    loss_exponent(DynamicsKernel::monomial(1.0, 2.0, 3.0), 1.125, 0.06, 0.95)
}

fn ac4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (k, rho) in
        [(ntk(), 1.0), (DynamicsKernel::feature_learning(0.0), 2.0), (DynamicsKernel::monomial(1.0, 2.0, 3.0), 1.5)]
    {
        let mut c = cfg(Experiment::Frontier, model(2.5, 2.0), k.clone());
        c.frontier = Some(FrontierConfig { method: FrontierMethod::level_set() });
        let r = execute(&c).unwrap();
        let lam = exponent(&r, "lambda_star_slope").fitted;
        let ks = exponent(&r, "k_star_slope").fitted;
        let ok = (lam + rho).abs() <= 0.02 * rho && (ks - rho / 2.0).abs() <= 0.02 * rho / 2.0;
        pass &= ok;
        parts.push(format!("{}: lambda* {lam:.6} (-{rho}), k* {ks:.6} ({})", k.label(), rho / 2.0));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn ac5() -> Outcome {
    // Monomial kernels with equal exponents on a flat-coefficient spectrum (a = b).
    let m = SpectrumModel::unit(2.0, 2.0, K_MAX).unwrap();
    let times = log_grid(1e2, 1e5, 40).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in [ntk(), DynamicsKernel::monomial(1.0, 2.0, 2.0)] {
        for rate in [RateKind::LossRate, RateKind::UnweightedLossRate] {
            let levels: Vec<f64> = times
                .iter()
                .filter(|&&t| t >= 1e4)
                .map(|&t| {
                    let r = frontier_rate_argmax(&k, &m, t, rate, 4001).unwrap();
                    assert!(!r.at_boundary);
                    k.evaluate_g(r.lambda_star, t).unwrap()
                })
                .collect();
            let (lo, hi) = levels.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
            let drift = hi / lo - 1.0;
            let flat = rate == RateKind::UnweightedLossRate;
            let bracket = !flat || (0.3..=0.7).contains(&lo) && (0.3..=0.7).contains(&hi);
            pass &= drift < 0.05 && bracket;
            parts.push(format!(
                "{} {}: level {:.4}..{:.4} drift {:.2e}{}",
                k.label(),
                if flat { "flat-weight" } else { "eigen-weight" },
                lo,
                hi,
                drift,
                if flat { " (must lie in [0.3, 0.7])" } else { "" }
            ));
        }
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn ac6() -> Outcome {
    let times = log_grid(1e2, 1e5, 40).unwrap();
    let pts = sandwich_diagnostic(&ntk(), &model(2.5, 2.0), &times, 0.5, 2.0, 1.0).unwrap();
    let range = |f: &dyn Fn(&speclab_core::SandwichPoint) -> f64| {
        pts.iter().map(f).fold((f64::INFINITY, 0.0f64), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (l0, l1) = range(&|p| p.lower_ratio);
    let (u0, u1) = range(&|p| p.upper_ratio);
    let pass = [l0, l1, u0, u1].iter().all(|v| (0.1..=10.0).contains(v)) && l1 / l0 < 5.0 && u1 / u0 < 5.0;
    Outcome {
        pass,
        detail: format!("lower in [{l0:.4}, {l1:.4}], upper in [{u0:.4}, {u1:.4}]; band [0.1, 10], max/min < 5"),
    }
}

fn ac7() -> Outcome {
    let mut c = cfg(Experiment::Quantize, model(2.5, 2.0), ntk());
    c.quantize = Some(PerturbationSpec::closed(1e-4, 0.0));
    let r = execute(&c).unwrap();
    let e = exponent(&r, "gamma");
    Outcome {
        pass: (e.fitted - 0.25).abs() <= 0.05 && e.r_squared >= 0.95,
        detail: format!("slope {:.5} vs 0.25 +/- 0.05 (r2 {:.6})", e.fitted, e.r_squared),
    }
}

fn ac8() -> Outcome {
    let mut c = ExperimentConfig::new(Experiment::Verify, default_spectra()[0], ntk());
    c.spectrum = None;
    c.kernel = None;
    c.verify = Some(VerifyConfig {
        kernels: Some(default_kernels()),
        spectra: Some(default_spectra()),
        ..VerifyConfig::default()
    });
    let r = execute(&c).unwrap();
    let rows = r.details["complementarity"].as_array().unwrap();
    let mut pass = rows.len() == 6;
    let mut parts = Vec::new();
    for row in rows {
        let mismatch = row["mismatch"].as_f64().unwrap();
        pass &= mismatch.abs() <= 0.07;
        parts.push(format!("[{}] chi+gamma-rho={mismatch:+.4}", row["config"].as_str().unwrap()));
    }
    Outcome { pass, detail: format!("{} rows, tolerance 0.07: {}", rows.len(), parts.join(", ")) }
}

fn ac9() -> Outcome {
    let m = SpectrumModel::unit(2.5, 2.0, 1000).unwrap();
    let t = time_at_index(&ntk(), &m, 1000f64.sqrt(), 1.0).unwrap();
    let base = PerturbationSpec { sigma_sq: 1e-4, tau_sq: 1e-6, n_samples: 1000, seed: 0 };
    let closed = quantization_excess_closed(&ntk(), &m, t, &base).unwrap();
    let within = (0..100u64)
        .filter(|&s| {
            let e = quantization_excess_mc(&ntk(), &m, t, &PerturbationSpec { seed: s, ..base }).unwrap();
            (e.mean - closed).abs() <= 3.0 * e.stderr
        })
        .count();
    Outcome {
        pass: within >= 99,
        detail: format!("{within}/100 seeds within 3 stderr (k_max=1000, 1000 samples, t={t})"),
    }
}

fn ac10() -> Outcome {
    let m = model(2.5, 2.0);
    let k = ntk();
    // Plateau: t = 1e4 puts k* at 100; cut at 2 k*.
    let plateau = |w: Weighting| {
        let dp =
            prune_excess(&k, &m, 1e4, &PruneSpec { cut: CutRule::ByTheta { theta: 2.0, kappa: 1.0 }, weighting: w })
                .unwrap();
        dp / loss(&k, &m, 1e4, w).unwrap()
    };
    let (pu, pe) = (plateau(Weighting::Unweighted), plateau(Weighting::Eigen));
    let plateau_ok = pu < 1e-3;

    let thetas: Vec<f64> = (1..=9).map(|i| 0.1 * i as f64).collect();
    let curve =
        prune_curve(&k, &m, 1e8, &PruneControl::Theta(thetas), 1.0, Weighting::Unweighted, RegimeThresholds::default())
            .unwrap();
    let devs: Vec<String> =
        curve.points.iter().map(|p| format!("{:.1}:{:+.3}", p.theta, p.excess / p.predicted - 1.0)).collect();
    let form_ok = curve.points.iter().all(|p| (p.excess / p.predicted - 1.0).abs() <= 0.15);

    let times =
        log_grid(time_at_index(&k, &m, 1e2, 1.0).unwrap(), time_at_index(&k, &m, 1e5, 1.0).unwrap(), 40).unwrap();
    let tr = critical_point_trajectory(&k, &m, &times, 1.0).unwrap();
    let slope = tr.fit.as_ref().unwrap().slope;
    let traj_ok = (slope - 0.5).abs() <= 0.075;
    Outcome {
        pass: plateau_ok && form_ok && traj_ok,
        detail: format!(
            "plateau excess/L {pu:.2e} (unweighted; eigen-weighted {pe:.2e}) < 1e-3 [{}]; theta-form deviation {} within 0.15 [{}]; trajectory slope {slope:.4} vs 0.5 +/- 0.075 [{}]",
            ok(plateau_ok),
            devs.join(" "),
            ok(form_ok),
            ok(traj_ok)
        ),
    }
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "fail"
    }
}

fn ac11() -> Outcome {
    let m = model(2.5, 2.0);
    let times = log_grid(1e4, 1e6, 40).unwrap();
    let rs: Vec<f64> = times.iter().map(|&t| critical_prune_rate(&ntk(), &m, t, 1.0).unwrap()).collect();
    let decreasing = rs.windows(2).all(|w| w[1] < w[0]);
    // NTK with b = 2 and unit constants: k* = sqrt(t).
    let err = times.iter().zip(&rs).map(|(t, r)| (r - (1.0 - t.sqrt() / K_MAX as f64)).abs()).fold(0.0, f64::max);
    Outcome {
        pass: decreasing && err <= 1e-9,
        detail: format!("strictly decreasing: {decreasing}; max |r* - (1 - sqrt(t)/k_max)| = {err:.2e}"),
    }
}

fn ac12() -> Outcome {
    let mut c = cfg(Experiment::Density, model(2.5, 2.0), ntk());
    c.density = Some(DensityConfig {
        kappa_hw: 1.0,
        p_fixed: 1e4,
        c_grid: Grid::log(1e8, 1e10, 21),
        c_fixed: 1e10,
        p_grid: Grid::log(1e3, 1e4, 11),
    });
    let r = execute(&c).unwrap();
    let sc = exponent(&r, "density_slope_vs_compute").fitted;
    let sp = exponent(&r, "density_slope_vs_params").fitted;
    let mut d = cfg(Experiment::Densing, model(2.5, 2.0), ntk());
    d.densing = Some(DensingConfig { c0: 1e8, tau_double: 1.0, horizon: 10, p0: 1e4, s: 0.0, kappa_hw: 1.0 });
    let r = execute(&d).unwrap();
    let dens = r.results.column("density").unwrap();
    let target = 2f64.sqrt();
    let worst = dens.windows(2).map(|w| (w[1] / w[0] / target - 1.0).abs()).fold(0.0, f64::max);
    let pass = (sc - 0.5).abs() <= 0.05 * 0.5 && (sp + 1.5).abs() <= 0.05 * 1.5 && worst <= 0.02;
    Outcome {
        pass,
        detail: format!("slope vs C {sc:.5} (0.5 +/- 5%), vs P {sp:.5} (-1.5 +/- 5%), per-doubling ratio worst deviation from sqrt(2) {worst:.2e} (<= 2%)"),
    }
}

fn ac13() -> Outcome {
    let m = SpectrumModel::unit(2.5, 2.0, 1_000_000).unwrap();
    let mut c = ExperimentConfig::new(Experiment::Verify, m, ntk());
    c.fit_window = Some(KStarWindow { k_star_min: 1e2, k_star_max: 1e4 });
    let mut v = VerifyConfig::default();
    v.mc.seeds = 10;
    v.mc.n_samples = 50;
    v.mc.seed = 11;
    c.verify = Some(v);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run(&c, d.path(), false).unwrap();
    }
    let mut same = true;
    let mut files = Vec::new();
    for name in ["results.csv", "complementarity.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        same &= a == b && !a.is_empty();
        files.push(format!("{name} {} bytes", a.len()));
    }
    Outcome { pass: same, detail: format!("two runs byte-identical: {same} ({})", files.join(", ")) }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 13] = [
        ("AC1 NTK loss exponent", ac1),
        ("AC2 feature-learning loss exponent", ac2),
        ("AC3 lambda^2 t^3 loss exponent", ac3),
        ("AC4 frontier scaling", ac4),
        ("AC5 rate-argmax level convergence", ac5),
        ("AC6 sandwich ratios bounded", ac6),
        ("AC7 quantization exponent", ac7),
        ("AC8 fitted complementarity", ac8),
        ("AC9 Monte-Carlo vs closed form", ac9),
        ("AC10 pruning regimes", ac10),
        ("AC11 critical rate shrinkage", ac11),
        ("AC12 density law", ac12),
        ("AC13 determinism", ac13),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "{} {name}: {} [{:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
