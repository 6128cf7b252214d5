//! The invariant suite over a kernel x spectrum matrix.

use serde::Serialize;
use serde_json::json;
use speclab_core::{
    chi_theoretical, critical_prune_rate, fit_powerlaw, frontier_trace, gamma_theoretical, loss, loss_curve,
    mode_value, prune_curve, quantization_excess_closed, quantization_excess_curve, quantization_excess_mc,
    sandwich_from_curve, time_at_index, window_by_k_star, DynamicsKernel, FrontierMethod, Monomial, PerturbationSpec,
    PruneControl, RegimeThresholds, SpectrumModel, Weighting,
};

use crate::config::{ExperimentConfig, KStarWindow, McCheckConfig, VerifyConfig};
use crate::experiments::{window_times, CHI_TOL_PER_RHO, FRONTIER_TOL_REL, GAMMA_TOL_PER_RHO};
use crate::report::{CheckResult, ExponentReport, Plot, Report, Series, Table};

pub const COMPLEMENTARITY_TOL: f64 = 0.07;
pub const TAIL_DOMINANCE_MIN: f64 = 0.3;
pub const SANDWICH_BAND: (f64, f64) = (0.1, 10.0);
pub const SANDWICH_SPREAD: f64 = 5.0;
pub const MC_MIN_AGREEMENT: f64 = 0.99;
const QUANT_SIGMA_SQ: f64 = 1e-4;

/// The three standard kernels.
pub fn default_kernels() -> Vec<DynamicsKernel> {
    vec![DynamicsKernel::ntk(), DynamicsKernel::feature_learning(0.0), DynamicsKernel::monomial(1.0, 2.0, 3.0)]
}

pub fn default_spectra() -> Vec<SpectrumModel> {
    vec![
        SpectrumModel::unit(2.5, 2.0, 10_000_000).expect("valid"),
        SpectrumModel::unit(3.0, 2.0, 10_000_000).expect("valid"),
    ]
}

/// `g = lambda t - lambda t^2 / 2`: decreasing in `t` once `t > 1`.
/// Fails validation by construction and is only used as a negative control.
pub fn broken_kernel() -> DynamicsKernel {
    DynamicsKernel::monomial_sum(vec![Monomial::new(1.0, 1.0, 1.0), Monomial::new(-0.5, 1.0, 2.0)])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComplementarityRow {
    pub config: String,
    pub rho: f64,
    pub chi_fitted: f64,
    pub gamma_fitted: f64,
    pub sum: f64,
    pub mismatch: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub checks: Vec<CheckResult>,
    pub exponents: Vec<ExponentReport>,
    pub complementarity: Option<ComplementarityRow>,
    pub loss_series: Option<Series>,
}

fn label(kernel: &DynamicsKernel, model: &SpectrumModel) -> String {
    format!("{} | a={} b={}", kernel.label(), model.a, model.b)
}

struct Checks<'a> {
    config: &'a str,
    out: Vec<CheckResult>,
}

impl Checks<'_> {
    fn record(
        &mut self,
        check: &str,
        measured: f64,
        expected: f64,
        tolerance: f64,
        pass: bool,
        note: impl Into<String>,
    ) {
        self.out.push(CheckResult {
            config: self.config.to_string(),
            check: check.to_string(),
            measured,
            expected,
            tolerance,
            pass,
            note: note.into(),
        });
    }

    fn near(&mut self, check: &str, measured: f64, expected: f64, tolerance: f64) {
        let pass = (measured - expected).abs() <= tolerance;
        self.record(check, measured, expected, tolerance, pass, "");
    }

    fn error(&mut self, check: &str, e: impl std::fmt::Display) {
        self.record(check, f64::NAN, f64::NAN, f64::NAN, false, format!("error: {e}"));
    }
}

/// Loss nonincreasing in `t`, and `f_k(t)` nondecreasing and inside `[0, w_k]`
/// for a spread of modes.
fn monotonicity(c: &mut Checks, kernel: &DynamicsKernel, model: &SpectrumModel, times: &[f64], losses: &[f64]) {
    let rises = losses.windows(2).filter(|w| w[1] > w[0] * (1.0 + 1e-12)).count();
    c.record("loss_monotone", rises as f64, 0.0, 0.0, rises == 0, "count of loss increases along the grid");
    let mut bad = 0usize;
    let mut k = 1u64;
    while k <= model.k_max {
        let w = model.coeff_sq(k).map(f64::sqrt).unwrap_or(f64::NAN);
        let mut prev = 0.0;
        for &t in times {
            match mode_value(kernel, model, k, t) {
                Ok(f) if f >= prev && f >= 0.0 && f <= w * (1.0 + 1e-12) => prev = f,
                _ => bad += 1,
            }
        }
        k *= 10;
    }
    c.record(
        "mode_monotone",
        bad as f64,
        0.0,
        0.0,
        bad == 0,
        "count of (mode, time) pairs violating 0 <= f_k(t) <= w_k nondecreasing",
    );
}

fn mc_agreement(c: &mut Checks, kernel: &DynamicsKernel, model: &SpectrumModel, mc: &McCheckConfig, kappa: f64) {
    let small = match SpectrumModel::new(model.a, model.b, model.c_lambda, model.c_w, mc.k_max) {
        Ok(m) => m,
        Err(e) => return c.error("mc_vs_closed", e),
    };
    let t = match time_at_index(kernel, &small, (mc.k_max as f64).sqrt(), kappa) {
        Ok(t) => t,
        Err(e) => return c.error("mc_vs_closed", e),
    };
    let base = PerturbationSpec { sigma_sq: mc.sigma_sq, tau_sq: mc.tau_sq, n_samples: mc.n_samples, seed: mc.seed };
    let closed = match quantization_excess_closed(kernel, &small, t, &base) {
        Ok(v) => v,
        Err(e) => return c.error("mc_vs_closed", e),
    };
    let mut within = 0u64;
    for s in 0..mc.seeds {
        let spec = PerturbationSpec { seed: mc.seed.wrapping_add(s), ..base };
        match quantization_excess_mc(kernel, &small, t, &spec) {
            Ok(e) if (e.mean - closed).abs() <= 3.0 * e.stderr => within += 1,
            Ok(_) => {}
            Err(e) => return c.error("mc_vs_closed", e),
        }
    }
    let frac = within as f64 / mc.seeds as f64;
    c.record(
        "mc_vs_closed",
        frac,
        1.0,
        1.0 - MC_MIN_AGREEMENT,
        frac >= MC_MIN_AGREEMENT,
        format!("fraction of {} seeds with |mean - closed| <= 3 stderr (k_max={})", mc.seeds, mc.k_max),
    );
}

/// Runs every check for one `(kernel, spectrum)` cell.
pub fn verify_cell(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    v: &VerifyConfig,
    window: KStarWindow,
    kappa: f64,
) -> CellOutcome {
    let config = label(kernel, model);
    let mut c = Checks { config: &config, out: Vec::new() };
    let mut exponents = Vec::new();
    let mut complementarity = None;
    let mut loss_series = None;

    let rho = kernel.analytic_rho();
    let times = match window_times(kernel, model, window, kappa, v.t_points) {
        Ok(t) => t,
        Err(e) => {
            c.error("setup", e);
            return CellOutcome { checks: c.out, exponents, complementarity, loss_series };
        }
    };

    let curve = match loss_curve(kernel, model, &times, Weighting::Eigen, Some(kappa)) {
        Ok(cv) => cv,
        Err(e) => {
            c.error("loss_curve", e);
            return CellOutcome { checks: c.out, exponents, complementarity, loss_series };
        }
    };
    loss_series = Some(Series { name: config.clone(), xs: times.clone(), ys: curve.values.clone() });
    let comps = curve.components.clone().unwrap_or_default();
    let ks: Vec<f64> = comps.iter().map(|s| s.k_star).collect();
    let w = window_by_k_star(&ks, window.k_star_min, window.k_star_max);

    match loss(kernel, model, 0.0, Weighting::Eigen) {
        Ok(l0) => c.record("loss_at_zero_is_max", l0, curve.values[0], 0.0, l0 >= curve.values[0], ""),
        Err(e) => c.error("loss_at_zero_is_max", e),
    }
    monotonicity(&mut c, kernel, model, &times, &curve.values);

    let Some(rho) = rho else {
        c.record("analytic_rho", f64::NAN, f64::NAN, 0.0, true, "kernel has no single rho; exponent checks skipped");
        return CellOutcome { checks: c.out, exponents, complementarity, loss_series };
    };
    let chi = chi_theoretical(model, rho);
    let gamma = gamma_theoretical(model, rho);
    c.near("theory_complementarity", chi + gamma, rho, 1e-12);

    // Elasticities: analytic vs central log-differences of the same kernel.
    let numeric = DynamicsKernel::monomial_sum(kernel.terms());
    let t_mid = times[times.len() / 2];
    match speclab_core::solve_level(kernel, t_mid, kappa).and_then(|lam| numeric.elasticities(lam, t_mid)) {
        Ok(r) => c.near("elasticity_numeric_vs_analytic", r.rho, rho, 1e-6),
        Err(e) => c.error("elasticity_numeric_vs_analytic", e),
    }

    let chi_fit = match fit_powerlaw(&times, &curve.values, w.clone()) {
        Ok(f) => {
            let e = ExponentReport::from_fit(&format!("chi[{config}]"), chi, &f, -1.0, CHI_TOL_PER_RHO * rho);
            c.record("chi_exponent", e.fitted, chi, e.tolerance, e.pass, format!("r2={:.6}", e.r_squared));
            exponents.push(e.clone());
            Some(e.fitted)
        }
        Err(e) => {
            c.error("chi_exponent", e);
            None
        }
    };
    let gamma_fit =
        match quantization_excess_curve(kernel, model, &times, &PerturbationSpec::closed(QUANT_SIGMA_SQ, 0.0))
            .map_err(anyhow::Error::from)
            .and_then(|dl| Ok(fit_powerlaw(&times, &dl, w.clone())?))
        {
            Ok(f) => {
                let e = ExponentReport::from_fit(&format!("gamma[{config}]"), gamma, &f, 1.0, GAMMA_TOL_PER_RHO * rho);
                c.record("gamma_exponent", e.fitted, gamma, e.tolerance, e.pass, format!("r2={:.6}", e.r_squared));
                exponents.push(e.clone());
                Some(e.fitted)
            }
            Err(e) => {
                c.error("gamma_exponent", e);
                None
            }
        };
    if let (Some(x), Some(g)) = (chi_fit, gamma_fit) {
        let mismatch = x + g - rho;
        let pass = mismatch.abs() <= COMPLEMENTARITY_TOL;
        c.record("complementarity", x + g, rho, COMPLEMENTARITY_TOL, pass, "");
        complementarity = Some(ComplementarityRow {
            config: config.clone(),
            rho,
            chi_fitted: x,
            gamma_fitted: g,
            sum: x + g,
            mismatch,
            pass,
        });
    }

    match frontier_trace(kernel, model, &times, FrontierMethod::LevelSet { kappa }) {
        Ok(tr) => {
            for (name, ys, expect) in
                [("lambda_star_slope", &tr.lambda_star, -rho), ("k_star_slope", &tr.k_star, rho / model.b)]
            {
                match fit_powerlaw(&times, ys, w.clone()) {
                    Ok(f) => c.near(name, f.slope, expect, FRONTIER_TOL_REL * expect.abs()),
                    Err(e) => c.error(name, e),
                }
            }
        }
        Err(e) => c.error("frontier", e),
    }

    if kernel.terms().len() == 1 {
        let min_tail = comps[w.clone()].iter().map(|s| s.tail_fraction()).fold(f64::INFINITY, f64::min);
        c.record(
            "tail_dominance",
            min_tail,
            TAIL_DOMINANCE_MIN,
            0.0,
            min_tail >= TAIL_DOMINANCE_MIN,
            "minimum tail share of L over the window",
        );
    }

    match sandwich_from_curve(model, &curve, 0.5, 2.0) {
        Ok(points) => {
            let pts: Vec<_> = points.iter().filter(|p| !p.truncated).collect();
            for (name, get) in [
                (
                    "sandwich_lower",
                    (|p: &speclab_core::SandwichPoint| p.lower_ratio) as fn(&speclab_core::SandwichPoint) -> f64,
                ),
                ("sandwich_upper", |p: &speclab_core::SandwichPoint| p.upper_ratio),
            ] {
                let vals: Vec<f64> = pts.iter().map(|p| get(p)).collect();
                let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
                let pass =
                    !vals.is_empty() && lo >= SANDWICH_BAND.0 && hi <= SANDWICH_BAND.1 && hi / lo < SANDWICH_SPREAD;
                c.record(
                    name,
                    hi / lo,
                    1.0,
                    SANDWICH_SPREAD,
                    pass,
                    format!("range [{lo:.4}, {hi:.4}] must lie in [0.1, 10], max/min < 5"),
                );
            }
        }
        Err(e) => c.error("sandwich", e),
    }

    let rates: Vec<f64> = times.iter().filter_map(|&t| critical_prune_rate(kernel, model, t, kappa).ok()).collect();
    let decreasing = rates.len() >= 2 && rates.windows(2).all(|p| p[1] < p[0]);
    c.record(
        "critical_rate_decreasing",
        rates.len() as f64,
        times.len() as f64,
        0.0,
        decreasing,
        "r* strictly decreasing over the grid",
    );

    let thetas: Vec<f64> = (1..=30).map(|i| 0.1 * i as f64).collect();
    match prune_curve(
        kernel,
        model,
        t_mid,
        &PruneControl::Theta(thetas),
        kappa,
        Weighting::Unweighted,
        RegimeThresholds::default(),
    ) {
        Ok(pc) => {
            let rises = pc.points.windows(2).filter(|p| p[1].excess > p[0].excess).count();
            c.record("prune_nonincreasing_in_cut", rises as f64, 0.0, 0.0, rises == 0, "");
        }
        Err(e) => c.error("prune_nonincreasing_in_cut", e),
    }

    mc_agreement(&mut c, kernel, model, &v.mc, kappa);

    CellOutcome { checks: c.out, exponents, complementarity, loss_series }
}

/// The negative control: only the monotonicity checks, which must fail.
fn verify_broken(model: &SpectrumModel, times: &[f64], kappa: f64) -> CellOutcome {
    let kernel = broken_kernel();
    let config = format!("negative-control {}", label(&kernel, model));
    let mut c = Checks { config: &config, out: Vec::new() };
    match loss_curve(&kernel, model, times, Weighting::Eigen, None) {
        Ok(cv) => monotonicity(&mut c, &kernel, model, times, &cv.values),
        Err(e) => c.error("loss_monotone", e),
    }
    let _ = kappa;
    CellOutcome { checks: c.out, exponents: Vec::new(), complementarity: None, loss_series: None }
}

/// Runs the matrix and assembles the report; check failures are results.
pub fn verify_suite(cfg: &ExperimentConfig) -> anyhow::Result<Report> {
    let v = cfg.verify.clone().unwrap_or_default();
    let kernels = v.kernels.clone().or_else(|| cfg.kernel.clone().map(|k| vec![k])).unwrap_or_else(default_kernels);
    let spectra = v.spectra.clone().or_else(|| cfg.spectrum.map(|m| vec![m])).unwrap_or_else(default_spectra);

    let mut outcomes = Vec::new();
    for m in &spectra {
        let window = cfg.window(m);
        for k in &kernels {
            outcomes.push(verify_cell(k, m, &v, window, cfg.kappa));
        }
        if v.inject_broken_kernel {
            let times = speclab_core::log_grid(1.0, 1e4, v.t_points)?;
            outcomes.push(verify_broken(m, &times, cfg.kappa));
        }
    }

    let mut table = Table::new(&["config", "check", "measured", "expected", "tolerance", "pass", "note"]);
    let mut comp = Table::new(&["config", "rho", "chi_fitted", "gamma_fitted", "sum", "mismatch", "pass"]);
    let mut report_checks = Vec::new();
    let mut exponents = Vec::new();
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for o in outcomes {
        for ch in &o.checks {
            table.push(vec![
                ch.config.clone().into(),
                ch.check.clone().into(),
                ch.measured.into(),
                ch.expected.into(),
                ch.tolerance.into(),
                ch.pass.into(),
                ch.note.clone().into(),
            ]);
        }
        if let Some(r) = &o.complementarity {
            comp.push(vec![
                r.config.clone().into(),
                r.rho.into(),
                r.chi_fitted.into(),
                r.gamma_fitted.into(),
                r.sum.into(),
                r.mismatch.into(),
                r.pass.into(),
            ]);
            rows.push(r.clone());
        }
        report_checks.extend(o.checks);
        exponents.extend(o.exponents);
        series.extend(o.loss_series);
    }
    let mut report = Report::new("verify", table);
    report.modes = spectra.iter().map(|m| m.k_max).max().unwrap_or(0);
    report.extra_tables.push(("complementarity.csv".into(), comp));
    report.checks = report_checks;
    report.exponents = exponents;
    let failed: Vec<String> =
        report.checks.iter().filter(|c| !c.pass).map(|c| format!("{}: {}", c.config, c.check)).collect();
    report.details = json!({
        "kernels": kernels.len(),
        "spectra": spectra.len(),
        "negative_control": v.inject_broken_kernel,
        "complementarity": rows,
        "failed_checks": failed,
    });
    report.plot =
        Some(Plot { title: "verify: loss curves".into(), x_label: "t".into(), y_label: "L(t)".into(), series });
    Ok(report)
}
