//! One function per experiment; each returns a [`Report`].

use std::ops::Range;

use anyhow::{bail, Context, Result};
use serde_json::json;
use speclab_core::{
    chi_theoretical, critical_point_trajectory, densing_trajectory, fit_powerlaw, frontier_levelset,
    frontier_rate_argmax, gamma_theoretical, loss, loss_curve, prune_curve, quantization_excess_curve,
    quantization_excess_mc, solve_level, time_at_index, window_by_k_star, ComputeBudget, DynamicsKernel,
    FrontierMethod, PerturbationSpec, PruneControl, RegimeThresholds, SpecError, SpectrumModel,
};

use crate::config::{ExperimentConfig, KStarWindow};
use crate::report::{Cell, ExponentReport, Plot, Report, Series, Table};

/// Exponent tolerances, relative to `rho` where noted.
pub const CHI_TOL_PER_RHO: f64 = 0.04;
pub const GAMMA_TOL_PER_RHO: f64 = 0.05;
pub const FRONTIER_TOL_REL: f64 = 0.02;
pub const DENSITY_TOL_REL: f64 = 0.05;
pub const TRAJECTORY_TOL_REL: f64 = 0.15;

/// Time grid from the config, else 40 points sweeping `k*` across the window.
pub fn resolve_times(
    cfg: &ExperimentConfig,
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    window: KStarWindow,
    points: usize,
) -> Result<Vec<f64>> {
    if let Some(g) = &cfg.t_grid {
        return g.resolve("t_grid");
    }
    window_times(kernel, model, window, cfg.kappa, points)
}

pub fn window_times(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    window: KStarWindow,
    kappa: f64,
    points: usize,
) -> Result<Vec<f64>> {
    let t0 = time_at_index(kernel, model, window.k_star_min, kappa)?;
    let t1 = time_at_index(kernel, model, window.k_star_max, kappa)?;
    Ok(speclab_core::log_grid(t0, t1, points)?)
}

/// `rho` for the kernel: analytic when it has one, else the elasticity ratio
/// at the level-set frontier at time `t`.
pub fn rho_reference(kernel: &DynamicsKernel, t: f64, kappa: f64) -> Result<(f64, &'static str)> {
    if let Some(r) = kernel.analytic_rho() {
        return Ok((r, "analytic"));
    }
    let lam = solve_level(kernel, t, kappa)?;
    Ok((kernel.elasticities(lam, t)?.rho, "elasticity-at-frontier"))
}

pub fn k_stars(kernel: &DynamicsKernel, model: &SpectrumModel, times: &[f64], kappa: f64) -> Result<Vec<f64>> {
    Ok(times
        .iter()
        .map(|&t| speclab_core::k_star(kernel, model, t, kappa))
        .collect::<speclab_core::Result<Vec<f64>>>()?)
}

/// Fits `ys` against `xs` over `window`; records a flag instead of failing
/// when the window holds fewer than 3 points.
#[allow(clippy::too_many_arguments)]
pub fn fit_exponent(
    report: &mut Report,
    name: &str,
    xs: &[f64],
    ys: &[f64],
    window: Range<usize>,
    theoretical: f64,
    sign: f64,
    tolerance: f64,
) -> Result<Option<ExponentReport>> {
    if window.len() < 3 {
        report.flags.push(format!("{name}: fit window has {} points, need 3", window.len()));
        return Ok(None);
    }
    let fit = fit_powerlaw(xs, ys, window).with_context(|| format!("fitting {name}"))?;
    let e = ExponentReport::from_fit(name, theoretical, &fit, sign, tolerance);
    report.exponents.push(e.clone());
    Ok(Some(e))
}

fn series(name: &str, xs: &[f64], ys: &[f64]) -> Series {
    Series { name: name.to_string(), xs: xs.to_vec(), ys: ys.to_vec() }
}

pub fn run_loss(cfg: &ExperimentConfig) -> Result<Report> {
    let (model, kernel) = (cfg.spectrum()?, cfg.kernel()?);
    let window = cfg.window(&model);
    let times = resolve_times(cfg, &kernel, &model, window, 40)?;
    let curve = loss_curve(&kernel, &model, &times, cfg.weighting, Some(cfg.kappa))?;
    let comps = curve.components.as_ref().expect("split requested");

    let mut table = Table::new(&["t", "k_star", "loss", "head", "tail", "tail_fraction"]);
    for (j, &t) in times.iter().enumerate() {
        let c = comps[j];
        table.push(vec![
            t.into(),
            c.k_star.into(),
            curve.values[j].into(),
            c.head.into(),
            c.tail.into(),
            c.tail_fraction().into(),
        ]);
    }
    let mut report = Report::new("loss", table);
    report.modes = model.k_max;
    if curve.tail_truncated {
        report.flags.push("tail-truncated: infinite-spectrum remainder diverges for this weighting".into());
    }
    let ks: Vec<f64> = comps.iter().map(|c| c.k_star).collect();
    let w = window_by_k_star(&ks, window.k_star_min, window.k_star_max);
    let t_mid = times[(w.start + w.end.max(w.start + 1) - 1) / 2];
    let (rho, rho_source) = rho_reference(&kernel, t_mid, cfg.kappa)?;
    let chi = chi_theoretical(&model, rho);
    fit_exponent(&mut report, "chi", &times, &curve.values, w.clone(), chi, -1.0, CHI_TOL_PER_RHO * rho)?;
    let min_tail = comps[w.clone()].iter().map(|c| c.tail_fraction()).fold(f64::INFINITY, f64::min);
    report.details = json!({
        "rho": rho,
        "rho_source": rho_source,
        "weighting": cfg.weighting.as_str(),
        "kappa": cfg.kappa,
        "window_k_star": [window.k_star_min, window.k_star_max],
        "min_tail_fraction_in_window": if min_tail.is_finite() { Some(min_tail) } else { None },
    });
    report.plot = Some(Plot {
        title: format!("loss, {}", kernel.label()),
        x_label: "t".into(),
        y_label: "L(t)".into(),
        series: vec![
            series("loss", &times, &curve.values),
            series("tail beyond k*", &times, &comps.iter().map(|c| c.tail).collect::<Vec<_>>()),
        ],
    });
    Ok(report)
}

pub fn run_frontier(cfg: &ExperimentConfig) -> Result<Report> {
    let (model, kernel) = (cfg.spectrum()?, cfg.kernel()?);
    let method = cfg.frontier.map(|f| f.method).unwrap_or(FrontierMethod::LevelSet { kappa: cfg.kappa });
    let window = cfg.window(&model);
    let times = resolve_times(cfg, &kernel, &model, window, 40)?;

    let mut table = Table::new(&["t", "lambda_star", "k_star", "level", "boundary", "multimodal"]);
    let mut report_flags = Vec::new();
    let (mut ts, mut lams, mut ks, mut levels) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for &t in &times {
        let solved = match method {
            FrontierMethod::LevelSet { kappa } => {
                frontier_levelset(&kernel, &model, t, kappa).map(|l| (l, false, false))
            }
            FrontierMethod::RateArgmax { rate, grid_points } => {
                frontier_rate_argmax(&kernel, &model, t, rate, grid_points)
                    .map(|r| (r.lambda_star, r.at_boundary, r.multimodal))
            }
        };
        let (lam, boundary, multimodal) = match solved {
            Ok(v) => v,
            Err(e @ SpecError::Range { .. }) => {
                report_flags.push(format!("truncated at t={t}: {e}"));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        let k = model.index_of_eigenvalue(lam)?;
        let level = kernel.evaluate_g(lam, t)?;
        table.push(vec![t.into(), lam.into(), k.into(), level.into(), boundary.into(), multimodal.into()]);
        if boundary {
            report_flags.push(format!("boundary maximum at t={t}"));
        }
        if multimodal {
            report_flags.push(format!("multimodal rate at t={t}"));
        }
        ts.push(t);
        lams.push(lam);
        ks.push(k);
        levels.push(level);
    }
    let mut report = Report::new("frontier", table);
    report.modes = model.k_max;
    report.flags = report_flags;
    if ts.is_empty() {
        bail!("frontier not attainable at any grid time");
    }
    let w = window_by_k_star(&ks, window.k_star_min, window.k_star_max);
    let (rho, rho_source) = rho_reference(&kernel, ts[(w.start + w.end.max(w.start + 1) - 1) / 2], cfg.kappa)?;
    fit_exponent(&mut report, "lambda_star_slope", &ts, &lams, w.clone(), -rho, 1.0, FRONTIER_TOL_REL * rho)?;
    let kb = rho / model.b;
    fit_exponent(&mut report, "k_star_slope", &ts, &ks, w, kb, 1.0, FRONTIER_TOL_REL * kb)?;

    // Level drift over the final decade.
    let t_last = *ts.last().unwrap();
    let tail: Vec<f64> = ts.iter().zip(&levels).filter(|(t, _)| **t >= t_last / 10.0).map(|(_, l)| *l).collect();
    let (lo, hi) = tail.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    report.details = json!({
        "method": method.label(),
        "rho": rho,
        "rho_source": rho_source,
        "final_decade_level_min": lo,
        "final_decade_level_max": hi,
        "final_decade_level_variation": hi / lo - 1.0,
    });
    report.plot = Some(Plot {
        title: format!("frontier, {}", kernel.label()),
        x_label: "t".into(),
        y_label: "lambda*, k*".into(),
        series: vec![series("lambda*", &ts, &lams), series("k*", &ts, &ks)],
    });
    Ok(report)
}

pub fn run_quantize(cfg: &ExperimentConfig) -> Result<Report> {
    let (model, kernel) = (cfg.spectrum()?, cfg.kernel()?);
    let spec: PerturbationSpec = *cfg.quantize.as_ref().context("missing required key `quantize`")?;
    let window = cfg.window(&model);
    let times = resolve_times(cfg, &kernel, &model, window, 40)?;
    let closed = quantization_excess_curve(&kernel, &model, &times, &spec)?;
    let ks = k_stars(&kernel, &model, &times, cfg.kappa)?;
    let mc = spec.n_samples >= 2;

    let mut table = if mc {
        Table::new(&["t", "k_star", "closed", "mc_mean", "mc_stderr"])
    } else {
        Table::new(&["t", "k_star", "closed"])
    };
    let mut mc_means = Vec::new();
    for (j, &t) in times.iter().enumerate() {
        let mut row: Vec<Cell> = vec![t.into(), ks[j].into(), closed[j].into()];
        if mc {
            let e = quantization_excess_mc(&kernel, &model, t, &spec)?;
            row.push(e.mean.into());
            row.push(e.stderr.into());
            mc_means.push(e.mean);
        }
        table.push(row);
    }
    let mut report = Report::new("quantize", table);
    report.modes = model.k_max;
    let w = window_by_k_star(&ks, window.k_star_min, window.k_star_max);
    let (rho, rho_source) = rho_reference(&kernel, times[(w.start + w.end.max(w.start + 1) - 1) / 2], cfg.kappa)?;
    let gamma = gamma_theoretical(&model, rho);
    if spec.tau_sq == 0.0 && spec.sigma_sq > 0.0 {
        fit_exponent(&mut report, "gamma", &times, &closed, w, gamma, 1.0, GAMMA_TOL_PER_RHO * rho)?;
    } else {
        report.flags.push("gamma fit skipped: the exponent describes the sigma^2 term alone (set tau_sq = 0)".into());
    }
    report.details = json!({
        "rho": rho,
        "rho_source": rho_source,
        "sigma_sq": spec.sigma_sq,
        "tau_sq": spec.tau_sq,
        "n_samples": spec.n_samples,
        "seed": spec.seed,
    });
    let mut s = vec![series("closed form", &times, &closed)];
    if mc {
        s.push(series("monte carlo", &times, &mc_means));
    }
    report.plot = Some(Plot {
        title: format!("quantization excess, {}", kernel.label()),
        x_label: "t".into(),
        y_label: "excess loss".into(),
        series: s,
    });
    Ok(report)
}

pub fn run_prune(cfg: &ExperimentConfig) -> Result<Report> {
    let (model, kernel) = (cfg.spectrum()?, cfg.kernel()?);
    let p = cfg.prune.as_ref().context("missing required key `prune`")?;
    let control = match (&p.theta, &p.retained_fraction) {
        (Some(th), _) => PruneControl::Theta(th.clone()),
        (None, Some(fr)) => PruneControl::RetainedFraction(fr.clone()),
        (None, None) => bail!("`prune` needs `theta` or `retained_fraction`"),
    };
    let thresholds = RegimeThresholds { saturation: p.saturation_eps, plateau_margin: p.plateau_margin };
    let curve = prune_curve(&kernel, &model, p.t, &control, cfg.kappa, p.weighting, thresholds)?;
    let l_t = loss(&kernel, &model, p.t, p.weighting)?;

    let mut table = Table::new(&["control", "theta", "k_cut", "excess", "predicted", "regime"]);
    for q in &curve.points {
        table.push(vec![
            q.control.into(),
            q.theta.into(),
            q.k_cut.into(),
            q.excess.into(),
            q.predicted.into(),
            q.regime.as_str().into(),
        ]);
    }
    let mut report = Report::new("prune", table);
    report.modes = model.k_max;

    let in_window: Vec<_> = curve.points.iter().filter(|q| (0.1..=0.9).contains(&q.theta)).collect();
    let max_dev = in_window.iter().map(|q| (q.excess / q.predicted - 1.0).abs()).fold(0.0f64, f64::max);
    let plateau_ratio = curve
        .points
        .iter()
        .filter(|q| q.regime == speclab_core::PruneRegime::Plateau)
        .map(|q| q.excess / l_t)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));

    let mut trajectory = serde_json::Value::Null;
    if let Some(g) = &cfg.t_grid {
        let times = g.resolve("t_grid")?;
        let tr = critical_point_trajectory(&kernel, &model, &times, cfg.kappa)?;
        let mut t2 = Table::new(&["t", "k_star", "r_star", "excess"]);
        for q in &tr.points {
            t2.push(vec![q.t.into(), q.k_star.into(), q.r_star.into(), q.excess.into()]);
        }
        if let Some(fit) = &tr.fit {
            let c = tr.predicted_slope;
            let e = ExponentReport::from_fit("critical_trajectory_slope", c, fit, 1.0, TRAJECTORY_TOL_REL * c.abs());
            report.exponents.push(e);
        } else {
            report.flags.push("critical trajectory: fewer than 3 points, no fit".into());
        }
        trajectory = json!({ "points": tr.points.len(), "predicted_slope": tr.predicted_slope });
        report.extra_tables.push(("trajectory.csv".into(), t2));
    }
    report.details = json!({
        "t": p.t,
        "k_star": curve.k_star,
        "weighting": p.weighting.as_str(),
        "loss_at_t": l_t,
        "reference_excess_theta_half": curve.reference_excess,
        "max_theta_form_deviation_0.1_to_0.9": if in_window.is_empty() { None } else { Some(max_dev) },
        "max_plateau_excess_over_loss": plateau_ratio,
        "trajectory": trajectory,
    });
    let thetas: Vec<f64> = curve.points.iter().map(|q| q.theta).collect();
    report.plot = Some(Plot {
        title: format!("pruning excess at t={}, {}", p.t, kernel.label()),
        x_label: "theta = k_cut / k*".into(),
        y_label: "excess loss".into(),
        series: vec![
            series("brute force", &thetas, &curve.points.iter().map(|q| q.excess).collect::<Vec<_>>()),
            series("sharp-frontier form", &thetas, &curve.points.iter().map(|q| q.predicted).collect::<Vec<_>>()),
        ],
    });
    Ok(report)
}

pub fn run_density(cfg: &ExperimentConfig) -> Result<Report> {
    let (model, kernel) = (cfg.spectrum()?, cfg.kernel()?);
    let d = cfg.density.as_ref().context("missing required key `density`")?;
    let c_grid = d.c_grid.resolve("density.c_grid")?;
    let p_grid = d.p_grid.resolve("density.p_grid")?;
    let mut table = Table::new(&["sweep", "c_flops", "p_params", "t", "k_star", "density"]);
    let mut flags = Vec::new();
    let mut sweep = |name: &str, budgets: Vec<(f64, f64)>| -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let (mut cs, mut ps, mut ds) = (Vec::new(), Vec::new(), Vec::new());
        for (c, p) in budgets {
            let b = ComputeBudget::new(c, p, d.kappa_hw)?;
            match speclab_core::learned_modes(&kernel, &model, &b, cfg.kappa) {
                Ok(k) => {
                    table.push(vec![name.into(), c.into(), p.into(), b.time().into(), k.into(), (k / p).into()]);
                    cs.push(c);
                    ps.push(p);
                    ds.push(k / p);
                }
                Err(e @ SpecError::CapacityExhausted { .. }) => flags.push(format!("{name}: C={c}, P={p}: {e}")),
                Err(e) => return Err(e.into()),
            }
        }
        Ok((cs, ps, ds))
    };
    let (cs, _, dc) = sweep("fixed-p", c_grid.iter().map(|&c| (c, d.p_fixed)).collect())?;
    let (_, ps, dp) = sweep("fixed-c", p_grid.iter().map(|&p| (d.c_fixed, p)).collect())?;
    let mut report = Report::new("density", table);
    report.modes = model.k_max;
    report.flags = flags;
    let t_ref = ComputeBudget::new(d.c_fixed, d.p_fixed, d.kappa_hw)?.time();
    let (rho, rho_source) = rho_reference(&kernel, t_ref, cfg.kappa)?;
    let r = rho / model.b;
    fit_exponent(&mut report, "density_slope_vs_compute", &cs, &dc, 0..cs.len(), r, 1.0, DENSITY_TOL_REL * r)?;
    fit_exponent(
        &mut report,
        "density_slope_vs_params",
        &ps,
        &dp,
        0..ps.len(),
        -(1.0 + r),
        1.0,
        DENSITY_TOL_REL * (1.0 + r),
    )?;
    report.details = json!({ "rho": rho, "rho_source": rho_source, "kappa_hw": d.kappa_hw });
    report.plot = Some(Plot {
        title: format!("model density, {}", kernel.label()),
        x_label: "C or P".into(),
        y_label: "density k*/P".into(),
        series: vec![series("fixed P, vs C", &cs, &dc), series("fixed C, vs P", &ps, &dp)],
    });
    Ok(report)
}

pub fn run_densing(cfg: &ExperimentConfig) -> Result<Report> {
    let (model, kernel) = (cfg.spectrum()?, cfg.kernel()?);
    let dc = cfg.densing.as_ref().context("missing required key `densing`")?;
    let tr = densing_trajectory(&kernel, &model, dc, cfg.kappa)?;
    let mut table = Table::new(&["period", "calendar", "compute", "params", "k_star", "density"]);
    for r in &tr.rows {
        table.push(vec![
            (r.period as u64).into(),
            r.calendar.into(),
            r.compute.into(),
            r.params.into(),
            r.k_star.into(),
            r.density.into(),
        ]);
    }
    let mut report = Report::new("densing", table);
    report.modes = model.k_max;
    if tr.truncated {
        report.flags.push("truncated: model capacity exhausted before the horizon".into());
    }
    if tr.negative_alpha {
        report.flags.push("negative-alpha: density shrinks as compute grows".into());
    }
    let (rho, rho_source) = rho_reference(&kernel, dc.c0 / (dc.kappa_hw * dc.p0), cfg.kappa)?;
    let r = rho / model.b;
    let alpha_theory = r - dc.s * (1.0 + r);
    report.details = json!({
        "rho": rho,
        "rho_source": rho_source,
        "s": dc.s,
        "growth_factor": tr.growth_factor,
        "growth_factor_theoretical": 2f64.powf(alpha_theory),
        "alpha_measured": tr.alpha_measured,
        "alpha_theoretical": alpha_theory,
        "negative_alpha": tr.negative_alpha,
        "truncated": tr.truncated,
    });
    let cs: Vec<f64> = tr.rows.iter().map(|r| r.compute).collect();
    report.plot = Some(Plot {
        title: format!("densing, s={}", dc.s),
        x_label: "compute C".into(),
        y_label: "density".into(),
        series: vec![series("density", &cs, &tr.rows.iter().map(|r| r.density).collect::<Vec<_>>())],
    });
    Ok(report)
}

pub fn run_fit(cfg: &ExperimentConfig) -> Result<Report> {
    let f = cfg.fit.as_ref().context("missing required key `fit`")?;
    let mut rdr = csv::Reader::from_path(&f.input).with_context(|| format!("reading {}", f.input.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("column `{name}` not found in {}", f.input.display()))
    };
    let (ix, iy) = (col(&f.x)?, col(&f.y)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i).unwrap_or("").parse::<f64>().with_context(|| format!("non-numeric value in column {i}"))
        };
        xs.push(parse(ix)?);
        ys.push(parse(iy)?);
    }
    let window = f.window.map_or(0..xs.len(), |[a, b]| a..b);
    let fit = fit_powerlaw(&xs, &ys, window.clone())?;
    let mut table = Table::new(&[f.x.as_str(), f.y.as_str(), "fitted", "in_window"]);
    for (i, (&x, &y)) in xs.iter().zip(&ys).enumerate() {
        table.push(vec![x.into(), y.into(), fit.predict(x).into(), window.contains(&i).into()]);
    }
    let mut report = Report::new("fit", table);
    match f.theoretical {
        Some(th) => report.exponents.push(ExponentReport::from_fit("slope", th, &fit, 1.0, f64::INFINITY)),
        None => report.flags.push("no theoretical slope given; fit reported in details only".into()),
    }
    report.details = json!({ "fit": fit, "x": f.x, "y": f.y });
    report.plot = Some(Plot {
        title: format!("{} vs {}", f.y, f.x),
        x_label: f.x.clone(),
        y_label: f.y.clone(),
        series: vec![
            series("data", &xs, &ys),
            series("fit", &xs[window.clone()], &xs[window].iter().map(|&x| fit.predict(x)).collect::<Vec<_>>()),
        ],
    });
    Ok(report)
}
