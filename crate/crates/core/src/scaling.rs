//! Log-log power-law fits and the compute-limited density law.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsKernel;
use crate::error::{param, Result, SpecError};
use crate::frontier::k_star;
use crate::spectrum::SpectrumModel;

/// Minimum r² for a fit to back an exponent claim.
pub const MIN_R_SQUARED: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_stderr: f64,
    pub window: Range<usize>,
}

impl PowerLawFit {
    pub fn acceptable(&self) -> bool {
        self.r_squared >= MIN_R_SQUARED
    }

    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

struct Ols {
    slope: f64,
    intercept: f64,
    r_squared: f64,
    slope_stderr: f64,
}

fn ols(x: &[f64], y: &[f64]) -> Ols {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my) * (v - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - (intercept + slope * a);
            r * r
        })
        .sum();
    let r_squared = if sse == 0.0 || syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let slope_stderr = if x.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ols { slope, intercept, r_squared, slope_stderr }
}

/// OLS of `ln y` on `ln x` over `xs[window]`.
pub fn fit_powerlaw(xs: &[f64], ys: &[f64], window: Range<usize>) -> Result<PowerLawFit> {
    if xs.len() != ys.len() {
        return Err(SpecError::Argument(format!("length mismatch: {} xs, {} ys", xs.len(), ys.len())));
    }
    if window.end > xs.len() || window.start > window.end {
        return Err(SpecError::Argument(format!("window {window:?} out of range for {} points", xs.len())));
    }
    if window.len() < 3 {
        return Err(SpecError::Argument(format!("a fit needs at least 3 points, window has {}", window.len())));
    }
    let (x, y) = (&xs[window.clone()], &ys[window.clone()]);
    if let Some(v) = x.iter().chain(y).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(SpecError::Domain(format!("log-log fit needs positive finite values, got {v}")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    if lx.windows(2).all(|w| w[0] == w[1]) {
        return Err(SpecError::Argument("x values are all equal".into()));
    }
    let o = ols(&lx, &ly);
    Ok(PowerLawFit {
        slope: o.slope,
        intercept: o.intercept,
        r_squared: o.r_squared,
        slope_stderr: o.slope_stderr,
        window,
    })
}

/// Contiguous index range of `k_stars` lying in `[lo, hi]`, for an increasing sequence.
pub fn window_by_k_star(k_stars: &[f64], lo: f64, hi: f64) -> Range<usize> {
    let start = k_stars.iter().position(|&k| k >= lo).unwrap_or(k_stars.len());
    let end = k_stars.iter().rposition(|&k| k <= hi).map_or(start, |i| i + 1);
    start..end.max(start)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComputeBudget {
    pub c_flops: f64,
    pub p_params: f64,
    #[serde(default = "one")]
    pub kappa_hw: f64,
}

fn one() -> f64 {
    1.0
}

impl ComputeBudget {
    pub fn new(c_flops: f64, p_params: f64, kappa_hw: f64) -> Result<Self> {
        let b = Self { c_flops, p_params, kappa_hw };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("c_flops", self.c_flops), ("p_params", self.p_params), ("kappa_hw", self.kappa_hw)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(param(name, format!("must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Training time `C / (kappa_hw P)`.
    pub fn time(&self) -> f64 {
        self.c_flops / (self.kappa_hw * self.p_params)
    }
}

/// `k*` at the training time the budget buys.
pub fn learned_modes(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    budget: &ComputeBudget,
    kappa: f64,
) -> Result<f64> {
    budget.validate()?;
    let ks = k_star(kernel, model, budget.time(), kappa)?;
    if ks > model.k_max as f64 {
        return Err(SpecError::CapacityExhausted { k_star: ks, k_max: model.k_max });
    }
    Ok(ks)
}

/// Learned modes per parameter.
pub fn density(kernel: &DynamicsKernel, model: &SpectrumModel, budget: &ComputeBudget, kappa: f64) -> Result<f64> {
    Ok(learned_modes(kernel, model, budget, kappa)? / budget.p_params)
}

/// Compute doubles every `tau_double`; parameters follow `P = p0 (C / c0)^s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensingConfig {
    pub c0: f64,
    #[serde(default = "one")]
    pub tau_double: f64,
    pub horizon: u32,
    pub p0: f64,
    pub s: f64,
    #[serde(default = "one")]
    pub kappa_hw: f64,
}

impl DensingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("c0", self.c0), ("tau_double", self.tau_double), ("p0", self.p0), ("kappa_hw", self.kappa_hw)]
        {
            if !(v > 0.0 && v.is_finite()) {
                return Err(param(name, format!("must be positive and finite, got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.s) {
            return Err(param("s", format!("must lie in [0, 1], got {}", self.s)));
        }
        if self.horizon < 1 {
            return Err(param("horizon", "needs at least one period"));
        }
        Ok(())
    }

    pub fn params_at(&self, c: f64) -> f64 {
        self.p0 * (c / self.c0).powf(self.s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DensingRow {
    pub period: u32,
    pub calendar: f64,
    pub compute: f64,
    pub params: f64,
    pub k_star: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensingTrajectory {
    pub rows: Vec<DensingRow>,
    /// Fitted per-period density ratio; `None` with fewer than 2 rows.
    pub growth_factor: Option<f64>,
    /// `log2` of the fitted growth factor.
    pub alpha_measured: Option<f64>,
    /// `rho/b - s (1 + rho/b)`, `None` when the kernel has no single rho.
    pub alpha_theoretical: Option<f64>,
    pub negative_alpha: bool,
    /// Capacity was exhausted before the horizon.
    pub truncated: bool,
}

pub fn densing_trajectory(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    cfg: &DensingConfig,
    kappa: f64,
) -> Result<DensingTrajectory> {
    cfg.validate()?;
    let mut rows = Vec::with_capacity(cfg.horizon as usize + 1);
    let mut truncated = false;
    for period in 0..=cfg.horizon {
        let compute = cfg.c0 * 2f64.powi(period as i32);
        let params = cfg.params_at(compute);
        let budget = ComputeBudget::new(compute, params, cfg.kappa_hw)?;
        match learned_modes(kernel, model, &budget, kappa) {
            Ok(ks) => rows.push(DensingRow {
                period,
                calendar: period as f64 * cfg.tau_double,
                compute,
                params,
                k_star: ks,
                density: ks / params,
            }),
            Err(SpecError::CapacityExhausted { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let growth_factor = (rows.len() >= 2).then(|| {
        let x: Vec<f64> = rows.iter().map(|r| r.period as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.density.ln()).collect();
        ols(&x, &y).slope.exp()
    });
    let alpha_measured = growth_factor.map(f64::log2);
    let alpha_theoretical = kernel.analytic_rho().map(|rho| {
        let r = rho / model.b;
        r - cfg.s * (1.0 + r)
    });
    let negative_alpha = alpha_measured.or(alpha_theoretical).is_some_and(|a| a < 0.0);
    Ok(DensingTrajectory { rows, growth_factor, alpha_measured, alpha_theoretical, negative_alpha, truncated })
}
