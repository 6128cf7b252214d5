//! Learning frontier `lambda*(t)`: level-set solves and rate maximization.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsKernel;
use crate::error::{Result, SpecError};
use crate::spectrum::SpectrumModel;

/// Default frontier level `g(lambda*, t) = 1`.
pub const DEFAULT_KAPPA: f64 = 1.0;

/// Default number of log-spaced eigenvalue points for rate maximization.
pub const DEFAULT_RATE_GRID: usize = 4001;

/// Which instantaneous rate is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RateKind {
    /// `w e^-g dg/dt`
    #[serde(rename = "f-rate")]
    FRate,
    /// `2 lambda w^2 e^-2g dg/dt`
    #[serde(rename = "loss-rate")]
    LossRate,
    /// `2 w^2 e^-2g dg/dt`, the rate of the unweighted loss
    #[serde(rename = "unweighted-loss-rate")]
    UnweightedLossRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FrontierMethod {
    LevelSet { kappa: f64 },
    RateArgmax { rate: RateKind, grid_points: usize },
}

impl FrontierMethod {
    pub fn level_set() -> Self {
        FrontierMethod::LevelSet { kappa: DEFAULT_KAPPA }
    }

    pub fn loss_rate() -> Self {
        FrontierMethod::RateArgmax { rate: RateKind::LossRate, grid_points: DEFAULT_RATE_GRID }
    }

    pub fn label(&self) -> String {
        match self {
            FrontierMethod::LevelSet { kappa } => format!("level-set(kappa={kappa})"),
            FrontierMethod::RateArgmax { rate: RateKind::FRate, .. } => "rate-argmax-f".into(),
            FrontierMethod::RateArgmax { rate: RateKind::LossRate, .. } => "rate-argmax-loss".into(),
            FrontierMethod::RateArgmax { rate: RateKind::UnweightedLossRate, .. } => {
                "rate-argmax-unweighted-loss".into()
            }
        }
    }
}

/// Bisection in `x` for an increasing `f`, run until the midpoint no longer
/// moves in floating point.
fn bisect_increasing(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(SpecError::Domain(format!("kappa must be positive, got {kappa}")))
    }
}

/// `lambda*` with `g(lambda*, t) = kappa`, restricted to the spectrum's eigenvalue range.
pub fn frontier_levelset(kernel: &DynamicsKernel, model: &SpectrumModel, t: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(t > 0.0) {
        return Err(SpecError::Domain(format!("t must be positive, got {t}")));
    }
    let (x_lo, x_hi) = (model.lambda_min().ln(), model.lambda_max().ln());
    let ln_t = t.ln();
    let g_min = kernel.g_log(x_lo, ln_t);
    let g_max = kernel.g_log(x_hi, ln_t);
    if !(g_min <= kappa && kappa <= g_max) {
        return Err(SpecError::Range { kappa, t, g_min, g_max });
    }
    let x = bisect_increasing(x_lo, x_hi, |x| kernel.g_log(x, ln_t) - kappa);
    Ok(x.exp())
}

/// Level-set frontier without the spectrum-range restriction: the bracket is
/// widened until it contains the root, so `k*` may fall below 1 or above `k_max`.
pub fn solve_level(kernel: &DynamicsKernel, t: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(t > 0.0) {
        return Err(SpecError::Domain(format!("t must be positive, got {t}")));
    }
    let ln_t = t.ln();
    let f = |x: f64| kernel.g_log(x, ln_t) - kappa;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) >= 0.0 {
        lo *= 2.0;
        if lo < -1.0e4 {
            return Err(SpecError::Domain(format!("no level-{kappa} frontier at t={t}")));
        }
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1.0e4 {
            return Err(SpecError::Domain(format!("no level-{kappa} frontier at t={t}")));
        }
    }
    Ok(bisect_increasing(lo, hi, f).exp())
}

/// Frontier index `k*(t)` from the unrestricted level set.
pub fn k_star(kernel: &DynamicsKernel, model: &SpectrumModel, t: f64, kappa: f64) -> Result<f64> {
    model.index_of_eigenvalue(solve_level(kernel, t, kappa)?)
}

/// Time at which the level-set frontier reaches (continuous) index `k`.
pub fn time_at_index(kernel: &DynamicsKernel, model: &SpectrumModel, k: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if !(k > 0.0) {
        return Err(SpecError::Domain(format!("index must be positive, got {k}")));
    }
    let ln_lam = model.c_lambda.ln() - model.b * k.ln();
    let f = |y: f64| kernel.g_log(ln_lam, y) - kappa;
    let (mut lo, mut hi) = (-1.0, 1.0);
    while f(lo) >= 0.0 {
        lo *= 2.0;
        if lo < -1.0e4 {
            return Err(SpecError::Domain(format!("no time reaches index {k}")));
        }
    }
    while f(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1.0e4 {
            return Err(SpecError::Domain(format!("no time reaches index {k}")));
        }
    }
    Ok(bisect_increasing(lo, hi, f).exp())
}

/// Result of a rate maximization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateArgmax {
    pub lambda_star: f64,
    /// Maximum on the first or last grid point; no refinement applied.
    pub at_boundary: bool,
    /// More than one interior local maximum on the grid.
    pub multimodal: bool,
}

/// `ln R(lambda, t)` for the chosen rate definition, with `w^2` interpolated
/// continuously in `lambda`.
fn ln_rate(kernel: &DynamicsKernel, model: &SpectrumModel, kind: RateKind, ln_lam: f64, t: f64) -> f64 {
    let lam = ln_lam.exp();
    let g = kernel.g_log(ln_lam, t.ln());
    let dg = kernel.dg_dt(lam, t);
    if !(dg > 0.0) {
        return f64::NEG_INFINITY;
    }
    let ln_w2 = model.coeff_sq_at(lam).ln();
    match kind {
        RateKind::FRate => 0.5 * ln_w2 - g + dg.ln(),
        RateKind::LossRate => std::f64::consts::LN_2 + ln_lam + ln_w2 - 2.0 * g + dg.ln(),
        RateKind::UnweightedLossRate => std::f64::consts::LN_2 + ln_w2 - 2.0 * g + dg.ln(),
    }
}

/// Maximizes the instantaneous rate over a log-spaced eigenvalue grid spanning
/// the spectrum, refined by golden-section search around the best grid point.
pub fn frontier_rate_argmax(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    t: f64,
    kind: RateKind,
    grid_points: usize,
) -> Result<RateArgmax> {
    if !(t > 0.0) {
        return Err(SpecError::Domain(format!("t must be positive, got {t}")));
    }
    if grid_points < 1000 {
        return Err(SpecError::Argument(format!("rate grid needs at least 1000 points, got {grid_points}")));
    }
    let (x_lo, x_hi) = (model.lambda_min().ln(), model.lambda_max().ln());
    let h = (x_hi - x_lo) / (grid_points - 1) as f64;
    let ys: Vec<f64> = (0..grid_points).map(|i| ln_rate(kernel, model, kind, x_lo + h * i as f64, t)).collect();

    let mut best = 0;
    for (i, &y) in ys.iter().enumerate() {
        if y > ys[best] {
            best = i;
        }
    }
    let peaks = (1..grid_points - 1).filter(|&i| ys[i] > ys[i - 1] && ys[i] >= ys[i + 1]).count();

    if best == 0 || best == grid_points - 1 {
        return Ok(RateArgmax {
            lambda_star: (x_lo + h * best as f64).exp(),
            at_boundary: true,
            multimodal: peaks > 1,
        });
    }
    // Golden-section search on the bracketing cell pair.
    let f = |x: f64| ln_rate(kernel, model, kind, x, t);
    let (mut lo, mut hi) = (x_lo + h * (best - 1) as f64, x_lo + h * (best + 1) as f64);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (hi - r * (hi - lo), lo + r * (hi - lo));
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - r * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + r * (hi - lo);
            fd = f(d);
        }
    }
    Ok(RateArgmax { lambda_star: (0.5 * (lo + hi)).exp(), at_boundary: false, multimodal: peaks > 1 })
}

/// Frontier over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierTrace {
    pub times: Vec<f64>,
    pub lambda_star: Vec<f64>,
    pub k_star: Vec<f64>,
    /// `g(lambda*(t), t)`
    pub level: Vec<f64>,
    pub method: FrontierMethod,
    /// Per time: rate maximum hit the grid boundary.
    pub boundary: Vec<bool>,
    /// Per time: rate profile had several local maxima.
    pub multimodal: Vec<bool>,
}

pub fn frontier_trace(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    times: &[f64],
    method: FrontierMethod,
) -> Result<FrontierTrace> {
    let solved: Vec<Result<(f64, bool, bool)>> = times
        .par_iter()
        .map(|&t| match method {
            FrontierMethod::LevelSet { kappa } => frontier_levelset(kernel, model, t, kappa).map(|l| (l, false, false)),
            FrontierMethod::RateArgmax { rate, grid_points } => {
                frontier_rate_argmax(kernel, model, t, rate, grid_points)
                    .map(|r| (r.lambda_star, r.at_boundary, r.multimodal))
            }
        })
        .collect();

    let mut trace = FrontierTrace {
        times: times.to_vec(),
        lambda_star: Vec::with_capacity(times.len()),
        k_star: Vec::with_capacity(times.len()),
        level: Vec::with_capacity(times.len()),
        method,
        boundary: Vec::with_capacity(times.len()),
        multimodal: Vec::with_capacity(times.len()),
    };
    for (&t, r) in times.iter().zip(solved) {
        let (lam, boundary, multimodal) = r?;
        trace.lambda_star.push(lam);
        trace.k_star.push(model.index_of_eigenvalue(lam)?);
        trace.level.push(kernel.evaluate_g(lam, t)?);
        trace.boundary.push(boundary);
        trace.multimodal.push(multimodal);
    }
    Ok(trace)
}
