//! Compression as spectral perturbation.
//!
//! Quantization perturbs every learned coefficient and feature with
//! independent zero-mean noise; pruning truncates the learned expansion at
//! `k_cut`. Both excess losses are sums of `f_k(t)^2`-type terms evaluated
//! mode by mode.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicsKernel;
use crate::error::{Result, SpecError};
use crate::frontier::{k_star, solve_level};
use crate::grid::validate_time_grid;
use crate::scaling::{fit_powerlaw, PowerLawFit};
use crate::spectrum::{power_tail, SpectrumModel, Weighting};
use crate::sum::NeumaierSum;
use crate::sweep::{learned_sq_coefficients, one_minus_exp_neg, SmallGSeries, TimeTable};

/// Noise model for quantization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSpec {
    /// Feature-noise variance.
    pub sigma_sq: f64,
    /// Coefficient-noise variance.
    pub tau_sq: f64,
    /// Monte-Carlo draws; 0 means closed form only.
    #[serde(default)]
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn closed(sigma_sq: f64, tau_sq: f64) -> Self {
        Self { sigma_sq, tau_sq, n_samples: 0, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_sq >= 0.0 && self.sigma_sq.is_finite()) {
            return Err(crate::error::param("sigma_sq", "must be a finite nonnegative variance"));
        }
        if !(self.tau_sq >= 0.0 && self.tau_sq.is_finite()) {
            return Err(crate::error::param("tau_sq", "must be a finite nonnegative variance"));
        }
        Ok(())
    }
}

/// Per time: `sum_k weight_k f_k(t)^2` over all modes and over each suffix `k > cut`.
struct CoefficientEnergy {
    total: Vec<f64>,
    suffix: Vec<Vec<f64>>,
}

/// Below this `g` the remainder uses the pairwise `g^2` expansion.
const SMALL_G: f64 = 1e-6;
const REMAINDER_PANELS: usize = 2048;

/// `sum_{k > from} weight_k w_k^2 g_k^2` over the monomial terms, pairwise.
fn small_g_tail(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    t: f64,
    weighting: Weighting,
    from: f64,
) -> Option<f64> {
    let terms = kernel.terms();
    let (base_coef, base_s) = match weighting {
        Weighting::Eigen => (model.c_w, model.a),
        Weighting::Unweighted => (model.c_w / model.c_lambda, model.a - model.b),
    };
    let mut acc = 0.0;
    for ti in &terms {
        for tj in &terms {
            let m = ti.m + tj.m;
            let coef = base_coef * model.c_lambda.powf(m) * ti.c * tj.c * t.powf(ti.n + tj.n);
            acc += power_tail(coef, base_s + model.b * m, from)?;
        }
    }
    Some(acc)
}

/// Continuum estimate of `sum_{k > from} weight_k f_k(t)^2`. Where `g` is
/// not small the integrand is integrated in `ln k` (Simpson); beyond the
/// index where `g` drops to `SMALL_G` the `g^2` expansion is exact to
/// relative order `SMALL_G`.
fn small_g_remainder(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    t: f64,
    weighting: Weighting,
    from: f64,
) -> Option<f64> {
    if t <= 0.0 {
        return Some(0.0);
    }
    let k1 = match solve_level(kernel, t, SMALL_G) {
        Ok(lam) => (lam / model.c_lambda).powf(-1.0 / model.b),
        Err(_) => from,
    };
    if k1 <= from {
        return small_g_tail(kernel, model, t, weighting, from);
    }
    let ln_t = t.ln();
    let (ln_coef, expo) = match weighting {
        Weighting::Eigen => (model.c_w.ln(), 1.0 - model.a),
        Weighting::Unweighted => ((model.c_w / model.c_lambda).ln(), 1.0 + model.b - model.a),
    };
    let integrand = |u: f64| {
        let g = kernel.g_log(model.c_lambda.ln() - model.b * u, ln_t);
        let learned = (-g).exp_m1();
        (ln_coef + expo * u).exp() * learned * learned
    };
    let (u0, u1) = (from.ln(), k1.ln());
    let h = (u1 - u0) / REMAINDER_PANELS as f64;
    let mut acc = NeumaierSum::new();
    acc.add(integrand(u0) + integrand(u1));
    for i in 1..REMAINDER_PANELS {
        acc.add(if i % 2 == 1 { 4.0 } else { 2.0 } * integrand(u0 + h * i as f64));
    }
    Some(acc.value() * h / 3.0 + small_g_tail(kernel, model, t, weighting, k1)?)
}

fn coefficient_energy(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    times: &[f64],
    weighting: Weighting,
    cuts: &[Vec<u64>],
) -> CoefficientEnergy {
    let n = times.len();
    let k_max = model.k_max;
    let mut table = TimeTable::new(kernel, times);
    let mut g = vec![0.0; n];
    let mut acc = vec![NeumaierSum::new(); n];

    // Cuts visited in descending order; a snapshot at mode k holds sum_{k' > k}.
    let order: Vec<Vec<usize>> = cuts
        .iter()
        .map(|c| {
            let mut o: Vec<usize> = (0..c.len()).collect();
            o.sort_by(|&x, &y| c[y].cmp(&c[x]));
            o
        })
        .collect();
    let mut next = vec![0usize; n];
    let mut snap: Vec<Vec<NeumaierSum>> = cuts.iter().map(|c| vec![NeumaierSum::new(); c.len()]).collect();
    let mut beyond: Vec<Vec<bool>> = cuts.iter().map(|c| vec![false; c.len()]).collect();
    for j in 0..cuts.len() {
        while next[j] < order[j].len() && cuts[j][order[j][next[j]]] >= k_max {
            let idx = order[j][next[j]];
            beyond[j][idx] = true;
            next[j] += 1;
        }
    }

    // Every cut lies on the direct path, so snapshots never fall inside the series.
    let floors: Vec<u64> = (0..n).map(|j| cuts.get(j).and_then(|c| c.iter().max().copied()).unwrap_or(0)).collect();
    let mut series = SmallGSeries::new(kernel, model, times, &floors);
    let coef = learned_sq_coefficients();

    for mode in model.modes_desc(k_max, 1) {
        let weight = match weighting {
            Weighting::Eigen => mode.energy,
            Weighting::Unweighted => mode.coeff_sq,
        };
        series.activate(mode.k, &coef, |j, v| acc[j].add(v));
        for j in 0..cuts.len() {
            while next[j] < order[j].len() && cuts[j][order[j][next[j]]] >= mode.k {
                let idx = order[j][next[j]];
                snap[j][idx] = acc[j];
                next[j] += 1;
            }
        }
        let active = series.active();
        table.fill_at(mode.lambda, mode.ln_lambda, active, &mut g);
        for &j in active {
            let learned = one_minus_exp_neg(g[j]);
            acc[j].add(weight * learned * learned);
        }
        if series.pending() {
            series.push(mode.ln_lambda, weight);
        }
    }
    series.activate(0, &coef, |j, v| acc[j].add(v));
    for j in 0..cuts.len() {
        while next[j] < order[j].len() {
            let idx = order[j][next[j]];
            snap[j][idx] = acc[j];
            next[j] += 1;
        }
    }

    let mut total = Vec::with_capacity(n);
    let mut suffix = Vec::with_capacity(cuts.len());
    for (j, &t) in times.iter().enumerate() {
        let rem = small_g_remainder(kernel, model, t, weighting, k_max as f64);
        let mut tot = acc[j];
        tot.add(rem.unwrap_or(0.0));
        total.push(tot.value());
        if j < cuts.len() {
            let mut row = Vec::with_capacity(cuts[j].len());
            for (idx, &cut) in cuts[j].iter().enumerate() {
                if beyond[j][idx] {
                    let from = cut.max(k_max) as f64;
                    row.push(small_g_remainder(kernel, model, t, weighting, from).unwrap_or(0.0));
                } else {
                    let mut s = snap[j][idx];
                    s.add(rem.unwrap_or(0.0));
                    row.push(s.value());
                }
            }
            suffix.push(row);
        }
    }
    CoefficientEnergy { total, suffix }
}

/// Closed-form quantization excess loss over a time grid:
/// `sigma^2 sum f_k^2 + tau^2 sum lambda_k + sigma^2 tau^2 sum lambda_k`.
pub fn quantization_excess_curve(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    times: &[f64],
    spec: &PerturbationSpec,
) -> Result<Vec<f64>> {
    spec.validate()?;
    if times.iter().any(|t| !(*t >= 0.0)) {
        return Err(SpecError::Domain("times must be nonnegative".into()));
    }
    let (s2, t2) = (spec.sigma_sq, spec.tau_sq);
    let eig = if t2 > 0.0 { model.eigen_sum() } else { 0.0 };
    let f2 = if s2 > 0.0 {
        coefficient_energy(kernel, model, times, Weighting::Unweighted, &[]).total
    } else {
        vec![0.0; times.len()]
    };
    Ok(f2.into_iter().map(|f| s2 * f + t2 * eig + s2 * t2 * eig).collect())
}

pub fn quantization_excess_closed(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    t: f64,
    spec: &PerturbationSpec,
) -> Result<f64> {
    Ok(quantization_excess_curve(kernel, model, &[t], spec)?[0])
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: usize,
}

/// Samples the coefficient noise `eta_k ~ N(0, tau^2)` and per-mode feature
/// noise `eps_k ~ N(0, sigma^2)`, and for each draw evaluates the excess loss
/// conditional on it:
/// `sum_k lambda_k [(r_k + eta_k)^2 - r_k^2] + (f_k + eta_k)^2 eps_k^2`
/// with `r_k = f_k - w_k`. Modes beyond `k_max` contribute their expectation.
///
/// Sample `i` draws from ChaCha8 stream `i` of `seed`, so results do not
/// depend on scheduling.
pub fn quantization_excess_mc(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    t: f64,
    spec: &PerturbationSpec,
) -> Result<McEstimate> {
    spec.validate()?;
    if spec.n_samples < 2 {
        return Err(SpecError::Argument(format!("Monte-Carlo needs at least 2 samples, got {}", spec.n_samples)));
    }
    if !(t >= 0.0) {
        return Err(SpecError::Domain(format!("t must be nonnegative, got {t}")));
    }
    let (sigma, tau) = (spec.sigma_sq.sqrt(), spec.tau_sq.sqrt());
    let ln_t = t.ln();
    let modes: Vec<(f64, f64, f64)> = model
        .modes_desc(model.k_max, 1)
        .map(|m| {
            let g = kernel.g_log(m.ln_lambda, ln_t);
            let w = m.coeff_sq.sqrt();
            let f = w * -(-g).exp_m1();
            (m.lambda, f, f - w)
        })
        .collect();

    let k_max = model.k_max as f64;
    let eig_rem = power_tail(model.c_lambda, model.b, k_max).expect("b > 1");
    let f2_rem = small_g_remainder(kernel, model, t, Weighting::Unweighted, k_max).unwrap_or(0.0);
    let remainder = spec.tau_sq * (1.0 + spec.sigma_sq) * eig_rem + spec.sigma_sq * f2_rem;

    let draws: Vec<f64> = (0..spec.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let mut acc = NeumaierSum::new();
            for &(lam, f, r) in &modes {
                let z1: f64 = StandardNormal.sample(&mut rng);
                let z2: f64 = StandardNormal.sample(&mut rng);
                let eta = tau * z1;
                let eps = sigma * z2;
                let fe = f + eta;
                acc.add(lam * eta * (2.0 * r + eta) + fe * fe * eps * eps);
            }
            acc.add(remainder);
            acc.value()
        })
        .collect();

    let n = draws.len() as f64;
    let mean = draws.iter().copied().collect::<NeumaierSum>().value() / n;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).collect::<NeumaierSum>().value() / (n - 1.0);
    Ok(McEstimate { mean, stderr: (var / n).sqrt(), n_samples: draws.len() })
}

/// `(1 - a + b) rho / b`; negative when `a > b + 1`.
pub fn gamma_theoretical(model: &SpectrumModel, rho: f64) -> f64 {
    (1.0 - model.a + model.b) * rho / model.b
}

/// Where pruning cuts the expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CutRule {
    ByIndex(u64),
    /// Keep `floor(q * k_max)` modes.
    ByRetainedFraction(f64),
    /// Keep `floor(theta * k*(t))` modes (clamped to `k_max`).
    ByTheta {
        theta: f64,
        kappa: f64,
    },
}

impl CutRule {
    pub fn resolve(&self, kernel: &DynamicsKernel, model: &SpectrumModel, t: f64) -> Result<u64> {
        match *self {
            CutRule::ByIndex(k) => {
                if k > model.k_max {
                    Err(SpecError::Index { k, k_max: model.k_max })
                } else {
                    Ok(k)
                }
            }
            CutRule::ByRetainedFraction(q) => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(SpecError::Argument(format!("retained fraction must lie in [0, 1], got {q}")));
                }
                Ok((q * model.k_max as f64).floor() as u64)
            }
            CutRule::ByTheta { theta, kappa } => {
                if !(theta > 0.0 && theta.is_finite()) {
                    return Err(SpecError::Argument(format!("theta must be positive, got {theta}")));
                }
                let ks = k_star(kernel, model, t, kappa)?;
                Ok((theta * ks).floor().min(model.k_max as f64) as u64)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneSpec {
    pub cut: CutRule,
    #[serde(default = "unweighted")]
    pub weighting: Weighting,
}

fn unweighted() -> Weighting {
    Weighting::Unweighted
}

/// `sum_{k > k_cut} weight_k f_k(t)^2`
pub fn prune_excess(kernel: &DynamicsKernel, model: &SpectrumModel, t: f64, spec: &PruneSpec) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(SpecError::Domain(format!("t must be nonnegative, got {t}")));
    }
    let cut = spec.cut.resolve(kernel, model, t)?;
    Ok(coefficient_energy(kernel, model, &[t], spec.weighting, &[vec![cut]]).suffix[0][0])
}

/// Saturated pruning excess `sum_k weight_k w_k^2` and whether the infinite
/// spectrum sum converges (`a > b + 1` for unweighted). Divergent sums are
/// reported over `k <= k_max` only.
pub fn total_target_energy(model: &SpectrumModel, weighting: Weighting) -> (f64, bool) {
    let mut acc = NeumaierSum::new();
    for m in model.modes_desc(model.k_max, 1) {
        acc.add(match weighting {
            Weighting::Eigen => m.energy,
            Weighting::Unweighted => m.coeff_sq,
        });
    }
    match model.target_tail_beyond(weighting, model.k_max as f64) {
        Some(r) => {
            acc.add(r);
            (acc.value(), true)
        }
        None => (acc.value(), false),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneRegime {
    Plateau,
    PowerLaw,
    Saturation,
}

impl PruneRegime {
    pub fn as_str(self) -> &'static str {
        match self {
            PruneRegime::Plateau => "plateau",
            PruneRegime::PowerLaw => "power-law",
            PruneRegime::Saturation => "saturation",
        }
    }
}

/// Regime boundaries in `theta = k_cut / k*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    /// `theta < saturation` is saturation.
    pub saturation: f64,
    /// `theta > 1 + plateau_margin` is plateau.
    pub plateau_margin: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self { saturation: 0.05, plateau_margin: 0.0 }
    }
}

impl RegimeThresholds {
    pub fn classify(&self, theta: f64) -> PruneRegime {
        if theta > 1.0 + self.plateau_margin {
            PruneRegime::Plateau
        } else if theta < self.saturation {
            PruneRegime::Saturation
        } else {
            PruneRegime::PowerLaw
        }
    }
}

/// Pruning control variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PruneControl {
    Theta(Vec<f64>),
    RetainedFraction(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrunePoint {
    /// theta or retained fraction, as given.
    pub control: f64,
    pub theta: f64,
    pub k_cut: u64,
    pub excess: f64,
    pub regime: PruneRegime,
    /// Sharp-frontier prediction normalized to the brute-force excess at theta = 0.5.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PruneCurve {
    pub t: f64,
    pub k_star: f64,
    pub weighting: Weighting,
    pub points: Vec<PrunePoint>,
    /// Brute-force excess at theta = 0.5 used to normalize predictions.
    pub reference_excess: f64,
}

/// Shape of the sharp-frontier excess `int_{theta}^{1} u^(b-a) du`, zero for `theta >= 1`.
pub fn theta_shape(model: &SpectrumModel, theta: f64) -> f64 {
    if theta >= 1.0 {
        return 0.0;
    }
    let c = 1.0 + model.b - model.a;
    if c.abs() < 1e-12 {
        -theta.ln()
    } else {
        (1.0 - theta.powf(c)) / c
    }
}

pub fn prune_curve(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    t: f64,
    control: &PruneControl,
    kappa: f64,
    weighting: Weighting,
    thresholds: RegimeThresholds,
) -> Result<PruneCurve> {
    if !(t > 0.0) {
        return Err(SpecError::Domain(format!("t must be positive, got {t}")));
    }
    let ks = k_star(kernel, model, t, kappa)?;
    let (controls, rules): (Vec<f64>, Vec<CutRule>) = match control {
        PruneControl::Theta(v) => (v.clone(), v.iter().map(|&theta| CutRule::ByTheta { theta, kappa }).collect()),
        PruneControl::RetainedFraction(v) => (v.clone(), v.iter().map(|&q| CutRule::ByRetainedFraction(q)).collect()),
    };
    if let PruneControl::RetainedFraction(v) = control {
        if v.iter().any(|&q| !(q > 0.0 && q <= 1.0)) {
            return Err(SpecError::Argument("retained fractions must lie in (0, 1]".into()));
        }
    }
    let mut cuts = rules.iter().map(|r| r.resolve(kernel, model, t)).collect::<Result<Vec<u64>>>()?;
    let ref_cut = CutRule::ByTheta { theta: 0.5, kappa }.resolve(kernel, model, t)?;
    cuts.push(ref_cut);
    let energy = coefficient_energy(kernel, model, &[t], weighting, std::slice::from_ref(&cuts));
    let excess = &energy.suffix[0];
    let reference = excess[cuts.len() - 1];
    let shape_ref = theta_shape(model, 0.5);

    let points = controls
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let theta = match control {
                PruneControl::Theta(_) => c,
                PruneControl::RetainedFraction(_) => cuts[i] as f64 / ks,
            };
            PrunePoint {
                control: c,
                theta,
                k_cut: cuts[i],
                excess: excess[i],
                regime: thresholds.classify(theta),
                predicted: reference * theta_shape(model, theta) / shape_ref,
            }
        })
        .collect();
    Ok(PruneCurve { t, k_star: ks, weighting, points, reference_excess: reference })
}

/// `1 - k*(t) / k_max`.
pub fn critical_prune_rate(kernel: &DynamicsKernel, model: &SpectrumModel, t: f64, kappa: f64) -> Result<f64> {
    let ks = k_star(kernel, model, t, kappa)?;
    if ks > model.k_max as f64 {
        return Err(SpecError::CapacityExhausted { k_star: ks, k_max: model.k_max });
    }
    Ok(1.0 - ks / model.k_max as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalPoint {
    pub t: f64,
    pub k_star: f64,
    pub r_star: f64,
    /// Unweighted pruning excess with `k_cut = floor(k*)`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalTrajectory {
    pub points: Vec<CriticalPoint>,
    /// Log-log fit of excess against `k*` over every point; `None` with fewer than 3.
    pub fit: Option<PowerLawFit>,
    /// `1 + b - a`
    pub predicted_slope: f64,
}

pub fn critical_point_trajectory(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    times: &[f64],
    kappa: f64,
) -> Result<CriticalTrajectory> {
    validate_time_grid(times)?;
    let mut ks = Vec::with_capacity(times.len());
    let mut rs = Vec::with_capacity(times.len());
    for &t in times {
        rs.push(critical_prune_rate(kernel, model, t, kappa)?);
        ks.push(k_star(kernel, model, t, kappa)?);
    }
    let cuts: Vec<Vec<u64>> = ks.iter().map(|k| vec![k.floor() as u64]).collect();
    let energy = coefficient_energy(kernel, model, times, Weighting::Unweighted, &cuts);
    let points: Vec<CriticalPoint> = (0..times.len())
        .map(|j| CriticalPoint { t: times[j], k_star: ks[j], r_star: rs[j], excess: energy.suffix[j][0] })
        .collect();
    let fit = if points.len() >= 3 {
        let ex: Vec<f64> = points.iter().map(|p| p.excess).collect();
        Some(fit_powerlaw(&ks, &ex, 0..points.len())?)
    } else {
        None
    };
    Ok(CriticalTrajectory { points, fit, predicted_slope: 1.0 + model.b - model.a })
}
