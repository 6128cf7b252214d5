//! Residual-energy test loss, its theoretical exponent, and the tail
//! sandwich diagnostic.

use serde::Serialize;

use crate::dynamics::DynamicsKernel;
use crate::error::{Result, SpecError};
use crate::frontier::k_star;
use crate::grid::validate_time_grid;
use crate::spectrum::{SpectrumModel, Weighting};
use crate::sum::NeumaierSum;
use crate::sweep::{decay_coefficients, exp_neg, SmallGSeries, TimeTable};

/// Loss split at the frontier: `head` sums `k <= k*`, `tail` sums `k > k*`
/// (including the analytic remainder beyond `k_max`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossSplit {
    pub k_star: f64,
    pub head: f64,
    pub tail: f64,
}

impl LossSplit {
    pub fn tail_fraction(&self) -> f64 {
        self.tail / (self.head + self.tail)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub weighting: Weighting,
    pub components: Option<Vec<LossSplit>>,
    /// The infinite-spectrum remainder diverges for this weighting; values
    /// are finite-spectrum sums.
    pub tail_truncated: bool,
}

struct Sums {
    total: Vec<f64>,
    head: Vec<f64>,
    tail: Vec<f64>,
    truncated: bool,
}

/// One descending pass over all modes for every time at once.
fn residual_sums(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    times: &[f64],
    weighting: Weighting,
    split: Option<&[f64]>,
) -> Sums {
    let n = times.len();
    let mut table = TimeTable::new(kernel, times);
    let mut g = vec![0.0; n];
    let mut total = vec![NeumaierSum::new(); n];
    let mut head = vec![NeumaierSum::new(); n];
    let mut tail = vec![NeumaierSum::new(); n];

    // Modes at or below k* stay on the direct path so the split is exact.
    let floors: Vec<u64> = split
        .map(|ks| {
            ks.iter().map(|&k| if k < model.k_max as f64 { k.max(0.0).ceil() as u64 } else { model.k_max }).collect()
        })
        .unwrap_or_default();
    let mut series = SmallGSeries::new(kernel, model, times, &floors);
    let coef = decay_coefficients();

    for mode in model.modes_desc(model.k_max, 1) {
        let weight = match weighting {
            Weighting::Eigen => mode.energy,
            Weighting::Unweighted => mode.coeff_sq,
        };
        series.activate(mode.k, &coef, |j, v| match split {
            Some(_) => tail[j].add(v),
            None => total[j].add(v),
        });
        let active = series.active();
        table.fill_at(mode.lambda, mode.ln_lambda, active, &mut g);
        let kf = mode.k as f64;
        for &j in active {
            let term = weight * exp_neg(2.0 * g[j]);
            match split {
                Some(ks) if kf > ks[j] => tail[j].add(term),
                Some(_) => head[j].add(term),
                None => total[j].add(term),
            }
        }
        if series.pending() {
            series.push(mode.ln_lambda, weight);
        }
    }
    series.activate(0, &coef, |j, v| match split {
        Some(_) => tail[j].add(v),
        None => total[j].add(v),
    });

    if split.is_some() {
        for j in 0..n {
            total[j].add(tail[j].value());
            total[j].add(head[j].value());
        }
    }
    let remainder = model.target_tail_beyond(weighting, model.k_max as f64);
    if let Some(r) = remainder {
        for j in 0..n {
            total[j].add(r);
            tail[j].add(r);
        }
    }
    Sums {
        total: total.iter().map(NeumaierSum::value).collect(),
        head: head.iter().map(NeumaierSum::value).collect(),
        tail: tail.iter().map(NeumaierSum::value).collect(),
        truncated: remainder.is_none(),
    }
}

/// `sum_k weight_k w_k^2 exp(-2 g(lambda_k, t))` plus the remainder beyond
/// `k_max` (taken with `g = 0`).
pub fn loss(kernel: &DynamicsKernel, model: &SpectrumModel, t: f64, weighting: Weighting) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(SpecError::Domain(format!("t must be nonnegative, got {t}")));
    }
    Ok(residual_sums(kernel, model, &[t], weighting, None).total[0])
}

/// Loss over a time grid. With `split_kappa`, also records the head/tail
/// split at the level-set frontier `k*(t)`.
pub fn loss_curve(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    times: &[f64],
    weighting: Weighting,
    split_kappa: Option<f64>,
) -> Result<LossCurve> {
    validate_time_grid(times)?;
    let ks = match split_kappa {
        Some(kappa) => Some(times.iter().map(|&t| k_star(kernel, model, t, kappa)).collect::<Result<Vec<f64>>>()?),
        None => None,
    };
    let sums = residual_sums(kernel, model, times, weighting, ks.as_deref());
    let components = ks.map(|ks| {
        ks.iter().enumerate().map(|(j, &k)| LossSplit { k_star: k, head: sums.head[j], tail: sums.tail[j] }).collect()
    });
    Ok(LossCurve { times: times.to_vec(), values: sums.total, weighting, components, tail_truncated: sums.truncated })
}

/// `(a - 1) rho / b`
pub fn chi_theoretical(model: &SpectrumModel, rho: f64) -> f64 {
    (model.a - 1.0) * rho / model.b
}

/// Ratios of the loss to the spectral tail energy beyond `c * k*(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SandwichPoint {
    pub t: f64,
    pub k_star: f64,
    pub loss: f64,
    /// `L / tail_energy(ceil(c2' k*))`
    pub lower_ratio: f64,
    /// `L / tail_energy(ceil(c1' k*))`
    pub upper_ratio: f64,
    /// `c2' k*` lies beyond `k_max`.
    pub truncated: bool,
}

pub fn sandwich_diagnostic(
    kernel: &DynamicsKernel,
    model: &SpectrumModel,
    times: &[f64],
    c1p: f64,
    c2p: f64,
    kappa: f64,
) -> Result<Vec<SandwichPoint>> {
    check_sandwich_constants(c1p, c2p)?;
    let curve = loss_curve(kernel, model, times, Weighting::Eigen, Some(kappa))?;
    sandwich_from_curve(model, &curve, c1p, c2p)
}

fn check_sandwich_constants(c1p: f64, c2p: f64) -> Result<()> {
    if c1p > 0.0 && c1p < 1.0 && c2p > 1.0 && c2p.is_finite() {
        Ok(())
    } else {
        Err(SpecError::Argument(format!("sandwich constants need 0 < c1' < 1 < c2', got c1'={c1p}, c2'={c2p}")))
    }
}

/// Sandwich ratios from an eigen-weighted curve that already carries its
/// frontier split.
pub fn sandwich_from_curve(model: &SpectrumModel, curve: &LossCurve, c1p: f64, c2p: f64) -> Result<Vec<SandwichPoint>> {
    check_sandwich_constants(c1p, c2p)?;
    if curve.weighting != Weighting::Eigen {
        return Err(SpecError::Argument("sandwich ratios need the eigen-weighted loss".into()));
    }
    let ks: Vec<f64> = curve
        .components
        .as_ref()
        .ok_or_else(|| SpecError::Argument("loss curve has no frontier split".into()))?
        .iter()
        .map(|c| c.k_star)
        .collect();
    let start = |c: f64, k: f64| ((c * k).ceil().max(1.0)).min(u64::MAX as f64 / 2.0) as u64;
    let mut starts = Vec::with_capacity(2 * ks.len());
    for &k in &ks {
        starts.push(start(c2p, k));
        starts.push(start(c1p, k));
    }
    let tails = model.tail_energies(&starts);
    Ok(curve
        .times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let l = curve.values[j];
            SandwichPoint {
                t,
                k_star: ks[j],
                loss: l,
                lower_ratio: l / tails[2 * j],
                upper_ratio: l / tails[2 * j + 1],
                truncated: c2p * ks[j] > model.k_max as f64,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontier::time_at_index;
    use crate::grid::log_grid;
    use crate::spectrum::TailMode;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn curve_matches_direct_mode_sum(
            a in 1.2f64..4.0, b in 1.05f64..3.0, c in 0.1f64..10.0,
            m in 0.5f64..3.0, n in 0.3f64..3.0, ln_t in -5.0f64..30.0, split in any::<bool>(),
        ) {
            let model = SpectrumModel::unit(a, b, 3000).unwrap();
            let kernel = DynamicsKernel::monomial(c, m, n);
            let times: Vec<f64> = (0..4).map(|i| (ln_t + 3.0 * i as f64).exp()).collect();
            let curve = loss_curve(&kernel, &model, &times, Weighting::Eigen, split.then_some(1.0)).unwrap();
            let rem = model.target_tail_beyond(Weighting::Eigen, 3000.0).unwrap();
            for (j, &t) in times.iter().enumerate() {
                let direct: f64 = (1..=3000u64)
                    .rev()
                    .map(|k| {
                        let g = kernel.evaluate_g(model.eigenvalue(k).unwrap(), t).unwrap();
                        model.mode_energy(k).unwrap() * (-2.0 * g).exp()
                    })
                    .sum();
                prop_assert!((curve.values[j] / (direct + rem) - 1.0).abs() < 1e-12, "{} vs {}", curve.values[j], direct + rem);
            }
        }
    }

    #[test]
    fn loss_at_zero_is_total_energy() {
        let m = SpectrumModel::unit(2.0, 2.0, 1_000_000).unwrap();
        let l0 = loss(&DynamicsKernel::ntk(), &m, 0.0, Weighting::Eigen).unwrap();
        assert!((l0 - std::f64::consts::PI.powi(2) / 6.0).abs() < 1e-4);
        assert_eq!(l0, m.tail_energy(1, TailMode::ExactSum).unwrap());
    }

    #[test]
    fn unweighted_total_energy() {
        let m = SpectrumModel::unit(3.5, 2.0, 200_000).unwrap();
        let l0 = loss(&DynamicsKernel::ntk(), &m, 0.0, Weighting::Unweighted).unwrap();
        // sum k^-1.5 = zeta(1.5)
        assert!((l0 - 2.612_375_348_685_488).abs() < 1e-5, "{l0}");
    }

    #[test]
    fn saturated_loss_vanishes() {
        // frontier far beyond k_max = 100: g(lambda_100, t) = 1e-4 t
        let m = SpectrumModel::unit(3.0, 2.0, 100).unwrap();
        let l0 = loss(&DynamicsKernel::ntk(), &m, 0.0, Weighting::Eigen).unwrap();
        let head_only: f64 =
            (1..=100u64).map(|k| m.mode_energy(k).unwrap() * (-2.0 * 1e6 * m.eigenvalue(k).unwrap()).exp()).sum();
        assert!(head_only < 1e-20 * l0);
    }

    #[test]
    fn ntk_loss_ratio_over_one_decade() {
        let m = SpectrumModel::unit(2.5, 2.0, 10_000_000).unwrap();
        let k = DynamicsKernel::ntk();
        let r = loss(&k, &m, 1e4, Weighting::Eigen).unwrap() / loss(&k, &m, 1e5, Weighting::Eigen).unwrap();
        let expect = 10f64.powf(0.75);
        assert!((r / expect - 1.0).abs() < 0.10, "ratio {r}");
    }

    #[test]
    fn curve_matches_pointwise_and_is_monotone() {
        let m = SpectrumModel::unit(2.5, 2.0, 20_000).unwrap();
        let k = DynamicsKernel::feature_learning(0.3);
        let times = log_grid(0.1, 1e5, 25).unwrap();
        for w in [Weighting::Eigen, Weighting::Unweighted] {
            let c = loss_curve(&k, &m, &times, w, Some(1.0)).unwrap();
            assert_eq!(c.tail_truncated, w == Weighting::Unweighted);
            for (i, &t) in times.iter().enumerate() {
                assert_relative_eq!(c.values[i], loss(&k, &m, t, w).unwrap(), max_relative = 1e-14);
                let s = c.components.as_ref().unwrap()[i];
                assert_relative_eq!(s.head + s.tail, c.values[i], max_relative = 1e-12);
            }
            assert!(c.values.windows(2).all(|v| v[1] <= v[0]));
        }
    }

    #[test]
    fn single_point_curve() {
        let m = SpectrumModel::unit(2.5, 2.0, 1000).unwrap();
        let c = loss_curve(&DynamicsKernel::ntk(), &m, &[3.0], Weighting::Eigen, None).unwrap();
        assert_eq!(c.values.len(), 1);
        assert!(loss_curve(&DynamicsKernel::ntk(), &m, &[], Weighting::Eigen, None).is_err());
    }

    #[test]
    fn chi_examples() {
        let m = |a, b| SpectrumModel::unit(a, b, 10).unwrap();
        assert_relative_eq!(chi_theoretical(&m(2.5, 2.0), 1.0), 0.75);
        assert_relative_eq!(chi_theoretical(&m(3.0, 2.0), 2.0), 2.0);
        assert_relative_eq!(chi_theoretical(&m(2.0, 2.0), 1.0), 0.5);
    }

    #[test]
    fn sandwich_ratios_are_bounded() {
        let m = SpectrumModel::unit(2.5, 2.0, 10_000_000).unwrap();
        let k = DynamicsKernel::ntk();
        let times = log_grid(1e2, 1e5, 13).unwrap();
        let pts = sandwich_diagnostic(&k, &m, &times, 0.5, 2.0, 1.0).unwrap();
        for p in &pts {
            // Continuum limits: lower -> 1.55, upper -> 0.19.
            assert!((0.1..=5.0).contains(&p.lower_ratio), "{p:?}");
            assert!((0.1..=5.0).contains(&p.upper_ratio), "{p:?}");
            assert!(p.lower_ratio >= 0.1);
            assert!(!p.truncated);
        }
    }

    #[test]
    fn sandwich_before_first_mode() {
        let m = SpectrumModel::unit(2.5, 2.0, 100_000).unwrap();
        let k = DynamicsKernel::ntk();
        let t = time_at_index(&k, &m, 0.05, 1.0).unwrap();
        let p = sandwich_diagnostic(&k, &m, &[t], 0.5, 2.0, 1.0).unwrap()[0];
        assert!((p.upper_ratio - 1.0).abs() < 0.01, "{p:?}");
        assert!((p.lower_ratio - 1.0).abs() < 0.01, "{p:?}");
        assert!(sandwich_diagnostic(&k, &m, &[t], 1.5, 2.0, 1.0).is_err());
    }
}
