//! Discrete power-law spectrum with exact partial sums and closed-form tails.
//!
//! Modes are indexed `k = 1..=k_max` with eigenvalue `c_lambda * k^-b` and
//! target coefficient `w_k^2 = (c_w / c_lambda) * k^(b - a)`, so the mode
//! energy `lambda_k * w_k^2` is `c_w * k^-a`. Sums over modes always run from
//! the largest index down (smallest terms first) with compensated
//! accumulation, and the truncated part beyond `k_max` is replaced by the
//! integral `int_{k_max}^inf`.

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{param, Result, SpecError};
use crate::sum::NeumaierSum;

/// How a mode sum is weighted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Weighting {
    /// Weight `lambda_k` per mode (residual energy in function space).
    #[default]
    #[serde(rename = "eigen-weighted", alias = "eigen")]
    Eigen,
    /// Unit weight per mode (plain coefficient MSE).
    #[serde(rename = "unweighted")]
    Unweighted,
}

impl Weighting {
    pub fn as_str(self) -> &'static str {
        match self {
            Weighting::Eigen => "eigen-weighted",
            Weighting::Unweighted => "unweighted",
        }
    }
}

impl std::str::FromStr for Weighting {
    type Err = SpecError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eigen" | "eigen-weighted" => Ok(Weighting::Eigen),
            "unweighted" => Ok(Weighting::Unweighted),
            other => {
                Err(SpecError::Argument(format!("unknown weighting `{other}` (expected eigen-weighted | unweighted)")))
            }
        }
    }
}

/// Evaluation mode for [`SpectrumModel::tail_energy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailMode {
    /// Direct summation to `k_max` plus the analytic remainder.
    ExactSum,
    /// `c_w * k0^(1-a) / (a-1)`.
    IntegralApprox,
}

fn one() -> f64 {
    1.0
}

fn integral_u64<'de, D: Deserializer<'de>>(de: D) -> std::result::Result<u64, D::Error> {
    let v = f64::deserialize(de)?;
    if v.is_finite() && v >= 0.0 && v.fract() == 0.0 && v <= 9.0e15 {
        Ok(v as u64)
    } else {
        Err(serde::de::Error::custom(format!("expected a nonnegative integer, got {v}")))
    }
}

/// Power-law spectral tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumModel {
    /// Decay exponent of the mode energy `lambda_k w_k^2`.
    pub a: f64,
    /// Decay exponent of the eigenvalues.
    pub b: f64,
    #[serde(default = "one")]
    pub c_lambda: f64,
    #[serde(default = "one")]
    pub c_w: f64,
    #[serde(deserialize_with = "integral_u64")]
    pub k_max: u64,
}

/// One mode's precomputed quantities, as produced by [`SpectrumModel::modes_desc`].
#[derive(Debug, Clone, Copy)]
pub struct Mode {
    pub k: u64,
    pub lambda: f64,
    pub ln_lambda: f64,
    /// `lambda_k * w_k^2`
    pub energy: f64,
    /// `w_k^2`
    pub coeff_sq: f64,
}

/// `sum_{k > from} coef * k^-s`, approximated by `int_from^inf`. `None` when divergent.
pub fn power_tail(coef: f64, s: f64, from: f64) -> Option<f64> {
    if s > 1.0 {
        Some(coef * from.powf(1.0 - s) / (s - 1.0))
    } else {
        None
    }
}

impl SpectrumModel {
    pub fn new(a: f64, b: f64, c_lambda: f64, c_w: f64, k_max: u64) -> Result<Self> {
        let m = Self { a, b, c_lambda, c_w, k_max };
        m.validate()?;
        Ok(m)
    }

    /// Unit normalizations.
    pub fn unit(a: f64, b: f64, k_max: u64) -> Result<Self> {
        Self::new(a, b, 1.0, 1.0, k_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a.is_finite() && self.a > 1.0) {
            return Err(param("a", format!("must satisfy a > 1, got {}", self.a)));
        }
        if !(self.b.is_finite() && self.b > 1.0) {
            return Err(param("b", format!("must satisfy b > 1, got {}", self.b)));
        }
        if !(self.c_lambda.is_finite() && self.c_lambda > 0.0) {
            return Err(param("c_lambda", format!("must be positive, got {}", self.c_lambda)));
        }
        if !(self.c_w.is_finite() && self.c_w > 0.0) {
            return Err(param("c_w", format!("must be positive, got {}", self.c_w)));
        }
        if self.k_max == 0 {
            return Err(param("k_max", "must be at least 1"));
        }
        Ok(())
    }

    fn check_index(&self, k: u64) -> Result<()> {
        if k == 0 || k > self.k_max {
            Err(SpecError::Index { k, k_max: self.k_max })
        } else {
            Ok(())
        }
    }

    pub fn eigenvalue(&self, k: u64) -> Result<f64> {
        self.check_index(k)?;
        Ok(self.c_lambda * (k as f64).powf(-self.b))
    }

    pub fn coeff_sq(&self, k: u64) -> Result<f64> {
        self.check_index(k)?;
        Ok((self.c_w / self.c_lambda) * (k as f64).powf(self.b - self.a))
    }

    /// `c_w * k^-a`
    pub fn mode_energy(&self, k: u64) -> Result<f64> {
        self.check_index(k)?;
        Ok(self.c_w * (k as f64).powf(-self.a))
    }

    /// Continuous inversion of [`eigenvalue`](Self::eigenvalue).
    pub fn index_of_eigenvalue(&self, lam: f64) -> Result<f64> {
        if !(lam > 0.0) || !lam.is_finite() {
            return Err(SpecError::Domain(format!("eigenvalue must be positive and finite, got {lam}")));
        }
        Ok((self.c_lambda / lam).powf(1.0 / self.b))
    }

    /// Continuous interpolation of `w^2` as a function of eigenvalue.
    pub fn coeff_sq_at(&self, lam: f64) -> f64 {
        (self.c_w / self.c_lambda) * (self.c_lambda / lam).powf((self.b - self.a) / self.b)
    }

    pub fn lambda_min(&self) -> f64 {
        self.c_lambda * (self.k_max as f64).powf(-self.b)
    }

    pub fn lambda_max(&self) -> f64 {
        self.c_lambda
    }

    /// Energy of modes `k >= k0`, including everything beyond `k_max`.
    pub fn tail_energy(&self, k0: u64, mode: TailMode) -> Result<f64> {
        if k0 == 0 {
            return Err(SpecError::Index { k: k0, k_max: self.k_max });
        }
        Ok(match mode {
            TailMode::IntegralApprox => self.c_w * (k0 as f64).powf(1.0 - self.a) / (self.a - 1.0),
            TailMode::ExactSum => self.tail_energies(&[k0])[0],
        })
    }

    /// Exact-sum tail energies at several start indices in one descending pass.
    /// Each entry equals `tail_energy(k0, ExactSum)` for the corresponding `k0 >= 1`.
    pub fn tail_energies(&self, starts: &[u64]) -> Vec<f64> {
        let k_max = self.k_max;
        let mut order: Vec<usize> = (0..starts.len()).collect();
        order.sort_by(|&i, &j| starts[j].cmp(&starts[i]));
        let mut out = vec![0.0; starts.len()];
        let analytic = self.energy_tail_beyond(k_max as f64);

        let mut acc = NeumaierSum::new();
        let mut k = k_max;
        for idx in order {
            let k0 = starts[idx].max(1);
            if k0 > k_max {
                out[idx] = self.energy_tail_beyond((k0 - 1) as f64);
                continue;
            }
            while k >= k0 {
                acc.add(self.c_w * (k as f64).powf(-self.a));
                k -= 1;
            }
            let mut total = acc;
            total.add(analytic);
            out[idx] = total.value();
        }
        out
    }

    /// `int_from^inf c_w k^-a dk`
    pub(crate) fn energy_tail_beyond(&self, from: f64) -> f64 {
        power_tail(self.c_w, self.a, from).expect("a > 1")
    }

    /// `sum_k lambda_k` with analytic tail.
    pub fn eigen_sum(&self) -> f64 {
        let mut acc = NeumaierSum::new();
        for mode in self.modes_desc(self.k_max, 1) {
            acc.add(mode.lambda);
        }
        acc.add(power_tail(self.c_lambda, self.b, self.k_max as f64).expect("b > 1"));
        acc.value()
    }

    /// Whether `sum_k weight_k w_k^2` over the infinite spectrum converges.
    pub fn total_energy_converges(&self, weighting: Weighting) -> bool {
        match weighting {
            Weighting::Eigen => true,
            Weighting::Unweighted => self.a - self.b > 1.0,
        }
    }

    /// `sum_{k > k_max} weight_k w_k^2`, or `None` when divergent.
    pub fn target_tail_beyond(&self, weighting: Weighting, from: f64) -> Option<f64> {
        match weighting {
            Weighting::Eigen => power_tail(self.c_w, self.a, from),
            Weighting::Unweighted => power_tail(self.c_w / self.c_lambda, self.a - self.b, from),
        }
    }

    /// Modes `k_hi, k_hi - 1, ..., k_lo`, clamped to `[1, k_max]`.
    pub fn modes_desc(&self, k_hi: u64, k_lo: u64) -> impl Iterator<Item = Mode> + '_ {
        let hi = k_hi.min(self.k_max);
        let lo = k_lo.max(1);
        let ln_cl = self.c_lambda.ln();
        let ln_cw = self.c_w.ln();
        let (a, b) = (self.a, self.b);
        let ln_ratio = ln_cw - ln_cl;
        (lo..=hi).rev().map(move |k| {
            let ln_k = (k as f64).ln();
            let ln_lambda = ln_cl - b * ln_k;
            Mode {
                k,
                lambda: ln_lambda.exp(),
                ln_lambda,
                energy: (ln_cw - a * ln_k).exp(),
                coeff_sq: (ln_ratio + (b - a) * ln_k).exp(),
            }
        })
    }
}
