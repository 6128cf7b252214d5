//! Generalized spectral evolution `g(lambda, t)` and its log-elasticities.
//!
//! Every supported family is a finite sum of monomials `c * lambda^m * t^n`,
//! evaluated in log space as `exp(ln c + m ln lambda + n ln t)`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result, SpecError};
use crate::spectrum::SpectrumModel;

/// Log-space step for numeric elasticities.
pub const ELASTICITY_STEP: f64 = 1e-4;

fn one() -> f64 {
    1.0
}

/// `c * lambda^m * t^n`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    #[serde(default = "one")]
    pub c: f64,
    pub m: f64,
    pub n: f64,
}

impl Monomial {
    pub const fn new(c: f64, m: f64, n: f64) -> Self {
        Self { c, m, n }
    }

    #[inline]
    pub(crate) fn eval_log(&self, ln_lam: f64, ln_t: f64) -> f64 {
        if self.c == 0.0 {
            return 0.0;
        }
        let mag = (self.c.abs().ln() + self.m * ln_lam + self.n * ln_t).exp();
        mag.copysign(self.c)
    }

    pub fn eval(&self, lam: f64, t: f64) -> f64 {
        self.eval_log(lam.ln(), t.ln())
    }

    fn validate(&self) -> Result<()> {
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(param("kernel.c", format!("must be positive, got {}", self.c)));
        }
        if !(self.m.is_finite() && self.m > 0.0) {
            return Err(param("kernel.m", format!("must be positive, got {}", self.m)));
        }
        if !(self.n.is_finite() && self.n > 0.0) {
            return Err(param("kernel.n", format!("must be positive, got {}", self.n)));
        }
        Ok(())
    }
}

/// Parametric family for the evolution function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsKernel {
    Monomial {
        #[serde(default = "one")]
        c: f64,
        m: f64,
        n: f64,
    },
    /// `lambda * t^p(beta)`
    FeatureLearning {
        beta: f64,
    },
    MonomialSum {
        terms: Vec<Monomial>,
    },
}

/// `max(1, 2 / (1 + beta))`
pub fn p_exponent(beta: f64) -> f64 {
    (2.0 / (1.0 + beta)).max(1.0)
}

/// Log-elasticities of `g` and their ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ElasticityReport {
    /// `d ln g / d ln lambda`
    pub e_lambda: f64,
    /// `d ln g / d ln t`
    pub e_t: f64,
    /// `e_t / e_lambda`
    pub rho: f64,
    /// `None` for closed-form values.
    pub at: Option<(f64, f64)>,
}

impl DynamicsKernel {
    /// `g = lambda * t`
    pub const fn ntk() -> Self {
        DynamicsKernel::Monomial { c: 1.0, m: 1.0, n: 1.0 }
    }

    pub const fn monomial(c: f64, m: f64, n: f64) -> Self {
        DynamicsKernel::Monomial { c, m, n }
    }

    pub const fn feature_learning(beta: f64) -> Self {
        DynamicsKernel::FeatureLearning { beta }
    }

    pub fn monomial_sum(terms: Vec<Monomial>) -> Self {
        DynamicsKernel::MonomialSum { terms }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DynamicsKernel::Monomial { c, m, n } => Monomial::new(*c, *m, *n).validate(),
            DynamicsKernel::FeatureLearning { beta } => {
                if beta.is_finite() && *beta >= 0.0 {
                    Ok(())
                } else {
                    Err(param("kernel.beta", format!("must be >= 0, got {beta}")))
                }
            }
            DynamicsKernel::MonomialSum { terms } => {
                if terms.is_empty() {
                    return Err(param("kernel.terms", "must contain at least one term"));
                }
                terms.iter().try_for_each(Monomial::validate)
            }
        }
    }

    /// Short human-readable name, e.g. `lambda^2 t^3`.
    pub fn label(&self) -> String {
        fn mono(t: &Monomial) -> String {
            let mut s = String::new();
            if t.c != 1.0 {
                s.push_str(&format!("{}*", t.c));
            }
            s.push_str("lambda");
            if t.m != 1.0 {
                s.push_str(&format!("^{}", t.m));
            }
            s.push_str(" t");
            if t.n != 1.0 {
                s.push_str(&format!("^{}", t.n));
            }
            s
        }
        match self {
            DynamicsKernel::FeatureLearning { beta } => format!("feature-learning(beta={beta})"),
            DynamicsKernel::MonomialSum { terms } => terms.iter().map(mono).collect::<Vec<_>>().join(" + "),
            DynamicsKernel::Monomial { .. } => mono(&self.terms()[0]),
        }
    }

    pub fn terms(&self) -> Vec<Monomial> {
        match self {
            DynamicsKernel::Monomial { c, m, n } => vec![Monomial::new(*c, *m, *n)],
            DynamicsKernel::FeatureLearning { beta } => vec![Monomial::new(1.0, 1.0, p_exponent(*beta))],
            DynamicsKernel::MonomialSum { terms } => terms.clone(),
        }
    }

    /// Closed-form elasticity ratio for single-monomial families.
    pub fn analytic_rho(&self) -> Option<f64> {
        match self {
            DynamicsKernel::Monomial { m, n, .. } => Some(n / m),
            DynamicsKernel::FeatureLearning { beta } => Some(p_exponent(*beta)),
            DynamicsKernel::MonomialSum { .. } => None,
        }
    }

    pub(crate) fn g_log(&self, ln_lam: f64, ln_t: f64) -> f64 {
        match self {
            DynamicsKernel::Monomial { c, m, n } => Monomial::new(*c, *m, *n).eval_log(ln_lam, ln_t),
            DynamicsKernel::FeatureLearning { beta } => {
                Monomial::new(1.0, 1.0, p_exponent(*beta)).eval_log(ln_lam, ln_t)
            }
            DynamicsKernel::MonomialSum { terms } => terms.iter().map(|m| m.eval_log(ln_lam, ln_t)).sum(),
        }
    }

    /// `g(lambda, t)`.
    pub fn evaluate_g(&self, lam: f64, t: f64) -> Result<f64> {
        if !(lam > 0.0) {
            return Err(SpecError::Domain(format!("lambda must be positive, got {lam}")));
        }
        if !(t >= 0.0) {
            return Err(SpecError::Domain(format!("t must be nonnegative, got {t}")));
        }
        Ok(self.g_log(lam.ln(), t.ln()))
    }

    /// `dg/dt`; central difference (relative step 1e-5) for monomial sums.
    pub fn dg_dt(&self, lam: f64, t: f64) -> f64 {
        match self {
            DynamicsKernel::MonomialSum { .. } => {
                let h = 1e-5;
                let ln_lam = lam.ln();
                let up = self.g_log(ln_lam, (t * (1.0 + h)).ln());
                let dn = self.g_log(ln_lam, (t * (1.0 - h)).ln());
                (up - dn) / (2.0 * h * t)
            }
            _ => {
                let ln_lam = lam.ln();
                let ln_t = t.ln();
                self.terms().iter().map(|m| m.n * m.eval_log(ln_lam, ln_t) / t).sum()
            }
        }
    }

    /// Log-elasticities at `(lam, t)`. Exact for single monomials, central
    /// log-space differences for sums.
    pub fn elasticities(&self, lam: f64, t: f64) -> Result<ElasticityReport> {
        if !(t > 0.0) {
            return Err(SpecError::Domain(format!("elasticities need t > 0 (g vanishes at t = 0), got {t}")));
        }
        let g = self.evaluate_g(lam, t)?;
        if !(g > 0.0) {
            return Err(SpecError::Domain(format!("g({lam}, {t}) = {g} is not positive")));
        }
        match self {
            DynamicsKernel::Monomial { m, n, .. } => {
                Ok(ElasticityReport { e_lambda: *m, e_t: *n, rho: n / m, at: None })
            }
            DynamicsKernel::FeatureLearning { beta } => {
                let p = p_exponent(*beta);
                Ok(ElasticityReport { e_lambda: 1.0, e_t: p, rho: p, at: None })
            }
            DynamicsKernel::MonomialSum { .. } => {
                let (x, y) = (lam.ln(), t.ln());
                let h = ELASTICITY_STEP;
                let lng = |x: f64, y: f64| self.g_log(x, y).ln();
                let e_lambda = (lng(x + h, y) - lng(x - h, y)) / (2.0 * h);
                let e_t = (lng(x, y + h) - lng(x, y - h)) / (2.0 * h);
                Ok(ElasticityReport { e_lambda, e_t, rho: e_t / e_lambda, at: Some((lam, t)) })
            }
        }
    }
}

/// Learned coefficient `w_k (1 - exp(-g(lambda_k, t)))`.
pub fn mode_value(kernel: &DynamicsKernel, model: &SpectrumModel, k: u64, t: f64) -> Result<f64> {
    let lam = model.eigenvalue(k)?;
    let w = model.coeff_sq(k)?.sqrt();
    let g = kernel.evaluate_g(lam, t)?;
    Ok(w * -(-g).exp_m1())
}

/// Cutoff `lambda_0(t)` below which the monomial comparison is made.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaCutoff {
    /// `lambda_0(t) = t^-exponent`
    Power(f64),
}

impl LambdaCutoff {
    /// `t^-(n/m + 0.1)` for the reference exponents.
    pub fn default_for(reference: &Monomial) -> Self {
        LambdaCutoff::Power(reference.n / reference.m + 0.1)
    }

    pub fn at(&self, t: f64) -> f64 {
        match *self {
            LambdaCutoff::Power(e) => t.powf(-e),
        }
    }
}

/// Points on the log-lambda grid used per time in [`check_poly_condition`].
pub const POLY_GRID_POINTS: usize = 201;

/// Sup-deviation `sup |g / (C lambda^m t^n) - 1|` over `lambda in [lambda_0 * 1e-3, lambda_0]`
/// for each time.
pub fn check_poly_condition(
    kernel: &DynamicsKernel,
    reference: &Monomial,
    t_grid: &[f64],
    cutoff: LambdaCutoff,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t > 0.0) {
            return Err(SpecError::Domain(format!("t grid must be positive, got {t}")));
        }
        let hi = cutoff.at(t).ln();
        let lo = hi - 1e3f64.ln();
        let ln_t = t.ln();
        let mut sup = 0.0f64;
        for i in 0..POLY_GRID_POINTS {
            let x = lo + (hi - lo) * i as f64 / (POLY_GRID_POINTS - 1) as f64;
            let ratio = kernel.g_log(x, ln_t) / reference.eval_log(x, ln_t);
            sup = sup.max((ratio - 1.0).abs());
        }
        out.push(sup);
    }
    Ok(out)
}

/// Whether a deviation sequence from [`check_poly_condition`] decreases toward zero.
pub fn poly_condition_holds(deviations: &[f64]) -> bool {
    if deviations.iter().any(|d| !d.is_finite()) {
        return false;
    }
    if deviations.iter().all(|&d| d <= 1e-12) {
        return true;
    }
    let nonincreasing = deviations.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    nonincreasing && deviations.last() < deviations.first()
}
