//! Single-pass evaluation of `g(lambda_k, t_j)` over all modes and many times.
//!
//! `g = sum_i c_i lambda^m_i t^n_i` factorizes per term into a mode part
//! `lambda^m_i` and a time part `c_i t^n_i`; the time part is tabulated once so
//! each (mode, time) pair costs one multiply-add per term.
//!
//! For a single-term kernel the far tail, where `g` is small, is summed through
//! running power moments instead of pair by pair (see [`SmallGSeries`]).

use crate::dynamics::{DynamicsKernel, Monomial};
use crate::spectrum::SpectrumModel;
use crate::sum::NeumaierSum;

/// Above this log-magnitude the factorized product may overflow.
const LN_SAFE: f64 = 600.0;

/// Below this argument the Taylor series through `x^8` is used; the dropped
/// terms are under `x^9 / 9! < 3e-24`.
const SERIES_MAX: f64 = 1e-2;

/// `1 - e^{-x}`, accurate for small `x`.
#[inline]
pub(crate) fn one_minus_exp_neg(x: f64) -> f64 {
    if (0.0..SERIES_MAX).contains(&x) {
        let mut p = 1.0 - x * (1.0 / 8.0);
        p = 1.0 - x * (1.0 / 7.0) * p;
        p = 1.0 - x * (1.0 / 6.0) * p;
        p = 1.0 - x * (1.0 / 5.0) * p;
        p = 1.0 - x * (1.0 / 4.0) * p;
        p = 1.0 - x * (1.0 / 3.0) * p;
        p = 1.0 - x * 0.5 * p;
        x * p
    } else {
        -(-x).exp_m1()
    }
}

/// `e^{-x}`
#[inline]
pub(crate) fn exp_neg(x: f64) -> f64 {
    if (0.0..SERIES_MAX).contains(&x) {
        1.0 - one_minus_exp_neg(x)
    } else {
        (-x).exp()
    }
}

pub(crate) struct TimeTable {
    terms: Vec<Monomial>,
    /// `[term][time]` signed `c_i t_j^n_i`
    time_part: Vec<Vec<f64>>,
    /// `[term][time]` `ln |c_i| + n_i ln t_j`
    ln_time_part: Vec<Vec<f64>>,
    mode_part: Vec<f64>,
}

impl TimeTable {
    pub(crate) fn new(kernel: &DynamicsKernel, times: &[f64]) -> Self {
        let terms = kernel.terms();
        let mut time_part = Vec::with_capacity(terms.len());
        let mut ln_time_part = Vec::with_capacity(terms.len());
        for term in &terms {
            let ln: Vec<f64> = times.iter().map(|&t| term.c.abs().ln() + term.n * t.ln()).collect();
            time_part.push(ln.iter().map(|&l| l.exp().copysign(term.c)).collect());
            ln_time_part.push(ln);
        }
        let mode_part = vec![0.0; terms.len()];
        Self { terms, time_part, ln_time_part, mode_part }
    }

    /// Writes `g(lambda, t_j)` into `out[j]` for each listed `j`.
    #[inline]
    pub(crate) fn fill_at(&mut self, lambda: f64, ln_lambda: f64, idx: &[usize], out: &mut [f64]) {
        for (slot, term) in self.mode_part.iter_mut().zip(&self.terms) {
            *slot = if term.m == 1.0 {
                lambda
            } else if term.m == 2.0 {
                lambda * lambda
            } else {
                (term.m * ln_lambda).exp()
            };
        }
        for &j in idx {
            out[j] = 0.0;
        }
        for (i, term) in self.terms.iter().enumerate() {
            let a = self.mode_part[i];
            if term.c == 0.0 {
                continue;
            }
            for &j in idx {
                let ln_b = self.ln_time_part[i][j];
                if ln_b > LN_SAFE {
                    out[j] += (term.m * ln_lambda + ln_b).exp().copysign(term.c);
                } else {
                    out[j] += a * self.time_part[i][j];
                }
            }
        }
    }
}

/// Number of power-series terms; with `g <= G_SERIES_MAX` the first dropped
/// term is below `1e-20` of the kept sum.
pub(crate) const SERIES_LEN: usize = 13;
const G_SERIES_MAX: f64 = 0.05;

/// Taylor coefficients of `e^{-2x}`.
pub(crate) fn decay_coefficients() -> [f64; SERIES_LEN] {
    let mut c = [0.0; SERIES_LEN];
    let mut v = 1.0;
    for (p, slot) in c.iter_mut().enumerate() {
        *slot = v;
        v *= -2.0 / (p + 1) as f64;
    }
    c
}

/// Taylor coefficients of `(1 - e^{-x})^2 = 1 - 2 e^{-x} + e^{-2x}`.
pub(crate) fn learned_sq_coefficients() -> [f64; SERIES_LEN] {
    let mut c = [0.0; SERIES_LEN];
    let (mut once, mut twice) = (1.0, 1.0);
    for (p, slot) in c.iter_mut().enumerate() {
        if p > 0 {
            *slot = twice - 2.0 * once;
        }
        once *= -1.0 / (p + 1) as f64;
        twice *= -2.0 / (p + 1) as f64;
    }
    c
}

/// Far-tail sums for a single-term kernel `g = c lambda^m t^n`.
///
/// Writing `g(lambda_k, t_j) = u_k r_j`, any `sum_k w_k F(g)` with a power
/// series `F` over modes where `g` is small equals `sum_p F_p r_j^p M_p`, where
/// `M_p = sum_k w_k u_k^p` is accumulated once per mode. Modes are pushed in
/// descending order; time `j` leaves the series once the sweep reaches
/// `boundary[j]` and is summed directly from there on.
pub(crate) struct SmallGSeries {
    boundary: Vec<u64>,
    ratio: Vec<f64>,
    ln_scale: f64,
    m: f64,
    moments: [NeumaierSum; SERIES_LEN],
    order: Vec<usize>,
    next: usize,
}

impl SmallGSeries {
    /// Modes `k <= floors[j]` are always summed directly for time `j`.
    /// Kernels with several terms get no series at all.
    pub(crate) fn new(kernel: &DynamicsKernel, model: &SpectrumModel, times: &[f64], floors: &[u64]) -> Self {
        let n = times.len();
        let k_max = model.k_max;
        let mut boundary = vec![k_max; n];
        let mut ratio = vec![1.0; n];
        let (mut ln_scale, mut m) = (0.0, 1.0);
        if let [term] = kernel.terms()[..] {
            if term.c > 0.0 && term.m > 0.0 && term.n > 0.0 {
                let ln_tn: Vec<f64> = times.iter().map(|&t| term.n * t.ln()).collect();
                let ln_ref = ln_tn.iter().copied().filter(|x| x.is_finite()).fold(f64::INFINITY, f64::min);
                let ln_ref = if ln_ref.is_finite() { ln_ref } else { 0.0 };
                ln_scale = term.c.ln() + ln_ref;
                m = term.m;
                let ln_g_unit = term.c.ln() + m * model.c_lambda.ln() - G_SERIES_MAX.ln();
                for j in 0..n {
                    ratio[j] = (ln_tn[j] - ln_ref).exp();
                    // g <= G_SERIES_MAX for k >= k0
                    let k0 = ((ln_g_unit + ln_tn[j]) / (model.b * m)).exp();
                    if k0 < k_max as f64 {
                        boundary[j] = k0.ceil() as u64;
                    }
                }
            }
        }
        for (b, &f) in boundary.iter_mut().zip(floors) {
            *b = (*b).max(f).min(k_max);
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&x, &y| boundary[y].cmp(&boundary[x]));
        Self { boundary, ratio, ln_scale, m, moments: [NeumaierSum::new(); SERIES_LEN], order, next: 0 }
    }

    /// Moves every time with `boundary >= k` to the direct path (`k = 0` flushes
    /// the rest after the last mode), handing
    /// `seed` its series value over the modes already pushed.
    pub(crate) fn activate(&mut self, k: u64, coef: &[f64; SERIES_LEN], mut seed: impl FnMut(usize, f64)) {
        while self.next < self.order.len() && self.boundary[self.order[self.next]] >= k {
            let j = self.order[self.next];
            seed(j, self.evaluate(j, coef));
            self.next += 1;
        }
    }

    /// Times on the direct path.
    pub(crate) fn active(&self) -> &[usize] {
        &self.order[..self.next]
    }

    pub(crate) fn pending(&self) -> bool {
        self.next < self.order.len()
    }

    pub(crate) fn push(&mut self, ln_lambda: f64, weight: f64) {
        let u = (self.m * ln_lambda + self.ln_scale).exp();
        let mut w = weight;
        for s in &mut self.moments {
            s.add(w);
            w *= u;
        }
    }

    fn evaluate(&self, j: usize, coef: &[f64; SERIES_LEN]) -> f64 {
        let r = self.ratio[j];
        let mut acc = NeumaierSum::new();
        for p in (0..SERIES_LEN).rev() {
            let mp = self.moments[p].value();
            if coef[p] == 0.0 || mp == 0.0 {
                continue;
            }
            let rp = r.powi(p as i32);
            let term = if rp.is_finite() { rp * mp } else { (p as f64 * r.ln() + mp.ln()).exp() };
            acc.add(coef[p] * term);
        }
        acc.value()
    }
}
