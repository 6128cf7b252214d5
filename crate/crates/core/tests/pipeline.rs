use speclab_core::{
    chi_theoretical, fit_powerlaw, frontier_trace, gamma_theoretical, log_grid, loss_curve, quantization_excess_curve,
    window_by_k_star, DynamicsKernel, FrontierMethod, PerturbationSpec, SpectrumModel, Weighting,
};

fn model() -> SpectrumModel {
    SpectrumModel::unit(2.5, 2.0, 1_000_000).unwrap()
}

fn kernels() -> Vec<DynamicsKernel> {
    vec![DynamicsKernel::ntk(), DynamicsKernel::feature_learning(0.0), DynamicsKernel::monomial(1.0, 2.0, 3.0)]
}

/// Time grid over which the level-set frontier sweeps `k*` from `lo` to `hi`.
fn grid_for(kernel: &DynamicsKernel, m: &SpectrumModel, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let t0 = speclab_core::time_at_index(kernel, m, lo, 1.0).unwrap();
    let t1 = speclab_core::time_at_index(kernel, m, hi, 1.0).unwrap();
    log_grid(t0, t1, n).unwrap()
}

#[test]
fn loss_slope_tracks_chi_for_each_kernel() {
    let m = model();
    for k in kernels() {
        let rho = k.analytic_rho().unwrap();
        let times = grid_for(&k, &m, 1e2, 1e4, 20);
        let curve = loss_curve(&k, &m, &times, Weighting::Eigen, None).unwrap();
        let fit = fit_powerlaw(&times, &curve.values, 0..times.len()).unwrap();
        let chi = chi_theoretical(&m, rho);
        assert!((fit.slope + chi).abs() < 0.06 * chi.max(1.0), "{}: {fit:?} vs {chi}", k.label());
        assert!(fit.r_squared > 0.99);
    }
}

#[test]
fn quantization_slope_tracks_gamma() {
    let m = model();
    let k = DynamicsKernel::ntk();
    let times = grid_for(&k, &m, 1e2, 1e4, 20);
    let dl = quantization_excess_curve(&k, &m, &times, &PerturbationSpec::closed(1e-4, 0.0)).unwrap();
    let fit = fit_powerlaw(&times, &dl, 0..times.len()).unwrap();
    assert!((fit.slope - gamma_theoretical(&m, 1.0)).abs() < 0.05, "{fit:?}");
}

#[test]
fn frontier_index_slope() {
    let m = model();
    for k in kernels() {
        let rho = k.analytic_rho().unwrap();
        let times = log_grid(1e1, 1e3, 30).unwrap();
        let tr = frontier_trace(&k, &m, &times, FrontierMethod::level_set()).unwrap();
        let w = window_by_k_star(&tr.k_star, 1.0, 1e6);
        let fit = fit_powerlaw(&times, &tr.k_star, w).unwrap();
        assert!((fit.slope - rho / m.b).abs() < 1e-9, "{fit:?}");
    }
}

#[test]
fn configs_round_trip_through_serde_types() {
    // Public types are usable as plain values across the crate boundary.
    let k = DynamicsKernel::monomial_sum(vec![
        speclab_core::Monomial::new(1.0, 1.0, 1.0),
        speclab_core::Monomial::new(0.5, 2.0, 3.0),
    ]);
    k.validate().unwrap();
    assert!(k.analytic_rho().is_none());
    let m = model();
    assert!(m.validate().is_ok());
}
