//! Fixtures shared by the benchmarks.

use speclab_core::{DynamicsKernel, SpectrumModel};

pub fn desk_model(k_max: u64) -> SpectrumModel {
    SpectrumModel::unit(2.5, 2.0, k_max).expect("valid exponents")
}

pub fn kernels() -> Vec<(&'static str, DynamicsKernel)> {
    vec![
        ("ntk", DynamicsKernel::ntk()),
        ("fl0", DynamicsKernel::feature_learning(0.0)),
        ("l2t3", DynamicsKernel::monomial(1.0, 2.0, 3.0)),
    ]
}
