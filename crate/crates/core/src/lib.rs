//! Spectral model of learning dynamics, frontier tracking, loss, compression
//! excess and power-law fits.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod error;
pub mod frontier;
pub mod grid;
pub mod loss;
pub mod perturbation;
pub mod scaling;
pub mod spectrum;
pub mod sum;
mod sweep;

pub use dynamics::{
    check_poly_condition, mode_value, p_exponent, poly_condition_holds, DynamicsKernel, ElasticityReport, LambdaCutoff,
    Monomial,
};
pub use error::{Result, SpecError};
pub use frontier::{
    frontier_levelset, frontier_rate_argmax, frontier_trace, k_star, solve_level, time_at_index, FrontierMethod,
    FrontierTrace, RateArgmax, RateKind,
};
pub use grid::{log_grid, validate_time_grid};
pub use loss::{
    chi_theoretical, loss, loss_curve, sandwich_diagnostic, sandwich_from_curve, LossCurve, LossSplit, SandwichPoint,
};
pub use perturbation::{
    critical_point_trajectory, critical_prune_rate, gamma_theoretical, prune_curve, prune_excess,
    quantization_excess_closed, quantization_excess_curve, quantization_excess_mc, CriticalTrajectory, CutRule,
    McEstimate, PerturbationSpec, PruneControl, PruneCurve, PruneRegime, PruneSpec, RegimeThresholds,
};
pub use scaling::{
    densing_trajectory, density, fit_powerlaw, learned_modes, window_by_k_star, ComputeBudget, DensingConfig,
    DensingTrajectory, PowerLawFit,
};
pub use spectrum::{SpectrumModel, TailMode, Weighting};
pub use sum::NeumaierSum;
