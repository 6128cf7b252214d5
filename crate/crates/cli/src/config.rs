//! Experiment configuration files (JSON).

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use speclab_core::{
    frontier::DEFAULT_KAPPA, log_grid, validate_time_grid, DensingConfig, DynamicsKernel, FrontierMethod,
    PerturbationSpec, SpectrumModel, Weighting,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Loss,
    Frontier,
    Quantize,
    Prune,
    Density,
    Densing,
    Verify,
    Fit,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Loss => "loss",
            Experiment::Frontier => "frontier",
            Experiment::Quantize => "quantize",
            Experiment::Prune => "prune",
            Experiment::Density => "density",
            Experiment::Densing => "densing",
            Experiment::Verify => "verify",
            Experiment::Fit => "fit",
        }
    }
}

/// Log-spaced `{min, max, points}` or explicit `{values}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub points: Option<usize>,
    pub values: Option<Vec<f64>>,
}

impl Grid {
    pub fn log(min: f64, max: f64, points: usize) -> Self {
        Self { min: Some(min), max: Some(max), points: Some(points), values: None }
    }

    pub fn resolve(&self, key: &str) -> Result<Vec<f64>> {
        let v = match (&self.values, self.min, self.max, self.points) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(lo), Some(hi), Some(n)) => {
                if n == 0 {
                    bail!("`{key}.points` must be at least 1");
                }
                log_grid(lo, hi, n).with_context(|| format!("`{key}`"))?
            }
            _ => bail!("`{key}` needs either `values` or all of `min`, `max`, `points`"),
        };
        if v.is_empty() {
            bail!("`{key}` must not be empty");
        }
        validate_time_grid(&v).with_context(|| format!("`{key}` must be positive and strictly increasing"))?;
        Ok(v)
    }
}

/// Fit window on the frontier index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KStarWindow {
    pub k_star_min: f64,
    pub k_star_max: f64,
}

impl KStarWindow {
    /// `[1e2, min(1e5, k_max / 1e2)]`
    pub fn default_for(model: &SpectrumModel) -> Self {
        Self { k_star_min: 1e2, k_star_max: (model.k_max as f64 / 1e2).min(1e5) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrontierConfig {
    pub method: FrontierMethod,
}

fn unweighted() -> Weighting {
    Weighting::Unweighted
}

fn default_eps() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    /// Time at which the prune curve is evaluated.
    pub t: f64,
    pub theta: Option<Vec<f64>>,
    pub retained_fraction: Option<Vec<f64>>,
    #[serde(default = "unweighted")]
    pub weighting: Weighting,
    #[serde(default = "default_eps")]
    pub saturation_eps: f64,
    #[serde(default)]
    pub plateau_margin: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(default = "one")]
    pub kappa_hw: f64,
    /// Parameter count held fixed while compute varies.
    pub p_fixed: f64,
    pub c_grid: Grid,
    /// Compute held fixed while parameters vary.
    pub c_fixed: f64,
    pub p_grid: Grid,
}

fn mc_seeds() -> u64 {
    100
}
fn mc_samples() -> usize {
    200
}
fn mc_k_max() -> u64 {
    1000
}
fn mc_sigma() -> f64 {
    1e-4
}
fn mc_tau() -> f64 {
    1e-6
}

/// Monte-Carlo agreement check, run on a reduced spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McCheckConfig {
    #[serde(default = "mc_seeds")]
    pub seeds: u64,
    #[serde(default = "mc_samples")]
    pub n_samples: usize,
    #[serde(default = "mc_k_max")]
    pub k_max: u64,
    #[serde(default = "mc_sigma")]
    pub sigma_sq: f64,
    #[serde(default = "mc_tau")]
    pub tau_sq: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for McCheckConfig {
    fn default() -> Self {
        Self {
            seeds: mc_seeds(),
            n_samples: mc_samples(),
            k_max: mc_k_max(),
            sigma_sq: mc_sigma(),
            tau_sq: mc_tau(),
            seed: 0,
        }
    }
}

fn t_points() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Defaults to the top-level kernel, else the standard three.
    pub kernels: Option<Vec<DynamicsKernel>>,
    /// Defaults to the top-level spectrum, else `(2.5, 2)` and `(3, 2)` at `k_max = 1e7`.
    pub spectra: Option<Vec<SpectrumModel>>,
    #[serde(default)]
    pub mc: McCheckConfig,
    #[serde(default = "t_points")]
    pub t_points: usize,
    /// Adds a kernel that decreases in `t` as a negative control.
    #[serde(default)]
    pub inject_broken_kernel: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            kernels: None,
            spectra: None,
            mc: McCheckConfig::default(),
            t_points: t_points(),
            inject_broken_kernel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub input: PathBuf,
    pub x: String,
    pub y: String,
    /// Row range `[start, end)`; the whole file when absent.
    pub window: Option<[usize; 2]>,
    pub theoretical: Option<f64>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "yes")]
    pub plot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_dir(), plot: true }
    }
}

fn default_kappa() -> f64 {
    DEFAULT_KAPPA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub spectrum: Option<SpectrumModel>,
    pub kernel: Option<DynamicsKernel>,
    pub t_grid: Option<Grid>,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub weighting: Weighting,
    pub fit_window: Option<KStarWindow>,
    pub frontier: Option<FrontierConfig>,
    pub quantize: Option<PerturbationSpec>,
    pub prune: Option<PruneConfig>,
    pub density: Option<DensityConfig>,
    pub densing: Option<DensingConfig>,
    pub verify: Option<VerifyConfig>,
    pub fit: Option<FitConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    /// Skeleton with a spectrum and kernel and nothing else.
    pub fn new(experiment: Experiment, spectrum: SpectrumModel, kernel: DynamicsKernel) -> Self {
        Self {
            experiment: Some(experiment),
            spectrum: Some(spectrum),
            kernel: Some(kernel),
            t_grid: None,
            kappa: DEFAULT_KAPPA,
            weighting: Weighting::Eigen,
            fit_window: None,
            frontier: None,
            quantize: None,
            prune: None,
            density: None,
            densing: None,
            verify: None,
            fit: None,
            output: OutputConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).context("invalid config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.experiment.context("config does not name an `experiment`")
    }

    pub fn spectrum(&self) -> Result<SpectrumModel> {
        self.spectrum.context("missing required key `spectrum`")
    }

    pub fn kernel(&self) -> Result<DynamicsKernel> {
        self.kernel.clone().context("missing required key `kernel`")
    }

    /// Checks every key the experiment reads, before any computation.
    pub fn validate(&self) -> Result<()> {
        let exp = self.experiment()?;
        if let Some(m) = &self.spectrum {
            m.validate().context("invalid `spectrum`")?;
        }
        if let Some(k) = &self.kernel {
            k.validate().context("invalid `kernel`")?;
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            bail!("`kappa` must be positive, got {}", self.kappa);
        }
        if let Some(g) = &self.t_grid {
            g.resolve("t_grid")?;
        }
        if let Some(w) = &self.fit_window {
            if !(w.k_star_min > 0.0 && w.k_star_max > w.k_star_min) {
                bail!("`fit_window` needs 0 < k_star_min < k_star_max");
            }
        }
        let needs_model = !matches!(exp, Experiment::Fit | Experiment::Verify);
        if needs_model {
            self.spectrum()?;
            self.kernel()?;
        }
        match exp {
            Experiment::Frontier => {
                if let Some(FrontierConfig { method: FrontierMethod::LevelSet { kappa } }) = self.frontier {
                    if !(kappa > 0.0) {
                        bail!("`frontier.method.kappa` must be positive");
                    }
                }
            }
            Experiment::Quantize => {
                let q = self.quantize.as_ref().context("missing required key `quantize`")?;
                q.validate().context("invalid `quantize`")?;
                if q.n_samples == 1 {
                    bail!("`quantize.n_samples` must be 0 (closed form only) or at least 2");
                }
            }
            Experiment::Prune => {
                let p = self.prune.as_ref().context("missing required key `prune`")?;
                if !(p.t > 0.0) {
                    bail!("`prune.t` must be positive");
                }
                match (&p.theta, &p.retained_fraction) {
                    (Some(th), None) => {
                        if th.is_empty() || th.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                            bail!("`prune.theta` must be a nonempty list of positive values");
                        }
                    }
                    (None, Some(fr)) => {
                        if fr.is_empty() || fr.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                            bail!("`prune.retained_fraction` must be a nonempty list in (0, 1]");
                        }
                    }
                    _ => bail!("`prune` needs exactly one of `theta` or `retained_fraction`"),
                }
                if !(p.saturation_eps > 0.0 && p.saturation_eps < 1.0) {
                    bail!("`prune.saturation_eps` must lie in (0, 1)");
                }
                if !(p.plateau_margin >= 0.0) {
                    bail!("`prune.plateau_margin` must be nonnegative");
                }
            }
            Experiment::Density => {
                let d = self.density.as_ref().context("missing required key `density`")?;
                for (k, v) in
                    [("density.kappa_hw", d.kappa_hw), ("density.p_fixed", d.p_fixed), ("density.c_fixed", d.c_fixed)]
                {
                    if !(v > 0.0 && v.is_finite()) {
                        bail!("`{k}` must be positive, got {v}");
                    }
                }
                d.c_grid.resolve("density.c_grid")?;
                d.p_grid.resolve("density.p_grid")?;
            }
            Experiment::Densing => {
                self.densing
                    .as_ref()
                    .context("missing required key `densing`")?
                    .validate()
                    .context("invalid `densing`")?;
            }
            Experiment::Verify => {
                if let Some(v) = &self.verify {
                    if let Some(ks) = &v.kernels {
                        if ks.is_empty() {
                            bail!("`verify.kernels` must not be empty");
                        }
                        for k in ks {
                            k.validate().context("invalid entry in `verify.kernels`")?;
                        }
                    }
                    if let Some(ms) = &v.spectra {
                        if ms.is_empty() {
                            bail!("`verify.spectra` must not be empty");
                        }
                        for m in ms {
                            m.validate().context("invalid entry in `verify.spectra`")?;
                        }
                    }
                    if v.t_points < 3 {
                        bail!("`verify.t_points` must be at least 3");
                    }
                    if v.mc.seeds == 0 || v.mc.n_samples < 2 || v.mc.k_max == 0 {
                        bail!("`verify.mc` needs seeds >= 1, n_samples >= 2, k_max >= 1");
                    }
                }
            }
            Experiment::Fit => {
                self.fit.as_ref().context("missing required key `fit`")?;
            }
            Experiment::Loss => {}
        }
        Ok(())
    }

    pub fn window(&self, model: &SpectrumModel) -> KStarWindow {
        self.fit_window.unwrap_or_else(|| KStarWindow::default_for(model))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "experiment": "loss",
        "spectrum": {"a": 2.5, "b": 2.0, "k_max": 1e4},
        "kernel": {"family": "monomial", "m": 1, "n": 1}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        c.validate().unwrap();
        assert_eq!(c.spectrum.unwrap().k_max, 10_000);
        assert_eq!(c.kernel.unwrap(), DynamicsKernel::ntk());
        assert_eq!(c.output.dir, PathBuf::from("out"));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = BASE.replace("\"kernel\"", "\"kernal\"");
        let e = format!("{:#}", ExperimentConfig::from_json(&text).unwrap_err());
        assert!(e.contains("kernal"), "{e}");
        let nested = BASE.replace("\"k_max\"", "\"kmax\"");
        let e = format!("{:#}", ExperimentConfig::from_json(&nested).unwrap_err());
        assert!(e.contains("kmax"), "{e}");
    }

    #[test]
    fn a_below_one_is_rejected() {
        let text = BASE.replace("2.5", "0.5");
        let e = format!("{:#}", ExperimentConfig::from_json(&text).unwrap().validate().unwrap_err());
        assert!(e.contains("a > 1"), "{e}");
    }

    #[test]
    fn empty_t_grid_is_rejected() {
        let text = BASE.replace("\"experiment\"", "\"t_grid\": {\"values\": []}, \"experiment\"");
        let e = format!("{:#}", ExperimentConfig::from_json(&text).unwrap().validate().unwrap_err());
        assert!(e.contains("t_grid") && e.contains("empty"), "{e}");
    }

    #[test]
    fn experiment_sections_are_required() {
        let text = BASE.replace("\"loss\"", "\"quantize\"");
        let e = format!("{:#}", ExperimentConfig::from_json(&text).unwrap().validate().unwrap_err());
        assert!(e.contains("quantize"), "{e}");
    }
}
