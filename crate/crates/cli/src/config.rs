//! Experiment configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use jumplab::{BoundaryMode, ModelDescription, Threshold, Vertex};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ConditionsSweep,
    Phi,
    Ehi,
    Heat,
    ExitTime,
    Poincare,
    CexSuppressed,
    CexLadder,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::ConditionsSweep => "conditions-sweep",
            Experiment::Phi => "phi",
            Experiment::Ehi => "ehi",
            Experiment::Heat => "heat",
            Experiment::ExitTime => "exit-time",
            Experiment::Poincare => "poincare",
            Experiment::CexSuppressed => "cex-suppressed",
            Experiment::CexLadder => "cex-ladder",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    /// Empty means the origin.
    pub centers: Vec<Vertex>,
    pub radii: Vec<f64>,
    pub times: Vec<f64>,
    /// Empty means `(0, r e_1)` for `r = 1..=32` on lattices, all pairs on explicit graphs.
    pub pairs: Vec<(Vertex, Vertex)>,
    /// Killed windows for the heat-kernel checks; empty means `4 max(r)` and `8 max(r)`.
    pub windows: Vec<f64>,
    /// Time band `t = f r^alpha` for the near-diagonal and survival checks.
    pub time_factors: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            centers: vec![],
            radii: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            times: vec![0.1, 1.0],
            pairs: vec![],
            windows: vec![],
            time_factors: vec![0.5, 1.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatParams {
    pub center: Option<Vertex>,
    pub radius: f64,
    pub mode: BoundaryMode,
    /// Single source row; all rows when absent.
    pub source: Option<Vertex>,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams { center: None, radius: 10.0, mode: BoundaryMode::Killed, source: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloParams {
    /// Zero skips the sampling cross-check.
    pub trajectories: usize,
    pub start: Option<Vertex>,
}

impl Default for MonteCarloParams {
    fn default() -> Self {
        MonteCarloParams { trajectories: 10_000, start: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnackParams {
    pub lambda: f64,
    pub steps: usize,
    pub lambda_ext: f64,
    /// Write every generator's ratio as CSV.
    pub dump_generators: bool,
}

impl Default for HarnackParams {
    fn default() -> Self {
        HarnackParams { lambda: 1.0, steps: 256, lambda_ext: 4.0, dump_generators: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionParams {
    /// Any of vd, jump, ujs, flux, moments, poincare, weighted-poincare, nash, hkp, ndlb, sb, exit-time.
    pub checks: Vec<String>,
    /// Overrides the kernel's own index.
    pub alpha: Option<f64>,
    pub moment_delta: f64,
    pub moment_lambda: f64,
    pub nash_dimension: Option<f64>,
    pub nash_window: f64,
    pub nash_samples: usize,
}

impl Default for ConditionParams {
    fn default() -> Self {
        ConditionParams {
            checks: ["vd", "jump", "ujs", "flux", "moments", "poincare", "exit-time"].map(String::from).to_vec(),
            alpha: None,
            moment_delta: 0.5,
            moment_lambda: 2.0,
            nash_dimension: None,
            nash_window: 16.0,
            nash_samples: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressedParams {
    pub dim: usize,
    pub alpha: f64,
    /// `R = d(0, y0)`, with `y0 = R e_1`.
    pub radii: Vec<i64>,
    /// Heat-kernel probe times at the pair; the first is the collapse time.
    pub hkp_times: Vec<f64>,
    pub window_factor: f64,
}

impl Default for SuppressedParams {
    fn default() -> Self {
        SuppressedParams { dim: 1, alpha: 1.0, radii: vec![8, 16], hkp_times: vec![1e-3, 1e-2, 1e-1, 1.0], window_factor: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LadderParams {
    pub alpha: f64,
    pub ranges: Vec<i64>,
    /// Exit-time radii.
    pub radii: Vec<f64>,
    /// Hitting ball `B(0, R)`, started at `R/4`.
    pub hit_radius: f64,
    /// Jump pairs `(0, d)` for `d = 1..=pair_max`.
    pub pair_max: i64,
}

impl Default for LadderParams {
    fn default() -> Self {
        LadderParams {
            alpha: 1.5,
            ranges: vec![16, 64, 256],
            radii: vec![8.0, 16.0, 32.0, 64.0],
            hit_radius: 64.0,
            pair_max: 1024,
        }
    }
}

/// A run is a pure function of this (given the seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Exit with status 1 when a headline assertion fails.
    #[serde(default)]
    pub assert_headlines: bool,
    #[serde(default = "default_model")]
    pub model: ModelDescription,
    #[serde(default)]
    pub grid: Grid,
    #[serde(default)]
    pub heat: HeatParams,
    #[serde(default)]
    pub monte_carlo: MonteCarloParams,
    #[serde(default)]
    pub harnack: HarnackParams,
    #[serde(default)]
    pub conditions: ConditionParams,
    #[serde(default)]
    pub cex_suppressed: SuppressedParams,
    #[serde(default)]
    pub cex_ladder: LadderParams,
    #[serde(default)]
    pub thresholds: Vec<Threshold>,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

fn default_tolerance() -> f64 {
    1e-12
}

fn default_model() -> ModelDescription {
    ModelDescription::polynomial(1, 1.0)
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            name: None,
            seed: 0,
            output: default_output(),
            tolerance: default_tolerance(),
            assert_headlines: false,
            model: default_model(),
            grid: Grid::default(),
            heat: HeatParams::default(),
            monte_carlo: MonteCarloParams::default(),
            harnack: HarnackParams::default(),
            conditions: ConditionParams::default(),
            cex_suppressed: SuppressedParams::default(),
            cex_ladder: LadderParams::default(),
            thresholds: vec![],
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("invalid config: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Canonical TOML with every default filled in.
    pub fn resolved(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            bail!("tolerance: must be positive, got {}", self.tolerance);
        }
        if self.grid.radii.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            bail!("grid.radii: radii must be finite and nonnegative");
        }
        if self.grid.times.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
            bail!("grid.times: times must be finite and nonnegative");
        }
        if !(self.harnack.lambda > 0.0 && self.harnack.lambda <= 1.0) {
            bail!("harnack.lambda: must lie in (0, 1], got {}", self.harnack.lambda);
        }
        if self.harnack.steps == 0 || self.harnack.steps % 4 != 0 {
            bail!("harnack.steps: must be a positive multiple of 4, got {}", self.harnack.steps);
        }
        if self.experiment == Experiment::CexLadder && !(self.cex_ladder.alpha > 1.0 && self.cex_ladder.alpha < 2.0) {
            bail!("cex_ladder.alpha: the ladder construction needs alpha in (1, 2), got {}", self.cex_ladder.alpha);
        }
        if self.experiment == Experiment::CexSuppressed && self.cex_suppressed.window_factor < 8.0 {
            bail!("cex_suppressed.window_factor: must be at least 8");
        }
        Ok(())
    }

    /// Scope notes that do not stop the run.
    pub fn warnings(&self) -> Vec<String> {
        let alpha = self.conditions.alpha.or(self.model.kernel.alpha());
        let mut out = vec![];
        if let Some(a) = alpha {
            let heat_checks = matches!(self.experiment, Experiment::ConditionsSweep | Experiment::Phi | Experiment::Ehi);
            if heat_checks && !(a > 0.0 && a < 2.0) {
                out.push(format!(
                    "alpha = {a} lies outside (0, 2); the heat-kernel characterization is not claimed there, results are exploratory"
                ));
            }
        }
        out
    }

    /// Directory name of this run: `name`, or the experiment plus a hash of the resolved config.
    pub fn run_name(&self) -> Result<String> {
        if let Some(n) = &self.name {
            return Ok(n.clone());
        }
        let key = jumplab::io::cache_key("config", &self.resolved()?);
        Ok(format!("{}-{}", self.experiment, &key[..12]))
    }
}
