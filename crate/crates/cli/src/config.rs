//! Run configuration: a TOML file with `[problem]`, `[[pricing]]`,
//! `[trust_region]` and `[output]` sections plus a top-level seed.
//!
//! Unknown keys are rejected so typos surface at load time instead of
//! silently falling back to defaults. Dotted-path overrides from the
//! command line are applied to the parsed tree before validation, and the
//! fully resolved configuration is echoed into the run summary.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use switchopt_core::{
    decay_target, ControlGrid, DecayParams, GradientSampling, Mat, PricingFunction, ProblemSpec,
    QuadPiece, SirParams, SystemKind, TimeGrid, TrustRegionConfig,
};

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(String),
    Invalid(String),
    Solver(switchopt_core::Error),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "cannot read config: {e}"),
            ConfigError::Parse(e) => write!(f, "cannot parse config: {e}"),
            ConfigError::Invalid(e) => write!(f, "invalid config: {e}"),
            ConfigError::Solver(e) => write!(f, "config rejected: {e}"),
        }
    }
}

impl std::error::Error for ConfigError {}

impl From<switchopt_core::Error> for ConfigError {
    fn from(e: switchopt_core::Error) -> Self {
        ConfigError::Solver(e)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub problem: ProblemSection,
    pub pricing: Vec<PricingSection>,
    #[serde(default)]
    pub trust_region: TrustRegionSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    42
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Decay,
    Sir,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub variant: Variant,
    pub t_start: f64,
    pub t_end: f64,
    pub n_cells: usize,
    #[serde(default = "default_switch_weight")]
    pub switch_weight: f64,
    #[serde(default)]
    pub initial: InitialIterate,
    #[serde(default)]
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub sir: Option<SirSection>,
}

/// Where a solve starts. The all-off control is the neutral default; the
/// decay benchmark starts from its target-generating control because the
/// problem is nonconvex and a cold start settles in nearby local minima.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialIterate {
    #[default]
    Zero,
    Generating,
}

fn default_switch_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub y0: f64,
    pub base_rate: f64,
    pub control_rate: f64,
    pub weight_tracking: f64,
    pub weight_terminal: f64,
    pub weight_control: f64,
    /// On-intervals of the control that generates the tracking target.
    pub target_intervals: Vec<[f64; 2]>,
    /// Values on those intervals; empty means the switch value of the
    /// pricing function, the level at which optimal controls jump.
    #[serde(default)]
    pub target_values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirSection {
    pub population: f64,
    pub beta0: f64,
    pub recovery_rate: f64,
    pub i0: f64,
    #[serde(default)]
    pub r0: f64,
    /// Defaults to `population - i0 - r0`.
    #[serde(default)]
    pub s0: Option<f64>,
    pub weight_infected: f64,
    pub weight_susceptible: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PricingSection {
    pub a: f64,
    pub b: f64,
    #[serde(default)]
    pub convexity_floor: f64,
    pub pieces: Vec<PieceSection>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSection {
    pub interval: [f64; 2],
    /// Quadratic coefficients `[p, q, c]` meaning `p·x² + q·x + c`.
    pub quad: [f64; 3],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustRegionSection {
    pub eta: f64,
    pub shrink: f64,
    pub grow: f64,
    pub delta0: f64,
    pub delta_max: f64,
    pub delta_min: f64,
    pub budget_max: usize,
    pub crit_step: f64,
    pub tol_criticality: f64,
    pub tol_prediction: f64,
    pub max_iter: usize,
    pub strict_criticality: bool,
    pub literal_budget_rule: bool,
    pub grad_sampling: GradientSampling,
}

impl Default for TrustRegionSection {
    fn default() -> Self {
        let core = TrustRegionConfig::default();
        TrustRegionSection {
            eta: core.eta,
            shrink: core.shrink,
            grow: core.grow,
            delta0: core.delta0,
            delta_max: core.delta_max,
            delta_min: core.delta_min,
            budget_max: core.budget_max,
            crit_step: core.crit_step,
            tol_criticality: core.tol_criticality,
            tol_prediction: core.tol_prediction,
            max_iter: core.max_iter,
            strict_criticality: core.strict_criticality,
            literal_budget_rule: core.literal_budget_rule,
            grad_sampling: core.grad_sampling,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    /// Print a progress line to stderr every this many iterations; 0 keeps
    /// the solver silent.
    pub log_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: "out".into(),
            log_every: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
        Self::from_toml(&text, overrides)
    }

    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        let mut tree = toml::Value::Table(table);
        for entry in overrides {
            apply_override(&mut tree, entry)?;
        }
        let config: RunConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let expected = match self.problem.variant {
            Variant::Decay => 1,
            Variant::Sir => 2,
        };
        if self.pricing.len() != expected {
            return Err(ConfigError::Invalid(format!(
                "{:?} needs {expected} pricing component(s), found {}",
                self.problem.variant,
                self.pricing.len()
            )));
        }
        match self.problem.variant {
            Variant::Decay if self.problem.decay.is_none() => Err(ConfigError::Invalid(
                "variant \"decay\" needs a [problem.decay] section".into(),
            )),
            Variant::Sir if self.problem.sir.is_none() => Err(ConfigError::Invalid(
                "variant \"sir\" needs a [problem.sir] section".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn pricing_functions(&self) -> Result<Vec<PricingFunction>, ConfigError> {
        self.pricing
            .iter()
            .map(|section| {
                let pieces = section
                    .pieces
                    .iter()
                    .map(|p| QuadPiece {
                        lo: p.interval[0],
                        hi: p.interval[1],
                        c2: p.quad[0],
                        c1: p.quad[1],
                        c0: p.quad[2],
                    })
                    .collect();
                PricingFunction::new(section.a, section.b, pieces, section.convexity_floor)
                    .map_err(ConfigError::from)
            })
            .collect()
    }

    pub fn time_grid(&self) -> Result<TimeGrid, ConfigError> {
        Ok(TimeGrid::new(
            self.problem.t_start,
            self.problem.t_end,
            self.problem.n_cells,
        )?)
    }

    /// The target-generating on-intervals as `(from, to, level)` triples,
    /// with missing levels defaulting to the pricing switch value.
    pub fn decay_target_intervals(
        &self,
        pricing: &[PricingFunction],
    ) -> Result<Vec<(f64, f64, f64)>, ConfigError> {
        let decay = self
            .problem
            .decay
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [problem.decay]".into()))?;
        let fallback = pricing[0].switch_value();
        Ok(decay
            .target_intervals
            .iter()
            .enumerate()
            .map(|(k, iv)| {
                (
                    iv[0],
                    iv[1],
                    decay.target_values.get(k).copied().unwrap_or(fallback),
                )
            })
            .collect())
    }

    /// The control that generates the decay tracking target, snapped onto
    /// `grid` by midpoint sampling.
    pub fn decay_generating_control(
        &self,
        grid: TimeGrid,
        pricing: &[PricingFunction],
    ) -> Result<ControlGrid, ConfigError> {
        let decay = self
            .problem
            .decay
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("missing [problem.decay]".into()))?;
        let fallback = pricing[0].switch_value();
        let mut values = Mat::zeros(1, grid.n_cells());
        for j in 0..grid.n_cells() {
            let mid = grid.boundary_time(j) + 0.5 * grid.dt();
            for (k, interval) in decay.target_intervals.iter().enumerate() {
                if mid >= interval[0] && mid < interval[1] {
                    let level = decay.target_values.get(k).copied().unwrap_or(fallback);
                    values.set(0, j, level);
                }
            }
        }
        Ok(ControlGrid::new(grid, values)?)
    }

    /// Builds the problem on the configured grid.
    pub fn problem_spec(&self) -> Result<ProblemSpec, ConfigError> {
        self.problem_spec_on(self.problem.n_cells)
    }

    /// Builds the problem on a grid with `n_cells` cells, regenerating any
    /// grid-dependent data (the decay target) at that resolution.
    pub fn problem_spec_on(&self, n_cells: usize) -> Result<ProblemSpec, ConfigError> {
        let grid = TimeGrid::new(self.problem.t_start, self.problem.t_end, n_cells)?;
        let pricing = self.pricing_functions()?;
        let system = match self.problem.variant {
            Variant::Decay => {
                let decay = self.problem.decay.as_ref().expect("validated");
                let generating = self.decay_generating_control(grid, &pricing)?;
                let target = decay_target(
                    &grid,
                    decay.y0,
                    decay.base_rate,
                    decay.control_rate,
                    &generating,
                )?;
                SystemKind::Decay(DecayParams {
                    y0: decay.y0,
                    base_rate: decay.base_rate,
                    control_rate: decay.control_rate,
                    weight_tracking: decay.weight_tracking,
                    weight_terminal: decay.weight_terminal,
                    weight_control: decay.weight_control,
                    target,
                })
            }
            Variant::Sir => {
                let sir = self.problem.sir.as_ref().expect("validated");
                SystemKind::Sir(SirParams {
                    population: sir.population,
                    beta0: sir.beta0,
                    recovery_rate: sir.recovery_rate,
                    s0: sir.s0.unwrap_or(sir.population - sir.i0 - sir.r0),
                    i0: sir.i0,
                    r0: sir.r0,
                    weight_infected: sir.weight_infected,
                    weight_susceptible: sir.weight_susceptible,
                })
            }
        };
        Ok(ProblemSpec::new(
            grid,
            pricing,
            self.problem.switch_weight,
            system,
        )?)
    }

    /// The configured initial iterate for a solve on the problem's grid.
    pub fn initial_control(&self, spec: &ProblemSpec) -> Result<ControlGrid, ConfigError> {
        match self.problem.initial {
            InitialIterate::Zero => Ok(spec.zero_control()),
            InitialIterate::Generating => {
                if self.problem.variant != Variant::Decay {
                    return Err(ConfigError::Invalid(
                        "initial = \"generating\" is only available for the decay variant".into(),
                    ));
                }
                self.decay_generating_control(*spec.grid(), spec.pricing())
            }
        }
    }

    pub fn trust_region_config(&self) -> TrustRegionConfig {
        let s = &self.trust_region;
        TrustRegionConfig {
            eta: s.eta,
            shrink: s.shrink,
            grow: s.grow,
            delta0: s.delta0,
            delta_max: s.delta_max,
            delta_min: s.delta_min,
            budget_max: s.budget_max,
            crit_step: s.crit_step,
            tol_criticality: s.tol_criticality,
            tol_prediction: s.tol_prediction,
            max_iter: s.max_iter,
            strict_criticality: s.strict_criticality,
            literal_budget_rule: s.literal_budget_rule,
            grad_sampling: s.grad_sampling,
        }
    }
}

/// Applies one `key.path=value` override to the parsed tree. The value is
/// parsed as TOML; bare words fall back to strings.
fn apply_override(tree: &mut toml::Value, entry: &str) -> Result<(), ConfigError> {
    let (path, raw_value) = entry.split_once('=').ok_or_else(|| {
        ConfigError::Invalid(format!("override '{entry}' is not of the form key=value"))
    })?;
    let parsed: toml::Value = match format!("v = {raw_value}").parse::<toml::Table>() {
        Ok(t) => t.get("v").cloned().expect("just inserted"),
        Err(_) => toml::Value::String(raw_value.trim().to_string()),
    };
    let mut node = tree;
    let segments: Vec<&str> = path.trim().split('.').collect();
    for (k, segment) in segments.iter().enumerate() {
        let table = node.as_table_mut().ok_or_else(|| {
            ConfigError::Invalid(format!("override path '{path}' crosses a non-table value"))
        })?;
        if k + 1 == segments.len() {
            table.insert(segment.to_string(), parsed);
            return Ok(());
        }
        node = table
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!("split always yields at least one segment");
}
