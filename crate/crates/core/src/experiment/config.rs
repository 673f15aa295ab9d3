use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baggfn::{GenerationConfig, ParameterRange};
use crate::error::{Error, Result};
use crate::nash::NashSettings;
use crate::pipeline::SamplingConfig;
use crate::surrogate::{NetworkSpec, TrainSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    FplVsVpl,
    Refinement,
    ScalabilityEr,
    ScalabilityPlayers,
    Robustness,
    Sensitivity,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::FplVsVpl,
        ExperimentKind::Refinement,
        ExperimentKind::ScalabilityEr,
        ExperimentKind::ScalabilityPlayers,
        ExperimentKind::Robustness,
        ExperimentKind::Sensitivity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::FplVsVpl => "fpl_vs_vpl",
            ExperimentKind::Refinement => "refinement",
            ExperimentKind::ScalabilityEr => "scalability_er",
            ExperimentKind::ScalabilityPlayers => "scalability_players",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::Sensitivity => "sensitivity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown experiment kind {s:?}")))
    }
}

/// Optional replacements for fields of a default architecture.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkOverrides {
    pub trunk_widths: Option<Vec<usize>>,
    pub head_width: Option<usize>,
    pub skip_connections: Option<bool>,
}

impl NetworkOverrides {
    pub fn apply(&self, mut spec: NetworkSpec) -> NetworkSpec {
        if let Some(w) = &self.trunk_widths {
            spec.trunk_widths = w.clone();
        }
        if let Some(h) = self.head_width {
            spec.head_width = h;
        }
        if let Some(s) = self.skip_connections {
            spec.skip_connections = s;
        }
        spec
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub vpl: NetworkOverrides,
    #[serde(default)]
    pub fpl: NetworkOverrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetSection {
    /// Total simulator queries per game (per model for scalability).
    pub total: Option<usize>,
    /// Rows per grid instance for stratified designs.
    pub per_instance: Option<usize>,
    /// Share of the total spent on the initial design by refined variants.
    #[serde(default = "default_initial_fraction")]
    pub initial_fraction: f64,
}

fn default_initial_fraction() -> f64 {
    0.8
}

impl Default for BudgetSection {
    fn default() -> Self {
        BudgetSection { total: None, per_instance: None, initial_fraction: default_initial_fraction() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_resolution")]
    pub lattice_resolution: u32,
    /// Grid size for continuous parameters.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

fn default_resolution() -> u32 {
    8
}
fn default_grid_points() -> usize {
    11
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection { lattice_resolution: default_resolution(), grid_points: default_grid_points() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementSection {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_filter")]
    pub filter_epsilon: f64,
    #[serde(default = "default_filtered_per")]
    pub filtered_per_candidate: usize,
    #[serde(default = "default_unfiltered_per")]
    pub unfiltered_per_candidate: usize,
    /// Epochs of the no-refinement baseline, trained once on the full budget.
    #[serde(default = "default_baseline_epochs")]
    pub baseline_epochs: usize,
}

fn default_iterations() -> usize {
    5
}
fn default_filter() -> f64 {
    0.1
}
fn default_filtered_per() -> usize {
    200
}
fn default_unfiltered_per() -> usize {
    100
}
fn default_baseline_epochs() -> usize {
    10
}

impl Default for RefinementSection {
    fn default() -> Self {
        RefinementSection {
            iterations: default_iterations(),
            filter_epsilon: default_filter(),
            filtered_per_candidate: default_filtered_per(),
            unfiltered_per_candidate: default_unfiltered_per(),
            baseline_epochs: default_baseline_epochs(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalabilitySection {
    /// Player-range widths, each covering the evaluation points with as few
    /// models as possible.
    #[serde(default)]
    pub widths: Vec<u32>,
    /// Spacing of evaluation player counts, starting at the range minimum.
    #[serde(default = "default_eval_step")]
    pub eval_step: u32,
}

fn default_eval_step() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_analysis_resolution")]
    pub lattice_resolution: u32,
    #[serde(default = "default_rd_iterations")]
    pub iterations: usize,
    /// Drive the analysis with the exact oracle instead of a trained model.
    #[serde(default)]
    pub use_oracle: bool,
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_analysis_resolution() -> u32 {
    20
}
fn default_rd_iterations() -> usize {
    1000
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            epsilon: default_epsilon(),
            lattice_resolution: default_analysis_resolution(),
            iterations: default_rd_iterations(),
            use_oracle: false,
        }
    }
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_games")]
    pub num_games: usize,
    /// Family generator settings; its `seed` is replaced by per-game seeds.
    pub game: GenerationConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSettings,
    /// Fixed-parameter baselines; defaults to `train`.
    pub fpl_train: Option<TrainSettings>,
    pub sampling: Option<SamplingConfig>,
    #[serde(default)]
    pub budget: BudgetSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
    #[serde(default)]
    pub refinement: RefinementSection,
    #[serde(default)]
    pub scalability: ScalabilitySection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

fn default_games() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        crate::report::config_hash(self)
    }

    pub fn vpl_spec(&self) -> NetworkSpec {
        self.model.vpl.apply(NetworkSpec::vpl(self.game.num_strategies))
    }

    pub fn fpl_spec(&self) -> NetworkSpec {
        self.model.fpl.apply(NetworkSpec::fpl(self.game.num_strategies))
    }

    pub fn fpl_train(&self) -> TrainSettings {
        self.fpl_train.clone().unwrap_or_else(|| self.train.clone())
    }

    pub fn sampling(&self) -> SamplingConfig {
        self.sampling.clone().unwrap_or_else(|| SamplingConfig {
            instance_grid_points: self.evaluation.grid_points,
            ..SamplingConfig::new(self.budget.total.unwrap_or(1))
        })
    }

    pub fn nash(&self) -> NashSettings {
        self.sampling().nash
    }

    /// Instances used for evaluation and equilibrium search.
    pub fn grid(&self) -> Vec<f64> {
        self.game.parameter.grid(self.evaluation.grid_points)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let mut game = self.game.clone();
        game.seed = 0;
        game.validate()?;
        self.train.validate()?;
        self.fpl_train().validate()?;
        self.vpl_spec().validate()?;
        self.fpl_spec().validate()?;
        if self.num_games == 0 {
            return bad("num_games must be >= 1".into());
        }
        if self.evaluation.grid_points == 0 {
            return bad("evaluation.grid_points must be >= 1".into());
        }
        if !(self.budget.initial_fraction > 0.0 && self.budget.initial_fraction <= 1.0) {
            return bad(format!("budget.initial_fraction must lie in (0, 1], got {}", self.budget.initial_fraction));
        }
        let instances = self.grid().len();
        if let (Some(total), Some(per)) = (self.budget.total, self.budget.per_instance) {
            if (per * instances).abs_diff(total) > instances {
                return bad(format!(
                    "budget.total {total} inconsistent with per_instance {per} x {instances} instances"
                ));
            }
        }
        if let Some(s) = &self.sampling {
            s.validate()?;
        }
        match self.kind {
            ExperimentKind::FplVsVpl | ExperimentKind::ScalabilityEr => {
                if self.budget.per_instance.is_none() && self.budget.total.is_none() {
                    return bad("fpl_vs_vpl needs budget.per_instance or budget.total".into());
                }
            }
            ExperimentKind::Refinement => {
                if self.budget.total.is_none() {
                    return bad("refinement needs budget.total".into());
                }
                if self.refinement.iterations == 0 {
                    return bad("refinement.iterations must be >= 1".into());
                }
            }
            ExperimentKind::ScalabilityPlayers => {
                if !matches!(self.game.parameter, ParameterRange::PlayerCount { .. }) {
                    return bad("scalability_players needs a player-count family".into());
                }
                if self.scalability.widths.is_empty() || self.scalability.widths.contains(&0) {
                    return bad("scalability.widths must be a non-empty list of positive widths".into());
                }
                if self.scalability.eval_step == 0 {
                    return bad("scalability.eval_step must be >= 1".into());
                }
                if self.budget.total.is_none() {
                    return bad("scalability_players needs budget.total (rows per model)".into());
                }
                let (lo, hi) = self.game.parameter.bounds();
                if let Some(w) = self.scalability.widths.iter().find(|w| **w as f64 > hi - lo) {
                    return bad(format!("width {w} exceeds the player range [{lo}, {hi}]"));
                }
            }
            ExperimentKind::Robustness | ExperimentKind::Sensitivity => {
                if !self.analysis.use_oracle && self.budget.total.is_none() && self.sampling.is_none() {
                    return bad("analysis experiments need budget.total or [sampling] unless use_oracle".into());
                }
            }
        }
        Ok(())
    }
}
