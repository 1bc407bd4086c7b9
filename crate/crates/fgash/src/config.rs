//! Run configuration: a TOML file with `[potential]`, `[packet]`, `[run]`,
//! `[grid]` and optional `[reference]`, `[output]`, `[study]` sections.

use std::path::{Path, PathBuf};

use fgash_core::initial_data::{GaussianWavePacket, DEFAULT_RESOLUTION};
use fgash_core::potentials::{BuiltinModel, DualCrossingParams};
use fgash_core::reconstruction::GridSpec;
use fgash_core::trajectory::{rate_at, PropagationParams, RateModel, DEFAULT_PROBABILITY_CAP};
use fgash_core::Point;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Trajectories per estimator batch.
pub const DEFAULT_BATCH_SIZE: usize = 256;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelTag {
    Simple,
    Dual,
    Extended,
}

impl ModelTag {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::Dual => "dual",
            Self::Extended => "extended",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub model: ModelTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling_width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steepness: Option<f64>,
}

impl PotentialConfig {
    pub fn of(model: ModelTag) -> Self {
        Self {
            model,
            depth: None,
            width: None,
            offset: None,
            amplitude: None,
            coupling_width: None,
            steepness: None,
        }
    }

    pub fn build(&self) -> BuiltinModel {
        match self.model {
            ModelTag::Simple => BuiltinModel::SimpleCrossing,
            ModelTag::Dual => {
                let d = DualCrossingParams::default();
                BuiltinModel::DualCrossing(DualCrossingParams {
                    depth: self.depth.unwrap_or(d.depth),
                    width: self.width.unwrap_or(d.width),
                    offset: self.offset.unwrap_or(d.offset),
                    amplitude: self.amplitude.unwrap_or(d.amplitude),
                    coupling_width: self.coupling_width.unwrap_or(d.coupling_width),
                })
            }
            ModelTag::Extended => match (self.steepness, BuiltinModel::extended_coupling()) {
                (Some(steepness), _) => BuiltinModel::ExtendedCoupling { steepness },
                (None, default) => default,
            },
        }
    }
}

/// `u0(x) = exp(-α(x - center)²) exp(i momentum (x - center)/ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub alpha: f64,
    pub center: f64,
    pub momentum: f64,
}

impl PacketConfig {
    pub fn build(&self) -> Result<GaussianWavePacket<1>, ConfigError> {
        GaussianWavePacket::new(self.alpha, Point::<1>::new(self.center), Point::<1>::new(self.momentum))
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

fn default_rate_model() -> String {
    RateModel::Standard.tag().to_owned()
}

fn default_cap() -> f64 {
    DEFAULT_PROBABILITY_CAP
}

fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}

fn default_batch() -> usize {
    DEFAULT_BATCH_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub final_time: f64,
    /// Defaults to `ε/10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub trajectories: u64,
    pub master_seed: u64,
    #[serde(default = "default_rate_model")]
    pub rate_model: String,
    #[serde(default = "default_cap")]
    pub probability_cap: f64,
    /// Amplitude-table points per phase-space axis.
    #[serde(default = "default_resolution")]
    pub phase_space_points: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    /// Defaults to `ε/32`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            dt: None,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<PathBuf>,
}

/// Sweep settings; each study uses the fields it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_trajectories: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_trajectories: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub potential: PotentialConfig,
    pub packet: PacketConfig,
    pub run: RunConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
}

impl SimulationConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let config: Self = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serialisable")
    }

    pub fn dt(&self) -> f64 {
        self.run.dt.unwrap_or(self.run.epsilon / 10.0)
    }

    pub fn reference_dt(&self) -> f64 {
        self.reference.dt.unwrap_or(self.run.epsilon / 32.0)
    }

    pub fn rate_model(&self) -> Result<RateModel, ConfigError> {
        RateModel::from_tag(&self.run.rate_model).ok_or_else(|| {
            ConfigError::Invalid(format!(
                "run.rate_model must be `standard` or `gap_modified`, got `{}`",
                self.run.rate_model
            ))
        })
    }

    pub fn propagation(&self) -> Result<PropagationParams, ConfigError> {
        Ok(PropagationParams {
            epsilon: self.run.epsilon,
            delta: self.run.delta,
            final_time: self.run.final_time,
            dt: self.dt(),
            rate_model: self.rate_model()?,
            probability_cap: self.run.probability_cap,
        })
    }

    pub fn grid_spec(&self) -> Result<GridSpec<1>, ConfigError> {
        GridSpec::new(self.grid.lower, self.grid.upper, self.grid.points)
            .map_err(|e| ConfigError::Invalid(format!("grid: {e}")))
    }

    /// Checks positivity, the hop-probability cap over the grid nodes and
    /// `Δx ≤ √ε/8`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        let r = &self.run;
        if !(r.epsilon > 0.0 && r.epsilon.is_finite()) {
            return invalid(format!("run.epsilon must be positive, got {}", r.epsilon));
        }
        if !(r.delta >= 0.0 && r.delta.is_finite()) {
            return invalid(format!("run.delta must be nonnegative, got {}", r.delta));
        }
        if !(r.final_time > 0.0 && r.final_time.is_finite()) {
            return invalid(format!("run.final_time must be positive, got {}", r.final_time));
        }
        if !(self.dt() > 0.0 && self.dt().is_finite()) {
            return invalid(format!("run.dt must be positive, got {}", self.dt()));
        }
        if !(self.reference_dt() > 0.0) {
            return invalid(format!("reference.dt must be positive, got {}", self.reference_dt()));
        }
        if r.trajectories == 0 {
            return invalid("run.trajectories must be at least 1".into());
        }
        if r.phase_space_points == 0 || r.batch_size == 0 {
            return invalid("run.phase_space_points and run.batch_size must be positive".into());
        }
        if !(r.probability_cap > 0.0 && r.probability_cap <= 1.0) {
            return invalid(format!(
                "run.probability_cap must lie in (0, 1], got {}",
                r.probability_cap
            ));
        }
        self.packet.build()?;
        let model = self.rate_model()?;
        let spec = self.grid_spec()?;
        let max_dx = r.epsilon.sqrt() / 8.0;
        if spec.spacing() > max_dx {
            return invalid(format!(
                "grid spacing {} exceeds √ε/8 = {max_dx}; use at least {} points",
                spec.spacing(),
                ((spec.upper - spec.lower) / max_dx).ceil()
            ));
        }
        if self.reference.enabled && !spec.points.is_power_of_two() {
            return invalid(format!(
                "grid.points = {} must be a power of two for the reference solver",
                spec.points
            ));
        }
        let potential = self.potential.build();
        let dt = self.dt();
        let worst = (0..spec.len())
            .map(|j| rate_at(&potential, &spec.node(j), r.delta, r.epsilon, model))
            .fold(0.0, f64::max);
        if worst * dt > r.probability_cap {
            return invalid(format!(
                "hop probability {} per step exceeds the cap {} (max rate {worst}); \
                 use dt ≤ {}",
                worst * dt,
                r.probability_cap,
                r.probability_cap / worst
            ));
        }
        Ok(())
    }
}
