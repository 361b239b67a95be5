//! Experiment configuration: one JSON document that fully determines a
//! pipeline run. Re-running the same config reproduces every output byte.

use crate::affinity::{Accumulate, ProbeOracle};
use crate::error::{Error, Result};
use crate::grouping::Bandwidth;
use crate::scheduler::{BatchMode, LrSchedule, ScheduleKind, ScheduleProtocol};
use crate::tasks::{HeterogeneityRecipe, NonlinearRecipe};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyConfig {
    Quadratic(HeterogeneityRecipe),
    Nonlinear(NonlinearRecipe),
}

impl FamilyConfig {
    pub fn seed(&self) -> u64 {
        match self {
            FamilyConfig::Quadratic(r) => r.seed,
            FamilyConfig::Nonlinear(r) => r.seed,
        }
    }

    pub fn num_tasks(&self) -> usize {
        match self {
            FamilyConfig::Quadratic(r) => r.num_tasks,
            FamilyConfig::Nonlinear(r) => r.num_tasks,
        }
    }
}

/// Where runs and probes start from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitCenter {
    Origin,
    MeanMinimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub center: InitCenter,
    /// Distance of the seeded random initialization from the center.
    pub radius: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self { center: InitCenter::MeanMinimizer, radius: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "metric", rename_all = "snake_case")]
pub enum AffinityMetric {
    GradientDistance,
    Transferability { train_budget: u64, lr: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSettings {
    pub steps: usize,
    pub lr: f64,
    #[serde(default = "default_accumulate")]
    pub accumulate: Accumulate,
    #[serde(default = "default_oracle")]
    pub oracle: ProbeOracle,
    #[serde(flatten)]
    pub metric: AffinityMetric,
}

fn default_accumulate() -> Accumulate {
    Accumulate::MeanGradients
}

fn default_oracle() -> ProbeOracle {
    ProbeOracle::Auto
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSettings {
    pub k: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: Bandwidth,
    #[serde(default = "default_restarts")]
    pub kmeans_restarts: usize,
}

fn default_bandwidth() -> Bandwidth {
    Bandwidth::MedianDistance
}

fn default_restarts() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdSettings {
    pub lr: LrSchedule,
    #[serde(default = "default_batch")]
    pub batch: BatchMode,
    #[serde(default = "default_instrument_points")]
    pub instrument_points: usize,
}

fn default_batch() -> BatchMode {
    BatchMode::SingleDraw
}

fn default_instrument_points() -> usize {
    crate::scheduler::DEFAULT_INSTRUMENT_POINTS
}

/// Which verification suites `verify` runs, and at what size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySettings {
    #[serde(default = "default_100")]
    pub decomposition_instances: usize,
    #[serde(default = "default_100")]
    pub sum_identity_instances: usize,
    #[serde(default = "default_50")]
    pub group_bound_instances: usize,
    #[serde(default = "default_20")]
    pub variance_bound_instances: usize,
    #[serde(default = "default_draws")]
    pub variance_draws: usize,
    #[serde(default = "default_verify_seed")]
    pub seed: u64,
}

fn default_100() -> usize {
    100
}
fn default_50() -> usize {
    50
}
fn default_20() -> usize {
    20
}
fn default_draws() -> usize {
    10_000
}
fn default_verify_seed() -> u64 {
    7
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            decomposition_instances: 100,
            sum_identity_instances: 100,
            group_bound_instances: 50,
            variance_bound_instances: 20,
            variance_draws: 10_000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub format_version: u32,
    pub family: FamilyConfig,
    #[serde(default)]
    pub init: InitConfig,
    pub probe: ProbeSettings,
    pub spectral: SpectralSettings,
    pub schedules: Vec<ScheduleProtocol>,
    pub budget: u64,
    pub sgd: SgdSettings,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub verify: VerifySettings,
}

impl ExperimentConfig {
    /// Parses and validates a config document, mapping failures to the
    /// offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config {
            path: format!("line {}, column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, message: String| Error::Config { path: path.into(), message };
        if self.format_version != CONFIG_FORMAT_VERSION {
            return Err(field(
                "format_version",
                format!("unsupported version {} (expected {CONFIG_FORMAT_VERSION})", self.format_version),
            ));
        }
        match &self.family {
            FamilyConfig::Quadratic(recipe) => recipe
                .validate()
                .map_err(|e| field("family", e.to_string()))?,
            FamilyConfig::Nonlinear(_) => {}
        }
        if !(self.init.radius >= 0.0) {
            return Err(field("init.radius", format!(">= 0 required, got {}", self.init.radius)));
        }
        if self.probe.steps < 1 {
            return Err(field("probe.steps", ">= 1 required".into()));
        }
        if !(self.probe.lr > 0.0) {
            return Err(field("probe.lr", format!("> 0 required, got {}", self.probe.lr)));
        }
        let m = self.family.num_tasks();
        if self.spectral.k < 1 || self.spectral.k > m {
            return Err(field(
                "spectral.k",
                format!("1 <= K <= {m} required, got {}", self.spectral.k),
            ));
        }
        if self.spectral.kmeans_restarts < 1 {
            return Err(field("spectral.kmeans_restarts", ">= 1 required".into()));
        }
        if self.schedules.is_empty() {
            return Err(field("schedules", "at least one schedule required".into()));
        }
        for (i, s) in self.schedules.iter().enumerate() {
            if s.kind == ScheduleKind::StrictCycleGst && s.num_cycles == 0 {
                return Err(field(&format!("schedules[{i}].num_cycles"), ">= 1 required".into()));
            }
            if let Some(order) = &s.task_order {
                let mut seen = vec![false; m];
                if order.len() != m || order.iter().any(|&t| t >= m || std::mem::replace(&mut seen[t], true)) {
                    return Err(field(
                        &format!("schedules[{i}].task_order"),
                        format!("must be a permutation of 0..{m}"),
                    ));
                }
            }
        }
        let mut labels: Vec<String> = self.schedules.iter().map(|s| s.label()).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.schedules.len() {
            return Err(field("schedules", "labels must be unique (set `label` to disambiguate)".into()));
        }
        if self.budget < 1 {
            return Err(field("budget", ">= 1 required".into()));
        }
        if self.sgd.instrument_points < 1 {
            return Err(field("sgd.instrument_points", ">= 1 required".into()));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed required".into()));
        }
        Ok(())
    }

    /// Canonical JSON rendering (struct field order, no whitespace).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// A small ready-to-run example: a two-cluster quadratic family, probed
    /// and grouped, with all five comparable regimes plus independent
    /// reference runs over two seeds.
    pub fn demo() -> Self {
        ExperimentConfig {
            format_version: CONFIG_FORMAT_VERSION,
            family: FamilyConfig::Quadratic(HeterogeneityRecipe {
                num_tasks: 6,
                dim: 8,
                num_latent_clusters: 2,
                intra_cluster_spread: 0.05,
                inter_cluster_spread: 5.0,
                curvature_jitter: 0.0,
                noise_sigma: 0.5,
                lambda_min: 0.5,
                lambda_max: 1.0,
                seed: 17,
            }),
            init: InitConfig { center: InitCenter::MeanMinimizer, radius: 200.0 },
            probe: ProbeSettings {
                steps: 4,
                lr: 0.025,
                accumulate: Accumulate::MeanGradients,
                oracle: ProbeOracle::Auto,
                metric: AffinityMetric::GradientDistance,
            },
            spectral: SpectralSettings {
                k: 2,
                bandwidth: Bandwidth::MedianDistance,
                kmeans_restarts: 16,
            },
            schedules: vec![
                ScheduleProtocol::new(ScheduleKind::Parallel),
                ScheduleProtocol::new(ScheduleKind::Sequential),
                ScheduleProtocol::new(ScheduleKind::StrictCycleGst),
                ScheduleProtocol::new(ScheduleKind::ProgressiveGst),
                ScheduleProtocol::new(ScheduleKind::ReverseProgressiveGst),
                ScheduleProtocol::new(ScheduleKind::Independent),
            ],
            budget: 950,
            sgd: SgdSettings {
                lr: LrSchedule::Constant(0.05),
                batch: BatchMode::PerTaskAverage,
                instrument_points: 200,
            },
            seeds: vec![1, 2],
            verify: VerifySettings::default(),
        }
    }

    /// Hash identifying this configuration; embedded in every output file.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
