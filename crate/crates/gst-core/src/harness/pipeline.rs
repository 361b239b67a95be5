//! Config-driven experiment pipeline with resumable stages:
//! generate -> probe -> cluster -> train -> compare -> verify -> plot.
//!
//! Every stage persists its artifact under the output directory and reuses
//! artifacts already on disk, so any stage can be re-run independently.
//! All file writes funnel through one helper on the calling thread; the
//! train stage fans (seed, protocol) runs out to a worker pool and collects
//! results before writing.

use crate::affinity::{
    probe_affinity_matrix, symmetrize, transferability_matrix, AffinityMatrix, ProbeConfig,
};
use crate::error::{Error, Result};
use crate::grouping::{partition_quality, spectral_cluster, GroupPartition, PartitionQuality, SpectralConfig};
use crate::heterogeneity::{
    check_lemma2_bounds, estimate_group_constants, HeterogeneityEstimate, Lemma2Report,
};
use crate::rng::{stream, stream_id, SeededRng};
use crate::scheduler::{compare_convergence, run_protocol, ConvergenceRanking, RunTrace, SgdConfig};
use crate::tasks::{default_probe_points, generate_quadratic_family, TaskFamily};
use crate::textio::csv_record;
use crate::vector::ParamVector;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::config::{AffinityMetric, ExperimentConfig, FamilyConfig, InitCenter};
use super::svg::{line_chart, series_csv, ChartSpec, Series};
use super::verify::{run_verify, VerifyReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PipelineStage {
    GenTasks,
    Probe,
    Cluster,
    Train,
    Compare,
    Verify,
    Plot,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 7] = [
        PipelineStage::GenTasks,
        PipelineStage::Probe,
        PipelineStage::Cluster,
        PipelineStage::Train,
        PipelineStage::Compare,
        PipelineStage::Verify,
        PipelineStage::Plot,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PipelineStage::GenTasks => "gen-tasks",
            PipelineStage::Probe => "probe",
            PipelineStage::Cluster => "cluster",
            PipelineStage::Train => "train",
            PipelineStage::Compare => "compare",
            PipelineStage::Verify => "verify",
            PipelineStage::Plot => "plot",
        }
    }
}

impl FromStr for PipelineStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineStage::ALL
            .iter()
            .find(|stage| stage.name() == s)
            .copied()
            .ok_or_else(|| Error::Config {
                path: "stage".into(),
                message: format!(
                    "unknown stage `{s}` (expected one of {})",
                    PipelineStage::ALL.map(|st| st.name()).join(", ")
                ),
            })
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyFile {
    format_version: u32,
    config_hash: String,
    seed: u64,
    family: TaskFamily,
}

#[derive(Serialize, Deserialize)]
struct AffinityFile {
    config_hash: String,
    seed: u64,
    matrix: AffinityMatrix,
}

#[derive(Serialize, Deserialize)]
struct PartitionFile {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    partition: GroupPartition,
}

#[derive(Serialize, Deserialize)]
struct TraceFile {
    config_hash: String,
    seed: u64,
    trace: RunTrace,
}

/// Final cross-schedule comparison: rankings at the common budget plus the
/// grouping diagnostics and heterogeneity constants the runs used. Every
/// curve value is traceable to a trace file listed in `trace_files`.
/// Hash of a value's canonical JSON form; used to fingerprint report inputs.
pub fn content_hash<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(value).expect("value serializes");
    Sha256::digest(json.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_hash: String,
    pub family_hash: String,
    pub partition_hash: String,
    pub tool_version: String,
    pub seeds: Vec<u64>,
    pub ranking: ConvergenceRanking,
    pub partition: GroupPartition,
    pub partition_quality: PartitionQuality,
    pub heterogeneity: HeterogeneityEstimate,
    pub group_bounds: Lemma2Report,
    /// Final per-task losses of the independent runs (single-task
    /// reference), when an independent schedule was configured: one entry
    /// per seed, each a per-task vector.
    pub independent_reference: BTreeMap<u64, Vec<f64>>,
    pub trace_files: Vec<String>,
}

pub struct Pipeline {
    config: ExperimentConfig,
    out_dir: PathBuf,
    hash: String,
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

impl Pipeline {
    pub fn new(config: ExperimentConfig, out_dir: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { config, out_dir: out_dir.into(), hash })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Runs everything up to and including `stage`, reusing artifacts
    /// already on disk.
    pub fn run_to(&self, stage: PipelineStage) -> Result<()> {
        self.write_config()?;
        match stage {
            PipelineStage::GenTasks => {
                self.family()?;
            }
            PipelineStage::Probe => {
                self.affinity()?;
            }
            PipelineStage::Cluster => {
                self.partition()?;
            }
            PipelineStage::Train => {
                self.traces()?;
            }
            PipelineStage::Compare => {
                self.compare()?;
            }
            PipelineStage::Verify => {
                let report = self.verify()?;
                if !report.passed {
                    return Err(Error::Verification(
                        "one or more verification suites reported violations (see verify.json)"
                            .into(),
                    ));
                }
            }
            PipelineStage::Plot => {
                self.plot()?;
            }
        }
        Ok(())
    }

    fn write_config(&self) -> Result<()> {
        let path = self.path("config.json");
        if !path.exists() {
            write_json(&path, &self.config)?;
        }
        Ok(())
    }

    /// The family artifact (gen-tasks stage).
    pub fn family(&self) -> Result<TaskFamily> {
        let path = self.path("family.json");
        if path.exists() {
            let file: FamilyFile = read_json(&path)?;
            return Ok(file.family);
        }
        let family = match &self.config.family {
            FamilyConfig::Quadratic(recipe) => {
                TaskFamily::Quadratic(generate_quadratic_family(recipe)?)
            }
            FamilyConfig::Nonlinear(recipe) => TaskFamily::Nonlinear { recipe: recipe.clone() },
        };
        write_json(
            &path,
            &FamilyFile {
                format_version: crate::tasks::FAMILY_FORMAT_VERSION,
                config_hash: self.hash.clone(),
                seed: self.config.family.seed(),
                family: family.clone(),
            },
        )?;
        Ok(family)
    }

    /// Shared initialization for probes (derived from the family seed).
    fn probe_init(&self, family: &TaskFamily) -> ParamVector {
        init_point(
            &family.init_center(),
            self.config.init.radius,
            self.config.init.center,
            self.config.family.seed(),
        )
    }

    /// The affinity artifact (probe stage).
    pub fn affinity(&self) -> Result<AffinityMatrix> {
        let json_path = self.path("affinity.json");
        if json_path.exists() {
            let file: AffinityFile = read_json(&json_path)?;
            return Ok(file.matrix);
        }
        let family = self.family()?;
        let tasks = family.tasks()?;
        let init = self.probe_init(&family);
        let seed = self.config.family.seed();
        let rng = SeededRng::new(seed, 0);
        let matrix = match self.config.probe.metric {
            AffinityMetric::GradientDistance => {
                let probe = ProbeConfig {
                    init_point: init,
                    probe_steps: self.config.probe.steps,
                    probe_lr: self.config.probe.lr,
                    accumulate: self.config.probe.accumulate,
                    oracle: self.config.probe.oracle,
                };
                probe_affinity_matrix(&tasks, &probe, &rng)?
            }
            AffinityMetric::Transferability { train_budget, lr } => {
                transferability_matrix(&tasks, &init, train_budget, lr, &rng)?
            }
        };
        matrix.validate()?;
        write_json(&json_path, &AffinityFile { config_hash: self.hash.clone(), seed, matrix: matrix.clone() })?;
        let mut csv = csv_record(&[format!("# config_hash={},seed={}", self.hash, seed)]);
        csv.push_str(&matrix.to_csv());
        write_file(&self.path("affinity.csv"), csv.as_bytes())?;
        Ok(matrix)
    }

    /// The partition artifact (cluster stage).
    pub fn partition(&self) -> Result<GroupPartition> {
        let path = self.path("partition.json");
        if path.exists() {
            let file: PartitionFile = read_json(&path)?;
            return Ok(file.partition);
        }
        let matrix = self.affinity()?;
        let matrix = if matrix.symmetric { matrix } else { symmetrize(&matrix) };
        let spectral = SpectralConfig {
            k: self.config.spectral.k,
            kernel_bandwidth: self.config.spectral.bandwidth,
            laplacian: crate::grouping::Laplacian::Normalized,
            kmeans_restarts: self.config.spectral.kmeans_restarts,
            seed: self.config.family.seed(),
        };
        let partition = spectral_cluster(&matrix, &spectral)?;
        write_json(
            &path,
            &PartitionFile {
                config_hash: self.hash.clone(),
                seed: self.config.family.seed(),
                partition: partition.clone(),
            },
        )?;
        Ok(partition)
    }

    /// Heterogeneity estimate over the family's default probe points,
    /// computed fresh (cheap) rather than persisted.
    pub fn heterogeneity(&self) -> Result<HeterogeneityEstimate> {
        let family = self.family()?;
        let tasks = family.tasks()?;
        let partition = self.partition()?;
        let points = probe_points_for(&family, self.config.family.seed());
        estimate_group_constants(&tasks, &partition, &points)
    }

    fn trace_file_stem(&self, label: &str, seed: u64) -> String {
        format!("{label}__seed{seed}")
    }

    /// All training traces (train stage). Runs fan out over a worker pool;
    /// results are collected and written sequentially.
    pub fn traces(&self) -> Result<Vec<RunTrace>> {
        let family = self.family()?;
        let tasks = family.tasks()?;
        let partition = self.partition()?;
        let est = self.heterogeneity()?;
        let sgd = SgdConfig {
            lr: self.config.sgd.lr,
            batch: self.config.sgd.batch,
            instrument_points: self.config.sgd.instrument_points,
        };

        let mut jobs: Vec<(u64, usize)> = Vec::new();
        for &seed in &self.config.seeds {
            for slot in 0..self.config.schedules.len() {
                jobs.push((seed, slot));
            }
        }

        // Reuse existing trace files where present.
        let mut cached: BTreeMap<(u64, usize), Vec<RunTrace>> = BTreeMap::new();
        let mut missing: Vec<(u64, usize)> = Vec::new();
        for &(seed, slot) in &jobs {
            let label = self.config.schedules[slot].label();
            let path =
                self.path(&format!("traces/{}.json", self.trace_file_stem(&label, seed)));
            if path.exists() {
                let file: TraceFile = read_json(&path)?;
                cached.insert((seed, slot), vec![file.trace]);
            } else {
                missing.push((seed, slot));
            }
        }

        let computed: Vec<((u64, usize), Result<Vec<RunTrace>>)> = missing
            .par_iter()
            .map(|&(seed, slot)| {
                let protocol = &self.config.schedules[slot];
                let theta0 = init_point(
                    &family.init_center(),
                    self.config.init.radius,
                    self.config.init.center,
                    seed,
                );
                let rng = SeededRng::new(seed, stream_id(stream::RUN, 64 + slot as u64));
                let result = run_protocol(
                    &tasks,
                    protocol,
                    Some(&partition),
                    Some(&est),
                    &theta0,
                    &sgd,
                    self.config.budget,
                    &rng,
                );
                ((seed, slot), result)
            })
            .collect();
        for (key, result) in computed {
            let traces = result?;
            for trace in &traces {
                self.write_trace(trace)?;
            }
            cached.insert(key, traces);
        }

        let mut all = Vec::new();
        for &(seed, slot) in &jobs {
            all.extend(cached.remove(&(seed, slot)).into_iter().flatten());
        }
        Ok(all)
    }

    fn write_trace(&self, trace: &RunTrace) -> Result<()> {
        let stem = self.trace_file_stem(&trace.schedule, trace.seed);
        write_json(
            &self.path(&format!("traces/{stem}.json")),
            &TraceFile { config_hash: self.hash.clone(), seed: trace.seed, trace: trace.clone() },
        )?;
        let mut csv =
            csv_record(&[format!("# config_hash={},seed={}", self.hash, trace.seed)]);
        csv.push_str(&trace.to_csv());
        write_file(&self.path(&format!("traces/{stem}.csv")), csv.as_bytes())
    }

    /// The comparison report (compare stage).
    pub fn compare(&self) -> Result<ComparisonReport> {
        let traces = self.traces()?;
        let family = self.family()?;
        let partition = self.partition()?;
        let matrix = self.affinity()?;
        let matrix = if matrix.symmetric { matrix } else { symmetrize(&matrix) };
        let est = self.heterogeneity()?;
        let group_bounds = check_lemma2_bounds(&est, &partition)?;

        // Independent runs optimize one task each; they enter the report as
        // the single-task reference, not the global ranking.
        let (independent, ranked): (Vec<&RunTrace>, Vec<&RunTrace>) =
            traces.iter().partition(|t| t.schedule.starts_with("independent"));
        let ranking = compare_convergence(
            &ranked.iter().map(|t| (*t).clone()).collect::<Vec<_>>(),
            self.config.budget,
        )?;
        let mut independent_reference: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for trace in independent {
            let losses = &trace.rounds.last().expect("non-empty trace").per_task_loss;
            let task: usize = trace
                .schedule
                .rsplit('-')
                .next()
                .and_then(|s| s.parse().ok())
                .unwrap_or(0);
            let entry = independent_reference
                .entry(trace.seed)
                .or_insert_with(|| vec![f64::NAN; losses.len()]);
            entry[task] = losses[task];
        }

        let trace_files: Vec<String> = traces
            .iter()
            .map(|t| format!("traces/{}.csv", self.trace_file_stem(&t.schedule, t.seed)))
            .collect();
        let report = ComparisonReport {
            config_hash: self.hash.clone(),
            family_hash: content_hash(&family),
            partition_hash: content_hash(&partition),
            tool_version: TOOL_VERSION.to_string(),
            seeds: self.config.seeds.clone(),
            ranking,
            partition: partition.clone(),
            partition_quality: partition_quality(&matrix, &partition)?,
            heterogeneity: est,
            group_bounds,
            independent_reference,
            trace_files,
        };
        write_json(&self.path("report.json"), &report)?;
        Ok(report)
    }

    /// The verification report (verify stage).
    pub fn verify(&self) -> Result<VerifyReport> {
        let report = run_verify(&self.config.verify)?;
        write_json(&self.path("verify.json"), &report)?;
        Ok(report)
    }

    /// Static charts (plot stage): C(R) versus consumed budget for every
    /// ranked trace, and per-group losses for the first seed.
    pub fn plot(&self) -> Result<Vec<PathBuf>> {
        let traces = self.traces()?;
        let partition = self.partition()?;
        let mut written = Vec::new();

        let c_series: Vec<Series> = traces
            .iter()
            .filter(|t| !t.schedule.starts_with("independent"))
            .map(|t| Series {
                label: format!("{} (seed {})", t.schedule, t.seed),
                points: t
                    .rounds
                    .iter()
                    .map(|r| (r.grads_consumed as f64, r.c_of_r))
                    .collect(),
            })
            .collect();
        let c_spec = ChartSpec {
            title: "C(R): running min squared gradient norm".into(),
            x_label: "stochastic gradient evaluations".into(),
            y_label: "log10 C(R)".into(),
            log_y: true,
        };
        match line_chart(&c_spec, &c_series) {
            Some(svg) => {
                let path = self.path("plots/c_of_r.svg");
                write_file(&path, svg.as_bytes())?;
                write_file(&self.path("plots/c_of_r.csv"), series_csv(&c_series).as_bytes())?;
                written.push(path);
            }
            None => eprintln!("plot: no ranked traces to draw, skipping c_of_r.svg"),
        }

        let first_seed = self.config.seeds[0];
        let partition_ref = &partition;
        let group_series: Vec<Series> = traces
            .iter()
            .filter(|t| t.seed == first_seed && !t.schedule.starts_with("independent"))
            .flat_map(|t| {
                (0..partition_ref.k()).map(move |g| {
                    let members = partition_ref.members(g);
                    Series {
                        label: format!("{} group {g}", t.schedule),
                        points: t
                            .rounds
                            .iter()
                            .map(|r| (r.grads_consumed as f64, t.group_loss(r, &members)))
                            .collect(),
                    }
                })
            })
            .collect();
        let g_spec = ChartSpec {
            title: format!("Per-group mean loss (seed {first_seed})"),
            x_label: "stochastic gradient evaluations".into(),
            y_label: "group mean loss".into(),
            log_y: false,
        };
        match line_chart(&g_spec, &group_series) {
            Some(svg) => {
                let path = self.path("plots/group_loss.svg");
                write_file(&path, svg.as_bytes())?;
                write_file(
                    &self.path("plots/group_loss.csv"),
                    series_csv(&group_series).as_bytes(),
                )?;
                written.push(path);
            }
            None => eprintln!("plot: no traces for seed {first_seed}, skipping group_loss.svg"),
        }
        Ok(written)
    }
}

/// Deterministic initialization: a seeded random direction at `radius` from
/// the chosen center.
pub fn init_point(
    center: &ParamVector,
    radius: f64,
    center_kind: InitCenter,
    seed: u64,
) -> ParamVector {
    let dim = center.dim();
    let base = match center_kind {
        InitCenter::Origin => ParamVector::zeros(dim),
        InitCenter::MeanMinimizer => center.clone(),
    };
    if radius == 0.0 {
        return base;
    }
    let mut rng = SeededRng::new(seed, stream_id(stream::RUN, 0xFFFF));
    let normal = StandardNormal;
    let mut dir: Vec<f64> = (0..dim)
        .map(|_| {
            let z: f64 = normal.sample(&mut rng);
            z
        })
        .collect();
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for x in dir.iter_mut() {
        *x = *x / norm * radius;
    }
    &base + &ParamVector::new(dir)
}

/// Default heterogeneity probe points for a family of either kind.
pub fn probe_points_for(family: &TaskFamily, seed: u64) -> Vec<ParamVector> {
    match family {
        TaskFamily::Quadratic(f) => default_probe_points(f, 16, seed),
        TaskFamily::Nonlinear { .. } => {
            let dim = family.param_dim();
            let normal = StandardNormal;
            let mut rng = SeededRng::new(seed, stream_id(stream::PROBE_POINTS, 1));
            let mut points: Vec<ParamVector> = (0..16)
                .map(|_| {
                    ParamVector::new(
                        (0..dim)
                            .map(|_| {
                                let z: f64 = normal.sample(&mut rng);
                                0.7 * z
                            })
                            .collect(),
                    )
                })
                .collect();
            points.push(ParamVector::zeros(dim));
            points
        }
    }
}
