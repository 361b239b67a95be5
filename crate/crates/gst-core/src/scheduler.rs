//! Training regimes under a shared gradient-evaluation budget.
//!
//! Every regime compiles to a list of stages, each a task pool plus an
//! exact evaluation budget; one engine runs them all. That construction
//! makes budget fairness structural: the stage budgets of any protocol sum
//! to the total budget, and a run consumes exactly that many stochastic
//! gradient evaluations. Instrumentation (exact full gradient and per-task
//! losses) is never charged.

use crate::error::{Error, Result};
use crate::grouping::GroupPartition;
use crate::heterogeneity::HeterogeneityEstimate;
use crate::objective::{global_objective, Objective};
use crate::rng::{stream, SeededRng};
use crate::textio::{csv_record, format_f64};
use crate::vector::ParamVector;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;

/// Loss level beyond which a run is declared divergent and truncated.
pub const DIVERGENCE_LOSS_LIMIT: f64 = 1e12;

/// Default number of instrumented rounds per run.
pub const DEFAULT_INSTRUMENT_POINTS: usize = 200;

/// Learning-rate schedule, evaluated against budget progress in `[0, 1)` so
/// that schedules with different step granularity see the same profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant(f64),
    /// Linear warmup from `peak/30` to `peak` over `warmup_frac` of the
    /// budget, then cosine decay to `min`.
    WarmupCosine { peak: f64, min: f64, warmup_frac: f64 },
}

impl LrSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        match *self {
            LrSchedule::Constant(lr) => lr,
            LrSchedule::WarmupCosine { peak, min, warmup_frac } => {
                let p = progress.clamp(0.0, 1.0);
                if warmup_frac > 0.0 && p < warmup_frac {
                    let start = peak / 30.0;
                    start + (peak - start) * (p / warmup_frac)
                } else {
                    let span = (1.0 - warmup_frac).max(f64::EPSILON);
                    let q = ((p - warmup_frac) / span).clamp(0.0, 1.0);
                    min + 0.5 * (peak - min) * (1.0 + (std::f64::consts::PI * q).cos())
                }
            }
        }
    }
}

/// Step granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    /// One stochastic gradient per step, from a uniformly sampled pool task.
    /// Cost: 1 evaluation per step.
    SingleDraw,
    /// One draw per active-pool task per step, averaged. Cost: pool size
    /// evaluations per step; mirrors mix-all minibatching.
    PerTaskAverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: LrSchedule,
    pub batch: BatchMode,
    pub instrument_points: usize,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            lr: LrSchedule::Constant(0.05),
            batch: BatchMode::SingleDraw,
            instrument_points: DEFAULT_INSTRUMENT_POINTS,
        }
    }
}

/// One scheduling stage: a task pool trained for an exact number of
/// stochastic-gradient evaluations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub pool: Vec<usize>,
    pub evals: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Parallel,
    Sequential,
    StrictCycleGst,
    ProgressiveGst,
    ReverseProgressiveGst,
    Independent,
}

impl ScheduleKind {
    pub fn default_label(&self) -> &'static str {
        match self {
            ScheduleKind::Parallel => "parallel",
            ScheduleKind::Sequential => "sequential",
            ScheduleKind::StrictCycleGst => "gst-strict-cycle",
            ScheduleKind::ProgressiveGst => "gst-progressive",
            ScheduleKind::ReverseProgressiveGst => "gst-reverse-progressive",
            ScheduleKind::Independent => "independent",
        }
    }

    pub fn requires_partition(&self) -> bool {
        matches!(
            self,
            ScheduleKind::StrictCycleGst
                | ScheduleKind::ProgressiveGst
                | ScheduleKind::ReverseProgressiveGst
        )
    }
}

/// How the group scheduling order is chosen before a GST run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OrderPolicy {
    #[default]
    GivenOrder,
    /// Ascending intra-group zeta (ties: ascending beta, then group index).
    StabilityFirst,
    /// Reverse of the given order.
    Reverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleProtocol {
    pub kind: ScheduleKind,
    /// Trace label; defaults to the kind's name.
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub order_policy: OrderPolicy,
    /// Strict-cycle: number of passes over the groups.
    #[serde(default = "default_num_cycles")]
    pub num_cycles: usize,
    /// Sequential: task visiting order (defaults to task-index order).
    #[serde(default)]
    pub task_order: Option<Vec<usize>>,
}

fn default_num_cycles() -> usize {
    5
}

impl ScheduleProtocol {
    pub fn new(kind: ScheduleKind) -> Self {
        Self { kind, label: None, order_policy: OrderPolicy::GivenOrder, num_cycles: 5, task_order: None }
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.kind.default_label().to_string())
    }
}

/// One instrumented round of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub round: u64,
    pub grads_consumed: u64,
    pub grad_norm_sq: f64,
    pub c_of_r: f64,
    pub per_task_loss: Vec<f64>,
    pub theta_hash: String,
}

/// Full record of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub schedule: String,
    pub seed: u64,
    pub budget: u64,
    pub rounds: Vec<Round>,
    /// Cumulative evaluations at each stage boundary (exclusive of the
    /// final stage end).
    pub stage_switches: Vec<u64>,
    pub diverged: bool,
    pub final_theta: ParamVector,
}

impl RunTrace {
    /// C(R) at a gradient budget: the running-min squared gradient norm at
    /// the last instrumented round not beyond `at_budget`.
    pub fn c_at_budget(&self, at_budget: u64) -> Result<f64> {
        let covered = self.rounds.last().map(|r| r.grads_consumed).unwrap_or(0);
        if covered < at_budget {
            return Err(Error::TraceTooShort { requested: at_budget, available: covered });
        }
        let mut c = f64::INFINITY;
        for r in &self.rounds {
            if r.grads_consumed > at_budget {
                break;
            }
            c = r.c_of_r;
        }
        Ok(c)
    }

    /// CSV rendering: one row per instrumented round.
    pub fn to_csv(&self) -> String {
        let m = self.rounds.first().map(|r| r.per_task_loss.len()).unwrap_or(0);
        let mut out = String::new();
        let mut header =
            vec!["round".to_string(), "grads_consumed".into(), "grad_norm_sq".into(), "c_of_r".into()];
        header.extend((0..m).map(|i| format!("loss_task_{i}")));
        out.push_str(&csv_record(&header));
        for r in &self.rounds {
            let mut fields = vec![
                r.round.to_string(),
                r.grads_consumed.to_string(),
                format_f64(r.grad_norm_sq),
                format_f64(r.c_of_r),
            ];
            fields.extend(r.per_task_loss.iter().map(|&x| format_f64(x)));
            out.push_str(&csv_record(&fields));
        }
        out
    }

    /// Mean loss over one group's member tasks at a given round.
    pub fn group_loss(&self, round: &Round, members: &[usize]) -> f64 {
        members.iter().map(|&m| round.per_task_loss[m]).sum::<f64>() / members.len() as f64
    }
}

fn theta_hash(theta: &ParamVector) -> String {
    let digest = Sha256::digest(theta.le_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Runs an explicit stage schedule. This is the engine behind every regime;
/// it is public so that degenerate schedules (round-robin, custom pools)
/// can be driven directly in tests and experiments.
///
/// Rounds are recorded at the start, at every instrumentation interval
/// (`budget / instrument_points` evaluations), at every stage boundary, and
/// at the end. Gradient sampling and gradient noise draw from separate
/// derived rng streams, so regimes that differ only in pool bookkeeping
/// stay bitwise comparable.
pub fn run_stage_schedule<T: Objective>(
    tasks: &[T],
    stages: &[Stage],
    theta0: &ParamVector,
    config: &SgdConfig,
    label: &str,
    rng: &SeededRng,
) -> Result<RunTrace> {
    let m = tasks.len();
    if m == 0 {
        return Err(Error::EmptyTasks);
    }
    for stage in stages {
        if stage.pool.is_empty() {
            return Err(Error::EmptyGroup);
        }
        for &t in &stage.pool {
            if t >= m {
                return Err(Error::TaskIndexOutOfRange { index: t, count: m });
            }
        }
    }
    let budget: u64 = stages.iter().map(|s| s.evals).sum();
    let interval = if config.instrument_points > 0 {
        (budget / config.instrument_points as u64).max(1)
    } else {
        u64::MAX
    };

    let mut noise_rng = rng.derive(stream::RUN, 0);
    let mut sample_rng = rng.derive(stream::RUN, 1);

    let mut theta = theta0.clone();
    let mut consumed: u64 = 0;
    let mut rounds: Vec<Round> = Vec::new();
    let mut stage_switches = Vec::new();
    let mut c_running = f64::INFINITY;
    let mut diverged = false;

    let instrument = |theta: &ParamVector,
                          consumed: u64,
                          rounds: &mut Vec<Round>,
                          c_running: &mut f64|
     -> Result<bool> {
        if let Some(last) = rounds.last() {
            if last.grads_consumed == consumed {
                return Ok(false);
            }
        }
        let per_task_loss: Vec<f64> = tasks.iter().map(|t| t.eval(theta)).collect();
        let blown = !theta.is_finite()
            || per_task_loss.iter().any(|l| !l.is_finite() || *l > DIVERGENCE_LOSS_LIMIT);
        let grad_norm_sq = if blown {
            f64::INFINITY
        } else {
            let (_, g) = global_objective(tasks, theta)?;
            g.norm_sq()
        };
        if grad_norm_sq < *c_running {
            *c_running = grad_norm_sq;
        }
        rounds.push(Round {
            round: rounds.len() as u64,
            grads_consumed: consumed,
            grad_norm_sq,
            c_of_r: *c_running,
            per_task_loss,
            theta_hash: theta_hash(theta),
        });
        Ok(blown)
    };

    instrument(&theta, consumed, &mut rounds, &mut c_running)?;

    'stages: for (stage_idx, stage) in stages.iter().enumerate() {
        let mut remaining = stage.evals;
        while remaining > 0 {
            let cost = match config.batch {
                BatchMode::SingleDraw => 1,
                BatchMode::PerTaskAverage => (stage.pool.len() as u64).min(remaining),
            };
            let lr = config.lr.at(consumed as f64 / budget.max(1) as f64);
            let grad = match config.batch {
                BatchMode::SingleDraw => {
                    let idx = if stage.pool.len() > 1 {
                        stage.pool[sample_rng.random_range(0..stage.pool.len())]
                    } else {
                        stage.pool[0]
                    };
                    tasks[idx].stoch_grad(&theta, &mut noise_rng)
                }
                BatchMode::PerTaskAverage => {
                    // A truncated final batch averages the first `cost` pool
                    // members so the stage budget is consumed exactly.
                    let mut acc = ParamVector::zeros(theta.dim());
                    for &t in stage.pool.iter().take(cost as usize) {
                        acc.axpy(1.0, &tasks[t].stoch_grad(&theta, &mut noise_rng));
                    }
                    acc.scaled(1.0 / cost as f64)
                }
            };
            theta.axpy(-lr, &grad);
            let crossed_interval = (consumed / interval) != ((consumed + cost) / interval);
            consumed += cost;
            remaining -= cost;

            if !theta.is_finite() {
                instrument(&theta, consumed, &mut rounds, &mut c_running)?;
                diverged = true;
                break 'stages;
            }
            if crossed_interval || remaining == 0 {
                let blown = instrument(&theta, consumed, &mut rounds, &mut c_running)?;
                if blown {
                    diverged = true;
                    break 'stages;
                }
            }
        }
        if stage_idx + 1 < stages.len() {
            stage_switches.push(consumed);
        }
    }

    instrument(&theta, consumed, &mut rounds, &mut c_running)?;
    Ok(RunTrace {
        schedule: label.to_string(),
        seed: rng.seed(),
        budget,
        rounds,
        stage_switches,
        diverged,
        final_theta: theta,
    })
}

/// Splits `budget` into `n` near-equal parts, remainder to the earliest.
fn split_budget(budget: u64, n: usize) -> Vec<u64> {
    let base = budget / n as u64;
    let rem = budget % n as u64;
    (0..n as u64).map(|i| base + u64::from(i < rem)).collect()
}

/// Parallel mix-all: every step draws from the full task pool.
pub fn run_parallel<T: Objective>(
    tasks: &[T],
    theta0: &ParamVector,
    config: &SgdConfig,
    budget: u64,
    rng: &SeededRng,
) -> Result<RunTrace> {
    let stages = vec![Stage { pool: (0..tasks.len()).collect(), evals: budget }];
    run_stage_schedule(tasks, &stages, theta0, config, ScheduleKind::Parallel.default_label(), rng)
}

/// Strict sequential: tasks one at a time in `order`, equal budget shares
/// (remainder to the earliest), parameters carried across.
pub fn run_sequential<T: Objective>(
    tasks: &[T],
    theta0: &ParamVector,
    config: &SgdConfig,
    budget: u64,
    order: &[usize],
    rng: &SeededRng,
) -> Result<RunTrace> {
    let m = tasks.len();
    let mut seen = vec![false; m];
    if order.len() != m {
        return Err(Error::Structural {
            context: "sequential order".into(),
            expected: format!("permutation of 0..{m}"),
            got: format!("{} entries", order.len()),
        });
    }
    for &t in order {
        if t >= m || seen[t] {
            return Err(Error::Structural {
                context: "sequential order".into(),
                expected: format!("permutation of 0..{m}"),
                got: format!("{order:?}"),
            });
        }
        seen[t] = true;
    }
    let shares = split_budget(budget, m);
    let stages: Vec<Stage> = order
        .iter()
        .zip(shares)
        .map(|(&t, evals)| Stage { pool: vec![t], evals })
        .collect();
    run_stage_schedule(tasks, &stages, theta0, config, ScheduleKind::Sequential.default_label(), rng)
}

/// Grouped training variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GstMode {
    /// Cycle through groups, one group trained per interval; the interval is
    /// `budget / (K * num_cycles)` evaluations.
    StrictCycle { num_cycles: usize },
    /// Stage k trains on the union of the first k groups; stage budgets are
    /// proportional to the cumulative pool size.
    Progressive,
    /// Progressive with the group order reversed.
    Reverse,
}

/// Builds the stage list for a GST run; exposed for budget-accounting tests.
pub fn gst_stages(
    partition: &GroupPartition,
    budget: u64,
    mode: GstMode,
) -> Result<Vec<Stage>> {
    let order = partition.order();
    let k = partition.k();
    match mode {
        GstMode::StrictCycle { num_cycles } => {
            if num_cycles == 0 {
                return Err(Error::Structural {
                    context: "num_cycles".into(),
                    expected: ">= 1".into(),
                    got: "0".into(),
                });
            }
            let interval = (budget / (k as u64 * num_cycles as u64)).max(1);
            let mut stages = Vec::new();
            let mut remaining = budget;
            'cycles: loop {
                for &g in order {
                    if remaining == 0 {
                        break 'cycles;
                    }
                    let evals = interval.min(remaining);
                    stages.push(Stage { pool: partition.members(g), evals });
                    remaining -= evals;
                }
            }
            Ok(stages)
        }
        GstMode::Progressive | GstMode::Reverse => {
            let effective: Vec<usize> = match mode {
                GstMode::Reverse => order.iter().rev().copied().collect(),
                _ => order.to_vec(),
            };
            let mut pools: Vec<Vec<usize>> = Vec::with_capacity(k);
            let mut cumulative: Vec<u64> = Vec::with_capacity(k);
            let mut pool: Vec<usize> = Vec::new();
            for &g in &effective {
                pool.extend(partition.members(g));
                pool.sort_unstable();
                pools.push(pool.clone());
                cumulative.push(pool.len() as u64);
            }
            let total: u64 = cumulative.iter().sum();
            let mut budgets: Vec<u64> =
                cumulative.iter().map(|&c| budget * c / total).collect();
            let assigned: u64 = budgets.iter().sum();
            let mut leftover = budget - assigned;
            for b in budgets.iter_mut() {
                if leftover == 0 {
                    break;
                }
                *b += 1;
                leftover -= 1;
            }
            Ok(pools
                .into_iter()
                .zip(budgets)
                .map(|(pool, evals)| Stage { pool, evals })
                .collect())
        }
    }
}

/// Grouped sequential training in one of the three modes.
pub fn run_gst<T: Objective>(
    tasks: &[T],
    partition: &GroupPartition,
    theta0: &ParamVector,
    config: &SgdConfig,
    budget: u64,
    mode: GstMode,
    rng: &SeededRng,
) -> Result<RunTrace> {
    if partition.num_tasks() != tasks.len() {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} tasks, family has {}",
            partition.num_tasks(),
            tasks.len()
        )));
    }
    let label = match mode {
        GstMode::StrictCycle { .. } => ScheduleKind::StrictCycleGst.default_label(),
        GstMode::Progressive => ScheduleKind::ProgressiveGst.default_label(),
        GstMode::Reverse => ScheduleKind::ReverseProgressiveGst.default_label(),
    };
    let stages = gst_stages(partition, budget, mode)?;
    run_stage_schedule(tasks, &stages, theta0, config, label, rng)
}

/// One isolated run per task from the shared initialization, each with an
/// equal share of the budget and the rng stream derived from its task index.
pub fn run_independent<T: Objective>(
    tasks: &[T],
    theta0: &ParamVector,
    config: &SgdConfig,
    budget: u64,
    rng: &SeededRng,
) -> Result<Vec<RunTrace>> {
    let m = tasks.len();
    if m == 0 {
        return Err(Error::EmptyTasks);
    }
    let shares = split_budget(budget, m);
    (0..m)
        .map(|t| {
            let task_rng = SeededRng::new(rng.seed(), crate::rng::stream_id(stream::RUN, 16 + t as u64));
            let stages = vec![Stage { pool: vec![t], evals: shares[t] }];
            run_stage_schedule(
                tasks,
                &stages,
                theta0,
                config,
                &format!("independent-task-{t}"),
                &task_rng,
            )
        })
        .collect()
}

/// Reorders groups by ascending intra-group zeta (ties by ascending beta,
/// then group index): consistent signals first, volatile groups last.
pub fn stability_first_order(
    partition: &GroupPartition,
    est: &HeterogeneityEstimate,
) -> Result<GroupPartition> {
    if est.per_group.len() != partition.k() {
        return Err(Error::Structural {
            context: "stability_first_order".into(),
            expected: format!("estimate with {} groups", partition.k()),
            got: format!("{}", est.per_group.len()),
        });
    }
    let mut order: Vec<usize> = partition.order().to_vec();
    order.sort_by(|&a, &b| {
        let fa = &est.per_group[a];
        let fb = &est.per_group[b];
        fa.zeta_sq
            .total_cmp(&fb.zeta_sq)
            .then(fa.beta_sq.total_cmp(&fb.beta_sq))
            .then(a.cmp(&b))
    });
    partition.with_order(order)
}

/// Runs one protocol against a task family. GST kinds require a partition;
/// the stability-first order policy additionally requires a heterogeneity
/// estimate. Returns one trace, or one per task for `Independent`.
#[allow(clippy::too_many_arguments)]
pub fn run_protocol<T: Objective>(
    tasks: &[T],
    protocol: &ScheduleProtocol,
    partition: Option<&GroupPartition>,
    est: Option<&HeterogeneityEstimate>,
    theta0: &ParamVector,
    config: &SgdConfig,
    budget: u64,
    rng: &SeededRng,
) -> Result<Vec<RunTrace>> {
    let relabel = |mut traces: Vec<RunTrace>| -> Vec<RunTrace> {
        if let Some(label) = &protocol.label {
            if traces.len() == 1 {
                traces[0].schedule = label.clone();
            } else {
                for (i, t) in traces.iter_mut().enumerate() {
                    t.schedule = format!("{label}-{i}");
                }
            }
        }
        traces
    };

    let ordered_partition = |p: &GroupPartition| -> Result<GroupPartition> {
        match protocol.order_policy {
            OrderPolicy::GivenOrder => Ok(p.clone()),
            OrderPolicy::Reverse => Ok(p.reversed_order()),
            OrderPolicy::StabilityFirst => {
                let est = est.ok_or_else(|| Error::Structural {
                    context: "order_policy".into(),
                    expected: "heterogeneity estimate for stability-first".into(),
                    got: "none".into(),
                })?;
                stability_first_order(p, est)
            }
        }
    };

    match protocol.kind {
        ScheduleKind::Parallel => {
            Ok(relabel(vec![run_parallel(tasks, theta0, config, budget, rng)?]))
        }
        ScheduleKind::Sequential => {
            let order: Vec<usize> = protocol
                .task_order
                .clone()
                .unwrap_or_else(|| (0..tasks.len()).collect());
            Ok(relabel(vec![run_sequential(tasks, theta0, config, budget, &order, rng)?]))
        }
        ScheduleKind::Independent => {
            Ok(relabel(run_independent(tasks, theta0, config, budget, rng)?))
        }
        kind => {
            let partition = partition.ok_or_else(|| Error::Structural {
                context: "protocol".into(),
                expected: format!("partition for {}", kind.default_label()),
                got: "none".into(),
            })?;
            let partition = ordered_partition(partition)?;
            let mode = match kind {
                ScheduleKind::StrictCycleGst => {
                    GstMode::StrictCycle { num_cycles: protocol.num_cycles }
                }
                ScheduleKind::ProgressiveGst => GstMode::Progressive,
                ScheduleKind::ReverseProgressiveGst => GstMode::Reverse,
                _ => unreachable!(),
            };
            Ok(relabel(vec![run_gst(tasks, &partition, theta0, config, budget, mode, rng)?]))
        }
    }
}

/// Per-seed C(R) values and fractional ranks, plus cross-seed medians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRanking {
    pub at_budget: u64,
    pub schedules: Vec<String>,
    pub per_seed: Vec<SeedRanking>,
    /// Median fractional rank per schedule, aligned with `schedules`.
    pub median_rank: Vec<f64>,
    /// Median C(R) per schedule, aligned with `schedules`.
    pub median_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRanking {
    pub seed: u64,
    /// C(R) per schedule, aligned with the parent `schedules` vector.
    pub c_values: Vec<f64>,
    /// Fractional ranks (ties share the average rank).
    pub ranks: Vec<f64>,
}

fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn median_of(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Ranks schedules by C(R) at a common gradient budget.
///
/// Traces are grouped by seed; every seed must carry the same schedule set,
/// and every trace must cover `at_budget`. Reports per-seed fractional ranks
/// and per-schedule medians of both rank and C value.
pub fn compare_convergence(traces: &[RunTrace], at_budget: u64) -> Result<ConvergenceRanking> {
    if traces.is_empty() {
        return Err(Error::EmptyTasks);
    }
    let mut by_seed: BTreeMap<u64, BTreeMap<String, f64>> = BTreeMap::new();
    for t in traces {
        let c = t.c_at_budget(at_budget)?;
        let seed_map = by_seed.entry(t.seed).or_default();
        if seed_map.insert(t.schedule.clone(), c).is_some() {
            return Err(Error::Structural {
                context: "compare_convergence".into(),
                expected: "one trace per (seed, schedule)".into(),
                got: format!("duplicate {} for seed {}", t.schedule, t.seed),
            });
        }
    }
    let schedules: Vec<String> =
        by_seed.values().next().expect("non-empty").keys().cloned().collect();
    for (seed, seed_map) in &by_seed {
        let keys: Vec<String> = seed_map.keys().cloned().collect();
        if keys != schedules {
            return Err(Error::Structural {
                context: "compare_convergence".into(),
                expected: format!("schedules {schedules:?} for every seed"),
                got: format!("{keys:?} for seed {seed}"),
            });
        }
    }

    let mut per_seed = Vec::with_capacity(by_seed.len());
    for (&seed, seed_map) in &by_seed {
        let c_values: Vec<f64> = schedules.iter().map(|s| seed_map[s]).collect();
        let ranks = fractional_ranks(&c_values);
        per_seed.push(SeedRanking { seed, c_values, ranks });
    }
    let median_rank: Vec<f64> = (0..schedules.len())
        .map(|i| {
            let mut vals: Vec<f64> = per_seed.iter().map(|s| s.ranks[i]).collect();
            median_of(&mut vals)
        })
        .collect();
    let median_c: Vec<f64> = (0..schedules.len())
        .map(|i| {
            let mut vals: Vec<f64> = per_seed.iter().map(|s| s.c_values[i]).collect();
            median_of(&mut vals)
        })
        .collect();
    Ok(ConvergenceRanking { at_budget, schedules, per_seed, median_rank, median_c })
}

/// Largest rise of one group's mean loss after any stage switch, relative
/// to its level at the switch round, up to the next switch (or run end).
/// This is the forgetting-spike statistic.
pub fn max_switch_loss_rise(
    trace: &RunTrace,
    partition: &GroupPartition,
    group: usize,
) -> Result<f64> {
    if group >= partition.k() {
        return Err(Error::InvalidGroupCount { k: group, m: partition.k() });
    }
    let members = partition.members(group);
    let mut boundaries = trace.stage_switches.clone();
    boundaries.push(u64::MAX);
    let mut worst: f64 = 0.0;
    for (b, &switch_at) in trace.stage_switches.iter().enumerate() {
        let baseline = trace
            .rounds
            .iter()
            .rev()
            .find(|r| r.grads_consumed <= switch_at)
            .map(|r| trace.group_loss(r, &members));
        let Some(baseline) = baseline else { continue };
        let upper = boundaries[b + 1];
        for r in &trace.rounds {
            if r.grads_consumed > switch_at && r.grads_consumed <= upper {
                worst = worst.max(trace.group_loss(r, &members) - baseline);
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{generate_quadratic_family, HeterogeneityRecipe, QuadraticFamily};

    fn family(
        m: usize,
        clusters: usize,
        intra: f64,
        inter: f64,
        sigma: f64,
        seed: u64,
    ) -> QuadraticFamily {
        generate_quadratic_family(&HeterogeneityRecipe {
            num_tasks: m,
            dim: 4,
            num_latent_clusters: clusters,
            intra_cluster_spread: intra,
            inter_cluster_spread: inter,
            curvature_jitter: 0.0,
            noise_sigma: sigma,
            seed,
            ..HeterogeneityRecipe::default()
        })
        .unwrap()
    }

    fn cfg(lr: f64) -> SgdConfig {
        SgdConfig { lr: LrSchedule::Constant(lr), ..SgdConfig::default() }
    }

    #[test]
    fn zero_budget_records_only_initial_point() {
        let fam = family(3, 1, 0.1, 1.0, 0.0, 1);
        let theta0 = ParamVector::new(vec![1.0; 4]);
        let rng = SeededRng::new(5, 0);
        let t = run_parallel(fam.tasks(), &theta0, &cfg(0.1), 0, &rng).unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert_eq!(t.rounds[0].grads_consumed, 0);
        assert!(t.stage_switches.is_empty());
    }

    #[test]
    fn single_task_parallel_equals_sequential_bitwise() {
        let fam = family(1, 1, 0.0, 1.0, 0.4, 2);
        let theta0 = ParamVector::new(vec![2.0; 4]);
        let rng = SeededRng::new(7, 0);
        let a = run_parallel(fam.tasks(), &theta0, &cfg(0.05), 300, &rng).unwrap();
        let b = run_sequential(fam.tasks(), &theta0, &cfg(0.05), 300, &[0], &rng).unwrap();
        assert_eq!(a.rounds, b.rounds);
        assert_eq!(a.final_theta, b.final_theta);
    }

    #[test]
    fn deterministic_under_seed() {
        let fam = family(4, 2, 0.1, 3.0, 0.5, 3);
        let theta0 = ParamVector::new(vec![1.0; 4]);
        let rng = SeededRng::new(11, 0);
        let a = run_parallel(fam.tasks(), &theta0, &cfg(0.05), 500, &rng).unwrap();
        let b = run_parallel(fam.tasks(), &theta0, &cfg(0.05), 500, &rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noiseless_identical_tasks_follow_gd_recursion() {
        // sigma = 0, identical tasks: the trajectory is the exact gradient
        // descent recursion, reproduced here coordinate-wise through the
        // curvature matrix.
        let fam = family(3, 1, 0.0, 0.0, 0.0, 4);
        let d = 4;
        let theta0 = ParamVector::new(vec![1.5; d]);
        let rng = SeededRng::new(13, 0);
        let lr = 0.1;
        let budget = 40;
        let trace = run_parallel(fam.tasks(), &theta0, &cfg(lr), budget, &rng).unwrap();

        let h = fam.tasks()[0].curvature().clone();
        let star = fam.tasks()[0].minimizer().clone();
        let mut theta = theta0.clone();
        for _ in 0..budget {
            let g = ParamVector::from_array(h.dot((&theta - &star).as_array()));
            theta.axpy(-lr, &g);
        }
        let got = trace.final_theta.to_vec();
        let want = theta.to_vec();
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn sequential_composes_per_task_recursions() {
        let fam = family(2, 2, 0.0, 2.0, 0.0, 5);
        let theta0 = ParamVector::zeros(4);
        let rng = SeededRng::new(17, 0);
        let lr = 0.08;
        let budget = 60;
        let trace =
            run_sequential(fam.tasks(), &theta0, &cfg(lr), budget, &[0, 1], &rng).unwrap();

        let mut theta = theta0.clone();
        for task in [&fam.tasks()[0], &fam.tasks()[1]] {
            let h = task.curvature();
            let star = task.minimizer();
            for _ in 0..budget / 2 {
                let g = ParamVector::from_array(h.dot((&theta - star).as_array()));
                theta.axpy(-lr, &g);
            }
        }
        for (a, b) in trace.final_theta.to_vec().iter().zip(theta.to_vec()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert_eq!(trace.stage_switches, vec![30]);
    }

    #[test]
    fn order_and_reverse_order_differ_on_heterogeneous_tasks() {
        let fam = family(2, 2, 0.0, 4.0, 0.0, 6);
        let theta0 = ParamVector::zeros(4);
        let rng = SeededRng::new(19, 0);
        let fwd =
            run_sequential(fam.tasks(), &theta0, &cfg(0.1), 80, &[0, 1], &rng).unwrap();
        let rev =
            run_sequential(fam.tasks(), &theta0, &cfg(0.1), 80, &[1, 0], &rng).unwrap();
        let fwd_losses = &fwd.rounds.last().unwrap().per_task_loss;
        let rev_losses = &rev.rounds.last().unwrap().per_task_loss;
        assert!(
            (fwd_losses[0] - rev_losses[0]).abs() > 1e-6,
            "forgetting asymmetry missing: {fwd_losses:?} vs {rev_losses:?}"
        );
    }

    #[test]
    fn gst_single_group_equals_parallel() {
        let fam = family(4, 2, 0.1, 2.0, 0.3, 7);
        let theta0 = ParamVector::new(vec![0.5; 4]);
        let rng = SeededRng::new(23, 0);
        let partition = GroupPartition::single_group(4).unwrap();
        for mode in [GstMode::StrictCycle { num_cycles: 5 }, GstMode::Progressive, GstMode::Reverse]
        {
            let g = run_gst(fam.tasks(), &partition, &theta0, &cfg(0.05), 400, mode, &rng)
                .unwrap();
            let p = run_parallel(fam.tasks(), &theta0, &cfg(0.05), 400, &rng).unwrap();
            assert_eq!(g.rounds, p.rounds);
        }
    }

    #[test]
    fn strict_cycle_singletons_with_unit_interval_is_round_robin() {
        let fam = family(3, 3, 0.0, 2.0, 0.0, 8);
        let theta0 = ParamVector::zeros(4);
        let rng = SeededRng::new(29, 0);
        let partition = GroupPartition::singletons(3).unwrap();
        let budget = 12;
        // interval = budget / (K * cycles) = 1 evaluation per group visit.
        let got = run_gst(
            fam.tasks(),
            &partition,
            &theta0,
            &cfg(0.1),
            budget,
            GstMode::StrictCycle { num_cycles: (budget / 3) as usize },
            &rng,
        )
        .unwrap();
        let stages: Vec<Stage> = (0..budget)
            .map(|i| Stage { pool: vec![(i % 3) as usize], evals: 1 })
            .collect();
        let want =
            run_stage_schedule(fam.tasks(), &stages, &theta0, &cfg(0.1), "round-robin", &rng)
                .unwrap();
        assert_eq!(got.final_theta, want.final_theta);
        assert_eq!(
            got.rounds.iter().map(|r| r.grad_norm_sq).collect::<Vec<_>>(),
            want.rounds.iter().map(|r| r.grad_norm_sq).collect::<Vec<_>>()
        );
    }

    #[test]
    fn budget_fairness_across_all_regimes() {
        let fam = family(5, 2, 0.1, 2.0, 0.2, 9);
        let theta0 = ParamVector::new(vec![0.3; 4]);
        let rng = SeededRng::new(31, 0);
        let partition = GroupPartition::from_assignments(&[0, 1, 0, 1, 0]).unwrap();
        let budget = 317; // awkward on purpose
        for config in [
            cfg(0.05),
            SgdConfig { batch: BatchMode::PerTaskAverage, ..cfg(0.05) },
        ] {
            let traces = vec![
                run_parallel(fam.tasks(), &theta0, &config, budget, &rng).unwrap(),
                run_sequential(fam.tasks(), &theta0, &config, budget, &[0, 1, 2, 3, 4], &rng)
                    .unwrap(),
                run_gst(
                    fam.tasks(),
                    &partition,
                    &theta0,
                    &config,
                    budget,
                    GstMode::StrictCycle { num_cycles: 5 },
                    &rng,
                )
                .unwrap(),
                run_gst(fam.tasks(), &partition, &theta0, &config, budget, GstMode::Progressive, &rng)
                    .unwrap(),
                run_gst(fam.tasks(), &partition, &theta0, &config, budget, GstMode::Reverse, &rng)
                    .unwrap(),
            ];
            for t in &traces {
                assert_eq!(
                    t.rounds.last().unwrap().grads_consumed,
                    budget,
                    "{} consumed wrong budget",
                    t.schedule
                );
            }
            let independents =
                run_independent(fam.tasks(), &theta0, &config, budget, &rng).unwrap();
            let total: u64 = independents
                .iter()
                .map(|t| t.rounds.last().unwrap().grads_consumed)
                .sum();
            assert_eq!(total, budget);
        }
    }

    #[test]
    fn c_of_r_is_nonincreasing() {
        let fam = family(4, 2, 0.2, 3.0, 0.6, 10);
        let theta0 = ParamVector::new(vec![2.0; 4]);
        let rng = SeededRng::new(37, 0);
        let t = run_parallel(fam.tasks(), &theta0, &cfg(0.08), 600, &rng).unwrap();
        for w in t.rounds.windows(2) {
            assert!(w[1].c_of_r <= w[0].c_of_r);
            assert!(w[1].grads_consumed > w[0].grads_consumed);
        }
    }

    #[test]
    fn zero_heterogeneity_all_regimes_reach_optimum() {
        let fam = family(4, 1, 0.0, 0.0, 0.0, 11);
        let star = fam.tasks()[0].minimizer().clone();
        let theta0 = &star + &ParamVector::new(vec![3.0; 4]);
        let rng = SeededRng::new(41, 0);
        let partition = GroupPartition::from_assignments(&[0, 0, 1, 1]).unwrap();
        let budget = 3000;
        let config = cfg(0.5); // lambda_max = 1.0, safe step size
        let traces = vec![
            run_parallel(fam.tasks(), &theta0, &config, budget, &rng).unwrap(),
            run_sequential(fam.tasks(), &theta0, &config, budget, &[0, 1, 2, 3], &rng).unwrap(),
            run_gst(
                fam.tasks(),
                &partition,
                &theta0,
                &config,
                budget,
                GstMode::StrictCycle { num_cycles: 5 },
                &rng,
            )
            .unwrap(),
            run_gst(fam.tasks(), &partition, &theta0, &config, budget, GstMode::Progressive, &rng)
                .unwrap(),
        ];
        for t in traces {
            let final_grad = t.rounds.last().unwrap().grad_norm_sq;
            assert!(final_grad <= 1e-16, "{}: ||grad||^2 = {final_grad}", t.schedule);
        }
    }

    #[test]
    fn divergent_run_is_truncated_and_flagged() {
        let fam = family(2, 1, 0.0, 1.0, 0.0, 12);
        let theta0 = ParamVector::new(vec![10.0; 4]);
        let rng = SeededRng::new(43, 0);
        // lr far above 2/L.
        let t = run_parallel(fam.tasks(), &theta0, &cfg(50.0), 5000, &rng).unwrap();
        assert!(t.diverged);
        assert!(t.rounds.last().unwrap().grads_consumed < 5000);
    }

    #[test]
    fn stability_first_sorts_by_zeta() {
        use crate::heterogeneity::estimate_group_constants;
        // Three singleton-pair groups with increasing spread.
        let fam = family(6, 3, 0.0, 0.0, 0.0, 13);
        let partition = GroupPartition::from_assignments(&[0, 0, 1, 1, 2, 2]).unwrap();
        // Hand-build an estimate by reusing the machinery on shifted tasks:
        // identical tasks give zero constants, so craft the order via a
        // custom estimate instead.
        let points = vec![ParamVector::zeros(4)];
        let mut est = estimate_group_constants(fam.tasks(), &partition, &points).unwrap();
        est.per_group[0].zeta_sq = 5.0;
        est.per_group[1].zeta_sq = 0.1;
        est.per_group[2].zeta_sq = 2.0;
        let ordered = stability_first_order(&partition, &est).unwrap();
        assert_eq!(ordered.order(), &[1, 2, 0]);

        // All-equal zetas: order unchanged.
        est.per_group[0].zeta_sq = 1.0;
        est.per_group[1].zeta_sq = 1.0;
        est.per_group[2].zeta_sq = 1.0;
        est.per_group[0].beta_sq = 0.0;
        est.per_group[1].beta_sq = 0.0;
        est.per_group[2].beta_sq = 0.0;
        let unchanged = stability_first_order(&partition, &est).unwrap();
        assert_eq!(unchanged.order(), &[0, 1, 2]);

        // K = 1: identity.
        let single = GroupPartition::single_group(6).unwrap();
        let est1 = estimate_group_constants(fam.tasks(), &single, &points).unwrap();
        assert_eq!(stability_first_order(&single, &est1).unwrap().order(), &[0]);
    }

    #[test]
    fn ranking_trivial_cases() {
        let fam = family(2, 1, 0.1, 1.0, 0.0, 14);
        let theta0 = ParamVector::new(vec![1.0; 4]);
        let rng = SeededRng::new(47, 0);
        let t = run_parallel(fam.tasks(), &theta0, &cfg(0.05), 100, &rng).unwrap();

        let ranking = compare_convergence(std::slice::from_ref(&t), 100).unwrap();
        assert_eq!(ranking.median_rank, vec![1.0]);

        // Identical C values tie.
        let mut t2 = t.clone();
        t2.schedule = "other".into();
        let ranking = compare_convergence(&[t.clone(), t2], 100).unwrap();
        assert_eq!(ranking.per_seed[0].ranks, vec![1.5, 1.5]);

        // Budget beyond the trace is structural.
        assert!(matches!(
            compare_convergence(&[t], 101),
            Err(Error::TraceTooShort { .. })
        ));
    }

    #[test]
    fn csv_has_expected_shape() {
        let fam = family(2, 1, 0.1, 1.0, 0.0, 15);
        let theta0 = ParamVector::new(vec![1.0; 4]);
        let rng = SeededRng::new(53, 0);
        let t = run_parallel(fam.tasks(), &theta0, &cfg(0.05), 50, &rng).unwrap();
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "round,grads_consumed,grad_norm_sq,c_of_r,loss_task_0,loss_task_1"
        );
        assert_eq!(csv.lines().count(), t.rounds.len() + 1);
        assert!(!csv.contains('\r'));
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]

        /// Any stage schedule consumes exactly its declared budget and
        /// records a strictly increasing, nonincreasing-C round sequence.
        #[test]
        fn stage_schedules_consume_exact_budgets(
            budgets in proptest::collection::vec(1u64..40, 1..6),
            batch_mode in proptest::prelude::prop_oneof![
                proptest::prelude::Just(BatchMode::SingleDraw),
                proptest::prelude::Just(BatchMode::PerTaskAverage),
            ],
            seed in 0u64..1000,
        ) {
            let fam = family(3, 1, 0.2, 1.0, 0.3, 99);
            let stages: Vec<Stage> = budgets
                .iter()
                .enumerate()
                .map(|(i, &evals)| Stage { pool: vec![i % 3, (i + 1) % 3], evals })
                .collect();
            let total: u64 = budgets.iter().sum();
            let config = SgdConfig { batch: batch_mode, ..cfg(0.05) };
            let rng = SeededRng::new(seed, 0);
            let theta0 = ParamVector::new(vec![0.5; 4]);
            let trace =
                run_stage_schedule(fam.tasks(), &stages, &theta0, &config, "prop", &rng).unwrap();
            proptest::prop_assert_eq!(trace.rounds.last().unwrap().grads_consumed, total);
            for w in trace.rounds.windows(2) {
                proptest::prop_assert!(w[1].grads_consumed > w[0].grads_consumed);
                proptest::prop_assert!(w[1].c_of_r <= w[0].c_of_r);
            }
        }
    }

    #[test]
    fn warmup_cosine_shape() {
        let lr = LrSchedule::WarmupCosine { peak: 3e-2, min: 1e-2, warmup_frac: 0.1 };
        assert!(lr.at(0.0) < 3e-2 / 10.0);
        assert!((lr.at(0.1) - 3e-2).abs() <= 1e-12);
        assert!((lr.at(1.0) - 1e-2).abs() <= 1e-12);
        let mid = lr.at(0.55);
        assert!(mid < 3e-2 && mid > 1e-2);
    }
}
