//! Pairwise dataset relationships: gradient distance and empirical
//! transferability, estimated by short probing runs from a common
//! initialization.

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::{stream, SeededRng};
use crate::textio::{csv_record, format_f64};
use crate::vector::ParamVector;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Parameter-norm threshold beyond which a probe run counts as divergent.
pub const PROBE_DIVERGENCE_LIMIT: f64 = 1e8;

/// Denominator regularizer for transferability ratios; synthetic objectives
/// can reach near-zero reference loss.
pub const TRANSFER_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AffinityKind {
    /// Squared distance between (accumulated) dataset gradients. Symmetric.
    GradientDistance,
    /// Relative cross-dataset loss gap. Asymmetric in general.
    Transferability,
}

/// Which gradient oracle produced a probe matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Exact,
    Stochastic,
    Mixed,
}

/// An M x M matrix of pairwise task relationships.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    pub values: Array2<f64>,
    pub kind: AffinityKind,
    pub symmetric: bool,
    pub oracle: OracleMode,
}

impl AffinityMatrix {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Checks the structural invariants for this matrix kind: zero diagonal
    /// always; symmetry and nonnegativity for gradient distances.
    pub fn validate(&self) -> Result<()> {
        let n = self.values.nrows();
        if self.values.ncols() != n {
            return Err(Error::NotSquare { rows: n, cols: self.values.ncols() });
        }
        for i in 0..n {
            if self.values[[i, i]] != 0.0 {
                return Err(Error::Structural {
                    context: format!("affinity diagonal entry ({i},{i})"),
                    expected: "0".into(),
                    got: format!("{}", self.values[[i, i]]),
                });
            }
        }
        if self.kind == AffinityKind::GradientDistance {
            for i in 0..n {
                for j in 0..n {
                    if self.values[[i, j]] < 0.0 {
                        return Err(Error::Structural {
                            context: format!("gradient distance ({i},{j})"),
                            expected: ">= 0".into(),
                            got: format!("{}", self.values[[i, j]]),
                        });
                    }
                    if self.values[[i, j]] != self.values[[j, i]] {
                        return Err(Error::Structural {
                            context: format!("gradient distance symmetry ({i},{j})"),
                            expected: format!("{}", self.values[[j, i]]),
                            got: format!("{}", self.values[[i, j]]),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// CSV rendering: header with task ids, one row per task.
    pub fn to_csv(&self) -> String {
        let n = self.len();
        let mut out = String::new();
        let mut header = vec!["task".to_string()];
        header.extend((0..n).map(|j| format!("task_{j}")));
        out.push_str(&csv_record(&header));
        for i in 0..n {
            let mut row = vec![format!("task_{i}")];
            row.extend((0..n).map(|j| format_f64(self.values[[i, j]])));
            out.push_str(&csv_record(&row));
        }
        out
    }
}

/// Averages a matrix with its transpose; the standard reduction before
/// spectral clustering of an asymmetric transferability matrix.
pub fn symmetrize(a: &AffinityMatrix) -> AffinityMatrix {
    let n = a.len();
    let mut values = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            values[[i, j]] = 0.5 * (a.values[[i, j]] + a.values[[j, i]]);
        }
    }
    AffinityMatrix { values, kind: a.kind, symmetric: true, oracle: a.oracle }
}

/// Squared Euclidean distance between two exact task gradients at `theta`.
pub fn gradient_distance<T: Objective>(
    task_m: &T,
    task_n: &T,
    theta: &ParamVector,
) -> Result<f64> {
    if task_m.dim() != task_n.dim() {
        return Err(Error::DimMismatch { expected: task_m.dim(), got: task_n.dim() });
    }
    theta.check_dim(task_m.dim())?;
    let gm = task_m.grad(theta).validated("gradient_distance lhs")?;
    let gn = task_n.grad(theta).validated("gradient_distance rhs")?;
    Ok((&gm - &gn).norm_sq())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulate {
    SumGradients,
    MeanGradients,
}

/// Oracle selection for probing. `Auto` respects each task's
/// [`Objective::prefers_exact_probe`] preference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOracle {
    Auto,
    Exact,
    Stochastic,
}

/// Controls the probing procedure: a fixed number of SGD steps from a
/// common initialization, with per-step gradients accumulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub init_point: ParamVector,
    pub probe_steps: usize,
    pub probe_lr: f64,
    pub accumulate: Accumulate,
    pub oracle: ProbeOracle,
}

impl ProbeConfig {
    pub fn new(init_point: ParamVector, probe_steps: usize, probe_lr: f64) -> Self {
        Self {
            init_point,
            probe_steps,
            probe_lr,
            accumulate: Accumulate::MeanGradients,
            oracle: ProbeOracle::Auto,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.probe_steps < 1 {
            return Err(Error::Structural {
                context: "probe_steps".into(),
                expected: ">= 1".into(),
                got: format!("{}", self.probe_steps),
            });
        }
        if !(self.probe_lr > 0.0) {
            return Err(Error::Structural {
                context: "probe_lr".into(),
                expected: "> 0".into(),
                got: format!("{}", self.probe_lr),
            });
        }
        Ok(())
    }
}

/// Runs the probing procedure for one task and returns its accumulated
/// gradient, or `None` if the probe diverged.
fn probe_task<T: Objective>(
    task: &T,
    config: &ProbeConfig,
    rng: &mut SeededRng,
) -> Result<Option<(ParamVector, bool)>> {
    let exact = match config.oracle {
        ProbeOracle::Exact => true,
        ProbeOracle::Stochastic => false,
        ProbeOracle::Auto => task.prefers_exact_probe(),
    };
    let mut theta = config.init_point.clone();
    let mut acc = ParamVector::zeros(theta.dim());
    for _ in 0..config.probe_steps {
        let g = if exact { task.grad(&theta) } else { task.stoch_grad(&theta, rng) };
        let g = g.validated(&format!("probe gradient of task {}", task.id()))?;
        acc.axpy(1.0, &g);
        theta.axpy(-config.probe_lr, &g);
        if theta.norm() > PROBE_DIVERGENCE_LIMIT {
            return Ok(None);
        }
    }
    if matches!(config.accumulate, Accumulate::MeanGradients) {
        acc = acc.scaled(1.0 / config.probe_steps as f64);
    }
    Ok(Some((acc, exact)))
}

/// Estimates the gradient-distance matrix: probes every task from the common
/// initialization and takes squared distances between accumulated gradients.
///
/// Per-task probes draw from derived rng streams (stream index = task id),
/// so the result is deterministic under the seed and independent of probe
/// execution order.
pub fn probe_affinity_matrix<T: Objective>(
    tasks: &[T],
    config: &ProbeConfig,
    rng: &SeededRng,
) -> Result<AffinityMatrix> {
    config.validate()?;
    let m = tasks.len();
    if m == 0 {
        return Err(Error::EmptyTasks);
    }
    for t in tasks {
        if t.dim() != config.init_point.dim() {
            return Err(Error::DimMismatch { expected: config.init_point.dim(), got: t.dim() });
        }
    }

    let mut accumulated = Vec::with_capacity(m);
    let mut divergent = Vec::new();
    let mut any_exact = false;
    let mut any_stochastic = false;
    for (idx, task) in tasks.iter().enumerate() {
        let mut task_rng = rng.derive(stream::PROBE, idx as u64);
        match probe_task(task, config, &mut task_rng)? {
            Some((acc, exact)) => {
                if exact {
                    any_exact = true;
                } else {
                    any_stochastic = true;
                }
                accumulated.push(acc);
            }
            None => {
                divergent.push(idx);
                accumulated.push(ParamVector::zeros(config.init_point.dim()));
            }
        }
    }
    if !divergent.is_empty() {
        return Err(Error::ProbeDiverged { tasks: divergent, limit: PROBE_DIVERGENCE_LIMIT });
    }

    let mut values = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in (i + 1)..m {
            let d = (&accumulated[i] - &accumulated[j]).norm_sq();
            values[[i, j]] = d;
            values[[j, i]] = d;
        }
    }
    let oracle = match (any_exact, any_stochastic) {
        (true, false) => OracleMode::Exact,
        (false, true) => OracleMode::Stochastic,
        _ => OracleMode::Mixed,
    };
    Ok(AffinityMatrix { values, kind: AffinityKind::GradientDistance, symmetric: true, oracle })
}

/// Both sides of the pairwise-distance sum identity, computed independently.
///
/// `lhs` sums `||∇F_m - ∇F_n||^2` over all ordered pairs `(m, n)`;
/// `rhs` is `M · Σ_m ||∇F_m - ∇F||^2`. Brute-force enumeration shows
/// `lhs = 2 · rhs`: the `M ·` convention matches unordered pairs `m < n`,
/// and the ordered-pair constant is `2M`. `ratio` is `lhs / rhs`
/// (`None` when both sides are zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumIdentityReport {
    pub lhs_ordered_pairs: f64,
    pub rhs_m_scaled: f64,
    pub ratio: Option<f64>,
}

pub fn sum_identity_check<T: Objective>(
    tasks: &[T],
    theta: &ParamVector,
) -> Result<SumIdentityReport> {
    if tasks.len() < 2 {
        return Err(Error::Structural {
            context: "sum_identity_check".into(),
            expected: "M >= 2".into(),
            got: format!("M = {}", tasks.len()),
        });
    }
    let m = tasks.len();
    let grads: Vec<ParamVector> = tasks
        .iter()
        .map(|t| t.grad(theta).validated("sum identity gradient"))
        .collect::<Result<_>>()?;

    // Left side: every ordered pair, by direct double loop.
    let mut lhs = 0.0;
    for a in 0..m {
        for b in 0..m {
            lhs += (&grads[a] - &grads[b]).norm_sq();
        }
    }

    // Right side: M times the deviation sum, with the mean gradient
    // accumulated in its own pass.
    let mut mean = ParamVector::zeros(theta.dim());
    for g in &grads {
        mean.axpy(1.0 / m as f64, g);
    }
    let mut deviation_sum = 0.0;
    for g in &grads {
        deviation_sum += (g - &mean).norm_sq();
    }
    let rhs = m as f64 * deviation_sum;

    if rhs == 0.0 && lhs != 0.0 {
        return Err(Error::NumericInconsistency(format!(
            "pairwise sum {lhs} nonzero while deviation sum is zero"
        )));
    }
    let ratio = if rhs == 0.0 { None } else { Some(lhs / rhs) };
    Ok(SumIdentityReport { lhs_ordered_pairs: lhs, rhs_m_scaled: rhs, ratio })
}

fn train_single<T: Objective>(
    task: &T,
    init: &ParamVector,
    steps: u64,
    lr: f64,
    rng: &mut SeededRng,
) -> Result<ParamVector> {
    let mut theta = init.clone();
    for _ in 0..steps {
        let g = task
            .stoch_grad(&theta, rng)
            .validated(&format!("training gradient of task {}", task.id()))?;
        theta.axpy(-lr, &g);
        if theta.norm() > PROBE_DIVERGENCE_LIMIT {
            return Err(Error::ProbeDiverged { tasks: vec![task.id()], limit: PROBE_DIVERGENCE_LIMIT });
        }
    }
    Ok(theta)
}

/// Relative loss gap on task `n` between a model trained on `m` and a model
/// trained on `n`, both for `train_budget` steps from the same init. Lower
/// values mean training on `m` transfers better to `n`.
///
/// Each task's training draws from the stream derived from its own id, so
/// `m == n` yields identical trajectories and an exact zero. The denominator
/// is regularized by [`TRANSFER_EPS`]; a reference loss below 1e-12 with a
/// nonzero gap is reported as an undefined ratio.
pub fn transferability<T: Objective>(
    task_m: &T,
    task_n: &T,
    init: &ParamVector,
    train_budget: u64,
    lr: f64,
    rng: &SeededRng,
) -> Result<f64> {
    if task_m.dim() != task_n.dim() {
        return Err(Error::DimMismatch { expected: task_m.dim(), got: task_n.dim() });
    }
    init.check_dim(task_m.dim())?;
    let mut rng_m = rng.derive(stream::TRANSFER, task_m.id() as u64);
    let mut rng_n = rng.derive(stream::TRANSFER, task_n.id() as u64);
    let theta_m = train_single(task_m, init, train_budget, lr, &mut rng_m)?;
    let theta_n = train_single(task_n, init, train_budget, lr, &mut rng_n)?;
    let loss_cross = task_n.eval(&theta_m);
    let loss_ref = task_n.eval(&theta_n);
    if !loss_cross.is_finite() || !loss_ref.is_finite() {
        return Err(Error::NonFinite { context: "transferability losses".into() });
    }
    let gap = loss_cross - loss_ref;
    if gap == 0.0 {
        return Ok(0.0);
    }
    if loss_ref.abs() < 1e-12 {
        return Err(Error::DegenerateReferenceLoss { loss: loss_ref, min: 1e-12 });
    }
    Ok(gap / (loss_ref.abs() + TRANSFER_EPS))
}

/// Full transferability matrix: one training run per task (reused across
/// rows), entry `(m, n)` = Trf(m -> n), zero diagonal.
pub fn transferability_matrix<T: Objective>(
    tasks: &[T],
    init: &ParamVector,
    train_budget: u64,
    lr: f64,
    rng: &SeededRng,
) -> Result<AffinityMatrix> {
    let m = tasks.len();
    if m == 0 {
        return Err(Error::EmptyTasks);
    }
    let mut trained = Vec::with_capacity(m);
    for task in tasks {
        let mut task_rng = rng.derive(stream::TRANSFER, task.id() as u64);
        trained.push(train_single(task, init, train_budget, lr, &mut task_rng)?);
    }
    let mut values = Array2::<f64>::zeros((m, m));
    for n in 0..m {
        let loss_ref = tasks[n].eval(&trained[n]);
        for mm in 0..m {
            if mm == n {
                continue;
            }
            let gap = tasks[n].eval(&trained[mm]) - loss_ref;
            if gap == 0.0 {
                values[[mm, n]] = 0.0;
                continue;
            }
            if loss_ref.abs() < 1e-12 {
                return Err(Error::DegenerateReferenceLoss { loss: loss_ref, min: 1e-12 });
            }
            values[[mm, n]] = gap / (loss_ref.abs() + TRANSFER_EPS);
        }
    }
    let symmetric = {
        let mut sym = true;
        'outer: for i in 0..m {
            for j in 0..m {
                if values[[i, j]] != values[[j, i]] {
                    sym = false;
                    break 'outer;
                }
            }
        }
        sym
    };
    Ok(AffinityMatrix {
        values,
        kind: AffinityKind::Transferability,
        symmetric,
        oracle: OracleMode::Stochastic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::Objective;

    /// F(x) = 0.5 (x - c)^T diag(h) (x - c), optionally with Gaussian noise.
    #[derive(Clone)]
    struct DiagQuad {
        id: usize,
        h: Vec<f64>,
        center: Vec<f64>,
        sigma: f64,
        exact_probe: bool,
    }

    impl DiagQuad {
        fn new(id: usize, h: Vec<f64>, center: Vec<f64>) -> Self {
            Self { id, h, center, sigma: 0.0, exact_probe: true }
        }
    }

    impl Objective for DiagQuad {
        fn id(&self) -> usize {
            self.id
        }
        fn dim(&self) -> usize {
            self.center.len()
        }
        fn eval(&self, theta: &ParamVector) -> f64 {
            theta
                .as_slice()
                .iter()
                .zip(&self.center)
                .zip(&self.h)
                .map(|((t, c), h)| 0.5 * h * (t - c) * (t - c))
                .sum()
        }
        fn grad(&self, theta: &ParamVector) -> ParamVector {
            ParamVector::new(
                theta
                    .as_slice()
                    .iter()
                    .zip(&self.center)
                    .zip(&self.h)
                    .map(|((t, c), h)| h * (t - c))
                    .collect(),
            )
        }
        fn stoch_grad(&self, theta: &ParamVector, rng: &mut SeededRng) -> ParamVector {
            use rand_distr::{Distribution, StandardNormal};
            let mut vals = self.grad(theta).to_vec();
            if self.sigma > 0.0 {
                let scale = self.sigma / (self.dim() as f64).sqrt();
                for v in vals.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += z * scale;
                }
            }
            ParamVector::new(vals)
        }
        fn smoothness(&self) -> f64 {
            self.h.iter().fold(0.0f64, |a, &x| a.max(x))
        }
        fn noise_sigma(&self) -> f64 {
            self.sigma
        }
        fn prefers_exact_probe(&self) -> bool {
            self.exact_probe
        }
    }

    fn probe_cfg(dim: usize, steps: usize, lr: f64) -> ProbeConfig {
        ProbeConfig::new(ParamVector::zeros(dim), steps, lr)
    }

    #[test]
    fn distance_examples() {
        let a = DiagQuad::new(0, vec![1.0, 1.0], vec![-1.0, 0.0]); // grad (1,0) at 0
        let b = DiagQuad::new(1, vec![1.0, 1.0], vec![0.0, -1.0]); // grad (0,1) at 0
        let theta = ParamVector::zeros(2);
        assert_eq!(gradient_distance(&a, &a, &theta).unwrap(), 0.0);
        assert_eq!(gradient_distance(&a, &b, &theta).unwrap(), 2.0);
        assert_eq!(
            gradient_distance(&a, &b, &theta).unwrap(),
            gradient_distance(&b, &a, &theta).unwrap()
        );
    }

    #[test]
    fn identical_tasks_give_zero_matrix() {
        let tasks: Vec<DiagQuad> =
            (0..4).map(|i| DiagQuad::new(i, vec![1.0, 2.0], vec![3.0, -1.0])).collect();
        let rng = SeededRng::new(5, 0);
        let m = probe_affinity_matrix(&tasks, &probe_cfg(2, 3, 0.1), &rng).unwrap();
        assert!(m.values.iter().all(|&x| x == 0.0));
        m.validate().unwrap();
        assert_eq!(m.oracle, OracleMode::Exact);
    }

    #[test]
    fn single_step_probe_reduces_to_pointwise_distance() {
        let tasks = vec![
            DiagQuad::new(0, vec![1.0, 1.0], vec![2.0, 0.0]),
            DiagQuad::new(1, vec![2.0, 0.5], vec![0.0, -3.0]),
            DiagQuad::new(2, vec![0.7, 1.3], vec![1.0, 1.0]),
        ];
        let rng = SeededRng::new(6, 0);
        let cfg = probe_cfg(2, 1, 0.05);
        let m = probe_affinity_matrix(&tasks, &cfg, &rng).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = gradient_distance(&tasks[i], &tasks[j], &cfg.init_point).unwrap();
                assert!((m.values[[i, j]] - want).abs() <= 1e-12 * want.max(1.0));
            }
        }
    }

    #[test]
    fn two_cluster_family_separates_intra_from_inter() {
        // Minimizers at +/-10 e1 with 0.01 jitter; intra distances must sit
        // strictly below every inter distance at the shared init.
        let tasks = vec![
            DiagQuad::new(0, vec![1.0, 1.0], vec![10.0, 0.0]),
            DiagQuad::new(1, vec![1.0, 1.0], vec![10.01, 0.0]),
            DiagQuad::new(2, vec![1.0, 1.0], vec![-10.0, 0.0]),
            DiagQuad::new(3, vec![1.0, 1.0], vec![-10.01, 0.01]),
        ];
        let rng = SeededRng::new(7, 0);
        let m = probe_affinity_matrix(&tasks, &probe_cfg(2, 4, 0.02), &rng).unwrap();
        let intra = [m.values[[0, 1]], m.values[[2, 3]]];
        let inter =
            [m.values[[0, 2]], m.values[[0, 3]], m.values[[1, 2]], m.values[[1, 3]]];
        let max_intra = intra.iter().fold(0.0f64, |a, &x| a.max(x));
        let min_inter = inter.iter().fold(f64::INFINITY, |a, &x| a.min(x));
        assert!(max_intra < min_inter, "intra {max_intra} !< inter {min_inter}");
    }

    #[test]
    fn noiseless_probe_is_seed_independent() {
        let tasks = vec![
            DiagQuad::new(0, vec![1.0, 0.6], vec![2.0, 0.0]),
            DiagQuad::new(1, vec![0.8, 1.0], vec![0.0, -2.0]),
            DiagQuad::new(2, vec![1.0, 1.0], vec![1.0, 1.0]),
        ];
        let cfg = probe_cfg(2, 5, 0.05);
        let a = probe_affinity_matrix(&tasks, &cfg, &SeededRng::new(1, 0)).unwrap();
        let b = probe_affinity_matrix(&tasks, &cfg, &SeededRng::new(999, 7)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn divergent_probe_is_rejected_with_task_ids() {
        // lr far above 2/L on a stiff task blows up the probe.
        let tasks = vec![
            DiagQuad::new(0, vec![1.0], vec![1.0]),
            DiagQuad::new(1, vec![1000.0], vec![1.0e6]),
        ];
        let rng = SeededRng::new(8, 0);
        let cfg = probe_cfg(1, 400, 0.5);
        match probe_affinity_matrix(&tasks, &cfg, &rng) {
            Err(Error::ProbeDiverged { tasks, .. }) => assert_eq!(tasks, vec![1]),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn sum_identity_hand_case_and_zero_case() {
        // Gradients (1,0) and (0,1): deviation sum = 1, ordered lhs = 4 = 2M.
        let tasks = vec![
            DiagQuad::new(0, vec![1.0, 1.0], vec![-1.0, 0.0]),
            DiagQuad::new(1, vec![1.0, 1.0], vec![0.0, -1.0]),
        ];
        let r = sum_identity_check(&tasks, &ParamVector::zeros(2)).unwrap();
        assert!((r.lhs_ordered_pairs - 4.0).abs() <= 1e-12);
        assert!((r.rhs_m_scaled - 2.0).abs() <= 1e-12);
        assert!((r.ratio.unwrap() - 2.0).abs() <= 1e-12);

        let same: Vec<DiagQuad> =
            (0..3).map(|i| DiagQuad::new(i, vec![1.0], vec![2.0])).collect();
        let r = sum_identity_check(&same, &ParamVector::new(vec![0.5])).unwrap();
        assert_eq!(r.lhs_ordered_pairs, 0.0);
        assert_eq!(r.rhs_m_scaled, 0.0);
        assert_eq!(r.ratio, None);
    }

    #[test]
    fn symmetrize_examples() {
        let mut values = Array2::<f64>::zeros((3, 3));
        values[[0, 1]] = 0.2;
        values[[1, 0]] = 0.4;
        let a = AffinityMatrix {
            values,
            kind: AffinityKind::Transferability,
            symmetric: false,
            oracle: OracleMode::Stochastic,
        };
        let s = symmetrize(&a);
        assert!((s.values[[0, 1]] - 0.3).abs() <= 1e-15);
        assert!((s.values[[1, 0]] - 0.3).abs() <= 1e-15);
        assert!(s.symmetric);
        // Already-symmetric and zero matrices pass through unchanged.
        let again = symmetrize(&s);
        assert_eq!(again.values, s.values);
    }

    #[test]
    fn transferability_self_and_identical_tasks_are_zero() {
        let a = DiagQuad::new(0, vec![1.0, 1.0], vec![4.0, 0.0]);
        let rng = SeededRng::new(9, 0);
        let init = ParamVector::zeros(2);
        assert_eq!(transferability(&a, &a, &init, 10, 0.1, &rng).unwrap(), 0.0);

        let b = DiagQuad { id: 0, ..a.clone() }; // same id => same stream
        assert_eq!(transferability(&a, &b, &init, 10, 0.1, &rng).unwrap(), 0.0);
    }

    #[test]
    fn transferability_matches_closed_form_recursion() {
        // Orthogonal minimizers, shared isotropic curvature: the noiseless
        // trajectory obeys theta_{t+1} = theta_t - lr*(theta_t - c), so
        // theta_T = c + (1-lr)^T (theta_0 - c), computed here independently.
        let a = DiagQuad::new(0, vec![1.0, 1.0], vec![2.0, 0.0]);
        let b = DiagQuad::new(1, vec![1.0, 1.0], vec![0.0, 2.0]);
        let init = ParamVector::zeros(2);
        let (steps, lr) = (25u64, 0.1);
        let rng = SeededRng::new(10, 0);
        let got = transferability(&a, &b, &init, steps, lr, &rng).unwrap();

        let decay = (1.0 - lr).powi(steps as i32);
        let theta_a = [2.0 * (1.0 - decay), 0.0];
        let theta_b = [0.0, 2.0 * (1.0 - decay)];
        let loss_on_b = |p: [f64; 2]| 0.5 * (p[0] * p[0] + (p[1] - 2.0) * (p[1] - 2.0));
        let expected =
            (loss_on_b(theta_a) - loss_on_b(theta_b)) / (loss_on_b(theta_b).abs() + TRANSFER_EPS);
        assert!(got > 0.0);
        assert!((got - expected).abs() <= 1e-10 * expected.abs().max(1.0));
    }

    #[test]
    fn transferability_matrix_is_asymmetric_with_zero_diagonal() {
        let tasks = vec![
            DiagQuad::new(0, vec![1.0, 1.0], vec![2.0, 0.0]),
            DiagQuad::new(1, vec![3.0, 0.2], vec![0.0, 2.0]),
        ];
        let rng = SeededRng::new(11, 0);
        let m =
            transferability_matrix(&tasks, &ParamVector::zeros(2), 20, 0.1, &rng).unwrap();
        assert_eq!(m.values[[0, 0]], 0.0);
        assert_eq!(m.values[[1, 1]], 0.0);
        assert_ne!(m.values[[0, 1]], m.values[[1, 0]]);
        assert!(!m.symmetric);
        m.validate().unwrap();
    }
}
