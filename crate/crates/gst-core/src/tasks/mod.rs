//! Synthetic task families with analytically known heterogeneity.
//!
//! Quadratic tasks share one eigenbasis per family: `H_m = Q diag(λ_m) Q^T`
//! with per-task spectra jittered around a common base. That keeps every
//! heterogeneity constant computable in closed form while letting one knob
//! (`curvature_jitter`) drive gradient-norm-proportional divergence and two
//! spread knobs drive offset divergence.

mod nonlinear;

pub use nonlinear::{generate_nonlinear_family, NonlinearFamily, NonlinearRecipe, NonlinearTask};

use crate::error::{Error, Result};
use crate::heterogeneity::{fit_bound_constants, BoundSample, ConstantsFit};
use crate::linalg::random_rotation;
use crate::objective::Objective;
use crate::rng::{stream, SeededRng};
use crate::vector::{mean, ParamVector};
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Current schema version of the family JSON document.
pub const FAMILY_FORMAT_VERSION: u32 = 1;

/// Knobs controlling a synthetic heterogeneous family.
///
/// Tasks are assigned to latent clusters round-robin (`task m` to cluster
/// `m mod num_latent_clusters`). `intra_cluster_spread` far below
/// `inter_cluster_spread` produces structured heterogeneity that spectral
/// grouping can recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeterogeneityRecipe {
    pub num_tasks: usize,
    pub dim: usize,
    pub num_latent_clusters: usize,
    /// Std of minimizers around their cluster center.
    pub intra_cluster_spread: f64,
    /// Std of cluster centers around the origin.
    pub inter_cluster_spread: f64,
    /// Log-normal jitter applied per task to the base eigenvalue spectrum;
    /// zero means every task shares one curvature matrix.
    pub curvature_jitter: f64,
    /// Stochastic-gradient noise level σ for every task.
    pub noise_sigma: f64,
    /// Base spectrum range: eigenvalues are log-uniform in
    /// `[lambda_min, lambda_max]`.
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub seed: u64,
}

impl Default for HeterogeneityRecipe {
    fn default() -> Self {
        Self {
            num_tasks: 6,
            dim: 8,
            num_latent_clusters: 2,
            intra_cluster_spread: 0.1,
            inter_cluster_spread: 5.0,
            curvature_jitter: 0.0,
            noise_sigma: 0.0,
            lambda_min: 0.1,
            lambda_max: 1.0,
            seed: 0,
        }
    }
}

impl HeterogeneityRecipe {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, expected: &str, got: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::Structural {
                    context: format!("recipe.{field}"),
                    expected: expected.into(),
                    got,
                })
            }
        };
        check(self.num_tasks >= 1, "num_tasks", ">= 1", self.num_tasks.to_string())?;
        check(self.dim >= 1, "dim", ">= 1", self.dim.to_string())?;
        check(
            self.num_latent_clusters >= 1 && self.num_latent_clusters <= self.num_tasks,
            "num_latent_clusters",
            "1 <= clusters <= num_tasks",
            self.num_latent_clusters.to_string(),
        )?;
        check(
            self.intra_cluster_spread >= 0.0,
            "intra_cluster_spread",
            ">= 0",
            self.intra_cluster_spread.to_string(),
        )?;
        check(
            self.inter_cluster_spread >= 0.0,
            "inter_cluster_spread",
            ">= 0",
            self.inter_cluster_spread.to_string(),
        )?;
        check(
            self.curvature_jitter >= 0.0,
            "curvature_jitter",
            ">= 0",
            self.curvature_jitter.to_string(),
        )?;
        check(self.noise_sigma >= 0.0, "noise_sigma", ">= 0", self.noise_sigma.to_string())?;
        check(
            self.lambda_min > 0.0 && self.lambda_max >= self.lambda_min,
            "lambda_min/lambda_max",
            "0 < lambda_min <= lambda_max",
            format!("({}, {})", self.lambda_min, self.lambda_max),
        )?;
        Ok(())
    }
}

/// One quadratic objective `F(Θ) = 0.5 (Θ - θ*)^T H (Θ - θ*)` with additive
/// Gaussian gradient noise of total variance `noise_sigma^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticTask {
    id: usize,
    h: Array2<f64>,
    theta_star: ParamVector,
    noise_sigma: f64,
    smoothness: f64,
}

impl QuadraticTask {
    /// Builds a task from an explicit curvature matrix. `smoothness` must be
    /// `λ_max(H)`; [`QuadraticFamily`] construction guarantees this, direct
    /// callers can use [`crate::linalg::spectral_radius_symmetric`].
    pub fn new(
        id: usize,
        h: Array2<f64>,
        theta_star: ParamVector,
        noise_sigma: f64,
        smoothness: f64,
    ) -> Result<Self> {
        crate::linalg::check_symmetric(&h, 1e-10)?;
        if h.nrows() != theta_star.dim() {
            return Err(Error::DimMismatch { expected: h.nrows(), got: theta_star.dim() });
        }
        Ok(Self { id, h, theta_star, noise_sigma, smoothness })
    }

    pub fn curvature(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn minimizer(&self) -> &ParamVector {
        &self.theta_star
    }
}

impl Objective for QuadraticTask {
    fn id(&self) -> usize {
        self.id
    }

    fn dim(&self) -> usize {
        self.theta_star.dim()
    }

    fn eval(&self, theta: &ParamVector) -> f64 {
        let diff = theta - &self.theta_star;
        0.5 * diff.as_array().dot(&self.h.dot(diff.as_array()))
    }

    fn grad(&self, theta: &ParamVector) -> ParamVector {
        let diff = theta - &self.theta_star;
        ParamVector::from_array(self.h.dot(diff.as_array()))
    }

    fn stoch_grad(&self, theta: &ParamVector, rng: &mut SeededRng) -> ParamVector {
        let mut g = self.grad(theta);
        if self.noise_sigma > 0.0 {
            let scale = self.noise_sigma / (self.dim() as f64).sqrt();
            let noise = Array1::from_iter((0..self.dim()).map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * scale
            }));
            g.axpy(1.0, &ParamVector::from_array(noise));
        }
        g
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    fn prefers_exact_probe(&self) -> bool {
        true
    }
}

/// A generated quadratic family plus its latent structure (shared rotation,
/// per-task spectra, minimizers). The latent data makes the all-Θ
/// heterogeneity constants computable exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticFamily {
    recipe: HeterogeneityRecipe,
    rotation: Array2<f64>,
    spectra: Vec<Array1<f64>>,
    theta_stars: Vec<ParamVector>,
    tasks: Vec<QuadraticTask>,
}

impl QuadraticFamily {
    pub fn recipe(&self) -> &HeterogeneityRecipe {
        &self.recipe
    }

    pub fn tasks(&self) -> &[QuadraticTask] {
        &self.tasks
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn dim(&self) -> usize {
        self.recipe.dim
    }

    pub fn theta_stars(&self) -> &[ParamVector] {
        &self.theta_stars
    }

    /// Latent cluster label of each task (`m mod num_latent_clusters`).
    pub fn latent_clusters(&self) -> Vec<usize> {
        (0..self.num_tasks()).map(|m| m % self.recipe.num_latent_clusters).collect()
    }

    /// Mean of the task minimizers.
    pub fn mean_minimizer(&self) -> ParamVector {
        mean(&self.theta_stars).expect("family is non-empty")
    }
}

fn build_tasks(
    recipe: &HeterogeneityRecipe,
    rotation: &Array2<f64>,
    spectra: &[Array1<f64>],
    theta_stars: &[ParamVector],
) -> Vec<QuadraticTask> {
    let d = recipe.dim;
    spectra
        .iter()
        .zip(theta_stars)
        .enumerate()
        .map(|(id, (lambda, theta_star))| {
            let mut h = Array2::<f64>::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    let mut acc = 0.0;
                    for k in 0..d {
                        acc += rotation[[i, k]] * lambda[k] * rotation[[j, k]];
                    }
                    h[[i, j]] = acc;
                }
            }
            for i in 0..d {
                for j in (i + 1)..d {
                    let v = 0.5 * (h[[i, j]] + h[[j, i]]);
                    h[[i, j]] = v;
                    h[[j, i]] = v;
                }
            }
            let smoothness = lambda.iter().fold(0.0f64, |a, &x| a.max(x));
            QuadraticTask::new(id, h, theta_star.clone(), recipe.noise_sigma, smoothness)
                .expect("constructed curvature is symmetric")
        })
        .collect()
}

/// Generates a quadratic family deterministically from the recipe seed.
///
/// Each latent ingredient draws from its own rng stream, so changing one
/// knob never shifts the draws behind another.
pub fn generate_quadratic_family(recipe: &HeterogeneityRecipe) -> Result<QuadraticFamily> {
    recipe.validate()?;
    let d = recipe.dim;
    let m = recipe.num_tasks;
    let normal = StandardNormal;

    let mut rot_rng = SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 0));
    let rotation = random_rotation(d, &mut rot_rng);

    let mut base_rng = SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 1));
    let ln_lo = recipe.lambda_min.ln();
    let ln_hi = recipe.lambda_max.ln();
    let base_spectrum: Array1<f64> = Array1::from_iter(
        (0..d).map(|_| (ln_lo + (ln_hi - ln_lo) * base_rng.random::<f64>()).exp()),
    );

    let mut jitter_rng = SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 2));
    let spectra: Vec<Array1<f64>> = (0..m)
        .map(|_| {
            Array1::from_iter(base_spectrum.iter().map(|&l| {
                if recipe.curvature_jitter > 0.0 {
                    let z: f64 = normal.sample(&mut jitter_rng);
                    l * (recipe.curvature_jitter * z).exp()
                } else {
                    l
                }
            }))
        })
        .collect();

    let mut center_rng = SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 3));
    let centers: Vec<Array1<f64>> = (0..recipe.num_latent_clusters)
        .map(|_| {
            Array1::from_iter((0..d).map(|_| {
                let z: f64 = normal.sample(&mut center_rng);
                recipe.inter_cluster_spread * z
            }))
        })
        .collect();

    let mut theta_rng = SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 4));
    let theta_stars: Vec<ParamVector> = (0..m)
        .map(|task| {
            let center = &centers[task % recipe.num_latent_clusters];
            ParamVector::from_array(Array1::from_iter(center.iter().map(|&c| {
                let z: f64 = normal.sample(&mut theta_rng);
                c + recipe.intra_cluster_spread * z
            })))
        })
        .collect();

    let tasks = build_tasks(recipe, &rotation, &spectra, &theta_stars);
    Ok(QuadraticFamily { recipe: recipe.clone(), rotation, spectra, theta_stars, tasks })
}

/// Tightest `(β², ζ²)` over a probe set, from exact quadratic gradients.
///
/// Exact in the sense that no gradient is sampled; the constants are still
/// relative to the supplied probe points. For constants valid at every Θ see
/// [`closed_form_heterogeneity_global`].
pub fn closed_form_heterogeneity(
    tasks: &[QuadraticTask],
    probe_points: &[ParamVector],
) -> Result<ConstantsFit> {
    if tasks.is_empty() {
        return Err(Error::EmptyTasks);
    }
    let m = tasks.len() as f64;
    let samples: Vec<BoundSample> = probe_points
        .iter()
        .map(|theta| {
            let grads: Vec<ParamVector> = tasks.iter().map(|t| t.grad(theta)).collect();
            let mean_grad = mean(&grads)?;
            let mut dev = 0.0;
            for g in &grads {
                dev += (g - &mean_grad).norm_sq();
            }
            Ok(BoundSample { grad_norm_sq: mean_grad.norm_sq(), deviation: dev / m })
        })
        .collect::<Result<_>>()?;
    fit_bound_constants(&samples)
}

/// Heterogeneity constants valid at every parameter point, not just a probe
/// set, exploiting the family's shared eigenbasis.
///
/// In rotated coordinates every eigendirection decouples, and the deviation
/// minus `β²` times the squared gradient norm is a concave quadratic per
/// direction once `β²` strictly exceeds `max_i Var_m(λ_{m,i}) / mean(λ_{·,i})²`;
/// its supremum over Θ is then finite and gives the exact minimal `ζ²` for
/// that `β²`. This returns the pair at `β² = (1 + 1e-6) β²_min` (or the
/// exact `(0, ζ²)` pair when all tasks share one curvature matrix).
pub fn closed_form_heterogeneity_global(family: &QuadraticFamily) -> Result<ConstantsFit> {
    let m = family.num_tasks();
    let d = family.dim();
    if m == 0 {
        return Err(Error::EmptyTasks);
    }
    let m_f = m as f64;

    // Rotated minimizer coordinates s_{m,i}.
    let s: Vec<Array1<f64>> = family
        .theta_stars
        .iter()
        .map(|ts| {
            Array1::from_iter(
                (0..d).map(|i| family.rotation.column(i).dot(ts.as_array())),
            )
        })
        .collect();

    let mut v = vec![0.0f64; d];
    let mut w = vec![0.0f64; d];
    let mut u = vec![0.0f64; d];
    let mut lambda_bar = vec![0.0f64; d];
    let mut x_bar = vec![0.0f64; d];
    for i in 0..d {
        let lam: Vec<f64> = (0..m).map(|t| family.spectra[t][i]).collect();
        let lb: f64 = lam.iter().sum::<f64>() / m_f;
        lambda_bar[i] = lb;
        let xb: f64 = (0..m).map(|t| lam[t] * s[t][i]).sum::<f64>() / (m_f * lb);
        x_bar[i] = xb;
        for t in 0..m {
            let dl = lam[t] - lb;
            let dm = lam[t] * s[t][i] - lb * xb;
            v[i] += dl * dl / m_f;
            w[i] += dl * dm / m_f;
            u[i] += dm * dm / m_f;
        }
    }

    let beta_min_sq = (0..d)
        .map(|i| v[i] / (lambda_bar[i] * lambda_bar[i]))
        .fold(0.0f64, f64::max);

    if beta_min_sq == 0.0 {
        // Shared curvature: deviations constant in Θ; ζ² = Σ_i u_i exactly.
        let zeta_sq: f64 = u.iter().sum();
        return Ok(ConstantsFit { beta_sq: 0.0, zeta_sq, beta_identifiable: true });
    }

    let beta_sq = beta_min_sq * (1.0 + 1e-6);
    let mut zeta_sq = 0.0;
    for i in 0..d {
        let lb2 = lambda_bar[i] * lambda_bar[i];
        let a = v[i] - beta_sq * lb2;
        let b = w[i] - beta_sq * lb2 * x_bar[i];
        let c = u[i] - beta_sq * lb2 * x_bar[i] * x_bar[i];
        let term = if a < 0.0 {
            c - b * b / a
        } else if b.abs() <= 1e-14 {
            c
        } else {
            return Err(Error::NumericInconsistency(format!(
                "direction {i}: unbounded deviation at beta_sq = {beta_sq}"
            )));
        };
        zeta_sq += term.max(0.0);
    }
    Ok(ConstantsFit { beta_sq, zeta_sq, beta_identifiable: true })
}

/// Default probe-point policy: `count` Gaussian draws around the mean
/// minimizer (radius adapted to the minimizer spread) plus the origin.
pub fn default_probe_points(
    family: &QuadraticFamily,
    count: usize,
    seed: u64,
) -> Vec<ParamVector> {
    let d = family.dim();
    let center = family.mean_minimizer();
    let rms_spread = (family
        .theta_stars
        .iter()
        .map(|ts| (ts - &center).norm_sq())
        .sum::<f64>()
        / family.num_tasks() as f64)
        .sqrt();
    let radius = (1.0 + 2.0 * rms_spread) / (d as f64).sqrt();
    let normal = StandardNormal;
    let mut rng = SeededRng::new(seed, crate::rng::stream_id(stream::PROBE_POINTS, 0));
    let mut points: Vec<ParamVector> = (0..count)
        .map(|_| {
            let offset = Array1::from_iter((0..d).map(|_| {
                let z: f64 = normal.sample(&mut rng);
                radius * z
            }));
            &center + &ParamVector::from_array(offset)
        })
        .collect();
    points.push(ParamVector::zeros(d));
    points
}

/// A task from either synthetic family, presented through one oracle type
/// so schedulers and estimators can run over mixed pipelines.
#[derive(Debug, Clone, PartialEq)]
pub enum Task {
    Quadratic(QuadraticTask),
    Nonlinear(NonlinearTask),
}

impl Objective for Task {
    fn id(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.id(),
            Task::Nonlinear(t) => t.id(),
        }
    }
    fn dim(&self) -> usize {
        match self {
            Task::Quadratic(t) => t.dim(),
            Task::Nonlinear(t) => t.dim(),
        }
    }
    fn eval(&self, theta: &ParamVector) -> f64 {
        match self {
            Task::Quadratic(t) => t.eval(theta),
            Task::Nonlinear(t) => t.eval(theta),
        }
    }
    fn grad(&self, theta: &ParamVector) -> ParamVector {
        match self {
            Task::Quadratic(t) => t.grad(theta),
            Task::Nonlinear(t) => t.grad(theta),
        }
    }
    fn stoch_grad(&self, theta: &ParamVector, rng: &mut SeededRng) -> ParamVector {
        match self {
            Task::Quadratic(t) => t.stoch_grad(theta, rng),
            Task::Nonlinear(t) => t.stoch_grad(theta, rng),
        }
    }
    fn smoothness(&self) -> f64 {
        match self {
            Task::Quadratic(t) => t.smoothness(),
            Task::Nonlinear(t) => t.smoothness(),
        }
    }
    fn noise_sigma(&self) -> f64 {
        match self {
            Task::Quadratic(t) => t.noise_sigma(),
            Task::Nonlinear(t) => t.noise_sigma(),
        }
    }
    fn prefers_exact_probe(&self) -> bool {
        match self {
            Task::Quadratic(t) => t.prefers_exact_probe(),
            Task::Nonlinear(t) => t.prefers_exact_probe(),
        }
    }
}

/// A generated family of either kind. Quadratic families persist their
/// latent structure; nonlinear families persist only the recipe and are
/// regenerated deterministically on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskFamily {
    Quadratic(QuadraticFamily),
    Nonlinear { recipe: NonlinearRecipe },
}

impl TaskFamily {
    pub fn tasks(&self) -> Result<Vec<Task>> {
        match self {
            TaskFamily::Quadratic(f) => {
                Ok(f.tasks().iter().cloned().map(Task::Quadratic).collect())
            }
            TaskFamily::Nonlinear { recipe } => {
                let family = generate_nonlinear_family(recipe)?;
                Ok(family.tasks().iter().cloned().map(Task::Nonlinear).collect())
            }
        }
    }

    pub fn num_tasks(&self) -> usize {
        match self {
            TaskFamily::Quadratic(f) => f.num_tasks(),
            TaskFamily::Nonlinear { recipe } => recipe.num_tasks,
        }
    }

    pub fn param_dim(&self) -> usize {
        match self {
            TaskFamily::Quadratic(f) => f.dim(),
            TaskFamily::Nonlinear { recipe } => {
                NonlinearTask::param_dim(recipe.input_dim, recipe.hidden_width)
            }
        }
    }

    /// Mean minimizer for quadratic families; the origin for nonlinear ones
    /// (no closed-form minimizer exists there).
    pub fn init_center(&self) -> ParamVector {
        match self {
            TaskFamily::Quadratic(f) => f.mean_minimizer(),
            TaskFamily::Nonlinear { .. } => ParamVector::zeros(self.param_dim()),
        }
    }
}

// --- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MatrixWire {
    rows: usize,
    cols: usize,
    /// Row-major entries.
    data: Vec<f64>,
}

impl From<&Array2<f64>> for MatrixWire {
    fn from(a: &Array2<f64>) -> Self {
        Self { rows: a.nrows(), cols: a.ncols(), data: a.iter().copied().collect() }
    }
}

impl MatrixWire {
    fn into_array(self) -> std::result::Result<Array2<f64>, String> {
        Array2::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| format!("matrix shape: {e}"))
    }
}

#[derive(Serialize, Deserialize)]
struct FamilyWire {
    format_version: u32,
    recipe: HeterogeneityRecipe,
    rotation: MatrixWire,
    spectra: Vec<Vec<f64>>,
    theta_stars: Vec<Vec<f64>>,
}

impl Serialize for QuadraticFamily {
    fn serialize<S: serde::Serializer>(
        &self,
        serializer: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        FamilyWire {
            format_version: FAMILY_FORMAT_VERSION,
            recipe: self.recipe.clone(),
            rotation: (&self.rotation).into(),
            spectra: self.spectra.iter().map(|s| s.to_vec()).collect(),
            theta_stars: self.theta_stars.iter().map(|t| t.to_vec()).collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for QuadraticFamily {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = FamilyWire::deserialize(deserializer)?;
        if wire.format_version != FAMILY_FORMAT_VERSION {
            return Err(D::Error::custom(format!(
                "unsupported family format_version {}",
                wire.format_version
            )));
        }
        let rotation = wire.rotation.into_array().map_err(D::Error::custom)?;
        let spectra: Vec<Array1<f64>> =
            wire.spectra.into_iter().map(Array1::from_vec).collect();
        let theta_stars: Vec<ParamVector> =
            wire.theta_stars.into_iter().map(ParamVector::new).collect();
        if spectra.len() != wire.recipe.num_tasks || theta_stars.len() != wire.recipe.num_tasks
        {
            return Err(D::Error::custom("task count mismatch in family document"));
        }
        let tasks = build_tasks(&wire.recipe, &rotation, &spectra, &theta_stars);
        Ok(QuadraticFamily { recipe: wire.recipe, rotation, spectra, theta_stars, tasks })
    }
}
