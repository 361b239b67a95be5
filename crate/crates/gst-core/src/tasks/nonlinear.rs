//! A small nonconvex regression objective used to stress-test the
//! schedulers: one tanh hidden layer over a finite task-specific dataset,
//! with exact full-batch gradients by closed-form backpropagation and
//! stochastic gradients by minibatch subsampling.

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::rng::{stream, SeededRng};
use crate::vector::ParamVector;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const MAX_HIDDEN_WIDTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonlinearRecipe {
    pub num_tasks: usize,
    pub num_latent_clusters: usize,
    pub input_dim: usize,
    pub hidden_width: usize,
    pub samples_per_task: usize,
    pub minibatch: usize,
    /// Std of per-task teacher perturbations within a cluster.
    pub intra_teacher_spread: f64,
    /// Std of cluster teacher offsets.
    pub inter_teacher_spread: f64,
    /// Per-cluster overrides of `intra_teacher_spread` (e.g. one wide
    /// outlier cluster among tight ones); length must equal
    /// `num_latent_clusters` when present.
    pub intra_spread_overrides: Option<Vec<f64>>,
    /// Std of label noise added to teacher outputs.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for NonlinearRecipe {
    fn default() -> Self {
        Self {
            num_tasks: 4,
            num_latent_clusters: 2,
            input_dim: 4,
            hidden_width: 8,
            samples_per_task: 128,
            minibatch: 8,
            intra_teacher_spread: 0.05,
            inter_teacher_spread: 1.0,
            intra_spread_overrides: None,
            label_noise: 0.02,
            seed: 0,
        }
    }
}

/// Regression objective `F(Θ) = (1/N) Σ_n 0.5 (f(x_n; Θ) - y_n)^2` with
/// `f(x; Θ) = a^T tanh(W x + b)`.
///
/// Parameter layout: `W` row-major (`width * input_dim`), then `b`
/// (`width`), then `a` (`width`).
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearTask {
    id: usize,
    input_dim: usize,
    width: usize,
    xs: Array2<f64>,
    ys: Array1<f64>,
    minibatch: usize,
    smoothness_estimate: f64,
    sigma_estimate: f64,
}

struct Unpacked<'a> {
    w: &'a [f64],
    b: &'a [f64],
    a: &'a [f64],
}

impl NonlinearTask {
    pub fn param_dim(input_dim: usize, width: usize) -> usize {
        width * input_dim + 2 * width
    }

    fn unpack<'a>(&self, theta: &'a ParamVector) -> Unpacked<'a> {
        let flat = theta.as_slice();
        let wp = self.width * self.input_dim;
        Unpacked { w: &flat[..wp], b: &flat[wp..wp + self.width], a: &flat[wp + self.width..] }
    }

    /// Loss and gradient over a subset of sample indices.
    fn loss_grad_over(&self, theta: &ParamVector, indices: &[usize]) -> (f64, ParamVector) {
        let p = self.unpack(theta);
        let wp = self.width * self.input_dim;
        let mut grad = vec![0.0f64; theta.dim()];
        let mut loss = 0.0f64;
        let inv = 1.0 / indices.len() as f64;

        for &n in indices {
            let x = self.xs.row(n);
            // Hidden activations.
            let mut t = vec![0.0f64; self.width];
            for j in 0..self.width {
                let mut z = p.b[j];
                for i in 0..self.input_dim {
                    z += p.w[j * self.input_dim + i] * x[i];
                }
                t[j] = z.tanh();
            }
            let f: f64 = (0..self.width).map(|j| p.a[j] * t[j]).sum();
            let e = f - self.ys[n];
            loss += 0.5 * e * e * inv;

            for j in 0..self.width {
                let dt = p.a[j] * (1.0 - t[j] * t[j]);
                grad[wp + self.width + j] += inv * e * t[j]; // d/da_j
                grad[wp + j] += inv * e * dt; // d/db_j
                for i in 0..self.input_dim {
                    grad[j * self.input_dim + i] += inv * e * dt * x[i]; // d/dW_ji
                }
            }
        }
        (loss, ParamVector::new(grad))
    }
}

impl Objective for NonlinearTask {
    fn id(&self) -> usize {
        self.id
    }

    fn dim(&self) -> usize {
        Self::param_dim(self.input_dim, self.width)
    }

    fn eval(&self, theta: &ParamVector) -> f64 {
        let all: Vec<usize> = (0..self.xs.nrows()).collect();
        self.loss_grad_over(theta, &all).0
    }

    fn grad(&self, theta: &ParamVector) -> ParamVector {
        let all: Vec<usize> = (0..self.xs.nrows()).collect();
        self.loss_grad_over(theta, &all).1
    }

    fn stoch_grad(&self, theta: &ParamVector, rng: &mut SeededRng) -> ParamVector {
        // Sampling with replacement keeps every draw unbiased.
        let n = self.xs.nrows();
        let indices: Vec<usize> =
            (0..self.minibatch).map(|_| rng.random_range(0..n)).collect();
        self.loss_grad_over(theta, &indices).1
    }

    fn smoothness(&self) -> f64 {
        self.smoothness_estimate
    }

    fn noise_sigma(&self) -> f64 {
        self.sigma_estimate
    }

    fn prefers_exact_probe(&self) -> bool {
        false
    }
}

fn teacher_forward(
    input_dim: usize,
    width: usize,
    params: &[f64],
    x: &[f64],
) -> f64 {
    let wp = width * input_dim;
    let mut out = 0.0;
    for j in 0..width {
        let mut z = params[wp + j];
        for i in 0..input_dim {
            z += params[j * input_dim + i] * x[i];
        }
        out += params[wp + width + j] * z.tanh();
    }
    out
}

/// Generates a family of nonlinear regression tasks: one teacher network per
/// latent cluster, each task a perturbed copy with its own sampled dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearFamily {
    recipe: NonlinearRecipe,
    tasks: Vec<NonlinearTask>,
}

impl NonlinearFamily {
    pub fn recipe(&self) -> &NonlinearRecipe {
        &self.recipe
    }

    pub fn tasks(&self) -> &[NonlinearTask] {
        &self.tasks
    }

    pub fn param_dim(&self) -> usize {
        NonlinearTask::param_dim(self.recipe.input_dim, self.recipe.hidden_width)
    }
}

pub fn generate_nonlinear_family(recipe: &NonlinearRecipe) -> Result<NonlinearFamily> {
    if recipe.hidden_width == 0 || recipe.hidden_width > MAX_HIDDEN_WIDTH {
        return Err(Error::Structural {
            context: "recipe.hidden_width".into(),
            expected: format!("1..={MAX_HIDDEN_WIDTH}"),
            got: recipe.hidden_width.to_string(),
        });
    }
    if recipe.num_tasks < 1
        || recipe.num_latent_clusters < 1
        || recipe.num_latent_clusters > recipe.num_tasks
    {
        return Err(Error::Structural {
            context: "recipe.num_latent_clusters".into(),
            expected: "1 <= clusters <= num_tasks".into(),
            got: format!("{} of {}", recipe.num_latent_clusters, recipe.num_tasks),
        });
    }
    if recipe.minibatch < 1 || recipe.minibatch > recipe.samples_per_task {
        return Err(Error::Structural {
            context: "recipe.minibatch".into(),
            expected: "1 <= minibatch <= samples_per_task".into(),
            got: recipe.minibatch.to_string(),
        });
    }
    if let Some(overrides) = &recipe.intra_spread_overrides {
        if overrides.len() != recipe.num_latent_clusters {
            return Err(Error::Structural {
                context: "recipe.intra_spread_overrides".into(),
                expected: format!("{} entries", recipe.num_latent_clusters),
                got: overrides.len().to_string(),
            });
        }
    }
    let pdim = NonlinearTask::param_dim(recipe.input_dim, recipe.hidden_width);
    let normal = StandardNormal;

    let mut teacher_rng =
        SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 16));
    let cluster_teachers: Vec<Vec<f64>> = (0..recipe.num_latent_clusters)
        .map(|_| {
            (0..pdim)
                .map(|_| {
                    let z: f64 = normal.sample(&mut teacher_rng);
                    recipe.inter_teacher_spread * z
                })
                .collect()
        })
        .collect();

    let mut task_rng = SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 17));
    let mut data_rng = SeededRng::new(recipe.seed, crate::rng::stream_id(stream::FAMILY, 18));

    let mut tasks = Vec::with_capacity(recipe.num_tasks);
    for id in 0..recipe.num_tasks {
        let cluster = id % recipe.num_latent_clusters;
        let base = &cluster_teachers[cluster];
        let spread = recipe
            .intra_spread_overrides
            .as_ref()
            .map(|o| o[cluster])
            .unwrap_or(recipe.intra_teacher_spread);
        let teacher: Vec<f64> = base
            .iter()
            .map(|&v| {
                let z: f64 = normal.sample(&mut task_rng);
                v + spread * z
            })
            .collect();

        let mut xs = Array2::<f64>::zeros((recipe.samples_per_task, recipe.input_dim));
        let mut ys = Array1::<f64>::zeros(recipe.samples_per_task);
        for n in 0..recipe.samples_per_task {
            for i in 0..recipe.input_dim {
                xs[[n, i]] = normal.sample(&mut data_rng);
            }
            let y = teacher_forward(
                recipe.input_dim,
                recipe.hidden_width,
                &teacher,
                xs.row(n).as_slice().expect("contiguous"),
            );
            let z: f64 = normal.sample(&mut data_rng);
            ys[n] = y + recipe.label_noise * z;
        }

        let mut task = NonlinearTask {
            id,
            input_dim: recipe.input_dim,
            width: recipe.hidden_width,
            xs,
            ys,
            minibatch: recipe.minibatch,
            smoothness_estimate: 0.0,
            sigma_estimate: 0.0,
        };
        calibrate(&mut task, recipe.seed);
        tasks.push(task);
    }
    Ok(NonlinearFamily { recipe: recipe.clone(), tasks })
}

/// Empirical smoothness and noise estimates, measured once at construction.
///
/// Smoothness: largest gradient-difference ratio over sampled parameter
/// pairs in the unit ball, doubled as margin. Noise: root-mean-square
/// minibatch gradient error at a reference point, with a 1.5x margin. Both
/// are local estimates; a tanh network has no useful global constants.
fn calibrate(task: &mut NonlinearTask, seed: u64) {
    let dim = task.dim();
    let normal = StandardNormal;
    let mut rng = SeededRng::new(seed, crate::rng::stream_id(stream::FAMILY, 19 + task.id as u64));

    let mut max_ratio = 0.0f64;
    for _ in 0..16 {
        let a = ParamVector::new((0..dim).map(|_| normal.sample(&mut rng)).collect());
        let b = ParamVector::new((0..dim).map(|_| normal.sample(&mut rng)).collect());
        let denom = (&a - &b).norm();
        if denom > 1e-9 {
            let ratio = (&task.grad(&a) - &task.grad(&b)).norm() / denom;
            max_ratio = max_ratio.max(ratio);
        }
    }
    task.smoothness_estimate = 2.0 * max_ratio;

    // Zero parameters make every gradient vanish (dead tanh units), so the
    // noise calibration point must be off the origin.
    let reference = ParamVector::new(
        (0..dim)
            .map(|_| {
                let z: f64 = normal.sample(&mut rng);
                0.5 * z
            })
            .collect(),
    );
    let full = task.grad(&reference);
    let mut acc = 0.0;
    let draws = 64;
    for _ in 0..draws {
        let g = task.stoch_grad(&reference, &mut rng);
        acc += (&g - &full).norm_sq();
    }
    task.sigma_estimate = 1.5 * (acc / draws as f64).sqrt();
}
