//! The objective-oracle contract shared by every scheduler and estimator.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::vector::ParamVector;

/// One dataset's loss surface: exact value/gradient oracles plus an unbiased
/// stochastic gradient with variance at most `noise_sigma()^2`.
pub trait Objective {
    /// Task index within its family.
    fn id(&self) -> usize;

    /// Parameter dimension the oracle operates on.
    fn dim(&self) -> usize;

    /// Exact loss value.
    fn eval(&self, theta: &ParamVector) -> f64;

    /// Exact full gradient.
    fn grad(&self, theta: &ParamVector) -> ParamVector;

    /// Unbiased stochastic gradient: `E[stoch_grad] = grad` with
    /// `E||stoch_grad - grad||^2 <= noise_sigma^2`.
    fn stoch_grad(&self, theta: &ParamVector, rng: &mut SeededRng) -> ParamVector;

    /// Known smoothness upper bound: `||grad(a) - grad(b)|| <= L ||a - b||`.
    fn smoothness(&self) -> f64;

    /// Stochastic-gradient noise level σ.
    fn noise_sigma(&self) -> f64;

    /// Whether affinity probing should use the exact gradient oracle for
    /// this task. True for closed-form objectives where exactness keeps
    /// identity tests sharp; false for sampled objectives.
    fn prefers_exact_probe(&self) -> bool {
        false
    }
}

fn check_tasks<T: Objective>(tasks: &[T]) -> Result<usize> {
    let first = tasks.first().ok_or(Error::EmptyTasks)?;
    let dim = first.dim();
    for t in tasks {
        if t.dim() != dim {
            return Err(Error::DimMismatch { expected: dim, got: t.dim() });
        }
    }
    Ok(dim)
}

/// Aggregate objective over all tasks: unweighted mean of losses and of
/// exact gradients.
pub fn global_objective<T: Objective>(
    tasks: &[T],
    theta: &ParamVector,
) -> Result<(f64, ParamVector)> {
    let dim = check_tasks(tasks)?;
    theta.check_dim(dim)?;
    let indices: Vec<usize> = (0..tasks.len()).collect();
    objective_over(tasks, &indices, theta)
}

/// Mean loss and gradient over one group of task indices.
pub fn group_objective<T: Objective>(
    tasks: &[T],
    group: &[usize],
    theta: &ParamVector,
) -> Result<(f64, ParamVector)> {
    let dim = check_tasks(tasks)?;
    theta.check_dim(dim)?;
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    objective_over(tasks, group, theta)
}

fn objective_over<T: Objective>(
    tasks: &[T],
    indices: &[usize],
    theta: &ParamVector,
) -> Result<(f64, ParamVector)> {
    let mut loss_acc = 0.0;
    let mut grad_acc = ParamVector::zeros(theta.dim());
    for &idx in indices {
        let task = tasks
            .get(idx)
            .ok_or(Error::TaskIndexOutOfRange { index: idx, count: tasks.len() })?;
        let loss = task.eval(theta);
        if !loss.is_finite() {
            return Err(Error::NonFinite { context: format!("loss of task {idx}") });
        }
        let grad = task
            .grad(theta)
            .validated(&format!("gradient of task {idx}"))?;
        grad.check_dim(theta.dim())?;
        loss_acc += loss;
        grad_acc.axpy(1.0, &grad);
    }
    let inv = 1.0 / indices.len() as f64;
    Ok((loss_acc * inv, grad_acc.scaled(inv)))
}

/// Mean stochastic gradient over a group: one draw per member task, averaged.
/// This is the group-level stochastic oracle used by schedulers and by the
/// group variance bound.
pub fn group_stoch_grad<T: Objective>(
    tasks: &[T],
    group: &[usize],
    theta: &ParamVector,
    rng: &mut SeededRng,
) -> Result<ParamVector> {
    if group.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut acc = ParamVector::zeros(theta.dim());
    for &idx in group {
        let task = tasks
            .get(idx)
            .ok_or(Error::TaskIndexOutOfRange { index: idx, count: tasks.len() })?;
        let g = task
            .stoch_grad(theta, rng)
            .validated(&format!("stochastic gradient of task {idx}"))?;
        acc.axpy(1.0, &g);
    }
    Ok(acc.scaled(1.0 / group.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimal quadratic oracle for contract tests: F(x) = 0.5||x - c||^2.
    struct Shifted {
        id: usize,
        center: ParamVector,
        sigma: f64,
    }

    impl Objective for Shifted {
        fn id(&self) -> usize {
            self.id
        }
        fn dim(&self) -> usize {
            self.center.dim()
        }
        fn eval(&self, theta: &ParamVector) -> f64 {
            0.5 * (theta - &self.center).norm_sq()
        }
        fn grad(&self, theta: &ParamVector) -> ParamVector {
            theta - &self.center
        }
        fn stoch_grad(&self, theta: &ParamVector, rng: &mut SeededRng) -> ParamVector {
            use rand_distr::{Distribution, StandardNormal};
            let scale = self.sigma / (self.dim() as f64).sqrt();
            let mut g = self.grad(theta);
            let noise = ParamVector::new(
                (0..self.dim())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(rng);
                        z * scale
                    })
                    .collect(),
            );
            g.axpy(1.0, &noise);
            g
        }
        fn smoothness(&self) -> f64 {
            1.0
        }
        fn noise_sigma(&self) -> f64 {
            self.sigma
        }
    }

    fn shifted(id: usize, center: Vec<f64>) -> Shifted {
        Shifted { id, center: ParamVector::new(center), sigma: 0.0 }
    }

    #[test]
    fn singleton_mean_is_identity() {
        let tasks = vec![shifted(0, vec![1.0, -2.0])];
        let theta = ParamVector::new(vec![0.0, 0.0]);
        let (loss, grad) = global_objective(&tasks, &theta).unwrap();
        assert_eq!(loss, tasks[0].eval(&theta));
        assert_eq!(grad, tasks[0].grad(&theta));
    }

    #[test]
    fn two_orthogonal_gradients_average() {
        // Gradients (1,0) and (0,1) at the origin.
        let tasks = vec![shifted(0, vec![-1.0, 0.0]), shifted(1, vec![0.0, -1.0])];
        let theta = ParamVector::zeros(2);
        let (_, grad) = global_objective(&tasks, &theta).unwrap();
        assert_eq!(grad.to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn identical_tasks_mean_equals_single() {
        let tasks: Vec<Shifted> = (0..5).map(|i| shifted(i, vec![2.0, 3.0, -1.0])).collect();
        let theta = ParamVector::new(vec![0.5, 0.5, 0.5]);
        let (_, grad) = global_objective(&tasks, &theta).unwrap();
        assert_eq!(grad, tasks[0].grad(&theta));
    }

    #[test]
    fn group_examples() {
        let tasks = vec![shifted(0, vec![-2.0, 0.0]), shifted(1, vec![0.0, -2.0])];
        let theta = ParamVector::zeros(2);
        // Full-set group equals the global objective.
        let all = group_objective(&tasks, &[0, 1], &theta).unwrap();
        let global = global_objective(&tasks, &theta).unwrap();
        assert_eq!(all, global);
        // Singleton group equals that task's oracle.
        let single = group_objective(&tasks, &[1], &theta).unwrap();
        assert_eq!(single.1, tasks[1].grad(&theta));
        // Gradients (2,0) and (0,2) average to (1,1).
        assert_eq!(all.1.to_vec(), vec![1.0, 1.0]);
    }

    #[test]
    fn structural_errors() {
        let tasks: Vec<Shifted> = vec![];
        let theta = ParamVector::zeros(2);
        assert!(matches!(global_objective(&tasks, &theta), Err(Error::EmptyTasks)));

        let tasks = vec![shifted(0, vec![0.0, 0.0])];
        assert!(matches!(
            group_objective(&tasks, &[], &theta),
            Err(Error::EmptyGroup)
        ));
        assert!(matches!(
            group_objective(&tasks, &[3], &theta),
            Err(Error::TaskIndexOutOfRange { .. })
        ));

        let mixed = vec![shifted(0, vec![0.0, 0.0]), shifted(1, vec![0.0, 0.0, 0.0])];
        assert!(matches!(
            global_objective(&mixed, &theta),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn global_grad_is_size_weighted_mean_of_group_grads() {
        let tasks: Vec<Shifted> = (0..7)
            .map(|i| shifted(i, vec![i as f64, -(i as f64), 0.5 * i as f64]))
            .collect();
        let theta = ParamVector::new(vec![0.3, -0.7, 1.1]);
        let (_, global) = global_objective(&tasks, &theta).unwrap();
        let partition: Vec<Vec<usize>> = vec![vec![0, 2], vec![1, 3, 4], vec![5, 6]];
        let mut acc = ParamVector::zeros(3);
        for group in &partition {
            let (_, g) = group_objective(&tasks, group, &theta).unwrap();
            acc.axpy(group.len() as f64 / tasks.len() as f64, &g);
        }
        for (a, b) in global.to_vec().iter().zip(acc.to_vec()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn stoch_grad_is_deterministic_per_stream_and_unbiased() {
        let task = Shifted { id: 0, center: ParamVector::zeros(4), sigma: 0.5 };
        let theta = ParamVector::new(vec![1.0, 2.0, 3.0, 4.0]);

        let mut r1 = SeededRng::new(9, 1);
        let mut r2 = SeededRng::new(9, 1);
        assert_eq!(task.stoch_grad(&theta, &mut r1), task.stoch_grad(&theta, &mut r2));

        // Mean of many draws approaches the exact gradient: tolerance
        // 3σ/sqrt(N) per coordinate.
        let n = 10_000;
        let mut rng = SeededRng::new(9, 2);
        let mut acc = ParamVector::zeros(4);
        for _ in 0..n {
            acc.axpy(1.0 / n as f64, &task.stoch_grad(&theta, &mut rng));
        }
        let exact = task.grad(&theta);
        let tol = 3.0 * task.noise_sigma() / (n as f64).sqrt();
        for (a, b) in acc.to_vec().iter().zip(exact.to_vec()) {
            assert!((a - b).abs() <= tol, "|{a} - {b}| > {tol}");
        }
    }

    proptest::proptest! {
        /// The global gradient is the group-size-weighted mean of group
        /// gradients, for any partition.
        #[test]
        fn global_is_weighted_mean_of_groups(
            centers in proptest::collection::vec(
                proptest::collection::vec(-5.0f64..5.0, 3),
                2..9,
            ),
            labels in proptest::collection::vec(0usize..4, 8),
            point in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let tasks: Vec<Shifted> = centers
                .iter()
                .enumerate()
                .map(|(i, c)| shifted(i, c.clone()))
                .collect();
            let theta = ParamVector::new(point);
            let (_, global) = global_objective(&tasks, &theta).unwrap();

            // Group tasks by label, dropping empty groups.
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); 4];
            for (task, &label) in labels.iter().take(tasks.len()).enumerate() {
                groups[label].push(task);
            }
            for (task, _) in tasks.iter().enumerate().skip(labels.len()) {
                groups[0].push(task);
            }
            let mut acc = ParamVector::zeros(3);
            for group in groups.iter().filter(|g| !g.is_empty()) {
                let (_, g) = group_objective(&tasks, group, &theta).unwrap();
                acc.axpy(group.len() as f64 / tasks.len() as f64, &g);
            }
            for (a, b) in global.to_vec().iter().zip(acc.to_vec()) {
                proptest::prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn group_stoch_grad_averages_one_draw_per_member() {
        let tasks: Vec<Shifted> = (0..3)
            .map(|i| Shifted { id: i, center: ParamVector::zeros(2), sigma: 0.0 })
            .collect();
        let theta = ParamVector::new(vec![2.0, -2.0]);
        let mut rng = SeededRng::new(1, 1);
        let g = group_stoch_grad(&tasks, &[0, 1, 2], &theta, &mut rng).unwrap();
        assert_eq!(g, tasks[0].grad(&theta));
    }
}
