//! Affinity-based task grouping: normalized spectral clustering on a
//! distance matrix, backed by the Jacobi eigensolver and a seeded k-means.

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{stream, SeededRng};
use ndarray::Array2;
use rand::Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use crate::linalg::jacobi_eigendecomposition;

/// Assignment of task indices into K disjoint, nonempty groups, plus a
/// scheduling order over the groups.
///
/// Group labels are canonical: groups are numbered by their smallest member
/// task index, so two clusterings that induce the same partition compare
/// equal regardless of how the clustering algorithm labeled them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupPartition {
    assignments: Vec<usize>,
    k: usize,
    order: Vec<usize>,
    group_sizes: Vec<usize>,
}

impl GroupPartition {
    /// Builds a partition from per-task group labels (any label set),
    /// canonicalizing labels and setting the scheduling order to group index
    /// order.
    pub fn from_assignments(raw: &[usize]) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::InvalidPartition("no tasks".into()));
        }
        let mut label_order: Vec<usize> = Vec::new();
        for &label in raw {
            if !label_order.contains(&label) {
                label_order.push(label);
            }
        }
        // Labels ranked by the smallest task index that carries them, which
        // is their first occurrence order in `raw`.
        let k = label_order.len();
        let assignments: Vec<usize> = raw
            .iter()
            .map(|label| label_order.iter().position(|l| l == label).unwrap())
            .collect();
        let mut group_sizes = vec![0usize; k];
        for &g in &assignments {
            group_sizes[g] += 1;
        }
        Ok(Self { assignments, k, order: (0..k).collect(), group_sizes })
    }

    pub fn from_groups(groups: &[Vec<usize>], num_tasks: usize) -> Result<Self> {
        let mut raw = vec![usize::MAX; num_tasks];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::InvalidPartition(format!("group {g} is empty")));
            }
            for &m in members {
                if m >= num_tasks {
                    return Err(Error::InvalidPartition(format!(
                        "task {m} out of range for {num_tasks} tasks"
                    )));
                }
                if raw[m] != usize::MAX {
                    return Err(Error::InvalidPartition(format!("task {m} assigned twice")));
                }
                raw[m] = g;
            }
        }
        if let Some(m) = raw.iter().position(|&g| g == usize::MAX) {
            return Err(Error::InvalidPartition(format!("task {m} unassigned")));
        }
        Self::from_assignments(&raw)
    }

    /// Every task in one group.
    pub fn single_group(num_tasks: usize) -> Result<Self> {
        Self::from_assignments(&vec![0; num_tasks])
    }

    /// Each task its own group.
    pub fn singletons(num_tasks: usize) -> Result<Self> {
        Self::from_assignments(&(0..num_tasks).collect::<Vec<_>>())
    }

    pub fn num_tasks(&self) -> usize {
        self.assignments.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    /// Scheduling order: a permutation of group indices.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    pub fn min_group_size(&self) -> usize {
        self.group_sizes.iter().copied().min().unwrap_or(0)
    }

    pub fn members(&self, group: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter_map(|(task, &g)| (g == group).then_some(task))
            .collect()
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        (0..self.k).map(|g| self.members(g)).collect()
    }

    /// Returns the same partition with a different scheduling order.
    pub fn with_order(&self, order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; self.k];
        if order.len() != self.k {
            return Err(Error::InvalidPartition(format!(
                "order length {} != K = {}",
                order.len(),
                self.k
            )));
        }
        for &g in &order {
            if g >= self.k || seen[g] {
                return Err(Error::InvalidPartition(format!(
                    "order is not a permutation of 0..{}",
                    self.k
                )));
            }
            seen[g] = true;
        }
        Ok(Self { order, ..self.clone() })
    }

    pub fn reversed_order(&self) -> Self {
        let mut order = self.order.clone();
        order.reverse();
        Self { order, ..self.clone() }
    }
}

#[derive(Serialize, Deserialize)]
struct PartitionWire {
    #[serde(rename = "K")]
    k: usize,
    order: Vec<usize>,
    groups: Vec<Vec<usize>>,
}

impl Serialize for GroupPartition {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        PartitionWire { k: self.k, order: self.order.clone(), groups: self.groups() }
            .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for GroupPartition {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let wire = PartitionWire::deserialize(deserializer)?;
        if wire.k != wire.groups.len() {
            return Err(D::Error::custom(format!(
                "K = {} but {} groups listed",
                wire.k,
                wire.groups.len()
            )));
        }
        let num_tasks = wire.groups.iter().map(|g| g.len()).sum();
        let partition = GroupPartition::from_groups(&wire.groups, num_tasks)
            .map_err(|e| D::Error::custom(e.to_string()))?;
        partition.with_order(wire.order).map_err(|e| D::Error::custom(e.to_string()))
    }
}

/// Similarity-kernel bandwidth policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Median off-diagonal distance; parameter-free and scale-invariant.
    MedianDistance,
    Fixed(f64),
}

/// Laplacian variant. Only the symmetric normalized form is supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Laplacian {
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub k: usize,
    pub kernel_bandwidth: Bandwidth,
    pub laplacian: Laplacian,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl SpectralConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            kernel_bandwidth: Bandwidth::MedianDistance,
            laplacian: Laplacian::Normalized,
            kmeans_restarts: 16,
            seed,
        }
    }
}

/// Mean affinity over same-group pairs versus cross-group pairs. `None`
/// marks the side with no pairs (single group, or all-singleton partition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionQuality {
    pub intra_mean: Option<f64>,
    pub inter_mean: Option<f64>,
}

pub fn partition_quality(a: &AffinityMatrix, p: &GroupPartition) -> Result<PartitionQuality> {
    if !a.symmetric {
        return Err(Error::Structural {
            context: "partition_quality input".into(),
            expected: "symmetric affinity matrix".into(),
            got: "asymmetric".into(),
        });
    }
    let m = a.len();
    if p.num_tasks() != m {
        return Err(Error::InvalidPartition(format!(
            "partition covers {} tasks, matrix has {m}",
            p.num_tasks()
        )));
    }
    let mut intra = (0usize, 0.0f64);
    let mut inter = (0usize, 0.0f64);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = a.values[[i, j]];
            if p.assignments()[i] == p.assignments()[j] {
                intra = (intra.0 + 1, intra.1 + v);
            } else {
                inter = (inter.0 + 1, inter.1 + v);
            }
        }
    }
    Ok(PartitionQuality {
        intra_mean: (intra.0 > 0).then(|| intra.1 / intra.0 as f64),
        inter_mean: (inter.0 > 0).then(|| inter.1 / inter.0 as f64),
    })
}

/// Squared Euclidean distance between two embedding rows.
fn row_dist_sq(x: &Array2<f64>, i: usize, c: &Array2<f64>, j: usize) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.ncols() {
        let diff = x[[i, d]] - c[[j, d]];
        acc += diff * diff;
    }
    acc
}

struct KmeansResult {
    assignments: Vec<usize>,
    inertia: f64,
}

/// One seeded k-means run: k-means++ initialization then Lloyd iterations.
/// Ties always resolve to the lowest index, and emptied clusters steal the
/// point farthest from its centroid, so the run is fully deterministic.
fn kmeans_once(points: &Array2<f64>, k: usize, rng: &mut SeededRng) -> KmeansResult {
    let n = points.nrows();
    let dims = points.ncols();
    debug_assert!(k >= 1 && k <= n);

    // k-means++ seeding.
    let mut centroids = Array2::<f64>::zeros((k, dims));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut min_d: Vec<f64> = (0..n).map(|i| row_dist_sq(points, i, &centroids, 0)).collect();
    for c in 1..k {
        let total: f64 = min_d.iter().sum();
        let chosen = if total <= 0.0 {
            // All remaining points coincide with a centroid; take the lowest
            // index not yet chosen as a centroid position.
            c % n
        } else {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in min_d.iter().enumerate() {
                target -= d;
                if target <= 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centroids.row_mut(c).assign(&points.row(chosen));
        for i in 0..n {
            let d = row_dist_sq(points, i, &centroids, c);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }

    let mut assignments = vec![0usize; n];
    for _iter in 0..200 {
        // Assignment step; strict `<` keeps the lowest centroid index on ties.
        let mut changed = false;
        for i in 0..n {
            let mut best = 0usize;
            let mut best_d = row_dist_sq(points, i, &centroids, 0);
            for c in 1..k {
                let d = row_dist_sq(points, i, &centroids, c);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignments[i] != best {
                assignments[i] = best;
                changed = true;
            }
        }

        // Repair empty clusters deterministically: move the point farthest
        // from its centroid (lowest index on ties) out of a cluster with at
        // least two members.
        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            while counts[c] == 0 {
                let mut far_i = usize::MAX;
                let mut far_d = -1.0;
                for i in 0..n {
                    if counts[assignments[i]] > 1 {
                        let d = row_dist_sq(points, i, &centroids, assignments[i]);
                        if d > far_d {
                            far_d = d;
                            far_i = i;
                        }
                    }
                }
                if far_i == usize::MAX {
                    break;
                }
                counts[assignments[far_i]] -= 1;
                assignments[far_i] = c;
                counts[c] += 1;
                changed = true;
            }
        }

        // Update step.
        let mut new_centroids = Array2::<f64>::zeros((k, dims));
        for i in 0..n {
            for d in 0..dims {
                new_centroids[[assignments[i], d]] += points[[i, d]];
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for d in 0..dims {
                    new_centroids[[c, d]] /= counts[c] as f64;
                }
            } else {
                new_centroids.row_mut(c).assign(&centroids.row(c));
            }
        }
        centroids = new_centroids;
        if !changed {
            break;
        }
    }

    let inertia: f64 =
        (0..n).map(|i| row_dist_sq(points, i, &centroids, assignments[i])).sum();
    KmeansResult { assignments, inertia }
}

fn kmeans(points: &Array2<f64>, k: usize, restarts: usize, base: &SeededRng) -> Vec<usize> {
    let mut best: Option<KmeansResult> = None;
    for r in 0..restarts.max(1) {
        let mut rng = base.derive(stream::KMEANS, r as u64);
        let run = kmeans_once(points, k, &mut rng);
        let better = match &best {
            None => true,
            Some(b) => run.inertia < b.inertia,
        };
        if better {
            best = Some(run);
        }
    }
    best.expect("at least one restart").assignments
}

/// Normalized spectral clustering of a symmetric distance matrix.
///
/// Similarity `W_mn = exp(-A_mn / bw)` with zero diagonal, symmetric
/// normalized Laplacian, embedding from the K smallest eigenvectors,
/// row-normalized, then seeded k-means restarts. Tasks whose similarity row
/// underflows to zero are isolated: each gets its own group when K allows.
pub fn spectral_cluster(a: &AffinityMatrix, config: &SpectralConfig) -> Result<GroupPartition> {
    let m = a.len();
    if m == 0 {
        return Err(Error::EmptyTasks);
    }
    if config.k < 1 || config.k > m {
        return Err(Error::InvalidGroupCount { k: config.k, m });
    }
    if !a.symmetric {
        return Err(Error::Structural {
            context: "spectral_cluster input".into(),
            expected: "symmetric matrix (symmetrize transferability first)".into(),
            got: "asymmetric".into(),
        });
    }
    linalg::check_symmetric(&a.values, 1e-10)?;
    if config.k == m {
        return GroupPartition::singletons(m);
    }
    if config.k == 1 {
        return GroupPartition::single_group(m);
    }

    let bw = match config.kernel_bandwidth {
        Bandwidth::Fixed(b) => {
            if !(b > 0.0) {
                return Err(Error::Structural {
                    context: "kernel_bandwidth".into(),
                    expected: "> 0".into(),
                    got: format!("{b}"),
                });
            }
            b
        }
        Bandwidth::MedianDistance => {
            let mut off = Vec::with_capacity(m * (m - 1) / 2);
            for i in 0..m {
                for j in (i + 1)..m {
                    off.push(a.values[[i, j]]);
                }
            }
            let med = linalg::median(&off).unwrap_or(1.0);
            if med > 0.0 {
                med
            } else {
                1.0
            }
        }
    };

    let mut w = Array2::<f64>::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            if i != j {
                w[[i, j]] = (-a.values[[i, j]] / bw).exp();
            }
        }
    }
    let degrees: Vec<f64> = (0..m).map(|i| w.row(i).sum()).collect();
    let isolated: Vec<usize> =
        (0..m).filter(|&i| degrees[i] == 0.0).collect();

    if !isolated.is_empty() {
        let connected: Vec<usize> = (0..m).filter(|i| !isolated.contains(i)).collect();
        let k_rest = config.k as isize - isolated.len() as isize;
        if k_rest < 0 || (k_rest == 0 && !connected.is_empty()) {
            return Err(Error::Structural {
                context: "spectral_cluster isolated nodes".into(),
                expected: format!("K >= {} (one group per isolated task + 1)", isolated.len() + 1),
                got: format!("K = {}", config.k),
            });
        }
        let mut raw = vec![usize::MAX; m];
        for (g, &i) in isolated.iter().enumerate() {
            raw[i] = g;
        }
        if !connected.is_empty() {
            let mut sub = Array2::<f64>::zeros((connected.len(), connected.len()));
            for (si, &i) in connected.iter().enumerate() {
                for (sj, &j) in connected.iter().enumerate() {
                    sub[[si, sj]] = a.values[[i, j]];
                }
            }
            let sub_matrix = AffinityMatrix {
                values: sub,
                kind: a.kind,
                symmetric: true,
                oracle: a.oracle,
            };
            let sub_config = SpectralConfig { k: k_rest as usize, ..config.clone() };
            let sub_partition = spectral_cluster(&sub_matrix, &sub_config)?;
            for (si, &i) in connected.iter().enumerate() {
                raw[i] = isolated.len() + sub_partition.assignments()[si];
            }
        }
        return GroupPartition::from_assignments(&raw);
    }

    // L = I - D^{-1/2} W D^{-1/2}
    let mut lap = Array2::<f64>::eye(m);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                lap[[i, j]] -= w[[i, j]] / (degrees[i].sqrt() * degrees[j].sqrt());
            }
        }
    }
    // Exact symmetrization guards against last-ulp asymmetry from the
    // normalization divisions.
    for i in 0..m {
        for j in (i + 1)..m {
            let v = 0.5 * (lap[[i, j]] + lap[[j, i]]);
            lap[[i, j]] = v;
            lap[[j, i]] = v;
        }
    }

    let (_, vecs) = linalg::jacobi_eigendecomposition(&lap, 1e-12)?;
    let mut embedding = Array2::<f64>::zeros((m, config.k));
    for i in 0..m {
        for c in 0..config.k {
            embedding[[i, c]] = vecs[[i, c]];
        }
    }
    for mut row in embedding.rows_mut() {
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|x| x / norm);
        }
    }

    let base = SeededRng::new(config.seed, 0);
    let assignments = kmeans(&embedding, config.k, config.kmeans_restarts, &base);
    GroupPartition::from_assignments(&assignments)
}

/// Exhaustive search for the partition into exactly `k` nonempty groups
/// minimizing total intra-group distance. Exponential; intended as a test
/// oracle for small M.
pub fn brute_force_min_intra_partition(
    a: &AffinityMatrix,
    k: usize,
) -> Result<GroupPartition> {
    let m = a.len();
    if m == 0 {
        return Err(Error::EmptyTasks);
    }
    if k < 1 || k > m || m > 14 {
        return Err(Error::InvalidGroupCount { k, m });
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut labels = vec![0usize; m];
    // Enumerate set partitions in restricted-growth form to visit each
    // partition exactly once, then keep those with exactly k blocks.
    fn recurse(
        idx: usize,
        max_used: usize,
        labels: &mut Vec<usize>,
        a: &AffinityMatrix,
        k: usize,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let m = labels.len();
        if idx == m {
            if max_used != k {
                return;
            }
            let mut cost = 0.0;
            for i in 0..m {
                for j in (i + 1)..m {
                    if labels[i] == labels[j] {
                        cost += a.values[[i, j]];
                    }
                }
            }
            let better = match best {
                None => true,
                Some((c, _)) => cost < *c,
            };
            if better {
                *best = Some((cost, labels.clone()));
            }
            return;
        }
        for label in 0..=max_used.min(k - 1) {
            labels[idx] = label;
            let new_max = max_used.max(label + 1);
            if new_max + (m - idx - 1) >= k {
                recurse(idx + 1, new_max, labels, a, k, best);
            }
        }
    }
    recurse(0, 0, &mut labels, a, k, &mut best);
    let (_, labels) = best.ok_or(Error::InvalidGroupCount { k, m })?;
    GroupPartition::from_assignments(&labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::{AffinityKind, OracleMode};

    fn distance_matrix(values: Array2<f64>) -> AffinityMatrix {
        AffinityMatrix {
            values,
            kind: AffinityKind::GradientDistance,
            symmetric: true,
            oracle: OracleMode::Exact,
        }
    }

    fn block_matrix(sizes: &[usize], intra: f64, inter: f64) -> AffinityMatrix {
        let m: usize = sizes.iter().sum();
        let mut block = Vec::new();
        for (b, &s) in sizes.iter().enumerate() {
            block.extend(std::iter::repeat_n(b, s));
        }
        let mut values = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    values[[i, j]] = if block[i] == block[j] { intra } else { inter };
                }
            }
        }
        distance_matrix(values)
    }

    #[test]
    fn partition_canonicalization_and_invariants() {
        let p = GroupPartition::from_assignments(&[7, 2, 7, 2, 5]).unwrap();
        assert_eq!(p.k(), 3);
        assert_eq!(p.assignments(), &[0, 1, 0, 1, 2]);
        assert_eq!(p.group_sizes(), &[2, 2, 1]);
        assert_eq!(p.groups(), vec![vec![0, 2], vec![1, 3], vec![4]]);
        assert_eq!(p.min_group_size(), 1);
        assert_eq!(p.order(), &[0, 1, 2]);
    }

    #[test]
    fn partition_json_shape_round_trips() {
        let p = GroupPartition::from_assignments(&[0, 1, 0]).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"{"K":2,"order":[0,1],"groups":[[0,2],[1]]}"#);
        let back: GroupPartition = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn bad_orders_are_rejected() {
        let p = GroupPartition::from_assignments(&[0, 1]).unwrap();
        assert!(p.with_order(vec![1, 0]).is_ok());
        assert!(p.with_order(vec![0, 0]).is_err());
        assert!(p.with_order(vec![0]).is_err());
    }

    #[test]
    fn trivial_k_values() {
        let a = block_matrix(&[2, 2], 0.1, 10.0);
        let every = spectral_cluster(&a, &SpectralConfig::new(4, 1)).unwrap();
        assert_eq!(every, GroupPartition::singletons(4).unwrap());
        let one = spectral_cluster(&a, &SpectralConfig::new(1, 1)).unwrap();
        assert_eq!(one, GroupPartition::single_group(4).unwrap());
    }

    #[test]
    fn recovers_two_blocks_exactly() {
        let a = block_matrix(&[3, 3], 0.1, 10.0);
        let p = spectral_cluster(&a, &SpectralConfig::new(2, 3)).unwrap();
        assert_eq!(p.groups(), vec![vec![0, 1, 2], vec![3, 4, 5]]);
        let oracle = brute_force_min_intra_partition(&a, 2).unwrap();
        assert_eq!(p, oracle);
    }

    #[test]
    fn matches_brute_force_on_irregular_blocks() {
        let a = block_matrix(&[2, 4, 3], 0.2, 12.0);
        let p = spectral_cluster(&a, &SpectralConfig::new(3, 9)).unwrap();
        let oracle = brute_force_min_intra_partition(&a, 3).unwrap();
        assert_eq!(p, oracle);
    }

    #[test]
    fn scale_invariance_under_median_bandwidth() {
        let a = block_matrix(&[3, 4], 0.3, 7.0);
        let p1 = spectral_cluster(&a, &SpectralConfig::new(2, 5)).unwrap();
        for scale in [0.37, 2.0, 1234.5] {
            let scaled = distance_matrix(&a.values * scale);
            let p2 = spectral_cluster(&scaled, &SpectralConfig::new(2, 5)).unwrap();
            assert_eq!(p1, p2, "partition changed under scale {scale}");
        }
    }

    #[test]
    fn isolated_tasks_get_their_own_groups() {
        // Task 4 sits at huge distance from everything: its similarity row
        // underflows to zero.
        let mut values = block_matrix(&[2, 2], 0.1, 5.0).values;
        let m = 5;
        let mut big = Array2::<f64>::zeros((m, m));
        for i in 0..4 {
            for j in 0..4 {
                big[[i, j]] = values[[i, j]];
            }
        }
        for i in 0..4 {
            big[[i, 4]] = 1e9;
            big[[4, i]] = 1e9;
        }
        values = big;
        let a = distance_matrix(values);
        let p = spectral_cluster(&a, &SpectralConfig::new(3, 2)).unwrap();
        assert_eq!(p.k(), 3);
        let solo: Vec<Vec<usize>> =
            p.groups().into_iter().filter(|g| g == &vec![4]).collect();
        assert_eq!(solo.len(), 1, "task 4 should be alone, got {:?}", p.groups());
    }

    #[test]
    fn too_many_isolated_tasks_is_structural_error() {
        // Tasks 3 and 4 are both unreachable under a fixed bandwidth; K=2
        // leaves no group for the connected block.
        let m = 5;
        let mut values = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let far = i >= 3 || j >= 3;
                    values[[i, j]] = if far { 1e4 } else { 0.1 };
                }
            }
        }
        let a = distance_matrix(values);
        let config = SpectralConfig {
            kernel_bandwidth: Bandwidth::Fixed(1.0),
            ..SpectralConfig::new(2, 2)
        };
        assert!(matches!(
            spectral_cluster(&a, &config),
            Err(Error::Structural { .. })
        ));
    }

    #[test]
    fn quality_examples() {
        let a = block_matrix(&[3, 3], 0.1, 10.0);
        let correct = GroupPartition::from_assignments(&[0, 0, 0, 1, 1, 1]).unwrap();
        let q = partition_quality(&a, &correct).unwrap();
        assert!((q.intra_mean.unwrap() - 0.1).abs() <= 1e-12);
        assert!((q.inter_mean.unwrap() - 10.0).abs() <= 1e-12);

        let singles = GroupPartition::singletons(6).unwrap();
        let q = partition_quality(&a, &singles).unwrap();
        assert_eq!(q.intra_mean, None);
        // Mean off-diagonal: 6 intra pairs at 0.1 and 9 inter pairs at 10.
        let want = (6.0 * 0.1 + 9.0 * 10.0) / 15.0;
        assert!((q.inter_mean.unwrap() - want).abs() <= 1e-12);

        let single = GroupPartition::single_group(6).unwrap();
        let q = partition_quality(&a, &single).unwrap();
        assert_eq!(q.inter_mean, None);

        // Uniform off-diagonal: intra equals inter for any partition.
        let mut uniform = Array2::<f64>::from_elem((4, 4), 3.0);
        for i in 0..4 {
            uniform[[i, i]] = 0.0;
        }
        let u = distance_matrix(uniform);
        let p = GroupPartition::from_assignments(&[0, 0, 1, 1]).unwrap();
        let q = partition_quality(&u, &p).unwrap();
        assert_eq!(q.intra_mean.unwrap(), q.inter_mean.unwrap());
    }

    #[test]
    fn kmeans_is_deterministic_across_calls() {
        let a = block_matrix(&[4, 3, 3], 0.5, 9.0);
        let c = SpectralConfig::new(3, 17);
        let p1 = spectral_cluster(&a, &c).unwrap();
        let p2 = spectral_cluster(&a, &c).unwrap();
        assert_eq!(p1, p2);
    }
}
