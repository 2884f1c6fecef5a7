//! Spherical k-means over unit vectors.
//!
//! Initializes the kernel bank from pre-trained feature vectors: points
//! are assigned to the centre with the highest cosine similarity, centres
//! are re-estimated as the renormalized mean of their members. Because
//! all vectors are unit norm, maximizing cosine equals minimizing the
//! spherical distance 1 - cos.

use crate::error::{Result, VmfError};
use crate::vmf::{check_unit_rows, KernelBank};
use ndarray::{Array1, Array2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Settings for [`spherical_kmeans`].
#[derive(Debug, Clone)]
pub struct KmeansConfig {
    /// Number of centres (becomes the kernel count J).
    pub clusters: usize,
    /// Hard cap on assignment/update rounds.
    pub max_iters: usize,
    /// Converged when the objective improves by less than this.
    pub tol: f64,
    /// Seed for centre initialization and empty-cluster reseeding.
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self {
            clusters: 8,
            max_iters: 100,
            tol: 1e-9,
            seed: 0,
        }
    }
}

/// Result of a spherical k-means run.
#[derive(Debug, Clone)]
pub struct KmeansOutcome {
    /// Final centres as unit rows, clusters x D.
    pub centres: Array2<f64>,
    /// Spherical distance sum(1 - cos) over all points after each
    /// iteration. Non-increasing from one iteration to the next.
    pub objective_trace: Vec<f64>,
    /// True when the run stopped on the tolerance rather than the
    /// iteration cap.
    pub converged: bool,
    /// Final cluster index per input vector.
    pub assignments: Vec<usize>,
    /// Number of assignment/update rounds executed.
    pub iterations: usize,
}

impl KmeansOutcome {
    /// Wraps the centres into a kernel bank with the given concentration.
    pub fn into_bank(self, concentration: f64) -> Result<KernelBank> {
        KernelBank::new(self.centres, concentration)
    }
}

fn assign(vectors: &Array2<f64>, centres: &Array2<f64>) -> (Vec<usize>, f64) {
    let sims = vectors.dot(&centres.t());
    let n = vectors.nrows();
    let mut assignments = vec![0usize; n];
    let mut objective = 0.0;
    for (i, row) in sims.rows().into_iter().enumerate() {
        let mut best = f64::NEG_INFINITY;
        let mut best_j = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > best {
                best = v;
                best_j = j;
            }
        }
        assignments[i] = best_j;
        objective += 1.0 - best;
    }
    (assignments, objective)
}

/// Runs spherical k-means on N x D unit rows.
///
/// Centres are seeded by sampling `clusters` distinct input rows. After
/// each mean update, a centre whose cluster emptied is re-seeded from the
/// point farthest (lowest cosine) from its currently assigned centre.
pub fn spherical_kmeans(vectors: &Array2<f64>, config: &KmeansConfig) -> Result<KmeansOutcome> {
    let (n, d) = vectors.dim();
    let k = config.clusters;
    if k < 1 {
        return Err(VmfError::InvalidConfig(
            "kmeans needs at least one cluster".into(),
        ));
    }
    if n < k {
        return Err(VmfError::TooFewVectors {
            required: k,
            actual: n,
        });
    }
    check_unit_rows(vectors.view(), 1e-6)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centres = Array2::zeros((k, d));
    for (c, idx) in sample(&mut rng, n, k).into_iter().enumerate() {
        centres.row_mut(c).assign(&vectors.row(idx));
    }

    let mut assignments = vec![0usize; n];
    let mut objective_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..config.max_iters {
        iterations += 1;
        let (assign_now, objective) = assign(vectors, &centres);
        assignments = assign_now;

        if let Some(&prev) = objective_trace.last() {
            if prev - objective < config.tol {
                objective_trace.push(objective);
                converged = true;
                break;
            }
        }
        objective_trace.push(objective);

        // mean update with renormalization
        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            let mut row = sums.row_mut(a);
            row += &vectors.row(i);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed from the point farthest from its assigned centre
                let far = farthest_point(vectors, &centres, &assignments);
                centres.row_mut(c).assign(&vectors.row(far));
                continue;
            }
            let mut row = sums.row(c).to_owned();
            let norm = row.dot(&row).sqrt();
            if norm < 1e-12 {
                // antipodal members cancelled out; re-seed like an empty
                // cluster
                let far = farthest_point(vectors, &centres, &assignments);
                centres.row_mut(c).assign(&vectors.row(far));
                continue;
            }
            row.mapv_inplace(|v| v / norm);
            centres.row_mut(c).assign(&row);
        }
    }

    Ok(KmeansOutcome {
        centres,
        objective_trace,
        converged,
        assignments,
        iterations,
    })
}

/// Initializes a kernel bank by spherical k-means over unit feature
/// vectors: cosine-similarity assignment, mean-then-renormalize update,
/// deterministic given the seed. Returns the bank together with the full
/// run outcome (objective trace, convergence flag, assignments).
pub fn init_kernels_kmeans(
    vectors: &Array2<f64>,
    j: usize,
    max_iters: usize,
    seed: u64,
    concentration: f64,
) -> Result<(KernelBank, KmeansOutcome)> {
    let config = KmeansConfig {
        clusters: j,
        max_iters,
        seed,
        ..Default::default()
    };
    let outcome = spherical_kmeans(vectors, &config)?;
    let bank = KernelBank::new(outcome.centres.clone(), concentration)?;
    Ok((bank, outcome))
}

fn farthest_point(
    vectors: &Array2<f64>,
    centres: &Array2<f64>,
    assignments: &[usize],
) -> usize {
    let mut worst_sim = f64::INFINITY;
    let mut worst_idx = 0;
    for (i, &a) in assignments.iter().enumerate() {
        let sim = vectors.row(i).dot(&centres.row(a));
        if sim < worst_sim {
            worst_sim = sim;
            worst_idx = i;
        }
    }
    worst_idx
}

/// Subsamples up to `per_group` rows from each group of `vectors`
/// (grouped by equal-length blocks) — used to cap the k-means input when
/// harvesting features from many slices.
pub fn subsample_rows(
    vectors: &Array2<f64>,
    keep: usize,
    seed: u64,
) -> Array2<f64> {
    let n = vectors.nrows();
    if keep >= n {
        return vectors.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, n, keep).into_iter().collect();
    picked.sort_unstable();
    let mut out = Array2::zeros((keep, vectors.ncols()));
    for (r, &idx) in picked.iter().enumerate() {
        out.row_mut(r).assign(&vectors.row(idx));
    }
    out
}

/// Purity of recovered clusters against planted labels: fraction of
/// points whose cluster's majority label matches their own.
pub fn cluster_purity(assignments: &[usize], labels: &[usize], clusters: usize) -> f64 {
    assert_eq!(assignments.len(), labels.len());
    let label_count = labels.iter().max().map_or(0, |m| m + 1);
    let mut table = Array2::<usize>::zeros((clusters, label_count));
    for (&a, &l) in assignments.iter().zip(labels.iter()) {
        table[[a, l]] += 1;
    }
    let majority: usize = table
        .axis_iter(Axis(0))
        .map(|row| row.iter().copied().max().unwrap_or(0))
        .sum();
    majority as f64 / assignments.len() as f64
}

/// Draws a unit vector uniformly within `angle` radians of `centre`.
/// Helper for planted-cluster tests and synthetic feature generation.
pub fn perturb_on_sphere(
    centre: &Array1<f64>,
    angle: f64,
    rng: &mut ChaCha8Rng,
) -> Array1<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let d = centre.len();
    // random direction orthogonal to centre
    let mut noise = Array1::from_shape_fn(d, |_| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    let along = noise.dot(centre);
    noise -= &(centre * along);
    let norm = noise.dot(&noise).sqrt();
    if norm < 1e-12 {
        return centre.clone();
    }
    noise.mapv_inplace(|v| v / norm);
    let theta = angle;
    centre * theta.cos() + &(noise * theta.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    /// Builds N points around `k` well-separated planted centres, each
    /// perturbed by at most `angle` radians; returns (vectors, labels).
    fn planted_clusters(
        k: usize,
        d: usize,
        per_cluster: usize,
        angle: f64,
        seed: u64,
    ) -> (Array2<f64>, Vec<usize>, Array2<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // orthogonal planted centres: +/- axis vectors
        let mut centres = Array2::zeros((k, d));
        for c in 0..k {
            let axis = c % d;
            let sign = if c / d % 2 == 0 { 1.0 } else { -1.0 };
            centres[[c, axis]] = sign;
        }
        let n = k * per_cluster;
        let mut vectors = Array2::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        for c in 0..k {
            let centre = centres.row(c).to_owned();
            for i in 0..per_cluster {
                let theta = rng.random_range(0.0..angle);
                let v = perturb_on_sphere(&centre, theta, &mut rng);
                vectors.row_mut(c * per_cluster + i).assign(&v);
                labels.push(c);
            }
        }
        (vectors, labels, centres)
    }

    #[test]
    fn objective_trace_is_monotone_non_increasing() {
        let (vectors, _, _) = planted_clusters(4, 8, 50, 0.9, 17);
        let config = KmeansConfig {
            clusters: 4,
            seed: 3,
            ..Default::default()
        };
        let outcome = spherical_kmeans(&vectors, &config).unwrap();
        assert!(outcome.objective_trace.len() >= 2);
        for pair in outcome.objective_trace.windows(2) {
            assert!(
                pair[1] <= pair[0] + 1e-12,
                "objective increased: {} -> {}",
                pair[0],
                pair[1]
            );
        }
    }

    #[test]
    fn recovers_planted_clusters() {
        let (vectors, labels, _) = planted_clusters(4, 8, 100, 0.3, 29);
        let config = KmeansConfig {
            clusters: 4,
            seed: 5,
            ..Default::default()
        };
        let outcome = spherical_kmeans(&vectors, &config).unwrap();
        let purity = cluster_purity(&outcome.assignments, &labels, 4);
        assert!(purity >= 0.99, "purity {purity} below 0.99");
        assert!(outcome.converged);
    }

    #[test]
    fn same_seed_reproduces_centres_exactly() {
        let (vectors, _, _) = planted_clusters(3, 6, 60, 0.5, 31);
        let config = KmeansConfig {
            clusters: 3,
            seed: 11,
            ..Default::default()
        };
        let a = spherical_kmeans(&vectors, &config).unwrap();
        let b = spherical_kmeans(&vectors, &config).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.centres.iter().zip(b.centres.iter()) {
            assert_eq!(x.to_bits(), y.to_bits(), "centres differ bitwise");
        }
        assert_eq!(a.assignments, b.assignments);
    }

    #[test]
    fn centres_stay_unit_norm() {
        let (vectors, _, _) = planted_clusters(5, 7, 40, 1.0, 37);
        let config = KmeansConfig {
            clusters: 5,
            seed: 2,
            ..Default::default()
        };
        let outcome = spherical_kmeans(&vectors, &config).unwrap();
        for row in outcome.centres.rows() {
            let norm = row.dot(&row).sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rejects_fewer_points_than_clusters() {
        let mut vectors = Array2::zeros((3, 4));
        for i in 0..3 {
            vectors[[i, i]] = 1.0;
        }
        let config = KmeansConfig {
            clusters: 8,
            ..Default::default()
        };
        match spherical_kmeans(&vectors, &config).unwrap_err() {
            VmfError::TooFewVectors { required, actual } => {
                assert_eq!((required, actual), (8, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_non_unit_rows() {
        let mut vectors = Array2::zeros((4, 4));
        for i in 0..4 {
            vectors[[i, i]] = 2.0;
        }
        let config = KmeansConfig {
            clusters: 2,
            ..Default::default()
        };
        assert!(spherical_kmeans(&vectors, &config).is_err());
    }

    #[test]
    fn handles_duplicate_points_without_empty_cluster_panic() {
        // all points identical: K-1 clusters must re-seed repeatedly and
        // the run must still terminate
        let mut vectors = Array2::zeros((10, 3));
        for i in 0..10 {
            vectors[[i, 0]] = 1.0;
        }
        let config = KmeansConfig {
            clusters: 3,
            seed: 1,
            ..Default::default()
        };
        let outcome = spherical_kmeans(&vectors, &config).unwrap();
        for row in outcome.centres.rows() {
            let norm = row.dot(&row).sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn singleton_clusters_reach_zero_objective() {
        // N = J distinct unit vectors: each becomes its own centre, so
        // every cosine is 1 and the spherical objective sum is 0.
        let mut vectors = Array2::zeros((4, 4));
        for i in 0..4 {
            vectors[[i, i]] = 1.0;
        }
        let (bank, outcome) = init_kernels_kmeans(&vectors, 4, 50, 13, 30.0).unwrap();
        let last = *outcome.objective_trace.last().unwrap();
        assert_abs_diff_eq!(last, 0.0, epsilon = 1e-12);
        let cos_sum: f64 = (0..4)
            .map(|i| vectors.row(i).dot(&outcome.centres.row(outcome.assignments[i])))
            .sum();
        assert_abs_diff_eq!(cos_sum, 4.0, epsilon = 1e-12);
        bank.validate().unwrap();
    }

    #[test]
    fn into_bank_produces_valid_kernels() {
        let (vectors, _, _) = planted_clusters(4, 8, 30, 0.4, 41);
        let config = KmeansConfig {
            clusters: 4,
            seed: 9,
            ..Default::default()
        };
        let bank = spherical_kmeans(&vectors, &config)
            .unwrap()
            .into_bank(30.0)
            .unwrap();
        assert_eq!(bank.kernel_count(), 4);
        bank.validate().unwrap();
    }

    #[test]
    fn subsample_keeps_requested_count_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let mut vectors = Array2::from_shape_fn((100, 4), |_| rng.random_range(-1.0..1.0));
        crate::vmf::renormalize_rows(&mut vectors).unwrap();
        let a = subsample_rows(&vectors, 25, 7);
        let b = subsample_rows(&vectors, 25, 7);
        assert_eq!(a.dim(), (25, 4));
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        let c = subsample_rows(&vectors, 200, 7);
        assert_eq!(c.dim(), (100, 4));
    }
}
