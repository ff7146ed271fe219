//! Deterministic scalar k-means (Lloyd) used to build codebooks.

/// Hard cap on Lloyd iterations.
pub const MAX_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    /// Non-decreasing centroids.
    pub centroids: Vec<f64>,
    pub assignments: Vec<u16>,
    pub iterations: usize,
    /// Reconstruction MSE after each assignment step, starting with the
    /// initial levels.
    pub mse_history: Vec<f64>,
}

/// `k` uniform levels spanning `[min, max]` (all equal when min == max).
pub fn uniform_levels(min: f64, max: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![min];
    }
    let step = (max - min) / (k - 1) as f64;
    (0..k)
        .map(|j| if j == k - 1 { max } else { min + step * j as f64 })
        .collect()
}

/// Index of the nearest entry in a non-decreasing `sorted` slice; ties go to
/// the lowest index.
pub fn nearest<T: Copy + Into<f64>>(sorted: &[T], v: f64) -> usize {
    debug_assert!(!sorted.is_empty());
    let i = sorted.partition_point(|&c| c.into() < v);
    let mut best = if i == sorted.len() {
        i - 1
    } else if i == 0 {
        0
    } else {
        let below = v - sorted[i - 1].into();
        let above = sorted[i].into() - v;
        if above < below { i } else { i - 1 }
    };
    while best > 0 && sorted[best - 1].into() == sorted[best].into() {
        best -= 1;
    }
    best
}

fn assign(values: &[f64], centroids: &[f64], out: &mut [u16]) -> f64 {
    let mut sq = 0.0;
    for (slot, &v) in out.iter_mut().zip(values) {
        let j = nearest(centroids, v);
        *slot = j as u16;
        let d = v - centroids[j];
        sq += d * d;
    }
    sq / values.len() as f64
}

/// Sorted distinct values, or `None` if there are more than `k`.
fn distinct_at_most(values: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    (sorted.len() <= k).then_some(sorted)
}

/// Lloyd iterations from uniform levels over `[min, max]` until the
/// assignment stops changing or [`MAX_ITERATIONS`] is reached. Empty clusters
/// keep their centroid.
///
/// When the input has at most `k` distinct values those values are the
/// zero-error optimum and are used directly (padded with the largest value).
pub fn kmeans_1d(values: &[f64], k: usize) -> KMeans {
    assert!(!values.is_empty() && k >= 1);
    if let Some(mut centroids) = distinct_at_most(values, k) {
        let top = *centroids.last().unwrap();
        centroids.resize(k, top);
        let mut assignments = vec![0u16; values.len()];
        let mse = assign(values, &centroids, &mut assignments);
        return KMeans { centroids, assignments, iterations: 0, mse_history: vec![mse] };
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let mut centroids = uniform_levels(min, max, k);
    let mut assignments = vec![0u16; values.len()];
    let mut mse_history = vec![assign(values, &centroids, &mut assignments)];
    let mut next = assignments.clone();
    let mut iterations = 0;
    let mut sums = vec![0f64; k];
    let mut counts = vec![0usize; k];
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        sums.fill(0.0);
        counts.fill(0);
        for (&v, &a) in values.iter().zip(&assignments) {
            sums[a as usize] += v;
            counts[a as usize] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j] / counts[j] as f64;
            }
        }
        let mse = assign(values, &centroids, &mut next);
        let prev = *mse_history.last().unwrap();
        assert!(
            mse <= prev * (1.0 + 1e-12) + 1e-300,
            "k-means MSE increased at iteration {iterations}: {prev} -> {mse}"
        );
        mse_history.push(mse);
        if next == assignments {
            break;
        }
        std::mem::swap(&mut next, &mut assignments);
    }
    KMeans { centroids, assignments, iterations, mse_history }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nearest_scan(c: &[f64], v: f64) -> usize {
        let mut best = 0;
        for j in 1..c.len() {
            if (v - c[j]).abs() < (v - c[best]).abs() {
                best = j;
            }
        }
        best
    }

    #[test]
    fn nearest_ties_go_low() {
        let c = [0.0, 1.0, 1.0, 2.0];
        assert_eq!(nearest(&c, 0.5), 0);
        assert_eq!(nearest(&c, 1.0), 1);
        assert_eq!(nearest(&c, 1.5), 1);
        assert_eq!(nearest(&c, 9.0), 3);
        assert_eq!(nearest(&c, -9.0), 0);
    }

    #[test]
    fn four_distinct_values_are_recovered() {
        // uniform initial levels would merge 0.5 and 0.75 into one cluster
        let values: Vec<f64> = [-1.0, -0.25, 0.5, 0.75].iter().cycle().take(64).copied().collect();
        let km = kmeans_1d(&values, 4);
        assert_eq!(km.centroids, vec![-1.0, -0.25, 0.5, 0.75]);
        // zero within-cluster variance
        assert_eq!(*km.mse_history.last().unwrap(), 0.0);
    }

    #[test]
    fn lloyd_from_uniform_levels() {
        // five clusters into four centroids: levels -1, -1/3, 1/3, 1
        let values = [-1.0, -0.9, -0.3, 0.3, 0.4, 1.0];
        let km = kmeans_1d(&values, 4);
        assert_eq!(km.assignments, vec![0, 0, 1, 2, 2, 3]);
        assert!((km.centroids[0] + 0.95).abs() < 1e-15);
        assert!((km.centroids[2] - 0.35).abs() < 1e-15);
        assert!(km.iterations >= 1);
    }

    #[test]
    fn constant_input() {
        let km = kmeans_1d(&[0.5; 10], 4);
        assert!(km.assignments.iter().all(|&a| a == 0));
        assert_eq!(km.centroids[0], 0.5);
    }

    proptest! {
        #[test]
        fn nearest_matches_scan(mut c in prop::collection::vec(-10.0f64..10.0, 1..20), v in -12.0f64..12.0) {
            c.sort_by(f64::total_cmp);
            prop_assert_eq!(nearest(&c, v), nearest_scan(&c, v));
        }

        #[test]
        fn lloyd_is_monotone_and_sorted(values in prop::collection::vec(-5.0f64..5.0, 1..400), bits in 1u32..=6) {
            let km = kmeans_1d(&values, 1 << bits);
            prop_assert!(km.mse_history.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
            prop_assert!(km.centroids.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(km.iterations <= MAX_ITERATIONS);
        }
    }
}
