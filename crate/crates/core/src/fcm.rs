//! Single-layer fuzzy c-means.
//!
//! Points are rows of an `n x d` matrix, prototypes rows of a `c x d`
//! matrix, and memberships a `c x n` matrix whose columns sum to one.
//! [`fit`] alternates a prototype update and a membership update from a
//! seeded random partition until the objective stops moving.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcmConfig {
    /// Fuzzification coefficient, `> 1`.
    pub m: f64,
    /// Stop once the objective changes by less than this between iterations.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for FcmConfig {
    fn default() -> Self {
        FcmConfig {
            m: 2.0,
            epsilon: 1e-5,
            max_iterations: 100,
            seed: 0,
        }
    }
}

impl FcmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m > 1.0 && self.m.is_finite()) {
            return Err(Error::InvalidConfig(format!("fuzzifier m must be > 1, got {}", self.m)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fuzzy partition, `c x n`: entry `(i, k)` is the membership of point `k` in cluster `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix(Array2<f64>);

/// Tolerance on column sums accepted by [`MembershipMatrix::new`].
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-10;

impl MembershipMatrix {
    pub fn new(u: Array2<f64>) -> Result<Self> {
        if u.nrows() == 0 || u.ncols() == 0 {
            return Err(Error::Shape("empty membership matrix".into()));
        }
        if u.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig("memberships must lie in [0, 1]".into()));
        }
        for (k, col) in u.columns().into_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > COLUMN_SUM_TOLERANCE {
                return Err(Error::InvalidConfig(format!("column {k} sums to {s}")));
            }
        }
        Ok(MembershipMatrix(u))
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn n_clusters(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_points(&self) -> usize {
        self.0.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcmResult {
    pub prototypes: Array2<f64>,
    pub memberships: MembershipMatrix,
    /// Objective after each completed iteration.
    pub objective_trace: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl FcmResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("fit runs at least one iteration")
    }
}

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn pow_m(u: f64, m: f64) -> f64 {
    if m == 2.0 {
        u * u
    } else {
        u.powf(m)
    }
}

fn check_columns(x: ArrayView2<f64>, v: ArrayView2<f64>) -> Result<()> {
    if x.ncols() != v.ncols() {
        return Err(Error::Shape(format!(
            "points have {} features, prototypes {}",
            x.ncols(),
            v.ncols()
        )));
    }
    Ok(())
}

/// `J = sum_i sum_k u_ik^m ||x_k - v_i||^2`.
pub fn objective(x: &Array2<f64>, u: &MembershipMatrix, v: &Array2<f64>, m: f64) -> Result<f64> {
    check_columns(x.view(), v.view())?;
    let u = u.as_array();
    if u.nrows() != v.nrows() || u.ncols() != x.nrows() {
        return Err(Error::Shape(format!(
            "memberships {:?} do not match {} prototypes x {} points",
            u.dim(),
            v.nrows(),
            x.nrows()
        )));
    }
    let mut j = 0.0;
    for (i, vi) in v.rows().into_iter().enumerate() {
        for (k, xk) in x.rows().into_iter().enumerate() {
            j += pow_m(u[[i, k]], m) * sq_dist(xk, vi);
        }
    }
    Ok(j)
}

/// Membership update for fixed prototypes.
///
/// A point sitting exactly on one or more prototypes is assigned to them
/// in equal shares and to no other cluster.
pub fn update_memberships(x: &Array2<f64>, v: &Array2<f64>, m: f64) -> Result<MembershipMatrix> {
    check_columns(x.view(), v.view())?;
    let c = v.nrows();
    if c == 0 {
        return Err(Error::Shape("no prototypes".into()));
    }
    let exponent = 1.0 / (m - 1.0);
    let mut u = Array2::zeros((c, x.nrows()));
    let mut d2 = vec![0.0; c];
    for (k, xk) in x.rows().into_iter().enumerate() {
        for (i, vi) in v.rows().into_iter().enumerate() {
            d2[i] = sq_dist(xk, vi);
        }
        let zeros = d2.iter().filter(|&&d| d == 0.0).count();
        if zeros > 0 {
            let share = 1.0 / zeros as f64;
            for i in 0..c {
                u[[i, k]] = if d2[i] == 0.0 { share } else { 0.0 };
            }
            continue;
        }
        // (d_ik / d_jk)^(2/(m-1)) taken relative to the nearest prototype keeps every weight in (0, 1].
        let nearest = d2.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut total = 0.0;
        for i in 0..c {
            let w = (nearest / d2[i]).powf(exponent);
            u[[i, k]] = w;
            total += w;
        }
        for i in 0..c {
            u[[i, k]] /= total;
        }
    }
    Ok(MembershipMatrix(u))
}

/// Prototype update for fixed memberships: `v_i = sum_k u_ik^m x_k / sum_k u_ik^m`.
pub fn update_prototypes(x: &Array2<f64>, u: &MembershipMatrix, m: f64) -> Result<Array2<f64>> {
    let u = u.as_array();
    if u.ncols() != x.nrows() {
        return Err(Error::Shape(format!(
            "memberships cover {} points, data has {}",
            u.ncols(),
            x.nrows()
        )));
    }
    let mut v = Array2::zeros((u.nrows(), x.ncols()));
    for (i, mut vi) in v.rows_mut().into_iter().enumerate() {
        let mut weight = 0.0;
        for (k, xk) in x.rows().into_iter().enumerate() {
            let w = pow_m(u[[i, k]], m);
            if w > 0.0 {
                vi.scaled_add(w, &xk);
                weight += w;
            }
        }
        if !(weight > 0.0) {
            return Err(Error::Generation(format!("cluster {i} has zero total membership")));
        }
        vi /= weight;
    }
    Ok(v)
}

/// Seeded starting partition: uniform(0,1) entries, columns normalized.
pub fn initial_memberships(n: usize, c: usize, seed: u64) -> MembershipMatrix {
    let mut rng = rng::from_seed(seed);
    let mut u = Array2::from_shape_simple_fn((c, n), || rng.random::<f64>() + f64::EPSILON);
    for mut col in u.columns_mut() {
        let s = col.sum();
        col /= s;
    }
    MembershipMatrix(u)
}

pub fn fit(x: &Array2<f64>, c: usize, config: &FcmConfig) -> Result<FcmResult> {
    config.validate()?;
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 points, got {n}")));
    }
    if c == 0 || c > n {
        return Err(Error::InvalidConfig(format!("cluster count must satisfy 1 <= c <= n, got c={c}, n={n}")));
    }

    let mut u = initial_memberships(n, c, config.seed);
    let mut v = Array2::zeros((c, x.ncols()));
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iterations {
        v = update_prototypes(x, &u, config.m)?;
        u = update_memberships(x, &v, config.m)?;
        let j = objective(x, &u, &v, config.m)?;
        let done = trace.last().is_some_and(|prev: &f64| (j - prev).abs() < config.epsilon);
        trace.push(j);
        if done {
            converged = true;
            break;
        }
    }
    Ok(FcmResult {
        prototypes: v,
        memberships: u,
        iterations_used: trace.len(),
        objective_trace: trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::from_seed(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut r))
    }

    fn blobs(n_per: usize, seed: u64) -> Array2<f64> {
        let mut x = random_matrix(2 * n_per, 2, seed);
        for k in n_per..2 * n_per {
            x[[k, 0]] += 5.0;
            x[[k, 1]] += 3.0;
        }
        x
    }

    #[test]
    fn objective_zero_for_exact_assignment() {
        let x = array![[0.0, 0.0], [1.0, 2.0]];
        let u = MembershipMatrix::new(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(objective(&x, &u, &x, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn objective_single_distance() {
        let x = array![[0.0, 0.0]];
        let u = MembershipMatrix::new(array![[1.0]]).unwrap();
        assert_eq!(objective(&x, &u, &array![[3.0, 4.0]], 2.0).unwrap(), 25.0);
    }

    #[test]
    fn objective_matches_naive_double_loop() {
        let x = random_matrix(6, 2, 11);
        let v = random_matrix(2, 2, 12);
        let u = MembershipMatrix::new(Array2::from_elem((2, 6), 0.5)).unwrap();
        let mut expected = 0.0;
        for i in 0..2 {
            for k in 0..6 {
                let dx = x[[k, 0]] - v[[i, 0]];
                let dy = x[[k, 1]] - v[[i, 1]];
                expected += 0.25 * (dx * dx + dy * dy);
            }
        }
        assert!((objective(&x, &u, &v, 2.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn objective_shape_mismatch() {
        let u = MembershipMatrix::new(array![[1.0]]).unwrap();
        assert!(matches!(objective(&array![[0.0, 0.0]], &u, &array![[0.0]], 2.0), Err(Error::Shape(_))));
    }

    #[test]
    fn memberships_hand_evaluated() {
        // d = (1, 2): u_1 = 1 / (1 + (1/2)^2) = 0.8
        let u = update_memberships(&array![[1.0, 0.0]], &array![[0.0, 0.0], [3.0, 0.0]], 2.0).unwrap();
        assert!((u.as_array()[[0, 0]] - 0.8).abs() < 1e-15);
        assert!((u.as_array()[[1, 0]] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn memberships_symmetric_point() {
        let u = update_memberships(&array![[0.0, 1.0]], &array![[-1.0, 1.0], [1.0, 1.0]], 2.0).unwrap();
        assert_eq!(u.as_array().column(0).to_vec(), vec![0.5, 0.5]);
    }

    #[test]
    fn memberships_singular_point_is_one_hot() {
        let v = array![[1.0, 1.0], [0.0, 0.0], [5.0, 5.0]];
        let u = update_memberships(&array![[1.0, 1.0]], &v, 2.0).unwrap();
        assert_eq!(u.as_array().column(0).to_vec(), vec![1.0, 0.0, 0.0]);
        let v = array![[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]];
        let u = update_memberships(&array![[1.0, 1.0]], &v, 2.0).unwrap();
        assert_eq!(u.as_array().column(0).to_vec(), vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn prototypes_hand_evaluated() {
        // weights 0.8^2 = 0.64 and 0.2^2 = 0.04: v = 0.04 * 4 / 0.68
        let x = array![[0.0, 0.0], [4.0, 0.0]];
        let u = MembershipMatrix::new(array![[0.8, 0.2], [0.2, 0.8]]).unwrap();
        let v = update_prototypes(&x, &u, 2.0).unwrap();
        assert!((v[[0, 0]] - 0.16 / 0.68).abs() < 1e-15);
        assert!((v[[0, 0]] - 0.2353).abs() < 1e-4);
        assert_eq!(v[[0, 1]], 0.0);
    }

    #[test]
    fn prototypes_hard_assignment_is_mean() {
        let x = array![[0.0, 0.0], [2.0, 2.0], [10.0, 0.0], [4.0, 4.0]];
        let u = MembershipMatrix::new(array![[1.0, 1.0, 0.0, 1.0], [0.0, 0.0, 1.0, 0.0]]).unwrap();
        let v = update_prototypes(&x, &u, 2.0).unwrap();
        assert_eq!(v, array![[2.0, 2.0], [10.0, 0.0]]);
    }

    #[test]
    fn prototypes_zero_weight_cluster_errors() {
        let x = array![[0.0], [1.0]];
        let u = MembershipMatrix::new(array![[1.0, 1.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(update_prototypes(&x, &u, 2.0), Err(Error::Generation(_))));
    }

    #[test]
    fn fit_two_points_two_clusters() {
        let x = array![[0.0, 0.0], [3.0, 1.0]];
        let cfg = FcmConfig { epsilon: 1e-20, max_iterations: 200, ..FcmConfig::default() };
        let res = fit(&x, 2, &cfg).unwrap();
        let mut protos: Vec<(f64, f64)> = res.prototypes.rows().into_iter().map(|r| (r[0], r[1])).collect();
        protos.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((protos[0].0).abs() < 1e-6 && (protos[0].1).abs() < 1e-6, "{protos:?}");
        assert!((protos[1].0 - 3.0).abs() < 1e-6 && (protos[1].1 - 1.0).abs() < 1e-6, "{protos:?}");
        assert!(res.objective() < 1e-10);
    }

    #[test]
    fn fit_single_cluster_is_centroid() {
        let x = random_matrix(17, 3, 5);
        let res = fit(&x, 1, &FcmConfig::default()).unwrap();
        let centroid = x.mean_axis(ndarray::Axis(0)).unwrap();
        for (a, b) in res.prototypes.row(0).iter().zip(centroid.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    /// Straight transcription of the alternating updates with the ratio form
    /// of the membership formula, sharing only the seeded starting partition.
    fn reference_fcm(x: &Array2<f64>, c: usize, m: f64, eps: f64, max_iter: usize, seed: u64) -> (Vec<f64>, Array2<f64>) {
        let (n, d) = x.dim();
        let mut u = initial_memberships(n, c, seed).into_inner();
        let mut v = Array2::<f64>::zeros((c, d));
        let mut trace: Vec<f64> = Vec::new();
        for _ in 0..max_iter {
            for i in 0..c {
                let mut num = vec![0.0; d];
                let mut den = 0.0;
                for k in 0..n {
                    let w = u[[i, k]].powf(m);
                    for f in 0..d {
                        num[f] += w * x[[k, f]];
                    }
                    den += w;
                }
                for f in 0..d {
                    v[[i, f]] = num[f] / den;
                }
            }
            let dist = |k: usize, i: usize| -> f64 {
                (0..d).map(|f| (x[[k, f]] - v[[i, f]]).powi(2)).sum::<f64>().sqrt()
            };
            for k in 0..n {
                for i in 0..c {
                    let s: f64 = (0..c).map(|j| (dist(k, i) / dist(k, j)).powf(2.0 / (m - 1.0))).sum();
                    u[[i, k]] = 1.0 / s;
                }
            }
            let mut j = 0.0;
            for i in 0..c {
                for k in 0..n {
                    j += u[[i, k]].powf(m) * dist(k, i).powi(2);
                }
            }
            let stop = trace.last().is_some_and(|p| (j - p).abs() < eps);
            trace.push(j);
            if stop {
                break;
            }
        }
        (trace, v)
    }

    #[test]
    fn fit_matches_reference_transcription() {
        let x = blobs(15, 21);
        let cfg = FcmConfig { seed: 99, ..FcmConfig::default() };
        let res = fit(&x, 2, &cfg).unwrap();
        let (trace, v) = reference_fcm(&x, 2, 2.0, cfg.epsilon, cfg.max_iterations, 99);
        assert_eq!(res.objective_trace.len(), trace.len());
        assert!((res.objective() - trace.last().unwrap()).abs() < 1e-8);
        for (a, b) in res.prototypes.iter().zip(v.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn fit_fixed_point() {
        let x = blobs(20, 3);
        let cfg = FcmConfig { seed: 4, ..FcmConfig::default() };
        let res = fit(&x, 3, &cfg).unwrap();
        assert!(res.converged);
        let v = update_prototypes(&x, &res.memberships, cfg.m).unwrap();
        let u = update_memberships(&x, &v, cfg.m).unwrap();
        let j = objective(&x, &u, &v, cfg.m).unwrap();
        assert!((j - res.objective()).abs() < cfg.epsilon);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = blobs(10, 8);
        let cfg = FcmConfig { seed: 17, ..FcmConfig::default() };
        assert_eq!(fit(&x, 3, &cfg).unwrap(), fit(&x, 3, &cfg).unwrap());
    }

    #[test]
    fn fit_rejects_bad_cluster_counts() {
        let x = blobs(2, 1);
        assert!(fit(&x, x.nrows() + 1, &FcmConfig::default()).is_err());
        assert!(fit(&x, 0, &FcmConfig::default()).is_err());
        assert!(fit(&array![[1.0]], 1, &FcmConfig::default()).is_err());
        let bad = FcmConfig { m: 1.0, ..FcmConfig::default() };
        assert!(fit(&x, 2, &bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn fit_invariants(seed: u64, n in 3usize..25, d in 1usize..4, c_frac in 0.0f64..1.0, m in 1.3f64..3.0) {
            let x = random_matrix(n, d, seed);
            let c = 1 + ((n - 2) as f64 * c_frac) as usize;
            let cfg = FcmConfig { m, seed: seed.wrapping_add(1), ..FcmConfig::default() };
            let res = fit(&x, c, &cfg).unwrap();
            for col in res.memberships.as_array().columns() {
                prop_assert!((col.sum() - 1.0).abs() < 1e-10);
            }
            for w in res.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
            }
            for f in 0..d {
                let col = x.column(f);
                let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for v in res.prototypes.column(f) {
                    prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }
    }
}
