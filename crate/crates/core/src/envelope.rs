//! Multilayer envelope network.
//!
//! Layer `l` clusters the minority rows together with every prototype
//! produced by earlier layers, then shifts its new prototypes so their
//! kernel mean embedding matches the layer input (or the original rows).
//! The corrected prototypes join the augmented set before the next layer.

use ndarray::{concatenate, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::{self, FcmConfig};
use crate::mmd::{self, Kernel, KernelChoice};

/// Per-layer cluster counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    /// `C_1 .. C_L`.
    pub cluster_counts: Vec<usize>,
    /// Shrink ratio: layer `l` generates `ceil(|X^l| / t)` prototypes.
    pub t: f64,
    pub layer_cap: usize,
    pub min_count: usize,
    /// Instances to generate, `Maj - Min`.
    pub deficit: usize,
    /// Instances to fill by duplication when the capped plan falls short.
    pub shortfall_fill: usize,
}

impl LayerPlan {
    pub fn layers(&self) -> usize {
        self.cluster_counts.len()
    }

    pub fn total_clusters(&self) -> usize {
        self.cluster_counts.iter().sum()
    }

    /// `|X^l|` for 1-based layer `l`.
    pub fn input_size(&self, layer: usize) -> usize {
        self.min_count + self.cluster_counts[..layer - 1].iter().sum::<usize>()
    }
}

impl std::fmt::Display for LayerPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let counts: Vec<String> = self.cluster_counts.iter().map(ToString::to_string).collect();
        write!(f, "L={} C=[{}] deficit={}", self.layers(), counts.join(","), self.deficit)?;
        if self.shortfall_fill > 0 {
            write!(f, " shortfall={}", self.shortfall_fill)?;
        }
        Ok(())
    }
}

pub const DEFAULT_T: f64 = 2.0;
pub const DEFAULT_LAYER_CAP: usize = 9;

/// Adds layers until the generated total covers `maj_count - min_count` or
/// the cap is reached. Each layer's count is clamped to `|X^l| - 1`.
pub fn plan_layers(min_count: usize, maj_count: usize, t: f64, layer_cap: usize) -> Result<LayerPlan> {
    if min_count < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 minority rows, got {min_count}")));
    }
    if maj_count <= min_count {
        return Err(Error::InvalidConfig(format!(
            "nothing to generate: majority {maj_count} <= minority {min_count}"
        )));
    }
    if !(t > 1.0 && t.is_finite()) {
        return Err(Error::InvalidConfig(format!("t must be > 1, got {t}")));
    }
    if layer_cap == 0 {
        return Err(Error::InvalidConfig("layer cap must be >= 1".into()));
    }
    let deficit = maj_count - min_count;
    let mut counts = Vec::new();
    let mut size = min_count;
    let mut total = 0;
    while total < deficit && counts.len() < layer_cap {
        let c = ((size as f64 / t).ceil() as usize).clamp(1, size - 1);
        counts.push(c);
        total += c;
        size += c;
    }
    Ok(LayerPlan {
        cluster_counts: counts,
        t,
        layer_cap,
        min_count,
        deficit,
        shortfall_fill: deficit.saturating_sub(total),
    })
}

/// Prototypes of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeLayer {
    /// FCM prototypes before correction.
    pub raw: Array2<f64>,
    /// Prototypes that enter the augmented set (equal to `raw` without correction).
    pub prototypes: Array2<f64>,
    pub fcm_iterations: usize,
    pub fcm_converged: bool,
}

/// FCM on the augmented input of one layer.
pub fn layer_step(input: &Array2<f64>, clusters: usize, config: &FcmConfig) -> Result<PrototypeLayer> {
    if clusters >= input.nrows() {
        return Err(Error::InvalidConfig(format!(
            "layer asks for {clusters} clusters from {} inputs",
            input.nrows()
        )));
    }
    let res = fcm::fit(input, clusters, config)?;
    Ok(PrototypeLayer {
        prototypes: res.prototypes.clone(),
        raw: res.prototypes,
        fcm_iterations: res.iterations_used,
        fcm_converged: res.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionTarget {
    /// Match each layer to its own augmented input.
    LayerInput,
    /// Match every layer to the original minority rows.
    Original,
}

/// Interlayer discrepancy correction settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    /// `false` runs the plain multilayer FCM.
    pub enabled: bool,
    pub target: CorrectionTarget,
    /// Gradient step for the rbf kernel.
    pub step: f64,
    pub max_steps: usize,
    /// Stop once a step improves the discrepancy by less than this fraction.
    pub tolerance: f64,
}

impl Default for Correction {
    fn default() -> Self {
        Correction {
            enabled: true,
            target: CorrectionTarget::LayerInput,
            step: 0.01,
            max_steps: 50,
            tolerance: 1e-6,
        }
    }
}

fn column_mean(x: &Array2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("nonempty matrix")
}

/// Gradient of the squared rbf discrepancy with respect to each prototype row.
pub fn rbf_mmd_gradient(x: &Array2<f64>, v: &Array2<f64>, bandwidth: f64) -> Array2<f64> {
    let k = Kernel::Rbf { bandwidth };
    let (n, c) = (x.nrows() as f64, v.nrows() as f64);
    let s2 = bandwidth * bandwidth;
    let mut grad = Array2::zeros(v.dim());
    for (i, vi) in v.rows().into_iter().enumerate() {
        let mut g = grad.row_mut(i);
        for xk in x.rows() {
            let w = 2.0 * k.eval(vi, xk) / (n * c * s2);
            g.zip_mut_with(&(&vi - &xk), |a, d| *a += w * d);
        }
        for vj in v.rows() {
            let w = -2.0 * k.eval(vi, vj) / (c * c * s2);
            g.zip_mut_with(&(&vi - &vj), |a, d| *a += w * d);
        }
    }
    grad
}

/// Moves prototypes to reduce their discrepancy from `target`.
///
/// Linear kernel: translate by the mean gap, which zeroes the discrepancy and
/// keeps pairwise geometry. Rbf kernel: gradient descent with backtracking;
/// a step is only accepted if it does not increase the discrepancy.
pub fn midmd_correct(target: &Array2<f64>, prototypes: &Array2<f64>, kernel: &Kernel, settings: &Correction) -> Result<Array2<f64>> {
    if target.ncols() != prototypes.ncols() {
        return Err(Error::Shape(format!("{} vs {} columns", target.ncols(), prototypes.ncols())));
    }
    match *kernel {
        Kernel::Linear => {
            let shift = column_mean(target) - column_mean(prototypes);
            Ok(prototypes + &shift)
        }
        Kernel::Rbf { bandwidth } => {
            let mut current = prototypes.clone();
            let mut value = mmd::mmd_sq(target, &current, kernel)?.mmd_sq;
            for _ in 0..settings.max_steps {
                if value <= 0.0 {
                    break;
                }
                let grad = rbf_mmd_gradient(target, &current, bandwidth);
                let mut lr = settings.step;
                let mut accepted = None;
                for _ in 0..30 {
                    let candidate = &current - &(&grad * lr);
                    let cand_value = mmd::mmd_sq(target, &candidate, kernel)?.mmd_sq;
                    if cand_value <= value {
                        accepted = Some((candidate, cand_value));
                        break;
                    }
                    lr *= 0.5;
                }
                let Some((candidate, cand_value)) = accepted else { break };
                let improvement = (value - cand_value) / value;
                current = candidate;
                value = cand_value;
                if improvement < settings.tolerance {
                    break;
                }
            }
            Ok(current)
        }
    }
}

/// Discrepancy bookkeeping for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub input_size: usize,
    pub clusters: usize,
    pub mmd_before: f64,
    pub mmd_after: f64,
    /// Resolved rbf bandwidth, absent for the linear kernel.
    pub bandwidth: Option<f64>,
    pub fcm_iterations: usize,
    pub fcm_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeOutput {
    pub layers: Vec<PrototypeLayer>,
    pub diagnostics: Vec<LayerDiagnostics>,
    /// All layer prototypes, layer 1 first.
    pub generated: Array2<f64>,
}

impl EnvelopeOutput {
    pub fn layer_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.prototypes.nrows()).collect()
    }
}

/// Runs every layer of `plan` over the minority rows. Layer `l` seeds its
/// FCM with `fcm.seed ^ l`.
pub fn run(
    minority: &Array2<f64>,
    plan: &LayerPlan,
    fcm: &FcmConfig,
    kernel: &KernelChoice,
    correction: &Correction,
) -> Result<EnvelopeOutput> {
    if minority.nrows() != plan.min_count {
        return Err(Error::InvalidConfig(format!(
            "plan built for {} minority rows, got {}",
            plan.min_count,
            minority.nrows()
        )));
    }
    fcm.validate()?;
    kernel.validate()?;
    let mut augmented = minority.clone();
    let mut layers = Vec::with_capacity(plan.layers());
    let mut diagnostics = Vec::with_capacity(plan.layers());
    for (l, &clusters) in plan.cluster_counts.iter().enumerate() {
        let index = l + 1;
        let cfg = FcmConfig {
            seed: fcm.seed ^ index as u64,
            ..*fcm
        };
        let mut layer = layer_step(&augmented, clusters, &cfg)?;
        let target = match correction.target {
            CorrectionTarget::LayerInput => &augmented,
            CorrectionTarget::Original => minority,
        };
        let k = kernel.resolve(target, &layer.raw);
        let before = mmd::mmd_sq(target, &layer.raw, &k)?.mmd_sq;
        if correction.enabled {
            layer.prototypes = midmd_correct(target, &layer.raw, &k, correction)?;
        }
        let after = if correction.enabled {
            mmd::mmd_sq(target, &layer.prototypes, &k)?.mmd_sq
        } else {
            before
        };
        diagnostics.push(LayerDiagnostics {
            layer: index,
            input_size: augmented.nrows(),
            clusters,
            mmd_before: before,
            mmd_after: after,
            bandwidth: match k {
                Kernel::Rbf { bandwidth } => Some(bandwidth),
                Kernel::Linear => None,
            },
            fcm_iterations: layer.fcm_iterations,
            fcm_converged: layer.fcm_converged,
        });
        augmented = concatenate![Axis(0), augmented, layer.prototypes];
        layers.push(layer);
    }
    let generated = augmented.slice(ndarray::s![minority.nrows().., ..]).to_owned();
    Ok(EnvelopeOutput {
        layers,
        diagnostics,
        generated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fcm::MembershipMatrix;
    use crate::rng;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut r = rng::from_seed(seed);
        Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut r))
    }

    #[test]
    fn plan_vertebral_counts() {
        let p = plan_layers(100, 210, 2.0, 9).unwrap();
        assert_eq!(p.cluster_counts, vec![50, 75]);
        assert_eq!((p.deficit, p.shortfall_fill, p.total_clusters()), (110, 0, 125));
        assert_eq!(p.to_string(), "L=2 C=[50,75] deficit=110");
    }

    #[test]
    fn plan_yeast_counts() {
        // 50 -> 25 (75) -> 38 (113) -> 57 (170) -> 85 (255) -> 128 (383) -> 192
        let p = plan_layers(50, 456, 2.0, 9).unwrap();
        assert_eq!(p.cluster_counts, vec![25, 38, 57, 85, 128, 192]);
        assert_eq!(p.total_clusters(), 525);
        assert_eq!(p.deficit, 406);
    }

    #[test]
    fn plan_single_layer() {
        let p = plan_layers(10, 11, 2.0, 9).unwrap();
        assert_eq!(p.cluster_counts, vec![5]);
        assert_eq!(p.deficit, 1);
    }

    #[test]
    fn plan_capped_reports_shortfall() {
        let p = plan_layers(4, 100, 2.0, 2).unwrap();
        assert_eq!(p.cluster_counts, vec![2, 3]);
        assert_eq!(p.shortfall_fill, 91);
    }

    #[test]
    fn plan_clamps_to_input_minus_one() {
        let p = plan_layers(3, 20, 1.01, 3).unwrap();
        assert_eq!(p.cluster_counts, vec![2, 4, 8]);
    }

    #[test]
    fn plan_errors() {
        assert!(plan_layers(5, 5, 2.0, 9).is_err());
        assert!(plan_layers(1, 5, 2.0, 9).is_err());
        assert!(plan_layers(5, 10, 1.0, 9).is_err());
        assert!(plan_layers(5, 10, 2.0, 0).is_err());
    }

    #[test]
    fn layer_step_square_center() {
        let x = array![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        let layer = layer_step(&x, 1, &FcmConfig::default()).unwrap();
        assert!((layer.raw[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((layer.raw[[0, 1]] - 1.0).abs() < 1e-12);
        assert!(layer_step(&x, 4, &FcmConfig::default()).is_err());
    }

    /// The second-layer prototype update on the concatenated input, evaluated
    /// as separate sums over original rows and first-layer prototypes.
    #[test]
    fn augmented_update_equals_split_sums() {
        let x = random_matrix(9, 3, 1);
        let v1 = random_matrix(4, 3, 2);
        let augmented = concatenate![Axis(0), x, v1];
        let u = fcm::initial_memberships(13, 3, 7);
        let m = 2.0;
        let direct = fcm::update_prototypes(&augmented, &u, m).unwrap();
        let ua = u.as_array();
        for i in 0..3 {
            let mut num = Array1::<f64>::zeros(3);
            let mut den = 0.0;
            for k in 0..9 {
                num = num + &x.row(k) * ua[[i, k]].powf(m);
                den += ua[[i, k]].powf(m);
            }
            for j in 0..4 {
                num = num + &v1.row(j) * ua[[i, 9 + j]].powf(m);
                den += ua[[i, 9 + j]].powf(m);
            }
            for f in 0..3 {
                assert!((direct[[i, f]] - num[f] / den).abs() < 1e-12);
            }
        }
        let _ = MembershipMatrix::new(ua.clone()).unwrap();
    }

    #[test]
    fn linear_correction_undoes_shift() {
        let x = random_matrix(6, 2, 3);
        let shifted = &x + 1.0;
        let corrected = midmd_correct(&x, &shifted, &Kernel::Linear, &Correction::default()).unwrap();
        for (a, b) in corrected.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(mmd::mmd_sq(&x, &corrected, &Kernel::Linear).unwrap().mmd_sq < 1e-10);
    }

    #[test]
    fn linear_correction_fixed_point() {
        let x = array![[0.0, 0.0], [2.0, 2.0]];
        let v = array![[1.0, 0.0], [1.0, 2.0]];
        let corrected = midmd_correct(&x, &v, &Kernel::Linear, &Correction::default()).unwrap();
        assert_eq!(corrected, v);
    }

    #[test]
    fn rbf_gradient_matches_finite_differences() {
        let x = random_matrix(20, 2, 10);
        let v = random_matrix(5, 2, 11) * 0.5 + 0.7;
        let bw = 1.0;
        let k = Kernel::Rbf { bandwidth: bw };
        let grad = rbf_mmd_gradient(&x, &v, bw);
        let h = 1e-6;
        for i in 0..5 {
            for f in 0..2 {
                let mut plus = v.clone();
                plus[[i, f]] += h;
                let mut minus = v.clone();
                minus[[i, f]] -= h;
                let raw = |m: &Array2<f64>| {
                    let e = mmd::mmd_sq(&x, m, &k).unwrap();
                    e.mean_xx + e.mean_vv - 2.0 * e.mean_xv
                };
                let fd = (raw(&plus) - raw(&minus)) / (2.0 * h);
                let rel = (fd - grad[[i, f]]).abs() / grad[[i, f]].abs().max(1e-8);
                assert!(rel < 1e-4, "({i},{f}) fd={fd} analytic={}", grad[[i, f]]);
            }
        }
        let before = mmd::mmd_sq(&x, &v, &k).unwrap().mmd_sq;
        let corrected = midmd_correct(&x, &v, &k, &Correction::default()).unwrap();
        let after = mmd::mmd_sq(&x, &corrected, &k).unwrap().mmd_sq;
        assert!(after <= before, "{after} > {before}");
        assert!(after < before);
    }

    #[test]
    fn run_single_layer_two_points() {
        let x = array![[0.0, 0.0], [2.0, 4.0]];
        let plan = plan_layers(2, 3, 2.0, 9).unwrap();
        let out = run(&x, &plan, &FcmConfig::default(), &KernelChoice::Linear, &Correction::default()).unwrap();
        assert_eq!(out.generated.dim(), (1, 2));
        assert!((out.generated[[0, 0]] - 1.0).abs() < 1e-12);
        assert!((out.generated[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn run_two_layers_on_blob() {
        let x = random_matrix(40, 2, 5);
        // 20 + 30 falls short of 60, the third layer overshoots
        let plan = plan_layers(40, 100, 2.0, 9).unwrap();
        assert_eq!(plan.cluster_counts, vec![20, 30, 45]);
        let out = run(&x, &plan, &FcmConfig::default(), &KernelChoice::Linear, &Correction::default()).unwrap();
        assert_eq!(out.layer_sizes(), plan.cluster_counts);
        assert_eq!(out.generated.nrows(), plan.total_clusters());
        for d in &out.diagnostics {
            assert!(d.mmd_after <= 1e-10, "{d:?}");
            assert!(d.mmd_after <= d.mmd_before + 1e-12);
        }
        assert_eq!(out.diagnostics[1].input_size, 40 + plan.cluster_counts[0]);
    }

    #[test]
    fn run_without_correction_keeps_raw() {
        let x = random_matrix(12, 3, 6);
        let plan = plan_layers(12, 30, 2.0, 9).unwrap();
        let corr = Correction { enabled: false, ..Correction::default() };
        let out = run(&x, &plan, &FcmConfig::default(), &KernelChoice::Linear, &corr).unwrap();
        for (layer, d) in out.layers.iter().zip(&out.diagnostics) {
            assert_eq!(layer.raw, layer.prototypes);
            assert_eq!(d.mmd_before, d.mmd_after);
        }
    }

    #[test]
    fn run_rbf_never_increases() {
        let x = random_matrix(25, 2, 8);
        let plan = plan_layers(25, 70, 2.0, 9).unwrap();
        let kernel = KernelChoice::Rbf { bandwidth: None };
        let out = run(&x, &plan, &FcmConfig::default(), &kernel, &Correction::default()).unwrap();
        for d in &out.diagnostics {
            assert!(d.mmd_after <= d.mmd_before + 1e-12);
            assert!(d.bandwidth.unwrap() > 0.0);
        }
    }

    #[test]
    fn run_rejects_inconsistent_plan() {
        let x = random_matrix(10, 2, 1);
        let plan = plan_layers(12, 30, 2.0, 9).unwrap();
        assert!(run(&x, &plan, &FcmConfig::default(), &KernelChoice::Linear, &Correction::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn run_invariants(seed: u64, n in 4usize..30, extra in 1usize..60, d in 1usize..4) {
            let mut r = rng::from_seed(seed);
            let x = random_matrix(n, d, r.random());
            let plan = plan_layers(n, n + extra, 2.0, 9).unwrap();
            let cfg = FcmConfig { seed, ..FcmConfig::default() };
            let out = run(&x, &plan, &cfg, &KernelChoice::Linear, &Correction::default()).unwrap();
            let again = run(&x, &plan, &cfg, &KernelChoice::Linear, &Correction::default()).unwrap();
            prop_assert_eq!(&out, &again);
            prop_assert_eq!(out.generated.nrows(), plan.total_clusters());
            let mut input = x.clone();
            for (layer, diag) in out.layers.iter().zip(&out.diagnostics) {
                prop_assert_eq!(diag.input_size, input.nrows());
                prop_assert!(diag.mmd_after <= 1e-10);
                // raw prototypes stay inside the input's bounding box; the
                // correction moves each coordinate by at most the mean gap
                let gap = column_mean(&input) - column_mean(&layer.raw);
                for f in 0..d {
                    let col = input.column(f);
                    let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    for (raw, fixed) in layer.raw.column(f).iter().zip(layer.prototypes.column(f)) {
                        prop_assert!(*raw >= lo - 1e-12 && *raw <= hi + 1e-12);
                        prop_assert!((fixed - raw).abs() <= gap[f].abs() + 1e-12);
                    }
                }
                input = concatenate![Axis(0), input, layer.prototypes];
            }
        }
    }
}
