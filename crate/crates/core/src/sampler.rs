//! Balancing workflows: the envelope network (with or without the
//! discrepancy correction) and two baselines, SMOTE and random duplication.
//!
//! Every method returns the untouched input rows followed by exactly
//! `Maj - Min` new minority rows, each tagged with its provenance.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_stats, normalize_minmax, Dataset};
use crate::envelope::{self, Correction, CorrectionTarget, EnvelopeOutput, LayerDiagnostics, LayerPlan};
use crate::error::{Error, Result};
use crate::fcm::{sq_dist, FcmConfig};
use crate::mmd::KernelChoice;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Multilayer FCM with per-layer discrepancy correction.
    MifcIdmd,
    /// Multilayer FCM without correction.
    Mifcm,
    Smote,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MifcIdmd, Method::Mifcm, Method::Smote, Method::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::MifcIdmd => "mifc-idmd",
            Method::Mifcm => "mifcm",
            Method::Smote => "smote",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s || m.as_str().replace('-', "_") == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub method: Method,
    pub t: f64,
    pub layer_cap: usize,
    pub kernel: KernelChoice,
    pub correction_target: CorrectionTarget,
    /// FCM settings; the seed field is overridden by `seed`.
    pub fcm: FcmConfig,
    pub smote_k: usize,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            method: Method::MifcIdmd,
            t: envelope::DEFAULT_T,
            layer_cap: envelope::DEFAULT_LAYER_CAP,
            kernel: KernelChoice::Linear,
            correction_target: CorrectionTarget::LayerInput,
            fcm: FcmConfig::default(),
            smote_k: 5,
            seed: 0,
        }
    }
}

impl BalanceConfig {
    pub fn with_method(method: Method) -> Self {
        BalanceConfig {
            method,
            ..BalanceConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.smote_k == 0 {
            return Err(Error::InvalidConfig("smote k must be >= 1".into()));
        }
        if matches!(self.method, Method::MifcIdmd | Method::Mifcm) {
            self.fcm.validate()?;
            self.kernel.validate()?;
            if !(self.t > 1.0 && self.t.is_finite()) {
                return Err(Error::InvalidConfig(format!("t must be > 1, got {}", self.t)));
            }
            if self.layer_cap == 0 {
                return Err(Error::InvalidConfig("layer cap must be >= 1".into()));
            }
        }
        Ok(())
    }

    fn correction(&self) -> Correction {
        Correction {
            enabled: self.method == Method::MifcIdmd,
            target: self.correction_target,
            ..Correction::default()
        }
    }
}

/// Origin of a row in a balanced dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original,
    /// Envelope prototype from the given 1-based layer.
    Generated { layer: usize },
    Duplicated,
    Interpolated,
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        matches!(self, Provenance::Original)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Generated { layer } => write!(f, "generated:layer_{layer}"),
            Provenance::Duplicated => f.write_str("duplicated"),
            Provenance::Interpolated => f.write_str("interpolated"),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "original" => Provenance::Original,
            "duplicated" => Provenance::Duplicated,
            "interpolated" => Provenance::Interpolated,
            _ => {
                let layer = s
                    .strip_prefix("generated:layer_")
                    .and_then(|l| l.parse().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown provenance {s:?}")))?;
                Provenance::Generated { layer }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedDataset {
    pub dataset: Dataset,
    /// One tag per row of `dataset`.
    pub provenance: Vec<Provenance>,
    pub plan: Option<LayerPlan>,
    pub layers: Vec<LayerDiagnostics>,
    /// Set when the input needed no balancing.
    pub notice: Option<String>,
}

impl BalancedDataset {
    fn unchanged(ds: &Dataset) -> Self {
        BalancedDataset {
            dataset: ds.clone(),
            provenance: vec![Provenance::Original; ds.n()],
            plan: None,
            layers: Vec::new(),
            notice: Some("classes already balanced; dataset returned unchanged".into()),
        }
    }

    fn fuse(ds: &Dataset, minority: usize, extra: Array2<f64>, tags: Vec<Provenance>) -> Result<Self> {
        debug_assert_eq!(extra.nrows(), tags.len());
        let features = concatenate![Axis(0), ds.features().view(), extra.view()];
        let mut labels = ds.labels().to_vec();
        labels.extend(std::iter::repeat_n(minority, extra.nrows()));
        let mut provenance = vec![Provenance::Original; ds.n()];
        provenance.extend(tags);
        Ok(BalancedDataset {
            dataset: ds.with_rows(features, labels)?,
            provenance,
            plan: None,
            layers: Vec::new(),
            notice: None,
        })
    }

    pub fn generated_count(&self) -> usize {
        self.provenance.iter().filter(|p| !p.is_original()).count()
    }
}

pub fn balance(ds: &Dataset, cfg: &BalanceConfig) -> Result<BalancedDataset> {
    cfg.validate()?;
    let stats = class_stats(ds);
    if stats.min_count == stats.maj_count {
        return Ok(BalancedDataset::unchanged(ds));
    }
    match cfg.method {
        Method::Random => random_oversample(ds, cfg.seed),
        Method::Smote => smote(ds, cfg.smote_k, cfg.seed),
        Method::MifcIdmd | Method::Mifcm => {
            if stats.min_count < 2 {
                return Err(Error::InvalidConfig(format!(
                    "{} needs at least 2 minority rows, got {}",
                    cfg.method, stats.min_count
                )));
            }
            let plan = envelope::plan_layers(stats.min_count, stats.maj_count, cfg.t, cfg.layer_cap)?;
            let fcm = FcmConfig { seed: cfg.seed, ..cfg.fcm };
            let minority = ds.class_rows(stats.minority);
            let env = envelope::run(&minority, &plan, &fcm, &cfg.kernel, &cfg.correction())?;
            let trimmed = trim_generated(&env, plan.deficit, rng::mix_seed(cfg.seed, 1))?;
            let mut out = BalancedDataset::fuse(ds, stats.minority, trimmed.instances, trimmed.provenance)?;
            out.plan = Some(plan);
            out.layers = env.diagnostics;
            Ok(out)
        }
    }
}

/// Balances in min-max scaled space and maps generated rows back to the
/// input units. Original rows are copied through bit-for-bit.
pub fn balance_scaled(ds: &Dataset, cfg: &BalanceConfig) -> Result<BalancedDataset> {
    let (scaled, scaler) = normalize_minmax(ds);
    let mut out = balance(&scaled, cfg)?;
    let n = ds.n();
    let generated = out.dataset.features().slice(ndarray::s![n.., ..]).to_owned();
    let features = concatenate![Axis(0), ds.features().view(), scaler.inverse_transform(&generated).view()];
    out.dataset = out.dataset.with_features(features)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrimmedInstances {
    pub instances: Array2<f64>,
    pub provenance: Vec<Provenance>,
}

/// Cuts the envelope output down (or fills it up) to exactly `deficit` rows.
///
/// Surplus rows are removed at random from the final layer only. If the
/// layers fall short, randomly chosen generated rows are duplicated.
pub fn trim_generated(env: &EnvelopeOutput, deficit: usize, seed: u64) -> Result<TrimmedInstances> {
    let sizes = env.layer_sizes();
    let total: usize = sizes.iter().sum();
    let mut tags = Vec::with_capacity(total);
    for (l, &s) in sizes.iter().enumerate() {
        tags.extend(std::iter::repeat_n(Provenance::Generated { layer: l + 1 }, s));
    }
    let mut rng = rng::from_seed(seed);
    if total >= deficit {
        let surplus = total - deficit;
        let last = sizes.last().copied().unwrap_or(0);
        if surplus > last {
            return Err(Error::Generation(format!(
                "surplus {surplus} exceeds final layer size {last}"
            )));
        }
        let start = total - last;
        let mut drop = vec![false; total];
        for i in rand::seq::index::sample(&mut rng, last, surplus) {
            drop[start + i] = true;
        }
        let keep: Vec<usize> = (0..total).filter(|&i| !drop[i]).collect();
        return Ok(TrimmedInstances {
            instances: env.generated.select(Axis(0), &keep),
            provenance: keep.iter().map(|&i| tags[i]).collect(),
        });
    }
    if total == 0 {
        return Err(Error::Generation("no generated instances to duplicate".into()));
    }
    let mut rows: Vec<usize> = (0..total).collect();
    rows.extend((0..deficit - total).map(|_| rng.random_range(0..total)));
    let mut provenance = tags;
    provenance.extend(std::iter::repeat_n(Provenance::Duplicated, deficit - total));
    Ok(TrimmedInstances {
        instances: env.generated.select(Axis(0), &rows),
        provenance,
    })
}

/// Duplicates minority rows drawn uniformly with replacement.
pub fn random_oversample(ds: &Dataset, seed: u64) -> Result<BalancedDataset> {
    let stats = class_stats(ds);
    if stats.min_count == stats.maj_count {
        return Ok(BalancedDataset::unchanged(ds));
    }
    let minority = ds.indices_of(stats.minority);
    let mut rng = rng::from_seed(seed);
    let picks: Vec<usize> = (0..stats.deficit())
        .map(|_| minority[rng.random_range(0..minority.len())])
        .collect();
    let extra = ds.features().select(Axis(0), &picks);
    BalancedDataset::fuse(ds, stats.minority, extra, vec![Provenance::Duplicated; picks.len()])
}

/// For each row, the `k` nearest other rows by Euclidean distance;
/// equal distances go to the lower index.
pub(crate) fn nearest_neighbors(x: &Array2<f64>, k: usize) -> Vec<Vec<usize>> {
    let n = x.nrows();
    (0..n)
        .map(|i| {
            let mut others: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(x.row(i), x.row(j)), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// SMOTE: `x + delta * (x_nn - x)` with `x` a random minority row, `x_nn` one
/// of its `min(k, Min - 1)` nearest minority neighbours and `delta ~ U(0, 1)`.
pub fn smote(ds: &Dataset, k: usize, seed: u64) -> Result<BalancedDataset> {
    if k == 0 {
        return Err(Error::InvalidConfig("smote k must be >= 1".into()));
    }
    let stats = class_stats(ds);
    if stats.min_count == stats.maj_count {
        return Ok(BalancedDataset::unchanged(ds));
    }
    if stats.min_count < 2 {
        return Err(Error::InvalidConfig(format!(
            "smote needs at least 2 minority rows, got {}",
            stats.min_count
        )));
    }
    let minority = ds.class_rows(stats.minority);
    let k = k.min(stats.min_count - 1);
    let neighbors = nearest_neighbors(&minority, k);
    let mut rng = rng::from_seed(seed);
    let mut extra = Array2::zeros((stats.deficit(), ds.d()));
    for mut row in extra.rows_mut() {
        let i = rng.random_range(0..minority.nrows());
        let j = neighbors[i][rng.random_range(0..k)];
        let delta: f64 = rng.random();
        let base = minority.row(i);
        let other = minority.row(j);
        for f in 0..ds.d() {
            row[f] = base[f] + delta * (other[f] - base[f]);
        }
    }
    let n = extra.nrows();
    BalancedDataset::fuse(ds, stats.minority, extra, vec![Provenance::Interpolated; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    fn shaped(min: usize, maj: usize, d: usize, seed: u64) -> Dataset {
        let mut r = rng::from_seed(seed);
        let n = min + maj;
        let mut x = Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut r));
        for i in 0..min {
            x.row_mut(i).mapv_inplace(|v: f64| v + 2.0);
        }
        let labels: Vec<&str> = (0..n).map(|i| if i < min { "pos" } else { "neg" }).collect();
        Dataset::from_named_labels(x, &labels, (0..d).map(|f| format!("f{f}")).collect(), "y").unwrap()
    }

    fn check_balanced(input: &Dataset, out: &BalancedDataset) {
        let stats = class_stats(input);
        assert_eq!(out.dataset.count(0), out.dataset.count(1));
        assert_eq!(out.dataset.n(), 2 * stats.maj_count);
        assert_eq!(out.provenance.len(), out.dataset.n());
        assert_eq!(out.generated_count(), stats.deficit());
        for i in 0..input.n() {
            assert_eq!(out.dataset.features().row(i), input.features().row(i));
            assert_eq!(out.dataset.labels()[i], input.labels()[i]);
            assert!(out.provenance[i].is_original());
        }
        for i in input.n()..out.dataset.n() {
            assert_eq!(out.dataset.labels()[i], stats.minority);
            assert!(!out.provenance[i].is_original());
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert_eq!("mifc_idmd".parse::<Method>().unwrap(), Method::MifcIdmd);
        assert!("adasyn".parse::<Method>().is_err());
    }

    #[test]
    fn provenance_tags_round_trip() {
        for p in [
            Provenance::Original,
            Provenance::Generated { layer: 3 },
            Provenance::Duplicated,
            Provenance::Interpolated,
        ] {
            assert_eq!(p.to_string().parse::<Provenance>().unwrap(), p);
        }
    }

    #[test]
    fn already_balanced_is_unchanged() {
        let ds = shaped(10, 10, 2, 1);
        for m in Method::ALL {
            let out = balance(&ds, &BalanceConfig::with_method(m)).unwrap();
            assert_eq!(out.dataset, ds);
            assert!(out.notice.is_some());
        }
    }

    #[test]
    fn vertebral_shaped_layers() {
        let ds = shaped(100, 210, 6, 2);
        let out = balance(&ds, &BalanceConfig::with_method(Method::MifcIdmd)).unwrap();
        check_balanced(&ds, &out);
        assert_eq!(out.dataset.count(0), 210);
        let layer = |l| out.provenance.iter().filter(|p| **p == Provenance::Generated { layer: l }).count();
        assert_eq!((layer(1), layer(2)), (50, 60));
        assert_eq!(out.plan.as_ref().unwrap().cluster_counts, vec![50, 75]);
    }

    #[test]
    fn ecoli4_shaped_balance() {
        let ds = shaped(20, 316, 7, 3);
        let out = balance(&ds, &BalanceConfig::with_method(Method::MifcIdmd)).unwrap();
        check_balanced(&ds, &out);
        assert_eq!((out.dataset.count(0), out.dataset.count(1)), (316, 316));
    }

    fn fake_envelope(sizes: &[usize]) -> EnvelopeOutput {
        let total: usize = sizes.iter().sum();
        let generated = Array2::from_shape_fn((total, 1), |(i, _)| i as f64);
        let mut layers = Vec::new();
        let mut start = 0;
        for &s in sizes {
            let p = generated.slice(ndarray::s![start..start + s, ..]).to_owned();
            layers.push(envelope::PrototypeLayer { raw: p.clone(), prototypes: p, fcm_iterations: 1, fcm_converged: true });
            start += s;
        }
        EnvelopeOutput { layers, diagnostics: Vec::new(), generated }
    }

    #[test]
    fn trim_exact_keeps_everything() {
        let env = fake_envelope(&[3, 4]);
        let t = trim_generated(&env, 7, 1).unwrap();
        assert_eq!(t.instances, env.generated);
    }

    #[test]
    fn trim_removes_from_final_layer_only() {
        let env = fake_envelope(&[50, 75]);
        let t = trim_generated(&env, 110, 5).unwrap();
        assert_eq!(t.instances.nrows(), 110);
        let values: Vec<usize> = t.instances.column(0).iter().map(|&v| v as usize).collect();
        assert_eq!(&values[..50], &(0..50).collect::<Vec<_>>()[..]);
        assert!(values[50..].iter().all(|&v| v >= 50));
        assert_eq!(t.provenance.iter().filter(|p| **p == Provenance::Generated { layer: 2 }).count(), 60);
    }

    #[test]
    fn trim_single_survivor_is_reproducible() {
        let env = fake_envelope(&[5]);
        let a = trim_generated(&env, 1, 9).unwrap();
        let b = trim_generated(&env, 1, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.instances.nrows(), 1);
    }

    #[test]
    fn trim_fills_shortfall_by_duplication() {
        let env = fake_envelope(&[2, 3]);
        let t = trim_generated(&env, 9, 2).unwrap();
        assert_eq!(t.instances.nrows(), 9);
        assert_eq!(t.provenance.iter().filter(|p| **p == Provenance::Duplicated).count(), 4);
        assert!(t.instances.column(0).iter().all(|&v| v < 5.0));
    }

    #[test]
    fn trim_rejects_surplus_beyond_final_layer() {
        let env = fake_envelope(&[10, 2]);
        assert!(trim_generated(&env, 5, 0).is_err());
    }

    #[test]
    fn capped_plan_balances_with_duplicates() {
        let ds = shaped(4, 40, 2, 4);
        let cfg = BalanceConfig { layer_cap: 1, ..BalanceConfig::default() };
        let out = balance(&ds, &cfg).unwrap();
        check_balanced(&ds, &out);
        assert_eq!(out.provenance.iter().filter(|p| **p == Provenance::Duplicated).count(), 34);
    }

    #[test]
    fn random_three_vs_five() {
        let ds = shaped(3, 5, 2, 5);
        let out = random_oversample(&ds, 1).unwrap();
        check_balanced(&ds, &out);
        for i in 8..10 {
            let row = out.dataset.features().row(i);
            assert!((0..3).any(|j| ds.features().row(j) == row));
        }
        assert_eq!(out, random_oversample(&ds, 1).unwrap());
    }

    #[test]
    fn smote_segment_two_points() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [6.0, 5.0], [7.0, 5.0]];
        let ds = Dataset::from_named_labels(x, &["a", "a", "b", "b", "b"], vec!["p".into(), "q".into()], "y").unwrap();
        let out = smote(&ds, 5, 3).unwrap();
        check_balanced(&ds, &out);
        let s = out.dataset.features().row(5);
        assert!((0.0..=1.0).contains(&s[0]));
        assert_eq!(s[1], 0.0);
    }

    #[test]
    fn smote_needs_two_minority_rows() {
        let ds = shaped(1, 5, 2, 6);
        assert!(matches!(smote(&ds, 5, 0), Err(Error::InvalidConfig(_))));
        assert!(matches!(balance(&ds, &BalanceConfig::with_method(Method::MifcIdmd)), Err(Error::InvalidConfig(_))));
        // random duplication still works with a single minority row
        check_balanced(&ds, &random_oversample(&ds, 0).unwrap());
    }

    #[test]
    fn neighbor_ties_prefer_lower_index() {
        let x = array![[0.0], [1.0], [-1.0], [2.0]];
        let nn = nearest_neighbors(&x, 2);
        assert_eq!(nn[0], vec![1, 2]);
        assert_eq!(nn[1], vec![0, 3]);
    }

    #[test]
    fn mifcm_and_mifc_idmd_share_raw_first_layer() {
        let ds = shaped(15, 40, 3, 7);
        let a = balance(&ds, &BalanceConfig::with_method(Method::MifcIdmd)).unwrap();
        let b = balance(&ds, &BalanceConfig::with_method(Method::Mifcm)).unwrap();
        assert_eq!(a.layers[0].mmd_before, b.layers[0].mmd_before);
        let first = |o: &BalancedDataset| {
            let idx: Vec<usize> = (0..o.dataset.n()).filter(|&i| o.provenance[i] == Provenance::Generated { layer: 1 }).collect();
            o.dataset.features().select(Axis(0), &idx)
        };
        let (fa, fb) = (first(&a), first(&b));
        let shift = &fa.row(0) - &fb.row(0);
        for (ra, rb) in fa.rows().into_iter().zip(fb.rows()) {
            for f in 0..3 {
                assert!((ra[f] - rb[f] - shift[f]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaled_balance_keeps_original_bits() {
        let ds = shaped(12, 30, 3, 8);
        let big = ds.with_features(ds.features() * 1000.0 + 7.0).unwrap();
        let out = balance_scaled(&big, &BalanceConfig::default()).unwrap();
        check_balanced(&big, &out);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn every_method_balances(seed: u64, min in 2usize..15, extra in 1usize..40, d in 1usize..4) {
            let ds = shaped(min, min + extra, d, seed);
            for m in Method::ALL {
                let cfg = BalanceConfig { method: m, seed, ..BalanceConfig::default() };
                let out = balance(&ds, &cfg).unwrap();
                check_balanced(&ds, &out);
                prop_assert_eq!(&out, &balance(&ds, &cfg).unwrap());
            }
        }
    }
}
