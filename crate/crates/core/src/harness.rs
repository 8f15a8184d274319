//! Repeated stratified hold-out evaluation of a sampler paired with a
//! built-in classifier, plus the report file format and rank comparison.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{class_stats, stratified_split_indices, Dataset, Scaler, SplitIndices};
use crate::envelope::LayerDiagnostics;
use crate::error::{Error, Result};
use crate::fcm::sq_dist;
use crate::metrics::{self, ConfusionMatrix, Metric, MetricSet, RankTable};
use crate::rng;
use crate::sampler::{balance, BalanceConfig};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Knn,
    LinearHinge,
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(ClassifierKind::Knn),
            "linear-hinge" | "linear_hinge" | "hinge" => Ok(ClassifierKind::LinearHinge),
            _ => Err(Error::InvalidConfig(format!("unknown classifier {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub kind: ClassifierKind,
    pub knn_k: usize,
    /// L2 penalty of the hinge model.
    pub lambda: f64,
    pub epochs: usize,
    /// Initial step; step `t` is `eta0 / (1 + eta0 * lambda * t)`.
    pub eta0: f64,
    pub seed: u64,
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier {
            kind: ClassifierKind::Knn,
            knn_k: 5,
            lambda: 1e-4,
            epochs: 20,
            eta0: 0.1,
            seed: 0,
        }
    }
}

impl Classifier {
    pub fn knn(k: usize) -> Self {
        Classifier {
            knn_k: k,
            ..Classifier::default()
        }
    }

    pub fn linear_hinge() -> Self {
        Classifier {
            kind: ClassifierKind::LinearHinge,
            ..Classifier::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ClassifierKind::Knn if self.knn_k == 0 => Err(Error::InvalidConfig("knn k must be >= 1".into())),
            ClassifierKind::LinearHinge if !(self.lambda >= 0.0 && self.eta0 > 0.0 && self.epochs > 0) => Err(
                Error::InvalidConfig("hinge needs lambda >= 0, eta0 > 0 and epochs >= 1".into()),
            ),
            _ => Ok(()),
        }
    }
}

/// Predicts test labels, treating the training minority as the tie winner.
pub fn train_predict(train: &Dataset, test: &Dataset, clf: &Classifier) -> Result<Vec<usize>> {
    train_predict_with(train, test, clf, class_stats(train).minority)
}

/// As [`train_predict`] with the minority label given explicitly, which
/// matters once the training set has been balanced.
pub fn train_predict_with(train: &Dataset, test: &Dataset, clf: &Classifier, minority: usize) -> Result<Vec<usize>> {
    clf.validate()?;
    if train.d() != test.d() {
        return Err(Error::Shape(format!("train has {} features, test {}", train.d(), test.d())));
    }
    Ok(match clf.kind {
        ClassifierKind::Knn => knn_predict(train, test, clf.knn_k, minority),
        ClassifierKind::LinearHinge => {
            let (w, b) = hinge_fit(train, clf, minority);
            test.features()
                .rows()
                .into_iter()
                .map(|x| if x.dot(&w) + b > 0.0 { minority } else { 1 - minority })
                .collect()
        }
    })
}

fn knn_predict(train: &Dataset, test: &Dataset, k: usize, minority: usize) -> Vec<usize> {
    let k = k.min(train.n());
    let labels = train.labels();
    test.features()
        .rows()
        .into_iter()
        .map(|q| {
            let mut dist: Vec<(f64, usize)> = train
                .features()
                .rows()
                .into_iter()
                .enumerate()
                .map(|(i, r)| (sq_dist(q, r), i))
                .collect();
            if k < dist.len() {
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            }
            let votes = dist[..k].iter().filter(|&&(_, i)| labels[i] == minority).count();
            if 2 * votes >= k {
                minority
            } else {
                1 - minority
            }
        })
        .collect()
}

fn hinge_fit(train: &Dataset, clf: &Classifier, minority: usize) -> (Array1<f64>, f64) {
    let x = train.features();
    let y: Vec<f64> = train.labels().iter().map(|&l| if l == minority { 1.0 } else { -1.0 }).collect();
    let mut w = Array1::<f64>::zeros(train.d());
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..train.n()).collect();
    let mut r = rng::from_seed(clf.seed);
    let mut t = 0.0;
    for _ in 0..clf.epochs {
        order.shuffle(&mut r);
        for &i in &order {
            t += 1.0;
            let eta = clf.eta0 / (1.0 + clf.eta0 * clf.lambda * t);
            let xi: ArrayView1<f64> = x.row(i);
            let margin = y[i] * (xi.dot(&w) + b);
            w *= 1.0 - eta * clf.lambda;
            if margin < 1.0 {
                w.scaled_add(eta * y[i], &xi);
                b += eta * y[i];
            }
        }
    }
    (w, b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldoutProtocol {
    pub repeats: usize,
    pub train_fraction: f64,
    pub master_seed: u64,
    /// Fit a min-max scaler on each training split and apply it to both sides.
    pub normalize: bool,
    /// Run repeats on the rayon pool. Never affects results, so not serialized.
    #[serde(skip, default = "default_parallel")]
    pub parallel: bool,
}

fn default_parallel() -> bool {
    true
}

impl Default for HoldoutProtocol {
    fn default() -> Self {
        HoldoutProtocol {
            repeats: 10,
            train_fraction: 0.7,
            master_seed: 0,
            normalize: true,
            parallel: true,
        }
    }
}

impl HoldoutProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::InvalidConfig("repeats must be >= 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }

    pub fn repeat_seed(&self, repeat: usize) -> u64 {
        rng::mix_seed(self.master_seed, repeat as u64)
    }

    /// Train/test row indices of one repeat.
    pub fn split(&self, ds: &Dataset, repeat: usize) -> Result<SplitIndices> {
        for label in 0..2 {
            let count = ds.count(label);
            let n_train = (count as f64 * self.train_fraction).round() as usize;
            if n_train >= count {
                return Err(Error::DegenerateSplit { repeat });
            }
        }
        stratified_split_indices(ds, self.train_fraction, self.repeat_seed(repeat))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample standard deviation (`n - 1` divisor); 0 for a single value.
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acc: MeanStd,
    pub auc: MeanStd,
    pub f_measure: MeanStd,
    pub g_mean: MeanStd,
}

impl Summary {
    pub fn of(sets: &[MetricSet]) -> Summary {
        let col = |m: Metric| MeanStd::of(&sets.iter().map(|s| m.of(s)).collect::<Vec<_>>());
        Summary {
            acc: col(Metric::Acc),
            auc: col(Metric::Auc),
            f_measure: col(Metric::FMeasure),
            g_mean: col(Metric::GMean),
        }
    }

    pub fn get(&self, metric: Metric) -> MeanStd {
        match metric {
            Metric::Acc => self.acc,
            Metric::Auc => self.auc,
            Metric::FMeasure => self.f_measure,
            Metric::GMean => self.g_mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    /// Training rows handed to the classifier, after balancing.
    pub train_size: usize,
    pub test_size: usize,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<LayerDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationConfig {
    /// `None` evaluates the imbalanced training split as is.
    pub balance: Option<BalanceConfig>,
    pub classifier: Classifier,
    pub protocol: HoldoutProtocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub method: String,
    pub n: usize,
    pub min_count: usize,
    pub maj_count: usize,
    pub config: EvaluationConfig,
    pub summary: Summary,
    pub repeats: Vec<RepeatResult>,
}

pub fn method_label(cfg: Option<&BalanceConfig>) -> String {
    cfg.map_or_else(|| "none".to_string(), |c| c.method.to_string())
}

fn run_repeat(
    ds: &Dataset,
    cfg: Option<&BalanceConfig>,
    clf: &Classifier,
    proto: &HoldoutProtocol,
    positive: usize,
    repeat: usize,
) -> Result<RepeatResult> {
    let seed = proto.repeat_seed(repeat);
    let split = proto.split(ds, repeat)?;
    let mut train = ds.select(&split.train)?;
    let mut test = ds.select(&split.test)?;
    if test.count(0) == 0 || test.count(1) == 0 {
        return Err(Error::DegenerateSplit { repeat });
    }
    if proto.normalize {
        let scaler = Scaler::fit(train.features());
        test = test.with_features(scaler.transform(test.features()))?;
        train = train.with_features(scaler.transform(train.features()))?;
    }
    let mut layers = Vec::new();
    if let Some(cfg) = cfg {
        let cfg = BalanceConfig {
            seed: rng::mix_seed(seed, 1) ^ cfg.seed,
            ..*cfg
        };
        let balanced = balance(&train, &cfg)?;
        layers = balanced.layers;
        train = balanced.dataset;
    }
    let clf = Classifier {
        seed: rng::mix_seed(seed, 2) ^ clf.seed,
        ..*clf
    };
    let predictions = train_predict_with(&train, &test, &clf, positive)?;
    let confusion = metrics::confusion(&predictions, test.labels(), positive)?;
    Ok(RepeatResult {
        repeat,
        seed,
        train_size: train.n(),
        test_size: test.n(),
        confusion,
        metrics: metrics::metric_set(&confusion),
        layers,
    })
}

/// Balances the training split only; the test split stays as drawn. Results
/// depend on `master_seed` alone, never on the execution schedule.
pub fn holdout_evaluate(
    dataset: &str,
    ds: &Dataset,
    cfg: Option<&BalanceConfig>,
    clf: &Classifier,
    proto: &HoldoutProtocol,
) -> Result<EvaluationReport> {
    proto.validate()?;
    clf.validate()?;
    if let Some(cfg) = cfg {
        cfg.validate()?;
    }
    let stats = class_stats(ds);
    let one = |i| {
        run_repeat(ds, cfg, clf, proto, stats.minority, i).map_err(|e| match e {
            Error::DegenerateSplit { .. } => e,
            e => Error::Repeat {
                repeat: i,
                source: Box::new(e),
            },
        })
    };
    let results: Vec<Result<RepeatResult>> = if proto.parallel {
        (0..proto.repeats).into_par_iter().map(one).collect()
    } else {
        (0..proto.repeats).map(one).collect()
    };
    let repeats = results.into_iter().collect::<Result<Vec<_>>>()?;
    let sets: Vec<MetricSet> = repeats.iter().map(|r| r.metrics).collect();
    Ok(EvaluationReport {
        dataset: dataset.to_string(),
        method: method_label(cfg),
        n: ds.n(),
        min_count: stats.min_count,
        maj_count: stats.maj_count,
        config: EvaluationConfig {
            balance: cfg.copied(),
            classifier: *clf,
            protocol: *proto,
        },
        summary: Summary::of(&sets),
        repeats,
    })
}

/// One method evaluated over one or more datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub tool_version: String,
    pub method: String,
    pub entries: Vec<EvaluationReport>,
}

impl ReportFile {
    pub fn new(method: String, entries: Vec<EvaluationReport>) -> Self {
        ReportFile {
            tool_version: TOOL_VERSION.to_string(),
            method,
            entries,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Report(e.to_string()))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))
    }

    pub fn datasets(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.dataset.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostHoc {
    pub method: String,
    pub mean_rank: f64,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: Metric,
    pub alpha: f64,
    pub table: RankTable,
    pub mean_ranks: Vec<f64>,
    pub friedman: metrics::FriedmanResult,
    /// Method with the lowest mean rank; the control for the post-hoc tests.
    pub best: String,
    /// Every other method against the control, in input order.
    pub posthoc: Vec<PostHoc>,
}

/// Ranks methods by the per-dataset mean of `metric`, runs the Friedman test
/// and Holm-corrected comparisons of each method against the best-ranked one.
pub fn compare_methods(reports: &[ReportFile], metric: Metric, alpha: f64) -> Result<Comparison> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    if reports.len() < 2 {
        return Err(Error::InvalidConfig(format!("need >= 2 reports, got {}", reports.len())));
    }
    let methods: Vec<String> = reports.iter().map(|r| r.method.clone()).collect();
    if methods.iter().collect::<BTreeSet<_>>().len() != methods.len() {
        return Err(Error::InvalidConfig(format!("duplicate method labels in {methods:?}")));
    }
    let datasets: Vec<String> = reports[0].datasets().into_iter().map(String::from).collect();
    let reference: BTreeSet<&str> = reports[0].datasets().into_iter().collect();
    if reference.len() != datasets.len() {
        return Err(Error::InvalidConfig(format!("report {:?} lists a dataset twice", methods[0])));
    }
    for r in &reports[1..] {
        let other: BTreeSet<&str> = r.datasets().into_iter().collect();
        if other != reference || r.entries.len() != datasets.len() {
            return Err(Error::InvalidConfig(format!(
                "dataset coverage mismatch: {:?} has {:?}, {:?} has {:?}",
                methods[0],
                reference,
                r.method,
                other
            )));
        }
    }
    let scores = ndarray::Array2::from_shape_fn((methods.len(), datasets.len()), |(i, j)| {
        let entry = reports[i].entries.iter().find(|e| e.dataset == datasets[j]).unwrap();
        entry.summary.get(metric).mean
    });
    let table = RankTable::new(methods.clone(), datasets, scores)?;
    let mean_ranks = metrics::mean_rankings(&table);
    let friedman = metrics::friedman(&table);
    let best = (0..methods.len())
        .min_by(|&a, &b| mean_ranks[a].total_cmp(&mean_ranks[b]))
        .unwrap();
    let others: Vec<usize> = (0..methods.len()).filter(|&i| i != best).collect();
    let p: Vec<f64> = others
        .iter()
        .map(|&i| metrics::rank_difference_p(mean_ranks[i], mean_ranks[best], table.n_methods(), table.n_datasets()))
        .collect();
    let decisions = metrics::holm(&p, alpha);
    let posthoc = others
        .iter()
        .zip(p.iter().zip(decisions))
        .map(|(&i, (&p_value, reject))| PostHoc {
            method: methods[i].clone(),
            mean_rank: mean_ranks[i],
            p_value,
            reject,
        })
        .collect();
    Ok(Comparison {
        metric,
        alpha,
        table,
        mean_ranks,
        friedman,
        best: methods[best].clone(),
        posthoc,
    })
}
