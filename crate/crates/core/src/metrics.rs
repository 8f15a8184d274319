//! Classification metrics over a binary confusion matrix, class-variance
//! diagnostics, and rank-based comparison of several methods across datasets.
//!
//! Note that `auc` here is `(sensitivity + specificity) / 2` over hard
//! predictions, i.e. balanced accuracy; no ROC curve is integrated.

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::gamma_ur;

use crate::error::{Error, Result};

/// Counts with the minority class as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    #[serde(rename = "tp")]
    pub true_pos: usize,
    #[serde(rename = "fn")]
    pub false_neg: usize,
    #[serde(rename = "fp")]
    pub false_pos: usize,
    #[serde(rename = "tn")]
    pub true_neg: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl ConfusionMatrix {
    pub fn new(true_pos: usize, false_neg: usize, false_pos: usize, true_neg: usize) -> Self {
        ConfusionMatrix {
            true_pos,
            false_neg,
            false_pos,
            true_neg,
        }
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_neg + self.false_pos + self.true_neg
    }

    /// True positive rate; 0 when there are no positives.
    pub fn sensitivity(&self) -> f64 {
        ratio(self.true_pos, self.true_pos + self.false_neg)
    }

    /// True negative rate; 0 when there are no negatives.
    pub fn specificity(&self) -> f64 {
        ratio(self.true_neg, self.true_neg + self.false_pos)
    }
}

pub fn confusion(predictions: &[usize], truth: &[usize], positive: usize) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Shape("no labels".into()));
    }
    if positive > 1 {
        return Err(Error::InvalidConfig(format!("unknown positive label {positive}")));
    }
    let mut cm = ConfusionMatrix::new(0, 0, 0, 0);
    for (&p, &t) in predictions.iter().zip(truth) {
        if p > 1 || t > 1 {
            return Err(Error::InvalidConfig(format!("unknown label {}", p.max(t))));
        }
        match (t == positive, p == positive) {
            (true, true) => cm.true_pos += 1,
            (true, false) => cm.false_neg += 1,
            (false, true) => cm.false_pos += 1,
            (false, false) => cm.true_neg += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub acc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub auc: f64,
    pub g_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Acc,
    Auc,
    FMeasure,
    GMean,
}

impl Metric {
    pub const REPORTED: [Metric; 4] = [Metric::Acc, Metric::Auc, Metric::FMeasure, Metric::GMean];

    pub fn of(&self, m: &MetricSet) -> f64 {
        match self {
            Metric::Acc => m.acc,
            Metric::Auc => m.auc,
            Metric::FMeasure => m.f_measure,
            Metric::GMean => m.g_mean,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Metric::Acc => "Acc",
            Metric::Auc => "AUC",
            Metric::FMeasure => "F-M",
            Metric::GMean => "G-M",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "acc" | "accuracy" => Ok(Metric::Acc),
            "auc" => Ok(Metric::Auc),
            "f" | "fm" | "fmeasure" => Ok(Metric::FMeasure),
            "g" | "gm" | "gmean" => Ok(Metric::GMean),
            _ => Err(Error::InvalidConfig(format!("unknown metric {s:?}"))),
        }
    }
}

/// Any ratio with a zero denominator is taken as 0.
pub fn metric_set(cm: &ConfusionMatrix) -> MetricSet {
    let precision = ratio(cm.true_pos, cm.true_pos + cm.false_pos);
    let recall = cm.sensitivity();
    let specificity = cm.specificity();
    let f_measure = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    MetricSet {
        acc: ratio(cm.true_pos + cm.true_neg, cm.total()),
        precision,
        recall,
        f_measure,
        auc: (recall + specificity) / 2.0,
        g_mean: (recall * specificity).sqrt(),
    }
}

/// Intra-class variance: mean over features of the population variance of the
/// minority rows. Inter-class variance: mean over features of the squared gap
/// between the class means.
pub fn class_variances(minority: &Array2<f64>, majority: &Array2<f64>) -> Result<(f64, f64)> {
    if minority.nrows() < 2 || majority.nrows() == 0 {
        return Err(Error::Shape("need at least 2 minority rows and 1 majority row".into()));
    }
    if minority.ncols() != majority.ncols() || minority.ncols() == 0 {
        return Err(Error::Shape(format!("{} vs {} columns", minority.ncols(), majority.ncols())));
    }
    let d = minority.ncols() as f64;
    let mu_min = minority.mean_axis(Axis(0)).unwrap();
    let mu_maj = majority.mean_axis(Axis(0)).unwrap();
    let intra = minority.var_axis(Axis(0), 0.0).sum() / d;
    let inter = (&mu_min - &mu_maj).mapv(|g| g * g).sum() / d;
    Ok((intra, inter))
}

/// Scores of `k` methods (rows) on `N` datasets (columns); higher is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    pub scores: Array2<f64>,
}

impl RankTable {
    pub fn new(methods: Vec<String>, datasets: Vec<String>, scores: Array2<f64>) -> Result<Self> {
        if scores.dim() != (methods.len(), datasets.len()) {
            return Err(Error::Shape(format!(
                "scores {:?} for {} methods x {} datasets",
                scores.dim(),
                methods.len(),
                datasets.len()
            )));
        }
        if methods.len() < 2 || datasets.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "need >= 2 methods and >= 2 datasets, got {} and {}",
                methods.len(),
                datasets.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("non-finite score".into()));
        }
        Ok(RankTable {
            methods,
            datasets,
            scores,
        })
    }

    pub fn n_methods(&self) -> usize {
        self.methods.len()
    }

    pub fn n_datasets(&self) -> usize {
        self.datasets.len()
    }

    /// Per-dataset ranks (1 = best); tied scores share the mean of their positions.
    pub fn ranks(&self) -> Array2<f64> {
        let k = self.n_methods();
        let mut ranks = Array2::zeros(self.scores.dim());
        for (j, col) in self.scores.columns().into_iter().enumerate() {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| col[b].total_cmp(&col[a]));
            let mut start = 0;
            while start < k {
                let mut end = start + 1;
                while end < k && col[order[end]] == col[order[start]] {
                    end += 1;
                }
                let rank = (start + end + 1) as f64 / 2.0;
                for &m in &order[start..end] {
                    ranks[[m, j]] = rank;
                }
                start = end;
            }
        }
        ranks
    }
}

pub fn mean_rankings(rt: &RankTable) -> Vec<f64> {
    rt.ranks().mean_axis(Axis(1)).unwrap().to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Upper tail of the chi-squared distribution.
pub fn chi_squared_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_ur(df as f64 / 2.0, x / 2.0)
}

/// `12N / (k(k+1)) * (sum_j R_j^2 - k(k+1)^2 / 4)` over mean ranks `R_j`,
/// referred to a chi-squared distribution with `k - 1` degrees of freedom.
pub fn friedman(rt: &RankTable) -> FriedmanResult {
    let k = rt.n_methods() as f64;
    let n = rt.n_datasets() as f64;
    let sum_sq: f64 = mean_rankings(rt).iter().map(|r| r * r).sum();
    let statistic = (12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0) * (k + 1.0) / 4.0)).max(0.0);
    let df = rt.n_methods() - 1;
    FriedmanResult {
        statistic,
        p_value: chi_squared_sf(statistic, df),
        df,
    }
}

/// Holm step-down: with p-values sorted ascending, reject the `i`-th
/// (1-based) while `p <= alpha / (m - i + 1)`; stop at the first failure.
/// Decisions are returned in input order. `alpha = 0` rejects nothing.
pub fn holm(p_values: &[f64], alpha: f64) -> Vec<bool> {
    let m = p_values.len();
    let mut reject = vec![false; m];
    if alpha <= 0.0 {
        return reject;
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    for (i, &h) in order.iter().enumerate() {
        if p_values[h] <= alpha / (m - i) as f64 {
            reject[h] = true;
        } else {
            break;
        }
    }
    reject
}

/// Two-sided p-value of the mean-rank difference between two methods,
/// `z = (R_i - R_j) / sqrt(k(k+1) / (6N))`.
pub fn rank_difference_p(r_i: f64, r_j: f64, k: usize, n: usize) -> f64 {
    let se = ((k * (k + 1)) as f64 / (6.0 * n as f64)).sqrt();
    let z = (r_i - r_j).abs() / se;
    erfc(z / std::f64::consts::SQRT_2)
}
