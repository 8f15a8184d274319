//! Kernel Gram matrices and the biased (V-statistic) squared maximum mean
//! discrepancy between two point sets.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcm::sq_dist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    /// `k(a, b) = a . b`
    Linear,
    /// `k(a, b) = exp(-||a - b||^2 / (2 sigma^2))`
    Rbf { bandwidth: f64 },
}

impl Kernel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Kernel::Rbf { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(Error::InvalidConfig(format!("rbf bandwidth must be > 0, got {bandwidth}")))
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
        match *self {
            Kernel::Linear => a.dot(&b),
            Kernel::Rbf { bandwidth } => (-sq_dist(a, b) / (2.0 * bandwidth * bandwidth)).exp(),
        }
    }
}

/// Kernel as configured by the user: an rbf without bandwidth is resolved
/// per use by the median heuristic on the pooled point set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelChoice {
    #[default]
    Linear,
    Rbf { bandwidth: Option<f64> },
}

impl KernelChoice {
    pub fn resolve(&self, a: &Array2<f64>, b: &Array2<f64>) -> Kernel {
        match *self {
            KernelChoice::Linear => Kernel::Linear,
            KernelChoice::Rbf { bandwidth: Some(bandwidth) } => Kernel::Rbf { bandwidth },
            KernelChoice::Rbf { bandwidth: None } => Kernel::Rbf {
                bandwidth: median_bandwidth(a, b),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelChoice::Rbf { bandwidth: Some(b) } => Kernel::Rbf { bandwidth: b }.validate(),
            _ => Ok(()),
        }
    }
}

/// Median pairwise Euclidean distance over the union of both sets.
/// Falls back to 1.0 when the median is zero (e.g. all points identical).
pub fn median_bandwidth(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let pooled: Vec<_> = a.rows().into_iter().chain(b.rows()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * pooled.len().saturating_sub(1) / 2);
    for i in 0..pooled.len() {
        for j in i + 1..pooled.len() {
            dists.push(sq_dist(pooled[i], pooled[j]).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let mid = dists.len() / 2;
    let median = if dists.len() % 2 == 0 {
        0.5 * (dists[mid - 1] + dists[mid])
    } else {
        dists[mid]
    };
    if median > 0.0 {
        median
    } else {
        1.0
    }
}

pub fn gram(a: &Array2<f64>, b: &Array2<f64>, kernel: &Kernel) -> Result<Array2<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Shape(format!("{} vs {} columns", a.ncols(), b.ncols())));
    }
    Ok(match kernel {
        Kernel::Linear => a.dot(&b.t()),
        _ => Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| kernel.eval(a.row(i), b.row(j))),
    })
}

/// Arithmetic mean of all entries.
pub fn mean_moment(s: &Array2<f64>) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::Shape("empty matrix has no mean".into()));
    }
    Ok(s.sum() / s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmdEstimate {
    /// Squared discrepancy, clamped at zero.
    pub mmd_sq: f64,
    pub mean_xx: f64,
    pub mean_vv: f64,
    pub mean_xv: f64,
}

/// `E(S_xx) + E(S_vv) - 2 E(S_xv)` over the three Gram matrices.
pub fn mmd_sq(x: &Array2<f64>, v: &Array2<f64>, kernel: &Kernel) -> Result<MmdEstimate> {
    if x.nrows() == 0 || v.nrows() == 0 {
        return Err(Error::Shape("mmd needs two nonempty sets".into()));
    }
    kernel.validate()?;
    let mean_xx = mean_moment(&gram(x, x, kernel)?)?;
    let mean_vv = mean_moment(&gram(v, v, kernel)?)?;
    let mean_xv = mean_moment(&gram(x, v, kernel)?)?;
    Ok(MmdEstimate {
        mmd_sq: (mean_xx + mean_vv - 2.0 * mean_xv).max(0.0),
        mean_xx,
        mean_vv,
        mean_xv,
    })
}
