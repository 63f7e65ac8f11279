//! Black-box prediction functions.
//!
//! Built-in synthetic models stand in for trained regressors/classifiers in
//! tests; [`RemoteOracle`] speaks the JSON prediction protocol to an external
//! model server.

mod remote;
pub mod server;

use std::str::FromStr;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};

pub use remote::RemoteOracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AffineMap {
    fn eval(&self, x: ArrayView1<'_, f64>) -> f64 {
        self.weights.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

#[derive(Debug, Clone)]
pub enum Oracle {
    Linear(AffineMap),
    /// `lower` applies when `x[feature] < threshold`, `upper` otherwise.
    PiecewiseLinear {
        feature: usize,
        threshold: f64,
        lower: AffineMap,
        upper: AffineMap,
    },
    /// `f(x) = sum_j amplitude_j * sin(frequency_j * x_j)`.
    AdditiveSine {
        amplitude: Vec<f64>,
        frequency: Vec<f64>,
    },
    Remote(RemoteOracle),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    Linear,
    PiecewiseLinear,
    AdditiveSine,
}

impl FromStr for SyntheticKind {
    type Err = MameError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(SyntheticKind::Linear),
            "piecewise" | "piecewise_linear" => Ok(SyntheticKind::PiecewiseLinear),
            "sine" | "additive_sine" => Ok(SyntheticKind::AdditiveSine),
            other => Err(MameError::invalid(format!(
                "unknown oracle kind '{other}' (expected linear, piecewise, sine)"
            ))),
        }
    }
}

/// Seeded random black box of the requested kind.
pub fn make_synthetic_blackbox(kind: SyntheticKind, p: usize, seed: u64) -> Result<Oracle> {
    if p == 0 {
        return Err(MameError::invalid("synthetic black box needs p >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gauss = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..p).map(|_| rng.sample(StandardNormal)).collect() };
    Ok(match kind {
        SyntheticKind::Linear => {
            let weights = gauss(&mut rng);
            let bias = rng.sample(StandardNormal);
            Oracle::Linear(AffineMap { weights, bias })
        }
        SyntheticKind::PiecewiseLinear => {
            let lower = AffineMap {
                weights: gauss(&mut rng),
                bias: rng.sample(StandardNormal),
            };
            let upper = AffineMap {
                weights: gauss(&mut rng),
                bias: rng.sample(StandardNormal),
            };
            Oracle::PiecewiseLinear {
                feature: 0,
                threshold: 0.0,
                lower,
                upper,
            }
        }
        SyntheticKind::AdditiveSine => {
            let amplitude = (0..p)
                .map(|_| {
                    let a: f64 = rng.gen_range(0.5..2.0);
                    if rng.gen_bool(0.5) {
                        a
                    } else {
                        -a
                    }
                })
                .collect();
            let frequency = (0..p).map(|_| rng.gen_range(0.5..2.0)).collect();
            Oracle::AdditiveSine { amplitude, frequency }
        }
    })
}

impl Oracle {
    /// Input width the oracle expects, when known locally.
    pub fn n_features(&self) -> Option<usize> {
        match self {
            Oracle::Linear(m) => Some(m.weights.len()),
            Oracle::PiecewiseLinear { lower, .. } => Some(lower.weights.len()),
            Oracle::AdditiveSine { amplitude, .. } => Some(amplitude.len()),
            Oracle::Remote(_) => None,
        }
    }

    /// One prediction per row of `z`, in row order.
    pub fn predict_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        if let Some(p) = self.n_features() {
            if z.ncols() != p {
                return Err(MameError::invalid(format!(
                    "oracle expects {p} features, query has {}",
                    z.ncols()
                )));
            }
        }
        let out = match self {
            Oracle::Linear(m) => z.rows().into_iter().map(|r| m.eval(r)).collect(),
            Oracle::PiecewiseLinear {
                feature,
                threshold,
                lower,
                upper,
            } => z
                .rows()
                .into_iter()
                .map(|r| if r[*feature] < *threshold { lower.eval(r) } else { upper.eval(r) })
                .collect(),
            Oracle::AdditiveSine { amplitude, frequency } => z
                .rows()
                .into_iter()
                .map(|r| {
                    r.iter()
                        .zip(amplitude.iter().zip(frequency))
                        .map(|(x, (a, w))| a * (w * x).sin())
                        .sum()
                })
                .collect(),
            Oracle::Remote(remote) => remote.predict(z)?,
        };
        let out = Array1::from_vec(out);
        if let Some(i) = out.iter().position(|v| !v.is_finite()) {
            return Err(MameError::OracleResponse(format!("non-finite prediction for row {i}")));
        }
        Ok(out)
    }

    /// Ground-truth global feature importances for built-in models.
    ///
    /// Linear: `|w_j|`; piecewise: mean of the two regimes' `|w_j|`;
    /// sine: `|a_j * omega_j|`, the peak slope along feature `j`.
    pub fn feature_importance(&self) -> Option<Vec<f64>> {
        match self {
            Oracle::Linear(m) => Some(m.weights.iter().map(|w| w.abs()).collect()),
            Oracle::PiecewiseLinear { lower, upper, .. } => Some(
                lower
                    .weights
                    .iter()
                    .zip(&upper.weights)
                    .map(|(a, b)| 0.5 * (a.abs() + b.abs()))
                    .collect(),
            ),
            Oracle::AdditiveSine { amplitude, frequency } => {
                Some(amplitude.iter().zip(frequency).map(|(a, w)| (a * w).abs()).collect())
            }
            Oracle::Remote(_) => None,
        }
    }
}
