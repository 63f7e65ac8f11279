use serde::{Deserialize, Serialize};

use crate::error::{MameError, Result};

/// Tunable knobs shared by the whole pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// ADMM penalty parameter.
    pub rho: f64,
    /// Multiplicative step applied to the fusion level after every iteration.
    pub t: f64,
    /// Initial fusion level.
    pub epsilon: f64,
    /// Edge-difference norm below which two clusters are merged.
    pub tau: f64,
    /// Stopping threshold on the Frobenius norm of the edge differences.
    pub tol: f64,
    /// Conjugate-gradient iterations per parameter update.
    pub cg_iters: usize,
    /// Perturbations sampled around every instance.
    pub neighborhood_size: usize,
    /// Target number of nonzero coefficients in leaf explanations.
    pub target_nonzeros: usize,
    /// Target nonzeros for representative explanations; defaults to `target_nonzeros`.
    pub representative_nonzeros: Option<usize>,
    /// Probability that a categorical feature is resampled when perturbing.
    pub categorical_flip_prob: f64,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            rho: 2.0,
            t: 1.01,
            epsilon: 1e-10,
            tau: 1e-6,
            tol: 1e-6,
            cg_iters: 10,
            neighborhood_size: 10,
            target_nonzeros: 5,
            representative_nonzeros: None,
            categorical_flip_prob: 0.3,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(MameError::invalid(format!("{name} must be positive, got {v}")))
            }
        };
        positive("rho", self.rho)?;
        positive("epsilon", self.epsilon)?;
        positive("tau", self.tau)?;
        positive("tol", self.tol)?;
        if !(self.t.is_finite() && self.t > 1.0) {
            return Err(MameError::invalid(format!("t must exceed 1, got {}", self.t)));
        }
        if self.cg_iters == 0 || self.neighborhood_size == 0 || self.target_nonzeros == 0 {
            return Err(MameError::invalid("cg_iters, neighborhood size and sparsity target must be >= 1"));
        }
        if self.representative_nonzeros == Some(0) {
            return Err(MameError::invalid("representative sparsity target must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.categorical_flip_prob) {
            return Err(MameError::invalid("categorical flip probability must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn representative_target(&self) -> usize {
        self.representative_nonzeros.unwrap_or(self.target_nonzeros)
    }
}
