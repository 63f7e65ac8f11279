//! Perturbation neighborhoods, kernel weights and the coordinate-wise feature map.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FeatureKind, FeatureStats};
use crate::error::{MameError, Result};
use crate::oracle::Oracle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Zscore { mean: f64, std: f64 },
}

/// Per-coordinate transform `g`, optionally followed by a constant-one
/// intercept column (appended last, never penalized).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateMap {
    transforms: Vec<Transform>,
    intercept: bool,
}

impl CoordinateMap {
    pub fn identity(p: usize) -> Self {
        Self {
            transforms: vec![Transform::Identity; p],
            intercept: false,
        }
    }

    /// Standardizes continuous features with the given statistics; categorical codes pass through.
    pub fn zscore(stats: &FeatureStats) -> Self {
        let transforms = stats
            .mean
            .iter()
            .zip(&stats.std)
            .zip(&stats.category_values)
            .map(|((&mean, &std), cats)| match cats {
                Some(_) => Transform::Identity,
                None => Transform::Zscore { mean, std },
            })
            .collect();
        Self {
            transforms,
            intercept: false,
        }
    }

    pub fn with_intercept(mut self, intercept: bool) -> Self {
        self.intercept = intercept;
        self
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn input_dim(&self) -> usize {
        self.transforms.len()
    }

    /// Length of explanation vectors produced under this map.
    pub fn output_dim(&self) -> usize {
        self.transforms.len() + usize::from(self.intercept)
    }

    /// 1.0 for coordinates carrying an l1 penalty, 0.0 for the intercept.
    pub fn penalty_mask(&self) -> Vec<f64> {
        let mut mask = vec![1.0; self.transforms.len()];
        if self.intercept {
            mask.push(0.0);
        }
        mask
    }

    pub fn apply_row(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::ones(self.output_dim());
        for (j, (t, v)) in self.transforms.iter().zip(x.iter()).enumerate() {
            out[j] = match t {
                Transform::Identity => *v,
                Transform::Zscore { mean, std } => (v - mean) / std,
            };
        }
        out
    }

    pub fn apply(&self, z: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut g = Array2::ones((z.nrows(), self.output_dim()));
        for (mut out, row) in g.rows_mut().into_iter().zip(z.rows()) {
            out.assign(&self.apply_row(row));
        }
        g
    }

    /// Maps transformed coordinates back to raw feature space (intercept dropped).
    pub fn invert(&self, g: ArrayView2<'_, f64>) -> Array2<f64> {
        let p = self.transforms.len();
        let mut z = g.slice(s![.., ..p]).to_owned();
        for (j, t) in self.transforms.iter().enumerate() {
            if let Transform::Zscore { mean, std } = t {
                z.column_mut(j).mapv_inplace(|v| v * std + mean);
            }
        }
        z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub width: f64,
}

impl KernelConfig {
    /// Width `0.75 * sqrt(p)`.
    pub fn default_for(p: usize) -> Self {
        Self {
            width: 0.75 * (p as f64).sqrt(),
        }
    }
}

/// `psi_r = exp(-||x - z_r||^2 / width^2)`.
pub fn kernel_weights(x: ArrayView1<'_, f64>, z: ArrayView2<'_, f64>, cfg: &KernelConfig) -> Result<Array1<f64>> {
    if !(cfg.width.is_finite() && cfg.width > 0.0) {
        return Err(MameError::invalid(format!("kernel width must be positive, got {}", cfg.width)));
    }
    if z.ncols() != x.len() {
        return Err(MameError::invalid("perturbation width does not match the anchor"));
    }
    let w2 = cfg.width * cfg.width;
    Ok(z
        .rows()
        .into_iter()
        .map(|r| {
            let d2: f64 = r.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            (-d2 / w2).exp()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub size: usize,
    pub seed: u64,
    pub categorical_flip_prob: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn anchor_rng(seed: u64, anchor: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(anchor as u64)))
}

/// Gaussian perturbations of row `i` scaled by training std; categorical
/// features are resampled from the observed codes with probability `flip_prob`.
pub fn sample_neighborhood(d: &Dataset, stats: &FeatureStats, i: usize, cfg: &SamplingConfig) -> Result<Array2<f64>> {
    if i >= d.n() {
        return Err(MameError::invalid(format!("anchor index {i} out of range")));
    }
    if cfg.size == 0 {
        return Err(MameError::invalid("neighborhood size must be >= 1"));
    }
    if stats.mean.len() != d.p() {
        return Err(MameError::invalid("feature statistics do not match the dataset"));
    }
    let x = d.row(i);
    let mut rng = anchor_rng(cfg.seed, i);
    let mut z = Array2::zeros((cfg.size, d.p()));
    for r in 0..cfg.size {
        for j in 0..d.p() {
            z[[r, j]] = match (d.feature_kinds()[j], &stats.category_values[j]) {
                (FeatureKind::Categorical, Some(codes)) if !codes.is_empty() => {
                    if rng.gen_bool(cfg.categorical_flip_prob) {
                        *codes.choose(&mut rng).expect("non-empty")
                    } else {
                        x[j]
                    }
                }
                _ => {
                    let xi: f64 = rng.sample(StandardNormal);
                    x[j] + stats.std[j] * xi
                }
            };
        }
    }
    Ok(z)
}

#[derive(Debug, Clone)]
pub struct Neighborhood {
    pub anchor_idx: usize,
    /// Raw perturbations (`m x p`).
    pub z: Array2<f64>,
    /// `z` passed through the coordinate map (`m x q`).
    pub g: Array2<f64>,
    pub psi: Array1<f64>,
    pub fz: Array1<f64>,
}

/// Samples, weights and labels one neighborhood per index in `idx`, querying
/// the oracle once over all perturbations in raw feature space.
pub fn build_neighborhoods(
    d: &Dataset,
    stats: &FeatureStats,
    oracle: &Oracle,
    map: &CoordinateMap,
    kernel: &KernelConfig,
    sampling: &SamplingConfig,
    idx: &[usize],
) -> Result<Vec<Neighborhood>> {
    if let Some(p) = oracle.n_features() {
        if p != d.p() {
            return Err(MameError::invalid(format!("oracle expects {p} features, dataset has {}", d.p())));
        }
    }
    if map.input_dim() != d.p() {
        return Err(MameError::invalid("coordinate map width does not match the dataset"));
    }
    let zs: Vec<Array2<f64>> = idx
        .par_iter()
        .map(|&i| sample_neighborhood(d, stats, i, sampling))
        .collect::<Result<_>>()?;
    if zs.is_empty() {
        return Ok(Vec::new());
    }
    let views: Vec<_> = zs.iter().map(|z| z.view()).collect();
    let stacked = ndarray::concatenate(Axis(0), &views).map_err(|e| MameError::invalid(e.to_string()))?;
    let fz_all = oracle.predict_batch(stacked.view())?;

    let m = sampling.size;
    zs.into_iter()
        .zip(idx)
        .enumerate()
        .map(|(slot, (z, &i))| {
            let psi = kernel_weights(d.row(i), z.view(), kernel)?;
            let g = map.apply(z.view());
            let fz = fz_all.slice(s![slot * m..(slot + 1) * m]).to_owned();
            Ok(Neighborhood {
                anchor_idx: i,
                z,
                g,
                psi,
                fz,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::feature_stats;
    use crate::oracle::{make_synthetic_blackbox, SyntheticKind};
    use ndarray::array;

    fn toy() -> Dataset {
        Dataset::from_matrix(array![[0.0, 1.0], [1.0, -1.0], [2.0, 0.5], [-1.0, 0.0]]).unwrap()
    }

    fn sampling(size: usize, seed: u64) -> SamplingConfig {
        SamplingConfig {
            size,
            seed,
            categorical_flip_prob: 0.3,
        }
    }

    #[test]
    fn kernel_values() {
        let cfg = KernelConfig { width: 1.5 };
        let x = array![0.0, 0.0];
        let w = kernel_weights(x.view(), array![[0.0, 0.0], [1.5, 0.0]].view(), &cfg).unwrap();
        assert_eq!(w[0], 1.0);
        assert!((w[1] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(KernelConfig::default_for(4).width, 1.5);
        assert!(kernel_weights(x.view(), array![[0.0, 0.0]].view(), &KernelConfig { width: 0.0 }).is_err());
    }

    #[test]
    fn constant_features_get_unit_noise() {
        let d = Dataset::from_matrix(array![[3.0, 3.0], [3.0, 3.0], [3.0, 3.0]]).unwrap();
        let stats = feature_stats(&d, &[0, 1, 2]).unwrap();
        let z = sample_neighborhood(&d, &stats, 0, &sampling(2000, 1)).unwrap();
        let mean = z.mean().unwrap();
        let var = z.mapv(|v| (v - 3.0).powi(2)).mean().unwrap();
        assert!((mean - 3.0).abs() < 0.1 && (var - 1.0).abs() < 0.1, "{mean} {var}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = toy();
        let stats = feature_stats(&d, &[0, 1, 2, 3]).unwrap();
        let a = sample_neighborhood(&d, &stats, 2, &sampling(10, 42)).unwrap();
        let b = sample_neighborhood(&d, &stats, 2, &sampling(10, 42)).unwrap();
        assert_eq!(a, b);
        let c = sample_neighborhood(&d, &stats, 2, &sampling(10, 43)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_category_never_changes() {
        let d = Dataset::new(
            array![[2.0, 0.5], [2.0, 1.5]],
            vec!["c".into(), "v".into()],
            vec![FeatureKind::Categorical, FeatureKind::Continuous],
            vec!["0".into(), "1".into()],
        )
        .unwrap();
        let stats = feature_stats(&d, &[0, 1]).unwrap();
        let cfg = SamplingConfig {
            categorical_flip_prob: 1.0,
            ..sampling(200, 5)
        };
        let z = sample_neighborhood(&d, &stats, 1, &cfg).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 2.0));
    }

    #[test]
    fn builds_labelled_neighborhoods() {
        let d = toy();
        let stats = feature_stats(&d, &[0, 1, 2, 3]).unwrap();
        let oracle = make_synthetic_blackbox(SyntheticKind::Linear, 2, 3).unwrap();
        let map = CoordinateMap::identity(2);
        let kernel = KernelConfig::default_for(2);
        let nb = build_neighborhoods(&d, &stats, &oracle, &map, &kernel, &sampling(10, 1), &[0, 1, 2]).unwrap();
        assert_eq!(nb.len(), 3);
        assert_eq!(nb.iter().map(|n| n.fz.len()).sum::<usize>(), 30);
        let crate::oracle::Oracle::Linear(lin) = &oracle else { unreachable!() };
        for n in &nb {
            assert_eq!(n.g, n.z);
            for (row, f) in n.z.rows().into_iter().zip(n.fz.iter()) {
                let expect: f64 = row.iter().zip(&lin.weights).map(|(a, b)| a * b).sum::<f64>() + lin.bias;
                assert!((expect - f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn neighborhoods_do_not_depend_on_index_order() {
        let d = toy();
        let stats = feature_stats(&d, &[0, 1, 2, 3]).unwrap();
        let oracle = make_synthetic_blackbox(SyntheticKind::AdditiveSine, 2, 3).unwrap();
        let map = CoordinateMap::identity(2);
        let kernel = KernelConfig::default_for(2);
        let fwd = build_neighborhoods(&d, &stats, &oracle, &map, &kernel, &sampling(6, 9), &[0, 1, 3]).unwrap();
        let rev = build_neighborhoods(&d, &stats, &oracle, &map, &kernel, &sampling(6, 9), &[3, 1, 0]).unwrap();
        for (a, b) in fwd.iter().zip(rev.iter().rev()) {
            assert_eq!(a.anchor_idx, b.anchor_idx);
            assert_eq!(a.z, b.z);
            assert_eq!(a.fz, b.fz);
            assert_eq!(a.psi, b.psi);
        }
    }

    #[test]
    fn intercept_column_is_appended() {
        let map = CoordinateMap::identity(2).with_intercept(true);
        let g = map.apply(array![[1.0, 2.0]].view());
        assert_eq!(g, array![[1.0, 2.0, 1.0]]);
        assert_eq!(map.penalty_mask(), vec![1.0, 1.0, 0.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn zscore_inverse_round_trips(
                vals in proptest::collection::vec(-50.0f64..50.0, 12),
                means in proptest::collection::vec(-5.0f64..5.0, 3),
                stds in proptest::collection::vec(0.1f64..10.0, 3),
            ) {
                let stats = FeatureStats { mean: means, std: stds, category_values: vec![None; 3] };
                let map = CoordinateMap::zscore(&stats).with_intercept(true);
                let z = Array2::from_shape_vec((4, 3), vals).unwrap();
                let back = map.invert(map.apply(z.view()).view());
                for (a, b) in z.iter().zip(back.iter()) {
                    prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }

            #[test]
            fn kernel_is_monotone_in_distance(r1 in 0.0f64..10.0, r2 in 0.0f64..10.0) {
                let cfg = KernelConfig { width: 1.3 };
                let x = array![0.0, 0.0];
                let w = kernel_weights(x.view(), array![[r1, 0.0], [0.0, r2]].view(), &cfg).unwrap();
                if r1 <= r2 { prop_assert!(w[0] >= w[1]); } else { prop_assert!(w[0] <= w[1]); }
                prop_assert!(w.iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }
    }
}
