use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{avgpool2d, normalize_zscore, Tensor};

/// Squared difference of the summed maps, divided by the feature count.
/// Both maps are expected to be clamped already.
pub fn metric_m(s: &Tensor, j: &Tensor) -> Result<f64> {
    if s.len() != j.len() {
        return Err(Error::Shape {
            op: "metric_m".into(),
            lhs: s.shape().to_vec(),
            rhs: j.shape().to_vec(),
        });
    }
    if s.is_empty() {
        return Err(Error::invalid("metric_m: empty maps"));
    }
    let d = s.sum() - j.sum();
    Ok(d * d / s.len() as f64)
}

/// Where clamping happens relative to z-scoring in [`metric_m_pool`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOrder {
    #[default]
    NormalizeThenClamp,
    ClampThenNormalize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default)]
    pub order: PoolOrder,
}

fn default_kernel() -> usize {
    4
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            kernel: default_kernel(),
            order: PoolOrder::default(),
        }
    }
}

/// z-score and clamp a raw signed map, in the configured order.
pub fn preprocess_for_pool(map: &Tensor, order: PoolOrder) -> Tensor {
    let relu = |t: &Tensor| t.map(|v| v.max(0.0));
    match order {
        PoolOrder::NormalizeThenClamp => relu(&normalize_zscore(map)),
        PoolOrder::ClampThenNormalize => normalize_zscore(&relu(map)),
    }
}

/// Average-pools an already preprocessed map over its trailing two axes.
pub fn pool_map(processed: &Tensor, kernel: usize) -> Result<Tensor> {
    if processed.ndim() < 2 {
        return Err(Error::invalid("M_pool needs a map with two spatial axes"));
    }
    let n = processed.ndim();
    let (h, w) = (processed.shape()[n - 2], processed.shape()[n - 1]);
    if kernel == 0 || h < kernel || w < kernel {
        return Err(Error::invalid(format!(
            "M_pool: map extent {h}x{w} is smaller than the {kernel}x{kernel} pooling kernel"
        )));
    }
    avgpool2d(processed, kernel, kernel)
}

/// Mean squared difference of two pooled maps.
pub fn pooled_mse(pooled_s: &Tensor, pooled_j: &Tensor) -> Result<f64> {
    if pooled_s.shape() != pooled_j.shape() {
        return Err(Error::Shape {
            op: "metric_m_pool".into(),
            lhs: pooled_s.shape().to_vec(),
            rhs: pooled_j.shape().to_vec(),
        });
    }
    let p = pooled_s.len() as f64;
    Ok(pooled_s.data().iter().zip(pooled_j.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p)
}

/// M_pool on maps that have already been normalized and clamped.
pub fn metric_m_pool_processed(s: &Tensor, j: &Tensor, kernel: usize) -> Result<f64> {
    if s.shape() != j.shape() {
        return Err(Error::Shape {
            op: "metric_m_pool".into(),
            lhs: s.shape().to_vec(),
            rhs: j.shape().to_vec(),
        });
    }
    pooled_mse(&pool_map(s, kernel)?, &pool_map(j, kernel)?)
}

/// Spatial drift between two raw signed maps: each is z-scored, clamped,
/// pooled with a `kernel × kernel` window (stride `kernel`), then compared by
/// mean squared difference.
pub fn metric_m_pool(s: &Tensor, j: &Tensor, kernel: usize) -> Result<f64> {
    metric_m_pool_with(s, j, &PoolConfig { kernel, order: PoolOrder::default() })
}

pub fn metric_m_pool_with(s: &Tensor, j: &Tensor, config: &PoolConfig) -> Result<f64> {
    if s.shape() != j.shape() {
        return Err(Error::Shape {
            op: "metric_m_pool".into(),
            lhs: s.shape().to_vec(),
            rhs: j.shape().to_vec(),
        });
    }
    metric_m_pool_processed(&preprocess_for_pool(s, config.order), &preprocess_for_pool(j, config.order), config.kernel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn m_hand_examples() {
        let j = Tensor::from_vec(vec![0.0, 1.0, 2.0]);
        assert_eq!(metric_m(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), &j).unwrap(), 3.0);
        assert_eq!(metric_m(&Tensor::from_vec(vec![3.0, 2.0, 1.0]), &j).unwrap(), 3.0);
        assert_eq!(metric_m(&j, &j).unwrap(), 0.0);
        assert!(metric_m(&j, &Tensor::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn pool_fixture() {
        let mut s = Tensor::zeros(vec![8, 8]);
        for r in 0..4 {
            for c in 0..4 {
                s.data_mut()[r * 8 + c] = 1.0;
            }
        }
        let j = Tensor::zeros(vec![8, 8]);
        assert_eq!(pool_map(&s, 4).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(metric_m_pool_processed(&s, &j, 4).unwrap(), 0.25);
    }

    #[test]
    fn pool_self_and_small_maps() {
        let s = Tensor::new(vec![8, 8], (0..64).map(|v| (v as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(metric_m_pool(&s, &s, 4).unwrap(), 0.0);
        let tiny = Tensor::zeros(vec![3, 3]);
        assert!(metric_m_pool(&tiny, &tiny, 4).is_err());
    }
}
