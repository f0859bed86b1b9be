use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{check_finite, AttributionMap, Explainable, ShapConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

const MAX_ROWS: usize = 4096;

#[derive(Debug, Clone)]
pub struct SamplingEstimate {
    pub map: AttributionMap,
    /// Standard error of each `phi` entry.
    pub stderr: Tensor,
}

/// Permutation-sampling Shapley estimate of output `class` at `x`.
///
/// Each of `n_samples` draws picks a background row and a feature order, then
/// walks from the background row to `x` one feature at a time, crediting each
/// feature with the change it causes. `phi0` is the mean output over the drawn
/// background rows.
pub fn sampling_shapley(
    model: &dyn Explainable,
    class: usize,
    x: &Tensor,
    background: &Tensor,
    config: &ShapConfig,
) -> Result<SamplingEstimate> {
    if class >= model.num_outputs() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    Ok(sampling_shapley_all(model, x, background, config)?.swap_remove(class))
}

/// Sampling estimates for every output from one shared set of draws.
pub fn sampling_shapley_all(
    model: &dyn Explainable,
    x: &Tensor,
    background: &Tensor,
    config: &ShapConfig,
) -> Result<Vec<SamplingEstimate>> {
    config.validate()?;
    let k = x.len();
    let b = background.shape().first().copied().unwrap_or(0);
    if b == 0 || background.len() != b * k {
        return Err(Error::invalid("background must be a non-empty batch shaped like the input"));
    }
    let c = model.num_outputs();
    let mut r = rng::seeded(config.seed);
    let per_chunk = (MAX_ROWS / (k + 1)).max(1);

    let mut sum = vec![0.0; c * k];
    let mut sum_sq = vec![0.0; c * k];
    let mut base = vec![0.0; c];
    let mut order: Vec<usize> = (0..k).collect();
    let mut done = 0;
    while done < config.n_samples {
        let m = per_chunk.min(config.n_samples - done);
        let mut rows = Vec::with_capacity(m * (k + 1) * k);
        let mut orders = Vec::with_capacity(m);
        for _ in 0..m {
            let j = r.random_range(0..b);
            let mut z = background.data()[j * k..(j + 1) * k].to_vec();
            order.shuffle(&mut r);
            rows.extend_from_slice(&z);
            for &i in &order {
                z[i] = x.data()[i];
                rows.extend_from_slice(&z);
            }
            orders.push(order.clone());
        }
        let mut shape = vec![m * (k + 1)];
        shape.extend_from_slice(x.shape());
        let out = model.outputs(&Tensor::new(shape, rows)?)?;
        check_finite(&out, "model output during sampling Shapley")?;
        let out = out.data();
        for (s, ord) in orders.iter().enumerate() {
            let walk = &out[s * (k + 1) * c..(s + 1) * (k + 1) * c];
            for cls in 0..c {
                base[cls] += walk[cls];
            }
            for (step, &i) in ord.iter().enumerate() {
                for cls in 0..c {
                    let d = walk[(step + 1) * c + cls] - walk[step * c + cls];
                    sum[cls * k + i] += d;
                    sum_sq[cls * k + i] += d * d;
                }
            }
        }
        done += m;
    }

    let n = config.n_samples as f64;
    (0..c)
        .map(|cls| {
            let mean: Vec<f64> = sum[cls * k..(cls + 1) * k].iter().map(|s| s / n).collect();
            let stderr = mean
                .iter()
                .zip(&sum_sq[cls * k..(cls + 1) * k])
                .map(|(mu, sq)| {
                    if config.n_samples < 2 {
                        return f64::INFINITY;
                    }
                    let var = ((sq / n - mu * mu) * n / (n - 1.0)).max(0.0);
                    (var / n).sqrt()
                })
                .collect();
            Ok(SamplingEstimate {
                map: AttributionMap {
                    phi: Tensor::new(x.shape().to_vec(), mean)?,
                    phi0: base[cls] / n,
                    class_id: cls,
                },
                stderr: Tensor::new(x.shape().to_vec(), stderr)?,
            })
        })
        .collect()
}
