use super::{check_finite, AttributionMap, Explainable};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Largest feature count the exact engine will enumerate.
pub const MAX_EXACT_FEATURES: usize = 20;

const CHUNK: usize = 4096;

/// Exact Shapley values of output `class` at `x`, where features absent from
/// a coalition take their `baseline` value. `phi0` is `f(baseline)`.
pub fn exact_shapley(model: &dyn Explainable, class: usize, x: &Tensor, baseline: &Tensor) -> Result<AttributionMap> {
    if class >= model.num_outputs() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    Ok(exact_shapley_all(model, x, baseline)?.swap_remove(class))
}

/// Exact Shapley values for every output; coalition values are shared.
pub fn exact_shapley_all(model: &dyn Explainable, x: &Tensor, baseline: &Tensor) -> Result<Vec<AttributionMap>> {
    if x.shape() != baseline.shape() {
        return Err(Error::Shape {
            op: "exact_shapley".into(),
            lhs: x.shape().to_vec(),
            rhs: baseline.shape().to_vec(),
        });
    }
    let k = x.len();
    if k > MAX_EXACT_FEATURES {
        return Err(Error::invalid(format!(
            "exact Shapley enumerates 2^{k} coalitions; at most {MAX_EXACT_FEATURES} features are supported, \
             use the sampling or gradient engine instead"
        )));
    }
    let c = model.num_outputs();
    let coalitions = 1usize << k;
    let mut example_shape = vec![0];
    example_shape.extend_from_slice(x.shape());

    // value[mask * c + class]
    let mut value = Vec::with_capacity(coalitions * c);
    for start in (0..coalitions).step_by(CHUNK) {
        let end = (start + CHUNK).min(coalitions);
        let mut data = Vec::with_capacity((end - start) * k);
        for mask in start..end {
            data.extend((0..k).map(|i| if mask >> i & 1 == 1 { x.data()[i] } else { baseline.data()[i] }));
        }
        example_shape[0] = end - start;
        let out = model.outputs(&Tensor::new(example_shape.clone(), data)?)?;
        check_finite(&out, "model output during exact Shapley")?;
        value.extend_from_slice(out.data());
    }

    // weight[s] = s! (k-s-1)! / k!
    let weights: Vec<f64> = (0..k)
        .map(|s| {
            let mut w = 1.0 / k as f64;
            // 1 / (k * C(k-1, s))
            for j in 0..s {
                w *= (s - j) as f64 / (k - 1 - j) as f64;
            }
            w
        })
        .collect();

    let mut phi = vec![vec![0.0; k]; c];
    for mask in 0..coalitions {
        let s = mask.count_ones() as usize;
        for i in 0..k {
            if mask >> i & 1 == 0 {
                let with = mask | 1 << i;
                let w = weights[s];
                for (cls, p) in phi.iter_mut().enumerate() {
                    p[i] += w * (value[with * c + cls] - value[mask * c + cls]);
                }
            }
        }
    }
    phi.into_iter()
        .enumerate()
        .map(|(cls, p)| {
            Ok(AttributionMap {
                phi: Tensor::new(x.shape().to_vec(), p)?,
                phi0: value[cls],
                class_id: cls,
            })
        })
        .collect()
}
