use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{check_finite, AttributionMap, Explainable, ShapConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

const CHUNK: usize = 256;

/// GradientSHAP (expected gradients) for output `class` at `x`.
pub fn gradient_shap(
    model: &dyn Explainable,
    class: usize,
    x: &Tensor,
    background: &Tensor,
    config: &ShapConfig,
) -> Result<AttributionMap> {
    if class >= model.num_outputs() {
        return Err(Error::invalid(format!("class {class} out of range")));
    }
    Ok(gradient_shap_all(model, x, background, config)?.swap_remove(class))
}

/// GradientSHAP for every output from one shared set of paths.
///
/// `phi_k = mean_s (x_k - b_k) ∂f/∂x_k (b + α (x - b))` with `b` drawn from
/// the background and `α ∈ [0, 1]`; `phi0` is the mean output over the whole
/// background.
pub fn gradient_shap_all(
    model: &dyn Explainable,
    x: &Tensor,
    background: &Tensor,
    config: &ShapConfig,
) -> Result<Vec<AttributionMap>> {
    let base = background_mean_output(model, background)?;
    gradient_shap_with_base(model, x, background, config, &base)
}

/// Mean of each output over a background batch.
pub fn background_mean_output(model: &dyn Explainable, background: &Tensor) -> Result<Vec<f64>> {
    let b = background.shape().first().copied().unwrap_or(0);
    if b == 0 {
        return Err(Error::invalid("background set is empty"));
    }
    let c = model.num_outputs();
    let mut mean = vec![0.0; c];
    for start in (0..b).step_by(CHUNK) {
        let idx: Vec<usize> = (start..(start + CHUNK).min(b)).collect();
        let out = model.outputs(&background.select_first(&idx)?)?;
        check_finite(&out, "model output on background")?;
        for row in out.data().chunks(c) {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / b as f64);
        }
    }
    Ok(mean)
}

/// Baselines are dealt from reshuffled passes over the background, and the
/// path positions of each baseline are stratified across passes, so that
/// with `n_samples` a multiple of the background size the estimate is close
/// to complete even at modest sample counts. Every individual draw is still
/// uniform over background rows and over `[0, 1]`.
pub(crate) fn gradient_shap_with_base(
    model: &dyn Explainable,
    x: &Tensor,
    background: &Tensor,
    config: &ShapConfig,
    base: &[f64],
) -> Result<Vec<AttributionMap>> {
    config.validate()?;
    let k = x.len();
    let b = background.shape().first().copied().unwrap_or(0);
    if b == 0 || background.len() != b * k {
        return Err(Error::invalid("background must be a non-empty batch shaped like the input"));
    }
    let c = model.num_outputs();
    let n = config.n_samples;
    let mut r = rng::seeded(config.seed);

    let passes = n.div_ceil(b);
    let offsets: Vec<usize> = (0..b).map(|_| r.random_range(0..passes)).collect();
    let mut draws: Vec<(usize, f64)> = Vec::with_capacity(n);
    let mut perm: Vec<usize> = (0..b).collect();
    for p in 0..passes {
        perm.shuffle(&mut r);
        for &j in perm.iter().take(n - p * b) {
            let stratum = (p + offsets[j]) % passes;
            let alpha = (stratum as f64 + r.random::<f64>()) / passes as f64;
            draws.push((j, alpha));
        }
    }
    let noise = if config.noise_std > 0.0 {
        Some(Normal::new(0.0, config.noise_std).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };

    let classes: Vec<usize> = (0..c).collect();
    let mut phi = vec![vec![0.0; k]; c];
    let xs = x.data();
    for chunk in draws.chunks(CHUNK) {
        let mut points = Vec::with_capacity(chunk.len() * k);
        let mut deltas = Vec::with_capacity(chunk.len() * k);
        for &(j, alpha) in chunk {
            let row = &background.data()[j * k..(j + 1) * k];
            for (xi, bi) in xs.iter().zip(row) {
                let mut z = bi + alpha * (xi - bi);
                if let Some(d) = &noise {
                    z += d.sample(&mut r);
                }
                points.push(z);
                deltas.push(xi - bi);
            }
        }
        let mut shape = vec![chunk.len()];
        shape.extend_from_slice(x.shape());
        let (_, grads) = model.output_gradients(&Tensor::new(shape, points)?, &classes)?;
        for (cls, g) in grads.iter().enumerate() {
            check_finite(g, "input gradient during GradientSHAP")?;
            for (gs, ds) in g.data().chunks(k).zip(deltas.chunks(k)) {
                for ((p, gi), di) in phi[cls].iter_mut().zip(gs).zip(ds) {
                    *p += gi * di;
                }
            }
        }
    }
    phi.into_iter()
        .enumerate()
        .map(|(cls, p)| {
            Ok(AttributionMap {
                phi: Tensor::new(x.shape().to_vec(), p.into_iter().map(|v| v / n as f64).collect())?,
                phi0: base[cls],
                class_id: cls,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explainers::LinearModel;

    fn linear() -> LinearModel {
        LinearModel {
            weights: Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 0.0, 3.0, 1.0]).unwrap(),
            bias: vec![0.2, -0.1],
        }
    }

    #[test]
    fn linear_model_matches_closed_form() {
        let f = linear();
        let x = Tensor::from_vec(vec![1.0, 2.0, -1.0]);
        let bg = Tensor::new(vec![2, 3], vec![0.0, 0.0, 0.0, 1.0, -1.0, 2.0]).unwrap();
        // Every baseline is used equally often when n is a multiple of 2.
        let maps = gradient_shap_all(&f, &x, &bg, &ShapConfig { n_samples: 10, ..Default::default() }).unwrap();
        let mean_b = [0.5, -0.5, 1.0];
        for (cls, m) in maps.iter().enumerate() {
            for i in 0..3 {
                let w = f.weights.data()[i * 2 + cls];
                assert!((m.phi.data()[i] - w * (x.data()[i] - mean_b[i])).abs() < 1e-12);
            }
        }
        assert!((maps[0].phi0 - (0.2 + 0.5 * (1.0 - 0.5 + 6.0))).abs() < 1e-12);
    }

    #[test]
    fn seeds_control_the_paths() {
        let f = linear();
        let x = Tensor::from_vec(vec![1.0, 2.0, -1.0]);
        let bg = Tensor::new(vec![3, 3], (0..9).map(|v| v as f64 * 0.1).collect()).unwrap();
        let cfg = ShapConfig { n_samples: 5, seed: 4, noise_std: 0.1, ..Default::default() };
        let a = gradient_shap(&f, 1, &x, &bg, &cfg).unwrap();
        let b = gradient_shap(&f, 1, &x, &bg, &cfg).unwrap();
        assert_eq!(a, b);
        let c = gradient_shap(&f, 1, &x, &bg, &ShapConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a, c);
    }
}
