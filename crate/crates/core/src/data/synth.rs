//! Deterministic stand-ins for image and spectrogram benchmarks.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

const IMAGE_NOISE: f64 = 0.08;
const SEQUENCE_NOISE: f64 = 0.1;

/// Images of one oriented, elongated Gaussian blob per class on a dark
/// background. Class `c` puts its blob on a ring at angle `2πc/classes`, with
/// the major axis rotated by `πc/classes`. Per-example position jitter,
/// amplitude and pixel noise; values clipped to `[0, 1]`.
///
/// Output shape `[classes · per_class, 1, side, side]`; labels cycle through
/// the classes.
pub fn synth_images(classes: usize, per_class: usize, side: usize, seed: u64) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::invalid("synth_images needs at least 2 classes"));
    }
    if side < 4 {
        return Err(Error::invalid("synth_images needs side >= 4"));
    }
    let mut rng = rng::seeded(seed);
    let noise = Normal::new(0.0, IMAGE_NOISE).expect("valid std");
    let s = side as f64;
    let center = (s - 1.0) / 2.0;
    let (radius, major, minor) = (0.27 * s, 0.16 * s, 0.07 * s);
    let jitter = 0.05 * s;

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let angle = 2.0 * PI * c as f64 / classes as f64;
        let theta = PI * c as f64 / classes as f64;
        let cx = center + radius * angle.cos() + rng.random_range(-jitter..=jitter);
        let cy = center + radius * angle.sin() + rng.random_range(-jitter..=jitter);
        let amp = rng.random_range(0.7..1.0);
        let (ct, st) = (theta.cos(), theta.sin());
        for y in 0..side {
            for x in 0..side {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let u = dx * ct + dy * st;
                let v = -dx * st + dy * ct;
                let g = amp * (-(u * u) / (2.0 * major * major) - (v * v) / (2.0 * minor * minor)).exp();
                data.push((g + noise.sample(&mut rng)).clamp(0.0, 1.0));
            }
        }
        labels.push(c);
    }
    LabeledDataset::new(Tensor::new(vec![n, 1, side, side], data)?, labels, classes)
}

/// Mel-spectrogram-like sequences. Class `c` is a Gaussian frequency band
/// whose centre sweeps linearly in time (direction alternating with class
/// parity) under an amplitude envelope oscillating `1 + c mod 3` times per
/// sequence. Band position jitter, envelope phase and additive noise vary per
/// example.
///
/// Output shape `[classes · per_class, steps, features]`.
pub fn synth_sequences(
    classes: usize,
    per_class: usize,
    steps: usize,
    features: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 {
        return Err(Error::invalid("synth_sequences needs at least 2 classes"));
    }
    if steps == 0 || features == 0 {
        return Err(Error::invalid("synth_sequences needs positive steps and features"));
    }
    let mut rng = rng::seeded(seed);
    let noise = Normal::new(0.0, SEQUENCE_NOISE).expect("valid std");
    let f = features as f64;
    let width = (0.06 * f).max(0.8);
    let sweep = 0.12 * f;

    let n = classes * per_class;
    let mut data = Vec::with_capacity(n * steps * features);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let base = f * (0.12 + 0.76 * c as f64 / (classes - 1) as f64) + rng.random_range(-0.03..=0.03) * f;
        let direction = if c % 2 == 0 { 1.0 } else { -1.0 };
        let cycles = (1 + c % 3) as f64;
        let phase = rng.random_range(0.0..2.0 * PI);
        for t in 0..steps {
            let tau = if steps > 1 { t as f64 / (steps - 1) as f64 } else { 0.0 };
            let centre = base + direction * sweep * (tau - 0.5);
            let env = 0.65 + 0.35 * (2.0 * PI * cycles * tau + phase).sin();
            for k in 0..features {
                let d = (k as f64 - centre) / width;
                data.push(env * (-0.5 * d * d).exp() + noise.sample(&mut rng));
            }
        }
        labels.push(c);
    }
    LabeledDataset::new(Tensor::new(vec![n, steps, features], data)?, labels, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_counts_are_balanced() {
        let ds = synth_images(10, 100, 14, 1).unwrap();
        assert_eq!(ds.len(), 1000);
        assert_eq!(ds.inputs().shape(), &[1000, 1, 14, 14]);
        for c in 0..10 {
            assert_eq!(ds.indices_of(c).len(), 100);
        }
        assert!(ds.inputs().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(synth_images(3, 4, 8, 5).unwrap(), synth_images(3, 4, 8, 5).unwrap());
        assert_ne!(synth_images(3, 4, 8, 5).unwrap(), synth_images(3, 4, 8, 6).unwrap());
        assert_eq!(synth_sequences(3, 2, 7, 5, 5).unwrap(), synth_sequences(3, 2, 7, 5, 5).unwrap());
    }

    #[test]
    fn sequence_defaults_shape() {
        let ds = synth_sequences(10, 1, 101, 40, 0).unwrap();
        assert_eq!(ds.example(0).unwrap().shape(), &[101, 40]);
        assert!(synth_sequences(10, 0, 101, 40, 0).unwrap().is_empty());
        assert!(synth_sequences(1, 3, 101, 40, 0).is_err());
    }
}
