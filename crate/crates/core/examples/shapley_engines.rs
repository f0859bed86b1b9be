//! The three SHAP engines side by side on a small network with 8 inputs,
//! where exact enumeration is still cheap.

use shapdrift::data::InputKind;
use shapdrift::explainers::{exact_shapley, gradient_shap, sampling_shapley, ShapConfig};
use shapdrift::models::{Architecture, Model, ModelSpec};
use shapdrift::{Result, Tensor};

fn main() -> Result<()> {
    let k = 8;
    let model = Model::init(&ModelSpec::new(Architecture::Mlp, vec![16], 2, 5), InputKind::Sequence { steps: 1, features: k })?;
    let x = Tensor::new(vec![1, k], (0..k).map(|i| (i as f64 * 0.7).sin() * 2.0).collect())?;
    let baseline = Tensor::zeros(vec![1, k]);
    let background = Tensor::zeros(vec![1, 1, k]);
    let cfg = ShapConfig { n_samples: 4000, seed: 1, ..ShapConfig::default() };

    let exact = exact_shapley(&model, 1, &x, &baseline)?;
    let sampled = sampling_shapley(&model, 1, &x, &background, &cfg)?;
    let grad = gradient_shap(&model, 1, &x, &background, &cfg)?;
    println!("feature      exact   sampling (±se)   gradient");
    for i in 0..k {
        println!(
            "{i:>7} {:+10.5} {:+10.5} ({:.5}) {:+10.5}",
            exact.phi.data()[i],
            sampled.map.phi.data()[i],
            sampled.stderr.data()[i],
            grad.phi.data()[i]
        );
    }
    println!("sums    {:+10.5} {:+10.5}          {:+10.5}", exact.total(), sampled.map.total(), grad.total());
    println!("phi0    {:+10.5} {:+10.5}          {:+10.5}", exact.phi0, sampled.map.phi0, grad.phi0);
    Ok(())
}
