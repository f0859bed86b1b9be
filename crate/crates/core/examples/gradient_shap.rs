//! GradientSHAP on a trained image classifier: the attributions of each
//! class add up to the gap between its output and the background average.

use shapdrift::data::{build_stream, make_slice, synth_images};
use shapdrift::explainers::{Explainable, Explainer, ShapConfig};
use shapdrift::models::{Architecture, Model, ModelSpec};
use shapdrift::strategies::{train_joint, OptConfig};
use shapdrift::{Result, Tensor};

fn main() -> Result<()> {
    let data = synth_images(10, 80, 16, 2)?;
    let stream = build_stream(&data, 5, &(0..10).collect::<Vec<_>>())?;
    let model = Model::init(&ModelSpec::new(Architecture::Mlp, vec![64], 10, 2), data.kind())?;
    let mut opt = OptConfig::new(0.1);
    opt.epochs = 8;
    let trained = train_joint(model, &stream, &opt)?.snapshots.remove(0);

    let slice = make_slice(&stream, 50, 3, 2)?;
    let explainer = Explainer::new(&trained, slice.background.inputs(), &ShapConfig { n_samples: 1000, ..ShapConfig::default() })?;
    for i in 0..slice.probes.len() {
        let x = slice.probes.example(i)?;
        let out = trained.outputs(&Tensor::stack(&[x.clone()])?)?;
        let maps = explainer.explain_raw(&x, i)?;
        let c = slice.probes.labels()[i];
        let gap = out.data()[c] - maps[c].phi0;
        println!(
            "probe {i} (class {c}): f(x) - phi0 = {gap:+.4}, sum phi = {:+.4}, positive part {:.4}",
            maps[c].total(),
            maps[c].clamp_positive().total()
        );
    }
    Ok(())
}
