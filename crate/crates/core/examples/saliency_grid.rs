//! Writes a PGM grid: each row is one probe followed by its ten class maps.
//! Pass an output path, or it goes to `saliency.pgm`.

use shapdrift::data::{build_stream, make_slice, synth_images};
use shapdrift::explainers::{Explainer, ShapConfig};
use shapdrift::models::{Architecture, Model, ModelSpec};
use shapdrift::runner::{write_grid, SaliencyScale};
use shapdrift::strategies::{train_joint, OptConfig};
use shapdrift::Result;

fn main() -> Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "saliency.pgm".into());
    let data = synth_images(10, 80, 16, 3)?;
    let stream = build_stream(&data, 5, &(0..10).collect::<Vec<_>>())?;
    let model = Model::init(&ModelSpec::new(Architecture::Mlp, vec![64], 10, 3), data.kind())?;
    let mut opt = OptConfig::new(0.1);
    opt.epochs = 8;
    let trained = train_joint(model, &stream, &opt)?.snapshots.remove(0);

    let slice = make_slice(&stream, 50, 2, 3)?;
    let explainer = Explainer::new(&trained, slice.background.inputs(), &ShapConfig::default())?;
    let mut rows = Vec::new();
    for i in 0..slice.probes.len() {
        let x = slice.probes.example(i)?;
        let maps = explainer.explain(&x, i)?.into_iter().map(|m| m.phi).collect();
        rows.push((x, maps));
    }
    write_grid(&rows, &path, SaliencyScale::PerTile)?;
    println!("wrote {path}");
    Ok(())
}
