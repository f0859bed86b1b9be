//! An echo-state network: a fixed random reservoir scaled to a target
//! spectral radius with a trainable linear readout.

use shapdrift::data::{build_stream, synth_sequences};
use shapdrift::models::{spectral_radius, Architecture, Model, ModelSpec};
use shapdrift::strategies::{train_replay, BufferPolicy, OptConfig, ReplayBuffer};
use shapdrift::Result;

fn main() -> Result<()> {
    let data = synth_sequences(10, 120, 24, 12, 0)?;
    let stream = build_stream(&data, 5, &(0..10).collect::<Vec<_>>())?;
    let mut spec = ModelSpec::new(Architecture::Esn, vec![64], 10, 0);
    spec.leak = 0.3;
    let model = Model::init(&spec, data.kind())?;
    let w = &model.parameters()[1].value;
    println!("reservoir {:?}, spectral radius {:.4}", w.shape(), spectral_radius(w)?);
    println!("trainable parameters {} of {}", model.trainable_count(), model.parameters().iter().map(|p| p.value.len()).sum::<usize>());

    let before = model.frozen_checksum();
    let mut opt = OptConfig::new(0.3);
    opt.batch_size = 32;
    let log = train_replay(model, &stream, ReplayBuffer::new(200, BufferPolicy::ClassBalanced)?, &opt)?;
    println!("replay final average accuracy {:.3}", log.final_average_accuracy());
    let after = log.snapshots.last().unwrap().frozen_checksum();
    println!("reservoir checksum {before:016x} -> {after:016x} ({})", if before == after { "unchanged" } else { "CHANGED" });

    let states = log.snapshots[0].reservoir_states(&stream.first().test.inputs().select_first(&[0, 1])?)?;
    println!("final states of two test sequences: {:?}", &states.data()[..4]);
    Ok(())
}
