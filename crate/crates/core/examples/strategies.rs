//! Naive fine-tuning against replay (class-balanced and GSS) on split
//! synthetic images. Prints the test-accuracy matrix of each strategy.

use shapdrift::data::{build_stream, synth_images};
use shapdrift::models::{Architecture, Model, ModelSpec};
use shapdrift::strategies::{train_joint, train_naive, train_replay, BufferPolicy, OptConfig, ReplayBuffer};
use shapdrift::Result;

fn main() -> Result<()> {
    let data = synth_images(10, 120, 16, 1)?;
    let stream = build_stream(&data, 5, &(0..10).collect::<Vec<_>>())?;
    let model = Model::init(&ModelSpec::new(Architecture::Mlp, vec![64], 10, 1), data.kind())?;
    let mut opt = OptConfig::new(0.1);
    opt.batch_size = 32;

    let logs = [
        train_naive(model.clone(), &stream, &opt)?,
        train_replay(model.clone(), &stream, ReplayBuffer::new(200, BufferPolicy::ClassBalanced)?, &opt)?,
        train_replay(model.clone(), &stream, ReplayBuffer::new(200, BufferPolicy::GssGreedy)?, &opt)?,
        train_joint(model, &stream, &opt)?,
    ];
    for log in &logs {
        println!("{} (final average {:.3})", log.strategy.name(), log.final_average_accuracy());
        for rec in &log.records {
            let row: Vec<String> = rec.test_accuracy.iter().map(|a| format!("{a:.2}")).collect();
            println!("  after e{}: [{}]  buffer {}", rec.experience + 1, row.join(" "), rec.buffer_len);
        }
    }
    Ok(())
}
