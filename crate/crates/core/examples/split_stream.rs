//! Class-incremental streams: a labelled pool split into experiences by a
//! class order, plus the background/probe slice explanations are tracked on.

use shapdrift::data::{build_stream, make_slice, synth_images, synth_sequences};
use shapdrift::Result;

fn main() -> Result<()> {
    let images = synth_images(10, 60, 16, 0)?;
    let order = [3, 7, 0, 1, 2, 4, 5, 6, 8, 9];
    let stream = build_stream(&images, 5, &order)?;
    for (i, e) in stream.experiences().iter().enumerate() {
        println!("e{}: classes {:?}, {} train / {} test", i + 1, e.classes, e.train.len(), e.test.len());
    }
    let slice = make_slice(&stream, 40, 5, 0)?;
    println!(
        "background {} examples, probes {} examples with labels {:?}",
        slice.background.len(),
        slice.probes.len(),
        slice.probes.labels()
    );

    let seqs = synth_sequences(10, 20, 24, 12, 0)?;
    println!("sequence pool shape {:?}", seqs.inputs().shape());
    Ok(())
}
