//! Reverse-mode gradients on a tape, checked against central differences.

use shapdrift::{Result, Tape, Tensor};

fn main() -> Result<()> {
    let x = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.2, -0.7]])?;
    let w = Tensor::from_rows(&[vec![0.3, -0.2], vec![0.8, 0.1], vec![-0.5, 0.4]])?;

    let loss = |w: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let h = tape.matmul(xv, wv)?;
        let h = tape.tanh(h);
        let l = tape.cross_entropy(h, &[1, 0])?;
        Ok(tape.value(l).item().unwrap())
    };

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.var(w.clone(), true);
    let h = tape.matmul(xv, wv)?;
    let h = tape.tanh(h);
    let l = tape.cross_entropy(h, &[1, 0])?;
    let grads = tape.backward(l)?;
    let g = grads.get(wv).unwrap();

    println!("loss {:.6}", tape.value(l).item().unwrap());
    let eps = 1e-5;
    for i in 0..w.len() {
        let (mut up, mut down) = (w.clone(), w.clone());
        up.data_mut()[i] += eps;
        down.data_mut()[i] -= eps;
        let fd = (loss(&up)? - loss(&down)?) / (2.0 * eps);
        println!("dL/dw[{i}]  tape {:+.8}  finite difference {:+.8}", g.data()[i], fd);
    }
    Ok(())
}
