//! The two drift measures on hand-made maps.

use shapdrift::protocol::{metric_m, metric_m_pool, metric_m_pool_processed};
use shapdrift::{Result, Tensor};

fn main() -> Result<()> {
    let s = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
    let j = Tensor::from_vec(vec![0.0, 1.0, 2.0]);
    println!("M([1,2,3], [0,1,2]) = {}", metric_m(&s, &j)?);

    let mut block = Tensor::zeros(vec![8, 8]);
    for y in 0..4 {
        for x in 0..4 {
            block.data_mut()[y * 8 + x] = 1.0;
        }
    }
    println!("pooled drift of a lit quadrant vs nothing = {}", metric_m_pool_processed(&block, &Tensor::zeros(vec![8, 8]), 4)?);

    // A blob that moves by one window changes M_pool but not M.
    let blob = |cx: usize| {
        let mut t = Tensor::zeros(vec![16, 16]);
        for y in 6..10 {
            for x in cx..cx + 4 {
                t.data_mut()[y * 16 + x] = 1.0;
            }
        }
        t
    };
    let (a, b) = (blob(2), blob(10));
    println!("moved blob: M = {}, M_pool = {:.4}", metric_m(&a, &b)?, metric_m_pool(&a, &b, 4)?);
    Ok(())
}
