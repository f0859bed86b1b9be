//! Echo-state reservoir helpers: spectral radius estimation and the leaky
//! state update.

use crate::error::{Error, Result};
use crate::numerics::kernels::{gemm, MatRef};
use crate::numerics::Tensor;

const SQUARINGS: usize = 20;

/// Spectral radius of a square matrix by Gelfand's formula,
/// `ρ = lim ‖Wᵏ‖^{1/k}`, evaluated at `k = 2^20` through repeated squaring
/// with renormalisation. Unlike vector power iteration this converges when
/// the dominant eigenvalues form a complex pair or are nearly tied in
/// modulus, which is the usual case for random non-symmetric reservoirs.
pub fn spectral_radius(w: &Tensor) -> Result<f64> {
    let &[n, m] = w.shape() else {
        return Err(Error::invalid(format!("spectral radius of non-matrix {:?}", w.shape())));
    };
    if n != m || n == 0 {
        return Err(Error::invalid(format!("spectral radius needs a square matrix, got {n}x{m}")));
    }
    let mut p = w.data().to_vec();
    let mut log_scale = 0.0; // log of the factor divided out of W^(2^j)
    let mut next = vec![0.0; n * n];
    for j in 0..=SQUARINGS {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        p.iter_mut().for_each(|v| *v /= norm);
        log_scale += norm.ln() * f64::powi(2.0, (SQUARINGS - j) as i32);
        if j == SQUARINGS {
            break;
        }
        let a = MatRef::row_major(&p, n, n);
        gemm(a, a, &mut next, 0.0);
        std::mem::swap(&mut p, &mut next);
    }
    // p now has unit norm and W^(2^S) = exp(log_scale / 1) * p, with the
    // weights above folding each level's normaliser into the final power.
    Ok((log_scale / f64::powi(2.0, SQUARINGS as i32)).exp())
}

/// One leaky-integrator reservoir update for a single example:
/// `state' = (1-leak)·state + leak·tanh(input·w_in + state·w_res)`.
pub fn esn_step(w_in: &Tensor, w_res: &Tensor, leak: f64, state: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let (&[f, n], &[n1, n2]) = (w_in.shape(), w_res.shape()) else {
        return Err(Error::invalid("reservoir weights must be matrices"));
    };
    if n1 != n || n2 != n || state.len() != n || input.len() != f {
        return Err(Error::Shape {
            op: "esn_step",
            lhs: vec![input.len(), state.len()],
            rhs: vec![f, n],
        });
    }
    let mut pre = vec![0.0; n];
    gemm(MatRef::row_major(input, 1, f), MatRef::row_major(w_in.data(), f, n), &mut pre, 0.0);
    gemm(MatRef::row_major(state, 1, n), MatRef::row_major(w_res.data(), n, n), &mut pre, 1.0);
    Ok(state
        .iter()
        .zip(pre)
        .map(|(s, p)| (1.0 - leak) * s + leak * p.tanh())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_rotation_radius() {
        let d = Tensor::new(vec![2, 2], vec![0.5, 0.0, 0.0, -0.8]).unwrap();
        assert!((spectral_radius(&d).unwrap() - 0.8).abs() < 1e-4);
        // rotation by 90° scaled by 0.7 has eigenvalues ±0.7i
        let r = Tensor::new(vec![2, 2], vec![0.0, -0.7, 0.7, 0.0]).unwrap();
        assert!((spectral_radius(&r).unwrap() - 0.7).abs() < 1e-6);
        assert_eq!(spectral_radius(&Tensor::zeros(vec![3, 3])).unwrap(), 0.0);
    }

    #[test]
    fn step_fixed_points() {
        let w_in = Tensor::full(vec![2, 3], 0.3);
        let w = Tensor::full(vec![3, 3], 0.1);
        assert_eq!(esn_step(&w_in, &w, 1.0, &[0.0; 3], &[0.0; 2]).unwrap(), vec![0.0; 3]);
        let s = [0.2, -0.4, 0.9];
        assert_eq!(esn_step(&w_in, &w, 0.0, &s, &[5.0, -3.0]).unwrap(), s.to_vec());
    }
}
