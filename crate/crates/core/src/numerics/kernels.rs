//! Structural kernels shared by the tape and by metric code.
//!
//! Every kernel is a pure function of its inputs. Backward helpers take the
//! upstream gradient and return gradients for each differentiable input.

use super::Tensor;
use crate::error::{Error, Result};

/// Strided view of a row-major matrix for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a> MatRef<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
        }
    }
}

/// `out = beta * out + a · b`, `out` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: MatRef<'_>, b: MatRef<'_>, out: &mut [f64], beta: f64) {
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(k, b.rows, "gemm inner dimension");
    assert_eq!(out.len(), m * n, "gemm output length");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    assert!(a.max_offset() < a.data.len() && b.max_offset() < b.data.len());
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "matmul", b)?;
    let (k2, n) = dims2(b, "matmul", a)?;
    if k != k2 {
        return Err(shape_err("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm(
        MatRef::row_major(a.data(), m, k),
        MatRef::row_major(b.data(), k, n),
        &mut out,
        0.0,
    );
    Tensor::new(vec![m, n], out)
}

/// Gradients of `a · b` given the upstream gradient of the product.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> (Tensor, Tensor) {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let g = MatRef::row_major(grad.data(), m, n);
    let mut da = vec![0.0; m * k];
    gemm(g, MatRef::row_major(b.data(), k, n).t(), &mut da, 0.0);
    let mut db = vec![0.0; k * n];
    gemm(MatRef::row_major(a.data(), m, k).t(), g, &mut db, 0.0);
    (
        Tensor::new(vec![m, k], da).expect("matmul grad a"),
        Tensor::new(vec![k, n], db).expect("matmul grad b"),
    )
}

fn pool_dims(shape: &[usize], kernel: usize, stride: usize) -> Result<(usize, usize, usize, usize, usize)> {
    if kernel == 0 || stride == 0 {
        return Err(Error::invalid("pooling kernel and stride must be at least 1"));
    }
    if shape.len() < 2 {
        return Err(Error::invalid(format!(
            "avgpool2d needs at least 2 dimensions, got {shape:?}"
        )));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < kernel || w < kernel {
        return Err(Error::invalid(format!(
            "pooling kernel {kernel} larger than input extent {h}x{w}"
        )));
    }
    let lead: usize = shape[..shape.len() - 2].iter().product();
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    Ok((lead, h, w, oh, ow))
}

/// Mean over `kernel × kernel` windows of the two trailing axes. Leading axes
/// are batch-like. Trailing cells that do not fill a window are dropped.
pub fn avgpool2d(x: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let (lead, h, w, oh, ow) = pool_dims(x.shape(), kernel, stride)?;
    let inv = 1.0 / (kernel * kernel) as f64;
    let src = x.data();
    let mut out = vec![0.0; lead * oh * ow];
    for l in 0..lead {
        let plane = &src[l * h * w..(l + 1) * h * w];
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = 0.0;
                for di in 0..kernel {
                    let row = (i * stride + di) * w + j * stride;
                    acc += plane[row..row + kernel].iter().sum::<f64>();
                }
                out[(l * oh + i) * ow + j] = acc * inv;
            }
        }
    }
    let mut shape = x.shape().to_vec();
    let nd = shape.len();
    shape[nd - 2] = oh;
    shape[nd - 1] = ow;
    Tensor::new(shape, out)
}

pub fn avgpool2d_backward(input_shape: &[usize], grad: &Tensor, kernel: usize, stride: usize) -> Tensor {
    let (lead, h, w, oh, ow) = pool_dims(input_shape, kernel, stride).expect("validated in forward");
    let inv = 1.0 / (kernel * kernel) as f64;
    let g = grad.data();
    let mut dx = vec![0.0; lead * h * w];
    for l in 0..lead {
        for i in 0..oh {
            for j in 0..ow {
                let gv = g[(l * oh + i) * ow + j] * inv;
                for di in 0..kernel {
                    let row = l * h * w + (i * stride + di) * w + j * stride;
                    dx[row..row + kernel].iter_mut().for_each(|v| *v += gv);
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx).expect("pool grad")
}

/// Valid (unpadded, stride 1) 2D cross-correlation.
///
/// `x`: `[N, C, H, W]`, `weight`: `[O, C, k, k]`, `bias`: `[O]`;
/// output `[N, O, H-k+1, W-k+1]`.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = Conv2dGeom::new(x, weight, bias)?;
    let mut out = vec![0.0; g.n * g.o * g.oh * g.ow];
    let mut cols = vec![0.0; g.ckk() * g.oh * g.ow];
    let wmat = MatRef::row_major(weight.data(), g.o, g.ckk());
    for s in 0..g.n {
        g.im2col(&x.data()[s * g.c * g.h * g.w..(s + 1) * g.c * g.h * g.w], &mut cols);
        let dst = &mut out[s * g.o * g.oh * g.ow..(s + 1) * g.o * g.oh * g.ow];
        for (oc, chunk) in dst.chunks_mut(g.oh * g.ow).enumerate() {
            chunk.fill(bias.data()[oc]);
        }
        gemm(wmat, MatRef::row_major(&cols, g.ckk(), g.oh * g.ow), dst, 1.0);
    }
    Tensor::new(vec![g.n, g.o, g.oh, g.ow], out)
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv2d_backward(x: &Tensor, weight: &Tensor, bias: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let g = Conv2dGeom::new(x, weight, bias).expect("validated in forward");
    let plane = g.oh * g.ow;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; g.o];
    let mut cols = vec![0.0; g.ckk() * plane];
    let mut dcols = vec![0.0; g.ckk() * plane];
    let wmat = MatRef::row_major(weight.data(), g.o, g.ckk());
    for s in 0..g.n {
        let gs = &grad.data()[s * g.o * plane..(s + 1) * g.o * plane];
        for (oc, chunk) in gs.chunks(plane).enumerate() {
            db[oc] += chunk.iter().sum::<f64>();
        }
        let gmat = MatRef::row_major(gs, g.o, plane);
        g.im2col(&x.data()[s * g.c * g.h * g.w..(s + 1) * g.c * g.h * g.w], &mut cols);
        gemm(gmat, MatRef::row_major(&cols, g.ckk(), plane).t(), &mut dw, 1.0);
        gemm(wmat.t(), gmat, &mut dcols, 0.0);
        g.col2im(&dcols, &mut dx[s * g.c * g.h * g.w..(s + 1) * g.c * g.h * g.w]);
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("conv dx"),
        Tensor::new(weight.shape().to_vec(), dw).expect("conv dw"),
        Tensor::new(vec![g.o], db).expect("conv db"),
    )
}

struct Conv2dGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    oh: usize,
    ow: usize,
}

impl Conv2dGeom {
    fn new(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Self> {
        let (xs, ws) = (x.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || ws[2] != ws[3] {
            return Err(shape_err("conv2d", x, weight));
        }
        if bias.shape() != [ws[0]] {
            return Err(shape_err("conv2d bias", weight, bias));
        }
        let k = ws[2];
        if xs[2] < k || xs[3] < k || k == 0 {
            return Err(shape_err("conv2d", x, weight));
        }
        Ok(Self {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            k,
            oh: xs[2] - k + 1,
            ow: xs[3] - k + 1,
        })
    }

    fn ckk(&self) -> usize {
        self.c * self.k * self.k
    }

    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let plane = self.oh * self.ow;
        for ch in 0..self.c {
            for di in 0..self.k {
                for dj in 0..self.k {
                    let row = (ch * self.k + di) * self.k + dj;
                    let dst = &mut cols[row * plane..(row + 1) * plane];
                    for i in 0..self.oh {
                        let src = ch * self.h * self.w + (i + di) * self.w + dj;
                        dst[i * self.ow..(i + 1) * self.ow].copy_from_slice(&img[src..src + self.ow]);
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let plane = self.oh * self.ow;
        for ch in 0..self.c {
            for di in 0..self.k {
                for dj in 0..self.k {
                    let row = (ch * self.k + di) * self.k + dj;
                    let src = &cols[row * plane..(row + 1) * plane];
                    for i in 0..self.oh {
                        let dst = ch * self.h * self.w + (i + di) * self.w + dj;
                        for (d, s) in img[dst..dst + self.ow].iter_mut().zip(&src[i * self.ow..(i + 1) * self.ow]) {
                            *d += s;
                        }
                    }
                }
            }
        }
    }
}

/// Valid 1D convolution over time.
///
/// `x`: `[N, T, F]`, `weight`: `[O, k·F]` (window-major: the `k` consecutive
/// time steps flattened), `bias`: `[O]`; output `[N, T-k+1, O]`.
pub fn conv1d(x: &Tensor, weight: &Tensor, bias: &Tensor, kernel: usize) -> Result<Tensor> {
    let (n, t, f, o, ot) = conv1d_dims(x, weight, bias, kernel)?;
    let mut out = vec![0.0; n * ot * o];
    let wt = MatRef::row_major(weight.data(), o, kernel * f).t();
    for s in 0..n {
        let dst = &mut out[s * ot * o..(s + 1) * ot * o];
        for row in dst.chunks_mut(o) {
            row.copy_from_slice(bias.data());
        }
        gemm(window_view(&x.data()[s * t * f..(s + 1) * t * f], ot, kernel, f), wt, dst, 1.0);
    }
    Tensor::new(vec![n, ot, o], out)
}

/// Returns `(dx, dweight, dbias)`.
pub fn conv1d_backward(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    kernel: usize,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let (n, t, f, o, ot) = conv1d_dims(x, weight, bias, kernel).expect("validated in forward");
    let kf = kernel * f;
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; weight.len()];
    let mut db = vec![0.0; o];
    let mut dwin = vec![0.0; ot * kf];
    let wmat = MatRef::row_major(weight.data(), o, kf);
    for s in 0..n {
        let gs = &grad.data()[s * ot * o..(s + 1) * ot * o];
        for row in gs.chunks(o) {
            db.iter_mut().zip(row).for_each(|(d, g)| *d += g);
        }
        let gmat = MatRef::row_major(gs, ot, o);
        let view = window_view(&x.data()[s * t * f..(s + 1) * t * f], ot, kernel, f);
        gemm(gmat.t(), view, &mut dw, 1.0);
        gemm(gmat, wmat, &mut dwin, 0.0);
        let dxs = &mut dx[s * t * f..(s + 1) * t * f];
        for (step, row) in dwin.chunks(kf).enumerate() {
            dxs[step * f..step * f + kf].iter_mut().zip(row).for_each(|(d, g)| *d += g);
        }
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("conv1d dx"),
        Tensor::new(weight.shape().to_vec(), dw).expect("conv1d dw"),
        Tensor::new(vec![o], db).expect("conv1d db"),
    )
}

// Overlapping windows over a `[T, F]` slab: row `t` is `x[t..t+k]` flattened.
fn window_view(slab: &[f64], rows: usize, kernel: usize, f: usize) -> MatRef<'_> {
    MatRef {
        data: slab,
        rows,
        cols: kernel * f,
        row_stride: f,
        col_stride: 1,
    }
}

fn conv1d_dims(
    x: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    kernel: usize,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 3 || ws.len() != 2 || kernel == 0 || ws[1] != kernel * xs[2] || xs[1] < kernel {
        return Err(shape_err("conv1d", x, weight));
    }
    if bias.shape() != [ws[0]] {
        return Err(shape_err("conv1d bias", weight, bias));
    }
    Ok((xs[0], xs[1], xs[2], ws[0], xs[1] - kernel + 1))
}

/// Standardizes to zero mean and unit population variance, with a `1e-8`
/// guard so constant inputs map to zeros.
pub fn normalize_zscore(x: &Tensor) -> Tensor {
    const EPS: f64 = 1e-8;
    if x.is_empty() {
        return x.clone();
    }
    let mean = x.mean();
    let var = x.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (var + EPS).sqrt();
    x.map(|v| (v - mean) * inv)
}

/// Mean softmax cross-entropy over rows, plus its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [n, c] = *logits.shape() else {
        return Err(Error::invalid(format!(
            "cross-entropy expects [batch, classes] logits, got {:?}",
            logits.shape()
        )));
    };
    if labels.len() != n {
        return Err(Error::Shape {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if n == 0 {
        return Err(Error::invalid("cross-entropy over an empty batch"));
    }
    let mut grad = vec![0.0; n * c];
    let mut loss = 0.0;
    let inv_n = 1.0 / n as f64;
    for (i, (row, &y)) in logits.data().chunks(c).zip(labels).enumerate() {
        if y >= c {
            return Err(Error::invalid(format!("label {y} out of range for {c} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = z.ln() + max;
        loss += log_z - row[y];
        let g = &mut grad[i * c..(i + 1) * c];
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - log_z).exp() * inv_n;
        }
        g[y] -= inv_n;
    }
    Ok((loss * inv_n, Tensor::new(vec![n, c], grad)?))
}

fn dims2(t: &Tensor, op: &'static str, other: &Tensor) -> Result<(usize, usize)> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(shape_err(op, t, other)),
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}
