use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Params, Rng, Tensor};

/// A learnable 1-D convolution-like operator.
pub trait ConvOp: Params + Clone {
    fn out_channels(&self) -> usize;
    fn forward(&self, x: &Tensor) -> Tensor;
    /// Returns `dL/dx`; accumulates `dL/dw`, `dL/db` into `grad` when given.
    fn backward(&self, x: &Tensor, grad_out: &Tensor, grad: Option<&mut Self>) -> Tensor;
}

/// Range of `t` with `t < n_t` and `0 <= t*stride + j - pad < n_u`.
#[inline]
fn tap_range(j: usize, pad: usize, stride: usize, n_t: usize, n_u: usize) -> (usize, usize) {
    let lo = if j >= pad { 0 } else { (pad - j).div_ceil(stride) };
    let hi = (n_u + pad).saturating_sub(j).div_ceil(stride).min(n_t);
    (lo, hi.max(lo))
}

fn he_normal(n: usize, fan_in: usize, rng: &mut Rng) -> Vec<f64> {
    let std = libm::sqrt(2.0 / fan_in.max(1) as f64);
    let dist = Normal::new(0.0, std).expect("finite std");
    (0..n).map(|_| dist.sample(rng)).collect()
}

/// Strided, zero-padded 1-D convolution. Weight layout `[out][in][k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    pub fn new(in_ch: usize, out_ch: usize, kernel: usize, stride: usize, padding: usize, rng: &mut Rng) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: he_normal(out_ch * in_ch * kernel, in_ch * kernel, rng),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1
    }

}

impl Params for Conv1d {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl ConvOp for Conv1d {
    fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_ch, "conv input channels");
        let (nb, lin) = (x.batch(), x.len());
        let lout = self.out_len(lin);
        let rows = self.in_ch * self.kernel;
        let mut col = vec![0.0; rows * lout];
        let mut y = Tensor::zeros(nb, self.out_ch, lout);
        for b in 0..nb {
            im2col(x.item(b), self.in_ch, lin, self.kernel, self.stride, self.padding, lout, &mut col);
            let yb = y.item_mut(b);
            for (o, row) in yb.chunks_exact_mut(lout).enumerate() {
                row.fill(self.bias[o]);
            }
            // y[out, lout] += W[out, in*k] . col[in*k, lout]
            gemm(self.out_ch, rows, lout, &self.weight, (rows, 1), &col, (lout, 1), yb, lout);
        }
        y
    }

    fn backward(&self, x: &Tensor, gy: &Tensor, mut grad: Option<&mut Self>) -> Tensor {
        let (nb, lin) = (x.batch(), x.len());
        let lout = gy.len();
        let rows = self.in_ch * self.kernel;
        let mut col = vec![0.0; rows * lout];
        let mut gcol = vec![0.0; rows * lout];
        let mut gx = Tensor::zeros(nb, self.in_ch, lin);
        for b in 0..nb {
            let gyb = gy.item(b);
            if let Some(g) = grad.as_deref_mut() {
                for (o, row) in gyb.chunks_exact(lout).enumerate() {
                    g.bias[o] += row.iter().sum::<f64>();
                }
                im2col(x.item(b), self.in_ch, lin, self.kernel, self.stride, self.padding, lout, &mut col);
                // gW[out, in*k] += gy[out, lout] . col^T
                gemm(self.out_ch, lout, rows, gyb, (lout, 1), &col, (1, lout), &mut g.weight, rows);
            }
            gcol.fill(0.0);
            // gcol[in*k, lout] = W^T . gy
            gemm(rows, self.out_ch, lout, &self.weight, (1, rows), gyb, (lout, 1), &mut gcol, lout);
            col2im(&gcol, self.in_ch, lin, self.kernel, self.stride, self.padding, lout, gx.item_mut(b));
        }
        gx
    }
}

/// Transposed 1-D convolution (the adjoint of [`Conv1d`]). Weight layout
/// `[in][out][k]`; output length `(len - 1) * stride - 2 * padding + kernel + output_padding`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvTranspose1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvTranspose1d {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut Rng,
    ) -> Self {
        assert!(kernel >= 1 && stride >= 1);
        let fan_in = (in_ch * kernel).div_ceil(stride);
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            output_padding,
            weight: he_normal(in_ch * out_ch * kernel, fan_in, rng),
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        ((len - 1) * self.stride + self.kernel + self.output_padding).saturating_sub(2 * self.padding)
    }
}

impl Params for ConvTranspose1d {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

impl ConvOp for ConvTranspose1d {
    fn out_channels(&self) -> usize {
        self.out_ch
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!(x.channels(), self.in_ch, "transposed conv input channels");
        let (nb, lin) = (x.batch(), x.len());
        let lout = self.out_len(lin);
        let rows = self.out_ch * self.kernel;
        let mut col = vec![0.0; rows * lin];
        let mut y = Tensor::zeros(nb, self.out_ch, lout);
        for b in 0..nb {
            col.fill(0.0);
            // col[out*k, lin] = W^T . x, with W viewed as [in, out*k]
            gemm(rows, self.in_ch, lin, &self.weight, (1, rows), x.item(b), (lin, 1), &mut col, lin);
            let yb = y.item_mut(b);
            for (o, row) in yb.chunks_exact_mut(lout).enumerate() {
                row.fill(self.bias[o]);
            }
            col2im(&col, self.out_ch, lout, self.kernel, self.stride, self.padding, lin, yb);
        }
        y
    }

    fn backward(&self, x: &Tensor, gy: &Tensor, mut grad: Option<&mut Self>) -> Tensor {
        let (nb, lin) = (x.batch(), x.len());
        let lout = gy.len();
        let rows = self.out_ch * self.kernel;
        let mut gcol = vec![0.0; rows * lin];
        let mut gx = Tensor::zeros(nb, self.in_ch, lin);
        for b in 0..nb {
            let gyb = gy.item(b);
            im2col(gyb, self.out_ch, lout, self.kernel, self.stride, self.padding, lin, &mut gcol);
            if let Some(g) = grad.as_deref_mut() {
                for (o, row) in gyb.chunks_exact(lout).enumerate() {
                    g.bias[o] += row.iter().sum::<f64>();
                }
                // gW[in, out*k] += x[in, lin] . gcol^T
                gemm(self.in_ch, lin, rows, x.item(b), (lin, 1), &gcol, (1, lin), &mut g.weight, rows);
            }
            // gx[in, lin] = W[in, out*k] . gcol
            gemm(self.in_ch, rows, lin, &self.weight, (rows, 1), &gcol, (lin, 1), gx.item_mut(b), lin);
        }
        gx
    }
}

/// `c[m, n] += a[m, k] . b[k, n]` for row-major `c`; `a` and `b` are given
/// with explicit `(row, column)` strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64], ldc: usize) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    assert!((m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!((k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    assert!((m - 1) * ldc + n <= c.len());
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Gathers `col[(c*k + j), t] = src[c, t*stride + j - pad]` (zero outside).
#[allow(clippy::too_many_arguments)]
fn im2col(src: &[f64], channels: usize, n_u: usize, k: usize, stride: usize, pad: usize, n_t: usize, col: &mut [f64]) {
    for c in 0..channels {
        let srow = &src[c * n_u..(c + 1) * n_u];
        for j in 0..k {
            let crow = &mut col[(c * k + j) * n_t..(c * k + j + 1) * n_t];
            let (t0, t1) = tap_range(j, pad, stride, n_t, n_u);
            crow[..t0].fill(0.0);
            crow[t1..].fill(0.0);
            if t0 < t1 {
                let u0 = t0 * stride + j - pad;
                if stride == 1 {
                    crow[t0..t1].copy_from_slice(&srow[u0..u0 + (t1 - t0)]);
                } else {
                    for (cv, sv) in crow[t0..t1].iter_mut().zip(srow[u0..].iter().step_by(stride)) {
                        *cv = *sv;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: `dst[c, t*stride + j - pad] += col[(c*k + j), t]`.
#[allow(clippy::too_many_arguments)]
fn col2im(col: &[f64], channels: usize, n_u: usize, k: usize, stride: usize, pad: usize, n_t: usize, dst: &mut [f64]) {
    for c in 0..channels {
        let drow = &mut dst[c * n_u..(c + 1) * n_u];
        for j in 0..k {
            let crow = &col[(c * k + j) * n_t..(c * k + j + 1) * n_t];
            let (t0, t1) = tap_range(j, pad, stride, n_t, n_u);
            if t0 < t1 {
                let u0 = t0 * stride + j - pad;
                for (dv, cv) in drow[u0..].iter_mut().step_by(stride).zip(&crow[t0..t1]) {
                    *dv += cv;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::rng_from;

    fn naive_conv(c: &Conv1d, x: &Tensor) -> Tensor {
        let lout = c.out_len(x.len());
        let mut y = Tensor::zeros(x.batch(), c.out_ch, lout);
        for b in 0..x.batch() {
            for o in 0..c.out_ch {
                for t in 0..lout {
                    let mut acc = c.bias[o];
                    for i in 0..c.in_ch {
                        for j in 0..c.kernel {
                            let u = (t * c.stride + j) as isize - c.padding as isize;
                            if u >= 0 && (u as usize) < x.len() {
                                acc += c.weight[(o * c.in_ch + i) * c.kernel + j] * x.row(b, i)[u as usize];
                            }
                        }
                    }
                    y.row_mut(b, o)[t] = acc;
                }
            }
        }
        y
    }

    fn random_tensor(b: usize, c: usize, l: usize, rng: &mut Rng) -> Tensor {
        let d = Normal::new(0.0, 1.0).unwrap();
        Tensor::from_vec(b, c, l, (0..b * c * l).map(|_| d.sample(rng)).collect())
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = rng_from(1, 0);
        for &(k, s, p, l) in &[(7, 1, 3, 13), (3, 2, 1, 10), (3, 2, 1, 9), (5, 3, 0, 17)] {
            let c = Conv1d::new(2, 3, k, s, p, &mut rng);
            let x = random_tensor(2, 2, l, &mut rng);
            let a = c.forward(&x);
            let b = naive_conv(&c, &x);
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn strided_length_is_ceil_half() {
        let mut rng = rng_from(1, 0);
        let c = Conv1d::new(1, 1, 3, 2, 1, &mut rng);
        for l in [1usize, 2, 3, 1600, 16001] {
            assert_eq!(c.out_len(l), l.div_ceil(2));
        }
        let t = ConvTranspose1d::new(1, 1, 3, 2, 1, 1, &mut rng);
        assert_eq!(t.out_len(5), 10);
    }

    // <A x, y> = <x, A^T y> with biases zeroed.
    #[test]
    fn transpose_is_adjoint_of_conv() {
        let mut rng = rng_from(2, 0);
        let mut c = Conv1d::new(2, 3, 3, 2, 1, &mut rng);
        c.bias.fill(0.0);
        let mut t = ConvTranspose1d::new(3, 2, 3, 2, 1, 1, &mut rng);
        t.weight.copy_from_slice(&c.weight);
        t.bias.fill(0.0);
        let x = random_tensor(1, 2, 10, &mut rng);
        let y = random_tensor(1, 3, 5, &mut rng);
        let ax = c.forward(&x);
        let aty = t.forward(&y);
        assert!((dot(&ax, &y) - dot(&x, &aty)).abs() < 1e-10);
    }

    fn check_grads<C: ConvOp>(layer: &C, x: &Tensor, rng: &mut Rng) {
        let y = layer.forward(x);
        let r = random_tensor(y.batch(), y.channels(), y.len(), rng);
        let loss = |l: &C, x: &Tensor| dot(&l.forward(x), &r);
        let mut g = layer.zeros_like();
        let gx = layer.backward(x, &r, Some(&mut g));
        let h = 1e-6;
        for idx in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (loss(layer, &xp) - loss(layer, &xm)) / (2.0 * h);
            assert!((fd - gx.data()[idx]).abs() < 1e-6, "input grad {idx}");
        }
        let flat = g.flat_params();
        let base = layer.flat_params();
        for idx in 0..base.len() {
            let mut lp = layer.clone();
            let mut v = base.clone();
            v[idx] += h;
            lp.load_flat(&v).unwrap();
            let mut lm = layer.clone();
            v[idx] -= 2.0 * h;
            lm.load_flat(&v).unwrap();
            let fd = (loss(&lp, x) - loss(&lm, x)) / (2.0 * h);
            assert!((fd - flat[idx]).abs() < 1e-6, "param grad {idx}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = rng_from(3, 0);
        let c = Conv1d::new(2, 2, 3, 2, 1, &mut rng);
        let x = random_tensor(2, 2, 7, &mut rng);
        check_grads(&c, &x, &mut rng);
        let c = Conv1d::new(1, 2, 7, 1, 3, &mut rng);
        let x = random_tensor(1, 1, 9, &mut rng);
        check_grads(&c, &x, &mut rng);
    }

    #[test]
    fn transposed_gradients_match_finite_differences() {
        let mut rng = rng_from(4, 0);
        let c = ConvTranspose1d::new(2, 2, 3, 2, 1, 1, &mut rng);
        let x = random_tensor(2, 2, 5, &mut rng);
        check_grads(&c, &x, &mut rng);
        let c = ConvTranspose1d::new(2, 1, 7, 1, 3, 0, &mut rng);
        let x = random_tensor(1, 2, 6, &mut rng);
        check_grads(&c, &x, &mut rng);
    }
}
