use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Params, Rng, Tensor};

/// Fully connected layer on `[batch, features, 1]` tensors. Weight layout `[out][in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        let dist = Normal::new(0.0, libm::sqrt(1.0 / in_features as f64)).expect("finite std");
        Self {
            in_features,
            out_features,
            weight: (0..in_features * out_features).map(|_| dist.sample(rng)).collect(),
            bias: vec![0.0; out_features],
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        assert_eq!((x.channels(), x.len()), (self.in_features, 1), "linear input shape");
        let mut y = Tensor::zeros(x.batch(), self.out_features, 1);
        for b in 0..x.batch() {
            let xi = x.item(b);
            for o in 0..self.out_features {
                let w = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                y.row_mut(b, o)[0] = self.bias[o] + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        y
    }

    pub fn backward(&self, x: &Tensor, gy: &Tensor, mut grad: Option<&mut Self>) -> Tensor {
        let mut gx = Tensor::zeros(x.batch(), self.in_features, 1);
        for b in 0..x.batch() {
            let xi = x.item(b);
            let gyi = gy.item(b);
            let gxi = gx.data_mut();
            let gxi = &mut gxi[b * self.in_features..(b + 1) * self.in_features];
            for (o, &g) in gyi.iter().enumerate() {
                let w = &self.weight[o * self.in_features..(o + 1) * self.in_features];
                for (gv, wv) in gxi.iter_mut().zip(w) {
                    *gv += g * wv;
                }
                if let Some(gr) = grad.as_deref_mut() {
                    gr.bias[o] += g;
                    let gw = &mut gr.weight[o * self.in_features..(o + 1) * self.in_features];
                    for (a, xv) in gw.iter_mut().zip(xi) {
                        *a += g * xv;
                    }
                }
            }
        }
        gx
    }
}

impl Params for Linear {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Variance floor inside the pooled standard deviation.
pub const STATS_POOL_EPS: f64 = 1e-5;

/// Statistics pooling: `[B, C, L]` to `[B, 2C, 1]` holding per-channel mean
/// then standard deviation over time.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatsPool;

impl StatsPool {
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (nb, nc, nl) = x.shape();
        let mut y = Tensor::zeros(nb, 2 * nc, 1);
        for b in 0..nb {
            for c in 0..nc {
                let row = x.row(b, c);
                let mean = row.iter().sum::<f64>() / nl as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / nl as f64;
                y.row_mut(b, c)[0] = mean;
                y.row_mut(b, nc + c)[0] = libm::sqrt(var + STATS_POOL_EPS);
            }
        }
        y
    }

    pub fn backward(&self, x: &Tensor, y: &Tensor, gy: &Tensor) -> Tensor {
        let (nb, nc, nl) = x.shape();
        let n = nl as f64;
        let mut gx = Tensor::zeros(nb, nc, nl);
        for b in 0..nb {
            for c in 0..nc {
                let mean = y.row(b, c)[0];
                let std = y.row(b, nc + c)[0];
                let g_mean = gy.row(b, c)[0] / n;
                let g_std = gy.row(b, nc + c)[0] / (n * std);
                for (g, xv) in gx.row_mut(b, c).iter_mut().zip(x.row(b, c)) {
                    *g = g_mean + g_std * (xv - mean);
                }
            }
        }
        gx
    }
}
