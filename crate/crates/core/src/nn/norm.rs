use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Params, Tensor};

/// Whether batch normalisation uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalisation over `(batch, time)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm1d {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

/// Forward-pass values needed by [`BatchNorm1d::backward`].
#[derive(Debug, Clone)]
pub struct BnCache {
    mode: Mode,
    xhat: Tensor,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl BatchNorm1d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, BnCache) {
        let (nb, nc, nl) = x.shape();
        assert_eq!(nc, self.channels(), "batch norm channels");
        let count = (nb * nl) as f64;
        let mut batch_mean = vec![0.0; nc];
        let mut batch_var = vec![0.0; nc];
        if mode == Mode::Train {
            for c in 0..nc {
                let mut sum = 0.0;
                for b in 0..nb {
                    sum += x.row(b, c).iter().sum::<f64>();
                }
                let mean = sum / count;
                let mut ss = 0.0;
                for b in 0..nb {
                    ss += x.row(b, c).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
                }
                batch_mean[c] = mean;
                batch_var[c] = ss / count;
            }
        }
        let (mean, var) = match mode {
            Mode::Train => (&batch_mean, &batch_var),
            Mode::Eval => (&self.running_mean, &self.running_var),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + self.eps)).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for b in 0..nb {
            for c in 0..nc {
                let (m, is, g, be) = (mean[c], inv_std[c], self.gamma[c], self.beta[c]);
                for (h, yv) in xhat.row_mut(b, c).iter_mut().zip(y.row_mut(b, c)) {
                    *h = (*h - m) * is;
                    *yv = g * *h + be;
                }
            }
        }
        (y, BnCache { mode, xhat, inv_std, batch_mean, batch_var })
    }

    /// Folds the batch statistics of a training forward pass into the running
    /// estimates (unbiased variance).
    pub fn track(&mut self, cache: &BnCache) {
        if cache.mode != Mode::Train {
            return;
        }
        let (nb, _, nl) = cache.xhat.shape();
        let n = (nb * nl) as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = (1.0 - m) * self.running_mean[c] + m * cache.batch_mean[c];
            self.running_var[c] = (1.0 - m) * self.running_var[c] + m * cache.batch_var[c] * unbias;
        }
    }

    pub fn backward(&self, cache: &BnCache, gy: &Tensor, mut grad: Option<&mut Self>) -> Tensor {
        let (nb, nc, nl) = gy.shape();
        let count = (nb * nl) as f64;
        let mut gx = gy.clone();
        for c in 0..nc {
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for b in 0..nb {
                for (g, h) in gy.row(b, c).iter().zip(cache.xhat.row(b, c)) {
                    sum_g += g;
                    sum_gx += g * h;
                }
            }
            if let Some(gr) = grad.as_deref_mut() {
                gr.gamma[c] += sum_gx;
                gr.beta[c] += sum_g;
            }
            let scale = self.gamma[c] * cache.inv_std[c];
            for b in 0..nb {
                let h = cache.xhat.row(b, c);
                let row = gx.row_mut(b, c);
                match cache.mode {
                    Mode::Eval => row.iter_mut().for_each(|g| *g *= scale),
                    Mode::Train => {
                        for (g, hv) in row.iter_mut().zip(h) {
                            *g = scale * (*g - sum_g / count - hv * sum_gx / count);
                        }
                    }
                }
            }
        }
        gx
    }
}

impl Params for BatchNorm1d {
    fn params(&self) -> Vec<&[f64]> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&[f64]> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}
