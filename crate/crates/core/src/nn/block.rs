use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{BatchNorm1d, BnCache, Conv1d, ConvOp, Mode, Params, Rng, Tensor};

/// Pointwise output nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Self::Identity => v,
            Self::Relu => v.max(0.0),
            Self::Tanh => libm::tanh(v),
            Self::Sigmoid => 1.0 / (1.0 + libm::exp(-v)),
        }
    }

    /// Derivative expressed through the activation output.
    pub fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - y * y,
            Self::Sigmoid => y * (1.0 - y),
        }
    }
}

/// `act(bn(conv(x)))`, with batch norm optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvBlock<C> {
    pub conv: C,
    pub bn: Option<BatchNorm1d>,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvBlockCache {
    input: Tensor,
    bn: Option<BnCache>,
    output: Tensor,
}

impl ConvBlockCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl<C: ConvOp> ConvBlock<C> {
    pub fn new(conv: C, batch_norm: bool, act: Activation) -> Self {
        let bn = batch_norm.then(|| BatchNorm1d::new(conv.out_channels()));
        Self { conv, bn, act }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> ConvBlockCache {
        let h = self.conv.forward(x);
        let (h, bn) = match &self.bn {
            Some(bn) => {
                let (h, c) = bn.forward(&h, mode);
                (h, Some(c))
            }
            None => (h, None),
        };
        let act = self.act;
        let output = if act == Activation::Identity { h } else { h.map(|v| act.apply(v)) };
        ConvBlockCache { input: x.clone(), bn, output }
    }

    pub fn track(&mut self, cache: &ConvBlockCache) {
        if let (Some(bn), Some(c)) = (self.bn.as_mut(), cache.bn.as_ref()) {
            bn.track(c);
        }
    }

    pub fn backward(&self, cache: &ConvBlockCache, gy: &Tensor, grad: Option<&mut Self>) -> Tensor {
        let mut g = gy.clone();
        if self.act != Activation::Identity {
            for (gv, yv) in g.data_mut().iter_mut().zip(cache.output.data()) {
                *gv *= self.act.slope_from_output(*yv);
            }
        }
        let (gconv, gbn) = match grad {
            Some(gr) => (Some(&mut gr.conv), gr.bn.as_mut()),
            None => (None, None),
        };
        if let (Some(bn), Some(c)) = (&self.bn, &cache.bn) {
            g = bn.backward(c, &g, gbn);
        }
        self.conv.backward(&cache.input, &g, gconv)
    }
}

impl<C: ConvOp> Params for ConvBlock<C> {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.conv.params();
        if let Some(bn) = &self.bn {
            p.extend(bn.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.conv.params_mut();
        if let Some(bn) = &mut self.bn {
            p.extend(bn.params_mut());
        }
        p
    }

    fn buffers(&self) -> Vec<&[f64]> {
        let mut p = self.conv.buffers();
        if let Some(bn) = &self.bn {
            p.extend(bn.buffers());
        }
        p
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.conv.buffers_mut();
        if let Some(bn) = &mut self.bn {
            p.extend(bn.buffers_mut());
        }
        p
    }
}

/// Two same-width convolutions with an identity skip:
/// `relu(x + bn(conv(relu(bn(conv(x))))))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResBlock {
    pub first: ConvBlock<Conv1d>,
    pub second: ConvBlock<Conv1d>,
}

#[derive(Debug, Clone)]
pub struct ResBlockCache {
    first: ConvBlockCache,
    second: ConvBlockCache,
    output: Tensor,
}

impl ResBlockCache {
    pub fn output(&self) -> &Tensor {
        &self.output
    }
}

impl ResBlock {
    pub fn new(channels: usize, kernel: usize, rng: &mut Rng) -> Self {
        let pad = kernel / 2;
        Self {
            first: ConvBlock::new(Conv1d::new(channels, channels, kernel, 1, pad, rng), true, Activation::Relu),
            second: ConvBlock::new(Conv1d::new(channels, channels, kernel, 1, pad, rng), true, Activation::Identity),
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> ResBlockCache {
        let first = self.first.forward(x, mode);
        let second = self.second.forward(first.output(), mode);
        let mut output = x.clone();
        for (o, s) in output.data_mut().iter_mut().zip(second.output().data()) {
            *o = (*o + s).max(0.0);
        }
        ResBlockCache { first, second, output }
    }

    pub fn track(&mut self, cache: &ResBlockCache) {
        self.first.track(&cache.first);
        self.second.track(&cache.second);
    }

    pub fn backward(&self, cache: &ResBlockCache, gy: &Tensor, grad: Option<&mut Self>) -> Tensor {
        let mut g = gy.clone();
        for (gv, yv) in g.data_mut().iter_mut().zip(cache.output.data()) {
            if *yv <= 0.0 {
                *gv = 0.0;
            }
        }
        let (g1, g2) = match grad {
            Some(gr) => (Some(&mut gr.first), Some(&mut gr.second)),
            None => (None, None),
        };
        let mid = self.second.backward(&cache.second, &g, g2);
        let mut gx = self.first.backward(&cache.first, &mid, g1);
        gx.add_assign(&g);
        gx
    }
}

impl Params for ResBlock {
    fn params(&self) -> Vec<&[f64]> {
        let mut p = self.first.params();
        p.extend(self.second.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.first.params_mut();
        p.extend(self.second.params_mut());
        p
    }

    fn buffers(&self) -> Vec<&[f64]> {
        let mut p = self.first.buffers();
        p.extend(self.second.buffers());
        p
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p = self.first.buffers_mut();
        p.extend(self.second.buffers_mut());
        p
    }
}
