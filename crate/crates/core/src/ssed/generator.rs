use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{
    rng_from, Activation, Conv1d, ConvBlock, ConvBlockCache, ConvTranspose1d, Mode, Params, ResBlock, ResBlockCache,
    Rng, Tensor,
};

/// Encoder kernel sizes; the decoders use them in reverse.
pub const ENCODER_KERNELS: [usize; 3] = [7, 3, 3];
pub const ENCODER_STRIDES: [usize; 3] = [1, 2, 2];
pub const RES_KERNEL: usize = 3;

/// Channel widths and residual depth of the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchPlan {
    /// Output channels of the three encoder convolutions.
    pub channels: [usize; 3],
    pub res_blocks: usize,
}

/// Narrow plan sized so that one generator pass costs less than a few
/// gradient evaluations of the small target network.
impl Default for ArchPlan {
    fn default() -> Self {
        Self { channels: [8, 16, 16], res_blocks: 6 }
    }
}

impl ArchPlan {
    /// Wider plan for longer inputs and larger targets.
    pub fn wide() -> Self {
        Self { channels: [16, 32, 64], res_blocks: 6 }
    }

    pub fn total_stride(&self) -> usize {
        ENCODER_STRIDES.iter().product()
    }

    pub fn latent_len(&self, input_len: usize) -> usize {
        input_len.div_ceil(self.total_stride())
    }
}

/// Two upsampling transposed-conv blocks and a bounded output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub up: Vec<ConvBlock<ConvTranspose1d>>,
    pub out: ConvBlock<ConvTranspose1d>,
}

#[derive(Debug, Clone)]
struct DecoderCache {
    up: Vec<ConvBlockCache>,
    out: ConvBlockCache,
}

impl Decoder {
    fn new(plan: &ArchPlan, out_act: Activation, rng: &mut Rng) -> Self {
        let [c0, c1, c2] = plan.channels;
        let k = ENCODER_KERNELS;
        let up = alloc::vec![
            ConvBlock::new(ConvTranspose1d::new(c2, c1, k[2], 2, k[2] / 2, 1, rng), true, Activation::Relu),
            ConvBlock::new(ConvTranspose1d::new(c1, c0, k[1], 2, k[1] / 2, 1, rng), true, Activation::Relu),
        ];
        let out = ConvBlock::new(ConvTranspose1d::new(c0, 1, k[0], 1, k[0] / 2, 0, rng), false, out_act);
        Self { up, out }
    }

    fn forward(&self, y: &Tensor, mode: Mode) -> DecoderCache {
        let mut up: Vec<ConvBlockCache> = Vec::with_capacity(self.up.len());
        for blk in &self.up {
            let c = blk.forward(up.last().map_or(y, |c| c.output()), mode);
            up.push(c);
        }
        let out = self.out.forward(up.last().map_or(y, |c| c.output()), mode);
        DecoderCache { up, out }
    }

    fn backward(&self, cache: &DecoderCache, g_out: &Tensor, grad: Option<&mut Self>) -> Tensor {
        let (g_up, g_last) = match grad {
            Some(g) => (Some(&mut g.up), Some(&mut g.out)),
            None => (None, None),
        };
        let mut g = self.out.backward(&cache.out, g_out, g_last);
        let mut g_up = g_up;
        for (k, blk) in self.up.iter().enumerate().rev() {
            g = blk.backward(&cache.up[k], &g, g_up.as_deref_mut().map(|v| &mut v[k]));
        }
        g
    }

    fn track(&mut self, cache: &DecoderCache) {
        for (b, c) in self.up.iter_mut().zip(&cache.up) {
            b.track(c);
        }
        self.out.track(&cache.out);
    }
}

impl Params for Decoder {
    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = self.up.iter().flat_map(|b| b.params()).collect();
        p.extend(self.out.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = self.up.iter_mut().flat_map(|b| b.params_mut()).collect();
        p.extend(self.out.params_mut());
        p
    }

    fn buffers(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = self.up.iter().flat_map(|b| b.buffers()).collect();
        p.extend(self.out.buffers());
        p
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = self.up.iter_mut().flat_map(|b| b.buffers_mut()).collect();
        p.extend(self.out.buffers_mut());
        p
    }
}

/// Encoder, perturbation decoder and (optionally) saliency-mask decoder.
///
/// Without a mask decoder the mask is the constant 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub plan: ArchPlan,
    pub encoder: Vec<ConvBlock<Conv1d>>,
    pub res: Vec<ResBlock>,
    pub noise_decoder: Decoder,
    pub mask_decoder: Option<Decoder>,
}

/// Forward-pass intermediates of [`Generator::forward`].
#[derive(Debug, Clone)]
pub struct GenCache {
    encoder: Vec<ConvBlockCache>,
    res: Vec<ResBlockCache>,
    noise: DecoderCache,
    mask: Option<DecoderCache>,
    len: usize,
}

impl GenCache {
    /// Latent feature map `y`, `[B, channels[2], ceil(L / 4)]`.
    pub fn latent(&self) -> &Tensor {
        self.res
            .last()
            .map(|c| c.output())
            .unwrap_or_else(|| self.encoder.last().expect("three encoder blocks").output())
    }

    /// Raw noise `n`, `[B, 1, L]`, in `(-1, 1)`.
    pub fn noise(&self) -> Tensor {
        self.noise.out.output().fit_len(self.len)
    }

    /// Raw mask `m`, `[B, 1, L]`, in `(0, 1)`; ones without a mask decoder.
    pub fn mask(&self) -> Tensor {
        match &self.mask {
            Some(c) => c.out.output().fit_len(self.len),
            None => {
                let n = self.noise.out.output();
                Tensor::from_vec(n.batch(), 1, self.len, alloc::vec![1.0; n.batch() * self.len])
            }
        }
    }
}

impl Generator {
    /// Randomly initialised generator. `saliency = false` omits the mask decoder.
    pub fn new(plan: ArchPlan, saliency: bool, seed: u64) -> Self {
        let mut rng = rng_from(seed, 0x7373_6564);
        let [c0, c1, c2] = plan.channels;
        let ins = [1, c0, c1];
        let encoder = (0..3)
            .map(|i| {
                let k = ENCODER_KERNELS[i];
                let conv = Conv1d::new(ins[i], plan.channels[i], k, ENCODER_STRIDES[i], k / 2, &mut rng);
                ConvBlock::new(conv, true, Activation::Relu)
            })
            .collect();
        let res = (0..plan.res_blocks).map(|_| ResBlock::new(c2, RES_KERNEL, &mut rng)).collect();
        let noise_decoder = Decoder::new(&plan, Activation::Tanh, &mut rng);
        let mask_decoder = saliency.then(|| Decoder::new(&plan, Activation::Sigmoid, &mut rng));
        Self { plan, encoder, res, noise_decoder, mask_decoder }
    }

    pub fn has_saliency(&self) -> bool {
        self.mask_decoder.is_some()
    }

    /// Encoder pass only; returns the latent `[B, C, ceil(L / 4)]`.
    pub fn encode(&self, x: &Tensor, mode: Mode) -> Tensor {
        let (enc, res) = self.encode_cached(x, mode);
        res.last().map(|c| c.output().clone()).unwrap_or_else(|| enc[2].output().clone())
    }

    fn encode_cached(&self, x: &Tensor, mode: Mode) -> (Vec<ConvBlockCache>, Vec<ResBlockCache>) {
        let mut enc: Vec<ConvBlockCache> = Vec::with_capacity(3);
        for blk in &self.encoder {
            let c = blk.forward(enc.last().map_or(x, |c| c.output()), mode);
            enc.push(c);
        }
        let mut res: Vec<ResBlockCache> = Vec::with_capacity(self.res.len());
        for blk in &self.res {
            let input = res.last().map(|c| c.output()).unwrap_or_else(|| enc[2].output());
            let c = blk.forward(input, mode);
            res.push(c);
        }
        (enc, res)
    }

    /// Noise decoder applied to a latent, cropped to `len`.
    pub fn decode_noise(&self, y: &Tensor, len: usize) -> Tensor {
        self.noise_decoder.forward(y, Mode::Eval).out.output().fit_len(len)
    }

    /// Mask decoder applied to a latent, cropped to `len`.
    pub fn decode_mask(&self, y: &Tensor, len: usize) -> Tensor {
        match &self.mask_decoder {
            Some(d) => d.forward(y, Mode::Eval).out.output().fit_len(len),
            None => Tensor::from_vec(y.batch(), 1, len, alloc::vec![1.0; y.batch() * len]),
        }
    }

    /// Full forward pass on a `[B, 1, L]` batch.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> GenCache {
        let (encoder, res) = self.encode_cached(x, mode);
        let latent = res.last().map(|c| c.output()).unwrap_or_else(|| encoder[2].output());
        let noise = self.noise_decoder.forward(latent, mode);
        let mask = self.mask_decoder.as_ref().map(|d| d.forward(latent, mode));
        GenCache { encoder, res, noise, mask, len: x.len() }
    }

    /// Accumulates parameter gradients given `dL/dn` and `dL/dm`, both `[B, 1, L]`.
    pub fn backward(&self, cache: &GenCache, g_noise: &Tensor, g_mask: Option<&Tensor>, grad: &mut Self) {
        let dec_len = cache.noise.out.output().len();
        let mut g_lat = self.noise_decoder.backward(&cache.noise, &g_noise.fit_len(dec_len), Some(&mut grad.noise_decoder));
        if let (Some(dec), Some(c), Some(gm), Some(gdec)) =
            (&self.mask_decoder, &cache.mask, g_mask, grad.mask_decoder.as_mut())
        {
            g_lat.add_assign(&dec.backward(c, &gm.fit_len(dec_len), Some(gdec)));
        }
        let mut g = g_lat;
        for (k, blk) in self.res.iter().enumerate().rev() {
            g = blk.backward(&cache.res[k], &g, Some(&mut grad.res[k]));
        }
        for (k, blk) in self.encoder.iter().enumerate().rev() {
            g = blk.backward(&cache.encoder[k], &g, Some(&mut grad.encoder[k]));
        }
    }

    /// Folds the batch-norm statistics of a training pass into running estimates.
    pub fn track(&mut self, cache: &GenCache) {
        for (b, c) in self.encoder.iter_mut().zip(&cache.encoder) {
            b.track(c);
        }
        for (b, c) in self.res.iter_mut().zip(&cache.res) {
            b.track(c);
        }
        self.noise_decoder.track(&cache.noise);
        if let (Some(d), Some(c)) = (self.mask_decoder.as_mut(), cache.mask.as_ref()) {
            d.track(c);
        }
    }
}

impl Params for Generator {
    fn params(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = self.encoder.iter().flat_map(|b| b.params()).collect();
        p.extend(self.res.iter().flat_map(|b| b.params()));
        p.extend(self.noise_decoder.params());
        if let Some(d) = &self.mask_decoder {
            p.extend(d.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = self.encoder.iter_mut().flat_map(|b| b.params_mut()).collect();
        p.extend(self.res.iter_mut().flat_map(|b| b.params_mut()));
        p.extend(self.noise_decoder.params_mut());
        if let Some(d) = &mut self.mask_decoder {
            p.extend(d.params_mut());
        }
        p
    }

    fn buffers(&self) -> Vec<&[f64]> {
        let mut p: Vec<&[f64]> = self.encoder.iter().flat_map(|b| b.buffers()).collect();
        p.extend(self.res.iter().flat_map(|b| b.buffers()));
        p.extend(self.noise_decoder.buffers());
        if let Some(d) = &self.mask_decoder {
            p.extend(d.buffers());
        }
        p
    }

    fn buffers_mut(&mut self) -> Vec<&mut [f64]> {
        let mut p: Vec<&mut [f64]> = self.encoder.iter_mut().flat_map(|b| b.buffers_mut()).collect();
        p.extend(self.res.iter_mut().flat_map(|b| b.buffers_mut()));
        p.extend(self.noise_decoder.buffers_mut());
        if let Some(d) = &mut self.mask_decoder {
            p.extend(d.buffers_mut());
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    fn random_batch(b: usize, len: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed, 1);
        Tensor::from_vec(b, 1, len, (0..b * len).map(|_| rng.random_range(-0.9..0.9)).collect())
    }

    #[test]
    fn output_lengths_match_input() {
        let plan = ArchPlan { channels: [2, 3, 4], res_blocks: 1 };
        let g = Generator::new(plan, true, 3);
        for len in [1600usize, 16000, 16001, 5] {
            let x = random_batch(1, len, len as u64);
            let c = g.forward(&x, Mode::Eval);
            assert_eq!(c.latent().len(), len.div_ceil(4));
            assert_eq!(c.latent().len(), plan.latent_len(len));
            assert_eq!(c.noise().shape(), (1, 1, len));
            assert_eq!(c.mask().shape(), (1, 1, len));
            assert!(c.noise().data().iter().all(|v| *v > -1.0 && *v < 1.0));
            assert!(c.mask().data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn encode_is_deterministic_and_separates_inputs() {
        let g = Generator::new(ArchPlan { channels: [3, 4, 4], res_blocks: 2 }, true, 8);
        let a = random_batch(1, 400, 1);
        let b = random_batch(1, 400, 2);
        assert_eq!(g.encode(&a, Mode::Eval), g.encode(&a, Mode::Eval));
        assert_ne!(g.encode(&a, Mode::Eval), g.encode(&b, Mode::Eval));
        let y = g.encode(&a, Mode::Eval);
        let c = g.forward(&a, Mode::Eval);
        assert_eq!(g.decode_noise(&y, 400), c.noise());
        assert_eq!(g.decode_mask(&y, 400), c.mask());
    }

    #[test]
    fn without_saliency_mask_is_ones() {
        let g = Generator::new(ArchPlan { channels: [2, 2, 2], res_blocks: 0 }, false, 1);
        let c = g.forward(&random_batch(2, 33, 4), Mode::Eval);
        assert!(c.mask().data().iter().all(|v| *v == 1.0));
        assert_eq!(c.mask().shape(), (2, 1, 33));
    }
}
