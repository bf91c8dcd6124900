//! Encoder, mapping network, style-modulated decoder and discriminator.

use rand::Rng;

use crate::impl_parameters;
use crate::nn::{
    avg_pool2, avg_pool2_backward, instance_norm, instance_norm_backward, leaky_relu,
    leaky_relu_backward, sigmoid, sigmoid_backward, upsample2, upsample2_backward, Conv2d,
    ConvCache, Dense, FeatureMap, InstanceNormCache,
};
use crate::scalar::Scalar;

const LRELU_GAIN: f64 = 1.386; // sqrt(2 / (1 + 0.2^2))

/// `[conv3x3 -> lrelu -> avgpool2] x n -> dense`. Used for the encoder (head
/// width `d_w`) and the discriminator (head width 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack<T> {
    pub convs: Vec<Conv2d<T>>,
    pub head: Dense<T>,
}

impl_parameters!(ConvStack { convs, head });

#[derive(Clone, Debug)]
pub struct ConvStackTrace<T> {
    convs: Vec<ConvCache<T>>,
    activations: Vec<FeatureMap<T>>,
    flat: Vec<T>,
    last_shape: (usize, usize, usize),
}

impl<T: Scalar> ConvStack<T> {
    pub fn new<R: Rng + ?Sized>(image_size: usize, channels: &[usize], out: usize, rng: &mut R) -> Self {
        let mut convs = Vec::with_capacity(channels.len());
        let mut in_c = 3;
        for &c in channels {
            convs.push(Conv2d::new(in_c, c, 3, LRELU_GAIN, rng));
            in_c = c;
        }
        let side = image_size >> channels.len();
        assert!(side >= 1, "image too small for {} pooling stages", channels.len());
        let head = Dense::new(in_c * side * side, out, 1.0, rng);
        Self { convs, head }
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> (Vec<T>, ConvStackTrace<T>) {
        let mut cur = x.clone();
        let mut caches = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(self.convs.len());
        for conv in &self.convs {
            let (mut y, cache) = conv.forward(&cur);
            leaky_relu(&mut y.data);
            cur = avg_pool2(&y);
            caches.push(cache);
            acts.push(y);
        }
        let out = self.head.forward(&cur.data);
        let trace = ConvStackTrace {
            convs: caches,
            activations: acts,
            last_shape: (cur.c, cur.h, cur.w),
            flat: cur.data,
        };
        (out, trace)
    }

    pub fn backward(
        &self,
        trace: &ConvStackTrace<T>,
        dout: &[T],
        mut grads: Option<&mut ConvStack<T>>,
        need_dx: bool,
    ) -> Option<FeatureMap<T>> {
        let train_convs = grads.is_some();
        let dflat = self
            .head
            .backward(&trace.flat, dout, grads.as_deref_mut().map(|g| &mut g.head), true)
            .unwrap();
        let (c, h, w) = trace.last_shape;
        let mut d = FeatureMap::from_vec(c, h, w, dflat);
        let n = self.convs.len();
        for i in (0..n).rev() {
            let mut dy = avg_pool2_backward(&d);
            leaky_relu_backward(&trace.activations[i].data, &mut dy.data);
            let want_dx = i > 0 || need_dx;
            if !want_dx && !train_convs {
                return None;
            }
            let g = grads.as_deref_mut().map(|g| &mut g.convs[i]);
            match self.convs[i].backward(&trace.convs[i], &dy, g, want_dx) {
                Some(dx) => d = dx,
                None => return None,
            }
        }
        Some(d)
    }
}

/// Prior mapping network `z -> w`: three dense layers each followed by leaky ReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct Mapping<T> {
    pub layers: Vec<Dense<T>>,
}

impl_parameters!(Mapping { layers });

#[derive(Clone, Debug)]
pub struct MappingTrace<T> {
    inputs: Vec<Vec<T>>,
    outputs: Vec<Vec<T>>,
}

impl<T: Scalar> Mapping<T> {
    pub fn new<R: Rng + ?Sized>(dim: usize, depth: usize, rng: &mut R) -> Self {
        Self {
            layers: (0..depth).map(|_| Dense::new(dim, dim, LRELU_GAIN, rng)).collect(),
        }
    }

    pub fn forward(&self, z: &[T]) -> (Vec<T>, MappingTrace<T>) {
        let mut cur = z.to_vec();
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for layer in &self.layers {
            let mut y = layer.forward(&cur);
            leaky_relu(&mut y);
            inputs.push(cur);
            outputs.push(y.clone());
            cur = y;
        }
        (cur, MappingTrace { inputs, outputs })
    }

    pub fn backward(&self, trace: &MappingTrace<T>, dw: &[T], grads: &mut Mapping<T>) {
        let mut d = dw.to_vec();
        for i in (0..self.layers.len()).rev() {
            leaky_relu_backward(&trace.outputs[i], &mut d);
            d = self.layers[i]
                .backward(&trace.inputs[i], &d, Some(&mut grads.layers[i]), i > 0)
                .unwrap_or_default();
        }
    }
}

/// Style-based decoder.
///
/// `w` feeds a dense stem producing the lowest-resolution map and, at every
/// block, an affine style (per-channel scale and shift) applied after
/// instance normalization. Output passes through a sigmoid, so pixels lie
/// in `(0, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub stem: Dense<T>,
    pub convs: Vec<Conv2d<T>>,
    pub styles: Vec<Dense<T>>,
    pub to_rgb: Conv2d<T>,
    pub stem_channels: usize,
    pub stem_side: usize,
}

impl_parameters!(Decoder { stem, convs, styles, to_rgb });

#[derive(Clone, Debug)]
struct BlockTrace<T> {
    conv: ConvCache<T>,
    activated: FeatureMap<T>,
    norm: InstanceNormCache<T>,
    style: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct DecoderTrace<T> {
    w: Vec<T>,
    stem: FeatureMap<T>,
    blocks: Vec<BlockTrace<T>>,
    rgb: ConvCache<T>,
    pub output: FeatureMap<T>,
}

impl<T: Scalar> Decoder<T> {
    /// `channels[0]` is the stem width, `channels[1..]` the block widths.
    pub fn new<R: Rng + ?Sized>(image_size: usize, d_w: usize, channels: &[usize], rng: &mut R) -> Self {
        let blocks = channels.len() - 1;
        let side = image_size >> blocks;
        assert!(side >= 1, "image too small for {blocks} upsampling blocks");
        let stem = Dense::new(d_w, channels[0] * side * side, LRELU_GAIN, rng);
        let mut convs = Vec::new();
        let mut styles = Vec::new();
        for b in 0..blocks {
            convs.push(Conv2d::new(channels[b], channels[b + 1], 3, LRELU_GAIN, rng));
            // Small init keeps the initial modulation close to identity.
            styles.push(Dense::new(d_w, 2 * channels[b + 1], 0.25, rng));
        }
        let to_rgb = Conv2d::new(channels[blocks], 3, 1, 1.0, rng);
        Self {
            stem,
            convs,
            styles,
            to_rgb,
            stem_channels: channels[0],
            stem_side: side,
        }
    }

    pub fn num_style_layers(&self) -> usize {
        self.styles.len()
    }

    pub fn forward(&self, w: &[T]) -> DecoderTrace<T> {
        let mut h0 = self.stem.forward(w);
        leaky_relu(&mut h0);
        let stem = FeatureMap::from_vec(self.stem_channels, self.stem_side, self.stem_side, h0);
        let mut cur = stem.clone();
        let mut blocks = Vec::with_capacity(self.convs.len());
        for (conv, style) in self.convs.iter().zip(&self.styles) {
            let up = upsample2(&cur);
            let (mut act, conv_cache) = conv.forward(&up);
            leaky_relu(&mut act.data);
            let norm = instance_norm(&act);
            let s = style.forward(w);
            let c = act.c;
            let n = act.plane();
            let mut out = norm.normalized.clone();
            for ch in 0..c {
                let scale = T::one() + s[ch];
                let shift = s[c + ch];
                for v in &mut out.data[ch * n..(ch + 1) * n] {
                    *v = *v * scale + shift;
                }
            }
            blocks.push(BlockTrace {
                conv: conv_cache,
                activated: act,
                norm,
                style: s,
            });
            cur = out;
        }
        let (mut rgb, rgb_cache) = self.to_rgb.forward(&cur);
        sigmoid(&mut rgb.data);
        DecoderTrace {
            w: w.to_vec(),
            stem,
            blocks,
            rgb: rgb_cache,
            output: rgb,
        }
    }

    /// Backpropagates `d_image` (gradient w.r.t. the sigmoid output).
    /// Accumulates weight gradients into `grads` if given; returns `dL/dw`
    /// when `need_dw`.
    pub fn backward(
        &self,
        trace: &DecoderTrace<T>,
        d_image: &FeatureMap<T>,
        mut grads: Option<&mut Decoder<T>>,
        need_dw: bool,
    ) -> Option<Vec<T>> {
        let mut dw = vec![T::zero(); trace.w.len()];
        let mut d = d_image.clone();
        sigmoid_backward(&trace.output.data, &mut d.data);
        let mut d = self
            .to_rgb
            .backward(&trace.rgb, &d, grads.as_deref_mut().map(|g| &mut g.to_rgb), true)
            .unwrap();
        for b in (0..self.convs.len()).rev() {
            let bt = &trace.blocks[b];
            let c = d.c;
            let n = d.plane();
            let mut ds = vec![T::zero(); 2 * c];
            let mut dnorm = d.clone();
            for ch in 0..c {
                let xs = &bt.norm.normalized.data[ch * n..(ch + 1) * n];
                let g = &d.data[ch * n..(ch + 1) * n];
                ds[ch] = g.iter().zip(xs).map(|(&a, &b)| a * b).sum();
                ds[c + ch] = g.iter().copied().sum();
                let scale = T::one() + bt.style[ch];
                for v in &mut dnorm.data[ch * n..(ch + 1) * n] {
                    *v = *v * scale;
                }
            }
            if let Some(dws) = self.styles[b].backward(
                &trace.w,
                &ds,
                grads.as_deref_mut().map(|g| &mut g.styles[b]),
                need_dw,
            ) {
                dw.iter_mut().zip(dws).for_each(|(a, v)| *a += v);
            }
            let mut dact = instance_norm_backward(&bt.norm, &dnorm);
            leaky_relu_backward(&bt.activated.data, &mut dact.data);
            let dup = self.convs[b]
                .backward(&bt.conv, &dact, grads.as_deref_mut().map(|g| &mut g.convs[b]), true)
                .unwrap();
            d = upsample2_backward(&dup);
        }
        let mut dstem = d.data;
        leaky_relu_backward(&trace.stem.data, &mut dstem);
        if let Some(dws) = self.stem.backward(&trace.w, &dstem, grads.map(|g| &mut g.stem), need_dw) {
            dw.iter_mut().zip(dws).for_each(|(a, v)| *a += v);
        }
        need_dw.then_some(dw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Parameters, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn decoder_latent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dec = Decoder::<f64>::new(16, 6, &[8, 6, 6, 4, 4], &mut rng);
        let w = Tensor::<f64>::randn(&[6], 1.0, &mut rng).data;
        let probe = Tensor::<f64>::randn(&[3 * 16 * 16], 1.0, &mut rng).data;
        let loss = |w: &[f64]| dot(&dec.forward(w).output.data, &probe);
        let trace = dec.forward(&w);
        let d = FeatureMap::from_vec(3, 16, 16, probe.clone());
        let dw = dec.backward(&trace, &d, None, true).unwrap();
        for i in 0..6 {
            let h = 1e-5;
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - dw[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: fd {fd} vs {}", dw[i]);
        }
    }

    #[test]
    fn conv_stack_input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = ConvStack::<f64>::new(16, &[4, 4, 4], 5, &mut rng);
        let x = Tensor::<f64>::randn(&[3 * 16 * 16], 0.5, &mut rng).data;
        let probe = [0.3, -0.2, 0.5, 1.0, -0.7];
        let f = |x: &[f64]| dot(&enc.forward(&FeatureMap::from_vec(3, 16, 16, x.to_vec())).0, &probe);
        let (_, trace) = enc.forward(&FeatureMap::from_vec(3, 16, 16, x.clone()));
        let dx = enc.backward(&trace, &probe, None, true).unwrap();
        for i in (0..x.len()).step_by(37) {
            let h = 1e-5;
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn mapping_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = Mapping::<f64>::new(4, 3, &mut rng);
        let z = [0.5, -1.0, 0.25, 2.0];
        let probe = [1.0, -0.5, 0.3, 0.2];
        let (_, trace) = map.forward(&z);
        let mut grads = map.clone();
        grads.zero_();
        map.backward(&trace, &probe, &mut grads);
        let h = 1e-6;
        for (layer, idx) in [(0usize, 3usize), (1, 7), (2, 15)] {
            let mut p = map.clone();
            p.layers[layer].weight.data[idx] += h;
            let mut m = map.clone();
            m.layers[layer].weight.data[idx] -= h;
            let fd = (dot(&p.forward(&z).0, &probe) - dot(&m.forward(&z).0, &probe)) / (2.0 * h);
            let an = grads.layers[layer].weight.data[idx];
            assert!((fd - an).abs() < 1e-6, "layer {layer}: {fd} vs {an}");
        }
    }
}
