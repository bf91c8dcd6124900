//! Layers with explicit forward/backward passes.
//!
//! Every `forward` returns whatever the matching `backward` needs; gradients
//! are accumulated (`+=`) into a caller-owned parameter struct of the same
//! type so that batches can be summed without extra buffers.

use rand::Rng;

use super::tensor::{FeatureMap, Tensor};
use crate::impl_parameters;
use crate::scalar::{lit, Scalar};

pub const LRELU_SLOPE: f64 = 0.2;

/// Square "same" convolution with stride 1 (kernel 1 or 3).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `[out, in * k * k]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl_parameters!(Conv2d { weight, bias });

/// im2col buffer retained for the weight gradient.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    cols: Vec<T>,
    in_c: usize,
    h: usize,
    w: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(in_c: usize, out_c: usize, k: usize, gain: f64, rng: &mut R) -> Self {
        assert!(k == 1 || k == 3, "only 1x1 and 3x3 kernels are supported");
        let fan_in = (in_c * k * k) as f64;
        Self {
            weight: Tensor::randn(&[out_c, in_c * k * k], gain / fan_in.sqrt(), rng),
            bias: Tensor::zeros(&[out_c]),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape[0]
    }

    fn ksize(&self, in_c: usize) -> usize {
        let rows = self.weight.shape[1];
        if rows == in_c {
            1
        } else {
            assert_eq!(rows, in_c * 9, "conv input has {in_c} channels, weight expects {rows}/k²");
            3
        }
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, ConvCache<T>) {
        let k = self.ksize(x.c);
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        let rows = x.c * k * k;
        let cols = if k == 1 { x.data.clone() } else { im2col3(x) };
        let out_c = self.out_channels();
        let mut out = vec![T::zero(); out_c * hw];
        for (o, chunk) in out.chunks_mut(hw).enumerate() {
            chunk.fill(self.bias.data[o]);
        }
        T::gemm(
            out_c,
            rows,
            hw,
            T::one(),
            &self.weight.data,
            rows,
            1,
            &cols,
            hw,
            1,
            T::one(),
            &mut out,
            hw,
            1,
        );
        (
            FeatureMap::from_vec(out_c, h, w, out),
            ConvCache {
                cols,
                in_c: x.c,
                h,
                w,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &ConvCache<T>,
        dy: &FeatureMap<T>,
        grads: Option<&mut Conv2d<T>>,
        need_dx: bool,
    ) -> Option<FeatureMap<T>> {
        let k = self.ksize(cache.in_c);
        let hw = cache.h * cache.w;
        let rows = cache.in_c * k * k;
        let out_c = self.out_channels();
        debug_assert_eq!(dy.data.len(), out_c * hw);
        if let Some(g) = grads {
            T::gemm(
                out_c,
                hw,
                rows,
                T::one(),
                &dy.data,
                hw,
                1,
                &cache.cols,
                1,
                hw,
                T::one(),
                &mut g.weight.data,
                rows,
                1,
            );
            for (o, chunk) in dy.data.chunks(hw).enumerate() {
                g.bias.data[o] += chunk.iter().copied().sum::<T>();
            }
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); rows * hw];
        T::gemm(
            rows,
            out_c,
            hw,
            T::one(),
            &self.weight.data,
            1,
            rows,
            &dy.data,
            hw,
            1,
            T::zero(),
            &mut dcols,
            hw,
            1,
        );
        let dx = if k == 1 {
            dcols
        } else {
            col2im3(&dcols, cache.in_c, cache.h, cache.w)
        };
        Some(FeatureMap::from_vec(cache.in_c, cache.h, cache.w, dx))
    }
}

fn im2col3<T: Scalar>(x: &FeatureMap<T>) -> Vec<T> {
    let (c, h, w) = (x.c, x.h, x.w);
    let hw = h * w;
    let mut cols = vec![T::zero(); c * 9 * hw];
    for ci in 0..c {
        let src = &x.data[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                let dst = &mut cols[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = if kx == 0 { 1 } else { 0 };
                    let x_hi = if kx == 2 { w - 1 } else { w };
                    for xx in x_lo..x_hi {
                        dst[y * w + xx] = src[sy * w + xx + kx - 1];
                    }
                }
            }
        }
    }
    cols
}

fn col2im3<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut out = vec![T::zero(); c * hw];
    for ci in 0..c {
        let dst = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = (ci * 9 + ky * 3 + kx) * hw;
                let src = &cols[row..row + hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    let x_lo = if kx == 0 { 1 } else { 0 };
                    let x_hi = if kx == 2 { w - 1 } else { w };
                    for xx in x_lo..x_hi {
                        dst[sy * w + xx + kx - 1] += src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Fully connected layer, `y = W x + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl_parameters!(Dense { weight, bias });

impl<T: Scalar> Dense<T> {
    pub fn new<R: Rng + ?Sized>(inp: usize, out: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: Tensor::randn(&[out, inp], gain / (inp as f64).sqrt(), rng),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let n = self.in_features();
        assert_eq!(x.len(), n, "dense input length");
        self.weight
            .data
            .chunks(n)
            .zip(&self.bias.data)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect()
    }

    /// `x` is the forward input.
    pub fn backward(&self, x: &[T], dy: &[T], grads: Option<&mut Dense<T>>, need_dx: bool) -> Option<Vec<T>> {
        let n = self.in_features();
        if let Some(g) = grads {
            for ((row, gb), &d) in g.weight.data.chunks_mut(n).zip(g.bias.data.iter_mut()).zip(dy) {
                *gb += d;
                if d != T::zero() {
                    for (gw, &v) in row.iter_mut().zip(x) {
                        *gw += d * v;
                    }
                }
            }
        }
        if !need_dx {
            return None;
        }
        let mut dx = vec![T::zero(); n];
        for (row, &d) in self.weight.data.chunks(n).zip(dy) {
            if d != T::zero() {
                for (acc, &w) in dx.iter_mut().zip(row) {
                    *acc += d * w;
                }
            }
        }
        Some(dx)
    }
}

pub fn leaky_relu<T: Scalar>(x: &mut [T]) {
    let s = lit::<T>(LRELU_SLOPE);
    for v in x {
        if *v < T::zero() {
            *v = *v * s;
        }
    }
}

/// Backward of [`leaky_relu`] given its *output*.
pub fn leaky_relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    let s = lit::<T>(LRELU_SLOPE);
    for (d, &v) in dy.iter_mut().zip(y) {
        if v < T::zero() {
            *d = *d * s;
        }
    }
}

pub fn relu<T: Scalar>(x: &mut [T]) {
    for v in x {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub fn relu_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *d = T::zero();
        }
    }
}

pub fn sigmoid<T: Scalar>(x: &mut [T]) {
    for v in x {
        *v = T::one() / (T::one() + (-*v).exp());
    }
}

pub fn sigmoid_backward<T: Scalar>(y: &[T], dy: &mut [T]) {
    for (d, &v) in dy.iter_mut().zip(y) {
        *d = *d * v * (T::one() - v);
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// 2x2 average pooling; spatial dims must be even.
pub fn avg_pool2<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "avg_pool2 needs even dims");
    let (oh, ow) = (x.h / 2, x.w / 2);
    let q = lit::<T>(0.25);
    let mut out = FeatureMap::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * ow + xx] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * q;
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Scalar>(dy: &FeatureMap<T>) -> FeatureMap<T> {
    let mut up = upsample2(dy);
    let q = lit::<T>(0.25);
    up.data.iter_mut().for_each(|v| *v = *v * q);
    up
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2<T: Scalar>(x: &FeatureMap<T>) -> FeatureMap<T> {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut out = FeatureMap::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: 2x2 sum pooling.
pub fn upsample2_backward<T: Scalar>(dy: &FeatureMap<T>) -> FeatureMap<T> {
    let (oh, ow) = (dy.h / 2, dy.w / 2);
    let mut out = FeatureMap::zeros(dy.c, oh, ow);
    for c in 0..dy.c {
        let src = &dy.data[c * dy.plane()..(c + 1) * dy.plane()];
        let dst = &mut out.data[c * oh * ow..(c + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * dy.w + 2 * xx;
                dst[y * ow + xx] = src[i] + src[i + 1] + src[i + dy.w] + src[i + dy.w + 1];
            }
        }
    }
    out
}

pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Per-channel normalization statistics kept for the backward pass.
#[derive(Clone, Debug)]
pub struct InstanceNormCache<T> {
    pub normalized: FeatureMap<T>,
    inv_std: Vec<T>,
}

pub fn instance_norm<T: Scalar>(x: &FeatureMap<T>) -> InstanceNormCache<T> {
    let n = x.plane();
    let nf = lit::<T>(n as f64);
    let eps = lit::<T>(INSTANCE_NORM_EPS);
    let mut out = FeatureMap::zeros(x.c, x.h, x.w);
    let mut inv_std = Vec::with_capacity(x.c);
    for c in 0..x.c {
        let src = &x.data[c * n..(c + 1) * n];
        let mean = src.iter().copied().sum::<T>() / nf;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for (d, &v) in out.data[c * n..(c + 1) * n].iter_mut().zip(src) {
            *d = (v - mean) * is;
        }
    }
    InstanceNormCache {
        normalized: out,
        inv_std,
    }
}

pub fn instance_norm_backward<T: Scalar>(cache: &InstanceNormCache<T>, dy: &FeatureMap<T>) -> FeatureMap<T> {
    let xh = &cache.normalized;
    let n = xh.plane();
    let nf = lit::<T>(n as f64);
    let mut dx = FeatureMap::zeros(xh.c, xh.h, xh.w);
    for c in 0..xh.c {
        let g = &dy.data[c * n..(c + 1) * n];
        let xs = &xh.data[c * n..(c + 1) * n];
        let mean_g = g.iter().copied().sum::<T>() / nf;
        let mean_gx = g.iter().zip(xs).map(|(&a, &b)| a * b).sum::<T>() / nf;
        let is = cache.inv_std[c];
        for ((d, &gi), &xi) in dx.data[c * n..(c + 1) * n].iter_mut().zip(g).zip(xs) {
            *d = is * (gi - mean_g - xi * mean_gx);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Tensor::<f64>::randn(&[c * h * w], 1.0, &mut rng);
        FeatureMap::from_vec(c, h, w, t.data)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn conv3_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::<f64>::new(2, 3, 3, 1.0, &mut rng);
        let x = rand_map(2, 5, 4, 2);
        let (y, _) = conv.forward(&x);
        for o in 0..3 {
            for yy in 0..5 {
                for xx in 0..4 {
                    let mut acc = conv.bias.data[o];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let sy = yy as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= 5 || sx >= 4 {
                                    continue;
                                }
                                acc += conv.weight.data[o * 18 + ci * 9 + ky * 3 + kx]
                                    * x.data[ci * 20 + sy as usize * 4 + sx as usize];
                            }
                        }
                    }
                    assert!((acc - y.data[o * 20 + yy * 4 + xx]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint_of_forward() {
        // <dy, conv(x) - b> == <conv^T dy, x> for the linear part.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in [1, 3] {
            let conv = Conv2d::<f64>::new(3, 4, k, 1.0, &mut rng);
            let x = rand_map(3, 6, 6, 4);
            let dy = rand_map(4, 6, 6, 5);
            let (y, cache) = conv.forward(&x);
            let mut lin = y.data.clone();
            for o in 0..4 {
                for v in &mut lin[o * 36..(o + 1) * 36] {
                    *v -= conv.bias.data[o];
                }
            }
            let dx = conv.backward(&cache, &dy, None, true).unwrap();
            assert!((dot(&dy.data, &lin) - dot(&dx.data, &x.data)).abs() < 1e-9);
        }
    }

    #[test]
    fn pooling_and_upsampling_are_adjoint() {
        let x = rand_map(2, 4, 4, 7);
        let y = rand_map(2, 2, 2, 8);
        let up = upsample2(&y);
        let down = upsample2_backward(&x);
        assert!((dot(&up.data, &x.data) - dot(&y.data, &down.data)).abs() < 1e-12);
        let p = avg_pool2(&x);
        let pb = avg_pool2_backward(&y);
        assert!((dot(&p.data, &y.data) - dot(&x.data, &pb.data)).abs() < 1e-12);
    }

    #[test]
    fn instance_norm_gradient_matches_finite_differences() {
        let x = rand_map(2, 3, 3, 11);
        let g = rand_map(2, 3, 3, 12);
        let loss = |m: &FeatureMap<f64>| dot(&instance_norm(m).normalized.data, &g.data);
        let cache = instance_norm(&x);
        let dx = instance_norm_backward(&cache, &g);
        let h = 1e-6;
        for i in 0..x.data.len() {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6, "{i}: {fd} vs {}", dx.data[i]);
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0f64) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0f64) >= 0.0);
    }
}
