//! RGB float images in `[0, 1]`, stored row-major with interleaved channels.

use crate::error::{invalid, Error, Result};
use crate::nn::FeatureMap;
use crate::scalar::{lit, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor<T> {
    height: usize,
    width: usize,
    /// `height * width * 3`, index `(y * width + x) * 3 + c`.
    pixels: Vec<T>,
}

impl<T: Scalar> ImageTensor<T> {
    /// Validating constructor: values must be finite and inside `[0, 1]`.
    pub fn new(height: usize, width: usize, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("image must be non-empty"));
        }
        if pixels.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "expected {} values for a {height}x{width}x3 image, got {}",
                height * width * 3,
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite pixel value at index {i}")));
        }
        if let Some(i) = pixels.iter().position(|&v| v < T::zero() || v > T::one()) {
            return Err(invalid(format!(
                "pixel {i} = {:?} outside [0, 1]",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    /// NaN maps to 0.
    pub fn clamped(height: usize, width: usize, mut pixels: Vec<T>) -> Self {
        assert_eq!(pixels.len(), height * width * 3);
        for v in &mut pixels {
            *v = if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) };
        }
        Self {
            height,
            width,
            pixels,
        }
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self::clamped(height, width, vec![lit(value); height * width * 3])
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut px = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    px.push(lit(f(y, x, c)));
                }
            }
        }
        Self::clamped(height, width, px)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, 3)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn rgb(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [
            self.pixels[i].to_f64().unwrap(),
            self.pixels[i + 1].to_f64().unwrap(),
            self.pixels[i + 2].to_f64().unwrap(),
        ]
    }

    pub fn same_shape(&self, other: &ImageTensor<impl Scalar>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn check_same_shape(&self, other: &ImageTensor<impl Scalar>) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "image shapes differ: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    /// Planar `3 x h x w` view for the networks.
    pub fn to_feature_map(&self) -> FeatureMap<T> {
        let hw = self.height * self.width;
        let mut data = vec![T::zero(); 3 * hw];
        for (p, px) in self.pixels.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * hw + p] = px[c];
            }
        }
        FeatureMap::from_vec(3, self.height, self.width, data)
    }

    /// Inverse of [`Self::to_feature_map`]; values are clamped into range.
    pub fn from_feature_map(map: &FeatureMap<T>) -> Self {
        assert_eq!(map.c, 3, "image feature map must have 3 channels");
        let hw = map.h * map.w;
        let mut px = vec![T::zero(); 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                px[p * 3 + c] = map.data[c * hw + p];
            }
        }
        Self::clamped(map.h, map.w, px)
    }

    pub fn cast<U: Scalar>(&self) -> ImageTensor<U> {
        ImageTensor {
            height: self.height,
            width: self.width,
            pixels: self.pixels.iter().map(|v| lit(v.to_f64().unwrap())).collect(),
        }
    }

    /// 8-bit quantized RGB bytes (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|v| (v.to_f64().unwrap() * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        let px = bytes.iter().map(|&b| lit(b as f64 / 255.0)).collect();
        Self::new(height, width, px)
    }

    pub fn to_png(&self) -> Result<Vec<u8>> {
        encode_png(self.width as u32, self.height as u32, &self.to_rgb8())
    }

    /// Decodes an 8-bit RGB, RGBA, gray or gray-alpha PNG (alpha is dropped).
    pub fn from_png(bytes: &[u8]) -> Result<Self> {
        let (w, h, rgb) = decode_png(bytes)?;
        Self::from_rgb8(h as usize, w as usize, &rgb)
    }

    /// Box-filter resample to `size x size` (integer factors only) or nearest otherwise.
    pub fn resize(&self, size: usize) -> Self {
        if self.height == size && self.width == size {
            return self.clone();
        }
        if self.height % size == 0 && self.width % size == 0 {
            let (fy, fx) = (self.height / size, self.width / size);
            let norm = 1.0 / (fy * fx) as f64;
            return Self::from_fn(size, size, |y, x, c| {
                let mut acc = 0.0;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += self.get(y * fy + dy, x * fx + dx, c).to_f64().unwrap();
                    }
                }
                acc * norm
            });
        }
        Self::from_fn(size, size, |y, x, c| {
            let sy = (y * self.height) / size;
            let sx = (x * self.width) / size;
            self.get(sy, sx, c).to_f64().unwrap()
        })
    }
}

pub fn encode_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        writer.write_image_data(rgb).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn decode_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>)> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::Png("image too large".into()))?];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (info.width, info.height);
    let data = &buf[..info.buffer_size()];
    let channels = info.color_type.samples();
    let mut rgb = Vec::with_capacity((w * h * 3) as usize);
    for px in data.chunks_exact(channels) {
        match channels {
            1 | 2 => rgb.extend_from_slice(&[px[0], px[0], px[0]]),
            3 | 4 => rgb.extend_from_slice(&px[..3]),
            _ => return Err(Error::Png(format!("unsupported channel count {channels}"))),
        }
    }
    Ok((w, h, rgb))
}
