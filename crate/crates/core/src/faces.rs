//! Procedural face-like images with known ground-truth factors.
//!
//! Identity lives in the face hue, face aspect ratio and eye spacing; the
//! editable attributes are age (forehead wrinkle contrast), smile (mouth
//! curvature) and hair (hair-band height). Each attribute is drawn in a fixed
//! region so it can be read back analytically by [`measure_factors`].
//!
//! All geometry below is in normalized coordinates: `u` left to right and
//! `v` top to bottom, both in `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::image::ImageTensor;
use crate::scalar::Scalar;

pub const BACKGROUND: [f64; 3] = [0.93, 0.93, 0.93];
pub const HAIR_COLOR: [f64; 3] = [0.22, 0.16, 0.10];
pub const EYE_COLOR: [f64; 3] = [0.08, 0.08, 0.10];
pub const MOUTH_COLOR: [f64; 3] = [0.60, 0.12, 0.15];

const SUPERSAMPLE: usize = 4;

const HAIR_U: (f64, f64) = (0.10, 0.90);
const HAIR_TOP: f64 = 0.04;
const HAIR_MIN_HEIGHT: f64 = 0.06;
const HAIR_SPAN: f64 = 0.30;

const FACE_CENTER: (f64, f64) = (0.5, 0.55);
const FACE_RX: f64 = 0.25;
const FACE_RY: f64 = 0.30;
/// Fraction of the hue circle used, so hue never wraps.
const HUE_SPAN: f64 = 0.8;
const SKIN_SATURATION: f64 = 0.4;
const SKIN_VALUE: f64 = 0.9;

const EYE_V: f64 = 0.48;
const EYE_RADIUS: f64 = 0.035;

const WRINKLE_VS: [f64; 3] = [0.33, 0.36, 0.39];
const WRINKLE_U: (f64, f64) = (0.42, 0.58);
const WRINKLE_HALF_WIDTH: f64 = 0.007;
const WRINKLE_DARKENING: f64 = 0.6;

const MOUTH_V: f64 = 0.70;
const MOUTH_U: (f64, f64) = (0.40, 0.60);
const MOUTH_BEND: f64 = 0.10;
const MOUTH_HALF_WIDTH: f64 = 0.015;

/// Ground-truth generative factors of one synthetic face.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceFactors {
    pub identity_hue: f64,
    pub identity_aspect: f64,
    pub identity_eye_spacing: f64,
    pub age: f64,
    pub smile: f64,
    pub hair: f64,
}

/// Editable (non-identity) attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Age,
    Smile,
    Hair,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Age, Attribute::Smile, Attribute::Hair];

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Age => "age",
            Attribute::Smile => "smile",
            Attribute::Hair => "hair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn value(self, f: &FaceFactors) -> f64 {
        match self {
            Attribute::Age => f.age,
            Attribute::Smile => f.smile,
            Attribute::Hair => f.hair,
        }
    }

    /// Positive-class threshold; balanced under the uniform factor prior.
    pub fn threshold(self) -> f64 {
        match self {
            Attribute::Age => 0.5,
            Attribute::Smile => 0.0,
            Attribute::Hair => 0.5,
        }
    }

    pub fn label(self, f: &FaceFactors) -> bool {
        self.value(f) > self.threshold()
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub const HUE_RANGE: (f64, f64) = (0.0, 1.0);
pub const ASPECT_RANGE: (f64, f64) = (0.7, 1.3);
pub const EYE_SPACING_RANGE: (f64, f64) = (0.2, 0.4);
pub const AGE_RANGE: (f64, f64) = (0.0, 1.0);
pub const SMILE_RANGE: (f64, f64) = (-1.0, 1.0);
pub const HAIR_RANGE: (f64, f64) = (0.0, 1.0);

impl FaceFactors {
    pub fn is_valid(&self) -> bool {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        inside(self.identity_hue, HUE_RANGE)
            && inside(self.identity_aspect, ASPECT_RANGE)
            && inside(self.identity_eye_spacing, EYE_SPACING_RANGE)
            && inside(self.age, AGE_RANGE)
            && inside(self.smile, SMILE_RANGE)
            && inside(self.hair, HAIR_RANGE)
    }

    /// The midpoint of every range.
    pub fn neutral() -> Self {
        Self {
            identity_hue: 0.5,
            identity_aspect: 1.0,
            identity_eye_spacing: 0.3,
            age: 0.5,
            smile: 0.0,
            hair: 0.5,
        }
    }

    pub fn identity(&self) -> [f64; 3] {
        [self.identity_hue, self.identity_aspect, self.identity_eye_spacing]
    }

    pub fn skin_color(&self) -> [f64; 3] {
        hsv_to_rgb(HUE_SPAN * self.identity_hue, SKIN_SATURATION, SKIN_VALUE)
    }
}

/// Draws `n` factor records uniformly from their ranges.
pub fn sample_factors(seed: u64, n: usize) -> Vec<FaceFactors> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uni = |(lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    (0..n)
        .map(|_| FaceFactors {
            identity_hue: uni(HUE_RANGE),
            identity_aspect: uni(ASPECT_RANGE),
            identity_eye_spacing: uni(EYE_SPACING_RANGE),
            age: uni(AGE_RANGE),
            smile: uni(SMILE_RANGE),
            hair: uni(HAIR_RANGE),
        })
        .collect()
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

pub fn rgb_to_hue(rgb: [f64; 3]) -> f64 {
    let [r, g, b] = rgb;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    if d <= 0.0 {
        return 0.0;
    }
    let h = if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    h / 6.0
}

fn luminance(rgb: [f64; 3]) -> f64 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

fn mouth_point(smile: f64, t: f64) -> (f64, f64) {
    let u = MOUTH_U.0 + (MOUTH_U.1 - MOUTH_U.0) * t;
    let v = MOUTH_V + 2.0 * t * (1.0 - t) * MOUTH_BEND * smile;
    (u, v)
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Pixel-space bounding box `(y0, y1, x0, x1)` (half-open) containing every
/// mouth pixel for any smile in `[-1, 1]`.
pub fn mouth_region(size: usize) -> (usize, usize, usize, usize) {
    let pad = MOUTH_HALF_WIDTH;
    let s = size as f64;
    let y0 = ((MOUTH_V - 0.5 * MOUTH_BEND - pad) * s).floor() as usize;
    let y1 = ((MOUTH_V + 0.5 * MOUTH_BEND + pad) * s).ceil() as usize;
    let x0 = ((MOUTH_U.0 - pad) * s).floor() as usize;
    let x1 = ((MOUTH_U.1 + pad) * s).ceil() as usize;
    (y0, y1.min(size), x0, x1.min(size))
}

fn in_wrinkle(u: f64, v: f64) -> bool {
    u >= WRINKLE_U.0 && u <= WRINKLE_U.1 && WRINKLE_VS.iter().any(|&wv| (v - wv).abs() <= WRINKLE_HALF_WIDTH)
}

/// Rasterization of one factor record. Geometry is precomputed once.
struct Painter {
    f: FaceFactors,
    skin: [f64; 3],
    rx: f64,
    hair_bottom: f64,
    mouth_poly: Vec<(f64, f64)>,
    mouth_box: (f64, f64, f64, f64),
}

impl Painter {
    fn new(f: FaceFactors) -> Self {
        let mouth_poly: Vec<(f64, f64)> = (0..=48).map(|i| mouth_point(f.smile, i as f64 / 48.0)).collect();
        let lo = mouth_poly.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let hi = mouth_poly.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        Self {
            f,
            skin: f.skin_color(),
            rx: FACE_RX * f.identity_aspect,
            hair_bottom: HAIR_TOP + HAIR_MIN_HEIGHT + HAIR_SPAN * f.hair,
            mouth_box: (
                MOUTH_U.0 - MOUTH_HALF_WIDTH,
                MOUTH_U.1 + MOUTH_HALF_WIDTH,
                lo - MOUTH_HALF_WIDTH,
                hi + MOUTH_HALF_WIDTH,
            ),
            mouth_poly,
        }
    }

    fn color(&self, u: f64, v: f64) -> [f64; 3] {
        let mut c = BACKGROUND;
        if u >= HAIR_U.0 && u <= HAIR_U.1 && v >= HAIR_TOP && v <= self.hair_bottom {
            c = HAIR_COLOR;
        }
        let ex = (u - FACE_CENTER.0) / self.rx;
        let ey = (v - FACE_CENTER.1) / FACE_RY;
        if ex * ex + ey * ey <= 1.0 {
            c = self.skin;
            if in_wrinkle(u, v) {
                let k = 1.0 - WRINKLE_DARKENING * self.f.age;
                c = [c[0] * k, c[1] * k, c[2] * k];
            }
        }
        let half = 0.5 * self.f.identity_eye_spacing;
        for cx in [FACE_CENTER.0 - half, FACE_CENTER.0 + half] {
            if (u - cx).powi(2) + (v - EYE_V).powi(2) <= EYE_RADIUS * EYE_RADIUS {
                c = EYE_COLOR;
            }
        }
        let (u0, u1, v0, v1) = self.mouth_box;
        if u >= u0 && u <= u1 && v >= v0 && v <= v1 {
            let near = self
                .mouth_poly
                .windows(2)
                .any(|s| dist_to_segment((u, v), s[0], s[1]) <= MOUTH_HALF_WIDTH);
            if near {
                c = MOUTH_COLOR;
            }
        }
        c
    }
}

/// Supersampled box-filter rasterization over a `size x size` grid.
fn rasterize(size: usize, mut sample: impl FnMut(f64, f64) -> [f64; 3]) -> Vec<f64> {
    let s = size as f64;
    let n = SUPERSAMPLE as f64;
    let norm = 1.0 / (n * n);
    let mut px = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let mut acc = [0.0; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let u = (x as f64 + (sx as f64 + 0.5) / n) / s;
                    let v = (y as f64 + (sy as f64 + 0.5) / n) / s;
                    let c = sample(u, v);
                    acc[0] += c[0];
                    acc[1] += c[1];
                    acc[2] += c[2];
                }
            }
            let i = (y * size + x) * 3;
            for c in 0..3 {
                px[i + c] = acc[c] * norm;
            }
        }
    }
    px
}

/// Renders one face at `size x size`.
pub fn render<T: Scalar>(factors: &FaceFactors, size: usize) -> ImageTensor<T> {
    assert!(size >= 16, "render size must be at least 16");
    let painter = Painter::new(*factors);
    let px = rasterize(size, |u, v| painter.color(u, v));
    ImageTensor::clamped(size, size, px.into_iter().map(|v| T::from_f64(v).unwrap()).collect())
}

/// Deterministic dataset of rendered faces with their factors.
#[derive(Clone, Debug)]
pub struct SyntheticDataset<T> {
    pub images: Vec<ImageTensor<T>>,
    pub factors: Vec<FaceFactors>,
    pub seed: u64,
    pub size: usize,
}

impl<T: Scalar> SyntheticDataset<T> {
    pub fn generate(seed: u64, n: usize, size: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("dataset size must be at least 1"));
        }
        if size < 16 {
            return Err(invalid("render size must be at least 16"));
        }
        let factors = sample_factors(seed, n);
        let images = factors.iter().map(|f| render(f, size)).collect();
        Ok(Self {
            images,
            factors,
            seed,
            size,
        })
    }

    pub fn from_parts(images: Vec<ImageTensor<T>>, factors: Vec<FaceFactors>, seed: u64) -> Result<Self> {
        if images.len() != factors.len() {
            return Err(invalid("images and factors differ in length"));
        }
        if images.is_empty() {
            return Err(invalid("dataset is empty"));
        }
        let size = images[0].height();
        Ok(Self {
            images,
            factors,
            seed,
            size,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn descriptor(&self) -> String {
        format!("synthetic-faces(seed={}, n={}, size={})", self.seed, self.len(), self.size)
    }
}

fn pixel_span(lo: f64, hi: f64, size: usize) -> std::ops::Range<usize> {
    let s = size as f64;
    let a = (lo * s).floor().max(0.0) as usize;
    let b = ((hi * s).ceil() as usize).min(size);
    a..b.max(a + 1).min(size)
}

fn mean_rgb<T: Scalar>(img: &ImageTensor<T>, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut n = 0.0f64;
    for y in ys {
        for x in xs.clone() {
            let p = img.rgb(y, x);
            for c in 0..3 {
                acc[c] += p[c];
            }
            n += 1.0;
        }
    }
    acc.map(|v| v / n.max(1.0))
}

/// Recovers factors from fixed pixel regions of a (rendered or decoded) face.
///
/// Always returns values clamped to the factor ranges, even for images that
/// are not faces.
pub fn measure_factors<T: Scalar>(image: &ImageTensor<T>) -> FaceFactors {
    let size = image.height().min(image.width());
    let s = size as f64;
    let center = |i: usize| (i as f64 + 0.5) / s;

    // Cheek patch: between the eyes and the mouth, inside every face shape.
    let skin = mean_rgb(image, pixel_span(0.56, 0.60, size), pixel_span(0.46, 0.54, size));
    let skin_lum = luminance(skin);
    let hue = (rgb_to_hue(skin) / HUE_SPAN).clamp(HUE_RANGE.0, HUE_RANGE.1);

    // Face width along the row through the ellipse center.
    let row = ((FACE_CENTER.1 * s) as usize).min(size - 1);
    let axis = [skin[0] - BACKGROUND[0], skin[1] - BACKGROUND[1], skin[2] - BACKGROUND[2]];
    let axis2 = axis.iter().map(|v| v * v).sum::<f64>();
    let aspect = if axis2 > 1e-6 {
        let cover: f64 = (0..size)
            .map(|x| {
                let p = image.rgb(row, x);
                let d = (0..3).map(|c| (p[c] - BACKGROUND[c]) * axis[c]).sum::<f64>();
                (d / axis2).clamp(0.0, 1.0)
            })
            .sum();
        let dv = (center(row) - FACE_CENTER.1) / FACE_RY;
        let chord = (1.0 - dv * dv).max(1e-6).sqrt();
        cover / s / (2.0 * FACE_RX * chord)
    } else {
        1.0
    };

    // Eye centroids on either side of the vertical midline.
    let eye_rows = pixel_span(EYE_V - EYE_RADIUS - 0.01, EYE_V + EYE_RADIUS + 0.01, size);
    let (mut wl, mut xl, mut wr, mut xr) = (0.0, 0.0, 0.0, 0.0);
    for y in eye_rows {
        for x in 0..size {
            let w = ((0.40 - luminance(image.rgb(y, x))) / 0.30).clamp(0.0, 1.0);
            if center(x) < 0.5 {
                wl += w;
                xl += w * center(x);
            } else {
                wr += w;
                xr += w * center(x);
            }
        }
    }
    let spacing = if wl > 1e-9 && wr > 1e-9 {
        xr / wr - xl / wl
    } else {
        0.5 * (EYE_SPACING_RANGE.0 + EYE_SPACING_RANGE.1)
    };

    // Mouth centroid along the central columns versus the corner height.
    let mouth_lum = luminance(MOUTH_COLOR);
    let cols = pixel_span(0.48, 0.52, size);
    let bend: f64 = cols
        .clone()
        .map(|x| {
            let t = ((center(x) - MOUTH_U.0) / (MOUTH_U.1 - MOUTH_U.0)).clamp(0.0, 1.0);
            2.0 * t * (1.0 - t) * MOUTH_BEND
        })
        .sum::<f64>()
        / cols.len() as f64;
    let (mut wm, mut ym) = (0.0, 0.0);
    let contrast = skin_lum - mouth_lum;
    if contrast > 1e-6 {
        let margin = MOUTH_HALF_WIDTH + 1.5 / size as f64;
        for y in pixel_span(MOUTH_V - MOUTH_BEND - margin, MOUTH_V + MOUTH_BEND + margin, size) {
            for x in cols.clone() {
                let w = ((skin_lum - luminance(image.rgb(y, x))) / contrast).clamp(0.0, 1.0);
                wm += w;
                ym += w * center(y);
            }
        }
    }
    let smile = if wm > 1e-9 { (ym / wm - MOUTH_V) / bend } else { 0.0 };

    // Wrinkle darkening against the rasterized stroke template.
    let (mut num, mut den) = (0.0, 0.0);
    if skin_lum > 1e-6 {
        let band = pixel_span(WRINKLE_VS[0] - 0.02, WRINKLE_VS[2] + 0.02, size);
        let cols = pixel_span(WRINKLE_U.0, WRINKLE_U.1, size);
        for y in band {
            for x in cols.clone() {
                let c = wrinkle_coverage(size, y, x);
                if c > 0.0 {
                    let drop = 1.0 - luminance(image.rgb(y, x)) / skin_lum;
                    num += drop * c;
                    den += c * c;
                }
            }
        }
    }
    let age = if den > 0.0 { num / (WRINKLE_DARKENING * den) } else { 0.0 };

    // Hair height from a column left of every face.
    let hair_col = ((0.13 * s) as usize).min(size - 1);
    let bg_lum = luminance(BACKGROUND);
    let hair_lum = luminance(HAIR_COLOR);
    let height: f64 = (0..size)
        .map(|y| ((bg_lum - luminance(image.rgb(y, hair_col))) / (bg_lum - hair_lum)).clamp(0.0, 1.0))
        .sum::<f64>()
        / s;
    let hair = (height - HAIR_MIN_HEIGHT) / HAIR_SPAN;

    FaceFactors {
        identity_hue: hue,
        identity_aspect: aspect.clamp(ASPECT_RANGE.0, ASPECT_RANGE.1),
        identity_eye_spacing: spacing.clamp(EYE_SPACING_RANGE.0, EYE_SPACING_RANGE.1),
        age: age.clamp(AGE_RANGE.0, AGE_RANGE.1),
        smile: smile.clamp(SMILE_RANGE.0, SMILE_RANGE.1),
        hair: hair.clamp(HAIR_RANGE.0, HAIR_RANGE.1),
    }
}

fn wrinkle_coverage(size: usize, y: usize, x: usize) -> f64 {
    let s = size as f64;
    let n = SUPERSAMPLE as f64;
    let mut hits = 0usize;
    for sy in 0..SUPERSAMPLE {
        for sx in 0..SUPERSAMPLE {
            let u = (x as f64 + (sx as f64 + 0.5) / n) / s;
            let v = (y as f64 + (sy as f64 + 0.5) / n) / s;
            if in_wrinkle(u, v) {
                hits += 1;
            }
        }
    }
    hits as f64 / (n * n)
}
