//! Image similarity metrics, factor-oracle scores and mean/std report tables.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::faces::{measure_factors, Attribute};
use crate::image::ImageTensor;
use crate::scalar::Scalar;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub const SWD_PATCH: usize = 7;
pub const SWD_STRIDE: usize = 4;
pub const SWD_LEVELS: usize = 2;
pub const SWD_DIRECTIONS: usize = 128;
pub const SWD_SCALE: f64 = 1e3;
/// Variance floor in per-patch normalization; keeps flat patches from
/// amplifying quantization noise.
pub const SWD_VAR_EPS: f64 = 1e-4;

fn planes<T: Scalar>(img: &ImageTensor<T>) -> Vec<Vec<f64>> {
    let (h, w, _) = img.shape();
    (0..3)
        .map(|c| {
            (0..h * w)
                .map(|i| img.pixels()[i * 3 + c].to_f64().unwrap())
                .collect()
        })
        .collect()
}

fn gaussian_1d() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect()
}

/// Separable Gaussian filter with the window truncated at the border and
/// renormalized over the pixels inside the image.
fn blur(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let r = (g.len() / 2) as isize;
    let pass = |src: &[f64], along_rows: bool| -> Vec<f64> {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for xx in 0..w {
                let (pos, len) = if along_rows { (xx, w) } else { (y, h) };
                let mut s = 0.0;
                let mut ws = 0.0;
                for (k, &gk) in g.iter().enumerate() {
                    let p = pos as isize + k as isize - r;
                    if p < 0 || p >= len as isize {
                        continue;
                    }
                    let idx = if along_rows { y * w + p as usize } else { p as usize * w + xx };
                    s += gk * src[idx];
                    ws += gk;
                }
                out[y * w + xx] = s / ws;
            }
        }
        out
    };
    pass(&pass(x, true), false)
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5), dynamic range
/// 1, averaged over channels. Windows are truncated and renormalized at the
/// image border, so any image size is accepted.
pub fn ssim<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    a.check_same_shape(b)?;
    let (h, w, _) = a.shape();
    let g = gaussian_1d();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (pa, pb) = (planes(a), planes(b));
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
        let (mx, my) = (blur(x, h, w, &g), blur(y, h, w, &g));
        let (sxx, syy, sxy) = (blur(&xx, h, w, &g), blur(&yy, h, w, &g), blur(&xy, h, w, &g));
        let mut s = 0.0;
        for i in 0..h * w {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            s += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += s / (h * w) as f64;
    }
    Ok(total / 3.0)
}

/// `10 log10(1 / MSE)`, evaluated as `-10 log10(MSE)`; identical images
/// give `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>) -> Result<f64> {
    let mse = crate::adaptation::mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Planar f64 image used by the SWD pyramid.
#[derive(Clone, Debug)]
struct Level {
    h: usize,
    w: usize,
    planes: Vec<Vec<f64>>,
}

impl Level {
    fn from_image<T: Scalar>(img: &ImageTensor<T>) -> Self {
        Self {
            h: img.height(),
            w: img.width(),
            planes: planes(img),
        }
    }

    fn downsample(&self) -> Self {
        let (h, w) = (self.h / 2, self.w / 2);
        let planes = self
            .planes
            .iter()
            .map(|p| {
                let mut out = vec![0.0; h * w];
                for y in 0..h {
                    for x in 0..w {
                        let i = 2 * y * self.w + 2 * x;
                        out[y * w + x] = 0.25 * (p[i] + p[i + 1] + p[i + self.w] + p[i + self.w + 1]);
                    }
                }
                out
            })
            .collect();
        Self { h, w, planes }
    }

    /// Normalized 7x7x3 patches at stride 4, channel-major within a patch.
    fn patches(&self) -> Vec<Vec<f64>> {
        if self.h < SWD_PATCH || self.w < SWD_PATCH {
            return Vec::new();
        }
        let mut out = Vec::new();
        for y0 in (0..=self.h - SWD_PATCH).step_by(SWD_STRIDE) {
            for x0 in (0..=self.w - SWD_PATCH).step_by(SWD_STRIDE) {
                let mut p = Vec::with_capacity(3 * SWD_PATCH * SWD_PATCH);
                for plane in &self.planes {
                    for y in y0..y0 + SWD_PATCH {
                        p.extend_from_slice(&plane[y * self.w + x0..y * self.w + x0 + SWD_PATCH]);
                    }
                }
                normalize_patch(&mut p);
                out.push(p);
            }
        }
        out
    }
}

pub fn normalize_patch(p: &mut [f64]) {
    let n = p.len() as f64;
    let m = p.iter().sum::<f64>() / n;
    let v = p.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let s = (v + SWD_VAR_EPS).sqrt();
    p.iter_mut().for_each(|x| *x = (*x - m) / s);
}

/// Seeded unit directions in patch space.
pub fn swd_directions(seed: u64) -> Vec<Vec<f64>> {
    let dim = 3 * SWD_PATCH * SWD_PATCH;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..SWD_DIRECTIONS)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Exact 1-D Wasserstein-1 distance between equal-size samples.
pub fn wasserstein_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Sliced Wasserstein distance between the patch distributions of two
/// images over a two-level pyramid, scaled by 1e3. Levels too small for a
/// single patch are skipped; the full-resolution level must have one.
pub fn swd<T: Scalar>(a: &ImageTensor<T>, b: &ImageTensor<T>, seed: u64) -> Result<f64> {
    a.check_same_shape(b)?;
    if a.height() < SWD_PATCH || a.width() < SWD_PATCH {
        return Err(invalid(format!(
            "images of {}x{} are smaller than one {SWD_PATCH}x{SWD_PATCH} patch",
            a.height(),
            a.width()
        )));
    }
    let dirs = swd_directions(seed);
    let (mut la, mut lb) = (Level::from_image(a), Level::from_image(b));
    let mut total = 0.0;
    let mut levels = 0;
    for level in 0..SWD_LEVELS {
        if level > 0 {
            la = la.downsample();
            lb = lb.downsample();
        }
        let (pa, pb) = (la.patches(), lb.patches());
        if pa.is_empty() {
            break;
        }
        let mut sum = 0.0;
        for d in &dirs {
            let mut xa: Vec<f64> = pa.iter().map(|p| dot(p, d)).collect();
            let mut xb: Vec<f64> = pb.iter().map(|p| dot(p, d)).collect();
            sum += wasserstein_1d(&mut xa, &mut xb);
        }
        total += sum / dirs.len() as f64;
        levels += 1;
    }
    Ok(SWD_SCALE * total / levels as f64)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Absolute differences of measured face factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorScores {
    /// Mean over hue, aspect and eye spacing.
    pub identity_error: f64,
    pub attribute_errors: BTreeMap<String, f64>,
}

pub fn factor_scores<T: Scalar>(input: &ImageTensor<T>, output: &ImageTensor<T>) -> Result<FactorScores> {
    input.check_same_shape(output)?;
    let (fa, fb) = (measure_factors(input), measure_factors(output));
    let (ia, ib) = (fa.identity(), fb.identity());
    let identity_error = ia.iter().zip(&ib).map(|(x, y)| (x - y).abs()).sum::<f64>() / 3.0;
    let attribute_errors = Attribute::ALL
        .iter()
        .map(|a| (a.name().to_string(), (a.value(&fa) - a.value(&fb)).abs()))
        .collect();
    Ok(FactorScores {
        identity_error,
        attribute_errors,
    })
}

/// The five benchmark variants in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Vanilla,
    LatentOpt,
    OneshotRandom,
    OneshotLatentOpt,
    OneshotEncoder,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Vanilla,
        Algorithm::LatentOpt,
        Algorithm::OneshotRandom,
        Algorithm::OneshotLatentOpt,
        Algorithm::OneshotEncoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Vanilla => "vanilla",
            Algorithm::LatentOpt => "latent_opt",
            Algorithm::OneshotRandom => "oneshot_random",
            Algorithm::OneshotLatentOpt => "oneshot_latent_opt",
            Algorithm::OneshotEncoder => "oneshot_encoder",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Algorithm::Vanilla => "Vanilla autoencoder",
            Algorithm::LatentOpt => "Only latent optimization",
            Algorithm::OneshotRandom => "One-shot + random projection",
            Algorithm::OneshotLatentOpt => "One-shot + latent optimization",
            Algorithm::OneshotEncoder => "One-shot + encoder projection",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn adapts(self) -> bool {
        !matches!(self, Algorithm::Vanilla | Algorithm::LatentOpt)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Serializes non-finite floats as the strings "inf", "-inf" and "nan".
pub mod inf_float {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("bad float {s:?}"))),
            },
        }
    }
}

/// One scored (algorithm, image, attribute, alpha) output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub attribute: Option<Attribute>,
    pub image_index: usize,
    #[serde(default)]
    pub alpha: Option<f64>,
    pub ssim: f64,
    #[serde(with = "inf_float")]
    pub psnr: f64,
    pub swd: f64,
    #[serde(default)]
    pub identity_error: Option<f64>,
    /// For edits: measured change of the edited attribute vs the input.
    #[serde(default)]
    pub attribute_change: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub algorithm: Algorithm,
    pub attribute: Option<Attribute>,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    #[serde(with = "inf_float")]
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub swd_mean: f64,
    pub swd_std: f64,
    pub n: usize,
    /// PSNR values excluded from the mean because they were infinite.
    pub psnr_inf_count: usize,
    pub identity_error_mean: Option<f64>,
    pub attribute_change_mean: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
    #[serde(default)]
    pub per_image: Option<Vec<MetricRecord>>,
    pub swd_scale: f64,
    /// Resolved configuration and code version of the producing run.
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

fn opt_mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| mean_std(&v).0)
}

/// Groups by (algorithm, attribute) in the fixed algorithm order.
pub fn aggregate(records: &[MetricRecord]) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(invalid("cannot aggregate an empty record set"));
    }
    let mut groups: BTreeMap<(Algorithm, Option<Attribute>), Vec<&MetricRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.algorithm, r.attribute)).or_default().push(r);
    }
    let rows = groups
        .into_iter()
        .map(|((algorithm, attribute), rs)| {
            let ssim: Vec<f64> = rs.iter().map(|r| r.ssim).collect();
            let swd: Vec<f64> = rs.iter().map(|r| r.swd).collect();
            let psnr: Vec<f64> = rs.iter().map(|r| r.psnr).filter(|v| v.is_finite()).collect();
            let psnr_inf_count = rs.len() - psnr.len();
            let (psnr_mean, psnr_std) = if psnr.is_empty() {
                (f64::INFINITY, 0.0)
            } else {
                mean_std(&psnr)
            };
            let (ssim_mean, ssim_std) = mean_std(&ssim);
            let (swd_mean, swd_std) = mean_std(&swd);
            ReportRow {
                algorithm,
                attribute,
                ssim_mean,
                ssim_std,
                psnr_mean,
                psnr_std,
                swd_mean,
                swd_std,
                n: rs.len(),
                psnr_inf_count,
                identity_error_mean: opt_mean(rs.iter().map(|r| r.identity_error)),
                attribute_change_mean: opt_mean(rs.iter().map(|r| r.attribute_change)),
            }
        })
        .collect();
    Ok(MetricsReport {
        rows,
        per_image: Some(records.to_vec()),
        swd_scale: SWD_SCALE,
        metadata: serde_json::Value::Null,
    })
}

impl MetricsReport {
    pub fn row(&self, algorithm: Algorithm, attribute: Option<Attribute>) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.algorithm == algorithm && r.attribute == attribute)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Aligned text table with "mean / std" cells to 3 decimals.
    pub fn to_table(&self) -> String {
        let has_attr = self.rows.iter().any(|r| r.attribute.is_some());
        let mut header = vec![];
        if has_attr {
            header.push("Attribute".to_string());
        }
        header.extend(["Algorithm", "SSIM ↑", "PSNR ↑", "SWD ↓"].map(String::from));
        let cell = |m: f64, s: f64| {
            if m.is_infinite() {
                "inf".to_string()
            } else {
                format!("{m:.3} / {s:.3}")
            }
        };
        let mut lines: Vec<Vec<String>> = vec![header];
        for r in &self.rows {
            let mut l = vec![];
            if has_attr {
                l.push(r.attribute.map(|a| a.name().to_string()).unwrap_or_default());
            }
            l.push(r.algorithm.label().to_string());
            l.push(cell(r.ssim_mean, r.ssim_std));
            l.push(cell(r.psnr_mean, r.psnr_std));
            l.push(cell(r.swd_mean, r.swd_std));
            lines.push(l);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap())
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l
                .iter()
                .zip(&widths)
                .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
                .collect();
            out.push_str(cells.join(" | ").trim_end());
            out.push('\n');
            if i == 0 {
                let sep: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
                out.push_str(&sep.join("-+-"));
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(alg: Algorithm, ssim: f64, psnr: f64) -> MetricRecord {
        MetricRecord {
            algorithm: alg,
            attribute: None,
            image_index: 0,
            alpha: None,
            ssim,
            psnr,
            swd: 1.0,
            identity_error: None,
            attribute_change: None,
        }
    }

    #[test]
    fn psnr_hand_values() {
        let a = ImageTensor::<f64>::constant(8, 8, 0.5);
        let b = ImageTensor::<f64>::constant(8, 8, 0.6);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn aggregate_population_std_and_order() {
        let rs = vec![
            rec(Algorithm::OneshotEncoder, 3.0, 10.0),
            rec(Algorithm::Vanilla, 1.0, f64::INFINITY),
            rec(Algorithm::OneshotEncoder, 1.0, 20.0),
            rec(Algorithm::Vanilla, 1.0, 5.0),
        ];
        let r = aggregate(&rs).unwrap();
        assert_eq!(r.rows[0].algorithm, Algorithm::Vanilla);
        assert_eq!(r.rows[0].psnr_inf_count, 1);
        assert_eq!(r.rows[0].psnr_mean, 5.0);
        assert_eq!(r.rows[1].ssim_mean, 2.0);
        assert_eq!(r.rows[1].ssim_std, 1.0);
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn inf_serializes_as_string() {
        let r = aggregate(&[rec(Algorithm::Vanilla, 1.0, f64::INFINITY)]).unwrap();
        let j = r.to_json().unwrap();
        assert!(j.contains("\"inf\""));
        let back = MetricsReport::from_json(&j).unwrap();
        assert_eq!(back.rows[0].psnr_mean, f64::INFINITY);
        assert!(r.to_table().contains("Vanilla autoencoder"));
    }

    #[test]
    fn swd_rejects_tiny_images() {
        let a = ImageTensor::<f64>::constant(6, 6, 0.5);
        assert!(swd(&a, &a, 0).is_err());
    }
}
