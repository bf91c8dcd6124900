//! Brute-force reference implementations of the image metrics, written
//! independently of `alae_core::metrics` (direct window sums, CDF-integral
//! Wasserstein distance).

use alae_core::image::ImageTensor;
use alae_core::metrics::{self, swd_directions};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random_image(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor<f64> {
    ImageTensor::from_fn(size, size, |_, _, _| rng.random::<f64>())
}

pub fn smooth_image(rng: &mut ChaCha8Rng, size: usize) -> ImageTensor<f64> {
    let (a, b, c): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    ImageTensor::from_fn(size, size, |y, x, ch| {
        let t = (a * 6.0 * y as f64 / size as f64 + b * 4.0 * x as f64 / size as f64 + c * ch as f64).sin();
        0.5 + 0.4 * t
    })
}

fn px(img: &ImageTensor<f64>, y: usize, x: usize, c: usize) -> f64 {
    img.get(y, x, c)
}

/// Direct 2-D evaluation of every local window, weights renormalized over
/// in-bounds pixels.
pub fn brute_ssim(a: &ImageTensor<f64>, b: &ImageTensor<f64>) -> f64 {
    let (h, w, _) = a.shape();
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let mut acc = 0.0;
        for y in 0..h as isize {
            for x in 0..w as isize {
                let (mut sw, mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5isize..=5 {
                    for dx in -5isize..=5 {
                        let (yy, xx) = (y + dy, x + dx);
                        if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                            continue;
                        }
                        let g = (-((dy * dy + dx * dx) as f64) / (2.0 * 1.5 * 1.5)).exp();
                        let (p, q) = (px(a, yy as usize, xx as usize, c), px(b, yy as usize, xx as usize, c));
                        sw += g;
                        sx += g * p;
                        sy += g * q;
                        sxx += g * p * p;
                        syy += g * q * q;
                        sxy += g * p * q;
                    }
                }
                let (mx, my) = (sx / sw, sy / sw);
                let vx = sxx / sw - mx * mx;
                let vy = syy / sw - my * my;
                let cv = sxy / sw - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cv + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += acc / (h * w) as f64;
    }
    total / 3.0
}

pub fn brute_psnr(a: &ImageTensor<f64>, b: &ImageTensor<f64>) -> f64 {
    let (h, w, _) = a.shape();
    let mut se = 0.0;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                se += (px(a, y, x, c) - px(b, y, x, c)).powi(2);
            }
        }
    }
    let mse = se / (h * w * 3) as f64;
    -10.0 * mse.log10()
}

fn brute_patches(img: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    // img[c][y][x]
    let h = img[0].len();
    let w = img[0][0].len();
    let mut out = Vec::new();
    let mut y0 = 0;
    while y0 + 7 <= h {
        let mut x0 = 0;
        while x0 + 7 <= w {
            let mut p = Vec::new();
            for plane in img {
                for row in &plane[y0..y0 + 7] {
                    p.extend_from_slice(&row[x0..x0 + 7]);
                }
            }
            let m = p.iter().sum::<f64>() / p.len() as f64;
            let v = p.iter().map(|q| (q - m) * (q - m)).sum::<f64>() / p.len() as f64;
            let s = (v + metrics::SWD_VAR_EPS).sqrt();
            out.push(p.iter().map(|q| (q - m) / s).collect());
            x0 += 4;
        }
        y0 += 4;
    }
    out
}

fn planes(img: &ImageTensor<f64>) -> Vec<Vec<Vec<f64>>> {
    let (h, w, _) = img.shape();
    (0..3)
        .map(|c| (0..h).map(|y| (0..w).map(|x| px(img, y, x, c)).collect()).collect())
        .collect()
}

fn half(img: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    img.iter()
        .map(|p| {
            (0..p.len() / 2)
                .map(|y| {
                    (0..p[0].len() / 2)
                        .map(|x| (p[2 * y][2 * x] + p[2 * y][2 * x + 1] + p[2 * y + 1][2 * x] + p[2 * y + 1][2 * x + 1]) / 4.0)
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// W1 as the integral of |F_a - F_b| over the merged support.
pub fn w1_by_cdf(a: &[f64], b: &[f64]) -> f64 {
    let mut pts: Vec<(f64, f64)> = a
        .iter()
        .map(|&v| (v, 1.0 / a.len() as f64))
        .chain(b.iter().map(|&v| (v, -1.0 / b.len() as f64)))
        .collect();
    pts.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
    let mut diff = 0.0;
    let mut total = 0.0;
    for i in 0..pts.len() - 1 {
        diff += pts[i].1;
        total += diff.abs() * (pts[i + 1].0 - pts[i].0);
    }
    total
}

pub fn brute_swd(a: &ImageTensor<f64>, b: &ImageTensor<f64>, seed: u64) -> f64 {
    let dirs = swd_directions(seed);
    let (mut pa, mut pb) = (planes(a), planes(b));
    let mut sum = 0.0;
    let mut levels = 0;
    for level in 0..2 {
        if level == 1 {
            pa = half(&pa);
            pb = half(&pb);
        }
        let (xa, xb) = (brute_patches(&pa), brute_patches(&pb));
        if xa.is_empty() {
            break;
        }
        let mut lvl = 0.0;
        for d in &dirs {
            let proj = |ps: &Vec<Vec<f64>>| -> Vec<f64> {
                ps.iter().map(|p| p.iter().zip(d).map(|(x, y)| x * y).sum()).collect()
            };
            lvl += w1_by_cdf(&proj(&xa), &proj(&xb));
        }
        sum += lvl / dirs.len() as f64;
        levels += 1;
    }
    1e3 * sum / levels as f64
}
