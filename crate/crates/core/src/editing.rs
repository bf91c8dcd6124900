//! Attribute hyperplanes in latent space and linear traversal `w + alpha * N`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, invalid, Result};
use crate::image::ImageTensor;
use crate::latent::LatentCode;
use crate::model::GenerativeAutoencoder;
use crate::scalar::{lit, Scalar};

/// Unit hyperplane normal separating an attribute's two classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeDirection {
    pub name: String,
    pub normal: Vec<f64>,
    /// Signed distance of `w` to the hyperplane is `normal . w + bias`.
    pub bias: f64,
    pub train_accuracy: f64,
    pub d_w: usize,
    /// Standard deviation of the training latents projected on `normal`;
    /// edit strengths given "in std units" are multiplied by this.
    #[serde(default = "one")]
    pub latent_std: f64,
}

fn one() -> f64 {
    1.0
}

impl AttributeDirection {
    pub fn new(name: impl Into<String>, normal: Vec<f64>, bias: f64) -> Result<Self> {
        let n = norm(&normal);
        if !(n > 0.0 && n.is_finite()) {
            return Err(invalid("direction normal must be finite and nonzero"));
        }
        let d_w = normal.len();
        Ok(Self {
            name: name.into(),
            normal: normal.iter().map(|v| v / n).collect(),
            bias,
            train_accuracy: 0.0,
            d_w,
            latent_std: 1.0,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.normal.len() != self.d_w {
            return Err(dim_err(format!("normal has {} entries, d_w is {}", self.normal.len(), self.d_w)));
        }
        if (norm(&self.normal) - 1.0).abs() > 1e-6 {
            return Err(invalid("direction normal is not unit length"));
        }
        if !(0.0..=1.0).contains(&self.train_accuracy) {
            return Err(invalid("train_accuracy outside [0, 1]"));
        }
        if !(self.latent_std > 0.0 && self.latent_std.is_finite()) {
            return Err(invalid("latent_std must be positive"));
        }
        Ok(())
    }

    pub fn signed_distance<T: Scalar>(&self, w: &LatentCode<T>) -> f64 {
        dot(&self.normal, &w.to_f64_vec()) + self.bias
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: Self = serde_json::from_str(s)?;
        d.validate()?;
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const RIDGE: f64 = 1e-3;
const NEWTON_ITERS: usize = 50;

/// Fits an L2-regularized logistic regression on standardized latents and
/// maps its hyperplane back to latent coordinates.
pub fn fit_direction<T: Scalar>(
    latents: &[LatentCode<T>],
    labels: &[bool],
    name: &str,
) -> Result<AttributeDirection> {
    if latents.len() != labels.len() {
        return Err(dim_err(format!("{} latents but {} labels", latents.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos < 2 || neg < 2 {
        return Err(invalid(format!(
            "need at least 2 samples per class, got {pos} positive and {neg} negative"
        )));
    }
    let d = latents[0].len();
    for w in latents {
        w.check_dim(d)?;
    }
    let n = latents.len();
    let xs: Vec<Vec<f64>> = latents.iter().map(|w| w.to_f64_vec()).collect();
    let mean: Vec<f64> = (0..d).map(|j| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
    let scale: Vec<f64> = (0..d)
        .map(|j| {
            let v = xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    // Standardized design with a trailing intercept column.
    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let mut r: Vec<f64> = (0..d).map(|j| (x[j] - mean[j]) / scale[j]).collect();
            r.push(1.0);
            r
        })
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let p = d + 1;
    let mut beta = vec![0.0; p];
    for _ in 0..NEWTON_ITERS {
        let mut grad = vec![0.0; p];
        let mut hess = vec![0.0; p * p];
        for (zi, &yi) in z.iter().zip(&y) {
            let s = 1.0 / (1.0 + (-dot(zi, &beta)).exp());
            let r = s - yi;
            let wgt = (s * (1.0 - s)).max(1e-12);
            for a in 0..p {
                grad[a] += r * zi[a];
                let za = wgt * zi[a];
                for b in 0..=a {
                    hess[a * p + b] += za * zi[b];
                }
            }
        }
        for a in 0..d {
            grad[a] += RIDGE * n as f64 * beta[a];
            hess[a * p + a] += RIDGE * n as f64;
        }
        hess[(p - 1) * p + (p - 1)] += 1e-9;
        for a in 0..p {
            for b in 0..a {
                hess[b * p + a] = hess[a * p + b];
            }
        }
        let step = cholesky_solve(&mut hess, &grad, p)?;
        let mut moved = 0.0f64;
        for (b, s) in beta.iter_mut().zip(&step) {
            *b -= s;
            moved = moved.max(s.abs());
        }
        if moved < 1e-10 {
            break;
        }
    }

    // Back to latent coordinates: decision = sum_j beta_j (x_j - mu_j) / s_j + beta_d.
    let raw: Vec<f64> = (0..d).map(|j| beta[j] / scale[j]).collect();
    let raw_bias = beta[d] - (0..d).map(|j| raw[j] * mean[j]).sum::<f64>();
    let nrm = norm(&raw);
    if !(nrm > 0.0 && nrm.is_finite()) {
        return Err(invalid("classifier produced a degenerate normal"));
    }
    let mut normal: Vec<f64> = raw.iter().map(|v| v / nrm).collect();
    let mut bias = raw_bias / nrm;
    let dist: Vec<f64> = xs.iter().map(|x| dot(&normal, x) + bias).collect();
    let mean_pos = dist.iter().zip(labels).filter(|(_, &l)| l).map(|(v, _)| v).sum::<f64>() / pos as f64;
    let mean_neg = dist.iter().zip(labels).filter(|(_, &l)| !l).map(|(v, _)| v).sum::<f64>() / neg as f64;
    let flip = mean_pos < mean_neg;
    if flip {
        normal.iter_mut().for_each(|v| *v = -*v);
        bias = -bias;
    }
    let sign = if flip { -1.0 } else { 1.0 };
    let correct = dist.iter().zip(labels).filter(|(&v, &l)| (sign * v > 0.0) == l).count();
    let proj: Vec<f64> = xs.iter().map(|x| dot(&normal, x)).collect();
    let pm = proj.iter().sum::<f64>() / n as f64;
    let pstd = (proj.iter().map(|v| (v - pm).powi(2)).sum::<f64>() / n as f64).sqrt();
    Ok(AttributeDirection {
        name: name.to_string(),
        normal,
        bias,
        train_accuracy: correct as f64 / n as f64,
        d_w: d,
        latent_std: if pstd > 1e-12 { pstd } else { 1.0 },
    })
}

/// Solves `A x = b` for symmetric positive definite `A` (overwritten).
fn cholesky_solve(a: &mut [f64], b: &[f64], n: usize) -> Result<Vec<f64>> {
    for j in 0..n {
        let mut s = a[j * n + j];
        for k in 0..j {
            s -= a[j * n + k] * a[j * n + k];
        }
        if s <= 0.0 || !s.is_finite() {
            return Err(invalid("logistic regression Hessian is not positive definite"));
        }
        let l = s.sqrt();
        a[j * n + j] = l;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / l;
        }
    }
    let mut y = b.to_vec();
    for i in 0..n {
        for k in 0..i {
            y[i] -= a[i * n + k] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            y[i] -= a[k * n + i] * y[k];
        }
        y[i] /= a[i * n + i];
    }
    Ok(y)
}

/// `w + alpha * normal`.
pub fn edit_latent<T: Scalar>(w: &LatentCode<T>, direction: &AttributeDirection, alpha: f64) -> Result<LatentCode<T>> {
    w.check_dim(direction.normal.len())?;
    if !alpha.is_finite() {
        return Err(invalid("alpha must be finite"));
    }
    if alpha == 0.0 {
        return Ok(w.clone());
    }
    let values = w
        .values()
        .iter()
        .zip(&direction.normal)
        .map(|(&v, &n)| v + lit::<T>(alpha * n))
        .collect();
    LatentCode::new(values)
}

/// As [`edit_latent`] with `alpha` in units of the direction's latent std.
pub fn edit_latent_scaled<T: Scalar>(
    w: &LatentCode<T>,
    direction: &AttributeDirection,
    alpha_std: f64,
) -> Result<LatentCode<T>> {
    edit_latent(w, direction, alpha_std * direction.latent_std)
}

#[derive(Clone, Debug)]
pub struct EditTrajectory<T> {
    pub base_latent: LatentCode<T>,
    pub direction: AttributeDirection,
    /// Sorted edit strengths in latent-std units.
    pub alphas: Vec<f64>,
    pub images: Vec<ImageTensor<T>>,
}

impl<T> EditTrajectory<T> {
    pub fn zero_index(&self) -> usize {
        self.alphas.iter().position(|&a| a == 0.0).expect("trajectory contains alpha 0")
    }
}

/// Decodes `w` moved along `direction` by each alpha (latent-std units).
/// Alphas are sorted and 0 is added when absent.
pub fn make_trajectory<T: Scalar>(
    model: &GenerativeAutoencoder<T>,
    w: &LatentCode<T>,
    direction: &AttributeDirection,
    alphas: &[f64],
) -> Result<EditTrajectory<T>> {
    if alphas.is_empty() {
        return Err(invalid("alphas must be nonempty"));
    }
    if alphas.iter().any(|a| !a.is_finite()) {
        return Err(invalid("alphas must be finite"));
    }
    let mut sorted = alphas.to_vec();
    if !sorted.contains(&0.0) {
        sorted.push(0.0);
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    let images = sorted
        .iter()
        .map(|&a| model.decode(&edit_latent_scaled(w, direction, a)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(EditTrajectory {
        base_latent: w.clone(),
        direction: direction.clone(),
        alphas: sorted,
        images,
    })
}
