//! Recorruption: one noisy `y` becomes a pair `(y₁, y₂)` with
//! `y = (1 − α) y₁ + α y₂`, where `y₁` and `y₂` are independent given `x` and
//! both have mean `x`.
//!
//! | family   | auxiliary draw `ω`                  | `y₁`                  |
//! |----------|-------------------------------------|-----------------------|
//! | Gaussian | `N(0, σ²)`                          | `y + √(α/(1−α)) ω`    |
//! | Poisson  | `Bin(z, α)`, `z = y/γ`              | `(y − γω)/(1 − α)`    |
//! | Gamma    | `Beta(ℓα, ℓ(1 − α))`                | `y (1 − ω)/(1 − α)`   |
//! | Binomial | `HypGeo(ℓ, ℓα, z)`, `z = ℓ y`       | `(y − ω/ℓ)/(1 − α)`   |
//!
//! The law of `ω` only reads `y`, never `x`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Denoiser;
use crate::nef_models::NoiseModel;
use crate::oracles::enumerate_split_law;
use crate::sampling;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Two recorrupted measurements and the split parameter that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SplitPair<T: Scalar> {
    pub y1: ImageTensor<T>,
    pub y2: ImageTensor<T>,
    pub alpha: T,
}

impl<T: Scalar> SplitPair<T> {
    /// `(1 − α) y₁ + α y₂`.
    pub fn recombine(&self) -> ImageTensor<T> {
        let a = self.alpha;
        let b = T::one() - a;
        // Shapes agree by construction.
        self.y1
            .zip_map(&self.y2, |u, v| b * u + a * v)
            .unwrap_or_else(|_| unreachable!("split halves share a shape"))
    }
}

/// Split parameter and number of Monte-Carlo inference draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub alpha: f64,
    #[serde(default = "one")]
    pub mc_samples: usize,
}

fn one() -> usize {
    1
}

impl SplitConfig {
    pub fn new(alpha: f64, mc_samples: usize) -> Result<Self> {
        let cfg = Self { alpha, mc_samples };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn for_model<T: Scalar>(model: &NoiseModel<T>) -> Self {
        Self { alpha: model.default_alpha(), mc_samples: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.mc_samples == 0 {
            return Err(Error::invalid("mc_samples must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Number of successes `ℓα` in the Binomial split urn.
pub fn binomial_split_successes(looks: u32, alpha: f64) -> Result<u64> {
    let m = looks as f64 * alpha;
    let k = m.round();
    if (m - k).abs() > 1e-9 || k < 1.0 || k >= looks as f64 {
        return Err(Error::invalid(format!(
            "binomial split needs looks*alpha to be an integer in [1, looks), got {looks}*{alpha} = {m}"
        )));
    }
    Ok(k as u64)
}

/// Validates `(model, alpha)` before any split is drawn.
pub fn check_split_params<T: Scalar>(model: &NoiseModel<T>, alpha: f64) -> Result<()> {
    model.validate()?;
    check_alpha(alpha)?;
    if let NoiseModel::Binomial { looks } = *model {
        binomial_split_successes(looks, alpha)?;
    }
    Ok(())
}

/// Draws the auxiliary variable `ω` for every pixel of `y`.
pub fn draw_omega<T: Scalar, R: Rng + ?Sized>(
    model: &NoiseModel<T>,
    y: &ImageTensor<T>,
    alpha: f64,
    rng: &mut R,
) -> Result<ImageTensor<T>> {
    check_split_params(model, alpha)?;
    let counts = model.counts(y)?;
    let mut omega = Vec::with_capacity(y.len());
    match *model {
        NoiseModel::Gaussian { sigma } => {
            let s = sigma.as_f64();
            for _ in 0..y.len() {
                omega.push(s * sampling::standard_normal(rng));
            }
        }
        NoiseModel::Poisson { .. } => {
            for &z in counts.as_deref().unwrap_or_default() {
                omega.push(sampling::binomial(rng, z, alpha) as f64);
            }
        }
        NoiseModel::Gamma { looks } => {
            let l = looks as f64;
            for _ in 0..y.len() {
                omega.push(sampling::beta(rng, l * alpha, l * (1.0 - alpha)));
            }
        }
        NoiseModel::Binomial { looks } => {
            let m = binomial_split_successes(looks, alpha)?;
            for &z in counts.as_deref().unwrap_or_default() {
                omega.push(sampling::hypergeometric(rng, looks as u64, m, z) as f64);
            }
        }
    }
    ImageTensor::new(omega.into_iter().map(T::lit).collect(), y.shape())
}

/// Builds the pair from an explicit `ω` (counts for the discrete families).
///
/// Discrete families are computed from integer counts, `y₁ = γ(z − ω)/(1 − α)`
/// and `y₂ = γω/α` (Poisson), so the halves are exact lattice values up to one
/// rounding. Continuous families compute `y₂` from the recombination formula.
pub fn split_from_omega<T: Scalar>(
    model: &NoiseModel<T>,
    y: &ImageTensor<T>,
    alpha: f64,
    omega: &ImageTensor<T>,
) -> Result<SplitPair<T>> {
    check_split_params(model, alpha)?;
    y.ensure_same_shape(omega)?;
    let a = T::lit(alpha);
    let b = T::one() - a;
    let (y1, y2): (Vec<T>, Vec<T>) = match *model {
        NoiseModel::Gaussian { .. } => {
            let s = T::lit((alpha / (1.0 - alpha)).sqrt());
            y.iter()
                .zip(omega.iter())
                .map(|(&yi, &w)| {
                    let y1 = yi + s * w;
                    (y1, (yi - b * y1) / a)
                })
                .unzip()
        }
        NoiseModel::Gamma { .. } => y
            .iter()
            .zip(omega.iter())
            .enumerate()
            .map(|(i, (&yi, &w))| {
                if !(w >= T::zero() && w <= T::one()) {
                    return Err(Error::Domain { index: i, value: w.as_f64(), reason: "beta draw outside [0, 1]" });
                }
                Ok((yi * (T::one() - w) / b, yi * w / a))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip(),
        NoiseModel::Poisson { gain } => {
            let counts = model.counts(y)?.unwrap_or_default();
            discrete_halves(&counts, omega, |c| gain * c, a, b)?
        }
        NoiseModel::Binomial { looks } => {
            let counts = model.counts(y)?.unwrap_or_default();
            let l = T::lit(looks as f64);
            discrete_halves(&counts, omega, |c| c / l, a, b)?
        }
    };
    Ok(SplitPair {
        y1: ImageTensor::new(y1, y.shape())?,
        y2: ImageTensor::new(y2, y.shape())?,
        alpha: a,
    })
}

fn discrete_halves<T: Scalar>(
    counts: &[u64],
    omega: &ImageTensor<T>,
    unit: impl Fn(T) -> T,
    a: T,
    b: T,
) -> Result<(Vec<T>, Vec<T>)> {
    let mut y1 = Vec::with_capacity(counts.len());
    let mut y2 = Vec::with_capacity(counts.len());
    for (i, (&z, &w)) in counts.iter().zip(omega.iter()).enumerate() {
        let wf = w.as_f64();
        if wf < 0.0 || wf.fract() != 0.0 || wf > z as f64 {
            return Err(Error::Domain { index: i, value: wf, reason: "omega must be an integer in [0, z]" });
        }
        let rest = T::lit((z - wf as u64) as f64);
        y1.push(unit(rest) / b);
        y2.push(unit(w) / a);
    }
    Ok((y1, y2))
}

/// Splits `y` into `(y₁, y₂)`.
pub fn split<T: Scalar, R: Rng + ?Sized>(
    model: &NoiseModel<T>,
    y: &ImageTensor<T>,
    alpha: f64,
    rng: &mut R,
) -> Result<SplitPair<T>> {
    let omega = draw_omega(model, y, alpha, rng)?;
    split_from_omega(model, y, alpha, &omega)
}

/// Splits only the pixels where `observed` is set; the others are zero in both
/// halves.
pub fn split_masked<T: Scalar, R: Rng + ?Sized>(
    model: &NoiseModel<T>,
    y: &ImageTensor<T>,
    observed: &[bool],
    alpha: f64,
    rng: &mut R,
) -> Result<SplitPair<T>> {
    if observed.len() != y.len() {
        return Err(Error::shape(y.len(), observed.len()));
    }
    let idx: Vec<usize> = (0..y.len()).filter(|&i| observed[i]).collect();
    let sub = ImageTensor::from_vec(idx.iter().map(|&i| y[i]).collect());
    let pair = split(model, &sub, alpha, rng)?;
    let mut y1 = ImageTensor::zeros(y.shape());
    let mut y2 = ImageTensor::zeros(y.shape());
    for (k, &i) in idx.iter().enumerate() {
        y1[i] = pair.y1[k];
        y2[i] = pair.y2[k];
    }
    Ok(SplitPair { y1, y2, alpha: pair.alpha })
}

/// Exact conditional moments of a scalar split given `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMoments {
    pub mean1: f64,
    pub var1: f64,
    pub mean2: f64,
    pub var2: f64,
    pub cov12: f64,
}

/// Moments of `(y₁, y₂) | x` by enumerating the joint split law.
///
/// Only the discrete families are enumerable.
pub fn split_statistics_exact<T: Scalar>(
    model: &NoiseModel<T>,
    x: f64,
    alpha: f64,
    tail_eps: f64,
) -> Result<SplitMoments> {
    let grid = enumerate_split_law(model, x, alpha, tail_eps)?;
    // Normalize by the retained mass so truncation does not bias the moments.
    let mass = grid.total_probability();
    let e = |f: &dyn Fn(f64, f64) -> f64| -> f64 {
        grid.atoms.iter().map(|a| a.p * f(a.y1, a.y2)).sum::<f64>() / mass
    };
    let mean1 = e(&|u, _| u);
    let mean2 = e(&|_, v| v);
    let var1 = e(&|u, _| (u - mean1).powi(2));
    let var2 = e(&|_, v| (v - mean2).powi(2));
    let cov12 = e(&|u, v| (u - mean1) * (v - mean2));
    Ok(SplitMoments { mean1, var1, mean2, var2, cov12 })
}

/// Signal-to-noise ratio `‖E z‖² / E‖z − E z‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    pub ratio: f64,
    /// Set when the total variance is zero; `ratio` is then `+∞`.
    pub infinite: bool,
}

pub fn snr<T: Scalar>(mean: &ImageTensor<T>, var: &ImageTensor<T>) -> Result<Snr> {
    mean.ensure_same_shape(var)?;
    if let Some((i, v)) = var.iter().enumerate().find(|(_, v)| !(v.as_f64() >= 0.0)) {
        return Err(Error::Domain { index: i, value: v.as_f64(), reason: "variance must be nonnegative" });
    }
    let signal = mean.norm_sq().as_f64();
    if signal == 0.0 {
        return Err(Error::invalid("signal-to-noise ratio needs a nonzero mean"));
    }
    let noise = var.sum().as_f64();
    if noise == 0.0 {
        return Ok(Snr { ratio: f64::INFINITY, infinite: true });
    }
    Ok(Snr { ratio: signal / noise, infinite: false })
}

/// `(1/J) Σⱼ f(y₁⁽ʲ⁾)` over `J` independent splits of `y`.
///
/// Draws are consumed sequentially from `rng` and summed in draw order.
pub fn mc_inference<T, F, R>(
    f: &F,
    model: &NoiseModel<T>,
    y: &ImageTensor<T>,
    alpha: f64,
    samples: usize,
    rng: &mut R,
) -> Result<ImageTensor<T>>
where
    T: Scalar,
    F: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    if samples == 0 {
        return Err(Error::invalid("mc_inference needs at least one sample"));
    }
    let mut acc = ImageTensor::zeros(y.shape());
    for _ in 0..samples {
        let pair = split(model, y, alpha, rng)?;
        let out = f.apply(&pair.y1)?;
        acc = acc.add(&out)?;
    }
    Ok(acc.scale(T::one() / T::from_count(samples)))
}
