//! The four noise families, their samplers, moments and exponential-family
//! decomposition `p(y | x) = h(y) exp(y·η(x) − φ(x))`.
//!
//! Every family is parameterized so that `E[y | x] = x`:
//!
//! | family   | observation                       | variance      |
//! |----------|-----------------------------------|---------------|
//! | Gaussian | `y ~ N(x, σ²)`                    | `σ²`          |
//! | Poisson  | `y = γ z`, `z ~ P(x / γ)`          | `γ x`         |
//! | Gamma    | `y ~ G(shape ℓ, rate ℓ / x)`      | `x² / ℓ`      |
//! | Binomial | `y = z / ℓ`, `z ~ Bin(ℓ, x)`       | `x (1 − x)/ℓ` |
//!
//! The normalizer `h` is never evaluated. Losses only depend on `η` and `φ`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling;
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

/// Mean parameters closer than this to a singular boundary are rejected by
/// [`NoiseModel::eta_phi`] and [`NoiseModel::family_nll`].
pub const DOMAIN_MARGIN: f64 = 1e-12;

/// Absolute tolerance when snapping an observation to its count lattice.
pub const LATTICE_TOL: f64 = 1e-9;

/// A noise family together with its parameter.
///
/// Serializes as `{"family": "poisson", "params": {"gain": 1.0}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "lowercase", bound = "")]
pub enum NoiseModel<T: Scalar> {
    Gaussian {
        sigma: T,
    },
    Poisson {
        #[serde(alias = "gamma_gain")]
        gain: T,
    },
    Gamma {
        looks: u32,
    },
    Binomial {
        looks: u32,
    },
}

/// Family tag without parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Gaussian,
    Poisson,
    Gamma,
    Binomial,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Gaussian => "gaussian",
            Family::Poisson => "poisson",
            Family::Gamma => "gamma",
            Family::Binomial => "binomial",
        };
        f.write_str(s)
    }
}

impl<T: Scalar> NoiseModel<T> {
    pub fn gaussian(sigma: T) -> Result<Self> {
        Self::Gaussian { sigma }.validated()
    }

    pub fn poisson(gain: T) -> Result<Self> {
        Self::Poisson { gain }.validated()
    }

    pub fn gamma(looks: u32) -> Result<Self> {
        Self::Gamma { looks }.validated()
    }

    pub fn binomial(looks: u32) -> Result<Self> {
        Self::Binomial { looks }.validated()
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    /// Checks the parameter constraints (`σ, γ > 0`, `ℓ ≥ 1`).
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { sigma } if !(sigma > T::zero() && sigma.is_finite()) => {
                Err(Error::invalid(format!("gaussian sigma must be positive, got {sigma}")))
            }
            NoiseModel::Poisson { gain } if !(gain > T::zero() && gain.is_finite()) => {
                Err(Error::invalid(format!("poisson gain must be positive, got {gain}")))
            }
            NoiseModel::Gamma { looks: 0 } | NoiseModel::Binomial { looks: 0 } => {
                Err(Error::invalid("number of looks must be at least 1"))
            }
            _ => Ok(()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            NoiseModel::Gaussian { .. } => Family::Gaussian,
            NoiseModel::Poisson { .. } => Family::Poisson,
            NoiseModel::Gamma { .. } => Family::Gamma,
            NoiseModel::Binomial { .. } => Family::Binomial,
        }
    }

    /// Whether the split law can be enumerated exactly.
    pub fn is_discrete(&self) -> bool {
        matches!(self, NoiseModel::Poisson { .. } | NoiseModel::Binomial { .. })
    }

    /// Split parameter used when none is configured.
    pub fn default_alpha(&self) -> f64 {
        match self {
            NoiseModel::Gaussian { .. } => 0.5,
            NoiseModel::Poisson { .. } => 0.15,
            NoiseModel::Gamma { .. } => 0.2,
            NoiseModel::Binomial { looks } => {
                // Smallest admissible α that is not below 0.1.
                let l = *looks as f64;
                ((0.1 * l).ceil().max(1.0) / l).min(0.5)
            }
        }
    }

    /// Converts the model to another scalar type.
    pub fn cast<U: Scalar>(&self) -> NoiseModel<U> {
        match *self {
            NoiseModel::Gaussian { sigma } => NoiseModel::Gaussian { sigma: U::lit(sigma.as_f64()) },
            NoiseModel::Poisson { gain } => NoiseModel::Poisson { gain: U::lit(gain.as_f64()) },
            NoiseModel::Gamma { looks } => NoiseModel::Gamma { looks },
            NoiseModel::Binomial { looks } => NoiseModel::Binomial { looks },
        }
    }

    /// Checks that `x` may be used as the mean of a draw.
    ///
    /// Poisson accepts `x = 0` and Binomial accepts `x ∈ {0, 1}`; those draws are
    /// degenerate but well defined.
    pub fn check_mean(&self, index: usize, x: f64) -> Result<()> {
        let reason = match self {
            _ if !x.is_finite() => Some("mean must be finite"),
            NoiseModel::Gaussian { .. } => None,
            NoiseModel::Poisson { .. } if x < 0.0 => Some("poisson mean must be nonnegative"),
            NoiseModel::Gamma { .. } if x <= 0.0 => Some("gamma mean must be positive"),
            NoiseModel::Binomial { .. } if !(0.0..=1.0).contains(&x) => {
                Some("binomial mean must lie in [0, 1]")
            }
            _ => None,
        };
        match reason {
            Some(reason) => Err(Error::Domain { index, value: x, reason }),
            None => Ok(()),
        }
    }

    /// Checks that `v` lies strictly inside the mean domain, where `η` and `φ`
    /// are finite.
    pub fn check_interior(&self, index: usize, v: f64) -> Result<()> {
        let reason = match self {
            _ if !v.is_finite() => Some("mean must be finite"),
            NoiseModel::Gaussian { .. } => None,
            NoiseModel::Poisson { .. } | NoiseModel::Gamma { .. } if v < DOMAIN_MARGIN => {
                Some("mean must be positive")
            }
            NoiseModel::Binomial { .. } if !(DOMAIN_MARGIN..=1.0 - DOMAIN_MARGIN).contains(&v) => {
                Some("mean must lie strictly inside (0, 1)")
            }
            _ => None,
        };
        match reason {
            Some(reason) => Err(Error::Domain { index, value: v, reason }),
            None => Ok(()),
        }
    }

    /// Validates one observed value and returns its count for the discrete
    /// families (`y / γ` or `ℓ y`).
    pub fn check_observation(&self, index: usize, y: f64) -> Result<Option<u64>> {
        if !y.is_finite() {
            return Err(Error::Domain { index, value: y, reason: "observation must be finite" });
        }
        match *self {
            NoiseModel::Gaussian { .. } => Ok(None),
            NoiseModel::Gamma { .. } => {
                if y > 0.0 {
                    Ok(None)
                } else {
                    Err(Error::Domain { index, value: y, reason: "gamma observation must be positive" })
                }
            }
            NoiseModel::Poisson { gain } => {
                let gain = gain.as_f64();
                let z = y / gain;
                let k = z.round();
                if k < 0.0 || (z - k).abs() > lattice_tol::<T>(k) {
                    return Err(Error::Lattice { index, value: y, gain });
                }
                Ok(Some(k as u64))
            }
            NoiseModel::Binomial { looks } => {
                let z = y * looks as f64;
                let k = z.round();
                if k < 0.0 || k > looks as f64 || (z - k).abs() > lattice_tol::<T>(k) {
                    return Err(Error::Domain {
                        index,
                        value: y,
                        reason: "binomial observation must be k/looks with 0 <= k <= looks",
                    });
                }
                Ok(Some(k as u64))
            }
        }
    }

    /// Counts of a discrete observation; `None` for continuous families.
    pub fn counts(&self, y: &ImageTensor<T>) -> Result<Option<Vec<u64>>> {
        if !self.is_discrete() {
            for (i, v) in y.iter().enumerate() {
                self.check_observation(i, v.as_f64())?;
            }
            return Ok(None);
        }
        y.iter()
            .enumerate()
            .map(|(i, v)| self.check_observation(i, v.as_f64()).map(|c| c.unwrap_or(0)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    /// Draws `y` with `E[y | x] = x` elementwise.
    pub fn sample_noisy<R: Rng + ?Sized>(
        &self,
        x: &ImageTensor<T>,
        rng: &mut R,
    ) -> Result<ImageTensor<T>> {
        self.validate()?;
        for (i, v) in x.iter().enumerate() {
            self.check_mean(i, v.as_f64())?;
        }
        let mut out = Vec::with_capacity(x.len());
        for v in x.iter() {
            out.push(T::lit(self.sample_scalar(v.as_f64(), rng)));
        }
        ImageTensor::new(out, x.shape())
    }

    /// One draw with mean `x`; `x` must already be validated.
    pub fn sample_scalar<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => x + sigma.as_f64() * sampling::standard_normal(rng),
            NoiseModel::Poisson { gain } => {
                let gain = gain.as_f64();
                gain * sampling::poisson(rng, x / gain) as f64
            }
            NoiseModel::Gamma { looks } => {
                let l = looks as f64;
                sampling::gamma(rng, l) * x / l
            }
            NoiseModel::Binomial { looks } => {
                sampling::binomial(rng, looks as u64, x) as f64 / looks as f64
            }
        }
    }

    /// Conditional variance of `y` given mean `x`.
    pub fn variance_at(&self, x: f64) -> f64 {
        match *self {
            NoiseModel::Gaussian { sigma } => sigma.as_f64().powi(2),
            NoiseModel::Poisson { gain } => gain.as_f64() * x,
            NoiseModel::Gamma { looks } => x * x / looks as f64,
            NoiseModel::Binomial { looks } => x * (1.0 - x) / looks as f64,
        }
    }

    /// Elementwise conditional mean (which is `x` itself) and variance.
    pub fn mean_variance(&self, x: &ImageTensor<T>) -> Result<(ImageTensor<T>, ImageTensor<T>)> {
        self.validate()?;
        for (i, v) in x.iter().enumerate() {
            self.check_mean(i, v.as_f64())?;
        }
        let var = x.map(|v| T::lit(self.variance_at(v.as_f64())));
        Ok((x.clone(), var))
    }

    /// `(η(v), φ(v))` for a single interior mean.
    ///
    /// Poisson values are per unit of intensity (`η = log(v)/γ`, `φ = v/γ`) and
    /// Binomial values refer to the scaled observation `y ∈ [0, 1]`
    /// (`η = ℓ logit v`, `φ = −ℓ log(1 − v)`), so that `φ(v) − y η(v)` is the
    /// negative log-density of the observation `y` in both cases.
    pub fn eta_phi_scalar(&self, v: T) -> (T, T) {
        let one = T::one();
        match *self {
            NoiseModel::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (v / s2, v * v / (T::lit(2.0) * s2))
            }
            NoiseModel::Poisson { gain } => (v.ln() / gain, v / gain),
            NoiseModel::Gamma { looks } => {
                let l = T::lit(looks as f64);
                (-l / v, l * v.ln())
            }
            NoiseModel::Binomial { looks } => {
                let l = T::lit(looks as f64);
                (l * (v / (one - v)).ln(), -l * (one - v).ln())
            }
        }
    }

    /// Elementwise `(η(v), φ(v))`.
    pub fn eta_phi(&self, v: &ImageTensor<T>) -> Result<(ImageTensor<T>, ImageTensor<T>)> {
        self.validate()?;
        for (i, x) in v.iter().enumerate() {
            self.check_interior(i, x.as_f64())?;
        }
        let pairs: Vec<(T, T)> = v.iter().map(|&x| self.eta_phi_scalar(x)).collect();
        let eta = ImageTensor::new(pairs.iter().map(|p| p.0).collect(), v.shape())?;
        let phi = ImageTensor::new(pairs.iter().map(|p| p.1).collect(), v.shape())?;
        Ok((eta, phi))
    }

    /// `Σ φ(vᵢ) − yᵢ η(vᵢ)`: the negative log-density of `y` at mean `v`
    /// without the `v`-independent term `−log h(y)`.
    pub fn family_nll(&self, y: &ImageTensor<T>, v: &ImageTensor<T>) -> Result<T> {
        y.ensure_same_shape(v)?;
        let (eta, phi) = self.eta_phi(v)?;
        let mut total = T::zero();
        for i in 0..y.len() {
            total += phi[i] - y[i] * eta[i];
        }
        Ok(total)
    }
}

fn lattice_tol<T: Scalar>(k: f64) -> f64 {
    // Single-precision data cannot resolve 1e-9 on large counts.
    LATTICE_TOL.max(4.0 * T::epsilon().as_f64() * k.abs().max(1.0))
}
