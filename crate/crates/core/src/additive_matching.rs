//! Recorruption with synthetic additive noise whose low-order moments match
//! those of the true (possibly asymmetric) noise.
//!
//! With `y₁ = y + τω` and `y₂ = y − ω/τ`, the k-th order error term of the
//! self-supervised loss is `E[(ε − ω/τ)(ε + τω)ᵏ]`. Matching `E ω² = E ε²`
//! removes the first term, and additionally `E ω³ = E ε³ / τ` the second.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::{CiEstimate, RunningStats};
use crate::sampling::{exponential, standard_normal};
use crate::scalar::Scalar;
use crate::splitters::SplitPair;
use crate::tensor::{ImageTensor, Shape};

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
const APERY: f64 = 1.202_056_903_159_594_3;

/// Skewness of `log R` for Rayleigh `R`.
pub fn log_rayleigh_skewness() -> f64 {
    use std::f64::consts::PI;
    -12.0 * 6f64.sqrt() * APERY / PI.powi(3)
}

/// `n` draws of `log R`, `R` Rayleigh, shifted and scaled with the analytic
/// mean and variance of `log R` so the law has mean 0 and standard deviation `sigma`.
pub fn log_rayleigh_sample<T: Scalar, R: Rng + ?Sized>(sigma: f64, n: usize, rng: &mut R) -> Result<ImageTensor<T>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    // R² = 2E with E ~ Exp(1) for unit scale; log R = (ln 2 + ln E)/2,
    // E log R = (ln 2 − γ)/2 and Var log R = π²/24.
    let mean = (std::f64::consts::LN_2 - EULER_GAMMA) / 2.0;
    let sd = (std::f64::consts::PI.powi(2) / 24.0).sqrt();
    let data = (0..n)
        .map(|_| {
            let l = 0.5 * (std::f64::consts::LN_2 + exponential(rng).ln());
            T::lit(sigma * (l - mean) / sd)
        })
        .collect();
    ImageTensor::new(data, Shape::vector(n))
}

/// Raw-moment targets `μ₁..μ_k` for the synthetic noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub moments: Vec<f64>,
    pub tau: f64,
}

impl MomentSpec {
    pub fn new(moments: Vec<f64>, tau: f64) -> Result<Self> {
        let s = Self { moments, tau };
        s.validate()?;
        Ok(s)
    }

    pub fn order(&self) -> usize {
        self.moments.len()
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.moments.len()) {
            return Err(Error::invalid(format!("moment order must be 2 or 3, got {}", self.moments.len())));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid(format!("tau must be positive, got {}", self.tau)));
        }
        if self.moments.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("moment targets".into()));
        }
        let var = self.moments[1] - self.moments[0].powi(2);
        if !(var > 0.0) {
            return Err(Error::invalid(format!("moment targets imply variance {var}")));
        }
        Ok(())
    }

    /// Targets implied by the standardized log-Rayleigh law.
    pub fn log_rayleigh(sigma: f64, order: usize, tau: f64) -> Result<Self> {
        let m = [0.0, sigma * sigma, log_rayleigh_skewness() * sigma.powi(3) / tau];
        Self::new(m[..order.min(3)].to_vec(), tau)
    }
}

/// `μ₁ = 0`, `μ₂ = mean ε²` and, for order 3, `μ₃ = mean ε³ / τ`.
pub fn target_moments<T: Scalar>(noise: &ImageTensor<T>, order: usize, tau: f64) -> Result<MomentSpec> {
    if !(2..=3).contains(&order) {
        return Err(Error::invalid(format!("moment order must be 2 or 3, got {order}")));
    }
    if noise.is_empty() {
        return Err(Error::invalid("noise samples are empty"));
    }
    let n = noise.len() as f64;
    let raw = |p: i32| noise.iter().map(|v| v.as_f64().powi(p)).sum::<f64>() / n;
    let mut moments = vec![0.0, raw(2)];
    if order == 3 {
        moments.push(raw(3) / tau);
    }
    MomentSpec::new(moments, tau)
}

/// Gradient-descent settings for [`maxent_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GdConfig {
    /// Step in units normalized by `√μ₂`; `None` means `0.1 / k`.
    #[serde(default)]
    pub step_size: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for GdConfig {
    fn default() -> Self {
        Self { step_size: None, max_iters: 10_000, rel_tol: 0.1 }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::invalid(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if let Some(s) = self.step_size {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("step size must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

/// Stopping-rule residuals: relative error for nonzero targets, and
/// `|mean zⁱ| / √μ₂ⁱ` for zero targets. Converged when all are below `rel_tol`.
pub fn moment_residuals<T: Scalar>(z: &ImageTensor<T>, spec: &MomentSpec) -> Vec<f64> {
    let n = z.len() as f64;
    let scale = spec.moments[1].sqrt();
    spec.moments
        .iter()
        .enumerate()
        .map(|(i, &mu)| {
            let p = i as i32 + 1;
            let m = z.iter().map(|v| v.as_f64().powi(p)).sum::<f64>() / n;
            if mu != 0.0 {
                (m - mu).abs() / mu.abs()
            } else {
                m.abs() / scale.powi(p)
            }
        })
        .collect()
}

/// Samples whose empirical raw moments match `spec`, by gradient descent on
/// `½ Σᵢ (mean zⁱ − μᵢ)²` from a Gaussian start with the target mean and variance.
pub fn maxent_sample<T: Scalar, R: Rng + ?Sized>(
    spec: &MomentSpec,
    n: usize,
    cfg: &GdConfig,
    rng: &mut R,
) -> Result<ImageTensor<T>> {
    spec.validate()?;
    cfg.validate()?;
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let k = spec.order();
    let scale = spec.moments[1].sqrt();
    // Work with u = z/√μ₂ so the problem is well scaled whatever the noise level.
    let nu: Vec<f64> = spec.moments.iter().enumerate().map(|(i, m)| m / scale.powi(i as i32 + 1)).collect();
    let sd = (nu[1] - nu[0] * nu[0]).sqrt();
    let mut u: Vec<f64> = (0..n).map(|_| nu[0] + sd * standard_normal(rng)).collect();
    let step = cfg.step_size.unwrap_or(0.1 / k as f64);
    let nf = n as f64;

    let mut residuals = vec![0.0; k];
    for iter in 0..=cfg.max_iters {
        let mut m = vec![0.0; k];
        for &v in &u {
            let mut p = 1.0;
            for mi in m.iter_mut() {
                p *= v;
                *mi += p;
            }
        }
        let mut done = true;
        for i in 0..k {
            m[i] /= nf;
            residuals[i] = if nu[i] != 0.0 { (m[i] - nu[i]).abs() / nu[i].abs() } else { m[i].abs() };
            done &= residuals[i] < cfg.rel_tol;
        }
        if done {
            log::debug!("moment matching converged after {iter} iterations");
            return ImageTensor::new(u.iter().map(|&v| T::lit(v * scale)).collect(), Shape::vector(n));
        }
        if iter == cfg.max_iters {
            break;
        }
        // Per-sample gradient, scaled by n: Σᵢ rᵢ · i · u^{i−1}.
        let r: Vec<f64> = (0..k).map(|i| m[i] - nu[i]).collect();
        for v in u.iter_mut() {
            let x = *v;
            let mut g = 0.0;
            let mut p = 1.0;
            for (i, ri) in r.iter().enumerate() {
                g += ri * (i + 1) as f64 * p;
                p *= x;
            }
            *v = x - step * g;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence { iterations: iter + 1, residuals });
        }
    }
    Err(Error::NonConvergence { iterations: cfg.max_iters, residuals })
}

/// `(y + τω, y − ω/τ)`. The pair's `alpha` is the equivalent `τ²/(1 + τ²)`.
pub fn r2r_additive_split<T: Scalar>(y: &ImageTensor<T>, omega: &ImageTensor<T>, tau: f64) -> Result<SplitPair<T>> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    y.ensure_same_shape(omega)?;
    let t = T::lit(tau);
    Ok(SplitPair {
        y1: y.zip_map(omega, |a, w| a + t * w)?,
        y2: y.zip_map(omega, |a, w| a - w / t)?,
        alpha: T::lit(alpha_equivalent(tau)),
    })
}

pub fn alpha_equivalent(tau: f64) -> f64 {
    tau * tau / (1.0 + tau * tau)
}

/// Weighted recombination `y₁/(1 + τ²) + y₂ τ²/(1 + τ²)`, which returns `y`.
pub fn r2r_recombine<T: Scalar>(pair: &SplitPair<T>, tau: f64) -> Result<ImageTensor<T>> {
    let d = T::lit(1.0 + tau * tau);
    let t2 = T::lit(tau * tau);
    pair.y1.zip_map(&pair.y2, |a, b| (a + t2 * b) / d)
}

/// Sample mean and 4-SE band of `(ε − ω/τ)(ε + τω)ᵏ` over `ε`, with `ω`
/// cycled when it is shorter than `ε`.
pub fn error_term(eps: &[f64], omega: &[f64], tau: f64, k: i32) -> Result<CiEstimate> {
    if eps.len() < 2 || omega.is_empty() {
        return Err(Error::invalid("error term needs at least two noise draws and one ω"));
    }
    let mut stats = RunningStats::default();
    for (e, w) in eps.iter().zip(omega.iter().cycle()) {
        stats.push((e - w / tau) * (e + tau * w).powi(k));
    }
    Ok(stats.estimate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn skewness_constant() {
        assert!((log_rayleigh_skewness() + 1.139_547_099_404_648_7).abs() < 1e-12);
    }

    #[test]
    fn log_rayleigh_standardization() {
        let sigma = 0.1;
        let n = 1_000_000;
        let e: ImageTensor<f64> = log_rayleigh_sample(sigma, n, &mut stream(11)).unwrap();
        let mean = e.sum() / n as f64;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let m3 = e.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 * sigma / 1e3, "{mean}");
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.01);
        assert!(m3 < 0.0);
        assert!((m3 / var.powf(1.5) - log_rayleigh_skewness()).abs() < 0.02);
    }

    #[test]
    fn targets() {
        let e: ImageTensor<f64> = log_rayleigh_sample(0.1, 1_000_000, &mut stream(2)).unwrap();
        let s1 = target_moments(&e, 3, 1.0).unwrap();
        let s2 = target_moments(&e, 3, 2.0).unwrap();
        assert_eq!(s1.moments[0], 0.0);
        assert!((s1.moments[1] / 0.01 - 1.0).abs() < 0.01);
        assert!((s2.moments[2] - s1.moments[2] / 2.0).abs() < 1e-18);
        assert!(target_moments(&e, 4, 1.0).is_err());
        assert!(target_moments(&ImageTensor::<f64>::from_vec(vec![]), 2, 1.0).is_err());
    }

    #[test]
    fn gaussian_targets_converge_immediately() {
        let spec = MomentSpec::new(vec![0.0, 0.04, 0.0], 1.0).unwrap();
        let z: ImageTensor<f64> = maxent_sample(&spec, 100_000, &GdConfig::default(), &mut stream(5)).unwrap();
        assert!(moment_residuals(&z, &spec).iter().all(|&r| r < 0.1));
    }

    #[test]
    fn log_rayleigh_targets_converge() {
        let spec = MomentSpec::log_rayleigh(0.1, 3, 1.0).unwrap();
        let cfg = GdConfig { rel_tol: 1e-3, ..GdConfig::default() };
        let z: ImageTensor<f64> = maxent_sample(&spec, 20_000, &cfg, &mut stream(6)).unwrap();
        assert!(moment_residuals(&z, &spec).iter().all(|&r| r < 1e-3));
    }

    #[test]
    fn non_convergence_reports_residuals() {
        let spec = MomentSpec::log_rayleigh(0.1, 3, 1.0).unwrap();
        let cfg = GdConfig { rel_tol: 1e-3, max_iters: 2, step_size: None };
        match maxent_sample::<f64, _>(&spec, 1000, &cfg, &mut stream(6)) {
            Err(Error::NonConvergence { iterations, residuals }) => {
                assert_eq!(iterations, 2);
                assert_eq!(residuals.len(), 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn split_examples() {
        let y = ImageTensor::<f64>::from_vec(vec![1.0]);
        let p = r2r_additive_split(&y, &ImageTensor::from_vec(vec![0.5]), 1.0).unwrap();
        assert_eq!((p.y1[0], p.y2[0], p.alpha), (1.5, 0.5, 0.5));
        let p = r2r_additive_split(&y, &ImageTensor::zeros(y.shape()), 3.0).unwrap();
        assert_eq!((p.y1[0], p.y2[0]), (1.0, 1.0));
        let y = ImageTensor::<f64>::from_vec(vec![1.0, 2.0]);
        assert!(r2r_additive_split(&y, &ImageTensor::from_vec(vec![0.5]), 1.0).is_err());
        assert!(r2r_additive_split(&y, &y, 0.0).is_err());
    }

    #[test]
    fn invalid_specs() {
        assert!(MomentSpec::new(vec![0.0], 1.0).is_err());
        assert!(MomentSpec::new(vec![0.5, 0.2], 1.0).is_err());
        assert!(MomentSpec::new(vec![0.0, 0.1, 0.0, 0.0], 1.0).is_err());
    }
}
