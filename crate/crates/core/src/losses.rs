//! Loss functionals: supervised, Noise2Noise, split MSE and NLL, the SURE-type
//! limits and their exact or sampled expectations.
//!
//! Losses that hold only up to additive constants drop every term that does not
//! depend on `f`; [`LossValue::constant_convention`] says which.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimators::{fd_derivative, Denoiser};
use crate::inverse_ops::{ForwardOperator, TransformGroup};
use crate::nef_models::NoiseModel;
use crate::oracles::{
    enumerate_split_given_y, enumerate_split_law, expected_functional, gauss_hermite, Atom, RunningStats,
};
use crate::rng::stream;
use crate::sampling;
use crate::scalar::Scalar;
use crate::splitters::{check_split_params, split, SplitPair};
use crate::tensor::ImageTensor;

/// Label for losses that keep every term.
pub const EXACT: &str = "exact";
/// NLL losses keep `φ(f) − y η(f)` only.
pub const NLL_DROPS_NORMALIZER: &str = "drops -log h(y2) and the global scale of the split density";
/// SURE-type losses equal the risk minus `‖x‖²`-type constants.
pub const SURE_UP_TO_CONSTANT: &str = "drops the f-independent constant of the risk";

/// A loss value and the bookkeeping needed to compare it with others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LossValue<T: Scalar> {
    pub value: T,
    pub n_splits_used: usize,
    pub constant_convention: String,
}

impl<T: Scalar> LossValue<T> {
    fn new(value: T, n_splits_used: usize, convention: &str) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {value}")));
        }
        Ok(Self { value, n_splits_used, constant_convention: convention.to_string() })
    }
}

/// Per-pixel loss `ℓ(f, t)` between an estimate and a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", tag = "loss", content = "model", rename_all = "snake_case")]
pub enum PixelLoss<T: Scalar> {
    /// `(f − t)²`.
    Mse,
    /// Negative log-likelihood of `t` under the family with mean `f`:
    ///
    /// * Gaussian: `(f − t)²`
    /// * Poisson: `f − t log f`
    /// * Gamma: `log f + t / f`
    /// * Binomial: `−t log f + (t − 1) log(1 − f)`
    Nll(NoiseModel<T>),
}

impl<T: Scalar> PixelLoss<T> {
    pub fn value(&self, f: T, t: T) -> T {
        let one = T::one();
        match self {
            PixelLoss::Mse | PixelLoss::Nll(NoiseModel::Gaussian { .. }) => (f - t) * (f - t),
            PixelLoss::Nll(NoiseModel::Poisson { .. }) => f - t * f.ln(),
            PixelLoss::Nll(NoiseModel::Gamma { .. }) => f.ln() + t / f,
            PixelLoss::Nll(NoiseModel::Binomial { .. }) => -t * f.ln() + (t - one) * (one - f).ln(),
        }
    }

    /// `∂ℓ/∂f`.
    pub fn derivative(&self, f: T, t: T) -> T {
        let one = T::one();
        let two = T::lit(2.0);
        match self {
            PixelLoss::Mse | PixelLoss::Nll(NoiseModel::Gaussian { .. }) => two * (f - t),
            PixelLoss::Nll(NoiseModel::Poisson { .. }) => one - t / f,
            PixelLoss::Nll(NoiseModel::Gamma { .. }) => one / f - t / (f * f),
            PixelLoss::Nll(NoiseModel::Binomial { .. }) => -t / f + (one - t) / (one - f),
        }
    }

    fn check_estimate(&self, f: &ImageTensor<T>) -> Result<()> {
        if let PixelLoss::Nll(model) = self {
            for (i, v) in f.iter().enumerate() {
                model.check_interior(i, v.as_f64())?;
            }
        }
        Ok(())
    }

    pub fn convention(&self) -> &'static str {
        match self {
            PixelLoss::Mse | PixelLoss::Nll(NoiseModel::Gaussian { .. }) => EXACT,
            PixelLoss::Nll(_) => NLL_DROPS_NORMALIZER,
        }
    }

    /// `Σᵢ ℓ(fᵢ, tᵢ)`.
    pub fn total(&self, f: &ImageTensor<T>, t: &ImageTensor<T>) -> Result<T> {
        f.ensure_same_shape(t)?;
        self.check_estimate(f)?;
        Ok(f.iter().zip(t.iter()).fold(T::zero(), |acc, (&a, &b)| acc + self.value(a, b)))
    }
}

/// `‖f(y_in) − x‖²`.
pub fn sup_mse<T: Scalar, F: Denoiser<T> + ?Sized>(
    f: &F,
    y_in: &ImageTensor<T>,
    x: &ImageTensor<T>,
) -> Result<LossValue<T>> {
    let v = f.apply(y_in)?.dist_sq(x)?;
    LossValue::new(v, 0, EXACT)
}

/// `‖f(y₁) − y₂‖²` for two independent noisy copies.
pub fn n2n_loss<T: Scalar, F: Denoiser<T> + ?Sized>(
    f: &F,
    y1: &ImageTensor<T>,
    y2: &ImageTensor<T>,
) -> Result<LossValue<T>> {
    let v = f.apply(y1)?.dist_sq(y2)?;
    LossValue::new(v, 0, EXACT)
}

/// Single-split estimate `‖f(y₁) − y₂‖²`.
pub fn gr2r_mse<T: Scalar, F: Denoiser<T> + ?Sized>(f: &F, pair: &SplitPair<T>) -> Result<LossValue<T>> {
    let v = f.apply(&pair.y1)?.dist_sq(&pair.y2)?;
    LossValue::new(v, 1, EXACT)
}

/// Single-split negative log-likelihood of `y₂` under mean `f(y₁)`.
///
/// Poisson observations are in intensity units, so the loss is
/// `1ᵀf − y₂ᵀ log f` and its minimizer is `E[y₂ | y₁]` for every gain.
pub fn gr2r_nll<T: Scalar, F: Denoiser<T> + ?Sized>(
    model: &NoiseModel<T>,
    f: &F,
    pair: &SplitPair<T>,
) -> Result<LossValue<T>> {
    let loss = PixelLoss::Nll(*model);
    let v = loss.total(&f.apply(&pair.y1)?, &pair.y2)?;
    LossValue::new(v, 1, loss.convention())
}

/// Supervised counterpart of [`gr2r_nll`]: the same loss with `y₂` replaced by `x`.
pub fn sup_nll<T: Scalar, F: Denoiser<T> + ?Sized>(
    model: &NoiseModel<T>,
    f: &F,
    y_in: &ImageTensor<T>,
    x: &ImageTensor<T>,
) -> Result<LossValue<T>> {
    let loss = PixelLoss::Nll(*model);
    let v = loss.total(&f.apply(y_in)?, x)?;
    LossValue::new(v, 0, loss.convention())
}

/// Divergence estimator for [`sure_gaussian`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DivergenceMode {
    /// Sum of the analytic diagonal Jacobian.
    ExactDiagonal,
    /// `bᵀ(f(y + εb) − f(y))/ε` averaged over `probes` Rademacher vectors `b`.
    /// `eps = None` uses `1e-3 (1 + ‖y‖∞)`.
    MonteCarlo { eps: Option<f64>, probes: usize },
}

/// `‖f(y) − y‖² + 2σ² div f(y)`.
pub fn sure_gaussian<T, F, R>(
    f: &F,
    y: &ImageTensor<T>,
    sigma: T,
    mode: DivergenceMode,
    rng: &mut R,
) -> Result<LossValue<T>>
where
    T: Scalar,
    F: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    let fy = f.apply(y)?;
    let div = match mode {
        DivergenceMode::ExactDiagonal => f.diag_jacobian(y)?.sum(),
        DivergenceMode::MonteCarlo { eps, probes } => {
            if probes == 0 {
                return Err(Error::invalid("monte-carlo divergence needs at least one probe"));
            }
            let eps = T::lit(eps.unwrap_or(1e-3 * (1.0 + y.max_abs().as_f64())));
            let mut acc = T::zero();
            for _ in 0..probes {
                let signs = (0..y.len()).map(|_| if rng.random::<bool>() { T::one() } else { -T::one() }).collect();
                let b = ImageTensor::new(signs, y.shape())?;
                let shifted = y.add(&b.scale(eps))?;
                acc += b.dot(&f.apply(&shifted)?.sub(&fy)?)? / eps;
            }
            acc / T::from_count(probes)
        }
    };
    let v = fy.dist_sq(y)? + T::lit(2.0) * sigma * sigma * div;
    LossValue::new(v, 0, SURE_UP_TO_CONSTANT)
}

/// `‖f(y) − y‖² + 2 Σᵢ yᵢ (fᵢ(y) − fᵢ(y − γ eᵢ))`.
pub fn pure_limit_poisson<T: Scalar, F: Denoiser<T> + ?Sized>(
    f: &F,
    y: &ImageTensor<T>,
    gamma: T,
) -> Result<LossValue<T>> {
    let model = NoiseModel::poisson(gamma)?;
    model.counts(y)?;
    let fy = f.apply(y)?;
    let mut corr = T::zero();
    let mut probe = y.clone();
    for i in 0..y.len() {
        if y[i] == T::zero() {
            continue;
        }
        probe[i] = y[i] - gamma;
        corr += y[i] * (fy[i] - f.apply(&probe)?[i]);
        probe[i] = y[i];
    }
    let v = fy.dist_sq(y)? + T::lit(2.0) * corr;
    LossValue::new(v, 0, SURE_UP_TO_CONSTANT)
}

/// Published series coefficient `b(ℓ, k) = ℓ(k − 1) / (k(ℓ + k − 1))`.
pub fn gamma_series_coefficient(looks: u32, k: u32) -> f64 {
    let (l, k) = (looks as f64, k as f64);
    l * (k - 1.0) / (k * (l + k - 1.0))
}

/// Which coefficients the Gamma series uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSeriesForm {
    /// Terms `k = 2..=K` with weight `b(ℓ, k) Γ(ℓ)/Γ(ℓ + k)`.
    Published,
    /// Terms `k = 1..=K` with weight `Γ(ℓ + 1)/Γ(ℓ + k + 1)`, the limit of the
    /// split loss obtained from the Beta moments of `ω`.
    #[default]
    MomentExact,
}

/// Weight of `(−y)^{k+1} ∂ᵏf` in the Gamma series.
pub fn gamma_series_weight(form: GammaSeriesForm, looks: u32, k: u32) -> f64 {
    let l = looks as f64;
    match form {
        GammaSeriesForm::Published => {
            gamma_series_coefficient(looks, k) * (ln_gamma(l) - ln_gamma(l + k as f64)).exp()
        }
        GammaSeriesForm::MomentExact => (ln_gamma(l + 1.0) - ln_gamma(l + 1.0 + k as f64)).exp(),
    }
}

/// Finite-difference step for derivative order `k` at `y`: the base step
/// `max(1e-4, 1e-3 |y|)` (or `fd_step`) grown by `4^(k−1)` to keep rounding
/// error in check for the higher orders.
pub fn series_fd_step(y: f64, k: u32, fd_step: Option<f64>) -> f64 {
    let base = fd_step.unwrap_or_else(|| (1e-3 * y.abs()).max(1e-4));
    base * 4f64.powi(k as i32 - 1)
}

/// Gamma-noise SURE-type series truncated at order `K`:
/// `‖f(y) − y‖² + 2 Σᵢ Σₖ wₖ (−yᵢ)^{k+1} ∂ᵏfᵢ(y)`.
pub fn sure_gamma_series<T: Scalar, F: Denoiser<T> + ?Sized>(
    f: &F,
    y: &ImageTensor<T>,
    looks: u32,
    order: u32,
    fd_step: Option<f64>,
    form: GammaSeriesForm,
) -> Result<LossValue<T>> {
    if !(2..=4).contains(&order) {
        return Err(Error::invalid(format!("series order must lie in 2..=4, got {order}")));
    }
    let model = NoiseModel::<T>::gamma(looks)?;
    for (i, v) in y.iter().enumerate() {
        model.check_observation(i, v.as_f64())?;
    }
    let first = match form {
        GammaSeriesForm::Published => 2,
        GammaSeriesForm::MomentExact => 1,
    };
    let fy = f.apply(y)?;
    let mut corr = 0.0;
    for i in 0..y.len() {
        let yi = y[i].as_f64();
        for k in first..=order {
            let h = T::lit(series_fd_step(yi, k, fd_step));
            let d = fd_derivative(f, y, i, k as usize, h)?.as_f64();
            corr += gamma_series_weight(form, looks, k) * (-yi).powi(k as i32 + 1) * d;
        }
    }
    let v = fy.dist_sq(y)? + T::lit(2.0 * corr);
    LossValue::new(v, 0, SURE_UP_TO_CONSTANT)
}

/// Which loss [`expected_loss`] averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedLossKind {
    /// `‖f(y₁) − x‖²`.
    SupMse,
    /// NLL of `x` under mean `f(y₁)`.
    SupNll,
    /// `‖f(y₁) − y₂‖²`.
    Gr2rMse,
    /// NLL of `y₂` under mean `f(y₁)`.
    Gr2rNll,
}

impl ExpectedLossKind {
    fn needs_x(self) -> bool {
        matches!(self, ExpectedLossKind::SupMse | ExpectedLossKind::SupNll)
    }

    fn pixel(self, model: &NoiseModel<f64>, f: f64, y2: f64, x: f64) -> f64 {
        match self {
            ExpectedLossKind::SupMse => (f - x).powi(2),
            ExpectedLossKind::Gr2rMse => (f - y2).powi(2),
            ExpectedLossKind::SupNll => PixelLoss::Nll(*model).value(f, x),
            ExpectedLossKind::Gr2rNll => PixelLoss::Nll(*model).value(f, y2),
        }
    }
}

/// What the expectation conditions on.
#[derive(Debug, Clone, Copy)]
pub enum Conditioning<'a, T: Scalar> {
    /// Average over `y ~ p(· | x)` and the split.
    GivenX(&'a ImageTensor<T>),
    /// Average over the split of a fixed `y`.
    GivenY(&'a ImageTensor<T>),
}

/// How [`expected_loss`] integrates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum ExpectationMethod {
    /// Exact sum over the discrete split law (Poisson, Binomial).
    Enumerate { tail_eps: f64 },
    /// Gauss–Hermite quadrature with `order` nodes per Gaussian variable
    /// (Gaussian family only; exact for polynomial losses of low degree).
    Quadrature { order: usize },
    /// Sample mean over `samples` draws from `seed`.
    MonteCarlo { samples: usize, seed: u64 },
}

/// Expectation with a half-width (zero for the deterministic methods).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub value: f64,
    pub half_width: f64,
}

/// Expected loss over the split law (and the noise, given `x`).
///
/// The deterministic methods integrate pixel by pixel and need a pixelwise `f`
/// (or a single pixel).
pub fn expected_loss<T, F>(
    model: &NoiseModel<T>,
    cond: Conditioning<'_, T>,
    alpha: f64,
    f: &F,
    kind: ExpectedLossKind,
    method: ExpectationMethod,
) -> Result<Expectation>
where
    T: Scalar,
    F: Denoiser<T> + ?Sized,
{
    check_split_params(model, alpha)?;
    let base = match cond {
        Conditioning::GivenX(x) => x,
        Conditioning::GivenY(y) => {
            if kind.needs_x() {
                return Err(Error::invalid("supervised losses need conditioning on x"));
            }
            y
        }
    };
    let pixelwise = f.is_pixelwise() || base.len() == 1;
    if !pixelwise && !matches!(method, ExpectationMethod::MonteCarlo { .. }) {
        return Err(Error::Unsupported(
            "exact expectations need a pixelwise estimator; use Monte-Carlo".into(),
        ));
    }
    let m64 = model.cast::<f64>();
    match method {
        ExpectationMethod::Enumerate { tail_eps } => {
            let mut terms = Vec::with_capacity(base.len());
            for i in 0..base.len() {
                let b = base[i].as_f64();
                let grid = match cond {
                    Conditioning::GivenX(_) => enumerate_split_law(model, b, alpha, tail_eps)?,
                    Conditioning::GivenY(_) => enumerate_split_given_y(model, b, alpha)?,
                };
                let mut probe = base.clone();
                let mut failure = None;
                let term = expected_functional(&grid, |a: &Atom| {
                    probe[i] = T::lit(a.y1);
                    match f.apply(&probe) {
                        Ok(out) => kind.pixel(&m64, out[i].as_f64(), a.y2, b),
                        Err(e) => {
                            failure.get_or_insert(e);
                            f64::NAN
                        }
                    }
                });
                if let Some(e) = failure {
                    return Err(e);
                }
                terms.push(term?);
            }
            Ok(Expectation { value: crate::oracles::neumaier(terms.into_iter()), half_width: 0.0 })
        }
        ExpectationMethod::Quadrature { order } => {
            let NoiseModel::Gaussian { sigma } = *model else {
                return Err(Error::Unsupported(format!("quadrature covers gaussian noise only, not {}", model.family())));
            };
            let sigma = sigma.as_f64();
            let (t, w) = gauss_hermite(order)?;
            let shifted = |s: f64| base.map(|v| v + T::lit(s));
            let mut value = 0.0;
            match cond {
                Conditioning::GivenY(_) => {
                    let c1 = (alpha / (1.0 - alpha)).sqrt() * sigma;
                    let c2 = ((1.0 - alpha) / alpha).sqrt() * sigma;
                    for (&tk, &wk) in t.iter().zip(&w) {
                        let out = f.apply(&shifted(c1 * tk))?;
                        let mut s = 0.0;
                        for i in 0..base.len() {
                            let y2 = base[i].as_f64() - c2 * tk;
                            s += kind.pixel(&m64, out[i].as_f64(), y2, f64::NAN);
                        }
                        value += wk * s;
                    }
                }
                Conditioning::GivenX(_) => {
                    let s1 = sigma / (1.0 - alpha).sqrt();
                    let s2 = sigma / alpha.sqrt();
                    for (&ta, &wa) in t.iter().zip(&w) {
                        let out = f.apply(&shifted(s1 * ta))?;
                        let mut s = 0.0;
                        for i in 0..base.len() {
                            let xi = base[i].as_f64();
                            let fi = out[i].as_f64();
                            if kind.needs_x() {
                                s += kind.pixel(&m64, fi, f64::NAN, xi);
                            } else {
                                for (&tb, &wb) in t.iter().zip(&w) {
                                    s += wb * kind.pixel(&m64, fi, xi + s2 * tb, xi);
                                }
                            }
                        }
                        value += wa * s;
                    }
                }
            }
            if !value.is_finite() {
                return Err(Error::NonFinite(format!("quadrature gave {value}")));
            }
            Ok(Expectation { value, half_width: 0.0 })
        }
        ExpectationMethod::MonteCarlo { samples, seed } => {
            if samples < 2 {
                return Err(Error::invalid("monte-carlo expectation needs at least two samples"));
            }
            let mut rng = stream(seed);
            let mut stats = RunningStats::default();
            for _ in 0..samples {
                let y = match cond {
                    Conditioning::GivenX(x) => model.sample_noisy(x, &mut rng)?,
                    Conditioning::GivenY(y) => y.clone(),
                };
                let pair = split(model, &y, alpha, &mut rng)?;
                let out = f.apply(&pair.y1)?;
                let mut s = 0.0;
                for i in 0..out.len() {
                    s += kind.pixel(&m64, out[i].as_f64(), pair.y2[i].as_f64(), base[i].as_f64());
                }
                if !s.is_finite() {
                    return Err(Error::NonFinite(format!("sampled loss is {s}")));
                }
                stats.push(s);
            }
            let e = stats.estimate();
            Ok(Expectation { value: e.mean, half_width: e.half_width })
        }
    }
}

/// Estimator input for a measurement: `Aᵀ y`, which zero-fills the
/// unobserved pixels of a mask.
pub fn back_project<T: Scalar>(op: &ForwardOperator<T>, y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
    op.adjoint(y)
}

/// `‖A f(Aᵀy₁) − y₂‖²`.
pub fn gr2r_operator_mse<T: Scalar, F: Denoiser<T> + ?Sized>(
    op: &ForwardOperator<T>,
    f: &F,
    pair: &SplitPair<T>,
) -> Result<LossValue<T>> {
    let x_hat = f.apply(&back_project(op, &pair.y1)?)?;
    let v = op.apply(&x_hat)?.dist_sq(&pair.y2)?;
    LossValue::new(v, 1, EXACT)
}

/// Equivariant-imaging loss `‖f(Aᵀ A T_g x̂) − T_g x̂‖²` averaged over
/// `samples` transforms drawn uniformly from the group.
pub fn ei_loss<T, F, R>(
    op: &ForwardOperator<T>,
    f: &F,
    x_hat: &ImageTensor<T>,
    group: &TransformGroup,
    samples: usize,
    rng: &mut R,
) -> Result<LossValue<T>>
where
    T: Scalar,
    F: Denoiser<T> + ?Sized,
    R: Rng + ?Sized,
{
    if samples == 0 {
        return Err(Error::invalid("ei_loss needs at least one sampled transform"));
    }
    let mut acc = T::zero();
    for _ in 0..samples {
        let g = group.sample(rng)?;
        let tx = g.apply(x_hat)?;
        let out = f.apply(&back_project(op, &op.apply(&tx)?)?)?;
        acc += out.dist_sq(&tx)?;
    }
    LossValue::new(acc / T::from_count(samples), 0, EXACT)
}

/// Draws `ω` for the Gamma split; exposed for moment checks.
pub fn gamma_split_omega<R: Rng + ?Sized>(looks: u32, alpha: f64, rng: &mut R) -> f64 {
    let l = looks as f64;
    sampling::beta(rng, l * alpha, l * (1.0 - alpha))
}

/// `E[ω^k]` for `ω ~ Beta(ℓα, ℓ(1 − α))`: `∏_{r<k} (ℓα + r)/(ℓ + r)`.
pub fn beta_raw_moment(looks: u32, alpha: f64, k: u32) -> f64 {
    let l = looks as f64;
    (0..k).map(|r| (l * alpha + r as f64) / (l + r as f64)).product()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::Estimator;
    use crate::inverse_ops::{make_bernoulli_mask, Transform};
    use crate::oracles::DEFAULT_TAIL_EPS;
    use crate::splitters::split_from_omega;
    use crate::tensor::Shape;

    fn img(v: Vec<f64>) -> ImageTensor<f64> {
        ImageTensor::from_vec(v)
    }

    #[test]
    fn supervised_and_n2n_basics() {
        let x = img(vec![1.0, 2.0]);
        assert_eq!(sup_mse(&Estimator::identity(), &x, &x).unwrap().value, 0.0);
        assert_eq!(sup_mse(&Estimator::constant(vec![0.0]), &x, &x).unwrap().value, 5.0);
        assert_eq!(n2n_loss(&Estimator::identity(), &x, &x).unwrap().value, 0.0);
        assert_eq!(n2n_loss(&Estimator::constant(vec![0.0]), &img(vec![1.0]), &img(vec![3.0])).unwrap().value, 9.0);
        assert!(sup_mse(&Estimator::identity(), &x, &img(vec![1.0])).is_err());
    }

    #[test]
    fn affine_supervised_is_quadratic() {
        let (a, b, y, x) = (0.7, -0.2, 1.3, 0.4);
        let v = sup_mse(&Estimator::affine(a, b), &img(vec![y]), &img(vec![x])).unwrap().value;
        let expanded = a * a * y * y + 2.0 * a * y * (b - x) + (b - x) * (b - x);
        assert!((v - expanded).abs() < 1e-15);
    }

    #[test]
    fn nll_reference_values() {
        let pair = SplitPair { y1: img(vec![2.0]), y2: img(vec![2.0]), alpha: 0.5 };
        let m = NoiseModel::<f64>::poisson(1.0).unwrap();
        let v = gr2r_nll(&m, &Estimator::identity(), &pair).unwrap();
        assert!((v.value - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert_eq!(v.constant_convention, NLL_DROPS_NORMALIZER);

        let g = NoiseModel::<f64>::gaussian(0.3).unwrap();
        let pair = split(&g, &img(vec![0.1, 0.5, 0.9]), 0.3, &mut stream(1)).unwrap();
        let f = Estimator::affine(0.8, 0.05);
        assert_eq!(gr2r_nll(&g, &f, &pair).unwrap().value, gr2r_mse(&f, &pair).unwrap().value);

        let bad = Estimator::constant(vec![0.0]);
        assert!(gr2r_nll(&m, &bad, &pair).is_err());
    }

    #[test]
    fn degenerate_split_gives_zero() {
        let m = NoiseModel::<f64>::gaussian(0.1).unwrap();
        let y = img(vec![0.2, 0.4]);
        let pair = split_from_omega(&m, &y, 0.5, &ImageTensor::zeros(y.shape())).unwrap();
        assert_eq!(gr2r_mse(&Estimator::identity(), &pair).unwrap().value, 0.0);
    }

    #[test]
    fn pixel_loss_derivatives() {
        let models = [
            NoiseModel::<f64>::gaussian(0.5).unwrap(),
            NoiseModel::<f64>::poisson(0.5).unwrap(),
            NoiseModel::<f64>::gamma(3).unwrap(),
            NoiseModel::<f64>::binomial(4).unwrap(),
        ];
        for m in models {
            let l = PixelLoss::Nll(m);
            let (f, t) = (0.4, 0.7);
            let fd = (l.value(f + 1e-7, t) - l.value(f - 1e-7, t)) / 2e-7;
            assert!((fd - l.derivative(f, t)).abs() < 1e-6, "{m:?}");
        }
    }

    #[test]
    fn sure_gaussian_closed_forms() {
        let y = img(vec![0.3, -1.2, 0.8, 2.0]);
        let s = 0.2;
        let mut rng = stream(0);
        let id = sure_gaussian(&Estimator::identity(), &y, s, DivergenceMode::ExactDiagonal, &mut rng).unwrap();
        assert!((id.value - 2.0 * s * s * 4.0).abs() < 1e-15);
        let c = sure_gaussian(&Estimator::constant(vec![0.5]), &y, s, DivergenceMode::ExactDiagonal, &mut rng).unwrap();
        assert!((c.value - y.map(|v| v - 0.5).norm_sq()).abs() < 1e-15);
        let a = 0.6;
        let v = sure_gaussian(&Estimator::affine(a, 0.0), &y, s, DivergenceMode::ExactDiagonal, &mut rng).unwrap();
        let expected = (1.0 - a) * (1.0 - a) * y.norm_sq() + 2.0 * s * s * a * 4.0;
        assert!((v.value - expected).abs() < 1e-14);
        // Rademacher probes are exact for linear maps.
        let mc = DivergenceMode::MonteCarlo { eps: None, probes: 1 };
        let v2 = sure_gaussian(&Estimator::affine(a, 0.0), &y, s, mc, &mut rng).unwrap();
        assert!((v2.value - expected).abs() < 1e-9);
        let poly = Estimator::polynomial(vec![0.0, 1.0, 0.3]);
        assert!(sure_gaussian(&|v: &ImageTensor<f64>| poly.apply(v), &y, s, DivergenceMode::ExactDiagonal, &mut rng).is_err());
    }

    #[test]
    fn pure_limit_closed_forms() {
        let y = img(vec![0.0, 0.5, 1.5]);
        let g = 0.5;
        let c = pure_limit_poisson(&Estimator::constant(vec![1.0]), &y, g).unwrap();
        assert_eq!(c.value, y.map(|v| v - 1.0).norm_sq());
        let id = pure_limit_poisson(&Estimator::identity(), &y, g).unwrap();
        assert!((id.value - 2.0 * g * y.sum()).abs() < 1e-15);
        assert!(pure_limit_poisson(&Estimator::identity(), &img(vec![0.3]), g).is_err());
    }

    #[test]
    fn gamma_coefficients() {
        for l in 1..20 {
            assert_eq!(gamma_series_coefficient(l, 1), 0.0);
            for k in 2..10 {
                let b = gamma_series_coefficient(l, k);
                assert!(b > 0.0 && b < 1.0);
            }
        }
        assert!((gamma_series_coefficient(5, 2) - 5.0 / 12.0).abs() < 1e-15);
        assert!((gamma_series_weight(GammaSeriesForm::MomentExact, 5, 1) - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn gamma_series_is_split_limit_for_polynomials() {
        // For polynomial f the split loss is a finite combination of Beta
        // moments, so its α → 0 limit is available in closed form.
        let looks = 5;
        let (c0, c1, c2) = (0.1, 0.7, 0.2);
        let f = Estimator::polynomial(vec![c0, c1, c2]);
        let y = 1.3f64;
        let series = sure_gamma_series(&f, &img(vec![y]), looks, 4, None, GammaSeriesForm::MomentExact)
            .unwrap()
            .value;
        // Cross term E[f(y₁) y₂] at α → 0 from E[ω^m]/α → (m−1)! ℓ!/(ℓ+m−1)!·…
        let alpha = 1e-7;
        let m = |k: u32| beta_raw_moment(looks, alpha, k);
        let y1 = |p: u32| -> f64 {
            // E[(y(1−ω)/(1−α))^p ω] / α
            let s = y / (1.0 - alpha);
            let mut acc = 0.0;
            for j in 0..=p {
                let binom = (1..=j).fold(1.0, |a, i| a * (p - i + 1) as f64 / i as f64);
                acc += binom * (-1f64).powi(j as i32) * m(j + 1);
            }
            s.powi(p as i32) * acc / alpha
        };
        let cross = y * (c0 * y1(0) + c1 * y1(1) + c2 * y1(2));
        let fy = c0 + c1 * y + c2 * y * y;
        // ‖f − y‖² + 2Σ … = f² − 2 y₂-cross + y² up to the constant y² − E y₂².
        let limit = fy * fy - 2.0 * cross + y * y;
        assert!((series - limit).abs() < 1e-5, "{series} vs {limit}");
    }

    #[test]
    fn expected_identity_supervised_gaussian() {
        let m = NoiseModel::<f64>::gaussian(0.2).unwrap();
        let x = img(vec![0.1, 0.5, 0.9]);
        let alpha = 0.3;
        let e = expected_loss(
            &m,
            Conditioning::GivenX(&x),
            alpha,
            &Estimator::identity(),
            ExpectedLossKind::SupMse,
            ExpectationMethod::Quadrature { order: 8 },
        )
        .unwrap();
        assert!((e.value - 3.0 * 0.04 / (1.0 - alpha)).abs() < 1e-14);
    }

    #[test]
    fn expected_constant_matches_moment_algebra() {
        let m = NoiseModel::<f64>::poisson(1.0).unwrap();
        let x = img(vec![1.0]);
        let alpha = 0.25;
        let c = 0.7;
        let e = expected_loss(
            &m,
            Conditioning::GivenX(&x),
            alpha,
            &Estimator::constant(vec![c]),
            ExpectedLossKind::Gr2rMse,
            ExpectationMethod::Enumerate { tail_eps: DEFAULT_TAIL_EPS },
        )
        .unwrap();
        // E y₂ = x, E y₂² = x² + x/α.
        let expected = c * c - 2.0 * c + (1.0 + 1.0 / alpha);
        assert!((e.value - expected).abs() < 1e-10);
    }

    #[test]
    fn enumeration_and_monte_carlo_agree() {
        let m = NoiseModel::<f64>::poisson(1.0).unwrap();
        let x = img(vec![1.0]);
        let f = Estimator::affine(0.6, 0.3);
        let args = (Conditioning::GivenX(&x), 0.15, ExpectedLossKind::Gr2rMse);
        let exact = expected_loss(&m, args.0, args.1, &f, args.2, ExpectationMethod::Enumerate { tail_eps: 1e-12 }).unwrap();
        let mc = expected_loss(&m, args.0, args.1, &f, args.2, ExpectationMethod::MonteCarlo { samples: 200_000, seed: 5 }).unwrap();
        assert!((exact.value - mc.value).abs() <= mc.half_width, "{exact:?} {mc:?}");
    }

    #[test]
    fn quadrature_matches_monte_carlo() {
        let m = NoiseModel::<f64>::gaussian(0.1).unwrap();
        let y = img(vec![0.2, 0.6]);
        let f = Estimator::polynomial(vec![0.0, 0.8, 0.3]);
        let q = expected_loss(&m, Conditioning::GivenY(&y), 0.2, &f, ExpectedLossKind::Gr2rMse, ExpectationMethod::Quadrature { order: 10 }).unwrap();
        let mc = expected_loss(&m, Conditioning::GivenY(&y), 0.2, &f, ExpectedLossKind::Gr2rMse, ExpectationMethod::MonteCarlo { samples: 200_000, seed: 1 }).unwrap();
        assert!((q.value - mc.value).abs() <= mc.half_width, "{q:?} {mc:?}");
        assert!(expected_loss(&NoiseModel::<f64>::poisson(1.0).unwrap(), Conditioning::GivenY(&y), 0.2, &f, ExpectedLossKind::Gr2rMse, ExpectationMethod::Quadrature { order: 4 }).is_err());
    }

    #[test]
    fn operator_losses() {
        let shape = Shape::grid(4, 4);
        let m = NoiseModel::<f64>::gaussian(0.1).unwrap();
        let y = ImageTensor::from_f64(&(0..16).map(|v| v as f64 / 16.0).collect::<Vec<_>>(), shape).unwrap();
        let pair = split(&m, &y, 0.5, &mut stream(2)).unwrap();
        let f = Estimator::affine(0.9, 0.01);
        let id = ForwardOperator::identity(shape);
        assert_eq!(gr2r_operator_mse(&id, &f, &pair).unwrap().value, gr2r_mse(&f, &pair).unwrap().value);
        let zero = ForwardOperator::mask(vec![false; 16], shape).unwrap();
        assert_eq!(gr2r_operator_mse(&zero, &f, &pair).unwrap().value, pair.y2.norm_sq());

        let x_hat = ImageTensor::filled(shape, 0.5);
        let rot = TransformGroup::rotations();
        assert_eq!(ei_loss(&id, &Estimator::identity(), &x_hat, &rot, 3, &mut stream(0)).unwrap().value, 0.0);
        let op = make_bernoulli_mask::<f64>(shape, 0.9, 1).unwrap();
        let g = TransformGroup::new(vec![Transform::identity()]).unwrap();
        assert!(ei_loss(&op, &Estimator::identity(), &x_hat, &g, 1, &mut stream(0)).is_ok());
        assert!(TransformGroup::new(vec![]).is_err());
    }

    #[test]
    fn beta_moments_product_formula() {
        // Beta(1, 4): E ω = 1/5, E ω² = 2/30.
        assert!((beta_raw_moment(5, 0.2, 1) - 0.2).abs() < 1e-15);
        assert!((beta_raw_moment(5, 0.2, 2) - 1.0 / 15.0).abs() < 1e-15);
        let _ = gamma_split_omega(5, 0.2, &mut stream(0));
    }
}
