//! Small analytic denoisers, their derivatives and a plain gradient-descent
//! trainer.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::PixelLoss;
use crate::nef_models::NoiseModel;
use crate::rng::{stream, RandomStream};
use crate::scalar::Scalar;
use crate::splitters::split;
use crate::tensor::ImageTensor;

/// Output margin of the positive and unit-interval range maps.
pub const RANGE_MARGIN: f64 = 1e-6;

/// Highest supported polynomial degree.
pub const MAX_POLY_DEGREE: usize = 4;

/// A map `f: Rⁿ → Rⁿ`.
pub trait Denoiser<T: Scalar> {
    fn apply(&self, y: &ImageTensor<T>) -> Result<ImageTensor<T>>;

    /// `∂fᵢ/∂yᵢ` for every pixel.
    fn diag_jacobian(&self, _y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        Err(Error::Unsupported("estimator exposes no per-pixel derivative".into()))
    }

    /// True when `fᵢ` depends on `yᵢ` alone.
    fn is_pixelwise(&self) -> bool {
        false
    }
}

impl<T: Scalar, F: Fn(&ImageTensor<T>) -> Result<ImageTensor<T>>> Denoiser<T> for F {
    fn apply(&self, y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        self(y)
    }
}

/// Output nonlinearity applied after the linear part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeMap {
    #[default]
    None,
    /// `log(1 + eᵘ) + 1e-6`, onto `(1e-6, ∞)`.
    Positive,
    /// Logistic map clamped to `[1e-6, 1 − 1e-6]`.
    UnitInterval,
}

impl RangeMap {
    pub fn value<T: Scalar>(self, u: T) -> T {
        let margin = T::lit(RANGE_MARGIN);
        match self {
            RangeMap::None => u,
            RangeMap::Positive => softplus(u) + margin,
            RangeMap::UnitInterval => logistic(u).max(margin).min(T::one() - margin),
        }
    }

    /// Derivative of [`RangeMap::value`]; zero where the clamp is active.
    pub fn derivative<T: Scalar>(self, u: T) -> T {
        let margin = T::lit(RANGE_MARGIN);
        match self {
            RangeMap::None => T::one(),
            RangeMap::Positive => logistic(u),
            RangeMap::UnitInterval => {
                let s = logistic(u);
                if s < margin || s > T::one() - margin {
                    T::zero()
                } else {
                    s * (T::one() - s)
                }
            }
        }
    }

    fn is_identity(self) -> bool {
        self == RangeMap::None
    }
}

fn softplus<T: Scalar>(u: T) -> T {
    // log(1 + eᵘ) without overflow.
    u.max(T::zero()) + (-u.abs()).exp().ln_1p()
}

fn logistic<T: Scalar>(u: T) -> T {
    if u >= T::zero() {
        T::one() / (T::one() + (-u).exp())
    } else {
        let e = u.exp();
        e / (T::one() + e)
    }
}

/// Linear part of an [`Estimator`].
#[derive(Debug, Clone, PartialEq)]
pub enum Kind<T: Scalar> {
    Identity,
    /// Output `c` (one value broadcast, or one per pixel).
    Constant { value: Vec<T> },
    /// `aᵢ yᵢ + bᵢ` (one pair broadcast, or one pair per pixel).
    Affine { gain: Vec<T>, bias: Vec<T> },
    /// `Σ_d c_d yᵢᵈ`, the same polynomial at every pixel.
    Polynomial { coeffs: Vec<T> },
    /// Periodic cross-correlation with a `height x width` kernel anchored at
    /// its center `(height/2, width/2)`.
    Convolution { kernel: Vec<T>, height: usize, width: usize },
}

/// A denoiser `f(y) = range_map(L(y))` with a linear or polynomial `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "", into = "EstimatorRecord<T>", try_from = "EstimatorRecord<T>")]
pub struct Estimator<T: Scalar> {
    pub kind: Kind<T>,
    pub range_map: RangeMap,
}

/// Flat JSON form: kind tag plus parameter list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "", deny_unknown_fields)]
pub struct EstimatorRecord<T: Scalar> {
    pub kind: String,
    pub params: Vec<T>,
    #[serde(default)]
    pub range_map: RangeMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_shape: Option<[usize; 2]>,
}

impl<T: Scalar> From<Estimator<T>> for EstimatorRecord<T> {
    fn from(e: Estimator<T>) -> Self {
        let (kind, kernel_shape) = match &e.kind {
            Kind::Identity => ("identity", None),
            Kind::Constant { .. } => ("constant", None),
            Kind::Affine { .. } => ("affine", None),
            Kind::Polynomial { .. } => ("polynomial", None),
            Kind::Convolution { height, width, .. } => ("convolution", Some([*height, *width])),
        };
        EstimatorRecord { kind: kind.into(), params: e.params(), range_map: e.range_map, kernel_shape }
    }
}

impl<T: Scalar> TryFrom<EstimatorRecord<T>> for Estimator<T> {
    type Error = Error;

    fn try_from(r: EstimatorRecord<T>) -> Result<Self> {
        let p = r.params;
        let kind = match r.kind.as_str() {
            "identity" if p.is_empty() => Kind::Identity,
            "constant" => Kind::Constant { value: p },
            "affine" if p.len() % 2 == 0 => {
                let m = p.len() / 2;
                Kind::Affine { gain: p[..m].to_vec(), bias: p[m..].to_vec() }
            }
            "polynomial" => Kind::Polynomial { coeffs: p },
            "convolution" => {
                let [height, width] = r
                    .kernel_shape
                    .ok_or_else(|| Error::Format("convolution needs kernel_shape".into()))?;
                Kind::Convolution { kernel: p, height, width }
            }
            other => {
                return Err(Error::Format(format!("unknown estimator kind {other:?} or bad parameter count")))
            }
        };
        let e = Estimator { kind, range_map: r.range_map };
        e.validate()?;
        Ok(e)
    }
}

impl<T: Scalar> Estimator<T> {
    pub fn identity() -> Self {
        Self { kind: Kind::Identity, range_map: RangeMap::None }
    }

    pub fn constant(value: Vec<T>) -> Self {
        Self { kind: Kind::Constant { value }, range_map: RangeMap::None }
    }

    pub fn affine(gain: T, bias: T) -> Self {
        Self::affine_per_pixel(vec![gain], vec![bias])
    }

    pub fn affine_per_pixel(gain: Vec<T>, bias: Vec<T>) -> Self {
        Self { kind: Kind::Affine { gain, bias }, range_map: RangeMap::None }
    }

    pub fn polynomial(coeffs: Vec<T>) -> Self {
        Self { kind: Kind::Polynomial { coeffs }, range_map: RangeMap::None }
    }

    pub fn convolution(kernel: Vec<T>, height: usize, width: usize) -> Self {
        Self { kind: Kind::Convolution { kernel, height, width }, range_map: RangeMap::None }
    }

    /// Kernel with a single one at the anchor.
    pub fn delta_kernel(height: usize, width: usize) -> Self {
        let mut k = vec![T::zero(); height * width];
        k[(height / 2) * width + width / 2] = T::one();
        Self::convolution(k, height, width)
    }

    pub fn with_range_map(mut self, range_map: RangeMap) -> Self {
        self.range_map = range_map;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            Kind::Identity => Ok(()),
            Kind::Constant { value } if value.is_empty() => Err(Error::invalid("constant needs a value")),
            Kind::Affine { gain, bias } if gain.len() != bias.len() || gain.is_empty() => {
                Err(Error::invalid("affine gain and bias must have the same nonzero length"))
            }
            Kind::Polynomial { coeffs } if coeffs.is_empty() || coeffs.len() > MAX_POLY_DEGREE + 1 => {
                Err(Error::invalid(format!("polynomial degree must lie in 0..={MAX_POLY_DEGREE}")))
            }
            Kind::Convolution { kernel, height, width }
                if *height == 0 || *width == 0 || kernel.len() != height * width =>
            {
                Err(Error::invalid("kernel length must equal height * width"))
            }
            _ => Ok(()),
        }
    }

    /// Flat parameter vector.
    pub fn params(&self) -> Vec<T> {
        match &self.kind {
            Kind::Identity => vec![],
            Kind::Constant { value } => value.clone(),
            Kind::Affine { gain, bias } => gain.iter().chain(bias).copied().collect(),
            Kind::Polynomial { coeffs } => coeffs.clone(),
            Kind::Convolution { kernel, .. } => kernel.clone(),
        }
    }

    pub fn num_params(&self) -> usize {
        match &self.kind {
            Kind::Identity => 0,
            Kind::Constant { value } => value.len(),
            Kind::Affine { gain, .. } => 2 * gain.len(),
            Kind::Polynomial { coeffs } => coeffs.len(),
            Kind::Convolution { kernel, .. } => kernel.len(),
        }
    }

    pub fn set_params(&mut self, p: &[T]) -> Result<()> {
        if p.len() != self.num_params() {
            return Err(Error::shape(format!("{} parameters", self.num_params()), p.len()));
        }
        match &mut self.kind {
            Kind::Identity => {}
            Kind::Constant { value } => value.copy_from_slice(p),
            Kind::Affine { gain, bias } => {
                let m = gain.len();
                gain.copy_from_slice(&p[..m]);
                bias.copy_from_slice(&p[m..]);
            }
            Kind::Polynomial { coeffs } => coeffs.copy_from_slice(p),
            Kind::Convolution { kernel, .. } => kernel.copy_from_slice(p),
        }
        Ok(())
    }

    fn broadcast_index(len: usize, n: usize, i: usize) -> Result<usize> {
        match len {
            1 => Ok(0),
            l if l == n => Ok(i),
            l => Err(Error::shape(format!("1 or {n} per-pixel parameters"), l)),
        }
    }

    /// Output of the linear part before the range map.
    pub fn linear(&self, y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        self.validate()?;
        let n = y.len();
        let out = match &self.kind {
            Kind::Identity => y.clone(),
            Kind::Constant { value } => {
                let mut out = ImageTensor::zeros(y.shape());
                for i in 0..n {
                    out[i] = value[Self::broadcast_index(value.len(), n, i)?];
                }
                out
            }
            Kind::Affine { gain, bias } => {
                let mut out = ImageTensor::zeros(y.shape());
                for i in 0..n {
                    let j = Self::broadcast_index(gain.len(), n, i)?;
                    out[i] = gain[j] * y[i] + bias[j];
                }
                out
            }
            Kind::Polynomial { coeffs } => y.map(|v| horner(coeffs, v)),
            Kind::Convolution { kernel, height, width } => {
                let (h, w) = y.shape().dims();
                let mut out = ImageTensor::zeros(y.shape());
                for r in 0..h {
                    for c in 0..w {
                        let mut acc = T::zero();
                        for (ki, kj, k) in taps(kernel, *height, *width) {
                            acc += k * y[wrap(r, ki, h) * w + wrap(c, kj, w)];
                        }
                        out[r * w + c] = acc;
                    }
                }
                out
            }
        };
        Ok(out)
    }

    /// `∂uᵢ/∂yᵢ` of the linear part.
    fn linear_diag(&self, y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let n = y.len();
        Ok(match &self.kind {
            Kind::Identity => ImageTensor::filled(y.shape(), T::one()),
            Kind::Constant { .. } => ImageTensor::zeros(y.shape()),
            Kind::Affine { gain, .. } => {
                let mut out = ImageTensor::zeros(y.shape());
                for i in 0..n {
                    out[i] = gain[Self::broadcast_index(gain.len(), n, i)?];
                }
                out
            }
            Kind::Polynomial { coeffs } => {
                let d: Vec<T> = coeffs.iter().enumerate().skip(1).map(|(k, &c)| c * T::from_count(k)).collect();
                y.map(|v| if d.is_empty() { T::zero() } else { horner(&d, v) })
            }
            Kind::Convolution { kernel, height, width } => {
                let (h, w) = y.shape().dims();
                // Taps that wrap back onto the output pixel itself.
                let mut s = T::zero();
                for (ki, kj, k) in taps(kernel, *height, *width) {
                    if wrap(0, ki, h) == 0 && wrap(0, kj, w) == 0 {
                        s += k;
                    }
                }
                ImageTensor::filled(y.shape(), s)
            }
        })
    }

    /// Vector-Jacobian product with respect to the parameters:
    /// `Σᵢ gᵢ ∂fᵢ/∂θ` for upstream gradient `g = ∂L/∂f`.
    pub fn param_vjp(&self, y: &ImageTensor<T>, upstream: &ImageTensor<T>) -> Result<Vec<T>> {
        y.ensure_same_shape(upstream)?;
        let n = y.len();
        let u = self.linear(y)?;
        let g: Vec<T> = (0..n).map(|i| upstream[i] * self.range_map.derivative(u[i])).collect();
        let mut grad = vec![T::zero(); self.num_params()];
        match &self.kind {
            Kind::Identity => {}
            Kind::Constant { value } => {
                for (i, gi) in g.iter().enumerate() {
                    grad[Self::broadcast_index(value.len(), n, i)?] += *gi;
                }
            }
            Kind::Affine { gain, .. } => {
                let m = gain.len();
                for (i, gi) in g.iter().enumerate() {
                    let j = Self::broadcast_index(m, n, i)?;
                    grad[j] += *gi * y[i];
                    grad[m + j] += *gi;
                }
            }
            Kind::Polynomial { coeffs } => {
                for (i, gi) in g.iter().enumerate() {
                    let mut p = T::one();
                    for slot in grad.iter_mut().take(coeffs.len()) {
                        *slot += *gi * p;
                        p *= y[i];
                    }
                }
            }
            Kind::Convolution { kernel, height, width } => {
                let (h, w) = y.shape().dims();
                for (t, (ki, kj, _)) in taps(kernel, *height, *width).enumerate() {
                    let mut acc = T::zero();
                    for r in 0..h {
                        for c in 0..w {
                            acc += g[r * w + c] * y[wrap(r, ki, h) * w + wrap(c, kj, w)];
                        }
                    }
                    grad[t] = acc;
                }
            }
        }
        Ok(grad)
    }
}

fn horner<T: Scalar>(coeffs: &[T], v: T) -> T {
    coeffs.iter().rev().fold(T::zero(), |acc, &c| acc * v + c)
}

/// `(row offset, col offset, weight)` for every kernel tap.
fn taps<T: Scalar>(kernel: &[T], height: usize, width: usize) -> impl Iterator<Item = (isize, isize, T)> + '_ {
    let (ch, cw) = ((height / 2) as isize, (width / 2) as isize);
    kernel
        .iter()
        .enumerate()
        .map(move |(t, &k)| ((t / width) as isize - ch, (t % width) as isize - cw, k))
}

fn wrap(i: usize, offset: isize, n: usize) -> usize {
    (i as isize + offset).rem_euclid(n as isize) as usize
}

impl<T: Scalar> Denoiser<T> for Estimator<T> {
    fn apply(&self, y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let u = self.linear(y)?;
        if self.range_map.is_identity() {
            return Ok(u);
        }
        Ok(u.map(|v| self.range_map.value(v)))
    }

    fn diag_jacobian(&self, y: &ImageTensor<T>) -> Result<ImageTensor<T>> {
        let d = self.linear_diag(y)?;
        if self.range_map.is_identity() {
            return Ok(d);
        }
        let u = self.linear(y)?;
        u.zip_map(&d, |ui, di| self.range_map.derivative(ui) * di)
    }

    fn is_pixelwise(&self) -> bool {
        match &self.kind {
            Kind::Convolution { kernel, .. } => kernel.len() == 1,
            _ => true,
        }
    }
}

/// Central finite-difference estimate of `∂ᵏfᵢ/∂yᵢᵏ` at `y`, `k ∈ 1..=4`.
pub fn fd_derivative<T, F>(f: &F, y: &ImageTensor<T>, i: usize, order: usize, h: T) -> Result<T>
where
    T: Scalar,
    F: Denoiser<T> + ?Sized,
{
    if i >= y.len() {
        return Err(Error::invalid(format!("pixel {i} out of range for {} pixels", y.len())));
    }
    let stencil: &[(i32, f64)] = match order {
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        4 => &[(-2, 1.0), (-1, -4.0), (0, 6.0), (1, -4.0), (2, 1.0)],
        _ => return Err(Error::invalid(format!("derivative order must lie in 1..=4, got {order}"))),
    };
    if !(h > T::zero()) || y[i] + h == y[i] || !(h.powi(order as i32) > T::zero()) {
        return Err(Error::invalid(format!("finite-difference step {h} underflows at y = {}", y[i])));
    }
    let mut acc = T::zero();
    let mut probe = y.clone();
    for &(s, c) in stencil {
        probe[i] = y[i] + T::lit(s as f64) * h;
        acc += T::lit(c) * f.apply(&probe)?[i];
    }
    Ok(acc / h.powi(order as i32))
}

/// How parameter gradients are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum GradientMode {
    Analytic,
    FiniteDifference { h: f64 },
}

/// Gradient-descent settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub step_size: f64,
    pub epochs: usize,
    /// Samples per step; `0` means the full dataset.
    pub batch_size: usize,
    pub seed: u64,
    pub gradient: GradientMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { step_size: 0.1, epochs: 100, batch_size: 0, seed: 0, gradient: GradientMode::Analytic }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size must be positive"));
        }
        if let GradientMode::FiniteDifference { h } = self.gradient {
            if !(h > 0.0) {
                return Err(Error::invalid("finite-difference step must be positive"));
            }
        }
        Ok(())
    }
}

/// A loss over a dataset, evaluated one mini-batch at a time.
///
/// `prepare` fixes all randomness of a step (for example the splits of the
/// batch) so that `loss` is a deterministic function of the parameters.
pub trait TrainObjective<T: Scalar> {
    fn num_samples(&self) -> usize;

    fn prepare(&mut self, batch: &[usize], rng: &mut RandomStream) -> Result<()>;

    /// Mean per-pixel loss over the prepared batch.
    fn loss(&self, est: &Estimator<T>) -> Result<T>;

    /// Analytic gradient of [`TrainObjective::loss`], when available.
    fn gradient(&self, _est: &Estimator<T>) -> Option<Result<Vec<T>>> {
        None
    }
}

/// Trained estimator and the mean loss of every epoch.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    pub estimator: Estimator<T>,
    pub loss_curve: Vec<f64>,
}

/// Plain mini-batch gradient descent.
pub fn train<T: Scalar>(
    init: &Estimator<T>,
    objective: &mut dyn TrainObjective<T>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    init.validate()?;
    let n = objective.num_samples();
    if n == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    let batch = if cfg.batch_size == 0 { n } else { cfg.batch_size.min(n) };
    let mut rng = stream(cfg.seed);
    let mut est = init.clone();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let step = T::lit(cfg.step_size);
    for epoch in 0..cfg.epochs {
        if batch < n {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut steps = 0usize;
        for chunk in order.chunks(batch) {
            objective.prepare(chunk, &mut rng)?;
            let last = est.params();
            let diverged = || Error::Divergence { epoch, last_params: last.iter().map(|v| v.as_f64()).collect() };
            let loss = objective.loss(&est)?;
            let grad = match cfg.gradient {
                GradientMode::Analytic => match objective.gradient(&est) {
                    Some(g) => g?,
                    None => fd_gradient(objective, &est, 1e-6)?,
                },
                GradientMode::FiniteDifference { h } => fd_gradient(objective, &est, h)?,
            };
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged());
            }
            let next: Vec<T> = last.iter().zip(&grad).map(|(&p, &g)| p - step * g).collect();
            if next.iter().any(|p| !p.is_finite()) {
                return Err(diverged());
            }
            est.set_params(&next)?;
            epoch_loss += loss.as_f64();
            steps += 1;
        }
        curve.push(epoch_loss / steps as f64);
        log::debug!("epoch {epoch}: loss {}", curve[epoch]);
    }
    Ok(TrainOutcome { estimator: est, loss_curve: curve })
}

fn fd_gradient<T: Scalar>(objective: &dyn TrainObjective<T>, est: &Estimator<T>, h: f64) -> Result<Vec<T>> {
    let p = est.params();
    let mut probe = est.clone();
    let h = T::lit(h);
    let two_h = h + h;
    let mut grad = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let mut q = p.clone();
        q[j] = p[j] + h;
        probe.set_params(&q)?;
        let up = objective.loss(&probe)?;
        q[j] = p[j] - h;
        probe.set_params(&q)?;
        let down = objective.loss(&probe)?;
        grad.push((up - down) / two_h);
    }
    Ok(grad)
}

enum PairSource<T: Scalar> {
    Fixed { inputs: Vec<ImageTensor<T>>, targets: Vec<ImageTensor<T>> },
    Split { model: NoiseModel<T>, alpha: f64, observations: Vec<ImageTensor<T>> },
}

/// Losses of the form `Σᵢ ℓ(fᵢ(input), targetᵢ)` over input/target pairs.
///
/// Pairs are either fixed (supervised) or fresh splits `(y₁, y₂)` of each
/// observation, drawn anew at every step.
pub struct PairObjective<T: Scalar> {
    source: PairSource<T>,
    loss: PixelLoss<T>,
    batch: Vec<(ImageTensor<T>, ImageTensor<T>)>,
}

impl<T: Scalar> PairObjective<T> {
    pub fn supervised(inputs: Vec<ImageTensor<T>>, targets: Vec<ImageTensor<T>>, loss: PixelLoss<T>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::shape(inputs.len(), targets.len()));
        }
        for (a, b) in inputs.iter().zip(&targets) {
            a.ensure_same_shape(b)?;
        }
        Ok(Self { source: PairSource::Fixed { inputs, targets }, loss, batch: vec![] })
    }

    pub fn split(model: NoiseModel<T>, alpha: f64, observations: Vec<ImageTensor<T>>, loss: PixelLoss<T>) -> Result<Self> {
        crate::splitters::check_split_params(&model, alpha)?;
        Ok(Self { source: PairSource::Split { model, alpha, observations }, loss, batch: vec![] })
    }
}

impl<T: Scalar> TrainObjective<T> for PairObjective<T> {
    fn num_samples(&self) -> usize {
        match &self.source {
            PairSource::Fixed { inputs, .. } => inputs.len(),
            PairSource::Split { observations, .. } => observations.len(),
        }
    }

    fn prepare(&mut self, batch: &[usize], rng: &mut RandomStream) -> Result<()> {
        self.batch.clear();
        for &i in batch {
            let pair = match &self.source {
                PairSource::Fixed { inputs, targets } => (inputs[i].clone(), targets[i].clone()),
                PairSource::Split { model, alpha, observations } => {
                    let p = split(model, &observations[i], *alpha, rng)?;
                    (p.y1, p.y2)
                }
            };
            self.batch.push(pair);
        }
        Ok(())
    }

    fn loss(&self, est: &Estimator<T>) -> Result<T> {
        let mut total = T::zero();
        for (input, target) in &self.batch {
            let out = est.apply(input)?;
            let mut s = T::zero();
            for i in 0..out.len() {
                s += self.loss.value(out[i], target[i]);
            }
            total += s / T::from_count(out.len().max(1));
        }
        Ok(total / T::from_count(self.batch.len().max(1)))
    }

    fn gradient(&self, est: &Estimator<T>) -> Option<Result<Vec<T>>> {
        let run = || -> Result<Vec<T>> {
            let mut grad = vec![T::zero(); est.num_params()];
            let scale_b = T::one() / T::from_count(self.batch.len().max(1));
            for (input, target) in &self.batch {
                let out = est.apply(input)?;
                let scale = scale_b / T::from_count(out.len().max(1));
                let up = out.zip_map(target, |f, t| self.loss.derivative(f, t) * scale)?;
                for (g, v) in grad.iter_mut().zip(est.param_vjp(input, &up)?) {
                    *g += v;
                }
            }
            Ok(grad)
        };
        Some(run())
    }
}
