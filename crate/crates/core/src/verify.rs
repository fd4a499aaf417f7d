//! The verification suite: every structural and statistical identity of the
//! splitting, loss, moment-matching, oracle and operator modules, run against
//! exact enumeration, quadrature or confidence bands, with a JSON report.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial as BinomialDist, Discrete, Poisson as PoissonDist};

use crate::additive_matching::{
    error_term, log_rayleigh_sample, maxent_sample, moment_residuals, r2r_additive_split, r2r_recombine, GdConfig,
    MomentSpec,
};
use crate::error::Result;
use crate::estimators::{Estimator, RangeMap};
use crate::inverse_ops::{make_bernoulli_mask, ForwardOperator, Transform, TransformGroup};
use crate::io_formats::{to_canonical_json, RunConfig};
use crate::losses::{
    expected_loss, gamma_series_coefficient, gr2r_mse, gr2r_nll, pure_limit_poisson, sure_gaussian, Conditioning,
    DivergenceMode, ExpectationMethod, ExpectedLossKind,
};
use crate::nef_models::NoiseModel;
use crate::oracles::{ci_expectation, enumerate_split_law, expected_functional, RunningStats};
use crate::rng::{stream, substream};
use crate::splitters::{split, split_statistics_exact, SplitPair};
use crate::tensor::{ImageTensor, Shape};

type Image = ImageTensor<f64>;

/// Outcome of one check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: String,
    pub module: String,
    pub description: String,
    pub passed: bool,
    /// Worst observed deviation in the units of `tolerance`.
    pub residual: f64,
    pub tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
    /// Check id to `"pass"` or `"fail"`.
    pub coverage: BTreeMap<String, String>,
}

impl VerifyReport {
    pub fn to_json(&self) -> Result<String> {
        to_canonical_json(self)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Sample sizes of the statistical checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Draws for confidence-band checks.
    pub draws: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, draws: 1_000_000 }
    }
}

struct Spec {
    id: &'static str,
    module: &'static str,
    description: &'static str,
    tolerance: f64,
    /// Returns the worst residual; the check passes when it is `<= tolerance`.
    run: fn(&Ctx) -> Result<f64>,
}

struct Ctx<'a> {
    opts: VerifyOptions,
    config: Option<&'a RunConfig>,
}

impl Ctx<'_> {
    fn rng(&self, id: u64) -> crate::rng::RandomStream {
        substream(self.opts.seed, id)
    }
}

fn pixel(v: f64) -> Image {
    ImageTensor::scalar(v)
}

fn poisson_grid() -> Vec<(NoiseModel<f64>, f64, f64)> {
    let mut out = Vec::new();
    for gain in [0.5, 1.0] {
        for x in [0.5, 1.0, 2.0] {
            for alpha in [0.15, 0.5] {
                out.push((NoiseModel::<f64>::poisson(gain).unwrap(), x, alpha));
            }
        }
    }
    for alpha in [0.1, 0.5] {
        for x in [0.3, 0.5] {
            out.push((NoiseModel::<f64>::binomial(10).unwrap(), x, alpha));
        }
    }
    out
}

const TAIL_EPS: f64 = 1e-12;

/// Deviation of `(1 − α)y₁ + αy₂` from `y`, in ulps of the largest term.
fn recombination_ulps(pair: &SplitPair<f64>, y: &Image) -> f64 {
    let r = pair.recombine();
    let a = pair.alpha;
    (0..y.len())
        .map(|i| {
            let scale = y[i].abs().max(((1.0 - a) * pair.y1[i]).abs()).max((a * pair.y2[i]).abs());
            let ulp = f64::EPSILON * scale.max(f64::MIN_POSITIVE);
            (r[i] - y[i]).abs() / ulp
        })
        .fold(0.0, f64::max)
}

fn spl_recombination(ctx: &Ctx) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut rng = ctx.rng(1);
    let models = [
        (NoiseModel::<f64>::gaussian(0.1)?, 0.5),
        (NoiseModel::<f64>::gamma(5)?, 0.2),
        (NoiseModel::<f64>::poisson(0.5)?, 0.15),
        (NoiseModel::<f64>::binomial(10)?, 0.3),
    ];
    for (m, alpha) in models {
        let x = ImageTensor::filled(Shape::vector(10_000), 0.4);
        let y = m.sample_noisy(&x, &mut rng)?;
        let pair = split(&m, &y, alpha, &mut rng)?;
        worst = worst.max(recombination_ulps(&pair, &y));
        // Discrete halves must be integer count splits.
        let scale = match m {
            NoiseModel::Poisson { gain } => Some(gain),
            NoiseModel::Binomial { looks } => Some(1.0 / looks as f64),
            _ => None,
        };
        if let Some(g) = scale {
            for i in 0..y.len() {
                let k1 = (1.0 - alpha) * pair.y1[i] / g;
                let w = alpha * pair.y2[i] / g;
                let z = y[i] / g;
                if k1.round() + w.round() != z.round() || (k1 - k1.round()).abs() > 1e-9 || (w - w.round()).abs() > 1e-9 {
                    return Ok(f64::INFINITY);
                }
            }
        }
    }
    Ok(worst)
}

fn exact_moment_residual(m: &NoiseModel<f64>, x: f64, alpha: f64) -> Result<f64> {
    let s = split_statistics_exact(m, x, alpha, TAIL_EPS)?;
    let v = m.variance_at(x);
    Ok([
        s.mean1 - x,
        s.mean2 - x,
        s.var1 - v / (1.0 - alpha),
        s.var2 - v / alpha,
        s.cov12,
    ]
    .iter()
    .fold(0.0, |a, r| a.max(r.abs())))
}

fn spl_discrete_moments(_: &Ctx) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (m, x, alpha) in poisson_grid() {
        worst = worst.max(exact_moment_residual(&m, x, alpha)?);
    }
    Ok(worst)
}

/// Largest `|mean − target| / half_width` of the five split moments; `≤ 1`
/// means every identity lies inside its 4-SE band.
fn sampled_moment_ratio(m: &NoiseModel<f64>, x: f64, alpha: f64, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = stream(seed);
    let xs = ImageTensor::filled(Shape::vector(draws), x);
    let y = m.sample_noisy(&xs, &mut rng)?;
    let p = split(m, &y, alpha, &mut rng)?;
    let v = m.variance_at(x);
    let mut stats: Vec<RunningStats> = (0..5).map(|_| RunningStats::default()).collect();
    for i in 0..draws {
        let (a, b) = (p.y1[i] - x, p.y2[i] - x);
        for (s, val) in stats.iter_mut().zip([a, b, a * a, b * b, a * b]) {
            s.push(val);
        }
    }
    let targets = [0.0, 0.0, v / (1.0 - alpha), v / alpha, 0.0];
    Ok(stats
        .iter()
        .zip(targets)
        .map(|(s, t)| {
            let e = s.estimate();
            (e.mean - t).abs() / e.half_width
        })
        .fold(0.0, f64::max))
}

fn spl_continuous_moments(ctx: &Ctx) -> Result<f64> {
    let a = sampled_moment_ratio(&NoiseModel::<f64>::gaussian(0.1)?, 0.5, 0.3, ctx.opts.draws, ctx.opts.seed ^ 0x51)?;
    let b = sampled_moment_ratio(&NoiseModel::<f64>::gamma(5)?, 0.5, 0.2, ctx.opts.draws, ctx.opts.seed ^ 0x52)?;
    Ok(a.max(b))
}

/// `p(ω | z)` read off grids at two different `x` agrees bit-exactly, and
/// with an independent binomial pmf.
fn spl_x_free(_: &Ctx) -> Result<f64> {
    let m = NoiseModel::<f64>::poisson(1.0)?;
    let alpha = 0.3;
    let g1 = enumerate_split_law(&m, 0.7, alpha, TAIL_EPS)?;
    let g2 = enumerate_split_law(&m, 3.0, alpha, TAIL_EPS)?;
    let mut worst: f64 = 0.0;
    for z in 0..8u64 {
        let (c1, c2) = (g1.conditional_omega(z), g2.conditional_omega(z));
        if c1 != c2 {
            return Ok(f64::INFINITY);
        }
        let reference = BinomialDist::new(alpha, z).expect("valid parameters");
        for (w, p) in c1 {
            worst = worst.max((p - reference.pmf(w)).abs());
        }
    }
    Ok(worst)
}

fn unbiasedness(kind_gr2r: ExpectedLossKind, kind_sup: ExpectedLossKind) -> Result<f64> {
    let method = ExpectationMethod::Enumerate { tail_eps: TAIL_EPS };
    let mut worst: f64 = 0.0;
    for (m, x, alpha) in poisson_grid() {
        let (f, g) = match (kind_sup, m) {
            (ExpectedLossKind::SupMse, _) => (Estimator::identity(), Estimator::affine(0.5, 0.0)),
            (_, NoiseModel::Binomial { .. }) => (
                Estimator::affine(2.0, -1.0).with_range_map(RangeMap::UnitInterval),
                Estimator::affine(0.5, 0.2).with_range_map(RangeMap::UnitInterval),
            ),
            _ => (
                Estimator::affine(0.8, 0.3).with_range_map(RangeMap::Positive),
                Estimator::affine(1.0, 0.0).with_range_map(RangeMap::Positive),
            ),
        };
        let xi = pixel(x);
        let e = |est: &Estimator<f64>, kind| expected_loss(&m, Conditioning::GivenX(&xi), alpha, est, kind, method);
        let lhs = e(&f, kind_gr2r)?.value - e(&g, kind_gr2r)?.value;
        let rhs = e(&f, kind_sup)?.value - e(&g, kind_sup)?.value;
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

fn los_unbiased_mse(_: &Ctx) -> Result<f64> {
    unbiasedness(ExpectedLossKind::Gr2rMse, ExpectedLossKind::SupMse)
}

fn los_unbiased_nll(_: &Ctx) -> Result<f64> {
    unbiasedness(ExpectedLossKind::Gr2rNll, ExpectedLossKind::SupNll)
}

/// Gaps `|Δ_gr2r(α) − Δ_SURE|` at α ∈ {0.1, 0.03, 0.01} for an affine estimator
/// against the identity, with 16 fixed Gaussian pixels.
pub fn sure_limit_gaps(seed: u64) -> Result<Vec<(f64, f64)>> {
    let sigma = 0.1;
    let m = NoiseModel::<f64>::gaussian(sigma)?;
    let mut rng = stream(seed);
    let x = ImageTensor::from_vec((0..16).map(|i| 0.2 + 0.04 * i as f64).collect());
    let y = m.sample_noisy(&x, &mut rng)?;
    let f = Estimator::affine(0.8, 0.05);
    let g = Estimator::identity();
    let sure = |e: &Estimator<f64>| sure_gaussian(e, &y, sigma, DivergenceMode::ExactDiagonal, &mut stream(0));
    let d_sure = sure(&f)?.value - sure(&g)?.value;
    let method = ExpectationMethod::Quadrature { order: 8 };
    [0.1, 0.03, 0.01]
        .into_iter()
        .map(|alpha| {
            let e = |est: &Estimator<f64>| {
                expected_loss(&m, Conditioning::GivenY(&y), alpha, est, ExpectedLossKind::Gr2rMse, method)
            };
            Ok((alpha, (e(&f)?.value - e(&g)?.value - d_sure).abs()))
        })
        .collect()
}

/// `|Δ_gr2r(α) − Δ_PURE|` at α = 0.01 for 16 fixed Poisson pixels.
pub fn pure_limit_gap(seed: u64) -> Result<f64> {
    let gain = 0.1;
    let m = NoiseModel::<f64>::poisson(gain)?;
    let mut rng = stream(seed);
    // Counts up to 6 keep the enumeration small.
    let y = ImageTensor::from_vec((0..16).map(|_| gain * rng.random_range(0..=6u32) as f64).collect());
    let f = Estimator::affine(0.95, 0.01);
    let g = Estimator::identity();
    let d_pure = pure_limit_poisson(&f, &y, gain)?.value - pure_limit_poisson(&g, &y, gain)?.value;
    let alpha = 0.01;
    let method = ExpectationMethod::Enumerate { tail_eps: TAIL_EPS };
    let e = |est: &Estimator<f64>| expected_loss(&m, Conditioning::GivenY(&y), alpha, est, ExpectedLossKind::Gr2rMse, method);
    // E‖y₂‖² differs from ‖y‖² by a constant that cancels in the difference.
    Ok((e(&f)?.value - e(&g)?.value - d_pure).abs())
}

fn los_sure_limit(ctx: &Ctx) -> Result<f64> {
    let gaps = sure_limit_gaps(ctx.opts.seed)?;
    let ratios: Vec<f64> = gaps.iter().map(|(a, g)| g / a).collect();
    if ratios.windows(2).any(|w| w[1] > w[0]) {
        return Ok(f64::INFINITY);
    }
    Ok(gaps.last().map(|g| g.1).unwrap_or(f64::INFINITY))
}

fn los_pure_limit(ctx: &Ctx) -> Result<f64> {
    pure_limit_gap(ctx.opts.seed)
}

fn los_gaussian_nll_is_mse(ctx: &Ctx) -> Result<f64> {
    let m = NoiseModel::<f64>::gaussian(0.2)?;
    let mut rng = ctx.rng(7);
    let x = ImageTensor::filled(Shape::grid(8, 8), 0.5);
    let y = m.sample_noisy(&x, &mut rng)?;
    let pair = split(&m, &y, 0.4, &mut rng)?;
    let f = Estimator::affine(0.7, 0.1);
    let a = gr2r_mse(&f, &pair)?.value;
    let b = gr2r_nll(&m, &f, &pair)?.value;
    Ok(if a == b { 0.0 } else { (a - b).abs().max(f64::MIN_POSITIVE) })
}

fn los_series_coefficients(_: &Ctx) -> Result<f64> {
    for l in 1..=20u32 {
        if gamma_series_coefficient(l, 1) != 0.0 {
            return Ok(1.0);
        }
        for k in 2..=6u32 {
            let b = gamma_series_coefficient(l, k);
            if !(b > 0.0 && b < 1.0) || gamma_series_coefficient(l + 1, k) <= b {
                return Ok(1.0);
            }
        }
    }
    Ok(0.0)
}

/// Synthetic noise matched to log-Rayleigh moments, shared by the error-term checks.
fn matched_pool(ctx: &Ctx) -> Result<(Vec<f64>, Vec<f64>)> {
    let spec = MomentSpec::log_rayleigh(0.1, 3, 1.0)?;
    let cfg = GdConfig { rel_tol: 1e-3, ..GdConfig::default() };
    let omega: Image = maxent_sample(&spec, 100_000, &cfg, &mut ctx.rng(8))?;
    let eps: Image = log_rayleigh_sample(0.1, ctx.opts.draws, &mut ctx.rng(9))?;
    Ok((eps.into_vec(), omega.into_vec()))
}

fn add_error_term(ctx: &Ctx, k: i32) -> Result<f64> {
    let (eps, omega) = matched_pool(ctx)?;
    let e = error_term(&eps, &omega, 1.0, k)?;
    Ok(e.mean.abs() / e.half_width)
}

fn add_first_order(ctx: &Ctx) -> Result<f64> {
    add_error_term(ctx, 1)
}

fn add_second_order(ctx: &Ctx) -> Result<f64> {
    add_error_term(ctx, 2)
}

fn add_stopping_rule(ctx: &Ctx) -> Result<f64> {
    let eps: Image = log_rayleigh_sample(0.1, 100_000, &mut ctx.rng(10))?;
    let spec = crate::additive_matching::target_moments(&eps, 3, 1.0)?;
    let z: Image = maxent_sample(&spec, 100_000, &GdConfig::default(), &mut ctx.rng(11))?;
    Ok(moment_residuals(&z, &spec).into_iter().fold(0.0, f64::max))
}

fn add_recombination(ctx: &Ctx) -> Result<f64> {
    let mut rng = ctx.rng(12);
    let mut worst: f64 = 0.0;
    for tau in [0.5, 1.0, 2.0] {
        let y: Image = ImageTensor::from_vec((0..1000).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w: Image = ImageTensor::from_vec((0..1000).map(|_| rng.random_range(-0.3..0.3)).collect());
        let pair = r2r_additive_split(&y, &w, tau)?;
        let r = r2r_recombine(&pair, tau)?;
        for i in 0..y.len() {
            let scale = y[i].abs().max(pair.y1[i].abs()).max(pair.y2[i].abs());
            worst = worst.max((r[i] - y[i]).abs() / (f64::EPSILON * scale));
        }
    }
    Ok(worst)
}

fn orc_x_free_weights(_: &Ctx) -> Result<f64> {
    let m = NoiseModel::<f64>::binomial(10)?;
    let a = enumerate_split_law(&m, 0.3, 0.3, TAIL_EPS)?;
    let b = enumerate_split_law(&m, 0.6, 0.3, TAIL_EPS)?;
    for z in 0..=10 {
        if a.conditional_omega(z) != b.conditional_omega(z) {
            return Ok(1.0);
        }
    }
    Ok(0.0)
}

fn orc_marginals(_: &Ctx) -> Result<f64> {
    let mut worst_binomial: f64 = 0.0;
    let m = NoiseModel::<f64>::binomial(10)?;
    for x in [0.1, 0.3, 0.5, 0.9] {
        let grid = enumerate_split_law(&m, x, 0.3, TAIL_EPS)?;
        let reference = BinomialDist::new(x, 10).expect("valid parameters");
        for (z, p) in grid.marginal_z() {
            worst_binomial = worst_binomial.max((p - reference.pmf(z)).abs());
        }
    }
    let mut worst_poisson: f64 = 0.0;
    let m = NoiseModel::<f64>::poisson(0.5)?;
    for x in [0.2, 1.0, 4.0] {
        let grid = enumerate_split_law(&m, x, 0.3, TAIL_EPS)?;
        let reference = PoissonDist::new(x / 0.5).expect("valid parameters");
        for (z, p) in grid.marginal_z() {
            worst_poisson = worst_poisson.max((p - reference.pmf(z)).abs());
        }
    }
    // Reported in units of the per-atom tolerance 1e-14; the Poisson side
    // must stay within tail_eps.
    if worst_poisson > TAIL_EPS {
        return Ok(f64::INFINITY);
    }
    Ok(worst_binomial / 1e-14)
}

fn orc_ci_coverage(ctx: &Ctx) -> Result<f64> {
    let m = NoiseModel::<f64>::poisson(1.0)?;
    let (x, alpha) = (1.0, 0.5);
    let grid = enumerate_split_law(&m, x, alpha, TAIL_EPS)?;
    let exact = expected_functional(&grid, |a| a.y1 * a.y1)?;
    let reps = 200;
    let mut hits = 0;
    for r in 0..reps {
        let est = ci_expectation(
            |rng| {
                let y = m.sample_scalar(x, rng);
                split(&m, &pixel(y), alpha, rng).map(|p| p.y1[0]).unwrap_or(f64::NAN)
            },
            |y1| y1 * y1,
            1000,
            ctx.opts.seed.wrapping_add(1000 + r),
        )?;
        hits += est.contains(exact) as usize;
    }
    // Fraction of misses; at most 1%.
    Ok(1.0 - hits as f64 / reps as f64)
}

fn random_image(rng: &mut impl Rng, shape: Shape) -> Image {
    ImageTensor::new((0..shape.len()).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).expect("sizes agree")
}

fn inv_adjoint(ctx: &Ctx) -> Result<f64> {
    let mut rng = ctx.rng(13);
    let shape = Shape::grid(6, 5);
    let out_shape = Shape::vector(7);
    let ops = vec![
        ForwardOperator::identity(shape),
        make_bernoulli_mask(shape, 0.6, ctx.opts.seed)?,
        ForwardOperator::dense((0..7 * 30).map(|_| rng.random_range(-1.0..1.0)).collect(), shape, out_shape)?,
    ];
    let mut worst: f64 = 0.0;
    for op in &ops {
        for _ in 0..20 {
            let x = random_image(&mut rng, op.input_shape());
            let y = random_image(&mut rng, op.output_shape());
            let lhs = op.apply(&x)?.dot(&y)?;
            let rhs = x.dot(&op.adjoint(&y)?)?;
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

fn inv_bijection(ctx: &Ctx) -> Result<f64> {
    let mut rng = ctx.rng(14);
    let x = random_image(&mut rng, Shape::grid(5, 7));
    let sq = random_image(&mut rng, Shape::grid(6, 6));
    let mut transforms = TransformGroup::shifts(5, 7).elements;
    transforms.extend([Transform::FlipHorizontal, Transform::FlipVertical]);
    for t in &transforms {
        if t.inverse().apply(&t.apply(&x)?)? != x {
            return Ok(1.0);
        }
    }
    for t in &TransformGroup::rotations().elements {
        if t.inverse().apply(&t.apply(&sq)?)? != sq {
            return Ok(1.0);
        }
    }
    Ok(0.0)
}

fn inv_idempotent(ctx: &Ctx) -> Result<f64> {
    let mut rng = ctx.rng(15);
    let shape = Shape::grid(8, 8);
    for p in [0.1, 0.5, 0.9, 1.0] {
        let op = make_bernoulli_mask::<f64>(shape, p, ctx.opts.seed)?;
        let x = random_image(&mut rng, shape);
        let once = op.apply(&x)?;
        if op.apply(&once)? != once {
            return Ok(1.0);
        }
    }
    Ok(0.0)
}

fn configured(ctx: &Ctx) -> Option<(NoiseModel<f64>, f64)> {
    ctx.config.map(|c| (c.model, c.alpha()))
}

fn cfg_recombination(ctx: &Ctx) -> Result<f64> {
    let Some((m, alpha)) = configured(ctx) else { return Ok(0.0) };
    let mut rng = ctx.rng(16);
    let x = ImageTensor::filled(Shape::vector(10_000), 0.5);
    let y = m.sample_noisy(&x, &mut rng)?;
    Ok(recombination_ulps(&split(&m, &y, alpha, &mut rng)?, &y))
}

fn cfg_moments(ctx: &Ctx) -> Result<f64> {
    let Some((m, alpha)) = configured(ctx) else { return Ok(0.0) };
    if m.is_discrete() {
        // Reported against the 4-SE scale of the continuous case: 1e-8 maps to 1.
        Ok(exact_moment_residual(&m, 0.5, alpha)? / 1e-8)
    } else {
        sampled_moment_ratio(&m, 0.5, alpha, ctx.opts.draws, ctx.opts.seed ^ 0x53)
    }
}

fn specs() -> Vec<Spec> {
    vec![
        Spec { id: "SPL-1", module: "splitters", description: "recombination (1-α)y1 + αy2 = y; integer count splits for discrete families", tolerance: 2.0, run: spl_recombination },
        Spec { id: "SPL-2", module: "splitters", description: "exact split moments for Poisson and Binomial grids", tolerance: 1e-8, run: spl_discrete_moments },
        Spec { id: "SPL-3", module: "splitters", description: "sampled split moments for Gaussian and Gamma inside 4-SE bands", tolerance: 1.0, run: spl_continuous_moments },
        Spec { id: "SPL-4", module: "splitters", description: "p(ω|z) is the x-free Binomial(z, α) pmf", tolerance: 1e-14, run: spl_x_free },
        Spec { id: "LOS-1", module: "losses", description: "gr2r_mse differences equal supervised differences on y1", tolerance: 1e-8, run: los_unbiased_mse },
        Spec { id: "LOS-2", module: "losses", description: "gr2r_nll differences equal supervised NLL differences on y1", tolerance: 1e-8, run: los_unbiased_nll },
        Spec { id: "LOS-3", module: "losses", description: "Gaussian gr2r differences approach SURE with O(α) gap", tolerance: 1e-3, run: los_sure_limit },
        Spec { id: "LOS-4", module: "losses", description: "Poisson gr2r differences approach the PURE-type limit", tolerance: 1e-3, run: los_pure_limit },
        Spec { id: "LOS-5", module: "losses", description: "Gaussian gr2r_nll equals gr2r_mse bit-exactly", tolerance: 0.0, run: los_gaussian_nll_is_mse },
        Spec { id: "LOS-6", module: "losses", description: "series coefficients: b(l,1) = 0, b(l,k) in (0,1), increasing in l", tolerance: 0.0, run: los_series_coefficients },
        Spec { id: "ADD-1", module: "additive_matching", description: "first-order error term vanishes with matched second moments", tolerance: 1.0, run: add_first_order },
        Spec { id: "ADD-2", module: "additive_matching", description: "second-order error term vanishes with matched third moments", tolerance: 1.0, run: add_second_order },
        Spec { id: "ADD-3", module: "additive_matching", description: "maxent output meets the stopping rule", tolerance: 0.1, run: add_stopping_rule },
        Spec { id: "ADD-4", module: "additive_matching", description: "weighted recombination of the additive split returns y", tolerance: 4.0, run: add_recombination },
        Spec { id: "ORC-1", module: "oracles", description: "conditional split weights identical across x", tolerance: 0.0, run: orc_x_free_weights },
        Spec { id: "ORC-2", module: "oracles", description: "grid marginals reproduce the family pmf", tolerance: 1.0, run: orc_marginals },
        Spec { id: "ORC-3", module: "oracles", description: "4-SE intervals cover enumerated means in at least 99% of repetitions", tolerance: 0.01, run: orc_ci_coverage },
        Spec { id: "INV-1", module: "inverse_ops", description: "adjoint identity <Ax, y> = <x, A^T y>", tolerance: 1e-10, run: inv_adjoint },
        Spec { id: "INV-2", module: "inverse_ops", description: "every transform is inverted bit-exactly", tolerance: 0.0, run: inv_bijection },
        Spec { id: "INV-3", module: "inverse_ops", description: "masks are idempotent", tolerance: 0.0, run: inv_idempotent },
        Spec { id: "CFG-1", module: "splitters", description: "recombination for the configured model", tolerance: 2.0, run: cfg_recombination },
        Spec { id: "CFG-2", module: "splitters", description: "split moments for the configured model", tolerance: 1.0, run: cfg_moments },
    ]
}

/// Identifiers of every check, in report order.
pub fn check_ids() -> Vec<&'static str> {
    specs().iter().map(|s| s.id).collect()
}

/// Runs the whole suite. Check failures and errors are recorded in the
/// report, never raised.
pub fn run_verify(config: Option<&RunConfig>, opts: VerifyOptions) -> VerifyReport {
    let ctx = Ctx { opts, config };
    let mut checks = Vec::new();
    for s in specs() {
        log::info!("running {}", s.id);
        let (residual, error) = match (s.run)(&ctx) {
            Ok(r) => (r, None),
            Err(e) => (f64::NAN, Some(e.to_string())),
        };
        let passed = error.is_none() && residual <= s.tolerance;
        checks.push(CheckResult {
            id: s.id.into(),
            module: s.module.into(),
            description: s.description.into(),
            passed,
            residual,
            tolerance: s.tolerance,
            error,
        });
    }
    let coverage = checks.iter().map(|c| (c.id.clone(), if c.passed { "pass" } else { "fail" }.to_string())).collect();
    VerifyReport { seed: opts.seed, passed: checks.iter().all(|c| c.passed), checks, coverage }
}
