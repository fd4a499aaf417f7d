//! Brute-force reference computations: exact enumeration of discrete split
//! laws, Gauss–Hermite quadrature, Monte-Carlo means with confidence bands and
//! Bayes posteriors for finite priors.
//!
//! Everything here runs in `f64` and shares no code path with the samplers it
//! is used to check.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::io_formats::fmt_f64;
use crate::nef_models::NoiseModel;
use crate::rng::{stream, RandomStream};
use crate::scalar::Scalar;
use crate::splitters::{binomial_split_successes, check_split_params};

/// Default truncation for Poisson enumeration.
pub const DEFAULT_TAIL_EPS: f64 = 1e-12;

/// One point of the joint law of `(z, ω)` and the values it induces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    /// Count of the observation (`y/γ` or `ℓ y`).
    pub z: u64,
    pub omega: u64,
    pub y: f64,
    pub y1: f64,
    pub y2: f64,
    /// Joint probability of the atom.
    pub p: f64,
    /// Split weight `p(ω | z)`, which never involves `x`.
    pub p_omega: f64,
}

impl Atom {
    /// Count that determines `y₁` (`z − ω`).
    pub fn k1(&self) -> u64 {
        self.z - self.omega
    }
}

/// Finite support of a split law with probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumerationGrid {
    pub atoms: Vec<Atom>,
    /// Probability of the truncated tail (zero for Binomial).
    pub tail_mass_dropped: f64,
}

impl EnumerationGrid {
    /// Sum of the retained probabilities, `1 − tail_mass_dropped` up to rounding.
    pub fn total_probability(&self) -> f64 {
        neumaier(self.atoms.iter().map(|a| a.p))
    }

    /// Marginal law of the observation count `z`, ordered by `z`.
    pub fn marginal_z(&self) -> Vec<(u64, f64)> {
        marginal_by(&self.atoms, |a| a.z)
    }

    /// Marginal law of `y₁`, keyed by the count `z − ω`, ordered by that count.
    pub fn marginal_y1(&self) -> Vec<(f64, f64)> {
        let m = marginal_by(&self.atoms, Atom::k1);
        m.into_iter()
            .map(|(k, p)| {
                let y1 = self.atoms.iter().find(|a| a.k1() == k).map(|a| a.y1).unwrap_or(f64::NAN);
                (y1, p)
            })
            .collect()
    }

    /// Conditional weights `p(ω | z)` of the atoms with the given `z`.
    pub fn conditional_omega(&self, z: u64) -> Vec<(u64, f64)> {
        self.atoms.iter().filter(|a| a.z == z).map(|a| (a.omega, a.p_omega)).collect()
    }

    /// Writes `atom, probability, y1, y2` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["atom", "probability", "y1", "y2"])?;
        for (i, a) in self.atoms.iter().enumerate() {
            w.write_record([i.to_string(), fmt_f64(a.p), fmt_f64(a.y1), fmt_f64(a.y2)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn marginal_by(atoms: &[Atom], key: impl Fn(&Atom) -> u64) -> Vec<(u64, f64)> {
    let mut m = std::collections::BTreeMap::<u64, Vec<f64>>::new();
    for a in atoms {
        m.entry(key(a)).or_default().push(a.p);
    }
    m.into_iter().map(|(k, ps)| (k, neumaier(ps.into_iter()))).collect()
}

/// Compensated summation.
pub fn neumaier(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Poisson pmf of `0..=Z` where the dropped tail `P(z > Z)` is below `tail_eps`.
///
/// Returns the pmf and the dropped mass, summed directly from the far tail.
pub fn poisson_truncated_pmf(lambda: f64, tail_eps: f64) -> (Vec<f64>, f64) {
    if lambda == 0.0 {
        return (vec![1.0], 0.0);
    }
    let hi = (lambda + 40.0 * lambda.sqrt() + 60.0).ceil() as usize;
    let ln_l = lambda.ln();
    let pmf: Vec<f64> = (0..=hi)
        .map(|z| (-lambda + z as f64 * ln_l - ln_gamma(z as f64 + 1.0)).exp())
        .collect();
    // suffix[k] = P(z >= k), accumulated from the smallest terms upwards.
    let mut suffix = vec![0.0; hi + 2];
    for z in (0..=hi).rev() {
        suffix[z] = suffix[z + 1] + pmf[z];
    }
    let cut = (0..=hi).find(|&z| suffix[z + 1] < tail_eps).unwrap_or(hi);
    (pmf[..=cut].to_vec(), suffix[cut + 1])
}

/// Binomial pmf of `0..=n`.
pub fn binomial_pmf(n: u64, p: f64) -> Vec<f64> {
    (0..=n)
        .map(|k| {
            if p == 0.0 {
                return if k == 0 { 1.0 } else { 0.0 };
            }
            if p == 1.0 {
                return if k == n { 1.0 } else { 0.0 };
            }
            (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln()).exp()
        })
        .collect()
}

/// `P(ω = w)` for `w` successes in `draws` draws from `population` items with
/// `successes` successes, over the feasible range of `w`.
pub fn hypergeometric_pmf(population: u64, successes: u64, draws: u64) -> Vec<(u64, f64)> {
    let lo = draws.saturating_sub(population - successes);
    let hi = draws.min(successes);
    let denom = ln_binomial(population, draws);
    (lo..=hi)
        .map(|w| {
            let ln_p = ln_binomial(successes, w) + ln_binomial(population - successes, draws - w) - denom;
            (w, ln_p.exp())
        })
        .collect()
}

/// Law of `ω | z` as `(ω, p)` pairs for a discrete family.
fn omega_given_z<T: Scalar>(model: &NoiseModel<T>, z: u64, alpha: f64) -> Result<Vec<(u64, f64)>> {
    match *model {
        NoiseModel::Poisson { .. } => {
            Ok(binomial_pmf(z, alpha).into_iter().enumerate().map(|(w, p)| (w as u64, p)).collect())
        }
        NoiseModel::Binomial { looks } => {
            let m = binomial_split_successes(looks, alpha)?;
            Ok(hypergeometric_pmf(looks as u64, m, z))
        }
        _ => Err(unsupported(model)),
    }
}

fn unsupported<T: Scalar>(model: &NoiseModel<T>) -> Error {
    Error::Unsupported(format!("{} noise cannot be enumerated; use Monte-Carlo", model.family()))
}

fn atom_values<T: Scalar>(model: &NoiseModel<T>, z: u64, w: u64, alpha: f64) -> (f64, f64, f64) {
    let unit = match *model {
        NoiseModel::Poisson { gain } => gain.as_f64(),
        NoiseModel::Binomial { looks } => 1.0 / looks as f64,
        _ => f64::NAN,
    };
    let scale = |c: u64| match *model {
        NoiseModel::Binomial { looks } => c as f64 / looks as f64,
        _ => unit * c as f64,
    };
    (scale(z), scale(z - w) / (1.0 - alpha), scale(w) / alpha)
}

/// Joint law of `(y, y₁, y₂)` given a scalar mean `x`.
///
/// Poisson counts are truncated where the remaining mass drops below
/// `tail_eps`; Binomial is exact. Atoms of zero probability are omitted.
pub fn enumerate_split_law<T: Scalar>(
    model: &NoiseModel<T>,
    x: f64,
    alpha: f64,
    tail_eps: f64,
) -> Result<EnumerationGrid> {
    if !model.is_discrete() {
        return Err(unsupported(model));
    }
    check_split_params(model, alpha)?;
    model.check_mean(0, x)?;
    let (pz, tail) = match *model {
        NoiseModel::Poisson { gain } => {
            if !(tail_eps > 0.0 && tail_eps < 1.0) {
                return Err(Error::invalid(format!("tail_eps must lie in (0, 1), got {tail_eps}")));
            }
            poisson_truncated_pmf(x / gain.as_f64(), tail_eps)
        }
        NoiseModel::Binomial { looks } => (binomial_pmf(looks as u64, x), 0.0),
        _ => unreachable!(),
    };
    let mut atoms = Vec::new();
    for (z, &p_z) in pz.iter().enumerate() {
        if p_z == 0.0 {
            continue;
        }
        let z = z as u64;
        for (w, p_w) in omega_given_z(model, z, alpha)? {
            let p = p_z * p_w;
            if p > 0.0 {
                let (y, y1, y2) = atom_values(model, z, w, alpha);
                atoms.push(Atom { z, omega: w, y, y1, y2, p, p_omega: p_w });
            }
        }
    }
    Ok(EnumerationGrid { atoms, tail_mass_dropped: tail })
}

/// Law of `(y₁, y₂)` given an observed scalar `y` (probabilities `p(ω | z)`).
pub fn enumerate_split_given_y<T: Scalar>(
    model: &NoiseModel<T>,
    y: f64,
    alpha: f64,
) -> Result<EnumerationGrid> {
    if !model.is_discrete() {
        return Err(unsupported(model));
    }
    check_split_params(model, alpha)?;
    let z = model.check_observation(0, y)?.unwrap_or(0);
    let atoms = omega_given_z(model, z, alpha)?
        .into_iter()
        .filter(|&(_, p)| p > 0.0)
        .map(|(w, p)| {
            let (y, y1, y2) = atom_values(model, z, w, alpha);
            Atom { z, omega: w, y, y1, y2, p, p_omega: p }
        })
        .collect();
    Ok(EnumerationGrid { atoms, tail_mass_dropped: 0.0 })
}

/// `Σ p · g(atom)` over the grid.
pub fn expected_functional(grid: &EnumerationGrid, mut g: impl FnMut(&Atom) -> f64) -> Result<f64> {
    let mut terms = Vec::with_capacity(grid.atoms.len());
    for (i, a) in grid.atoms.iter().enumerate() {
        let v = g(a);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("functional is {v} at atom {i} (y1 = {}, y2 = {})", a.y1, a.y2)));
        }
        terms.push(a.p * v);
    }
    Ok(neumaier(terms.into_iter()))
}

/// `E[x | y₁]` for a finite prior `[(x, weight)]`.
///
/// `y₁` is matched against the enumerated atoms with a relative tolerance of
/// `1e-9`.
pub fn toy_posterior_mean<T: Scalar>(
    prior: &[(f64, f64)],
    model: &NoiseModel<T>,
    alpha: f64,
    y1: f64,
    tail_eps: f64,
) -> Result<f64> {
    if prior.is_empty() {
        return Err(Error::invalid("prior must have at least one atom"));
    }
    let tol = 1e-9 * y1.abs().max(1.0);
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, w) in prior {
        if w < 0.0 {
            return Err(Error::invalid("prior weights must be nonnegative"));
        }
        let grid = enumerate_split_law(model, x, alpha, tail_eps)?;
        let lik = neumaier(grid.atoms.iter().filter(|a| (a.y1 - y1).abs() <= tol).map(|a| a.p));
        num += w * lik * x;
        den += w * lik;
    }
    if den == 0.0 {
        return Err(Error::invalid(format!("y1 = {y1} is not reachable under the prior")));
    }
    Ok(num / den)
}

/// Sample mean with a four-standard-error half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub samples: usize,
}

impl CiEstimate {
    pub fn contains(&self, v: f64) -> bool {
        (self.mean - v).abs() <= self.half_width
    }
}

/// Width of every confidence band, in standard errors.
pub const CI_SIGMAS: f64 = 4.0;

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default)]
pub struct RunningStats {
    n: usize,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, v: f64) {
        self.n += 1;
        let d = v - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (v - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn estimate(&self) -> CiEstimate {
        CiEstimate {
            mean: self.mean,
            half_width: CI_SIGMAS * (self.variance() / self.n.max(1) as f64).sqrt(),
            samples: self.n,
        }
    }
}

/// Mean of `functional(sampler(rng))` over `n` draws seeded by `seed`.
pub fn ci_expectation<X>(
    mut sampler: impl FnMut(&mut RandomStream) -> X,
    functional: impl Fn(&X) -> f64,
    n: usize,
    seed: u64,
) -> Result<CiEstimate> {
    if n < 100 {
        return Err(Error::invalid(format!("ci_expectation needs at least 100 samples, got {n}")));
    }
    let mut rng = stream(seed);
    let mut stats = RunningStats::default();
    for _ in 0..n {
        let v = functional(&sampler(&mut rng));
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("functional returned {v}")));
        }
        stats.push(v);
    }
    Ok(stats.estimate())
}

/// Nodes and weights for `E[g(Z)] ≈ Σ wᵢ g(tᵢ)`, `Z ~ N(0, 1)`.
///
/// Exact for polynomials of degree below `2n`.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 || n > 150 {
        return Err(Error::invalid(format!("gauss_hermite order must lie in 1..=150, got {n}")));
    }
    // Newton iteration on orthonormal Hermite polynomials (physicists' weight).
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let nf = n as f64;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = 0.0f64;
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 3e-14 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    let s = std::f64::consts::PI.sqrt();
    let nodes = x.iter().rev().map(|v| v * std::f64::consts::SQRT_2).collect();
    let weights = w.iter().rev().map(|v| v / s).collect();
    Ok((nodes, weights))
}
