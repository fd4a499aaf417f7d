//! Scalar samplers used by the noise models and the recorruption rules.
//!
//! Poisson, Gamma, Beta and Hypergeometric draws are implemented here so that
//! their exact behaviour (method, number of uniforms consumed) is fixed by this
//! crate. Normal, exponential and binomial draws come from `rand_distr`.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Exp1, StandardNormal};
use statrs::function::factorial::ln_factorial;

/// Means above this use transformed rejection; below, CDF inversion.
pub const POISSON_INVERSION_LIMIT: f64 = 30.0;

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn exponential<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    Exp1.sample(rng)
}

/// Poisson draw with mean `lambda >= 0`.
pub fn poisson<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    if lambda <= 0.0 {
        return 0;
    }
    if lambda <= POISSON_INVERSION_LIMIT {
        poisson_inversion(rng, lambda)
    } else {
        poisson_ptrs(rng, lambda)
    }
}

fn poisson_inversion<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cdf = p;
    // The cap only triggers when rounding leaves the accumulated CDF below u.
    let cap = (lambda + 40.0 * lambda.sqrt() + 40.0) as u64;
    while u > cdf && k < cap {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
    }
    k
}

// Hörmann's PTRS transformed rejection.
fn poisson_ptrs<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> u64 {
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -lambda + k * loglam - ln_factorial(k as u64);
        if lhs <= rhs {
            return k as u64;
        }
    }
}

/// Gamma draw with the given shape and unit scale (Marsaglia–Tsang).
pub fn gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    debug_assert!(shape > 0.0);
    if shape < 1.0 {
        // Boost: G(a) = G(a + 1) * U^(1/a).
        let u: f64 = rng.random();
        return gamma(rng, shape + 1.0) * u.powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = standard_normal(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = rng.random();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Beta draw as a ratio of two Gamma draws.
pub fn beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    loop {
        let x = gamma(rng, a);
        let y = gamma(rng, b);
        let s = x + y;
        if s > 0.0 {
            return x / s;
        }
    }
}

/// Binomial draw; `p` is clamped to `[0, 1]`.
pub fn binomial<R: Rng + ?Sized>(rng: &mut R, n: u64, p: f64) -> u64 {
    let p = p.clamp(0.0, 1.0);
    if n == 0 || p == 0.0 {
        return 0;
    }
    if p == 1.0 {
        return n;
    }
    match Binomial::new(n, p) {
        Ok(d) => d.sample(rng),
        Err(_) => unreachable!("p validated above"),
    }
}

/// Number of successes when drawing `draws` items without replacement from a
/// population of `population` items containing `successes` successes.
///
/// Sequential urn draws; exact for every input.
pub fn hypergeometric<R: Rng + ?Sized>(
    rng: &mut R,
    population: u64,
    successes: u64,
    draws: u64,
) -> u64 {
    debug_assert!(successes <= population && draws <= population);
    // Drawing n items or leaving N - n undrawn is symmetric; walk the shorter urn.
    let (walk, complement) = if draws * 2 > population {
        (population - draws, true)
    } else {
        (draws, false)
    };
    let mut remaining = population;
    let mut remaining_succ = successes;
    let mut hits = 0u64;
    for _ in 0..walk {
        if rng.random_range(0..remaining) < remaining_succ {
            hits += 1;
            remaining_succ -= 1;
        }
        remaining -= 1;
    }
    if complement {
        successes - hits
    } else {
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn mean_var(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    }

    #[test]
    fn poisson_moments_both_regimes() {
        let mut rng = stream(11);
        for &lambda in &[0.3, 4.0, 29.5, 31.0, 250.0] {
            let xs: Vec<f64> = (0..200_000).map(|_| poisson(&mut rng, lambda) as f64).collect();
            let (m, v) = mean_var(&xs);
            let se = (lambda / xs.len() as f64).sqrt();
            assert!((m - lambda).abs() < 4.0 * se, "lambda {lambda}: mean {m}");
            assert!((v / lambda - 1.0).abs() < 0.03, "lambda {lambda}: var {v}");
        }
    }

    #[test]
    fn poisson_zero_mean_is_degenerate() {
        let mut rng = stream(1);
        assert!((0..100).all(|_| poisson(&mut rng, 0.0) == 0));
    }

    #[test]
    fn gamma_and_beta_moments() {
        let mut rng = stream(5);
        for &shape in &[0.4, 1.0, 5.0] {
            let xs: Vec<f64> = (0..200_000).map(|_| gamma(&mut rng, shape)).collect();
            let (m, v) = mean_var(&xs);
            assert!((m - shape).abs() < 4.0 * (shape / 2e5).sqrt(), "shape {shape}: {m}");
            assert!((v / shape - 1.0).abs() < 0.05, "shape {shape}: var {v}");
        }
        let (a, b) = (1.0, 4.0);
        let xs: Vec<f64> = (0..200_000).map(|_| beta(&mut rng, a, b)).collect();
        let (m, v) = mean_var(&xs);
        let var = a * b / ((a + b).powi(2) * (a + b + 1.0));
        assert!((m - 0.2).abs() < 4.0 * (var / 2e5).sqrt());
        assert!((v / var - 1.0).abs() < 0.03);
    }

    #[test]
    fn hypergeometric_matches_pmf() {
        // population 10, 3 successes, 4 draws
        let mut rng = stream(3);
        let n = 200_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[hypergeometric(&mut rng, 10, 3, 4) as usize] += 1;
        }
        // C(3,k) C(7,4-k) / C(10,4)
        let pmf = [35.0 / 210.0, 105.0 / 210.0, 63.0 / 210.0, 7.0 / 210.0];
        for k in 0..4 {
            let p = counts[k] as f64 / n as f64;
            let se = (pmf[k] * (1.0 - pmf[k]) / n as f64).sqrt();
            assert!((p - pmf[k]).abs() < 4.0 * se, "k={k}: {p} vs {}", pmf[k]);
        }
        // complement path
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[(3 - hypergeometric(&mut rng, 10, 3, 6)) as usize] += 1;
        }
        for k in 0..4 {
            let p = counts[k] as f64 / n as f64;
            let se = (pmf[k] * (1.0 - pmf[k]) / n as f64).sqrt();
            assert!((p - pmf[k]).abs() < 4.0 * se);
        }
    }
}
