//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::time::{Duration, Instant};

use nef_split::additive_matching::{
    error_term, log_rayleigh_sample, maxent_sample, moment_residuals, target_moments, GdConfig, MomentSpec,
};
use nef_split::estimators::{train, PairObjective, TrainConfig};
use nef_split::inverse_ops::{make_bernoulli_mask, ForwardOperator, TransformGroup};
use nef_split::losses::{
    ei_loss, expected_loss, gamma_split_omega, gr2r_mse, gr2r_operator_mse, Conditioning, ExpectationMethod,
    ExpectedLossKind, PixelLoss,
};
use nef_split::oracles::{enumerate_split_law, toy_posterior_mean, RunningStats, CI_SIGMAS};
use nef_split::sampling::standard_normal;
use nef_split::splitters::{mc_inference, split, split_masked, split_statistics_exact};
use nef_split::verify::{pure_limit_gap, run_verify, sure_limit_gaps, VerifyOptions};
use nef_split::{io_formats::psnr, stream, substream, Estimator, Image, ImageTensor, Model, Shape};

struct Outcome {
    passed: bool,
    detail: String,
}

fn discrete_grid() -> Vec<(Model, f64, f64)> {
    let mut out = Vec::new();
    for gain in [0.5, 1.0] {
        for x in [0.5, 1.0, 2.0] {
            for alpha in [0.15, 0.5] {
                out.push((Model::poisson(gain).unwrap(), x, alpha));
            }
        }
    }
    for alpha in [0.1, 0.5] {
        for x in [0.3, 0.5] {
            out.push((Model::binomial(10).unwrap(), x, alpha));
        }
    }
    out
}

fn c1() -> Outcome {
    let mut worst: f64 = 0.0;
    for (m, x, alpha) in discrete_grid() {
        let s = split_statistics_exact(&m, x, alpha, 1e-12).unwrap();
        let v = m.variance_at(x);
        for r in [s.mean1 - x, s.mean2 - x, s.var1 - v / (1.0 - alpha), s.var2 - v / alpha, s.cov12] {
            worst = worst.max(r.abs());
        }
    }
    Outcome { passed: worst <= 1e-8, detail: format!("max moment residual {worst:.3e} (tol 1e-8)") }
}

fn c2() -> Outcome {
    let method = ExpectationMethod::Enumerate { tail_eps: 1e-12 };
    let f = Estimator::identity();
    let g = Estimator::affine(0.5, 0.0);
    let mut worst: f64 = 0.0;
    for (m, x, alpha) in discrete_grid() {
        let xi = Image::scalar(x);
        let e = |est: &Estimator<f64>, kind| {
            expected_loss(&m, Conditioning::GivenX(&xi), alpha, est, kind, method).unwrap().value
        };
        let lhs = e(&f, ExpectedLossKind::Gr2rMse) - e(&g, ExpectedLossKind::Gr2rMse);
        let rhs = e(&f, ExpectedLossKind::SupMse) - e(&g, ExpectedLossKind::SupMse);
        worst = worst.max((lhs - rhs).abs());
    }
    Outcome { passed: worst <= 1e-8, detail: format!("max |Δgr2r − Δsup| {worst:.3e} (tol 1e-8)") }
}

fn c3() -> Outcome {
    let m = Model::poisson(1.0).unwrap();
    let alpha = 0.5;
    let tail = 1e-15;
    let prior = [(1.0, 0.5), (2.0, 0.5)];
    // Joint weights of (y₁, y₂) under the prior, grouped by the y₁ count.
    let mut groups: std::collections::BTreeMap<u64, Vec<(f64, f64)>> = Default::default();
    for &(x, w) in &prior {
        for a in enumerate_split_law(&m, x, alpha, tail).unwrap().atoms {
            groups.entry(a.k1()).or_default().push((w * a.p, a.y2));
        }
    }
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (&k1, atoms) in &groups {
        let mass: f64 = atoms.iter().map(|a| a.0).sum();
        if mass < 1e-8 {
            continue;
        }
        let y1 = k1 as f64 / (1.0 - alpha);
        let nll = |c: f64| atoms.iter().map(|&(p, y2)| p * (c - y2 * c.ln())).sum::<f64>() / mass;
        let (best, _) = (1..=4000)
            .map(|i| i as f64 * 1e-3)
            .map(|c| (c, nll(c)))
            .fold((f64::NAN, f64::INFINITY), |acc, (c, v)| if v < acc.1 { (c, v) } else { acc });
        let post = toy_posterior_mean(&prior, &m, alpha, y1, tail).unwrap();
        worst = worst.max((best - post).abs());
        checked += 1;
    }
    Outcome {
        passed: worst <= 2e-3 && checked > 0,
        detail: format!("{checked} reachable y1, max |argmin − posterior mean| {worst:.3e} (tol 2e-3)"),
    }
}

fn c4() -> Outcome {
    let gaps = sure_limit_gaps(4).unwrap();
    let ratios: Vec<f64> = gaps.iter().map(|(a, g)| g / a).collect();
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0]);
    let last = gaps.last().unwrap().1;
    let pois = pure_limit_gap(4).unwrap();
    let text: Vec<String> = gaps.iter().map(|(a, g)| format!("α={a}: {g:.3e}")).collect();
    Outcome {
        passed: monotone && last < 1e-3 && pois < 1e-3,
        detail: format!(
            "gaussian gaps [{}], gap/α {}, poisson gap {pois:.3e} (tol 1e-3)",
            text.join(", "),
            if monotone { "decreasing" } else { "NOT decreasing" }
        ),
    }
}

fn c5() -> Outcome {
    let (looks, alpha) = (5u32, 0.2);
    let n = 1_000_000;
    let mut rng = stream(5);
    let w: Vec<f64> = (0..n).map(|_| gamma_split_omega(looks, alpha, &mut rng)).collect();
    let l = looks as f64;
    let mut worst: f64 = 0.0;
    let mut worst_fixed: f64 = 0.0;
    for k in 1..=4 {
        let mk = w.iter().map(|v| v.powi(k)).sum::<f64>() / n as f64;
        let mk1 = w.iter().map(|v| v.powi(k + 1)).sum::<f64>() / n as f64;
        let r = mk1 / mk;
        // Delta method: the ratio's influence function is (ω^{k+1} − r ω^k)/E ω^k.
        let mut s = RunningStats::default();
        for v in &w {
            s.push((v.powi(k + 1) - r * v.powi(k)) / mk);
        }
        let band = CI_SIGMAS * (s.variance() / n as f64).sqrt();
        let kf = k as f64;
        let stated = (l * alpha + kf - 1.0) / (l + kf - 1.0);
        let beta = (l * alpha + kf) / (l + kf);
        worst = worst.max((r - stated).abs() / band);
        worst_fixed = worst_fixed.max((r - beta).abs() / band);
    }
    Outcome {
        passed: worst <= 1.0,
        detail: format!(
            "max |ratio − (ℓα+k−1)/(ℓ+k−1)| = {worst:.1} bands; against (ℓα+k)/(ℓ+k): {worst_fixed:.2} bands"
        ),
    }
}

fn c6() -> Outcome {
    let eps: Image = log_rayleigh_sample(0.1, 100_000, &mut stream(60)).unwrap();
    let spec = target_moments(&eps, 3, 1.0).unwrap();
    let z: Image = maxent_sample(&spec, 100_000, &GdConfig::default(), &mut stream(61)).unwrap();
    let rel = moment_residuals(&z, &spec).into_iter().fold(0.0, f64::max);

    let tight = GdConfig { rel_tol: 1e-3, ..GdConfig::default() };
    let exact = MomentSpec::log_rayleigh(0.1, 3, 1.0).unwrap();
    let omega: Image = maxent_sample(&exact, 100_000, &tight, &mut stream(62)).unwrap();
    let eps: Image = log_rayleigh_sample(0.1, 1_000_000, &mut stream(63)).unwrap();
    let t1 = error_term(eps.as_slice(), omega.as_slice(), 1.0, 1).unwrap();
    let t2 = error_term(eps.as_slice(), omega.as_slice(), 1.0, 2).unwrap();
    Outcome {
        passed: rel < 0.1 && t1.contains(0.0) && t2.contains(0.0),
        detail: format!(
            "max relative moment error {rel:.3} (tol 0.1); k=1 term {:.2e} ± {:.2e}; k=2 term {:.2e} ± {:.2e}",
            t1.mean, t1.half_width, t2.mean, t2.half_width
        ),
    }
}

fn c7() -> Outcome {
    let (s2, sigma, alpha): (f64, f64, f64) = (0.04, 0.1, 0.5);
    let n = 50_000;
    let m = Model::gaussian(sigma).unwrap();
    let mut rng = stream(7);
    let clean: Vec<Image> = (0..n).map(|_| Image::scalar(0.5 + s2.sqrt() * standard_normal(&mut rng))).collect();
    let noisy: Vec<Image> = clean.iter().map(|x| m.sample_noisy(x, &mut rng).unwrap()).collect();
    let cfg = TrainConfig { step_size: 0.5, epochs: 1000, batch_size: 0, seed: 70, ..TrainConfig::default() };
    let init = Estimator::affine_per_pixel(vec![1.0], vec![0.0]);

    let mut obj = PairObjective::split(m, alpha, noisy.clone(), PixelLoss::Mse).unwrap();
    let g_r2r = train(&init, &mut obj, &cfg).unwrap().estimator.params()[0];
    let mut obj = PairObjective::supervised(noisy, clean, PixelLoss::Mse).unwrap();
    let g_sup = train(&init, &mut obj, &cfg).unwrap().estimator.params()[0];

    let want_r2r = s2 / (s2 + sigma * sigma / (1.0 - alpha));
    let want_sup = s2 / (s2 + sigma * sigma);
    let e1 = (g_r2r / want_r2r - 1.0).abs();
    let e2 = (g_sup / want_sup - 1.0).abs();
    Outcome {
        passed: e1 < 0.02 && e2 < 0.02,
        detail: format!(
            "gr2r gain {g_r2r:.4} vs {want_r2r:.4} ({:.2}%), supervised gain {g_sup:.4} vs {want_sup:.4} ({:.2}%) (tol 2%)",
            100.0 * e1,
            100.0 * e2
        ),
    }
}

fn c8() -> Outcome {
    let (s2, sigma, alpha): (f64, f64, f64) = (0.04, 0.1, 0.5);
    let m = Model::gaussian(sigma).unwrap();
    let gain = s2 / (s2 + sigma * sigma / (1.0 - alpha));
    let f = Estimator::affine(gain, (1.0 - gain) * 0.5);
    let js = [1usize, 5, 25];
    let mut diffs = [RunningStats::default(), RunningStats::default()];
    for seed in 0..100u64 {
        let mut rng = substream(seed, 0);
        let x = ImageTensor::new((0..1024).map(|_| 0.5 + s2.sqrt() * standard_normal(&mut rng)).collect(), Shape::grid(32, 32))
            .unwrap();
        let y = m.sample_noisy(&x, &mut rng).unwrap();
        let p: Vec<f64> = js
            .iter()
            .map(|&j| {
                let x_hat = mc_inference(&f, &m, &y, alpha, j, &mut substream(seed, j as u64)).unwrap();
                psnr(&x_hat, &x, 1.0).unwrap().db
            })
            .collect();
        diffs[0].push(p[1] - p[0]);
        diffs[1].push(p[2] - p[1]);
    }
    let e: Vec<_> = diffs.iter().map(|d| d.estimate()).collect();
    Outcome {
        passed: e.iter().all(|d| d.mean - d.half_width > 0.0),
        detail: format!(
            "PSNR(5)−PSNR(1) = {:.3} ± {:.3} dB, PSNR(25)−PSNR(5) = {:.3} ± {:.3} dB over 100 seeds",
            e[0].mean, e[0].half_width, e[1].mean, e[1].half_width
        ),
    }
}

fn c9() -> Outcome {
    let shape = Shape::grid(16, 16);
    let m = Model::poisson(0.1).unwrap();
    let mut rng = stream(9);
    let x = ImageTensor::new((0..256).map(|i| 0.2 + 0.6 * (i % 17) as f64 / 16.0).collect(), shape).unwrap();
    let y = m.sample_noisy(&x, &mut rng).unwrap();
    let f = Estimator::convolution(vec![0.05, 0.1, 0.05, 0.1, 0.4, 0.1, 0.05, 0.1, 0.05], 3, 3);

    let pair = split(&m, &y, 0.3, &mut rng).unwrap();
    let id = ForwardOperator::identity(shape);
    let bit_exact = gr2r_operator_mse(&id, &f, &pair).unwrap().value == gr2r_mse(&f, &pair).unwrap().value;

    let op = make_bernoulli_mask::<f64>(shape, 0.9, 99).unwrap();
    let ym = op.apply(&y).unwrap();
    let mpair = split_masked(&m, &ym, op.observed().unwrap(), 0.3, &mut rng).unwrap();
    let loss = gr2r_operator_mse(&op, &f, &mpair).unwrap().value;
    let a = op.to_dense();
    let matvec = |mat: &[Vec<f64>], v: &[f64]| -> Vec<f64> {
        mat.iter().map(|row| row.iter().zip(v).map(|(p, q)| p * q).sum()).collect()
    };
    let at: Vec<Vec<f64>> = (0..256).map(|c| a.iter().map(|row| row[c]).collect()).collect();
    let input = Image::new(matvec(&at, mpair.y1.as_slice()), shape).unwrap();
    let out = f.linear(&input).unwrap();
    let reference: f64 = matvec(&a, out.as_slice()).iter().zip(mpair.y2.iter()).map(|(p, q)| (p - q).powi(2)).sum();
    let dense_gap = (loss - reference).abs();

    let group = TransformGroup::shifts(16, 16);
    let ei_id = ei_loss(&id, &Estimator::identity(), &x, &group, 8, &mut stream(1)).unwrap().value;
    let ei_zero = ei_loss(&op, &f, &Image::zeros(shape), &group, 8, &mut stream(2)).unwrap().value;
    Outcome {
        passed: bit_exact && dense_gap <= 1e-10 && ei_id == 0.0 && ei_zero == 0.0,
        detail: format!(
            "identity operator bit-exact: {bit_exact}; mask vs dense gap {dense_gap:.2e} (tol 1e-10); EI fixed points {ei_id}, {ei_zero}"
        ),
    }
}

fn c10() -> Outcome {
    let cfg = nef_split::io_formats::RunConfig::new(Model::gaussian(0.1).unwrap());
    let opts = VerifyOptions { seed: 10, ..VerifyOptions::default() };
    let a = run_verify(Some(&cfg), opts);
    let b = run_verify(Some(&cfg), opts);
    let (ja, jb) = (a.to_json().unwrap(), b.to_json().unwrap());
    Outcome {
        passed: ja == jb,
        detail: format!(
            "{} bytes, identical: {}; suite {} ({} checks)",
            ja.len(),
            ja == jb,
            if a.passed { "passed" } else { "FAILED" },
            a.checks.len()
        ),
    }
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, u64); 10] = [
        ("split moment identities", c1, 5),
        ("unbiasedness by enumeration", c2, 10),
        ("NLL minimizer is the posterior mean", c3, 30),
        ("SURE and PURE limits", c4, 60),
        ("Gamma Beta-moment recursion", c5, 30),
        ("additive moment matching", c6, 120),
        ("training equivalence", c7, 120),
        ("Monte-Carlo inference", c8, 120),
        ("inverse-problem losses", c9, 10),
        ("verification determinism", c10, 120),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(*limit);
        let ok = out.passed && in_time;
        failed += !ok as usize;
        println!(
            "criterion {:>2} {} {name}: {} [{:.2} s, limit {limit} s{}]",
            i + 1,
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64(),
            if in_time { "" } else { ", over time" }
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
