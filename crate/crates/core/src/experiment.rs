//! End-to-end pipelines: data, corruption, training, evaluation, α sweeps and
//! masked inpainting.
//!
//! All randomness comes from fixed substreams of the run seed, so every
//! pipeline returns identical results for identical configs.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{train, Denoiser, Estimator, PairObjective, TrainObjective, TrainOutcome};
use crate::inverse_ops::{make_bernoulli_mask, ForwardOperator, TransformGroup};
use crate::io_formats::{psnr, read_image, DatasetConfig, LossName, MetricsRecord, Psnr, RunConfig, SweepRow};
use crate::losses::{back_project, ei_loss, gr2r_operator_mse, PixelLoss};
use crate::nef_models::NoiseModel;
use crate::rng::{stream, substream, RandomStream};
use crate::splitters::{mc_inference, split_masked, SplitPair};
use crate::tensor::{ImageTensor, Shape};

type Image = ImageTensor<f64>;

// Substream ids.
const DATA: u64 = 1;
const TRAIN_NOISE: u64 = 2;
const TEST_NOISE: u64 = 3;
const INFERENCE: u64 = 4;
const TRAINER: u64 = 5;

/// Clean training and held-out images.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<Image>,
    pub test: Vec<Image>,
}

/// Random rectangles of constant offset on a tilted plane, clamped to `[0.1, 0.9]`.
pub fn synthetic_image<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Image {
    let base = rng.random_range(0.3..0.7);
    let gy = rng.random_range(-0.3..0.3);
    let gx = rng.random_range(-0.3..0.3);
    let mut v: Vec<f64> = (0..height * width)
        .map(|i| {
            let (r, c) = (i / width, i % width);
            base + gy * (r as f64 / height as f64 - 0.5) + gx * (c as f64 / width as f64 - 0.5)
        })
        .collect();
    for _ in 0..rng.random_range(3..7) {
        let r0 = rng.random_range(0..height);
        let c0 = rng.random_range(0..width);
        let r1 = rng.random_range(r0..height) + 1;
        let c1 = rng.random_range(c0..width) + 1;
        let level = rng.random_range(-0.3..0.3);
        for r in r0..r1 {
            for c in c0..c1 {
                v[r * width + c] += level;
            }
        }
    }
    let v = v.into_iter().map(|x| x.clamp(0.1, 0.9)).collect();
    ImageTensor::new(v, Shape::grid(height, width)).expect("sizes agree")
}

pub fn load_dataset(cfg: &DatasetConfig, seed: u64) -> Result<Dataset> {
    match *cfg {
        DatasetConfig::Synthetic { train, test, height, width } => {
            let mut rng = substream(seed, DATA);
            let mut all: Vec<Image> = (0..train + test).map(|_| synthetic_image(height, width, &mut rng)).collect();
            let test = all.split_off(train);
            Ok(Dataset { train: all, test })
        }
        DatasetConfig::Files { test, .. } => {
            let mut all = cfg.files()?.iter().map(|p| read_image::<f64>(p)).collect::<Result<Vec<_>>>()?;
            if test >= all.len() {
                return Err(Error::Config(format!("{} files leave nothing to train on after holding out {test}", all.len())));
            }
            let test = all.split_off(all.len() - test);
            Ok(Dataset { train: all, test })
        }
    }
}

/// Independent noisy copies, one per image, drawn sequentially from one stream.
pub fn corrupt_all(model: &NoiseModel<f64>, clean: &[Image], rng: &mut RandomStream) -> Result<Vec<Image>> {
    clean.iter().map(|x| model.sample_noisy(x, rng)).collect()
}

fn trainer_config(cfg: &RunConfig) -> crate::estimators::TrainConfig {
    let mut t = cfg.train;
    t.seed = substream(cfg.seed ^ cfg.train.seed.rotate_left(32), TRAINER).random();
    t
}

/// Trains the configured estimator on noisy copies of the training images.
pub fn train_estimator(cfg: &RunConfig, alpha: f64, data: &Dataset) -> Result<TrainOutcome<f64>> {
    let noisy = corrupt_all(&cfg.model, &data.train, &mut substream(cfg.seed, TRAIN_NOISE))?;
    let mut objective = match cfg.loss {
        LossName::Supervised => PairObjective::supervised(noisy, data.train.clone(), PixelLoss::Mse)?,
        LossName::Gr2rMse => PairObjective::split(cfg.model, alpha, noisy, PixelLoss::Mse)?,
        LossName::Gr2rNll => PairObjective::split(cfg.model, alpha, noisy, PixelLoss::Nll(cfg.model))?,
    };
    train(&cfg.estimator, &mut objective, &trainer_config(cfg))
}

/// PSNR over all held-out images pooled, with Monte-Carlo inference for
/// split-trained estimators and direct application otherwise.
pub fn evaluate_estimator(cfg: &RunConfig, alpha: f64, est: &Estimator<f64>, data: &Dataset) -> Result<Psnr> {
    if data.test.is_empty() {
        return Err(Error::Config("no held-out images to evaluate on".into()));
    }
    let noisy = corrupt_all(&cfg.model, &data.test, &mut substream(cfg.seed, TEST_NOISE))?;
    let mut rng = substream(cfg.seed, INFERENCE);
    let mut est_all = Vec::new();
    let mut ref_all = Vec::new();
    for (y, x) in noisy.iter().zip(&data.test) {
        let x_hat = match cfg.loss {
            LossName::Supervised => est.apply(y)?,
            _ => mc_inference(est, &cfg.model, y, alpha, cfg.mc_samples, &mut rng)?,
        };
        est_all.extend_from_slice(x_hat.as_slice());
        ref_all.extend_from_slice(x.as_slice());
    }
    psnr(&ImageTensor::from_vec(est_all), &ImageTensor::from_vec(ref_all), 1.0)
}

pub fn run_id(loss: LossName, alpha: f64, seed: u64) -> String {
    format!("{}-alpha{alpha}-seed{seed}", loss.as_str())
}

/// Train, then evaluate on the held-out images.
pub fn run_train(cfg: &RunConfig) -> Result<(TrainOutcome<f64>, MetricsRecord)> {
    cfg.validate()?;
    let alpha = cfg.alpha();
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let out = train_estimator(cfg, alpha, &data)?;
    let p = evaluate_estimator(cfg, alpha, &out.estimator, &data)?;
    let rec = MetricsRecord {
        run_id: run_id(cfg.loss, alpha, cfg.seed),
        loss_name: cfg.loss.as_str().into(),
        alpha,
        psnr_db: p,
        loss_curve: out.loss_curve.clone(),
        seed: cfg.seed,
        wall_ms: None,
    };
    Ok((out, rec))
}

/// Evaluates a given estimator.
pub fn run_evaluate(cfg: &RunConfig, est: &Estimator<f64>) -> Result<MetricsRecord> {
    cfg.validate()?;
    est.validate()?;
    let alpha = cfg.alpha();
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    Ok(MetricsRecord {
        run_id: run_id(cfg.loss, alpha, cfg.seed),
        loss_name: cfg.loss.as_str().into(),
        alpha,
        psnr_db: evaluate_estimator(cfg, alpha, est, &data)?,
        loss_curve: vec![],
        seed: cfg.seed,
        wall_ms: None,
    })
}

/// Trains and evaluates once per α in `cfg.alphas` on `jobs` threads. A
/// failed α leaves an empty PSNR and the sweep continues.
pub fn run_sweep(cfg: &RunConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.alphas.is_empty() {
        return Err(Error::Config("sweep-alpha needs a nonempty alphas list".into()));
    }
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let one = |alpha: f64| -> SweepRow {
        let res = train_estimator(cfg, alpha, &data).and_then(|o| evaluate_estimator(cfg, alpha, &o.estimator, &data));
        if let Err(e) = &res {
            log::warn!("alpha {alpha}: {e}");
        }
        SweepRow { alpha, loss_name: cfg.loss.as_str().into(), psnr_db: res.ok(), seed: cfg.seed }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    Ok(pool.install(|| cfg.alphas.par_iter().map(|&a| one(a)).collect()))
}

/// Masked-measurement training: `‖A f(Aᵀy₁) − y₂‖²` plus a weighted
/// equivariant-imaging term over cyclic shifts. Gradients are finite differences.
pub struct InpaintObjective {
    op: ForwardOperator<f64>,
    model: NoiseModel<f64>,
    alpha: f64,
    ei_weight: f64,
    group: TransformGroup,
    observations: Vec<Image>,
    batch: Vec<(SplitPair<f64>, Image, u64)>,
}

impl InpaintObjective {
    pub fn new(
        op: ForwardOperator<f64>,
        model: NoiseModel<f64>,
        alpha: f64,
        ei_weight: f64,
        observations: Vec<Image>,
    ) -> Result<Self> {
        crate::splitters::check_split_params(&model, alpha)?;
        let (h, w) = op.input_shape().dims();
        Ok(Self { op, model, alpha, ei_weight, group: TransformGroup::shifts(h, w), observations, batch: vec![] })
    }

    fn observed(&self) -> Vec<bool> {
        match self.op.observed() {
            Some(m) => m.to_vec(),
            None => vec![true; self.op.output_shape().len()],
        }
    }
}

impl TrainObjective<f64> for InpaintObjective {
    fn num_samples(&self) -> usize {
        self.observations.len()
    }

    fn prepare(&mut self, batch: &[usize], rng: &mut RandomStream) -> Result<()> {
        let observed = self.observed();
        self.batch.clear();
        for &i in batch {
            let y = &self.observations[i];
            let pair = split_masked(&self.model, y, &observed, self.alpha, rng)?;
            let ei_seed = if self.ei_weight > 0.0 { rng.random() } else { 0 };
            self.batch.push((pair, y.clone(), ei_seed));
        }
        Ok(())
    }

    fn loss(&self, est: &Estimator<f64>) -> Result<f64> {
        let mut total = 0.0;
        for (pair, y, ei_seed) in &self.batch {
            let n = y.len() as f64;
            let mut l = gr2r_operator_mse(&self.op, est, pair)?.value / n;
            if self.ei_weight > 0.0 {
                let x_hat = est.apply(&back_project(&self.op, y)?)?;
                let ei = ei_loss(&self.op, est, &x_hat, &self.group, 1, &mut stream(*ei_seed))?;
                l += self.ei_weight * ei.value / n;
            }
            total += l;
        }
        Ok(total / self.batch.len().max(1) as f64)
    }
}

/// Bernoulli-mask inpainting with noisy observations.
pub fn run_inpaint(cfg: &RunConfig) -> Result<(TrainOutcome<f64>, MetricsRecord)> {
    cfg.validate()?;
    let alpha = cfg.alpha();
    let data = load_dataset(&cfg.dataset, cfg.seed)?;
    let shape = data.train[0].shape();
    if data.train.iter().chain(&data.test).any(|x| x.shape() != shape) {
        return Err(Error::Config("inpainting needs images of one shape".into()));
    }
    let ip = cfg.inpaint;
    let op = make_bernoulli_mask::<f64>(shape, ip.mask_p, ip.mask_seed)?;
    let measure = |clean: &[Image], id: u64| -> Result<Vec<Image>> {
        corrupt_all(&cfg.model, clean, &mut substream(cfg.seed, id))?.iter().map(|y| op.apply(y)).collect()
    };
    let mut objective = InpaintObjective::new(op.clone(), cfg.model, alpha, ip.ei_weight, measure(&data.train, TRAIN_NOISE)?)?;
    let out = train(&cfg.estimator, &mut objective, &trainer_config(cfg))?;

    let observed = objective.observed();
    let test = measure(&data.test, TEST_NOISE)?;
    let mut rng = substream(cfg.seed, INFERENCE);
    let est = &out.estimator;
    let mut est_all = Vec::new();
    let mut ref_all = Vec::new();
    for (y, x) in test.iter().zip(&data.test) {
        let mut acc = ImageTensor::zeros(shape);
        for _ in 0..cfg.mc_samples {
            let pair = split_masked(&cfg.model, y, &observed, alpha, &mut rng)?;
            acc = acc.add(&est.apply(&back_project(&op, &pair.y1)?)?)?;
        }
        est_all.extend(acc.scale(1.0 / cfg.mc_samples as f64).into_vec());
        ref_all.extend_from_slice(x.as_slice());
    }
    let p = psnr(&ImageTensor::from_vec(est_all), &ImageTensor::from_vec(ref_all), 1.0)?;
    let rec = MetricsRecord {
        run_id: format!("inpaint-p{}-{}", ip.mask_p, run_id(LossName::Gr2rMse, alpha, cfg.seed)),
        loss_name: "gr2r_operator_mse+ei".into(),
        alpha,
        psnr_db: p,
        loss_curve: out.loss_curve.clone(),
        seed: cfg.seed,
        wall_ms: None,
    };
    Ok((out, rec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::TrainConfig;

    fn small(model: NoiseModel<f64>) -> RunConfig {
        let mut c = RunConfig::new(model);
        c.dataset = DatasetConfig::Synthetic { train: 6, test: 2, height: 8, width: 8 };
        c.train = TrainConfig { step_size: 0.5, epochs: 40, ..TrainConfig::default() };
        c
    }

    #[test]
    fn synthetic_images_are_interior() {
        let mut rng = stream(1);
        for _ in 0..20 {
            let x = synthetic_image(32, 32, &mut rng);
            assert_eq!(x.shape(), Shape::grid(32, 32));
            assert!(x.iter().all(|&v| (0.1..=0.9).contains(&v)));
        }
    }

    #[test]
    fn train_is_deterministic() {
        let c = small(NoiseModel::gaussian(0.1).unwrap());
        let (a, ra) = run_train(&c).unwrap();
        let (b, rb) = run_train(&c).unwrap();
        assert_eq!(a.estimator, b.estimator);
        assert_eq!(ra, rb);
        assert!(!ra.psnr_db.infinite);
    }

    #[test]
    fn every_family_trains() {
        for m in [
            NoiseModel::poisson(0.05).unwrap(),
            NoiseModel::gamma(10).unwrap(),
            NoiseModel::binomial(20).unwrap(),
        ] {
            let mut c = small(m);
            c.alpha = Some(m.default_alpha());
            run_train(&c).unwrap();
        }
    }

    #[test]
    fn sweep_records_every_alpha_in_order() {
        let mut c = small(NoiseModel::gaussian(0.1).unwrap());
        c.alphas = vec![0.2, 0.5];
        let a = run_sweep(&c, 2).unwrap();
        let b = run_sweep(&c, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|r| r.alpha).collect::<Vec<_>>(), vec![0.2, 0.5]);
    }

    #[test]
    fn full_mask_without_ei_matches_denoising_loss() {
        let mut c = small(NoiseModel::gaussian(0.1).unwrap());
        c.inpaint.mask_p = 1.0;
        c.inpaint.ei_weight = 0.0;
        c.alpha = Some(0.5);
        let (inp, _) = run_inpaint(&c).unwrap();
        let (den, _) = run_train(&c).unwrap();
        for (a, b) in inp.estimator.params().iter().zip(den.estimator.params()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
