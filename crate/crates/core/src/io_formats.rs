//! File formats: portable float maps, canonical JSON, run configs, metrics
//! lines and α-sweep tables.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{Estimator, RangeMap, TrainConfig};
use crate::nef_models::NoiseModel;
use crate::scalar::Scalar;
use crate::splitters::check_split_params;
use crate::tensor::{ImageTensor, Shape};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

struct CanonicalFormatter;

impl serde_json::ser::Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        w.write_all(fmt_f64(v).as_bytes())
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, v as f64)
    }
}

/// Compact JSON with keys in sorted order and floats at 17 significant digits.
pub fn to_canonical_json<S: Serialize>(value: &S) -> Result<String> {
    // serde_json's map type is ordered by key.
    let v = serde_json::to_value(value)?;
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CanonicalFormatter);
    v.serialize(&mut ser)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_canonical_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut s = to_canonical_json(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Peak signal-to-noise ratio in dB, with an explicit flag for exact recovery.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    pub infinite: bool,
}

impl Psnr {
    pub fn finite(db: f64) -> Self {
        Self { db, infinite: false }
    }

    pub fn exact() -> Self {
        Self { db: f64::INFINITY, infinite: true }
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.infinite {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.db)
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::finite(v)),
            Raw::Text(s) if s == "inf" => Ok(Psnr::exact()),
            Raw::Text(s) => Err(de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.infinite {
            f.write_str("inf")
        } else {
            write!(f, "{:.4} dB", self.db)
        }
    }
}

/// `10 log₁₀(peak² n / ‖x̂ − x‖²)`.
pub fn psnr<T: Scalar>(x_hat: &ImageTensor<T>, x_ref: &ImageTensor<T>, peak: f64) -> Result<Psnr> {
    let err = x_hat.cast::<f64>().dist_sq(&x_ref.cast::<f64>())?;
    if err == 0.0 {
        return Ok(Psnr::exact());
    }
    Ok(Psnr::finite(10.0 * (peak * peak * x_hat.len() as f64 / err).log10()))
}

/// Decoded portable float map.
#[derive(Debug, Clone, PartialEq)]
pub struct PfmImage {
    pub width: usize,
    pub height: usize,
    /// 1 (`Pf`) or 3 (`PF`).
    pub channels: usize,
    /// Row-major from the top row, channels interleaved.
    pub data: Vec<f32>,
}

/// Largest accepted pixel count.
const MAX_PFM_VALUES: usize = 1 << 30;

impl PfmImage {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "Pf",
            3 => "PF",
            c => return Err(Error::Format(format!("portable float maps have 1 or 3 channels, not {c}"))),
        };
        let row = self.width * self.channels;
        if self.data.len() != row * self.height {
            return Err(Error::Format("pixel data does not match the declared dimensions".into()));
        }
        let mut out = format!("{magic}\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for r in (0..self.height).rev() {
            for v in &self.data[r * row..(r + 1) * row] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut token = || -> Result<String> {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated header".into()));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let channels = match token()?.as_str() {
            "Pf" => 1,
            "PF" => 3,
            m => return Err(Error::Format(format!("bad magic {m:?}"))),
        };
        let num = |s: String, what: &str| -> Result<usize> {
            s.parse::<usize>().map_err(|_| Error::Format(format!("bad {what} {s:?}")))
        };
        let width = num(token()?, "width")?;
        let height = num(token()?, "height")?;
        let scale_text = token()?;
        let scale: f64 = scale_text
            .parse()
            .map_err(|_| Error::Format(format!("bad scale {scale_text:?}")))?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::Format("scale must be nonzero".into()));
        }
        // Exactly one whitespace byte separates the header from the payload.
        let start = pos + 1;
        let count = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .filter(|&v| v <= MAX_PFM_VALUES)
            .ok_or_else(|| Error::Format(format!("dimensions {width}x{height} are too large")))?;
        let need = count * 4;
        if bytes.len() < start || bytes.len() - start < need {
            return Err(Error::Format(format!(
                "truncated payload: need {need} bytes, found {}",
                bytes.len().saturating_sub(start)
            )));
        }
        let little = scale < 0.0;
        let raw: Vec<f32> = bytes[start..start + need]
            .chunks_exact(4)
            .map(|c| {
                let b = [c[0], c[1], c[2], c[3]];
                if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) }
            })
            .collect();
        let row = width * channels;
        let mut data = Vec::with_capacity(count);
        for r in (0..height).rev() {
            data.extend_from_slice(&raw[r * row..(r + 1) * row]);
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn from_tensor<T: Scalar>(img: &ImageTensor<T>) -> Self {
        let (height, width) = img.shape().dims();
        Self { width, height, channels: 1, data: img.iter().map(|v| v.as_f64() as f32).collect() }
    }

    /// Grayscale tensor; colour maps are rejected.
    pub fn to_tensor<T: Scalar>(&self) -> Result<ImageTensor<T>> {
        if self.channels != 1 {
            return Err(Error::Unsupported("colour portable float maps cannot be loaded as one image".into()));
        }
        ImageTensor::new(self.data.iter().map(|&v| T::lit(v as f64)).collect(), Shape::grid(self.height, self.width))
    }
}

pub fn read_image<T: Scalar>(path: &Path) -> Result<ImageTensor<T>> {
    PfmImage::decode(&fs::read(path)?)?.to_tensor()
}

pub fn write_image<T: Scalar>(path: &Path, img: &ImageTensor<T>) -> Result<()> {
    fs::write(path, PfmImage::from_tensor(img).encode()?)?;
    Ok(())
}

/// Which training loss a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    /// `‖f(y) − x‖²` against clean targets.
    Supervised,
    #[default]
    Gr2rMse,
    Gr2rNll,
}

impl LossName {
    pub fn as_str(self) -> &'static str {
        match self {
            LossName::Supervised => "supervised",
            LossName::Gr2rMse => "gr2r_mse",
            LossName::Gr2rNll => "gr2r_nll",
        }
    }
}

/// Where images come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Random piecewise-constant images with smooth ramps, values in `[0.1, 0.9]`.
    Synthetic {
        #[serde(default = "default_train_count")]
        train: usize,
        #[serde(default = "default_test_count")]
        test: usize,
        #[serde(default = "default_side")]
        height: usize,
        #[serde(default = "default_side")]
        width: usize,
    },
    /// Clean grayscale `.pfm` files matching a glob pattern; the last `test`
    /// files in sorted order are held out.
    Files { pattern: String, test: usize },
}

fn default_train_count() -> usize {
    16
}

fn default_test_count() -> usize {
    4
}

fn default_side() -> usize {
    32
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Synthetic { train: 16, test: 4, height: 32, width: 32 }
    }
}

impl DatasetConfig {
    /// Sorted files matching the pattern.
    pub fn files(&self) -> Result<Vec<PathBuf>> {
        let DatasetConfig::Files { pattern, .. } = self else {
            return Ok(vec![]);
        };
        let mut out = Vec::new();
        for entry in glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob {pattern:?}: {e}")))? {
            out.push(entry.map_err(|e| Error::Io(e.into()))?);
        }
        out.sort();
        if out.is_empty() {
            return Err(Error::Config(format!("no files match {pattern:?}")));
        }
        Ok(out)
    }
}

/// Inpainting settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InpaintConfig {
    /// Probability that a pixel is observed.
    pub mask_p: f64,
    pub mask_seed: u64,
    /// Weight of the equivariant-imaging term.
    pub ei_weight: f64,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self { mask_p: 0.9, mask_seed: 0, ei_weight: 1.0 }
    }
}

/// Moment-matching settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsConfig {
    pub sigma: f64,
    pub order: usize,
    pub tau: f64,
    pub samples: usize,
    pub step_size: Option<f64>,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for MomentsConfig {
    fn default() -> Self {
        Self { sigma: 0.1, order: 3, tau: 1.0, samples: 100_000, step_size: None, max_iters: 10_000, rel_tol: 0.1 }
    }
}

/// Complete description of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: NoiseModel<f64>,
    /// Split parameter; the family default when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Monte-Carlo inference draws.
    #[serde(rename = "J", default = "one")]
    pub mc_samples: usize,
    #[serde(default)]
    pub loss: LossName,
    #[serde(default = "default_estimator")]
    pub estimator: Estimator<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Split parameters for `sweep-alpha`.
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub inpaint: InpaintConfig,
    #[serde(default)]
    pub moments: MomentsConfig,
}

fn one() -> usize {
    1
}

fn default_estimator() -> Estimator<f64> {
    Estimator::affine(1.0, 0.0)
}

impl RunConfig {
    pub fn new(model: NoiseModel<f64>) -> Self {
        Self {
            model,
            alpha: None,
            mc_samples: 1,
            loss: LossName::default(),
            estimator: default_estimator(),
            train: TrainConfig::default(),
            seed: 0,
            dataset: DatasetConfig::default(),
            alphas: vec![],
            inpaint: InpaintConfig::default(),
            moments: MomentsConfig::default(),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or_else(|| self.model.default_alpha())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Checks every constraint that does not need the data.
    pub fn validate(&self) -> Result<()> {
        let cfg_err = |e: Error| Error::Config(e.to_string());
        self.model.validate().map_err(cfg_err)?;
        check_split_params(&self.model, self.alpha()).map_err(cfg_err)?;
        for &a in &self.alphas {
            check_split_params(&self.model, a).map_err(cfg_err)?;
        }
        if self.mc_samples == 0 {
            return Err(Error::Config("J must be at least 1".into()));
        }
        self.train.validate().map_err(cfg_err)?;
        self.estimator.validate().map_err(cfg_err)?;
        if self.loss == LossName::Gr2rNll {
            let need = match self.model {
                NoiseModel::Poisson { .. } | NoiseModel::Gamma { .. } => Some(RangeMap::Positive),
                NoiseModel::Binomial { .. } => Some(RangeMap::UnitInterval),
                NoiseModel::Gaussian { .. } => None,
            };
            if let Some(rm) = need {
                if self.estimator.range_map != rm {
                    return Err(Error::Config(format!(
                        "{} likelihood needs an estimator with range_map {:?}",
                        self.model.family(),
                        rm
                    )));
                }
            }
        }
        if let DatasetConfig::Synthetic { train, height, width, .. } = self.dataset {
            if train == 0 || height == 0 || width == 0 {
                return Err(Error::Config("synthetic dataset needs positive sizes".into()));
            }
        }
        let ip = self.inpaint;
        if !(ip.mask_p > 0.0 && ip.mask_p <= 1.0) || !(ip.ei_weight >= 0.0) {
            return Err(Error::Config("inpaint needs mask_p in (0, 1] and ei_weight >= 0".into()));
        }
        let m = self.moments;
        if !(m.sigma > 0.0 && m.tau > 0.0 && m.rel_tol > 0.0) || !(2..=3).contains(&m.order) || m.samples == 0 {
            return Err(Error::Config("moments needs sigma, tau, rel_tol > 0, order 2 or 3 and samples > 0".into()));
        }
        Ok(())
    }
}

/// One line of a metrics file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub run_id: String,
    pub loss_name: String,
    pub alpha: f64,
    pub psnr_db: Psnr,
    pub loss_curve: Vec<f64>,
    pub seed: u64,
    /// Wall-clock time; `None` unless timing was requested, so that outputs
    /// stay byte-identical across runs.
    pub wall_ms: Option<u64>,
}

/// Appends canonical JSON lines.
pub fn write_metrics<W: Write>(mut out: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        writeln!(out, "{}", to_canonical_json(r)?)?;
    }
    Ok(())
}

pub fn read_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

/// Row of an α-sweep table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub loss_name: String,
    /// `None` when the run for this α failed.
    pub psnr_db: Option<Psnr>,
    pub seed: u64,
}

/// Writes `alpha,loss_name,psnr_db,seed`; failed runs have an empty PSNR.
pub fn write_sweep_csv<W: Write>(out: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "loss_name", "psnr_db", "seed"])?;
    for r in rows {
        let p = match r.psnr_db {
            Some(p) if p.infinite => "inf".to_string(),
            Some(p) => fmt_f64(p.db),
            None => String::new(),
        };
        w.write_record([fmt_f64(r.alpha), r.loss_name.clone(), p, r.seed.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
