use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use nef_split::additive_matching::{maxent_sample, moment_residuals, target_moments, GdConfig, MomentSpec};
use nef_split::experiment::{run_evaluate, run_inpaint, run_sweep, run_train};
use nef_split::io_formats::{
    read_image, to_canonical_json, write_canonical_json, write_image, write_metrics, write_sweep_csv, MetricsRecord,
    RunConfig,
};
use nef_split::splitters::split;
use nef_split::verify::{run_verify, VerifyOptions};
use nef_split::{substream, Error, Estimator64, Image};

const CORRUPT_STREAM: u64 = 6;
const SPLIT_STREAM: u64 = 7;
const MOMENTS_STREAM: u64 = 8;

#[derive(Parser)]
#[command(name = "nef-split", version, about = "Noise splitting for exponential-family measurements")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Record wall-clock time in metrics (breaks byte-identical reruns).
    #[arg(long, global = true)]
    timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a noisy image from a clean PFM image.
    Corrupt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "noisy.pfm")]
        output: String,
    },
    /// Split a noisy PFM image into y1.pfm and y2.pfm.
    Split {
        #[arg(long)]
        input: PathBuf,
    },
    /// Run the oracle suite and write verify.json.
    Verify {
        /// Draws for the confidence-band checks.
        #[arg(long, default_value_t = 1_000_000)]
        draws: usize,
    },
    /// Train the configured estimator and evaluate it on held-out images.
    Train,
    /// Evaluate a saved estimator.
    Evaluate {
        #[arg(long)]
        estimator: PathBuf,
    },
    /// Train and evaluate once per alpha in the config, writing sweep.csv.
    SweepAlpha,
    /// Match recorruption moments to a noise sample or to log-Rayleigh noise.
    Moments {
        /// Noise samples (PFM); analytic log-Rayleigh targets when absent.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train with a Bernoulli mask and the equivariant term.
    Inpaint,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidParameter(_) | Error::Json(_) => 2,
        Error::Divergence { .. } | Error::NonConvergence { .. } | Error::NonFinite(_) => 4,
        _ => 1,
    }
}

struct Ctx {
    cfg: Option<RunConfig>,
    out: PathBuf,
    jobs: usize,
    timing: bool,
}

impl Ctx {
    fn cfg(&self) -> Result<&RunConfig, Error> {
        self.cfg.as_ref().ok_or_else(|| Error::Config("this command needs --config".into()))
    }

    fn path(&self, name: &str) -> Result<PathBuf, Error> {
        fs::create_dir_all(&self.out)?;
        Ok(self.out.join(name))
    }

    fn write_records(&self, mut rec: MetricsRecord, started: Instant) -> Result<(), Error> {
        if self.timing {
            rec.wall_ms = Some(started.elapsed().as_millis() as u64);
        }
        println!("{}: PSNR {}", rec.run_id, rec.psnr_db);
        write_metrics(fs::File::create(self.path("metrics.jsonl")?)?, &[rec])
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("NEF_SPLIT_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> Result<u8, Error> {
    let mut cfg = cli.config.as_deref().map(RunConfig::load).transpose()?;
    if let (Some(c), Some(s)) = (cfg.as_mut(), cli.seed) {
        c.seed = s;
    }
    let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        return Err(Error::Config("--jobs must be at least 1".into()));
    }
    // Ignore the error when a pool already exists.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    let ctx = Ctx { cfg, out: cli.out, jobs, timing: cli.timing };
    let started = Instant::now();

    match cli.command {
        Command::Corrupt { input, output } => {
            let cfg = ctx.cfg()?;
            let x: Image = read_image(&input)?;
            let y = cfg.model.sample_noisy(&x, &mut substream(cfg.seed, CORRUPT_STREAM))?;
            let path = ctx.path(&output)?;
            write_image(&path, &y)?;
            let meta: BTreeMap<&str, Value> = BTreeMap::from([
                ("command", json!("corrupt")),
                ("input", json!(input.display().to_string())),
                ("output", json!(path.display().to_string())),
                ("seed", json!(cfg.seed)),
            ]);
            write_canonical_json(&ctx.path("corrupt.json")?, &meta)?;
        }
        Command::Split { input } => {
            let cfg = ctx.cfg()?;
            let y: Image = read_image(&input)?;
            let pair = split(&cfg.model, &y, cfg.alpha(), &mut substream(cfg.seed, SPLIT_STREAM))?;
            write_image(&ctx.path("y1.pfm")?, &pair.y1)?;
            write_image(&ctx.path("y2.pfm")?, &pair.y2)?;
        }
        Command::Verify { draws } => {
            if draws < 1000 {
                return Err(Error::Config("--draws must be at least 1000".into()));
            }
            let seed = cli.seed.or(ctx.cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let report = run_verify(ctx.cfg.as_ref(), VerifyOptions { seed, draws });
            for c in &report.checks {
                let status = if c.passed { "pass" } else { "FAIL" };
                eprintln!("{status} {} residual {:.3e} tolerance {:.1e}", c.id, c.residual, c.tolerance);
            }
            fs::write(ctx.path("verify.json")?, report.to_json()?)?;
            if !report.passed {
                eprintln!("{} check(s) failed", report.failures().count());
                return Ok(3);
            }
        }
        Command::Train => {
            let (out, rec) = run_train(ctx.cfg()?)?;
            write_canonical_json(&ctx.path("estimator.json")?, &out.estimator)?;
            ctx.write_records(rec, started)?;
        }
        Command::Evaluate { estimator } => {
            let cfg = ctx.cfg()?;
            let text = fs::read_to_string(&estimator)?;
            let est: Estimator64 = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", estimator.display())))?;
            let rec = run_evaluate(cfg, &est)?;
            ctx.write_records(rec, started)?;
        }
        Command::SweepAlpha => {
            let cfg = ctx.cfg()?;
            if cfg.alphas.is_empty() {
                return Err(Error::Config("sweep-alpha needs a nonempty alphas list".into()));
            }
            let rows = run_sweep(cfg, ctx.jobs)?;
            write_sweep_csv(fs::File::create(ctx.path("sweep.csv")?)?, &rows)?;
            let failed = rows.iter().filter(|r| r.psnr_db.is_none()).count();
            if failed > 0 {
                eprintln!("{failed} alpha value(s) failed");
            }
        }
        Command::Moments { input } => {
            let cfg = ctx.cfg()?;
            let m = cfg.moments;
            let spec = match &input {
                Some(p) => target_moments(&read_image::<f64>(p)?, m.order, m.tau)?,
                None => MomentSpec::log_rayleigh(m.sigma, m.order, m.tau)?,
            };
            let gd = GdConfig { step_size: m.step_size, max_iters: m.max_iters, rel_tol: m.rel_tol };
            let omega: Image = maxent_sample(&spec, m.samples, &gd, &mut substream(cfg.seed, MOMENTS_STREAM))?;
            let residuals = moment_residuals(&omega, &spec);
            let report: BTreeMap<&str, Value> = BTreeMap::from([
                ("residuals", json!(residuals)),
                ("samples", json!(m.samples)),
                ("seed", json!(cfg.seed)),
                ("targets", json!(spec.moments)),
                ("tau", json!(spec.tau)),
            ]);
            let text = to_canonical_json(&report)?;
            println!("{text}");
            fs::write(ctx.path("moments.json")?, text)?;
        }
        Command::Inpaint => {
            let (out, rec) = run_inpaint(ctx.cfg()?)?;
            write_canonical_json(&ctx.path("estimator.json")?, &out.estimator)?;
            ctx.write_records(rec, started)?;
        }
    }
    Ok(0)
}
