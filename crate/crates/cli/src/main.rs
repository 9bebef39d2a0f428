use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use tcmip::config::RunConfig;
use tcmip::denoiser::{check_cocoercive, check_spc};
use tcmip::eval::{bernoulli_mask, MetricMode, MetricReport};
use tcmip::io::{self, TrafficLayout};
use tcmip::solver::{ObservationMask, RunOptions, Solver};
use tcmip::{Error, Result};

#[derive(Parser)]
#[command(name = "tcmip", about = "Tensor completion with GTCTV priors and plug-in denoisers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a Bernoulli sampling mask.
    Mask {
        /// Comma-separated extents, e.g. 32,32,1,16.
        #[arg(long, value_delimiter = ',', required = true)]
        shape: Vec<usize>,
        /// Probability that an entry is observed.
        #[arg(long)]
        sr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Complete a partially observed tensor.
    Complete {
        /// Observed values; entries outside the mask are ignored.
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Ground truth, only used to report MPSNR per iteration on stderr.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Compare an estimate against a reference.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        est: PathBuf,
        /// Sampling mask; MAPE and RMSE are then taken over unobserved entries.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Images)]
        mode: Mode,
        /// Peak signal value for PSNR and SSIM.
        #[arg(long, default_value_t = 1.0)]
        peak: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample the denoiser's declared pseudo-contractivity and the
    /// cocoercivity of its residual on random pairs.
    CheckDenoiser {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `check_trials` from the configuration.
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',', default_value = "16,16,3")]
        shape: Vec<usize>,
        /// Denoising strength to test (defaults to `sigma0`).
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the smooth low-rank test tensor.
    Synth {
        #[arg(long, value_delimiter = ',', required = true)]
        shape: Vec<usize>,
        #[arg(long, default_value_t = 2)]
        rank: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Keep the entries of a tensor inside a mask and zero the rest.
    Observe {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a traffic CSV (sensors x day-major intervals) to TNSR files.
    ImportTraffic {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        sensors: usize,
        #[arg(long)]
        intervals: usize,
        #[arg(long)]
        days: usize,
        #[arg(long)]
        out: PathBuf,
        /// Mask of the non-empty cells.
        #[arg(long)]
        mask_out: PathBuf,
    },
    /// Print the version.
    Version,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Images,
    Traffic,
}

fn input_error(path: &Path, err: Error) -> Error {
    match err {
        Error::Io(e) => Error::InvalidArgument(format!("cannot read {}: {e}", path.display())),
        other => other,
    }
}

fn read_real(path: &Path) -> Result<tcmip::RealTensor> {
    io::read_real(path).map_err(|e| input_error(path, e))
}

fn read_mask(path: &Path) -> Result<tcmip::Tensor<bool>> {
    io::read_mask(path).map_err(|e| input_error(path, e))
}

fn emit_json(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Mask { shape, sr, seed, out } => {
            let mask = bernoulli_mask(&shape, sr, seed)?;
            io::write_mask(&out, &mask)?;
            let observed = mask.data().iter().filter(|&&b| b).count();
            eprintln!("mask {shape:?}: {observed} of {} entries observed", mask.len());
        }
        Command::Complete { obs, mask, config, out, trace, truth } => {
            let config = RunConfig::load(&config)?;
            let values = read_real(&obs)?;
            let observed = read_mask(&mask)?;
            let mask = ObservationMask::new(observed, &values)?;
            let truth = truth.map(|p| read_real(&p)).transpose()?;
            let prior = config.prior()?;
            let denoiser = config.denoiser.build()?;
            let solver = Solver::new(config.solver.clone(), prior, denoiser.as_ref())?;
            let options = RunOptions { ground_truth: truth.as_ref(), timing: config.timing, ..Default::default() };
            let result = solver.run(&mask, options)?;
            io::write_real(&out, &result.x)?;
            if let Some(path) = trace {
                io::write_trace_csv(&path, &result.trace)?;
            }
            let last = result.trace.last().expect("at least one iteration");
            let status = if result.converged { "converged" } else { "iteration cap reached" };
            eprintln!("{} iterations, {status}", result.trace.len());
            if let Some(p) = last.mpsnr {
                eprintln!("final MPSNR {p:.3} dB");
            }
        }
        Command::Metrics { reference, est, mask, mode, peak, out } => {
            let truth = read_real(&reference)?;
            let est = read_real(&est)?;
            let mask = mask.map(|p| read_mask(&p)).transpose()?;
            let mode = match mode {
                Mode::Images => MetricMode::Images,
                Mode::Traffic => MetricMode::Traffic,
            };
            let report = MetricReport::compute(mode, &truth, &est, mask.as_ref(), peak)?;
            emit_json(&serde_json::to_value(&report)?, out.as_deref())?;
        }
        Command::CheckDenoiser { config, trials, shape, sigma, out } => {
            let config = RunConfig::load(&config)?;
            let denoiser = config.denoiser.build()?;
            let k = denoiser.declared_k();
            let alpha = config.solver.alpha;
            let sigma = sigma.unwrap_or(config.solver.sigma0);
            let trials = trials.unwrap_or(config.check_trials);
            let spc = check_spc(denoiser.as_ref(), sigma, k, trials, &shape, config.check_seed)?;
            let mut report = json!({
                "denoiser": denoiser.name(),
                "declared_k": k,
                "sigma": sigma,
                "trials": trials,
                "spc": spc,
            });
            let mut passed = spc.passed();
            if alpha > 0.0 {
                let beta = (1.0 - k) / (2.0 * alpha);
                let coco = check_cocoercive(denoiser.as_ref(), sigma, alpha, beta, trials, &shape, config.check_seed)?;
                passed &= coco.passed();
                report["cocoercive"] = json!({ "alpha": alpha, "beta": beta, "report": coco });
            }
            report["passed"] = json!(passed);
            emit_json(&report, out.as_deref())?;
            if !passed {
                eprintln!("denoiser violates its declared constant k = {k}");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Synth { shape, rank, out } => {
            io::write_real(&out, &tcmip::synthetic::smooth_low_rank(&shape, rank)?)?;
        }
        Command::Observe { truth, mask, out } => {
            let observed = ObservationMask::new(read_mask(&mask)?, &read_real(&truth)?)?;
            io::write_real(&out, observed.values())?;
        }
        Command::ImportTraffic { csv, sensors, intervals, days, out, mask_out } => {
            let layout = TrafficLayout { sensors, intervals, days };
            let (values, observed) = io::read_traffic_csv(&csv, layout).map_err(|e| input_error(&csv, e))?;
            io::write_real(&out, &values)?;
            io::write_mask(&mask_out, &observed)?;
        }
        Command::Version => println!("tcmip {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
