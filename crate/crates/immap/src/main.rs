use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use immap::cli::{
    cmd_eval, cmd_export_png, cmd_recon, cmd_simulate, cmd_sweep, exit_code_for, ReconMethod,
    SweepSpec,
};
use immap::config::RunConfig;
use immap::error::{ImmapError, Result};
use immap::sim::{AcquisitionSpec, MaskScheme};

#[derive(Parser)]
#[command(name = "immap", version, about = "Multicoil MRI reconstruction with implicit denoiser priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phantom acquisition into a container file
    Simulate {
        /// Image size (height = width)
        #[arg(long, default_value_t = 128)]
        size: usize,
        /// Number of receive coils
        #[arg(long, default_value_t = 8)]
        coils: usize,
        /// Acceleration factor R (rows kept = round(size / R))
        #[arg(long, default_value_t = 4.0)]
        accel: f64,
        /// Fully sampled center rows; default 6% of the image height
        #[arg(long)]
        acs_lines: Option<usize>,
        /// Row selection scheme: uniform | random-lines
        #[arg(long, default_value = "random-lines")]
        scheme: String,
        /// Per-coil complex noise standard deviation
        #[arg(long, default_value_t = 0.01)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Add a smooth phase map to the phantom
        #[arg(long, default_value_t = false)]
        phase: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Reconstruct an image from a simulated or stored acquisition
    Recon {
        /// immap | sense | zerofill | prior-sample
        #[arg(long, default_value = "immap")]
        method: String,
        /// TOML run configuration; defaults apply when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        /// Tikhonov weight for the sense method
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
        /// Override the solver seed from the config
        #[arg(long)]
        seed: Option<u64>,
        /// Iteration trace CSV path (default: <out>.trace.csv for iterative methods)
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Compare a reconstruction against a reference and report metrics
    Eval {
        #[arg(long)]
        reference: PathBuf,
        /// Array name inside the reference container
        #[arg(long, default_value = "ground_truth")]
        reference_field: String,
        #[arg(long)]
        estimate: PathBuf,
        #[arg(long, default_value = "recon")]
        estimate_field: String,
        /// Comma-separated: nrmse,psnr,ssim
        #[arg(long, default_value = "nrmse,psnr,ssim")]
        metrics: String,
        /// Write the JSON report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of simulate+recon+eval cells and write an aggregate CSV
    Sweep {
        /// Comma-separated acceleration factors
        #[arg(long, default_value = "2,4,8")]
        accels: String,
        /// Comma-separated noise sigmas
        #[arg(long, default_value = "0.01,0.05")]
        sigmas: String,
        /// Comma-separated methods
        #[arg(long, default_value = "zerofill,sense,immap")]
        methods: String,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 8)]
        coils: usize,
        #[arg(long)]
        acs_lines: Option<usize>,
        #[arg(long, default_value = "random-lines")]
        scheme: String,
        #[arg(long, default_value_t = false)]
        phase: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Parallel worker threads; results do not depend on this
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-2)]
        lambda: f64,
        #[arg(long, short)]
        out_dir: PathBuf,
    },
    /// Export a container array as a 16-bit grayscale PNG
    ExportPng {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, default_value = "recon")]
        field: String,
        /// Display window as lo,hi in magnitude units; default 0,max
        #[arg(long)]
        window: Option<String>,
        /// Container holding a reference; output becomes the error map |field - ref|
        #[arg(long)]
        diff_with: Option<PathBuf>,
        #[arg(long, default_value = "ground_truth")]
        diff_field: String,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<T>()
                .map_err(|e| ImmapError::Config(format!("invalid {what} '{t}': {e}")))
        })
        .collect()
}

fn parse_scheme(s: &str) -> Result<MaskScheme> {
    match s {
        "uniform" => Ok(MaskScheme::Uniform),
        "random-lines" => Ok(MaskScheme::RandomLines),
        other => Err(ImmapError::Config(format!(
            "unknown scheme '{other}' (expected uniform | random-lines)"
        ))),
    }
}

fn load_config(path: Option<&PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn default_acs(size: usize, explicit: Option<usize>) -> usize {
    explicit.unwrap_or_else(|| ((size as f64 * 0.06).round() as usize).max(2))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            size,
            coils,
            accel,
            acs_lines,
            scheme,
            sigma,
            seed,
            phase,
            out,
        } => {
            let spec = AcquisitionSpec {
                size,
                coils,
                accel,
                acs_lines: default_acs(size, acs_lines),
                scheme: parse_scheme(&scheme)?,
                noise_sigma: sigma,
                seed,
                phase,
            };
            cmd_simulate(&spec, &out)
        }
        Command::Recon {
            method,
            config,
            lambda,
            seed,
            trace,
            input,
            out,
        } => {
            let method: ReconMethod = method.parse()?;
            let mut cfg = load_config(config.as_ref())?;
            if let Some(s) = seed {
                cfg.solver.seed = s;
            }
            cmd_recon(method, &cfg, &input, &out, trace.as_deref(), lambda)
        }
        Command::Eval {
            reference,
            reference_field,
            estimate,
            estimate_field,
            metrics,
            out,
        } => {
            let metrics: Vec<String> = parse_list(&metrics, "metric")?;
            cmd_eval(
                &reference,
                &reference_field,
                &estimate,
                &estimate_field,
                &metrics,
                out.as_deref(),
            )
            .map(|_| ())
        }
        Command::Sweep {
            accels,
            sigmas,
            methods,
            size,
            coils,
            acs_lines,
            scheme,
            phase,
            seed,
            workers,
            config,
            lambda,
            out_dir,
        } => {
            let spec = SweepSpec {
                accels: parse_list(&accels, "acceleration")?,
                sigmas: parse_list(&sigmas, "sigma")?,
                methods: parse_list(&methods, "method")?,
                size,
                coils,
                acs_lines: default_acs(size, acs_lines),
                scheme: parse_scheme(&scheme)?,
                phase,
                seed,
                workers,
                sense_lambda: lambda,
            };
            let cfg = load_config(config.as_ref())?;
            cmd_sweep(&spec, &cfg, &out_dir)
        }
        Command::ExportPng {
            input,
            field,
            window,
            diff_with,
            diff_field,
            out,
        } => {
            let window = match window {
                None => None,
                Some(s) => {
                    let parts: Vec<f64> = parse_list(&s, "window bound")?;
                    if parts.len() != 2 {
                        return Err(ImmapError::Config(format!(
                            "window must be 'lo,hi', got '{s}'"
                        )));
                    }
                    Some((parts[0], parts[1]))
                }
            };
            let diff = diff_with.as_ref().map(|p| (p.as_path(), diff_field.as_str()));
            cmd_export_png(&input, &field, window, diff, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests exit 0; real usage errors exit 1
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
