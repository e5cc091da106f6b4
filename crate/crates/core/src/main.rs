use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mocorr::imgcore::BoundaryPolicy;
use mocorr::pipeline::{
    cmd_gridsweep, cmd_metrics, cmd_register_baseline, cmd_sample, cmd_stabilize, cmd_synth,
    PipelineConfig, PipelineError, EXIT_INPUT,
};
use mocorr::tracks::SamplingStrategy;

#[derive(Parser)]
#[command(name = "mocorr", version, about = "Track-driven motion correction for image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Warp every frame onto the reference frame using point tracks.
    Stabilize(Common),
    /// Stabilize with several track-grid sizes and tabulate the scores.
    Gridsweep(Common),
    /// Register every frame onto the reference with the intensity baseline.
    RegisterBaseline(Common),
    /// Generate a synthetic sequence, exact tracks and landmarks from a spec.
    Synth {
        /// Synthesis spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a frame directory against its reference frame.
    Metrics {
        #[command(flatten)]
        common: Common,
        /// Predicted landmark file; needs --landmarks.
        #[arg(long, requires = "landmarks")]
        predicted: Option<PathBuf>,
        /// Reference landmark file.
        #[arg(long, requires = "predicted")]
        landmarks: Option<PathBuf>,
    },
    /// Sample query points on the reference frame.
    Sample(Common),
}

/// Options shared by the config-driven commands; flags override the config file.
#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    frames: Option<PathBuf>,
    #[arg(long)]
    tracks: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    reference: Option<usize>,
    /// Grid size; a comma-separated list for gridsweep.
    #[arg(long, value_delimiter = ',')]
    grid: Vec<usize>,
    #[arg(long)]
    strategy: Option<SamplingStrategy>,
    #[arg(long)]
    seed: Option<u64>,
    /// `clamp` or `constant:<v>`.
    #[arg(long)]
    boundary: Option<BoundaryPolicy>,
    #[arg(long)]
    emit_fields: bool,
}

impl Common {
    fn resolve(&self, multi_grid: bool) -> Result<PipelineConfig, PipelineError> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(p) = &self.frames {
            cfg.frames = Some(p.clone());
        }
        if let Some(p) = &self.tracks {
            cfg.tracks = Some(p.clone());
        }
        if let Some(p) = &self.out {
            cfg.out = Some(p.clone());
        }
        if let Some(r) = self.reference {
            cfg.reference = r;
        }
        if !self.grid.is_empty() {
            if multi_grid {
                cfg.grid_sizes = self.grid.clone();
            } else if let [g] = self.grid[..] {
                cfg.sampling.grid_size = g;
            } else {
                return Err(PipelineError::Contract("--grid takes a single size here".into()));
            }
        }
        if let Some(s) = self.strategy {
            cfg.sampling.strategy = s;
        }
        if let Some(s) = self.seed {
            cfg.sampling.seed = s;
        }
        if let Some(b) = self.boundary {
            cfg.warp.boundary = b;
        }
        if self.emit_fields {
            cfg.emit_fields = true;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<String, PipelineError> {
    match cli.command {
        Command::Stabilize(c) => {
            let s = cmd_stabilize(&c.resolve(false)?)?;
            Ok(format!(
                "ssim before {:.4} after {:.4}; mse before {:.3} after {:.3}",
                s.before.ssim_mean, s.after.ssim_mean, s.before.mse_mean, s.after.mse_mean
            ))
        }
        Command::Gridsweep(c) => {
            let rows = cmd_gridsweep(&c.resolve(true)?)?;
            Ok(rows
                .iter()
                .map(|r| format!("g={:<3} mse {:.3} ssim {:.4}", r.grid_size, r.mse_mean, r.ssim_mean))
                .collect::<Vec<_>>()
                .join("\n"))
        }
        Command::RegisterBaseline(c) => {
            let s = cmd_register_baseline(&c.resolve(false)?)?;
            Ok(format!(
                "ssim before {:.4} after {:.4}; mse before {:.3} after {:.3}",
                s.before.ssim_mean, s.after.ssim_mean, s.before.mse_mean, s.after.mse_mean
            ))
        }
        Command::Synth { spec, out, seed } => {
            let r = cmd_synth(&spec, &out, seed)?;
            Ok(format!(
                "wrote {} frames and {} tracks to {}",
                r.frames.len(),
                r.tracks.num_points(),
                out.display()
            ))
        }
        Command::Metrics {
            common,
            predicted,
            landmarks,
        } => {
            let lm = predicted.as_deref().zip(landmarks.as_deref());
            let r = cmd_metrics(&common.resolve(false)?, lm)?;
            Ok(format!(
                "mse {:.3} ± {:.3}; ssim {:.4} ± {:.4}",
                r.mse_mean, r.mse_sd, r.ssim_mean, r.ssim_sd
            ))
        }
        Command::Sample(c) => {
            let q = cmd_sample(&c.resolve(false)?)?;
            Ok(format!("sampled {} points", q.points.len()))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_INPUT as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli).context("mocorr failed") {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = e
                .downcast_ref::<PipelineError>()
                .map_or(EXIT_INPUT, PipelineError::exit_code);
            eprintln!("error: {:#}", e);
            ExitCode::from(code as u8)
        }
    }
}
