use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinforge_cli::commands::{self, Global, Source};

#[derive(Parser)]
#[command(name = "spinforge", version, about = "Simulate coupled spin systems and design RF pulses")]
struct Cli {
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct SourceArgs {
    /// Pulse program applied to the equilibrium state.
    #[arg(long)]
    pulse: Option<PathBuf>,
    /// Prepared state as an operator expression, e.g. "I1x - 2*I1x.I2z".
    #[arg(long, allow_hyphen_values = true)]
    state: Option<String>,
    /// Ideal PRESS acquisition with this echo time, s.
    #[arg(long)]
    press_te: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Spectrum of a pulse, a prepared state or a PRESS acquisition.
    Simulate {
        #[arg(long)]
        system: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
        /// Line broadening, Hz.
        #[arg(long)]
        lb: Option<f64>,
        /// Acquired points (power of two).
        #[arg(long)]
        points: Option<usize>,
        /// Transmitter/receiver carrier, ppm.
        #[arg(long)]
        carrier: Option<f64>,
    },
    /// Optimize a pulse from a run configuration.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Validate and print the materialized plan only.
        #[arg(long)]
        dry_run: bool,
        /// Continue from the checkpoint in the output directory.
        #[arg(long)]
        resume: bool,
        /// Progress line interval in epochs.
        #[arg(long, default_value_t = 10)]
        report_every: usize,
    },
    /// Product-operator decomposition of the state a pulse prepares.
    Analyze {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        pulse: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        #[arg(long)]
        carrier: Option<f64>,
    },
    /// Analytic gradient against central finite differences.
    Gradcheck {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, default_value_t = 64)]
        segments: usize,
        #[arg(long, default_value_t = 1e-4)]
        segment_s: f64,
        #[arg(long, default_value_t = 500.0)]
        amplitude: f64,
        #[arg(long, default_value = "I1x", allow_hyphen_values = true)]
        target: String,
        /// Central-difference step, Hz.
        #[arg(long, default_value_t = commands::DEFAULT_FD_STEP_HZ)]
        step: f64,
        /// Coordinates to probe (0 = all).
        #[arg(long, default_value_t = 0)]
        probes: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        /// Flip the analytic gradient to confirm the check can fail.
        #[arg(long)]
        corrupt: bool,
    },
    /// Write a pulse program as a shape table and a normalized program file.
    Export {
        #[arg(long)]
        pulse: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = Global { out: cli.out, threads: cli.threads, seed: cli.seed, quiet: cli.quiet };
    let result = match cli.command {
        Command::Simulate { system, source, lb, points, carrier } => {
            let source = match (source.pulse, source.state, source.press_te) {
                (Some(p), _, _) => Source::Pulse(p),
                (_, Some(s), _) => Source::State(s),
                (_, _, Some(te)) => Source::PressTe(te),
                _ => unreachable!("clap enforces one source"),
            };
            let args = commands::SimulateArgs { system, source, lb_hz: lb, points, carrier_ppm: carrier };
            commands::simulate(&g, &args)
        }
        Command::Optimize { config, dry_run, resume, report_every } => {
            let args = commands::OptimizeArgs { config, dry_run, resume, report_every };
            commands::optimize(&g, &args).map(|_| ())
        }
        Command::Analyze { system, pulse, top, carrier } => {
            commands::analyze(&g, &commands::AnalyzeArgs { system, pulse, top, carrier_ppm: carrier }).map(|_| ())
        }
        Command::Gradcheck { system, segments, segment_s, amplitude, target, step, probes, tolerance, corrupt } => {
            let args = commands::GradcheckArgs {
                system,
                segments,
                segment_s,
                amplitude_hz: amplitude,
                target,
                step,
                probes,
                tolerance,
                corrupt,
            };
            commands::gradcheck(&g, &args).map(|_| ())
        }
        Command::Export { pulse } => commands::export(&g, &commands::ExportArgs { pulse }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            for m in &e.messages {
                eprintln!("error: {m}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
