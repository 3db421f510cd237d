use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use pnsim::config::ExperimentConfig;
use pnsim::error::{Result, SimError};
use pnsim::experiment::{
    check_invalid, geometry_positions, preset_fig2, preset_fig3, run_experiment, run_sweep_ues, write_csv_file,
    write_gnuplot, PlotAxis, RunSummary, FIG3_UES,
};
use pnsim::network::write_geometry_csv;
use pnsim::validate::{run_validation, ValidateOptions};

#[derive(Parser)]
#[command(name = "sim", about = "Cell-free massive MIMO OFDM uplink simulator with phase noise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run on a single thread.
        #[arg(long)]
        deterministic: bool,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// SE per channel use over the coherence block (key=value overrides).
    Fig2 {
        overrides: Vec<String>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// SE at channel use 60 versus the number of UEs (key=value overrides).
    Fig3 {
        overrides: Vec<String>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Property suite at small N.
    Validate {
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 4000)]
        trials: usize,
        /// Offset the fast-kernel stride by one sample.
        #[arg(long, hide = true)]
        inject_stride_fault: bool,
    },
    /// Write AP and UE positions of geometry 0 as CSV to stdout.
    DumpGeometry {
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        geometry: usize,
    },
}

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global()
            .map_err(|e| SimError::InvalidInput(e.to_string()))?;
    }
    Ok(())
}

fn finish(config: &ExperimentConfig, summary: &RunSummary, axis: PlotAxis) -> Result<()> {
    write_csv_file(&summary.records, &config.output)?;
    info!("wrote {} records to {}", summary.records.len(), config.output.display());
    if let Some(p) = &config.plot_output {
        let f = std::fs::File::create(p)?;
        write_gnuplot(&summary.records, axis, std::io::BufWriter::new(f))?;
        info!("wrote plot table to {}", p.display());
    }
    eprintln!(
        "{} records, {} SINR values, {} invalid, {} fallbacks, {:.1} s",
        summary.records.len(),
        summary.n_sinr,
        summary.n_invalid,
        summary.n_fallback,
        summary.elapsed_s
    );
    check_invalid(summary)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            deterministic,
            threads,
        } => {
            set_threads(if deterministic { Some(1) } else { threads })?;
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(o) = out {
                cfg.output = o;
            }
            eprint!("{}", cfg.echo());
            let summary = run_experiment(&cfg)?;
            finish(&cfg, &summary, PlotAxis::ChannelUse)
        }
        Command::Fig2 { overrides, threads } => {
            set_threads(threads)?;
            let cfg = preset_fig2(&overrides)?;
            eprint!("{}", cfg.echo());
            let summary = run_experiment(&cfg)?;
            finish(&cfg, &summary, PlotAxis::ChannelUse)
        }
        Command::Fig3 { overrides, threads } => {
            set_threads(threads)?;
            let cfg = preset_fig3(&overrides)?;
            eprint!("{}", cfg.echo());
            eprintln!("# sweep: n_ues = {FIG3_UES:?}");
            let summary = run_sweep_ues(&cfg, &FIG3_UES)?;
            finish(&cfg, &summary, PlotAxis::Ues)
        }
        Command::Validate {
            n,
            trials,
            inject_stride_fault,
        } => {
            let report = run_validation(&ValidateOptions {
                n,
                fault_stride: inject_stride_fault,
                mc_trials: trials,
            });
            for r in &report {
                println!("{r}");
            }
            let failed = report.iter().filter(|r| !r.pass).count();
            if failed > 0 {
                return Err(SimError::Validation(format!("{failed} of {} checks failed", report.len())));
            }
            println!("all {} checks passed", report.len());
            Ok(())
        }
        Command::DumpGeometry { config, geometry } => {
            let cfg = ExperimentConfig::load(&config)?;
            write_geometry_csv(&geometry_positions(&cfg, geometry), std::io::stdout().lock())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
