use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use eprnet::par::Execution;
use eprnet::scenario::{
    find_scenario, format_listing, list_scenarios, resolve_output_dir, run_scenario, Config,
    ControllerSource, RunOptions, Scenario, OUTPUT_ENV,
};
use eprnet::spectra::GridSpec;
use eprnet::{Error, Result};

/// Entanglement spectra and LQG feedback for a two-node oscillator network.
#[derive(Parser, Debug)]
#[command(name = "eprnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,

    /// Scenario to run (full name or short `figN`); `all` runs every scenario.
    #[arg(long, default_value = "all")]
    scenario: String,

    /// TOML file with parameter overrides and extra scenarios.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, env = OUTPUT_ENV)]
    out: Option<PathBuf>,

    /// Frequency grid `lo:hi:n` in rad/s.
    #[arg(long)]
    grid: Option<GridSpec>,

    /// Controller: a JSON file, `synth`, or `none`.
    #[arg(long)]
    controller: Option<String>,

    /// Initial collocation order of the delay stability analysis.
    #[arg(long)]
    stability_order: Option<usize>,

    /// Evaluate frequency grids on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print the available scenarios and their parameters.
    List,
}

fn selected(cli: &Cli, all: &[Scenario]) -> Result<Vec<Scenario>> {
    let mut picked = if cli.scenario == "all" {
        all.to_vec()
    } else {
        vec![find_scenario(all, &cli.scenario)
            .cloned()
            .ok_or_else(|| Error::Scenario(format!("unknown scenario `{}`", cli.scenario)))?]
    };
    for s in &mut picked {
        if let Some(g) = cli.grid {
            s.grid = g;
        }
        if let Some(c) = &cli.controller {
            s.controller = ControllerSource::parse(c);
        }
        if let Some(o) = cli.stability_order {
            s.stability_order = o;
        }
    }
    Ok(picked)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3} dB")).unwrap_or_else(|| "-".into())
}

fn run(cli: Cli) -> Result<()> {
    let config = cli.config.as_deref().map(Config::load).transpose()?;
    let all = list_scenarios(config.as_ref())?;
    if let Some(Command::List) = cli.command {
        print!("{}", format_listing(&all));
        return Ok(());
    }
    let out_root = resolve_output_dir(cli.out.clone(), config.as_ref());
    let opts = RunOptions {
        execution: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        bootstrap_reference: true,
    };
    for s in selected(&cli, &all)? {
        let summary = run_scenario(&s, &out_root, &opts)?;
        let bands = summary
            .controlled_band_edges
            .as_ref()
            .unwrap_or(&summary.uncontrolled_band_edges);
        let band = match bands.as_slice() {
            [] => "none".to_string(),
            [(lo, hi)] => format!("[{lo:.3e}, {hi:.3e}]"),
            [(lo, hi), rest @ ..] => format!("[{lo:.3e}, {hi:.3e}] +{} more", rest.len()),
        };
        println!(
            "{:<24} reduction(<=1e4) {:>10}  (1e4,1e5] {:>10}  stability {:?}  entangled {}  {:.2}s",
            summary.scenario,
            fmt_opt(summary.reduction_db),
            fmt_opt(summary.reduction_db_mid),
            summary.stability.verdict,
            band,
            summary.elapsed_s
        );
    }
    println!("results in {}", out_root.display());
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eprnet: {e}");
            ExitCode::FAILURE
        }
    }
}
