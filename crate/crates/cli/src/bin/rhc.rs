use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use rhc_cli::{cmd_certify, cmd_run, cmd_sweep, Overrides};

#[derive(Parser)]
#[command(name = "rhc", version, about = "Receding horizon control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Replaces every seed in the scenario.
    #[arg(long)]
    seed: Option<u64>,
    /// Attenuation levels at which to report regret, comma separated.
    #[arg(long, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenario's controller and write trajectory, metrics and constants.
    Run(Common),
    /// Run, then check the applicable inequalities; exits 3 on any violation.
    Certify(Common),
    /// Run a parameter grid, e.g. `--sweep steps=100,400,1600`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_axis)]
        sweep: Vec<(String, Vec<f64>)>,
    },
}

fn parse_axis(s: &str) -> Result<(String, Vec<f64>), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected name=v1,v2,..., got {s}"))?;
    let vals = if v.trim().is_empty() {
        Vec::new()
    } else {
        v.split(',')
            .map(|x| x.trim().parse::<f64>().map_err(|e| format!("{x}: {e}")))
            .collect::<Result<_, _>>()?
    };
    Ok((k.trim().to_string(), vals))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, sweep) = match cli.command {
        Command::Run(ref c) | Command::Certify(ref c) => (c, Vec::new()),
        Command::Sweep { ref common, ref sweep } => (common, sweep.clone()),
    };
    let overrides = Overrides { seed: common.seed, gamma: common.gamma.clone(), sweep };
    let result = match cli.command {
        Command::Run(_) => cmd_run(&common.scenario, &common.out, &overrides),
        Command::Certify(_) => cmd_certify(&common.scenario, &common.out, &overrides),
        Command::Sweep { .. } => cmd_sweep(&common.scenario, &common.out, &overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
