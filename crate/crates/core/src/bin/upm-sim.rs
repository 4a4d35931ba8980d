use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use upm_sim::harness::{self, Benchmark, Format, WorkloadSpec};
use upm_sim::machine::{self, MachineProfile};

#[derive(Parser)]
#[command(name = "upm-sim", version, about = "Unified-memory APU memory subsystem simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one benchmark over its parameter grid.
    Run {
        /// latency, stream, alloc, fault, atomics, memcpy or usage
        benchmark: Benchmark,
        /// Machine profile file; the built-in profile when omitted.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, env = "UPM_SIM_SEED", default_value_t = 0)]
        seed: u64,
        /// Override one grid axis, e.g. `size=1KiB,4GiB`. Repeatable.
        #[arg(long = "grid", value_name = "KEY=V1,V2")]
        grid: Vec<String>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: Format,
    },
    /// Check the profile against every calibration anchor.
    Verify {
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Profile utilities.
    Profile {
        #[command(subcommand)]
        cmd: ProfileCmd,
    },
}

#[derive(Subcommand)]
enum ProfileCmd {
    /// Print the built-in profile in the profile file format.
    Dump,
}

const USAGE_ERROR: u8 = 1;
const VERIFY_FAILED: u8 = 2;

fn load(path: Option<&PathBuf>) -> Result<MachineProfile, String> {
    let Some(path) = path else {
        return Ok(machine::builtin_mi300a());
    };
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    machine::load_profile(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { USAGE_ERROR } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.cmd {
        Cmd::Run {
            benchmark,
            profile,
            seed,
            grid,
            out,
            format,
        } => {
            let result = load(profile.as_ref()).and_then(|p| {
                let overrides: Vec<&str> = grid.iter().map(String::as_str).collect();
                let spec = WorkloadSpec::new(benchmark, p, seed).with_grid(&overrides).map_err(|e| e.to_string())?;
                harness::run(&spec).map_err(|e| e.to_string())
            });
            let rows = match result {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("upm-sim: {e}");
                    return ExitCode::from(USAGE_ERROR);
                }
            };
            let text = harness::report(&rows, format);
            match out {
                Some(path) => {
                    if let Err(e) = std::fs::write(&path, text) {
                        eprintln!("upm-sim: {}: {e}", path.display());
                        return ExitCode::from(USAGE_ERROR);
                    }
                }
                None => print!("{text}"),
            }
            ExitCode::SUCCESS
        }
        Cmd::Verify { profile } => {
            let p = match load(profile.as_ref()) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("upm-sim: {e}");
                    return ExitCode::from(USAGE_ERROR);
                }
            };
            let r = harness::verify(&p);
            print!("{}", r.render());
            if r.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(VERIFY_FAILED)
            }
        }
        Cmd::Profile { cmd: ProfileCmd::Dump } => {
            print!("{}", machine::serialize(&machine::builtin_mi300a()));
            ExitCode::SUCCESS
        }
    }
}
