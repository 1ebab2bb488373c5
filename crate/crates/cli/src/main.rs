use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dcmg_core::experiment::{parse_deltas, report_crb, run_single, run_sweep, ExperimentSpec, Manifest, PointFailure};
use dcmg_core::measurement::NoiseModel;
use dcmg_core::training::validate_excitation;

#[derive(Parser)]
#[command(
    name = "dcmg",
    version,
    about = "DC microgrid training, estimation and bound analysis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo sweep over the delta grid; writes sweep.csv, crb.csv and manifest.json.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Bound-predicted RRMSE only; writes crb.csv and manifest.json.
    Crb {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// One trial at the first delta with full diagnostics.
    Single {
        #[command(flatten)]
        common: Common,
        /// Print JSON instead of the text report.
        #[arg(long)]
        json: bool,
        /// Also write report.json into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the training plan at the first delta and check excitation.
    Plan {
        #[command(flatten)]
        common: Common,
    },
    /// Print the effective experiment spec.
    Config {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "toml")]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Toml,
    Json,
}

#[derive(Args)]
struct Common {
    /// Scenario file (.toml or .json); defaults to the built-in reference scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Controllers to evaluate (comma separated, 1-based).
    #[arg(long, value_delimiter = ',')]
    controller: Vec<usize>,
    /// Monte Carlo trials per grid point.
    #[arg(long)]
    trials: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Amplitude fractions: a list `0.001,0.5%` or a log range `lo:hi:n`.
    #[arg(long)]
    delta: Option<String>,
    /// Number of training slots.
    #[arg(long)]
    slots: Option<usize>,
    /// Switch the measurement noise off.
    #[arg(long)]
    noiseless: bool,
    /// Expand the transformed load model around the exact untrained voltage.
    #[arg(long)]
    exact_nominal_voltage: bool,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => load_spec(path)?,
            None => ExperimentSpec::default(),
        };
        if !self.controller.is_empty() {
            spec.controllers = self.controller.clone();
        }
        if let Some(t) = self.trials {
            spec.trials = t;
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(d) = &self.delta {
            spec.plan.deltas = parse_deltas(d)?;
        }
        if let Some(n) = self.slots {
            spec.plan.slots = n;
        }
        if self.noiseless {
            spec.noise = NoiseModel {
                sample_std: 0.0,
                ..spec.noise
            };
        }
        if self.exact_nominal_voltage {
            spec.exact_nominal = true;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn load_spec(path: &Path) -> Result<ExperimentSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let spec = match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        Some("json") => serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
        _ => bail!("{}: expected a .toml or .json file", path.display()),
    };
    Ok(spec)
}

fn write_manifest(out: &Path, manifest: &Manifest) -> Result<()> {
    fs::write(out.join("manifest.json"), manifest.to_json()? + "\n")?;
    Ok(())
}

fn report_failures(failures: &[PointFailure]) {
    for f in failures {
        eprintln!("delta {}: {}", f.delta, f.reason);
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Sweep { common, out } => {
            let spec = common.spec()?;
            fs::create_dir_all(&out)?;
            let sweep = run_sweep(&spec)?;
            sweep.write_csv(fs::File::create(out.join("sweep.csv"))?)?;
            let crb = report_crb(&spec)?;
            crb.write_csv(fs::File::create(out.join("crb.csv"))?)?;
            let outputs = vec!["sweep.csv".into(), "crb.csv".into()];
            let manifest = Manifest::new(&spec, Some(&sweep), crb.failures.clone(), outputs)?;
            write_manifest(&out, &manifest)?;
            report_failures(&manifest.failures);
            println!(
                "{}/{} grid points completed, results in {}",
                manifest.completed_points,
                manifest.grid_points,
                out.display()
            );
            Ok(manifest.failures.is_empty())
        }
        Command::Crb { common, out } => {
            let spec = common.spec()?;
            fs::create_dir_all(&out)?;
            let crb = report_crb(&spec)?;
            crb.write_csv(fs::File::create(out.join("crb.csv"))?)?;
            let manifest = Manifest::new(&spec, None, crb.failures.clone(), vec!["crb.csv".into()])?;
            write_manifest(&out, &manifest)?;
            report_failures(&manifest.failures);
            Ok(crb.complete())
        }
        Command::Single { common, json, out } => {
            let spec = common.spec()?;
            let report = run_single(&spec, spec.plan.deltas[0], spec.controllers[0], spec.seed)?;
            let text = serde_json::to_string_pretty(&report)?;
            if json {
                println!("{text}");
            } else {
                print!("{report}");
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir)?;
                fs::write(dir.join("report.json"), text + "\n")?;
            }
            Ok(true)
        }
        Command::Plan { common } => {
            let spec = common.spec()?;
            let plan = spec.build_plan(spec.plan.deltas[0])?;
            plan.write_csv(std::io::stdout().lock())?;
            let report = validate_excitation(&spec.scenario, &plan)?;
            for c in &report.controllers {
                eprintln!(
                    "controller {}: rank {}/{}  rcond {:.3e}  {}",
                    c.controller,
                    c.diagnostics.rank,
                    c.required_rank,
                    c.diagnostics.rcond(),
                    if c.sufficient() { "ok" } else { "insufficient" }
                );
            }
            Ok(report.sufficient())
        }
        Command::Config { common, format } => {
            let spec = common.spec()?;
            match format {
                Format::Toml => print!("{}", toml::to_string_pretty(&spec)?),
                Format::Json => println!("{}", serde_json::to_string_pretty(&spec)?),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
