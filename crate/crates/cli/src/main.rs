//! `dlcontrol`: key generation, synthesis, simulation, verification, audit
//! and plot-data export for the encrypted control loop.

mod plot;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dlcontrol::controller::ControllerError;
use dlcontrol::keyring::{Keyring, KeyringError};
use dlcontrol::sim::{self, bound_check, equivalence_audit, ConfigError, RunConfig, SimError, Trajectory};
use dlcontrol::synthesis::{self, DEFAULT_ENVELOPE_POWERS};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "dlcontrol", version, about = "Encrypted networked control with a double cryptographic layer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and distribute all keys for a config.
    Keygen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the stability certificate and key-size requirements.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Also write the report as TOML into this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the encrypted closed loop and write the trajectory.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        /// Directory of per-party key files (from `keygen`); keys are
        /// generated from the config otherwise.
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Re-run and check equivalence, the state bound and key access.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        keys: Option<PathBuf>,
        /// A trajectory CSV that must match the re-run byte for byte.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        /// A ciphertext trace that must match the re-run byte for byte.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Print the key-access matrix.
    Audit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        keys: Option<PathBuf>,
    },
    /// Turn a trajectory CSV into plot-ready data files.
    ExportPlot {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// First step of the residual zoom (default: the last 11 steps).
        #[arg(long)]
        zoom_from: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Override a config value, e.g. `--set grid.m=9`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for `--set run.seed=N`.
    #[arg(long)]
    seed: Option<u64>,
    /// Shorthand for `--set run.horizon=N`.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Keyring(#[from] KeyringError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("{0}")]
    Verification(String),
    #[error("cannot read trajectory: {0}")]
    Trajectory(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) | CliError::Trajectory(_) => 2,
            CliError::Keyring(KeyringError::Io(_)) => 1,
            CliError::Keyring(_) => 3,
            CliError::Verification(_) => 5,
            CliError::Sim(e) => match e {
                SimError::Io(_) => 1,
                SimError::Config(_) | SimError::Synthesis(_) | SimError::Plant(_) => 2,
                SimError::Provision(_) | SimError::Codec(_) => 3,
                SimError::Overflow { .. } | SimError::Controller(ControllerError::Overflow(_)) => 4,
                SimError::Controller(_) => 2,
                SimError::EquivalenceMismatch { .. } => 5,
            },
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(&self.config).map_err(io_err(&self.config))?;
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("run.seed={seed}"));
        }
        if let Some(h) = self.horizon {
            overrides.push(format!("run.horizon={h}"));
        }
        Ok(RunConfig::from_toml_with_overrides(&text, &overrides)?)
    }
}

/// The config with every implicit choice pinned, so it re-runs identically.
fn effective(config: &RunConfig) -> Result<RunConfig, CliError> {
    let scenario = config.scenario()?;
    let mut snap = config.with_explicit_gains(&scenario.gains);
    snap.keys.seed = Some(config.key_seed());
    Ok(snap)
}

fn load_keys(config: &RunConfig, dir: Option<&Path>) -> Result<Keyring, CliError> {
    let scenario = config.scenario()?;
    match dir {
        Some(dir) => {
            let keyring = Keyring::import_dir(dir)?;
            let bound = synthesis::required_paillier_bound(&scenario.gains, scenario.grid.word_bits());
            keyring.check_sizes(scenario.grid, &bound)?;
            Ok(keyring)
        }
        None => Ok(sim::provision_keys(config, &scenario)?),
    }
}

fn keygen(common: &Common, out: &Path) -> Result<(), CliError> {
    let config = common.load()?;
    let scenario = config.scenario()?;
    let keyring = sim::provision_keys(&config, &scenario)?;
    let key_files = keyring.export_keypairs(&out.join("keys"))?;
    let party_files = keyring.export_dir(&out.join("parties"))?;
    write(&out.join("effective_config.toml"), effective(&config)?.to_toml())?;
    println!(
        "Paillier modulus {} bits, RSA moduli {} bits, {} entities",
        keyring.paillier_public().bits(),
        keyring.uplink_public(1).bits(),
        keyring.parties()
    );
    for path in key_files.iter().chain(&party_files) {
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct SynthReport {
    spectral_radius: f64,
    rate: f64,
    gain: f64,
    certificate_power: usize,
    sigma: f64,
    residual: f64,
    initial_norm: f64,
    beta: Option<f64>,
    radius: Option<f64>,
    admitted: bool,
    gain_row_sum: String,
    paillier_bound: String,
    paillier_min_bits: u64,
}

fn synth(common: &Common, out: Option<&Path>) -> Result<(), CliError> {
    let config = common.load()?;
    let sc = config.scenario()?;
    let bounds = synthesis::stability_bounds(&sc.plant, &sc.gains, sc.grid, DEFAULT_ENVELOPE_POWERS)
        .map_err(SimError::from)?;
    let initial_norm = sc
        .initial_state
        .iter()
        .map(dlcontrol::linalg::rational_to_f64)
        .chain(sc.initial_controller.iter().map(|v| v.to_f64()))
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    let region = synthesis::operating_region(&bounds, &sc.gains, &sc.plant);
    let bound = synthesis::required_paillier_bound(&sc.gains, sc.grid.word_bits());
    let env = bounds.envelope;
    let report = SynthReport {
        spectral_radius: env.spectral_radius,
        rate: env.rate,
        gain: env.gain,
        certificate_power: env.certificate_power,
        sigma: bounds.sigma,
        residual: bounds.residual,
        initial_norm,
        beta: region.as_ref().ok().map(|r| r.beta),
        radius: region.as_ref().ok().map(|r| r.radius),
        admitted: region.as_ref().is_ok_and(|r| r.admits(initial_norm)),
        gain_row_sum: sc.gains.max_row_abs_sum().to_string(),
        paillier_bound: bound.to_string(),
        paillier_min_bits: bound.bits() + 1,
    };
    println!("closed-loop spectral radius  {:.6}", report.spectral_radius);
    println!("envelope rate rho            {:.6}", report.rate);
    println!("envelope gain M              {:.4} (certified at power {})", report.gain, report.certificate_power);
    println!("sigma                        {:.4}", report.sigma);
    println!("residual M sigma 2^-m/(1-rho) {:.4}", report.residual);
    match &region {
        Ok(r) => {
            println!("beta                         {:.4}", r.beta);
            println!("operating radius R_o         {:.4}", r.radius);
        }
        Err(e) => println!("operating radius R_o         none ({e})"),
    }
    println!(
        "initial norm |x_c(0)|        {:.4} ({})",
        initial_norm,
        if report.admitted { "admitted" } else { "not certified; overflow is not ruled out" }
    );
    println!("largest gain row sum         {}", report.gain_row_sum);
    println!("Paillier modulus must exceed {} ({} bits or more)", report.paillier_bound, report.paillier_min_bits);
    if let Some(dir) = out {
        create_dir(dir)?;
        let text = toml::to_string(&report).expect("report serializes");
        write(&dir.join("synthesis.toml"), text)?;
    }
    Ok(())
}

fn summary(traj: &Trajectory) -> String {
    let mut s = String::new();
    let bounds = bound_check(traj);
    let equiv = equivalence_audit(traj);
    let _ = writeln!(s, "steps: {}", traj.records.len());
    if let Some(last) = traj.last() {
        let _ = writeln!(s, "final |x|_inf: {}", last.state_inf_norm());
        let from = last.k.saturating_sub(10);
        if let Some(r) = traj.max_state_inf_norm(from..=last.k) {
            let _ = writeln!(s, "steady residual max |x|_inf over k in [{from}, {}]: {r}", last.k);
        }
    }
    let _ = writeln!(s, "analytic residual: {:.6}", traj.bounds.residual);
    let _ = writeln!(s, "{bounds}");
    let _ = writeln!(s, "{equiv}");
    let _ = writeln!(s, "mean step time: {:.3} ms", traj.mean_step_time().as_secs_f64() * 1e3);
    for w in &traj.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn write_artifacts(out: &Path, traj: &Trajectory) -> Result<(), CliError> {
    write(&out.join("trajectory.csv"), traj.to_csv_string())?;
    write(&out.join("trace.txt"), traj.trace_text())?;
    write(&out.join("summary.txt"), summary(traj))
}

fn run(common: &Common, out: &Path, keys: Option<&Path>) -> Result<(), CliError> {
    let config = common.load()?;
    create_dir(out)?;
    write(&out.join("effective_config.toml"), effective(&config)?.to_toml())?;
    let keyring = load_keys(&config, keys)?;
    match sim::run_with_keyring(&config, keyring) {
        Ok(traj) => {
            write_artifacts(out, &traj)?;
            print!("{}", summary(&traj));
            Ok(())
        }
        Err(SimError::EquivalenceMismatch { step, trajectory }) => {
            write_artifacts(out, &trajectory)?;
            Err(SimError::EquivalenceMismatch { step, trajectory }.into())
        }
        Err(e) => Err(e.into()),
    }
}

fn audit_failures(keyring: &Keyring) -> Vec<String> {
    keyring.audit().violations().iter().map(ToString::to_string).collect()
}

fn verify(common: &Common, keys: Option<&Path>, trajectory: Option<&Path>, trace: Option<&Path>) -> Result<(), CliError> {
    let config = common.load()?;
    let keyring = load_keys(&config, keys)?;
    let mut failures = audit_failures(&keyring);
    let traj = match sim::run_with_keyring(&config, keyring) {
        Ok(t) => t,
        Err(SimError::EquivalenceMismatch { step, trajectory }) => {
            failures.push(format!("encrypted loop diverged from the plaintext shadow at step {step}"));
            *trajectory
        }
        Err(e) => return Err(e.into()),
    };
    let bounds = bound_check(&traj);
    let equiv = equivalence_audit(&traj);
    if !bounds.holds() {
        failures.push(bounds.to_string());
    }
    if !equiv.holds() {
        failures.push(equiv.to_string());
    }
    let artifacts = [
        (trajectory, traj.to_csv_string(), "trajectory"),
        (trace, traj.trace_text(), "ciphertext trace"),
    ];
    for (path, expected, what) in artifacts {
        if let Some(path) = path {
            let found = fs::read_to_string(path).map_err(io_err(path))?;
            if found != expected {
                failures.push(format!("{what} {} does not match the re-run", path.display()));
            }
        }
    }
    println!("{equiv}");
    println!("{bounds}");
    if failures.is_empty() {
        println!("key access: no party can recover a signal it must not see");
        println!("verification passed");
        Ok(())
    } else {
        Err(CliError::Verification(format!("verification failed:\n  {}", failures.join("\n  "))))
    }
}

fn audit(common: &Common, keys: Option<&Path>) -> Result<(), CliError> {
    let config = common.load()?;
    let keyring = load_keys(&config, keys)?;
    let report = keyring.audit();
    println!("{:<11} {:<30} {:<8} protected by", "party", "signal", "recovers");
    for e in &report.entries {
        let clause = e.clause.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        let mark = if e.is_violation() { "  VIOLATION" } else { "" };
        println!(
            "{:<11} {:<30} {:<8} {clause}{mark}",
            e.party.to_string(),
            e.signal.to_string(),
            if e.can_recover() { "yes" } else { "no" }
        );
    }
    let failures = audit_failures(&keyring);
    if failures.is_empty() {
        println!("no violations");
        Ok(())
    } else {
        Err(CliError::Verification(format!("{} violations:\n  {}", failures.len(), failures.join("\n  "))))
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Keygen { common, out } => keygen(&common, &out),
        Command::Synth { common, out } => synth(&common, out.as_deref()),
        Command::Run { common, out, keys } => run(&common, &out, keys.as_deref()),
        Command::Verify {
            common,
            keys,
            trajectory,
            trace,
        } => verify(&common, keys.as_deref(), trajectory.as_deref(), trace.as_deref()),
        Command::Audit { common, keys } => audit(&common, keys.as_deref()),
        Command::ExportPlot {
            trajectory,
            out,
            zoom_from,
        } => {
            let written = plot::export(&trajectory, &out, zoom_from)?;
            for path in written {
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
