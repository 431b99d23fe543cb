//! The `riscal` command-line front end.
//!
//! Every subcommand resolves its settings from defaults, then `--config`, then
//! flags, writes its outputs under `--out`, and records the resolved settings
//! in `run_manifest.txt`. Exit codes: 0 on success, 1 for invalid input, 2 for
//! numerical failures (divergence, singular Fisher information).

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{Settings, CONFIG_SCHEMA_VERSION};
use crate::crb::fisher;
use crate::error::{Error, Result};
use crate::estimator::calibrate;
use crate::harness::{
    align_and_rmse, run_convergence, run_rmse_vs_snr, run_runtime_scaling, write_convergence_csv,
    write_rmse_csv, write_runtime_csv, ExperimentConfig, TrialInstance,
};
use crate::io;
use crate::model::RisConfig;
use crate::schedule::min_measurements;

const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (config schema 1)");

const DEFAULT_MRIS: usize = 16;
const DEFAULT_MR: usize = 4;
const DEFAULT_CONVERGENCE_SIZES: [usize; 3] = [16, 32, 64];
const DEFAULT_BENCH_SIZES: [usize; 4] = [32, 64, 128, 256];
const DEFAULT_BENCH_MR: usize = 8;

#[derive(Debug, Parser)]
#[command(name = "riscal", version = VERSION, about = "RIS phase calibration by backpropagation, with Cramér-Rao benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate channels, deviations, a gear schedule and the measurements.
    Simulate(Overrides),
    /// Estimate the phase table from simulated or recorded measurements.
    Calibrate(Overrides),
    /// Cramér-Rao bound of every phase at the simulated ground truth.
    Crb(CrbArgs),
    /// Monte Carlo RMSE and CRB against SNR.
    SweepRmse(Overrides),
    /// Epoch-average cost curves across SNRs and RIS sizes.
    SweepConvergence(Overrides),
    /// Seconds per training epoch against RIS size.
    Bench(Overrides),
    /// Minimum measurement count for identifiability.
    Bound(Overrides),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Calibrate(_) => "calibrate",
            Command::Crb(_) => "crb",
            Command::SweepRmse(_) => "sweep-rmse",
            Command::SweepConvergence(_) => "sweep-convergence",
            Command::Bench(_) => "bench",
            Command::Bound(_) => "bound",
        }
    }

    fn overrides(&self) -> &Overrides {
        match self {
            Command::Crb(a) => &a.overrides,
            Command::Simulate(o)
            | Command::Calibrate(o)
            | Command::SweepRmse(o)
            | Command::SweepConvergence(o)
            | Command::Bench(o)
            | Command::Bound(o) => o,
        }
    }
}

/// Flags mirror config keys one to one and are parsed by the same code.
#[derive(Debug, Args)]
struct Overrides {
    /// `key = value` settings file (a previous run's manifest works too).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    /// SNR in dB; comma-separated for sweeps.
    #[arg(long = "snr-db", allow_hyphen_values = true)]
    snr_db: Option<String>,
    /// RIS element count; comma-separated for sweeps and benchmarks.
    #[arg(long)]
    mris: Option<String>,
    /// Receive antennas.
    #[arg(long)]
    mr: Option<String>,
    /// Phase-shifter resolution in bits.
    #[arg(long)]
    bits: Option<String>,
    /// Measurement groups O (each group is L measurements).
    #[arg(long)]
    groups: Option<String>,
    #[arg(long = "pilot-len")]
    pilot_len: Option<String>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<String>,
    /// Stop when the epoch-average cost improves by less than this.
    #[arg(long = "eps-stop")]
    eps_stop: Option<String>,
    #[arg(long = "max-epochs")]
    max_epochs: Option<String>,
    /// Deviation bound in degrees.
    #[arg(long = "eps-max-deg")]
    eps_max_deg: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<String>,
    /// `sv` (Saleh-Valenzuela) or `rayleigh`.
    #[arg(long)]
    channel: Option<String>,
    #[arg(long = "sv-clusters")]
    sv_clusters: Option<String>,
    #[arg(long = "sv-rays")]
    sv_rays: Option<String>,
    /// Calibrate recorded `measurements.csv` + `schedule.csv` from this directory.
    #[arg(long)]
    input: Option<String>,
}

#[derive(Debug, Args)]
struct CrbArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Also write the full FIM as a binary dump to this file.
    #[arg(long = "dump-fim")]
    dump_fim: Option<PathBuf>,
}

impl Overrides {
    fn resolve(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.load_file(path)?;
        }
        let flags = [
            ("seed", &self.seed),
            ("snr-db", &self.snr_db),
            ("mris", &self.mris),
            ("mr", &self.mr),
            ("bits", &self.bits),
            ("groups", &self.groups),
            ("pilot-len", &self.pilot_len),
            ("lr", &self.lr),
            ("eps-stop", &self.eps_stop),
            ("max-epochs", &self.max_epochs),
            ("eps-max-deg", &self.eps_max_deg),
            ("trials", &self.trials),
            ("out", &self.out),
            ("channel", &self.channel),
            ("sv-clusters", &self.sv_clusters),
            ("sv-rays", &self.sv_rays),
            ("input", &self.input),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.apply(key, v).map_err(|e| Error::InvalidConfig(format!("--{key}: {e}")))?;
            }
        }
        Ok(s)
    }
}

/// Runs the CLI on `args` (including the program name); returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn dispatch(cmd: &Command) -> Result<()> {
    let mut settings = cmd.overrides().resolve()?;
    match cmd {
        Command::Simulate(_) => simulate(&mut settings),
        Command::Calibrate(_) => calibrate_cmd(&mut settings),
        Command::Crb(a) => crb_cmd(&mut settings, a.dump_fim.as_deref()),
        Command::SweepRmse(_) => sweep_rmse(&mut settings),
        Command::SweepConvergence(_) => sweep_convergence(&mut settings),
        Command::Bench(_) => bench(&mut settings),
        Command::Bound(_) => bound(&mut settings),
    }
    .and_then(|outputs| {
        if outputs {
            write_manifest(&settings, cmd.name())
        } else {
            Ok(())
        }
    })
}

fn out_dir(s: &Settings) -> Result<&Path> {
    fs::create_dir_all(&s.out).map_err(|e| Error::io(&s.out, e))?;
    Ok(&s.out)
}

fn write_manifest(s: &Settings, command: &str) -> Result<()> {
    let mut pairs = vec![
        ("command".to_string(), command.to_string()),
        ("config-schema".to_string(), CONFIG_SCHEMA_VERSION.to_string()),
    ];
    pairs.extend(s.to_pairs());
    io::write_key_values(
        &s.out.join("run_manifest.txt"),
        &format!("riscal {VERSION}\nrerun with: riscal {command} --config run_manifest.txt --out <dir>"),
        &pairs,
    )
}

fn warn_if_underdetermined(cfg: &RisConfig) {
    let b = min_measurements(cfg);
    if cfg.o_groups() < b.o_min {
        eprintln!(
            "warning: {} groups (Q = {}) is below the identifiability bound Q_min = {} (O_min = {}); \
             the phases cannot all be identified",
            cfg.o_groups(),
            cfg.q_total(),
            b.q_min,
            b.o_min
        );
    }
}

/// Fixes the single-run geometry in the settings so the manifest records it.
fn single_config(s: &mut Settings) -> Result<RisConfig> {
    let snr = s.snr_single()?;
    fixed_geometry(s, snr)
}

fn fixed_geometry(s: &mut Settings, snr_db: f64) -> Result<RisConfig> {
    let m_ris = s.mris_single(DEFAULT_MRIS)?;
    let m_r = s.mr.unwrap_or(DEFAULT_MR);
    s.mris = Some(vec![m_ris]);
    s.mr = Some(m_r);
    let cfg = s.ris_config(m_ris, m_r, snr_db)?;
    warn_if_underdetermined(&cfg);
    Ok(cfg)
}

/// The single-run trial: the same seeds drive `simulate`, `calibrate` and `crb`.
fn single_trial(s: &Settings, cfg: &RisConfig) -> Result<(TrialInstance, u64)> {
    let exp = experiment(s, cfg.clone())?;
    let seed = exp.trial_seed(0);
    Ok((TrialInstance::simulate(cfg, &exp.channel, exp.eps_max, seed)?, seed))
}

fn experiment(s: &Settings, base: RisConfig) -> Result<ExperimentConfig> {
    let exp = ExperimentConfig {
        base,
        channel: s.channel_spec()?,
        eps_max: s.eps_max_rad()?,
        snr_list: s.snr_db.clone(),
        trials: s.trials,
        master_seed: s.seed,
        train: s.train_options()?,
    };
    exp.validate()?;
    Ok(exp)
}

fn simulate(s: &mut Settings) -> Result<bool> {
    let cfg = single_config(s)?;
    let (inst, _) = single_trial(s, &cfg)?;
    let dir = out_dir(s)?;
    io::write_channels(&dir.join("channels.csv"), &inst.channels)?;
    io::write_phase_table(&dir.join("true_table.csv"), &inst.table_true)?;
    io::write_schedule(&dir.join("schedule.csv"), &inst.schedule)?;
    io::write_measurements(&dir.join("measurements.csv"), &inst.measurements)?;
    println!(
        "simulated Q = {} measurements ({} elements, {} gears, {} antennas, {} dB) into {}",
        cfg.q_total(),
        cfg.m_ris(),
        cfg.l_gears(),
        cfg.m_r(),
        cfg.snr_db(),
        dir.display()
    );
    Ok(true)
}

fn calibrate_cmd(s: &mut Settings) -> Result<bool> {
    let cfg = single_config(s)?;
    let train = s.train_options()?;
    let (measurements, schedule, truth, init_seed) = match &s.input {
        Some(dir) => {
            let schedule = io::read_schedule(&dir.join("schedule.csv"), cfg.l_gears())?;
            let measurements = io::read_measurements(&dir.join("measurements.csv"), cfg.measurement_noise_var())?;
            let truth_path = dir.join("true_table.csv");
            let truth = if truth_path.exists() {
                Some(io::read_phase_table(&truth_path)?)
            } else {
                None
            };
            let seed = TrialInstance::init_seed(experiment(s, cfg.clone())?.trial_seed(0));
            (measurements, schedule, truth, seed)
        }
        None => {
            let (inst, seed) = single_trial(s, &cfg)?;
            (inst.measurements, inst.schedule, Some(inst.table_true), TrialInstance::init_seed(seed))
        }
    };
    let report = calibrate(&measurements, &schedule, &cfg, &train, init_seed)?;
    let rmse = truth
        .as_ref()
        .map(|t| align_and_rmse(&report.table_est, t))
        .transpose()?;

    let dir = out_dir(s)?;
    io::write_phase_table(&dir.join("estimated_table.csv"), &report.table_est)?;
    io::write_history(&dir.join("history.csv"), &report.c_ave_history)?;
    let mut summary = vec![
        ("epochs_run".to_string(), report.epochs_run.to_string()),
        ("final_c_ave".to_string(), report.final_c_ave.to_string()),
        ("converged".to_string(), report.converged.to_string()),
    ];
    if let Some(r) = rmse {
        summary.push(("rmse_deg".to_string(), r.to_string()));
    }
    io::write_key_values(&dir.join("summary.txt"), "calibration summary (RMSE is relative to gear 1)", &summary)?;

    println!(
        "{} after {} epochs, C_ave = {:.4e}",
        if report.converged { "converged" } else { "stopped at max-epochs" },
        report.epochs_run,
        report.final_c_ave
    );
    if let Some(r) = rmse {
        println!("phase RMSE (gear-1 anchored): {r:.4} deg");
    }
    Ok(true)
}

fn crb_cmd(s: &mut Settings, dump_fim: Option<&Path>) -> Result<bool> {
    let cfg = single_config(s)?;
    let (inst, _) = single_trial(s, &cfg)?;
    let crb = fisher(inst.channels.h_cas(), &inst.table_true, &inst.schedule, &cfg)?;
    let dir = out_dir(s)?;
    io::write_crb(&dir.join("crb.csv"), &crb)?;
    if let Some(p) = dump_fim {
        io::write_fim_binary(p, &crb.fim)?;
    }
    println!(
        "CRB on phase RMSE: {:.4} deg (FIM {}x{}, condition {:.3e})",
        crb.rmse_bound_deg(),
        crb.fim.nrows(),
        crb.fim.ncols(),
        crb.condition
    );
    Ok(true)
}

fn sweep_rmse(s: &mut Settings) -> Result<bool> {
    let cfg = fixed_geometry(s, s.snr_db[0])?;
    let exp = experiment(s, cfg)?;
    let sweep = run_rmse_vs_snr(&exp)?;
    let dir = out_dir(s)?;
    write_rmse_csv(&dir.join("rmse_vs_snr.csv"), &sweep.rows)?;
    println!("snr_db  rmse_deg  crb_deg  ratio");
    for r in &sweep.rows {
        println!("{:6.1}  {:8.4}  {:7.4}  {:5.3}", r.snr_db, r.rmse_deg, r.crb_deg, r.ratio);
    }
    println!(
        "no calibration (nominal table): {:.4} deg; RMSE is measured relative to gear 1 of each element",
        sweep.nominal_rmse_deg
    );
    for r in sweep.flagged_rows() {
        println!(
            "note: at {} dB the RMSE is {:.2}x the bound; training likely stopped in a local optimum",
            r.snr_db, r.ratio
        );
    }
    Ok(true)
}

fn sweep_convergence(s: &mut Settings) -> Result<bool> {
    let sizes = s.mris_list(&DEFAULT_CONVERGENCE_SIZES);
    let m_r = s.mr.unwrap_or(DEFAULT_MR);
    s.mris = Some(sizes.clone());
    s.mr = Some(m_r);
    let base = s.ris_config(sizes[0], m_r, s.snr_db[0])?;
    let exp = experiment(s, base)?;
    let cells = run_convergence(&exp, &sizes)?;
    let dir = out_dir(s)?;
    write_convergence_csv(&dir.join("convergence.csv"), &cells)?;
    println!("m_ris  snr_db  epochs(mean)  final_c_ave  noise_floor");
    for c in &cells {
        let epochs = c.epochs_run.iter().sum::<usize>() as f64 / c.epochs_run.len() as f64;
        println!(
            "{:5}  {:6.1}  {:12.1}  {:11.4e}  {:11.4e}",
            c.m_ris,
            c.snr_db,
            epochs,
            c.mean_final_c_ave(),
            c.noise_floor
        );
    }
    Ok(true)
}

fn bench(s: &mut Settings) -> Result<bool> {
    let sizes = s.mris_list(&DEFAULT_BENCH_SIZES);
    let m_r = s.mr.unwrap_or(DEFAULT_BENCH_MR);
    s.mris = Some(sizes.clone());
    s.mr = Some(m_r);
    let base = s.ris_config(sizes[0], m_r, s.snr_db[0])?;
    let exp = experiment(s, base)?;
    let scaling = run_runtime_scaling(&exp, &sizes)?;
    let dir = out_dir(s)?;
    write_runtime_csv(&dir.join("runtime.csv"), &scaling.rows)?;
    println!("m_ris  sec_per_epoch  cmul_per_update");
    for (r, f) in scaling.rows.iter().zip(&scaling.flops_per_iteration) {
        println!("{:5}  {:13.6e}  {:15}", r.m_ris, r.sec_per_epoch, f);
    }
    println!("log-log slope: {:.3}", scaling.slope);
    Ok(true)
}

fn bound(s: &mut Settings) -> Result<bool> {
    let m_ris = s.mris_single(DEFAULT_MRIS)?;
    let m_r = s.mr.unwrap_or(DEFAULT_MR);
    let cfg = s.ris_config(m_ris, m_r, s.snr_single()?)?;
    let b = min_measurements(&cfg);
    println!("Q_min={} O_min={}", b.q_min, b.o_min);
    Ok(false)
}
