//! Monte Carlo experiments.
//!
//! Each trial draws its own channel, deviation table, gear schedule, pilot,
//! noise and network initialisation. Trial `k` under master seed `s` uses
//! `derive_seed(s, Stream::Trial, k)` as its root seed and splits the per-stream
//! seeds from that, so trial `k` sees the same channel and deviations at every
//! SNR of a sweep (only the noise level changes). Trials run on the rayon pool
//! and are collected in `(snr, trial)` order, which keeps every output
//! independent of scheduling.
//!
//! Phase errors are always measured relative to gear 1 of each element, since
//! a per-element common phase cannot be told apart from the channel.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;

use crate::channel::{generate_channels, generate_pilot, measure_set, ChannelModelSpec, ChannelSet, PilotSequence};
use crate::crb::fisher;
use crate::error::{check_dim, Error, Result};
use crate::estimator::{calibrate, per_iteration_flops, QnnState, TrainOptions};
use crate::model::{nominal_table, sample_deviated_table, wrap_pm_pi_unchecked, MeasurementSet, PhaseTable, RisConfig};
use crate::rng::{derive_seed, Stream};
use crate::schedule::{build_schedule, GearSchedule};

/// Gear-1-anchored phase RMSE in degrees:
/// `sqrt(sum_{m, l>=2} e_{m,l}^2 / ((L-1) M_ris))` with
/// `e_{m,l} = wrap((est_{m,l} - est_{m,1}) - (true_{m,l} - true_{m,1}))`.
pub fn align_and_rmse(table_est: &PhaseTable, table_true: &PhaseTable) -> Result<f64> {
    check_dim("estimated table rows (M_ris)", table_true.m_ris(), table_est.m_ris())?;
    check_dim("estimated table columns (L)", table_true.l_gears(), table_est.l_gears())?;
    let (m_ris, l) = (table_true.m_ris(), table_true.l_gears());
    if l < 2 {
        return Err(Error::InvalidConfig("anchored RMSE needs at least two gears".into()));
    }
    let mut sum = 0.0;
    for m in 0..m_ris {
        let (e1, t1) = (table_est.phase(m, 0), table_true.phase(m, 0));
        for g in 1..l {
            let e = wrap_pm_pi_unchecked((table_est.phase(m, g) - e1) - (table_true.phase(m, g) - t1));
            sum += e * e;
        }
    }
    Ok((sum / ((l - 1) * m_ris) as f64).sqrt().to_degrees())
}

/// Unanchored RMSE over all `L M_ris` entries, in degrees.
pub fn raw_rmse(table_est: &PhaseTable, table_true: &PhaseTable) -> Result<f64> {
    check_dim("estimated table rows (M_ris)", table_true.m_ris(), table_est.m_ris())?;
    check_dim("estimated table columns (L)", table_true.l_gears(), table_est.l_gears())?;
    let diffs = table_est.as_matrix() - table_true.as_matrix();
    let sum: f64 = diffs.iter().map(|d| wrap_pm_pi_unchecked(*d).powi(2)).sum();
    Ok((sum / diffs.len() as f64).sqrt().to_degrees())
}

/// Everything a sweep needs besides the swept variable.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub base: RisConfig,
    pub channel: ChannelModelSpec,
    /// Deviation bound in radians.
    pub eps_max: f64,
    pub snr_list: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub train: TrainOptions,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.snr_list.is_empty() {
            return Err(Error::InvalidConfig("the SNR list must not be empty".into()));
        }
        if !(0.0..PI).contains(&self.eps_max) {
            return Err(Error::InvalidConfig(format!(
                "deviation bound must be in [0, 180) degrees, got {}",
                self.eps_max.to_degrees()
            )));
        }
        self.channel.validate()?;
        self.train.validate()
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        derive_seed(self.master_seed, Stream::Trial, trial as u64)
    }
}

/// One simulated calibration problem with its ground truth.
#[derive(Debug, Clone)]
pub struct TrialInstance {
    pub cfg: RisConfig,
    pub channels: ChannelSet,
    pub table_true: PhaseTable,
    pub schedule: GearSchedule,
    pub pilot: PilotSequence,
    pub measurements: MeasurementSet,
}

impl TrialInstance {
    /// Draws every random ingredient of a trial from `trial_seed`.
    pub fn simulate(cfg: &RisConfig, channel: &ChannelModelSpec, eps_max: f64, trial_seed: u64) -> Result<Self> {
        let seed = |s| derive_seed(trial_seed, s, 0);
        let channels = generate_channels(channel, cfg, seed(Stream::Channels))?;
        let table_true = sample_deviated_table(cfg, eps_max, seed(Stream::Deviations))?;
        let schedule = build_schedule(cfg, seed(Stream::Schedule));
        let pilot = generate_pilot(cfg.n_pilot(), seed(Stream::Pilot))?;
        let measurements = measure_set(&channels, &table_true, &schedule, &pilot, cfg, seed(Stream::Noise))?;
        Ok(Self {
            cfg: cfg.clone(),
            channels,
            table_true,
            schedule,
            pilot,
            measurements,
        })
    }

    pub fn init_seed(trial_seed: u64) -> u64 {
        derive_seed(trial_seed, Stream::Init, 0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub measure: Duration,
    pub calibrate: Duration,
    pub crb: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub snr_db: f64,
    pub trial: usize,
    pub rmse_deg: f64,
    /// `sqrt(mean CRB(Omega))` in degrees.
    pub crb_rmse_deg: f64,
    /// Anchored RMSE of simply reporting the nominal table.
    pub nominal_rmse_deg: f64,
    pub epochs_run: usize,
    pub final_c_ave: f64,
    pub converged: bool,
    pub wall_time: PhaseTimes,
}

/// Simulates, calibrates and bounds one trial at one SNR.
pub fn run_trial(exp: &ExperimentConfig, snr_db: f64, trial: usize) -> Result<TrialResult> {
    let cfg = exp.base.with_snr_db(snr_db)?;
    let seed = exp.trial_seed(trial);
    let t0 = Instant::now();
    let inst = TrialInstance::simulate(&cfg, &exp.channel, exp.eps_max, seed)?;
    let t1 = Instant::now();
    let report = calibrate(&inst.measurements, &inst.schedule, &cfg, &exp.train, TrialInstance::init_seed(seed))?;
    let t2 = Instant::now();
    let crb = fisher(inst.channels.h_cas(), &inst.table_true, &inst.schedule, &cfg)?;
    let t3 = Instant::now();
    Ok(TrialResult {
        snr_db,
        trial,
        rmse_deg: align_and_rmse(&report.table_est, &inst.table_true)?,
        crb_rmse_deg: crb.rmse_bound_deg(),
        nominal_rmse_deg: align_and_rmse(&nominal_table(&cfg), &inst.table_true)?,
        epochs_run: report.epochs_run,
        final_c_ave: report.final_c_ave,
        converged: report.converged,
        wall_time: PhaseTimes {
            measure: t1 - t0,
            calibrate: t2 - t1,
            crb: t3 - t2,
        },
    })
}

/// Root-mean-square of a set of per-trial RMSE values.
fn pooled_rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    (sum / n as f64).sqrt()
}

/// One line of `rmse_vs_snr.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RmseRow {
    pub snr_db: f64,
    /// `sqrt(E ||Omega_hat - Omega||^2 / ((L-1) M_ris))` over trials, degrees.
    pub rmse_deg: f64,
    /// `sqrt(mean CRB(Omega))` averaged over trials, degrees.
    pub crb_deg: f64,
    pub ratio: f64,
    pub trials: usize,
}

#[derive(Debug, Clone)]
pub struct RmseSweep {
    pub rows: Vec<RmseRow>,
    /// Trial results sorted by `(snr, trial)`.
    pub trials: Vec<TrialResult>,
    /// Anchored RMSE of the uncalibrated (nominal) table, degrees.
    pub nominal_rmse_deg: f64,
}

impl RmseSweep {
    /// Rows whose RMSE sits more than twice above the bound, a sign that
    /// training stopped in a local optimum.
    pub fn flagged_rows(&self) -> impl Iterator<Item = &RmseRow> {
        self.rows.iter().filter(|r| r.ratio > 2.0)
    }
}

/// RMSE and CRB at each SNR of `exp.snr_list`.
pub fn run_rmse_vs_snr(exp: &ExperimentConfig) -> Result<RmseSweep> {
    exp.validate()?;
    let jobs: Vec<(usize, usize)> = (0..exp.snr_list.len())
        .flat_map(|s| (0..exp.trials).map(move |t| (s, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(s, t)| run_trial(exp, exp.snr_list[s], t))
        .collect::<Result<Vec<_>>>()?;
    let rows = exp
        .snr_list
        .iter()
        .enumerate()
        .map(|(s, &snr_db)| {
            let cell = &trials[s * exp.trials..(s + 1) * exp.trials];
            let rmse_deg = pooled_rms(cell.iter().map(|t| t.rmse_deg));
            let crb_deg = pooled_rms(cell.iter().map(|t| t.crb_rmse_deg));
            RmseRow {
                snr_db,
                rmse_deg,
                crb_deg,
                ratio: rmse_deg / crb_deg,
                trials: exp.trials,
            }
        })
        .collect::<Vec<_>>();
    for r in rows.iter().filter(|r| r.ratio > 2.0) {
        log::warn!(
            "RMSE is {:.2}x the CRB at {} dB; training likely stopped at a local optimum",
            r.ratio,
            r.snr_db
        );
    }
    let nominal_rmse_deg = pooled_rms(trials.iter().map(|t| t.nominal_rmse_deg));
    Ok(RmseSweep {
        rows,
        trials,
        nominal_rmse_deg,
    })
}

/// Epoch-average cost curve of one (SNR, size) cell.
#[derive(Debug, Clone)]
pub struct ConvergenceCell {
    pub snr_db: f64,
    pub m_ris: usize,
    /// Mean over trials of the per-epoch `C_ave`; a trial that stopped early
    /// contributes its final value to later epochs.
    pub mean_history: Vec<f64>,
    /// Final `C_ave` of every trial.
    pub final_c_ave: Vec<f64>,
    pub epochs_run: Vec<usize>,
    /// Expected residual per sample at the noise floor, `2 sigma^2 M_r / N`.
    pub noise_floor: f64,
}

impl ConvergenceCell {
    pub fn mean_final_c_ave(&self) -> f64 {
        self.final_c_ave.iter().sum::<f64>() / self.final_c_ave.len() as f64
    }
}

fn mean_curve(histories: &[Vec<f64>]) -> Vec<f64> {
    let len = histories.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|t| {
            let sum: f64 = histories
                .iter()
                .map(|h| h.get(t).or(h.last()).copied().unwrap_or(0.0))
                .sum();
            sum / histories.len() as f64
        })
        .collect()
}

/// Convergence curves for every SNR of `exp.snr_list` and every RIS size.
pub fn run_convergence(exp: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<ConvergenceCell>> {
    exp.validate()?;
    if sizes.is_empty() {
        return Err(Error::InvalidConfig("the RIS size list must not be empty".into()));
    }
    let mut cells = Vec::new();
    for &m_ris in sizes {
        let base = exp.base.with_m_ris(m_ris)?;
        for &snr_db in &exp.snr_list {
            let cfg = base.with_snr_db(snr_db)?;
            let reports = (0..exp.trials)
                .into_par_iter()
                .map(|t| {
                    let seed = exp.trial_seed(t);
                    let inst = TrialInstance::simulate(&cfg, &exp.channel, exp.eps_max, seed)?;
                    calibrate(&inst.measurements, &inst.schedule, &cfg, &exp.train, TrialInstance::init_seed(seed))
                })
                .collect::<Result<Vec<_>>>()?;
            let histories: Vec<Vec<f64>> = reports.iter().map(|r| r.c_ave_history.clone()).collect();
            cells.push(ConvergenceCell {
                snr_db,
                m_ris,
                mean_history: mean_curve(&histories),
                final_c_ave: reports.iter().map(|r| r.final_c_ave).collect(),
                epochs_run: reports.iter().map(|r| r.epochs_run).collect(),
                noise_floor: cfg.measurement_noise_var() * cfg.m_r() as f64,
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub m_ris: usize,
    pub sec_per_epoch: f64,
}

#[derive(Debug, Clone)]
pub struct RuntimeScaling {
    pub rows: Vec<RuntimeRow>,
    /// Least-squares slope of `ln(sec_per_epoch)` against `ln(m_ris)`.
    pub slope: f64,
    /// Complex multiplications per sample update at each size.
    pub flops_per_iteration: Vec<f64>,
}

/// Least-squares slope of `y` on `x`.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Minimum wall time covered by one timing sample.
const TIMING_WINDOW: Duration = Duration::from_millis(40);
const TIMING_REPEATS: usize = 7;

/// Wall-clock seconds per training epoch for each RIS size, at the receiver
/// size and group count of `exp.base` and the first SNR of `exp.snr_list`.
///
/// Every size is timed as the median over several windows of whole epochs.
pub fn run_runtime_scaling(exp: &ExperimentConfig, sizes: &[usize]) -> Result<RuntimeScaling> {
    exp.validate()?;
    if sizes.len() < 2 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "runtime sizes must contain at least two strictly ascending values".into(),
        ));
    }
    let mut rows = Vec::with_capacity(sizes.len());
    let mut flops = Vec::with_capacity(sizes.len());
    for &m_ris in sizes {
        let cfg = exp.base.with_m_ris(m_ris)?.with_snr_db(exp.snr_list[0])?;
        let seed = exp.trial_seed(0);
        let inst = TrialInstance::simulate(&cfg, &exp.channel, exp.eps_max, seed)?;
        let mut state = QnnState::initial(&cfg, exp.train.learning_rate, TrialInstance::init_seed(seed));
        let t = Instant::now();
        state.run_epoch(&inst.measurements, &inst.schedule)?;
        let one = t.elapsed().max(Duration::from_micros(1));
        let epochs = (TIMING_WINDOW.as_secs_f64() / one.as_secs_f64()).ceil().clamp(2.0, 1e5) as usize;
        let mut samples = Vec::with_capacity(TIMING_REPEATS);
        for _ in 0..TIMING_REPEATS {
            let t = Instant::now();
            for _ in 0..epochs {
                state.run_epoch(&inst.measurements, &inst.schedule)?;
            }
            samples.push(t.elapsed().as_secs_f64() / epochs as f64);
        }
        samples.sort_by(f64::total_cmp);
        rows.push(RuntimeRow {
            m_ris,
            sec_per_epoch: samples[TIMING_REPEATS / 2],
        });
        flops.push(per_iteration_flops(&cfg));
    }
    let lx: Vec<f64> = rows.iter().map(|r| (r.m_ris as f64).ln()).collect();
    let ly: Vec<f64> = rows.iter().map(|r| r.sec_per_epoch.ln()).collect();
    Ok(RuntimeScaling {
        slope: ls_slope(&lx, &ly),
        rows,
        flops_per_iteration: flops,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `snr_db,rmse_deg,crb_deg,ratio,trials`
pub fn write_rmse_csv(path: &Path, rows: &[RmseRow]) -> Result<()> {
    write_rows(path, rows)
}

#[derive(Serialize)]
struct ConvergenceRow {
    epoch: usize,
    c_ave: f64,
    snr_db: f64,
    m_ris: usize,
}

/// `epoch,c_ave,snr_db,m_ris`
pub fn write_convergence_csv(path: &Path, cells: &[ConvergenceCell]) -> Result<()> {
    write_rows(
        path,
        cells.iter().flat_map(|c| {
            c.mean_history.iter().enumerate().map(|(t, &c_ave)| ConvergenceRow {
                epoch: t + 1,
                c_ave,
                snr_db: c.snr_db,
                m_ris: c.m_ris,
            })
        }),
    )
}

/// `m_ris,sec_per_epoch`
pub fn write_runtime_csv(path: &Path, rows: &[RuntimeRow]) -> Result<()> {
    write_rows(path, rows)
}
