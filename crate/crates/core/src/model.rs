//! Core domain types: the RIS configuration, phase tables and measurement sets.
//!
//! Phases are radians everywhere inside the crate. Element, gear and
//! measurement indices are 0-based in the Rust API; the CSV formats and the
//! CLI write them 1-based (gear `l` in files is gear `l - 1` here).

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::rng_from_seed;
use crate::C64;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_pm_pi(angle: f64) -> Result<f64> {
    if !angle.is_finite() {
        return Err(Error::NonFinite("wrap_pm_pi input"));
    }
    Ok(wrap_pm_pi_unchecked(angle))
}

pub(crate) fn wrap_pm_pi_unchecked(angle: f64) -> f64 {
    // rem_euclid lands in [0, 2pi); shift so pi maps to itself and -pi to pi.
    let r = (angle + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_0_2pi(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs.
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// Geometry and noise level of a calibration run.
#[derive(Debug, Clone, PartialEq)]
pub struct RisConfig {
    m_ris: usize,
    bits: u32,
    l_gears: usize,
    delta: f64,
    m_r: usize,
    n_pilot: usize,
    o_groups: usize,
    q_total: usize,
    snr_db: f64,
    noise_var: f64,
}

impl RisConfig {
    /// `snr_db = f64::INFINITY` gives a noiseless configuration
    /// (`noise_var == 0`), used for recovery tests.
    pub fn new(
        m_ris: usize,
        bits: u32,
        m_r: usize,
        n_pilot: usize,
        o_groups: usize,
        snr_db: f64,
    ) -> Result<Self> {
        if bits == 0 || bits > 16 {
            return Err(Error::InvalidConfig(format!(
                "bits must be in 1..=16, got {bits}"
            )));
        }
        for (name, v) in [
            ("m_ris", m_ris),
            ("m_r", m_r),
            ("n_pilot", n_pilot),
            ("o_groups", o_groups),
        ] {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidConfig(format!(
                "snr_db must be a number or +inf, got {snr_db}"
            )));
        }
        let l_gears = 1usize << bits;
        let noise_var = 10f64.powf(-snr_db / 10.0);
        Ok(Self {
            m_ris,
            bits,
            l_gears,
            delta: TAU / l_gears as f64,
            m_r,
            n_pilot,
            o_groups,
            q_total: o_groups * l_gears,
            snr_db,
            noise_var,
        })
    }

    pub fn m_ris(&self) -> usize {
        self.m_ris
    }
    pub fn bits(&self) -> u32 {
        self.bits
    }
    /// Number of gears `L = 2^bits`.
    pub fn l_gears(&self) -> usize {
        self.l_gears
    }
    /// Nominal gear step `2pi / L`.
    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn m_r(&self) -> usize {
        self.m_r
    }
    pub fn n_pilot(&self) -> usize {
        self.n_pilot
    }
    pub fn o_groups(&self) -> usize {
        self.o_groups
    }
    /// Number of measurements `Q = O * L`.
    pub fn q_total(&self) -> usize {
        self.q_total
    }
    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }
    /// Receiver noise variance per complex sample, `10^(-snr_db/10)`.
    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }
    /// Per-entry variance of a despread on/off difference, `2 sigma^2 / N`.
    pub fn measurement_noise_var(&self) -> f64 {
        2.0 * self.noise_var / self.n_pilot as f64
    }

    pub fn with_snr_db(&self, snr_db: f64) -> Result<Self> {
        Self::new(
            self.m_ris,
            self.bits,
            self.m_r,
            self.n_pilot,
            self.o_groups,
            snr_db,
        )
    }

    pub fn with_m_ris(&self, m_ris: usize) -> Result<Self> {
        Self::new(
            m_ris,
            self.bits,
            self.m_r,
            self.n_pilot,
            self.o_groups,
            self.snr_db,
        )
    }

    pub fn with_groups(&self, o_groups: usize) -> Result<Self> {
        Self::new(
            self.m_ris,
            self.bits,
            self.m_r,
            self.n_pilot,
            o_groups,
            self.snr_db,
        )
    }
}

/// The `M_ris x L` table of per-element, per-gear phase shifts, wrapped to
/// `[0, 2pi)`. Row `m` is the column vector `psi_m` of element `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTable {
    phases: DMatrix<f64>,
}

impl PhaseTable {
    /// Builds a table from raw (possibly unwrapped) phases.
    pub fn from_matrix(raw: DMatrix<f64>) -> Result<Self> {
        if raw.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("phase table"));
        }
        Ok(Self {
            phases: raw.map(wrap_0_2pi),
        })
    }

    pub fn m_ris(&self) -> usize {
        self.phases.nrows()
    }

    pub fn l_gears(&self) -> usize {
        self.phases.ncols()
    }

    /// Phase of `element` at `gear` (both 0-based).
    #[inline]
    pub fn phase(&self, element: usize, gear: usize) -> f64 {
        self.phases[(element, gear)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.phases
    }

    /// `psi_m`: all L phases of one element.
    pub fn element_phases(&self, element: usize) -> Vec<f64> {
        self.phases.row(element).iter().copied().collect()
    }

    /// Largest `|wrap(phi - nominal)|` over the table, in radians.
    pub fn max_deviation(&self) -> f64 {
        let delta = TAU / self.l_gears() as f64;
        let mut worst = 0.0f64;
        for m in 0..self.m_ris() {
            for l in 0..self.l_gears() {
                let e = wrap_pm_pi_unchecked(self.phase(m, l) - l as f64 * delta);
                worst = worst.max(e.abs());
            }
        }
        worst
    }

    pub(crate) fn check_shape(&self, cfg: &RisConfig) -> Result<()> {
        check_dim("phase table rows (M_ris)", cfg.m_ris(), self.m_ris())?;
        check_dim("phase table columns (L)", cfg.l_gears(), self.l_gears())
    }
}

/// Entry `(m, l)` is `l * delta` for every element.
pub fn nominal_table(cfg: &RisConfig) -> PhaseTable {
    let delta = cfg.delta();
    PhaseTable {
        phases: DMatrix::from_fn(cfg.m_ris(), cfg.l_gears(), |_, l| l as f64 * delta),
    }
}

/// Nominal table plus i.i.d. uniform deviations on `[-eps_max, eps_max]`,
/// drawn independently per (element, gear) in element-major order.
pub fn sample_deviated_table(cfg: &RisConfig, eps_max: f64, seed: u64) -> Result<PhaseTable> {
    if !(0.0..PI).contains(&eps_max) {
        return Err(Error::InvalidConfig(format!(
            "deviation bound must be in [0, pi) radians, got {eps_max}"
        )));
    }
    let delta = cfg.delta();
    let mut rng = rng_from_seed(seed);
    let mut phases = DMatrix::zeros(cfg.m_ris(), cfg.l_gears());
    for m in 0..cfg.m_ris() {
        for l in 0..cfg.l_gears() {
            let eps = if eps_max > 0.0 {
                rng.random_range(-eps_max..=eps_max)
            } else {
                0.0
            };
            phases[(m, l)] = wrap_0_2pi(l as f64 * delta + eps);
        }
    }
    Ok(PhaseTable { phases })
}

/// Despread effective-channel estimates `h_hat_q`, one per scheduled
/// measurement, in schedule order.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    h_hat: Vec<DVector<C64>>,
    m_r: usize,
    noise_var_eff: f64,
}

impl MeasurementSet {
    pub fn new(h_hat: Vec<DVector<C64>>, noise_var_eff: f64) -> Result<Self> {
        let m_r = h_hat.first().map_or(0, |h| h.len());
        for h in &h_hat {
            check_dim("measurement length (M_r)", m_r, h.len())?;
        }
        Ok(Self {
            h_hat,
            m_r,
            noise_var_eff,
        })
    }

    pub fn len(&self) -> usize {
        self.h_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h_hat.is_empty()
    }

    pub fn m_r(&self) -> usize {
        self.m_r
    }

    pub fn get(&self, q: usize) -> Option<&DVector<C64>> {
        self.h_hat.get(q)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DVector<C64>> {
        self.h_hat.iter()
    }

    /// Noise variance per complex entry, `2 sigma^2 / N`.
    pub fn noise_var_eff(&self) -> f64 {
        self.noise_var_eff
    }

    pub(crate) fn check_shape(&self, cfg: &RisConfig) -> Result<()> {
        check_dim("measurement count (Q)", cfg.q_total(), self.len())?;
        check_dim("measurement length (M_r)", cfg.m_r(), self.m_r)
    }
}
