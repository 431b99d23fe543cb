//! The quasi-neural network (QNN) phase estimator.
//!
//! The network has two trainable weight sets: the phase table and the
//! cascaded channel `H_cas`. Given a gear vector `g` it looks up
//! `phi(m) = table(m, g(m))`, applies the activation `exp(j phi)` and
//! multiplies by `H_cas`:
//!
//! ```text
//! h_qnn = H_cas exp(j phi)
//! C     = || h_hat - h_qnn ||^2
//! dC/dphi    = -2 Im[ (H_cas^H (h_hat - h_qnn)) o exp(-j phi) ]
//! dC/dH_cas* = (h_qnn - h_hat) exp(-j phi)^T
//! ```
//!
//! `dC/dH_cas*` is the Wirtinger (conjugate) gradient. The real directional
//! derivatives are `dC/dRe(H) = 2 Re(dC/dH*)` and `dC/dIm(H) = 2 Im(dC/dH*)`,
//! so `H <- H - lr * dC/dH*` is a descent step.
//!
//! Training sweeps the `Q` samples in order once per epoch with one update per
//! sample, and stops when the epoch-average cost stops improving by at least
//! `eps_stop`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::model::{nominal_table, MeasurementSet, PhaseTable, RisConfig};
use crate::rng::{complex_gaussian, rng_from_seed};
use crate::schedule::GearSchedule;
use crate::C64;

pub const DEFAULT_LEARNING_RATE: f64 = 5e-3;
pub const DEFAULT_EPS_STOP: f64 = 1e-5;
pub const DEFAULT_MAX_EPOCHS: usize = 10_000;

fn check_forward_dims(h_cas: &DMatrix<C64>, phi: &[f64]) -> Result<()> {
    check_dim("phase vector length (M_ris)", h_cas.ncols(), phi.len())
}

fn activation(phi: &[f64]) -> DVector<C64> {
    DVector::from_iterator(phi.len(), phi.iter().map(|p| C64::from_polar(1.0, *p)))
}

/// `H_cas exp(j phi)`.
pub fn forward(h_cas: &DMatrix<C64>, phi: &[f64]) -> Result<DVector<C64>> {
    check_forward_dims(h_cas, phi)?;
    Ok(h_cas * activation(phi))
}

/// Squared Euclidean distance between a label and a network output.
pub fn cost(h_hat: &DVector<C64>, h_qnn: &DVector<C64>) -> Result<f64> {
    check_dim("cost operand length", h_hat.len(), h_qnn.len())?;
    Ok((h_hat - h_qnn).norm_squared())
}

fn residual(h_cas: &DMatrix<C64>, phi: &[f64], h_hat: &DVector<C64>) -> Result<DVector<C64>> {
    let h_qnn = forward(h_cas, phi)?;
    check_dim("label length (M_r)", h_qnn.len(), h_hat.len())?;
    Ok(h_hat - h_qnn)
}

/// `dC/dphi`, a real vector of length `M_ris`.
pub fn grad_phi(h_cas: &DMatrix<C64>, phi: &[f64], h_hat: &DVector<C64>) -> Result<Vec<f64>> {
    let r = residual(h_cas, phi, h_hat)?;
    let back = h_cas.adjoint() * r;
    Ok(back
        .iter()
        .zip(phi)
        .map(|(b, p)| -2.0 * (b * C64::from_polar(1.0, -p)).im)
        .collect())
}

/// `dC/dH_cas*`, the rank-one matrix `(h_qnn - h_hat) exp(-j phi)^T`.
pub fn grad_hcas(h_cas: &DMatrix<C64>, phi: &[f64], h_hat: &DVector<C64>) -> Result<DMatrix<C64>> {
    let r = residual(h_cas, phi, h_hat)?;
    let e_conj = activation(phi).map(|e| e.conj());
    Ok(-r * e_conj.transpose())
}

/// Complex multiplications per training sample spent on the two gradients:
/// `M_r M_ris + M_ris / 2` for the phase gradient (only the imaginary part of
/// the final Hadamard product is needed) and `M_r M_ris` for the channel
/// gradient.
pub fn per_iteration_flops(cfg: &RisConfig) -> f64 {
    let (m_r, m_ris) = (cfg.m_r() as f64, cfg.m_ris() as f64);
    2.0 * m_r * m_ris + m_ris / 2.0
}

#[cfg(test)]
thread_local! {
    /// Complex multiplications in the gradient stage, in half-multiply units.
    static HALF_MULS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

#[inline(always)]
fn grad_mul(a: C64, b: C64) -> C64 {
    #[cfg(test)]
    HALF_MULS.with(|c| c.set(c.get() + 2));
    a * b
}

/// `Im(a * b)`: half the work of a complex multiply.
#[inline(always)]
fn grad_mul_im(a: C64, b: C64) -> f64 {
    #[cfg(test)]
    HALF_MULS.with(|c| c.set(c.get() + 1));
    a.re * b.im + a.im * b.re
}

/// Training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub eps_stop: f64,
    pub max_epochs: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            eps_stop: DEFAULT_EPS_STOP,
            max_epochs: DEFAULT_MAX_EPOCHS,
        }
    }
}

impl TrainOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.eps_stop.is_nan() {
            return Err(Error::InvalidConfig("eps_stop must not be NaN".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Trainable weights plus training bookkeeping.
#[derive(Debug, Clone)]
pub struct QnnState {
    h_cas: DMatrix<C64>,
    /// Unwrapped during training; wrapped only when reported.
    phases: DMatrix<f64>,
    learning_rate: f64,
    epoch: usize,
    c_ave_history: Vec<f64>,
    scratch_e: Vec<C64>,
    scratch_r: Vec<C64>,
}

impl QnnState {
    pub fn new(h_cas: DMatrix<C64>, table: &PhaseTable, learning_rate: f64) -> Result<Self> {
        check_dim("phase table rows (M_ris)", h_cas.ncols(), table.m_ris())?;
        Ok(Self {
            scratch_e: vec![C64::default(); h_cas.ncols()],
            scratch_r: vec![C64::default(); h_cas.nrows()],
            h_cas,
            phases: table.as_matrix().clone(),
            learning_rate,
            epoch: 0,
            c_ave_history: Vec::new(),
        })
    }

    /// Nominal phases and an i.i.d. CN(0, 1) channel drawn from `seed`.
    pub fn initial(cfg: &RisConfig, learning_rate: f64, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let h_cas = DMatrix::from_fn(cfg.m_r(), cfg.m_ris(), |_, _| complex_gaussian(&mut rng, 1.0));
        Self::new(h_cas, &nominal_table(cfg), learning_rate).expect("shapes agree by construction")
    }

    pub fn h_cas(&self) -> &DMatrix<C64> {
        &self.h_cas
    }

    /// Raw (unwrapped) phase weights.
    pub fn raw_phases(&self) -> &DMatrix<f64> {
        &self.phases
    }

    pub fn table(&self) -> Result<PhaseTable> {
        PhaseTable::from_matrix(self.phases.clone())
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn c_ave_history(&self) -> &[f64] {
        &self.c_ave_history
    }

    /// Current phases `phi` selected by a gear vector.
    pub fn phases_for(&self, gears: &[usize]) -> Vec<f64> {
        gears
            .iter()
            .enumerate()
            .map(|(m, &g)| self.phases[(m, g)])
            .collect()
    }

    /// One backpropagation update on the sample `(gears, h_hat)`.
    ///
    /// Both gradients are evaluated at the pre-update weights; the channel
    /// moves along `-lr dC/dH*` and only the `M_ris` probed table entries
    /// `(m, gears[m])` move along `-lr dC/dphi`. Returns the cost before the
    /// update.
    pub fn sgd_step(&mut self, gears: &[usize], h_hat: &DVector<C64>) -> Result<f64> {
        let (m_r, m_ris) = self.h_cas.shape();
        check_dim("gear vector length (M_ris)", m_ris, gears.len())?;
        check_dim("label length (M_r)", m_r, h_hat.len())?;
        let l = self.phases.ncols();
        if let Some(&g) = gears.iter().find(|&&g| g >= l) {
            return Err(Error::IndexOutOfRange {
                what: "gear",
                index: g,
                len: l,
            });
        }
        Ok(self.step_unchecked(gears, h_hat.as_slice()))
    }

    fn step_unchecked(&mut self, gears: &[usize], h_hat: &[C64]) -> f64 {
        let lr = self.learning_rate;
        let m_r = self.h_cas.nrows();
        let e = &mut self.scratch_e;
        let r = &mut self.scratch_r;

        for (m, (&g, e_m)) in gears.iter().zip(e.iter_mut()).enumerate() {
            *e_m = C64::from_polar(1.0, self.phases[(m, g)]);
        }
        // Forward pass; r = h_hat - h_qnn.
        r.copy_from_slice(h_hat);
        let h = self.h_cas.as_mut_slice();
        for (col, e_m) in h.chunks_exact(m_r).zip(e.iter()) {
            for (r_i, h_im) in r.iter_mut().zip(col) {
                *r_i -= h_im * e_m;
            }
        }
        let c = r.iter().map(|v| v.norm_sqr()).sum::<f64>();

        // Backward pass, column by column so each phase gradient sees the
        // pre-update column.
        for (m, (col, e_m)) in h.chunks_exact_mut(m_r).zip(e.iter()).enumerate() {
            let mut back = C64::default();
            for (h_im, r_i) in col.iter().zip(r.iter()) {
                back += grad_mul(h_im.conj(), *r_i);
            }
            let e_conj = e_m.conj();
            let g_phi = -2.0 * grad_mul_im(back, e_conj);
            // -lr * dC/dH*(:, m) = lr * r * conj(e_m)
            for (h_im, r_i) in col.iter_mut().zip(r.iter()) {
                *h_im += grad_mul(*r_i, e_conj) * lr;
            }
            self.phases[(m, gears[m])] -= lr * g_phi;
        }
        c
    }

    /// One pass over all samples in schedule order; returns the epoch
    /// average of the pre-update sample costs.
    pub fn run_epoch(&mut self, measurements: &MeasurementSet, sched: &GearSchedule) -> Result<f64> {
        check_dim("measurement count (Q)", sched.q_total(), measurements.len())?;
        check_dim("schedule elements (M_ris)", self.h_cas.ncols(), sched.m_ris())?;
        check_dim("schedule gears (L)", self.phases.ncols(), sched.l_gears())?;
        check_dim("measurement length (M_r)", self.h_cas.nrows(), measurements.m_r())?;
        let mut loss = 0.0;
        for (q, h_hat) in measurements.iter().enumerate() {
            let gears = sched.gear_vector(q)?;
            loss += self.step_unchecked(gears, h_hat.as_slice());
        }
        let c_ave = loss / measurements.len() as f64;
        self.epoch += 1;
        self.c_ave_history.push(c_ave);
        Ok(c_ave)
    }
}

/// Output of [`calibrate`].
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub table_est: PhaseTable,
    pub h_cas_est: DMatrix<C64>,
    pub epochs_run: usize,
    pub final_c_ave: f64,
    pub converged: bool,
    pub c_ave_history: Vec<f64>,
}

const DIVERGENCE_FACTOR: f64 = 1e6;

/// Trains the QNN on a measurement set.
///
/// Initialises with the nominal table and a random CN(0, 1) channel from
/// `seed`, then runs epochs until the epoch-average cost improves by less
/// than `opts.eps_stop` between consecutive epochs (`converged = true`) or
/// `opts.max_epochs` is reached.
pub fn calibrate(
    measurements: &MeasurementSet,
    sched: &GearSchedule,
    cfg: &RisConfig,
    opts: &TrainOptions,
    seed: u64,
) -> Result<CalibrationReport> {
    opts.validate()?;
    measurements.check_shape(cfg)?;
    sched.check_shape(cfg)?;
    let mut state = QnnState::initial(cfg, opts.learning_rate, seed);
    let mut converged = false;
    let mut prev = f64::INFINITY;
    // A residual this far above the data plus initial-model energy only arises
    // from a runaway step size.
    let data_energy = measurements.iter().map(|h| h.norm_squared()).sum::<f64>() / measurements.len() as f64;
    let runaway = DIVERGENCE_FACTOR * (data_energy + (cfg.m_r() * cfg.m_ris()) as f64);
    while state.epoch() < opts.max_epochs {
        let c_ave = state.run_epoch(measurements, sched)?;
        if !c_ave.is_finite() || c_ave > runaway {
            return Err(Error::Divergence {
                epoch: state.epoch(),
                c_ave,
                learning_rate: opts.learning_rate,
            });
        }
        if prev - c_ave < opts.eps_stop || c_ave == 0.0 {
            converged = true;
            break;
        }
        prev = c_ave;
    }
    let final_c_ave = *state.c_ave_history().last().expect("at least one epoch");
    log::debug!(
        "calibration stopped after {} epochs, C_ave = {final_c_ave:.3e}, converged = {converged}",
        state.epoch()
    );
    Ok(CalibrationReport {
        table_est: state.table()?,
        epochs_run: state.epoch(),
        final_c_ave,
        converged,
        h_cas_est: state.h_cas,
        c_ave_history: state.c_ave_history,
    })
}
