//! Cramér-Rao bound for the phase table.
//!
//! Measurements of group `o` are stacked antenna-major into
//! `mu_o = vec(H_o^T)`, where column `k` of the `M_r x L` matrix `H_o` is the
//! noiseless output `H_cas exp(j phi_{oL+k})`. Entry `i L + k` of `mu_o` is
//! therefore the reading of antenna `i` in the `k`-th measurement of the group.
//!
//! The unknowns are `eta = [Omega, Re vec(H_cas), Im vec(H_cas)]`, where
//! `Omega` lists `phi_{m,l}` for gears `l >= 2` element by element. Gear 1 of
//! every element is held fixed: a common phase per element can be absorbed
//! into the matching column of `H_cas`, so only phases relative to gear 1 are
//! identifiable. Each measurement carries CN(0, 2 sigma^2 / N) noise, giving
//!
//! ```text
//! F = (N / sigma^2) sum_o Re[ D_o^H D_o ],  D_o = d mu_o / d eta
//! ```
//!
//! The Jacobians are the exact derivatives of `mu_o`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};
use crate::model::{PhaseTable, RisConfig};
use crate::schedule::{min_measurements, GearSchedule};
use crate::C64;

/// Largest accepted condition number of the FIM.
pub const MAX_CONDITION: f64 = 1e12;

/// Layout of the parameter vector `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub m_ris: usize,
    pub l_gears: usize,
    pub m_r: usize,
}

impl ParamLayout {
    pub fn new(m_ris: usize, l_gears: usize, m_r: usize) -> Self {
        Self {
            m_ris,
            l_gears,
            m_r,
        }
    }

    /// Length of `Omega`, `M_ris (L - 1)`.
    pub fn n_omega(&self) -> usize {
        self.m_ris * (self.l_gears - 1)
    }

    /// Length of each of `Re vec(H_cas)` and `Im vec(H_cas)`.
    pub fn n_channel(&self) -> usize {
        self.m_r * self.m_ris
    }

    pub fn len(&self) -> usize {
        self.n_omega() + 2 * self.n_channel()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of `phi_{element, gear}` in `Omega` (`gear >= 1`, 0-based).
    pub fn omega_index(&self, element: usize, gear: usize) -> usize {
        debug_assert!(gear >= 1 && gear < self.l_gears);
        element * (self.l_gears - 1) + gear - 1
    }

    /// Position of `H_cas(row, col)` in `vec(H_cas)` (column-major).
    pub fn channel_index(&self, row: usize, col: usize) -> usize {
        col * self.m_r + row
    }
}

/// The parameter vector `eta` split into its three blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub omega: Vec<f64>,
    pub re_h: Vec<f64>,
    pub im_h: Vec<f64>,
}

impl ParamVector {
    pub fn from_model(h_cas: &DMatrix<C64>, table: &PhaseTable) -> Self {
        let omega = (0..table.m_ris())
            .flat_map(|m| (1..table.l_gears()).map(move |l| (m, l)))
            .map(|(m, l)| table.phase(m, l))
            .collect();
        Self {
            omega,
            re_h: h_cas.iter().map(|h| h.re).collect(),
            im_h: h_cas.iter().map(|h| h.im).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.omega.len() + self.re_h.len() + self.im_h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.extend_from_slice(&self.omega);
        v.extend_from_slice(&self.re_h);
        v.extend_from_slice(&self.im_h);
        v
    }
}

fn check_inputs(h_cas: Option<&DMatrix<C64>>, table: &PhaseTable, sched: &GearSchedule, group: usize) -> Result<()> {
    check_dim("phase table rows (M_ris)", sched.m_ris(), table.m_ris())?;
    check_dim("phase table columns (L)", sched.l_gears(), table.l_gears())?;
    if let Some(h) = h_cas {
        check_dim("channel columns (M_ris)", sched.m_ris(), h.ncols())?;
    }
    if group >= sched.o_groups() {
        return Err(Error::IndexOutOfRange {
            what: "group",
            index: group,
            len: sched.o_groups(),
        });
    }
    Ok(())
}

/// `exp(j phi)` for every (measurement-in-group, element) of `group`, as an
/// `L x M_ris` matrix.
fn group_activations(table: &PhaseTable, sched: &GearSchedule, group: usize) -> DMatrix<C64> {
    let l = sched.l_gears();
    DMatrix::from_fn(l, sched.m_ris(), |k, m| {
        C64::from_polar(1.0, table.phase(m, sched.gear(group * l + k, m)))
    })
}

/// Noiseless stacked measurement vector `mu_o` of length `L M_r`.
pub fn group_mean(h_cas: &DMatrix<C64>, table: &PhaseTable, sched: &GearSchedule, group: usize) -> Result<DVector<C64>> {
    check_inputs(Some(h_cas), table, sched, group)?;
    // (L x M_ris) (M_ris x M_r) = H_o^T; column-major storage is vec(H_o^T).
    let ho_t = group_activations(table, sched, group) * h_cas.transpose();
    Ok(DVector::from_column_slice(ho_t.as_slice()))
}

/// `d mu_o / d Omega`, shape `(L M_r) x (M_ris (L - 1))`.
///
/// `phi_{m,l}` is used by exactly one measurement `k` of the group (the one
/// where element `m` sits at gear `l`), so column `(m, l)` is
/// `j H_cas(i, m) exp(j phi_{m,l})` at rows `i L + k` and zero elsewhere.
pub fn jacobian_omega(h_cas: &DMatrix<C64>, table: &PhaseTable, sched: &GearSchedule, group: usize) -> Result<DMatrix<C64>> {
    check_inputs(Some(h_cas), table, sched, group)?;
    let (l, m_r) = (sched.l_gears(), h_cas.nrows());
    let layout = ParamLayout::new(sched.m_ris(), l, m_r);
    let mut jac = DMatrix::zeros(l * m_r, layout.n_omega());
    for m in 0..sched.m_ris() {
        for k in 0..l {
            let gear = sched.gear(group * l + k, m);
            if gear == 0 {
                continue;
            }
            let col = layout.omega_index(m, gear);
            let d = C64::from_polar(1.0, table.phase(m, gear)) * C64::i();
            for i in 0..m_r {
                jac[(i * l + k, col)] = h_cas[(i, m)] * d;
            }
        }
    }
    Ok(jac)
}

/// `(d mu_o / d Re vec(H_cas), d mu_o / d Im vec(H_cas))`, each
/// `(L M_r) x (M_r M_ris)`.
///
/// Column `(i, j)` of the real part holds `exp(j Pi_{o,j} psi_j)` in block `i`
/// (rows `i L .. i L + L`) and zeros elsewhere; the imaginary part is `j`
/// times the real part.
pub fn jacobian_h(table: &PhaseTable, sched: &GearSchedule, m_r: usize, group: usize) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    check_inputs(None, table, sched, group)?;
    let l = sched.l_gears();
    let layout = ParamLayout::new(sched.m_ris(), l, m_r);
    let act = group_activations(table, sched, group);
    let mut re = DMatrix::zeros(l * m_r, layout.n_channel());
    for j in 0..sched.m_ris() {
        for i in 0..m_r {
            let col = layout.channel_index(i, j);
            for k in 0..l {
                re[(i * l + k, col)] = act[(k, j)];
            }
        }
    }
    let im = re.map(|v| v * C64::i());
    Ok((re, im))
}

/// Full Jacobian `D_o = [dmu/dOmega, dmu/dRe h, dmu/dIm h]`.
pub fn jacobian(h_cas: &DMatrix<C64>, table: &PhaseTable, sched: &GearSchedule, group: usize) -> Result<DMatrix<C64>> {
    let j_omega = jacobian_omega(h_cas, table, sched, group)?;
    let (j_re, j_im) = jacobian_h(table, sched, h_cas.nrows(), group)?;
    let rows = j_omega.nrows();
    let (a, b) = (j_omega.ncols(), j_re.ncols());
    let mut d = DMatrix::zeros(rows, a + 2 * b);
    d.columns_mut(0, a).copy_from(&j_omega);
    d.columns_mut(a, b).copy_from(&j_re);
    d.columns_mut(a + b, b).copy_from(&j_im);
    Ok(d)
}

/// `(N / sigma^2) sum_o Re[D_o^H D_o]`, without inversion.
pub fn fisher_matrix(h_cas: &DMatrix<C64>, table: &PhaseTable, sched: &GearSchedule, cfg: &RisConfig) -> Result<DMatrix<f64>> {
    table.check_shape(cfg)?;
    sched.check_shape(cfg)?;
    check_dim("channel rows (M_r)", cfg.m_r(), h_cas.nrows())?;
    check_dim("channel columns (M_ris)", cfg.m_ris(), h_cas.ncols())?;
    if cfg.noise_var() <= 0.0 {
        return Err(Error::InvalidConfig(
            "the Fisher information is unbounded without noise (finite SNR required)".into(),
        ));
    }
    let layout = ParamLayout::new(cfg.m_ris(), cfg.l_gears(), cfg.m_r());
    let rows_per_group = cfg.l_gears() * cfg.m_r();
    // Re[D^H D] = Re(D)^T Re(D) + Im(D)^T Im(D): stack the real and imaginary
    // parts of every group and take one Gram product, in group order.
    let mut stacked = DMatrix::<f64>::zeros(2 * rows_per_group * sched.o_groups(), layout.len());
    for o in 0..sched.o_groups() {
        let d = jacobian(h_cas, table, sched, o)?;
        let base = 2 * rows_per_group * o;
        stacked.rows_mut(base, rows_per_group).copy_from(&d.map(|v| v.re));
        stacked
            .rows_mut(base + rows_per_group, rows_per_group)
            .copy_from(&d.map(|v| v.im));
    }
    let scale = cfg.n_pilot() as f64 / cfg.noise_var();
    let mut f = stacked.tr_mul(&stacked) * scale;
    // Exact symmetry; the product is symmetric up to rounding.
    for i in 0..f.nrows() {
        for j in 0..i {
            let v = 0.5 * (f[(i, j)] + f[(j, i)]);
            f[(i, j)] = v;
            f[(j, i)] = v;
        }
    }
    Ok(f)
}

#[derive(Debug, Clone)]
pub struct CrbResult {
    pub fim: DMatrix<f64>,
    /// Condition number `lambda_max / lambda_min` of the FIM.
    pub condition: f64,
    /// CRB of each `Omega` entry in rad^2, `Omega` order.
    pub crb_omega_rad2: Vec<f64>,
    /// Square root of the above in degrees.
    pub crb_omega_deg: Vec<f64>,
    pub layout: ParamLayout,
}

impl CrbResult {
    /// `sqrt(mean CRB(Omega))` in degrees, the bound on the RMSE of the
    /// gear-1-anchored phase estimates.
    pub fn rmse_bound_deg(&self) -> f64 {
        let mean = self.crb_omega_rad2.iter().sum::<f64>() / self.crb_omega_rad2.len() as f64;
        mean.sqrt().to_degrees()
    }

    /// CRB of `phi_{element, gear}` in degrees (`gear >= 1`, 0-based).
    pub fn crb_deg(&self, element: usize, gear: usize) -> f64 {
        self.crb_omega_deg[self.layout.omega_index(element, gear)]
    }
}

/// Assembles and inverts the FIM.
///
/// Fails with [`Error::SingularFim`] when the FIM is not positive definite or
/// its condition number exceeds [`MAX_CONDITION`].
pub fn fisher(h_cas: &DMatrix<C64>, table: &PhaseTable, sched: &GearSchedule, cfg: &RisConfig) -> Result<CrbResult> {
    let fim = fisher_matrix(h_cas, table, sched, cfg)?;
    let layout = ParamLayout::new(cfg.m_ris(), cfg.l_gears(), cfg.m_r());
    let eig = SymmetricEigen::new(fim.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let singular = |condition: f64| {
        let bound = min_measurements(cfg);
        let hint = if cfg.o_groups() < bound.o_min {
            format!(
                "only {} measurement groups were scheduled but at least {} (Q >= {}) are needed to identify the phases",
                cfg.o_groups(),
                bound.o_min,
                bound.q_min
            )
        } else {
            "the measurement count meets the identifiability bound, so the channel is likely degenerate (e.g. a near-zero cascaded channel column)".to_string()
        };
        Error::SingularFim { condition, hint }
    };
    if !condition.is_finite() || condition > MAX_CONDITION {
        return Err(singular(condition));
    }
    let chol = fim.clone().cholesky().ok_or_else(|| singular(condition))?;
    let inv = chol.inverse();
    let crb_omega_rad2: Vec<f64> = (0..layout.n_omega()).map(|i| inv[(i, i)]).collect();
    let crb_omega_deg = crb_omega_rad2.iter().map(|v| v.sqrt().to_degrees()).collect();
    Ok(CrbResult {
        fim,
        condition,
        crb_omega_rad2,
        crb_omega_deg,
        layout,
    })
}
