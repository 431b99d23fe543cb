//! Independent finite-difference oracles shared by the integration tests.
//!
//! Nothing here calls the analytic gradient or Jacobian code; the model is
//! re-evaluated from scratch with plain loops.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use riscal::model::{PhaseTable, RisConfig};
use riscal::rng::{complex_gaussian, SimRng};
use riscal::schedule::GearSchedule;
use riscal::C64;

pub const FD_STEP: f64 = 1e-6;

/// `|| y - H exp(j phi) ||^2` evaluated with explicit loops.
pub fn loop_cost(h: &DMatrix<C64>, phi: &[f64], y: &DVector<C64>) -> f64 {
    (0..h.nrows())
        .map(|i| {
            let out: C64 = (0..h.ncols()).map(|m| h[(i, m)] * C64::from_polar(1.0, phi[m])).sum();
            (y[i] - out).norm_sqr()
        })
        .sum()
}

pub struct FdGradients {
    pub phi: Vec<f64>,
    pub re_h: DMatrix<f64>,
    pub im_h: DMatrix<f64>,
}

/// Central differences of the cost with respect to every phase and to the
/// real and imaginary part of every channel entry.
pub fn fd_gradients(h: &DMatrix<C64>, phi: &[f64], y: &DVector<C64>) -> FdGradients {
    let s = FD_STEP;
    let d_phi = (0..phi.len())
        .map(|m| {
            let mut p = phi.to_vec();
            p[m] += s;
            let up = loop_cost(h, &p, y);
            p[m] -= 2.0 * s;
            (up - loop_cost(h, &p, y)) / (2.0 * s)
        })
        .collect();
    let along = |dir: C64| {
        DMatrix::from_fn(h.nrows(), h.ncols(), |i, m| {
            let mut hp = h.clone();
            hp[(i, m)] += dir * s;
            let up = loop_cost(&hp, phi, y);
            hp[(i, m)] -= dir * (2.0 * s);
            (up - loop_cost(&hp, phi, y)) / (2.0 * s)
        })
    };
    FdGradients {
        phi: d_phi,
        re_h: along(C64::new(1.0, 0.0)),
        im_h: along(C64::new(0.0, 1.0)),
    }
}

/// Largest absolute deviation divided by the largest reference magnitude.
pub fn max_rel_err<'a>(got: impl IntoIterator<Item = &'a f64>, want: impl IntoIterator<Item = &'a f64>) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (g, w) in got.into_iter().zip(want) {
        num = num.max((g - w).abs());
        den = den.max(w.abs());
    }
    num / den.max(f64::MIN_POSITIVE)
}

pub fn random_problem(rng: &mut SimRng, m_r: usize, m_ris: usize) -> (DMatrix<C64>, Vec<f64>, DVector<C64>) {
    let h = DMatrix::from_fn(m_r, m_ris, |_, _| complex_gaussian(rng, 1.0));
    let phi = (0..m_ris).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect();
    let y = DVector::from_fn(m_r, |_, _| complex_gaussian(rng, 1.0));
    (h, phi, y)
}

/// Real parameters `[Omega (gears >= 1, element-major), Re vec(H), Im vec(H)]`
/// with vec taken column by column.
pub fn unpack(
    theta: &[f64],
    gear0: &[f64],
    m_ris: usize,
    l_gears: usize,
    m_r: usize,
) -> (DMatrix<C64>, DMatrix<f64>) {
    let n_omega = m_ris * (l_gears - 1);
    let phases = DMatrix::from_fn(m_ris, l_gears, |m, l| {
        if l == 0 {
            gear0[m]
        } else {
            theta[m * (l_gears - 1) + l - 1]
        }
    });
    let n_h = m_r * m_ris;
    let h = DMatrix::from_fn(m_r, m_ris, |i, j| {
        let k = j * m_r + i;
        C64::new(theta[n_omega + k], theta[n_omega + n_h + k])
    });
    (h, phases)
}

pub fn pack(h: &DMatrix<C64>, table: &PhaseTable) -> Vec<f64> {
    let (m_ris, l_gears) = (table.m_ris(), table.l_gears());
    let mut theta = Vec::new();
    for m in 0..m_ris {
        for l in 1..l_gears {
            theta.push(table.phase(m, l));
        }
    }
    theta.extend(h.iter().map(|z| z.re));
    theta.extend(h.iter().map(|z| z.im));
    theta
}

/// Every noiseless effective channel `H exp(j phi_q)` stacked into one vector.
pub fn stacked_mean(h: &DMatrix<C64>, phases: &DMatrix<f64>, sched: &GearSchedule) -> Vec<C64> {
    let mut out = Vec::with_capacity(sched.q_total() * h.nrows());
    for q in 0..sched.q_total() {
        for i in 0..h.nrows() {
            out.push(
                (0..h.ncols())
                    .map(|m| h[(i, m)] * C64::from_polar(1.0, phases[(m, sched.gear(q, m))]))
                    .sum(),
            );
        }
    }
    out
}

/// FIM of the real parameter vector built entirely from central differences
/// of the stacked mean: `(N / sigma^2) * sum Re[d_a^* d_b]`.
pub fn fd_fisher(h: &DMatrix<C64>, table: &PhaseTable, sched: &GearSchedule, cfg: &RisConfig) -> DMatrix<f64> {
    let (m_ris, l_gears, m_r) = (table.m_ris(), table.l_gears(), h.nrows());
    let gear0: Vec<f64> = (0..m_ris).map(|m| table.phase(m, 0)).collect();
    let theta = pack(h, table);
    let mean_at = |t: &[f64]| {
        let (hh, ph) = unpack(t, &gear0, m_ris, l_gears, m_r);
        stacked_mean(&hh, &ph, sched)
    };
    let step = 1e-5;
    let cols: Vec<Vec<C64>> = (0..theta.len())
        .map(|k| {
            let mut t = theta.clone();
            t[k] += step;
            let up = mean_at(&t);
            t[k] -= 2.0 * step;
            let down = mean_at(&t);
            up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * step)).collect()
        })
        .collect();
    let scale = cfg.n_pilot() as f64 / cfg.noise_var();
    DMatrix::from_fn(theta.len(), theta.len(), |a, b| {
        scale * cols[a].iter().zip(&cols[b]).map(|(x, y)| (x.conj() * y).re).sum::<f64>()
    })
}
