//! Channel synthesis and the over-the-air measurement chain.
//!
//! A single-antenna transmitter sends a unit-modulus pilot. The receiver
//! (`M_r` antennas) sees the direct path plus the RIS reflection when the RIS
//! is on, and only the direct path when it is off. Despreading each block and
//! differencing the on/off estimates isolates the reflected channel
//! `H_cas exp(j phi_q)` with noise of variance `2 sigma^2 / N` per entry.

use std::f64::consts::{PI, TAU};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::model::{MeasurementSet, PhaseTable, RisConfig};
use crate::rng::{complex_gaussian, rng_from_seed, SimRng};
use crate::schedule::GearSchedule;
use crate::C64;

/// Unit-modulus pilot `s` of length `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotSequence(DVector<C64>);

impl PilotSequence {
    pub fn new(samples: DVector<C64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidConfig("pilot must not be empty".into()));
        }
        if samples.iter().any(|s| (s.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::InvalidConfig(
                "pilot samples must have unit modulus".into(),
            ));
        }
        Ok(Self(samples))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn samples(&self) -> &DVector<C64> {
        &self.0
    }
}

/// Random-phase unit-modulus pilot.
pub fn generate_pilot(n_pilot: usize, seed: u64) -> Result<PilotSequence> {
    if n_pilot == 0 {
        return Err(Error::InvalidConfig("pilot length must be at least 1".into()));
    }
    let mut rng = rng_from_seed(seed);
    let s = DVector::from_fn(n_pilot, |_, _| {
        C64::from_polar(1.0, rng.random_range(0.0..TAU))
    });
    Ok(PilotSequence(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelKind {
    /// i.i.d. CN(0, 1) entries.
    Rayleigh,
    /// Clustered multipath with half-wavelength ULAs at both ends.
    SalehValenzuela {
        clusters: usize,
        rays_per_cluster: usize,
    },
}

impl ChannelKind {
    pub const DEFAULT_SV: ChannelKind = ChannelKind::SalehValenzuela {
        clusters: 3,
        rays_per_cluster: 8,
    };

    pub fn name(&self) -> &'static str {
        match self {
            ChannelKind::Rayleigh => "rayleigh",
            ChannelKind::SalehValenzuela { .. } => "saleh-valenzuela",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChannelModelSpec {
    pub kind: ChannelKind,
}

impl ChannelModelSpec {
    pub fn rayleigh() -> Self {
        Self {
            kind: ChannelKind::Rayleigh,
        }
    }

    pub fn saleh_valenzuela(clusters: usize, rays_per_cluster: usize) -> Result<Self> {
        let spec = Self {
            kind: ChannelKind::SalehValenzuela {
                clusters,
                rays_per_cluster,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            ChannelKind::SalehValenzuela {
                clusters,
                rays_per_cluster,
            } if clusters == 0 || rays_per_cluster == 0 => Err(Error::InvalidConfig(
                "Saleh-Valenzuela cluster and ray counts must be at least 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

impl Default for ChannelModelSpec {
    fn default() -> Self {
        Self {
            kind: ChannelKind::DEFAULT_SV,
        }
    }
}

/// Propagation channels of one link realisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    h_br_bt: DVector<C64>,
    h_r_bt: DVector<C64>,
    h_brr: DMatrix<C64>,
    h_cas: DMatrix<C64>,
}

impl ChannelSet {
    /// `h_br_bt`: Tx to Rx (length `M_r`); `h_r_bt`: Tx to RIS (length
    /// `M_ris`); `h_brr`: RIS to Rx (`M_r x M_ris`).
    pub fn new(h_br_bt: DVector<C64>, h_r_bt: DVector<C64>, h_brr: DMatrix<C64>) -> Result<Self> {
        check_dim("direct channel length (M_r)", h_brr.nrows(), h_br_bt.len())?;
        check_dim("Tx-RIS channel length (M_ris)", h_brr.ncols(), h_r_bt.len())?;
        let mut h_cas = h_brr.clone();
        for (mut col, g) in h_cas.column_iter_mut().zip(h_r_bt.iter()) {
            col *= *g;
        }
        Ok(Self {
            h_br_bt,
            h_r_bt,
            h_brr,
            h_cas,
        })
    }

    pub fn h_br_bt(&self) -> &DVector<C64> {
        &self.h_br_bt
    }
    pub fn h_r_bt(&self) -> &DVector<C64> {
        &self.h_r_bt
    }
    pub fn h_brr(&self) -> &DMatrix<C64> {
        &self.h_brr
    }
    /// Cascaded channel `H_BrR diag(h_RBt)`.
    pub fn h_cas(&self) -> &DMatrix<C64> {
        &self.h_cas
    }
    pub fn m_r(&self) -> usize {
        self.h_brr.nrows()
    }
    pub fn m_ris(&self) -> usize {
        self.h_brr.ncols()
    }
}

/// Half-wavelength uniform linear array response.
fn ula_response(n: usize, angle: f64) -> DVector<C64> {
    let k = PI * angle.sin();
    DVector::from_fn(n, |i, _| C64::from_polar(1.0, k * i as f64))
}

/// Angular half-width of the rays around a cluster centre.
const SV_RAY_SPREAD: f64 = PI / 12.0;

struct SvRay {
    gain: C64,
    aoa: f64,
    aod: f64,
}

fn sv_rays(rng: &mut SimRng, clusters: usize, rays: usize) -> Vec<SvRay> {
    let mut out = Vec::with_capacity(clusters * rays);
    for _ in 0..clusters {
        let aoa_c = rng.random_range(-PI / 2.0..PI / 2.0);
        let aod_c = rng.random_range(-PI / 2.0..PI / 2.0);
        for _ in 0..rays {
            out.push(SvRay {
                gain: complex_gaussian(rng, 1.0),
                aoa: aoa_c + rng.random_range(-SV_RAY_SPREAD..SV_RAY_SPREAD),
                aod: aod_c + rng.random_range(-SV_RAY_SPREAD..SV_RAY_SPREAD),
            });
        }
    }
    out
}

/// `sum_r g_r a_rx(aoa_r) a_tx(aod_r)^H`, scaled to unit expected entry power.
fn sv_matrix(rng: &mut SimRng, n_rx: usize, n_tx: usize, clusters: usize, rays: usize) -> DMatrix<C64> {
    let paths = sv_rays(rng, clusters, rays);
    let scale = 1.0 / (paths.len() as f64).sqrt();
    let mut h = DMatrix::zeros(n_rx, n_tx);
    for p in &paths {
        let a_rx = ula_response(n_rx, p.aoa);
        let a_tx = ula_response(n_tx, p.aod);
        h += (a_rx * a_tx.adjoint()) * (p.gain * scale);
    }
    h
}

pub fn generate_channels(spec: &ChannelModelSpec, cfg: &RisConfig, seed: u64) -> Result<ChannelSet> {
    spec.validate()?;
    let (m_r, m_ris) = (cfg.m_r(), cfg.m_ris());
    let mut rng = rng_from_seed(seed);
    let (h_br_bt, h_r_bt, h_brr) = match spec.kind {
        ChannelKind::Rayleigh => {
            let mut draw = |n: usize, m: usize| {
                DMatrix::from_fn(n, m, |_, _| complex_gaussian(&mut rng, 1.0))
            };
            let d = draw(m_r, 1);
            let t = draw(m_ris, 1);
            let r = draw(m_r, m_ris);
            (d.column(0).into_owned(), t.column(0).into_owned(), r)
        }
        ChannelKind::SalehValenzuela {
            clusters,
            rays_per_cluster,
        } => {
            // Single-antenna transmitter: the Tx-side response is 1.
            let d = sv_matrix(&mut rng, m_r, 1, clusters, rays_per_cluster);
            let t = sv_matrix(&mut rng, m_ris, 1, clusters, rays_per_cluster);
            let r = sv_matrix(&mut rng, m_r, m_ris, clusters, rays_per_cluster);
            (d.column(0).into_owned(), t.column(0).into_owned(), r)
        }
    };
    ChannelSet::new(h_br_bt, h_r_bt, h_brr)
}

fn add_noise(y: &mut DMatrix<C64>, noise_var: f64, rng: &mut SimRng) {
    if noise_var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian(rng, noise_var);
        }
    }
}

fn check_noise_var(noise_var: f64) -> Result<()> {
    if noise_var.is_finite() && noise_var >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "noise variance must be finite and non-negative, got {noise_var}"
        )))
    }
}

fn rx_on_with(
    channels: &ChannelSet,
    phases: &[f64],
    pilot: &PilotSequence,
    noise_var: f64,
    rng: &mut SimRng,
) -> Result<DMatrix<C64>> {
    check_dim("RIS phase vector length (M_ris)", channels.m_ris(), phases.len())?;
    check_noise_var(noise_var)?;
    let mut h = channels.h_br_bt.clone();
    for (m, &p) in phases.iter().enumerate() {
        h += channels.h_cas.column(m) * C64::from_polar(1.0, p);
    }
    let mut y = &h * pilot.0.adjoint();
    add_noise(&mut y, noise_var, rng);
    Ok(y)
}

fn rx_off_with(
    channels: &ChannelSet,
    pilot: &PilotSequence,
    noise_var: f64,
    rng: &mut SimRng,
) -> Result<DMatrix<C64>> {
    check_noise_var(noise_var)?;
    let mut y = &channels.h_br_bt * pilot.0.adjoint();
    add_noise(&mut y, noise_var, rng);
    Ok(y)
}

/// Received block with the RIS on: `(H_cas exp(j phi) + h_BrBt) s^H + Z`.
pub fn simulate_rx_on(
    channels: &ChannelSet,
    phases: &[f64],
    pilot: &PilotSequence,
    noise_var: f64,
    seed: u64,
) -> Result<DMatrix<C64>> {
    rx_on_with(channels, phases, pilot, noise_var, &mut rng_from_seed(seed))
}

/// Received block with the RIS off: `h_BrBt s^H + Z`.
pub fn simulate_rx_off(
    channels: &ChannelSet,
    pilot: &PilotSequence,
    noise_var: f64,
    seed: u64,
) -> Result<DMatrix<C64>> {
    rx_off_with(channels, pilot, noise_var, &mut rng_from_seed(seed))
}

/// Channel estimate `(1/N) Y s`.
pub fn despread(y: &DMatrix<C64>, pilot: &PilotSequence) -> Result<DVector<C64>> {
    check_dim("received block length (N)", pilot.len(), y.ncols())?;
    Ok(y * &pilot.0 / C64::from(pilot.len() as f64))
}

/// Runs the on/off measurement pair for every scheduled gear vector.
///
/// On and off blocks of every measurement get fresh, independent noise from a
/// single stream seeded by `seed`, drawn in the order on(1), off(1), on(2), ...
pub fn measure_set(
    channels: &ChannelSet,
    table: &PhaseTable,
    sched: &GearSchedule,
    pilot: &PilotSequence,
    cfg: &RisConfig,
    seed: u64,
) -> Result<MeasurementSet> {
    table.check_shape(cfg)?;
    sched.check_shape(cfg)?;
    check_dim("channel receive antennas (M_r)", cfg.m_r(), channels.m_r())?;
    check_dim("channel RIS elements (M_ris)", cfg.m_ris(), channels.m_ris())?;
    check_dim("pilot length (N)", cfg.n_pilot(), pilot.len())?;
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(sched.q_total());
    for q in 0..sched.q_total() {
        let phases = crate::schedule::phases_for(sched, table, q)?;
        let on = rx_on_with(channels, &phases, pilot, cfg.noise_var(), &mut rng)?;
        let off = rx_off_with(channels, pilot, cfg.noise_var(), &mut rng)?;
        out.push(despread(&on, pilot)? - despread(&off, pilot)?);
    }
    MeasurementSet::new(out, cfg.measurement_noise_var())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{nominal_table, sample_deviated_table};
    use crate::schedule::{build_schedule, phases_for};
    use approx::assert_relative_eq;

    fn cfg() -> RisConfig {
        RisConfig::new(6, 2, 3, 100, 2, 20.0).unwrap()
    }

    #[test]
    fn pilot_examples() {
        let p = generate_pilot(1, 0).unwrap();
        assert_eq!(p.len(), 1);
        let p = generate_pilot(100, 4).unwrap();
        assert_eq!(p.len(), 100);
        assert!(p.samples().iter().all(|s| (s.norm() - 1.0).abs() < 1e-12));
        assert_eq!(p, generate_pilot(100, 4).unwrap());
        assert!(generate_pilot(0, 4).is_err());
        assert!(PilotSequence::new(DVector::from_element(2, C64::new(2.0, 0.0))).is_err());
    }

    #[test]
    fn rayleigh_entry_variance() {
        let c = RisConfig::new(50, 1, 20, 1, 1, 0.0).unwrap();
        let spec = ChannelModelSpec::rayleigh();
        let (mut sum, mut n) = (0.0, 0usize);
        for seed in 0..100 {
            let ch = generate_channels(&spec, &c, seed).unwrap();
            sum += ch.h_brr().iter().map(|h| h.norm_sqr()).sum::<f64>();
            n += ch.h_brr().len();
        }
        assert!(n >= 100_000);
        let var = sum / n as f64;
        assert!((var - 1.0).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn sv_entry_power_is_unit() {
        let c = RisConfig::new(16, 1, 4, 1, 1, 0.0).unwrap();
        let spec = ChannelModelSpec::default();
        let (mut sum, mut n) = (0.0, 0usize);
        for seed in 0..400 {
            let ch = generate_channels(&spec, &c, seed).unwrap();
            sum += ch.h_brr().iter().map(|h| h.norm_sqr()).sum::<f64>();
            sum += ch.h_r_bt().iter().map(|h| h.norm_sqr()).sum::<f64>();
            n += ch.h_brr().len() + ch.h_r_bt().len();
        }
        let p = sum / n as f64;
        assert!((p - 1.0).abs() < 0.05, "power {p}");
        assert!(ChannelModelSpec::saleh_valenzuela(0, 8).is_err());
        assert!(ChannelModelSpec::saleh_valenzuela(3, 0).is_err());
    }

    #[test]
    fn cascaded_channel_and_determinism() {
        for spec in [ChannelModelSpec::rayleigh(), ChannelModelSpec::default()] {
            let ch = generate_channels(&spec, &cfg(), 11).unwrap();
            for j in 0..ch.m_ris() {
                for i in 0..ch.m_r() {
                    let want = ch.h_brr()[(i, j)] * ch.h_r_bt()[j];
                    assert!((ch.h_cas()[(i, j)] - want).norm() <= 1e-14 * want.norm().max(1e-300));
                }
            }
            assert_eq!(ch, generate_channels(&spec, &cfg(), 11).unwrap());
        }
    }

    fn unit_channels() -> ChannelSet {
        let one = C64::new(1.0, 0.0);
        ChannelSet::new(
            DVector::from_element(1, one),
            DVector::from_element(1, one),
            DMatrix::from_element(1, 1, one),
        )
        .unwrap()
    }

    #[test]
    fn rx_on_hand_example() {
        let pilot = generate_pilot(5, 1).unwrap();
        let y = simulate_rx_on(&unit_channels(), &[0.0], &pilot, 0.0, 0).unwrap();
        for n in 0..5 {
            assert_relative_eq!(y[(0, n)].re, 2.0 * pilot.samples()[n].conj().re, epsilon = 1e-15);
            assert_relative_eq!(y[(0, n)].im, 2.0 * pilot.samples()[n].conj().im, epsilon = 1e-15);
        }
        assert!(simulate_rx_on(&unit_channels(), &[0.0, 1.0], &pilot, 0.0, 0).is_err());
    }

    #[test]
    fn noiseless_rx_on_is_rank_one() {
        let ch = generate_channels(&ChannelModelSpec::rayleigh(), &cfg(), 2).unwrap();
        let pilot = generate_pilot(8, 1).unwrap();
        let y = simulate_rx_on(&ch, &[0.3; 6], &pilot, 0.0, 0).unwrap();
        let sv = y.singular_values();
        assert!(sv[1] < 1e-12 * sv[0]);
    }

    #[test]
    fn rx_off_examples() {
        let ch = generate_channels(&ChannelModelSpec::rayleigh(), &cfg(), 2).unwrap();
        let pilot = generate_pilot(8, 1).unwrap();
        let y = simulate_rx_off(&ch, &pilot, 0.0, 0).unwrap();
        for n in 0..8 {
            let want = ch.h_br_bt() * pilot.samples()[n].conj();
            assert!((y.column(n) - want).norm() < 1e-15);
        }
        let silent = ChannelSet::new(
            DVector::zeros(3),
            ch.h_r_bt().clone(),
            ch.h_brr().clone(),
        )
        .unwrap();
        assert!(simulate_rx_off(&silent, &pilot, 0.0, 0).unwrap().iter().all(|v| *v == C64::from(0.0)));
    }

    #[test]
    fn receiver_noise_variance() {
        let ch = generate_channels(&ChannelModelSpec::rayleigh(), &cfg(), 2).unwrap();
        let pilot = generate_pilot(100, 1).unwrap();
        let clean_on = simulate_rx_on(&ch, &[0.1; 6], &pilot, 0.0, 0).unwrap();
        let clean_off = simulate_rx_off(&ch, &pilot, 0.0, 0).unwrap();
        let (mut on, mut off, mut n) = (0.0, 0.0, 0usize);
        for seed in 0..100 {
            let y = simulate_rx_on(&ch, &[0.1; 6], &pilot, 0.5, seed).unwrap();
            on += (y - &clean_on).norm_squared();
            let y = simulate_rx_off(&ch, &pilot, 0.5, seed).unwrap();
            off += (y - &clean_off).norm_squared();
            n += clean_on.len();
        }
        assert!((on / n as f64 - 0.5).abs() < 0.01);
        assert!((off / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn despread_examples() {
        let pilot = generate_pilot(64, 3).unwrap();
        let h = DVector::from_vec(vec![C64::new(0.3, -1.0), C64::new(2.0, 0.5)]);
        let y = &h * pilot.samples().adjoint();
        assert!((despread(&y, &pilot).unwrap() - &h).norm() < 1e-14);

        let one = PilotSequence::new(DVector::from_element(1, C64::new(1.0, 0.0))).unwrap();
        let y = DMatrix::from_element(1, 1, C64::new(0.0, 2.0));
        assert_eq!(despread(&y, &one).unwrap()[0], C64::new(0.0, 2.0));

        assert!(despread(&DMatrix::zeros(2, 3), &pilot).is_err());
    }

    #[test]
    fn despread_noise_variance() {
        let pilot = generate_pilot(50, 3).unwrap();
        let mut rng = rng_from_seed(8);
        let (mut acc, mut n) = (0.0, 0usize);
        for _ in 0..2000 {
            let z = DMatrix::from_fn(4, 50, |_, _| complex_gaussian(&mut rng, 0.3));
            acc += despread(&z, &pilot).unwrap().norm_squared();
            n += 4;
        }
        let var = acc / n as f64;
        assert!((var - 0.3 / 50.0).abs() < 0.05 * 0.3 / 50.0, "var {var}");
    }

    #[test]
    fn measure_set_noiseless_and_shapes() {
        let c = RisConfig::new(6, 2, 3, 100, 2, f64::INFINITY).unwrap();
        let ch = generate_channels(&ChannelModelSpec::default(), &c, 2).unwrap();
        let table = sample_deviated_table(&c, 0.3, 1).unwrap();
        let sched = build_schedule(&c, 4);
        let pilot = generate_pilot(c.n_pilot(), 5).unwrap();
        let meas = measure_set(&ch, &table, &sched, &pilot, &c, 6).unwrap();
        assert_eq!(meas.len(), c.q_total());
        for q in 0..c.q_total() {
            let phi = phases_for(&sched, &table, q).unwrap();
            let e = DVector::from_iterator(6, phi.iter().map(|p| C64::from_polar(1.0, *p)));
            let want = ch.h_cas() * e;
            assert!((meas.get(q).unwrap() - want).norm() < 1e-12);
        }
        let wrong = nominal_table(&RisConfig::new(5, 2, 3, 100, 2, 20.0).unwrap());
        assert!(measure_set(&ch, &wrong, &sched, &pilot, &c, 6).is_err());
    }

    #[test]
    fn measurement_noise_variance_matches_2sigma2_over_n() {
        let c = RisConfig::new(4, 1, 3, 100, 1, 20.0).unwrap();
        assert!((c.measurement_noise_var() - 2e-4).abs() < 1e-18);
        let ch = generate_channels(&ChannelModelSpec::rayleigh(), &c, 2).unwrap();
        let table = sample_deviated_table(&c, 0.3, 1).unwrap();
        let sched = build_schedule(&c, 4);
        let pilot = generate_pilot(c.n_pilot(), 5).unwrap();
        let clean: Vec<DVector<C64>> = (0..c.q_total())
            .map(|q| {
                let phi = phases_for(&sched, &table, q).unwrap();
                ch.h_cas() * DVector::from_iterator(4, phi.iter().map(|p| C64::from_polar(1.0, *p)))
            })
            .collect();
        // Sample covariance of the measurement error over 10^4 trials.
        let trials = 5000;
        let mut cov = DMatrix::<C64>::zeros(3, 3);
        let mut count = 0usize;
        for t in 0..trials {
            let meas = measure_set(&ch, &table, &sched, &pilot, &c, 1000 + t).unwrap();
            for (q, h) in meas.iter().enumerate() {
                let z = h - &clean[q];
                cov += &z * z.adjoint();
                count += 1;
            }
        }
        cov /= C64::from(count as f64);
        let target = DMatrix::<C64>::identity(3, 3) * C64::from(c.measurement_noise_var());
        let err = (cov - &target).map(|v| v).singular_values()[0];
        assert!(count >= 10_000);
        assert!(err < 0.05 * c.measurement_noise_var(), "spectral error {err}");
    }

    #[test]
    fn despread_is_linear() {
        use proptest::prelude::*;
        proptest!(|(seed: u64, a in -3.0f64..3.0)| {
            let pilot = generate_pilot(7, seed).unwrap();
            let mut rng = rng_from_seed(seed ^ 1);
            let y1 = DMatrix::from_fn(3, 7, |_, _| complex_gaussian(&mut rng, 1.0));
            let y2 = DMatrix::from_fn(3, 7, |_, _| complex_gaussian(&mut rng, 1.0));
            let lhs = despread(&(&y1 * C64::from(a) + &y2), &pilot).unwrap();
            let rhs = despread(&y1, &pilot).unwrap() * C64::from(a) + despread(&y2, &pilot).unwrap();
            prop_assert!((lhs - rhs).norm() < 1e-12);
        });
    }
}
