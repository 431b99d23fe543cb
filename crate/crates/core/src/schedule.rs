//! Gear schedules.
//!
//! The `Q = O * L` measurements are split into `O` groups of `L`. Inside a
//! group every element visits each of its `L` gears exactly once, in an order
//! given by a per-(group, element) permutation. Every table entry is therefore
//! probed exactly `O` times.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{PhaseTable, RisConfig};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GearSchedule {
    /// Row-major `Q x M_ris`; entry `(q, m)` is the 0-based gear of element
    /// `m` in measurement `q`.
    gears: Vec<usize>,
    m_ris: usize,
    l_gears: usize,
    o_groups: usize,
}

impl GearSchedule {
    /// Builds a schedule from explicit 0-based gear vectors, checking the
    /// once-per-group property.
    pub fn from_gear_vectors(
        vectors: &[Vec<usize>],
        m_ris: usize,
        l_gears: usize,
    ) -> Result<Self> {
        if l_gears == 0 || vectors.is_empty() || !vectors.len().is_multiple_of(l_gears) {
            return Err(Error::InvalidConfig(format!(
                "schedule length {} is not a positive multiple of L = {l_gears}",
                vectors.len()
            )));
        }
        let mut gears = Vec::with_capacity(vectors.len() * m_ris);
        for v in vectors {
            crate::error::check_dim("gear vector length (M_ris)", m_ris, v.len())?;
            if let Some(&g) = v.iter().find(|&&g| g >= l_gears) {
                return Err(Error::IndexOutOfRange {
                    what: "gear",
                    index: g,
                    len: l_gears,
                });
            }
            gears.extend_from_slice(v);
        }
        let sched = Self {
            gears,
            m_ris,
            l_gears,
            o_groups: vectors.len() / l_gears,
        };
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.l_gears];
        for o in 0..self.o_groups {
            for m in 0..self.m_ris {
                seen.iter_mut().for_each(|s| *s = false);
                for i in 0..self.l_gears {
                    let g = self.gear(o * self.l_gears + i, m);
                    if std::mem::replace(&mut seen[g], true) {
                        return Err(Error::InvalidConfig(format!(
                            "gear {} of element {} appears twice in group {}",
                            g + 1,
                            m + 1,
                            o + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn q_total(&self) -> usize {
        self.o_groups * self.l_gears
    }
    pub fn o_groups(&self) -> usize {
        self.o_groups
    }
    pub fn m_ris(&self) -> usize {
        self.m_ris
    }
    pub fn l_gears(&self) -> usize {
        self.l_gears
    }

    /// Gear of `element` in measurement `q` (0-based, unchecked beyond slice
    /// bounds).
    #[inline]
    pub fn gear(&self, q: usize, element: usize) -> usize {
        self.gears[q * self.m_ris + element]
    }

    /// The gear vector `g_q`.
    pub fn gear_vector(&self, q: usize) -> Result<&[usize]> {
        if q >= self.q_total() {
            return Err(Error::IndexOutOfRange {
                what: "measurement",
                index: q,
                len: self.q_total(),
            });
        }
        Ok(&self.gears[q * self.m_ris..(q + 1) * self.m_ris])
    }

    /// Gear order of `element` within `group`: the permuted gear list
    /// `Pi_{o,m} c`, 0-based.
    pub fn permutation(&self, group: usize, element: usize) -> Vec<usize> {
        (0..self.l_gears)
            .map(|i| self.gear(group * self.l_gears + i, element))
            .collect()
    }

    /// The first `groups` groups of this schedule.
    pub fn truncated(&self, groups: usize) -> Result<Self> {
        if groups == 0 || groups > self.o_groups {
            return Err(Error::IndexOutOfRange {
                what: "group count",
                index: groups,
                len: self.o_groups + 1,
            });
        }
        Ok(Self {
            gears: self.gears[..groups * self.l_gears * self.m_ris].to_vec(),
            o_groups: groups,
            ..self.clone()
        })
    }

    pub(crate) fn check_shape(&self, cfg: &RisConfig) -> Result<()> {
        crate::error::check_dim("schedule elements (M_ris)", cfg.m_ris(), self.m_ris)?;
        crate::error::check_dim("schedule gears (L)", cfg.l_gears(), self.l_gears)?;
        crate::error::check_dim("schedule length (Q)", cfg.q_total(), self.q_total())
    }
}

/// Draws an independent uniform permutation for every (group, element).
pub fn build_schedule(cfg: &RisConfig, seed: u64) -> GearSchedule {
    let (m_ris, l) = (cfg.m_ris(), cfg.l_gears());
    let mut rng = rng_from_seed(seed);
    let mut gears = vec![0usize; cfg.q_total() * m_ris];
    let mut perm: Vec<usize> = (0..l).collect();
    for o in 0..cfg.o_groups() {
        for m in 0..m_ris {
            perm.sort_unstable();
            perm.shuffle(&mut rng);
            for (i, &g) in perm.iter().enumerate() {
                gears[(o * l + i) * m_ris + m] = g;
            }
        }
    }
    GearSchedule {
        gears,
        m_ris,
        l_gears: l,
        o_groups: cfg.o_groups(),
    }
}

/// `phi_q`: the phase each element applies in measurement `q`.
pub fn phases_for(sched: &GearSchedule, table: &PhaseTable, q: usize) -> Result<Vec<f64>> {
    crate::error::check_dim("phase table rows (M_ris)", sched.m_ris(), table.m_ris())?;
    crate::error::check_dim("phase table columns (L)", sched.l_gears(), table.l_gears())?;
    let g = sched.gear_vector(q)?;
    Ok(g.iter()
        .enumerate()
        .map(|(m, &gear)| table.phase(m, gear))
        .collect())
}

/// Lower bound on the measurement count needed for identifiability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MeasurementBound {
    pub q_min: usize,
    pub o_min: usize,
}

/// `Q_min = ceil(M_ris + (L - 1) M_ris / (2 M_r))`, `O_min = ceil(Q_min / L)`.
///
/// Counts `2 L O M_r` real observations against `(2 M_r + L - 1) M_ris` real
/// unknowns once the per-element common phase is absorbed into the channel.
pub fn min_measurements(cfg: &RisConfig) -> MeasurementBound {
    let (m_ris, l, m_r) = (cfg.m_ris(), cfg.l_gears(), cfg.m_r());
    let num = 2 * m_r * m_ris + (l - 1) * m_ris;
    let q_min = num.div_ceil(2 * m_r);
    MeasurementBound {
        q_min,
        o_min: q_min.div_ceil(l),
    }
}
