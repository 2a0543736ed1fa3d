//! Stringency vectors over the twelve OxCGRT indices used for control.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::ops::Index;

use crate::{Error, Result};

/// Number of NPI indices.
pub const NPI_COUNT: usize = 12;

/// Index names, in vector order.
pub const NPI_NAMES: [&str; NPI_COUNT] = [
    "C1", "C2", "C3", "C4", "C5", "C6", "C7", "C8", "H1", "H2", "H3", "H6",
];

/// Maximum stringency per index (OxCGRT value ranges).
pub const OXCGRT_MAX: [f64; NPI_COUNT] = [3.0, 3.0, 2.0, 4.0, 2.0, 3.0, 2.0, 4.0, 2.0, 3.0, 2.0, 4.0];

const LEVEL_TOL: f64 = 1e-9;

/// Stringency levels for the twelve NPI indices.
///
/// Observed data is integer valued. Levels emitted by the quadratic control
/// rule may be fractional until [`NpiSchedule::round_half_down`] is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(transparent))]
pub struct NpiVector(pub [f64; NPI_COUNT]);

impl NpiVector {
    pub const fn zeros() -> Self {
        NpiVector([0.0; NPI_COUNT])
    }

    pub const fn max_stringency() -> Self {
        NpiVector(OXCGRT_MAX)
    }

    pub fn from_levels(levels: [u8; NPI_COUNT]) -> Self {
        NpiVector(levels.map(f64::from))
    }

    /// Distance below maximum stringency, `u_max - u`.
    pub fn slack(&self) -> [f64; NPI_COUNT] {
        core::array::from_fn(|k| OXCGRT_MAX[k] - self.0[k])
    }

    pub fn is_integral(&self) -> bool {
        self.0.iter().all(|v| (v - v.round()).abs() <= LEVEL_TOL)
    }

    /// Weighted stringency `w^T u`.
    pub fn cost(&self, weights: &[f64; NPI_COUNT]) -> f64 {
        self.0.iter().zip(weights).map(|(u, w)| u * w).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }
}

impl Index<usize> for NpiVector {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.0[k]
    }
}

/// Element-wise admissible box `lower <= u <= upper`, contained in the
/// OxCGRT ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NpiBounds {
    pub lower: [f64; NPI_COUNT],
    pub upper: [f64; NPI_COUNT],
}

impl Default for NpiBounds {
    fn default() -> Self {
        NpiBounds {
            lower: [0.0; NPI_COUNT],
            upper: OXCGRT_MAX,
        }
    }
}

impl NpiBounds {
    pub fn new(lower: [f64; NPI_COUNT], upper: [f64; NPI_COUNT]) -> Result<Self> {
        for k in 0..NPI_COUNT {
            if !(0.0 <= lower[k] && lower[k] <= upper[k] && upper[k] <= OXCGRT_MAX[k]) {
                return Err(Error::InvalidParameter(alloc::format!(
                    "bounds for {} must satisfy 0 <= lower <= upper <= {}",
                    NPI_NAMES[k],
                    OXCGRT_MAX[k]
                )));
            }
        }
        Ok(NpiBounds { lower, upper })
    }

    pub fn min_vector(&self) -> NpiVector {
        NpiVector(self.lower)
    }

    pub fn max_vector(&self) -> NpiVector {
        NpiVector(self.upper)
    }

    pub fn check(&self, u: &NpiVector) -> Result<()> {
        for k in 0..NPI_COUNT {
            let v = u.0[k];
            if !v.is_finite() || v < self.lower[k] - LEVEL_TOL || v > self.upper[k] + LEVEL_TOL {
                return Err(Error::Inadmissible {
                    name: NPI_NAMES[k],
                    value: v,
                    lower: self.lower[k],
                    upper: self.upper[k],
                });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, u: &NpiVector) -> NpiVector {
        NpiVector(core::array::from_fn(|k| u.0[k].clamp(self.lower[k], self.upper[k])))
    }
}

/// A time-indexed NPI schedule; row `k` holds over `[k*dt, (k+1)*dt)` days.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NpiSchedule {
    pub dt: f64,
    pub rows: Vec<NpiVector>,
}

impl NpiSchedule {
    pub fn constant(u: NpiVector, dt: f64, steps: usize) -> Self {
        NpiSchedule {
            dt,
            rows: alloc::vec![u; steps],
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Validates every row; the error names the first offending row index.
    pub fn check(&self, bounds: &NpiBounds) -> core::result::Result<(), (usize, Error)> {
        self.rows
            .iter()
            .enumerate()
            .try_for_each(|(k, u)| bounds.check(u).map_err(|e| (k, e)))
    }

    pub fn is_integral(&self) -> bool {
        self.rows.iter().all(NpiVector::is_integral)
    }

    /// Rounds fractional levels half-down so that the integer schedule never
    /// costs more than the continuous one.
    pub fn round_half_down(&self) -> NpiSchedule {
        let rows = self
            .rows
            .iter()
            .map(|u| NpiVector(u.0.map(|v| (v - 0.5).ceil().max(0.0))))
            .collect();
        NpiSchedule { dt: self.dt, rows }
    }

    /// `sum_k w_k^T u_k dt` with `weights` indexed by row (a single row of
    /// weights is reused for every step).
    pub fn cost(&self, weights: &[[f64; NPI_COUNT]]) -> f64 {
        self.rows
            .iter()
            .enumerate()
            .map(|(k, u)| u.cost(&weights[k.min(weights.len() - 1)]) * self.dt)
            .sum()
    }
}
