//! Innovation-based health checks.
//!
//! For a well-tuned filter the innovations are zero mean (P1), white (P2)
//! and have the variance the filter predicts (P3).

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use super::FilterOutput;
use crate::{Error, Result};

pub const MIN_INNOVATIONS: usize = 30;
pub const MAX_LAG: usize = 10;

/// 95% quantile of the chi-square distribution with one degree of freedom.
const CHI2_1_95: f64 = 3.841_458_820_694_124;
const EXCEED_RATE: f64 = 0.05;
/// Band half-width in standard errors for P1 and P3.
const Z_BAND: f64 = 3.0;
/// Two-sided 95% normal quantile for the whiteness band.
const Z_WHITE: f64 = 1.959_963_984_540_054;
/// Lags that must fall inside the whiteness band. Under white noise three or
/// more of ten lags land outside with probability about 1.2%.
const MIN_WHITE_LAGS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum VarianceCheck {
    Consistent,
    /// Innovations larger than predicted: `r` or `Q` too small.
    UnderSpecified,
    /// Innovations smaller than predicted: `r` or `Q` too large.
    OverSpecified,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MonitorReport {
    pub count: usize,
    /// Sample mean of the normalized innovations over its standard error.
    pub mean_ratio: f64,
    pub autocorrelations: [f64; MAX_LAG],
    /// Whiteness band `1.96 / sqrt(n)`.
    pub white_band: f64,
    pub lags_inside: usize,
    /// Share of innovations with `v^2 > 3.84 gamma`.
    pub exceed_fraction: f64,
    /// Mean normalized innovation squared, ideally 1.
    pub nis_mean: f64,
    pub zero_mean: bool,
    pub white: bool,
    pub variance: VarianceCheck,
}

impl MonitorReport {
    pub fn passes(&self) -> bool {
        self.zero_mean && self.white && self.variance == VarianceCheck::Consistent
    }
}

/// Checks P1-P3 on the innovations of a filter run.
pub fn monitor(out: &FilterOutput) -> Result<MonitorReport> {
    let (v, g): (Vec<f64>, Vec<f64>) = out.innovations().into_iter().unzip();
    monitor_innovations(&v, &g)
}

/// Checks P1-P3 on raw innovations `v` and their predicted variances `g`.
pub fn monitor_innovations(v: &[f64], g: &[f64]) -> Result<MonitorReport> {
    if v.len() != g.len() {
        return Err(Error::LengthMismatch(v.len(), g.len()));
    }
    let n = v.len();
    if n < MIN_INNOVATIONS {
        return Err(Error::TooFewSamples {
            needed: MIN_INNOVATIONS,
            got: n,
        });
    }
    if g.iter().any(|&x| !(x > 0.0 && x.is_finite())) || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("innovation sequence"));
    }
    let nf = n as f64;
    let e: Vec<f64> = v.iter().zip(g).map(|(v, g)| v / g.sqrt()).collect();
    let mean = e.iter().sum::<f64>() / nf;
    let centered: Vec<f64> = e.iter().map(|x| x - mean).collect();
    let c0 = centered.iter().map(|x| x * x).sum::<f64>() / nf;
    let std = c0.sqrt();

    let mean_ratio = if std > 0.0 { mean * nf.sqrt() / std } else { 0.0 };
    let mut autocorrelations = [0.0; MAX_LAG];
    if c0 > 0.0 {
        for (lag, slot) in autocorrelations.iter_mut().enumerate() {
            let lag = lag + 1;
            let ck: f64 = centered.iter().zip(&centered[lag..]).map(|(a, b)| a * b).sum::<f64>() / nf;
            *slot = ck / c0;
        }
    }
    let white_band = Z_WHITE / nf.sqrt();
    let lags_inside = autocorrelations.iter().filter(|r| r.abs() <= white_band).count();

    let exceed = v.iter().zip(g).filter(|(v, g)| *v * *v > CHI2_1_95 * **g).count();
    let exceed_fraction = exceed as f64 / nf;
    let exceed_band = Z_BAND * (EXCEED_RATE * (1.0 - EXCEED_RATE) / nf).sqrt();
    let nis_mean = e.iter().map(|x| x * x).sum::<f64>() / nf;
    let nis_band = Z_BAND * (2.0 / nf).sqrt();
    let variance = if exceed_fraction > EXCEED_RATE + exceed_band || nis_mean > 1.0 + nis_band {
        VarianceCheck::UnderSpecified
    } else if exceed_fraction < EXCEED_RATE - exceed_band || nis_mean < 1.0 - nis_band {
        VarianceCheck::OverSpecified
    } else {
        VarianceCheck::Consistent
    };

    Ok(MonitorReport {
        count: n,
        mean_ratio,
        autocorrelations,
        white_band,
        lags_inside,
        exceed_fraction,
        nis_mean,
        zero_mean: mean_ratio.abs() <= Z_BAND,
        white: lags_inside >= MIN_WHITE_LAGS,
        variance,
    })
}
