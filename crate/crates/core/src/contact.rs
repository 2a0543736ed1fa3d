//! The NPI-to-contagion map `h[u]` and its constrained least-squares fits.
//!
//! Both forms are written in terms of the slack `d = u_max - u`:
//!
//! ```text
//! linear:    h = b + a^T d
//! quadratic: h = b + a^T d + 1/2 d^T S d
//! ```
//!
//! With `a >= 0` (and `S` entry-wise non-negative) the map can only shrink as
//! stringency grows.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SMatrix};

use crate::linalg::dense_eigenvalues;
use crate::npi::{NpiBounds, NpiVector, NPI_COUNT};
use crate::{nnqp, Error, Result};

pub type Curvature = [[f64; NPI_COUNT]; NPI_COUNT];
type Mat12 = SMatrix<f64, NPI_COUNT, NPI_COUNT>;

/// Jitter added to the curvature diagonal when it comes out singular.
pub const CURVATURE_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum MapForm {
    Linear,
    Quadratic,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContactMap {
    pub form: MapForm,
    /// Input influence weights, 1/day per stringency unit.
    pub a: [f64; NPI_COUNT],
    /// Contagion drive at maximum stringency, 1/day.
    pub b: f64,
    /// Curvature matrix of the quadratic form.
    #[cfg_attr(feature = "serde", serde(rename = "S", default, skip_serializing_if = "Option::is_none"))]
    pub s: Option<Curvature>,
}

impl ContactMap {
    pub fn linear(a: [f64; NPI_COUNT], b: f64) -> Result<Self> {
        let map = ContactMap {
            form: MapForm::Linear,
            a,
            b,
            s: None,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn quadratic(a: [f64; NPI_COUNT], b: f64, s: Curvature) -> Result<Self> {
        let map = ContactMap {
            form: MapForm::Quadratic,
            a,
            b,
            s: Some(s),
        };
        map.validate()?;
        Ok(map)
    }

    /// Intercept-only map.
    pub fn constant(b: f64) -> Self {
        ContactMap {
            form: MapForm::Linear,
            a: [0.0; NPI_COUNT],
            b: b.max(0.0),
            s: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.b.is_finite() || self.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("contact map"));
        }
        if self.b < 0.0 || self.a.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("contact map coefficients must be non-negative".into()));
        }
        match (self.form, &self.s) {
            (MapForm::Linear, None) => Ok(()),
            (MapForm::Linear, Some(_)) => Err(Error::InvalidParameter("linear map carries a curvature matrix".into())),
            (MapForm::Quadratic, None) => Err(Error::InvalidParameter("quadratic map without curvature".into())),
            (MapForm::Quadratic, Some(s)) => {
                let m = Mat12::from_fn(|r, c| s[r][c]);
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("curvature matrix"));
                }
                if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(Error::InvalidParameter("curvature matrix is not symmetric".into()));
                }
                if m.cholesky().is_none() {
                    return Err(Error::NotPositiveDefinite("curvature matrix"));
                }
                Ok(())
            }
        }
    }

    pub(crate) fn curvature_matrix(&self) -> Option<Mat12> {
        self.s.as_ref().map(|s| Mat12::from_fn(|r, c| s[r][c]))
    }

    /// `h[u]` without the admissibility check.
    pub fn drive(&self, u: &NpiVector) -> f64 {
        let d = u.slack();
        let lin: f64 = self.b + self.a.iter().zip(&d).map(|(a, d)| a * d).sum::<f64>();
        match &self.s {
            None => lin,
            Some(s) => {
                let mut quad = 0.0;
                for r in 0..NPI_COUNT {
                    for c in 0..NPI_COUNT {
                        quad += d[r] * s[r][c] * d[c];
                    }
                }
                lin + 0.5 * quad
            }
        }
    }

    /// `h[u]` for an admissible NPI vector.
    pub fn evaluate(&self, u: &NpiVector) -> Result<f64> {
        NpiBounds::default().check(u)?;
        Ok(self.drive(u).max(0.0))
    }

    /// `dh/du = -(a + S d)`.
    pub fn gradient(&self, u: &NpiVector) -> [f64; NPI_COUNT] {
        let d = u.slack();
        core::array::from_fn(|k| {
            let curv = self.s.as_ref().map_or(0.0, |s| (0..NPI_COUNT).map(|c| s[k][c] * d[c]).sum());
            -(self.a[k] + curv)
        })
    }

    /// Euclidean norm of `(a, b)`, used in summaries.
    pub fn coefficient_norm(&self) -> f64 {
        (self.b * self.b + self.a.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }
}

/// How the LASSO penalty on `a` is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum PenaltySelection {
    Fixed(f64),
    /// Chronological k-fold cross-validation over `10^lo ..= 10^hi` in
    /// half-decade steps.
    CrossValidated { folds: usize, log10_lo: f64, log10_hi: f64 },
}

impl Default for PenaltySelection {
    fn default() -> Self {
        PenaltySelection::CrossValidated {
            folds: 5,
            log10_lo: -4.0,
            log10_hi: 1.0,
        }
    }
}

impl PenaltySelection {
    fn grid(&self) -> Vec<f64> {
        match *self {
            PenaltySelection::Fixed(mu) => alloc::vec![mu],
            PenaltySelection::CrossValidated { log10_lo, log10_hi, .. } => {
                let steps = ((log10_hi - log10_lo) * 2.0).round().max(0.0) as usize;
                (0..=steps).map(|k| 10f64.powf(log10_lo + 0.5 * k as f64)).collect()
            }
        }
    }
}

/// Which curvature parameters a quadratic fit estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum CurvatureStructure {
    /// `S` held at zero; reduces to the linear design.
    Zero,
    #[default]
    Diagonal,
    /// All upper-triangle entries.
    Full,
}

impl CurvatureStructure {
    fn parameter_count(self) -> usize {
        match self {
            CurvatureStructure::Zero => 0,
            CurvatureStructure::Diagonal => NPI_COUNT,
            CurvatureStructure::Full => NPI_COUNT * (NPI_COUNT + 1) / 2,
        }
    }

    /// Minimum series length for a quadratic fit of this structure.
    pub fn min_samples(self) -> usize {
        match self {
            CurvatureStructure::Full => 10 * NPI_COUNT * NPI_COUNT,
            s => 10 * (1 + NPI_COUNT + s.parameter_count()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FitFlags {
    /// No NPI varied over the window; only the intercept was fitted.
    pub degenerate: bool,
    /// A quadratic fit was requested but the series was too short.
    pub quadratic_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub map: ContactMap,
    pub mu: f64,
    pub flags: FitFlags,
    /// Residual sum of squares on the fitting data.
    pub rss: f64,
}

/// Minimum series length for a linear fit.
pub const MIN_LINEAR_SAMPLES: usize = 10 * NPI_COUNT;

struct Design {
    structure: CurvatureStructure,
    /// Which NPI columns vary over the window.
    active: [bool; NPI_COUNT],
    rows: DMatrix<f64>,
}

impl Design {
    fn build(npis: &[NpiVector], structure: CurvatureStructure) -> Self {
        let slacks: Vec<[f64; NPI_COUNT]> = npis.iter().map(NpiVector::slack).collect();
        let active: [bool; NPI_COUNT] =
            core::array::from_fn(|k| slacks.iter().any(|d| (d[k] - slacks[0][k]).abs() > 1e-12));
        let p = 1 + NPI_COUNT + structure.parameter_count();
        let rows = DMatrix::from_fn(slacks.len(), p, |t, j| Self::feature(&slacks[t], structure, j));
        Design { structure, active, rows }
    }

    fn feature(d: &[f64; NPI_COUNT], structure: CurvatureStructure, j: usize) -> f64 {
        if j == 0 {
            return 1.0;
        }
        if j <= NPI_COUNT {
            return d[j - 1];
        }
        let q = j - 1 - NPI_COUNT;
        match structure {
            CurvatureStructure::Zero => unreachable!(),
            CurvatureStructure::Diagonal => 0.5 * d[q] * d[q],
            CurvatureStructure::Full => {
                let (r, c) = upper_index(q);
                if r == c {
                    0.5 * d[r] * d[r]
                } else {
                    d[r] * d[c]
                }
            }
        }
    }

    fn param_count(&self) -> usize {
        self.rows.ncols()
    }

    /// Parameters pinned at zero because their NPI columns never move.
    fn pinned(&self) -> Vec<bool> {
        (0..self.param_count())
            .map(|j| {
                if j == 0 {
                    return false;
                }
                if j <= NPI_COUNT {
                    return !self.active[j - 1];
                }
                let q = j - 1 - NPI_COUNT;
                match self.structure {
                    CurvatureStructure::Diagonal => !self.active[q],
                    _ => {
                        let (r, c) = upper_index(q);
                        !(self.active[r] && self.active[c])
                    }
                }
            })
            .collect()
    }

    fn penalty(&self, mu: f64) -> DVector<f64> {
        DVector::from_fn(self.param_count(), |j, _| if (1..=NPI_COUNT).contains(&j) { mu } else { 0.0 })
    }

    /// Solves the penalized non-negative fit on the given rows.
    fn solve(&self, y: &DVector<f64>, rows: &[usize], mu: f64) -> DVector<f64> {
        let p = self.param_count();
        let pinned = self.pinned();
        let keep: Vec<usize> = (0..p).filter(|&j| !pinned[j]).collect();
        let x = DMatrix::from_fn(rows.len(), keep.len(), |r, c| self.rows[(rows[r], keep[c])]);
        let yy = DVector::from_fn(rows.len(), |r, _| y[rows[r]]);
        let g = x.transpose() * &x * 2.0;
        let pen = self.penalty(mu);
        let h = x.transpose() * yy * 2.0 - DVector::from_fn(keep.len(), |r, _| pen[keep[r]]);
        let theta = nnqp::solve(&g, &h, &alloc::vec![true; keep.len()]);
        let mut full = DVector::zeros(p);
        for (r, &j) in keep.iter().enumerate() {
            full[j] = theta[r];
        }
        full
    }

    fn sse(&self, y: &DVector<f64>, rows: &[usize], theta: &DVector<f64>) -> f64 {
        rows.iter()
            .map(|&t| {
                let pred = self.rows.row(t).dot(&theta.transpose());
                (y[t] - pred).powi(2)
            })
            .sum()
    }
}

fn upper_index(q: usize) -> (usize, usize) {
    let mut q = q;
    for r in 0..NPI_COUNT {
        let len = NPI_COUNT - r;
        if q < len {
            return (r, r + q);
        }
        q -= len;
    }
    unreachable!("upper-triangle index out of range")
}

fn check_series(alpha: &[f64], npis: &[NpiVector], min: usize) -> Result<()> {
    if alpha.len() != npis.len() {
        return Err(Error::LengthMismatch(alpha.len(), npis.len()));
    }
    if alpha.len() < min {
        return Err(Error::TooFewSamples {
            needed: min,
            got: alpha.len(),
        });
    }
    if alpha.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("contagion-rate series"));
    }
    Ok(())
}

fn select_penalty(design: &Design, y: &DVector<f64>, selection: PenaltySelection) -> f64 {
    let grid = selection.grid();
    let folds = match selection {
        PenaltySelection::Fixed(mu) => return mu,
        PenaltySelection::CrossValidated { folds, .. } => folds.max(2),
    };
    let n = y.len();
    let mut best = (f64::INFINITY, grid[0]);
    for &mu in &grid {
        let mut err = 0.0;
        for f in 0..folds {
            let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
            let train: Vec<usize> = (0..n).filter(|t| *t < lo || *t >= hi).collect();
            let test: Vec<usize> = (lo..hi).collect();
            let theta = design.solve(y, &train, mu);
            err += design.sse(y, &test, &theta);
        }
        if err < best.0 {
            best = (err, mu);
        }
    }
    best.1
}

fn fit_with(alpha: &[f64], npis: &[NpiVector], structure: CurvatureStructure, selection: PenaltySelection) -> FitReport {
    let design = Design::build(npis, structure);
    let y = DVector::from_column_slice(alpha);
    let all: Vec<usize> = (0..y.len()).collect();

    if !design.active.iter().any(|&a| a) {
        let mean = alpha.iter().sum::<f64>() / alpha.len() as f64;
        let map = ContactMap::constant(mean);
        let rss = alpha.iter().map(|v| (v - map.b).powi(2)).sum();
        return FitReport {
            map,
            mu: 0.0,
            flags: FitFlags {
                degenerate: true,
                quadratic_fallback: false,
            },
            rss,
        };
    }

    let mu = select_penalty(&design, &y, selection);
    let theta = design.solve(&y, &all, mu);
    let b = theta[0];
    let a: [f64; NPI_COUNT] = core::array::from_fn(|k| theta[1 + k]);
    let map = match structure {
        CurvatureStructure::Zero => ContactMap {
            form: MapForm::Linear,
            a,
            b,
            s: None,
        },
        _ => {
            let mut s = [[0.0; NPI_COUNT]; NPI_COUNT];
            for q in 0..structure.parameter_count() {
                let v = theta[1 + NPI_COUNT + q];
                let (r, c) = match structure {
                    CurvatureStructure::Diagonal => (q, q),
                    _ => upper_index(q),
                };
                s[r][c] = v;
                s[c][r] = v;
            }
            let shifted = make_positive_definite(&mut s);
            let (a, b) = if shifted && structure == CurvatureStructure::Full {
                refit_linear_part(&design, alpha, &s, mu)
            } else {
                (a, b)
            };
            ContactMap {
                form: MapForm::Quadratic,
                a,
                b,
                s: Some(s),
            }
        }
    };
    let rss = alpha
        .iter()
        .zip(npis)
        .map(|(y, u)| (y - map.drive(u)).powi(2))
        .sum();
    FitReport {
        map,
        mu,
        flags: FitFlags::default(),
        rss,
    }
}

/// Shifts the diagonal so the smallest eigenvalue is at least the jitter.
/// Returns whether the shift exceeded the jitter itself.
fn make_positive_definite(s: &mut Curvature) -> bool {
    let m = DMatrix::from_fn(NPI_COUNT, NPI_COUNT, |r, c| s[r][c]);
    let min = dense_eigenvalues(&m)[0];
    if min >= CURVATURE_JITTER {
        return false;
    }
    let shift = if min < 0.0 { -min + CURVATURE_JITTER } else { CURVATURE_JITTER };
    for (k, row) in s.iter_mut().enumerate() {
        row[k] += shift;
    }
    min < 0.0
}

fn refit_linear_part(design: &Design, alpha: &[f64], s: &Curvature, mu: f64) -> ([f64; NPI_COUNT], f64) {
    let map = ContactMap {
        form: MapForm::Quadratic,
        a: [0.0; NPI_COUNT],
        b: 0.0,
        s: Some(*s),
    };
    let lin = Design {
        structure: CurvatureStructure::Zero,
        active: design.active,
        rows: design.rows.columns(0, 1 + NPI_COUNT).into_owned(),
    };
    let target = DVector::from_fn(alpha.len(), |t, _| {
        let quad = map.drive(&NpiVector(core::array::from_fn(|k| crate::npi::OXCGRT_MAX[k] - design.rows[(t, 1 + k)])));
        alpha[t] - quad
    });
    let all: Vec<usize> = (0..alpha.len()).collect();
    let theta = lin.solve(&target, &all, mu);
    (core::array::from_fn(|k| theta[1 + k]), theta[0])
}

/// Non-negative LASSO fit of the linear map.
///
/// Minimizes `sum_t (alpha_t - b - a^T d_t)^2 + mu |a|_1` subject to
/// `a >= 0, b >= 0`. NPI columns that never change are left at zero; if none
/// change the result is the intercept-only map flagged `degenerate`.
pub fn fit_linear(alpha: &[f64], npis: &[NpiVector], penalty: PenaltySelection) -> Result<FitReport> {
    check_series(alpha, npis, MIN_LINEAR_SAMPLES)?;
    Ok(fit_with(alpha, npis, CurvatureStructure::Zero, penalty))
}

/// Constrained polynomial fit of the quadratic map.
///
/// `a`, `b` and the curvature entries are non-negative; the curvature is
/// then shifted to be positive definite. Series shorter than the structure's
/// minimum fall back to [`fit_linear`] with `quadratic_fallback` set.
pub fn fit_quadratic(
    alpha: &[f64],
    npis: &[NpiVector],
    structure: CurvatureStructure,
    penalty: PenaltySelection,
) -> Result<FitReport> {
    check_series(alpha, npis, MIN_LINEAR_SAMPLES)?;
    if alpha.len() < structure.min_samples() {
        let mut report = fit_with(alpha, npis, CurvatureStructure::Zero, penalty);
        report.flags.quadratic_fallback = true;
        return Ok(report);
    }
    Ok(fit_with(alpha, npis, structure, penalty))
}

/// Penalized objective `rss + mu |a|_1` of a map on a series.
pub fn fit_objective(map: &ContactMap, alpha: &[f64], npis: &[NpiVector], mu: f64) -> f64 {
    let rss: f64 = alpha.iter().zip(npis).map(|(y, u)| (y - map.drive(u)).powi(2)).sum();
    rss + mu * map.a.iter().sum::<f64>()
}
