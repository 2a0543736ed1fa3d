//! Active-set solver for `min 1/2 x^T G x - h^T x` subject to `x_j >= 0` on a
//! chosen subset of coordinates (Lawson-Hanson in Gram form).

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub(crate) const ACTIVE_SET_TOL: f64 = 1e-10;

fn solve_passive(g: &DMatrix<f64>, h: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let idx: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let mut z = DVector::zeros(passive.len());
    if idx.is_empty() {
        return z;
    }
    let m = idx.len();
    let gp = DMatrix::from_fn(m, m, |r, c| g[(idx[r], idx[c])]);
    let hp = DVector::from_fn(m, |r, _| h[idx[r]]);
    let sol = match gp.clone().cholesky() {
        Some(ch) => ch.solve(&hp),
        None => match gp.pseudo_inverse(1e-12) {
            Ok(pinv) => pinv * hp,
            Err(_) => DVector::zeros(m),
        },
    };
    for (r, &j) in idx.iter().enumerate() {
        z[j] = sol[r];
    }
    z
}

/// Solves the constrained quadratic program. `g` must be symmetric PSD.
///
/// Entering variables are chosen by largest negative gradient, ties broken
/// by lowest index.
pub(crate) fn solve(g: &DMatrix<f64>, h: &DVector<f64>, constrained: &[bool]) -> DVector<f64> {
    let n = h.len();
    let scale = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = ACTIVE_SET_TOL * scale;
    let mut passive: Vec<bool> = constrained.iter().map(|c| !c).collect();
    let mut x = solve_passive(g, h, &passive);
    let mut blocked = alloc::vec![false; n];

    for _ in 0..(3 * n + 20) {
        let w = h - g * &x;
        let mut enter: Option<usize> = None;
        for j in 0..n {
            if constrained[j] && !passive[j] && !blocked[j] && w[j] > tol && enter.is_none_or(|e| w[j] > w[e]) {
                enter = Some(j);
            }
        }
        let Some(j) = enter else { break };
        passive[j] = true;

        loop {
            let z = solve_passive(g, h, &passive);
            let infeasible: Vec<usize> = (0..n).filter(|&k| constrained[k] && passive[k] && z[k] <= 0.0).collect();
            if infeasible.is_empty() {
                x = z;
                break;
            }
            let mut step = 1.0f64;
            for &k in &infeasible {
                let denom = x[k] - z[k];
                if denom > 0.0 {
                    step = step.min(x[k] / denom);
                }
            }
            x = &x + (z - &x) * step;
            let mut removed_any = false;
            for k in 0..n {
                if constrained[k] && passive[k] && x[k] <= tol.min(1e-14) {
                    passive[k] = false;
                    x[k] = 0.0;
                    removed_any = true;
                }
            }
            if !removed_any {
                // Degenerate step; drop the entering variable and move on.
                passive[j] = false;
                x[j] = 0.0;
                blocked[j] = true;
                break;
            }
        }
        if !passive[j] && x[j] == 0.0 {
            blocked[j] = true;
        } else {
            blocked.iter_mut().for_each(|b| *b = false);
        }
    }
    for j in 0..n {
        if constrained[j] && x[j] < 0.0 {
            x[j] = 0.0;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unconstrained_matches_linear_solve() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let h = DVector::from_row_slice(&[1.0, 1.0]);
        let x = solve(&g, &h, &[false, false]);
        let r = &g * &x - &h;
        assert!(r.norm() < 1e-12);
    }

    #[test]
    fn negative_optimum_is_clipped() {
        // Unconstrained optimum (1, -1); with x >= 0 the answer is (0.5, 0).
        let g = DMatrix::identity(2, 2) * 2.0;
        let h = DVector::from_row_slice(&[1.0, -2.0]);
        let x = solve(&g, &h, &[true, true]);
        assert!((x[0] - 0.5).abs() < 1e-12 && x[1] == 0.0);
    }

    #[test]
    fn kkt_conditions_hold_on_random_problem() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = 40;
        let n = 8;
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let y = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let g = a.transpose() * &a;
        let h = a.transpose() * y;
        let x = solve(&g, &h, &[true; 8]);
        let grad = &g * &x - &h;
        for j in 0..n {
            assert!(x[j] >= 0.0);
            if x[j] > 0.0 {
                assert!(grad[j].abs() < 1e-9, "{j}: {}", grad[j]);
            } else {
                assert!(grad[j] > -1e-9);
            }
        }
    }
}
