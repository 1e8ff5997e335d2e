//! Small dense constrained least-squares solvers.
//!
//! [`nnls`] is the Lawson–Hanson active-set method. [`solve_lsi`] minimises
//! a strictly convex quadratic under linear inequalities by reducing it to a
//! least-distance problem, which in turn is an NNLS problem.

use nalgebra::{DMatrix, DVector};

/// Result of a non-negative least-squares solve.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub residual: DVector<f64>,
    pub iterations: usize,
}

/// Minimise `||E x - f||` subject to `x >= 0`.
pub fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> NnlsSolution {
    let n = e.ncols();
    let scale = e.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0) * f.amax().max(1.0);
    let tol = 1e-12 * scale;
    let max_outer = 3 * n + 10;

    let mut x = DVector::zeros(n);
    let mut passive = vec![false; n];
    let mut iterations = 0;

    let ls_on = |passive: &[bool]| -> DVector<f64> {
        let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
        let mut sub = DMatrix::zeros(e.nrows(), cols.len());
        for (k, &j) in cols.iter().enumerate() {
            sub.set_column(k, &e.column(j));
        }
        let z_sub = sub
            .svd(true, true)
            .solve(f, 1e-14)
            .unwrap_or_else(|_| DVector::zeros(cols.len()));
        let mut z = DVector::zeros(n);
        for (k, &j) in cols.iter().enumerate() {
            z[j] = z_sub[k];
        }
        z
    };

    loop {
        let w = e.transpose() * (f - e * &x);
        let next = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)));
        let Some(t) = next else { break };
        if iterations >= max_outer {
            break;
        }
        iterations += 1;
        passive[t] = true;

        loop {
            let z = ls_on(&passive);
            if (0..n).filter(|&j| passive[j]).all(|j| z[j] > 0.0) {
                x = z;
                break;
            }
            let mut step = f64::INFINITY;
            let mut hit = None;
            for j in (0..n).filter(|&j| passive[j] && z[j] <= 0.0) {
                let denom = x[j] - z[j];
                let ratio = if denom > 0.0 { x[j] / denom } else { 0.0 };
                if ratio < step {
                    step = ratio;
                    hit = Some(j);
                }
            }
            x += (&z - &x) * step;
            if let Some(j) = hit {
                x[j] = 0.0;
            }
            for j in 0..n {
                if passive[j] && x[j] <= tol {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
        }
    }
    let residual = e * &x - f;
    NnlsSolution { x, residual, iterations }
}

/// Minimiser of `0.5 z'Hz + g'z` subject to `A z >= b`.
#[derive(Debug, Clone)]
pub struct LsiSolution {
    pub z: DVector<f64>,
    /// Lagrange multipliers, one per row of `A`, satisfying `Hz + g = A' lambda`.
    pub multipliers: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LsiError {
    /// `H` is not positive definite.
    NotConvex,
    /// The inequality system has no solution.
    Infeasible,
}

pub fn solve_lsi(h: &DMatrix<f64>, g: &DVector<f64>, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<LsiSolution, LsiError> {
    let n = h.nrows();
    let chol = h.clone().cholesky().ok_or(LsiError::NotConvex)?;
    let l = chol.l();
    let z0 = -chol.solve(g);
    let m = a.nrows();
    if m == 0 {
        return Ok(LsiSolution { z: z0, multipliers: DVector::zeros(0) });
    }
    // Substituting w = L'(z - z0) turns the problem into min ||w||
    // subject to (A L^-T) w >= b - A z0.
    let at = a.transpose();
    let gt = l.solve_lower_triangular(&at).ok_or(LsiError::NotConvex)?;
    let hhat = b - a * &z0;

    let mut e = DMatrix::zeros(n + 1, m);
    e.view_mut((0, 0), (n, m)).copy_from(&gt);
    e.row_mut(n).copy_from(&hhat.transpose());
    let mut f = DVector::zeros(n + 1);
    f[n] = 1.0;

    let sol = nnls(&e, &f);
    let r = &sol.residual;
    let denom = -r[n];
    if r.norm() < 1e-10 || denom <= 1e-14 {
        return Err(LsiError::Infeasible);
    }
    let w = -r.rows(0, n) / r[n];
    let lt = l.transpose();
    let dz = lt.solve_upper_triangular(&w).ok_or(LsiError::NotConvex)?;
    Ok(LsiSolution { z: z0 + dz, multipliers: &sol.x / denom })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_unconstrained_interior() {
        let e = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let f = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let s = nnls(&e, &f);
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_clamps_negative_component() {
        let e = DMatrix::identity(2, 2);
        let f = DVector::from_vec(vec![-1.0, 2.0]);
        let s = nnls(&e, &f);
        assert_eq!(s.x[0], 0.0);
        assert!((s.x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lsi_box_projection() {
        // min 0.5|z - (2, -3)|^2 with 0 <= z <= 1.
        let h = DMatrix::identity(2, 2);
        let g = DVector::from_vec(vec![-2.0, 3.0]);
        let a = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, -1.0, 0.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![0.0, 0.0, -1.0, -1.0]);
        let s = solve_lsi(&h, &g, &a, &b).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-12 && s.z[1].abs() < 1e-12);
        let stationarity = &h * &s.z + &g - a.transpose() * &s.multipliers;
        assert!(stationarity.amax() < 1e-12);
        assert!(s.multipliers.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn lsi_detects_infeasible() {
        let h = DMatrix::identity(1, 1);
        let g = DVector::zeros(1);
        let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        assert_eq!(solve_lsi(&h, &g, &a, &b).unwrap_err(), LsiError::Infeasible);
    }
}
