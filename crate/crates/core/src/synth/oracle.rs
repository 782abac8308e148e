//! Brute-force references for the meta-regression engine.
//!
//! These build the marginal covariance densely and share nothing with the
//! fitting code beyond the dataset type and the Cholesky routine.

use crate::linalg::{Cholesky, Matrix};
use crate::meta::MetaDataset;

/// Restricted log-likelihood at explicit level covariances, from a dense
/// `V = R + Z_p G_p Z_pᵀ + Z_e G_e Z_eᵀ`. `None` if `V` or `XᵀV⁻¹X` is not
/// positive definite.
pub fn dense_reml_loglik(data: &MetaDataset<f64>, g_p: [[f64; 2]; 2], g_e: [[f64; 2]; 2]) -> Option<f64> {
    let rows = data.rows();
    let n = rows.len();
    let pi = data.participant_index();
    let ei = data.exercise_index();
    let zrow = |i: usize| [1.0, if rows[i].partial { 1.0 } else { 0.0 }];
    let quad = |g: &[[f64; 2]; 2], a: [f64; 2], b: [f64; 2]| {
        let mut s = 0.0;
        for j in 0..2 {
            for k in 0..2 {
                s += a[j] * g[j][k] * b[k];
            }
        }
        s
    };
    let v = Matrix::from_fn(n, n, |i, j| {
        let mut s = if i == j { rows[i].sigma2 } else { 0.0 };
        if pi[i] == pi[j] {
            s += quad(&g_p, zrow(i), zrow(j));
        }
        if ei[i] == ei[j] {
            s += quad(&g_e, zrow(i), zrow(j));
        }
        s
    });
    let x = Matrix::from_fn(n, 3, |i, j| match j {
        0 => 1.0,
        1 => f64::from(u8::from(rows[i].partial)),
        _ => f64::from(u8::from(rows[i].female)),
    });
    let y: Vec<f64> = rows.iter().map(|r| r.y).collect();
    let cv = Cholesky::new(&v)?;
    let vinv_x = cv.solve_matrix(&x);
    let xvx = x.tr_matmul(&vinv_x);
    let cx = Cholesky::new(&xvx)?;
    let vinv_y = cv.solve(&y);
    let xvy = x.tr_matvec(&vinv_y);
    let beta = cx.solve(&xvy);
    let r: Vec<f64> = (0..n).map(|i| y[i] - (0..3).map(|j| x[(i, j)] * beta[j]).sum::<f64>()).collect();
    let vinv_r = cv.solve(&r);
    let rvr: f64 = r.iter().zip(&vinv_r).map(|(a, b)| a * b).sum();
    let p = 3.0;
    Some(-0.5 * ((n as f64 - p) * (2.0 * std::f64::consts::PI).ln() + cv.log_det() + cx.log_det() + rvr))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridOptimum {
    pub loglik: f64,
    /// Standard deviations `(τ_p, τ_q, τ_u, τ_v)`.
    pub sds: [f64; 4],
}

/// Maximizes the dense restricted likelihood over the four standard
/// deviations of the independent-effects (DIAG/DIAG) model by a zooming
/// grid: `points` per axis, the box shrunk to 0.6 of its half-width around
/// the incumbent each round.
pub fn grid_search_diag(data: &MetaDataset<f64>, points: usize, rounds: usize) -> GridOptimum {
    let y: Vec<f64> = data.rows().iter().map(|r| r.y).collect();
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let sd_y = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let hi = 3.0 * sd_y.max(1e-3);
    let eval = |s: [f64; 4]| {
        let gp = [[s[0] * s[0], 0.0], [0.0, s[1] * s[1]]];
        let ge = [[s[2] * s[2], 0.0], [0.0, s[3] * s[3]]];
        dense_reml_loglik(data, gp, ge).unwrap_or(f64::NEG_INFINITY)
    };
    let mut best = GridOptimum {
        loglik: eval([0.0; 4]),
        sds: [0.0; 4],
    };
    let mut center = [hi / 2.0; 4];
    let mut half = hi / 2.0;
    let steps = points.max(2);
    for _ in 0..rounds {
        let axis: Vec<Vec<f64>> = center
            .iter()
            .map(|&c| {
                let lo = (c - half).max(0.0);
                let up = c + half;
                (0..steps).map(|k| lo + (up - lo) * k as f64 / (steps - 1) as f64).collect()
            })
            .collect();
        for &a in &axis[0] {
            for &b in &axis[1] {
                for &c in &axis[2] {
                    for &d in &axis[3] {
                        let s = [a, b, c, d];
                        let l = eval(s);
                        if l > best.loglik {
                            best = GridOptimum { loglik: l, sds: s };
                        }
                    }
                }
            }
        }
        center = best.sds;
        half *= 0.6;
    }
    best
}
