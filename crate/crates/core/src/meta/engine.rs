//! Restricted likelihood of the crossed two-level model and its gradient.
//!
//! With `R = diag(σ²)`, `A = ZᵀR⁻¹Z` and `G = LLᵀ` (block diagonal), the
//! marginal covariance `V = R + ZGZᵀ` is never formed. Everything goes
//! through `M = I + LᵀAL`, whose participant block is itself block diagonal
//! because every row belongs to exactly one participant. `M` is factored by
//! a block Cholesky: small per-group factors, then a dense factor of the
//! Schur complement for the exercise block.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::dataset::MetaDataset;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::num::Real;

/// Random-effect covariance at one grouping level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CovStructure {
    /// Unstructured 2×2: intercept and slope variances plus a correlation.
    #[serde(rename = "UN")]
    Un,
    /// Intercept and slope variances, correlation fixed at zero.
    #[serde(rename = "DIAG")]
    Diag,
    /// One shared variance with a free correlation.
    #[serde(rename = "CS")]
    Cs,
    /// Random intercept only.
    #[serde(rename = "INTERCEPT")]
    Intercept,
    /// No random effect at this level.
    #[serde(rename = "NONE")]
    Absent,
}

impl CovStructure {
    pub fn dim(self) -> usize {
        match self {
            CovStructure::Un | CovStructure::Diag | CovStructure::Cs => 2,
            CovStructure::Intercept => 1,
            CovStructure::Absent => 0,
        }
    }

    pub fn n_params(self) -> usize {
        match self {
            CovStructure::Un => 3,
            CovStructure::Diag | CovStructure::Cs => 2,
            CovStructure::Intercept => 1,
            CovStructure::Absent => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CovStructure::Un => "UN",
            CovStructure::Diag => "DIAG",
            CovStructure::Cs => "CS",
            CovStructure::Intercept => "INTERCEPT",
            CovStructure::Absent => "NONE",
        }
    }
}

impl std::fmt::Display for CovStructure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CovStructure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "UN" => Ok(CovStructure::Un),
            "DIAG" => Ok(CovStructure::Diag),
            "CS" => Ok(CovStructure::Cs),
            "INTERCEPT" | "ID" => Ok(CovStructure::Intercept),
            "NONE" | "ABSENT" => Ok(CovStructure::Absent),
            other => Err(Error::Config(format!("unknown covariance structure {other:?}"))),
        }
    }
}

pub(crate) const CORR_BOUND: f64 = 0.999;

pub(crate) type M2<T> = [[T; 2]; 2];

/// Covariance, its lower factor and the derivatives of the covariance with
/// respect to each working parameter of one level.
#[derive(Debug, Clone)]
pub(crate) struct LevelCov<T> {
    pub g: M2<T>,
    pub l: M2<T>,
    pub dg: Vec<M2<T>>,
}

/// Working parameters: log standard deviations and `z` with
/// `r = 0.999 tanh(z)`.
pub(crate) fn level_cov<T: Real>(s: CovStructure, theta: &[T]) -> LevelCov<T> {
    let z = T::zero();
    let zero = [[z; 2]; 2];
    let bound = T::cst(CORR_BOUND);
    let two = T::cst(2.0);
    match s {
        CovStructure::Un => {
            let (a, b) = (theta[0].exp(), theta[1].exp());
            let th = theta[2].tanh();
            let r = bound * th;
            let dr = bound * (T::one() - th * th);
            let c = r * a * b;
            LevelCov {
                g: [[a * a, c], [c, b * b]],
                l: [[a, z], [r * b, b * (T::one() - r * r).sqrt()]],
                dg: vec![
                    [[two * a * a, c], [c, z]],
                    [[z, c], [c, two * b * b]],
                    [[z, dr * a * b], [dr * a * b, z]],
                ],
            }
        }
        CovStructure::Diag => {
            let (a, b) = (theta[0].exp(), theta[1].exp());
            LevelCov {
                g: [[a * a, z], [z, b * b]],
                l: [[a, z], [z, b]],
                dg: vec![[[two * a * a, z], [z, z]], [[z, z], [z, two * b * b]]],
            }
        }
        CovStructure::Cs => {
            let t = theta[0].exp();
            let th = theta[1].tanh();
            let r = bound * th;
            let dr = bound * (T::one() - th * th);
            let t2 = t * t;
            LevelCov {
                g: [[t2, r * t2], [r * t2, t2]],
                l: [[t, z], [r * t, t * (T::one() - r * r).sqrt()]],
                dg: vec![[[two * t2, two * r * t2], [two * r * t2, two * t2]], [[z, dr * t2], [dr * t2, z]]],
            }
        }
        CovStructure::Intercept => {
            let a = theta[0].exp();
            LevelCov {
                g: [[a * a, z], [z, z]],
                l: [[a, z], [z, z]],
                dg: vec![[[two * a * a, z], [z, z]]],
            }
        }
        CovStructure::Absent => LevelCov {
            g: zero,
            l: zero,
            dg: Vec::new(),
        },
    }
}

/// Working parameters for a level from intercept/slope standard deviations
/// and a correlation.
pub(crate) fn level_theta<T: Real>(s: CovStructure, a: T, b: T, r: T) -> Vec<T> {
    let bound = T::cst(CORR_BOUND);
    let z = |r: T| (r / bound).max(T::cst(-0.99)).min(T::cst(0.99)).atanh();
    match s {
        CovStructure::Un => vec![a.ln(), b.ln(), z(r)],
        CovStructure::Diag => vec![a.ln(), b.ln()],
        CovStructure::Cs => vec![((a * b).sqrt()).ln(), z(r)],
        CovStructure::Intercept => vec![a.ln()],
        CovStructure::Absent => Vec::new(),
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Level {
    pub structure: CovStructure,
    pub d: usize,
    pub groups: usize,
    pub offset: usize,
    pub group_of_row: Vec<usize>,
}

impl Level {
    pub fn size(&self) -> usize {
        self.d * self.groups
    }
}

/// Response-independent pieces of the model for one dataset and structure pair.
#[derive(Debug, Clone)]
pub(crate) struct Design<T> {
    pub n: usize,
    pub p: usize,
    pub x: Matrix<T>,
    pub w: Vec<T>,
    pub partial: Vec<bool>,
    pub sum_log_sigma2: T,
    /// `[participant, exercise]`
    pub levels: [Level; 2],
    pub m: usize,
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub xtwx: Matrix<T>,
}

/// Response-dependent sufficient statistics (outcome centred by its weighted mean).
#[derive(Debug, Clone)]
pub(crate) struct Response<T> {
    pub y: Vec<T>,
    pub shift: T,
    pub c: Vec<T>,
    pub xtwy: Vec<T>,
    pub ytwy: T,
}

pub const FIXED_EFFECT_NAMES: [&str; 3] = ["intercept", "pROM", "female"];

#[derive(Debug, Clone)]
pub(crate) struct Eval<T> {
    pub loglik: T,
    pub grad: Vec<T>,
    /// Fixed effects on the centred response.
    pub beta: Vec<T>,
    pub xvx: Cholesky<T>,
    /// `ZᵀV⁻¹(y - Xβ)`
    pub u: Vec<T>,
    pub covs: [LevelCov<T>; 2],
}

impl<T: Real> Design<T> {
    pub fn new(data: &MetaDataset<T>, sp: CovStructure, se: CovStructure) -> Result<Self> {
        let rows = data.rows();
        let n = rows.len();
        let p = FIXED_EFFECT_NAMES.len();
        let x = Matrix::from_fn(n, p, |i, j| match j {
            0 => T::one(),
            1 => indicator(rows[i].partial),
            _ => indicator(rows[i].female),
        });
        let start_e = sp.dim() * data.participants().len();
        let levels = [
            Level {
                structure: sp,
                d: sp.dim(),
                groups: data.participants().len(),
                offset: 0,
                group_of_row: data.participant_index().to_vec(),
            },
            Level {
                structure: se,
                d: se.dim(),
                groups: data.exercises().len(),
                offset: start_e,
                group_of_row: data.exercise_index().to_vec(),
            },
        ];
        let m = levels[0].size() + levels[1].size();
        let w: Vec<T> = rows.iter().map(|r| r.weight()).collect();
        let partial: Vec<bool> = rows.iter().map(|r| r.partial).collect();
        let sum_log_sigma2 = rows.iter().map(|r| r.sigma2.ln()).sum();

        let mut design = Self {
            n,
            p,
            x,
            w,
            partial,
            sum_log_sigma2,
            levels,
            m,
            a: Matrix::zeros(m, m),
            b: Matrix::zeros(m, p),
            xtwx: Matrix::zeros(p, p),
        };
        let mut zr = Vec::with_capacity(4);
        for i in 0..n {
            design.z_row(i, &mut zr);
            let wi = design.w[i];
            for &(c1, v1) in &zr {
                for &(c2, v2) in &zr {
                    design.a[(c1, c2)] += wi * v1 * v2;
                }
                for j in 0..p {
                    design.b[(c1, j)] += wi * v1 * design.x[(i, j)];
                }
            }
            for j in 0..p {
                for k in 0..p {
                    design.xtwx[(j, k)] += wi * design.x[(i, j)] * design.x[(i, k)];
                }
            }
        }
        if Cholesky::new(&design.xtwx).is_none() || !full_rank(&design.xtwx) {
            return Err(Error::Design(
                "fixed-effect design (intercept, pROM, female) is rank deficient; \
                 both conditions and both sexes must be present"
                    .into(),
            ));
        }
        Ok(design)
    }

    /// Non-zero entries of row `i` of `Z` as `(column, value)`.
    pub fn z_row(&self, i: usize, out: &mut Vec<(usize, T)>) {
        out.clear();
        for lv in &self.levels {
            if lv.d == 0 {
                continue;
            }
            let base = lv.offset + lv.group_of_row[i] * lv.d;
            out.push((base, T::one()));
            if lv.d == 2 && self.partial[i] {
                out.push((base + 1, T::one()));
            }
        }
    }

    pub fn n_params(&self) -> usize {
        self.levels[0].structure.n_params() + self.levels[1].structure.n_params()
    }

    pub fn split_theta<'a>(&self, theta: &'a [T]) -> (&'a [T], &'a [T]) {
        theta.split_at(self.levels[0].structure.n_params())
    }

    pub fn response(&self, y: &[T]) -> Response<T> {
        let sw: T = self.w.iter().copied().sum();
        let shift = self.w.iter().zip(y).map(|(&w, &v)| w * v).sum::<T>() / sw;
        let yc: Vec<T> = y.iter().map(|&v| v - shift).collect();
        let mut c = vec![T::zero(); self.m];
        let mut xtwy = vec![T::zero(); self.p];
        let mut ytwy = T::zero();
        let mut zr = Vec::with_capacity(4);
        for i in 0..self.n {
            let wy = self.w[i] * yc[i];
            self.z_row(i, &mut zr);
            for &(col, v) in &zr {
                c[col] += wy * v;
            }
            for j in 0..self.p {
                xtwy[j] += wy * self.x[(i, j)];
            }
            ytwy += wy * yc[i];
        }
        Response {
            y: yc,
            shift,
            c,
            xtwy,
            ytwy,
        }
    }

    /// Restricted log-likelihood and gradient at `theta`. `None` if a
    /// factorization fails (numerically singular fixed-effect information).
    pub fn evaluate(&self, theta: &[T], resp: &Response<T>) -> Option<Eval<T>> {
        let (tp, te) = self.split_theta(theta);
        let covs = [level_cov(self.levels[0].structure, tp), level_cov(self.levels[1].structure, te)];
        if covs.iter().any(|c| c.l.iter().flatten().any(|v| !v.is_finite())) {
            return None;
        }
        let (m, p) = (self.m, self.p);

        // Lᵀ applied to the rows of [A | B | c]
        let cols = m + p + 1;
        let mut rhs = Matrix::zeros(m, cols);
        for r in 0..m {
            let dst = rhs.row_mut(r);
            dst[..m].copy_from_slice(self.a.row(r));
            dst[m..m + p].copy_from_slice(self.b.row(r));
            dst[m + p] = resp.c[r];
        }
        self.apply_lt_rows(&covs, &mut rhs);

        // M = I + (LᵀA) L
        let mut mm = Matrix::zeros(m, m);
        for r in 0..m {
            mm.row_mut(r).copy_from_slice(&rhs.row(r)[..m]);
        }
        self.apply_l_cols(&covs, &mut mm);
        for i in 0..m {
            mm[(i, i)] += T::one();
        }

        let chol = BlockChol::new(&mm, &self.levels[0])?;
        chol.solve_lower(&mut rhs);
        let log_det_m = chol.log_det();

        // H = rhs[:, ..m], K = rhs[:, m..m+p], k = rhs[:, m+p]
        let mut xvx = self.xtwx.clone();
        let mut xvy = resp.xtwy.clone();
        let mut yvy = resp.ytwy;
        for r in 0..m {
            let row = rhs.row(r);
            let (kk, kv) = (&row[m..m + p], row[m + p]);
            for j in 0..p {
                for l in 0..p {
                    xvx[(j, l)] -= kk[j] * kk[l];
                }
                xvy[j] -= kk[j] * kv;
            }
            yvy -= kv * kv;
        }
        let f = Cholesky::new(&xvx)?;
        let beta = f.solve(&xvy);
        let rvr = (yvy - beta.iter().zip(&xvy).map(|(&b, &v)| b * v).sum::<T>()).max(T::zero());
        let n_p = T::from_usize_lossy(self.n - p);
        let loglik = -T::cst(0.5) * (n_p * T::cst((2.0 * PI).ln()) + self.sum_log_sigma2 + log_det_m + f.log_det() + rvr);
        if !loglik.is_finite() {
            return None;
        }

        // ZᵀV⁻¹X = B - HᵀK, ZᵀV⁻¹y = c - Hᵀk
        let mut zvx = self.b.clone();
        let mut zvy = resp.c.clone();
        for r in 0..m {
            let row = rhs.row(r);
            let (kk, kv) = (&row[m..m + p], row[m + p]);
            for i in 0..m {
                let h = row[i];
                if h == T::zero() {
                    continue;
                }
                for j in 0..p {
                    zvx[(i, j)] -= h * kk[j];
                }
                zvy[i] -= h * kv;
            }
        }
        let u: Vec<T> = (0..m).map(|i| zvy[i] - (0..p).map(|j| zvx[(i, j)] * beta[j]).sum::<T>()).collect();
        // rows of ZᵀV⁻¹X (XᵀV⁻¹X)⁻¹
        let q: Vec<Vec<T>> = (0..m).map(|i| f.solve(zvx.row(i))).collect();

        let mut grad = Vec::with_capacity(theta.len());
        for (lv, cov) in self.levels.iter().zip(&covs) {
            if lv.d == 0 {
                continue;
            }
            // Σ_g (ZᵀPZ)_gg - u_g u_gᵀ
            let mut s = [[T::zero(); 2]; 2];
            for g in 0..lv.groups {
                let base = lv.offset + g * lv.d;
                for j in 0..lv.d {
                    for k in 0..lv.d {
                        let (cj, ck) = (base + j, base + k);
                        let mut hh = T::zero();
                        for r in 0..m {
                            let row = rhs.row(r);
                            hh += row[cj] * row[ck];
                        }
                        let qz: T = (0..p).map(|t| q[cj][t] * zvx[(ck, t)]).sum();
                        s[j][k] += self.a[(cj, ck)] - hh - qz - u[cj] * u[ck];
                    }
                }
            }
            for dg in &cov.dg {
                let mut tr = T::zero();
                for j in 0..lv.d {
                    for k in 0..lv.d {
                        tr += dg[j][k] * s[k][j];
                    }
                }
                grad.push(-T::cst(0.5) * tr);
            }
        }
        Some(Eval {
            loglik,
            grad,
            beta,
            xvx: f,
            u,
            covs,
        })
    }

    fn apply_lt_rows(&self, covs: &[LevelCov<T>; 2], mat: &mut Matrix<T>) {
        let cols = mat.cols();
        for (lv, cov) in self.levels.iter().zip(covs) {
            let l = cov.l;
            for g in 0..lv.groups {
                let r0 = lv.offset + g * lv.d;
                match lv.d {
                    1 => {
                        for v in mat.row_mut(r0) {
                            *v *= l[0][0];
                        }
                    }
                    2 => {
                        for c in 0..cols {
                            let (x0, x1) = (mat[(r0, c)], mat[(r0 + 1, c)]);
                            mat[(r0, c)] = l[0][0] * x0 + l[1][0] * x1;
                            mat[(r0 + 1, c)] = l[1][1] * x1;
                        }
                    }
                    _ => {}
                }
            }
        }
    }

    fn apply_l_cols(&self, covs: &[LevelCov<T>; 2], mat: &mut Matrix<T>) {
        let rows = mat.rows();
        for (lv, cov) in self.levels.iter().zip(covs) {
            let l = cov.l;
            for g in 0..lv.groups {
                let c0 = lv.offset + g * lv.d;
                for r in 0..rows {
                    match lv.d {
                        1 => mat[(r, c0)] *= l[0][0],
                        2 => {
                            let (x0, x1) = (mat[(r, c0)], mat[(r, c0 + 1)]);
                            mat[(r, c0)] = x0 * l[0][0] + x1 * l[1][0];
                            mat[(r, c0 + 1)] = x1 * l[1][1];
                        }
                        _ => {}
                    }
                }
            }
        }
    }

    /// Empirical-Bayes predictions `G ZᵀV⁻¹(y - Xβ)` for one level, per group.
    pub fn blups(&self, eval: &Eval<T>, level: usize) -> Vec<[T; 2]> {
        let lv = &self.levels[level];
        let g = eval.covs[level].g;
        (0..lv.groups)
            .map(|grp| {
                let base = lv.offset + grp * lv.d;
                match lv.d {
                    0 => [T::zero(); 2],
                    1 => [g[0][0] * eval.u[base], T::zero()],
                    _ => {
                        let (u0, u1) = (eval.u[base], eval.u[base + 1]);
                        [g[0][0] * u0 + g[0][1] * u1, g[1][0] * u0 + g[1][1] * u1]
                    }
                }
            })
            .collect()
    }

    /// `V⁻¹(y - Xβ)` on the centred response, via `R⁻¹(r - Z b̂)`.
    pub fn vinv_residual(&self, eval: &Eval<T>, resp: &Response<T>) -> Vec<T> {
        let bp = self.blups(eval, 0);
        let be = self.blups(eval, 1);
        (0..self.n)
            .map(|i| {
                let xb: T = (0..self.p).map(|j| self.x[(i, j)] * eval.beta[j]).sum();
                let mut zb = T::zero();
                for (lv, b) in self.levels.iter().zip([&bp, &be]) {
                    if lv.d == 0 {
                        continue;
                    }
                    let e = b[lv.group_of_row[i]];
                    zb += e[0];
                    if lv.d == 2 && self.partial[i] {
                        zb += e[1];
                    }
                }
                self.w[i] * (resp.y[i] - xb - zb)
            })
            .collect()
    }
}

fn indicator<T: Real>(b: bool) -> T {
    if b {
        T::one()
    } else {
        T::zero()
    }
}

fn full_rank<T: Real>(xtwx: &Matrix<T>) -> bool {
    // relative pivot check on the normalized information matrix
    let n = xtwx.rows();
    let scaled = Matrix::from_fn(n, n, |i, j| xtwx[(i, j)] / (xtwx[(i, i)] * xtwx[(j, j)]).sqrt());
    match Cholesky::new(&scaled) {
        Some(c) => (0..n).all(|i| c.factor()[(i, i)] > T::cst(1e-6)),
        None => false,
    }
}

/// Cholesky factor of `M` exploiting its block-diagonal leading level.
struct BlockChol<T> {
    d1: usize,
    g1: usize,
    m1: usize,
    /// per group `(l00, l10, l11)`; `l10 = l11 = 0` when `d1 = 1`
    c11: Vec<[T; 3]>,
    /// rows `m1..m`, columns `..m1`
    c21: Matrix<T>,
    c22: Option<Cholesky<T>>,
}

impl<T: Real> BlockChol<T> {
    fn new(mm: &Matrix<T>, first: &Level) -> Option<Self> {
        let m = mm.rows();
        let (d1, g1) = (first.d, if first.d == 0 { 0 } else { first.groups });
        let m1 = d1 * g1;
        let m2 = m - m1;
        let mut c11 = Vec::with_capacity(g1);
        for g in 0..g1 {
            let r = g * d1;
            let blk = match d1 {
                1 => {
                    let a = mm[(r, r)];
                    if !(a > T::zero()) {
                        return None;
                    }
                    [a.sqrt(), T::zero(), T::zero()]
                }
                _ => {
                    let a = mm[(r, r)];
                    if !(a > T::zero()) {
                        return None;
                    }
                    let l00 = a.sqrt();
                    let l10 = mm[(r + 1, r)] / l00;
                    let d = mm[(r + 1, r + 1)] - l10 * l10;
                    if !(d > T::zero()) {
                        return None;
                    }
                    [l00, l10, d.sqrt()]
                }
            };
            c11.push(blk);
        }
        let mut c21 = Matrix::zeros(m2, m1);
        for i in 0..m2 {
            for (g, blk) in c11.iter().enumerate() {
                let c = g * d1;
                let x0 = mm[(m1 + i, c)] / blk[0];
                c21[(i, c)] = x0;
                if d1 == 2 {
                    c21[(i, c + 1)] = (mm[(m1 + i, c + 1)] - blk[1] * x0) / blk[2];
                }
            }
        }
        let c22 = if m2 > 0 {
            let mut s = Matrix::from_fn(m2, m2, |i, j| mm[(m1 + i, m1 + j)]);
            for i in 0..m2 {
                for j in 0..=i {
                    let dot: T = c21.row(i).iter().zip(c21.row(j)).map(|(&a, &b)| a * b).sum();
                    s[(i, j)] -= dot;
                    if i != j {
                        s[(j, i)] -= dot;
                    }
                }
            }
            Some(Cholesky::new(&s)?)
        } else {
            None
        };
        Some(Self { d1, g1, m1, c11, c21, c22 })
    }

    fn log_det(&self) -> T {
        let two = T::cst(2.0);
        let mut s = T::zero();
        for blk in &self.c11 {
            s += two * blk[0].ln();
            if self.d1 == 2 {
                s += two * blk[2].ln();
            }
        }
        s + self.c22.as_ref().map_or(T::zero(), |c| c.log_det())
    }

    /// In-place `C⁻¹ X` for the lower factor `C`.
    fn solve_lower(&self, x: &mut Matrix<T>) {
        let cols = x.cols();
        for g in 0..self.g1 {
            let r = g * self.d1;
            let blk = self.c11[g];
            for c in 0..cols {
                let v0 = x[(r, c)] / blk[0];
                x[(r, c)] = v0;
                if self.d1 == 2 {
                    x[(r + 1, c)] = (x[(r + 1, c)] - blk[1] * v0) / blk[2];
                }
            }
        }
        let Some(c22) = &self.c22 else {
            return;
        };
        let m2 = c22.dim();
        let mut bottom = Matrix::zeros(m2, cols);
        for i in 0..m2 {
            let dst = bottom.row_mut(i);
            dst.copy_from_slice(x.row(self.m1 + i));
            let lrow = self.c21.row(i);
            for (k, &l) in lrow.iter().enumerate() {
                if l == T::zero() {
                    continue;
                }
                let src = x.row(k);
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d -= l * s;
                }
            }
        }
        let solved = c22.solve_lower_matrix(&bottom);
        for i in 0..m2 {
            x.row_mut(self.m1 + i).copy_from_slice(solved.row(i));
        }
    }
}
