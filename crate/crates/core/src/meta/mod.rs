//! Crossed random-effects meta-regression fitted by REML.
//!
//! `Y = β0 + β1·pROM + β2·female + (p_i + q_i·pROM) + (u_e + v_e·pROM) + ε`,
//! with `ε ~ N(0, σ²)` known per row and bivariate normal effects at the
//! participant and exercise levels.

pub mod dataset;
pub(crate) mod engine;

use serde::Serialize;

pub use dataset::{MetaDataset, MetaRow};
pub use engine::{CovStructure, FIXED_EFFECT_NAMES};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::num::Real;
use crate::optim::{bfgs, newton_polish, BfgsOptions};
use crate::stats::{chi2_sf, normal_two_sided, t_two_sided};
use engine::{level_cov, level_theta, Design, Eval, Response};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedEffect<T> {
    pub name: String,
    pub est: T,
    pub se: T,
    pub z: T,
    pub p: f64,
}

/// Variance components of one level. Slope and correlation are `None` when
/// the structure does not carry them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevelComponents<T> {
    pub structure: CovStructure,
    pub tau_intercept2: T,
    pub tau_slope2: Option<T>,
    pub corr: Option<T>,
}

impl<T: Real> LevelComponents<T> {
    fn from_g(structure: CovStructure, g: [[T; 2]; 2]) -> Self {
        let (slope, corr) = match structure {
            CovStructure::Un | CovStructure::Cs => {
                let denom = (g[0][0] * g[1][1]).sqrt();
                let r = if denom > T::zero() { g[0][1] / denom } else { T::zero() };
                (Some(g[1][1]), Some(r))
            }
            CovStructure::Diag => (Some(g[1][1]), Some(T::zero())),
            _ => (None, None),
        };
        Self {
            structure,
            tau_intercept2: g[0][0],
            tau_slope2: slope,
            corr,
        }
    }

    pub fn slope2_or_zero(&self) -> T {
        self.tau_slope2.unwrap_or(T::zero())
    }

    pub fn corr_or_zero(&self) -> T {
        self.corr.unwrap_or(T::zero())
    }

    /// Random-effect variance under fROM.
    pub fn var_full(&self) -> T {
        self.tau_intercept2
    }

    /// Random-effect variance under pROM: `τ0² + τ1² + 2rτ0τ1`.
    pub fn var_partial(&self) -> T {
        let t1 = self.slope2_or_zero();
        self.tau_intercept2 + t1 + T::cst(2.0) * self.corr_or_zero() * (self.tau_intercept2 * t1).sqrt()
    }

    /// 2×2 covariance `[[τ0², c], [c, τ1²]]`.
    pub fn matrix(&self) -> [[T; 2]; 2] {
        let t1 = self.slope2_or_zero();
        let c = self.corr_or_zero() * (self.tau_intercept2 * t1).sqrt();
        [[self.tau_intercept2, c], [c, t1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareTest<T> {
    pub stat: T,
    pub df: usize,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartTrace {
    pub start: usize,
    pub loglik: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop_reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceInfo {
    pub converged: bool,
    pub grad_norm: f64,
    pub iterations: usize,
    pub warm_started: bool,
    pub starts: Vec<StartTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelFit<T> {
    pub structure_p: CovStructure,
    pub structure_e: CovStructure,
    pub fixed_effects: Vec<FixedEffect<T>>,
    /// Model-based covariance of `β̂`, row-major `p × p`.
    pub cov_beta: Vec<Vec<T>>,
    pub participant: LevelComponents<T>,
    pub exercise: LevelComponents<T>,
    pub loglik: T,
    pub aic: T,
    pub bic: T,
    pub qe: ChiSquareTest<T>,
    pub qm: ChiSquareTest<T>,
    pub n_rows: usize,
    /// Number of variance-side parameters.
    pub n_cov_params: usize,
    /// Optimum in the unconstrained working parameterization.
    pub theta: Vec<T>,
    /// Gradient of `ℓ` at `theta`.
    pub gradient: Vec<T>,
    /// Empirical-Bayes `(intercept, slope)` predictions per participant.
    pub blup_participant: Vec<[T; 2]>,
    /// Empirical-Bayes `(intercept, slope)` predictions per exercise.
    pub blup_exercise: Vec<[T; 2]>,
    pub convergence: ConvergenceInfo,
}

impl<T: Real> ModelFit<T> {
    pub fn beta(&self) -> Vec<T> {
        self.fixed_effects.iter().map(|f| f.est).collect()
    }

    pub fn effect(&self, name: &str) -> Option<&FixedEffect<T>> {
        self.fixed_effects.iter().find(|f| f.name == name)
    }

    pub fn slope(&self) -> &FixedEffect<T> {
        &self.fixed_effects[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions<T> {
    pub bfgs: BfgsOptions<T>,
    /// Tried alone first; the default starts are used only if it fails.
    pub warm_start: Option<Vec<T>>,
    /// Appended to the default multi-start set.
    pub extra_starts: Vec<Vec<T>>,
}

impl<T: Real> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            bfgs: BfgsOptions::default(),
            warm_start: None,
            extra_starts: Vec::new(),
        }
    }
}

pub fn fit_reml<T: Real>(data: &MetaDataset<T>, sp: CovStructure, se: CovStructure) -> Result<ModelFit<T>> {
    fit_reml_with(data, sp, se, &FitOptions::default())
}

pub fn fit_reml_with<T: Real>(data: &MetaDataset<T>, sp: CovStructure, se: CovStructure, opts: &FitOptions<T>) -> Result<ModelFit<T>> {
    check_groups(data, sp, se)?;
    let design = Design::new(data, sp, se)?;
    let y = data.y();
    let resp = design.response(&y);
    let k = design.n_params();
    let objective = |th: &[T]| {
        design
            .evaluate(th, &resp)
            .map(|e| (-e.loglik, e.grad.iter().map(|&g| -g).collect::<Vec<T>>()))
    };

    let mut traces = Vec::new();
    let mut best: Option<(Vec<T>, T)> = None;
    let run = |idx: usize, x0: &[T], traces: &mut Vec<StartTrace>, best: &mut Option<(Vec<T>, T)>| {
        let Some(r) = bfgs(objective, x0, &opts.bfgs).map(|r| newton_polish(objective, r, &opts.bfgs, 6)) else {
            traces.push(StartTrace {
                start: idx,
                loglik: f64::NAN,
                grad_norm: f64::NAN,
                iterations: 0,
                converged: false,
                stop_reason: "invalid start".into(),
            });
            return;
        };
        let converged = r.converged && r.grad_norm <= opts.bfgs.stall_grad_tol;
        traces.push(StartTrace {
            start: idx,
            loglik: (-r.f).as_f64(),
            grad_norm: r.grad_norm.as_f64(),
            iterations: r.iterations,
            converged,
            stop_reason: r.stop_reason.into(),
        });
        if converged && best.as_ref().is_none_or(|(_, f)| -r.f > *f) {
            *best = Some((r.x, -r.f));
        }
    };

    let mut warm_started = false;
    if let Some(w) = &opts.warm_start {
        if w.len() != k {
            return Err(Error::Validation(format!("warm start has {} parameters, expected {k}", w.len())));
        }
        run(0, w, &mut traces, &mut best);
        warm_started = best.is_some();
    }
    if best.is_none() {
        let mut starts = default_starts(data, &design, sp, se);
        starts.extend(opts.extra_starts.iter().filter(|s| s.len() == k).cloned());
        let offset = traces.len();
        for (i, s) in starts.iter().enumerate() {
            run(offset + i, s, &mut traces, &mut best);
        }
    }
    let Some((theta, _)) = best else {
        let grad_norm = traces
            .iter()
            .map(|t| t.grad_norm)
            .filter(|g| g.is_finite())
            .fold(f64::INFINITY, f64::min);
        let trace = traces
            .iter()
            .map(|t| {
                format!(
                    "start {}: {} after {} it, |g|={:.2e}",
                    t.start, t.stop_reason, t.iterations, t.grad_norm
                )
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Convergence {
            structure: format!("{sp}/{se}"),
            grad_norm,
            trace,
        });
    };
    let eval = design
        .evaluate(&theta, &resp)
        .ok_or_else(|| Error::Design("likelihood undefined at the optimum".into()))?;
    let iterations = traces.iter().map(|t| t.iterations).sum();
    let info = ConvergenceInfo {
        converged: true,
        grad_norm: eval.grad.iter().map(|g| g.as_f64().powi(2)).sum::<f64>().sqrt(),
        iterations,
        warm_started,
        starts: traces,
    };
    Ok(assemble(data, &design, &resp, theta, eval, info))
}

fn check_groups<T: Real>(data: &MetaDataset<T>, sp: CovStructure, se: CovStructure) -> Result<()> {
    if sp != CovStructure::Absent && data.participants().len() < 2 {
        return Err(Error::Validation("participant-level effects need at least 2 participants".into()));
    }
    if se != CovStructure::Absent && data.exercises().len() < 2 {
        return Err(Error::Validation("exercise-level effects need at least 2 exercises".into()));
    }
    Ok(())
}

/// Scale-equivariant starting points: near-zero variances, moment-matched
/// variances with correlation 0 and ±0.5, and an inflated moment start.
fn default_starts<T: Real>(data: &MetaDataset<T>, design: &Design<T>, sp: CovStructure, se: CovStructure) -> Vec<Vec<T>> {
    let y = data.y();
    let n = T::from_usize_lossy(y.len());
    let mean = y.iter().copied().sum::<T>() / n;
    let var_y = y.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one()).max(T::one());
    let mean_s2 = data.rows().iter().map(|r| r.sigma2).sum::<T>() / n;
    let v = if var_y > T::zero() {
        (var_y - mean_s2).max(T::cst(0.01) * var_y)
    } else {
        mean_s2
    };
    let sd = (v / T::cst(4.0)).sqrt();
    let specs = [
        (T::cst(0.1) * sd, T::zero()),
        (sd, T::zero()),
        (sd, T::cst(0.5)),
        (sd, T::cst(-0.5)),
        (T::cst(2.0) * sd, T::zero()),
    ];
    let mut out: Vec<Vec<T>> = Vec::new();
    for (s, r) in specs {
        let mut th = level_theta(sp, s, s, r);
        th.extend(level_theta(se, s, s, r));
        debug_assert_eq!(th.len(), design.n_params());
        if !out.contains(&th) {
            out.push(th);
        }
    }
    out
}

fn assemble<T: Real>(
    data: &MetaDataset<T>,
    design: &Design<T>,
    resp: &Response<T>,
    theta: Vec<T>,
    eval: Eval<T>,
    convergence: ConvergenceInfo,
) -> ModelFit<T> {
    let p = design.p;
    let cov = eval.xvx.inverse();
    let mut beta = eval.beta.clone();
    beta[0] += resp.shift;
    let fixed_effects = (0..p)
        .map(|j| {
            let se = cov[(j, j)].sqrt();
            let z = beta[j] / se;
            FixedEffect {
                name: FIXED_EFFECT_NAMES[j].to_string(),
                est: beta[j],
                se,
                z,
                p: normal_two_sided(z.as_f64()),
            }
        })
        .collect();
    let (sp, se) = (design.levels[0].structure, design.levels[1].structure);
    let k = design.n_params();
    let n = T::from_usize_lossy(design.n);
    let penalty = T::from_usize_lossy(k + p);
    let m2l = -T::cst(2.0) * eval.loglik;
    ModelFit {
        structure_p: sp,
        structure_e: se,
        fixed_effects,
        cov_beta: (0..p).map(|i| cov.row(i).to_vec()).collect(),
        participant: LevelComponents::from_g(sp, eval.covs[0].g),
        exercise: LevelComponents::from_g(se, eval.covs[1].g),
        loglik: eval.loglik,
        aic: m2l + T::cst(2.0) * penalty,
        bic: m2l + n.ln() * penalty,
        qe: q_e(design, &data.y()),
        qm: q_m(&beta, &cov),
        n_rows: design.n,
        n_cov_params: k,
        theta,
        gradient: eval.grad.clone(),
        blup_participant: design.blups(&eval, 0),
        blup_exercise: design.blups(&eval, 1),
        convergence,
    }
}

/// Weighted residual sum of squares of the fixed-effects-only model.
fn q_e<T: Real>(design: &Design<T>, y: &[T]) -> ChiSquareTest<T> {
    let beta = wls(design, y);
    let stat: T = (0..design.n)
        .map(|i| {
            let r = y[i] - (0..design.p).map(|j| design.x[(i, j)] * beta[j]).sum::<T>();
            design.w[i] * r * r
        })
        .sum();
    let df = design.n - design.p;
    ChiSquareTest {
        stat,
        df,
        p: chi2_sf(stat.as_f64(), df as f64),
    }
}

/// Wald test of all non-intercept coefficients.
fn q_m<T: Real>(beta: &[T], cov: &Matrix<T>) -> ChiSquareTest<T> {
    let q = beta.len() - 1;
    let sub = Matrix::from_fn(q, q, |i, j| cov[(i + 1, j + 1)]);
    let b = &beta[1..];
    let stat = match Cholesky::new(&sub) {
        Some(c) => {
            let x = c.solve(b);
            b.iter().zip(&x).map(|(&u, &v)| u * v).sum()
        }
        None => T::nan(),
    };
    ChiSquareTest {
        stat,
        df: q,
        p: chi2_sf(stat.as_f64(), q as f64),
    }
}

fn wls<T: Real>(design: &Design<T>, y: &[T]) -> Vec<T> {
    let xtwy: Vec<T> = (0..design.p)
        .map(|j| (0..design.n).map(|i| design.w[i] * design.x[(i, j)] * y[i]).sum())
        .collect();
    Cholesky::new(&design.xtwx).expect("design checked full rank").solve(&xtwy)
}

/// Weighted least-squares coefficients `(XᵀWX)⁻¹XᵀWy` (the `τ → 0` limit).
pub fn weighted_least_squares<T: Real>(data: &MetaDataset<T>) -> Result<Vec<T>> {
    let design = Design::new(data, CovStructure::Absent, CovStructure::Absent)?;
    Ok(wls(&design, &data.y()))
}

/// Residual-heterogeneity and moderator tests of a fit.
pub fn q_tests<T: Real>(fit: &ModelFit<T>, data: &MetaDataset<T>) -> Result<(ChiSquareTest<T>, ChiSquareTest<T>)> {
    let design = Design::new(data, fit.structure_p, fit.structure_e)?;
    let p = design.p;
    let cov = Matrix::from_fn(p, p, |i, j| fit.cov_beta[i][j]);
    Ok((q_e(&design, &data.y()), q_m(&fit.beta(), &cov)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterBy {
    Participant,
    Exercise,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustEffect<T> {
    pub name: String,
    pub est: T,
    pub se: T,
    pub model_se: T,
    pub t: T,
    pub df: usize,
    pub p: f64,
}

/// Sandwich standard errors clustered on one grouping factor with the
/// `G/(G-1)` small-sample factor. p-values use `t(G - p)`, or the normal
/// when `G <= p`.
pub fn cluster_robust_se<T: Real>(fit: &ModelFit<T>, data: &MetaDataset<T>, by: ClusterBy) -> Result<Vec<RobustEffect<T>>> {
    let design = Design::new(data, fit.structure_p, fit.structure_e)?;
    let resp = design.response(&data.y());
    let eval = design
        .evaluate(&fit.theta, &resp)
        .ok_or_else(|| Error::Design("likelihood undefined at the reported optimum".into()))?;
    let (groups, index) = match by {
        ClusterBy::Participant => (data.participants().len(), data.participant_index()),
        ClusterBy::Exercise => (data.exercises().len(), data.exercise_index()),
    };
    if groups < 2 {
        return Err(Error::Validation(format!(
            "cluster-robust SEs need at least 2 clusters, found {groups}"
        )));
    }
    let p = design.p;
    let e = design.vinv_residual(&eval, &resp);
    let mut score = vec![vec![T::zero(); p]; groups];
    for i in 0..design.n {
        for j in 0..p {
            score[index[i]][j] += design.x[(i, j)] * e[i];
        }
    }
    let g = T::from_usize_lossy(groups);
    let adj = g / (g - T::one());
    let meat = Matrix::from_fn(p, p, |a, b| adj * score.iter().map(|s| s[a] * s[b]).sum::<T>());
    let bread = eval.xvx.inverse();
    let cov = bread.matmul(&meat).matmul(&bread);
    let df = groups.saturating_sub(p);
    Ok(fit
        .fixed_effects
        .iter()
        .enumerate()
        .map(|(j, fe)| {
            let se = cov[(j, j)].sqrt();
            let t = fe.est / se;
            let pv = if df > 0 {
                t_two_sided(t.as_f64(), df as f64)
            } else {
                normal_two_sided(t.as_f64())
            };
            RobustEffect {
                name: fe.name.clone(),
                est: fe.est,
                se,
                model_se: fe.se,
                t,
                df,
                p: pv,
            }
        })
        .collect())
}

/// Candidate covariance structures compared by information criteria.
pub const CANDIDATES: [(CovStructure, CovStructure); 5] = [
    (CovStructure::Un, CovStructure::Un),
    (CovStructure::Intercept, CovStructure::Absent),
    (CovStructure::Absent, CovStructure::Intercept),
    (CovStructure::Un, CovStructure::Intercept),
    (CovStructure::Intercept, CovStructure::Un),
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateFit<T> {
    pub structure_p: CovStructure,
    pub structure_e: CovStructure,
    /// `None` when the fit failed; see `error`.
    pub fit: Option<ModelFit<T>>,
    pub error: Option<String>,
    pub aic_rank: Option<usize>,
    pub bic_rank: Option<usize>,
}

/// Fits every candidate and ranks the successful ones by AIC and BIC
/// (1 = best). All candidates share the same fixed effects. Returned in AIC
/// order with failures last.
pub fn model_selection<T: Real>(data: &MetaDataset<T>) -> Vec<CandidateFit<T>> {
    let mut out: Vec<CandidateFit<T>> = CANDIDATES
        .iter()
        .map(|&(sp, se)| match fit_reml(data, sp, se) {
            Ok(f) => CandidateFit {
                structure_p: sp,
                structure_e: se,
                fit: Some(f),
                error: None,
                aic_rank: None,
                bic_rank: None,
            },
            Err(e) => CandidateFit {
                structure_p: sp,
                structure_e: se,
                fit: None,
                error: Some(e.to_string()),
                aic_rank: None,
                bic_rank: None,
            },
        })
        .collect();
    let rank = |out: &mut Vec<CandidateFit<T>>, key: fn(&ModelFit<T>) -> T, set: fn(&mut CandidateFit<T>, usize)| {
        let mut idx: Vec<usize> = (0..out.len()).filter(|&i| out[i].fit.is_some()).collect();
        idx.sort_by(|&a, &b| {
            let (fa, fb) = (key(out[a].fit.as_ref().unwrap()), key(out[b].fit.as_ref().unwrap()));
            fa.partial_cmp(&fb).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        for (r, i) in idx.into_iter().enumerate() {
            set(&mut out[i], r + 1);
        }
    };
    rank(&mut out, |f| f.aic, |c, r| c.aic_rank = Some(r));
    rank(&mut out, |f| f.bic, |c, r| c.bic_rank = Some(r));
    out.sort_by_key(|c| c.aic_rank.unwrap_or(usize::MAX));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticipantBlock<T> {
    pub tau_p2: T,
    pub tau_q2: Option<T>,
    pub xi: Option<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExerciseBlock<T> {
    pub tau_u2: T,
    pub tau_v2: Option<T>,
    pub rho: Option<T>,
}

/// Serialized model summary (one column of the fixed/random effects table).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelReport<T> {
    pub outcome: String,
    pub structure: String,
    pub fixed_effects: Vec<FixedEffect<T>>,
    pub participant: ParticipantBlock<T>,
    pub exercise: ExerciseBlock<T>,
    pub loglik: T,
    pub aic: T,
    pub bic: T,
    pub qe: ChiSquareTest<T>,
    pub qm: ChiSquareTest<T>,
    pub converged: bool,
    pub n_rows: usize,
}

impl<T: Real> ModelReport<T> {
    pub fn new(outcome: &str, fit: &ModelFit<T>) -> Self {
        Self {
            outcome: outcome.to_string(),
            structure: format!("{}/{}", fit.structure_p, fit.structure_e),
            fixed_effects: fit.fixed_effects.clone(),
            participant: ParticipantBlock {
                tau_p2: fit.participant.tau_intercept2,
                tau_q2: fit.participant.tau_slope2,
                xi: fit.participant.corr,
            },
            exercise: ExerciseBlock {
                tau_u2: fit.exercise.tau_intercept2,
                tau_v2: fit.exercise.tau_slope2,
                rho: fit.exercise.corr,
            },
            loglik: fit.loglik,
            aic: fit.aic,
            bic: fit.bic,
            qe: fit.qe,
            qm: fit.qm,
            converged: fit.convergence.converged,
            n_rows: fit.n_rows,
        }
    }
}

/// Restricted log-likelihood and its gradient at an arbitrary working
/// parameter vector (diagnostics and finite-difference checks).
pub fn reml_loglik<T: Real>(data: &MetaDataset<T>, sp: CovStructure, se: CovStructure, theta: &[T]) -> Result<(T, Vec<T>)> {
    let design = Design::new(data, sp, se)?;
    if theta.len() != design.n_params() {
        return Err(Error::Validation(format!(
            "expected {} parameters, got {}",
            design.n_params(),
            theta.len()
        )));
    }
    let resp = design.response(&data.y());
    design
        .evaluate(theta, &resp)
        .map(|e| (e.loglik, e.grad))
        .ok_or_else(|| Error::Domain("restricted likelihood undefined at this point".into()))
}

/// Working parameters for given level covariances (inverse of the fit's
/// parameterization). Correlations are clipped inside the admissible range.
pub fn theta_from_components<T: Real>(p: &LevelComponents<T>, e: &LevelComponents<T>) -> Vec<T> {
    let mut th = level_theta(p.structure, p.tau_intercept2.sqrt(), p.slope2_or_zero().sqrt(), p.corr_or_zero());
    th.extend(level_theta(
        e.structure,
        e.tau_intercept2.sqrt(),
        e.slope2_or_zero().sqrt(),
        e.corr_or_zero(),
    ));
    th
}

/// Lower Cholesky factor of a level's fitted covariance, from the working parameters.
pub fn level_factor<T: Real>(structure: CovStructure, theta: &[T]) -> [[T; 2]; 2] {
    level_cov(structure, theta).l
}
