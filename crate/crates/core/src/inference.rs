//! Covariance-structure LRTs, bootstrap variance contrasts and the %ROM analysis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meta::{fit_reml, fit_reml_with, level_factor, CovStructure, FitOptions, MetaDataset, ModelFit, ModelReport};
use crate::num::{percentile_sorted, sorted_copy, Real};
use crate::set_metrics::{build_log_rom_dataset, SetSummary};
use crate::stats::chi2_sf;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Exercise intercept-slope correlation is zero (UN vs DIAG).
    RhoZero,
    /// Exercise intercept and slope variances are equal (UN vs CS).
    UvEqual,
    /// Participant correlation is zero.
    XiZero,
    /// Participant intercept and slope variances are equal.
    PqEqual,
}

impl Hypothesis {
    pub const ALL: [Hypothesis; 4] = [Hypothesis::RhoZero, Hypothesis::UvEqual, Hypothesis::XiZero, Hypothesis::PqEqual];

    /// `(participant, exercise)` structures of the restricted model.
    pub fn reduced(self) -> (CovStructure, CovStructure) {
        match self {
            Hypothesis::RhoZero => (CovStructure::Un, CovStructure::Diag),
            Hypothesis::UvEqual => (CovStructure::Un, CovStructure::Cs),
            Hypothesis::XiZero => (CovStructure::Diag, CovStructure::Un),
            Hypothesis::PqEqual => (CovStructure::Cs, CovStructure::Un),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Hypothesis::RhoZero => "Λ_ρ",
            Hypothesis::UvEqual => "Λ_uv",
            Hypothesis::XiZero => "Λ_ξ",
            Hypothesis::PqEqual => "Λ_pq",
        }
    }
}

impl std::str::FromStr for Hypothesis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rho_zero" => Ok(Hypothesis::RhoZero),
            "uv_equal" => Ok(Hypothesis::UvEqual),
            "xi_zero" => Ok(Hypothesis::XiZero),
            "pq_equal" => Ok(Hypothesis::PqEqual),
            other => Err(Error::Config(format!("unknown hypothesis {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrtResult<T> {
    pub hypothesis: Hypothesis,
    pub symbol: String,
    pub lambda: T,
    pub df: usize,
    pub p_value: f64,
    pub loglik_full: T,
    pub loglik_reduced: T,
    pub reduced_structure: String,
}

/// Likelihood-ratio test of one covariance restriction against UN/UN.
pub fn lrt<T: Real>(data: &MetaDataset<T>, hypothesis: Hypothesis) -> Result<LrtResult<T>> {
    let full = fit_reml(data, CovStructure::Un, CovStructure::Un)?;
    lrt_against(data, &full, hypothesis)
}

/// As [`lrt`], reusing an existing UN/UN fit. If the restricted optimum beats
/// it, the full model is refitted from the restricted optimum embedded in the
/// UN parameterization, so `Λ ≥ 0` up to rounding.
pub fn lrt_against<T: Real>(data: &MetaDataset<T>, full: &ModelFit<T>, hypothesis: Hypothesis) -> Result<LrtResult<T>> {
    if (full.structure_p, full.structure_e) != (CovStructure::Un, CovStructure::Un) {
        return Err(Error::Validation("likelihood-ratio tests need a UN/UN full fit".into()));
    }
    let (sp, se) = hypothesis.reduced();
    let reduced = fit_reml(data, sp, se)?;
    assert_eq!(
        full.fixed_effects.iter().map(|f| &f.name).collect::<Vec<_>>(),
        reduced.fixed_effects.iter().map(|f| &f.name).collect::<Vec<_>>(),
        "nested REML fits must share fixed effects"
    );
    assert_eq!(full.n_rows, reduced.n_rows);
    let mut ll_full = full.loglik;
    if reduced.loglik > ll_full {
        let embedded = crate::meta::theta_from_components(
            &crate::meta::LevelComponents {
                structure: CovStructure::Un,
                ..reduced.participant
            },
            &crate::meta::LevelComponents {
                structure: CovStructure::Un,
                ..reduced.exercise
            },
        );
        let refit = fit_reml_with(
            data,
            CovStructure::Un,
            CovStructure::Un,
            &FitOptions {
                warm_start: Some(embedded),
                ..FitOptions::default()
            },
        )?;
        ll_full = ll_full.max(refit.loglik);
    }
    let raw = T::cst(2.0) * (ll_full - reduced.loglik);
    let lambda = raw.max(T::zero());
    Ok(LrtResult {
        hypothesis,
        symbol: hypothesis.symbol().to_string(),
        lambda,
        df: 1,
        p_value: chi2_sf(lambda.as_f64(), 1.0),
        loglik_full: ll_full,
        loglik_reduced: reduced.loglik,
        reduced_structure: format!("{sp}/{se}"),
    })
}

/// Condition-specific random-effect variances and their differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceContrasts<T> {
    pub v_p_from: T,
    pub v_p_prom: T,
    pub v_e_from: T,
    pub v_e_prom: T,
    pub d_p: T,
    pub d_e: T,
}

pub fn variance_contrasts<T: Real>(fit: &ModelFit<T>) -> VarianceContrasts<T> {
    let (pf, pp) = (fit.participant.var_full(), fit.participant.var_partial());
    let (ef, ep) = (fit.exercise.var_full(), fit.exercise.var_partial());
    VarianceContrasts {
        v_p_from: pf,
        v_p_prom: pp,
        v_e_from: ef,
        v_e_prom: ep,
        d_p: pp - pf,
        d_e: ep - ef,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IccContrasts<T> {
    pub mean_sigma2_from: T,
    pub mean_sigma2_prom: T,
    pub t_from: T,
    pub t_prom: T,
    pub icc_p_from: T,
    pub icc_p_prom: T,
    pub icc_e_from: T,
    pub icc_e_prom: T,
    pub delta_icc_p: T,
    pub delta_icc_e: T,
}

pub fn icc_contrasts<T: Real>(fit: &ModelFit<T>, data: &MetaDataset<T>) -> IccContrasts<T> {
    let v = variance_contrasts(fit);
    let (s_f, s_p) = (data.mean_sigma2(false), data.mean_sigma2(true));
    let t_f = v.v_p_from + v.v_e_from + s_f;
    let t_p = v.v_p_prom + v.v_e_prom + s_p;
    let ratio = |a: T, t: T| if t > T::zero() { a / t } else { T::zero() };
    let (pf, pp) = (ratio(v.v_p_from, t_f), ratio(v.v_p_prom, t_p));
    let (ef, ep) = (ratio(v.v_e_from, t_f), ratio(v.v_e_prom, t_p));
    IccContrasts {
        mean_sigma2_from: s_f,
        mean_sigma2_prom: s_p,
        t_from: t_f,
        t_prom: t_p,
        icc_p_from: pf,
        icc_p_prom: pp,
        icc_e_from: ef,
        icc_e_prom: ep,
        delta_icc_p: pp - pf,
        delta_icc_e: ep - ef,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    #[serde(rename = "D_p")]
    Dp,
    #[serde(rename = "D_e")]
    De,
    DeltaIccP,
    DeltaIccE,
}

impl ContrastKind {
    pub const ALL: [ContrastKind; 4] = [ContrastKind::Dp, ContrastKind::De, ContrastKind::DeltaIccP, ContrastKind::DeltaIccE];

    fn value<T: Real>(self, fit: &ModelFit<T>, data: &MetaDataset<T>) -> T {
        match self {
            ContrastKind::Dp => variance_contrasts(fit).d_p,
            ContrastKind::De => variance_contrasts(fit).d_e,
            ContrastKind::DeltaIccP => icc_contrasts(fit, data).delta_icc_p,
            ContrastKind::DeltaIccE => icc_contrasts(fit, data).delta_icc_e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContrastComponents<T> {
    #[serde(rename = "V_p_fROM")]
    pub v_p_from: T,
    #[serde(rename = "V_p_pROM")]
    pub v_p_prom: T,
    #[serde(rename = "V_e_fROM")]
    pub v_e_from: T,
    #[serde(rename = "V_e_pROM")]
    pub v_e_prom: T,
    #[serde(rename = "T_fROM")]
    pub t_from: T,
    #[serde(rename = "T_pROM")]
    pub t_prom: T,
    #[serde(rename = "mean_sigma2_fROM")]
    pub mean_sigma2_from: T,
    #[serde(rename = "mean_sigma2_pROM")]
    pub mean_sigma2_prom: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastResult<T> {
    pub kind: ContrastKind,
    pub estimate: T,
    /// `(1 + #{replicate ≤ 0}) / (B' + 1)` over the `B'` successful replicates.
    pub p_one_sided: f64,
    pub boot_replicates: usize,
    pub dropped: usize,
    pub ci_low: T,
    pub ci_high: T,
    pub components: ContrastComponents<T>,
    pub warning: Option<String>,
}

fn components<T: Real>(fit: &ModelFit<T>, data: &MetaDataset<T>) -> ContrastComponents<T> {
    let v = variance_contrasts(fit);
    let i = icc_contrasts(fit, data);
    ContrastComponents {
        v_p_from: v.v_p_from,
        v_p_prom: v.v_p_prom,
        v_e_from: v.v_e_from,
        v_e_prom: v.v_e_prom,
        t_from: i.t_from,
        t_prom: i.t_prom,
        mean_sigma2_from: i.mean_sigma2_from,
        mean_sigma2_prom: i.mean_sigma2_prom,
    }
}

/// Per-replicate generator: one ChaCha stream per replicate index.
pub fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn normal<T: Real>(rng: &mut ChaCha8Rng) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::cst(z)
}

fn draw<T: Real>(l: &[[T; 2]; 2], rng: &mut ChaCha8Rng) -> [T; 2] {
    let (z0, z1) = (normal::<T>(rng), normal::<T>(rng));
    [l[0][0] * z0, l[1][0] * z0 + l[1][1] * z1]
}

/// Effects of one level: drawn from the fitted covariance, or held at given values.
enum LevelDraw<'a, T> {
    Fitted([[T; 2]; 2]),
    Fixed(&'a [[T; 2]]),
}

/// Outcome vector simulated from a fit: `Xβ̂` plus participant effects,
/// exercise effects and residuals, drawn in that order.
fn simulate_outcome<T: Real>(
    fit: &ModelFit<T>,
    data: &MetaDataset<T>,
    participant: &LevelDraw<T>,
    exercise: &LevelDraw<T>,
    rng: &mut ChaCha8Rng,
) -> Vec<T> {
    let beta = fit.beta();
    let effects = |d: &LevelDraw<T>, groups: usize, rng: &mut ChaCha8Rng| -> Vec<[T; 2]> {
        match d {
            LevelDraw::Fitted(l) => (0..groups).map(|_| draw(l, rng)).collect(),
            LevelDraw::Fixed(v) => v.to_vec(),
        }
    };
    let pe = effects(participant, data.participants().len(), rng);
    let ee = effects(exercise, data.exercises().len(), rng);
    let (pi, ei) = (data.participant_index(), data.exercise_index());
    data.rows()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let g = if r.partial { T::one() } else { T::zero() };
            let f = if r.female { T::one() } else { T::zero() };
            let (p, e) = (pe[pi[i]], ee[ei[i]]);
            beta[0] + beta[1] * g + beta[2] * f + p[0] + p[1] * g + e[0] + e[1] * g + r.sigma2.sqrt() * normal::<T>(rng)
        })
        .collect()
}

fn fitted_factors<T: Real>(fit: &ModelFit<T>) -> ([[T; 2]; 2], [[T; 2]; 2]) {
    let (tp, te) = fit.theta.split_at(fit.structure_p.n_params());
    (level_factor(fit.structure_p, tp), level_factor(fit.structure_e, te))
}

fn refit<T: Real>(fit: &ModelFit<T>, data: &MetaDataset<T>, y: &[T]) -> Option<ModelFit<T>> {
    let opts = FitOptions {
        warm_start: Some(fit.theta.clone()),
        ..FitOptions::default()
    };
    fit_reml_with(&data.with_y(y), fit.structure_p, fit.structure_e, &opts).ok()
}

/// Parametric bootstrap of several contrasts from the same replicate refits.
/// Replicates are simulated from the fitted model itself.
pub fn bootstrap_contrasts<T: Real>(
    data: &MetaDataset<T>,
    fit: &ModelFit<T>,
    kinds: &[ContrastKind],
    b: usize,
    seed: u64,
) -> Result<Vec<ContrastResult<T>>> {
    if b == 0 {
        return Err(Error::Validation("bootstrap needs at least one replicate".into()));
    }
    let (lp, le) = fitted_factors(fit);
    let reps: Vec<Option<Vec<T>>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let y = simulate_outcome(fit, data, &LevelDraw::Fitted(lp), &LevelDraw::Fitted(le), &mut rng);
            let f = refit(fit, data, &y)?;
            Some(kinds.iter().map(|k| k.value(&f, data)).collect())
        })
        .collect();
    let ok: Vec<&Vec<T>> = reps.iter().flatten().collect();
    let dropped = b - ok.len();
    if ok.is_empty() {
        return Err(Error::Convergence {
            structure: format!("{}/{}", fit.structure_p, fit.structure_e),
            grad_norm: f64::NAN,
            trace: format!("all {b} bootstrap refits failed"),
        });
    }
    let warning = (dropped * 10 > b).then(|| format!("{dropped} of {b} bootstrap refits failed to converge and were dropped"));
    let comps = components(fit, data);
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let vals: Vec<T> = ok.iter().map(|v| v[j]).collect();
            let le0 = vals.iter().filter(|&&v| v <= T::zero()).count();
            let sorted = sorted_copy(vals.iter().copied());
            ContrastResult {
                kind,
                estimate: kind.value(fit, data),
                p_one_sided: (1 + le0) as f64 / (ok.len() + 1) as f64,
                boot_replicates: ok.len(),
                dropped,
                ci_low: percentile_sorted(&sorted, T::cst(2.5)),
                ci_high: percentile_sorted(&sorted, T::cst(97.5)),
                components: comps,
                warning: warning.clone(),
            }
        })
        .collect())
}

pub fn bootstrap_contrast<T: Real>(
    data: &MetaDataset<T>,
    fit: &ModelFit<T>,
    kind: ContrastKind,
    b: usize,
    seed: u64,
) -> Result<ContrastResult<T>> {
    Ok(bootstrap_contrasts(data, fit, &[kind], b, seed)?.remove(0))
}

/// Step-up adjusted p-values: `min_{j ≥ rank(i)} m·p_(j)/j`, capped at 1.
pub fn benjamini_hochberg(p: &[f64]) -> Result<Vec<f64>> {
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("p-value {bad} outside [0, 1]")));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].partial_cmp(&p[b]).expect("finite").then(a.cmp(&b)));
    let mut adj = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        // m·p/m is not always p in floating point
        let scaled = if rank + 1 == m { p[i] } else { p[i] * m as f64 / (rank + 1) as f64 };
        running = running.min(scaled);
        adj[i] = running.min(1.0);
    }
    Ok(adj)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExerciseRom<T> {
    pub exercise: String,
    /// `β1 + v̂_e` on the log scale.
    pub delta_e: T,
    pub pct_rom_e: T,
    pub ci_low: T,
    pub ci_high: T,
    pub p_raw: f64,
    pub p_bh: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercentRomResult<T> {
    pub overall_pct_rom: T,
    pub overall_ci_low: T,
    pub overall_ci_high: T,
    pub per_exercise: Vec<ExerciseRom<T>>,
    pub fit: ModelReport<T>,
    pub boot_replicates: usize,
    pub dropped: usize,
    pub warning: Option<String>,
}

/// %ROM from range-of-motion summaries on the log scale.
///
/// Intervals and tests for the exercise deviations come from a bootstrap
/// that holds each exercise's effects at their empirical-Bayes predictions
/// and redraws participant effects and residuals. For each exercise the
/// percentile interval of `100·exp(β1* + v̂_e*)` is reported, and the
/// two-sided p-value for `v_e = 0` is the doubled smaller tail share of
/// `{v̂_e* ≤ 0}` and `{v̂_e* ≥ 0}`, each with the `+1` correction.
pub fn percent_rom_analysis<T: Real>(summaries: &[SetSummary<T>], b: usize, seed: u64) -> Result<PercentRomResult<T>> {
    let data = build_log_rom_dataset(summaries)?;
    let fit = fit_reml(&data, CovStructure::Un, CovStructure::Un)?;
    percent_rom_from_fit(&data, &fit, b, seed)
}

pub fn percent_rom_from_fit<T: Real>(data: &MetaDataset<T>, fit: &ModelFit<T>, b: usize, seed: u64) -> Result<PercentRomResult<T>> {
    if b == 0 {
        return Err(Error::Validation("bootstrap needs at least one replicate".into()));
    }
    let hundred = T::cst(100.0);
    let beta1 = fit.slope().est;
    let (lp, _) = fitted_factors(fit);
    let held = fit.blup_exercise.clone();
    let reps: Vec<Option<(T, Vec<T>)>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = replicate_rng(seed, r);
            let y = simulate_outcome(fit, data, &LevelDraw::Fitted(lp), &LevelDraw::Fixed(&held), &mut rng);
            let f = refit(fit, data, &y)?;
            Some((f.slope().est, f.blup_exercise.iter().map(|v| v[1]).collect()))
        })
        .collect();
    let ok: Vec<&(T, Vec<T>)> = reps.iter().flatten().collect();
    let dropped = b - ok.len();
    if ok.is_empty() {
        return Err(Error::Convergence {
            structure: "UN/UN".into(),
            grad_norm: f64::NAN,
            trace: format!("all {b} bootstrap refits failed"),
        });
    }
    let nb = ok.len();
    let overall = sorted_copy(ok.iter().map(|(b1, _)| hundred * b1.exp()));
    let mut per = Vec::new();
    let mut raw = Vec::new();
    for (e, name) in data.exercises().iter().enumerate() {
        let delta = beta1 + fit.blup_exercise[e][1];
        let pct = sorted_copy(ok.iter().map(|(b1, v)| hundred * (*b1 + v[e]).exp()));
        let le = ok.iter().filter(|(_, v)| v[e] <= T::zero()).count();
        let ge = ok.iter().filter(|(_, v)| v[e] >= T::zero()).count();
        let p = (2.0 * (1 + le.min(ge)) as f64 / (nb + 1) as f64).min(1.0);
        raw.push(p);
        per.push(ExerciseRom {
            exercise: name.clone(),
            delta_e: delta,
            pct_rom_e: hundred * delta.exp(),
            ci_low: percentile_sorted(&pct, T::cst(2.5)),
            ci_high: percentile_sorted(&pct, T::cst(97.5)),
            p_raw: p,
            p_bh: 0.0,
        });
    }
    for (row, adj) in per.iter_mut().zip(benjamini_hochberg(&raw)?) {
        row.p_bh = adj;
    }
    Ok(PercentRomResult {
        overall_pct_rom: hundred * beta1.exp(),
        overall_ci_low: percentile_sorted(&overall, T::cst(2.5)),
        overall_ci_high: percentile_sorted(&overall, T::cst(97.5)),
        per_exercise: per,
        fit: ModelReport::new("log_mean_rom", fit),
        boot_replicates: nb,
        dropped,
        warning: (dropped * 10 > b).then(|| format!("{dropped} of {b} bootstrap refits failed to converge and were dropped")),
    })
}

/// LRT and contrast blocks of one outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutcomeInference<T> {
    pub outcome: String,
    pub lrt: Vec<LrtResult<T>>,
    pub contrasts: Vec<ContrastResult<T>>,
}

/// Full LRT battery and every contrast of one outcome dataset.
pub fn infer_outcome<T: Real>(outcome: &str, data: &MetaDataset<T>, b: usize, seed: u64) -> Result<OutcomeInference<T>> {
    let full = fit_reml(data, CovStructure::Un, CovStructure::Un)?;
    let lrt = Hypothesis::ALL
        .iter()
        .map(|&h| lrt_against(data, &full, h))
        .collect::<Result<Vec<_>>>()?;
    let contrasts = bootstrap_contrasts(data, &full, &ContrastKind::ALL, b, seed)?;
    Ok(OutcomeInference {
        outcome: outcome.to_string(),
        lrt,
        contrasts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport<T> {
    pub seed: u64,
    pub bootstrap_b: usize,
    pub outcomes: Vec<OutcomeInference<T>>,
    pub percent_rom: Option<PercentRomResult<T>>,
}
