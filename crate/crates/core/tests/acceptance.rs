//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p romkit-core --test acceptance`.
//!
//! `ROMKIT_DATASET_DIR` enables the checks against the original study data
//! (`set_summaries.csv`, `participants.csv`, optionally `annotations.csv`
//! and `landmarks/*.jsonl`).

use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use romkit::config::PipelineConfig;
use romkit::inference::{benjamini_hochberg, bootstrap_contrast, infer_outcome, lrt, percent_rom_analysis, ContrastKind, Hypothesis};
use romkit::kinematics::{joint_angle, AngleSample, AngleSeries, JointTriple, Point2, SourceMode};
use romkit::landmark_io::{read_landmark_file, to_canonical_string, write_landmark_file};
use romkit::meta::{fit_reml, reml_loglik, CovStructure, ModelReport};
use romkit::model::{BodySide, ExerciseKind, Lengthening, RomCondition, Sex, VideoMeta};
use romkit::pipeline::summarize_batch;
use romkit::segmentation::{
    detect_repetitions, detect_with, evaluate_against_annotations, find_troughs, resolve_thresholds, CadenceEstimate, DetectionConfig,
};
use romkit::set_metrics::{build_dataset, descriptive_table, OutcomeKind, SetSummary};
use romkit::signal::{condition, savitzky_golay, SmoothingConfig};
use romkit::synth::oracle::{dense_reml_loglik, grid_search_diag};
use romkit::synth::{
    generate_angle_signal, generate_landmark_scene, participant_id, simulate_meta_dataset, DesignShape, MetaSimParams, SignalSpec,
};
use romkit::tables::{attach_sex, read_annotations, read_participants, read_set_summaries, write_set_summaries};

enum Verdict {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    verdict: Verdict,
    detail: String,
}

fn judge(ok: bool, detail: String) -> Outcome {
    Outcome {
        verdict: if ok { Verdict::Pass } else { Verdict::Fail },
        detail,
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

// ---------------------------------------------------------------- geometry

fn angle_oracle() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let mut worst_inv = 0.0f64;
    let mut n = 0;
    while n < 10_000 {
        let mut p = || Point2::<f64>::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0));
        let (a, b, c) = (p(), p(), p());
        if (a.x - b.x).hypot(a.y - b.y) < 1.0 || (c.x - b.x).hypot(c.y - b.y) < 1.0 {
            continue;
        }
        n += 1;
        let got = joint_angle(a, b, c).unwrap();
        let (ux, uy, vx, vy) = (a.x - b.x, a.y - b.y, c.x - b.x, c.y - b.y);
        let oracle = (ux * vy - uy * vx).abs().atan2(ux * vx + uy * vy).to_degrees();
        worst = worst.max((got - oracle).abs());

        let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let s: f64 = 10f64.powf(rng.random_range(-1.0..1.0));
        let (tx, ty): (f64, f64) = (rng.random_range(-1000.0..1000.0), rng.random_range(-1000.0..1000.0));
        let (sn, cs) = phi.sin_cos();
        let tr = |q: Point2<f64>| Point2::new(s * (cs * q.x - sn * q.y) + tx, s * (sn * q.x + cs * q.y) + ty);
        let moved = joint_angle(tr(a), tr(b), tr(c)).unwrap();
        worst_inv = worst_inv.max((moved - got).abs());
    }
    let el = t0.elapsed();
    judge(
        worst <= 1e-9 && worst_inv <= 1e-9 && el < Duration::from_secs(1),
        format!("max |err| {worst:.2e} deg, invariance {worst_inv:.2e} deg, {}", secs(el)),
    )
}

// ---------------------------------------------------------------- filter

fn series_of(values: &[f64], fps: f64) -> AngleSeries<f64> {
    let samples = values
        .iter()
        .enumerate()
        .map(|(i, &v)| AngleSample::valid(i as f64 / fps, v))
        .collect();
    AngleSeries::new(samples, JointTriple::elbow(BodySide::Right), SourceMode::Mapped, fps)
}

fn values(s: &AngleSeries<f64>) -> Vec<f64> {
    s.samples().iter().map(|x| x.angle.unwrap()).collect()
}

/// Quadratic least squares on one window by normal equations, evaluated at `at`.
fn window_ls(y: &[f64], at: f64) -> f64 {
    let mut a = [[0.0f64; 4]; 3];
    for (j, &v) in y.iter().enumerate() {
        let x = j as f64 - (y.len() / 2) as f64;
        let pw = [1.0, x, x * x];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += pw[r] * pw[c];
            }
            a[r][3] += pw[r] * v;
        }
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..4 {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..3).map(|r| a[r][3] / a[r][r]).collect();
    let x = at - (y.len() / 2) as f64;
    coef[0] + coef[1] * x + coef[2] * x * x
}

fn filter_exactness() -> Outcome {
    let t0 = Instant::now();
    let cfg = SmoothingConfig::<f64>::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_quad = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(11..400);
        let (a, b, c): (f64, f64, f64) = (
            rng.random_range(-3.0..3.0),
            rng.random_range(-20.0..20.0),
            rng.random_range(20.0..160.0),
        );
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 30.0;
                a * t * t + b * t + c
            })
            .collect();
        let out = values(&savitzky_golay(&series_of(&y, 30.0), &cfg).unwrap());
        for (o, v) in out.iter().zip(&y) {
            worst_quad = worst_quad.max((o - v).abs());
        }
    }
    let mut worst_ls = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(11..400);
        let y: Vec<f64> = (0..n)
            .map(|i| 90.0 + 40.0 * (i as f64 / 17.0).sin() + 3.0 * normal(&mut rng))
            .collect();
        let out = values(&savitzky_golay(&series_of(&y, 30.0), &cfg).unwrap());
        for i in 0..n {
            let oracle = if i < 5 {
                window_ls(&y[..11], i as f64)
            } else if i + 5 >= n {
                window_ls(&y[n - 11..], (i + 11 - n) as f64)
            } else {
                window_ls(&y[i - 5..=i + 5], 5.0)
            };
            worst_ls = worst_ls.max((out[i] - oracle).abs());
        }
    }
    let el = t0.elapsed();
    judge(
        worst_quad <= 1e-9 && worst_ls <= 1e-9 && el < Duration::from_secs(5),
        format!("quadratics {worst_quad:.2e}, window LS {worst_ls:.2e}, {}", secs(el)),
    )
}

// ---------------------------------------------------------------- segmentation

fn random_spec(rng: &mut ChaCha8Rng, fps: f64) -> SignalSpec<f64> {
    let cadence = rng.random_range(0.1..=0.45);
    let peak_to_peak = rng.random_range(12.0..=120.0);
    // Whole cycles, so the clip ends near a peak and every analytic trough has
    // both flanks inside the span.
    let cycles = rng.random_range(5..=15) as f64;
    let mut spec = SignalSpec::new(cadence, peak_to_peak / 2.0, 95.0, cycles / cadence, fps);
    spec.tempo_asymmetry = rng.random_range(0.5..=2.0);
    spec.lengthening = if rng.random_bool(0.5) {
        Lengthening::Increase
    } else {
        Lengthening::Decrease
    };
    spec.seed = rng.random();
    spec
}

fn segmentation_exactness() -> Outcome {
    let t0 = Instant::now();
    let fps = 30.0;
    let smooth = SmoothingConfig::default();
    let det = DetectionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut exact, mut worst_rom, mut worst_phase) = (0, 0.0f64, 0.0f64);
    let mut exact_noisy = 0;
    for _ in 0..200 {
        let spec = random_spec(&mut rng, fps);
        let sig = generate_angle_signal(&spec).unwrap();
        let d = detect_repetitions(&condition(&sig.series, &smooth).unwrap(), &det, spec.lengthening);
        if d.repetitions.len() == sig.truth.rep_count {
            exact += 1;
            for (r, t) in d.repetitions.iter().zip(&sig.truth.reps) {
                worst_rom = worst_rom.max((r.rom - t.rom).abs());
                worst_phase = worst_phase
                    .max((r.eccentric_duration - t.eccentric_duration).abs() * fps)
                    .max((r.concentric_duration - t.concentric_duration).abs() * fps);
            }
        }
        let mut noisy = spec.clone();
        noisy.noise_sd = 2.0;
        let sig = generate_angle_signal(&noisy).unwrap();
        let d = detect_repetitions(&condition(&sig.series, &smooth).unwrap(), &det, spec.lengthening);
        exact_noisy += usize::from(d.repetitions.len() == sig.truth.rep_count);
    }
    let el = t0.elapsed();
    judge(
        exact == 200 && worst_rom <= 1.0 && worst_phase <= 2.0 && exact_noisy >= 190 && el < Duration::from_secs(30),
        format!(
            "noiseless exact {exact}/200, max ROM err {worst_rom:.3} deg, max phase err {worst_phase:.2} frames; noisy exact {exact_noisy}/200; {}",
            secs(el)
        ),
    )
}

fn threshold_behavior() -> Outcome {
    let fps = 30.0;
    let smooth = SmoothingConfig::default();
    let det = DetectionConfig::default();
    let mut notes = Vec::new();
    let mut ok = true;

    // ROM floor: 8 deg peak-to-peak never counts, 12 deg does.
    for (ptp, want_reps) in [(8.0, false), (12.0, true)] {
        let spec = SignalSpec::new(0.3, ptp / 2.0, 95.0, 40.0, fps);
        let sig = generate_angle_signal(&spec).unwrap();
        let d = detect_repetitions(&condition(&sig.series, &smooth).unwrap(), &det, spec.lengthening);
        let good = if want_reps {
            d.repetitions.len() == sig.truth.rep_count
        } else {
            d.repetitions.is_empty()
        };
        ok &= good;
        notes.push(format!("{ptp} deg -> {} reps", d.repetitions.len()));
    }

    // Phase floor, on the unsmoothed signal with the default thresholds.
    let fixed = resolve_thresholds(
        40.0,
        &CadenceEstimate {
            period: 0.0,
            confidence: 0.0,
        },
        &det,
    );
    for (short, want_reps) in [(0.25, false), (0.40, true)] {
        let period: f64 = 2.5;
        let mut spec = SignalSpec::new(1.0 / period, 20.0, 95.0, 30.0, fps);
        spec.tempo_asymmetry = (period - short) / short;
        let sig = generate_angle_signal(&spec).unwrap();
        let (_, reps) = detect_with(&sig.series, &fixed, spec.lengthening);
        let good = if want_reps {
            reps.len() == sig.truth.rep_count
        } else {
            reps.is_empty()
        };
        ok &= good;
        notes.push(format!("{short}s phase -> {} reps", reps.len()));
    }

    // Trough spacing: dips 1.5 s apart merge into the deeper one.
    let mut y = vec![100.0; 12 * 30];
    for (centre, depth) in [(3.0, 30.0), (4.5, 40.0), (8.0, 35.0), (10.1, 35.0)] {
        for (i, v) in y.iter_mut().enumerate() {
            let t = i as f64 / fps;
            let d = (t - centre as f64).abs();
            if d < 0.5 {
                *v -= depth * (1.0 + (std::f64::consts::PI * d / 0.5).cos()) / 2.0;
            }
        }
    }
    let troughs = find_troughs(&series_of(&y, fps), 5.0, 2.0);
    let times: Vec<f64> = troughs.iter().map(|t| t.time).collect();
    let merged = times.len() == 3 && (times[0] - 4.5).abs() < 1e-9 && (times[1] - 8.0).abs() < 1e-9 && (times[2] - 10.1).abs() < 1e-9;
    ok &= merged;
    notes.push(format!("troughs at {times:?}"));

    // Fast cadence: every accepted pair is at least 2 s apart.
    let spec = SignalSpec::new(0.6, 30.0, 95.0, 40.0, fps);
    let sig = generate_angle_signal(&spec).unwrap();
    let d = detect_repetitions(&condition(&sig.series, &smooth).unwrap(), &det, spec.lengthening);
    let min_gap = d.troughs.windows(2).map(|w| w[1].time - w[0].time).fold(f64::INFINITY, f64::min);
    ok &= min_gap >= 2.0 - 1e-9 && d.troughs.len() < sig.truth.trough_times.len();
    notes.push(format!("0.6 Hz min trough gap {min_gap:.3}s"));

    judge(ok, notes.join("; "))
}

// ---------------------------------------------------------------- REML

fn reml_oracle() -> Outcome {
    let t0 = Instant::now();
    let shape = DesignShape {
        participants: 3,
        exercises: 2,
        females: 1,
        sigma2: vec![0.02, 0.05, 0.03, 0.08],
    };
    let mut worst = 0.0f64;
    let mut failures = 0;
    for s in 0..20u64 {
        let params = MetaSimParams::new([3.8, -0.3, 0.2], 0.17, 0.25, 0.0, 0.21, 0.17, 0.0);
        let sim = simulate_meta_dataset(&params, &shape, 700 + s).unwrap();
        let Ok(fit) = fit_reml(&sim.data, CovStructure::Diag, CovStructure::Diag) else {
            failures += 1;
            continue;
        };
        let at_fit = dense_reml_loglik(&sim.data, fit.participant.matrix(), fit.exercise.matrix()).unwrap();
        let grid = grid_search_diag(&sim.data, 9, 40);
        worst = worst.max((at_fit - grid.loglik).abs()).max((fit.loglik - at_fit).abs());
    }
    let el = t0.elapsed();
    judge(
        failures == 0 && worst <= 1e-4 && el < Duration::from_secs(120),
        format!(
            "20 instances of 12 rows, max |loglik gap| {worst:.2e}, fit failures {failures}, {}",
            secs(el)
        ),
    )
}

fn reml_recovery() -> Outcome {
    let t0 = Instant::now();
    let params = MetaSimParams::<f64>::rep_duration();
    let shape = DesignShape::study();
    let (mut covered, mut fitted) = (0, 0);
    let (mut worst_grad, mut worst_fd) = (0.0f64, 0.0f64);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for s in 0..200u64 {
        let sim = simulate_meta_dataset(&params, &shape, 10_000 + s).unwrap();
        let Ok(fit) = fit_reml(&sim.data, CovStructure::Un, CovStructure::Un) else {
            continue;
        };
        fitted += 1;
        let b1 = fit.slope();
        covered += usize::from((b1.est - params.beta[1]).abs() <= 1.959_963_984_540_054 * b1.se);
        worst_grad = worst_grad.max(fit.convergence.grad_norm);

        // Finite differences away from the optimum, where the gradient is not ~0.
        if s % 10 == 0 {
            let theta: Vec<f64> = fit.theta.iter().map(|t| t + 0.2 * normal(&mut rng)).collect();
            let (_, g) = reml_loglik(&sim.data, CovStructure::Un, CovStructure::Un, &theta).unwrap();
            let scale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for j in 0..theta.len() {
                let h = 1e-5;
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[j] += h;
                dn[j] -= h;
                let lu = reml_loglik(&sim.data, CovStructure::Un, CovStructure::Un, &up).unwrap().0;
                let ld = reml_loglik(&sim.data, CovStructure::Un, CovStructure::Un, &dn).unwrap().0;
                worst_fd = worst_fd.max(((lu - ld) / (2.0 * h) - g[j]).abs() / scale);
            }
        }
    }
    let el = t0.elapsed();
    let rate = covered as f64 / fitted.max(1) as f64;
    judge(
        fitted == 200 && rate >= 0.90 && worst_grad <= 1e-5 && worst_fd <= 1e-3 && el < Duration::from_secs(600),
        format!(
            "beta1 coverage {covered}/{fitted} ({:.1}%), max grad norm {worst_grad:.2e}, FD rel err {worst_fd:.2e}, {}",
            100.0 * rate,
            secs(el)
        ),
    )
}

fn test_size() -> Outcome {
    let t0 = Instant::now();
    let shape = DesignShape::study();
    let lrt_null = MetaSimParams::new([3.831, -0.303, 0.220], 0.169, 0.254, 0.759, 0.209, 0.172, 0.0);
    let (mut lrt_rej, mut lrt_n) = (0, 0);
    for s in 0..500u64 {
        let sim = simulate_meta_dataset(&lrt_null, &shape, 1000 + s).unwrap();
        if let Ok(r) = lrt(&sim.data, Hypothesis::RhoZero) {
            lrt_n += 1;
            lrt_rej += usize::from(r.p_value < 0.05);
        }
    }
    let lrt_time = t0.elapsed();
    // D_p = 0 at tau_q = 0 with no participant correlation.
    let boot_null = MetaSimParams::new([3.831, -0.303, 0.220], 0.169, 0.0, 0.0, 0.209, 0.172, 0.846);
    let (mut boot_rej, mut boot_n) = (0, 0);
    for s in 0..200u64 {
        let sim = simulate_meta_dataset(&boot_null, &shape, 5000 + s).unwrap();
        let Ok(fit) = fit_reml(&sim.data, CovStructure::Un, CovStructure::Un) else {
            continue;
        };
        if let Ok(r) = bootstrap_contrast(&sim.data, &fit, ContrastKind::Dp, 199, s) {
            boot_n += 1;
            boot_rej += usize::from(r.p_one_sided < 0.05);
        }
    }
    let el = t0.elapsed();
    let lrt_rate = lrt_rej as f64 / lrt_n.max(1) as f64;
    let boot_rate = boot_rej as f64 / boot_n.max(1) as f64;
    let band = |r: f64| (0.025..=0.075).contains(&r);
    judge(
        lrt_n == 500 && boot_n == 200 && band(lrt_rate) && band(boot_rate) && el < Duration::from_secs(1200),
        format!(
            "LRT rho_zero {lrt_rej}/{lrt_n} = {:.1}% ({}), bootstrap D_p {boot_rej}/{boot_n} = {:.1}%; target [2.5%, 7.5%]; {}",
            100.0 * lrt_rate,
            secs(lrt_time),
            100.0 * boot_rate,
            secs(el)
        ),
    )
}

// ---------------------------------------------------------------- %ROM and BH

/// pROM means are `ratio` times the fROM means, sds scaled alike. `jitter`
/// adds exercise and cell deviations to the log ratio.
fn rom_summaries(scale: f64, jitter: f64) -> Vec<SetSummary<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let exercise_shift: Vec<f64> = (0..8).map(|_| jitter * normal(&mut rng)).collect();
    let mut out = Vec::new();
    for i in 0..12 {
        let sex = if i < 4 { Sex::F } else { Sex::M };
        for (e, ex) in ExerciseKind::STUDY.iter().enumerate() {
            let full: f64 = rng.random_range(80.0..140.0);
            let sd: f64 = rng.random_range(4.0..15.0);
            let ratio = 0.5 * (exercise_shift[e] + 0.5 * jitter * normal(&mut rng)).exp();
            for (cond, f) in [(RomCondition::Full, 1.0), (RomCondition::Partial, ratio)] {
                out.push(SetSummary {
                    participant_id: participant_id(i),
                    exercise: ex.clone(),
                    rom_condition: cond,
                    sex: Some(sex),
                    outcome: OutcomeKind::RangeOfMotion,
                    mean: scale * f * full,
                    sd: scale * f * sd,
                    k: 6,
                    side_left_fraction: 1.0,
                });
            }
        }
    }
    out
}

fn percent_rom_identity() -> Outcome {
    let t0 = Instant::now();
    let half = percent_rom_analysis(&rom_summaries(1.0, 0.0), 199, 6).unwrap();
    // Scale invariance on data with real exercise deviations. In the exact
    // half dataset every v_e is zero and the bootstrap signs are rounding noise.
    let base = percent_rom_analysis(&rom_summaries(1.0, 0.3), 199, 6).unwrap();
    let scaled = percent_rom_analysis(&rom_summaries(3.0, 0.3), 199, 6).unwrap();
    let mut diff = (base.overall_pct_rom - scaled.overall_pct_rom)
        .abs()
        .max((base.overall_ci_low - scaled.overall_ci_low).abs())
        .max((base.overall_ci_high - scaled.overall_ci_high).abs());
    for (a, b) in base.per_exercise.iter().zip(&scaled.per_exercise) {
        for (x, y) in [
            (a.delta_e, b.delta_e),
            (a.pct_rom_e, b.pct_rom_e),
            (a.ci_low, b.ci_low),
            (a.ci_high, b.ci_high),
            (a.p_raw, b.p_raw),
            (a.p_bh, b.p_bh),
        ] {
            diff = diff.max((x - y).abs());
        }
    }
    for (a, b) in base.fit.fixed_effects.iter().zip(&scaled.fit.fixed_effects).skip(1) {
        diff = diff.max((a.est - b.est).abs()).max((a.se - b.se).abs());
    }
    judge(
        (half.overall_pct_rom - 50.0).abs() <= 0.1 && diff <= 1e-6,
        format!(
            "half-ROM %ROM {:.4}, max change under x3 scaling {diff:.2e}, {}",
            half.overall_pct_rom,
            secs(t0.elapsed())
        ),
    )
}

/// O(m²) step-up: for each p_i the smallest m·p_k/r_k over p_k ≥ p_i, where
/// r_k counts the p-values not above p_k.
fn bh_oracle(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    p.iter()
        .map(|&pi| {
            p.iter()
                .filter(|&&pk| pk >= pi)
                .map(|&pk| {
                    let r = p.iter().filter(|&&pl| pl <= pk).count();
                    if r == m {
                        pk
                    } else {
                        pk * m as f64 / r as f64
                    }
                })
                .fold(1.0f64, f64::min)
        })
        .collect()
}

fn bh_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for v in 0..1000 {
        let m = rng.random_range(1..=40);
        let p: Vec<f64> = (0..m)
            .map(|_| {
                let x: f64 = rng.random::<f64>().powi(3);
                // every other vector has ties
                if v % 2 == 0 {
                    (x * 50.0).round() / 50.0
                } else {
                    x
                }
            })
            .collect();
        if benjamini_hochberg(&p).unwrap() != bh_oracle(&p) {
            mismatches += 1;
        }
    }
    judge(mismatches == 0, format!("{mismatches}/1000 vectors differ from the step-up oracle"))
}

// ---------------------------------------------------------------- determinism

fn fixture_scenes(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut paths = Vec::new();
    let mut n = 0u64;
    for i in 0..5 {
        for (e, ex) in ExerciseKind::STUDY.iter().take(3).enumerate() {
            for cond in [RomCondition::Full, RomCondition::Partial] {
                let j = (i * 3 + e) as f64;
                let amp = if cond.is_partial() {
                    24.0 + 2.0 * (j % 3.0)
                } else {
                    44.0 + 3.0 * (j % 4.0)
                };
                let mut spec = SignalSpec::new(0.22 + 0.02 * (j % 3.0), amp, 95.0, 36.0, 15.0);
                spec.tempo_asymmetry = 0.8 + 0.2 * (j % 3.0);
                spec.noise_sd = 0.5;
                spec.side = if (i + e) % 2 == 0 { BodySide::Left } else { BodySide::Right };
                spec.joint = ex.default_joint();
                spec.lengthening = ex.lengthening();
                spec.seed = 900 + n;
                n += 1;
                let meta = VideoMeta {
                    video_id: format!("{}_{}_{}", participant_id(i), e, cond.as_str()),
                    participant_id: participant_id(i),
                    exercise: ex.clone(),
                    rom_condition: cond,
                };
                let (scene, _) = generate_landmark_scene(&spec, meta.clone()).unwrap();
                let path = dir.join(format!("{}.landmarks.jsonl", meta.video_id));
                write_landmark_file(&scene, &path).unwrap();
                paths.push(path);
            }
        }
    }
    paths
}

/// Landmark files to summaries to fits, inference and %ROM; every artifact
/// serialized into one byte string.
fn full_pipeline(dir: &Path) -> Vec<u8> {
    let cfg = PipelineConfig::default();
    let joints = cfg.joint_map().unwrap();
    let videos: Vec<_> = fixture_scenes(dir).iter().map(|p| read_landmark_file::<f64>(p).unwrap()).collect();
    let sexes: BTreeMap<String, Sex> = (0..5).map(|i| (participant_id(i), if i == 0 { Sex::F } else { Sex::M })).collect();
    let batch = summarize_batch(&videos, &cfg, &joints, Some(&sexes)).unwrap();
    assert!(batch.failures.is_empty());
    let mut bytes = Vec::new();
    for v in &videos {
        bytes.extend(to_canonical_string(v).unwrap().into_bytes());
    }
    write_set_summaries(&mut bytes, &batch.summaries).unwrap();
    for outcome in [OutcomeKind::RepDuration, OutcomeKind::RangeOfMotion] {
        let rows: Vec<_> = batch.summaries.iter().filter(|s| s.outcome == outcome).cloned().collect();
        let data = build_dataset(&rows).unwrap();
        let fit = fit_reml(&data, CovStructure::Un, CovStructure::Un).unwrap();
        bytes.extend(serde_json::to_vec(&ModelReport::new(outcome.as_str(), &fit)).unwrap());
        let inf = infer_outcome(outcome.as_str(), &data, 49, 11).unwrap();
        bytes.extend(serde_json::to_vec(&inf).unwrap());
    }
    let rom: Vec<_> = batch
        .summaries
        .iter()
        .filter(|s| s.outcome == OutcomeKind::RangeOfMotion)
        .cloned()
        .collect();
    let pct = percent_rom_analysis(&rom, 49, 11).unwrap();
    bytes.extend(serde_json::to_vec(&pct).unwrap());
    bytes
}

fn determinism() -> Outcome {
    let t0 = Instant::now();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = full_pipeline(a.path());
    let second = full_pipeline(b.path());
    judge(
        first == second,
        format!(
            "two runs, {} bytes each, identical: {}, {}",
            first.len(),
            first == second,
            secs(t0.elapsed())
        ),
    )
}

// ---------------------------------------------------------------- original data

struct ReportedCell {
    exercise: &'static str,
    rom_f: f64,
    dur_f: f64,
    rom_p: f64,
    dur_p: f64,
}

const REPORTED_DESCRIPTIVES: [ReportedCell; 8] = [
    ReportedCell {
        exercise: "Bayesian Curl",
        rom_f: 100.92,
        dur_f: 4.52,
        rom_p: 88.28,
        dur_p: 3.81,
    },
    ReportedCell {
        exercise: "Cable Pushdown",
        rom_f: 112.61,
        dur_f: 4.32,
        rom_p: 78.91,
        dur_p: 3.92,
    },
    ReportedCell {
        exercise: "Dumbbell Curl",
        rom_f: 127.65,
        dur_f: 4.32,
        rom_p: 91.93,
        dur_p: 4.31,
    },
    ReportedCell {
        exercise: "Dumbbell Overhead Extension",
        rom_f: 127.86,
        dur_f: 4.01,
        rom_p: 110.07,
        dur_p: 4.03,
    },
    ReportedCell {
        exercise: "Dumbbell Row",
        rom_f: 96.53,
        dur_f: 3.70,
        rom_p: 74.89,
        dur_p: 3.44,
    },
    ReportedCell {
        exercise: "Flatpress",
        rom_f: 125.16,
        dur_f: 3.58,
        rom_p: 86.78,
        dur_p: 3.24,
    },
    ReportedCell {
        exercise: "Incline Press",
        rom_f: 115.51,
        dur_f: 3.44,
        rom_p: 57.72,
        dur_p: 3.29,
    },
    ReportedCell {
        exercise: "Lat Pulldown",
        rom_f: 118.80,
        dur_f: 3.80,
        rom_p: 92.38,
        dur_p: 3.92,
    },
];

/// Reported pROM slope significance: 3 = p < 0.001, 2 = p < 0.01, 1 = p < 0.05, 0 = n.s.
const REPORTED_SLOPE_STARS: [(OutcomeKind, u8); 4] = [
    (OutcomeKind::RepDuration, 2),
    (OutcomeKind::EccentricDuration, 1),
    (OutcomeKind::ConcentricDuration, 0),
    (OutcomeKind::RangeOfMotion, 3),
];

fn stars(p: f64) -> u8 {
    match p {
        p if p < 0.001 => 3,
        p if p < 0.01 => 2,
        p if p < 0.05 => 1,
        _ => 0,
    }
}

fn original_dataset(dir: &Path) -> Outcome {
    let open = |name: &str| std::fs::File::open(dir.join(name));
    let run = || -> Result<Outcome, Box<dyn std::error::Error>> {
        let sexes = read_participants(open("participants.csv")?)?;
        let mut summaries = read_set_summaries(open("set_summaries.csv")?)?;
        attach_sex(&mut summaries, &sexes)?;
        let mut notes = Vec::new();
        let mut ok = true;

        let table = descriptive_table(&summaries)?;
        let mut worst = 0.0f64;
        for cell in &REPORTED_DESCRIPTIVES {
            let name = cell.exercise.parse::<ExerciseKind>()?.name().to_string();
            for (cond, rom, dur) in [
                (RomCondition::Full, cell.rom_f, cell.dur_f),
                (RomCondition::Partial, cell.rom_p, cell.dur_p),
            ] {
                let row = table
                    .iter()
                    .find(|r| r.exercise == name && r.rom_condition == cond)
                    .ok_or("missing cell")?;
                for (kind, want) in [(OutcomeKind::RangeOfMotion, rom), (OutcomeKind::RepDuration, dur)] {
                    let got = row.outcomes.get(&kind).ok_or("missing outcome")?.mean;
                    worst = worst.max((got - want).abs() / want);
                }
            }
        }
        ok &= worst <= 0.05;
        notes.push(format!("descriptives worst rel err {:.1}%", 100.0 * worst));

        for (kind, want) in REPORTED_SLOPE_STARS {
            let rows: Vec<_> = summaries.iter().filter(|s| s.outcome == kind).cloned().collect();
            let fit = fit_reml(&build_dataset(&rows)?, CovStructure::Un, CovStructure::Un)?;
            let b1 = fit.slope();
            let good = b1.est < 0.0 && stars(b1.p) == want;
            ok &= good;
            notes.push(format!("{} beta1 {:.3} p {:.4}", kind.as_str(), b1.est, b1.p));
        }

        let rom: Vec<_> = summaries
            .iter()
            .filter(|s| s.outcome == OutcomeKind::RangeOfMotion)
            .cloned()
            .collect();
        let pct = percent_rom_analysis(&rom, 2000, 20240601)?;
        let flagged: Vec<&str> = pct
            .per_exercise
            .iter()
            .filter(|e| e.p_bh < 0.05)
            .map(|e| e.exercise.as_str())
            .collect();
        ok &= (50.0..=62.0).contains(&pct.overall_pct_rom) && flagged == [ExerciseKind::InclinePress.name()];
        notes.push(format!("%ROM {:.1}, BH-flagged {flagged:?}", pct.overall_pct_rom));

        let landmarks = dir.join("landmarks");
        if dir.join("annotations.csv").exists() && landmarks.is_dir() {
            let annotations = read_annotations(open("annotations.csv")?)?;
            let cfg = PipelineConfig::default();
            let joints = cfg.joint_map()?;
            let mut predictions = Vec::new();
            for a in &annotations {
                let path = landmarks.join(format!("{}.jsonl", a.video_id));
                let video = read_landmark_file::<f64>(&path)?;
                predictions.push(romkit::pipeline::analyze_video(&video, &cfg, &joints)?.outcome());
            }
            let rep = evaluate_against_annotations(&predictions, &annotations)?;
            ok &= rep.side_accuracy >= 0.90 && rep.within_two_fraction >= 0.80;
            notes.push(format!(
                "side {:.1}%, within 2 reps {:.1}%",
                100.0 * rep.side_accuracy,
                100.0 * rep.within_two_fraction
            ));
        } else {
            ok = false;
            notes.push("annotations.csv or landmarks/ missing".into());
        }
        Ok(judge(ok, notes.join("; ")))
    };
    run().unwrap_or_else(|e| judge(false, format!("error: {e}")))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let mut criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("angle oracle", Box::new(angle_oracle)),
        ("filter exactness", Box::new(filter_exactness)),
        ("segmentation exactness", Box::new(segmentation_exactness)),
        ("threshold behavior", Box::new(threshold_behavior)),
        ("REML oracle equivalence", Box::new(reml_oracle)),
        ("REML recovery", Box::new(reml_recovery)),
        ("%ROM identity", Box::new(percent_rom_identity)),
        ("BH correctness", Box::new(bh_correctness)),
        ("determinism", Box::new(determinism)),
        ("test size", Box::new(test_size)),
    ];
    criteria.push((
        "original dataset",
        Box::new(|| match std::env::var_os("ROMKIT_DATASET_DIR") {
            Some(dir) => original_dataset(Path::new(&dir)),
            None => Outcome {
                verdict: Verdict::Skip,
                detail: "ROMKIT_DATASET_DIR not set".into(),
            },
        }),
    ));
    // `cargo test` passes harness flags such as `--nocapture`; only a bare
    // word filters criteria.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in &criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let out = run();
        let tag = match out.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => {
                failed += 1;
                "FAIL"
            }
            Verdict::Skip => "SKIP",
        };
        println!("{tag} {name}: {}", out.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
