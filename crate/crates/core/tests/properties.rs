use proptest::prelude::*;

use romkit::config::PipelineConfig;
use romkit::inference::{benjamini_hochberg, icc_contrasts, lrt_against, variance_contrasts, Hypothesis};
use romkit::kinematics::{joint_angle, AngleSample, AngleSeries, JointTriple, Point2, SourceMode};
use romkit::landmark_io::{read_landmarks, write_landmarks};
use romkit::meta::{fit_reml, CovStructure};
use romkit::model::{
    BodySide, ExerciseKind, Landmark, LandmarkFrame, LandmarkSeries, Lengthening, RomCondition, Sex, VideoMeta, LANDMARK_COUNT,
};
use romkit::segmentation::{detect_repetitions, detect_with, resolve_thresholds, CadenceEstimate, DetectionConfig, ResolvedThresholds};
use romkit::set_metrics::{aggregate_participant, build_dataset, summarize_video, OutcomeKind, SetSummary};
use romkit::signal::{condition, interpolate_gaps, percentile_rom, savitzky_golay, SmoothingConfig};
use romkit::synth::{generate_angle_signal, simulate_meta_dataset, DesignShape, MetaSimParams, SignalSpec};
use romkit::tables::{read_set_summaries, write_set_summaries};

fn point() -> impl Strategy<Value = Point2<f64>> {
    (-500.0..500.0f64, -500.0..500.0f64).prop_map(|(x, y)| Point2::new(x, y))
}

fn far_apart(a: Point2<f64>, b: Point2<f64>) -> bool {
    (a.x - b.x).hypot(a.y - b.y) > 1e-3
}

fn series(values: &[Option<f64>], fps: f64) -> AngleSeries<f64> {
    let samples = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let t = i as f64 / fps;
            v.map_or(AngleSample::invalid(t), |a| AngleSample::valid(t, a))
        })
        .collect();
    AngleSeries::new(samples, JointTriple::elbow(BodySide::Left), SourceMode::Mapped, fps)
}

fn angles() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::weighted(0.8, 0.0..180.0f64), 1..300)
}

fn signal_spec() -> impl Strategy<Value = SignalSpec<f64>> {
    (
        0.1..0.45f64,
        6.0..60.0f64,
        0.5..2.0f64,
        5usize..12,
        any::<bool>(),
        0.0..3.0f64,
        any::<u64>(),
    )
        .prop_map(|(cadence, amp, asym, cycles, inc, noise, seed)| {
            let mut s = SignalSpec::new(cadence, amp, 95.0, cycles as f64 / cadence, 30.0);
            s.tempo_asymmetry = asym;
            s.lengthening = if inc { Lengthening::Increase } else { Lengthening::Decrease };
            s.noise_sd = noise;
            s.seed = seed;
            s
        })
}

proptest! {
    #[test]
    fn angle_is_symmetric_and_bounded(a in point(), b in point(), c in point()) {
        prop_assume!(far_apart(a, b) && far_apart(c, b));
        let x = joint_angle(a, b, c).unwrap();
        prop_assert!((0.0..=180.0).contains(&x));
        prop_assert!((x - joint_angle(c, b, a).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn angle_ignores_similarity_transforms(
        a in point(), b in point(), c in point(),
        phi in 0.0..std::f64::consts::TAU, s in 0.05..20.0f64, tx in -1e3..1e3f64, ty in -1e3..1e3f64,
    ) {
        prop_assume!(far_apart(a, b) && far_apart(c, b));
        let (sn, cs) = phi.sin_cos();
        let tr = |q: Point2<f64>| Point2::new(s * (cs * q.x - sn * q.y) + tx, s * (sn * q.x + cs * q.y) + ty);
        let before = joint_angle(a, b, c).unwrap();
        let after = joint_angle(tr(a), tr(b), tr(c)).unwrap();
        // near-zero limbs lose digits under translation; scale the bound by conditioning
        let cond = 1.0 + 2e3 / (a.x - b.x).hypot(a.y - b.y).min((c.x - b.x).hypot(c.y - b.y));
        prop_assert!((before - after).abs() <= 1e-11 * cond, "{before} vs {after}");
    }

    #[test]
    fn coverage_is_the_valid_fraction(v in angles()) {
        let s = series(&v, 30.0);
        let valid = v.iter().filter(|x| x.is_some()).count() as f64 / v.len() as f64;
        prop_assert_eq!(s.coverage(), valid);
    }

    #[test]
    fn gap_filling_keeps_valid_samples_and_is_idempotent(v in angles(), max_gap in 0.05..3.0f64) {
        let s = series(&v, 30.0);
        let once = interpolate_gaps(&s, max_gap);
        for (a, b) in s.samples().iter().zip(once.samples()) {
            if a.is_valid() {
                prop_assert_eq!(a.angle, b.angle);
            }
        }
        prop_assert_eq!(interpolate_gaps(&once, max_gap), once);
    }

    #[test]
    fn smoothing_reproduces_quadratics(a in -5.0..5.0f64, b in -30.0..30.0f64, c in 30.0..150.0f64, n in 11usize..200) {
        let v: Vec<Option<f64>> = (0..n).map(|i| { let t = i as f64 / 30.0; Some(a * t * t + b * t + c) }).collect();
        let out = savitzky_golay(&series(&v, 30.0), &SmoothingConfig::default()).unwrap();
        for (x, y) in out.samples().iter().zip(&v) {
            prop_assert!((x.angle.unwrap() - y.unwrap()).abs() <= 1e-9);
        }
    }

    #[test]
    fn wider_percentile_bounds_never_shrink_rom(v in angles(), lo in 0.0..50.0f64, hi in 50.0..100.0f64, dl in 0.0..10.0f64, dh in 0.0..10.0f64) {
        prop_assume!(v.iter().filter(|x| x.is_some()).count() >= 2);
        let s = series(&v, 30.0);
        let narrow = SmoothingConfig { rom_low_pct: lo, rom_high_pct: hi, ..SmoothingConfig::default() };
        let wide = SmoothingConfig { rom_low_pct: (lo - dl).max(0.0), rom_high_pct: (hi + dh).min(100.0), ..narrow };
        prop_assume!(narrow.rom_low_pct < narrow.rom_high_pct);
        prop_assert!(percentile_rom(&s, &wide).unwrap() >= percentile_rom(&s, &narrow).unwrap());
    }

    #[test]
    fn repetitions_respect_every_threshold(spec in signal_spec()) {
        let sig = generate_angle_signal(&spec).unwrap();
        let smoothed = condition(&sig.series, &SmoothingConfig::default()).unwrap();
        let cfg = DetectionConfig::default();
        let d = detect_repetitions(&smoothed, &cfg, spec.lengthening);
        for w in d.troughs.windows(2) {
            prop_assert!(w[1].time - w[0].time >= d.thresholds.min_inter_trough - 1e-9);
        }
        for w in d.repetitions.windows(2) {
            prop_assert!(w[0].end_time <= w[1].start_time + 1e-12);
        }
        for r in &d.repetitions {
            prop_assert!(r.start_time < r.split_time && r.split_time < r.end_time);
            prop_assert!(r.rom >= cfg.min_rom && (r.rom - (r.peak_angle - r.trough_angle)).abs() < 1e-12);
            prop_assert!(r.concentric_duration >= cfg.min_phase_duration - 1e-9);
            prop_assert!(r.eccentric_duration >= cfg.min_phase_duration - 1e-9);
            prop_assert!((r.concentric_duration + r.eccentric_duration - r.duration).abs() < 1e-9);
            prop_assert!((r.end_time - r.start_time - r.duration).abs() < 1e-12);
        }
        prop_assert_eq!(detect_repetitions(&smoothed, &cfg, spec.lengthening), d);
    }

    #[test]
    fn higher_prominence_keeps_a_subset_of_troughs(spec in signal_spec(), p1 in 1.0..30.0f64, extra in 0.0..30.0f64) {
        let sig = generate_angle_signal(&spec).unwrap();
        let smoothed = condition(&sig.series, &SmoothingConfig::default()).unwrap();
        let base = resolve_thresholds(0.0, &CadenceEstimate { period: 0.0, confidence: 0.0 }, &DetectionConfig::default());
        let low = detect_with(&smoothed, &ResolvedThresholds { prominence: p1, ..base }, spec.lengthening);
        let high = detect_with(&smoothed, &ResolvedThresholds { prominence: p1 + extra, ..base }, spec.lengthening);
        prop_assert!(high.0.iter().all(|t| low.0.iter().any(|u| u.index == t.index)));
        // Rep counts are monotone only without spurious troughs: under noise a
        // weak trough can split one valid cycle into two rejected halves.
        if spec.noise_sd == 0.0 {
            prop_assert!(high.1.len() <= low.1.len());
        }
    }

    #[test]
    fn noiseless_rep_count_falls_with_prominence(mut spec in signal_spec(), p1 in 1.0..30.0f64, extra in 0.0..80.0f64) {
        spec.noise_sd = 0.0;
        let sig = generate_angle_signal(&spec).unwrap();
        let smoothed = condition(&sig.series, &SmoothingConfig::default()).unwrap();
        let base = resolve_thresholds(0.0, &CadenceEstimate { period: 0.0, confidence: 0.0 }, &DetectionConfig::default());
        let low = detect_with(&smoothed, &ResolvedThresholds { prominence: p1, ..base }, spec.lengthening).1;
        let high = detect_with(&smoothed, &ResolvedThresholds { prominence: p1 + extra, ..base }, spec.lengthening).1;
        prop_assert!(high.len() <= low.len());
    }

    #[test]
    fn noiseless_whole_cycles_give_the_analytic_count(mut spec in signal_spec(), amp in 6.0..60.0f64) {
        spec.noise_sd = 0.0;
        spec.amplitude = amp;
        let sig = generate_angle_signal(&spec).unwrap();
        let d = detect_repetitions(&condition(&sig.series, &SmoothingConfig::default()).unwrap(), &DetectionConfig::default(), spec.lengthening);
        prop_assert_eq!(d.repetitions.len(), sig.truth.rep_count);
    }

    #[test]
    fn summaries_never_count_trimmed_reps(spec in signal_spec()) {
        let sig = generate_angle_signal(&spec).unwrap();
        let d = detect_repetitions(&condition(&sig.series, &SmoothingConfig::default()).unwrap(), &DetectionConfig::default(), spec.lengthening);
        let curl: ExerciseKind = "Dumbbell Curl".parse().unwrap();
        if let Ok(rows) = summarize_video("P01", &curl, RomCondition::Full, Some(Sex::M), BodySide::Left, &d.repetitions) {
            for r in rows {
                prop_assert!(r.k + 2 <= d.repetitions.len());
                prop_assert!(r.sd >= 0.0 && r.mean.is_finite());
            }
        }
    }

    #[test]
    fn pooling_ignores_how_reps_split_into_videos(values in prop::collection::vec(1.0..200.0f64, 4..60), cuts in prop::collection::vec(any::<prop::sample::Index>(), 1..4)) {
        let mut bounds: Vec<usize> = cuts.iter().map(|c| 2 + c.index(values.len() - 3)).collect();
        bounds.push(0);
        bounds.push(values.len());
        bounds.sort();
        bounds.dedup();
        // every part needs two reps for a sample sd
        prop_assume!(bounds.windows(2).all(|w| w[1] - w[0] >= 2));
        let summary = |vals: &[f64]| {
            let n = vals.len() as f64;
            let m = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            SetSummary {
                participant_id: "P01".into(),
                exercise: "Flatpress".parse().unwrap(),
                rom_condition: RomCondition::Partial,
                sex: Some(Sex::F),
                outcome: OutcomeKind::RangeOfMotion,
                mean: m,
                sd,
                k: vals.len(),
                side_left_fraction: 1.0,
            }
        };
        let parts: Vec<SetSummary<f64>> = bounds.windows(2).map(|w| summary(&values[w[0]..w[1]])).collect();
        let pooled = aggregate_participant(&parts).unwrap();
        let whole = summary(&values);
        prop_assert_eq!(pooled.k, whole.k);
        prop_assert!((pooled.mean - whole.mean).abs() <= 1e-9 * whole.mean.abs().max(1.0));
        prop_assert!((pooled.sd - whole.sd).abs() <= 1e-9 * whole.sd.max(1.0));
    }

    #[test]
    fn benjamini_hochberg_is_monotone_and_conservative(p in prop::collection::vec(0.0..=1.0f64, 1..50)) {
        let adj = benjamini_hochberg(&p).unwrap();
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
        for w in order.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
        for (a, r) in adj.iter().zip(&p) {
            prop_assert!(a >= r && *a <= 1.0);
        }
    }

    // Files carry six decimals, so the generated values are chosen exactly
    // representable at that precision.
    #[test]
    fn landmark_files_round_trip(n in 1usize..20, fps in prop::sample::select(vec![10.0, 20.0, 25.0, 50.0]), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..n)
            .map(|i| {
                let mut lm = [Landmark::new(0.0, 0.0, 0.0); LANDMARK_COUNT];
                for l in lm.iter_mut() {
                    *l = Landmark::new(
                        rng.random_range(0..1_920_000) as f64 / 1000.0,
                        rng.random_range(0..1_080_000) as f64 / 1000.0,
                        rng.random_range(0..=1000) as f64 / 1000.0,
                    );
                }
                LandmarkFrame::new(i as u64, i as f64 / fps, lm)
            })
            .collect();
        let meta = VideoMeta {
            video_id: "V1".into(),
            participant_id: "P07".into(),
            exercise: "Lat Pulldown".parse().unwrap(),
            rom_condition: RomCondition::Partial,
        };
        let original = LandmarkSeries::new(meta, fps, frames).unwrap();
        let mut buf = Vec::new();
        write_landmarks(&original, &mut buf).unwrap();
        prop_assert_eq!(read_landmarks::<f64, _>(&buf[..]).unwrap(), original);
    }

    #[test]
    fn summary_tables_round_trip(rows in prop::collection::vec((0usize..5, 0usize..8, any::<bool>(), 0usize..4, 0..10_000u32, 0..1_000u32, 2usize..20), 1..30)) {
        let summaries: Vec<SetSummary<f64>> = rows
            .into_iter()
            .map(|(p, e, partial, o, mean, sd, k)| SetSummary {
                participant_id: format!("P{p:02}"),
                exercise: ExerciseKind::STUDY[e].clone(),
                rom_condition: if partial { RomCondition::Partial } else { RomCondition::Full },
                sex: None,
                outcome: OutcomeKind::MEASURED[o],
                mean: f64::from(mean) / 100.0,
                sd: f64::from(sd) / 100.0,
                k,
                side_left_fraction: 0.5,
            })
            .collect();
        let mut buf = Vec::new();
        write_set_summaries(&mut buf, &summaries).unwrap();
        prop_assert_eq!(read_set_summaries(&buf[..]).unwrap(), summaries);
    }

    #[test]
    fn config_round_trips_through_toml(window in prop::sample::select(vec![5usize, 7, 11, 15]), gap in 0.1..5.0f64, b in 1usize..5000, seed in any::<u32>()) {
        let mut cfg = PipelineConfig::default();
        cfg.signal.window_length = window;
        cfg.signal.max_gap = gap;
        cfg.model.bootstrap_b = b;
        cfg.model.seed = u64::from(seed);
        let text = toml::to_string(&cfg).unwrap();
        prop_assert_eq!(PipelineConfig::parse(&text).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn fitted_components_are_coherent(seed in any::<u64>(), rho in -0.9..0.9f64, xi in -0.9..0.9f64) {
        let params = MetaSimParams::new([3.8, -0.3, 0.2], 0.17, 0.25, xi, 0.21, 0.17, rho);
        let shape = DesignShape { participants: 10, exercises: 5, females: 3, ..DesignShape::study() };
        let sim = simulate_meta_dataset(&params, &shape, seed).unwrap();
        for r in sim.data.rows() {
            prop_assert!(r.sigma2 > 0.0 && r.sigma2.is_finite());
        }
        let fit = fit_reml(&sim.data, CovStructure::Un, CovStructure::Un).unwrap();
        for c in [fit.participant, fit.exercise] {
            prop_assert!(c.var_full() >= 0.0 && c.var_partial() >= 0.0);
            prop_assert!(c.corr_or_zero().abs() < 1.0);
        }
        let v = variance_contrasts(&fit);
        let partial = |c: &romkit::meta::LevelComponents<f64>| {
            let t1 = c.tau_slope2.unwrap_or(0.0);
            c.tau_intercept2 + t1 + 2.0 * c.corr.unwrap_or(0.0) * (c.tau_intercept2 * t1).sqrt()
        };
        prop_assert_eq!(v.d_p, partial(&fit.participant) - fit.participant.tau_intercept2);
        prop_assert_eq!(v.d_e, partial(&fit.exercise) - fit.exercise.tau_intercept2);
        let icc = icc_contrasts(&fit, &sim.data);
        for (p, e) in [(icc.icc_p_from, icc.icc_e_from), (icc.icc_p_prom, icc.icc_e_prom)] {
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&e));
            prop_assert!(p + e <= 1.0 + 1e-12);
        }
        for h in Hypothesis::ALL {
            let t = lrt_against(&sim.data, &fit, h).unwrap();
            prop_assert!(t.lambda >= 0.0 && (0.0..=1.0).contains(&t.p_value));
        }
    }

    #[test]
    fn dataset_weights_are_positive(sds in prop::collection::vec(0.0..20.0f64, 8), k in 2usize..15) {
        let mut summaries = Vec::new();
        for (i, sd) in sds.iter().enumerate() {
            for cond in [RomCondition::Full, RomCondition::Partial] {
                summaries.push(SetSummary {
                    participant_id: format!("P{}", i % 4),
                    exercise: ExerciseKind::STUDY[i / 4].clone(),
                    rom_condition: cond,
                    sex: Some(if i % 4 == 0 { Sex::F } else { Sex::M }),
                    outcome: OutcomeKind::RepDuration,
                    mean: 3.0 + i as f64 * 0.1,
                    sd: *sd,
                    k,
                    side_left_fraction: 0.0,
                });
            }
        }
        let data = build_dataset(&summaries).unwrap();
        for r in data.rows() {
            prop_assert!(r.weight() > 0.0 && r.weight().is_finite());
        }
    }
}
