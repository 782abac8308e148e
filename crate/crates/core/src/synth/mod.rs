//! Synthetic signals, landmark scenes and meta-regression datasets with
//! known ground truth, plus brute-force oracles.

pub mod oracle;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{AngleSample, AngleSeries, JointTriple, SourceMode};
use crate::meta::{MetaDataset, MetaRow};
use std::collections::BTreeMap;

use crate::model::{
    landmark, BodySide, ExerciseKind, JointKind, Landmark, LandmarkFrame, LandmarkSeries, Lengthening, RomCondition, Sex, VideoMeta,
    LANDMARK_COUNT,
};
use crate::num::Real;
use crate::set_metrics::{OutcomeKind, SetSummary};

/// Interval `[start, end)` in seconds during which the listed landmarks are
/// hidden. An empty list hides the focal joint's three landmarks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionWindow<T> {
    pub start: T,
    pub end: T,
    #[serde(default)]
    pub landmarks: Vec<usize>,
}

/// Periodic joint-angle waveform. Each cycle starts at a peak
/// (`baseline + amplitude`), falls to a trough and rises back, with both
/// segments half-cosines so the curve is smooth at the joins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>"))]
pub struct SignalSpec<T> {
    /// Cycles per second.
    pub cadence: T,
    /// Half the peak-to-trough excursion, degrees.
    pub amplitude: T,
    pub baseline: T,
    pub duration: T,
    pub fps: T,
    #[serde(default = "zero")]
    pub noise_sd: T,
    #[serde(default)]
    pub occlusion_windows: Vec<OcclusionWindow<T>>,
    /// Eccentric over concentric duration.
    #[serde(default = "one")]
    pub tempo_asymmetry: T,
    #[serde(default = "default_lengthening")]
    pub lengthening: Lengthening,
    #[serde(default = "default_joint")]
    pub joint: JointKind,
    #[serde(default = "default_side")]
    pub side: BodySide,
    #[serde(default)]
    pub seed: u64,
}

fn zero<T: Real>() -> T {
    T::zero()
}
fn one<T: Real>() -> T {
    T::one()
}
fn default_lengthening() -> Lengthening {
    Lengthening::Increase
}
fn default_joint() -> JointKind {
    JointKind::Elbow
}
fn default_side() -> BodySide {
    BodySide::Right
}

impl<T: Real> SignalSpec<T> {
    pub fn new(cadence: T, amplitude: T, baseline: T, duration: T, fps: T) -> Self {
        Self {
            cadence,
            amplitude,
            baseline,
            duration,
            fps,
            noise_sd: T::zero(),
            occlusion_windows: Vec::new(),
            tempo_asymmetry: T::one(),
            lengthening: Lengthening::Increase,
            joint: JointKind::Elbow,
            side: BodySide::Right,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("signal spec: {m}")));
        if !(self.amplitude >= T::zero()) {
            return bad("amplitude must be non-negative");
        }
        if !(self.fps > T::zero()) {
            return bad("fps must be positive");
        }
        if !(self.cadence > T::zero()) {
            return bad("cadence must be positive");
        }
        if !(self.duration > T::zero()) {
            return bad("duration must be positive");
        }
        if !(self.noise_sd >= T::zero()) {
            return bad("noise_sd must be non-negative");
        }
        if !(self.tempo_asymmetry > T::zero()) {
            return bad("tempo_asymmetry must be positive");
        }
        for w in &self.occlusion_windows {
            if !(w.start >= T::zero() && w.end <= self.duration && w.start < w.end) {
                return bad("occlusion window outside the signal duration");
            }
            if w.landmarks.iter().any(|&l| l >= LANDMARK_COUNT) {
                return bad("occlusion landmark index out of range");
            }
        }
        Ok(())
    }

    pub fn period(&self) -> T {
        T::one() / self.cadence
    }

    /// Durations of the (falling, rising) half-cycles.
    pub fn half_periods(&self) -> (T, T) {
        let p = self.period();
        let r = self.tempo_asymmetry;
        let ecc = p * r / (T::one() + r);
        let con = p - ecc;
        match self.lengthening {
            // eccentric phase is the rising half
            Lengthening::Increase => (con, ecc),
            Lengthening::Decrease => (ecc, con),
        }
    }

    /// Noise-free angle at time `t`.
    pub fn clean_angle(&self, t: T) -> T {
        let (fall, rise) = self.half_periods();
        let p = fall + rise;
        let s = t - (t / p).floor() * p;
        let pi = T::PI();
        if s < fall {
            self.baseline + self.amplitude * (pi * s / fall).cos()
        } else {
            self.baseline - self.amplitude * (pi * (s - fall) / rise).cos()
        }
    }

    pub fn sample_count(&self) -> usize {
        (self.duration * self.fps).floor().to_usize().unwrap_or(0).max(1)
    }

    fn occluded_at(&self, t: T, joint: &JointTriple) -> bool {
        self.occlusion_windows.iter().any(|w| {
            t >= w.start
                && t < w.end
                && (w.landmarks.is_empty()
                    || w.landmarks
                        .iter()
                        .any(|&l| l == joint.proximal || l == joint.center || l == joint.distal))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruthRep<T> {
    pub start_time: T,
    pub end_time: T,
    pub rom: T,
    pub eccentric_duration: T,
    pub concentric_duration: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SignalTruth<T> {
    pub rep_count: usize,
    pub reps: Vec<TruthRep<T>>,
    pub trough_times: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSignal<T> {
    pub series: AngleSeries<T>,
    /// Noise-free values at the sample times.
    pub clean: Vec<T>,
    /// Values actually emitted (clean plus noise), before occlusion.
    pub noisy: Vec<T>,
    pub truth: SignalTruth<T>,
}

/// Analytic repetitions: complete trough-to-trough intervals inside the
/// sampled span.
pub fn signal_truth<T: Real>(spec: &SignalSpec<T>) -> SignalTruth<T> {
    if spec.amplitude == T::zero() {
        return SignalTruth {
            rep_count: 0,
            reps: Vec::new(),
            trough_times: Vec::new(),
        };
    }
    let (fall, rise) = spec.half_periods();
    let p = fall + rise;
    let last = T::from_usize_lossy(spec.sample_count() - 1) / spec.fps;
    let mut troughs = Vec::new();
    let mut k = 0usize;
    loop {
        let t = fall + T::from_usize_lossy(k) * p;
        if t > last + T::cst(1e-9) {
            break;
        }
        troughs.push(t);
        k += 1;
    }
    let (ecc, con) = match spec.lengthening {
        Lengthening::Increase => (rise, fall),
        Lengthening::Decrease => (fall, rise),
    };
    let reps: Vec<TruthRep<T>> = troughs
        .windows(2)
        .map(|w| TruthRep {
            start_time: w[0],
            end_time: w[1],
            rom: T::cst(2.0) * spec.amplitude,
            eccentric_duration: ecc,
            concentric_duration: con,
        })
        .collect();
    SignalTruth {
        rep_count: reps.len(),
        reps,
        trough_times: troughs,
    }
}

pub fn generate_angle_signal<T: Real>(spec: &SignalSpec<T>) -> Result<SyntheticSignal<T>> {
    spec.validate()?;
    let n = spec.sample_count();
    let joint = JointTriple::of(spec.joint, spec.side);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut clean = Vec::with_capacity(n);
    let mut noisy = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = T::from_usize_lossy(i) / spec.fps;
        let c = spec.clean_angle(t);
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = c + spec.noise_sd * T::cst(z);
        clean.push(c);
        noisy.push(v);
        samples.push(if spec.occluded_at(t, &joint) {
            AngleSample::invalid(t)
        } else {
            AngleSample::valid(t, v)
        });
    }
    Ok(SyntheticSignal {
        series: AngleSeries::new(samples, joint, SourceMode::Mapped, spec.fps),
        clean,
        noisy,
        truth: signal_truth(spec),
    })
}

const UPPER_ARM: f64 = 180.0;
const FOREARM: f64 = 160.0;
const REST_SHOULDER: f64 = 35.0;
const REST_ELBOW: f64 = 150.0;
const FAR_SIDE_VISIBILITY: f64 = 0.3;

/// Planar hip-shoulder-elbow-wrist chain for one side, with the shoulder
/// angle `alpha` and elbow angle `beta` in degrees.
fn arm_chain<T: Real>(origin_x: T, side_sign: T, alpha: T, beta: T) -> [(T, T); 4] {
    let hip = (origin_x, T::cst(700.0));
    let shoulder = (origin_x, T::cst(400.0));
    let a = alpha.to_radians();
    // rotate the shoulder→hip direction (0, 1) by alpha towards the side
    let elbow = (
        shoulder.0 + T::cst(UPPER_ARM) * side_sign * a.sin(),
        shoulder.1 + T::cst(UPPER_ARM) * a.cos(),
    );
    let ux = (shoulder.0 - elbow.0) / T::cst(UPPER_ARM);
    let uy = (shoulder.1 - elbow.1) / T::cst(UPPER_ARM);
    let b = side_sign * beta.to_radians();
    let (s, c) = b.sin_cos();
    let wrist = (
        elbow.0 + T::cst(FOREARM) * (c * ux - s * uy),
        elbow.1 + T::cst(FOREARM) * (s * ux + c * uy),
    );
    [hip, shoulder, elbow, wrist]
}

fn side_indices(side: BodySide) -> [usize; 4] {
    match side {
        BodySide::Left => [
            landmark::LEFT_HIP,
            landmark::LEFT_SHOULDER,
            landmark::LEFT_ELBOW,
            landmark::LEFT_WRIST,
        ],
        BodySide::Right => [
            landmark::RIGHT_HIP,
            landmark::RIGHT_SHOULDER,
            landmark::RIGHT_ELBOW,
            landmark::RIGHT_WRIST,
        ],
    }
}

/// Landmark video whose focal joint follows the signal spec's noisy waveform. The
/// opposite arm and every other landmark stay still; the opposite arm's
/// visibility is below the default gate, as for a side-on camera. Angles must lie in
/// `(0°, 180°)`.
pub fn generate_landmark_scene<T: Real>(spec: &SignalSpec<T>, meta: VideoMeta) -> Result<(LandmarkSeries<T>, SyntheticSignal<T>)> {
    let signal = generate_angle_signal(spec)?;
    let lo = spec.baseline - spec.amplitude - T::cst(4.0) * spec.noise_sd;
    let hi = spec.baseline + spec.amplitude + T::cst(4.0) * spec.noise_sd;
    if !(lo > T::zero() && hi < T::cst(180.0)) {
        return Err(Error::Validation("scene angles must stay inside (0, 180) degrees".into()));
    }
    let joint = JointTriple::of(spec.joint, spec.side);
    let focal = side_indices(spec.side);
    let other = side_indices(spec.side.opposite());
    let (sx, ox, sign) = match spec.side {
        BodySide::Right => (T::cst(500.0), T::cst(780.0), -T::one()),
        BodySide::Left => (T::cst(780.0), T::cst(500.0), T::one()),
    };
    let still = arm_chain(ox, -sign, T::cst(REST_SHOULDER), T::cst(REST_ELBOW));
    let mut frames = Vec::with_capacity(signal.noisy.len());
    for (i, &angle) in signal.noisy.iter().enumerate() {
        let t = T::from_usize_lossy(i) / spec.fps;
        let chain = match spec.joint {
            JointKind::Elbow => arm_chain(sx, sign, T::cst(REST_SHOULDER), angle),
            JointKind::Shoulder => arm_chain(sx, sign, angle, T::cst(REST_ELBOW)),
        };
        let mut lm = [Landmark::new(T::zero(), T::zero(), T::one()); LANDMARK_COUNT];
        for (k, l) in lm.iter_mut().enumerate() {
            // filler landmarks on a fixed row above the head
            *l = Landmark::new(T::cst(300.0) + T::cst(15.0) * T::from_usize_lossy(k), T::cst(100.0), T::one());
        }
        for (idx, p) in focal.iter().zip(chain) {
            lm[*idx] = Landmark::new(p.0, p.1, T::one());
        }
        // The far arm is filmed behind the torso and tracked poorly.
        for (idx, p) in other.iter().zip(still) {
            lm[*idx] = Landmark::new(p.0, p.1, T::cst(FAR_SIDE_VISIBILITY));
        }
        for w in &spec.occlusion_windows {
            if t >= w.start && t < w.end {
                let hidden: Vec<usize> = if w.landmarks.is_empty() {
                    vec![joint.proximal, joint.center, joint.distal]
                } else {
                    w.landmarks.clone()
                };
                for h in hidden {
                    lm[h].visibility = T::zero();
                }
            }
        }
        frames.push(LandmarkFrame::new(i as u64, t, lm));
    }
    Ok((LandmarkSeries::new(meta, spec.fps, frames)?, signal))
}

/// Fixed effects and level covariances of the crossed model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaSimParams<T> {
    /// `(intercept, pROM, female)`
    pub beta: [T; 3],
    /// Participant `(intercept, slope)` covariance.
    pub g_p: [[T; 2]; 2],
    /// Exercise `(intercept, slope)` covariance.
    pub g_e: [[T; 2]; 2],
}

fn cov2<T: Real>(t0: T, t1: T, r: T) -> [[T; 2]; 2] {
    let c = r * (t0 * t1).sqrt();
    [[t0, c], [c, t1]]
}

impl<T: Real> MetaSimParams<T> {
    pub fn new(beta: [T; 3], tau_p2: T, tau_q2: T, xi: T, tau_u2: T, tau_v2: T, rho: T) -> Self {
        Self {
            beta,
            g_p: cov2(tau_p2, tau_q2, xi),
            g_e: cov2(tau_u2, tau_v2, rho),
        }
    }

    /// Repetition-duration estimates of the reference study.
    pub fn rep_duration() -> Self {
        let c = T::cst;
        Self::new(
            [c(3.831), c(-0.303), c(0.220)],
            c(0.169),
            c(0.254),
            c(0.759),
            c(0.209),
            c(0.172),
            c(0.846),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignShape<T> {
    pub participants: usize,
    pub exercises: usize,
    /// The first `females` participants are female.
    pub females: usize,
    /// Sampling variances, cycled over rows in canonical order.
    pub sigma2: Vec<T>,
}

impl<T: Real> DesignShape<T> {
    /// 26 participants (4 female) × 8 exercises × 2 conditions.
    pub fn study() -> Self {
        Self {
            participants: 26,
            exercises: 8,
            females: 4,
            sigma2: [0.02, 0.04, 0.06, 0.08, 0.10].iter().map(|&v| T::cst(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedMeta<T> {
    pub data: MetaDataset<T>,
    /// Drawn `(p_i, q_i)` per participant.
    pub participant_effects: Vec<[T; 2]>,
    /// Drawn `(u_e, v_e)` per exercise.
    pub exercise_effects: Vec<[T; 2]>,
}

/// Lower factor of a 2×2 positive semi-definite matrix.
pub(crate) fn psd_factor<T: Real>(g: [[T; 2]; 2]) -> Result<[[T; 2]; 2]> {
    let tol = T::cst(1e-12) * (g[0][0].abs() + g[1][1].abs()).max(T::one());
    let sym = (g[0][1] - g[1][0]).abs() <= tol;
    if !sym || g[0][0] < -tol || g[1][1] < -tol {
        return Err(Error::Validation("covariance matrix is not positive semi-definite".into()));
    }
    let a = g[0][0].max(T::zero()).sqrt();
    let (l10, rest) = if a > T::zero() {
        let l10 = g[0][1] / a;
        (l10, g[1][1] - l10 * l10)
    } else {
        if g[0][1].abs() > tol {
            return Err(Error::Validation("covariance matrix is not positive semi-definite".into()));
        }
        (T::zero(), g[1][1])
    };
    if rest < -tol {
        return Err(Error::Validation("covariance matrix is not positive semi-definite".into()));
    }
    Ok([[a, T::zero()], [l10, rest.max(T::zero()).sqrt()]])
}

pub(crate) fn draw_pair<T: Real>(l: &[[T; 2]; 2], rng: &mut ChaCha8Rng) -> [T; 2] {
    let z0: f64 = StandardNormal.sample(rng);
    let z1: f64 = StandardNormal.sample(rng);
    let (z0, z1) = (T::cst(z0), T::cst(z1));
    [l[0][0] * z0, l[1][0] * z0 + l[1][1] * z1]
}

pub fn participant_id(i: usize) -> String {
    format!("P{:02}", i + 1)
}

/// Study exercise names for the first eight, `E9`, `E10`, ... beyond.
pub fn exercise_id(e: usize) -> String {
    match ExerciseKind::STUDY.get(e) {
        Some(kind) => kind.name().to_string(),
        None => format!("E{}", e + 1),
    }
}

/// Set summaries reproducing a dataset exactly under [`build_dataset`]:
/// `mean = Y`, `sd = sqrt(k·σ²)`. Also returns the participant metadata.
///
/// [`build_dataset`]: crate::set_metrics::build_dataset
pub fn summaries_from_dataset<T: Real>(
    data: &MetaDataset<T>,
    outcome: OutcomeKind,
    k: usize,
) -> Result<(Vec<SetSummary<T>>, BTreeMap<String, Sex>)> {
    let mut sexes = BTreeMap::new();
    let rows = data
        .rows()
        .iter()
        .map(|r| {
            let sex = if r.female { Sex::F } else { Sex::M };
            sexes.insert(r.participant.clone(), sex);
            Ok(SetSummary {
                participant_id: r.participant.clone(),
                exercise: r.exercise.parse()?,
                rom_condition: if r.partial { RomCondition::Partial } else { RomCondition::Full },
                sex: Some(sex),
                outcome,
                mean: r.y,
                sd: (r.sigma2 * T::from_usize_lossy(k)).sqrt(),
                k,
                side_left_fraction: T::one(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, sexes))
}

/// Draws one dataset from the crossed model. Participant effects are drawn
/// first, then exercise effects, then residuals in canonical row order.
pub fn simulate_meta_dataset<T: Real>(params: &MetaSimParams<T>, shape: &DesignShape<T>, seed: u64) -> Result<SimulatedMeta<T>> {
    if shape.participants == 0 || shape.exercises == 0 || shape.sigma2.is_empty() {
        return Err(Error::Validation(
            "design shape must have participants, exercises and sampling variances".into(),
        ));
    }
    if shape.sigma2.iter().any(|&s| !(s > T::zero())) {
        return Err(Error::Validation("sampling variances must be positive".into()));
    }
    let lp = psd_factor(params.g_p)?;
    let le = psd_factor(params.g_e)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pe: Vec<[T; 2]> = (0..shape.participants).map(|_| draw_pair(&lp, &mut rng)).collect();
    let ee: Vec<[T; 2]> = (0..shape.exercises).map(|_| draw_pair(&le, &mut rng)).collect();
    let mut rows = Vec::with_capacity(shape.participants * shape.exercises * 2);
    let mut k = 0;
    for (i, p) in pe.iter().enumerate() {
        let female = i < shape.females;
        for (e, u) in ee.iter().enumerate() {
            for partial in [false, true] {
                let s2 = shape.sigma2[k % shape.sigma2.len()];
                k += 1;
                let z: f64 = StandardNormal.sample(&mut rng);
                let g = if partial { T::one() } else { T::zero() };
                let f = if female { T::one() } else { T::zero() };
                let y =
                    params.beta[0] + params.beta[1] * g + params.beta[2] * f + p[0] + p[1] * g + u[0] + u[1] * g + s2.sqrt() * T::cst(z);
                rows.push(MetaRow {
                    participant: participant_id(i),
                    exercise: exercise_id(e),
                    partial,
                    female,
                    y,
                    sigma2: s2,
                    floored: false,
                });
            }
        }
    }
    Ok(SimulatedMeta {
        data: MetaDataset::new(rows)?,
        participant_effects: pe,
        exercise_effects: ee,
    })
}
