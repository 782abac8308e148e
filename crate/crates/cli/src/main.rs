mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use romkit::config::PipelineConfig;
use romkit::inference::{infer_outcome, percent_rom_analysis, InferenceReport};
use romkit::landmark_io::{read_landmark_file, write_landmark_file};
use romkit::meta::{fit_reml, ModelReport};
use romkit::model::{ExerciseKind, LandmarkSeries, RomCondition, Sex, VideoMeta};
use romkit::pipeline::{analyze_video, conditioned_angles, video_summaries, VideoAnalysis};
use romkit::segmentation::evaluate_against_annotations;
use romkit::set_metrics::{aggregate_all, build_dataset, build_log_rom_dataset, OutcomeKind, SetSummary};
use romkit::synth::{generate_landmark_scene, simulate_meta_dataset, summaries_from_dataset, DesignShape, MetaSimParams, SignalSpec};
use romkit::{plot, tables};

#[derive(Parser)]
#[command(name = "romkit", version, about = "Range-of-motion video analysis and meta-regression")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true, env = "ROMKIT_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for file-level and bootstrap parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Overrides `[model] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
enum OutcomeArg {
    RepDuration,
    Eccentric,
    Concentric,
    Rom,
    LogRom,
}

impl OutcomeArg {
    fn kind(self) -> OutcomeKind {
        match self {
            OutcomeArg::RepDuration => OutcomeKind::RepDuration,
            OutcomeArg::Eccentric => OutcomeKind::EccentricDuration,
            OutcomeArg::Concentric => OutcomeKind::ConcentricDuration,
            OutcomeArg::Rom => OutcomeKind::RangeOfMotion,
            OutcomeArg::LogRom => OutcomeKind::LogMeanRom,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Conditioned joint-angle CSV per landmark file.
    Angles {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Repetition tables, detections, trace plots and pooled set summaries.
    Segment {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// REML fit of one outcome from a set-summary CSV.
    Fit {
        summaries: PathBuf,
        #[arg(long, value_enum, default_value_t = OutcomeArg::RepDuration)]
        outcome: OutcomeArg,
        /// Participant metadata CSV; defaults to `[io] participants`.
        #[arg(long)]
        participants: Option<PathBuf>,
    },
    /// Covariance LRTs, bootstrap contrasts and the %ROM analysis.
    Infer {
        summaries: PathBuf,
        /// Restrict the LRT and contrast battery to one outcome.
        #[arg(long, value_enum)]
        outcome: Option<OutcomeArg>,
        #[arg(long)]
        participants: Option<PathBuf>,
        /// Overrides `[model] bootstrap_b`.
        #[arg(long)]
        boot: Option<usize>,
    },
    /// Synthetic fixtures with known ground truth.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Side and repetition-count agreement with annotations.
    Evaluate {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Annotation CSV; defaults to `[io] annotations`.
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// One landmark scene from a signal spec (TOML).
    Scene {
        spec: PathBuf,
        #[arg(long)]
        video_id: String,
        #[arg(long, default_value = "P01")]
        participant: String,
        #[arg(long, default_value = "DumbbellCurl")]
        exercise: String,
        #[arg(long, default_value = "fROM")]
        condition: String,
    },
    /// A small study: landmark scenes, participant metadata and annotations.
    Fixtures {
        #[arg(long, default_value_t = 4)]
        participants: usize,
        #[arg(long, default_value_t = 2)]
        exercises: usize,
        #[arg(long, default_value_t = 36.0)]
        duration: f64,
        #[arg(long, default_value_t = 15.0)]
        fps: f64,
    },
    /// Set summaries simulated from the crossed model at the repetition-duration estimates.
    Meta {
        #[arg(long, default_value_t = 26)]
        participants: usize,
        #[arg(long, default_value_t = 8)]
        exercises: usize,
        #[arg(long, default_value_t = 4)]
        females: usize,
        /// Repetitions per set written to the summaries.
        #[arg(long, default_value_t = 6)]
        k: usize,
    },
}

/// Exit 2: configuration or usage problems.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Per-item failures of a batch command (exit 1 after writing what succeeded).
#[derive(Default)]
struct Failures(Vec<(String, String)>);

impl Failures {
    fn push(&mut self, item: impl Into<String>, err: impl std::fmt::Display) {
        self.0.push((item.into(), err.to_string()));
    }

    fn finish(self) -> ExitCode {
        if self.0.is_empty() {
            return ExitCode::SUCCESS;
        }
        for (item, err) in &self.0 {
            eprintln!("error: {item}: {err}");
        }
        eprintln!("{} item(s) failed", self.0.len());
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("thread pool")?;
    }
    let cfg = load_config(&cli)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::Angles { inputs } => cmd_angles(&cfg, inputs, out),
        Command::Segment { inputs } => cmd_segment(&cfg, inputs, out),
        Command::Fit {
            summaries,
            outcome,
            participants,
        } => cmd_fit(&cfg, summaries, *outcome, participants.as_deref(), out),
        Command::Infer {
            summaries,
            outcome,
            participants,
            boot,
        } => cmd_infer(&cfg, summaries, *outcome, participants.as_deref(), *boot, out),
        Command::Synth { what } => cmd_synth(&cfg, what, out),
        Command::Evaluate { inputs, annotations } => cmd_evaluate(&cfg, inputs, annotations.as_deref(), out),
    }
}

/// Temp file in the destination directory, then rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| e.error)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> romkit::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

/// Files as given; directories expand to their `*.landmarks.jsonl` files, sorted.
fn expand_inputs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.to_string_lossy().ends_with(".landmarks.jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(usage(format!("input {} does not exist", p.display())));
        }
    }
    if files.is_empty() {
        return Err(usage("no landmark files found"));
    }
    Ok(files)
}

fn file_stem(video_id: &str) -> String {
    video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn load_videos(inputs: &[PathBuf]) -> anyhow::Result<Vec<(PathBuf, romkit::Result<LandmarkSeries<f64>>)>> {
    let files = expand_inputs(inputs)?;
    Ok(files
        .into_par_iter()
        .map(|f| {
            let r = read_landmark_file(&f);
            (f, r)
        })
        .collect())
}

fn cmd_angles(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> anyhow::Result<ExitCode> {
    let joints = cfg.joint_map()?;
    let videos = load_videos(inputs)?;
    let results: Vec<(String, anyhow::Result<()>)> = videos
        .into_par_iter()
        .map(|(file, lm)| {
            let name = file.display().to_string();
            let r = (|| {
                let lm = lm?;
                let series = conditioned_angles(&lm, cfg, &joints)?;
                let bytes = csv_bytes(|b| tables::write_angle_series(b, &series))?;
                write_atomic(&out.join(format!("{}.angles.csv", file_stem(lm.video_id()))), &bytes)
            })();
            (name, r)
        })
        .collect();
    let mut failures = Failures::default();
    for (name, r) in results {
        if let Err(e) = r {
            failures.push(name, format!("{e:#}"));
        }
    }
    Ok(failures.finish())
}

struct Segmented {
    landmarks: LandmarkSeries<f64>,
    analysis: VideoAnalysis,
}

fn segment_all(cfg: &PipelineConfig, inputs: &[PathBuf], failures: &mut Failures) -> anyhow::Result<Vec<Segmented>> {
    let joints = cfg.joint_map()?;
    let videos = load_videos(inputs)?;
    let results: Vec<(String, romkit::Result<Segmented>)> = videos
        .into_par_iter()
        .map(|(file, lm)| {
            let r = lm.and_then(|landmarks| {
                let analysis = analyze_video(&landmarks, cfg, &joints)?;
                Ok(Segmented { landmarks, analysis })
            });
            (file.display().to_string(), r)
        })
        .collect();
    let mut ok = Vec::new();
    for (name, r) in results {
        match r {
            Ok(s) => ok.push(s),
            Err(e) => failures.push(name, e),
        }
    }
    Ok(ok)
}

fn cmd_segment(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> anyhow::Result<ExitCode> {
    let mut failures = Failures::default();
    let segmented = segment_all(cfg, inputs, &mut failures)?;
    let mut per_video = Vec::new();
    let mut detections = Vec::new();
    for s in &segmented {
        let a = &s.analysis;
        let stem = file_stem(&a.video_id);
        let reps = &a.segmented.detection.repetitions;
        let bytes = csv_bytes(|b| tables::write_repetitions(b, &a.video_id, a.side(), reps, 0))?;
        write_atomic(&out.join("reps").join(format!("{stem}.reps.csv")), &bytes)?;
        let title = format!(
            "{} ({}, {} side)",
            a.video_id,
            a.segmented.series.joint().kind.as_str(),
            a.side().as_str()
        );
        let svg = plot::angle_trace_plot(&title, &a.segmented.series, &a.segmented.detection);
        write_atomic(&out.join("plots").join(format!("{stem}.trace.svg")), svg.as_bytes())?;
        detections.push(a.outcome());
        match video_summaries(&s.landmarks, a, None) {
            Ok(rows) => per_video.extend(rows),
            Err(e) => eprintln!("note: {} excluded from summaries: {e}", a.video_id),
        }
    }
    let pooled = aggregate_all(&per_video)?;
    write_atomic(
        &out.join("set_summaries.csv"),
        &csv_bytes(|b| tables::write_set_summaries(b, &pooled))?,
    )?;
    write_atomic(
        &out.join("detections.csv"),
        &csv_bytes(|b| tables::write_annotations(b, &detections))?,
    )?;
    Ok(failures.finish())
}

fn participants_path(cfg: &PipelineConfig, flag: Option<&Path>) -> anyhow::Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.io.participants.clone())
        .ok_or_else(|| usage("participant metadata needed: pass --participants or set [io] participants"))
}

fn load_summaries(path: &Path, participants: &Path) -> anyhow::Result<Vec<SetSummary<f64>>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = tables::read_set_summaries(file).with_context(|| path.display().to_string())?;
    let meta_file = std::fs::File::open(participants).map_err(|e| usage(format!("{}: {e}", participants.display())))?;
    let meta = tables::read_participants(meta_file).with_context(|| participants.display().to_string())?;
    tables::attach_sex(&mut rows, &meta)?;
    Ok(rows)
}

fn outcome_rows(rows: &[SetSummary<f64>], outcome: OutcomeKind) -> Vec<SetSummary<f64>> {
    rows.iter().filter(|r| r.outcome == outcome).cloned().collect()
}

fn cmd_fit(
    cfg: &PipelineConfig,
    summaries: &Path,
    outcome: OutcomeArg,
    participants: Option<&Path>,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let rows = load_summaries(summaries, &participants_path(cfg, participants)?)?;
    let kind = outcome.kind();
    let data = if kind == OutcomeKind::LogMeanRom {
        build_log_rom_dataset(&outcome_rows(&rows, OutcomeKind::RangeOfMotion))?
    } else {
        build_dataset(&outcome_rows(&rows, kind))?
    };
    if data.is_empty() {
        bail!("no {kind} rows in {}", summaries.display());
    }
    let fit = fit_reml(&data, cfg.model.structure_p, cfg.model.structure_e)?;
    let rep = ModelReport::new(kind.as_str(), &fit);
    write_json(&out.join(format!("fit_{}.json", kind.as_str())), &rep)?;
    let text = report::model_table(&rep);
    write_atomic(&out.join(format!("fit_{}.txt", kind.as_str())), text.as_bytes())?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_infer(
    cfg: &PipelineConfig,
    summaries: &Path,
    outcome: Option<OutcomeArg>,
    participants: Option<&Path>,
    boot: Option<usize>,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let b = boot.unwrap_or(cfg.model.bootstrap_b);
    if b == 0 {
        return Err(usage("--boot must be at least 1"));
    }
    let seed = cfg.model.seed;
    let rows = load_summaries(summaries, &participants_path(cfg, participants)?)?;
    let kinds: Vec<OutcomeKind> = match outcome {
        Some(OutcomeArg::LogRom) => {
            return Err(usage(
                "the LRT and contrast battery runs on measured outcomes; log_rom is covered by the %ROM block",
            ))
        }
        Some(o) => vec![o.kind()],
        None => OutcomeKind::MEASURED
            .into_iter()
            .filter(|k| rows.iter().any(|r| r.outcome == *k))
            .collect(),
    };
    let mut outcomes = Vec::new();
    for kind in kinds {
        let data = build_dataset(&outcome_rows(&rows, kind))?;
        outcomes.push(infer_outcome(kind.as_str(), &data, b, seed).with_context(|| format!("outcome {kind}"))?);
    }
    let rom = outcome_rows(&rows, OutcomeKind::RangeOfMotion);
    let percent_rom = if rom.is_empty() {
        None
    } else {
        Some(percent_rom_analysis(&rom, b, seed)?)
    };
    let report = InferenceReport {
        seed,
        bootstrap_b: b,
        outcomes,
        percent_rom,
    };
    write_json(&out.join("inference.json"), &report)?;
    if let Some(p) = &report.percent_rom {
        write_json(&out.join("percent_rom.json"), p)?;
        write_atomic(
            &out.join("plots").join("percent_rom_forest.svg"),
            plot::forest_plot(p, 0.05).as_bytes(),
        )?;
    }
    let text = report::inference_tables(&report);
    write_atomic(&out.join("inference.txt"), text.as_bytes())?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn parse_meta(video_id: &str, participant: &str, exercise: &str, condition: &str) -> anyhow::Result<VideoMeta> {
    Ok(VideoMeta {
        video_id: video_id.to_string(),
        participant_id: participant.to_string(),
        exercise: exercise.parse::<ExerciseKind>().map_err(|e| usage(e.to_string()))?,
        rom_condition: condition.parse::<RomCondition>().map_err(|e| usage(e.to_string()))?,
    })
}

#[derive(Serialize)]
struct SceneTruth<'a> {
    video_id: &'a str,
    spec: &'a SignalSpec<f64>,
    truth: &'a romkit::synth::SignalTruth<f64>,
}

fn write_scene(out: &Path, spec: &SignalSpec<f64>, meta: VideoMeta) -> anyhow::Result<romkit::synth::SignalTruth<f64>> {
    let (scene, signal) = generate_landmark_scene(spec, meta)?;
    let stem = file_stem(scene.video_id());
    std::fs::create_dir_all(out)?;
    let path = out.join(format!("{stem}.landmarks.jsonl"));
    let tmp = tempfile::NamedTempFile::new_in(out)?;
    write_landmark_file(&scene, tmp.path())?;
    tmp.persist(&path).map_err(|e| e.error)?;
    write_json(
        &out.join(format!("{stem}.truth.json")),
        &SceneTruth {
            video_id: scene.video_id(),
            spec,
            truth: &signal.truth,
        },
    )?;
    Ok(signal.truth)
}

fn cmd_synth(cfg: &PipelineConfig, what: &SynthCommand, out: &Path) -> anyhow::Result<ExitCode> {
    let seed = cfg.model.seed;
    match what {
        SynthCommand::Scene {
            spec,
            video_id,
            participant,
            exercise,
            condition,
        } => {
            let text = std::fs::read_to_string(spec).map_err(|e| usage(format!("{}: {e}", spec.display())))?;
            let spec: SignalSpec<f64> = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", spec_name(spec))))?;
            let meta = parse_meta(video_id, participant, exercise, condition)?;
            write_scene(out, &spec, meta)?;
        }
        SynthCommand::Fixtures {
            participants,
            exercises,
            duration,
            fps,
        } => {
            if *exercises == 0 || *exercises > ExerciseKind::STUDY.len() || *participants == 0 {
                return Err(usage(format!("need 1..=8 exercises and at least one participant")));
            }
            let mut annotations = Vec::new();
            let mut meta_csv = String::from("participant_id,sex\n");
            let specs: Vec<(VideoMeta, SignalSpec<f64>)> = fixture_specs(*participants, *exercises, *duration, *fps, seed);
            let truths: Vec<anyhow::Result<(String, romkit::model::BodySide, usize)>> = specs
                .into_par_iter()
                .map(|(meta, spec)| {
                    let id = meta.video_id.clone();
                    let truth = write_scene(out, &spec, meta)?;
                    Ok((id, spec.side, truth.rep_count))
                })
                .collect();
            for t in truths {
                let (video_id, side, rep_count) = t?;
                annotations.push(romkit::segmentation::VideoOutcome { video_id, side, rep_count });
            }
            for i in 0..*participants {
                let sex = if i == 0 { Sex::F } else { Sex::M };
                meta_csv.push_str(&format!("{},{sex}\n", romkit::synth::participant_id(i)));
            }
            write_atomic(&out.join("participants.csv"), meta_csv.as_bytes())?;
            write_atomic(
                &out.join("annotations.csv"),
                &csv_bytes(|b| tables::write_annotations(b, &annotations))?,
            )?;
        }
        SynthCommand::Meta {
            participants,
            exercises,
            females,
            k,
        } => {
            if *k < 2 {
                return Err(usage("--k must be at least 2"));
            }
            let shape = DesignShape {
                participants: *participants,
                exercises: *exercises,
                females: *females,
                ..DesignShape::study()
            };
            let params = MetaSimParams::rep_duration();
            let sim = simulate_meta_dataset(&params, &shape, seed)?;
            let (rows, sexes) = summaries_from_dataset(&sim.data, OutcomeKind::RepDuration, *k)?;
            write_atomic(
                &out.join("set_summaries.csv"),
                &csv_bytes(|b| tables::write_set_summaries(b, &rows))?,
            )?;
            let mut meta_csv = String::from("participant_id,sex\n");
            for (id, sex) in &sexes {
                meta_csv.push_str(&format!("{id},{sex}\n"));
            }
            write_atomic(&out.join("participants.csv"), meta_csv.as_bytes())?;
            #[derive(Serialize)]
            struct MetaTruth<'a> {
                seed: u64,
                beta: [f64; 3],
                g_p: [[f64; 2]; 2],
                g_e: [[f64; 2]; 2],
                participant_effects: &'a [[f64; 2]],
                exercise_effects: &'a [[f64; 2]],
            }
            write_json(
                &out.join("truth.json"),
                &MetaTruth {
                    seed,
                    beta: params.beta,
                    g_p: params.g_p,
                    g_e: params.g_e,
                    participant_effects: &sim.participant_effects,
                    exercise_effects: &sim.exercise_effects,
                },
            )?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn spec_name(p: &Path) -> String {
    p.display().to_string()
}

/// Deterministic variety: cadence, amplitude and tempo vary with the video index.
fn fixture_specs(participants: usize, exercises: usize, duration: f64, fps: f64, seed: u64) -> Vec<(VideoMeta, SignalSpec<f64>)> {
    let mut out = Vec::new();
    let mut n = 0u64;
    for i in 0..participants {
        for (e, exercise) in ExerciseKind::STUDY.iter().take(exercises).enumerate() {
            for cond in [RomCondition::Full, RomCondition::Partial] {
                let j = (i * exercises + e) as f64;
                let partial = cond.is_partial();
                let amplitude = if partial { 25.0 + 2.0 * (j % 3.0) } else { 45.0 + 3.0 * (j % 4.0) };
                let mut spec = SignalSpec::new(0.22 + 0.02 * (j % 3.0), amplitude, 95.0, duration, fps);
                spec.tempo_asymmetry = 0.8 + 0.2 * (j % 3.0);
                spec.noise_sd = 0.5;
                spec.side = if (i + e) % 2 == 0 {
                    romkit::model::BodySide::Left
                } else {
                    romkit::model::BodySide::Right
                };
                spec.joint = exercise.default_joint();
                spec.lengthening = exercise.lengthening();
                spec.seed = seed.wrapping_add(n);
                n += 1;
                let meta = VideoMeta {
                    video_id: format!("{}_{}_{}", romkit::synth::participant_id(i), exercise.name(), cond.as_str()),
                    participant_id: romkit::synth::participant_id(i),
                    exercise: exercise.clone(),
                    rom_condition: cond,
                };
                out.push((meta, spec));
            }
        }
    }
    out
}

fn cmd_evaluate(cfg: &PipelineConfig, inputs: &[PathBuf], annotations: Option<&Path>, out: &Path) -> anyhow::Result<ExitCode> {
    let path = annotations
        .map(Path::to_path_buf)
        .or_else(|| cfg.io.annotations.clone())
        .ok_or_else(|| usage("annotations needed: pass --annotations or set [io] annotations"))?;
    let file = std::fs::File::open(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let truth = tables::read_annotations(file).with_context(|| path.display().to_string())?;
    let mut failures = Failures::default();
    let segmented = segment_all(cfg, inputs, &mut failures)?;
    let predictions: Vec<_> = segmented.iter().map(|s| s.analysis.outcome()).collect();
    let evaluated: BTreeMap<&str, ()> = predictions.iter().map(|p| (p.video_id.as_str(), ())).collect();
    let truth: Vec<_> = truth.into_iter().filter(|t| evaluated.contains_key(t.video_id.as_str())).collect();
    let report = evaluate_against_annotations(&predictions, &truth)?;
    write_json(&out.join("evaluation.json"), &report)?;
    println!(
        "videos {}  side accuracy {:.3}  mean |Δreps| {:.3}  within ±2 reps {:.3}",
        report.n_videos, report.side_accuracy, report.mean_abs_deviation, report.within_two_fraction
    );
    Ok(failures.finish())
}
