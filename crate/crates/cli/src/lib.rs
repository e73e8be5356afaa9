//! The `planemerge` command line: synthesize scenes, detect planes,
//! evaluate labelings and plot them.

pub mod labeling;
pub mod matchfile;
pub mod svg;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use planemerge_core::pipeline::{ground_truth_labels, PatchSummary};
use planemerge_core::refinement::{delaunay_triangulate, LocalNormal};
use planemerge_core::{
    evaluate, generate_scene, run_pipeline, PipelineConfig, PipelineError, PipelineOutput, SceneSpec, Stage,
};
use serde_json::{json, Value};
use thiserror::Error;

use labeling::LabelingDoc;
use matchfile::MatchFile;

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "PLANEMERGE_THREADS";
const DEFAULT_CANVAS: [u32; 2] = [640, 480];

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable, malformed or inconsistent input.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Pipeline(_) => 3,
        }
    }
}

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "planemerge",
    version,
    about = "Multiple plane detection from two-view matches"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Label matches by plane.
    Detect(DetectArgs),
    /// Write a synthetic match file with ground truth.
    Synth(SynthArgs),
    /// Compare a labeling with the ground truth of a match file.
    Eval(EvalArgs),
    /// Render a labeling as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Match file (version 1).
    pub matches: PathBuf,
    /// TOML run configuration; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output labeling document.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Seed for every randomized stage, overriding the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the named stage's output as JSON on stdout.
    #[arg(long, value_name = "STAGE", value_parser = parse_stage)]
    pub dump_stage: Option<Stage>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Built-in scene: corridor, corner, box or lab.
    #[arg(long, conflicts_with = "spec", required_unless_present = "spec")]
    pub preset: Option<String>,
    /// TOML scene description.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Scene seed; overrides the seed of a spec file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output match file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted labeling document.
    pub labeling: PathBuf,
    /// Match file with a gt column.
    pub matches: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    pub matches: PathBuf,
    pub labeling: PathBuf,
    /// Output SVG file.
    #[arg(short, long)]
    pub output: PathBuf,
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Stage::from_name(s).ok_or_else(|| {
        let names: Vec<&str> = Stage::ALL.iter().map(|s| s.name()).collect();
        format!("unknown stage {s:?}; expected one of {}", names.join(", "))
    })
}

/// Thread cap from the environment, if set.
pub fn thread_cap(value: Option<&str>) -> Result<Option<usize>, CliError> {
    match value.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(input(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| input(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| input(format!("cannot write {}: {e}", path.display())))
}

pub fn read_matches(path: &Path) -> Result<MatchFile, CliError> {
    let text = read(path)?;
    let (file, warnings) = MatchFile::parse(&text).map_err(|e| input(format!("{}: {e}", path.display())))?;
    for w in warnings.messages {
        warn!("{}: {w}", path.display());
    }
    Ok(file)
}

fn read_labeling(path: &Path) -> Result<LabelingDoc, CliError> {
    LabelingDoc::parse(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// Reads and validates a run configuration.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig, CliError> {
    let cfg = match path {
        None => PipelineConfig::default(),
        Some(p) => toml::from_str(&read(p)?).map_err(|e| input(format!("{}: {e}", p.display())))?,
    };
    cfg.validate().map_err(|e| input(format!("invalid config: {e}")))?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Detect(a) => detect(&a),
        Command::Synth(a) => synth(&a),
        Command::Eval(a) => eval(&a),
        Command::Plot(a) => plot(&a),
    }
}

fn labels_json(ids: &[u64], labels: &[Option<usize>]) -> Value {
    serde_json::to_value(LabelingDoc::new(ids.iter().copied(), labels).labels).expect("labels serialize")
}

/// JSON view of one stage's result.
pub fn stage_dump(stage: Stage, file: &MatchFile, cfg: &PipelineConfig, out: &PipelineOutput) -> Value {
    let ids: Vec<u64> = file.matches.iter().map(|c| c.id).collect();
    let d = &out.diagnostics;
    let body = match stage {
        Stage::Config => serde_json::to_value(cfg).expect("config serializes"),
        Stage::Sampling => json!({ "hypotheses": d.hypotheses, "failed_draws": d.failed_draws }),
        Stage::InitialPatches => json!({
            "noise_scale": d.noise_scale,
            "epsilon_outlier": d.epsilon_outlier,
            "single_structure": d.single_structure,
            "patches": d.initial_patches,
            "labels": labels_json(&ids, out.stages.initial.labels()),
        }),
        Stage::Triangulation => {
            let edges: Vec<[u64; 2]> = delaunay_triangulate(&file.matches)
                .map(|g| g.edges().iter().map(|&(a, b)| [ids[a], ids[b]]).collect())
                .unwrap_or_default();
            json!({ "edges": edges })
        }
        Stage::Cut => json!({
            "threshold": d.cut_threshold,
            "patches": d.refined_patches,
            "labels": labels_json(&ids, out.stages.refined.labels()),
        }),
        Stage::PlaneModels => {
            let patches: Vec<PatchSummary> = out.stages.patches.iter().map(PatchSummary::from).collect();
            let local: Vec<Value> = ids
                .iter()
                .zip(&out.stages.local_normals)
                .map(|(id, n)| match n {
                    LocalNormal::Reliable(v) => json!({ "id": id, "normal": [v.x, v.y, v.z] }),
                    LocalNormal::Unreliable => json!({ "id": id, "normal": null }),
                })
                .collect();
            json!({ "motion": d.consensus_motion, "patches": patches, "local_normals": local })
        }
        Stage::Mrf => json!({
            "nodes": d.mrf_nodes,
            "edges": d.mrf_edges,
            "sigma_r": d.sigma_r,
            "texture_disabled": d.texture_disabled,
        }),
        Stage::Solver => json!({
            "report": out.stages.solve,
            "label_merges": d.label_merges,
            "labels": labels_json(&ids, out.labeling.labels()),
        }),
    };
    json!({ "stage": stage.name(), "output": body })
}

pub fn detect(a: &DetectArgs) -> Result<(), CliError> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg = cfg.with_seed(seed);
    }
    let file = read_matches(&a.matches)?;
    let intrinsics = file
        .intrinsics
        .ok_or_else(|| input(format!("{}: no intrinsics header", a.matches.display())))?;
    let out = run_pipeline(&file.matches, &intrinsics, &cfg)?;
    for w in &out.diagnostics.warnings {
        warn!("{w}");
    }

    let ids: Vec<u64> = file.matches.iter().map(|c| c.id).collect();
    let mut doc = LabelingDoc::new(ids.iter().copied(), out.labeling.labels());
    let mut diag = serde_json::to_value(&out.diagnostics).expect("diagnostics serialize");
    if let (Some(e), Value::Object(map)) = (&out.eval, &mut diag) {
        map.insert("evaluation".into(), serde_json::to_value(e).expect("report serializes"));
    }
    doc.diagnostics = Some(diag);
    write(&a.output, &doc.to_json())?;

    if let Some(stage) = a.dump_stage {
        let dump = serde_json::to_string_pretty(&stage_dump(stage, &file, &cfg, &out)).expect("dump serializes");
        let mut stdout = std::io::stdout().lock();
        writeln!(stdout, "{dump}").map_err(|e| input(format!("cannot write stage dump: {e}")))?;
    }
    Ok(())
}

/// Match file text for a scene description.
pub fn synth_text(spec: &SceneSpec) -> Result<String, CliError> {
    let scene = generate_scene(spec).map_err(|e| input(format!("cannot generate scene: {e}")))?;
    Ok(MatchFile {
        intrinsics: Some(scene.intrinsics),
        image_size: Some(scene.image_size),
        matches: scene.matches,
    }
    .to_text())
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let spec = match (&a.preset, &a.spec) {
        (Some(name), _) => SceneSpec::preset(name, a.seed.unwrap_or(0)).map_err(|e| input(e.to_string()))?,
        (None, Some(path)) => {
            let mut spec: SceneSpec =
                toml::from_str(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
            if let Some(seed) = a.seed {
                spec.seed = seed;
            }
            spec
        }
        (None, None) => return Err(input("synth needs --preset or --spec")),
    };
    let text = synth_text(&spec)?;
    match &a.output {
        Some(p) => write(p, &text),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|e| input(format!("cannot write match file: {e}"))),
    }
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let doc = read_labeling(&a.labeling)?;
    let file = read_matches(&a.matches)?;
    let gt = ground_truth_labels(&file.matches)
        .ok_or_else(|| input(format!("{}: every record needs a gt value", a.matches.display())))?;
    let ids: Vec<u64> = file.matches.iter().map(|c| c.id).collect();
    let pred = doc.aligned(&ids).map_err(input)?;
    print!("{}", evaluate(&pred, &gt).render());
    Ok(())
}

/// SVG of the matches named in `doc`.
pub fn plot_svg(file: &MatchFile, doc: &LabelingDoc) -> Result<String, CliError> {
    let index: std::collections::HashMap<u64, usize> =
        file.matches.iter().enumerate().map(|(i, c)| (c.id, i)).collect();
    let mut matches = Vec::with_capacity(doc.labels.len());
    let mut labels = Vec::with_capacity(doc.labels.len());
    for e in &doc.labels {
        let i = *index
            .get(&e.id)
            .ok_or_else(|| input(format!("labeling id {} is not in the match file", e.id)))?;
        matches.push(file.matches[i].clone());
        labels.push(usize::try_from(e.label).ok());
    }
    Ok(svg::render(
        &matches,
        &labels,
        file.image_size.unwrap_or(DEFAULT_CANVAS),
    ))
}

pub fn plot(a: &PlotArgs) -> Result<(), CliError> {
    let file = read_matches(&a.matches)?;
    let doc = read_labeling(&a.labeling)?;
    write(&a.output, &plot_svg(&file, &doc)?)
}
