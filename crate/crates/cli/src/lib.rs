//! Command-line front end: synthesize videos, fit and evaluate
//! representations, run the family comparison and the gradient checks.
//!
//! Every command returns a process exit code; see [`exit`].

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::builder::{PossibleValuesParser, TypedValueParser};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use triflow_core::fit::{self, FitConfig, FitReport, FrameMetric, HoldoutMode, MeanMetrics};
use triflow_core::gradcheck::{self, Scope, SuiteOptions};
use triflow_core::repr::{Family, RepConfig, Representation};
use triflow_core::video::{self, Checkpoint, SynthKind, SynthParams, Video};
use triflow_core::{exec, Error, Scalar, SCHEMA_VERSION};

pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const GRADCHECK: i32 = 4;
}

pub const CONFIG_ECHO: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.tfc";
pub const REPORT_FILE: &str = "report.json";
pub const LOSS_FILE: &str = "loss.csv";
pub const TABLE_CSV: &str = "table.csv";
pub const TABLE_JSON: &str = "table.json";

#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: exit::USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. }
            | Error::Format(_)
            | Error::Version { .. }
            | Error::Checksum { .. }
            | Error::UnsupportedImage { .. }
            | Error::MissingFrame { .. }
            | Error::InconsistentGeometry { .. } => exit::IO,
            Error::Diverged { .. } | Error::NonFinite { .. } => exit::DIVERGED,
            _ => exit::USAGE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "triflow", version, about = "Fit and compare tri-plane video representations")]
pub struct Cli {
    /// Run every kernel and every comparison fit on one thread and omit
    /// wall-clock fields, so repeated runs produce identical files.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic video.
    Synth(SynthArgs),
    /// Fit one representation to a video.
    Fit(FitArgs),
    /// Render frames from a checkpoint at normalized times.
    Render(RenderArgs),
    /// Score a checkpoint against a video.
    Eval(EvalArgs),
    /// Fit all four families under a matched parameter budget.
    Compare(CompareArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
}

fn synth_kind_parser() -> impl TypedValueParser<Value = SynthKind> {
    PossibleValuesParser::new(SynthKind::ALL.map(SynthKind::as_str))
        .map(|s| s.parse::<SynthKind>().expect("listed kind"))
}

fn family_parser() -> impl TypedValueParser<Value = Family> {
    PossibleValuesParser::new(Family::ALL.map(Family::as_str)).map(|s| s.parse::<Family>().expect("listed family"))
}

fn holdout_parser() -> impl TypedValueParser<Value = HoldoutMode> {
    PossibleValuesParser::new(["interpolation", "extrapolation", "none"])
        .map(|s| s.parse::<HoldoutMode>().expect("listed mode"))
}

fn scope_parser() -> impl TypedValueParser<Value = Scope> {
    PossibleValuesParser::new(Scope::ALL.map(Scope::as_str)).map(|s| s.parse::<Scope>().expect("listed scope"))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_parser = synth_kind_parser())]
    pub kind: SynthKind,
    #[arg(long, default_value_t = 32)]
    pub frames: usize,
    /// Square frame size; overridden by --height / --width.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pixels per frame along x and y for the translating kinds.
    #[arg(long, num_args = 2, value_names = ["DX", "DY"])]
    pub velocity: Option<Vec<f64>>,
    /// Output directory of PNG frames, or a `.vtf` file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings shared by `fit`, `eval` and `compare`; flags override the
/// config file.
#[derive(Debug, Args)]
pub struct RunOverrides {
    /// JSON run config (see README).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = family_parser())]
    pub family: Option<Family>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Seeds both parameter initialization and batch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_parser = holdout_parser())]
    pub holdout: Option<HoldoutMode>,
    /// Held-out window length K.
    #[arg(long)]
    pub window: Option<usize>,
    /// Tri-plane resolution N.
    #[arg(long)]
    pub resolution: Option<usize>,
    /// Tri-plane feature channels C.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Decoder hidden channels.
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub video: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated normalized times in [0, 1].
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub times: Vec<f64>,
    /// Output directory; frame k is written as `{k:05}.png`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub video: PathBuf,
    /// Defaults to the plan stored in the checkpoint, if any.
    #[arg(long, value_parser = holdout_parser())]
    pub holdout: Option<HoldoutMode>,
    #[arg(long)]
    pub window: Option<usize>,
    /// Metrics JSON path; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub video: PathBuf,
    /// Output directory for the CSV and JSON tables.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of families.
    #[arg(long, value_delimiter = ',', value_parser = family_parser())]
    pub families: Vec<Family>,
    #[command(flatten)]
    pub run: RunOverrides,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_parser = scope_parser(), default_value = "primitives")]
    pub scope: Scope,
    #[arg(long, default_value_t = gradcheck::MIN_TRIALS)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scale the backward rule of this op (negative control).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
    #[arg(long, hide = true, default_value_t = 1.5)]
    pub corrupt_factor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoldoutSpec {
    pub mode: HoldoutMode,
    pub window: usize,
}

impl Default for HoldoutSpec {
    fn default() -> Self {
        HoldoutSpec {
            mode: HoldoutMode::Interpolation,
            window: 3,
        }
    }
}

/// Fully resolved run description; written next to every output and stored
/// inside checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub schema_version: u32,
    pub command: String,
    pub paths: BTreeMap<String, PathBuf>,
    pub rep: RepConfig,
    pub fit: FitConfig,
    pub holdout: HoldoutSpec,
    pub deterministic: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            schema_version: SCHEMA_VERSION,
            command: String::new(),
            paths: BTreeMap::new(),
            rep: RepConfig::default(),
            fit: FitConfig::default(),
            holdout: HoldoutSpec::default(),
            deterministic: false,
        }
    }
}

impl RunSpec {
    /// Load `o.config` (if any) and apply the flag overrides.
    pub fn resolve(command: &str, o: &RunOverrides, deterministic: bool) -> CmdResult<Self> {
        let mut spec = match &o.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Failure::from(Error::Io {
                    path: path.clone(),
                    source: e,
                }))?;
                let spec: RunSpec = serde_json::from_str(&text)
                    .map_err(|e| Failure::usage(format!("invalid config {}: {e}", path.display())))?;
                if spec.schema_version != SCHEMA_VERSION {
                    return Err(Failure::usage(format!(
                        "config schema_version {} is not supported (expected {SCHEMA_VERSION})",
                        spec.schema_version
                    )));
                }
                spec
            }
            None => RunSpec::default(),
        };
        spec.command = command.to_string();
        spec.deterministic = deterministic;
        if let Some(p) = &o.config {
            spec.paths.insert("config".into(), p.clone());
        }
        if let Some(f) = o.family {
            spec.rep.family = f;
        }
        if let Some(s) = o.steps {
            spec.fit.steps = s;
        }
        if let Some(b) = o.batch {
            spec.fit.batch = b;
        }
        if let Some(s) = o.seed {
            spec.rep.seed = s;
            spec.fit.seed = s;
        }
        if let Some(lr) = o.lr {
            spec.fit.adam.lr = lr;
        }
        if o.patience.is_some() {
            spec.fit.patience = o.patience;
        }
        if let Some(m) = o.holdout {
            spec.holdout.mode = m;
        }
        if let Some(k) = o.window {
            spec.holdout.window = k;
        }
        if let Some(n) = o.resolution {
            spec.rep.triplane.resolution = n;
        }
        if let Some(c) = o.channels {
            spec.rep.triplane.channels = c;
        }
        if let Some(h) = o.hidden {
            spec.rep.decoder.hidden_channels = h;
        }
        Ok(spec)
    }
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: Cli) -> CmdResult<i32> {
    exec::set_deterministic(cli.deterministic);
    let det = cli.deterministic;
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|_| exit::OK),
        Command::Fit(a) => cmd_fit(&a, det).map(|_| exit::OK),
        Command::Render(a) => cmd_render(&a).map(|_| exit::OK),
        Command::Eval(a) => cmd_eval(&a).map(|_| exit::OK),
        Command::Compare(a) => cmd_compare(&a, det).map(|_| exit::OK),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    fs::write(path, bytes).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn create_dir(path: &Path) -> CmdResult {
    fs::create_dir_all(path).map_err(|e| Failure::from(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_file(path, text)
}

fn is_vtf(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("vtf"))
}

/// Where the resolved config goes for an output path: inside an output
/// directory, or beside a `.vtf` file.
pub fn echo_path(out: &Path) -> PathBuf {
    if is_vtf(out) {
        out.with_extension("config.json")
    } else {
        out.join(CONFIG_ECHO)
    }
}

pub fn cmd_synth(a: &SynthArgs) -> CmdResult<Video> {
    let mut params = SynthParams::new(
        a.kind,
        a.frames,
        a.height.unwrap_or(a.size),
        a.width.unwrap_or(a.size),
        a.seed,
    );
    if let Some(v) = &a.velocity {
        params = params.with_velocity(v[0], v[1]);
    }
    let video = video::synth::generate(&params)?;
    video::save_video(&video, &a.out)?;
    let echo = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "synth",
        "synth": params,
        "out": a.out,
    });
    write_json(&echo_path(&a.out), &echo)?;
    Ok(video)
}

fn load_input_video(path: &Path) -> CmdResult<Video> {
    Ok(video::load_video(path)?)
}

pub fn cmd_fit(a: &FitArgs, deterministic: bool) -> CmdResult<FitReport> {
    let mut spec = RunSpec::resolve("fit", &a.run, deterministic)?;
    let video = load_input_video(&a.video)?;
    spec.rep.video = video.geometry();
    spec.paths.insert("video".into(), a.video.clone());
    spec.paths.insert("out".into(), a.out.clone());
    spec.rep.validate()?;
    spec.fit.validate()?;
    let plan = fit::make_holdout(video.len(), spec.holdout.mode, spec.holdout.window)?;

    create_dir(&a.out)?;
    write_json(&a.out.join(CONFIG_ECHO), &spec)?;
    let mut rep = Representation::new(spec.rep.clone())?;
    let report = fit::fit(&mut rep, &video, &plan, &spec.fit)?;
    // Paths stay out of the checkpoint so it depends only on config and data.
    let stored = serde_json::to_value(RunSpec {
        paths: BTreeMap::new(),
        ..spec.clone()
    })
    .map_err(Error::from)?;
    video::save_checkpoint(&rep, Some(stored), a.out.join(CHECKPOINT_FILE))?;
    write_json(&a.out.join(REPORT_FILE), &report)?;
    write_file(&a.out.join(LOSS_FILE), report.loss_csv())?;

    let eval = report
        .eval_mean
        .map(|m| format!(", eval PSNR {:.2} dB", m.psnr_db))
        .unwrap_or_default();
    println!(
        "{}: {} params, {} steps, train PSNR {:.2} dB{eval}",
        report.family, report.param_count, report.steps_run, report.train_mean.psnr_db
    );
    Ok(report)
}

pub fn cmd_render(a: &RenderArgs) -> CmdResult<Vec<PathBuf>> {
    if let Some(t) = a.times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Failure::usage(format!("render time {t} outside [0, 1]")));
    }
    let ck = video::load_checkpoint(&a.checkpoint)?;
    let times: Vec<Scalar> = a.times.iter().map(|&t| t as Scalar).collect();
    let frames = ck.rep.render_frames(&times)?;
    create_dir(&a.out)?;
    let mut written = Vec::with_capacity(frames.len());
    for (k, f) in frames.iter().enumerate() {
        let p = a.out.join(video::frame_file_name(k));
        video::write_png(f, &p)?;
        written.push(p);
    }
    let echo = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "render",
        "checkpoint": a.checkpoint,
        "times": a.times,
        "out": a.out,
    });
    write_json(&a.out.join(CONFIG_ECHO), &echo)?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFrame {
    pub index: usize,
    pub split: String,
    #[serde(flatten)]
    pub metric: FrameMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub checkpoint: PathBuf,
    pub video: PathBuf,
    pub plan: fit::HoldoutPlan,
    pub frames: Vec<EvalFrame>,
    pub all_mean: MeanMetrics,
    pub train_mean: Option<MeanMetrics>,
    pub eval_mean: Option<MeanMetrics>,
}

fn stored_holdout(ck: &Checkpoint) -> Option<HoldoutSpec> {
    let v = ck.fit_config.as_ref()?.get("holdout")?;
    serde_json::from_value(v.clone()).ok()
}

pub fn cmd_eval(a: &EvalArgs) -> CmdResult<EvalReport> {
    let ck = video::load_checkpoint(&a.checkpoint)?;
    let video = load_input_video(&a.video)?;
    let (want, got) = (ck.rep.config().video, video.geometry());
    if want != got {
        return Err(Failure::usage(format!(
            "checkpoint expects {}x{}x{} video (frames x height x width), {} is {}x{}x{}",
            want.frames,
            want.height,
            want.width,
            a.video.display(),
            got.frames,
            got.height,
            got.width
        )));
    }
    let mut hold = stored_holdout(&ck).unwrap_or(HoldoutSpec {
        mode: HoldoutMode::None,
        window: 0,
    });
    if let Some(m) = a.holdout {
        hold.mode = m;
    }
    if let Some(k) = a.window {
        hold.window = k;
    }
    let plan = fit::make_holdout(video.len(), hold.mode, hold.window)?;
    let all: Vec<usize> = (0..video.len()).collect();
    let metrics = fit::evaluate_frames(&ck.rep, &video, &all)?;
    let pick = |idx: &[usize]| -> Vec<FrameMetric> { idx.iter().map(|&k| metrics[k]).collect() };
    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        checkpoint: a.checkpoint.clone(),
        video: a.video.clone(),
        frames: metrics
            .iter()
            .map(|m| EvalFrame {
                index: m.index,
                split: if plan.is_train(m.index) { "train" } else { "eval" }.into(),
                metric: *m,
            })
            .collect(),
        all_mean: MeanMetrics::of(&metrics).expect("video has frames"),
        train_mean: MeanMetrics::of(&pick(&plan.train)),
        eval_mean: MeanMetrics::of(&pick(&plan.eval)),
        plan,
    };
    match &a.out {
        Some(p) => {
            write_json(p, &report)?;
            let echo = json!({
                "schema_version": SCHEMA_VERSION,
                "command": "eval",
                "checkpoint": a.checkpoint,
                "video": a.video,
                "holdout": hold,
                "out": p,
            });
            write_json(&p.with_extension("config.json"), &echo)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?),
    }
    Ok(report)
}

pub fn cmd_compare(a: &CompareArgs, deterministic: bool) -> CmdResult<fit::ComparisonTable> {
    let mut spec = RunSpec::resolve("compare", &a.run, deterministic)?;
    if spec.rep.family != Family::TriPlane {
        return Err(Failure::usage(
            "compare sizes every family against a tri-plane reference; set rep.family to triplane",
        ));
    }
    let video = load_input_video(&a.video)?;
    spec.rep.video = video.geometry();
    spec.paths.insert("video".into(), a.video.clone());
    spec.paths.insert("out".into(), a.out.clone());
    spec.rep.validate()?;
    spec.fit.validate()?;
    let plan = fit::make_holdout(video.len(), spec.holdout.mode, spec.holdout.window)?;
    let families: Vec<Family> = if a.families.is_empty() {
        Family::ALL.to_vec()
    } else {
        a.families.clone()
    };

    create_dir(&a.out)?;
    write_json(&a.out.join(CONFIG_ECHO), &spec)?;
    let table = fit::run_comparison(&video, &spec.rep, &families, &plan, &spec.fit)?;
    write_file(&a.out.join(TABLE_CSV), table.to_csv())?;
    write_json(&a.out.join(TABLE_JSON), &table)?;

    println!("{:<14} {:>8} {:>8} {:>8} {:>10}", "family", "params", "ssim", "psnr", "status");
    for r in &table.rows {
        let ssim = r.eval_mean.and_then(|m| m.ssim).map(|s| format!("{s:.4}")).unwrap_or("-".into());
        let psnr = r.eval_psnr().map(|p| format!("{p:.2}")).unwrap_or("-".into());
        let status = if r.succeeded() { "ok" } else { "failed" };
        println!("{:<14} {:>8} {:>8} {:>8} {:>10}", r.family.as_str(), r.params, ssim, psnr, status);
        if let Some(e) = &r.error {
            eprintln!("{}: {e}", r.family);
        }
    }
    Ok(table)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> CmdResult<i32> {
    let defaults = SuiteOptions::default();
    let opts = SuiteOptions {
        trials: a.trials,
        seed: a.seed,
        epsilon: a.epsilon.unwrap_or(defaults.epsilon),
        tolerance: a.tolerance.unwrap_or(defaults.tolerance),
        fault: a.corrupt.clone().map(|op| (op, a.corrupt_factor)),
    };
    if let Some((op, _)) = &opts.fault {
        if !gradcheck::suite_ops(a.scope).contains(&op.as_str()) {
            return Err(Failure::usage(format!("`{op}` is not checked in scope {}", a.scope)));
        }
    }
    let report = gradcheck::run_suite(a.scope, &opts)?;
    for op in &report.ops {
        println!(
            "{:<24} {:>10.3e} {}",
            op.op,
            op.max_rel_error,
            if op.passed { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} ops, tolerance {:.0e}: {}",
        report.ops.len(),
        report.tolerance,
        if report.passed { "passed" } else { "FAILED" }
    );
    if let Some(p) = &a.out {
        write_json(p, &report)?;
    }
    Ok(if report.passed { exit::OK } else { exit::GRADCHECK })
}
