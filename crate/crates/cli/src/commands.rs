//! Subcommand arguments and implementations.

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use semsentry_core::baselines::{
    calibrate, fit_baseline, read_model, score_frame, write_model, BaselineModel, CalibratedDetector, ScoreKind,
};
use semsentry_core::describer::VocabularyCatalog;
use semsentry_core::episodes::{append_jsonl, read_episodes, read_verdicts, write_episodes, write_jsonl, write_verdicts};
use semsentry_core::eval::{
    evaluate, render_report, Entry, ReferenceTables, Report, ReportFormat,
};
use semsentry_core::monitor::{
    summarize_probe, Backend, Monitor, PromptTemplate, RemoteBackend, ReplayBackend, ReplayMode, RuleOracle,
    RuleOracleConfig,
};
use semsentry_core::scenegen::{generate, GenConfig};
use semsentry_core::{Classification, Episode, FrameVerdict, MonitorVerdict, ScenarioClass};

use crate::config::{require_file, BackendKind, RunConfig};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "semsentry", version, about = "Semantic anomaly monitoring experiments")]
pub struct Cli {
    /// Log filter, e.g. `info` or `semsentry_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    pub log: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic episode corpus.
    Gen(GenArgs),
    /// Query a backend on every sampled frame; resumes an existing output.
    Monitor(MonitorArgs),
    /// Fit the PCA + mixture baseline on nominal frame embeddings.
    Fit(FitArgs),
    /// Threshold a baseline score at a quantile of its nominal values.
    Calibrate(CalibrateArgs),
    /// Emit flag verdicts from a calibrated detector.
    Score(ScoreArgs),
    /// Compute metrics for one or more verdict files and render a report.
    Eval(EvalArgs),
    /// Query one frame under several orderings of its description.
    Probe(ProbeArgs),
}

impl Command {
    pub fn run(&self) -> Result<String, CliError> {
        match self {
            Command::Gen(a) => cmd_gen(a),
            Command::Monitor(a) => cmd_monitor(a),
            Command::Fit(a) => cmd_fit(a),
            Command::Calibrate(a) => cmd_calibrate(a),
            Command::Score(a) => cmd_score(a),
            Command::Eval(a) => cmd_eval(a),
            Command::Probe(a) => cmd_probe(a),
        }
    }
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator config (TOML).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Flags shared by every command that reads a run config and episodes.
#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Run config (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub episodes: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct BackendArgs {
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    /// `driving`, `manipulation` or a template file; chosen per episode when absent.
    #[arg(long)]
    pub template: Option<String>,
    /// Rule table for the oracle backend.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Replay cache file.
    #[arg(long)]
    pub replay: Option<PathBuf>,
    /// Fill replay-cache misses from this backend and append them.
    #[arg(long, value_enum)]
    pub record_from: Option<BackendKind>,
    #[arg(long)]
    pub vocabulary: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MonitorArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Query every n-th frame.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub pca_dim: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training classes (comma separated); defaults to the nominal classes.
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<ScenarioClass>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `gmm_nll`, `mahalanobis_min`, `recon_error` or `external:NAME`.
    #[arg(long)]
    pub score: Option<String>,
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<ScenarioClass>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// `LABEL=PATH` or `PATH` (label from the file stem); repeatable.
    #[arg(long = "verdicts", required = true)]
    pub verdicts: Vec<String>,
    /// Reference tables to compare against; `bundled` for the shipped set.
    #[arg(long)]
    pub compare: Option<String>,
    /// `LABEL=REFERENCE` pairs; unmatched labels use their own name, then `llm`.
    #[arg(long = "reference", value_delimiter = ',')]
    pub reference: Vec<String>,
    /// Text report path; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub backend: BackendArgs,
    #[arg(long)]
    pub episode: String,
    #[arg(long)]
    pub timestep: u64,
    /// Permutation seeds.
    #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2, 3, 4, 5])]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn required<'a>(flag: Option<&'a PathBuf>, file: Option<&'a PathBuf>, name: &str) -> Result<&'a Path, CliError> {
    flag.or(file)
        .map(PathBuf::as_path)
        .ok_or_else(|| CliError::Usage(format!("--{name} is required (or set paths.{name} in the run config)")))
}

fn load_episodes(common: &CommonArgs, config: &RunConfig) -> Result<Vec<Episode>, CliError> {
    let path = required(common.episodes.as_ref(), config.paths.episodes.as_ref(), "episodes")?;
    require_file(path, "episode file")?;
    Ok(read_episodes(path)?)
}

fn select<'a>(episodes: &'a [Episode], classes: &[ScenarioClass]) -> Vec<&'a Episode> {
    episodes.iter().filter(|e| classes.contains(&e.scenario_class())).collect()
}

pub fn cmd_gen(args: &GenArgs) -> Result<String, CliError> {
    require_file(&args.config, "generator config")?;
    let mut config = GenConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let episodes = generate(&config)?;
    write_episodes(&episodes, &args.out)?;
    let frames: usize = episodes.iter().map(|e| e.frames().len()).sum();
    let intervals: usize = episodes.iter().map(|e| e.anomaly_intervals().len()).sum();
    Ok(format!("wrote {} episodes ({frames} frames, {intervals} anomaly intervals) to {}", episodes.len(), args.out.display()))
}

fn build_backend(kind: BackendKind, args: &BackendArgs, config: &RunConfig, depth: u8) -> Result<Box<dyn Backend>, CliError> {
    match kind {
        BackendKind::Oracle => {
            let rules = match args.rules.as_ref().or(config.paths.rules.as_ref()) {
                Some(path) => {
                    require_file(path, "rule table")?;
                    RuleOracleConfig::load(path)?
                }
                None => RuleOracleConfig::combined(),
            };
            Ok(Box::new(RuleOracle::new(&rules)?))
        }
        BackendKind::Remote => Ok(Box::new(RemoteBackend::new(config.remote.to_remote_config())?)),
        BackendKind::Replay => {
            let path = required(args.replay.as_ref(), config.paths.replay.as_ref(), "replay")?;
            let mode = match args.record_from {
                None => ReplayMode::Strict,
                Some(BackendKind::Replay) => return Err(CliError::Usage("--record-from cannot be replay".into())),
                Some(inner) if depth == 0 => ReplayMode::Record(build_backend(inner, args, config, 1)?),
                Some(_) => unreachable!("nested record backends are rejected above"),
            };
            Ok(Box::new(ReplayBackend::open(path, mode)?))
        }
    }
}

/// Templates by name, chosen per episode unless one is forced.
struct Templates {
    forced: Option<PromptTemplate>,
    driving: PromptTemplate,
    manipulation: PromptTemplate,
}

impl Templates {
    fn new(spec: Option<&str>) -> Result<Self, CliError> {
        let forced = match spec {
            None => None,
            Some("driving") => Some(PromptTemplate::driving()),
            Some("manipulation") => Some(PromptTemplate::manipulation()),
            Some(path) => {
                require_file(Path::new(path), "template")?;
                Some(PromptTemplate::load(Path::new(path), None)?)
            }
        };
        Ok(Self { forced, driving: PromptTemplate::driving(), manipulation: PromptTemplate::manipulation() })
    }

    fn for_episode(&self, episode: &Episode) -> &PromptTemplate {
        match &self.forced {
            Some(t) => t,
            None if episode.scenario_class().is_driving() => &self.driving,
            None => &self.manipulation,
        }
    }
}

struct MonitorSetup {
    backend: Box<dyn Backend>,
    templates: Templates,
    vocabulary: VocabularyCatalog,
    config: RunConfig,
}

fn monitor_setup(common: &CommonArgs, args: &BackendArgs, stride: Option<usize>) -> Result<MonitorSetup, CliError> {
    let mut config = RunConfig::load_or_default(common.config.as_deref())?;
    if let Some(s) = stride {
        config.sampler.stride = s;
    }
    if let Some(n) = args.max_in_flight {
        config.sampler.max_in_flight = n;
    }
    config.validate()?;
    let vocabulary = match args.vocabulary.as_ref().or(config.paths.vocabulary.as_ref()) {
        Some(path) => {
            require_file(path, "vocabulary")?;
            VocabularyCatalog::load(path)?
        }
        None => VocabularyCatalog::default(),
    };
    let templates = Templates::new(args.template.as_deref().or(config.paths.template.as_deref()))?;
    let backend = build_backend(args.backend.unwrap_or(config.backend), args, &config, 0)?;
    Ok(MonitorSetup { backend, templates, vocabulary, config })
}

fn key(v: &FrameVerdict) -> (String, u64) {
    (v.episode_id().to_string(), v.timestep())
}

pub fn cmd_monitor(args: &MonitorArgs) -> Result<String, CliError> {
    let setup = monitor_setup(&args.common, &args.backend, args.stride)?;
    let episodes = load_episodes(&args.common, &setup.config)?;
    let out = required(args.out.as_ref(), setup.config.paths.out.as_ref(), "out")?;

    // Resume: keep parsed and unparseable verdicts, retry failed ones.
    let previous = if out.exists() { read_verdicts(out)? } else { Vec::new() };
    let mut done: HashMap<String, BTreeSet<u64>> = HashMap::new();
    for v in previous.iter().filter(|v| !v.is_failed()) {
        done.entry(v.episode_id().to_string()).or_default().insert(v.timestep());
    }
    let reused = done.values().map(BTreeSet::len).sum::<usize>();

    let mut fresh: Vec<FrameVerdict> = Vec::new();
    let mut failure = None;
    let empty = BTreeSet::new();
    for (i, episode) in episodes.iter().enumerate() {
        let monitor = Monitor::new(setup.templates.for_episode(episode), setup.backend.as_ref(), &setup.vocabulary, setup.config.sampler.clone())?;
        match monitor.monitor_remaining(episode, done.get(episode.id()).unwrap_or(&empty)) {
            Ok(verdicts) => {
                // Appended as we go so an interrupted run keeps its progress.
                append_jsonl(&verdicts, out)?;
                fresh.extend(verdicts);
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        tracing::info!(episode = episode.id(), done = i + 1, total = episodes.len(), "monitored");
    }

    // Merge: fresh verdicts replace failed ones from earlier runs; output is
    // in corpus order regardless of how many runs produced it.
    let mut merged: HashMap<(String, u64), FrameVerdict> = HashMap::new();
    for v in previous.into_iter().chain(fresh.iter().cloned()) {
        merged.insert(key(&v), v);
    }
    let order: HashMap<&str, usize> = episodes.iter().enumerate().map(|(i, e)| (e.id(), i)).collect();
    let mut all: Vec<FrameVerdict> = merged.into_values().collect();
    all.sort_by_key(|v| (order.get(v.episode_id()).copied().unwrap_or(usize::MAX), v.episode_id().to_string(), v.timestep()));
    write_verdicts(&all, out)?;

    if let Some(e) = failure {
        return Err(e.into());
    }
    let withheld = all.iter().filter(|v| v.overall().is_none()).count();
    Ok(format!(
        "wrote {} verdicts to {} ({} new, {reused} reused, {withheld} withheld)",
        all.len(),
        out.display(),
        fresh.len()
    ))
}

pub fn cmd_fit(args: &FitArgs) -> Result<String, CliError> {
    let mut config = RunConfig::load_or_default(args.common.config.as_deref())?;
    let episodes = load_episodes(&args.common, &config)?;
    let out = required(args.out.as_ref(), config.paths.model.as_ref(), "out")?;
    if let Some(k) = args.pca_dim {
        config.baseline.pca_dim = k;
    }
    if let Some(c) = args.components {
        config.baseline.components = c;
    }
    if let Some(seed) = args.seed.or(config.seed) {
        config.baseline.gmm.seed = seed;
    }
    let classes = if args.classes.is_empty() { &config.nominal_classes } else { &args.classes };
    let train = select(&episodes, classes);
    let vectors = semsentry_core::baselines::collect_embeddings(train.iter().copied())?;
    let model = fit_baseline(&vectors, &config.baseline)?;
    write_model(&model, out)?;
    Ok(format!(
        "fit on {} frames from {} episodes: PCA {} -> {}, {} mixture components; wrote {}",
        vectors.len(),
        train.len(),
        model.pca.input_dim(),
        model.pca.output_dim(),
        model.gmm.as_ref().map_or(0, |g| g.n_components()),
        out.display()
    ))
}

fn load_model(path: Option<&Path>, kind: &ScoreKind) -> Result<Option<BaselineModel>, CliError> {
    match (path, kind) {
        (_, ScoreKind::External(_)) => Ok(None),
        (Some(p), _) => {
            require_file(p, "model")?;
            Ok(Some(read_model(p)?))
        }
        (None, _) => Err(CliError::Usage(format!("--model is required for score `{kind}`"))),
    }
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<String, CliError> {
    let mut config = RunConfig::load_or_default(args.common.config.as_deref())?;
    if let Some(q) = args.quantile {
        config.quantile = q;
    }
    config.validate()?;
    let episodes = load_episodes(&args.common, &config)?;
    let out = required(args.out.as_ref(), config.paths.detector.as_ref(), "out")?;
    let kind: ScoreKind = args.score.as_deref().unwrap_or(&config.score).parse()?;
    let model = load_model(args.model.as_deref().or(config.paths.model.as_deref()), &kind)?;
    let classes = if args.classes.is_empty() { &config.nominal_classes } else { &args.classes };
    let mut scores = Vec::new();
    for episode in select(&episodes, classes) {
        for frame in episode.frames() {
            scores.push(score_frame(&kind, model.as_ref(), episode.id(), frame)?);
        }
    }
    let detector = calibrate(kind, &scores, config.quantile)?;
    write_model(&detector, out)?;
    Ok(format!(
        "threshold {:.6} at quantile {} over {} scores (flags {:.4} of them); wrote {}",
        detector.threshold(),
        detector.quantile(),
        scores.len(),
        detector.flagged_fraction(&scores),
        out.display()
    ))
}

pub fn cmd_score(args: &ScoreArgs) -> Result<String, CliError> {
    let config = RunConfig::load_or_default(args.common.config.as_deref())?;
    let episodes = load_episodes(&args.common, &config)?;
    let out = required(args.out.as_ref(), config.paths.out.as_ref(), "out")?;
    let detector_path = required(args.detector.as_ref(), config.paths.detector.as_ref(), "detector")?;
    require_file(detector_path, "detector")?;
    let detector: CalibratedDetector = read_model(detector_path)?;
    let kind = detector.score_kind().clone();
    let model = load_model(args.model.as_deref().or(config.paths.model.as_deref()), &kind)?;
    let stride = args.stride.unwrap_or(config.sampler.stride).max(1);
    let mut verdicts = Vec::new();
    for episode in &episodes {
        for frame in episode.frames().iter().step_by(stride) {
            let score = score_frame(&kind, model.as_ref(), episode.id(), frame)?;
            verdicts.push(FrameVerdict::Ok(MonitorVerdict {
                episode_id: episode.id().to_string(),
                timestep: frame.timestep(),
                per_object: Vec::new(),
                overall: detector.flag(score),
                rationale: format!("{kind} {score:.6} threshold {:.6}", detector.threshold()),
            }));
        }
    }
    write_verdicts(&verdicts, out)?;
    let flagged = verdicts.iter().filter(|v| v.overall() == Some(Classification::Anomaly)).count();
    Ok(format!("scored {} frames, {flagged} flagged; wrote {}", verdicts.len(), out.display()))
}

fn parse_verdict_spec(spec: &str) -> (String, PathBuf) {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() => (label.to_string(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(spec);
            let label = path.file_stem().map_or_else(|| spec.to_string(), |s| s.to_string_lossy().into_owned());
            (label, path)
        }
    }
}

fn load_reference(spec: &str) -> Result<ReferenceTables, CliError> {
    if spec == "bundled" {
        return Ok(ReferenceTables::bundled());
    }
    let mut path = PathBuf::from(spec);
    if !path.exists() && path.extension().is_none() {
        path.set_extension("toml");
    }
    require_file(&path, "reference tables")?;
    Ok(ReferenceTables::load(&path)?)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let config = RunConfig::load_or_default(args.common.config.as_deref())?;
    let episodes = load_episodes(&args.common, &config)?;
    let reference = args.compare.as_deref().map(load_reference).transpose()?;
    let explicit: HashMap<&str, &str> = args
        .reference
        .iter()
        .map(|pair| pair.split_once('=').ok_or_else(|| CliError::Usage(format!("--reference `{pair}` is not LABEL=REFERENCE"))))
        .collect::<Result<_, _>>()?;

    let mut report = Report::default();
    let mut seen = BTreeSet::new();
    for spec in &args.verdicts {
        let (label, path) = parse_verdict_spec(spec);
        if !seen.insert(label.clone()) {
            return Err(CliError::Usage(format!("verdict label `{label}` given twice")));
        }
        require_file(&path, "verdict file")?;
        let verdicts = read_verdicts(&path)?;
        let (driving, manipulation) = evaluate(&episodes, &verdicts)?;
        let pick = |has: &dyn Fn(&str) -> bool| -> Option<String> {
            reference.as_ref()?;
            if let Some(r) = explicit.get(label.as_str()) {
                return Some(r.to_string());
            }
            [label.as_str(), "llm"].into_iter().find(|l| has(l)).map(str::to_string)
        };
        if let Some(metrics) = driving {
            let r = pick(&|l| reference.as_ref().is_some_and(|t| t.driving.contains_key(l)));
            report.driving.push(Entry { label: label.clone(), reference: r, metrics });
        }
        if let Some(metrics) = manipulation {
            let r = pick(&|l| {
                reference.as_ref().is_some_and(|t| {
                    t.manipulation.detection_rate.contains_key(l) || t.manipulation.confusion.contains_key(l)
                })
            });
            report.manipulation.push(Entry { label: label.clone(), reference: r, metrics });
        }
    }

    let text = render_report(&report, reference.as_ref(), ReportFormat::Text);
    if let Some(path) = args.csv.as_ref().or(config.paths.csv.as_ref()) {
        write_text(path, &render_report(&report, reference.as_ref(), ReportFormat::Csv))?;
    }
    match args.out.as_ref().or(config.paths.out.as_ref()) {
        Some(path) => {
            write_text(path, &text)?;
            Ok(format!("wrote report to {}", path.display()))
        }
        None => Ok(text.trim_end().to_string()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("writing {}: {e}", path.display())))
}

pub fn cmd_probe(args: &ProbeArgs) -> Result<String, CliError> {
    let setup = monitor_setup(&args.common, &args.backend, None)?;
    let episodes = load_episodes(&args.common, &setup.config)?;
    let episode = episodes
        .iter()
        .find(|e| e.id() == args.episode)
        .ok_or_else(|| CliError::Data(format!("episode `{}` not in the corpus", args.episode)))?;
    let monitor = Monitor::new(setup.templates.for_episode(episode), setup.backend.as_ref(), &setup.vocabulary, setup.config.sampler.clone())?;
    let records = monitor.probe_order(episode, args.timestep, &args.seeds)?;
    if let Some(out) = args.out.as_ref() {
        write_jsonl(&records, out)?;
    }
    let s = summarize_probe(&records);
    Ok(format!(
        "{} permutations: {} anomaly votes, {} withheld, consistent = {}",
        s.permutations, s.anomaly_votes, s.withheld, s.consistent
    ))
}
