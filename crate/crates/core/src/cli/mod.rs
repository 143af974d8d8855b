//! `tdp` command line: data generation, clustering, training, planning,
//! evaluation, paradigm comparison and plotting.

pub mod config;
pub mod plot;

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::anchors::{kmeans_cluster, read_anchor_file, write_anchor_file, DEFAULT_N_ANCHOR};
use crate::denoiser::{read_checkpoint, write_checkpoint, Checkpoint, DenoiserConfig, ModelKind};
use crate::error::{Error, FileContext, Result};
use crate::eval::{diversity, mini_pdm, run_benchmark, BenchmarkConfig, Paradigm, PlannerEntry};
use crate::plan::{multi_mode_report, plan_checkpoint, read_plan, write_plan, InitMode, PlanConfig};
use crate::plan::{DEFAULT_N_INFER, DEFAULT_STEPS, DEFAULT_VANILLA_STEPS};
use crate::scene::{generate_dataset, read_dataset, write_dataset, RouteIntent, Scene};
use crate::schedule::{build_linear_schedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_TOTAL_STEPS, DEFAULT_TRUNC_STEPS};
use crate::train::{parse_metrics, train_model, TrainConfig, METRICS_HEADER};

pub use config::Settings;

#[derive(Debug, Parser)]
#[command(name = "tdp", version, about = "Truncated diffusion trajectory planner on synthetic driving scenes")]
pub struct Cli {
    /// Cap on worker threads for parallel sections.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Settings file of `key = value` lines; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene dataset.
    GenData(GenDataArgs),
    /// Cluster demonstrations into an anchor file.
    Cluster(ClusterArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Plan one scene and write the ranked candidates.
    Plan(PlanArgs),
    /// Score a checkpoint over a dataset, or a plan file against its scene.
    Eval(EvalArgs),
    /// Benchmark several planning paradigms on one dataset.
    Compare(CompareArgs),
    /// Render a scene with an optional plan, or a training history, as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Obstacle density in [0, 1].
    #[arg(long)]
    pub difficulty: Option<f64>,
    /// Restrict to one intent instead of the uniform mixture.
    #[arg(long)]
    pub intent: Option<RouteIntent>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Required for truncated and vocabulary models.
    #[arg(long)]
    pub anchors: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// truncated, vanilla, regression or vocabulary.
    #[arg(long)]
    pub kind: Option<ModelKind>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of cascade stages.
    #[arg(long)]
    pub cascade: Option<usize>,
    /// Truncation step of the noise schedule.
    #[arg(long)]
    pub trunc: Option<usize>,
    /// Held-out dataset for validation loss.
    #[arg(long)]
    pub validation: Option<PathBuf>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Per-epoch history, appended to.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Supervise only the last cascade stage.
    #[arg(long)]
    pub no_deep_supervision: bool,
    #[arg(long)]
    pub no_spatial: bool,
    #[arg(long)]
    pub no_agent: bool,
    #[arg(long)]
    pub no_time: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Scene index within the dataset.
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub n_infer: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// anchored, gaussian or extrapolated.
    #[arg(long)]
    pub init: Option<String>,
    /// Number of candidates listed in the report.
    #[arg(long)]
    pub top: Option<usize>,
    /// Plan file to write.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, conflicts_with = "plan", required_unless_present = "plan")]
    pub checkpoint: Option<PathBuf>,
    /// Score this plan file against scene `--index` instead of running a checkpoint.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long)]
    pub n_infer: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Machine-readable row file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated list; defaults to every paradigm.
    #[arg(long)]
    pub paradigms: Option<String>,
    /// Truncated checkpoint, also the decoder of the extrapolated-prior baseline.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vanilla_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub regression_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub vocabulary_checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub n_infer: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub vanilla_steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Machine-readable report file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, required_unless_present = "metrics")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub index: Option<usize>,
    #[arg(long, conflicts_with = "metrics")]
    pub plan: Option<PathBuf>,
    /// Plot a training history instead of a scene.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    if let Some(n) = settings.pick_opt("threads", cli.threads)? {
        if n == 0 {
            return Err(Error::ParameterBounds("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(&a, &settings),
        Command::Cluster(a) => cluster(&a, &settings),
        Command::Train(a) => train(&a, &settings),
        Command::Plan(a) => plan(&a, &settings),
        Command::Eval(a) => eval(&a, &settings),
        Command::Compare(a) => compare(&a, &settings),
        Command::Plot(a) => plot(&a, &settings),
    }
}

fn load_dataset(path: &Path) -> Result<Vec<Scene>> {
    read_dataset(path).in_file(path)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint<f64>> {
    read_checkpoint(path).in_file(path)
}

fn scene_at(scenes: &[Scene], index: usize) -> Result<&Scene> {
    scenes
        .get(index)
        .ok_or_else(|| Error::ParameterBounds(format!("scene index {index} outside dataset of {}", scenes.len())))
}

fn positive(name: &str, v: usize) -> Result<usize> {
    if v == 0 {
        return Err(Error::ParameterBounds(format!("--{name} must be >= 1")));
    }
    Ok(v)
}

fn gen_data(a: &GenDataArgs, s: &Settings) -> Result<()> {
    let count = s.pick("count", a.count, 1000usize)?;
    let seed = s.pick("seed", a.seed, 0u64)?;
    let difficulty = s.pick("difficulty", a.difficulty, 0.5f64)?;
    let intent = s.pick_opt("intent", a.intent)?;
    if !(0.0..=1.0).contains(&difficulty) {
        return Err(Error::ParameterBounds(format!("--difficulty {difficulty} outside [0, 1]")));
    }
    let (scenes, failures) = generate_dataset(count, difficulty, seed, intent)?;
    write_dataset(&a.out, &scenes).in_file(&a.out)?;
    let mut per_intent: BTreeMap<&str, usize> = BTreeMap::new();
    for sc in &scenes {
        *per_intent.entry(sc.intent.name()).or_default() += 1;
    }
    println!("scenes {} generation_failures {failures}", scenes.len());
    for (intent, n) in per_intent {
        println!("  {intent} {n}");
    }
    Ok(())
}

fn cluster(a: &ClusterArgs, s: &Settings) -> Result<()> {
    let k = positive("k", s.pick("k", a.k, DEFAULT_N_ANCHOR)?)?;
    let seed = s.pick("seed", a.seed, 0u64)?;
    let max_iters = positive("max-iters", s.pick("max-iters", a.max_iters, 100usize)?)?;
    let scenes = load_dataset(&a.dataset)?;
    if k > scenes.len() {
        return Err(Error::Cardinality(format!("k = {k} exceeds dataset size {}", scenes.len())));
    }
    let demos: Vec<_> = scenes.iter().map(|sc| sc.gt_trajectory.clone()).collect();
    let anchors = kmeans_cluster(&demos, k, max_iters, seed)?;
    write_anchor_file(&a.out, &anchors).in_file(&a.out)?;
    println!("anchors {} from {} demonstrations", anchors.len(), demos.len());
    Ok(())
}

fn train(a: &TrainArgs, s: &Settings) -> Result<()> {
    let defaults = TrainConfig::default();
    let config = TrainConfig {
        lambda: s.pick("lambda", a.lambda, defaults.lambda)?,
        learning_rate: s.pick("lr", a.lr, defaults.learning_rate)?,
        epochs: s.pick("epochs", a.epochs, defaults.epochs)?,
        batch_size: s.pick("batch-size", a.batch_size, defaults.batch_size)?,
        seed: s.pick("seed", a.seed, defaults.seed)?,
        deep_supervision: !a.no_deep_supervision,
        kind: s.pick("kind", a.kind, defaults.kind)?,
        eval_every: s.pick("eval-every", a.eval_every, defaults.eval_every)?,
    };
    config.validate()?;
    let model = DenoiserConfig {
        n_stages: s.pick("cascade", a.cascade, DenoiserConfig::default().n_stages)?,
        spatial: !a.no_spatial,
        agent: !a.no_agent,
        time_modulation: !a.no_time,
        ..DenoiserConfig::default()
    };
    model.validate()?;
    let trunc = s.pick("trunc", a.trunc, DEFAULT_TRUNC_STEPS)?;
    let schedule = build_linear_schedule(DEFAULT_TOTAL_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END, trunc)?;
    let needs_anchors = matches!(config.kind, ModelKind::Truncated | ModelKind::Vocabulary);
    if needs_anchors && a.anchors.is_none() {
        return Err(Error::MissingInput(format!("--anchors is required for {} training", config.kind)));
    }

    let dataset = load_dataset(&a.dataset)?;
    if dataset.is_empty() {
        return Err(Error::Cardinality("training dataset is empty".into()));
    }
    let validation = match &a.validation {
        Some(p) => load_dataset(p)?,
        None => Vec::new(),
    };
    let anchors = match (&a.anchors, needs_anchors) {
        (Some(p), true) => Some(read_anchor_file(p).in_file(p)?),
        _ => None,
    };

    let mut metrics = match &a.metrics {
        Some(p) => {
            let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
            let mut f = OpenOptions::new().create(true).append(true).open(p).in_file(p)?;
            if fresh {
                writeln!(f, "{METRICS_HEADER}").in_file(p)?;
            }
            Some((f, p.clone()))
        }
        None => None,
    };
    let mut write_err = None;
    info!("training {} on {} scenes for {} epochs", config.kind, dataset.len(), config.epochs);
    let (ck, history) = train_model(&dataset, &validation, anchors, schedule, &model, &config, |m| {
        if let Some((f, p)) = &mut metrics {
            if let Err(e) = writeln!(f, "{}", m.to_row()).and_then(|_| f.flush()) {
                write_err.get_or_insert(Error::InFile { path: p.display().to_string(), source: Box::new(e.into()) });
            }
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    write_checkpoint(&a.out, &ck).in_file(&a.out)?;
    match (history.first(), history.last()) {
        (Some(f), Some(l)) => println!("{} epochs {} loss {:.6} -> {:.6}", config.kind, history.len(), f.loss, l.loss),
        _ => println!("{} epochs 0", config.kind),
    }
    Ok(())
}

fn parse_init(s: &str) -> Result<InitMode> {
    match s {
        "anchored" => Ok(InitMode::Anchored),
        "gaussian" => Ok(InitMode::Gaussian),
        "extrapolated" => Ok(InitMode::Extrapolated),
        _ => Err(Error::Config(format!("unknown init '{s}' (anchored, gaussian, extrapolated)"))),
    }
}

fn plan(a: &PlanArgs, s: &Settings) -> Result<()> {
    let steps = s.pick_opt("steps", a.steps)?;
    let mut cfg = PlanConfig {
        n_infer: positive("n-infer", s.pick("n-infer", a.n_infer, DEFAULT_N_INFER)?)?,
        n_steps: positive("steps", steps.unwrap_or(DEFAULT_STEPS))?,
        init: parse_init(&s.pick("init", a.init.clone(), "anchored".to_string())?)?,
        eta: s.pick("eta", a.eta, 0.0)?,
        seed: s.pick("seed", a.seed, 0)?,
        scored: true,
    };
    if !(cfg.eta >= 0.0 && cfg.eta <= 1.0) {
        return Err(Error::ParameterBounds(format!("--eta {} outside [0, 1]", cfg.eta)));
    }
    let index = s.pick("index", a.index, 0)?;
    let top = s.pick("top", a.top, 5usize)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    if steps.is_none() && (ck.kind == ModelKind::Vanilla || cfg.init == InitMode::Gaussian) {
        cfg.n_steps = DEFAULT_VANILLA_STEPS;
    }
    let scenes = load_dataset(&a.dataset)?;
    let scene = scene_at(&scenes, index)?;
    let result = plan_checkpoint(&ck, scene, &cfg)?;
    if let Some(out) = &a.out {
        write_plan(out, &result).in_file(out)?;
    }
    let top = top.min(result.candidates.len());
    println!("scene {index} intent {} candidates {} total_ms {:.3}", scene.intent, result.candidates.len(), result.total_time().as_secs_f64() * 1e3);
    println!("rank confidence origin nc dac ttc comf ep pdms_mini");
    for e in multi_mode_report(&result, top, Some(scene))? {
        let sc = e.score.expect("scene supplied");
        let origin = e.origin_anchor.map_or("-".to_string(), |o| o.to_string());
        println!(
            "{} {:.4} {origin} {} {} {} {} {:.4} {:.4}",
            e.rank, e.confidence, sc.nc, sc.dac, sc.ttc, sc.comf, sc.ep, sc.pdms_mini
        );
    }
    Ok(())
}

fn paradigm_of(kind: ModelKind) -> Paradigm {
    match kind {
        ModelKind::Truncated => Paradigm::Truncated,
        ModelKind::Vanilla => Paradigm::VanillaFullSchedule,
        ModelKind::Regression => Paradigm::SingleModeRegression,
        ModelKind::Vocabulary => Paradigm::FixedVocabulary,
    }
}

fn bench_config(s: &Settings, n_infer: Option<usize>, steps: Option<usize>, vanilla_steps: Option<usize>, seed: Option<u64>) -> Result<BenchmarkConfig> {
    Ok(BenchmarkConfig {
        n_infer: positive("n-infer", s.pick("n-infer", n_infer, DEFAULT_N_INFER)?)?,
        truncated_steps: positive("steps", s.pick("steps", steps, DEFAULT_STEPS)?)?,
        vanilla_steps: positive("vanilla-steps", s.pick("vanilla-steps", vanilla_steps, DEFAULT_VANILLA_STEPS)?)?,
        eta: 0.0,
        seed: s.pick("seed", seed, 0)?,
    })
}

fn eval(a: &EvalArgs, s: &Settings) -> Result<()> {
    let scenes = load_dataset(&a.dataset)?;
    if let Some(plan_path) = &a.plan {
        let index = s.pick("index", a.index, 0)?;
        let scene = scene_at(&scenes, index)?;
        let plan = read_plan(plan_path).in_file(plan_path)?;
        if plan.horizon != scene.horizon() {
            return Err(Error::Shape(format!("plan has {} waypoints, scene has {}", plan.horizon, scene.horizon())));
        }
        println!("rank confidence nc dac ttc comf ep pdms_mini");
        for (rank, c) in plan.candidates.iter().enumerate() {
            let sc = mini_pdm(scene, &c.trajectory)?;
            println!("{rank} {:.4} {} {} {} {} {:.4} {:.4}", c.confidence, sc.nc, sc.dac, sc.ttc, sc.comf, sc.ep, sc.pdms_mini);
        }
        if !plan.candidates.is_empty() {
            let trajs: Vec<_> = plan.candidates.iter().map(|c| c.trajectory.clone()).collect();
            println!("diversity {:.4}", diversity(&trajs)?);
        }
        return Ok(());
    }
    let cfg = bench_config(s, a.n_infer, a.steps, None, a.seed)?;
    let ck_path = a.checkpoint.as_ref().expect("clap requires checkpoint without plan");
    let ck = load_checkpoint(ck_path)?;
    if scenes.is_empty() {
        return Err(Error::Cardinality("evaluation dataset is empty".into()));
    }
    let planners = [PlannerEntry { paradigm: paradigm_of(ck.kind), checkpoint: Some(&ck) }];
    let report = run_benchmark(&scenes, &planners, &cfg)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        crate::io_util::write_atomic(out, report.to_tsv().as_bytes()).in_file(out)?;
    }
    Ok(())
}

fn compare(a: &CompareArgs, s: &Settings) -> Result<()> {
    let list = s.pick_opt::<String>("paradigms", a.paradigms.clone())?;
    let paradigms = match list {
        Some(l) => Paradigm::parse_list(&l)?,
        None => Paradigm::ALL.to_vec(),
    };
    let cfg = bench_config(s, a.n_infer, a.steps, a.vanilla_steps, a.seed)?;
    let path_for = |p: Paradigm| match p {
        Paradigm::Truncated | Paradigm::ExtrapolatedPrior => (&a.checkpoint, "--checkpoint"),
        Paradigm::VanillaFullSchedule => (&a.vanilla_checkpoint, "--vanilla-checkpoint"),
        Paradigm::SingleModeRegression => (&a.regression_checkpoint, "--regression-checkpoint"),
        Paradigm::FixedVocabulary => (&a.vocabulary_checkpoint, "--vocabulary-checkpoint"),
    };
    for &p in &paradigms {
        if path_for(p).0.is_none() {
            return Err(Error::MissingInput(format!("{} needs {}", p.name(), path_for(p).1)));
        }
    }
    let scenes = load_dataset(&a.dataset)?;
    if scenes.is_empty() {
        return Err(Error::Cardinality("comparison dataset is empty".into()));
    }
    let mut loaded: BTreeMap<PathBuf, Checkpoint<f64>> = BTreeMap::new();
    for &p in &paradigms {
        let path = path_for(p).0.clone().expect("checked above");
        if !loaded.contains_key(&path) {
            let ck = load_checkpoint(&path)?;
            loaded.insert(path, ck);
        }
    }
    let planners: Vec<PlannerEntry<'_>> = paradigms
        .iter()
        .map(|&p| PlannerEntry { paradigm: p, checkpoint: path_for(p).0.as_ref().and_then(|path| loaded.get(path)) })
        .collect();
    let report = run_benchmark(&scenes, &planners, &cfg)?;
    print!("{}", report.to_table());
    if let Some(out) = &a.out {
        crate::io_util::write_atomic(out, report.to_tsv().as_bytes()).in_file(out)?;
    }
    Ok(())
}

fn plot(a: &PlotArgs, s: &Settings) -> Result<()> {
    let svg = if let Some(m) = &a.metrics {
        let text = std::fs::read_to_string(m).in_file(m)?;
        plot::render_metrics(&parse_metrics(&text).in_file(m)?)?
    } else {
        let path = a.dataset.as_ref().expect("clap requires dataset without metrics");
        let scenes = load_dataset(path)?;
        let scene = scene_at(&scenes, s.pick("index", a.index, 0)?)?;
        let plan = match &a.plan {
            Some(p) => Some(read_plan(p).in_file(p)?),
            None => None,
        };
        plot::render_scene(scene, plan.as_ref())?
    };
    crate::io_util::write_atomic(&a.out, svg.as_bytes()).in_file(&a.out)?;
    Ok(())
}
