//! Command-line driver.
//!
//! Exit codes: 0 on success, 2 when a batch fails on more instances than the
//! configured cap allows, 3 on configuration or usage errors. Other runtime
//! errors (unreadable data, backend construction) exit with 1.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::backends::{Backend, BackendKind, HttpBackend, MockBackend, MockFixtures};
use crate::config::{AppConfig, ConfigError};
use crate::data::{load_dataset, load_kb, write_kb_index, DataError, Split, SplitManifest};
use crate::eval::{evaluate, render_table, run_ablation_suite, sweep, EvalError, EvalRun, SweepAxis, Variant};
use crate::fusion::GateMode;
use crate::model::NewsInstance;
use crate::pipeline::{BatchOutcome, ClassificationResult, InstanceFailure, Modality, Pipeline};
use crate::retrieval::{KnowledgeBase, RetrievalError};
use crate::reward::RewardWeights;
use crate::synth::{generate, Manifest, SynthError, SynthSpec, FULL_SIZE_PER_CLASS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_FAILURE_CAP: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "multipress", version, about = "Multi-agent multimodal news topic classification")]
pub struct Cli {
    #[command(flatten)]
    pub opts: GlobalOpts,
    #[command(subcommand)]
    pub command: Option<Command>,
}

/// Settings shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Args, Default)]
pub struct GlobalOpts {
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the effective configuration here (`-` for stderr) and continue.
    #[arg(long, global = true)]
    pub emit_config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long, global = true)]
    pub trace_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,

    /// Directory holding dataset.jsonl, kb.jsonl and fixtures.jsonl.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true)]
    pub kb: Option<PathBuf>,
    #[arg(long, global = true)]
    pub fixtures: Option<PathBuf>,
    #[arg(long, global = true)]
    pub split_manifest: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Split::All)]
    pub split: Split,

    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub top_k: Option<usize>,
    #[arg(long, global = true)]
    pub theta_min: Option<f64>,
    /// Recency half-life in days.
    #[arg(long, global = true)]
    pub recency_half_life: Option<f64>,
    #[arg(long, global = true)]
    pub max_iterations: Option<u32>,
    #[arg(long, global = true)]
    pub max_searches: Option<u32>,
    #[arg(long, global = true)]
    pub stability_epsilon: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub gate_mode: Option<GateMode>,
    #[arg(long, global = true)]
    pub tau: Option<f64>,
    /// Reward weights as `l1,l2,l3`, summing to 1.
    #[arg(long, global = true, value_delimiter = ',', num_args = 3)]
    pub lambda: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub theta_ground: Option<f64>,
    #[arg(long, global = true)]
    pub theta_cons: Option<f64>,
    /// Refinement passes after the first.
    #[arg(long, global = true)]
    pub refinements: Option<u32>,
    #[arg(long, global = true, value_enum)]
    pub modality: Option<Modality>,
    /// Run the whole reasoning budget before the first report.
    #[arg(long, global = true)]
    pub reason_once: bool,
    /// Machine-readable record of the run.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify every instance and print one report per line.
    Classify {
        /// Only these instance ids.
        #[arg(long)]
        id: Vec<String>,
    },
    /// Score the full pipeline against gold labels.
    Evaluate {
        #[arg(long)]
        emit_confusion: bool,
    },
    /// Run the full pipeline and all six ablations.
    Ablate {
        #[arg(long)]
        emit_confusion: bool,
    },
    /// Vary one setting over its fixed grid.
    Sweep {
        #[arg(long, value_enum)]
        axis: SweepAxis,
    },
    /// Write a seeded synthetic dataset, KB, fixtures and manifest.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        per_class: Option<usize>,
        /// 900 instances per class.
        #[arg(long, conflicts_with = "per_class")]
        full_size: bool,
        #[arg(long)]
        noise_rate: Option<f64>,
    },
    /// Embed a raw KB file into an index.
    KbBuild {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_USAGE,
            CliError::Eval(EvalError::Pipeline(crate::pipeline::PipelineError::Config(_))) => EXIT_USAGE,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Layers the file (if any) and then the flags over the defaults.
pub fn effective_config(opts: &GlobalOpts) -> Result<AppConfig, CliError> {
    let mut c = match &opts.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    let p = &mut c.pipeline;
    if let Some(v) = opts.seed {
        p.seed = v;
    }
    if let Some(v) = opts.beta {
        p.retrieval.beta = v;
    }
    if let Some(v) = opts.top_k {
        p.retrieval.top_k = v;
    }
    if let Some(v) = opts.theta_min {
        p.retrieval.theta_min = v;
    }
    if let Some(v) = opts.recency_half_life {
        p.retrieval.recency_half_life = Some(v);
    }
    if let Some(v) = opts.max_iterations {
        p.budget.max_iterations = v;
    }
    if let Some(v) = opts.max_searches {
        p.budget.max_searches = v;
    }
    if let Some(v) = opts.stability_epsilon {
        p.budget.epsilon = v;
    }
    if let Some(v) = opts.gate_mode {
        p.gate.mode = v;
    }
    if let Some(v) = opts.tau {
        p.tau = v;
    }
    if let Some(l) = &opts.lambda {
        p.reward.weights =
            RewardWeights::new(l[0], l[1], l[2]).map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string())))?;
    }
    if let Some(v) = opts.theta_ground {
        p.reward.theta_ground = v;
    }
    if let Some(v) = opts.theta_cons {
        p.reward.theta_cons = v;
    }
    if let Some(v) = opts.refinements {
        p.refinements = Some(v);
    }
    if let Some(v) = opts.modality {
        p.modality = v;
    }
    if opts.reason_once {
        p.reason_once = true;
    }
    if let Some(v) = opts.backend {
        c.backend.kind = v;
    }
    if let Some(v) = &opts.trace_dir {
        c.trace_dir = Some(v.clone());
    }
    if let Some(v) = opts.parallelism {
        c.parallelism = v;
    }
    let d = &mut c.data;
    for (flag, slot) in [
        (&opts.data_dir, &mut d.dir),
        (&opts.dataset, &mut d.dataset),
        (&opts.kb, &mut d.kb),
        (&opts.fixtures, &mut d.fixtures),
        (&opts.split_manifest, &mut d.split_manifest),
    ] {
        if let Some(v) = flag {
            *slot = Some(v.clone());
        }
    }
    c.validate()?;
    Ok(c)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let Some(command) = &cli.command else {
        let mut cmd = <Cli as clap::CommandFactory>::command();
        let _ = cmd.print_help();
        return EXIT_USAGE;
    };
    match execute(&cli.opts, command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(opts: &GlobalOpts, command: &Command) -> Result<i32, CliError> {
    let cfg = effective_config(opts)?;
    if let Some(path) = &opts.emit_config {
        if path.as_os_str() == "-" {
            eprint!("{}", cfg.to_toml());
        } else {
            write_file(path, cfg.to_toml().as_bytes())?;
        }
    }
    match command {
        Command::Synth {
            out_dir,
            per_class,
            full_size,
            noise_rate,
        } => synth(opts, out_dir, *per_class, *full_size, *noise_rate),
        Command::KbBuild { input, output } => {
            let backend = make_backend(&cfg)?;
            let (kb, skipped) = load_kb(input, backend.as_ref())?;
            write_kb_index(output, &kb)?;
            println!("indexed {} items ({skipped} skipped) into {}", kb.len(), output.display());
            Ok(EXIT_OK)
        }
        Command::Classify { id } => classify(&cfg, opts.split, id),
        Command::Evaluate { emit_confusion } => {
            let env = Env::load(&cfg, opts.split)?;
            let (run, outcome) = evaluate(
                env.backend.as_ref(),
                &env.kb,
                &env.instances,
                &cfg.pipeline,
                Variant::Full.title(),
                cfg.parallelism,
            )?;
            write_traces(&cfg, Variant::Full.key(), &outcome)?;
            let runs = vec![run];
            report_runs(&cfg, opts, "evaluate", &runs, *emit_confusion)?;
            Ok(cap_exit(&cfg, &outcome))
        }
        Command::Ablate { emit_confusion } => {
            let env = Env::load(&cfg, opts.split)?;
            let mut worst = EXIT_OK;
            let mut trace_err = None;
            let runs = run_ablation_suite(
                env.backend.as_ref(),
                &env.kb,
                &env.instances,
                &cfg.pipeline,
                cfg.parallelism,
                |v, outcome| {
                    if let Err(e) = write_traces(&cfg, v.key(), outcome) {
                        trace_err.get_or_insert(e);
                    }
                    worst = worst.max(cap_exit(&cfg, outcome));
                },
            )?;
            if let Some(e) = trace_err {
                return Err(e);
            }
            report_runs(&cfg, opts, "ablate", &runs, *emit_confusion)?;
            if let Some(path) = cfg.data.manifest() {
                let manifest = Manifest::load(&path)?;
                for (v, run) in Variant::ALL.iter().zip(&runs) {
                    eprintln!("manifest agreement {:<13} {:.3}", v.key(), manifest_agreement(&manifest, *v, run));
                }
            }
            Ok(worst)
        }
        Command::Sweep { axis } => {
            let env = Env::load(&cfg, opts.split)?;
            let runs = sweep(
                env.backend.as_ref(),
                &env.kb,
                &env.instances,
                &cfg.pipeline,
                *axis,
                cfg.parallelism,
            )?;
            report_runs(&cfg, opts, &format!("sweep-{}", axis.key()), &runs, false)?;
            let failed = runs.iter().any(|r| {
                let n = r.predictions.len() + r.failures.len();
                n > 0 && r.failures.len() as f64 / n as f64 > cfg.pipeline.failure_cap
            });
            Ok(if failed { EXIT_FAILURE_CAP } else { EXIT_OK })
        }
    }
}

/// Fraction of instances whose observed correctness matches the manifest.
pub fn manifest_agreement(manifest: &Manifest, variant: Variant, run: &EvalRun) -> f64 {
    let expected = manifest.expected_failures(variant);
    let observed: std::collections::BTreeSet<&String> = run
        .predictions
        .iter()
        .filter(|p| p.gold != p.predicted)
        .map(|p| &p.id)
        .chain(&run.failures)
        .collect();
    let total = manifest.instances.len();
    if total == 0 {
        return 1.0;
    }
    let agree = manifest
        .instances
        .iter()
        .filter(|e| expected.contains(&e.id) == observed.contains(&e.id))
        .count();
    agree as f64 / total as f64
}

fn synth(
    opts: &GlobalOpts,
    out_dir: &Path,
    per_class: Option<usize>,
    full_size: bool,
    noise_rate: Option<f64>,
) -> Result<i32, CliError> {
    let mut spec = SynthSpec::default();
    if let Some(s) = opts.seed {
        spec.seed = s;
    }
    if full_size {
        spec.per_class = FULL_SIZE_PER_CLASS;
    } else if let Some(n) = per_class {
        spec.per_class = n;
    }
    if let Some(r) = noise_rate {
        spec.noise_rate = r;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let out = generate(&spec)?;
    out.write_to(out_dir)?;
    println!(
        "wrote {} instances and {} KB records to {}",
        out.dataset.len(),
        out.kb.len(),
        out_dir.display()
    );
    Ok(EXIT_OK)
}

fn classify(cfg: &AppConfig, split: Split, ids: &[String]) -> Result<i32, CliError> {
    let mut env = Env::load(cfg, split)?;
    if !ids.is_empty() {
        if let Some(missing) = ids.iter().find(|id| !env.instances.iter().any(|i| &i.id == *id)) {
            return Err(CliError::Usage(format!("no instance `{missing}` in the dataset")));
        }
        env.instances.retain(|i| ids.contains(&i.id));
    }
    let pipeline =
        Pipeline::new(env.backend.as_ref(), &env.kb, cfg.pipeline.clone()).map_err(|e| CliError::Eval(e.into()))?;
    let outcome = pipeline.classify_batch(&env.instances, cfg.parallelism);
    write_traces(cfg, Variant::Full.key(), &outcome)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for o in &outcome.outcomes {
        match o {
            Ok(r) => {
                let line = serde_json::to_string(&r.report).map_err(|e| CliError::Runtime(e.to_string()))?;
                writeln!(out, "{line}").map_err(|e| CliError::Runtime(e.to_string()))?;
            }
            Err(f) => eprintln!("instance {} failed: {}", f.instance_id, f.error),
        }
    }
    Ok(cap_exit(cfg, &outcome))
}

fn cap_exit(cfg: &AppConfig, outcome: &BatchOutcome) -> i32 {
    if outcome.failure_rate() > cfg.pipeline.failure_cap {
        EXIT_FAILURE_CAP
    } else {
        EXIT_OK
    }
}

/// Backend, KB and instances for a run.
struct Env {
    backend: Box<dyn Backend>,
    kb: KnowledgeBase,
    instances: Vec<NewsInstance>,
}

impl Env {
    fn load(cfg: &AppConfig, split: Split) -> Result<Self, CliError> {
        let dataset = cfg
            .data
            .dataset()
            .ok_or_else(|| CliError::Usage("no dataset given (use --dataset or --data-dir)".into()))?;
        let manifest = cfg.data.split_manifest().map(|p| SplitManifest::load(&p)).transpose()?;
        if split != Split::All && manifest.is_none() {
            return Err(CliError::Usage("--split needs a split manifest".into()));
        }
        let instances = load_dataset(&dataset, split, manifest.as_ref())?;
        let backend = make_backend(cfg)?;
        let kb = match cfg.data.kb() {
            Some(p) => {
                let (kb, skipped) = load_kb(&p, backend.as_ref())?;
                if skipped > 0 {
                    log::warn!("skipped {skipped} malformed KB lines in {}", p.display());
                }
                kb
            }
            None => KnowledgeBase::build(Vec::new())?,
        };
        log::info!("{} instances, {} KB items", instances.len(), kb.len());
        Ok(Self { backend, kb, instances })
    }
}

fn make_backend(cfg: &AppConfig) -> Result<Box<dyn Backend>, CliError> {
    match cfg.backend.kind {
        BackendKind::Mock => {
            let fixtures = match cfg.data.fixtures() {
                Some(p) => MockFixtures::load(&p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?,
                None => MockFixtures::default(),
            };
            Ok(Box::new(MockBackend::new(fixtures, cfg.pipeline.seed, cfg.backend.embed_dim)))
        }
        BackendKind::Http => HttpBackend::from_env(cfg.backend.clone())
            .map(|b| Box::new(b) as Box<dyn Backend>)
            .map_err(|e| CliError::Config(ConfigError::Invalid(e.to_string()))),
    }
}

#[derive(Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
enum TraceFile<'a> {
    Ok(&'a ClassificationResult),
    Failed(&'a InstanceFailure),
}

/// Writes `<trace_dir>/<variant>/<id>.trace.json` for every instance.
fn write_traces(cfg: &AppConfig, variant: &str, outcome: &BatchOutcome) -> Result<(), CliError> {
    let Some(root) = &cfg.trace_dir else {
        return Ok(());
    };
    let dir = root.join(variant);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    for o in &outcome.outcomes {
        let (id, file) = match o {
            Ok(r) => (&r.instance_id, TraceFile::Ok(r)),
            Err(f) => (&f.instance_id, TraceFile::Failed(f)),
        };
        let body = serde_json::to_vec_pretty(&file).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&dir.join(format!("{id}.trace.json")), &body)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Record<'a> {
    command: &'a str,
    config: &'a AppConfig,
    runs: &'a [EvalRun],
}

fn report_runs(cfg: &AppConfig, opts: &GlobalOpts, command: &str, runs: &[EvalRun], confusion: bool) -> Result<(), CliError> {
    let mut text = render_table(runs);
    if confusion {
        for r in runs {
            text.push_str(&format!("\n{}\n{}", r.name, r.confusion.render()));
        }
    }
    print!("{text}");
    let record = opts
        .record
        .clone()
        .or_else(|| cfg.trace_dir.as_ref().map(|d| d.join(format!("{command}.record.json"))));
    if let Some(path) = record {
        let body = serde_json::to_vec_pretty(&Record {
            command,
            config: cfg,
            runs,
        })
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&path, &body)?;
    }
    Ok(())
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}
