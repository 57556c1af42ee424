//! `orpo-kit`: training runs, gradient checks, the ratio study, reward-model
//! evaluation, diversity metrics, λ sweeps and plots.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
//! 3 runtime abort.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use orpo_core::analysis::{self, DiversityConfig, SeriesStats};
use orpo_core::data::{self, DatasetSplit};
use orpo_core::gradcheck::{run_gradcheck, GradcheckConfig};
use orpo_core::lm::{build_vocab, load_checkpoint, save_checkpoint, TinyLM, Vocab};
use orpo_core::reward::{self, RewardModel};
use orpo_core::svg::{self, Bars, Series};
use orpo_core::trainer::{self, fmt_sig9, TelemetryRow};
use orpo_core::{Error, LossKind};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::RunConfig;

pub const SEED_ENV: &str = "ORPO_KIT_SEED";

#[derive(Debug)]
pub enum CliError {
    Check(String),
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_)
            | Error::InvalidSplit(_)
            | Error::TooFew { .. }
            | Error::EmptyCorpus
            | Error::BadCheckpoint(_)
            | Error::Json(_)
            | Error::TokenOutOfRange { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "orpo-kit",
    version,
    about = "Odds-ratio preference optimization toolkit"
)]
pub struct Cli {
    /// Output directory; `manifest.json` is written there before anything else.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// JSON file with flat configuration keys; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed. Falls back to the config file, then $ORPO_KIT_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a policy with SFT, ORPO, the probability-ratio variant or DPO.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        net_triples: Option<usize>,
    },
    /// Monte-Carlo distributions of the log probability ratio and log odds ratio.
    SampleRatios {
        #[arg(long = "n")]
        n_samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        betas: Option<Vec<f64>>,
    },
    /// Reward-model win rate of model A against model B.
    Winrate {
        #[arg(long)]
        model_a: Option<String>,
        #[arg(long)]
        model_b: Option<String>,
        #[arg(long)]
        rm: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// Train the pairwise reward model.
    RewardTrain {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        rm_lr: Option<f64>,
        #[arg(long)]
        rm_epochs: Option<usize>,
        #[arg(long)]
        rm_batch_size: Option<usize>,
    },
    /// Per-input and across-input diversity of sampled responses.
    Diversity {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        sample: SampleArgs,
    },
    /// ORPO runs over several λ from the same initialization.
    LambdaSweep {
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Render a telemetry CSV as SVG curves.
    Plot {
        #[arg(long)]
        telemetry: Option<String>,
    },
    /// Write the synthetic preference corpus as JSONL.
    SynthData {
        #[arg(long)]
        synthetic_n: Option<usize>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// JSONL file with prompt/chosen/rejected fields.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub synthetic_n: Option<usize>,
    #[arg(long)]
    pub vocab: Option<String>,
    #[arg(long)]
    pub prompt_cap: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub min_count: Option<usize>,
    #[arg(long)]
    pub char_level: Option<bool>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Start from this checkpoint instead of a fresh model (needs --vocab).
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub context_window: Option<usize>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub loss: Option<LossKind>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dpo_beta: Option<f64>,
    #[arg(long)]
    pub pr_beta: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, alias = "lr")]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup_frac: Option<f64>,
    #[arg(long)]
    pub eval_every: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub gen_max_len: Option<usize>,
    #[arg(long)]
    pub max_prompts: Option<usize>,
    /// train, eval, test or all.
    #[arg(long)]
    pub prompts_from: Option<String>,
}

macro_rules! set {
    ($cfg:ident, $args:expr, [$($f:ident),*], [$($o:ident),*]) => {{
        let a = $args;
        $( if let Some(v) = &a.$f { $cfg.$f = v.clone(); } )*
        $( if let Some(v) = &a.$o { $cfg.$o = Some(v.clone()); } )*
    }};
}

impl DataArgs {
    fn apply(&self, c: &mut RunConfig) {
        set!(
            c,
            self,
            [synthetic_n, prompt_cap, max_len, min_count, char_level],
            [data, vocab]
        );
    }
}

impl ModelArgs {
    fn apply(&self, c: &mut RunConfig) {
        set!(c, self, [embed_dim, hidden_dim, context_window], [init]);
    }
}

impl TrainArgs {
    fn apply(&self, c: &mut RunConfig) {
        set!(
            c,
            self,
            [
                loss,
                lambda,
                dpo_beta,
                pr_beta,
                batch_size,
                warmup_frac,
                eval_every,
                weight_decay
            ],
            [epochs, lr_max, max_steps]
        );
    }
}

impl SampleArgs {
    fn apply(&self, c: &mut RunConfig) {
        set!(
            c,
            self,
            [temperature, rounds, gen_max_len, prompts_from],
            [max_prompts]
        );
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Gradcheck { .. } => "gradcheck",
            Command::SampleRatios { .. } => "sample-ratios",
            Command::Winrate { .. } => "winrate",
            Command::RewardTrain { .. } => "reward-train",
            Command::Diversity { .. } => "diversity",
            Command::LambdaSweep { .. } => "lambda-sweep",
            Command::Plot { .. } => "plot",
            Command::SynthData { .. } => "synth-data",
        }
    }

    fn apply(&self, c: &mut RunConfig) {
        match self {
            Command::Train { data, model, train } => {
                data.apply(c);
                model.apply(c);
                train.apply(c);
            }
            Command::Gradcheck {
                trials,
                net_triples,
            } => {
                if let Some(v) = trials {
                    c.trials = *v;
                }
                if let Some(v) = net_triples {
                    c.net_triples = *v;
                }
            }
            Command::SampleRatios { n_samples, betas } => {
                if let Some(n) = n_samples {
                    c.n_samples = *n;
                }
                if let Some(b) = betas {
                    c.betas = b.clone();
                }
            }
            Command::Winrate {
                model_a,
                model_b,
                rm,
                data,
                sample,
            } => {
                for (dst, src) in [
                    (&mut c.model_a, model_a),
                    (&mut c.model_b, model_b),
                    (&mut c.rm, rm),
                ] {
                    if src.is_some() {
                        *dst = src.clone();
                    }
                }
                data.apply(c);
                sample.apply(c);
            }
            Command::RewardTrain {
                data,
                model,
                rm_lr,
                rm_epochs,
                rm_batch_size,
            } => {
                data.apply(c);
                model.apply(c);
                if let Some(v) = rm_lr {
                    c.rm_lr = *v;
                }
                if let Some(v) = rm_epochs {
                    c.rm_epochs = *v;
                }
                if let Some(v) = rm_batch_size {
                    c.rm_batch_size = *v;
                }
            }
            Command::Diversity {
                model,
                k,
                data,
                sample,
            } => {
                if model.is_some() {
                    c.model = model.clone();
                }
                if let Some(k) = k {
                    c.k = *k;
                }
                data.apply(c);
                sample.apply(c);
            }
            Command::LambdaSweep {
                lambdas,
                data,
                model,
                train,
            } => {
                if let Some(l) = lambdas {
                    c.lambdas = l.clone();
                }
                data.apply(c);
                model.apply(c);
                train.apply(c);
            }
            Command::Plot { telemetry } => {
                if telemetry.is_some() {
                    c.telemetry = telemetry.clone();
                }
            }
            Command::SynthData { synthetic_n } => {
                if let Some(n) = synthetic_n {
                    c.synthetic_n = *n;
                }
            }
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunManifest<'a> {
    pub command: &'a str,
    pub config_path: Option<String>,
    pub config: &'a RunConfig,
    pub run_id: String,
    pub output_dir: String,
    pub version: &'a str,
}

/// Hex SHA-256 of the resolved configuration bytes followed by the seed.
pub fn run_id(config: &RunConfig) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(config.seed().to_le_bytes());
    h.finalize()
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Parse arguments and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("orpo-kit {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

pub fn resolve_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cli.command.apply(&mut cfg);
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    if cfg.seed.is_none() {
        if let Ok(s) = std::env::var(SEED_ENV) {
            cfg.seed = Some(
                s.trim()
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s} is not an integer")))?,
            );
        }
    }
    cfg.seed = Some(cfg.seed());
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> CliResult {
    let cfg = resolve_config(cli)?;
    let out = Out::create(&cli.out)?;
    let manifest = RunManifest {
        command: cli.command.name(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        config: &cfg,
        run_id: run_id(&cfg),
        output_dir: cli.out.display().to_string(),
        version: env!("CARGO_PKG_VERSION"),
    };
    out.json("manifest.json", &manifest)?;
    match &cli.command {
        Command::Train { .. } => cmd_train(&cfg, &out),
        Command::Gradcheck { .. } => cmd_gradcheck(&cfg, &out),
        Command::SampleRatios { .. } => cmd_sample_ratios(&cfg, &out),
        Command::Winrate { .. } => cmd_winrate(&cfg, &out),
        Command::RewardTrain { .. } => cmd_reward_train(&cfg, &out),
        Command::Diversity { .. } => cmd_diversity(&cfg, &out),
        Command::LambdaSweep { .. } => cmd_lambda_sweep(&cfg, &out),
        Command::Plot { .. } => cmd_plot(&cfg, &out),
        Command::SynthData { .. } => cmd_synth_data(&cfg, &out),
    }
}

struct Out {
    dir: PathBuf,
}

impl Out {
    fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Out {
            dir: dir.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult {
        let p = self.path(name);
        std::fs::write(&p, bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult {
        let mut s =
            serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
        s.push('\n');
        self.write(name, s)
    }
}

fn require<'a>(v: &'a Option<String>, key: &str) -> CliResult<&'a str> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("missing required `{key}`")))
}

fn existing(path: &str) -> CliResult<&Path> {
    let p = Path::new(path);
    if !p.is_file() {
        return Err(CliError::Usage(format!("no such file: {path}")));
    }
    Ok(p)
}

fn load_vocab(path: &str) -> CliResult<Vocab> {
    let text = std::fs::read_to_string(existing(path)?)
        .map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    Ok(Vocab::from_json(&text)?)
}

fn load_model(path: &str) -> CliResult<TinyLM> {
    Ok(load_checkpoint(existing(path)?)?)
}

/// Rows → vocabulary (loaded or built) → filtered triples → split.
fn prepare_data(cfg: &RunConfig, out: &Out) -> CliResult<(Vocab, DatasetSplit)> {
    let rows = match &cfg.data {
        Some(path) => {
            let loaded = data::load_jsonl(existing(path)?)?;
            for e in &loaded.errors {
                log::warn!("{path}:{}: {}", e.line, e.message);
            }
            loaded.rows
        }
        None => data::make_synthetic_corpus_with(cfg.synthetic_n, cfg.seed(), cfg.synthetic_spec()),
    };
    let vocab = match &cfg.vocab {
        Some(p) => load_vocab(p)?,
        None => build_vocab(&data::corpus_texts(&rows), cfg.min_count, cfg.char_level)?,
    };
    let (triples, stats) = data::filter_and_tokenize(&rows, &vocab, &cfg.tokenize());
    out.json("drop_stats.json", &stats)?;
    let split = data::split(
        triples,
        [cfg.train_frac, cfg.eval_frac, cfg.test_frac],
        cfg.seed(),
        stats,
    )?;
    Ok((vocab, split))
}

fn initial_model(cfg: &RunConfig, vocab: &Vocab) -> CliResult<TinyLM> {
    match &cfg.init {
        Some(path) => {
            if cfg.vocab.is_none() {
                return Err(CliError::Usage("`init` needs the matching `vocab`".into()));
            }
            let m = load_model(path)?;
            if m.config.vocab_size != vocab.len() {
                return Err(CliError::Usage(format!(
                    "checkpoint vocab size {} != vocab file size {}",
                    m.config.vocab_size,
                    vocab.len()
                )));
            }
            Ok(m)
        }
        None => Ok(TinyLM::new(cfg.lm_config(vocab.len()))?),
    }
}

fn prompts(cfg: &RunConfig, split: &DatasetSplit) -> Vec<Vec<usize>> {
    let source: Vec<&data::PreferenceTriple> = match cfg.prompts_from.as_str() {
        "train" => split.train.iter().collect(),
        "eval" => split.eval.iter().collect(),
        "all" => split
            .train
            .iter()
            .chain(&split.eval)
            .chain(&split.test)
            .collect(),
        _ => split.test.iter().collect(),
    };
    let mut p: Vec<Vec<usize>> = source.into_iter().map(|t| t.x.clone()).collect();
    if let Some(m) = cfg.max_prompts {
        p.truncate(m);
    }
    p
}

#[derive(Serialize)]
struct TrainMetrics {
    loss: LossKind,
    steps: usize,
    train_size: usize,
    eval_size: usize,
    test_size: usize,
    best_step: Option<usize>,
    evals: Vec<trainer::EvalPoint>,
    forward_passes: u64,
    eval_margin: f64,
    last: Option<TelemetryRow>,
    checkpoints: Vec<String>,
}

fn cmd_train(cfg: &RunConfig, out: &Out) -> CliResult {
    let (vocab, split) = prepare_data(cfg, out)?;
    out.write("vocab.json", vocab.to_json())?;
    let model = initial_model(cfg, &vocab)?;
    let tc = cfg.train_config();
    let outcome = trainer::train(model, &split, &tc)?;
    out.write(
        "telemetry.csv",
        trainer::telemetry_to_csv(&outcome.telemetry),
    )?;
    let mut names = Vec::new();
    for (step, m) in &outcome.checkpoints {
        let name = format!("ckpt_{step}.orpk");
        save_checkpoint(m, out.path(&name))?;
        names.push(name);
    }
    let metrics = TrainMetrics {
        loss: tc.loss_kind,
        steps: outcome.telemetry.len(),
        train_size: split.train.len(),
        eval_size: split.eval.len(),
        test_size: split.test.len(),
        best_step: outcome.best_step,
        evals: outcome.evals.clone(),
        forward_passes: outcome.forward_passes,
        eval_margin: trainer::mean_margin(&outcome.model, &split.eval)?,
        last: outcome.telemetry.last().copied(),
        checkpoints: names,
    };
    out.json("metrics.json", &metrics)?;
    println!(
        "trained {} for {} steps; eval margin {}; best step {:?}",
        tc.loss_kind,
        metrics.steps,
        fmt_sig9(metrics.eval_margin),
        metrics.best_step
    );
    Ok(())
}

fn cmd_gradcheck(cfg: &RunConfig, out: &Out) -> CliResult {
    if cfg.trials == 0 || cfg.net_triples == 0 {
        return Err(CliError::Usage(
            "trials and net_triples must be >= 1".into(),
        ));
    }
    let report = run_gradcheck(&GradcheckConfig {
        seed: cfg.seed(),
        trials: cfg.trials,
        net_triples: cfg.net_triples,
    })?;
    out.json("gradcheck.json", &report)?;
    for s in &report.suites {
        println!(
            "{:<16} {} checks  max rel err {:.3e}  tol {:.0e}  {}",
            s.name,
            s.checks,
            s.max_rel_err,
            s.tolerance,
            if s.passed { "ok" } else { "FAIL" }
        );
    }
    if report.passed {
        Ok(())
    } else {
        let worst: Vec<String> = report
            .suites
            .iter()
            .filter(|s| !s.passed)
            .map(|s| match &s.worst {
                Some(w) => format!(
                    "{}: {} (analytic {}, numeric {})",
                    s.name, w.input, w.analytic, w.numeric
                ),
                None => format!("{}: no checks", s.name),
            })
            .collect();
        Err(CliError::Check(worst.join("; ")))
    }
}

#[derive(Serialize)]
struct NamedSeries {
    name: String,
    beta: Option<f64>,
    expected_std: f64,
    stats: SeriesStats,
}

fn beta_key(beta: f64) -> String {
    format!("pr_beta{}", fmt_sig9(beta).replace('.', ""))
}

fn cmd_sample_ratios(cfg: &RunConfig, out: &Out) -> CliResult {
    if cfg.n_samples < 2 {
        return Err(CliError::Usage("n must be >= 2".into()));
    }
    if cfg.betas.is_empty() || cfg.betas.iter().any(|b| !(*b > 0.0)) {
        return Err(CliError::Usage("betas must be positive".into()));
    }
    let pairs = analysis::sample_uniform_pairs(cfg.n_samples, cfg.seed());
    let mut series = Vec::new();
    let mut or_values = Vec::new();
    for &beta in &cfg.betas {
        let (pr, or) = analysis::ratio_series(&pairs, beta);
        series.push(NamedSeries {
            name: beta_key(beta),
            beta: Some(beta),
            expected_std: beta * 2f64.sqrt(),
            stats: SeriesStats::of(&pr),
        });
        or_values = or;
    }
    series.push(NamedSeries {
        name: "or".into(),
        beta: None,
        expected_std: (2.0 * std::f64::consts::PI.powi(2) / 3.0).sqrt(),
        stats: SeriesStats::of(&or_values),
    });
    #[derive(Serialize)]
    struct Study<'a> {
        n_samples: usize,
        seed: u64,
        histogram_bins: usize,
        series: &'a [NamedSeries],
    }
    out.json(
        "ratio_study.json",
        &Study {
            n_samples: cfg.n_samples,
            seed: cfg.seed(),
            histogram_bins: analysis::HISTOGRAM_BINS,
            series: &series,
        },
    )?;
    let hists: Vec<(&str, &analysis::Histogram)> = series
        .iter()
        .map(|s| (s.name.as_str(), &s.stats.histogram))
        .collect();
    out.write("ratio_hist.csv", analysis::histogram_csv(&hists))?;
    let bars: Vec<Bars> = series
        .iter()
        .map(|s| Bars {
            name: &s.name,
            edges: &s.stats.histogram.edges,
            counts: &s.stats.histogram.counts,
        })
        .collect();
    out.write(
        "ratio_hist.svg",
        svg::histogram_plot("Log ratio distributions", "log ratio", &bars),
    )?;
    for s in &series {
        println!(
            "{:<12} mean {:>10}  std {:>10}  (closed form {})",
            s.name,
            fmt_sig9(s.stats.mean),
            fmt_sig9(s.stats.std),
            fmt_sig9(s.expected_std)
        );
    }
    Ok(())
}

fn cmd_winrate(cfg: &RunConfig, out: &Out) -> CliResult {
    let a = load_model(require(&cfg.model_a, "model_a")?)?;
    let b = load_model(require(&cfg.model_b, "model_b")?)?;
    let rm = reward::load_reward_model(existing(require(&cfg.rm, "rm")?)?)?;
    require(&cfg.vocab, "vocab")?;
    let (vocab, split) = prepare_data(cfg, out)?;
    for m in [&a, &b, &rm.backbone] {
        if m.config.vocab_size != vocab.len() {
            return Err(CliError::Usage("model and vocab sizes differ".into()));
        }
    }
    let prompts = prompts(cfg, &split);
    let sampling = cfg.sampling();
    let report = reward::win_rate(&a, &b, &prompts, &rm, &sampling)?;
    out.json("winrate.json", &report)?;
    out.write(
        "rewards.csv",
        reward::reward_samples_to_csv(&report.samples),
    )?;
    let dist_a = reward::reward_distribution(&a, &prompts, &rm, &sampling)?;
    let dist_b = reward::reward_distribution(&b, &prompts, &rm, &sampling)?;
    #[derive(Serialize)]
    struct Dists<'a> {
        a: &'a reward::RewardDistribution,
        b: &'a reward::RewardDistribution,
    }
    out.json(
        "reward_dist.json",
        &Dists {
            a: &dist_a,
            b: &dist_b,
        },
    )?;
    let (ha, hb) = (
        analysis::Histogram::uniform(&dist_a.scores, 30),
        analysis::Histogram::uniform(&dist_b.scores, 30),
    );
    out.write(
        "reward_dist.svg",
        svg::histogram_plot(
            "Reward of sampled responses",
            "reward",
            &[
                Bars {
                    name: "model a",
                    edges: &ha.edges,
                    counts: &ha.counts,
                },
                Bars {
                    name: "model b",
                    edges: &hb.edges,
                    counts: &hb.counts,
                },
            ],
        ),
    )?;
    println!(
        "win rate a: {}% (std {}) over {} rounds; mean reward a {} b {}",
        fmt_sig9(report.win_rate_a),
        fmt_sig9(report.win_rate_std),
        report.rounds,
        fmt_sig9(report.mean_reward_a),
        fmt_sig9(report.mean_reward_b)
    );
    Ok(())
}

fn cmd_reward_train(cfg: &RunConfig, out: &Out) -> CliResult {
    let (vocab, split) = prepare_data(cfg, out)?;
    out.write("vocab.json", vocab.to_json())?;
    let init = match &cfg.init {
        Some(_) => RewardModel::from_backbone(initial_model(cfg, &vocab)?),
        None => RewardModel::new(cfg.lm_config(vocab.len()))?,
    };
    let outcome = reward::train_reward(init, &split, &cfg.reward_config())?;
    reward::save_reward_model(&outcome.model, out.path("rm.orrm"))?;
    #[derive(Serialize)]
    struct Metrics<'a> {
        heldout_accuracy: f64,
        steps: usize,
        losses: &'a [f64],
    }
    out.json(
        "reward_metrics.json",
        &Metrics {
            heldout_accuracy: outcome.heldout_accuracy,
            steps: outcome.losses.len(),
            losses: &outcome.losses,
        },
    )?;
    println!(
        "reward model held-out accuracy {}",
        fmt_sig9(outcome.heldout_accuracy)
    );
    Ok(())
}

fn cmd_diversity(cfg: &RunConfig, out: &Out) -> CliResult {
    let model = load_model(require(&cfg.model, "model")?)?;
    require(&cfg.vocab, "vocab")?;
    let (vocab, split) = prepare_data(cfg, out)?;
    if model.config.vocab_size != vocab.len() {
        return Err(CliError::Usage("model and vocab sizes differ".into()));
    }
    let mut unique: Vec<Vec<usize>> = Vec::new();
    for p in prompts(cfg, &split) {
        if !unique.contains(&p) {
            unique.push(p);
        }
    }
    let dc = DiversityConfig {
        k: cfg.k,
        temperature: cfg.temperature,
        max_len: cfg.gen_max_len,
        seed: cfg.seed(),
    };
    let report = analysis::diversity_report(&model, &unique, &dc)?;
    out.json("diversity.json", &report)?;
    println!(
        "per-input: literal {} mean-cosine {}; across-input: literal {} mean-cosine {}",
        fmt_sig9(report.per_input.literal),
        fmt_sig9(report.per_input.mean_cosine),
        fmt_sig9(report.across_input.literal),
        fmt_sig9(report.across_input.mean_cosine)
    );
    Ok(())
}

fn cmd_lambda_sweep(cfg: &RunConfig, out: &Out) -> CliResult {
    if cfg.lambdas.is_empty() {
        return Err(CliError::Usage("lambdas must be non-empty".into()));
    }
    let (vocab, split) = prepare_data(cfg, out)?;
    out.write("vocab.json", vocab.to_json())?;
    let init = initial_model(cfg, &vocab)?;
    let tc = orpo_core::TrainConfig {
        loss_kind: LossKind::Orpo,
        ..cfg.train_config()
    };
    let results = trainer::lambda_sweep(&init, &split, &cfg.lambdas, &tc)?;
    #[derive(Serialize)]
    struct Row {
        lambda: f64,
        final_margin: f64,
        telemetry: String,
        last: Option<TelemetryRow>,
    }
    let mut rows = Vec::new();
    for r in &results {
        let name = format!("telemetry_lambda_{}.csv", fmt_sig9(r.lambda));
        out.write(&name, trainer::telemetry_to_csv(&r.telemetry))?;
        rows.push(Row {
            lambda: r.lambda,
            final_margin: r.final_margin,
            telemetry: name,
            last: r.telemetry.last().copied(),
        });
        println!(
            "lambda {:<6} eval margin {}",
            fmt_sig9(r.lambda),
            fmt_sig9(r.final_margin)
        );
    }
    out.json("sweep.json", &rows)?;
    let points = rows.iter().map(|r| (r.lambda, r.final_margin)).collect();
    out.write(
        "sweep.svg",
        svg::line_plot(
            "Held-out margin by lambda",
            "lambda",
            "chosen - rejected avg log-prob",
            &[Series {
                name: "margin",
                points,
            }],
        ),
    )?;
    Ok(())
}

/// Chosen/rejected log-likelihood curves and the log odds ratio curve.
pub fn telemetry_svgs(rows: &[TelemetryRow]) -> (String, String) {
    let pts = |f: fn(&TelemetryRow) -> f64| {
        rows.iter()
            .map(|r| (r.step as f64, f(r)))
            .collect::<Vec<_>>()
    };
    let logp = svg::line_plot(
        "Average log-likelihood per batch",
        "step",
        "avg log-prob",
        &[
            Series {
                name: "chosen",
                points: pts(|r| r.avg_logp_chosen),
            },
            Series {
                name: "rejected",
                points: pts(|r| r.avg_logp_rejected),
            },
        ],
    );
    let odds = svg::line_plot(
        "Log odds ratio per batch",
        "step",
        "log odds ratio",
        &[Series {
            name: "log odds ratio",
            points: pts(|r| r.log_odds_ratio),
        }],
    );
    (logp, odds)
}

fn cmd_plot(cfg: &RunConfig, out: &Out) -> CliResult {
    let path = require(&cfg.telemetry, "telemetry")?;
    let text = std::fs::read_to_string(existing(path)?)
        .map_err(|e| CliError::Usage(format!("{path}: {e}")))?;
    let rows = trainer::telemetry_from_csv(&text)?;
    if rows.is_empty() {
        return Err(CliError::Usage(format!("{path}: no telemetry rows")));
    }
    let (logp, odds) = telemetry_svgs(&rows);
    out.write("telemetry_logp.svg", logp)?;
    out.write("telemetry_log_odds.svg", odds)?;
    println!("plotted {} rows", rows.len());
    Ok(())
}

fn cmd_synth_data(cfg: &RunConfig, out: &Out) -> CliResult {
    let rows = data::make_synthetic_corpus_with(cfg.synthetic_n, cfg.seed(), cfg.synthetic_spec());
    data::write_jsonl(&rows, out.path("synthetic.jsonl"))?;
    println!("wrote {} rows", rows.len());
    Ok(())
}
