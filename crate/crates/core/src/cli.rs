//! The `eigencent` command-line front end.
//!
//! Exit codes: 0 success, 1 check failure, 2 usage or input error,
//! 3 numerical divergence.

use std::ffi::OsString;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjacency::{build_adjacency, AdjacencyMatrix, ConnectivityScorer};
use crate::eigencentrality::{converge_stats, ConvergeHistogram, PowerConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{self, run_trial, summarize, Summary, Trial};
use crate::model::{load_pretrained, AggregatorKind, Model};
use crate::numerics::{Matrix, Rng};
use crate::train::{
    evaluate, initial_checkpoint, read_corpus, train_loop, Checkpoint, Dataset, EvalReport, TaskKind, TrainConfig,
    BEST_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

pub const THREADS_ENV: &str = "EIGENCENT_THREADS";
pub const CONFIG_FILE: &str = "config.json";
pub const TEST_REPORT: &str = "test_eval.json";
pub const EVAL_REPORT: &str = "eval.json";
pub const GRADCHECK_REPORT: &str = "gradcheck.json";
pub const HISTOGRAM_FILE: &str = "converge_histogram.json";
pub const HISTOGRAM_SUMMARY: &str = "converge_summary.txt";
pub const GRAPH_FILE: &str = "graph.json";

#[derive(Debug, Parser)]
#[command(name = "eigencent", version, about = "Eigen-centrality self-attention for text classification")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// eigen, self_attn, max or avg.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_aggregator)]
    pub aggregator: Option<AggregatorKind>,
    /// sentence, document, pair or synthetic.
    #[arg(long, global = true, value_parser = parse_task)]
    pub task: Option<TaskKind>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a classifier; writes the log and checkpoints to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Check the power-method gradients on random instances.
    Gradcheck(GradcheckArgs),
    /// Histogram power-method step counts.
    BenchConverge(BenchArgs),
    /// Export the word graph of one sentence.
    ExportGraph(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Continue from the last checkpoint in --out.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Defaults to best.ckpt in --out.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// TSV corpus; defaults to the checkpoint's dev split.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// Largest matrix size.
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Print per-step `∂L/∂z` norms as JSON lines.
    #[arg(long)]
    pub theorem1: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Trained model; without it a random scorer is used.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// TSV corpus; defaults to the checkpoint's dev split.
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Random mode: number of sequences.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, default_value_t = 2)]
    pub min_len: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// Random mode: hidden-state size.
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Random mode: connectivity hidden units.
    #[arg(long, default_value_t = 8)]
    pub conn_hidden: usize,
    /// Random mode: uniform `1/n` matrices instead of a random scorer.
    #[arg(long)]
    pub uniform: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    /// Whitespace-tokenized sentence.
    #[arg(long)]
    pub sentence: String,
}

fn parse_aggregator(s: &str) -> std::result::Result<AggregatorKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_task(s: &str) -> std::result::Result<TaskKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Word graph of one sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub tokens: Vec<String>,
    pub weights: Vec<f64>,
    /// Row-major; `adjacency[i][j]` is the edge from word `j` to word `i`.
    pub adjacency: Vec<Vec<f64>>,
    pub meta: GraphMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub lambda: f64,
    pub steps_taken: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub n_max: usize,
    pub summary: Summary,
    pub trials: Vec<Trial>,
}

/// One `--theorem1` output line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub trial: usize,
    pub n: usize,
    pub lambda2_over_lambda1: f64,
    pub step: usize,
    pub norm: f64,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence(_) => EXIT_DIVERGENCE,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return EXIT_USAGE;
    }
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`]. A pool that already
/// exists is left alone.
fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let g = &cli.global;
    match &cli.command {
        Command::Train(a) => cmd_train(g, a),
        Command::Eval(a) => cmd_eval(g, a),
        Command::Gradcheck(a) => cmd_gradcheck(g, a),
        Command::BenchConverge(a) => cmd_bench_converge(g, a),
        Command::ExportGraph(a) => cmd_export_graph(g, a),
    }
}

/// Config file (or the task's built-in settings) with command-line overrides
/// applied. Relative data paths resolve against the config file's directory.
pub fn load_config(g: &GlobalArgs) -> Result<TrainConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
            let mut cfg = TrainConfig::from_json(&text)?;
            let base = path.parent().unwrap_or(Path::new(""));
            for p in [
                &mut cfg.train_path,
                &mut cfg.dev_path,
                &mut cfg.test_path,
                &mut cfg.pretrained_embeddings,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            cfg
        }
        None => match g.task.unwrap_or_default() {
            TaskKind::Synthetic => TrainConfig::synthetic_quick(),
            TaskKind::Pair => TrainConfig::nli(),
            _ => TrainConfig::default(),
        },
    };
    if let Some(t) = g.task {
        cfg.task = t;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(a) = g.aggregator {
        cfg.aggregator = a;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn corpus(path: &Option<PathBuf>, what: &str, task: TaskKind) -> Result<Option<Vec<crate::train::RawExample>>> {
    match path {
        None => Ok(None),
        Some(p) => {
            if !p.is_file() {
                return Err(Error::InvalidConfig(format!("{what} corpus {} not found", p.display())));
            }
            read_corpus(p, task).map(Some)
        }
    }
}

/// Train, dev and optional test splits for `cfg`.
pub fn load_splits(cfg: &TrainConfig) -> Result<(Dataset, Dataset, Option<Dataset>)> {
    if cfg.task == TaskKind::Synthetic {
        let (train, dev) = cfg.synthetic.splits(cfg.seed)?;
        return Ok((train, dev, None));
    }
    let train = corpus(&cfg.train_path, "train", cfg.task)?
        .ok_or_else(|| Error::InvalidConfig(format!("task {} needs train_path", cfg.task.name())))?;
    let dev = corpus(&cfg.dev_path, "dev", cfg.task)?
        .ok_or_else(|| Error::InvalidConfig(format!("task {} needs dev_path", cfg.task.name())))?;
    let test = corpus(&cfg.test_path, "test", cfg.task)?;
    let mut others: Vec<&[crate::train::RawExample]> = vec![&dev];
    if let Some(t) = &test {
        others.push(t);
    }
    let (train, mut rest) = Dataset::build_splits(cfg.task, &train, &others, cfg.min_count)?;
    let test = if test.is_some() { rest.pop() } else { None };
    let dev = rest.pop().expect("dev split");
    Ok((train, dev, test))
}

fn out_dir(g: &GlobalArgs) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn cmd_train(g: &GlobalArgs, a: &TrainArgs) -> Result<i32> {
    let mut cfg = load_config(g)?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    let out = out_dir(g);
    fs::create_dir_all(&out)?;
    let (train, dev, test) = load_splits(&cfg)?;

    let last_path = out.join(LAST_CHECKPOINT);
    let (start, best) = if a.resume && last_path.is_file() {
        let mut start = Checkpoint::load(&last_path)?;
        if start.model.spec != cfg.model_spec(train.vocab.len(), train.n_classes()) || start.vocab != train.vocab {
            return Err(Error::InvalidConfig(format!(
                "{} was written with a different model or vocabulary",
                last_path.display()
            )));
        }
        let best_path = out.join(BEST_CHECKPOINT);
        let best = if best_path.is_file() {
            Some(Checkpoint::load(&best_path)?)
        } else {
            None
        };
        start.config = cfg.clone();
        println!("resuming after epoch {} (step {})", start.epoch, start.step);
        (start, best)
    } else {
        let spec = cfg.model_spec(train.vocab.len(), train.n_classes());
        let model = match &cfg.pretrained_embeddings {
            Some(p) => {
                let f = fs::File::open(p)
                    .map_err(|e| Error::InvalidConfig(format!("cannot open {}: {e}", p.display())))?;
                let (vectors, hits) = load_pretrained(BufReader::new(f), &train.vocab, cfg.embedding_size, cfg.seed)?;
                println!("pretrained vectors for {hits} of {} tokens", train.vocab.len());
                Model::with_embeddings(spec, vectors, cfg.seed)?
            }
            None => Model::new(spec, cfg.seed)?,
        };
        (initial_checkpoint(model, &cfg, &train), None)
    };
    write_json(&out.join(CONFIG_FILE), &cfg)?;

    println!(
        "task {}  aggregator {}  {} train / {} dev  vocabulary {}  parameters {}",
        cfg.task.name(),
        cfg.aggregator,
        train.len(),
        dev.len(),
        train.vocab.len(),
        start.model.store.num_scalars()
    );
    let outcome = train_loop(&train, &dev, start, best, &cfg, Some(&out))?;
    for r in &outcome.log {
        println!(
            "epoch {:3}  loss {:.4}  train {:.4}  dev {:.4}  lr {:.3e}  power steps {:.2}",
            r.epoch, r.train_loss, r.train_acc, r.dev_acc, r.lr, r.mean_power_steps
        );
    }
    if let Some(b) = outcome.best.best {
        println!("best dev accuracy {:.4} at epoch {}", b.accuracy, b.epoch);
    }
    if let Some(test) = test {
        let report = evaluate(&outcome.best.model, &test)?;
        println!("test accuracy {:.4} ({} / {})", report.accuracy, report.correct, report.total);
        write_json(&out.join(TEST_REPORT), &report)?;
    }
    println!("wrote {}", out.join(LOG_FILE).display());
    Ok(EXIT_OK)
}

fn checkpoint_path(g: &GlobalArgs, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out_dir(g).join(BEST_CHECKPOINT))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::InvalidConfig(format!("checkpoint {} not found", path.display())));
    }
    Checkpoint::load(path)
}

/// `--data` mapped through the checkpoint's vocabulary, or its dev split.
fn checkpoint_data(ck: &Checkpoint, data: &Option<PathBuf>) -> Result<Dataset> {
    let task = ck.config.task;
    if let Some(raw) = corpus(data, "evaluation", task)? {
        return Dataset::from_raw(task, &raw, &ck.vocab, &ck.labels);
    }
    if task == TaskKind::Synthetic {
        return Ok(ck.config.synthetic.splits(ck.config.seed)?.1);
    }
    let raw = corpus(&ck.config.dev_path, "dev", task)?
        .ok_or_else(|| Error::InvalidConfig("checkpoint has no dev_path; pass --data".into()))?;
    Dataset::from_raw(task, &raw, &ck.vocab, &ck.labels)
}

fn cmd_eval(g: &GlobalArgs, a: &EvalArgs) -> Result<i32> {
    let ck = load_checkpoint(&checkpoint_path(g, &a.checkpoint))?;
    let data = checkpoint_data(&ck, &a.data)?;
    let report: EvalReport = evaluate(&ck.model, &data)?;
    println!("{}", serde_json::to_string(&report)?);
    if let Some(out) = &g.out {
        fs::create_dir_all(out)?;
        write_json(&out.join(EVAL_REPORT), &report)?;
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(g: &GlobalArgs, a: &GradcheckArgs) -> Result<i32> {
    if a.n < 2 || a.trials == 0 {
        return Err(Error::InvalidConfig("gradcheck needs --n ≥ 2 and --trials ≥ 1".into()));
    }
    let seed = g.seed.unwrap_or(2019);
    let trials = (0..a.trials)
        .into_par_iter()
        .map(|t| run_trial(seed, t, a.n))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&trials);

    if a.theorem1 {
        for t in &trials {
            for (step, &norm) in t.decay.curve.iter().enumerate() {
                let p = DecayPoint {
                    trial: t.trial,
                    n: t.decay.n,
                    lambda2_over_lambda1: t.decay.lambda2_over_lambda1,
                    step,
                    norm,
                };
                println!("{}", serde_json::to_string(&p)?);
            }
        }
    }
    let text = gradcheck_text(&summary, seed, a.n);
    if a.theorem1 {
        eprint!("{text}");
    } else {
        print!("{text}");
    }
    if let Some(out) = &g.out {
        fs::create_dir_all(out)?;
        let report = GradcheckReport {
            seed,
            n_max: a.n,
            summary: summary.clone(),
            trials,
        };
        write_json(&out.join(GRADCHECK_REPORT), &report)?;
    }
    Ok(if summary.passed { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn gradcheck_text(s: &Summary, seed: u64, n: usize) -> String {
    let mark = |ok: bool| if ok { "ok" } else { "FAIL" };
    let mut t = format!("{} trials, n in 2..={n}, seed {seed}\n", s.trials);
    t += &format!(
        "analytic vs finite differences  max rel err {:.3e}  limit {:.0e}  {}\n",
        s.max_fd_rel_err,
        gradcheck::FD_THRESHOLD,
        mark(s.max_fd_rel_err <= gradcheck::FD_THRESHOLD)
    );
    t += &format!(
        "analytic vs unrolled            max abs err {:.3e}  limit {:.0e}  {}\n",
        s.max_unrolled_abs_err,
        gradcheck::UNROLL_THRESHOLD,
        mark(s.max_unrolled_abs_err <= gradcheck::UNROLL_THRESHOLD)
    );
    t += &format!(
        "dL/dz norm after 200 steps      max         {:.3e}  limit {:.0e}  {}\n",
        s.max_init_grad_norm,
        gradcheck::INIT_GRAD_THRESHOLD,
        mark(s.max_init_grad_norm <= gradcheck::INIT_GRAD_THRESHOLD)
    );
    t += &format!(
        "decay rate vs |l2|/l1           max rel err {:.3e}  limit {:.2}   {}\n",
        s.max_ratio_err,
        gradcheck::RATIO_TOLERANCE,
        mark(s.max_ratio_err <= gradcheck::RATIO_TOLERANCE)
    );
    t += &format!(
        "geometric fit                   min R2      {:.6}    limit {:.2}   {}\n",
        s.min_r2,
        gradcheck::MIN_R2,
        mark(s.min_r2 >= gradcheck::MIN_R2)
    );
    t += &format!("{}\n", if s.passed { "PASS" } else { "FAIL" });
    t
}

/// Adjacency matrices of every eigen aggregation in the model's forward
/// pass over `data`.
pub fn model_adjacencies(model: &Model, data: &Dataset) -> Result<Vec<AdjacencyMatrix>> {
    if model.spec.aggregator != AggregatorKind::Eigen {
        return Err(Error::InvalidConfig(format!(
            "convergence benchmark needs the eigen aggregator, model uses {}",
            model.spec.aggregator
        )));
    }
    let per_example = data
        .examples
        .par_iter()
        .map(|e| {
            let f = model.forward(&e.input, None)?;
            Ok(f.eigen_results().into_iter().map(|(a, _)| a.clone()).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_example.into_iter().flatten().collect())
}

/// Random-scorer batch: sizes uniform in `min_len..=max_len`, Gaussian
/// hidden states, one random connectivity network per sequence.
pub fn random_adjacencies(a: &BenchArgs, seed: u64) -> Result<Vec<AdjacencyMatrix>> {
    if a.min_len == 0 || a.max_len < a.min_len || a.count == 0 || a.dim == 0 || a.conn_hidden == 0 {
        return Err(Error::InvalidConfig(
            "bench-converge needs count ≥ 1, dim ≥ 1, conn-hidden ≥ 1 and 1 ≤ min-len ≤ max-len".into(),
        ));
    }
    (0..a.count)
        .into_par_iter()
        .map(|i| {
            let mut rng = Rng::derive(seed, &[i as u64]);
            let n = a.min_len + rng.below(a.max_len - a.min_len + 1);
            if a.uniform {
                return AdjacencyMatrix::new(Matrix::filled(n, n, 1.0 / n as f64));
            }
            let scorer = ConnectivityScorer::random(a.dim, a.conn_hidden, &mut rng);
            let h = rng.normal_matrix(a.dim, n, 1.0);
            build_adjacency(&scorer, &h, &vec![true; n])
        })
        .collect()
}

pub fn histogram_text(h: &ConvergeHistogram) -> String {
    let limit = h.max_converge_steps;
    format!(
        "sequences {}\nepsilon {:e}\nmedian steps {}\np95 steps {}\nconverged in < {limit} steps {:.2}%\nunconverged at {limit} {:.2}%\n",
        h.total,
        h.epsilon,
        h.median(),
        h.quantile(0.95),
        100.0 * h.fraction_converged_below(limit),
        100.0 * h.unconverged as f64 / h.total as f64,
    )
}

fn cmd_bench_converge(g: &GlobalArgs, a: &BenchArgs) -> Result<i32> {
    let (mats, power) = match &a.checkpoint {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            let data = checkpoint_data(&ck, &a.data)?;
            (model_adjacencies(&ck.model, &data)?, ck.model.spec.power)
        }
        None => {
            let power = match &g.config {
                Some(_) => load_config(g)?.power,
                None => PowerConfig::default(),
            };
            (random_adjacencies(a, g.seed.unwrap_or(2019))?, power)
        }
    };
    let hist = converge_stats(&mats, &power)?;
    let text = histogram_text(&hist);
    print!("{text}");
    let out = out_dir(g);
    fs::create_dir_all(&out)?;
    write_json(&out.join(HISTOGRAM_FILE), &hist)?;
    fs::write(out.join(HISTOGRAM_SUMMARY), text)?;
    Ok(EXIT_OK)
}

/// Graph export for a whitespace-tokenized sentence; unknown words map to
/// the unknown token.
pub fn export_graph(ck: &Checkpoint, sentence: &str) -> Result<GraphExport> {
    let words: Vec<&str> = sentence.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::EmptySequence);
    }
    let ids = ck.vocab.encode(&words);
    let g = ck.model.sentence_graph(&ids)?;
    let m = g.adjacency.matrix();
    Ok(GraphExport {
        tokens: g.positions.iter().map(|&p| words[p].to_string()).collect(),
        weights: g.weights.weights.clone(),
        adjacency: (0..m.rows()).map(|r| m.row(r).to_vec()).collect(),
        meta: GraphMeta {
            lambda: g.eig.lambda,
            steps_taken: g.eig.steps_taken,
            converged: g.eig.converged,
        },
    })
}

fn cmd_export_graph(g: &GlobalArgs, a: &ExportArgs) -> Result<i32> {
    let ck = load_checkpoint(&checkpoint_path(g, &a.checkpoint))?;
    let export = export_graph(&ck, &a.sentence)?;
    let out = out_dir(g);
    fs::create_dir_all(&out)?;
    let path = out.join(GRAPH_FILE);
    write_json(&path, &export)?;
    for (t, w) in export.tokens.iter().zip(&export.weights) {
        println!("{w:.4}  {t}");
    }
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}
