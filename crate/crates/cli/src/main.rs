use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use prfdr::config::ConfigError;
use prfdr::data::{generate_synthetic, DataError};
use prfdr::eval::{evaluate, paired_t_test_reports, EvalError, TTest};
use prfdr::retrieval::{prf_tag, run_bm25, DocStore, PrfConfig, Retriever};
use prfdr::run::RunError;
use prfdr::workflow::{pipeline_depths, run_pipeline, Dataset, FirstPass, PipelineError, Workspace, REPORT_METRICS};
use prfdr::{Metric, Qrels, RunConfig, RunList, SyntheticSpec};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Parser)]
#[command(name = "prfdr", version, about = "Dense retrieval with a pseudo-relevance-feedback query encoder")]
struct Cli {
    /// Config file, or `default` for the built-in configuration.
    #[arg(long, global = true, default_value = "default")]
    config: PathBuf,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic benchmark.
    GenSynthetic {
        /// TOML file with generator parameters; defaults to the config's
        /// `[synthetic]` section.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory (default: `<out_dir>/data`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the vocabulary from the corpus.
    BuildVocab,
    /// Train the baseline or the feedback encoder.
    Train {
        #[arg(long, value_enum)]
        phase: Phase,
        /// Feedback depth for `--phase prf` (default: `train.prf.k`).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Encode the corpus with the baseline encoder into `index.bin`.
    BuildIndex,
    /// Retrieve for one query split and write a TREC run.
    Retrieve {
        #[arg(long, value_enum, default_value = "prf")]
        mode: Mode,
        /// Feedback depth at inference (default: `prf.k`).
        #[arg(long)]
        k: Option<usize>,
        /// Depth the feedback encoder was trained at (default: `--k`).
        #[arg(long)]
        model_k: Option<usize>,
        /// Ranked list length (default: `prf.final_depth`).
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        /// Output run file (default: under `<out_dir>/runs`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a run against qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Comma-separated metrics, e.g. mrr@10,ndcg@10,recall@1000,hole@10
        /// (the default).
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// Print full reports as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Paired two-tailed t-test between two runs.
    Significance {
        #[arg(long)]
        run_a: PathBuf,
        #[arg(long)]
        run_b: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[arg(long, default_value = "mrr@10")]
        metric: String,
    },
    /// Attention, geometry or highlight analysis of a trained feedback encoder.
    Analyze {
        #[arg(value_enum)]
        kind: AnalysisKind,
        /// Depth of the analysed encoder (default: `train.prf.k`).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Compare test runs across feedback depths.
    Ablate {
        /// Depths to compare (default: `ablation.ks`).
        #[arg(long, value_delimiter = ',')]
        ks: Vec<usize>,
    },
    /// Run every stage end to end.
    Pipeline,
}

#[derive(Clone, Copy, ValueEnum)]
enum Phase {
    Baseline,
    Prf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Baseline,
    Prf,
    Bm25,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    fn queries(self, data: &Dataset) -> &[prfdr::QueryRecord] {
        match self {
            Split::Train => &data.train,
            Split::Dev => &data.dev,
            Split::Test => &data.test,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AnalysisKind {
    Attention,
    Geometry,
    Highlight,
}

fn read_qrels(path: &Path) -> Result<Qrels, CliError> {
    Ok(prfdr::data::load_qrels(path)?)
}

fn parse_metrics(names: &[String]) -> Result<Vec<Metric>, CliError> {
    if names.is_empty() {
        return Ok(REPORT_METRICS.to_vec());
    }
    Ok(names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?)
}

fn workspace(cli: &Cli) -> Result<Workspace, CliError> {
    Ok(Workspace::open(RunConfig::load(&cli.config)?)?)
}

fn first_pass(ws: &Workspace, data: &Dataset, vocab: &prfdr::Vocabulary) -> Result<FirstPass, CliError> {
    match ws.load_first_pass() {
        Ok(fp) => Ok(fp),
        Err(_) => {
            let index = ws.load_index()?;
            let baseline = ws.load_baseline(vocab)?;
            Ok(ws.first_pass(data, vocab, &index, &baseline)?)
        }
    }
}

fn print_ttest(name: &str, t: &TTest) {
    println!(
        "{name}: mean diff {:+.4}  t {:.4}  df {}  p {:.4}{}",
        t.mean_diff,
        t.t,
        t.df,
        t.p,
        if t.significant { "  (significant)" } else { "" }
    );
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.cmd {
        Command::GenSynthetic { spec, out } => {
            let spec = match spec {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|source| CliError::Io { path: p.display().to_string(), source })?;
                    toml::from_str::<SyntheticSpec>(&text).map_err(|e| ConfigError::Parse { path: p.display().to_string(), msg: e.to_string() })?
                }
                None => RunConfig::load(&cli.config)?.synthetic,
            };
            let dir = match out {
                Some(d) => d.clone(),
                None => RunConfig::load(&cli.config)?.paths.out_dir.join("data"),
            };
            let data = generate_synthetic(&spec)?;
            data.write(&dir)?;
            println!(
                "{} documents, {}/{}/{} queries, {} judgments -> {}",
                data.corpus.len(),
                data.train.len(),
                data.dev.len(),
                data.test.len(),
                data.qrels.len(),
                dir.display()
            );
        }
        Command::BuildVocab => {
            let ws = workspace(&cli)?;
            let data = ws.load_data()?;
            let vocab = ws.build_vocab(&data)?;
            println!("{} tokens -> {}", vocab.len(), ws.path("vocab.txt").display());
        }
        Command::Train { phase, k } => {
            let ws = workspace(&cli)?;
            let data = ws.load_data()?;
            let vocab = ws.load_vocab()?;
            let outcome = match phase {
                Phase::Baseline => ws.train_baseline(&data, &vocab)?,
                Phase::Prf => {
                    let k = k.unwrap_or(ws.config.train.prf.k);
                    let index = ws.load_index()?;
                    let baseline = ws.load_baseline(&vocab)?;
                    let fp = ws.first_pass(&data, &vocab, &index, &baseline)?;
                    ws.train_prf(k, &data, &vocab, &index, &baseline, &fp)?
                }
            };
            println!("best step {} dev mrr@10 {:.4}", outcome.best_step, outcome.best_dev_mrr10);
        }
        Command::BuildIndex => {
            let ws = workspace(&cli)?;
            let data = ws.load_data()?;
            let vocab = ws.load_vocab()?;
            let baseline = ws.load_baseline(&vocab)?;
            let sha = ws.build_index(&data, &vocab, &baseline)?;
            println!("{} sha256 {sha}", ws.path("index.bin").display());
        }
        Command::Retrieve { mode, k, model_k, depth, split, out } => {
            let ws = workspace(&cli)?;
            let data = ws.load_data()?;
            let queries = split.queries(&data);
            let depth = depth.unwrap_or(ws.config.prf.final_depth);
            let (run, default_name) = match mode {
                Mode::Bm25 => (run_bm25(queries, &data.corpus, depth, &ws.tag("bm25")), format!("bm25.{}", split.name())),
                Mode::Baseline | Mode::Prf => {
                    let vocab = ws.load_vocab()?;
                    let index = ws.load_index()?;
                    let baseline = ws.load_baseline(&vocab)?;
                    let docs = DocStore::new(&data.corpus, &vocab);
                    let r = Retriever::new(&vocab, &index, &docs);
                    let fail = |e| PipelineError { stage: "retrieve", source: Box::new(e) };
                    let out = if let Mode::Prf = mode {
                        let k = k.unwrap_or(ws.config.prf.k);
                        let model_k = model_k.unwrap_or(k);
                        let (prf, _) = ws.load_prf(model_k, &vocab)?;
                        let pc = PrfConfig { k, final_depth: depth, ..ws.config.prf };
                        let run = r.run_prf(queries, &prf, &baseline, &pc, &ws.tag(&prf_tag(k, model_k))).map_err(fail)?;
                        let name = if model_k == k { format!("prf_k{k}") } else { format!("prf_k{k}_m{model_k}") };
                        (run, format!("{name}.{}", split.name()))
                    } else {
                        let run = r.run_first_pass(queries, &baseline, depth, &ws.tag("baseline")).map_err(fail)?;
                        (run, format!("baseline.{}", split.name()))
                    };
                    let c = r.counters.snapshot();
                    println!("{} queries, {} encoder calls, {} index searches", c.queries, c.encoder_calls, c.index_searches);
                    out
                }
            };
            let path = out.clone().unwrap_or_else(|| ws.path(&format!("runs/{default_name}.trec")));
            run.write(&path)?;
            println!("{} -> {}", run.tag, path.display());
        }
        Command::Evaluate { run, qrels, metrics, json } => {
            let qrels = read_qrels(qrels)?;
            let run = RunList::read(run)?;
            let reports: Vec<_> = parse_metrics(metrics)?.into_iter().map(|m| evaluate(&run, &qrels, m)).collect();
            if *json {
                println!("{}", serde_json::to_string_pretty(&reports).expect("reports serialize"));
            } else {
                for r in &reports {
                    println!("{:<12} {:.6}  ({} evaluated, {} excluded)", r.metric, r.mean, r.evaluated, r.excluded);
                }
            }
        }
        Command::Significance { run_a, run_b, qrels, metric } => {
            let qrels = read_qrels(qrels)?;
            let m: Metric = metric.parse()?;
            let ra = evaluate(&RunList::read(run_a)?, &qrels, m);
            let rb = evaluate(&RunList::read(run_b)?, &qrels, m);
            println!("{m}: a {:.4}  b {:.4}", ra.mean, rb.mean);
            print_ttest("a - b", &paired_t_test_reports(&ra, &rb)?);
        }
        Command::Analyze { kind, k } => {
            let ws = workspace(&cli)?;
            let k = k.unwrap_or(ws.config.train.prf.k);
            let data = ws.load_data()?;
            let vocab = ws.load_vocab()?;
            let fp = first_pass(&ws, &data, &vocab)?;
            match kind {
                AnalysisKind::Attention => {
                    let s = ws.analyze_attention(k, &data, &vocab, &fp.test)?;
                    println!("{}", serde_json::to_string_pretty(&s).expect("summary serializes"));
                }
                AnalysisKind::Geometry => {
                    let g = ws.analyze_geometry(k)?;
                    println!("{}", serde_json::to_string_pretty(&g).expect("geometry serializes"));
                }
                AnalysisKind::Highlight => {
                    ws.analyze_highlight(k, &data, &vocab, &fp.test)?;
                    println!("{}", ws.path(&format!("analysis/highlight_k{k}.html")).display());
                }
            }
        }
        Command::Ablate { ks } => {
            let ws = workspace(&cli)?;
            let ks = if ks.is_empty() { ws.config.ablation.ks.clone() } else { ks.clone() };
            let data = ws.load_data()?;
            let vocab = ws.load_vocab()?;
            let fp = first_pass(&ws, &data, &vocab)?;
            let rows = ws.ablate(&ks, &data, &fp.test)?;
            print!("{}", prfdr::analysis::ablation_table(&rows));
        }
        Command::Pipeline => {
            let config = RunConfig::load(&cli.config)?;
            log::info!("pipeline over depths {:?}", pipeline_depths(&config));
            let summary = run_pipeline(&config)?;
            print!("{}", summary.table());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: --threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
