//! End-to-end workflow: data, vocabulary, baseline training, index, first
//! pass, feedback training per depth, second pass, evaluation and analysis.
//!
//! Every artifact lands under `paths.out_dir`:
//!
//! ```text
//! config.resolved.toml   data/         vocab.txt      index.bin
//! models/*.ckpt          logs/*.jsonl  runs/*.trec    metrics/*.json
//! analysis/              summary.json  summary.txt
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    ablation_csv, ablation_table, attention_records, depth_ablation, highlight_html, highlight_terms,
    summarize_attention, AblationRow, AttentionSummary, GeometryRecord,
};
use crate::config::RunConfig;
use crate::data::{generate_synthetic, load_corpus, load_qrels, load_queries, DataFiles, DocumentRecord, QueryRecord};
use crate::encoder::{Checkpoint, Encoder, EncoderConfig, EncoderParams, Vocabulary};
use crate::eval::{evaluate, paired_t_test_reports, Metric, MetricReport, Qrels, TTest};
use crate::index::FlatIndex;
use crate::retrieval::{prf_tag, run_bm25, CounterSnapshot, DocStore, PrfConfig, Retriever};
use crate::run::RunList;
use crate::train::{train_baseline, train_prf, PrfTrainInputs, TrainData, TrainLogRecord, TrainOutcome, NEGATIVE_POOL_DEPTH};

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

#[derive(Debug, Error)]
enum LogError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{0} has no geometry records")]
    NoGeometry(String),
}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: std::error::Error + Send + Sync + 'static> Stage<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError { stage, source: Box::new(e) })
    }
}

/// Metrics reported for every run.
pub const REPORT_METRICS: [Metric; 4] = [Metric::MRR10, Metric::NDCG10, Metric::RECALL1K, Metric::HOLE10];

/// Loaded benchmark.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub corpus: Vec<DocumentRecord>,
    pub train: Vec<QueryRecord>,
    pub dev: Vec<QueryRecord>,
    pub test: Vec<QueryRecord>,
    pub qrels: Qrels,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, crate::data::DataError> {
        let d = dir.as_ref();
        Ok(Self {
            corpus: load_corpus(d.join(DataFiles::CORPUS))?,
            train: load_queries(d.join(DataFiles::TRAIN))?,
            dev: load_queries(d.join(DataFiles::DEV))?,
            test: load_queries(d.join(DataFiles::TEST))?,
            qrels: load_qrels(d.join(DataFiles::QRELS))?,
        })
    }

    pub fn corpus_ids(&self) -> Vec<String> {
        self.corpus.iter().map(|d| d.id.clone()).collect()
    }
}

pub fn model_config(config: &RunConfig, vocab: &Vocabulary) -> EncoderConfig {
    EncoderConfig { vocab_size: vocab.len(), ..config.model }
}

fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(Sha256::digest(fs::read(path)?).iter().map(|b| format!("{b:02x}")).collect())
}

/// All metric reports of one run, as written to `metrics/<name>.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub config_hash: String,
    pub run: String,
    pub tag: String,
    pub metrics: BTreeMap<String, MetricReport>,
}

pub fn run_metrics(name: &str, run: &RunList, qrels: &Qrels, config_hash: &str) -> RunMetrics {
    RunMetrics {
        config_hash: config_hash.to_string(),
        run: name.to_string(),
        tag: run.tag.clone(),
        metrics: REPORT_METRICS.iter().map(|&m| (m.to_string(), evaluate(run, qrels, m))).collect(),
    }
}

/// Result of training and evaluating one feedback depth.
#[derive(Debug, Clone, Serialize)]
pub struct DepthResult {
    pub k: usize,
    pub best_step: usize,
    pub best_dev_mrr10: f64,
    pub test: BTreeMap<String, f64>,
    pub vs_baseline_mrr10: Option<TTest>,
}

/// Everything `pipeline` reports.
#[derive(Debug, Clone, Serialize)]
pub struct PipelineSummary {
    pub config_hash: String,
    pub baseline_best_step: usize,
    pub baseline_best_dev_mrr10: f64,
    pub bm25: BTreeMap<String, f64>,
    pub baseline: BTreeMap<String, f64>,
    pub depths: Vec<DepthResult>,
    pub ablation: Vec<AblationRow>,
    /// Depth analysed in detail (`train.prf.k`).
    pub analysis_k: usize,
    pub attention: AttentionSummary,
    pub geometry: GeometryRecord,
    pub index_sha256_before_prf: String,
    pub index_sha256_after_prf: String,
    /// Counters from the second-pass test run at `analysis_k`.
    pub counters: CounterSnapshot,
}

impl PipelineSummary {
    pub fn depth(&self, k: usize) -> Option<&DepthResult> {
        self.depths.iter().find(|d| d.k == k)
    }

    /// Table with one row per system.
    pub fn table(&self) -> String {
        let mut out = format!("config {}\n\n", self.config_hash);
        out.push_str(&format!("{:<14} {:>8} {:>8} {:>8} {:>8}\n", "system", "MRR@10", "NDCG@10", "R@1K", "HOLE@10"));
        let mut row = |name: &str, m: &BTreeMap<String, f64>| {
            let g = |k: &str| m.get(k).copied().unwrap_or(f64::NAN);
            out.push_str(&format!(
                "{:<14} {:>8.4} {:>8.4} {:>8.4} {:>8.4}\n",
                name,
                g("mrr@10"),
                g("ndcg@10"),
                g("recall@1000"),
                g("hole@10")
            ));
        };
        row("bm25", &self.bm25);
        row("baseline", &self.baseline);
        for d in &self.depths {
            row(&format!("prf k={}", d.k), &d.test);
        }
        out.push('\n');
        out.push_str(&ablation_table(&self.ablation));
        out
    }
}

fn means(m: &RunMetrics) -> BTreeMap<String, f64> {
    m.metrics.iter().map(|(k, r)| (k.clone(), r.mean)).collect()
}

/// An output directory plus the config that fills it. Each stage method
/// writes its artifacts and the matching `load_*` method reads them back, so
/// stages can run in one process or across separate CLI invocations.
pub struct Workspace {
    pub config: RunConfig,
    pub hash: String,
    root: PathBuf,
}

impl Workspace {
    /// Validates the config and creates the output layout.
    pub fn open(config: RunConfig) -> Result<Self, PipelineError> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(crate::config::ConfigError::Invalid(errs)).stage("config");
        }
        let ws = Self { hash: config.hash(), root: config.paths.out_dir.clone(), config };
        for dir in ["", "runs", "metrics", "models", "logs", "analysis"] {
            fs::create_dir_all(ws.path(dir)).stage("write-output")?;
        }
        ws.write("config.resolved.toml", format!("# config hash {}\n{}", ws.hash, ws.config.to_toml()))?;
        Ok(ws)
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write(&self, rel: &str, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).stage("write-output")?;
        }
        fs::write(&p, bytes).stage("write-output")
    }

    pub fn json<T: Serialize>(&self, rel: &str, value: &T) -> Result<(), PipelineError> {
        self.write(rel, serde_json::to_string_pretty(value).stage("write-output")? + "\n")
    }

    pub fn jsonl<T: Serialize>(&self, rel: &str, items: &[T]) -> Result<(), PipelineError> {
        let mut s = String::new();
        for it in items {
            s.push_str(&serde_json::to_string(it).stage("write-output")?);
            s.push('\n');
        }
        self.write(rel, s)
    }

    /// Run tag `<name>-<config hash>`.
    pub fn tag(&self, name: &str) -> String {
        format!("{name}-{}", self.hash)
    }

    fn data_dir(&self) -> PathBuf {
        if self.config.paths.data_dir.as_os_str().is_empty() {
            self.path("data")
        } else {
            self.config.paths.data_dir.clone()
        }
    }

    /// Generates the synthetic benchmark when no `data_dir` is configured.
    pub fn gen_data(&self) -> Result<Dataset, PipelineError> {
        if self.config.paths.data_dir.as_os_str().is_empty() {
            let data = generate_synthetic(&self.config.synthetic).stage("gen-synthetic")?;
            data.write(self.data_dir()).stage("gen-synthetic")?;
            Ok(Dataset { corpus: data.corpus, train: data.train, dev: data.dev, test: data.test, qrels: data.qrels })
        } else {
            self.load_data()
        }
    }

    pub fn load_data(&self) -> Result<Dataset, PipelineError> {
        Dataset::load(self.data_dir()).stage("load-data")
    }

    pub fn build_vocab(&self, data: &Dataset) -> Result<Vocabulary, PipelineError> {
        let vocab =
            Vocabulary::build(data.corpus.iter().map(|d| d.text.as_str()), self.config.vocab.min_count).stage("build-vocab")?;
        vocab.save(self.path("vocab.txt")).stage("build-vocab")?;
        Ok(vocab)
    }

    pub fn load_vocab(&self) -> Result<Vocabulary, PipelineError> {
        Vocabulary::load(self.path("vocab.txt")).stage("load-vocab")
    }

    fn save_checkpoint(&self, rel: &str, outcome: &TrainOutcome, phase: &str, k: usize) -> Result<(), PipelineError> {
        let ckpt = Checkpoint::new(outcome.best.clone())
            .with_meta("phase", phase)
            .with_meta("k", k)
            .with_meta("best_step", outcome.best_step)
            .with_meta("best_dev_mrr10", format!("{:.6}", outcome.best_dev_mrr10))
            .with_meta("optimizer", "adam(beta1=0.9,beta2=0.999,eps=1e-8)")
            .with_meta("config_hash", &self.hash);
        self.write(rel, ckpt.to_bytes())
    }

    fn load_checkpoint(&self, rel: &str) -> Result<Checkpoint, PipelineError> {
        Checkpoint::load(self.path(rel)).stage("load-checkpoint")
    }

    pub fn train_baseline(&self, data: &Dataset, vocab: &Vocabulary) -> Result<TrainOutcome, PipelineError> {
        log::info!("training baseline encoder");
        let docs = DocStore::new(&data.corpus, vocab);
        let corpus_ids = data.corpus_ids();
        let td = TrainData { vocab, docs: &docs, corpus_ids: &corpus_ids, train: &data.train, dev: &data.dev, qrels: &data.qrels };
        let init = EncoderParams::init(model_config(&self.config, vocab), self.config.seed);
        let base = train_baseline(init, &self.config.train.baseline, &td).stage("train-baseline")?;
        self.save_checkpoint("models/baseline.ckpt", &base, "baseline", 0)?;
        self.write("logs/baseline.jsonl", base.log_jsonl())?;
        Ok(base)
    }

    pub fn load_baseline(&self, vocab: &Vocabulary) -> Result<Encoder, PipelineError> {
        Ok(Encoder::new(self.load_checkpoint("models/baseline.ckpt")?.params, vocab))
    }

    /// Encodes the corpus, writes `index.bin` and returns its SHA-256.
    pub fn build_index(&self, data: &Dataset, vocab: &Vocabulary, baseline: &Encoder) -> Result<String, PipelineError> {
        log::info!("building index over {} documents", data.corpus.len());
        let index = crate::retrieval::build_index(&data.corpus, baseline, vocab).stage("build-index")?;
        index.save(self.path("index.bin")).stage("build-index")?;
        self.index_sha256()
    }

    pub fn load_index(&self) -> Result<FlatIndex, PipelineError> {
        FlatIndex::load(self.path("index.bin")).stage("load-index")
    }

    pub fn index_sha256(&self) -> Result<String, PipelineError> {
        sha256_file(&self.path("index.bin")).stage("load-index")
    }

    /// First-pass runs for train (deep enough for negative sampling), dev and
    /// test; dev and test are written under `runs/`.
    pub fn first_pass(&self, data: &Dataset, vocab: &Vocabulary, index: &FlatIndex, baseline: &Encoder) -> Result<FirstPass, PipelineError> {
        let docs = DocStore::new(&data.corpus, vocab);
        let r = Retriever::new(vocab, index, &docs);
        let depth = self.config.prf.first_pass_depth;
        let tag = self.tag("baseline");
        let train = r.run_first_pass(&data.train, baseline, depth.max(NEGATIVE_POOL_DEPTH), &tag).stage("first-pass")?;
        let dev = r.run_first_pass(&data.dev, baseline, depth, &tag).stage("first-pass")?;
        let test = r.run_first_pass(&data.test, baseline, depth, &tag).stage("first-pass")?;
        train.write(self.path("runs/baseline.train.trec")).stage("first-pass")?;
        dev.write(self.path("runs/baseline.dev.trec")).stage("first-pass")?;
        test.write(self.path("runs/baseline.test.trec")).stage("first-pass")?;
        Ok(FirstPass { train, dev, test })
    }

    pub fn load_first_pass(&self) -> Result<FirstPass, PipelineError> {
        let read = |split: &str| RunList::read(self.path(&format!("runs/baseline.{split}.trec"))).stage("load-run");
        Ok(FirstPass { train: read("train")?, dev: read("dev")?, test: read("test")? })
    }

    /// Trains the feedback encoder at depth `k`, initialized from the
    /// baseline, and saves it as `models/prf_k<k>.ckpt`.
    pub fn train_prf(
        &self,
        k: usize,
        data: &Dataset,
        vocab: &Vocabulary,
        index: &FlatIndex,
        baseline: &Encoder,
        fp: &FirstPass,
    ) -> Result<TrainOutcome, PipelineError> {
        log::info!("training feedback encoder at k={k}");
        let docs = DocStore::new(&data.corpus, vocab);
        let corpus_ids = data.corpus_ids();
        let td = TrainData { vocab, docs: &docs, corpus_ids: &corpus_ids, train: &data.train, dev: &data.dev, qrels: &data.qrels };
        let tc = crate::train::TrainConfig { k, ..self.config.train.prf.clone() };
        let inputs = PrfTrainInputs { baseline, index, first_pass_train: &fp.train, first_pass_dev: &fp.dev, keep_snapshots: false };
        let outcome = train_prf(baseline.params.clone(), &tc, &td, &inputs).stage("train-prf")?;
        self.save_checkpoint(&format!("models/prf_k{k}.ckpt"), &outcome, "prf", k)?;
        self.write(&format!("logs/prf_k{k}.jsonl"), outcome.log_jsonl())?;
        Ok(outcome)
    }

    /// The feedback encoder trained at `k` and the step it was selected at.
    pub fn load_prf(&self, k: usize, vocab: &Vocabulary) -> Result<(Encoder, usize), PipelineError> {
        let ckpt = self.load_checkpoint(&format!("models/prf_k{k}.ckpt"))?;
        let step = ckpt.meta.get("best_step").and_then(|s| s.parse().ok()).unwrap_or(0);
        Ok((Encoder::new(ckpt.params, vocab), step))
    }

    /// Writes `metrics/<name>.json` for a run.
    pub fn evaluate(&self, name: &str, run: &RunList, qrels: &Qrels) -> Result<RunMetrics, PipelineError> {
        let m = run_metrics(name, run, qrels, &self.hash);
        self.json(&format!("metrics/{name}.json"), &m)?;
        Ok(m)
    }

    /// Per-query group attention of the encoder trained at `k` over the test
    /// queries' first-pass feedback.
    pub fn analyze_attention(&self, k: usize, data: &Dataset, vocab: &Vocabulary, fp_test: &RunList) -> Result<AttentionSummary, PipelineError> {
        let (prf, _) = self.load_prf(k, vocab)?;
        let docs = DocStore::new(&data.corpus, vocab);
        let groups = attention_records(&prf, &data.test, fp_test, k, vocab, &docs, &data.qrels).stage("analyze")?;
        self.jsonl(&format!("analysis/attention_k{k}.jsonl"), &groups)?;
        let summary = summarize_attention(&groups);
        self.json(&format!("analysis/attention_k{k}.summary.json"), &summary)?;
        Ok(summary)
    }

    /// Embedding geometry over the checkpoints recorded while training the
    /// encoder at `k` (dev queries), written as `analysis/geometry_k<k>.jsonl`.
    /// Returns the record of the final checkpoint.
    pub fn analyze_geometry(&self, k: usize) -> Result<GeometryRecord, PipelineError> {
        let rel = format!("logs/prf_k{k}.jsonl");
        let text = fs::read_to_string(self.path(&rel)).map_err(|source| LogError::Read { path: rel.clone(), source }).stage("analyze")?;
        let mut series = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let record: TrainLogRecord = serde_json::from_str(line).stage("analyze")?;
            series.extend(record.geometry);
        }
        let last = series.last().cloned().ok_or(LogError::NoGeometry(rel)).stage("analyze")?;
        self.jsonl(&format!("analysis/geometry_k{k}.jsonl"), &series)?;
        Ok(last)
    }

    /// Highlighted feedback inputs for the first `analysis.highlight_queries`
    /// test queries, as HTML and JSON lines.
    pub fn analyze_highlight(&self, k: usize, data: &Dataset, vocab: &Vocabulary, fp_test: &RunList) -> Result<(), PipelineError> {
        let (prf, _) = self.load_prf(k, vocab)?;
        let docs = DocStore::new(&data.corpus, vocab);
        let mut pages = Vec::new();
        for q in data.test.iter().take(self.config.analysis.highlight_queries) {
            let (input, _) = crate::analysis::feedback_input(q, fp_test, k, &prf, vocab, &docs).stage("analyze")?;
            let attn = prf.params.cls_attention(&input.seq).stage("analyze")?;
            pages.push((q.id.clone(), highlight_terms(&input, &attn, vocab)));
        }
        self.write(&format!("analysis/highlight_k{k}.html"), highlight_html(&pages))?;
        self.jsonl(&format!("analysis/highlight_k{k}.jsonl"), &pages)
    }

    /// Depth ablation over the test runs `runs/prf_k<k>.test.trec`.
    pub fn ablate(&self, ks: &[usize], data: &Dataset, fp_test: &RunList) -> Result<Vec<AblationRow>, PipelineError> {
        let mut runs = Vec::new();
        for &k in ks {
            runs.push((k, RunList::read(self.path(&format!("runs/prf_k{k}.test.trec"))).stage("ablate")?));
        }
        let refs: Vec<(usize, &RunList)> = runs.iter().map(|(k, r)| (*k, r)).collect();
        let rows = depth_ablation(fp_test, &refs, &data.qrels);
        self.write("analysis/ablation.csv", ablation_csv(&rows))?;
        Ok(rows)
    }
}

/// Baseline first-pass runs per split.
#[derive(Debug, Clone)]
pub struct FirstPass {
    pub train: RunList,
    pub dev: RunList,
    pub test: RunList,
}

/// Depths trained by `pipeline`: the ablation depths plus `train.prf.k`.
pub fn pipeline_depths(config: &RunConfig) -> Vec<usize> {
    let mut ks = config.ablation.ks.clone();
    ks.push(config.train.prf.k);
    ks.sort_unstable();
    ks.dedup();
    ks
}

/// Runs every stage and writes all artifacts.
pub fn run_pipeline(config: &RunConfig) -> Result<PipelineSummary, PipelineError> {
    let ws = Workspace::open(config.clone())?;
    let data = ws.gen_data()?;
    let vocab = ws.build_vocab(&data)?;
    let base = ws.train_baseline(&data, &vocab)?;
    let baseline = Encoder::new(base.best.clone(), &vocab);
    let index_hash_before = ws.build_index(&data, &vocab, &baseline)?;
    let index = ws.load_index()?;
    let fp = ws.first_pass(&data, &vocab, &index, &baseline)?;
    let docs = DocStore::new(&data.corpus, &vocab);

    let bm25 = run_bm25(&data.test, &data.corpus, config.prf.final_depth, &ws.tag("bm25"));
    bm25.write(ws.path("runs/bm25.test.trec")).stage("bm25")?;
    let base_metrics = ws.evaluate("baseline", &fp.test, &data.qrels)?;
    let bm25_metrics = ws.evaluate("bm25", &bm25, &data.qrels)?;

    let ak = config.train.prf.k;
    let mut depths = Vec::new();
    let mut runs = Vec::new();
    let mut counters = CounterSnapshot::default();
    for k in pipeline_depths(config) {
        let outcome = ws.train_prf(k, &data, &vocab, &index, &baseline, &fp)?;
        let prf = Encoder::new(outcome.best.clone(), &vocab);
        let pc = PrfConfig { k, ..config.prf };
        let r = Retriever::new(&vocab, &index, &docs);
        let run = r.run_prf(&data.test, &prf, &baseline, &pc, &ws.tag(&prf_tag(k, k))).stage("retrieve")?;
        run.write(ws.path(&format!("runs/prf_k{k}.test.trec"))).stage("retrieve")?;
        let m = ws.evaluate(&format!("prf_k{k}"), &run, &data.qrels)?;
        let sig = paired_t_test_reports(&m.metrics["mrr@10"], &base_metrics.metrics["mrr@10"]).ok();
        depths.push(DepthResult { k, best_step: outcome.best_step, best_dev_mrr10: outcome.best_dev_mrr10, test: means(&m), vs_baseline_mrr10: sig });
        if k == ak {
            counters = r.counters.snapshot();
        }
        runs.push(k);
    }
    let index_hash_after = ws.index_sha256()?;
    ws.json("metrics/significance.json", &depths.iter().map(|d| (format!("prf_k{}", d.k), d.vs_baseline_mrr10)).collect::<BTreeMap<_, _>>())?;

    let ablation = ws.ablate(&runs, &data, &fp.test)?;
    let attention = ws.analyze_attention(ak, &data, &vocab, &fp.test)?;
    let geometry = ws.analyze_geometry(ak)?;
    ws.analyze_highlight(ak, &data, &vocab, &fp.test)?;

    let summary = PipelineSummary {
        config_hash: ws.hash.clone(),
        baseline_best_step: base.best_step,
        baseline_best_dev_mrr10: base.best_dev_mrr10,
        bm25: means(&bm25_metrics),
        baseline: means(&base_metrics),
        depths,
        ablation,
        analysis_k: ak,
        attention,
        geometry,
        index_sha256_before_prf: index_hash_before,
        index_sha256_after_prf: index_hash_after,
        counters,
    };
    ws.json("summary.json", &summary)?;
    ws.write("summary.txt", summary.table())?;
    Ok(summary)
}
