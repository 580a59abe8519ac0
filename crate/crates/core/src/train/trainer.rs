use std::collections::HashMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{learning_rate, nll_loss_grad, sample_negatives, Adam, TrainError, NEGATIVE_POOL_DEPTH};
use crate::analysis::{attention_records, geometry_at, summarize_attention, AttentionSummary, GeometryRecord};
use crate::data::QueryRecord;
use crate::encoder::{Encoder, EncoderParams, ForwardCache, InputLayout, TokenSequence, Vocabulary};
use crate::eval::{evaluate, Metric, Qrels};
use crate::index::FlatIndex;
use crate::retrieval::{DocStore, PrfConfig, Retriever};
use crate::run::RunList;

/// Optimisation settings for one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Feedback depth (feedback phase only).
    pub k: usize,
    /// Fixed negatives per query in the feedback phase; size of the shared
    /// random negative pool per batch in the baseline phase.
    pub negatives: usize,
    pub batch_size: usize,
    pub accumulation_steps: usize,
    pub learning_rate: f64,
    pub warmup_fraction: f64,
    pub total_steps: usize,
    pub eval_interval: usize,
    /// Use the other queries' positives in a batch as extra negatives.
    pub in_batch_negatives: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 3,
            negatives: 8,
            batch_size: 16,
            accumulation_steps: 1,
            learning_rate: 1e-3,
            warmup_fraction: 0.05,
            total_steps: 1000,
            eval_interval: 100,
            in_batch_negatives: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, section: &str) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("accumulation_steps", self.accumulation_steps),
            ("total_steps", self.total_steps),
            ("eval_interval", self.eval_interval),
        ] {
            if v == 0 {
                errs.push(format!("{section}.{name} must be positive"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("{section}.learning_rate must be positive"));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            errs.push(format!("{section}.warmup_fraction must lie in [0, 1]"));
        }
        errs
    }

    fn warmup_steps(&self) -> usize {
        (self.warmup_fraction * self.total_steps as f64).round() as usize
    }
}

/// Everything the trainer reads besides the model.
pub struct TrainData<'a> {
    pub vocab: &'a Vocabulary,
    pub docs: &'a DocStore,
    pub corpus_ids: &'a [String],
    pub train: &'a [QueryRecord],
    pub dev: &'a [QueryRecord],
    pub qrels: &'a Qrels,
}

/// One line of the training log, written at every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub phase: String,
    pub step: usize,
    pub lr: f64,
    /// Mean training loss since the previous record.
    pub loss: Option<f64>,
    pub dev_mrr10: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub geometry: Option<GeometryRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<AttentionSummary>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: EncoderParams,
    pub best_step: usize,
    pub best_dev_mrr10: f64,
    pub log: Vec<TrainLogRecord>,
    /// Parameters at every evaluation step, if requested.
    pub snapshots: Vec<(usize, EncoderParams)>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("log record serializes") + "\n").collect()
    }
}

/// Index of the best evaluation; ties go to the earlier one.
pub fn best_checkpoint(series: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in series.iter().enumerate() {
        if best.is_none_or(|b| v > series[b]) {
            best = Some(i);
        }
    }
    best
}

fn relevant_docs(data: &TrainData, q: &QueryRecord) -> Vec<String> {
    data.qrels.relevant(&q.id, 1).into_iter().map(String::from).collect()
}

struct Tracker {
    phase: &'static str,
    best: Option<(usize, f64, EncoderParams)>,
    log: Vec<TrainLogRecord>,
    snapshots: Vec<(usize, EncoderParams)>,
    keep_snapshots: bool,
    loss_sum: f64,
    loss_n: usize,
}

impl Tracker {
    fn new(phase: &'static str, keep_snapshots: bool) -> Self {
        Self { phase, best: None, log: Vec::new(), snapshots: Vec::new(), keep_snapshots, loss_sum: 0.0, loss_n: 0 }
    }

    fn add_loss(&mut self, phase: &str, step: usize, loss: f64) -> Result<(), TrainError> {
        if !loss.is_finite() {
            return Err(TrainError::Diverged { phase: phase.to_string(), step, loss });
        }
        self.loss_sum += loss;
        self.loss_n += 1;
        Ok(())
    }

    fn record(&mut self, step: usize, lr: f64, mrr: f64, params: &EncoderParams, geometry: Option<GeometryRecord>, attention: Option<AttentionSummary>) {
        let loss = (self.loss_n > 0).then(|| self.loss_sum / self.loss_n as f64);
        self.loss_sum = 0.0;
        self.loss_n = 0;
        log::info!("{} step {step}: loss {:?} dev mrr@10 {mrr:.4}", self.phase, loss);
        self.log.push(TrainLogRecord { phase: self.phase.into(), step, lr, loss, dev_mrr10: mrr, geometry, attention });
        if self.best.as_ref().is_none_or(|(_, b, _)| mrr > *b) {
            self.best = Some((step, mrr, params.clone()));
        }
        if self.keep_snapshots {
            self.snapshots.push((step, params.clone()));
        }
    }

    fn finish(self) -> TrainOutcome {
        let (best_step, best_dev_mrr10, best) = self.best.expect("step 0 is always evaluated");
        TrainOutcome { best, best_step, best_dev_mrr10, log: self.log, snapshots: self.snapshots }
    }
}

fn is_eval_step(step: usize, config: &TrainConfig) -> bool {
    step.is_multiple_of(config.eval_interval) || step == config.total_steps
}

fn backward_scaled(params: &EncoderParams, cache: &ForwardCache, d: &[f64], scale: f64, grads: &mut EncoderParams) {
    let scaled: Vec<f64> = d.iter().map(|x| x * scale).collect();
    params.backward(cache, &scaled, grads);
}

/// Query, its tokens and its judged-relevant doc ids.
type TrainQuery<'a> = (&'a QueryRecord, Vec<u32>, Vec<String>);

/// Trains the shared query/document encoder.
///
/// Each batch draws `batch_size` training queries and one judged-relevant
/// positive per query; the candidates for a query are its positive, the
/// other positives in the batch (when enabled) and a shared pool of
/// `negatives` uniformly drawn corpus documents, minus anything judged
/// relevant to that query. Dev MRR@10 is measured by re-encoding the corpus.
pub fn train_baseline(init: EncoderParams, config: &TrainConfig, data: &TrainData) -> Result<TrainOutcome, TrainError> {
    let errs = config.validate("train.baseline");
    if !errs.is_empty() {
        return Err(TrainError::InvalidConfig(errs));
    }
    let queries: Vec<TrainQuery> = data
        .train
        .iter()
        .map(|q| (q, data.vocab.tokenize(&q.text), relevant_docs(data, q)))
        .filter(|(_, _, r)| !r.is_empty())
        .collect();
    if queries.is_empty() || data.corpus_ids.is_empty() {
        return Err(TrainError::NoTrainingQueries);
    }
    let layout = InputLayout::new(init.config.max_len, init.config.query_budget, data.vocab);
    let mut params = init;
    let mut opt = Adam::new(&params);
    let mut grads = EncoderParams::zeros(params.config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracker = Tracker::new("baseline", false);
    let warmup = config.warmup_steps();
    let b = config.batch_size.min(queries.len());
    let scale = 1.0 / (b * config.accumulation_steps) as f64;

    let dev_eval = |params: &EncoderParams| -> Result<f64, TrainError> {
        let enc = Encoder::new(params.clone(), data.vocab);
        let index = encode_corpus(&enc, data)?;
        let r = Retriever::new(data.vocab, &index, data.docs);
        let run = r.run_first_pass(data.dev, &enc, 10, "dev")?;
        Ok(evaluate(&run, data.qrels, Metric::MRR10).mean)
    };

    tracker.record(0, 0.0, dev_eval(&params)?, &params, None, None);
    for step in 1..=config.total_steps {
        grads.fill_zero();
        for _ in 0..config.accumulation_steps {
            let picks = index::sample(&mut rng, queries.len(), b).into_vec();
            let batch: Vec<(&TrainQuery, String)> = picks
                .iter()
                .map(|&i| {
                    let q = &queries[i];
                    let pos = q.2[rng.random_range(0..q.2.len())].clone();
                    (q, pos)
                })
                .collect();
            let pool: Vec<String> =
                (0..config.negatives).map(|_| data.corpus_ids[rng.random_range(0..data.corpus_ids.len())].clone()).collect();

            // every distinct document in the batch is encoded once
            let mut doc_slot: HashMap<&str, usize> = HashMap::new();
            let mut doc_caches = Vec::new();
            for id in batch.iter().map(|(_, p)| p.as_str()).chain(pool.iter().map(String::as_str)) {
                if !doc_slot.contains_key(id) {
                    let toks = data.docs.get(id).ok_or_else(|| TrainError::MissingDocument(id.to_string()))?;
                    let seq = layout.doc_input(toks);
                    doc_slot.insert(id, doc_caches.len());
                    doc_caches.push(params.forward(&seq)?);
                }
            }
            let doc_embs: Vec<Vec<f64>> = doc_caches.iter().map(|c| c.embedding().0).collect();
            let mut d_docs = vec![vec![0.0; params.config.dim]; doc_caches.len()];

            for (i, ((q, qtoks, _), pos)) in batch.iter().enumerate() {
                let seq = layout.query_input(qtoks)?;
                let cache = params.forward(&seq)?;
                let qe = cache.embedding().0;
                let mut slots = vec![doc_slot[pos.as_str()]];
                if config.in_batch_negatives {
                    for (j, (_, other)) in batch.iter().enumerate() {
                        if j != i && data.qrels.grade_or_zero(&q.id, other) == 0 {
                            slots.push(doc_slot[other.as_str()]);
                        }
                    }
                }
                for d in &pool {
                    if data.qrels.grade_or_zero(&q.id, d) == 0 {
                        slots.push(doc_slot[d.as_str()]);
                    }
                }
                let cands: Vec<&[f64]> = slots.iter().map(|&s| doc_embs[s].as_slice()).collect();
                let lg = nll_loss_grad(&qe, &cands);
                tracker.add_loss("baseline", step, lg.loss)?;
                for (&s, &g) in slots.iter().zip(&lg.d_scores) {
                    for (o, x) in d_docs[s].iter_mut().zip(&qe) {
                        *o += g * x;
                    }
                }
                backward_scaled(&params, &cache, &lg.d_query, scale, &mut grads);
            }
            for (cache, d) in doc_caches.iter().zip(&d_docs) {
                backward_scaled(&params, cache, d, scale, &mut grads);
            }
        }
        let lr = learning_rate(step, config.total_steps, warmup, config.learning_rate);
        opt.step(&mut params, &grads, lr);
        if !params.is_finite() {
            return Err(TrainError::Diverged { phase: "baseline".into(), step, loss: f64::NAN });
        }
        if is_eval_step(step, config) {
            tracker.record(step, lr, dev_eval(&params)?, &params, None, None);
        }
    }
    Ok(tracker.finish())
}

fn encode_corpus(enc: &Encoder, data: &TrainData) -> Result<FlatIndex, TrainError> {
    let embs = data
        .corpus_ids
        .iter()
        .map(|id| {
            let toks = data.docs.get(id).ok_or_else(|| TrainError::MissingDocument(id.clone()))?;
            Ok((id.as_str(), enc.encode_doc(toks)?))
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    Ok(FlatIndex::build(embs)?)
}

/// Fixed inputs for the feedback phase.
pub struct PrfTrainInputs<'a> {
    pub baseline: &'a Encoder,
    pub index: &'a FlatIndex,
    /// First-pass run of the training queries, at least as deep as the
    /// negative pool.
    pub first_pass_train: &'a RunList,
    /// First-pass run of the dev queries.
    pub first_pass_dev: &'a RunList,
    /// Keep parameters at every evaluation for later geometry analysis.
    pub keep_snapshots: bool,
}

struct PrfExample {
    qid: String,
    seq: TokenSequence,
    positives: Vec<String>,
    negatives: Vec<Vec<f64>>,
}

/// Trains the feedback query encoder against frozen document embeddings.
///
/// The input for every training query is fixed up front from its first-pass
/// top-k, as are its `negatives` sampled negatives. Each step draws a batch
/// of queries and a relevant positive for each; the other positives in the
/// batch join the candidates when not judged relevant to the query. Document
/// embeddings are read from the index and never updated.
pub fn train_prf(init: EncoderParams, config: &TrainConfig, data: &TrainData, inputs: &PrfTrainInputs) -> Result<TrainOutcome, TrainError> {
    let errs = config.validate("train.prf");
    if !errs.is_empty() {
        return Err(TrainError::InvalidConfig(errs));
    }
    let layout = InputLayout::new(init.config.max_len, init.config.query_budget, data.vocab);
    let embedding = |id: &str| inputs.index.embedding(id).map(|e| e.0).ok_or_else(|| TrainError::MissingEmbedding(id.to_string()));
    let mut examples = Vec::new();
    for q in data.train {
        let positives = relevant_docs(data, q);
        if positives.is_empty() {
            continue;
        }
        let hits = inputs.first_pass_train.hits(&q.id).unwrap_or(&[]);
        let feedback = data.docs.feedback(&hits[..config.k.min(hits.len())])?;
        let seq = layout.prf_input(&data.vocab.tokenize(&q.text), &feedback)?.seq;
        let negatives = sample_negatives(inputs.first_pass_train, data.qrels, &q.id, config.negatives, config.seed, data.corpus_ids)
            .iter()
            .map(|d| embedding(d))
            .collect::<Result<_, _>>()?;
        examples.push(PrfExample { qid: q.id.clone(), seq, positives, negatives });
    }
    if examples.is_empty() {
        return Err(TrainError::NoTrainingQueries);
    }

    let mut params = init;
    let mut opt = Adam::new(&params);
    let mut grads = EncoderParams::zeros(params.config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tracker = Tracker::new("prf", inputs.keep_snapshots);
    let warmup = config.warmup_steps();
    let b = config.batch_size.min(examples.len());
    let scale = 1.0 / (b * config.accumulation_steps) as f64;
    let prf_config = PrfConfig { k: config.k, first_pass_depth: NEGATIVE_POOL_DEPTH.max(config.k), final_depth: 10 };

    let eval = |params: &EncoderParams, step: usize| -> Result<(f64, GeometryRecord, AttentionSummary), TrainError> {
        let enc = Encoder::new(params.clone(), data.vocab);
        let r = Retriever::new(data.vocab, inputs.index, data.docs);
        let run = r.run_second_pass(data.dev, inputs.first_pass_dev, &enc, &prf_config, "dev")?;
        let mrr = evaluate(&run, data.qrels, Metric::MRR10).mean;
        let geom = geometry_at(step, &enc, inputs.baseline, data.dev, inputs.first_pass_dev, config.k, inputs.index, data.vocab, data.docs, data.qrels)?;
        let attn = attention_records(&enc, data.dev, inputs.first_pass_dev, config.k, data.vocab, data.docs, data.qrels)?;
        Ok((mrr, geom, summarize_attention(&attn)))
    };

    let (mrr, g, a) = eval(&params, 0)?;
    tracker.record(0, 0.0, mrr, &params, Some(g), Some(a));
    for step in 1..=config.total_steps {
        grads.fill_zero();
        for _ in 0..config.accumulation_steps {
            let picks = index::sample(&mut rng, examples.len(), b).into_vec();
            let batch: Vec<(&PrfExample, Vec<f64>, String)> = picks
                .iter()
                .map(|&i| {
                    let ex = &examples[i];
                    let pos = ex.positives[rng.random_range(0..ex.positives.len())].clone();
                    embedding(&pos).map(|e| (ex, e, pos))
                })
                .collect::<Result<_, _>>()?;
            for (i, (ex, pos_emb, _)) in batch.iter().enumerate() {
                let cache = params.forward(&ex.seq)?;
                let qe = cache.embedding().0;
                let mut cands: Vec<&[f64]> = vec![pos_emb.as_slice()];
                cands.extend(ex.negatives.iter().map(Vec::as_slice));
                if config.in_batch_negatives {
                    for (j, (_, other_emb, other)) in batch.iter().enumerate() {
                        if j != i && data.qrels.grade_or_zero(&ex.qid, other) == 0 {
                            cands.push(other_emb.as_slice());
                        }
                    }
                }
                let lg = nll_loss_grad(&qe, &cands);
                tracker.add_loss("prf", step, lg.loss)?;
                backward_scaled(&params, &cache, &lg.d_query, scale, &mut grads);
            }
        }
        let lr = learning_rate(step, config.total_steps, warmup, config.learning_rate);
        opt.step(&mut params, &grads, lr);
        if !params.is_finite() {
            return Err(TrainError::Diverged { phase: "prf".into(), step, loss: f64::NAN });
        }
        if is_eval_step(step, config) {
            let (mrr, g, a) = eval(&params, step)?;
            tracker.record(step, lr, mrr, &params, Some(g), Some(a));
        }
    }
    Ok(tracker.finish())
}
