//! Acceptance suite. Runs every criterion, prints one line per criterion and
//! exits non-zero if any fails.
//!
//! `ACCEPTANCE_ONLY=1,4` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use prfdr::data::{generate_synthetic, load_qrels};
use prfdr::encoder::InputLayout;
use prfdr::eval::{avg_rel, evaluate, paired_t_test};
use prfdr::index::rank_order;
use prfdr::retrieval::{DocStore, PrfConfig, Retriever};
use prfdr::train::check_gradient;
use prfdr::workflow::{run_pipeline, PipelineSummary};
use prfdr::{EmbeddingVector, EncoderConfig, EncoderParams, FlatIndex, Metric, Qrels, RunConfig, RunList, SyntheticSpec, TokenSequence, Vocabulary};

const SEEDS: [u64; 3] = [41, 42, 43];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random_params(rng: &mut ChaCha8Rng, config: EncoderConfig) -> EncoderParams {
    let mut p = EncoderParams::init(config, rng.random());
    for t in p.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    p
}

fn random_ids(rng: &mut ChaCha8Rng, vocab_size: usize, n: usize) -> Vec<u32> {
    (0..n).map(|_| rng.random_range(4..vocab_size as u32)).collect()
}

/// Word list covering ids 4.. so random ids can be fed through layouts.
fn toy_vocab(n: usize) -> Vocabulary {
    let text: String = (0..n).map(|i| format!("w{i} ")).collect();
    Vocabulary::build([text.as_str()], 1).unwrap()
}

fn c1_gradient() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vocab = toy_vocab(20);
    let config = EncoderConfig { layers: 1, heads: 2, dim: 8, ff_dim: 16, max_len: 16, query_budget: 4, vocab_size: vocab.len() };
    let layout = InputLayout::new(config.max_len, config.query_budget, &vocab);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..5 {
        let p = random_params(&mut rng, config);
        let q = random_ids(&mut rng, vocab.len(), 3);
        let docs: Vec<Vec<u32>> = (0..2).map(|_| random_ids(&mut rng, vocab.len(), 4)).collect();
        let seq = layout.prf_input(&q, &docs).unwrap().seq;
        assert!(seq.real_len() <= 16);
        let cands: Vec<Vec<f64>> = (0..5).map(|_| (0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = cands.iter().map(Vec::as_slice).collect();
        let g = check_gradient(&p, &seq, &refs, 1e-4).unwrap();
        worst = worst.max(g.max_rel_err);
        checked += g.checked;
    }
    verdict(worst <= 1e-4, format!("max relative error {worst:.2e} over {checked} parameters"))
}

fn brute_force(index: &FlatIndex, q: &[f64], k: usize) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64)> = index
        .doc_ids()
        .iter()
        .enumerate()
        .map(|(i, id)| {
            let mut s = 0.0;
            for (x, r) in q.iter().zip(index.row(i)) {
                s += x * *r as f64;
            }
            (id.clone(), s)
        })
        .collect();
    all.sort_by(|a, b| rank_order(a.1, &a.0, b.1, &b.0));
    all.truncate(k);
    all
}

fn c2_search() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut mismatches = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=1000);
        let dim = rng.random_range(1..=64);
        // coarse values make exact score ties common
        let coarse = case % 2 == 0;
        let val = |rng: &mut ChaCha8Rng| if coarse { rng.random_range(-2..=2) as f64 } else { rng.random_range(-1.0..1.0) };
        let mut ids: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            ids.swap(i, rng.random_range(0..=i));
        }
        let rows: Vec<(String, EmbeddingVector)> =
            ids.iter().map(|i| (format!("doc{i}"), EmbeddingVector((0..dim).map(|_| val(&mut rng)).collect()))).collect();
        let index = FlatIndex::build(rows).unwrap();
        let q: Vec<f64> = (0..dim).map(|_| val(&mut rng)).collect();
        let k = rng.random_range(1..=n + 5);
        let got: Vec<(String, f64)> = index.search(&EmbeddingVector(q.clone()), k).unwrap().into_iter().map(|h| (h.doc_id, h.score)).collect();
        if got != brute_force(&index, &q, k) {
            mismatches += 1;
        }
    }
    verdict(mismatches == 0, format!("{mismatches} of 200 instances differ from brute force"))
}

fn c3_metrics() -> Verdict {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/five_query");
    let run = RunList::read(dir.join("run.trec")).unwrap();
    let qrels = load_qrels(dir.join("qrels.txt")).unwrap();
    let expected: Value = serde_json::from_str(&fs::read_to_string(dir.join("expected.json")).unwrap()).unwrap();
    let mut worst = 0.0f64;
    let mut problems = Vec::new();
    for name in ["mrr@10", "ndcg@10", "recall@1000", "hole@10"] {
        let m: Metric = name.parse().unwrap();
        let r = evaluate(&run, &qrels, m);
        let e = &expected[name];
        worst = worst.max((r.mean - e["mean"].as_f64().unwrap()).abs());
        let want: BTreeMap<String, f64> = serde_json::from_value(e["per_query"].clone()).unwrap();
        if want.keys().collect::<Vec<_>>() != r.per_query.keys().collect::<Vec<_>>() {
            problems.push(format!("{name}: evaluated queries differ"));
        }
        for (q, v) in &want {
            worst = worst.max((r.per_query.get(q).copied().unwrap_or(f64::NAN) - v).abs());
        }
        if r.excluded as u64 != e["excluded"].as_u64().unwrap() {
            problems.push(format!("{name}: excluded {}", r.excluded));
        }
    }
    for pos in ["1", "2"] {
        let want = expected["avg_rel"][pos].as_f64().unwrap();
        worst = worst.max((avg_rel(&run, &qrels, pos.parse().unwrap()) - want).abs());
    }
    // three queries with grades 3, 1, 0 at rank 2
    let mut q3 = Qrels::new();
    let mut r3 = RunList::new("t");
    for (i, g) in [3, 1, 0].into_iter().enumerate() {
        let qid = format!("a{i}");
        q3.insert(&qid, "top", 1);
        q3.insert(&qid, "second", g);
        r3.push(&qid, vec![hit("top", 2.0, 1), hit("second", 1.0, 2)]);
    }
    worst = worst.max((avg_rel(&r3, &q3, 2) - 4.0 / 3.0).abs());
    let ndcg_q1 = evaluate(&run, &qrels, Metric::NDCG10).per_query["q1"];
    let worked = (1.0 + 3.0 / 3f64.log2()) / (3.0 + 1.0 / 3f64.log2());
    worst = worst.max((ndcg_q1 - worked).abs());
    let t = paired_t_test(&[1.0, 2.0, 3.0], &[0.0, 1.0, 1.0]).unwrap();
    let t_ok = (t.t - 4.0).abs() <= 1e-6 && (t.p - 0.0572).abs() <= 1e-3 && t.df == 2 && !t.significant;
    if !t_ok {
        problems.push(format!("t-test t {} p {}", t.t, t.p));
    }
    verdict(
        worst <= 1e-6 && problems.is_empty(),
        format!("max abs error {worst:.1e}; ndcg example {ndcg_q1:.4}; t {:.4} p {:.4}{}", t.t, t.p, if problems.is_empty() { String::new() } else { format!("; {}", problems.join(", ")) }),
    )
}

fn hit(doc: &str, score: f64, rank: usize) -> prfdr::ScoredHit {
    prfdr::ScoredHit { doc_id: doc.into(), score, rank }
}

fn c4_attention() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_sum, mut worst_pad) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let heads = rng.random_range(1..=4);
        let config = EncoderConfig {
            layers: rng.random_range(1..=3),
            heads,
            dim: heads * rng.random_range(1..=6),
            ff_dim: rng.random_range(1..=24),
            max_len: 32,
            query_budget: 8,
            vocab_size: 30,
        };
        let p = random_params(&mut rng, config);
        let n = rng.random_range(1..=24);
        let ids = random_ids(&mut rng, 30, n);
        let tight = TokenSequence::padded(ids.clone(), n, 0);
        let padded = TokenSequence::padded(ids, rng.random_range(n..=32), 0);
        let attn = p.cls_attention(&padded).unwrap();
        worst_sum = worst_sum.max((attn[..n].iter().sum::<f64>() - heads as f64).abs());
        let (a, b) = (p.encode(&tight).unwrap(), p.encode(&padded).unwrap());
        worst_pad = worst_pad.max(a.0.iter().zip(&b.0).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }
    verdict(worst_sum <= 1e-6 && worst_pad <= 1e-6, format!("max |sum - heads| {worst_sum:.1e}; max padding drift {worst_pad:.1e}"))
}

fn c5_k0() -> Verdict {
    let spec = SyntheticSpec { num_topics: 8, docs_per_topic: 10, train_queries: 4, dev_queries: 4, test_queries: 16, ..SyntheticSpec::default() };
    let data = generate_synthetic(&spec).unwrap();
    let vocab = Vocabulary::build(data.corpus.iter().map(|d| d.text.as_str()), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = EncoderConfig { vocab_size: vocab.len(), dim: 16, ff_dim: 32, ..EncoderConfig::default() };
    let params = random_params(&mut rng, config);
    let layout = InputLayout::new(config.max_len, config.query_budget, &vocab);
    let mut identical_inputs = true;
    for q in &data.test {
        let ids = vocab.tokenize(&q.text);
        let plain = params.encode(&layout.query_input(&ids).unwrap()).unwrap();
        let prf = params.encode(&layout.prf_input(&ids, &[]).unwrap().seq).unwrap();
        identical_inputs &= plain.0.iter().zip(&prf.0).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let enc = prfdr::Encoder::new(params, &vocab);
    let index = prfdr::retrieval::build_index(&data.corpus, &enc, &vocab).unwrap();
    let docs = DocStore::new(&data.corpus, &vocab);
    let r = Retriever::new(&vocab, &index, &docs);
    let first = r.run_first_pass(&data.test, &enc, 80, "x").unwrap();
    let pc = PrfConfig { k: 0, first_pass_depth: 80, final_depth: 80 };
    let second = r.run_prf(&data.test, &enc, &enc, &pc, "x").unwrap();
    let same_runs = first.to_trec_string() == second.to_trec_string();
    verdict(identical_inputs && same_runs, format!("bit-identical encodings {identical_inputs}; identical runs {same_runs}"))
}

fn seed_config(seed: u64, out: &Path) -> RunConfig {
    let mut c = RunConfig { seed, ..RunConfig::default() };
    c.synthetic.seed = seed;
    c.train.baseline.seed = seed;
    c.train.prf.seed = seed;
    c.ablation.ks = vec![0];
    c.paths.out_dir = out.to_path_buf();
    c
}

struct SeedRun {
    seed: u64,
    summary: PipelineSummary,
    test_queries: usize,
}

fn c6_trend(runs: &[SeedRun]) -> Verdict {
    let mut wins = 0;
    let mut parts = Vec::new();
    for r in runs {
        let m = |k| r.summary.depth(k).unwrap().test["mrr@10"];
        let (k3, k0) = (m(3), m(0));
        wins += usize::from(k3 > k0);
        parts.push(format!("seed {}: k3 {k3:.4} vs k0 {k0:.4}", r.seed));
    }
    verdict(wins >= 2, format!("{wins}/3 seeds; {}", parts.join(", ")))
}

fn c7_attention(runs: &[SeedRun]) -> Verdict {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let a = &r.summary.attention;
        let majority = a.relevant_wins * 2 > a.mixed_queries;
        ok += usize::from(majority);
        parts.push(format!("seed {}: {}/{}", r.seed, a.relevant_wins, a.mixed_queries));
    }
    verdict(ok >= 2, format!("{ok}/3 seeds with a majority; relevant-wins/mixed queries {}", parts.join(", ")))
}

fn c8_geometry(runs: &[SeedRun]) -> Verdict {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let g = &r.summary.geometry;
        let (rel, irr) = (g.relevant.unwrap_or(f64::NAN), g.irrelevant.unwrap_or(f64::NAN));
        ok += usize::from(rel > irr);
        parts.push(format!("seed {}: rel {rel:.3} irr {irr:.3}", r.seed));
    }
    verdict(ok == runs.len(), format!("{ok}/3 seeds; {}", parts.join(", ")))
}

fn c10_freeze(runs: &[SeedRun]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for r in runs {
        let s = &r.summary;
        let c = s.counters;
        let n = r.test_queries as u64;
        let good = s.index_sha256_before_prf == s.index_sha256_after_prf
            && c.queries == n
            && c.encoder_calls == 2 * n
            && c.index_searches == 2 * n;
        ok &= good;
        parts.push(format!("seed {}: index hash {}, {} encoder calls and {} searches for {n} queries", r.seed, if s.index_sha256_before_prf == s.index_sha256_after_prf { "unchanged" } else { "CHANGED" }, c.encoder_calls, c.index_searches));
    }
    verdict(ok, parts.join(", "))
}

fn files_under(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Reruns `config` into its own output directory and compares every artifact
/// with the bytes left by the first run.
fn c9_determinism(config: &RunConfig) -> Verdict {
    let out = &config.paths.out_dir;
    let before = files_under(out);
    fs::remove_dir_all(out).unwrap();
    run_pipeline(config).unwrap();
    let after = files_under(out);
    let mut differing: Vec<&String> = before.keys().filter(|k| before.get(*k) != after.get(*k)).collect();
    differing.extend(after.keys().filter(|k| !before.contains_key(*k)));
    let runs_and_metrics = before.keys().filter(|k| k.starts_with("runs/") || k.starts_with("metrics/")).count();
    verdict(
        !before.is_empty() && differing.is_empty(),
        format!("{} artifacts compared ({runs_and_metrics} runs/metrics), {} differ {:?}", before.len(), differing.len(), differing),
    )
}

struct Suite {
    only: Option<Vec<usize>>,
    failed: Vec<usize>,
    ran: usize,
}

impl Suite {
    fn wanted(&self, n: usize) -> bool {
        self.only.as_ref().is_none_or(|o| o.contains(&n))
    }

    fn run(&mut self, n: usize, name: &str, f: impl FnOnce() -> Verdict) {
        if !self.wanted(n) {
            return;
        }
        let t = Instant::now();
        let v = f();
        println!("criterion {n:>2} {} {name} ({:.1}s): {}", if v.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), v.detail);
        self.ran += 1;
        if !v.pass {
            self.failed.push(n);
        }
    }
}

fn main() {
    let only = std::env::var("ACCEPTANCE_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut suite = Suite { only, failed: Vec::new(), ran: 0 };
    suite.run(1, "gradient check", c1_gradient);
    suite.run(2, "search oracle", c2_search);
    suite.run(3, "metric oracle", c3_metrics);
    suite.run(4, "attention normalization", c4_attention);
    suite.run(5, "k=0 equivalence", c5_k0);

    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    if [6, 7, 8, 9, 10].iter().any(|&n| suite.wanted(n)) {
        let t = Instant::now();
        for seed in SEEDS {
            let config = seed_config(seed, &tmp.path().join(format!("seed{seed}")));
            let summary = run_pipeline(&config).unwrap();
            println!("  seed {seed} done at {:.0}s\n{}", t.elapsed().as_secs_f64(), indent(&summary.table()));
            runs.push(SeedRun { seed, summary, test_queries: config.synthetic.test_queries });
        }
    }
    suite.run(6, "k=3 beats k=0", || c6_trend(&runs));
    suite.run(7, "attention separation", || c7_attention(&runs));
    suite.run(8, "embedding geometry", || c8_geometry(&runs));
    let first = seed_config(SEEDS[0], &tmp.path().join(format!("seed{}", SEEDS[0])));
    suite.run(9, "pipeline determinism", || c9_determinism(&first));
    suite.run(10, "freeze contract", || c10_freeze(&runs));

    println!("acceptance: {}/{} criteria passed", suite.ran - suite.failed.len(), suite.ran);
    if !suite.failed.is_empty() {
        println!("failed: {:?}", suite.failed);
        std::process::exit(1);
    }
}

fn indent(s: &str) -> String {
    s.lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}
