use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use prfdr::data::{generate_synthetic, SyntheticSpec};
use prfdr::encoder::InputLayout;
use prfdr::train::example_gradient;
use prfdr::{EmbeddingVector, EncoderConfig, EncoderParams, FlatIndex, Vocabulary};

fn random_index(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> FlatIndex {
    FlatIndex::build((0..n).map(|i| (format!("d{i}"), EmbeddingVector((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))))
        .unwrap()
}

fn search(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = c.benchmark_group("search");
    for n in [2_000, 20_000] {
        let index = random_index(n, 64, &mut rng);
        let q = EmbeddingVector((0..64).map(|_| rng.random_range(-1.0..1.0)).collect());
        g.bench_with_input(BenchmarkId::new("top1000", n), &n, |b, _| b.iter(|| index.search(&q, 1000).unwrap()));
    }
    g.finish();
}

struct Setup {
    vocab: Vocabulary,
    params: EncoderParams,
    query: Vec<u32>,
    docs: Vec<Vec<u32>>,
}

fn setup() -> Setup {
    let data = generate_synthetic(&SyntheticSpec::default()).unwrap();
    let vocab = Vocabulary::build(data.corpus.iter().map(|d| d.text.as_str()), 1).unwrap();
    let params = EncoderParams::init(EncoderConfig { vocab_size: vocab.len(), ..EncoderConfig::default() }, 1);
    let query = vocab.tokenize(&data.train[0].text);
    let docs = data.corpus[..3].iter().map(|d| vocab.tokenize(&d.text)).collect();
    Setup { vocab, params, query, docs }
}

fn encode(c: &mut Criterion) {
    let s = setup();
    let layout = InputLayout::new(s.params.config.max_len, s.params.config.query_budget, &s.vocab);
    let mut g = c.benchmark_group("encode");
    for k in [0, 1, 3] {
        let seq = layout.prf_input(&s.query, &s.docs[..k]).unwrap().seq;
        g.bench_with_input(BenchmarkId::new("prf", k), &k, |b, _| b.iter(|| s.params.encode(&seq).unwrap()));
    }
    g.finish();
}

fn train_step(c: &mut Criterion) {
    let s = setup();
    let layout = InputLayout::new(s.params.config.max_len, s.params.config.query_budget, &s.vocab);
    let seq = layout.prf_input(&s.query, &s.docs).unwrap().seq;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cands: Vec<Vec<f64>> = (0..9).map(|_| (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = cands.iter().map(Vec::as_slice).collect();
    c.bench_function("prf_example_gradient_k3", |b| b.iter(|| example_gradient(&s.params, &seq, &refs).unwrap()));
}

criterion_group!(benches, search, encode, train_step);
criterion_main!(benches);
