use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semsentry_bench::{oracle_rules, reference_corpus};
use semsentry_core::baselines::{calibrate, fit_gmm, fit_pca, GmmFitOptions, ScoreKind};
use semsentry_core::describer::{describe, OrderPolicy, VocabularyCatalog};
use semsentry_core::eval::interval_metrics;
use semsentry_core::monitor::{parse_verdict, Backend, BackendRequest, Monitor, PromptTemplate, RuleOracle, SamplerConfig};

fn bench_monitoring(c: &mut Criterion) {
    let corpus = reference_corpus(7, 0);
    let vocabulary = VocabularyCatalog::default();
    let template = PromptTemplate::driving();
    let oracle = RuleOracle::new(&oracle_rules()).unwrap();
    let episode = corpus.iter().find(|e| !e.anomaly_intervals().is_empty()).unwrap();
    let frame = &episode.frames()[episode.anomaly_intervals()[0].start() as usize];
    let monitor = Monitor::new(&template, &oracle, &vocabulary, SamplerConfig::default()).unwrap();

    c.bench_function("describe_frame", |b| b.iter(|| describe(black_box(frame), &vocabulary.driving, OrderPolicy::AsDetected)));
    let description = monitor.describe(episode, frame);
    c.bench_function("render_prompt", |b| b.iter(|| monitor.prompt(episode, black_box(&description)).unwrap()));
    let prompt = monitor.prompt(episode, &description).unwrap();
    let request = BackendRequest::new("driving", prompt.clone()).unwrap();
    c.bench_function("oracle_query", |b| b.iter(|| oracle.query(black_box(&request)).unwrap()));
    let response = oracle.respond(&prompt);
    c.bench_function("parse_verdict", |b| b.iter(|| parse_verdict(black_box(&response), "e", 0).unwrap()));
    c.bench_function("monitor_episode", |b| b.iter(|| monitor.monitor_episode(black_box(episode)).unwrap()));
}

fn bench_eval(c: &mut Criterion) {
    let corpus = reference_corpus(7, 0);
    let vocabulary = VocabularyCatalog::default();
    let template = PromptTemplate::driving();
    let oracle = RuleOracle::new(&oracle_rules()).unwrap();
    let monitor = Monitor::new(&template, &oracle, &vocabulary, SamplerConfig::default()).unwrap();
    let verdicts: Vec<_> = corpus.iter().flat_map(|e| monitor.monitor_episode(e).unwrap()).collect();
    c.bench_function("interval_metrics_reference_corpus", |b| {
        b.iter(|| interval_metrics(black_box(&corpus), black_box(&verdicts)).unwrap())
    });
}

fn bench_baselines(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let high: Vec<Vec<f64>> = (0..800).map(|_| (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    c.bench_function("fit_pca_800x64_k32", |b| b.iter(|| fit_pca(black_box(&high), 32).unwrap()));
    let pca = fit_pca(&high, 16).unwrap();
    let reduced: Vec<Vec<f64>> = high.iter().map(|x| pca.project(x).unwrap().iter().copied().collect()).collect();
    let mut group = c.benchmark_group("gmm");
    group.sample_size(10);
    group.bench_function("fit_gmm_800x16_k5", |b| {
        b.iter(|| fit_gmm(black_box(&reduced), 5, GmmFitOptions { max_iter: 50, ..Default::default() }).unwrap())
    });
    group.finish();
    let gmm = fit_gmm(&reduced, 5, GmmFitOptions { max_iter: 50, ..Default::default() }).unwrap();
    c.bench_function("score_nll_k5_d16", |b| b.iter(|| gmm.score_nll(black_box(&reduced[0])).unwrap()));
    c.bench_function("calibrate_10k", |b| {
        b.iter_batched(
            || (0..10_000).map(|_| rng.gen::<f64>()).collect::<Vec<_>>(),
            |scores| calibrate(ScoreKind::GmmNll, &scores, 0.95).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn bench_generation(c: &mut Criterion) {
    let mut group = c.benchmark_group("scenegen");
    group.sample_size(10);
    group.bench_function("reference_corpus", |b| b.iter(|| reference_corpus(black_box(7), 64)));
    group.finish();
}

criterion_group!(benches, bench_monitoring, bench_eval, bench_baselines, bench_generation);
criterion_main!(benches);
