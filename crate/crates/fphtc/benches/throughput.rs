//! Parallel vs sequential throughput for the hot paths: flow feature
//! extraction and tree training. Run with `cargo bench`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fphtc::flow_features::{extract_all, extract_all_sequential};
use fphtc::ingestion::{generate_synthetic, preset, AppMix};
use fphtc::policy::{build_packet_dataset, train_cart, CartConfig};
use fphtc::teacher::{train_gbdt, GbdtConfig};
use fphtc::traffic_model::{LabelKind, ALL_APPS};

fn uniform_mix() -> AppMix {
    ALL_APPS.iter().map(|&a| (a, 1.0)).collect()
}

fn bench_feature_extraction(c: &mut Criterion) {
    let profiles = preset("overlapping").unwrap();
    let mut group = c.benchmark_group("flow_features");
    for n in [500usize, 2000] {
        let flows = generate_synthetic(&profiles, &uniform_mix(), n, 7).unwrap();
        group.bench_with_input(BenchmarkId::new("parallel", n), &flows, |b, flows| {
            b.iter(|| extract_all(flows))
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &flows, |b, flows| {
            b.iter(|| extract_all_sequential(flows))
        });
    }
    group.finish();
}

fn bench_gbdt(c: &mut Criterion) {
    let profiles = preset("overlapping").unwrap();
    let flows = generate_synthetic(&profiles, &uniform_mix(), 800, 9).unwrap();
    let features = extract_all(&flows);
    let labels: Vec<_> = flows
        .iter()
        .map(|f| fphtc::traffic_model::cos_of_app(f.true_app.unwrap()))
        .collect();
    let cfg = GbdtConfig {
        n_rounds: 10,
        ..Default::default()
    };
    // the parallel/sequential switch is the `parallel` cargo feature; this
    // group gives one comparable number per build
    c.bench_function("gbdt_train_10_rounds", |b| {
        b.iter(|| train_gbdt(&features, &labels, &cfg, 1).unwrap())
    });
}

fn bench_cart(c: &mut Criterion) {
    let profiles = preset("overlapping").unwrap();
    let flows = generate_synthetic(&profiles, &uniform_mix(), 1500, 13).unwrap();
    let mut flows = flows;
    for f in &mut flows {
        f.teacher_label = f.true_app.map(fphtc::traffic_model::cos_of_app);
    }
    let ds = build_packet_dataset(&flows, LabelKind::Truth).unwrap();
    c.bench_function("cart_train", |b| {
        b.iter(|| train_cart(&ds.records, &CartConfig::default(), 1).unwrap())
    });
}

criterion_group!(benches, bench_feature_extraction, bench_gbdt, bench_cart);
criterion_main!(benches);
