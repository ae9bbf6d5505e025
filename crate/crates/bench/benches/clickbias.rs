use std::hint::black_box;

use clickbias::cycletest::{hypothesis_report, CycleCaps};
use clickbias::propagation::{propagate, GoodnessMatrix, PropagationOptions};
use clickbias::{aggregate, build_graph, fit_all, fit_ubm, AggregateOptions, FitOptions, ModelKind, UbmOptions};
use clickbias_bench::{exact_table, sessions};
use criterion::{criterion_group, criterion_main, Criterion};

fn solver(c: &mut Criterion) {
    let table = exact_table(200);
    c.bench_function("fit_all 200 queries x 150 triples", |b| {
        b.iter(|| fit_all(black_box(&table), &FitOptions::default()))
    });
}

fn aggregation(c: &mut Criterion) {
    let log = sessions(50, 10_000, ModelKind::Qseh);
    c.bench_function("aggregate 500k sessions", |b| {
        b.iter(|| aggregate(black_box(&log), AggregateOptions::default()))
    });
}

fn browsing_model(c: &mut Criterion) {
    let log = sessions(20, 5_000, ModelKind::Ubm);
    let options = UbmOptions { max_iters: 20, tol: 0.0 };
    let mut group = c.benchmark_group("ubm");
    group.sample_size(10);
    group.bench_function("20 EM iterations, 100k sessions", |b| {
        b.iter(|| fit_ubm(black_box(&log), &options, None).unwrap())
    });
    group.finish();
}

fn cycles(c: &mut Criterion) {
    let table = exact_table(10);
    let graphs: Vec<_> = table
        .iter()
        .map(|(q, entry)| {
            // every third triple keeps the enumeration bounded
            let sparse: Vec<_> = entry.triples.iter().step_by(3).cloned().collect();
            (q.to_owned(), build_graph(&sparse).unwrap())
        })
        .collect();
    let caps = CycleCaps {
        max_length: 10,
        max_count: 20_000,
    };
    c.bench_function("cycle report 10 queries", |b| b.iter(|| hypothesis_report(black_box(&graphs), caps)));
}

fn propagation(c: &mut Criterion) {
    let entries = (0..2_000).flat_map(|q| {
        (0..10).map(move |k| {
            let doc = (q * 7 + k * 131) % 5_000;
            (format!("q{q:05}"), format!("d{doc:05}"), 0.05 + (k as f64) * 0.09)
        })
    });
    let g = GoodnessMatrix::from_entries(entries).unwrap();
    let mut group = c.benchmark_group("propagate");
    for l in [1, 2] {
        let options = PropagationOptions {
            path_length: l,
            ..PropagationOptions::default()
        };
        group.bench_function(format!("2000 x 5000, l={l}"), |b| b.iter(|| propagate(black_box(&g), &options).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, solver, aggregation, browsing_model, cycles, propagation);
criterion_main!(benches);
