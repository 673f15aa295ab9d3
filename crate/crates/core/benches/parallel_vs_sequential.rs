//! Single-threaded vs pooled execution of the data-parallel kernels.
//!
//! With the default `parallel` feature each kernel runs once inside a
//! one-thread rayon pool and once on the global pool. Built with
//! `--no-default-features` only the sequential variant is measured.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use std::hint::black_box;

use gamefam::analysis::evaluate_mae;
use gamefam::baggfn::{generate_family, BaggfnFamily, GenerationConfig, ParameterRange};
use gamefam::game::simplex_lattice;
use gamefam::nash::{instance_starts, replicator_dynamics_batch, ExactOracle};
use gamefam::par;
use gamefam::surrogate::{init_model, NetworkSpec, SurrogateModel};

fn family() -> BaggfnFamily {
    let cfg = GenerationConfig::new(3, 5, ParameterRange::PlayerCount { min: 20, max: 30 }, 11);
    generate_family(&cfg).expect("valid config")
}

fn model(fam: &BaggfnFamily) -> SurrogateModel {
    init_model(&NetworkSpec::vpl(fam.num_strategies), fam.parameter.bounds(), fam.payoff_scale, 5).expect("valid spec")
}

fn variants() -> Vec<(&'static str, Option<usize>)> {
    let mut v = vec![("sequential", Some(1))];
    if cfg!(feature = "parallel") {
        v.push(("parallel", None));
    }
    v
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) => par::with_threads(n, f),
        None => f(),
    }
}

fn bench_replicator(c: &mut Criterion) {
    let fam = family();
    let oracle = ExactOracle(&fam);
    let grid = fam.parameter.grid(11);
    let starts: Vec<_> =
        grid.iter().flat_map(|&v| instance_starts(3, v, 20, 1).into_iter().map(move |m| (m, v))).collect();
    let mut group = c.benchmark_group("replicator_batch");
    group.sample_size(10);
    for (name, threads) in variants() {
        group.bench_function(BenchmarkId::new(name, starts.len()), |b| {
            b.iter(|| in_pool(threads, || replicator_dynamics_batch(&oracle, black_box(&starts), 50, 1e-10).unwrap()))
        });
    }
    group.finish();
}

fn bench_lattice_mae(c: &mut Criterion) {
    let fam = family();
    let m = model(&fam);
    let grid = fam.parameter.grid(11);
    let mut group = c.benchmark_group("lattice_mae");
    group.sample_size(10);
    for (name, threads) in variants() {
        group.bench_function(name, |b| {
            b.iter(|| in_pool(threads, || evaluate_mae(&m, &fam, black_box(&grid), 20).unwrap()))
        });
    }
    group.finish();
}

fn bench_forward(c: &mut Criterion) {
    let fam = family();
    let m = model(&fam);
    let mixes = simplex_lattice(3, 60).unwrap();
    let rows: Vec<&[f64]> = mixes.iter().map(|x| x.probs()).collect();
    let vs = vec![25.0; rows.len()];
    let inputs: Array2<f64> = m.encode_inputs(&rows, &vs).unwrap();
    let mut group = c.benchmark_group("surrogate_forward");
    for (name, threads) in variants() {
        group.bench_function(BenchmarkId::new(name, inputs.nrows()), |b| {
            b.iter(|| in_pool(threads, || m.forward(black_box(inputs.view())).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_replicator, bench_lattice_mae, bench_forward);
criterion_main!(benches);
