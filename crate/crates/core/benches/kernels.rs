use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use riccilab::exec::{self, Mode};
use riccilab::flows::{self, FlowKind, FlowState};
use riccilab::geometry;
use riccilab::spectral::{self, DEFAULT_TOL};
use riccilab::{MetricField, ScalarField, TorusGrid};

fn metric(n: usize) -> MetricField {
    let grid = TorusGrid::unit(2, n).unwrap();
    let u = ScalarField::from_fn(&grid, |x| {
        0.05 * ((2.0 * PI * x[0]).sin() + 0.6 * (4.0 * PI * x[1]).cos() + 0.4 * (2.0 * PI * (x[0] + 2.0 * x[1])).sin())
    });
    MetricField::conformal(&u).unwrap()
}

const MODES: [(&str, Mode); 2] = [("sequential", Mode::Sequential), ("parallel", Mode::Parallel)];

fn ricci(c: &mut Criterion) {
    let mut group = c.benchmark_group("ricci");
    for n in [64, 128] {
        let g = metric(n);
        for (name, mode) in MODES {
            exec::set_mode(mode);
            group.bench_with_input(BenchmarkId::new(name, n), &g, |b, g| b.iter(|| geometry::ricci(g).unwrap()));
        }
    }
    group.finish();
}

fn lambda(c: &mut Criterion) {
    let mut group = c.benchmark_group("lambda_of");
    group.sample_size(10);
    for n in [32, 64] {
        let g = metric(n);
        for (name, mode) in MODES {
            exec::set_mode(mode);
            group.bench_with_input(BenchmarkId::new(name, n), &g, |b, g| {
                b.iter(|| spectral::lambda_of(g, DEFAULT_TOL).unwrap())
            });
        }
    }
    group.finish();
}

fn flow_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("modified_step");
    group.sample_size(10);
    let g = metric(64);
    let state = FlowState::new(0.0, g.clone());
    let dt = flows::cfl_limit(&g, flows::DEFAULT_C_CFL);
    for (name, mode) in MODES {
        exec::set_mode(mode);
        group.bench_function(name, |b| b.iter(|| flows::step(&state, dt, &FlowKind::Modified).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, ricci, lambda, flow_step);
criterion_main!(benches);
