use criterion::{black_box, criterion_group, criterion_main, Criterion};

use threebody::birman_schwinger::{assemble_block, count_above_one};
use threebody::efimov::{s_r_count, sobolev_params, SymbolEvaluator};
use threebody::friedrichs::Friedrichs;
use threebody::lattice_model::appendix_b_cos;
use threebody::{Channel, TorusPoint, UniformGrid};

fn fiber() -> Friedrichs {
    let m = appendix_b_cos(1.0, 1.0).unwrap();
    let fr = Friedrichs::with_defaults(&m).unwrap();
    let mu0 = fr.mu_zero(Channel::One).unwrap();
    Friedrichs::with_defaults(&m.with_couplings(mu0, mu0).unwrap()).unwrap()
}

fn friedrichs(c: &mut Criterion) {
    let fr = fiber();
    let p = TorusPoint::new([0.3, -0.7, 1.1]);
    let mut g = c.benchmark_group("friedrichs");
    g.sample_size(20);
    g.bench_function("lambda_at_threshold", |b| {
        b.iter(|| fr.lambda(Channel::One, black_box(&TorusPoint::ORIGIN), 0.0).unwrap())
    });
    g.bench_function("lambda_below_threshold", |b| {
        b.iter(|| fr.lambda(Channel::One, black_box(&p), -0.5).unwrap())
    });
    g.bench_function("bound_state", |b| {
        b.iter(|| fr.bound_state(Channel::One, black_box(&p), 0.1).unwrap())
    });
    g.finish();
}

fn counting(c: &mut Criterion) {
    let fr = fiber();
    let grid = UniformGrid::new(8).unwrap();
    let block = assemble_block(&fr, -1e-2, &grid).unwrap();
    let mut g = c.benchmark_group("birman_schwinger");
    g.sample_size(10);
    g.bench_function("assemble_grid_8", |b| {
        b.iter(|| assemble_block(&fr, black_box(-1e-2), &grid).unwrap())
    });
    g.bench_function("count_grid_8", |b| {
        b.iter(|| count_above_one(black_box(&block)).unwrap())
    });
    g.finish();
}

fn efimov(c: &mut Criterion) {
    let params = sobolev_params(2.0, 2.0, -1.0).unwrap();
    let ev = SymbolEvaluator::new(params, 8, 32).unwrap();
    let mut g = c.benchmark_group("efimov");
    g.sample_size(10);
    g.bench_function("symbol_degrees_0_to_8", |b| {
        b.iter(|| ev.degree_values(black_box(0.7)).unwrap())
    });
    g.bench_function("s_r_count_r_25", |b| {
        b.iter(|| s_r_count(&params, black_box(25.0), 200, 8).unwrap())
    });
    g.finish();
}

criterion_group!(benches, friedrichs, counting, efimov);
criterion_main!(benches);
