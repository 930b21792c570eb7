use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use vepic::dynamics::{euler_full_step, rk4_step, FieldModel, FormulaVariant};
use vepic::harness::{prepare, RunConfig};
use vepic::{Execution, KernelWidth, ParticleEnsemble, SortedFieldView};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

/// The standard datum at kernel width `delta` (with `ε = δ²`).
fn standard(delta: f64) -> (ParticleEnsemble, KernelWidth) {
    let cfg = RunConfig::standard().with_delta(delta);
    let p = prepare(&cfg, Execution::default()).expect("standard datum prepares");
    (p.ensemble, p.delta)
}

fn fields(c: &mut Criterion) {
    let mut group = c.benchmark_group("sample_at_particles");
    for delta in [0.1, 0.05] {
        let (e, d) = standard(delta);
        let view = SortedFieldView::build(&e, d).unwrap();
        group.throughput(Throughput::Elements(e.len() as u64));
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, e.len()), &view, |b, v| {
                b.iter(|| v.sample_at_particles(exec).unwrap())
            });
        }
    }
    group.finish();
}

fn steps(c: &mut Criterion) {
    let (e, d) = standard(0.1);
    let model = FieldModel::SelfConsistent(d);
    let mut group = c.benchmark_group("step");
    group.throughput(Throughput::Elements(e.len() as u64));
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new(format!("rk4/{name}"), e.len()), |b| {
            b.iter(|| rk4_step(&e, &model, 0.025, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new(format!("two_phase/{name}"), e.len()), |b| {
            b.iter(|| euler_full_step(&e, d, 0.025, FormulaVariant::Corrected, exec).unwrap())
        });
    }
    group.finish();
}

fn build(c: &mut Criterion) {
    let (e, d) = standard(0.05);
    c.bench_function(&format!("view_build/{}", e.len()), |b| {
        b.iter(|| SortedFieldView::build(&e, d).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = fields, steps, build
}
criterion_main!(benches);
