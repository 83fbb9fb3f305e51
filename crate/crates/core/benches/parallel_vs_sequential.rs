use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fbmcf::barrier::BarrierSurface;
use fbmcf::flow::{FlowConfig, FlowEngine};
use fbmcf::mesh::{compute_geometry, make_cap, CapSpec};
use fbmcf::Execution;
use nalgebra::Vector3;

const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn geometry(c: &mut Criterion) {
    let spec = CapSpec::CapCylinder { radius: 0.2, cylinder_radius: 2.0, segments: 24 };
    let mesh = make_cap(&spec).unwrap();
    let barrier = spec.barrier().unwrap();
    let mut g = c.benchmark_group("compute_geometry");
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| compute_geometry(&mesh, Some(&barrier), exec).unwrap()));
    }
    g.finish();
}

fn ball_curvatures(c: &mut Criterion) {
    let barrier = BarrierSurface::ellipsoid(Vector3::new(2.0, 1.5, 1.0), Vector3::zeros()).unwrap();
    let pts = barrier.sample_points(1500, 0);
    let mut g = c.benchmark_group("ball_curvatures");
    g.sample_size(10);
    for (name, exec) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| barrier.ball_curvatures(&pts, exec).unwrap()));
    }
    g.finish();
}

fn flow_step(c: &mut Criterion) {
    let spec = CapSpec::CapCylinder { radius: 0.2, cylinder_radius: 2.0, segments: 16 };
    let mesh = make_cap(&spec).unwrap();
    let mut g = c.benchmark_group("flow_step");
    for (name, exec) in POLICIES {
        let engine = FlowEngine::new(spec.barrier().unwrap(), FlowConfig::default(), exec).unwrap();
        let state = engine.initial_state(mesh.clone()).unwrap();
        let dt = engine.adaptive_dt(&state);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| engine.step(&state, dt).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, geometry, ball_curvatures, flow_step);
criterion_main!(benches);
