//! Element assembly, static condensation and a full linear fluid solve on the
//! 14-element die mesh. With the `parallel` feature each case runs twice: on
//! the default rayon pool and inside a single-thread pool, which is the
//! sequential baseline. `--no-default-features` benchmarks the plain loop.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use swellhp::assembly::static_condense;
use swellhp::mesh::Mesh;
use swellhp::ns_solver::{
    fluid_dirichlet, fluid_element_system, solve_fluid, solve_stick_slip, FluidInputs, SimConfig, SurfaceCondition,
};
use swellhp::parallel;

fn setup(order: usize) -> (Mesh, SimConfig, [Vec<f64>; 2]) {
    let cfg = SimConfig {
        order,
        re: 10.0,
        ..SimConfig::default()
    };
    let mesh = cfg.build_mesh().unwrap();
    let state = solve_stick_slip(&mesh, &SimConfig { re: 0.0, ..cfg.clone() }).unwrap();
    (mesh, cfg, state.velocity)
}

#[cfg(feature = "parallel")]
fn pools() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("rayon", None), ("sequential", Some(single))]
}

#[cfg(not(feature = "parallel"))]
fn pools() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn within<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn within<R: Send>(_: &Option<()>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn bench(c: &mut Criterion) {
    for order in [6, 10] {
        let (mesh, cfg, vel) = setup(order);
        let dir = fluid_dirichlet(&mesh, &cfg, SurfaceCondition::Free).unwrap();
        let inp = FluidInputs {
            cfg: &cfg,
            previous: Some(&vel),
            advecting: &vel,
            mesh_velocity: None,
            spline: None,
        };
        let systems = parallel::try_map_indexed(mesh.elements.len(), |e| fluid_element_system(&mesh, e, &inp)).unwrap();
        let mut group = c.benchmark_group(format!("P{order}"));
        group.sample_size(20);
        for (name, pool) in pools() {
            group.bench_function(BenchmarkId::new("element_systems", name), |b| {
                b.iter(|| {
                    within(&pool, || {
                        parallel::try_map_indexed(mesh.elements.len(), |e| fluid_element_system(&mesh, e, &inp)).unwrap()
                    })
                })
            });
            group.bench_function(BenchmarkId::new("condense", name), |b| {
                b.iter(|| within(&pool, || static_condense(black_box(&systems), &dir).unwrap()))
            });
            group.bench_function(BenchmarkId::new("fluid_solve", name), |b| {
                b.iter(|| within(&pool, || solve_fluid(&mesh, &inp, &dir).unwrap()))
            });
        }
        group.finish();
    }
}

criterion_group!(benches, bench);
criterion_main!(benches);
