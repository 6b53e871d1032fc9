use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use rigift::cohomology::{delta1, GammaModule};
use rigift::ift::charts;
use rigift::rigidity::{check_local_rigidity, fixtures, RigidityOptions};
use rigift::{certify_neighborhood, solve_fiber, FiberOptions};

fn fiber(c: &mut Criterion) {
    let (phi, psi) = charts::builtin_pair("parabola").unwrap();
    let constants = certify_neighborhood(&phi, &psi).unwrap();
    let a = 0.5 * constants.w_radius;
    let y = DVector::from_column_slice(&[a, a * a]);
    let opts = FiberOptions::default();
    c.bench_function("solve_fiber/parabola", |b| {
        b.iter(|| solve_fiber(&phi, &psi, black_box(&y), &constants, &opts).unwrap())
    });
}

fn coboundary(c: &mut Criterion) {
    let rep = fixtures::surface_group_so3(2, 11);
    let module = GammaModule::from_representation(&rep).unwrap();
    let pres = rep.presentation().clone();
    c.bench_function("delta1/genus2_so3", |b| b.iter(|| delta1(black_box(&module), &pres, &[0]).unwrap()));
}

fn rigidity(c: &mut Criterion) {
    let opts = RigidityOptions { certify: false, ..RigidityOptions::default() };
    let mut group = c.benchmark_group("check_local_rigidity");
    group.sample_size(20);
    for (label, rep) in [("z3_so2", fixtures::cyclic_rotation(3)), ("genus2_so3", fixtures::surface_group_so3(2, 11))] {
        group.bench_function(label, |b| b.iter(|| check_local_rigidity(black_box(&rep), &opts).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, fiber, coboundary, rigidity);
criterion_main!(benches);
