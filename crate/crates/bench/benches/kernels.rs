use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use vpb_core::ensemble::sample_initial;
use vpb_core::fields::{deposit_cic, eval_e_direct, eval_e_periodic};
use vpb_core::integrator::step_boris;
use vpb_core::{Domain, ElectricModel, FieldModel, InitialDataSpec, MagneticModel, RngSeed, SimState, Vec3};

fn direct_sum(c: &mut Criterion) {
    let e = sample_initial(&InitialDataSpec::maxwellian(1.0, 1.0, 1.0), 2000, RngSeed(1), Domain::FreeSpace).unwrap();
    c.bench_function("direct_sum_2000", |b| b.iter(|| eval_e_direct(black_box(&e), e.positions(), 0.05).unwrap()));
}

fn periodic_solve(c: &mut Criterion) {
    let side = 2.0 * std::f64::consts::PI;
    let e = sample_initial(&InitialDataSpec::maxwellian(1.0, 1.0, 1.0), 20_000, RngSeed(2), Domain::Torus { side })
        .unwrap();
    let m = 32;
    let rho = deposit_cic(&e, m, side / m as f64, Vec3::ZERO).unwrap();
    c.bench_function("cic_deposit_20000_m32", |b| {
        b.iter(|| deposit_cic(black_box(&e), m, side / m as f64, Vec3::ZERO).unwrap())
    });
    c.bench_function("fft_solve_m32", |b| b.iter(|| eval_e_periodic(black_box(&rho)).unwrap()));
}

fn boris_step(c: &mut Criterion) {
    let e = sample_initial(&InitialDataSpec::maxwellian(1.0, 1.0, 1.0), 1000, RngSeed(3), Domain::FreeSpace).unwrap();
    let fields = FieldModel::new(
        MagneticModel::constant(Vec3::new(0.0, 0.0, 1.0)),
        ElectricModel::Direct { softening: 0.05 },
        1e9,
    );
    let mut state = SimState::new(e, fields, &[]).unwrap();
    c.bench_function("boris_step_direct_1000", |b| b.iter(|| step_boris(black_box(&mut state), 1e-3).unwrap()));
}

criterion_group!(benches, direct_sum, periodic_solve, boris_step);
criterion_main!(benches);
