use proptest::prelude::*;

use vpb_core::bounds::{check_holder_moments, partition_gbu, PartitionSettings};
use vpb_core::diagnostics::{compute_tb, moment_k, probe_window_integral};
use vpb_core::ensemble::{sample_initial, Domain, InitialDataSpec, ParticleEnsemble, RngSeed};
use vpb_core::fields::{
    deposit_cic, deposit_cic_auto, eval_e_direct, AnalyticElectric, ElectricModel, FieldModel, GridSpec, MagneticModel,
};
use vpb_core::integrator::{boris_rotate, flow_jacobian, step_boris, SimState, TrajectoryWindow};
use vpb_core::uniqueness::{couple_ensembles, BranchConfig};
use vpb_core::Vec3;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn cloud(n: usize, seed: u64) -> ParticleEnsemble {
    sample_initial(&InitialDataSpec::maxwellian(1.0, 1.0, 1.0), n, RngSeed(seed), Domain::FreeSpace).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn boris_rotation_preserves_speed(v in vec3(10.0), b in vec3(3.0), dt in 0.001f64..0.3) {
        let out = boris_rotate(v, b, dt);
        prop_assert!((out.norm() - v.norm()).abs() <= 1e-13 * v.norm().max(1.0));
        // the rotation leaves the component along B unchanged
        if b.norm() > 0.0 {
            prop_assert!((out.dot(b) - v.dot(b)).abs() <= 1e-12 * (v.norm() * b.norm()).max(1.0));
        }
    }

    #[test]
    fn tb_is_the_functional_inverse(b in 0.01f64..50.0, a in 1e-6f64..10.0) {
        let t = compute_tb(b, a).unwrap();
        prop_assert!((b * t * (b * t).exp() - a).abs() < 1e-12);
    }

    #[test]
    fn holder_inequality_holds(seed in 0u64..1000, k in 0.0f64..4.0, gap in 0.1f64..4.0) {
        let e = cloud(300, seed);
        let r = check_holder_moments(&e, k, k + gap).unwrap();
        prop_assert!(r.pass, "{:?}", r);
    }

    #[test]
    fn monokinetic_saturates_holder(speed in 0.1f64..5.0, k in 0.0f64..3.0, gap in 0.5f64..3.0) {
        let e = sample_initial(&InitialDataSpec::monokinetic(speed, 1.0, 1.0), 200, RngSeed(1), Domain::FreeSpace).unwrap();
        let r = check_holder_moments(&e, k, k + gap).unwrap();
        prop_assert!(r.margin.abs() < 1e-12 * r.rhs.max(1.0), "{:?}", r);
    }

    #[test]
    fn deposit_conserves_mass(seed in 0u64..1000, mass in 0.1f64..10.0, side in 1.0f64..5.0, m in 4usize..24) {
        let spec = InitialDataSpec::maxwellian(1.0, 1.0, mass);
        let free = sample_initial(&spec, 500, RngSeed(seed), Domain::FreeSpace).unwrap();
        let g = deposit_cic_auto(&free, GridSpec { h: 0.2, max_cells: 64 }).unwrap();
        prop_assert!((g.mass() - mass).abs() <= 1e-10 * mass);
        let torus = sample_initial(&spec, 500, RngSeed(seed), Domain::Torus { side }).unwrap();
        let g = deposit_cic(&torus, m, side / m as f64, Vec3::ZERO).unwrap();
        prop_assert!((g.mass() - mass).abs() <= 1e-10 * mass);
        prop_assert!(g.values.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn third_law(seed in 0u64..1000, eps in 0.01f64..0.5) {
        let e = cloud(200, seed);
        let f = eval_e_direct(&e, e.positions(), eps).unwrap();
        let mut total = Vec3::ZERO;
        let mut scale = 0.0;
        for (fi, w) in f.iter().zip(e.weights()) {
            total += *fi * *w;
            scale += w * fi.norm();
        }
        prop_assert!(total.norm() <= 1e-10 * scale.max(1e-300));
    }

    #[test]
    fn liouville_for_prescribed_fields(
        x in vec3(1.0), v in vec3(1.0), bz in -2.0f64..2.0, amp in 0.0f64..1.5, kw in 0.2f64..2.0, t in 0.1f64..1.0
    ) {
        let fields = FieldModel::new(
            MagneticModel::constant(Vec3::new(0.0, 0.0, bz)),
            ElectricModel::Analytic(AnalyticElectric::SineX1 { amplitude: amp, wavenumber: kw }),
            1.0,
        );
        let d = flow_jacobian(&fields, x, v, t, 1e-4).unwrap();
        prop_assert!((d - 1.0).abs() < 1e-5, "{d}");
    }

    #[test]
    fn accumulation_is_monotone_and_additive(seed in 0u64..500, split in 0.05f64..0.45) {
        let e = cloud(100, seed);
        let fields = FieldModel::new(
            MagneticModel::constant(Vec3::new(0.0, 0.0, 1.0)),
            ElectricModel::Direct { softening: 0.1 },
            1.0,
        );
        let start = (e.positions()[0], e.velocities()[0]);
        let mut s = SimState::new(e, fields, &[start]).unwrap();
        for _ in 0..50 {
            step_boris(&mut s, 0.01).unwrap();
        }
        let p = &s.probes[0];
        for w in p.samples.windows(2) {
            prop_assert!(w[1].s > w[0].s);
            prop_assert!(w[1].accum_abs_e >= w[0].accum_abs_e);
        }
        let whole = probe_window_integral(p, 0.0, 0.5);
        let parts = probe_window_integral(p, 0.0, split) + probe_window_integral(p, split, 0.5);
        prop_assert!((whole - parts).abs() <= 1e-14 * whole.max(1.0));
        prop_assert!((whole - p.accumulated_abs_e).abs() <= 1e-13 * whole.max(1.0));
    }

    #[test]
    fn gbu_is_additive(seed in 0u64..500, l in 0.01f64..100.0, q in 0.0f64..0.01, eps_frac in 0.05f64..0.95) {
        let e = cloud(60, seed);
        let mut w = TrajectoryWindow::new(11);
        w.weights = e.weights().to_vec();
        for n in 0..=10 {
            let s = n as f64 * 0.01;
            w.times.push(s);
            w.positions.push(e.positions().iter().zip(e.velocities()).map(|(x, v)| *x + *v * s).collect());
            w.velocities.push(e.velocities().to_vec());
            w.abs_e.push(vec![0.0; e.len()]);
        }
        let mut settings = PartitionSettings::new(4.0, 0.1, 3, 0.05);
        settings.l = l;
        settings.eps = eps_frac * 0.25;
        let d = partition_gbu(&w, &settings, q, 1.0).unwrap();
        prop_assert!(((d.i_g + d.i_b + d.i_u) - d.i_total).abs() <= 1e-10 * d.i_total);
        prop_assert_eq!(d.n_g + d.n_b + d.n_u, 11 * 59);
    }

    #[test]
    fn coupling_cauchy_schwarz(seed in 0u64..500, u in vec3(1.0)) {
        let e = cloud(50, seed);
        let fields = FieldModel::new(MagneticModel::constant(Vec3::new(0.0, 0.0, 0.5)), ElectricModel::Analytic(AnalyticElectric::Zero), 1.0);
        let run = couple_ensembles(&e, &BranchConfig::new(fields), &BranchConfig { fields, kick: u }, 0.5, 0.01, 5, 0.0, 4.0).unwrap();
        prop_assert_eq!(run.records[0].d, 0.0);
        for r in &run.records {
            prop_assert!(r.d <= (2.0 * run.mass * r.q_loeper).sqrt() * (1.0 + 1e-12) + 1e-300);
        }
    }

    #[test]
    fn moments_are_monotone_in_order_for_unit_mass(seed in 0u64..500) {
        // with mass 1, M_k^(1/k) is nondecreasing in k
        let e = cloud(200, seed);
        let mut last = 0.0;
        for k in [1.0, 2.0, 3.0, 4.0, 6.0] {
            let m = moment_k(&e, k).unwrap().powf(1.0 / k);
            prop_assert!(m >= last * (1.0 - 1e-12));
            last = m;
        }
    }
}
