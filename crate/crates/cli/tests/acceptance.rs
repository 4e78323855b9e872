//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use vpb_cli::{execute_couple, execute_run, miot_profile, RunConfig};
use vpb_core::bounds::{check_holder_moments, check_sandwich_default, partition_gbu, window_q, PartitionSettings, VERDICT_HYPOTHESIS};
use vpb_core::diagnostics::{compute_tb, DiagnosticsSettings};
use vpb_core::ensemble::sample_initial;
use vpb_core::fields::{eval_e_periodic, AnalyticElectric, LipschitzFamily};
use vpb_core::integrator::{advance, flow_jacobian, step_boris, TrajectoryWindow};
use vpb_core::uniqueness::{couple_ensembles, couple_runs, osgood_envelope, BranchConfig, OsgoodParams};
use vpb_core::{
    DensityGrid, Domain, ElectricModel, FieldModel, InitialDataSpec, MagneticModel, ParticleEnsemble, RngSeed,
    SimState, Vec3,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg)
    }
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

fn bz(b: f64) -> MagneticModel {
    MagneticModel::constant(Vec3::new(0.0, 0.0, b))
}

fn gyro_orbit() -> Check {
    let x0 = Vec3::new(0.3, -0.2, 0.1);
    let v0 = Vec3::new(1.0, 0.5, 0.25);
    let ens = ParticleEnsemble::new(vec![x0], vec![v0], vec![1.0], Domain::FreeSpace).map_err(|e| e.to_string())?;
    let fields = FieldModel::new(bz(1.0), ElectricModel::Analytic(AnalyticElectric::Zero), 100.0);
    let mut s = SimState::new(ens, fields, &[]).map_err(|e| e.to_string())?;
    let b = Vec3::new(0.0, 0.0, 1.0);
    // guiding centre of dv/dt = v x B
    let centre = x0 + v0.cross(b);
    let radius = Vec3::new(v0[0], v0[1], 0.0).norm();
    let speed0 = v0.norm();
    let mut speed_drift: f64 = 0.0;
    let mut radius_err: f64 = 0.0;
    for _ in 0..10_000 {
        step_boris(&mut s, 0.01).map_err(|e| e.to_string())?;
        let x = s.ensemble.positions()[0];
        let v = s.ensemble.velocities()[0];
        speed_drift = speed_drift.max((v.norm() - speed0).abs());
        let d = x - centre;
        radius_err = radius_err.max((Vec3::new(d[0], d[1], 0.0).norm() - radius).abs());
    }
    ensure(speed_drift < 1e-12, format!("speed drift {speed_drift:e}"))?;
    ensure(radius_err < 1e-3, format!("radius error {radius_err:e}"))?;
    Ok(format!("speed drift {speed_drift:.2e}, radius error {radius_err:.2e}"))
}

fn liouville() -> Check {
    let configs = [
        (bz(1.0), AnalyticElectric::SineX1 { amplitude: 0.8, wavenumber: 1.3 }),
        (MagneticModel::constant(Vec3::new(0.3, -0.6, 1.2)), AnalyticElectric::Uniform { e: Vec3::new(0.2, 0.1, -0.4) }),
        (
            MagneticModel::LipschitzSpatial {
                field: LipschitzFamily::Shear { base: 1.0, amplitude: 0.5, width: 0.7 },
                declared_sup: 1.5,
                declared_grad: 0.5 / 0.7,
            },
            AnalyticElectric::SineX1 { amplitude: 0.3, wavenumber: 2.0 },
        ),
    ];
    let mut worst: f64 = 0.0;
    for (m, e) in configs {
        let fields = FieldModel::new(m, ElectricModel::Analytic(e), 2.0);
        for (x, v) in [
            (Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.5, -0.3, 0.2)),
            (Vec3::new(-0.7, 0.4, 0.0), Vec3::new(1.2, 0.8, -0.5)),
        ] {
            let d = flow_jacobian(&fields, x, v, 1.0, 1e-4).map_err(|e| e.to_string())?;
            worst = worst.max((d - 1.0).abs());
        }
    }
    ensure(worst < 1e-5, format!("|det - 1| = {worst:e}"))?;
    Ok(format!("max |det - 1| = {worst:.2e} over 3 field configurations"))
}

fn cold_ball_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.n = 2000;
    cfg.seed = 3;
    cfg.dt = 1e-3;
    cfg.t_end = 1.0;
    cfg.initial = InitialDataSpec::monokinetic(0.0, 1.0, 1.0);
    cfg.fields.electric = ElectricModel::Direct { softening: 0.05 };
    cfg.diagnostics.cadence = 100;
    cfg
}

fn maxwellian_config() -> RunConfig {
    RunConfig::default()
}

fn energy(outcome: &vpb_cli::Outcome) -> Check {
    let r = outcome.report("energy_conservation").next().ok_or("no energy report")?;
    ensure(r.lhs < 0.01, format!("relative drift {:e}", r.lhs))?;
    Ok(format!("relative total-energy drift {:.2e}", r.lhs))
}

fn tb_solver() -> Check {
    // independent bisection on T directly
    let oracle = |b: f64, a: f64| {
        let (mut lo, mut hi) = (0.0f64, a / b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if b * mid * (b * mid).exp() < a {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let mut worst: f64 = 0.0;
    for b in [0.1, 0.5, 1.0, 3.0, 10.0] {
        for a in [1e-6, 2f64.powi(-10), 0.1, 1.0, 5.0] {
            let t = compute_tb(b, a).map_err(|e| e.to_string())?;
            worst = worst.max((t - oracle(b, a)).abs());
        }
    }
    ensure(worst <= 1e-12, format!("oracle gap {worst:e}"))?;
    let a = 2f64.powi(-10);
    let t1 = compute_tb(1.0, a).map_err(|e| e.to_string())?;
    ensure((t1 - 9.75610e-4).abs() <= 1e-8, format!("T_B(1, 2^-10) = {t1}"))?;
    for b in [0.5, 1.0, 2.0, 4.0] {
        let t = compute_tb(b, a).map_err(|e| e.to_string())?;
        ensure(t * b == t1, format!("B T_B(B) = {} != {t1} at B = {b}", t * b))?;
    }
    Ok(format!("oracle gap {worst:.1e}, T_B(1, 2^-10) = {t1:.5e}, exact 1/B scaling"))
}

fn gronwall(outcome: &vpb_cli::Outcome) -> Check {
    let probes: Vec<_> = outcome.report("velocity_gronwall").collect();
    let passed = probes.iter().filter(|r| r.pass && r.is_checked()).count();
    ensure(probes.len() == 128 && passed == 128, format!("{passed} of {} probes pass", probes.len()))?;
    let mut records = 0;
    for k in [2.0, 3.0] {
        let reps: Vec<_> = outcome.report("moment_propagation").filter(|r| r.params.get("k") == Some(&k)).collect();
        ensure(!reps.is_empty(), format!("no moment reports for k = {k}"))?;
        if let Some(bad) = reps.iter().find(|r| !r.pass) {
            return Err(format!("k = {k} fails at t = {}: {} > {}", bad.t, bad.lhs, bad.rhs));
        }
        records += reps.len();
    }
    Ok(format!("128/128 probes, {records} moment records pass"))
}

fn holder() -> Check {
    let mono = sample_initial(&InitialDataSpec::monokinetic(1.7, 1.0, 2.0), 1000, RngSeed(4), Domain::FreeSpace)
        .map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (k, k0) in [(2.0, 4.0), (3.0, 6.0), (1.0, 5.0)] {
        let r = check_holder_moments(&mono, k, k0).map_err(|e| e.to_string())?;
        worst = worst.max(r.margin.abs());
    }
    ensure(worst < 1e-12, format!("monokinetic |margin| = {worst:e}"))?;
    let maxw = sample_initial(&InitialDataSpec::maxwellian(1.0, 1.0, 1.0), 2000, RngSeed(5), Domain::FreeSpace)
        .map_err(|e| e.to_string())?;
    let mut min_margin = f64::INFINITY;
    for (k, k0) in [(2.0, 4.0), (3.0, 6.0)] {
        let r = check_holder_moments(&maxw, k, k0).map_err(|e| e.to_string())?;
        ensure(r.margin > 0.0, format!("Maxwellian ({k}, {k0}) margin {}", r.margin))?;
        min_margin = min_margin.min(r.margin);
    }
    Ok(format!("monokinetic |margin| {worst:.1e}, Maxwellian min margin {min_margin:.3}"))
}

fn recorded_window(steps: usize) -> Result<TrajectoryWindow, String> {
    let e = sample_initial(&InitialDataSpec::maxwellian(1.0, 1.0, 1.0), 400, RngSeed(6), Domain::FreeSpace)
        .map_err(|e| e.to_string())?;
    let fields = FieldModel::new(bz(1.0), ElectricModel::Direct { softening: 0.05 }, 1.0);
    let mut s = SimState::new(e, fields, &[]).map_err(|e| e.to_string())?;
    let settings = DiagnosticsSettings { cadence: 100, window_steps: Some(steps), ..Default::default() };
    let out = advance(&mut s, 0.3, 0.01, &settings).map_err(|e| e.to_string())?;
    out.window.ok_or_else(|| "no window".into())
}

fn gbu() -> Check {
    let w = recorded_window(20)?;
    let mut windows = 0;
    let mut worst: f64 = 0.0;
    for delta in [0.05, 0.1, 0.2] {
        let q = window_q(&w, delta).map_err(|e| e.to_string())?;
        for reference in [0, 17, 399] {
            for l in [1e-3, 1.0, 1e3] {
                for factor in [1.0, 1024.0] {
                    let mut s = PartitionSettings::new(4.0, delta, reference, 0.05);
                    s.l = l;
                    s.p_factor = factor;
                    let d = partition_gbu(&w, &s, q, 1.0).map_err(|e| e.to_string())?;
                    worst = worst.max(((d.i_g + d.i_b + d.i_u) - d.i_total).abs() / d.i_total);
                    windows += 1;
                }
            }
            let mut s = PartitionSettings::new(4.0, delta, reference, 0.05);
            s.l = 1e300;
            s.p_factor = 1.0;
            let d = partition_gbu(&w, &s, q, 1.0).map_err(|e| e.to_string())?;
            ensure(d.i_u == 0.0 && d.n_u == 0, format!("L -> inf leaves I_U = {}", d.i_u))?;
        }
    }
    ensure(worst <= 1e-10, format!("additivity error {worst:e}"))?;
    // all particles at rest: every sample is slow
    let e = sample_initial(&InitialDataSpec::monokinetic(0.0, 1.0, 1.0), 200, RngSeed(7), Domain::FreeSpace)
        .map_err(|e| e.to_string())?;
    let mut still = TrajectoryWindow::new(11);
    still.weights = e.weights().to_vec();
    for n in 0..=10 {
        still.times.push(n as f64 * 0.01);
        still.positions.push(e.positions().to_vec());
        still.velocities.push(e.velocities().to_vec());
        still.abs_e.push(vec![0.1; e.len()]);
    }
    let q = window_q(&still, 0.1).map_err(|e| e.to_string())?;
    let d = partition_gbu(&still, &PartitionSettings::new(4.0, 0.1, 0, 0.05), q, 1.0).map_err(|e| e.to_string())?;
    ensure(d.i_total == d.i_g && d.n_b + d.n_u == 0, format!("all-slow: I_total {} vs I_G {}", d.i_total, d.i_g))?;
    Ok(format!("{windows} windows, additivity error {worst:.1e}, L -> inf and all-slow limits exact"))
}

fn sandwich() -> Check {
    let mut e = sample_initial(&InitialDataSpec::uniform_ball(1.0, 1.0, 1.0), 400, RngSeed(8), Domain::FreeSpace)
        .map_err(|e| e.to_string())?;
    e.kick_velocities(Vec3::new(6.0, 0.0, 0.0));
    let b_inf = 0.1;
    let fields = FieldModel::new(
        bz(b_inf),
        ElectricModel::Analytic(AnalyticElectric::SineX1 { amplitude: 0.01, wavenumber: 1.0 }),
        1.0,
    );
    let mut s = SimState::new(e, fields, &[]).map_err(|e| e.to_string())?;
    let settings = DiagnosticsSettings { cadence: 10, window_steps: Some(9), ..Default::default() };
    let w = advance(&mut s, 0.02, 0.001, &settings).map_err(|e| e.to_string())?.window.ok_or("no window")?;
    let delta = 0.009;
    let db = delta * b_inf;
    ensure(db * db.exp() <= 2f64.powi(-10), format!("gate value {}", db * db.exp()))?;
    let q = window_q(&w, delta).map_err(|e| e.to_string())?;
    let r = check_sandwich_default(&w, &PartitionSettings::new(4.0, delta, 0, 0.05), q, b_inf).map_err(|e| e.to_string())?;
    ensure(r.is_checked(), format!("verdict {}", r.verdict))?;
    let u = r.params.get("u_samples").copied().unwrap_or(0.0);
    ensure(u > 0.0, "U is empty".into())?;
    ensure(r.pass, format!("worst factor {} > 2", r.lhs))?;
    let gated = check_sandwich_default(&w, &PartitionSettings::new(4.0, 5.0, 0, 0.05), q, b_inf)
        .map_err(|e| e.to_string())?;
    ensure(gated.verdict == VERDICT_HYPOTHESIS, format!("delta B = 0.5 verdict {}", gated.verdict))?;
    Ok(format!("{u} U samples, worst factor {:.6}, delta B = 0.5 gated", r.lhs))
}

fn periodic() -> Check {
    let m = 32;
    let side = 1.0;
    let rho = DensityGrid::from_fn(m, side / m as f64, Vec3::ZERO, Domain::Torus { side }, |x| (2.0 * PI * x[0]).cos());
    let e = eval_e_periodic(&rho).map_err(|e| e.to_string())?;
    let mut err: f64 = 0.0;
    let mut proj = 0.0;
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let c = rho.cell_center(i, j, k);
                let v = e.values[rho.index(i, j, k)];
                let exact = Vec3::new((2.0 * PI * c[0]).sin() / (2.0 * PI), 0.0, 0.0);
                err = err.max((v - exact).max_abs());
                proj += v[0] * (2.0 * PI * c[0]).sin();
            }
        }
    }
    let amplitude = 2.0 * proj / (m * m * m) as f64;
    ensure(err < 1e-10, format!("max error {err:e}"))?;
    ensure((amplitude - 1.0 / (2.0 * PI)).abs() < 1e-10, format!("amplitude {amplitude}"))?;
    Ok(format!("max error {err:.1e}, amplitude {amplitude:.12}"))
}

fn miot() -> Check {
    let (rows, outcome) = miot_profile(200_000, 1, 1.0 / 64.0, &[1.0, 2.0, 4.0, 8.0, 16.0, 30.0]).map_err(|e| e.to_string())?;
    let table: Vec<String> = rows.iter().map(|r| format!("p={} rel={:.3}", r.p, r.rel_err())).collect();
    let failed: Vec<String> =
        outcome.failures().map(|r| format!("{} lhs {:.4} rhs {:.4}", r.name, r.lhs, r.rhs)).collect();
    if failed.is_empty() {
        Ok(table.join(", "))
    } else {
        Err(format!("{}; {}", failed.join("; "), table.join(", ")))
    }
}

fn coupling(dir: &Path) -> Check {
    // identical self-consistent branches, through the command layer
    let mut cfg = RunConfig::default();
    cfg.n = 300;
    cfg.t_end = 0.5;
    cfg.diagnostics.cadence = 5;
    let identical = execute_couple(&cfg, &dir.join("identical")).map_err(|e| e.to_string())?;
    let r = identical.report("coupling_identical").next().ok_or("no identical report")?;
    ensure(r.pass && r.lhs == 0.0, format!("identical branches: max(D, Q) = {}", r.lhs))?;

    // free drift with a velocity offset: D(t) = |u| t mass
    let mass = 2.0;
    let base = sample_initial(&InitialDataSpec::maxwellian(1.0, 1.0, mass), 300, RngSeed(9), Domain::FreeSpace)
        .map_err(|e| e.to_string())?;
    let free = FieldModel::new(MagneticModel::zero(), ElectricModel::Analytic(AnalyticElectric::Zero), 1.0);
    let u = Vec3::new(0.3, -0.4, 0.0);
    let run = couple_ensembles(&base, &BranchConfig::new(free), &BranchConfig { fields: free, kick: u }, 1.0, 0.01, 10, 0.0, 4.0)
        .map_err(|e| e.to_string())?;
    let drift_err = run.records.iter().fold(0.0f64, |m, r| m.max((r.d - u.norm() * r.t * mass).abs()));
    ensure(drift_err <= 1e-10, format!("drift-offset error {drift_err:e}"))?;
    let mut cs_ok = run.records.iter().all(|r| r.d <= (2.0 * run.mass * r.q_loeper).sqrt());

    // eta family
    let spec = InitialDataSpec::maxwellian(1.0, 1.0, 1.0);
    let fa = FieldModel::new(bz(1.0), ElectricModel::Direct { softening: 0.05 }, 0.5);
    let mut ds = Vec::new();
    for eta in [0.0, 0.025, 0.05, 0.1, 0.2] {
        let fb = FieldModel { magnetic: fa.magnetic.perturbed(eta, Vec3::new(0.0, 0.0, 1.0)), ..fa };
        let run = couple_runs(&spec, 300, RngSeed(2), &BranchConfig::new(fa), &BranchConfig::new(fb), 0.5, 0.01, 10, eta, 4.0)
            .map_err(|e| e.to_string())?;
        cs_ok &= run.records.iter().all(|r| r.d <= (2.0 * run.mass * r.q_loeper).sqrt());
        ds.push(run.records.last().expect("records").d);
    }
    ensure(ds[0] == 0.0 && ds.windows(2).all(|w| w[0] < w[1]), format!("D(T) over eta: {ds:?}"))?;
    ensure(cs_ok, "D > (2 mass Q)^(1/2) at some record".into())?;
    Ok(format!("identical exact, drift error {drift_err:.1e}, eta-monotone D(T) = {ds:.3?}"))
}

fn osgood() -> Check {
    let rhs = |c: f64, y: f64| c * y * (1.0 + (1.0 / y).ln());
    let mut worst: f64 = 0.0;
    for (y0, c) in [(1.0, 1.0), (0.1, 2.0)] {
        let p = OsgoodParams { c, y0 };
        let h = 1e-3;
        let mut y = y0;
        for n in 1..=2000 {
            let k1 = rhs(c, y);
            let k2 = rhs(c, y + 0.5 * h * k1);
            let k3 = rhs(c, y + 0.5 * h * k2);
            let k4 = rhs(c, y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            let exact = osgood_envelope(p, n as f64 * h).map_err(|e| e.to_string())?;
            worst = worst.max((y - exact).abs());
        }
    }
    ensure(worst <= 1e-8, format!("ODE gap {worst:e}"))?;
    let e = std::f64::consts::E;
    let mut fixed: f64 = 0.0;
    for t in [0.0, 0.5, 1.0, 2.0, 10.0] {
        fixed = fixed.max((osgood_envelope(OsgoodParams { c: 1.5, y0: e }, t).map_err(|e| e.to_string())? - e).abs());
    }
    ensure(fixed <= 1e-12, format!("fixed point moves by {fixed:e}"))?;
    Ok(format!("ODE gap {worst:.1e}, fixed point drift {fixed:.1e}"))
}

fn e_infinity(runs: &[&vpb_cli::Outcome]) -> Check {
    let mut n = 0;
    let mut min_ratio = f64::INFINITY;
    for o in runs {
        for r in o.report("e_infinity") {
            ensure(r.lhs < r.rhs, format!("sup |E| = {} >= bound {} at t = {}", r.lhs, r.rhs, r.t))?;
            min_ratio = min_ratio.min(r.rhs / r.lhs);
            n += 1;
        }
    }
    ensure(n >= 4, format!("only {n} e_infinity reports"))?;
    Ok(format!("{n} lattices, smallest bound/sup ratio {min_ratio:.2}"))
}

fn determinism(dir: &Path) -> Check {
    let mut cfg = RunConfig::default();
    cfg.n = 500;
    cfg.t_end = 0.2;
    cfg.seed = 11;
    cfg.diagnostics.window_steps = Some(10);
    let path = dir.join("det.toml");
    std::fs::write(&path, cfg.to_toml()).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_vpb"))
            .args(["run", "--threads", "2", "--config"])
            .arg(&path)
            .arg("--out")
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), format!("run {run} exited with {:?}", status.status.code()))?;
        outputs.push(std::fs::read(out.join("series.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], "series.csv differs between runs".into())?;
    Ok(format!("{} identical bytes", outputs[0].len()))
}

fn main() {
    let dir = tmp();
    let mut failed = 0;
    let mut line = |n: usize, name: &str, res: Check, started: Instant| {
        let secs = started.elapsed().as_secs_f64();
        match res {
            Ok(msg) => println!("criterion {n:2} {name}: PASS ({msg}) [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("criterion {n:2} {name}: FAIL ({msg}) [{secs:.1}s]");
            }
        }
    };
    let t = Instant::now();
    line(1, "gyro-orbit exactness", gyro_orbit(), t);
    let t = Instant::now();
    line(2, "Liouville", liouville(), t);

    let t = Instant::now();
    let cold = execute_run(&cold_ball_config(), &dir.path().join("cold"));
    let cold = match cold {
        Ok(o) => o,
        Err(e) => {
            println!("cold-ball run failed: {e}");
            std::process::exit(1);
        }
    };
    line(3, "energy conservation", energy(&cold), t);
    let t = Instant::now();
    line(4, "T_B solver", tb_solver(), t);
    let t = Instant::now();
    let maxw = match execute_run(&maxwellian_config(), &dir.path().join("maxwellian")) {
        Ok(o) => o,
        Err(e) => {
            println!("Maxwellian run failed: {e}");
            std::process::exit(1);
        }
    };
    line(5, "Gronwall audits", gronwall(&maxw), t);
    let t = Instant::now();
    line(6, "Holder moments", holder(), t);
    let t = Instant::now();
    line(7, "GBU partition", gbu(), t);
    let t = Instant::now();
    line(8, "sandwich", sandwich(), t);
    let t = Instant::now();
    line(9, "periodic solver", periodic(), t);
    let t = Instant::now();
    line(10, "Miot profile", miot(), t);
    let t = Instant::now();
    line(11, "coupling", coupling(dir.path()), t);
    let t = Instant::now();
    line(12, "Osgood", osgood(), t);
    let t = Instant::now();
    line(13, "E-infinity bound", e_infinity(&[&cold, &maxw]), t);
    let t = Instant::now();
    line(14, "determinism", determinism(dir.path()), t);
    println!("{} of 14 criteria failed", failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
