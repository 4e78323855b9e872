//! Coupled branches from shared initial samples, the distances `D` and the
//! quadratic coupling, Osgood and second-order comparison utilities, and
//! the Miot criterion audit.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::diagnostics::{lp_norm, miot_ratio, BoundReport, ImpliedConstantReport};
use crate::ensemble::{analytic_initial_moment, sample_initial, Domain, InitialDataSpec, InitialKind, ParticleEnsemble, RngSeed};
use crate::error::{invalid, Error, Result};
use crate::fields::{deposit_cic_auto, e_infinity_bound, eval_e_direct, DensityGrid, FieldModel, GridSpec};
use crate::integrator::{step_boris, SimState};
use crate::vec3::Vec3;

/// Fields of one branch and an optional velocity kick applied at `t = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchConfig {
    pub fields: FieldModel,
    #[serde(default)]
    pub kick: Vec3,
}

impl BranchConfig {
    pub fn new(fields: FieldModel) -> Self {
        Self { fields, kick: Vec3::ZERO }
    }
}

/// One synchronized record of a coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingRecord {
    pub t: f64,
    #[serde(rename = "D")]
    pub d: f64,
    #[serde(rename = "Q_loeper")]
    pub q_loeper: f64,
    /// `int sum_i w_i |E_1(X_1) - E_2(X_2)|`.
    #[serde(rename = "I_acc")]
    pub i_acc: f64,
    /// `int |B|_inf sum_i w_i |V_1 - V_2|`.
    #[serde(rename = "J_acc")]
    pub j_acc: f64,
    /// `int sum_i w_i |V_2| |B(X_1) - B(X_2)|`, with branch A's field.
    #[serde(rename = "K_acc")]
    pub k_acc: f64,
    pub eta: f64,
    pub p: f64,
}

/// Two branches advanced in lockstep from the same initial ensemble.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub a: SimState,
    pub b: SimState,
    pub mass: f64,
    pub records: Vec<CouplingRecord>,
}

/// Identity-coupling functionals between two branches at their current state.
fn coupling_distances(a: &ParticleEnsemble, b: &ParticleEnsemble) -> (f64, f64) {
    let mut d = 0.0;
    let mut q = 0.0;
    for i in 0..a.len() {
        let w = a.weights()[i];
        let dx = a.positions()[i] - b.positions()[i];
        let dv = a.velocities()[i] - b.velocities()[i];
        d += w * dx.norm();
        q += w * (dx.norm_sq() + dv.norm_sq());
    }
    (d, 0.5 * q)
}

fn ijk_integrands(a: &SimState, b: &SimState) -> [f64; 3] {
    let b_inf = a.fields.b_inf().max(b.fields.b_inf());
    let (ea, eb) = (a.particle_field(), b.particle_field());
    let mut out = [0.0; 3];
    for i in 0..a.ensemble.len() {
        let w = a.ensemble.weights()[i];
        let (x1, x2) = (a.ensemble.positions()[i], b.ensemble.positions()[i]);
        let (v1, v2) = (a.ensemble.velocities()[i], b.ensemble.velocities()[i]);
        out[0] += w * (ea[i] - eb[i]).norm();
        out[1] += w * b_inf * (v1 - v2).norm();
        let db = a.fields.magnetic.value(a.t, x1) - a.fields.magnetic.value(a.t, x2);
        out[2] += w * v2.norm() * db.norm();
    }
    out
}

/// Samples `spec` once, builds both branches (applying branch kicks), and
/// advances them with the Boris scheme, recording every `cadence` steps.
/// `eta` and `p` are carried into the records for reporting.
#[allow(clippy::too_many_arguments)]
pub fn couple_runs(
    spec: &InitialDataSpec,
    n: usize,
    seed: RngSeed,
    config_a: &BranchConfig,
    config_b: &BranchConfig,
    t_end: f64,
    dt: f64,
    cadence: usize,
    eta: f64,
    p: f64,
) -> Result<CoupledRun> {
    let domain: Domain = config_a.fields.domain();
    if config_b.fields.domain() != domain {
        return Err(Error::Domain("both branches need the same domain".into()));
    }
    let base = sample_initial(spec, n, seed, domain)?;
    couple_ensembles(&base, config_a, config_b, t_end, dt, cadence, eta, p)
}

/// As [`couple_runs`], from an explicit initial ensemble.
#[allow(clippy::too_many_arguments)]
pub fn couple_ensembles(
    base: &ParticleEnsemble,
    config_a: &BranchConfig,
    config_b: &BranchConfig,
    t_end: f64,
    dt: f64,
    cadence: usize,
    eta: f64,
    p: f64,
) -> Result<CoupledRun> {
    if cadence == 0 || !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(invalid("coupling needs cadence >= 1, dt > 0, T >= 0"));
    }
    let mut ens_a = base.clone();
    let mut ens_b = base.clone();
    ens_a.kick_velocities(config_a.kick);
    ens_b.kick_velocities(config_b.kick);
    let mass = base.total_mass();
    let mut run = CoupledRun {
        a: SimState::new(ens_a, config_a.fields, &[])?,
        b: SimState::new(ens_b, config_b.fields, &[])?,
        mass,
        records: Vec::new(),
    };
    let steps = (t_end / dt).round() as usize;
    if t_end > 0.0 && ((steps as f64 * dt - t_end) / t_end).abs() > 1e-9 {
        return Err(invalid(format!("T = {t_end} is not a multiple of dt = {dt}")));
    }
    let mut acc = [0.0; 3];
    let mut prev = ijk_integrands(&run.a, &run.b);
    run.push_record(acc, eta, p);
    for step in 1..=steps {
        let (ra, rb) = rayon::join(|| step_boris(&mut run.a, dt), || step_boris(&mut run.b, dt));
        ra?;
        rb?;
        let t = step as f64 * dt;
        run.a.t = t;
        run.b.t = t;
        let cur = ijk_integrands(&run.a, &run.b);
        for c in 0..3 {
            acc[c] += 0.5 * dt * (prev[c] + cur[c]);
        }
        prev = cur;
        if step % cadence == 0 || step == steps {
            run.push_record(acc, eta, p);
        }
    }
    Ok(run)
}

impl CoupledRun {
    fn push_record(&mut self, acc: [f64; 3], eta: f64, p: f64) {
        let (d, q) = coupling_distances(&self.a.ensemble, &self.b.ensemble);
        self.records.push(CouplingRecord {
            t: self.a.t,
            d,
            q_loeper: q,
            i_acc: acc[0],
            j_acc: acc[1],
            k_acc: acc[2],
            eta,
            p,
        });
    }

    fn record_at(&self, t: f64) -> Result<&CouplingRecord> {
        self.records
            .iter()
            .find(|r| (r.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or(Error::NotRecorded(t))
    }

    /// `t, D, Q_loeper, I_acc, J_acc, K_acc` per record.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,D,Q_loeper,I_acc,J_acc,K_acc")?;
        for r in &self.records {
            writeln!(out, "{},{},{},{},{},{}", r.t, r.d, r.q_loeper, r.i_acc, r.j_acc, r.k_acc)?;
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            writeln!(out, "{}", serde_json::to_string(r).expect("record serializes"))?;
        }
        Ok(())
    }

    /// `F(t) = int_0^t int_0^s D(tau)^(1 - 3/p) dtau ds` on the record grid,
    /// by cumulative trapezoid twice.
    pub fn second_order_profile(&self, p: f64) -> Vec<f64> {
        let e = 1.0 - 3.0 / p;
        let mut inner = vec![0.0];
        let mut outer = vec![0.0];
        for w in self.records.windows(2) {
            let h = w[1].t - w[0].t;
            let g0 = w[0].d.powf(e);
            let g1 = w[1].d.powf(e);
            let last = *inner.last().expect("nonempty");
            inner.push(last + 0.5 * h * (g0 + g1));
            let n = inner.len();
            let last_f = *outer.last().expect("nonempty");
            outer.push(last_f + 0.5 * h * (inner[n - 2] + inner[n - 1]));
        }
        outer
    }
}

/// `sum_i w_i |X_1,i(t) - X_2,i(t)|`.
pub fn distance_d(coupled: &CoupledRun, t: f64) -> Result<f64> {
    Ok(coupled.record_at(t)?.d)
}

/// `1/2 sum_i w_i (|X_1,i - X_2,i|^2 + |V_1,i - V_2,i|^2)`.
pub fn distance_q_loeper(coupled: &CoupledRun, t: f64) -> Result<f64> {
    Ok(coupled.record_at(t)?.q_loeper)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OsgoodParams {
    pub c: f64,
    pub y0: f64,
}

/// Solution of `y' = C y (1 + ln(1/y))`, `y(0) = y0`:
/// `y(t) = exp(1 - (1 - ln y0) exp(-C t))`.
pub fn osgood_envelope(params: OsgoodParams, t: f64) -> Result<f64> {
    if !(params.c > 0.0) || !(params.y0 > 0.0) {
        return Err(invalid("Osgood envelope needs C > 0 and y0 > 0"));
    }
    Ok((1.0 - (1.0 - params.y0.ln()) * (-params.c * t).exp()).exp())
}

/// Implied constant of `F'' <= C p^2 F` on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondOrderReport {
    pub implied: ImpliedConstantReport,
    /// `F` vanishes at every node, as the comparison principle demands when
    /// `F(0) = F'(0) = 0`.
    pub identically_zero: bool,
}

/// Smallest `C` with `F'' <= C p^2 F + tol` at interior nodes where `F` is
/// not negligible, `F''` by central differences.
pub fn second_order_gronwall_check(f: &[f64], dt: f64, p: f64) -> Result<SecondOrderReport> {
    if f.len() < 5 {
        return Err(invalid(format!("need at least 5 nodes, got {}", f.len())));
    }
    if !(p > 3.0) || !(dt > 0.0) {
        return Err(invalid("need p > 3 and dt > 0"));
    }
    if f.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(invalid("F must be finite and nonnegative"));
    }
    let max_f = f.iter().cloned().fold(0.0, f64::max);
    let mut params = std::collections::BTreeMap::new();
    params.insert("p".to_string(), p);
    params.insert("dt".to_string(), dt);
    params.insert("max_F".to_string(), max_f);
    if max_f == 0.0 {
        return Ok(SecondOrderReport {
            implied: ImpliedConstantReport {
                name: "second_order_gronwall".into(),
                c_impl: Some(0.0),
                samples: f.len() - 2,
                params,
            },
            identically_zero: true,
        });
    }
    let second: Vec<f64> = (1..f.len() - 1).map(|i| (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (dt * dt)).collect();
    let max_dd = second.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // F may be only C^1 at 0 (powers t^a with 1 < a < 2), so a one-sided
    // stencil is unreliable; compare the first-step slope with the mean slope
    let slope0 = (f[1] - f[0]) / dt;
    let span = dt * (f.len() - 1) as f64;
    if f[0].abs() > 1e-9 * max_f || slope0.abs() > 0.5 * max_f / span {
        return Err(invalid(format!("F(0) = {} and F'(0) ~ {slope0} must vanish", f[0])));
    }
    let tol = 1e-9 * max_dd;
    let mut c: f64 = 0.0;
    let mut used = 0;
    for (j, dd) in second.iter().enumerate() {
        let fi = f[j + 1];
        if fi < 1e-6 * max_f {
            continue;
        }
        used += 1;
        c = c.max((dd - tol) / (p * p * fi));
    }
    Ok(SecondOrderReport {
        implied: ImpliedConstantReport { name: "second_order_gronwall".into(), c_impl: Some(c), samples: used, params },
        identically_zero: false,
    })
}

/// `|rho_0|_p` of the Miot density by exact radial quadrature:
/// `(4 pi / 3) (4 pi Gamma(p + 1) / 3^(p + 1))^(1/p)`.
pub fn miot_lp_quadrature(p: f64) -> f64 {
    4.0 * PI / 3.0 * (((4.0 * PI).ln() + ln_gamma(p + 1.0) - (p + 1.0) * 3f64.ln()) / p).exp()
}

/// Pass/fail audit of `sup_t sup_p |rho(t)|_p / p` against `ceiling`, and
/// for Miot data of the `t = 0` profile against the quadrature within 5%.
/// The trend report compares `max_{p >= 8} |rho|_p / p` with 1.5 times the
/// ratio at the largest `p`.
pub fn miot_criterion_audit(
    grids: &[(f64, DensityGrid)],
    p_list: &[f64],
    ceiling: f64,
    miot_initial: bool,
) -> Result<Vec<BoundReport>> {
    if grids.is_empty() || p_list.is_empty() {
        return Err(invalid("audit needs grids and exponents"));
    }
    let slices: Vec<DensityGrid> = grids.iter().map(|g| g.1.clone()).collect();
    let ratio = miot_ratio(&slices, p_list)?;
    let t_last = grids.last().expect("nonempty").0;
    let mut out = vec![BoundReport::checked("miot_criterion", t_last, ratio, ceiling, if ratio.is_finite() {
        ceiling - ratio
    } else {
        f64::NEG_INFINITY
    })];
    if miot_initial {
        let g0 = &grids[0].1;
        let mut worst: f64 = 0.0;
        let mut worst_p = p_list[0];
        for p in p_list {
            let rel = (lp_norm(g0, *p)? / miot_lp_quadrature(*p) - 1.0).abs();
            if rel > worst {
                worst = rel;
                worst_p = *p;
            }
        }
        out.push(
            BoundReport::checked("miot_profile_t0", grids[0].0, worst, 0.05, 0.05 - worst)
                .with_param("worst_p", worst_p)
                .with_param("h", g0.h),
        );
        let p_max = p_list.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let at_max = lp_norm(g0, p_max)? / p_max;
        let mut tail: f64 = 0.0;
        for p in p_list.iter().filter(|p| **p >= 8.0) {
            tail = tail.max(lp_norm(g0, *p)? / p);
        }
        let rhs = 1.5 * at_max;
        out.push(BoundReport::checked("miot_trend", grids[0].0, tail, rhs, rhs - tail).with_param("p_max", p_max));
    }
    Ok(out)
}

/// Refuses initial data lacking a finite sixth velocity moment or fourth
/// position moment.
pub fn loeper_mode_admissible(spec: &InitialDataSpec) -> Result<()> {
    spec.validate()?;
    let m6 = analytic_initial_moment(spec, 6.0)?;
    let x4 = match spec.kind {
        InitialKind::Maxwellian { sigma_x, .. } => 15.0 * sigma_x.powi(4) * spec.total_mass,
        InitialKind::UniformBall { r_x, .. } | InitialKind::Monokinetic { r_x, .. } => {
            3.0 / 7.0 * r_x.powi(4) * spec.total_mass
        }
        // ball of radius one with density (4 pi / 3) ln(1/r)
        InitialKind::Miot => 4.0 * PI / 3.0 * 4.0 * PI / 49.0,
    };
    if !m6.is_finite() || !x4.is_finite() {
        return Err(invalid(format!("Loeper mode needs finite moments: M6 = {m6}, X4 = {x4}")));
    }
    Ok(())
}

/// `sup |E|` over a `side^3` lattice spanning the cloud versus
/// `e_infinity_bound(|rho|_1, |rho|_4, 4)` of the deposited density.
pub fn e_infinity_audit(ensemble: &ParticleEnsemble, softening: f64, grid: GridSpec, side: usize) -> Result<BoundReport> {
    if side < 2 {
        return Err(invalid("probe lattice needs at least 2 points per axis"));
    }
    let rho = deposit_cic_auto(ensemble, grid)?;
    let l1 = lp_norm(&rho, 1.0)?;
    let l4 = lp_norm(&rho, 4.0)?;
    let bound = e_infinity_bound(l1, l4, 4.0)?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for x in ensemble.positions() {
        for a in 0..3 {
            lo[a] = lo[a].min(x[a]);
            hi[a] = hi[a].max(x[a]);
        }
    }
    let mut targets = Vec::with_capacity(side * side * side);
    for k in 0..side {
        for j in 0..side {
            for i in 0..side {
                let f = |n: usize, a: usize| lo[a] + (hi[a] - lo[a]) * n as f64 / (side - 1) as f64;
                targets.push(Vec3::new(f(i, 0), f(j, 1), f(k, 2)));
            }
        }
    }
    let e = eval_e_direct(ensemble, &targets, softening)?;
    let sup = e.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    Ok(BoundReport::checked("e_infinity", 0.0, sup, bound, bound - sup)
        .with_param("rho_l1", l1)
        .with_param("rho_l4", l4)
        .with_param("h", rho.h))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{AnalyticElectric, ElectricModel, MagneticModel};

    #[test]
    fn osgood_closed_form() {
        let y = osgood_envelope(OsgoodParams { c: 1.0, y0: 1.0 }, 1.0).unwrap();
        assert!((y - (1.0 - (-1f64).exp()).exp()).abs() < 1e-15);
        assert!((y - 1.88160).abs() < 1e-5);
        let e = std::f64::consts::E;
        for t in [0.0, 0.5, 3.0] {
            assert!((osgood_envelope(OsgoodParams { c: 2.0, y0: e }, t).unwrap() - e).abs() < 1e-12);
        }
        let small = osgood_envelope(OsgoodParams { c: 1.0, y0: 1e-300 }, 1.0).unwrap();
        assert!(small < 1e-100);
        assert!(osgood_envelope(OsgoodParams { c: 0.0, y0: 1.0 }, 1.0).is_err());
    }

    #[test]
    fn second_order_cases() {
        let r = second_order_gronwall_check(&[0.0; 8], 0.1, 4.0).unwrap();
        assert_eq!(r.implied.c_impl, Some(0.0));
        assert!(r.identically_zero);
        assert!(second_order_gronwall_check(&[0.0; 4], 0.1, 4.0).is_err());
        let dt = 1e-3;
        let f: Vec<f64> = (0..=1000).map(|i| (i as f64 * dt).sinh().powi(2)).collect();
        let r = second_order_gronwall_check(&f, dt, 4.0).unwrap();
        // F'' / F = 2 cosh 2t / sinh^2 t is largest where F is smallest
        let c = r.implied.c_impl.unwrap();
        assert!(c.is_finite() && c > 0.0);
        assert!(!r.identically_zero);
        let shifted: Vec<f64> = f.iter().map(|v| v + 1.0).collect();
        assert!(second_order_gronwall_check(&shifted, dt, 4.0).is_err());
        let linear: Vec<f64> = (0..=100).map(|i| i as f64 * 0.01).collect();
        assert!(second_order_gronwall_check(&linear, 0.01, 4.0).is_err());
        // t^(9/4), the profile of a linearly separating pair at p = 4
        let rough: Vec<f64> = (0..=20).map(|i| (i as f64 * 0.05).powf(2.25)).collect();
        assert!(second_order_gronwall_check(&rough, 0.05, 4.0).is_ok());
    }

    #[test]
    fn miot_quadrature_values() {
        let q1 = miot_lp_quadrature(1.0);
        assert!((q1 - 16.0 * PI * PI / 27.0).abs() < 1e-12);
        let q2 = miot_lp_quadrature(2.0);
        let expected = 4.0 * PI / 3.0 * (4.0 * PI * 2.0 / 27.0f64).sqrt();
        assert!((q2 - expected).abs() < 1e-12);
    }

    fn free_fields() -> FieldModel {
        FieldModel::new(MagneticModel::zero(), ElectricModel::Analytic(AnalyticElectric::Zero), 2.0)
    }

    #[test]
    fn identical_branches_and_drift_offset() {
        let spec = InitialDataSpec::maxwellian(1.0, 1.0, 1.0);
        let same = couple_runs(&spec, 200, RngSeed(3), &BranchConfig::new(free_fields()), &BranchConfig::new(free_fields()), 1.0, 0.01, 10, 0.0, 4.0).unwrap();
        assert!(same.records.iter().all(|r| r.d == 0.0 && r.q_loeper == 0.0));
        let u = Vec3::new(0.3, -0.4, 0.0);
        let kicked = BranchConfig { fields: free_fields(), kick: u };
        let run = couple_runs(&spec, 200, RngSeed(3), &BranchConfig::new(free_fields()), &kicked, 1.0, 0.01, 10, 0.0, 4.0).unwrap();
        assert_eq!(distance_d(&run, 0.0).unwrap(), 0.0);
        for r in &run.records {
            assert!((r.d - 0.5 * r.t).abs() < 1e-10, "{} {}", r.t, r.d);
            assert!((r.q_loeper - 0.5 * 0.25 * (1.0 + r.t * r.t)).abs() < 1e-10);
            assert!(r.d <= (2.0 * run.mass * r.q_loeper).sqrt());
        }
        assert!(matches!(distance_d(&run, 0.123), Err(Error::NotRecorded(_))));
    }

    #[test]
    fn loeper_admissible_kinds() {
        for spec in [
            InitialDataSpec::maxwellian(1.0, 1.0, 1.0),
            InitialDataSpec::uniform_ball(1.0, 1.0, 1.0),
            InitialDataSpec::monokinetic(1.0, 1.0, 1.0),
            crate::ensemble::build_miot_spec(),
        ] {
            loeper_mode_admissible(&spec).unwrap();
        }
    }
}
