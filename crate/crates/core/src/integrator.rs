//! Advancing characteristics `X' = V, V' = E(t, X) + V x B(t, X)`.
//!
//! The production pusher is a symmetric Boris scheme: half kick by `E(x_n)`,
//! magnetic rotation over `dt/2`, drift, rotation over `dt/2`, half kick by
//! `E(x_{n+1})`. The field at `x_{n+1}` is cached and reused as the next
//! step's first half kick, so there is one field solve per step. The scheme
//! is time reversible and the magnetic rotations preserve `|v|` exactly.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, DiagnosticsSeries, DiagnosticsSettings};
use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::fields::{
    deposit_cic, eval_e_direct, eval_e_periodic, interpolate_cic, AnalyticElectric, ElectricModel, FieldModel,
};
use crate::vec3::Vec3;

/// One recorded point along a probe characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSample {
    pub s: f64,
    pub x: Vec3,
    pub v: Vec3,
    pub abs_e: f64,
    /// Trapezoidal `int_0^s |E| ds` up to this sample.
    pub accum_abs_e: f64,
}

/// A tracer characteristic. Probes feel the field of the ensemble but do not
/// contribute to it.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTrajectory {
    pub samples: Vec<ProbeSample>,
    pub accumulated_abs_e: f64,
    x: Vec3,
    v: Vec3,
    e: Vec3,
}

impl ProbeTrajectory {
    pub fn position(&self) -> Vec3 {
        self.x
    }

    pub fn velocity(&self) -> Vec3 {
        self.v
    }

    /// `CSV` with header `s,x1,x2,x3,v1,v2,v3,absE,accumAbsE`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "s,x1,x2,x3,v1,v2,v3,absE,accumAbsE")?;
        for p in &self.samples {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                p.s, p.x[0], p.x[1], p.x[2], p.v[0], p.v[1], p.v[2], p.abs_e, p.accum_abs_e
            )?;
        }
        Ok(())
    }
}

/// Integration scheme used by [`advance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Boris,
    Rk4,
}

/// Which particles get dedicated probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePolicy {
    /// Probes at the particles with the largest `|E(0, x)|`.
    pub top_field: usize,
    /// Additional probes at uniformly drawn particles.
    pub random: usize,
    pub seed: u64,
}

impl Default for ProbePolicy {
    fn default() -> Self {
        Self { top_field: 64, random: 64, seed: 0x5eed }
    }
}

/// Positions and velocities of every particle over the last steps, used by
/// the partition and sandwich checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryWindow {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<Vec3>>,
    pub velocities: Vec<Vec<Vec3>>,
    pub abs_e: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    capacity: usize,
}

impl TrajectoryWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(2), ..Default::default() }
    }

    fn push(&mut self, state: &SimState) {
        if self.weights.is_empty() {
            self.weights = state.ensemble.weights().to_vec();
        }
        if self.times.len() == self.capacity {
            self.times.remove(0);
            self.positions.remove(0);
            self.velocities.remove(0);
            self.abs_e.remove(0);
        }
        self.times.push(state.t);
        self.positions.push(state.ensemble.positions().to_vec());
        self.velocities.push(state.ensemble.velocities().to_vec());
        self.abs_e.push(state.e_particles.iter().map(|e| e.norm()).collect());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn particles(&self) -> usize {
        self.weights.len()
    }
}

/// Time, ensemble, probes, and the cached field at the current positions.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub ensemble: ParticleEnsemble,
    pub probes: Vec<ProbeTrajectory>,
    pub fields: FieldModel,
    e_particles: Vec<Vec3>,
    abs_e_accum: Vec<f64>,
}

impl SimState {
    /// Builds the state at `t = 0` and evaluates the initial field. Probes
    /// start at the given phase points.
    pub fn new(ensemble: ParticleEnsemble, fields: FieldModel, probe_starts: &[(Vec3, Vec3)]) -> Result<Self> {
        fields.validate()?;
        if ensemble.domain() != fields.domain() {
            return Err(Error::Domain(format!(
                "ensemble domain {:?} does not match the electric solver domain {:?}",
                ensemble.domain(),
                fields.domain()
            )));
        }
        let probe_x: Vec<Vec3> = probe_starts.iter().map(|p| ensemble.domain().wrap(p.0)).collect();
        let (e_particles, e_probes) = electric_field(&fields.electric, &ensemble, &probe_x)?;
        let probes = probe_starts
            .iter()
            .zip(probe_x)
            .zip(e_probes)
            .map(|((start, x), e)| ProbeTrajectory {
                samples: vec![ProbeSample { s: 0.0, x, v: start.1, abs_e: e.norm(), accum_abs_e: 0.0 }],
                accumulated_abs_e: 0.0,
                x,
                v: start.1,
                e,
            })
            .collect();
        let n = ensemble.len();
        Ok(Self { t: 0.0, ensemble, probes, fields, e_particles, abs_e_accum: vec![0.0; n] })
    }

    /// Like [`SimState::new`], seeding probes at particles chosen by `policy`.
    pub fn with_probe_policy(ensemble: ParticleEnsemble, fields: FieldModel, policy: ProbePolicy) -> Result<Self> {
        let bare = Self::new(ensemble, fields, &[])?;
        let idx = select_probe_particles(&bare.e_particles, policy);
        let starts: Vec<(Vec3, Vec3)> = idx
            .iter()
            .map(|i| (bare.ensemble.positions()[*i], bare.ensemble.velocities()[*i]))
            .collect();
        Self::new(bare.ensemble, fields, &starts)
    }

    /// Field at the current particle positions.
    pub fn particle_field(&self) -> &[Vec3] {
        &self.e_particles
    }

    /// Per-particle trapezoidal `int_0^t |E(s, X_i(s))| ds`.
    pub fn particle_abs_e_integrals(&self) -> &[f64] {
        &self.abs_e_accum
    }

    /// `max` over probes and particles of `int_0^t |E| ds`, the running
    /// estimate of `Q(t, t)` over every tracked characteristic.
    pub fn q_tt_estimate(&self) -> f64 {
        let probe_max = self.probes.iter().map(|p| p.accumulated_abs_e).fold(0.0, f64::max);
        self.abs_e_accum.iter().copied().fold(probe_max, f64::max)
    }
}

/// Indices of the `top_field` particles with the largest `|E|` (ties by
/// index) followed by `random` distinct others.
pub fn select_probe_particles(e: &[Vec3], policy: ProbePolicy) -> Vec<usize> {
    let n = e.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| e[*b].norm().total_cmp(&e[*a].norm()).then(a.cmp(b)));
    let top = policy.top_field.min(n);
    let mut chosen: Vec<usize> = order[..top].to_vec();
    let rest: Vec<usize> = order[top..].to_vec();
    let k = policy.random.min(rest.len());
    if k > 0 {
        let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
        chosen.extend(sample(&mut rng, rest.len(), k).into_iter().map(|j| rest[j]));
    }
    chosen
}

/// Field at every particle and at the extra `targets`, in that order.
fn electric_field(
    model: &ElectricModel,
    ensemble: &ParticleEnsemble,
    targets: &[Vec3],
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let n = ensemble.len();
    let mut all = match *model {
        ElectricModel::Direct { softening } => {
            let mut pts = ensemble.positions().to_vec();
            pts.extend_from_slice(targets);
            eval_e_direct(ensemble, &pts, softening)?
        }
        ElectricModel::PeriodicFft { cells, side } => {
            let rho = deposit_cic(ensemble, cells, side / cells as f64, Vec3::ZERO)?;
            let grid = eval_e_periodic(&rho)?;
            ensemble
                .positions()
                .iter()
                .chain(targets)
                .map(|x| interpolate_cic(&grid, *x))
                .collect()
        }
        ElectricModel::Analytic(a) => ensemble.positions().iter().chain(targets).map(|x| a.eval(*x)).collect(),
    };
    if all.iter().any(|e| !e.is_finite()) {
        return Err(Error::NonFinite("electric field".into()));
    }
    let probes = all.split_off(n);
    Ok((all, probes))
}

/// Rotation of `v` under `v' = v x B` over `dt` by the Boris tangent construction.
#[inline]
pub fn boris_rotate(v: Vec3, b: Vec3, dt: f64) -> Vec3 {
    let t = b * (0.5 * dt);
    let s = t * (2.0 / (1.0 + t.norm_sq()));
    let vp = v + v.cross(t);
    v + vp.cross(s)
}

fn check_guardrail(fields: &FieldModel, dt: f64) -> Result<()> {
    if dt == 0.0 || !dt.is_finite() {
        return Err(invalid(format!("time step must be nonzero and finite, got {dt}")));
    }
    let b_inf = fields.b_inf();
    let product = dt.abs() * b_inf;
    if product >= 1.0 {
        return Err(Error::Guardrail { dt, b_inf, product });
    }
    Ok(())
}

/// First part of a Boris step: half kick, rotation, drift, rotation.
#[inline]
fn boris_pre(fields: &FieldModel, t: f64, dt: f64, x: Vec3, v: Vec3, e: Vec3) -> (Vec3, Vec3) {
    let half = 0.5 * dt;
    let mut v = v + e * half;
    v = boris_rotate(v, fields.magnetic.value(t + 0.25 * dt, x), half);
    let x_new = fields.domain().wrap(x + v * dt);
    v = boris_rotate(v, fields.magnetic.value(t + 0.75 * dt, x_new), half);
    (x_new, v)
}

/// One Boris step of the ensemble and its probes. A negative `dt` runs the
/// scheme backwards in time.
pub fn step_boris(state: &mut SimState, dt: f64) -> Result<()> {
    check_guardrail(&state.fields, dt)?;
    let t = state.t;
    state.fields.check_time(t)?;
    state.fields.check_time(t + dt)?;
    let fields = state.fields;

    let ens = &mut state.ensemble;
    ens.positions
        .par_iter_mut()
        .zip(ens.velocities.par_iter_mut())
        .zip(state.e_particles.par_iter())
        .with_min_len(256)
        .for_each(|((x, v), e)| {
            let (xn, vn) = boris_pre(&fields, t, dt, *x, *v, *e);
            *x = xn;
            *v = vn;
        });
    for p in state.probes.iter_mut() {
        let (xn, vn) = boris_pre(&fields, t, dt, p.x, p.v, p.e);
        p.x = xn;
        p.v = vn;
    }
    finish_step(state, dt, |v, e| v + e * (0.5 * dt))
}

/// Re-evaluates the field at the new positions, applies `closing` (the last
/// half kick for Boris, identity for RK4), and updates the `|E|` integrals.
fn finish_step(state: &mut SimState, dt: f64, closing: impl Fn(Vec3, Vec3) -> Vec3 + Sync) -> Result<()> {
    let probe_x: Vec<Vec3> = state.probes.iter().map(|p| p.x).collect();
    let (e_new, e_probe) = electric_field(&state.fields.electric, &state.ensemble, &probe_x)?;
    let half = 0.5 * dt.abs();
    for (((v, a), e_old), e) in state
        .ensemble
        .velocities
        .iter_mut()
        .zip(state.abs_e_accum.iter_mut())
        .zip(&state.e_particles)
        .zip(&e_new)
    {
        *v = closing(*v, *e);
        *a += half * (e_old.norm() + e.norm());
    }
    state.e_particles = e_new;
    let t_new = state.t + dt;
    for (p, e) in state.probes.iter_mut().zip(e_probe) {
        p.v = closing(p.v, e);
        p.accumulated_abs_e += half * (p.e.norm() + e.norm());
        p.e = e;
        p.samples.push(ProbeSample { s: t_new, x: p.x, v: p.v, abs_e: e.norm(), accum_abs_e: p.accumulated_abs_e });
    }
    state.t = t_new;
    if state.ensemble.velocities.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("velocities".into()));
    }
    Ok(())
}

#[inline]
fn lorentz_rhs(fields: &FieldModel, t: f64, x: Vec3, v: Vec3, e: Vec3) -> (Vec3, Vec3) {
    (v, e + v.cross(fields.magnetic.value(t, x)))
}

/// Classical RK4 on one characteristic. `field` gives `E` at a stage position.
#[inline]
fn rk4_one(fields: &FieldModel, t: f64, dt: f64, x: Vec3, v: Vec3, field: impl Fn(Vec3) -> Vec3) -> (Vec3, Vec3) {
    let h = dt;
    let (k1x, k1v) = lorentz_rhs(fields, t, x, v, field(x));
    let x2 = x + k1x * (0.5 * h);
    let v2 = v + k1v * (0.5 * h);
    let (k2x, k2v) = lorentz_rhs(fields, t + 0.5 * h, x2, v2, field(x2));
    let x3 = x + k2x * (0.5 * h);
    let v3 = v + k2v * (0.5 * h);
    let (k3x, k3v) = lorentz_rhs(fields, t + 0.5 * h, x3, v3, field(x3));
    let x4 = x + k3x * h;
    let v4 = v + k3v * h;
    let (k4x, k4v) = lorentz_rhs(fields, t + h, x4, v4, field(x4));
    let xn = x + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * (h / 6.0);
    let vn = v + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (h / 6.0);
    (xn, vn)
}

/// One RK4 step. Analytic electric fields are evaluated exactly at every
/// stage; self-consistent fields are frozen at the step start.
pub fn step_rk4(state: &mut SimState, dt: f64) -> Result<()> {
    check_guardrail(&state.fields, dt)?;
    let t = state.t;
    state.fields.check_time(t)?;
    state.fields.check_time(t + dt)?;
    let fields = state.fields;
    let analytic = match fields.electric {
        ElectricModel::Analytic(a) => Some(a),
        _ => None,
    };
    let domain = fields.domain();
    let push = |x: Vec3, v: Vec3, e0: Vec3| -> (Vec3, Vec3) {
        let (xn, vn) = match analytic {
            Some(a) => rk4_one(&fields, t, dt, x, v, |y| a.eval(y)),
            None => rk4_one(&fields, t, dt, x, v, |_| e0),
        };
        (domain.wrap(xn), vn)
    };
    let ens = &mut state.ensemble;
    ens.positions
        .par_iter_mut()
        .zip(ens.velocities.par_iter_mut())
        .zip(state.e_particles.par_iter())
        .with_min_len(256)
        .for_each(|((x, v), e)| {
            let (xn, vn) = push(*x, *v, *e);
            *x = xn;
            *v = vn;
        });
    for p in state.probes.iter_mut() {
        let (xn, vn) = push(p.x, p.v, p.e);
        p.x = xn;
        p.v = vn;
    }
    finish_step(state, dt, |v, _| v)
}

/// Result of [`advance`]: the series and, if a step failed, the error that
/// truncated it.
#[derive(Debug)]
pub struct AdvanceOutcome {
    pub series: DiagnosticsSeries,
    pub error: Option<Error>,
    pub window: Option<TrajectoryWindow>,
}

/// Steps the system for `duration`, recording diagnostics every
/// `settings.cadence` steps (and at both ends). A failing step truncates the
/// series, which is still returned.
pub fn advance(state: &mut SimState, duration: f64, dt: f64, settings: &DiagnosticsSettings) -> Result<AdvanceOutcome> {
    settings.validate()?;
    if !(dt > 0.0) {
        return Err(invalid(format!("dt must be positive, got {dt}")));
    }
    if !(duration >= 0.0) {
        return Err(invalid(format!("duration must be nonnegative, got {duration}")));
    }
    let mut series = DiagnosticsSeries::new(settings);
    let mut window = settings.window_steps.map(|w| TrajectoryWindow::new(w + 1));
    if duration == 0.0 {
        return Ok(AdvanceOutcome { series, error: None, window });
    }
    let steps_f = (duration / dt).round();
    if ((steps_f * dt - duration) / duration).abs() > 1e-9 {
        return Err(invalid(format!("duration {duration} is not a multiple of dt {dt}")));
    }
    let steps = steps_f as usize;
    if steps > settings.max_steps {
        return Err(Error::StepBudget { steps, budget: settings.max_steps });
    }
    let t0 = state.t;
    diagnostics::record(state, settings, &mut series)?;
    if let Some(w) = window.as_mut() {
        w.push(state);
    }
    for n in 1..=steps {
        let res = match settings.scheme {
            Scheme::Boris => step_boris(state, dt),
            Scheme::Rk4 => step_rk4(state, dt),
        };
        if let Err(e) = res {
            series.truncated = Some(e.to_string());
            return Ok(AdvanceOutcome { series, error: Some(e), window });
        }
        // pin the clock to the grid to avoid drift from repeated addition
        state.t = t0 + n as f64 * dt;
        for p in state.probes.iter_mut() {
            if let Some(s) = p.samples.last_mut() {
                s.s = state.t;
            }
        }
        if let Some(w) = window.as_mut() {
            w.push(state);
        }
        if n % settings.cadence == 0 || n == steps {
            diagnostics::record(state, settings, &mut series)?;
        }
    }
    Ok(AdvanceOutcome { series, error: None, window })
}

/// Determinant of the finite-difference Jacobian of the time-`t` flow map
/// at `(x, v)`, for prescribed (non-interacting) fields. The flow is
/// integrated by RK4 with steps of at most `1e-3`.
pub fn flow_jacobian(fields: &FieldModel, x: Vec3, v: Vec3, t: f64, dt_fd: f64) -> Result<f64> {
    let ElectricModel::Analytic(e_model) = fields.electric else {
        return Err(invalid("flow_jacobian needs a prescribed electric field, not a self-consistent run"));
    };
    if !(dt_fd > 0.0) {
        return Err(invalid("finite-difference step must be positive"));
    }
    if t == 0.0 {
        return Ok(1.0);
    }
    fields.check_time(t)?;
    let flow = |y: [f64; 6]| -> [f64; 6] { flow_map(fields, e_model, y, t) };
    let base = [x[0], x[1], x[2], v[0], v[1], v[2]];
    let mut jac = nalgebra::Matrix6::<f64>::zeros();
    for col in 0..6 {
        let mut plus = base;
        let mut minus = base;
        plus[col] += dt_fd;
        minus[col] -= dt_fd;
        let fp = flow(plus);
        let fm = flow(minus);
        for row in 0..6 {
            jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * dt_fd);
        }
    }
    Ok(jac.determinant())
}

fn flow_map(fields: &FieldModel, e: AnalyticElectric, y: [f64; 6], t: f64) -> [f64; 6] {
    let steps = (t.abs() / 1e-3).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut x = Vec3::new(y[0], y[1], y[2]);
    let mut v = Vec3::new(y[3], y[4], y[5]);
    for i in 0..steps {
        let (xn, vn) = rk4_one(fields, i as f64 * h, h, x, v, |p| e.eval(p));
        x = xn;
        v = vn;
    }
    [x[0], x[1], x[2], v[0], v[1], v[2]]
}
