//! Inequality checks against measured runs: velocity and moment Grönwall
//! bounds, Hölder and interpolation inequalities, the good/bad/ugly window
//! partition, the sandwich bounds, and implied constants of the `Q` scaling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::diagnostics::{compute_tb, lp_norm, moment_k, BoundReport, DiagnosticsSeries, ImpliedConstantReport, DEFAULT_TB_A};
use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::fields::DensityGrid;
use crate::integrator::{ProbeTrajectory, TrajectoryWindow};

pub const VERDICT_NO_U: &str = "vacuous: no U samples";
pub const VERDICT_HYPOTHESIS: &str = "hypothesis-violated";
pub const VERDICT_DEGENERATE: &str = "degenerate: M_k = 0";
pub const VERDICT_UNBOUNDED_F: &str = "vacuous: f_inf unbounded";

/// `|V(s)| <= (|v_0| + N_T) exp(s B_inf)` at every sample with `s <= T`.
/// The margin is the smallest slack over samples.
pub fn check_velocity_gronwall(probe: &ProbeTrajectory, b_inf: f64, n_t: f64, t_end: f64) -> BoundReport {
    let Some(first) = probe.samples.first() else {
        return BoundReport::skipped("velocity_gronwall", t_end, "vacuous: empty probe");
    };
    let v0 = first.v.norm();
    let tol = 1e-9 * t_end.abs().max(1.0);
    let mut worst: Option<(f64, f64, f64)> = None;
    for s in probe.samples.iter().filter(|s| s.s <= t_end + tol) {
        let lhs = s.v.norm();
        let rhs = (v0 + n_t) * (s.s * b_inf).exp();
        let margin = rhs - lhs;
        if worst.is_none_or(|w| margin < w.2) {
            worst = Some((lhs, rhs, margin));
        }
    }
    let (lhs, rhs, margin) = worst.expect("first sample is always in range");
    BoundReport::checked("velocity_gronwall", t_end, lhs, rhs, margin)
        .with_param("B_inf", b_inf)
        .with_param("N_T", n_t)
        .with_param("v0", v0)
}

/// `M_k(t) <= 2^(k-1) exp(k t B_inf) (M_k(0) + N(t)^k |f|_1)` at every
/// record, using the running sup of `M_k` and the measured `N(t)`.
pub fn check_moment_propagation(
    series: &DiagnosticsSeries,
    k: f64,
    m_k0: f64,
    f_l1: f64,
    b_inf: f64,
) -> Result<Vec<BoundReport>> {
    if !(k >= 1.0) {
        return Err(invalid(format!("moment propagation needs k >= 1, got {k}")));
    }
    series
        .records
        .iter()
        .map(|r| {
            let m = r.moment(k).ok_or_else(|| invalid(format!("series has no moment of order {k}")))?;
            let rhs = 2f64.powf(k - 1.0) * (k * r.t * b_inf).exp() * (m_k0 + r.n_t.powf(k) * f_l1);
            Ok(BoundReport::checked("moment_propagation", r.t, m.sup, rhs, rhs - m.sup)
                .with_param("k", k)
                .with_param("N_t", r.n_t))
        })
        .collect()
}

/// `M_k <= |f|_1^((k0-k)/k0) M_k0^(k/k0)`, with the ensemble mass as `|f|_1`.
pub fn check_holder_moments(ensemble: &ParticleEnsemble, k: f64, k0: f64) -> Result<BoundReport> {
    if !(k >= 0.0 && k0 > k) {
        return Err(invalid(format!("need 0 <= k < k0, got k = {k}, k0 = {k0}")));
    }
    let lhs = moment_k(ensemble, k)?;
    let mass = ensemble.total_mass();
    let rhs = mass.powf((k0 - k) / k0) * moment_k(ensemble, k0)?.powf(k / k0);
    Ok(BoundReport::checked("holder_moments", 0.0, lhs, rhs, rhs - lhs)
        .with_param("k", k)
        .with_param("k0", k0))
}

/// Constant of `|rho|_((k+3)/3) <= C_k f_inf^(k/(k+3)) M_k^(3/(k+3))`.
///
/// Pointwise `rho(x) <= (4 pi / 3) f_inf R^3 + R^(-k) m_k(x)` for every
/// `R > 0`; minimizing over `R` gives
/// `C_k = (1 + 3/k) (k/3)^(3/(k+3)) (4 pi / 3)^(k/(k+3))`, and integrating the
/// `(k+3)/3` power of the pointwise bound gives the norm bound.
pub fn interpolation_constant(k: f64) -> f64 {
    let e = k + 3.0;
    (1.0 + 3.0 / k) * (k / 3.0).powf(3.0 / e) * (4.0 * PI / 3.0).powf(k / e)
}

pub fn check_rho_moment_interpolation(
    grid: &DensityGrid,
    ensemble: &ParticleEnsemble,
    k: f64,
    f_inf: f64,
) -> Result<BoundReport> {
    if !(k > 0.0) || !(f_inf > 0.0) {
        return Err(invalid("interpolation check needs k > 0 and f_inf > 0"));
    }
    let name = "rho_moment_interpolation";
    let m_k = moment_k(ensemble, k)?;
    if m_k == 0.0 {
        return Ok(BoundReport::skipped(name, 0.0, VERDICT_DEGENERATE).with_param("k", k));
    }
    if f_inf.is_infinite() {
        return Ok(BoundReport::skipped(name, 0.0, VERDICT_UNBOUNDED_F).with_param("k", k));
    }
    let p = (k + 3.0) / 3.0;
    let lhs = lp_norm(grid, p)?;
    let c = interpolation_constant(k);
    let rhs = c * f_inf.powf(k / (k + 3.0)) * m_k.powf(3.0 / (k + 3.0));
    Ok(BoundReport::checked(name, 0.0, lhs, rhs, rhs - lhs)
        .with_param("k", k)
        .with_param("C_k", c)
        .with_param("h", grid.h))
}

/// Parameters of the good/bad/ugly split of a time window `[t - delta, t]`
/// around a reference characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSettings {
    pub eps: f64,
    pub l: f64,
    pub k: f64,
    pub delta: f64,
    /// Index of the particle used as the reference characteristic.
    pub reference: usize,
    /// Multiplier in `P = c Q exp(delta B_inf)`.
    pub p_factor: f64,
    /// Softening of the `1/|x - X*|^2` weight.
    pub softening: f64,
}

impl PartitionSettings {
    /// Defaults `eps = eps_0 / 2` with `eps_0 = (k - 2)/(2k)`, `L = 1`, `c = 2^10`.
    pub fn new(k: f64, delta: f64, reference: usize, softening: f64) -> Self {
        Self { eps: (k - 2.0) / (4.0 * k), l: 1.0, k, delta, reference, p_factor: 1024.0, softening }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k > 2.0) {
            return Err(invalid(format!("partition needs k > 2, got {}", self.k)));
        }
        let eps0 = (self.k - 2.0) / (2.0 * self.k);
        if !(self.eps > 0.0 && self.eps < eps0) {
            return Err(invalid(format!("eps = {} must lie in (0, {eps0})", self.eps)));
        }
        if !(self.l > 0.0) || !(self.delta > 0.0) || !(self.softening >= 0.0) || !(self.p_factor > 0.0) {
            return Err(invalid("partition needs L > 0, delta > 0, softening >= 0, and a positive P factor"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbuDecomposition {
    pub t: f64,
    pub p_threshold: f64,
    pub i_total: f64,
    pub i_g: f64,
    pub i_b: f64,
    pub i_u: f64,
    pub n_g: usize,
    pub n_b: usize,
    pub n_u: usize,
    /// Particles with at least one sample in U.
    pub u_particles: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Set {
    G,
    B,
    U,
}

/// Snapshot indices inside `[t - delta, t]`, checking the window is stored.
fn window_slice(window: &TrajectoryWindow, delta: f64) -> Result<std::ops::Range<usize>> {
    if window.len() < 2 {
        return Err(Error::Window("fewer than two stored snapshots".into()));
    }
    let t = *window.times.last().expect("nonempty");
    let start = t - delta;
    let tol = 1e-9 * t.abs().max(1.0);
    if window.times[0] > start + tol {
        return Err(Error::Window(format!(
            "stored window starts at {}, needs {start} for delta = {delta}",
            window.times[0]
        )));
    }
    let first = window.times.iter().position(|s| *s >= start - tol).expect("last time qualifies");
    Ok(first..window.len())
}

/// Trapezoid weights for the nodes in `times`.
fn trapezoid_weights(times: &[f64]) -> Vec<f64> {
    let n = times.len();
    (0..n)
        .map(|j| {
            let left = if j > 0 { times[j] - times[j - 1] } else { 0.0 };
            let right = if j + 1 < n { times[j + 1] - times[j] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

fn classify(settings: &PartitionSettings, p: f64, x: crate::vec3::Vec3, v: crate::vec3::Vec3, xs: crate::vec3::Vec3, vs: crate::vec3::Vec3) -> Set {
    let rel = (v - vs).norm();
    if v.norm().min(rel) < p {
        return Set::G;
    }
    let lambda = if rel == 0.0 {
        f64::INFINITY
    } else {
        settings.l / ((1.0 + v.norm().powf(2.0 + settings.eps)) * rel)
    };
    if (x - xs).norm() <= lambda {
        Set::B
    } else {
        Set::U
    }
}

/// Splits `int_{t-delta}^t sum_i w_i / (|X_i(s) - X*(s)|^2 + eps_soft^2) ds`
/// over samples classified as G (slow: `min(|V|, |V - V*|) < P`), B (within
/// `Lambda = L (1 + |V|^(2+eps))^(-1) |V - V*|^(-1)` of the reference), and
/// U (the rest), with `P = c Q exp(delta B_inf)`. The reference particle
/// itself is excluded.
pub fn partition_gbu(
    window: &TrajectoryWindow,
    settings: &PartitionSettings,
    q_measured: f64,
    b_inf: f64,
) -> Result<GbuDecomposition> {
    settings.validate()?;
    if settings.reference >= window.particles() {
        return Err(invalid(format!("reference index {} out of range", settings.reference)));
    }
    let range = window_slice(window, settings.delta)?;
    let times = &window.times[range.clone()];
    let tau = trapezoid_weights(times);
    let p = settings.p_factor * q_measured * (settings.delta * b_inf).exp();
    let eps2 = settings.softening * settings.softening;
    let r = settings.reference;
    let mut d = GbuDecomposition {
        t: *times.last().expect("nonempty"),
        p_threshold: p,
        i_total: 0.0,
        i_g: 0.0,
        i_b: 0.0,
        i_u: 0.0,
        n_g: 0,
        n_b: 0,
        n_u: 0,
        u_particles: Vec::new(),
    };
    let mut in_u = vec![false; window.particles()];
    for (j, snap) in range.enumerate() {
        let xs = window.positions[snap][r];
        let vs = window.velocities[snap][r];
        for i in 0..window.particles() {
            if i == r {
                continue;
            }
            let x = window.positions[snap][i];
            let v = window.velocities[snap][i];
            let val = tau[j] * window.weights[i] / ((x - xs).norm_sq() + eps2);
            d.i_total += val;
            match classify(settings, p, x, v, xs, vs) {
                Set::G => {
                    d.i_g += val;
                    d.n_g += 1;
                }
                Set::B => {
                    d.i_b += val;
                    d.n_b += 1;
                }
                Set::U => {
                    d.i_u += val;
                    d.n_u += 1;
                    in_u[i] = true;
                }
            }
        }
    }
    d.u_particles = (0..in_u.len()).filter(|i| in_u[*i]).collect();
    Ok(d)
}

/// `max_i int_{t-delta}^t |E(s, X_i(s))| ds` over every stored particle,
/// by the trapezoid rule on the stored samples.
pub fn window_q(window: &TrajectoryWindow, delta: f64) -> Result<f64> {
    let range = window_slice(window, delta)?;
    let tau = trapezoid_weights(&window.times[range.clone()]);
    let mut best: f64 = 0.0;
    for i in 0..window.particles() {
        let q: f64 = range.clone().zip(&tau).map(|(snap, w)| w * window.abs_e[snap][i]).sum();
        best = best.max(q);
    }
    Ok(best)
}

/// Largest two-sided ratio between `a` and `b`; `1` when both vanish.
fn spread(a: f64, b: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        1.0
    } else if a == 0.0 || b == 0.0 {
        f64::INFINITY
    } else {
        (a / b).max(b / a)
    }
}

/// Two-sided factor-2 control of `|V(s)|` and `|V(s) - V*(s)|` by their
/// values at the window end, for every particle with a U sample. Gated by
/// `delta B_inf exp(delta B_inf) <= a` (default `2^-10`).
pub fn check_sandwich(
    window: &TrajectoryWindow,
    settings: &PartitionSettings,
    q_measured: f64,
    b_inf: f64,
    a: f64,
) -> Result<BoundReport> {
    let name = "sandwich";
    let db = settings.delta * b_inf;
    let t_end = window.times.last().copied().unwrap_or(0.0);
    if db * db.exp() > a {
        return Ok(BoundReport::skipped(name, t_end, VERDICT_HYPOTHESIS)
            .with_param("delta", settings.delta)
            .with_param("B_inf", b_inf));
    }
    let d = partition_gbu(window, settings, q_measured, b_inf)?;
    if d.u_particles.is_empty() {
        return Ok(BoundReport::skipped(name, t_end, VERDICT_NO_U).with_param("delta", settings.delta));
    }
    let range = window_slice(window, settings.delta)?;
    let last = range.end - 1;
    let r = settings.reference;
    let mut worst: f64 = 1.0;
    for &i in &d.u_particles {
        let v = window.velocities[last][i];
        let rel = v - window.velocities[last][r];
        for snap in range.clone() {
            let vs = window.velocities[snap][i];
            let rels = vs - window.velocities[snap][r];
            worst = worst.max(spread(vs.norm(), v.norm())).max(spread(rels.norm(), rel.norm()));
        }
    }
    Ok(BoundReport::checked(name, t_end, worst, 2.0, 2.0 - worst)
        .with_param("delta", settings.delta)
        .with_param("B_inf", b_inf)
        .with_param("u_particles", d.u_particles.len() as f64)
        .with_param("u_samples", d.n_u as f64))
}

/// Convenience wrapper with the default `a = 2^-10`.
pub fn check_sandwich_default(
    window: &TrajectoryWindow,
    settings: &PartitionSettings,
    q_measured: f64,
    b_inf: f64,
) -> Result<BoundReport> {
    check_sandwich(window, settings, q_measured, b_inf, DEFAULT_TB_A)
}

/// Implied constants of `Q(t,t) <= C (t^(1/2) + t)(1 + M_(2+eps))^(4/7)` and,
/// for `t <= T <= T_B`, `Q(t,t) <= C exp(t B_inf)^(2/5) (t^(1/2) + t^(7/5))`.
pub fn check_q_scaling(
    series: &DiagnosticsSeries,
    eps: f64,
    b_inf: f64,
    t_end: f64,
) -> Result<(ImpliedConstantReport, ImpliedConstantReport)> {
    let k = 2.0 + eps;
    let mut c1: Option<f64> = None;
    let mut c2: Option<f64> = None;
    let mut n1 = 0;
    let mut n2 = 0;
    let t_b = if b_inf > 0.0 { compute_tb(b_inf, DEFAULT_TB_A)? } else { f64::INFINITY };
    let within = t_end <= t_b;
    for r in series.records.iter().filter(|r| r.t > 0.0 && r.t <= t_end * (1.0 + 1e-12)) {
        let m = r
            .moment(k)
            .ok_or_else(|| invalid(format!("series has no moment of order {k}")))?;
        let c = r.q_tt / ((r.t.sqrt() + r.t) * (1.0 + m.sup).powf(4.0 / 7.0));
        c1 = Some(c1.map_or(c, |x| x.max(c)));
        n1 += 1;
        if within {
            let c = r.q_tt / ((r.t * b_inf).exp().powf(0.4) * (r.t.sqrt() + r.t.powf(1.4)));
            c2 = Some(c2.map_or(c, |x| x.max(c)));
            n2 += 1;
        }
    }
    let mut a = ImpliedConstantReport { name: "q_scaling_moment".into(), c_impl: c1, samples: n1, params: Default::default() };
    a.params.insert("eps".into(), eps);
    let mut b = ImpliedConstantReport { name: "q_scaling_tb".into(), c_impl: c2, samples: n2, params: Default::default() };
    b.params.insert("B_inf".into(), b_inf);
    b.params.insert("T".into(), t_end);
    if t_b.is_finite() {
        b.params.insert("T_B".into(), t_b);
    }
    Ok((a, b))
}

/// `int_[-1/2,1/2]^3 |y|^-2 dy`: the cube splits into six pyramids over its
/// faces, each contributing `S/2` with `S = int_[-1,1]^2 du dw / (1 + u^2 + w^2)`.
fn unit_cube_inverse_square() -> f64 {
    let n = 400;
    let h = 2.0 / n as f64;
    let mut s = 0.0;
    // composite Simpson in both directions; the integrand is smooth
    let wt = |i: usize| if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
    for i in 0..=n {
        let u = -1.0 + i as f64 * h;
        for j in 0..=n {
            let w = -1.0 + j as f64 * h;
            s += wt(i) * wt(j) / (1.0 + u * u + w * w);
        }
    }
    3.0 * s * h * h / 9.0
}

/// `|kappa * |x|^-2|_inf / (|kappa|_(5/3)^(5/9) |kappa|_inf^(4/9))` with the
/// convolution evaluated at cell centres (midpoint rule off the diagonal,
/// exact cube integral on it). The ratio is invariant under scaling of
/// amplitude and length, so it is a pure shape functional.
pub fn functional_inequality_ratio(grid: &DensityGrid) -> Result<f64> {
    let m = grid.m;
    let h = grid.h;
    let vol = grid.cell_volume();
    let self_cell = unit_cube_inverse_square() * h;
    let mut sup: f64 = 0.0;
    let support: Vec<usize> = (0..grid.values.len()).filter(|i| grid.values[*i] != 0.0).collect();
    let coords = |idx: usize| [(idx % m) as f64, ((idx / m) % m) as f64, (idx / (m * m)) as f64];
    for target in 0..grid.values.len() {
        let ct = coords(target);
        let mut acc = 0.0;
        for &src in &support {
            if src == target {
                acc += grid.values[src] * self_cell;
                continue;
            }
            let cs = coords(src);
            let r2 = ((ct[0] - cs[0]).powi(2) + (ct[1] - cs[1]).powi(2) + (ct[2] - cs[2]).powi(2)) * h * h;
            acc += grid.values[src] * vol / r2;
        }
        sup = sup.max(acc.abs());
    }
    let l53 = lp_norm(grid, 5.0 / 3.0)?;
    let linf = lp_norm(grid, f64::INFINITY)?;
    if l53 == 0.0 {
        return Ok(0.0);
    }
    Ok(sup / (l53.powf(5.0 / 9.0) * linf.powf(4.0 / 9.0)))
}

/// Implied constant of the functional inequality over a family of densities.
pub fn check_functional_scaling(grids: &[DensityGrid]) -> Result<ImpliedConstantReport> {
    let mut c: Option<f64> = None;
    for g in grids {
        let r = functional_inequality_ratio(g)?;
        c = Some(c.map_or(r, |x| x.max(r)));
    }
    Ok(ImpliedConstantReport {
        name: "functional_inequality".into(),
        c_impl: c,
        samples: grids.len(),
        params: Default::default(),
    })
}
