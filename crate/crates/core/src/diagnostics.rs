//! Functionals of a run: moments, energy, density norms, `Q(t, delta)`,
//! `T_B`, and the per-record series.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::fields::{
    deposit_cic, deposit_cic_auto, eval_e_periodic, potential_energy_direct, AnalyticElectric, DensityGrid,
    ElectricModel, GridSpec,
};
use crate::integrator::{ProbeTrajectory, Scheme, SimState};

/// Default `a` in the defining equation of `T_B`.
pub const DEFAULT_TB_A: f64 = 1.0 / 1024.0;

/// What [`crate::integrator::advance`] records and how often.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsSettings {
    /// Record every `cadence` steps (the first and last step are always recorded).
    pub cadence: usize,
    pub k_list: Vec<f64>,
    pub p_list: Vec<f64>,
    pub delta_list: Vec<f64>,
    pub grid: GridSpec,
    pub scheme: Scheme,
    pub max_steps: usize,
    /// Keep the last `window_steps + 1` full snapshots for partition checks.
    pub window_steps: Option<usize>,
    /// Keep every recorded density grid in the series.
    pub keep_grids: bool,
}

impl Default for DiagnosticsSettings {
    fn default() -> Self {
        Self {
            cadence: 10,
            k_list: vec![2.0, 3.0],
            p_list: vec![1.0, 5.0 / 3.0, 4.0],
            delta_list: vec![0.1],
            grid: GridSpec::default(),
            scheme: Scheme::Boris,
            max_steps: 1_000_000,
            window_steps: None,
            keep_grids: false,
        }
    }
}

impl DiagnosticsSettings {
    pub fn validate(&self) -> Result<()> {
        if self.cadence == 0 {
            return Err(invalid("cadence must be at least 1"));
        }
        if self.k_list.iter().any(|k| !(*k >= 0.0) || !k.is_finite()) {
            return Err(invalid("moment orders must be finite and nonnegative"));
        }
        if self.p_list.iter().any(|p| !(*p >= 1.0) || !p.is_finite()) {
            return Err(invalid("density norm exponents must be finite and >= 1"));
        }
        if self.delta_list.iter().any(|d| !(*d > 0.0)) {
            return Err(invalid("window lengths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub k: f64,
    pub value: f64,
    /// Running sup over recorded times.
    pub sup: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormEntry {
    pub p: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEntry {
    pub delta: f64,
    /// Absent while `delta > t`.
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub t: f64,
    pub moments: Vec<MomentEntry>,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    pub rho_norms: Vec<NormEntry>,
    pub rho_max: f64,
    pub grid_h: f64,
    pub q_window: Vec<QEntry>,
    /// `max` over probes and particles of `int_0^t |E| ds`.
    pub q_tt: f64,
    /// `sup_{s <= t} q_tt`.
    pub n_t: f64,
    pub probe_count: usize,
    /// `max |E|` over particle positions.
    pub e_max: f64,
    /// `2 * total(0) - M_2(t)`; nonnegative when the energy bound on the second moment holds.
    pub m2_margin: f64,
}

impl Record {
    pub fn moment(&self, k: f64) -> Option<&MomentEntry> {
        self.moments.iter().find(|m| (m.k - k).abs() <= 1e-12 * k.max(1.0))
    }

    pub fn rho_norm(&self, p: f64) -> Option<f64> {
        self.rho_norms.iter().find(|n| (n.p - p).abs() <= 1e-12 * p).map(|n| n.value)
    }
}

/// Time-ordered diagnostics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSeries {
    pub k_list: Vec<f64>,
    pub p_list: Vec<f64>,
    pub delta_list: Vec<f64>,
    pub records: Vec<Record>,
    /// Set when a failing step cut the run short.
    pub truncated: Option<String>,
    #[serde(skip)]
    pub grids: Vec<(f64, DensityGrid)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
}

/// `sum_i w_i |v_i|^k`.
pub fn moment_k(ensemble: &ParticleEnsemble, k: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return Err(invalid(format!("moment order must be >= 0, got {k}")));
    }
    Ok(ensemble
        .velocities()
        .iter()
        .zip(ensemble.weights())
        .map(|(v, w)| w * v.norm().powf(k))
        .sum())
}

/// Kinetic, potential, and total energy. Free-space direct runs use the
/// softened pair sum; periodic runs use `1/2 int |E|^2` on the mesh;
/// prescribed fields use the external potential `sum_i w_i phi(x_i)`.
pub fn total_energy(ensemble: &ParticleEnsemble, electric: &ElectricModel) -> Result<Energy> {
    let kinetic = 0.5
        * ensemble
            .velocities()
            .iter()
            .zip(ensemble.weights())
            .map(|(v, w)| w * v.norm_sq())
            .sum::<f64>();
    let potential = match *electric {
        ElectricModel::Direct { softening } => potential_energy_direct(ensemble, softening)?,
        ElectricModel::PeriodicFft { cells, side } => {
            let rho = deposit_cic(ensemble, cells, side / cells as f64, crate::vec3::Vec3::ZERO)?;
            let e = eval_e_periodic(&rho)?;
            0.5 * e.values.iter().map(|v| v.norm_sq()).sum::<f64>() * rho.cell_volume()
        }
        ElectricModel::Analytic(a) => {
            let phi = |x: crate::vec3::Vec3| match a {
                AnalyticElectric::Zero => 0.0,
                AnalyticElectric::Uniform { e } => -e.dot(x),
                AnalyticElectric::SineX1 { amplitude, wavenumber } => amplitude / wavenumber * (wavenumber * x[0]).cos(),
            };
            ensemble.positions().iter().zip(ensemble.weights()).map(|(x, w)| w * phi(*x)).sum()
        }
    };
    Ok(Energy { kinetic, potential, total: kinetic + potential })
}

/// `(sum |value|^p h^3)^(1/p)`, or the max cell value for `p = inf`.
pub fn lp_norm(grid: &DensityGrid, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(invalid(format!("p must be >= 1, got {p}")));
    }
    let max = grid.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if p.is_infinite() {
        return Ok(max);
    }
    if max == 0.0 {
        return Ok(0.0);
    }
    // scaled by the max so large p cannot overflow
    let s: f64 = grid.values.iter().map(|v| (v.abs() / max).powf(p)).sum();
    Ok(max * (s * grid.cell_volume()).powf(1.0 / p))
}

/// Trapezoidal `int_a^b |E|` along one probe, with `|E|` linearly
/// interpolated at window ends that fall between samples. Exactly additive
/// over adjacent windows up to rounding.
pub fn probe_window_integral(probe: &ProbeTrajectory, a: f64, b: f64) -> f64 {
    let mut total = 0.0;
    for w in probe.samples.windows(2) {
        let (s0, s1) = (w[0].s, w[1].s);
        let lo = s0.max(a);
        let hi = s1.min(b);
        if hi <= lo {
            continue;
        }
        let at = |s: f64| {
            let f = (s - s0) / (s1 - s0);
            w[0].abs_e + f * (w[1].abs_e - w[0].abs_e)
        };
        total += 0.5 * (hi - lo) * (at(lo) + at(hi));
    }
    total
}

/// Estimate of `Q(t, delta)` over a finite probe family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QEstimate {
    pub value: f64,
    pub probe_count: usize,
}

/// `max` over probes of `int_{t - delta}^t |E(s, X(s))| ds`.
pub fn compute_q(probes: &[ProbeTrajectory], t: f64, delta: f64) -> Result<QEstimate> {
    let tol = 1e-9 * t.abs().max(1.0);
    if !(delta > 0.0) || delta > t + tol {
        return Err(invalid(format!("window length must lie in (0, t]: delta = {delta}, t = {t}")));
    }
    let a = (t - delta).max(0.0);
    let mut value: f64 = 0.0;
    for (i, p) in probes.iter().enumerate() {
        let (first, last) = match (p.samples.first(), p.samples.last()) {
            (Some(f), Some(l)) => (f.s, l.s),
            _ => return Err(Error::Window(format!("probe {i} has no samples"))),
        };
        if first > a + tol || last < t - tol {
            return Err(Error::Window(format!("probe {i} covers [{first}, {last}], not [{a}, {t}]")));
        }
        value = value.max(probe_window_integral(p, a, t));
    }
    Ok(QEstimate { value, probe_count: probes.len() })
}

/// The `T` with `B_inf T exp(B_inf T) = a`. Solves for `u = B_inf T` by
/// bisection on `[0, a]` to full precision, then divides by `B_inf`.
pub fn compute_tb(b_inf: f64, a: f64) -> Result<f64> {
    if !(b_inf > 0.0) || !b_inf.is_finite() || !(a > 0.0) || !a.is_finite() {
        return Err(invalid(format!("need B_inf > 0 and a > 0, got B_inf = {b_inf}, a = {a}")));
    }
    // u e^u >= u, so the root lies in [0, a]
    let (mut lo, mut hi) = (0.0f64, a);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid * mid.exp() < a {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u = if (lo * lo.exp() - a).abs() <= (hi * hi.exp() - a).abs() { lo } else { hi };
    Ok(u / b_inf)
}

/// `max` over grids and `p` of `|rho|_p / p`.
pub fn miot_ratio(grids: &[DensityGrid], p_list: &[f64]) -> Result<f64> {
    if grids.is_empty() || p_list.is_empty() {
        return Err(invalid("miot_ratio needs at least one grid and one exponent"));
    }
    let mut best: f64 = 0.0;
    for g in grids {
        for p in p_list {
            best = best.max(lp_norm(g, *p)? / p);
        }
    }
    Ok(best)
}

/// Appends one record built from the current state.
pub(crate) fn record(state: &SimState, settings: &DiagnosticsSettings, series: &mut DiagnosticsSeries) -> Result<()> {
    let ens = &state.ensemble;
    let prev = series.records.last();
    let mut moments = Vec::with_capacity(settings.k_list.len());
    for (i, k) in settings.k_list.iter().enumerate() {
        let value = moment_k(ens, *k)?;
        let sup = prev.map_or(value, |r| r.moments[i].sup.max(value));
        moments.push(MomentEntry { k: *k, value, sup });
    }
    let energy = total_energy(ens, &state.fields.electric)?;
    let grid = deposit_cic_auto(ens, settings.grid)?;
    let mut rho_norms = Vec::with_capacity(settings.p_list.len());
    for p in &settings.p_list {
        rho_norms.push(NormEntry { p: *p, value: lp_norm(&grid, *p)? });
    }
    let rho_max = lp_norm(&grid, f64::INFINITY)?;
    let q_window = settings
        .delta_list
        .iter()
        .map(|d| {
            let value = if *d <= state.t + 1e-9 * state.t.max(1.0) && !state.probes.is_empty() {
                Some(compute_q(&state.probes, state.t, *d)?.value)
            } else {
                None
            };
            Ok(QEntry { delta: *d, value })
        })
        .collect::<Result<Vec<_>>>()?;
    let q_tt = state.q_tt_estimate();
    let n_t = prev.map_or(q_tt, |r| r.n_t.max(q_tt));
    let e_max = state.particle_field().iter().fold(0.0f64, |m, e| m.max(e.norm()));
    let total0 = series.records.first().map_or(energy.total, |r| r.total);
    let m2 = moment_k(ens, 2.0)?;
    series.records.push(Record {
        t: state.t,
        moments,
        kinetic: energy.kinetic,
        potential: energy.potential,
        total: energy.total,
        rho_norms,
        rho_max,
        grid_h: grid.h,
        q_window,
        q_tt,
        n_t,
        probe_count: state.probes.len(),
        e_max,
        m2_margin: 2.0 * total0 - m2,
    });
    if settings.keep_grids {
        series.grids.push((state.t, grid));
    }
    Ok(())
}

fn label(x: f64) -> String {
    format!("{x}")
}

impl DiagnosticsSeries {
    pub fn new(settings: &DiagnosticsSettings) -> Self {
        Self {
            k_list: settings.k_list.clone(),
            p_list: settings.p_list.clone(),
            delta_list: settings.delta_list.clone(),
            records: Vec::new(),
            truncated: None,
            grids: Vec::new(),
        }
    }

    pub fn at(&self, t: f64) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| (r.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .ok_or(Error::NotRecorded(t))
    }

    /// Column names in CSV order: `t`, then `M{k}` and `M{k}_sup` per
    /// moment order, `kinetic,potential,total`, `rho_L{p}` per exponent,
    /// `rho_max,grid_h`, `Q_{delta}` per window, and
    /// `Q_tt,N_t,probes,E_max,M2_margin`.
    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = vec!["t".to_string()];
        for k in &self.k_list {
            cols.push(format!("M{}", label(*k)));
            cols.push(format!("M{}_sup", label(*k)));
        }
        cols.extend(["kinetic", "potential", "total"].map(String::from));
        for p in &self.p_list {
            cols.push(format!("rho_L{}", label(*p)));
        }
        cols.extend(["rho_max", "grid_h"].map(String::from));
        for d in &self.delta_list {
            cols.push(format!("Q_{}", label(*d)));
        }
        cols.extend(["Q_tt", "N_t", "probes", "E_max", "M2_margin"].map(String::from));
        cols
    }

    /// One row per record; absent values are empty fields.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.csv_header().join(","))?;
        for r in &self.records {
            let mut row = vec![r.t.to_string()];
            for m in &r.moments {
                row.push(m.value.to_string());
                row.push(m.sup.to_string());
            }
            row.extend([r.kinetic, r.potential, r.total].map(|v| v.to_string()));
            row.extend(r.rho_norms.iter().map(|n| n.value.to_string()));
            row.extend([r.rho_max, r.grid_h].map(|v| v.to_string()));
            row.extend(r.q_window.iter().map(|q| q.value.map_or(String::new(), |v| v.to_string())));
            row.push(r.q_tt.to_string());
            row.push(r.n_t.to_string());
            row.push(r.probe_count.to_string());
            row.push(r.e_max.to_string());
            row.push(r.m2_margin.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| invalid(format!("series json: {e}")))
    }

    /// Named `(t, value)` curves for plotting.
    pub fn curves(&self) -> Vec<(String, Vec<(f64, f64)>)> {
        let mut out: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
        let mut add = |name: String, f: &dyn Fn(&Record) -> Option<f64>| {
            let pts = self.records.iter().filter_map(|r| f(r).map(|v| (r.t, v))).collect();
            out.push((name, pts));
        };
        for (i, k) in self.k_list.iter().enumerate() {
            add(format!("M{}", label(*k)), &|r| Some(r.moments[i].value));
        }
        add("kinetic".into(), &|r| Some(r.kinetic));
        add("potential".into(), &|r| Some(r.potential));
        add("total_energy".into(), &|r| Some(r.total));
        for (i, p) in self.p_list.iter().enumerate() {
            add(format!("rho_L{}", label(*p)), &|r| Some(r.rho_norms[i].value));
        }
        for (i, d) in self.delta_list.iter().enumerate() {
            add(format!("Q_{}", label(*d)), &|r| r.q_window[i].value);
        }
        add("Q_tt".into(), &|r| Some(r.q_tt));
        add("N_t".into(), &|r| Some(r.n_t));
        out
    }

    /// Writes `<name>.tsv` files with header `t\tvalue` into `dir`.
    pub fn write_plots(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, pts) in self.curves() {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{name}.tsv")))?);
            writeln!(f, "t\tvalue")?;
            for (t, v) in pts {
                writeln!(f, "{t}\t{v}")?;
            }
        }
        Ok(())
    }
}

/// Outcome of a pass/fail inequality check. `margin = rhs - lhs` for
/// upper bounds; `pass` iff `margin >= -1e-12 |rhs|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub name: String,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub pass: bool,
    /// `checked`, or why no assertion was made.
    pub verdict: String,
    pub params: BTreeMap<String, f64>,
}

pub const VERDICT_CHECKED: &str = "checked";

impl BoundReport {
    pub fn checked(name: &str, t: f64, lhs: f64, rhs: f64, margin: f64) -> Self {
        let pass = margin >= -1e-12 * rhs.abs();
        Self {
            name: name.into(),
            t,
            lhs,
            rhs,
            margin,
            pass,
            verdict: VERDICT_CHECKED.into(),
            params: BTreeMap::new(),
        }
    }

    /// No assertion made; counts as not failing.
    pub fn skipped(name: &str, t: f64, verdict: &str) -> Self {
        Self {
            name: name.into(),
            t,
            lhs: 0.0,
            rhs: 0.0,
            margin: 0.0,
            pass: true,
            verdict: verdict.into(),
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.into(), value);
        self
    }

    pub fn is_checked(&self) -> bool {
        self.verdict == VERDICT_CHECKED
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Smallest constant making a bound with an unquoted constant hold over the
/// data. Informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpliedConstantReport {
    pub name: String,
    /// `None` when no sample satisfied the form's preconditions.
    pub c_impl: Option<f64>,
    pub samples: usize,
    pub params: BTreeMap<String, f64>,
}

impl ImpliedConstantReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}
