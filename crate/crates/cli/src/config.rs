//! Run configuration: one TOML file, flat key paths, every default in
//! [`RunConfig::default`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vpb_core::diagnostics::DEFAULT_TB_A;
use vpb_core::{
    DiagnosticsSettings, Domain, ElectricModel, FieldModel, InitialDataSpec, MagneticModel, ProbePolicy, Vec3,
};

use crate::CliError;

/// Magnetic field and electric solver; the horizon is the run length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsConfig {
    pub magnetic: MagneticModel,
    pub electric: ElectricModel,
}

/// Settings for the audits run after `run`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Right-hand side `a` of `T B exp(T B) = a`.
    pub tb_a: f64,
    /// Allowed relative drift of the total energy.
    pub energy_tol: f64,
    /// `(k, k0)` pairs for the Hölder moment check at the final time.
    pub holder_pairs: Vec<[f64; 2]>,
    /// Points per axis of the `sup |E|` probe lattice (direct solver only).
    pub e_infinity_lattice: usize,
    /// Half-width of the region scanned when auditing declared field bounds.
    pub field_extent: f64,
    /// Density-norm checks need at least this many particles per occupied
    /// cell; sparser deposits overstate `|rho|_p`.
    pub min_particles_per_cell: f64,
    /// Moment order of the good/bad/ugly partition.
    pub partition_k: f64,
    pub partition_reference: usize,
    pub partition_softening: f64,
    /// Ceiling for `sup_t sup_p |rho|_p / p`; enables the profile audit
    /// (requires `diagnostics.keep_grids`).
    pub miot_ceiling: Option<f64>,
    /// Implied constant of the functional inequality on recorded grids
    /// (requires `diagnostics.keep_grids`; cost grows like cells^2).
    pub functional_inequality: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            tb_a: DEFAULT_TB_A,
            energy_tol: 1e-2,
            holder_pairs: vec![[2.0, 4.0], [3.0, 6.0]],
            e_infinity_lattice: 10,
            field_extent: 4.0,
            min_particles_per_cell: 4.0,
            partition_k: 4.0,
            partition_reference: 0,
            partition_softening: 0.05,
            miot_ceiling: None,
            functional_inequality: false,
        }
    }
}

/// Second branch of a `couple` run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoupleConfig {
    /// Magnetic perturbation size.
    pub eta: f64,
    pub direction: Vec3,
    /// Velocity offset applied to branch B at `t = 0`.
    pub kick: Vec3,
    /// Exponent in `D^(1 - 3/p)`.
    pub p: f64,
}

impl Default for CoupleConfig {
    fn default() -> Self {
        Self { eta: 0.0, direction: Vec3::new(0.0, 0.0, 1.0), kick: Vec3::ZERO, p: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Number of particles.
    pub n: usize,
    pub seed: u64,
    pub dt: f64,
    /// Final time `T`.
    pub t_end: f64,
    /// Optional; must agree with the electric solver when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<Domain>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub initial: InitialDataSpec,
    pub fields: FieldsConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsSettings,
    #[serde(default)]
    pub probes: ProbePolicy,
    #[serde(default)]
    pub audits: AuditConfig,
    #[serde(default)]
    pub couple: CoupleConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 2000,
            seed: 1,
            dt: 0.01,
            t_end: 1.0,
            domain: None,
            out: None,
            threads: None,
            initial: InitialDataSpec::maxwellian(1.0, 1.0, 1.0),
            fields: FieldsConfig {
                magnetic: MagneticModel::constant(Vec3::new(0.0, 0.0, 1.0)),
                electric: ElectricModel::Direct { softening: 0.05 },
            },
            diagnostics: DiagnosticsSettings::default(),
            probes: ProbePolicy::default(),
            audits: AuditConfig::default(),
            couple: CoupleConfig::default(),
        }
    }
}

fn field_err(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn field_model(&self) -> FieldModel {
        FieldModel::new(self.fields.magnetic, self.fields.electric, self.t_end)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.n == 0 {
            return Err(field_err("n", "must be at least 1"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(field_err("dt", format!("must be positive, got {}", self.dt)));
        }
        if !(self.t_end > 0.0) || !self.t_end.is_finite() {
            return Err(field_err("t_end", format!("must be positive, got {}", self.t_end)));
        }
        if self.threads == Some(0) {
            return Err(field_err("threads", "must be at least 1"));
        }
        self.initial.validate().map_err(|e| field_err("initial", e))?;
        self.field_model().validate().map_err(|e| field_err("fields", e))?;
        let derived = self.fields.electric.domain();
        if let Some(d) = self.domain {
            if d != derived {
                return Err(field_err("domain", format!("{d:?} disagrees with the electric solver's {derived:?}")));
            }
        }
        let d = &self.diagnostics;
        for (name, list) in [("diagnostics.k_list", &d.k_list), ("diagnostics.p_list", &d.p_list), ("diagnostics.delta_list", &d.delta_list)] {
            if list.is_empty() {
                return Err(field_err(name, "must be nonempty"));
            }
        }
        d.validate().map_err(|e| field_err("diagnostics", e))?;
        let a = &self.audits;
        if !(a.tb_a > 0.0) {
            return Err(field_err("audits.tb_a", "must be positive"));
        }
        if !(a.energy_tol > 0.0) {
            return Err(field_err("audits.energy_tol", "must be positive"));
        }
        if a.holder_pairs.iter().any(|[k, k0]| !(*k >= 0.0 && k0 > k)) {
            return Err(field_err("audits.holder_pairs", "each pair needs 0 <= k < k0"));
        }
        if !(a.min_particles_per_cell >= 0.0) {
            return Err(field_err("audits.min_particles_per_cell", "must be nonnegative"));
        }
        if a.e_infinity_lattice < 2 {
            return Err(field_err("audits.e_infinity_lattice", "must be at least 2"));
        }
        if !(a.partition_k > 2.0) {
            return Err(field_err("audits.partition_k", "must exceed 2"));
        }
        if a.partition_reference >= self.n {
            return Err(field_err("audits.partition_reference", "must index a particle"));
        }
        if (a.miot_ceiling.is_some() || a.functional_inequality) && !d.keep_grids {
            return Err(field_err("diagnostics.keep_grids", "must be true for grid audits"));
        }
        if !(self.couple.p > 3.0) {
            return Err(field_err("couple.p", "must exceed 3"));
        }
        if !self.couple.eta.is_finite() || self.couple.eta < 0.0 {
            return Err(field_err("couple.eta", "must be finite and nonnegative"));
        }
        Ok(())
    }
}
