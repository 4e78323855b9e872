//! Electric-field evaluation from the particle cloud and external magnetic
//! field models.

mod direct;
mod grid;
mod periodic;

pub use direct::{eval_e_direct, potential_energy_direct, COULOMB};
pub use grid::{deposit_cic, deposit_cic_auto, DensityGrid, GridSpec, VectorGrid};
pub use periodic::{eval_e_periodic, interpolate_cic};

use serde::{Deserialize, Serialize};

use crate::ensemble::Domain;
use crate::error::{invalid, Error, Result};
use crate::vec3::Vec3;

/// Time profile of a spatially uniform magnetic field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "waveform", rename_all = "snake_case")]
pub enum Waveform {
    Constant { b: Vec3 },
    /// `B(t) = amplitude * sin(frequency * t)`.
    Sinusoid { amplitude: Vec3, frequency: f64 },
}

/// Closed-form spatially varying fields with known Lipschitz constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LipschitzFamily {
    /// `B(x) = (0, 0, base + amplitude * tanh(x1 / width))`, divergence free.
    Shear { base: f64, amplitude: f64, width: f64 },
}

impl LipschitzFamily {
    fn eval(&self, _t: f64, x: Vec3) -> Vec3 {
        match *self {
            LipschitzFamily::Shear { base, amplitude, width } => {
                Vec3::new(0.0, 0.0, base + amplitude * (x[0] / width).tanh())
            }
        }
    }

    /// Exact `sup |B|` and `sup |grad B|` of the family.
    pub fn exact_bounds(&self) -> (f64, f64) {
        match *self {
            LipschitzFamily::Shear { base, amplitude, width } => {
                (base.abs() + amplitude.abs(), amplitude.abs() / width.abs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MagneticModel {
    Uniform(Waveform),
    /// Position dependent field with user-declared bounds, audited by
    /// [`audit_declared_bounds`].
    LipschitzSpatial { field: LipschitzFamily, declared_sup: f64, declared_grad: f64 },
}

impl MagneticModel {
    pub fn zero() -> Self {
        MagneticModel::Uniform(Waveform::Constant { b: Vec3::ZERO })
    }

    pub fn constant(b: Vec3) -> Self {
        MagneticModel::Uniform(Waveform::Constant { b })
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self, MagneticModel::Uniform(_))
    }

    /// `|B|_inf` over the horizon: exact for constant fields, the amplitude
    /// norm for sinusoids, the declared value otherwise.
    pub fn sup_norm(&self) -> f64 {
        match self {
            MagneticModel::Uniform(Waveform::Constant { b }) => b.norm(),
            MagneticModel::Uniform(Waveform::Sinusoid { amplitude, .. }) => amplitude.norm(),
            MagneticModel::LipschitzSpatial { declared_sup, .. } => *declared_sup,
        }
    }

    /// Declared `|grad B|_inf` (zero for uniform fields).
    pub fn grad_norm(&self) -> f64 {
        match self {
            MagneticModel::Uniform(_) => 0.0,
            MagneticModel::LipschitzSpatial { declared_grad, .. } => *declared_grad,
        }
    }

    #[inline]
    pub(crate) fn value(&self, t: f64, x: Vec3) -> Vec3 {
        match self {
            MagneticModel::Uniform(Waveform::Constant { b }) => *b,
            MagneticModel::Uniform(Waveform::Sinusoid { amplitude, frequency }) => {
                *amplitude * (frequency * t).sin()
            }
            MagneticModel::LipschitzSpatial { field, .. } => field.eval(t, x),
        }
    }

    /// Adds `eta` along `direction` to the field; used for perturbed branches.
    pub fn perturbed(&self, eta: f64, direction: Vec3) -> MagneticModel {
        let shift = direction * eta;
        match *self {
            MagneticModel::Uniform(Waveform::Constant { b }) => MagneticModel::constant(b + shift),
            MagneticModel::Uniform(Waveform::Sinusoid { amplitude, frequency }) => {
                MagneticModel::Uniform(Waveform::Sinusoid { amplitude: amplitude + shift, frequency })
            }
            MagneticModel::LipschitzSpatial { field, declared_sup, declared_grad } => {
                let field = match field {
                    LipschitzFamily::Shear { base, amplitude, width } => {
                        // perturbation along z only for the shear family
                        LipschitzFamily::Shear { base: base + shift[2], amplitude, width }
                    }
                };
                MagneticModel::LipschitzSpatial {
                    field,
                    declared_sup: declared_sup + shift.norm(),
                    declared_grad,
                }
            }
        }
    }
}

/// Prescribed, time-independent electric fields for single-particle and
/// frozen-field studies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "snake_case")]
pub enum AnalyticElectric {
    Zero,
    Uniform { e: Vec3 },
    /// `E(x) = (amplitude * sin(wavenumber * x1), 0, 0)`.
    SineX1 { amplitude: f64, wavenumber: f64 },
}

impl AnalyticElectric {
    #[inline]
    pub fn eval(&self, x: Vec3) -> Vec3 {
        match *self {
            AnalyticElectric::Zero => Vec3::ZERO,
            AnalyticElectric::Uniform { e } => e,
            AnalyticElectric::SineX1 { amplitude, wavenumber } => {
                Vec3::new(amplitude * (wavenumber * x[0]).sin(), 0.0, 0.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElectricModel {
    /// Plummer-softened direct sum over all particles (free space).
    Direct { softening: f64 },
    /// Cloud-in-cell deposit plus spectral Poisson solve on a periodic box.
    PeriodicFft { cells: usize, side: f64 },
    /// External prescribed field; particles do not interact.
    Analytic(AnalyticElectric),
}

impl ElectricModel {
    pub fn is_self_consistent(&self) -> bool {
        !matches!(self, ElectricModel::Analytic(_))
    }

    pub fn domain(&self) -> Domain {
        match *self {
            ElectricModel::PeriodicFft { side, .. } => Domain::Torus { side },
            _ => Domain::FreeSpace,
        }
    }
}

/// External magnetic field, electric solver, and time horizon `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub magnetic: MagneticModel,
    pub electric: ElectricModel,
    pub horizon: f64,
}

impl FieldModel {
    pub fn new(magnetic: MagneticModel, electric: ElectricModel, horizon: f64) -> Self {
        Self { magnetic, electric, horizon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {}", self.horizon)));
        }
        match self.electric {
            ElectricModel::Direct { softening } if !(softening > 0.0) => {
                return Err(invalid(format!("softening must be positive, got {softening}")));
            }
            ElectricModel::PeriodicFft { cells, side } if cells < 2 || !(side > 0.0) => {
                return Err(invalid(format!("periodic mesh needs cells >= 2 and side > 0, got {cells}, {side}")));
            }
            _ => {}
        }
        if let MagneticModel::LipschitzSpatial { declared_sup, declared_grad, .. } = self.magnetic {
            if !(declared_sup >= 0.0) || !(declared_grad >= 0.0) {
                return Err(invalid("declared magnetic bounds must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn b_inf(&self) -> f64 {
        self.magnetic.sup_norm()
    }

    pub fn domain(&self) -> Domain {
        self.electric.domain()
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        let tol = 1e-9 * self.horizon.max(1.0);
        if t < -tol || t > self.horizon + tol || !t.is_finite() {
            Err(Error::OutsideHorizon { t, horizon: self.horizon })
        } else {
            Ok(())
        }
    }
}

/// Magnetic field at `(t, x)`.
pub fn eval_b(model: &FieldModel, t: f64, x: Vec3) -> Result<Vec3> {
    model.check_time(t)?;
    Ok(model.magnetic.value(t, x))
}

/// Outcome of checking declared field bounds against a probe scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FieldAudit {
    pub measured_sup: f64,
    pub declared_sup: f64,
    pub measured_grad: f64,
    pub declared_grad: f64,
    pub points: usize,
}

impl FieldAudit {
    pub fn passed(&self) -> bool {
        self.measured_sup <= self.declared_sup * (1.0 + 1e-12)
            && self.measured_grad <= self.declared_grad * (1.0 + 1e-12) + 1e-12
    }
}

/// Scans `|B|` and a central-difference `|grad B|` (Frobenius) over a
/// 10 x 10 x 10 grid in `(t, x1, x2)` on `[0, T] x [-extent, extent]^2`.
pub fn audit_declared_bounds(model: &FieldModel, extent: f64) -> Result<FieldAudit> {
    model.validate()?;
    const SIDE: usize = 10;
    let fd = 1e-5;
    let mut sup: f64 = 0.0;
    let mut grad: f64 = 0.0;
    for it in 0..SIDE {
        let t = model.horizon * it as f64 / (SIDE - 1) as f64;
        for ia in 0..SIDE {
            for ib in 0..SIDE {
                let a = -extent + 2.0 * extent * ia as f64 / (SIDE - 1) as f64;
                let b = -extent + 2.0 * extent * ib as f64 / (SIDE - 1) as f64;
                let x = Vec3::new(a, b, 0.5 * (a - b));
                sup = sup.max(model.magnetic.value(t, x).norm());
                let mut frob = 0.0;
                for axis in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[axis] += fd;
                    xm[axis] -= fd;
                    let d = (model.magnetic.value(t, xp) - model.magnetic.value(t, xm)) / (2.0 * fd);
                    frob += d.norm_sq();
                }
                grad = grad.max(frob.sqrt());
            }
        }
    }
    Ok(FieldAudit {
        measured_sup: sup,
        declared_sup: model.magnetic.sup_norm(),
        measured_grad: grad,
        declared_grad: model.magnetic.grad_norm(),
        points: SIDE * SIDE * SIDE,
    })
}

/// Certified bound on `|E|_inf` from `|rho|_1` and `|rho|_p`, `p > 3`:
/// the far part of the kernel is bounded by `1 / (4 pi)`, the near part by
/// its `L^q` norm on the unit ball, `((4 pi)^{1-q} / (3 - 2q))^{1/q}`.
pub fn e_infinity_bound(rho_l1: f64, rho_lp: f64, p: f64) -> Result<f64> {
    if !(p > 3.0) {
        return Err(invalid(format!("e_infinity_bound needs p > 3, got {p}")));
    }
    if !(rho_l1 >= 0.0) || !(rho_lp >= 0.0) {
        return Err(invalid("norms must be nonnegative"));
    }
    Ok(COULOMB * rho_l1 + near_kernel_lq_norm(p) * rho_lp)
}

/// `|1_{|x|<1} grad G_3|_q` with `q = p / (p - 1)`.
pub fn near_kernel_lq_norm(p: f64) -> f64 {
    let q = p / (p - 1.0);
    ((4.0 * std::f64::consts::PI).powf(1.0 - q) / (3.0 - 2.0 * q)).powf(1.0 / q)
}
