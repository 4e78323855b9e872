use rayon::prelude::*;

use crate::ensemble::ParticleEnsemble;
use crate::error::{invalid, Error, Result};
use crate::vec3::Vec3;

/// `1 / (4 pi)`, the Green-function prefactor.
pub const COULOMB: f64 = 1.0 / (4.0 * std::f64::consts::PI);

/// Source arrays in structure-of-arrays layout for the pair loops.
struct Sources {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    w: Vec<f64>,
}

impl Sources {
    fn new(ensemble: &ParticleEnsemble) -> Self {
        let n = ensemble.len();
        let mut s = Sources {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            w: Vec::with_capacity(n),
        };
        for (p, w) in ensemble.positions().iter().zip(ensemble.weights()) {
            s.x.push(p[0]);
            s.y.push(p[1]);
            s.z.push(p[2]);
            s.w.push(*w);
        }
        s
    }

    /// Softened field at `t`, summed in source index order.
    #[inline]
    fn field_at(&self, t: Vec3, eps2: f64) -> Vec3 {
        let (mut ex, mut ey, mut ez) = (0.0, 0.0, 0.0);
        for j in 0..self.x.len() {
            let dx = t[0] - self.x[j];
            let dy = t[1] - self.y[j];
            let dz = t[2] - self.z[j];
            let r2 = dx * dx + dy * dy + dz * dz + eps2;
            let inv = self.w[j] / (r2 * r2.sqrt());
            ex += inv * dx;
            ey += inv * dy;
            ez += inv * dz;
        }
        Vec3::new(ex * COULOMB, ey * COULOMB, ez * COULOMB)
    }
}

/// Plummer-softened Coulomb field of the cloud at each target:
/// `E(x) = sum_j w_j (x - x_j) / (4 pi (|x - x_j|^2 + eps^2)^{3/2})`.
///
/// Targets are evaluated in parallel; each target's sum runs over sources in
/// index order, so the output does not depend on the thread count.
pub fn eval_e_direct(ensemble: &ParticleEnsemble, targets: &[Vec3], softening: f64) -> Result<Vec<Vec3>> {
    if ensemble.domain().is_torus() {
        return Err(Error::Domain("direct summation is free-space only".into()));
    }
    if !(softening > 0.0) {
        return Err(invalid(format!("softening must be positive, got {softening}")));
    }
    let sources = Sources::new(ensemble);
    let eps2 = softening * softening;
    Ok(targets.par_iter().with_min_len(16).map(|t| sources.field_at(*t, eps2)).collect())
}

/// `1/2 sum_i sum_{j != i} w_i w_j / (4 pi (|x_i - x_j|^2 + eps^2)^{1/2})`.
pub fn potential_energy_direct(ensemble: &ParticleEnsemble, softening: f64) -> Result<f64> {
    if ensemble.domain().is_torus() {
        return Err(Error::Domain("direct potential energy is free-space only".into()));
    }
    let s = Sources::new(ensemble);
    let eps2 = softening * softening;
    let n = ensemble.len();
    // row i sums over j > i; rows are combined in index order
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .with_min_len(16)
        .map(|i| {
            let mut acc = 0.0;
            for j in i + 1..n {
                let dx = s.x[i] - s.x[j];
                let dy = s.y[i] - s.y[j];
                let dz = s.z[i] - s.z[j];
                acc += s.w[j] / (dx * dx + dy * dy + dz * dz + eps2).sqrt();
            }
            acc * s.w[i]
        })
        .collect();
    Ok(rows.iter().sum::<f64>() * COULOMB)
}
