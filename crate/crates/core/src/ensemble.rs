//! Phase-space point clouds and the initial data they are drawn from.
//!
//! A continuum distribution `f(x, v)` is represented by `N` equal-weight
//! markers; every phase-space integral downstream becomes a weighted sum.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{invalid, Error, Result};
use crate::vec3::Vec3;

/// Spatial domain of an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    FreeSpace,
    Torus { side: f64 },
}

impl Domain {
    pub fn is_torus(&self) -> bool {
        matches!(self, Domain::Torus { .. })
    }

    /// Maps a position back into `[0, L)^3` on the torus; identity in free space.
    #[inline]
    pub fn wrap(&self, x: Vec3) -> Vec3 {
        match *self {
            Domain::FreeSpace => x,
            Domain::Torus { side } => {
                let mut out = x;
                for c in out.0.iter_mut() {
                    let mut w = c.rem_euclid(side);
                    // rem_euclid can round up to exactly `side`
                    if w >= side {
                        w = 0.0;
                    }
                    *c = w;
                }
                out
            }
        }
    }
}

/// Weighted point cloud in 6D phase space.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub(crate) positions: Vec<Vec3>,
    pub(crate) velocities: Vec<Vec3>,
    pub(crate) weights: Vec<f64>,
    pub(crate) domain: Domain,
}

impl ParticleEnsemble {
    pub fn new(
        positions: Vec<Vec3>,
        velocities: Vec<Vec3>,
        weights: Vec<f64>,
        domain: Domain,
    ) -> Result<Self> {
        let n = positions.len();
        if n == 0 {
            return Err(invalid("ensemble must hold at least one particle"));
        }
        if velocities.len() != n || weights.len() != n {
            return Err(invalid(format!(
                "length mismatch: {} positions, {} velocities, {} weights",
                n,
                velocities.len(),
                weights.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(invalid(format!("weights must be positive and finite, got {w}")));
        }
        if positions.iter().chain(&velocities).any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("ensemble coordinates".into()));
        }
        if let Domain::Torus { side } = domain {
            if !(side > 0.0) {
                return Err(invalid(format!("torus side must be positive, got {side}")));
            }
            if positions.iter().any(|p| p.0.iter().any(|c| *c < 0.0 || *c >= side)) {
                return Err(invalid("torus positions must lie in [0, L)^3"));
            }
        }
        Ok(Self { positions, velocities, weights, domain })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn velocities(&self) -> &[Vec3] {
        &self.velocities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    /// Sum of weights, accumulated in index order.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Adds `kick` to every velocity.
    pub fn kick_velocities(&mut self, kick: Vec3) {
        for v in &mut self.velocities {
            *v += kick;
        }
    }

    /// Writes the snapshot as CSV with header `x1,x2,x3,v1,v2,v3,w`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x1,x2,x3,v1,v2,v3,w")?;
        for ((x, v), w) in self.positions.iter().zip(&self.velocities).zip(&self.weights) {
            writeln!(out, "{},{},{},{},{},{},{}", x[0], x[1], x[2], v[0], v[1], v[2], w)?;
        }
        Ok(())
    }
}

/// Shape of the initial distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialKind {
    /// Product of isotropic Gaussians in x and v.
    Maxwellian { sigma_x: f64, sigma_v: f64 },
    /// Constant density on the product of a position ball and a velocity ball.
    UniformBall { r_x: f64, r_v: f64 },
    /// Uniform position ball, every particle at the same speed with isotropic direction.
    /// `speed = 0` gives a cold ball.
    Monokinetic { speed: f64, r_x: f64 },
    /// `f = 1` on `|x| < 1, |v| <= ln(1/|x|)^(1/3)`, whose density is `(4 pi / 3) ln_-(|x|)`.
    Miot,
}

/// Mass of the logarithmic-density construction, `16 pi^2 / 27`.
pub const MIOT_MASS: f64 = 16.0 * PI * PI / 27.0;

/// Initial data: a kind plus its total mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialDataSpec {
    #[serde(flatten)]
    pub kind: InitialKind,
    pub total_mass: f64,
}

/// Seed for the sampler's RNG stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl InitialDataSpec {
    pub fn maxwellian(sigma_x: f64, sigma_v: f64, total_mass: f64) -> Self {
        Self { kind: InitialKind::Maxwellian { sigma_x, sigma_v }, total_mass }
    }

    pub fn uniform_ball(r_x: f64, r_v: f64, total_mass: f64) -> Self {
        Self { kind: InitialKind::UniformBall { r_x, r_v }, total_mass }
    }

    pub fn monokinetic(speed: f64, r_x: f64, total_mass: f64) -> Self {
        Self { kind: InitialKind::Monokinetic { speed, r_x }, total_mass }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_mass > 0.0) || !self.total_mass.is_finite() {
            return Err(invalid(format!("total_mass must be positive, got {}", self.total_mass)));
        }
        let positive = |name: &str, x: f64| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name} must be positive, got {x}")))
            }
        };
        match self.kind {
            InitialKind::Maxwellian { sigma_x, sigma_v } => {
                positive("sigma_x", sigma_x)?;
                positive("sigma_v", sigma_v)
            }
            InitialKind::UniformBall { r_x, r_v } => {
                positive("r_x", r_x)?;
                positive("r_v", r_v)
            }
            InitialKind::Monokinetic { speed, r_x } => {
                positive("r_x", r_x)?;
                if speed >= 0.0 && speed.is_finite() {
                    Ok(())
                } else {
                    Err(invalid(format!("speed must be nonnegative, got {speed}")))
                }
            }
            InitialKind::Miot => {
                if ((self.total_mass - MIOT_MASS) / MIOT_MASS).abs() > 1e-12 {
                    Err(invalid(format!(
                        "miot data has fixed mass 16 pi^2/27, got {}",
                        self.total_mass
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }

    /// Analytic `|f^in|_inf`. Monokinetic data is a velocity delta shell and
    /// reports `+inf`.
    pub fn f_inf_bound(&self) -> f64 {
        let ball = 4.0 * PI / 3.0;
        match self.kind {
            InitialKind::Maxwellian { sigma_x, sigma_v } => {
                self.total_mass / ((2.0 * PI).powi(3) * (sigma_x * sigma_v).powi(3))
            }
            InitialKind::UniformBall { r_x, r_v } => {
                self.total_mass / (ball * ball * (r_x * r_v).powi(3))
            }
            InitialKind::Monokinetic { .. } => f64::INFINITY,
            InitialKind::Miot => 1.0,
        }
    }
}

/// The logarithmic-density initial datum with unbounded charge density.
pub fn build_miot_spec() -> InitialDataSpec {
    InitialDataSpec { kind: InitialKind::Miot, total_mass: MIOT_MASS }
}

/// Pointwise value of the Miot distribution function.
pub fn miot_f(x: Vec3, v: Vec3) -> f64 {
    let r = x.norm();
    if r >= 1.0 {
        return 0.0;
    }
    let vmax = (-r.ln()).cbrt();
    if v.norm() <= vmax {
        1.0
    } else {
        0.0
    }
}

/// Velocity integral of the Miot distribution, `(4 pi / 3) ln_-(|x|)`.
pub fn miot_density(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        4.0 * PI / 3.0 * (-r.ln())
    }
}

/// `M_k(0) = \iint |v|^k f^in dx dv` in closed form.
pub fn analytic_initial_moment(spec: &InitialDataSpec, k: f64) -> Result<f64> {
    if !(k >= 0.0) {
        return Err(invalid(format!("moment order must be nonnegative, got {k}")));
    }
    let m = spec.total_mass;
    Ok(match spec.kind {
        InitialKind::Maxwellian { sigma_v, .. } => {
            // E|v|^k for a 3D Gaussian: sigma^k 2^{k/2} Gamma((k+3)/2) / Gamma(3/2)
            m * sigma_v.powf(k) * 2f64.powf(k / 2.0) * gamma((k + 3.0) / 2.0) / gamma(1.5)
        }
        InitialKind::UniformBall { r_v, .. } => m * 3.0 * r_v.powf(k) / (k + 3.0),
        InitialKind::Monokinetic { speed, .. } => {
            if k == 0.0 {
                m
            } else {
                m * speed.powf(k)
            }
        }
        InitialKind::Miot => {
            16.0 * PI * PI * gamma(k / 3.0 + 2.0) / ((k + 3.0) * 3f64.powf(k / 3.0 + 2.0))
        }
    })
}

fn unit_direction<R: Rng>(rng: &mut R) -> Vec3 {
    loop {
        let d = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let n = d.norm();
        if n > 1e-12 {
            return d / n;
        }
    }
}

fn uniform_in_ball<R: Rng>(rng: &mut R, radius: f64) -> Vec3 {
    let u: f64 = rng.random();
    unit_direction(rng) * (radius * u.cbrt())
}

fn gaussian3<R: Rng>(rng: &mut R, sigma: f64) -> Vec3 {
    Vec3::new(
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
        sigma * rng.sample::<f64, _>(StandardNormal),
    )
}

/// Inverts the Miot radial CDF. With `s = -3 ln r` the CDF reads
/// `F = e^{-s} (1 + s)`, strictly decreasing in `s`; returns `s` for `F = u`.
pub(crate) fn miot_inverse_cdf_s(u: f64) -> f64 {
    let cdf = |s: f64| (-s).exp() * (1.0 + s);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while cdf(hi) > u {
        hi *= 2.0;
        if hi > 1e4 {
            return hi;
        }
    }
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return mid;
        }
        if cdf(mid) > u {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

/// Draws `n` equal-weight markers from `spec`. The result is a pure function
/// of `(spec, n, seed, domain)`.
pub fn sample_initial(
    spec: &InitialDataSpec,
    n: usize,
    seed: RngSeed,
    domain: Domain,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(invalid("particle count must be at least 1"));
    }
    spec.validate()?;
    if matches!(spec.kind, InitialKind::Miot) && domain.is_torus() {
        return Err(Error::Domain("miot data lives on the unit ball of free space".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.0);
    let mut positions = Vec::with_capacity(n);
    let mut velocities = Vec::with_capacity(n);
    for _ in 0..n {
        let (x, v) = match spec.kind {
            InitialKind::Maxwellian { sigma_x, sigma_v } => {
                (gaussian3(&mut rng, sigma_x), gaussian3(&mut rng, sigma_v))
            }
            InitialKind::UniformBall { r_x, r_v } => {
                (uniform_in_ball(&mut rng, r_x), uniform_in_ball(&mut rng, r_v))
            }
            InitialKind::Monokinetic { speed, r_x } => {
                let x = uniform_in_ball(&mut rng, r_x);
                (x, unit_direction(&mut rng) * speed)
            }
            InitialKind::Miot => {
                // open interval keeps r in (0, 1)
                let u: f64 = 1.0 - rng.random::<f64>();
                let s = miot_inverse_cdf_s(u.min(1.0 - f64::EPSILON));
                let r = (-s / 3.0).exp();
                let x = unit_direction(&mut rng) * r;
                let v = uniform_in_ball(&mut rng, (s / 3.0).cbrt());
                (x, v)
            }
        };
        let x = match domain {
            Domain::FreeSpace => x,
            Domain::Torus { side } => domain.wrap(x + Vec3::new(side, side, side) * 0.5),
        };
        positions.push(x);
        velocities.push(v);
    }
    let w = spec.total_mass / n as f64;
    ParticleEnsemble::new(positions, velocities, vec![w; n], domain)
}
