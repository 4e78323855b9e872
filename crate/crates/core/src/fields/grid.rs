use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::ensemble::{Domain, ParticleEnsemble};
use crate::error::{invalid, Error, Result};
use crate::vec3::Vec3;

/// Cubic grid of cell-averaged densities. Value `(i, j, k)` sits at the cell
/// centre `origin + (i + 1/2, j + 1/2, k + 1/2) h` and is stored at
/// `i + m (j + m k)` (i fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityGrid {
    pub m: usize,
    pub h: f64,
    pub origin: Vec3,
    pub domain: Domain,
    pub values: Vec<f64>,
}

/// Same layout as [`DensityGrid`], one vector per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorGrid {
    pub m: usize,
    pub h: f64,
    pub origin: Vec3,
    pub values: Vec<Vec3>,
}

/// Requested resolution for free-space deposits. The cell size is doubled
/// until the cloud fits in `max_cells` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub h: f64,
    pub max_cells: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { h: 1.0 / 32.0, max_cells: 160 }
    }
}

impl DensityGrid {
    pub fn zeros(m: usize, h: f64, origin: Vec3, domain: Domain) -> Self {
        Self { m, h, origin, domain, values: vec![0.0; m * m * m] }
    }

    /// Grid sampled from a function of the cell centre.
    pub fn from_fn(m: usize, h: f64, origin: Vec3, domain: Domain, f: impl Fn(Vec3) -> f64) -> Self {
        let mut g = Self::zeros(m, h, origin, domain);
        for k in 0..m {
            for j in 0..m {
                for i in 0..m {
                    g.values[i + m * (j + m * k)] = f(g.cell_center(i, j, k));
                }
            }
        }
        g
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.m * (j + self.m * k)
    }

    pub fn cell_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    /// `sum(values) * h^3`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_volume()
    }

    /// Flat CSV, header `i,j,k,value`, i fastest.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "i,j,k,value")?;
        for k in 0..self.m {
            for j in 0..self.m {
                for i in 0..self.m {
                    writeln!(out, "{},{},{},{}", i, j, k, self.values[self.index(i, j, k)])?;
                }
            }
        }
        Ok(())
    }

    /// One JSON header line (terminated by `\n`) followed by `m^3`
    /// little-endian IEEE-754 binary64 values, i fastest.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::json!({
            "format": "density-grid-f64le",
            "m": self.m,
            "h": self.h,
            "origin": self.origin,
            "domain": self.domain,
            "layout": "row-major, i fastest: index = i + m*(j + m*k)",
            "count": self.values.len(),
        });
        writeln!(out, "{header}")?;
        for v in &self.values {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| invalid("missing header line"))?;
        let header: serde_json::Value =
            serde_json::from_slice(&bytes[..nl]).map_err(|e| invalid(format!("bad header: {e}")))?;
        let m = header["m"].as_u64().ok_or_else(|| invalid("header lacks m"))? as usize;
        let h = header["h"].as_f64().ok_or_else(|| invalid("header lacks h"))?;
        let origin: Vec3 =
            serde_json::from_value(header["origin"].clone()).map_err(|e| invalid(format!("origin: {e}")))?;
        let domain: Domain =
            serde_json::from_value(header["domain"].clone()).map_err(|e| invalid(format!("domain: {e}")))?;
        let body = &bytes[nl + 1..];
        if body.len() != m * m * m * 8 {
            return Err(invalid(format!("expected {} data bytes, found {}", m * m * m * 8, body.len())));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(Self { m, h, origin, domain, values })
    }
}

/// Trilinear weights of `x` against cell centres: lower corner index (may be
/// negative) and the fractional offsets.
#[inline]
pub(crate) fn cic_stencil(x: Vec3, origin: Vec3, h: f64) -> ([i64; 3], [f64; 3]) {
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = (x[a] - origin[a]) / h - 0.5;
        let f = s.floor();
        base[a] = f as i64;
        frac[a] = s - f;
    }
    (base, frac)
}

/// Cloud-in-cell deposit onto a given grid. Free-space particles whose
/// stencil leaves the grid are rejected; torus stencils wrap.
pub fn deposit_cic(ensemble: &ParticleEnsemble, m: usize, h: f64, origin: Vec3) -> Result<DensityGrid> {
    if m == 0 || !(h > 0.0) {
        return Err(invalid("grid needs m >= 1 and h > 0"));
    }
    let domain = ensemble.domain();
    if let Domain::Torus { side } = domain {
        if ((m as f64) * h - side).abs() > 1e-12 * side {
            return Err(invalid(format!("torus grid must span the box: m*h = {} vs L = {side}", m as f64 * h)));
        }
    }
    let mut grid = DensityGrid::zeros(m, h, origin, domain);
    let inv_vol = 1.0 / grid.cell_volume();
    let mi = m as i64;
    for (x, w) in ensemble.positions().iter().zip(ensemble.weights()) {
        let (base, f) = cic_stencil(*x, origin, h);
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let mut idx = [base[0] + di, base[1] + dj, base[2] + dk];
                    if domain.is_torus() {
                        for c in idx.iter_mut() {
                            *c = c.rem_euclid(mi);
                        }
                    } else if idx.iter().any(|c| *c < 0 || *c >= mi) {
                        return Err(Error::Domain(format!("particle at {:?} lies outside the deposit grid", x.0)));
                    }
                    let wx = if di == 0 { 1.0 - f[0] } else { f[0] };
                    let wy = if dj == 0 { 1.0 - f[1] } else { f[1] };
                    let wz = if dk == 0 { 1.0 - f[2] } else { f[2] };
                    let flat = idx[0] as usize + m * (idx[1] as usize + m * idx[2] as usize);
                    grid.values[flat] += w * wx * wy * wz * inv_vol;
                }
            }
        }
    }
    Ok(grid)
}

/// Free-space deposit on a grid sized to cover the cloud. Cell centres sit on
/// integer multiples of `h`, so the origin of coordinates is a cell centre.
/// Torus ensembles deposit on the box with `L / h` cells.
pub fn deposit_cic_auto(ensemble: &ParticleEnsemble, spec: GridSpec) -> Result<DensityGrid> {
    if !(spec.h > 0.0) || spec.max_cells < 4 {
        return Err(invalid("grid spec needs h > 0 and max_cells >= 4"));
    }
    if let Domain::Torus { side } = ensemble.domain() {
        let m = ((side / spec.h).round() as usize).clamp(2, spec.max_cells);
        return deposit_cic(ensemble, m, side / m as f64, Vec3::ZERO);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for x in ensemble.positions() {
        for a in 0..3 {
            lo[a] = lo[a].min(x[a]);
            hi[a] = hi[a].max(x[a]);
        }
    }
    let mut h = spec.h;
    loop {
        let mut origin = Vec3::ZERO;
        let mut m = 0usize;
        for a in 0..3 {
            origin[a] = ((lo[a] / h + 0.5).floor() - 1.5) * h;
            let span = ((hi[a] - origin[a]) / h).ceil() as usize + 2;
            m = m.max(span);
        }
        if m <= spec.max_cells {
            return deposit_cic(ensemble, m, h, origin);
        }
        h *= 2.0;
    }
}
