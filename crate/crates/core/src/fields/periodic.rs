//! Spectral Poisson solve on the periodic box.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::grid::{cic_stencil, DensityGrid, VectorGrid};
use crate::ensemble::Domain;
use crate::error::{Error, Result};
use crate::vec3::Vec3;

/// Applies a 1D transform along each of the three axes of an `m^3` buffer.
fn fft3(buf: &mut [Complex<f64>], m: usize, fft: &Arc<dyn Fft<f64>>) {
    // axis 0 is contiguous
    fft.process(buf);
    let mut line = vec![Complex::new(0.0, 0.0); m];
    // axis 1
    for k in 0..m {
        for i in 0..m {
            for (j, c) in line.iter_mut().enumerate() {
                *c = buf[i + m * (j + m * k)];
            }
            fft.process(&mut line);
            for (j, c) in line.iter().enumerate() {
                buf[i + m * (j + m * k)] = *c;
            }
        }
    }
    // axis 2
    for j in 0..m {
        for i in 0..m {
            for (k, c) in line.iter_mut().enumerate() {
                *c = buf[i + m * (j + m * k)];
            }
            fft.process(&mut line);
            for (k, c) in line.iter().enumerate() {
                buf[i + m * (j + m * k)] = *c;
            }
        }
    }
}

/// Signed wavenumber of DFT index `i`; the Nyquist index maps to zero so that
/// spectral derivatives stay real.
fn wavenumber(i: usize, m: usize, side: f64) -> f64 {
    let k0 = 2.0 * PI / side;
    if 2 * i == m {
        0.0
    } else if i < m.div_ceil(2) {
        k0 * i as f64
    } else {
        k0 * (i as f64 - m as f64)
    }
}

/// Solves `-Lap phi = rho - <rho>` and returns `E = -grad phi` on the same
/// grid, both steps in Fourier space. The mean of `rho` is removed, so the
/// zero mode of `E` vanishes.
pub fn eval_e_periodic(rho: &DensityGrid) -> Result<VectorGrid> {
    let Domain::Torus { side } = rho.domain else {
        return Err(Error::Domain("periodic solve needs a torus grid".into()));
    };
    let m = rho.m;
    let n = m * m * m;
    let mean = rho.values.iter().sum::<f64>() / n as f64;
    if !mean.is_finite() || rho.values.iter().any(|v| !(v - mean).is_finite()) {
        return Err(Error::NonFinite("density after mean removal".into()));
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(m);
    let inverse = planner.plan_fft_inverse(m);

    let mut rho_k: Vec<Complex<f64>> = rho.values.iter().map(|v| Complex::new(v - mean, 0.0)).collect();
    fft3(&mut rho_k, m, &forward);

    let full = |i: usize| {
        let k0 = 2.0 * PI / side;
        if i <= m / 2 {
            k0 * i as f64
        } else {
            k0 * (i as f64 - m as f64)
        }
    };
    let mut comps: [Vec<Complex<f64>>; 3] = std::array::from_fn(|_| vec![Complex::new(0.0, 0.0); n]);
    for k in 0..m {
        for j in 0..m {
            for i in 0..m {
                let idx = i + m * (j + m * k);
                // Laplacian symbol uses the full wavenumber, derivatives drop Nyquist
                let k2 = full(i).powi(2) + full(j).powi(2) + full(k).powi(2);
                if k2 == 0.0 {
                    continue;
                }
                let phi = rho_k[idx] / k2;
                let kv = [wavenumber(i, m, side), wavenumber(j, m, side), wavenumber(k, m, side)];
                for a in 0..3 {
                    // E_hat = -i k phi_hat
                    comps[a][idx] = Complex::new(0.0, -kv[a]) * phi;
                }
            }
        }
    }
    let scale = 1.0 / n as f64;
    for c in comps.iter_mut() {
        fft3(c, m, &inverse);
    }
    let values = (0..n)
        .map(|idx| Vec3::new(comps[0][idx].re * scale, comps[1][idx].re * scale, comps[2][idx].re * scale))
        .collect();
    Ok(VectorGrid { m, h: rho.h, origin: rho.origin, values })
}

/// Cloud-in-cell interpolation of a periodic vector grid at `x`; the same
/// stencil as the deposit, so self-forces cancel.
pub fn interpolate_cic(field: &VectorGrid, x: Vec3) -> Vec3 {
    let m = field.m as i64;
    let (base, f) = cic_stencil(x, field.origin, field.h);
    let mut out = Vec3::ZERO;
    for dk in 0..2 {
        for dj in 0..2 {
            for di in 0..2 {
                let i = (base[0] + di).rem_euclid(m) as usize;
                let j = (base[1] + dj).rem_euclid(m) as usize;
                let k = (base[2] + dk).rem_euclid(m) as usize;
                let wx = if di == 0 { 1.0 - f[0] } else { f[0] };
                let wy = if dj == 0 { 1.0 - f[1] } else { f[1] };
                let wz = if dk == 0 { 1.0 - f[2] } else { f[2] };
                out += field.values[i + field.m * (j + field.m * k)] * (wx * wy * wz);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn torus_grid(m: usize, f: impl Fn(Vec3) -> f64) -> DensityGrid {
        DensityGrid::from_fn(m, 1.0 / m as f64, Vec3::ZERO, Domain::Torus { side: 1.0 }, f)
    }

    #[test]
    fn single_mode_is_exact() {
        let g = torus_grid(32, |x| (2.0 * PI * x[0]).cos());
        let e = eval_e_periodic(&g).unwrap();
        let mut err: f64 = 0.0;
        let (mut proj, mut norm) = (0.0, 0.0);
        for k in 0..32 {
            for j in 0..32 {
                for i in 0..32 {
                    let c = g.cell_center(i, j, k);
                    let v = e.values[g.index(i, j, k)];
                    let exact = (2.0 * PI * c[0]).sin() / (2.0 * PI);
                    err = err.max((v[0] - exact).abs()).max(v[1].abs()).max(v[2].abs());
                    let basis = (2.0 * PI * c[0]).sin();
                    proj += v[0] * basis;
                    norm += basis * basis;
                }
            }
        }
        assert!(err < 1e-10, "max error {err}");
        assert!((proj / norm - 1.0 / (2.0 * PI)).abs() < 1e-10);
    }

    #[test]
    fn constant_density_has_no_field() {
        let e = eval_e_periodic(&torus_grid(8, |_| 3.7)).unwrap();
        assert!(e.values.iter().all(|v| v.max_abs() < 1e-14));
    }

    #[test]
    fn superposition() {
        let a = eval_e_periodic(&torus_grid(16, |x| (2.0 * PI * x[0]).cos())).unwrap();
        let b = eval_e_periodic(&torus_grid(16, |x| (2.0 * PI * x[1]).cos())).unwrap();
        let ab = eval_e_periodic(&torus_grid(16, |x| (2.0 * PI * x[0]).cos() + (2.0 * PI * x[1]).cos())).unwrap();
        for idx in 0..ab.values.len() {
            assert!((ab.values[idx] - a.values[idx] - b.values[idx]).max_abs() < 1e-13);
        }
    }

    #[test]
    fn zero_mode_vanishes() {
        let g = torus_grid(8, |x| (x[0] * 7.0).sin() + x[1] * x[2]);
        let e = eval_e_periodic(&g).unwrap();
        let sum = e.values.iter().fold(Vec3::ZERO, |a, b| a + *b);
        assert!(sum.max_abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_free_space() {
        let mut g = torus_grid(4, |_| 1.0);
        g.values[3] = f64::NAN;
        assert!(eval_e_periodic(&g).is_err());
        let free = DensityGrid::zeros(4, 0.25, Vec3::ZERO, Domain::FreeSpace);
        assert!(eval_e_periodic(&free).is_err());
    }
}
