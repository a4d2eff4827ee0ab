//! Associated Legendre functions and real spherical harmonics.

use std::f64::consts::{PI, SQRT_2};

use super::site::Site;
use crate::{Error, Result};

/// `P_{k,h}(x)` without the Condon–Shortley phase, via the three-term
/// recurrence in `k` seeded by the closed form for `P_{h,h}`.
pub fn assoc_legendre(k: usize, h: usize, x: f64) -> Result<f64> {
    if h > k {
        return Err(Error::domain(format!("mode {h} exceeds order {k}")));
    }
    if !(-1.0..=1.0).contains(&x) {
        return Err(Error::domain(format!("argument {x} outside [-1, 1]")));
    }
    Ok(legendre_unchecked(k, h, x))
}

fn legendre_unchecked(k: usize, h: usize, x: f64) -> f64 {
    // P_{h,h} = (2h-1)!! (1-x²)^{h/2}
    let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut pmm = 1.0;
    let mut fact = 1.0;
    for _ in 0..h {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if k == h {
        return pmm;
    }
    let mut pmmp1 = x * (2 * h + 1) as f64 * pmm;
    if k == h + 1 {
        return pmmp1;
    }
    let mut pkk = 0.0;
    for kk in (h + 2)..=k {
        pkk = (x * (2 * kk - 1) as f64 * pmmp1 - (kk + h - 1) as f64 * pmm) / (kk - h) as f64;
        pmm = pmmp1;
        pmmp1 = pkk;
    }
    pkk
}

/// `sqrt((2k+1)/4π · (k-h)!/(k+h)!)`.
pub fn sh_normalization(k: usize, h: usize) -> f64 {
    let mut ratio = 1.0;
    for m in (k - h + 1)..=(k + h) {
        ratio /= m as f64;
    }
    ((2 * k + 1) as f64 / (4.0 * PI) * ratio).sqrt()
}

/// Real spherical harmonic `ψ_{k,h}`: sine branch for `h < 0`, cosine for
/// `h > 0` (both carrying a `√2`), plain zonal function for `h = 0`.
pub fn eval_real_sh(k: usize, h: i64, site: &Site) -> Result<f64> {
    let Site::Spherical { colat, lon, .. } = *site else {
        return Err(Error::domain("spherical harmonic evaluated at a planar site"));
    };
    let m = h.unsigned_abs() as usize;
    if m > k {
        return Err(Error::domain(format!("|h| = {m} exceeds order {k}")));
    }
    let p = legendre_unchecked(k, m, colat.cos());
    let norm = sh_normalization(k, m);
    Ok(match h.signum() {
        -1 => norm * SQRT_2 * (m as f64 * lon).sin() * p,
        0 => norm * p,
        _ => norm * SQRT_2 * (m as f64 * lon).cos() * p,
    })
}

/// All normalised `N_{k,h} P_{k,h}(x)` for `0 ≤ h ≤ k ≤ order`, packed by
/// `k(k+1)/2 + h`.
pub(crate) fn normalized_legendre_table(order: usize, x: f64) -> Vec<f64> {
    let size = (order + 1) * (order + 2) / 2;
    let mut out = vec![0.0; size];
    let idx = |k: usize, h: usize| k * (k + 1) / 2 + h;
    let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
    let mut pmm = 1.0;
    for h in 0..=order {
        if h > 0 {
            pmm *= (2 * h - 1) as f64 * somx2;
        }
        out[idx(h, h)] = pmm;
        if h < order {
            let mut prev = pmm;
            let mut cur = x * (2 * h + 1) as f64 * pmm;
            out[idx(h + 1, h)] = cur;
            for k in (h + 2)..=order {
                let next =
                    (x * (2 * k - 1) as f64 * cur - (k + h - 1) as f64 * prev) / (k - h) as f64;
                out[idx(k, h)] = next;
                prev = cur;
                cur = next;
            }
        }
    }
    for k in 0..=order {
        for h in 0..=k {
            out[idx(k, h)] *= sh_normalization(k, h);
        }
    }
    out
}
