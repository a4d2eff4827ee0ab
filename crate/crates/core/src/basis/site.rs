use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SiteKind {
    Planar,
    Spherical,
}

/// A location in the unit square or on the unit sphere.
///
/// Spherical sites carry colatitude `L ∈ [0, π]`, longitude `l ∈ [0, 2π)` and
/// the derived Cartesian point `(cos l sin L, sin l sin L, cos L)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Site {
    Planar { x1: f64, x2: f64 },
    Spherical { colat: f64, lon: f64, xyz: [f64; 3] },
}

impl Site {
    pub fn planar(x1: f64, x2: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x1) || !(0.0..=1.0).contains(&x2) {
            return Err(Error::domain(format!(
                "planar site ({x1}, {x2}) outside the unit square"
            )));
        }
        Ok(Site::Planar { x1, x2 })
    }

    /// Planar site with coordinates clamped into the unit square.
    pub fn planar_clamped(x1: f64, x2: f64) -> Self {
        Site::Planar {
            x1: x1.clamp(0.0, 1.0),
            x2: x2.clamp(0.0, 1.0),
        }
    }

    /// Spherical site from colatitude and longitude in radians. Longitude is
    /// wrapped into `[0, 2π)`.
    pub fn spherical(colat: f64, lon: f64) -> Result<Self> {
        if !colat.is_finite() || !lon.is_finite() || !(0.0..=PI).contains(&colat) {
            return Err(Error::domain(format!(
                "colatitude {colat} outside [0, π] or non-finite longitude {lon}"
            )));
        }
        let lon = lon.rem_euclid(2.0 * PI);
        let lon = if lon >= 2.0 * PI { 0.0 } else { lon };
        let (sl, cl) = colat.sin_cos();
        let (sn, cn) = lon.sin_cos();
        Ok(Site::Spherical {
            colat,
            lon,
            xyz: [cn * sl, sn * sl, cl],
        })
    }

    /// Spherical site from latitude/longitude in degrees (latitude in [−90, 90]).
    pub fn from_lat_lon_deg(lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) {
            return Err(Error::domain(format!("latitude {lat} outside [-90, 90]")));
        }
        Site::spherical((90.0 - lat).to_radians(), lon.to_radians())
    }

    /// Spherical site from a (not necessarily normalised) Cartesian direction.
    pub fn from_xyz(p: [f64; 3]) -> Result<Self> {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::domain("zero or non-finite direction"));
        }
        let z = (p[2] / norm).clamp(-1.0, 1.0);
        Site::spherical(z.acos(), p[1].atan2(p[0]))
    }

    pub fn kind(&self) -> SiteKind {
        match self {
            Site::Planar { .. } => SiteKind::Planar,
            Site::Spherical { .. } => SiteKind::Spherical,
        }
    }

    /// Cartesian embedding: `(x1, x2, 0)` for planar sites, the unit vector
    /// for spherical ones.
    pub fn xyz(&self) -> [f64; 3] {
        match *self {
            Site::Planar { x1, x2 } => [x1, x2, 0.0],
            Site::Spherical { xyz, .. } => xyz,
        }
    }

    /// Latitude in degrees, `None` for planar sites.
    pub fn lat_deg(&self) -> Option<f64> {
        match *self {
            Site::Spherical { colat, .. } => Some(90.0 - colat.to_degrees()),
            Site::Planar { .. } => None,
        }
    }

    pub(crate) fn key(&self) -> (u64, u64) {
        match *self {
            Site::Planar { x1, x2 } => (x1.to_bits(), x2.to_bits()),
            Site::Spherical { colat, lon, .. } => (colat.to_bits(), lon.to_bits()),
        }
    }
}

/// Regular latitude–longitude grid of cell centres: `n_lat` colatitude bands of
/// equal width and `n_lon` longitudes starting at 0.
pub fn lat_lon_grid(n_lat: usize, n_lon: usize) -> Vec<Site> {
    let mut sites = Vec::with_capacity(n_lat * n_lon);
    for i in 0..n_lat {
        let colat = (i as f64 + 0.5) * PI / n_lat as f64;
        for j in 0..n_lon {
            let lon = j as f64 * 2.0 * PI / n_lon as f64;
            sites.push(Site::spherical(colat, lon).expect("grid site in range"));
        }
    }
    sites
}

/// Regular grid of cell midpoints in the unit square, row-major in `x2`.
pub fn unit_square_grid(n1: usize, n2: usize) -> Vec<Site> {
    let mut sites = Vec::with_capacity(n1 * n2);
    for j in 0..n2 {
        for i in 0..n1 {
            let x1 = (i as f64 + 0.5) / n1 as f64;
            let x2 = (j as f64 + 0.5) / n2 as f64;
            sites.push(Site::Planar { x1, x2 });
        }
    }
    sites
}
