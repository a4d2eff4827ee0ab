use serde::{Deserialize, Serialize};

use basiscal_core::basis::GridField;
use basiscal_core::{Error, Result};

/// Unweighted root-mean-square difference over common sites.
pub fn rmse(a: &GridField, b: &GridField) -> Result<f64> {
    if !a.same_sites(b) {
        return Err(Error::invalid("RMSE needs fields on the same sites"));
    }
    if a.is_empty() {
        return Err(Error::invalid("RMSE of empty fields"));
    }
    let ss: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Belt {
    /// southern edge in degrees
    pub lat_lo: f64,
    pub lat_hi: f64,
    pub mean: f64,
    pub count: usize,
}

/// Site averages in latitude belts of `width` degrees from the south pole;
/// empty belts are omitted.
pub fn zonal_means(field: &GridField, width: f64) -> Result<Vec<Belt>> {
    if !(width > 0.0) {
        return Err(Error::invalid("belt width must be positive"));
    }
    let n_belts = (180.0 / width).ceil() as usize;
    let mut sums = vec![(0.0, 0usize); n_belts];
    for (s, v) in field.sites().iter().zip(field.values()) {
        let lat = s.lat_deg().ok_or_else(|| Error::domain("zonal means need spherical sites"))?;
        let b = (((lat + 90.0) / width).floor() as usize).min(n_belts - 1);
        sums[b].0 += v;
        sums[b].1 += 1;
    }
    Ok(sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, c))| *c > 0)
        .map(|(b, (s, c))| Belt {
            lat_lo: -90.0 + b as f64 * width,
            lat_hi: (-90.0 + (b + 1) as f64 * width).min(90.0),
            mean: s / c as f64,
            count: c,
        })
        .collect())
}
