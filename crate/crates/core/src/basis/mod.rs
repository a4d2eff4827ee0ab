//! Truncated basis representations of spatial fields.
//!
//! Two families are supported: real spherical harmonics on the sphere and
//! tensor-product B-splines on the unit square. A [`BasisSet`] fixes the
//! canonical ordering of basis functions (`z = 0, 1, …`), evaluates design
//! matrices and fits coefficients by pivoted-QR least squares.

mod bspline;
mod field;
mod harmonics;
mod site;

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bspline::UniformBSpline;
pub use field::GridField;
pub use harmonics::{assoc_legendre, eval_real_sh, sh_normalization};
pub use site::{lat_lon_grid, unit_square_grid, Site, SiteKind};

use crate::linalg::qr::PivotedQr;
use crate::{Error, Result};

/// Which spherical-harmonic modes are kept at each order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModePolicy {
    /// `-k ≤ h ≤ k`
    Full,
    /// `0 ≤ h ≤ k` (cosine branch and zonal functions only)
    Nonnegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BasisSpec {
    SphericalHarmonic {
        order: usize,
        modes: ModePolicy,
    },
    /// `per_axis²` tensor products of univariate B-splines; `limit` keeps only
    /// the first functions of the row-major layout.
    BsplineTensor {
        per_axis: usize,
        degree: usize,
        limit: Option<usize>,
    },
}

impl BasisSpec {
    pub fn sh(order: usize, modes: ModePolicy) -> Self {
        BasisSpec::SphericalHarmonic { order, modes }
    }

    pub fn bspline(per_axis: usize, degree: usize) -> Self {
        BasisSpec::BsplineTensor {
            per_axis,
            degree,
            limit: None,
        }
    }

    /// First `count` functions of a `⌈√count⌉ × ⌈√count⌉` tensor layout.
    pub fn bspline_first(count: usize, degree: usize) -> Self {
        let per_axis = (count as f64).sqrt().ceil() as usize;
        BasisSpec::BsplineTensor {
            per_axis,
            degree,
            limit: Some(count),
        }
    }

    pub fn site_kind(&self) -> SiteKind {
        match self {
            BasisSpec::SphericalHarmonic { .. } => SiteKind::Spherical,
            BasisSpec::BsplineTensor { .. } => SiteKind::Planar,
        }
    }
}

/// Number of basis functions described by `spec`.
pub fn basis_size(spec: &BasisSpec) -> usize {
    match *spec {
        BasisSpec::SphericalHarmonic { order, modes } => match modes {
            ModePolicy::Full => (order + 1) * (order + 1),
            ModePolicy::Nonnegative => (order + 1) * (order + 2) / 2,
        },
        BasisSpec::BsplineTensor {
            per_axis, limit, ..
        } => {
            let full = per_axis * per_axis;
            limit.map_or(full, |l| l.min(full))
        }
    }
}

/// Identity of one basis function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisIndex {
    /// spherical harmonic of order `k`, mode `h`
    Harmonic { k: usize, h: i64 },
    /// tensor product `B_i(x1) B_j(x2)`
    Tensor { i: usize, j: usize },
}

impl BasisIndex {
    /// The `(k, h)` pair used in coefficient exports; `(i, j)` for tensor splines.
    pub fn pair(&self) -> (i64, i64) {
        match *self {
            BasisIndex::Harmonic { k, h } => (k as i64, h),
            BasisIndex::Tensor { i, j } => (i as i64, j as i64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BasisSet {
    spec: BasisSpec,
    indices: Vec<BasisIndex>,
    spline: Option<UniformBSpline>,
}

impl BasisSet {
    pub fn new(spec: BasisSpec) -> Result<Self> {
        match spec {
            BasisSpec::SphericalHarmonic { order, modes } => {
                let mut indices = Vec::with_capacity(basis_size(&spec));
                for k in 0..=order {
                    let lo = match modes {
                        ModePolicy::Full => -(k as i64),
                        ModePolicy::Nonnegative => 0,
                    };
                    for h in lo..=k as i64 {
                        indices.push(BasisIndex::Harmonic { k, h });
                    }
                }
                Ok(Self {
                    spec,
                    indices,
                    spline: None,
                })
            }
            BasisSpec::BsplineTensor { .. } => Self::build_bspline(spec),
        }
    }

    /// Tensor-product B-spline basis on the unit square.
    pub fn build_bspline(spec: BasisSpec) -> Result<Self> {
        let BasisSpec::BsplineTensor {
            per_axis,
            degree,
            limit,
        } = spec
        else {
            return Err(Error::invalid("build_bspline needs a B-spline spec"));
        };
        let spline = UniformBSpline::new(per_axis, degree)?;
        if let Some(l) = limit {
            if l == 0 || l > per_axis * per_axis {
                return Err(Error::invalid(format!(
                    "cannot select {l} functions from a {per_axis}x{per_axis} tensor layout"
                )));
            }
        }
        let indices = (0..per_axis)
            .flat_map(|j| (0..per_axis).map(move |i| BasisIndex::Tensor { i, j }))
            .take(basis_size(&spec))
            .collect();
        Ok(Self {
            spec,
            indices,
            spline: Some(spline),
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[BasisIndex] {
        &self.indices
    }

    pub fn index(&self, z: usize) -> BasisIndex {
        self.indices[z]
    }

    fn check_site(&self, site: &Site) -> Result<()> {
        if site.kind() != self.spec.site_kind() {
            return Err(Error::domain(format!(
                "{:?} site is incompatible with a {:?} basis",
                site.kind(),
                self.spec.site_kind()
            )));
        }
        Ok(())
    }

    /// `ψ_z(site)`.
    pub fn eval(&self, z: usize, site: &Site) -> Result<f64> {
        self.check_site(site)?;
        match (self.indices[z], site) {
            (BasisIndex::Harmonic { k, h }, _) => eval_real_sh(k, h, site),
            (BasisIndex::Tensor { i, j }, Site::Planar { x1, x2 }) => {
                let s = self.spline.as_ref().expect("spline basis");
                Ok(s.eval(i, *x1) * s.eval(j, *x2))
            }
            _ => unreachable!("site kind checked above"),
        }
    }

    /// One design-matrix row, `ψ_z(site)` for every `z`.
    pub fn eval_all(&self, site: &Site) -> Result<Vec<f64>> {
        self.check_site(site)?;
        match (&self.spec, site) {
            (BasisSpec::SphericalHarmonic { order, .. }, Site::Spherical { colat, lon, .. }) => {
                let table = harmonics::normalized_legendre_table(*order, colat.cos());
                Ok(self
                    .indices
                    .iter()
                    .map(|idx| {
                        let BasisIndex::Harmonic { k, h } = *idx else {
                            unreachable!()
                        };
                        let m = h.unsigned_abs() as usize;
                        let p = table[k * (k + 1) / 2 + m];
                        match h.signum() {
                            -1 => std::f64::consts::SQRT_2 * (m as f64 * lon).sin() * p,
                            0 => p,
                            _ => std::f64::consts::SQRT_2 * (m as f64 * lon).cos() * p,
                        }
                    })
                    .collect())
            }
            (BasisSpec::BsplineTensor { .. }, Site::Planar { x1, x2 }) => {
                let s = self.spline.as_ref().expect("spline basis");
                let bx: Vec<f64> = (0..s.count()).map(|i| s.eval(i, *x1)).collect();
                let by: Vec<f64> = (0..s.count()).map(|j| s.eval(j, *x2)).collect();
                Ok(self
                    .indices
                    .iter()
                    .map(|idx| {
                        let BasisIndex::Tensor { i, j } = *idx else {
                            unreachable!()
                        };
                        bx[i] * by[j]
                    })
                    .collect())
            }
            _ => unreachable!("site kind checked above"),
        }
    }

    /// Row-major `n × N` design matrix. Rows are assembled in parallel, each
    /// with a fixed evaluation order.
    pub fn design_matrix(&self, sites: &[Site]) -> Result<DesignMatrix> {
        let rows: Vec<Vec<f64>> = sites
            .par_iter()
            .map(|s| self.eval_all(s))
            .collect::<Result<_>>()?;
        Ok(DesignMatrix {
            rows: sites.len(),
            cols: self.size(),
            data: rows.into_iter().flatten().collect(),
        })
    }

    /// Least-squares projector for repeated fits on the same sites.
    pub fn projector(&self, sites: &[Site]) -> Result<Projector> {
        let design = self.design_matrix(sites)?;
        Projector::new(self.clone(), sites.to_vec(), design, false)
    }

    /// Projector that tolerates a rank-deficient design matrix: dependent
    /// basis functions get coefficient zero (the basic least-squares solution).
    pub fn basic_projector(&self, sites: &[Site]) -> Result<Projector> {
        let design = self.design_matrix(sites)?;
        Projector::new(self.clone(), sites.to_vec(), design, true)
    }

    /// `argmin_c ‖values − A c‖²`.
    pub fn fit(&self, field: &GridField) -> Result<CoefficientVector> {
        self.projector(field.sites())?.fit(field)
    }

    /// Field `A c` at `sites`.
    pub fn reconstruct(&self, coeffs: &CoefficientVector, sites: &[Site]) -> Result<GridField> {
        if coeffs.values.len() != self.size() {
            return Err(Error::Dimension {
                expected: self.size(),
                found: coeffs.values.len(),
                context: "coefficients for reconstruction",
            });
        }
        let design = self.design_matrix(sites)?;
        GridField::new(sites.to_vec(), design.mul_vec(&coeffs.values))
    }
}

impl PartialEq for BasisSet {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: usize,
    pub cols: usize,
    /// row-major
    pub data: Vec<f64>,
}

impl DesignMatrix {
    pub fn get(&self, i: usize, z: usize) -> f64 {
        self.data[i * self.cols + z]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn mul_vec(&self, c: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(c).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Pivoted-QR factorisation of a design matrix, reused across fields that
/// share the same sites.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: BasisSet,
    sites: Vec<Site>,
    design: DesignMatrix,
    qr: PivotedQr,
}

impl Projector {
    const RANK_TOL: f64 = 1e-10;

    fn new(basis: BasisSet, sites: Vec<Site>, design: DesignMatrix, basic: bool) -> Result<Self> {
        let qr = if basic {
            PivotedQr::truncated(&design.data, design.rows, design.cols, Self::RANK_TOL)?
        } else {
            PivotedQr::new(&design.data, design.rows, design.cols, Self::RANK_TOL)?
        };
        Ok(Self {
            basis,
            sites,
            design,
            qr,
        })
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    /// Basis indices fixed at zero because their columns are dependent, sorted.
    pub fn dropped(&self) -> Vec<usize> {
        let mut d = self.qr.dropped().to_vec();
        d.sort_unstable();
        d
    }

    pub fn fit(&self, field: &GridField) -> Result<CoefficientVector> {
        if field.len() != self.sites.len()
            || field
                .sites()
                .iter()
                .zip(&self.sites)
                .any(|(a, b)| a.key() != b.key())
        {
            return Err(Error::invalid("field sites differ from the projector's sites"));
        }
        self.fit_values(field.values())
    }

    pub fn fit_values(&self, values: &[f64]) -> Result<CoefficientVector> {
        Ok(CoefficientVector {
            values: self.qr.solve(values)?,
            basis: self.basis.clone(),
        })
    }

    pub fn reconstruct(&self, coeffs: &CoefficientVector) -> Result<GridField> {
        GridField::new(self.sites.clone(), self.design.mul_vec(&coeffs.values))
    }
}

/// Coefficients of a field in a [`BasisSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub values: Vec<f64>,
    pub basis: BasisSet,
}

impl CoefficientVector {
    pub fn new(values: Vec<f64>, basis: BasisSet) -> Result<Self> {
        if values.len() != basis.size() {
            return Err(Error::Dimension {
                expected: basis.size(),
                found: values.len(),
                context: "coefficient vector",
            });
        }
        Ok(Self { values, basis })
    }

    pub fn zeros(basis: BasisSet) -> Self {
        Self {
            values: vec![0.0; basis.size()],
            basis,
        }
    }

    /// CSV with columns `z,k,h,value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["z", "k", "h", "value"])?;
        for (z, (idx, v)) in self.basis.indices().iter().zip(&self.values).enumerate() {
            let (k, h) = idx.pair();
            w.write_record(&[z.to_string(), k.to_string(), h.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a `z,k,h,value` table, checking the indices against `basis`.
    pub fn read_csv<R: Read>(reader: R, basis: BasisSet) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut values = vec![f64::NAN; basis.size()];
        for rec in rdr.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<i64> {
                rec[i]
                    .trim()
                    .parse::<i64>()
                    .map_err(|e| Error::invalid(format!("bad index {:?}: {e}", &rec[i])))
            };
            let z = num(0)? as usize;
            if z >= basis.size() || basis.index(z).pair() != (num(1)?, num(2)?) {
                return Err(Error::invalid(format!("coefficient row z={z} does not match basis")));
            }
            values[z] = rec[3]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad value: {e}")))?;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid("coefficient table is missing rows"));
        }
        Self::new(values, basis)
    }
}
