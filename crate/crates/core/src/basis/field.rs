use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::site::{Site, SiteKind};
use crate::{Error, Result};

/// A spatial field sampled at a fixed set of sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    sites: Vec<Site>,
    values: Vec<f64>,
    pub label: Option<String>,
    pub run: Option<usize>,
}

impl GridField {
    pub fn new(sites: Vec<Site>, values: Vec<f64>) -> Result<Self> {
        if sites.len() != values.len() {
            return Err(Error::Dimension {
                expected: sites.len(),
                found: values.len(),
                context: "field values per site",
            });
        }
        if let Some(first) = sites.first() {
            let kind = first.kind();
            if sites.iter().any(|s| s.kind() != kind) {
                return Err(Error::invalid("field mixes planar and spherical sites"));
            }
        }
        let mut seen = HashSet::with_capacity(sites.len());
        for (i, s) in sites.iter().enumerate() {
            if !seen.insert(s.key()) {
                return Err(Error::invalid(format!("duplicate site at row {i}")));
            }
        }
        Ok(Self {
            sites,
            values,
            label: None,
            run: None,
        })
    }

    /// Evaluates `f` at every site.
    pub fn from_fn(sites: Vec<Site>, f: impl Fn(&Site) -> f64) -> Result<Self> {
        let values = sites.iter().map(f).collect();
        Self::new(sites, values)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_run(mut self, run: usize) -> Self {
        self.run = Some(run);
        self
    }

    pub fn sites(&self) -> &[Site] {
        &self.sites
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kind(&self) -> Option<SiteKind> {
        self.sites.first().map(Site::kind)
    }

    /// Same sites, new values.
    pub fn map_values(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            sites: self.sites.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            label: self.label.clone(),
            run: self.run,
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.sites.len() {
            return Err(Error::Dimension {
                expected: self.sites.len(),
                found: values.len(),
                context: "replacement values",
            });
        }
        Ok(Self {
            sites: self.sites.clone(),
            values,
            label: self.label.clone(),
            run: self.run,
        })
    }

    /// True when both fields are sampled at identical sites in identical order.
    pub fn same_sites(&self, other: &GridField) -> bool {
        self.sites.len() == other.sites.len()
            && self
                .sites
                .iter()
                .zip(&other.sites)
                .all(|(a, b)| a.key() == b.key())
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation over sites.
    pub fn sd(&self) -> f64 {
        let m = self.mean();
        (self.values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / self.values.len() as f64)
            .sqrt()
    }

    /// Writes `lat_deg,lon_deg,value` (spherical) or `x1,x2,value` (planar).
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        match self.kind() {
            Some(SiteKind::Planar) => w.write_record(["x1", "x2", "value"])?,
            _ => w.write_record(["lat_deg", "lon_deg", "value"])?,
        }
        for (site, v) in self.sites.iter().zip(&self.values) {
            match *site {
                Site::Planar { x1, x2 } => {
                    w.write_record(&[x1.to_string(), x2.to_string(), v.to_string()])?
                }
                Site::Spherical { colat, lon, .. } => w.write_record(&[
                    (90.0 - colat.to_degrees()).to_string(),
                    lon.to_degrees().to_string(),
                    v.to_string(),
                ])?,
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        let spherical = match cols.as_slice() {
            ["lat_deg", "lon_deg", "value"] => true,
            ["x1", "x2", "value"] => false,
            _ => {
                return Err(Error::invalid(format!(
                    "unexpected field header {cols:?}; want lat_deg,lon_deg,value or x1,x2,value"
                )))
            }
        };
        let mut sites = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec[i]
                    .parse::<f64>()
                    .map_err(|e| Error::invalid(format!("bad number {:?}: {e}", &rec[i])))
            };
            let (a, b, v) = (parse(0)?, parse(1)?, parse(2)?);
            sites.push(if spherical {
                Site::from_lat_lon_deg(a, b)?
            } else {
                Site::planar(a, b)?
            });
            values.push(v);
        }
        GridField::new(sites, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
