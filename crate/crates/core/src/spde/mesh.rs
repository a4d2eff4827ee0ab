use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spade::{DelaunayTriangulation, Point2, Triangulation};

use crate::basis::{Site, SiteKind};
use crate::{Error, Result};

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Boundary extension for planar meshes: square frames around the data
/// bounding box out to `width`, with nodes roughly `spacing` apart
/// (the mean data spacing when `None`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingSpec {
    pub width: f64,
    pub spacing: Option<f64>,
}

impl RingSpec {
    pub fn none() -> Self {
        Self {
            width: 0.0,
            spacing: None,
        }
    }

    /// 1.5 Matérn correlation ranges `√8 / κ`.
    pub fn for_kappa(kappa: f64) -> Self {
        Self {
            width: 1.5 * 8f64.sqrt() / kappa,
            spacing: None,
        }
    }
}

/// Triangulation of a planar domain or of the unit sphere. Planar vertices
/// are stored as `(x, y, 0)`; extension-ring vertices lie outside the unit
/// square.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    kind: SiteKind,
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    /// icosphere levels (coarse to fine) and the four children of each face
    hierarchy: Option<(Vec<Vec<[usize; 3]>>, Vec<Vec<[usize; 4]>>)>,
}

/// A data site expressed in a containing triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub triangle: usize,
    pub weights: [f64; 3],
}

impl TriangleMesh {
    pub fn new(kind: SiteKind, vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let mesh = Self {
            kind,
            vertices,
            triangles,
            hierarchy: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    fn validate(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(Error::DegenerateGeometry("mesh has no triangles".into()));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= self.vertices.len()) {
                return Err(Error::invalid(format!("triangle {t} references a missing vertex")));
            }
            if !(self.orientation(tri) > 0.0) {
                return Err(Error::DegenerateGeometry(format!(
                    "triangle {t} is degenerate or negatively oriented"
                )));
            }
        }
        Ok(())
    }

    /// Twice the signed area (planar) or the outward normal component (sphere).
    fn orientation(&self, tri: &[usize; 3]) -> f64 {
        let [a, b, c] = tri.map(|v| self.vertices[v]);
        let n = cross(sub(b, a), sub(c, a));
        match self.kind {
            SiteKind::Planar => n[2],
            SiteKind::Spherical => dot(n, [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]]),
        }
    }

    pub fn kind(&self) -> SiteKind {
        self.kind
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Vertices as sites for basis evaluation; planar vertices outside the
    /// unit square are clamped onto it.
    pub fn vertex_sites(&self) -> Result<Vec<Site>> {
        self.vertices
            .iter()
            .map(|v| match self.kind {
                SiteKind::Planar => Ok(Site::planar_clamped(v[0], v[1])),
                SiteKind::Spherical => Site::from_xyz(*v),
            })
            .collect()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        let n = cross(sub(b, a), sub(c, a));
        0.5 * dot(n, n).sqrt()
    }

    /// Barycentric weights of `p` in triangle `t`; on the sphere `p` is first
    /// projected onto the triangle's plane along the ray from the origin.
    pub fn barycentric(&self, t: usize, p: [f64; 3]) -> [f64; 3] {
        let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
        match self.kind {
            SiteKind::Planar => {
                let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
                let wb = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
                let wc = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
                [1.0 - wb - wc, wb, wc]
            }
            SiteKind::Spherical => {
                // p = s (wa a + wb b + wc c): solve with Cramer's rule, then normalise
                let det = dot(a, cross(b, c));
                let w = [
                    dot(p, cross(b, c)) / det,
                    dot(a, cross(p, c)) / det,
                    dot(a, cross(b, p)) / det,
                ];
                let s = w[0] + w[1] + w[2];
                [w[0] / s, w[1] / s, w[2] / s]
            }
        }
    }

    fn fit_score(&self, t: usize, p: [f64; 3]) -> f64 {
        if self.kind == SiteKind::Spherical {
            let [a, b, c] = self.triangles[t].map(|v| self.vertices[v]);
            if dot(p, [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]]) <= 0.0 {
                return f64::NEG_INFINITY;
            }
        }
        let w = self.barycentric(t, p);
        w[0].min(w[1]).min(w[2])
    }

    /// Containing triangle of `site` with barycentric weights.
    pub fn locate(&self, site: &Site) -> Result<Location> {
        if site.kind() != self.kind {
            return Err(Error::domain("site kind does not match the mesh"));
        }
        let p = match site {
            Site::Planar { x1, x2 } => [*x1, *x2, 0.0],
            Site::Spherical { xyz, .. } => *xyz,
        };
        let best = match &self.hierarchy {
            Some((levels, children)) => {
                let pick = |cands: &mut dyn Iterator<Item = usize>, level: &Vec<[usize; 3]>| {
                    cands
                        .map(|t| (t, self.score_in(level[t], p)))
                        .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
                };
                let mut t = pick(&mut (0..levels[0].len()), &levels[0]).0;
                for (l, kids) in children.iter().enumerate() {
                    t = pick(&mut kids[t].iter().copied(), &levels[l + 1]).0;
                }
                (t, self.fit_score(t, p))
            }
            None => (0..self.triangles.len())
                .map(|t| (t, self.fit_score(t, p)))
                .fold((usize::MAX, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc }),
        };
        if !(best.1 >= -1e-9) {
            return Err(Error::domain(format!("site {site:?} lies outside the mesh")));
        }
        let mut weights = self.barycentric(best.0, p);
        for w in &mut weights {
            *w = w.max(0.0);
        }
        let s: f64 = weights.iter().sum();
        Ok(Location {
            triangle: best.0,
            weights: weights.map(|w| w / s),
        })
    }

    fn score_in(&self, tri: [usize; 3], p: [f64; 3]) -> f64 {
        let [a, b, c] = tri.map(|v| self.vertices[v]);
        let s = [dot(p, cross(a, b)), dot(p, cross(b, c)), dot(p, cross(c, a))];
        s[0].min(s[1]).min(s[2])
    }

    /// `vertices.csv` (`vertex,x,y,z`) and `triangles.csv` (`triangle,a,b,c`) in `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.write_vertices(std::fs::File::create(dir.join("vertices.csv"))?)?;
        let mut w = csv::Writer::from_path(dir.join("triangles.csv"))?;
        w.write_record(["triangle", "a", "b", "c"])?;
        for (t, tri) in self.triangles.iter().enumerate() {
            w.write_record([t, tri[0], tri[1], tri[2]].map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    fn write_vertices<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["vertex", "x", "y", "z"])?;
        for (i, v) in self.vertices.iter().enumerate() {
            w.write_record([i.to_string(), v[0].to_string(), v[1].to_string(), v[2].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(dir: impl AsRef<Path>, kind: SiteKind) -> Result<Self> {
        let dir = dir.as_ref();
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| Error::invalid(format!("bad mesh value {s:?}: {e}")))
        };
        let mut vertices = Vec::new();
        for rec in csv::Reader::from_path(dir.join("vertices.csv"))?.records() {
            let rec = rec?;
            vertices.push([parse(&rec[1])?, parse(&rec[2])?, parse(&rec[3])?]);
        }
        let mut triangles = Vec::new();
        for rec in csv::Reader::from_path(dir.join("triangles.csv"))?.records() {
            let rec = rec?;
            let idx = |i: usize| -> Result<usize> {
                rec[i].parse().map_err(|e| Error::invalid(format!("bad triangle index: {e}")))
            };
            triangles.push([idx(1)?, idx(2)?, idx(3)?]);
        }
        Self::new(kind, vertices, triangles)
    }
}

/// Delaunay triangulation of planar sites plus an optional extension ring.
pub fn build_planar_mesh(sites: &[Site], ring: RingSpec) -> Result<TriangleMesh> {
    let mut points: Vec<[f64; 2]> = Vec::with_capacity(sites.len());
    for s in sites {
        match s {
            Site::Planar { x1, x2 } => points.push([*x1, *x2]),
            _ => return Err(Error::domain("planar mesh needs planar sites")),
        }
    }
    if points.len() < 3 {
        return Err(Error::DegenerateGeometry("need at least 3 sites".into()));
    }
    if ring.width > 0.0 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in &points {
            for k in 0..2 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        let area = ((hi[0] - lo[0]) * (hi[1] - lo[1])).max(f64::MIN_POSITIVE);
        let h = ring.spacing.unwrap_or_else(|| (area / points.len() as f64).sqrt());
        let frames = (ring.width / h).ceil().max(1.0) as usize;
        for f in 1..=frames {
            let d = ring.width * f as f64 / frames as f64;
            let (x0, y0, x1, y1) = (lo[0] - d, lo[1] - d, hi[0] + d, hi[1] + d);
            // coarsen outer frames a little; they only damp boundary effects
            let step = h * (1.0 + 0.5 * (f - 1) as f64 / frames as f64);
            let nx = ((x1 - x0) / step).ceil().max(1.0) as usize;
            let ny = ((y1 - y0) / step).ceil().max(1.0) as usize;
            for i in 0..nx {
                let x = x0 + (x1 - x0) * i as f64 / nx as f64;
                points.push([x, y0]);
                points.push([x1 - (x1 - x0) * i as f64 / nx as f64, y1]);
            }
            for j in 0..ny {
                let y = y0 + (y1 - y0) * j as f64 / ny as f64;
                points.push([x1, y]);
                points.push([x0, y1 - (y1 - y0) * j as f64 / ny as f64]);
            }
        }
    }
    let mut tri: DelaunayTriangulation<Point2<f64>> = DelaunayTriangulation::new();
    let mut handle_to_ours = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        let h = tri
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::DegenerateGeometry(format!("Delaunay insertion failed: {e:?}")))?;
        handle_to_ours.entry(h.index()).or_insert(i);
    }
    let vertices: Vec<[f64; 3]> = points.iter().map(|p| [p[0], p[1], 0.0]).collect();
    let mut triangles = Vec::new();
    for face in tri.inner_faces() {
        let mut t = face.vertices().map(|v| handle_to_ours[&v.fix().index()]);
        let [a, b, c] = t.map(|v| vertices[v]);
        if cross(sub(b, a), sub(c, a))[2] < 0.0 {
            t.swap(1, 2);
        }
        triangles.push(t);
    }
    if triangles.is_empty() {
        return Err(Error::DegenerateGeometry("sites are collinear".into()));
    }
    TriangleMesh::new(SiteKind::Planar, vertices, triangles)
}

/// Structured mesh of `[lo, hi]²` with `n × n` vertices; cells are split
/// along alternating diagonals.
pub fn grid_mesh(lo: f64, hi: f64, n: usize) -> Result<TriangleMesh> {
    if n < 2 || !(hi > lo) {
        return Err(Error::DegenerateGeometry("grid mesh needs n >= 2 and lo < hi".into()));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let mut vertices = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            vertices.push([lo + i as f64 * h, lo + j as f64 * h, 0.0]);
        }
    }
    let id = |i: usize, j: usize| j * n + i;
    let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for j in 0..n - 1 {
        for i in 0..n - 1 {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    TriangleMesh::new(SiteKind::Planar, vertices, triangles)
}

/// Icosahedron subdivided `level` times, vertices projected onto the unit
/// sphere: `20·4^level` triangles and `10·4^level + 2` vertices.
pub fn icosphere(level: usize) -> Result<TriangleMesh> {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<[f64; 3]> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize)
    .collect();
    let base: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut levels = vec![base];
    let mut children = Vec::new();
    for _ in 0..level {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            *mid.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(normalize([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        let coarse = levels.last().unwrap();
        let mut fine = Vec::with_capacity(coarse.len() * 4);
        let mut kids = Vec::with_capacity(coarse.len());
        for &[a, b, c] in coarse {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            let start = fine.len();
            fine.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
            kids.push([start, start + 1, start + 2, start + 3]);
        }
        levels.push(fine);
        children.push(kids);
    }
    let mut mesh = TriangleMesh::new(SiteKind::Spherical, vertices, levels.last().unwrap().clone())?;
    mesh.hierarchy = Some((levels, children));
    Ok(mesh)
}

/// Planar sites → Delaunay mesh with `ring`; spherical sites → icosphere at
/// `refinement`.
pub fn build_mesh(sites: &[Site], refinement: usize, ring: RingSpec) -> Result<TriangleMesh> {
    match sites.first().map(Site::kind) {
        Some(SiteKind::Planar) => build_planar_mesh(sites, ring),
        Some(SiteKind::Spherical) => {
            if sites.len() < 4 {
                return Err(Error::DegenerateGeometry("need at least 4 sites on the sphere".into()));
            }
            let mesh = icosphere(refinement)?;
            for s in sites {
                mesh.locate(s)?;
            }
            Ok(mesh)
        }
        None => Err(Error::DegenerateGeometry("no sites".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{lat_lon_grid, unit_square_grid};

    #[test]
    fn three_by_three_grid_has_eight_triangles() {
        let sites: Vec<Site> = (0..3)
            .flat_map(|j| (0..3).map(move |i| Site::planar(i as f64 / 2.0, j as f64 / 2.0).unwrap()))
            .collect();
        let mesh = build_mesh(&sites, 0, RingSpec::none()).unwrap();
        assert_eq!(mesh.triangles().len(), 8);
        let area: f64 = (0..8).map(|t| mesh.triangle_area(t)).sum();
        assert!((area - 1.0).abs() < 1e-12);
        let ringed = build_mesh(&sites, 0, RingSpec { width: 0.5, spacing: Some(0.5) }).unwrap();
        assert!(ringed.n_vertices() > 9);
        assert!(ringed.vertices().iter().any(|v| v[0] < 0.0));
    }

    #[test]
    fn icosphere_counts() {
        for level in 0..4 {
            let m = icosphere(level).unwrap();
            assert_eq!(m.triangles().len(), 20 * 4usize.pow(level as u32));
            assert_eq!(m.n_vertices(), 10 * 4usize.pow(level as u32) + 2);
            assert!(m.vertices().iter().all(|v| (dot(*v, *v) - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn degenerate_inputs() {
        let line: Vec<Site> = (0..4).map(|i| Site::planar(0.1 * i as f64, 0.2).unwrap()).collect();
        assert!(matches!(build_planar_mesh(&line, RingSpec::none()), Err(Error::DegenerateGeometry(_))));
        assert!(build_planar_mesh(&line[..2], RingSpec::none()).is_err());
        let few = lat_lon_grid(1, 3);
        assert!(build_mesh(&few, 1, RingSpec::none()).is_err());
    }

    #[test]
    fn sphere_location_matches_brute_force() {
        let mesh = icosphere(3).unwrap();
        let flat = TriangleMesh::new(SiteKind::Spherical, mesh.vertices.clone(), mesh.triangles.clone()).unwrap();
        for s in lat_lon_grid(12, 24) {
            let a = mesh.locate(&s).unwrap();
            let b = flat.locate(&s).unwrap();
            assert!(a.weights.iter().all(|&w| w >= 0.0));
            // different triangles only on shared edges, where interpolants agree
            let value = |m: &TriangleMesh, l: &Location| -> [f64; 3] {
                let tri = m.triangles[l.triangle];
                let mut p = [0.0; 3];
                for (k, &v) in tri.iter().enumerate() {
                    for d in 0..3 {
                        p[d] += l.weights[k] * m.vertices[v][d];
                    }
                }
                p
            };
            let (pa, pb) = (value(&mesh, &a), value(&flat, &b));
            assert!((0..3).all(|d| (pa[d] - pb[d]).abs() < 1e-12));
            // the interpolated point lies on the ray through the site
            let n = normalize(pa);
            let xyz = s.xyz();
            assert!((0..3).all(|d| (n[d] - xyz[d]).abs() < 1e-12));
        }
    }

    #[test]
    fn planar_location_and_csv() {
        let sites = unit_square_grid(5, 5);
        let mesh = build_planar_mesh(&sites, RingSpec { width: 0.3, spacing: None }).unwrap();
        for s in &sites {
            let l = mesh.locate(s).unwrap();
            assert!((l.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        mesh.write_csv(dir.path()).unwrap();
        let back = TriangleMesh::read_csv(dir.path(), SiteKind::Planar).unwrap();
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.vertices(), mesh.vertices());
        let g = grid_mesh(-1.0, 2.0, 4).unwrap();
        assert_eq!(g.triangles().len(), 18);
        assert!(g.locate(&Site::planar(0.5, 0.5).unwrap()).is_ok());
    }
}
