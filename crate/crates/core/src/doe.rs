//! Maximin Latin hypercube designs.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::{Error, Result};

/// `r × q` design on the unit cube, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    points: Vec<f64>,
    r: usize,
    q: usize,
    pub seed: u64,
}

impl Design {
    pub fn from_rows(rows: &[Vec<f64>], seed: u64) -> Result<Self> {
        let r = rows.len();
        let q = rows.first().map_or(0, Vec::len);
        if r == 0 || q == 0 || rows.iter().any(|row| row.len() != q) {
            return Err(Error::invalid("design rows must be non-empty and of equal length"));
        }
        Ok(Self {
            points: rows.concat(),
            r,
            q,
            seed,
        })
    }

    pub fn runs(&self) -> usize {
        self.r
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.q..(j + 1) * self.q]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.q)
    }

    /// Smallest Euclidean distance between two runs.
    pub fn min_distance(&self) -> f64 {
        min_sq_distance(&self.points, self.r, self.q).sqrt()
    }

    /// Whether every column, scaled by `r` and floored, is a permutation of `0..r`.
    pub fn is_latin(&self) -> bool {
        (0..self.q).all(|k| {
            let mut seen = vec![false; self.r];
            self.rows().all(|p| {
                let cell = (p[k] * self.r as f64).floor();
                if !(0.0..self.r as f64).contains(&cell) || seen[cell as usize] {
                    return false;
                }
                seen[cell as usize] = true;
                true
            })
        })
    }

    /// Runs reordered by `perm` (run `j` of the result is run `perm[j]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            points: perm.iter().flat_map(|&j| self.point(j).to_vec()).collect(),
            ..self.clone()
        }
    }

    /// CSV with header `theta_1..theta_q`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((1..=self.q).map(|k| format!("theta_{k}")))?;
        for p in self.rows() {
            w.write_record(p.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let rows = rdr
            .records()
            .map(|rec| {
                rec?.iter()
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::invalid(format!("bad design entry {s:?}: {e}")))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows, 0)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn min_sq_distance(points: &[f64], r: usize, q: usize) -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..r {
        for b in a + 1..r {
            let d: f64 = (0..q)
                .map(|k| (points[a * q + k] - points[b * q + k]).powi(2))
                .sum();
            best = best.min(d);
        }
    }
    best
}

fn check_shape(r: usize, q: usize) -> Result<()> {
    if r < 2 || q == 0 {
        return Err(Error::invalid(format!("design needs r >= 2 and q >= 1, got r={r}, q={q}")));
    }
    Ok(())
}

/// Independent column permutations at cell midpoints `(i + 0.5) / r`.
fn random_columns(r: usize, q: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..q)
        .map(|_| {
            let mut col: Vec<usize> = (0..r).collect();
            col.shuffle(rng);
            col
        })
        .collect()
}

fn to_points(cols: &[Vec<usize>], r: usize) -> Vec<f64> {
    let q = cols.len();
    let mut pts = vec![0.0; r * q];
    for (k, col) in cols.iter().enumerate() {
        for (j, &cell) in col.iter().enumerate() {
            pts[j * q + k] = (cell as f64 + 0.5) / r as f64;
        }
    }
    pts
}

/// Random stream for restart `index` of a design seeded with `seed`.
pub fn restart_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Unoptimised Latin hypercube at cell midpoints.
pub fn random_lhd(r: usize, q: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    check_shape(r, q)?;
    Ok(to_points(&random_columns(r, q, rng), r))
}

/// Swap hill climbing from one random start: accept any within-column swap of
/// two runs that raises the minimum pairwise distance, until a full pass over
/// a budget of proposals gives no improvement.
fn climb(r: usize, q: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>) {
    let mut cols = random_columns(r, q, rng);
    let mut pts = to_points(&cols, r);
    let mut best = min_sq_distance(&pts, r, q);
    let budget = 20 * r * q;
    let mut stale = 0;
    while stale < budget {
        let k = rng.random_range(0..q);
        let a = rng.random_range(0..r);
        let mut b = rng.random_range(0..r - 1);
        if b >= a {
            b += 1;
        }
        cols[k].swap(a, b);
        pts.swap(a * q + k, b * q + k);
        let d = min_sq_distance(&pts, r, q);
        if d > best {
            best = d;
            stale = 0;
        } else {
            cols[k].swap(a, b);
            pts.swap(a * q + k, b * q + k);
            stale += 1;
        }
    }
    (best, pts)
}

/// Best of `restarts` hill-climbed Latin hypercubes. Restarts run in
/// parallel on independent streams; ties go to the lowest restart index.
pub fn maximin_lhd(r: usize, q: usize, restarts: usize, seed: u64) -> Result<Design> {
    check_shape(r, q)?;
    let restarts = restarts.max(1);
    let results: Vec<(f64, Vec<f64>)> = (0..restarts)
        .into_par_iter()
        .map(|i| climb(r, q, &mut restart_rng(seed, i)))
        .collect();
    let mut best = 0;
    for (i, res) in results.iter().enumerate() {
        if res.0 > results[best].0 {
            best = i;
        }
    }
    Ok(Design {
        points: results.into_iter().nth(best).expect("at least one restart").1,
        r,
        q,
        seed,
    })
}

/// Affine map of each column from `[0, 1]` onto `(lo, hi)`.
pub fn rescale(design: &Design, bounds: &[(f64, f64)]) -> Result<Vec<Vec<f64>>> {
    if bounds.len() != design.q {
        return Err(Error::Dimension {
            expected: design.q,
            found: bounds.len(),
            context: "rescale bounds",
        });
    }
    if let Some((k, _)) = bounds.iter().enumerate().find(|(_, (lo, hi))| !(lo < hi)) {
        return Err(Error::invalid(format!("bounds for dimension {k} are inverted or empty")));
    }
    Ok(design
        .rows()
        .map(|p| {
            p.iter()
                .zip(bounds)
                .map(|(&u, &(lo, hi))| lo + u * (hi - lo))
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_runs_sit_at_cell_midpoints() {
        let d = maximin_lhd(2, 1, 3, 9).unwrap();
        let mut v: Vec<f64> = d.rows().map(|p| p[0]).collect();
        v.sort_by(f64::total_cmp);
        assert_eq!(v, vec![0.25, 0.75]);
    }

    #[test]
    fn latin_property() {
        let d = maximin_lhd(50, 3, 20, 1).unwrap();
        assert!(d.is_latin());
        assert_eq!((d.runs(), d.dim()), (50, 3));
    }

    #[test]
    fn beats_best_of_random_designs() {
        let d = maximin_lhd(25, 3, 20, 4).unwrap();
        let mut rng = restart_rng(4, 10_000);
        let best_random = (0..1000)
            .map(|_| {
                let p = random_lhd(25, 3, &mut rng).unwrap();
                min_sq_distance(&p, 25, 3).sqrt()
            })
            .fold(0.0, f64::max);
        assert!(d.min_distance() >= best_random, "{} < {best_random}", d.min_distance());
    }

    #[test]
    fn deterministic_and_monotone_in_restarts() {
        let a = maximin_lhd(12, 2, 5, 77).unwrap();
        let b = maximin_lhd(12, 2, 5, 77).unwrap();
        assert_eq!(a, b);
        let mut last = 0.0;
        for restarts in [1, 2, 4, 8, 16] {
            let d = maximin_lhd(12, 2, restarts, 77).unwrap().min_distance();
            assert!(d >= last);
            last = d;
        }
    }

    #[test]
    fn invalid_shapes() {
        assert!(maximin_lhd(1, 2, 1, 0).is_err());
        assert!(maximin_lhd(4, 0, 1, 0).is_err());
    }

    #[test]
    fn rescale_examples() {
        let d = Design::from_rows(&[vec![0.5, 0.2308], vec![0.0, 1.0]], 0).unwrap();
        let out = rescale(&d, &[(-5.0, 5.0), (50.0, 700.0)]).unwrap();
        assert_eq!(out[0][0], 0.0);
        assert!((out[0][1] - 200.02).abs() < 1e-9);
        assert_eq!(out[1], vec![-5.0, 700.0]);
        let unit = rescale(&d, &[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        assert_eq!(unit[0], d.point(0).to_vec());
        assert!(rescale(&d, &[(1.0, 0.0), (0.0, 1.0)]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let d = maximin_lhd(6, 3, 2, 5).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"theta_1,theta_2,theta_3\n"));
        let back = Design::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.points, d.points);
    }
}
