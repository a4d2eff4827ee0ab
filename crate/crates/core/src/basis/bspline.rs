//! Univariate B-splines on a clamped uniform knot vector over `[0, 1]`.

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct UniformBSpline {
    count: usize,
    degree: usize,
    knots: Vec<f64>,
}

impl UniformBSpline {
    /// `count` basis functions of polynomial `degree`; needs `count ≥ degree + 1`.
    pub fn new(count: usize, degree: usize) -> Result<Self> {
        if count == 0 || count < degree + 1 {
            return Err(Error::invalid(format!(
                "B-spline needs at least degree+1 = {} functions, got {count}",
                degree + 1
            )));
        }
        let interior = count - degree - 1;
        let mut knots = Vec::with_capacity(count + degree + 1);
        knots.extend(std::iter::repeat_n(0.0, degree + 1));
        for i in 1..=interior {
            knots.push(i as f64 / (interior + 1) as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Ok(Self { count, degree, knots })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Knot span index `s` with `knots[s] ≤ x < knots[s+1]`, the last
    /// non-degenerate span for `x = 1`.
    pub fn span(&self, x: f64) -> usize {
        let p = self.degree;
        let n = self.count;
        let x = x.clamp(0.0, 1.0);
        if x >= self.knots[n] {
            return n - 1;
        }
        let (mut lo, mut hi) = (p, n);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// The `degree + 1` nonzero basis values at `x`, starting at index
    /// `span - degree` (Cox–de Boor triangle).
    pub fn nonzero(&self, x: f64) -> (usize, Vec<f64>) {
        let p = self.degree;
        let x = x.clamp(0.0, 1.0);
        let s = self.span(x);
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = x - self.knots[s + 1 - j];
            right[j] = self.knots[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (s - p, n)
    }

    pub fn eval(&self, i: usize, x: f64) -> f64 {
        let (start, vals) = self.nonzero(x);
        if i >= start && i < start + vals.len() {
            vals[i - start]
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// de Boor's algorithm on the control vector e_i: an independent route to B_i(x).
    fn de_boor(spline: &UniformBSpline, i: usize, x: f64) -> f64 {
        let p = spline.degree();
        let t = spline.knots();
        let k = spline.span(x);
        let mut d: Vec<f64> = (0..=p)
            .map(|j| if j + k - p == i { 1.0 } else { 0.0 })
            .collect();
        for r in 1..=p {
            for j in (r..=p).rev() {
                let idx = j + k - p;
                let denom = t[idx + p + 1 - r] - t[idx];
                let alpha = if denom > 0.0 { (x - t[idx]) / denom } else { 0.0 };
                d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
            }
        }
        d[p]
    }

    #[test]
    fn degree_zero_single_function_is_indicator() {
        let s = UniformBSpline::new(1, 0).unwrap();
        for &x in &[0.0, 0.3, 0.999, 1.0] {
            assert_eq!(s.eval(0, x), 1.0);
        }
    }

    #[test]
    fn partition_of_unity() {
        for (count, degree) in [(4, 2), (5, 3), (7, 1), (3, 0)] {
            let s = UniformBSpline::new(count, degree).unwrap();
            for i in 0..=40 {
                let x = i as f64 / 40.0;
                let total: f64 = (0..count).map(|b| s.eval(b, x)).sum();
                assert!((total - 1.0).abs() < 1e-14, "count {count} degree {degree} x {x}");
            }
        }
    }

    #[test]
    fn matches_de_boor() {
        let s = UniformBSpline::new(4, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let x: f64 = rng.random();
            for i in 0..4 {
                assert!((s.eval(i, x) - de_boor(&s, i, x)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn invalid_configurations() {
        assert!(UniformBSpline::new(2, 2).is_err());
        assert!(UniformBSpline::new(0, 0).is_err());
    }
}
