//! Uniform B-spline grids and basis evaluation.
//!
//! A grid with `G` intervals over `[range_min, range_max]` and degree `k` carries
//! `G + 2k + 1` uniformly spaced knots: the interval breakpoints plus `k` knots
//! continuing the spacing on each side. That yields `G + k` basis functions, all of
//! which sum to one anywhere inside the range.
//!
//! Inputs outside the range are clamped to the nearest boundary, so a spline is
//! constant beyond its range and its derivative there is zero.

use serde::{Deserialize, Serialize};

use crate::error::{KanError, Result};

/// Largest supported spline degree. Bounds the on-stack scratch used by the
/// basis recursion.
pub const MAX_DEGREE: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineGrid {
    range_min: f64,
    range_max: f64,
    intervals: usize,
    degree: usize,
    knots: Vec<f64>,
}

impl SplineGrid {
    pub fn new(range_min: f64, range_max: f64, intervals: usize, degree: usize) -> Result<Self> {
        if !(range_min.is_finite() && range_max.is_finite()) || range_min >= range_max {
            return Err(KanError::InvalidRange { min: range_min, max: range_max });
        }
        if intervals == 0 {
            return Err(KanError::InvalidIntervals);
        }
        if degree > MAX_DEGREE {
            return Err(KanError::InvalidConfig(format!(
                "spline degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        let step = (range_max - range_min) / intervals as f64;
        let knots = (0..intervals + 2 * degree + 1)
            .map(|j| {
                let offset = j as i64 - degree as i64;
                if offset == 0 {
                    range_min
                } else if offset == intervals as i64 {
                    range_max
                } else {
                    range_min + offset as f64 * step
                }
            })
            .collect();
        Ok(Self { range_min, range_max, intervals, degree, knots })
    }

    pub fn range_min(&self) -> f64 {
        self.range_min
    }

    pub fn range_max(&self) -> f64 {
        self.range_max
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `G + k`.
    pub fn basis_count(&self) -> usize {
        self.intervals + self.degree
    }

    pub fn step(&self) -> f64 {
        (self.range_max - self.range_min) / self.intervals as f64
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.range_min && x <= self.range_max
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.range_min, self.range_max)
    }

    /// Knot index `s` with `knots[s] <= x < knots[s + 1]`, for an already clamped `x`.
    /// The right boundary belongs to the last interval.
    fn span(&self, x: f64) -> usize {
        let cell = ((x - self.range_min) / self.step()).floor();
        let mut cell = if cell <= 0.0 { 0 } else { (cell as usize).min(self.intervals - 1) };
        // floor() can land one cell off when x sits on a knot up to rounding.
        let k = self.degree;
        if cell + 1 < self.intervals && x >= self.knots[cell + k + 1] {
            cell += 1;
        } else if cell > 0 && x < self.knots[cell + k] {
            cell -= 1;
        }
        cell + k
    }

    /// Nonzero basis values of degree `degree` at `x` for knot span `span`
    /// (iterative Cox-de Boor). Writes `degree + 1` values for basis indices
    /// `span - degree ..= span`.
    fn nonzero_basis(&self, span: usize, x: f64, degree: usize, out: &mut [f64]) {
        let t = &self.knots;
        let mut left = [0.0f64; MAX_DEGREE + 1];
        let mut right = [0.0f64; MAX_DEGREE + 1];
        out[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - t[span + 1 - j];
            right[j] = t[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
    }

    /// Writes the `k + 1` potentially nonzero basis values at `x` into `out` and
    /// returns the index of the first one. `out` must hold at least `k + 1` values.
    pub fn local_basis(&self, x: f64, out: &mut [f64]) -> usize {
        let x = self.clamp(x);
        let span = self.span(x);
        self.nonzero_basis(span, x, self.degree, out);
        span - self.degree
    }

    /// Like [`local_basis`](Self::local_basis) but writes basis derivatives.
    /// Zero outside the grid range.
    pub fn local_basis_deriv(&self, x: f64, out: &mut [f64]) -> usize {
        let k = self.degree;
        let xc = self.clamp(x);
        let span = self.span(xc);
        let first = span - k;
        out[..=k].fill(0.0);
        if k == 0 || !self.contains(x) {
            return first;
        }
        // Degree k-1 bases at the same span cover indices span-k+1 ..= span.
        let mut lower = [0.0f64; MAX_DEGREE + 1];
        self.nonzero_basis(span, xc, k - 1, &mut lower);
        let t = &self.knots;
        for r in 0..=k {
            let i = first + r;
            let mut d = 0.0;
            // B_{i,k-1} is lower[r - 1], B_{i+1,k-1} is lower[r].
            if r >= 1 {
                d += k as f64 / (t[i + k] - t[i]) * lower[r - 1];
            }
            if r < k {
                d -= k as f64 / (t[i + k + 1] - t[i + 1]) * lower[r];
            }
            out[r] = d;
        }
        first
    }

    /// All `G + k` basis values at `x`.
    pub fn basis_eval(&self, x: f64) -> Vec<f64> {
        let mut local = [0.0f64; MAX_DEGREE + 1];
        let first = self.local_basis(x, &mut local);
        let mut full = vec![0.0; self.basis_count()];
        full[first..=first + self.degree].copy_from_slice(&local[..=self.degree]);
        full
    }

    /// All `G + k` basis derivatives at `x`.
    pub fn basis_eval_deriv(&self, x: f64) -> Vec<f64> {
        let mut local = [0.0f64; MAX_DEGREE + 1];
        let first = self.local_basis_deriv(x, &mut local);
        let mut full = vec![0.0; self.basis_count()];
        full[first..=first + self.degree].copy_from_slice(&local[..=self.degree]);
        full
    }

    /// Knot averages `(t[j+1] + ... + t[j+k]) / k`; used as coefficients they
    /// make the spline reproduce the identity. Requires `k >= 1`.
    pub fn greville_abscissae(&self) -> Option<Vec<f64>> {
        let k = self.degree;
        if k == 0 {
            return None;
        }
        Some(
            (0..self.basis_count())
                .map(|j| self.knots[j + 1..=j + k].iter().sum::<f64>() / k as f64)
                .collect(),
        )
    }
}

/// Coefficient vector of one spline, one entry per basis function.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineCoefficients(Vec<f64>);

impl SplineCoefficients {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if let Some(pos) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(KanError::NonFiniteInput { row: 0, col: pos });
        }
        Ok(Self(coeffs))
    }

    pub fn for_grid(grid: &SplineGrid, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.basis_count() {
            return Err(KanError::LengthMismatch { expected: grid.basis_count(), got: coeffs.len() });
        }
        Self::new(coeffs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `s(x) = sum_i c_i B_i(x)`.
pub fn spline_eval(grid: &SplineGrid, coeffs: &SplineCoefficients, x: f64) -> Result<f64> {
    if coeffs.len() != grid.basis_count() {
        return Err(KanError::LengthMismatch { expected: grid.basis_count(), got: coeffs.len() });
    }
    let mut local = [0.0f64; MAX_DEGREE + 1];
    let first = grid.local_basis(x, &mut local);
    Ok(local[..=grid.degree()]
        .iter()
        .zip(&coeffs.as_slice()[first..])
        .map(|(b, c)| b * c)
        .sum())
}

/// `s'(x)`; zero outside the grid range.
pub fn spline_eval_deriv(grid: &SplineGrid, coeffs: &SplineCoefficients, x: f64) -> Result<f64> {
    if coeffs.len() != grid.basis_count() {
        return Err(KanError::LengthMismatch { expected: grid.basis_count(), got: coeffs.len() });
    }
    let mut local = [0.0f64; MAX_DEGREE + 1];
    let first = grid.local_basis_deriv(x, &mut local);
    Ok(local[..=grid.degree()]
        .iter()
        .zip(&coeffs.as_slice()[first..])
        .map(|(b, c)| b * c)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Textbook recursive Cox-de Boor. The last interval of the range is closed on
    /// the right, so the interval after it starts open.
    fn naive_basis(t: &[f64], i: usize, k: usize, x: f64, last_interval: usize) -> f64 {
        if k == 0 {
            let inside = if i == last_interval {
                t[i] <= x && x <= t[i + 1]
            } else if i == last_interval + 1 {
                t[i] < x && x < t[i + 1]
            } else {
                t[i] <= x && x < t[i + 1]
            };
            return if inside { 1.0 } else { 0.0 };
        }
        let mut v = 0.0;
        let d1 = t[i + k] - t[i];
        if d1 > 0.0 {
            v += (x - t[i]) / d1 * naive_basis(t, i, k - 1, x, last_interval);
        }
        let d2 = t[i + k + 1] - t[i + 1];
        if d2 > 0.0 {
            v += (t[i + k + 1] - x) / d2 * naive_basis(t, i + 1, k - 1, x, last_interval);
        }
        v
    }

    fn naive_all(grid: &SplineGrid, x: f64) -> Vec<f64> {
        let last = grid.intervals() + grid.degree() - 1;
        (0..grid.basis_count())
            .map(|i| naive_basis(grid.knots(), i, grid.degree(), x, last))
            .collect()
    }

    #[test]
    fn default_grid_knots() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        assert_eq!(g.knots().len(), 12);
        assert_eq!(g.basis_count(), 8);
        for (j, t) in g.knots().iter().enumerate() {
            assert_abs_diff_eq!(*t, -6.6 + 1.2 * j as f64, epsilon = 1e-12);
        }
        assert_eq!(g.knots()[3], -3.0);
        assert_eq!(g.knots()[8], 3.0);
    }

    #[test]
    fn degenerate_single_interval() {
        let g = SplineGrid::new(0.0, 1.0, 1, 0).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0]);
        assert_eq!(g.basis_count(), 1);
        assert_eq!(g.basis_eval(0.3), vec![1.0]);
        assert_eq!(g.basis_eval(1.0), vec![1.0]);
    }

    #[test]
    fn count_formulas() {
        let g = SplineGrid::new(-1.0, 1.0, 4, 2).unwrap();
        assert_eq!(g.basis_count(), 6);
        assert_eq!(g.knots().len(), 9);
    }

    #[test]
    fn invalid_grids() {
        assert!(matches!(SplineGrid::new(1.0, 1.0, 3, 3), Err(KanError::InvalidRange { .. })));
        assert!(matches!(SplineGrid::new(2.0, 1.0, 3, 3), Err(KanError::InvalidRange { .. })));
        assert!(matches!(SplineGrid::new(0.0, 1.0, 0, 3), Err(KanError::InvalidIntervals)));
    }

    #[test]
    fn degree_zero_indicator() {
        let g = SplineGrid::new(0.0, 2.0, 2, 0).unwrap();
        assert_eq!(g.knots(), &[0.0, 1.0, 2.0]);
        assert_eq!(g.basis_eval(0.5), vec![1.0, 0.0]);
        assert_eq!(g.basis_eval(1.5), vec![0.0, 1.0]);
    }

    #[test]
    fn matches_recursive_oracle_at_zero() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        let fast = g.basis_eval(0.0);
        let slow = naive_all(&g, 0.0);
        // x = 0 sits mid-interval [-0.6, 0.6]: the cubic B-spline values there are
        // 1/48, 23/48, 23/48, 1/48 on basis indices 2..=5.
        let expected = [0.0, 0.0, 1.0 / 48.0, 23.0 / 48.0, 23.0 / 48.0, 1.0 / 48.0, 0.0, 0.0];
        for i in 0..8 {
            assert_abs_diff_eq!(fast[i], slow[i], epsilon = 1e-14);
            assert_abs_diff_eq!(slow[i], expected[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn matches_recursive_oracle_on_sweep() {
        for (min, max, g, k) in [(-3.0, 3.0, 5, 3), (-1.0, 1.0, 4, 2), (0.0, 1.0, 3, 1), (-2.0, 5.0, 7, 4)] {
            let grid = SplineGrid::new(min, max, g, k).unwrap();
            for s in 0..=200 {
                let x = min + (max - min) * s as f64 / 200.0;
                let fast = grid.basis_eval(x);
                let slow = naive_all(&grid, x);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12, "grid {min} {max} {g} {k} x={x} fast={fast:?} slow={slow:?}");
                }
            }
        }
    }

    #[test]
    fn hat_function_slope() {
        // degree 1 on [0, 4] with 4 intervals: knots -1, 0, 1, 2, 3, 4, 5.
        let g = SplineGrid::new(0.0, 4.0, 4, 1).unwrap();
        let d = g.basis_eval_deriv(1.5);
        // basis 2 is the hat on [1, 3], rising on [1, 2].
        assert_abs_diff_eq!(d[2], 1.0 / g.step(), epsilon = 1e-12);
        assert_abs_diff_eq!(d[1], -1.0 / g.step(), epsilon = 1e-12);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        let h = 1e-6;
        let d = g.basis_eval_deriv(0.7);
        let plus = g.basis_eval(0.7 + h);
        let minus = g.basis_eval(0.7 - h);
        for i in 0..8 {
            assert_abs_diff_eq!(d[i], (plus[i] - minus[i]) / (2.0 * h), epsilon = 1e-5);
        }
        assert_abs_diff_eq!(d.iter().sum::<f64>(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn derivative_zero_outside_range() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        assert!(g.basis_eval_deriv(3.5).iter().all(|&d| d == 0.0));
        assert!(g.basis_eval_deriv(-10.0).iter().all(|&d| d == 0.0));
    }

    #[test]
    fn constant_and_one_hot_coefficients() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        let twos = SplineCoefficients::for_grid(&g, vec![2.0; 8]).unwrap();
        assert_abs_diff_eq!(spline_eval(&g, &twos, 0.37).unwrap(), 2.0, epsilon = 1e-12);
        let basis = g.basis_eval(-1.3);
        for j in 0..8 {
            let mut c = vec![0.0; 8];
            c[j] = 1.0;
            let c = SplineCoefficients::for_grid(&g, c).unwrap();
            assert_eq!(spline_eval(&g, &c, -1.3).unwrap(), basis[j]);
        }
    }

    #[test]
    fn greville_reproduces_identity() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        let c = SplineCoefficients::for_grid(&g, g.greville_abscissae().unwrap()).unwrap();
        for s in 0..100 {
            let x = -3.0 + 6.0 * s as f64 / 99.0;
            assert_abs_diff_eq!(spline_eval(&g, &c, x).unwrap(), x, epsilon = 1e-9);
        }
    }

    #[test]
    fn clamping_is_exact_beyond_range() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        let c = SplineCoefficients::for_grid(&g, (0..8).map(|i| (i as f64).sin()).collect()).unwrap();
        let edge = spline_eval(&g, &c, 3.0).unwrap();
        assert_eq!(spline_eval(&g, &c, 3.0001).unwrap(), edge);
        assert_eq!(spline_eval(&g, &c, 1e6).unwrap(), edge);
        assert_eq!(spline_eval(&g, &c, -7.0).unwrap(), spline_eval(&g, &c, -3.0).unwrap());
    }

    #[test]
    fn length_mismatch() {
        let g = SplineGrid::new(-3.0, 3.0, 5, 3).unwrap();
        let c = SplineCoefficients::new(vec![1.0; 5]).unwrap();
        assert!(matches!(spline_eval(&g, &c, 0.0), Err(KanError::LengthMismatch { expected: 8, got: 5 })));
        assert!(SplineCoefficients::new(vec![f64::NAN]).is_err());
    }
}
