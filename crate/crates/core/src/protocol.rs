//! From device-style partial frames to the symmetric difference matrix `V`.
//!
//! Completion fills the entries `|k − l| ≤ 1` of every row with a periodic
//! cubic spline through the row's known values (in the measurement index),
//! shifts the row to zero sum, and takes the symmetric part. A final double
//! centering restores zero row sums lost in the symmetrization; it is a no-op
//! for frames that are already consistent.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::forward::{adjacent_mask, MeasurementFrame};

/// Least-squares scale `c` minimizing `‖c·measured − model‖₂`.
pub fn calibrate_scale(measured: &[f64], model: &[f64]) -> Result<f64> {
    if measured.len() != model.len() {
        return Err(Error::Dimension(format!(
            "measured has {} entries, model {}",
            measured.len(),
            model.len()
        )));
    }
    if measured.iter().chain(model).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("calibration input".into()));
    }
    let mm: f64 = measured.iter().map(|m| m * m).sum();
    if mm == 0.0 {
        return Err(Error::InvalidArgument("measured vector is zero".into()));
    }
    let mo: f64 = measured.iter().zip(model).map(|(a, b)| a * b).sum();
    Ok(mo / mm)
}

/// Calibration over the entries valid in both frames.
pub fn calibrate_frames(measured: &MeasurementFrame, model: &MeasurementFrame) -> Result<f64> {
    let (a, b) = paired_entries(measured, model)?;
    calibrate_scale(&a, &b)
}

/// `‖c·measured − model‖₂` over the entries valid in both frames.
pub fn calibration_residual(
    measured: &MeasurementFrame,
    model: &MeasurementFrame,
    scale: f64,
) -> Result<f64> {
    let (a, b) = paired_entries(measured, model)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| (scale * x - y).powi(2))
        .sum::<f64>()
        .sqrt())
}

fn paired_entries(a: &MeasurementFrame, b: &MeasurementFrame) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = a.n_electrodes();
    if b.n_electrodes() != n {
        return Err(Error::Dimension(format!(
            "frames have {} and {} electrodes",
            n,
            b.n_electrodes()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for k in 0..n {
        for l in 0..n {
            if a.is_valid(k, l) && b.is_valid(k, l) {
                xs.push(a.values()[(k, l)]);
                ys.push(b.values()[(k, l)]);
            }
        }
    }
    Ok((xs, ys))
}

/// Periodic cubic spline through `(knots[i], values[i])` with period `period`.
#[derive(Clone, Debug)]
pub struct PeriodicSpline {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
    period: f64,
}

impl PeriodicSpline {
    /// `knots` must be strictly increasing and span less than one period.
    pub fn new(knots: &[f64], values: &[f64], period: f64) -> Result<Self> {
        let n = knots.len();
        if n == 0 || values.len() != n {
            return Err(Error::InvalidArgument(
                "spline needs matching, non-empty knots and values".into(),
            ));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) || knots[n - 1] - knots[0] >= period {
            return Err(Error::InvalidArgument(
                "spline knots must increase within one period".into(),
            ));
        }
        let mut second = vec![0.0; n];
        if n >= 2 {
            let h = |i: usize| {
                if i + 1 < n {
                    knots[i + 1] - knots[i]
                } else {
                    knots[0] + period - knots[n - 1]
                }
            };
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut rhs = DVector::<f64>::zeros(n);
            for i in 0..n {
                let prev = (i + n - 1) % n;
                let next = (i + 1) % n;
                let (hp, hi) = (h(prev), h(i));
                a[(i, prev)] += hp;
                a[(i, i)] += 2.0 * (hp + hi);
                a[(i, next)] += hi;
                rhs[i] = 6.0 * ((values[next] - values[i]) / hi - (values[i] - values[prev]) / hp);
            }
            let sol = a
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("periodic spline system".into()))?;
            second.copy_from_slice(sol.as_slice());
        }
        Ok(PeriodicSpline {
            knots: knots.to_vec(),
            values: values.to_vec(),
            second,
            period,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if n == 1 {
            return self.values[0];
        }
        let x0 = self.knots[0];
        let x = x0 + (x - x0).rem_euclid(self.period);
        let i = self.knots.partition_point(|&k| k <= x).saturating_sub(1);
        let (xl, xr) = if i + 1 < n {
            (self.knots[i], self.knots[i + 1])
        } else {
            (self.knots[i], x0 + self.period)
        };
        let j = (i + 1) % n;
        let h = xr - xl;
        let (ml, mr) = (self.second[i], self.second[j]);
        let (yl, yr) = (self.values[i], self.values[j]);
        let (a, b) = (xr - x, x - xl);
        ml * a.powi(3) / (6.0 * h)
            + mr * b.powi(3) / (6.0 * h)
            + (yl / h - ml * h / 6.0) * a
            + (yr / h - mr * h / 6.0) * b
    }
}

/// Fills the driving-electrode entries and enforces conservation and reciprocity.
///
/// Accepts frames that are either complete or missing exactly the entries
/// with `|k − l| ≤ 1` (mod `L`). The returned frame is complete, symmetric
/// and has zero row sums.
///
/// Missing entries start from a periodic cubic spline through the known
/// entries of their row. Reciprocity pairs them up into `L` diagonal values
/// `U(k,k)` and `L` shared off-diagonal values `U(k,k+1) = U(k+1,k)`, which
/// then receive the smallest correction that makes every row sum to zero.
/// Known entries only get averaged with their reciprocal partner. A complete
/// frame is symmetrized and double-centered instead.
pub fn complete_frame(frame: &MeasurementFrame) -> Result<MeasurementFrame> {
    let n = frame.n_electrodes();
    if frame.is_complete() {
        let x = symmetric_part(frame.values());
        let x = symmetric_part(&double_center(&x));
        return Ok(MeasurementFrame::full(x, frame.current_amplitude()));
    }
    if frame.valid_mask() != adjacent_mask(n).as_slice() {
        return Err(Error::Frame(
            "only adjacent-protocol masks (|k-l| <= 1 missing) can be completed".into(),
        ));
    }
    if n < 4 {
        return Err(Error::Frame(format!("{n} electrodes leave no entries to interpolate from")));
    }
    // Masked entries are zero on both sides, so this only touches known pairs.
    let mut x = symmetric_part(frame.values());
    let known = n - 3;
    for k in 0..n {
        let knots: Vec<f64> = (0..known).map(|j| (k + 2 + j) as f64).collect();
        let values: Vec<f64> = (0..known).map(|j| x[(k, (k + 2 + j) % n)]).collect();
        let spline = PeriodicSpline::new(&knots, &values, n as f64)?;
        for offset in [n - 1, n, n + 1] {
            x[(k, (k + offset) % n)] = spline.eval((k + offset) as f64);
        }
    }

    // Unknowns z = (d_0..d_{n-1}, o_0..o_{n-1}) with d_k = U(k,k) and
    // o_k = U(k,k+1); row k needs o_{k-1} + d_k + o_k = -(sum of known entries).
    let next = |k: usize| (k + 1) % n;
    let prev = |k: usize| (k + n - 1) % n;
    let d: Vec<f64> = (0..n).map(|k| x[(k, k)]).collect();
    let o: Vec<f64> = (0..n).map(|k| 0.5 * (x[(k, next(k))] + x[(next(k), k)])).collect();
    let residual = DVector::from_fn(n, |k, _| {
        let known_sum: f64 = (2..n - 1).map(|j| x[(k, (k + j) % n)]).sum();
        -known_sum - (o[prev(k)] + d[k] + o[k])
    });
    // C Cᵀ is circulant with 3 on the diagonal and 1 on both neighbours.
    let mut gram = DMatrix::<f64>::identity(n, n) * 3.0;
    for k in 0..n {
        gram[(k, next(k))] += 1.0;
        gram[(k, prev(k))] += 1.0;
    }
    let lambda = gram
        .lu()
        .solve(&residual)
        .ok_or_else(|| Error::Singular("conservation correction".into()))?;
    for k in 0..n {
        let dk = d[k] + lambda[k];
        let ok = o[k] + lambda[k] + lambda[next(k)];
        x[(k, k)] = dk;
        x[(k, next(k))] = ok;
        x[(next(k), k)] = ok;
    }
    Ok(MeasurementFrame::full(x, frame.current_amplitude()))
}

fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn double_center(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let rows = m.column_sum() / n;
    let cols = m.row_sum() / n;
    let total = m.sum() / (n * n);
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] - rows[i] - cols[j] + total)
}

/// Difference data `V` with its noise-level estimate `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct DifferenceFrame {
    matrix: DMatrix<f64>,
    delta: f64,
}

impl DifferenceFrame {
    /// Symmetrizes `m` and sets `delta = max(0, −λ_min)`.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "difference matrix is {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("difference matrix".into()));
        }
        let matrix = symmetric_part(&m);
        let delta = if matrix.is_empty() {
            0.0
        } else {
            let lambda_min = matrix.symmetric_eigenvalues().min();
            (-lambda_min).max(0.0)
        };
        Ok(DifferenceFrame { matrix, delta })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n_electrodes(&self) -> usize {
        self.matrix.nrows()
    }

    /// Long-vector form, `V[(l−1)L + k] = V(k, l)` (column-major).
    pub fn vectorize(&self) -> DVector<f64> {
        DVector::from_column_slice(self.matrix.as_slice())
    }
}

/// `V = scale · (inhom − hom)` from two completed frames.
pub fn build_difference(
    hom: &MeasurementFrame,
    inhom: &MeasurementFrame,
    scale: f64,
) -> Result<DifferenceFrame> {
    if hom.n_electrodes() != inhom.n_electrodes() {
        return Err(Error::Dimension(format!(
            "frames have {} and {} electrodes",
            hom.n_electrodes(),
            inhom.n_electrodes()
        )));
    }
    if !hom.is_complete() || !inhom.is_complete() {
        return Err(Error::Frame("difference needs completed frames".into()));
    }
    if !scale.is_finite() {
        return Err(Error::NonFinite("scale factor".into()));
    }
    DifferenceFrame::from_matrix((inhom.values() - hom.values()) * scale)
}
