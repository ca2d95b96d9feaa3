//! Symmetric positive definite matrices in variable-band (skyline) storage,
//! with an in-place Cholesky factorization.

use crate::error::{Error, Result};

/// Lower triangle stored row by row, from the first structurally nonzero
/// column of each row up to the diagonal.
#[derive(Clone, Debug)]
pub(crate) struct SkylineMatrix {
    first: Vec<usize>,
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineMatrix {
    /// `first[i]` is the leftmost column that row `i` may touch (`first[i] <= i`).
    pub fn new(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        SkylineMatrix {
            first,
            offset,
            values: vec![0.0; total],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i]);
        self.offset[i] + j - self.first[i]
    }

    /// Adds `v` to entry `(i, j)` of the symmetric matrix.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        let k = self.index(i, j);
        self.values[k] += v;
    }

    #[cfg(test)]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if j < self.first[i] {
            0.0
        } else {
            self.values[self.index(i, j)]
        }
    }

    /// Overwrites the matrix with its Cholesky factor `L` (`A = L Lᵀ`).
    pub fn factorize(mut self) -> Result<SkylineCholesky> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..=i {
                let fj = self.first[j];
                let start = fi.max(fj);
                let mut s = self.values[self.index(i, j)];
                let row_i = &self.values[self.offset[i]..self.offset[i + 1]];
                let row_j = &self.values[self.offset[j]..self.offset[j + 1]];
                let a = &row_i[start - fi..j - fi];
                let b = &row_j[start - fj..j - fj];
                s -= a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                if j < i {
                    let d = self.values[self.index(j, j)];
                    let k = self.index(i, j);
                    self.values[k] = s / d;
                } else {
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(Error::Singular(format!(
                            "non-positive pivot {s:e} at row {i} of {n}"
                        )));
                    }
                    let k = self.index(i, i);
                    self.values[k] = s.sqrt();
                }
            }
        }
        Ok(SkylineCholesky { factor: self })
    }
}

#[derive(Clone, Debug)]
pub(crate) struct SkylineCholesky {
    factor: SkylineMatrix,
}

impl SkylineCholesky {
    pub fn solve_in_place(&self, x: &mut [f64]) {
        let m = &self.factor;
        let n = m.dim();
        assert_eq!(x.len(), n);
        // L y = b
        for i in 0..n {
            let fi = m.first[i];
            let row = &m.values[m.offset[i]..m.offset[i + 1]];
            let s: f64 = row[..i - fi]
                .iter()
                .zip(&x[fi..i])
                .map(|(a, b)| a * b)
                .sum();
            x[i] = (x[i] - s) / row[i - fi];
        }
        // Lᵀ x = y, column-oriented sweep.
        for i in (0..n).rev() {
            let fi = m.first[i];
            let row = &m.values[m.offset[i]..m.offset[i + 1]];
            x[i] /= row[i - fi];
            let xi = x[i];
            for (xj, a) in x[fi..i].iter_mut().zip(&row[..i - fi]) {
                *xj -= a * xi;
            }
        }
    }
}
