//! Discretized Fréchet derivative of the measurement matrix with respect to
//! pixelwise conductivity changes.
//!
//! For pixel `P` the `L × L` block is
//! `S_P(j, l) = −(1/I) Σ_{T ⊂ P} |T| ∇u⁽ʲ⁾|_T · ∇u⁽ˡ⁾|_T`
//! with `u⁽ʲ⁾` the background potentials at drive current `I`. The `1/I`
//! makes `S` the derivative of `U` itself (volts per S/m).

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{ConductivityField, ForwardSolver, PatternSolution};
use crate::geometry::{DiskMesh, PixelGrid};
use crate::protocol::DifferenceFrame;

#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTensor {
    matrices: Vec<DMatrix<f64>>,
    n_electrodes: usize,
    background: f64,
    current: f64,
}

/// Runs the `L` background solves and assembles one block per pixel.
pub fn assemble_sensitivity(
    mesh: &DiskMesh,
    grid: &PixelGrid,
    background: f64,
    current: f64,
) -> Result<SensitivityTensor> {
    if !(current.is_finite() && current > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "drive current must be positive, got {current}"
        )));
    }
    let field = ConductivityField::uniform(mesh.n_triangles(), background)?;
    let solutions = ForwardSolver::new(mesh, &field)?.solve_all(current)?;
    sensitivity_from_solutions(mesh, grid, &solutions, background, current)
}

/// Assembly from precomputed background potentials.
pub fn sensitivity_from_solutions(
    mesh: &DiskMesh,
    grid: &PixelGrid,
    solutions: &[PatternSolution],
    background: f64,
    current: f64,
) -> Result<SensitivityTensor> {
    let l = solutions.len();
    if l != mesh.n_electrodes() {
        return Err(Error::Dimension(format!(
            "{l} pattern solutions for {} electrodes",
            mesh.n_electrodes()
        )));
    }
    if grid.triangle_pixel().len() != mesh.n_triangles() {
        return Err(Error::Dimension("pixel grid was built on another mesh".into()));
    }
    let gradients = pattern_gradients(mesh, solutions);
    let matrices = (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let mut s = DMatrix::<f64>::zeros(l, l);
            for &t in grid.pixel_triangles(p) {
                let w = -mesh.triangle_area(t) / current;
                let g = &gradients[t];
                for j in 0..l {
                    for m in j..l {
                        s[(j, m)] += w * (g[j][0] * g[m][0] + g[j][1] * g[m][1]);
                    }
                }
            }
            for j in 0..l {
                for m in 0..j {
                    s[(j, m)] = s[(m, j)];
                }
            }
            s
        })
        .collect();
    Ok(SensitivityTensor {
        matrices,
        n_electrodes: l,
        background,
        current,
    })
}

/// `∇u⁽ʲ⁾` on every triangle, indexed `[triangle][pattern]`.
pub fn pattern_gradients(mesh: &DiskMesh, solutions: &[PatternSolution]) -> Vec<Vec<[f64; 2]>> {
    (0..mesh.n_triangles())
        .map(|t| {
            solutions
                .iter()
                .map(|s| mesh.field_gradient(t, &s.nodal))
                .collect()
        })
        .collect()
}

impl SensitivityTensor {
    /// Wraps explicit per-pixel blocks (e.g. read back from a dump).
    pub fn from_blocks(
        matrices: Vec<DMatrix<f64>>,
        background: f64,
        current: f64,
    ) -> Result<Self> {
        let l = matrices.first().map_or(0, |m| m.nrows());
        if matrices.iter().any(|m| m.nrows() != l || m.ncols() != l) {
            return Err(Error::Dimension("sensitivity blocks must all be L x L".into()));
        }
        Ok(SensitivityTensor {
            matrices,
            n_electrodes: l,
            background,
            current,
        })
    }

    /// Inverse of [`vectorize`](Self::vectorize).
    pub fn from_vectorized(s: &DMatrix<f64>, n_electrodes: usize) -> Result<Self> {
        if s.nrows() != n_electrodes * n_electrodes {
            return Err(Error::Dimension(format!(
                "{} rows for {} electrodes",
                s.nrows(),
                n_electrodes
            )));
        }
        let matrices = s
            .column_iter()
            .map(|c| DMatrix::from_column_slice(n_electrodes, n_electrodes, c.as_slice()))
            .collect();
        Ok(SensitivityTensor {
            matrices,
            n_electrodes,
            background: f64::NAN,
            current: f64::NAN,
        })
    }

    pub fn n_pixels(&self) -> usize {
        self.matrices.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn pixel(&self, k: usize) -> &DMatrix<f64> {
        &self.matrices[k]
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.matrices
    }

    /// `L² × P` matrix whose column `k` is block `k` flattened with the data
    /// index map `(l−1)L + k` (column-major).
    pub fn vectorize(&self) -> DMatrix<f64> {
        let rows = self.n_electrodes * self.n_electrodes;
        let mut s = DMatrix::zeros(rows, self.matrices.len());
        for (k, m) in self.matrices.iter().enumerate() {
            s.column_mut(k).copy_from_slice(m.as_slice());
        }
        s
    }

    /// Text dump: one block per pixel, headed `pixel <k>`, `L` rows of `L` values.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# sensitivity blocks: {} pixels, {} electrodes, background {:e}, current {:e}",
            self.matrices.len(),
            self.n_electrodes,
            self.background,
            self.current
        )?;
        for (k, m) in self.matrices.iter().enumerate() {
            writeln!(w, "pixel {k}")?;
            for row in m.row_iter() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "{}", line.join(" "))?;
            }
        }
        Ok(())
    }
}

pub fn vectorize(s: &SensitivityTensor) -> DMatrix<f64> {
    s.vectorize()
}

pub fn vectorize_frame(v: &DifferenceFrame) -> DVector<f64> {
    v.vectorize()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::measure_full;
    use crate::geometry::{build_mesh, build_pixel_grid, MeshParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(level: usize, n_side: usize) -> (DiskMesh, PixelGrid) {
        let mesh = build_mesh(&MeshParams {
            radius: 1.0,
            n_electrodes: 16,
            electrode_arc_fraction: 0.0159,
            refinement_level: level,
        })
        .unwrap();
        let grid = build_pixel_grid(&mesh, n_side).unwrap();
        (mesh, grid)
    }

    #[test]
    fn blocks_are_symmetric_and_negative_semidefinite() {
        let (mesh, grid) = setup(2, 12);
        let s = assemble_sensitivity(&mesh, &grid, 1.0, 1e-3).unwrap();
        for k in 0..s.n_pixels() {
            let m = s.pixel(k);
            assert_eq!(m, &m.transpose());
            let norm = m.norm();
            let largest = m.symmetric_eigenvalues().max();
            assert!(largest <= 1e-10 * norm, "pixel {k}: {largest:e} vs {norm:e}");
            // Constants lie in the kernel.
            let ones = DVector::from_element(16, 1.0);
            assert!((m * ones).norm() <= 1e-10 * norm);
        }
    }

    #[test]
    fn blocks_add_up_to_the_whole_domain() {
        let (mesh, grid) = setup(1, 6);
        let field = ConductivityField::uniform(mesh.n_triangles(), 1.0).unwrap();
        let solutions = ForwardSolver::new(&mesh, &field).unwrap().solve_all(1.0).unwrap();
        let s = sensitivity_from_solutions(&mesh, &grid, &solutions, 1.0, 1.0).unwrap();
        let total: DMatrix<f64> = s.blocks().iter().sum();
        // −∫_Ω ∇u⁽ʲ⁾·∇u⁽ˡ⁾ = −U(j, l)/σ₀ at unit current.
        let frame = measure_full(&mesh, &field, 1.0).unwrap();
        let expected = -frame.values();
        assert!((&total - &expected).abs().max() <= 1e-9 * expected.abs().max());
    }

    #[test]
    fn finite_differences_match_blocks() {
        let (mesh, grid) = setup(2, 12);
        let current = 1e-3;
        let s = assemble_sensitivity(&mesh, &grid, 1.0, current).unwrap();
        let base = ConductivityField::uniform(mesh.n_triangles(), 1.0).unwrap();
        let u0 = measure_full(&mesh, &base, current).unwrap();
        let eps = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let k = rng.random_range(0..grid.len());
            let values: Vec<f64> = (0..mesh.n_triangles())
                .map(|t| 1.0 + if grid.triangle_pixel()[t] == Some(k) { eps } else { 0.0 })
                .collect();
            let u1 = measure_full(&mesh, &ConductivityField::new(values).unwrap(), current).unwrap();
            let fd = (u1.values() - u0.values()) / eps;
            let block = s.pixel(k);
            for j in 0..16 {
                for l in 0..16 {
                    let (a, b) = (fd[(j, l)], block[(j, l)]);
                    assert!((a - b).abs() <= 0.02 * b.abs(), "pixel {k} ({j},{l}): {a:e} vs {b:e}");
                }
            }
        }
    }

    #[test]
    fn rotation_permutes_pixel_blocks() {
        // Four electrodes: a quarter turn maps the square grid onto itself. Pixel
        // membership of triangles whose barycenters sit on cell edges breaks the
        // symmetry slightly.
        let mesh = build_mesh(&MeshParams {
            radius: 1.0,
            n_electrodes: 4,
            electrode_arc_fraction: 0.05,
            refinement_level: 2,
        })
        .unwrap();
        let grid = build_pixel_grid(&mesh, 8).unwrap();
        let s = assemble_sensitivity(&mesh, &grid, 1.0, 1.0).unwrap();
        let n = grid.n_side();
        let mut checked = 0;
        for p in 0..grid.len() {
            let (row, col) = grid.cells()[p];
            // (x, y) → (−y, x) on cells: (row, col) → (n−1−col, row).
            let Some(q) = grid.pixel_at(n - 1 - col, row) else { continue };
            let (a, b) = (s.pixel(p), s.pixel(q));
            let scale = a.abs().max();
            for j in 0..4 {
                for l in 0..4 {
                    let rotated = b[((j + 1) % 4, (l + 1) % 4)];
                    assert!(
                        (a[(j, l)] - rotated).abs() <= 0.05 * scale,
                        "pixel {p}->{q}: {} vs {rotated}",
                        a[(j, l)]
                    );
                }
            }
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn sensitivity_scales_linearly_with_current() {
        let (mesh, grid) = setup(1, 6);
        let a = assemble_sensitivity(&mesh, &grid, 1.0, 1e-3).unwrap();
        let b = assemble_sensitivity(&mesh, &grid, 1.0, 3e-3).unwrap();
        for k in 0..a.n_pixels() {
            let diff = (a.pixel(k) * 3.0 - b.pixel(k)).abs().max();
            assert!(diff <= 1e-10 * b.pixel(k).abs().max());
        }
    }

    #[test]
    fn vectorize_round_trips() {
        let (mesh, grid) = setup(1, 6);
        let s = assemble_sensitivity(&mesh, &grid, 1.0, 1.0).unwrap();
        let v = vectorize(&s);
        assert_eq!(v.shape(), (256, grid.len()));
        let back = SensitivityTensor::from_vectorized(&v, 16).unwrap();
        assert_eq!(back.blocks(), s.blocks());
        // (k = 2, l = 3), 1-based, lands at row (3 − 1)·L + 2.
        assert_eq!(v[((3 - 1) * 16 + 2 - 1, 0)], s.pixel(0)[(1, 2)]);

        let zero = SensitivityTensor::from_blocks(vec![DMatrix::zeros(16, 16); 3], 1.0, 1.0).unwrap();
        assert!(zero.vectorize().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn text_dump_has_one_block_per_pixel() {
        let (mesh, grid) = setup(0, 2);
        let s = assemble_sensitivity(&mesh, &grid, 1.0, 1.0).unwrap();
        let mut out = Vec::new();
        s.write_text(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.matches("pixel ").count(), grid.len());
    }
}
