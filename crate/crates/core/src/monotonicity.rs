//! Monotonicity-based bounds on the pixelwise conductivity change.
//!
//! `β_k = max{α ≥ 0 : |V| + δI + α S_k ≥ 0}` in the definiteness order, found
//! from `A = |V| + δI = LLᵀ` as `−1/λ_min(L⁻¹ S_k L⁻ᵀ)`.
//!
//! Difference data and sensitivity blocks both annihilate constant electrode
//! vectors. When that holds, everything is restricted to the orthogonal
//! complement of the constants before factorizing, which keeps `A` definite
//! for exact data (`δ = 0`) without changing any `β_k`.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{ConductivityField, PatternSolution, Polarity};
use crate::geometry::{DiskMesh, PixelGrid};
use crate::protocol::DifferenceFrame;
use crate::sensitivity::{pattern_gradients, SensitivityTensor};

const SYMMETRY_TOL: f64 = 1e-10;
const NSD_TOL: f64 = 1e-10;
const INFINITE_TOL: f64 = 1e-14;
const CERTIFICATE_TOL: f64 = 1e-8;
/// Relative size of `M·1` below which constants count as a kernel vector.
const KERNEL_TOL: f64 = 1e-8;

/// `Q|Λ|Qᵀ` for `M = QΛQᵀ`.
pub fn matrix_abs(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    if m.is_empty() {
        return Ok(m.clone());
    }
    let eig = symmetrized(m).symmetric_eigen();
    let abs = eig.eigenvalues.map(f64::abs);
    let q = &eig.eigenvectors;
    Ok(symmetrized(&(q * DMatrix::from_diagonal(&abs) * q.transpose())))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{}x{} matrix", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix entries".into()));
    }
    let norm = m.norm();
    let asymmetry = (m - m.transpose()).norm();
    if asymmetry > SYMMETRY_TOL * norm {
        return Err(Error::NotSymmetric { asymmetry, norm });
    }
    Ok(())
}

fn symmetrized(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    symmetrized(m).symmetric_eigenvalues().min()
}

/// Cholesky factor of `A`, shared by all per-pixel `β_k` computations.
#[derive(Clone, Debug)]
pub struct DefiniteFactor {
    a: DMatrix<f64>,
    /// `None` when `A = 0`.
    l: Option<DMatrix<f64>>,
    norm: f64,
}

impl DefiniteFactor {
    pub fn new(a: &DMatrix<f64>) -> Result<Self> {
        check_symmetric(a)?;
        let a = symmetrized(a);
        let norm = a.norm();
        if norm == 0.0 {
            return Ok(DefiniteFactor { a, l: None, norm });
        }
        let chol = a.clone().cholesky().ok_or_else(|| {
            Error::NotPositiveDefinite(format!(
                "A (norm {norm:e}) is not positive definite; the noise level delta is too small"
            ))
        })?;
        Ok(DefiniteFactor {
            l: Some(chol.l()),
            a,
            norm,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// `β = max{α ≥ 0 : A + α S ≥ 0}`, `f64::INFINITY` when unbounded.
    pub fn beta(&self, s: &DMatrix<f64>) -> Result<f64> {
        check_symmetric(s)?;
        if s.shape() != self.a.shape() {
            return Err(Error::Dimension(format!(
                "S is {}x{}, A is {}x{}",
                s.nrows(),
                s.ncols(),
                self.a.nrows(),
                self.a.ncols()
            )));
        }
        let s = clamp_nsd(s)?;
        let s_norm = s.norm();
        let Some(l) = &self.l else {
            return Ok(if s_norm == 0.0 { f64::INFINITY } else { 0.0 });
        };
        // L⁻¹ S L⁻ᵀ = L⁻¹ (L⁻¹ S)ᵀ since S is symmetric.
        let half = l
            .solve_lower_triangular(&s)
            .ok_or_else(|| Error::Singular("triangular solve with the Cholesky factor".into()))?;
        let m = l
            .solve_lower_triangular(&half.transpose())
            .ok_or_else(|| Error::Singular("triangular solve with the Cholesky factor".into()))?;
        let m = symmetrized(&m);
        let lambda = m.symmetric_eigenvalues().min();
        if lambda.is_nan() || lambda >= -INFINITE_TOL * m.norm() {
            return Ok(f64::INFINITY);
        }
        let beta = -1.0 / lambda;
        self.certify(&s, beta)?;
        Ok(beta)
    }

    /// Checks that `A + α S` is positive semi-definite to relative `1e-8`.
    pub fn certify(&self, s: &DMatrix<f64>, alpha: f64) -> Result<()> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Ok(());
        }
        let smallest = smallest_eigenvalue(&(&self.a + s * alpha));
        if smallest < -CERTIFICATE_TOL * self.norm {
            return Err(Error::Certificate { smallest });
        }
        Ok(())
    }
}

/// Rejects clearly indefinite `S` and zeroes its tiny positive eigenvalues.
fn clamp_nsd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let norm = s.norm();
    if norm == 0.0 {
        return Ok(s.clone());
    }
    let eig = symmetrized(s).symmetric_eigen();
    let largest = eig.eigenvalues.max();
    if largest > NSD_TOL * norm {
        return Err(Error::NotNegativeSemiDefinite { largest, norm });
    }
    if largest <= 0.0 {
        return Ok(symmetrized(s));
    }
    let clamped = eig.eigenvalues.map(|v| v.min(0.0));
    let q = &eig.eigenvectors;
    Ok(symmetrized(&(q * DMatrix::from_diagonal(&clamped) * q.transpose())))
}

/// `max{α ≥ 0 : A + α S ≥ 0}` for SPD `A` and NSD `S`.
pub fn compute_beta(s: &DMatrix<f64>, a: &DMatrix<f64>) -> Result<f64> {
    DefiniteFactor::new(a)?.beta(s)
}

/// Orthonormal basis of the vectors with zero sum (Helmert columns).
pub fn zero_sum_basis(n: usize) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n.saturating_sub(1));
    for j in 1..n {
        let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            q[(i, j - 1)] = scale;
        }
        q[(j, j - 1)] = -(j as f64) * scale;
    }
    q
}

fn annihilates_constants(m: &DMatrix<f64>) -> bool {
    let norm = m.norm();
    let ones = DVector::from_element(m.ncols(), 1.0);
    (m * ones).norm() <= KERNEL_TOL * norm * (m.ncols() as f64).sqrt()
}

/// Per-pixel bounds on `κ` for one polarity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    /// `β_k`, `+∞` when the definiteness test never binds.
    pub beta: Vec<f64>,
    pub a_plus: f64,
    pub a_minus: f64,
    pub polarity: Polarity,
    /// `min(a±, β_k)`, further limited by `manual_cap` when set.
    pub upper: Vec<f64>,
    pub delta: f64,
    pub manual_cap: Option<f64>,
}

/// `a₊ = σ₀ − σ₀²/(σ₀ + c)`.
pub fn a_plus(background: f64, contrast: f64) -> f64 {
    background - background * background / (background + contrast)
}

/// `a₋ = c`.
pub fn a_minus(contrast: f64) -> f64 {
    contrast
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.upper.len()
    }

    pub fn is_empty(&self) -> bool {
        self.upper.is_empty()
    }

    /// The a-priori bound for this polarity.
    pub fn a_priori(&self) -> f64 {
        match self.polarity {
            Polarity::Conductive => self.a_plus,
            Polarity::Resistive => self.a_minus,
        }
    }

    /// Box `[lower_k, upper_k]` for `κ`: `[0, u]` conductive, `[−u, 0]` resistive.
    pub fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        match self.polarity {
            Polarity::Conductive => (vec![0.0; self.len()], self.upper.clone()),
            Polarity::Resistive => (self.upper.iter().map(|u| -u).collect(), vec![0.0; self.len()]),
        }
    }

    /// CSV with columns `pixel,x,y,beta,upper`; infinite `β` is written `inf`.
    pub fn write_csv<W: Write>(&self, grid: &PixelGrid, mut w: W) -> Result<()> {
        if grid.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} constraints for {} pixels",
                self.len(),
                grid.len()
            )));
        }
        writeln!(w, "pixel,x,y,beta,upper")?;
        for (k, c) in grid.pixel_centers().iter().enumerate() {
            let beta = if self.beta[k].is_finite() {
                format!("{:.17e}", self.beta[k])
            } else {
                "inf".to_string()
            };
            writeln!(w, "{k},{:.17e},{:.17e},{beta},{:.17e}", c[0], c[1], self.upper[k])?;
        }
        Ok(())
    }
}

/// `β_k` for every pixel and the resulting bounds `min(a±, β_k)`.
pub fn build_constraints(
    s: &SensitivityTensor,
    v: &DifferenceFrame,
    background: f64,
    contrast: f64,
    polarity: Polarity,
    manual_cap: Option<f64>,
) -> Result<ConstraintSet> {
    if !(background.is_finite() && background > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "background conductivity must be positive, got {background}"
        )));
    }
    if !(contrast.is_finite() && contrast > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "contrast bound must be positive, got {contrast}"
        )));
    }
    if let Some(m) = manual_cap {
        if !(m.is_finite() && m >= 0.0) {
            return Err(Error::InvalidArgument(format!("manual cap must be >= 0, got {m}")));
        }
    }
    if s.n_electrodes() != v.n_electrodes() {
        return Err(Error::Dimension(format!(
            "sensitivity for {} electrodes, data for {}",
            s.n_electrodes(),
            v.n_electrodes()
        )));
    }
    let l = v.n_electrodes();
    let delta = v.delta();
    let abs_v = matrix_abs(v.matrix())?;
    let a = abs_v + DMatrix::identity(l, l) * delta;

    let deflate = l > 1
        && annihilates_constants(v.matrix())
        && s.blocks().iter().all(annihilates_constants);
    let q = zero_sum_basis(l);
    let restrict = |m: &DMatrix<f64>| {
        if deflate {
            symmetrized(&(q.transpose() * m * &q))
        } else {
            m.clone()
        }
    };
    let factor = DefiniteFactor::new(&restrict(&a))?;

    let a_plus = a_plus(background, contrast);
    let a_minus = a_minus(contrast);
    let prior = match polarity {
        Polarity::Conductive => a_plus,
        Polarity::Resistive => a_minus,
    };
    let cap = manual_cap.map_or(prior, |m| m.min(prior));

    let results: Vec<(f64, f64)> = s
        .blocks()
        .par_iter()
        .map(|block| {
            let block = restrict(block);
            let beta = factor.beta(&block)?;
            let upper = beta.min(cap);
            factor.certify(&block, upper)?;
            Ok((beta, upper))
        })
        .collect::<Result<_>>()?;
    let (beta, upper) = results.into_iter().unzip();
    Ok(ConstraintSet {
        beta,
        a_plus,
        a_minus,
        polarity,
        upper,
        delta,
        manual_cap,
    })
}

/// The three terms of the monotonicity relation for one current vector `g`.
///
/// With `u⁽ᵍ⁾ = Σ g_j u⁽ʲ⁾` the background potentials at drive current `I`:
/// `lower = (1/I)∫(σ₀/σ)(σ₀−σ)|∇u⁽ᵍ⁾|²`, `middle = gᵀVg`,
/// `upper = (1/I)∫(σ₀−σ)|∇u⁽ᵍ⁾|²`, and `lower ≥ middle ≥ upper`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MonotonicityTerms {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
}

impl MonotonicityTerms {
    /// Largest violation of `lower ≥ middle ≥ upper`, zero when it holds.
    pub fn violation(&self) -> f64 {
        (self.middle - self.lower).max(self.upper - self.middle).max(0.0)
    }
}

pub fn monotonicity_check(
    mesh: &DiskMesh,
    v: &DifferenceFrame,
    background: f64,
    field: &ConductivityField,
    potentials: &[PatternSolution],
    current: f64,
    g: &[f64],
) -> Result<MonotonicityTerms> {
    let l = v.n_electrodes();
    if g.len() != l || potentials.len() != l {
        return Err(Error::Dimension(format!(
            "{} weights and {} potentials for {l} electrodes",
            g.len(),
            potentials.len()
        )));
    }
    if field.len() != mesh.n_triangles() {
        return Err(Error::Dimension("field does not match the mesh".into()));
    }
    let gv = DVector::from_column_slice(g);
    let middle = gv.dot(&(v.matrix() * &gv));
    let gradients = pattern_gradients(mesh, potentials);
    let (mut lower, mut upper) = (0.0, 0.0);
    for (t, grads) in gradients.iter().enumerate() {
        let (mut gx, mut gy) = (0.0, 0.0);
        for (w, d) in g.iter().zip(grads) {
            gx += w * d[0];
            gy += w * d[1];
        }
        let energy = mesh.triangle_area(t) * (gx * gx + gy * gy) / current;
        let sigma = field.values()[t];
        upper += (background - sigma) * energy;
        lower += background / sigma * (background - sigma) * energy;
    }
    Ok(MonotonicityTerms { lower, middle, upper })
}
