//! Shunt-model forward solver for adjacent current patterns.
//!
//! Linear finite elements on a [`DiskMesh`]. All nodes of an electrode share
//! one unknown, so the potential is exactly constant on every electrode; gaps
//! carry natural (zero-flux) boundary conditions. Pattern `k` drives current
//! `I` into electrode `k` and draws it out of electrode `k + 1` (indices mod
//! `L`). Potentials are normalized so the electrode potentials have zero mean.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DiskMesh, Point};
use crate::skyline::{SkylineCholesky, SkylineMatrix};

/// Default drive current: 1 mA.
pub const DEFAULT_CURRENT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Anomalies more conductive than the background (`σ ≥ σ₀`).
    Conductive,
    /// Anomalies less conductive than the background (`σ ≤ σ₀`).
    Resistive,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Conductive => 1.0,
            Polarity::Resistive => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InclusionShape {
    Disk {
        center: Point,
        radius: f64,
    },
    Ellipse {
        center: Point,
        radii: [f64; 2],
        /// Rotation of the first axis, radians counterclockwise.
        #[serde(default)]
        angle: f64,
    },
}

impl InclusionShape {
    pub fn contains(&self, p: Point) -> bool {
        match *self {
            InclusionShape::Disk { center, radius } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) < radius
            }
            InclusionShape::Ellipse {
                center,
                radii,
                angle,
            } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let (c, s) = (angle.cos(), angle.sin());
                let u = (c * dx + s * dy) / radii[0];
                let v = (-s * dx + c * dy) / radii[1];
                u * u + v * v < 1.0
            }
        }
    }

    pub fn center(&self) -> Point {
        match *self {
            InclusionShape::Disk { center, .. } | InclusionShape::Ellipse { center, .. } => center,
        }
    }

    /// The same shape with every radius grown by `w`.
    pub fn dilated(&self, w: f64) -> InclusionShape {
        match *self {
            InclusionShape::Disk { center, radius } => InclusionShape::Disk {
                center,
                radius: radius + w,
            },
            InclusionShape::Ellipse {
                center,
                radii,
                angle,
            } => InclusionShape::Ellipse {
                center,
                radii: [radii[0] + w, radii[1] + w],
                angle,
            },
        }
    }

    fn max_radius(&self) -> f64 {
        match *self {
            InclusionShape::Disk { radius, .. } => radius,
            InclusionShape::Ellipse { radii, .. } => radii[0].max(radii[1]),
        }
    }

    fn min_radius(&self) -> f64 {
        match *self {
            InclusionShape::Disk { radius, .. } => radius,
            InclusionShape::Ellipse { radii, .. } => radii[0].min(radii[1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inclusion {
    pub shape: InclusionShape,
    /// Contrast `γ ≥ 0` in S/m.
    pub contrast: f64,
    pub polarity: Polarity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomSpec {
    /// Background conductivity `σ₀` in S/m. Default 1.
    pub background: f64,
    pub inclusions: Vec<Inclusion>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            background: 1.0,
            inclusions: Vec::new(),
        }
    }
}

impl PhantomSpec {
    pub fn homogeneous(background: f64) -> Self {
        PhantomSpec {
            background,
            inclusions: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.background.is_finite() && self.background > 0.0) {
            return Err(Error::Phantom(format!(
                "background conductivity must be positive, got {}",
                self.background
            )));
        }
        for (i, inc) in self.inclusions.iter().enumerate() {
            if !(inc.contrast.is_finite() && inc.contrast >= 0.0) {
                return Err(Error::Phantom(format!(
                    "inclusion {i}: contrast must be non-negative, got {}",
                    inc.contrast
                )));
            }
            if inc.polarity == Polarity::Resistive && inc.contrast >= self.background {
                return Err(Error::Phantom(format!(
                    "inclusion {i}: resistive contrast {} would make the conductivity non-positive",
                    inc.contrast
                )));
            }
            if !(inc.shape.min_radius() > 0.0 && inc.shape.max_radius().is_finite()) {
                return Err(Error::Phantom(format!("inclusion {i}: radii must be positive")));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant conductivity, one value per triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct ConductivityField {
    values: Vec<f64>,
}

impl ConductivityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((t, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::Conductivity(format!(
                "triangle {t} has conductivity {v}; values must be positive and finite"
            )));
        }
        Ok(ConductivityField { values })
    }

    pub fn uniform(n_triangles: usize, sigma: f64) -> Result<Self> {
        Self::new(vec![sigma; n_triangles])
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

    pub fn scaled(&self, t: f64) -> Result<Self> {
        Self::new(self.values.iter().map(|v| v * t).collect())
    }
}

/// Triangle conductivities for a phantom: `σ₀ ± γ` where the barycenter lies
/// in an inclusion (first matching inclusion wins), `σ₀` elsewhere.
pub fn realize_phantom(mesh: &DiskMesh, spec: &PhantomSpec) -> Result<ConductivityField> {
    spec.validate()?;
    let r = mesh.radius();
    for (i, inc) in spec.inclusions.iter().enumerate() {
        let c = inc.shape.center();
        if c[0].hypot(c[1]) - inc.shape.max_radius() >= r {
            return Err(Error::Phantom(format!(
                "inclusion {i} lies entirely outside the disk"
            )));
        }
    }
    let values = (0..mesh.n_triangles())
        .map(|t| {
            let b = mesh.barycenter(t);
            spec.inclusions
                .iter()
                .find(|inc| inc.shape.contains(b))
                .map_or(spec.background, |inc| {
                    spec.background + inc.polarity.sign() * inc.contrast
                })
        })
        .collect();
    ConductivityField::new(values)
}

/// Potentials of one current pattern.
#[derive(Clone, Debug)]
pub struct PatternSolution {
    /// One value per electrode, zero mean.
    pub electrode: Vec<f64>,
    /// One value per mesh node.
    pub nodal: Vec<f64>,
}

/// Factorized shunt-model system for one mesh and conductivity.
#[derive(Clone, Debug)]
pub struct ForwardSolver<'m> {
    mesh: &'m DiskMesh,
    node_dof: Vec<usize>,
    electrode_dof: Vec<usize>,
    /// Reduced (grounded) index of each dof.
    reduced: Vec<Option<usize>>,
    n_reduced: usize,
    cholesky: SkylineCholesky,
}

impl<'m> ForwardSolver<'m> {
    pub fn new(mesh: &'m DiskMesh, field: &ConductivityField) -> Result<Self> {
        if field.len() != mesh.n_triangles() {
            return Err(Error::Dimension(format!(
                "field has {} values for {} triangles",
                field.len(),
                mesh.n_triangles()
            )));
        }
        let l = mesh.n_electrodes();
        let owner = mesh.node_electrode();
        let mut electrode_dof = vec![usize::MAX; l];
        let mut node_dof = Vec::with_capacity(mesh.n_nodes());
        let mut n_dof = 0;
        for o in &owner {
            let d = match *o {
                Some(e) => {
                    if electrode_dof[e] == usize::MAX {
                        electrode_dof[e] = n_dof;
                        n_dof += 1;
                    }
                    electrode_dof[e]
                }
                None => {
                    n_dof += 1;
                    n_dof - 1
                }
            };
            node_dof.push(d);
        }

        // The last electrode is grounded while solving.
        let grounded = electrode_dof[l - 1];
        let mut reduced = vec![None; n_dof];
        let mut n_reduced = 0;
        for (d, slot) in reduced.iter_mut().enumerate() {
            if d != grounded {
                *slot = Some(n_reduced);
                n_reduced += 1;
            }
        }

        let local = |t: usize| mesh.triangles()[t].map(|n| reduced[node_dof[n]]);
        let mut first: Vec<usize> = (0..n_reduced).collect();
        for t in 0..mesh.n_triangles() {
            let dofs = local(t);
            for a in dofs.iter().flatten() {
                for b in dofs.iter().flatten() {
                    if b < a {
                        first[*a] = first[*a].min(*b);
                    }
                }
            }
        }

        let mut matrix = SkylineMatrix::new(first);
        for (t, &sigma) in field.values().iter().enumerate() {
            let area = mesh.triangle_area(t);
            let grads = mesh.basis_gradients(t);
            let dofs = local(t);
            for a in 0..3 {
                for b in 0..3 {
                    if let (Some(da), Some(db)) = (dofs[a], dofs[b]) {
                        if da >= db {
                            let k = sigma
                                * area
                                * (grads[a][0] * grads[b][0] + grads[a][1] * grads[b][1]);
                            matrix.add(da, db, k);
                        }
                    }
                }
            }
        }
        let cholesky = matrix.factorize()?;
        Ok(ForwardSolver {
            mesh,
            node_dof,
            electrode_dof,
            reduced,
            n_reduced,
            cholesky,
        })
    }

    pub fn mesh(&self) -> &DiskMesh {
        self.mesh
    }

    /// Solves pattern `k` (0-based) for drive current `current`.
    pub fn solve_pattern(&self, k: usize, current: f64) -> Result<PatternSolution> {
        let l = self.electrode_dof.len();
        if k >= l {
            return Err(Error::InvalidArgument(format!(
                "pattern index {k} out of range for {l} electrodes"
            )));
        }
        let mut currents = vec![0.0; l];
        currents[k] += current;
        currents[(k + 1) % l] -= current;
        Ok(self.solve_currents(&currents))
    }

    /// Solves for an arbitrary electrode current vector (must sum to zero).
    pub fn solve_currents(&self, currents: &[f64]) -> PatternSolution {
        let mut rhs = vec![0.0; self.n_reduced];
        for (e, &i) in currents.iter().enumerate() {
            if let Some(r) = self.reduced[self.electrode_dof[e]] {
                rhs[r] += i;
            }
        }
        self.cholesky.solve_in_place(&mut rhs);
        let dof_value = |d: usize| self.reduced[d].map_or(0.0, |r| rhs[r]);
        let mut electrode: Vec<f64> = self.electrode_dof.iter().map(|&d| dof_value(d)).collect();
        let mean = electrode.iter().sum::<f64>() / electrode.len() as f64;
        electrode.iter_mut().for_each(|v| *v -= mean);
        let nodal = self.node_dof.iter().map(|&d| dof_value(d) - mean).collect();
        PatternSolution { electrode, nodal }
    }

    /// All `L` adjacent patterns, solved in parallel.
    pub fn solve_all(&self, current: f64) -> Result<Vec<PatternSolution>> {
        (0..self.electrode_dof.len())
            .into_par_iter()
            .map(|k| self.solve_pattern(k, current))
            .collect()
    }

    pub fn measure_full(&self, current: f64) -> Result<MeasurementFrame> {
        let solutions = self.solve_all(current)?;
        Ok(frame_from_solutions(&solutions, current))
    }
}

/// `U(k, l) = u⁽ᵏ⁾|E_l − u⁽ᵏ⁾|E_{l+1}`.
pub fn frame_from_solutions(solutions: &[PatternSolution], current: f64) -> MeasurementFrame {
    let l = solutions.len();
    let values = DMatrix::from_fn(l, l, |k, m| {
        let e = &solutions[k].electrode;
        e[m] - e[(m + 1) % l]
    });
    MeasurementFrame::full(values, current)
}

pub fn solve_pattern(
    mesh: &DiskMesh,
    field: &ConductivityField,
    k: usize,
    current: f64,
) -> Result<PatternSolution> {
    ForwardSolver::new(mesh, field)?.solve_pattern(k, current)
}

pub fn measure_full(
    mesh: &DiskMesh,
    field: &ConductivityField,
    current: f64,
) -> Result<MeasurementFrame> {
    ForwardSolver::new(mesh, field)?.measure_full(current)
}

/// One full adjacent-stimulation cycle: `values[(k, l)] = U⁽ᵏ⁾_l` in volts.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementFrame {
    values: DMatrix<f64>,
    /// Row-major `L × L`; `false` marks entries a device does not deliver.
    valid: Vec<bool>,
    current_amplitude: f64,
}

/// Whether `(k, l)` is a measurement the shunt model describes, `|k − l| > 1` mod `L`.
pub fn is_far_pair(l_count: usize, k: usize, l: usize) -> bool {
    let d = (k + l_count - l) % l_count;
    d > 1 && d < l_count - 1
}

pub fn adjacent_mask(l_count: usize) -> Vec<bool> {
    (0..l_count * l_count)
        .map(|i| is_far_pair(l_count, i / l_count, i % l_count))
        .collect()
}

impl MeasurementFrame {
    pub fn full(values: DMatrix<f64>, current_amplitude: f64) -> Self {
        assert!(values.is_square(), "measurement matrix must be square");
        let n = values.nrows();
        MeasurementFrame {
            values,
            valid: vec![true; n * n],
            current_amplitude,
        }
    }

    /// Masked entries are stored as zero.
    pub fn with_mask(
        mut values: DMatrix<f64>,
        valid: Vec<bool>,
        current_amplitude: f64,
    ) -> Result<Self> {
        let n = values.nrows();
        if !values.is_square() || valid.len() != n * n {
            return Err(Error::Frame(format!(
                "matrix {}x{} with {} mask entries",
                values.nrows(),
                values.ncols(),
                valid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("measurement values".into()));
        }
        for k in 0..n {
            for l in 0..n {
                if !valid[k * n + l] {
                    values[(k, l)] = 0.0;
                }
            }
        }
        Ok(MeasurementFrame {
            values,
            valid,
            current_amplitude,
        })
    }

    /// Drops the entries with `|k − l| ≤ 1`, as an adjacent-protocol device would.
    pub fn masked_adjacent(&self) -> Self {
        let mut valid = adjacent_mask(self.n_electrodes());
        for (v, old) in valid.iter_mut().zip(&self.valid) {
            *v &= *old;
        }
        MeasurementFrame::with_mask(self.values.clone(), valid, self.current_amplitude)
            .expect("shape preserved")
    }

    pub fn n_electrodes(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, k: usize, l: usize) -> bool {
        self.valid[k * self.n_electrodes() + l]
    }

    pub fn is_complete(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    pub fn current_amplitude(&self) -> f64 {
        self.current_amplitude
    }

    /// Largest magnitude among valid entries.
    pub fn max_abs(&self) -> f64 {
        let n = self.n_electrodes();
        self.values
            .iter()
            .enumerate()
            // column-major storage: index = l * n + k
            .filter(|(i, _)| self.valid[(i % n) * n + i / n])
            .fold(0.0, |m, (_, v)| m.max(v.abs()))
    }
}

/// Adds independent Gaussian noise with standard deviation `level · max|U|`
/// to every valid entry. Deterministic for a given seed.
pub fn add_noise(frame: &MeasurementFrame, level: f64, seed: u64) -> Result<MeasurementFrame> {
    if !(level.is_finite() && level >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise level must be non-negative, got {level}"
        )));
    }
    let mut out = frame.clone();
    if level == 0.0 {
        return Ok(out);
    }
    let std = level * frame.max_abs();
    let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = frame.n_electrodes();
    for k in 0..n {
        for l in 0..n {
            if frame.is_valid(k, l) {
                out.values[(k, l)] += normal.sample(&mut rng);
            }
        }
    }
    Ok(out)
}
