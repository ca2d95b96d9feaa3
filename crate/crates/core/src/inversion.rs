//! Linearized difference reconstruction: `‖Sκ − V‖² → min` under the
//! monotonicity box constraints, plus a Tikhonov baseline.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{measure_full, ConductivityField, MeasurementFrame, Polarity};
use crate::geometry::{build_mesh, build_pixel_grid, DiskMesh, MeshParams, PixelGrid};
use crate::monotonicity::{build_constraints, ConstraintSet};
use crate::protocol::{build_difference, calibrate_frames, complete_frame, DifferenceFrame};
use crate::sensitivity::{assemble_sensitivity, SensitivityTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Monotonicity,
    Tikhonov,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "monotonicity" => Ok(Method::Monotonicity),
            "tikhonov" => Ok(Method::Tikhonov),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// Penalty weighting for the Tikhonov baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `W = I`.
    None,
    /// `W = diag(SᵀS)`.
    Noser,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when `‖κ − Π(κ − g)‖ ≤ tol · max(1, ‖SᵀV‖)` with `g = Sᵀ(Sκ − V)`.
    pub tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 10_000,
            tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    /// Conductivity change per pixel, S/m.
    pub kappa: Vec<f64>,
    /// `‖Sκ − V‖²`.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
    /// Pixels sitting on a bound.
    pub active_set: Vec<usize>,
    pub projected_gradient_norm: f64,
}

fn check_system(s: &DMatrix<f64>, v: &DVector<f64>) -> Result<()> {
    if s.nrows() != v.len() {
        return Err(Error::Dimension(format!(
            "S has {} rows, V has {} entries",
            s.nrows(),
            v.len()
        )));
    }
    if s.iter().chain(v.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("sensitivity matrix or data".into()));
    }
    Ok(())
}

fn project(x: &mut DVector<f64>, lower: &[f64], upper: &[f64]) {
    for ((xi, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *xi = xi.clamp(*lo, *hi);
    }
}

fn projected_gradient(x: &DVector<f64>, g: &DVector<f64>, lower: &[f64], upper: &[f64]) -> f64 {
    let mut step = x - g;
    project(&mut step, lower, upper);
    (x - step).norm()
}

/// Box-constrained least squares `min ‖Sκ − V‖²`, `lower ≤ κ ≤ upper`, by
/// projected gradient with Barzilai–Borwein steps and an exact line search
/// along the projected direction.
pub fn solve_box(
    s: &DMatrix<f64>,
    v: &DVector<f64>,
    lower: &[f64],
    upper: &[f64],
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    check_system(s, v)?;
    let p = s.ncols();
    if lower.len() != p || upper.len() != p {
        return Err(Error::Dimension(format!(
            "{} / {} bounds for {p} unknowns",
            lower.len(),
            upper.len()
        )));
    }
    for (k, (lo, hi)) in lower.iter().zip(upper).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "bounds of pixel {k} are [{lo}, {hi}]"
            )));
        }
    }
    let st = s.transpose();
    let threshold = opts.tol * (&st * v).norm().max(1.0);

    // Iterate on y = κ / d with unit-norm columns of S·diag(d); the box maps
    // to a box and the minimizer is unchanged, but the conditioning improves.
    let d: Vec<f64> = s
        .column_iter()
        .map(|c| {
            let n = c.norm();
            if n > 0.0 { 1.0 / n } else { 1.0 }
        })
        .collect();
    let lo_y: Vec<f64> = lower.iter().zip(&d).map(|(b, d)| b / d).collect();
    let hi_y: Vec<f64> = upper.iter().zip(&d).map(|(b, d)| b / d).collect();
    let sy_mat = DMatrix::from_fn(s.nrows(), p, |i, k| s[(i, k)] * d[k]);
    let sty = sy_mat.transpose();
    let to_kappa = |y: &DVector<f64>| DVector::from_fn(p, |k, _| y[k] * d[k]);
    let kappa_pg = |y: &DVector<f64>, r: &DVector<f64>| {
        projected_gradient(&to_kappa(y), &(&st * r), lower, upper)
    };

    let mut y = DVector::zeros(p);
    project(&mut y, &lo_y, &hi_y);
    let mut r = &sy_mat * &y - v;
    let mut g = &sty * &r;
    let mut f = r.norm_squared();
    let mut step = {
        let lipschitz = sy_mat.norm_squared();
        if lipschitz > 0.0 { 1.0 / lipschitz } else { 1.0 }
    };
    let mut pg = kappa_pg(&y, &r);
    let mut iterations = 0;
    while pg > threshold && iterations < opts.max_iterations {
        iterations += 1;
        let mut trial = &y - &g * step;
        project(&mut trial, &lo_y, &hi_y);
        let dir = trial - &y;
        let sd = &sy_mat * &dir;
        let curvature = sd.norm_squared();
        let slope = g.dot(&dir);
        if curvature == 0.0 || slope >= 0.0 {
            // No descent left along the projected direction.
            break;
        }
        let t = (-slope / curvature).min(1.0);
        let y_new = &y + &dir * t;
        let r_new = if iterations % 64 == 0 { &sy_mat * &y_new - v } else { &r + &sd * t };
        let g_new = &sty * &r_new;
        let f_new = r_new.norm_squared();
        debug_assert!(f_new <= f * (1.0 + 1e-12) + 1e-300, "objective increased: {f} -> {f_new}");

        let dy = &dir * t;
        let dg = &g_new - &g;
        let curv = dy.dot(&dg);
        step = if curv > 0.0 { dy.norm_squared() / curv } else { step * 2.0 };
        y = y_new;
        r = r_new;
        g = g_new;
        f = f_new;
        pg = kappa_pg(&y, &r);
    }
    let mut x = to_kappa(&y);
    // Undo rounding of the rescaling at the bounds.
    for k in 0..p {
        if y[k] == lo_y[k] {
            x[k] = lower[k];
        } else if y[k] == hi_y[k] {
            x[k] = upper[k];
        }
    }
    project(&mut x, lower, upper);
    let r = s * &x - v;
    let g = &st * &r;
    let pg = projected_gradient(&x, &g, lower, upper);
    let active_set = (0..p)
        .filter(|&k| x[k] == lower[k] || x[k] == upper[k])
        .collect();
    Ok(ReconstructionResult {
        kappa: x.as_slice().to_vec(),
        objective: r.norm_squared(),
        iterations,
        converged: pg <= threshold,
        method: Method::Monotonicity,
        active_set,
        projected_gradient_norm: pg,
    })
}

/// Minimizes `‖Sκ − V‖²` under the bounds of `constraints`
/// (`0 ≤ κ ≤ u` conductive, `−u ≤ κ ≤ 0` resistive).
pub fn solve_constrained(
    s: &DMatrix<f64>,
    v: &DVector<f64>,
    constraints: &ConstraintSet,
    opts: &SolverOptions,
) -> Result<ReconstructionResult> {
    if constraints.upper.iter().any(|u| !(u.is_finite() && *u >= 0.0)) {
        return Err(Error::InvalidArgument("constraint bounds must be finite and >= 0".into()));
    }
    let (lower, upper) = constraints.bounds();
    solve_box(s, v, &lower, &upper, opts)
}

/// `(SᵀS + αW)κ = SᵀV`.
pub fn solve_tikhonov(
    s: &DMatrix<f64>,
    v: &DVector<f64>,
    alpha: f64,
    weighting: Weighting,
) -> Result<ReconstructionResult> {
    check_system(s, v)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let p = s.ncols();
    let st = s.transpose();
    let gram = &st * s;
    let w = match weighting {
        Weighting::None => DVector::from_element(p, 1.0),
        Weighting::Noser => gram.diagonal(),
    };
    let mut h = gram;
    for k in 0..p {
        h[(k, k)] += alpha * w[k];
    }
    let eigenvalues = h.symmetric_eigenvalues();
    let (lo, hi) = (eigenvalues.min(), eigenvalues.max());
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if condition > 1e14 {
        return Err(Error::IllConditioned(condition));
    }
    let rhs = &st * v;
    let kappa = h
        .cholesky()
        .ok_or(Error::IllConditioned(condition))?
        .solve(&rhs);
    let r = s * &kappa - v;
    Ok(ReconstructionResult {
        kappa: kappa.as_slice().to_vec(),
        objective: r.norm_squared(),
        iterations: 1,
        converged: true,
        method: Method::Tikhonov,
        active_set: Vec::new(),
        projected_gradient_norm: 0.0,
    })
}

/// Inversion settings for [`reconstruct`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    /// Default `monotonicity`.
    pub method: Method,
    /// Default `resistive`.
    pub polarity: Polarity,
    /// Background conductivity σ₀ in S/m. Default 1.
    pub background: f64,
    /// Contrast bound `c > 0`. Default 0.99.
    pub contrast: f64,
    /// Tikhonov weight. Default 0.03.
    pub alpha: f64,
    /// Tikhonov penalty weighting. Default `noser`.
    pub weighting: Weighting,
    /// Optional extra cap `m` giving bounds `min(m, β_k)`. Default none.
    pub manual_cap: Option<f64>,
    /// Scale the data to a simulated homogeneous frame before differencing.
    /// Default false.
    pub calibrate: bool,
    /// Default 10000 iterations, tolerance 1e-8.
    pub solver: SolverOptions,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            method: Method::Monotonicity,
            polarity: Polarity::Resistive,
            background: 1.0,
            contrast: 0.99,
            alpha: 0.03,
            weighting: Weighting::Noser,
            manual_cap: None,
            calibrate: false,
            solver: SolverOptions::default(),
        }
    }
}

/// Reconstruction mesh, pixel grid and inversion settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSetup {
    pub mesh: MeshParams,
    pub grid_size: usize,
    pub inversion: InversionConfig,
}

/// Everything produced along the reconstruction pipeline.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub result: ReconstructionResult,
    /// `None` for the Tikhonov baseline.
    pub constraints: Option<ConstraintSet>,
    pub difference: DifferenceFrame,
    pub sensitivity: SensitivityTensor,
    pub mesh: DiskMesh,
    pub grid: PixelGrid,
    /// Calibration factor applied to the data (1 without calibration).
    pub scale: f64,
    pub runtime_seconds: f64,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(Error::at(name))
}

/// Data and model of the linearized problem, before any constraint or solve.
#[derive(Clone, Debug)]
pub struct LinearizedProblem {
    pub difference: DifferenceFrame,
    pub sensitivity: SensitivityTensor,
    pub mesh: DiskMesh,
    pub grid: PixelGrid,
    /// Calibration factor applied to the data (1 without calibration).
    pub scale: f64,
}

impl LinearizedProblem {
    /// Monotonicity bounds for the polarity and contrast in `cfg`.
    pub fn constraints(&self, cfg: &InversionConfig) -> Result<ConstraintSet> {
        stage(
            "constraints",
            build_constraints(
                &self.sensitivity,
                &self.difference,
                cfg.background,
                cfg.contrast,
                cfg.polarity,
                cfg.manual_cap,
            ),
        )
    }
}

/// Completion, optional calibration, difference and sensitivity.
pub fn linearize(
    hom: &MeasurementFrame,
    inhom: &MeasurementFrame,
    setup: &ReconstructionSetup,
) -> Result<LinearizedProblem> {
    let cfg = &setup.inversion;
    if hom.n_electrodes() != setup.mesh.n_electrodes || inhom.n_electrodes() != setup.mesh.n_electrodes {
        return Err(Error::Dimension(format!(
            "frames have {} and {} electrodes, the model has {}",
            hom.n_electrodes(),
            inhom.n_electrodes(),
            setup.mesh.n_electrodes
        )));
    }
    let current = hom.current_amplitude();
    if current != inhom.current_amplitude() {
        return Err(Error::Frame(format!(
            "frames use different drive currents ({current:e} and {:e})",
            inhom.current_amplitude()
        )));
    }
    let hom_full = stage("completion", complete_frame(hom))?;
    let inhom_full = stage("completion", complete_frame(inhom))?;
    let mesh = stage("mesh", build_mesh(&setup.mesh))?;
    let grid = stage("mesh", build_pixel_grid(&mesh, setup.grid_size))?;

    let scale = if cfg.calibrate {
        let field = stage("calibration", ConductivityField::uniform(mesh.n_triangles(), cfg.background))?;
        let model = stage("calibration", measure_full(&mesh, &field, current))?;
        stage("calibration", calibrate_frames(hom, &model))?
    } else {
        1.0
    };
    let difference = stage("difference", build_difference(&hom_full, &inhom_full, scale))?;
    let sensitivity = stage(
        "sensitivity",
        assemble_sensitivity(&mesh, &grid, cfg.background, current),
    )?;
    Ok(LinearizedProblem {
        difference,
        sensitivity,
        mesh,
        grid,
        scale,
    })
}

/// Full pipeline: [`linearize`], then constraints and solve.
pub fn reconstruct(
    hom: &MeasurementFrame,
    inhom: &MeasurementFrame,
    setup: &ReconstructionSetup,
) -> Result<Reconstruction> {
    let start = Instant::now();
    let cfg = &setup.inversion;
    let problem = linearize(hom, inhom, setup)?;
    let s = problem.sensitivity.vectorize();
    let v = problem.difference.vectorize();

    let (result, constraints) = match cfg.method {
        Method::Monotonicity => {
            let constraints = problem.constraints(cfg)?;
            // Joint scaling leaves the minimizer unchanged and makes the
            // stopping tolerance independent of the units of S.
            let norm = s.amax();
            let t = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            let mut result = stage(
                "inversion",
                solve_constrained(&(&s * t), &(&v * t), &constraints, &cfg.solver),
            )?;
            let kappa = DVector::from_column_slice(&result.kappa);
            result.objective = (&s * kappa - &v).norm_squared();
            (result, Some(constraints))
        }
        Method::Tikhonov => {
            let result = stage("inversion", solve_tikhonov(&s, &v, cfg.alpha, cfg.weighting))?;
            (result, None)
        }
    };
    let LinearizedProblem {
        difference,
        sensitivity,
        mesh,
        grid,
        scale,
    } = problem;
    Ok(Reconstruction {
        result,
        constraints,
        difference,
        sensitivity,
        mesh,
        grid,
        scale,
        runtime_seconds: start.elapsed().as_secs_f64(),
    })
}
