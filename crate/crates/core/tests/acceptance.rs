//! Acceptance suite: one pass/fail line per criterion, non-zero exit on any failure.

use std::path::Path;
use std::time::Instant;

use monotone_eit::config::RunConfig;
use monotone_eit::forward::{
    measure_full, realize_phantom, ConductivityField, ForwardSolver, Inclusion, InclusionShape,
    PhantomSpec, Polarity,
};
use monotone_eit::geometry::{build_mesh, build_pixel_grid, DiskMesh, MeshParams, PixelGrid, Point};
use monotone_eit::inversion::{reconstruct, solve_constrained, Method, SolverOptions, Weighting};
use monotone_eit::io::load_measurement;
use monotone_eit::metrics::score_image;
use monotone_eit::monotonicity::{
    a_minus, a_plus, compute_beta, matrix_abs, monotonicity_check, zero_sum_basis, ConstraintSet,
};
use monotone_eit::protocol::{build_difference, calibrate_frames, calibrate_scale};
use monotone_eit::sensitivity::assemble_sensitivity;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RADIUS: f64 = 0.1;
const CURRENT: f64 = 1e-3;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn mesh(level: usize) -> DiskMesh {
    build_mesh(&MeshParams {
        radius: RADIUS,
        n_electrodes: 16,
        electrode_arc_fraction: 0.0159,
        refinement_level: level,
    })
    .unwrap()
}

fn disk(center: Point, radius: f64, contrast: f64, polarity: Polarity) -> Inclusion {
    Inclusion {
        shape: InclusionShape::Disk { center, radius },
        contrast,
        polarity,
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn forward_properties() -> Outcome {
    let start = Instant::now();
    let m = mesh(3);
    let field = ConductivityField::uniform(m.n_triangles(), 1.0).unwrap();
    let u = measure_full(&m, &field, CURRENT).unwrap();
    let u = u.values();
    let scale = u.amax();
    let n = u.nrows();
    let reciprocity = (u - u.transpose()).amax() / scale;
    let row_sum = u.row_iter().map(|r| r.sum().abs()).fold(0.0, f64::max) / scale;
    let mut circulant = 0.0_f64;
    for k in 0..n {
        for l in 0..n {
            circulant = circulant.max((u[(k, l)] - u[((k + 1) % n, (l + 1) % n)]).abs());
        }
    }
    let circulant = circulant / scale;
    let secs = start.elapsed().as_secs_f64();
    outcome(
        reciprocity <= 1e-8 && row_sum <= 1e-9 && circulant <= 1e-6 && secs < 10.0,
        format!(
            "reciprocity {reciprocity:.1e} (<= 1e-8), row sum {row_sum:.1e} (<= 1e-9), circulant {circulant:.1e} (<= 1e-6), {secs:.2} s (< 10 s)"
        ),
    )
}

fn sensitivity_consistency() -> Outcome {
    let start = Instant::now();
    let m = mesh(2);
    let grid = build_pixel_grid(&m, 24).unwrap();
    let s = assemble_sensitivity(&m, &grid, 1.0, CURRENT).unwrap();
    let base = ConductivityField::uniform(m.n_triangles(), 1.0).unwrap();
    let u0 = measure_full(&m, &base, CURRENT).unwrap().masked_adjacent();
    let eps = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_fd = 0.0_f64;
    for _ in 0..5 {
        let k = rng.random_range(0..grid.len());
        let values: Vec<f64> = (0..m.n_triangles())
            .map(|t| 1.0 + if grid.triangle_pixel()[t] == Some(k) { eps } else { 0.0 })
            .collect();
        let u1 = measure_full(&m, &ConductivityField::new(values).unwrap(), CURRENT).unwrap();
        let block = s.pixel(k);
        for j in 0..16 {
            for l in 0..16 {
                if u0.is_valid(j, l) {
                    let fd = (u1.values()[(j, l)] - u0.values()[(j, l)]) / eps;
                    let b = block[(j, l)];
                    worst_fd = worst_fd.max((fd - b).abs() / b.abs());
                }
            }
        }
    }
    let worst_eig = s
        .blocks()
        .iter()
        .map(|b| b.symmetric_eigenvalues().max() / b.norm())
        .fold(f64::NEG_INFINITY, f64::max);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst_fd <= 0.02 && worst_eig <= 1e-10 && secs < 30.0,
        format!(
            "worst FD deviation {:.3}% (<= 2%), largest eigenvalue / norm {worst_eig:.1e} (<= 1e-10), {secs:.2} s (< 30 s)",
            100.0 * worst_fd
        ),
    )
}

fn monotonicity_relation() -> Outcome {
    let m = mesh(3);
    let base = ConductivityField::uniform(m.n_triangles(), 1.0).unwrap();
    let potentials = ForwardSolver::new(&m, &base).unwrap().solve_all(CURRENT).unwrap();
    let hom = measure_full(&m, &base, CURRENT).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut parts = Vec::new();
    let mut passed = true;
    for (name, polarity, contrast) in [
        ("resistive", Polarity::Resistive, 0.99),
        ("conductive", Polarity::Conductive, 1.0),
    ] {
        let phantom = PhantomSpec {
            background: 1.0,
            inclusions: vec![disk([0.03, -0.02], 0.1 * RADIUS, contrast, polarity)],
        };
        let field = realize_phantom(&m, &phantom).unwrap();
        let inhom = measure_full(&m, &field, CURRENT).unwrap();
        let v = build_difference(&hom, &inhom, 1.0).unwrap();
        let mut worst = 0.0_f64;
        for _ in 0..100 {
            let mut g: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            g.iter_mut().for_each(|x| *x /= norm);
            let t = monotonicity_check(&m, &v, 1.0, &field, &potentials, CURRENT, &g).unwrap();
            let magnitude = t.lower.abs().max(t.middle.abs()).max(t.upper.abs());
            if magnitude > 0.0 {
                worst = worst.max(t.violation() / magnitude);
            }
        }
        passed &= worst <= 1e-3;
        parts.push(format!("{name} worst relative violation {worst:.1e}"));
    }
    outcome(passed, format!("{} (<= 1e-3), 100 directions each", parts.join(", ")))
}

/// Pixels whose cell lies inside the rod and whose triangles all carry `inside`.
fn interior_pixels(grid: &PixelGrid, field: &ConductivityField, inside: f64, center: Point, r: f64) -> Vec<usize> {
    (0..grid.len())
        .filter(|&p| {
            grid.cell_inside_disk(p, center, r)
                && grid.pixel_triangles(p).iter().all(|&t| field.values()[t] == inside)
        })
        .collect()
}

fn theorem_bound() -> Outcome {
    let m = mesh(2);
    let grid = build_pixel_grid(&m, 24).unwrap();
    let s = assemble_sensitivity(&m, &grid, 1.0, CURRENT).unwrap();
    let base = ConductivityField::uniform(m.n_triangles(), 1.0).unwrap();
    let hom = measure_full(&m, &base, CURRENT).unwrap();
    let q = zero_sum_basis(16);
    let (center, r) = ([0.02, 0.01], 0.025);
    let mut parts = Vec::new();
    let mut passed = true;
    for (name, polarity, contrast, bound) in [
        ("resistive", Polarity::Resistive, 0.99, a_minus(0.99)),
        ("conductive", Polarity::Conductive, 1.0, a_plus(1.0, 1.0)),
    ] {
        let phantom = PhantomSpec {
            background: 1.0,
            inclusions: vec![disk(center, r, contrast, polarity)],
        };
        let field = realize_phantom(&m, &phantom).unwrap();
        let inhom = measure_full(&m, &field, CURRENT).unwrap();
        let v = build_difference(&hom, &inhom, 1.0).unwrap();
        // delta = 0: |V| on the zero-sum subspace, where it is definite.
        let a = q.transpose() * matrix_abs(v.matrix()).unwrap() * &q;
        let pixels = interior_pixels(&grid, &field, 1.0 + polarity.sign() * contrast, center, r);
        let mut smallest = f64::INFINITY;
        for &p in &pixels {
            let sk = q.transpose() * s.pixel(p) * &q;
            smallest = smallest.min(compute_beta(&sk, &a).unwrap());
        }
        passed &= !pixels.is_empty() && smallest >= bound;
        parts.push(format!(
            "{name}: min beta {smallest:.4} >= {bound} over {} interior pixels",
            pixels.len()
        ));
    }
    outcome(passed, parts.join(", "))
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    m.symmetric_eigenvalues().min() >= 0.0
}

fn bisect_beta(s: &DMatrix<f64>, a: &DMatrix<f64>) -> f64 {
    let mut hi = 1.0;
    while is_psd(&(a + s * hi)) {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if is_psd(&(a + s * mid)) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

fn beta_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let b = random_matrix(&mut rng, 8, 8);
        let a = &b * b.transpose() + DMatrix::identity(8, 8) * 0.05;
        let a = (&a + a.transpose()) * 0.5;
        let rank = rng.random_range(1..=8);
        let c = random_matrix(&mut rng, 8, rank);
        let s = -(&c * c.transpose());
        let s = (&s + s.transpose()) * 0.5;
        let beta = compute_beta(&s, &a).unwrap();
        let oracle = bisect_beta(&s, &a);
        worst = worst.max((beta - oracle).abs() / oracle);
    }
    outcome(worst <= 1e-6, format!("50 pairs at L = 8, worst relative error {worst:.1e} (<= 1e-6)"))
}

/// Best feasible stationary point over every lower/free/upper assignment.
fn active_set_oracle(s: &DMatrix<f64>, v: &DVector<f64>, lo: &[f64], hi: &[f64]) -> DVector<f64> {
    let p = s.ncols();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for code in 0..3usize.pow(p as u32) {
        let mut x = DVector::zeros(p);
        let mut free = Vec::new();
        let mut c = code;
        for k in 0..p {
            match c % 3 {
                0 => x[k] = lo[k],
                1 => free.push(k),
                _ => x[k] = hi[k],
            }
            c /= 3;
        }
        if !free.is_empty() {
            let sf = DMatrix::from_fn(s.nrows(), free.len(), |i, j| s[(i, free[j])]);
            let rhs = v - s * &x;
            let Some(z) = (sf.transpose() * &sf).lu().solve(&(sf.transpose() * rhs)) else {
                continue;
            };
            for (j, &k) in free.iter().enumerate() {
                x[k] = z[j];
            }
        }
        if (0..p).any(|k| x[k] < lo[k] - 1e-12 || x[k] > hi[k] + 1e-12) {
            continue;
        }
        let f = (s * &x - v).norm_squared();
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, x));
        }
    }
    best.unwrap().1
}

fn solver_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = SolverOptions::default();
    let (mut worst_x, mut worst_kkt) = (0.0_f64, 0.0_f64);
    let mut all_converged = true;
    for trial in 0..20 {
        let p = rng.random_range(2..=8);
        let s = random_matrix(&mut rng, 16, p);
        let v = random_matrix(&mut rng, 16, 1).column(0).into_owned() * 3.0;
        let upper: Vec<f64> = (0..p).map(|_| rng.random_range(0.05..1.0)).collect();
        let polarity = if trial % 2 == 0 { Polarity::Resistive } else { Polarity::Conductive };
        let set = ConstraintSet {
            beta: upper.clone(),
            a_plus: 1.0,
            a_minus: 1.0,
            polarity,
            upper,
            delta: 0.0,
            manual_cap: None,
        };
        let (lo, hi) = set.bounds();
        let r = solve_constrained(&s, &v, &set, &opts).unwrap();
        let oracle = active_set_oracle(&s, &v, &lo, &hi);
        worst_x = worst_x.max((DVector::from_column_slice(&r.kappa) - oracle).amax());
        let threshold = opts.tol * (s.transpose() * &v).norm().max(1.0);
        worst_kkt = worst_kkt.max(r.projected_gradient_norm / threshold);
        all_converged &= r.converged;
    }
    outcome(
        worst_x <= 1e-6 && worst_kkt <= 1.0 && all_converged,
        format!(
            "20 instances, P <= 8: worst |kappa - oracle| {worst_x:.1e} (<= 1e-6), worst pg / (1e-8 max(1, |S^T V|)) {worst_kkt:.2} (<= 1)"
        ),
    )
}

struct PhantomRun {
    name: &'static str,
    phantom: PhantomSpec,
    mono: ReconScore,
    tikhonov: ReconScore,
}

struct ReconScore {
    mass_inside: f64,
    n_components: usize,
    n_inclusions: usize,
    centroid_error: Option<f64>,
}

fn simulated_runs() -> (Vec<PhantomRun>, f64) {
    let start = Instant::now();
    let phantoms = [
        ("single", vec![disk([0.03, 0.02], 0.02, 0.99, Polarity::Resistive)]),
        (
            "double",
            vec![
                disk([-0.045, 0.01], 0.018, 0.99, Polarity::Resistive),
                disk([0.04, -0.02], 0.018, 0.99, Polarity::Resistive),
            ],
        ),
    ];
    let mut runs = Vec::new();
    for (name, inclusions) in phantoms {
        let mut cfg = RunConfig {
            phantom: PhantomSpec {
                background: 1.0,
                inclusions,
            },
            ..RunConfig::default()
        };
        cfg.geometry.sim_refinement = 3;
        cfg.geometry.recon_refinement = 2;
        cfg.geometry.grid_size = 24;
        cfg.protocol.noise_level = 1e-3;
        let (hom, inhom) = cfg.simulate().unwrap();
        let mut score = |method: Method| {
            cfg.inversion.method = method;
            cfg.inversion.alpha = 0.03;
            cfg.inversion.weighting = Weighting::Noser;
            let rec = reconstruct(&hom, &inhom, &cfg.reconstruction_setup()).unwrap();
            let s = score_image(&rec.grid, &cfg.phantom, &rec.result.kappa, 0.25);
            ReconScore {
                mass_inside: s.mass_inside,
                n_components: s.n_components,
                n_inclusions: s.n_inclusions,
                centroid_error: s.centroid_error,
            }
        };
        let mono = score(Method::Monotonicity);
        let tikhonov = score(Method::Tikhonov);
        runs.push(PhantomRun {
            name,
            phantom: cfg.phantom.clone(),
            mono,
            tikhonov,
        });
    }
    (runs, start.elapsed().as_secs_f64())
}

fn figure_analog(runs: &[PhantomRun], secs: f64) -> Outcome {
    let mut passed = secs < 120.0;
    let mut parts = Vec::new();
    for run in runs {
        let s = &run.mono;
        let ok = s.mass_inside >= 0.7
            && s.n_components == s.n_inclusions
            && s.centroid_error.is_some_and(|e| e <= 1.5);
        passed &= ok;
        parts.push(format!(
            "{}: mass inside {:.3} (>= 0.7), {} components for {} inclusions, centroid error {} px (<= 1.5)",
            run.name,
            s.mass_inside,
            s.n_components,
            run.phantom.inclusions.len(),
            s.centroid_error.map_or("n/a".into(), |e| format!("{e:.2}")),
        ));
    }
    parts.push(format!("{secs:.1} s for both methods (< 120 s)"));
    outcome(passed, parts.join("; "))
}

fn calibration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0_f64;
    for _ in 0..3 {
        let truth = rng.random_range(-5.0..5.0);
        let measured: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let model: Vec<f64> = measured.iter().map(|m| truth * m + rng.random_range(-0.3..0.3)).collect();
        let c = calibrate_scale(&measured, &model).unwrap();
        let objective = |c: f64| -> f64 { measured.iter().zip(&model).map(|(m, y)| (c * m - y).powi(2)).sum() };
        let search = |lo: f64, hi: f64| {
            let steps = 1_000_000;
            (0..=steps)
                .map(|i| lo + (hi - lo) * i as f64 / steps as f64)
                .map(|t| (objective(t), t))
                .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
        };
        let coarse = search(-10.0, 10.0);
        let fine = search(coarse.1 - 2e-5, coarse.1 + 2e-5);
        worst = worst.max((c - fine.1).abs());
    }
    let mut detail = format!("3 random problems, worst |c - grid search| {worst:.1e} (<= 1e-6)");
    let mut passed = worst <= 1e-6;
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/iirc");
    let (measured, model) = (dir.join("hom.json"), dir.join("model.json"));
    if measured.exists() && model.exists() {
        let c = calibrate_frames(
            &load_measurement(&measured, CURRENT).unwrap(),
            &load_measurement(&model, CURRENT).unwrap(),
        )
        .unwrap();
        let expected = 2.49577e-5;
        let ok = ((c - expected) / expected).abs() <= 0.01;
        passed &= ok;
        detail.push_str(&format!("; measured data factor {c:.5e} (within 1% of {expected:e})"));
    } else {
        detail.push_str("; measured-data check skipped (data/iirc absent)");
    }
    outcome(passed, detail)
}

fn ringing(runs: &[PhantomRun]) -> Outcome {
    let mut passed = true;
    let mut parts = Vec::new();
    for run in runs {
        let mono = 1.0 - run.mono.mass_inside;
        let tik = 1.0 - run.tikhonov.mass_inside;
        passed &= mono < tik;
        parts.push(format!(
            "{}: mass outside {:.3} monotonicity vs {:.3} Tikhonov (alpha 0.03, NOSER; {} components)",
            run.name, mono, tik, run.tikhonov.n_components
        ));
    }
    outcome(passed, parts.join("; "))
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut timed = |n: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let o = f();
        results.push((n, name, o, start.elapsed().as_secs_f64()));
    };
    timed(1, "forward model properties", &forward_properties);
    timed(2, "sensitivity consistency", &sensitivity_consistency);
    timed(3, "monotonicity relation", &monotonicity_relation);
    timed(4, "beta dominates the a-priori bound", &theorem_bound);
    timed(5, "beta matches the bisection oracle", &beta_oracle);
    timed(6, "constrained solver matches the active-set oracle", &solver_correctness);
    let (runs, secs) = simulated_runs();
    timed(7, "simulated single and double inclusions", &|| figure_analog(&runs, secs));
    timed(8, "calibration factor", &calibration);
    timed(9, "ringing compared with Tikhonov", &|| ringing(&runs));

    let mut failed = 0;
    for (n, name, o, secs) in &results {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("criterion {n} [{tag}] {name}: {} ({secs:.2} s)", o.detail);
        failed += usize::from(!o.passed);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
