use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use monotone_eit::config::RunConfig;
use monotone_eit::forward::{
    measure_full, realize_phantom, ConductivityField, MeasurementFrame, DEFAULT_CURRENT,
};
use monotone_eit::geometry::build_mesh;
use monotone_eit::inversion::{linearize, reconstruct, Method};
use monotone_eit::io::{load_measurement, save_measurement, write_pgm, write_pixel_csv};
use monotone_eit::protocol::{calibrate_frames, calibration_residual};
use monotone_eit::{Error, Result};
use serde_json::json;

/// Monotonicity-constrained EIT reconstruction.
#[derive(Parser)]
#[command(name = "monotone-eit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate homogeneous and phantom frames.
    Simulate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reconstruct a difference image; writes kappa.csv, recon.pgm and report.json.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `inversion.method`.
        #[arg(long)]
        method: Option<Method>,
        /// Homogeneous frame. Default: `output.hom` in the output directory.
        #[arg(long)]
        hom: Option<PathBuf>,
        /// Inhomogeneous frame. Default: `output.inhom` in the output directory.
        #[arg(long)]
        inhom: Option<PathBuf>,
    },
    /// Write the per-pixel constraints to beta.csv and beta.pgm.
    Constraints {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        hom: Option<PathBuf>,
        #[arg(long)]
        inhom: Option<PathBuf>,
    },
    /// Least-squares scale taking a measured frame onto a model frame.
    Calibrate {
        measured: PathBuf,
        model: PathBuf,
        /// Drive current assumed for CSV input, in amperes.
        #[arg(long, default_value_t = DEFAULT_CURRENT)]
        current: f64,
    },
    /// Noise-free full frame of the homogeneous background (or the phantom).
    Forward {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Use the configured phantom instead of the homogeneous background.
        #[arg(long)]
        phantom: bool,
        /// Use the simulation mesh instead of the reconstruction mesh.
        #[arg(long)]
        sim_mesh: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    if matches!(e.root(), Error::Config(_)) {
        2
    } else if e.is_numerical() {
        3
    } else {
        1
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { config } => simulate(&RunConfig::from_path(&config)?),
        Command::Reconstruct {
            config,
            method,
            hom,
            inhom,
        } => {
            let mut cfg = RunConfig::from_path(&config)?;
            if let Some(m) = method {
                cfg.inversion.method = m;
            }
            run_reconstruct(&cfg, hom, inhom)
        }
        Command::Constraints { config, hom, inhom } => {
            constraints(&RunConfig::from_path(&config)?, hom, inhom)
        }
        Command::Calibrate {
            measured,
            model,
            current,
        } => calibrate(&measured, &model, current),
        Command::Forward {
            config,
            out,
            phantom,
            sim_mesh,
        } => {
            let cfg = match config {
                Some(p) => RunConfig::from_path(&p)?,
                None => RunConfig::default(),
            };
            forward(&cfg, &out, phantom, sim_mesh)
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn output_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.output.dir)?;
    Ok(())
}

fn simulate(cfg: &RunConfig) -> Result<()> {
    let (hom, inhom) = cfg.simulate()?;
    output_dir(cfg)?;
    let (hp, ip) = (cfg.output.path(&cfg.output.hom), cfg.output.path(&cfg.output.inhom));
    save_measurement(&hp, &hom)?;
    save_measurement(&ip, &inhom)?;
    println!("wrote {} and {}", hp.display(), ip.display());
    Ok(())
}

fn load_pair(
    cfg: &RunConfig,
    hom: Option<PathBuf>,
    inhom: Option<PathBuf>,
) -> Result<(MeasurementFrame, MeasurementFrame)> {
    let current = cfg.protocol.current_amplitude;
    let hp = hom.unwrap_or_else(|| cfg.output.path(&cfg.output.hom));
    let ip = inhom.unwrap_or_else(|| cfg.output.path(&cfg.output.inhom));
    Ok((load_measurement(&hp, current)?, load_measurement(&ip, current)?))
}

fn run_reconstruct(cfg: &RunConfig, hom: Option<PathBuf>, inhom: Option<PathBuf>) -> Result<()> {
    let (hom, inhom) = load_pair(cfg, hom, inhom)?;
    let rec = reconstruct(&hom, &inhom, &cfg.reconstruction_setup())?;
    output_dir(cfg)?;
    let out = &cfg.output;
    let r = &rec.result;

    let mut w = create(&out.path("kappa.csv"))?;
    write_pixel_csv(&rec.grid, "kappa", &r.kappa, &mut w)?;
    w.flush()?;
    let mut w = create(&out.path("recon.pgm"))?;
    let mapping = write_pgm(&rec.grid, &r.kappa, &mut w)?;
    w.flush()?;

    let c = rec.constraints.as_ref();
    let report = json!({
        "method": r.method,
        "objective": r.objective,
        "iterations": r.iterations,
        "converged": r.converged,
        "projected_gradient_norm": r.projected_gradient_norm,
        "active_set_size": r.active_set.len(),
        "n_pixels": rec.grid.len(),
        "delta": rec.difference.delta(),
        "a_plus": c.map(|c| c.a_plus),
        "a_minus": c.map(|c| c.a_minus),
        "polarity": cfg.inversion.polarity,
        "background": cfg.inversion.background,
        "contrast": cfg.inversion.contrast,
        "alpha": (r.method == Method::Tikhonov).then_some(cfg.inversion.alpha),
        "calibration_scale": rec.scale,
        "runtime_seconds": rec.runtime_seconds,
        "pgm": mapping,
    });
    let mut w = create(&out.path("report.json"))?;
    serde_json::to_writer_pretty(&mut w, &report).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    println!(
        "{:?}: objective {:e}, {} iterations, converged {}, {:.2} s",
        r.method, r.objective, r.iterations, r.converged, rec.runtime_seconds
    );
    Ok(())
}

fn constraints(cfg: &RunConfig, hom: Option<PathBuf>, inhom: Option<PathBuf>) -> Result<()> {
    let (hom, inhom) = load_pair(cfg, hom, inhom)?;
    let problem = linearize(&hom, &inhom, &cfg.reconstruction_setup())?;
    let set = problem.constraints(&cfg.inversion)?;
    output_dir(cfg)?;
    let mut w = create(&cfg.output.path("beta.csv"))?;
    set.write_csv(&problem.grid, &mut w)?;
    w.flush()?;
    let mut w = create(&cfg.output.path("beta.pgm"))?;
    write_pgm(&problem.grid, &set.upper, &mut w)?;
    w.flush()?;
    let finite = set.beta.iter().filter(|b| b.is_finite()).count();
    println!(
        "{} pixels ({} with finite beta), delta {:e}, a+ {:e}, a- {:e}",
        set.len(),
        finite,
        set.delta,
        set.a_plus,
        set.a_minus
    );
    Ok(())
}

fn calibrate(measured: &Path, model: &Path, current: f64) -> Result<()> {
    let measured = load_measurement(measured, current)?;
    let model = load_measurement(model, current)?;
    let c = calibrate_frames(&measured, &model)?;
    let before = calibration_residual(&measured, &model, 1.0)?;
    let after = calibration_residual(&measured, &model, c)?;
    println!("c = {c:e}");
    println!("residual before = {before:e}");
    println!("residual after = {after:e}");
    Ok(())
}

fn forward(cfg: &RunConfig, out: &Path, phantom: bool, sim_mesh: bool) -> Result<()> {
    let params = if sim_mesh { cfg.sim_mesh() } else { cfg.recon_mesh() };
    let mesh = build_mesh(&params)?;
    let field = if phantom {
        realize_phantom(&mesh, &cfg.phantom)?
    } else {
        ConductivityField::uniform(mesh.n_triangles(), cfg.inversion.background)?
    };
    let frame = measure_full(&mesh, &field, cfg.protocol.current_amplitude)?;
    save_measurement(out, &frame)?;
    println!("wrote {}", out.display());
    Ok(())
}
