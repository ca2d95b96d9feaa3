//! Run configuration, read from a single TOML file.
//!
//! Every section and field is optional; the defaults are listed on each field.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{
    add_noise, measure_full, realize_phantom, ConductivityField, ForwardSolver, MeasurementFrame,
    PhantomSpec, DEFAULT_CURRENT,
};
use crate::geometry::{build_mesh, MeshParams};
use crate::inversion::{InversionConfig, ReconstructionSetup};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    /// Phantom for `simulate`. Default: homogeneous σ₀ = 1 S/m, no inclusions.
    pub phantom: PhantomSpec,
    pub protocol: ProtocolConfig,
    pub inversion: InversionConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometryConfig {
    /// Disk radius in meters. Default 0.1.
    pub radius: f64,
    /// Default 16.
    pub n_electrodes: usize,
    /// Fraction of the perimeter covered by each electrode. Default 0.0159.
    pub electrode_arc_fraction: f64,
    /// Mesh refinement used to simulate data. Default 3.
    pub sim_refinement: usize,
    /// Mesh refinement used for reconstruction. Default 2.
    pub recon_refinement: usize,
    /// Pixels per side of the reconstruction grid. Default 24.
    pub grid_size: usize,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        GeometryConfig {
            radius: 0.1,
            n_electrodes: 16,
            electrode_arc_fraction: 0.0159,
            sim_refinement: 3,
            recon_refinement: 2,
            grid_size: 24,
        }
    }
}

/// Which entries a simulated device reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// All `L²` entries.
    Full,
    /// Entries with `|k − l| ≤ 1` (mod `L`) withheld.
    Adjacent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    /// Drive current in amperes. Default 1e-3.
    pub current_amplitude: f64,
    /// Noise standard deviation relative to max|U| over reported entries. Default 0.001.
    pub noise_level: f64,
    /// Default 0.
    pub seed: u64,
    /// Default `adjacent`.
    pub mask: MaskKind,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            current_amplitude: DEFAULT_CURRENT,
            noise_level: 1e-3,
            seed: 0,
            mask: MaskKind::Adjacent,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory for every output file. Default `.`.
    pub dir: PathBuf,
    /// Homogeneous frame written by `simulate`. Default `hom.json`.
    pub hom: String,
    /// Phantom frame written by `simulate`. Default `inhom.json`.
    pub inhom: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("."),
            hom: "hom.json".into(),
            inhom: "inhom.json".into(),
        }
    }
}

impl OutputConfig {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let bad = |msg: String| Err(Error::Config(msg));
        if !(g.radius.is_finite() && g.radius > 0.0) {
            return bad(format!("geometry.radius must be positive, got {}", g.radius));
        }
        if g.n_electrodes < 4 {
            return bad(format!("geometry.n_electrodes must be at least 4, got {}", g.n_electrodes));
        }
        if !(g.electrode_arc_fraction > 0.0 && g.electrode_arc_fraction < 1.0) {
            return bad(format!(
                "geometry.electrode_arc_fraction must lie in (0, 1), got {}",
                g.electrode_arc_fraction
            ));
        }
        if g.grid_size == 0 {
            return bad("geometry.grid_size must be positive".into());
        }
        let p = &self.protocol;
        if !(p.current_amplitude.is_finite() && p.current_amplitude > 0.0) {
            return bad(format!(
                "protocol.current_amplitude must be positive, got {}",
                p.current_amplitude
            ));
        }
        if !(p.noise_level.is_finite() && p.noise_level >= 0.0) {
            return bad(format!("protocol.noise_level must be >= 0, got {}", p.noise_level));
        }
        let i = &self.inversion;
        if !(i.background.is_finite() && i.background > 0.0) {
            return bad(format!("inversion.background must be positive, got {}", i.background));
        }
        if !(i.contrast.is_finite() && i.contrast > 0.0) {
            return bad(format!("inversion.contrast must be positive, got {}", i.contrast));
        }
        if !(i.alpha.is_finite() && i.alpha > 0.0) {
            return bad(format!("inversion.alpha must be positive, got {}", i.alpha));
        }
        if let Some(m) = i.manual_cap {
            if !(m.is_finite() && m >= 0.0) {
                return bad(format!("inversion.manual_cap must be >= 0, got {m}"));
            }
        }
        if !(i.solver.tol.is_finite() && i.solver.tol > 0.0) {
            return bad(format!("inversion.solver.tol must be positive, got {}", i.solver.tol));
        }
        self.phantom
            .validate()
            .map_err(|e| Error::Config(format!("phantom: {e}")))
    }

    fn mesh(&self, refinement_level: usize) -> MeshParams {
        MeshParams {
            radius: self.geometry.radius,
            n_electrodes: self.geometry.n_electrodes,
            electrode_arc_fraction: self.geometry.electrode_arc_fraction,
            refinement_level,
        }
    }

    pub fn sim_mesh(&self) -> MeshParams {
        self.mesh(self.geometry.sim_refinement)
    }

    pub fn recon_mesh(&self) -> MeshParams {
        self.mesh(self.geometry.recon_refinement)
    }

    /// Homogeneous (`σ₀` of the phantom) and phantom frames on the simulation
    /// mesh, masked and with noise. The two frames draw noise from the seeds
    /// `2·seed` and `2·seed + 1`.
    pub fn simulate(&self) -> Result<(MeasurementFrame, MeasurementFrame)> {
        let mesh = build_mesh(&self.sim_mesh())?;
        let current = self.protocol.current_amplitude;
        let background = ConductivityField::uniform(mesh.n_triangles(), self.phantom.background)?;
        let hom = measure_full(&mesh, &background, current)?;
        let field = realize_phantom(&mesh, &self.phantom)?;
        let inhom = ForwardSolver::new(&mesh, &field)?.measure_full(current)?;
        let mask = |f: MeasurementFrame| match self.protocol.mask {
            MaskKind::Full => f,
            MaskKind::Adjacent => f.masked_adjacent(),
        };
        let seed = self.protocol.seed.wrapping_mul(2);
        let level = self.protocol.noise_level;
        Ok((
            add_noise(&mask(hom), level, seed)?,
            add_noise(&mask(inhom), level, seed.wrapping_add(1))?,
        ))
    }

    pub fn reconstruction_setup(&self) -> ReconstructionSetup {
        ReconstructionSetup {
            mesh: self.recon_mesh(),
            grid_size: self.geometry.grid_size,
            inversion: self.inversion.clone(),
        }
    }
}
