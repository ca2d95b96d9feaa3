//! File formats: measurement frames (JSON, CSV import), per-pixel CSV tables
//! and plain PGM images.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::forward::{adjacent_mask, MeasurementFrame};
use crate::geometry::PixelGrid;

pub const MEASUREMENT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum MaskName {
    Full,
    Adjacent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum MaskField {
    Named(MaskName),
    /// Row-major, `true` for reported entries.
    Explicit(Vec<bool>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MeasurementFile {
    version: u32,
    #[serde(rename = "L")]
    n_electrodes: usize,
    current_amplitude: f64,
    unit: String,
    valid_mask: MaskField,
    /// Row-major `U(k, l)`, `null` where not reported.
    #[serde(rename = "U")]
    values: Vec<Option<f64>>,
}

pub fn write_measurement<W: Write>(frame: &MeasurementFrame, w: W) -> Result<()> {
    let n = frame.n_electrodes();
    let valid_mask = if frame.is_complete() {
        MaskField::Named(MaskName::Full)
    } else if frame.valid_mask() == adjacent_mask(n).as_slice() {
        MaskField::Named(MaskName::Adjacent)
    } else {
        MaskField::Explicit(frame.valid_mask().to_vec())
    };
    let values = (0..n * n)
        .map(|i| {
            let (k, l) = (i / n, i % n);
            frame.is_valid(k, l).then(|| frame.values()[(k, l)])
        })
        .collect();
    let file = MeasurementFile {
        version: MEASUREMENT_VERSION,
        n_electrodes: n,
        current_amplitude: frame.current_amplitude(),
        unit: "V".into(),
        valid_mask,
        values,
    };
    serde_json::to_writer_pretty(w, &file).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_measurement<R: Read>(r: R) -> Result<MeasurementFrame> {
    let value: Value = serde_json::from_reader(r).map_err(|e| Error::Parse(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Parse("missing integer field \"version\"".into()))?;
    if version != MEASUREMENT_VERSION as u64 {
        return Err(Error::Version {
            found: version.min(u32::MAX as u64) as u32,
            expected: MEASUREMENT_VERSION,
        });
    }
    let file: MeasurementFile =
        serde_json::from_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    if file.unit != "V" {
        return Err(Error::Parse(format!("unsupported unit {:?}, expected \"V\"", file.unit)));
    }
    let n = file.n_electrodes;
    if file.values.len() != n * n {
        return Err(Error::Parse(format!(
            "U has {} entries, expected L*L = {}",
            file.values.len(),
            n * n
        )));
    }
    let mask = match file.valid_mask {
        MaskField::Named(MaskName::Full) => vec![true; n * n],
        MaskField::Named(MaskName::Adjacent) => adjacent_mask(n),
        MaskField::Explicit(m) if m.len() == n * n => m,
        MaskField::Explicit(m) => {
            return Err(Error::Parse(format!("valid_mask has {} entries, expected {}", m.len(), n * n)))
        }
    };
    let mut values = DMatrix::zeros(n, n);
    for (i, (v, &ok)) in file.values.iter().zip(&mask).enumerate() {
        match (v, ok) {
            (Some(x), true) => values[(i / n, i % n)] = *x,
            (None, false) => {}
            (Some(_), false) => {
                return Err(Error::Parse(format!("entry {i} is masked but has a value")))
            }
            (None, true) => return Err(Error::Parse(format!("entry {i} is valid but null"))),
        }
    }
    if !(file.current_amplitude.is_finite() && file.current_amplitude > 0.0) {
        return Err(Error::Parse(format!(
            "current_amplitude must be positive, got {}",
            file.current_amplitude
        )));
    }
    MeasurementFrame::with_mask(values, mask, file.current_amplitude)
}

/// `L` lines of `L` comma-separated values; always a full frame.
pub fn read_csv_matrix<R: Read>(r: R, current_amplitude: f64) -> Result<MeasurementFrame> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(r);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let row = record
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse("CSV matrix must be square".into()));
    }
    let values = DMatrix::from_fn(n, n, |k, l| rows[k][l]);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("CSV matrix".into()));
    }
    Ok(MeasurementFrame::full(values, current_amplitude))
}

/// Reads `.json` measurement files, or `.csv` matrices at the given current.
pub fn load_measurement(path: &Path, csv_current: f64) -> Result<MeasurementFrame> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv_matrix(reader, csv_current),
        _ => read_measurement(reader),
    }
}

pub fn save_measurement(path: &Path, frame: &MeasurementFrame) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_measurement(frame, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Per-pixel values as CSV: `pixel,row,col,x,y,<name>`.
pub fn write_pixel_csv<W: Write>(grid: &PixelGrid, name: &str, values: &[f64], w: W) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} pixels",
            values.len(),
            grid.len()
        )));
    }
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Parse(e.to_string());
    out.write_record(["pixel", "row", "col", "x", "y", name]).map_err(csv_err)?;
    for (p, v) in values.iter().enumerate() {
        let (row, col) = grid.cells()[p];
        let c = grid.pixel_centers()[p];
        out.write_record([
            p.to_string(),
            row.to_string(),
            col.to_string(),
            format!("{:e}", c[0]),
            format!("{:e}", c[1]),
            format!("{v:e}"),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Gray-level mapping of a PGM image: `level = round(255 (v − min)/(max − min))`,
/// or 128 everywhere when `min == max`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PgmMapping {
    pub min: f64,
    pub max: f64,
    /// Level used for grid cells outside the retained pixels (the level of 0).
    pub outside_level: u8,
}

impl PgmMapping {
    pub fn from_values(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (min, max) = if values.is_empty() { (0.0, 0.0) } else { (min, max) };
        let mut m = PgmMapping {
            min,
            max,
            outside_level: 0,
        };
        m.outside_level = m.level(0.0);
        m
    }

    pub fn level(&self, v: f64) -> u8 {
        if self.max > self.min {
            (255.0 * (v - self.min) / (self.max - self.min)).round().clamp(0.0, 255.0) as u8
        } else {
            128
        }
    }
}

/// Plain (P2) 8-bit PGM of the `n × n` grid, row 0 at the top.
pub fn write_pgm<W: Write>(grid: &PixelGrid, values: &[f64], mut w: W) -> Result<PgmMapping> {
    if values.len() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} values for {} pixels",
            values.len(),
            grid.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image values".into()));
    }
    let mapping = PgmMapping::from_values(values);
    let n = grid.n_side();
    writeln!(w, "P2")?;
    writeln!(w, "{n} {n}")?;
    writeln!(w, "255")?;
    for row in 0..n {
        let line: Vec<String> = (0..n)
            .map(|col| {
                grid.pixel_at(row, col)
                    .map_or(mapping.outside_level, |p| mapping.level(values[p]))
                    .to_string()
            })
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(mapping)
}
