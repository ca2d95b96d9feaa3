//! Disk meshes with boundary electrodes, and the square pixel partition on
//! which conductivity changes are reconstructed.
//!
//! The mesh is built from concentric rings. Every ring carries the same node
//! pattern in each of the `L` angular sectors (one sector per electrode), and
//! neighbouring rings are stitched together sector by sector. The result is
//! exactly `L`-fold rotationally symmetric: rotating by `2π/L` maps nodes to
//! nodes and electrode `k` to electrode `k + 1`.
//!
//! The outer ring resolves each electrode arc with at least two boundary
//! edges. Electrode `k` is centred at angle `2πk/L`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Rings at refinement level 0; doubled per level, so node count grows ~4×.
const BASE_RINGS: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeshParams {
    /// Disk radius in metres.
    pub radius: f64,
    pub n_electrodes: usize,
    /// Angular width of one electrode as a fraction of the full circumference.
    pub electrode_arc_fraction: f64,
    pub refinement_level: usize,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams {
            radius: 0.1,
            n_electrodes: 16,
            electrode_arc_fraction: 0.0159,
            refinement_level: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DiskMesh {
    nodes: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    radius: f64,
    electrode_nodes: Vec<Vec<usize>>,
    /// First node index of each ring; ring 0 is the centre node.
    ring_start: Vec<usize>,
    /// Nodes per sector on each ring (0 for the centre).
    ring_per_sector: Vec<usize>,
}

/// Builds the ring mesh. See the module docs for the layout.
pub fn build_mesh(params: &MeshParams) -> Result<DiskMesh> {
    let MeshParams {
        radius,
        n_electrodes,
        electrode_arc_fraction: arc,
        refinement_level,
    } = *params;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Geometry(format!("radius must be positive, got {radius}")));
    }
    if n_electrodes < 4 {
        return Err(Error::Geometry(format!(
            "need at least 4 electrodes, got {n_electrodes}"
        )));
    }
    if !(arc > 0.0 && arc * (n_electrodes as f64) < 1.0) {
        return Err(Error::Geometry(format!(
            "electrode arc fraction {arc} with {n_electrodes} electrodes overlaps or is empty"
        )));
    }
    if refinement_level > 8 {
        return Err(Error::Geometry(format!(
            "refinement level {refinement_level} is unreasonably large"
        )));
    }

    let l = n_electrodes;
    let n_rings = BASE_RINGS << refinement_level;
    let h = radius / n_rings as f64;

    // Local angular positions t ∈ [0, 1) within a sector, per ring.
    let mut ring_t: Vec<Vec<f64>> = Vec::with_capacity(n_rings + 1);
    ring_t.push(Vec::new());
    for i in 1..n_rings {
        let m = ((2.0 * PI * i as f64 / l as f64).round() as usize).max(1);
        ring_t.push((0..m).map(|j| (j as f64 + 0.5) / m as f64).collect());
    }

    // Outer ring: half gap, electrode, half gap. t = 0.5 is the electrode centre.
    let half_width = 0.5 * arc * l as f64;
    let (e0, e1) = (0.5 - half_width, 0.5 + half_width);
    let sector_len = 2.0 * PI * radius / l as f64;
    let gap_edges = ((e0 * sector_len / h).ceil() as usize).max(1);
    let electrode_edges = ((2.0 * half_width * sector_len / h).ceil() as usize).max(2);
    let mut outer = Vec::new();
    for j in 0..gap_edges {
        outer.push(e0 * j as f64 / gap_edges as f64);
    }
    let first_electrode_node = outer.len();
    for j in 0..=electrode_edges {
        outer.push(e0 + (e1 - e0) * j as f64 / electrode_edges as f64);
    }
    let last_electrode_node = outer.len() - 1;
    for j in 1..gap_edges {
        outer.push(e1 + (1.0 - e1) * j as f64 / gap_edges as f64);
    }
    ring_t.push(outer);

    let sector_angle = 2.0 * PI / l as f64;
    let mut nodes = vec![[0.0, 0.0]];
    let mut ring_start = vec![0];
    let mut ring_per_sector = vec![0];
    for (i, ts) in ring_t.iter().enumerate().skip(1) {
        ring_start.push(nodes.len());
        ring_per_sector.push(ts.len());
        let r = radius * i as f64 / n_rings as f64;
        for s in 0..l {
            for &t in ts {
                let theta = sector_angle * (s as f64 + t - 0.5);
                nodes.push([r * theta.cos(), r * theta.sin()]);
            }
        }
    }

    let mut triangles = Vec::new();
    let first_ring = ring_start[1];
    let n_first = l * ring_per_sector[1];
    for j in 0..n_first {
        triangles.push([0, first_ring + j, first_ring + (j + 1) % n_first]);
    }
    for i in 1..n_rings {
        stitch_rings(
            &ring_t[i],
            ring_start[i],
            &ring_t[i + 1],
            ring_start[i + 1],
            l,
            &mut triangles,
        );
    }

    let outer_start = ring_start[n_rings];
    let per_sector = ring_per_sector[n_rings];
    let electrode_nodes = (0..l)
        .map(|s| {
            (first_electrode_node..=last_electrode_node)
                .map(|j| outer_start + s * per_sector + j)
                .collect()
        })
        .collect();

    Ok(DiskMesh {
        nodes,
        triangles,
        radius,
        electrode_nodes,
        ring_start,
        ring_per_sector,
    })
}

/// Zips two neighbouring rings into a strip of triangles. Nodes are compared by
/// (sector, local position) so every sector makes identical choices.
fn stitch_rings(
    inner_t: &[f64],
    inner_start: usize,
    outer_t: &[f64],
    outer_start: usize,
    l: usize,
    triangles: &mut Vec<[usize; 3]>,
) {
    let (mi, mo) = (inner_t.len(), outer_t.len());
    let (ni, no) = (mi * l, mo * l);
    let inner = |c: usize| inner_start + c % ni;
    let outer = |c: usize| outer_start + c % no;
    // Start from the last node of the last sector on both rings.
    let mut a = inner(ni - 1);
    let mut b = outer(no - 1);
    let (mut ca, mut cb) = (0usize, 0usize);
    while ca < ni || cb < no {
        let advance_inner = if ca == ni {
            false
        } else if cb == no {
            true
        } else {
            let ka = (ca / mi, inner_t[ca % mi]);
            let kb = (cb / mo, outer_t[cb % mo]);
            ka.0 < kb.0 || (ka.0 == kb.0 && ka.1 <= kb.1)
        };
        if advance_inner {
            let next = inner(ca);
            triangles.push([a, b, next]);
            a = next;
            ca += 1;
        } else {
            let next = outer(cb);
            triangles.push([a, b, next]);
            b = next;
            cb += 1;
        }
    }
}

impl DiskMesh {
    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrode_nodes.len()
    }

    /// Boundary node groups, one per electrode, counterclockwise from angle 0.
    pub fn electrode_nodes(&self) -> &[Vec<usize>] {
        &self.electrode_nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Signed area (positive for counterclockwise triangles).
    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    pub fn barycenter(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    /// Gradients of the three linear basis functions on triangle `t`.
    pub fn basis_gradients(&self, t: usize) -> [[f64; 2]; 3] {
        let [a, b, c] = self.triangles[t].map(|i| self.nodes[i]);
        let two_area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        [
            [(b[1] - c[1]) / two_area, (c[0] - b[0]) / two_area],
            [(c[1] - a[1]) / two_area, (a[0] - c[0]) / two_area],
            [(a[1] - b[1]) / two_area, (b[0] - a[0]) / two_area],
        ]
    }

    /// Gradient of a piecewise-linear nodal field on triangle `t`.
    pub fn field_gradient(&self, t: usize, values: &[f64]) -> [f64; 2] {
        let grads = self.basis_gradients(t);
        let mut g = [0.0; 2];
        for (corner, &node) in self.triangles[t].iter().enumerate() {
            g[0] += values[node] * grads[corner][0];
            g[1] += values[node] * grads[corner][1];
        }
        g
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Outer-ring node indices in counterclockwise order.
    pub fn boundary_nodes(&self) -> std::ops::Range<usize> {
        *self.ring_start.last().unwrap()..self.nodes.len()
    }

    /// Electrode owning each node, if any.
    pub fn node_electrode(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.nodes.len()];
        for (e, group) in self.electrode_nodes.iter().enumerate() {
            for &n in group {
                owner[n] = Some(e);
            }
        }
        owner
    }

    /// Node permutation realising a rotation by one electrode spacing (`2π/L`).
    pub fn rotation_node_map(&self) -> Vec<usize> {
        let l = self.n_electrodes();
        let mut map = vec![0; self.nodes.len()];
        for (ring, (&start, &m)) in self
            .ring_start
            .iter()
            .zip(&self.ring_per_sector)
            .enumerate()
        {
            if ring == 0 {
                continue;
            }
            let n = m * l;
            for c in 0..n {
                map[start + c] = start + (c + m) % n;
            }
        }
        map
    }

    /// Triangle permutation matching [`rotation_node_map`](Self::rotation_node_map).
    pub fn rotation_triangle_map(&self) -> Vec<usize> {
        let key = |t: &[usize; 3]| {
            let mut k = *t;
            k.sort_unstable();
            k
        };
        let index: HashMap<[usize; 3], usize> = self
            .triangles
            .iter()
            .enumerate()
            .map(|(i, t)| (key(t), i))
            .collect();
        let nodes = self.rotation_node_map();
        self.triangles
            .iter()
            .map(|t| index[&key(&t.map(|n| nodes[n]))])
            .collect()
    }

    /// Plain-text dump: a `nodes` table (`index x y`), a `triangles` table
    /// (`index n0 n1 n2`, counterclockwise) and an `electrodes` table
    /// (`index node...`). Each table starts with a header line `<name> <count>`.
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# disk mesh, radius {:e}", self.radius)?;
        writeln!(w, "nodes {}", self.nodes.len())?;
        for (i, p) in self.nodes.iter().enumerate() {
            writeln!(w, "{i} {:.17e} {:.17e}", p[0], p[1])?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(w, "{i} {} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "electrodes {}", self.electrode_nodes.len())?;
        for (i, group) in self.electrode_nodes.iter().enumerate() {
            write!(w, "{i}")?;
            for n in group {
                write!(w, " {n}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Square pixels of side `2R / n_side` clipped to the disk. Only pixels that
/// receive at least one triangle (by barycenter) are retained, indexed
/// row-major with row 0 at the top.
#[derive(Clone, Debug)]
pub struct PixelGrid {
    n_side: usize,
    radius: f64,
    /// `(row, col)` of each retained pixel.
    cells: Vec<(usize, usize)>,
    /// Area-weighted centroid of the pixel's triangles.
    centers: Vec<Point>,
    /// Total area of the pixel's triangles.
    areas: Vec<f64>,
    triangle_pixel: Vec<Option<usize>>,
    pixel_triangles: Vec<Vec<usize>>,
}

pub fn build_pixel_grid(mesh: &DiskMesh, n_side: usize) -> Result<PixelGrid> {
    if n_side < 2 {
        return Err(Error::Geometry(format!("pixel grid needs n_side >= 2, got {n_side}")));
    }
    let r = mesh.radius();
    let width = 2.0 * r / n_side as f64;
    let cell_of = |p: Point| {
        let col = (((p[0] + r) / width).floor().max(0.0) as usize).min(n_side - 1);
        let row = (((r - p[1]) / width).floor().max(0.0) as usize).min(n_side - 1);
        (row, col)
    };

    let mut cell_triangles: Vec<Vec<usize>> = vec![Vec::new(); n_side * n_side];
    for t in 0..mesh.n_triangles() {
        let (row, col) = cell_of(mesh.barycenter(t));
        cell_triangles[row * n_side + col].push(t);
    }

    // A cell covering at least half a pixel must hold a triangle.
    for row in 0..n_side {
        for col in 0..n_side {
            if cell_triangles[row * n_side + col].is_empty()
                && clipped_fraction(r, width, row, col) >= 0.5
            {
                return Err(Error::MeshTooCoarse(format!(
                    "pixel ({row}, {col}) of a {n_side}x{n_side} grid contains no triangle barycenter"
                )));
            }
        }
    }

    let mut grid = PixelGrid {
        n_side,
        radius: r,
        cells: Vec::new(),
        centers: Vec::new(),
        areas: Vec::new(),
        triangle_pixel: vec![None; mesh.n_triangles()],
        pixel_triangles: Vec::new(),
    };
    for (cell, tris) in cell_triangles.into_iter().enumerate() {
        if tris.is_empty() {
            continue;
        }
        let pixel = grid.cells.len();
        let mut area = 0.0;
        let mut c = [0.0; 2];
        for &t in &tris {
            let a = mesh.triangle_area(t);
            let b = mesh.barycenter(t);
            area += a;
            c[0] += a * b[0];
            c[1] += a * b[1];
            grid.triangle_pixel[t] = Some(pixel);
        }
        grid.cells.push((cell / n_side, cell % n_side));
        grid.centers.push([c[0] / area, c[1] / area]);
        grid.areas.push(area);
        grid.pixel_triangles.push(tris);
    }
    Ok(grid)
}

/// Fraction of a square cell inside the disk, by 16×16 midpoint sampling.
fn clipped_fraction(radius: f64, width: f64, row: usize, col: usize) -> f64 {
    const SAMPLES: usize = 16;
    let x0 = -radius + col as f64 * width;
    let y0 = radius - (row + 1) as f64 * width;
    let mut inside = 0;
    for i in 0..SAMPLES {
        for j in 0..SAMPLES {
            let x = x0 + (i as f64 + 0.5) * width / SAMPLES as f64;
            let y = y0 + (j as f64 + 0.5) * width / SAMPLES as f64;
            if x * x + y * y < radius * radius {
                inside += 1;
            }
        }
    }
    inside as f64 / (SAMPLES * SAMPLES) as f64
}

impl PixelGrid {
    pub fn n_side(&self) -> usize {
        self.n_side
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn pixel_width(&self) -> f64 {
        2.0 * self.radius / self.n_side as f64
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn pixel_centers(&self) -> &[Point] {
        &self.centers
    }

    pub fn pixel_areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn triangle_pixel(&self) -> &[Option<usize>] {
        &self.triangle_pixel
    }

    pub fn pixel_triangles(&self, pixel: usize) -> &[usize] {
        &self.pixel_triangles[pixel]
    }

    /// Geometric centre of the (unclipped) square cell.
    pub fn cell_center(&self, pixel: usize) -> Point {
        let (row, col) = self.cells[pixel];
        let w = self.pixel_width();
        [
            -self.radius + (col as f64 + 0.5) * w,
            self.radius - (row as f64 + 0.5) * w,
        ]
    }

    /// Retained pixel at `(row, col)`, if any.
    pub fn pixel_at(&self, row: usize, col: usize) -> Option<usize> {
        self.cells.binary_search(&(row, col)).ok()
    }

    /// Whether the whole square cell lies inside the disk of the given centre and radius.
    pub fn cell_inside_disk(&self, pixel: usize, center: Point, radius: f64) -> bool {
        let (row, col) = self.cells[pixel];
        let w = self.pixel_width();
        let x0 = -self.radius + col as f64 * w;
        let y0 = self.radius - (row + 1) as f64 * w;
        [(x0, y0), (x0 + w, y0), (x0, y0 + w), (x0 + w, y0 + w)]
            .iter()
            .all(|&(x, y)| (x - center[0]).hypot(y - center[1]) <= radius)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(radius: f64, l: usize, arc: f64, level: usize) -> MeshParams {
        MeshParams {
            radius,
            n_electrodes: l,
            electrode_arc_fraction: arc,
            refinement_level: level,
        }
    }

    fn edge_counts(mesh: &DiskMesh) -> HashMap<(usize, usize), usize> {
        let mut edges = HashMap::new();
        for t in mesh.triangles() {
            for i in 0..3 {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        edges
    }

    #[test]
    fn phantom_tank_geometry() {
        let mesh = build_mesh(&params(0.1, 16, 0.0159, 2)).unwrap();
        assert_eq!(mesh.electrode_nodes().len(), 16);
        for (k, group) in mesh.electrode_nodes().iter().enumerate() {
            let (a, b) = (mesh.nodes()[group[0]], mesh.nodes()[*group.last().unwrap()]);
            let angle = (a[1] + b[1]).atan2(a[0] + b[0]).rem_euclid(2.0 * PI);
            let expected = 2.0 * PI * k as f64 / 16.0;
            let diff = (angle - expected).abs();
            assert!(diff.min(2.0 * PI - diff) < 1e-12, "electrode {k} at {angle}");
        }
    }

    #[test]
    fn electrode_arc_length_matches_fraction() {
        let mesh = build_mesh(&params(1.0, 4, 0.05, 0)).unwrap();
        for group in mesh.electrode_nodes() {
            assert!(group.len() >= 3, "at least two boundary edges per electrode");
            let a = mesh.nodes()[group[0]];
            let b = mesh.nodes()[*group.last().unwrap()];
            let arc = (a[0] * b[0] + a[1] * b[1]).clamp(-1.0, 1.0).acos();
            assert!((arc - 0.05 * 2.0 * PI).abs() < 1e-12);
        }
    }

    #[test]
    fn disk_area_converges() {
        for (level, tol) in [(0, 1e-2), (2, 1e-3)] {
            for (l, arc) in [(16, 0.0159), (4, 0.05)] {
                let mesh = build_mesh(&params(1.0, l, arc, level)).unwrap();
                let rel = (mesh.total_area() - PI).abs() / PI;
                assert!(rel < tol, "level {level}, L={l}: {rel}");
            }
        }
    }

    #[test]
    fn triangles_positive_and_conforming() {
        for level in 0..=3 {
            let mesh = build_mesh(&params(0.1, 16, 0.0159, level)).unwrap();
            for t in 0..mesh.n_triangles() {
                assert!(mesh.triangle_area(t) > 0.0, "triangle {t} at level {level}");
            }
            let boundary: std::collections::HashSet<_> = mesh.boundary_nodes().collect();
            for (&(a, b), &count) in &edge_counts(&mesh) {
                if boundary.contains(&a) && boundary.contains(&b) {
                    assert_eq!(count, 1);
                } else {
                    assert_eq!(count, 2, "interior edge ({a}, {b})");
                }
            }
            // Euler characteristic of a disk.
            let e = edge_counts(&mesh).len() as i64;
            assert_eq!(mesh.n_nodes() as i64 - e + mesh.n_triangles() as i64, 1);
        }
    }

    #[test]
    fn node_count_grows_fourfold() {
        let counts: Vec<usize> = (0..4)
            .map(|lv| build_mesh(&params(1.0, 16, 0.0159, lv)).unwrap().n_nodes())
            .collect();
        for w in counts[1..].windows(2) {
            let ratio = w[1] as f64 / w[0] as f64;
            assert!((3.0..5.0).contains(&ratio), "{counts:?}");
        }
    }

    #[test]
    fn electrodes_disjoint_contiguous_on_boundary() {
        let mesh = build_mesh(&params(0.1, 16, 0.0159, 1)).unwrap();
        let boundary = mesh.boundary_nodes();
        let mut seen = std::collections::HashSet::new();
        for group in mesh.electrode_nodes() {
            for w in group.windows(2) {
                assert_eq!(w[1], w[0] + 1);
            }
            for &n in group {
                assert!(boundary.contains(&n));
                assert!(seen.insert(n));
            }
        }
    }

    #[test]
    fn rotation_maps_mesh_onto_itself() {
        let mesh = build_mesh(&params(1.0, 16, 0.0159, 1)).unwrap();
        let map = mesh.rotation_node_map();
        let (c, s) = ((2.0 * PI / 16.0).cos(), (2.0 * PI / 16.0).sin());
        for (i, p) in mesh.nodes().iter().enumerate() {
            let q = mesh.nodes()[map[i]];
            let rotated = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            assert!((rotated[0] - q[0]).abs() < 1e-12 && (rotated[1] - q[1]).abs() < 1e-12);
        }
        for (k, group) in mesh.electrode_nodes().iter().enumerate() {
            let next = &mesh.electrode_nodes()[(k + 1) % 16];
            let mapped: Vec<usize> = group.iter().map(|&n| map[n]).collect();
            assert_eq!(&mapped, next);
        }
        let tmap = mesh.rotation_triangle_map();
        let mut sorted = tmap.clone();
        sorted.sort_unstable();
        assert!(sorted.iter().enumerate().all(|(i, &t)| i == t));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_mesh(&params(1.0, 3, 0.05, 0)).is_err());
        assert!(build_mesh(&params(1.0, 16, 1.0 / 16.0, 0)).is_err());
        assert!(build_mesh(&params(1.0, 16, 0.0, 0)).is_err());
        assert!(build_mesh(&params(-1.0, 16, 0.01, 0)).is_err());
    }

    #[test]
    fn two_by_two_grid_is_quadrants() {
        let mesh = build_mesh(&params(1.0, 16, 0.0159, 1)).unwrap();
        let grid = build_pixel_grid(&mesh, 2).unwrap();
        assert_eq!(grid.len(), 4);
        let quarter = mesh.total_area() / 4.0;
        for a in grid.pixel_areas() {
            assert!((a - quarter).abs() < 0.02 * quarter, "{a} vs {quarter}");
        }
        for (p, c) in grid.pixel_centers().iter().enumerate() {
            let (row, col) = grid.cells()[p];
            assert_eq!(c[0] > 0.0, col == 1);
            assert_eq!(c[1] > 0.0, row == 0);
        }
    }

    #[test]
    fn fine_grid_partitions_the_mesh() {
        let mesh = build_mesh(&params(1.0, 16, 0.0159, 3)).unwrap();
        let grid = build_pixel_grid(&mesh, 32).unwrap();
        assert!(grid.len() <= 32 * 32);
        assert!(grid.triangle_pixel().iter().all(Option::is_some));
        for p in 0..grid.len() {
            assert!(!grid.pixel_triangles(p).is_empty());
        }
        let sum: f64 = grid.pixel_areas().iter().sum();
        assert!((sum - mesh.total_area()).abs() < 1e-8 * mesh.total_area());
    }

    #[test]
    fn coarse_mesh_rejected_for_fine_grid() {
        let mesh = build_mesh(&params(1.0, 16, 0.0159, 0)).unwrap();
        assert!(matches!(
            build_pixel_grid(&mesh, 40),
            Err(Error::MeshTooCoarse(_))
        ));
        assert!(build_pixel_grid(&mesh, 1).is_err());
    }

    #[test]
    fn mesh_text_export_has_all_tables() {
        let mesh = build_mesh(&params(1.0, 8, 0.05, 0)).unwrap();
        let mut buf = Vec::new();
        mesh.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains(&format!("nodes {}", mesh.n_nodes())));
        assert!(text.contains(&format!("triangles {}", mesh.n_triangles())));
        assert!(text.contains("electrodes 8"));
    }
}
