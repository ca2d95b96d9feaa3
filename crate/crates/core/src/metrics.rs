//! Image-level scores for reconstructions of known phantoms.

use crate::forward::PhantomSpec;
use crate::geometry::{PixelGrid, Point};

/// Pixels whose center lies in some inclusion grown by `dilation`.
pub fn support_mask(grid: &PixelGrid, phantom: &PhantomSpec, dilation: f64) -> Vec<bool> {
    grid.pixel_centers()
        .iter()
        .map(|&c| {
            phantom
                .inclusions
                .iter()
                .any(|inc| inc.shape.dilated(dilation).contains(c))
        })
        .collect()
}

/// Share of `Σ|κ|` carried by the masked pixels (0 for an all-zero image).
pub fn mass_fraction(kappa: &[f64], mask: &[bool]) -> f64 {
    let total: f64 = kappa.iter().map(|k| k.abs()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let inside: f64 = kappa
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(k, _)| k.abs())
        .sum();
    inside / total
}

/// Pixels with `|κ| ≥ fraction · max|κ|`.
pub fn threshold_mask(kappa: &[f64], fraction: f64) -> Vec<bool> {
    let max = kappa.iter().fold(0.0_f64, |m, k| m.max(k.abs()));
    if max == 0.0 {
        return vec![false; kappa.len()];
    }
    kappa.iter().map(|k| k.abs() >= fraction * max).collect()
}

/// Connected component of a pixel mask, 8-neighbour connectivity.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub pixels: Vec<usize>,
    /// `|κ|`-weighted mean of the pixel centers.
    pub centroid: Point,
}

pub fn components(grid: &PixelGrid, mask: &[bool], kappa: &[f64]) -> Vec<Component> {
    let mut label = vec![usize::MAX; grid.len()];
    let mut out = Vec::new();
    let n = grid.n_side() as isize;
    for seed in 0..grid.len() {
        if !mask[seed] || label[seed] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut stack = vec![seed];
        let mut pixels = Vec::new();
        label[seed] = id;
        while let Some(p) = stack.pop() {
            pixels.push(p);
            let (row, col) = grid.cells()[p];
            for dr in -1..=1isize {
                for dc in -1..=1isize {
                    let (r, c) = (row as isize + dr, col as isize + dc);
                    if (dr, dc) == (0, 0) || r < 0 || c < 0 || r >= n || c >= n {
                        continue;
                    }
                    if let Some(q) = grid.pixel_at(r as usize, c as usize) {
                        if mask[q] && label[q] == usize::MAX {
                            label[q] = id;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        pixels.sort_unstable();
        let (mut w, mut x, mut y) = (0.0, 0.0, 0.0);
        for &p in &pixels {
            let a = kappa[p].abs();
            let c = grid.pixel_centers()[p];
            w += a;
            x += a * c[0];
            y += a * c[1];
        }
        let centroid = if w > 0.0 {
            [x / w, y / w]
        } else {
            let m = pixels.len() as f64;
            let c = pixels.iter().map(|&p| grid.pixel_centers()[p]).fold([0.0, 0.0], |s, c| [s[0] + c[0], s[1] + c[1]]);
            [c[0] / m, c[1] / m]
        };
        out.push(Component { pixels, centroid });
    }
    out
}

/// Smallest possible worst-case distance between centroids and targets over
/// all one-to-one matchings (`None` when the counts differ).
pub fn matched_distance(centroids: &[Point], targets: &[Point]) -> Option<f64> {
    if centroids.len() != targets.len() {
        return None;
    }
    fn search(c: &[Point], t: &[Point], used: &mut Vec<bool>, i: usize, worst: f64, best: &mut f64) {
        if worst >= *best {
            return;
        }
        if i == c.len() {
            *best = worst;
            return;
        }
        for j in 0..t.len() {
            if !used[j] {
                used[j] = true;
                let d = (c[i][0] - t[j][0]).hypot(c[i][1] - t[j][1]);
                search(c, t, used, i + 1, worst.max(d), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    search(centroids, targets, &mut vec![false; targets.len()], 0, 0.0, &mut best);
    Some(if centroids.is_empty() { 0.0 } else { best })
}

/// Scores of one reconstruction against its phantom.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    /// Share of `Σ|κ|` within the support dilated by one pixel width.
    pub mass_inside: f64,
    /// Components of the map thresholded at the given fraction of `max|κ|`.
    pub n_components: usize,
    pub n_inclusions: usize,
    /// Worst centroid error in pixel widths under the best matching.
    pub centroid_error: Option<f64>,
}

pub fn score_image(grid: &PixelGrid, phantom: &PhantomSpec, kappa: &[f64], threshold: f64) -> ImageScore {
    let w = grid.pixel_width();
    let support = support_mask(grid, phantom, w);
    let mask = threshold_mask(kappa, threshold);
    let comps = components(grid, &mask, kappa);
    let centroids: Vec<Point> = comps.iter().map(|c| c.centroid).collect();
    let targets: Vec<Point> = phantom.inclusions.iter().map(|i| i.shape.center()).collect();
    ImageScore {
        mass_inside: mass_fraction(kappa, &support),
        n_components: comps.len(),
        n_inclusions: targets.len(),
        centroid_error: matched_distance(&centroids, &targets).map(|d| d / w),
    }
}
