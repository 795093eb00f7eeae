use rayon::prelude::*;

use super::{cross, dot, sub, TriangleMesh, VoxelGrid};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FillMode {
    /// Voxels whose cell overlaps a triangle.
    Surface,
    /// Surface voxels plus the interior found by parity ray casting.
    #[default]
    Solid,
}

impl std::str::FromStr for FillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surface" => Ok(FillMode::Surface),
            "solid" => Ok(FillMode::Solid),
            _ => Err(Error::usage(format!("unknown fill mode '{s}' (expected solid or surface)"))),
        }
    }
}

/// Placement of a voxel lattice in model units: cell `(i, j, k)` spans
/// `origin + [i, i+1) * edge` along each axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridFrame {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub edge: f64,
}

// Relative slack on the edge length so that bounding-box faces never sit
// exactly on a cell boundary.
const EDGE_SLACK: f64 = 1e-6;

impl GridFrame {
    /// The frame `voxelize` uses: the longest bounding-box axis spans
    /// `resolution - 2` cells, the box is centered, and every axis keeps at
    /// least one empty cell on each side.
    pub fn for_mesh(mesh: &TriangleMesh, resolution: usize) -> Result<GridFrame> {
        if resolution < 3 {
            return Err(Error::domain(format!("resolution {resolution} leaves no room inside the margin")));
        }
        let (lo, hi) = mesh.bounds().ok_or_else(|| Error::domain("cannot voxelize an empty mesh"))?;
        let extent: [f64; 3] = std::array::from_fn(|a| hi[a] - lo[a]);
        let max_extent = extent.iter().copied().fold(0.0, f64::max);
        if max_extent <= 0.0 {
            return Err(Error::domain("mesh has zero extent"));
        }
        let edge = max_extent * (1.0 + EDGE_SLACK) / (resolution - 2) as f64;
        let dims: [usize; 3] =
            std::array::from_fn(|a| ((extent[a] / edge).ceil() as usize).clamp(1, resolution - 2) + 2);
        let origin = std::array::from_fn(|a| 0.5 * (lo[a] + hi[a]) - 0.5 * dims[a] as f64 * edge);
        Ok(GridFrame { dims, origin, edge })
    }

    fn cell_center(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.edge)
    }

    /// Inclusive cell index range along `axis` covering `[lo, hi]`.
    fn cell_range(&self, axis: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        let n = self.dims[axis] as f64;
        let a = ((lo - self.origin[axis]) / self.edge).floor();
        let b = ((hi - self.origin[axis]) / self.edge).floor();
        if b < 0.0 || a >= n {
            return None;
        }
        Some((a.max(0.0) as usize, b.min(n - 1.0) as usize))
    }
}

/// Binary occupancy grid whose longest axis has `resolution` voxels.
pub fn voxelize(mesh: &TriangleMesh, resolution: usize, mode: FillMode) -> Result<VoxelGrid> {
    if mesh.is_empty() {
        return Err(Error::domain("cannot voxelize an empty mesh"));
    }
    if resolution < 2 {
        return Err(Error::domain(format!("resolution must be >= 2, got {resolution}")));
    }
    let frame = GridFrame::for_mesh(mesh, resolution)?;
    voxelize_in_frame(mesh, &frame, mode)
}

pub fn voxelize_in_frame(mesh: &TriangleMesh, frame: &GridFrame, mode: FillMode) -> Result<VoxelGrid> {
    if mesh.is_empty() {
        return Err(Error::domain("cannot voxelize an empty mesh"));
    }
    let [nx, ny, nz] = frame.dims;
    let mut occ = vec![false; nx * ny * nz];
    mark_surface(mesh, frame, &mut occ);
    if mode == FillMode::Solid {
        let rows: Vec<Vec<usize>> = (0..ny * nz)
            .into_par_iter()
            .map(|row| interior_cells(mesh, frame, row / nz, row % nz))
            .collect();
        for (row, cells) in rows.into_iter().enumerate() {
            let (j, k) = (row / nz, row % nz);
            for i in cells {
                occ[(i * ny + j) * nz + k] = true;
            }
        }
    }
    let data = occ.into_iter().map(|o| if o { 1.0 } else { 0.0 }).collect();
    let values = Tensor::new(frame.dims.to_vec(), data)?;
    VoxelGrid::new(values, frame.edge, frame.origin)
}

fn mark_surface(mesh: &TriangleMesh, frame: &GridFrame, occ: &mut [bool]) {
    let [_, ny, nz] = frame.dims;
    let half = [0.5 * frame.edge; 3];
    for t in mesh.triangles() {
        let tri = mesh.corners(t);
        let lo: [f64; 3] = std::array::from_fn(|a| tri.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min));
        let hi: [f64; 3] = std::array::from_fn(|a| tri.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max));
        let (Some(rx), Some(ry), Some(rz)) =
            (frame.cell_range(0, lo[0], hi[0]), frame.cell_range(1, lo[1], hi[1]), frame.cell_range(2, lo[2], hi[2]))
        else {
            continue;
        };
        for i in rx.0..=rx.1 {
            for j in ry.0..=ry.1 {
                for k in rz.0..=rz.1 {
                    let flat = (i * ny + j) * nz + k;
                    if !occ[flat] && triangle_box_overlap(frame.cell_center([i, j, k]), half, tri) {
                        occ[flat] = true;
                    }
                }
            }
        }
    }
}

// Rays run along +x through the row's voxel centers, nudged off the lattice
// by different tiny amounts in y and z so they miss triangle edges and
// vertices that lie on grid lines or cell diagonals.
const RAY_NUDGE: [f64; 2] = [1e-7, 1.7e-7];

/// Cells of row `(j, k)` whose centers have an odd number of crossings on
/// their -x side. Rows with an odd total number of crossings (open
/// surfaces) contribute nothing.
fn interior_cells(mesh: &TriangleMesh, frame: &GridFrame, j: usize, k: usize) -> Vec<usize> {
    let c = frame.cell_center([0, j, k]);
    let (py, pz) = (c[1] + RAY_NUDGE[0] * frame.edge, c[2] + RAY_NUDGE[1] * frame.edge);
    let mut hits: Vec<f64> = mesh
        .triangles()
        .iter()
        .filter_map(|t| ray_x_crossing(mesh.corners(t), py, pz))
        .collect();
    if hits.is_empty() || hits.len() % 2 == 1 {
        return Vec::new();
    }
    hits.sort_by(f64::total_cmp);
    (0..frame.dims[0])
        .filter(|&i| {
            let x = frame.cell_center([i, j, k])[0];
            hits.iter().take_while(|&&h| h < x).count() % 2 == 1
        })
        .collect()
}

/// x coordinate where the line `{(t, py, pz)}` pierces the triangle, if it
/// does.
fn ray_x_crossing(tri: [[f64; 3]; 3], py: f64, pz: f64) -> Option<f64> {
    let [a, b, c] = tri;
    // Barycentric coordinates in the yz projection.
    let det = (b[1] - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (b[2] - a[2]);
    if det.abs() < 1e-300 {
        return None;
    }
    let u = ((py - a[1]) * (c[2] - a[2]) - (c[1] - a[1]) * (pz - a[2])) / det;
    let v = ((b[1] - a[1]) * (pz - a[2]) - (py - a[1]) * (b[2] - a[2])) / det;
    if u < 0.0 || v < 0.0 || u + v > 1.0 {
        return None;
    }
    Some(a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]))
}

/// Separating-axis test between a triangle and an axis-aligned box given by
/// center and half extents. Touching counts as overlap.
pub fn triangle_box_overlap(center: [f64; 3], half: [f64; 3], tri: [[f64; 3]; 3]) -> bool {
    let v = tri.map(|p| sub(p, center));
    let e = [sub(v[1], v[0]), sub(v[2], v[1]), sub(v[0], v[2])];

    // Nine edge-cross-axis tests.
    for edge in &e {
        for axis_i in 0..3 {
            let mut unit = [0.0; 3];
            unit[axis_i] = 1.0;
            let axis = cross(unit, *edge);
            if separated(axis, &v, half) {
                return false;
            }
        }
    }
    // Box face normals.
    for a in 0..3 {
        let lo = v.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
        let hi = v.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
        if lo > half[a] || hi < -half[a] {
            return false;
        }
    }
    // Triangle plane.
    let n = cross(e[0], e[1]);
    let d = dot(n, v[0]);
    let r = half[0] * n[0].abs() + half[1] * n[1].abs() + half[2] * n[2].abs();
    d.abs() <= r
}

fn separated(axis: [f64; 3], v: &[[f64; 3]; 3], half: [f64; 3]) -> bool {
    if dot(axis, axis) == 0.0 {
        return false;
    }
    let p = v.map(|q| dot(q, axis));
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let r = half[0] * axis[0].abs() + half[1] * axis[1].abs() + half[2] * axis[2].abs();
    lo > r || hi < -r
}
