//! CAD ingestion: triangle meshes, STL parsing, voxelization and the VXG
//! grid file.

mod stl;
mod voxelize;

use std::path::Path;

pub use stl::{parse_stl, read_stl, to_ascii_stl, to_binary_stl};
pub use voxelize::{triangle_box_overlap, voxelize, voxelize_in_frame, FillMode, GridFrame};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::domain("non-finite vertex coordinate"));
        }
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::domain(format!("triangle {t:?} references a missing vertex")));
        }
        Ok(TriangleMesh { vertices, triangles })
    }

    pub fn vertices(&self) -> &[[f64; 3]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn corners(&self, t: &[usize; 3]) -> [[f64; 3]; 3] {
        t.map(|i| self.vertices[i])
    }

    /// Unit normal by the right-hand rule (zero for degenerate triangles).
    pub fn triangle_normal(&self, t: &[usize; 3]) -> [f64; 3] {
        let [a, b, c] = self.corners(t);
        let n = cross(sub(b, a), sub(c, a));
        let len = dot(n, n).sqrt();
        if len == 0.0 { [0.0; 3] } else { n.map(|v| v / len) }
    }

    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let mut used = self.triangles.iter().flatten().map(|&i| self.vertices[i]);
        let first = used.next()?;
        Some(used.fold((first, first), |(lo, hi), v| {
            (std::array::from_fn(|a| lo[a].min(v[a])), std::array::from_fn(|a| hi[a].max(v[a])))
        }))
    }

    pub fn translated(&self, by: [f64; 3]) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| std::array::from_fn(|a| v[a] + by[a])).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Closed, outward-oriented box made of 12 triangles.
    pub fn axis_aligned_box(min: [f64; 3], max: [f64; 3]) -> TriangleMesh {
        let vertices: Vec<[f64; 3]> = (0..8)
            .map(|i| {
                [
                    if i & 1 == 0 { min[0] } else { max[0] },
                    if i & 2 == 0 { min[1] } else { max[1] },
                    if i & 4 == 0 { min[2] } else { max[2] },
                ]
            })
            .collect();
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // z = min
            [4, 5, 6], [5, 7, 6], // z = max
            [0, 1, 4], [1, 5, 4], // y = min
            [2, 6, 3], [3, 6, 7], // y = max
            [0, 4, 2], [2, 4, 6], // x = min
            [1, 3, 5], [3, 7, 5], // x = max
        ];
        TriangleMesh { vertices, triangles }
    }
}

pub(crate) fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Dense occupancy field with its placement in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    values: Tensor,
    edge: f64,
    origin: [f64; 3],
}

impl VoxelGrid {
    pub fn new(values: Tensor, edge: f64, origin: [f64; 3]) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::shape(format!("voxel grid needs 3 axes, got {:?}", values.dims())));
        }
        if values.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("voxel values must lie in [0, 1]"));
        }
        if !(edge.is_finite() && edge > 0.0) || origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::domain("voxel edge must be positive and origin finite"));
        }
        Ok(VoxelGrid { values, edge, origin })
    }

    /// Unit-edge grid at the origin.
    pub fn from_values(values: Tensor) -> Result<Self> {
        Self::new(values, 1.0, [0.0; 3])
    }

    pub fn dims(&self) -> [usize; 3] {
        let d = self.values.dims();
        [d[0], d[1], d[2]]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn occupied(&self) -> usize {
        self.values.data().iter().filter(|&&v| v > 0.0).count()
    }

    /// The grid as a single-channel network input `[1, nx, ny, nz]`.
    pub fn to_input(&self) -> Tensor {
        let [x, y, z] = self.dims();
        self.values.reshape(&[1, x, y, z]).expect("same element count")
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] + (idx[a] as f64 + 0.5) * self.edge)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelPoint {
    pub index: [usize; 3],
    pub position: [f64; 3],
    pub value: f64,
}

/// One point per voxel with value `>= threshold`, at the voxel center, in
/// flat (row-major) order.
pub fn grid_to_points(grid: &VoxelGrid, threshold: f64) -> Vec<VoxelPoint> {
    let dims = grid.dims();
    grid.values
        .data()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(flat, &value)| {
            let i = crate::tensor::unravel(&dims, flat);
            let index = [i[0], i[1], i[2]];
            VoxelPoint { index, position: grid.voxel_center(index), value }
        })
        .collect()
}

const VXG_MAGIC: &[u8; 4] = b"VXG1";

/// `"VXG1"`, three u32 dims, f32 edge, three f32 origin, then f32 values
/// row-major, all little-endian.
pub fn save_vxg(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + grid.values.len() * 4);
    out.extend_from_slice(VXG_MAGIC);
    for d in grid.dims() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(grid.edge as f32).to_le_bytes());
    for o in grid.origin {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
    for &v in grid.values.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn load_vxg(bytes: &[u8]) -> Result<VoxelGrid> {
    if bytes.len() < 32 || &bytes[..4] != VXG_MAGIC {
        return Err(Error::format("missing VXG1 header"));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let f = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as f64;
    let dims = [u(4), u(8), u(12)];
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n > 0);
    let n = n.ok_or_else(|| Error::format(format!("invalid dims {dims:?}")))?;
    if bytes.len() - 32 != n * 4 {
        return Err(Error::format(format!("VXG body has {} bytes, dims need {}", bytes.len() - 32, n * 4)));
    }
    let data = (0..n).map(|i| f(32 + 4 * i)).collect();
    let values = Tensor::new(dims.to_vec(), data).map_err(|e| Error::format(e.to_string()))?;
    VoxelGrid::new(values, f(16), [f(20), f(24), f(28)]).map_err(|e| Error::format(e.to_string()))
}

pub fn read_vxg(path: impl AsRef<Path>) -> Result<VoxelGrid> {
    load_vxg(&std::fs::read(path)?)
}

pub fn write_vxg(grid: &VoxelGrid, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_vxg(grid))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_of_empty_and_full_grids() {
        let empty = VoxelGrid::from_values(Tensor::zeros(&[3, 2, 2])).unwrap();
        assert!(grid_to_points(&empty, 0.5).is_empty());
        let full = VoxelGrid::new(Tensor::filled(&[2, 2, 2], 1.0), 0.5, [1.0, -1.0, 2.0]).unwrap();
        let pts = grid_to_points(&full, 0.5);
        assert_eq!(pts.len(), 8);
        for p in &pts {
            for a in 0..3 {
                let expect = full.origin()[a] + (p.index[a] as f64 + 0.5) * 0.5;
                assert_eq!(p.position[a], expect);
            }
        }
    }

    #[test]
    fn vxg_round_trip() {
        let values = Tensor::from_fn(&[3, 4, 2], |i| ((i[0] + i[1] + i[2]) % 2) as f64);
        let g = VoxelGrid::new(values, 0.1, [0.25, -3.0, 1.0 / 3.0]).unwrap();
        let back = load_vxg(&save_vxg(&g)).unwrap();
        assert_eq!(back.values(), g.values());
        assert_eq!(back.edge(), 0.1f32 as f64);
        assert_eq!(back.origin(), [0.25, -3.0, (1.0f64 / 3.0) as f32 as f64]);
        assert_eq!(save_vxg(&back), save_vxg(&g));
    }

    #[test]
    fn vxg_errors() {
        let g = VoxelGrid::from_values(Tensor::zeros(&[2, 2, 2])).unwrap();
        let mut bytes = save_vxg(&g);
        assert!(matches!(load_vxg(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        bytes[0] = b'X';
        assert!(matches!(load_vxg(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn grid_rejects_out_of_range_values() {
        assert!(VoxelGrid::from_values(Tensor::filled(&[1, 1, 1], 1.5)).is_err());
    }
}
