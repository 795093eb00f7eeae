//! Viewable output: jet colors, legacy VTK structured points, colored
//! binary PLY point clouds, and the four-method comparison run.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::explain::{explain, grid_input, select_target, Heatmap, Method, MethodConfig, TargetSelection};
use crate::geometry::{grid_to_points, VoxelGrid};
use crate::network::Network;
use crate::tensor::Tensor;

/// Occupancy threshold for point-cloud export.
pub const DEFAULT_PLY_THRESHOLD: f64 = 0.5;

/// Piecewise-linear jet: blue at 0, green at 0.5, red at 1. Inputs are
/// clamped to `[0, 1]` (NaN maps to 0) and channels truncate to bytes.
pub fn jet_color(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let channel = |center: f64| ((1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0) as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

/// Maps values into `[0, 1]` for display. Signed fields keep zero at 0.5
/// (`0.5 + v / (2 max|v|)`); unsigned fields are min-max scaled. Degenerate
/// fields map to 0.5 (signed, all zero) or 0 (unsigned, constant).
pub fn display_normalize(values: &[f64], signed: bool) -> Vec<f64> {
    if signed {
        let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if m == 0.0 {
            return vec![0.5; values.len()];
        }
        values.iter().map(|v| 0.5 + v / (2.0 * m)).collect()
    } else {
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
            return vec![0.0; values.len()];
        }
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    }
}

/// Nine significant digits, shortest of fixed or exponent notation.
fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-5..9).contains(&exp) {
        trim(&format!("{v:.*}", (8 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mant))
    }
}

/// Legacy VTK structured points with the raw heatmap values, x fastest.
pub fn vtk_text(heatmap: &Heatmap) -> String {
    let [nx, ny, nz] = heatmap.dims();
    let n = nx * ny * nz;
    let mut s = String::with_capacity(64 * 4 + n * 16);
    s.push_str("# vtk DataFile Version 3.0\n");
    writeln!(s, "voxel-xai {} relevance target {}", heatmap.method(), heatmap.target()).unwrap();
    s.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    writeln!(s, "DIMENSIONS {nx} {ny} {nz}").unwrap();
    s.push_str("ORIGIN 0 0 0\nSPACING 1 1 1\n");
    writeln!(s, "POINT_DATA {n}").unwrap();
    s.push_str("SCALARS relevance float 1\nLOOKUP_TABLE default\n");
    let v = heatmap.values();
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                s.push_str(&fmt_sig9(v.get(&[i, j, k])));
                s.push('\n');
            }
        }
    }
    s
}

pub fn export_vtk(heatmap: &Heatmap, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, vtk_text(heatmap))?;
    Ok(())
}

/// Reads back a file written by [`export_vtk`]: the values as an
/// `[nx, ny, nz]` tensor.
pub fn parse_vtk(text: &str) -> Result<Tensor> {
    let mut lines = text.lines();
    let mut expect = |want: &str| -> Result<()> {
        match lines.next() {
            Some(l) if l == want => Ok(()),
            other => Err(Error::format(format!("VTK: expected '{want}', found {other:?}"))),
        }
    };
    expect("# vtk DataFile Version 3.0")?;
    lines.next().ok_or_else(|| Error::format("VTK: missing title"))?;
    let mut lines = lines.peekable();
    let mut want = |line: &str| -> Result<String> {
        let got = lines.next().ok_or_else(|| Error::format(format!("VTK: missing '{line}'")))?;
        if !got.starts_with(line) {
            return Err(Error::format(format!("VTK: expected '{line}', found '{got}'")));
        }
        Ok(got[line.len()..].trim().to_string())
    };
    want("ASCII")?;
    want("DATASET STRUCTURED_POINTS")?;
    let dims: Vec<usize> = want("DIMENSIONS")?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format(format!("VTK: bad dimension '{t}'"))))
        .collect::<Result<_>>()?;
    let [nx, ny, nz] = dims[..] else {
        return Err(Error::format("VTK: DIMENSIONS needs three values"));
    };
    if want("ORIGIN")? != "0 0 0" || want("SPACING")? != "1 1 1" {
        return Err(Error::format("VTK: unexpected ORIGIN or SPACING"));
    }
    let n: usize = want("POINT_DATA")?.parse().map_err(|_| Error::format("VTK: bad POINT_DATA"))?;
    want("SCALARS relevance float 1")?;
    want("LOOKUP_TABLE default")?;
    let values: Vec<f64> = lines
        .flat_map(str::split_whitespace)
        .map(|t| t.parse::<f64>().map_err(|_| Error::format(format!("VTK: bad value '{t}'"))))
        .collect::<Result<_>>()?;
    if n != nx * ny * nz || values.len() != n {
        return Err(Error::format(format!("VTK: {} values for POINT_DATA {n} and dims {nx}x{ny}x{nz}", values.len())));
    }
    let data = (0..n)
        .map(|f| {
            let (i, j, k) = (f / (ny * nz), (f / nz) % ny, f % nz);
            values[(k * ny + j) * nx + i]
        })
        .collect();
    Tensor::new(vec![nx, ny, nz], data).map_err(|e| Error::format(format!("VTK: {e}")))
}

const PLY_PROPERTIES: &str = "property float x\nproperty float y\nproperty float z\n\
property uchar red\nproperty uchar green\nproperty uchar blue\n";

/// Binary little-endian PLY with one colored vertex per voxel whose
/// occupancy is at least `threshold`. Colors come from the heatmap,
/// normalized over the emitted voxels only.
pub fn ply_bytes(grid: &VoxelGrid, heatmap: &Heatmap, threshold: f64) -> Result<Vec<u8>> {
    if grid.dims() != heatmap.dims() {
        return Err(Error::shape(format!("grid dims {:?} differ from heatmap dims {:?}", grid.dims(), heatmap.dims())));
    }
    let points = grid_to_points(grid, threshold);
    let raw: Vec<f64> = points.iter().map(|p| heatmap.values().get(&p.index)).collect();
    let shade = display_normalize(&raw, heatmap.is_signed());
    let mut out = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n{PLY_PROPERTIES}end_header\n", points.len())
        .into_bytes();
    for (p, v) in points.iter().zip(shade) {
        for c in p.position {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        out.extend_from_slice(&jet_color(v));
    }
    Ok(out)
}

pub fn export_ply_colored(grid: &VoxelGrid, heatmap: &Heatmap, threshold: f64, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, ply_bytes(grid, heatmap, threshold)?)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlyVertex {
    pub position: [f32; 3],
    pub color: [u8; 3],
}

/// Reads back a file written by [`export_ply_colored`].
pub fn parse_ply(bytes: &[u8]) -> Result<Vec<PlyVertex>> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::format("PLY: no end_header"))?
        + END.len();
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format("PLY: header is not text"))?;
    let count: usize = header
        .strip_prefix("ply\nformat binary_little_endian 1.0\nelement vertex ")
        .and_then(|rest| rest.split_once('\n'))
        .filter(|(_, tail)| *tail == format!("{PLY_PROPERTIES}end_header\n"))
        .and_then(|(n, _)| n.parse().ok())
        .ok_or_else(|| Error::format("PLY: unexpected header layout"))?;
    let body = &bytes[end..];
    if body.len() != count * 15 {
        return Err(Error::format(format!("PLY: {} body bytes for {count} vertices", body.len())));
    }
    Ok(body
        .chunks_exact(15)
        .map(|r| PlyVertex {
            position: std::array::from_fn(|a| f32::from_le_bytes(r[4 * a..4 * a + 4].try_into().unwrap())),
            color: [r[12], r[13], r[14]],
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonEntry {
    pub method: Method,
    pub target: usize,
    pub min: f64,
    pub max: f64,
    pub seconds: f64,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Runs all four methods with default settings on the argmax target and
/// writes `<method>.vtk`, `<method>.ply` and a manifest into `out_dir`.
/// Data files depend only on the inputs; timings go to the manifest.
pub fn compare_all(net: &Network, grid: &VoxelGrid, out_dir: impl AsRef<Path>) -> Result<Vec<ComparisonEntry>> {
    let out_dir = out_dir.as_ref();
    let x = grid_input(net, grid)?;
    let target = select_target(&net.forward(&x)?, TargetSelection::Argmax)?;
    std::fs::create_dir_all(out_dir)?;
    let mut entries = Vec::with_capacity(4);
    for method in Method::ALL {
        let start = Instant::now();
        let h = explain(net, grid, method, TargetSelection::Index(target), &MethodConfig::default_for(method))?;
        let seconds = start.elapsed().as_secs_f64();
        export_vtk(&h, out_dir.join(format!("{method}.vtk")))?;
        export_ply_colored(grid, &h, DEFAULT_PLY_THRESHOLD, out_dir.join(format!("{method}.ply")))?;
        entries.push(ComparisonEntry { method, target, min: h.values().min(), max: h.values().max(), seconds });
    }
    let mut manifest = String::from("method\ttarget\tmin\tmax\tseconds\tvtk\tply\n");
    for e in &entries {
        let m = e.method;
        writeln!(manifest, "{m}\t{}\t{}\t{}\t{:.6}\t{m}.vtk\t{m}.ply", e.target, e.min, e.max, e.seconds).unwrap();
    }
    std::fs::write(out_dir.join(MANIFEST_FILE), manifest)?;
    Ok(entries)
}
