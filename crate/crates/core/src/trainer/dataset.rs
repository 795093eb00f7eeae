use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{read_vxg, write_vxg, VoxelGrid};
use crate::tensor::Tensor;

/// The three synthetic part families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Box,
    Sphere,
    /// Thin plate with cylindrical through-holes, a sheet-metal stand-in.
    Plate,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 3] = [ShapeClass::Box, ShapeClass::Sphere, ShapeClass::Plate];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Box => "box",
            ShapeClass::Sphere => "sphere",
            ShapeClass::Plate => "plate",
        }
    }

    pub fn label(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDataset {
    pub samples: Vec<(VoxelGrid, usize)>,
    pub class_names: Vec<String>,
    /// Generation seed; `None` for datasets read back from disk.
    pub seed: Option<u64>,
}

impl ShapeDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn grid_dims(&self) -> Option<[usize; 3]> {
        self.samples.first().map(|(g, _)| g.dims())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for (_, l) in &self.samples {
            counts[*l] += 1;
        }
        counts
    }

    /// Held-out split used by classifier training: every fifth sample.
    pub fn is_held_out(index: usize) -> bool {
        index % 5 == 4
    }
}

/// `n` samples cycling through box, sphere and plate, each with a random
/// size, position and orientation. Sample `i` draws from its own stream of
/// the master seed, so generation order does not matter.
pub fn generate_shape_dataset(n: usize, resolution: usize, seed: u64) -> Result<ShapeDataset> {
    if resolution < 8 {
        return Err(Error::domain(format!("resolution must be >= 8, got {resolution}")));
    }
    if n < ShapeClass::ALL.len() {
        return Err(Error::domain(format!("need at least {} samples, got {n}", ShapeClass::ALL.len())));
    }
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let class = ShapeClass::ALL[i % ShapeClass::ALL.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            (generate_shape(class, resolution, &mut rng), class.label())
        })
        .collect();
    Ok(ShapeDataset {
        samples,
        class_names: ShapeClass::ALL.iter().map(|c| c.name().to_string()).collect(),
        seed: Some(seed),
    })
}

/// One random part of the given class on a unit-edge `resolution^3` grid.
pub fn generate_shape(class: ShapeClass, resolution: usize, rng: &mut impl Rng) -> VoxelGrid {
    let n = resolution as f64;
    let rot = random_rotation(rng);
    let center: [f64; 3] = std::array::from_fn(|_| 0.5 * n + rng.random_range(-0.06..0.06) * n);
    let inside: Box<dyn Fn([f64; 3]) -> bool> = match class {
        ShapeClass::Box => {
            let h: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.2..0.3) * n);
            Box::new(move |p| (0..3).all(|a| p[a].abs() <= h[a]))
        }
        ShapeClass::Sphere => {
            let r = rng.random_range(0.2..0.38) * n;
            Box::new(move |p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= r * r)
        }
        ShapeClass::Plate => {
            let (a, b) = (rng.random_range(0.28..0.4) * n, rng.random_range(0.28..0.4) * n);
            let t = rng.random_range(0.06..0.1) * n;
            let holes: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=3))
                .map(|_| {
                    let r = rng.random_range(0.06..0.1) * n;
                    let hx = rng.random_range(-(a - r) * 0.7..(a - r) * 0.7);
                    let hy = rng.random_range(-(b - r) * 0.7..(b - r) * 0.7);
                    (hx, hy, r)
                })
                .collect();
            Box::new(move |p| {
                p[0].abs() <= a
                    && p[1].abs() <= b
                    && p[2].abs() <= t
                    && holes.iter().all(|&(hx, hy, r)| (p[0] - hx).powi(2) + (p[1] - hy).powi(2) > r * r)
            })
        }
    };
    let values = Tensor::from_fn(&[resolution; 3], |i| {
        let d: [f64; 3] = std::array::from_fn(|a| i[a] as f64 + 0.5 - center[a]);
        // Local coordinates: R^T d.
        let local = std::array::from_fn(|r| rot[0][r] * d[0] + rot[1][r] * d[1] + rot[2][r] * d[2]);
        if inside(local) { 1.0 } else { 0.0 }
    });
    VoxelGrid::from_values(values).expect("occupancy values are 0 or 1")
}

/// Uniform random rotation matrix from a random unit quaternion.
fn random_rotation(rng: &mut impl Rng) -> [[f64; 3]; 3] {
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let (w, x, y, z) = (a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin(), b * (tau * u3).cos());
    [
        [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
        [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
        [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
    ]
}

const LABELS_FILE: &str = "labels.csv";

/// Writes one VXG file per sample plus `labels.csv` (`file,label,class`).
pub fn write_dataset(ds: &ShapeDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut csv = String::from("file,label,class\n");
    for (i, (grid, label)) in ds.samples.iter().enumerate() {
        let file = format!("sample_{i:05}.vxg");
        write_vxg(grid, dir.join(&file))?;
        writeln!(csv, "{file},{label},{}", ds.class_names[*label]).unwrap();
    }
    std::fs::write(dir.join(LABELS_FILE), csv)?;
    Ok(())
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<ShapeDataset> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join(LABELS_FILE))?;
    let mut lines = text.lines();
    if lines.next() != Some("file,label,class") {
        return Err(Error::format(format!("{LABELS_FILE}: unexpected header")));
    }
    let mut samples = Vec::new();
    let mut class_names: Vec<String> = Vec::new();
    for (no, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let [file, label, class] = fields[..] else {
            return Err(Error::format(format!("{LABELS_FILE} line {}: expected 3 fields", no + 2)));
        };
        let label: usize = label
            .parse()
            .map_err(|_| Error::format(format!("{LABELS_FILE} line {}: bad label '{label}'", no + 2)))?;
        if class_names.len() <= label {
            class_names.resize(label + 1, String::new());
        }
        if class_names[label].is_empty() {
            class_names[label] = class.to_string();
        } else if class_names[label] != class {
            return Err(Error::format(format!("{LABELS_FILE} line {}: label {label} renamed", no + 2)));
        }
        samples.push((read_vxg(dir.join(file))?, label));
    }
    if let Some(i) = class_names.iter().position(String::is_empty) {
        return Err(Error::format(format!("{LABELS_FILE}: no sample carries label {i}")));
    }
    let ds = ShapeDataset { samples, class_names, seed: None };
    if let Some(dims) = ds.grid_dims() {
        if ds.samples.iter().any(|(g, _)| g.dims() != dims) {
            return Err(Error::format("dataset grids differ in dims"));
        }
    }
    Ok(ds)
}
