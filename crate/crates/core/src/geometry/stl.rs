use std::collections::HashMap;
use std::path::Path;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// Parses ASCII or binary STL. Facet normals are ignored and coincident
/// vertices are merged.
pub fn parse_stl(bytes: &[u8]) -> Result<TriangleMesh> {
    if looks_binary(bytes) || !starts_with_solid(bytes) {
        parse_binary(bytes)
    } else {
        parse_ascii(bytes)
    }
}

pub fn read_stl(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    parse_stl(&std::fs::read(path)?)
}

fn starts_with_solid(bytes: &[u8]) -> bool {
    let trimmed = bytes.iter().position(|b| !b.is_ascii_whitespace()).map_or(&[][..], |p| &bytes[p..]);
    trimmed.starts_with(b"solid")
}

// Binary files may also begin with "solid"; an exact size match settles it.
fn looks_binary(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    count.checked_mul(50).and_then(|n| n.checked_add(84)) == Some(bytes.len())
}

#[derive(Default)]
struct MeshBuilder {
    vertices: Vec<[f64; 3]>,
    triangles: Vec<[usize; 3]>,
    lookup: HashMap<[u64; 3], usize>,
}

impl MeshBuilder {
    fn vertex(&mut self, v: [f64; 3]) -> usize {
        // +0.0 and -0.0 are the same point.
        let key = v.map(|c| if c == 0.0 { 0u64 } else { c.to_bits() });
        *self.lookup.entry(key).or_insert_with(|| {
            self.vertices.push(v);
            self.vertices.len() - 1
        })
    }

    fn triangle(&mut self, t: [[f64; 3]; 3]) {
        let idx = t.map(|v| self.vertex(v));
        self.triangles.push(idx);
    }

    fn finish(self) -> Result<TriangleMesh> {
        TriangleMesh::new(self.vertices, self.triangles).map_err(|e| Error::format(e.to_string()))
    }
}

fn parse_binary(bytes: &[u8]) -> Result<TriangleMesh> {
    if bytes.len() < 84 {
        return Err(Error::format(format!("binary STL truncated: {} bytes, header needs 84", bytes.len())));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    let body = &bytes[84..];
    if body.len() / 50 < count {
        return Err(Error::format(format!(
            "binary STL declares {count} triangles but holds {} complete records",
            body.len() / 50
        )));
    }
    let mut b = MeshBuilder::default();
    for rec in body.chunks_exact(50).take(count) {
        let f = |i: usize| f32::from_le_bytes(rec[i * 4..i * 4 + 4].try_into().unwrap()) as f64;
        // Floats 0..3 are the normal; 3..12 the three vertices.
        let v = |k: usize| [f(3 + 3 * k), f(4 + 3 * k), f(5 + 3 * k)];
        b.triangle([v(0), v(1), v(2)]);
    }
    b.finish()
}

struct Tokens<'a> {
    lines: Vec<(usize, Vec<&'a str>)>,
    line: usize,
    col: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self) -> Option<(usize, &'a str)> {
        while self.line < self.lines.len() {
            let (no, toks) = &self.lines[self.line];
            if self.col < toks.len() {
                self.col += 1;
                return Some((*no, toks[self.col - 1]));
            }
            self.line += 1;
            self.col = 0;
        }
        None
    }

    fn last_line(&self) -> usize {
        self.lines.last().map_or(1, |l| l.0)
    }

    fn expect(&mut self, word: &str) -> Result<usize> {
        match self.next() {
            Some((no, t)) if t == word => Ok(no),
            Some((no, t)) => Err(Error::format(format!("line {no}: expected '{word}', found '{t}'"))),
            None => Err(Error::format(format!("line {}: expected '{word}', found end of file", self.last_line()))),
        }
    }

    fn number(&mut self) -> Result<f64> {
        match self.next() {
            Some((no, t)) => match t.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::format(format!("line {no}: expected a number, found '{t}'"))),
            },
            None => Err(Error::format(format!("line {}: expected a number, found end of file", self.last_line()))),
        }
    }
}

fn parse_ascii(bytes: &[u8]) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::format(format!("ASCII STL is not UTF-8: {e}")))?;
    let mut lines: Vec<(usize, Vec<&str>)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split_whitespace().collect::<Vec<_>>()))
        .filter(|(_, t)| !t.is_empty())
        .collect();
    // The solid name is free text; keep only the keyword.
    if let Some(first) = lines.first_mut() {
        first.1.truncate(1);
    }
    let mut tok = Tokens { lines, line: 0, col: 0 };
    tok.expect("solid")?;
    let mut b = MeshBuilder::default();
    loop {
        match tok.next() {
            Some((_, "facet")) => {
                tok.expect("normal")?;
                for _ in 0..3 {
                    tok.number()?;
                }
                tok.expect("outer")?;
                tok.expect("loop")?;
                let mut tri = [[0.0; 3]; 3];
                for v in &mut tri {
                    tok.expect("vertex")?;
                    for c in v.iter_mut() {
                        *c = tok.number()?;
                    }
                }
                tok.expect("endloop")?;
                tok.expect("endfacet")?;
                b.triangle(tri);
            }
            Some((_, "endsolid")) => break,
            Some((no, t)) => {
                return Err(Error::format(format!("line {no}: expected 'facet' or 'endsolid', found '{t}'")))
            }
            None => {
                return Err(Error::format(format!("line {}: missing 'endsolid'", tok.last_line())));
            }
        }
    }
    b.finish()
}

pub fn to_ascii_stl(mesh: &TriangleMesh, name: &str) -> String {
    let mut s = format!("solid {name}\n");
    for t in mesh.triangles() {
        let n = mesh.triangle_normal(t);
        s += &format!("  facet normal {} {} {}\n    outer loop\n", n[0], n[1], n[2]);
        for &vi in t {
            let v = mesh.vertices()[vi];
            s += &format!("      vertex {} {} {}\n", v[0], v[1], v[2]);
        }
        s += "    endloop\n  endfacet\n";
    }
    s += &format!("endsolid {name}\n");
    s
}

pub fn to_binary_stl(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out[..17].copy_from_slice(b"voxel-xai binary ");
    out.extend_from_slice(&(mesh.triangles().len() as u32).to_le_bytes());
    for t in mesh.triangles() {
        let n = mesh.triangle_normal(t);
        for c in n {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
        for &vi in t {
            for c in mesh.vertices()[vi] {
                out.extend_from_slice(&(c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_FACET: &str = "solid tri\n facet normal 0 0 1\n  outer loop\n   vertex 0 0 0\n   vertex 1 0 0\n   vertex 0 1 0\n  endloop\n endfacet\nendsolid tri\n";

    #[test]
    fn ascii_single_facet() {
        let m = parse_stl(ONE_FACET.as_bytes()).unwrap();
        assert_eq!(m.triangles().len(), 1);
        assert_eq!(m.vertices().len(), 3);
    }

    fn binary_with(count: u32, records: usize) -> Vec<u8> {
        let mut b = vec![0u8; 80];
        b.extend_from_slice(&count.to_le_bytes());
        for r in 0..records {
            let mut rec = vec![0u8; 50];
            let verts = [[0.0f32, 0.0, r as f32], [1.0, 0.0, r as f32], [0.0, 1.0, r as f32]];
            for (k, v) in verts.iter().enumerate() {
                for (c, x) in v.iter().enumerate() {
                    let o = 12 + k * 12 + c * 4;
                    rec[o..o + 4].copy_from_slice(&x.to_le_bytes());
                }
            }
            b.extend(rec);
        }
        b
    }

    #[test]
    fn binary_counts() {
        let m = parse_stl(&binary_with(2, 2)).unwrap();
        assert_eq!(m.triangles().len(), 2);
        assert!(matches!(parse_stl(&binary_with(3, 2)), Err(Error::Format(_))));
    }

    #[test]
    fn binary_header_starting_with_solid() {
        let mut b = binary_with(1, 1);
        b[..5].copy_from_slice(b"solid");
        assert_eq!(parse_stl(&b).unwrap().triangles().len(), 1);
    }

    #[test]
    fn ascii_errors_carry_line_numbers() {
        let bad = ONE_FACET.replace("   vertex 1 0 0", "   vertx 1 0 0");
        match parse_stl(bad.as_bytes()) {
            Err(Error::Format(msg)) => assert!(msg.contains("line 5"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let no_end = ONE_FACET.replace("endsolid tri\n", "");
        assert!(matches!(parse_stl(no_end.as_bytes()), Err(Error::Format(_))));
        let nan = ONE_FACET.replace("vertex 0 1 0", "vertex 0 one 0");
        match parse_stl(nan.as_bytes()) {
            Err(Error::Format(msg)) => assert!(msg.contains("line 6"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn writers_round_trip_box() {
        let m = TriangleMesh::axis_aligned_box([0.0; 3], [1.0, 2.0, 0.5]);
        let a = parse_stl(to_ascii_stl(&m, "box").as_bytes()).unwrap();
        let b = parse_stl(&to_binary_stl(&m)).unwrap();
        // Vertices are renumbered in encounter order; compare corner lists.
        let corners = |x: &TriangleMesh| x.triangles().iter().map(|t| x.corners(t)).collect::<Vec<_>>();
        assert_eq!(corners(&a), corners(&m));
        assert_eq!(corners(&b), corners(&m));
        assert_eq!(a.vertices().len(), 8);
    }
}
