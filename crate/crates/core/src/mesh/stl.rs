use std::io::Write;
use std::path::Path;

use super::{Mesh, RawMesh, SourceFormat};
use crate::{Error, Result, Vec3};

const HEADER_LEN: usize = 80;
const RECORD_LEN: usize = 50;

/// Reads an ASCII or binary STL file. One raw triangle (three fresh
/// vertices) is produced per facet; coordinates are taken as meters.
pub fn load_stl(path: impl AsRef<Path>) -> Result<RawMesh> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_stl(&bytes).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

/// Parses STL content from memory.
///
/// A file whose size matches `84 + 50 * count` is read as binary even when
/// the header happens to start with `solid`, which many exporters emit.
pub fn parse_stl(bytes: &[u8]) -> Result<RawMesh> {
    if bytes.is_empty() {
        return Err(Error::parse("stl", "empty file"));
    }
    if bytes.len() >= HEADER_LEN + 4 {
        let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
        if HEADER_LEN + 4 + count * RECORD_LEN == bytes.len() {
            return parse_binary(bytes, count);
        }
    }
    let looks_ascii = bytes
        .iter()
        .skip_while(|b| b.is_ascii_whitespace())
        .take(5)
        .eq(b"solid".iter());
    if looks_ascii {
        if let Ok(text) = std::str::from_utf8(bytes) {
            return parse_ascii(text);
        }
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::parse("stl", "file too short for a binary header"));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    Err(Error::parse(
        "stl",
        format!(
            "binary facet count {count} implies {} bytes, file has {}",
            HEADER_LEN + 4 + count * RECORD_LEN,
            bytes.len()
        ),
    ))
}

fn parse_binary(bytes: &[u8], count: usize) -> Result<RawMesh> {
    let mut vertices = Vec::with_capacity(3 * count);
    let mut faces = Vec::with_capacity(count);
    for rec in bytes[HEADER_LEN + 4..].chunks_exact(RECORD_LEN) {
        let f = |k: usize| {
            let o = 12 + 4 * k;
            f32::from_le_bytes(rec[o..o + 4].try_into().unwrap()) as f64
        };
        let base = vertices.len();
        for v in 0..3 {
            vertices.push(Vec3::new(f(3 * v), f(3 * v + 1), f(3 * v + 2)));
        }
        faces.push([base, base + 1, base + 2]);
    }
    let raw = RawMesh {
        vertices,
        faces,
        source_format: SourceFormat::StlBinary,
    };
    raw.validate()?;
    Ok(raw)
}

fn parse_ascii(text: &str) -> Result<RawMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut pending: Vec<Vec3> = Vec::with_capacity(3);
    let mut in_facet = false;
    for (lineno, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        let err = |m: &str| Error::parse("stl", format!("line {}: {m}", lineno + 1));
        match tok.next() {
            Some("facet") => {
                if in_facet {
                    return Err(err("nested facet"));
                }
                in_facet = true;
                pending.clear();
            }
            Some("vertex") => {
                if !in_facet {
                    return Err(err("vertex outside facet"));
                }
                let mut c = [0.0f64; 3];
                for slot in &mut c {
                    let s = tok.next().ok_or_else(|| err("vertex needs 3 coordinates"))?;
                    // STL stores float32; parse at that precision so ASCII and
                    // binary encodings of the same model agree exactly.
                    *slot = s
                        .parse::<f32>()
                        .map_err(|_| err(&format!("bad coordinate {s:?}")))?
                        as f64;
                }
                pending.push(Vec3::new(c[0], c[1], c[2]));
            }
            Some("endfacet") => {
                if pending.len() != 3 {
                    return Err(err(&format!("facet has {} vertices", pending.len())));
                }
                let base = vertices.len();
                vertices.append(&mut pending);
                faces.push([base, base + 1, base + 2]);
                in_facet = false;
            }
            _ => {}
        }
    }
    if in_facet {
        return Err(Error::parse("stl", "unterminated facet"));
    }
    if faces.is_empty() {
        return Err(Error::parse("stl", "no facets found"));
    }
    let raw = RawMesh {
        vertices,
        faces,
        source_format: SourceFormat::StlAscii,
    };
    raw.validate()?;
    Ok(raw)
}

fn facet_normal(p: &[Vec3; 3]) -> Vec3 {
    let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
    let len = n.norm();
    if len > 0.0 {
        n / len
    } else {
        Vec3::zeros()
    }
}

fn triangles(mesh: &RawMesh) -> impl Iterator<Item = [Vec3; 3]> + '_ {
    mesh.faces.iter().map(|f| {
        [
            mesh.vertices[f[0]],
            mesh.vertices[f[1]],
            mesh.vertices[f[2]],
        ]
    })
}

pub fn write_stl_binary(mesh: &RawMesh, mut out: impl Write) -> std::io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    let tag = b"sonotrace binary stl";
    header[..tag.len()].copy_from_slice(tag);
    out.write_all(&header)?;
    out.write_all(&(mesh.faces.len() as u32).to_le_bytes())?;
    for tri in triangles(mesh) {
        let n = facet_normal(&tri);
        for v in std::iter::once(&n).chain(tri.iter()) {
            for c in v.iter() {
                out.write_all(&(*c as f32).to_le_bytes())?;
            }
        }
        out.write_all(&0u16.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_stl_ascii(mesh: &RawMesh, mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "solid sonotrace")?;
    for tri in triangles(mesh) {
        let n = facet_normal(&tri);
        writeln!(out, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z)?;
        writeln!(out, "    outer loop")?;
        for v in &tri {
            writeln!(
                out,
                "      vertex {:e} {:e} {:e}",
                v.x as f32, v.y as f32, v.z as f32
            )?;
        }
        writeln!(out, "    endloop")?;
        writeln!(out, "  endfacet")?;
    }
    writeln!(out, "endsolid sonotrace")
}

impl Mesh {
    pub fn write_stl_binary(&self, out: impl Write) -> std::io::Result<()> {
        write_stl_binary(&self.to_raw(), out)
    }
}
