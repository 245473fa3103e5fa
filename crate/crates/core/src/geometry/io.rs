use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mesh::Mesh;
use super::GeometryError;

fn io_err(path: &Path, e: std::io::Error) -> GeometryError {
    GeometryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

fn parse_err(path: &Path, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// 8-bit color of a diffuse albedo, `round(255·ρ)` after clamping to `[0, 1]`.
pub fn albedo_to_byte(rho: f64) -> u8 {
    (255.0 * rho.clamp(0.0, 1.0) + 0.5).floor() as u8
}

/// ASCII OBJ with `v` and 1-based `f` lines. Coordinates are written with
/// shortest round-trip formatting, so re-import is bit-exact.
pub fn export_obj(mesh: &Mesh, path: &Path) -> Result<(), GeometryError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        for v in &mesh.vertices {
            writeln!(w, "v {:?} {:?} {:?}", v[0], v[1], v[2])?;
        }
        for f in &mesh.faces {
            writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
        }
        w.flush()
    };
    write().map_err(|e| io_err(path, e))
}

pub fn import_obj(path: &Path) -> Result<Mesh, GeometryError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut mesh = Mesh::default();
    for (ln, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(path, format!("line {}: {e}", ln + 1)))?;
                if c.len() != 3 {
                    return Err(parse_err(path, format!("line {}: vertex needs 3 coordinates", ln + 1)));
                }
                mesh.vertices.push([c[0], c[1], c[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| parse_err(path, format!("line {}: {e}", ln + 1)))?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(parse_err(path, format!("line {}: expected a 1-based triangle", ln + 1)));
                }
                mesh.faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Binary little-endian PLY with `double` coordinates and, when the mesh
/// carries reflectance parameters, per-vertex `uchar` colors from the
/// diffuse albedo.
pub fn export_ply(mesh: &Mesh, path: &Path) -> Result<(), GeometryError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let colors = mesh.theta.as_ref();
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "ply")?;
        writeln!(w, "format binary_little_endian 1.0")?;
        writeln!(w, "element vertex {}", mesh.vertices.len())?;
        for c in ["x", "y", "z"] {
            writeln!(w, "property double {c}")?;
        }
        if colors.is_some() {
            for c in ["red", "green", "blue"] {
                writeln!(w, "property uchar {c}")?;
            }
        }
        writeln!(w, "element face {}", mesh.faces.len())?;
        writeln!(w, "property list uchar int vertex_indices")?;
        writeln!(w, "end_header")?;
        for (i, v) in mesh.vertices.iter().enumerate() {
            for c in v {
                w.write_all(&c.to_le_bytes())?;
            }
            if let Some(theta) = colors {
                w.write_all(&[albedo_to_byte(theta[i][0]), albedo_to_byte(theta[i][1]), albedo_to_byte(theta[i][2])])?;
            }
        }
        for f in &mesh.faces {
            w.write_all(&[3u8])?;
            for &i in f {
                w.write_all(&(i as i32).to_le_bytes())?;
            }
        }
        w.flush()
    };
    write().map_err(|e| io_err(path, e))
}

/// Mesh and optional per-vertex colors read back from [`export_ply`] output.
pub fn import_ply(path: &Path) -> Result<(Mesh, Option<Vec<[u8; 3]>>), GeometryError> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| parse_err(path, "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|e| parse_err(path, e.to_string()))?;
    if !header.contains("format binary_little_endian 1.0") {
        return Err(parse_err(path, "only binary little-endian PLY is supported"));
    }
    let count = |name: &str| -> Result<usize, GeometryError> {
        header
            .lines()
            .find_map(|l| l.strip_prefix(&format!("element {name} ")))
            .ok_or_else(|| parse_err(path, format!("missing element {name}")))?
            .trim()
            .parse()
            .map_err(|_| parse_err(path, format!("bad {name} count")))
    };
    let nv = count("vertex")?;
    let nf = count("face")?;
    let has_color = header.contains("property uchar red");
    let mut body = &bytes[end + marker.len()..];
    let mut take = |n: usize| -> Result<&[u8], GeometryError> {
        if body.len() < n {
            return Err(parse_err(path, "truncated body"));
        }
        let (head, tail) = body.split_at(n);
        body = tail;
        Ok(head)
    };
    let mut mesh = Mesh::default();
    let mut colors = has_color.then(Vec::new);
    for _ in 0..nv {
        let mut v = [0.0; 3];
        for c in &mut v {
            *c = f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
        }
        mesh.vertices.push(v);
        if let Some(cols) = colors.as_mut() {
            let b = take(3)?;
            cols.push([b[0], b[1], b[2]]);
        }
    }
    for _ in 0..nf {
        if take(1)?[0] != 3 {
            return Err(parse_err(path, "only triangles are supported"));
        }
        let mut f = [0usize; 3];
        for i in &mut f {
            *i = i32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        }
        mesh.faces.push(f);
    }
    Ok((mesh, colors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::icosphere;

    #[test]
    fn obj_line_counts_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ico.obj");
        let m = icosphere(0, Some(2)).unwrap();
        export_obj(&m, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 12);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 20);
        let back = import_obj(&path).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.faces, m.faces);
    }

    #[test]
    fn ply_round_trip_with_colors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ico.ply");
        let mut m = icosphere(1, Some(4)).unwrap();
        m.theta = Some((0..m.vertices.len()).map(|i| [i as f64 / 41.0, 0.5, 1.0, 0.2, 0.3]).collect());
        export_ply(&m, &path).unwrap();
        let (back, colors) = import_ply(&path).unwrap();
        assert_eq!(back.vertices, m.vertices);
        assert_eq!(back.faces, m.faces);
        let colors = colors.unwrap();
        for (c, t) in colors.iter().zip(m.theta.as_ref().unwrap()) {
            assert_eq!(c[0], (255.0 * t[0]).round() as u8);
            assert_eq!(c[1], 128);
            assert_eq!(c[2], 255);
        }
    }

    #[test]
    fn io_errors_carry_path() {
        let err = import_obj(Path::new("/nonexistent/dir/mesh.obj")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/dir/mesh.obj"));
    }
}
