//! ASCII OBJ and PLY readers and writers, and the landmark JSON sidecar.

use std::fmt::Write as _;
use std::path::Path;

use super::{Landmark, TriangleMesh, Vec3};
use crate::error::{Error, Result};
use crate::util::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            _ => Err(Error::Format(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => parse_obj(&text),
        MeshFormat::Ply => parse_ply(&text),
    }
}

pub fn save_mesh(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => write_obj(mesh),
        MeshFormat::Ply => write_ply(mesh, None),
    };
    atomic_write(path, text.as_bytes())
}

pub fn load_landmarks(path: impl AsRef<Path>) -> Result<Vec<Landmark>> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn save_landmarks(landmarks: &[Landmark], path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(landmarks)?;
    atomic_write(path.as_ref(), text.as_bytes())
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn parse_f64(tok: Option<&str>, line: usize) -> Result<f64> {
    let tok = tok.ok_or_else(|| parse_err(line, "missing coordinate"))?;
    tok.parse()
        .map_err(|_| parse_err(line, format!("invalid number {tok:?}")))
}

pub(crate) fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut faces = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let mut toks = raw.split_whitespace();
        match toks.next() {
            Some("v") => {
                let x = parse_f64(toks.next(), line)?;
                let y = parse_f64(toks.next(), line)?;
                let z = parse_f64(toks.next(), line)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let idx: Vec<&str> = toks.collect();
                if idx.len() != 3 {
                    return Err(Error::NonTriangleFace { line });
                }
                let mut face = [0usize; 3];
                for (slot, tok) in face.iter_mut().zip(&idx) {
                    let first = tok.split('/').next().unwrap_or("");
                    let k: i64 = first
                        .parse()
                        .map_err(|_| parse_err(line, format!("invalid index {tok:?}")))?;
                    let resolved = if k > 0 {
                        k - 1
                    } else if k < 0 {
                        vertices.len() as i64 + k
                    } else {
                        return Err(parse_err(line, "OBJ indices are 1-based"));
                    };
                    if resolved < 0 {
                        return Err(parse_err(line, format!("index {k} out of range")));
                    }
                    *slot = resolved as usize;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, faces)
}

pub(crate) fn write_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v[0], v[1], v[2]);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub(crate) fn parse_ply(text: &str) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_err(1, "missing 'ply' magic")),
    }
    let mut vertex_count = None;
    let mut face_count = None;
    let mut vertex_props: Vec<String> = Vec::new();
    let mut current = "";
    let mut header_done = false;
    for (line, l) in lines.by_ref() {
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(parse_err(line, "only ascii PLY is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                vertex_count = Some(n.parse::<usize>().map_err(|_| parse_err(line, "bad count"))?);
                current = "vertex";
            }
            ["element", "face", n] => {
                face_count = Some(n.parse::<usize>().map_err(|_| parse_err(line, "bad count"))?);
                current = "face";
            }
            ["element", ..] => current = "other",
            ["property", "list", ..] => {}
            ["property", _, name] if current == "vertex" => vertex_props.push(name.to_string()),
            ["property", ..] => {}
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(parse_err(line, format!("unexpected header line {l:?}"))),
        }
    }
    if !header_done {
        return Err(parse_err(0, "missing end_header"));
    }
    let vertex_count = vertex_count.ok_or_else(|| parse_err(0, "no vertex element"))?;
    let face_count = face_count.unwrap_or(0);
    let col = |name: &str| {
        vertex_props
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(0, format!("vertex property {name} missing")))
    };
    let (cx, cy, cz) = (col("x")?, col("y")?, col("z")?);

    let mut vertices = Vec::with_capacity(vertex_count);
    let mut faces = Vec::with_capacity(face_count);
    for _ in 0..vertex_count {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_err(0, "truncated vertex list"))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        let get = |k: usize| parse_f64(toks.get(k).copied(), line);
        vertices.push([get(cx)?, get(cy)?, get(cz)?]);
    }
    for _ in 0..face_count {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_err(0, "truncated face list"))?;
        let toks: Vec<usize> = l
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(line, format!("invalid index {t:?}"))))
            .collect::<Result<_>>()?;
        match toks.as_slice() {
            [3, a, b, c, ..] => faces.push([*a, *b, *c]),
            [_, ..] => return Err(Error::NonTriangleFace { line }),
            [] => return Err(parse_err(line, "empty face record")),
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// ASCII PLY, optionally with per-vertex RGB colors.
pub(crate) fn write_ply(mesh: &TriangleMesh, colors: Option<&[[u8; 3]]>) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", mesh.vertex_count());
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if colors.is_some() {
        out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    let _ = writeln!(out, "element face {}", mesh.face_count());
    out.push_str("property list uchar int vertex_indices\nend_header\n");
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = write!(out, "{} {} {}", v[0], v[1], v[2]);
        if let Some(c) = colors {
            let _ = write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2]);
        }
        out.push('\n');
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives::icosphere;

    #[test]
    fn minimal_obj() {
        let m = parse_obj("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertex_count(), 3);
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_with_slashes_and_negative_indices() {
        let m = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf -3//1 -2//1 -1//1\n").unwrap();
        assert_eq!(m.faces(), &[[0, 1, 2]]);
    }

    #[test]
    fn quad_face_is_rejected() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap_err();
        assert!(matches!(err, Error::NonTriangleFace { line: 5 }));
    }

    #[test]
    fn bad_number_reports_line() {
        let err = parse_obj("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn ply_quad_is_rejected() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\n\
                    property float z\nelement face 1\nproperty list uchar int vertex_indices\n\
                    end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert!(matches!(parse_ply(text), Err(Error::NonTriangleFace { line: 14 })));
    }

    #[test]
    fn ply_with_extra_properties() {
        let text = "ply\nformat ascii 1.0\ncomment test\nelement vertex 3\nproperty float nx\n\
                    property float x\nproperty float y\nproperty float z\nelement face 1\n\
                    property list uchar int vertex_indices\nend_header\n9 0 0 0\n9 1 0 0\n9 0 1 0\n3 0 1 2\n";
        let m = parse_ply(text).unwrap();
        assert_eq!(m.vertices()[1], [1.0, 0.0, 0.0]);
    }

    #[test]
    fn round_trip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let m = icosphere(2, 37.25);
        for name in ["s.obj", "s.ply"] {
            let p = dir.path().join(name);
            save_mesh(&m, &p).unwrap();
            let back = load_mesh(&p).unwrap();
            assert_eq!(back.faces(), m.faces());
            for (a, b) in back.vertices().iter().zip(m.vertices()) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn landmark_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("lm.json");
        let lm = vec![Landmark {
            name: "nose".into(),
            vertex_index: 4,
        }];
        save_landmarks(&lm, &p).unwrap();
        assert_eq!(load_landmarks(&p).unwrap(), lm);
    }
}
