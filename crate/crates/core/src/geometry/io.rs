//! OBJ and OFF readers and writers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GeometryError, Point3, TriangleMesh};

/// Loads an `.obj` or `.off` file, chosen by extension (OFF also by header).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh, GeometryError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase);
    let mesh = match ext.as_deref() {
        Some("off") => parse_off(&text)?,
        Some("obj") => parse_obj(&text)?,
        _ if text.trim_start().starts_with("OFF") => parse_off(&text)?,
        _ => parse_obj(&text)?,
    };
    let name = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned);
    let mut mesh = mesh;
    mesh.name = name;
    Ok(mesh)
}

fn parse_err(line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_coord(token: Option<&str>, line: usize) -> Result<f32, GeometryError> {
    let token = token.ok_or_else(|| parse_err(line, "missing coordinate"))?;
    token
        .parse::<f32>()
        .map_err(|_| parse_err(line, format!("invalid coordinate `{token}`")))
}

/// Fan triangulation `(0, i, i + 1)` of a polygon given as vertex indices.
fn fan(face: &[u32], line: usize, out: &mut Vec<[u32; 3]>) -> Result<(), GeometryError> {
    if face.len() < 3 {
        return Err(GeometryError::NonTriangulableFace {
            line,
            vertices: face.len(),
        });
    }
    for i in 1..face.len() - 1 {
        let tri = [face[0], face[i], face[i + 1]];
        if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
            return Err(GeometryError::NonTriangulableFace {
                line,
                vertices: face.len(),
            });
        }
        out.push(tri);
    }
    Ok(())
}

pub fn parse_obj(text: &str) -> Result<TriangleMesh, GeometryError> {
    let mut vertices: Vec<Point3> = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = content.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let x = parse_coord(tokens.next(), line)?;
                let y = parse_coord(tokens.next(), line)?;
                let z = parse_coord(tokens.next(), line)?;
                vertices.push([x, y, z]);
            }
            Some("f") => {
                let mut face = Vec::new();
                for token in tokens {
                    let index_str = token.split('/').next().unwrap_or("");
                    let index: i64 = index_str
                        .parse()
                        .map_err(|_| parse_err(line, format!("invalid face index `{token}`")))?;
                    let n = vertices.len() as i64;
                    let resolved = match index {
                        i if i > 0 && i <= n => i - 1,
                        i if i < 0 && -i <= n => n + i,
                        _ => {
                            return Err(parse_err(
                                line,
                                format!("face index {index} out of range for {n} vertices"),
                            ))
                        }
                    };
                    face.push(resolved as u32);
                }
                fan(&face, line, &mut triangles)?;
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

pub fn parse_off(text: &str) -> Result<TriangleMesh, GeometryError> {
    // Tokens keep their line numbers so errors point at the offending line.
    let mut tokens = text.lines().enumerate().flat_map(|(i, raw)| {
        raw.split('#')
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(move |t| (i + 1, t))
    });
    let (line, header) = tokens.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut pending = None;
    if header != "OFF" {
        match header.strip_prefix("OFF") {
            Some(rest) if !rest.is_empty() => pending = Some((line, rest)),
            _ => return Err(parse_err(line, "missing OFF header")),
        }
    }
    let mut next_usize = |what: &str| -> Result<(usize, usize), GeometryError> {
        let (line, tok) = match pending.take() {
            Some(p) => p,
            None => tokens
                .next()
                .ok_or_else(|| parse_err(0, format!("unexpected end of file reading {what}")))?,
        };
        tok.parse::<usize>()
            .map(|v| (line, v))
            .map_err(|_| parse_err(line, format!("invalid {what} `{tok}`")))
    };
    let (_, nv) = next_usize("vertex count")?;
    let (_, nf) = next_usize("face count")?;
    let _ = next_usize("edge count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut p = [0.0f32; 3];
        for c in &mut p {
            let (line, tok) = tokens
                .next()
                .ok_or_else(|| parse_err(0, "unexpected end of file in vertices"))?;
            *c = tok
                .parse()
                .map_err(|_| parse_err(line, format!("invalid coordinate `{tok}`")))?;
        }
        vertices.push(p);
    }

    // Faces are line-oriented; trailing color values are ignored.
    let mut triangles = Vec::new();
    let mut remaining = nf;
    let mut face_lines = tokens.peekable();
    while remaining > 0 {
        let (line, tok) = face_lines
            .next()
            .ok_or_else(|| parse_err(0, "unexpected end of file in faces"))?;
        let count: usize = tok
            .parse()
            .map_err(|_| parse_err(line, format!("invalid face size `{tok}`")))?;
        let mut face = Vec::with_capacity(count);
        for _ in 0..count {
            let (l, t) = face_lines
                .next()
                .ok_or_else(|| parse_err(line, "truncated face"))?;
            let idx: usize = t
                .parse()
                .map_err(|_| parse_err(l, format!("invalid face index `{t}`")))?;
            if idx >= nv {
                return Err(parse_err(l, format!("face index {idx} out of range")));
            }
            face.push(idx as u32);
        }
        while face_lines.peek().is_some_and(|(l, _)| *l == line) {
            face_lines.next();
        }
        fan(&face, line, &mut triangles)?;
        remaining -= 1;
    }
    TriangleMesh::new(vertices, triangles)
}

/// OBJ text: `v` lines with six decimals, 1-based `f` lines.
pub fn to_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    if let Some(name) = &mesh.name {
        let _ = writeln!(out, "o {name}");
    }
    for p in mesh.vertices() {
        let _ = writeln!(out, "v {:.6} {:.6} {:.6}", p[0], p[1], p[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out
}

pub fn to_off(mesh: &TriangleMesh) -> String {
    let mut out = String::from("OFF\n");
    let _ = writeln!(
        out,
        "{} {} 0",
        mesh.vertices().len(),
        mesh.triangles().len()
    );
    for p in mesh.vertices() {
        let _ = writeln!(out, "{:.6} {:.6} {:.6}", p[0], p[1], p[2]);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out
}

fn write_text(path: &Path, text: String) -> Result<(), GeometryError> {
    fs::write(path, text).map_err(|e| GeometryError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

pub fn save_obj(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    write_text(path.as_ref(), to_obj(mesh))
}

pub fn save_off(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<(), GeometryError> {
    write_text(path.as_ref(), to_off(mesh))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_obj() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fan_triangulated() {
        let text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1/1 2/2/2 3//3 4\n";
        let mesh = parse_obj(text).unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn negative_obj_indices_are_relative() {
        let mesh = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n").unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn obj_errors_carry_line_numbers() {
        let err = parse_obj("v 0 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 2, .. }));
        let err = parse_obj("v 0 0 0\nv 1 0 0\nf 1 2\n").unwrap_err();
        assert!(matches!(
            err,
            GeometryError::NonTriangulableFace {
                line: 3,
                vertices: 2
            }
        ));
        let err = parse_obj("v 0 0 0\nf 1 2 3\n").unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 2, .. }));
    }

    #[test]
    fn off_unit_cube() {
        let text = "OFF\n# cube\n8 6 12\n\
            0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
            4 0 3 2 1\n4 4 5 6 7\n4 0 1 5 4\n4 2 3 7 6\n4 1 2 6 5\n4 0 4 7 3 255 0 0\n";
        let mesh = parse_off(text).unwrap();
        assert_eq!(mesh.vertices().len(), 8);
        assert_eq!(mesh.triangles().len(), 12);
        assert!(mesh.is_watertight());
    }

    #[test]
    fn off_triangle_list_and_inline_counts() {
        let text = "OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";
        assert_eq!(parse_off(text).unwrap().triangles().len(), 1);
        assert!(parse_off("COFF\n").is_err());
    }

    #[test]
    fn writers_roundtrip_through_parsers() {
        let mesh = crate::geometry::procedural::box_mesh([0.0; 3], [0.5, 0.25, 0.125]);
        let obj = to_obj(&mesh);
        assert!(obj.lines().next().unwrap().starts_with("v -0.250000"));
        let back = parse_obj(&obj).unwrap();
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.vertices(), mesh.vertices());
        let off = parse_off(&to_off(&mesh)).unwrap();
        assert_eq!(off.triangles(), mesh.triangles());
    }
}
