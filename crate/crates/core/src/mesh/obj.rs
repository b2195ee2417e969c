//! Minimal ASCII OBJ reader/writer. Only `v` and `f` records are consumed;
//! everything else (normals, texture coordinates, groups, materials) is
//! skipped on read and never written.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::Mesh;
use crate::{Error, Result};

pub fn load_mesh<P: AsRef<Path>>(path: P) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    parse_obj(&text, path)
}

/// Parses OBJ text. `origin` is only used in error messages.
pub fn parse_obj(text: &str, origin: &Path) -> Result<Mesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let perr = |line: usize, msg: String| Error::Parse {
        path: PathBuf::from(origin),
        line,
        msg,
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut it = content.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut p = [0.0; 3];
                for c in p.iter_mut() {
                    let tok = it
                        .next()
                        .ok_or_else(|| perr(line, "vertex needs three coordinates".into()))?;
                    *c = tok
                        .parse::<f64>()
                        .map_err(|_| perr(line, format!("bad coordinate {tok:?}")))?;
                    if !c.is_finite() {
                        return Err(perr(line, format!("non-finite coordinate {tok:?}")));
                    }
                }
                vertices.push(p);
            }
            Some("f") => {
                let mut poly = Vec::with_capacity(4);
                for tok in it {
                    let head = tok.split('/').next().unwrap_or("");
                    let idx = head
                        .parse::<i64>()
                        .map_err(|_| perr(line, format!("bad face reference {tok:?}")))?;
                    let count = vertices.len();
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        count as i64 + idx
                    } else {
                        -1
                    };
                    if resolved < 0 || resolved >= count as i64 {
                        return Err(Error::Index {
                            path: PathBuf::from(origin),
                            line,
                            index: idx,
                            count,
                        });
                    }
                    poly.push(resolved as usize);
                }
                if poly.len() < 3 {
                    return Err(perr(line, "face needs at least three vertices".into()));
                }
                for k in 1..poly.len() - 1 {
                    let tri = [poly[0], poly[k], poly[k + 1]];
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        log::warn!("{}:{line}: skipping face with repeated vertex", origin.display());
                        continue;
                    }
                    faces.push(tri);
                }
            }
            _ => {}
        }
    }
    Mesh::new(vertices, faces)
}

/// Serializes a mesh. Coordinates use Rust's shortest round-trip float
/// formatting, so a reload reproduces every coordinate bit-exactly.
pub fn write_obj(mesh: &Mesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 48 + mesh.faces.len() * 24);
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn save_mesh<P: AsRef<Path>>(mesh: &Mesh, path: P) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(write_obj(mesh).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::primitives;

    fn parse(s: &str) -> Result<Mesh> {
        parse_obj(s, Path::new("test.obj"))
    }

    #[test]
    fn minimal_triangle() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn quad_is_fanned() {
        let m = parse("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn slashes_negative_indices_and_ignored_records() {
        let src = "# header\no thing\nv 0 0 0\nv 1 0 0\nvn 0 0 1\nvt 0 0\nv 0 1 0\ns off\nf -3/1/1 -2/2/1 -1/3/1\n";
        let m = parse(src).unwrap();
        assert_eq!(m.faces, vec![[0, 1, 2]]);
    }

    #[test]
    fn out_of_range_reference() {
        let err = parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n").unwrap_err();
        match err {
            Error::Index { line, index, count, .. } => {
                assert_eq!((line, index, count), (4, 9, 3));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("v 0 0 0\nv 1 zero 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = parse("v 0 0 0\nf 1 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let tri = parse("v 0.1 0.2 0.3\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").unwrap();
        let cube = primitives::cube([0.123456789, -3.0, 1e-7], 1.0 / 3.0);
        for (name, m) in [("tri", &tri), ("cube", &cube), ("empty", &Mesh::default())] {
            let p = dir.path().join(format!("{name}.obj"));
            save_mesh(m, &p).unwrap();
            let back = load_mesh(&p).unwrap();
            assert_eq!(&back, m, "{name}");
        }
        assert_eq!(cube.vertices.len(), 8);
        assert_eq!(cube.faces.len(), 12);
    }
}
