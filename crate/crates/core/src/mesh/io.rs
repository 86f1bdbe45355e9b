//! ASCII mesh and vertex-field files.
//!
//! Mesh format (`ADCMESH 1`):
//!
//! ```text
//! ADCMESH 1
//! <nv> <nt> <nbf>
//! x y z              (nv lines)
//! v0 v1 v2 v3 label  (nt lines)
//! v0 v1 v2 marker    (nbf lines)
//! ```
//!
//! Coordinates are written with 17 significant digits so that write∘read is
//! the identity on every field. Field files hold `<nv>` on the first line and
//! one scalar per line after it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{BoundaryFacet, Marker, Mesh, VertexField};
use crate::error::{Error, Result};

pub fn write_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let emit = |w: &mut BufWriter<File>, s: String| -> Result<()> {
        writeln!(w, "{s}").map_err(|e| Error::io(path, e))
    };
    emit(&mut w, "ADCMESH 1".into())?;
    emit(
        &mut w,
        format!(
            "{} {} {}",
            mesh.num_vertices(),
            mesh.num_tets(),
            mesh.boundary_facets.len()
        ),
    )?;
    for p in &mesh.vertices {
        emit(&mut w, format!("{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2]))?;
    }
    for (t, tet) in mesh.tets.iter().enumerate() {
        emit(
            &mut w,
            format!(
                "{} {} {} {} {}",
                tet[0], tet[1], tet[2], tet[3], mesh.cell_subdomain[t]
            ),
        )?;
    }
    for f in &mesh.boundary_facets {
        emit(
            &mut w,
            format!(
                "{} {} {} {}",
                f.vertices[0],
                f.vertices[1],
                f.vertices[2],
                f.marker.code()
            ),
        )?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines::new(BufReader::new(file), path);

    let header = lines.next_line()?;
    if header.trim() != "ADCMESH 1" {
        return Err(Error::parse(path, lines.line_no, "malformed header, expected 'ADCMESH 1'"));
    }
    let counts = lines.next_line()?;
    let mut it = counts.split_whitespace();
    let nv: usize = lines.parse_token(&mut it, "vertex count")?;
    let nt: usize = lines.parse_token(&mut it, "tet count")?;
    let nbf: usize = lines.parse_token(&mut it, "boundary facet count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next_line()?;
        let mut it = line.split_whitespace();
        let x: f64 = lines.parse_token(&mut it, "x coordinate")?;
        let y: f64 = lines.parse_token(&mut it, "y coordinate")?;
        let z: f64 = lines.parse_token(&mut it, "z coordinate")?;
        vertices.push([x, y, z]);
    }

    let mut tets = Vec::with_capacity(nt);
    let mut labels = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = lines.next_line()?;
        let mut it = line.split_whitespace();
        let mut tet = [0usize; 4];
        for slot in &mut tet {
            *slot = lines.parse_token(&mut it, "tet vertex index")?;
            if *slot >= nv {
                return Err(Error::parse(
                    path,
                    lines.line_no,
                    format!("index out of range: tet vertex {} >= {}", *slot, nv),
                ));
            }
        }
        let label: u8 = lines.parse_token(&mut it, "subdomain label")?;
        tets.push(tet);
        labels.push(label);
    }

    let mut facets = Vec::with_capacity(nbf);
    for _ in 0..nbf {
        let line = lines.next_line()?;
        let mut it = line.split_whitespace();
        let mut tri = [0usize; 3];
        for slot in &mut tri {
            *slot = lines.parse_token(&mut it, "facet vertex index")?;
            if *slot >= nv {
                return Err(Error::parse(
                    path,
                    lines.line_no,
                    format!("index out of range: facet vertex {} >= {}", *slot, nv),
                ));
            }
        }
        let code: u8 = lines.parse_token(&mut it, "boundary marker")?;
        let marker = Marker::from_code(code).ok_or_else(|| {
            Error::parse(path, lines.line_no, format!("unknown boundary marker {code}"))
        })?;
        facets.push(BoundaryFacet {
            vertices: tri,
            marker,
        });
    }

    let mesh = Mesh::new(vertices, tets, labels, facets)?;
    mesh.validate()?;
    Ok(mesh)
}

pub fn write_field(field: &VertexField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{}", field.values.len()).map_err(|e| Error::io(path, e))?;
    for v in &field.values {
        writeln!(w, "{v:.16e}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a field file and binds it to `mesh`; the stored length must match
/// the mesh vertex count.
pub fn read_field(path: impl AsRef<Path>, mesh: &Mesh) -> Result<VertexField> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Lines::new(BufReader::new(file), path);
    let n: usize = lines
        .next_line()?
        .trim()
        .parse()
        .map_err(|_| Error::parse(path, 1, "malformed field length"))?;
    if n != mesh.num_vertices() {
        return Err(Error::Invalid(format!(
            "field file holds {n} values for a mesh with {} vertices",
            mesh.num_vertices()
        )));
    }
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        let line = lines.next_line()?;
        let v: f64 = line
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, lines.line_no, "malformed scalar"))?;
        values.push(v);
    }
    mesh.field(values)
}

struct Lines<'p, R> {
    reader: R,
    path: &'p Path,
    line_no: usize,
    buf: String,
}

impl<'p, R: BufRead> Lines<'p, R> {
    fn new(reader: R, path: &'p Path) -> Self {
        Lines {
            reader,
            path,
            line_no: 0,
            buf: String::new(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        self.buf.clear();
        let n = self
            .reader
            .read_line(&mut self.buf)
            .map_err(|e| Error::io(self.path, e))?;
        self.line_no += 1;
        if n == 0 {
            return Err(Error::parse(self.path, self.line_no, "unexpected end of file"));
        }
        Ok(self.buf.trim_end().to_string())
    }

    fn parse_token<T: std::str::FromStr>(
        &self,
        it: &mut std::str::SplitWhitespace<'_>,
        what: &str,
    ) -> Result<T> {
        let tok = it
            .next()
            .ok_or_else(|| Error::parse(self.path, self.line_no, format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| Error::parse(self.path, self.line_no, format!("malformed {what}: '{tok}'")))
    }
}
