//! Legacy ASCII VTK export of meshes and vertex fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{Mesh, VertexField};
use crate::error::{Error, Result};

/// Writes the mesh as a legacy VTK 3.0 unstructured grid, with the subdomain
/// labels as cell data and each named field as a point-data scalar array.
///
/// Every field must be bound to `mesh` (same id and length).
pub fn export_vtk(mesh: &Mesh, fields: &[(&str, &VertexField)], path: impl AsRef<Path>) -> Result<()> {
    for (name, field) in fields {
        if field.mesh_id != mesh.id() || field.len() != mesh.num_vertices() {
            return Err(Error::Invalid(format!(
                "field '{name}' is not bound to this mesh"
            )));
        }
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let r = (|| -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "adcfit export")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
        writeln!(w, "POINTS {} double", mesh.num_vertices())?;
        for p in &mesh.vertices {
            writeln!(w, "{:.16e} {:.16e} {:.16e}", p[0], p[1], p[2])?;
        }
        writeln!(w, "CELLS {} {}", mesh.num_tets(), mesh.num_tets() * 5)?;
        for tet in &mesh.tets {
            writeln!(w, "4 {} {} {} {}", tet[0], tet[1], tet[2], tet[3])?;
        }
        writeln!(w, "CELL_TYPES {}", mesh.num_tets())?;
        for _ in 0..mesh.num_tets() {
            writeln!(w, "10")?;
        }
        writeln!(w, "CELL_DATA {}", mesh.num_tets())?;
        writeln!(w, "SCALARS subdomain int 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for &label in &mesh.cell_subdomain {
            writeln!(w, "{label}")?;
        }
        if !fields.is_empty() {
            writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
            for (name, field) in fields {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for v in &field.values {
                    writeln!(w, "{v:.16e}")?;
                }
            }
        }
        w.flush()
    })();
    r.map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::super::{generate_phantom, PhantomVariant, DEFAULT_SHELL_FRACTIONS};
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("adcfit_vtk_{}_{}", std::process::id(), name));
        p
    }

    #[test]
    fn geometry_only_export() {
        let mesh =
            generate_phantom(4, 40.0, PhantomVariant::ThreeDomain, DEFAULT_SHELL_FRACTIONS)
                .unwrap();
        let path = tmp("geom.vtk");
        export_vtk(&mesh, &[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0"));
        assert!(text.contains(&format!("POINTS {} double", mesh.num_vertices())));
        assert!(text.contains("CELL_TYPES"));
        assert!(!text.contains("POINT_DATA"));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn constant_field_appears_in_point_data() {
        let mesh =
            generate_phantom(4, 40.0, PhantomVariant::ThreeDomain, DEFAULT_SHELL_FRACTIONS)
                .unwrap();
        let field = mesh.constant_field(1.0);
        let path = tmp("const.vtk");
        export_vtk(&mesh, &[("u", &field)], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let after = text.split("SCALARS u double 1").nth(1).unwrap();
        let values: Vec<&str> = after
            .lines()
            .skip(2) // remainder of the SCALARS line, then LOOKUP_TABLE
            .take(mesh.num_vertices())
            .collect();
        assert_eq!(values.len(), mesh.num_vertices());
        assert!(values.iter().all(|v| v.parse::<f64>().unwrap() == 1.0));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn unbound_field_is_rejected() {
        let mesh =
            generate_phantom(4, 40.0, PhantomVariant::ThreeDomain, DEFAULT_SHELL_FRACTIONS)
                .unwrap();
        let other =
            generate_phantom(4, 40.0, PhantomVariant::ThreeDomain, DEFAULT_SHELL_FRACTIONS)
                .unwrap();
        let field = other.constant_field(1.0);
        assert!(export_vtk(&mesh, &[("u", &field)], tmp("unbound.vtk")).is_err());
    }
}
