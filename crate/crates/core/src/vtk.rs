//! Legacy ASCII VTK export of fields on tetrahedral meshes.
//!
//! Fields of any degree are written as one value per mesh vertex (vertex
//! degrees of freedom coincide with vertex indices in the dof numbering).

use std::io::Write;

use crate::mesh::TetMesh;
use crate::spaces::FemField;

/// Writes an unstructured-grid VTK file with one scalar per named field.
pub fn write_vtk(
    w: &mut impl Write,
    mesh: &TetMesh,
    fields: &[(&str, &FemField)],
) -> std::io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "sp3fem snapshot")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.num_vertices())?;
    for v in &mesh.vertices {
        writeln!(w, "{:.12e} {:.12e} {:.12e}", v[0], v[1], v[2])?;
    }
    writeln!(w, "CELLS {} {}", mesh.num_tets(), 5 * mesh.num_tets())?;
    for t in &mesh.tets {
        writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(w, "CELL_TYPES {}", mesh.num_tets())?;
    for _ in 0..mesh.num_tets() {
        writeln!(w, "10")?;
    }
    writeln!(w, "POINT_DATA {}", mesh.num_vertices())?;
    for (name, field) in fields {
        assert!(
            std::sync::Arc::ptr_eq(&field.space.mesh, &field.space.mesh)
                && field.space.mesh.num_vertices() == mesh.num_vertices()
        );
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in 0..mesh.num_vertices() {
            writeln!(w, "{:.12e}", field.coeffs[v])?;
        }
    }
    Ok(())
}
