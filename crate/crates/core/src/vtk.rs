//! Legacy ASCII VTK output (`UNSTRUCTURED_GRID`, tetrahedra only).

use std::io::{self, Write};

use crate::mesh::Mesh;
use crate::scheme::State;
use crate::spaces::element_average;

const VTK_TETRA: u8 = 10;

fn write_grid<W: Write>(w: &mut W, mesh: &Mesh, title: &str) -> io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    // the title line may not contain newlines
    writeln!(w, "{}", title.replace(['\n', '\r'], " "))?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", mesh.vertices().len())?;
    for v in mesh.vertices() {
        writeln!(w, "{:.17e} {:.17e} {:.17e}", v.x, v.y, v.z)?;
    }
    let ne = mesh.n_elements();
    writeln!(w, "CELLS {} {}", ne, 5 * ne)?;
    for t in mesh.tets() {
        writeln!(w, "4 {} {} {} {}", t[0], t[1], t[2], t[3])?;
    }
    writeln!(w, "CELL_TYPES {ne}")?;
    for _ in 0..ne {
        writeln!(w, "{VTK_TETRA}")?;
    }
    Ok(())
}

/// Writes the mesh alone.
pub fn write_mesh<W: Write>(w: &mut W, mesh: &Mesh) -> io::Result<()> {
    write_grid(w, mesh, "mesh")
}

/// Writes the mesh with the density and the element-averaged velocity û as
/// cell data.
pub fn write_state<W: Write>(w: &mut W, mesh: &Mesh, state: &State) -> io::Result<()> {
    write_grid(
        w,
        mesh,
        &format!("step {} t {:.17e}", state.step, state.time),
    )?;
    writeln!(w, "CELL_DATA {}", mesh.n_elements())?;
    writeln!(w, "SCALARS density double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for r in &state.rho.values {
        writeln!(w, "{r:.17e}")?;
    }
    writeln!(w, "VECTORS velocity double")?;
    for u in element_average(&state.u, mesh) {
        writeln!(w, "{:.17e} {:.17e} {:.17e}", u.x, u.y, u.z)?;
    }
    Ok(())
}
