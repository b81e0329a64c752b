//! Moment extraction and field export for the chaos-coefficient solution.
//!
//! Moments are exact functionals of the coefficients under the orthonormal
//! basis: the mean is chaos mode 0 and the variance is the sum of squares
//! of the remaining modes. Fields are exported at their native nodes (Q2
//! for displacements, Q1 for pressures) with constrained nodes carrying
//! their homogeneous boundary value.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use crate::mesh::{DofMaps, Grid, Mesh};
use crate::stochastic::{chaos_basis_at, MultiIndexSet, ParamInterval};
use crate::system::{Field, SgVector};
use crate::{Error, Result};

/// Chaos-coefficient solution with everything needed to interpret it.
pub struct SgSolution {
    pub coefficients: SgVector,
    pub mesh: Arc<Mesh>,
    pub dofs: Arc<DofMaps>,
    pub index_set: MultiIndexSet,
    pub intervals: Vec<ParamInterval>,
}

/// Values at every node of one variable's native lattice.
#[derive(Debug, Clone)]
pub struct NodalField {
    pub field: Field,
    pub values: Vec<f64>,
}

impl SgSolution {
    pub fn new(
        coefficients: SgVector,
        mesh: Arc<Mesh>,
        dofs: Arc<DofMaps>,
        index_set: MultiIndexSet,
        intervals: Vec<ParamInterval>,
    ) -> Result<SgSolution> {
        if index_set.len() != coefficients.dims.n_y {
            return Err(Error::Dimension(
                "index set size must match the chaos dimension".into(),
            ));
        }
        if index_set.index(0).iter().any(|&a| a != 0) {
            return Err(Error::Dimension("the first multi-index must be zero".into()));
        }
        Ok(SgSolution {
            coefficients,
            mesh,
            dofs,
            index_set,
            intervals,
        })
    }

    /// Number of nodes of the native lattice of `field`.
    fn native_nodes(&self, field: Field) -> usize {
        match field {
            Field::U1 | Field::U2 => self.mesh.q2.n_nodes(),
            _ => self.mesh.q1.n_nodes(),
        }
    }

    /// Scatters free-dof coefficients to the full node set (constrained
    /// nodes keep their homogeneous value 0).
    fn scatter(&self, field: Field, free_values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.native_nodes(field)];
        match field {
            Field::U1 | Field::U2 => {
                for (free, &node) in self.dofs.u_node.iter().enumerate() {
                    out[node] = free_values[free];
                }
            }
            Field::Pf => {
                for (free, &node) in self.dofs.p0_node.iter().enumerate() {
                    out[node] = free_values[free];
                }
            }
            Field::P1 | Field::P2 | Field::Pt => {
                out.copy_from_slice(free_values);
            }
        }
        out
    }

    /// Mean of one variable: chaos mode 0 mapped to mesh nodes.
    pub fn mean_field(&self, field: Field) -> NodalField {
        let col = self.coefficients.mode_column(field, 0);
        NodalField {
            field,
            values: self.scatter(field, &col),
        }
    }

    /// Variance of one variable: sum of squared coefficients over modes >= 1.
    pub fn variance_field(&self, field: Field) -> NodalField {
        let ny = self.coefficients.dims.n_y;
        let nsp = self.coefficients.dims.spatial(field);
        let block = self.coefficients.block(field);
        let mut var = vec![0.0; nsp];
        for (i, v) in var.iter_mut().enumerate() {
            let row = &block[i * ny..(i + 1) * ny];
            *v = row[1..].iter().map(|c| c * c).sum();
        }
        NodalField {
            field,
            values: self.scatter(field, &var),
        }
    }

    /// Deterministic nodal fields at one parameter point.
    pub fn sample_solution(&self, y: &[f64]) -> Result<Vec<NodalField>> {
        let psi = chaos_basis_at(&self.index_set, &self.intervals, y)?;
        let ny = self.coefficients.dims.n_y;
        Ok(Field::ALL
            .iter()
            .map(|&field| {
                let nsp = self.coefficients.dims.spatial(field);
                let block = self.coefficients.block(field);
                let mut vals = vec![0.0; nsp];
                for (i, v) in vals.iter_mut().enumerate() {
                    let row = &block[i * ny..(i + 1) * ny];
                    *v = row.iter().zip(&psi).map(|(c, p)| c * p).sum();
                }
                NodalField {
                    field,
                    values: self.scatter(field, &vals),
                }
            })
            .collect())
    }
}

/// Output format of field exports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    VtkLegacyAscii,
}

impl ExportFormat {
    pub fn extension(&self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::VtkLegacyAscii => "vtk",
        }
    }
}

fn grid_of(mesh: &Mesh, field: Field) -> &Grid {
    match field {
        Field::U1 | Field::U2 => &mesh.q2,
        _ => &mesh.q1,
    }
}

/// Writes one nodal field to `path`.
///
/// CSV: header `x,y,value`, LF line endings, 17-significant-digit decimals,
/// rows in node order. VTK: legacy ASCII structured grid with one scalar
/// array named `data_name`.
pub fn export_field(
    mesh: &Mesh,
    field: &NodalField,
    format: ExportFormat,
    data_name: &str,
    path: &Path,
) -> Result<()> {
    let grid = grid_of(mesh, field.field);
    assert_eq!(field.values.len(), grid.n_nodes());
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        ExportFormat::Csv => {
            out.write_all(b"x,y,value\n")?;
            for (node, v) in field.values.iter().enumerate() {
                let (x, y) = grid.node_xy(node);
                writeln!(out, "{x:.16e},{y:.16e},{v:.16e}")?;
            }
        }
        ExportFormat::VtkLegacyAscii => {
            writeln!(out, "# vtk DataFile Version 3.0")?;
            writeln!(out, "{data_name}")?;
            writeln!(out, "ASCII")?;
            writeln!(out, "DATASET STRUCTURED_GRID")?;
            writeln!(out, "DIMENSIONS {} {} 1", grid.nx_nodes, grid.ny_nodes)?;
            writeln!(out, "POINTS {} double", grid.n_nodes())?;
            for node in 0..grid.n_nodes() {
                let (x, y) = grid.node_xy(node);
                writeln!(out, "{x:.16e} {y:.16e} 0.0")?;
            }
            writeln!(out, "POINT_DATA {}", grid.n_nodes())?;
            writeln!(out, "SCALARS {data_name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in &field.values {
                writeln!(out, "{v:.16e}")?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Exports several named fields into a directory, one file each.
pub fn export_fields(
    mesh: &Mesh,
    fields: &[(String, NodalField)],
    format: ExportFormat,
    dir: &Path,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (name, field) in fields {
        let path = dir.join(format!("{name}.{}", format.extension()));
        export_field(mesh, field, format, name, &path)?;
        paths.push(path);
    }
    Ok(paths)
}
