//! Artifact writers: VTK legacy ASCII fields, MatrixMarket sparse dumps,
//! and provenance-stamped CSV/JSON.

use crate::linalg::CsrMatrix;
use crate::mesh::Mesh;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

pub const ARTIFACT_VERSION: u32 = 1;

pub fn config_hash(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

/// VTK legacy ASCII UNSTRUCTURED_GRID with triangle cells (type 5) and one
/// scalar field per named point-data array. The title line carries the
/// provenance stamp (the legacy header has no comment syntax elsewhere).
pub fn vtk_string(mesh: &Mesh, point_data: &[(&str, &[f64])], provenance: &str) -> String {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    let title: String = provenance.chars().take(255).collect();
    out.push_str(&title);
    out.push('\n');
    out.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    writeln!(out, "POINTS {} double", mesh.num_vertices()).unwrap();
    for v in &mesh.vertices {
        writeln!(out, "{:.17e} {:.17e} 0.0", v.x, v.y).unwrap();
    }
    writeln!(out, "CELLS {} {}", mesh.num_triangles(), 4 * mesh.num_triangles()).unwrap();
    for t in &mesh.triangles {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    writeln!(out, "CELL_TYPES {}", mesh.num_triangles()).unwrap();
    for _ in 0..mesh.num_triangles() {
        out.push_str("5\n");
    }
    if !point_data.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.num_vertices()).unwrap();
        for (name, values) in point_data {
            assert_eq!(values.len(), mesh.num_vertices(), "field {name}");
            writeln!(out, "SCALARS {name} double 1").unwrap();
            out.push_str("LOOKUP_TABLE default\n");
            for v in *values {
                writeln!(out, "{v:.17e}").unwrap();
            }
        }
    }
    out
}

/// MatrixMarket coordinate format (1-based, general).
pub fn matrix_market_string(a: &CsrMatrix) -> String {
    let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
    writeln!(out, "{} {} {}", a.n, a.n, a.values.len()).unwrap();
    for row in 0..a.n {
        for k in a.row_ptr[row]..a.row_ptr[row + 1] {
            writeln!(out, "{} {} {:.17e}", row + 1, a.col_idx[k] + 1, a.values[k]).unwrap();
        }
    }
    out
}

/// Prepend provenance comment lines to a CSV table.
pub fn csv_with_provenance(table: &str, config_sha256: &str, seed: u64) -> String {
    format!(
        "# config_sha256={config_sha256}\n# artifact_version={ARTIFACT_VERSION}\n# seed={seed}\n{table}"
    )
}

/// Wrap a serializable report with provenance fields (JSON has no comment
/// syntax, so the stamp rides along as data).
pub fn json_with_provenance<T: serde::Serialize>(
    report: &T,
    config_sha256: &str,
    seed: u64,
) -> serde_json::Value {
    serde_json::json!({
        "provenance": {
            "config_sha256": config_sha256,
            "artifact_version": ARTIFACT_VERSION,
            "seed": seed,
        },
        "report": report,
    })
}
