//! Residual dataset on disk: one row per sample, GP inputs then targets.

use std::path::Path;

use gpmpc_core::gp::Dataset;
use nalgebra::DMatrix;

use crate::error::{BenchError, Result};

/// Bumped whenever the dataset columns change.
pub const DATASET_SCHEMA_VERSION: u32 = 1;

pub const INPUT_COLUMNS: [&str; 10] = ["w_vx", "w_vy", "w_vz", "w_phi", "w_theta", "w_psi", "w_thrust", "w_p", "w_q", "w_r"];
pub const OUTPUT_COLUMNS: [&str; 3] = ["z_x", "z_y", "z_z"];

fn header() -> Vec<&'static str> {
    std::iter::once("schema_version").chain(INPUT_COLUMNS).chain(OUTPUT_COLUMNS).collect()
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    if data.input_dim() != INPUT_COLUMNS.len() || data.output_dim() != OUTPUT_COLUMNS.len() {
        return Err(BenchError::Run("dataset does not have the quadrotor residual layout".into()));
    }
    let mut wr = csv::Writer::from_path(path)?;
    wr.write_record(header())?;
    for i in 0..data.len() {
        let mut row = vec![DATASET_SCHEMA_VERSION.to_string()];
        row.extend(data.inputs.row(i).iter().chain(data.outputs.row(i).iter()).map(|v| format!("{v:?}")));
        wr.write_record(&row)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut rd = csv::Reader::from_path(path)
        .map_err(|e| BenchError::Config(format!("cannot open dataset {}: {e}", path.display())))?;
    if rd.headers()?.iter().collect::<Vec<_>>() != header() {
        return Err(BenchError::Config(format!("{}: unexpected dataset columns", path.display())));
    }
    let (nw, nz) = (INPUT_COLUMNS.len(), OUTPUT_COLUMNS.len());
    let mut w = Vec::new();
    let mut z = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| BenchError::Config(format!("{} row {}: {e}", path.display(), line + 1)))?;
        if vals[0] as u32 != DATASET_SCHEMA_VERSION {
            return Err(BenchError::Config(format!("unsupported dataset schema version {}", vals[0])));
        }
        w.extend_from_slice(&vals[1..1 + nw]);
        z.extend_from_slice(&vals[1 + nw..1 + nw + nz]);
    }
    let n = w.len() / nw;
    if n == 0 {
        return Err(BenchError::Config(format!("{}: dataset is empty", path.display())));
    }
    Ok(Dataset::new(DMatrix::from_row_slice(n, nw, &w), DMatrix::from_row_slice(n, nz, &z))?)
}

/// Keeps every ⌈N/max⌉-th sample.
pub fn thin(data: &Dataset, max_samples: usize) -> Dataset {
    if data.len() <= max_samples || max_samples == 0 {
        return data.clone();
    }
    let stride = data.len().div_ceil(max_samples);
    let idx: Vec<usize> = (0..data.len()).step_by(stride).collect();
    data.subset(&idx)
}
