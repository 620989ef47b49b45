//! Snapshots, diagnostics CSV and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsRecord;
use crate::error::{Error, Result};
use crate::flows::FlowState;
use crate::grid::{MetricField, SymTensorField, TorusGrid};

pub const SNAPSHOT_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "t,lambda,grad_norm,velocity_l2,velocity_ck,dist_to_base_ck,max_ric,dlambda_dt";

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::Io(e)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotHeader {
    pub format_version: u32,
    pub dim: usize,
    pub resolution: Vec<usize>,
    pub periods: Vec<f64>,
    pub time: f64,
    pub components: usize,
    pub checksum: u32,
}

pub fn snapshot_bytes(state: &FlowState) -> Result<Vec<u8>> {
    let grid = state.g.grid();
    let data = &state.g.tensor().data;
    let mut payload = Vec::with_capacity(data.len() * 8);
    for v in data {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let header = SnapshotHeader {
        format_version: SNAPSHOT_VERSION,
        dim: grid.dim(),
        resolution: grid.resolution().to_vec(),
        periods: grid.periods().to_vec(),
        time: state.t,
        components: grid.sym_components(),
        checksum: crc32fast::hash(&payload),
    };
    let mut out = serde_json::to_vec(&header).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn snapshot_write(state: &FlowState, path: &Path) -> Result<()> {
    write_atomic(path, &snapshot_bytes(state)?)
}

pub fn snapshot_parse(bytes: &[u8]) -> Result<FlowState> {
    let newline = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::FormatError {
        offset: bytes.len() as u64,
        message: "header line is not terminated".into(),
    })?;
    let header: SnapshotHeader = serde_json::from_slice(&bytes[..newline]).map_err(|e| Error::FormatError {
        offset: e.column().saturating_sub(1) as u64,
        message: format!("bad header: {e}"),
    })?;
    if header.format_version != SNAPSHOT_VERSION {
        return Err(Error::FormatError {
            offset: 0,
            message: format!("unsupported format version {}", header.format_version),
        });
    }
    let grid = TorusGrid::new(&header.resolution, &header.periods).map_err(|e| Error::FormatError {
        offset: 0,
        message: format!("bad grid in header: {e}"),
    })?;
    if grid.dim() != header.dim || grid.sym_components() != header.components {
        return Err(Error::FormatError {
            offset: 0,
            message: "header dimension and component count disagree".into(),
        });
    }
    let payload = &bytes[newline + 1..];
    let expected = grid.node_count() * grid.sym_components() * 8;
    if payload.len() != expected {
        return Err(Error::FormatError {
            offset: (newline + 1 + payload.len().min(expected)) as u64,
            message: format!("payload has {} bytes, expected {expected}", payload.len()),
        });
    }
    let actual = crc32fast::hash(payload);
    if actual != header.checksum {
        return Err(Error::ChecksumMismatch {
            expected: header.checksum,
            actual,
        });
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let g = MetricField::new(SymTensorField::new(grid, data)?)?;
    Ok(FlowState::new(header.time, g))
}

pub fn snapshot_read(path: &Path) -> Result<FlowState> {
    snapshot_parse(&fs::read(path)?)
}

/// Reads a snapshot and checks that it lives on `grid`.
pub fn snapshot_read_for(path: &Path, grid: &TorusGrid) -> Result<FlowState> {
    let state = snapshot_read(path)?;
    state.g.grid().check_same(grid)?;
    Ok(state)
}

pub fn records_csv(records: &[DiagnosticsRecord]) -> String {
    let mut out = String::with_capacity(64 + records.len() * 200);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let row = [
            r.t,
            r.lambda,
            r.grad_norm,
            r.velocity_l2,
            r.velocity_ck,
            r.dist_to_base_ck,
            r.max_ric,
            r.dlambda_dt,
        ];
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_records_csv(records: &[DiagnosticsRecord], path: &Path) -> Result<()> {
    write_atomic(path, records_csv(records).as_bytes())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::FormatError {
            offset: 0,
            message: "missing or unexpected CSV header".into(),
        });
    }
    let mut offset = CSV_HEADER.len() as u64 + 1;
    let mut out = Vec::new();
    for line in lines {
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(str::parse).collect();
        let vals = match vals {
            Ok(v) if v.len() == 8 => v,
            _ => {
                return Err(Error::FormatError {
                    offset,
                    message: format!("bad CSV row: {line}"),
                })
            }
        };
        out.push(DiagnosticsRecord {
            t: vals[0],
            lambda: vals[1],
            grad_norm: vals[2],
            velocity_l2: vals[3],
            velocity_ck: vals[4],
            dist_to_base_ck: vals[5],
            max_ric: vals[6],
            dlambda_dt: vals[7],
        });
        offset += line.len() as u64 + 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;

    fn state() -> FlowState {
        let grid = TorusGrid::new(&[8, 10], &[1.0, 1.5]).unwrap();
        let u = ScalarField::from_fn(&grid, |x| 0.1 * (x[0] * 7.0).sin() * (x[1] * 3.0).cos());
        FlowState::new(0.125, MetricField::conformal(&u).unwrap())
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let s = state();
        let back = snapshot_parse(&snapshot_bytes(&s).unwrap()).unwrap();
        assert_eq!(back.t, s.t);
        assert_eq!(back.g, s.g);
    }

    #[test]
    fn truncated_and_corrupted_snapshots() {
        let bytes = snapshot_bytes(&state()).unwrap();
        let cut = &bytes[..bytes.len() - 5];
        assert!(matches!(snapshot_parse(cut), Err(Error::FormatError { .. })));
        assert!(matches!(snapshot_parse(&bytes[..10]), Err(Error::FormatError { .. })));
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x40;
        assert!(matches!(snapshot_parse(&bad), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![DiagnosticsRecord {
            t: 0.1,
            lambda: -1.0 / 3.0,
            grad_norm: 2f64.sqrt(),
            velocity_l2: 1e-300,
            velocity_ck: 5.0,
            dist_to_base_ck: 0.0,
            max_ric: 7.25,
            dlambda_dt: std::f64::consts::PI,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_records_csv(&recs, &path).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), recs);
    }
}
