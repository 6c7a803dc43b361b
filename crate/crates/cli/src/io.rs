//! Stream and table output: raw interleaved f32 sample files with JSON
//! sidecar headers, and plain CSV for analysis results.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{schema, CliError, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StreamHeader {
    pub fs_hz: f64,
    pub fc_hz: f64,
    pub start_time_s: f64,
    pub node_id: String,
}

/// Writes `<node_id>.bin` (interleaved little-endian f32 re,im) and
/// `<node_id>.json` next to it; returns the binary path.
pub fn write_stream(dir: &Path, header: &StreamHeader, data: &[Complex64]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let bin = dir.join(format!("{}.bin", header.node_id));
    let mut w = BufWriter::new(fs::File::create(&bin)?);
    for v in data {
        w.write_all(&(v.re as f32).to_le_bytes())?;
        w.write_all(&(v.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    let sidecar = dir.join(format!("{}.json", header.node_id));
    fs::write(
        sidecar,
        serde_json::to_string_pretty(header).map_err(|e| schema("header", e.to_string()))?,
    )?;
    Ok(bin)
}

/// Reads a stream written by [`write_stream`]; the sidecar must sit next to
/// the binary with the same stem.
pub fn read_stream(bin: &Path) -> Result<(StreamHeader, Vec<Complex64>)> {
    let sidecar = bin.with_extension("json");
    if !sidecar.exists() {
        return Err(CliError::MissingRef(sidecar));
    }
    let header: StreamHeader = serde_json::from_str(&fs::read_to_string(&sidecar)?)
        .map_err(|e| schema(sidecar.display().to_string(), e.to_string()))?;
    let mut bytes = Vec::new();
    fs::File::open(bin)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(schema(
            bin.display().to_string(),
            "length is not a whole number of complex f32 samples",
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| {
            Complex64::new(
                f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64,
                f32::from_le_bytes([c[4], c[5], c[6], c[7]]) as f64,
            )
        })
        .collect();
    Ok((header, data))
}

pub fn write_csv(path: &Path, columns: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "{}", columns.join(","))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.12e}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stream_round_trip_preserves_f32_samples() {
        let dir = std::env::temp_dir().join("rfemu_io_test");
        let header = StreamHeader {
            fs_hz: 4e6,
            fc_hz: 1e9,
            start_time_s: 0.25,
            node_id: "n0".into(),
        };
        let data: Vec<Complex64> =
            (0..100).map(|i| Complex64::new(i as f64 * 0.5, -(i as f64))).collect();
        let bin = write_stream(&dir, &header, &data).unwrap();
        let (h, d) = read_stream(&bin).unwrap();
        assert_eq!(h, header);
        assert_eq!(d.len(), data.len());
        for (a, b) in d.iter().zip(&data) {
            assert_eq!(a.re as f32, b.re as f32);
            assert_eq!(a.im as f32, b.im as f32);
        }
        fs::remove_dir_all(&dir).ok();
    }
}
