//! CSV tables and binary trajectory dumps.
//!
//! Floats are written with 17 significant digits so every value round-trips
//! exactly; files use a header row and LF line endings.

use crate::error::{Error, Result};
use crate::netsim::{EmpiricalMoments, TrajectoryEnsemble};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Round-trip exact float text.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// In-memory CSV table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::config(format!(
                "row has {} fields, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Appends a row of floats.
    pub fn push_floats(&mut self, row: &[f64]) -> Result<()> {
        self.push(row.iter().map(|&v| float(v)).collect())
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(w);
        out.write_record(&self.header).map_err(csv_error)?;
        for row in &self.rows {
            out.write_record(row).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// Columns `t, m, q, potential_mean, potential_var`.
pub fn moments_table(moments: &EmpiricalMoments) -> Table {
    let mut table = Table::new(["t", "m", "q", "potential_mean", "potential_var"]);
    for t in 0..moments.m.len() {
        table
            .push(vec![
                t.to_string(),
                float(moments.m[t]),
                float(moments.q[t]),
                float(moments.potential_mean[t]),
                float(moments.potential_var[t]),
            ])
            .expect("fixed width");
    }
    table
}

/// Flattened covariance `s, t, c, potential_cov` for `s <= t`, or `None`
/// when the moments carry no covariances.
pub fn covariance_table(moments: &EmpiricalMoments) -> Option<Table> {
    let (c, pc) = (moments.c.as_ref()?, moments.potential_cov.as_ref()?);
    let mut table = Table::new(["s", "t", "c", "potential_cov"]);
    for t in 0..c.dim() {
        for s in 0..=t {
            table
                .push(vec![
                    s.to_string(),
                    t.to_string(),
                    float(c.get(s, t)),
                    float(pc.get(s, t)),
                ])
                .expect("fixed width");
        }
    }
    Some(table)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    layout: &'static str,
    steps: usize,
    neurons: usize,
    seed: u64,
    config: &'a crate::config::NetworkConfig,
}

/// Writes `stem.bin` (little-endian `f64`, time-major) and `stem.json`
/// describing its dimensions.
pub fn write_trajectory(ensemble: &TrajectoryEnsemble, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
    let dir = dir.as_ref();
    let mut bin = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
    for v in &ensemble.u {
        bin.write_all(&v.to_le_bytes())?;
    }
    bin.flush()?;
    let sidecar = Sidecar {
        format: "f64-le",
        layout: "time-major",
        steps: ensemble.horizon() + 1,
        neurons: ensemble.n(),
        seed: ensemble.config.seed,
        config: &ensemble.config,
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    std::fs::write(dir.join(format!("{stem}.json")), json + "\n")?;
    Ok(())
}

/// Reads a dump written by [`write_trajectory`] as `(steps, neurons, data)`.
pub fn read_trajectory(dir: impl AsRef<Path>, stem: &str) -> Result<(usize, usize, Vec<f64>)> {
    let dir = dir.as_ref();
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    let dim = |k: &str| {
        meta[k]
            .as_u64()
            .map(|v| v as usize)
            .ok_or_else(|| Error::config(format!("sidecar lacks {k}")))
    };
    let (steps, neurons) = (dim("steps")?, dim("neurons")?);
    let bytes = std::fs::read(dir.join(format!("{stem}.bin")))?;
    if bytes.len() != steps * neurons * 8 {
        return Err(Error::config(format!(
            "binary dump holds {} bytes, sidecar announces {steps} x {neurons} values",
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((steps, neurons, data))
}
