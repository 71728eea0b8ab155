//! Query datasets: one JSON object per line.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    /// Ground truth for the exact-match checker.
    pub answer: String,
    /// Offline difficulty label in [0, 1], if known. Otherwise the
    /// configured estimator is used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difficulty: Option<f64>,
}

pub fn read_dataset(reader: impl BufRead) -> Result<Vec<Query>, Error> {
    let mut out: Vec<Query> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Query = serde_json::from_str(&line)
            .map_err(|e| Error::Config(format!("dataset line {}: {e}", i + 1)))?;
        if let Some(d) = q.difficulty {
            if !(0.0..=1.0).contains(&d) {
                return Err(Error::Config(format!(
                    "dataset line {}: difficulty {d} outside [0, 1]",
                    i + 1
                )));
            }
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Query>, Error> {
    read_dataset(BufReader::new(std::fs::File::open(path)?))
}

pub fn write_dataset(mut w: impl Write, queries: &[Query]) -> Result<(), Error> {
    for q in queries {
        serde_json::to_writer(&mut w, q)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(path: &Path, queries: &[Query]) -> Result<(), Error> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(&mut f, queries)?;
    f.flush()?;
    Ok(())
}
