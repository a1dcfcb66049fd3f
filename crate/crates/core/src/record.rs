//! Record files: `t_us,V` CSV plus a JSON sidecar with the run parameters.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{PqsError, Result};
use crate::format::{sig17, write_json};
use crate::measurement::SignalSample;
use crate::params::SimParams;
use crate::trajectory::HomodyneRecord;

pub const RECORD_HEADER: [&str; 2] = ["t_us", "V"];

/// Sidecar metadata stored next to a record CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordMeta {
    pub gamma_per_us: f64,
    pub eta: f64,
    pub dt_us: f64,
    #[serde(rename = "T_us")]
    pub horizon_us: f64,
    pub seed: Option<u64>,
}

impl RecordMeta {
    pub fn of(record: &HomodyneRecord) -> Self {
        let p = &record.params;
        Self {
            gamma_per_us: p.gamma,
            eta: p.eta,
            dt_us: p.dt,
            horizon_us: p.horizon,
            seed: record.seed,
        }
    }

    pub fn params(&self, eta_p: f64) -> Result<SimParams> {
        SimParams::new(self.gamma_per_us, self.eta, self.dt_us, self.horizon_us, eta_p)
    }
}

pub fn write_samples_csv<W: Write>(samples: &[SignalSample], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RECORD_HEADER)?;
    for s in samples {
        out.write_record([sig17(s.t), sig17(s.v)])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_samples_csv<R: Read>(r: R) -> Result<Vec<SignalSample>> {
    let mut input = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = input.headers()?;
    if header.iter().collect::<Vec<_>>() != RECORD_HEADER {
        return Err(PqsError::RecordFormat(format!(
            "expected header t_us,V, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut samples = Vec::new();
    for (line, row) in input.records().enumerate() {
        let row = row?;
        let field = |i: usize| -> Result<f64> {
            row.get(i)
                .ok_or_else(|| PqsError::RecordFormat(format!("row {}: missing column", line + 1)))?
                .trim()
                .parse::<f64>()
                .map_err(|e| PqsError::RecordFormat(format!("row {}: {e}", line + 1)))
        };
        samples.push(SignalSample { t: field(0)?, v: field(1)? });
    }
    Ok(samples)
}

/// `record.csv` -> `record.json`
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn save_record(record: &HomodyneRecord, csv_path: &Path) -> Result<()> {
    write_samples_csv(&record.samples, BufWriter::new(File::create(csv_path)?))?;
    let mut side = BufWriter::new(File::create(sidecar_path(csv_path))?);
    write_json(&RecordMeta::of(record), &mut side)?;
    side.flush()?;
    Ok(())
}

/// Load and validate a record. `eta_p` is not stored in the sidecar.
pub fn load_record(csv_path: &Path, eta_p: f64) -> Result<HomodyneRecord> {
    let samples = read_samples_csv(File::open(csv_path)?)?;
    let meta: RecordMeta = serde_json::from_reader(File::open(sidecar_path(csv_path))?)?;
    let record = HomodyneRecord {
        samples,
        params: meta.params(eta_p)?,
        seed: meta.seed,
    };
    record.validate()?;
    Ok(record)
}
