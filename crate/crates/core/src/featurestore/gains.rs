//! Per-dataset accuracy gains of visual prompting over linear probing.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainRecord {
    pub dataset_name: String,
    pub lp_acc: f64,
    pub vp_acc: f64,
    /// `vp_acc - lp_acc`, in percentage points.
    pub gain: f64,
}

impl GainRecord {
    pub fn new(dataset_name: impl Into<String>, lp_acc: f64, vp_acc: f64) -> Result<Self> {
        for (what, v) in [("lp_acc", lp_acc), ("vp_acc", vp_acc)] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "{what} = {v} is not a percentage"
                )));
            }
        }
        Ok(GainRecord {
            dataset_name: dataset_name.into(),
            lp_acc,
            vp_acc,
            gain: vp_acc - lp_acc,
        })
    }
}

#[derive(Deserialize, Serialize)]
struct GainRow {
    dataset: String,
    lp_acc: f64,
    vp_acc: f64,
}

/// Reads a `dataset,lp_acc,vp_acc` CSV. Dataset names must be unique.
pub fn read_gains<R: Read>(reader: R) -> Result<Vec<GainRecord>> {
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = csv.headers().map_err(|e| Error::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["dataset", "lp_acc", "vp_acc"] {
        return Err(Error::Csv(format!(
            "expected header dataset,lp_acc,vp_acc, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in csv.deserialize::<GainRow>() {
        let row = row.map_err(|e| Error::Csv(e.to_string()))?;
        if !seen.insert(row.dataset.clone()) {
            return Err(Error::Csv(format!("duplicate dataset {:?}", row.dataset)));
        }
        out.push(GainRecord::new(row.dataset, row.lp_acc, row.vp_acc)?);
    }
    Ok(out)
}

pub fn write_gains<W: Write>(writer: W, records: &[GainRecord]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    for r in records {
        csv.serialize(GainRow {
            dataset: r.dataset_name.clone(),
            lp_acc: r.lp_acc,
            vp_acc: r.vp_acc,
        })
        .map_err(|e| Error::Csv(e.to_string()))?;
    }
    csv.flush().map_err(|e| Error::Csv(e.to_string()))
}
