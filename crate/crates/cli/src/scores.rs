//! Reading per-dataset scores for `rank`.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::Value;
use vpllr::featurestore::read_gains;

/// `(dataset, score)` pairs from one file, in file order.
pub fn read_scores(path: &Path) -> Result<Vec<(String, f64)>> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let first = bytes.iter().find(|b| !b.is_ascii_whitespace()).copied();
    let pairs = if matches!(first, Some(b'{' | b'[')) {
        let value: Value = serde_json::from_slice(&bytes).with_context(|| format!("{}", path.display()))?;
        from_json(&value)
    } else {
        from_csv(&bytes)
    };
    pairs.with_context(|| format!("cannot read scores from {}", path.display()))
}

fn from_json(value: &Value) -> Result<Vec<(String, f64)>> {
    match value {
        Value::Array(items) => items.iter().map(report).collect(),
        Value::Object(map) if map.contains_key("result") => from_json(&map["result"]),
        Value::Object(_) => Ok(vec![report(value)?]),
        _ => bail!("expected a report, a list of reports or a tool envelope"),
    }
}

fn report(value: &Value) -> Result<(String, f64)> {
    let name = value
        .get("dataset")
        .and_then(Value::as_str)
        .ok_or_else(|| anyhow!("report without a dataset name"))?;
    let llr = value
        .get("llr")
        .and_then(Value::as_f64)
        .ok_or_else(|| anyhow!("report for {name:?} has no numeric llr"))?;
    Ok((name.to_owned(), llr))
}

fn from_csv(bytes: &[u8]) -> Result<Vec<(String, f64)>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if headers == ["dataset", "lp_acc", "vp_acc"] {
        let gains = read_gains(bytes)?;
        return Ok(gains.into_iter().map(|g| (g.dataset_name, g.gain)).collect());
    }
    let name_col = headers
        .iter()
        .position(|h| h == "dataset")
        .ok_or_else(|| anyhow!("no dataset column"))?;
    let value_col = headers
        .iter()
        .position(|h| h == "llr" || h == "score")
        .ok_or_else(|| anyhow!("no llr or score column"))?;
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            let name = rec.get(name_col).unwrap_or_default().to_owned();
            let raw = rec.get(value_col).unwrap_or_default();
            let v: f64 = raw
                .parse()
                .map_err(|_| anyhow!("score {raw:?} for {name:?} is not a number"))?;
            Ok((name, v))
        })
        .collect()
}
