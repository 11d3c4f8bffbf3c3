use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Item (or image) id → feature vector of one common width.
pub type FeatureMap = BTreeMap<String, Vec<f64>>;

#[derive(Deserialize)]
struct FeatureLine {
    item_id: String,
    features: Vec<f64>,
}

pub fn parse_features<R: BufRead>(reader: R) -> Result<FeatureMap> {
    let mut out = FeatureMap::new();
    let mut width: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: FeatureLine =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        match width {
            None => width = Some(row.features.len()),
            Some(w) if w != row.features.len() => {
                return Err(Error::Data(format!(
                    "line {}: item {:?} has {} features, expected {w}",
                    i + 1,
                    row.item_id,
                    row.features.len()
                )));
            }
            Some(_) => {}
        }
        if row.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("line {}: item {:?} has non-finite features", i + 1, row.item_id)));
        }
        out.insert(row.item_id, row.features);
    }
    Ok(out)
}

pub fn feature_ingest(path: &Path) -> Result<FeatureMap> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_features(BufReader::new(file)).map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Common width of a feature map, `None` when empty.
pub fn feature_width(map: &FeatureMap) -> Option<usize> {
    map.values().next().map(Vec::len)
}
