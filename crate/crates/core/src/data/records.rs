use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const RATING_MIN: f64 = 1.0;
pub const RATING_MAX: f64 = 5.0;

/// One review. `rating` is absent for unlabeled target-domain corpora.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewRecord {
    pub user_id: String,
    pub item_id: String,
    pub rating: Option<f64>,
    pub review_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_feature_id: Option<String>,
}

/// Field naming of an input file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schema {
    #[default]
    Canonical,
    /// `reviewerID`, `asin`, `overall`, `reviewText`.
    Amazon,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(Schema::Canonical),
            "amazon" => Ok(Schema::Amazon),
            other => Err(Error::Config(format!("unknown schema {other:?}; use canonical or amazon"))),
        }
    }
}

struct FieldNames {
    user: &'static str,
    item: &'static str,
    rating: &'static str,
    text: &'static str,
    image: &'static str,
}

impl Schema {
    fn fields(self) -> FieldNames {
        match self {
            Schema::Canonical => FieldNames {
                user: "user_id",
                item: "item_id",
                rating: "rating",
                text: "review_text",
                image: "image_feature_id",
            },
            Schema::Amazon => FieldNames {
                user: "reviewerID",
                item: "asin",
                rating: "overall",
                text: "reviewText",
                image: "image_feature_id",
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub users: usize,
    pub items: usize,
    pub samples: usize,
}

impl CorpusStats {
    pub fn of(records: &[ReviewRecord]) -> Self {
        let users: BTreeSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
        let items: BTreeSet<&str> = records.iter().map(|r| r.item_id.as_str()).collect();
        CorpusStats { users: users.len(), items: items.len(), samples: records.len() }
    }
}

pub fn check_rating(rating: f64) -> Result<()> {
    if !(RATING_MIN..=RATING_MAX).contains(&rating) {
        return Err(Error::Data(format!("rating {rating} outside [{RATING_MIN}, {RATING_MAX}]")));
    }
    Ok(())
}

fn parse_line(line: &str, fields: &FieldNames) -> std::result::Result<ReviewRecord, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
    let obj = value.as_object().ok_or("expected a JSON object")?;
    let string = |key: &str| -> std::result::Result<String, String> {
        match obj.get(key) {
            Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            Some(Value::String(_)) => Err(format!("empty {key:?}")),
            Some(_) => Err(format!("{key:?} is not a string")),
            None => Err(format!("missing {key:?}")),
        }
    };
    let user_id = string(fields.user)?;
    let item_id = string(fields.item)?;
    let review_text = match obj.get(fields.text) {
        Some(Value::String(s)) => s.clone(),
        Some(_) => return Err(format!("{:?} is not a string", fields.text)),
        None => return Err(format!("missing {:?}", fields.text)),
    };
    let rating = match obj.get(fields.rating) {
        Some(Value::Null) => None,
        Some(v) => {
            let r = v.as_f64().ok_or_else(|| format!("{:?} is not a number", fields.rating))?;
            check_rating(r).map_err(|e| e.to_string())?;
            Some(r)
        }
        None => return Err(format!("missing {:?}", fields.rating)),
    };
    let image_feature_id = match obj.get(fields.image) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(Value::Null) | None => None,
        Some(_) => return Err(format!("{:?} is not a string", fields.image)),
    };
    Ok(ReviewRecord { user_id, item_id, rating, review_text, image_feature_id })
}

/// Parses JSON Lines; blank lines are skipped. Errors carry the 1-based
/// line number.
pub fn parse_reviews<R: BufRead>(reader: R, schema: Schema) -> Result<Vec<ReviewRecord>> {
    let fields = schema.fields();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = parse_line(&line, &fields).map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        out.push(record);
    }
    Ok(out)
}

pub fn ingest_reviews(path: &Path, schema: Schema) -> Result<(Vec<ReviewRecord>, CorpusStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = parse_reviews(BufReader::new(file), schema)
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), strip_kind(&e))))?;
    let stats = CorpusStats::of(&records);
    Ok((records, stats))
}

fn strip_kind(e: &Error) -> String {
    match e {
        Error::Data(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Writes canonical JSON Lines.
pub fn write_reviews<W: Write>(mut w: W, records: &[ReviewRecord]) -> Result<()> {
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(())
}

/// A held-out rating for an otherwise unlabeled interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SealedLabel {
    pub user_id: String,
    pub item_id: String,
    pub rating: f64,
}

pub fn parse_sealed_labels<R: BufRead>(reader: R) -> Result<Vec<SealedLabel>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let label: SealedLabel =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("line {}: {e}", i + 1)))?;
        check_rating(label.rating).map_err(|e| Error::Data(format!("line {}: {}", i + 1, strip_kind(&e))))?;
        out.push(label);
    }
    Ok(out)
}

pub fn read_sealed_labels(path: &Path) -> Result<Vec<SealedLabel>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_sealed_labels(BufReader::new(file))
        .map_err(|e| Error::Data(format!("{}: {}", path.display(), strip_kind(&e))))
}

pub fn write_sealed_labels<W: Write>(mut w: W, labels: &[SealedLabel]) -> Result<()> {
    for l in labels {
        let line = serde_json::to_string(l).map_err(|e| Error::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(())
}
