//! Line-delimited dataset files: one JSON object per line, preceded by a
//! header line carrying the schema kind and version.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Catalog, CatalogError, Item, Outfit, UserRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Parse { path: String, line: usize, source: serde_json::Error },
    #[error("{path}: missing header line")]
    MissingHeader { path: String },
    #[error("{path}: expected schema {expected:?} v{version}, found {found:?} v{found_version}")]
    SchemaMismatch { path: String, expected: String, version: u32, found: String, found_version: u32 },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io { path: path.display().to_string(), source }
}

pub fn write_records<T: Serialize>(path: &Path, schema: &str, records: impl IntoIterator<Item = T>) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header { schema: schema.to_string(), version: SCHEMA_VERSION };
    serde_json::to_writer(&mut w, &header).map_err(|e| DataError::Parse { path: path.display().to_string(), line: 1, source: e })?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    for (i, rec) in records.into_iter().enumerate() {
        serde_json::to_writer(&mut w, &rec).map_err(|e| DataError::Parse { path: path.display().to_string(), line: i + 2, source: e })?;
        w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_records<T: DeserializeOwned>(path: &Path, schema: &str) -> Result<Vec<T>, DataError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();
    let header_line = match lines.next() {
        Some((_, line)) => line.map_err(|e| io_err(path, e))?,
        None => return Err(DataError::MissingHeader { path: path.display().to_string() }),
    };
    let header: Header = serde_json::from_str(&header_line)
        .map_err(|e| DataError::Parse { path: path.display().to_string(), line: 1, source: e })?;
    if header.schema != schema || header.version != SCHEMA_VERSION {
        return Err(DataError::SchemaMismatch {
            path: path.display().to_string(),
            expected: schema.to_string(),
            version: SCHEMA_VERSION,
            found: header.schema,
            found_version: header.version,
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| DataError::Parse { path: path.display().to_string(), line: i + 1, source: e })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_catalog(path: &Path, items: &[Item]) -> Result<(), DataError> {
    write_records(path, "catalog", items)
}

pub fn read_catalog(path: &Path) -> Result<Catalog, DataError> {
    let items: Vec<Item> = read_records(path, "catalog")?;
    Ok(Catalog::new(items)?)
}

pub fn write_outfits(path: &Path, outfits: &[Outfit]) -> Result<(), DataError> {
    write_records(path, "outfits", outfits)
}

pub fn read_outfits(path: &Path) -> Result<Vec<Outfit>, DataError> {
    read_records(path, "outfits")
}

pub fn write_users(path: &Path, users: &[UserRecord]) -> Result<(), DataError> {
    write_records(path, "users", users)
}

pub fn read_users(path: &Path) -> Result<Vec<UserRecord>, DataError> {
    read_records(path, "users")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{Action, EventType, UserContext, IMAGE_DIM};

    fn item(id: &str) -> Item {
        Item {
            item_id: id.into(),
            category: "top".into(),
            brand: "b".into(),
            color: "red".into(),
            season: "summer".into(),
            gender: "women".into(),
            material: "m".into(),
            pattern: "p".into(),
            image_vec: vec![0.5; IMAGE_DIM],
            style_cluster: 1,
        }
    }

    #[test]
    fn catalog_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.jsonl");
        write_catalog(&path, &[item("x"), item("y")]).unwrap();
        let catalog = read_catalog(&path).unwrap();
        assert_eq!(catalog.len(), 2);
        assert_eq!(catalog.item("x").unwrap().style_cluster, 1);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("catalog.jsonl");
        write_catalog(&path, &[item("x")]).unwrap();
        let err = read_outfits(&path).unwrap_err();
        assert!(matches!(err, DataError::SchemaMismatch { .. }));
    }

    #[test]
    fn users_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("users.jsonl");
        let users = vec![UserRecord {
            user_id: "u1".into(),
            context: UserContext::ActionSequence {
                actions: vec![Action { item_id: "x".into(), event: EventType::Click, age_days: 3 }],
            },
            label_outfit: vec!["x".into(), "y".into()],
            day: 17,
        }];
        write_users(&path, &users).unwrap();
        let back = read_users(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].day, 17);
        assert!(back[0].context.actions().is_some());
    }
}
