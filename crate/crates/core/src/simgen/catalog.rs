use std::path::Path;

use bytes::Bytes;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topic::{TopicError, TopicName};

/// The ten canonical device messages, byte-exact.
pub const CANONICAL_CATALOG_JSON: &str = include_str!("../../fixtures/canonical_catalog.json");

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read catalog {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed catalog: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("catalog entry {index} ({label}): invalid topic: {source}")]
    InvalidTopic {
        index: usize,
        label: String,
        source: TopicError,
    },
    #[error("catalog is empty")]
    Empty,
}

/// One device message: who sends it, where, and what.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceTemplate {
    pub label: String,
    pub topic: TopicName,
    pub payload: Bytes,
    pub retain: bool,
}

/// On-disk record. Payloads are JSON strings and round-trip byte-exact.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogRecord {
    pub label: String,
    pub topic: String,
    pub payload: String,
    #[serde(default)]
    pub retain: bool,
}

/// Ordered list of device templates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Catalog {
    entries: Vec<DeviceTemplate>,
}

impl Catalog {
    pub fn canonical() -> Self {
        Catalog::from_json(CANONICAL_CATALOG_JSON).expect("embedded catalog is valid")
    }

    pub fn from_json(json: &str) -> Result<Self, CatalogError> {
        let records: Vec<CatalogRecord> = serde_json::from_str(json)?;
        Catalog::from_records(records)
    }

    pub fn from_records(records: Vec<CatalogRecord>) -> Result<Self, CatalogError> {
        if records.is_empty() {
            return Err(CatalogError::Empty);
        }
        let entries = records
            .into_iter()
            .enumerate()
            .map(|(index, r)| {
                let topic =
                    TopicName::parse(r.topic).map_err(|source| CatalogError::InvalidTopic {
                        index,
                        label: r.label.clone(),
                        source,
                    })?;
                Ok(DeviceTemplate {
                    label: r.label,
                    topic,
                    payload: Bytes::from(r.payload),
                    retain: r.retain,
                })
            })
            .collect::<Result<_, CatalogError>>()?;
        Ok(Catalog { entries })
    }

    pub fn to_records(&self) -> Vec<CatalogRecord> {
        self.entries
            .iter()
            .map(|t| CatalogRecord {
                label: t.label.clone(),
                topic: t.topic.to_string(),
                payload: String::from_utf8_lossy(&t.payload).into_owned(),
                retain: t.retain,
            })
            .collect()
    }

    pub fn entries(&self) -> &[DeviceTemplate] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, i: usize) -> &DeviceTemplate {
        &self.entries[i]
    }

    pub fn min_payload_len(&self) -> usize {
        self.entries
            .iter()
            .map(|t| t.payload.len())
            .min()
            .unwrap_or(0)
    }

    pub fn max_payload_len(&self) -> usize {
        self.entries
            .iter()
            .map(|t| t.payload.len())
            .max()
            .unwrap_or(0)
    }
}

/// Loads a catalog file, or the embedded canonical catalog when `source` is `None`.
pub fn load_catalog(source: Option<&Path>) -> Result<Catalog, CatalogError> {
    match source {
        None => Ok(Catalog::canonical()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| CatalogError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Catalog::from_json(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_has_ten_devices() {
        let c = load_catalog(None).unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.entries().iter().all(|t| !t.retain));
    }

    #[test]
    fn canonical_payload_bounds() {
        let c = Catalog::canonical();
        assert_eq!(c.min_payload_len(), 19);
        assert_eq!(c.get(8).payload, Bytes::from_static(b"MOVE_TO_TARGET#29:3"));
        // longest entry is the second CO2 air-quality JSON state
        assert_eq!(c.max_payload_len(), 126);
        assert_eq!(c.get(4).payload.len(), 126);
    }

    #[test]
    fn canonical_order_and_exact_bytes() {
        let c = Catalog::canonical();
        assert_eq!(
            c.get(0).topic.as_str(),
            "s1t/moskevka/arrow/door/door_01_n/r1s0124b002342cddc/state"
        );
        assert_eq!(
            c.get(0).payload,
            Bytes::from_static(
                br#"{"battery":"99.5", "battery_low": "false", "contact": "false", "linkquality": "22.62", "temp": "false", "voltage": "952.32"}"#
            )
        );
        assert_eq!(c.get(6).topic.levels().count(), 9);
        assert_eq!(
            c.get(9).payload,
            Bytes::from_static(b"650891DEDC52;0L_MAY;Moving;[20, 13]2021-08-03 at 17:04:28")
        );
    }

    #[test]
    fn records_round_trip() {
        let c = Catalog::canonical();
        let json = serde_json::to_string(&c.to_records()).unwrap();
        assert_eq!(Catalog::from_json(&json).unwrap(), c);
    }

    #[test]
    fn invalid_inputs() {
        assert!(matches!(Catalog::from_json("[]"), Err(CatalogError::Empty)));
        assert!(matches!(
            Catalog::from_json("{"),
            Err(CatalogError::Malformed(_))
        ));
        let bad = r#"[{"label":"x","topic":"a/+/b","payload":"p"}]"#;
        assert!(matches!(
            Catalog::from_json(bad),
            Err(CatalogError::InvalidTopic { index: 0, .. })
        ));
        let missing = std::path::Path::new("/nonexistent/catalog.json");
        assert!(matches!(
            load_catalog(Some(missing)),
            Err(CatalogError::Io { .. })
        ));
    }
}
