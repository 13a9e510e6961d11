//! System schema, ontology and entity database loaders.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::state::SlotName;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed schema: {0}")]
    SchemaParse(String),
    #[error("malformed ontology: {0}")]
    OntologyParse(String),
    #[error("malformed entity database: {0}")]
    DatabaseParse(String),
}

fn read(path: &Path) -> Result<String, SchemaError> {
    fs::read_to_string(path).map_err(|source| SchemaError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueKind {
    Text,
    Time,
    Boolean,
    Integer,
    Location,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    #[serde(default)]
    pub categorical: bool,
    #[serde(default, rename = "values", skip_serializing_if = "Option::is_none")]
    pub allowed_values: Option<Vec<String>>,
    #[serde(rename = "kind", default = "default_kind")]
    pub value_kind: ValueKind,
}

fn default_kind() -> ValueKind {
    ValueKind::Text
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainDef {
    pub name: String,
    pub slots: Vec<SlotDef>,
}

/// Domains and informable slots, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanonicalSchema {
    pub domains: Vec<DomainDef>,
}

impl CanonicalSchema {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        if text.trim().is_empty() {
            return Err(SchemaError::SchemaParse("empty schema".into()));
        }
        let schema: CanonicalSchema =
            serde_json::from_str(text).map_err(|e| SchemaError::SchemaParse(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        let mut domains = BTreeSet::new();
        for d in &self.domains {
            if !domains.insert(d.name.as_str()) {
                return Err(SchemaError::SchemaParse(format!("duplicate domain {}", d.name)));
            }
            let mut slots = BTreeSet::new();
            for s in &d.slots {
                SlotName::new(&d.name, &s.name)
                    .map_err(|e| SchemaError::SchemaParse(e.to_string()))?;
                if !slots.insert(s.name.as_str()) {
                    return Err(SchemaError::SchemaParse(format!(
                        "duplicate slot {}-{}",
                        d.name, s.name
                    )));
                }
                if s.categorical && s.allowed_values.as_ref().is_none_or(|v| v.is_empty()) {
                    return Err(SchemaError::SchemaParse(format!(
                        "categorical slot {}-{} has no values",
                        d.name, s.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn domain(&self, name: &str) -> Option<&DomainDef> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn slot(&self, slot: &SlotName) -> Option<&SlotDef> {
        self.domain(slot.domain())?
            .slots
            .iter()
            .find(|s| s.name == slot.slot())
    }

    pub fn contains(&self, slot: &SlotName) -> bool {
        self.slot(slot).is_some()
    }

    pub fn is_categorical(&self, slot: &SlotName) -> bool {
        self.slot(slot).is_some_and(|s| s.categorical)
    }

    /// Every slot, in schema order.
    pub fn slot_names(&self) -> Vec<SlotName> {
        self.domains
            .iter()
            .flat_map(|d| {
                d.slots
                    .iter()
                    .filter_map(move |s| SlotName::new(&d.name, &s.name).ok())
            })
            .collect()
    }
}

pub fn load_schema(path: &Path) -> Result<CanonicalSchema, SchemaError> {
    CanonicalSchema::from_json(&read(path)?)
}

/// Observed surface forms per slot.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Ontology {
    pub surface_forms: BTreeMap<SlotName, BTreeSet<String>>,
}

impl Ontology {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let ont: Ontology =
            serde_json::from_str(text).map_err(|e| SchemaError::OntologyParse(e.to_string()))?;
        if let Some((slot, _)) = ont.surface_forms.iter().find(|(_, v)| v.is_empty()) {
            return Err(SchemaError::OntologyParse(format!("no surface forms for {slot}")));
        }
        Ok(ont)
    }

    pub fn forms(&self, slot: &SlotName) -> impl Iterator<Item = &str> {
        self.surface_forms
            .get(slot)
            .into_iter()
            .flat_map(|s| s.iter().map(String::as_str))
    }
}

pub fn load_ontology(path: &Path) -> Result<Ontology, SchemaError> {
    Ontology::from_json(&read(path)?)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct EntityRecord {
    pub name: String,
    pub address: Option<String>,
    /// Remaining attributes, stringified.
    pub attrs: BTreeMap<String, String>,
}

impl EntityRecord {
    /// Value of an attribute by slot name; `name` and `address` included.
    pub fn attr(&self, key: &str) -> Option<&str> {
        match key {
            "name" => Some(&self.name),
            "address" => self.address.as_deref(),
            _ => self.attrs.get(key).map(String::as_str),
        }
    }
}

fn record_from_json(domain: &str, v: serde_json::Value) -> Result<EntityRecord, SchemaError> {
    let serde_json::Value::Object(map) = v else {
        return Err(SchemaError::DatabaseParse(format!("{domain}: record is not an object")));
    };
    let mut name = None;
    let mut address = None;
    let mut attrs = BTreeMap::new();
    for (k, v) in map {
        let text = match v {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            serde_json::Value::Bool(b) => if b { "yes" } else { "no" }.to_string(),
            _ => continue,
        };
        match k.as_str() {
            "name" => name = Some(text),
            "address" => address = Some(text),
            _ => {
                attrs.insert(k, text);
            }
        }
    }
    match name {
        Some(name) if !name.trim().is_empty() => Ok(EntityRecord {
            name,
            address,
            attrs,
        }),
        _ => Err(SchemaError::DatabaseParse(format!("{domain}: record without a name"))),
    }
}

/// Entity records keyed by domain.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EntityDatabase {
    pub domains: BTreeMap<String, Vec<EntityRecord>>,
}

impl EntityDatabase {
    /// Parses `{"domain": [{name, address?, ...}], ...}`.
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        let raw: BTreeMap<String, Vec<serde_json::Value>> =
            serde_json::from_str(text).map_err(|e| SchemaError::DatabaseParse(e.to_string()))?;
        let mut db = EntityDatabase::default();
        for (domain, records) in raw {
            let parsed = records
                .into_iter()
                .map(|r| record_from_json(&domain, r))
                .collect::<Result<Vec<_>, _>>()?;
            db.domains.insert(domain, parsed);
        }
        Ok(db)
    }

    pub fn records(&self, domain: &str) -> &[EntityRecord] {
        self.domains.get(domain).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn all_records(&self) -> impl Iterator<Item = &EntityRecord> {
        self.domains.values().flatten()
    }
}

/// Loads a database from a single JSON file keyed by domain, or from a
/// directory holding one `<domain>.json` array per domain.
pub fn load_database(path: &Path) -> Result<EntityDatabase, SchemaError> {
    if !path.is_dir() {
        return EntityDatabase::from_json(&read(path)?);
    }
    let mut entries: Vec<_> = fs::read_dir(path)
        .map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut db = EntityDatabase::default();
    for file in entries {
        let domain = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let raw: Vec<serde_json::Value> = serde_json::from_str(&read(&file)?)
            .map_err(|e| SchemaError::DatabaseParse(format!("{}: {e}", file.display())))?;
        let records = raw
            .into_iter()
            .map(|r| record_from_json(&domain, r))
            .collect::<Result<Vec<_>, _>>()?;
        db.domains.insert(domain, records);
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{"domains":[{"name":"hotel","slots":[
        {"name":"area","categorical":true,"values":["east","west"],"kind":"text"},
        {"name":"name","categorical":false,"kind":"text"}]}]}"#;

    #[test]
    fn parses_small_schema() {
        let s = CanonicalSchema::from_json(SMALL).unwrap();
        assert_eq!(s.domains.len(), 1);
        assert!(s.is_categorical(&"hotel-area".parse().unwrap()));
        assert!(!s.is_categorical(&"hotel-name".parse().unwrap()));
        assert!(!s.contains(&"hotel-stars".parse().unwrap()));
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(
            CanonicalSchema::from_json("  \n"),
            Err(SchemaError::SchemaParse(_))
        ));
    }

    #[test]
    fn duplicate_slot_is_rejected() {
        let text = r#"{"domains":[{"name":"hotel","slots":[
            {"name":"area","kind":"text"},{"name":"area","kind":"text"}]}]}"#;
        assert!(matches!(
            CanonicalSchema::from_json(text),
            Err(SchemaError::SchemaParse(_))
        ));
    }

    #[test]
    fn categorical_without_values_is_rejected() {
        let text = r#"{"domains":[{"name":"hotel","slots":[
            {"name":"area","categorical":true,"kind":"text"}]}]}"#;
        assert!(CanonicalSchema::from_json(text).is_err());
    }

    #[test]
    fn database_records() {
        let db = EntityDatabase::from_json(
            r#"{"hotel":[{"name":"acorn guest house","address":"154 chesterton road","stars":4,"parking":true}]}"#,
        )
        .unwrap();
        let r = &db.records("hotel")[0];
        assert_eq!(r.attr("stars"), Some("4"));
        assert_eq!(r.attr("parking"), Some("yes"));
        assert_eq!(r.attr("address"), Some("154 chesterton road"));
        assert!(EntityDatabase::from_json(r#"{"hotel":[{"area":"east"}]}"#).is_err());
    }
}
