//! Versioned JSON artifacts with reproducible number formatting.
//!
//! Every document carries `schema_version` at the top level. Keys come out
//! sorted and every float is written with 17 significant digits, so equal
//! inputs always give byte-identical files. Files are written to a sibling
//! temporary and renamed into place.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::ingest::{ClassId, ImageId, ImageRelation, RelationFlag};
use crate::rankcore::rank_vector;
use crate::stability::{StabilityEntry, StabilityMatrix};
use crate::trainer::TrainReport;

pub const SCHEMA_VERSION: u64 = 1;

/// `v` with 17 significant digits in scientific notation.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

struct Sig17<F>(F);

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W $(, $arg: $ty)*) -> io::Result<()> {
                self.0.$name(w $(, $arg)*)
            }
        )*
    };
}

impl<F: Formatter> Formatter for Sig17<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(format_f64(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(value))
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

fn versioned<T: Serialize>(value: &T) -> Result<Value> {
    let body = serde_json::to_value(value).map_err(|e| Error::Schema(e.to_string()))?;
    let mut map = match body {
        Value::Object(map) => map,
        _ => return Err(Error::Schema("artifacts must be JSON objects".into())),
    };
    map.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    Ok(Value::Object(map))
}

fn serialize_with<F: Formatter>(value: &Value, formatter: F) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Sig17(formatter));
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Schema(e.to_string()))?;
    Ok(out)
}

/// Pretty-printed versioned document, newline terminated.
pub fn to_document(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut out = serialize_with(&versioned(value)?, PrettyFormatter::new())?;
    out.push(b'\n');
    Ok(out)
}

/// One versioned record per line.
pub fn to_json_lines<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        out.extend(serialize_with(&versioned(r)?, CompactFormatter)?);
        out.push(b'\n');
    }
    Ok(out)
}

fn check_version(mut map: Map<String, Value>, origin: &str) -> Result<Value> {
    match map.remove("schema_version") {
        None => Err(Error::Schema(format!("{origin}: missing schema_version"))),
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION) => Ok(Value::Object(map)),
        Some(v) => Err(Error::Schema(format!(
            "{origin}: unsupported schema_version {v} (expected {SCHEMA_VERSION})"
        ))),
    }
}

/// Parses a versioned document, rejecting a missing or unknown version.
pub fn from_document<T: DeserializeOwned>(text: &str, origin: &str) -> Result<T> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| Error::Schema(format!("{origin}: {e}")))?;
    let Value::Object(map) = value else {
        return Err(Error::Schema(format!("{origin}: expected a JSON object")));
    };
    let body = check_version(map, origin)?;
    serde_json::from_value(body).map_err(|e| Error::Schema(format!("{origin}: {e}")))
}

pub fn from_json_lines<T: DeserializeOwned>(text: &str, origin: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| from_document(line, &format!("{origin} line {}", i + 1)))
        .collect()
}

pub fn read_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_document(&text, &path.display().to_string())
}

/// Writes `bytes` to a temporary file next to `path` and renames it over
/// `path`, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file()
        .sync_all()
        .map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// One image's relation together with the fractional ranks of its
/// foreground classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub image_id: ImageId,
    pub background_gray: f64,
    pub class_grays: BTreeMap<ClassId, f64>,
    #[serde(default)]
    pub flags: Vec<RelationFlag>,
    pub ranks: BTreeMap<ClassId, f64>,
}

impl RelationRecord {
    pub fn new(relation: ImageRelation) -> Result<Self> {
        let fg = relation.foreground();
        let ranks = if fg.is_empty() {
            BTreeMap::new()
        } else {
            let r = rank_vector(&fg)?;
            r.class_ids.into_iter().zip(r.ranks).collect()
        };
        Ok(Self {
            image_id: relation.image_id,
            background_gray: relation.background_gray,
            class_grays: relation.class_grays,
            flags: relation.flags,
            ranks,
        })
    }

    pub fn relation(&self) -> ImageRelation {
        ImageRelation {
            image_id: self.image_id,
            background_gray: self.background_gray,
            class_grays: self.class_grays.clone(),
            flags: self.flags.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractionDocument {
    pub relations: Vec<RelationRecord>,
    /// Images without any usable annotation.
    #[serde(default)]
    pub skipped: Vec<ImageId>,
}

impl ExtractionDocument {
    pub fn relations(&self) -> Vec<ImageRelation> {
        self.relations
            .iter()
            .map(RelationRecord::relation)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityDocument {
    pub class_ids: Vec<ClassId>,
    pub entries: Vec<StabilityEntry>,
}

impl From<&StabilityMatrix> for StabilityDocument {
    fn from(m: &StabilityMatrix) -> Self {
        Self {
            class_ids: m.class_ids().to_vec(),
            entries: m.entries(),
        }
    }
}

impl StabilityDocument {
    pub fn to_matrix(&self) -> Result<StabilityMatrix> {
        StabilityMatrix::from_entries(self.class_ids.clone(), &self.entries)
    }
}

/// `epoch,l_det,l_knowledge,mean_w_rho,mean_w_s` rows.
pub fn train_csv(report: &TrainReport) -> String {
    let mut out = String::from("epoch,l_det,l_knowledge,mean_w_rho,mean_w_s\n");
    for e in &report.epochs {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch,
            format_f64(e.l_det),
            format_f64(e.l_knowledge),
            format_f64(e.mean_w_rho),
            format_f64(e.mean_w_s)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Doc {
        value: f64,
        name: String,
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(format_f64(0.1), "1.0000000000000001e-1");
        for v in [
            0.1,
            1.0 / 3.0,
            2.0f64.sqrt(),
            1e-300,
            6.02e23,
            -0.5945348918918354,
        ] {
            assert_eq!(format_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn documents_round_trip() {
        let doc = Doc {
            value: 1.0 / 3.0,
            name: "x".into(),
        };
        let bytes = to_document(&doc).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.contains("\"schema_version\": 1"));
        assert!(text.contains("3.3333333333333331e-1"));
        assert_eq!(from_document::<Doc>(&text, "doc").unwrap(), doc);
    }

    #[test]
    fn missing_or_unknown_version_is_rejected() {
        assert!(matches!(
            from_document::<Doc>(r#"{"value": 1.0, "name": "x"}"#, "doc"),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            from_document::<Doc>(r#"{"schema_version": 2, "value": 1.0, "name": "x"}"#, "doc"),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn json_lines_round_trip() {
        let docs = vec![
            Doc {
                value: 0.25,
                name: "a".into(),
            },
            Doc {
                value: -2.0,
                name: "b".into(),
            },
        ];
        let bytes = to_json_lines(&docs).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(from_json_lines::<Doc>(&text, "lines").unwrap(), docs);
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn relation_records_round_trip() {
        let rel = ImageRelation::new(
            ImageId(4),
            0.2,
            [(ClassId(1), 0.5), (ClassId(2), 0.5), (ClassId(3), 0.1)].into(),
        );
        let doc = ExtractionDocument {
            relations: vec![RelationRecord::new(rel.clone()).unwrap()],
            skipped: vec![ImageId(9)],
        };
        assert_eq!(doc.relations[0].ranks[&ClassId(1)], 2.5);
        let text = String::from_utf8(to_document(&doc).unwrap()).unwrap();
        let back: ExtractionDocument = from_document(&text, "x").unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.relations(), vec![rel]);
    }
}
