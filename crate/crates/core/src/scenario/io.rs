//! Scenario files.
//!
//! CSV with header
//! `id,lat,lon,throughput_mbps,users,rent,key_area,complaints_text,marketer_text,region_text,selected`
//! or a JSON array of objects with the same field names. Rows with
//! `selected=true` form the actually-built set. A sidecar `<stem>.meta.json`
//! carries what the row schema cannot: `select_count`, the planted optimum
//! and the projection anchor.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CandidateSite, Scenario};
use crate::error::{Error, Result};
use crate::geo::{BBox, GeoAnchor};

pub const CANONICAL_COLUMNS: [&str; 11] = [
    "id",
    "lat",
    "lon",
    "throughput_mbps",
    "users",
    "rent",
    "key_area",
    "complaints_text",
    "marketer_text",
    "region_text",
    "selected",
];

const REQUIRED_COLUMNS: [&str; 6] = ["id", "lat", "lon", "throughput_mbps", "users", "rent"];

/// Maps canonical field names to the column names of a third-party export.
/// Fields absent from the map are looked up under their canonical name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ColumnMapping(pub HashMap<String, String>);

impl ColumnMapping {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mapping: Self = serde_json::from_str(&text)?;
        for key in mapping.0.keys() {
            if !CANONICAL_COLUMNS.contains(&key.as_str()) {
                return Err(Error::Schema(format!(
                    "column mapping names unknown field '{key}'"
                )));
            }
        }
        Ok(mapping)
    }

    pub fn source_for<'a>(&'a self, canonical: &'a str) -> &'a str {
        self.0.get(canonical).map(String::as_str).unwrap_or(canonical)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    select_count: usize,
    anchor: GeoAnchor,
    #[serde(default)]
    planted_optimum: Option<BTreeSet<String>>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn is_json(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// One record with canonical keys and raw string values.
type Record = HashMap<&'static str, String>;

fn parse_bool(raw: &str, row: usize, field: &str) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "" | "false" | "0" | "no" | "n" => Ok(false),
        "true" | "1" | "yes" | "y" => Ok(true),
        other => Err(Error::Schema(format!(
            "row {row}: invalid boolean '{other}' for {field}"
        ))),
    }
}

fn parse_f64(raw: &str, row: usize, field: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Schema(format!("row {row}: invalid number '{raw}' for {field}")))
}

fn parse_count(raw: &str, row: usize, field: &str) -> Result<u64> {
    let v = parse_f64(raw, row, field)?;
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Schema(format!(
            "row {row}: {field} must be a non-negative integer, got '{raw}'"
        )));
    }
    Ok(v as u64)
}

fn read_csv_records(path: &Path, mapping: &ColumnMapping) -> Result<Vec<Record>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::Headers)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut columns: Vec<(&'static str, usize)> = Vec::new();
    for canonical in CANONICAL_COLUMNS {
        let source = mapping.source_for(canonical);
        match headers.iter().position(|h| h == source) {
            Some(idx) => columns.push((canonical, idx)),
            None if REQUIRED_COLUMNS.contains(&canonical) => {
                return Err(Error::MissingColumn {
                    column: canonical.to_string(),
                })
            }
            None => {}
        }
    }
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        out.push(
            columns
                .iter()
                .map(|&(name, idx)| (name, row.get(idx).unwrap_or("").to_string()))
                .collect(),
        );
    }
    Ok(out)
}

fn read_json_records(path: &Path, mapping: &ColumnMapping) -> Result<Vec<Record>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: Value = serde_json::from_str(&text)?;
    let Value::Array(rows) = value else {
        return Err(Error::Schema("expected a JSON array of site objects".into()));
    };
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let Value::Object(obj) = row else {
            return Err(Error::Schema(format!("row {}: expected an object", i + 1)));
        };
        let mut record = Record::new();
        for canonical in CANONICAL_COLUMNS {
            match obj.get(mapping.source_for(canonical)) {
                Some(Value::String(s)) => {
                    record.insert(canonical, s.clone());
                }
                Some(Value::Null) | None => {
                    if REQUIRED_COLUMNS.contains(&canonical) {
                        return Err(Error::MissingColumn {
                            column: canonical.to_string(),
                        });
                    }
                }
                Some(other) => {
                    record.insert(canonical, other.to_string());
                }
            }
        }
        out.push(record);
    }
    Ok(out)
}

/// Reads a scenario file (CSV, or JSON by `.json` extension).
///
/// `select_count` overrides the sidecar and the number of `selected` rows,
/// which are otherwise used in that order.
pub fn load_scenario(
    path: &Path,
    mapping: &ColumnMapping,
    select_count: Option<usize>,
) -> Result<Scenario> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "scenario file not found"),
        ));
    }
    let records = if is_json(path) {
        read_json_records(path, mapping)?
    } else {
        read_csv_records(path, mapping)?
    };
    let sidecar: Option<Sidecar> = {
        let p = sidecar_path(path);
        if p.exists() {
            let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        }
    };

    struct Parsed {
        lat: f64,
        lon: f64,
        selected: bool,
        site: CandidateSite,
    }
    let field = |r: &Record, name: &str| r.get(name).cloned().unwrap_or_default();
    let mut parsed = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let row = i + 1;
        parsed.push(Parsed {
            lat: parse_f64(&field(r, "lat"), row, "lat")?,
            lon: parse_f64(&field(r, "lon"), row, "lon")?,
            selected: parse_bool(&field(r, "selected"), row, "selected")?,
            site: CandidateSite {
                id: field(r, "id").trim().to_string(),
                position: Default::default(),
                throughput: parse_f64(&field(r, "throughput_mbps"), row, "throughput_mbps")?,
                users: parse_count(&field(r, "users"), row, "users")?,
                rent: parse_f64(&field(r, "rent"), row, "rent")?,
                key_area: parse_bool(&field(r, "key_area"), row, "key_area")?,
                complaints_text: field(r, "complaints_text"),
                marketer_text: field(r, "marketer_text"),
                region_text: field(r, "region_text"),
            },
        });
    }
    if parsed.is_empty() {
        return Err(Error::Validation("scenario file contains no sites".into()));
    }

    let anchor = match &sidecar {
        Some(meta) => meta.anchor,
        None => GeoAnchor::centroid_of(parsed.iter().map(|p| (p.lat, p.lon)))
            .expect("non-empty records"),
    };
    let built: BTreeSet<String> = parsed
        .iter()
        .filter(|p| p.selected)
        .map(|p| p.site.id.clone())
        .collect();
    let k = select_count
        .or(sidecar.as_ref().map(|m| m.select_count))
        .or((!built.is_empty()).then_some(built.len()))
        .ok_or_else(|| {
            Error::Precondition(
                "select_count unknown: no sidecar, no selected rows and no override".into(),
            )
        })?;

    let sites: Vec<CandidateSite> = parsed
        .into_iter()
        .map(|p| CandidateSite {
            position: anchor.project(p.lat, p.lon),
            ..p.site
        })
        .collect();
    let bbox = BBox::from_points(sites.iter().map(|s| &s.position));
    Scenario {
        sites,
        select_count: k,
        bbox,
        anchor,
        planted_optimum: sidecar.and_then(|m| m.planted_optimum),
        actual_built: (!built.is_empty()).then_some(built),
    }
    .validated()
}

/// Writes a scenario in the documented row schema plus its sidecar.
pub fn save_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    let built = scenario.actual_built.clone().unwrap_or_default();
    let rows = scenario.sites.iter().map(|s| {
        let (lat, lon) = scenario.anchor.unproject(&s.position);
        (s, lat, lon, built.contains(&s.id))
    });
    if is_json(path) {
        let array: Vec<Value> = rows
            .map(|(s, lat, lon, selected)| {
                serde_json::json!({
                    "id": s.id,
                    "lat": lat,
                    "lon": lon,
                    "throughput_mbps": s.throughput,
                    "users": s.users,
                    "rent": s.rent,
                    "key_area": s.key_area,
                    "complaints_text": s.complaints_text,
                    "marketer_text": s.marketer_text,
                    "region_text": s.region_text,
                    "selected": selected,
                })
            })
            .collect();
        let text = serde_json::to_string_pretty(&array)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    } else {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(CANONICAL_COLUMNS)?;
        for (s, lat, lon, selected) in rows {
            w.write_record([
                s.id.clone(),
                lat.to_string(),
                lon.to_string(),
                s.throughput.to_string(),
                s.users.to_string(),
                s.rent.to_string(),
                s.key_area.to_string(),
                s.complaints_text.clone(),
                s.marketer_text.clone(),
                s.region_text.clone(),
                selected.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    let meta = Sidecar {
        select_count: scenario.select_count,
        anchor: scenario.anchor,
        planted_optimum: scenario.planted_optimum.clone(),
    };
    let meta_path = sidecar_path(path);
    fs::write(&meta_path, serde_json::to_string_pretty(&meta)? + "\n")
        .map_err(|e| Error::io(&meta_path, e))
}
