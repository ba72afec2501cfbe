//! Flat CSV manifest: `id,ground,satellite,lat,lon,split`.
//!
//! Image paths are stored as written; relative paths resolve against the
//! manifest's directory.

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::{Error, Result};

pub const MANIFEST_HEADER: [&str; 6] = ["id", "ground", "satellite", "lat", "lon", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRecord {
    pub id: String,
    pub ground: PathBuf,
    pub satellite: PathBuf,
    pub lat: Option<f64>,
    pub lon: Option<f64>,
    pub split: Split,
}

impl PairRecord {
    pub fn position(&self) -> Option<(f64, f64)> {
        self.lat.zip(self.lon)
    }

    pub fn ground_path(&self, base: &Path) -> PathBuf {
        base.join(&self.ground)
    }

    pub fn satellite_path(&self, base: &Path) -> PathBuf {
        base.join(&self.satellite)
    }
}

fn parse_coord(field: &str, what: &str, bound: f64, line: usize) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        message: format!("bad {what} `{field}`"),
    })?;
    if !(-bound..=bound).contains(&v) {
        return Err(Error::validation(format!(
            "line {line}: {what} {v} outside [-{bound}, {bound}]"
        )));
    }
    Ok(Some(v))
}

/// Parses manifest text. When `base` is given every image path must exist
/// relative to it.
pub fn parse_manifest(text: &str, base: Option<&Path>) -> Result<Vec<PairRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut saw_header = false;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if !saw_header {
            if row.iter().ne(MANIFEST_HEADER.iter().copied()) {
                return Err(Error::Parse {
                    line,
                    message: format!("header must be `{}`", MANIFEST_HEADER.join(",")),
                });
            }
            saw_header = true;
            continue;
        }
        if row.len() != MANIFEST_HEADER.len() {
            return Err(Error::Parse {
                line,
                message: format!("expected 6 fields, got {}", row.len()),
            });
        }
        let id = row[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty id".into(),
            });
        }
        let split = row[5].parse::<Split>().map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let rec = PairRecord {
            ground: PathBuf::from(&row[1]),
            satellite: PathBuf::from(&row[2]),
            lat: parse_coord(&row[3], "lat", 90.0, line)?,
            lon: parse_coord(&row[4], "lon", 180.0, line)?,
            split,
            id,
        };
        if rec.lat.is_some() != rec.lon.is_some() {
            return Err(Error::validation(format!(
                "line {line}: lat and lon must be both present or both empty"
            )));
        }
        if !seen.insert(rec.id.clone()) {
            return Err(Error::validation(format!("line {line}: duplicate id `{}`", rec.id)));
        }
        if let Some(base) = base {
            for p in [rec.ground_path(base), rec.satellite_path(base)] {
                if !p.exists() {
                    return Err(Error::validation(format!(
                        "line {line}: missing image {}",
                        p.display()
                    )));
                }
            }
        }
        records.push(rec);
    }
    if !saw_header {
        return Err(Error::Parse {
            line: 1,
            message: "missing header".into(),
        });
    }
    Ok(records)
}

/// Loads a manifest, checking that referenced images exist.
pub fn load_manifest(path: &Path) -> Result<Vec<PairRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, Some(manifest_dir(path)))
}

/// Directory relative image paths resolve against.
pub fn manifest_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

pub fn manifest_to_string(records: &[PairRecord]) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(MANIFEST_HEADER).expect("in-memory write");
    for r in records {
        let fmt_opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            r.id.as_str(),
            &r.ground.to_string_lossy(),
            &r.satellite.to_string_lossy(),
            &fmt_opt(r.lat),
            &fmt_opt(r.lon),
            &r.split.to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("utf-8 fields")
}

pub fn write_manifest(records: &[PairRecord], path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_string(records)).map_err(|e| Error::io(path, e))
}
