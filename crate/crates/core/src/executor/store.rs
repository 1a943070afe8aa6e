//! Append-only JSON-lines measurement log.
//!
//! Each line is one [`Record`]:
//!
//! ```text
//! {"space":"<fingerprint>","values":[..],"execution_time":..,"computer_time":..,
//!  "component_times":[..],"nodes":..,"cores_per_node":..,"provenance":"synthetic"}
//! ```
//!
//! History files use the same format.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Measurement, Provenance, Status};
use crate::error::{Error, Result};
use crate::space::Configuration;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub space: String,
    pub values: Vec<f64>,
    pub execution_time: f64,
    pub computer_time: f64,
    #[serde(default)]
    pub component_times: Vec<f64>,
    #[serde(default)]
    pub nodes: u32,
    #[serde(default)]
    pub cores_per_node: u32,
    pub provenance: Provenance,
}

impl Record {
    pub fn from_measurement(space: &str, m: &Measurement) -> Result<Self> {
        if !m.is_ok() {
            return Err(Error::Measurement(
                "failed measurements are not stored".into(),
            ));
        }
        Ok(Self {
            space: space.to_string(),
            values: m.configuration.values().to_vec(),
            execution_time: m.execution_time,
            computer_time: m.computer_time,
            component_times: m.component_times.clone(),
            nodes: m.nodes,
            cores_per_node: m.cores_per_node,
            provenance: m.provenance,
        })
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.values.clone())
    }

    pub fn to_measurement(&self) -> Measurement {
        Measurement {
            configuration: self.configuration(),
            component_times: self.component_times.clone(),
            execution_time: self.execution_time,
            computer_time: self.computer_time,
            nodes: self.nodes,
            cores_per_node: self.cores_per_node,
            status: Status::Ok,
            provenance: self.provenance,
            diagnostic: None,
        }
    }

    fn valid(&self) -> bool {
        self.execution_time.is_finite()
            && self.execution_time > 0.0
            && self.computer_time.is_finite()
            && self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AppendOutcome {
    Inserted(usize),
    Existing(usize),
}

type Key = (String, Configuration);

#[derive(Debug, Default)]
pub struct MeasurementStore {
    path: Option<PathBuf>,
    log: Vec<Record>,
    index: HashMap<Key, usize>,
    skipped: usize,
}

fn parse_lines(reader: impl BufRead, origin: &Path) -> Result<(Vec<Record>, usize)> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Record>(&line) {
            Ok(r) if r.valid() => records.push(r),
            Ok(_) => {
                skipped += 1;
                log::warn!("{}:{}: invalid record skipped", origin.display(), n + 1);
            }
            Err(e) => {
                skipped += 1;
                log::warn!(
                    "{}:{}: corrupt record skipped: {e}",
                    origin.display(),
                    n + 1
                );
            }
        }
    }
    if skipped > 0 {
        log::warn!("{}: {skipped} line(s) skipped", origin.display());
    }
    Ok((records, skipped))
}

impl MeasurementStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Open (creating if needed) a log file and replay it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut store = Self {
            path: Some(path.to_path_buf()),
            ..Self::default()
        };
        if path.exists() {
            let f = File::open(path).map_err(|e| Error::io(path, e))?;
            let (records, skipped) = parse_lines(BufReader::new(f), path)?;
            store.skipped = skipped;
            for r in records {
                store.insert_indexed(r);
            }
        }
        Ok(store)
    }

    fn insert_indexed(&mut self, r: Record) -> usize {
        let i = self.log.len();
        self.index.insert((r.space.clone(), r.configuration()), i);
        self.log.push(r);
        i
    }

    fn persist(&self, r: &Record) -> Result<()> {
        if let Some(path) = &self.path {
            let mut f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let line = serde_json::to_string(r).map_err(|e| Error::json("record", e))?;
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// Append unless the key already exists; `force` appends a new record
    /// which then shadows the older one in lookups.
    pub fn append(&mut self, record: Record, force: bool) -> Result<AppendOutcome> {
        if !record.valid() {
            return Err(Error::Measurement(
                "record has non-finite or non-positive values".into(),
            ));
        }
        let key = (record.space.clone(), record.configuration());
        if !force {
            if let Some(&i) = self.index.get(&key) {
                return Ok(AppendOutcome::Existing(i));
            }
        }
        self.persist(&record)?;
        Ok(AppendOutcome::Inserted(self.insert_indexed(record)))
    }

    pub fn lookup(&self, space: &str, c: &Configuration) -> Option<&Record> {
        self.index
            .get(&(space.to_string(), c.clone()))
            .map(|&i| &self.log[i])
    }

    pub fn records(&self) -> &[Record] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    /// Corrupt lines skipped during replay.
    pub fn skipped_lines(&self) -> usize {
        self.skipped
    }
}

/// Load history records. With `space`, records from other spaces are
/// dropped. Returns the records and the number of skipped lines.
pub fn import_history(path: &Path, space: Option<&str>) -> Result<(Vec<Record>, usize)> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let (records, skipped) = parse_lines(BufReader::new(f), path)?;
    let records = match space {
        Some(fp) => records.into_iter().filter(|r| r.space == fp).collect(),
        None => records,
    };
    Ok((records, skipped))
}
