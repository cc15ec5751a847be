//! Workload CSV I/O and ingestion of external traces through a column mapping.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{ResourceVector, UserRequest, WorkloadConfig};

pub const WORKLOAD_HEADER: [&str; 8] = [
    "id",
    "arrival_step",
    "cpu",
    "ram",
    "hdd",
    "bw",
    "true_duration",
    "predicted_duration",
];

#[derive(Debug, Serialize, Deserialize)]
struct WorkloadRow {
    id: u64,
    arrival_step: u64,
    cpu: u32,
    ram: u32,
    hdd: u32,
    bw: u32,
    true_duration: u32,
    predicted_duration: u32,
}

impl From<&UserRequest> for WorkloadRow {
    fn from(r: &UserRequest) -> Self {
        WorkloadRow {
            id: r.id,
            arrival_step: r.arrival_step,
            cpu: r.demand.cpu,
            ram: r.demand.ram,
            hdd: r.demand.hdd,
            bw: r.demand.bw,
            true_duration: r.true_duration,
            predicted_duration: r.predicted_duration,
        }
    }
}

impl From<WorkloadRow> for UserRequest {
    fn from(r: WorkloadRow) -> Self {
        UserRequest {
            id: r.id,
            arrival_step: r.arrival_step,
            demand: ResourceVector::new(r.cpu, r.ram, r.hdd, r.bw),
            true_duration: r.true_duration,
            predicted_duration: r.predicted_duration,
        }
    }
}

pub fn write_workload<W: Write>(out: W, requests: &[UserRequest]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    // An empty slice still gets a header row.
    w.write_record(WORKLOAD_HEADER)?;
    for r in requests {
        let row = WorkloadRow::from(r);
        w.write_record(&[
            row.id.to_string(),
            row.arrival_step.to_string(),
            row.cpu.to_string(),
            row.ram.to_string(),
            row.hdd.to_string(),
            row.bw.to_string(),
            row.true_duration.to_string(),
            row.predicted_duration.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_workload_file(path: &Path, requests: &[UserRequest]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_workload(file, requests).map_err(|e| csv_error(path, e))
}

/// Strict reader for the workload CSV format: every row must parse.
pub fn read_workload<R: Read>(input: R) -> csv::Result<Vec<UserRequest>> {
    let mut rdr = csv::Reader::from_reader(input);
    rdr.deserialize::<WorkloadRow>()
        .map(|row| row.map(UserRequest::from))
        .collect()
}

pub fn read_workload_file(path: &Path) -> Result<Vec<UserRequest>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut requests = read_workload(file).map_err(|e| csv_error(path, e))?;
    requests.sort_by_key(|r| r.arrival_step);
    Ok(requests)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

fn one() -> f64 {
    1.0
}

/// Column names of an external trace plus multiplicative unit factors.
///
/// `arrival_factor` converts the arrival column to timesteps,
/// `demand_factor` converts the four demand columns to resource units and
/// `duration_factor` converts duration columns to timesteps. Converted values
/// are rounded to the nearest integer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceMapping {
    pub arrival: String,
    pub cpu: String,
    pub ram: String,
    pub hdd: String,
    pub bw: String,
    pub duration: String,
    /// When absent the prediction equals the true duration.
    #[serde(default)]
    pub predicted_duration: Option<String>,
    /// When absent requests are numbered in output order.
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default = "one")]
    pub arrival_factor: f64,
    #[serde(default = "one")]
    pub demand_factor: f64,
    #[serde(default = "one")]
    pub duration_factor: f64,
}

impl TraceMapping {
    /// Mapping that reads the workload CSV format itself.
    pub fn workload_format() -> Self {
        TraceMapping {
            arrival: "arrival_step".into(),
            cpu: "cpu".into(),
            ram: "ram".into(),
            hdd: "hdd".into(),
            bw: "bw".into(),
            duration: "true_duration".into(),
            predicted_duration: Some("predicted_duration".into()),
            id: Some("id".into()),
            arrival_factor: 1.0,
            demand_factor: 1.0,
            duration_factor: 1.0,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("arrival_factor", self.arrival_factor),
            ("demand_factor", self.demand_factor),
            ("duration_factor", self.duration_factor),
        ] {
            if !(f.is_finite() && f > 0.0) {
                return Err(Error::config(format!(
                    "trace mapping {name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_read: u64,
    pub rows_kept: u64,
    pub rows_skipped: u64,
}

struct Columns {
    arrival: usize,
    demand: [usize; 4],
    duration: usize,
    predicted: Option<usize>,
    id: Option<usize>,
}

fn find_column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::format(path, format!("column {name:?} not present in header")))
}

fn field(record: &csv::StringRecord, idx: usize, factor: f64) -> Option<u64> {
    let v: f64 = record.get(idx)?.trim().parse().ok()?;
    let v = v * factor;
    if !v.is_finite() || v < 0.0 {
        return None;
    }
    Some(v.round() as u64)
}

/// Reads an arbitrary CSV trace. Rows with a missing, unparsable or negative
/// mapped field are skipped and counted. Demands and durations are clamped to
/// the ranges of `bounds`; output is sorted by arrival step (stable).
pub fn load_trace(
    path: &Path,
    mapping: &TraceMapping,
    bounds: &WorkloadConfig,
) -> Result<(Vec<UserRequest>, LoadReport)> {
    mapping.validate()?;
    bounds.validate()?;
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let cols = Columns {
        arrival: find_column(&headers, &mapping.arrival, path)?,
        demand: [
            find_column(&headers, &mapping.cpu, path)?,
            find_column(&headers, &mapping.ram, path)?,
            find_column(&headers, &mapping.hdd, path)?,
            find_column(&headers, &mapping.bw, path)?,
        ],
        duration: find_column(&headers, &mapping.duration, path)?,
        predicted: mapping
            .predicted_duration
            .as_deref()
            .map(|c| find_column(&headers, c, path))
            .transpose()?,
        id: mapping
            .id
            .as_deref()
            .map(|c| find_column(&headers, c, path))
            .transpose()?,
    };

    let (dmin, dmax) = (
        u64::from(bounds.min_duration_steps()),
        u64::from(bounds.max_duration_steps()),
    );
    let (rmin, rmax) = (u64::from(bounds.min_res_req), u64::from(bounds.max_res_req));
    let mut report = LoadReport::default();
    let mut requests = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        report.rows_read += 1;
        let parsed = (|| {
            let arrival = field(&record, cols.arrival, mapping.arrival_factor)?;
            let mut demand = [0u32; 4];
            for (d, &c) in demand.iter_mut().zip(&cols.demand) {
                *d = field(&record, c, mapping.demand_factor)?.clamp(rmin, rmax) as u32;
            }
            let duration = field(&record, cols.duration, mapping.duration_factor)?;
            let predicted = match cols.predicted {
                Some(c) => field(&record, c, mapping.duration_factor)?,
                None => duration,
            };
            let id = match cols.id {
                Some(c) => Some(field(&record, c, 1.0)?),
                None => None,
            };
            Some((
                id,
                UserRequest {
                    id: 0,
                    arrival_step: arrival,
                    demand: ResourceVector::from_array(demand),
                    true_duration: duration.clamp(dmin, dmax) as u32,
                    predicted_duration: predicted.clamp(dmin, dmax) as u32,
                },
            ))
        })();
        match parsed {
            Some((id, mut req)) => {
                req.id = id.unwrap_or(u64::MAX);
                requests.push(req);
                report.rows_kept += 1;
            }
            None => report.rows_skipped += 1,
        }
    }
    requests.sort_by_key(|r| r.arrival_step);
    if cols.id.is_none() {
        for (i, r) in requests.iter_mut().enumerate() {
            r.id = i as u64;
        }
    }
    Ok((requests, report))
}
