//! NGSIM-style delimited trajectory records.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FEET_TO_METERS: f64 = 0.3048;

/// Frame interval of NGSIM `Frame_ID` columns (s).
const NGSIM_FRAME_SECONDS: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthUnit {
    #[default]
    Meters,
    Feet,
}

impl LengthUnit {
    fn to_meters(self, v: f64) -> f64 {
        match self {
            LengthUnit::Meters => v,
            LengthUnit::Feet => v * FEET_TO_METERS,
        }
    }
}

impl FromStr for LengthUnit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "meters" | "m" => Ok(LengthUnit::Meters),
            "feet" | "ft" => Ok(LengthUnit::Feet),
            other => Err(Error::Config(format!("unknown length unit `{other}`"))),
        }
    }
}

/// One observation of one vehicle. Lengths in meters, time in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub vehicle_id: u64,
    pub time: f64,
    pub lane: u32,
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
    /// 0 when no vehicle is ahead.
    pub preceding_id: u64,
}

/// Parsed rows plus one diagnostic per rejected row.
#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    pub records: Vec<RawRecord>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
enum TimeColumn {
    Seconds(usize),
    Millis(usize),
    Frame(usize),
}

struct Columns {
    vehicle: usize,
    time: TimeColumn,
    lane: usize,
    position: usize,
    velocity: usize,
    acceleration: Option<usize>,
    preceding: usize,
}

fn find(header: &HashMap<String, usize>, names: &[&str]) -> Option<usize> {
    names.iter().find_map(|n| header.get(*n).copied())
}

impl Columns {
    fn from_header(headers: &csv::StringRecord) -> Result<Self> {
        let header: HashMap<String, usize> = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
            .collect();
        let need = |names: &[&str], what: &str| {
            find(&header, names)
                .ok_or_else(|| Error::Data(format!("header has no {what} column (looked for {names:?})")))
        };
        let time = if let Some(i) = find(&header, &["time", "frame_time", "t"]) {
            TimeColumn::Seconds(i)
        } else if let Some(i) = find(&header, &["frame_id", "frame"]) {
            TimeColumn::Frame(i)
        } else if let Some(i) = find(&header, &["global_time"]) {
            TimeColumn::Millis(i)
        } else {
            return Err(Error::Data("header has no time or frame column".into()));
        };
        Ok(Self {
            vehicle: need(&["vehicle_id", "vehicle", "id"], "vehicle id")?,
            time,
            lane: need(&["lane_id", "lane"], "lane")?,
            position: need(&["local_y", "position", "pos", "x"], "position")?,
            velocity: need(&["v_vel", "velocity", "speed", "v"], "velocity")?,
            acceleration: find(&header, &["v_acc", "acceleration", "acc", "a"]),
            preceding: need(
                &["preceding", "preceding_id", "preceding_vehicle_id", "leader_id"],
                "preceding vehicle",
            )?,
        })
    }
}

fn field<T: FromStr>(row: &csv::StringRecord, idx: usize, name: &str) -> std::result::Result<T, String> {
    let raw = row.get(idx).map(str::trim).unwrap_or("");
    if raw.is_empty() {
        return Err(format!("missing {name}"));
    }
    raw.parse().map_err(|_| format!("bad {name} `{raw}`"))
}

/// Integer ids occasionally come through as `12.0`.
fn id_field(row: &csv::StringRecord, idx: usize, name: &str) -> std::result::Result<u64, String> {
    field::<u64>(row, idx, name).or_else(|_| {
        let v: f64 = field(row, idx, name)?;
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as u64)
        } else {
            Err(format!("bad {name} `{v}`"))
        }
    })
}

fn parse_row(row: &csv::StringRecord, cols: &Columns, unit: LengthUnit) -> std::result::Result<RawRecord, String> {
    let time = match cols.time {
        TimeColumn::Seconds(i) => field::<f64>(row, i, "time")?,
        TimeColumn::Millis(i) => field::<f64>(row, i, "time")? / 1000.0,
        TimeColumn::Frame(i) => field::<f64>(row, i, "frame")? * NGSIM_FRAME_SECONDS,
    };
    let rec = RawRecord {
        vehicle_id: id_field(row, cols.vehicle, "vehicle id")?,
        time,
        lane: id_field(row, cols.lane, "lane")? as u32,
        position: unit.to_meters(field(row, cols.position, "position")?),
        velocity: unit.to_meters(field(row, cols.velocity, "velocity")?),
        acceleration: match cols.acceleration {
            Some(i) => unit.to_meters(field(row, i, "acceleration")?),
            None => f64::NAN,
        },
        preceding_id: id_field(row, cols.preceding, "preceding id")?,
    };
    if !(rec.time >= 0.0) || !rec.time.is_finite() {
        return Err(format!("negative or non-finite time {}", rec.time));
    }
    if !rec.position.is_finite() || !rec.velocity.is_finite() {
        return Err("non-finite kinematics".into());
    }
    if rec.velocity < 0.0 {
        return Err(format!("negative velocity {}", rec.velocity));
    }
    if cols.acceleration.is_some() && !rec.acceleration.is_finite() {
        return Err("non-finite acceleration".into());
    }
    Ok(rec)
}

/// Fills accelerations by differencing each vehicle's velocity in time.
fn derive_accelerations(records: &mut [RawRecord]) {
    let mut by_vehicle: HashMap<u64, Vec<usize>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        by_vehicle.entry(r.vehicle_id).or_default().push(i);
    }
    for idx in by_vehicle.values_mut() {
        idx.sort_by(|&a, &b| records[a].time.total_cmp(&records[b].time));
        for k in 0..idx.len() {
            let (a, b) = match (k.checked_sub(1), idx.get(k + 1)) {
                (Some(p), _) => (idx[p], idx[k]),
                (None, Some(&n)) => (idx[k], n),
                (None, None) => {
                    records[idx[k]].acceleration = 0.0;
                    continue;
                }
            };
            let dt = records[b].time - records[a].time;
            records[idx[k]].acceleration = if dt > 0.0 {
                (records[b].velocity - records[a].velocity) / dt
            } else {
                0.0
            };
        }
    }
}

pub fn read_trajectory_csv<R: Read>(reader: R, unit: LengthUnit) -> Result<ParsedRecords> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let cols = Columns::from_header(rdr.headers()?)?;
    let mut out = ParsedRecords::default();
    for (k, row) in rdr.records().enumerate() {
        // Line 1 is the header.
        let line = k + 2;
        match row {
            Ok(row) => match parse_row(&row, &cols, unit) {
                Ok(rec) => out.records.push(rec),
                Err(msg) => out.skipped.push(format!("line {line}: {msg}")),
            },
            Err(e) => out.skipped.push(format!("line {line}: {e}")),
        }
    }
    if cols.acceleration.is_none() {
        derive_accelerations(&mut out.records);
    }
    if !out.skipped.is_empty() {
        log::warn!("skipped {} malformed rows", out.skipped.len());
    }
    Ok(out)
}

pub fn parse_trajectory_csv(path: &Path, unit: LengthUnit) -> Result<ParsedRecords> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_trajectory_csv(std::io::BufReader::new(file), unit)
}

/// Writes records in the canonical seven-column metric schema.
pub fn write_trajectory_csv<W: Write>(records: &[RawRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "vehicle_id",
        "time",
        "lane_id",
        "position",
        "velocity",
        "acceleration",
        "preceding_id",
    ])?;
    for r in records {
        w.write_record(&[
            r.vehicle_id.to_string(),
            r.time.to_string(),
            r.lane.to_string(),
            r.position.to_string(),
            r.velocity.to_string(),
            r.acceleration.to_string(),
            r.preceding_id.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))
}
