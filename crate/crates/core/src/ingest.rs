//! Persistent-scatterer CSV tables.
//!
//! One row per measurement point: identifier, projected coordinates, the
//! three static motion descriptors, then one `D_YYYYMMDD` column per
//! acquisition holding displacement in millimetres.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPoint {
    pub point_id: String,
    pub easting: f64,
    pub northing: f64,
    /// mm/year
    pub mean_velocity: f64,
    /// mm/year²
    pub acceleration: f64,
    /// mm
    pub seasonality: f64,
    /// Displacement in mm, one entry per calendar date.
    pub displacement: Vec<f64>,
}

/// Acquisition dates shared by every point of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcquisitionCalendar {
    dates: Vec<NaiveDate>,
}

impl AcquisitionCalendar {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self> {
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(format!(
                "acquisition dates must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(AcquisitionCalendar { dates })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn day_of_year(&self) -> Vec<f64> {
        self.dates.iter().map(|&d| day_of_year(d)).collect()
    }
}

/// 1-based ordinal day within the year.
pub fn day_of_year(date: NaiveDate) -> f64 {
    date.ordinal() as f64
}

/// Parses `YYYYMMDD`, rejecting dates that do not exist.
pub fn parse_date(text: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(text, "%Y%m%d")
        .map_err(|e| Error::InvalidInput(format!("invalid date {text:?}: {e}")))
}

/// Column names of the input table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnSpec {
    pub point_id: String,
    pub easting: String,
    pub northing: String,
    pub mean_velocity: String,
    pub acceleration: String,
    pub seasonality: String,
    pub date_prefix: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            point_id: "pid".into(),
            easting: "easting".into(),
            northing: "northing".into(),
            mean_velocity: "mean_velocity".into(),
            acceleration: "acceleration".into(),
            seasonality: "seasonality".into(),
            date_prefix: "D_".into(),
        }
    }
}

/// A row excluded because a numeric field could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowDiagnostic {
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub column: String,
    pub value: String,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub points: Vec<MeasurementPoint>,
    pub calendar: AcquisitionCalendar,
    /// Points dropped because a value was missing (empty, NaN or infinite).
    pub dropped_missing: usize,
    pub rejected: Vec<RowDiagnostic>,
}

enum Field {
    Value(f64),
    Missing,
    Unparseable,
}

fn parse_field(text: &str) -> Field {
    let text = text.trim();
    if text.is_empty() {
        return Field::Missing;
    }
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Field::Value(v),
        Ok(_) => Field::Missing,
        Err(_) => Field::Unparseable,
    }
}

pub fn parse_csv(path: impl AsRef<Path>, columns: &ColumnSpec) -> Result<IngestOutput> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(file, columns).map_err(|e| match e {
        Error::InvalidInput(message) | Error::Config(message) => Error::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

/// Parses several tiles that must share one acquisition calendar.
pub fn parse_many(paths: &[PathBuf], columns: &ColumnSpec) -> Result<IngestOutput> {
    let mut merged: Option<IngestOutput> = None;
    for path in paths {
        let part = parse_csv(path, columns)?;
        match &mut merged {
            None => merged = Some(part),
            Some(acc) => {
                if acc.calendar != part.calendar {
                    return Err(Error::Parse {
                        path: path.clone(),
                        message: "date columns differ from the first file".into(),
                    });
                }
                acc.points.extend(part.points);
                acc.dropped_missing += part.dropped_missing;
                acc.rejected.extend(part.rejected);
            }
        }
    }
    merged.ok_or_else(|| Error::InvalidInput("no input files".into()))
}

pub fn parse_reader<R: Read>(reader: R, columns: &ColumnSpec) -> Result<IngestOutput> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = csv.headers()?.clone();

    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing mandatory column {name:?}")))
    };
    let id_col = find(&columns.point_id)?;
    let static_cols = [
        (find(&columns.easting)?, &columns.easting),
        (find(&columns.northing)?, &columns.northing),
        (find(&columns.mean_velocity)?, &columns.mean_velocity),
        (find(&columns.acceleration)?, &columns.acceleration),
        (find(&columns.seasonality)?, &columns.seasonality),
    ];

    let mut date_cols = Vec::new();
    let mut dates = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(stamp) = h.trim().strip_prefix(columns.date_prefix.as_str()) {
            dates.push(parse_date(stamp)?);
            date_cols.push(i);
        }
    }
    if dates.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no acquisition columns with prefix {:?}",
            columns.date_prefix
        )));
    }
    let calendar = AcquisitionCalendar::new(dates)?;

    let mut points = Vec::new();
    let mut dropped_missing = 0;
    let mut rejected = Vec::new();
    'rows: for record in csv.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let mut statics = [0.0; 5];
        let mut missing = false;
        for (slot, &(col, name)) in statics.iter_mut().zip(&static_cols) {
            let raw = record.get(col).unwrap_or("");
            match parse_field(raw) {
                Field::Value(v) => *slot = v,
                Field::Missing => missing = true,
                Field::Unparseable => {
                    rejected.push(RowDiagnostic {
                        line,
                        column: name.clone(),
                        value: raw.to_string(),
                    });
                    continue 'rows;
                }
            }
        }
        let mut displacement = Vec::with_capacity(date_cols.len());
        for &col in &date_cols {
            let raw = record.get(col).unwrap_or("");
            match parse_field(raw) {
                Field::Value(v) => displacement.push(v),
                Field::Missing => missing = true,
                Field::Unparseable => {
                    rejected.push(RowDiagnostic {
                        line,
                        column: headers[col].to_string(),
                        value: raw.to_string(),
                    });
                    continue 'rows;
                }
            }
        }
        if missing {
            dropped_missing += 1;
            continue;
        }
        let [easting, northing, mean_velocity, acceleration, seasonality] = statics;
        points.push(MeasurementPoint {
            point_id: record.get(id_col).unwrap_or("").trim().to_string(),
            easting,
            northing,
            mean_velocity,
            acceleration,
            seasonality,
            displacement,
        });
    }
    for r in &rejected {
        log::warn!(
            "line {}: unparseable {} value {:?}, row rejected",
            r.line,
            r.column,
            r.value
        );
    }
    Ok(IngestOutput {
        points,
        calendar,
        dropped_missing,
        rejected,
    })
}

/// Writes points in the ingest format. Values are printed with the
/// shortest representation that parses back to the same `f64`.
pub fn write_csv<W: Write>(
    writer: W,
    points: &[MeasurementPoint],
    calendar: &AcquisitionCalendar,
    columns: &ColumnSpec,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec![
        columns.point_id.clone(),
        columns.easting.clone(),
        columns.northing.clone(),
        columns.mean_velocity.clone(),
        columns.acceleration.clone(),
        columns.seasonality.clone(),
    ];
    header.extend(
        calendar
            .dates()
            .iter()
            .map(|d| format!("{}{}", columns.date_prefix, d.format("%Y%m%d"))),
    );
    csv.write_record(&header)?;
    for p in points {
        if p.displacement.len() != calendar.len() {
            return Err(Error::InvalidInput(format!(
                "point {} has {} values for {} dates",
                p.point_id,
                p.displacement.len(),
                calendar.len()
            )));
        }
        let mut row = vec![
            p.point_id.clone(),
            p.easting.to_string(),
            p.northing.to_string(),
            p.mean_velocity.to_string(),
            p.acceleration.to_string(),
            p.seasonality.to_string(),
        ];
        row.extend(p.displacement.iter().map(f64::to_string));
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_csv_file(
    path: impl AsRef<Path>,
    points: &[MeasurementPoint],
    calendar: &AcquisitionCalendar,
    columns: &ColumnSpec,
) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(std::io::BufWriter::new(file), points, calendar, columns)
}
