//! CSV and JSON formats shared by the CLI and the harness.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dist::QuantileTable;
use crate::error::{Error, Result};
use crate::harness::StudyRow;
use crate::linproc::Series;
use crate::projections::ProjectionPair;

fn parse_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64> {
    let x: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_error(line, format!("column {column}: `{cell}` is not a number")))?;
    if !x.is_finite() {
        return Err(parse_error(line, format!("column {column}: non-finite value `{cell}`")));
    }
    Ok(x)
}

/// Data rows tagged with their 1-based file line.
type Rows = Vec<(usize, Vec<f64>)>;

/// Reads a numeric table with a header row; returns the header and the rows.
fn read_table(reader: impl Read) -> Result<(Vec<String>, Rows)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(parse_error(1, "missing header row"));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_error(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let values = record
            .iter()
            .zip(&header)
            .map(|(cell, col)| parse_cell(cell, line, col))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((line, values));
    }
    Ok((header, rows))
}

/// Parses a series with header `t,y1,...,yd`; `t` must increase strictly.
pub fn read_series(reader: impl Read) -> Result<Series> {
    let (header, rows) = read_table(reader)?;
    if header.len() < 2 || header[0] != "t" {
        return Err(parse_error(1, "header must be `t,y1,...,yd`"));
    }
    for (j, name) in header.iter().enumerate().skip(1) {
        if *name != format!("y{j}") {
            return Err(parse_error(1, format!("expected column `y{j}`, found `{name}`")));
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("no observations".into()));
    }
    let d = header.len() - 1;
    let mut values = Vec::with_capacity(rows.len() * d);
    let mut last_t = f64::NEG_INFINITY;
    for (line, row) in &rows {
        if row[0] <= last_t {
            return Err(parse_error(*line, format!("t = {} does not increase", row[0])));
        }
        last_t = row[0];
        values.extend_from_slice(&row[1..]);
    }
    Series::new(rows.len(), d, values)
}

pub fn load_series_csv(path: impl AsRef<Path>) -> Result<Series> {
    read_series(File::open(path)?)
}

/// Writes `t = 1..n`; floats use the shortest round-trip representation.
pub fn write_series(series: &Series, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((1..=series.dim()).map(|j| format!("y{j}")));
    w.write_record(&header)?;
    for (t, row) in series.rows().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_series_csv(series: &Series, path: impl AsRef<Path>) -> Result<()> {
    write_series(series, BufWriter::new(File::create(path)?))
}

/// Projection vectors stored one per column under `p1,...,pL`.
pub fn read_projections(reader: impl Read) -> Result<Vec<Vec<f64>>> {
    let (header, rows) = read_table(reader)?;
    for (j, name) in header.iter().enumerate() {
        if *name != format!("p{}", j + 1) {
            return Err(parse_error(1, format!("expected column `p{}`, found `{name}`", j + 1)));
        }
    }
    if rows.is_empty() {
        return Err(Error::Data("projection file has no rows".into()));
    }
    Ok((0..header.len()).map(|j| rows.iter().map(|(_, r)| r[j]).collect()).collect())
}

pub fn load_projections_csv(path: impl AsRef<Path>) -> Result<Vec<Vec<f64>>> {
    read_projections(File::open(path)?)
}

pub fn write_projections(vectors: &[Vec<f64>], writer: impl Write) -> Result<()> {
    let d = vectors.first().map_or(0, Vec::len);
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::InvalidArgument("projection vectors differ in length".into()));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((1..=vectors.len()).map(|j| format!("p{j}")))?;
    for i in 0..d {
        w.write_record(vectors.iter().map(|v| v[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the pair `(p_v, p_w)` from 1-based column indices.
pub fn select_pair(vectors: &[Vec<f64>], v_idx: usize, w_idx: usize) -> Result<ProjectionPair> {
    let get = |i: usize| {
        if i == 0 || i > vectors.len() {
            Err(Error::InvalidArgument(format!(
                "projection index {i} out of range 1..={}",
                vectors.len()
            )))
        } else {
            Ok(vectors[i - 1].clone())
        }
    };
    ProjectionPair::new(get(v_idx)?, get(w_idx)?)
}

/// Trajectory as `k,value` for `k = 1..n−1`.
pub fn write_trajectory(trajectory: &[f64], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "value"])?;
    for (k, x) in trajectory.iter().enumerate() {
        w.write_record([(k + 1).to_string(), x.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trajectory_csv(trajectory: &[f64], path: impl AsRef<Path>) -> Result<()> {
    write_trajectory(trajectory, BufWriter::new(File::create(path)?))
}

pub fn write_study_rows(rows: &[StudyRow], writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_study_rows(reader: impl Read) -> Result<Vec<StudyRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Pretty JSON with a trailing newline. Struct fields keep declaration
/// order and maps are `BTreeMap`s, so output is stable.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_json(value)?)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub fn load_quantile_table(path: impl AsRef<Path>) -> Result<QuantileTable> {
    let table: QuantileTable = load_json(path)?;
    table.validate()?;
    Ok(table)
}
