//! File formats: graph and config JSON, matrix / trajectory / case CSV.

use std::fs;
use std::path::Path;

use epigraph_core::calibrate::CaseData;
use epigraph_core::{Compartment, GraphSpec, GroupGraph, Matrix, TimeSeries};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::read(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::read(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::write(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::write(path, e))
}

/// A single movement graph or a set of groups sharing the nodes.
#[derive(Debug, Clone)]
pub enum GraphFile {
    Single(GraphSpec),
    Groups(GroupGraph),
}

pub fn read_graph(path: &Path) -> CliResult<GraphFile> {
    let value: serde_json::Value = read_json(path)?;
    let parsed = if value.get("groups").is_some() {
        GroupGraph::deserialize(&value).map(GraphFile::Groups)
    } else {
        GraphSpec::deserialize(&value).map(GraphFile::Single)
    };
    let graph = parsed.map_err(|e| CliError::read(path, e))?;
    match &graph {
        GraphFile::Single(g) => g.validate()?,
        GraphFile::Groups(g) => g.validate()?,
    }
    Ok(graph)
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| CliError::write(path, e))
}

/// Row-major, no header, shortest round-trip float formatting.
pub fn write_matrix_csv(path: &Path, m: &Matrix) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    for i in 0..m.rows() {
        w.write_record(m.row(i).iter().map(|v| v.to_string()))
            .map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

pub const SERIES_HEADER: [&str; 7] = ["t", "node", "group", "S", "E", "I", "R"];

fn series_rows(ts: &TimeSeries) -> impl Iterator<Item = Vec<String>> + '_ {
    (0..ts.len()).flat_map(move |k| {
        (0..ts.n_groups).flat_map(move |g| {
            (0..ts.n_nodes).map(move |j| {
                let rec = ts.record(k, g, j);
                let mut row = vec![ts.times[k].to_string(), j.to_string(), g.to_string()];
                row.extend(Compartment::ALL.iter().map(|c| rec[c.index()].to_string()));
                row
            })
        })
    })
}

pub fn write_series_csv(path: &Path, ts: &TimeSeries) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SERIES_HEADER).map_err(|e| CliError::write(path, e))?;
    for row in series_rows(ts) {
        w.write_record(&row).map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

/// Long format with a leading replica column.
pub fn write_replicas_csv(path: &Path, runs: &[TimeSeries]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["replica"];
    header.extend(SERIES_HEADER);
    w.write_record(&header).map_err(|e| CliError::write(path, e))?;
    for (r, ts) in runs.iter().enumerate() {
        for row in series_rows(ts) {
            let mut full = vec![r.to_string()];
            full.extend(row);
            w.write_record(&full).map_err(|e| CliError::write(path, e))?;
        }
    }
    w.flush().map_err(|e| CliError::write(path, e))
}

/// Trajectory CSV back into records `(t, node, group, [S, E, I, R])`.
pub fn read_series_csv(path: &Path) -> CliResult<Vec<(f64, usize, usize, [f64; 4])>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::read(path, e))?;
    let mut out = Vec::new();
    for rec in r.deserialize::<(f64, usize, usize, f64, f64, f64, f64)>() {
        let (t, node, group, s, e, i, rr) = rec.map_err(|e| CliError::read(path, e))?;
        out.push((t, node, group, [s, e, i, rr]));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct CaseRow {
    date_index: i64,
    cumulative_cases: u64,
    cumulative_recovered: u64,
}

pub fn read_case_csv(path: &Path) -> CliResult<CaseData> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::read(path, e))?;
    let mut data = CaseData {
        dates: Vec::new(),
        cumulative_cases: Vec::new(),
        cumulative_recovered: Vec::new(),
    };
    for row in r.deserialize::<CaseRow>() {
        let row = row.map_err(|e| CliError::read(path, e))?;
        data.dates.push(row.date_index);
        data.cumulative_cases.push(row.cumulative_cases);
        data.cumulative_recovered.push(row.cumulative_recovered);
    }
    data.validate()?;
    Ok(data)
}

pub fn write_case_csv(path: &Path, data: &CaseData) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::write(path, e))?;
    for k in 0..data.len() {
        w.serialize(CaseRow {
            date_index: data.dates[k],
            cumulative_cases: data.cumulative_cases[k],
            cumulative_recovered: data.cumulative_recovered[k],
        })
        .map_err(|e| CliError::write(path, e))?;
    }
    w.flush().map_err(|e| CliError::write(path, e))
}
