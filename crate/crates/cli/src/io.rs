//! Panel ingest and artifact writers.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use revealed::{ForecastPanel, InformationStructure, MaskedGrid, Mode};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// `%.17g`: 17 significant digits, fixed notation for moderate exponents.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        // Signed zero prints as plain 0.
        return "0".into();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..17).contains(&exp) {
        let mantissa = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mantissa}e{sign}{:02}", exp.abs());
    }
    let digits = (16 - exp) as usize;
    trim_fraction(&format!("{x:.digits$}")).to_string()
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Writes through a temporary file in the same directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| CliError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.flush().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable report");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

struct Row {
    event: String,
    forecaster: String,
    forecast: f64,
    outcome: Option<f64>,
    line: u64,
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h == name)
}

/// Reads a long-format panel. Events and forecasters are ordered by id.
/// A repeated (event, forecaster) pair keeps its last row.
pub fn ingest(path: &Path, mode: Mode) -> CliResult<ForecastPanel> {
    let malformed = |line: u64, message: String| CliError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::data(path, format!("{other:?}")),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| malformed(1, e.to_string()))?
        .clone();
    let (Some(ie), Some(iforecaster), Some(ix)) = (
        column(&headers, "event_id"),
        column(&headers, "forecaster_id"),
        column(&headers, "forecast"),
    ) else {
        return Err(malformed(
            1,
            "header must name event_id, forecaster_id and forecast (optionally outcome)".into(),
        ));
    };
    let iy = column(&headers, "outcome");

    let mut rows: Vec<Row> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let (event, forecaster) = (field(ie), field(iforecaster));
        if event.is_empty() || forecaster.is_empty() {
            return Err(malformed(line, "empty event_id or forecaster_id".into()));
        }
        let forecast: f64 = field(ix)
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| malformed(line, format!("forecast '{}' is not a finite number", field(ix))))?;
        if mode == Mode::Binary && !(0.0..=1.0).contains(&forecast) {
            return Err(malformed(line, format!("binary forecast {forecast} is outside [0, 1]")));
        }
        let outcome = match iy.map(field) {
            None | Some("") => None,
            Some(text) => {
                let y: f64 = text
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| malformed(line, format!("outcome '{text}' is not a finite number")))?;
                if mode == Mode::Binary && y != 0.0 && y != 1.0 {
                    return Err(malformed(line, format!("binary outcome {y} is not 0 or 1")));
                }
                Some(y)
            }
        };
        rows.push(Row {
            event: event.to_string(),
            forecaster: forecaster.to_string(),
            forecast,
            outcome,
            line,
        });
    }
    if rows.is_empty() {
        return Err(CliError::data(path, "no forecasts"));
    }

    let events: Vec<String> = rows.iter().map(|r| r.event.clone()).collect::<BTreeSet<_>>().into_iter().collect();
    let forecasters: Vec<String> = rows
        .iter()
        .map(|r| r.forecaster.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let event_index: HashMap<&str, usize> = events.iter().enumerate().map(|(i, e)| (e.as_str(), i)).collect();
    let forecaster_index: HashMap<&str, usize> =
        forecasters.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();

    let (k, n) = (events.len(), forecasters.len());
    let mut values = DMatrix::from_element(k, n, f64::NAN);
    let mut present = DMatrix::from_element(k, n, false);
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    let mut outcomes: Vec<Option<(f64, u64)>> = vec![None; k];
    for row in &rows {
        let (e, f) = (event_index[row.event.as_str()], forecaster_index[row.forecaster.as_str()]);
        if let Some(previous) = seen.insert((e, f), row.line) {
            log::warn!(
                "{}:{}: duplicate forecast for event {} by {} (line {previous}); keeping the later row",
                path.display(),
                row.line,
                row.event,
                row.forecaster
            );
        }
        values[(e, f)] = row.forecast;
        present[(e, f)] = true;
        if let Some(y) = row.outcome {
            match outcomes[e] {
                Some((earlier, first_line)) if earlier != y => {
                    return Err(malformed(
                        row.line,
                        format!(
                            "outcome {y} for event {} contradicts {earlier} on line {first_line}",
                            row.event
                        ),
                    ))
                }
                Some(_) => {}
                None => outcomes[e] = Some((y, row.line)),
            }
        }
    }
    let resolved = outcomes.iter().filter(|o| o.is_some()).count();
    let outcomes = if resolved == k {
        Some(outcomes.into_iter().map(|o| o.expect("resolved").0).collect())
    } else {
        if resolved > 0 {
            log::warn!(
                "{}: {} of {k} events have no outcome; outcomes are ignored",
                path.display(),
                k - resolved
            );
        }
        None
    };
    let grid = MaskedGrid::new(values, present)?;
    Ok(ForecastPanel::new(mode, grid, events, forecasters, outcomes)?)
}

fn order_by_id(ids: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    idx.sort_by(|&a, &b| ids[a].cmp(&ids[b]));
    idx
}

/// Long-format panel, rows ordered by event id and then forecaster id.
pub fn write_panel(path: &Path, panel: &ForecastPanel) -> CliResult<()> {
    let mut header = vec!["event_id", "forecaster_id", "forecast"];
    if panel.outcomes.is_some() {
        header.push("outcome");
    }
    let forecaster_order = order_by_id(&panel.forecaster_ids);
    let mut rows = Vec::new();
    for k in order_by_id(&panel.event_ids) {
        for &j in &forecaster_order {
            if let Some(x) = panel.grid.get(k, j) {
                let mut row = vec![panel.event_ids[k].clone(), panel.forecaster_ids[j].clone(), fmt_num(x)];
                if let Some(y) = &panel.outcomes {
                    row.push(fmt_num(y[k]));
                }
                rows.push(row);
            }
        }
    }
    write_atomic(path, &csv_bytes(&header, rows))
}

/// Σ as a square grid with a header row and column of forecaster ids.
pub fn write_sigma(path: &Path, sigma: &InformationStructure, ids: &[String]) -> CliResult<()> {
    let mut header = vec!["forecaster_id"];
    header.extend(ids.iter().map(String::as_str));
    let m = sigma.matrix();
    let rows = (0..m.nrows()).map(|i| {
        let mut row = vec![ids[i].clone()];
        row.extend((0..m.ncols()).map(|j| fmt_num(m[(i, j)])));
        row
    });
    write_atomic(path, &csv_bytes(&header, rows))
}

/// Reads a sigma.csv back as (ids, Σ).
pub fn read_sigma(path: &Path) -> CliResult<(Vec<String>, InformationStructure)> {
    let malformed = |line: u64, message: String| CliError::Malformed {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => CliError::io(path, io),
            other => CliError::data(path, format!("{other:?}")),
        })?;
    let headers = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let ids: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let n = ids.len();
    if n == 0 {
        return Err(malformed(1, "no forecaster columns".into()));
    }
    let mut m = DMatrix::zeros(n, n);
    let mut count = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if i >= n {
            return Err(malformed(line, format!("more than {n} rows")));
        }
        if record.get(0) != Some(ids[i].as_str()) {
            return Err(malformed(
                line,
                format!("row label '{}' does not match column '{}'", record.get(0).unwrap_or(""), ids[i]),
            ));
        }
        for j in 0..n {
            let text = record.get(j + 1).unwrap_or("");
            m[(i, j)] = text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(line, format!("entry '{text}' is not a finite number")))?;
        }
        count += 1;
    }
    if count != n {
        return Err(CliError::data(path, format!("{count} rows for {n} columns")));
    }
    let sigma = InformationStructure::new(m).map_err(|e| CliError::data(path, e.to_string()))?;
    Ok((ids, sigma))
}

/// Reorders a structure read from `path` to the given forecaster order.
pub fn align_sigma(
    path: &Path,
    file_ids: &[String],
    sigma: &InformationStructure,
    wanted: &[String],
) -> CliResult<InformationStructure> {
    let position: BTreeMap<&str, usize> = file_ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let idx = wanted
        .iter()
        .map(|id| {
            position
                .get(id.as_str())
                .copied()
                .ok_or_else(|| CliError::data(path, format!("forecaster {id} is missing from the structure")))
        })
        .collect::<CliResult<Vec<usize>>>()?;
    Ok(sigma.restrict(&idx))
}

pub fn write_aggregates(path: &Path, results: &[revealed::AggregateResult]) -> CliResult<()> {
    let rows = results
        .iter()
        .map(|r| vec![r.event_id.clone(), r.method.to_string(), fmt_num(r.value)]);
    write_atomic(path, &csv_bytes(&["event_id", "method", "value"], rows))
}

/// One row per candidate; failed candidates have an empty score.
pub fn write_kappa_scores(path: &Path, grid: &[f64], scores: &[Option<f64>]) -> CliResult<()> {
    let rows = grid
        .iter()
        .zip(scores)
        .map(|(&k, s)| vec![fmt_num(k), s.map(fmt_num).unwrap_or_default()]);
    write_atomic(path, &csv_bytes(&["candidate", "score"], rows))
}

pub fn write_evaluation(path: &Path, report: &revealed::evaluation::EvaluationReport) -> CliResult<()> {
    let rows = report.rows.iter().map(|r| {
        vec![
            r.method.to_string(),
            r.n.to_string(),
            r.replication.to_string(),
            fmt_num(r.rmse),
        ]
    });
    write_atomic(path, &csv_bytes(&["method", "N", "replication", "rmse"], rows))
}
