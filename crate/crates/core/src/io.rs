//! File formats: long-format datasets, ground truth, variances, traces,
//! summaries, plot data, `key=value` configs and run manifests.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value reads back bit-identical.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::sampler::{AcceptCounts, Accepts, Trace, TraceRecord};
use crate::summary::{BenchmarkScore, SeriesSummary};
use crate::synthetic::SeriesTruth;

pub const DATASET_HEADER: [&str; 4] = ["series_id", "time", "replicate", "value"];
pub const SHARED_ID: &str = "*";

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().has_headers(true).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            row,
            msg: format!("{kind:?}"),
        },
    }
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            msg: format!("expected header '{}', found '{}'", expected.join(","), header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    Ok(())
}

/// Reads every record, handing `(line, fields)` to `f`.
fn for_each_row(
    path: &Path,
    expected: &[&str],
    mut f: impl FnMut(usize, &csv::StringRecord) -> Result<()>,
) -> Result<()> {
    let mut reader = csv_reader(path)?;
    check_header(path, &mut reader, expected)?;
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => return Ok(()),
            Ok(true) => {
                let row = record.position().map_or(0, |p| p.line() as usize);
                if record.len() != expected.len() {
                    return Err(parse_err(path, row, format!("expected {} fields, found {}", expected.len(), record.len())));
                }
                f(row, &record)?;
            }
            Err(e) => return Err(csv_error(path, e)),
        }
    }
}

fn parse_err(path: &Path, row: usize, msg: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        msg,
    }
}

fn field<T: std::str::FromStr>(path: &Path, row: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    if raw.trim().is_empty() {
        return Err(parse_err(path, row, format!("missing {name}")));
    }
    raw.trim()
        .parse()
        .map_err(|_| parse_err(path, row, format!("invalid {name} '{raw}'")))
}

fn finite(path: &Path, row: usize, rec: &csv::StringRecord, i: usize, name: &str) -> Result<f64> {
    let v: f64 = field(path, row, rec, i, name)?;
    if !v.is_finite() {
        return Err(parse_err(path, row, format!("non-finite {name} '{}'", rec.get(i).unwrap_or(""))));
    }
    Ok(v)
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn split<T: std::str::FromStr>(path: &Path, row: usize, raw: &str, name: &str) -> Result<Vec<T>> {
    if raw.is_empty() {
        return Ok(vec![]);
    }
    raw.split(';')
        .map(|p| p.parse().map_err(|_| parse_err(path, row, format!("invalid {name} entry '{p}'"))))
        .collect()
}

/// Loads a long-format dataset. Series keep their order of first appearance;
/// rows may come in any order.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let mut order: Vec<String> = Vec::new();
    let mut cells: HashMap<String, HashMap<(usize, usize), f64>> = HashMap::new();
    for_each_row(path, &DATASET_HEADER, |row, rec| {
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(parse_err(path, row, "missing series_id".into()));
        }
        let t: usize = field(path, row, rec, 1, "time")?;
        let r: usize = field(path, row, rec, 2, "replicate")?;
        if t == 0 || r == 0 {
            return Err(parse_err(path, row, "time and replicate are 1-based".into()));
        }
        let v = finite(path, row, rec, 3, "value")?;
        let series = cells.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            HashMap::new()
        });
        if series.insert((t, r), v).is_some() {
            return Err(parse_err(
                path,
                row,
                format!("duplicate row for series '{id}' time {t} replicate {r}"),
            ));
        }
        Ok(())
    })?;
    let data_err = |msg: String| Error::Data {
        path: path.to_path_buf(),
        msg,
    };
    let Some(first) = order.first() else {
        return Err(data_err("no data rows".into()));
    };
    let shape = |id: &str| {
        let c = &cells[id];
        (
            c.keys().map(|k| k.0).max().unwrap_or(0),
            c.keys().map(|k| k.1).max().unwrap_or(0),
        )
    };
    let (n_times, n_reps) = shape(first);
    let mut values = Vec::with_capacity(order.len() * n_times * n_reps);
    for id in &order {
        let (t_max, r_max) = shape(id);
        if (t_max, r_max) != (n_times, n_reps) {
            return Err(data_err(format!(
                "series '{id}' has T={t_max} R={r_max} but '{first}' has T={n_times} R={n_reps}; all series must share both"
            )));
        }
        let c = &cells[id];
        for t in 1..=n_times {
            for r in 1..=n_reps {
                match c.get(&(t, r)) {
                    Some(&v) => values.push(v),
                    None => {
                        return Err(data_err(format!("series '{id}' is missing time {t} replicate {r}")));
                    }
                }
            }
        }
    }
    Dataset::new(order, n_times, n_reps, values).map_err(|e| data_err(e.to_string()))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", DATASET_HEADER.join(",")).map_err(io)?;
    let (n_times, n_reps) = (data.n_times(), data.n_reps());
    for (n, id) in data.series_ids().iter().enumerate() {
        let x = data.series(n);
        for t in 1..=n_times {
            for (r, v) in x.at(t).iter().enumerate().take(n_reps) {
                writeln!(w, "{id},{t},{},{v}", r + 1).map_err(io)?;
            }
        }
    }
    finish(w, path)
}

const TRUTH_HEADER: [&str; 4] = ["series_id", "ell", "tau", "slopes"];

pub fn write_truth(path: &Path, truth: &[SeriesTruth]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", TRUTH_HEADER.join(",")).map_err(io)?;
    for s in truth {
        writeln!(w, "{},{},{},{}", s.id, s.ell(), join(&s.tau), join(&s.slopes)).map_err(io)?;
    }
    finish(w, path)
}

/// Reads ground truth. The `slopes` column is optional.
pub fn read_truth(path: &Path) -> Result<Vec<SeriesTruth>> {
    let with_slopes = csv_reader(path)?.headers().map_err(|e| csv_error(path, e))?.len() == 4;
    let columns = &TRUTH_HEADER[..if with_slopes { 4 } else { 3 }];
    let mut out = Vec::new();
    for_each_row(path, columns, |row, rec| {
        let ell: usize = field(path, row, rec, 1, "ell")?;
        let tau: Vec<usize> = split(path, row, rec.get(2).unwrap_or(""), "tau")?;
        if tau.len() != ell {
            return Err(parse_err(path, row, format!("ell is {ell} but tau lists {} entries", tau.len())));
        }
        let slopes = if with_slopes {
            split(path, row, rec.get(3).unwrap_or(""), "slopes")?
        } else {
            vec![]
        };
        out.push(SeriesTruth {
            id: rec.get(0).unwrap_or("").to_string(),
            tau,
            slopes,
        });
        Ok(())
    })?;
    Ok(out)
}

/// Variances as read from file.
#[derive(Clone, Debug, PartialEq)]
pub enum VarianceTable {
    /// Length `T`, one value per time-point.
    Shared(Vec<f64>),
    /// Flat `[series][time]` in the dataset's series order.
    Free(Vec<f64>),
}

impl VarianceTable {
    /// Flat `[series][time]` values for `n_series` series.
    pub fn per_series(&self, n_series: usize) -> Vec<f64> {
        match self {
            VarianceTable::Shared(s) => crate::variance::broadcast_shared(s, n_series),
            VarianceTable::Free(v) => v.clone(),
        }
    }
}

const VARIANCE_HEADER: [&str; 3] = ["series_id", "time", "sigma2"];

pub fn write_variances(path: &Path, ids: &[String], n_times: usize, table: &VarianceTable) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", VARIANCE_HEADER.join(",")).map_err(io)?;
    match table {
        VarianceTable::Shared(s) => {
            for (t, v) in s.iter().enumerate() {
                writeln!(w, "{SHARED_ID},{},{v}", t + 1).map_err(io)?;
            }
        }
        VarianceTable::Free(values) => {
            for (n, id) in ids.iter().enumerate() {
                for t in 0..n_times {
                    writeln!(w, "{id},{},{}", t + 1, values[n * n_times + t]).map_err(io)?;
                }
            }
        }
    }
    finish(w, path)
}

/// Reads variances for a dataset with the given series ids and length.
pub fn read_variances(path: &Path, ids: &[String], n_times: usize) -> Result<VarianceTable> {
    let mut cells: HashMap<String, Vec<Option<f64>>> = HashMap::new();
    for_each_row(path, &VARIANCE_HEADER, |row, rec| {
        let id = rec.get(0).unwrap_or("").to_string();
        let t: usize = field(path, row, rec, 1, "time")?;
        if t == 0 || t > n_times {
            return Err(parse_err(path, row, format!("time {t} outside 1..={n_times}")));
        }
        let v = finite(path, row, rec, 2, "sigma2")?;
        if v <= 0.0 {
            return Err(parse_err(path, row, format!("variance must be positive, got {v}")));
        }
        let slot = &mut cells.entry(id.clone()).or_insert_with(|| vec![None; n_times])[t - 1];
        if slot.replace(v).is_some() {
            return Err(parse_err(path, row, format!("duplicate variance for series '{id}' time {t}")));
        }
        Ok(())
    })?;
    let data_err = |msg: String| Error::Data {
        path: path.to_path_buf(),
        msg,
    };
    let complete = |id: &str| -> Result<Vec<f64>> {
        let col = cells.get(id).ok_or_else(|| data_err(format!("no variances for series '{id}'")))?;
        col.iter()
            .enumerate()
            .map(|(t, v)| v.ok_or_else(|| data_err(format!("series '{id}' has no variance at time {}", t + 1))))
            .collect()
    };
    if cells.contains_key(SHARED_ID) {
        if cells.len() > 1 {
            return Err(data_err("shared ('*') and per-series variances cannot be mixed".into()));
        }
        return Ok(VarianceTable::Shared(complete(SHARED_ID)?));
    }
    let mut flat = Vec::with_capacity(ids.len() * n_times);
    for id in ids {
        flat.extend(complete(id)?);
    }
    if let Some(extra) = cells.keys().find(|k| !ids.contains(k)) {
        return Err(data_err(format!("variances given for unknown series '{extra}'")));
    }
    Ok(VarianceTable::Free(flat))
}

const TRACE_HEADER: [&str; 5] = ["iter", "ell", "tau", "log_posterior", "accept"];
const THETA_HEADER: [&str; 2] = ["iter", "active_theta"];

/// Writes the trace and its sidecar of `theta` at the knots.
pub fn write_trace(path: &Path, theta_path: &Path, trace: &Trace) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", TRACE_HEADER.join(",")).map_err(io)?;
    for r in &trace.records {
        writeln!(w, "{},{},{},{},{}", r.iter, r.ell(), join(&r.tau), r.log_posterior, r.accepts.encode()).map_err(io)?;
    }
    finish(w, path)?;
    let mut w = create(theta_path)?;
    let io = |e| Error::io(theta_path, e);
    writeln!(w, "{}", THETA_HEADER.join(",")).map_err(io)?;
    for r in &trace.records {
        writeln!(w, "{},{}", r.iter, join(&r.active_theta)).map_err(io)?;
    }
    finish(w, theta_path)
}

/// Shape of a stored trace, kept in the run manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceShape {
    pub n_times: usize,
    pub max_ell: usize,
    pub burn_in: usize,
    pub thin: usize,
}

pub fn read_trace(path: &Path, theta_path: &Path, shape: TraceShape, accept_counts: AcceptCounts) -> Result<Trace> {
    let mut trace = Trace::new(shape.n_times, shape.max_ell, shape.burn_in, shape.thin);
    trace.accept_counts = accept_counts;
    for_each_row(path, &TRACE_HEADER, |row, rec| {
        let iter: usize = field(path, row, rec, 0, "iter")?;
        let ell: usize = field(path, row, rec, 1, "ell")?;
        let tau: Vec<usize> = split(path, row, rec.get(2).unwrap_or(""), "tau")?;
        if tau.len() != ell || !crate::model::tau_is_valid(&tau, shape.n_times) {
            return Err(parse_err(path, row, format!("invalid change-points '{}'", rec.get(2).unwrap_or(""))));
        }
        let log_posterior: f64 = field(path, row, rec, 3, "log_posterior")?;
        let raw = rec.get(4).unwrap_or("");
        let accepts = Accepts::decode(raw).ok_or_else(|| parse_err(path, row, format!("invalid accept flags '{raw}'")))?;
        trace.records.push(TraceRecord {
            iter,
            tau,
            active_theta: vec![],
            log_posterior,
            accepts,
        });
        Ok(())
    })?;
    let mut i = 0;
    for_each_row(theta_path, &THETA_HEADER, |row, rec| {
        let iter: usize = field(theta_path, row, rec, 0, "iter")?;
        let rec_ = trace
            .records
            .get_mut(i)
            .filter(|r| r.iter == iter)
            .ok_or_else(|| parse_err(theta_path, row, format!("iteration {iter} does not match the trace")))?;
        let theta: Vec<f64> = split(theta_path, row, rec.get(1).unwrap_or(""), "theta")?;
        if theta.len() != rec_.tau.len() + 2 {
            return Err(parse_err(theta_path, row, "theta count does not match the change-points".into()));
        }
        rec_.active_theta = theta;
        i += 1;
        Ok(())
    })?;
    if i != trace.records.len() {
        return Err(Error::Data {
            path: theta_path.to_path_buf(),
            msg: format!("{i} rows for {} trace records", trace.records.len()),
        });
    }
    Ok(trace)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    writeln!(w).map_err(|e| Error::io(path, e))?;
    finish(w, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

pub type Summaries = BTreeMap<String, SeriesSummary>;

/// Writes `ell_trace.csv`, `locations.csv`, `z_probs.csv` and `band.csv`.
pub fn write_plot_data(dir: &Path, ids: &[String], traces: &[Trace], summaries: &Summaries) -> Result<()> {
    let path = dir.join("ell_trace.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "series_id,iter,ell,log_posterior").map_err(io)?;
    for (id, tr) in ids.iter().zip(traces) {
        for r in &tr.records {
            writeln!(w, "{id},{},{},{}", r.iter, r.ell(), r.log_posterior).map_err(io)?;
        }
    }
    finish(w, &path)?;

    let path = dir.join("locations.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "series_id,index,min,q25,median,q75,max").map_err(io)?;
    for (id, s) in summaries {
        for m in &s.location_marginals {
            writeln!(w, "{id},{},{},{},{},{},{}", m.index, m.min, m.q25, m.median, m.q75, m.max).map_err(io)?;
        }
    }
    finish(w, &path)?;

    let path = dir.join("z_probs.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "series_id,time,z").map_err(io)?;
    for (id, s) in summaries {
        for (t, z) in s.z_probs.iter().enumerate() {
            writeln!(w, "{id},{},{z}", t + 1).map_err(io)?;
        }
    }
    finish(w, &path)?;

    let path = dir.join("band.csv");
    let mut w = create(&path)?;
    let io = |e| Error::io(&path, e);
    writeln!(w, "series_id,time,mean,lower,upper").map_err(io)?;
    for (id, s) in summaries {
        for t in 0..s.fitted_mean.len() {
            writeln!(w, "{id},{},{},{},{}", t + 1, s.fitted_mean[t], s.fitted_lower[t], s.fitted_upper[t]).map_err(io)?;
        }
    }
    finish(w, &path)
}

/// Writes the MAE table and, next to it, the signed-error histogram.
pub fn write_score(path: &Path, hist_path: &Path, score: &BenchmarkScore) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "ell,n,mae,se,exact_fraction").map_err(io)?;
    for s in &score.strata {
        let se = s.se.map_or(String::new(), |v| v.to_string());
        writeln!(w, "{},{},{},{se},{}", s.ell, s.n, s.mae, s.exact_fraction).map_err(io)?;
    }
    finish(w, path)?;
    let mut w = create(hist_path)?;
    let io = |e| Error::io(hist_path, e);
    writeln!(w, "error,count").map_err(io)?;
    for (e, c) in &score.error_histogram {
        writeln!(w, "{e},{c}").map_err(io)?;
    }
    finish(w, hist_path)
}

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, line)| {
            let line = line.split('#').next().unwrap_or("").trim();
            (!line.is_empty()).then_some((i + 1, line))
        })
        .map(|(row, line)| {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| parse_err(origin, row, format!("expected key=value, found '{line}'")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

pub fn read_key_values(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_key_values(&text, path)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Trace file names for series index `n`.
pub fn trace_paths(dir: &Path, n: usize) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("trace_{:04}.csv", n + 1)),
        dir.join(format!("trace_{:04}.theta.csv", n + 1)),
    )
}
