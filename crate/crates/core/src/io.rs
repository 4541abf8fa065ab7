//! File formats: measures as JSON `{"dim", "points", "weights"}` or CSV with
//! columns `x1..xd,w`; solutions and reports as JSON with non-finite numbers
//! written as the strings `"inf"`, `"-inf"` and `"nan"`; Bessel paths as CSV;
//! sample batches as JSON lines.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::bessel::BesselPath;
use crate::error::{Error, Result};
use crate::let_solver::LetSolution;
use crate::measure::DiscreteMeasure;
use crate::potentials::PotentialPair;
use crate::random_measures::SampleBatch;

/// A float as JSON, with non-finite values as strings.
pub fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

/// Shortest round-trip text, with an exponent for very large or small values.
fn num(x: f64) -> String {
    format!("{x:?}")
}

fn json_vec(xs: &[f64]) -> Value {
    Value::Array(xs.iter().copied().map(json_f64).collect())
}

pub fn measure_from_json(src: &str) -> Result<DiscreteMeasure> {
    Ok(serde_json::from_str(src)?)
}

/// CSV with a header `x1,..,xd,w`.
pub fn measure_from_csv<R: Read>(reader: R) -> Result<DiscreteMeasure> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let dim = headers
        .len()
        .checked_sub(1)
        .filter(|&d| d > 0)
        .ok_or_else(|| Error::Parse("measure CSV needs columns x1..xd,w".into()))?;
    for (i, h) in headers.iter().enumerate() {
        let want = if i == dim { "w".to_string() } else { format!("x{}", i + 1) };
        if h != want {
            return Err(Error::Parse(format!("measure CSV column {} is {h:?}, expected {want:?}", i + 1)));
        }
    }
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let vals = rec
            .iter()
            .enumerate()
            .map(|(j, s)| {
                s.parse::<f64>().map_err(|_| {
                    Error::Parse(format!("row {}, column {}: {s:?} is not a number", row + 1, &headers[j]))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        weights.push(vals[dim]);
        points.push(vals[..dim].to_vec());
    }
    DiscreteMeasure::new(dim, points, weights)
}

/// By extension: `.csv` is CSV, everything else JSON.
pub fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    if is_csv(path) {
        measure_from_csv(File::open(path)?)
    } else {
        measure_from_json(&std::fs::read_to_string(path)?)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn measure_to_csv<W: Write>(m: &DiscreteMeasure, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (1..=m.dim()).map(|i| format!("x{i}")).collect();
    header.push("w".into());
    wtr.write_record(&header)?;
    for (x, w) in m.atoms() {
        wtr.write_record(x.iter().chain(std::iter::once(&w)).map(|&v| num(v)))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_measure(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if is_csv(path) {
        measure_to_csv(m, file)
    } else {
        serde_json::to_writer_pretty(file, m)?;
        Ok(())
    }
}

/// Square or rectangular cost matrix, no header; `inf` entries allowed.
pub fn cost_matrix_from_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = rec?
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("cost row {}: {s:?} is not a number", i + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn solution_json(s: &LetSolution, with_plan: bool) -> Value {
    let mut v = json!({
        "values": { "primal": json_f64(s.primal_value), "dual": json_f64(s.dual_value) },
        "gap": json_f64(s.gap),
        "sigma0": json_vec(&s.sigma0),
        "sigma1": json_vec(&s.sigma1),
        "phi0": json_vec(&s.phi0),
        "phi1": json_vec(&s.phi1),
        "iterations": s.iterations,
        "epsilon_final": json_f64(s.epsilon_final),
    });
    if with_plan {
        v["plan"] = Value::Array(s.plan.iter().map(|r| json_vec(r)).collect());
    }
    v
}

/// Columns `path,t,x`.
pub fn paths_to_csv<W: Write>(paths: &[BesselPath], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["path", "t", "x"])?;
    for (i, p) in paths.iter().enumerate() {
        for (t, x) in p.t.iter().zip(&p.x) {
            wtr.write_record([i.to_string(), num(*t), num(*x)])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// Columns `kind,x1..xd,value` with `kind` either `phi` (grid nodes) or `psi` (atoms).
pub fn potentials_to_csv<W: Write>(pp: &PotentialPair, writer: W) -> Result<()> {
    let dim = pp.x.first().or(pp.y.first()).map_or(1, Vec::len);
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec!["kind".to_string()];
    header.extend((1..=dim).map(|i| format!("x{i}")));
    header.push("value".into());
    wtr.write_record(&header)?;
    for (kind, pts, vals) in [("phi", &pp.x, &pp.phi), ("psi", &pp.y, &pp.psi)] {
        for (p, v) in pts.iter().zip(vals.iter()) {
            let mut rec = vec![kind.to_string()];
            rec.extend(p.iter().map(|&c| num(c)));
            rec.push(num(*v));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

/// One measure record per line, each with its `L`-weight.
pub fn batch_to_jsonl<W: Write>(batch: &SampleBatch, mut writer: W) -> Result<()> {
    for (m, w) in batch.measures.iter().zip(&batch.weights) {
        let mut rec = serde_json::to_value(m)?;
        rec["weight"] = json_f64(*w);
        serde_json::to_writer(&mut writer, &rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Measures from JSON lines; extra fields such as `weight` are ignored.
pub fn measures_from_jsonl<R: Read>(reader: R) -> Result<Vec<DiscreteMeasure>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}
