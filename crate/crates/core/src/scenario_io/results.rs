//! Result documents.
//!
//! Every JSON document is an object with a `kind` tag and a `metadata` object
//! echoing the configuration that produced it. Reals are rounded to 12
//! significant digits, `-0` is written as `0` and non-finite values as `null`.
//! Keys are sorted, so writing, reading and writing again gives identical bytes.
//!
//! Tables (rasters, gap sweeps, verification rows) can also be written as CSV;
//! the metadata then goes to a `<file>.meta.json` sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::defense::{AuditOutcome, DefendedPipeline, EvaluationReport, FaceCheck};
use crate::geometry::{FeatureVector, HalfspaceClassifier, Pipeline};
use crate::population::RegionRaster;
use crate::response::{KktCertificate, ManipulationPlan, Method};

/// Significant digits kept for every real.
pub const SIGNIFICANT_DIGITS: usize = 12;

pub const RASTER_CSV_HEADER: [&str; 7] = ["x", "y", "c_conj", "c_seq", "region", "ok_conj", "ok_seq"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },

    #[error("refusing to write an empty {0}")]
    Empty(&'static str),

    #[error("malformed results document: {0}")]
    Malformed(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn malformed(msg: impl Into<String>) -> OutputError {
    OutputError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// Rounds to [`SIGNIFICANT_DIGITS`]; `None` for NaN and infinities.
pub fn round_real(x: f64) -> Option<f64> {
    if !x.is_finite() {
        return None;
    }
    let r: f64 = format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses");
    Some(if r == 0.0 { 0.0 } else { r })
}

fn real(x: f64) -> Value {
    round_real(x).map_or(Value::Null, Value::from)
}

/// Applies the number policy to every real in `value`.
pub fn canonicalize(value: Value) -> Value {
    match value {
        Value::Number(n) if n.is_f64() => real(n.as_f64().expect("f64 number")),
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        Value::Object(map) => Value::Object(map.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// Pretty-printed canonical JSON with a trailing newline.
pub fn to_json_string(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&canonicalize(value.clone())).expect("values serialize");
    s.push('\n');
    s
}

pub fn write_json(value: &Value, path: &Path) -> Result<(), OutputError> {
    fs::write(path, to_json_string(value)).map_err(io_err(path))
}

pub fn read_json(path: &Path) -> Result<Value, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| malformed(format!("{}: {e}", path.display())))
}

/// Sidecar path for the metadata of a CSV table.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

/// Wraps a document body with its kind tag and metadata.
pub fn document(kind: &str, metadata: Value, mut body: Map<String, Value>) -> Value {
    body.insert("kind".into(), Value::from(kind));
    body.insert("metadata".into(), metadata);
    Value::Object(body)
}

fn vector(x: &FeatureVector) -> Value {
    Value::Array(x.iter().map(|&v| real(v)).collect())
}

fn classifier_json(h: &HalfspaceClassifier) -> Value {
    json!({"w": vector(h.w()), "b": real(h.b())})
}

pub fn pipeline_json(p: &Pipeline) -> Value {
    json!({
        "mode": p.mode().as_str(),
        "classifiers": p.classifiers().iter().map(classifier_json).collect::<Vec<_>>(),
    })
}

fn certificate_json(c: &KktCertificate) -> Value {
    json!({
        "multipliers": c.multipliers.iter().map(|&l| real(l)).collect::<Vec<_>>(),
        "stationarity_residual": real(c.stationarity_residual),
        "complementarity_residual": real(c.complementarity_residual),
    })
}

pub fn plan_json(plan: &ManipulationPlan) -> Value {
    json!({
        "path": plan.path().iter().map(vector).collect::<Vec<_>>(),
        "leg_costs": plan.leg_costs().iter().map(|&c| real(c)).collect::<Vec<_>>(),
        "total_cost": real(plan.total_cost()),
        "method": plan.method().as_str(),
        "certificate": plan.certificate().map_or(Value::Null, certificate_json),
    })
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value, OutputError> {
    obj.get(key).ok_or_else(|| malformed(format!("missing field {key}")))
}

fn number(v: &Value, what: &str) -> Result<f64, OutputError> {
    v.as_f64().ok_or_else(|| malformed(format!("{what} is not a number")))
}

fn numbers(v: &Value, what: &str) -> Result<Vec<f64>, OutputError> {
    v.as_array()
        .ok_or_else(|| malformed(format!("{what} is not an array")))?
        .iter()
        .map(|x| number(x, what))
        .collect()
}

/// Reads back a plan written by [`plan_json`].
pub fn plan_from_json(v: &Value) -> Result<ManipulationPlan, OutputError> {
    let obj = v.as_object().ok_or_else(|| malformed("plan is not an object"))?;
    let path = field(obj, "path")?
        .as_array()
        .ok_or_else(|| malformed("path is not an array"))?
        .iter()
        .map(|p| numbers(p, "path point").map(DVector::from_vec))
        .collect::<Result<Vec<_>, _>>()?;
    let leg_costs = numbers(field(obj, "leg_costs")?, "leg_costs")?;
    let total_cost = number(field(obj, "total_cost")?, "total_cost")?;
    let method = match field(obj, "method")?.as_str() {
        Some("ClosedForm2D") => Method::ClosedForm2D,
        Some("ConvexSolver") => Method::ConvexSolver,
        Some("Oracle") => Method::Oracle,
        other => return Err(malformed(format!("unknown method {other:?}"))),
    };
    let certificate = match obj.get("certificate") {
        None | Some(Value::Null) => None,
        Some(c) => {
            let c = c.as_object().ok_or_else(|| malformed("certificate is not an object"))?;
            Some(KktCertificate {
                multipliers: numbers(field(c, "multipliers")?, "multipliers")?,
                stationarity_residual: number(field(c, "stationarity_residual")?, "stationarity_residual")?,
                complementarity_residual: number(
                    field(c, "complementarity_residual")?,
                    "complementarity_residual",
                )?,
            })
        }
    };
    ManipulationPlan::from_parts(path, leg_costs, total_cost, method, certificate)
        .map_err(|e| malformed(e.to_string()))
}

/// One plan per agent, in agent order.
pub fn plans_document(plans: &[ManipulationPlan], mode: &str, metadata: Value) -> Value {
    let mut body = Map::new();
    body.insert("mode".into(), Value::from(mode));
    body.insert(
        "plans".into(),
        Value::Array(
            plans
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut v = plan_json(p);
                    v["agent"] = Value::from(i);
                    v
                })
                .collect(),
        ),
    );
    document("plans", metadata, body)
}

/// Plans of a document written by [`plans_document`].
pub fn plans_from_document(v: &Value) -> Result<Vec<ManipulationPlan>, OutputError> {
    v.get("plans")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing plans array"))?
        .iter()
        .map(plan_from_json)
        .collect()
}

pub fn defended_document(d: &DefendedPipeline, metadata: Value) -> Value {
    let mut body = Map::new();
    body.insert("original".into(), pipeline_json(d.original()));
    body.insert("shifted".into(), pipeline_json(d.shifted()));
    body.insert("tau".into(), real(d.tau()));
    document("defended_pipeline", metadata, body)
}

pub fn report_json(r: &EvaluationReport) -> Value {
    json!({
        "tp_rate": real(r.tp_rate),
        "fp_rate": real(r.fp_rate),
        "tn_rate": real(r.tn_rate),
        "fn_rate": real(r.fn_rate),
        "n_agents": r.n_agents,
        "setting": r.setting.as_str(),
    })
}

pub fn evaluation_document(reports: &[EvaluationReport], metadata: Value) -> Value {
    let mut body = Map::new();
    body.insert("reports".into(), Value::Array(reports.iter().map(report_json).collect()));
    document("evaluation", metadata, body)
}

fn face_check_json(f: &FaceCheck) -> Value {
    json!({
        "classifier": f.classifier,
        "agent": vector(&f.agent),
        "cost": real(f.cost),
        "violated": f.violated,
    })
}

/// Audit verdict plus, when available, the per-face optimality checks.
pub fn audit_document(outcome: &AuditOutcome, spot_checks: Option<&[FaceCheck]>, metadata: Value) -> Value {
    let mut body = Map::new();
    body.insert("passed".into(), Value::from(outcome.passed()));
    match outcome {
        AuditOutcome::Pass { agents_checked } => {
            body.insert("agents_checked".into(), Value::from(*agents_checked));
            body.insert("counterexample".into(), Value::Null);
        }
        AuditOutcome::Counterexample(c) => {
            body.insert("agents_checked".into(), Value::Null);
            body.insert(
                "counterexample".into(),
                json!({
                    "agent": vector(&c.agent),
                    "setting": c.setting.as_str(),
                    "plan": plan_json(&c.plan),
                }),
            );
        }
    }
    body.insert(
        "spot_checks".into(),
        spot_checks.map_or(Value::Null, |f| Value::Array(f.iter().map(face_check_json).collect())),
    );
    document("audit", metadata, body)
}

fn raster_cell_json(c: &crate::population::RasterCell) -> Value {
    json!({
        "x": real(c.x),
        "y": real(c.y),
        "c_conj": real(c.c_conj),
        "c_seq": real(c.c_seq),
        "region": c.region.as_str(),
        "within_budget_conj": c.within_budget_conj,
        "within_budget_seq": c.within_budget_seq,
    })
}

pub fn raster_document(r: &RegionRaster, metadata: Value) -> Result<Value, OutputError> {
    if r.is_empty() {
        return Err(OutputError::Empty("raster"));
    }
    let mut body = Map::new();
    body.insert(
        "grid".into(),
        json!({
            "lower": r.grid.lower.iter().map(|&v| real(v)).collect::<Vec<_>>(),
            "upper": r.grid.upper.iter().map(|&v| real(v)).collect::<Vec<_>>(),
            "resolution": real(r.grid.resolution),
        }),
    );
    body.insert("tau".into(), real(r.tau));
    body.insert("nx".into(), Value::from(r.nx));
    body.insert("ny".into(), Value::from(r.ny));
    body.insert("cells".into(), Value::Array(r.cells.iter().map(raster_cell_json).collect()));
    Ok(document("raster", metadata, body))
}

/// A column-oriented table: every row holds one value per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Value>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows as objects keyed by column name.
    pub fn to_json(&self) -> Value {
        Value::Array(
            self.rows
                .iter()
                .map(|row| Value::Object(self.columns.iter().cloned().zip(row.iter().cloned()).collect()))
                .collect(),
        )
    }
}

pub fn table_document(kind: &str, table: &Table, metadata: Value) -> Result<Value, OutputError> {
    if table.is_empty() {
        return Err(OutputError::Empty("table"));
    }
    let mut body = Map::new();
    body.insert("columns".into(), Value::from(table.columns.clone()));
    body.insert("rows".into(), table.to_json());
    Ok(document(kind, metadata, body))
}

/// CSV text of one cell: canonical reals, `1`/`0` for booleans, empty for null.
fn csv_field(v: &Value) -> String {
    match canonicalize(v.clone()) {
        Value::Null => String::new(),
        Value::Bool(b) => if b { "1" } else { "0" }.to_string(),
        Value::String(s) => s,
        other => other.to_string(),
    }
}

fn write_csv_rows<I>(path: &Path, header: &[String], rows: I) -> Result<(), OutputError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let csv_err = |source| OutputError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_table_csv(table: &Table, path: &Path, metadata: &Value) -> Result<(), OutputError> {
    if table.is_empty() {
        return Err(OutputError::Empty("table"));
    }
    write_csv_rows(path, &table.columns, table.rows.iter().map(|r| r.iter().map(csv_field).collect()))?;
    write_json(metadata, &metadata_path(path))
}

/// Raster as CSV, one row per cell in storage order.
pub fn write_raster_csv(r: &RegionRaster, path: &Path, metadata: &Value) -> Result<(), OutputError> {
    if r.is_empty() {
        return Err(OutputError::Empty("raster"));
    }
    let header: Vec<String> = RASTER_CSV_HEADER.iter().map(|s| s.to_string()).collect();
    let rows = r.cells.iter().map(|c| {
        let v = raster_cell_json(c);
        ["x", "y", "c_conj", "c_seq", "region", "within_budget_conj", "within_budget_seq"]
            .iter()
            .map(|k| csv_field(&v[*k]))
            .collect()
    });
    write_csv_rows(path, &header, rows)?;
    write_json(metadata, &metadata_path(path))
}

/// Reads a CSV table back as header plus raw rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), OutputError> {
    let csv_err = |source| OutputError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(csv_err)?;
    Ok((header, rows))
}
