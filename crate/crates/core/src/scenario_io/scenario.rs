//! Strict loading of scenario files.
//!
//! ```json
//! {
//!   "name": "example1",
//!   "classifiers": [{"w": [-3, 4], "b": 1}, {"w": [1, 0], "b": 1}],
//!   "mode": "sequential",
//!   "cost": {"kind": "l2"},
//!   "tau": 0.5,
//!   "agents": [[0, 0]],
//!   "seed": 7
//! }
//! ```
//!
//! `agents` is a list of points, `{"population": {...}}` or `{"raster": {...}}`.
//! The optional `sweep` (`{"parameter": "gamma" | "theta", "values": [...]}`)
//! drives the cost-gap table.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{Map, Value};

use crate::cost::CostModel;
use crate::error::ScreeningError;
use crate::geometry::{FeatureVector, HalfspaceClassifier, Mode, Pipeline};
use crate::oracle::GridSpec;
use crate::population::{sample_population, PopulationKind, PopulationSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagnosticCode {
    Io,
    ParseError,
    UnknownField,
    MissingField,
    InvalidType,
    InvalidEnum,
    InvalidValue,
    DimensionMismatch,
    NotPositiveDefinite,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            DiagnosticCode::Io => "io_error",
            DiagnosticCode::ParseError => "parse_error",
            DiagnosticCode::UnknownField => "unknown_field",
            DiagnosticCode::MissingField => "missing_field",
            DiagnosticCode::InvalidType => "invalid_type",
            DiagnosticCode::InvalidEnum => "invalid_enum",
            DiagnosticCode::InvalidValue => "invalid_value",
            DiagnosticCode::DimensionMismatch => "dimension_mismatch",
            DiagnosticCode::NotPositiveDefinite => "not_positive_definite",
        }
    }
}

/// A scenario problem, located by its JSON path (`classifiers[1].w`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub code: DiagnosticCode,
    pub field: String,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "[{}] {}", self.code.as_str(), self.message)
        } else {
            write!(f, "[{}] {}: {}", self.code.as_str(), self.field, self.message)
        }
    }
}

impl std::error::Error for ScenarioError {}

fn err(code: DiagnosticCode, field: &str, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        code,
        field: field.to_string(),
        message: message.into(),
    }
}

type Parsed<T> = std::result::Result<T, ScenarioError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// Rebuilds the cost-gap pair `x₁/γ ± x₂ >= 1` for each value.
    Gamma,
    /// Rebuilds `x₂ >= 0`, `sin θ·x₁ - cos θ·x₂ >= 0` for each opening angle.
    Theta,
}

impl SweepParameter {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParameter::Gamma => "gamma",
            SweepParameter::Theta => "theta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentSource {
    Points(Vec<FeatureVector>),
    Population(PopulationSpec),
    /// Cell centers of a raster grid.
    Raster(GridSpec),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub classifiers: Vec<HalfspaceClassifier>,
    pub mode: Mode,
    pub cost: CostModel,
    pub tau: f64,
    pub agents: Option<AgentSource>,
    pub seed: u64,
    pub sweep: Option<Sweep>,
}

impl Scenario {
    pub fn dim(&self) -> usize {
        self.classifiers[0].dim()
    }

    pub fn pipeline(&self) -> Pipeline {
        Pipeline::new(self.classifiers.clone(), self.mode).expect("validated on load")
    }

    /// Materializes the agent list (populations are drawn with the scenario seed).
    pub fn agent_points(&self) -> Result<Vec<FeatureVector>, ScreeningError> {
        match &self.agents {
            None => Err(ScreeningError::InvalidArgument(format!(
                "scenario '{}' declares no agents",
                self.name
            ))),
            Some(AgentSource::Points(p)) => Ok(p.clone()),
            Some(AgentSource::Population(spec)) => sample_population(spec, self.seed),
            Some(AgentSource::Raster(grid)) => Ok(raster_centers(grid)),
        }
    }
}

/// Cell centers of `grid`, row-major with the first axis fastest.
pub fn raster_centers(grid: &GridSpec) -> Vec<FeatureVector> {
    let steps = grid.steps();
    let d = grid.dim();
    let total: usize = steps.iter().product();
    (0..total)
        .map(|mut idx| {
            DVector::from_iterator(
                d,
                (0..d).map(|a| {
                    let i = idx % steps[a];
                    idx /= steps[a];
                    grid.lower[a] + (i as f64 + 0.5) * grid.resolution
                }),
            )
        })
        .collect()
}

pub fn load_scenario(path: &Path) -> Parsed<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| err(DiagnosticCode::Io, "", format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Parsed<Scenario> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        err(
            DiagnosticCode::ParseError,
            "",
            format!("line {}, column {}: {e}", e.line(), e.column()),
        )
    })?;
    let obj = as_object(&root, "")?;
    check_fields(
        obj,
        "",
        &["name", "classifiers", "mode", "cost", "tau", "agents", "seed", "sweep"],
    )?;

    let name = as_str(required(obj, "", "name")?, "name")?.to_string();
    let classifiers = parse_classifiers(required(obj, "", "classifiers")?)?;
    let d = classifiers[0].dim();
    let mode = match as_str(required(obj, "", "mode")?, "mode")? {
        "sequential" => Mode::Sequential,
        "conjunction" => Mode::Conjunction,
        other => {
            return Err(err(
                DiagnosticCode::InvalidEnum,
                "mode",
                format!("expected \"sequential\" or \"conjunction\", got \"{other}\""),
            ))
        }
    };
    let cost = parse_cost(required(obj, "", "cost")?, d)?;
    let tau = match obj.get("tau") {
        Some(v) => {
            let t = as_f64(v, "tau")?;
            if t < 0.0 {
                return Err(err(DiagnosticCode::InvalidValue, "tau", format!("must be non-negative, got {t}")));
            }
            t
        }
        None => 0.0,
    };
    let seed = match obj.get("seed") {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| err(DiagnosticCode::InvalidType, "seed", "expected a non-negative integer"))?,
        None => 0,
    };
    let agents = obj.get("agents").map(|v| parse_agents(v, d)).transpose()?;
    let sweep = obj.get("sweep").map(parse_sweep).transpose()?;
    Ok(Scenario {
        name,
        classifiers,
        mode,
        cost,
        tau,
        agents,
        seed,
        sweep,
    })
}

fn as_object<'a>(v: &'a Value, field: &str) -> Parsed<&'a Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| err(DiagnosticCode::InvalidType, field, "expected an object"))
}

fn as_str<'a>(v: &'a Value, field: &str) -> Parsed<&'a str> {
    v.as_str()
        .ok_or_else(|| err(DiagnosticCode::InvalidType, field, "expected a string"))
}

fn as_f64(v: &Value, field: &str) -> Parsed<f64> {
    let x = v
        .as_f64()
        .ok_or_else(|| err(DiagnosticCode::InvalidType, field, "expected a number"))?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(err(DiagnosticCode::InvalidValue, field, "must be finite"))
    }
}

fn as_array<'a>(v: &'a Value, field: &str) -> Parsed<&'a Vec<Value>> {
    v.as_array()
        .ok_or_else(|| err(DiagnosticCode::InvalidType, field, "expected an array"))
}

fn as_vector(v: &Value, field: &str) -> Parsed<Vec<f64>> {
    let items = as_array(v, field)?;
    if items.is_empty() {
        return Err(err(DiagnosticCode::InvalidValue, field, "must not be empty"));
    }
    items
        .iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{field}[{i}]")))
        .collect()
}

fn join(parent: &str, key: &str) -> String {
    if parent.is_empty() {
        key.to_string()
    } else {
        format!("{parent}.{key}")
    }
}

fn required<'a>(obj: &'a Map<String, Value>, parent: &str, key: &str) -> Parsed<&'a Value> {
    obj.get(key)
        .ok_or_else(|| err(DiagnosticCode::MissingField, &join(parent, key), "required field is missing"))
}

fn check_fields(obj: &Map<String, Value>, parent: &str, allowed: &[&str]) -> Parsed<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(err(
            DiagnosticCode::UnknownField,
            &join(parent, k),
            format!("unknown field; expected one of {}", allowed.join(", ")),
        )),
        None => Ok(()),
    }
}

fn check_len(field: &str, expected: usize, found: usize) -> Parsed<()> {
    if expected == found {
        Ok(())
    } else {
        Err(err(
            DiagnosticCode::DimensionMismatch,
            field,
            format!("expected dimension {expected}, found {found}"),
        ))
    }
}

fn parse_classifiers(v: &Value) -> Parsed<Vec<HalfspaceClassifier>> {
    let items = as_array(v, "classifiers")?;
    if items.is_empty() {
        return Err(err(DiagnosticCode::InvalidValue, "classifiers", "need at least one classifier"));
    }
    let mut out = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let path = format!("classifiers[{i}]");
        let obj = as_object(item, &path)?;
        check_fields(obj, &path, &["w", "b"])?;
        let w = as_vector(required(obj, &path, "w")?, &join(&path, "w"))?;
        let b = as_f64(required(obj, &path, "b")?, &join(&path, "b"))?;
        if let Some(first) = out.first() {
            let first: &HalfspaceClassifier = first;
            check_len(&join(&path, "w"), first.dim(), w.len())?;
        }
        let h = HalfspaceClassifier::new(DVector::from_vec(w), b).map_err(|e| {
            err(DiagnosticCode::InvalidValue, &join(&path, "w"), e.to_string())
        })?;
        out.push(h);
    }
    Ok(out)
}

fn parse_matrix(v: &Value, field: &str, d: usize) -> Parsed<DMatrix<f64>> {
    let rows = as_array(v, field)?;
    check_len(field, d, rows.len())?;
    let mut m = DMatrix::zeros(d, d);
    for (i, row) in rows.iter().enumerate() {
        let rf = format!("{field}[{i}]");
        let row = as_vector(row, &rf)?;
        check_len(&rf, d, row.len())?;
        for (j, x) in row.into_iter().enumerate() {
            m[(i, j)] = x;
        }
    }
    Ok(m)
}

fn parse_cost(v: &Value, d: usize) -> Parsed<CostModel> {
    let obj = as_object(v, "cost")?;
    check_fields(obj, "cost", &["kind", "matrix"])?;
    let kind = as_str(required(obj, "cost", "kind")?, "cost.kind")?;
    let cost = match kind {
        "l1" => CostModel::L1,
        "l2" => CostModel::L2,
        "linf" => CostModel::LInf,
        "quadratic" => {
            let m = parse_matrix(required(obj, "cost", "matrix")?, "cost.matrix", d)?;
            return CostModel::quadratic(m)
                .map_err(|e| err(DiagnosticCode::NotPositiveDefinite, "cost.matrix", e.to_string()));
        }
        other => {
            return Err(err(
                DiagnosticCode::InvalidEnum,
                "cost.kind",
                format!("expected one of l1, l2, linf, quadratic, got \"{other}\""),
            ))
        }
    };
    if obj.contains_key("matrix") {
        return Err(err(
            DiagnosticCode::InvalidValue,
            "cost.matrix",
            format!("a matrix is only allowed with kind \"quadratic\", not \"{kind}\""),
        ));
    }
    Ok(cost)
}

fn parse_grid(v: &Value, field: &str, d: usize) -> Parsed<GridSpec> {
    let obj = as_object(v, field)?;
    check_fields(obj, field, &["lower", "upper", "resolution"])?;
    let lower = as_vector(required(obj, field, "lower")?, &join(field, "lower"))?;
    let upper = as_vector(required(obj, field, "upper")?, &join(field, "upper"))?;
    check_len(&join(field, "lower"), d, lower.len())?;
    check_len(&join(field, "upper"), d, upper.len())?;
    let resolution = as_f64(required(obj, field, "resolution")?, &join(field, "resolution"))?;
    GridSpec::new(lower, upper, resolution).map_err(|e| err(DiagnosticCode::InvalidValue, field, e.to_string()))
}

fn parse_population(v: &Value, d: usize) -> Parsed<PopulationSpec> {
    let field = "agents.population";
    let obj = as_object(v, field)?;
    let kind = as_str(required(obj, field, "kind")?, &join(field, "kind"))?;
    let n_value = required(obj, field, "n")?;
    let n = n_value
        .as_u64()
        .filter(|&n| n >= 1)
        .ok_or_else(|| err(DiagnosticCode::InvalidValue, &join(field, "n"), "expected a positive integer"))?
        as usize;
    let bounds = |obj: &Map<String, Value>| -> Parsed<(Vec<f64>, Vec<f64>)> {
        check_fields(obj, field, &["kind", "n", "lower", "upper"])?;
        let lower = as_vector(required(obj, field, "lower")?, &join(field, "lower"))?;
        let upper = as_vector(required(obj, field, "upper")?, &join(field, "upper"))?;
        check_len(&join(field, "lower"), d, lower.len())?;
        check_len(&join(field, "upper"), d, upper.len())?;
        if lower.iter().zip(&upper).any(|(l, u)| l > u) {
            return Err(err(DiagnosticCode::InvalidValue, field, "lower must not exceed upper"));
        }
        Ok((lower, upper))
    };
    let kind = match kind {
        "grid_fan" => {
            let (lower, upper) = bounds(obj)?;
            PopulationKind::GridFan { lower, upper }
        }
        "uniform_box" => {
            let (lower, upper) = bounds(obj)?;
            PopulationKind::UniformBox { lower, upper }
        }
        "gaussian" => {
            check_fields(obj, field, &["kind", "n", "mean", "covariance"])?;
            let mean = as_vector(required(obj, field, "mean")?, &join(field, "mean"))?;
            check_len(&join(field, "mean"), d, mean.len())?;
            let cov_field = join(field, "covariance");
            let cov = parse_matrix(required(obj, field, "covariance")?, &cov_field, d)?;
            let covariance = (0..d).map(|i| cov.row(i).iter().copied().collect()).collect();
            PopulationKind::Gaussian { mean, covariance }
        }
        other => {
            return Err(err(
                DiagnosticCode::InvalidEnum,
                &join(field, "kind"),
                format!("expected one of grid_fan, uniform_box, gaussian, got \"{other}\""),
            ))
        }
    };
    let spec = PopulationSpec { kind, n };
    // surface covariance and lattice problems now rather than at run time
    match sample_population(&PopulationSpec { n: 1, ..spec.clone() }, 0) {
        Err(ScreeningError::NotPositiveDefinite(m)) => {
            return Err(err(DiagnosticCode::NotPositiveDefinite, &join(field, "covariance"), m))
        }
        Err(e) => return Err(err(DiagnosticCode::InvalidValue, field, e.to_string())),
        Ok(_) => {}
    }
    if matches!(spec.kind, PopulationKind::GridFan { .. }) {
        let m = (n as f64).powf(1.0 / d as f64).round() as usize;
        if m.checked_pow(d as u32) != Some(n) {
            return Err(err(
                DiagnosticCode::InvalidValue,
                &join(field, "n"),
                format!("a {d}-dimensional lattice needs a perfect {d}-th power of points, got {n}"),
            ));
        }
    }
    Ok(spec)
}

fn parse_agents(v: &Value, d: usize) -> Parsed<AgentSource> {
    if let Some(items) = v.as_array() {
        if items.is_empty() {
            return Err(err(DiagnosticCode::InvalidValue, "agents", "must list at least one agent"));
        }
        let mut points = Vec::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            let field = format!("agents[{i}]");
            let p = as_vector(item, &field)?;
            check_len(&field, d, p.len())?;
            points.push(DVector::from_vec(p));
        }
        return Ok(AgentSource::Points(points));
    }
    let obj = as_object(v, "agents")?;
    check_fields(obj, "agents", &["population", "raster"])?;
    match (obj.get("population"), obj.get("raster")) {
        (Some(p), None) => Ok(AgentSource::Population(parse_population(p, d)?)),
        (None, Some(r)) => Ok(AgentSource::Raster(parse_grid(r, "agents.raster", d)?)),
        _ => Err(err(
            DiagnosticCode::InvalidValue,
            "agents",
            "expected a list of points, {\"population\": ...} or {\"raster\": ...}",
        )),
    }
}

fn parse_sweep(v: &Value) -> Parsed<Sweep> {
    let obj = as_object(v, "sweep")?;
    check_fields(obj, "sweep", &["parameter", "values"])?;
    let parameter = match as_str(required(obj, "sweep", "parameter")?, "sweep.parameter")? {
        "gamma" => SweepParameter::Gamma,
        "theta" => SweepParameter::Theta,
        other => {
            return Err(err(
                DiagnosticCode::InvalidEnum,
                "sweep.parameter",
                format!("expected \"gamma\" or \"theta\", got \"{other}\""),
            ))
        }
    };
    let values = as_vector(required(obj, "sweep", "values")?, "sweep.values")?;
    for (i, &x) in values.iter().enumerate() {
        let bad = match parameter {
            SweepParameter::Gamma => x <= 0.0,
            SweepParameter::Theta => x <= 0.0 || x >= std::f64::consts::PI,
        };
        if bad {
            return Err(err(
                DiagnosticCode::InvalidValue,
                &format!("sweep.values[{i}]"),
                format!("{} = {x} is out of range", parameter.as_str()),
            ));
        }
    }
    Ok(Sweep { parameter, values })
}
