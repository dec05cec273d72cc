use std::fmt;
use std::path::PathBuf;

use serde_json::{json, Value};

use screening_core::defense::{
    conservative_defense, evaluate, optimality_spot_check, zero_fp_audit, AuditOutcome, SPOT_CHECK_DELTA,
};
use screening_core::oracle::{oracle_conjunction, oracle_sequential, GridSpec, OracleResult};
use screening_core::population::{default_raster_grid, rasterize};
use screening_core::response::{
    conjunction_closed_form_2d, conjunction_response, cost_gap, gap_instance, kkt_check, sequential_closed_form_2d,
    sequential_response,
};
use screening_core::scenario_io::{
    self as io, load_scenario, AgentSource, OutputError, Scenario, ScenarioError, SweepParameter, Table,
};
use screening_core::{
    best_response, feature_vector, CostModel, FeatureVector, HalfspaceClassifier, ManipulationPlan, Mode, Pipeline,
    ScreeningError, SolverOptions, PARALLEL_TOL,
};

use crate::{CommandKind, Format, Options};

/// Agreement required between the solver and the closed form in `verify`.
const VERIFY_TOL: f64 = 1e-4;
/// Larger populations are verified on an evenly strided subset.
const VERIFY_MAX_AGENTS: usize = 200;

#[derive(Debug)]
pub enum CliError {
    Scenario(String),
    NonConvergence(String),
    Counterexample(String),
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Other(_) => 1,
            CliError::Scenario(_) => 2,
            CliError::NonConvergence(_) => 3,
            CliError::Counterexample(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Scenario(m) => write!(f, "scenario error: {m}"),
            CliError::NonConvergence(m) | CliError::Other(m) => f.write_str(m),
            CliError::Counterexample(m) => write!(f, "audit failed: {m}"),
        }
    }
}

impl From<ScreeningError> for CliError {
    fn from(e: ScreeningError) -> Self {
        if e.is_non_convergence() {
            CliError::NonConvergence(e.to_string())
        } else {
            CliError::Other(e.to_string())
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e.to_string())
    }
}

impl From<OutputError> for CliError {
    fn from(e: OutputError) -> Self {
        CliError::Other(e.to_string())
    }
}

fn requirement(msg: impl Into<String>) -> CliError {
    CliError::Scenario(msg.into())
}

/// Scenario with the command-line overrides applied.
struct Run {
    kind: CommandKind,
    scenario: Scenario,
    scenario_path: PathBuf,
    options: SolverOptions,
    shift: f64,
    grid_res: Option<f64>,
    format: Format,
    out: PathBuf,
}

impl Run {
    fn new(kind: CommandKind, opts: &Options) -> Result<Self, CliError> {
        let path = opts
            .scenario
            .clone()
            .or_else(|| opts.scenario_positional.clone())
            .ok_or_else(|| requirement("no scenario given (use --scenario <path>)"))?;
        let mut scenario = load_scenario(&path)?;
        if let Some(tau) = opts.tau {
            if !(tau.is_finite() && tau >= 0.0) {
                return Err(requirement(format!("--tau must be a non-negative number, got {tau}")));
            }
            scenario.tau = tau;
        }
        if let Some(seed) = opts.seed {
            scenario.seed = seed;
        }
        if let Some(mode) = opts.mode {
            scenario.mode = mode.into();
        }
        let mut options = SolverOptions::default();
        if let Some(tol) = opts.tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(requirement(format!("--tol must be positive, got {tol}")));
            }
            options.tol = tol;
        }
        if let Some(h) = opts.grid_res {
            if !(h.is_finite() && h > 0.0) {
                return Err(requirement(format!("--grid-res must be positive, got {h}")));
            }
        }
        let shift = opts.shift.unwrap_or(scenario.tau);
        if !(shift.is_finite() && shift >= 0.0) {
            return Err(requirement(format!("--shift must be a non-negative number, got {shift}")));
        }
        Ok(Self {
            kind,
            scenario,
            scenario_path: path,
            options,
            shift,
            grid_res: opts.grid_res,
            format: opts.format,
            out: opts.out.clone(),
        })
    }

    /// Effective configuration, echoed into every output.
    fn metadata(&self) -> Value {
        let s = &self.scenario;
        let cost = match &s.cost {
            CostModel::Quadratic(q) => {
                let m = q.matrix();
                let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
                json!({"kind": "quadratic", "matrix": rows})
            }
            other => json!({"kind": other.name()}),
        };
        json!({
            "command": self.kind.name(),
            "scenario": s.name,
            "scenario_file": self.scenario_path.display().to_string(),
            "classifiers": io::pipeline_json(&s.pipeline())["classifiers"],
            "mode": s.mode.as_str(),
            "cost": cost,
            "tau": s.tau,
            "shift": self.shift,
            "seed": s.seed,
            "tol": self.options.tol,
            "grid_resolution": self.grid_res,
            "format": match self.format { Format::Json => "json", Format::Csv => "csv" },
            "version": env!("CARGO_PKG_VERSION"),
        })
    }

    fn agents(&self) -> Result<Vec<FeatureVector>, CliError> {
        if self.scenario.agents.is_none() {
            return Err(requirement(format!("'{}' needs agents in the scenario", self.kind.name())));
        }
        Ok(self.scenario.agent_points()?)
    }

    fn require_planar_pair(&self) -> Result<(), CliError> {
        let s = &self.scenario;
        if s.dim() != 2 || s.classifiers.len() != 2 {
            return Err(requirement(format!(
                "'{}' needs two classifiers in the plane, got k = {} and d = {}",
                self.kind.name(),
                s.classifiers.len(),
                s.dim()
            )));
        }
        Ok(())
    }

    fn write_table(&self, kind: &str, table: &Table) -> Result<(), CliError> {
        match self.format {
            Format::Json => io::write_json(&io::table_document(kind, table, self.metadata())?, &self.out)?,
            Format::Csv => io::write_table_csv(table, &self.out, &self.metadata())?,
        }
        Ok(())
    }

    fn write_document(&self, doc: &Value) -> Result<(), CliError> {
        io::write_json(doc, &self.out)?;
        Ok(())
    }
}

pub fn run(kind: CommandKind, opts: &Options) -> Result<(), CliError> {
    let run = Run::new(kind, opts)?;
    match kind {
        CommandKind::Respond => respond(&run),
        CommandKind::Region => region(&run),
        CommandKind::Defend => defend(&run),
        CommandKind::Evaluate => evaluate_cmd(&run),
        CommandKind::Gap => gap(&run),
        CommandKind::Audit => audit(&run),
        CommandKind::Verify => verify(&run),
    }
}

fn real(x: f64) -> Value {
    if x.is_finite() {
        Value::from(x)
    } else {
        Value::Null
    }
}

fn respond(run: &Run) -> Result<(), CliError> {
    let s = &run.scenario;
    let pipeline = s.pipeline();
    let plans = run
        .agents()?
        .iter()
        .enumerate()
        .map(|(i, x)| {
            best_response(&pipeline, x, &s.cost, &run.options).map_err(|e| CliError::from(agent_error(e, i)))
        })
        .collect::<Result<Vec<_>, _>>()?;
    match run.format {
        Format::Json => run.write_document(&io::plans_document(&plans, s.mode.as_str(), run.metadata())),
        Format::Csv => {
            let d = s.dim();
            let mut columns = vec!["agent".to_string(), "stop".to_string()];
            columns.extend((1..=d).map(|a| format!("x{a}")));
            columns.extend(["leg_cost", "total_cost", "method", "certified"].map(String::from));
            let mut table = Table {
                columns,
                rows: Vec::new(),
            };
            for (i, plan) in plans.iter().enumerate() {
                for (j, p) in plan.path().iter().enumerate() {
                    let mut row = vec![Value::from(i), Value::from(j)];
                    row.extend(p.iter().map(|&v| real(v)));
                    row.push(if j == 0 { Value::Null } else { real(plan.leg_costs()[j - 1]) });
                    row.push(real(plan.total_cost()));
                    row.push(Value::from(plan.method().as_str()));
                    row.push(plan.certificate().map_or(Value::Null, |c| Value::from(c.is_certified())));
                    table.push(row);
                }
            }
            run.write_table("plans", &table)
        }
    }
}

fn agent_error(e: ScreeningError, index: usize) -> ScreeningError {
    ScreeningError::Agent {
        index,
        source: Box::new(e),
    }
}

fn region(run: &Run) -> Result<(), CliError> {
    run.require_planar_pair()?;
    let s = &run.scenario;
    if s.cost != CostModel::L2 {
        return Err(requirement(format!("'region' uses the l2 closed forms, got cost {}", s.cost.name())));
    }
    let (h1, h2) = (&s.classifiers[0], &s.classifiers[1]);
    let grid = match &s.agents {
        Some(AgentSource::Raster(g)) => g.clone(),
        _ => default_raster_grid(h1, h2, s.tau)?,
    };
    let grid = match run.grid_res {
        Some(h) => GridSpec::new(grid.lower, grid.upper, h)?,
        None => grid,
    };
    let raster = rasterize(h1, h2, s.tau, &grid)?;
    match run.format {
        Format::Json => run.write_document(&io::raster_document(&raster, run.metadata())?),
        Format::Csv => Ok(io::write_raster_csv(&raster, &run.out, &run.metadata())?),
    }
}

fn defend(run: &Run) -> Result<(), CliError> {
    let defended = conservative_defense(&run.scenario.pipeline(), run.shift)?;
    match run.format {
        Format::Json => run.write_document(&io::defended_document(&defended, run.metadata())),
        Format::Csv => {
            let d = run.scenario.dim();
            let mut columns = vec!["classifier".to_string()];
            columns.extend((1..=d).map(|a| format!("w{a}")));
            columns.extend(["b_original", "b_shifted"].map(String::from));
            let mut table = Table {
                columns,
                rows: Vec::new(),
            };
            for (i, (orig, shifted)) in defended
                .original()
                .classifiers()
                .iter()
                .zip(defended.shifted().classifiers())
                .enumerate()
            {
                let mut row = vec![Value::from(i + 1)];
                row.extend(shifted.w().iter().map(|&v| real(v)));
                row.push(real(orig.normalize().b()));
                row.push(real(shifted.b()));
                table.push(row);
            }
            run.write_table("defended_pipeline", &table)
        }
    }
}

fn evaluate_cmd(run: &Run) -> Result<(), CliError> {
    let s = &run.scenario;
    let agents = run.agents()?;
    let defended = conservative_defense(&s.pipeline(), run.shift)?;
    let reports = [Mode::Sequential, Mode::Conjunction]
        .into_iter()
        .map(|setting| evaluate(&defended, &agents, s.tau, &s.cost, setting, &run.options))
        .collect::<Result<Vec<_>, _>>()?;
    match run.format {
        Format::Json => run.write_document(&io::evaluation_document(&reports, run.metadata())),
        Format::Csv => {
            let mut table = Table::new(&["setting", "tp_rate", "fp_rate", "tn_rate", "fn_rate", "n_agents"]);
            for r in &reports {
                table.push(vec![
                    Value::from(r.setting.as_str()),
                    real(r.tp_rate),
                    real(r.fp_rate),
                    real(r.tn_rate),
                    real(r.fn_rate),
                    Value::from(r.n_agents),
                ]);
            }
            run.write_table("evaluation", &table)
        }
    }
}

/// Pipeline of the theta sweep: `x₂ >= 0` then `sin θ·x₁ - cos θ·x₂ >= 0`.
fn theta_pair(theta: f64) -> Result<[HalfspaceClassifier; 2], ScreeningError> {
    Ok([
        HalfspaceClassifier::from_slice(&[0.0, 1.0], 0.0)?,
        HalfspaceClassifier::from_slice(&[theta.sin(), -theta.cos()], 0.0)?,
    ])
}

fn gap(run: &Run) -> Result<(), CliError> {
    let s = &run.scenario;
    let mut table = Table::new(&["parameter", "value", "agent", "c_conj", "c_seq", "ratio"]);
    let mut add_rows = |parameter: &str, value: Value, classifiers: &[HalfspaceClassifier], agents: &[FeatureVector]| {
        for (i, x) in agents.iter().enumerate() {
            if x.len() != classifiers[0].dim() {
                return Err(requirement(format!(
                    "agent {i} has dimension {}, the {parameter} sweep needs {}",
                    x.len(),
                    classifiers[0].dim()
                )));
            }
            let r = cost_gap(classifiers, x, &s.cost, &run.options).map_err(|e| agent_error(e, i))?;
            table.push(vec![
                Value::from(parameter),
                value.clone(),
                Value::from(i),
                real(r.c_conj),
                real(r.c_seq),
                real(r.ratio),
            ]);
        }
        Ok(())
    };
    match &s.sweep {
        Some(sweep) => {
            let agents = match (sweep.parameter, &s.agents) {
                (_, Some(_)) => run.agents()?,
                (SweepParameter::Gamma, None) => vec![feature_vector(&[0.0, 0.0])?],
                (SweepParameter::Theta, None) => return Err(requirement("a theta sweep needs agents")),
            };
            for &v in &sweep.values {
                let pair = match sweep.parameter {
                    SweepParameter::Gamma => gap_instance(v)?,
                    SweepParameter::Theta => theta_pair(v)?,
                };
                add_rows(sweep.parameter.as_str(), Value::from(v), &pair, &agents)?;
            }
        }
        None => {
            let agents = run.agents()?;
            add_rows("none", Value::Null, &s.classifiers, &agents)?;
        }
    }
    run.write_table("gap", &table)
}

fn audit(run: &Run) -> Result<(), CliError> {
    let s = &run.scenario;
    if s.dim() != 2 {
        return Err(requirement(format!("'audit' sweeps a planar grid, got d = {}", s.dim())));
    }
    let grid = match &s.agents {
        Some(AgentSource::Raster(g)) => g.clone(),
        _ if s.classifiers.len() == 2 => default_raster_grid(&s.classifiers[0], &s.classifiers[1], s.tau)?,
        _ => return Err(requirement("'audit' with k != 2 needs a raster grid in \"agents\"")),
    };
    let grid = match run.grid_res {
        Some(h) => GridSpec::new(grid.lower, grid.upper, h)?,
        None => grid,
    };
    let defended = conservative_defense(&s.pipeline(), run.shift)?;
    let outcome = zero_fp_audit(&defended, s.tau, &s.cost, &grid, &run.options)?;
    let spot = optimality_spot_check(&defended, &s.cost, s.mode, SPOT_CHECK_DELTA, &run.options)?;
    match run.format {
        Format::Json => run.write_document(&io::audit_document(&outcome, spot.as_deref(), run.metadata()))?,
        Format::Csv => {
            let mut table = Table::new(&["passed", "agents_checked", "setting", "x1", "x2", "cost"]);
            match &outcome {
                AuditOutcome::Pass { agents_checked } => table.push(vec![
                    Value::from(true),
                    Value::from(*agents_checked),
                    Value::Null,
                    Value::Null,
                    Value::Null,
                    Value::Null,
                ]),
                AuditOutcome::Counterexample(c) => table.push(vec![
                    Value::from(false),
                    Value::Null,
                    Value::from(c.setting.as_str()),
                    real(c.agent[0]),
                    real(c.agent[1]),
                    real(c.plan.total_cost()),
                ]),
            }
            run.write_table("audit", &table)?;
        }
    }
    match outcome {
        AuditOutcome::Pass { .. } => Ok(()),
        AuditOutcome::Counterexample(c) => Err(CliError::Counterexample(format!(
            "unqualified agent ({:.6}, {:.6}) passes in the {} setting at cost {:.6} <= {}",
            c.agent[0],
            c.agent[1],
            c.setting,
            c.plan.total_cost(),
            s.tau
        ))),
    }
}

/// Box around `x` large enough for every path of cost at most `reach`.
fn oracle_grid(x: &FeatureVector, cost: &CostModel, reach: f64, base: Option<f64>) -> Option<GridSpec> {
    let d = x.len();
    let m = cost.l2_lower_factor(d)?;
    let (default_h, max_steps) = if d <= 2 { (0.02, 400.0) } else { (0.05, 60.0) };
    let radius = (reach / m).max(0.5) * 1.1;
    let h = base.unwrap_or(default_h).max(2.0 * radius / max_steps);
    let radius = radius + 4.0 * h;
    let lower: Vec<f64> = x.iter().map(|v| v - radius).collect();
    let upper: Vec<f64> = x.iter().map(|v| v + radius).collect();
    let h = h.max(2.0 * radius / max_steps);
    GridSpec::new(lower, upper, h).ok()
}

fn closed_form_cost(pipeline: &Pipeline, x: &FeatureVector, cost: &CostModel) -> Option<f64> {
    let h = pipeline.classifiers();
    if pipeline.dim() != 2 || h.len() != 2 || *cost != CostModel::L2 {
        return None;
    }
    let (u1, u2) = (h[0].normalize(), h[1].normalize());
    if 1.0 - u1.w().dot(u2.w()).abs() <= PARALLEL_TOL {
        return None;
    }
    let plan = match pipeline.mode() {
        Mode::Sequential => sequential_closed_form_2d(&h[0], &h[1], x),
        Mode::Conjunction => conjunction_closed_form_2d(&h[0], &h[1], x),
    };
    plan.ok().map(|p| p.total_cost())
}

fn verify(run: &Run) -> Result<(), CliError> {
    let s = &run.scenario;
    let agents = run.agents()?;
    let mut table = Table::new(&[
        "agent",
        "mode",
        "closed_form",
        "solver",
        "oracle",
        "oracle_error_bound",
        "oracle_resolution",
        "certified",
        "matches_closed_form",
        "within_oracle_bound",
    ]);
    let stride = agents.len().div_ceil(VERIFY_MAX_AGENTS);
    let mut failures = Vec::new();
    for (i, x) in agents.iter().enumerate().step_by(stride) {
        let conj_pipeline = Pipeline::new(s.classifiers.clone(), Mode::Conjunction)?;
        let conj = conjunction_response(&conj_pipeline, x, &s.cost, &run.options).map_err(|e| agent_error(e, i))?;
        let grid = oracle_grid(x, &s.cost, conj.total_cost(), run.grid_res);
        for mode in [Mode::Sequential, Mode::Conjunction] {
            let pipeline = conj_pipeline.with_mode(mode);
            let plan: ManipulationPlan = match mode {
                Mode::Sequential => {
                    sequential_response(&pipeline, x, &s.cost, &run.options).map_err(|e| agent_error(e, i))?
                }
                Mode::Conjunction => conj.clone(),
            };
            let solver = plan.total_cost();
            let closed = closed_form_cost(&pipeline, x, &s.cost);
            let certified = match s.cost {
                CostModel::L2 => kkt_check(&plan, &pipeline).ok().map(|c| c.is_certified()),
                _ => None,
            };
            let oracle: Option<OracleResult> = grid.as_ref().and_then(|g| {
                match mode {
                    Mode::Sequential => oracle_sequential(&pipeline, x, &s.cost, g),
                    Mode::Conjunction => oracle_conjunction(&pipeline, x, &s.cost, g),
                }
                .ok()
            });
            let matches = closed.map(|c| (c - solver).abs() <= VERIFY_TOL);
            let slack = VERIFY_TOL * solver.max(1.0);
            let within = oracle
                .as_ref()
                .map(|o| solver <= o.cost + slack && solver >= o.cost - o.error_bound - slack);
            if matches == Some(false) || within == Some(false) || certified == Some(false) {
                failures.push(format!("agent {i} ({mode})"));
            }
            table.push(vec![
                Value::from(i),
                Value::from(mode.as_str()),
                closed.map_or(Value::Null, real),
                real(solver),
                oracle.as_ref().map_or(Value::Null, |o| real(o.cost)),
                oracle.as_ref().map_or(Value::Null, |o| real(o.error_bound)),
                match (&oracle, &grid) {
                    (Some(_), Some(g)) => real(g.resolution),
                    _ => Value::Null,
                },
                certified.map_or(Value::Null, Value::from),
                matches.map_or(Value::Null, Value::from),
                within.map_or(Value::Null, Value::from),
            ]);
        }
    }
    let mut metadata = run.metadata();
    metadata["agent_stride"] = Value::from(stride);
    match run.format {
        Format::Json => io::write_json(&io::table_document("verify", &table, metadata)?, &run.out)?,
        Format::Csv => io::write_table_csv(&table, &run.out, &metadata)?,
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Other(format!("verification failed for {}", failures.join(", "))))
    }
}
