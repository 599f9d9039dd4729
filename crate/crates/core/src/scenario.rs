//! Scenario files: parsing, validation, execution into a run directory, and
//! parameter sweeps.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! name = "heterogeneous"
//! output = "runs/heterogeneous"      # optional, overridden by --out
//!
//! [domain]
//! extents = [1.0]                    # side lengths; two entries for 2D
//! cells = [128]
//!
//! [model]
//! species = 2                        # optional, inferred from A or m
//! A = [[2, 1], [1, 2]]               # or A_table = "a.csv"
//! m = ["3 + sin(2*pi*x)", "3 + cos(2*pi*x)"]   # numbers or expressions; or m_table
//! kappa_tol = 1e-10
//!
//! [initial]
//! u0 = [0.5, 0.5]                    # or "ideal_free", "extinction:{1}", "extinction:{1}+1e-3"; or u0_table
//!
//! [solver]
//! dt = "auto"                        # or a number
//! t_end = 20.0
//!
//! [diagnostics]
//! checks = ["am4", "edi", "decay"]
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;
use toml::{Table, Value};

use crate::diagnostics::{
    self, beckner_sup, fit_decay_rate, grad_estimate_audit, ode_oracle, refinement_study, verify_edi,
    DiagnosticsReport, FitWindow, Flag, ProbeReport, RefinementLevel, RefinementTable, DEFAULT_EDI_TOL_SCALE,
    DEFAULT_TRANSIENT_FRACTION, ORACLE_RTOL,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::functionals;
use crate::grid::{write_field_csv, CellField, Grid};
use crate::io::{fmt17, read_numeric_csv, sha256_hex, write_file};
use crate::model::{
    check_am4, critical_entropy, partial_extinction_state, Am4Report, CriticalEntropy, ExtinctionPattern,
    MatrixField, ProblemData, VectorField, DEFAULT_KAPPA_TOL,
};
use crate::par;
use crate::solver::{run, ReactionScheme, SolverConfig, TimeStep, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioIssue {
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "line {l}, column {c}: {}", self.message),
            (Some(l), None) => write!(f, "line {l}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

/// One entry of a per-species vector input.
#[derive(Debug, Clone, PartialEq)]
pub enum Component {
    Number(f64),
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum MatrixSpec {
    Constant(Vec<Vec<f64>>),
    /// Per-cell rows of `N²` row-major entries.
    Table { path: PathBuf, rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Components(Vec<Component>),
    /// Per-cell rows of `N` entries.
    Table { path: PathBuf, rows: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialSpec {
    Field(FieldSpec),
    IdealFree,
    Extinction { pattern: ExtinctionPattern, eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Check {
    Am4,
    Subcritical,
    Edi,
    Decay,
    Beckner,
    Grad,
    Probe,
    Oracle,
}

impl FromStr for Check {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "am4" => Check::Am4,
            "subcritical" => Check::Subcritical,
            "edi" => Check::Edi,
            "decay" => Check::Decay,
            "beckner" => Check::Beckner,
            "grad" => Check::Grad,
            "probe" => Check::Probe,
            "oracle" => Check::Oracle,
            _ => return Err(format!("unknown check '{s}'")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsSpec {
    pub checks: Vec<Check>,
    pub edi_tol_scale: f64,
    pub decay_window: FitWindow,
    pub min_r2: f64,
    /// Require `E(t_end) ≤ decay_ratio · E(0)` when set.
    pub decay_ratio: Option<f64>,
    pub probe_pattern: Option<String>,
    pub probe_eta: f64,
    pub probe_window: f64,
    pub oracle_tol: f64,
}

impl Default for DiagnosticsSpec {
    fn default() -> Self {
        DiagnosticsSpec {
            checks: vec![Check::Am4, Check::Edi],
            edi_tol_scale: DEFAULT_EDI_TOL_SCALE,
            decay_window: FitWindow::DiscardFraction(DEFAULT_TRANSIENT_FRACTION),
            min_r2: 0.99,
            decay_ratio: None,
            probe_pattern: None,
            probe_eta: 1e-3,
            probe_window: 0.5,
            oracle_tol: 1e-3,
        }
    }
}

impl DiagnosticsSpec {
    pub fn wants(&self, c: Check) -> bool {
        self.checks.contains(&c)
    }
}

/// A validated scenario together with the grid, data and initial state it
/// describes.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub source: String,
    pub output: Option<PathBuf>,
    pub lengths: Vec<f64>,
    pub cells: Vec<usize>,
    pub n_species: usize,
    pub a: MatrixSpec,
    pub m: FieldSpec,
    pub u0: InitialSpec,
    pub kappa_tol: f64,
    pub solver: SolverConfig,
    pub diagnostics: DiagnosticsSpec,
    grid: Grid,
    data: ProblemData,
    initial: CellField,
}

impl Scenario {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn initial_state(&self) -> &CellField {
        &self.initial
    }

    /// Rebuilds grid, data and initial state after editing the public fields.
    pub fn rebuild(mut self) -> Result<Self> {
        let (grid, data, initial) = build(&self).map_err(Error::Scenario)?;
        self.grid = grid;
        self.data = data;
        self.initial = initial;
        Ok(self)
    }

    /// The run directory: `out` if given, else the scenario's own, else
    /// `runs/<name>`.
    pub fn output_dir(&self, out: Option<&Path>) -> PathBuf {
        out.map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .unwrap_or_else(|| Path::new("runs").join(&self.name))
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    parse_scenario_in(text, Path::new("."))
}

/// Reads a scenario file; table paths resolve against its directory.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_scenario_in(&text, base)
}

const TOP_KEYS: &[&str] = &["name", "output", "domain", "model", "initial", "solver", "diagnostics"];
const DOMAIN_KEYS: &[&str] = &["extents", "cells"];
const MODEL_KEYS: &[&str] = &["species", "A", "A_table", "m", "m_table", "kappa_tol"];
const INITIAL_KEYS: &[&str] = &["u0", "u0_table"];
const SOLVER_KEYS: &[&str] = &[
    "dt",
    "t_end",
    "cfl_safety",
    "delta",
    "truncation_M",
    "reaction_scheme",
    "snapshot_stride",
    "snapshot_interval",
    "keep_states",
];
const DIAGNOSTICS_KEYS: &[&str] = &[
    "checks",
    "edi_tol_scale",
    "decay_window",
    "decay_discard",
    "min_r2",
    "decay_ratio",
    "probe_pattern",
    "probe_eta",
    "probe_window",
    "oracle_tol",
];

/// Snapshots per run when neither stride nor interval is given.
const DEFAULT_SNAPSHOTS: f64 = 200.0;

struct Ctx<'a> {
    text: &'a str,
    base: &'a Path,
    issues: Vec<ScenarioIssue>,
}

impl Ctx<'_> {
    fn issue(&mut self, section: &str, key: &str, message: impl Into<String>) {
        let (line, column) = locate(self.text, section, key);
        self.issues.push(ScenarioIssue {
            line,
            column,
            message: message.into(),
        });
    }

    fn section<'t>(&mut self, root: &'t Table, name: &str, allowed: &[&str]) -> Option<&'t Table> {
        let t = match root.get(name) {
            None => return None,
            Some(Value::Table(t)) => t,
            Some(_) => {
                self.issue("", name, format!("'{name}' must be a section"));
                return None;
            }
        };
        for key in t.keys() {
            if !allowed.contains(&key.as_str()) {
                self.issue(name, key, format!("unknown key '{key}' in [{name}]"));
            }
        }
        Some(t)
    }

    fn number(&mut self, t: Option<&Table>, section: &str, key: &str) -> Option<f64> {
        let v = t?.get(key)?;
        match as_f64(v) {
            Some(x) => Some(x),
            None => {
                self.issue(section, key, format!("'{key}' must be a number"));
                None
            }
        }
    }

    fn positive(&mut self, t: Option<&Table>, section: &str, key: &str) -> Option<f64> {
        let v = self.number(t, section, key)?;
        if v.is_finite() && v > 0.0 {
            Some(v)
        } else {
            self.issue(section, key, format!("'{key}' must be positive, got {v}"));
            None
        }
    }

    fn table_file(&mut self, section: &str, key: &str, v: &Value, width: usize) -> Option<(PathBuf, Vec<Vec<f64>>)> {
        let Some(rel) = v.as_str() else {
            self.issue(section, key, format!("'{key}' must be a file path"));
            return None;
        };
        let path = self.base.join(rel);
        match read_numeric_csv(&path) {
            Ok((header, rows)) => {
                if header.len() != width {
                    self.issue(
                        section,
                        key,
                        format!("{} has {} columns, expected {width}", path.display(), header.len()),
                    );
                    return None;
                }
                Some((path, rows))
            }
            Err(e) => {
                self.issue(section, key, e.to_string());
                None
            }
        }
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(f) => Some(*f),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

/// Line and column of `key` inside `[section]` (top level for ""), or of the
/// section header when the key is absent.
fn locate(text: &str, section: &str, key: &str) -> (Option<usize>, Option<usize>) {
    let mut current = String::new();
    let mut header = None;
    for (n, line) in text.lines().enumerate() {
        let body = line.trim_start();
        let indent = line.len() - body.len();
        if let Some(rest) = body.strip_prefix('[') {
            let inner = rest.split(']').next().unwrap_or("").trim();
            current = inner.to_string();
            if current == section {
                header = Some((n + 1, indent + 1));
            }
            continue;
        }
        if current != section || key.is_empty() {
            continue;
        }
        let unquoted = body.trim_start_matches('"');
        let offset = body.len() - unquoted.len();
        if let Some(rest) = unquoted.strip_prefix(key) {
            let rest = rest.trim_start_matches('"').trim_start();
            if rest.starts_with('=') {
                let col = line[..indent + offset].chars().count() + 1;
                return (Some(n + 1), Some(col));
            }
        }
    }
    match header {
        Some((l, c)) => (Some(l), Some(c)),
        None => (None, None),
    }
}

fn byte_to_line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().unwrap_or("").chars().count() + 1;
    (line, col)
}

pub fn parse_scenario_in(text: &str, base: &Path) -> Result<Scenario> {
    let root: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            let e: toml::de::Error = e;
            let (line, column) = match e.span() {
                Some(span) => {
                    let (l, c) = byte_to_line_col(text, span.start);
                    (Some(l), Some(c))
                }
                None => (None, None),
            };
            return Err(Error::Scenario(vec![ScenarioIssue {
                line,
                column,
                message: format!("syntax error: {}", e.message()),
            }]));
        }
    };
    let mut cx = Ctx {
        text,
        base,
        issues: Vec::new(),
    };
    for key in root.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            cx.issue("", key, format!("unknown top-level key '{key}'"));
        }
    }

    let name = match root.get("name") {
        None => "scenario".to_string(),
        Some(Value::String(s)) if is_safe_name(s) => s.clone(),
        Some(_) => {
            cx.issue("", "name", "name must be a nonempty string of letters, digits, '-', '_' or '.'");
            "scenario".to_string()
        }
    };
    let output = match root.get("output") {
        None => None,
        Some(Value::String(s)) => Some(base.join(s)),
        Some(_) => {
            cx.issue("", "output", "output must be a path string");
            None
        }
    };

    let domain = cx.section(&root, "domain", DOMAIN_KEYS);
    let model = cx.section(&root, "model", MODEL_KEYS);
    let initial = cx.section(&root, "initial", INITIAL_KEYS);
    let solver_t = cx.section(&root, "solver", SOLVER_KEYS);
    let diag_t = cx.section(&root, "diagnostics", DIAGNOSTICS_KEYS);

    // domain
    let lengths = match domain.and_then(|d| d.get("extents")) {
        None => vec![1.0],
        Some(v) => number_list(&mut cx, "domain", "extents", v).unwrap_or_else(|| vec![1.0]),
    };
    let cells = match domain.and_then(|d| d.get("cells")) {
        None => vec![64; lengths.len()],
        Some(v) => match number_list(&mut cx, "domain", "cells", v) {
            Some(c) if c.iter().all(|x| x.fract() == 0.0 && *x >= 2.0) => c.iter().map(|&x| x as usize).collect(),
            Some(_) => {
                cx.issue("domain", "cells", "cells must be integers of at least 2");
                vec![64; lengths.len()]
            }
            None => vec![64; lengths.len()],
        },
    };
    if lengths.len() != cells.len() || !(1..=2).contains(&lengths.len()) {
        cx.issue("domain", "cells", "extents and cells need one or two matching entries");
    }

    // species count
    let declared = match model.and_then(|m| m.get("species")) {
        None => None,
        Some(Value::Integer(n)) if *n >= 1 => Some(*n as usize),
        Some(_) => {
            cx.issue("model", "species", "species must be a positive integer");
            None
        }
    };
    let inferred = model
        .and_then(|m| m.get("A"))
        .and_then(Value::as_array)
        .map(Vec::len)
        .or_else(|| model.and_then(|m| m.get("m")).and_then(Value::as_array).map(Vec::len));
    let n = match (declared, inferred) {
        (Some(d), _) => d,
        (None, Some(i)) if i >= 1 => i,
        _ => {
            cx.issue("model", "", "cannot determine the number of species; set model.species");
            1
        }
    };

    // A
    let a = match (model.and_then(|m| m.get("A")), model.and_then(|m| m.get("A_table"))) {
        (Some(_), Some(_)) => {
            cx.issue("model", "A_table", "give either A or A_table, not both");
            None
        }
        (Some(v), None) => parse_matrix(&mut cx, v, n).map(MatrixSpec::Constant),
        (None, Some(v)) => cx
            .table_file("model", "A_table", v, n * n)
            .map(|(path, rows)| MatrixSpec::Table { path, rows }),
        (None, None) => {
            cx.issue("model", "", "model needs an interaction matrix A or A_table");
            None
        }
    };

    // m
    let m = match (model.and_then(|t| t.get("m")), model.and_then(|t| t.get("m_table"))) {
        (Some(_), Some(_)) => {
            cx.issue("model", "m_table", "give either m or m_table, not both");
            None
        }
        (Some(v), None) => parse_components(&mut cx, "model", "m", v, n).map(FieldSpec::Components),
        (None, Some(v)) => cx
            .table_file("model", "m_table", v, n)
            .map(|(path, rows)| FieldSpec::Table { path, rows }),
        (None, None) => {
            cx.issue("model", "", "model needs resources m or m_table");
            None
        }
    };
    let kappa_tol = match cx.number(model, "model", "kappa_tol") {
        Some(k) if k >= 0.0 => k,
        Some(k) => {
            cx.issue("model", "kappa_tol", format!("kappa_tol must be nonnegative, got {k}"));
            DEFAULT_KAPPA_TOL
        }
        None => DEFAULT_KAPPA_TOL,
    };

    // u0
    let u0 = match (initial.and_then(|t| t.get("u0")), initial.and_then(|t| t.get("u0_table"))) {
        (Some(_), Some(_)) => {
            cx.issue("initial", "u0_table", "give either u0 or u0_table, not both");
            None
        }
        (None, None) => Some(InitialSpec::IdealFree),
        (None, Some(v)) => cx
            .table_file("initial", "u0_table", v, n)
            .map(|(path, rows)| InitialSpec::Field(FieldSpec::Table { path, rows })),
        (Some(Value::String(s)), None) => parse_initial_keyword(&mut cx, s, n),
        (Some(v), None) => {
            parse_components(&mut cx, "initial", "u0", v, n).map(|c| InitialSpec::Field(FieldSpec::Components(c)))
        }
    };

    let solver = parse_solver(&mut cx, solver_t);
    let diagnostics = parse_diagnostics(&mut cx, diag_t, n);

    let (Some(a), Some(m), Some(u0)) = (a, m, u0) else {
        return Err(Error::Scenario(cx.issues));
    };
    if !cx.issues.is_empty() {
        return Err(Error::Scenario(cx.issues));
    }

    let mut scenario = Scenario {
        name,
        source: text.to_string(),
        output,
        lengths,
        cells,
        n_species: n,
        a,
        m,
        u0,
        kappa_tol,
        solver,
        diagnostics,
        grid: Grid::new_1d(2, 1.0)?,
        data: ProblemData::constant(&[vec![1.0]], &[1.0], 2)?,
        initial: CellField::zeros(1, 2),
    };
    match build(&scenario) {
        Ok((grid, data, initial)) => {
            scenario.grid = grid;
            scenario.data = data;
            scenario.initial = initial;
            Ok(scenario)
        }
        Err(issues) => {
            // relocate build issues onto the most relevant line
            let issues = issues
                .into_iter()
                .map(|mut i| {
                    if i.line.is_none() {
                        let (l, c) = locate(text, "model", "");
                        i.line = l;
                        i.column = c;
                    }
                    i
                })
                .collect();
            Err(Error::Scenario(issues))
        }
    }
}

fn is_safe_name(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn number_list(cx: &mut Ctx, section: &str, key: &str, v: &Value) -> Option<Vec<f64>> {
    let list = match v {
        Value::Array(items) => items.iter().map(as_f64).collect::<Option<Vec<f64>>>(),
        other => as_f64(other).map(|x| vec![x]),
    };
    match list {
        Some(l) if !l.is_empty() && l.iter().all(|x| x.is_finite() && *x > 0.0) => Some(l),
        _ => {
            cx.issue(section, key, format!("'{key}' must be a list of positive numbers"));
            None
        }
    }
}

fn parse_matrix(cx: &mut Ctx, v: &Value, n: usize) -> Option<Vec<Vec<f64>>> {
    let rows: Option<Vec<Vec<f64>>> = v.as_array().and_then(|rows| {
        rows.iter()
            .map(|r| r.as_array().and_then(|r| r.iter().map(as_f64).collect()))
            .collect()
    });
    match rows {
        Some(r) if r.len() == n && r.iter().all(|row| row.len() == n) => Some(r),
        Some(_) => {
            cx.issue("model", "A", format!("A must be a {n}×{n} matrix"));
            None
        }
        None => {
            cx.issue("model", "A", "A must be an array of numeric rows");
            None
        }
    }
}

fn parse_components(cx: &mut Ctx, section: &str, key: &str, v: &Value, n: usize) -> Option<Vec<Component>> {
    let items: Vec<&Value> = match v {
        Value::Array(a) => a.iter().collect(),
        other => vec![other; n],
    };
    if items.len() != n {
        cx.issue(section, key, format!("'{key}' needs {n} entries, found {}", items.len()));
        return None;
    }
    let mut out = Vec::with_capacity(n);
    let mut ok = true;
    for (i, item) in items.into_iter().enumerate() {
        match item {
            Value::String(s) => match Expr::parse(s) {
                Ok(e) => out.push(Component::Expr(e)),
                Err(e) => {
                    ok = false;
                    let (line, col) = locate(cx.text, section, key);
                    cx.issues.push(ScenarioIssue {
                        line,
                        column: col,
                        message: format!("{key}[{}]: expression error at column {}: {}", i + 1, e.column, e.message),
                    });
                }
            },
            other => match as_f64(other) {
                Some(x) if x.is_finite() => out.push(Component::Number(x)),
                _ => {
                    ok = false;
                    cx.issue(section, key, format!("{key}[{}] must be a number or an expression string", i + 1));
                }
            },
        }
    }
    ok.then_some(out)
}

fn parse_initial_keyword(cx: &mut Ctx, s: &str, n: usize) -> Option<InitialSpec> {
    let s = s.trim();
    if s == "ideal_free" {
        return Some(InitialSpec::IdealFree);
    }
    let Some(rest) = s.strip_prefix("extinction:") else {
        cx.issue(
            "initial",
            "u0",
            format!("u0 '{s}' is not \"ideal_free\", \"extinction:{{..}}[+eta]\", or a list"),
        );
        return None;
    };
    let rest = rest.trim();
    let Some(close) = rest.find('}') else {
        cx.issue("initial", "u0", "extinction pattern needs braces, e.g. extinction:{1}");
        return None;
    };
    let pattern = match ExtinctionPattern::parse(&rest[..=close], n) {
        Ok(p) => p,
        Err(e) => {
            cx.issue("initial", "u0", e.to_string());
            return None;
        }
    };
    let tail = rest[close + 1..].trim();
    let eta = if tail.is_empty() {
        0.0
    } else {
        match tail.strip_prefix('+').map(|t| t.trim().parse::<f64>()) {
            Some(Ok(e)) if e.is_finite() && e >= 0.0 => e,
            _ => {
                cx.issue("initial", "u0", format!("cannot read '{tail}' as +eta with eta ≥ 0"));
                return None;
            }
        }
    };
    Some(InitialSpec::Extinction { pattern, eta })
}

fn parse_solver(cx: &mut Ctx, t: Option<&Table>) -> SolverConfig {
    let t_end = cx.positive(t, "solver", "t_end").unwrap_or(1.0);
    let mut c = SolverConfig::new(t_end);
    c.keep_states = true;
    match t.and_then(|t| t.get("dt")) {
        None => {}
        Some(Value::String(s)) if s == "auto" => {}
        Some(_) => {
            if let Some(dt) = cx.positive(t, "solver", "dt") {
                c.dt = TimeStep::Fixed(dt);
            }
        }
    }
    if let Some(v) = cx.number(t, "solver", "cfl_safety") {
        if v > 0.0 && v <= 1.0 {
            c.cfl_safety = v;
        } else {
            cx.issue("solver", "cfl_safety", "cfl_safety must lie in (0, 1]");
        }
    }
    if let Some(v) = cx.number(t, "solver", "delta") {
        if v.is_finite() && v >= 0.0 {
            c.delta = v;
        } else {
            cx.issue("solver", "delta", "delta must be nonnegative");
        }
    }
    match t.and_then(|t| t.get("truncation_M")) {
        None => {}
        Some(Value::String(s)) if s == "inf" => {}
        Some(_) => {
            if let Some(v) = cx.positive(t, "solver", "truncation_M") {
                c.truncation_m = v;
            }
        }
    }
    match t.and_then(|t| t.get("reaction_scheme")) {
        None => {}
        Some(Value::String(s)) if s == "explicit" => c.reaction_scheme = ReactionScheme::Explicit,
        Some(Value::String(s)) if s == "patankar" => c.reaction_scheme = ReactionScheme::Patankar,
        Some(_) => cx.issue("solver", "reaction_scheme", "reaction_scheme must be \"explicit\" or \"patankar\""),
    }
    let stride = match t.and_then(|t| t.get("snapshot_stride")) {
        None => None,
        Some(Value::Integer(k)) if *k >= 1 => Some(*k as usize),
        Some(_) => {
            cx.issue("solver", "snapshot_stride", "snapshot_stride must be a positive integer");
            None
        }
    };
    let interval = cx.positive(t, "solver", "snapshot_interval");
    match (stride, interval) {
        (None, None) => {
            c.snapshot_stride = usize::MAX;
            c.snapshot_interval = Some(t_end / DEFAULT_SNAPSHOTS);
        }
        (s, i) => {
            c.snapshot_stride = s.unwrap_or(usize::MAX);
            c.snapshot_interval = i;
        }
    }
    match t.and_then(|t| t.get("keep_states")) {
        None => {}
        Some(Value::Boolean(b)) => c.keep_states = *b,
        Some(_) => cx.issue("solver", "keep_states", "keep_states must be true or false"),
    }
    c
}

fn parse_diagnostics(cx: &mut Ctx, t: Option<&Table>, n: usize) -> DiagnosticsSpec {
    let mut d = DiagnosticsSpec::default();
    match t.and_then(|t| t.get("checks")) {
        None => {}
        Some(Value::Array(items)) => {
            let mut checks = Vec::new();
            for item in items {
                match item.as_str().map(Check::from_str) {
                    Some(Ok(c)) => checks.push(c),
                    Some(Err(msg)) => cx.issue("diagnostics", "checks", msg),
                    None => cx.issue("diagnostics", "checks", "checks must be strings"),
                }
            }
            checks.sort();
            checks.dedup();
            d.checks = checks;
        }
        Some(_) => cx.issue("diagnostics", "checks", "checks must be a list of names"),
    }
    if let Some(v) = cx.positive(t, "diagnostics", "edi_tol_scale") {
        d.edi_tol_scale = v;
    }
    match (t.and_then(|t| t.get("decay_window")), t.and_then(|t| t.get("decay_discard"))) {
        (Some(_), Some(_)) => cx.issue("diagnostics", "decay_discard", "give either decay_window or decay_discard"),
        (Some(v), None) => match v.as_array().map(|a| a.iter().map(as_f64).collect::<Option<Vec<f64>>>()) {
            Some(Some(w)) if w.len() == 2 && w[0] < w[1] => d.decay_window = FitWindow::Range(w[0], w[1]),
            _ => cx.issue("diagnostics", "decay_window", "decay_window must be [start, end] with start < end"),
        },
        (None, Some(_)) => match cx.number(t, "diagnostics", "decay_discard") {
            Some(f) if (0.0..1.0).contains(&f) => d.decay_window = FitWindow::DiscardFraction(f),
            Some(_) => cx.issue("diagnostics", "decay_discard", "decay_discard must lie in [0, 1)"),
            None => {}
        },
        (None, None) => {}
    }
    if let Some(v) = cx.number(t, "diagnostics", "min_r2") {
        d.min_r2 = v;
    }
    d.decay_ratio = cx.positive(t, "diagnostics", "decay_ratio");
    match t.and_then(|t| t.get("probe_pattern")) {
        None => {}
        Some(Value::String(s)) => match ExtinctionPattern::parse(s, n) {
            Ok(p) if p.cardinality() > 0 => d.probe_pattern = Some(p.to_string()),
            Ok(_) => cx.issue("diagnostics", "probe_pattern", "probe_pattern must name at least one species"),
            Err(e) => cx.issue("diagnostics", "probe_pattern", e.to_string()),
        },
        Some(_) => cx.issue("diagnostics", "probe_pattern", "probe_pattern must be a string like \"{1}\""),
    }
    if let Some(v) = cx.number(t, "diagnostics", "probe_eta") {
        if v.is_finite() && v >= 0.0 {
            d.probe_eta = v;
        } else {
            cx.issue("diagnostics", "probe_eta", "probe_eta must be nonnegative");
        }
    }
    if let Some(v) = cx.positive(t, "diagnostics", "probe_window") {
        d.probe_window = v;
    }
    if let Some(v) = cx.positive(t, "diagnostics", "oracle_tol") {
        d.oracle_tol = v;
    }
    d
}

fn build(s: &Scenario) -> std::result::Result<(Grid, ProblemData, CellField), Vec<ScenarioIssue>> {
    let n = s.n_species;
    let grid = Grid::from_axes(&s.lengths, &s.cells).map_err(|e| {
        let (line, column) = locate(&s.source, "domain", "cells");
        vec![ScenarioIssue {
            line,
            column,
            message: e.to_string(),
        }]
    })?;
    let nc = grid.n_cells();
    let mut issues = Vec::new();
    let at = |section: &str, key: &str, e: String| {
        let (line, column) = locate(&s.source, section, key);
        ScenarioIssue { line, column, message: e }
    };

    let a = match &s.a {
        MatrixSpec::Constant(rows) => Some(MatrixField::uniform(rows)),
        MatrixSpec::Table { path, rows } => {
            if rows.len() != nc {
                issues.push(at(
                    "model",
                    "A_table",
                    format!("{} has {} rows, grid has {nc} cells", path.display(), rows.len()),
                ));
                None
            } else {
                Some(MatrixField::PerCell(rows.concat()))
            }
        }
    };
    let m = match field_values(&s.m, &grid, n) {
        Ok(f) => Some(match &s.m {
            FieldSpec::Components(c) if c.iter().all(|c| matches!(c, Component::Number(_))) => {
                VectorField::Uniform(f.at_cell(0))
            }
            _ => VectorField::PerCell(f),
        }),
        Err(e) => {
            issues.push(at("model", "m_table", e));
            None
        }
    };
    let (Some(a), Some(m)) = (a, m) else {
        return Err(issues);
    };
    let data = match ProblemData::new(n, nc, a, m) {
        Ok(d) => d.with_kappa_tol(s.kappa_tol),
        Err(e) => {
            issues.push(at("model", "A", e.to_string()));
            return Err(issues);
        }
    };

    let initial = match &s.u0 {
        InitialSpec::IdealFree => Ok(data.u_inf().clone()),
        InitialSpec::Extinction { pattern, eta } => partial_extinction_state(&data, pattern)
            .map(|mut u| {
                for i in pattern.extinct() {
                    u.component_mut(i).fill(*eta);
                }
                u
            })
            .map_err(|e| e.to_string()),
        InitialSpec::Field(f) => field_values(f, &grid, n),
    };
    let initial = match initial {
        Ok(u) => u,
        Err(e) => {
            issues.push(at("initial", "u0", e));
            return Err(issues);
        }
    };
    if let Some((i, c, v)) = initial.first_negative() {
        issues.push(at(
            "initial",
            "u0",
            format!("initial density of species {} is negative ({v:e}) at cell {c}", i + 1),
        ));
    }
    if !initial.is_finite() {
        issues.push(at("initial", "u0", "initial density is not finite".to_string()));
    }
    if s.diagnostics.wants(Check::Oracle) {
        let uniform = (0..n).all(|i| initial.component(i).iter().all(|&v| v == initial.get(i, 0)));
        if !data.is_spatially_constant() || !uniform {
            issues.push(at(
                "diagnostics",
                "checks",
                "the oracle check needs constant A, m and u0".to_string(),
            ));
        }
    }
    if let Err(e) = s.solver.validate() {
        issues.push(at("solver", "", e.to_string()));
    }
    if issues.is_empty() {
        Ok((grid, data, initial))
    } else {
        Err(issues)
    }
}

fn field_values(spec: &FieldSpec, grid: &Grid, n: usize) -> std::result::Result<CellField, String> {
    let nc = grid.n_cells();
    match spec {
        FieldSpec::Components(comps) => Ok(CellField::from_fn(n, nc, |i, c| match &comps[i] {
            Component::Number(v) => *v,
            Component::Expr(e) => {
                let [x, y] = grid.cell_center(c);
                e.eval(x, y)
            }
        })),
        FieldSpec::Table { path, rows } => {
            if rows.len() != nc {
                return Err(format!("{} has {} rows, grid has {nc} cells", path.display(), rows.len()));
            }
            Ok(CellField::from_fn(n, nc, |i, c| rows[c][i]))
        }
    }
}

/// Structural report produced without running the solver.
#[derive(Debug, Clone, Serialize)]
pub struct ModelReport {
    pub name: String,
    pub n_species: usize,
    pub n_cells: usize,
    pub ellipticity: [f64; 2],
    pub am4: Am4Report,
    pub critical_entropy: Option<CriticalEntropy>,
    pub critical_entropy_error: Option<String>,
    pub initial_entropy: f64,
    /// `E(u0) < E*`, when `E*` is available.
    pub subcritical: Option<bool>,
}

impl ModelReport {
    pub fn summary(&self) -> String {
        let mut s = format!(
            "scenario {}: {} species on {} cells\nellipticity: [{:e}, {:e}]\n",
            self.name, self.n_species, self.n_cells, self.ellipticity[0], self.ellipticity[1]
        );
        s.push_str(&format!(
            "structural condition: min determinant {:e} ({} evaluated), {}\n",
            self.am4.min_determinant,
            self.am4.evaluated,
            if self.am4.holds { "holds" } else { "VIOLATED" }
        ));
        if let Some(w) = &self.am4.worst {
            s.push_str(&format!(
                "  worst: subset {:?}, species {}, cell {}\n",
                w.subset, w.species, w.cell
            ));
        }
        match (&self.critical_entropy, &self.critical_entropy_error) {
            (Some(c), _) => s.push_str(&format!("critical entropy: {:.12e} at pattern {}\n", c.value, c.argmin)),
            (None, Some(e)) => s.push_str(&format!("critical entropy unavailable: {e}\n")),
            _ => {}
        }
        s.push_str(&format!("initial entropy: {:.12e}", self.initial_entropy));
        match self.subcritical {
            Some(true) => s.push_str(" (subcritical)\n"),
            Some(false) => s.push_str(" (NOT subcritical)\n"),
            None => s.push('\n'),
        }
        s
    }
}

pub fn model_report(s: &Scenario) -> Result<ModelReport> {
    let am4 = check_am4(&s.data);
    let initial_entropy = functionals::entropy(&s.data, &s.grid, &s.initial)?;
    let (critical, err) = match critical_entropy(&s.data, &s.grid) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Ok(ModelReport {
        name: s.name.clone(),
        n_species: s.n_species,
        n_cells: s.grid.n_cells(),
        ellipticity: {
            let (lo, hi) = s.data.ellipticity();
            [lo, hi]
        },
        subcritical: critical.as_ref().map(|c| initial_entropy < c.value),
        am4,
        critical_entropy: critical,
        critical_entropy_error: err,
        initial_entropy,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub check: Check,
    pub passed: bool,
    pub detail: String,
}

/// Contents of `diagnostics.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    #[serde(flatten)]
    pub diagnostics: DiagnosticsReport,
    pub model: ModelReport,
    pub checks: Vec<CheckOutcome>,
    pub probe: Option<ProbeReport>,
    pub steps: usize,
    pub final_entropy: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    /// 0 when every selected check passed, 1 otherwise.
    pub exit_code: i32,
    pub report: RunReport,
    pub grid: Grid,
    pub final_state: CellField,
    pub wall_time: f64,
}

/// Runs the scenario and evaluates the selected checks, without writing.
pub fn evaluate(s: &Scenario) -> Result<(Trajectory, RunReport)> {
    let model = model_report(s)?;
    let traj = run(&s.data, &s.grid, &s.initial, &s.solver)?;
    let spec = &s.diagnostics;
    let mut report = DiagnosticsReport::default();
    let mut checks = Vec::new();
    let mut outcome = |report: &mut DiagnosticsReport, check: Check, flags: Vec<Flag>, detail: String| {
        let passed = flags.is_empty();
        for f in flags {
            report.flag(f);
        }
        checks.push(CheckOutcome { check, passed, detail });
    };

    // always-computed quantities
    let edi = verify_edi(&traj, spec.edi_tol_scale)?;
    report.edi_residuals = edi.intervals.clone();
    let fit = fit_decay_rate(&traj, spec.decay_window);
    report.gamma_fit = fit.as_ref().ok().cloned();
    report.beckner_sup = beckner_sup(&traj);
    let grad = grad_estimate_audit(&traj)?;
    report.grad_bound = Some(grad.clone());

    if spec.wants(Check::Am4) || spec.wants(Check::Decay) {
        let flags = if model.am4.holds {
            vec![]
        } else {
            vec![Flag::new(
                "structural condition",
                None,
                format!(
                    "minimum bordered determinant {:e} below kappa_tol {:e}",
                    model.am4.min_determinant, model.am4.kappa_tol
                ),
            )]
        };
        outcome(&mut report, Check::Am4, flags, format!("min determinant {:e}", model.am4.min_determinant));
    }
    if spec.wants(Check::Subcritical) {
        let flags = match (&model.critical_entropy, model.subcritical) {
            (Some(_), Some(true)) => vec![],
            (Some(c), _) => vec![Flag::new(
                "subcritical initial data",
                Some(0.0),
                format!("E(u0) = {:e} is not below E* = {:e}", model.initial_entropy, c.value),
            )],
            (None, _) => vec![Flag::new(
                "subcritical initial data",
                Some(0.0),
                format!(
                    "critical entropy unavailable: {}",
                    model.critical_entropy_error.clone().unwrap_or_default()
                ),
            )],
        };
        outcome(&mut report, Check::Subcritical, flags, format!("E(u0) = {:e}", model.initial_entropy));
    }
    if spec.wants(Check::Edi) {
        outcome(
            &mut report,
            Check::Edi,
            edi.flags(),
            format!("{} intervals, max |r| {:e}", edi.intervals.len(), edi.max_abs_residual),
        );
    }
    if spec.wants(Check::Decay) {
        let e0 = traj.first().values.entropy;
        let e1 = traj.last().values.entropy;
        let t_end = traj.last().time;
        let mut flags = Vec::new();
        let detail = match &fit {
            Ok(g) => {
                if !(g.gamma > 0.0) || g.r_squared < spec.min_r2 {
                    flags.push(Flag::new(
                        "exponential decay",
                        Some(g.window[1]),
                        format!("gamma {:e} with R^2 {:.6} (need gamma > 0, R^2 >= {})", g.gamma, g.r_squared, spec.min_r2),
                    ));
                }
                format!("gamma {:e}, R^2 {:.6}", g.gamma, g.r_squared)
            }
            Err(e) => {
                let time = match e {
                    Error::EntropyFloor { time } => Some(*time),
                    _ => None,
                };
                flags.push(Flag::new("exponential decay", time, e.to_string()));
                e.to_string()
            }
        };
        if let Some(r) = spec.decay_ratio {
            if !(e1 <= r * e0) {
                flags.push(Flag::new(
                    "entropy reduction",
                    Some(t_end),
                    format!("E(t_end) = {e1:e} exceeds {r:e} * E(0) = {:e}", r * e0),
                ));
            }
        }
        outcome(&mut report, Check::Decay, flags, detail);
    }
    if spec.wants(Check::Beckner) {
        let flags = match report.beckner_sup {
            Some(b) if !b.is_finite() => vec![Flag::new("Poincare-Beckner ratio", None, "ratio is not finite")],
            _ => vec![],
        };
        let detail = format!("sup {:?}", report.beckner_sup);
        outcome(&mut report, Check::Beckner, flags, detail);
    }
    if spec.wants(Check::Grad) {
        let flags = if grad.passed {
            vec![]
        } else {
            vec![Flag::new(
                "cumulative gradient bound",
                Some(traj.last().time),
                format!("super-linear growth, quarter slopes {:?}", grad.quarter_slopes),
            )]
        };
        outcome(&mut report, Check::Grad, flags, format!("C_fit {:e}", grad.c_fit));
    }
    let mut probe = None;
    if spec.wants(Check::Probe) {
        let pattern = match &spec.probe_pattern {
            Some(p) => ExtinctionPattern::parse(p, s.n_species)?,
            None => ExtinctionPattern::new(s.n_species, &[0])?,
        };
        let (flags, detail) = match diagnostics::extinction_instability_probe(
            &s.data,
            &s.grid,
            &pattern,
            spec.probe_eta,
            spec.probe_window,
        ) {
            Ok(p) => {
                let mut flags = Vec::new();
                if !p.fitness_positive {
                    flags.push(Flag::new(
                        "extinction instability",
                        Some(0.0),
                        format!("reintroduced fitness {:e} is not positive", p.min_reintroduced_fitness),
                    ));
                }
                if !p.mass_increasing {
                    flags.push(Flag::new(
                        "extinction instability",
                        None,
                        format!("mass of reintroduced species not strictly increasing on [0, {}]", p.window),
                    ));
                }
                let d = format!("min reintroduced fitness {:e}", p.min_reintroduced_fitness);
                probe = Some(p);
                (flags, d)
            }
            Err(e) => (vec![Flag::new("extinction instability", None, e.to_string())], e.to_string()),
        };
        outcome(&mut report, Check::Probe, flags, detail);
    }
    if spec.wants(Check::Oracle) {
        let u0 = s.initial.at_cell(0);
        let reference = ode_oracle(&s.data, &u0, s.solver.t_end, ORACLE_RTOL)?;
        let fin = traj.final_state();
        let mut err: f64 = 0.0;
        for (i, r) in reference.iter().enumerate() {
            let scale = r.abs().max(f64::MIN_POSITIVE);
            for &v in fin.component(i) {
                err = err.max((v - r).abs() / scale);
            }
        }
        report.oracle_error = Some(err);
        let flags = if err <= spec.oracle_tol {
            vec![]
        } else {
            vec![Flag::new(
                "ODE oracle agreement",
                Some(s.solver.t_end),
                format!("relative error {err:e} above {:e}", spec.oracle_tol),
            )]
        };
        outcome(&mut report, Check::Oracle, flags, format!("relative error {err:e}"));
    }

    let passed = report.passed();
    let run_report = RunReport {
        diagnostics: report,
        model,
        checks,
        probe,
        steps: traj.steps(),
        final_entropy: traj.last().values.entropy,
        passed,
    };
    Ok((traj, run_report))
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    sha256: String,
    bytes: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    version: &'a str,
    scenario: &'a str,
    solver: &'a SolverConfig,
    diagnostics: &'a DiagnosticsSpec,
    grid: &'a Grid,
    data_fingerprint: &'a str,
    config_fingerprint: &'a str,
    passed: bool,
    files: Vec<ManifestFile>,
}

/// Runs the scenario and writes the run directory. Check failures are
/// reported through `exit_code`; execution failures are errors.
pub fn execute(s: &Scenario, dir: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    let (traj, report) = evaluate(s)?;
    let mut files: BTreeMap<String, Vec<u8>> = BTreeMap::new();

    let mut csv = FunctionalsCsv::new(s.n_species);
    for snap in traj.snapshots() {
        csv.push(snap.time, &snap.values);
    }
    files.insert("functionals.csv".into(), csv.finish().into_bytes());

    for snap in traj.snapshots() {
        if let Some(state) = &snap.state {
            let mut buf = format!("# t = {}\n", fmt17(snap.time)).into_bytes();
            write_field_csv(&s.grid, state, &mut buf).map_err(|e| Error::io(dir, e))?;
            files.insert(format!("snapshots/step_{:08}.csv", snap.step), buf);
        }
    }
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    files.insert("diagnostics.json".into(), json.into_bytes());
    files.insert("summary.txt".into(), run_summary(s, &report).into_bytes());

    for (rel, bytes) in &files {
        write_file(&dir.join(rel), bytes)?;
    }
    let manifest = Manifest {
        name: &s.name,
        version: crate::VERSION,
        scenario: &s.source,
        solver: &s.solver,
        diagnostics: &s.diagnostics,
        grid: &s.grid,
        data_fingerprint: traj.data_fingerprint(),
        config_fingerprint: traj.config_fingerprint(),
        passed: report.passed,
        files: files
            .iter()
            .map(|(p, b)| ManifestFile {
                path: p.clone(),
                sha256: sha256_hex(b),
                bytes: b.len(),
            })
            .collect(),
    };
    let mut mj = serde_json::to_string_pretty(&manifest)?;
    mj.push('\n');
    write_file(&dir.join("manifest.json"), mj.as_bytes())?;

    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        exit_code: if report.passed { 0 } else { 1 },
        grid: s.grid.clone(),
        final_state: traj.final_state().clone(),
        report,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

struct FunctionalsCsv {
    out: String,
}

impl FunctionalsCsv {
    fn new(n: usize) -> Self {
        let mut out = functionals::FunctionalValues::csv_header(n);
        out.push('\n');
        FunctionalsCsv { out }
    }

    fn push(&mut self, t: f64, v: &functionals::FunctionalValues) {
        self.out.push_str(&v.csv_row(t));
        self.out.push('\n');
    }

    fn finish(self) -> String {
        self.out
    }
}

fn run_summary(s: &Scenario, r: &RunReport) -> String {
    let mut out = format!(
        "scenario: {}\nsteps: {}\nE(0) = {}\nE(t_end) = {}\n",
        s.name,
        r.steps,
        fmt17(r.model.initial_entropy),
        fmt17(r.final_entropy)
    );
    out.push_str(&r.model.summary());
    for c in &r.checks {
        out.push_str(&format!(
            "check {:?}: {} ({})\n",
            c.check,
            if c.passed { "pass" } else { "FAIL" },
            c.detail
        ));
    }
    out.push_str(&r.diagnostics.summary());
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Dt,
    H,
    Delta,
    M,
    Eta,
}

impl FromStr for SweepParam {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "dt" => SweepParam::Dt,
            "h" => SweepParam::H,
            "delta" => SweepParam::Delta,
            "M" | "m" => SweepParam::M,
            "eta" => SweepParam::Eta,
            _ => return Err(format!("unknown sweep parameter '{s}' (expected dt, h, delta, M, eta)")),
        })
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::Dt => "dt",
            SweepParam::H => "h",
            SweepParam::Delta => "delta",
            SweepParam::M => "M",
            SweepParam::Eta => "eta",
        })
    }
}

/// A copy of the scenario with one parameter replaced.
pub fn with_param(s: &Scenario, param: SweepParam, value: f64) -> Result<Scenario> {
    let mut s = s.clone();
    let bad = |msg: String| Err(Error::Config(msg));
    if value.is_nan() || value <= 0.0 && param != SweepParam::Delta && param != SweepParam::Eta || value < 0.0 {
        return bad(format!("{param} = {value} is out of range"));
    }
    match param {
        SweepParam::Dt => s.solver.dt = TimeStep::Fixed(value),
        SweepParam::Delta => s.solver.delta = value,
        SweepParam::M => s.solver.truncation_m = value,
        SweepParam::H => {
            let mut cells = Vec::new();
            for &len in &s.lengths {
                let k = (len / value).round();
                if k < 2.0 || ((k * value) - len).abs() > 1e-9 * len {
                    return bad(format!("h = {value} does not divide the extent {len}"));
                }
                cells.push(k as usize);
            }
            s.cells = cells;
        }
        SweepParam::Eta => match &mut s.u0 {
            InitialSpec::Extinction { eta, .. } => *eta = value,
            _ if s.diagnostics.wants(Check::Probe) => s.diagnostics.probe_eta = value,
            _ => return bad("an eta sweep needs an extinction initial state or the probe check".into()),
        },
    }
    s.rebuild()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// "pass", "fail" (a check failed) or "error" (the run did not complete).
    pub status: String,
    pub e_end: Option<f64>,
    pub gamma: Option<f64>,
    pub edi_max_abs_residual: Option<f64>,
    pub l2_diff_prev: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub refinement: Option<RefinementTable>,
    /// 0 when every row passed, 1 otherwise.
    pub exit_code: i32,
}

pub fn format_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        fmt17(v)
    }
}

/// One run per value, concurrently on `jobs` workers, each into
/// `dir/run_<k>`; writes `dir/sweep.csv` and `dir/sweep_summary.txt`.
pub fn sweep(s: &Scenario, param: SweepParam, values: &[f64], dir: &Path, jobs: usize) -> Result<SweepOutcome> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    let indexed: Vec<(usize, f64)> = values.iter().copied().enumerate().collect();
    let results: Vec<(f64, Result<RunOutcome>)> = par::map_jobs(jobs, &indexed, |&(k, v)| {
        let t0 = Instant::now();
        let r = with_param(s, param, v).and_then(|sc| execute(&sc, &dir.join(format!("run_{k:03}"))));
        (t0.elapsed().as_secs_f64(), r)
    });

    let mut rows = Vec::new();
    let mut prev: Option<(Grid, CellField)> = None;
    let mut levels = Vec::new();
    for (&v, (wall, r)) in values.iter().zip(results) {
        match r {
            Ok(o) => {
                let l2 = match &prev {
                    Some((g, u)) => diagnostics::l2_distance(g, u, &o.grid, &o.final_state).ok(),
                    None => None,
                };
                prev = Some((o.grid.clone(), o.final_state.clone()));
                levels.push(RefinementLevel {
                    parameter: v,
                    grid: o.grid.clone(),
                    state: o.final_state.clone(),
                });
                rows.push(SweepRow {
                    value: v,
                    status: if o.exit_code == 0 { "pass" } else { "fail" }.into(),
                    e_end: Some(o.report.final_entropy),
                    gamma: o.report.diagnostics.gamma_fit.as_ref().map(|g| g.gamma),
                    edi_max_abs_residual: o
                        .report
                        .diagnostics
                        .edi_residuals
                        .iter()
                        .map(|i| i.residual.abs())
                        .reduce(f64::max),
                    l2_diff_prev: l2,
                    wall_time_s: wall,
                    error: None,
                });
            }
            Err(e) => {
                prev = None;
                rows.push(SweepRow {
                    value: v,
                    status: "error".into(),
                    e_end: None,
                    gamma: None,
                    edi_max_abs_residual: None,
                    l2_diff_prev: None,
                    wall_time_s: wall,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let all_ok = rows.iter().all(|r| r.status == "pass");
    let refinement = if all_ok && levels.len() >= 3 {
        refinement_study(&levels).ok()
    } else {
        None
    };

    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
    let mut csv = String::from("value,status,E_end,gamma,edi_max_abs_residual,l2_diff_prev,wall_time_s\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            format_value(r.value),
            r.status,
            opt(r.e_end),
            opt(r.gamma),
            opt(r.edi_max_abs_residual),
            opt(r.l2_diff_prev),
            r.wall_time_s
        ));
    }
    write_file(&dir.join("sweep.csv"), csv.as_bytes())?;

    let mut summary = format!("sweep over {param}: {} values\n", rows.len());
    for (k, r) in rows.iter().enumerate() {
        summary.push_str(&format!("run_{k:03} {param} = {}: {}", format_value(r.value), r.status));
        if let Some(e) = &r.error {
            summary.push_str(&format!(" ({e})"));
        }
        summary.push('\n');
    }
    if let Some(t) = &refinement {
        summary.push_str(&format!(
            "successive differences {}\n",
            if t.monotone { "shrink monotonically" } else { "do NOT shrink monotonically" }
        ));
        for f in &t.flags {
            summary.push_str(&format!("FLAG {}: {}\n", f.property, f.detail));
        }
    }
    write_file(&dir.join("sweep_summary.txt"), summary.as_bytes())?;

    Ok(SweepOutcome {
        exit_code: if all_ok { 0 } else { 1 },
        rows,
        refinement,
    })
}

/// Parses sweep values: comma-separated numbers, `inf` allowed.
pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            if t == "inf" {
                Ok(f64::INFINITY)
            } else {
                t.parse::<f64>()
                    .map_err(|_| Error::Config(format!("cannot read sweep value '{t}'")))
            }
        })
        .collect()
}
