//! Scenario configuration: JSON text, checked in three passes (unknown keys,
//! types, physical constraints) so that every violation is reported at once.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::intrinsics::{CurrentConfig, LagWindow};
use crate::measure::{AncillaModel, EstimatorMode, SecondMeasurement};
use crate::qgrid::{Grid1D, PotentialModel, PropagatorConfig, Units};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub units: Units,
    pub grid: GridSpec,
    #[serde(default = "free")]
    pub potential: PotentialModel,
    pub initial_state: InitialState,
    pub propagator: PropagatorConfig,
    /// Evolution time; for the measure task, the time between the two
    /// measurements.
    #[serde(default)]
    pub duration: f64,
    #[serde(default)]
    pub ensemble: EnsembleSpec,
    pub task: TaskSpec,
}

fn free() -> PotentialModel {
    PotentialModel::Free
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialState {
    /// `width` is the standard deviation of the density.
    Gaussian {
        center: f64,
        width: f64,
        #[serde(default)]
        momentum: f64,
    },
    /// Eigenstate of the initial Hamiltonian, discretized as the propagator
    /// discretizes it.
    Eigenstate {
        index: usize,
    },
    Superposition {
        components: Vec<Component>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub index: usize,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// RK4 steps per output interval for trajectories.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_n() -> usize {
    1000
}

fn default_seed() -> u64 {
    crate::seed::DEFAULT_SEED
}

fn default_substeps() -> usize {
    4
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self { n: default_n(), seed: default_seed(), substeps: default_substeps() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Position,
    Momentum,
    /// Initial Hamiltonian, optionally restricted to its lowest levels.
    Hamiltonian {
        #[serde(default)]
        truncate: Option<usize>,
    },
    Window {
        a: f64,
        b: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Propagate,
    Trajectories {
        #[serde(default = "default_bins")]
        bins: usize,
    },
    Weakvalue {
        operator: OperatorSpec,
        #[serde(default = "one")]
        frame_stride: usize,
    },
    Work {
        t1: f64,
        t2: f64,
    },
    Dwell {
        region: [f64; 2],
        #[serde(default = "yes")]
        require_exit: bool,
        #[serde(default = "yes")]
        check_horizon: bool,
    },
    Psd {
        current: CurrentConfig,
        horizon: f64,
        #[serde(default)]
        window: LagWindow,
    },
    Measure {
        s: OperatorSpec,
        g: OperatorSpec,
        ancilla: AncillaModel,
        #[serde(default)]
        second: SecondMeasurement,
        /// Post-selected eigenvalue of `g` (nearest eigenvalue is used).
        post_selection: f64,
        #[serde(default = "monte_carlo")]
        mode: EstimatorMode,
        /// Also write the joint outcome distribution.
        #[serde(default)]
        joint: bool,
    },
    Validate {
        /// Per-criterion multiplier on every tolerance.
        #[serde(default, deserialize_with = "criterion_keys")]
        tolerance_scale: BTreeMap<u32, f64>,
        #[serde(default)]
        only: Vec<u32>,
    },
}

/// JSON object keys are strings; criterion ids are parsed from them.
fn criterion_keys<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeMap<u32, f64>, D::Error> {
    let raw = BTreeMap::<String, f64>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<u32>()
                .map(|id| (id, v))
                .map_err(|_| serde::de::Error::custom(format!("criterion id `{k}` is not an integer")))
        })
        .collect()
}

fn default_bins() -> usize {
    20
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn monte_carlo() -> EstimatorMode {
    EstimatorMode::MonteCarlo
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::Propagate => "propagate",
            TaskSpec::Trajectories { .. } => "trajectories",
            TaskSpec::Weakvalue { .. } => "weakvalue",
            TaskSpec::Work { .. } => "work",
            TaskSpec::Dwell { .. } => "dwell",
            TaskSpec::Psd { .. } => "psd",
            TaskSpec::Measure { .. } => "measure",
            TaskSpec::Validate { .. } => "validate",
        }
    }
}

pub const TASK_NAMES: [&str; 8] =
    ["propagate", "trajectories", "weakvalue", "work", "dwell", "psd", "measure", "validate"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted path of the offending key, e.g. `initial_state.width`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub struct ConfigError {
    pub violations: Vec<Violation>,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration error(s)", self.violations.len())?;
        for v in &self.violations {
            write!(f, "\n  {v}")?;
        }
        Ok(())
    }
}

impl ConfigError {
    fn single(path: &str, message: impl Into<String>) -> Self {
        Self { violations: vec![Violation { path: path.into(), message: message.into() }] }
    }
}

/// Parses and validates a configuration. Errors list every violation found
/// in the failing pass.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigError::single("", format!("invalid JSON: {e}")))?;
    let mut violations = Vec::new();
    check_keys(&value, &mut violations);
    if !violations.is_empty() {
        return Err(ConfigError { violations });
    }
    let cfg: ScenarioConfig = serde_json::from_value(value).map_err(|e| ConfigError::single("", e.to_string()))?;
    let violations = cfg.violations();
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError { violations })
    }
}

impl ScenarioConfig {
    /// Canonical text: pretty JSON with every default written out.
    pub fn normalized(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the normalized text, hex encoded.
    pub fn hash(&self) -> String {
        use sha2::Digest;
        let digest = sha2::Sha256::digest(self.normalized().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid(&self) -> Result<Grid1D, ConfigError> {
        Grid1D::new(self.grid.x_min, self.grid.x_max, self.grid.n)
            .map_err(|e| ConfigError::single("grid", e.to_string()))
    }

    /// Physical and structural constraints, all collected.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut bad = |path: &str, msg: String| out.push(Violation { path: path.into(), message: msg });
        for (name, v) in [("hbar", self.units.hbar), ("mass", self.units.mass)] {
            if !(v > 0.0) || !v.is_finite() {
                bad(&format!("units.{name}"), format!("must be positive, got {v}"));
            }
        }
        if !self.units.charge.is_finite() {
            bad("units.charge", "must be finite".into());
        }
        let grid = match self.grid() {
            Ok(g) => Some(g),
            Err(e) => {
                bad("grid", e.violations[0].message.clone());
                None
            }
        };
        if let Some(g) = &grid {
            if let Err(e) = self.potential.validate(g) {
                bad("potential", e.to_string());
            }
        }
        match &self.initial_state {
            InitialState::Gaussian { center, width, momentum } => {
                if !(*width > 0.0) || !width.is_finite() {
                    bad("initial_state.width", format!("must be positive, got {width}"));
                }
                if !momentum.is_finite() {
                    bad("initial_state.momentum", "must be finite".into());
                }
                if let Some(g) = &grid {
                    if !g.contains(*center) {
                        bad("initial_state.center", format!("{center} lies outside the grid"));
                    }
                }
            }
            InitialState::Eigenstate { .. } => {}
            InitialState::Superposition { components } => {
                if components.is_empty() {
                    bad("initial_state.components", "needs at least one component".into());
                }
                if components.iter().all(|c| c.re == 0.0 && c.im == 0.0) {
                    bad("initial_state.components", "all amplitudes are zero".into());
                }
            }
        }
        if !(self.propagator.dt > 0.0) || !self.propagator.dt.is_finite() {
            bad("propagator.dt", format!("must be positive, got {}", self.propagator.dt));
        }
        if self.propagator.steps_per_output == 0 {
            bad("propagator.steps_per_output", "must be at least 1".into());
        }
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            bad("duration", format!("must be non-negative, got {}", self.duration));
        }
        if self.ensemble.n == 0 {
            bad("ensemble.n", "must be at least 1".into());
        }
        if self.ensemble.substeps == 0 {
            bad("ensemble.substeps", "must be at least 1".into());
        }
        let needs_time = !matches!(self.task, TaskSpec::Validate { .. } | TaskSpec::Propagate);
        if needs_time && !(self.duration > 0.0) {
            bad("duration", format!("task {} needs a positive duration", self.task.name()));
        }
        let op_check = |path: &str, op: &OperatorSpec, bad: &mut dyn FnMut(&str, String)| match op {
            OperatorSpec::Window { a, b } if !(b > a) => bad(path, format!("window needs a < b, got [{a}, {b}]")),
            OperatorSpec::Hamiltonian { truncate: Some(0) } => {
                bad(&format!("{path}.truncate"), "must be at least 1".into())
            }
            _ => {}
        };
        match &self.task {
            TaskSpec::Propagate => {}
            TaskSpec::Validate { tolerance_scale, only } => {
                let known = 1..=crate::harness::acceptance::CRITERIA.len() as u32;
                for id in tolerance_scale.keys().chain(only) {
                    if !known.contains(id) {
                        bad("task", format!("unknown criterion {id}; ids run from 1 to {}", known.end()));
                    }
                }
                for (id, s) in tolerance_scale {
                    if !(*s >= 0.0) || !s.is_finite() {
                        bad(&format!("task.tolerance_scale.{id}"), format!("must be finite and non-negative, got {s}"));
                    }
                }
            }
            TaskSpec::Trajectories { bins } => {
                if *bins == 0 {
                    bad("task.bins", "must be at least 1".into());
                }
            }
            TaskSpec::Weakvalue { operator, frame_stride } => {
                op_check("task.operator", operator, &mut bad);
                if *frame_stride == 0 {
                    bad("task.frame_stride", "must be at least 1".into());
                }
            }
            TaskSpec::Work { t1, t2 } => {
                if !(*t1 >= 0.0 && t2 > t1 && *t2 <= self.duration + 1e-12) {
                    bad("task.t2", format!("need 0 <= t1 < t2 <= duration, got t1 = {t1}, t2 = {t2}"));
                }
            }
            TaskSpec::Dwell { region, .. } => {
                if !(region[1] > region[0]) {
                    bad("task.region", format!("need a < b, got [{}, {}]", region[0], region[1]));
                }
            }
            TaskSpec::Psd { current, horizon, .. } => {
                if let Err(e) = current.validate() {
                    bad("task.current", e.to_string());
                }
                if !(*horizon > 0.0 && *horizon < self.duration) {
                    bad("task.horizon", format!("need 0 < horizon < duration, got {horizon}"));
                }
            }
            TaskSpec::Measure { s, g, ancilla, second, post_selection, .. } => {
                op_check("task.s", s, &mut bad);
                op_check("task.g", g, &mut bad);
                if !(ancilla.sigma > 0.0) || !ancilla.sigma.is_finite() {
                    bad("task.ancilla.sigma", format!("must be positive, got {}", ancilla.sigma));
                }
                if !(ancilla.lambda > 0.0) || !ancilla.lambda.is_finite() {
                    bad("task.ancilla.lambda", format!("must be positive, got {}", ancilla.lambda));
                }
                if let SecondMeasurement::Gaussian { sigma } = second {
                    if !(*sigma > 0.0) {
                        bad("task.second.sigma", format!("must be positive, got {sigma}"));
                    }
                }
                if !post_selection.is_finite() {
                    bad("task.post_selection", "must be finite".into());
                }
            }
        }
        out
    }
}

/// Nearest candidate by edit distance, if any is reasonably close.
pub fn nearest<'a>(key: &str, candidates: &[&'a str]) -> Option<&'a str> {
    candidates
        .iter()
        .map(|c| (strsim::normalized_damerau_levenshtein(key, c), *c))
        .filter(|(s, _)| *s > 0.3)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c)
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn object<'v>(v: &'v Value, path: &str, out: &mut Vec<Violation>) -> Option<&'v Map<String, Value>> {
    match v {
        Value::Object(m) => Some(m),
        _ => {
            out.push(Violation { path: path.into(), message: "expected an object".into() });
            None
        }
    }
}

fn allow(m: &Map<String, Value>, path: &str, allowed: &[&str], out: &mut Vec<Violation>) {
    for key in m.keys() {
        if !allowed.contains(&key.as_str()) {
            let message = match nearest(key, allowed) {
                Some(n) => format!("unknown key `{key}`; did you mean `{n}`?"),
                None => format!("unknown key `{key}`; expected one of {}", allowed.join(", ")),
            };
            out.push(Violation { path: join(path, key), message });
        }
    }
}

/// Dispatches on the `kind` field of a tagged object.
fn kind<'v>(
    m: &'v Map<String, Value>,
    path: &str,
    variants: &[(&'static str, &'static [&'static str])],
    out: &mut Vec<Violation>,
) -> Option<&'v str> {
    let names: Vec<&str> = variants.iter().map(|v| v.0).collect();
    let Some(k) = m.get("kind").and_then(Value::as_str) else {
        out.push(Violation {
            path: join(path, "kind"),
            message: format!("missing; expected one of {}", names.join(", ")),
        });
        return None;
    };
    match variants.iter().find(|v| v.0 == k) {
        Some((_, fields)) => {
            let mut allowed = vec!["kind"];
            allowed.extend_from_slice(fields);
            allow(m, path, &allowed, out);
            Some(k)
        }
        None => {
            let hint = nearest(k, &names).map(|n| format!("; did you mean `{n}`?")).unwrap_or_default();
            out.push(Violation { path: join(path, "kind"), message: format!("unknown kind `{k}`{hint}") });
            None
        }
    }
}

fn check_keys(v: &Value, out: &mut Vec<Violation>) {
    let Some(root) = object(v, "", out) else { return };
    allow(
        root,
        "",
        &["units", "grid", "potential", "initial_state", "propagator", "duration", "ensemble", "task"],
        out,
    );
    let plain = |key: &str, allowed: &[&str], out: &mut Vec<Violation>| {
        if let Some(m) = root.get(key).and_then(|v| object(v, key, out)) {
            allow(m, key, allowed, out);
        }
    };
    plain("units", &["hbar", "mass", "charge"], out);
    plain("grid", &["x_min", "x_max", "n"], out);
    plain("propagator", &["dt", "method", "steps_per_output"], out);
    plain("ensemble", &["n", "seed", "substeps"], out);
    if let Some(p) = root.get("potential") {
        check_potential(p, "potential", out);
    }
    if let Some(m) = root.get("initial_state").and_then(|v| object(v, "initial_state", out)) {
        let k = kind(
            m,
            "initial_state",
            &[
                ("gaussian", &["center", "width", "momentum"]),
                ("eigenstate", &["index"]),
                ("superposition", &["components"]),
            ],
            out,
        );
        if k == Some("superposition") {
            if let Some(Value::Array(items)) = m.get("components") {
                for (i, c) in items.iter().enumerate() {
                    let path = format!("initial_state.components[{i}]");
                    if let Some(cm) = object(c, &path, out) {
                        allow(cm, &path, &["index", "re", "im"], out);
                    }
                }
            }
        }
    }
    if let Some(m) = root.get("task").and_then(|v| object(v, "task", out)) {
        check_task(m, out);
    }
}

fn check_potential(v: &Value, path: &str, out: &mut Vec<Violation>) {
    let Some(m) = object(v, path, out) else { return };
    let k = kind(
        m,
        path,
        &[
            ("free", &[]),
            ("barrier", &["height", "left", "right"]),
            ("harmonic", &["omega", "center"]),
            ("drive", &["amplitude", "t_on", "t_off", "envelope"]),
            ("sum", &["terms"]),
        ],
        out,
    );
    if k == Some("sum") {
        if let Some(Value::Array(items)) = m.get("terms") {
            for (i, t) in items.iter().enumerate() {
                check_potential(t, &format!("{path}.terms[{i}]"), out);
            }
        }
    }
}

fn check_operator(v: &Value, path: &str, out: &mut Vec<Violation>) {
    if let Some(m) = object(v, path, out) {
        kind(
            m,
            path,
            &[("position", &[]), ("momentum", &[]), ("hamiltonian", &["truncate"]), ("window", &["a", "b"])],
            out,
        );
    }
}

fn check_task(m: &Map<String, Value>, out: &mut Vec<Violation>) {
    let k = kind(
        m,
        "task",
        &[
            ("propagate", &[]),
            ("trajectories", &["bins"]),
            ("weakvalue", &["operator", "frame_stride"]),
            ("work", &["t1", "t2"]),
            ("dwell", &["region", "require_exit", "check_horizon"]),
            ("psd", &["current", "horizon", "window"]),
            ("measure", &["s", "g", "ancilla", "second", "post_selection", "mode", "joint"]),
            ("validate", &["tolerance_scale", "only"]),
        ],
        out,
    );
    match k {
        Some("weakvalue") => {
            if let Some(op) = m.get("operator") {
                check_operator(op, "task.operator", out);
            }
        }
        Some("psd") => {
            if let Some(c) = m.get("current").and_then(|v| object(v, "task.current", out)) {
                allow(c, "task.current", &["length", "charge"], out);
            }
        }
        Some("measure") => {
            for key in ["s", "g"] {
                if let Some(op) = m.get(key) {
                    check_operator(op, &format!("task.{key}"), out);
                }
            }
            if let Some(a) = m.get("ancilla").and_then(|v| object(v, "task.ancilla", out)) {
                allow(a, "task.ancilla", &["sigma", "lambda", "min_points"], out);
            }
            if let Some(s) = m.get("second").and_then(|v| object(v, "task.second", out)) {
                kind(s, "task.second", &[("projective", &[]), ("gaussian", &["sigma"])], out);
            }
        }
        _ => {}
    }
}
