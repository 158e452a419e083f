//! Run configuration: JSON schema, command-line overrides and loading of
//! referenced files.
//!
//! Precedence, lowest first: built-in defaults, the config file, positional
//! `key=value` overrides, then the named flags (`--seed`, `--blocks`, ...).

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use relaycap::fading_awgn::{FadingModel, GridDensity, QuadratureOptions};
use relaycap::protocol_simulator::StateProcess;
use relaycap::{validate_spec, RelayChannelSpec};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Capacity,
    Simulate,
    Fading,
    OracleCheck,
    Example,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Capacity => "capacity",
            Mode::Simulate => "simulate",
            Mode::Fading => "fading",
            Mode::OracleCheck => "oracle-check",
            Mode::Example => "example",
        }
    }

    /// Section that bare `key=value` overrides land in.
    fn override_prefix(self) -> &'static str {
        match self {
            Mode::Capacity => "solver",
            Mode::Simulate => "sim",
            Mode::Fading => "fading",
            Mode::OracleCheck => "oracle",
            Mode::Example => "example.params",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_SEED: u64 = 1;

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    /// Seeds every random stream of the run.
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub spec: Option<RelayChannelSpec>,
    #[serde(default)]
    pub spec_path: Option<PathBuf>,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub fading: FadingSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub example: Option<ExampleSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    /// Blahut–Arimoto bound-gap tolerance, bits.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self {
            tol: relaycap::mutual_information::DEFAULT_TOL,
            max_iter: relaycap::mutual_information::DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    /// Signed so that a negative count gets a readable error.
    pub blocks: i64,
    /// Absolute rate back-off, bits per channel use.
    pub epsilon: Option<f64>,
    /// Back-off as a fraction of the capacity.
    pub epsilon_rel: Option<f64>,
    /// Trace every n-th block; defaults to 1 when a trace file is requested.
    pub decimation: Option<u64>,
    pub state_process: StateProcess,
    /// Also run the alternating baseline.
    pub baseline: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            blocks: 1_000_000,
            epsilon: None,
            epsilon_rel: None,
            decimation: None,
            state_process: StateProcess::Iid,
            baseline: true,
        }
    }
}

impl SimSection {
    pub fn blocks(&self) -> u64 {
        self.blocks.max(0) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FadingSection {
    pub model: Option<FadingModel>,
    /// JSON file holding a [`GridDensity`].
    pub grid_path: Option<PathBuf>,
    /// Relative balance tolerance of the threshold search.
    pub tol: f64,
    pub nodes: usize,
    pub mc_samples: usize,
    pub force_monte_carlo: bool,
    pub error_threshold: f64,
    /// Also simulate the protocol at the solved threshold.
    pub simulate: bool,
}

impl Default for FadingSection {
    fn default() -> Self {
        let q = QuadratureOptions::default();
        Self {
            model: None,
            grid_path: None,
            tol: 1e-9,
            nodes: q.nodes,
            mc_samples: q.mc_samples,
            force_monte_carlo: q.force_monte_carlo,
            error_threshold: q.error_threshold,
            simulate: false,
        }
    }
}

impl FadingSection {
    pub fn quadrature(&self, seed: u64) -> QuadratureOptions {
        QuadratureOptions {
            nodes: self.nodes,
            mc_samples: self.mc_samples,
            seed,
            force_monte_carlo: self.force_monte_carlo,
            error_threshold: self.error_threshold,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    pub trials: usize,
    /// Grid points per coordinate for the brute-force search.
    pub grid: usize,
    /// Allowed absolute gap, bits.
    pub tol: f64,
    /// Largest state alphabet per hop.
    pub max_states: usize,
    /// Largest channel input/output alphabet.
    pub max_symbols: usize,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { trials: 200, grid: 2001, tol: 2e-3, max_states: 2, max_symbols: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleName {
    Fixed,
    Onoff,
    Rayleigh,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleSection {
    pub name: ExampleName,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    /// Relative tolerance of the expected-vs-computed checks.
    #[serde(default)]
    pub tol: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default)]
    pub report: Option<PathBuf>,
    #[serde(default)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed JSON in {source_name}: {message}")]
    Json { source_name: String, message: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("{path}: cannot read {file}: {source}")]
    File {
        path: String,
        file: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid channel spec:\n{}", .0.iter().map(|(p, m)| format!("  {p}: {m}")).collect::<Vec<_>>().join("\n"))]
    InvalidSpec(Vec<(String, String)>),
    #[error("{0}")]
    Usage(String),
}

impl ConfigError {
    fn schema(path: &str, message: impl Into<String>) -> Self {
        ConfigError::Schema { path: path.to_string(), message: message.into() }
    }
}

/// Flags that override config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub blocks: Option<i64>,
    pub epsilon: Option<f64>,
    pub tol: Option<f64>,
    /// Positional words: `key=value` pairs; in `example` mode the first
    /// bare word is the example name and later bare words set a flag.
    pub params: Vec<String>,
}

/// Parses a config document; relative paths resolve against the working
/// directory.
pub fn parse_config(document: &str) -> Result<RunConfig, ConfigError> {
    let value = parse_json(document, "config")?;
    from_value(value, Path::new("."))
}

/// Builds the run config for a subcommand: optional config file, then
/// overrides.
pub fn load(mode: Mode, config: Option<&Path>, ov: &Overrides) -> Result<RunConfig, ConfigError> {
    let (mut doc, base) = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::File {
                path: "--config".into(),
                file: path.to_path_buf(),
                source,
            })?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (parse_json(&text, &path.display().to_string())?, base)
        }
        None => (Value::Object(Map::new()), PathBuf::from(".")),
    };
    let root = doc
        .as_object_mut()
        .ok_or_else(|| ConfigError::schema(".", "config must be a JSON object"))?;
    match root.get("mode") {
        Some(m) if m != &Value::String(mode.as_str().into()) => {
            return Err(ConfigError::schema(
                ".mode",
                format!("config says {m} but the subcommand is {mode}"),
            ))
        }
        _ => {
            root.insert("mode".into(), Value::String(mode.as_str().into()));
        }
    }
    apply_params(&mut doc, mode, &ov.params)?;
    apply_flags(&mut doc, mode, ov)?;
    from_value(doc, &base)
}

fn parse_json(text: &str, source_name: &str) -> Result<Value, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::Json {
        source_name: source_name.to_string(),
        message: e.to_string(),
    })
}

/// Keys that always address the top level of the config.
const TOP_LEVEL: [&str; 2] = ["seed", "spec_path"];

fn apply_params(doc: &mut Value, mode: Mode, params: &[String]) -> Result<(), ConfigError> {
    let mut named = false;
    for word in params {
        match word.split_once('=') {
            Some((key, raw)) => {
                if key.is_empty() {
                    return Err(ConfigError::Usage(format!("empty key in `{word}`")));
                }
                let path = if key.contains('.') || TOP_LEVEL.contains(&key) {
                    key.to_string()
                } else {
                    format!("{}.{key}", mode.override_prefix())
                };
                // numbers, booleans and arrays parse as JSON; anything else is a string
                let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.into()));
                set_path(doc, &path, value)?;
            }
            None if mode == Mode::Example && !named => {
                set_path(doc, "example.name", Value::String(word.clone()))?;
                named = true;
            }
            None if mode == Mode::Example => {
                set_path(doc, &format!("example.params.{word}"), Value::Bool(true))?;
            }
            None => {
                return Err(ConfigError::Usage(format!("expected key=value, got `{word}`")));
            }
        }
    }
    Ok(())
}

fn apply_flags(doc: &mut Value, mode: Mode, ov: &Overrides) -> Result<(), ConfigError> {
    if let Some(seed) = ov.seed {
        set_path(doc, "seed", seed.into())?;
    }
    if let Some(out) = &ov.out {
        set_path(doc, "output.report", Value::String(out.display().to_string()))?;
    }
    if let Some(blocks) = ov.blocks {
        set_path(doc, "sim.blocks", blocks.into())?;
    }
    if let Some(eps) = ov.epsilon {
        set_path(doc, "sim.epsilon", number(eps)?)?;
    }
    if let Some(tol) = ov.tol {
        let key = match mode {
            Mode::Capacity | Mode::Simulate => "solver.tol",
            Mode::Fading => "fading.tol",
            Mode::OracleCheck => "oracle.tol",
            Mode::Example => "example.tol",
        };
        set_path(doc, key, number(tol)?)?;
    }
    Ok(())
}

fn number(v: f64) -> Result<Value, ConfigError> {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .ok_or_else(|| ConfigError::Usage(format!("{v} is not a finite number")))
}

fn set_path(doc: &mut Value, dotted: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = doc;
    let parts: Vec<&str> = dotted.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            ConfigError::schema(&format!(".{}", parts[..i].join(".")), "cannot override inside a non-object")
        })?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

/// `.a.b[0]` style path for a deserialization error.
fn error_path(err: &serde_path_to_error::Error<serde_json::Error>) -> (String, String) {
    let mut path = String::new();
    for seg in err.path().iter() {
        match seg {
            serde_path_to_error::Segment::Seq { index } => path.push_str(&format!("[{index}]")),
            serde_path_to_error::Segment::Map { key } => path.push_str(&format!(".{key}")),
            serde_path_to_error::Segment::Enum { variant } => path.push_str(&format!(".{variant}")),
            serde_path_to_error::Segment::Unknown => path.push_str(".?"),
        }
    }
    let message = err.inner().to_string();
    // serde reports a missing field at its parent; name the field itself
    if let Some(field) = message.strip_prefix("missing field `").and_then(|m| m.split('`').next()) {
        path.push('.');
        path.push_str(field);
    }
    if path.is_empty() {
        path.push('.');
    }
    (path, message)
}

fn deserialize<T: serde::de::DeserializeOwned>(value: Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let (path, message) = error_path(&e);
        let path = if path == "." && !prefix.is_empty() { prefix.to_string() } else { format!("{prefix}{path}") };
        ConfigError::Schema { path, message }
    })
}

fn read_json(path: &Path, base: &Path, field: &str) -> Result<Value, ConfigError> {
    let full = if path.is_absolute() { path.to_path_buf() } else { base.join(path) };
    let text = std::fs::read_to_string(&full).map_err(|source| ConfigError::File {
        path: field.to_string(),
        file: full.clone(),
        source,
    })?;
    parse_json(&text, &full.display().to_string())
}

fn from_value(value: Value, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut cfg: RunConfig = deserialize(value, "")?;

    if cfg.spec.is_some() && cfg.spec_path.is_some() {
        return Err(ConfigError::schema(".spec_path", "give either spec or spec_path, not both"));
    }
    if let Some(p) = cfg.spec_path.take() {
        let doc = read_json(&p, base, ".spec_path")?;
        cfg.spec = Some(deserialize(doc, ".spec")?);
    }
    if cfg.fading.model.is_some() && cfg.fading.grid_path.is_some() {
        return Err(ConfigError::schema(".fading.grid_path", "give either model or grid_path, not both"));
    }
    if let Some(p) = cfg.fading.grid_path.take() {
        let doc = read_json(&p, base, ".fading.grid_path")?;
        let grid: GridDensity = deserialize(doc, ".fading.grid_path")?;
        cfg.fading.model = Some(FadingModel::Grid(grid));
    }

    check_ranges(&cfg)?;
    match cfg.mode {
        Mode::Capacity | Mode::Simulate => {
            let spec = cfg
                .spec
                .as_ref()
                .ok_or_else(|| ConfigError::schema(".spec", format!("required for mode {}", cfg.mode)))?;
            let violations = validate_spec(spec);
            if !violations.is_empty() {
                return Err(ConfigError::InvalidSpec(
                    violations.into_iter().map(|v| (format!(".spec.{}", v.path), v.message)).collect(),
                ));
            }
        }
        Mode::Fading => {
            let model = cfg
                .fading
                .model
                .as_ref()
                .ok_or_else(|| ConfigError::schema(".fading.model", "required for mode fading (or fading.grid_path)"))?;
            model
                .validate()
                .map_err(|e| ConfigError::schema(".fading.model", e.to_string()))?;
        }
        Mode::Example => {
            if cfg.example.is_none() {
                return Err(ConfigError::schema(".example.name", "required for mode example (fixed, onoff or rayleigh)"));
            }
        }
        Mode::OracleCheck => {}
    }
    Ok(cfg)
}

fn check_ranges(cfg: &RunConfig) -> Result<(), ConfigError> {
    let positive = |v: f64, path: &str| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(ConfigError::schema(path, format!("must be a positive number, got {v}")))
        }
    };
    positive(cfg.solver.tol, ".solver.tol")?;
    if cfg.solver.max_iter == 0 {
        return Err(ConfigError::schema(".solver.max_iter", "must be ≥ 1"));
    }
    if cfg.sim.blocks < 0 {
        return Err(ConfigError::schema(".sim.blocks", "blocks must be ≥ 0"));
    }
    match (cfg.sim.epsilon, cfg.sim.epsilon_rel) {
        (Some(_), Some(_)) => {
            return Err(ConfigError::schema(".sim.epsilon_rel", "give either epsilon or epsilon_rel, not both"))
        }
        (Some(e), None) if !(e >= 0.0 && e.is_finite()) => {
            return Err(ConfigError::schema(".sim.epsilon", "epsilon must be ≥ 0"))
        }
        (None, Some(e)) if !(0.0..1.0).contains(&e) => {
            return Err(ConfigError::schema(".sim.epsilon_rel", "epsilon_rel must lie in [0, 1)"))
        }
        _ => {}
    }
    positive(cfg.fading.tol, ".fading.tol")?;
    if cfg.fading.nodes < 2 {
        return Err(ConfigError::schema(".fading.nodes", "need at least 2 nodes"));
    }
    if cfg.fading.mc_samples < 2 {
        return Err(ConfigError::schema(".fading.mc_samples", "need at least 2 samples"));
    }
    positive(cfg.oracle.tol, ".oracle.tol")?;
    if cfg.oracle.grid < 2 {
        return Err(ConfigError::schema(".oracle.grid", "need at least 2 grid points"));
    }
    if cfg.oracle.max_states == 0 || cfg.oracle.max_symbols < 2 {
        return Err(ConfigError::schema(".oracle", "need max_states ≥ 1 and max_symbols ≥ 2"));
    }
    if let Some(ex) = &cfg.example {
        if let Some(t) = ex.tol {
            positive(t, ".example.tol")?;
        }
    }
    Ok(())
}
