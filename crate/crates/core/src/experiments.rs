//! Configuration-driven experiments and their reports.
//!
//! A config is a JSON object
//!
//! ```json
//! { "command": "sharpness", "seed": 7, "resolution": 4096, "params": { "q1": 1.2 } }
//! ```
//!
//! where `params` holds the command-specific fields (all optional) and the
//! top-level keys `seed`, `resolution`, `exact_oracles` and `out` are shared.
//! Reports are deterministic in `(config, seed)`; wall-clock timings are kept
//! out of the report and returned alongside it.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::regression::RegressionCheck;
use crate::signal::FunctionPreset;
use crate::tiles::Rank1Spec;
use crate::weights::WeightPreset;

mod runners;

pub const DEFAULT_RESOLUTION: usize = 4096;

/// Largest grid level with `3 · 2^level <= resolution` samples per unit.
pub fn level_for_resolution(resolution: usize) -> Result<u32> {
    if resolution < 6 {
        return Err(Error::Config(format!("resolution {resolution} is below 6 samples")));
    }
    let mut level = 0;
    while 3usize << (level + 1) <= resolution {
        level += 1;
    }
    Ok(level)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DominationMode {
    /// Tritile forms of rank-1 collections.
    Discrete,
    /// Multiplier forms by quadrature.
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MultiplierPreset {
    Identity,
    BhtSign,
    /// Counterexample with `m` bumps and seeded random signs.
    Counterexample { m: usize, seed: u64 },
    /// CSV with header `xi1,xi2,re,im` on a full lattice.
    Tabulated { path: PathBuf },
}

impl MultiplierPreset {
    pub const NAMES: [&'static str; 4] = ["identity", "bht_sign", "counterexample", "tabulated"];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentityParams {
    /// Random triples for the Fourier identity.
    pub triples: usize,
}

impl Default for IdentityParams {
    fn default() -> Self {
        IdentityParams { triples: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DominationParams {
    pub mode: DominationMode,
    pub functions: Vec<FunctionPreset>,
    pub p: [f64; 3],
    /// Rank-1 collections, seeded `seed, seed + 1, ...` from `rank1`.
    pub collections: usize,
    pub rank1: Rank1Spec,
    /// Continuous mode only; defaults to the sign multiplier and eight counterexamples.
    pub multipliers: Vec<MultiplierPreset>,
    /// Frozen constant compared against `max ratio`, if any.
    pub regression_key: Option<String>,
}

impl Default for DominationParams {
    fn default() -> Self {
        DominationParams {
            mode: DominationMode::Discrete,
            functions: default_triple(),
            p: [1.8; 3],
            collections: 20,
            rank1: Rank1Spec::default(),
            multipliers: Vec::new(),
            regression_key: None,
        }
    }
}

pub fn default_triple() -> Vec<FunctionPreset> {
    vec![
        FunctionPreset::Bump { center: 0.5, width: 0.5 },
        FunctionPreset::Gaussian { center: 0.4, width: 0.3 },
        FunctionPreset::RandomTrig { seed: 3, degree: 4, center: 0.5, width: 0.5 },
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseParams {
    pub cases: usize,
    /// Exponents are drawn uniformly from this range, which keeps tuples open admissible.
    pub p_range: [f64; 2],
}

impl Default for SparseParams {
    fn default() -> Self {
        SparseParams { cases: 200, p_range: [1.55, 1.95] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OuterParams {
    pub instances: usize,
    pub max_tritiles: usize,
    pub q: [f64; 3],
    /// Bound asserted on the Hölder ratio.
    pub bound: f64,
}

impl Default for OuterParams {
    fn default() -> Self {
        OuterParams { instances: 500, max_tritiles: 12, q: [3.0; 3], bound: 8.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingParams {
    pub functions: usize,
    pub p: f64,
    pub q: f64,
    /// Extra levels compared with the base level.
    pub refinements: Vec<u32>,
    pub tolerance: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams { functions: 20, p: 1.5, q: 4.0, refinements: vec![1, 2], tolerance: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightedParams {
    pub weights: Vec<WeightPreset>,
    /// Second weight of every vector; the third is completed.
    pub partner: WeightPreset,
    pub p: [f64; 3],
    pub q: [f64; 3],
    pub functions: Vec<FunctionPreset>,
    pub level: u32,
    pub regression_key: Option<String>,
}

impl Default for WeightedParams {
    fn default() -> Self {
        WeightedParams {
            weights: vec![
                WeightPreset::Constant { value: 2.0 },
                WeightPreset::TwoStep { left: 3.0, right: 1.0, split: 0.5 },
                WeightPreset::Power { exponent: 0.4, center: 0.3 },
                WeightPreset::Power { exponent: -0.3, center: 0.7 },
            ],
            partner: WeightPreset::Power { exponent: 0.2, center: 0.5 },
            p: [2.0; 3],
            q: [3.0; 3],
            functions: vec![
                FunctionPreset::Bump { center: 0.5, width: 0.45 },
                FunctionPreset::Gaussian { center: 0.3, width: 0.2 },
                FunctionPreset::Indicator { a: 0.25, b: 0.75 },
            ],
            level: 5,
            regression_key: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AqcorParamsConfig {
    /// Explicit weight pairs; when empty a random suite of `suite` pairs is drawn.
    pub pairs: Vec<[WeightPreset; 2]>,
    pub suite: usize,
    pub q1: f64,
    pub q2: f64,
    pub level: u32,
}

impl Default for AqcorParamsConfig {
    fn default() -> Self {
        AqcorParamsConfig { pairs: Vec::new(), suite: 20, q1: 3.0, q2: 3.0, level: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SharpnessParams {
    pub ms: Vec<usize>,
    pub q1: f64,
    pub q2: f64,
    pub trials: usize,
    pub spread_tolerance: f64,
}

impl Default for SharpnessParams {
    fn default() -> Self {
        SharpnessParams { ms: vec![1, 2, 4, 8, 16], q1: 1.2, q2: 1.2, trials: 8, spread_tolerance: 0.05 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorParams {
    /// Randomized exceptional-set cases.
    pub cases: usize,
    /// Components per vector-valued input.
    pub components: usize,
    /// Step of the brute-force `p` search.
    pub search_step: f64,
}

impl Default for VectorParams {
    fn default() -> Self {
        VectorParams { cases: 20, components: 3, search_step: 0.0125 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    IdentitySuite(IdentityParams),
    DominationCheck(DominationParams),
    SparseBuild(SparseParams),
    OuterHolder(OuterParams),
    Embedding(EmbeddingParams),
    WeightedBound(WeightedParams),
    Aqcor(AqcorParamsConfig),
    Sharpness(SharpnessParams),
    VectorValued(VectorParams),
}

impl Experiment {
    pub const COMMANDS: [&'static str; 9] = [
        "identity-suite",
        "domination-check",
        "sparse-build",
        "outer-holder",
        "embedding",
        "weighted-bound",
        "aqcor",
        "sharpness",
        "vector-valued",
    ];

    pub fn command(&self) -> &'static str {
        match self {
            Experiment::IdentitySuite(_) => "identity-suite",
            Experiment::DominationCheck(_) => "domination-check",
            Experiment::SparseBuild(_) => "sparse-build",
            Experiment::OuterHolder(_) => "outer-holder",
            Experiment::Embedding(_) => "embedding",
            Experiment::WeightedBound(_) => "weighted-bound",
            Experiment::Aqcor(_) => "aqcor",
            Experiment::Sharpness(_) => "sharpness",
            Experiment::VectorValued(_) => "vector-valued",
        }
    }
}

const TOP_LEVEL_KEYS: [&str; 6] = ["command", "params", "seed", "resolution", "exact_oracles", "out"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub resolution: usize,
    /// Enables exponential-cost exact modes.
    pub exact_oracles: bool,
    pub out: Option<PathBuf>,
    #[serde(flatten)]
    pub experiment: Experiment,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        ExperimentConfig {
            seed: 0,
            resolution: DEFAULT_RESOLUTION,
            exact_oracles: false,
            out: None,
            experiment,
        }
    }

    /// Parse and validate a JSON config. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid JSON: {e}")))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        if let Some(k) = obj.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown config key {k:?}")));
        }
        let command = obj
            .get("command")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Config("missing string field \"command\"".into()))?
            .to_string();
        if !Experiment::COMMANDS.contains(&command.as_str()) {
            return Err(Error::Config(format!(
                "unknown command {command:?}, expected one of {:?}",
                Experiment::COMMANDS
            )));
        }
        obj.entry("params").or_insert_with(|| Value::Object(Default::default()));
        let experiment: Experiment = serde_json::from_value(Value::Object(
            [
                ("command".to_string(), obj["command"].clone()),
                ("params".to_string(), obj["params"].clone()),
            ]
            .into_iter()
            .collect(),
        ))
        .map_err(|e| Error::Config(format!("{command}: {e}")))?;
        let field = |k: &str| obj.get(k).filter(|v| !v.is_null());
        let seed = match field("seed") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::Config("seed must be a 64-bit unsigned integer".into()))?,
            None => 0,
        };
        let resolution = match field("resolution") {
            Some(v) => v
                .as_u64()
                .ok_or_else(|| Error::Config("resolution must be a positive integer".into()))?
                as usize,
            None => DEFAULT_RESOLUTION,
        };
        let exact_oracles = match field("exact_oracles") {
            Some(v) => v
                .as_bool()
                .ok_or_else(|| Error::Config("exact_oracles must be a boolean".into()))?,
            None => false,
        };
        let out = match field("out") {
            Some(v) => Some(PathBuf::from(
                v.as_str().ok_or_else(|| Error::Config("out must be a path string".into()))?,
            )),
            None => None,
        };
        let config = ExperimentConfig { seed, resolution, exact_oracles, out, experiment };
        config.validate()?;
        Ok(config)
    }

    /// Check the predicates that must hold before any run.
    pub fn validate(&self) -> Result<()> {
        level_for_resolution(self.resolution)?;
        runners::validate(self)
    }

    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        digest_json(&c)
    }
}

pub fn digest_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(&bytes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    /// `lhs <= rhs`.
    Le,
    /// `lhs >= rhs`.
    Ge,
    /// `|lhs - rhs| <= tolerance · max(|rhs|, tiny)`.
    Close,
}

/// One asserted inequality with both sides recorded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub relation: Relation,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn le(label: &str, lhs: f64, rhs: f64) -> Self {
        Check::make(label, lhs, rhs, Relation::Le, 0.0, lhs <= rhs)
    }

    pub fn ge(label: &str, lhs: f64, rhs: f64) -> Self {
        Check::make(label, lhs, rhs, Relation::Ge, 0.0, lhs >= rhs)
    }

    /// Relative closeness; exact equality when `tolerance = 0`.
    pub fn close(label: &str, lhs: f64, rhs: f64, tolerance: f64) -> Self {
        let scale = rhs.abs().max(f64::MIN_POSITIVE);
        let pass = lhs == rhs || (lhs - rhs).abs() <= tolerance * scale;
        Check::make(label, lhs, rhs, Relation::Close, tolerance, pass)
    }

    fn make(label: &str, lhs: f64, rhs: f64, relation: Relation, tolerance: f64, pass: bool) -> Self {
        Check { label: label.to_string(), lhs, rhs, relation, tolerance, pass }
    }
}

impl From<&RegressionCheck> for Check {
    fn from(r: &RegressionCheck) -> Self {
        Check {
            label: format!("regression {}", r.name),
            lhs: r.measured,
            rhs: r.frozen,
            relation: Relation::Close,
            tolerance: crate::regression::REGRESSION_TOLERANCE,
            pass: r.pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub name: String,
    pub inputs_digest: String,
    pub values: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl CaseRecord {
    pub fn new(name: impl Into<String>, inputs_digest: String) -> Self {
        CaseRecord { name: name.into(), inputs_digest, values: BTreeMap::new(), checks: Vec::new(), pass: true }
    }

    pub fn value(mut self, key: &str, v: f64) -> Self {
        self.values.insert(key.to_string(), v);
        self
    }

    pub fn check(mut self, c: Check) -> Self {
        self.pass &= c.pass;
        self.checks.push(c);
        self
    }
}

/// A flat numeric table with a fixed column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cases: usize,
    pub failures: usize,
    pub max_ratio: Option<f64>,
    pub median_ratio: Option<f64>,
    pub regression: Vec<RegressionCheck>,
    /// Suite-level checks that are not tied to a single case.
    pub checks: Vec<Check>,
    pub values: BTreeMap<String, f64>,
    /// Digests of artifacts shared by all cases, such as a common sparse collection.
    pub digests: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub resolution: usize,
    pub config_digest: String,
    pub cases: Vec<CaseRecord>,
    pub summary: Summary,
    pub tables: BTreeMap<String, Table>,
    /// SHA-256 of the report serialized with this field empty.
    pub digest: String,
}

impl Report {
    pub fn pass(&self) -> bool {
        self.summary.failures == 0
            && self.summary.checks.iter().all(|c| c.pass)
            && self.summary.regression.iter().all(|r| r.pass)
    }

    fn seal(mut self) -> Self {
        self.summary.cases = self.cases.len();
        self.summary.failures = self.cases.iter().filter(|c| !c.pass).count();
        self.digest = String::new();
        self.digest = digest_json(&self);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }
}

/// `(max, median)` of a ratio list, `None` when empty.
pub fn max_median(ratios: &[f64]) -> (Option<f64>, Option<f64>) {
    if ratios.is_empty() {
        return (None, None);
    }
    let mut v = ratios.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    (Some(v[n - 1]), Some(median))
}

/// Timings per case, kept outside the report so that reports stay reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub cases: BTreeMap<String, f64>,
}

/// Run an experiment and return the sealed report with its timings.
pub fn run(config: &ExperimentConfig) -> Result<(Report, Timings)> {
    config.validate()?;
    let start = Instant::now();
    let mut timings = Timings::default();
    let mut report = runners::dispatch(config, &mut timings)?;
    report.command = config.experiment.command().to_string();
    report.seed = config.seed;
    report.resolution = config.resolution;
    report.config_digest = config.digest();
    timings.total_seconds = start.elapsed().as_secs_f64();
    Ok((report.seal(), timings))
}

/// A report with no cases, tables or summary.
pub fn empty_report() -> Report {
    Report {
        command: String::new(),
        seed: 0,
        resolution: 0,
        config_digest: String::new(),
        cases: Vec::new(),
        summary: Summary::default(),
        tables: BTreeMap::new(),
        digest: String::new(),
    }
}

/// Tables a report may carry, with their fixed column order.
pub const TABLES: [(&str, &[&str]); 3] = [
    ("ratios", &["case", "ratio"]),
    ("sharpness", &["M", "lower_bound"]),
    ("superlevel", &["lambda", "mu"]),
];

/// Table `name` of a report as CSV: header row, comma separated, `.` decimals.
/// A known table that the report does not carry gives the header alone.
pub fn emit_plot_data(report: &Report, name: &str) -> Result<String> {
    let columns = TABLES
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, c)| *c)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown table {name:?}; known: {:?}",
                TABLES.map(|(n, _)| n)
            ))
        })?;
    let empty = Table::new(columns);
    let table = report.tables.get(name).unwrap_or(&empty);
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(&table.columns).map_err(io)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| format!("{v}"))).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("ascii csv"))
}

/// Names of everything a config can reference.
pub fn list_presets() -> BTreeMap<&'static str, Vec<&'static str>> {
    let mut out = BTreeMap::new();
    out.insert("commands", Experiment::COMMANDS.to_vec());
    out.insert("functions", FunctionPreset::NAMES.to_vec());
    out.insert("weights", WeightPreset::NAMES.to_vec());
    out.insert("multipliers", MultiplierPreset::NAMES.to_vec());
    out.insert("tables", TABLES.map(|(n, _)| n).to_vec());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text)
    }

    #[test]
    fn resolution_levels() {
        assert_eq!(level_for_resolution(4096).unwrap(), 10);
        assert_eq!(level_for_resolution(6).unwrap(), 1);
        assert_eq!(level_for_resolution(3 * 256).unwrap(), 8);
        assert!(level_for_resolution(5).is_err());
    }

    #[test]
    fn config_defaults_and_overrides() {
        let c = parse(r#"{"command": "sharpness"}"#).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.resolution, DEFAULT_RESOLUTION);
        assert_eq!(c.experiment, Experiment::Sharpness(SharpnessParams::default()));

        let c = parse(r#"{"command": "sparse-build", "seed": 9, "params": {"cases": 3}}"#).unwrap();
        assert_eq!(c.seed, 9);
        match c.experiment {
            Experiment::SparseBuild(p) => assert_eq!((p.cases, p.p_range), (3, [1.55, 1.95])),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn config_errors() {
        let bad = [
            "[]",
            "{",
            r#"{"params": {}}"#,
            r#"{"command": "nope"}"#,
            r#"{"command": "sharpness", "colour": 1}"#,
            r#"{"command": "sharpness", "params": {"qq": 2}}"#,
            r#"{"command": "sharpness", "seed": -1}"#,
            r#"{"command": "sharpness", "resolution": 4}"#,
            r#"{"command": "domination-check", "params": {"p": [1.2, 1.2, 1.2]}}"#,
            r#"{"command": "domination-check", "params": {"functions": [{"kind": "zero"}]}}"#,
            r#"{"command": "domination-check", "params": {"mode": "continuous", "multipliers": [{"kind": "tabulated", "path": "/nonexistent.csv"}]}}"#,
            r#"{"command": "weighted-bound", "params": {"q": [2, 2, 2]}}"#,
            r#"{"command": "embedding", "params": {"p": 1.5, "q": 2.5}}"#,
            r#"{"command": "outer-holder", "exact_oracles": true, "params": {"max_tritiles": 20}}"#,
        ];
        for text in bad {
            assert!(matches!(parse(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn identity_suite_passes_and_is_deterministic() {
        let c = parse(r#"{"command": "identity-suite", "seed": 3, "resolution": 768, "params": {"triples": 2}}"#).unwrap();
        let (a, _) = run(&c).unwrap();
        let (b, _) = run(&c).unwrap();
        assert!(a.pass(), "{}", a.to_json());
        assert_eq!(a.summary.failures, 0);
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.digest, b.digest);
        assert!(a.cases.iter().all(|c| c.checks.iter().all(|k| k.pass)));

        let mut other = c.clone();
        other.seed = 4;
        assert_ne!(run(&other).unwrap().0.digest, a.digest);
    }

    #[test]
    fn digest_covers_everything_but_itself() {
        let c = parse(r#"{"command": "aqcor", "params": {"suite": 2, "level": 3}}"#).unwrap();
        let (r, _) = run(&c).unwrap();
        let mut cleared = r.clone();
        cleared.digest = String::new();
        assert_eq!(digest_json(&cleared), r.digest);
        let mut tampered = cleared.clone();
        tampered.cases[0].values.insert("apq".into(), 0.0);
        assert_ne!(digest_json(&tampered), r.digest);
    }

    #[test]
    fn domination_batch_shares_one_collection() {
        let c = parse(
            r#"{"command": "domination-check", "resolution": 384, "params": {"collections": 20, "rank1": {"seed": 0, "scales": [-2, 0], "window": {"left": [0, 1], "right": [1, 1]}, "density": 1, "band": 3, "g": 8}}}"#,
        )
        .unwrap();
        let (r, _) = run(&c).unwrap();
        assert_eq!(r.cases.len(), 20);
        assert!(r.cases.iter().all(|c| c.values.contains_key("ratio")));
        assert_eq!(r.summary.digests.len(), 1);
        assert_eq!(r.tables["ratios"].rows.len(), 20);
    }

    #[test]
    fn plot_data_tables() {
        let mut r = empty_report();
        assert_eq!(emit_plot_data(&r, "sharpness").unwrap(), "M,lower_bound\n");
        assert_eq!(emit_plot_data(&r, "superlevel").unwrap(), "lambda,mu\n");
        assert!(emit_plot_data(&r, "histogram").is_err());

        let mut t = Table::new(&["M", "lower_bound"]);
        t.push(vec![1.0, 0.5]);
        t.push(vec![2.0, 0.75]);
        r.tables.insert("sharpness".into(), t);
        assert_eq!(emit_plot_data(&r, "sharpness").unwrap(), "M,lower_bound\n1,0.5\n2,0.75\n");
    }

    #[test]
    fn sharpness_and_outer_tables() {
        let (r, _) = run(&parse(r#"{"command": "sharpness", "params": {"ms": [1, 2, 4], "trials": 2}}"#).unwrap()).unwrap();
        let csv = emit_plot_data(&r, "sharpness").unwrap();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("M,lower_bound\n1,"));

        let (r, _) = run(&parse(r#"{"command": "outer-holder", "params": {"instances": 5}}"#).unwrap()).unwrap();
        assert!(r.pass());
        let csv = emit_plot_data(&r, "superlevel").unwrap();
        assert!(csv.lines().count() >= 2);
    }

    #[test]
    fn checks_record_both_sides() {
        let c = Check::le("x", 1.0, 2.0);
        assert!(c.pass && c.lhs == 1.0 && c.rhs == 2.0);
        assert!(!Check::ge("x", 1.0, 2.0).pass);
        assert!(Check::close("x", 1.05, 1.0, 0.1).pass);
        assert!(!Check::close("x", 1.2, 1.0, 0.1).pass);
        assert!(Check::close("x", 0.0, 0.0, 0.0).pass);
        let rec = CaseRecord::new("c", String::new()).check(Check::le("a", 1.0, 0.0));
        assert!(!rec.pass);
    }

    #[test]
    fn max_median_examples() {
        assert_eq!(max_median(&[]), (None, None));
        assert_eq!(max_median(&[3.0, 1.0, 2.0]), (Some(3.0), Some(2.0)));
        assert_eq!(max_median(&[4.0, 1.0, 2.0, 3.0]), (Some(4.0), Some(2.5)));
    }

    #[test]
    fn presets_are_listed() {
        let p = list_presets();
        assert_eq!(p["commands"].len(), 9);
        assert!(p["functions"].contains(&"bump"));
        assert!(p["weights"].contains(&"two_step"));
        assert!(p["multipliers"].contains(&"counterexample"));
    }
}
