//! Run configuration: an optional JSON file overlaid by command-line flags.

use std::path::Path;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use matweight::families::{FamilySpec, REGISTERED};

use crate::CliError;

/// Flags shared by every command.
#[derive(Args, Clone, Debug, Default)]
pub struct Common {
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Cells per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Dyadic levels of the cube family.
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run directory for report.json, rasters/ and traces/.
    #[arg(long)]
    pub out: Option<std::path::PathBuf>,
}

/// Family selection and parameters.
#[derive(Args, Clone, Debug, Default)]
pub struct FamilyArgs {
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub value: Option<f64>,
    /// Matrix size for `constant`.
    #[arg(long)]
    pub d: Option<usize>,
    /// Comma-separated exponents for `power`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub exponents: Option<Vec<f64>>,
    /// cell-center or cell-average.
    #[arg(long)]
    pub sampling: Option<String>,
    /// Scale for `scaling`.
    #[arg(long)]
    pub c: Option<f64>,
    /// Dimension for `identity-map` and `scaling`.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub amplitude: Option<f64>,
}

/// Contents of a config file. Every field is optional.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub family: Option<Value>,
    pub grid: Option<usize>,
    pub levels: Option<usize>,
    pub seed: Option<u64>,
    pub p: Option<f64>,
    pub q: Option<f64>,
    pub t: Option<f64>,
    pub s: Option<f64>,
    pub kind: Option<String>,
    pub weight: Option<String>,
    pub expect: Option<String>,
    pub boundary: Option<String>,
    pub epsilons: Option<Vec<f64>>,
    pub max_iter: Option<usize>,
    pub mode: Option<String>,
    pub radius_start: Option<f64>,
    pub tolerance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig, CliError> {
        let Some(path) = path else { return Ok(FileConfig::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Resolved settings.
#[derive(Clone, Debug, Serialize)]
pub struct Settings {
    pub family: FamilySpec,
    pub grid: usize,
    pub levels: Option<usize>,
    pub seed: u64,
}

fn registry() -> String {
    REGISTERED.join(", ")
}

pub fn family_spec(file: Option<&Value>, flags: &FamilyArgs) -> Result<FamilySpec, CliError> {
    let mut obj = match file {
        Some(Value::Object(m)) => m.clone(),
        Some(Value::String(name)) => {
            let mut m = Map::new();
            m.insert("family".into(), Value::String(name.clone()));
            m
        }
        Some(other) => return Err(CliError::Config(format!("field `family`: expected an object or a name, got {other}"))),
        None => Map::new(),
    };
    if let Some(name) = &flags.family {
        if obj.get("family").and_then(|v| v.as_str()) != Some(name) {
            obj.clear();
        }
        obj.insert("family".into(), Value::String(name.clone()));
    }
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            obj.insert(k.into(), v);
        }
    };
    put("alpha", flags.alpha.map(Value::from));
    put("gamma", flags.gamma.map(Value::from));
    put("value", flags.value.map(Value::from));
    put("d", flags.d.map(Value::from));
    put("exponents", flags.exponents.clone().map(Value::from));
    put("sampling", flags.sampling.clone().map(Value::from));
    put("c", flags.c.map(Value::from));
    put("n", flags.n.map(Value::from));
    put("amplitude", flags.amplitude.map(Value::from));
    let name = match obj.get("family") {
        Some(Value::String(s)) => s.clone(),
        _ => return Err(CliError::Config(format!("no family given; registered families: {}", registry()))),
    };
    if !REGISTERED.contains(&name.as_str()) {
        return Err(CliError::Config(format!("unknown family '{name}'; registered families: {}", registry())));
    }
    let spec: FamilySpec =
        serde_json::from_value(Value::Object(obj)).map_err(|e| CliError::Config(format!("family '{name}': {e}")))?;
    spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

pub fn settings(common: &Common, fam: &FamilyArgs, file: &FileConfig, default_grid: usize) -> Result<Settings, CliError> {
    let family = family_spec(file.family.as_ref(), fam)?;
    let grid = common.grid.or(file.grid).unwrap_or(default_grid);
    if grid < 4 {
        return Err(CliError::Config(format!("field `grid`: need at least 4 cells per axis, got {grid}")));
    }
    Ok(Settings { family, grid, levels: common.levels.or(file.levels), seed: common.seed.or(file.seed).unwrap_or(0) })
}

/// Flag, then config field, then default.
pub fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
    flag.clone().or_else(|| file.clone()).unwrap_or(default)
}
