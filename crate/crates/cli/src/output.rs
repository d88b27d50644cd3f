//! Error routing, config loading and output helpers shared by subcommands.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use specktrack::error::Error;
use specktrack::io::write_json;

use crate::{Format, GlobalArgs};

pub const RUN_MANIFEST: &str = "manifest.json";

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or config files; exit 1.
    Usage(String),
    /// Engine failure; exit 2 for data errors, 3 for numerical ones.
    Engine(Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Engine(Error::InvalidArgument(_)) => 1,
            CliError::Engine(e) if e.is_numerical() => 3,
            CliError::Engine(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Engine(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Engine(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Overlays the keys of the JSON file at `path` on `base`. Unknown keys fail.
pub fn load_config<T: Serialize + DeserializeOwned>(path: Option<&Path>, base: T) -> CliResult<T> {
    let Some(path) = path else { return Ok(base) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let user: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let serde_json::Value::Object(user) = user else {
        return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(&base).expect("configs serialize");
    if let serde_json::Value::Object(m) = &mut merged {
        for (k, v) in user {
            m.insert(k, v);
        }
    }
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn create_output_dir(g: &GlobalArgs) -> CliResult<PathBuf> {
    std::fs::create_dir_all(&g.output_dir).map_err(|e| Error::io(&g.output_dir, e))?;
    Ok(g.output_dir.clone())
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Engine(Error::io(path, e)))
}

/// Writes `stem.csv` or `stem.json` depending on `--format`.
pub fn write_table<T: Serialize>(
    dir: &Path,
    stem: &str,
    format: Format,
    header: &str,
    rows: &[String],
    json: &T,
) -> CliResult<PathBuf> {
    match format {
        Format::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            let mut s = format!("{header}\n");
            for r in rows {
                s.push_str(r);
                s.push('\n');
            }
            write_text(&path, &s)?;
            Ok(path)
        }
        Format::Json => {
            let path = dir.join(format!("{stem}.json"));
            write_json(json, &path)?;
            Ok(path)
        }
    }
}

#[derive(Serialize)]
struct RunManifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'a str,
    seed: Option<u64>,
    threads: usize,
    format: Format,
    plot: bool,
    config: &'a C,
    inputs: serde_json::Map<String, serde_json::Value>,
    outputs: Vec<String>,
}

/// Records the resolved run beside its outputs; called last so the output
/// listing is complete.
pub fn write_run_manifest<C: Serialize>(
    dir: &Path,
    subcommand: &str,
    g: &GlobalArgs,
    seed: Option<u64>,
    config: &C,
    inputs: &[(&str, String)],
) -> CliResult<()> {
    let mut outputs: Vec<String> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != RUN_MANIFEST)
        .collect();
    outputs.sort();
    let m = RunManifest {
        tool: "specktrack",
        version: env!("CARGO_PKG_VERSION"),
        subcommand,
        seed,
        threads: g.threads,
        format: g.format,
        plot: g.plot,
        config,
        inputs: inputs
            .iter()
            .map(|(k, v)| (k.to_string(), serde_json::Value::String(v.clone())))
            .collect(),
        outputs,
    };
    write_json(&m, dir.join(RUN_MANIFEST))?;
    Ok(())
}

pub fn path_string(p: &Path) -> String {
    p.display().to_string()
}
