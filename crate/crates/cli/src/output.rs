//! Result files with embedded provenance.
//!
//! CSV files open with a `# wiretap <version> config=<json>` comment line;
//! JSON-lines files open with a provenance object; JSON files wrap the result
//! as `{"provenance": ..., "result": ...}`. The embedded config omits the
//! output directory so that reruns into different directories compare equal.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, VERSION};
use crate::error::CliResult;

pub fn provenance(cfg: &ExperimentConfig, command: &str) -> Value {
    let mut config = cfg.to_json();
    if let Some(map) = config.as_object_mut() {
        map.remove("output");
    }
    json!({ "wiretap_version": VERSION, "command": command, "config": config })
}

/// Output directory handle for one subcommand run.
pub struct OutputDir {
    root: PathBuf,
    provenance: Value,
}

impl OutputDir {
    /// Creates the directory and echoes the resolved config into it.
    pub fn create(cfg: &ExperimentConfig, command: &str) -> CliResult<Self> {
        let root = cfg.output_dir()?;
        fs::create_dir_all(&root)?;
        let mut echo = serde_json::to_string_pretty(&cfg.to_json())?;
        echo.push('\n');
        fs::write(root.join("config.json"), echo)?;
        Ok(Self {
            root,
            provenance: provenance(cfg, command),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn write_json<T: Serialize>(&self, name: &str, result: &T) -> CliResult<PathBuf> {
        let doc = json!({ "provenance": self.provenance, "result": result });
        let mut text = serde_json::to_string_pretty(&doc)?;
        text.push('\n');
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Writes a provenance line followed by the given pre-rendered lines.
    pub fn write_json_lines(&self, name: &str, body: &str) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string(&self.provenance)?;
        text.push('\n');
        text.push_str(body);
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn write_csv<R: Serialize>(&self, name: &str, rows: &[R]) -> CliResult<PathBuf> {
        let mut body = csv::Writer::from_writer(Vec::new());
        for r in rows {
            body.serialize(r)?;
        }
        let body = body.into_inner().map_err(|e| e.into_error())?;
        self.write_csv_text(name, &String::from_utf8_lossy(&body))
    }

    /// Writes an already rendered CSV body (header included).
    pub fn write_csv_text(&self, name: &str, body: &str) -> CliResult<PathBuf> {
        let mut text = format!("# wiretap {VERSION} config={}\n", self.provenance["config"]);
        text.push_str(body);
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }
}

/// Reads a CSV written by [`OutputDir::write_csv`], skipping the comment line.
pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    Ok(rdr.deserialize().collect::<Result<Vec<T>, _>>()?)
}
