//! Artifact files: a header block (scenario hash, parameter echo) followed by
//! data, written to a temporary file in the output directory and renamed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Header {
    pub command: String,
    pub scenario_path: String,
    pub scenario_sha256: String,
    pub params: Value,
}

impl Header {
    pub fn new(command: &str, scenario_path: &Path, scenario_bytes: &[u8], params: Value) -> Self {
        Self {
            command: command.into(),
            scenario_path: scenario_path.display().to_string(),
            scenario_sha256: hex::encode(Sha256::digest(scenario_bytes)),
            params,
        }
    }

    fn json(&self) -> Value {
        json!({
            "tool": "glancer",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "scenario": self.scenario_path,
            "scenario_sha256": self.scenario_sha256,
            "params": self.params,
        })
    }

    fn comment_block(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# glancer {} {}\n", env!("CARGO_PKG_VERSION"), self.command));
        s.push_str(&format!("# scenario: {}\n", self.scenario_path));
        s.push_str(&format!("# scenario_sha256: {}\n", self.scenario_sha256));
        s.push_str(&format!("# params: {}\n", self.params));
        s
    }
}

pub struct Artifacts {
    dir: PathBuf,
    header: Header,
    pub written: Vec<PathBuf>,
}

impl Artifacts {
    pub fn new(dir: &Path, header: Header) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), header, written: Vec::new() })
    }

    fn atomic(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        log::info!("wrote {}", path.display());
        self.written.push(path);
        Ok(())
    }

    /// Line-delimited JSON; the first line is `{"header": …}`.
    pub fn jsonl<T: Serialize>(&mut self, name: &str, records: &[T]) -> Result<(), CliError> {
        let mut buf = serde_json::to_vec(&json!({ "header": self.header.json() })).map_err(CliError::from_json)?;
        buf.push(b'\n');
        for r in records {
            serde_json::to_writer(&mut buf, r).map_err(CliError::from_json)?;
            buf.push(b'\n');
        }
        self.atomic(name, &buf)
    }

    /// A JSON document with the header under `"header"`.
    pub fn json<T: Serialize>(&mut self, name: &str, body: &T) -> Result<(), CliError> {
        let mut v = serde_json::to_value(body).map_err(CliError::from_json)?;
        let doc = match v {
            Value::Object(ref mut m) => {
                let mut out = serde_json::Map::new();
                out.insert("header".into(), self.header.json());
                out.append(m);
                Value::Object(out)
            }
            other => json!({ "header": self.header.json(), "data": other }),
        };
        let mut buf = serde_json::to_vec_pretty(&doc).map_err(CliError::from_json)?;
        buf.push(b'\n');
        self.atomic(name, &buf)
    }

    /// CSV with a `#` comment header block, then a header row.
    pub fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let mut buf = self.header.comment_block().into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            for r in rows {
                w.serialize(r).map_err(|e| CliError::Io(format!("{name}: {e}")))?;
            }
            w.flush().map_err(|e| CliError::Io(format!("{name}: {e}")))?;
        }
        self.atomic(name, &buf)
    }
}
