//! CSV writing and run manifests.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::args::{Cli, Global};

/// Shortest text that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    pub fn create(dir: &Path, file: &str, header: &[&str]) -> Result<Self> {
        let path = dir.join(file);
        let mut writer = csv::Writer::from_path(&path)
            .with_context(|| format!("creating {}", path.display()))?;
        writer.write_record(header)?;
        Ok(Self { path, writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer
            .write_record(fields)
            .with_context(|| format!("writing {}", self.path.display()))
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub git: String,
    pub argv: Vec<String>,
    pub global: Global,
    pub command: serde_json::Value,
}

pub fn manifest_path(dir: &Path, command: &str) -> PathBuf {
    dir.join(format!("{command}.manifest.json"))
}

pub fn write_manifest(cli: &Cli, command: &str) -> Result<()> {
    let m = Manifest {
        tool: "beamopt".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git: env!("BEAMOPT_GIT_DESCRIBE").into(),
        argv: std::env::args().skip(1).collect(),
        global: cli.global.clone(),
        command: serde_json::to_value(&cli.command)?,
    };
    let path = manifest_path(&cli.global.out, command);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

pub fn read_manifest(dir: &Path, command: &str) -> Result<Manifest> {
    let path = manifest_path(dir, command);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
