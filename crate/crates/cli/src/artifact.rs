//! Stamped artifacts: every file written carries the config hash, the seeds and
//! the build version. JSON files hold a `meta` object, CSV files start with a
//! `# {meta}` comment line, checkpoints keep it in their header.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stage};
use crate::failure::Failure;

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("EVICT_GIT_DESCRIBE"));

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub stage_seed: u64,
    pub version: String,
}

impl Meta {
    pub fn new(cfg: &PipelineConfig, command: &str, stage: Stage) -> Self {
        Meta {
            command: command.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            stage_seed: cfg.stage_seed(stage),
            version: VERSION.into(),
        }
    }

    pub fn comment(&self) -> String {
        format!("# {}\n", serde_json::to_string(self).expect("meta serializes"))
    }
}

#[derive(Serialize, Deserialize)]
pub struct Stamped<T> {
    pub meta: Meta,
    pub body: T,
}

pub struct Dir {
    pub root: PathBuf,
}

impl Dir {
    pub fn create(root: PathBuf) -> Result<Self, Failure> {
        std::fs::create_dir_all(&root).map_err(|e| Failure::Other(format!("cannot create {}: {e}", root.display())))?;
        Ok(Dir { root })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// The path of an upstream artifact, or an error naming the command that makes it.
    pub fn require(&self, name: &str, producer: &str) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Failure::missing(&p, producer))
        }
    }

    pub fn write_json<T: Serialize>(&self, name: &str, meta: &Meta, body: &T) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        let mut text = serde_json::to_string_pretty(&Stamped { meta: meta.clone(), body })?;
        text.push('\n');
        std::fs::write(&p, text)?;
        Ok(p)
    }

    /// CSV with the meta comment first; `fill` writes the table.
    pub fn write_csv(
        &self,
        name: &str,
        meta: &Meta,
        fill: impl FnOnce(&mut std::fs::File) -> Result<(), Failure>,
    ) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        let mut f = std::fs::File::create(&p)?;
        f.write_all(meta.comment().as_bytes())?;
        fill(&mut f)?;
        Ok(p)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<Stamped<T>, Failure> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::Missing(format!("{} is not a readable artifact: {e}", path.display())))
}

pub fn write_rows(f: &mut std::fs::File, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_writer(f);
    let csv_err = |e: csv::Error| Failure::Other(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
