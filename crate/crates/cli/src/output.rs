//! Output directory handling. Nothing is overwritten without `--force`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::Usage;

pub struct OutDir {
    root: PathBuf,
    force: bool,
}

impl OutDir {
    pub fn new(root: &Path, force: bool) -> Self {
        Self {
            root: root.to_path_buf(),
            force,
        }
    }

    /// Checks every name up front so a run never stops half-written.
    pub fn claim(&self, names: &[&str]) -> anyhow::Result<()> {
        if self.force {
            return Ok(());
        }
        for n in names {
            let p = self.root.join(n);
            if p.exists() {
                return Err(Usage(format!("{} exists (use --force to overwrite)", p.display())).into());
            }
        }
        Ok(())
    }

    pub fn path(&self, name: &str) -> anyhow::Result<PathBuf> {
        fs::create_dir_all(&self.root).with_context(|| format!("creating {}", self.root.display()))?;
        Ok(self.root.join(name))
    }

    pub fn write(&self, name: &str, bytes: &[u8]) -> anyhow::Result<PathBuf> {
        let p = self.path(name)?;
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        log::info!("wrote {}", p.display());
        Ok(p)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, v: &T) -> anyhow::Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(v)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> anyhow::Result<PathBuf> {
        let p = self.path(name)?;
        let mut w = csv::Writer::from_path(&p).with_context(|| format!("writing {}", p.display()))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        log::info!("wrote {}", p.display());
        Ok(p)
    }
}
