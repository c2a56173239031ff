//! Run configuration: a TOML file plus `--set key=value` overrides.
//!
//! ```toml
//! seed = 0
//! selector = "attention"        # attention | random | checker
//! out = "runs/desk"
//!
//! [model]                       # missing keys take the desk defaults
//! dec_layers = 2
//! task = { kind = "reconstruction" }
//!
//! [train]
//! epochs = 30
//!
//! [glimpse]
//! kind = "plain"                # plain | retinal
//! glimpse_px = 16
//! num_glimpses = 8
//!
//! [corpus]
//! source = { kind = "synthetic", generator = "shapes", count = 1000 }
//! ```

use std::fmt;
use std::path::{Path, PathBuf};

use ame_core::data::CorpusSpec;
use ame_core::glimpse::{GlimpseSpec, SelectorKind};
use ame_core::model::ModelConfig;
use ame_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

/// Malformed config file or override; maps to the configuration exit code.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "configuration error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Drives weight initialization, training streams and evaluation.
    pub seed: u64,
    pub selector: SelectorKind,
    pub out: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub glimpse: GlimpseSpec,
    pub corpus: CorpusSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            selector: SelectorKind::Attention,
            out: PathBuf::from("runs/default"),
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            glimpse: GlimpseSpec::plain(16, 8),
            corpus: CorpusSpec::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets the dotted `key` in `table`, creating intermediate tables.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ConfigError(format!("override {assignment:?} is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(ConfigError(format!("bad override key {key:?}")));
    }
    let mut cur = table;
    for part in &path[..path.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError(format!("override {key:?}: {part} is not a table")))?;
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Deep merge of `over` into `base`. A table whose `kind` changes replaces
/// the old table instead of merging with it.
fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if b.get("kind") == o.get("kind") || o.get("kind").is_none() =>
            {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Reads `file` (if any) over the defaults, applies overrides and
    /// validates the result.
    pub fn resolve(file: Option<&Path>, overrides: &[String], out: Option<&Path>) -> anyhow::Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(|e| ConfigError(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
            merge(
                &mut table,
                toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?,
            );
        }
        for o in overrides {
            let mut single = toml::Table::new();
            apply_override(&mut single, o)?;
            merge(&mut table, single);
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError(e.to_string()))?;
        if let Some(out) = out {
            cfg.out = out.to_path_buf();
        }
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let m = &self.model;
        m.validate()?;
        self.train.validate()?;
        self.glimpse.validate(m.patch_size, m.image_h, m.image_w)?;
        self.corpus.validate()?;
        Ok(())
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn echo(&self) -> anyhow::Result<()> {
        std::fs::create_dir_all(&self.out)?;
        let text = toml::to_string(self).map_err(|e| ConfigError(e.to_string()))?;
        std::fs::write(self.out.join("config.toml"), text)?;
        Ok(())
    }
}
