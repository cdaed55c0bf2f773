//! Run configuration for `ocsdf train`, read from TOML with command-line
//! overrides applied before validation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lipnet::Activation;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Either a CSV file or a generated toy dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// Relative paths are resolved against the config file's directory.
    pub path: Option<PathBuf>,
    pub label_column: Option<String>,
    pub toy: Option<String>,
    #[serde(default = "default_toy_n")]
    pub toy_n: usize,
    #[serde(default)]
    pub toy_noise: f64,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "default_half_width")]
    pub half_width_sigmas: f64,
}

fn default_toy_n() -> usize {
    1000
}

fn yes() -> bool {
    true
}

fn default_half_width() -> f64 {
    crate::data_io::DEFAULT_HALF_WIDTH_SIGMAS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lipschitz,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub bjorck_iterations: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Lipschitz,
            hidden: vec![512; 4],
            activation: Activation::FullSort,
            bjorck_iterations: crate::lipnet::bjorck::DEFAULT_BJORCK_ITERATIONS,
        }
    }
}

impl RunConfig {
    /// Parses `text`, applies `key=value` overrides (dotted keys, TOML values,
    /// bare words taken as strings), and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides)?;
        if let Some(p) = &cfg.data.path {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new(""));
                cfg.data.path = Some(base.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.path, &self.data.toy) {
            (Some(_), Some(_)) => return Err(Error::Config("set either data.path or data.toy, not both".into())),
            (None, None) => return Err(Error::Config("one of data.path or data.toy is required".into())),
            _ => {}
        }
        if !(self.data.half_width_sigmas > 0.0) {
            return Err(Error::Config("data.half_width_sigmas must be positive".into()));
        }
        if self.model.hidden.iter().any(|&w| w == 0) {
            return Err(Error::Config("model.hidden widths must be positive".into()));
        }
        if (self.model.kind == ModelKind::Lipschitz) != self.train.constrained {
            return Err(Error::Config(
                "train.constrained must be true for lipschitz models and false for baseline models".into(),
            ));
        }
        self.train.validate()
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) =
        spec.split_once('=').ok_or_else(|| Error::Config(format!("override '{spec}' is not key=value")))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override key '{key}' walks through a non-table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
output_dir = "run"
[data]
toy = "two_moons"
toy_n = 200
[model]
hidden = [16, 16]
[train]
epochs = 2
warm_start_epochs = 1
"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::parse(BASE, &[]).unwrap();
        assert_eq!(c.model.hidden, vec![16, 16]);
        assert_eq!(c.train.batch_size, 128);
        assert!(c.data.standardize);
        assert_eq!(ModelSection::default().hidden, vec![512; 4]);
    }

    #[test]
    fn overrides_apply() {
        let c = RunConfig::parse(
            BASE,
            &["train.seed=9".into(), "train.hkr.margin=0.2".into(), "data.toy=two_blobs".into()],
        )
        .unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.hkr.margin, 0.2);
        assert_eq!(c.data.toy.as_deref(), Some("two_blobs"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::parse(&format!("{BASE}\nbogus = 1\n"), &[]).is_err());
        assert!(RunConfig::parse(BASE, &["train.nope=1".into()]).is_err());
        assert!(RunConfig::parse(BASE, &["noequals".into()]).is_err());
    }

    #[test]
    fn model_kind_must_match_loss() {
        assert!(RunConfig::parse(BASE, &["model.kind=\"baseline\"".into()]).is_err());
        assert!(RunConfig::parse(BASE, &["model.kind=\"baseline\"".into(), "train.constrained=false".into()]).is_ok());
    }

    #[test]
    fn data_source_required() {
        assert!(RunConfig::parse("[data]\n", &[]).is_err());
    }
}
