//! Pipeline configuration file and its merge with flags.
//!
//! Precedence, lowest first: built-in defaults, the `--config` JSON file,
//! `TOONRIG_*` environment variables, command-line flags. Environment
//! variables and flags are both resolved by clap, so this module only has
//! to fall back to the file when clap produced nothing.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toonrig::assembly::RepaintOptions;
use toonrig::regressor::{TrainConfig, DEFAULT_HIDDEN};

use crate::CliError;

pub const MIN_SIZE: u32 = 64;
pub const MAX_SIZE: u32 = 4096;
pub const MAX_WORKERS: usize = 256;
pub const MAX_DILATION: u32 = 64;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub rig: Option<PathBuf>,
    pub atlas: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub size: Option<u32>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    /// Requested synthetic sample count.
    pub samples: Option<usize>,
    pub hidden: [usize; 3],
    pub train: TrainConfig,
    pub repaint: RepaintOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rig: None,
            atlas: None,
            model: None,
            dataset: None,
            out: None,
            size: None,
            seed: None,
            workers: None,
            samples: None,
            hidden: DEFAULT_HIDDEN,
            train: TrainConfig::default(),
            repaint: RepaintOptions::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.rig,
            &mut cfg.atlas,
            &mut cfg.model,
            &mut cfg.dataset,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), CliError> {
        if let Some(s) = self.size {
            check_size(s)?;
        }
        if let Some(w) = self.workers {
            check_workers(w)?;
        }
        if self.samples == Some(0) {
            return Err(CliError::usage("samples: must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(CliError::usage("hidden: layer widths must be at least 1"));
        }
        if self.repaint.dilation > MAX_DILATION {
            return Err(CliError::usage(format!(
                "repaint.dilation: must be at most {MAX_DILATION}"
            )));
        }
        self.train.validate()?;
        Ok(())
    }
}

pub fn check_size(s: u32) -> Result<(), CliError> {
    if (MIN_SIZE..=MAX_SIZE).contains(&s) {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "size: {s} is outside [{MIN_SIZE}, {MAX_SIZE}]"
        )))
    }
}

pub fn check_workers(w: usize) -> Result<(), CliError> {
    if (1..=MAX_WORKERS).contains(&w) {
        Ok(())
    } else {
        Err(CliError::usage(format!(
            "workers: {w} is outside [1, {MAX_WORKERS}]"
        )))
    }
}

/// First of `flag` (flag or env, as resolved by clap) and `file`.
pub fn pick<T>(flag: Option<T>, file: &Option<T>, what: &str) -> Result<T, CliError>
where
    T: Clone,
{
    flag.or_else(|| file.clone())
        .ok_or_else(|| CliError::usage(format!("missing --{what} (flag, TOONRIG_ env or config)")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"rig": "r/rig.json", "model": "/abs/m.trmd"}"#).unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.rig.unwrap(), dir.path().join("r/rig.json"));
        assert_eq!(cfg.model.unwrap(), PathBuf::from("/abs/m.trmd"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"sizee": 512}"#).unwrap();
        assert!(PipelineConfig::load(&path).is_err());
    }

    #[test]
    fn nested_sections_fill_from_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"train": {"epochs": 7}, "repaint": {"dilation": 5}}"#,
        )
        .unwrap();
        let cfg = PipelineConfig::load(&path).unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        assert_eq!(cfg.repaint.dilation, 5);
        cfg.check().unwrap();
    }

    #[test]
    fn flags_beat_the_file() {
        assert_eq!(pick(Some(3), &Some(9), "x").unwrap(), 3);
        assert_eq!(pick(None, &Some(9), "x").unwrap(), 9);
        assert!(pick::<u32>(None, &None, "x").is_err());
    }

    #[test]
    fn ranges_are_enforced() {
        assert!(check_size(32).is_err());
        assert!(check_size(1024).is_ok());
        assert!(check_workers(0).is_err());
        let cfg = PipelineConfig {
            samples: Some(0),
            ..PipelineConfig::default()
        };
        assert!(cfg.check().is_err());
    }
}
