//! `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! # comments run to the end of the line
//! [network]
//! base_size = 64
//! width = 0.25
//! thresholds = 0.5, 0.8, 0.95
//! ```

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use dced_core::dataset::DatasetTag;
use dced_core::net::{NetConfig, FULL_CHANNELS};
use dced_core::preprocess::PreprocessConfig;
use dced_core::synthgen::SceneConfig;
use dced_core::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub network: NetConfig,
    /// Channel-width multiplier the network channels were derived from.
    pub width: f64,
    pub train: TrainConfig,
    pub preprocess: PreprocessConfig,
    pub synthgen: SceneConfig,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            network: NetConfig::default(),
            width: 1.0,
            train: TrainConfig::default(),
            preprocess: PreprocessConfig::default(),
            synthgen: SceneConfig::default(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Network,
    Train,
    Preprocess,
    Synthgen,
}

fn parse_num<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Line {
        line,
        message: format!("{key}: cannot parse {value:?}"),
    })
}

fn parse_list<T: std::str::FromStr>(value: &str, line: usize, key: &str) -> Result<Vec<T>, ConfigError> {
    value.split(',').map(|v| parse_num(v.trim(), line, key)).collect()
}

fn parse_bool(value: &str, line: usize, key: &str) -> Result<bool, ConfigError> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(ConfigError::Line {
            line,
            message: format!("{key}: expected true or false, got {value:?}"),
        }),
    }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ConfigFile::default();
        let mut section = Section::None;
        let mut levels: Option<(usize, usize)> = None;
        let mut width: Option<usize> = None;
        let mut channels: Option<usize> = None;
        let mut preprocess_size = false;
        let mut final_threshold = false;
        let mut tag: Option<DatasetTag> = None;
        let mut weights = false;

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
                section = match name.trim() {
                    "network" => Section::Network,
                    "train" => Section::Train,
                    "preprocess" => Section::Preprocess,
                    "synthgen" => Section::Synthgen,
                    other => {
                        return Err(ConfigError::Line {
                            line,
                            message: format!("unknown section [{other}]"),
                        })
                    }
                };
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Line {
                    line,
                    message: format!("expected key = value, got {content:?}"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let unknown = || ConfigError::Line {
                line,
                message: format!("unknown key {key:?}"),
            };
            match section {
                Section::None => {
                    return Err(ConfigError::Line {
                        line,
                        message: format!("key {key:?} appears before any section"),
                    })
                }
                Section::Network => match key {
                    "base_size" => cfg.network.base_size = parse_num(value, line, key)?,
                    "levels" => levels = Some((parse_num(value, line, key)?, line)),
                    "thresholds" => cfg.network.thresholds = parse_list(value, line, key)?,
                    "final_threshold" => {
                        cfg.network.final_threshold = parse_num(value, line, key)?;
                        final_threshold = true;
                    }
                    "width" => {
                        cfg.width = parse_num(value, line, key)?;
                        width = Some(line);
                    }
                    "channels" => {
                        let list: Vec<usize> = parse_list(value, line, key)?;
                        cfg.network.channels = list.try_into().map_err(|_| ConfigError::Line {
                            line,
                            message: "channels needs exactly 5 values".into(),
                        })?;
                        channels = Some(line);
                    }
                    _ => return Err(unknown()),
                },
                Section::Train => {
                    let t = &mut cfg.train;
                    match key {
                        "learning_rate" => t.learning_rate = parse_num(value, line, key)?,
                        "minibatch" => t.minibatch = parse_num(value, line, key)?,
                        "max_epochs_per_level" => t.max_epochs_per_level = parse_num(value, line, key)?,
                        "iterations_per_epoch" => t.iterations_per_epoch = parse_num(value, line, key)?,
                        "max_global_rounds" => t.max_global_rounds = parse_num(value, line, key)?,
                        "seed" => t.seed = parse_num(value, line, key)?,
                        "split_fraction" => t.split_fraction = parse_num(value, line, key)?,
                        "folds" => t.folds = parse_num(value, line, key)?,
                        "with_replacement" => t.with_replacement = parse_bool(value, line, key)?,
                        _ => return Err(unknown()),
                    }
                }
                Section::Preprocess => {
                    let p = &mut cfg.preprocess;
                    match key {
                        "size" => {
                            p.size = parse_num(value, line, key)?;
                            preprocess_size = true;
                        }
                        "wiener_window" => p.wiener_window = parse_num(value, line, key)?,
                        "low_percentile" => p.low_percentile = parse_num(value, line, key)?,
                        "high_percentile" => p.high_percentile = parse_num(value, line, key)?,
                        "mask_threshold" => p.mask_threshold = parse_num(value, line, key)?,
                        _ => return Err(unknown()),
                    }
                }
                Section::Synthgen => {
                    let s = &mut cfg.synthgen;
                    match key {
                        "width" => s.width = parse_num(value, line, key)?,
                        "height" => s.height = parse_num(value, line, key)?,
                        "cells_per_image" => s.cells_per_image = parse_num(value, line, key)?,
                        "cell_radius" => s.cell_radius = parse_num(value, line, key)?,
                        "weights" => {
                            let list: Vec<f64> = parse_list(value, line, key)?;
                            s.weights = list.try_into().map_err(|_| ConfigError::Line {
                                line,
                                message: "weights needs exactly 5 values".into(),
                            })?;
                            weights = true;
                        }
                        "overlap" => s.overlap = parse_num(value, line, key)?,
                        "illumination" => s.illumination = parse_num(value, line, key)?,
                        "noise_std" => s.noise_std = parse_num(value, line, key)?,
                        "seed" => s.seed = parse_num(value, line, key)?,
                        "tag" => {
                            let parsed: DatasetTag = value.parse().map_err(|e| ConfigError::Line {
                                line,
                                message: format!("{e}"),
                            })?;
                            tag = Some(parsed);
                        }
                        _ => return Err(unknown()),
                    }
                }
            }
        }

        if let Some(tag) = tag {
            // explicit weights win over the preset regardless of key order
            let w = cfg.synthgen.weights;
            cfg.synthgen.set_tag(tag);
            if weights {
                cfg.synthgen.weights = w;
            }
        }
        if let (Some(wl), Some(cl)) = (width, channels) {
            return Err(ConfigError::Line {
                line: wl.max(cl),
                message: "set either width or channels, not both".into(),
            });
        }
        if width.is_some() {
            cfg.network.channels =
                NetConfig::channels_for_width(cfg.width).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        } else if channels.is_some() {
            cfg.width = cfg.network.channels[0] as f64 / FULL_CHANNELS[0] as f64;
        }
        if let Some((n, line)) = levels {
            if n != cfg.network.thresholds.len() {
                return Err(ConfigError::Line {
                    line,
                    message: format!(
                        "levels = {n} but {} thresholds are configured",
                        cfg.network.thresholds.len()
                    ),
                });
            }
        }
        if !final_threshold {
            if let Some(&last) = cfg.network.thresholds.last() {
                cfg.network.final_threshold = last;
            }
        }
        if !preprocess_size {
            cfg.preprocess.size = cfg.network.base_size;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::parse(&text)
    }

    /// Checks every section's values.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let wrap = |e: dced_core::Error| ConfigError::Invalid(e.to_string());
        self.network.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        self.preprocess.validate().map_err(wrap)?;
        self.synthgen.validate().map_err(wrap)?;
        if self.preprocess.size != self.network.base_size {
            return Err(ConfigError::Invalid(format!(
                "preprocess size {} differs from network base size {}",
                self.preprocess.size, self.network.base_size
            )));
        }
        Ok(())
    }
}

/// Canonical description of everything that shapes a trained model's
/// behaviour at inference time.
pub fn canonical_model_text(net: &NetConfig, pre: &PreprocessConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "base_size={}", net.base_size);
    let _ = writeln!(s, "channels={:?}", net.channels);
    let thresholds: Vec<String> = net.thresholds.iter().map(|t| format!("{:08x}", t.to_bits())).collect();
    let _ = writeln!(s, "thresholds={}", thresholds.join(","));
    let _ = writeln!(s, "final_threshold={:08x}", net.final_threshold.to_bits());
    let _ = writeln!(s, "size={}", pre.size);
    let _ = writeln!(s, "wiener_window={}", pre.wiener_window);
    let _ = writeln!(s, "low_percentile={:016x}", pre.low_percentile.to_bits());
    let _ = writeln!(s, "high_percentile={:016x}", pre.high_percentile.to_bits());
    let _ = writeln!(s, "mask_threshold={}", pre.mask_threshold);
    s
}

/// First eight bytes of the SHA-256 of [`canonical_model_text`].
pub fn config_hash(net: &NetConfig, pre: &PreprocessConfig) -> u64 {
    let digest = Sha256::digest(canonical_model_text(net, pre).as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}
