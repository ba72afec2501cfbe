//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file may override any subset and
//! command-line `--key value` flags override the file. Unknown keys are
//! rejected. The resolved set is written next to each command's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autonn::AdamConfig;
use crate::dataset::batch::ImageDims;
use crate::dataset::SyntheticWorldConfig;
use crate::model::{parse_schedule, ModelConfig, Scheme};
use crate::objective::LossParams;
use crate::train::TrainConfig;
use crate::{Error, Result};

/// `(key, default, help)`
pub const KEYS: &[(&str, &str, &str)] = &[
    ("manifest", "", "dataset manifest CSV"),
    ("out", "", "output directory or file"),
    ("schedule", "64,128,256,512,512,512,512", "per-block output channels"),
    ("scheme", "I", "orientation injection: I | II | rgb-baseline"),
    ("ground_height", "64", "panorama height in pixels"),
    ("ground_width", "128", "panorama width in pixels"),
    ("satellite_height", "112", "overhead tile height in pixels"),
    ("satellite_width", "112", "overhead tile width in pixels"),
    ("batch_size", "12", "pairs per batch"),
    ("lr", "1e-5", "Adam learning rate"),
    ("alpha", "10", "soft-margin loss weight"),
    ("gem_p", "3", "GeM pooling exponent"),
    ("steps", "1000", "optimizer steps"),
    ("seed", "0", "random seed"),
    ("augment", "false", "random circular panorama shifts during training"),
    ("checkpoint", "", "model checkpoint file"),
    ("checkpoint_every", "0", "steps between intermediate checkpoints (0 = end only)"),
    ("side", "satellite", "view to embed: ground | satellite"),
    ("split", "test", "manifest split to use: train | test | all"),
    ("ground_index", "", "ground-view index file"),
    ("satellite_index", "", "satellite-view index file"),
    ("image", "", "query panorama"),
    ("top_k", "10", "rows printed by query"),
    ("radius", "5", "localization radius in metres"),
    ("levels", "0,5,10,15,20", "heading-error levels in degrees"),
    ("n_locations", "600", "synthetic locations"),
    ("n_test", "200", "synthetic test locations"),
    ("landmarks", "4", "landmarks per synthetic location"),
    ("palette_size", "4", "synthetic landmark colours"),
    ("meters_per_pixel", "0.12", "overhead ground sampling distance"),
    ("max_landmark_range", "6", "maximum landmark range in metres"),
    ("noise_level", "0.1", "synthetic per-pixel noise in [0, 1]"),
    ("view", "ground", "orientation map to export: ground | satellite"),
    ("color", "true", "export the map as an RGB image instead of gray+alpha"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|(k, v, _)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        if !known(&key) {
            return Err(Error::validation(format!("unknown config key `{key}`")));
        }
        self.values.insert(key, value.trim().to_string());
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected key = value, got `{line}`"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.merge_text(&text)
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .unwrap_or_else(|| panic!("unregistered key {key}"))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| Error::validation(format!("bad value `{raw}` for `{key}`")))
    }

    /// A non-empty path value, or a usage error naming the flag.
    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        let raw = self.raw(key);
        if raw.is_empty() {
            return Err(Error::invalid(format!("missing required --{key}")));
        }
        Ok(PathBuf::from(raw))
    }

    pub fn list_f64(&self, key: &str) -> Result<Vec<f64>> {
        self.raw(key)
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::validation(format!("bad number `{s}` in `{key}`")))
            })
            .collect()
    }

    /// Resolved configuration in `key = value` form, keys sorted.
    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn write_snapshot(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            schedule: parse_schedule(self.raw("schedule"))
                .map_err(|e| Error::validation(e.to_string()))?,
            scheme: self
                .raw("scheme")
                .parse::<Scheme>()
                .map_err(|e| Error::validation(e.to_string()))?,
            gem_p: self.get("gem_p")?,
        };
        cfg.validate().map_err(|e| Error::validation(e.to_string()))?;
        Ok(cfg)
    }

    pub fn image_dims(&self) -> Result<ImageDims> {
        Ok(ImageDims {
            ground_h: self.get("ground_height")?,
            ground_w: self.get("ground_width")?,
            satellite_h: self.get("satellite_height")?,
            satellite_w: self.get("satellite_width")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            model: self.model_config()?,
            batch_size: self.get("batch_size")?,
            adam: AdamConfig {
                lr: self.get("lr")?,
                ..AdamConfig::default()
            },
            loss: LossParams {
                alpha: self.get("alpha")?,
            },
            steps: self.get("steps")?,
            seed: self.get("seed")?,
            augment: self.get("augment")?,
            checkpoint_every: self.get("checkpoint_every")?,
        })
    }

    pub fn synth_config(&self) -> Result<SyntheticWorldConfig> {
        Ok(SyntheticWorldConfig {
            n_locations: self.get("n_locations")?,
            n_test: self.get("n_test")?,
            landmarks_per_location: self.get("landmarks")?,
            palette_size: self.get("palette_size")?,
            pano_width: self.get("ground_width")?,
            pano_height: self.get("ground_height")?,
            overhead_width: self.get("satellite_width")?,
            overhead_height: self.get("satellite_height")?,
            meters_per_pixel: self.get("meters_per_pixel")?,
            max_landmark_range: self.get("max_landmark_range")?,
            noise_level: self.get("noise_level")?,
            seed: self.get("seed")?,
        })
    }
}
