//! Flat `key=value` run configuration shared by preparation and training.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::AdamConfig;
use crate::scenario::ScenarioConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub lambda: f64,
    pub tau: f64,
    pub split_threshold: f64,
    pub warmup_epochs: usize,
    pub sim_window: usize,
    pub geo_threshold_km: f64,
    pub downtown_radius_km: f64,
    pub tourist_threshold: f64,
    pub accommodation_categories: Vec<String>,
    pub seed: u64,
    pub split_ratio: f64,
    /// Fraction of each user's training windows held out for early stopping.
    pub val_ratio: f64,
    pub no_split: bool,
    pub no_subgraph: bool,
    /// Local-time offset for formats without one.
    pub tz_offset_min: i32,
    pub min_poi_checkins: usize,
    pub min_user_checkins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let scenario = ScenarioConfig::default();
        TrainConfig {
            dim: 128,
            layers: 3,
            lr: 1e-3,
            weight_decay: 5e-4,
            batch_size: 200,
            epochs: 100,
            patience: 10,
            lambda: 0.1,
            tau: 0.1,
            split_threshold: -0.5,
            warmup_epochs: 20,
            sim_window: 10,
            geo_threshold_km: 2.5,
            downtown_radius_km: scenario.downtown_radius_km,
            tourist_threshold: scenario.tourist_threshold,
            accommodation_categories: scenario.accommodation_categories,
            seed: 42,
            split_ratio: 0.8,
            val_ratio: 0.1,
            no_split: false,
            no_subgraph: false,
            tz_offset_min: 0,
            min_poi_checkins: 0,
            min_user_checkins: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse::<T>()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean `{value}` for `{key}`"))),
    }
}

impl TrainConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key.trim() {
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "tau" => self.tau = parse(key, value)?,
            "split_threshold" => self.split_threshold = parse(key, value)?,
            "warmup_epochs" => self.warmup_epochs = parse(key, value)?,
            "sim_window" => self.sim_window = parse(key, value)?,
            "geo_threshold_km" => self.geo_threshold_km = parse(key, value)?,
            "downtown_radius_km" => self.downtown_radius_km = parse(key, value)?,
            "tourist_threshold" => self.tourist_threshold = parse(key, value)?,
            "accommodation_categories" => {
                self.accommodation_categories = value
                    .split(',')
                    .map(|s| s.trim().to_lowercase())
                    .filter(|s| !s.is_empty())
                    .collect()
            }
            "seed" => self.seed = parse(key, value)?,
            "split_ratio" => self.split_ratio = parse(key, value)?,
            "val_ratio" => self.val_ratio = parse(key, value)?,
            "no_split" => self.no_split = parse_bool(key, value)?,
            "no_subgraph" => self.no_subgraph = parse_bool(key, value)?,
            "tz_offset_min" => self.tz_offset_min = parse(key, value)?,
            "min_poi_checkins" => self.min_poi_checkins = parse(key, value)?,
            "min_user_checkins" => self.min_user_checkins = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        put("dim", self.dim.to_string());
        put("layers", self.layers.to_string());
        put("lr", self.lr.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("batch_size", self.batch_size.to_string());
        put("epochs", self.epochs.to_string());
        put("patience", self.patience.to_string());
        put("lambda", self.lambda.to_string());
        put("tau", self.tau.to_string());
        put("split_threshold", self.split_threshold.to_string());
        put("warmup_epochs", self.warmup_epochs.to_string());
        put("sim_window", self.sim_window.to_string());
        put("geo_threshold_km", self.geo_threshold_km.to_string());
        put("downtown_radius_km", self.downtown_radius_km.to_string());
        put("tourist_threshold", self.tourist_threshold.to_string());
        put("accommodation_categories", self.accommodation_categories.join(","));
        put("seed", self.seed.to_string());
        put("split_ratio", self.split_ratio.to_string());
        put("val_ratio", self.val_ratio.to_string());
        put("no_split", self.no_split.to_string());
        put("no_subgraph", self.no_subgraph.to_string());
        put("tz_offset_min", self.tz_offset_min.to_string());
        put("min_poi_checkins", self.min_poi_checkins.to_string());
        put("min_user_checkins", self.min_user_checkins.to_string());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 {
            return fail("dim must be positive");
        }
        if self.layers == 0 {
            return fail("layers must be at least 1");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return fail("lr must be positive");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be nonnegative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return fail("lambda must lie in [0, 1]");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return fail("tau must be positive");
        }
        if self.sim_window == 0 {
            return fail("sim_window must be positive");
        }
        if !(self.geo_threshold_km > 0.0 && self.downtown_radius_km > 0.0) {
            return fail("distance thresholds must be positive");
        }
        if !(0.0..=1.0).contains(&self.tourist_threshold) {
            return fail("tourist_threshold must lie in [0, 1]");
        }
        if !(self.split_ratio > 0.0 && self.split_ratio <= 1.0) {
            return fail("split_ratio must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.val_ratio) {
            return fail("val_ratio must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig::new(self.lr, self.weight_decay)
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            tourist_threshold: self.tourist_threshold,
            downtown_radius_km: self.downtown_radius_km,
            accommodation_categories: self.accommodation_categories.clone(),
        }
    }
}
