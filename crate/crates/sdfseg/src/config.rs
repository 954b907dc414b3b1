//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file only lists what it changes.
//! Unknown keys are rejected, values are range-checked on load, and
//! [`RunConfig::canonical`] lists every key in sorted order, so parsing the
//! canonical text reproduces the same configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use sdfseg_core::nn::Architecture;
use sdfseg_core::sampler::SamplerConfig;
use sdfseg_core::sde::SigmaSchedule;
use sdfseg_core::sdf::SdfConfig;
use sdfseg_core::train::{ShapeParams, TargetMode, TrainConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    // dataset
    pub grid: usize,
    pub n: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// `None` = derived from the grid size.
    pub min_radius: Option<f64>,
    pub max_radius: Option<f64>,
    // encoding
    pub delta: Option<f64>,
    pub threshold_tau: f64,
    // noise schedule
    pub sigma_min: f64,
    pub sigma_max: f64,
    // training
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub target_mode: TargetMode,
    pub checkpoint_every: usize,
    // network
    pub width: usize,
    pub embed_freqs: usize,
    pub embed_hidden: usize,
    pub freq_min: f64,
    pub freq_max: f64,
    // sampling
    pub levels: usize,
    pub correctors: usize,
    pub snr: f64,
    pub ensemble: usize,
    /// Number of conditioning images to sample (0 = all).
    pub max_images: usize,
    // analysis
    pub band: f64,
    pub t_list: Vec<f64>,
    pub sample_index: usize,
    // paths (empty = unset)
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub gt: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        let a = Architecture::default();
        let s = SamplerConfig::glas();
        Self {
            seed: 0,
            grid: 32,
            n: 8,
            min_ellipses: 1,
            max_ellipses: 4,
            min_radius: None,
            max_radius: None,
            delta: None,
            threshold_tau: s.threshold_tau,
            sigma_min: t.sigma_min,
            sigma_max: t.sigma_max,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_eps: t.adam_eps,
            batch_size: t.batch_size,
            total_steps: t.total_steps,
            target_mode: t.target_mode,
            checkpoint_every: t.checkpoint_every,
            width: a.width,
            embed_freqs: a.embed_freqs,
            embed_hidden: a.embed_hidden,
            freq_min: a.freq_min,
            freq_max: a.freq_max,
            levels: s.levels,
            correctors: s.correctors,
            snr: s.snr,
            ensemble: s.ensemble,
            max_images: 0,
            band: 3.0,
            t_list: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            sample_index: 0,
            data: None,
            model: None,
            pred: None,
            gt: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_auto(v: &str) -> std::result::Result<Option<f64>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        parse_num(v).map(Some)
    }
}

fn fmt_auto(v: Option<f64>) -> String {
    v.map_or_else(|| "auto".into(), |x| format!("{x:?}"))
}

fn parse_path(v: &str) -> std::result::Result<Option<PathBuf>, String> {
    Ok((!v.is_empty()).then(|| PathBuf::from(v)))
}

fn fmt_path(v: &Option<PathBuf>) -> String {
    v.as_ref().map_or_else(String::new, |p| p.display().to_string())
}

type Setter = fn(&mut RunConfig, &str) -> std::result::Result<(), String>;
type Getter = fn(&RunConfig) -> String;

macro_rules! keys {
    ($($name:ident: $set:expr, $get:expr;)*) => {
        const KEYS: &[(&str, Setter, Getter)] = &[
            $((stringify!($name), |c: &mut RunConfig, v: &str| { c.$name = ($set)(v)?; Ok(()) }, |c: &RunConfig| ($get)(&c.$name)),)*
        ];
    };
}

fn num<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String> {
    parse_num(v)
}

fn show_f(v: &f64) -> String {
    format!("{v:?}")
}

fn show<T: ToString>(v: &T) -> String {
    v.to_string()
}

keys! {
    adam_beta1: num::<f64>, show_f;
    adam_beta2: num::<f64>, show_f;
    adam_eps: num::<f64>, show_f;
    band: num::<f64>, show_f;
    batch_size: num::<usize>, show;
    checkpoint_every: num::<usize>, show;
    correctors: num::<usize>, show;
    data: parse_path, fmt_path;
    delta: parse_auto, |v: &Option<f64>| fmt_auto(*v);
    embed_freqs: num::<usize>, show;
    embed_hidden: num::<usize>, show;
    ensemble: num::<usize>, show;
    freq_max: num::<f64>, show_f;
    freq_min: num::<f64>, show_f;
    grid: num::<usize>, show;
    gt: parse_path, fmt_path;
    learning_rate: num::<f64>, show_f;
    levels: num::<usize>, show;
    max_ellipses: num::<usize>, show;
    max_images: num::<usize>, show;
    max_radius: parse_auto, |v: &Option<f64>| fmt_auto(*v);
    min_ellipses: num::<usize>, show;
    min_radius: parse_auto, |v: &Option<f64>| fmt_auto(*v);
    model: parse_path, fmt_path;
    n: num::<usize>, show;
    pred: parse_path, fmt_path;
    sample_index: num::<usize>, show;
    seed: num::<u64>, show;
    sigma_max: num::<f64>, show_f;
    sigma_min: num::<f64>, show_f;
    snr: num::<f64>, show_f;
    t_list: parse_t_list, |v: &Vec<f64>| v.iter().map(show_f).collect::<Vec<_>>().join(",");
    target_mode: |v: &str| TargetMode::parse(v).ok_or_else(|| format!("expected `sdf` or `binary`, got `{v}`")),
        |v: &TargetMode| v.as_str().to_string();
    threshold_tau: num::<f64>, show_f;
    total_steps: num::<usize>, show;
    width: num::<usize>, show;
}

fn parse_t_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',')
        .map(|t| parse_num::<f64>(t.trim()))
        .collect::<std::result::Result<Vec<_>, _>>()
}

impl RunConfig {
    pub fn keys() -> impl Iterator<Item = &'static str> {
        KEYS.iter().map(|k| k.0)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (_, setter, _) = KEYS
            .iter()
            .find(|k| k.0 == key)
            .ok_or_else(|| CliError::Config(format!("unknown key `{key}`")))?;
        setter(self, value.trim()).map_err(|m| CliError::Config(format!("{key}: {m}")))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        KEYS.iter().find(|k| k.0 == key).map(|k| (k.2)(self))
    }

    /// Applies a config document on top of `self`, then validates.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split_once('#').map_or(raw, |(l, _)| l).trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
            self.set(key, value)?;
        }
        self.validate()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::parse(&text)
    }

    /// Every key, sorted, one `key = value` per line.
    pub fn canonical(&self) -> String {
        KEYS.iter().map(|(k, _, g)| format!("{k} = {}\n", g(self))).collect()
    }

    /// Hex SHA-256 of the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: sdfseg_core::Error| CliError::Config(e.to_string());
        self.sdf_config().validate().map_err(cfg)?;
        self.schedule()?;
        self.train_config().validate().map_err(cfg)?;
        self.architecture().validate().map_err(cfg)?;
        self.sampler_config().validate().map_err(cfg)?;
        if !(sdfseg_core::train::MIN_GRID..=sdfseg_core::train::MAX_GRID).contains(&self.grid) {
            return Err(CliError::Config(format!("grid {} is outside 16..=128", self.grid)));
        }
        self.shape_params().validate(self.grid).map_err(cfg)?;
        if !(self.band >= 1.0) {
            return Err(CliError::Config("band must be at least 1".into()));
        }
        if let Some(t) = self.t_list.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(CliError::Config(format!("t = {t} is outside [0, 1]")));
        }
        Ok(())
    }

    pub fn sdf_config(&self) -> SdfConfig {
        let base = SdfConfig::for_grid(self.grid, self.grid);
        SdfConfig {
            delta: self.delta.unwrap_or(base.delta),
            threshold_tau: self.threshold_tau,
        }
    }

    pub fn schedule(&self) -> Result<SigmaSchedule> {
        SigmaSchedule::new(self.sigma_min, self.sigma_max).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn shape_params(&self) -> ShapeParams {
        let base = ShapeParams::for_grid(self.grid);
        ShapeParams {
            min_ellipses: self.min_ellipses,
            max_ellipses: self.max_ellipses,
            min_radius: self.min_radius.unwrap_or(base.min_radius),
            max_radius: self.max_radius.unwrap_or(base.max_radius),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            batch_size: self.batch_size,
            total_steps: self.total_steps,
            seed: self.seed,
            target_mode: self.target_mode,
            delta: self.sdf_config().delta,
            sigma_min: self.sigma_min,
            sigma_max: self.sigma_max,
            checkpoint_every: self.checkpoint_every,
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            width: self.width,
            embed_freqs: self.embed_freqs,
            embed_hidden: self.embed_hidden,
            freq_min: self.freq_min,
            freq_max: self.freq_max,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            levels: self.levels,
            correctors: self.correctors,
            snr: self.snr,
            threshold_tau: self.threshold_tau,
            ensemble: self.ensemble,
        }
    }

    /// Path-valued key that must be set for a command.
    pub fn require_path(&self, key: &str) -> Result<PathBuf> {
        let v = self.get(key).unwrap_or_default();
        if v.is_empty() {
            return Err(CliError::Usage(format!("`{key}` must be given (flag or config key)")));
        }
        Ok(PathBuf::from(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_and_unique() {
        let keys: Vec<_> = RunConfig::keys().collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(keys, sorted);
    }

    #[test]
    fn canonical_round_trip() {
        let d = RunConfig::default();
        assert_eq!(RunConfig::parse(&d.canonical()).unwrap(), d);
        let text = "# desk run\nseed = 9\nwidth = 16 # narrower\ntarget_mode = binary\ndelta = 4\nt_list = 0, 0.5,1\ndata = /tmp/x\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.width, 16);
        assert_eq!(c.target_mode, TargetMode::Binary);
        assert_eq!(c.delta, Some(4.0));
        assert_eq!(c.t_list, vec![0.0, 0.5, 1.0]);
        assert_eq!(c.data, Some(PathBuf::from("/tmp/x")));
        let again = RunConfig::parse(&c.canonical()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.canonical(), c.canonical());
        assert_ne!(c.hash(), d.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_documents() {
        for bad in [
            "colour = red",
            "seed",
            "seed = -1",
            "seed = 1\nseed = 2",
            "learning_rate = 0",
            "levels = 1",
            "snr = -0.1",
            "grid = 8",
            "t_list = 0,1.5",
            "target_mode = mask",
            "max_radius = 400",
            "band = 0",
        ] {
            let err = RunConfig::parse(bad).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{bad}: {err}");
        }
    }

    #[test]
    fn derived_defaults() {
        let c = RunConfig::parse("grid = 64").unwrap();
        assert_eq!(c.sdf_config().delta, 10.0);
        assert_eq!(RunConfig::default().sdf_config().delta, 5.0);
        assert_eq!(RunConfig::default().train_config().delta, 5.0);
        assert_eq!(c.shape_params(), ShapeParams::for_grid(64));
    }
}
