//! Experiment configuration: `key = value` lines, `#` comments. Unknown keys
//! and unparsable values are errors. [`RunConfig::render`] writes every key
//! back out, so a run manifest doubles as a config for replaying the run.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{QecError, Result};
use crate::ground_truth::GtConfig;
use crate::lattice::CodeKind;
use crate::noise::NoiseKind;
use crate::qwp::QwpConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecoderTag {
    Mwpm,
    Neural,
}

impl DecoderTag {
    pub fn name(self) -> &'static str {
        match self {
            DecoderTag::Mwpm => "mwpm_manhattan",
            DecoderTag::Neural => "nmwpm",
        }
    }
}

impl FromStr for DecoderTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mwpm_manhattan" | "mwpm" => Ok(DecoderTag::Mwpm),
            "nmwpm" => Ok(DecoderTag::Neural),
            _ => Err(format!("unknown decoder {s:?} (mwpm_manhattan, nmwpm)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub code: CodeKind,
    /// Code distance for single-lattice commands.
    pub distance: usize,
    /// Code distances swept by `bench` and `threshold`.
    pub distances: Vec<usize>,
    pub noise: NoiseKind,
    /// Physical error rates swept by `bench`, `threshold` and `gt-audit`.
    pub p: Vec<f64>,
    pub shots: u64,
    pub decoders: Vec<DecoderTag>,
    /// Checkpoint path; `{L}` is replaced by the code distance.
    pub checkpoint: Option<String>,
    pub syndrome: Option<PathBuf>,
    pub records: usize,
    pub eval_shots: usize,
    pub model: QwpConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let noise = NoiseKind::Independent;
        RunConfig {
            seed: 0,
            code: CodeKind::Toric,
            distance: 4,
            distances: vec![6, 8],
            noise,
            p: vec![0.09, 0.095, 0.1, 0.105, 0.11, 0.115],
            shots: 100_000,
            decoders: vec![DecoderTag::Mwpm],
            checkpoint: None,
            syndrome: None,
            records: 10_000,
            eval_shots: 2_000,
            model: QwpConfig::default(),
            train: TrainConfig::for_noise(noise),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse().map_err(|e| QecError::Config(format!("{key} = {v:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Every accepted key, in rendering order.
pub const KEYS: [&str; 27] = [
    "seed",
    "code",
    "distance",
    "distances",
    "noise",
    "p",
    "shots",
    "decoders",
    "checkpoint",
    "syndrome",
    "records",
    "eval_shots",
    "d_hidden",
    "gnn_layers",
    "heads",
    "enc_layers",
    "batch_size",
    "lr_init",
    "lr_min",
    "batches_per_epoch",
    "epochs",
    "lambda",
    "p_min",
    "p_max",
    "hist_bins",
    "gt_budget_ms",
    "gt_max_candidates",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "seed" => {
                self.seed = parse(key, v)?;
                self.train.seed = self.seed;
            }
            "code" => self.code = parse(key, v)?,
            "distance" => self.distance = parse(key, v)?,
            "distances" => self.distances = parse_list(key, v)?,
            "noise" => {
                let noise: NoiseKind = parse(key, v)?;
                if noise != self.noise && self.train.p_range == self.noise.default_p_range() {
                    self.train.p_range = noise.default_p_range();
                }
                self.noise = noise;
            }
            "p" => self.p = parse_list(key, v)?,
            "shots" => self.shots = parse(key, v)?,
            "decoders" => self.decoders = parse_list(key, v)?,
            "checkpoint" => self.checkpoint = (!v.is_empty()).then(|| v.to_string()),
            "syndrome" => self.syndrome = (!v.is_empty()).then(|| PathBuf::from(v)),
            "records" => self.records = parse(key, v)?,
            "eval_shots" => self.eval_shots = parse(key, v)?,
            "d_hidden" => self.model.d_hidden = parse(key, v)?,
            "gnn_layers" => self.model.gnn_layers = parse(key, v)?,
            "heads" => self.model.heads = parse(key, v)?,
            "enc_layers" => self.model.enc_layers = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr_init" => self.train.lr_init = parse(key, v)?,
            "lr_min" => self.train.lr_min = parse(key, v)?,
            "batches_per_epoch" => self.train.batches_per_epoch = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "lambda" => self.train.lambda = parse(key, v)?,
            "p_min" => self.train.p_range.0 = parse(key, v)?,
            "p_max" => self.train.p_range.1 = parse(key, v)?,
            "hist_bins" => self.train.hist_bins = parse(key, v)?,
            "gt_budget_ms" => self.train.gt.budget_ms = parse(key, v)?,
            "gt_max_candidates" => self.train.gt.max_candidates = parse(key, v)?,
            other => return Err(QecError::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| QecError::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            self.set(k, v)
                .map_err(|e| QecError::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| QecError::Config(format!("override {kv:?} is not key=value")))?;
        self.set(k, v)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| QecError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    fn value(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "seed" => self.seed.to_string(),
            "code" => self.code.name().into(),
            "distance" => self.distance.to_string(),
            "distances" => join(&self.distances),
            "noise" => self.noise.name().into(),
            "p" => join(&self.p),
            "shots" => self.shots.to_string(),
            "decoders" => self.decoders.iter().map(|d| d.name()).collect::<Vec<_>>().join(","),
            "checkpoint" => self.checkpoint.clone().unwrap_or_default(),
            "syndrome" => self
                .syndrome
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "records" => self.records.to_string(),
            "eval_shots" => self.eval_shots.to_string(),
            "d_hidden" => self.model.d_hidden.to_string(),
            "gnn_layers" => self.model.gnn_layers.to_string(),
            "heads" => self.model.heads.to_string(),
            "enc_layers" => self.model.enc_layers.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "lr_init" => t.lr_init.to_string(),
            "lr_min" => t.lr_min.to_string(),
            "batches_per_epoch" => t.batches_per_epoch.to_string(),
            "epochs" => t.epochs.to_string(),
            "lambda" => t.lambda.to_string(),
            "p_min" => t.p_range.0.to_string(),
            "p_max" => t.p_range.1.to_string(),
            "hist_bins" => t.hist_bins.to_string(),
            "gt_budget_ms" => t.gt.budget_ms.to_string(),
            "gt_max_candidates" => t.gt.max_candidates.to_string(),
            _ => unreachable!("rendering unknown key {key}"),
        }
    }

    /// Every key with its resolved value.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value(k))).collect()
    }

    /// Checkpoint path for code distance `l`.
    pub fn checkpoint_for(&self, l: usize) -> Option<PathBuf> {
        self.checkpoint
            .as_ref()
            .map(|c| PathBuf::from(c.replace("{L}", &l.to_string())))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QecError::Config(m));
        if self.p.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad(format!("p values must lie in [0, 1], got {:?}", self.p));
        }
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if self.decoders.is_empty() {
            return bad("decoders must name at least one decoder".into());
        }
        self.model.validate().map_err(|e| QecError::Config(e.to_string()))?;
        self.train.validate()
    }

    pub fn gt(&self) -> &GtConfig {
        &self.train.gt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_lists_and_overrides() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# grid\ncode = rotated\ndistances = 5, 7\np = 0.01,0.02 # two points\n\nnoise=depolarizing\n")
            .unwrap();
        cfg.apply_override("shots=500").unwrap();
        assert_eq!(cfg.code, CodeKind::RotatedSurface);
        assert_eq!(cfg.distances, vec![5, 7]);
        assert_eq!(cfg.p, vec![0.01, 0.02]);
        assert_eq!(cfg.shots, 500);
        assert_eq!(cfg.train.p_range, NoiseKind::Depolarizing.default_p_range());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_errors() {
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.apply_text("shotz = 3"), Err(QecError::Config(_))));
        assert!(matches!(cfg.apply_text("shots = many"), Err(QecError::Config(_))));
        assert!(matches!(cfg.apply_text("shots 3"), Err(QecError::Config(_))));
        assert!(matches!(cfg.apply_override("code=hex"), Err(QecError::Config(_))));
    }

    #[test]
    fn rendering_replays_to_the_same_config() {
        let mut cfg = RunConfig::default();
        cfg.apply_text(
            "seed = 9\nd_hidden = 32\ncheckpoint = runs/L{L}/model.ckpt\np_min = 0.04\ndecoders = mwpm,nmwpm",
        )
        .unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.render()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(cfg.checkpoint_for(6), Some(PathBuf::from("runs/L6/model.ckpt")));
        assert_eq!(cfg.render().lines().count(), KEYS.len());
    }

    #[test]
    fn validation_catches_bad_grids() {
        let mut cfg = RunConfig {
            p: vec![1.5],
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.p = vec![0.1];
        cfg.model.d_hidden = 30;
        assert!(cfg.validate().is_err());
    }
}
