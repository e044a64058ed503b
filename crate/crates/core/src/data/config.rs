//! Training configuration and its flat `key=value` file format.

use crate::error::{Error, Result};

/// Which quantization scheme a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantScheme {
    /// Nearest-codeword selection with straight-through gradients.
    KMeans,
    /// Gumbel-Softmax selection through a learned projection.
    GumbelSoftmax,
}

impl QuantScheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            QuantScheme::KMeans => "km",
            QuantScheme::GumbelSoftmax => "gs",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "km" => Ok(QuantScheme::KMeans),
            "gs" => Ok(QuantScheme::GumbelSoftmax),
            other => Err(Error::Format(format!("unknown scheme {other:?} (km|gs)"))),
        }
    }
}

/// All tunables of the training pipeline. Defaults are the desk-scale
/// values; everything is overridable through config files or CLI flags.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub scheme: QuantScheme,
    /// Gumbel temperature at step 0.
    pub tau_start: f64,
    /// Gumbel temperature at the final step.
    pub tau_end: f64,
    /// Commitment weight of the risk-minimization loss.
    pub beta: f64,
    /// Weight of the risk-minimization loss in the total objective.
    pub gamma: f64,
    /// Contrastive temperature.
    pub kappa: f64,
    /// Number of distractors per masked step (capped by availability).
    pub num_negatives: usize,
    /// Context window length in frames for anomaly scoring.
    pub win: usize,
    /// Neighbor count for anomaly scoring.
    pub k_neighbors: usize,
    /// Minimum gap between detected peaks, in seconds.
    pub min_peak_gap: f64,
    /// Probability that a mask span starts at a given frame.
    pub mask_prob: f64,
    /// Mask span length in frames.
    pub mask_span: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Total training steps for pretrain/adapt.
    pub steps: usize,
    /// Gradient-ascent iterations of the codeword-mapping phase.
    pub map_steps: usize,
    /// Learning rate of the mapping phase.
    pub map_lr: f64,
    /// Fraction of pretraining done before the mapping phase runs.
    pub warmup_frac: f64,
    /// Input feature dimension d.
    pub input_dim: usize,
    /// Codeword / encoder-output dimension d_e.
    pub model_dim: usize,
    /// Encoder hidden-layer width.
    pub hidden_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            scheme: QuantScheme::KMeans,
            tau_start: 2.0,
            tau_end: 0.5,
            beta: 2.0,
            gamma: 0.5,
            kappa: 0.1,
            num_negatives: 10,
            win: 10,
            k_neighbors: 20,
            min_peak_gap: 0.06,
            mask_prob: 0.065,
            mask_span: 3,
            learning_rate: 0.05,
            seed: 0,
            steps: 400,
            map_steps: 60,
            map_lr: 0.5,
            warmup_frac: 0.2,
            input_dim: 16,
            model_dim: 16,
            hidden_dim: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau_start", self.tau_start),
            ("tau_end", self.tau_end),
            ("beta", self.beta),
            ("kappa", self.kappa),
            ("min_peak_gap", self.min_peak_gap),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Validation(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::Validation(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if self.win < 1 {
            return Err(Error::Validation("win must be >= 1".into()));
        }
        if self.k_neighbors < 1 {
            return Err(Error::Validation("k_neighbors must be >= 1".into()));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(Error::Validation(format!(
                "mask_prob must be in (0, 1), got {}",
                self.mask_prob
            )));
        }
        if self.mask_span < 1 {
            return Err(Error::Validation("mask_span must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Validation("learning_rate must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return Err(Error::Validation("warmup_frac must be in [0, 1]".into()));
        }
        if self.input_dim < 1 || self.model_dim < 1 || self.hidden_dim < 1 {
            return Err(Error::Validation("model dimensions must be >= 1".into()));
        }
        Ok(())
    }

    /// Serialize as a flat `key=value` file, one key per line.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        kv("scheme", self.scheme.as_str().to_string());
        kv("tau_start", self.tau_start.to_string());
        kv("tau_end", self.tau_end.to_string());
        kv("beta", self.beta.to_string());
        kv("gamma", self.gamma.to_string());
        kv("kappa", self.kappa.to_string());
        kv("num_negatives", self.num_negatives.to_string());
        kv("win", self.win.to_string());
        kv("k_neighbors", self.k_neighbors.to_string());
        kv("min_peak_gap", self.min_peak_gap.to_string());
        kv("mask_prob", self.mask_prob.to_string());
        kv("mask_span", self.mask_span.to_string());
        kv("learning_rate", self.learning_rate.to_string());
        kv("seed", self.seed.to_string());
        kv("steps", self.steps.to_string());
        kv("map_steps", self.map_steps.to_string());
        kv("map_lr", self.map_lr.to_string());
        kv("warmup_frac", self.warmup_frac.to_string());
        kv("input_dim", self.input_dim.to_string());
        kv("model_dim", self.model_dim.to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        out
    }

    /// Apply `key=value` lines on top of `self`. Unknown keys fail.
    pub fn apply_kv_str(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("line {}: expected key=value, got {raw:?}", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Set a single field by key name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Format(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "scheme" => self.scheme = QuantScheme::parse(value)?,
            "tau_start" => self.tau_start = num(key, value)?,
            "tau_end" => self.tau_end = num(key, value)?,
            "beta" => self.beta = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "kappa" => self.kappa = num(key, value)?,
            "num_negatives" => self.num_negatives = num(key, value)?,
            "win" => self.win = num(key, value)?,
            "k_neighbors" => self.k_neighbors = num(key, value)?,
            "min_peak_gap" => self.min_peak_gap = num(key, value)?,
            "mask_prob" => self.mask_prob = num(key, value)?,
            "mask_span" => self.mask_span = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "steps" => self.steps = num(key, value)?,
            "map_steps" => self.map_steps = num(key, value)?,
            "map_lr" => self.map_lr = num(key, value)?,
            "warmup_frac" => self.warmup_frac = num(key, value)?,
            "input_dim" => self.input_dim = num(key, value)?,
            "model_dim" => self.model_dim = num(key, value)?,
            "hidden_dim" => self.hidden_dim = num(key, value)?,
            other => return Err(Error::Format(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_kv_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
