use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::action::TemporalAdjacency;
use crate::linguistic::Mode;
use crate::tgfe::LstmOrder;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config key `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("config: {0}")]
    Parse(String),
}

/// Every width, knob and optimiser setting of a pipeline. Optional widths
/// fall back to the values documented on their accessors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mode: Mode,
    pub c_v: usize,
    pub c_l: usize,
    pub c_m: usize,
    /// Hidden width of the word classifier; defaults to `c_l / 2`.
    pub c_n: Option<usize>,
    /// Spatial routing width; defaults to `c_m`.
    pub d: Option<usize>,
    /// Temporal attention width; defaults to `c_m`.
    pub d_a: Option<usize>,
    /// Sentence pooling width; defaults to `c_m`.
    pub d_p: Option<usize>,
    /// ConvLSTM cell size.
    pub c_h: usize,
    /// Channel widths of the three backbone levels.
    pub backbone: [usize; 3],
    pub vocab: usize,
    pub r: usize,
    pub n: usize,
    pub g: usize,
    pub k: usize,
    pub cmf: bool,
    pub aar_adjacency: TemporalAdjacency,
    pub use_rar: bool,
    pub use_aar: bool,
    /// Adds action words to the sentence vector in video mode.
    pub sentence_action: bool,
    pub convlstm_order: LstmOrder,
    /// Prediction size `[H, W]`; defaults to the ground truth or feature size.
    pub out_size: Option<[usize; 2]>,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            mode: Mode::Image,
            c_v: 1000,
            c_l: 1000,
            c_m: 1000,
            c_n: None,
            d: None,
            d_a: None,
            d_p: None,
            c_h: 500,
            backbone: [512, 1024, 2048],
            vocab: 1000,
            r: 5,
            n: 3,
            g: 1,
            k: 5,
            cmf: true,
            aar_adjacency: TemporalAdjacency::DR,
            use_rar: true,
            use_aar: true,
            sentence_action: true,
            convlstm_order: LstmOrder::DeepToShallow,
            out_size: None,
            seed: 0,
            lr: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 5e-4,
            decoupled_weight_decay: true,
        }
    }
}

fn positive(key: &'static str, v: usize) -> Result<(), ConfigError> {
    if v == 0 {
        return Err(ConfigError::Invalid {
            key,
            msg: "must be at least 1".into(),
        });
    }
    Ok(())
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn c_n(&self) -> usize {
        self.c_n.unwrap_or((self.c_l / 2).max(1))
    }

    pub fn d(&self) -> usize {
        self.d.unwrap_or(self.c_m)
    }

    pub fn d_a(&self) -> usize {
        self.d_a.unwrap_or(self.c_m)
    }

    pub fn d_p(&self) -> usize {
        self.d_p.unwrap_or(self.c_m)
    }

    /// Frames per clip: `k` in video mode, 1 otherwise.
    pub fn frames(&self) -> usize {
        match self.mode {
            Mode::Image => 1,
            Mode::Video => self.k,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (key, v) in [
            ("c_v", self.c_v),
            ("c_l", self.c_l),
            ("c_m", self.c_m),
            ("c_n", self.c_n()),
            ("d", self.d()),
            ("d_a", self.d_a()),
            ("d_p", self.d_p()),
            ("c_h", self.c_h),
            ("vocab", self.vocab),
            ("r", self.r),
            ("g", self.g),
        ] {
            positive(key, v)?;
        }
        for &b in &self.backbone {
            positive("backbone", b)?;
        }
        if self.mode == Mode::Video {
            positive("k", self.k)?;
        }
        if let Some([h, w]) = self.out_size {
            positive("out_size", h)?;
            positive("out_size", w)?;
        }
        for (key, v) in [("lr", self.lr), ("eps", self.eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid {
                    key,
                    msg: format!("must be positive and finite, got {v}"),
                });
            }
        }
        for (key, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(ConfigError::Invalid {
                    key,
                    msg: format!("must lie in [0, 1), got {v}"),
                });
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(ConfigError::Invalid {
                key: "weight_decay",
                msg: format!("must be non-negative, got {}", self.weight_decay),
            });
        }
        Ok(())
    }

    /// Small image configuration used by the gradient checks: every width 8.
    pub fn toy(mode: Mode) -> Self {
        Self {
            mode,
            c_v: 8,
            c_l: 8,
            c_m: 8,
            c_n: Some(4),
            d: Some(8),
            d_a: Some(8),
            d_p: Some(8),
            c_h: 8,
            backbone: [8, 8, 8],
            vocab: 16,
            r: 2,
            n: 1,
            g: 1,
            k: 3,
            ..Self::default()
        }
    }
}
