//! Parameter layout implied by a [`Config`] and its seeded initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::Config;
use crate::action::TemporalAdjacency;
use crate::entity::COORD_CHANNELS;
use crate::linguistic::Mode;
use crate::tensor::{ParamStore, Tensor};
use crate::tgfe::LEVELS;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamSpec {
    fn new(name: impl Into<String>, shape: &[usize]) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
        }
    }

    /// Biases are the rank-1 entries; they start at zero.
    pub fn is_bias(&self) -> bool {
        self.shape.len() == 1
    }

    /// Glorot bound `√(6/(fan_in+fan_out))`; 3×3 kernels count all taps.
    pub fn glorot_bound(&self) -> f64 {
        let (fan_in, fan_out) = match *self.shape.as_slice() {
            [a, b] => (a, b),
            [kh, kw, ci, co] => (kh * kw * ci, kh * kw * co),
            _ => return 0.0,
        };
        (6.0 / (fan_in + fan_out) as f64).sqrt()
    }
}

/// Output block width of one level before the sentence channels.
fn output_blocks(cfg: &Config) -> usize {
    let first = if cfg.use_rar && !cfg.cmf { cfg.c_v } else { cfg.c_m };
    let reasoned = if cfg.use_rar { cfg.c_m } else { 0 };
    let temporal = if cfg.mode == Mode::Video && cfg.use_aar { cfg.c_m } else { 0 };
    first + reasoned + temporal
}

/// Every parameter the forward pass of `cfg` reads, in a fixed order.
pub fn param_layout(cfg: &Config) -> Vec<ParamSpec> {
    let (cv, cl, cm) = (cfg.c_v, cfg.c_l, cfg.c_m);
    let mut out = vec![
        ParamSpec::new("lang.embed", &[cfg.vocab, cl]),
        ParamSpec::new("lang.W_1", &[cfg.c_n(), cl]),
        ParamSpec::new("lang.b_1", &[cfg.c_n()]),
        ParamSpec::new("lang.W_2", &[cfg.mode.categories(), cfg.c_n()]),
        ParamSpec::new("lang.b_2", &[cfg.mode.categories()]),
    ];
    for (level, &width) in LEVELS.iter().zip(&cfg.backbone) {
        let p = |s: &str| format!("{level}.{s}");
        out.push(ParamSpec::new(p("coord.W"), &[width + COORD_CHANNELS, cv]));
        out.push(ParamSpec::new(p("coord.b"), &[cv]));
        for i in 0..cfg.r {
            out.push(ParamSpec::new(p(&format!("ep.W_3.{i}")), &[cl, cm]));
            out.push(ParamSpec::new(p(&format!("ep.W_4.{i}")), &[cv, cm]));
        }
        if cfg.use_rar {
            out.push(ParamSpec::new(p("rar.W_v"), &[cm, cm]));
            out.push(ParamSpec::new(p("rar.b_v"), &[cm]));
            out.push(ParamSpec::new(p("rar.W_5"), &[cm, cfg.d()]));
            out.push(ParamSpec::new(p("rar.W_6"), &[cl, cfg.d()]));
            for j in 0..cfg.g {
                out.push(ParamSpec::new(p(&format!("rar.W_7.{j}")), &[cm, cm]));
            }
        }
        if cfg.mode == Mode::Video && cfg.use_aar {
            let da = cfg.d_a();
            let w13_rows = match cfg.aar_adjacency {
                TemporalAdjacency::DR => cm,
                TemporalAdjacency::AR => cl,
            };
            out.push(ParamSpec::new(p("aar.W_8"), &[cm, da]));
            out.push(ParamSpec::new(p("aar.W_9"), &[cl, da]));
            out.push(ParamSpec::new(p("aar.W_12"), &[cm, da]));
            out.push(ParamSpec::new(p("aar.W_13"), &[w13_rows, da]));
            out.push(ParamSpec::new(p("aar.W_14a"), &[cm, cm]));
            out.push(ParamSpec::new(p("aar.W_14b"), &[cm, da]));
            out.push(ParamSpec::new(p("aar.W_15"), &[cm, da]));
        }
        out.push(ParamSpec::new(p("out.W"), &[output_blocks(cfg) + cl, cm]));
        out.push(ParamSpec::new(p("out.b"), &[cm]));
    }
    if cfg.n > 0 {
        for level in LEVELS {
            let p = |s: &str| format!("tgfe.{level}.{s}");
            out.push(ParamSpec::new(p("W_10"), &[cl, cfg.d_p()]));
            out.push(ParamSpec::new(p("W_11"), &[cm, cfg.d_p()]));
            out.push(ParamSpec::new(p("fc.W"), &[cl + cm, cm]));
            out.push(ParamSpec::new(p("fc.b"), &[cm]));
        }
    }
    out.push(ParamSpec::new("lstm.W", &[3, 3, cm + cfg.c_h, 4 * cfg.c_h]));
    out.push(ParamSpec::new("lstm.b", &[4 * cfg.c_h]));
    out.push(ParamSpec::new("head.W", &[cfg.c_h, 1]));
    out.push(ParamSpec::new("head.b", &[1]));
    out
}

/// Stream id for a parameter name, stable across platforms.
fn stream_of(name: &str) -> u64 {
    let digest = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Draws every weight uniformly in `±glorot_bound` from a ChaCha8 stream
/// keyed by `(cfg.seed, name)`; biases are zero.
pub fn init_params(cfg: &Config) -> ParamStore {
    let mut store = ParamStore::new(cfg.seed);
    for spec in param_layout(cfg) {
        let value = if spec.is_bias() {
            Tensor::zeros(&spec.shape)
        } else {
            let bound = spec.glorot_bound();
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(stream_of(&spec.name));
            Tensor::from_fn(&spec.shape, |_| rng.random_range(-bound..bound))
        };
        store.insert(spec.name, value).expect("layout names are unique");
    }
    store
}

/// SHA-256 over the `(name, shape)` sequence of a layout.
pub fn layout_digest<'a>(entries: impl IntoIterator<Item = (&'a str, &'a [usize])>) -> [u8; 32] {
    let mut h = Sha256::new();
    for (name, shape) in entries {
        h.update((name.len() as u32).to_le_bytes());
        h.update(name.as_bytes());
        h.update((shape.len() as u32).to_le_bytes());
        for &d in shape {
            h.update((d as u64).to_le_bytes());
        }
    }
    h.finalize().into()
}

pub fn config_digest(cfg: &Config) -> [u8; 32] {
    let layout = param_layout(cfg);
    layout_digest(layout.iter().map(|s| (s.name.as_str(), s.shape.as_slice())))
}

pub fn store_digest(store: &ParamStore) -> [u8; 32] {
    layout_digest(store.iter().map(|(n, t)| (n, t.shape())))
}
