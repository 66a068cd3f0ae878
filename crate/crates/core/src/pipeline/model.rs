//! End-to-end forward passes for still images and clips.

use thiserror::Error;

use super::params::param_layout;
use super::Config;
use crate::action::{self, TemporalAdjacency};
use crate::entity::{bilinear_fuse, fuse_coordinates, make_coord_feature};
use crate::linguistic::{self, Mode};
use crate::relation::{self, fuse_blocks};
use crate::tensor::{ParamStore, Tape, Tensor, TensorError, Var};
use crate::tgfe::{self, LevelSet, LEVELS};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("parameter `{name}` is not read by this configuration")]
    UnexpectedParam { name: String },
    #[error("parameter `{name}` is missing")]
    MissingParam { name: String },
    #[error("parameter `{name}` has shape {found:?}, configuration expects {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("input {what}: expected {expected}, found {found}")]
    Input {
        what: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// One referring expression with its backbone features and mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Levels 3, 4, 5: `H×W×C_b` for images, `K×H×W×C_b` for clips.
    pub features: [Tensor; 3],
    pub tokens: Vec<usize>,
    /// `{0,1}` mask of the (centre) frame.
    pub mask: Tensor,
}

/// A parameter store checked against the layout of its configuration, so a
/// forward pass can only read what the mode permits.
#[derive(Debug, Clone, Copy)]
pub struct Model<'a> {
    pub cfg: &'a Config,
    pub params: &'a ParamStore,
}

impl<'a> Model<'a> {
    pub fn new(cfg: &'a Config, params: &'a ParamStore) -> Result<Self, ModelError> {
        let layout = param_layout(cfg);
        for spec in &layout {
            let t = params.get(&spec.name).map_err(|_| ModelError::MissingParam { name: spec.name.clone() })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = params.names().find(|n| !layout.iter().any(|s| s.name == *n)) {
            return Err(ModelError::UnexpectedParam { name: extra.to_string() });
        }
        Ok(Self { cfg, params })
    }

    /// Checks the sample against the configuration; returns the feature `H×W`.
    pub fn check_sample(&self, sample: &Sample) -> Result<(usize, usize), ModelError> {
        let cfg = self.cfg;
        let lead = match cfg.mode {
            Mode::Image => 0,
            Mode::Video => 1,
        };
        let mut hw = None;
        for (i, f) in sample.features.iter().enumerate() {
            let level = LEVELS[i];
            let s = f.shape();
            if s.len() != 3 + lead {
                return Err(ModelError::Input {
                    what: format!("{level} features rank"),
                    expected: (3 + lead).to_string(),
                    found: format!("{s:?}"),
                });
            }
            if lead == 1 && s[0] != cfg.k {
                return Err(ModelError::Input {
                    what: format!("{level} clip length"),
                    expected: cfg.k.to_string(),
                    found: s[0].to_string(),
                });
            }
            if s[2 + lead] != cfg.backbone[i] {
                return Err(ModelError::Input {
                    what: format!("{level} channels"),
                    expected: cfg.backbone[i].to_string(),
                    found: s[2 + lead].to_string(),
                });
            }
            let here = (s[lead], s[lead + 1]);
            match hw {
                None => hw = Some(here),
                Some(prev) if prev != here => {
                    return Err(ModelError::Input {
                        what: format!("{level} spatial size"),
                        expected: format!("{}x{}", prev.0, prev.1),
                        found: format!("{}x{}", here.0, here.1),
                    })
                }
                _ => {}
            }
        }
        if let Some(&bad) = sample.tokens.iter().find(|&&t| t >= cfg.vocab) {
            return Err(ModelError::Input {
                what: "token id".into(),
                expected: format!("< {}", cfg.vocab),
                found: bad.to_string(),
            });
        }
        if sample.tokens.is_empty() {
            return Err(ModelError::Input {
                what: "token count".into(),
                expected: ">= 1".into(),
                found: "0".into(),
            });
        }
        Ok(hw.expect("three levels"))
    }

    /// Output size: explicit config, else mask shape, else feature size.
    pub fn out_size(&self, sample: &Sample, feature_hw: (usize, usize)) -> (usize, usize) {
        if let Some([h, w]) = self.cfg.out_size {
            return (h, w);
        }
        match sample.mask.shape() {
            [h, w] if h * w > 0 => (*h, *w),
            _ => feature_hw,
        }
    }

    /// Records the forward pass on `tape` (which must be bound to
    /// `self.params`) and returns the `H_out×W_out` logits.
    pub fn forward(&self, tape: &mut Tape, sample: &Sample) -> Result<Var, ModelError> {
        let hw = self.check_sample(sample)?;
        let out = self.out_size(sample, hw);
        let cfg = self.cfg;

        let words = linguistic::embed_tokens(tape, "lang.embed", &sample.tokens)?;
        let probs = linguistic::classify_words(tape, words, "lang", cfg.mode)?;
        let q_e = linguistic::entity_context(tape, words, &probs)?;
        let relations = linguistic::relational_features(tape, words, &probs)?;
        let sentence = linguistic::necessary_sentence(tape, words, &probs, cfg.sentence_action)?;
        let coords = tape.leaf(make_coord_feature(hw.0, hw.1));
        let action = match cfg.mode {
            Mode::Video if cfg.use_aar => Some((
                linguistic::action_context(tape, words, &probs)?,
                linguistic::action_features(tape, words, &probs)?,
            )),
            _ => None,
        };

        let mut maps = Vec::with_capacity(3);
        for (i, level) in LEVELS.iter().enumerate() {
            let feat = tape.leaf(sample.features[i].clone());
            let x = fuse_coordinates(tape, feat, coords, &format!("{level}.coord"))?;
            let y = match cfg.mode {
                Mode::Image => self.image_level(tape, level, x, q_e, relations, sentence)?,
                Mode::Video => self.video_level(tape, level, x, q_e, relations, sentence, action)?,
            };
            maps.push(y);
        }
        let levels = LevelSet::new(tape, [maps[0], maps[1], maps[2]])?;
        let levels = tgfe::exchange(tape, levels, sentence, "tgfe", cfg.n)?;
        let seq = cfg.convlstm_order.sequence(&levels);
        let hidden = tgfe::convlstm_fuse(tape, &seq, "lstm")?;
        Ok(tgfe::predict_mask(tape, hidden, "head", out)?)
    }

    fn image_level(
        &self,
        tape: &mut Tape,
        level: &str,
        x: Var,
        q_e: Var,
        relations: Var,
        sentence: Var,
    ) -> Result<Var, ModelError> {
        let cfg = self.cfg;
        let m = bilinear_fuse(tape, x, q_e, &format!("{level}.ep"), cfg.r)?;
        let out = format!("{level}.out");
        if !cfg.use_rar {
            return Ok(fuse_blocks(tape, &[m], sentence, &out)?);
        }
        let (_, reasoned) = relation::reason(tape, m, relations, &format!("{level}.rar"), cfg.g)?;
        Ok(relation::assemble_output(tape, m, reasoned, sentence, &out, cfg.cmf, Some(x))?)
    }

    #[allow(clippy::too_many_arguments)]
    fn video_level(
        &self,
        tape: &mut Tape,
        level: &str,
        x: Var,
        q_e: Var,
        relations: Var,
        sentence: Var,
        action: Option<(Var, Var)>,
    ) -> Result<Var, ModelError> {
        let cfg = self.cfg;
        let ep = format!("{level}.ep");
        let mut frames = Vec::with_capacity(cfg.k);
        for f in 0..cfg.k {
            let xf = tape.index_axis0(x, f)?;
            frames.push(bilinear_fuse(tape, xf, q_e, &ep, cfg.r)?);
        }
        let centre = cfg.k / 2;
        let m_ctr = frames[centre];
        let mut blocks = Vec::with_capacity(3);
        let mut context_map = m_ctr;
        if cfg.use_rar {
            let (_, reasoned) = relation::reason(tape, m_ctr, relations, &format!("{level}.rar"), cfg.g)?;
            let first = if cfg.cmf { m_ctr } else { tape.index_axis0(x, centre)? };
            blocks.push(first);
            blocks.push(reasoned);
            context_map = reasoned;
        } else {
            blocks.push(m_ctr);
        }
        if let Some((q_a, action_words)) = action {
            let aar = format!("{level}.aar");
            let clip = tape.stack_axis0(&frames)?;
            let att = action::temporal_attend(tape, clip, q_a, &aar)?;
            let adjacency = match cfg.aar_adjacency {
                TemporalAdjacency::DR => action::temporal_adjacency(tape, att.vertices, &aar)?,
                TemporalAdjacency::AR => action::temporal_adjacency_routed(tape, att.vertices, action_words, &aar)?,
            };
            let context = action::temporal_graph_convolve(tape, att.vertices, adjacency, &aar)?;
            let (projected, _) = action::project_to_frame(tape, context, context_map, &aar)?;
            blocks.push(projected);
        }
        Ok(fuse_blocks(tape, &blocks, sentence, &format!("{level}.out"))?)
    }

    /// Mean BCE of the forward pass against the sample mask.
    pub fn loss(&self, tape: &mut Tape, sample: &Sample) -> Result<Var, ModelError> {
        let logits = self.forward(tape, sample)?;
        if tape.shape(logits) != sample.mask.shape() {
            return Err(ModelError::Input {
                what: "mask shape".into(),
                expected: format!("{:?}", tape.shape(logits)),
                found: format!("{:?}", sample.mask.shape()),
            });
        }
        Ok(tape.bce_with_logits(logits, &sample.mask)?)
    }

    /// Logits as a plain tensor.
    pub fn predict(&self, sample: &Sample) -> Result<Tensor, ModelError> {
        let mut tape = Tape::with_params(self.params);
        let logits = self.forward(&mut tape, sample)?;
        Ok(tape.value(logits).clone())
    }
}
