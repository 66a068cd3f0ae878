//! Word-type classification and the probability-weighted sentence
//! aggregates built from it.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Tape, TensorError, Var};

/// Image pipelines classify words into 4 categories, video into 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Image,
    Video,
}

impl Mode {
    pub fn categories(self) -> usize {
        match self {
            Mode::Image => 4,
            Mode::Video => 5,
        }
    }
}

/// Column of each word category in a [`WordTypeProbs`] row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordType {
    Entity,
    Attribute,
    Relation,
    Action,
    Unnecessary,
}

impl WordType {
    pub fn column(self, mode: Mode) -> Option<usize> {
        match (self, mode) {
            (WordType::Entity, _) => Some(0),
            (WordType::Attribute, _) => Some(1),
            (WordType::Relation, _) => Some(2),
            (WordType::Action, Mode::Image) => None,
            (WordType::Action, Mode::Video) => Some(3),
            (WordType::Unnecessary, m) => Some(m.categories() - 1),
        }
    }
}

/// `T × categories` probabilities recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct WordTypeProbs {
    pub probs: Var,
    pub mode: Mode,
}

/// Looks up `ids` in the embedding table parameter `table`, giving `T × C_l`
/// word features.
pub fn embed_tokens(tape: &mut Tape, table: &str, ids: &[usize]) -> Result<Var> {
    if ids.is_empty() {
        return Err(TensorError::Invalid {
            op: "embed_tokens",
            msg: "a sentence needs at least one token".into(),
        });
    }
    let table = tape.param(table)?;
    tape.gather_rows(table, ids)
}

/// `p_t = softmax(W_2·σ(W_1·l_t + b_1) + b_2)` for every word, reading
/// `{prefix}.W_1`, `.b_1`, `.W_2`, `.b_2`.
pub fn classify_words(tape: &mut Tape, words: Var, prefix: &str, mode: Mode) -> Result<WordTypeProbs> {
    let w1 = tape.param(&format!("{prefix}.W_1"))?;
    let b1 = tape.param(&format!("{prefix}.b_1"))?;
    let w2 = tape.param(&format!("{prefix}.W_2"))?;
    let b2 = tape.param(&format!("{prefix}.b_2"))?;
    if tape.shape(w2)[0] != mode.categories() {
        return Err(TensorError::Invalid {
            op: "classify_words",
            msg: format!(
                "{mode:?} mode needs {} categories but W_2 has shape {:?}",
                mode.categories(),
                tape.shape(w2)
            ),
        });
    }
    let w1t = tape.transpose(w1)?;
    let hidden = tape.affine(words, w1t, b1)?;
    let hidden = tape.sigmoid(hidden);
    let w2t = tape.transpose(w2)?;
    let logits = tape.affine(hidden, w2t, b2)?;
    let probs = tape.softmax_rows(logits)?;
    Ok(WordTypeProbs { probs, mode })
}

fn check_lengths(tape: &Tape, op: &'static str, words: Var, p: &WordTypeProbs) -> Result<()> {
    let (tw, tp) = (tape.shape(words)[0], tape.shape(p.probs)[0]);
    if tw != tp {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: tape.shape(words).to_vec(),
            rhs: tape.shape(p.probs).to_vec(),
        });
    }
    Ok(())
}

/// `T × 1` column holding the summed probability of `types`.
fn type_weight(tape: &mut Tape, p: &WordTypeProbs, types: &[WordType]) -> Result<Var> {
    let mut acc: Option<Var> = None;
    for ty in types {
        let col = ty.column(p.mode).ok_or_else(|| TensorError::Invalid {
            op: "word type",
            msg: format!("{ty:?} words are not classified in {:?} mode", p.mode),
        })?;
        let c = tape.slice_channels(p.probs, col, 1)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, c)?,
            None => c,
        });
    }
    Ok(acc.expect("at least one word type"))
}

fn weighted_sum(tape: &mut Tape, words: Var, weights: Var) -> Result<Var> {
    let scaled = tape.mul(weights, words)?;
    tape.sum_axis(scaled, 0)
}

/// `q_e = Σ_t (p_ent + p_attr)·l_t`.
pub fn entity_context(tape: &mut Tape, words: Var, p: &WordTypeProbs) -> Result<Var> {
    check_lengths(tape, "entity_context", words, p)?;
    let w = type_weight(tape, p, &[WordType::Entity, WordType::Attribute])?;
    weighted_sum(tape, words, w)
}

/// Rows `r_t = p_rel·l_t`.
pub fn relational_features(tape: &mut Tape, words: Var, p: &WordTypeProbs) -> Result<Var> {
    check_lengths(tape, "relational_features", words, p)?;
    let w = type_weight(tape, p, &[WordType::Relation])?;
    tape.mul(w, words)
}

/// Rows `p_act·l_t`; video mode only.
pub fn action_features(tape: &mut Tape, words: Var, p: &WordTypeProbs) -> Result<Var> {
    check_lengths(tape, "action_features", words, p)?;
    let w = type_weight(tape, p, &[WordType::Action])?;
    tape.mul(w, words)
}

/// `q_a = Σ_t p_act·l_t`; video mode only.
pub fn action_context(tape: &mut Tape, words: Var, p: &WordTypeProbs) -> Result<Var> {
    check_lengths(tape, "action_context", words, p)?;
    let w = type_weight(tape, p, &[WordType::Action])?;
    weighted_sum(tape, words, w)
}

/// `s = Σ_t (p_ent + p_attr + p_rel [+ p_act])·l_t`. The action term is only
/// added in video mode and only when `include_action` is set.
pub fn necessary_sentence(tape: &mut Tape, words: Var, p: &WordTypeProbs, include_action: bool) -> Result<Var> {
    check_lengths(tape, "necessary_sentence", words, p)?;
    let mut types = vec![WordType::Entity, WordType::Attribute, WordType::Relation];
    if include_action && p.mode == Mode::Video {
        types.push(WordType::Action);
    }
    let w = type_weight(tape, p, &types)?;
    weighted_sum(tape, words, w)
}

/// Token vocabulary: one token per line, line index is the id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNKNOWN_TOKEN: &str = "<unk>";

impl Vocab {
    pub fn from_lines(text: &str) -> Self {
        let tokens: Vec<String> = text.lines().map(|l| l.trim().to_string()).collect();
        let mut index = HashMap::new();
        for (i, t) in tokens.iter().enumerate() {
            index.entry(t.clone()).or_insert(i);
        }
        Self { tokens, index }
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        Ok(Self::from_lines(&std::fs::read_to_string(path)?))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace tokenisation; unknown words map to `<unk>` when the
    /// vocabulary has it and are an error otherwise.
    pub fn encode(&self, sentence: &str) -> std::result::Result<Vec<usize>, String> {
        sentence
            .split_whitespace()
            .map(|w| {
                self.index
                    .get(w)
                    .or_else(|| self.index.get(UNKNOWN_TOKEN))
                    .copied()
                    .ok_or_else(|| format!("token `{w}` is not in the vocabulary"))
            })
            .collect()
    }
}
