//! Text-guided feature exchange across the three levels, ConvLSTM fusion and
//! the mask head.

use serde::{Deserialize, Serialize};

use crate::tensor::{ops, Result, Tape, TensorError, Var};

/// Level names in `maps` order.
pub const LEVELS: [&str; 3] = ["l3", "l4", "l5"];

/// `Y³, Y⁴, Y⁵` after `round` exchange rounds.
#[derive(Debug, Clone, Copy)]
pub struct LevelSet {
    pub maps: [Var; 3],
    pub round: usize,
}

impl LevelSet {
    pub fn new(tape: &Tape, maps: [Var; 3]) -> Result<Self> {
        let s = tape.shape(maps[0]);
        for &m in &maps[1..] {
            if tape.shape(m) != s {
                return Err(TensorError::ShapeMismatch {
                    op: "LevelSet::new",
                    lhs: s.to_vec(),
                    rhs: tape.shape(m).to_vec(),
                });
            }
        }
        if s.len() != 3 {
            return Err(TensorError::Rank {
                op: "LevelSet::new",
                expected: 3,
                shape: s.to_vec(),
            });
        }
        Ok(Self { maps, round: 0 })
    }
}

/// `Λ = (s·W_10)(Y·W_11)ᵀ` over the `HW` positions, then `g = Λ·Y`.
/// Returns `(g, Λ)` with `Λ` of shape `1×HW`.
pub fn sentence_pool(tape: &mut Tape, y: Var, s: Var, prefix: &str) -> Result<(Var, Var)> {
    let shape = tape.shape(y).to_vec();
    let (hw, cm) = (shape[0] * shape[1], shape[2]);
    let w10 = tape.param(&format!("{prefix}.W_10"))?;
    let w11 = tape.param(&format!("{prefix}.W_11"))?;
    if tape.shape(w10)[1] != tape.shape(w11)[1] {
        return Err(TensorError::ShapeMismatch {
            op: "sentence_pool",
            lhs: tape.shape(w10).to_vec(),
            rhs: tape.shape(w11).to_vec(),
        });
    }
    let cl = tape.shape(s)[0];
    let s_row = tape.reshape(s, &[1, cl])?;
    let q = tape.matmul(s_row, w10)?;
    let flat = tape.reshape(y, &[hw, cm])?;
    let k = tape.matmul(flat, w11)?;
    let kt = tape.transpose(k)?;
    let lambda = tape.matmul(q, kt)?;
    let g = tape.matmul(lambda, flat)?;
    let g = tape.reshape(g, &[cm])?;
    Ok((g, lambda))
}

/// `c = fc([s, g])` with no activation; the gate sigmoid is applied by the caller.
pub fn context_vector(tape: &mut Tape, s: Var, g: Var, prefix: &str) -> Result<Var> {
    let cat = tape.concat_channels(&[s, g])?;
    let n = tape.shape(cat)[0];
    let row = tape.reshape(cat, &[1, n])?;
    let w = tape.param(&format!("{prefix}.fc.W"))?;
    let b = tape.param(&format!("{prefix}.fc.b"))?;
    let c = tape.affine(row, w, b)?;
    let cm = tape.shape(c)[1];
    tape.reshape(c, &[cm])
}

/// Per-level gate `σ(c_i)` computed from the current snapshot.
pub fn level_gate(tape: &mut Tape, y: Var, s: Var, prefix: &str) -> Result<Var> {
    let (g, _) = sentence_pool(tape, y, s, prefix)?;
    let c = context_vector(tape, s, g, prefix)?;
    Ok(tape.sigmoid(c))
}

/// `Y_k^i = Y_{k−1}^i + σ(c^i) ⊙ Σ_{j≠i} Y_{k−1}^j` for all three levels from
/// the same snapshot. The donor sum is formed before gating so it does not
/// depend on donor order.
pub fn exchange_round(tape: &mut Tape, levels: &LevelSet, s: Var, prefix: &str) -> Result<LevelSet> {
    let mut gates = [levels.maps[0]; 3];
    for (i, gate) in gates.iter_mut().enumerate() {
        *gate = level_gate(tape, levels.maps[i], s, &format!("{prefix}.{}", LEVELS[i]))?;
    }
    let mut next = levels.maps;
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let donors = tape.add(levels.maps[j], levels.maps[k])?;
        let gated = tape.mul(donors, gates[i])?;
        next[i] = tape.add(levels.maps[i], gated)?;
    }
    Ok(LevelSet {
        maps: next,
        round: levels.round + 1,
    })
}

/// Runs `rounds` exchange rounds; zero rounds is the identity.
pub fn exchange(tape: &mut Tape, levels: LevelSet, s: Var, prefix: &str, rounds: usize) -> Result<LevelSet> {
    let mut cur = levels;
    for _ in 0..rounds {
        cur = exchange_round(tape, &cur, s, prefix)?;
    }
    Ok(cur)
}

/// Order in which the levels are fed to the ConvLSTM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LstmOrder {
    #[default]
    DeepToShallow,
    ShallowToDeep,
}

impl LstmOrder {
    pub fn sequence(self, levels: &LevelSet) -> [Var; 3] {
        let [y3, y4, y5] = levels.maps;
        match self {
            LstmOrder::DeepToShallow => [y5, y4, y3],
            LstmOrder::ShallowToDeep => [y3, y4, y5],
        }
    }
}

/// Hidden and cell maps, `H×W×cell` each.
#[derive(Debug, Clone, Copy)]
pub struct ConvLstmState {
    pub hidden: Var,
    pub cell: Var,
}

/// One ConvLSTM step with kernel `{prefix}.W` (`3×3×(C_in+cell)×4cell`,
/// gate order i, f, o, g) and bias `{prefix}.b`.
pub fn convlstm_step(tape: &mut Tape, x: Var, state: ConvLstmState, prefix: &str) -> Result<ConvLstmState> {
    let kernel = tape.param(&format!("{prefix}.W"))?;
    let bias = tape.param(&format!("{prefix}.b"))?;
    let cell = tape.shape(state.cell)[2];
    let xh = tape.concat_channels(&[x, state.hidden])?;
    let pre = tape.conv3x3(xh, kernel)?;
    let pre = tape.add(pre, bias)?;
    if tape.shape(pre)[2] != 4 * cell {
        return Err(TensorError::ShapeMismatch {
            op: "convlstm_step",
            lhs: tape.shape(pre).to_vec(),
            rhs: tape.shape(state.cell).to_vec(),
        });
    }
    let gate = |tape: &mut Tape, n: usize| tape.slice_channels(pre, n * cell, cell);
    let i = gate(tape, 0)?;
    let f = gate(tape, 1)?;
    let o = gate(tape, 2)?;
    let g = gate(tape, 3)?;
    let (i, f, o, g) = (tape.sigmoid(i), tape.sigmoid(f), tape.sigmoid(o), tape.tanh(g));
    let keep = tape.mul(f, state.cell)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(ConvLstmState { hidden: h, cell: c })
}

/// Scans `sequence` from a zero state and returns the final hidden map.
pub fn convlstm_fuse(tape: &mut Tape, sequence: &[Var], prefix: &str) -> Result<Var> {
    let bias = tape.param(&format!("{prefix}.b"))?;
    let cell = tape.shape(bias)[0] / 4;
    let first = sequence.first().ok_or_else(|| TensorError::Invalid {
        op: "convlstm_fuse",
        msg: "empty sequence".into(),
    })?;
    let s = tape.shape(*first);
    let zero = tape.leaf(crate::tensor::Tensor::zeros(&[s[0], s[1], cell]));
    let mut state = ConvLstmState { hidden: zero, cell: zero };
    for &x in sequence {
        state = convlstm_step(tape, x, state, prefix)?;
    }
    Ok(state.hidden)
}

/// 1×1 head `{prefix}.W`, `{prefix}.b` to one channel, then bilinear
/// (aligned corners) resampling to `out`. Returns `H_out×W_out` logits.
pub fn predict_mask(tape: &mut Tape, hidden: Var, prefix: &str, out: (usize, usize)) -> Result<Var> {
    if out.0 == 0 || out.1 == 0 {
        return Err(TensorError::Invalid {
            op: "predict_mask",
            msg: format!("output size {}x{} must be at least 1x1", out.0, out.1),
        });
    }
    let w = tape.param(&format!("{prefix}.W"))?;
    let b = tape.param(&format!("{prefix}.b"))?;
    let z = tape.conv1x1(hidden, w, b)?;
    let (h, wd) = (tape.shape(z)[0], tape.shape(z)[1]);
    let z = tape.reshape(z, &[h, wd])?;
    if (h, wd) == out {
        return Ok(z);
    }
    let uh = tape.leaf(ops::interpolation_matrix(out.0, h)?);
    let uw = tape.leaf(ops::interpolation_matrix(out.1, wd)?);
    let uw_t = tape.transpose(uw)?;
    let rows = tape.matmul(uh, z)?;
    tape.matmul(rows, uw_t)
}
