//! Action-aware temporal reasoning over the frames of a clip.

use serde::{Deserialize, Serialize};

use crate::relation::{fuse_blocks, graph_layer, routed_adjacency};
use crate::tensor::{Result, Tape, TensorError, Var};

/// How the temporal adjacency is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TemporalAdjacency {
    /// Scaled softmax of direct frame-to-frame feature relevance.
    #[default]
    DR,
    /// Action words route frames to frames, as in the spatial graph.
    AR,
}

/// Per-frame pooled vertices and the attention that produced them.
#[derive(Debug, Clone, Copy)]
pub struct TemporalAttention {
    /// `K × C_m` pooled frame features.
    pub vertices: Var,
    /// `K × HW` attention over positions, one row per frame.
    pub attention: Var,
}

fn clip_dims(tape: &Tape, clip: Var) -> Result<[usize; 4]> {
    match *tape.shape(clip) {
        [k, h, w, c] if k >= 1 => Ok([k, h, w, c]),
        _ => Err(TensorError::Rank {
            op: "temporal_attend",
            expected: 4,
            shape: tape.shape(clip).to_vec(),
        }),
    }
}

fn check_width(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a)[1] != tape.shape(b)[1] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: tape.shape(a).to_vec(),
            rhs: tape.shape(b).to_vec(),
        });
    }
    Ok(())
}

/// Action-guided pooling: per frame, logits `(M_k·W_8)·(q_a·W_9)` over the
/// `HW` positions, scaled by `1/√C_m`, softmaxed, then used to pool `M_k`.
pub fn temporal_attend(tape: &mut Tape, clip: Var, q_a: Var, prefix: &str) -> Result<TemporalAttention> {
    let [k, h, w, cm] = clip_dims(tape, clip)?;
    let w8 = tape.param(&format!("{prefix}.W_8"))?;
    let w9 = tape.param(&format!("{prefix}.W_9"))?;
    check_width(tape, "temporal_attend", w8, w9)?;
    let hw = h * w;
    let flat = tape.reshape(clip, &[k * hw, cm])?;
    let keys = tape.matmul(flat, w8)?;
    let cl = tape.shape(q_a)[0];
    let q = tape.reshape(q_a, &[1, cl])?;
    let query = tape.matmul(q, w9)?;
    let query_t = tape.transpose(query)?;
    let logits = tape.matmul(keys, query_t)?;
    let logits = tape.reshape(logits, &[k, hw])?;
    let logits = tape.scale(logits, 1.0 / (cm as f64).sqrt());
    let attention = tape.softmax_rows(logits)?;

    let weights = tape.reshape(attention, &[k, hw, 1])?;
    let frames = tape.reshape(clip, &[k, hw, cm])?;
    let weighted = tape.mul(weights, frames)?;
    let vertices = tape.sum_axis(weighted, 1)?;
    Ok(TemporalAttention { vertices, attention })
}

/// `A_V = softmax_rows((P̃·W_12)(P̃·W_13)ᵀ / √C_m)`.
pub fn temporal_adjacency(tape: &mut Tape, vertices: Var, prefix: &str) -> Result<Var> {
    let w12 = tape.param(&format!("{prefix}.W_12"))?;
    let w13 = tape.param(&format!("{prefix}.W_13"))?;
    check_width(tape, "temporal_adjacency", w12, w13)?;
    let cm = tape.shape(vertices)[1];
    let a = tape.matmul(vertices, w12)?;
    let b = tape.matmul(vertices, w13)?;
    let bt = tape.transpose(b)?;
    let logits = tape.matmul(a, bt)?;
    let logits = tape.scale(logits, 1.0 / (cm as f64).sqrt());
    tape.softmax_rows(logits)
}

/// Routed alternative: action-word features (`T×C_l`) act as routers between
/// frames, `softmax_T(B)·softmax_K(Bᵀ)` with `B = (P̃·W_12)(Q·W_13)ᵀ`.
pub fn temporal_adjacency_routed(tape: &mut Tape, vertices: Var, action_words: Var, prefix: &str) -> Result<Var> {
    let w12 = tape.param(&format!("{prefix}.W_12"))?;
    let w13 = tape.param(&format!("{prefix}.W_13"))?;
    routed_adjacency(tape, vertices, action_words, w12, w13)
}

/// `P̄_V = ((A_V + I)·P̃_V)·W_14a`.
pub fn temporal_graph_convolve(tape: &mut Tape, vertices: Var, adjacency: Var, prefix: &str) -> Result<Var> {
    let w = tape.param(&format!("{prefix}.W_14a"))?;
    graph_layer(tape, vertices, adjacency, w)
}

/// Projects temporal context onto the centre frame. The relevance between
/// every position of `M̄_ctr` and every frame of `P̄_V`,
/// `(M̄_ctr·W_15)(P̄_V·W_14b)ᵀ / √C_m`, is softmaxed over the frames, so each
/// position receives a convex combination of the temporal vertices.
/// Returns the `H×W×C_m` map and the `HW×K` attention.
pub fn project_to_frame(tape: &mut Tape, context: Var, centre: Var, prefix: &str) -> Result<(Var, Var)> {
    let shape = tape.shape(centre).to_vec();
    if shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "project_to_frame",
            expected: 3,
            shape,
        });
    }
    let (h, w, cm) = (shape[0], shape[1], shape[2]);
    let w14b = tape.param(&format!("{prefix}.W_14b"))?;
    let w15 = tape.param(&format!("{prefix}.W_15"))?;
    check_width(tape, "project_to_frame", w14b, w15)?;
    let flat = tape.reshape(centre, &[h * w, cm])?;
    let pos = tape.matmul(flat, w15)?;
    let frames = tape.matmul(context, w14b)?;
    let frames_t = tape.transpose(frames)?;
    let logits = tape.matmul(pos, frames_t)?;
    let logits = tape.scale(logits, 1.0 / (cm as f64).sqrt());
    let attention = tape.softmax_rows(logits)?;
    let out = tape.matmul_exact(attention, context)?;
    let out = tape.reshape(out, &[h, w, tape.shape(context)[1]])?;
    Ok((out, attention))
}

/// `Y_V = conv1x1([M_ctr, M̄_ctr, P̂_V, repeat(s)])`.
pub fn assemble_video_output(
    tape: &mut Tape,
    m_ctr: Var,
    reasoned_ctr: Var,
    temporal: Var,
    sentence: Var,
    prefix: &str,
) -> Result<Var> {
    let s = tape.shape(m_ctr).to_vec();
    for v in [reasoned_ctr, temporal] {
        if tape.shape(v) != s.as_slice() {
            return Err(TensorError::ShapeMismatch {
                op: "assemble_video_output",
                lhs: s,
                rhs: tape.shape(v).to_vec(),
            });
        }
    }
    fuse_blocks(tape, &[m_ctr, reasoned_ctr, temporal], sentence, prefix)
}
