//! Relation-aware reasoning over a spatial graph whose edges are routed
//! through the relational words of the expression.
//!
//! Aggregation over vertices uses correctly rounded dot products, which makes
//! every stage exactly equivariant under a permutation of the vertices.

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

/// Vertex features and row-stochastic adjacency recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct SpatialGraph {
    pub vertices: Var,
    pub adjacency: Var,
}

/// Reshapes an `H×W×C_m` map to `N×C_m` and applies the vertex projection
/// `{prefix}.W_v`, `{prefix}.b_v`.
pub fn vertex_features(tape: &mut Tape, m: Var, prefix: &str) -> Result<Var> {
    let shape = tape.shape(m).to_vec();
    if shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "vertex_features",
            expected: 3,
            shape,
        });
    }
    let w = tape.param(&format!("{prefix}.W_v"))?;
    let b = tape.param(&format!("{prefix}.b_v"))?;
    let flat = tape.reshape(m, &[shape[0] * shape[1], shape[2]])?;
    tape.affine(flat, w, b)
}

fn projection_widths(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (wa, wb) = (tape.shape(a), tape.shape(b));
    if wa[1] != wb[1] {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: wa.to_vec(),
            rhs: wb.to_vec(),
        });
    }
    Ok(())
}

/// Routed adjacency between `vertices` (`N×C_v`) through `routers`
/// (`T×C_r`): `B = (V·W_a)(R·W_b)ᵀ`, then
/// `softmax_T(B) · softmax_N(Bᵀ)`.
pub fn routed_adjacency(tape: &mut Tape, vertices: Var, routers: Var, w_a: Var, w_b: Var) -> Result<Var> {
    projection_widths(tape, "routed_adjacency", w_a, w_b)?;
    let pv = tape.matmul(vertices, w_a)?;
    let pr = tape.matmul(routers, w_b)?;
    let prt = tape.transpose(pr)?;
    let b = tape.matmul(pv, prt)?;
    let b1 = tape.softmax_rows(b)?;
    let bt = tape.transpose(b)?;
    let b2 = tape.softmax_rows(bt)?;
    tape.matmul(b1, b2)
}

/// `A = softmax_T(B)·softmax_N(Bᵀ)` with `B = (M̃·W_5)(R·W_6)ᵀ`.
pub fn build_adjacency(tape: &mut Tape, vertices: Var, relations: Var, prefix: &str) -> Result<Var> {
    let w5 = tape.param(&format!("{prefix}.W_5"))?;
    let w6 = tape.param(&format!("{prefix}.W_6"))?;
    routed_adjacency(tape, vertices, relations, w5, w6)
}

/// One residual graph layer `((A + I)·X)·W`, aggregation rounded exactly.
pub(crate) fn graph_layer(tape: &mut Tape, x: Var, adjacency: Var, weight: Var) -> Result<Var> {
    let n = tape.shape(adjacency)[0];
    if tape.shape(adjacency) != [n, n] || tape.shape(x)[0] != n {
        return Err(TensorError::ShapeMismatch {
            op: "graph_layer",
            lhs: tape.shape(adjacency).to_vec(),
            rhs: tape.shape(x).to_vec(),
        });
    }
    let eye = tape.leaf(Tensor::eye(n));
    let a_hat = tape.add(adjacency, eye)?;
    let agg = tape.matmul_exact(a_hat, x)?;
    tape.matmul(agg, weight)
}

/// Stacks `layers` graph layers over one adjacency, each with its own
/// `{prefix}.W_7.{j}`.
pub fn graph_convolve(tape: &mut Tape, vertices: Var, adjacency: Var, prefix: &str, layers: usize) -> Result<Var> {
    if layers == 0 {
        return Err(TensorError::Invalid {
            op: "graph_convolve",
            msg: "needs at least one layer".into(),
        });
    }
    let stored = (0..).take_while(|j| tape.has_param(&format!("{prefix}.W_7.{j}"))).count();
    if layers > stored {
        return Err(TensorError::Invalid {
            op: "graph_convolve",
            msg: format!("{layers} layers requested but `{prefix}` stores {stored}"),
        });
    }
    let mut x = vertices;
    for j in 0..layers {
        let w7 = tape.param(&format!("{prefix}.W_7.{j}"))?;
        x = graph_layer(tape, x, adjacency, w7)?;
    }
    Ok(x)
}

/// Repeats a `C` vector over an `H×W` grid.
pub fn repeat_spatial(tape: &mut Tape, v: Var, h: usize, w: usize) -> Result<Var> {
    let c = tape.shape(v)[0];
    tape.broadcast_to(v, &[h, w, c])
}

/// 1×1 projection `{prefix}.W`, `{prefix}.b` of the channel concatenation of
/// `blocks` followed by the repeated sentence vector.
pub fn fuse_blocks(tape: &mut Tape, blocks: &[Var], sentence: Var, prefix: &str) -> Result<Var> {
    let (h, w) = {
        let s = tape.shape(blocks[0]);
        (s[0], s[1])
    };
    let rep = repeat_spatial(tape, sentence, h, w)?;
    let mut parts = blocks.to_vec();
    parts.push(rep);
    let cat = tape.concat_channels(&parts)?;
    let wt = tape.param(&format!("{prefix}.W"))?;
    let b = tape.param(&format!("{prefix}.b"))?;
    tape.conv1x1(cat, wt, b)
}

/// `Y = conv1x1([M or X, M̄, repeat(s)])`. With `cmf` the first block is the
/// multimodal map `m`; otherwise the visual map `x` must be given.
pub fn assemble_output(
    tape: &mut Tape,
    m: Var,
    reasoned: Var,
    sentence: Var,
    prefix: &str,
    cmf: bool,
    x: Option<Var>,
) -> Result<Var> {
    let first = if cmf {
        m
    } else {
        x.ok_or_else(|| TensorError::Invalid {
            op: "assemble_output",
            msg: "visual features are required when cmf is disabled".into(),
        })?
    };
    fuse_blocks(tape, &[first, reasoned], sentence, prefix)
}

/// Full relation stage on one `H×W×C_m` map: vertex projection, routed
/// adjacency, graph convolution. Returns the graph and the reasoned map.
pub fn reason(tape: &mut Tape, m: Var, relations: Var, prefix: &str, layers: usize) -> Result<(SpatialGraph, Var)> {
    let shape = tape.shape(m).to_vec();
    let vertices = vertex_features(tape, m, prefix)?;
    let adjacency = build_adjacency(tape, vertices, relations, prefix)?;
    let out = graph_convolve(tape, vertices, adjacency, prefix, layers)?;
    let cm = tape.shape(out)[1];
    let reasoned = tape.reshape(out, &[shape[0], shape[1], cm])?;
    Ok((SpatialGraph { vertices, adjacency }, reasoned))
}
