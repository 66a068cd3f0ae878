//! Entity perception: coordinate-augmented visual features and their
//! low-rank bilinear fusion with the entity context of the sentence.

use crate::tensor::{Result, Tape, Tensor, TensorError, Var};

pub const COORD_CHANNELS: usize = 8;

/// `H×W×8` spatial encoding; per cell
/// `[x_min, x_center, x_max, y_min, y_center, y_max, 1/W, 1/H]` with edges
/// normalised to `[-1, 1]`.
pub fn make_coord_feature(h: usize, w: usize) -> Tensor {
    assert!(h >= 1 && w >= 1, "coordinate grid needs positive extents");
    let mut data = Vec::with_capacity(h * w * COORD_CHANNELS);
    let edge = |i: usize, n: usize| -1.0 + 2.0 * i as f64 / n as f64;
    for i in 0..h {
        let (y0, y1) = (edge(i, h), edge(i + 1, h));
        for j in 0..w {
            let (x0, x1) = (edge(j, w), edge(j + 1, w));
            data.extend_from_slice(&[
                x0,
                (x0 + x1) / 2.0,
                x1,
                y0,
                (y0 + y1) / 2.0,
                y1,
                1.0 / w as f64,
                1.0 / h as f64,
            ]);
        }
    }
    Tensor::new(vec![h, w, COORD_CHANNELS], data).expect("coord shape")
}

/// Concatenates coordinates onto `H×W×C_b` (or every frame of `K×H×W×C_b`)
/// and applies the 1×1 convolution `{prefix}.W`, `{prefix}.b`.
pub fn fuse_coordinates(tape: &mut Tape, visual: Var, coords: Var, prefix: &str) -> Result<Var> {
    let w = tape.param(&format!("{prefix}.W"))?;
    let b = tape.param(&format!("{prefix}.b"))?;
    match tape.shape(visual).len() {
        3 => fuse_coordinates_frame(tape, visual, coords, w, b),
        4 => {
            let frames = tape.shape(visual)[0];
            let mut out = Vec::with_capacity(frames);
            for k in 0..frames {
                let frame = tape.index_axis0(visual, k)?;
                let x = fuse_coordinates_frame(tape, frame, coords, w, b)?;
                out.push(x);
            }
            tape.stack_axis0(&out)
        }
        _ => Err(TensorError::Rank {
            op: "fuse_coordinates",
            expected: 3,
            shape: tape.shape(visual).to_vec(),
        }),
    }
}

fn fuse_coordinates_frame(tape: &mut Tape, frame: Var, coords: Var, w: Var, b: Var) -> Result<Var> {
    if tape.shape(frame)[..2] != tape.shape(coords)[..2] {
        return Err(TensorError::ShapeMismatch {
            op: "fuse_coordinates",
            lhs: tape.shape(frame).to_vec(),
            rhs: tape.shape(coords).to_vec(),
        });
    }
    let x = tape.concat_channels(&[frame, coords])?;
    tape.conv1x1(x, w, b)
}

/// Number of rank-1 terms stored under `{prefix}.W_3.*`.
pub fn stored_rank(tape: &Tape, prefix: &str) -> usize {
    (0..).take_while(|i| tape.has_param(&format!("{prefix}.W_3.{i}"))).count()
}

/// `M = Σ_{i<r} (q_e·W_{3i}) ⊙ (X·W_{4i})`; one language projection per
/// term, broadcast over every position of the `H×W×C_v` map.
pub fn bilinear_fuse(tape: &mut Tape, x: Var, q_e: Var, prefix: &str, rank: usize) -> Result<Var> {
    let stored = stored_rank(tape, prefix);
    if rank == 0 || stored != rank {
        return Err(TensorError::Invalid {
            op: "bilinear_fuse",
            msg: format!("rank {rank} requested but `{prefix}` stores {stored} terms"),
        });
    }
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 {
        return Err(TensorError::Rank {
            op: "bilinear_fuse",
            expected: 3,
            shape,
        });
    }
    let (h, w, cv) = (shape[0], shape[1], shape[2]);
    let flat = tape.reshape(x, &[h * w, cv])?;
    let cl = tape.shape(q_e)[0];
    let q = tape.reshape(q_e, &[1, cl])?;
    let mut acc: Option<Var> = None;
    for i in 0..rank {
        let w3 = tape.param(&format!("{prefix}.W_3.{i}"))?;
        let w4 = tape.param(&format!("{prefix}.W_4.{i}"))?;
        let lang = tape.matmul(q, w3)?;
        let vis = tape.matmul(flat, w4)?;
        let term = tape.mul(vis, lang)?;
        acc = Some(match acc {
            Some(a) => tape.add(a, term)?,
            None => term,
        });
    }
    let m = acc.expect("rank >= 1");
    let cm = tape.shape(m)[1];
    tape.reshape(m, &[h, w, cm])
}
