//! Forward kernels and their vector-Jacobian products.
//!
//! Reductions accumulate in a fixed sequential order so that results are
//! reproducible bit for bit; `matmul_exact` is the one exception and rounds
//! each dot product exactly instead.

use super::exact::exact_sum;
use super::{Result, Tensor, TensorError};
use crate::par;

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::Rank {
            op,
            expected: rank,
            shape: t.shape().to_vec(),
        });
    }
    Ok(())
}

fn matmul_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    expect_rank(op, a, 2)?;
    expect_rank(op, b, 2)?;
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok((m, k, n))
}

/// `c[i][j] = Σ_t a[i][t]·b[t][j]`, accumulated for `t = 0..k` in order.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims("matmul", a, b)?;
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk(&mut out, n.max(1), m * k * n, |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (t, &av) in arow.iter().enumerate() {
            let brow = &bd[t * n..(t + 1) * n];
            for (c, &bv) in row.iter_mut().zip(brow) {
                *c += av * bv;
            }
        }
    });
    Tensor::new(vec![m, n], out)
}

/// Matrix product whose every entry is the correctly rounded sum of the
/// rounded products, making it independent of the inner-index order.
pub fn matmul_exact(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = matmul_dims("matmul_exact", a, b)?;
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    par::for_each_chunk(&mut out, n.max(1), 8 * m * k * n, |i, row| {
        let arow = &ad[i * k..(i + 1) * k];
        for (j, c) in row.iter_mut().enumerate() {
            *c = exact_sum((0..k).map(|t| arow[t] * bd[t * n + j]));
        }
    });
    Tensor::new(vec![m, n], out)
}

/// `(dA, dB) = (dC·Bᵀ, Aᵀ·dC)`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = matmul(dc, &transpose(b)?)?;
    let db = matmul(&transpose(a)?, dc)?;
    Ok((da, db))
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    expect_rank("transpose", a, 2)?;
    let (m, n) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(d[i * n + j]);
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Broadcast result shape: trailing axes aligned, extents equal or 1.
pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let eb = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::Broadcast {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides of `input` laid over `out`, with zero stride on expanded axes.
fn broadcast_strides(input: &[usize], out: &[usize]) -> Vec<usize> {
    let offset = out.len() - input.len();
    let mut strides = vec![0; out.len()];
    let mut acc = 1;
    for i in (0..input.len()).rev() {
        strides[offset + i] = if input[i] == 1 { 0 } else { acc };
        acc *= input[i];
    }
    strides
}

/// Calls `f(out_flat, in_flat)` for every element of `out` in row-major order.
fn for_each_broadcast(input: &[usize], out: &[usize], mut f: impl FnMut(usize, usize)) {
    let strides = broadcast_strides(input, out);
    let total: usize = out.iter().product();
    let mut index = vec![0usize; out.len()];
    let mut src = 0usize;
    for o in 0..total {
        f(o, src);
        for ax in (0..out.len()).rev() {
            index[ax] += 1;
            src += strides[ax];
            if index[ax] < out[ax] {
                break;
            }
            src -= strides[ax] * out[ax];
            index[ax] = 0;
        }
    }
}

pub fn broadcast_to(a: &Tensor, shape: &[usize]) -> Result<Tensor> {
    let out = broadcast_shape("broadcast_to", a.shape(), shape)?;
    if out != shape {
        return Err(TensorError::Broadcast {
            op: "broadcast_to",
            lhs: a.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let mut data = vec![0.0; out.iter().product()];
    let src = a.data();
    for_each_broadcast(a.shape(), &out, |o, i| data[o] = src[i]);
    Tensor::new(out, data)
}

/// Sums `grad` down to `shape`, undoing a broadcast.
pub fn sum_to_shape(grad: &Tensor, shape: &[usize]) -> Result<Tensor> {
    if grad.shape() == shape {
        return Ok(grad.clone());
    }
    let out = broadcast_shape("sum_to_shape", shape, grad.shape())?;
    if out != grad.shape() {
        return Err(TensorError::Broadcast {
            op: "sum_to_shape",
            lhs: grad.shape().to_vec(),
            rhs: shape.to_vec(),
        });
    }
    let mut data = vec![0.0; shape.iter().product()];
    let g = grad.data();
    for_each_broadcast(shape, grad.shape(), |o, i| data[i] += g[o]);
    Tensor::new(shape.to_vec(), data)
}

fn zip_broadcast(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let out = broadcast_shape(op, a.shape(), b.shape())?;
    let n: usize = out.iter().product();
    let mut ia = vec![0usize; n];
    for_each_broadcast(a.shape(), &out, |o, i| ia[o] = i);
    let mut data = vec![0.0; n];
    let (ad, bd) = (a.data(), b.data());
    for_each_broadcast(b.shape(), &out, |o, i| data[o] = f(ad[ia[o]], bd[i]));
    Tensor::new(out, data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("sub", a, b, |x, y| x - y)
}

/// Elementwise product with singleton-axis broadcasting.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast("hadamard", a, b, |x, y| x * y)
}

/// `(dA, dB) = (Σ_bcast dC⊙B, Σ_bcast dC⊙A)`.
pub fn hadamard_backward(a: &Tensor, b: &Tensor, dc: &Tensor) -> Result<(Tensor, Tensor)> {
    let da = sum_to_shape(&hadamard(dc, b)?, a.shape())?;
    let db = sum_to_shape(&hadamard(dc, a)?, b.shape())?;
    Ok((da, db))
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    a.map(|x| x * factor)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

/// `dX = y·(1−y)·dY` given the forward output `y`.
pub fn sigmoid_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(&y, &g)| y * (1.0 - y) * g).collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

pub fn tanh(x: &Tensor) -> Tensor {
    x.map(f64::tanh)
}

pub fn tanh_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data().iter().zip(dy.data()).map(|(&y, &g)| (1.0 - y * y) * g).collect();
    Tensor::new(y.shape().to_vec(), data).expect("same shape")
}

fn last_axis(op: &'static str, x: &Tensor) -> Result<usize> {
    match x.shape().last() {
        Some(&n) if n > 0 => Ok(n),
        _ => Err(TensorError::Invalid {
            op,
            msg: format!("needs a non-empty last axis, got {:?}", x.shape()),
        }),
    }
}

/// Softmax along the last axis with max subtraction; denominators are exact
/// sums so each row is independent of its element order.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let n = last_axis("softmax_rows", x)?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
        }
        let total = exact_sum(row.iter().copied());
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// `dX = y ⊙ (dY − Σ_row(dY⊙y))`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Result<Tensor> {
    let n = last_axis("softmax_rows_backward", y)?;
    let mut out = vec![0.0; y.len()];
    for ((o, yr), gr) in out.chunks_mut(n).zip(y.data().chunks(n)).zip(dy.data().chunks(n)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in o.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), out)
}

/// Concatenation along the last (channel) axis, blocks in argument order.
pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Invalid {
        op: "concat_channels",
        msg: "no inputs".into(),
    })?;
    if first.rank() == 0 {
        return Err(TensorError::Rank {
            op: "concat_channels",
            expected: 1,
            shape: vec![],
        });
    }
    let lead = &first.shape()[..first.rank() - 1];
    for p in parts {
        if p.rank() != first.rank() || &p.shape()[..p.rank() - 1] != lead {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
    }
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[p.rank() - 1]).collect();
    let total: usize = widths.iter().sum();
    let positions: usize = lead.iter().product();
    let mut data = Vec::with_capacity(positions * total);
    for pos in 0..positions {
        for (p, &w) in parts.iter().zip(&widths) {
            data.extend_from_slice(&p.data()[pos * w..(pos + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}

/// Channels `start..start+len` of the last axis.
pub fn slice_channels(x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    let c = last_axis("slice_channels", x)?;
    if start + len > c {
        return Err(TensorError::Invalid {
            op: "slice_channels",
            msg: format!("range {start}..{} exceeds {c} channels", start + len),
        });
    }
    let data = x
        .data()
        .chunks(c)
        .flat_map(|row| row[start..start + len].iter().copied())
        .collect();
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Tensor::new(shape, data)
}

/// Inverse of [`slice_channels`]: embeds `grad` into a zero tensor of `channels` width.
pub fn unslice_channels(grad: &Tensor, start: usize, channels: usize) -> Result<Tensor> {
    let len = last_axis("unslice_channels", grad)?;
    let positions = grad.len() / len;
    let mut data = vec![0.0; positions * channels];
    for (pos, g) in grad.data().chunks(len).enumerate() {
        data[pos * channels + start..pos * channels + start + len].copy_from_slice(g);
    }
    let mut shape = grad.shape().to_vec();
    *shape.last_mut().unwrap() = channels;
    Tensor::new(shape, data)
}

/// Sum over one axis, removing it; accumulation runs along the axis in order.
pub fn sum_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(TensorError::Invalid {
            op: "sum_axis",
            msg: format!("axis {axis} out of range for {:?}", x.shape()),
        });
    }
    let shape = x.shape();
    let outer: usize = shape[..axis].iter().product();
    let extent = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    let d = x.data();
    for o in 0..outer {
        for e in 0..extent {
            let base = (o * extent + e) * inner;
            for (i, acc) in out[o * inner..(o + 1) * inner].iter_mut().enumerate() {
                *acc += d[base + i];
            }
        }
    }
    let mut new_shape = shape.to_vec();
    new_shape.remove(axis);
    Tensor::new(new_shape, out)
}

/// Gradient of [`sum_axis`]: repeats `grad` along a re-inserted axis.
pub fn expand_axis(grad: &Tensor, axis: usize, extent: usize) -> Result<Tensor> {
    let mut keep = grad.shape().to_vec();
    keep.insert(axis, 1);
    let mut full = keep.clone();
    full[axis] = extent;
    broadcast_to(&grad.reshape(&keep)?, &full)
}

/// Sub-tensor at `index` along axis 0.
pub fn index_axis0(x: &Tensor, index: usize) -> Result<Tensor> {
    if x.rank() == 0 || index >= x.shape()[0] {
        return Err(TensorError::Invalid {
            op: "index_axis0",
            msg: format!("index {index} out of range for {:?}", x.shape()),
        });
    }
    let inner = x.len() / x.shape()[0];
    Tensor::new(x.shape()[1..].to_vec(), x.data()[index * inner..(index + 1) * inner].to_vec())
}

/// Stacks equally shaped tensors along a new leading axis.
pub fn stack_axis0(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts.first().ok_or(TensorError::Invalid {
        op: "stack_axis0",
        msg: "no inputs".into(),
    })?;
    let mut data = Vec::with_capacity(first.len() * parts.len());
    for p in parts {
        if p.shape() != first.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "stack_axis0",
                lhs: first.shape().to_vec(),
                rhs: p.shape().to_vec(),
            });
        }
        data.extend_from_slice(p.data());
    }
    let mut shape = vec![parts.len()];
    shape.extend_from_slice(first.shape());
    Tensor::new(shape, data)
}

/// Rows of a `[V × C]` table selected by `ids`, giving `[len(ids) × C]`.
pub fn gather_rows(table: &Tensor, ids: &[usize]) -> Result<Tensor> {
    expect_rank("gather_rows", table, 2)?;
    let (v, c) = (table.shape()[0], table.shape()[1]);
    let mut data = Vec::with_capacity(ids.len() * c);
    for &id in ids {
        if id >= v {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {id} out of range for a table of {v} rows"),
            });
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), c], data)
}

pub fn scatter_rows(grad: &Tensor, ids: &[usize], rows: usize) -> Result<Tensor> {
    let c = grad.shape()[1];
    let mut data = vec![0.0; rows * c];
    for (k, &id) in ids.iter().enumerate() {
        for (d, g) in data[id * c..(id + 1) * c].iter_mut().zip(grad.row(k)) {
            *d += g;
        }
    }
    Tensor::new(vec![rows, c], data)
}

/// Per-position affine map `x[h,w,:]·w + b` over an `H×W×C_in` map.
pub fn conv1x1(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    expect_rank("conv1x1", x, 3)?;
    expect_rank("conv1x1", w, 2)?;
    let (h, wd, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let cout = w.shape()[1];
    if w.shape()[0] != cin || b.shape() != [cout] {
        return Err(TensorError::ShapeMismatch {
            op: "conv1x1",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let flat = x.reshape(&[h * wd, cin])?;
    let y = add(&matmul(&flat, w)?, b)?;
    y.reshape(&[h, wd, cout])
}

/// Unfolds 3×3 same-padded neighbourhoods: `[H·W × 9·C]`, taps ordered
/// (dy, dx, channel).
pub fn im2col3x3(x: &Tensor) -> Result<Tensor> {
    expect_rank("im2col3x3", x, 3)?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let d = x.data();
    let mut cols = vec![0.0; h * w * 9 * c];
    for y in 0..h {
        for xx in 0..w {
            let row = &mut cols[(y * w + xx) * 9 * c..(y * w + xx + 1) * 9 * c];
            for dy in 0..3 {
                for dx in 0..3 {
                    let (sy, sx) = (y + dy, xx + dx);
                    if sy < 1 || sx < 1 || sy > h || sx > w {
                        continue;
                    }
                    let src = ((sy - 1) * w + (sx - 1)) * c;
                    let tap = (dy * 3 + dx) * c;
                    row[tap..tap + c].copy_from_slice(&d[src..src + c]);
                }
            }
        }
    }
    Tensor::new(vec![h * w, 9 * c], cols)
}

fn col2im3x3(cols: &Tensor, h: usize, w: usize, c: usize) -> Tensor {
    let d = cols.data();
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for xx in 0..w {
            let row = &d[(y * w + xx) * 9 * c..(y * w + xx + 1) * 9 * c];
            for dy in 0..3 {
                for dx in 0..3 {
                    let (sy, sx) = (y + dy, xx + dx);
                    if sy < 1 || sx < 1 || sy > h || sx > w {
                        continue;
                    }
                    let dst = ((sy - 1) * w + (sx - 1)) * c;
                    let tap = (dy * 3 + dx) * c;
                    for k in 0..c {
                        out[dst + k] += row[tap + k];
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, c], out).expect("col2im shape")
}

fn conv3x3_dims(x: &Tensor, k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    expect_rank("conv3x3", x, 3)?;
    expect_rank("conv3x3", k, 4)?;
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if k.shape()[..3] != [3, 3, c] {
        return Err(TensorError::ShapeMismatch {
            op: "conv3x3",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    Ok((h, w, c, k.shape()[3]))
}

/// 3×3 convolution with zero same-padding; kernel `[3, 3, C_in, C_out]`.
pub fn conv3x3(x: &Tensor, kernel: &Tensor) -> Result<Tensor> {
    let (h, w, c, cout) = conv3x3_dims(x, kernel)?;
    let cols = im2col3x3(x)?;
    let y = matmul(&cols, &kernel.reshape(&[9 * c, cout])?)?;
    y.reshape(&[h, w, cout])
}

pub fn conv3x3_backward(x: &Tensor, kernel: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (h, w, c, cout) = conv3x3_dims(x, kernel)?;
    let cols = im2col3x3(x)?;
    let dflat = dy.reshape(&[h * w, cout])?;
    let dk = matmul(&transpose(&cols)?, &dflat)?.reshape(kernel.shape())?;
    let dcols = matmul(&dflat, &transpose(&kernel.reshape(&[9 * c, cout])?)?)?;
    Ok((col2im3x3(&dcols, h, w, c), dk))
}

fn check_binary_target(logits: &Tensor, target: &Tensor) -> Result<()> {
    if logits.shape() != target.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "bce_with_logits",
            lhs: logits.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if let Some(v) = target.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(TensorError::Invalid {
            op: "bce_with_logits",
            msg: format!("ground truth must be binary, found {v}"),
        });
    }
    if logits.is_empty() {
        return Err(TensorError::Invalid {
            op: "bce_with_logits",
            msg: "empty input".into(),
        });
    }
    Ok(())
}

/// Mean binary cross-entropy in the stable logit form
/// `max(z,0) − z·y + ln(1 + e^{−|z|})`.
pub fn bce_with_logits(logits: &Tensor, target: &Tensor) -> Result<f64> {
    check_binary_target(logits, target)?;
    let total: f64 = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
        .sum();
    Ok(total / logits.len() as f64)
}

/// Gradient of [`bce_with_logits`] scaled by the upstream scalar.
pub fn bce_with_logits_backward(logits: &Tensor, target: &Tensor, upstream: f64) -> Result<Tensor> {
    check_binary_target(logits, target)?;
    let n = logits.len() as f64;
    let data = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &y)| upstream * (sigmoid_scalar(z) - y) / n)
        .collect();
    Tensor::new(logits.shape().to_vec(), data)
}

/// `[out × inp]` bilinear interpolation matrix with aligned corners.
pub fn interpolation_matrix(out: usize, inp: usize) -> Result<Tensor> {
    if out == 0 || inp == 0 {
        return Err(TensorError::Invalid {
            op: "interpolation_matrix",
            msg: format!("sizes must be positive, got {out} from {inp}"),
        });
    }
    let mut m = vec![0.0; out * inp];
    for i in 0..out {
        let src = if out == 1 { 0.0 } else { i as f64 * (inp - 1) as f64 / (out - 1) as f64 };
        let lo = (src.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        let frac = src - lo as f64;
        m[i * inp + lo] += 1.0 - frac;
        if hi != lo {
            m[i * inp + hi] += frac;
        }
    }
    Tensor::new(vec![out, inp], m)
}
