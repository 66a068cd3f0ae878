//! Built-in invariant suite run by `cmpc selftest`.

use std::f64::consts::LN_2;

use crate::action;
use crate::entity::make_coord_feature;
use crate::io::{self, Dtype};
use crate::linguistic::{self, Mode};
use crate::metrics::{self, EvalRecord, TieRule};
use crate::pipeline::{adam_step, init_params, AdamHyper, AdamState, Config};
use crate::relation;
use crate::tensor::{check_gradients, ops, GradCheckOptions, ParamStore, Tape, Tensor};
use crate::tgfe::{self, LevelSet};

/// Deliberate corruption used to exercise the failure path.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Faults {
    /// Rescales the first row of the spatial adjacency before it is checked.
    pub adjacency_row_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

type Check = fn(&Faults) -> Result<(), String>;

/// Every check, tagged with the module it covers.
pub const REGISTRY: &[(&str, &str, Check)] = &[
    ("tensor_core", "matmul_oracle", matmul_oracle),
    ("tensor_core", "softmax_closed_form", softmax_closed_form),
    ("tensor_core", "gradient_check", gradient_check),
    ("linguistic", "uniform_word_types", uniform_word_types),
    ("entity_perception", "coordinate_feature", coordinate_feature),
    ("relation_reasoning", "spatial_adjacency_stochastic", spatial_adjacency_stochastic),
    ("action_reasoning", "temporal_matrices_stochastic", temporal_matrices_stochastic),
    ("tgfe", "zero_round_identity", zero_round_identity),
    ("tgfe", "zero_convlstm", zero_convlstm),
    ("pipeline", "bce_zero_logits", bce_zero_logits),
    ("pipeline", "adam_first_step", adam_first_step),
    ("pipeline", "init_deterministic", init_deterministic),
    ("pipeline_io", "tensor_round_trip", tensor_round_trip),
    ("pipeline_io", "pgm_bytes", pgm_bytes),
    ("pipeline_io", "checkpoint_round_trip", checkpoint_round_trip),
    ("metrics", "golden_values", golden_metrics),
    ("cli", "mask_formats", mask_formats),
];

pub fn run(faults: &Faults) -> Vec<CheckResult> {
    REGISTRY
        .iter()
        .map(|&(module, name, check)| CheckResult {
            module,
            name,
            outcome: check(faults),
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Non-negative entries, each row summing to 1 within `tol`.
pub fn check_row_stochastic(t: &Tensor, tol: f64) -> Result<(), String> {
    if t.rank() != 2 {
        return Err(format!("expected a matrix, got shape {:?}", t.shape()));
    }
    for i in 0..t.shape()[0] {
        let row = t.row(i);
        if let Some(v) = row.iter().find(|&&v| !(v >= 0.0)) {
            return Err(format!("row {i} has negative entry {v}"));
        }
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= tol) {
            return Err(format!("row {i} sums to {sum}"));
        }
    }
    Ok(())
}

/// Small deterministic generator for self-test inputs.
fn seeded(shape: &[usize], seed: u64) -> Tensor {
    let mut s = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn matmul_oracle(_: &Faults) -> Result<(), String> {
    let a = Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let b = Tensor::from_rows(&[&[5.0], &[6.0]]);
    let c = ops::matmul(&a, &b).map_err(err)?;
    ensure(c.data() == [17.0, 39.0], || format!("got {:?}", c.data()))
}

fn softmax_closed_form(_: &Faults) -> Result<(), String> {
    let y = ops::softmax_rows(&Tensor::from_rows(&[&[0.0, 3f64.ln()]])).map_err(err)?;
    ensure((y.data()[0] - 0.25).abs() < 1e-15 && (y.data()[1] - 0.75).abs() < 1e-15, || {
        format!("got {:?}", y.data())
    })
}

fn gradient_check(_: &Faults) -> Result<(), String> {
    let mut store = ParamStore::new(0);
    store.insert("w", seeded(&[3, 2], 1)).map_err(err)?;
    let x = seeded(&[2, 3], 2);
    let report = check_gradients(&store, None, GradCheckOptions::default(), |t| {
        let w = t.param("w")?;
        let xv = t.leaf(x.clone());
        let y = t.matmul(xv, w)?;
        let y = t.softmax_rows(y)?;
        let y = t.tanh(y);
        let y = t.sum_axis(y, 0)?;
        t.sum_axis(y, 0)
    })
    .map_err(err)?;
    report.into_result().map(|_| ()).map_err(err)
}

fn uniform_word_types(_: &Faults) -> Result<(), String> {
    for mode in [Mode::Image, Mode::Video] {
        let k = mode.categories();
        let mut store = ParamStore::new(0);
        store.insert("lang.W_1", seeded(&[3, 4], 3)).map_err(err)?;
        store.insert("lang.b_1", Tensor::zeros(&[3])).map_err(err)?;
        store.insert("lang.W_2", Tensor::zeros(&[k, 3])).map_err(err)?;
        store.insert("lang.b_2", Tensor::zeros(&[k])).map_err(err)?;
        let mut tape = Tape::with_params(&store);
        let words = tape.leaf(seeded(&[5, 4], 4));
        let p = linguistic::classify_words(&mut tape, words, "lang", mode).map_err(err)?;
        let expect = 1.0 / k as f64;
        let probs = tape.value(p.probs);
        ensure(probs.data().iter().all(|&v| (v - expect).abs() < 1e-15), || {
            format!("{mode:?}: rows are not 1/{k}")
        })?;
    }
    Ok(())
}

fn coordinate_feature(_: &Faults) -> Result<(), String> {
    let o = make_coord_feature(1, 1);
    ensure(o.data() == [-1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 1.0, 1.0], || format!("got {:?}", o.data()))
}

fn spatial_adjacency_stochastic(faults: &Faults) -> Result<(), String> {
    let mut store = ParamStore::new(0);
    store.insert("rar.W_v", seeded(&[4, 4], 5)).map_err(err)?;
    store.insert("rar.b_v", Tensor::zeros(&[4])).map_err(err)?;
    store.insert("rar.W_5", seeded(&[4, 3], 6)).map_err(err)?;
    store.insert("rar.W_6", seeded(&[4, 3], 7)).map_err(err)?;
    let mut tape = Tape::with_params(&store);
    let m = tape.leaf(seeded(&[3, 2, 4], 8));
    let rel = tape.leaf(seeded(&[5, 4], 9));
    let v = relation::vertex_features(&mut tape, m, "rar").map_err(err)?;
    let a = relation::build_adjacency(&mut tape, v, rel, "rar").map_err(err)?;
    let mut adj = tape.value(a).clone();
    if let Some(scale) = faults.adjacency_row_scale {
        let shape = adj.shape().to_vec();
        let mut data = adj.into_data();
        for x in &mut data[..shape[1]] {
            *x *= scale;
        }
        adj = Tensor::new(shape, data).map_err(err)?;
    }
    check_row_stochastic(&adj, 1e-6).map_err(|e| format!("spatial adjacency: {e}"))
}

fn temporal_matrices_stochastic(_: &Faults) -> Result<(), String> {
    let mut store = ParamStore::new(0);
    for (name, rows) in [("W_8", 4), ("W_9", 4), ("W_12", 4), ("W_13", 4), ("W_14b", 4), ("W_15", 4)] {
        store.insert(format!("aar.{name}"), seeded(&[rows, 3], rows as u64 + name.len() as u64)).map_err(err)?;
    }
    store.insert("aar.W_14a", seeded(&[4, 4], 11)).map_err(err)?;
    let mut tape = Tape::with_params(&store);
    let clip = tape.leaf(seeded(&[3, 2, 2, 4], 12));
    let q = tape.leaf(seeded(&[4], 13));
    let att = action::temporal_attend(&mut tape, clip, q, "aar").map_err(err)?;
    let a_v = action::temporal_adjacency(&mut tape, att.vertices, "aar").map_err(err)?;
    let ctx = action::temporal_graph_convolve(&mut tape, att.vertices, a_v, "aar").map_err(err)?;
    let centre = tape.leaf(seeded(&[2, 2, 4], 14));
    let (_, e) = action::project_to_frame(&mut tape, ctx, centre, "aar").map_err(err)?;
    for (label, v) in [("D", att.attention), ("A_V", a_v), ("E", e)] {
        check_row_stochastic(tape.value(v), 1e-6).map_err(|e| format!("{label}: {e}"))?;
    }
    let one = tape.leaf(seeded(&[1, 4], 15));
    let a1 = action::temporal_adjacency(&mut tape, one, "aar").map_err(err)?;
    ensure(tape.value(a1).data() == [1.0], || "single-frame adjacency is not [[1]]".into())
}

fn zero_round_identity(_: &Faults) -> Result<(), String> {
    let store = ParamStore::new(0);
    let mut tape = Tape::with_params(&store);
    let maps = [16, 17, 18].map(|s| tape.leaf(seeded(&[2, 2, 3], s)));
    let set = LevelSet::new(&tape, maps).map_err(err)?;
    let s = tape.leaf(seeded(&[3], 19));
    let out = tgfe::exchange(&mut tape, set, s, "tgfe", 0).map_err(err)?;
    ensure((0..3).all(|i| tape.value(out.maps[i]).bit_eq(tape.value(maps[i]))), || {
        "round 0 changed a level".into()
    })
}

fn zero_convlstm(_: &Faults) -> Result<(), String> {
    let mut store = ParamStore::new(0);
    store.insert("lstm.W", Tensor::zeros(&[3, 3, 5, 8])).map_err(err)?;
    store.insert("lstm.b", Tensor::zeros(&[8])).map_err(err)?;
    let mut tape = Tape::with_params(&store);
    let seq: Vec<_> = (0..3).map(|k| tape.leaf(seeded(&[2, 2, 3], 20 + k))).collect();
    let h = tgfe::convlstm_fuse(&mut tape, &seq, "lstm").map_err(err)?;
    ensure(tape.value(h).data().iter().all(|&v| v == 0.0), || "hidden state is not zero".into())
}

fn bce_zero_logits(_: &Faults) -> Result<(), String> {
    let target = Tensor::from_rows(&[&[0.0, 1.0], &[1.0, 1.0]]);
    let l = ops::bce_with_logits(&Tensor::zeros(&[2, 2]), &target).map_err(err)?;
    ensure((l - LN_2).abs() < 1e-12, || format!("loss {l}"))
}

fn adam_first_step(_: &Faults) -> Result<(), String> {
    let mut store = ParamStore::new(0);
    store.insert("w", Tensor::vector(vec![0.5])).map_err(err)?;
    let grads = [("w".to_string(), Tensor::vector(vec![1.0]))].into_iter().collect();
    let hyper = AdamHyper {
        weight_decay: 0.0,
        ..AdamHyper::default()
    };
    adam_step(&mut store, &grads, &mut AdamState::default(), &hyper).map_err(err)?;
    let got = store.get("w").map_err(err)?.data()[0];
    let expect = 0.5 - 2.5e-4 / (1.0 + 1e-8);
    ensure((got - expect).abs() < 1e-12, || format!("θ' = {got}, expected {expect}"))
}

fn init_deterministic(_: &Faults) -> Result<(), String> {
    let cfg = Config::toy(Mode::Video);
    ensure(init_params(&cfg).bit_eq(&init_params(&cfg)), || "re-initialisation differs".into())
}

fn tensor_round_trip(_: &Faults) -> Result<(), String> {
    let t = seeded(&[2, 3, 4], 21);
    let (back, _) = io::decode_tensor(&io::encode_tensor(&t, Dtype::F64)).map_err(err)?;
    ensure(back.bit_eq(&t), || "f64 round trip changed values".into())?;
    let bytes = io::encode_tensor(&Tensor::zeros(&[2, 3]), Dtype::F32);
    ensure(bytes.len() == 53, || format!("2x3 f32 file is {} bytes", bytes.len()))
}

fn pgm_bytes(_: &Faults) -> Result<(), String> {
    let bytes = io::encode_pgm(&Tensor::ones(&[2, 2])).map_err(err)?;
    ensure(bytes == b"P5\n2 2\n255\n\xFF\xFF\xFF\xFF", || format!("got {bytes:?}"))
}

fn checkpoint_round_trip(_: &Faults) -> Result<(), String> {
    let cfg = Config::toy(Mode::Image);
    let store = init_params(&cfg);
    let back = io::decode_checkpoint(&io::encode_checkpoint(&store)).map_err(err)?;
    io::check_layout(&back, &cfg).map_err(err)?;
    ensure(back.bit_eq(&store), || "checkpoint round trip changed values".into())
}

fn golden_metrics(_: &Faults) -> Result<(), String> {
    let rec = |i, u| EvalRecord {
        intersection: i,
        union: u,
    };
    let f = |v: f64| format!("{v:.4}");
    let pairs = [rec(1, 2), rec(8, 10)];
    let checks = [
        ("iou 2/10", f(rec(2, 10).iou()), "0.2000"),
        ("overall", f(metrics::overall_iou(&pairs).map_err(err)?), "0.7500"),
        ("mean", f(metrics::mean_iou(&pairs).map_err(err)?), "0.6500"),
        (
            "prec@0.5",
            f(metrics::prec_at(&[rec(11, 20), rec(9, 20)], 0.5, TieRule::AtLeast).map_err(err)?),
            "50.0000",
        ),
        ("mAP", f(metrics::mean_ap_proxy(&[rec(18, 25)], TieRule::AtLeast).map_err(err)?), "50.0000"),
    ];
    for (label, got, want) in checks {
        ensure(got == want, || format!("{label}: {got} != {want}"))?;
    }
    Ok(())
}

fn mask_formats(_: &Faults) -> Result<(), String> {
    let ok = "pgm".parse::<io::MaskFormat>().is_ok() && "raw-logits".parse::<io::MaskFormat>().is_ok();
    ensure(ok && "png".parse::<io::MaskFormat>().is_err(), || "mask format parsing".into())
}
