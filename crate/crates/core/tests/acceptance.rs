//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::f64::consts::LN_2;
use std::fs;
use std::time::{Duration, Instant};

use num_bigint::{BigInt, BigUint, Sign};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cmpc::action;
use cmpc::io::{self, Dtype};
use cmpc::linguistic::{self, Mode};
use cmpc::metrics::{self, EvalRecord, TieRule};
use cmpc::pipeline::{self, init_params, train_toy, Config};
use cmpc::relation;
use cmpc::selftest::check_row_stochastic;
use cmpc::tensor::{GradCheckOptions, ParamStore, Tape, Tensor};
use cmpc::tgfe::{self, LevelSet};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:.1?}, limit {limit:?}"))
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| scale * rng.random_range(-1.0..1.0))
}

/// Values spread over many binades, so naive and exact sums disagree.
fn wide(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0) * 2f64.powi(rng.random_range(-30..30)))
}

// ---------------------------------------------------------------- 1

fn adjacency_stochasticity() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let instances = 1200;
    let mut matrices = 0;
    for inst in 0..instances {
        let (h, w) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let t = rng.random_range(1..=8);
        let k = rng.random_range(1..=8);
        let (cm, cl) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let (d, da) = (rng.random_range(1..=4), rng.random_range(1..=4));
        let scale = [0.5, 2.0, 8.0][inst % 3];
        let routed = inst % 2 == 1;

        let mut s = ParamStore::new(0);
        let mut put = |name: &str, shape: &[usize], rng: &mut ChaCha8Rng| s.insert(name, uniform(rng, shape, scale)).unwrap();
        put("rar.W_v", &[cm, cm], &mut rng);
        put("rar.b_v", &[cm], &mut rng);
        put("rar.W_5", &[cm, d], &mut rng);
        put("rar.W_6", &[cl, d], &mut rng);
        put("rar.W_7.0", &[cm, cm], &mut rng);
        put("aar.W_8", &[cm, da], &mut rng);
        put("aar.W_9", &[cl, da], &mut rng);
        put("aar.W_12", &[cm, da], &mut rng);
        put("aar.W_13", &[if routed { cl } else { cm }, da], &mut rng);
        put("aar.W_14a", &[cm, cm], &mut rng);
        put("aar.W_14b", &[cm, da], &mut rng);
        put("aar.W_15", &[cm, da], &mut rng);

        let mut tape = Tape::with_params(&s);
        let words = tape.leaf(uniform(&mut rng, &[t, cl], 1.0));
        let q = tape.leaf(uniform(&mut rng, &[cl], 1.0));
        let m = tape.leaf(uniform(&mut rng, &[h, w, cm], 1.0));
        let clip = tape.leaf(uniform(&mut rng, &[k, h, w, cm], 1.0));
        let err = |e: cmpc::tensor::TensorError| format!("instance {inst}: {e}");

        let (graph, reasoned) = relation::reason(&mut tape, m, words, "rar", 1).map_err(err)?;
        let att = action::temporal_attend(&mut tape, clip, q, "aar").map_err(err)?;
        let a_v = if routed {
            action::temporal_adjacency_routed(&mut tape, att.vertices, words, "aar")
        } else {
            action::temporal_adjacency(&mut tape, att.vertices, "aar")
        }
        .map_err(err)?;
        let ctx = action::temporal_graph_convolve(&mut tape, att.vertices, a_v, "aar").map_err(err)?;
        let (_, e_v) = action::project_to_frame(&mut tape, ctx, reasoned, "aar").map_err(err)?;

        for (name, v) in [("A", graph.adjacency), ("A_V", a_v), ("D_V", att.attention), ("E_V", e_v)] {
            check_row_stochastic(tape.value(v), 1e-6).map_err(|e| format!("instance {inst} {name}: {e}"))?;
            matrices += 1;
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("{instances} instances, {matrices} matrices in {elapsed:.2?}"))
}

// ---------------------------------------------------------------- 2

fn gradient_integrity() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut tensors = 0;
    for mode in [Mode::Image, Mode::Video] {
        let report = pipeline::check_pipeline_gradients(mode, 0, GradCheckOptions::default()).map_err(|e| e.to_string())?;
        if let Some(bad) = report.failures().next() {
            return Err(format!("{mode:?}: {} relative error {:.3e}", bad.name, bad.max_rel_error));
        }
        worst = worst.max(report.max_rel_error());
        tensors += report.params.len();
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(300))?;
    Ok(format!("{tensors} tensors, max rel error {worst:.2e} in {elapsed:.1?}"))
}

// ---------------------------------------------------------------- 3

/// The exact value of a finite double as an integer multiple of `2^-1074`.
fn scaled(x: f64) -> BigInt {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1 << 52) - 1);
    let (mant, shift) = if exp == 0 { (frac, 0) } else { (frac | 1 << 52, exp - 1) };
    let mag = BigInt::from(mant) << shift as usize;
    if bits >> 63 == 1 {
        -mag
    } else {
        mag
    }
}

fn pow2(e: i64) -> f64 {
    if e >= -1022 {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (e + 1074))
    }
}

/// Exact big-integer sum, rounded once to nearest with ties to even.
fn oracle_sum(terms: impl IntoIterator<Item = f64>) -> f64 {
    let total: BigInt = terms.into_iter().map(scaled).sum();
    let (sign, mag): (Sign, BigUint) = total.into_parts();
    let bits = mag.bits() as i64;
    let value = if bits <= 53 {
        let m: u64 = mag.try_into().unwrap();
        m as f64 * pow2(-1074)
    } else {
        let shift = bits - 53;
        let mut q: u64 = (&mag >> shift as usize).try_into().unwrap();
        let rem = &mag - (BigUint::from(q) << shift as usize);
        let half = BigUint::from(1u8) << (shift - 1) as usize;
        if rem > half || (rem == half && q % 2 == 1) {
            q += 1;
        }
        q as f64 * pow2(shift - 1074)
    };
    if sign == Sign::Minus {
        -value
    } else {
        value
    }
}

/// `((A + I)·X)·W` with the aggregation summed exactly and the projection
/// accumulated left to right.
fn oracle_layer(a: &Tensor, x: &Tensor, w: &Tensor) -> Tensor {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let co = w.shape()[1];
    let mut agg = vec![0.0; n * c];
    for i in 0..n {
        for j in 0..c {
            agg[i * c + j] = oracle_sum((0..n).map(|t| {
                let a_hat = a.at(&[i, t]) + if i == t { 1.0 } else { 0.0 };
                a_hat * x.at(&[t, j])
            }));
        }
    }
    let mut out = vec![0.0; n * co];
    for i in 0..n {
        for j in 0..co {
            let mut acc = 0.0;
            for t in 0..c {
                acc += agg[i * c + t] * w.at(&[t, j]);
            }
            out[i * co + j] = acc;
        }
    }
    Tensor::new(vec![n, co], out).unwrap()
}

fn graph_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut naive_differs = 0;
    for inst in 0..100 {
        let n = rng.random_range(1..=8);
        let k = rng.random_range(1..=6);
        let c = rng.random_range(1..=5);
        let layers = rng.random_range(1..=3);

        let mut s = ParamStore::new(0);
        let mut ws = Vec::new();
        for j in 0..layers {
            let w = uniform(&mut rng, &[c, c], 1.0);
            s.insert(format!("rar.W_7.{j}"), w.clone()).unwrap();
            ws.push(w);
        }
        let w14 = uniform(&mut rng, &[c, c], 1.0);
        s.insert("aar.W_14a", w14.clone()).unwrap();

        let a = wide(&mut rng, &[n, n]).map(f64::abs);
        let x = wide(&mut rng, &[n, c]);
        let a_v = wide(&mut rng, &[k, k]).map(f64::abs);
        let p = wide(&mut rng, &[k, c]);

        let mut tape = Tape::with_params(&s);
        let (av, xv) = (tape.leaf(a.clone()), tape.leaf(x.clone()));
        let got = relation::graph_convolve(&mut tape, xv, av, "rar", layers).map_err(|e| e.to_string())?;
        let mut expect = x.clone();
        for w in &ws {
            expect = oracle_layer(&a, &expect, w);
        }
        ensure(tape.value(got).bit_eq(&expect), || format!("instance {inst}: graph_convolve differs (N={n})"))?;

        let (avv, pv) = (tape.leaf(a_v.clone()), tape.leaf(p.clone()));
        let got = action::temporal_graph_convolve(&mut tape, pv, avv, "aar").map_err(|e| e.to_string())?;
        let expect = oracle_layer(&a_v, &p, &w14);
        ensure(tape.value(got).bit_eq(&expect), || format!("instance {inst}: temporal_graph_convolve differs (K={k})"))?;

        // a left-to-right aggregation is not what the oracle computes
        let naive: Vec<f64> = (0..n * c)
            .map(|e| {
                let (i, j) = (e / c, e % c);
                (0..n).fold(0.0, |acc, t| acc + (a.at(&[i, t]) + (i == t) as u8 as f64) * x.at(&[t, j]))
            })
            .collect();
        let exact: Vec<f64> = (0..n * c)
            .map(|e| {
                let (i, j) = (e / c, e % c);
                oracle_sum((0..n).map(|t| (a.at(&[i, t]) + (i == t) as u8 as f64) * x.at(&[t, j])))
            })
            .collect();
        naive_differs += (naive != exact) as usize;
    }
    Ok(format!("100 instances bit-exact ({naive_differs} where naive summation would differ)"))
}

// ---------------------------------------------------------------- 4 and 8

struct Training {
    image_full: Vec<f64>,
    video_full: Vec<f64>,
}

fn train_mode(mode: Mode, use_reasoning: bool, steps: usize) -> Result<(Vec<f64>, Duration), String> {
    let mut cfg = pipeline::overfit_config(mode, 7);
    cfg.use_rar = use_reasoning;
    cfg.use_aar = use_reasoning;
    let data = pipeline::overfit_dataset(&cfg);
    let start = Instant::now();
    let out = train_toy(&data, &cfg, steps).map_err(|e| format!("{mode:?}: {e}"))?;
    Ok((out.trace, start.elapsed()))
}

fn overfit_convergence(store: &mut Option<Training>) -> Check {
    let mut traces = Vec::new();
    let mut lines = Vec::new();
    for mode in [Mode::Image, Mode::Video] {
        let (steps, threshold) = pipeline::overfit_target(mode);
        let (trace, elapsed) = train_mode(mode, true, steps)?;
        let last = *trace.last().unwrap();
        lines.push(format!("{mode:?} {last:.5} after {steps} steps ({elapsed:.0?})"));
        ensure(last < threshold, || format!("{mode:?} final BCE {last:.5} is not below {threshold}"))?;
        within(elapsed, Duration::from_secs(600))?;
        traces.push(trace);
    }
    let video_full = traces.pop().unwrap();
    let image_full = traces.pop().unwrap();
    *store = Some(Training { image_full, video_full });
    Ok(lines.join(", "))
}

/// Budget at which the full and EP-only runs are compared.
const ABLATION_STEPS: usize = 600;

fn ablation_direction(store: &Option<Training>) -> Check {
    let Some(full) = store else {
        return Err("full-pipeline runs are unavailable".into());
    };
    let mut lines = Vec::new();
    for (mode, full_trace) in [(Mode::Image, &full.image_full), (Mode::Video, &full.video_full)] {
        let (ep, _) = train_mode(mode, false, ABLATION_STEPS)?;
        let (f, e) = (full_trace[ABLATION_STEPS], ep[ABLATION_STEPS]);
        lines.push(format!("{mode:?} full {f:.5} < EP-only {e:.5}"));
        ensure(f < e, || format!("{mode:?}: full {f:.5} is not below EP-only {e:.5} at {ABLATION_STEPS} steps"))?;
    }
    Ok(format!("{} at {ABLATION_STEPS} steps", lines.join(", ")))
}

// ---------------------------------------------------------------- 5

fn equivariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, cm, cl, d, t) = (12, 5, 4, 3, 6);
    for trial in 0..20 {
        let mut s = ParamStore::new(0);
        s.insert("rar.W_v", uniform(&mut rng, &[cm, cm], 1.0)).unwrap();
        s.insert("rar.b_v", uniform(&mut rng, &[cm], 1.0)).unwrap();
        s.insert("rar.W_5", uniform(&mut rng, &[cm, d], 2.0)).unwrap();
        s.insert("rar.W_6", uniform(&mut rng, &[cl, d], 2.0)).unwrap();
        s.insert("rar.W_7.0", uniform(&mut rng, &[cm, cm], 1.0)).unwrap();
        s.insert("rar.W_7.1", uniform(&mut rng, &[cm, cm], 1.0)).unwrap();
        let m = uniform(&mut rng, &[n, cm], 1.0);
        let words = uniform(&mut rng, &[t, cl], 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = Tensor::from_fn(&[n, cm], |e| m.at(&[perm[e / cm], e % cm]));

        let run = |map: &Tensor| {
            let mut tape = Tape::with_params(&s);
            let mv = tape.leaf(Tensor::new(vec![n, 1, cm], map.data().to_vec()).unwrap());
            let wv = tape.leaf(words.clone());
            let (g, out) = relation::reason(&mut tape, mv, wv, "rar", 2).unwrap();
            (tape.value(g.adjacency).clone(), tape.value(out).clone())
        };
        let (a, out) = run(&m);
        let (pa, pout) = run(&permuted);
        for i in 0..n {
            for c in 0..cm {
                let (x, y) = (pout.at(&[i, 0, c]), out.at(&[perm[i], 0, c]));
                ensure(x.to_bits() == y.to_bits(), || format!("trial {trial}: reasoned vertex {i} differs ({x} vs {y})"))?;
            }
            for j in 0..n {
                let (x, y) = (pa.at(&[i, j]), a.at(&[perm[i], perm[j]]));
                ensure(x.to_bits() == y.to_bits(), || format!("trial {trial}: adjacency ({i},{j}) differs"))?;
            }
        }
    }

    // swapping the two donors of a level leaves its update unchanged
    let (cl, cm, dp) = (4, 5, 3);
    for trial in 0..20 {
        let mut s = ParamStore::new(0);
        for level in tgfe::LEVELS {
            let p = format!("tgfe.{level}");
            s.insert(format!("{p}.W_10"), uniform(&mut rng, &[cl, dp], 1.0)).unwrap();
            s.insert(format!("{p}.W_11"), uniform(&mut rng, &[cm, dp], 1.0)).unwrap();
            s.insert(format!("{p}.fc.W"), uniform(&mut rng, &[cl + cm, cm], 1.0)).unwrap();
            s.insert(format!("{p}.fc.b"), uniform(&mut rng, &[cm], 1.0)).unwrap();
        }
        let maps: Vec<Tensor> = (0..3).map(|_| wide(&mut rng, &[3, 2, cm])).collect();
        let sv = uniform(&mut rng, &[cl], 1.0);
        let target = trial % 3;
        let (j, k) = ((target + 1) % 3, (target + 2) % 3);
        let run = |order: [usize; 3]| {
            let mut tape = Tape::with_params(&s);
            let vars = order.map(|i| tape.leaf(maps[i].clone()));
            let set = LevelSet::new(&tape, vars).unwrap();
            let sv = tape.leaf(sv.clone());
            let out = tgfe::exchange_round(&mut tape, &set, sv, "tgfe").unwrap();
            tape.value(out.maps[target]).clone()
        };
        let mut swapped = [0, 1, 2];
        swapped.swap(j, k);
        ensure(run([0, 1, 2]).bit_eq(&run(swapped)), || format!("trial {trial}: donor swap changed level {target}"))?;
    }
    Ok("20 vertex permutations and 20 donor swaps bit-exact".into())
}

// ---------------------------------------------------------------- 6

fn closed_forms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for mode in [Mode::Image, Mode::Video] {
        let k = mode.categories();
        let mut s = ParamStore::new(0);
        s.insert("lang.W_1", uniform(&mut rng, &[3, 4], 1.0)).unwrap();
        s.insert("lang.b_1", uniform(&mut rng, &[3], 1.0)).unwrap();
        s.insert("lang.W_2", Tensor::zeros(&[k, 3])).unwrap();
        s.insert("lang.b_2", Tensor::zeros(&[k])).unwrap();
        let mut tape = Tape::with_params(&s);
        let words = tape.leaf(uniform(&mut rng, &[6, 4], 1.0));
        let p = linguistic::classify_words(&mut tape, words, "lang", mode).map_err(|e| e.to_string())?;
        let inv = 1.0 / k as f64;
        ensure(tape.value(p.probs).data().iter().all(|&v| v == inv), || format!("{mode:?}: rows are not 1/{k}"))?;
    }

    let mut s = ParamStore::new(0);
    s.insert("lstm.W", Tensor::zeros(&[3, 3, 4 + 3, 12])).unwrap();
    s.insert("lstm.b", Tensor::zeros(&[12])).unwrap();
    let mut tape = Tape::with_params(&s);
    let seq: Vec<_> = (0..3).map(|_| tape.leaf(uniform(&mut rng, &[3, 4, 4], 5.0))).collect();
    let h = tgfe::convlstm_fuse(&mut tape, &seq, "lstm").map_err(|e| e.to_string())?;
    ensure(tape.value(h).data().iter().all(|&v| v == 0.0), || "zero ConvLSTM left a non-zero hidden".into())?;

    let mask = Tensor::from_fn(&[5, 7], |_| rng.random_range(0..2) as f64);
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::zeros(&[5, 7]));
    let l = tape.bce_with_logits(z, &mask).map_err(|e| e.to_string())?;
    let bce = tape.value(l).data()[0];
    ensure((bce - LN_2).abs() <= 1e-12, || format!("zero-logit BCE {bce}"))?;

    let mut s = ParamStore::new(0);
    for level in tgfe::LEVELS {
        let p = format!("tgfe.{level}");
        s.insert(format!("{p}.W_10"), uniform(&mut rng, &[2, 2], 1.0)).unwrap();
        s.insert(format!("{p}.W_11"), uniform(&mut rng, &[3, 2], 1.0)).unwrap();
        s.insert(format!("{p}.fc.W"), uniform(&mut rng, &[5, 3], 1.0)).unwrap();
        s.insert(format!("{p}.fc.b"), uniform(&mut rng, &[3], 1.0)).unwrap();
    }
    let mut tape = Tape::with_params(&s);
    let maps: Vec<Tensor> = (0..3).map(|_| uniform(&mut rng, &[2, 2, 3], 1.0)).collect();
    let vars = [0, 1, 2].map(|i| tape.leaf(maps[i].clone()));
    let set = LevelSet::new(&tape, vars).map_err(|e| e.to_string())?;
    let sv = tape.leaf(uniform(&mut rng, &[2], 1.0));
    let out = tgfe::exchange(&mut tape, set, sv, "tgfe", 0).map_err(|e| e.to_string())?;
    for i in 0..3 {
        ensure(out.round == 0 && tape.value(out.maps[i]).bit_eq(&maps[i]), || format!("zero rounds changed level {i}"))?;
    }
    Ok(format!("word types 1/4 and 1/5, zero hidden, BCE {bce:.15}, identity exchange"))
}

// ---------------------------------------------------------------- 7

fn metrics_goldens() -> Check {
    let rec = |i, u| EvalRecord { intersection: i, union: u };
    let pred = Tensor::from_fn(&[4, 4], |i| (i < 4) as u8 as f64);
    let gt = Tensor::from_fn(&[4, 4], |i| (2..10).contains(&i) as u8 as f64);
    let checks = [
        ("iou 2/10", metrics::iou(&pred, &gt).map_err(|e| e.to_string())?, 0.2),
        ("overall IoU", metrics::overall_iou(&[rec(1, 2), rec(8, 10)]).unwrap(), 0.75),
        ("mean IoU", metrics::mean_iou(&[rec(1, 2), rec(8, 10)]).unwrap(), 0.65),
        ("Prec@0.5", metrics::prec_at(&[rec(11, 20), rec(9, 20)], 0.5, TieRule::AtLeast).unwrap(), 50.0),
        ("mAP proxy", metrics::mean_ap_proxy(&[rec(18, 25)], TieRule::AtLeast).unwrap(), 50.0),
    ];
    let mut shown = Vec::new();
    for (name, got, want) in checks {
        let (g, w) = (format!("{got:.4}"), format!("{want:.4}"));
        ensure(g == w, || format!("{name}: {g} != {w}"))?;
        shown.push(format!("{name} {g}"));
    }
    Ok(shown.join(", "))
}

// ---------------------------------------------------------------- 9

fn bit_exact_io() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let rank = rng.random_range(0..=4);
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(0..=4)).collect();
        let t = wide(&mut rng, &shape);
        let bytes = io::encode_tensor(&t, Dtype::F64);
        let (back, dtype) = io::decode_tensor(&bytes).map_err(|e| e.to_string())?;
        ensure(dtype == Dtype::F64 && back.bit_eq(&t), || format!("case {case}: f64 round trip"))?;
        ensure(io::encode_tensor(&back, Dtype::F64) == bytes, || format!("case {case}: re-encoding differs"))?;
        let single = t.map(|v| v as f32 as f64);
        let bytes = io::encode_tensor(&single, Dtype::F32);
        let (back, _) = io::decode_tensor(&bytes).map_err(|e| e.to_string())?;
        ensure(back.bit_eq(&single), || format!("case {case}: f32 round trip"))?;

        let (h, w) = (rng.random_range(1..=6), rng.random_range(1..=6));
        let mask = Tensor::from_fn(&[h, w], |_| rng.random_range(0..2) as f64);
        let pgm = io::encode_pgm(&mask).map_err(|e| e.to_string())?;
        ensure(io::decode_pgm(&pgm).map_err(|e| e.to_string())? == mask, || format!("case {case}: PGM round trip"))?;
    }
    for mode in [Mode::Image, Mode::Video] {
        let cfg = Config::toy(mode);
        let store = init_params(&cfg);
        let bytes = io::encode_checkpoint(&store);
        let back = io::decode_checkpoint(&bytes).map_err(|e| e.to_string())?;
        io::check_layout(&back, &cfg).map_err(|e| e.to_string())?;
        ensure(back.bit_eq(&store) && io::encode_checkpoint(&back) == bytes, || format!("{mode:?}: checkpoint round trip"))?;
        ensure(io::encode_checkpoint(&init_params(&cfg)) == bytes, || format!("{mode:?}: initialisation not reproducible"))?;
    }
    let first = common::golden_files();
    let second = common::golden_files();
    for ((name, a), (_, b)) in first.iter().zip(&second) {
        ensure(a == b, || format!("{name}: two runs disagree"))?;
        let committed = fs::read(common::golden_dir().join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure(&committed == a, || format!("{name}: differs from the committed golden file"))?;
    }
    Ok(format!("200 tensor/mask cases, 2 checkpoints, {} golden files", first.len()))
}

fn main() {
    let mut training = None;
    let criteria: Vec<(&str, Box<dyn FnOnce(&mut Option<Training>) -> Check>)> = vec![
        ("adjacency stochasticity", Box::new(|_| adjacency_stochasticity())),
        ("gradient integrity", Box::new(|_| gradient_integrity())),
        ("graph-convolution oracle", Box::new(|_| graph_oracle())),
        ("overfit convergence", Box::new(overfit_convergence)),
        ("equivariance", Box::new(|_| equivariance())),
        ("closed forms", Box::new(|_| closed_forms())),
        ("metrics golden values", Box::new(|_| metrics_goldens())),
        ("ablation direction", Box::new(|t| ablation_direction(t))),
        ("bit-exact I/O", Box::new(|_| bit_exact_io())),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        match check(&mut training) {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail})", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({detail})", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
