mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cmpc::io::{self, Dtype, MaskFormat};
use cmpc::tensor::Tensor;
use common::{bin, golden_dir};

fn cmpc(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn value<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(": ")))
        .unwrap_or_else(|| panic!("no `{key}` in\n{out}"))
}

#[test]
fn selftest_passes_and_covers_every_module() {
    let o = cmpc(&["selftest"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "failed"), "0");
    for module in [
        "tensor_core",
        "linguistic",
        "entity_perception",
        "relation_reasoning",
        "action_reasoning",
        "tgfe",
        "pipeline",
        "pipeline_io",
        "metrics",
        "cli",
    ] {
        assert!(out.lines().any(|l| l.starts_with(&format!("{module}."))), "{module} has no check");
    }
}

#[test]
fn gradcheck_exit_codes() {
    let o = cmpc(&["gradcheck", "--mode", "image"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "failed"), "0");
    assert!(value(&out, "lstm.W").parse::<f64>().unwrap() <= 1e-4);

    let o = cmpc(&["gradcheck", "--mode", "video", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("l4.aar.W_14a: "));

    let o = cmpc(&["gradcheck", "--mode", "image", "--tol", "1e-12"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("relative error above"));

    assert_eq!(cmpc(&["gradcheck", "--mode", "audio"]).status.code(), Some(2));
}

#[test]
fn train_toy_zero_steps_fails_with_single_loss() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("toy.ckpt");
    let o = cmpc(&["train-toy", "--mode", "image", "--steps", "0", "--out-checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let trace = fs::read_to_string(dir.path().join("toy.ckpt.trace")).unwrap();
    assert_eq!(trace.lines().count(), 1);
    assert!(ckpt.exists());
}

#[test]
fn train_toy_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut traces = Vec::new();
    let mut ckpts = Vec::new();
    for run in ["a", "b"] {
        let ckpt = dir.path().join(run);
        let o = cmpc(&["train-toy", "--mode", "video", "--seed", "5", "--steps", "3", "--out-checkpoint", ckpt.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1));
        traces.push(fs::read(dir.path().join(format!("{run}.trace"))).unwrap());
        ckpts.push(fs::read(&ckpt).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_eq!(ckpts[0], ckpts[1]);
    assert_eq!(String::from_utf8_lossy(&traces[0]).lines().count(), 4);
}

#[test]
fn train_toy_image_converges() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("image.ckpt");
    let o = cmpc(&["train-toy", "--mode", "image", "--seed", "7", "--steps", "2000", "--out-checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let trace = fs::read_to_string(dir.path().join("image.ckpt.trace")).unwrap();
    let losses: Vec<f64> = trace.lines().map(|l| l.parse().unwrap()).collect();
    assert_eq!(losses.len(), 2001);
    assert!(losses[2000] < 0.01, "{}", losses[2000]);
    let cfg = cmpc::pipeline::overfit_config(cmpc::linguistic::Mode::Image, 7);
    io::load_checkpoint(&ckpt, &cfg).unwrap();
}

fn infer_args<'a>(d: &'a Path, l4: &'a str, out: &'a str) -> Vec<String> {
    let g = |n: &str| d.join(n).to_string_lossy().into_owned();
    vec![
        "infer".into(),
        "--features-l3".into(),
        g("features_l3.cmpc"),
        "--features-l4".into(),
        l4.into(),
        "--features-l5".into(),
        g("features_l5.cmpc"),
        "--tokens".into(),
        g("tokens.txt"),
        "--params".into(),
        g("model.ckpt"),
        "--config".into(),
        g("config.toml"),
        "--out".into(),
        out.into(),
    ]
}

#[test]
fn infer_usage_and_shape_errors() {
    let d = golden_dir();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("m.pgm");
    let out = out.to_str().unwrap();
    let l4 = d.join("features_l4.cmpc");

    let mut args = infer_args(&d, l4.to_str().unwrap(), out);
    let at = args.iter().position(|a| a == "--params").unwrap();
    args.drain(at..at + 2);
    let o = Command::new(bin()).args(&args).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--params"));

    let small = tmp.path().join("l4.cmpc");
    io::write_tensor(&small, &Tensor::zeros(&[5, 5, 8]), Dtype::F64).unwrap();
    let o = Command::new(bin()).args(infer_args(&d, small.to_str().unwrap(), out)).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("l4 spatial size"), "{}", stderr(&o));

    let narrow = tmp.path().join("l4c.cmpc");
    io::write_tensor(&narrow, &Tensor::zeros(&[6, 6, 3]), Dtype::F64).unwrap();
    let o = Command::new(bin()).args(infer_args(&d, narrow.to_str().unwrap(), out)).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("l4 channels"), "{}", stderr(&o));

    let missing = tmp.path().join("absent.cmpc");
    let o = Command::new(bin()).args(infer_args(&d, missing.to_str().unwrap(), out)).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(!Path::new(out).exists());
}

fn write_masks(dir: &Path, masks: &[(&str, &Tensor)]) {
    fs::create_dir_all(dir).unwrap();
    for (name, m) in masks {
        io::write_mask(m, &dir.join(format!("{name}.pgm")), MaskFormat::Pgm).unwrap();
    }
}

fn eval(pred: &Path, gt: &Path, report: &Path) -> Output {
    Command::new(bin())
        .arg("eval")
        .arg("--pred-dir")
        .arg(pred)
        .arg("--gt-dir")
        .arg(gt)
        .arg("--report")
        .arg(report)
        .output()
        .unwrap()
}

/// `k` foreground cells in a row-major `1×n` strip starting at `start`.
fn strip(n: usize, start: usize, k: usize) -> Tensor {
    Tensor::from_fn(&[1, n], |i| (start..start + k).contains(&i) as u8 as f64)
}

#[test]
fn eval_identical_dirs_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let masks = [strip(8, 1, 3), strip(8, 0, 0), strip(8, 4, 4)];
    let named: Vec<(&str, &Tensor)> = ["a", "b", "c"].into_iter().zip(&masks).collect();
    write_masks(&tmp.path().join("p"), &named);
    write_masks(&tmp.path().join("g"), &named);
    let report = tmp.path().join("report.txt");
    let o = eval(&tmp.path().join("p"), &tmp.path().join("g"), &report);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "overall_iou"), "1.0000");
    for x in ["0.5", "0.6", "0.7", "0.8", "0.9"] {
        assert_eq!(value(&out, &format!("prec@{x}")), "100.0000");
    }
    assert_eq!(value(&out, "samples"), "3");
    assert!(fs::read_to_string(&report).unwrap().starts_with(&out));
}

#[test]
fn eval_two_sample_fixture_matches_hand_values() {
    // a: I=1, U=2; b: I=8, U=10
    let tmp = tempfile::tempdir().unwrap();
    write_masks(&tmp.path().join("p"), &[("a", &strip(10, 0, 2)), ("b", &strip(10, 0, 10))]);
    write_masks(&tmp.path().join("g"), &[("a", &strip(10, 1, 1)), ("b", &strip(10, 2, 8))]);
    let report = tmp.path().join("report.txt");
    let o = eval(&tmp.path().join("p"), &tmp.path().join("g"), &report);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(value(&out, "overall_iou"), "0.7500");
    assert_eq!(value(&out, "mean_iou"), "0.6500");
    assert_eq!(value(&out, "prec@0.5"), "100.0000");
    assert_eq!(value(&out, "prec@0.6"), "50.0000");
    assert_eq!(value(&out, "prec@0.9"), "0.0000");
    assert_eq!(value(&out, "map_0.5:0.95"), "40.0000");
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("\na 1 2 0.5000\nb 8 10 0.8000\n"), "{text}");
}

#[test]
fn eval_rejects_empty_and_unpaired_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let (p, g) = (tmp.path().join("p"), tmp.path().join("g"));
    fs::create_dir_all(&p).unwrap();
    fs::create_dir_all(&g).unwrap();
    let report = tmp.path().join("r.txt");
    let o = eval(&p, &g, &report);
    assert_eq!(o.status.code(), Some(2));
    assert!(!report.exists());

    let m = strip(4, 0, 2);
    write_masks(&p, &[("x", &m), ("lonely", &m)]);
    write_masks(&g, &[("x", &m)]);
    let o = eval(&p, &g, &report);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lonely.pgm"), "{}", stderr(&o));

    let o = eval(&tmp.path().join("nowhere"), &g, &report);
    assert_eq!(o.status.code(), Some(3));
}
