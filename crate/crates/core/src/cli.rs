//! `cmpc` subcommands. Every command returns an exit code: 0 success,
//! 1 check or evaluation failure, 2 usage error, 3 I/O error. Results go to
//! stdout as `key: value` lines, diagnostics to stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::io::{self, IoError, MaskFormat, TENSOR_MAGIC};
use crate::linguistic::Mode;
use crate::metrics::{EvalRecord, Report, TieRule};
use crate::pipeline::{self, Model, ModelError, Sample, TrainError};
use crate::selftest::{self, Faults};
use crate::tensor::{GradCheckOptions, Tensor};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cmpc", version, about = "Cross-modal progressive comprehension toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Image,
    Video,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Image => Mode::Image,
            ModeArg::Video => Mode::Video,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Pgm,
    RawLogits,
}

impl From<OutFormat> for MaskFormat {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Pgm => MaskFormat::Pgm,
            OutFormat::RawLogits => MaskFormat::RawLogits,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the built-in invariant suite.
    Selftest,
    /// Finite-difference check of every parameter of a toy pipeline.
    Gradcheck {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Overfit the planted-target toy set; writes a checkpoint and a loss
    /// trace (`<checkpoint>.trace`).
    TrainToy {
        #[arg(long, value_enum)]
        mode: ModeArg,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Defaults to the convergence budget of the mode.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out_checkpoint: PathBuf,
    },
    /// Predict a mask from precomputed backbone features.
    Infer {
        #[arg(long)]
        features_l3: PathBuf,
        #[arg(long)]
        features_l4: PathBuf,
        #[arg(long)]
        features_l5: PathBuf,
        #[arg(long)]
        tokens: PathBuf,
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = OutFormat::Pgm)]
        out_format: OutFormat,
    },
    /// Score predicted masks against ground truth, pairing files by stem.
    Eval {
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
}

/// A command failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    msg: String,
}

impl Failure {
    fn new(code: i32, msg: impl Into<String>) -> Self {
        Self { code, msg: msg.into() }
    }
}

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let code = match e {
            IoError::Fs { .. } => EXIT_IO,
            IoError::LayoutMismatch(_) | IoError::Config(_) | IoError::Tokens(_) => EXIT_USAGE,
            _ => EXIT_IO,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let code = match e {
            ModelError::Tensor(_) => EXIT_FAILURE,
            _ => EXIT_USAGE,
        };
        Failure::new(code, e.to_string())
    }
}

type Outcome = Result<String, Failure>;

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let (code, out) = match execute(cli.command) {
        Ok(out) => (EXIT_OK, out),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            (f.code, String::new())
        }
    };
    print!("{out}");
    let _ = std::io::stdout().flush();
    code
}

fn execute(cmd: Command) -> Outcome {
    match cmd {
        Command::Selftest => cmd_selftest(&Faults::default()),
        Command::Gradcheck { mode, seed, tol } => cmd_gradcheck(mode.into(), seed, tol),
        Command::TrainToy {
            mode,
            seed,
            steps,
            out_checkpoint,
        } => cmd_train_toy(mode.into(), seed, steps, &out_checkpoint),
        Command::Infer {
            features_l3,
            features_l4,
            features_l5,
            tokens,
            params,
            config,
            out,
            out_format,
        } => cmd_infer(
            [&features_l3, &features_l4, &features_l5],
            &tokens,
            &params,
            &config,
            &out,
            out_format.into(),
        ),
        Command::Eval { pred_dir, gt_dir, report } => cmd_eval(&pred_dir, &gt_dir, &report),
    }
}

/// Runs the suite with `faults` injected. Failures print the table to stdout
/// before the exit code is reported.
fn cmd_selftest(faults: &Faults) -> Outcome {
    let results = selftest::run(faults);
    let mut out = String::new();
    let mut failed = 0;
    for r in &results {
        match &r.outcome {
            Ok(()) => writeln!(out, "{}.{}: pass", r.module, r.name).unwrap(),
            Err(e) => {
                failed += 1;
                writeln!(out, "{}.{}: FAIL", r.module, r.name).unwrap();
                eprintln!("{}.{}: {e}", r.module, r.name);
            }
        }
    }
    writeln!(out, "checks: {}", results.len()).unwrap();
    writeln!(out, "failed: {failed}").unwrap();
    if failed > 0 {
        print!("{out}");
        return Err(Failure::new(EXIT_FAILURE, format!("{failed} self-test check(s) failed")));
    }
    Ok(out)
}

pub fn gradcheck_options(tol: f64) -> GradCheckOptions {
    GradCheckOptions {
        tol,
        ..GradCheckOptions::default()
    }
}

fn cmd_gradcheck(mode: Mode, seed: u64, tol: f64) -> Outcome {
    if !(tol > 0.0) {
        return Err(Failure::new(EXIT_USAGE, format!("--tol must be positive, got {tol}")));
    }
    let report = pipeline::check_pipeline_gradients(mode, seed, gradcheck_options(tol))?;
    let mut out = String::new();
    for p in &report.params {
        writeln!(out, "{}: {:.3e}", p.name, p.max_rel_error).unwrap();
    }
    writeln!(out, "max_rel_error: {:.3e}", report.max_rel_error()).unwrap();
    writeln!(out, "tol: {tol:e}").unwrap();
    let failed: Vec<&str> = report.failures().map(|p| p.name.as_str()).collect();
    writeln!(out, "failed: {}", failed.len()).unwrap();
    if !failed.is_empty() {
        print!("{out}");
        return Err(Failure::new(
            EXIT_FAILURE,
            format!("relative error above {tol:e} in {}", failed.join(", ")),
        ));
    }
    Ok(out)
}

/// `<checkpoint>.trace` next to the checkpoint.
pub fn trace_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".trace");
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))
}

fn cmd_train_toy(mode: Mode, seed: u64, steps: Option<usize>, checkpoint: &Path) -> Outcome {
    let cfg = pipeline::overfit_config(mode, seed);
    let (budget, threshold) = pipeline::overfit_target(mode);
    let steps = steps.unwrap_or(budget);
    let data = pipeline::overfit_dataset(&cfg);
    let outcome = match pipeline::train_toy(&data, &cfg, steps) {
        Ok(o) => o,
        Err(e @ TrainError::Diverged { .. }) => return Err(Failure::new(EXIT_FAILURE, e.to_string())),
        Err(TrainError::Model(e)) => return Err(e.into()),
        Err(e) => return Err(Failure::new(EXIT_FAILURE, e.to_string())),
    };
    io::save_checkpoint(checkpoint, &outcome.params)?;
    let mut trace = String::new();
    for l in &outcome.trace {
        writeln!(trace, "{l}").unwrap();
    }
    let tpath = trace_path(checkpoint);
    write_text(&tpath, &trace)?;

    let last = outcome.final_loss();
    let mut out = String::new();
    writeln!(out, "steps: {steps}").unwrap();
    writeln!(out, "initial_loss: {:.6}", outcome.trace[0]).unwrap();
    writeln!(out, "final_loss: {last:.6}").unwrap();
    writeln!(out, "threshold: {threshold}").unwrap();
    writeln!(out, "checkpoint: {}", checkpoint.display()).unwrap();
    writeln!(out, "trace: {}", tpath.display()).unwrap();
    let converged = last < threshold;
    writeln!(out, "converged: {converged}").unwrap();
    if !converged {
        print!("{out}");
        return Err(Failure::new(
            EXIT_FAILURE,
            format!("final loss {last:.6} is not below {threshold} after {steps} steps"),
        ));
    }
    Ok(out)
}

fn cmd_infer(
    features: [&Path; 3],
    tokens: &Path,
    params: &Path,
    config: &Path,
    out_path: &Path,
    format: MaskFormat,
) -> Outcome {
    let cfg = io::load_config(config)?;
    let store = io::load_checkpoint(params, &cfg)?;
    let [a, b, c] = features.map(io::read_tensor);
    let sample = Sample {
        features: [a?, b?, c?],
        tokens: io::load_tokens(tokens)?,
        mask: Tensor::zeros(&[0]),
    };
    let model = Model::new(&cfg, &store)?;
    let logits = model.predict(&sample)?;
    let mask = io::binarize_logits(&logits);
    match format {
        MaskFormat::Pgm => io::write_mask(&mask, out_path, format)?,
        MaskFormat::RawLogits => io::write_mask(&logits, out_path, format)?,
    }
    let [h, w] = *logits.shape() else {
        unreachable!("logits are a map")
    };
    let mut out = String::new();
    writeln!(out, "height: {h}").unwrap();
    writeln!(out, "width: {w}").unwrap();
    writeln!(out, "foreground_pixels: {}", mask.sum() as u64).unwrap();
    writeln!(out, "out: {}", out_path.display()).unwrap();
    Ok(out)
}

/// Regular files of `dir` keyed by stem.
fn list_masks(dir: &Path) -> Result<BTreeMap<String, PathBuf>, Failure> {
    let io_err = |e: std::io::Error| Failure::new(EXIT_IO, format!("{}: {e}", dir.display()));
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if !path.is_file() {
            continue;
        }
        let stem = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            return Err(Failure::new(
                EXIT_USAGE,
                format!("{} and {} share the name `{stem}`", prev.display(), path.display()),
            ));
        }
    }
    Ok(out)
}

/// Predictions may be PGM masks or tensor files of logits (thresholded at 0).
fn read_prediction(path: &Path) -> Result<Tensor, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::new(EXIT_IO, format!("{}: {e}", path.display())))?;
    let t = if bytes.starts_with(TENSOR_MAGIC) {
        let (t, _) = io::decode_tensor(&bytes)?;
        io::binarize_logits(&t)
    } else {
        io::decode_pgm(&bytes)?
    };
    Ok(t)
}

fn cmd_eval(pred_dir: &Path, gt_dir: &Path, report_path: &Path) -> Outcome {
    let preds = list_masks(pred_dir)?;
    let gts = list_masks(gt_dir)?;
    let unpaired: Vec<String> = preds
        .iter()
        .filter(|(k, _)| !gts.contains_key(*k))
        .chain(gts.iter().filter(|(k, _)| !preds.contains_key(*k)))
        .map(|(_, p)| p.display().to_string())
        .collect();
    if !unpaired.is_empty() {
        return Err(Failure::new(EXIT_USAGE, format!("unpaired files: {}", unpaired.join(", "))));
    }
    if preds.is_empty() {
        return Err(Failure::new(EXIT_USAGE, "no masks to evaluate"));
    }
    let mut samples = Vec::with_capacity(preds.len());
    for (name, pred_path) in &preds {
        let pred = read_prediction(pred_path)?;
        let gt = io::read_mask(&gts[name])?;
        let rec = EvalRecord::from_masks(&pred, &gt).map_err(|e| Failure::new(EXIT_FAILURE, format!("{name}: {e}")))?;
        samples.push((name.clone(), rec));
    }
    let report = Report::new(samples, TieRule::AtLeast).map_err(|e| Failure::new(EXIT_FAILURE, e.to_string()))?;
    let text = report.render();
    write_text(report_path, &text)?;
    let summary: String = text.lines().take_while(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["cmpc"]), EXIT_USAGE);
        assert_eq!(run(["cmpc", "gradcheck", "--mode", "audio"]), EXIT_USAGE);
        assert_eq!(run(["cmpc", "gradcheck", "--mode", "image", "--tol", "-1"]), EXIT_USAGE);
        assert_eq!(run(["cmpc", "--help"]), EXIT_OK);
    }

    #[test]
    fn selftest_exit_codes() {
        assert!(cmd_selftest(&Faults::default()).is_ok());
        let err = cmd_selftest(&Faults {
            adjacency_row_scale: Some(0.9),
        })
        .unwrap_err();
        assert_eq!(err.code, EXIT_FAILURE);
    }

    #[test]
    fn trace_sits_next_to_checkpoint() {
        assert_eq!(trace_path(Path::new("out/toy.ckpt")), PathBuf::from("out/toy.ckpt.trace"));
    }

    #[test]
    fn eval_pairs_by_stem() {
        let dir = tempfile::tempdir().unwrap();
        let (p, g) = (dir.path().join("p"), dir.path().join("g"));
        fs::create_dir_all(&p).unwrap();
        fs::create_dir_all(&g).unwrap();
        let report = dir.path().join("r.txt");
        assert_eq!(cmd_eval(&p, &g, &report).unwrap_err().code, EXIT_USAGE);

        let m = Tensor::from_fn(&[2, 2], |i| (i == 0) as u8 as f64);
        io::write_mask(&m, &g.join("a.pgm"), MaskFormat::Pgm).unwrap();
        // logits file predicting the same single pixel
        let z = m.map(|v| 4.0 * v - 2.0);
        io::write_mask(&z, &p.join("a.cmpc"), MaskFormat::RawLogits).unwrap();
        let out = cmd_eval(&p, &g, &report).unwrap();
        assert!(out.starts_with("overall_iou: 1.0000\n"), "{out}");
        assert!(fs::read_to_string(&report).unwrap().contains("\na 1 1 1.0000\n"));

        io::write_mask(&m, &p.join("b.pgm"), MaskFormat::Pgm).unwrap();
        let err = cmd_eval(&p, &g, &report).unwrap_err();
        assert_eq!(err.code, EXIT_USAGE);
        assert!(err.msg.contains("b.pgm"), "{}", err.msg);
    }
}
