//! Segmentation metrics over binary masks.

use std::fmt::Write as _;

use thiserror::Error;

use crate::tensor::Tensor;

pub const PREC_THRESHOLDS: [f64; 5] = [0.5, 0.6, 0.7, 0.8, 0.9];

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("mask shapes differ: {pred:?} vs {gt:?}")]
    Shape { pred: Vec<usize>, gt: Vec<usize> },
    #[error("{which} mask holds non-binary value {value}")]
    NonBinary { which: &'static str, value: f64 },
    #[error("no evaluation records")]
    Empty,
}

pub type Result<T> = std::result::Result<T, MetricsError>;

/// Whether an IoU exactly at a threshold counts as a hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    #[default]
    AtLeast,
    Strict,
}

impl TieRule {
    pub fn hits(self, iou: f64, x: f64) -> bool {
        match self {
            TieRule::AtLeast => iou >= x,
            TieRule::Strict => iou > x,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub intersection: u64,
    pub union: u64,
}

impl EvalRecord {
    pub fn from_masks(pred: &Tensor, gt: &Tensor) -> Result<Self> {
        if pred.shape() != gt.shape() {
            return Err(MetricsError::Shape {
                pred: pred.shape().to_vec(),
                gt: gt.shape().to_vec(),
            });
        }
        let (mut inter, mut union) = (0, 0);
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            for (which, v) in [("predicted", p), ("ground-truth", g)] {
                if v != 0.0 && v != 1.0 {
                    return Err(MetricsError::NonBinary { which, value: v });
                }
            }
            let (p, g) = (p == 1.0, g == 1.0);
            inter += (p && g) as u64;
            union += (p || g) as u64;
        }
        Ok(Self {
            intersection: inter,
            union,
        })
    }

    /// Both-empty masks agree vacuously and score 1.
    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            1.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

pub fn iou(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(EvalRecord::from_masks(pred, gt)?.iou())
}

fn non_empty(records: &[EvalRecord]) -> Result<()> {
    if records.is_empty() {
        Err(MetricsError::Empty)
    } else {
        Ok(())
    }
}

/// `Σ intersections / Σ unions`; 1 when every mask is empty.
pub fn overall_iou(records: &[EvalRecord]) -> Result<f64> {
    non_empty(records)?;
    let inter: u64 = records.iter().map(|r| r.intersection).sum();
    let union: u64 = records.iter().map(|r| r.union).sum();
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

pub fn mean_iou(records: &[EvalRecord]) -> Result<f64> {
    non_empty(records)?;
    Ok(records.iter().map(EvalRecord::iou).sum::<f64>() / records.len() as f64)
}

/// Percentage of samples whose IoU reaches `x`.
pub fn prec_at(records: &[EvalRecord], x: f64, rule: TieRule) -> Result<f64> {
    non_empty(records)?;
    let hits = records.iter().filter(|r| rule.hits(r.iou(), x)).count();
    Ok(100.0 * hits as f64 / records.len() as f64)
}

/// Thresholds `0.50, 0.55, …, 0.95`, built from integers so that they are
/// the nearest doubles to the decimal values.
pub fn map_thresholds() -> [f64; 10] {
    std::array::from_fn(|i| (50 + 5 * i) as f64 / 100.0)
}

/// Mean of [`prec_at`] over [`map_thresholds`].
pub fn mean_ap_proxy(records: &[EvalRecord], rule: TieRule) -> Result<f64> {
    non_empty(records)?;
    let t = map_thresholds();
    let mut total = 0.0;
    for x in t {
        total += prec_at(records, x, rule)?;
    }
    Ok(total / t.len() as f64)
}

/// Aggregate metrics of one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub overall_iou: f64,
    pub mean_iou: f64,
    pub prec: [(f64, f64); 5],
    pub map: f64,
    pub samples: Vec<(String, EvalRecord)>,
}

impl Report {
    pub fn new(samples: Vec<(String, EvalRecord)>, rule: TieRule) -> Result<Self> {
        let records: Vec<EvalRecord> = samples.iter().map(|(_, r)| *r).collect();
        let mut prec = [(0.0, 0.0); 5];
        for (slot, &x) in prec.iter_mut().zip(&PREC_THRESHOLDS) {
            *slot = (x, prec_at(&records, x, rule)?);
        }
        Ok(Self {
            overall_iou: overall_iou(&records)?,
            mean_iou: mean_iou(&records)?,
            prec,
            map: mean_ap_proxy(&records, rule)?,
            samples,
        })
    }

    /// `key: value` lines at 4 decimals, then one row per sample.
    pub fn render(&self) -> String {
        let mut s = String::new();
        writeln!(s, "overall_iou: {:.4}", self.overall_iou).unwrap();
        writeln!(s, "mean_iou: {:.4}", self.mean_iou).unwrap();
        for (x, p) in self.prec {
            writeln!(s, "prec@{x:.1}: {p:.4}").unwrap();
        }
        writeln!(s, "map_0.5:0.95: {:.4}", self.map).unwrap();
        writeln!(s, "samples: {}", self.samples.len()).unwrap();
        writeln!(s, "# name intersection union iou").unwrap();
        for (name, r) in &self.samples {
            writeln!(s, "{name} {} {} {:.4}", r.intersection, r.union, r.iou()).unwrap();
        }
        s
    }
}
