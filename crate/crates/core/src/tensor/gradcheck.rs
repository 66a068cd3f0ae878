//! Central finite-difference gradient checking against the tape.

use std::fmt;

use super::{ParamStore, Result, Tape, TensorError, Var};
use crate::par;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so that gradients that are
    /// zero up to round-off compare on an absolute scale.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

/// Worst scalar of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tol: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(move |p| !(p.max_rel_error <= self.tol))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    /// `Err` naming every parameter above tolerance.
    pub fn into_result(self) -> std::result::Result<Self, TensorError> {
        let failed: Vec<String> = self
            .failures()
            .map(|p| format!("{} (rel {:.3e} at {})", p.name, p.max_rel_error, p.worst_index))
            .collect();
        if failed.is_empty() {
            Ok(self)
        } else {
            Err(TensorError::Invalid {
                op: "check_gradients",
                msg: format!("tolerance {:.1e} exceeded by {}", self.tol, failed.join(", ")),
            })
        }
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for p in &self.params {
            let mark = if p.max_rel_error <= self.tol { "ok" } else { "FAIL" };
            writeln!(f, "{}: {:.3e} ({} scalars) {}", p.name, p.max_rel_error, p.scalars, mark)?;
        }
        write!(f, "max_rel_error: {:.3e}", self.max_rel_error())
    }
}

/// `(f(θ+ε) − f(θ−ε)) / 2ε` for one scalar of one parameter.
pub fn central_difference<F>(store: &ParamStore, name: &str, index: usize, eps: f64, f: &F) -> Result<f64>
where
    F: Fn(&mut Tape) -> Result<Var>,
{
    let eval = |delta: f64| -> Result<f64> {
        let shifted = store.perturbed(name, index, delta)?;
        let mut tape = Tape::with_params(&shifted);
        let out = f(&mut tape)?;
        Ok(tape.value(out).data()[0])
    };
    Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps))
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for every scalar of the named parameters (all when `names`
/// is `None`). Perturbations run in parallel; the report is in store order.
pub fn check_gradients<F>(
    store: &ParamStore,
    names: Option<&[&str]>,
    opts: GradCheckOptions,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape) -> Result<Var> + Sync,
{
    let mut tape = Tape::with_params(store);
    let out = f(&mut tape)?;
    let grads = tape.backward(out)?;

    let selected: Vec<&str> = match names {
        Some(list) => {
            for n in list {
                store.get(n)?;
            }
            store.names().filter(|n| list.contains(n)).collect()
        }
        None => store.names().collect(),
    };

    let jobs: Vec<(usize, &str, usize)> = selected
        .iter()
        .enumerate()
        .flat_map(|(p, &name)| {
            let n = store.get(name).map(|t| t.len()).unwrap_or(0);
            (0..n).map(move |i| (p, name, i))
        })
        .collect();
    let analytic: Vec<_> = selected
        .iter()
        .map(|&name| grads.param(name, store.get(name).expect("checked").shape()))
        .collect();

    let numeric = par::map_indexed(jobs.len(), |j| {
        let (_, name, i) = jobs[j];
        central_difference(store, name, i, opts.eps, &f)
    });

    let mut params: Vec<ParamCheck> = selected
        .iter()
        .map(|&name| ParamCheck {
            name: name.to_string(),
            scalars: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        })
        .collect();
    for (&(p, _, i), num) in jobs.iter().zip(numeric) {
        let num = num?;
        let ana = analytic[p].data()[i];
        let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(opts.abs_floor);
        let entry = &mut params[p];
        entry.scalars += 1;
        if rel > entry.max_rel_error || rel.is_nan() {
            entry.max_rel_error = rel;
            entry.worst_index = i;
            entry.analytic = ana;
            entry.numeric = num;
        }
    }
    Ok(GradCheckReport { tol: opts.tol, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn sum_of_sigmoid_matches_closed_form() {
        let mut store = ParamStore::new(0);
        store.insert("x", Tensor::vector(vec![0.3, -1.1, 2.4])).unwrap();
        let report = check_gradients(&store, None, GradCheckOptions::default(), |t| {
            let x = t.param("x")?;
            let s = t.sigmoid(x);
            t.sum_axis(s, 0)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report}");

        // closed-form derivative σ(x)(1−σ(x)) versus the tape
        let mut tape = Tape::with_params(&store);
        let x = tape.param("x").unwrap();
        let s = tape.sigmoid(x);
        let total = tape.sum_axis(s, 0).unwrap();
        let g = tape.backward(total).unwrap();
        for (&xv, &gv) in store.get("x").unwrap().data().iter().zip(g.get(x).unwrap().data()) {
            let sv = 1.0 / (1.0 + (-xv).exp());
            assert!((gv - sv * (1.0 - sv)).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_parameter_has_zero_gradients() {
        let mut store = ParamStore::new(0);
        store.insert("x", Tensor::vector(vec![0.5, 1.5])).unwrap();
        store.insert("unused", Tensor::vector(vec![2.0])).unwrap();
        let report = check_gradients(&store, None, GradCheckOptions::default(), |t| {
            let x = t.param("x")?;
            let y = t.tanh(x);
            t.sum_axis(y, 0)
        })
        .unwrap();
        let unused = report.params.iter().find(|p| p.name == "unused").unwrap();
        assert_eq!((unused.analytic, unused.numeric, unused.max_rel_error), (0.0, 0.0, 0.0));
        assert!(report.passed());
    }

    #[test]
    fn impossible_tolerance_fails_by_name() {
        let mut store = ParamStore::new(0);
        store.insert("w", Tensor::vector(vec![0.7, -0.2])).unwrap();
        let opts = GradCheckOptions {
            tol: 0.0,
            ..Default::default()
        };
        let report = check_gradients(&store, None, opts, |t| {
            let w = t.param("w")?;
            let e = t.mul(w, w)?;
            let e = t.mul(e, w)?;
            let s = t.sigmoid(e);
            t.sum_axis(s, 0)
        })
        .unwrap();
        let err = report.into_result().unwrap_err().to_string();
        assert!(err.contains("w"), "{err}");
    }
}
