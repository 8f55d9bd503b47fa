use crate::error::Result;

use super::graph::{Graph, OpKind, Var};
use super::params::{value_and_grad_on, Bound, ParamStore};

/// Settings for [`grad_check`].
#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Entries checked per parameter; `None` checks all of them.
    pub max_entries_per_param: Option<usize>,
    #[doc(hidden)]
    pub fault: Option<OpKind>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-4,
            max_entries_per_param: None,
            fault: None,
        }
    }
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub label: String,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_values: (f64, f64),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

/// `|a - n| / (max(|a|, |n|) + 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs().max(numeric.abs()) + 1e-6)
}

fn sample_indices(n: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(k) if k < n => (0..k).map(|i| i * n / k + (n / k) / 2).collect(),
        _ => (0..n).collect(),
    }
}

fn eval(store: &ParamStore<f64>, f: &impl Fn(&mut Graph<f64>, &Bound) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let bound = store.bind(&mut g);
    let v = f(&mut g, &bound)?;
    Ok(g.value(v).item())
}

/// Compares reverse-mode gradients of `f` with central differences, in double precision.
pub fn grad_check(
    label: &str,
    store: &ParamStore<f64>,
    f: impl Fn(&mut Graph<f64>, &Bound) -> Result<Var>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    if let Some(kind) = opts.fault {
        g.inject_fault(kind);
    }
    let (_, analytic) = value_and_grad_on(&mut g, store, &f)?;
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        label: label.to_string(),
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        checked: 0,
    };
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let n = store.get(&name)?.value.len();
        for i in sample_indices(n, opts.max_entries_per_param) {
            let orig = store.get(&name)?.value[i];
            probe.get_mut(&name)?.value[i] = orig + opts.step;
            let up = eval(&probe, &f)?;
            probe.get_mut(&name)?.value[i] = orig - opts.step;
            let down = eval(&probe, &f)?;
            probe.get_mut(&name)?.value[i] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let err = relative_error(analytic[&name][i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), i));
                report.worst_values = (analytic[&name][i], numeric);
            }
        }
    }
    Ok(report)
}
