use serde::Serialize;

use super::graph::{Graph, NodeId};
use super::params::ParameterSet;
use crate::error::Result;

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// Name or index of the worst coordinate.
    pub worst: String,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }

    fn record(&mut self, analytic: f64, numeric: f64, label: impl FnOnce() -> String) {
        let abs = (analytic - numeric).abs();
        let rel = abs / analytic.abs().max(numeric.abs()).max(FLOOR);
        self.checked += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        if rel > self.max_rel_error || self.checked == 1 {
            self.max_rel_error = self.max_rel_error.max(rel);
            self.worst = label();
        }
    }

    fn new(tolerance: f64) -> Self {
        GradCheckReport { checked: 0, max_abs_error: 0.0, max_rel_error: 0.0, worst: String::new(), tolerance }
    }
}

/// Checks the gradient of a scalar function of one input tensor.
///
/// `f` builds the graph from the variable holding `x` and returns the loss.
pub fn grad_check<F>(params: &ParameterSet<f64>, rows: usize, cols: usize, x: &[f64], tolerance: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>, NodeId) -> Result<NodeId>,
{
    let eval = |x: Vec<f64>| -> Result<f64> {
        let mut g = Graph::new(params);
        let v = g.variable(rows, cols, x)?;
        let l = f(&mut g, v)?;
        Ok(g.scalar(l))
    };
    let mut g = Graph::new(params);
    let v = g.variable(rows, cols, x.to_vec())?;
    let l = f(&mut g, v)?;
    let back = g.backward(l)?;
    let zeros = vec![0.0; x.len()];
    let analytic = back.node(v).unwrap_or(&zeros);
    let mut report = GradCheckReport::new(tolerance);
    for i in 0..x.len() {
        let mut plus = x.to_vec();
        plus[i] += STEP;
        let mut minus = x.to_vec();
        minus[i] -= STEP;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * STEP);
        report.record(analytic[i], numeric, || format!("x[{i}]"));
    }
    Ok(report)
}

/// Checks the gradient of a scalar function with respect to every parameter.
pub fn grad_check_params<F>(params: &ParameterSet<f64>, tolerance: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let l = f(&mut g)?;
        g.backward(l)?.params
    };
    let mut work = params.clone();
    let mut report = GradCheckReport::new(tolerance);
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    for (pi, name) in names.iter().enumerate() {
        let n = analytic.0[pi].len();
        for i in 0..n {
            let orig = work.by_name(name).expect("present").value[i];
            work.by_name_mut(name).expect("present").value[i] = orig + STEP;
            let up = {
                let mut g = Graph::new(&work);
                let l = f(&mut g)?;
                g.scalar(l)
            };
            work.by_name_mut(name).expect("present").value[i] = orig - STEP;
            let down = {
                let mut g = Graph::new(&work);
                let l = f(&mut g)?;
                g.scalar(l)
            };
            work.by_name_mut(name).expect("present").value[i] = orig;
            report.record(analytic.0[pi][i], (up - down) / (2.0 * STEP), || format!("{name}[{i}]"));
        }
    }
    Ok(report)
}
