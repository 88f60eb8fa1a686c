//! Central finite-difference verification of [`Graph::grad`].

use crate::numerics::{Graph, GraphError, Tensor, Var};
use crate::scalar::Scalar;

/// Denominator floor for relative errors, so coordinates whose true
/// derivative is zero are judged by absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// `(input, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    /// Coordinates whose ±h evaluation crossed an activation kink.
    pub skipped: usize,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.max_rel_err < self.tolerance
    }

    /// Combines reports from several instances of the same check.
    pub fn merge(mut self, other: &GradCheckReport) -> Self {
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
        self
    }

    pub fn empty(tolerance: f64) -> Self {
        Self {
            max_rel_err: 0.0,
            worst: None,
            checked: 0,
            skipped: 0,
            tolerance,
        }
    }
}

fn evaluate<S, F>(f: &F, point: &[Tensor<S>]) -> Result<(f64, Vec<bool>), GraphError>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var, GraphError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = point.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    Ok((g.scalar(out).to_f64_lossy(), g.activation_pattern()))
}

/// Compares the autodiff gradient of the scalar built by `f` at `point`
/// against central differences with step `h`.
///
/// `f` receives one leaf per input tensor. Coordinates where either
/// perturbed evaluation changes the leaky-relu sign pattern are skipped.
pub fn finite_diff_check<S, F>(
    f: F,
    point: &[Tensor<S>],
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GraphError>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var, GraphError>,
{
    finite_diff_check_with(f, point, h, tolerance, None)
}

/// As [`finite_diff_check`], injecting an adjoint fault into the analytic pass.
pub fn finite_diff_check_with<S, F>(
    f: F,
    point: &[Tensor<S>],
    h: f64,
    tolerance: f64,
    fault: Option<&'static str>,
) -> Result<GradCheckReport, GraphError>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var, GraphError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut g = Graph::new();
    if let Some(op) = fault {
        g.inject_adjoint_fault(op);
    }
    let vars: Vec<Var> = point.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    let base_pattern = g.activation_pattern();
    let grads = g.grad(out, &vars)?;
    let analytic: Vec<Vec<f64>> = grads
        .iter()
        .map(|&v| g.value(v).iter().map(|x| x.to_f64_lossy()).collect())
        .collect();

    let mut report = GradCheckReport::empty(tolerance);
    let mut probe: Vec<Tensor<S>> = point.to_vec();
    for (ti, t) in point.iter().enumerate() {
        for j in 0..t.len() {
            let x0 = t.data()[j];
            probe[ti].data_mut()[j] = x0 + S::lit(h);
            let (fp, pp) = evaluate(&f, &probe)?;
            probe[ti].data_mut()[j] = x0 - S::lit(h);
            let (fm, pm) = evaluate(&f, &probe)?;
            probe[ti].data_mut()[j] = x0;
            if pp != base_pattern || pm != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[ti][j];
            let denom = a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel >= report.max_rel_err {
                    report.worst = Some((ti, j));
                }
            }
        }
    }
    Ok(report)
}
