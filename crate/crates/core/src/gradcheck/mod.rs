//! Central finite-difference verification of analytic gradients.
//!
//! The checker owns the leaves: it registers every supplied tensor as a
//! trainable parameter, lets the caller build a scalar on top, runs backward,
//! and then perturbs each leaf element by `±STEP`, rebuilding the graph from
//! scratch for each evaluation.
//!
//! Relative error per element is `|analytic - numeric| / max(|analytic|, |numeric|, FLOOR)`.

use std::fmt;

pub mod suite;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor4;

/// Finite-difference step used at `f64` precision.
pub const STEP: f64 = 1e-5;
/// Denominator floor so that exactly-zero gradients compare absolutely.
pub const FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub name: String,
    pub max_rel_err: f64,
    /// (leaf index, element index) of the worst element.
    pub worst: Option<(usize, usize)>,
    pub elements: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub failure: Option<String>,
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<40} {:>5} max_rel_err={:.3e} tol={:.0e} {}",
            self.name,
            self.elements,
            self.max_rel_err,
            self.tolerance,
            if self.passed { "PASS" } else { "FAIL" }
        )?;
        if let Some(msg) = &self.failure {
            write!(f, " ({msg})")?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

fn evaluate<F>(leaves: &[Tensor4<f64>], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    if g.dims(out).len() != 1 {
        return Err(Error::Shape(format!("gradcheck target has dims {}", g.dims(out))));
    }
    Ok(g.scalar(out))
}

fn analytic<F>(leaves: &[Tensor4<f64>], build: &F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    Ok(vars
        .iter()
        .zip(leaves)
        .map(|(&v, t)| g.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.dims().len()]))
        .collect())
}

/// Compare backward against central differences for every element of every leaf.
///
/// Never fails: errors while building the graph are reported as a failed check.
pub fn grad_check<F>(name: &str, leaves: &[Tensor4<f64>], tolerance: f64, build: F) -> GradReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut report = GradReport {
        name: name.to_string(),
        max_rel_err: 0.0,
        worst: None,
        elements: 0,
        tolerance,
        passed: false,
        failure: None,
    };
    let mut run = || -> Result<()> {
        let grads = analytic(leaves, &build)?;
        let mut work = leaves.to_vec();
        for (li, leaf_grad) in grads.iter().enumerate() {
            for (ei, &a) in leaf_grad.iter().enumerate() {
                let orig = work[li].data()[ei];
                work[li].data_mut()[ei] = orig + STEP;
                let plus = evaluate(&work, &build)?;
                work[li].data_mut()[ei] = orig - STEP;
                let minus = evaluate(&work, &build)?;
                work[li].data_mut()[ei] = orig;
                let numeric = (plus - minus) / (2.0 * STEP);
                let err = relative_error(a, numeric);
                if !err.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite gradient at leaf {li}, element {ei}"
                    )));
                }
                report.elements += 1;
                if err > report.max_rel_err || report.worst.is_none() {
                    report.max_rel_err = err;
                    report.worst = Some((li, ei));
                }
            }
        }
        Ok(())
    };
    let outcome = run();
    match outcome {
        Ok(()) => report.passed = report.max_rel_err < tolerance,
        Err(e) => {
            report.max_rel_err = f64::INFINITY;
            report.failure = Some(e.to_string());
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn detects_a_wrong_gradient() {
        // relu has a kink at zero: straddling it with the FD stencil must show up.
        let x = Tensor4::vector(vec![0.0, 1.0]);
        let r = grad_check("relu-at-kink", &[x], 1e-4, |g, v| {
            let y = g.relu(v[0]);
            g.dot(y, &[1.0, 1.0])
        });
        assert!(!r.passed);
        assert_eq!(r.worst, Some((0, 0)));
    }

    #[test]
    fn smooth_pipeline_passes() {
        let x = Tensor4::from_fn(Dims::new(1, 1, 3, 3), |_, _, y, x| (y as f64 - 1.2) * 0.3 + x as f64 * 0.17);
        let r = grad_check("resize", &[x], 1e-4, |g, v| {
            let y = g.bilinear_resize(v[0], 5, 4)?;
            let w: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
            g.dot(y, &w)
        });
        assert!(r.passed, "{r}");
        assert_eq!(r.elements, 9);
    }

    #[test]
    fn build_errors_become_failures() {
        let r = grad_check("bad", &[Tensor4::zeros(Dims::new(1, 1, 2, 2))], 1e-4, |g, v| g.bilinear_resize(v[0], 0, 1));
        assert!(!r.passed);
        assert!(r.failure.is_some());
    }
}
