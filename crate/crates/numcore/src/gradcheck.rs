//! Finite-difference verification of reverse-mode gradients.

use crate::error::{NumError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Gradients smaller than this are compared in absolute terms: the relative
/// error denominator is `max(|analytic|, |numeric|, GRAD_SCALE_FLOOR)`.
pub const GRAD_SCALE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_SCALE_FLOOR)
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let mut g = Graph::checked();
    let xv = g.constant(x.clone())?;
    let y = f(&mut g, xv)?;
    scalar_output(&g, y)
}

fn scalar_output(g: &Graph<f64>, y: Var) -> Result<f64> {
    let value = g.value(y);
    if value.numel() != 1 {
        return Err(NumError::Contract(format!(
            "gradient check needs a scalar-valued function, got shape {:?}",
            value.shape()
        )));
    }
    Ok(value.data()[0])
}

/// Compare the reverse-mode gradient of `f` at `x` against fourth-order
/// central differences on every element. Returns the largest relative error.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    Ok(grad_check_at(f, x, eps, &all)?.max_rel_error)
}

/// As [`grad_check`], restricted to the flat element `indices`.
pub fn grad_check_at<F>(f: F, x: &Tensor<f64>, eps: f64, indices: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    grad_check_steps(f, x, &[eps], indices)
}

/// As [`grad_check_at`], trying each step in `steps` and keeping the best
/// agreement per element. Deep ReLU networks need this: a large step can
/// cross an activation kink, a small one drowns tiny gradients in roundoff,
/// while a wrong analytic gradient disagrees at every step.
pub fn grad_check_steps<F>(f: F, x: &Tensor<f64>, steps: &[f64], indices: &[usize]) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    if steps.is_empty() || steps.iter().any(|&e| e.is_nan() || e <= 0.0) {
        return Err(NumError::Contract("finite-difference steps must be positive".into()));
    }
    let mut g = Graph::checked();
    let xv = g.param(x.clone())?;
    let y = f(&mut g, xv)?;
    scalar_output(&g, y)?;
    let grads = g.backward(y)?;
    let zero = Tensor::zeros(x.shape());
    let analytic = grads.get(xv).unwrap_or(&zero);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = x.clone();
    for &i in indices {
        let a = analytic.data()[i];
        let mut best = (f64::INFINITY, 0.0);
        for &eps in steps {
            let numeric = five_point(&f, &mut probe, i, eps)?;
            let err = relative_error(a, numeric);
            if err < best.0 {
                best = (err, numeric);
            }
        }
        report.checked += 1;
        if best.0 >= report.max_rel_error {
            report.max_rel_error = best.0;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = best.1;
        }
    }
    Ok(report)
}

/// Fourth-order central difference along element `i`; `probe` is restored.
fn five_point<F>(f: &F, probe: &mut Tensor<f64>, i: usize, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let orig = probe.data()[i];
    let mut at = |offset: f64| -> Result<f64> {
        probe.data_mut()[i] = orig + offset;
        eval(f, probe)
    };
    let (p1, m1, p2, m2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
    probe.data_mut()[i] = orig;
    Ok((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps))
}
