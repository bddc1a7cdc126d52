//! Finite-difference verification of analytic gradients.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Order {
    /// Gradient of `f` against differences of `f`.
    First,
    /// Hessian (gradient of the recorded gradient) against differences of the
    /// analytic gradient.
    Second,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|a - n| / max(|a|, |n|, 1e-8)` over all entries.
    pub max_rel_error: f64,
    /// Flat index of the worst entry (row-major `i * n + j` for Hessians).
    pub worst: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error <= tol
    }
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

fn eval_scalar<F>(f: &F, point: &Tensor, location: &str) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let out = f(&mut g, x)?;
    let v = g.value(out);
    if !v.is_scalar() {
        return Err(Error::NonScalar(v.shape().to_vec()));
    }
    let v = v.item();
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("f at {location}")));
    }
    Ok(v)
}

fn eval_grad<F>(f: &F, point: &Tensor, location: &str) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let x = g.leaf(point.clone());
    let out = f(&mut g, x)?;
    let grad = g.grad(out, &[x])?.remove(0);
    if !grad.is_finite() {
        return Err(Error::NonFinite(format!("gradient at {location}")));
    }
    Ok(grad.into_data())
}

fn shifted(point: &Tensor, i: usize, delta: f64) -> Tensor {
    let mut p = point.clone();
    p.data_mut()[i] += delta;
    p
}

/// Fourth-order central difference along coordinate `i` of a vector-valued
/// function: `(-f(+2h) + 8 f(+h) - 8 f(-h) + f(-2h)) / 12h`.
fn central<G>(point: &Tensor, i: usize, step: f64, mut eval: G) -> Result<Vec<f64>>
where
    G: FnMut(&Tensor, &str) -> Result<Vec<f64>>,
{
    let mut acc: Vec<f64> = Vec::new();
    for (k, w) in [(2.0, -1.0), (1.0, 8.0), (-1.0, -8.0), (-2.0, 1.0)] {
        let loc = format!("index {i}, offset {k}h");
        let v = eval(&shifted(point, i, k * step), &loc)?;
        if acc.is_empty() {
            acc = vec![0.0; v.len()];
        }
        for (a, b) in acc.iter_mut().zip(v) {
            *a += w * b;
        }
    }
    Ok(acc.into_iter().map(|a| a / (12.0 * step)).collect())
}

/// Compares analytic derivatives of the scalar graph built by `f` at `point`
/// with central finite differences of step `step`.
pub fn grad_check<F>(f: F, point: &Tensor, step: f64, order: Order) -> Result<GradCheck>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::Config(format!("finite-difference step {step} must be > 0")));
    }
    let n = point.len();
    let (analytic, numeric) = match order {
        Order::First => {
            let analytic = eval_grad(&f, point, "point")?;
            let mut numeric = Vec::with_capacity(n);
            for i in 0..n {
                let d = central(point, i, step, |p, loc| Ok(vec![eval_scalar(&f, p, loc)?]))?;
                numeric.push(d[0]);
            }
            (analytic, numeric)
        }
        Order::Second => {
            let mut g = Graph::new();
            let x = g.leaf(point.clone());
            let out = f(&mut g, x)?;
            let gx = g.grad_graph(out, &[x])?[0];
            let flat = g.reshape(gx, vec![1, n])?;
            let mut analytic = Vec::with_capacity(n * n);
            for i in 0..n {
                let comp = g.slice_cols(flat, i, 1)?;
                let comp = g.sum_all(comp)?;
                let row = g.grad(comp, &[x])?.remove(0);
                if !row.is_finite() {
                    return Err(Error::NonFinite(format!("hessian row {i}")));
                }
                analytic.extend_from_slice(row.data());
            }
            let mut numeric = vec![0.0; n * n];
            for j in 0..n {
                let col = central(point, j, step, |p, loc| eval_grad(&f, p, loc))?;
                for (i, v) in col.into_iter().enumerate() {
                    numeric[i * n + j] = v;
                }
            }
            (analytic, numeric)
        }
    };
    let (worst, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(&a, &b)| rel_error(a, b))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheck {
        max_rel_error,
        worst,
        analytic,
        numeric,
    })
}
