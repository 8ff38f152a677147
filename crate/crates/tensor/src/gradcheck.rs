//! Central finite-difference verification of graph gradients.
//!
//! `build` reconstructs the expression from scratch on every call; anything
//! it does internally — including calling [`Graph::backward`] to build a
//! gradient-of-gradient expression — is covered by the check.

use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Evaluate `sum(build(inputs))`.
pub fn eval_sum<F>(inputs: &[Tensor<f64>], build: &F) -> f64
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = build(&mut g, &ids);
    g.value(root).sum()
}

/// Compare analytic gradients of `sum(build(inputs))` against central
/// differences. Fails with a description of the first offending element.
///
/// Tolerance: `|analytic - fd| <= 1e-8 + tol * max(|analytic|, |fd|)`.
pub fn check<F>(inputs: &[Tensor<f64>], tol: f64, build: F) -> Result<(), String>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> NodeId,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let root = build(&mut g, &ids);
    let grads = g.backward(root, &ids);

    for (which, input) in inputs.iter().enumerate() {
        let analytic: Option<&Tensor<f64>> = grads[which].map(|id| g.value(id));
        for e in 0..input.len() {
            let x = input.data()[e];
            let eps = 1e-5 * x.abs().max(1.0);
            let mut plus = inputs.to_vec();
            plus[which].data_mut()[e] = x + eps;
            let mut minus = inputs.to_vec();
            minus[which].data_mut()[e] = x - eps;
            let fd = (eval_sum(&plus, &build) - eval_sum(&minus, &build)) / (2.0 * eps);
            let a = analytic.map_or(0.0, |t| t.data()[e]);
            let err = (a - fd).abs();
            let bound = 1e-8 + tol * a.abs().max(fd.abs());
            if !(err <= bound) {
                return Err(format!(
                    "input {which} element {e}: analytic {a:.9e} vs finite-diff {fd:.9e} \
                     (err {err:.3e} > bound {bound:.3e})"
                ));
            }
        }
    }
    Ok(())
}
