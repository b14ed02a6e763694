use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// `Σ_n ‖pred_n − target_n‖²`.
pub fn square_loss(graph: &mut Graph, preds: &[Var], targets: &[Var]) -> Result<Var> {
    if preds.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::contract("square loss over an empty batch"));
    }
    let mut total: Option<Var> = None;
    for (&p, &t) in preds.iter().zip(targets) {
        if graph.shape(p) != graph.shape(t) {
            return Err(Error::dim(format!(
                "prediction {:?} and target {:?} differ in shape",
                graph.shape(p),
                graph.shape(t)
            )));
        }
        let r = graph.sub(p, t)?;
        let s = graph.sum_squares(r)?;
        total = Some(match total {
            None => s,
            Some(acc) => graph.add(acc, s)?,
        });
    }
    Ok(total.expect("non-empty batch"))
}

/// `λ / α²`, the penalty that favours a sharp gate.
pub fn sharpness_penalty(graph: &mut Graph, alpha: Var, lambda: f64) -> Result<Var> {
    let a = graph.data(alpha)[0];
    if !(a > 0.0) {
        return Err(Error::contract(format!("gate sharpness alpha = {a} must be positive")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::contract(format!("penalty weight {lambda} must be non-negative")));
    }
    let inv_sq = graph.powi(alpha, -2)?;
    graph.scale(inv_sq, lambda)
}

/// Square loss plus `λ / α²`.
pub fn regularized_loss(graph: &mut Graph, preds: &[Var], targets: &[Var], alpha: Var, lambda: f64) -> Result<Var> {
    let data = square_loss(graph, preds, targets)?;
    let penalty = sharpness_penalty(graph, alpha, lambda)?;
    graph.add(data, penalty)
}
