//! Fusion weights over layer indices.
//!
//! Layer `l` of the fusion stream receives `(1 − w_l)·concat(I_l, X_l) + w_l·Z_l`.
//! A sigmoid `w_l = 1 / (1 + exp(−α(l − β)))` lets the fusion point `β` be
//! learned; `α` controls how close the sigmoid is to the step `𝕀[l > β]`.

use crate::tensor::{Graph, Var};
use crate::{Error, Result};

pub use crate::tensor::sigmoid;

/// Sharpness `alpha` and fusion layer `beta` of the sigmoid gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionSchedule {
    pub alpha: f64,
    pub beta: f64,
    pub trainable: bool,
}

impl FusionSchedule {
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            trainable: true,
        }
    }

    pub fn weights(&self, layers: usize) -> Result<Vec<f64>> {
        fusion_weights(self, layers)
    }
}

/// `w_l` for `l = 1..=layers`.
pub fn fusion_weights(schedule: &FusionSchedule, layers: usize) -> Result<Vec<f64>> {
    if layers == 0 {
        return Err(Error::contract("fusion_weights needs at least one layer"));
    }
    if !(schedule.alpha > 0.0) || !schedule.alpha.is_finite() || !schedule.beta.is_finite() {
        return Err(Error::contract(format!(
            "gate sharpness must be positive and finite (alpha = {}, beta = {})",
            schedule.alpha, schedule.beta
        )));
    }
    Ok((1..=layers)
        .map(|l| sigmoid(schedule.alpha * (l as f64 - schedule.beta)))
        .collect())
}

/// The step gate `w_l = 𝕀[l > beta]`. `beta = 0` is early fusion and
/// `beta = layers` late fusion.
pub fn hard_gate(beta: usize, layers: usize) -> Result<Vec<f64>> {
    if beta > layers {
        return Err(Error::contract(format!(
            "hard gate position {beta} outside 0..={layers}"
        )));
    }
    Ok((1..=layers).map(|l| if l > beta { 1.0 } else { 0.0 }).collect())
}

/// `max_l min(w_l, 1 − w_l)`: zero for a binary gate, 0.5 when some layer
/// mixes both sources equally.
pub fn gate_softness(weights: &[f64]) -> f64 {
    weights.iter().map(|&w| w.min(1.0 - w)).fold(0.0, f64::max)
}

/// How a network obtains its fusion weights.
#[derive(Clone, Debug, PartialEq)]
pub enum Gate {
    /// Sigmoid gate whose `alpha` and `beta` are entries of the parameter set.
    Sigmoid,
    /// Fixed weights, e.g. from [`hard_gate`].
    Fixed(Vec<f64>),
}

impl Gate {
    pub fn is_trainable(&self) -> bool {
        matches!(self, Gate::Sigmoid)
    }
}

/// Records `w_l = sigmoid(alpha · (l − beta))` on `graph` for `l = 1..=layers`,
/// differentiable in `alpha` and `beta`.
pub fn gate_vars(graph: &mut Graph, alpha: Var, beta: Var, layers: usize) -> Result<Vec<Var>> {
    let alpha_value = graph.data(alpha)[0];
    if !(alpha_value > 0.0) {
        return Err(Error::contract(format!("gate sharpness alpha = {alpha_value} must be positive")));
    }
    let neg_beta = graph.neg(beta)?;
    (1..=layers)
        .map(|l| {
            let d = graph.add_const(neg_beta, l as f64)?;
            let p = graph.mul(alpha, d)?;
            graph.sigmoid(p)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn large_alpha_approaches_indicator() {
        let w = fusion_weights(&FusionSchedule::new(1e3, 4.0), 8).unwrap();
        for (i, &wl) in w.iter().enumerate() {
            let l = i + 1;
            if l == 4 {
                assert_eq!(wl, 0.5);
                continue;
            }
            let ind = if l > 4 { 1.0 } else { 0.0 };
            assert!((wl - ind).abs() < 1e-9);
        }
        let w = fusion_weights(&FusionSchedule::new(1e3, 4.5), 8).unwrap();
        let expected = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        for (a, e) in w.iter().zip(expected) {
            assert!((a - e).abs() < 1e-9);
        }
    }

    #[test]
    fn tiny_alpha_mixes_equally() {
        let w = fusion_weights(&FusionSchedule::new(1e-12, 2.7), 6).unwrap();
        assert!(w.iter().all(|&x| (x - 0.5).abs() < 1e-11));
    }

    #[test]
    fn unit_alpha_value() {
        let w = fusion_weights(&FusionSchedule::new(1.0, 2.0), 3).unwrap();
        // 1 / (1 + e^-1) to 16 digits.
        assert!((w[2] - 0.731_058_578_630_004_9).abs() < 1e-15);
    }

    #[test]
    fn non_positive_alpha_rejected() {
        assert!(matches!(
            fusion_weights(&FusionSchedule::new(0.0, 1.0), 3),
            Err(Error::Contract(_))
        ));
        assert!(fusion_weights(&FusionSchedule::new(-1.0, 1.0), 3).is_err());
        assert!(fusion_weights(&FusionSchedule::new(1.0, 1.0), 0).is_err());
    }

    #[test]
    fn hard_gate_examples() {
        assert_eq!(hard_gate(0, 5).unwrap(), vec![1.0; 5]);
        assert_eq!(hard_gate(5, 5).unwrap(), vec![0.0; 5]);
        assert_eq!(
            hard_gate(4, 8).unwrap(),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]
        );
        assert!(matches!(hard_gate(6, 5), Err(Error::Contract(_))));
    }

    #[test]
    fn graph_gate_matches_scalar_gate() {
        let s = FusionSchedule::new(0.7, 2.3);
        let mut g = Graph::new();
        let a = g.param(&Tensor::scalar(s.alpha));
        let b = g.param(&Tensor::scalar(s.beta));
        let vars = gate_vars(&mut g, a, b, 5).unwrap();
        let direct = fusion_weights(&s, 5).unwrap();
        for (v, d) in vars.iter().zip(&direct) {
            assert_eq!(g.data(*v)[0], *d);
        }
    }

    #[test]
    fn softness() {
        assert_eq!(gate_softness(&[0.0, 1.0, 1.0]), 0.0);
        assert_eq!(gate_softness(&[0.1, 0.5, 0.9]), 0.5);
    }
}
