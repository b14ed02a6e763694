use std::path::PathBuf;

use crate::{Error, Result};

/// Optimisation settings.
///
/// `gate_learning_rate` is the ADAM step size for `alpha` and `beta`; every
/// other parameter uses `learning_rate`. The gate also has its own second
/// moment decay `gate_adam_beta2`: the sharpness penalty's gradient falls
/// off as `alpha⁻³`, and a long memory of the large early gradients would
/// stall the growth of `alpha`. Once the gate has nearly settled, `beta` can
/// lose its gradient entirely (a pooling layer right after a layer with
/// `w ≈ 0` computes the same map from either source), and from then on only
/// `alpha` sharpens the gate, by roughly `gate_learning_rate` per step.
/// Residuals are measured in units of
/// `loss_unit_mm` millimetres before squaring, so the default loss is in
/// square metres and comparable in size to the sharpness penalty.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub gate_learning_rate: f64,
    pub lambda: f64,
    pub alpha_init: f64,
    /// `None` places the gate at the middle layer, `L / 2`.
    pub beta_init: Option<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Off by default: independent masks in the parallel streams make a
    /// half-and-half mix at one layer act as an ensemble, which holds the
    /// gate soft however large `alpha` grows.
    pub dropout_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub gate_adam_beta2: f64,
    pub adam_eps: f64,
    pub log_interval: usize,
    pub loss_unit_mm: f64,
    /// Fraction of the corpus held out for validation, taken from its end.
    pub val_fraction: f64,
    /// Validation samples scored at each logged step (the final score uses
    /// the whole validation split).
    pub trace_val_samples: usize,
    pub augment_flip: bool,
    /// Train only the gate; layer weights keep their initial values.
    pub freeze_layers: bool,
    /// Where to write the last good parameters if training diverges.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            gate_learning_rate: 0.1,
            lambda: 5e3,
            alpha_init: 0.1,
            beta_init: None,
            epochs: 3,
            batch_size: 8,
            seed: 7,
            dropout_rate: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            gate_adam_beta2: 0.9,
            adam_eps: 1e-8,
            log_interval: 50,
            loss_unit_mm: 1000.0,
            val_fraction: 0.1,
            trace_val_samples: 32,
            augment_flip: false,
            freeze_layers: false,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::Contract(msg)) };
        check(self.learning_rate > 0.0, format!("learning_rate {} must be positive", self.learning_rate))?;
        check(
            self.gate_learning_rate > 0.0,
            format!("gate_learning_rate {} must be positive", self.gate_learning_rate),
        )?;
        check(self.lambda >= 0.0, format!("lambda {} must be non-negative", self.lambda))?;
        check(
            self.alpha_init > 0.0 && self.alpha_init.is_finite(),
            format!("alpha_init {} must be positive", self.alpha_init),
        )?;
        check(self.batch_size >= 1, "batch_size must be at least 1".into())?;
        check(
            (0.0..1.0).contains(&self.dropout_rate),
            format!("dropout_rate {} outside [0, 1)", self.dropout_rate),
        )?;
        check(
            [self.adam_beta1, self.adam_beta2, self.gate_adam_beta2]
                .iter()
                .all(|b| (0.0..1.0).contains(b)),
            "ADAM decay rates must lie in [0, 1)".into(),
        )?;
        check(self.adam_eps > 0.0, "adam_eps must be positive".into())?;
        check(self.log_interval >= 1, "log_interval must be at least 1".into())?;
        check(self.loss_unit_mm > 0.0, "loss_unit_mm must be positive".into())?;
        check(
            (0.0..1.0).contains(&self.val_fraction),
            format!("val_fraction {} outside [0, 1)", self.val_fraction),
        )?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainConfig::default();
        c.validate().unwrap();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.lambda, 5e3);
        assert_eq!(c.alpha_init, 0.1);
    }

    #[test]
    fn invalid_values_rejected() {
        for c in [
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { lambda: -1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { dropout_rate: 1.0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Contract(_))));
        }
    }
}
