use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{adam_step, AdamState};
use super::config::TrainConfig;
use super::loss::{regularized_loss, square_loss};
use super::trace::TraceRow;
use crate::eval::mpjpe;
use crate::fusion::network::derive_seed;
use crate::fusion::params::ALPHA;
use crate::fusion::{forward, init_params, FusionSchedule, ForwardMode, Gate, Model, NetworkSpec};
use crate::synth::{SkeletonSpec, TrainingSample};
use crate::tensor::{Graph, Tensor};
use crate::{Error, Result};

/// Result of a training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    /// Final gate, for models with a sigmoid gate.
    pub schedule: Option<FusionSchedule>,
    pub trace: Vec<TraceRow>,
    /// Mean per-sample square loss over the last epoch, in squared loss units.
    pub train_loss: f64,
    /// MPJPE over the whole validation split (mm).
    pub val_mpjpe: f64,
    pub steps: usize,
}

/// Number of trailing samples held out for validation: `val_fraction` of the
/// corpus rounded to an even count so that mirrored pairs stay together.
pub fn validation_len(samples: usize, val_fraction: f64) -> usize {
    let n = ((samples as f64 * val_fraction).round() as usize) & !1;
    if n >= samples {
        0
    } else {
        n
    }
}

/// Splits `dataset` into training and validation parts.
pub fn split_dataset(dataset: &[TrainingSample], val_fraction: f64) -> (&[TrainingSample], &[TrainingSample]) {
    dataset.split_at(dataset.len() - validation_len(dataset.len(), val_fraction))
}

/// Initial gate of a fresh trainable network.
pub fn initial_schedule(spec: &NetworkSpec, config: &TrainConfig) -> FusionSchedule {
    let beta = config.beta_init.unwrap_or(spec.fusible_layers() as f64 / 2.0);
    FusionSchedule::new(config.alpha_init, beta)
}

/// Trains a three-stream network with a learned sigmoid gate from scratch.
pub fn train(dataset: &[TrainingSample], spec: &NetworkSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    let params = init_params(spec, &Gate::Sigmoid, initial_schedule(spec, config), derive_seed(&[config.seed, 0]))?;
    train_model(Model::new(spec.clone(), Gate::Sigmoid, params)?, dataset, config)
}

/// Eval-mode MPJPE of `model` on `samples`.
pub fn validation_mpjpe(model: &Model, samples: &[TrainingSample]) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for s in samples {
        total += mpjpe(&model.predict(&s.image, &s.cmaps)?, &s.pose)?;
    }
    Ok(total / samples.len() as f64)
}

/// Minimises the square loss, plus `λ·(B/N)/α²` per batch when the gate is
/// learned, by mini-batch ADAM. The batch order of every epoch, the dropout
/// masks and the flips are all keyed by `config.seed`.
pub fn train_model(model: Model, dataset: &[TrainingSample], config: &TrainConfig) -> Result<TrainOutcome> {
    train_model_with(model, dataset, config, &mut |_| {})
}

/// [`train_model`], calling `on_row` with each trace row as it is logged.
pub fn train_model_with(
    mut model: Model,
    dataset: &[TrainingSample],
    config: &TrainConfig,
    on_row: &mut dyn FnMut(&TraceRow),
) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::contract("training needs at least one sample"));
    }
    let spec = model.spec.clone();
    let layers = spec.fusible_layers();
    let (train_set, val_set) = split_dataset(dataset, config.val_fraction);
    let val_set = if val_set.is_empty() { train_set } else { val_set };
    let trace_val = &val_set[..config.trace_val_samples.clamp(1, val_set.len())];
    let skel = if config.augment_flip {
        Some(SkeletonSpec::preset(spec.joints)?)
    } else {
        None
    };

    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = config.epochs * batches_per_epoch;
    let trainable_gate = model.gate.is_trainable();
    let unit = 1.0 / config.loss_unit_mm;

    let mut state = AdamState::new();
    let mut trace = Vec::new();
    let mut last_good = model.params.clone();
    let mut epoch_loss = 0.0;
    let mut step = 0;

    let diverged = |step: usize, good: &crate::fusion::ParameterSet| -> Error {
        let checkpoint = config.checkpoint_dir.as_ref().and_then(|dir| {
            let path = dir.join("last_good");
            let m = Model::new(spec.clone(), model_gate(&spec, trainable_gate), good.clone()).ok()?;
            m.save(&path).ok()?;
            Some(path)
        });
        Error::Diverged { step, checkpoint }
    };

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, 1, epoch as u64])));
        epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let result = (|| -> Result<(f64, f64)> {
                let mut graph = Graph::new();
                let bound = model.params.bind(&mut graph, true);
                let mut preds = Vec::with_capacity(batch.len());
                let mut targets = Vec::with_capacity(batch.len());
                for &i in batch {
                    let key = [config.seed, 2, step as u64, i as u64];
                    let flipped;
                    let sample = match &skel {
                        Some(skel) if ChaCha8Rng::seed_from_u64(derive_seed(&key)).random_bool(0.5) => {
                            flipped = train_set[i].flipped(skel)?;
                            &flipped
                        }
                        _ => &train_set[i],
                    };
                    let image = graph.constant(&sample.image);
                    let cmaps = graph.constant(&sample.cmaps);
                    let mode = ForwardMode::train(config.dropout_rate, config.seed, step as u64, i as u64);
                    let out = forward(&mut graph, image, cmaps, &bound, &spec, &model.gate, &mode)?;
                    preds.push(graph.scale(out.pose, unit)?);
                    let target: Vec<f64> = sample.pose.iter().map(|x| x * unit).collect();
                    targets.push(graph.constant(&Tensor::vector(target)));
                }
                let data = square_loss(&mut graph, &preds, &targets)?;
                let data_value = graph.data(data)[0];
                let loss = if trainable_gate {
                    let lambda = config.lambda * batch.len() as f64 / n as f64;
                    regularized_loss(&mut graph, &preds, &targets, bound.get(ALPHA)?, lambda)?
                } else {
                    data
                };
                let loss_value = graph.data(loss)[0];
                if !loss_value.is_finite() {
                    return Err(Error::NonFinite("training loss".into()));
                }
                graph.backward(loss)?;
                model.params.zero_grads();
                model.params.accumulate_grads(&mut graph, &bound)?;
                drop(graph);
                adam_step(&mut model.params, &mut state, config, layers)?;
                if !model.params.is_finite() {
                    return Err(Error::NonFinite("parameters after update".into()));
                }
                Ok((loss_value, data_value))
            })();
            let (loss_value, data_value) = match result {
                Ok(v) => v,
                Err(Error::NonFinite(_)) => return Err(diverged(step, &last_good)),
                Err(e) => return Err(e),
            };
            model.params.zero_grads();
            epoch_loss += data_value;
            step += 1;
            if step % config.log_interval == 0 || step == total_steps {
                let row = trace_row(&model, step, loss_value, trace_val)?;
                on_row(&row);
                trace.push(row);
                last_good = model.params.clone();
            }
        }
    }

    let schedule = model.params.schedule();
    Ok(TrainOutcome {
        schedule,
        trace,
        train_loss: epoch_loss / n as f64,
        val_mpjpe: validation_mpjpe(&model, val_set)?,
        steps: step,
        model,
    })
}

fn model_gate(spec: &NetworkSpec, trainable: bool) -> Gate {
    if trainable {
        Gate::Sigmoid
    } else {
        Gate::Fixed(vec![0.0; spec.fusible_layers()])
    }
}

fn trace_row(model: &Model, step: usize, loss: f64, val: &[TrainingSample]) -> Result<TraceRow> {
    let (alpha, beta) = model
        .params
        .schedule()
        .map_or((f64::NAN, f64::NAN), |s| (s.alpha, s.beta));
    Ok(TraceRow {
        step,
        alpha,
        beta,
        weights: model.weights().unwrap_or_default(),
        loss,
        val_mpjpe: validation_mpjpe(model, val)?,
    })
}
