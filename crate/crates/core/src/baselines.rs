//! Comparison networks: single-stream regressors and fixed early/late fusion.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::eval::mpjpe;
use crate::fusion::network::derive_seed;
use crate::fusion::{hard_gate, init_params, Architecture, FusionSchedule, Gate, Model, NetworkSpec, StreamInput};
use crate::synth::TrainingSample;
use crate::train::{initial_schedule, train_model, TrainConfig, TrainOutcome};
use crate::{fmt_sig, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BaselineKind {
    ImageOnly,
    CmOnly,
    EarlyFusion,
    LateFusion,
    Trainable,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 5] = [
        BaselineKind::ImageOnly,
        BaselineKind::CmOnly,
        BaselineKind::EarlyFusion,
        BaselineKind::LateFusion,
        BaselineKind::Trainable,
    ];
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::ImageOnly => "image_only",
            BaselineKind::CmOnly => "cm_only",
            BaselineKind::EarlyFusion => "early",
            BaselineKind::LateFusion => "late",
            BaselineKind::Trainable => "trainable",
        })
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s)
            .ok_or_else(|| Error::contract(format!("unknown baseline `{s}`")))
    }
}

/// A freshly initialised network of the given kind. Single-stream kinds run
/// one data stream followed by the fusion stream's fully connected layers;
/// early and late fusion are the three-stream network with the hard gate at
/// `0` and at `L`.
pub fn build_baseline(kind: BaselineKind, spec: &NetworkSpec, schedule: FusionSchedule, seed: u64) -> Result<Model> {
    let l = spec.fusible_layers();
    let mut spec = spec.clone();
    let gate = match kind {
        BaselineKind::ImageOnly | BaselineKind::CmOnly => {
            let input = if kind == BaselineKind::ImageOnly { StreamInput::Image } else { StreamInput::Cmaps };
            spec.architecture = Architecture::SingleStream(input);
            Gate::Fixed(Vec::new())
        }
        BaselineKind::EarlyFusion => {
            spec.architecture = Architecture::ThreeStream;
            Gate::Fixed(hard_gate(0, l)?)
        }
        BaselineKind::LateFusion => {
            spec.architecture = Architecture::ThreeStream;
            Gate::Fixed(hard_gate(l, l)?)
        }
        BaselineKind::Trainable => {
            spec.architecture = Architecture::ThreeStream;
            Gate::Sigmoid
        }
    };
    let params = init_params(&spec, &gate, schedule, seed)?;
    Model::new(spec, gate, params)
}

/// One line of the comparison table.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub kind: BaselineKind,
    pub val_mpjpe: f64,
    pub train_loss: f64,
    pub params_count: usize,
}

pub fn compare_to_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("kind,val_mpjpe,train_loss,params_count\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.kind,
            fmt_sig(r.val_mpjpe),
            fmt_sig(r.train_loss),
            r.params_count
        )
        .unwrap();
    }
    out
}

/// Trains one kind under `config`. Networks with a binary gate are pruned
/// before training: the removed layers receive no gradient, so this changes
/// only the cost.
pub fn train_baseline(kind: BaselineKind, corpus: &[TrainingSample], spec: &NetworkSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = build_baseline(kind, spec, initial_schedule(spec, config), derive_seed(&[config.seed, 0]))?;
    if matches!(kind, BaselineKind::EarlyFusion | BaselineKind::LateFusion) {
        model = model.prune(0.5)?;
    }
    train_model(model, corpus, config)
}

/// Trains every kind on the same corpus, seed and budget.
pub fn compare(corpus: &[TrainingSample], kinds: &[BaselineKind], spec: &NetworkSpec, config: &TrainConfig) -> Result<Vec<CompareRow>> {
    kinds
        .iter()
        .map(|&kind| {
            let out = train_baseline(kind, corpus, spec, config)?;
            Ok(CompareRow {
                kind,
                val_mpjpe: out.val_mpjpe,
                train_loss: out.train_loss,
                params_count: out.model.params.layer_scalar_count(),
            })
        })
        .collect()
}

/// Lower bound on the mean MPJPE of any predictor that sees only the
/// confidence maps. Consecutive samples `2k, 2k + 1` with identical maps get
/// identical predictions `f`, and per joint `|f − p| + |f − p'| ≥ |p − p'|`,
/// so the pair contributes at least `mpjpe(p, p')` to the error sum.
/// Returns `None` when `samples` holds no such pair.
pub fn ambiguity_floor(samples: &[TrainingSample]) -> Result<Option<f64>> {
    let mut sum = 0.0;
    let mut pairs = 0;
    for pair in samples.chunks_exact(2) {
        if pair[0].cmaps == pair[1].cmaps {
            sum += mpjpe(&pair[0].pose, &pair[1].pose)?;
            pairs += 1;
        }
    }
    Ok((pairs > 0).then(|| sum / samples.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::LayerSpec;
    use crate::synth::{generate_corpus, SynthConfig};
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec() -> NetworkSpec {
        NetworkSpec::with_data_layers(4, 8, 8, vec![LayerSpec::conv(2), LayerSpec::pool(2), LayerSpec::fc(6)])
    }

    fn input(seed: u64, channels: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(&[channels, 8, 8], (0..channels * 64).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn names_round_trip() {
        for k in BaselineKind::ALL {
            assert_eq!(k.to_string().parse::<BaselineKind>().unwrap(), k);
        }
        assert!("both".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn image_only_ignores_cmaps() {
        let m = build_baseline(BaselineKind::ImageOnly, &spec(), FusionSchedule::new(0.1, 1.5), 3).unwrap();
        let img = input(1, 3);
        let a = m.predict(&img, &input(2, 4)).unwrap();
        let b = m.predict(&img, &input(3, 4)).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn fixed_gates() {
        let late = build_baseline(BaselineKind::LateFusion, &spec(), FusionSchedule::new(0.1, 1.5), 3).unwrap();
        assert_eq!(late.weights().unwrap(), vec![0.0; 3]);
        let early = build_baseline(BaselineKind::EarlyFusion, &spec(), FusionSchedule::new(0.1, 1.5), 3).unwrap();
        assert_eq!(early.weights().unwrap(), vec![1.0; 3]);
        let t = build_baseline(BaselineKind::Trainable, &spec(), FusionSchedule::new(0.1, 1.5), 3).unwrap();
        assert_eq!(t.params.schedule().unwrap(), FusionSchedule::new(0.1, 1.5));
    }

    #[test]
    fn early_fusion_equals_saturated_trainable_gate() {
        // Same seed, same layer weights; a sigmoid gate with beta = 0 and a
        // huge alpha is numerically the all-ones gate.
        let s = FusionSchedule::new(1e6, 0.0);
        let early = build_baseline(BaselineKind::EarlyFusion, &spec(), s, 5).unwrap();
        let trainable = build_baseline(BaselineKind::Trainable, &spec(), s, 5).unwrap();
        for k in 0..5 {
            let (i, x) = (input(10 + k, 3), input(20 + k, 4));
            assert_eq!(early.predict(&i, &x).unwrap(), trainable.predict(&i, &x).unwrap());
        }
    }

    #[test]
    fn floor_of_mirrored_corpus() {
        let cfg = SynthConfig {
            samples: 20,
            height: 32,
            width: 32,
            ..SynthConfig::default()
        };
        let corpus = generate_corpus(1, &cfg).unwrap();
        let floor = ambiguity_floor(&corpus).unwrap().unwrap();
        let oracle: f64 = corpus
            .chunks(2)
            .map(|p| (0..17).map(|k| {
                let d: f64 = (0..3).map(|c| (p[0].pose[3 * k + c] - p[1].pose[3 * k + c]).powi(2)).sum();
                d.sqrt()
            }).sum::<f64>() / 17.0 / 2.0)
            .sum::<f64>() / 10.0;
        assert!((floor - oracle).abs() < 1e-9);
        assert!(floor > 0.0);
        // The best cmap-only answer for a pair, its midpoint, attains the bound.
        let mid: Vec<Vec<f64>> = corpus
            .chunks(2)
            .flat_map(|p| {
                let m: Vec<f64> = p[0].pose.iter().zip(&p[1].pose).map(|(a, b)| (a + b) / 2.0).collect();
                [m.clone(), m]
            })
            .collect();
        let err: f64 = mid.iter().zip(&corpus).map(|(m, s)| mpjpe(m, &s.pose).unwrap()).sum::<f64>() / 20.0;
        assert!((err - floor).abs() < 1e-9);

        let cfg = SynthConfig { mirrored_pairs: false, ..cfg };
        assert_eq!(ambiguity_floor(&generate_corpus(1, &cfg).unwrap()).unwrap(), None);
    }

    #[test]
    fn table_has_header_and_rows() {
        let rows = vec![CompareRow {
            kind: BaselineKind::CmOnly,
            val_mpjpe: 123.4567891,
            train_loss: 0.5,
            params_count: 42,
        }];
        assert_eq!(compare_to_csv(&rows), "kind,val_mpjpe,train_loss,params_count\ncm_only,123.457,0.5,42\n");
    }
}
