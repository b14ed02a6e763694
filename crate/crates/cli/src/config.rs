//! Run configuration: every setting a command can take, with a lossless
//! `key = value` text form shared by config files and `--flag` arguments.

use std::path::PathBuf;

use posefuse::baselines::BaselineKind;
use posefuse::kv;
use posefuse::synth::SynthConfig;
use posefuse::train::TrainConfig;

/// Which corpus samples a command scores.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Val,
    All,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    /// `None` lets the command pick (`corpus.bin` for synth, `run` otherwise).
    pub out: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub synth: SynthConfig,
    /// `seed` and `checkpoint_dir` are filled in from the fields above.
    pub train: TrainConfig,
    pub output_scale: f64,
    pub tolerance: f64,
    pub kinds: Vec<BaselineKind>,
    pub split: Split,
    pub analysis_samples: usize,
    pub equivalence_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            out: None,
            corpus: None,
            checkpoint: None,
            predictions: None,
            trace: None,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
            output_scale: 100.0,
            tolerance: 0.05,
            kinds: BaselineKind::ALL.to_vec(),
            split: Split::Val,
            analysis_samples: 128,
            equivalence_samples: 32,
        }
    }
}

/// Key, help text. Order is the order of the text form.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "Random seed for corpus generation, initialisation, batching and dropout"),
    ("out", "Output path: corpus file for synth, directory for every other command"),
    ("corpus", "Corpus file written by synth"),
    ("checkpoint", "Checkpoint directory (holds topology.txt and params.bin)"),
    ("predictions", "Predictions CSV, one row of 3J coordinates per sample"),
    ("trace", "Training trace CSV to extract gate weights from"),
    ("samples", "Number of corpus samples"),
    ("joints", "Joints per pose (17, 15 or 14)"),
    ("height", "Image height in pixels"),
    ("width", "Image width in pixels"),
    ("sigma_px", "Confidence map Gaussian width in pixels"),
    ("occlusion_prob", "Probability that a joint is marked occluded"),
    ("mirrored_pairs", "Generate depth-mirrored pairs with identical confidence maps"),
    ("planar", "Restrict poses to planar motion"),
    ("noise_image", "Replace images with noise"),
    ("margin_px", "Minimum distance of every projected joint from the image border"),
    ("learning_rate", "ADAM step size for layer parameters"),
    ("gate_learning_rate", "ADAM step size for the gate's alpha and beta"),
    ("gate_adam_beta2", "ADAM second-moment decay for the gate"),
    ("lambda", "Weight of the sharpness penalty lambda / alpha^2"),
    ("alpha_init", "Initial gate sharpness"),
    ("beta_init", "Initial fusion layer, or `mid` for L/2"),
    ("epochs", "Training epochs"),
    ("batch_size", "Mini-batch size"),
    ("dropout_rate", "Dropout rate on fully connected layers"),
    ("adam_beta1", "ADAM first-moment decay"),
    ("adam_beta2", "ADAM second-moment decay for layer parameters"),
    ("adam_eps", "ADAM epsilon"),
    ("log_interval", "Steps between trace rows"),
    ("loss_unit_mm", "Millimetres per unit of the training residual"),
    ("val_fraction", "Fraction of the corpus held out for validation"),
    ("trace_val_samples", "Validation samples scored at each trace row"),
    ("augment_flip", "Randomly mirror training samples left to right"),
    ("freeze_layers", "Train only the gate"),
    ("output_scale", "Millimetres per unit of the network's raw output"),
    ("tolerance", "Largest min(w, 1 - w) that prune accepts"),
    ("kinds", "Comma-separated networks to compare"),
    ("split", "Samples to score: `val` or `all`"),
    ("analysis_samples", "Samples used for feature correlations"),
    ("equivalence_samples", "Samples used to compare pruned and unpruned predictions"),
];

/// Keys taking `true` or `false`; as flags they may be given bare.
pub const BOOL_KEYS: &[&str] = &["mirrored_pairs", "planar", "noise_image", "augment_flip", "freeze_layers"];

pub fn help_for(key: &str) -> &'static str {
    KEYS.iter().find(|(k, _)| *k == key).map(|(_, h)| *h).unwrap_or("")
}

fn path_text(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// The value of `key` in text form.
    pub fn get(&self, key: &str) -> Option<String> {
        let (s, t) = (&self.synth, &self.train);
        Some(match key {
            "seed" => self.seed.to_string(),
            "out" => path_text(&self.out),
            "corpus" => path_text(&self.corpus),
            "checkpoint" => path_text(&self.checkpoint),
            "predictions" => path_text(&self.predictions),
            "trace" => path_text(&self.trace),
            "samples" => s.samples.to_string(),
            "joints" => s.joints.to_string(),
            "height" => s.height.to_string(),
            "width" => s.width.to_string(),
            "sigma_px" => format!("{:?}", s.sigma_px),
            "occlusion_prob" => format!("{:?}", s.occlusion_prob),
            "mirrored_pairs" => s.mirrored_pairs.to_string(),
            "planar" => s.planar.to_string(),
            "noise_image" => s.noise_image.to_string(),
            "margin_px" => format!("{:?}", s.margin_px),
            "learning_rate" => format!("{:?}", t.learning_rate),
            "gate_learning_rate" => format!("{:?}", t.gate_learning_rate),
            "gate_adam_beta2" => format!("{:?}", t.gate_adam_beta2),
            "lambda" => format!("{:?}", t.lambda),
            "alpha_init" => format!("{:?}", t.alpha_init),
            "beta_init" => t.beta_init.map_or("mid".into(), |b| format!("{b:?}")),
            "epochs" => t.epochs.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "dropout_rate" => format!("{:?}", t.dropout_rate),
            "adam_beta1" => format!("{:?}", t.adam_beta1),
            "adam_beta2" => format!("{:?}", t.adam_beta2),
            "adam_eps" => format!("{:?}", t.adam_eps),
            "log_interval" => t.log_interval.to_string(),
            "loss_unit_mm" => format!("{:?}", t.loss_unit_mm),
            "val_fraction" => format!("{:?}", t.val_fraction),
            "trace_val_samples" => t.trace_val_samples.to_string(),
            "augment_flip" => t.augment_flip.to_string(),
            "freeze_layers" => t.freeze_layers.to_string(),
            "output_scale" => format!("{:?}", self.output_scale),
            "tolerance" => format!("{:?}", self.tolerance),
            "kinds" => self.kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(","),
            "split" => match self.split {
                Split::Val => "val".into(),
                Split::All => "all".into(),
            },
            "analysis_samples" => self.analysis_samples.to_string(),
            "equivalence_samples" => self.equivalence_samples.to_string(),
            _ => return None,
        })
    }

    /// Sets `key` from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let (s, t) = (&mut self.synth, &mut self.train);
        match key {
            "seed" => self.seed = parse(key, value)?,
            "out" => self.out = parse_path(value),
            "corpus" => self.corpus = parse_path(value),
            "checkpoint" => self.checkpoint = parse_path(value),
            "predictions" => self.predictions = parse_path(value),
            "trace" => self.trace = parse_path(value),
            "samples" => s.samples = parse(key, value)?,
            "joints" => s.joints = parse(key, value)?,
            "height" => s.height = parse(key, value)?,
            "width" => s.width = parse(key, value)?,
            "sigma_px" => s.sigma_px = parse(key, value)?,
            "occlusion_prob" => s.occlusion_prob = parse(key, value)?,
            "mirrored_pairs" => s.mirrored_pairs = parse(key, value)?,
            "planar" => s.planar = parse(key, value)?,
            "noise_image" => s.noise_image = parse(key, value)?,
            "margin_px" => s.margin_px = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "gate_learning_rate" => t.gate_learning_rate = parse(key, value)?,
            "gate_adam_beta2" => t.gate_adam_beta2 = parse(key, value)?,
            "lambda" => t.lambda = parse(key, value)?,
            "alpha_init" => t.alpha_init = parse(key, value)?,
            "beta_init" => t.beta_init = if value == "mid" { None } else { Some(parse(key, value)?) },
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "dropout_rate" => t.dropout_rate = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "log_interval" => t.log_interval = parse(key, value)?,
            "loss_unit_mm" => t.loss_unit_mm = parse(key, value)?,
            "val_fraction" => t.val_fraction = parse(key, value)?,
            "trace_val_samples" => t.trace_val_samples = parse(key, value)?,
            "augment_flip" => t.augment_flip = parse(key, value)?,
            "freeze_layers" => t.freeze_layers = parse(key, value)?,
            "output_scale" => self.output_scale = parse(key, value)?,
            "tolerance" => self.tolerance = parse(key, value)?,
            "kinds" => {
                self.kinds = value
                    .split(',')
                    .map(|k| k.trim().parse::<BaselineKind>().map_err(|e| e.to_string()))
                    .collect::<Result<_, _>>()?
            }
            "split" => {
                self.split = match value {
                    "val" => Split::Val,
                    "all" => Split::All,
                    _ => return Err(format!("invalid value `{value}` for `split`")),
                }
            }
            "analysis_samples" => self.analysis_samples = parse(key, value)?,
            "equivalence_samples" => self.equivalence_samples = parse(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Every key, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# posefuse run configuration\n");
        for (key, _) in KEYS {
            out.push_str(&format!("{key} = {}\n", self.get(key).expect("listed key")));
        }
        out
    }

    /// Defaults overridden by the keys present in `text`.
    pub fn from_text(text: &str) -> posefuse::Result<Self> {
        let mut config = Self::default();
        config.apply_text(text)?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> posefuse::Result<()> {
        for (key, value) in kv::parse(text)? {
            self.set(&key, &value).map_err(|message| posefuse::Error::Format { offset: 0, message })?;
        }
        Ok(())
    }

    /// Training settings with the run's seed and checkpoint directory.
    pub fn train_config(&self, checkpoint_dir: Option<PathBuf>) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            checkpoint_dir,
            ..self.train.clone()
        }
    }
}
