use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use posefuse::baselines::{ambiguity_floor, compare_to_csv};
use posefuse::eval::{evaluate, pearson_r2, stream_features};
use posefuse::fusion::{gate_softness, Model, NetworkSpec};
use posefuse::synth::{read_corpus, write_corpus, Corpus, SkeletonSpec, TrainingSample};
use posefuse::train::{read_trace, split_dataset, trace_to_csv_with};
use posefuse::{fmt_sig, Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, Split};
use crate::CliError;

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> std::result::Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("the `--{flag}` option is required")))
}

fn out_dir(config: &RunConfig) -> Result<PathBuf> {
    let dir = config.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    fs::create_dir_all(&dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn spec_for(corpus: &Corpus, config: &RunConfig) -> NetworkSpec {
    let mut spec = NetworkSpec::desk_default(corpus.joints, corpus.height, corpus.width);
    spec.output_scale = config.output_scale;
    spec
}

fn metric_csv(rows: &[(&str, String)]) -> String {
    let mut out = String::from("metric,value\n");
    for (k, v) in rows {
        writeln!(out, "{k},{v}").unwrap();
    }
    out
}

pub fn synth(config: &RunConfig) -> std::result::Result<(), CliError> {
    let path = config.out.clone().unwrap_or_else(|| PathBuf::from("corpus.bin"));
    let corpus = Corpus::generate(config.seed, &config.synth)?;
    write_corpus(&path, &corpus)?;
    println!(
        "wrote {} samples ({} joints, {}x{}) to {}",
        corpus.samples.len(),
        corpus.joints,
        corpus.height,
        corpus.width,
        path.display()
    );
    Ok(())
}

pub fn train(config: &RunConfig) -> std::result::Result<(), CliError> {
    let corpus = read_corpus(required(&config.corpus, "corpus")?)?;
    let dir = out_dir(config)?;
    let spec = spec_for(&corpus, config);
    let train_config = config.train_config(Some(dir.clone()));
    let out = posefuse::train::train(&corpus.samples, &spec, &train_config)?;

    out.model.save(&dir.join("model"))?;
    write(&dir.join("trace.csv"), &trace_to_csv_with(&out.trace, spec.fusible_layers(), fmt_sig))?;
    write(&dir.join("config.txt"), &config.to_text())?;
    let schedule = out.schedule.expect("trainable gate");
    let softness = gate_softness(&out.model.weights().expect("gate weights"));
    let summary = metric_csv(&[
        ("steps", out.steps.to_string()),
        ("alpha", fmt_sig(schedule.alpha)),
        ("beta", fmt_sig(schedule.beta)),
        ("softness", fmt_sig(softness)),
        ("train_loss", fmt_sig(out.train_loss)),
        ("val_mpjpe_mm", fmt_sig(out.val_mpjpe)),
    ]);
    write(&dir.join("summary.csv"), &summary)?;
    print!("{summary}");
    Ok(())
}

fn scored_samples<'a>(corpus: &'a Corpus, config: &RunConfig) -> &'a [TrainingSample] {
    match config.split {
        Split::All => &corpus.samples,
        Split::Val => split_dataset(&corpus.samples, config.train.val_fraction).1,
    }
}

/// Header `j1_x,j1_y,j1_z,…`, then one row of `3J` values per sample.
pub fn predictions_to_csv(preds: &[Vec<f64>], joints: usize) -> String {
    let header: Vec<String> = (1..=joints)
        .flat_map(|j| ["x", "y", "z"].map(|c| format!("j{j}_{c}")))
        .collect();
    let mut out = header.join(",");
    out.push('\n');
    for p in preds {
        let row: Vec<String> = p.iter().map(|v| fmt_sig(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn predictions_from_csv(text: &str, joints: usize) -> Result<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format {
        offset: 0,
        message: "empty predictions file".into(),
    })?;
    let mut offset = header.len() as u64 + 1;
    let mut rows = Vec::new();
    for line in lines {
        let bad = |message: String| Error::Format { offset, message };
        let row = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("non-numeric value in `{line}`")))?;
        if row.len() != 3 * joints {
            return Err(bad(format!("{} values, expected {}", row.len(), 3 * joints)));
        }
        rows.push(row);
        offset += line.len() as u64 + 1;
    }
    Ok(rows)
}

pub fn eval(config: &RunConfig) -> std::result::Result<(), CliError> {
    let corpus = read_corpus(required(&config.corpus, "corpus")?)?;
    let samples = scored_samples(&corpus, config);
    let dir = out_dir(config)?;
    let preds = match (&config.checkpoint, &config.predictions) {
        (Some(ckpt), None) => {
            let model = Model::load(ckpt)?;
            let preds = samples
                .iter()
                .map(|s| model.predict(&s.image, &s.cmaps))
                .collect::<Result<Vec<_>>>()?;
            write(&dir.join("predictions.csv"), &predictions_to_csv(&preds, corpus.joints))?;
            preds
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            let preds = predictions_from_csv(&text, corpus.joints)?;
            if preds.len() != samples.len() {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("{} predictions for {} samples", preds.len(), samples.len()),
                }
                .into());
            }
            preds
        }
        _ => return Err(CliError::Usage("give exactly one of `--checkpoint` and `--predictions`".into())),
    };
    let gts: Vec<Vec<f64>> = samples.iter().map(|s| s.pose.clone()).collect();
    let report = evaluate(&preds, &gts, &SkeletonSpec::preset(corpus.joints)?)?;
    let csv = report.to_csv();
    write(&dir.join("metrics.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn prune(config: &RunConfig) -> std::result::Result<(), CliError> {
    let model = Model::load(required(&config.checkpoint, "checkpoint")?)?;
    let softness = model.weights().map(|w| gate_softness(&w));
    let pruned = model.prune(config.tolerance)?;
    let dir = out_dir(config)?;
    pruned.save(&dir.join("model"))?;

    let mut rows = vec![
        ("architecture", pruned.spec.architecture.to_string()),
        ("softness", softness.map(fmt_sig).unwrap_or_default()),
        ("params_before", model.params.scalar_count().to_string()),
        ("params_after", pruned.params.scalar_count().to_string()),
    ];
    if let Some(path) = &config.corpus {
        let corpus = read_corpus(path)?;
        let mut max_dev: f64 = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        let take = config.equivalence_samples.min(corpus.samples.len());
        for s in &corpus.samples[..take] {
            let a = model.predict(&s.image, &s.cmaps)?;
            let b = pruned.predict(&s.image, &s.cmaps)?;
            for (p, q) in a.iter().zip(&b) {
                max_dev = max_dev.max((p - q).abs());
                sum_sq += p * p;
                count += 1;
            }
        }
        rows.push(("samples_compared", take.to_string()));
        rows.push(("max_abs_deviation_mm", fmt_sig(max_dev)));
        rows.push(("rms_prediction_mm", fmt_sig((sum_sq / count.max(1) as f64).sqrt())));
    }
    let csv = metric_csv(&rows);
    write(&dir.join("equivalence.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn compare(config: &RunConfig) -> std::result::Result<(), CliError> {
    let corpus = read_corpus(required(&config.corpus, "corpus")?)?;
    let dir = out_dir(config)?;
    let spec = spec_for(&corpus, config);
    let rows = posefuse::baselines::compare(&corpus.samples, &config.kinds, &spec, &config.train_config(None))?;
    let csv = compare_to_csv(&rows);
    write(&dir.join("compare.csv"), &csv)?;
    print!("{csv}");
    let (_, val) = split_dataset(&corpus.samples, config.train.val_fraction);
    if let Some(floor) = ambiguity_floor(val)? {
        eprintln!("ambiguity floor for confidence-map-only predictors: {} mm", fmt_sig(floor));
    }
    Ok(())
}

pub fn analyze(config: &RunConfig) -> std::result::Result<(), CliError> {
    let model = Model::load(required(&config.checkpoint, "checkpoint")?)?;
    let corpus = read_corpus(required(&config.corpus, "corpus")?)?;
    let dir = out_dir(config)?;

    let mut order: Vec<usize> = (0..corpus.samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
    let picked: Vec<TrainingSample> = order
        .iter()
        .take(config.analysis_samples)
        .map(|&i| corpus.samples[i].clone())
        .collect();
    let (image, cmap) = stream_features(&model, &picked)?;
    let r2 = pearson_r2(&image, &cmap)?;
    let d1 = image.first().map_or(0, Vec::len);
    let header: Vec<String> = (1..=d1)
        .map(|i| format!("img{i}"))
        .chain((1..=r2.dim - d1).map(|i| format!("cm{i}")))
        .collect();
    write(&dir.join("r2.csv"), &format!("{}\n{}", header.join(","), r2.to_csv()))?;

    let block_mean = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, skip_diag: bool| {
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in rows {
            for j in cols.clone() {
                if !(skip_diag && i == j) {
                    sum += r2.get(i, j);
                    n += 1;
                }
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    };
    let summary = metric_csv(&[
        ("samples", picked.len().to_string()),
        ("image_features", d1.to_string()),
        ("cmap_features", (r2.dim - d1).to_string()),
        ("constant_features", r2.constant.len().to_string()),
        ("mean_r2_within_image", fmt_sig(block_mean(0..d1, 0..d1, true))),
        ("mean_r2_within_cmap", fmt_sig(block_mean(d1..r2.dim, d1..r2.dim, true))),
        ("mean_r2_across_streams", fmt_sig(block_mean(0..d1, d1..r2.dim, false))),
    ]);
    write(&dir.join("r2_summary.csv"), &summary)?;
    print!("{summary}");

    if let Some(path) = &config.trace {
        let rows = read_trace(path)?;
        let layers = rows.first().map_or(0, |r| r.weights.len());
        let mut out = String::from("step");
        for l in 1..=layers {
            write!(out, ",w{l}").unwrap();
        }
        out.push('\n');
        for r in &rows {
            out.push_str(&r.step.to_string());
            for w in &r.weights {
                write!(out, ",{}", fmt_sig(*w)).unwrap();
            }
            out.push('\n');
        }
        write(&dir.join("gate_weights.csv"), &out)?;
    }
    Ok(())
}
