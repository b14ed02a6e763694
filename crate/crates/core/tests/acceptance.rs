//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! The training criteria run the default configuration on the standard
//! synthetic corpus and take several minutes each on one core.

mod common;

use std::io::Write as _;
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{Matrix3, Rotation3, Unit, UnitQuaternion, Vector3};
use posefuse::baselines::{ambiguity_floor, train_baseline, BaselineKind};
use posefuse::eval::{mpjpe, pcp, pearson_r2, procrustes_align};
use posefuse::fusion::{
    fusion_weights, gate_softness, hard_gate, init_params, FusionSchedule, Gate, LayerSpec, Model, NetworkSpec,
    ParameterSet,
};
use posefuse::synth::{sample_pose, Corpus, SkeletonSpec, SynthConfig};
use posefuse::tensor::{Graph, Tensor};
use posefuse::train::{split_dataset, square_loss, train, trace_to_csv, TrainConfig, TrainOutcome};
use posefuse::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: String) -> Self {
        Self { pass, detail }
    }
}

fn report(failures: &mut usize, n: usize, title: &str, result: Result<Verdict>) {
    let v = result.unwrap_or_else(|e| Verdict::new(false, format!("error: {e}")));
    if !v.pass {
        *failures += 1;
    }
    println!("criterion {n} {title}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    std::io::stdout().flush().ok();
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn gradient_suite() -> Result<Verdict> {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let mut where_ = String::new();
    let mut checked = 0;
    let mut gate = true;
    for seed in 0..20 {
        let r = common::check_gradients(&common::micro_net(seed));
        checked += r.checked;
        gate &= r.gate_checked;
        if r.worst > worst {
            worst = r.worst;
            where_ = format!("{}[{}] of network {seed}", r.name, r.index);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    Ok(Verdict::new(
        worst < 1e-4 && gate && secs < 60.0,
        format!("{checked} gradients, worst relative error {worst:.2e} at {where_}, {secs:.1}s"),
    ))
}

fn gate_algebra() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    for case in 0..1000 {
        let layers = rng.random_range(1..=12usize);
        let alpha = 10f64.powf(rng.random_range(-3.0..3.0));

        let centre = rng.random_range(1..=layers);
        let w = fusion_weights(&FusionSchedule::new(alpha, centre as f64), layers)?;
        if (w[centre - 1] - 0.5).abs() > 1e-12 {
            failures.push(format!("case {case}: w_beta = {}", w[centre - 1]));
        }
        for d in 1..layers {
            if centre + d <= layers && centre > d {
                let s = w[centre + d - 1] + w[centre - d - 1];
                if (s - 1.0).abs() > 1e-12 {
                    failures.push(format!("case {case}: symmetry sum {s}"));
                }
            }
        }

        let beta = rng.random_range(0.0..=layers as f64);
        let w = fusion_weights(&FusionSchedule::new(alpha, beta), layers)?;
        if w.windows(2).any(|p| p[0] > p[1]) {
            failures.push(format!("case {case}: not monotone"));
        }

        // Keep beta away from integers: at l = beta the weight is 1/2.
        let beta = rng.random_range(0..layers) as f64 + rng.random_range(0.05..0.95);
        let w = fusion_weights(&FusionSchedule::new(1e3, beta), layers)?;
        for (i, &wl) in w.iter().enumerate() {
            let ind = if (i + 1) as f64 > beta { 1.0 } else { 0.0 };
            if (wl - ind).abs() >= 1e-9 {
                failures.push(format!("case {case}: |w - 1[l > beta]| = {}", (wl - ind).abs()));
            }
        }
    }
    Ok(Verdict::new(
        failures.is_empty(),
        match failures.first() {
            None => "1000 random (alpha, beta, L)".into(),
            Some(f) => format!("{} violations, first: {f}", failures.len()),
        },
    ))
}

/// The fusion stream alone, composed from graph operations.
fn standalone_fusion_stream(params: &ParameterSet, spec: &NetworkSpec, image: &Tensor, cmaps: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let param = |g: &mut Graph, name: String| g.constant(params.get(&name).expect("parameter present"));
    let i = g.constant(image);
    let x = g.constant(cmaps);
    let mut u = g.concat_channels(&[i, x])?;
    for (k, layer) in spec.fusion_layers.iter().enumerate() {
        let l = k + 1;
        u = match *layer {
            LayerSpec::Conv { stride, pad, .. } => {
                let w = param(&mut g, format!("fusion.{l}.weight"));
                let b = param(&mut g, format!("fusion.{l}.bias"));
                let y = g.conv2d(u, w, b, stride, pad)?;
                g.relu(y)?
            }
            LayerSpec::Pool { window, stride } => g.maxpool2d(u, window, stride)?,
            LayerSpec::Fc { units } => {
                let w = param(&mut g, format!("fusion.{l}.weight"));
                let b = param(&mut g, format!("fusion.{l}.bias"));
                let f = g.flatten(u)?;
                let y = g.linear(f, w, b)?;
                let y = g.relu(y)?;
                g.reshape(y, &[units, 1, 1])?
            }
        };
    }
    let w = param(&mut g, "head.weight".into());
    let b = param(&mut g, "head.bias".into());
    let f = g.flatten(u)?;
    let y = g.linear(f, w, b)?;
    let y = g.scale(y, spec.output_scale)?;
    Ok(g.data(y).to_vec())
}

fn equivalences() -> Result<Verdict> {
    let spec = NetworkSpec::with_data_layers(
        4,
        8,
        8,
        vec![LayerSpec::conv(3), LayerSpec::pool(2), LayerSpec::conv(4), LayerSpec::fc(6)],
    );
    let l = spec.fusible_layers();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = |rng: &mut ChaCha8Rng| {
        (
            common::random_tensor(rng, &[3, 8, 8], 0.0, 1.0),
            common::random_tensor(rng, &[4, 8, 8], 0.0, 1.0),
        )
    };

    let gate = Gate::Fixed(hard_gate(0, l)?);
    let params = init_params(&spec, &gate, FusionSchedule::new(1.0, 0.0), 31)?;
    let early = Model::new(spec.clone(), gate, params)?;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (i, x) = inputs(&mut rng);
        let a = early.predict(&i, &x)?;
        let b = standalone_fusion_stream(&early.params, &spec, &i, &x)?;
        worst = a.iter().zip(&b).fold(worst, |m, (p, q)| m.max((p - q).abs()));
    }

    let mut mismatches = 0;
    for split in 0..=l {
        let gate = Gate::Fixed(hard_gate(split, l)?);
        let params = init_params(&spec, &gate, FusionSchedule::new(1.0, 0.0), 40 + split as u64)?;
        let full = Model::new(spec.clone(), gate, params)?;
        let pruned = full.prune(1e-12)?;
        for _ in 0..100 {
            let (i, x) = inputs(&mut rng);
            let a = full.predict(&i, &x)?;
            let b = pruned.predict(&i, &x)?;
            if a.iter().zip(&b).any(|(p, q)| p.to_bits() != q.to_bits()) {
                mismatches += 1;
            }
        }
    }
    Ok(Verdict::new(
        worst <= 1e-12 && mismatches == 0,
        format!(
            "early fusion vs standalone fusion stream max diff {worst:.1e}; {mismatches} of {} pruned forwards differ",
            100 * (l + 1)
        ),
    ))
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn points(pose: &[f64]) -> Vec<Vector3<f64>> {
    pose.chunks_exact(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect()
}

/// Least-squares similarity for a fixed rotation: optimal non-negative
/// scale and translation in closed form. Returns the squared error and the
/// aligned pose.
fn fit_given_rotation(r: &Matrix3<f64>, x: &[Vector3<f64>], y: &[Vector3<f64>]) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / n;
    let my = y.iter().sum::<Vector3<f64>>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (r * (a - mx)).dot(&(b - my));
        den += (a - mx).norm_squared();
    }
    let s = (num / den).max(0.0);
    let mut err = 0.0;
    let mut aligned = Vec::with_capacity(3 * x.len());
    for (a, b) in x.iter().zip(y) {
        let p = s * (r * (a - mx)) + my;
        err += (p - b).norm_squared();
        aligned.extend([p.x, p.y, p.z]);
    }
    (err, aligned)
}

/// Dense sampling of rotations followed by a shrinking pattern search.
fn rotation_search(pred: &[f64], gt: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (x, y) = (points(pred), points(gt));
    let cost = |q: &UnitQuaternion<f64>| fit_given_rotation(q.to_rotation_matrix().matrix(), &x, &y).0;
    let mut best = UnitQuaternion::identity();
    let mut best_cost = cost(&best);
    for _ in 0..4000 {
        let v = nalgebra::Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::from(v));
        let c = cost(&q);
        if c < best_cost {
            best = q;
            best_cost = c;
        }
    }
    let axes = [Vector3::x_axis(), Vector3::y_axis(), Vector3::z_axis()];
    let mut step = 0.1;
    while step > 1e-13 {
        let mut improved = false;
        for axis in &axes {
            for sign in [1.0, -1.0] {
                let q = UnitQuaternion::from_axis_angle(axis, sign * step) * best;
                let c = cost(&q);
                if c < best_cost {
                    best = q;
                    best_cost = c;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    fit_given_rotation(best.to_rotation_matrix().matrix(), &x, &y).1
}

fn metric_oracles() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut bad = Vec::new();

    for case in 0..100 {
        let j = rng.random_range(1..=20);
        let (p, g) = (normal_vec(&mut rng, 3 * j, 300.0), normal_vec(&mut rng, 3 * j, 300.0));
        let oracle = (0..j)
            .map(|k| ((0..3).map(|c| (p[3 * k + c] - g[3 * k + c]).powi(2)).sum::<f64>()).sqrt())
            .sum::<f64>()
            / j as f64;
        if !close(mpjpe(&p, &g)?, oracle, 1e-12) {
            bad.push(format!("mpjpe case {case}"));
        }
    }

    let skel = SkeletonSpec::h36m17();
    for case in 0..100 {
        let n = rng.random_range(1..=8);
        let gts: Vec<Vec<f64>> = (0..n).map(|_| sample_pose(&mut rng, &skel)).collect();
        let preds: Vec<Vec<f64>> = gts
            .iter()
            .map(|g| g.iter().map(|v| v + rng.random_range(-150.0..150.0)).collect())
            .collect();
        let score = pcp(&preds, &gts, &skel, 0.5)?;
        let (mut hit_all, mut count_all) = (0usize, 0usize);
        for (name, a, b) in &skel.parts {
            let (mut hit, mut count) = (0usize, 0usize);
            for (p, g) in preds.iter().zip(&gts) {
                let d = |u: &[f64], v: &[f64], i: usize, k: usize| {
                    ((0..3).map(|c| (u[3 * i + c] - v[3 * k + c]).powi(2)).sum::<f64>()).sqrt()
                };
                let len = d(g, g, *a, *b);
                if len == 0.0 {
                    continue;
                }
                count += 1;
                if d(p, g, *a, *a) <= 0.5 * len && d(p, g, *b, *b) <= 0.5 * len {
                    hit += 1;
                }
            }
            hit_all += hit;
            count_all += count;
            let got = score.per_part.iter().find(|(n, _)| n == name).map(|x| x.1);
            if got.map_or(true, |v| !close(v, hit as f64 / count as f64, 1e-12)) {
                bad.push(format!("pcp case {case} part {name}"));
            }
        }
        if !close(score.all, hit_all as f64 / count_all as f64, 1e-12) {
            bad.push(format!("pcp case {case} overall"));
        }
    }

    for case in 0..100 {
        let b = rng.random_range(1..=6);
        let d = rng.random_range(1..=40);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..b).map(|_| (normal_vec(&mut rng, d, 1.0), normal_vec(&mut rng, d, 1.0))).collect();
        let mut g = Graph::new();
        let preds: Vec<_> = pairs.iter().map(|(p, _)| g.constant(&Tensor::vector(p.clone()))).collect();
        let targets: Vec<_> = pairs.iter().map(|(_, t)| g.constant(&Tensor::vector(t.clone()))).collect();
        let loss = square_loss(&mut g, &preds, &targets)?;
        let mut oracle = 0.0;
        for (p, t) in &pairs {
            for k in 0..d {
                oracle += (p[k] - t[k]) * (p[k] - t[k]);
            }
        }
        if !close(g.data(loss)[0], oracle, 1e-12) {
            bad.push(format!("square_loss case {case}"));
        }
    }

    for case in 0..100 {
        let n = rng.random_range(3..=60);
        let (d1, d2) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let a: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, d1, 1.0)).collect();
        let mut b: Vec<Vec<f64>> = (0..n).map(|_| normal_vec(&mut rng, d2, 1.0)).collect();
        // Correlate one output with the inputs so large R² values occur.
        for (ra, rb) in a.iter().zip(b.iter_mut()) {
            rb[0] += 2.0 * ra[0];
        }
        let m = pearson_r2(&a, &b)?;
        let col = |f: usize| -> Vec<f64> { (0..n).map(|s| if f < d1 { a[s][f] } else { b[s][f - d1] }).collect() };
        for i in 0..d1 + d2 {
            for j in 0..d1 + d2 {
                let (x, y) = (col(i), col(j));
                let (mx, my) = (x.iter().sum::<f64>() / n as f64, y.iter().sum::<f64>() / n as f64);
                let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
                for s in 0..n {
                    sxy += (x[s] - mx) * (y[s] - my);
                    sxx += (x[s] - mx) * (x[s] - mx);
                    syy += (y[s] - my) * (y[s] - my);
                }
                let r2 = sxy * sxy / (sxx * syy);
                if !close(m.get(i, j), r2, 1e-12) {
                    bad.push(format!("pearson_r2 case {case} ({i}, {j})"));
                }
            }
        }
    }

    let mut worst_search = 0.0f64;
    let mut worst_recovery = 0.0f64;
    for case in 0..100 {
        let j = rng.random_range(4..=17);
        let gt = normal_vec(&mut rng, 3 * j, 1.0);
        let axis = Unit::new_normalize(Vector3::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal)));
        let rot = Rotation3::from_axis_angle(&axis, rng.random_range(-3.1..3.1));
        let scale = rng.random_range(0.5..2.0);
        let shift = Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0));
        let moved: Vec<f64> = points(&gt)
            .iter()
            .flat_map(|p| {
                let v = scale * (rot * p) + shift;
                [v.x, v.y, v.z]
            })
            .collect();
        worst_recovery = worst_recovery.max(procrustes_align(&moved, &gt)?.1);

        let noisy: Vec<f64> = moved.iter().map(|v| v + 0.2 * rng.sample::<f64, _>(StandardNormal)).collect();
        let (_, residual) = procrustes_align(&noisy, &gt)?;
        let oracle = mpjpe(&rotation_search(&noisy, &gt, &mut rng), &gt)?;
        let diff = (residual - oracle).abs();
        if diff > worst_search {
            worst_search = diff;
        }
        if diff > 1e-6 {
            bad.push(format!("procrustes case {case}: {residual} vs search {oracle}"));
        }
    }
    if worst_recovery >= 1e-9 {
        bad.push(format!("procrustes recovery residual {worst_recovery:e}"));
    }
    Ok(Verdict::new(
        bad.is_empty(),
        format!(
            "{} mismatches{}; procrustes vs rotation search {worst_search:.1e}, recovery residual {worst_recovery:.1e}",
            bad.len(),
            bad.first().map(|b| format!(", first: {b}")).unwrap_or_default()
        ),
    ))
}

struct Run {
    outcome: TrainOutcome,
    csv: String,
    secs: f64,
}

fn default_run(config: &TrainConfig) -> Result<(Corpus, Run)> {
    let t = Instant::now();
    let corpus = Corpus::generate(7, &SynthConfig::default())?;
    let spec = NetworkSpec::desk_default(corpus.joints, corpus.height, corpus.width);
    let outcome = train(&corpus.samples, &spec, config)?;
    let csv = trace_to_csv(&outcome.trace, spec.fusible_layers());
    let secs = t.elapsed().as_secs_f64();
    Ok((corpus, Run { outcome, csv, secs }))
}

fn gate_sharpening(run: &Run, config: &TrainConfig) -> Result<Verdict> {
    let schedule = run.outcome.schedule.expect("trainable gate");
    let w = run.outcome.model.weights().expect("gate weights");
    let softness = gate_softness(&w);
    let ratio = schedule.alpha / config.alpha_init;
    Ok(Verdict::new(
        ratio >= 5.0 && softness < 0.05 && run.secs < 600.0,
        format!(
            "alpha {:.3} = {ratio:.1} x alpha0, beta {:.3}, softness {softness:.2e}, val MPJPE {:.1} mm, {} steps, {:.0}s",
            schedule.alpha, schedule.beta, run.outcome.val_mpjpe, run.outcome.steps, run.secs
        ),
    ))
}

fn input_comparison(corpus: &Corpus, run: &Run, config: &TrainConfig) -> Result<Verdict> {
    let t = Instant::now();
    let spec = NetworkSpec::desk_default(corpus.joints, corpus.height, corpus.width);
    let (_, val) = split_dataset(&corpus.samples, config.val_fraction);
    let floor = ambiguity_floor(val)?.unwrap_or(0.0);
    let image = train_baseline(BaselineKind::ImageOnly, &corpus.samples, &spec, config)?.val_mpjpe;
    let cm = train_baseline(BaselineKind::CmOnly, &corpus.samples, &spec, config)?.val_mpjpe;
    let trainable = run.outcome.val_mpjpe;
    let secs = run.secs + t.elapsed().as_secs_f64();
    Ok(Verdict::new(
        trainable < image.min(cm) && cm >= 0.9 * floor && secs < 1800.0,
        format!(
            "val MPJPE trainable {trainable:.1}, image only {image:.1}, cm only {cm:.1}; ambiguity floor {floor:.1} mm; {secs:.0}s"
        ),
    ))
}

fn time_predictions(model: &Model, corpus: &Corpus) -> Result<f64> {
    let mut best = f64::INFINITY;
    for _ in 0..3 {
        let t = Instant::now();
        for s in corpus.samples.iter().take(100) {
            std::hint::black_box(model.predict(&s.image, &s.cmaps)?);
        }
        best = best.min(t.elapsed().as_secs_f64());
    }
    Ok(best)
}

fn ablation_and_pruning(corpus: &Corpus, run: &Run, config: &TrainConfig) -> Result<Verdict> {
    let spec = NetworkSpec::desk_default(corpus.joints, corpus.height, corpus.width);
    let unregularized = train(&corpus.samples, &spec, &TrainConfig { lambda: 0.0, ..config.clone() })?;
    let soft = gate_softness(&unregularized.model.weights().expect("gate weights"));

    let full = &run.outcome.model;
    let pruned = full.prune(0.05)?;
    let (t_full, t_pruned) = (time_predictions(full, corpus)?, time_predictions(&pruned, corpus)?);
    let speedup = t_full / t_pruned;
    Ok(Verdict::new(
        soft > 0.2 && speedup >= 1.3,
        format!(
            "lambda = 0 softness {soft:.3} (alpha {:.4}); pruned {} speedup {speedup:.2}x, {} vs {} parameters",
            unregularized.schedule.expect("trainable gate").alpha,
            pruned.spec.architecture,
            pruned.params.scalar_count(),
            full.params.scalar_count()
        ),
    ))
}

fn main() -> ExitCode {
    let mut failures = 0;
    report(&mut failures, 1, "gradient suite", gradient_suite());
    report(&mut failures, 2, "gate algebra", gate_algebra());
    report(&mut failures, 3, "architectural equivalences", equivalences());
    report(&mut failures, 7, "metric oracles", metric_oracles());

    let config = TrainConfig::default();
    match default_run(&config) {
        Ok((corpus, run)) => {
            report(&mut failures, 4, "gate sharpening", gate_sharpening(&run, &config));
            report(&mut failures, 5, "input comparison", input_comparison(&corpus, &run, &config));
            report(&mut failures, 6, "ablation and pruning", ablation_and_pruning(&corpus, &run, &config));
            let repeat = default_run(&config).map(|(_, again)| {
                Verdict::new(
                    again.csv.as_bytes() == run.csv.as_bytes(),
                    format!("{} trace rows, {} bytes", run.outcome.trace.len(), run.csv.len()),
                )
            });
            report(&mut failures, 8, "determinism", repeat);
        }
        Err(e) => {
            for (n, title) in [(4, "gate sharpening"), (5, "input comparison"), (6, "ablation and pruning"), (8, "determinism")] {
                report(&mut failures, n, title, Err(posefuse::Error::Contract(format!("default run failed: {e}"))));
            }
        }
    }

    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
