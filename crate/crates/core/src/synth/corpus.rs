use std::fs;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::camera::{project, Camera};
use super::render::{gaussian_cmaps, render_depth_cue_image};
use super::skeleton::{sample_pose, SkeletonSpec};
use crate::fusion::network::derive_seed;
use crate::tensor::Tensor;
use crate::{Error, Result};

const CORPUS_MAGIC: &[u8; 5] = b"FUSE1";
const HEADER_LEN: usize = 5 + 16;
/// Attempts per sample before generation gives up on the configuration.
const MAX_TRIES: usize = 10_000;

/// One training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// `[3, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    /// `[J, H, W]`, non-negative.
    pub cmaps: Tensor,
    /// `3J` root-relative millimetres.
    pub pose: Vec<f64>,
    /// Pixel coordinates of each joint.
    pub joints2d: Vec<[f64; 2]>,
}

impl TrainingSample {
    pub fn joints(&self) -> usize {
        self.joints2d.len()
    }

    /// Left-right mirror image: both input tensors are flipped horizontally,
    /// joint labels swapped via `skel.mirror` and `x` negated.
    pub fn flipped(&self, skel: &SkeletonSpec) -> Result<Self> {
        let j = self.joints();
        if skel.joints() != j {
            return Err(Error::dim(format!("{j}-joint sample with a {}-joint skeleton", skel.joints())));
        }
        let [_, h, w] = <[usize; 3]>::try_from(self.image.shape()).map_err(|_| Error::dim("image must be [3, H, W]"))?;
        let flip_maps = |t: &Tensor, relabel: bool| -> Result<Tensor> {
            let c = t.shape()[0];
            let src = t.data();
            let mut out = vec![0.0; src.len()];
            for ch in 0..c {
                let from = if relabel { skel.mirror[ch] } else { ch };
                for row in 0..h {
                    for col in 0..w {
                        out[(ch * h + row) * w + col] = src[(from * h + row) * w + (w - 1 - col)];
                    }
                }
            }
            Tensor::new(t.shape(), out)
        };
        let mut pose = vec![0.0; 3 * j];
        let mut joints2d = vec![[0.0; 2]; j];
        for k in 0..j {
            let m = skel.mirror[k];
            pose[3 * k] = -self.pose[3 * m];
            pose[3 * k + 1] = self.pose[3 * m + 1];
            pose[3 * k + 2] = self.pose[3 * m + 2];
            joints2d[k] = [w as f64 - self.joints2d[m][0], self.joints2d[m][1]];
        }
        Ok(Self {
            image: flip_maps(&self.image, false)?,
            cmaps: flip_maps(&self.cmaps, true)?,
            pose,
            joints2d,
        })
    }
}

/// Corpus generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub samples: usize,
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub sigma_px: f64,
    /// Probability that a joint's confidence map is rendered as occluded.
    pub occlusion_prob: f64,
    /// Emit consecutive pairs with identical 2D joints and confidence maps
    /// whose bones point the other way in depth.
    pub mirrored_pairs: bool,
    /// In-plane poses only, so the confidence maps determine the pose.
    pub planar: bool,
    /// Replace the rendered image by uniform noise.
    pub noise_image: bool,
    /// Keep every joint at least this many pixels inside the border.
    pub margin_px: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            samples: 2000,
            joints: 17,
            height: 64,
            width: 64,
            sigma_px: 2.0,
            occlusion_prob: 0.05,
            mirrored_pairs: true,
            planar: false,
            noise_image: false,
            margin_px: 1.0,
        }
    }
}

impl SynthConfig {
    pub fn skeleton(&self) -> Result<SkeletonSpec> {
        let s = SkeletonSpec::preset(self.joints)?;
        Ok(if self.planar { s.planar() } else { s })
    }

    pub fn camera(&self) -> Camera {
        Camera::for_image(self.height, self.width)
    }
}

/// The pose with the same 2D projection whose every bone has the other
/// depth orientation, keeping bone lengths: walking the tree from the root,
/// each joint moves to the second intersection of its viewing ray with the
/// sphere of the bone's length around its (already moved) parent. `None`
/// when some ray misses its sphere.
pub fn depth_mirrored(pose: &[f64], skel: &SkeletonSpec, camera: &Camera) -> Option<Vec<f64>> {
    let j = skel.joints();
    let cam = |k: usize| Vector3::new(pose[3 * k], pose[3 * k + 1], camera.depth(pose[3 * k + 2]));
    let mut twin = vec![Vector3::zeros(); j];
    twin[0] = cam(0);
    for (p, c) in skel.bones() {
        let orig = cam(c);
        let t_orig = orig.norm();
        let ray = orig / t_orig;
        let b = skel.bone_length(c);
        let q = twin[p];
        let proj = ray.dot(&q);
        let disc = proj * proj - q.norm_squared() + b * b;
        if disc < 0.0 {
            return None;
        }
        let s = disc.sqrt();
        let (t1, t2) = (proj - s, proj + s);
        let t = if (t1 - t_orig).abs() >= (t2 - t_orig).abs() { t1 } else { t2 };
        if !(t > 0.0) {
            return None;
        }
        twin[c] = ray * t;
    }
    let root = twin[0];
    Some(
        twin.iter()
            .flat_map(|v| [v.x - root.x, v.y - root.y, v.z - root.z])
            .collect(),
    )
}

fn quantize(t: Tensor) -> Tensor {
    let shape = t.shape().to_vec();
    let data = t.data().iter().map(|&x| x as f32 as f64).collect();
    Tensor::new(&shape, data).expect("same shape")
}

fn in_frame(uv: &[[f64; 2]], cfg: &SynthConfig) -> bool {
    let m = cfg.margin_px;
    uv.iter()
        .all(|&[u, v]| u >= m && u <= cfg.width as f64 - m && v >= m && v <= cfg.height as f64 - m)
}

fn build_sample(
    rng: &mut ChaCha8Rng,
    pose: Vec<f64>,
    joints2d: Vec<[f64; 2]>,
    cmaps: Tensor,
    cfg: &SynthConfig,
    skel: &SkeletonSpec,
    camera: &Camera,
) -> Result<TrainingSample> {
    let image = if cfg.noise_image {
        let n = 3 * cfg.height * cfg.width;
        Tensor::new(&[3, cfg.height, cfg.width], (0..n).map(|_| rng.random::<f64>()).collect())?
    } else {
        render_depth_cue_image(&pose, &joints2d, camera, skel, cfg.height, cfg.width)?
    };
    Ok(TrainingSample {
        image: quantize(image),
        cmaps,
        pose,
        joints2d,
    })
}

/// Samples for one generation unit: a depth-mirrored pair, or a single sample.
fn generate_unit(seed: u64, unit: usize, cfg: &SynthConfig, skel: &SkeletonSpec, camera: &Camera) -> Result<Vec<TrainingSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, unit as u64]));
    for _ in 0..MAX_TRIES {
        let pose = sample_pose(&mut rng, skel);
        let uv = project(&pose, camera)?;
        if !in_frame(&uv, cfg) {
            continue;
        }
        let twin = if cfg.mirrored_pairs {
            match depth_mirrored(&pose, skel, camera) {
                Some(t) => Some(t),
                None => continue,
            }
        } else {
            None
        };
        let occluded: Vec<bool> = (0..skel.joints()).map(|_| rng.random_bool(cfg.occlusion_prob)).collect();
        let cmaps = quantize(gaussian_cmaps(&uv, cfg.height, cfg.width, cfg.sigma_px, &occluded)?);
        let mut out = vec![build_sample(&mut rng, pose, uv.clone(), cmaps.clone(), cfg, skel, camera)?];
        if let Some(twin) = twin {
            out.push(build_sample(&mut rng, twin, uv, cmaps, cfg, skel, camera)?);
        }
        return Ok(out);
    }
    Err(Error::contract(format!(
        "no pose fits a {}x{} frame after {MAX_TRIES} attempts",
        cfg.width, cfg.height
    )))
}

/// A corpus that depends only on `(seed, cfg)`. With mirrored pairs,
/// samples `2k` and `2k + 1` form a pair.
pub fn generate_corpus(seed: u64, cfg: &SynthConfig) -> Result<Vec<TrainingSample>> {
    if !(cfg.sigma_px > 0.0) || cfg.height == 0 || cfg.width == 0 {
        return Err(Error::contract("corpus needs positive extents and sigma"));
    }
    if !(0.0..=1.0).contains(&cfg.occlusion_prob) {
        return Err(Error::contract("occlusion probability outside [0, 1]"));
    }
    let skel = cfg.skeleton()?;
    let camera = cfg.camera();
    let per_unit = if cfg.mirrored_pairs { 2 } else { 1 };
    let units = cfg.samples.div_ceil(per_unit);
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(units.max(1));
    let chunk = units.div_ceil(threads.max(1)).max(1);
    let parts: Vec<Result<Vec<TrainingSample>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..units)
            .step_by(chunk)
            .map(|start| {
                let (skel, camera) = (&skel, &camera);
                s.spawn(move || {
                    let mut v = Vec::new();
                    for u in start..(start + chunk).min(units) {
                        v.extend(generate_unit(seed, u, cfg, skel, camera)?);
                    }
                    Ok(v)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("generator thread panicked")).collect()
    });
    let mut samples = Vec::with_capacity(cfg.samples);
    for p in parts {
        samples.extend(p?);
    }
    samples.truncate(cfg.samples);
    Ok(samples)
}

/// Serialises a corpus. All samples must share `J`, `H` and `W`.
pub fn corpus_to_bytes(samples: &[TrainingSample], joints: usize, height: usize, width: usize) -> Result<Vec<u8>> {
    let hw = height * width;
    let per = 8 * (5 * joints) + 4 * (3 + joints) * hw;
    let mut out = Vec::with_capacity(HEADER_LEN + samples.len() * per);
    out.extend_from_slice(CORPUS_MAGIC);
    for v in [joints, height, width, samples.len()] {
        let v = u32::try_from(v).map_err(|_| Error::contract(format!("{v} does not fit the corpus header")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for (i, s) in samples.iter().enumerate() {
        if s.pose.len() != 3 * joints
            || s.joints2d.len() != joints
            || s.image.shape() != [3, height, width]
            || s.cmaps.shape() != [joints, height, width]
        {
            return Err(Error::dim(format!("sample {i} does not match the corpus extents")));
        }
        s.pose.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        s.joints2d.iter().flatten().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for t in [&s.image, &s.cmaps] {
            t.data().iter().for_each(|&x| out.extend_from_slice(&(x as f32).to_le_bytes()));
        }
    }
    Ok(out)
}

/// Header and samples of a corpus file.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub joints: usize,
    pub height: usize,
    pub width: usize,
    pub samples: Vec<TrainingSample>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        Ok(self
            .take(4 * n, what)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn corpus_from_bytes(bytes: &[u8]) -> Result<Corpus> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(5, "magic")? != CORPUS_MAGIC {
        return Err(Error::format(0, "bad magic, not a corpus file"));
    }
    let joints = r.u32("header")?;
    let height = r.u32("header")?;
    let width = r.u32("header")?;
    let count = r.u32("header")?;
    if joints == 0 || height == 0 || width == 0 {
        return Err(Error::format(5, format!("zero extent in header ({joints}, {height}, {width})")));
    }
    let hw = height * width;
    let mut samples = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let what = format!("sample {i}");
        let pose = r.f64s(3 * joints, &what)?;
        let flat = r.f64s(2 * joints, &what)?;
        let image = Tensor::new(&[3, height, width], r.f32s(3 * hw, &what)?)?;
        let cmaps = Tensor::new(&[joints, height, width], r.f32s(joints * hw, &what)?)?;
        samples.push(TrainingSample {
            image,
            cmaps,
            pose,
            joints2d: flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect(),
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos as u64, "trailing bytes after the last sample"));
    }
    Ok(Corpus {
        joints,
        height,
        width,
        samples,
    })
}

pub fn write_corpus(path: &Path, corpus: &Corpus) -> Result<()> {
    let bytes = corpus_to_bytes(&corpus.samples, corpus.joints, corpus.height, corpus.width)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    corpus_from_bytes(&bytes)
}

impl Corpus {
    pub fn generate(seed: u64, cfg: &SynthConfig) -> Result<Self> {
        Ok(Self {
            joints: cfg.joints,
            height: cfg.height,
            width: cfg.width,
            samples: generate_corpus(seed, cfg)?,
        })
    }
}
