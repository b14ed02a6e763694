use super::camera::Camera;
use super::skeleton::SkeletonSpec;
use crate::tensor::Tensor;
use crate::{Error, Result};

/// Peak confidence of an occluded joint.
pub const OCCLUDED_PEAK: f64 = 0.3;

const LIMB_HALF_WIDTH: f64 = 0.6;
const DISC_RADIUS: f64 = 1.2;
/// Depth span (mm) mapped onto the full brightness range.
const DEPTH_SPAN: f64 = 1500.0;

/// One Gaussian channel per joint, `exp(−d²/(2σ²))` sampled at pixel
/// centres. Channels of joints inside the image are scaled so their largest
/// pixel is exactly 1; joints outside leave truncated, unscaled tails.
/// Occluded joints peak at [`OCCLUDED_PEAK`].
pub fn gaussian_cmaps(joints2d: &[[f64; 2]], height: usize, width: usize, sigma: f64, occluded: &[bool]) -> Result<Tensor> {
    if !(sigma > 0.0) {
        return Err(Error::contract(format!("confidence map sigma {sigma} must be positive")));
    }
    if occluded.len() != joints2d.len() {
        return Err(Error::dim(format!(
            "{} occlusion flags for {} joints",
            occluded.len(),
            joints2d.len()
        )));
    }
    let hw = height * width;
    let mut data = vec![0.0; joints2d.len() * hw];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (k, &[u, v]) in joints2d.iter().enumerate() {
        let ch = &mut data[k * hw..(k + 1) * hw];
        for row in 0..height {
            let dy = row as f64 + 0.5 - v;
            for col in 0..width {
                let dx = col as f64 + 0.5 - u;
                ch[row * width + col] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
        let inside = (0.0..width as f64).contains(&u) && (0.0..height as f64).contains(&v);
        let mut scale = if occluded[k] { OCCLUDED_PEAK } else { 1.0 };
        if inside {
            let max = ch.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                scale /= max;
            }
        }
        if scale != 1.0 {
            ch.iter_mut().for_each(|x| *x *= scale);
        }
    }
    Tensor::new(&[joints2d.len(), height, width], data)
}

/// Brightness for a camera-frame depth: linear, brighter when nearer.
pub fn depth_code(camera: &Camera, depth: f64) -> f64 {
    (0.55 - (depth - camera.depth_offset) / DEPTH_SPAN).clamp(0.1, 1.0)
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> (f64, f64) {
    let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
    let len2 = ex * ex + ey * ey;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * ex + (p[1] - a[1]) * ey) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (p[0] - a[0] - t * ex, p[1] - a[1] - t * ey);
    ((dx * dx + dy * dy).sqrt(), t)
}

/// Pixels whose centres lie within `reach` of the box spanned by `pts`.
fn pixel_box(pts: &[[f64; 2]], reach: f64, height: usize, width: usize) -> Option<(usize, usize, usize, usize)> {
    let lo = |i: usize| pts.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min) - reach - 0.5;
    let hi = |i: usize| pts.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max) + reach - 0.5;
    let (c0, c1, r0, r1) = (lo(0).ceil(), hi(0).floor(), lo(1).ceil(), hi(1).floor());
    if c1 < 0.0 || r1 < 0.0 || c0 >= width as f64 || r0 >= height as f64 || c0 > c1 || r0 > r1 {
        return None;
    }
    Some((
        c0.max(0.0) as usize,
        (c1 as usize).min(width - 1),
        r0.max(0.0) as usize,
        (r1 as usize).min(height - 1),
    ))
}

/// A three-channel depth-cue rendering: channel 0 holds the limbs as
/// anti-aliased segments, channel 1 a disc per joint whose brightness
/// encodes the joint's camera depth, channel 2 the limbs shaded by depth.
/// Overlaps keep the brighter value.
pub fn render_depth_cue_image(
    pose: &[f64],
    joints2d: &[[f64; 2]],
    camera: &Camera,
    skel: &SkeletonSpec,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let j = skel.joints();
    if pose.len() != 3 * j || joints2d.len() != j {
        return Err(Error::dim(format!(
            "pose of length {} and {} 2D joints for a {j}-joint skeleton",
            pose.len(),
            joints2d.len()
        )));
    }
    let hw = height * width;
    let mut data = vec![0.0f64; 3 * hw];
    let code: Vec<f64> = (0..j).map(|k| depth_code(camera, camera.depth(pose[3 * k + 2]))).collect();

    for (a, b) in skel.bones() {
        let (pa, pb) = (joints2d[a], joints2d[b]);
        let Some((c0, c1, r0, r1)) = pixel_box(&[pa, pb], LIMB_HALF_WIDTH + 0.5, height, width) else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (d, t) = segment_distance([col as f64 + 0.5, row as f64 + 0.5], pa, pb);
                let cov = (LIMB_HALF_WIDTH + 0.5 - d).clamp(0.0, 1.0);
                if cov == 0.0 {
                    continue;
                }
                let i = row * width + col;
                data[i] = data[i].max(cov);
                let shade = cov * ((1.0 - t) * code[a] + t * code[b]);
                data[2 * hw + i] = data[2 * hw + i].max(shade);
            }
        }
    }
    for (k, &p) in joints2d.iter().enumerate() {
        let Some((c0, c1, r0, r1)) = pixel_box(&[p], DISC_RADIUS + 0.5, height, width) else {
            continue;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let (d, _) = segment_distance([col as f64 + 0.5, row as f64 + 0.5], p, p);
                let cov = (DISC_RADIUS + 0.5 - d).clamp(0.0, 1.0);
                let i = hw + row * width + col;
                data[i] = data[i].max(cov * code[k]);
            }
        }
    }
    Tensor::new(&[3, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::camera::project;

    fn erf(x: f64) -> f64 {
        // Abramowitz–Stegun 7.1.26 is too coarse here; integrate instead.
        let n = 20_000;
        let h = x / n as f64;
        let f = |t: f64| (-t * t).exp();
        let mut s = f(0.0) + f(x);
        for i in 1..n {
            s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        s * h / 3.0 * 2.0 / std::f64::consts::PI.sqrt()
    }

    #[test]
    fn joint_at_pixel_centre_peaks_there() {
        let c = gaussian_cmaps(&[[10.5, 7.5]], 16, 16, 2.0, &[false]).unwrap();
        let d = c.data();
        assert_eq!(d[7 * 16 + 10], 1.0);
        assert!(d.iter().all(|&x| x <= 1.0));
    }

    #[test]
    fn narrow_gaussian_concentrates_in_3x3() {
        let sigma = 0.5;
        let c = gaussian_cmaps(&[[8.5, 8.5]], 17, 17, sigma, &[false]).unwrap();
        let d = c.data();
        let total: f64 = d.iter().sum();
        let inner: f64 = (7..=9).flat_map(|r| (7..=9).map(move |col| (r, col))).map(|(r, col)| d[r * 17 + col]).sum();
        assert!(inner / total >= 0.95, "sampled fraction {}", inner / total);
        // Continuous oracle: mass of the 2D Gaussian inside the 3×3 block.
        let axis = erf(1.5 / (sigma * 2f64.sqrt()));
        assert!(axis * axis >= 0.95);
        assert!((inner / total - axis * axis).abs() < 0.01);
    }

    #[test]
    fn occluded_joints_peak_at_point_three() {
        let joints = [[3.2, 4.9], [10.0, 1.0], [7.7, 12.1]];
        let c = gaussian_cmaps(&joints, 16, 16, 2.0, &[true; 3]).unwrap();
        for ch in c.data().chunks(256) {
            let max = ch.iter().copied().fold(0.0, f64::max);
            assert!((max - OCCLUDED_PEAK).abs() < 1e-15);
        }
    }

    #[test]
    fn off_image_joint_leaves_tail() {
        let c = gaussian_cmaps(&[[-3.0, 8.0]], 16, 16, 2.0, &[false]).unwrap();
        let max = c.data().iter().copied().fold(0.0, f64::max);
        assert!(max > 0.0 && max < 0.5);
        assert!(gaussian_cmaps(&[[0.0, 0.0]], 4, 4, 0.0, &[false]).is_err());
    }

    #[test]
    fn off_frame_pose_renders_black() {
        let skel = SkeletonSpec::h36m17();
        let cam = Camera::for_image(32, 32);
        let pose = skel.rest_pose();
        let far = vec![[-500.0, -500.0]; 17];
        let img = render_depth_cue_image(&pose, &far, &cam, &skel, 32, 32).unwrap();
        assert!(img.data().iter().all(|&x| x == 0.0));
        let uv = project(&pose, &cam).unwrap();
        let img = render_depth_cue_image(&pose, &uv, &cam, &skel, 32, 32).unwrap();
        assert!(img.data().iter().any(|&x| x > 0.5));
        assert!(img.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn nearer_joints_are_brighter() {
        let cam = Camera::for_image(64, 64);
        assert!(depth_code(&cam, 4000.0) > depth_code(&cam, 4500.0));
        assert!(depth_code(&cam, 4500.0) > depth_code(&cam, 5000.0));
        let a = depth_code(&cam, 4200.0) - depth_code(&cam, 4300.0);
        let b = depth_code(&cam, 4700.0) - depth_code(&cam, 4800.0);
        assert!((a - b).abs() < 1e-12);
    }
}
