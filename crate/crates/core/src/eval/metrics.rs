use nalgebra::{Matrix3, Vector3};

use crate::synth::skeleton::{dist, joint, SkeletonSpec};
use crate::{Error, Result};

fn check_pair(pred: &[f64], gt: &[f64]) -> Result<usize> {
    if pred.len() != gt.len() || gt.len() % 3 != 0 || gt.is_empty() {
        return Err(Error::dim(format!(
            "poses of length {} and {} are not both 3J",
            pred.len(),
            gt.len()
        )));
    }
    Ok(gt.len() / 3)
}

/// Mean per-joint Euclidean distance.
pub fn mpjpe(pred: &[f64], gt: &[f64]) -> Result<f64> {
    let j = check_pair(pred, gt)?;
    Ok((0..j).map(|k| dist(joint(pred, k), joint(gt, k))).sum::<f64>() / j as f64)
}

/// Mean [`mpjpe`] over a set of poses.
pub fn mean_mpjpe(preds: &[Vec<f64>], gts: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::dim(format!("{} predictions for {} poses", preds.len(), gts.len())));
    }
    let mut total = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        total += mpjpe(p, g)?;
    }
    Ok(total / preds.len() as f64)
}

/// A similarity transform `x ↦ s·R·x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl Similarity {
    pub fn apply(&self, pose: &[f64]) -> Vec<f64> {
        pose.chunks_exact(3)
            .flat_map(|p| {
                let v = self.scale * (self.rotation * Vector3::new(p[0], p[1], p[2])) + self.translation;
                [v.x, v.y, v.z]
            })
            .collect()
    }
}

fn points(pose: &[f64]) -> Vec<Vector3<f64>> {
    pose.chunks_exact(3).map(|p| Vector3::new(p[0], p[1], p[2])).collect()
}

fn centred(pts: &[Vector3<f64>]) -> (Vector3<f64>, Vec<Vector3<f64>>) {
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    (mean, pts.iter().map(|p| p - mean).collect())
}

/// The similarity transform of `pred` onto `gt` with least squared error:
/// rotation from the SVD of the cross-covariance, with the smallest singular
/// direction's sign flipped if needed to keep `det R = +1`.
pub fn procrustes_transform(pred: &[f64], gt: &[f64]) -> Result<Similarity> {
    let j = check_pair(pred, gt)?;
    if j < 3 {
        return Err(Error::Alignment(format!("{j} joints are too few to align")));
    }
    let (mx, x) = centred(&points(pred));
    let (my, y) = centred(&points(gt));

    let mut gt_scatter = Matrix3::zeros();
    y.iter().for_each(|v| gt_scatter += v * v.transpose());
    let sv = gt_scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().map(|&e| e.max(0.0)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if !(sv[0] > 0.0) || sv[1] <= 1e-18 * sv[0] {
        return Err(Error::Alignment("ground truth joints are collinear or coincident".into()));
    }
    let var_x: f64 = x.iter().map(|v| v.norm_squared()).sum();
    if !(var_x > 0.0) {
        return Err(Error::Alignment("predicted joints are all coincident".into()));
    }

    let mut cov = Matrix3::zeros();
    for (a, b) in y.iter().zip(&x) {
        cov += a * b.transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    // nalgebra does not sort singular values; find the smallest.
    let smallest = (0..3)
        .min_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]))
        .unwrap();
    let mut s = Vector3::new(1.0, 1.0, 1.0);
    if (u * vt).determinant() < 0.0 {
        s[smallest] = -1.0;
    }
    let rotation = u * Matrix3::from_diagonal(&s) * vt;
    let trace: f64 = (0..3).map(|i| svd.singular_values[i] * s[i]).sum();
    let scale = trace / var_x;
    Ok(Similarity {
        rotation,
        scale,
        translation: my - scale * (rotation * mx),
    })
}

/// `pred` aligned onto `gt` by [`procrustes_transform`], and the MPJPE that remains.
pub fn procrustes_align(pred: &[f64], gt: &[f64]) -> Result<(Vec<f64>, f64)> {
    let t = procrustes_transform(pred, gt)?;
    let aligned = t.apply(pred);
    let residual = mpjpe(&aligned, gt)?;
    Ok((aligned, residual))
}

/// PCP scores over a set of poses.
#[derive(Clone, Debug, PartialEq)]
pub struct PcpScore {
    /// Fraction of correct instances per part that was scored at least once.
    pub per_part: Vec<(String, f64)>,
    pub all: f64,
    /// Parts with a zero-length ground-truth instance; those instances are
    /// not counted.
    pub skipped: Vec<String>,
}

/// Percentage of correct parts: a part is correct when both endpoint errors
/// are at most `threshold` times its ground-truth length.
pub fn pcp(preds: &[Vec<f64>], gts: &[Vec<f64>], skel: &SkeletonSpec, threshold: f64) -> Result<PcpScore> {
    if !(threshold > 0.0) {
        return Err(Error::contract(format!("PCP threshold {threshold} must be positive")));
    }
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::dim(format!("{} predictions for {} poses", preds.len(), gts.len())));
    }
    let mut correct = vec![0usize; skel.parts.len()];
    let mut counted = vec![0usize; skel.parts.len()];
    for (p, g) in preds.iter().zip(gts) {
        if check_pair(p, g)? != skel.joints() {
            return Err(Error::dim(format!("pose has {} joints, skeleton {}", g.len() / 3, skel.joints())));
        }
        for (i, (_, a, b)) in skel.parts.iter().enumerate() {
            let len = dist(joint(g, *a), joint(g, *b));
            if len == 0.0 {
                continue;
            }
            counted[i] += 1;
            let tol = threshold * len;
            if dist(joint(p, *a), joint(g, *a)) <= tol && dist(joint(p, *b), joint(g, *b)) <= tol {
                correct[i] += 1;
            }
        }
    }
    let mut per_part = Vec::new();
    let mut skipped = Vec::new();
    for (i, (name, _, _)) in skel.parts.iter().enumerate() {
        if counted[i] < preds.len() {
            skipped.push(name.clone());
        }
        if counted[i] > 0 {
            per_part.push((name.clone(), correct[i] as f64 / counted[i] as f64));
        }
    }
    let total: usize = counted.iter().sum();
    let all = if total == 0 {
        0.0
    } else {
        correct.iter().sum::<usize>() as f64 / total as f64
    };
    Ok(PcpScore { per_part, all, skipped })
}

/// Squared Pearson correlations between every pair of features.
#[derive(Clone, Debug, PartialEq)]
pub struct R2Matrix {
    pub dim: usize,
    /// Row-major `dim × dim`.
    pub values: Vec<f64>,
    /// Features with zero variance; their rows and columns are zero.
    pub constant: Vec<usize>,
}

impl R2Matrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim + j]
    }

    /// Dense grid, one row per line, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.values.chunks(self.dim) {
            let line: Vec<String> = row.iter().map(|v| crate::fmt_sig(*v)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// R² between the columns of `[a | b]`, where each row of `a` and `b` is
/// one sample's features.
pub fn pearson_r2(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<R2Matrix> {
    let n = a.len();
    if n < 2 || b.len() != n {
        return Err(Error::dim(format!("need at least two paired samples, got {} and {}", n, b.len())));
    }
    let (d1, d2) = (a[0].len(), b[0].len());
    if a.iter().any(|r| r.len() != d1) || b.iter().any(|r| r.len() != d2) {
        return Err(Error::dim("feature rows differ in length"));
    }
    let dim = d1 + d2;
    let column = |f: usize| -> Vec<f64> {
        if f < d1 {
            a.iter().map(|r| r[f]).collect()
        } else {
            b.iter().map(|r| r[f - d1]).collect()
        }
    };
    let mut cols = Vec::with_capacity(dim);
    let mut constant = Vec::new();
    for f in 0..dim {
        let c = column(f);
        if c.iter().all(|&x| x == c[0]) {
            constant.push(f);
            cols.push(None);
            continue;
        }
        let mean = c.iter().sum::<f64>() / n as f64;
        let centred: Vec<f64> = c.iter().map(|x| x - mean).collect();
        let norm = centred.iter().map(|x| x * x).sum::<f64>().sqrt();
        cols.push(Some(centred.into_iter().map(|x| x / norm).collect::<Vec<f64>>()));
    }
    let mut values = vec![0.0; dim * dim];
    for i in 0..dim {
        let Some(ci) = &cols[i] else { continue };
        values[i * dim + i] = 1.0;
        for j in i + 1..dim {
            let Some(cj) = &cols[j] else { continue };
            let r: f64 = ci.iter().zip(cj).map(|(x, y)| x * y).sum();
            let r2 = (r * r).min(1.0);
            values[i * dim + j] = r2;
            values[j * dim + i] = r2;
        }
    }
    Ok(R2Matrix { dim, values, constant })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng, j: usize) -> Vec<f64> {
        (0..3 * j).map(|_| rng.random_range(-500.0..500.0)).collect()
    }

    #[test]
    fn mpjpe_examples() {
        let gt = vec![0.0; 51];
        assert_eq!(mpjpe(&gt, &gt).unwrap(), 0.0);
        let mut p = gt.clone();
        p[6] = 3.0;
        p[7] = 4.0;
        assert!((mpjpe(&p, &gt).unwrap() - 5.0 / 17.0).abs() < 1e-15);
        assert!(matches!(mpjpe(&p[..48], &gt), Err(Error::Dimension(_))));
    }

    #[test]
    fn procrustes_recovers_similarity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let gt = random_pose(&mut rng, 17);
            let r = Rotation3::from_euler_angles(rng.random::<f64>() * 6.0, rng.random::<f64>() * 3.0, rng.random::<f64>() * 6.0);
            let t = Similarity {
                rotation: *r.matrix(),
                scale: 1.3,
                translation: Vector3::new(40.0, -12.0, 300.0),
            };
            let pred = t.apply(&gt);
            let (_, res) = procrustes_align(&pred, &gt).unwrap();
            assert!(res < 1e-9, "{res}");
        }
        let gt = random_pose(&mut rng, 17);
        let (aligned, res) = procrustes_align(&gt, &gt).unwrap();
        assert!(res < 1e-9);
        assert!(aligned.iter().zip(&gt).all(|(a, b)| (a - b).abs() < 1e-9));
    }

    #[test]
    fn reflections_are_not_used() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gt = random_pose(&mut rng, 10);
        let mirrored: Vec<f64> = gt.chunks(3).flat_map(|p| [-p[0], p[1], p[2]]).collect();
        let t = procrustes_transform(&mirrored, &gt).unwrap();
        assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
        let (_, res) = procrustes_align(&mirrored, &gt).unwrap();
        assert!(res > 1.0);
    }

    #[test]
    fn degenerate_ground_truth_is_rejected() {
        let line: Vec<f64> = (0..5).flat_map(|k| [k as f64, 2.0 * k as f64, 0.0]).collect();
        let pred: Vec<f64> = (0..15).map(|k| k as f64 * 1.7 % 5.0).collect();
        assert!(matches!(procrustes_align(&pred, &line), Err(Error::Alignment(_))));
        assert!(matches!(procrustes_align(&pred, &vec![1.0; 15]), Err(Error::Alignment(_))));
        assert!(matches!(procrustes_align(&pred[..6], &line[..6]), Err(Error::Alignment(_))));
    }

    #[test]
    fn pcp_examples() {
        let skel = SkeletonSpec::h36m17();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gts: Vec<Vec<f64>> = (0..5).map(|_| random_pose(&mut rng, 17)).collect();
        let s = pcp(&gts, &gts, &skel, 0.5).unwrap();
        assert_eq!(s.all, 1.0);
        assert!(s.per_part.iter().all(|(_, f)| *f == 1.0));
        assert!(s.skipped.is_empty());
    }

    #[test]
    fn pcp_boundary_counts_as_correct() {
        let skel = SkeletonSpec::h36m17();
        let gt = skel.rest_pose();
        // r_lower_leg: knee (2) to ankle (3), length 440; shift both by 220 in x.
        let mut p = gt.clone();
        p[6] += 220.0;
        p[9] += 220.0;
        let s = pcp(&[p.clone()], &[gt.clone()], &skel, 0.5).unwrap();
        let part = |n: &str| s.per_part.iter().find(|(m, _)| m == n).unwrap().1;
        assert_eq!(part("r_lower_leg"), 1.0);
        p[9] += 1e-6;
        let s = pcp(&[p], &[gt], &skel, 0.5).unwrap();
        assert_eq!(s.per_part.iter().find(|(m, _)| m == "r_lower_leg").unwrap().1, 0.0);
    }

    #[test]
    fn pcp_skips_zero_length_parts() {
        let skel = SkeletonSpec::h36m17();
        let mut gt = skel.rest_pose();
        gt.copy_within(27..30, 30); // head onto neck
        let s = pcp(&[gt.clone()], &[gt], &skel, 0.5).unwrap();
        assert_eq!(s.skipped, vec!["head".to_string()]);
        assert!(s.per_part.iter().all(|(n, _)| n != "head"));
        assert_eq!(s.all, 1.0);
    }

    #[test]
    fn r2_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..50).map(|_| rng.random()).collect();
        let a: Vec<Vec<f64>> = x.iter().map(|&v| vec![v, 2.0]).collect();
        let b: Vec<Vec<f64>> = x.iter().map(|&v| vec![-v, 3.0 * v + 1.0]).collect();
        let m = pearson_r2(&a, &b).unwrap();
        assert!((m.get(0, 2) - 1.0).abs() < 1e-12);
        assert!((m.get(0, 3) - 1.0).abs() < 1e-12);
        assert_eq!(m.constant, vec![1]);
        assert!((0..4).all(|k| m.get(1, k) == 0.0 && m.get(k, 1) == 0.0));
        assert_eq!(m.get(0, 0), 1.0);
        assert!(pearson_r2(&a[..1], &b[..1]).is_err());
    }
}
