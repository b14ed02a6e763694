use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;

use crate::{Error, Result};

/// How far a joint may rotate its child bones, per axis, in radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub z: (f64, f64),
}

impl JointLimits {
    pub const FIXED: Self = Self::new((0.0, 0.0), (0.0, 0.0), (0.0, 0.0));
    const ROOT: Self = Self::new((-0.2, 0.2), (-PI, PI), (-0.2, 0.2));
    const HIP: Self = Self::new((-1.4, 0.5), (-0.3, 0.3), (-0.5, 0.5));
    const KNEE: Self = Self::new((0.0, 1.8), (0.0, 0.0), (0.0, 0.0));
    const SPINE: Self = Self::new((-0.35, 0.35), (-0.4, 0.4), (-0.25, 0.25));
    const NECK: Self = Self::new((-0.4, 0.4), (-0.4, 0.4), (-0.4, 0.4));
    const SHOULDER: Self = Self::new((-1.6, 1.6), (-0.5, 0.5), (-1.5, 1.5));
    const ELBOW: Self = Self::new((-2.2, 0.0), (0.0, 0.0), (0.0, 0.0));

    pub const fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Self {
        Self { x, y, z }
    }

    /// Only rotations about the camera axis, so a pose stays in the image plane.
    fn planar(self) -> Self {
        Self::new((0.0, 0.0), (0.0, 0.0), self.z_or_x())
    }

    fn z_or_x(self) -> (f64, f64) {
        if self.z != (0.0, 0.0) {
            self.z
        } else {
            self.x
        }
    }
}

/// Kinematic tree of a skeleton. Joint 0 is the root; every other joint has
/// a parent with a smaller index. Coordinates are camera-aligned: `x` right,
/// `y` down, `z` away from the camera, in millimetres.
#[derive(Clone, Debug, PartialEq)]
pub struct SkeletonSpec {
    pub names: Vec<String>,
    pub parents: Vec<Option<usize>>,
    /// Rest-pose offset of each joint from its parent.
    pub offsets: Vec<[f64; 3]>,
    pub limits: Vec<JointLimits>,
    /// Named limbs `(name, a, b)` scored by PCP.
    pub parts: Vec<(String, usize, usize)>,
    /// Index of each joint's left/right counterpart (itself on the midline).
    pub mirror: Vec<usize>,
}

struct JointDef {
    name: &'static str,
    parent: Option<usize>,
    offset: [f64; 3],
    limits: JointLimits,
}

const fn j(name: &'static str, parent: usize, offset: [f64; 3], limits: JointLimits) -> JointDef {
    JointDef {
        name,
        parent: Some(parent),
        offset,
        limits,
    }
}

const fn root(name: &'static str) -> JointDef {
    JointDef {
        name,
        parent: None,
        offset: [0.0; 3],
        limits: JointLimits::ROOT,
    }
}

impl SkeletonSpec {
    fn build(defs: &[JointDef], parts: &[(&str, &str, &str)]) -> Self {
        let names: Vec<String> = defs.iter().map(|d| d.name.to_string()).collect();
        let index = |n: &str| names.iter().position(|m| m == n).unwrap_or_else(|| panic!("joint {n}"));
        let mirror = names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                let other = if let Some(rest) = n.strip_prefix("l_") {
                    format!("r_{rest}")
                } else if let Some(rest) = n.strip_prefix("r_") {
                    format!("l_{rest}")
                } else {
                    return i;
                };
                index(&other)
            })
            .collect();
        Self {
            parents: defs.iter().map(|d| d.parent).collect(),
            offsets: defs.iter().map(|d| d.offset).collect(),
            limits: defs.iter().map(|d| d.limits).collect(),
            parts: parts.iter().map(|&(n, a, b)| (n.to_string(), index(a), index(b))).collect(),
            mirror,
            names,
        }
    }

    /// The 17-joint layout of the Human3.6m benchmark.
    pub fn h36m17() -> Self {
        use JointLimits as L;
        let defs = [
            root("pelvis"),
            j("r_hip", 0, [-130.0, 0.0, 0.0], L::HIP),
            j("r_knee", 1, [0.0, 450.0, 0.0], L::KNEE),
            j("r_ankle", 2, [0.0, 440.0, 0.0], L::FIXED),
            j("l_hip", 0, [130.0, 0.0, 0.0], L::HIP),
            j("l_knee", 4, [0.0, 450.0, 0.0], L::KNEE),
            j("l_ankle", 5, [0.0, 440.0, 0.0], L::FIXED),
            j("spine", 0, [0.0, -230.0, 0.0], L::SPINE),
            j("thorax", 7, [0.0, -250.0, 0.0], L::SPINE),
            j("neck", 8, [0.0, -110.0, 0.0], L::NECK),
            j("head", 9, [0.0, -120.0, 0.0], L::FIXED),
            j("l_shoulder", 8, [150.0, 0.0, 0.0], L::SHOULDER),
            j("l_elbow", 11, [0.0, 280.0, 0.0], L::ELBOW),
            j("l_wrist", 12, [0.0, 250.0, 0.0], L::FIXED),
            j("r_shoulder", 8, [-150.0, 0.0, 0.0], L::SHOULDER),
            j("r_elbow", 14, [0.0, 280.0, 0.0], L::ELBOW),
            j("r_wrist", 15, [0.0, 250.0, 0.0], L::FIXED),
        ];
        Self::build(&defs, &Self::limb_parts(&[("torso", "pelvis", "thorax"), ("head", "neck", "head")]))
    }

    /// A 15-joint layout in the style of HumanEva.
    pub fn humaneva15() -> Self {
        use JointLimits as L;
        let defs = [
            root("pelvis"),
            j("thorax", 0, [0.0, -480.0, 0.0], L::SPINE),
            j("head", 1, [0.0, -230.0, 0.0], L::FIXED),
            j("l_shoulder", 1, [150.0, 0.0, 0.0], L::SHOULDER),
            j("l_elbow", 3, [0.0, 280.0, 0.0], L::ELBOW),
            j("l_wrist", 4, [0.0, 250.0, 0.0], L::FIXED),
            j("r_shoulder", 1, [-150.0, 0.0, 0.0], L::SHOULDER),
            j("r_elbow", 6, [0.0, 280.0, 0.0], L::ELBOW),
            j("r_wrist", 7, [0.0, 250.0, 0.0], L::FIXED),
            j("l_hip", 0, [130.0, 0.0, 0.0], L::HIP),
            j("l_knee", 9, [0.0, 450.0, 0.0], L::KNEE),
            j("l_ankle", 10, [0.0, 440.0, 0.0], L::FIXED),
            j("r_hip", 0, [-130.0, 0.0, 0.0], L::HIP),
            j("r_knee", 12, [0.0, 450.0, 0.0], L::KNEE),
            j("r_ankle", 13, [0.0, 440.0, 0.0], L::FIXED),
        ];
        Self::build(&defs, &Self::limb_parts(&[("torso", "pelvis", "thorax"), ("head", "thorax", "head")]))
    }

    /// A 14-joint layout in the style of the KTH football data, rooted at the neck.
    pub fn kth14() -> Self {
        use JointLimits as L;
        let defs = [
            root("neck"),
            j("head", 0, [0.0, -230.0, 0.0], L::FIXED),
            j("r_shoulder", 0, [-150.0, 0.0, 0.0], L::SHOULDER),
            j("r_elbow", 2, [0.0, 280.0, 0.0], L::ELBOW),
            j("r_wrist", 3, [0.0, 250.0, 0.0], L::FIXED),
            j("l_shoulder", 0, [150.0, 0.0, 0.0], L::SHOULDER),
            j("l_elbow", 5, [0.0, 280.0, 0.0], L::ELBOW),
            j("l_wrist", 6, [0.0, 250.0, 0.0], L::FIXED),
            j("r_hip", 0, [-110.0, 500.0, 0.0], L::HIP),
            j("r_knee", 8, [0.0, 450.0, 0.0], L::KNEE),
            j("r_ankle", 9, [0.0, 440.0, 0.0], L::FIXED),
            j("l_hip", 0, [110.0, 500.0, 0.0], L::HIP),
            j("l_knee", 11, [0.0, 450.0, 0.0], L::KNEE),
            j("l_ankle", 12, [0.0, 440.0, 0.0], L::FIXED),
        ];
        Self::build(&defs, &Self::limb_parts(&[("torso", "neck", "l_hip"), ("head", "neck", "head")]))
    }

    fn limb_parts<'a>(extra: &[(&'a str, &'a str, &'a str)]) -> Vec<(&'a str, &'a str, &'a str)> {
        let mut parts = vec![
            ("r_upper_leg", "r_hip", "r_knee"),
            ("r_lower_leg", "r_knee", "r_ankle"),
            ("l_upper_leg", "l_hip", "l_knee"),
            ("l_lower_leg", "l_knee", "l_ankle"),
            ("r_upper_arm", "r_shoulder", "r_elbow"),
            ("r_lower_arm", "r_elbow", "r_wrist"),
            ("l_upper_arm", "l_shoulder", "l_elbow"),
            ("l_lower_arm", "l_elbow", "l_wrist"),
        ];
        parts.extend_from_slice(extra);
        parts
    }

    /// The preset with `joints` joints.
    pub fn preset(joints: usize) -> Result<Self> {
        match joints {
            17 => Ok(Self::h36m17()),
            15 => Ok(Self::humaneva15()),
            14 => Ok(Self::kth14()),
            _ => Err(Error::contract(format!("no skeleton preset with {joints} joints (17, 15 or 14)"))),
        }
    }

    pub fn joints(&self) -> usize {
        self.parents.len()
    }

    pub fn bone_length(&self, joint: usize) -> f64 {
        let [x, y, z] = self.offsets[joint];
        (x * x + y * y + z * z).sqrt()
    }

    /// `(parent, child)` for every bone, in joint order.
    pub fn bones(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.parents.iter().enumerate().filter_map(|(c, p)| p.map(|p| (p, c)))
    }

    /// The same skeleton restricted to in-plane rotations.
    pub fn planar(&self) -> Self {
        let mut s = self.clone();
        s.limits = s.limits.iter().map(|l| l.planar()).collect();
        s
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints();
        if n == 0 || self.parents[0].is_some() {
            return Err(Error::contract("joint 0 must be the root"));
        }
        if self.offsets.len() != n || self.limits.len() != n || self.names.len() != n || self.mirror.len() != n {
            return Err(Error::dim("skeleton tables differ in length"));
        }
        for (c, p) in self.parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < c => {}
                _ => return Err(Error::contract(format!("joint {c} needs a parent with a smaller index"))),
            }
            if !(self.bone_length(c) > 0.0) {
                return Err(Error::contract(format!("bone ending at joint {c} has zero length")));
            }
        }
        Ok(())
    }

    /// Root-relative joint positions for per-joint Euler angles `(x, y, z)`.
    pub fn forward_kinematics(&self, angles: &[[f64; 3]]) -> Vec<f64> {
        let n = self.joints();
        let mut rot = vec![Rotation3::identity(); n];
        let mut pos = vec![Vector3::zeros(); n];
        for k in 0..n {
            let local = Rotation3::from_euler_angles(angles[k][0], angles[k][1], angles[k][2]);
            match self.parents[k] {
                None => rot[k] = local,
                Some(p) => {
                    pos[k] = pos[p] + rot[p] * Vector3::from(self.offsets[k]);
                    rot[k] = rot[p] * local;
                }
            }
        }
        pos.iter().flat_map(|v| [v.x, v.y, v.z]).collect()
    }

    pub fn rest_pose(&self) -> Vec<f64> {
        self.forward_kinematics(&vec![[0.0; 3]; self.joints()])
    }
}

/// A random pose: forward kinematics of joint angles drawn uniformly within
/// each joint's limits.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, skel: &SkeletonSpec) -> Vec<f64> {
    let mut draw = |(lo, hi): (f64, f64)| if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let angles: Vec<[f64; 3]> = skel
        .limits
        .iter()
        .map(|l| [draw(l.x), draw(l.y), draw(l.z)])
        .collect();
    skel.forward_kinematics(&angles)
}

pub(crate) fn joint(pose: &[f64], k: usize) -> [f64; 3] {
    [pose[3 * k], pose[3 * k + 1], pose[3 * k + 2]]
}

pub(crate) fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}
