use crate::{Error, Result};

/// Pinhole camera looking down `+z`; the pose root sits `depth_offset`
/// millimetres in front of it. Pixel `(col, row)` covers `[col, col + 1) ×
/// [row, row + 1)`, so its centre is at `(col + 0.5, row + 0.5)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub depth_offset: f64,
}

impl Camera {
    /// Focal length 125 px per 64 px of width, principal point at the image
    /// centre, subject 4.5 m away.
    pub fn for_image(height: usize, width: usize) -> Self {
        Self {
            focal: 125.0 * width as f64 / 64.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            depth_offset: 4500.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal > 0.0) || !self.focal.is_finite() {
            return Err(Error::contract(format!("focal length {} must be positive", self.focal)));
        }
        Ok(())
    }

    /// Camera-frame depth of a root-relative point.
    pub fn depth(&self, z: f64) -> f64 {
        z + self.depth_offset
    }
}

/// Pinhole projection `u = f·x/z + c_x`, `v = f·y/z + c_y` of every joint,
/// with `z` the camera-frame depth.
pub fn project(pose: &[f64], camera: &Camera) -> Result<Vec<[f64; 2]>> {
    camera.validate()?;
    if pose.len() % 3 != 0 {
        return Err(Error::dim(format!("pose of length {} is not 3J", pose.len())));
    }
    pose.chunks_exact(3)
        .enumerate()
        .map(|(k, p)| {
            let z = camera.depth(p[2]);
            if !(z > 0.0) {
                return Err(Error::Projection(format!("joint {k} has camera depth {z} mm")));
            }
            Ok([camera.focal * p[0] / z + camera.cx, camera.focal * p[1] / z + camera.cy])
        })
        .collect()
}
