use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec3};
use crate::{Error, Result};

/// Pinhole intrinsics. Pixel centers sit at integer coordinates, so a
/// `width`-pixel image is symmetric about `cx = (width - 1) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Canonical Kinect v1 depth camera: 640×480, f = 575.8 px.
    pub fn kinect() -> Self {
        Self {
            width: 640,
            height: 480,
            fx: 575.8,
            fy: 575.8,
            cx: 319.5,
            cy: 239.5,
        }
    }

    /// The Kinect camera resampled to `width` pixels wide, keeping the field
    /// of view and the centered principal point.
    pub fn kinect_scaled(width: usize) -> Self {
        let k = Self::kinect();
        let s = width as f64 / k.width as f64;
        let height = (k.height as f64 * s).round() as usize;
        Self {
            width,
            height,
            fx: k.fx * s,
            fy: k.fy * s,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.width > 0
            && self.height > 0
            && self.fx > 0.0
            && self.fy > 0.0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid intrinsics {self:?}")))
        }
    }
}

impl Default for Intrinsics {
    fn default() -> Self {
        Self::kinect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    pub look_at: Vec3,
    pub up: Vec3,
    pub view_index: usize,
}

/// World-to-camera rotation. Camera axes: x right, y down, z forward.
#[derive(Clone, Copy, Debug)]
pub struct CameraFrame {
    pub origin: Vec3,
    pub right: Vec3,
    pub down: Vec3,
    pub forward: Vec3,
}

impl CameraFrame {
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = geom::sub(p, self.origin);
        [geom::dot(d, self.right), geom::dot(d, self.down), geom::dot(d, self.forward)]
    }
}

impl CameraPose {
    pub fn frame(&self) -> Result<CameraFrame> {
        let forward = geom::normalize(geom::sub(self.look_at, self.position))
            .ok_or_else(|| Error::Render(format!("camera {} sits on its look-at point", self.view_index)))?;
        let right = geom::normalize(geom::cross(forward, self.up))
            .ok_or_else(|| Error::Render(format!("camera {} up vector is parallel to the view", self.view_index)))?;
        let down = geom::cross(forward, right);
        Ok(CameraFrame {
            origin: self.position,
            right,
            down,
            forward,
        })
    }

    pub fn distance(&self) -> f64 {
        geom::norm(geom::sub(self.position, self.look_at))
    }
}

/// Placement of the 14-view capture rig relative to an object's bounding
/// sphere.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigConfig {
    /// Camera distance as a multiple of the bounding-box diagonal.
    pub distance_factor: f64,
    /// Elevation of the eight ring views above the horizontal plane.
    pub ring_elevation_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            distance_factor: 2.1,
            ring_elevation_deg: 45.0,
        }
    }
}

pub const RING_VIEWS: usize = 8;
pub const VIEWS_PER_OBJECT: usize = 14;

/// Fourteen poses looking at `center`: eight ring views at equal azimuth
/// steps and fixed elevation (indices 0..8), then top, bottom, front, back,
/// left and right (indices 8..14).
pub fn camera_rig(diagonal: f64, center: Vec3, rig: &RigConfig) -> Result<Vec<CameraPose>> {
    if !(diagonal > 0.0) || !diagonal.is_finite() {
        return Err(Error::Domain(format!("rig diagonal must be positive, got {diagonal}")));
    }
    let dist = rig.distance_factor * diagonal;
    let elev = rig.ring_elevation_deg.to_radians();
    let z_up = [0.0, 0.0, 1.0];
    let x_up = [1.0, 0.0, 0.0];

    let mut poses = Vec::with_capacity(VIEWS_PER_OBJECT);
    for k in 0..RING_VIEWS {
        let az = k as f64 * std::f64::consts::TAU / RING_VIEWS as f64;
        let dir = [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()];
        poses.push(CameraPose {
            position: geom::add(center, geom::scale(dir, dist)),
            look_at: center,
            up: z_up,
            view_index: k,
        });
    }
    let axes: [(Vec3, Vec3); 6] = [
        ([0.0, 0.0, 1.0], x_up),
        ([0.0, 0.0, -1.0], x_up),
        ([0.0, -1.0, 0.0], z_up),
        ([0.0, 1.0, 0.0], z_up),
        ([-1.0, 0.0, 0.0], z_up),
        ([1.0, 0.0, 0.0], z_up),
    ];
    for (i, (dir, up)) in axes.into_iter().enumerate() {
        poses.push(CameraPose {
            position: geom::add(center, geom::scale(dir, dist)),
            look_at: center,
            up,
            view_index: RING_VIEWS + i,
        });
    }
    Ok(poses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distances_follow_diagonal() {
        let poses = camera_rig(0.5, [0.1, -0.2, 0.3], &RigConfig::default()).unwrap();
        assert_eq!(poses.len(), 14);
        for p in &poses {
            assert!((p.distance() - 1.05).abs() / 1.05 < 1e-9);
            assert_eq!(p.look_at, [0.1, -0.2, 0.3]);
            p.frame().unwrap();
        }
    }

    #[test]
    fn ring_azimuth_spacing() {
        let poses = camera_rig(1.0, [0.0; 3], &RigConfig::default()).unwrap();
        for k in 0..RING_VIEWS {
            let a = poses[k].position;
            let b = poses[(k + 1) % RING_VIEWS].position;
            let da = a[1].atan2(a[0]);
            let db = b[1].atan2(b[0]);
            let step = (db - da).rem_euclid(std::f64::consts::TAU);
            assert!((step - std::f64::consts::TAU / 8.0).abs() < 1e-12);
            let elev = (a[2] / geom::norm(a)).asin().to_degrees();
            assert!((elev - 45.0).abs() < 1e-9);
        }
    }

    #[test]
    fn axis_views_orthogonal_or_antipodal() {
        let poses = camera_rig(2.0, [0.0; 3], &RigConfig::default()).unwrap();
        let dirs: Vec<Vec3> = poses[8..].iter().map(|p| geom::normalize(p.position).unwrap()).collect();
        for a in &dirs {
            for b in &dirs {
                let d = geom::dot(*a, *b);
                assert!(d.abs() < 1e-12 || (d.abs() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scaling_diagonal_scales_offsets() {
        let rig = RigConfig::default();
        let c = [0.2, 0.4, -0.1];
        let small = camera_rig(0.3, c, &rig).unwrap();
        let large = camera_rig(3.0, geom::scale(c, 10.0), &rig).unwrap();
        for (s, l) in small.iter().zip(&large) {
            let os = geom::sub(s.position, s.look_at);
            let ol = geom::sub(l.position, l.look_at);
            for k in 0..3 {
                assert!((ol[k] - 10.0 * os[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_bad_diagonal() {
        assert!(matches!(camera_rig(0.0, [0.0; 3], &RigConfig::default()), Err(Error::Domain(_))));
        assert!(matches!(camera_rig(-1.0, [0.0; 3], &RigConfig::default()), Err(Error::Domain(_))));
    }

    #[test]
    fn degenerate_pose_is_render_error() {
        let p = CameraPose {
            position: [1.0, 1.0, 1.0],
            look_at: [1.0, 1.0, 1.0],
            up: [0.0, 0.0, 1.0],
            view_index: 0,
        };
        assert!(matches!(p.frame(), Err(Error::Render(_))));
    }
}
