//! Z-buffer rasterization of triangle meshes into a pinhole camera.
//!
//! Depth is interpolated perspective-correctly (linear in `1/z` across the
//! screen), which reproduces the exact ray/plane intersection depth of each
//! triangle along the camera's optical axis.

use image::{Rgb, RgbImage};

use super::camera::{CameraPose, Intrinsics};
use super::depth::{DepthImage, DepthUnits};
use super::mesh::TriangleMesh;
use crate::geom::{self, Vec3};
use crate::{Error, Result};

/// Triangles with any vertex closer than this (in meters, camera z) are
/// skipped rather than clipped.
const NEAR_PLANE: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct Shading {
    /// Direction toward the light in camera coordinates.
    pub light_dir: Vec3,
    pub ambient: f32,
    pub diffuse: f32,
    pub background: [u8; 3],
}

impl Default for Shading {
    fn default() -> Self {
        Self {
            light_dir: geom::normalize([-0.4, -0.6, -0.7]).unwrap(),
            ambient: 0.25,
            diffuse: 0.75,
            background: [0, 0, 0],
        }
    }
}

pub struct RenderOutput {
    pub depth: DepthImage,
    pub rgb: RgbImage,
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Renders metric depth (camera z) and a flat Lambertian RGB image.
pub fn render_depth(mesh: &TriangleMesh, pose: &CameraPose, intr: &Intrinsics, shading: &Shading) -> Result<RenderOutput> {
    intr.validate()?;
    if mesh.faces.is_empty() {
        return Err(Error::Render(format!("mesh `{}` is empty", mesh.id)));
    }
    let frame = pose.frame()?;
    let (w, h) = (intr.width, intr.height);
    let cam: Vec<Vec3> = mesh.vertices.iter().map(|&v| frame.to_camera(v)).collect();

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut color = vec![shading.background; w * h];

    for (face, albedo) in mesh.faces.iter().zip(&mesh.face_albedo) {
        let [a, b, c] = face.map(|i| cam[i]);
        if a[2] <= NEAR_PLANE || b[2] <= NEAR_PLANE || c[2] <= NEAR_PLANE {
            continue;
        }
        let project = |p: Vec3| [intr.fx * p[0] / p[2] + intr.cx, intr.fy * p[1] / p[2] + intr.cy];
        let (sa, sb, sc) = (project(a), project(b), project(c));
        let area = edge(sa, sb, sc);
        if area == 0.0 || !area.is_finite() {
            continue;
        }

        // Two-sided flat shading with the normal turned toward the camera.
        let Some(mut n) = geom::normalize(geom::cross(geom::sub(b, a), geom::sub(c, a))) else {
            continue;
        };
        if geom::dot(n, a) > 0.0 {
            n = geom::scale(n, -1.0);
        }
        let lambert = geom::dot(n, shading.light_dir).max(0.0) as f32;
        let intensity = shading.ambient + shading.diffuse * lambert;
        let rgb = albedo.map(|ch| (ch * intensity * 255.0).round().clamp(0.0, 255.0) as u8);

        let u_lo = sa[0].min(sb[0]).min(sc[0]).ceil().max(0.0);
        let u_hi = sa[0].max(sb[0]).max(sc[0]).floor().min((w - 1) as f64);
        let v_lo = sa[1].min(sb[1]).min(sc[1]).ceil().max(0.0);
        let v_hi = sa[1].max(sb[1]).max(sc[1]).floor().min((h - 1) as f64);
        if u_lo > u_hi || v_lo > v_hi {
            continue;
        }
        let (inv_a, inv_b, inv_c) = (1.0 / a[2], 1.0 / b[2], 1.0 / c[2]);
        for v in v_lo as usize..=v_hi as usize {
            for u in u_lo as usize..=u_hi as usize {
                let p = [u as f64, v as f64];
                let w0 = edge(sb, sc, p) / area;
                let w1 = edge(sc, sa, p) / area;
                let w2 = edge(sa, sb, p) / area;
                if w0 < 0.0 || w1 < 0.0 || w2 < 0.0 {
                    continue;
                }
                let z = 1.0 / (w0 * inv_a + w1 * inv_b + w2 * inv_c);
                let i = v * w + u;
                if z < zbuf[i] {
                    zbuf[i] = z;
                    color[i] = rgb;
                }
            }
        }
    }

    let mut depth = DepthImage::empty(*intr, DepthUnits::MetricM);
    for (i, &z) in zbuf.iter().enumerate() {
        if z.is_finite() {
            depth.data[i] = z;
            depth.valid[i] = true;
        }
    }
    let rgb = RgbImage::from_fn(w as u32, h as u32, |u, v| Rgb(color[v as usize * w + u as usize]));
    Ok(RenderOutput { depth, rgb })
}
