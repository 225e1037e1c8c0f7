//! Procedural stand-in corpus: primitive household-like shapes with metric
//! dimensions, a material color and a mass consistent with their volume.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use super::dataset::METADATA_FILE;
use super::mesh::{write_metadata_table, MeshMetadata, TriangleMesh};
use crate::geom::Vec3;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct Material {
    pub name: &'static str,
    /// kg/m³
    pub density: f64,
    pub albedo: [f32; 3],
}

pub const MATERIALS: [Material; 8] = [
    Material { name: "foam", density: 50.0, albedo: [0.95, 0.95, 0.85] },
    Material { name: "cardboard", density: 250.0, albedo: [0.65, 0.5, 0.3] },
    Material { name: "wood", density: 650.0, albedo: [0.55, 0.35, 0.15] },
    Material { name: "plastic", density: 1000.0, albedo: [0.2, 0.45, 0.9] },
    Material { name: "ceramic", density: 2300.0, albedo: [0.9, 0.9, 0.95] },
    Material { name: "glass", density: 2500.0, albedo: [0.45, 0.8, 0.7] },
    Material { name: "aluminium", density: 2700.0, albedo: [0.75, 0.75, 0.8] },
    Material { name: "steel", density: 7800.0, albedo: [0.35, 0.35, 0.4] },
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Box,
    Cylinder,
    Sphere,
    Cone,
}

const PRIMITIVES: [Primitive; 4] = [Primitive::Box, Primitive::Cylinder, Primitive::Sphere, Primitive::Cone];

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub count: usize,
    pub seed: u64,
    /// Range of bounding-box diagonals in meters, sampled log-uniformly.
    pub diagonal_range: (f64, f64),
    /// Log-normal sigma of the per-object density perturbation.
    pub density_jitter: f64,
    pub segments: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            count: 100,
            seed: 0,
            diagonal_range: (0.08, 0.8),
            density_jitter: 0.1,
            segments: 24,
        }
    }
}

fn box_mesh(d: Vec3) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut v = Vec::with_capacity(8);
    for i in 0..8 {
        v.push([
            if i & 1 == 0 { 0.0 } else { d[0] },
            if i & 2 == 0 { 0.0 } else { d[1] },
            if i & 4 == 0 { 0.0 } else { d[2] },
        ]);
    }
    let f = vec![
        [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6],
        [0, 1, 4], [1, 5, 4], [2, 6, 3], [3, 6, 7],
        [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
    ];
    (v, f)
}

/// Cylinder (`top_scale` 1) or cone (`top_scale` 0) about the z axis,
/// base at z = 0.
fn lathe(radius: f64, height: f64, top_scale: f64, seg: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let mut v = vec![[0.0, 0.0, 0.0], [0.0, 0.0, height]];
    for s in 0..seg {
        let a = TAU * s as f64 / seg as f64;
        v.push([radius * a.cos(), radius * a.sin(), 0.0]);
    }
    let cone = top_scale == 0.0;
    if !cone {
        for s in 0..seg {
            let a = TAU * s as f64 / seg as f64;
            v.push([radius * top_scale * a.cos(), radius * top_scale * a.sin(), height]);
        }
    }
    let b = |s: usize| 2 + s % seg;
    let t = |s: usize| 2 + seg + s % seg;
    let mut f = Vec::new();
    for s in 0..seg {
        f.push([0, b(s + 1), b(s)]);
        if cone {
            f.push([b(s), b(s + 1), 1]);
        } else {
            f.push([1, t(s), t(s + 1)]);
            f.push([b(s), b(s + 1), t(s + 1)]);
            f.push([b(s), t(s + 1), t(s)]);
        }
    }
    (v, f)
}

fn ellipsoid(r: Vec3, seg: usize) -> (Vec<Vec3>, Vec<[usize; 3]>) {
    let rings = seg / 2;
    let mut v = vec![[0.0, 0.0, r[2]]];
    for i in 1..rings {
        let th = std::f64::consts::PI * i as f64 / rings as f64;
        for s in 0..seg {
            let ph = TAU * s as f64 / seg as f64;
            v.push([r[0] * th.sin() * ph.cos(), r[1] * th.sin() * ph.sin(), r[2] * th.cos()]);
        }
    }
    v.push([0.0, 0.0, -r[2]]);
    let south = v.len() - 1;
    let ring = |i: usize, s: usize| 1 + (i - 1) * seg + s % seg;
    let mut f = Vec::new();
    for s in 0..seg {
        f.push([0, ring(1, s), ring(1, s + 1)]);
        f.push([south, ring(rings - 1, s + 1), ring(rings - 1, s)]);
    }
    for i in 1..rings - 1 {
        for s in 0..seg {
            f.push([ring(i, s), ring(i + 1, s), ring(i + 1, s + 1)]);
            f.push([ring(i, s), ring(i + 1, s + 1), ring(i, s + 1)]);
        }
    }
    (v, f)
}

/// One random object; its mass is the material density (jittered) times the
/// enclosed mesh volume.
pub fn synth_object(id: &str, cfg: &SynthConfig, rng: &mut impl Rng) -> Result<TriangleMesh> {
    let shape = PRIMITIVES[rng.gen_range(0..PRIMITIVES.len())];
    let mat = MATERIALS[rng.gen_range(0..MATERIALS.len())];
    let (lo, hi) = cfg.diagonal_range;
    let diag = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
    let aspect: Vec3 = [rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0), rng.gen_range(0.3..1.0)];
    let seg = cfg.segments.max(8);
    let (v, f) = match shape {
        Primitive::Box => box_mesh(aspect),
        Primitive::Cylinder => lathe(aspect[0] / 2.0, aspect[2], 1.0, seg),
        Primitive::Cone => lathe(aspect[0] / 2.0, aspect[2], 0.0, seg),
        Primitive::Sphere => ellipsoid([aspect[0] / 2.0, aspect[1] / 2.0, aspect[2] / 2.0], seg),
    };
    let n = f.len();
    let unit = TriangleMesh::new(id, v, f, vec![mat.albedo; n], 1.0)?;
    let mut mesh = unit.scaled(diag / unit.diagonal())?;
    let jitter = LogNormal::new(0.0, cfg.density_jitter).map_err(|e| Error::Domain(e.to_string()))?;
    mesh.mass = mat.density * jitter.sample(rng) * mesh.volume();
    Ok(mesh)
}

/// Writes `count` objects as OBJ/MTL pairs plus the metadata table.
pub fn write_synthetic_corpus(dir: &Path, cfg: &SynthConfig) -> Result<Vec<MeshMetadata>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.count);
    for i in 0..cfg.count {
        let id = format!("obj{i:05}");
        let mesh = synth_object(&id, cfg, &mut rng)?;
        mesh.write_obj(&dir.join(format!("{id}.obj")))?;
        rows.push(MeshMetadata::new(id, mesh.mass, mesh.dims()));
    }
    write_metadata_table(&dir.join(METADATA_FILE), &rows)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_volumes_match_closed_forms() {
        let (v, f) = box_mesh([0.2, 0.3, 0.5]);
        let m = TriangleMesh::new("b", v, f.clone(), vec![[1.0; 3]; f.len()], 1.0).unwrap();
        assert!((m.volume() - 0.03).abs() < 1e-12);

        let seg = 256;
        let (v, f) = lathe(0.5, 2.0, 1.0, seg);
        let m = TriangleMesh::new("c", v, f.clone(), vec![[1.0; 3]; f.len()], 1.0).unwrap();
        let polygon = 0.5 * seg as f64 * 0.25 * (TAU / seg as f64).sin();
        assert!((m.volume() - polygon * 2.0).abs() < 1e-9);

        let (v, f) = lathe(0.5, 2.0, 0.0, seg);
        let m = TriangleMesh::new("k", v, f.clone(), vec![[1.0; 3]; f.len()], 1.0).unwrap();
        assert!((m.volume() - polygon * 2.0 / 3.0).abs() < 1e-9);

        let (v, f) = ellipsoid([1.0, 1.0, 1.0], 128);
        let m = TriangleMesh::new("s", v, f.clone(), vec![[1.0; 3]; f.len()], 1.0).unwrap();
        let sphere = 4.0 / 3.0 * std::f64::consts::PI;
        assert!((m.volume() - sphere).abs() / sphere < 0.01);
    }

    #[test]
    fn synthetic_objects_respect_ranges() {
        let cfg = SynthConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..40 {
            let m = synth_object(&format!("o{i}"), &cfg, &mut rng).unwrap();
            let d = m.diagonal();
            assert!(d >= cfg.diagonal_range.0 * 0.999 && d <= cfg.diagonal_range.1 * 1.001);
            assert!(m.mass > 0.0 && m.volume() > 0.0);
        }
    }
}
