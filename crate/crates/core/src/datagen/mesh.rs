use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geom::{self, Vec3};
use crate::{Error, Result};

/// Meshes whose bounding-box diagonal falls below this are rejected.
pub const MIN_DIAGONAL_M: f64 = 1e-3;

const DEFAULT_ALBEDO: [f32; 3] = [0.7, 0.7, 0.7];

/// Indexed triangle mesh in meters with its certified bounding box and mass.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh {
    pub id: String,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Diffuse color per face, linear RGB in `[0, 1]`.
    pub face_albedo: Vec<[f32; 3]>,
    pub mass: f64,
    pub bbox_min: Vec3,
    pub bbox_max: Vec3,
}

impl TriangleMesh {
    /// Builds a mesh, computing its bounding box and checking invariants.
    pub fn new(
        id: impl Into<String>,
        vertices: Vec<Vec3>,
        faces: Vec<[usize; 3]>,
        face_albedo: Vec<[f32; 3]>,
        mass: f64,
    ) -> Result<Self> {
        let id = id.into();
        if vertices.is_empty() || faces.is_empty() {
            return Err(Error::Metadata {
                id,
                reason: "mesh has no triangles".into(),
            });
        }
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::Metadata {
                id,
                reason: format!("face {f:?} indexes past {} vertices", vertices.len()),
            });
        }
        if face_albedo.len() != faces.len() {
            return Err(Error::Metadata {
                id,
                reason: "one albedo per face required".into(),
            });
        }
        if !(mass > 0.0 && mass.is_finite()) {
            return Err(Error::Metadata {
                id,
                reason: format!("mass must be positive, got {mass}"),
            });
        }
        let (bbox_min, bbox_max) = bounds(&vertices);
        let mesh = Self {
            id,
            vertices,
            faces,
            face_albedo,
            mass,
            bbox_min,
            bbox_max,
        };
        let diag = mesh.diagonal();
        if !(diag >= MIN_DIAGONAL_M) {
            return Err(Error::Metadata {
                id: mesh.id,
                reason: format!("bounding-box diagonal {diag} m is below {MIN_DIAGONAL_M} m"),
            });
        }
        Ok(mesh)
    }

    pub fn diagonal(&self) -> f64 {
        geom::norm(geom::sub(self.bbox_max, self.bbox_min))
    }

    pub fn center(&self) -> Vec3 {
        geom::scale(geom::add(self.bbox_min, self.bbox_max), 0.5)
    }

    pub fn dims(&self) -> Vec3 {
        geom::sub(self.bbox_max, self.bbox_min)
    }

    /// Uniformly scaled copy about the world origin.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.id.clone(),
            self.vertices.iter().map(|&v| geom::scale(v, s)).collect(),
            self.faces.clone(),
            self.face_albedo.clone(),
            self.mass,
        )
    }

    /// Signed enclosed volume (divergence theorem); positive for closed,
    /// outward-wound meshes.
    pub fn volume(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| {
                let [a, b, c] = f.map(|i| self.vertices[i]);
                geom::dot(a, geom::cross(b, c)) / 6.0
            })
            .sum()
    }

    pub fn surface_area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    fn face_area(&self, f: &[usize; 3]) -> f64 {
        let [a, b, c] = f.map(|i| self.vertices[i]);
        0.5 * geom::norm(geom::cross(geom::sub(b, a), geom::sub(c, a)))
    }

    /// Area-weighted uniform samples on the surface.
    pub fn sample_surface(&self, count: usize, rng: &mut impl Rng) -> Vec<Vec3> {
        let mut cumulative = Vec::with_capacity(self.faces.len());
        let mut total = 0.0;
        for f in &self.faces {
            total += self.face_area(f);
            cumulative.push(total);
        }
        (0..count)
            .map(|_| {
                let t = rng.gen::<f64>() * total;
                let fi = cumulative.partition_point(|&c| c < t).min(self.faces.len() - 1);
                let [a, b, c] = self.faces[fi].map(|i| self.vertices[i]);
                let (mut r1, mut r2) = (rng.gen::<f64>(), rng.gen::<f64>());
                if r1 + r2 > 1.0 {
                    r1 = 1.0 - r1;
                    r2 = 1.0 - r2;
                }
                geom::add(a, geom::add(geom::scale(geom::sub(b, a), r1), geom::scale(geom::sub(c, a), r2)))
            })
            .collect()
    }

    /// Writes the mesh as OBJ with a sidecar MTL holding one material per
    /// distinct face color.
    pub fn write_obj(&self, obj_path: &Path) -> Result<()> {
        let mtl_path = obj_path.with_extension("mtl");
        let mtl_name = mtl_path.file_name().unwrap().to_string_lossy().into_owned();
        let mut palette: BTreeMap<[u32; 3], usize> = BTreeMap::new();
        let key = |c: &[f32; 3]| c.map(f32::to_bits);
        for c in &self.face_albedo {
            let next = palette.len();
            palette.entry(key(c)).or_insert(next);
        }
        let mut mtl = String::new();
        let mut by_index: Vec<_> = palette.iter().collect();
        by_index.sort_by_key(|(_, &i)| i);
        for (bits, i) in by_index {
            let c = bits.map(f32::from_bits);
            writeln!(mtl, "newmtl m{i}\nKd {} {} {}\n", c[0], c[1], c[2]).unwrap();
        }

        let mut obj = format!("mtllib {mtl_name}\n");
        for v in &self.vertices {
            writeln!(obj, "v {:.9} {:.9} {:.9}", v[0], v[1], v[2]).unwrap();
        }
        let mut current = usize::MAX;
        for (f, c) in self.faces.iter().zip(&self.face_albedo) {
            let m = palette[&key(c)];
            if m != current {
                writeln!(obj, "usemtl m{m}").unwrap();
                current = m;
            }
            writeln!(obj, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1).unwrap();
        }
        std::fs::write(&mtl_path, mtl).map_err(|e| Error::io(&mtl_path, e))?;
        std::fs::write(obj_path, obj).map_err(|e| Error::io(obj_path, e))
    }
}

fn bounds(vertices: &[Vec3]) -> (Vec3, Vec3) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in vertices {
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (lo, hi)
}

/// Per-model labels from the corpus metadata table. Missing cells are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeshMetadata {
    pub id: String,
    pub mass_kg: Option<f64>,
    pub dim_x_m: Option<f64>,
    pub dim_y_m: Option<f64>,
    pub dim_z_m: Option<f64>,
}

impl MeshMetadata {
    pub fn new(id: impl Into<String>, mass_kg: f64, dims_m: Vec3) -> Self {
        Self {
            id: id.into(),
            mass_kg: Some(mass_kg),
            dim_x_m: Some(dims_m[0]),
            dim_y_m: Some(dims_m[1]),
            dim_z_m: Some(dims_m[2]),
        }
    }

    /// Checked `(mass, dims)`; anything missing or non-positive is rejected.
    pub fn validated(&self) -> Result<(f64, Vec3)> {
        let bad = |reason: String| Error::Metadata {
            id: self.id.clone(),
            reason,
        };
        let positive = |name: &str, v: Option<f64>| match v {
            None => Err(bad(format!("{name} is missing"))),
            Some(x) if !(x > 0.0 && x.is_finite()) => Err(bad(format!("{name} must be positive, got {x}"))),
            Some(x) => Ok(x),
        };
        let mass = positive("mass_kg", self.mass_kg)?;
        let dims = [
            positive("dim_x_m", self.dim_x_m)?,
            positive("dim_y_m", self.dim_y_m)?,
            positive("dim_z_m", self.dim_z_m)?,
        ];
        Ok((mass, dims))
    }
}

/// Reads `metadata.csv` with header `id,mass_kg,dim_x_m,dim_y_m,dim_z_m`.
pub fn read_metadata_table(path: &Path) -> Result<Vec<MeshMetadata>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        reason: e.to_string(),
    })?;
    reader
        .deserialize()
        .map(|row| {
            row.map_err(|e| Error::Parse {
                path: path.into(),
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn write_metadata_table(path: &Path, rows: &[MeshMetadata]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Parse {
        path: path.into(),
        reason: e.to_string(),
    })?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::Parse {
            path: path.into(),
            reason: e.to_string(),
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Loads an OBJ mesh (with optional MTL diffuse colors) and rescales it
/// uniformly so its bounding-box diagonal equals the diagonal of the
/// metadata dimensions.
pub fn load_mesh(path: &Path, metadata: &MeshMetadata) -> Result<TriangleMesh> {
    let (mass, dims) = metadata.validated()?;
    let target_diag = geom::norm(dims);
    if target_diag < MIN_DIAGONAL_M {
        return Err(Error::Metadata {
            id: metadata.id.clone(),
            reason: format!("metadata diagonal {target_diag} m is below {MIN_DIAGONAL_M} m"),
        });
    }

    let parse_err = |reason: String| Error::Parse {
        path: path.into(),
        reason,
    };
    let opts = tobj::LoadOptions {
        triangulate: true,
        single_index: true,
        ..Default::default()
    };
    let (models, materials) = tobj::load_obj(path, &opts).map_err(|e| parse_err(e.to_string()))?;
    let materials = materials.unwrap_or_default();

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut albedo = Vec::new();
    for model in &models {
        let m = &model.mesh;
        if m.positions.len() % 3 != 0 || m.indices.len() % 3 != 0 {
            return Err(parse_err(format!("model `{}` has ragged arrays", model.name)));
        }
        let base = vertices.len();
        vertices.extend(m.positions.chunks_exact(3).map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]));
        let color = m
            .material_id
            .and_then(|i| materials.get(i))
            .and_then(|mat| mat.diffuse)
            .unwrap_or(DEFAULT_ALBEDO);
        for tri in m.indices.chunks_exact(3) {
            let f = [base + tri[0] as usize, base + tri[1] as usize, base + tri[2] as usize];
            if f.iter().any(|&i| i >= vertices.len()) {
                return Err(parse_err(format!("face index out of range in `{}`", model.name)));
            }
            faces.push(f);
            albedo.push(color);
        }
    }
    if faces.is_empty() {
        return Err(parse_err("no triangles".into()));
    }
    let (lo, hi) = bounds(&vertices);
    let raw_diag = geom::norm(geom::sub(hi, lo));
    if !(raw_diag > 0.0 && raw_diag.is_finite()) {
        return Err(Error::Metadata {
            id: metadata.id.clone(),
            reason: "mesh geometry is degenerate".into(),
        });
    }
    let s = target_diag / raw_diag;
    let vertices = vertices.into_iter().map(|v| geom::scale(v, s)).collect();
    TriangleMesh::new(metadata.id.clone(), vertices, faces, albedo, mass)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// Axis-aligned unit cube `[0,1]^3`, outward winding.
    pub(crate) fn unit_cube(id: &str, mass: f64) -> TriangleMesh {
        let v: Vec<Vec3> = (0..8)
            .map(|i| [(i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64])
            .collect();
        let faces = vec![
            [0, 2, 1], [1, 2, 3], // z = 0
            [4, 5, 6], [5, 7, 6], // z = 1
            [0, 1, 4], [1, 5, 4], // y = 0
            [2, 6, 3], [3, 6, 7], // y = 1
            [0, 4, 2], [2, 4, 6], // x = 0
            [1, 3, 5], [3, 7, 5], // x = 1
        ];
        let n = faces.len();
        TriangleMesh::new(id, v, faces, vec![[0.5, 0.5, 0.5]; n], mass).unwrap()
    }

    #[test]
    fn unit_cube_geometry() {
        let c = unit_cube("cube", 1.0);
        assert!((c.diagonal() - 3f64.sqrt()).abs() < 1e-15);
        assert!((c.volume() - 1.0).abs() < 1e-12);
        assert!((c.surface_area() - 6.0).abs() < 1e-12);
        assert_eq!(c.center(), [0.5, 0.5, 0.5]);
    }

    #[test]
    fn load_unit_cube_obj() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        unit_cube("cube", 1.0).write_obj(&path).unwrap();
        let meta = MeshMetadata::new("cube", 1.0, [1.0, 1.0, 1.0]);
        let m = load_mesh(&path, &meta).unwrap();
        assert!((m.diagonal() - 3f64.sqrt()).abs() < 1e-9);
        assert_eq!(m.mass, 1.0);
        assert_eq!(m.faces.len(), 12);
        assert_eq!(m.face_albedo[0], [0.5, 0.5, 0.5]);
    }

    #[test]
    fn load_rescales_to_metric_dims() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        unit_cube("cube", 1.0).write_obj(&path).unwrap();
        let meta = MeshMetadata::new("cube", 2.0, [0.1, 0.1, 0.1]);
        let m = load_mesh(&path, &meta).unwrap();
        assert!((m.dims()[0] - 0.1).abs() < 1e-9);
    }

    #[test]
    fn missing_mass_is_metadata_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.obj");
        unit_cube("cube", 1.0).write_obj(&path).unwrap();
        let mut meta = MeshMetadata::new("cube", 1.0, [1.0; 3]);
        meta.mass_kg = None;
        assert!(matches!(load_mesh(&path, &meta), Err(Error::Metadata { .. })));
        meta.mass_kg = Some(-3.0);
        assert!(matches!(load_mesh(&path, &meta), Err(Error::Metadata { .. })));
        let mut meta = MeshMetadata::new("cube", 1.0, [1.0; 3]);
        meta.dim_y_m = None;
        assert!(matches!(load_mesh(&path, &meta), Err(Error::Metadata { .. })));
        let tiny = MeshMetadata::new("cube", 1.0, [1e-4; 3]);
        assert!(matches!(load_mesh(&path, &tiny), Err(Error::Metadata { .. })));
    }

    #[test]
    fn malformed_obj_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nf 1 2 9\n").unwrap();
        let meta = MeshMetadata::new("bad", 1.0, [1.0; 3]);
        assert!(matches!(load_mesh(&path, &meta), Err(Error::Parse { .. })));
        let missing = dir.path().join("missing.obj");
        assert!(matches!(load_mesh(&missing, &meta), Err(Error::Parse { .. })));
    }

    #[test]
    fn metadata_csv_round_trip_with_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metadata.csv");
        let mut rows = vec![MeshMetadata::new("a", 1.5, [0.1, 0.2, 0.3])];
        rows.push(MeshMetadata {
            id: "b".into(),
            mass_kg: None,
            dim_x_m: Some(0.2),
            dim_y_m: Some(0.2),
            dim_z_m: Some(0.2),
        });
        write_metadata_table(&path, &rows).unwrap();
        assert_eq!(read_metadata_table(&path).unwrap(), rows);
    }

    #[test]
    fn surface_samples_lie_on_cube() {
        use rand::SeedableRng;
        let c = unit_cube("cube", 1.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for p in c.sample_surface(200, &mut rng) {
            let on_face = p.iter().any(|&x| x.abs() < 1e-12 || (x - 1.0).abs() < 1e-12);
            assert!(on_face && p.iter().all(|&x| (-1e-12..=1.0 + 1e-12).contains(&x)));
        }
    }
}
