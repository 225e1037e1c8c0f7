//! Synthetic RGB-D dataset generation from metric 3-D models.

pub mod camera;
pub mod dataset;
pub mod depth;
pub mod mesh;
pub mod render;
pub mod synth;

pub use camera::{camera_rig, CameraPose, Intrinsics, RigConfig, VIEWS_PER_OBJECT};
pub use dataset::{
    build_dataset, split_counts, split_ids, stable_hash, BuildReport, DatasetInfo, DatasetManifest, GenerateConfig, ManifestRecord, ReconTarget, Split,
    DATASET_INFO_FILE, MANIFEST_FILE, METADATA_FILE,
};
pub use depth::{denormalize_depth, normalize_depth, read_depth_values, DepthImage, DepthUnits, DEPTH_QUANTUM};
pub use mesh::{load_mesh, MeshMetadata, TriangleMesh};
pub use render::{render_depth, RenderOutput, Shading};
