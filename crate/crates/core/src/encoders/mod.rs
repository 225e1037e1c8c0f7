//! Point-cloud and image encoders producing fixed-width latent vectors.

pub mod densenet;
pub mod dgcnn;
pub mod point_transformer;
pub mod pointnet;

pub use densenet::{DenseNet, DenseNetConfig};
pub use dgcnn::{dgcnn_edge_features, Dgcnn, DgcnnConfig, EdgeConv};
pub use point_transformer::{stage_sizes, PointTransformer, PointTransformerConfig, PtBlock};
pub use pointnet::{PointNet, PointNetConfig};

use crate::autograd::{Graph, ParamStore, Var};
use crate::pcops::PointCloud;
use crate::tensor::Tensor;
use crate::{Error, Result};

pub(crate) fn check_points(points: &Tensor) -> Result<()> {
    if points.cols() != 3 || points.rows() == 0 {
        return Err(Error::Shape(format!("expected a non-empty N×3 cloud, got {}×{}", points.rows(), points.cols())));
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub enum PointEncoder {
    PointNet(PointNet),
    Dgcnn(Dgcnn),
    PointTransformer(PointTransformer),
}

impl PointEncoder {
    pub fn latent_width(&self) -> usize {
        match self {
            PointEncoder::PointNet(e) => e.latent_width(),
            PointEncoder::Dgcnn(e) => e.latent_width(),
            PointEncoder::PointTransformer(e) => e.latent_width(),
        }
    }

    pub fn encode(&self, g: &mut Graph, points: &Tensor) -> Result<Var> {
        match self {
            PointEncoder::PointNet(e) => e.encode(g, points),
            PointEncoder::Dgcnn(e) => e.encode(g, points),
            PointEncoder::PointTransformer(e) => e.encode(g, points),
        }
    }

    /// Evaluates the latent of a whole cloud (padding included) without
    /// keeping the tape.
    pub fn encode_cloud(&self, store: &ParamStore, pc: &PointCloud) -> Result<Tensor> {
        let mut g = Graph::new(store);
        let v = self.encode(&mut g, &pc.to_tensor())?;
        Ok(g.value(v).clone())
    }
}

/// Concatenates the image latent (first) with the point latent (second);
/// without a point branch the image latent passes through unchanged.
pub fn fuse_latents(g: &mut Graph, image: Var, points: Option<Var>) -> Result<Var> {
    let (r, _) = g.shape(image);
    match points {
        None => Ok(image),
        Some(p) => {
            if r != 1 || g.shape(p).0 != 1 {
                return Err(Error::Shape("latents must be row vectors".into()));
            }
            Ok(g.concat_cols(&[image, p]))
        }
    }
}
