//! Supervised shape prediction over precomputed identity features.
//!
//! The recognition backbone is out of scope: features arrive as vectors.
//! This module maps them to a shape code with a small MLP, decodes through
//! the frozen linear model, and trains the mapping with AdamW on the
//! region-weighted L1 loss. A FiLM-conditioned sinusoidal decoder is provided
//! as the model-free alternative.

mod gradcheck;
mod loss;
mod mapping;
mod siren;
mod train;

pub use gradcheck::{
    central_diff_grad, grad_check_linear_decoder, grad_check_mapping, grad_check_siren_trunk,
    max_rel_error,
};
pub use loss::masked_l1;
pub use mapping::{map_forward, DenseLayer, ForwardTrace, MappingNetwork, NetGradients};
pub use siren::{siren_decode, siren_forward, FilmParams, SirenDecoder};
pub use train::{
    baseline_mean_loss, evaluate_mean_loss, predict_shape, train, TrainConfig, TrainReport,
    TrainSample,
};

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::LinearShapeModel;
use crate::io::mtc1::{model_from_mtc1, model_to_mtc1, Mtc1, Tensor};

/// Writes the trained mapping layers together with the decoder they are bound
/// to, so a weights file is sufficient for prediction on its own.
pub fn save_weights(
    net: &MappingNetwork,
    model: &LinearShapeModel,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut c = model_to_mtc1(model);
    for (i, layer) in net.layers().iter().enumerate() {
        c.push(format!("map_w{i}"), Tensor::from_dmatrix(&layer.weight));
        c.push(format!("map_b{i}"), Tensor::from_dvector(&layer.bias));
    }
    c.save(path)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(MappingNetwork, LinearShapeModel)> {
    let c = Mtc1::load(path)?;
    let model = model_from_mtc1(&c)?;
    let mut layers = Vec::with_capacity(4);
    for i in 0..4 {
        let w = c.require(&format!("map_w{i}"))?.to_dmatrix()?;
        let b = c.require(&format!("map_b{i}"))?.to_dvector();
        if b.len() != w.nrows() {
            return Err(Error::format("MTC1", format!("map layer {i} weight/bias mismatch")));
        }
        layers.push(DenseLayer { weight: w, bias: b });
    }
    let net = MappingNetwork::from_layers(layers)?;
    if net.output_dim() != model.shape_dim() {
        return Err(Error::format(
            "MTC1",
            "mapping output dimension does not match the bound decoder",
        ));
    }
    Ok((net, model))
}
