//! The segmentation network.

mod config;
mod network;
mod params;

pub use config::{ModelConfig, NUM_SCALES};
pub use network::{apply_attention, dense_layer, encode, forward, mini_decode, paad_block, ModelOutputs, PaadOutput, Polarity};
pub use params::{
    block_fusion_prefix, decoder_prefix, dense_prefix, encoder_stage_prefix, head_prefix, mini_decoder_prefix,
    param_layout, ModelParams, ParamSpec, ParamVars,
};

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

/// Runs the network without gradient tracking and returns the prediction
/// map, `N x 1 x H x W`.
pub fn predict<T: Scalar>(params: &ModelParams<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    Ok(predict_all(params, image)?.0)
}

/// Inference returning the prediction and every attention map.
pub fn predict_all<T: Scalar>(params: &ModelParams<T>, image: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
    let mut g = Graph::new();
    let vars = params.bind(&mut g, false);
    let x = g.constant(image.clone());
    let out = forward(&mut g, &vars, params.config(), x)?;
    let gams = out.gams.iter().map(|&v| g.value(v).clone()).collect();
    Ok((g.value(out.prediction).clone(), gams))
}
