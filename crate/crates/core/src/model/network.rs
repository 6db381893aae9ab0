//! Forward pass: residual encoder, stacked attention blocks, decoder.

use super::config::{ModelConfig, NUM_SCALES};
use super::params::{
    block_fusion_prefix, decoder_prefix, dense_prefix, encoder_stage_prefix, head_prefix, mini_decoder_prefix,
    ParamVars,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Var};

/// Whether a block gates features by the attention map or by its complement.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    Forward,
    Reverse,
}

impl Polarity {
    /// Block 0 uses forward attention; polarity alternates from there.
    pub fn for_block(block: usize) -> Self {
        if block % 2 == 0 {
            Polarity::Forward
        } else {
            Polarity::Reverse
        }
    }
}

/// Result of one attention block.
#[derive(Clone, Debug)]
pub struct PaadOutput {
    /// Fused stream per scale, same shapes as the block inputs.
    pub features: [Var; NUM_SCALES],
    /// One attention map per dense layer, `N x 1 x H x W`.
    pub gams: Vec<Var>,
}

/// Every map the loss supervises.
#[derive(Clone, Debug)]
pub struct ModelOutputs {
    /// Finest decoder map; identical to `side_outputs[0]`.
    pub prediction: Var,
    /// Decoder maps for scales 1..=4, resized to the input size.
    pub side_outputs: Vec<Var>,
    /// Attention maps of all blocks, block-major.
    pub gams: Vec<Var>,
}

impl ModelOutputs {
    /// Distinct supervised maps: side outputs (prediction included once)
    /// followed by attention maps.
    pub fn supervised(&self) -> Vec<Var> {
        self.side_outputs.iter().chain(&self.gams).copied().collect()
    }
}

fn conv<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, prefix: &str, x: Var, stride: usize, padding: usize) -> Result<Var> {
    let (w, b) = p.weight_bias(prefix)?;
    g.conv2d(x, w, b, stride, padding)
}

fn conv_relu<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, prefix: &str, x: Var, stride: usize) -> Result<Var> {
    let y = conv(g, p, prefix, x, stride, 1)?;
    Ok(g.relu(y))
}

fn check_input<T: Scalar>(g: &Graph<T>, cfg: &ModelConfig, image: Var) -> Result<()> {
    let shape = g.shape(image);
    let (h, w) = cfg.input_size;
    if shape.len() != 4 || shape[1] != cfg.in_channels || shape[2] != h || shape[3] != w {
        return Err(Error::shape(
            "forward",
            format!("image {shape:?} does not match N x {} x {h} x {w}", cfg.in_channels),
        ));
    }
    Ok(())
}

/// Four-level residual encoder. Level `v` halves the resolution with a
/// strided 3x3 conv, then applies one residual unit of two 3x3 convs.
pub fn encode<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, cfg: &ModelConfig, image: Var) -> Result<[Var; NUM_SCALES]> {
    check_input(g, cfg, image)?;
    let mut x = image;
    let mut levels = [image; NUM_SCALES];
    for (i, level) in levels.iter_mut().enumerate() {
        let prefix = encoder_stage_prefix(i + 1);
        let stem = conv_relu(g, p, &format!("{prefix}.stem"), x, 2)?;
        let r = conv_relu(g, p, &format!("{prefix}.res1"), stem, 1)?;
        let r = conv(g, p, &format!("{prefix}.res2"), r, 1, 1)?;
        let sum = g.add(stem, r)?;
        x = g.relu(sum);
        *level = x;
    }
    Ok(levels)
}

/// Dense layer `c` at scale `v`: concatenates `priors` newest first and
/// applies a 3x3 conv with `growth` outputs followed by ReLU.
pub fn dense_layer<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    cfg: &ModelConfig,
    block: usize,
    c: usize,
    v: usize,
    priors: &[Var],
) -> Result<Var> {
    if c == 0 || priors.len() != c {
        return Err(Error::InvalidArgument(format!("dense layer {c} needs {c} prior feature sets, got {}", priors.len())));
    }
    let newest_first: Vec<Var> = priors.iter().rev().copied().collect();
    let x = if newest_first.len() == 1 { newest_first[0] } else { g.concat_channels(&newest_first)? };
    let want = cfg.dense_in_channels(v, c);
    if g.shape(x)[1] != want {
        return Err(Error::shape("dense_layer", format!("layer {c} expects {want} channels, got {}", g.shape(x)[1])));
    }
    conv_relu(g, p, &dense_prefix(block, c, v), x, 1)
}

/// Mini-decoder: resizes the layer-`c` features of all scales to the input
/// size, concatenates them, fuses with a 3x3 conv to one channel and
/// squashes with a sigmoid.
pub fn mini_decode<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    cfg: &ModelConfig,
    block: usize,
    c: usize,
    features: &[Var; NUM_SCALES],
) -> Result<Var> {
    let (h, w) = cfg.input_size;
    let mut up = Vec::with_capacity(NUM_SCALES);
    for &f in features {
        up.push(g.resize_bilinear(f, h, w)?);
    }
    let cat = g.concat_channels(&up)?;
    let logits = conv(g, p, &mini_decoder_prefix(block, c), cat, 1, 1)?;
    Ok(g.sigmoid(logits))
}

/// Gates `features` by the attention map resized to the features'
/// resolution; reverse polarity gates by `1 - map`.
pub fn apply_attention<T: Scalar>(g: &mut Graph<T>, features: Var, gam: Var, polarity: Polarity) -> Result<Var> {
    let shape = g.value(features).dims4("apply_attention")?;
    let small = g.resize_bilinear(gam, shape.2, shape.3)?;
    let gate = match polarity {
        Polarity::Forward => small,
        Polarity::Reverse => g.one_minus(small),
    };
    g.mul_broadcast(features, gate)
}

/// One progressive alternating attention dense block.
pub fn paad_block<T: Scalar>(
    g: &mut Graph<T>,
    p: &ParamVars,
    cfg: &ModelConfig,
    block: usize,
    inputs: [Var; NUM_SCALES],
    polarity: Polarity,
) -> Result<PaadOutput> {
    let mut priors: Vec<Vec<Var>> = inputs.iter().map(|&x| vec![x]).collect();
    let mut gams = Vec::with_capacity(cfg.dense_layers);
    for c in 1..=cfg.dense_layers {
        let mut feats = inputs;
        for (v, f) in feats.iter_mut().enumerate() {
            *f = dense_layer(g, p, cfg, block, c, v + 1, &priors[v])?;
        }
        let gam = mini_decode(g, p, cfg, block, c, &feats)?;
        for (v, &f) in feats.iter().enumerate() {
            let gated = apply_attention(g, f, gam, polarity)?;
            priors[v].push(gated);
        }
        gams.push(gam);
    }
    let mut features = inputs;
    for (v, out) in features.iter_mut().enumerate() {
        // priors[v] = [In_v, P_v^1, ..., P_v^C]
        let cat = g.concat_channels(&priors[v])?;
        let fused = conv(g, p, &block_fusion_prefix(block, v + 1), cat, 1, 0)?;
        *out = g.add(fused, inputs[v])?;
    }
    Ok(PaadOutput { features, gams })
}

/// Full network on an `N x in_channels x H x W` image batch.
pub fn forward<T: Scalar>(g: &mut Graph<T>, p: &ParamVars, cfg: &ModelConfig, image: Var) -> Result<ModelOutputs> {
    let mut streams = encode(g, p, cfg, image)?;
    let mut gams = Vec::with_capacity(cfg.num_gams());
    for block in 0..cfg.num_blocks {
        let out = paad_block(g, p, cfg, block, streams, Polarity::for_block(block))?;
        streams = out.features;
        gams.extend(out.gams);
    }

    let (h, w) = cfg.input_size;
    let mut decoded = [streams[NUM_SCALES - 1]; NUM_SCALES];
    for v in (1..NUM_SCALES).rev() {
        let prefix = decoder_prefix(v);
        let (uw, ub) = p.weight_bias(&format!("{prefix}.up"))?;
        let up = g.upscale(decoded[v], uw, ub)?;
        let cat = g.concat_channels(&[up, streams[v - 1]])?;
        decoded[v - 1] = conv_relu(g, p, &format!("{prefix}.fuse"), cat, 1)?;
    }

    let mut side_outputs = Vec::with_capacity(NUM_SCALES);
    for (v, &d) in decoded.iter().enumerate() {
        // Logits are resized before the sigmoid: interpolated probabilities
        // cannot form boundaries sharper than the decoder grid.
        let logits = conv(g, p, &head_prefix(v + 1), d, 1, 0)?;
        let logits = g.resize_bilinear(logits, h, w)?;
        side_outputs.push(g.sigmoid(logits));
    }
    Ok(ModelOutputs { prediction: side_outputs[0], side_outputs, gams })
}
