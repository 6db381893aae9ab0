use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, NUM_SCALES};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Gradients, Graph, Tensor, Var};

/// One learnable array as prescribed by the construction rule.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub path: String,
    pub shape: Vec<usize>,
    /// Number of inputs summed into each output; zero marks a bias.
    pub fan_in: usize,
}

fn conv(out: &mut Vec<ParamSpec>, prefix: String, cout: usize, cin: usize, k: usize) {
    out.push(ParamSpec { path: format!("{prefix}.weight"), shape: vec![cout, cin, k, k], fan_in: cin * k * k });
    out.push(ParamSpec { path: format!("{prefix}.bias"), shape: vec![cout], fan_in: 0 });
}

/// 4x4 stride-2 transposed convolution: every output site sums `4 * cin` taps.
fn upscale(out: &mut Vec<ParamSpec>, prefix: String, cin: usize, cout: usize) {
    out.push(ParamSpec { path: format!("{prefix}.weight"), shape: vec![cin, cout, 4, 4], fan_in: cin * 4 });
    out.push(ParamSpec { path: format!("{prefix}.bias"), shape: vec![cout], fan_in: 0 });
}

pub fn encoder_stage_prefix(v: usize) -> String {
    format!("encoder.level{v}")
}

pub fn dense_prefix(block: usize, c: usize, v: usize) -> String {
    format!("paad{block}.dense{c}.scale{v}")
}

pub fn mini_decoder_prefix(block: usize, c: usize) -> String {
    format!("paad{block}.mini{c}")
}

pub fn block_fusion_prefix(block: usize, v: usize) -> String {
    format!("paad{block}.fuse.scale{v}")
}

pub fn decoder_prefix(v: usize) -> String {
    format!("decoder.level{v}")
}

pub fn head_prefix(v: usize) -> String {
    format!("head.level{v}")
}

/// Every parameter tensor implied by `cfg`, in construction order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let ch = cfg.encoder_channels;
    let g = cfg.growth;
    let mut out = Vec::new();
    for v in 1..=NUM_SCALES {
        let cin = if v == 1 { cfg.in_channels } else { ch[v - 2] };
        let p = encoder_stage_prefix(v);
        conv(&mut out, format!("{p}.stem"), ch[v - 1], cin, 3);
        conv(&mut out, format!("{p}.res1"), ch[v - 1], ch[v - 1], 3);
        conv(&mut out, format!("{p}.res2"), ch[v - 1], ch[v - 1], 3);
    }
    for b in 0..cfg.num_blocks {
        for c in 1..=cfg.dense_layers {
            for v in 1..=NUM_SCALES {
                conv(&mut out, dense_prefix(b, c, v), g, cfg.dense_in_channels(v, c), 3);
            }
            conv(&mut out, mini_decoder_prefix(b, c), 1, NUM_SCALES * g, 3);
        }
        for v in 1..=NUM_SCALES {
            conv(&mut out, block_fusion_prefix(b, v), ch[v - 1], ch[v - 1] + cfg.dense_layers * g, 1);
        }
    }
    for v in (1..NUM_SCALES).rev() {
        let p = decoder_prefix(v);
        upscale(&mut out, format!("{p}.up"), ch[v], ch[v - 1]);
        conv(&mut out, format!("{p}.fuse"), ch[v - 1], 2 * ch[v - 1], 3);
    }
    for v in 1..=NUM_SCALES {
        conv(&mut out, head_prefix(v), 1, ch[v - 1], 1);
    }
    out
}

/// Named learnable tensors of one network, keyed by parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    config: ModelConfig,
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Graph handles of every parameter for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, path: &str) -> Result<Var> {
        self.vars.get(path).copied().ok_or_else(|| Error::Config(format!("unknown parameter `{path}`")))
    }

    /// Rebinds one parameter, e.g. to a probe leaf in a gradient check.
    pub fn set(&mut self, path: &str, var: Var) -> Result<()> {
        match self.vars.get_mut(path) {
            Some(slot) => {
                *slot = var;
                Ok(())
            }
            None => Err(Error::Config(format!("unknown parameter `{path}`"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub(crate) fn weight_bias(&self, prefix: &str) -> Result<(Var, Var)> {
        Ok((self.get(&format!("{prefix}.weight"))?, self.get(&format!("{prefix}.bias"))?))
    }
}

impl<T: Scalar> ModelParams<T> {
    /// Fan-in scaled uniform weights (`bound = sqrt(1 / fan_in)`) and zero
    /// biases, drawn in sorted path order from a generator seeded by `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = param_layout(config);
        layout.sort_by(|a, b| a.path.cmp(&b.path));
        let tensors = layout
            .into_iter()
            .map(|s| {
                let t = if s.fan_in == 0 {
                    Tensor::zeros(s.shape)
                } else {
                    Tensor::uniform(s.shape, (1.0 / s.fan_in as f64).sqrt(), &mut rng)
                };
                (s.path, t)
            })
            .collect();
        Ok(Self { config: config.clone(), tensors })
    }

    /// All parameters zero.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let tensors = param_layout(config).into_iter().map(|s| (s.path, Tensor::zeros(s.shape))).collect();
        Ok(Self { config: config.clone(), tensors })
    }

    /// Assembles parameters from named tensors, rejecting anything that does
    /// not match the construction rule exactly.
    pub fn from_tensors(config: &ModelConfig, tensors: BTreeMap<String, Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let p = Self { config: config.clone(), tensors };
        p.audit()?;
        Ok(p)
    }

    /// Checks that the stored set equals [`param_layout`] path for path and
    /// shape for shape.
    pub fn audit(&self) -> Result<()> {
        let layout = param_layout(&self.config);
        if layout.len() != self.tensors.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for spec in layout {
            match self.tensors.get(&spec.path) {
                None => return Err(Error::Config(format!("missing parameter `{}`", spec.path))),
                Some(t) if t.shape() != spec.shape.as_slice() => {
                    return Err(Error::Config(format!(
                        "parameter `{}` has shape {:?}, expected {:?}",
                        spec.path,
                        t.shape(),
                        spec.shape
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn get(&self, path: &str) -> Option<&Tensor<T>> {
        self.tensors.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(path)
    }

    /// Parameters in sorted path order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Sets every tensor whose path starts with `prefix` to zero.
    pub fn zero_matching(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for (k, t) in self.tensors.iter_mut() {
            if k.starts_with(prefix) {
                t.data_mut().iter_mut().for_each(|v| *v = T::zero());
                n += 1;
            }
        }
        n
    }

    /// Inserts every parameter as a leaf of `g`. With `trainable` false the
    /// leaves are constants and no gradients are tracked.
    pub fn bind(&self, g: &mut Graph<T>, trainable: bool) -> ParamVars {
        let vars = self.tensors.iter().map(|(k, t)| (k.clone(), g.leaf(t.clone(), trainable))).collect();
        ParamVars { vars }
    }

    pub fn zero_grads(&mut self) {
        self.tensors.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds the gradients of the bound leaves into each tensor's gradient.
    /// Unreached parameters are left untouched.
    pub fn accumulate_grads(&mut self, vars: &ParamVars, grads: &Gradients<T>) -> Result<()> {
        for (path, var) in vars.iter() {
            if let (Some(t), Some(g)) = (self.tensors.get_mut(path), grads.get(var)) {
                t.accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
