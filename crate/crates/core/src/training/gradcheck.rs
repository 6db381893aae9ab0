use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::total_loss;
use crate::data::{synth_sample, SynthSpec};
use crate::error::{Error, Result};
use crate::model::{forward, ModelConfig, ModelParams};
use crate::scalar::Scalar;
use crate::tensor::{finite_diff_check_at, GradCheck, OpKind, Tensor};

/// Checks d(total loss)/d(parameter) of a freshly initialized `cfg` model
/// on one synthetic image, at `samples` parameter coordinates drawn from
/// `seed`.
pub fn model_gradcheck<T: Scalar>(
    cfg: &ModelConfig,
    seed: u64,
    samples: usize,
    fault: Option<OpKind>,
    eps: f64,
) -> Result<Vec<GradCheck>> {
    let params = ModelParams::<T>::init(cfg, seed)?;
    let (h, w) = cfg.input_size;
    if cfg.in_channels != 3 {
        return Err(Error::Config("the model gradient check uses RGB input".into()));
    }
    let spec = SynthSpec { count: 1, size: (h, w), seed, ..SynthSpec::default() };
    let sample = synth_sample(&spec, 0)?;
    let image: Tensor<T> = sample.image.cast::<T>().reshape(vec![1, 3, h, w])?;
    let mask: Tensor<T> = sample.mask.cast::<T>().reshape(vec![1, 1, h, w])?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let paths: Vec<&str> = params.iter().map(|(p, _)| p).collect();
    let mut results = Vec::with_capacity(samples);
    for _ in 0..samples {
        let path = *paths.choose(&mut rng).expect("model has parameters");
        let target = params.get(path).expect("listed path");
        let coord = rng.gen_range(0..target.numel());
        let f = |g: &mut crate::tensor::Graph<T>, x| {
            g.inject_backward_fault(fault);
            let mut vars = params.bind(g, false);
            vars.set(path, x)?;
            let input = g.constant(image.clone());
            let out = forward(g, &vars, cfg, input)?;
            Ok(total_loss(g, &out, &mask, cfg.dense_layers)?.total)
        };
        let max_rel_err = finite_diff_check_at(f, target, eps, &[coord])?;
        results.push(GradCheck { name: format!("{path}[{coord}]"), max_rel_err });
    }
    Ok(results)
}
