use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, OpKind, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of one gradient comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_err: f64,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares the analytic gradient of a scalar function against central
/// differences at every coordinate of `x`.
///
/// `f` builds the function on a fresh graph from the leaf holding `x` and
/// must be deterministic. Returns the largest
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<T, F>(f: F, x: &Tensor<T>, eps: f64) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, eps, &coords)
}

/// [`finite_diff_check`] restricted to the listed flat coordinates.
pub fn finite_diff_check_at<T, F>(f: F, x: &Tensor<T>, eps: f64, coords: &[usize]) -> Result<f64>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, Var) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step {eps}")));
    }
    if let Some(&bad) = coords.iter().find(|&&c| c >= x.numel()) {
        return Err(Error::InvalidArgument(format!("coordinate {bad} outside {} elements", x.numel())));
    }
    let mut g = Graph::new();
    let leaf = g.param(x);
    let out = f(&mut g, leaf)?;
    let grads = g.backward(out)?;
    let zeros = vec![T::zero(); x.numel()];
    let analytic = grads.get(leaf).unwrap_or(&zeros);

    let eval = |probe: &Tensor<T>| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.param(probe);
        let out = f(&mut g, leaf)?;
        Ok(g.value(out).item()?.as_f64())
    };

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = T::lit(orig.as_f64() + eps);
        let plus = eval(&probe)?;
        probe.data_mut()[i] = T::lit(orig.as_f64() - eps);
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let err = (analytic[i].as_f64() - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

type Build<T> = Box<dyn Fn(&mut Graph<T>, &[Var]) -> Result<Var>>;

struct Case<T> {
    name: &'static str,
    operands: Vec<Tensor<T>>,
    /// Indices of the operands to differentiate.
    wrt: Vec<usize>,
    build: Build<T>,
}

/// Random values in `[-1, 1]` kept at least 0.05 away from zero so ReLU
/// kinks sit far from every probe.
fn operand<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = rng.gen_range(0.05..1.0);
        T::lit(if rng.gen_bool(0.5) { v } else { -v })
    })
}

fn binary_mask<T: Scalar>(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<T> {
    Tensor::from_fn(shape.to_vec(), |_| if rng.gen_bool(0.4) { T::one() } else { T::zero() })
}

/// Contracts `y` with fixed pseudo-random weights so every output element
/// carries a distinct gradient.
fn weighted_sum<T: Scalar>(g: &mut Graph<T>, y: Var) -> Result<Var> {
    if g.shape(y).is_empty() {
        return Ok(y);
    }
    let w = Tensor::from_fn(g.shape(y).to_vec(), |i| T::lit((i as f64 * 0.77 + 0.3).sin()));
    let w = g.constant(w);
    let m = g.mul(y, w)?;
    Ok(g.sum(m))
}

fn cases<T: Scalar>(rng: &mut ChaCha8Rng) -> Vec<Case<T>> {
    let mut out: Vec<Case<T>> = Vec::new();
    let mut case = |name, operands: Vec<Tensor<T>>, wrt: Vec<usize>, build: Build<T>| {
        out.push(Case { name, operands, wrt, build });
    };
    case(
        "conv2d (gemm)",
        vec![operand(&[2, 3, 5, 5], rng), operand(&[5, 3, 3, 3], rng), operand(&[5], rng)],
        vec![0, 1, 2],
        Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 1)),
    );
    case(
        "conv2d (direct)",
        vec![operand(&[2, 3, 5, 5], rng), operand(&[1, 3, 3, 3], rng), operand(&[1], rng)],
        vec![0, 1, 2],
        Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 1)),
    );
    case(
        "conv2d (strided)",
        vec![operand(&[2, 3, 6, 6], rng), operand(&[4, 3, 3, 3], rng), operand(&[4], rng)],
        vec![0, 1, 2],
        Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 2, 1)),
    );
    case(
        "conv2d (1x1)",
        vec![operand(&[2, 6, 4, 4], rng), operand(&[3, 6, 1, 1], rng), operand(&[3], rng)],
        vec![0, 1, 2],
        Box::new(|g, v| g.conv2d(v[0], v[1], v[2], 1, 0)),
    );
    case(
        "conv_transpose2d",
        vec![operand(&[2, 3, 3, 3], rng), operand(&[3, 2, 4, 4], rng), operand(&[2], rng)],
        vec![0, 1, 2],
        Box::new(|g, v| g.upscale(v[0], v[1], v[2])),
    );
    case("relu", vec![operand(&[2, 3, 4, 4], rng)], vec![0], Box::new(|g, v| Ok(g.relu(v[0]))));
    case("sigmoid", vec![operand(&[2, 3, 4, 4], rng)], vec![0], Box::new(|g, v| Ok(g.sigmoid(v[0]))));
    case(
        "add",
        vec![operand(&[2, 3, 4, 4], rng), operand(&[2, 3, 4, 4], rng)],
        vec![0, 1],
        Box::new(|g, v| g.add(v[0], v[1])),
    );
    case(
        "mul",
        vec![operand(&[2, 3, 4, 4], rng), operand(&[2, 3, 4, 4], rng)],
        vec![0, 1],
        Box::new(|g, v| g.mul(v[0], v[1])),
    );
    case(
        "mul_broadcast",
        vec![operand(&[2, 3, 4, 4], rng), operand(&[2, 1, 4, 4], rng)],
        vec![0, 1],
        Box::new(|g, v| g.mul_broadcast(v[0], v[1])),
    );
    case("one_minus", vec![operand(&[2, 1, 4, 4], rng)], vec![0], Box::new(|g, v| Ok(g.one_minus(v[0]))));
    case(
        "concat_channels",
        vec![operand(&[2, 2, 3, 3], rng), operand(&[2, 3, 3, 3], rng), operand(&[2, 1, 3, 3], rng)],
        vec![0, 1, 2],
        Box::new(|g, v| g.concat_channels(v)),
    );
    case("resize_bilinear (up)", vec![operand(&[2, 2, 4, 3], rng)], vec![0], Box::new(|g, v| g.resize_bilinear(v[0], 7, 8)));
    case(
        "resize_bilinear (down)",
        vec![operand(&[2, 2, 8, 6], rng)],
        vec![0],
        Box::new(|g, v| g.resize_bilinear(v[0], 3, 4)),
    );
    case(
        "sum",
        vec![operand(&[2, 3, 4, 4], rng)],
        vec![0],
        Box::new(|g, v| {
            let r = g.relu(v[0]);
            let m = g.mul(r, v[0])?;
            Ok(g.sum(m))
        }),
    );
    case(
        "scale",
        vec![operand(&[2, 3, 4, 4], rng)],
        vec![0],
        Box::new(|g, v| Ok(g.scale(v[0], T::lit(-1.75)))),
    );
    case(
        "mean",
        vec![operand(&[3, 4], rng), operand(&[3, 4], rng), operand(&[3, 4], rng)],
        vec![0, 1, 2],
        Box::new(|g, v| {
            let sums: Vec<Var> = v.iter().map(|&x| weighted_sum(g, x)).collect::<Result<_>>()?;
            let sq = g.mul(sums[0], sums[1])?;
            g.mean(&[sq, sums[1], sums[2]])
        }),
    );
    let target: Tensor<T> = binary_mask(&[2, 1, 5, 5], rng);
    let t = target.clone();
    case(
        "bce",
        vec![operand(&[2, 1, 5, 5], rng)],
        vec![0],
        Box::new(move |g, v| {
            let p = g.sigmoid(v[0]);
            g.bce(p, &t)
        }),
    );
    case(
        "soft_iou",
        vec![operand(&[2, 1, 5, 5], rng)],
        vec![0],
        Box::new(move |g, v| {
            let p = g.sigmoid(v[0]);
            g.soft_iou_loss(p, &target, 1.0)
        }),
    );
    out
}

/// Finite-difference check of every backward rule on small random inputs
/// drawn from `seed`, one entry per (case, differentiated operand). With
/// `fault` set, that op's backward rule runs with its sign flipped.
pub fn op_suite<T: Scalar>(seed: u64, fault: Option<OpKind>, eps: f64) -> Result<Vec<GradCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut results = Vec::new();
    for case in cases::<T>(&mut rng) {
        for &i in &case.wrt {
            let f = |g: &mut Graph<T>, x: Var| -> Result<Var> {
                g.inject_backward_fault(fault);
                let vars: Vec<Var> = case
                    .operands
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == i { x } else { g.constant(t.clone()) })
                    .collect();
                let y = (case.build)(g, &vars)?;
                weighted_sum(g, y)
            };
            let max_rel_err = finite_diff_check(f, &case.operands[i], eps)?;
            let name = if case.wrt.len() > 1 { format!("{} [operand {i}]", case.name) } else { case.name.to_string() };
            results.push(GradCheck { name, max_rel_err });
        }
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_passes_in_f64() {
        for r in op_suite::<f64>(1, None, 1e-6).unwrap() {
            assert!(r.passes(1e-3), "{r:?}");
        }
    }

    #[test]
    fn op_suite_operands_are_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for c in cases::<f64>(&mut rng) {
            assert!(c.operands.iter().all(|t| t.numel() <= 512), "{}", c.name);
        }
    }

    #[test]
    fn every_fault_is_caught() {
        for kind in OpKind::ALL.into_iter().filter(|&k| k != OpKind::Leaf) {
            let results = op_suite::<f64>(1, Some(kind), 1e-6).unwrap();
            assert!(results.iter().any(|r| !r.passes(1e-3)), "fault in {} went unnoticed", kind.name());
        }
    }

    #[test]
    fn linear_function_is_exact() {
        let x = Tensor::<f64>::from_fn([3, 4], |i| i as f64 * 0.1);
        let w = Tensor::<f64>::from_fn([3, 4], |i| (i as f64).cos());
        let err = finite_diff_check(
            |g, x| {
                let c = g.constant(w.clone());
                let m = g.mul(x, c)?;
                Ok(g.sum(m))
            },
            &x,
            1e-3,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let x = Tensor::<f64>::from_fn([4], |i| i as f64 - 1.5);
        let err = finite_diff_check(
            |g, x| {
                g.inject_backward_fault(Some(super::super::OpKind::Sigmoid));
                let s = g.sigmoid(x);
                Ok(g.sum(s))
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn rejects_out_of_range_coordinate() {
        let x = Tensor::<f64>::zeros([2]);
        assert!(finite_diff_check_at(|g, x| Ok(g.sum(x)), &x, 1e-3, &[2]).is_err());
    }
}
