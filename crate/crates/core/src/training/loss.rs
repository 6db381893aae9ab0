use crate::error::Result;
use crate::model::ModelOutputs;
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor, Var};

/// Smoothing constant of the soft IoU term.
pub const IOU_SMOOTH: f64 = 1.0;

/// Equally weighted BCE + soft IoU loss of one probability map.
pub fn bce_iou_loss<T: Scalar>(g: &mut Graph<T>, pred: Var, gt: &Tensor<T>) -> Result<Var> {
    let bce = g.bce(pred, gt)?;
    let iou = g.soft_iou_loss(pred, gt, IOU_SMOOTH)?;
    g.add(bce, iou)
}

/// Deep-supervision loss with its per-map terms.
#[derive(Clone, Debug)]
pub struct TotalLoss {
    pub total: Var,
    /// `(name, loss)` per supervised map, e.g. `side_output1`, `gam0.3`.
    pub terms: Vec<(String, Var)>,
}

impl TotalLoss {
    /// Name of the first term whose value is not finite.
    pub fn non_finite_term<T: Scalar>(&self, g: &Graph<T>) -> Option<&str> {
        self.terms.iter().find(|(_, v)| !g.value(*v).is_finite()).map(|(n, _)| n.as_str())
    }
}

/// Mean of [`bce_iou_loss`] over every decoder side output (the prediction
/// is the first of them) and every attention map.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &ModelOutputs,
    gt: &Tensor<T>,
    dense_layers: usize,
) -> Result<TotalLoss> {
    let mut terms = Vec::with_capacity(outputs.side_outputs.len() + outputs.gams.len());
    for (v, &map) in outputs.side_outputs.iter().enumerate() {
        terms.push((format!("side_output{}", v + 1), bce_iou_loss(g, map, gt)?));
    }
    for (i, &map) in outputs.gams.iter().enumerate() {
        let name = format!("gam{}.{}", i / dense_layers.max(1), i % dense_layers.max(1) + 1);
        terms.push((name, bce_iou_loss(g, map, gt)?));
    }
    let vars: Vec<Var> = terms.iter().map(|(_, v)| *v).collect();
    let total = g.mean(&vars)?;
    Ok(TotalLoss { total, terms })
}
