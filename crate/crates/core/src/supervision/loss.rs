use crate::error::{Error, Result};
use crate::model::BranchOutputs;
use crate::tensor::{Graph, Scalar, Tensor, Var};

use super::MaskTriplet;

/// Branch weights of the joint objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub body: f64,
    pub edge: f64,
    pub final_: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            body: 0.5,
            edge: 0.5,
            final_: 1.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("lambda_body", self.body), ("lambda_edge", self.edge), ("lambda_final", self.final_)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, format!("{v} is not a non-negative number")));
            }
        }
        if self.body == 0.0 && self.edge == 0.0 && self.final_ == 0.0 {
            return Err(Error::config("lambda_final", "all loss weights are zero"));
        }
        Ok(())
    }
}

/// Targets for a batch, each `[B, 1, H, W]`.
#[derive(Clone, Debug)]
pub struct TargetBatch<T: Scalar> {
    pub final_mask: Tensor<T>,
    pub edge: Tensor<T>,
    pub body: Tensor<T>,
}

impl<T: Scalar> TargetBatch<T> {
    pub fn stack(triplets: &[&MaskTriplet]) -> Result<Self> {
        let first = triplets
            .first()
            .ok_or_else(|| Error::InvalidTensor("empty target batch".into()))?;
        let (h, w) = first.dims();
        if let Some(t) = triplets.iter().find(|t| t.dims() != (h, w)) {
            return Err(Error::shape("TargetBatch", format!("{:?} vs {:?}", t.dims(), (h, w))));
        }
        let shape = [triplets.len(), 1, h, w];
        let n = h * w;
        let pick = |f: fn(&MaskTriplet) -> &crate::plane::Plane| {
            Tensor::from_fn(&shape, |i| T::from_f32(f(triplets[i / n]).data()[i % n]))
        };
        Ok(Self {
            final_mask: pick(|t| &t.final_mask)?,
            edge: pick(|t| &t.edge)?,
            body: pick(|t| &t.body)?,
        })
    }
}

/// Mean binary cross entropy of logits against soft targets.
pub fn bce_loss<T: Scalar>(g: &mut Graph<T>, logits: Var, targets: Var) -> Result<Var> {
    g.bce_with_logits(logits, targets)
}

/// Total objective and its unweighted branch terms. Branches the model does
/// not produce report zero.
#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub total: Var,
    pub body: f64,
    pub edge: f64,
    pub final_: f64,
}

pub fn joint_loss<T: Scalar>(
    g: &mut Graph<T>,
    outputs: &BranchOutputs,
    targets: &TargetBatch<T>,
    weights: &LossWeights,
) -> Result<JointLoss> {
    weights.validate()?;
    let yf = g.constant(targets.final_mask.clone());
    let lf = bce_loss(g, outputs.final_logits, yf)?;
    let mut total = g.scale(lf, weights.final_)?;
    let final_ = g.value(lf).data()[0].as_f64();
    let mut branch = |g: &mut Graph<T>, logits: Option<Var>, target: &Tensor<T>, weight: f64| -> Result<f64> {
        let Some(logits) = logits else { return Ok(0.0) };
        let y = g.constant(target.clone());
        let l = bce_loss(g, logits, y)?;
        let weighted = g.scale(l, weight)?;
        total = g.add(total, weighted)?;
        Ok(g.value(l).data()[0].as_f64())
    };
    let body = branch(g, outputs.body_logits, &targets.body, weights.body)?;
    let edge = branch(g, outputs.edge_logits, &targets.edge, weights.edge)?;
    Ok(JointLoss {
        total,
        body,
        edge,
        final_,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_weights() {
        let w = LossWeights::default();
        assert_eq!((w.body, w.edge, w.final_), (0.5, 0.5, 1.2));
        assert!(w.validate().is_ok());
    }

    #[test]
    fn rejects_negative_and_all_zero() {
        let neg = LossWeights { edge: -0.1, ..Default::default() };
        assert!(neg.validate().is_err());
        let zero = LossWeights { body: 0.0, edge: 0.0, final_: 0.0 };
        assert!(zero.validate().is_err());
    }
}
