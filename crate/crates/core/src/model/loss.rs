use serde::{Deserialize, Serialize};

use super::{ModelError, PttOutput, ResidualCoding, RESIDUAL_WIDTH};
use crate::geom::{bev_iou, Box3D};
use crate::tensor::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the regression term.
    pub alpha: f64,
    /// Proposals at or above this IoU with their ground truth are
    /// regressed.
    pub pos_iou: f64,
    pub smooth_l1_beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0,
            pos_iou: 0.55,
            smooth_l1_beta: 1.0,
        }
    }
}

/// Soft confidence target from the proposal's IoU with its ground truth.
pub fn confidence_target(iou: f64) -> f64 {
    (2.0 * iou - 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub conf: f64,
    pub reg: f64,
}

/// `L_conf + alpha * L_reg`. The regression term sums the head residual
/// loss and, per auxiliary branch, the mean residual loss over its valid
/// rows; it is zero for proposals that are not positive.
pub fn compute_loss(
    g: &mut Graph<'_>,
    out: &PttOutput,
    proposal: &Box3D,
    gt: Option<&Box3D>,
    coding: &ResidualCoding,
    cfg: &LossConfig,
) -> Result<LossTerms, ModelError> {
    let iou = gt.map_or(0.0, |gt| bev_iou(proposal, gt));
    let conf = g.bce_with_logits(out.logit, confidence_target(iou))?;
    let conf_v = g.value(conf).item()?;
    let positive = gt.filter(|_| iou >= cfg.pos_iou);
    let Some(gt) = positive else {
        return Ok(LossTerms {
            total: conf,
            conf: conf_v,
            reg: 0.0,
        });
    };
    let target = coding.encode(proposal, gt);
    let mut reg = g.smooth_l1(out.residuals, &target, cfg.smooth_l1_beta)?;
    for a in &out.aux {
        let n = a.valid.iter().filter(|&&v| v).count();
        if n == 0 {
            continue;
        }
        let pred = g.mask_rows(a.pred, &a.valid)?;
        let tgt: Vec<f64> = a
            .valid
            .iter()
            .flat_map(|&v| if v { target } else { [0.0; RESIDUAL_WIDTH] })
            .collect();
        let l = g.smooth_l1(pred, &tgt, cfg.smooth_l1_beta)?;
        let l = g.scale(l, 1.0 / n as f64);
        reg = g.add(reg, l)?;
    }
    let reg_v = g.value(reg).item()?;
    let weighted = g.scale(reg, cfg.alpha);
    let total = g.add(conf, weighted)?;
    Ok(LossTerms {
        total,
        conf: conf_v,
        reg: reg_v,
    })
}
