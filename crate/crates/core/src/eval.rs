//! Detection matching and AP / heading-weighted AP on point-count strata.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoders::EncodeError;
use crate::geom::{bev_iou, wrap_angle, Box3D};
use crate::membank::BankError;
use crate::model::{ModelError, PttModel};
use crate::pipeline::{StreamConfig, Streamer};
use crate::synth::{Dataset, ROI_DILATION};
use crate::tensor::ParamStore;

/// Ground truth with more interior points than this belongs to the easy
/// stratum.
pub const LEVEL1_MIN_POINTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stratum {
    L1,
    L2,
    All,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::L1, Stratum::L2, Stratum::All];

    pub fn name(self) -> &'static str {
        match self {
            Stratum::L1 => "L1",
            Stratum::L2 => "L2",
            Stratum::All => "ALL",
        }
    }

    /// Stratum of a ground truth box by its interior point count.
    pub fn of_points(n: usize) -> Stratum {
        if n > LEVEL1_MIN_POINTS {
            Stratum::L1
        } else {
            Stratum::L2
        }
    }

    fn admits(self, s: Stratum) -> bool {
        self == Stratum::All || self == s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame: usize,
    pub bbox: Box3D,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub frame: usize,
    pub bbox: Box3D,
    pub stratum: Stratum,
}

/// Outcome of matching one detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub frame: usize,
    pub confidence: f64,
    pub bbox: Box3D,
    /// Index into the ground truth list.
    pub matched: Option<usize>,
    /// Absolute wrapped heading error of a match, in `[0, pi]`.
    pub heading_error: f64,
}

/// Greedy matching within each frame: detections in descending confidence
/// take the unused ground truth of highest IoU, when that IoU reaches
/// `iou_thr`.
pub fn match_detections(dets: &[Detection], gts: &[GtRecord], iou_thr: f64) -> Vec<EvalRecord> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(a.cmp(&b))
    });
    let mut by_frame: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, g) in gts.iter().enumerate() {
        by_frame.entry(g.frame).or_default().push(i);
    }
    let mut used = vec![false; gts.len()];
    let mut out = Vec::with_capacity(dets.len());
    for i in order {
        let d = &dets[i];
        let mut best: Option<(f64, usize)> = None;
        for &gi in by_frame.get(&d.frame).map_or(&[][..], Vec::as_slice) {
            if used[gi] {
                continue;
            }
            let iou = bev_iou(&d.bbox, &gts[gi].bbox);
            if iou >= iou_thr && best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, gi));
            }
        }
        let matched = best.map(|(_, gi)| gi);
        let heading_error = matched.map_or(0.0, |gi| {
            wrap_angle(d.bbox.theta - gts[gi].bbox.theta).abs()
        });
        if let Some(gi) = matched {
            used[gi] = true;
        }
        out.push(EvalRecord {
            frame: d.frame,
            confidence: d.confidence,
            bbox: d.bbox,
            matched,
            heading_error,
        });
    }
    out
}

/// Heading accuracy weight of a true positive.
pub fn heading_weight(err: f64) -> f64 {
    (1.0 - wrap_angle(err).abs() / std::f64::consts::PI).max(0.0)
}

/// All-point interpolated average precision over `records` against
/// `num_gt` positives. Weighted precision uses the heading weight per true
/// positive; recall always counts matches. `None` when there is no ground
/// truth.
pub fn average_precision(
    records: &[EvalRecord],
    num_gt: usize,
    heading_weighted: bool,
) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let mut order: Vec<&EvalRecord> = records.iter().collect();
    order.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut prec = Vec::with_capacity(order.len());
    let mut rec = Vec::with_capacity(order.len());
    let (mut tp, mut wtp) = (0usize, 0.0);
    for (k, r) in order.iter().enumerate() {
        if r.matched.is_some() {
            tp += 1;
            wtp += if heading_weighted {
                heading_weight(r.heading_error)
            } else {
                1.0
            };
        }
        prec.push(wtp / (k + 1) as f64);
        rec.push(tp as f64 / num_gt as f64);
    }
    for k in (0..prec.len().saturating_sub(1)).rev() {
        prec[k] = prec[k].max(prec[k + 1]);
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for (p, r) in prec.iter().zip(&rec) {
        ap += (r - prev_r) * p;
        prev_r = *r;
    }
    Some(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumMetrics {
    pub ap: Option<f64>,
    pub aph: Option<f64>,
    pub num_gt: usize,
    pub num_det: usize,
}

/// AP and APH per stratum. Detections matched to another stratum are left
/// out; unmatched detections count against every stratum.
pub fn stratified_metrics(
    records: &[EvalRecord],
    gts: &[GtRecord],
) -> BTreeMap<Stratum, StratumMetrics> {
    Stratum::ALL
        .iter()
        .map(|&s| {
            let num_gt = gts.iter().filter(|g| s.admits(g.stratum)).count();
            let kept: Vec<EvalRecord> = records
                .iter()
                .filter(|r| r.matched.is_none_or(|gi| s.admits(gts[gi].stratum)))
                .copied()
                .collect();
            let m = StratumMetrics {
                ap: average_precision(&kept, num_gt, false),
                aph: average_precision(&kept, num_gt, true),
                num_gt,
                num_det: kept.len(),
            };
            (s, m)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub stream: StreamConfig,
    pub iou_thr: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            stream: StreamConfig::default(),
            iou_thr: 0.7,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub refined: BTreeMap<Stratum, StratumMetrics>,
    pub baseline: BTreeMap<Stratum, StratumMetrics>,
    /// Proposals left unrefined because their RoI held no valid point.
    pub unrefined: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Bank(#[from] BankError),
}

/// Ground truth of every frame with its stratum.
pub fn ground_truth(ds: &Dataset) -> Vec<GtRecord> {
    ds.frames
        .iter()
        .flat_map(|f| {
            f.gt.iter().map(move |g| GtRecord {
                frame: f.frame_index,
                bbox: g.bbox,
                stratum: Stratum::of_points(f.points.count_inside(&g.bbox, ROI_DILATION)),
            })
        })
        .collect()
}

/// Refined detections of a model, or the raw proposals when `model` is
/// `None`, streamed in frame order. Returns the detections and the number
/// of proposals that could not be refined.
pub fn detect(
    ds: &Dataset,
    model: Option<(&PttModel, &ParamStore)>,
    horizon: usize,
    cfg: &EvalConfig,
) -> Result<(Vec<Detection>, usize), EvalError> {
    let (pseed, rseed) = crate::train::epoch_seeds(cfg.seed, 0, false);
    let mut streamer = Streamer::new(cfg.stream, horizon, pseed, rseed);
    let mut dets = Vec::new();
    let mut unrefined = 0;
    for frame in &ds.frames {
        for s in streamer.step(frame)? {
            let det = match model {
                None => Detection {
                    frame: s.frame_index,
                    bbox: s.proposal.bbox,
                    confidence: s.proposal.confidence,
                },
                Some((m, store)) => match m.refine(store, &s.trajectory, &s.points) {
                    Ok(r) => Detection {
                        frame: s.frame_index,
                        bbox: r.refined,
                        confidence: r.confidence,
                    },
                    Err(ModelError::Encode(EncodeError::NoPoints)) => {
                        unrefined += 1;
                        Detection {
                            frame: s.frame_index,
                            bbox: s.proposal.bbox,
                            confidence: 0.0,
                        }
                    }
                    Err(e) => return Err(e.into()),
                },
            };
            dets.push(det);
        }
    }
    Ok((dets, unrefined))
}

/// Metrics of the refined detections next to the unrefined baseline.
pub fn evaluate(
    ds: &Dataset,
    model: &PttModel,
    store: &ParamStore,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    let gts = ground_truth(ds);
    let (base, _) = detect(ds, None, model.cfg.t, cfg)?;
    let (dets, unrefined) = detect(ds, Some((model, store)), model.cfg.t, cfg)?;
    Ok(EvalReport {
        refined: stratified_metrics(&match_detections(&dets, &gts, cfg.iou_thr), &gts),
        baseline: stratified_metrics(&match_detections(&base, &gts, cfg.iou_thr), &gts),
        unrefined,
    })
}
