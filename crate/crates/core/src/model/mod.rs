//! The point-trajectory transformer.
//!
//! A trajectory of `T` proposals and the current RoI points are encoded into
//! per-frame features, split into a long memory (oldest frames) and a short
//! memory (newest frames), optionally extended with features of boxes
//! extrapolated into the future, and fused with the current point features
//! by the aggregator before the detection head.

mod boxcode;
mod loss;

pub use boxcode::{
    decode_box, encode_box, ResidualCoding, ResidualFrame, DEFAULT_RESIDUAL_SCALE, RESIDUAL_WIDTH,
};
pub use loss::{compute_loss, confidence_target, LossConfig, LossTerms};

use serde::{Deserialize, Serialize};

use crate::encoders::{EncodeError, EncoderConfig, TrajectoryEncoder};
use crate::geom::{extrapolate_box, heading_rate, Box3D, Trajectory};
use crate::rng::{purpose, CounterRng};
use crate::synth::PointCloud;
use crate::tensor::nn::{maxpool_rows, AttentionConfig, AttentionStack, Conv1x1, Linear, Mlp};
use crate::tensor::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("trajectory has {got} frames, the model expects {want}")]
    Horizon { got: usize, want: usize },
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PttConfig {
    /// Trajectory length including the current frame.
    pub t: usize,
    /// Frames in the short memory.
    pub m_s: usize,
    /// Extrapolated future frames; zero disables the future branch.
    pub m_f: usize,
    pub use_long: bool,
    pub use_short: bool,
    /// Layout of the regression targets.
    pub residual: ResidualCoding,
    pub encoder: EncoderConfig,
    pub attention: AttentionConfig,
}

impl Default for PttConfig {
    fn default() -> Self {
        Self::with_horizon(32)
    }
}

impl PttConfig {
    pub fn with_horizon(t: usize) -> Self {
        Self {
            t,
            m_s: (t / 4).max(1),
            m_f: 4,
            use_long: true,
            use_short: true,
            residual: ResidualCoding::default(),
            encoder: EncoderConfig::default(),
            attention: AttentionConfig::default(),
        }
    }

    pub fn c(&self) -> usize {
        self.encoder.c
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.t == 0 {
            return err("the horizon must be at least one frame");
        }
        if self.encoder.c == 0 {
            return err("the feature width must be positive");
        }
        if self.use_short && self.m_s == 0 {
            return err("the short memory needs at least one frame");
        }
        self.residual.validate().map_err(ModelError::Config)?;
        if !self.use_long && !self.use_short {
            return err("long and short memories cannot both be disabled");
        }
        let h = self.attention.heads;
        if h == 0 || self.encoder.c % h != 0 {
            return Err(ModelError::Config(format!(
                "{h} heads do not divide {} channels",
                self.encoder.c
            )));
        }
        Ok(())
    }

    /// Short memory length after clamping to the horizon.
    pub fn short_len(&self) -> usize {
        if self.use_short {
            self.m_s.min(self.t)
        } else {
            0
        }
    }

    pub fn long_len(&self) -> usize {
        self.t - self.short_len()
    }
}

#[derive(Debug, Clone)]
struct FutureBranch {
    q_f: ParamId,
    conv: Conv1x1,
    attn: AttentionStack,
    head: Linear,
    agg: AttentionStack,
}

#[derive(Debug, Clone)]
struct ShortBranch {
    attn: AttentionStack,
    head: Linear,
    agg: AttentionStack,
}

#[derive(Debug, Clone)]
pub struct PttModel {
    pub cfg: PttConfig,
    encoder: TrajectoryEncoder,
    null_token: ParamId,
    long: Option<AttentionStack>,
    short: Option<ShortBranch>,
    future: Option<FutureBranch>,
    point_attn: AttentionStack,
    agg_long: AttentionStack,
    agg_conv: Conv1x1,
    head: Mlp,
}

/// Auxiliary per-row residual predictions with their row validity.
#[derive(Debug, Clone)]
pub struct AuxResiduals {
    pub name: &'static str,
    pub pred: Var,
    pub valid: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct PttOutput {
    /// `[1, 1]` confidence logit.
    pub logit: Var,
    /// `[1, 7]` box residuals relative to the current proposal.
    pub residuals: Var,
    pub aux: Vec<AuxResiduals>,
}

/// Detection read out of a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub confidence: f64,
    pub residuals: [f64; RESIDUAL_WIDTH],
    pub refined: Box3D,
}

/// Shrinks the initial weights of every residual output layer.
const OUTPUT_INIT_SCALE: f64 = 0.01;

/// Memory rows with their key mask.
struct Memory {
    x: Var,
    mask: Vec<bool>,
}

impl PttModel {
    /// Registers every parameter in `store`, initialised from `seed`.
    pub fn new(store: &mut ParamStore, cfg: PttConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let c = cfg.c();
        let mut rng = CounterRng::for_parts(seed, &[purpose::PARAM_INIT]);
        let rng = &mut rng;
        let att = cfg.attention;
        let encoder = TrajectoryEncoder::new(store, "enc", cfg.encoder, rng);
        let null_token = store.add_normal("null_token", 1, c, 0.1, rng);
        let long = if cfg.use_long {
            Some(AttentionStack::new(store, "long", c, att, false, rng)?)
        } else {
            None
        };
        let short = if cfg.use_short {
            Some(ShortBranch {
                attn: AttentionStack::new(store, "short", c, att, true, rng)?,
                head: Linear::new(store, "short.head", c, RESIDUAL_WIDTH, true, rng),
                agg: AttentionStack::new(store, "agg.short", c, att, true, rng)?,
            })
        } else {
            None
        };
        let future = if cfg.m_f > 0 {
            Some(FutureBranch {
                q_f: store.add_normal("future.q_f", cfg.m_f, c, 0.1, rng),
                conv: Conv1x1::new(store, "future.conv", 2 * c, c, true, rng),
                attn: AttentionStack::new(store, "future", c, att, true, rng)?,
                head: Linear::new(store, "future.head", c, RESIDUAL_WIDTH, true, rng),
                agg: AttentionStack::new(store, "agg.future", c, att, true, rng)?,
            })
        } else {
            None
        };
        let point_attn = AttentionStack::new(store, "agg.points", c, att, false, rng)?;
        let agg_long = AttentionStack::new(store, "agg.long", c, att, true, rng)?;
        let agg_conv = Conv1x1::new(store, "agg.conv", 3 * c, c, true, rng);
        let head = Mlp::new(store, "head", &[2 * c, c, 1 + RESIDUAL_WIDTH], rng);
        let mut outputs: Vec<ParamId> = vec![head.layers.last().expect("two layers").w];
        outputs.extend(short.as_ref().map(|s| s.head.w));
        outputs.extend(future.as_ref().map(|f| f.head.w));
        for id in outputs {
            store
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v *= OUTPUT_INIT_SCALE);
        }
        Ok(Self {
            cfg,
            encoder,
            null_token,
            long,
            short,
            future,
            point_attn,
            agg_long,
            agg_conv,
            head,
        })
    }

    pub fn encoder(&self) -> &TrajectoryEncoder {
        &self.encoder
    }

    /// Future boxes `(box, dt)` extrapolated from the current proposal with
    /// the trajectory's heading rate.
    pub fn future_boxes(&self, traj: &Trajectory) -> Vec<(Box3D, f64)> {
        let Some(cur) = traj.current() else {
            return Vec::new();
        };
        let rate = heading_rate(traj).rate;
        (1..=self.cfg.m_f)
            .map(|t| (extrapolate_box(cur, t as f64, rate), t as f64))
            .collect()
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        traj: &Trajectory,
        points: &PointCloud,
    ) -> Result<PttOutput, ModelError> {
        if traj.len() != self.cfg.t {
            return Err(ModelError::Horizon {
                got: traj.len(),
                want: self.cfg.t,
            });
        }
        let c = self.cfg.c();
        let seq = self.encoder.build_sequence(g, traj, points)?;
        let current = *traj.current().expect("checked by the encoder");
        let m_s = self.cfg.short_len();
        let m_l = self.cfg.long_len();

        // long memory
        let long_mask = seq.valid[..m_l].to_vec();
        let long_in = if self.cfg.use_long && long_mask.iter().any(|&v| v) {
            Memory {
                x: g.slice_rows(seq.p, 0, m_l)?,
                mask: long_mask,
            }
        } else {
            Memory {
                x: g.param(self.null_token),
                mask: vec![true],
            }
        };
        let long = match &self.long {
            Some(enc) => Memory {
                x: enc.self_attend(g, long_in.x, &long_in.mask)?,
                mask: long_in.mask,
            },
            None => long_in,
        };

        let mut aux = Vec::new();
        // short memory
        let short = match &self.short {
            Some(br) => {
                let ms = g.slice_rows(seq.p, m_l, m_s)?;
                let mask = seq.valid[m_l..].to_vec();
                let x = br.attn.cross_attend(g, ms, long.x, &long.mask)?;
                let pred = br.head.forward(g, x)?;
                aux.push(AuxResiduals {
                    name: "short",
                    pred,
                    valid: mask.clone(),
                });
                Some(Memory { x, mask })
            }
            None => None,
        };

        // whole memory for the future queries
        let (mem_x, mem_mask) = match &short {
            Some(s) => (
                g.concat_rows(&[long.x, s.x])?,
                [long.mask.clone(), s.mask.clone()].concat(),
            ),
            None => (long.x, long.mask.clone()),
        };

        let future = match &self.future {
            Some(br) => {
                let boxes = self.future_boxes(traj);
                let mf = self.encoder.future_sequence(g, &boxes, &current, points)?;
                let q = g.param(br.q_f);
                let cat = g.concat_cols(&[q, mf])?;
                let mfp = br.conv.forward(g, cat)?;
                let x = br.attn.cross_attend(g, mfp, mem_x, &mem_mask)?;
                let pred = br.head.forward(g, x)?;
                let mask = vec![true; self.cfg.m_f];
                aux.push(AuxResiduals {
                    name: "future",
                    pred,
                    valid: mask.clone(),
                });
                Some(Memory { x, mask })
            }
            None => None,
        };

        // aggregator
        let pmask = &points.valid;
        let gs = self.point_attn.self_attend(g, seq.g_cur, pmask)?;
        let ghat = maxpool_rows(g, gs, pmask)?;
        let lp = self.agg_long.cross_attend(g, ghat, long.x, &long.mask)?;
        let sp = match (&self.short, &short) {
            (Some(br), Some(s)) => br.agg.cross_attend(g, ghat, s.x, &s.mask)?,
            _ => g.constant(Tensor::zeros(&[1, c])),
        };
        let fp = match (&self.future, &future) {
            (Some(br), Some(f)) => br.agg.cross_attend(g, ghat, f.x, &f.mask)?,
            _ => g.constant(Tensor::zeros(&[1, c])),
        };
        let cat = g.concat_cols(&[lp, sp, fp])?;
        let conv = self.agg_conv.forward(g, cat)?;
        let gprime = g.add(ghat, conv)?;

        let mut parts = vec![long.x];
        let mut tmask = long.mask.clone();
        for m in [&short, &future].into_iter().flatten() {
            parts.push(m.x);
            tmask.extend_from_slice(&m.mask);
        }
        let all = g.concat_rows(&parts)?;
        let traj_feat = maxpool_rows(g, all, &tmask)?;

        let hin = g.concat_cols(&[gprime, traj_feat])?;
        let out = self.head.forward(g, hin)?;
        let logit = g.slice_cols(out, 0, 1)?;
        let residuals = g.slice_cols(out, 1, RESIDUAL_WIDTH)?;
        Ok(PttOutput {
            logit,
            residuals,
            aux,
        })
    }

    /// Forward pass without gradient bookkeeping, decoded into a box.
    pub fn refine(
        &self,
        store: &ParamStore,
        traj: &Trajectory,
        points: &PointCloud,
    ) -> Result<Refinement, ModelError> {
        let mut g = Graph::new(store);
        let out = self.forward(&mut g, traj, points)?;
        let logit = g.value(out.logit).item()?;
        let mut residuals = [0.0; RESIDUAL_WIDTH];
        residuals.copy_from_slice(g.value(out.residuals).data());
        let cur = traj.current().expect("forward succeeded");
        Ok(Refinement {
            confidence: crate::tensor::nn::sigmoid(logit),
            residuals,
            refined: self.cfg.residual.decode(cur, &residuals),
        })
    }
}

#[cfg(test)]
mod tests;
