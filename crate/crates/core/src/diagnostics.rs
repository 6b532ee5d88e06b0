//! Finite-difference gradient suite over the building blocks of the model,
//! each evaluated on a small fixed instance.

use std::fmt;
use std::str::FromStr;

use crate::geom::{Box3D, Trajectory};
use crate::model::{compute_loss, AuxResiduals, LossConfig, PttConfig, PttModel, PttOutput};
use crate::rng::CounterRng;
use crate::synth::PointCloud;
use crate::tensor::nn::{AttentionBlock, AttentionConfig};
use crate::tensor::{
    gradcheck, GradcheckOptions, GradcheckReport, ParamStore, Tensor, TensorError,
};

/// Coordinates checked per parameter when the caller sets no limit.
pub const DEFAULT_MAX_COORDS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GradModule {
    /// Point, proposal and fusion MLPs.
    Encoders,
    /// A standalone attention block, self and cross.
    Attention,
    /// Long-term memory encoder and the null token.
    Long,
    /// Short-term memory encoder and its residual head.
    Short,
    /// Future queries, fusion conv, encoder and residual head.
    Future,
    Aggregator,
    /// Detection head.
    Head,
    /// Detection loss with respect to the network outputs.
    Loss,
}

impl GradModule {
    pub const ALL: [GradModule; 8] = [
        GradModule::Encoders,
        GradModule::Attention,
        GradModule::Long,
        GradModule::Short,
        GradModule::Future,
        GradModule::Aggregator,
        GradModule::Head,
        GradModule::Loss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GradModule::Encoders => "encoders",
            GradModule::Attention => "attention",
            GradModule::Long => "long",
            GradModule::Short => "short",
            GradModule::Future => "future",
            GradModule::Aggregator => "aggregator",
            GradModule::Head => "head",
            GradModule::Loss => "loss",
        }
    }

    fn prefixes(self) -> &'static [&'static str] {
        match self {
            GradModule::Encoders => &["enc."],
            GradModule::Long => &["long.", "null_token"],
            GradModule::Short => &["short."],
            GradModule::Future => &["future."],
            GradModule::Aggregator => &["agg."],
            GradModule::Head => &["head."],
            GradModule::Attention | GradModule::Loss => &[],
        }
    }
}

impl fmt::Display for GradModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GradModule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown module {s:?}"))
    }
}

/// Model configuration of the fixture: six frames, two short, two future,
/// eight channels over two heads.
pub fn fixture_config() -> PttConfig {
    let mut cfg = PttConfig::with_horizon(6);
    cfg.m_s = 2;
    cfg.m_f = 2;
    cfg.encoder.c = 8;
    cfg.attention.heads = 2;
    cfg
}

/// Six-frame trajectory with its second frame missing.
pub fn fixture_trajectory() -> Trajectory {
    Trajectory::new(
        (0..6)
            .map(|i| {
                (i != 1).then(|| {
                    let k = i as f64 - 5.0;
                    Box3D::new(0.5 * k, 0.1 * k, 0.8, 2.0, 4.4, 1.6, 0.02 * k, 0.5, 0.1)
                        .expect("valid")
                })
            })
            .collect(),
    )
}

pub fn fixture_points() -> PointCloud {
    let mut r = CounterRng::new(11, 9);
    let mut pc = PointCloud::with_capacity(8);
    for _ in 0..8 {
        pc.push(
            [
                r.uniform_in(-2.0, 2.0),
                r.uniform_in(-1.0, 1.0),
                r.uniform_in(0.0, 1.6),
            ],
            r.uniform(),
            true,
        );
    }
    pc
}

/// Ground truth overlapping the fixture's current proposal above the
/// positive threshold.
pub fn fixture_gt() -> Box3D {
    Box3D::new(0.2, -0.1, 0.85, 2.1, 4.5, 1.55, 0.05, 0.5, 0.1).expect("valid")
}

fn invalid(op: &'static str, e: impl fmt::Display) -> TensorError {
    TensorError::Invalid {
        op,
        detail: e.to_string(),
    }
}

/// Runs the check of one module. The module picks the parameter prefixes;
/// the other options are taken from `opts`.
pub fn run_gradcheck(
    module: GradModule,
    opts: &GradcheckOptions,
) -> Result<GradcheckReport, TensorError> {
    let opts = GradcheckOptions {
        prefixes: module.prefixes().iter().map(|s| s.to_string()).collect(),
        max_coords: Some(opts.max_coords.unwrap_or(DEFAULT_MAX_COORDS)),
        ..opts.clone()
    };
    match module {
        GradModule::Attention => attention_check(&opts),
        GradModule::Loss => loss_check(&opts),
        _ => model_check(&opts),
    }
}

fn model_check(opts: &GradcheckOptions) -> Result<GradcheckReport, TensorError> {
    let mut store = ParamStore::new();
    let model = PttModel::new(&mut store, fixture_config(), 7).map_err(|e| invalid("model", e))?;
    let (traj, pts, gt) = (fixture_trajectory(), fixture_points(), fixture_gt());
    let prop = *traj.current().expect("current frame");
    gradcheck(
        &mut store,
        |g| {
            let out = model
                .forward(g, &traj, &pts)
                .map_err(|e| invalid("forward", e))?;
            let l = compute_loss(
                g,
                &out,
                &prop,
                Some(&gt),
                &model.cfg.residual,
                &LossConfig::default(),
            )
            .map_err(|e| invalid("loss", e))?;
            Ok(l.total)
        },
        opts,
    )
}

fn attention_check(opts: &GradcheckOptions) -> Result<GradcheckReport, TensorError> {
    let mut store = ParamStore::new();
    let mut rng = CounterRng::new(5, 1);
    let cfg = AttentionConfig {
        heads: 2,
        ..AttentionConfig::default()
    };
    let self_block = AttentionBlock::new(&mut store, "self", 6, cfg, false, &mut rng)?;
    let cross_block = AttentionBlock::new(&mut store, "cross", 6, cfg, true, &mut rng)?;
    let mut draw = |r: usize| {
        let data = (0..r * 6).map(|_| rng.normal()).collect();
        Tensor::matrix(r, 6, data).expect("shape")
    };
    let (q, kv) = (draw(3), draw(5));
    let mask = [true, false, true, true, true];
    gradcheck(
        &mut store,
        |g| {
            let q = g.constant(q.clone());
            let kv = g.constant(kv.clone());
            let a = self_block.forward(g, q, q, &[true, true, false])?;
            let b = cross_block.forward(g, a, kv, &mask)?;
            let sq = g.mul(b, b)?;
            Ok(g.sum(sq))
        },
        opts,
    )
}

fn loss_check(opts: &GradcheckOptions) -> Result<GradcheckReport, TensorError> {
    let mut store = ParamStore::new();
    let mut rng = CounterRng::new(3, 4);
    let logit = store.add_normal("loss.logit", 1, 1, 1.0, &mut rng);
    let res = store.add_normal("loss.residuals", 1, 7, 0.5, &mut rng);
    let aux = store.add_normal("loss.aux", 3, 7, 0.5, &mut rng);
    let prop = *fixture_trajectory().current().expect("current frame");
    let gt = fixture_gt();
    let cfg = LossConfig::default();
    let coding = fixture_config().residual;
    gradcheck(
        &mut store,
        |g| {
            let out = PttOutput {
                logit: g.param(logit),
                residuals: g.param(res),
                aux: vec![AuxResiduals {
                    name: "aux",
                    pred: g.param(aux),
                    valid: vec![true, false, true],
                }],
            };
            let l = compute_loss(g, &out, &prop, Some(&gt), &coding, &cfg)
                .map_err(|e| invalid("loss", e))?;
            Ok(l.total)
        },
        opts,
    )
}
