//! Neural building blocks recorded on a [`Graph`].

use serde::{Deserialize, Serialize};

use super::{Graph, ParamId, ParamStore, Tensor, TensorError, Var};
use crate::rng::CounterRng;

/// Affine map `x W^T + b` with `W` stored as `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut CounterRng,
    ) -> Self {
        let w = store.add_xavier(format!("{name}.w"), d_out, d_in, rng);
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[1, d_out])));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, TensorError> {
        let w = g.param(self.w);
        let y = g.matmul_t(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// 1x1 convolution over channels, applied independently to every row.
pub type Conv1x1 = Linear;

/// Linear layers with ReLU between them and none after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, widths: &[usize], rng: &mut CounterRng) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true, rng))
            .collect();
        Self { layers }
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().unwrap().d_out
    }

    pub fn forward(&self, g: &mut Graph<'_>, mut x: Var) -> Result<Var, TensorError> {
        for (i, l) in self.layers.iter().enumerate() {
            x = l.forward(g, x)?;
            if i + 1 < self.layers.len() {
                x = g.relu(x);
            }
        }
        Ok(x)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::filled(&[1, c], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[1, c])),
        }
    }

    pub fn forward(&self, g: &mut Graph<'_>, x: Var) -> Result<Var, TensorError> {
        let (ga, be) = (g.param(self.gamma), g.param(self.beta));
        g.layer_norm(x, ga, be)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    super::graph::sigmoid(z)
}

/// Column-wise max over the valid rows, as a `[1, C]` row.
pub fn maxpool_rows(g: &mut Graph<'_>, x: Var, valid: &[bool]) -> Result<Var, TensorError> {
    if !valid.iter().any(|&v| v) {
        return Err(TensorError::AllMasked("maxpool_rows"));
    }
    let rows = g.value(x).rows();
    g.segment_max(x, rows, valid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttentionConfig {
    pub heads: usize,
    pub pre_norm: bool,
    pub residual: bool,
    pub depth: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            pre_norm: true,
            residual: true,
            depth: 1,
        }
    }
}

/// Multi-head attention followed by a one-layer ReLU feed-forward.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub c: usize,
    pub cfg: AttentionConfig,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ffn: Linear,
    pub ln_q: Option<LayerNorm>,
    pub ln_kv: Option<LayerNorm>,
    pub ln_ffn: Option<LayerNorm>,
}

/// Intermediate values of one block, for inspection.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    /// Per-head `[m, n]` attention weights.
    pub weights: Vec<Var>,
    /// Output before the feed-forward sublayer.
    pub pre_ffn: Var,
    pub out: Var,
}

impl AttentionBlock {
    /// `cross` adds a separate normalization for keys and values.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c: usize,
        cfg: AttentionConfig,
        cross: bool,
        rng: &mut CounterRng,
    ) -> Result<Self, TensorError> {
        if cfg.heads == 0 || c % cfg.heads != 0 {
            return Err(TensorError::Invalid {
                op: "attention",
                detail: format!("{} heads do not divide {c} channels", cfg.heads),
            });
        }
        let mut mat = |n: &str| store.add_xavier(format!("{name}.{n}"), c, c, rng);
        let (wq, wk, wv, wo) = (mat("wq"), mat("wk"), mat("wv"), mat("wo"));
        let ffn = Linear::new(store, &format!("{name}.ffn"), c, c, true, rng);
        let ln = |store: &mut ParamStore, n: &str| {
            cfg.pre_norm
                .then(|| LayerNorm::new(store, &format!("{name}.{n}"), c))
        };
        let ln_q = ln(store, "ln_q");
        let ln_kv = if cross { ln(store, "ln_kv") } else { None };
        let ln_ffn = ln(store, "ln_ffn");
        Ok(Self {
            c,
            cfg,
            wq,
            wk,
            wv,
            wo,
            ffn,
            ln_q,
            ln_kv,
            ln_ffn,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph<'_>,
        q_in: Var,
        kv_in: Var,
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        Ok(self.forward_traced(g, q_in, kv_in, mask)?.out)
    }

    pub fn forward_traced(
        &self,
        g: &mut Graph<'_>,
        q_in: Var,
        kv_in: Var,
        mask: &[bool],
    ) -> Result<AttentionTrace, TensorError> {
        for v in [q_in, kv_in] {
            if g.value(v).cols() != self.c {
                return Err(TensorError::ShapeMismatch {
                    op: "attention",
                    left: g.shape(v).to_vec(),
                    right: vec![self.c, self.c],
                });
            }
        }
        if !mask.iter().any(|&m| m) {
            return Err(TensorError::AllMasked("attention"));
        }
        let self_attn = q_in == kv_in;
        let qn = match &self.ln_q {
            Some(ln) => ln.forward(g, q_in)?,
            None => q_in,
        };
        let kvn = if self_attn {
            qn
        } else {
            match &self.ln_kv {
                Some(ln) => ln.forward(g, kv_in)?,
                None => kv_in,
            }
        };
        let (wq, wk, wv, wo) = (
            g.param(self.wq),
            g.param(self.wk),
            g.param(self.wv),
            g.param(self.wo),
        );
        let q = g.matmul_t(qn, wq)?;
        let k = g.matmul_t(kvn, wk)?;
        let v = g.matmul_t(kvn, wv)?;
        let d = self.c / self.cfg.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut weights = Vec::with_capacity(self.cfg.heads);
        for h in 0..self.cfg.heads {
            let (qh, kh, vh) = if self.cfg.heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * d, d)?,
                    g.slice_cols(k, h * d, d)?,
                    g.slice_cols(v, h * d, d)?,
                )
            };
            let s = g.matmul_t(qh, kh)?;
            let s = g.scale(s, scale);
            let a = g.softmax_masked(s, mask)?;
            weights.push(a);
            heads.push(g.matmul(a, vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)?
        };
        let att = g.matmul_t(cat, wo)?;
        let pre_ffn = if self.cfg.residual {
            g.add(q_in, att)?
        } else {
            att
        };
        let hn = match &self.ln_ffn {
            Some(ln) => ln.forward(g, pre_ffn)?,
            None => pre_ffn,
        };
        let f = self.ffn.forward(g, hn)?;
        let f = g.relu(f);
        let out = if self.cfg.residual {
            g.add(pre_ffn, f)?
        } else {
            f
        };
        Ok(AttentionTrace {
            weights,
            pre_ffn,
            out,
        })
    }
}

/// `depth` attention blocks applied in sequence against the same keys.
#[derive(Debug, Clone)]
pub struct AttentionStack {
    pub blocks: Vec<AttentionBlock>,
}

impl AttentionStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c: usize,
        cfg: AttentionConfig,
        cross: bool,
        rng: &mut CounterRng,
    ) -> Result<Self, TensorError> {
        let blocks = (0..cfg.depth.max(1))
            .map(|i| AttentionBlock::new(store, &format!("{name}.{i}"), c, cfg, cross, rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { blocks })
    }

    /// Self-attention over `x`.
    pub fn self_attend(
        &self,
        g: &mut Graph<'_>,
        mut x: Var,
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        for b in &self.blocks {
            x = b.forward(g, x, x, mask)?;
        }
        Ok(x)
    }

    pub fn cross_attend(
        &self,
        g: &mut Graph<'_>,
        mut q: Var,
        kv: Var,
        mask: &[bool],
    ) -> Result<Var, TensorError> {
        for b in &self.blocks {
            q = b.forward(g, q, kv, mask)?;
        }
        Ok(q)
    }
}
