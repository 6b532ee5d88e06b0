use ptt_core::rng::CounterRng;
use ptt_core::tensor::nn::{AttentionBlock, AttentionConfig, LayerNorm, Linear};
use ptt_core::tensor::{Graph, ParamId, ParamStore, Tensor};

type Mat = Vec<Vec<f64>>;

fn mat(store: &ParamStore, id: ParamId) -> Mat {
    let t = store.get(id);
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

/// `x · wᵀ`
fn times_t(x: &Mat, w: &Mat) -> Mat {
    x.iter()
        .map(|row| {
            w.iter()
                .map(|wr| row.iter().zip(wr).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

fn layer_norm(x: &Mat, store: &ParamStore, ln: &LayerNorm) -> Mat {
    let gamma = store.get(ln.gamma).data().to_vec();
    let beta = store.get(ln.beta).data().to_vec();
    x.iter()
        .map(|row| {
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let sd = (var + 1e-5).sqrt();
            row.iter()
                .enumerate()
                .map(|(j, v)| gamma[j] * (v - mean) / sd + beta[j])
                .collect()
        })
        .collect()
}

fn linear(x: &Mat, store: &ParamStore, l: &Linear) -> Mat {
    let mut y = times_t(x, &mat(store, l.w));
    if let Some(b) = l.b {
        let b = store.get(b).data();
        for row in &mut y {
            for (v, bj) in row.iter_mut().zip(b) {
                *v += bj;
            }
        }
    }
    y
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(u, v)| u + v).collect())
        .collect()
}

/// Dense reference of one block: per head
/// `softmax(Q_h K_hᵀ / √d + mask) V_h`, heads concatenated and projected,
/// then the feed-forward sublayer.
fn oracle(
    store: &ParamStore,
    blk: &AttentionBlock,
    q_in: &Mat,
    kv_in: &Mat,
    mask: &[bool],
    self_attn: bool,
) -> Mat {
    let qn = match &blk.ln_q {
        Some(ln) => layer_norm(q_in, store, ln),
        None => q_in.clone(),
    };
    let kvn = if self_attn {
        qn.clone()
    } else {
        match &blk.ln_kv {
            Some(ln) => layer_norm(kv_in, store, ln),
            None => kv_in.clone(),
        }
    };
    let q = times_t(&qn, &mat(store, blk.wq));
    let k = times_t(&kvn, &mat(store, blk.wk));
    let v = times_t(&kvn, &mat(store, blk.wv));
    let heads = blk.cfg.heads;
    let d = blk.c / heads;
    let mut cat = vec![vec![0.0; blk.c]; q.len()];
    for h in 0..heads {
        let cols = h * d..(h + 1) * d;
        for (i, qi) in q.iter().enumerate() {
            let scores: Vec<f64> = k
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (d as f64).sqrt())
                .collect();
            let mx = scores
                .iter()
                .zip(mask)
                .filter(|(_, &m)| m)
                .map(|(s, _)| *s)
                .fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores
                .iter()
                .zip(mask)
                .map(|(s, &m)| if m { (s - mx).exp() } else { 0.0 })
                .collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                cat[i][c] = e.iter().zip(&v).map(|(w, vj)| w / z * vj[c]).sum();
            }
        }
    }
    let att = times_t(&cat, &mat(store, blk.wo));
    let h = if blk.cfg.residual {
        add(q_in, &att)
    } else {
        att
    };
    let hn = match &blk.ln_ffn {
        Some(ln) => layer_norm(&h, store, ln),
        None => h.clone(),
    };
    let f: Mat = linear(&hn, store, &blk.ffn)
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    if blk.cfg.residual {
        add(&h, &f)
    } else {
        f
    }
}

fn random_mat(rng: &mut CounterRng, r: usize, c: usize) -> Mat {
    (0..r)
        .map(|_| (0..c).map(|_| rng.normal()).collect())
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionCase {
    pub seed: u64,
    pub heads: usize,
    pub d_head: usize,
    /// Query tokens.
    pub m: usize,
    /// Key tokens of a cross block.
    pub n: usize,
    pub cross: bool,
    pub pre_norm: bool,
    pub residual: bool,
    pub mask_bits: u8,
}

impl AttentionCase {
    /// A case with every field drawn from `rng`, sizes up to 8 tokens.
    pub fn random(rng: &mut CounterRng) -> Self {
        Self {
            seed: rng.next_u64(),
            heads: 1 + rng.below(4),
            d_head: 1 + rng.below(4),
            m: 1 + rng.below(8),
            n: 1 + rng.below(8),
            cross: rng.uniform() < 0.5,
            pre_norm: rng.uniform() < 0.5,
            residual: rng.uniform() < 0.5,
            mask_bits: rng.below(256) as u8,
        }
    }
}

/// Largest absolute deviation between the block and the dense formula.
pub fn attention_case_error(case: &AttentionCase) -> f64 {
    let c = case.heads * case.d_head;
    let cfg = AttentionConfig {
        heads: case.heads,
        pre_norm: case.pre_norm,
        residual: case.residual,
        depth: 1,
    };
    let mut rng = CounterRng::new(case.seed, 0);
    let mut store = ParamStore::new();
    let blk = AttentionBlock::new(&mut store, "blk", c, cfg, case.cross, &mut rng).unwrap();
    // layer norm affine parameters away from their identity init
    for ln in [&blk.ln_q, &blk.ln_kv, &blk.ln_ffn].into_iter().flatten() {
        for id in [ln.gamma, ln.beta] {
            for v in store.get_mut(id).data_mut() {
                *v += 0.3 * rng.normal();
            }
        }
    }
    let q_in = random_mat(&mut rng, case.m, c);
    let (kv_in, keys) = if case.cross {
        (random_mat(&mut rng, case.n, c), case.n)
    } else {
        (q_in.clone(), case.m)
    };
    let mut mask: Vec<bool> = (0..keys)
        .map(|j| case.mask_bits >> (j % 8) & 1 == 1)
        .collect();
    if !mask.iter().any(|&b| b) {
        mask[keys - 1] = true;
    }
    let want = oracle(&store, &blk, &q_in, &kv_in, &mask, !case.cross);
    let mut g = Graph::new(&store);
    let q = g.constant(Tensor::from_rows(&q_in).unwrap());
    let kv = if case.cross {
        g.constant(Tensor::from_rows(&kv_in).unwrap())
    } else {
        q
    };
    let got = blk.forward(&mut g, q, kv, &mask).unwrap();
    let got = g.value(got);
    if got.shape() != [case.m, c] {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (i, row) in want.iter().enumerate() {
        for (j, w) in row.iter().enumerate() {
            worst = worst.max((got.at(i, j) - w).abs());
        }
    }
    worst
}
