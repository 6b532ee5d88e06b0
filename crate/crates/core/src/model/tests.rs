use super::*;
use crate::tensor::{gradcheck, GradcheckOptions};

fn tiny_cfg() -> PttConfig {
    let mut cfg = PttConfig::with_horizon(6);
    cfg.m_s = 2;
    cfg.m_f = 2;
    cfg.encoder.c = 8;
    cfg.attention.heads = 2;
    cfg
}

fn track(t: usize, missing: &[usize]) -> Trajectory {
    Trajectory::new(
        (0..t)
            .map(|i| {
                (!missing.contains(&i)).then(|| {
                    let k = i as f64 - (t - 1) as f64;
                    Box3D::new(0.5 * k, 0.1 * k, 0.8, 2.0, 4.4, 1.6, 0.02 * k, 0.5, 0.1).unwrap()
                })
            })
            .collect(),
    )
}

fn roi(n: usize, seed: u64) -> PointCloud {
    let mut r = CounterRng::new(seed, 9);
    let mut pc = PointCloud::with_capacity(n);
    for _ in 0..n {
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

fn gt_box() -> Box3D {
    Box3D::new(0.2, -0.1, 0.85, 2.1, 4.5, 1.55, 0.05, 0.5, 0.1).unwrap()
}

#[test]
fn forward_shapes_for_every_variant() {
    let variants: Vec<PttConfig> = {
        let base = tiny_cfg();
        let mut v = vec![base];
        v.push(PttConfig {
            use_long: false,
            ..base
        });
        v.push(PttConfig {
            use_short: false,
            ..base
        });
        v.push(PttConfig { m_f: 0, ..base });
        v
    };
    for cfg in variants {
        let mut s = ParamStore::new();
        let m = PttModel::new(&mut s, cfg, 3).unwrap();
        let mut g = Graph::new(&s);
        let out = m.forward(&mut g, &track(6, &[0, 3]), &roi(8, 1)).unwrap();
        assert_eq!(g.shape(out.logit), &[1, 1]);
        assert_eq!(g.shape(out.residuals), &[1, 7]);
        let expect_aux = usize::from(cfg.use_short) + usize::from(cfg.m_f > 0);
        assert_eq!(out.aux.len(), expect_aux);
        for a in &out.aux {
            assert_eq!(g.shape(a.pred)[1], 7);
        }
    }
}

#[test]
fn both_memories_off_is_rejected() {
    let cfg = PttConfig {
        use_long: false,
        use_short: false,
        ..tiny_cfg()
    };
    assert!(matches!(
        PttModel::new(&mut ParamStore::new(), cfg, 0),
        Err(ModelError::Config(_))
    ));
}

#[test]
fn short_horizon_uses_the_null_token() {
    let mut cfg = PttConfig::with_horizon(2);
    cfg.m_s = 8;
    cfg.encoder.c = 8;
    cfg.attention.heads = 2;
    assert_eq!(cfg.short_len(), 2);
    assert_eq!(cfg.long_len(), 0);
    let mut s = ParamStore::new();
    let m = PttModel::new(&mut s, cfg, 1).unwrap();
    let r = m.refine(&s, &track(2, &[]), &roi(8, 2)).unwrap();
    assert!(r.confidence > 0.0 && r.confidence < 1.0);
    let one = PttConfig { t: 1, ..cfg };
    let mut s1 = ParamStore::new();
    let m1 = PttModel::new(&mut s1, one, 1).unwrap();
    assert!(m1.refine(&s1, &track(1, &[]), &roi(8, 2)).is_ok());
}

#[test]
fn horizon_mismatch_is_an_error() {
    let mut s = ParamStore::new();
    let m = PttModel::new(&mut s, tiny_cfg(), 1).unwrap();
    let mut g = Graph::new(&s);
    assert!(matches!(
        m.forward(&mut g, &track(5, &[]), &roi(8, 1)),
        Err(ModelError::Horizon { got: 5, want: 6 })
    ));
}

#[test]
fn zero_head_gives_half_confidence() {
    let mut s = ParamStore::new();
    let m = PttModel::new(&mut s, tiny_cfg(), 1).unwrap();
    let last = m.head.layers.last().unwrap();
    let (w, b) = (last.w, last.b.unwrap());
    *s.get_mut(w) = Tensor::zeros(s.get(w).shape());
    *s.get_mut(b) = Tensor::zeros(s.get(b).shape());
    let r = m.refine(&s, &track(6, &[]), &roi(8, 1)).unwrap();
    assert_eq!(r.confidence, 0.5);
    assert_eq!(r.residuals, [0.0; 7]);
    assert_eq!(r.refined, *track(6, &[]).current().unwrap());
}

#[test]
fn point_order_does_not_matter() {
    let mut s = ParamStore::new();
    let m = PttModel::new(&mut s, tiny_cfg(), 4).unwrap();
    let pts = roi(8, 5);
    let tr = track(6, &[1]);
    let a = m.refine(&s, &tr, &pts).unwrap();
    let b = m
        .refine(&s, &tr, &pts.permuted(&[7, 2, 5, 0, 1, 6, 3, 4]))
        .unwrap();
    assert!((a.confidence - b.confidence).abs() < 1e-12);
    for (x, y) in a.residuals.iter().zip(&b.residuals) {
        assert!((x - y).abs() < 1e-9);
    }
}

#[test]
fn loss_terms() {
    let mut s = ParamStore::new();
    let m = PttModel::new(&mut s, tiny_cfg(), 2).unwrap();
    let tr = track(6, &[]);
    let prop = *tr.current().unwrap();
    let pts = roi(8, 3);
    let eval = |alpha: f64| {
        let mut g = Graph::new(&s);
        let out = m.forward(&mut g, &tr, &pts).unwrap();
        let cfg = LossConfig {
            alpha,
            ..LossConfig::default()
        };
        let t = compute_loss(
            &mut g,
            &out,
            &prop,
            Some(&gt_box()),
            &ResidualCoding::WORLD,
            &cfg,
        )
        .unwrap();
        (g.value(t.total).item().unwrap(), t)
    };
    let (l2, t2) = eval(2.0);
    let (l1, _) = eval(1.0);
    assert!(t2.reg > 0.0);
    assert!((l2 - l1 - t2.reg).abs() < 1e-12);
    assert!((l2 - t2.conf - 2.0 * t2.reg).abs() < 1e-12);
    // unmatched proposals carry no regression
    let mut g = Graph::new(&s);
    let out = m.forward(&mut g, &tr, &pts).unwrap();
    let t = compute_loss(
        &mut g,
        &out,
        &prop,
        None,
        &ResidualCoding::WORLD,
        &LossConfig::default(),
    )
    .unwrap();
    assert_eq!(t.reg, 0.0);
}

#[test]
fn perfect_prediction_has_no_regression_loss() {
    let s = ParamStore::new();
    let mut g = Graph::new(&s);
    let prop = gt_box();
    let gt = Box3D {
        x: prop.x + 0.1,
        ..prop
    };
    let target = encode_box(&prop, &gt);
    let out = PttOutput {
        logit: g.leaf(Tensor::scalar(0.0)),
        residuals: g.leaf(Tensor::row(target.to_vec())),
        aux: vec![AuxResiduals {
            name: "short",
            pred: g.leaf(Tensor::from_rows(&[target.to_vec(), vec![9.0; 7]]).unwrap()),
            valid: vec![true, false],
        }],
    };
    let t = compute_loss(
        &mut g,
        &out,
        &prop,
        Some(&gt),
        &ResidualCoding::WORLD,
        &LossConfig::default(),
    )
    .unwrap();
    assert_eq!(t.reg, 0.0);
    // a zero logit costs ln 2 whatever the target
    assert!((t.conf - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn confidence_target_clamps() {
    assert_eq!(confidence_target(0.0), 0.0);
    assert_eq!(confidence_target(0.25), 0.0);
    assert_eq!(confidence_target(0.5), 0.5);
    assert_eq!(confidence_target(0.75), 1.0);
    assert_eq!(confidence_target(1.0), 1.0);
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let mut s = ParamStore::new();
    let m = PttModel::new(&mut s, tiny_cfg(), 7).unwrap();
    let tr = track(6, &[1]);
    let pts = roi(8, 11);
    let prop = *tr.current().unwrap();
    let rep = gradcheck(
        &mut s,
        |g| {
            let out = m.forward(g, &tr, &pts).map_err(|e| TensorError::Invalid {
                op: "forward",
                detail: e.to_string(),
            })?;
            let l = compute_loss(
                g,
                &out,
                &prop,
                Some(&gt_box()),
                &m.cfg.residual,
                &LossConfig::default(),
            )
            .map_err(|e| TensorError::Invalid {
                op: "loss",
                detail: e.to_string(),
            })?;
            Ok(l.total)
        },
        &GradcheckOptions {
            max_coords: Some(12),
            ..GradcheckOptions::default()
        },
    )
    .unwrap();
    for gr in &rep.groups {
        assert!(gr.rel_error < 1e-4, "{gr:?}");
    }
    assert!(rep.groups.iter().any(|g| g.name == "future.q_f"));
}
