mod oracles;

use oracles::permutation::permutation_error;
use proptest::prelude::*;
use ptt_core::diagnostics::{run_gradcheck, GradModule};
use ptt_core::geom::bev_iou;
use ptt_core::pipeline::Streamer;
use ptt_core::synth::{generate_sequence, Jitter, ObjectMotion, SceneConfig};
use ptt_core::tensor::GradcheckOptions;
use ptt_core::train::{TrainConfig, Trainer};

#[test]
fn gradient_suite_passes_for_every_module() {
    for m in GradModule::ALL {
        let rep = run_gradcheck(m, &GradcheckOptions::default()).unwrap();
        assert!(rep.passes(1e-4), "{m}: {:?}", rep.groups);
    }
    let rep = run_gradcheck(GradModule::Future, &GradcheckOptions::default()).unwrap();
    assert!(rep.groups.iter().any(|g| g.name == "future.q_f"));
    assert!(rep.groups.iter().any(|g| g.name.starts_with("future.head")));
    let rep = run_gradcheck(GradModule::Short, &GradcheckOptions::default()).unwrap();
    assert!(rep.groups.iter().any(|g| g.name.starts_with("short.head")));
}

#[test]
fn gradient_suite_flags_an_injected_fault() {
    let opts = GradcheckOptions {
        inject_fault: Some(1e-2),
        ..GradcheckOptions::default()
    };
    let rep = run_gradcheck(GradModule::Head, &opts).unwrap();
    assert!(!rep.passes(1e-4));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn refinement_ignores_point_order(seed in any::<u64>(), model_seed in 0u64..4) {
        let err = permutation_error(seed, model_seed);
        prop_assert!(err < 1e-9, "{err}");
    }
}

#[test]
fn overfits_a_single_static_object() {
    let mut ds = generate_sequence(&SceneConfig {
        num_objects: 1,
        num_frames: 1,
        motions: vec![ObjectMotion {
            speed: 0.0,
            turn_rate: 0.0,
            start: Some([10.0, 3.0, 0.4]),
        }],
        seed: 5,
        ..SceneConfig::default()
    });
    let frame = ds.frames[0].clone();
    ds.frames = vec![frame; 50];
    let mut cfg = TrainConfig::default();
    cfg.model = ptt_core::model::PttConfig::with_horizon(4);
    cfg.model.encoder.c = 16;
    cfg.model.attention.heads = 2;
    cfg.model.m_f = 2;
    cfg.stream.jitter = Jitter {
        center_sigma: 0.05,
        size_sigma: 0.05,
        heading_sigma: 0.02,
        velocity_sigma: 0.01,
    };
    cfg.resample_jitter = false;
    cfg.epochs = 20;
    cfg.max_steps = Some(200);

    // the proposal is well inside the full-confidence regime
    let (pseed, rseed) = ptt_core::train::epoch_seeds(cfg.seed, 0, false);
    let mut s = Streamer::new(cfg.stream, cfg.model.t, pseed, rseed);
    let sample = s.step(&ds.frames[0]).unwrap().remove(0);
    let iou = bev_iou(&sample.proposal.bbox, &sample.gt.unwrap());
    assert!(iou >= 0.75, "{iou}");

    let mut t = Trainer::new(cfg).unwrap();
    t.train(&ds).unwrap();
    assert_eq!(t.step_losses.len(), 200);
    let initial = t.step_losses[0];
    let tail = &t.step_losses[195..];
    let last = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(last <= 0.1 * initial, "initial {initial}, final {last}");
}
