mod oracles;

use std::collections::BTreeMap;

use oracles::complexity::{eval_cell, table_mismatches, TABLE};
use proptest::prelude::*;
use ptt_core::geom::Box3D;
use ptt_core::membank::{complexity_model, storage_ratios, ComplexityParams, MemoryBank, Method};
use ptt_core::synth::PointCloud;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn every_table_cell_matches_under_fuzzing(
        f in 1u64..10_000_000,
        n in 1u64..100_000,
        k in 1u64..5_000,
        o in 1u64..64,
        t in 1u64..256,
    ) {
        let p = ComplexityParams { f, n, k, o, t };
        prop_assert_eq!(table_mismatches(&p), vec![]);
    }
}

#[test]
fn table_constants_are_exact() {
    let unit = ComplexityParams {
        f: 1,
        n: 1,
        k: 1,
        o: 1,
        t: 1,
    };
    let consts: Vec<[u64; 3]> = TABLE
        .iter()
        .map(|(m, cells)| {
            let row = complexity_model(*m, &unit);
            assert_eq!(
                [row.rpn, row.point, row.proposal],
                cells.map(|c| eval_cell(c, &unit))
            );
            [row.rpn, row.point, row.proposal]
        })
        .collect();
    assert_eq!(consts, [[4, 8, 16], [4, 8, 1], [4, 1, 64]]);
    assert_eq!(Method::ALL.len(), TABLE.len());
}

#[test]
fn reference_ratios_and_row() {
    let p = ComplexityParams::REFERENCE;
    let r = storage_ratios(&p);
    assert!((r.frame_over_proposals - 355.6).abs() < 0.05);
    assert!((r.points_over_proposals - 56.9).abs() < 0.05);
    assert!((r.frame_over_proposals / 355.0 - 1.0).abs() <= 0.05);
    assert!((r.points_over_proposals / 55.0 - 1.0).abs() <= 0.05);
    let ptt = complexity_model(Method::Ptt64, &p);
    assert_eq!(
        (ptt.rpn, ptt.point, ptt.proposal),
        (2_560_000, 102_400, 115_200)
    );
}

fn cloud(n: usize, shift: f64) -> PointCloud {
    let mut pc = PointCloud::with_capacity(n);
    for i in 0..n {
        pc.push([i as f64 * 0.01 + shift, 0.0, 0.5], 0.5, true);
    }
    pc
}

#[test]
fn replay_storage_curves() {
    let (k, t, n) = (5u64, 16usize, 128usize);
    let mut bank = MemoryBank::new(t);
    for id in 0..k {
        bank.register(id).unwrap();
    }
    let mut curve = Vec::new();
    for f in 0..128 {
        let b = Box3D::new(f as f64, 0.0, 0.5, 2.0, 4.0, 1.5, 0.0, 1.0, 0.0).unwrap();
        let props: BTreeMap<_, _> = (0..k).map(|id| (id, b)).collect();
        let rois: BTreeMap<_, _> = (0..k).map(|id| (id, cloud(n, f as f64))).collect();
        bank.push_frame(&props, &rois).unwrap();
        curve.push(bank.storage_report());
    }
    let point = k as usize * n * 4;
    assert!(curve.iter().all(|r| r.point_scalars == point));
    for (f, r) in curve.iter().enumerate() {
        assert_eq!(r.proposal_scalars, k as usize * (f + 1).min(t) * 9);
    }
    let p = ComplexityParams {
        f: 0,
        n: n as u64 * 4,
        k,
        o: 9,
        t: t as u64,
    };
    let model = ptt_core::membank::ptt_complexity(&p);
    let last = curve.last().unwrap();
    assert_eq!(last.point_scalars as u64, model.point);
    assert_eq!(last.proposal_scalars as u64, model.proposal);
}
