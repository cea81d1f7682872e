mod common;

use common::*;
use motion_style::eval::{build_pairs, evaluate_pairs};
use motion_style::metrics::{metric_cc, metric_sc, metric_scpp, motion_distance, EvalPair, IdentityTransfer};
use motion_style::motion::{MotionSequence, JOINT_DIM, VEL_DIM};
use proptest::prelude::*;

const NJ: usize = 2;

/// Motion whose joint channels are all `v`; root and velocity random.
fn flat(v: f64, t: usize, style: &str, content: &str, seed: u64) -> MotionSequence {
    let r = tapegrad::Tensor::randn(vec![t * (JOINT_DIM + VEL_DIM)], 1.0, &mut rng(seed)).data().to_vec();
    MotionSequence::new(NJ, vec![v; t * NJ * JOINT_DIM], r[..t * JOINT_DIM].to_vec(), Some(r[t * JOINT_DIM..].to_vec()), 60.0)
        .unwrap()
        .with_labels(labels(style, content))
}

#[test]
fn distance_hand_example() {
    // per joint vector difference of all ones has norm sqrt 7
    let a = flat(0.0, 3, "a", "b", 1);
    let b = flat(1.0, 3, "a", "b", 2);
    let d = motion_distance(&a, &b).unwrap();
    assert!((d - 3.0 * NJ as f64 * 7f64.sqrt()).abs() < 1e-12);
    // truncation to the shorter motion
    let c = flat(1.0, 5, "a", "b", 3);
    assert_eq!(motion_distance(&a, &c).unwrap(), d);
}

#[test]
fn cc_and_scpp_hand_examples() {
    let s7 = 7f64.sqrt() * NJ as f64;
    let c = flat(0.0, 2, "angry", "walk", 1);
    let s = flat(0.0, 2, "angry", "punch", 2);
    let g = flat(1.0, 2, "x", "x", 3);
    let pairs = vec![EvalPair { content: c, style: s, generated: g }];
    assert!((metric_cc(&pairs).unwrap() - 2.0 * s7).abs() < 1e-12);
    // cell (walk, angry) holds clips at distances 1 and 3 per unit: mean 2
    let train = vec![flat(0.0, 2, "angry", "walk", 4), flat(4.0, 2, "angry", "walk", 5), flat(9.0, 2, "old", "walk", 6)];
    let r = metric_scpp(&pairs, &train).unwrap();
    assert!((r.value - 2.0 * 2.0 * s7).abs() < 1e-12, "{}", r.value);
    assert_eq!((r.used, r.skipped), (1, 0));
    assert!(metric_sc(&pairs).is_err());
}

#[test]
fn identity_transfer_has_zero_cc() {
    let test: Vec<_> = [("a", "w"), ("a", "p"), ("b", "w"), ("b", "p")]
        .iter()
        .enumerate()
        .map(|(i, (s, c))| flat(i as f64, 4, s, c, i as u64))
        .collect();
    let pairs = build_pairs(&IdentityTransfer, &test).unwrap();
    assert_eq!(pairs.len(), 12);
    assert_eq!(metric_cc(&pairs).unwrap(), 0.0);
}

#[test]
fn metrics_ignore_global_channels() {
    let mk = |seed| flat(seed as f64 * 0.3, 3, "a", "w", seed);
    let pairs = vec![EvalPair { content: mk(1), style: mk(2), generated: mk(3) }];
    let moved = |ms: &MotionSequence| {
        let root: Vec<f64> = ms.root().iter().map(|v| v + 100.0).collect();
        MotionSequence::new(NJ, ms.joints().to_vec(), root, Some(vec![5.0; ms.velocity().len()]), 60.0).unwrap().with_labels(ms.labels.clone())
    };
    let shifted: Vec<EvalPair> =
        pairs.iter().map(|p| EvalPair { content: moved(&p.content), style: moved(&p.style), generated: moved(&p.generated) }).collect();
    assert_eq!(metric_cc(&pairs).unwrap(), metric_cc(&shifted).unwrap());
    assert_eq!(metric_sc(&pairs).unwrap(), metric_sc(&shifted).unwrap());
}

#[test]
fn unlabeled_motions_are_an_error() {
    let a = MotionSequence::new(NJ, vec![0.0; 2 * NJ * JOINT_DIM], vec![0.0; 2 * JOINT_DIM], Some(vec![0.0; 2 * VEL_DIM]), 60.0).unwrap();
    let pairs = vec![EvalPair { content: a.clone(), style: a.clone(), generated: a }];
    assert!(metric_cc(&pairs).is_err());
}

#[test]
fn report_splits_and_na_columns() {
    let test = vec![flat(0.0, 3, "a", "w", 1), flat(1.0, 3, "a", "p", 2), flat(2.0, 3, "b", "w", 3)];
    let train = vec![flat(0.5, 3, "a", "w", 4), flat(1.5, 3, "b", "p", 5)];
    let pairs = build_pairs(&IdentityTransfer, &test).unwrap();
    let report = evaluate_pairs(&pairs, &train).unwrap();

    let cc = report.get("overall", "all", "CC").unwrap();
    assert_eq!(cc.average, Some(0.0));
    assert_eq!(cc.pairs, 2);
    // same-style pairs never share content here
    assert_eq!(cc.same_content, None);
    let sc = report.get("overall", "all", "SC").unwrap();
    assert_eq!(sc.pairs, 2);
    assert_eq!(sc.average, Some(metric_sc(&pairs).unwrap()));
    let scpp = report.get("overall", "all", "SC++").unwrap();
    let direct = metric_scpp(&pairs, &train).unwrap();
    assert_eq!(scpp.average, Some(direct.value));
    assert_eq!(report.scpp_skipped, direct.skipped);
    assert!(report.get("style", "b", "CC").is_some());
    assert!(report.get("content", "p", "SC").is_some());

    let csv = report.to_csv().unwrap();
    assert!(csv.starts_with("group,category,metric,average,same_content,diff_content,pairs\n"));
    assert!(csv.contains("NA"));
}

proptest! {
    #[test]
    fn distance_is_symmetric_under_truncation(t1 in 2usize..6, t2 in 2usize..6, seed in 0u64..500) {
        let mut r = rng(seed);
        let mut make = |t: usize| {
            let j = tapegrad::Tensor::randn(vec![t * NJ * JOINT_DIM], 1.0, &mut r).data().to_vec();
            MotionSequence::new(NJ, j, vec![0.0; t * JOINT_DIM], Some(vec![0.0; t * VEL_DIM]), 60.0).unwrap()
        };
        let (a, b) = (make(t1), make(t2));
        let ab = motion_distance(&a, &b).unwrap();
        prop_assert!((ab - motion_distance(&b, &a).unwrap()).abs() < 1e-12);
        let n = t1.min(t2);
        let cut = motion_distance(&a.slice(0, n).unwrap(), &b.slice(0, n).unwrap()).unwrap();
        prop_assert!((ab - cut).abs() < 1e-12);
    }

    #[test]
    fn metrics_do_not_depend_on_pair_order(seed in 0u64..200) {
        let cells = [("a", "w"), ("a", "p"), ("b", "w"), ("b", "p")];
        let test: Vec<_> = cells.iter().enumerate().map(|(i, (s, c))| flat(i as f64 + 0.1 * seed as f64, 3, s, c, seed + i as u64)).collect();
        let train: Vec<_> = cells.iter().enumerate().map(|(i, (s, c))| flat(2.0 * i as f64, 3, s, c, 99 + i as u64)).collect();
        let mut pairs: Vec<_> = build_pairs(&IdentityTransfer, &test).unwrap();
        let g = |p: &mut EvalPair, k: f64| p.generated = flat(k, 3, "x", "x", 7);
        for (k, p) in pairs.iter_mut().enumerate() { g(p, k as f64 * 0.25); }
        let forward = (metric_cc(&pairs).unwrap(), metric_sc(&pairs).unwrap(), metric_scpp(&pairs, &train).unwrap().value);
        pairs.reverse();
        let back = (metric_cc(&pairs).unwrap(), metric_sc(&pairs).unwrap(), metric_scpp(&pairs, &train).unwrap().value);
        prop_assert!((forward.0 - back.0).abs() < 1e-9 && (forward.1 - back.1).abs() < 1e-9 && (forward.2 - back.2).abs() < 1e-9);
    }
}
