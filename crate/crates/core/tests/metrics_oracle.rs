//! Matcher and metrics against exhaustive enumeration.

use audible_core::metrics::{evaluate, frame_prf, match_events, EventMatching, VideoEvents};
use proptest::prelude::*;

/// Best `(pairs, total distance)` over every matching, found by recursion.
fn brute(pred: &[usize], gt: &[usize], used: &mut Vec<bool>, window: usize) -> (usize, usize) {
    let Some((&p, rest)) = pred.split_first() else {
        return (0, 0);
    };
    let mut best = brute(rest, gt, used, window);
    for j in 0..gt.len() {
        if !used[j] && p.abs_diff(gt[j]) <= window {
            used[j] = true;
            let (c, d) = brute(rest, gt, used, window);
            used[j] = false;
            let cand = (c + 1, d + p.abs_diff(gt[j]));
            if cand.0 > best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                best = cand;
            }
        }
    }
    best
}

fn subsets(limit: usize, max_len: usize) -> Vec<Vec<usize>> {
    (0u32..1 << limit)
        .filter(|m| m.count_ones() as usize <= max_len)
        .map(|m| (0..limit).filter(|i| m >> i & 1 == 1).collect())
        .collect()
}

fn check_valid(m: &EventMatching, pred: &[usize], gt: &[usize], window: usize) {
    let mut ps: Vec<usize> = m.pairs.iter().map(|p| p.0).chain(m.unmatched_pred.iter().copied()).collect();
    let mut gs: Vec<usize> = m.pairs.iter().map(|p| p.1).chain(m.unmatched_gt.iter().copied()).collect();
    ps.sort_unstable();
    gs.sort_unstable();
    assert_eq!(ps, pred);
    assert_eq!(gs, gt);
    assert!(m.pairs.iter().all(|&(p, g)| p.abs_diff(g) <= window));
}

#[test]
fn matcher_equals_exhaustive_optimum() {
    // Every pair of subsets of [0, 12) with at most 6 events each would be
    // ~6.3e6 cases; a stride over the second list keeps it exhaustive in the
    // first argument and dense in the second.
    let all = subsets(12, 6);
    let mut checked = 0usize;
    for (i, pred) in all.iter().enumerate() {
        for gt in all.iter().skip(i % 37).step_by(37) {
            for window in [0, 2] {
                let m = match_events(pred, gt, window).unwrap();
                check_valid(&m, pred, gt, window);
                let oracle = brute(pred, gt, &mut vec![false; gt.len()], window);
                assert_eq!((m.pairs.len(), m.total_distance()), oracle, "pred {pred:?} gt {gt:?} w {window}");
                checked += 1;
            }
        }
    }
    assert!(checked > 200_000);
}

fn events() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::btree_set(0usize..40, 0..8).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn unmatched_extra_prediction_never_raises_precision(pred in events(), gt in events(), extra in 0usize..40) {
        prop_assume!(!pred.contains(&extra));
        let before = match_events(&pred, &gt, 2).unwrap();
        let mut more = pred.clone();
        more.push(extra);
        more.sort_unstable();
        let after = match_events(&more, &gt, 2).unwrap();
        prop_assert!(after.pairs.len() >= before.pairs.len());
        prop_assert!(after.pairs.len() <= before.pairs.len() + 1);
        if after.pairs.len() == before.pairs.len() {
            let p0 = frame_prf(&[before]).1;
            let p1 = frame_prf(&[after]).1;
            prop_assert!(p1 <= p0 + 1e-15);
        }
    }

    #[test]
    fn metrics_are_order_invariant_and_bounded(videos in proptest::collection::vec((events(), events()), 1..6), window in 0usize..4) {
        let vs: Vec<VideoEvents> = videos.iter().enumerate()
            .map(|(i, (p, g))| VideoEvents { id: format!("v{i}"), pred: p.clone(), gt: g.clone() })
            .collect();
        let a = evaluate(&vs, window).unwrap();
        let mut rev = vs.clone();
        rev.reverse();
        let b = evaluate(&rev, window).unwrap();
        let fa = [a.recall, a.precision, a.f1, a.nme, a.mae, a.obo];
        let fb = [b.recall, b.precision, b.f1, b.nme, b.mae, b.obo];
        for (x, y) in fa.iter().zip(&fb) {
            prop_assert!((x - y).abs() < 1e-12, "{:?} vs {:?}", fa, fb);
        }
        prop_assert_eq!(a.pme_zero_match_videos, b.pme_zero_match_videos);
        match (a.pme, b.pme) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
        for v in [a.recall, a.precision, a.f1, a.obo] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(a.nme >= 0.0 && a.mae >= 0.0);
    }
}
