use proptest::prelude::*;
use rankprobe_core::footprint::{
    aggregate, classify_trend, default_thresholds, stall_layer, trend_counts, value_rank,
    ClassifiedCase, TrendThresholds, ValueRankList,
};
use rankprobe_core::nn::argmax;
use rankprobe_core::DefectType;

/// Sorts a copy descending and assigns competition ranks by exhaustive comparison.
fn sorted_rank_oracle(s: &[f64], c: usize) -> usize {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let mut ranks = vec![0; s.len()];
    for (pos, &i) in order.iter().enumerate() {
        ranks[i] = if pos > 0 && s[order[pos - 1]] == s[i] {
            ranks[order[pos - 1]]
        } else {
            pos + 1
        };
    }
    ranks[c]
}

fn probs() -> impl Strategy<Value = (Vec<f64>, usize)> {
    // small integer grid so exact ties are common
    prop::collection::vec(0u8..6, 1..=6).prop_flat_map(|raw| {
        let n = raw.len();
        let total: f64 = raw.iter().map(|&v| v as f64 + 1.0).sum();
        let s: Vec<f64> = raw.iter().map(|&v| (v as f64 + 1.0) / total).collect();
        (Just(s), 0..n)
    })
}

fn list(ranks: Vec<usize>) -> ValueRankList {
    ValueRankList {
        ranks,
        true_label: 0,
        case_id: 0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn rank_matches_sort_oracle((s, c) in probs()) {
        prop_assert_eq!(value_rank(&s, c).unwrap(), sorted_rank_oracle(&s, c));
    }

    #[test]
    fn rank_is_bounded_and_argmax_is_first((s, c) in probs()) {
        let r = value_rank(&s, c).unwrap();
        prop_assert!(r >= 1 && r <= s.len());
        prop_assert_eq!(value_rank(&s, argmax(&s)).unwrap(), 1);
    }

    #[test]
    fn rank_survives_monotone_transforms((s, c) in probs()) {
        let r = value_rank(&s, c).unwrap();
        let cubed: Vec<f64> = s.iter().map(|v| v * v * v).collect();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        let total: f64 = exp.iter().sum();
        let renorm: Vec<f64> = exp.iter().map(|v| v / total).collect();
        let affine: Vec<f64> = s.iter().map(|v| 3.0 * v - 1.0).collect();
        prop_assert_eq!(value_rank(&cubed, c).unwrap(), r);
        prop_assert_eq!(value_rank(&renorm, c).unwrap(), r);
        prop_assert_eq!(value_rank(&affine, c).unwrap(), r);
    }

    #[test]
    fn rank_survives_permutation((s, c) in probs(), rot in 0usize..6) {
        let n = s.len();
        let k = rot % n;
        let rotated: Vec<f64> = (0..n).map(|i| s[(i + k) % n]).collect();
        let new_c = (c + n - k) % n;
        prop_assert_eq!(value_rank(&rotated, new_c).unwrap(), value_rank(&s, c).unwrap());
        let reversed: Vec<f64> = s.iter().rev().copied().collect();
        prop_assert_eq!(value_rank(&reversed, n - 1 - c).unwrap(), value_rank(&s, c).unwrap());
    }
}

proptest! {
    #[test]
    fn classify_is_total_and_follows_the_table(
        mut ranks in prop::collection::vec(1usize..8, 2..10),
        last in 2usize..8,
        ta in 1usize..4,
        td in 1usize..4,
    ) {
        *ranks.last_mut().unwrap() = last;
        let th = TrendThresholds::new(ta, td).unwrap();
        let d = classify_trend(&list(ranks.clone()), th).unwrap();
        let tc = trend_counts(&ranks);
        let expected = match (tc.improving >= ta, tc.worsening >= td) {
            (true, false) => DefectType::SD,
            (false, true) => DefectType::UTD,
            _ => DefectType::ITD,
        };
        prop_assert_eq!(d, expected);
        prop_assert!(tc.improving + tc.worsening < ranks.len());
    }

    #[test]
    fn aggregate_ratios_sum_to_one(defects in prop::collection::vec(0usize..3, 1..300)) {
        let cases: Vec<ClassifiedCase> = defects
            .iter()
            .enumerate()
            .map(|(i, &d)| ClassifiedCase { case_id: i, defect: DefectType::ALL[d], ranks: vec![2, 2] })
            .collect();
        let r = aggregate(cases);
        let total: f64 = r.ratios.values().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert_eq!(r.counts.values().sum::<usize>(), defects.len());
        let dom = r.dominant.unwrap();
        prop_assert!(r.counts.values().all(|&c| c <= r.counts[&dom]));
    }

    #[test]
    fn stall_layer_is_in_range(ranks in prop::collection::vec(1usize..8, 2..10)) {
        let n = ranks.len();
        let l = stall_layer(&list(ranks.clone()));
        prop_assert!(l >= 1 && l < n);
        // nothing improves from the stall layer on, unless capped at the last pair
        if l < n - 1 {
            prop_assert!(ranks[l - 1..].windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

#[test]
fn truth_table_fixtures() {
    let th = TrendThresholds::new(1, 1).unwrap();
    let cases = [
        (vec![5, 4, 3, 2, 2], DefectType::SD),
        (vec![2, 3, 4, 6, 6], DefectType::UTD),
        (vec![4, 4, 4, 4, 4], DefectType::ITD),
        (vec![3, 5, 2, 6, 4], DefectType::ITD),
    ];
    for (ranks, want) in cases {
        assert_eq!(
            classify_trend(&list(ranks.clone()), th).unwrap(),
            want,
            "{ranks:?}"
        );
    }
    assert_eq!(default_thresholds(2).unwrap().ascend, 1);
    assert_eq!(default_thresholds(5).unwrap().ascend, 1);
    assert_eq!(default_thresholds(8).unwrap().descend, 2);
    assert!(default_thresholds(1).is_err());
}

#[test]
fn reported_table_ratios() {
    let mut cases = Vec::new();
    for (d, n) in [
        (DefectType::ITD, 763),
        (DefectType::UTD, 11),
        (DefectType::SD, 226),
    ] {
        for _ in 0..n {
            cases.push(ClassifiedCase {
                case_id: cases.len(),
                defect: d,
                ranks: vec![2, 2],
            });
        }
    }
    let r = aggregate(cases);
    assert_eq!(r.ratios[&DefectType::ITD], 0.763);
    assert_eq!(r.ratios[&DefectType::UTD], 0.011);
    assert_eq!(r.ratios[&DefectType::SD], 0.226);
    assert_eq!(r.dominant, Some(DefectType::ITD));
}
