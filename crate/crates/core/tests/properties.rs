mod common;

use misd_core::attack::{self, AttackConfig, Direction};
use misd_core::bench::CountingModel;
use misd_core::data::split_val_test;
use misd_core::metrics::{aurc, auroc, fpr_at_tpr, risk_coverage};
use misd_core::model::Classifier;
use misd_core::radius::{rr_bs, rr_fast, RadiusConfig};
use misd_core::scores::{doctor_from_logits, msr_from_logits, ConfidenceRecord};
use misd_core::tensor::softmax;
use proptest::prelude::*;

fn records_strategy(max_n: usize) -> impl Strategy<Value = Vec<ConfidenceRecord>> {
    prop::collection::vec((0u32..12, prop::bool::weighted(0.3)), 2..max_n).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, (s, wrong))| ConfidenceRecord::new(i, s as f64 / 4.0 - 1.0, 0, usize::from(wrong)))
            .collect()
    })
}

fn has_both(records: &[ConfidenceRecord]) -> bool {
    records.iter().any(|r| r.correct) && records.iter().any(|r| !r.correct)
}

fn mapped(records: &[ConfidenceRecord], f: impl Fn(f64) -> f64) -> Vec<ConfidenceRecord> {
    records
        .iter()
        .map(|r| ConfidenceRecord { score: f(r.score), ..*r })
        .collect()
}

fn each_permutation(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == items.len() {
        f(items);
        return;
    }
    for i in k..items.len() {
        items.swap(k, i);
        each_permutation(items, k + 1, f);
        items.swap(k, i);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_ignore_monotone_rescaling(records in records_strategy(40)) {
        prop_assume!(has_both(&records));
        let g = mapped(&records, |s| (3.0 * s).exp() + 7.0);
        prop_assert_eq!(aurc(&records).unwrap(), aurc(&g).unwrap());
        prop_assert_eq!(auroc(&records).unwrap(), auroc(&g).unwrap());
        prop_assert_eq!(fpr_at_tpr(&records, 0.95).unwrap(), fpr_at_tpr(&g, 0.95).unwrap());
    }

    #[test]
    fn auroc_and_negated_auroc_sum_to_one(mut scores in prop::collection::vec(-1e3f64..1e3, 2..50), split in 1usize..49) {
        scores.sort_by(f64::total_cmp);
        scores.dedup();
        prop_assume!(scores.len() >= 2 && split < scores.len());
        let records: Vec<_> = scores
            .iter()
            .enumerate()
            .map(|(i, &s)| ConfidenceRecord::new(i, s * if i % 2 == 0 { 1.0 } else { -1.0 }, 0, usize::from(i < split)))
            .collect();
        let neg = mapped(&records, |s| -s);
        let total = auroc(&records).unwrap() + auroc(&neg).unwrap();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rates_stay_in_unit_interval(records in records_strategy(60)) {
        let curve = risk_coverage(&records).unwrap();
        let n = records.len() as f64;
        for (k, &(cov, risk)) in curve.iter().enumerate() {
            prop_assert_eq!(cov, (k + 1) as f64 / n);
            prop_assert!((0.0..=1.0).contains(&risk));
        }
        let acc = records.iter().filter(|r| r.correct).count() as f64 / n;
        prop_assert!((curve.last().unwrap().1 - (1.0 - acc)).abs() < 1e-12);
        if has_both(&records) {
            prop_assert!((0.0..=1.0).contains(&auroc(&records).unwrap()));
            prop_assert!((0.0..=1.0).contains(&fpr_at_tpr(&records, 0.95).unwrap()));
        }
    }

    #[test]
    fn softmax_scores_are_probabilities(z in prop::collection::vec(-50.0f64..50.0, 2..12), t in 0.05f64..100.0) {
        let p = softmax(&z, t).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let msr = msr_from_logits(&z, t).unwrap();
        let doc = doctor_from_logits(&z, t).unwrap();
        let k = z.len() as f64;
        prop_assert!(msr >= 1.0 / k - 1e-12 && msr <= 1.0 + 1e-12);
        prop_assert!(doc >= 1.0 / k - 1e-12 && doc <= msr + 1e-12);
    }

    #[test]
    fn wrong_last_ranking_minimizes_aurc(correct in prop::collection::vec(any::<bool>(), 1..8)) {
        let mut best = correct.clone();
        best.sort_by_key(|&c| !c);
        let best_aurc = aurc(&common::records_in_order(&best)).unwrap();
        let mut worst = best.clone();
        worst.reverse();
        let worst_aurc = aurc(&common::records_in_order(&worst)).unwrap();
        let mut order: Vec<usize> = (0..correct.len()).collect();
        each_permutation(&mut order, 0, &mut |perm| {
            let ranked: Vec<bool> = perm.iter().map(|&i| correct[i]).collect();
            let a = common::aurc_in_order(&ranked);
            assert!(a >= best_aurc - 1e-12 && a <= worst_aurc + 1e-12);
        });
    }

    #[test]
    fn split_partitions_the_pool(n in 2usize..500, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let s = split_val_test(n, frac, seed).unwrap();
        let mut all: Vec<usize> = s.val_indices.iter().chain(&s.test_indices).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.val_indices.len(), (frac * n as f64).round() as usize);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attacks_stay_inside_the_budget(seed in 0u64..1000, eps in 0.0f64..0.5, x in prop::collection::vec(-1.0f64..1.0, 6)) {
        let model = Classifier::init(&[6, 8, 3], seed).unwrap();
        let cm = CountingModel::new(&model);
        for dir in [Direction::Ascent, Direction::Descent] {
            let a = attack::fgsm(&cm, &x, 1, eps, 1.0, dir, None).unwrap();
            let p = attack::pgd(&cm, &x, 1, &AttackConfig::pgd(eps, 5), 1.0, dir).unwrap();
            for adv in [a, p] {
                let dist = adv.iter().zip(&x).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                prop_assert!(dist <= eps + 1e-12);
            }
        }
    }

    #[test]
    fn radius_brackets_hold_on_random_networks(seed in 0u64..1000, x in prop::collection::vec(-1.0f64..1.0, 5)) {
        let model = Classifier::init(&[5, 16, 16, 4], seed).unwrap();
        let config = RadiusConfig::default();
        let cm = CountingModel::new(&model);
        let est = rr_bs(&cm, &x, &config).unwrap();
        prop_assert!(est.forward_passes <= 25 && est.backward_passes == 1);
        prop_assert!(est.value > 0.0);
        if let Some(b) = est.bracket {
            prop_assert!(b.lo < est.value && est.value < b.hi);
            let y = model.predict(&x).unwrap();
            let d = attack::fgsm_direction(&CountingModel::new(&model), &x, 1.0).unwrap();
            let at = |r: f64| model.predict(&x.iter().zip(&d).map(|(a, b)| a + r * b).collect::<Vec<_>>()).unwrap();
            prop_assert_eq!(at(b.lo), y);
            prop_assert_ne!(at(b.hi), y);
        }
        let fast = rr_fast(&cm, &x, &config).unwrap();
        prop_assert_eq!((fast.forward_passes, fast.backward_passes), (2, 1));
        prop_assert!(fast.value > 0.0);
    }
}
