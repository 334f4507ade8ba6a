use proptest::prelude::*;
use std::collections::BTreeSet;
use vulforge::ensembles::{alpha_for, hard_vote, route, soft_vote, update_weights, BoostVariant, Routing};
use vulforge::ingest::{bootstrap, stratified_split, Split};
use vulforge::metrics::{average_rank, ScoreTable, TieRule};
use vulforge::synth::shaped;
use vulforge::ProbVector;

fn prob_rows(k: usize) -> impl Strategy<Value = Vec<ProbVector>> {
    prop::collection::vec(prop::collection::vec(0.01f64..1.0, k), 1..8).prop_map(|rows| {
        rows.into_iter()
            .map(|r| {
                let s: f64 = r.iter().sum();
                ProbVector::validate(&r.iter().map(|v| v / s).collect::<Vec<_>>()).unwrap()
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn soft_vote_stays_inside_member_range(rows in (2usize..5).prop_flat_map(prob_rows)) {
        let refs: Vec<&ProbVector> = rows.iter().collect();
        let p = soft_vote(&refs).unwrap();
        for c in 0..p.class_count() {
            let lo = rows.iter().map(|r| r.as_slice()[c]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r.as_slice()[c]).fold(0.0, f64::max);
            prop_assert!(p.as_slice()[c] >= lo - 1e-12 && p.as_slice()[c] <= hi + 1e-12);
        }
    }

    #[test]
    fn unanimous_members_decide_hard_vote(rows in (2usize..5).prop_flat_map(prob_rows)) {
        let refs: Vec<&ProbVector> = rows.iter().collect();
        let labels: BTreeSet<usize> = rows.iter().map(|r| r.decide().0).collect();
        if labels.len() == 1 {
            prop_assert_eq!(hard_vote(&refs).unwrap().decide().0, *labels.iter().next().unwrap());
        }
    }

    #[test]
    fn one_hot_gate_returns_that_expert(rows in prob_rows(3), pick in 0usize..8) {
        let refs: Vec<&ProbVector> = rows.iter().collect();
        let j = pick % rows.len();
        let mut gate = vec![0.0; rows.len()];
        gate[j] = 1.0;
        prop_assert_eq!(route(Routing::Soft, &refs, &gate).unwrap(), rows[j].clone());
        prop_assert_eq!(route(Routing::Hard, &refs, &gate).unwrap(), rows[j].clone());
    }

    #[test]
    fn reweighting_puts_half_the_mass_on_misses(
        raw in prop::collection::vec(0.01f64..1.0, 2..40),
        miss_bits in prop::collection::vec(any::<bool>(), 40),
    ) {
        let s: f64 = raw.iter().sum();
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let miss = &miss_bits[..w.len()];
        let eps: f64 = w.iter().zip(miss).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        prop_assume!(eps > 1e-3 && eps < 0.5);
        let alpha = alpha_for(BoostVariant::BinaryAdaboost, eps, 2);
        let (next, _) = update_weights(BoostVariant::BinaryAdaboost, &w, miss, alpha);
        prop_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let on_misses: f64 = next.iter().zip(miss).filter(|(_, &m)| m).map(|(v, _)| v).sum();
        prop_assert!((on_misses - 0.5).abs() < 1e-9);
    }

    #[test]
    fn average_ranks_sum_to_triangular_number(
        scores in prop::collection::vec(prop::collection::vec(0u8..6, 5), 1..12),
    ) {
        let values = vec![scores.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()];
        let table = ScoreTable {
            methods: (0..5).map(|i| format!("m{i}")).collect(),
            instances: (0..scores.len()).map(|i| format!("i{i}")).collect(),
            metrics: vec!["f1".into()],
            values,
        };
        let r = average_rank(&table, TieRule::Average).unwrap();
        prop_assert!((r.averages[0].iter().sum::<f64>() - 15.0).abs() < 1e-9);
    }

    #[test]
    fn split_and_bootstrap_preserve_classes(a in 10usize..300, b in 10usize..300, seed in any::<u64>()) {
        let d = shaped("p", &[a, b]).unwrap();
        let s = stratified_split(&d, seed).unwrap();
        let mut seen: Vec<&String> = Split::ALL.iter().flat_map(|&sp| s.ids(sp)).collect();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), a + b);
        let plan = bootstrap(&d, &s, 2, seed).unwrap();
        let want = s.class_counts(&d, Split::Train);
        for draw in &plan.draws {
            let mut got = vec![0; 2];
            for id in draw {
                got[d.label_of(id).unwrap().0] += 1;
            }
            prop_assert_eq!(&got, &want);
        }
    }
}
