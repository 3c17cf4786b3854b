use proptest::prelude::*;

use fairinfl::data::{balance_resample, load_csv, CsvOptions};
use fairinfl::influence::{ntk, InfluenceTable};
use fairinfl::pipeline::{accuracy, fairness_violation, prune, rank_for_prune, removal_count, PruneStrategy, StrategyKind};
use fairinfl::{Architecture, Dataset, Label, ModelParams, ModelSnapshot};

fn dataset_strategy(max_n: usize) -> impl Strategy<Value = Dataset> {
    (1usize..4, 2usize..max_n).prop_flat_map(|(d, n)| {
        (
            prop::collection::vec(-5.0f64..5.0, n * d),
            prop::collection::vec(any::<bool>(), n),
            prop::collection::vec(0u32..2, n),
        )
            .prop_map(move |(x, y, mut z)| {
                // both groups present
                z[0] = 0;
                z[1] = 1;
                let y = y.into_iter().map(|p| if p { Label::Pos } else { Label::Neg }).collect();
                Dataset::new(x, d, y, z, Some(2)).unwrap()
            })
    })
}

fn table_strategy() -> impl Strategy<Value = InfluenceTable> {
    (1usize..40).prop_flat_map(|n| {
        (prop::collection::vec(-1e3f64..1e3, n), prop::collection::vec(-1e3f64..1e3, n))
            .prop_map(|(f, l)| InfluenceTable::from_scores(&f, &l).unwrap())
    })
}

fn affine_for(data: &Dataset, seed: &[f64]) -> ModelSnapshot {
    let w: Vec<f64> = (0..data.dim()).map(|k| seed[k % seed.len()]).collect();
    ModelSnapshot::new(ModelParams::affine(&w, seed[0] * 0.5).unwrap(), "t")
}

fn is_permutation(order: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    order.len() == n && order.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

proptest! {
    #[test]
    fn prune_order_is_a_permutation(table in table_strategy(), seed in any::<u64>(), flip in any::<bool>()) {
        for kind in StrategyKind::ALL {
            let order = rank_for_prune(PruneStrategy { kind, order_flip: flip }, &table, seed).unwrap();
            prop_assert!(is_permutation(&order, table.len()));
        }
    }

    #[test]
    fn prune_order_ignores_positive_rescaling(table in table_strategy(), exp in -8i32..8) {
        let c = 2f64.powi(exp);
        let scaled = InfluenceTable::from_scores(
            &table.fairness_scores().iter().map(|v| v * c).collect::<Vec<_>>(),
            &table.loss_scores().iter().map(|v| -v * c).collect::<Vec<_>>(),
        ).unwrap();
        for kind in [StrategyKind::ByFairness, StrategyKind::ByAccuracy] {
            let s = PruneStrategy::new(kind);
            prop_assert_eq!(rank_for_prune(s, &table, 0).unwrap(), rank_for_prune(s, &scaled, 0).unwrap());
        }
    }

    #[test]
    fn flipped_order_reverses_distinct_scores(table in table_strategy()) {
        let mut keys: Vec<f64> = table.fairness_scores().iter().map(|v| v.abs()).collect();
        keys.sort_by(f64::total_cmp);
        prop_assume!(keys.windows(2).all(|w| w[0] < w[1]));
        let fwd = rank_for_prune(PruneStrategy::new(StrategyKind::ByFairness), &table, 0).unwrap();
        let mut back = rank_for_prune(PruneStrategy { kind: StrategyKind::ByFairness, order_flip: true }, &table, 0).unwrap();
        back.reverse();
        prop_assert_eq!(fwd, back);
    }

    #[test]
    fn prune_partitions_the_data(data in dataset_strategy(60), keep in 0.05f64..=1.0, seed in any::<u64>()) {
        let n = data.len();
        let table = InfluenceTable::from_scores(&vec![0.0; n], &vec![0.0; n]).unwrap();
        let order = rank_for_prune(PruneStrategy::new(StrategyKind::Random), &table, seed).unwrap();
        let removed = removal_count(n, keep);
        prop_assume!(removed < n);
        let kept = prune(&data, &order, keep).unwrap();
        prop_assert_eq!(kept.len(), n - removed);
        let mut survivors: Vec<usize> = order[removed..].to_vec();
        survivors.sort_unstable();
        prop_assert_eq!(kept, data.subset(&survivors).unwrap());
    }

    #[test]
    fn metrics_ignore_row_order(data in dataset_strategy(60), w in prop::collection::vec(-2.0f64..2.0, 1..4), seed in any::<u64>()) {
        let snap = affine_for(&data, &w);
        let n = data.len();
        let table = InfluenceTable::from_scores(&vec![0.0; n], &vec![0.0; n]).unwrap();
        let perm = rank_for_prune(PruneStrategy::new(StrategyKind::Random), &table, seed).unwrap();
        let shuffled = data.subset(&perm).unwrap();
        prop_assert_eq!(accuracy(&snap, &data).unwrap(), accuracy(&snap, &shuffled).unwrap());
        prop_assert_eq!(
            fairness_violation(&snap, &data).unwrap(),
            fairness_violation(&snap, &shuffled).unwrap()
        );
    }

    #[test]
    fn dataset_csv_round_trip(data in dataset_strategy(40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        data.save_csv(&path).unwrap();
        prop_assert_eq!(load_csv(&path, CsvOptions::default()).unwrap(), data);
    }

    #[test]
    fn influence_csv_round_trip(table in table_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        table.save_csv(&path).unwrap();
        prop_assert_eq!(InfluenceTable::load_csv(&path).unwrap(), table);
    }

    #[test]
    fn balancing_equalizes_groups(data in dataset_strategy(80), seed in any::<u64>()) {
        let cells = [(0, Label::Neg), (0, Label::Pos), (1, Label::Neg), (1, Label::Pos)];
        match balance_resample(&data, seed) {
            Ok(balanced) => {
                prop_assert_eq!(balanced.mean_group(), 0.5);
                let target = balanced.cell_count(0, Label::Neg);
                for (z, y) in cells {
                    prop_assert_eq!(balanced.cell_count(z, y), target);
                }
            }
            Err(_) => prop_assert!(cells.iter().any(|&(z, y)| data.cell_count(z, y) == 0)),
        }
    }

    #[test]
    fn kernel_is_symmetric(
        values in prop::collection::vec(-3.0f64..3.0, 3 * 5 + 2 * 5 + 1),
        a in prop::collection::vec(-3.0f64..3.0, 3),
        b in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let snap = ModelSnapshot::new(ModelParams::from_flat(Architecture::Mlp { d: 3, h: 5 }, values).unwrap(), "k");
        prop_assert_eq!(ntk(&snap, &a, &b).unwrap(), ntk(&snap, &b, &a).unwrap());
        prop_assert!(ntk(&snap, &a, &a).unwrap() >= 0.0);
    }
}
