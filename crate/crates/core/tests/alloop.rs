//! Bookkeeping contracts of the active-learning loop on a tiny committee.

use advsamp::alloop::{
    compare_strategies, initial_dataset, records_csv, run_active_learning, run_generation, CommitteeConfig,
    LoopConfig, SaveCommittees, Strategy,
};
use advsamp::{Error, PotentialSpec};

fn tiny(generations: usize, seed: u64) -> LoopConfig {
    let mut cfg = LoopConfig {
        generations,
        seed,
        save_committees: SaveCommittees::None,
        committee: CommitteeConfig {
            members: 3,
            hidden_layers: 1,
            hidden_units: 8,
            ..CommitteeConfig::default()
        },
        ..LoopConfig::default()
    };
    cfg.potential.initial_candidates = 200;
    cfg.train.epochs = 15;
    cfg.attack.steps = 20;
    cfg.attack.learning_rate = 0.05;
    cfg.eval.resolution = 20;
    cfg
}

#[test]
fn datasets_grow_monotonically_with_fresh_labels() {
    for strategy in [Strategy::Adversarial, Strategy::Random] {
        let cfg = LoopConfig {
            strategy,
            ..tiny(3, 4)
        };
        let out = run_active_learning(&cfg, None).unwrap();
        assert_eq!(out.records.len(), 3);
        let mut n = out.initial_size;
        for r in &out.records {
            assert_eq!(r.n_train, n);
            assert!(r.n_selected <= cfg.selection.max_new);
            assert_eq!(r.saturated, r.n_selected == 0);
            assert_eq!(r.new_energies.len(), r.n_selected);
            n += r.n_selected;
        }
        assert_eq!(out.final_dataset.len(), n);
        let selected: usize = out.records.iter().map(|r| r.n_selected).sum();
        assert_eq!(selected, out.final_dataset.len() - out.initial_size);

        let (initial, _) = initial_dataset(&cfg).unwrap();
        assert_eq!(&out.final_dataset[..initial.len()], &initial[..]);
        assert_eq!(&out.final_dataset[..out.last_training_set.len()], &out.last_training_set[..]);

        let spec = PotentialSpec::DoubleWell;
        for s in &out.final_dataset {
            assert!((spec.evaluate_energy(&s.configuration).unwrap() - s.energy).abs() <= 1e-12 * s.energy.abs().max(1.0));
            for (a, b) in spec.evaluate_forces(&s.configuration).unwrap().iter().zip(&s.forces) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
    }
}

#[test]
fn one_generation_adds_at_most_max_new() {
    let cfg = tiny(1, 9);
    let out = run_active_learning(&cfg, None).unwrap();
    assert_eq!(out.records.len(), 1);
    assert!(out.final_dataset.len() - out.initial_size <= cfg.selection.max_new);
}

#[test]
fn rejected_candidates_leave_the_dataset_unchanged() {
    let mut cfg = tiny(1, 2);
    cfg.potential.energy_ceiling = Some(-100.0);
    let (data, _) = initial_dataset(&cfg).unwrap();
    let g = run_generation(&data, &cfg, 1).unwrap();
    assert!(g.new_samples.is_empty());
    assert!(g.record.saturated);
    assert_eq!(g.record.n_selected, 0);
    assert!(g.record.median_new_energy.is_nan());
}

#[test]
fn same_seed_gives_identical_records() {
    let cfg = tiny(2, 17);
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = run_active_learning(&cfg, Some(dir_a.path())).unwrap();
    let b = run_active_learning(&cfg, Some(dir_b.path())).unwrap();
    assert_eq!(records_csv(&a.records), records_csv(&b.records));
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("records.csv")).unwrap();
    assert_eq!(read(&dir_a), read(&dir_b));
    for g in 1..=2 {
        for f in ["dataset.csv", "loss_curves.csv", "candidates.csv", "selection.csv"] {
            assert!(dir_a.path().join(format!("gen_{g}")).join(f).exists(), "gen_{g}/{f}");
        }
    }
}

#[test]
fn comparison_medians_of_two_runs_are_midpoints() {
    let cfg = tiny(2, 5);
    let rnd = LoopConfig {
        strategy: Strategy::Random,
        ..cfg.clone()
    };
    let cmp = compare_strategies(&cfg, &rnd, 2, None).unwrap();
    assert_eq!(cmp.summary.len(), 4);
    for (k, strategy) in [Strategy::Adversarial, Strategy::Random].into_iter().enumerate() {
        let runs = cmp.completed(strategy);
        assert_eq!(runs.len(), 2);
        for row in cmp.summary.iter().filter(|r| r.strategy == strategy) {
            let vals: Vec<f64> = runs.iter().map(|r| r.records[row.generation - 1].rmse).collect();
            assert_eq!(row.rmse.median, (vals[0] + vals[1]) / 2.0, "strategy {k}");
        }
    }
    let paired: Vec<usize> = [Strategy::Adversarial, Strategy::Random]
        .iter()
        .map(|&s| cmp.completed(s)[0].initial_size)
        .collect();
    assert_eq!(paired[0], paired[1]);
    assert!(cmp.ratios_text().contains("rmse_ratio"));
    assert!(matches!(compare_strategies(&cfg, &rnd, 1, None), Err(Error::Config(_))));
}
