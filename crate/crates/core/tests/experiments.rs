use proptest::prelude::*;
use ssmlab::experiments::{
    b_for_length, bias_instance, blocks_for_ratio, collision_csv, count_spikes, fixed_delta_training, fmt_f64,
    geometric_grid, gradcheck, inductive_bias_sweep, mixed_sign_blocks, selection_scores, sha256_hex,
    stability_ratio_sweep_c, stability_ratio_sweep_l, train_run, uat_demo, BiasConfig, BiasSign, GradcheckConfig,
    LinearComboStudy, Manifest, StabilityConfig, SweepRow, SweepTable, TrainRunConfig, UatConfig, DB_RATIO,
    DW_RATIO, MANIFEST_NAME, S_AFTER, S_AT, S_BEFORE,
};
use ssmlab::model::TrainConfig;
use ssmlab::units::Field;
use ssmlab::{Unit, UnitKind};

#[test]
fn grid_endpoints_and_ratios() {
    let g = geometric_grid(10.0, 1e4, 4).unwrap();
    assert_eq!(g.len(), 4);
    assert_eq!((g[0], g[3]), (10.0, 1e4));
    assert!((g[1] - 100.0).abs() < 1e-10 && (g[2] - 1000.0).abs() < 1e-9);
    assert!(geometric_grid(0.0, 1.0, 3).is_err());
    assert!(geometric_grid(2.0, 1.0, 3).is_err());
    assert!(geometric_grid(1.0, 2.0, 1).is_err());
}

#[test]
fn sweep_table_statistics_and_csv() {
    let mut t = SweepTable::new("demo", "x");
    for x in [1.0, 10.0, 100.0] {
        let mut r = SweepRow::new(x);
        r.push("y", 3.0 * x * x);
        r.push("y", 5.0 * x * x);
        t.push_row(r).unwrap();
    }
    assert!(t.push_row({
        let mut r = SweepRow::new(50.0);
        r.push("y", 1.0);
        r
    })
    .is_err());
    assert!(t.push_row(SweepRow::new(1e3)).is_err());
    assert_eq!(t.mean_at(10.0, "y"), Some(400.0));
    assert_eq!(t.rows[0].stderr("y"), Some(1.0));
    let fit = t.fit("y").unwrap();
    assert!((fit.slope - 2.0).abs() < 1e-12 && fit.r_squared > 1.0 - 1e-12);
    let csv = t.to_csv();
    assert!(csv.starts_with("control,series,trial,value\n"));
    assert_eq!(csv.lines().count(), 7);
    assert!(csv.contains(&format!("{},y,1,{}", fmt_f64(10.0), fmt_f64(500.0))));
    assert!(t.fit_csv().starts_with("series,slope,intercept,r_squared\ny,"));
    let dir = tempfile::tempdir().unwrap();
    let paths = t.write(dir.path()).unwrap();
    assert_eq!(std::fs::read_to_string(&paths[0]).unwrap(), csv);
}

#[test]
fn number_format_round_trips() {
    for x in [0.1, -1e-300, 1.0 / 3.0, 6.02e23, f64::MIN_POSITIVE] {
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }
    assert_eq!(fmt_f64(f64::NAN), "NaN");
}

#[test]
fn manifest_hashes_and_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("a.csv");
    std::fs::write(&file, "abc").unwrap();
    let mut m = Manifest::new("demo", 3, serde_json::json!({"k": 1}), serde_json::json!([1, 2]));
    m.record_files(&[file]).unwrap();
    assert_eq!(
        m.files["a.csv"],
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
    assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    m.write(dir.path(), false).unwrap();
    assert!(m.write(dir.path(), false).is_err());
    m.write(dir.path(), true).unwrap();
    let back: Manifest = serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_NAME)).unwrap()).unwrap();
    assert_eq!(back, m);
}

#[test]
fn spike_counter() {
    let mut losses = vec![1.0; 30];
    losses[25] = 2.5;
    losses[26] = 2.0;
    assert_eq!(count_spikes(&losses, 20), 1);
    losses[5] = 100.0;
    assert_eq!(count_spikes(&losses, 20), 1);
    losses[28] = f64::NAN;
    assert_eq!(count_spikes(&losses, 20), 2);
    assert_eq!(count_spikes(&losses[..10], 20), 0);
}

#[test]
fn block_layouts() {
    assert_eq!(blocks_for_ratio(8, 0.5).unwrap(), (2, 4));
    assert_eq!(blocks_for_ratio(32, 0.5).unwrap(), (4, 8));
    assert_eq!(blocks_for_ratio(128, 0.5).unwrap(), (8, 16));
    assert!(blocks_for_ratio(12, 0.5).is_err());
}

fn small_stability() -> StabilityConfig {
    StabilityConfig {
        l: 30,
        c_grid: vec![1.0, 2.0, 10.0],
        c: 1.0,
        l_grid: vec![50, 500],
        trials: 6,
        ..StabilityConfig::default()
    }
}

#[test]
fn c_sweep_ratios_are_homogeneous() {
    let t = stability_ratio_sweep_c(&small_stability()).unwrap();
    let (w1, w2) = (&t.rows[0].trials[DW_RATIO], &t.rows[1].trials[DW_RATIO]);
    let (b1, b2) = (&t.rows[0].trials[DB_RATIO], &t.rows[1].trials[DB_RATIO]);
    for i in 0..6 {
        assert!((w2[i] / w1[i] - 8.0).abs() < 1e-9);
        assert!((b2[i] / b1[i] - 4.0).abs() < 1e-9);
    }
    assert!(t.checks["fd_rel_err"] < 1e-5);
    assert_eq!(t, stability_ratio_sweep_c(&small_stability()).unwrap());
}

#[test]
fn l_sweep_holds_the_step_product() {
    let t = stability_ratio_sweep_l(&small_stability()).unwrap();
    for r in &t.rows {
        assert!((r.mean("delta_times_L").unwrap() - 10.0).abs() < 1e-9);
        assert!(r.mean(DB_RATIO).unwrap() > 0.0);
    }
    assert!((b_for_length(1000, 10.0) - (0.01f64).ln()).abs() < 1e-15);
    assert!(t.checks["fd_rel_err"] < 1e-5);
}

#[test]
fn bias_instances_meet_their_hypotheses() {
    for unit in [UnitKind::S6, UnitKind::B2s6] {
        let cfg = BiasConfig {
            unit,
            field: Field::Complex,
            ..BiasConfig::default()
        };
        let (u_unit, u) = bias_instance(&cfg).unwrap();
        let row = u.row(cfg.k0 - 1);
        assert!(selection_scores(&u_unit, row).iter().all(|s| s.abs() >= cfg.margin));
        if let Unit::B2s6(p) = &u_unit {
            assert!(mixed_sign_blocks(p, row));
        }
    }
    let bad = BiasConfig { k0: 0, ..BiasConfig::default() };
    assert!(bias_instance(&bad).is_err());
}

#[test]
fn s4d_attribution_is_scale_free_and_s6_is_selective() {
    let cfg = BiasConfig {
        unit: UnitKind::S4d,
        field: Field::Complex,
        ..BiasConfig::default()
    };
    let (unit, u) = bias_instance(&cfg).unwrap();
    let t = inductive_bias_sweep(&unit, &u, cfg.k0, &cfg.c_grid, BiasSign::Positive).unwrap();
    for s in [S_BEFORE, S_AT, S_AFTER] {
        assert!(t.slope(s).unwrap().abs() < 1e-8, "{s}");
    }

    let cfg = BiasConfig::default();
    let (unit, u) = bias_instance(&cfg).unwrap();
    let pos = inductive_bias_sweep(&unit, &u, cfg.k0, &cfg.c_grid, BiasSign::Positive).unwrap();
    assert!((pos.slope(S_AT).unwrap() + 1.0).abs() < 0.2);
    assert!(pos.slope(S_AFTER).unwrap().abs() < 0.1);
    assert!(pos.rows.last().unwrap().mean(S_BEFORE).unwrap() < 1e-8);
    let neg = inductive_bias_sweep(&unit, &u, cfg.k0, &cfg.c_grid, BiasSign::Negative).unwrap();
    assert!(neg.rows.last().unwrap().mean(S_AT).unwrap() < 1e-8);
    assert!(inductive_bias_sweep(&unit, &u, 99, &cfg.c_grid, BiasSign::Positive).is_err());
}

#[test]
fn uat_demo_finds_collisions() {
    let recs = uat_demo(&UatConfig { trials: 3, ..UatConfig::default() }, 7).unwrap();
    assert_eq!(recs.len(), 3);
    for r in &recs {
        assert_ne!(r.u, r.v);
        assert!(r.f_diff <= 1e-12 * r.f_u.abs().max(1.0));
        assert!(r.out_diff <= 1e-10);
        assert!(r.s4d_out_diff.unwrap() > 1e-6);
    }
    assert_eq!(collision_csv(&recs).lines().count(), 4);
}

#[test]
fn small_gradcheck_passes() {
    let r = gradcheck(&GradcheckConfig { trials: 12, l: 8, ..GradcheckConfig::default() }).unwrap();
    assert_eq!(r.instances, 12);
    assert!(r.max_error() < 1e-6, "{r:?}");
    assert_eq!(r.to_csv().lines().count(), 1 + 36);
}

#[test]
fn fixed_delta_runs_share_their_start() {
    let study = LinearComboStudy {
        n_samples: 64,
        l: 8,
        d: 4,
        seeds: vec![0],
        ..LinearComboStudy::default()
    };
    let cfg = TrainConfig { batch_size: 16, epochs: 2, lr_main: 1e-2, lr_delta: 1e-3, ..TrainConfig::default() };
    let (table, runs) = fixed_delta_training(&study, &[1e-3, 0.0], &cfg).unwrap();
    assert_eq!(table.rows[0].control, 0.0);
    assert_eq!(runs.len(), 2);
    assert!(runs[0].delta_frozen && !runs[1].delta_frozen);
    assert_eq!(runs[0].log.rows[0].train_loss, runs[1].log.rows[0].train_loss);
}

#[test]
fn train_run_adapts_the_model_to_the_task() {
    let cfg: TrainRunConfig = serde_json::from_value(serde_json::json!({
        "task": {"generator": "copy_magnitude", "n_samples": 40, "L": 4, "d": 3, "sigma1": 1.0, "sigma2": 1.0},
        "n_test": 8,
        "arch": {"unit": "s6", "d": 4, "n": 2},
        "train": {"epochs": 1, "batch_size": 8}
    }))
    .unwrap();
    let r = train_run(&cfg, 1).unwrap();
    assert_eq!(r.log.rows.len(), 4);
    assert!(r.test_loss.is_finite());
    let bad = TrainRunConfig { n_test: 40, ..cfg };
    assert!(train_run(&bad, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn geometric_grids_are_increasing(lo in 1e-3f64..10.0, span in 1.5f64..1e4, count in 2usize..20) {
        let g = geometric_grid(lo, lo * span, count).unwrap();
        prop_assert_eq!(g.len(), count);
        prop_assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_losses_never_spike(v in 1e-6f64..1e6, len in 0usize..80) {
        prop_assert_eq!(count_spikes(&vec![v; len], 20), 0);
    }

    #[test]
    fn c_sweep_slopes_are_three_and_two(seed in 0u64..10_000) {
        let cfg = StabilityConfig { seed, l: 12, trials: 3, c_grid: vec![1.0, 10.0, 100.0], ..StabilityConfig::default() };
        let t = stability_ratio_sweep_c(&cfg).unwrap();
        prop_assert!((t.slope(DW_RATIO).unwrap() - 3.0).abs() < 1e-8);
        prop_assert!((t.slope(DB_RATIO).unwrap() - 2.0).abs() < 1e-8);
    }
}
