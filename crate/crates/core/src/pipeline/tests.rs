use super::*;
use crate::beqrnn::QuantilePrediction;
use crate::synth::{make_transition_dataset, SplitPart};
use ndarray::{array, Array2};
use proptest::prelude::*;

fn smoke_run() -> (RunConfig, crate::synth::LabeledDataset, Vec<SegmentFeatures>) {
    let cfg = RunConfig::smoke().resolved();
    let ds = make_transition_dataset(&cfg.data.normal, &cfg.data.abnormal, &cfg.data.transition).unwrap();
    let feats = extract_features(&ds, &cfg.features).unwrap();
    (cfg, ds, feats)
}

#[test]
fn standardizer_centres_and_scales() {
    let rows: Vec<Vec<f64>> = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let s = Standardizer::fit(&refs).unwrap();
    assert_eq!(s.mean, vec![2.0, 5.0]);
    assert_eq!(s.std, vec![1.0, 1.0]);
    assert_eq!(s.apply(&[3.0, 5.0]), vec![1.0, 0.0]);
    assert_eq!(s.invert(0, 1.0), 3.0);
    assert!(Standardizer::fit(&[]).is_err());
}

#[test]
fn clean_end_stops_before_the_cross_fade() {
    let (cfg, ds, _) = smoke_run();
    for s in &ds.segments {
        let end = clean_normal_end(s, cfg.data.transition.blend, cfg.data.transition.n_steps);
        match s.transition_step {
            Some(ts) => assert_eq!(end, ts - 100),
            None => assert_eq!(end, cfg.data.transition.n_steps),
        }
    }
}

#[test]
fn surprise_is_zero_at_median_and_bounded() {
    let alphas = vec![0.1, 0.5, 0.9];
    let values = array![[0.0, -1.0], [1.0, 0.0], [2.0, 1.0]];
    let p = QuantilePrediction { alphas, values };
    let s = surprise_channels(array![1.0, 100.0].view(), &p).unwrap();
    assert_eq!(s[0], 0.0);
    // |100 - 0| / 2 = 50 -> 50/51
    assert!((s[1] - 50.0 / 51.0).abs() < 1e-15);
    let missing = QuantilePrediction { alphas: vec![0.5], values: Array2::zeros((1, 2)) };
    assert!(surprise_channels(array![0.0, 0.0].view(), &missing).is_err());
}

#[test]
fn seeds_differ_per_stage_and_follow_root() {
    let a = RunConfig::default().resolved();
    let mut b = RunConfig::default();
    b.seed = 7;
    let b = b.resolved();
    assert_ne!(a.stage1.train.seed, a.snn.train.seed);
    assert_ne!(a.stage1.train.seed, b.stage1.train.seed);
    assert_eq!(a, RunConfig::default().resolved());
}

#[test]
fn toml_round_trip_and_defaults() {
    let c = RunConfig::default();
    let back = RunConfig::from_toml(&c.to_toml().unwrap()).unwrap();
    assert_eq!(back, c);
    let partial = RunConfig::from_toml("seed = 9\n[data.transition]\nn_segments = 4\n").unwrap();
    assert_eq!(partial.seed, 9);
    assert_eq!(partial.data.transition.n_segments, 4);
    assert_eq!(partial.data.transition.blend, 200);
    assert!(RunConfig::from_toml("seed = \"x\"").is_err());
    let linear = RunConfig::from_toml("[data.normal]\nkind = \"linear\"\nm = 0.0\nc = 1.0\nsigma = 0.0\n").unwrap();
    assert!(matches!(linear.data.normal.regime, crate::synth::Regime::Linear { m, .. } if m == 0.0));
    assert_eq!(linear.data.abnormal, RunConfig::default().data.abnormal);
}

#[test]
fn validate_rejects_bad_target_and_caps() {
    let mut c = RunConfig::default();
    c.stage2.target_feature = 70;
    assert!(c.validate().is_err());
    let mut c = RunConfig::default();
    c.snn.max_rows = 0;
    assert!(c.validate().is_err());
    assert!(RunConfig::default().validate().is_ok());
}

#[test]
fn smoke_pipeline_runs_and_is_deterministic() {
    let (cfg, ds, feats) = smoke_run();
    assert!(feats.iter().all(|f| f.rows.last().unwrap().t == cfg.data.transition.n_steps - 1));
    let run = || {
        let s1 = run_stage1(&cfg, &ds, &feats).unwrap();
        let s2 = run_stage2(&cfg, &ds, &feats, &s1).unwrap();
        let snn = run_snn(&cfg, &ds, &feats, &s1, &s2).unwrap();
        let models = Models { stage1: s1, stage2: s2, snn };
        let which = part_indices(&ds, SplitPart::Test);
        predict_all(&cfg, &models, &feats, &which).unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    let h = cfg.alerts.horizon_steps;
    for o in &a {
        assert!(o.scores.iter().all(|(_, s)| (0.0..=1.0).contains(s)));
        assert!(o.risk.iter().all(|r| r.value >= 0.0 && r.ptf >= 1.0));
        assert!(o.alerts.iter().all(|al| al.horizon_steps == h));
    }
    let report = evaluate_outputs(&ds, &a, h).unwrap();
    assert_eq!(report.n_segments, a.len());
    assert!(report.segments.iter().zip(&a).all(|(r, o)| r.segment == o.segment));
}

#[test]
fn resumed_stage1_numbers_epochs_after_the_first_run() {
    let (mut cfg, ds, feats) = smoke_run();
    cfg.stage1.train.epochs = 2;
    cfg.stage1.train.patience = 100;
    let first = run_stage1(&cfg, &ds, &feats).unwrap();
    let next = first.history.records.last().unwrap().epoch + 1;
    let second = resume_stage1(&cfg, &ds, &feats, first.net.clone(), next).unwrap();
    let e: Vec<usize> = second.history.records.iter().map(|r| r.epoch).collect();
    assert_eq!(e, vec![2, 3]);
    assert_eq!(second.standardizer, first.standardizer);
}

#[test]
fn mismatched_feature_sets_are_rejected() {
    let (cfg, ds, feats) = smoke_run();
    assert!(run_stage1(&cfg, &ds, &feats[..3]).is_err());
}

proptest! {
    #[test]
    fn derive_seed_is_a_function(root in any::<u64>(), tag in "[a-z.]{1,12}") {
        prop_assert_eq!(derive_seed(root, &tag), derive_seed(root, &tag));
    }

    #[test]
    fn standardized_columns_have_zero_mean(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 2..30)) {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let s = Standardizer::fit(&refs).unwrap();
        for c in 0..3 {
            let m: f64 = rows.iter().map(|r| s.apply(r)[c]).sum::<f64>() / rows.len() as f64;
            prop_assert!(m.abs() < 1e-9);
            for r in &rows {
                prop_assert!((s.invert(c, s.apply(r)[c]) - r[c]).abs() <= 1e-9 * (1.0 + r[c].abs()));
            }
        }
    }
}
