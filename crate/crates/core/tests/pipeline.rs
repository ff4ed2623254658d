use tta_conformal::eval::stats::mean;
use tta_conformal::harness::run_on;
use tta_conformal::report::{run_csv, run_markdown, summary_csv, to_json};
use tta_conformal::{
    aggregate_all, analyze, calibrate, generate, read_tensor, split_validation, train_weights, write_tensor, Error,
    ExperimentPlan, Logits, Method, Predictor, RngState, ScoreChoice, ScoreConfig, SynthConfig, TrainConfig, Weights,
};

fn informative(n: usize, seed: u64) -> Logits {
    generate(&SynthConfig {
        n_examples: n,
        signal_strength: vec![1.0; 3],
        noise_scale: vec![1.0; 3],
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
}

#[test]
fn baseline_only_run_has_one_row_per_alpha_and_covers() {
    let t = informative(2000, 1);
    let plan = ExperimentPlan {
        alphas: vec![0.05, 0.1, 0.2],
        methods: vec![Method::Baseline],
        n_splits: 10,
        ..ExperimentPlan::default()
    };
    let r = run_on(&t, &plan).unwrap();
    assert_eq!(r.cells.len(), 3);
    for c in &r.cells {
        let se = c.coverage.std.unwrap() / (plan.n_splits as f64).sqrt();
        assert!(c.coverage.mean >= 1.0 - c.alpha - 3.0 * se, "{c:?}");
        assert!(c.vs_baseline.is_none());
        assert!(c.is_best && c.highlighted);
    }
}

#[test]
fn reports_render_every_cell() {
    let t = informative(600, 2);
    let plan = ExperimentPlan {
        alphas: vec![0.1],
        n_splits: 2,
        ..ExperimentPlan::default()
    };
    let r = run_on(&t, &plan).unwrap();
    let md = run_markdown(&r);
    for m in Method::ALL {
        assert!(md.contains(&format!("| {m} |")), "{md}");
    }
    assert!(md.contains(" ± "));
    assert_eq!(run_csv(&r).lines().count(), 1 + 2 * 3);
    assert_eq!(summary_csv(&r).lines().count(), 1 + 3);
    let json: serde_json::Value = serde_json::from_str(&to_json(&r).unwrap()).unwrap();
    assert_eq!(json["cells"].as_array().unwrap().len(), 3);
}

#[test]
fn tiny_tensor_reports_split_context() {
    let t = informative(3, 0);
    let plan = ExperimentPlan {
        n_splits: 2,
        ..ExperimentPlan::default()
    };
    match run_on(&t, &plan) {
        Err(Error::Split { split, seed, .. }) => {
            assert_eq!(split, 0);
            assert_eq!(seed, plan.seed);
        }
        other => panic!("expected a split error, got {other:?}"),
    }
}

#[test]
fn validation_downsampling_shrinks_calibration() {
    let t = informative(2000, 3);
    let full = ExperimentPlan {
        alphas: vec![0.1],
        methods: vec![Method::Baseline],
        n_splits: 1,
        score: ScoreChoice::Aps,
        ..ExperimentPlan::default()
    };
    let quarter = ExperimentPlan {
        val_fraction: 0.25,
        ..full.clone()
    };
    assert_eq!(run_on(&t, &full).unwrap().splits[0].n_cal, 800);
    assert_eq!(run_on(&t, &quarter).unwrap().splits[0].n_cal, 200);
}

#[test]
fn plan_file_drives_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let tensor = dir.path().join("t.ttac");
    write_tensor(&informative(400, 4), &tensor).unwrap();
    let text = format!(
        "tensor = {:?}\nalphas = [0.1]\nmethods = [\"baseline\", \"tta-avg\"]\nn_splits = 2\nseed = 5\n\n[score]\nkind = \"aps\"\n",
        tensor.display().to_string()
    );
    let plan = ExperimentPlan::from_toml(&text).unwrap();
    let r = tta_conformal::run(&plan).unwrap();
    assert_eq!(r.methods, vec![Method::Baseline, Method::TtaAvg]);
    assert_eq!(r.cells.len(), 2);
    assert_eq!(read_tensor::<f64>(&tensor).unwrap().n_examples(), 400);
}

fn fitted_pair(t: &Logits, seed: u64) -> Vec<(String, Predictor)> {
    let state = RngState::new(seed);
    let split = split_validation(t.n_examples(), 0.5, &state.derive("tta-split")).unwrap();
    let learned = train_weights(t, &split.tta_indices, &TrainConfig::default(), &state).unwrap().weights;
    let cal = t.select(&split.cal_indices);
    let fit = |w: &Weights| {
        let probs = aggregate_all(&cal, w).unwrap();
        calibrate(&probs, cal.labels(), 0.1, ScoreConfig::aps(), &state)
            .unwrap()
            .with_weights(w.clone())
    };
    vec![
        ("base".to_string(), fit(&Weights::identity(t.aug_names().to_vec()))),
        ("learned".to_string(), fit(&learned)),
    ]
}

#[test]
fn informative_views_lower_optimal_top_k() {
    let mut wins = 0;
    for seed in 0..10 {
        let t = informative(1500, 100 + seed);
        let predictors = fitted_pair(&t, seed);
        let test = informative(1500, 200 + seed);
        let r = analyze(&test, &predictors, seed).unwrap();
        wins += usize::from(r.top_k[1].k <= r.top_k[0].k);
    }
    assert!(wins >= 8, "{wins}/10");
}

#[test]
fn learned_views_promote_true_class_rank() {
    let t = informative(2000, 7);
    let predictors = fitted_pair(&t, 7);
    let r = analyze(&informative(2000, 8), &predictors, 7).unwrap();
    let bins = &r.rank_shift[0].bins;
    let worst = bins.iter().rev().find(|b| b.count > 0).unwrap();
    assert!(worst.mean_tta.unwrap() < worst.mean_base.unwrap());
    let sizes: Vec<f64> = r.classes.iter().filter_map(|c| c.mean_size[1]).collect();
    let base: Vec<f64> = r.classes.iter().filter_map(|c| c.mean_size[0]).collect();
    assert!(mean(&sizes) < mean(&base));
}

#[test]
fn predictor_documents_survive_analysis() {
    let t = informative(800, 9);
    let predictors = fitted_pair(&t, 9);
    let restored: Vec<(String, Predictor)> = predictors
        .iter()
        .map(|(n, p)| (n.clone(), Predictor::from_document(&p.to_document().unwrap()).unwrap()))
        .collect();
    let a = analyze(&t, &predictors, 1).unwrap();
    let b = analyze(&t, &restored, 1).unwrap();
    assert_eq!(a, b);
}

#[test]
fn mismatched_weights_are_rejected() {
    let t = informative(300, 10);
    let mut predictors = fitted_pair(&t, 10);
    let narrow = generate(&SynthConfig {
        n_examples: 300,
        signal_strength: vec![1.0; 2],
        noise_scale: vec![1.0; 2],
        ..SynthConfig::default()
    })
    .unwrap();
    assert!(analyze(&narrow, &predictors, 0).is_err());
    predictors.truncate(1);
    assert!(analyze(&narrow, &predictors, 0).is_ok());
}
