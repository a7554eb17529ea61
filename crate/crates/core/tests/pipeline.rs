use phi_core::metrics::EvalReport;
use phi_core::pipeline::{
    ablation_arms, evaluate, init_model, predict_all, train, train_stage1, train_stage2, Model, ModelDims, Stage,
    Strategy, TrainConfig,
};
use phi_core::synthdata::{generate_split, Dataset, Split, SyntheticConfig};
use phi_core::Error;

fn data() -> (Dataset, Dataset) {
    let cfg = SyntheticConfig {
        n_train: 40,
        n_test: 16,
        m: 8,
        d: 24,
        d_s: 4,
        ..SyntheticConfig::default()
    };
    (
        generate_split(&cfg, Split::Train).unwrap().dataset,
        generate_split(&cfg, Split::Test).unwrap().dataset,
    )
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        d_k: 8,
        d_t: 2,
        ..TrainConfig::ci()
    }
}

#[test]
fn stage_one_lowers_the_score_loss() {
    let (train_set, _) = data();
    let h = train_stage1(&train_set, &cfg(15)).unwrap().history;
    assert!(h.last().unwrap().loss_s < h[0].loss_s, "{} -> {}", h[0].loss_s, h.last().unwrap().loss_s);
    assert!(h.iter().all(|e| e.stage == Stage::Stage1 && e.loss_m == 0.0));
}

#[test]
fn stage_two_lowers_the_flow_loss() {
    let (train_set, _) = data();
    let c = cfg(15);
    let s1 = train_stage1(&train_set, &c).unwrap();
    let h = train_stage2(&train_set, &s1.model, &c).unwrap().history;
    assert!(h.last().unwrap().loss_m < h[0].loss_m, "{} -> {}", h[0].loss_m, h.last().unwrap().loss_m);
}

#[test]
fn zero_epochs_leave_the_initialization() {
    let (train_set, _) = data();
    let c = cfg(0);
    let trained = train_stage1(&train_set, &c).unwrap();
    assert!(trained.history.is_empty());
    let fresh = init_model(&train_set, &c).unwrap();
    assert_eq!(trained.model.params.len(), fresh.params.len());
    for i in 0..fresh.params.len() {
        assert_eq!(trained.model.params.value(i), fresh.params.value(i), "{}", fresh.params.name(i));
    }
}

#[test]
fn tiny_batches_with_the_listwise_term_are_rejected_up_front() {
    let (train_set, _) = data();
    let c = TrainConfig { batch: 2, ..cfg(1) };
    assert!(matches!(train(&train_set, &c), Err(Error::Config(_))));
    let c = TrainConfig { no_lcr: true, ..c };
    assert!(train(&train_set, &c).is_ok());
}

#[test]
fn without_the_flow_scoring_stays_on_the_encoder_path() {
    let (train_set, test) = data();
    let model = train(&train_set, &TrainConfig { no_gmf: true, ..cfg(2) }).unwrap().model;
    assert_eq!(model.stage, Stage::Stage1);
    model.reset_tete_calls();
    evaluate(&model, &test).unwrap();
    assert_eq!(model.tete_calls(), test.len());
}

#[test]
fn one_stage_trains_the_full_loss_for_both_budgets() {
    let (train_set, _) = data();
    let c = TrainConfig {
        strategy: Strategy::OneStage,
        ..cfg(3)
    };
    let out = train(&train_set, &c).unwrap();
    assert_eq!(out.history.len(), 6);
    assert!(out.history.iter().all(|e| e.stage == Stage::Stage2 && e.loss_m > 0.0));
    assert_eq!(out.model.stage, Stage::Stage2);
}

#[test]
fn stage_two_rejects_an_incompatible_stage_one_model() {
    let (train_set, _) = data();
    let s1 = train_stage1(&train_set, &cfg(1)).unwrap().model;
    let other = TrainConfig { steps: 2, ..cfg(1) };
    assert!(matches!(train_stage2(&train_set, &s1, &other), Err(Error::FingerprintMismatch { .. })));
}

#[test]
fn evaluation_is_repeatable_and_survives_a_checkpoint() {
    let (train_set, test) = data();
    let c = cfg(2);
    let model = train(&train_set, &c).unwrap().model;
    let a = evaluate(&model, &test).unwrap();
    assert_eq!(a, evaluate(&model, &test).unwrap());
    let fp = ModelDims::new(&c, train_set.manifest.d, train_set.manifest.m).fingerprint();
    let back = Model::from_checkpoint(&model.to_checkpoint(), Some(fp), false).unwrap();
    assert_eq!(predict_all(&back, &test).unwrap(), predict_all(&model, &test).unwrap());
}

#[test]
fn perfect_predictions_score_one_and_zero() {
    let (_, test) = data();
    let s = test.scores();
    let r = EvalReport::single("synthetic", &s, &s, test.manifest.score_max, test.manifest.score_min).unwrap();
    assert_eq!(r.srcc, 1.0);
    assert_eq!(r.rl2, 0.0);
}

#[test]
fn arms_share_the_seed_and_differ_in_one_switch() {
    let base = TrainConfig { seed: 99, ..cfg(1) };
    let arms = ablation_arms(&base);
    let names: Vec<&str> = arms.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["full", "no_gmf", "no_tesa", "no_lcr", "no_kl", "half"]);
    assert!(arms.iter().all(|(_, c)| c.seed == 99));
    let flags = |c: &TrainConfig| [c.no_gmf, c.no_tesa, c.no_lcr, c.no_kl, c.half];
    assert_eq!(flags(&arms[0].1), [false; 5]);
    for (k, (_, c)) in arms.iter().enumerate().skip(1) {
        let f = flags(c);
        assert!(f[k - 1] && f.iter().filter(|&&x| x).count() == 1);
    }
}

#[test]
fn empty_test_split_aborts_evaluation() {
    let (train_set, mut test) = data();
    let model = init_model(&train_set, &cfg(1)).unwrap();
    test.samples.clear();
    assert!(matches!(evaluate(&model, &test), Err(Error::EmptyDataset)));
}
