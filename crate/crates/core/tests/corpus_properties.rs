use ptmaml_core::data::{
    filter_copyable, generate_synthetic, is_copyable, normalize_example, normalize_question, question_length, to_raw,
    Dataset, SynthConfig,
};
use ptmaml_core::learner::{Learner, LearnerConfig, LossKind, Vocab};
use ptmaml_core::relevance::{
    build_pseudo_tasks, predict_sql_type, relevance_score, top_k_support, train_type_classifier, ClassifierConfig,
};

fn corpus(seed: u64) -> [Dataset; 3] {
    let cfg = SynthConfig {
        n_train: 200,
        n_dev: 40,
        n_test: 40,
        seed,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg).unwrap().datasets().unwrap()
}

#[test]
fn normalization_is_idempotent() {
    let [train, ..] = corpus(3);
    for ex in &train.examples {
        let t = train.table_of(ex);
        assert_eq!(normalize_question(&ex.tokens.join(" "), t), ex.tokens);
    }
}

#[test]
fn raw_round_trip_preserves_examples() {
    let [train, dev, _] = corpus(4);
    for ds in [&train, &dev] {
        for ex in &ds.examples {
            let t = ds.table_of(ex);
            let raw = to_raw(ex, t).unwrap();
            assert_eq!(&normalize_example(&raw, t, ex.id), ex);
        }
    }
}

#[test]
fn filtering_drops_only_uncopyable_training_examples() {
    let [mut train, mut dev, _] = corpus(5);
    // break a few examples on purpose
    for ds in [&mut train, &mut dev] {
        for ex in ds.examples.iter_mut().step_by(7) {
            if let Some(c) = ex.gold.conds.first_mut() {
                c.value = "nowhere^to^be^found".into();
            }
        }
    }
    let kept = filter_copyable(&train);
    assert!(kept.examples.iter().all(is_copyable));
    let dropped = train.examples.iter().filter(|e| !is_copyable(e)).count();
    assert!(dropped > 0);
    assert_eq!(kept.len() + dropped, train.len());
    assert_eq!(filter_copyable(&dev), dev);
}

#[test]
fn retrieval_matches_brute_force() {
    let [train, ..] = corpus(6);
    let clf = train_type_classifier(&train, &ClassifierConfig::default());
    let k = 3;
    let tasks = build_pseudo_tasks(&train, k, &clf, false);
    for (j, ex) in train.examples.iter().enumerate().step_by(5) {
        let mut scored: Vec<(f64, usize)> = train
            .examples
            .iter()
            .filter(|o| o.id != ex.id)
            .filter_map(|o| relevance_score(&clf, ex, o).map(|s| (s, o.id)))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<usize> = scored.into_iter().take(k).map(|(_, id)| id).collect();
        assert_eq!(top_k_support(&train, ex.id, k, &clf), want);
        assert_eq!(tasks.tasks[j].support_ids, want);
        let ty = predict_sql_type(&clf, &ex.tokens);
        for id in &want {
            let o = train.get(*id).unwrap();
            assert_eq!(predict_sql_type(&clf, &o.tokens), ty);
            assert!(question_length(o) > 0);
        }
    }
}

#[test]
fn losses_are_ordered_on_real_examples() {
    let [train, ..] = corpus(7);
    let cfg = LearnerConfig {
        embed_dim: 8,
        hidden_dim: 8,
        ..LearnerConfig::desk()
    };
    let learner = Learner::new(cfg, Vocab::build(&train.examples));
    for (i, ex) in train.examples.iter().take(30).enumerate() {
        let params = learner.init_params(i as u64);
        let enc = learner.encode(ex).unwrap();
        let p = learner.loss_with(&params, &enc, LossKind::Pointer).unwrap();
        let m = learner.loss_with(&params, &enc, LossKind::Max).unwrap();
        let s = learner.loss_with(&params, &enc, LossKind::Sum).unwrap();
        assert!(p >= m - 1e-12 && m >= s - 1e-12, "{p} {m} {s}");
        if enc.copy_targets_unique() {
            assert!((p - s).abs() < 1e-12);
        } else {
            assert!(m > s);
        }
    }
}
