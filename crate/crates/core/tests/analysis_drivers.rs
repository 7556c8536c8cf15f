//! End-to-end driver tests at miniature scale: train on a synthetic corpus,
//! run the k-NN trial on crafted replicas, verify the exact-zero ablation
//! property and the masking identity.

use std::collections::BTreeSet;

use boocap_core::analysis::{
    ablation_sweep, evaluate_split, knn_report, mask_sweep, train_on_corpus, KnnParams, Lexicon,
};
use boocap_core::captioner::{Conditioning, HyperParams};
use boocap_core::corpus::{
    generate_synthetic, BBox, CaptionSet, CategoryTable, Corpus, ObjectInstance, Scene, Splits,
    SyntheticSpec,
};
use boocap_core::metrics::CiderVariant;
use boocap_core::repr::{build, MaskHeuristic, ReprSchema, Retain};
use boocap_core::ImageId;

fn small_hp(seed: u64, epochs: usize) -> HyperParams {
    HyperParams {
        embed_dim: 12,
        hidden_dim: 20,
        layers: 2,
        max_epochs: epochs,
        batch_size: 16,
        dropout: 0.0,
        learning_rate: 3e-3,
        vocab_threshold: 1,
        seed,
        conditioning: Conditioning::HiddenInit,
        ..HyperParams::default()
    }
}

fn synthetic_corpus(categories: &[&str], scenes: usize, seed: u64) -> Corpus {
    let spec = SyntheticSpec::with_categories(categories, scenes, 4);
    let (table, scenes, captions) = generate_synthetic(&spec, seed).unwrap();
    let ids: BTreeSet<ImageId> = scenes.iter().map(|s| s.image_id).collect();
    let splits = Splits::random(&ids, scenes.len() / 8, scenes.len() / 8, seed).unwrap();
    Corpus {
        table,
        scenes,
        captions,
        splits,
    }
}

#[test]
fn train_evaluate_pipeline_runs_and_is_deterministic() {
    let corpus = synthetic_corpus(&["dog", "cat", "car"], 48, 5);
    let schema = ReprSchema::frequency(&corpus.table);
    let hp = small_hp(1, 4);

    let a = train_on_corpus(&corpus, &schema, &hp, CiderVariant::CiderD).unwrap();
    let b = train_on_corpus(&corpus, &schema, &hp, CiderVariant::CiderD).unwrap();
    assert_eq!(a, b, "training must be bit-deterministic");

    let report = evaluate_split(&a, &corpus, &corpus.splits.test, CiderVariant::CiderD).unwrap();
    assert_eq!(report.count, corpus.splits.test.len());
    assert!(report.mean.cider >= 0.0 && report.mean.cider <= 10.0);
    assert!(a.log.iter().all(|e| e.val_cider.is_some()));
}

/// Scenes whose frequency vector is fully determined by a count pattern.
fn scene_from_counts(image_id: ImageId, counts: &[(i64, usize)]) -> Scene {
    let mut instances = Vec::new();
    for &(cat, n) in counts {
        for k in 0..n {
            let offset = 12.0 * k as f64 + cat as f64;
            instances.push(ObjectInstance {
                category_id: cat,
                bbox: BBox {
                    x: offset,
                    y: offset,
                    w: 40.0,
                    h: 30.0,
                },
                segment_area: 900.0,
                confidence: 1.0,
            });
        }
    }
    Scene {
        image_id,
        width: 640,
        height: 480,
        instances,
    }
}

fn caption_for(counts: &[(i64, usize)], names: &[&str]) -> String {
    let word = |n: usize| match n {
        1 => "one",
        2 => "two",
        3 => "three",
        _ => "several",
    };
    let parts: Vec<String> = counts
        .iter()
        .map(|&(cat, n)| format!("{} {}", word(n), names[(cat - 1) as usize]))
        .collect();
    format!("{} in the picture .", parts.join(" and "))
}

#[test]
fn knn_replica_trial_marks_exact_images_and_scores_ten() {
    let names = ["dog", "cat", "bird"];
    let table = CategoryTable::new(
        names
            .iter()
            .enumerate()
            .map(|(i, n)| (i as i64 + 1, n.to_string()))
            .collect(),
    )
    .unwrap();

    // Training: five replicas each of three count patterns; test: two exact
    // replicas and one unseen pattern.
    let patterns: [&[(i64, usize)]; 3] = [&[(1, 2)], &[(2, 1), (3, 2)], &[(1, 1), (2, 2)]];
    let mut scenes = Vec::new();
    let mut captions = CaptionSet::new();
    let mut train_ids = BTreeSet::new();
    let mut id = 1;
    for pattern in patterns {
        for _ in 0..5 {
            scenes.push(scene_from_counts(id, pattern));
            for _ in 0..5 {
                captions.push(id, caption_for(pattern, &names));
            }
            train_ids.insert(id);
            id += 1;
        }
    }
    let test_patterns: [(&[(i64, usize)], bool); 3] = [
        (&[(1, 2)], true),
        (&[(2, 1), (3, 2)], true),
        (&[(1, 3), (3, 1)], false),
    ];
    let mut test_ids = BTreeSet::new();
    for (pattern, _) in test_patterns {
        scenes.push(scene_from_counts(id, pattern));
        for _ in 0..5 {
            captions.push(id, caption_for(pattern, &names));
        }
        test_ids.insert(id);
        id += 1;
    }

    let corpus = Corpus {
        table,
        scenes,
        captions,
        splits: Splits {
            train: train_ids.clone(),
            val: BTreeSet::new(),
            test: test_ids.clone(),
        },
    };

    let schema = ReprSchema::frequency(&corpus.table);
    let hp = small_hp(3, 60);
    let ckpt = train_on_corpus(&corpus, &schema, &hp, CiderVariant::CiderD).unwrap();

    let train_reprs: Vec<_> = corpus
        .scenes_in(&train_ids)
        .into_iter()
        .map(|s| build(s, &schema).unwrap())
        .collect();
    let test_reprs: Vec<_> = corpus
        .scenes_in(&test_ids)
        .into_iter()
        .map(|s| build(s, &schema).unwrap())
        .collect();

    let report = knn_report(
        &test_reprs,
        &train_reprs,
        &ckpt,
        Some(&corpus.captions),
        &KnnParams::default(),
    )
    .unwrap();

    let exact_flags: Vec<bool> = report.rows.iter().map(|r| r.exact).collect();
    assert_eq!(exact_flags, vec![true, true, false]);

    // all raw distances of exact rows are zero, sorted ascending everywhere
    for row in &report.rows {
        for pair in row.raw_neighbors.windows(2) {
            assert!(pair[0].distance <= pair[1].distance);
        }
        if row.exact {
            assert!(row.raw_neighbors.iter().all(|n| n.distance == 0.0));
        }
    }

    // deterministic decoding on replicas: the exact subset scores 10
    let exact_scores = report.raw.exact.as_ref().expect("exact subset present");
    assert!(
        (exact_scores.mean.cider - 10.0).abs() < 1e-9,
        "exact-subset CIDEr = {}",
        exact_scores.mean.cider
    );
    for i in 0..4 {
        assert!((exact_scores.mean.bleu[i] - 1.0).abs() < 1e-12);
    }
    let non_exact = report.raw.non_exact.as_ref().expect("non-exact present");
    assert!(non_exact.mean.cider <= exact_scores.mean.cider);
}

#[test]
fn knn_report_rejects_oversized_k() {
    let corpus = synthetic_corpus(&["dog", "cat"], 24, 9);
    let schema = ReprSchema::frequency(&corpus.table);
    let hp = small_hp(1, 2);
    let ckpt = train_on_corpus(&corpus, &schema, &hp, CiderVariant::CiderD).unwrap();
    let reprs: Vec<_> = corpus
        .scenes_in(&corpus.splits.test)
        .into_iter()
        .map(|s| build(s, &schema).unwrap())
        .collect();
    let params = KnnParams {
        k: 1000,
        ..KnnParams::default()
    };
    assert!(knn_report(&reprs, &reprs, &ckpt, None, &params).is_err());
}

#[test]
fn ablating_a_never_depicted_category_changes_nothing() {
    // seven categories appear in scenes; an eighth exists only in the table
    let mut corpus = synthetic_corpus(&["dog", "cat", "car", "bus", "tree", "bird", "sofa"], 40, 11);
    let mut entries = corpus.table.entries().to_vec();
    entries.push((8, "ghost".to_string()));
    corpus.table = CategoryTable::new(entries).unwrap();

    let hp = small_hp(2, 3);
    let lexicon = Lexicon::for_table(&corpus.table);
    let report = ablation_sweep(&corpus, &hp, &lexicon, CiderVariant::CiderD, None).unwrap();

    assert_eq!(report.rows.len(), 8);
    let ghost = report.rows.iter().find(|r| r.name == "ghost").unwrap();
    assert_eq!(
        ghost.delta_cider, 0.0,
        "never-depicted ablation must be bit-identical to baseline"
    );
    // the ghost category reports no mention statistic
    let ghost_stats = report
        .stats
        .rows
        .iter()
        .find(|r| r.name == "ghost")
        .unwrap();
    assert_eq!(ghost_stats.depicted, 0);
    assert_eq!(ghost_stats.mentioned_given_depicted, None);
}

#[test]
fn mask_sweep_identity_at_full_retention() {
    let corpus = synthetic_corpus(&["dog", "cat", "car"], 40, 13);
    let hp = small_hp(4, 3);
    let report = mask_sweep(
        &corpus,
        &hp,
        &[MaskHeuristic::Largest, MaskHeuristic::MostFrequent],
        &[Retain::Fraction(1.0), Retain::Fraction(0.5)],
        &[4],
        CiderVariant::CiderD,
    )
    .unwrap();
    assert_eq!(report.rows.len(), 4);

    // full retention must equal the unmasked evaluation exactly
    let schema = ReprSchema::frequency(&corpus.table);
    let ckpt = train_on_corpus(&corpus, &schema, &hp, CiderVariant::CiderD).unwrap();
    let unmasked = evaluate_split(&ckpt, &corpus, &corpus.splits.test, CiderVariant::CiderD)
        .unwrap()
        .mean
        .cider;
    for row in report
        .rows
        .iter()
        .filter(|r| matches!(r.retain, Retain::Fraction(f) if f == 1.0))
    {
        assert_eq!(row.cider, unmasked, "{:?}", row.heuristic);
    }
}
