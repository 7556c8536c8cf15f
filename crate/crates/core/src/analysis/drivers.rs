//! Corpus-level experiment drivers shared by the CLI and the acceptance
//! suite: train-on-corpus, split decoding/evaluation, the k-NN trial, the
//! masking sweep, the category-ablation sweep and the representation-variant
//! grid.

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    compute_category_stats, correlate_into, nearest_k, AnalysisError, CategoryStats, Lexicon,
    Neighbor, StatsTable,
};
use crate::captioner::{
    project, train, train_from_init, Checkpoint, HyperParams, Params, TrainExample, ValData,
};
use crate::corpus::{CaptionSet, Corpus, Vocabulary};
use crate::metrics::{evaluate, CiderVariant, EvalReport};
use crate::repr::{
    build, mask_vector, MaskHeuristic, Pooling, ReprSchema, ReprVector, Retain,
};
use crate::{CategoryId, ImageId};

/// Representation vectors for an id subset, ascending by image id.
pub fn build_reprs(
    corpus: &Corpus,
    schema: &ReprSchema,
    ids: &BTreeSet<ImageId>,
) -> Result<Vec<ReprVector>, AnalysisError> {
    corpus
        .scenes_in(ids)
        .into_iter()
        .map(|scene| build(scene, schema).map_err(AnalysisError::from))
        .collect()
}

/// One training example per (image, reference caption) pair, ordered by
/// image id then caption position.
pub fn build_examples(
    corpus: &Corpus,
    schema: &ReprSchema,
    vocab: &Vocabulary,
    ids: &BTreeSet<ImageId>,
) -> Result<Vec<TrainExample>, AnalysisError> {
    let mut out = Vec::new();
    for scene in corpus.scenes_in(ids) {
        let repr = build(scene, schema)?;
        if let Some(caps) = corpus.captions.get(scene.image_id) {
            for caption in caps {
                out.push(TrainExample {
                    image_id: scene.image_id,
                    repr: repr.clone(),
                    token_ids: vocab.encode_caption(caption),
                });
            }
        }
    }
    Ok(out)
}

/// Builds the vocabulary from the training captions, assembles examples and
/// validation data per the corpus splits, and trains.
pub fn train_on_corpus(
    corpus: &Corpus,
    schema: &ReprSchema,
    hp: &HyperParams,
    variant: CiderVariant,
) -> Result<Checkpoint, AnalysisError> {
    let vocab = Vocabulary::build(&corpus.captions, &corpus.splits.train, hp.vocab_threshold)?;
    let examples = build_examples(corpus, schema, &vocab, &corpus.splits.train)?;
    let val = if corpus.splits.val.is_empty() {
        None
    } else {
        Some(ValData {
            reprs: build_reprs(corpus, schema, &corpus.splits.val)?,
            captions: corpus.captions.clone(),
        })
    };
    Ok(train(&examples, hp, &vocab, val.as_ref(), variant)?)
}

/// Greedy captions for an id subset.
pub fn decode_split(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    ids: &BTreeSet<ImageId>,
) -> Result<BTreeMap<ImageId, String>, AnalysisError> {
    let reprs = build_reprs(corpus, &ckpt.schema, ids)?;
    let mut out = BTreeMap::new();
    for r in &reprs {
        out.insert(r.image_id, ckpt.caption(r)?);
    }
    Ok(out)
}

/// Decode an id subset and score it against the corpus references.
pub fn evaluate_split(
    ckpt: &Checkpoint,
    corpus: &Corpus,
    ids: &BTreeSet<ImageId>,
    variant: CiderVariant,
) -> Result<EvalReport, AnalysisError> {
    let generated = decode_split(ckpt, corpus, ids)?;
    Ok(evaluate(&generated, &corpus.captions, ids, variant)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnnReferenceMode {
    /// References are the neighbors' generated captions (the paper's setup).
    #[default]
    Generated,
    /// References are the neighbors' ground-truth captions.
    GroundTruth,
}

#[derive(Debug, Clone)]
pub struct KnnParams {
    pub k: usize,
    pub reference_mode: KnnReferenceMode,
    pub variant: CiderVariant,
}

impl Default for KnnParams {
    fn default() -> Self {
        KnnParams {
            k: 5,
            reference_mode: KnnReferenceMode::Generated,
            variant: CiderVariant::CiderD,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnRow {
    pub image_id: ImageId,
    pub exact: bool,
    pub caption: String,
    pub raw_neighbors: Vec<Neighbor>,
    pub projected_neighbors: Vec<Neighbor>,
    pub raw_neighbor_captions: Vec<String>,
    pub projected_neighbor_captions: Vec<String>,
}

/// Aggregate scores over the full test set and its exact / non-exact
/// subsets; empty subsets are reported as absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnAggregates {
    pub all: EvalReport,
    pub exact: Option<EvalReport>,
    pub non_exact: Option<EvalReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReport {
    pub k: usize,
    pub rows: Vec<KnnRow>,
    pub raw: KnnAggregates,
    pub projected: KnnAggregates,
}

/// The k-NN trial: captions are generated for every training image, each
/// test image is matched to its k nearest training images in raw and
/// projected space, and the test captions are scored against the neighbor
/// captions. A test image is an exact replica when all k raw distances are
/// zero.
pub fn knn_report(
    test: &[ReprVector],
    train_set: &[ReprVector],
    ckpt: &Checkpoint,
    gt_captions: Option<&CaptionSet>,
    params: &KnnParams,
) -> Result<KnnReport, AnalysisError> {
    if params.k > train_set.len() {
        return Err(AnalysisError::KTooLarge {
            k: params.k,
            train: train_set.len(),
        });
    }
    if params.reference_mode == KnnReferenceMode::GroundTruth && gt_captions.is_none() {
        return Err(AnalysisError::MissingGroundTruthCaptions);
    }

    // Captions for every training image, and both distance spaces.
    let mut train_captions: BTreeMap<ImageId, String> = BTreeMap::new();
    let mut raw_pool: Vec<(ImageId, Vec<f64>)> = Vec::with_capacity(train_set.len());
    let mut proj_pool: Vec<(ImageId, Vec<f64>)> = Vec::with_capacity(train_set.len());
    for v in train_set {
        train_captions.insert(v.image_id, ckpt.caption(v)?);
        raw_pool.push((v.image_id, v.values.clone()));
        proj_pool.push((v.image_id, project(&ckpt.params, &v.values)?.1));
    }

    let neighbor_refs = |neighbors: &[Neighbor]| -> Vec<String> {
        match params.reference_mode {
            KnnReferenceMode::Generated => neighbors
                .iter()
                .map(|n| train_captions[&n.image_id].clone())
                .collect(),
            KnnReferenceMode::GroundTruth => neighbors
                .iter()
                .flat_map(|n| {
                    gt_captions
                        .unwrap()
                        .get(n.image_id)
                        .cloned()
                        .unwrap_or_default()
                })
                .collect(),
        }
    };

    let mut rows = Vec::with_capacity(test.len());
    let mut generated: BTreeMap<ImageId, String> = BTreeMap::new();
    let mut raw_refs = CaptionSet::new();
    let mut proj_refs = CaptionSet::new();
    let mut exact_ids = BTreeSet::new();
    let mut non_exact_ids = BTreeSet::new();

    for v in test {
        let raw_neighbors = nearest_k(&v.values, &raw_pool, params.k)?;
        let (_, q) = project(&ckpt.params, &v.values)?;
        let projected_neighbors = nearest_k(&q, &proj_pool, params.k)?;
        let exact = raw_neighbors
            .last()
            .map(|n| n.distance == 0.0)
            .unwrap_or(false);

        let caption = ckpt.caption(v)?;
        generated.insert(v.image_id, caption.clone());
        let raw_caps = neighbor_refs(&raw_neighbors);
        let proj_caps = neighbor_refs(&projected_neighbors);
        for c in &raw_caps {
            raw_refs.push(v.image_id, c.clone());
        }
        for c in &proj_caps {
            proj_refs.push(v.image_id, c.clone());
        }
        if exact {
            exact_ids.insert(v.image_id);
        } else {
            non_exact_ids.insert(v.image_id);
        }
        rows.push(KnnRow {
            image_id: v.image_id,
            exact,
            caption,
            raw_neighbors,
            projected_neighbors,
            raw_neighbor_captions: raw_caps,
            projected_neighbor_captions: proj_caps,
        });
    }

    let all_ids: BTreeSet<ImageId> = generated.keys().copied().collect();
    let aggregates = |refs: &CaptionSet| -> Result<KnnAggregates, AnalysisError> {
        let score = |ids: &BTreeSet<ImageId>| -> Result<Option<EvalReport>, AnalysisError> {
            if ids.is_empty() {
                Ok(None)
            } else {
                Ok(Some(evaluate(&generated, refs, ids, params.variant)?))
            }
        };
        Ok(KnnAggregates {
            all: score(&all_ids)?.expect("test set is non-empty"),
            exact: score(&exact_ids)?,
            non_exact: score(&non_exact_ids)?,
        })
    };

    Ok(KnnReport {
        k: params.k,
        rows,
        raw: aggregates(&raw_refs)?,
        projected: aggregates(&proj_refs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskSweepRow {
    pub heuristic: MaskHeuristic,
    pub retain: Retain,
    pub seed: u64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MaskSweepReport {
    pub rows: Vec<MaskSweepRow>,
}

/// Trains one frequency model per seed on unmasked representations, then
/// evaluates test CIDEr with the test vectors masked per heuristic and
/// retention level (masking is an evaluation-input intervention).
pub fn mask_sweep(
    corpus: &Corpus,
    hp: &HyperParams,
    heuristics: &[MaskHeuristic],
    retains: &[Retain],
    seeds: &[u64],
    variant: CiderVariant,
) -> Result<MaskSweepReport, AnalysisError> {
    let schema = ReprSchema::frequency(&corpus.table);
    let mut rows = Vec::new();
    for &seed in seeds {
        let hp_run = HyperParams {
            seed,
            ..hp.clone()
        };
        let ckpt = train_on_corpus(corpus, &schema, &hp_run, variant)?;
        let test_scenes = corpus.scenes_in(&corpus.splits.test);
        let test_ids: BTreeSet<ImageId> = corpus.splits.test.clone();
        for &heuristic in heuristics {
            for &retain in retains {
                let mut generated: BTreeMap<ImageId, String> = BTreeMap::new();
                for scene in &test_scenes {
                    let full = build(scene, &schema)?;
                    let masked = mask_vector(scene, &full, heuristic, retain, seed)?;
                    generated.insert(scene.image_id, ckpt.caption(&masked)?);
                }
                let report = evaluate(&generated, &corpus.captions, &test_ids, variant)?;
                rows.push(MaskSweepRow {
                    heuristic,
                    retain,
                    seed,
                    cider: report.mean.cider,
                });
            }
        }
    }
    Ok(MaskSweepReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub category_id: CategoryId,
    pub name: String,
    /// Test CIDEr of the 79-dimensional model without this category.
    pub cider: f64,
    /// CIDEr(ablated) - CIDEr(baseline); negative when ablation hurts.
    pub delta_cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline_cider: f64,
    pub rows: Vec<AblationRow>,
    pub stats: CategoryStats,
    /// Rank correlations of the CIDEr drop (baseline - ablated) against
    /// f(v_c) and p(t_c|v_c).
    pub correlations: StatsTable,
}

/// Removes one category at a time from the frequency representation,
/// retrains with identical data order and an init sharing the baseline's
/// random draw (the ablated projection column is deleted, everything else
/// is bit-identical), and records the CIDEr delta per category.
pub fn ablation_sweep(
    corpus: &Corpus,
    hp: &HyperParams,
    lexicon: &Lexicon,
    variant: CiderVariant,
    baseline: Option<&Checkpoint>,
) -> Result<AblationReport, AnalysisError> {
    let schema = ReprSchema::frequency(&corpus.table);
    let vocab = Vocabulary::build(&corpus.captions, &corpus.splits.train, hp.vocab_threshold)?;
    let full_init = Params::init(hp, schema.dim(), vocab.len());

    let owned_baseline;
    let baseline_ckpt = match baseline {
        Some(c) => c,
        None => {
            owned_baseline = train_on_corpus(corpus, &schema, hp, variant)?;
            &owned_baseline
        }
    };
    let baseline_cider =
        evaluate_split(baseline_ckpt, corpus, &corpus.splits.test, variant)?.mean.cider;

    let mut rows = Vec::with_capacity(corpus.table.len());
    for (category, name) in corpus.table.entries() {
        let run = || -> Result<f64, AnalysisError> {
            let ablated = ReprSchema::Ablated {
                base: Box::new(schema.clone()),
                removed: *category,
            };
            let examples = build_examples(corpus, &ablated, &vocab, &corpus.splits.train)?;
            let val = if corpus.splits.val.is_empty() {
                None
            } else {
                Some(ValData {
                    reprs: build_reprs(corpus, &ablated, &corpus.splits.val)?,
                    captions: corpus.captions.clone(),
                })
            };
            let init = full_init.without_projection_columns(&schema.coordinate_ranges(*category)?);
            let ckpt = train_from_init(&examples, hp, &vocab, val.as_ref(), variant, init)?;
            Ok(evaluate_split(&ckpt, corpus, &corpus.splits.test, variant)?.mean.cider)
        };
        let cider = run().map_err(|e| AnalysisError::AblationFailed(*category, Box::new(e)))?;
        rows.push(AblationRow {
            category_id: *category,
            name: name.clone(),
            cider,
            delta_cider: cider - baseline_cider,
        });
    }

    let train_scenes = corpus.scenes_in(&corpus.splits.train);
    let stats = compute_category_stats(&train_scenes, &corpus.captions, lexicon, &corpus.table);

    // Constant series (e.g. identical drops on a degenerate run) have no
    // defined rank correlation; the row is omitted rather than invented.
    let mut correlations = StatsTable::default();
    let drops: Vec<f64> = rows.iter().map(|r| baseline_cider - r.cider).collect();
    let f_v: Vec<f64> = stats.rows.iter().map(|r| r.depicted as f64).collect();
    match correlate_into(&mut correlations, "f_v", &f_v, &drops) {
        Ok(()) | Err(AnalysisError::Correlation(super::CorrelationError::ConstantInput)) => {}
        Err(e) => return Err(e),
    }

    let mentioned_pairs: (Vec<f64>, Vec<f64>) = stats
        .rows
        .iter()
        .zip(&drops)
        .filter_map(|(r, &d)| r.mentioned_given_depicted.map(|p| (p, d)))
        .unzip();
    match correlate_into(
        &mut correlations,
        "p_mention_given_depicted",
        &mentioned_pairs.0,
        &mentioned_pairs.1,
    ) {
        Ok(()) | Err(AnalysisError::Correlation(super::CorrelationError::ConstantInput)) => {}
        Err(e) => return Err(e),
    }

    Ok(AblationReport {
        baseline_cider,
        rows,
        stats,
        correlations,
    })
}

/// The representation variants of the main comparison table, in row order.
pub fn table1_schemas(table: &crate::corpus::CategoryTable) -> Vec<ReprSchema> {
    let freq = ReprSchema::frequency(table);
    let size = ReprSchema::pooled_size(table, Pooling::Max);
    let dist = ReprSchema::pooled_distance(table, Pooling::Min);
    alloc::vec![
        freq.clone(),
        ReprSchema::normalized(table),
        ReprSchema::binarized(table),
        dist.clone(),
        size.clone(),
        ReprSchema::concat(alloc::vec![size.clone(), dist.clone()]),
        ReprSchema::concat(alloc::vec![freq.clone(), dist.clone()]),
        ReprSchema::concat(alloc::vec![freq.clone(), size.clone()]),
        ReprSchema::concat(alloc::vec![freq, size, dist]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub representation: String,
    pub cider: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Table1Report {
    pub rows: Vec<Table1Row>,
}

/// Trains one model for a representation schema and scores the test split.
pub fn run_variant(
    corpus: &Corpus,
    schema: &ReprSchema,
    hp: &HyperParams,
    variant: CiderVariant,
) -> Result<(Checkpoint, EvalReport), AnalysisError> {
    let ckpt = train_on_corpus(corpus, schema, hp, variant)?;
    let report = evaluate_split(&ckpt, corpus, &corpus.splits.test, variant)?;
    Ok((ckpt, report))
}
