//! The interpretability experiments: k-NN matching in raw and projected
//! spaces, category distribution and mention statistics with lexicon
//! matching, rank correlations, and the masking / category-ablation drivers.

pub mod correlation;
mod drivers;

pub use correlation::{kendall, midranks, spearman, CorrelationError};
pub use drivers::{
    ablation_sweep, build_examples, build_reprs, decode_split, evaluate_split, knn_report,
    mask_sweep, run_variant, table1_schemas, train_on_corpus, AblationReport, AblationRow,
    KnnAggregates, KnnParams, KnnReferenceMode, KnnReport, KnnRow, MaskSweepReport, MaskSweepRow,
    Table1Report, Table1Row,
};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::captioner::{project, CaptionerError, Checkpoint};
use crate::corpus::{CaptionSet, CategoryTable, CorpusError, Scene};
use crate::fmath;
use crate::metrics::{tokenize, MetricsError, TokenSeq};
use crate::repr::{ReprError, ReprVector};
use crate::{CategoryId, ImageId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("k = {k} exceeds the {train} training vectors")]
    KTooLarge { k: usize, train: usize },
    #[error("representation dimensions differ: {a} vs {b}")]
    DimMismatch { a: usize, b: usize },
    #[error("ground-truth reference mode needs the training caption set")]
    MissingGroundTruthCaptions,
    #[error("category {0} failed during ablation: {1}")]
    AblationFailed(CategoryId, alloc::boxed::Box<AnalysisError>),
    #[error(transparent)]
    Captioner(#[from] CaptionerError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub image_id: ImageId,
    pub distance: f64,
}

/// Which space distances are measured in.
#[derive(Clone, Copy)]
pub enum KnnSpace<'a> {
    Raw,
    /// Applies the checkpoint's learned projection to both sides.
    Projected(&'a Checkpoint),
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    fmath::sqrt(acc)
}

/// k nearest neighbors by Euclidean distance over pre-extracted value
/// vectors; ties resolve to the lower image id.
pub(crate) fn nearest_k(
    query: &[f64],
    train: &[(ImageId, Vec<f64>)],
    k: usize,
) -> Result<Vec<Neighbor>, AnalysisError> {
    if k > train.len() {
        return Err(AnalysisError::KTooLarge {
            k,
            train: train.len(),
        });
    }
    for (_, values) in train {
        if values.len() != query.len() {
            return Err(AnalysisError::DimMismatch {
                a: query.len(),
                b: values.len(),
            });
        }
    }
    let mut scored: Vec<Neighbor> = train
        .iter()
        .map(|(id, values)| Neighbor {
            image_id: *id,
            distance: euclidean(query, values),
        })
        .collect();
    scored.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap()
            .then(a.image_id.cmp(&b.image_id))
    });
    scored.truncate(k);
    Ok(scored)
}

/// k nearest training representations of a query, in raw or projected space.
pub fn knn(
    query: &ReprVector,
    train: &[ReprVector],
    k: usize,
    space: KnnSpace<'_>,
) -> Result<Vec<Neighbor>, AnalysisError> {
    match space {
        KnnSpace::Raw => {
            let pool: Vec<(ImageId, Vec<f64>)> = train
                .iter()
                .map(|v| (v.image_id, v.values.clone()))
                .collect();
            nearest_k(&query.values, &pool, k)
        }
        KnnSpace::Projected(ckpt) => {
            let (_, q) = project(&ckpt.params, &query.values)?;
            let pool: Vec<(ImageId, Vec<f64>)> = train
                .iter()
                .map(|v| Ok((v.image_id, project(&ckpt.params, &v.values)?.1)))
                .collect::<Result<_, CaptionerError>>()?;
            nearest_k(&q, &pool, k)
        }
    }
}

/// Category name -> match terms (tokenized), always containing the label
/// itself and, for multiword labels, the head noun (last token).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    terms: BTreeMap<CategoryId, Vec<Vec<String>>>,
}

impl Lexicon {
    /// Baseline lexicon: each category matches its own label plus the head
    /// noun of a multiword label.
    pub fn for_table(table: &CategoryTable) -> Self {
        let mut lex = Lexicon {
            terms: BTreeMap::new(),
        };
        for (id, name) in table.entries() {
            lex.add_term(*id, name);
            let tokens = tokenize(name);
            if tokens.len() > 1 {
                let head = tokens.tokens().last().unwrap().clone();
                lex.add_term(*id, &head);
            }
        }
        lex
    }

    /// Adds a synonym/hyponym term for a category (tokenized; duplicates
    /// are ignored).
    pub fn add_term(&mut self, category: CategoryId, term: &str) {
        let tokens: Vec<String> = tokenize(term).tokens().to_vec();
        if tokens.is_empty() {
            return;
        }
        let entry = self.terms.entry(category).or_default();
        if !entry.contains(&tokens) {
            entry.push(tokens);
        }
    }

    pub fn terms(&self, category: CategoryId) -> &[Vec<String>] {
        self.terms
            .get(&category)
            .map(|t| t.as_slice())
            .unwrap_or(&[])
    }
}

/// True iff any lexicon term of the category occurs in the tokens;
/// multiword terms must match as contiguous spans.
pub fn match_category_mention(tokens: &TokenSeq, category: CategoryId, lexicon: &Lexicon) -> bool {
    let toks = tokens.tokens();
    lexicon.terms(category).iter().any(|term| {
        !term.is_empty()
            && toks.len() >= term.len()
            && toks.windows(term.len()).any(|w| w == term.as_slice())
    })
}

/// Normalized document frequency of every category over one split:
/// |images containing c| / sum over categories of the same count.
pub fn category_distribution(scenes: &[&Scene], table: &CategoryTable) -> Vec<f64> {
    let mut counts = alloc::vec![0.0; table.len()];
    for scene in scenes {
        for cat in scene.present_categories() {
            if let Some(pos) = table.position(cat) {
                counts[pos] += 1.0;
            }
        }
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        for c in &mut counts {
            *c /= total;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStatRow {
    pub category_id: CategoryId,
    pub name: String,
    /// f(v_c): training images in which the category is annotated.
    pub depicted: u64,
    /// p(t_c | v_c): fraction of those images with at least one reference
    /// mentioning the category; absent when the category is never depicted.
    pub mentioned_given_depicted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub rows: Vec<CategoryStatRow>,
}

/// f(v_c) and p(t_c|v_c) over the training split, with mention detection by
/// lexicon matching against the tokenized reference captions.
pub fn compute_category_stats(
    train_scenes: &[&Scene],
    captions: &CaptionSet,
    lexicon: &Lexicon,
    table: &CategoryTable,
) -> CategoryStats {
    let tokenized: BTreeMap<ImageId, Vec<TokenSeq>> = train_scenes
        .iter()
        .map(|s| {
            let caps = captions.get(s.image_id).cloned().unwrap_or_default();
            (s.image_id, caps.iter().map(|c| tokenize(c)).collect())
        })
        .collect();

    let mut rows = Vec::with_capacity(table.len());
    for (id, name) in table.entries() {
        let mut depicted = 0u64;
        let mut mentioned = 0u64;
        for scene in train_scenes {
            if !scene.present_categories().contains(id) {
                continue;
            }
            depicted += 1;
            let refs = &tokenized[&scene.image_id];
            if refs.iter().any(|t| match_category_mention(t, *id, lexicon)) {
                mentioned += 1;
            }
        }
        rows.push(CategoryStatRow {
            category_id: *id,
            name: name.to_string(),
            depicted,
            mentioned_given_depicted: if depicted > 0 {
                Some(mentioned as f64 / depicted as f64)
            } else {
                None
            },
        });
    }
    CategoryStats { rows }
}

/// One correlation table row: a predictor against the ablation CIDEr drop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub predictor: String,
    pub spearman_rho: f64,
    pub spearman_p: f64,
    pub kendall_tau: f64,
    pub kendall_p: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StatsTable {
    pub rows: Vec<StatsRow>,
}

impl StatsTable {
    pub fn row(&self, predictor: &str) -> Option<&StatsRow> {
        self.rows.iter().find(|r| r.predictor == predictor)
    }
}

/// Correlates a predictor series against paired values and appends a row.
pub fn correlate_into(
    table: &mut StatsTable,
    predictor: &str,
    xs: &[f64],
    ys: &[f64],
) -> Result<(), AnalysisError> {
    let (rho, sp) = spearman(xs, ys)?;
    let (tau, kp) = kendall(xs, ys)?;
    table.rows.push(StatsRow {
        predictor: predictor.to_string(),
        spearman_rho: rho,
        spearman_p: sp,
        kendall_tau: tau,
        kendall_p: kp,
        n: xs.len(),
    });
    Ok(())
}
