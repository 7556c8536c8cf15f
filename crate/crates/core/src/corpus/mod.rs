//! Corpus domain types: category tables, scenes with object instances,
//! reference captions, vocabularies and train/val/test splits. Parsing of
//! the COCO-style wire formats lives in the companion crate; this module
//! owns the invariants and the pure construction steps.

pub mod synthetic;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::metrics::tokenize;
use crate::rng::{substream, Stream};
use crate::{CategoryId, ImageId};

pub use synthetic::{generate_synthetic, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorpusError {
    #[error("duplicate category id {0}")]
    DuplicateCategoryId(CategoryId),
    #[error("duplicate category name \"{0}\"")]
    DuplicateCategoryName(String),
    #[error("unknown category {0}")]
    UnknownCategory(CategoryId),
    #[error("unknown image {0}")]
    UnknownImage(ImageId),
    #[error("vocabulary threshold must be at least 1")]
    BadVocabThreshold,
    #[error("no training captions to build a vocabulary from")]
    EmptyTrainingCaptions,
    #[error("requested val {val} + test {test} split sizes do not leave a training set out of {total} images")]
    SplitTooLarge { val: usize, test: usize, total: usize },
    #[error("split sets must be pairwise disjoint and cover the corpus")]
    BadSplit,
    #[error("synthetic spec needs at least one category")]
    EmptyCategories,
    #[error("synthetic spec: mention_rates length must match the category count")]
    MentionRatesLength,
    #[error("scene {image_id}: {what}")]
    InvalidScene { image_id: ImageId, what: &'static str },
}

/// The fixed, ordered set of object categories. The order defines vector
/// layouts everywhere downstream and is serialized with any artifact that
/// depends on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryTable {
    entries: Vec<(CategoryId, String)>,
    #[serde(skip)]
    by_id: BTreeMap<CategoryId, usize>,
}

impl CategoryTable {
    pub fn new(entries: Vec<(CategoryId, String)>) -> Result<Self, CorpusError> {
        let mut by_id = BTreeMap::new();
        let mut names = BTreeSet::new();
        for (pos, (id, name)) in entries.iter().enumerate() {
            if by_id.insert(*id, pos).is_some() {
                return Err(CorpusError::DuplicateCategoryId(*id));
            }
            if !names.insert(name.clone()) {
                return Err(CorpusError::DuplicateCategoryName(name.clone()));
            }
        }
        Ok(CategoryTable { entries, by_id })
    }

    /// Restores the id index after deserialization.
    pub fn reindex(mut self) -> Self {
        self.by_id = self
            .entries
            .iter()
            .enumerate()
            .map(|(pos, (id, _))| (*id, pos))
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 0-based layout position of a category id.
    pub fn position(&self, id: CategoryId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn id_at(&self, pos: usize) -> CategoryId {
        self.entries[pos].0
    }

    pub fn name(&self, id: CategoryId) -> Option<&str> {
        self.position(id).map(|p| self.entries[p].1.as_str())
    }

    pub fn ids(&self) -> impl Iterator<Item = CategoryId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn entries(&self) -> &[(CategoryId, String)] {
        &self.entries
    }
}

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category_id: CategoryId,
    pub bbox: BBox,
    /// Segment area in pixels squared; detector boxes fall back to w*h.
    pub segment_area: f64,
    /// 1.0 for ground-truth annotations.
    pub confidence: f64,
}

/// One image worth of object instances plus its dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: ImageId,
    pub width: u32,
    pub height: u32,
    pub instances: Vec<ObjectInstance>,
}

impl Scene {
    /// Checks the documented invariants against a category table.
    pub fn validate(&self, table: &CategoryTable) -> Result<(), CorpusError> {
        let err = |what| CorpusError::InvalidScene {
            image_id: self.image_id,
            what,
        };
        if self.width == 0 || self.height == 0 {
            return Err(err("image dimensions must be positive"));
        }
        for inst in &self.instances {
            if table.position(inst.category_id).is_none() {
                return Err(CorpusError::UnknownCategory(inst.category_id));
            }
            if !(inst.bbox.w > 0.0 && inst.bbox.h > 0.0) {
                return Err(err("bbox must have positive extent"));
            }
            if inst.segment_area < 0.0 || inst.segment_area > inst.bbox.area() + 1e-9 {
                return Err(err("segment area must lie in [0, w*h]"));
            }
            if inst.bbox.x < 0.0
                || inst.bbox.y < 0.0
                || inst.bbox.x + inst.bbox.w > self.width as f64 + 1e-9
                || inst.bbox.y + inst.bbox.h > self.height as f64 + 1e-9
            {
                return Err(err("bbox exceeds image bounds"));
            }
        }
        Ok(())
    }

    /// Ids of categories with at least one instance, ascending.
    pub fn present_categories(&self) -> BTreeSet<CategoryId> {
        self.instances.iter().map(|i| i.category_id).collect()
    }
}

/// Reference captions per image, stored verbatim; tokenization happens in
/// `metrics`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CaptionSet {
    by_image: BTreeMap<ImageId, Vec<String>>,
}

impl CaptionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, image_id: ImageId, caption: String) {
        self.by_image.entry(image_id).or_default().push(caption);
    }

    pub fn get(&self, image_id: ImageId) -> Option<&Vec<String>> {
        self.by_image.get(&image_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.by_image.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ImageId, &Vec<String>)> {
        self.by_image.iter().map(|(id, caps)| (*id, caps))
    }

    pub fn num_images(&self) -> usize {
        self.by_image.len()
    }

    pub fn num_captions(&self) -> usize {
        self.by_image.values().map(|c| c.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_image.is_empty()
    }
}

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token inventory with the four specials pinned at indices 0..=3. Every
/// non-special token occurred at least `threshold` times in the training
/// captions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
    threshold: u32,
}

impl Vocabulary {
    /// Counts tokens over the training-split captions and keeps those with
    /// count >= threshold, ordered by descending count then lexicographic.
    pub fn build(
        captions: &CaptionSet,
        train_ids: &BTreeSet<ImageId>,
        threshold: u32,
    ) -> Result<Self, CorpusError> {
        if threshold < 1 {
            return Err(CorpusError::BadVocabThreshold);
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        let mut any = false;
        for (id, caps) in captions.iter() {
            if !train_ids.contains(&id) {
                continue;
            }
            for cap in caps {
                any = true;
                for tok in tokenize(cap).tokens() {
                    *counts.entry(tok.clone()).or_insert(0) += 1;
                }
            }
        }
        if !any {
            return Err(CorpusError::EmptyTrainingCaptions);
        }
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= threshold as u64)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| String::from(*s)).collect();
        tokens.extend(kept.into_iter().map(|(t, _)| t));
        Ok(Self::from_tokens(tokens, threshold))
    }

    /// Rebuilds from a serialized token list (specials included, in order).
    pub fn from_tokens(tokens: Vec<String>, threshold: u32) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            index,
            threshold,
        }
    }

    pub fn reindex(self) -> Self {
        let threshold = self.threshold;
        Self::from_tokens(self.tokens, threshold)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn threshold(&self) -> u32 {
        self.threshold
    }

    pub fn encode(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// BOS + encoded caption tokens + EOS.
    pub fn encode_caption(&self, caption: &str) -> Vec<u32> {
        let mut ids = alloc::vec![BOS];
        ids.extend(tokenize(caption).tokens().iter().map(|t| self.encode(t)));
        ids.push(EOS);
        ids
    }
}

/// Pairwise-disjoint train/val/test image id sets covering the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Splits {
    pub train: BTreeSet<ImageId>,
    pub val: BTreeSet<ImageId>,
    pub test: BTreeSet<ImageId>,
}

impl Splits {
    /// Seeded random partition: ids are sorted, shuffled with the `Split`
    /// substream, then val and test are taken off the front.
    pub fn random(
        image_ids: &BTreeSet<ImageId>,
        val_size: usize,
        test_size: usize,
        root_seed: u64,
    ) -> Result<Self, CorpusError> {
        let total = image_ids.len();
        if val_size + test_size >= total {
            return Err(CorpusError::SplitTooLarge {
                val: val_size,
                test: test_size,
                total,
            });
        }
        let mut ids: Vec<ImageId> = image_ids.iter().copied().collect();
        let mut rng = substream(root_seed, Stream::Split, 0);
        ids.shuffle(&mut rng);
        let val: BTreeSet<ImageId> = ids[..val_size].iter().copied().collect();
        let test: BTreeSet<ImageId> = ids[val_size..val_size + test_size].iter().copied().collect();
        let train: BTreeSet<ImageId> = ids[val_size + test_size..].iter().copied().collect();
        Ok(Splits { train, val, test })
    }

    /// Wraps explicitly listed sets, enforcing the partition invariant
    /// against the full corpus id set.
    pub fn explicit(
        train: BTreeSet<ImageId>,
        val: BTreeSet<ImageId>,
        test: BTreeSet<ImageId>,
        corpus_ids: &BTreeSet<ImageId>,
    ) -> Result<Self, CorpusError> {
        let splits = Splits { train, val, test };
        if !splits.is_partition_of(corpus_ids) {
            return Err(CorpusError::BadSplit);
        }
        Ok(splits)
    }

    pub fn is_partition_of(&self, corpus_ids: &BTreeSet<ImageId>) -> bool {
        let total = self.train.len() + self.val.len() + self.test.len();
        if total != corpus_ids.len() {
            return false;
        }
        let mut union = self.train.clone();
        union.extend(&self.val);
        union.extend(&self.test);
        union == *corpus_ids
    }
}

/// Everything the experiment drivers need bundled together.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub table: CategoryTable,
    pub scenes: Vec<Scene>,
    pub captions: CaptionSet,
    pub splits: Splits,
}

impl Corpus {
    pub fn scene(&self, image_id: ImageId) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.image_id == image_id)
    }

    /// Scenes belonging to an id set, in ascending image id order.
    pub fn scenes_in(&self, ids: &BTreeSet<ImageId>) -> Vec<&Scene> {
        let mut out: Vec<&Scene> = self
            .scenes
            .iter()
            .filter(|s| ids.contains(&s.image_id))
            .collect();
        out.sort_by_key(|s| s.image_id);
        out
    }
}
