//! Desk-scale synthetic grounded corpus: random scenes plus five template
//! references per image that verbalize the scene's categories, counts
//! (one/two/three/several) and coarse sizes (big/small), so that the
//! representation-to-caption mapping is learnable by construction.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BBox, CaptionSet, CategoryTable, CorpusError, ObjectInstance, Scene};
use crate::rng::{substream, Stream};
use crate::CategoryId;

/// Largest-instance area fraction at or above which a category is
/// verbalized as "big".
pub const BIG_AREA_FRACTION: f64 = 0.10;
/// At most this many categories are verbalized per image, largest first.
pub const MAX_MENTIONED: usize = 3;

/// Default ladder of per-category mention probabilities; categories cycle
/// through it in table order. The spread is what makes mention-given-
/// depiction statistics non-trivial on synthetic data.
pub const MENTION_LADDER: [f64; 8] = [1.0, 0.85, 0.7, 0.55, 0.4, 0.3, 0.2, 0.12];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub categories: Vec<String>,
    pub scenes: usize,
    /// Maximum object instances per scene (k is uniform in 1..=max).
    pub max_instances: usize,
    pub image_width: u32,
    pub image_height: u32,
    /// Per-category probability that a depicted category is verbalized;
    /// defaults to `MENTION_LADDER` cycled over the categories.
    pub mention_rates: Option<Vec<f64>>,
}

impl SyntheticSpec {
    pub fn with_categories(names: &[&str], scenes: usize, max_instances: usize) -> Self {
        SyntheticSpec {
            categories: names.iter().map(|n| n.to_string()).collect(),
            scenes,
            max_instances,
            image_width: 640,
            image_height: 480,
            mention_rates: None,
        }
    }

    fn mention_rate(&self, position: usize) -> f64 {
        match &self.mention_rates {
            Some(rates) => rates[position],
            None => MENTION_LADDER[position % MENTION_LADDER.len()],
        }
    }
}

pub fn count_word(n: usize) -> &'static str {
    match n {
        0 | 1 => "one",
        2 => "two",
        3 => "three",
        _ => "several",
    }
}

struct Mention {
    name: String,
    count: usize,
    size_word: &'static str,
}

fn counts_phrase(mentions: &[Mention]) -> String {
    mentions
        .iter()
        .map(|m| format!("{} {}", count_word(m.count), m.name))
        .collect::<Vec<_>>()
        .join(" and ")
}

fn names_phrase(mentions: &[Mention]) -> String {
    mentions
        .iter()
        .map(|m| m.name.clone())
        .collect::<Vec<_>>()
        .join(" and ")
}

fn sized_counts_phrase(mentions: &[Mention]) -> String {
    mentions
        .iter()
        .map(|m| format!("{} {} {}", count_word(m.count), m.size_word, m.name))
        .collect::<Vec<_>>()
        .join(" and ")
}

/// Pure function of (spec, seed): scenes with random non-degenerate boxes
/// and five deterministic template references per image.
pub fn generate_synthetic(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(CategoryTable, Vec<Scene>, CaptionSet), CorpusError> {
    if spec.categories.is_empty() {
        return Err(CorpusError::EmptyCategories);
    }
    if let Some(rates) = &spec.mention_rates {
        if rates.len() != spec.categories.len() {
            return Err(CorpusError::MentionRatesLength);
        }
    }
    let table = CategoryTable::new(
        spec.categories
            .iter()
            .enumerate()
            .map(|(i, name)| (i as CategoryId + 1, name.clone()))
            .collect(),
    )?;

    let width = spec.image_width as f64;
    let height = spec.image_height as f64;
    let image_area = width * height;
    let max_instances = spec.max_instances.max(1);

    let mut scenes = Vec::with_capacity(spec.scenes);
    let mut captions = CaptionSet::new();

    for scene_index in 0..spec.scenes {
        let image_id = scene_index as i64 + 1;
        let mut rng = substream(seed, Stream::Synth, scene_index as u64);

        let num_instances = rng.random_range(1..=max_instances);
        let mut counts: BTreeMap<CategoryId, usize> = BTreeMap::new();
        for _ in 0..num_instances {
            let pos = rng.random_range(0..table.len());
            *counts.entry(table.id_at(pos)).or_insert(0) += 1;
        }

        // Crowded categories get a smaller per-instance share of a fixed
        // area budget, so size order and count order tend to disagree.
        let mut instances = Vec::with_capacity(num_instances);
        for (&cat, &count) in &counts {
            let budget = rng.random_range(0.06..0.30);
            for _ in 0..count {
                let jitter = rng.random_range(0.8..1.2);
                let target = (budget / count as f64 * jitter).max(1e-4);
                let aspect = rng.random_range(0.6..1.6);
                let mut w = libm::sqrt(target * image_area * aspect);
                let mut h = target * image_area / w;
                w = w.clamp(4.0, width);
                h = h.clamp(4.0, height);
                let x = rng.random_range(0.0..=(width - w));
                let y = rng.random_range(0.0..=(height - h));
                let segment_fraction = rng.random_range(0.6..0.95);
                instances.push(ObjectInstance {
                    category_id: cat,
                    bbox: BBox { x, y, w, h },
                    segment_area: segment_fraction * w * h,
                    confidence: 1.0,
                });
            }
        }

        // Present categories in descending largest-instance size order.
        let mut by_size: Vec<(CategoryId, f64)> = counts
            .keys()
            .map(|&cat| {
                let biggest = instances
                    .iter()
                    .filter(|i| i.category_id == cat)
                    .map(|i| i.segment_area)
                    .fold(0.0, f64::max);
                (cat, biggest / image_area)
            })
            .collect();
        by_size.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));

        // Each present category is verbalized with its fixed mention rate;
        // the largest is always kept so no image ends up unnamed.
        let mut mentions: Vec<Mention> = Vec::new();
        for &(cat, size) in &by_size {
            let pos = table.position(cat).unwrap();
            let include = rng.random::<f64>() < spec.mention_rate(pos);
            if (include || mentions.is_empty()) && mentions.len() < MAX_MENTIONED {
                mentions.push(Mention {
                    name: table.name(cat).unwrap().to_string(),
                    count: counts[&cat],
                    size_word: if size >= BIG_AREA_FRACTION { "big" } else { "small" },
                });
            }
        }

        let first = &mentions[0];
        captions.push(image_id, format!("{} in the picture .", counts_phrase(&mentions)));
        captions.push(
            image_id,
            format!("a {} {} in the picture .", first.size_word, first.name),
        );
        captions.push(image_id, format!("there are {} .", counts_phrase(&mentions)));
        captions.push(image_id, format!("a picture of {} .", names_phrase(&mentions)));
        captions.push(image_id, format!("{} .", sized_counts_phrase(&mentions)));

        scenes.push(Scene {
            image_id,
            width: spec.image_width,
            height: spec.image_height,
            instances,
        });
    }

    Ok((table, scenes, captions))
}
