//! The fixed golden corpus and the serialized shape of its frozen scores.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Serialize, Deserialize, Clone)]
pub struct GoldenImage {
    pub id: i64,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize, Clone)]
pub struct GoldenScores {
    pub cider_per_image: BTreeMap<i64, f64>,
    pub cider_mean: f64,
    pub cider_d_per_image: BTreeMap<i64, f64>,
    pub cider_d_mean: f64,
    pub bleu_corpus: Vec<f64>,
    pub bleu_per_image: BTreeMap<i64, Vec<f64>>,
    pub rouge_l_per_image: BTreeMap<i64, f64>,
}

#[derive(Serialize, Deserialize, Clone)]
pub struct GoldenFile {
    pub images: Vec<GoldenImage>,
    pub expected: GoldenScores,
}

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(|t| t.to_string()).collect()
}

/// Three hand-picked images: heavy partial overlap, an exact reference match,
/// and a candidate nearly disjoint from its references.
pub fn golden_corpus() -> Vec<GoldenImage> {
    vec![
        GoldenImage {
            id: 1,
            candidate: toks("a group of people sitting around a table ."),
            references: vec![
                toks("a group of people sitting around a table with food ."),
                toks("people sitting at a table ."),
                toks("a woman sitting at a table with a plate of food ."),
                toks("a group of people at a dinner table ."),
                toks("several people around a wooden table ."),
            ],
        },
        GoldenImage {
            id: 2,
            candidate: toks("two dogs running on the beach ."),
            references: vec![
                toks("two dogs running on the beach ."),
                toks("a pair of dogs run along a sandy beach ."),
                toks("dogs playing on the shore ."),
                toks("two dogs playing in the sand ."),
                toks("the dogs are running ."),
            ],
        },
        GoldenImage {
            id: 3,
            candidate: toks("a red bus parked next to a tall building ."),
            references: vec![
                toks("a clock tower above a city street ."),
                toks("a large clock on a tower ."),
                toks("the clock reads noon in the city ."),
                toks("a tall tower with a clock ."),
                toks("people walking under a large clock tower ."),
            ],
        },
    ]
}

/// Score the golden corpus with the brute-force oracle.
pub fn score(images: &[GoldenImage]) -> GoldenScores {
    let cands: BTreeMap<i64, Vec<String>> = images
        .iter()
        .map(|im| (im.id, im.candidate.clone()))
        .collect();
    let refs: BTreeMap<i64, Vec<Vec<String>>> = images
        .iter()
        .map(|im| (im.id, im.references.clone()))
        .collect();

    let (cider_per_image, cider_mean) = crate::cider(&cands, &refs, crate::CiderKind::Plain);
    let (cider_d_per_image, cider_d_mean) = crate::cider(&cands, &refs, crate::CiderKind::D);

    let cand_list: Vec<Vec<String>> = images.iter().map(|im| im.candidate.clone()).collect();
    let ref_list: Vec<Vec<Vec<String>>> = images.iter().map(|im| im.references.clone()).collect();
    let bleu_corpus = crate::bleu_corpus(&cand_list, &ref_list, 4);

    let mut bleu_per_image = BTreeMap::new();
    let mut rouge_l_per_image = BTreeMap::new();
    for im in images {
        bleu_per_image.insert(im.id, crate::bleu_sentence(&im.candidate, &im.references, 4));
        rouge_l_per_image.insert(im.id, crate::rouge_l(&im.candidate, &im.references, 1.2));
    }

    GoldenScores {
        cider_per_image,
        cider_mean,
        cider_d_per_image,
        cider_d_mean,
        bleu_corpus,
        bleu_per_image,
        rouge_l_per_image,
    }
}
