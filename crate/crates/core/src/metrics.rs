//! Self-contained caption evaluation: tokenizer, BLEU-1..4, ROUGE-L and
//! CIDEr (plain and the count-clipped, length-penalized D variant), with
//! per-image and corpus-level reporting.
//!
//! No stemming is applied anywhere; scores are therefore not interchangeable
//! with the stemmed reference toolkits, and the test suite pins this
//! tokenization against its own brute-force oracle instead.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::CaptionSet;
use crate::fmath;
use crate::ImageId;

pub const MAX_NGRAM: usize = 4;
pub const ROUGE_BETA: f64 = 1.2;
pub const CIDER_SIGMA: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("image {0} has no reference captions")]
    MissingReferences(ImageId),
    #[error("no images selected for evaluation")]
    EmptyEvaluation,
    #[error("missing generated captions for images: {0:?}")]
    MissingGenerated(Vec<ImageId>),
}

/// Lowercased tokens with leading/trailing punctuation split off; never
/// contains empty tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct TokenSeq(Vec<String>);

impl TokenSeq {
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        TokenSeq(tokens.into_iter().filter(|t| !t.is_empty()).collect())
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn joined(&self) -> String {
        self.0.join(" ")
    }
}

/// Unicode-aware lowercasing, whitespace split, then leading and trailing
/// punctuation of each chunk become tokens of their own ("riding." turns
/// into "riding", ".").  Interior punctuation ("it's") is left alone.
pub fn tokenize(caption: &str) -> TokenSeq {
    let lower = caption.to_lowercase();
    let mut tokens = Vec::new();
    for chunk in lower.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        let mut leading = Vec::new();
        let mut trailing = Vec::new();
        while start < end && !chars[start].is_alphanumeric() {
            leading.push(chars[start].to_string());
            start += 1;
        }
        while end > start && !chars[end - 1].is_alphanumeric() {
            trailing.push(chars[end - 1].to_string());
            end -= 1;
        }
        tokens.extend(leading);
        if start < end {
            tokens.push(chars[start..end].iter().collect());
        }
        tokens.extend(trailing.into_iter().rev());
    }
    TokenSeq(tokens)
}

pub type Ngram = Vec<String>;

/// Multisets of n-grams for n = 1..=MAX_NGRAM. A T-token sequence has
/// max(T - n + 1, 0) slots at order n.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramProfile {
    by_n: Vec<BTreeMap<Ngram, u64>>,
}

impl NGramProfile {
    pub fn of(seq: &TokenSeq) -> Self {
        let toks = seq.tokens();
        let mut by_n = Vec::with_capacity(MAX_NGRAM);
        for n in 1..=MAX_NGRAM {
            let mut counts: BTreeMap<Ngram, u64> = BTreeMap::new();
            if toks.len() >= n {
                for window in toks.windows(n) {
                    *counts.entry(window.to_vec()).or_insert(0) += 1;
                }
            }
            by_n.push(counts);
        }
        NGramProfile { by_n }
    }

    /// Counts at order `n` (1-based).
    pub fn order(&self, n: usize) -> &BTreeMap<Ngram, u64> {
        &self.by_n[n - 1]
    }
}

/// idf(g) = ln(|corpus| / df(g)) over the reference corpus, with the document
/// frequency of unseen n-grams clamped to 1.
#[derive(Debug, Clone)]
pub struct IdfTable {
    num_docs: usize,
    df: Vec<BTreeMap<Ngram, u64>>,
}

impl IdfTable {
    /// One document per image; an n-gram's df is the number of images whose
    /// reference set contains it at least once.
    pub fn from_references(refs: &BTreeMap<ImageId, Vec<TokenSeq>>) -> Self {
        let mut df = alloc::vec![BTreeMap::new(); MAX_NGRAM];
        for seqs in refs.values() {
            let mut seen: Vec<BTreeSet<&Ngram>> = alloc::vec![BTreeSet::new(); MAX_NGRAM];
            let profiles: Vec<NGramProfile> = seqs.iter().map(NGramProfile::of).collect();
            for profile in &profiles {
                for n in 1..=MAX_NGRAM {
                    for gram in profile.order(n).keys() {
                        seen[n - 1].insert(gram);
                    }
                }
            }
            for n in 0..MAX_NGRAM {
                for gram in &seen[n] {
                    *df[n].entry((*gram).clone()).or_insert(0) += 1;
                }
            }
        }
        IdfTable {
            num_docs: refs.len(),
            df,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.num_docs
    }

    pub fn idf(&self, n: usize, gram: &Ngram) -> f64 {
        let df = self.df[n - 1].get(gram).copied().unwrap_or(0).max(1);
        fmath::ln(self.num_docs as f64 / df as f64)
    }
}

fn closest_ref_len(cand_len: usize, refs: &[TokenSeq]) -> usize {
    let c = cand_len as i64;
    let mut best: Option<usize> = None;
    for r in refs {
        let rl = r.len();
        best = Some(match best {
            None => rl,
            Some(b) => {
                let db = (b as i64 - c).abs();
                let dr = (rl as i64 - c).abs();
                // Ties go to the shorter reference.
                if dr < db || (dr == db && rl < b) {
                    rl
                } else {
                    b
                }
            }
        });
    }
    best.unwrap_or(0)
}

/// Modified n-gram precision counts for one candidate: per order, the clipped
/// match count and the total candidate n-gram count.
fn bleu_counts(cand: &NGramProfile, refs: &[NGramProfile]) -> ([u64; MAX_NGRAM], [u64; MAX_NGRAM]) {
    let mut clipped = [0u64; MAX_NGRAM];
    let mut total = [0u64; MAX_NGRAM];
    for n in 1..=MAX_NGRAM {
        for (gram, &count) in cand.order(n) {
            let cap = refs
                .iter()
                .map(|r| r.order(n).get(gram).copied().unwrap_or(0))
                .max()
                .unwrap_or(0);
            clipped[n - 1] += count.min(cap);
            total[n - 1] += count;
        }
    }
    (clipped, total)
}

fn bleu_from_counts(
    clipped: &[u64; MAX_NGRAM],
    total: &[u64; MAX_NGRAM],
    cand_len: u64,
    ref_len: u64,
) -> [f64; MAX_NGRAM] {
    let bp = if cand_len < ref_len && cand_len > 0 {
        fmath::exp(1.0 - ref_len as f64 / cand_len as f64)
    } else {
        1.0
    };
    let mut out = [0.0; MAX_NGRAM];
    for upto in 1..=MAX_NGRAM {
        if (0..upto).any(|i| clipped[i] == 0 || total[i] == 0) {
            out[upto - 1] = 0.0;
            continue;
        }
        let log_mean: f64 = (0..upto)
            .map(|i| fmath::ln(clipped[i] as f64 / total[i] as f64))
            .sum::<f64>()
            / upto as f64;
        out[upto - 1] = bp * fmath::exp(log_mean);
    }
    out
}

/// Sentence BLEU-1..4 with per-reference clipping and the brevity penalty
/// exp(1 - r/c) for c < r, r being the closest reference length.
pub fn bleu(candidate: &TokenSeq, refs: &[TokenSeq]) -> [f64; MAX_NGRAM] {
    if candidate.is_empty() {
        return [0.0; MAX_NGRAM];
    }
    let cand_profile = NGramProfile::of(candidate);
    let ref_profiles: Vec<NGramProfile> = refs.iter().map(NGramProfile::of).collect();
    let (clipped, total) = bleu_counts(&cand_profile, &ref_profiles);
    let r = closest_ref_len(candidate.len(), refs) as u64;
    bleu_from_counts(&clipped, &total, candidate.len() as u64, r)
}

/// ROUGE-L: per-reference LCS F-measure (beta = 1.2), maximum over references.
pub fn rouge_l(candidate: &TokenSeq, refs: &[TokenSeq]) -> f64 {
    let mut best = 0.0f64;
    for r in refs {
        if candidate.is_empty() || r.is_empty() {
            continue;
        }
        let lcs = lcs_length(candidate.tokens(), r.tokens()) as f64;
        if lcs == 0.0 {
            continue;
        }
        let prec = lcs / candidate.len() as f64;
        let rec = lcs / r.len() as f64;
        let b2 = ROUGE_BETA * ROUGE_BETA;
        let f = (1.0 + b2) * prec * rec / (rec + b2 * prec);
        best = best.max(f);
    }
    best
}

/// Two-row LCS dynamic program.
fn lcs_length(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut cur = alloc::vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
        cur.fill(0);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CiderVariant {
    Cider,
    #[default]
    CiderD,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiderReport {
    pub per_image: BTreeMap<ImageId, f64>,
    pub mean: f64,
    /// True when fewer than two images were scored, which makes every idf 0
    /// or the table otherwise meaningless.
    pub idf_degenerate: bool,
}

/// tf-idf weights per order for one token sequence.
fn tfidf_vector(profile: &NGramProfile, n: usize, idf: &IdfTable) -> BTreeMap<Ngram, f64> {
    profile
        .order(n)
        .iter()
        .map(|(gram, &count)| (gram.clone(), count as f64 * idf.idf(n, gram)))
        .collect()
}

fn l2_norm(v: &BTreeMap<Ngram, f64>) -> f64 {
    fmath::sqrt(v.values().map(|x| x * x).sum())
}

/// Consensus-based caption score: per order n, the cosine similarity between
/// candidate and reference tf-idf vectors, averaged over references, then
/// 10 times the mean over n = 1..4. A candidate shorter than n tokens has an
/// empty vector at that order and contributes similarity 0 there.
pub fn cider(
    candidates: &BTreeMap<ImageId, TokenSeq>,
    refs: &BTreeMap<ImageId, Vec<TokenSeq>>,
    variant: CiderVariant,
) -> Result<CiderReport, MetricsError> {
    if candidates.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mut eval_refs: BTreeMap<ImageId, Vec<TokenSeq>> = BTreeMap::new();
    for (&img, _) in candidates {
        let r = refs.get(&img).filter(|r| !r.is_empty());
        match r {
            Some(r) => {
                eval_refs.insert(img, r.clone());
            }
            None => return Err(MetricsError::MissingReferences(img)),
        }
    }
    let idf = IdfTable::from_references(&eval_refs);

    let mut per_image = BTreeMap::new();
    for (&img, cand) in candidates {
        let cand_profile = NGramProfile::of(cand);
        let refs = &eval_refs[&img];
        let mut sum_over_n = 0.0;
        for n in 1..=MAX_NGRAM {
            let cv = tfidf_vector(&cand_profile, n, &idf);
            let cn = l2_norm(&cv);
            let mut acc = 0.0;
            for r in refs {
                let rv = tfidf_vector(&NGramProfile::of(r), n, &idf);
                let rn = l2_norm(&rv);
                if cn == 0.0 || rn == 0.0 {
                    continue;
                }
                let mut dot = 0.0;
                for (gram, &cw) in &cv {
                    if let Some(&rw) = rv.get(gram) {
                        let w = match variant {
                            CiderVariant::Cider => cw,
                            CiderVariant::CiderD => cw.min(rw),
                        };
                        dot += w * rw;
                    }
                }
                let mut sim = dot / (cn * rn);
                if variant == CiderVariant::CiderD {
                    let delta = cand.len() as f64 - r.len() as f64;
                    sim *= fmath::exp(-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA));
                }
                acc += sim;
            }
            sum_over_n += acc / refs.len() as f64;
        }
        per_image.insert(img, 10.0 * sum_over_n / MAX_NGRAM as f64);
    }
    let mean = per_image.values().sum::<f64>() / per_image.len() as f64;
    Ok(CiderReport {
        per_image,
        mean,
        idf_degenerate: candidates.len() < 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ImageScores {
    pub bleu: [f64; MAX_NGRAM],
    pub rouge_l: f64,
    pub cider: f64,
}

/// Per-image and corpus-level scores for a set of generated captions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_image: BTreeMap<ImageId, ImageScores>,
    /// Arithmetic means of the per-image scores.
    pub mean: ImageScores,
    /// Pooled-count BLEU over the whole corpus.
    pub corpus_bleu: [f64; MAX_NGRAM],
    pub count: usize,
    pub variant: CiderVariant,
    pub idf_degenerate: bool,
}

/// Tokenize generated captions and references for `ids`, compute all metrics
/// and aggregate. The idf table is built from the references of exactly the
/// evaluated ids.
pub fn evaluate(
    generated: &BTreeMap<ImageId, String>,
    references: &CaptionSet,
    ids: &BTreeSet<ImageId>,
    variant: CiderVariant,
) -> Result<EvalReport, MetricsError> {
    if ids.is_empty() {
        return Err(MetricsError::EmptyEvaluation);
    }
    let missing: Vec<ImageId> = ids
        .iter()
        .filter(|id| !generated.contains_key(id))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(MetricsError::MissingGenerated(missing));
    }

    let mut cands: BTreeMap<ImageId, TokenSeq> = BTreeMap::new();
    let mut refs: BTreeMap<ImageId, Vec<TokenSeq>> = BTreeMap::new();
    for &id in ids {
        let caps = references
            .get(id)
            .filter(|c| !c.is_empty())
            .ok_or(MetricsError::MissingReferences(id))?;
        cands.insert(id, tokenize(&generated[&id]));
        refs.insert(id, caps.iter().map(|c| tokenize(c)).collect());
    }

    let cider_report = cider(&cands, &refs, variant)?;

    let mut per_image = BTreeMap::new();
    let mut corpus_clipped = [0u64; MAX_NGRAM];
    let mut corpus_total = [0u64; MAX_NGRAM];
    let mut corpus_cand_len = 0u64;
    let mut corpus_ref_len = 0u64;
    let mut mean = ImageScores::default();

    for &id in ids {
        let cand = &cands[&id];
        let rs = &refs[&id];
        let scores = ImageScores {
            bleu: bleu(cand, rs),
            rouge_l: rouge_l(cand, rs),
            cider: cider_report.per_image[&id],
        };
        if !cand.is_empty() {
            let cand_profile = NGramProfile::of(cand);
            let ref_profiles: Vec<NGramProfile> = rs.iter().map(NGramProfile::of).collect();
            let (clipped, total) = bleu_counts(&cand_profile, &ref_profiles);
            for i in 0..MAX_NGRAM {
                corpus_clipped[i] += clipped[i];
                corpus_total[i] += total[i];
            }
            corpus_cand_len += cand.len() as u64;
            corpus_ref_len += closest_ref_len(cand.len(), rs) as u64;
        }
        for i in 0..MAX_NGRAM {
            mean.bleu[i] += scores.bleu[i];
        }
        mean.rouge_l += scores.rouge_l;
        mean.cider += scores.cider;
        per_image.insert(id, scores);
    }

    let n = ids.len() as f64;
    for i in 0..MAX_NGRAM {
        mean.bleu[i] /= n;
    }
    mean.rouge_l /= n;
    mean.cider /= n;

    Ok(EvalReport {
        per_image,
        mean,
        corpus_bleu: bleu_from_counts(&corpus_clipped, &corpus_total, corpus_cand_len, corpus_ref_len),
        count: ids.len(),
        variant,
        idf_degenerate: cider_report.idf_degenerate,
    })
}
