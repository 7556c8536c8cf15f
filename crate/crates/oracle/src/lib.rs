//! Slow, definition-level reference implementations of the caption metrics
//! and rank correlations. Everything here is written straight from the
//! textbook definitions with no shared code paths, data structures or
//! shortcuts from the main crates; the test suites compare the fast
//! implementations against these.

use std::collections::BTreeMap;

pub mod corr;
pub mod golden;

/// All n-grams of order `n` of a token sequence, as joined strings.
/// A sequence shorter than `n` has none.
fn ngrams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n)
        .map(|i| tokens[i..i + n].join("\u{1}"))
        .collect()
}

fn counts(items: &[String]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for it in items {
        *m.entry(it.clone()).or_insert(0.0) += 1.0;
    }
    m
}

/// Sentence BLEU-1..N by direct evaluation: clipped n-gram precision per
/// order, geometric mean of the first k precisions, brevity penalty from the
/// closest reference length (ties resolved toward the shorter reference).
pub fn bleu_sentence(cand: &[String], refs: &[Vec<String>], max_n: usize) -> Vec<f64> {
    if cand.is_empty() {
        return vec![0.0; max_n];
    }
    let mut precisions = Vec::new();
    for n in 1..=max_n {
        let cand_ngrams = counts(&ngrams(cand, n));
        let total: f64 = cand_ngrams.values().sum();
        let mut clipped = 0.0;
        for (gram, &c) in &cand_ngrams {
            let best_ref = refs
                .iter()
                .map(|r| *counts(&ngrams(r, n)).get(gram).unwrap_or(&0.0))
                .fold(0.0, f64::max);
            clipped += c.min(best_ref);
        }
        precisions.push(if total > 0.0 { clipped / total } else { 0.0 });
    }

    let c = cand.len() as f64;
    let mut best: Option<usize> = None;
    for r in refs {
        let rl = r.len();
        best = Some(match best {
            None => rl,
            Some(b) => {
                let (db, dr) = ((b as f64 - c).abs(), (rl as f64 - c).abs());
                if dr < db || (dr == db && rl < b) {
                    rl
                } else {
                    b
                }
            }
        });
    }
    let r = best.unwrap_or(0) as f64;
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };

    (1..=max_n)
        .map(|k| {
            if precisions[..k].iter().any(|&p| p == 0.0) {
                0.0
            } else {
                let log_mean = precisions[..k].iter().map(|p| p.ln()).sum::<f64>() / k as f64;
                bp * log_mean.exp()
            }
        })
        .collect()
}

/// Corpus BLEU: numerators/denominators and lengths pooled over all
/// candidates before applying the geometric mean and brevity penalty.
pub fn bleu_corpus(cands: &[Vec<String>], refs: &[Vec<Vec<String>>], max_n: usize) -> Vec<f64> {
    let mut clipped = vec![0.0; max_n];
    let mut total = vec![0.0; max_n];
    let mut c_len = 0.0;
    let mut r_len = 0.0;
    for (cand, rs) in cands.iter().zip(refs) {
        for n in 1..=max_n {
            let cand_ngrams = counts(&ngrams(cand, n));
            total[n - 1] += cand_ngrams.values().sum::<f64>();
            for (gram, &c) in &cand_ngrams {
                let best_ref = rs
                    .iter()
                    .map(|r| *counts(&ngrams(r, n)).get(gram).unwrap_or(&0.0))
                    .fold(0.0, f64::max);
                clipped[n - 1] += c.min(best_ref);
            }
        }
        let c = cand.len() as f64;
        let mut best: Option<usize> = None;
        for r in rs {
            let rl = r.len();
            best = Some(match best {
                None => rl,
                Some(b) => {
                    let (db, dr) = ((b as f64 - c).abs(), (rl as f64 - c).abs());
                    if dr < db || (dr == db && rl < b) {
                        rl
                    } else {
                        b
                    }
                }
            });
        }
        c_len += c;
        r_len += best.unwrap_or(0) as f64;
    }
    let bp = if c_len < r_len && c_len > 0.0 {
        (1.0 - r_len / c_len).exp()
    } else {
        1.0
    };
    let precisions: Vec<f64> = (0..max_n)
        .map(|i| if total[i] > 0.0 { clipped[i] / total[i] } else { 0.0 })
        .collect();
    (1..=max_n)
        .map(|k| {
            if precisions[..k].iter().any(|&p| p == 0.0) {
                0.0
            } else {
                let log_mean = precisions[..k].iter().map(|p| p.ln()).sum::<f64>() / k as f64;
                bp * log_mean.exp()
            }
        })
        .collect()
}

/// Longest common subsequence length by the full dynamic program.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut dp = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            dp[i][j] = if a[i - 1] == b[j - 1] {
                dp[i - 1][j - 1] + 1
            } else {
                dp[i - 1][j].max(dp[i][j - 1])
            };
        }
    }
    dp[a.len()][b.len()]
}

/// ROUGE-L: per-reference F-measure with beta = 1.2, maximum over references.
pub fn rouge_l(cand: &[String], refs: &[Vec<String>], beta: f64) -> f64 {
    let mut best = 0.0_f64;
    for r in refs {
        if cand.is_empty() || r.is_empty() {
            continue;
        }
        let lcs = lcs_len(cand, r) as f64;
        let p = lcs / cand.len() as f64;
        let rec = lcs / r.len() as f64;
        if p > 0.0 && rec > 0.0 {
            let f = (1.0 + beta * beta) * p * rec / (rec + beta * beta * p);
            best = best.max(f);
        }
    }
    best
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CiderKind {
    Plain,
    D,
}

/// CIDEr evaluated from the definition: per order n, tf-idf vectors for the
/// candidate and each reference, cosine similarity averaged over references,
/// then 10 times the mean over n = 1..4. The D variant clips candidate counts
/// at the reference count and applies a Gaussian length penalty (sigma = 6).
pub fn cider(
    cands: &BTreeMap<i64, Vec<String>>,
    refs: &BTreeMap<i64, Vec<Vec<String>>>,
    kind: CiderKind,
) -> (BTreeMap<i64, f64>, f64) {
    let max_n = 4;
    let sigma = 6.0;
    let num_images = cands.len() as f64;

    // Document frequency: number of images whose reference set contains the
    // n-gram at least once.
    let mut df: BTreeMap<String, f64> = BTreeMap::new();
    for rs in refs.values() {
        let mut seen = std::collections::BTreeSet::new();
        for r in rs {
            for n in 1..=max_n {
                for g in ngrams(r, n) {
                    seen.insert(g);
                }
            }
        }
        for g in seen {
            *df.entry(g).or_insert(0.0) += 1.0;
        }
    }
    let idf = |g: &String| (num_images / df.get(g).copied().unwrap_or(0.0).max(1.0)).ln();

    let tfidf = |tokens: &[String], n: usize| -> BTreeMap<String, f64> {
        counts(&ngrams(tokens, n))
            .into_iter()
            .map(|(g, c)| {
                let w = idf(&g);
                (g, c * w)
            })
            .collect()
    };
    let norm = |v: &BTreeMap<String, f64>| v.values().map(|x| x * x).sum::<f64>().sqrt();

    let mut per_image = BTreeMap::new();
    for (&img, cand) in cands {
        let rs = &refs[&img];
        let mut score_n = vec![0.0; max_n];
        for n in 1..=max_n {
            let cv = tfidf(cand, n);
            let cn = norm(&cv);
            let mut acc = 0.0;
            for r in rs {
                let rv = tfidf(r, n);
                let rn = norm(&rv);
                let mut dot = 0.0;
                for (g, &cw) in &cv {
                    if let Some(&rw) = rv.get(g) {
                        let c = match kind {
                            CiderKind::Plain => cw,
                            CiderKind::D => cw.min(rw),
                        };
                        dot += c * rw;
                    }
                }
                let mut sim = if cn > 0.0 && rn > 0.0 { dot / (cn * rn) } else { 0.0 };
                if kind == CiderKind::D {
                    let delta = cand.len() as f64 - r.len() as f64;
                    sim *= (-delta * delta / (2.0 * sigma * sigma)).exp();
                }
                acc += sim;
            }
            score_n[n - 1] = acc / rs.len() as f64;
        }
        let score = 10.0 * score_n.iter().sum::<f64>() / max_n as f64;
        per_image.insert(img, score);
    }
    let mean = per_image.values().sum::<f64>() / per_image.len().max(1) as f64;
    (per_image, mean)
}
