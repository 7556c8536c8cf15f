//! Rank correlations straight from the definitions: brute-force mid-ranks,
//! Pearson-on-ranks for Spearman, explicit pair classification for Kendall.

/// Mid-rank of every element, computed by counting (no sorting): for each
/// element, 1 + (number strictly smaller) + (ties - 1) / 2.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            let below = xs.iter().filter(|&&y| y < x).count() as f64;
            let ties = xs.iter().filter(|&&y| y == x).count() as f64;
            below + (ties + 1.0) / 2.0
        })
        .collect()
}

/// Spearman rho: Pearson correlation of the mid-ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let rx = midranks(xs);
    let ry = midranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..rx.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    sxy / (sxx * syy).sqrt()
}

/// Kendall tau-b: classify every pair as concordant, discordant or tied and
/// apply the tie-corrected denominator.
pub fn kendall(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    let mut tie_x = 0i64;
    let mut tie_y = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            if dx == 0.0 && dy == 0.0 {
                // tied in both, contributes to neither denominator term
            } else if dx == 0.0 {
                tie_x += 1;
            } else if dy == 0.0 {
                tie_y += 1;
            } else if (dx > 0.0) == (dy > 0.0) {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    // Tie counts per distinct value, for the tau-b denominator.
    let tie_term = |vals: &[f64]| -> f64 {
        let mut seen: Vec<f64> = Vec::new();
        let mut t = 0.0;
        for &v in vals {
            if seen.iter().any(|&s| s == v) {
                continue;
            }
            seen.push(v);
            let k = vals.iter().filter(|&&w| w == v).count() as f64;
            t += k * (k - 1.0) / 2.0;
        }
        t
    };
    let n0 = (n * (n - 1) / 2) as f64;
    let n1 = tie_term(xs);
    let n2 = tie_term(ys);
    let _ = (tie_x, tie_y);
    (concordant - discordant) as f64 / ((n0 - n1) * (n0 - n2)).sqrt()
}
