//! Spearman's rho and Kendall's tau-b with two-tailed p-values: the t
//! approximation for rho, the tie-corrected normal approximation with
//! continuity correction for tau.

use alloc::vec::Vec;

use crate::fmath;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CorrelationError {
    #[error("need at least 3 paired observations, got {0}")]
    TooFewPoints(usize),
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("a constant series has no defined rank correlation")]
    ConstantInput,
}

/// Mid-ranks (1-based, ties averaged), computed by sorting.
pub fn midranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut ranks = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // positions i..=j share the average of ranks i+1..=j+1
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn check_lengths(xs: &[f64], ys: &[f64]) -> Result<usize, CorrelationError> {
    if xs.len() != ys.len() {
        return Err(CorrelationError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Err(CorrelationError::TooFewPoints(xs.len()));
    }
    Ok(xs.len())
}

/// Pearson correlation of the mid-ranks, with the two-tailed p-value from
/// the t approximation t = rho sqrt((n-2)/(1-rho^2)).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), CorrelationError> {
    let n = check_lengths(xs, ys)?;
    let rx = midranks(xs);
    let ry = midranks(ys);
    // Mid-ranks always average to (n+1)/2, ties or not.
    let mean = (n as f64 + 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for k in 0..n {
        let dx = rx[k] - mean;
        let dy = ry[k] - mean;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CorrelationError::ConstantInput);
    }
    let rho = sxy / fmath::sqrt(sxx * syy);
    let p = if rho.abs() >= 1.0 {
        0.0
    } else {
        let df = (n - 2) as f64;
        let t2 = rho * rho * df / (1.0 - rho * rho);
        incomplete_beta(df / 2.0, 0.5, df / (df + t2))
    };
    Ok((rho, p))
}

/// Run statistics over tied values: (sum t(t-1)/2, sum t(t-1)(t-2),
/// sum t(t-1)(2t+5)).
fn tie_stats(xs: &[f64]) -> (f64, f64, f64) {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (mut pairs, mut triples, mut weighted) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        pairs += t * (t - 1.0) / 2.0;
        triples += t * (t - 1.0) * (t - 2.0);
        weighted += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    (pairs, triples, weighted)
}

/// Kendall tau-b with the tie-corrected denominator and the normal
/// approximation with continuity correction for the p-value.
pub fn kendall(xs: &[f64], ys: &[f64]) -> Result<(f64, f64), CorrelationError> {
    let n = check_lengths(xs, ys)?;
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let dx = xs[i] - xs[j];
            let dy = ys[i] - ys[j];
            if dx != 0.0 && dy != 0.0 {
                s += if (dx > 0.0) == (dy > 0.0) { 1 } else { -1 };
            }
        }
    }
    let nf = n as f64;
    let n0 = nf * (nf - 1.0) / 2.0;
    let (tx_pairs, tx_triples, tx_weighted) = tie_stats(xs);
    let (ty_pairs, ty_triples, ty_weighted) = tie_stats(ys);
    let denom = (n0 - tx_pairs) * (n0 - ty_pairs);
    if denom <= 0.0 {
        return Err(CorrelationError::ConstantInput);
    }
    let tau = s as f64 / fmath::sqrt(denom);

    let v0 = nf * (nf - 1.0) * (2.0 * nf + 5.0);
    let v1 = (2.0 * tx_pairs) * (2.0 * ty_pairs) / (2.0 * nf * (nf - 1.0));
    let v2 = tx_triples * ty_triples / (9.0 * nf * (nf - 1.0) * (nf - 2.0));
    let var = (v0 - tx_weighted - ty_weighted) / 18.0 + v1 + v2;
    let p = if var <= 0.0 {
        0.0
    } else {
        let z = ((s.abs() as f64) - 1.0).max(0.0) / fmath::sqrt(var);
        fmath::erfc(z / fmath::sqrt(2.0))
    };
    Ok((tau, p))
}

/// Regularized incomplete beta function I_x(a, b) via the standard
/// continued-fraction expansion.
pub fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = fmath::ln_gamma(a + b) - fmath::ln_gamma(a) - fmath::ln_gamma(b)
        + a * fmath::ln(x)
        + b * fmath::ln(1.0 - x);
    let front = fmath::exp(ln_front);
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Lentz's algorithm for the continued fraction of the incomplete beta.
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_series_is_exactly_one() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x + 1.0).collect();
        let (rho, p) = spearman(&xs, &ys).unwrap();
        assert_eq!(rho, 1.0);
        assert_eq!(p, 0.0);
        let (tau, _) = kendall(&xs, &ys).unwrap();
        assert_eq!(tau, 1.0);

        let rev: Vec<f64> = xs.iter().rev().cloned().collect();
        assert_eq!(spearman(&xs, &rev).unwrap().0, -1.0);
        assert_eq!(kendall(&xs, &rev).unwrap().0, -1.0);
    }

    #[test]
    fn constant_series_is_an_error() {
        let xs = [1.0, 1.0, 1.0, 1.0];
        let ys = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&xs, &ys), Err(CorrelationError::ConstantInput));
        assert_eq!(kendall(&xs, &ys), Err(CorrelationError::ConstantInput));
        assert_eq!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(CorrelationError::TooFewPoints(2))
        );
    }

    #[test]
    fn spearman_matches_scipy_reference_values() {
        // (xs, ys, rho, two-tailed p) frozen from scipy.stats.spearmanr,
        // which uses the same t approximation.
        let cases: [(&[f64], &[f64], f64, f64); 3] = [
            (
                &[12.0, 2.0, 1.0, 12.0, 2.0],
                &[1.0, 4.0, 7.0, 1.0, 0.0],
                -0.5407380704358752,
                0.3467146139768869,
            ),
            (
                &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
                &[2.0, 1.0, 4.0, 3.0, 7.0, 8.0, 6.0, 5.0],
                0.7380952380952381,
                0.03655276105286081,
            ),
            (
                &[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0],
                &[2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0, 2.0, 8.0],
                0.13471506281091267,
                0.7106008805223829,
            ),
        ];
        for (xs, ys, want_rho, want_p) in cases {
            let (rho, p) = spearman(xs, ys).unwrap();
            assert!((rho - want_rho).abs() < 1e-12, "rho {rho} vs {want_rho}");
            assert!((p - want_p).abs() < 1e-9, "p {p} vs {want_p}");
        }
    }

    #[test]
    fn kendall_matches_scipy_tau_b() {
        let cases: [(&[f64], &[f64], f64); 3] = [
            (
                &[12.0, 2.0, 1.0, 12.0, 2.0],
                &[1.0, 4.0, 7.0, 1.0, 0.0],
                -0.4714045207910316,
            ),
            (
                &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
                &[2.0, 1.0, 4.0, 3.0, 7.0, 8.0, 6.0, 5.0],
                0.5,
            ),
            (
                &[3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0],
                &[2.0, 7.0, 1.0, 8.0, 2.0, 8.0, 1.0, 8.0, 2.0, 8.0],
                0.13041013273932525,
            ),
        ];
        for (xs, ys, want) in cases {
            let (tau, _) = kendall(xs, ys).unwrap();
            assert!((tau - want).abs() < 1e-12, "tau {tau} vs {want}");
        }
    }

    #[test]
    fn kendall_p_hand_values() {
        // No ties, n = 8, S = 14: z = 13/sqrt(65.333..), p = erfc(z/sqrt 2).
        let xs: Vec<f64> = (1..=8).map(|i| i as f64).collect();
        let ys = [2.0, 1.0, 4.0, 3.0, 7.0, 8.0, 6.0, 5.0];
        let (_, p) = kendall(&xs, &ys).unwrap();
        assert!((p - 0.10776229039192155).abs() < 1e-12, "p = {p}");

        // Tie-corrected variance, hand-evaluated: var = 6.8333.., S = 2.
        let xs = [1.0, 2.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 2.0, 2.0];
        let (tau, p) = kendall(&xs, &ys).unwrap();
        assert!((tau - 0.4).abs() < 1e-12);
        assert!((p - 0.7020563949269414).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn incomplete_beta_reference_values() {
        assert!((incomplete_beta(0.5, 0.5, 0.5) - 0.5).abs() < 1e-12);
        assert!((incomplete_beta(2.0, 3.0, 0.3) - 0.3483).abs() < 1e-10);
        assert!((incomplete_beta(5.0, 1.5, 0.9) - 0.7761721343162159).abs() < 1e-10);
        // P(|T_10| > 2.228) ~ 0.05, the classic table entry
        let df = 10.0;
        let t = 2.228;
        let p = incomplete_beta(df / 2.0, 0.5, df / (df + t * t));
        assert!((p - 0.050011771817111327).abs() < 1e-9);
    }

    #[test]
    fn rank_invariance_under_monotone_transform() {
        let xs = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0, 2.0, 6.0];
        let ys = [2.0, 7.0, 1.0, 8.0, 2.5, 8.5, 1.5, 8.2];
        let xs_t: Vec<f64> = xs.iter().map(|x| fmath::exp(*x)).collect();
        let (a, _) = spearman(&xs, &ys).unwrap();
        let (b, _) = spearman(&xs_t, &ys).unwrap();
        assert_eq!(a, b);
        let (ta, _) = kendall(&xs, &ys).unwrap();
        let (tb, _) = kendall(&xs_t, &ys).unwrap();
        assert_eq!(ta, tb);
    }
}
