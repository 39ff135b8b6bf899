//! Rank statistics for the correlation study.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

/// Pearson correlation coefficient. Returns zero on degenerate variance.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / libm::sqrt(sxx * syy)
}

/// Ranks with ties averaged (1-based).
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].partial_cmp(&x[b]).unwrap_or(core::cmp::Ordering::Equal));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson over average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    pearson(&ranks(x), &ranks(y))
}

/// Least-squares fit `y = slope * x + intercept`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// One-sided permutation test for a positive Spearman correlation:
/// probability of a permuted correlation at least as large as the observed
/// one, with add-one smoothing.
pub fn spearman_perm_p<R: Rng>(x: &[f64], y: &[f64], n_perm: usize, rng: &mut R) -> f64 {
    let observed = spearman(x, y);
    let rx = ranks(x);
    let ry = ranks(y);
    let mut shuffled = ry.clone();
    let mut hits = 0usize;
    for _ in 0..n_perm {
        shuffled.shuffle(rng);
        if pearson(&rx, &shuffled) >= observed {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (n_perm + 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn monotone_data_has_unit_spearman() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [2.0, 9.0, 11.0, 30.0, 31.5];
        assert!((spearman(&x, &y) - 1.0).abs() < 1e-12);
        let y_rev: Vec<f64> = y.iter().rev().copied().collect();
        assert!((spearman(&x, &y_rev) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_matches_brute_force_rank_then_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for _ in 0..50 {
            let n = rng.gen_range(3..20);
            // Include ties with some probability.
            let x: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..6) as f64) * 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let brute = pearson(&ranks(&x), &ranks(&y));
            assert_eq!(spearman(&x, &y), brute);
        }
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 20.0, 30.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn least_squares_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let (m, b) = least_squares(&x, &y);
        assert!((m - 2.0).abs() < 1e-12);
        assert!((b + 1.0).abs() < 1e-12);
    }

    #[test]
    fn perm_test_small_on_strong_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| v + 0.1).collect();
        let p = spearman_perm_p(&x, &y, 2000, &mut rng);
        assert!(p < 0.01, "p {p}");
        // Uncorrelated data should not be significant.
        let y2: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p2 = spearman_perm_p(&x, &y2, 2000, &mut rng);
        assert!(p2 > 0.01, "p {p2}");
    }
}
