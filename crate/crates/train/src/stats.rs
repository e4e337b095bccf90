//! Rank correlation and summary statistics.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Largest sample size for which the permutation test enumerates every
/// permutation.
pub const EXACT_PERMUTATION_LIMIT: usize = 8;
pub const SAMPLED_PERMUTATIONS: usize = 100_000;

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Spearman's rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples");
    pearson(&ranks(x), &ranks(y))
}

/// One-sided permutation test of a positive Spearman correlation: the share
/// of pairings at least as correlated as the observed one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpearmanTest {
    pub rho: f64,
    pub p_value: f64,
    pub permutations: usize,
}

pub fn spearman_permutation_test(x: &[f64], y: &[f64], seed: u64) -> SpearmanTest {
    let rho = spearman(x, y);
    let (rx, ry) = (ranks(x), ranks(y));
    let tol = 1e-12;
    let mut perm: Vec<usize> = (0..y.len()).collect();
    let mut at_least = 0usize;
    let mut total = 0usize;
    let mut visit = |perm: &[usize]| {
        let shuffled: Vec<f64> = perm.iter().map(|&i| ry[i]).collect();
        total += 1;
        if pearson(&rx, &shuffled) >= rho - tol {
            at_least += 1;
        }
    };
    if y.len() <= EXACT_PERMUTATION_LIMIT {
        heap_permutations(&mut perm, &mut visit);
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        visit(&perm.clone());
        for _ in 1..SAMPLED_PERMUTATIONS {
            perm.shuffle(&mut rng);
            visit(&perm);
        }
    }
    SpearmanTest { rho, p_value: at_least as f64 / total as f64, permutations: total }
}

/// Calls `f` on every permutation of `items` (Heap's algorithm).
fn heap_permutations(items: &mut [usize], f: &mut impl FnMut(&[usize])) {
    let n = items.len();
    let mut c = vec![0; n];
    f(items);
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(c[i], i);
            }
            f(items);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}
