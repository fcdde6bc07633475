//! Two-sample Wilcoxon rank-sum test.
//!
//! For groups of up to 10 observations each the two-sided p-value is exact:
//! the null distribution of the rank sum is enumerated by dynamic
//! programming over the pooled mid-ranks (doubled so ties stay integral).
//! Larger samples fall back to the normal approximation with tie correction
//! and continuity correction.

use crate::error::{Error, Result};

const EXACT_LIMIT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug)]
pub struct RankSumTest {
    /// Rank sum of the first sample (mid-ranks for ties).
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: TestMethod,
    /// True when every pooled value is identical; p is 1 by convention.
    pub degenerate: bool,
}

/// Pooled mid-ranks, doubled so they are exact integers. Returns
/// (doubled ranks aligned with the pooled order, tie-group sizes).
fn doubled_midranks(pooled: &[(f64, usize)]) -> (Vec<i64>, Vec<usize>) {
    let n = pooled.len();
    let mut ranks2 = vec![0i64; n];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        // mid-rank of the run covering 1-based ranks i+1 ..= j is (i+1+j)/2
        let doubled = (i + 1 + j) as i64;
        for r in ranks2.iter_mut().take(j).skip(i) {
            *r = doubled;
        }
        tie_sizes.push(j - i);
        i = j;
    }
    (ranks2, tie_sizes)
}

/// Number of ways to pick `take` of the doubled ranks with each possible sum.
/// `ways[s]` counts subsets of size `take` summing to `s`.
fn rank_sum_distribution(ranks2: &[i64], take: usize) -> Vec<u64> {
    let total: i64 = ranks2.iter().sum();
    let mut ways = vec![vec![0u64; total as usize + 1]; take + 1];
    ways[0][0] = 1;
    for &r in ranks2 {
        let r = r as usize;
        for k in (0..take).rev() {
            for s in 0..=(total as usize - r) {
                if ways[k][s] > 0 {
                    ways[k + 1][s + r] += ways[k][s];
                }
            }
        }
    }
    ways.pop().unwrap()
}

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Complementary error function, fractional error below 1.2e-7 everywhere.
fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let ans = t * (-z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    if x >= 0.0 {
        ans
    } else {
        2.0 - ans
    }
}

/// Two-sided Wilcoxon rank-sum test on two samples of size >= 3 each.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<RankSumTest> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::invalid_argument(format!(
            "each sample needs at least 3 observations (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid_argument("samples must not contain NaN"));
    }
    let n = a.len();
    let m = b.len();
    let total = n + m;

    let mut pooled: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0usize))
        .chain(b.iter().map(|&v| (v, 1usize)))
        .collect();
    pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("no NaN"));

    let (ranks2, tie_sizes) = doubled_midranks(&pooled);
    let w2_a: i64 = pooled
        .iter()
        .zip(&ranks2)
        .filter(|((_, g), _)| *g == 0)
        .map(|(_, &r)| r)
        .sum();
    let statistic = w2_a as f64 / 2.0;

    if tie_sizes.len() == 1 {
        // every pooled value identical
        return Ok(RankSumTest {
            statistic,
            p_value: 1.0,
            method: TestMethod::Exact,
            degenerate: true,
        });
    }

    if n <= EXACT_LIMIT && m <= EXACT_LIMIT {
        let ways = rank_sum_distribution(&ranks2, n);
        let total_ways: u64 = ways.iter().sum();
        let lower: u64 = ways.iter().take(w2_a as usize + 1).sum();
        let upper: u64 = ways.iter().skip(w2_a as usize).sum();
        let tail = lower.min(upper) as f64 / total_ways as f64;
        Ok(RankSumTest {
            statistic,
            p_value: (2.0 * tail).min(1.0),
            method: TestMethod::Exact,
            degenerate: false,
        })
    } else {
        let nf = n as f64;
        let mf = m as f64;
        let tf = total as f64;
        let mean = nf * (tf + 1.0) / 2.0;
        let tie_term: f64 = tie_sizes
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum();
        let var = nf * mf / 12.0 * ((tf + 1.0) - tie_term / (tf * (tf - 1.0)));
        if var <= 0.0 {
            return Ok(RankSumTest {
                statistic,
                p_value: 1.0,
                method: TestMethod::NormalApprox,
                degenerate: true,
            });
        }
        let diff = statistic - mean;
        let corrected = diff.abs() - 0.5;
        let z = corrected.max(0.0) / var.sqrt();
        Ok(RankSumTest {
            statistic,
            p_value: (2.0 * phi(-z)).min(1.0),
            method: TestMethod::NormalApprox,
            degenerate: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Enumeration oracle: walk every subset of positions of size n and
    /// tally how many have a rank sum at least as extreme as the observed.
    fn exact_p_by_enumeration(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let mut pooled: Vec<(f64, usize)> = a
            .iter()
            .map(|&v| (v, 0usize))
            .chain(b.iter().map(|&v| (v, 1usize)))
            .collect();
        pooled.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let (ranks2, _) = doubled_midranks(&pooled);
        let w2_obs: i64 = pooled
            .iter()
            .zip(&ranks2)
            .filter(|((_, g), _)| *g == 0)
            .map(|(_, &r)| r)
            .sum();
        let total = pooled.len();
        let mut count_le = 0u64;
        let mut count_ge = 0u64;
        let mut count_all = 0u64;
        let mut idx: Vec<usize> = (0..n).collect();
        loop {
            let w2: i64 = idx.iter().map(|&i| ranks2[i]).sum();
            count_all += 1;
            if w2 <= w2_obs {
                count_le += 1;
            }
            if w2 >= w2_obs {
                count_ge += 1;
            }
            // next combination in lexicographic order
            let mut i = n;
            loop {
                if i == 0 {
                    return (2.0 * count_le.min(count_ge) as f64 / count_all as f64).min(1.0);
                }
                i -= 1;
                if idx[i] != i + total - n {
                    break;
                }
            }
            idx[i] += 1;
            for j in i + 1..n {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn extreme_separation_gives_2_over_252() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [6.0, 7.0, 8.0, 9.0, 10.0];
        let t = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(t.method, TestMethod::Exact);
        assert!((t.p_value - 2.0 / 252.0).abs() < 1e-15, "p = {}", t.p_value);
        assert_eq!(t.statistic, 15.0);
    }

    #[test]
    fn identical_samples_are_degenerate() {
        let a = [4.0, 4.0, 4.0, 4.0];
        let b = [4.0, 4.0, 4.0];
        let t = wilcoxon_rank_sum(&a, &b).unwrap();
        assert!(t.degenerate);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn rejects_tiny_samples() {
        assert!(wilcoxon_rank_sum(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn matches_enumeration_oracle_on_random_integer_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        for trial in 0..500 {
            let n = rng.random_range(3..=6usize);
            let m = rng.random_range(3..=6usize);
            // integer-valued samples force plenty of ties
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64).collect();
            let b: Vec<f64> = (0..m).map(|_| rng.random_range(0..8) as f64).collect();
            let t = wilcoxon_rank_sum(&a, &b).unwrap();
            if t.degenerate {
                continue;
            }
            let oracle = exact_p_by_enumeration(&a, &b);
            assert!(
                (t.p_value - oracle).abs() < 1e-12,
                "trial {trial}: {:?} vs {:?}: {} != {oracle}",
                a,
                b,
                t.p_value
            );
        }
    }

    #[test]
    fn large_samples_use_normal_approximation() {
        let a: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..30).map(|i| i as f64 + 0.5).collect();
        let t = wilcoxon_rank_sum(&a, &b).unwrap();
        assert_eq!(t.method, TestMethod::NormalApprox);
        assert!(t.p_value > 0.05);

        let c: Vec<f64> = (0..30).map(|i| i as f64 + 100.0).collect();
        let t2 = wilcoxon_rank_sum(&a, &c).unwrap();
        assert!(t2.p_value < 1e-6);
    }

    #[test]
    fn normal_approx_is_sane_against_exact() {
        // At the exact-limit boundary the approximation should land close.
        let mut rng = ChaCha8Rng::seed_from_u64(89);
        for _ in 0..50 {
            let a: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let exact = wilcoxon_rank_sum(&a, &b).unwrap();
            // recompute with the approximation by inflating one sample size
            // is awkward; instead check the exact p against the z-based one
            let n = 10.0f64;
            let mean = n * 21.0 / 2.0;
            let var = n * n / 12.0 * 21.0;
            let corrected = ((exact.statistic - mean).abs() - 0.5).max(0.0);
            let p_norm = 2.0 * phi(-corrected / var.sqrt());
            assert!(
                (exact.p_value - p_norm).abs() < 0.05,
                "exact {} vs normal {p_norm}",
                exact.p_value
            );
        }
    }

    #[test]
    fn same_distribution_rejection_rate_is_near_level() {
        // 1000 seeded simulations with continuous same-distribution samples;
        // the exact test at the 5% level must reject between 3% and 7%.
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        let mut rejections = 0;
        for _ in 0..1000 {
            let a: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let b: Vec<f64> = (0..10).map(|_| rng.random::<f64>()).collect();
            let t = wilcoxon_rank_sum(&a, &b).unwrap();
            if t.p_value < 0.05 {
                rejections += 1;
            }
        }
        let rate = rejections as f64 / 1000.0;
        assert!(
            (0.03..=0.07).contains(&rate),
            "rejection rate {rate} outside 5% +/- 2%"
        );
    }

    #[test]
    fn erfc_reference_values() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.15729920705028513).abs() < 1e-7);
        assert!((erfc(-1.0) - 1.8427007929497148).abs() < 1e-7);
        assert!((phi(1.959963984540054) - 0.975).abs() < 1e-7);
    }
}
