//! Chi-square tests for the detection statistics.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Minimum expected count per bin; sparser bins are pooled with neighbours.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

impl ChiSquareTest {
    fn new(statistic: f64, dof: usize) -> Self {
        let p_value = if dof == 0 {
            1.0
        } else {
            let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
            dist.sf(statistic)
        };
        Self { statistic, dof, p_value }
    }

    /// True when the null hypothesis survives at significance `alpha`.
    pub fn passes(&self, alpha: f64) -> bool {
        self.p_value >= alpha
    }
}

/// Groups consecutive bins so every group reaches `MIN_EXPECTED` by the
/// weight function; a short tail is merged into the last group.
fn pool(len: usize, weight: impl Fn(usize) -> f64) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current = Vec::new();
    let mut acc = 0.0;
    for i in 0..len {
        current.push(i);
        acc += weight(i);
        if acc >= MIN_EXPECTED {
            groups.push(std::mem::take(&mut current));
            acc = 0.0;
        }
    }
    if !current.is_empty() {
        match groups.last_mut() {
            Some(last) => last.extend(current),
            None => groups.push(current),
        }
    }
    groups
}

/// Goodness of fit of `observed` counts to the bin probabilities `probs`
/// (which should sum to one).
pub fn chi_square_gof(observed: &[u64], probs: &[f64]) -> ChiSquareTest {
    assert_eq!(observed.len(), probs.len(), "one probability per bin");
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let groups = pool(observed.len(), |i| probs[i] * n);
    let statistic = groups
        .iter()
        .map(|g| {
            let o: u64 = g.iter().map(|&i| observed[i]).sum();
            let e: f64 = g.iter().map(|&i| probs[i]).sum::<f64>() * n;
            if e > 0.0 {
                (o as f64 - e).powi(2) / e
            } else if o > 0 {
                f64::INFINITY
            } else {
                0.0
            }
        })
        .sum();
    ChiSquareTest::new(statistic, groups.len().saturating_sub(1))
}

/// Homogeneity of two histograms over the same bins (2×B contingency table).
pub fn chi_square_two_sample(a: &[u64], b: &[u64]) -> ChiSquareTest {
    assert_eq!(a.len(), b.len(), "histograms must share bins");
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let n = na + nb;
    if na == 0.0 || nb == 0.0 {
        return ChiSquareTest::new(0.0, 0);
    }
    let smaller = na.min(nb);
    let groups = pool(a.len(), |i| (a[i] + b[i]) as f64 * smaller / n);
    let mut statistic = 0.0;
    for g in &groups {
        let col = g.iter().map(|&i| a[i] + b[i]).sum::<u64>() as f64;
        for (row, total) in [(a, na), (b, nb)] {
            let o = g.iter().map(|&i| row[i]).sum::<u64>() as f64;
            let e = total * col / n;
            if e > 0.0 {
                statistic += (o - e).powi(2) / e;
            }
        }
    }
    ChiSquareTest::new(statistic, groups.len().saturating_sub(1))
}
