//! Ordinal patterns, their integer codes, and empirical pattern distributions.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Longest window whose pattern code fits a `u64` (20! < 2^64).
pub const MAX_PATTERN_LEN: usize = 20;

/// How equal values are ranked within a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    /// The earlier index receives the lower rank.
    #[default]
    EarlierLower,
    /// The later index receives the lower rank.
    LaterLower,
}

/// The permutation induced by ranking a window: `ranks[k]` is the rank of
/// element `k`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct OrdinalPattern {
    ranks: Vec<u8>,
}

impl OrdinalPattern {
    pub fn ranks(&self) -> &[u8] {
        &self.ranks
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Lehmer code of the rank sequence, a bijection onto `0..L!`.
    pub fn code(&self) -> u64 {
        let n = self.ranks.len();
        let mut code = 0u64;
        for a in 0..n {
            let smaller_after = self.ranks[a + 1..]
                .iter()
                .filter(|&&r| r < self.ranks[a])
                .count() as u64;
            code = code * (n - a) as u64 + smaller_after;
        }
        code
    }

    /// Inverse of [`OrdinalPattern::code`].
    pub fn from_code(mut code: u64, len: usize) -> Self {
        let mut digits = vec![0u64; len];
        for k in (0..len).rev() {
            let radix = (len - k) as u64;
            digits[k] = code % radix;
            code /= radix;
        }
        let mut pool: Vec<u8> = (0..len as u8).collect();
        let ranks = digits
            .into_iter()
            .map(|d| pool.remove(d as usize))
            .collect();
        Self { ranks }
    }
}

impl fmt::Display for OrdinalPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, r) in self.ranks.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, ")")
    }
}

/// Ranks a window under `tie_rule`.
pub fn ordinal_pattern(window: &[f64], tie_rule: TieRule) -> Result<OrdinalPattern> {
    if window.len() < 2 {
        return Err(Error::invalid("ordinal pattern needs at least 2 values"));
    }
    if window.len() > MAX_PATTERN_LEN {
        return Err(Error::invalid(format!(
            "ordinal pattern length {} exceeds {MAX_PATTERN_LEN}",
            window.len()
        )));
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("ordinal pattern window contains non-finite values"));
    }
    let ranks = (0..window.len())
        .map(|a| {
            window
                .iter()
                .enumerate()
                .filter(|&(b, &v)| precedes(v, b, window[a], a, tie_rule))
                .count() as u8
        })
        .collect();
    Ok(OrdinalPattern { ranks })
}

#[inline]
fn precedes(v: f64, idx: usize, other: f64, other_idx: usize, tie_rule: TieRule) -> bool {
    if v < other {
        true
    } else if v == other && idx != other_idx {
        match tie_rule {
            TieRule::EarlierLower => idx < other_idx,
            TieRule::LaterLower => idx > other_idx,
        }
    } else {
        false
    }
}

/// Pattern code computed straight from the values, without materializing the
/// rank vector. Inputs must be finite and of length `<= MAX_PATTERN_LEN`.
#[inline]
pub fn pattern_code(window: &[f64], tie_rule: TieRule) -> u64 {
    let n = window.len();
    let mut code = 0u64;
    for a in 0..n {
        let x = window[a];
        let mut smaller_after = 0u64;
        for &y in &window[a + 1..] {
            // later element ranks below `x`
            let below = match tie_rule {
                TieRule::EarlierLower => y < x,
                TieRule::LaterLower => y <= x,
            };
            smaller_after += below as u64;
        }
        code = code * (n - a) as u64 + smaller_after;
    }
    code
}

/// `n!` as `u64`; `n <= 20`.
pub fn factorial(n: usize) -> u64 {
    (1..=n as u64).product()
}

/// Empirical ordinal-pattern counts over a set of windows.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PatternDistribution {
    pattern_len: usize,
    counts: BTreeMap<u64, u64>,
    total: u64,
}

impl PatternDistribution {
    pub fn new(pattern_len: usize) -> Self {
        Self {
            pattern_len,
            counts: BTreeMap::new(),
            total: 0,
        }
    }

    pub fn add_code(&mut self, code: u64) {
        *self.counts.entry(code).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn add_window(&mut self, window: &[f64], tie_rule: TieRule) -> Result<()> {
        if window.len() != self.pattern_len {
            return Err(Error::shape("pattern window", self.pattern_len, window.len()));
        }
        let p = ordinal_pattern(window, tie_rule)?;
        self.add_code(p.code());
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn pattern_len(&self) -> usize {
        self.pattern_len
    }

    /// Distinct patterns observed.
    pub fn support(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, pattern: &OrdinalPattern) -> u64 {
        self.counts.get(&pattern.code()).copied().unwrap_or(0)
    }

    /// `(pattern, count)` pairs in ascending code order.
    pub fn iter(&self) -> impl Iterator<Item = (OrdinalPattern, u64)> + '_ {
        self.counts
            .iter()
            .map(|(&c, &n)| (OrdinalPattern::from_code(c, self.pattern_len), n))
    }

    /// Shannon entropy in nats.
    pub fn entropy_nats(&self) -> f64 {
        entropy_from_counts(self.counts.values().copied(), self.total)
    }
}

/// `-Σ p ln p` for integer counts summing to `total`.
pub fn entropy_from_counts(counts: impl IntoIterator<Item = u64>, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    let mut h = 0.0;
    for c in counts {
        if c > 0 && c < total {
            let p = c as f64 / n;
            h -= p * p.ln();
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ascending_and_descending() {
        let up = ordinal_pattern(&[4.0, 7.0, 9.0], TieRule::EarlierLower).unwrap();
        assert_eq!(up.ranks(), &[0, 1, 2]);
        let down = ordinal_pattern(&[9.0, 7.0, 4.0], TieRule::EarlierLower).unwrap();
        assert_eq!(down.ranks(), &[2, 1, 0]);
    }

    #[test]
    fn ties_rank_earlier_lower() {
        let p = ordinal_pattern(&[5.0, 5.0, 1.0], TieRule::EarlierLower).unwrap();
        assert_eq!(p.ranks(), &[1, 2, 0]);
        let q = ordinal_pattern(&[5.0, 5.0, 1.0], TieRule::LaterLower).unwrap();
        assert_eq!(q.ranks(), &[2, 1, 0]);
    }

    #[test]
    fn rejects_non_finite_and_short() {
        assert!(ordinal_pattern(&[1.0, f64::INFINITY], TieRule::EarlierLower).is_err());
        assert!(ordinal_pattern(&[1.0], TieRule::EarlierLower).is_err());
    }

    #[test]
    fn codes_enumerate_all_permutations() {
        let mut seen = std::collections::BTreeSet::new();
        for code in 0..factorial(5) {
            let p = OrdinalPattern::from_code(code, 5);
            assert_eq!(p.code(), code);
            seen.insert(p.ranks().to_vec());
        }
        assert_eq!(seen.len(), 120);
    }

    #[test]
    fn probabilities_sum_to_one_in_counts() {
        let mut dist = PatternDistribution::new(3);
        let xs = [1.0, 3.0, 2.0, 2.0, 5.0, 4.0, 0.0];
        for w in xs.windows(3) {
            dist.add_window(w, TieRule::EarlierLower).unwrap();
        }
        let sum: u64 = dist.iter().map(|(_, n)| n).sum();
        assert_eq!(sum, dist.total());
    }

    proptest! {
        #[test]
        fn ranks_form_a_permutation(xs in proptest::collection::vec(-3i32..3, 2..10)) {
            let window: Vec<f64> = xs.iter().map(|&v| v as f64).collect();
            for rule in [TieRule::EarlierLower, TieRule::LaterLower] {
                let p = ordinal_pattern(&window, rule).unwrap();
                let mut sorted = p.ranks().to_vec();
                sorted.sort_unstable();
                let expected: Vec<u8> = (0..window.len() as u8).collect();
                prop_assert_eq!(sorted, expected);
                prop_assert_eq!(pattern_code(&window, rule), p.code());
            }
        }
    }
}
