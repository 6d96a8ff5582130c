use std::collections::HashMap;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RougeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Lowercased whitespace tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// LCS length of two token sequences using the bit-parallel formulation:
/// one bitset over `b`'s positions, updated once per token of `a`.
pub fn lcs_length<T: AsRef<str>>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let words = b.len().div_ceil(64);
    let mut matches: HashMap<&str, Vec<u64>> = HashMap::new();
    for (j, tok) in b.iter().enumerate() {
        matches.entry(tok.as_ref()).or_insert_with(|| vec![0; words])[j / 64] |= 1 << (j % 64);
    }
    let mut v = vec![u64::MAX; words];
    for tok in a {
        let Some(m) = matches.get(tok.as_ref()) else {
            continue;
        };
        // V ← (V + U) | (V − U) with U = V & M. U ⊆ V, so V − U = V & !U.
        let mut carry = 0u64;
        for w in 0..words {
            let u = v[w] & m[w];
            let (s1, c1) = v[w].overflowing_add(u);
            let (s2, c2) = s1.overflowing_add(carry);
            carry = u64::from(c1 || c2);
            v[w] = s2 | (v[w] & !u);
        }
    }
    let mut zeros = 0;
    for (w, word) in v.iter().enumerate() {
        let bits = if w + 1 == words && !b.len().is_multiple_of(64) {
            b.len() % 64
        } else {
            64
        };
        let mask = if bits == 64 { u64::MAX } else { (1u64 << bits) - 1 };
        zeros += (!word & mask).count_ones() as usize;
    }
    zeros
}

/// ROUGE-L of `candidate` against `reference` (β = 1).
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScores {
    let c = tokenize(candidate);
    let r = tokenize(reference);
    if c.is_empty() || r.is_empty() {
        return RougeScores {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let lcs = lcs_length(&c, &r) as f64;
    let precision = lcs / c.len() as f64;
    let recall = lcs / r.len() as f64;
    let f1 = if lcs == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    RougeScores {
        precision,
        recall,
        f1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let s = rouge_l("The cat sat", "the cat sat");
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
        let s = rouge_l("alpha beta", "gamma delta");
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = rouge_l("the cat sat", "the cat ran fast");
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-9);
        assert_eq!(rouge_l("", "").f1, 0.0);
        assert_eq!(rouge_l("a", "").f1, 0.0);
    }

    #[test]
    fn multiword_bitsets() {
        let a: Vec<String> = (0..150).map(|i| format!("t{}", i % 7)).collect();
        let b: Vec<String> = (0..130).map(|i| format!("t{}", (i * 3) % 7)).collect();
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
        assert_eq!(lcs_length(&a, &b), dp[a.len()][b.len()]);
    }

    proptest! {
        #[test]
        fn precision_recall_symmetry(a in "[a-d ]{0,30}", b in "[a-d ]{0,30}") {
            let ab = rouge_l(&a, &b);
            let ba = rouge_l(&b, &a);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
        }
    }
}
