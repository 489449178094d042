//! ROUGE-L: LCS-based F-measure between two token sequences.

/// Lowercase-whitespace tokenization used by every diversity metric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Longest-common-subsequence length via the classic DP, two rows at a time.
fn lcs_len(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for token_a in a {
        for (j, token_b) in b.iter().enumerate() {
            curr[j + 1] = if token_a == token_b {
                prev[j] + 1
            } else {
                prev[j + 1].max(curr[j])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L over pre-tokenized sequences: with `L` the LCS length,
/// `P = L/|b|`, `R = L/|a|`, and the score is `2PR/(P+R)` — 0 when either
/// side is empty or nothing matches. Symmetric by construction.
pub fn rouge_l_tokens(a: &[String], b: &[String]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(a, b) as f64;
    let precision = lcs / b.len() as f64;
    let recall = lcs / a.len() as f64;
    if precision + recall == 0.0 {
        return 0.0;
    }
    2.0 * precision * recall / (precision + recall)
}

/// ROUGE-L between two strings under lowercase-whitespace tokenization.
pub fn rouge_l(a: &str, b: &str) -> f64 {
    rouge_l_tokens(&tokenize(a), &tokenize(b))
}
