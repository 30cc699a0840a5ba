use super::fallback::{tokenize, STOPWORDS};
use super::TextQuery;
use crate::hash::fnv1a64;
use crate::separator::QueryEmbedding;

/// Signed feature hashing of the query's tokens, L2-normalised. Stopwords are
/// skipped unless nothing else remains.
pub fn text_to_embedding(q: &TextQuery, dim: usize, seed: u64) -> QueryEmbedding {
    let dim = dim.max(1);
    let all = tokenize(&q.text);
    let content: Vec<&String> = all.iter().filter(|t| !STOPWORDS.contains(&t.as_str())).collect();
    let tokens: Vec<&String> = if content.is_empty() {
        all.iter().collect()
    } else {
        content
    };
    let mut v = vec![0.0; dim];
    for t in &tokens {
        let h = fnv1a64(seed, t.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % dim as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        // No tokens, or hash collisions cancelled out: one-hot on the whole text.
        let h = fnv1a64(seed, q.text.as_bytes());
        v[(h % dim as u64) as usize] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    QueryEmbedding { values: v }
}
