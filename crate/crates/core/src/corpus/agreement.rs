//! Chance-corrected inter-annotator agreement.

use super::CorpusError;
use std::collections::HashMap;
use std::hash::Hash;

/// Cohen's κ = (p_o − p_e) / (1 − p_e) with marginal-product chance
/// agreement. Returns 1.0 for perfect agreement even when p_e = 1
/// (constant identical sequences).
pub fn cohens_kappa<T: Eq + Hash + Copy>(a: &[T], b: &[T]) -> Result<f64, CorpusError> {
    if a.len() != b.len() {
        return Err(CorpusError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(CorpusError::LengthMismatch(0, 0));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;

    let mut marg_a: HashMap<T, usize> = HashMap::new();
    let mut marg_b: HashMap<T, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *marg_a.entry(x).or_default() += 1;
        *marg_b.entry(y).or_default() += 1;
    }
    let expected: f64 = marg_a
        .iter()
        .map(|(k, &ca)| {
            let cb = *marg_b.get(k).unwrap_or(&0) as f64;
            (ca as f64 / n) * (cb / n)
        })
        .sum();

    if (1.0 - expected).abs() < f64::EPSILON {
        return Ok(if observed >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((observed - expected) / (1.0 - expected))
}
