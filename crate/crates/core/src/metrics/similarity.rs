use crate::error::{Error, Result};

/// Cosine of two flattened feature tensors.
pub fn layer_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::geometry(format!("feature lengths differ: {} vs {}", a.len(), b.len())));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::UndefinedSimilarity("cosine of a zero vector".into()));
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity of two embeddings.
pub fn embed_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    layer_cosine(a, b)
}

/// `1 − cosine`, in `[0, 2]`.
pub fn embed_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - embed_similarity(a, b)?)
}
