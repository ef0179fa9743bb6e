use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::embed_distance;

use super::table::Response;

/// Threshold observer on a precomputed distance: "same" iff
/// `distance + N(0, σ) < τ`. With `σ = 0` no randomness is drawn.
pub fn observe_distance<R: Rng + ?Sized>(distance: f64, tau: f64, noise_sigma: f64, rng: &mut R) -> Result<Response> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Domain(format!("observer noise must be non-negative, got {noise_sigma}")));
    }
    let noise = if noise_sigma > 0.0 {
        Normal::new(0.0, noise_sigma)
            .map_err(|e| Error::Numeric(e.to_string()))?
            .sample(rng)
    } else {
        0.0
    };
    Ok(if distance + noise < tau { Response::Same } else { Response::Different })
}

/// Simulated participant comparing two embeddings by cosine distance.
pub fn simulated_observer<R: Rng + ?Sized>(
    orig_embed: &[f64],
    gen_embed: &[f64],
    tau: f64,
    noise_sigma: f64,
    rng: &mut R,
) -> Result<Response> {
    observe_distance(embed_distance(orig_embed, gen_embed)?, tau, noise_sigma, rng)
}

/// Median of `distances`, the default observer threshold.
pub fn median_threshold(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::EmptyInput("no distances for threshold".into()));
    }
    let mut d = distances.to_vec();
    d.sort_by(f64::total_cmp);
    let n = d.len();
    Ok(if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) })
}
