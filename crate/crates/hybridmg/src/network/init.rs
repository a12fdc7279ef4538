//! Weight initialization: uniform Kaiming-style fan-in scaling, seedable.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Fill `w` with U[-b, b], b = sqrt(1 / fan_in).
pub fn kaiming_uniform(w: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = (1.0 / fan_in.max(1) as f64).sqrt();
    for v in w.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}

/// Layer-norm affine parameters start as the identity transform.
pub fn layer_norm_identity(gamma: &mut [f64], beta: &mut [f64]) {
    for g in gamma.iter_mut() {
        *g = 1.0;
    }
    for b in beta.iter_mut() {
        *b = 0.0;
    }
}
