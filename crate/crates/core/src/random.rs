//! Seeded smooth random fields for multi-start solves and property checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::GridFunction;
use crate::lattice::Lattice;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// White noise filtered by `exp(-|k|² ℓ²/2)` with `ℓ` two grid spacings,
/// rescaled to unit max norm, then mapped to `offset + amplitude * field`.
pub fn smooth_field(lat: Lattice, rng: &mut impl Rng, offset: f64, amplitude: f64) -> GridFunction {
    let values: Vec<f64> = (0..lat.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noise = GridFunction::new(lat, values).expect("length matches lattice");
    let ell = 2.0 * lat.spacing();
    let smooth = noise.apply_multiplier(|k2| (-0.5 * k2 * ell * ell).exp());
    let scale = smooth.max_abs().max(f64::MIN_POSITIVE);
    smooth.map(|v| offset + amplitude * v / scale)
}
