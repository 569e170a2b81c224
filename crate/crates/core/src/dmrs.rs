//! DMRS pilot values: unit-magnitude QPSK from a seeded generator.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{cdm_pair, GridLayout};

/// Base sequence of one CDM group on every RE of the grid. Both layers of
/// the group share it; only the cover code differs.
fn base_sequence(layout: &GridLayout, group: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(group as u64 + 1);
    let a = std::f64::consts::FRAC_1_SQRT_2;
    (0..layout.n_re())
        .map(|_| {
            let re = if rng.random::<bool>() { a } else { -a };
            let im = if rng.random::<bool>() { a } else { -a };
            Complex64::new(re, im)
        })
        .collect()
}

/// Pilot symbols of `layer`, aligned with `layout.pilots[layer]`.
pub fn generate_dmrs(layer: usize, layout: &GridLayout, seed: u64) -> Vec<Complex64> {
    let cdm = layout.cdm[layer];
    let base = base_sequence(layout, cdm.group, seed);
    layout.pilots[layer]
        .iter()
        .map(|&re| {
            let (f, _) = layout.coords(re);
            let (_, first) = cdm_pair(f);
            let sign = if first { 1.0 } else { cdm.occ_sign as f64 };
            base[re] * sign
        })
        .collect()
}

/// Pilot value of `layer` at every RE (zero off its pilot set).
pub fn pilot_grid(layer: usize, layout: &GridLayout, seed: u64) -> Vec<Complex64> {
    let mut g = vec![Complex64::new(0.0, 0.0); layout.n_re()];
    for (&re, p) in layout.pilots[layer].iter().zip(generate_dmrs(layer, layout, seed)) {
        g[re] = p;
    }
    g
}
