//! Spectra with known structure and closed-form parameter counts.

use rand::Rng;

/// Four dominant directions over a flat floor of twelve.
pub fn known_spectrum() -> Vec<f64> {
    let mut s = vec![8.0, 4.0, 2.0, 1.0];
    s.extend(std::iter::repeat_n(0.1, 12));
    s
}

/// Mean over images of the share of each sorted spectrum held by its top `c` values.
pub fn scan_mcev(images: &[Vec<f64>], c: usize) -> f64 {
    let mut acc = 0.0;
    for spec in images {
        let mut sorted = spec.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let total: f64 = sorted.iter().sum();
        let head: f64 = sorted[..c].iter().sum();
        acc += head / total;
    }
    acc / images.len() as f64
}

/// Per-layer spectra with a random geometric decay, jittered per image.
pub fn random_layers(rng: &mut impl Rng, widths: [usize; 4], images: usize) -> Vec<Vec<Vec<f64>>> {
    widths
        .iter()
        .map(|&c| {
            let decay = rng.random_range(0.5..0.99);
            (0..images).map(|_| (0..c).map(|j| decay_f(decay, j) * rng.random_range(0.5..1.5)).collect()).collect()
        })
        .collect()
}

fn decay_f(decay: f64, j: usize) -> f64 {
    decay.powi(j as i32)
}

/// A spectrum of width `c` whose cumulative explained variance first reaches 85%
/// at `k` components.
pub fn spectrum_with_knee(c: usize, k: usize) -> Vec<f64> {
    (0..c).map(|j| if j < k { 0.86 / k as f64 } else { 0.14 / (c - k) as f64 }).collect()
}

/// Weights and biases of a 3×3-conv VGG stack up to `relu4_1`, counted by hand.
pub fn conv_stack_count(bands: usize, c: [usize; 4]) -> usize {
    let layer = |cin: usize, cout: usize| 9 * cin * cout + cout;
    layer(bands, c[0])
        + layer(c[0], c[0])
        + layer(c[0], c[1])
        + layer(c[1], c[1])
        + layer(c[1], c[2])
        + 3 * layer(c[2], c[2])
        + layer(c[2], c[3])
}
