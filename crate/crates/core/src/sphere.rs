//! Deterministic point sets on unit spheres.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FALLBACK_SEED: u64 = 0x5eed_5eed;

/// `n` quasi-uniform points on the unit sphere of `R^dim`.
///
/// `dim = 1` yields `±1`, `dim = 2` an equiangular circle, `dim = 3` a
/// Fibonacci lattice; higher dimensions use seeded Gaussian directions.
pub fn quasi_uniform(dim: usize, n: usize) -> Vec<DVector<f64>> {
    match dim {
        0 => Vec::new(),
        1 => [1.0, -1.0]
            .iter()
            .take(n.min(2))
            .map(|&s| DVector::from_element(1, s))
            .collect(),
        2 => (0..n)
            .map(|k| {
                let th = 2.0 * PI * k as f64 / n as f64;
                DVector::from_vec(vec![th.cos(), th.sin()])
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let th = golden * k as f64;
                    DVector::from_vec(vec![r * th.cos(), r * th.sin(), z])
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(FALLBACK_SEED);
            (0..n).map(|_| random_unit(&mut rng, dim)).collect()
        }
    }
}

pub fn random_unit<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Covering radius proxy: typical angular spacing of `quasi_uniform(dim, n)`.
pub fn spacing(dim: usize, n: usize) -> f64 {
    match dim {
        0 | 1 => 0.0,
        2 => PI / n.max(1) as f64,
        d => {
            let area = 2.0 * PI.powf(d as f64 / 2.0) / gamma_half(d);
            (area / n.max(1) as f64).powf(1.0 / (d as f64 - 1.0))
        }
    }
}

fn gamma_half(d: usize) -> f64 {
    // Γ(d/2) by recursion from Γ(1/2) = √π and Γ(1) = 1.
    let mut g = if d.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut x = if d.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < d as f64 / 2.0 {
        g *= x;
        x += 1.0;
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_are_unit() {
        for dim in 1..=5 {
            for p in quasi_uniform(dim, 37) {
                assert!((p.norm() - 1.0).abs() < 1e-14);
            }
        }
        assert_eq!(quasi_uniform(1, 9).len(), 2);
    }

    #[test]
    fn spacing_shrinks() {
        assert!(spacing(3, 400) < spacing(3, 100));
        assert!((gamma_half(3) - PI.sqrt() / 2.0).abs() < 1e-15);
        assert!((gamma_half(4) - 1.0).abs() < 1e-15);
    }
}
