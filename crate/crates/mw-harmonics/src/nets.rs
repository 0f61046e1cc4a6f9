//! Deterministic, seed-reproducible direction nets on spheres.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

const PRIMES: [u64; 24] =
    [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89];

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while k > 0 {
        out += (k % base) as f64 * inv;
        k /= base;
        inv /= base as f64;
    }
    out
}

fn halton_sphere(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    assert!(n <= PRIMES.len(), "sphere nets support n <= {}", PRIMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let normal = Normal::standard();
    let mut out = Vec::with_capacity(count);
    let mut k = 1u64;
    while out.len() < count {
        let v = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let u = (radical_inverse(k, PRIMES[i]) + shift[i]).fract();
                normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
            }),
        );
        k += 1;
        let norm = v.norm();
        if norm > 1e-9 {
            out.push(v / norm);
        }
    }
    out
}

/// Net suitable for even functions: in the plane only a half circle is covered.
pub fn sphere_net(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0)],
        2 => {
            let off = ChaCha8Rng::seed_from_u64(seed).random::<f64>();
            (0..count)
                .map(|k| {
                    let t = std::f64::consts::PI * (k as f64 + off) / count as f64;
                    DVector::from_vec(vec![t.cos(), t.sin()])
                })
                .collect()
        }
        _ => halton_sphere(n, count, seed),
    }
}

/// Net covering the whole sphere.
pub fn full_sphere_net(n: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    match n {
        0 => Vec::new(),
        1 => vec![DVector::from_element(1, 1.0), DVector::from_element(1, -1.0)],
        2 => {
            let off = ChaCha8Rng::seed_from_u64(seed).random::<f64>();
            (0..count)
                .map(|k| {
                    let t = std::f64::consts::TAU * (k as f64 + off) / count as f64;
                    DVector::from_vec(vec![t.cos(), t.sin()])
                })
                .collect()
        }
        _ => halton_sphere(n, count, seed),
    }
}

/// Default sampling density `max(200, 40 n^2)`.
pub fn default_count(n: usize) -> usize {
    200.max(40 * n * n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nets_are_unit_and_reproducible() {
        let a = sphere_net(3, 50, 7);
        let b = sphere_net(3, 50, 7);
        assert_eq!(a, b);
        assert!(a.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        assert_ne!(a, sphere_net(3, 50, 8));
    }
}
