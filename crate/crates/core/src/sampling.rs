//! Scrambled Halton sequence.
//!
//! Each dimension uses its own prime base; every digit position of every
//! dimension gets an independent random permutation of the digits drawn
//! from the seed. The sequence stays a (0,1)-stratification in each
//! coordinate and distinct indices always produce distinct points.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Returns the first `n` primes.
fn primes(n: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while out.len() < n {
        if out.iter().take_while(|p| *p * *p <= candidate).all(|p| candidate % p != 0) {
            out.push(candidate);
        }
        candidate += 1;
    }
    out
}

/// `n` points of the seeded scrambled Halton sequence in `[0,1)^dim`.
pub fn scrambled_halton(dim: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let bases = primes(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    // digit permutations per dimension and digit level
    let perms: Vec<Vec<Vec<u64>>> = bases
        .iter()
        .map(|&b| {
            let levels = levels_for(b);
            (0..levels)
                .map(|_| {
                    let mut p: Vec<u64> = (0..b).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect()
        })
        .collect();
    (0..n as u64)
        .map(|i| {
            bases
                .iter()
                .zip(&perms)
                .map(|(&b, perm)| radical_inverse(i, b, perm))
                .collect()
        })
        .collect()
}

// Enough digits that the truncated tail is below f64 resolution.
fn levels_for(base: u64) -> usize {
    (53.0 / (base as f64).log2()).ceil() as usize
}

fn radical_inverse(mut index: u64, base: u64, perm: &[Vec<u64>]) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut acc = 0.0;
    for level in perm {
        let digit = index % base;
        index /= base;
        acc += level[digit as usize] as f64 * scale;
        scale *= inv;
    }
    acc.min(1.0 - f64::EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_primes() {
        assert_eq!(primes(6), vec![2, 3, 5, 7, 11, 13]);
    }

    #[test]
    fn points_in_unit_cube_and_distinct() {
        let pts = scrambled_halton(5, 500, 11);
        for p in &pts {
            assert!(p.iter().all(|x| (0.0..1.0).contains(x)));
        }
        for i in 0..pts.len() {
            for j in 0..i {
                assert_ne!(pts[i], pts[j]);
            }
        }
    }

    #[test]
    fn one_dimensional_stratification() {
        // the first b^k points of a base-b scrambled radical inverse hit
        // every interval [m/b^k, (m+1)/b^k) exactly once
        let pts = scrambled_halton(2, 9, 4);
        let mut cells: Vec<usize> = pts.iter().map(|p| (p[1] * 9.0) as usize).collect();
        cells.sort();
        assert_eq!(cells, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn seeds_differ() {
        assert_ne!(scrambled_halton(3, 4, 1), scrambled_halton(3, 4, 2));
    }
}
