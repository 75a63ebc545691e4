//! Standard normal helpers.

use libm::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Kendall tau-a between two equally long score vectors. Tied pairs add
/// nothing to the numerator but still count in the denominator.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let (c, d, pairs) = pair_counts(a, b);
    if pairs == 0 {
        return 0.0;
    }
    (c as f64 - d as f64) / pairs as f64
}

/// `(1 − τ)/2` computed from the integer pair counts, so that for example
/// one discordant pair out of three gives exactly `1/3`.
pub fn kendall_distance(a: &[f64], b: &[f64]) -> f64 {
    let (c, d, pairs) = pair_counts(a, b);
    if pairs == 0 {
        return 0.5;
    }
    (pairs - c + d) as f64 / (2 * pairs) as f64
}

/// Concordant pairs, discordant pairs and all pairs.
fn pair_counts(a: &[f64], b: &[f64]) -> (u64, u64, u64) {
    let n = a.len().min(b.len());
    let (mut c, mut d) = (0u64, 0u64);
    for i in 0..n {
        for j in (i + 1)..n {
            let (x, y) = (a[i] - a[j], b[i] - b[j]);
            if x != 0.0 && y != 0.0 {
                if (x > 0.0) == (y > 0.0) {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
    }
    let n = n as u64;
    (c, d, n * n.saturating_sub(1) / 2)
}
