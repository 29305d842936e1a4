//! Deterministic quasi-random sampling over coordinate boxes.

use crate::geometry::ChartPoint;
use crate::system::SystemSpec;

const PRIMES: [usize; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];

/// Van der Corput radical inverse in the given base.
fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// `count` Halton points inside the box, skipping index 0.
pub fn halton_box(bounds: &[(f64, f64)], count: usize) -> Vec<ChartPoint> {
    let dim = bounds.len();
    assert!(dim <= PRIMES.len(), "halton_box supports up to 12 dimensions");
    (1..=count)
        .map(|i| {
            let coords: Vec<f64> = bounds
                .iter()
                .enumerate()
                .map(|(j, &(lo, hi))| lo + (hi - lo) * radical_inverse(i, PRIMES[j]))
                .collect();
            ChartPoint::from_slice(&coords)
        })
        .collect()
}

/// Halton points over the system's declared sample box that pass its domain
/// guard. Returns the kept points and the number skipped.
pub fn domain_samples(spec: &SystemSpec, count: usize) -> (Vec<ChartPoint>, usize) {
    let raw = halton_box(&spec.sample_box, count);
    let mut kept = Vec::with_capacity(raw.len());
    let mut skipped = 0;
    for q in raw {
        if spec.in_domain(&q) {
            kept.push(q);
        } else {
            skipped += 1;
        }
    }
    (kept, skipped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn halton_is_deterministic_and_in_box() {
        let bounds = [(-1.0, 1.0), (0.0, 2.0)];
        let a = halton_box(&bounds, 50);
        let b = halton_box(&bounds, 50);
        assert_eq!(a.len(), 50);
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.0, q.0);
            assert!(p.0[0] >= -1.0 && p.0[0] <= 1.0);
            assert!(p.0[1] >= 0.0 && p.0[1] <= 2.0);
        }
    }
}
