//! Counter-based pseudo-randomness.
//!
//! Every draw is a pure function of (seed, counter), so trials can run in
//! parallel and still reproduce bit-for-bit regardless of scheduling. The
//! mixer is the SplitMix64 finalizer, which passes BigCrush when driven by a
//! Weyl sequence.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The `counter`-th word of the stream identified by `seed`.
pub fn u64_at(seed: u64, counter: u64) -> u64 {
    mix(seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
}

/// Derives an independent child seed; `tag` distinguishes uses of the parent.
pub fn child_seed(seed: u64, tag: u64) -> u64 {
    mix(u64_at(seed, tag) ^ GOLDEN)
}

/// Uniform draw in [0, 1) with 53 random bits.
pub fn f64_at(seed: u64, counter: u64) -> f64 {
    (u64_at(seed, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal pair via Box-Muller; consumes counters `2i` and `2i + 1`.
pub fn normal_pair_at(seed: u64, i: u64) -> (f64, f64) {
    // Shift into (0, 1] so the log never sees zero.
    let u1 = ((u64_at(seed, 2 * i) >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = f64_at(seed, 2 * i + 1);
    let r = (-2.0 * u1.ln()).sqrt();
    let phi = 2.0 * std::f64::consts::PI * u2;
    (r * phi.cos(), r * phi.sin())
}

/// Uniform index in [0, bound) via the multiply-shift trick.
/// Bias is below 2^-53 for every bound used in this crate.
pub fn index_at(seed: u64, counter: u64, bound: usize) -> usize {
    debug_assert!(bound > 0);
    ((u128::from(u64_at(seed, counter)) * bound as u128) >> 64) as usize
}

/// Fisher-Yates permutation of 0..n, deterministic in (seed, n).
pub fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = index_at(seed, i as u64, i + 1);
        perm.swap(i, j);
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_pure_functions_of_seed_and_counter() {
        let a = u64_at(42, 7);
        let _ = u64_at(42, 8); // interleaved draw must not disturb anything
        assert_eq!(a, u64_at(42, 7));
        assert_ne!(u64_at(42, 7), u64_at(42, 6));
        assert_ne!(u64_at(42, 7), u64_at(43, 7));
    }

    #[test]
    fn uniforms_live_in_unit_interval() {
        for i in 0..10_000 {
            let u = f64_at(9, i);
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let n = 200_000u64;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for i in 0..n {
            let (a, b) = normal_pair_at(123, i);
            sum += a + b;
            sumsq += a * a + b * b;
        }
        let m = 2.0 * n as f64;
        let mean = sum / m;
        let var = sumsq / m - mean * mean;
        assert!(mean.abs() < 5e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn permutation_is_a_bijection() {
        let p = permutation(5, 257);
        let mut seen = vec![false; 257];
        for &i in &p {
            assert!(!seen[i]);
            seen[i] = true;
        }
        assert_eq!(p, permutation(5, 257));
        assert_ne!(p, permutation(6, 257));
    }
}
