//! Binary hash codes: balanced binarization, the straight-through gradient
//! gate, and bit-packed code arithmetic.
//!
//! A code is K entries in {+1, -1}. Bit `b` of the packed little-endian word
//! stream is 1 iff entry `b` is +1; unused high bits of the last word are
//! always zero, so packed words can be compared and hashed directly.

use crate::error::{Error, Result};

/// Code lengths accepted by configs, checkpoints, and index files.
pub const SUPPORTED_BITS: [u32; 4] = [16, 32, 64, 128];

/// Validates a configured code length against [`SUPPORTED_BITS`].
pub fn validate_bits(bits: u32) -> Result<()> {
    if SUPPORTED_BITS.contains(&bits) {
        Ok(())
    } else {
        Err(Error::InvalidBits(bits))
    }
}

/// A K-bit hash code in {+1, -1}^K, stored bit-packed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashCode {
    bits: u32,
    packed: Vec<u64>,
}

/// Number of 64-bit words needed for `bits` coordinates.
pub fn words_for(bits: u32) -> usize {
    (bits as usize).div_ceil(64)
}

impl HashCode {
    /// Builds a code from a +1/-1 sign vector.
    pub fn from_signs(signs: &[i8]) -> Self {
        let bits = signs.len() as u32;
        let mut packed = vec![0u64; words_for(bits)];
        for (b, &s) in signs.iter().enumerate() {
            debug_assert!(s == 1 || s == -1);
            if s > 0 {
                packed[b / 64] |= 1u64 << (b % 64);
            }
        }
        HashCode { bits, packed }
    }

    /// Rebuilds a code from packed words; masks unused high bits.
    pub fn from_packed(bits: u32, mut packed: Vec<u64>) -> Result<Self> {
        if packed.len() != words_for(bits) {
            return Err(Error::ShapeMismatch(format!(
                "{} packed words cannot hold {} bits",
                packed.len(),
                bits
            )));
        }
        let rem = bits % 64;
        if rem != 0 {
            if let Some(last) = packed.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
        Ok(HashCode { bits, packed })
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn packed(&self) -> &[u64] {
        &self.packed
    }

    /// Sign of coordinate `i` as +1 or -1.
    pub fn sign(&self, i: usize) -> i8 {
        if self.packed[i / 64] >> (i % 64) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    /// Unpacks to the +1/-1 vector form.
    pub fn signs(&self) -> Vec<i8> {
        (0..self.bits as usize).map(|i| self.sign(i)).collect()
    }

    /// Hamming distance: count of differing coordinates.
    pub fn hamming(&self, other: &HashCode) -> Result<u32> {
        self.check_bits(other)?;
        Ok(hamming_packed(&self.packed, &other.packed))
    }

    /// Signed inner product z = sum_i signs_a[i]*signs_b[i] = K - 2*hamming.
    pub fn inner_product(&self, other: &HashCode) -> Result<i64> {
        let d = self.hamming(other)?;
        Ok(self.bits as i64 - 2 * d as i64)
    }

    fn check_bits(&self, other: &HashCode) -> Result<()> {
        if self.bits != other.bits {
            return Err(Error::BitsMismatch {
                expected: self.bits,
                actual: other.bits,
            });
        }
        Ok(())
    }
}

/// XOR + popcount over packed word slices. Callers guarantee equal length.
#[inline]
pub fn hamming_packed(a: &[u64], b: &[u64]) -> u32 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x ^ y).count_ones())
        .sum()
}

/// Balanced binarization: threshold each coordinate at the vector's own mean.
/// Ties (v == mean) go to +1.
pub fn balanced_sign(v_h: &[f64]) -> HashCode {
    let mean = v_h.iter().sum::<f64>() / v_h.len() as f64;
    let signs: Vec<i8> = v_h.iter().map(|&v| if v >= mean { 1 } else { -1 }).collect();
    HashCode::from_signs(&signs)
}

/// Straight-through estimator gate for the hard-tanh surrogate.
///
/// Passes the code gradient through wherever the mean-centered pre-activation
/// lies in the closed interval [-1, 1], and blocks it elsewhere.
pub fn ste_gate(grad_c: &[f64], centered: &[f64]) -> Vec<f64> {
    debug_assert_eq!(grad_c.len(), centered.len());
    grad_c
        .iter()
        .zip(centered)
        .map(|(&g, &u)| if u.abs() <= 1.0 { g } else { 0.0 })
        .collect()
}

/// Hard tanh: max(-1, min(1, u)). The relaxed code value used by backward
/// passes through the binarization.
#[inline]
pub fn htan(u: f64) -> f64 {
    u.clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn code(signs: &[i8]) -> HashCode {
        HashCode::from_signs(signs)
    }

    #[test]
    fn balanced_sign_thresholds_at_mean() {
        // mean = 1
        let c = balanced_sign(&[2.0, 0.0, -1.0, 3.0]);
        assert_eq!(c.signs(), vec![1, -1, -1, 1]);
    }

    #[test]
    fn balanced_sign_constant_vector_is_all_plus() {
        let c = balanced_sign(&[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(c.signs(), vec![1, 1, 1, 1]);
    }

    #[test]
    fn balanced_sign_zero_mean_pair() {
        let c = balanced_sign(&[-1.0, 1.0]);
        assert_eq!(c.signs(), vec![-1, 1]);
    }

    #[test]
    fn non_constant_vector_yields_both_signs() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..200 {
            let v: Vec<f64> = (0..16).map(|_| rng.gen_range(-4.0..4.0)).collect();
            if v.iter().all(|&x| x == v[0]) {
                continue;
            }
            let signs = balanced_sign(&v).signs();
            assert!(signs.contains(&1) && signs.contains(&-1));
        }
    }

    #[test]
    fn ste_gate_blocks_outside_unit_band() {
        let out = ste_gate(&[0.5, -0.3], &[0.4, 1.7]);
        assert_eq!(out, vec![0.5, 0.0]);
    }

    #[test]
    fn ste_gate_identity_at_zero_center() {
        let g = vec![1.0, -2.0, 0.25];
        assert_eq!(ste_gate(&g, &[0.0, 0.0, 0.0]), g);
    }

    #[test]
    fn ste_gate_boundary_is_inclusive() {
        let out = ste_gate(&[3.0, 4.0], &[1.0, -1.0]);
        assert_eq!(out, vec![3.0, 4.0]);
    }

    #[test]
    fn inner_product_identity_and_complement() {
        let mut rng = StdRng::seed_from_u64(1);
        let signs: Vec<i8> = (0..64).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        let flipped: Vec<i8> = signs.iter().map(|s| -s).collect();
        let a = code(&signs);
        let b = code(&flipped);
        assert_eq!(a.inner_product(&a).unwrap(), 64);
        assert_eq!(a.inner_product(&b).unwrap(), -64);
    }

    #[test]
    fn inner_product_hand_example() {
        let a = code(&[1, -1, 1, 1]);
        let b = code(&[1, 1, -1, 1]);
        assert_eq!(a.inner_product(&b).unwrap(), 0);
        assert_eq!(a.hamming(&b).unwrap(), 2);
        assert_eq!(a.hamming(&a).unwrap(), 0);
    }

    #[test]
    fn bits_mismatch_is_an_error() {
        let a = code(&[1, -1]);
        let b = code(&[1, -1, 1]);
        assert!(matches!(
            a.hamming(&b),
            Err(Error::BitsMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn z_equals_k_minus_2d_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..10_000 {
            let k = *[16usize, 32, 64, 128].iter().nth(rng.gen_range(0..4)).unwrap();
            let a: Vec<i8> = (0..k).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            let b: Vec<i8> = (0..k).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
            let ca = code(&a);
            let cb = code(&b);
            // brute-force both quantities from the sign vectors
            let z_naive: i64 = a.iter().zip(&b).map(|(x, y)| (*x as i64) * (*y as i64)).sum();
            let d_naive = a.iter().zip(&b).filter(|(x, y)| x != y).count() as u32;
            assert_eq!(ca.hamming(&cb).unwrap(), d_naive);
            assert_eq!(ca.inner_product(&cb).unwrap(), z_naive);
            assert_eq!(z_naive, k as i64 - 2 * d_naive as i64);
        }
    }

    #[test]
    fn pack_roundtrip_all_supported_lengths() {
        let mut rng = StdRng::seed_from_u64(9);
        for &k in &SUPPORTED_BITS {
            for _ in 0..50 {
                let signs: Vec<i8> =
                    (0..k).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
                let c = code(&signs);
                assert_eq!(c.signs(), signs);
                let back = HashCode::from_packed(k, c.packed().to_vec()).unwrap();
                assert_eq!(back, c);
            }
        }
    }

    #[test]
    fn from_packed_masks_stray_high_bits() {
        let c = HashCode::from_packed(16, vec![u64::MAX]).unwrap();
        assert_eq!(c.packed()[0], 0xFFFF);
        assert_eq!(c.signs(), vec![1i8; 16]);
    }

    #[test]
    fn balance_statistic_on_gaussian_activations() {
        // 1000 iid standard-normal draws at K = 64; fraction of +1 bits
        // should sit near one half.
        let mut rng = ChaCha20Rng::seed_from_u64(1234);
        let mut total_ones = 0usize;
        let draws = 1000;
        for _ in 0..draws {
            let v: Vec<f64> = (0..64).map(|_| rng.sample(StandardNormal)).collect();
            total_ones += balanced_sign(&v).signs().iter().filter(|&&s| s == 1).count();
        }
        let frac = total_ones as f64 / (draws * 64) as f64;
        assert!((0.45..=0.55).contains(&frac), "fraction of +1 bits = {frac}");
    }

    #[test]
    fn validate_bits_rejects_odd_lengths() {
        assert!(validate_bits(64).is_ok());
        assert!(matches!(validate_bits(48), Err(Error::InvalidBits(48))));
    }
}
