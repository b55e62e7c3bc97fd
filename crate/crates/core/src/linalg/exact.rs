//! Exact floating-point accumulation.
//!
//! [`ExactSum`] holds the running sum of any number of finite doubles as a
//! fixed-point integer spanning the whole binary64 range, so the rounded
//! result does not depend on the order or grouping of the additions. Dot
//! products built on it are bit-identical across rank counts.

const LIMB_BITS: u32 = 32;
const LIMB_MASK: i64 = (1 << LIMB_BITS) - 1;
/// 2098 bits cover 2^-1074 .. 2^1024; the rest is headroom for carries.
const LIMBS: usize = 68;
const NORMALIZE_EVERY: u32 = 1 << 30;

#[derive(Clone, Debug)]
pub struct ExactSum {
    limbs: [i64; LIMBS],
    pending: u32,
    nan: bool,
    pos_inf: bool,
    neg_inf: bool,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self::new()
    }
}

impl ExactSum {
    pub fn new() -> Self {
        ExactSum {
            limbs: [0; LIMBS],
            pending: 0,
            nan: false,
            pos_inf: false,
            neg_inf: false,
        }
    }

    pub fn add(&mut self, x: f64) {
        if !x.is_finite() {
            if x.is_nan() {
                self.nan = true;
            } else if x > 0.0 {
                self.pos_inf = true;
            } else {
                self.neg_inf = true;
            }
            return;
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as u32;
        let mut mant = bits & ((1u64 << 52) - 1);
        let shift = if exp == 0 {
            0
        } else {
            mant |= 1 << 52;
            exp - 1
        };
        if mant == 0 {
            return;
        }
        let idx = (shift / LIMB_BITS) as usize;
        let wide = (mant as u128) << (shift % LIMB_BITS);
        let parts = [
            (wide & LIMB_MASK as u128) as i64,
            ((wide >> 32) & LIMB_MASK as u128) as i64,
            (wide >> 64) as i64,
        ];
        if x < 0.0 {
            for (k, p) in parts.iter().enumerate() {
                self.limbs[idx + k] -= p;
            }
        } else {
            for (k, p) in parts.iter().enumerate() {
                self.limbs[idx + k] += p;
            }
        }
        self.pending += 1;
        if self.pending >= NORMALIZE_EVERY {
            self.normalize();
        }
    }

    pub fn add_product(&mut self, a: f64, b: f64) {
        self.add(a * b);
    }

    /// Adds another accumulator exactly.
    pub fn merge(&mut self, other: &ExactSum) {
        self.normalize();
        let mut o = other.clone();
        o.normalize();
        for (l, r) in self.limbs.iter_mut().zip(o.limbs.iter()) {
            *l += r;
        }
        self.nan |= o.nan;
        self.pos_inf |= o.pos_inf;
        self.neg_inf |= o.neg_inf;
        self.normalize();
    }

    fn normalize(&mut self) {
        for i in 0..LIMBS - 1 {
            let carry = self.limbs[i] >> LIMB_BITS;
            self.limbs[i] -= carry << LIMB_BITS;
            self.limbs[i + 1] += carry;
        }
        self.pending = 0;
    }

    /// Correctly rounded (round-half-even) value of the exact sum.
    pub fn value(&self) -> f64 {
        if self.nan || (self.pos_inf && self.neg_inf) {
            return f64::NAN;
        }
        if self.pos_inf {
            return f64::INFINITY;
        }
        if self.neg_inf {
            return f64::NEG_INFINITY;
        }
        let mut limbs = self.limbs;
        let carry = |limbs: &mut [i64; LIMBS]| {
            for i in 0..LIMBS - 1 {
                let c = limbs[i] >> LIMB_BITS;
                limbs[i] -= c << LIMB_BITS;
                limbs[i + 1] += c;
            }
        };
        carry(&mut limbs);
        let negative = limbs[LIMBS - 1] < 0;
        if negative {
            for l in limbs.iter_mut() {
                *l = -*l;
            }
            carry(&mut limbs);
        }
        let mag = round_magnitude(&limbs);
        if negative {
            -mag
        } else {
            mag
        }
    }
}

fn bit_at(limbs: &[i64; LIMBS], pos: usize) -> bool {
    (limbs[pos / 32] >> (pos % 32)) & 1 == 1
}

/// `limbs` is a non-negative integer in base 2^32 counting units of 2^-1074.
fn round_magnitude(limbs: &[i64; LIMBS]) -> f64 {
    let Some(top) = limbs.iter().rposition(|&l| l != 0) else {
        return 0.0;
    };
    let p = top * 32 + (63 - limbs[top].leading_zeros() as usize);
    if p <= 52 {
        let mut m = 0u64;
        for i in (0..=top).rev() {
            m = (m << 32) | limbs[i] as u64;
        }
        return m as f64 * f64::from_bits(1);
    }
    let low = p - 52;
    let mut mant = 0u64;
    for pos in (low..=p).rev() {
        mant = (mant << 1) | bit_at(limbs, pos) as u64;
    }
    let round = bit_at(limbs, low - 1);
    let sticky = (0..low - 1).any(|pos| bit_at(limbs, pos));
    let mut exp_pos = p;
    if round && (sticky || mant & 1 == 1) {
        mant += 1;
        if mant == 1 << 53 {
            mant >>= 1;
            exp_pos += 1;
        }
    }
    let biased = exp_pos - 51;
    if biased >= 0x7ff {
        return f64::INFINITY;
    }
    f64::from_bits(((biased as u64) << 52) | (mant & ((1 << 52) - 1)))
}

/// Exactly accumulated, correctly rounded sum.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = ExactSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

/// Sum of the rounded products `x[i]*y[i]`, accumulated exactly.
pub fn exact_dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = ExactSum::new();
    for (a, b) in x.iter().zip(y) {
        acc.add(a * b);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(exact_sum([]), 0.0);
        assert_eq!(exact_sum([1.0, 2.0, 3.0, 4.0]), 10.0);
        assert_eq!(exact_sum([1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum([0.1, 0.2]), 0.1 + 0.2);
        assert_eq!(exact_sum([-3.5]), -3.5);
        assert_eq!(exact_sum([f64::from_bits(1), f64::from_bits(1)]), f64::from_bits(2));
        assert_eq!(exact_sum([f64::MAX, f64::MAX]), f64::INFINITY);
        assert_eq!(exact_sum([f64::MAX, f64::MAX, -f64::MAX]), f64::MAX);
        assert!(exact_sum([1.0, f64::NAN]).is_nan());
        assert!(exact_sum([f64::INFINITY, f64::NEG_INFINITY]).is_nan());
        assert_eq!(exact_sum([f64::INFINITY, 1.0]), f64::INFINITY);
    }

    #[test]
    fn ties_round_to_even() {
        // 1 + 2^-53 is exactly halfway between 1 and its successor.
        assert_eq!(exact_sum([1.0, 2f64.powi(-53)]), 1.0);
        let up = 1.0 + f64::EPSILON;
        assert_eq!(exact_sum([up, 2f64.powi(-53)]), 1.0 + 2.0 * f64::EPSILON);
        assert_eq!(exact_sum([1.0, 2f64.powi(-53), 2f64.powi(-100)]), up);
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37 % 11) as f64 - 5.0) * 1.1f64.powi(i)).collect();
        let mut a = ExactSum::new();
        let mut b = ExactSum::new();
        for (i, x) in xs.iter().enumerate() {
            if i % 3 == 0 { a.add(*x) } else { b.add(*x) }
        }
        a.merge(&b);
        assert_eq!(a.value().to_bits(), exact_sum(xs).to_bits());
    }
}
