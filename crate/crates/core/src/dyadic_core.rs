//! Dyadic intervals of `[0, 1)`, generations, slices, layers, Haar functions and tosses.
//!
//! An interval is addressed by `(gen, index)` and covers
//! `[index * 2^-gen, (index + 1) * 2^-gen)`. The toss attached to an interval is
//! `eps_I = 1_{I+} - 1_{I-}`: `+1` on the right child, `-1` on the left child.

use crate::error::{Error, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Deepest generation representable with a 64-bit index.
pub const MAX_GEN: u32 = 63;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicInterval {
    gen: u32,
    index: u64,
}

impl DyadicInterval {
    pub fn new(gen: u32, index: u64) -> Result<Self> {
        if gen > MAX_GEN {
            return Err(Error::DepthExceeded { gen, max: MAX_GEN });
        }
        if index >> gen != 0 {
            return Err(Error::Domain(format!(
                "index {index} out of range for generation {gen}"
            )));
        }
        Ok(Self { gen, index })
    }

    pub const fn root() -> Self {
        Self { gen: 0, index: 0 }
    }

    pub fn gen(&self) -> u32 {
        self.gen
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    /// Length `2^-gen`.
    pub fn len(&self) -> f64 {
        (-(self.gen as f64)).exp2()
    }

    pub fn left_end(&self) -> f64 {
        self.index as f64 * self.len()
    }

    pub fn right_end(&self) -> f64 {
        (self.index + 1) as f64 * self.len()
    }

    /// `(I-, I+)`.
    pub fn children(&self) -> Result<(Self, Self)> {
        if self.gen >= MAX_GEN {
            return Err(Error::DepthExceeded {
                gen: self.gen + 1,
                max: MAX_GEN,
            });
        }
        let g = self.gen + 1;
        Ok((
            Self { gen: g, index: 2 * self.index },
            Self { gen: g, index: 2 * self.index + 1 },
        ))
    }

    pub fn parent(&self) -> Result<Self> {
        if self.gen == 0 {
            return Err(Error::Domain("the root interval has no parent".into()));
        }
        Ok(Self {
            gen: self.gen - 1,
            index: self.index / 2,
        })
    }

    /// `None` for the root.
    pub fn is_left_child(&self) -> Option<bool> {
        (self.gen > 0).then_some(self.index % 2 == 0)
    }

    pub fn contains(&self, x: &impl BinaryDigits) -> bool {
        x.prefix(self.gen) == self.index
    }

    /// Position in breadth-first order: `2^gen - 1 + index`.
    pub fn heap_index(&self) -> usize {
        ((1u64 << self.gen) - 1 + self.index) as usize
    }

    pub fn from_heap_index(h: usize) -> Self {
        let gen = (h as u64 + 1).ilog2();
        Self {
            gen,
            index: h as u64 + 1 - (1u64 << gen),
        }
    }
}

/// Slice index `((g - 1) mod d) + 1` of generation `g`.
pub fn slice_of(g: u32, d: u32) -> Result<u32> {
    if d == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if g == 0 {
        return Err(Error::Domain("the root generation belongs to no slice".into()));
    }
    Ok((g - 1) % d + 1)
}

/// Layer index `ceil(g / d)`; layer `k` spans generations `(k-1)d+1 ..= kd`.
pub fn layer_of(g: u32, d: u32) -> Result<u32> {
    if d == 0 {
        return Err(Error::Domain("dimension must be positive".into()));
    }
    if g == 0 {
        return Err(Error::Domain("the root generation belongs to no layer".into()));
    }
    Ok(g.div_ceil(d))
}

/// Binary digits `b_1 b_2 ...` of a point `x` in `[0, 1)`.
///
/// Digit `b_k` decides which child of `I_{k-1}^x` contains `x`.
pub trait BinaryDigits {
    /// Digit `b_k`, `k >= 1`.
    fn digit(&self, k: u32) -> u8;

    /// The first `g` digits read as an integer, i.e. the index of `I_g^x`.
    fn prefix(&self, g: u32) -> u64 {
        (1..=g).fold(0u64, |acc, k| (acc << 1) | self.digit(k) as u64)
    }
}

/// A point given by finitely many digits; all later digits are zero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinitePoint {
    bits: Vec<u8>,
}

impl FinitePoint {
    pub fn from_bits(bits: Vec<u8>) -> Self {
        assert!(bits.iter().all(|&b| b <= 1), "digits must be 0 or 1");
        Self { bits }
    }

    /// The leaf `m` of generation `depth`, digits most significant first.
    pub fn from_leaf(m: u64, depth: u32) -> Self {
        let bits = (1..=depth).map(|k| ((m >> (depth - k)) & 1) as u8).collect();
        Self { bits }
    }

    /// Truncated binary expansion of `x` with `depth` digits.
    pub fn from_f64(x: f64, depth: u32) -> Result<Self> {
        if !(0.0..1.0).contains(&x) {
            return Err(Error::Domain(format!("{x} is not in [0, 1)")));
        }
        let mut bits = Vec::with_capacity(depth as usize);
        let mut r = x;
        for _ in 0..depth {
            r *= 2.0;
            let b = r >= 1.0;
            if b {
                r -= 1.0;
            }
            bits.push(b as u8);
        }
        Ok(Self { bits })
    }

    pub fn depth(&self) -> u32 {
        self.bits.len() as u32
    }
}

impl BinaryDigits for FinitePoint {
    fn digit(&self, k: u32) -> u8 {
        assert!(k >= 1, "digits are numbered from 1");
        self.bits.get(k as usize - 1).copied().unwrap_or(0)
    }
}

/// A uniformly random point whose digits are drawn lazily from an RNG.
pub struct StreamPoint<R: RngCore> {
    rng: std::cell::RefCell<R>,
    bits: std::cell::RefCell<Vec<u8>>,
}

impl<R: RngCore> StreamPoint<R> {
    pub fn new(rng: R) -> Self {
        Self {
            rng: std::cell::RefCell::new(rng),
            bits: std::cell::RefCell::new(Vec::new()),
        }
    }

    /// Digits generated so far.
    pub fn materialized(&self) -> FinitePoint {
        FinitePoint::from_bits(self.bits.borrow().clone())
    }
}

impl<R: RngCore> BinaryDigits for StreamPoint<R> {
    fn digit(&self, k: u32) -> u8 {
        assert!(k >= 1, "digits are numbered from 1");
        let mut bits = self.bits.borrow_mut();
        while bits.len() < k as usize {
            let w = self.rng.borrow_mut().next_u64();
            bits.extend((0..64).map(|s| ((w >> s) & 1) as u8));
        }
        bits[k as usize - 1]
    }
}

/// `I_g^x`, the interval of generation `g` containing `x`.
pub fn interval_at(x: &impl BinaryDigits, g: u32) -> Result<DyadicInterval> {
    DyadicInterval::new(g, x.prefix(g))
}

/// L2-normalized Haar function `h_I(x) = (1_{I+} - 1_{I-}) / sqrt|I|`.
pub fn haar(i: &DyadicInterval, x: &impl BinaryDigits) -> f64 {
    toss(i, x) as f64 / i.len().sqrt()
}

/// `eps_I(x)`: `+1` on `I+`, `-1` on `I-`, `0` outside `I`.
pub fn toss(i: &DyadicInterval, x: &impl BinaryDigits) -> i8 {
    if !i.contains(x) {
        return 0;
    }
    2 * x.digit(i.gen + 1) as i8 - 1
}

/// `eps_g(x) = eps_{I_g^x}(x)`.
pub fn toss_at(g: u32, x: &impl BinaryDigits) -> i8 {
    2 * x.digit(g + 1) as i8 - 1
}

/// `(eps_g^-, eps_g^+)` with `eps_g^{+-} = 1(eps_{g-1} = +-1) eps_g`.
pub fn toss_split(g: u32, x: &impl BinaryDigits) -> Result<(i8, i8)> {
    if g == 0 {
        return Err(Error::Domain("toss split needs g >= 1".into()));
    }
    let e = toss_at(g, x);
    Ok(if toss_at(g - 1, x) < 0 { (e, 0) } else { (0, e) })
}

/// `(eps_g^-, eps_g^+)` read off the membership `I_g^x in D_g^-` or `D_g^+`.
pub fn toss_split_by_membership(g: u32, x: &impl BinaryDigits) -> Result<(i8, i8)> {
    let iv = interval_at(x, g)?;
    let e = toss(&iv, x);
    match iv.is_left_child() {
        Some(true) => Ok((e, 0)),
        Some(false) => Ok((0, e)),
        None => Err(Error::Domain("toss split needs g >= 1".into())),
    }
}

/// Checks that the two definitions of the split tosses agree on every leaf of
/// generation `depth`. Used as a self-test of the sign convention.
pub fn split_definitions_agree(depth: u32) -> bool {
    (0..1u64 << depth).all(|m| {
        let x = FinitePoint::from_leaf(m, depth);
        (1..depth).all(|g| toss_split(g, &x).ok() == toss_split_by_membership(g, &x).ok())
    })
}
