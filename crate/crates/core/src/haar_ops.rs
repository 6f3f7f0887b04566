//! Finite Haar analysis and synthesis, the dyadic Hilbert transform `S`, the dyadic
//! Riesz transforms `S_i`, and lower bounds for their `L^p` operator norms.
//!
//! Coefficient trees are stored in breadth-first order, interval `(g, m)` at slot
//! `2^g - 1 + m`, each slot holding `m`-dimensional values.

use crate::dyadic_core::{slice_of, DyadicInterval};
use crate::error::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Values of a step function constant on each interval of generation `depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicFunctionSamples {
    pub depth: u32,
    pub value_dim: usize,
    /// `2^depth` blocks of `value_dim` entries, in index order.
    pub values: Vec<f64>,
}

impl DyadicFunctionSamples {
    pub fn new(depth: u32, value_dim: usize, values: Vec<f64>) -> Result<Self> {
        if value_dim == 0 {
            return Err(Error::Invalid("value dimension must be positive".into()));
        }
        let want = (1usize << depth) * value_dim;
        if values.len() != want {
            return Err(Error::LengthMismatch(format!(
                "expected {want} values, got {}",
                values.len()
            )));
        }
        Ok(Self { depth, value_dim, values })
    }

    pub fn scalar(depth: u32, values: Vec<f64>) -> Result<Self> {
        Self::new(depth, 1, values)
    }

    pub fn len(&self) -> usize {
        1 << self.depth
    }

    pub fn value(&self, m: usize) -> &[f64] {
        &self.values[m * self.value_dim..(m + 1) * self.value_dim]
    }
}

/// Mean and Haar coefficients `(f, h_I)` for all intervals of generations `0..depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HaarCoefficients {
    pub depth: u32,
    pub value_dim: usize,
    pub mean: Vec<f64>,
    pub coeff: Vec<f64>,
}

impl HaarCoefficients {
    pub fn zeros(depth: u32, value_dim: usize) -> Self {
        Self {
            depth,
            value_dim,
            mean: vec![0.0; value_dim],
            coeff: vec![0.0; ((1usize << depth) - 1) * value_dim],
        }
    }

    pub fn num_intervals(&self) -> usize {
        (1usize << self.depth) - 1
    }

    pub fn get(&self, i: &DyadicInterval) -> &[f64] {
        let h = i.heap_index();
        &self.coeff[h * self.value_dim..(h + 1) * self.value_dim]
    }

    pub fn get_mut(&mut self, i: &DyadicInterval) -> &mut [f64] {
        let h = i.heap_index();
        &mut self.coeff[h * self.value_dim..(h + 1) * self.value_dim]
    }

    /// Sum of squares of the mean and all coefficients.
    pub fn energy(&self) -> f64 {
        self.mean.iter().chain(&self.coeff).map(|v| v * v).sum()
    }

    /// A single unit coefficient on `h_I` in value component `comp`.
    pub fn basis(depth: u32, value_dim: usize, i: &DyadicInterval, comp: usize) -> Self {
        let mut c = Self::zeros(depth, value_dim);
        c.get_mut(i)[comp] = 1.0;
        c
    }

    /// Zeroes the mean and the root coefficient.
    pub fn without_root(&self) -> Self {
        let mut c = self.clone();
        c.mean.iter_mut().for_each(|v| *v = 0.0);
        if self.depth > 0 {
            c.coeff[..self.value_dim].iter_mut().for_each(|v| *v = 0.0);
        }
        c
    }

    /// Keeps only the coefficients whose generation lies in slice `i` of `d`.
    pub fn slice_projection(&self, i: u32, d: u32) -> Self {
        let mut c = Self::zeros(self.depth, self.value_dim);
        for g in 1..self.depth {
            if slice_of(g, d).ok() == Some(i) {
                let lo = ((1usize << g) - 1) * self.value_dim;
                let hi = ((1usize << (g + 1)) - 1) * self.value_dim;
                c.coeff[lo..hi].copy_from_slice(&self.coeff[lo..hi]);
            }
        }
        c
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut c = self.clone();
        c.mean.iter_mut().chain(c.coeff.iter_mut()).for_each(|v| *v *= s);
        c
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!((self.depth, self.value_dim), (other.depth, other.value_dim));
        let mut c = self.clone();
        for (a, b) in c.mean.iter_mut().zip(&other.mean) {
            *a += b;
        }
        for (a, b) in c.coeff.iter_mut().zip(&other.coeff) {
            *a += b;
        }
        c
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.mean
            .iter()
            .zip(&other.mean)
            .chain(self.coeff.iter().zip(&other.coeff))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Exact finite Haar transform of a step function.
pub fn decompose(s: &DyadicFunctionSamples) -> HaarCoefficients {
    let m = s.value_dim;
    let mut out = HaarCoefficients::zeros(s.depth, m);
    let mut avg = s.values.clone();
    for g in (0..s.depth).rev() {
        let n = 1usize << g;
        let scale = (-(g as f64)).exp2().sqrt() / 2.0;
        let mut next = vec![0.0; n * m];
        for idx in 0..n {
            let slot = (n - 1 + idx) * m;
            for c in 0..m {
                let lo = avg[2 * idx * m + c];
                let hi = avg[(2 * idx + 1) * m + c];
                out.coeff[slot + c] = scale * (hi - lo);
                next[idx * m + c] = 0.5 * (lo + hi);
            }
        }
        avg = next;
    }
    out.mean = avg;
    out
}

/// Inverse of [`decompose`].
pub fn reconstruct(c: &HaarCoefficients) -> DyadicFunctionSamples {
    let m = c.value_dim;
    let mut avg = c.mean.clone();
    for g in 0..c.depth {
        let n = 1usize << g;
        let inv = (g as f64).exp2().sqrt();
        let mut next = vec![0.0; 2 * n * m];
        for idx in 0..n {
            let slot = (n - 1 + idx) * m;
            for k in 0..m {
                let a = avg[idx * m + k];
                let h = c.coeff[slot + k] * inv;
                next[2 * idx * m + k] = a - h;
                next[(2 * idx + 1) * m + k] = a + h;
            }
        }
        avg = next;
    }
    DyadicFunctionSamples {
        depth: c.depth,
        value_dim: m,
        values: avg,
    }
}

fn sibling_swap(c: &HaarCoefficients, keep: impl Fn(u32) -> bool, sign: f64) -> HaarCoefficients {
    let m = c.value_dim;
    let mut out = HaarCoefficients::zeros(c.depth, m);
    for g in 1..c.depth {
        if !keep(g) {
            continue;
        }
        let n = 1usize << g;
        for pair in 0..n / 2 {
            let lo = (n - 1 + 2 * pair) * m;
            let hi = lo + m;
            for k in 0..m {
                let a_minus = c.coeff[lo + k];
                let a_plus = c.coeff[hi + k];
                out.coeff[hi + k] = -sign * a_minus;
                out.coeff[lo + k] = sign * a_plus;
            }
        }
    }
    out
}

/// Dyadic Hilbert transform: mean and `h_{I_0}` go to zero, and for every parent
/// `(f, h_{I+}) h_{I+} + (f, h_{I-}) h_{I-}` goes to `-(f, h_{I-}) h_{I+} + (f, h_{I+}) h_{I-}`.
pub fn dyadic_hilbert(c: &HaarCoefficients) -> HaarCoefficients {
    sibling_swap(c, |_| true, 1.0)
}

/// Dyadic Riesz transform `S_i`: the Hilbert rule on generations of slice `i`, zero elsewhere.
pub fn dyadic_riesz(i: u32, d: u32, c: &HaarCoefficients) -> Result<HaarCoefficients> {
    check_slice(i, d)?;
    Ok(sibling_swap(c, |g| slice_of(g, d).ok() == Some(i), 1.0))
}

fn check_slice(i: u32, d: u32) -> Result<()> {
    if d == 0 || i == 0 || i > d {
        return Err(Error::Domain(format!("slice {i} is not in [1, {d}]")));
    }
    Ok(())
}

/// `(2^-K sum |v|^p)^{1/p}` with pointwise Euclidean norms.
pub fn lp_norm(s: &DyadicFunctionSamples, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("p = {p} must be at least 1")));
    }
    Ok(weighted_lp(&s.values, s.value_dim, p))
}

/// Uniformly weighted `L^p` norm of `values`, grouped into points of `dim` entries.
pub fn weighted_lp(values: &[f64], dim: usize, p: f64) -> f64 {
    let n = values.len() / dim;
    let sum: f64 = values
        .chunks(dim)
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt().powf(p))
        .sum();
    (sum / n as f64).powf(1.0 / p)
}

/// A linear operator on coefficient trees together with its adjoint.
pub trait CoefficientOperator: Sync {
    fn out_dim(&self, in_dim: usize) -> usize {
        in_dim
    }
    fn apply(&self, c: &HaarCoefficients) -> HaarCoefficients;
    fn adjoint(&self, c: &HaarCoefficients) -> HaarCoefficients;
}

pub struct IdentityOp;

impl CoefficientOperator for IdentityOp {
    fn apply(&self, c: &HaarCoefficients) -> HaarCoefficients {
        c.clone()
    }
    fn adjoint(&self, c: &HaarCoefficients) -> HaarCoefficients {
        c.clone()
    }
}

pub struct HilbertOp;

impl CoefficientOperator for HilbertOp {
    fn apply(&self, c: &HaarCoefficients) -> HaarCoefficients {
        dyadic_hilbert(c)
    }
    fn adjoint(&self, c: &HaarCoefficients) -> HaarCoefficients {
        dyadic_hilbert(c).scaled(-1.0)
    }
}

pub struct RieszOp {
    pub i: u32,
    pub d: u32,
}

impl RieszOp {
    pub fn new(i: u32, d: u32) -> Result<Self> {
        check_slice(i, d)?;
        Ok(Self { i, d })
    }
}

impl CoefficientOperator for RieszOp {
    fn apply(&self, c: &HaarCoefficients) -> HaarCoefficients {
        sibling_swap(c, |g| slice_of(g, self.d).ok() == Some(self.i), 1.0)
    }
    fn adjoint(&self, c: &HaarCoefficients) -> HaarCoefficients {
        sibling_swap(c, |g| slice_of(g, self.d).ok() == Some(self.i), -1.0)
    }
}

/// `f -> (S_1 f, ..., S_d f)` for scalar `f`, with values in `R^d`.
pub struct RieszVectorOp {
    pub d: u32,
}

impl CoefficientOperator for RieszVectorOp {
    fn out_dim(&self, _in_dim: usize) -> usize {
        self.d as usize
    }

    fn apply(&self, c: &HaarCoefficients) -> HaarCoefficients {
        assert_eq!(c.value_dim, 1, "vector Riesz operator acts on scalar functions");
        let d = self.d as usize;
        let mut out = HaarCoefficients::zeros(c.depth, d);
        for i in 1..=self.d {
            let part = sibling_swap(c, |g| slice_of(g, self.d).ok() == Some(i), 1.0);
            for (slot, v) in part.coeff.iter().enumerate() {
                out.coeff[slot * d + (i as usize - 1)] = *v;
            }
        }
        out
    }

    fn adjoint(&self, c: &HaarCoefficients) -> HaarCoefficients {
        let d = self.d as usize;
        let mut out = HaarCoefficients::zeros(c.depth, 1);
        for i in 1..=self.d {
            let mut comp = HaarCoefficients::zeros(c.depth, 1);
            for slot in 0..c.num_intervals() {
                comp.coeff[slot] = c.coeff[slot * d + (i as usize - 1)];
            }
            let part = sibling_swap(&comp, |g| slice_of(g, self.d).ok() == Some(i), -1.0);
            out = out.add(&part);
        }
        out
    }
}

/// A linear map between uniformly weighted sample spaces, with its adjoint.
pub trait SampleMap: Sync {
    fn points(&self) -> usize;
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Vec<f64>;
    fn adjoint(&self, w: &[f64]) -> Vec<f64>;
}

struct TreeMap<'a, O: CoefficientOperator> {
    op: &'a O,
    depth: u32,
    in_dim: usize,
}

impl<O: CoefficientOperator> SampleMap for TreeMap<'_, O> {
    fn points(&self) -> usize {
        1 << self.depth
    }
    fn in_dim(&self) -> usize {
        self.in_dim
    }
    fn out_dim(&self) -> usize {
        self.op.out_dim(self.in_dim)
    }
    fn apply(&self, v: &[f64]) -> Vec<f64> {
        let s = DyadicFunctionSamples::new(self.depth, self.in_dim, v.to_vec()).expect("shape");
        reconstruct(&self.op.apply(&decompose(&s))).values
    }
    fn adjoint(&self, w: &[f64]) -> Vec<f64> {
        let s = DyadicFunctionSamples::new(self.depth, self.out_dim(), w.to_vec()).expect("shape");
        reconstruct(&self.op.adjoint(&decompose(&s))).values
    }
}

/// `|v|^{q-2} v` pointwise.
fn duality_map(values: &[f64], dim: usize, q: f64) -> Vec<f64> {
    let mut out = values.to_vec();
    for chunk in out.chunks_mut(dim) {
        let r = chunk.iter().map(|x| x * x).sum::<f64>().sqrt();
        let s = if r > 0.0 { r.powf(q - 2.0) } else { 0.0 };
        chunk.iter_mut().for_each(|x| *x *= s);
    }
    out
}

/// Search effort for the operator-norm estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub restarts: usize,
    pub iterations: usize,
}

impl Default for SearchBudget {
    fn default() -> Self {
        Self {
            restarts: 8,
            iterations: 60,
        }
    }
}

/// Best ratio found and the input achieving it.
#[derive(Debug, Clone)]
pub struct RatioSearch {
    pub ratio: f64,
    pub argmax: Vec<f64>,
}

/// Nonlinear power iteration `f <- J_{p'}(T* J_p(T f))` for `||T f||_p / ||f||_p`.
///
/// Every iterate is scored, so the result is the maximum ratio seen along the
/// trajectory, a valid lower bound for the operator norm.
pub fn power_ratio_search(map: &impl SampleMap, p: f64, start: &[f64], iterations: usize) -> RatioSearch {
    let q = p / (p - 1.0);
    let din = map.in_dim();
    let dout = map.out_dim();
    let mut f = start.to_vec();
    let mut best = RatioSearch {
        ratio: 0.0,
        argmax: f.clone(),
    };
    for it in 0..=iterations {
        let nf = weighted_lp(&f, din, p);
        if !(nf > 0.0) || !nf.is_finite() {
            break;
        }
        f.iter_mut().for_each(|x| *x /= nf);
        let g = map.apply(&f);
        let ratio = weighted_lp(&g, dout, p);
        if ratio > best.ratio {
            best = RatioSearch {
                ratio,
                argmax: f.clone(),
            };
        }
        if it == iterations {
            break;
        }
        let z = map.adjoint(&duality_map(&g, dout, p));
        f = duality_map(&z, din, q);
    }
    best
}

/// Runs `budget.restarts` Gaussian random starts plus the supplied warm starts.
pub fn multi_start_search(
    map: &impl SampleMap,
    p: f64,
    budget: SearchBudget,
    seed: u64,
    stream: u64,
    warm: &[Vec<f64>],
) -> RatioSearch {
    let n = map.points() * map.in_dim();
    let mut starts: Vec<Vec<f64>> = warm.to_vec();
    for r in 0..budget.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream.wrapping_mul(1 << 20).wrapping_add(r as u64));
        starts.push((0..n).map(|_| StandardNormal.sample(&mut rng)).collect());
    }
    let results: Vec<RatioSearch> = starts
        .par_iter()
        .map(|s| power_ratio_search(map, p, s, budget.iterations))
        .collect();
    results
        .into_iter()
        .fold(None::<RatioSearch>, |acc, r| match acc {
            Some(a) if a.ratio >= r.ratio => Some(a),
            _ => Some(r),
        })
        .unwrap_or(RatioSearch {
            ratio: 0.0,
            argmax: vec![0.0; n],
        })
}

/// Certified lower bounds for the `L^p` norm at each depth `1..=depth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormEstimate {
    pub p: f64,
    pub per_depth: Vec<f64>,
}

impl NormEstimate {
    pub fn value(&self) -> f64 {
        *self.per_depth.last().unwrap_or(&0.0)
    }
}

/// Repeats each sample twice, embedding a depth-`K` step function at depth `K + 1`.
fn refine(values: &[f64], dim: usize) -> Vec<f64> {
    values
        .chunks(dim)
        .flat_map(|c| c.iter().chain(c.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Lower bound for `||op||_{p -> p}` on step functions of generation `depth`.
///
/// Depths are searched in increasing order and each depth is warm-started from the
/// refined maximizer of the previous one, so the bounds are nondecreasing in depth.
pub fn operator_norm_estimate(
    op: &impl CoefficientOperator,
    in_dim: usize,
    p: f64,
    depth: u32,
    budget: SearchBudget,
    seed: u64,
) -> Result<NormEstimate> {
    if !(p > 1.0) {
        return Err(Error::Domain(format!("p = {p} must exceed 1")));
    }
    if depth == 0 {
        return Err(Error::Domain("depth must be at least 1".into()));
    }
    let mut per_depth = Vec::with_capacity(depth as usize);
    let mut warm: Vec<Vec<f64>> = Vec::new();
    for k in 1..=depth {
        let map = TreeMap { op, depth: k, in_dim };
        let best = multi_start_search(&map, p, budget, seed, k as u64, &warm);
        let prev = per_depth.last().copied().unwrap_or(0.0);
        per_depth.push(best.ratio.max(prev));
        warm = vec![refine(&best.argmax, in_dim)];
    }
    Ok(NormEstimate { p, per_depth })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(g: u32, m: u64) -> DyadicInterval {
        DyadicInterval::new(g, m).unwrap()
    }

    #[test]
    fn decompose_examples() {
        let c = decompose(&DyadicFunctionSamples::scalar(3, vec![2.5; 8]).unwrap());
        assert_eq!(c.mean, vec![2.5]);
        assert!(c.coeff.iter().all(|&v| v == 0.0));

        let c = decompose(&DyadicFunctionSamples::scalar(1, vec![1.0, -1.0]).unwrap());
        assert_eq!(c.mean, vec![0.0]);
        assert_eq!(c.get(&iv(0, 0)), &[-1.0]);

        let c = decompose(&DyadicFunctionSamples::scalar(2, vec![1.0, 1.0, -1.0, -1.0]).unwrap());
        assert_eq!(c.mean, vec![0.0]);
        assert_eq!(c.get(&iv(0, 0)), &[-1.0]);
        assert_eq!(c.get(&iv(1, 0)), &[0.0]);
        assert_eq!(c.get(&iv(1, 1)), &[0.0]);
    }

    #[test]
    fn reconstruct_examples() {
        let z = reconstruct(&HaarCoefficients::zeros(3, 1));
        assert!(z.values.iter().all(|&v| v == 0.0));
        let s = reconstruct(&HaarCoefficients::basis(1, 1, &iv(0, 0), 0));
        assert_eq!(s.values, vec![-1.0, 1.0]);
    }

    #[test]
    fn hilbert_examples() {
        let out = dyadic_hilbert(&HaarCoefficients::basis(3, 1, &iv(1, 1), 0));
        assert_eq!(out, HaarCoefficients::basis(3, 1, &iv(1, 0), 0));
        let out = dyadic_hilbert(&HaarCoefficients::basis(3, 1, &iv(1, 0), 0));
        assert_eq!(out, HaarCoefficients::basis(3, 1, &iv(1, 1), 0).scaled(-1.0));
    }

    #[test]
    fn riesz_examples() {
        let zero = dyadic_riesz(1, 2, &HaarCoefficients::basis(4, 1, &iv(2, 0), 0)).unwrap();
        assert_eq!(zero, HaarCoefficients::zeros(4, 1));
        let out = dyadic_riesz(1, 2, &HaarCoefficients::basis(4, 1, &iv(1, 1), 0)).unwrap();
        assert_eq!(out, HaarCoefficients::basis(4, 1, &iv(1, 0), 0));
        assert!(dyadic_riesz(3, 2, &HaarCoefficients::zeros(2, 1)).is_err());
    }

    #[test]
    fn lp_norm_examples() {
        let one = DyadicFunctionSamples::scalar(3, vec![1.0; 8]).unwrap();
        assert!((lp_norm(&one, 3.0).unwrap() - 1.0).abs() < 1e-15);
        let pm = DyadicFunctionSamples::scalar(1, vec![1.0, -1.0]).unwrap();
        assert!((lp_norm(&pm, 2.0).unwrap() - 1.0).abs() < 1e-15);
        let two = DyadicFunctionSamples::scalar(1, vec![2.0, 0.0]).unwrap();
        assert!((lp_norm(&two, 4.0).unwrap() - 8f64.powf(0.25)).abs() < 1e-14);
        assert!(lp_norm(&two, 0.5).is_err());
    }

    #[test]
    fn adjoints_match_inner_products() {
        let depth = 5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_tree = |m: usize| {
            let mut c = HaarCoefficients::zeros(depth, m);
            c.mean.iter_mut().chain(c.coeff.iter_mut()).for_each(|v| *v = StandardNormal.sample(&mut rng));
            c
        };
        let dot = |a: &HaarCoefficients, b: &HaarCoefficients| -> f64 {
            a.mean.iter().zip(&b.mean).chain(a.coeff.iter().zip(&b.coeff)).map(|(x, y)| x * y).sum()
        };
        let (u, w) = (rand_tree(1), rand_tree(1));
        for op in [&HilbertOp as &dyn CoefficientOperator, &RieszOp::new(2, 3).unwrap(), &IdentityOp] {
            assert!((dot(&op.apply(&u), &w) - dot(&u, &op.adjoint(&w))).abs() < 1e-12);
        }
        let v = RieszVectorOp { d: 2 };
        let w2 = rand_tree(2);
        assert!((dot(&v.apply(&u), &w2) - dot(&u, &v.adjoint(&w2))).abs() < 1e-12);
    }

    #[test]
    fn norm_estimate_examples() {
        let b = SearchBudget { restarts: 4, iterations: 30 };
        for p in [1.5, 2.0, 4.0] {
            let e = operator_norm_estimate(&IdentityOp, 1, p, 4, b, 1).unwrap();
            assert!((e.value() - 1.0).abs() < 1e-9);
        }
        let e = operator_norm_estimate(&HilbertOp, 1, 2.0, 4, b, 1).unwrap();
        assert!((e.value() - 1.0).abs() < 1e-6, "{e:?}");
        let e = operator_norm_estimate(&RieszOp::new(1, 2).unwrap(), 1, 2.0, 4, b, 1).unwrap();
        assert!((e.value() - 1.0).abs() < 1e-6, "{e:?}");
    }

    #[test]
    fn norm_estimate_monotone_in_depth() {
        let b = SearchBudget { restarts: 3, iterations: 20 };
        let e = operator_norm_estimate(&RieszOp::new(1, 2).unwrap(), 1, 4.0, 7, b, 9).unwrap();
        assert!(e.per_depth.windows(2).all(|w| w[1] >= w[0]), "{e:?}");
        assert!(e.value() > 1.0);
    }
}
