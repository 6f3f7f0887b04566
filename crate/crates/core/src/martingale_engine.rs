//! Transform matrices `A_i`, discrete martingales driven by the walks, their
//! transforms, and the exact dyadic identities linking them to `S_i`.
//!
//! `A_i` acts on gradients `(d0, d1, ..., dd)` by `(A_i v)_0 = -v_i`, `(A_i v)_i = v_0`
//! and zero in every other coordinate. Its transpose therefore sends a walk increment
//! `dB` to `(dB^i, 0, ..., -dB^0, ..., 0)` with `-dB^0` in position `i`.

use crate::error::{Error, Result};
use crate::haar_ops::{decompose, dyadic_riesz, reconstruct, DyadicFunctionSamples};
use crate::harmonic_oracle::{HarmonicSource, PlaneWave};
use crate::stochastics::{BrownianPath, WalkConfig, WalkPath, ENUMERATION_CAP};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformMatrix {
    pub i: u32,
    pub d: u32,
    /// Row-major `(d+1) x (d+1)` entries.
    pub entries: Vec<f64>,
}

impl TransformMatrix {
    pub fn new(i: u32, d: u32) -> Result<Self> {
        if d == 0 || i == 0 || i > d {
            return Err(Error::Domain(format!("need 1 <= i <= d, got i = {i}, d = {d}")));
        }
        let w = d as usize + 1;
        let mut entries = vec![0.0; w * w];
        entries[i as usize] = -1.0;
        entries[i as usize * w] = 1.0;
        Ok(Self { i, d, entries })
    }

    pub fn dim(&self) -> usize {
        self.d as usize + 1
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.dim() + c]
    }

    pub fn transpose(&self) -> Vec<f64> {
        let w = self.dim();
        (0..w * w).map(|k| self.entry(k % w, k / w)).collect()
    }

    /// `A v` by dense multiplication.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let w = self.dim();
        (0..w).map(|r| (0..w).map(|c| self.entry(r, c) * v[c]).sum()).collect()
    }

    /// `A^T v` by dense multiplication.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let w = self.dim();
        (0..w).map(|r| (0..w).map(|c| self.entry(c, r) * v[c]).sum()).collect()
    }

    /// `<A grad, db>`, evaluated both as `A grad . db` and `grad . A^T db`.
    pub fn paired(&self, grad: &[f64], db: &[f64]) -> Result<f64> {
        let a: f64 = self.apply(grad).iter().zip(db).map(|(x, y)| x * y).sum();
        let b: f64 = grad.iter().zip(self.apply_transpose(db)).map(|(x, y)| x * y).sum();
        let scale = grad.iter().chain(db).fold(0.0f64, |m, v| m.max(v.abs()));
        if (a - b).abs() > 1e-14 * scale * scale.max(1.0) {
            return Err(Error::Invalid(format!("transpose routes disagree: {a} vs {b}")));
        }
        Ok(a)
    }

    /// `<A grad_f, grad_g>` using the sparsity of `A`.
    #[inline]
    pub fn pairing(&self, grad_f: &[f64], grad_g: &[f64]) -> f64 {
        let i = self.i as usize;
        -grad_f[i] * grad_g[0] + grad_f[0] * grad_g[i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MartingaleKind {
    Plain,
    Transformed { i: u32 },
}

/// Martingale values at indices `0, stride, 2 stride, ...` of the fine clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleSequence {
    pub kind: MartingaleKind,
    pub stride: u64,
    pub values: Vec<f64>,
}

impl MartingaleSequence {
    pub fn last(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// Integration points and increments: fine steps, or coarse steps when the path's
/// configuration asks for the coarse-integral variant.
fn integration_steps(path: &WalkPath) -> Result<(u64, Vec<(Vec<f64>, Vec<f64>)>)> {
    let stride = if path.config.coarse_integral { path.config.fine_per_coarse() } else { 1 };
    if path.k_max % stride != 0 {
        return Err(Error::LengthMismatch("path length is not a whole number of coarse steps".into()));
    }
    let steps = (1..=path.k_max / stride)
        .map(|m| {
            let prev = path.position((m - 1) * stride);
            let next = path.position(m * stride);
            let db = next.iter().zip(&prev).map(|(a, b)| a - b).collect();
            (prev, db)
        })
        .collect();
    Ok((stride, steps))
}

/// `M_k = f(B_0) + sum_{l <= k} grad f(B_{l-1}) . dB_l`.
pub fn martingale_f(path: &WalkPath, f: &dyn HarmonicSource) -> Result<MartingaleSequence> {
    let (stride, steps) = integration_steps(path)?;
    let mut grad = vec![0.0; path.dim()];
    let mut m = f.value(&path.position(0))?;
    let mut values = vec![m];
    for (p, db) in &steps {
        if db.iter().any(|&v| v != 0.0) {
            f.gradient(p, &mut grad)?;
            m += grad.iter().zip(db).map(|(a, b)| a * b).sum::<f64>();
        }
        values.push(m);
    }
    Ok(MartingaleSequence {
        kind: MartingaleKind::Plain,
        stride,
        values,
    })
}

/// `M_k = sum_{l <= k} A_i grad f(B_{l-1}) . dB_l`, both transpose routes checked.
pub fn martingale_transform(path: &WalkPath, f: &dyn HarmonicSource, i: u32) -> Result<MartingaleSequence> {
    let a = TransformMatrix::new(i, path.config.d)?;
    let (stride, steps) = integration_steps(path)?;
    let mut grad = vec![0.0; path.dim()];
    let mut m = 0.0;
    let mut values = vec![m];
    for (p, db) in &steps {
        if db.iter().any(|&v| v != 0.0) {
            f.gradient(p, &mut grad)?;
            m += a.paired(&grad, db)?;
        }
        values.push(m);
    }
    Ok(MartingaleSequence {
        kind: MartingaleKind::Transformed { i },
        stride,
        values,
    })
}

/// `eps_g` of leaf `m` at depth `depth` (digit `g + 1`, most significant first).
#[inline]
fn leaf_toss(m: u64, depth: u32, g: u32) -> i64 {
    if (m >> (depth - 1 - g)) & 1 == 1 {
        1
    } else {
        -1
    }
}

/// Unit increment of fine step `k` at leaf `m`.
fn leaf_increment(d: u32, i: u32, k: u32, m: u64, depth: u32, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for j in 1..=d {
        let g = (k - 1) * d + j;
        let e = leaf_toss(m, depth, g) as f64;
        if leaf_toss(m, depth, g - 1) < 0 {
            out[j as usize] = e;
        } else if j == i {
            out[0] = e;
        }
    }
}

/// `max_x |S_i dB_k(x) - A_i^T dB_k(x)|` over all leaves of generation `k d + 1`.
pub fn verify_cauchy_riemann(cfg: &WalkConfig, k: u32, cap: u32) -> Result<f64> {
    cfg.validate()?;
    let (d, i) = (cfg.d, cfg.i);
    let gens = k * d;
    if k == 0 {
        return Err(Error::Domain("layer index starts at 1".into()));
    }
    if gens > cap.min(ENUMERATION_CAP) {
        return Err(Error::CapExceeded { needed: gens, cap });
    }
    let depth = gens + 1;
    let w = d as usize + 1;
    let n = 1u64 << depth;
    let a = TransformMatrix::new(i, d)?;
    let step = cfg.step();
    let mut values = vec![0.0; n as usize * w];
    let mut inc = vec![0.0; w];
    for m in 0..n {
        leaf_increment(d, i, k, m, depth, &mut inc);
        for (v, u) in values[m as usize * w..(m as usize + 1) * w].iter_mut().zip(&inc) {
            *v = step * u;
        }
    }
    let samples = DyadicFunctionSamples::new(depth, w, values)?;
    let transformed = reconstruct(&dyadic_riesz(i, d, &decompose(&samples))?);
    let mut err = 0.0f64;
    for m in 0..n as usize {
        let db = samples.value(m);
        let want = a.apply_transpose(db);
        for (x, y) in transformed.value(m).iter().zip(&want) {
            err = err.max((x - y).abs());
        }
    }
    Ok(err)
}

/// `max_x |S_i M_k^f(x) - M_k^i(x)|` over all leaves of generation `k d + 1`.
pub fn verify_transform_identity(cfg: &WalkConfig, k: u32, f: &dyn HarmonicSource, cap: u32) -> Result<f64> {
    cfg.validate()?;
    let (d, i) = (cfg.d, cfg.i);
    let gens = k * d;
    if gens > cap.min(ENUMERATION_CAP) {
        return Err(Error::CapExceeded { needed: gens, cap });
    }
    let depth = gens + 1;
    let n = 1u64 << depth;
    let mut plain = Vec::with_capacity(n as usize);
    let mut transformed = Vec::with_capacity(n as usize);
    for m in 0..n {
        let mut tosses = crate::stochastics::TossStream::from_leaf(m, depth);
        let path = crate::stochastics::simulate_fine_walk(cfg, &mut tosses, k as u64)?;
        plain.push(martingale_f(&path, f)?.last());
        transformed.push(martingale_transform(&path, f, i)?.last());
    }
    let s = reconstruct(&dyadic_riesz(i, d, &decompose(&DyadicFunctionSamples::scalar(depth, plain)?))?);
    Ok(s.values.iter().zip(&transformed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

/// Left-point sum of `<A_i grad f(W_t), grad g(W_t)> dt` along a sampled Brownian path.
pub fn continuous_pairing_accumulator(
    brownian: &BrownianPath,
    f: &dyn HarmonicSource,
    g: &dyn HarmonicSource,
    i: u32,
) -> Result<f64> {
    let w = brownian.start.len();
    let a = TransformMatrix::new(i, w as u32 - 1)?;
    let mut gf = vec![0.0; w];
    let mut gg = vec![0.0; w];
    let mut acc = 0.0;
    for s in 1..brownian.times.len() {
        let dt = brownian.times[s] - brownian.times[s - 1];
        let p = &brownian.positions[(s - 1) * w..s * w];
        f.gradient(p, &mut gf)?;
        g.gradient(p, &mut gg)?;
        acc += a.pairing(&gf, &gg) * dt;
    }
    Ok(acc)
}

/// Per-chunk data of a plane-wave martingale along fine steps of fixed unit size.
///
/// For `E = exp(-r x0 + i <xi, x>)` and a chunk whose unit increments produce exponents
/// `w_l`, `product = exp(sum w_l)` and `sum = sum_l exp(sum_{m<l} w_m) w_l`, so the plain
/// increment over the chunk is `a Re(e^{i phi} E_start sum)`.
#[derive(Debug, Clone)]
pub struct PlaneWaveChunks {
    pub chunk: u32,
    pub product: Vec<Complex64>,
    pub plain: Vec<Complex64>,
    pub transformed: Vec<Complex64>,
}

impl PlaneWaveChunks {
    /// Tables indexed by the `chunk d + 1` toss bits of a chunk, bit 0 the carried toss.
    pub fn new(wave: &PlaneWave, i: u32, chunk: u32, step: f64) -> Result<Self> {
        let d = wave.xi.len() as u32;
        if i == 0 || i > d {
            return Err(Error::Domain(format!("need 1 <= i <= d, got i = {i}, d = {d}")));
        }
        let bits = chunk * d + 1;
        if bits > 20 {
            return Err(Error::Invalid(format!("chunk of {chunk} steps needs a table of 2^{bits} entries")));
        }
        let r = wave.modulus();
        let xi_i = wave.xi[i as usize - 1];
        let size = 1usize << bits;
        let mut product = Vec::with_capacity(size);
        let mut plain = Vec::with_capacity(size);
        let mut transformed = Vec::with_capacity(size);
        for u in 0..size as u64 {
            let mut acc = Complex64::new(1.0, 0.0);
            let mut s_plain = Complex64::new(0.0, 0.0);
            let mut s_trans = Complex64::new(0.0, 0.0);
            for l in 0..chunk {
                let mut vert = 0.0;
                let mut horiz = vec![0.0; d as usize];
                for j in 0..d {
                    let p = l * d + j;
                    let e = if (u >> (p + 1)) & 1 == 1 { 1.0 } else { -1.0 };
                    if (u >> p) & 1 == 0 {
                        horiz[j as usize] = e;
                    } else if j + 1 == i {
                        vert = e;
                    }
                }
                let w = Complex64::new(-r * vert, wave.xi.iter().zip(&horiz).map(|(a, b)| a * b).sum()) * step;
                let wt = Complex64::new(-r * horiz[i as usize - 1], -xi_i * vert) * step;
                s_plain += acc * w;
                s_trans += acc * wt;
                acc *= w.exp();
            }
            product.push(acc);
            plain.push(s_plain);
            transformed.push(s_trans);
        }
        Ok(Self {
            chunk,
            product,
            plain,
            transformed,
        })
    }
}

/// `exp(-r x0 + i <xi, x>)` at a point.
pub fn plane_wave_exponential(wave: &PlaneWave, p: &[f64]) -> Complex64 {
    let arg: f64 = wave.xi.iter().zip(&p[1..]).map(|(a, b)| a * b).sum();
    Complex64::from_polar((-wave.modulus() * p[0]).exp(), arg)
}

/// `a Re(e^{i phi} z)`.
#[inline]
pub fn plane_wave_real(wave: &PlaneWave, z: Complex64) -> f64 {
    wave.amplitude * (Complex64::from_polar(1.0, wave.phase) * z).re
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonic_oracle::{AffineHarmonic, GaussianBump};
    use crate::stats::path_rng;
    use crate::stochastics::{simulate_fine_walk, TossStream};
    use rand::{Rng, SeedableRng};

    #[test]
    fn matrix_invariants() {
        for d in 1..=3 {
            for i in 1..=d {
                let a = TransformMatrix::new(i, d).unwrap();
                let w = d as usize + 1;
                let e = |k: usize| (0..w).map(|c| if c == k { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
                let neg = |v: Vec<f64>| v.into_iter().map(|x| -x).collect::<Vec<_>>();
                // Row reading: e_0^T A = -e_i^T, e_i^T A = e_0^T.
                assert_eq!(a.apply_transpose(&e(0)), neg(e(i as usize)));
                assert_eq!(a.apply_transpose(&e(i as usize)), e(0));
                assert_eq!(a.apply(&e(0)), e(i as usize));
                assert_eq!(a.apply(&e(i as usize)), neg(e(0)));
                for j in 1..=d as usize {
                    if j != i as usize {
                        assert_eq!(a.apply(&e(j)), vec![0.0; w]);
                    }
                }
                for k in [0, i as usize] {
                    assert_eq!(a.apply(&a.apply(&e(k))), neg(e(k)));
                }
            }
        }
        assert!(TransformMatrix::new(3, 2).is_err());
    }

    #[test]
    fn duality_on_random_pairs() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let a = TransformMatrix::new(2, 3).unwrap();
        for _ in 0..10_000 {
            let g: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let v = a.paired(&g, &b).unwrap();
            assert!((v - a.pairing(&g, &b)).abs() < 1e-15);
        }
    }

    fn walk(d: u32, i: u32, seed: u64, k: u64) -> WalkPath {
        let cfg = WalkConfig::coupled(d, i, 4.0, 4, 1.0).unwrap();
        simulate_fine_walk(&cfg, &mut TossStream::random(path_rng(seed, 0, 0)), k).unwrap()
    }

    #[test]
    fn martingale_examples() {
        let p = walk(2, 1, 3, 64);
        let c = AffineHarmonic {
            constant: 2.5,
            coeffs: vec![0.0; 3],
        };
        assert!(martingale_f(&p, &c).unwrap().values.iter().all(|&v| v == 2.5));
        let x1 = AffineHarmonic {
            constant: 0.0,
            coeffs: vec![0.0, 1.0, 0.0],
        };
        let m = martingale_f(&p, &x1).unwrap();
        for k in 0..=64 {
            assert!((m.values[k] - p.position(k as u64)[1]).abs() < 1e-14);
        }
        let w = PlaneWave::new(vec![1.0, 0.5], 0.2, 1.0).unwrap();
        let m = martingale_f(&p, &w).unwrap();
        let g = crate::harmonic_oracle::gradient_field(&w, &p.position(0)).unwrap();
        let inc: f64 = g.iter().zip(p.increment(1)).map(|(a, b)| a * b).sum();
        assert!((m.values[1] - m.values[0] - inc).abs() < 1e-15);
        assert!((m.values[0] - w.value(&p.position(0)).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn transform_examples() {
        let p = walk(3, 1, 4, 32);
        // grad f = e_2 is orthogonal to span{e_0, e_1}.
        let f = AffineHarmonic {
            constant: 0.0,
            coeffs: vec![0.0, 0.0, 1.0, 0.0],
        };
        assert!(martingale_transform(&p, &f, 1).unwrap().values.iter().all(|&v| v == 0.0));

        let cfg = WalkConfig::coupled(2, 1, 4.0, 4, 1.0).unwrap();
        let mut t = TossStream::fixed(vec![1, 1, -1]).unwrap();
        let p = simulate_fine_walk(&cfg, &mut t, 1).unwrap();
        let w = PlaneWave::new(vec![1.0, 0.5], 0.2, 1.0).unwrap();
        let m = martingale_transform(&p, &w, 1).unwrap();
        let g = crate::harmonic_oracle::gradient_field(&w, &p.position(0)).unwrap();
        assert!((m.values[1] + cfg.step() * g[1]).abs() < 1e-15);
        assert_eq!(m.values[0], 0.0);
    }

    #[test]
    fn martingale_freezes_after_stop() {
        let cfg = WalkConfig::coupled(1, 1, 4.0, 4, 0.3).unwrap();
        let w = PlaneWave::new(vec![2.0], 0.0, 1.0).unwrap();
        let mut seen = false;
        for seed in 0..40 {
            let p = simulate_fine_walk(&cfg, &mut TossStream::random(path_rng(seed, 9, 0)), 256).unwrap();
            if let Some(k) = p.stop_fine_index {
                seen = true;
                let m = martingale_f(&p, &w).unwrap();
                let t = martingale_transform(&p, &w, 1).unwrap();
                assert!(m.values[k as usize..].iter().all(|&v| v == m.values[k as usize]));
                assert!(t.values[k as usize..].iter().all(|&v| v == t.values[k as usize]));
            }
        }
        assert!(seen);
    }

    #[test]
    fn coarse_integral_variant_uses_coarse_increments() {
        let mut cfg = WalkConfig::coupled(2, 1, 4.0, 4, 1.0).unwrap();
        cfg.coarse_integral = true;
        let p = simulate_fine_walk(&cfg, &mut TossStream::random(path_rng(2, 0, 0)), 16).unwrap();
        let x1 = AffineHarmonic {
            constant: 0.0,
            coeffs: vec![0.0, 1.0, 0.0],
        };
        let m = martingale_f(&p, &x1).unwrap();
        assert_eq!(m.stride, 4);
        assert_eq!(m.values.len(), 5);
        assert!((m.last() - p.position(16)[1]).abs() < 1e-14);
    }

    #[test]
    fn cauchy_riemann_small_cases() {
        for (d, i, k) in [(1, 1, 1), (2, 1, 1), (2, 1, 2), (2, 2, 2), (3, 2, 1)] {
            let cfg = WalkConfig::coupled(d, i, 4.0, 4, 1.0).unwrap();
            assert!(verify_cauchy_riemann(&cfg, k, ENUMERATION_CAP).unwrap() < 1e-13);
        }
        let cfg = WalkConfig::coupled(2, 1, 4.0, 4, 1.0).unwrap();
        assert!(verify_cauchy_riemann(&cfg, 12, ENUMERATION_CAP).is_err());
    }

    #[test]
    fn transform_identity_small_cases() {
        let w = PlaneWave::new(vec![1.3, -0.7], 0.4, 1.0).unwrap();
        let cfg = WalkConfig::coupled(2, 2, 4.0, 4, 1.0).unwrap();
        for k in 1..=4 {
            assert!(verify_transform_identity(&cfg, k, &w, ENUMERATION_CAP).unwrap() < 1e-12);
        }
        let cfg1 = cfg.with_slice(1);
        assert!(verify_transform_identity(&cfg1, 1, &w, ENUMERATION_CAP).unwrap() < 1e-12);
        let c = AffineHarmonic {
            constant: 1.0,
            coeffs: vec![0.0; 3],
        };
        assert_eq!(verify_transform_identity(&cfg1, 2, &c, ENUMERATION_CAP).unwrap(), 0.0);
    }

    #[test]
    fn first_slice_identity_breaks_after_first_layer() {
        let w = PlaneWave::new(vec![1.3, -0.7], 0.4, 1.0).unwrap();
        let cfg = WalkConfig::coupled(2, 1, 4.0, 4, 1.0).unwrap();
        assert!(verify_transform_identity(&cfg, 2, &w, ENUMERATION_CAP).unwrap() > 1e-4);
    }

    #[test]
    fn chunk_tables_match_direct_martingales() {
        use crate::stochastics::{path_bits, CoarseCounts, CoarseStepper};
        let w = PlaneWave::new(vec![1.1, -0.6], 0.3, 0.8).unwrap();
        let cfg = WalkConfig::coupled(2, 2, 4.0, 4, 5.0).unwrap();
        let tables = PlaneWaveChunks::new(&w, 2, 2, cfg.step()).unwrap();
        for path in 0..20 {
            let mut t = TossStream::random(path_rng(5, 5, path));
            let p = simulate_fine_walk(&cfg, &mut t, 40).unwrap();
            let mf = martingale_f(&p, &w).unwrap();
            let mt = martingale_transform(&p, &w, 2).unwrap();
            let mut bits = path_bits(5, 5, path);
            let mut st = CoarseStepper::new(2, 4, 2).unwrap();
            st.start(&mut bits);
            let mut counts = CoarseCounts::default();
            let mut e = plane_wave_exponential(&w, &p.position(0));
            let (mut a, mut b) = (mf.values[0], 0.0);
            for n in 1..=10u64 {
                st.step_with(&mut bits, &mut counts, |u, _| {
                    let u = u as usize;
                    a += plane_wave_real(&w, e * tables.plain[u]);
                    b += plane_wave_real(&w, e * tables.transformed[u]);
                    e *= tables.product[u];
                });
                assert!((a - mf.values[4 * n as usize]).abs() < 1e-12);
                assert!((b - mt.values[4 * n as usize]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn continuous_accumulator_examples() {
        let mut rng = path_rng(1, 2, 3);
        let b = crate::stochastics::sample_brownian(&[1.0, 0.0, 0.0], 1.0, 0.01, true, &mut rng).unwrap();
        let f = GaussianBump::new(vec![0.0, 0.0], 1.0, 1.0).unwrap();
        let c = AffineHarmonic {
            constant: 1.0,
            coeffs: vec![0.0; 3],
        };
        assert_eq!(continuous_pairing_accumulator(&b, &f, &c, 1).unwrap(), 0.0);
        let perp = AffineHarmonic {
            constant: 0.0,
            coeffs: vec![0.0, 0.0, 1.0],
        };
        assert_eq!(continuous_pairing_accumulator(&b, &perp, &f, 1).unwrap(), 0.0);
    }
}
