//! Harmonic extensions to the upper half-space and spectral Riesz transforms.
//!
//! Points of the closed half-space are written `(x0, x1, ..., xd)` with `x0 >= 0` the
//! height. Analytic families (plane waves, Gaussian bumps, affine functions) evaluate
//! their extensions in closed form or by quadrature; sampled boundary data live on a
//! periodic grid and are extended and transformed by FFT.

use crate::error::{Error, Result};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

/// A harmonic function on the upper half-space with its gradient `(d0, d1, ..., dd)`.
pub trait HarmonicSource: Send + Sync {
    /// Boundary dimension `d`.
    fn boundary_dim(&self) -> u32;

    fn value(&self, p: &[f64]) -> Result<f64>;

    fn gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<()>;

    fn value_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.gradient(p, grad)?;
        self.value(p)
    }
}

/// `grad u` at `point`.
pub fn gradient_field(source: &dyn HarmonicSource, point: &[f64]) -> Result<Vec<f64>> {
    check_point(source.boundary_dim(), point)?;
    let mut g = vec![0.0; point.len()];
    source.gradient(point, &mut g)?;
    Ok(g)
}

fn check_point(d: u32, p: &[f64]) -> Result<()> {
    if p.len() != d as usize + 1 {
        return Err(Error::LengthMismatch(format!("point has {} coordinates, expected {}", p.len(), d + 1)));
    }
    Ok(())
}

/// `a cos(<xi, x> + phi)`, extended as `a exp(-x0 |xi|) cos(<xi, x> + phi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneWave {
    pub xi: Vec<f64>,
    pub phase: f64,
    pub amplitude: f64,
}

impl PlaneWave {
    pub fn new(xi: Vec<f64>, phase: f64, amplitude: f64) -> Result<Self> {
        if xi.is_empty() || xi.iter().all(|&v| v == 0.0) {
            return Err(Error::Domain("plane wave frequency must be nonzero".into()));
        }
        Ok(Self { xi, phase, amplitude })
    }

    pub fn modulus(&self) -> f64 {
        self.xi.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn boundary(&self, x: &[f64]) -> f64 {
        self.amplitude * (dot(&self.xi, x) + self.phase).cos()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl HarmonicSource for PlaneWave {
    fn boundary_dim(&self) -> u32 {
        self.xi.len() as u32
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        check_point(self.boundary_dim(), p)?;
        Ok((-p[0] * self.modulus()).exp() * self.boundary(&p[1..]))
    }

    fn gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<()> {
        self.value_gradient(p, grad).map(|_| ())
    }

    fn value_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_point(self.boundary_dim(), p)?;
        let r = self.modulus();
        let damp = self.amplitude * (-p[0] * r).exp();
        let arg = dot(&self.xi, &p[1..]) + self.phase;
        let (s, c) = arg.sin_cos();
        grad[0] = -r * damp * c;
        for (g, xi) in grad[1..].iter_mut().zip(&self.xi) {
            *g = -xi * damp * s;
        }
        Ok(damp * c)
    }
}

/// `c + <coeffs, (x0, x1, ..., xd)>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineHarmonic {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl HarmonicSource for AffineHarmonic {
    fn boundary_dim(&self) -> u32 {
        self.coeffs.len() as u32 - 1
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        check_point(self.boundary_dim(), p)?;
        Ok(self.constant + dot(&self.coeffs, p))
    }

    fn gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<()> {
        check_point(self.boundary_dim(), p)?;
        grad.copy_from_slice(&self.coeffs);
        Ok(())
    }
}

/// A finite sum of harmonic sources over the same boundary dimension.
#[derive(Clone)]
pub struct Superposition {
    pub parts: Vec<Arc<dyn HarmonicSource>>,
}

impl HarmonicSource for Superposition {
    fn boundary_dim(&self) -> u32 {
        self.parts.first().map_or(0, |p| p.boundary_dim())
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        self.parts.iter().map(|s| s.value(p)).sum()
    }

    fn gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<()> {
        self.value_gradient(p, grad).map(|_| ())
    }

    fn value_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64> {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut tmp = vec![0.0; grad.len()];
        let mut v = 0.0;
        for s in &self.parts {
            v += s.value_gradient(p, &mut tmp)?;
            for (g, t) in grad.iter_mut().zip(&tmp) {
                *g += t;
            }
        }
        Ok(v)
    }
}

/// `A exp(-|x - a|^2 / (2 sigma^2))` with its Poisson extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianBump {
    pub center: Vec<f64>,
    pub width: f64,
    pub amplitude: f64,
}

/// Quadrature nodes in `t = ln s` for the subordination integral.
const SUB_STEP: f64 = 0.1;
const SUB_HI: f64 = 2.0;

impl GaussianBump {
    pub fn new(center: Vec<f64>, width: f64, amplitude: f64) -> Result<Self> {
        if center.is_empty() || center.len() > 3 || !(width > 0.0) {
            return Err(Error::Domain("Gaussian bump needs 1 <= d <= 3 and positive width".into()));
        }
        Ok(Self { center, width, amplitude })
    }

    pub fn d(&self) -> u32 {
        self.center.len() as u32
    }

    pub fn boundary(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b).powi(2)).sum();
        self.amplitude * (-r2 / (2.0 * self.width * self.width)).exp()
    }

    /// `int f`.
    pub fn mass(&self) -> f64 {
        self.amplitude * (2.0 * PI * self.width * self.width).powf(self.d() as f64 / 2.0)
    }

    fn radial_offset(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let diff: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        (diff.iter().map(|v| v * v).sum::<f64>().sqrt(), diff)
    }

    fn assemble(&self, p: &[f64], radial: impl Fn(f64, f64) -> [f64; 3], grad: &mut [f64]) -> Result<f64> {
        check_point(self.d(), p)?;
        if p[0] < 0.0 {
            return Err(Error::OutsideDomain(p[0]));
        }
        let s = self.width;
        let (r, diff) = self.radial_offset(&p[1..]);
        let [u, uy, ur] = radial(p[0] / s, r / s);
        grad[0] = self.amplitude * uy / s;
        for (g, dx) in grad[1..].iter_mut().zip(&diff) {
            *g = if r > 0.0 { self.amplitude * ur / s * dx / r } else { 0.0 };
        }
        Ok(self.amplitude * u)
    }
}

/// `(U, dU/dy, dU/dr)` for the unit bump in dimension `d` at scaled height `y` and radius `r`,
/// from `U = (2/sqrt(pi)) int_0^inf exp(-s^2) G(1 + y^2/(2 s^2), r) ds` with
/// `G(v, r) = v^{-d/2} exp(-r^2 / (2v))`.
pub fn unit_gaussian_extension(d: u32, y: f64, r: f64) -> [f64; 3] {
    let lo = (y.max(1e-300).ln().min(0.0) - 40.0 / (d as f64 + 1.0)).max(-40.0);
    let n = ((SUB_HI - lo) / SUB_STEP).ceil() as usize;
    let mut acc = [0.0; 3];
    for k in 0..=n {
        let t = SUB_HI - k as f64 * SUB_STEP;
        let s = t.exp();
        let w = s * (-s * s).exp();
        if w == 0.0 {
            continue;
        }
        let dvdy = y / (s * s);
        let v = 1.0 + 0.5 * y * dvdy;
        let g = v_pow(d, v) * (-r * r / (2.0 * v)).exp();
        acc[0] += w * g;
        acc[1] += w * g * (-(d as f64) / (2.0 * v) + r * r / (2.0 * v * v)) * dvdy;
        acc[2] += w * g * (-r / v);
    }
    let c = 2.0 / PI.sqrt() * SUB_STEP;
    [acc[0] * c, acc[1] * c, acc[2] * c]
}

#[inline]
fn v_pow(d: u32, v: f64) -> f64 {
    match d {
        1 => 1.0 / v.sqrt(),
        2 => 1.0 / v,
        _ => 1.0 / (v * v.sqrt()),
    }
}

impl HarmonicSource for GaussianBump {
    fn boundary_dim(&self) -> u32 {
        self.d()
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; p.len()];
        self.value_gradient(p, &mut g)
    }

    fn gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<()> {
        self.value_gradient(p, grad).map(|_| ())
    }

    fn value_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = self.d();
        self.assemble(p, |y, r| unit_gaussian_extension(d, y, r), grad)
    }
}

const TABLE_RANGE: f64 = 16.0;
const TABLE_STEP: f64 = 0.02;

/// `(U, U_y, U_r)` of the unit bump on a square `(y, r)` grid.
pub struct GaussianTable {
    d: u32,
    n: usize,
    data: Vec<[f64; 3]>,
}

impl GaussianTable {
    fn build(d: u32) -> Self {
        let n = (TABLE_RANGE / TABLE_STEP).round() as usize + 1;
        let mut data = Vec::with_capacity(n * n);
        let rs: Vec<f64> = (0..n).map(|b| b as f64 * TABLE_STEP).collect();
        for a in 0..n {
            let y = a as f64 * TABLE_STEP;
            let lo = (y.max(1e-300).ln().min(0.0) - 40.0 / (d as f64 + 1.0)).max(-40.0);
            let m = ((SUB_HI - lo) / SUB_STEP).ceil() as usize;
            let nodes: Vec<(f64, f64, f64, f64)> = (0..=m)
                .filter_map(|k| {
                    let s = (SUB_HI - k as f64 * SUB_STEP).exp();
                    let w = s * (-s * s).exp();
                    (w > 0.0).then(|| {
                        let dvdy = y / (s * s);
                        let v = 1.0 + 0.5 * y * dvdy;
                        (w * v_pow(d, v), v, dvdy, 1.0 / (2.0 * v))
                    })
                })
                .collect();
            for &r in &rs {
                let mut acc = [0.0; 3];
                for &(wg, v, dvdy, half_inv) in &nodes {
                    let g = wg * (-r * r * half_inv).exp();
                    acc[0] += g;
                    acc[1] += g * (-(d as f64) * half_inv + r * r * half_inv / v) * dvdy;
                    acc[2] += g * (-r / v);
                }
                let c = 2.0 / PI.sqrt() * SUB_STEP;
                data.push([acc[0] * c, acc[1] * c, acc[2] * c]);
            }
        }
        Self { d, n, data }
    }

    /// The shared table for dimension `d`.
    pub fn get(d: u32) -> &'static GaussianTable {
        static TABLES: [OnceLock<GaussianTable>; 3] = [OnceLock::new(), OnceLock::new(), OnceLock::new()];
        TABLES[d as usize - 1].get_or_init(|| Self::build(d))
    }

    /// Bilinear interpolation; exact quadrature beyond the table.
    pub fn lookup(&self, y: f64, r: f64) -> [f64; 3] {
        let fy = y / TABLE_STEP;
        let fr = r / TABLE_STEP;
        let a = fy.floor() as usize;
        let b = fr.floor() as usize;
        if a + 1 >= self.n || b + 1 >= self.n {
            return unit_gaussian_extension(self.d, y, r);
        }
        let (ty, tr) = (fy - a as f64, fr - b as f64);
        let at = |i: usize, j: usize| &self.data[i * self.n + j];
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (1.0 - ty) * ((1.0 - tr) * at(a, b)[c] + tr * at(a, b + 1)[c])
                + ty * ((1.0 - tr) * at(a + 1, b)[c] + tr * at(a + 1, b + 1)[c]);
        }
        out
    }
}

/// A Gaussian bump evaluated through the shared interpolation table.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedGaussian {
    pub bump: GaussianBump,
}

impl TabulatedGaussian {
    pub fn new(bump: GaussianBump) -> Self {
        GaussianTable::get(bump.d());
        Self { bump }
    }
}

impl HarmonicSource for TabulatedGaussian {
    fn boundary_dim(&self) -> u32 {
        self.bump.d()
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; p.len()];
        self.value_gradient(p, &mut g)
    }

    fn gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<()> {
        self.value_gradient(p, grad).map(|_| ())
    }

    fn value_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64> {
        let t = GaussianTable::get(self.bump.d());
        self.bump.assemble(p, |y, r| t.lookup(y, r), grad)
    }
}

/// Poisson kernel of the half-space, the exit density of Brownian motion from `(y, 0)`.
pub fn harmonic_measure_density(y: f64, x: &[f64]) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Domain("start height must be positive".into()));
    }
    let d = x.len();
    let r2: f64 = x.iter().map(|v| v * v).sum();
    let c = gamma_half(d as u32 + 1) / PI.powf((d as f64 + 1.0) / 2.0);
    Ok(c * y / (y * y + r2).powf((d as f64 + 1.0) / 2.0))
}

/// `Gamma(n / 2)`.
pub fn gamma_half(n: u32) -> f64 {
    match n {
        1 => PI.sqrt(),
        2 => 1.0,
        _ => (n as f64 / 2.0 - 1.0) * gamma_half(n - 2),
    }
}

/// Periodic grid over `[-L, L)^d` with `m` points per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: u32,
    pub half_width: f64,
    pub points: usize,
}

impl GridSpec {
    pub fn new(d: u32, half_width: f64, points: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::Domain(format!("grid dimension must be 1, 2 or 3, got {d}")));
        }
        if !points.is_power_of_two() || points < 2 {
            return Err(Error::Domain(format!("points per axis must be a power of two, got {points}")));
        }
        if !(half_width > 0.0) {
            return Err(Error::Domain("box half-width must be positive".into()));
        }
        Ok(Self { d, half_width, points })
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.d)
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    pub fn cell(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    pub fn coord(&self, k: usize) -> f64 {
        -self.half_width + self.spacing() * k as f64
    }

    /// Grid point of flat index `idx`, last axis fastest.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.d as usize];
        let mut rest = idx;
        for a in (0..self.d as usize).rev() {
            out[a] = self.coord(rest % self.points);
            rest /= self.points;
        }
        out
    }

    /// Angular frequency of FFT index `k`.
    pub fn frequency(&self, k: usize) -> f64 {
        let m = self.points as i64;
        let s = if (k as i64) < m / 2 { k as i64 } else { k as i64 - m };
        PI / self.half_width * s as f64
    }

    pub fn is_nyquist(&self, k: usize) -> bool {
        k == self.points / 2
    }

    fn freq_index(&self, idx: usize) -> [usize; 3] {
        let mut out = [0; 3];
        let mut rest = idx;
        for a in (0..self.d as usize).rev() {
            out[a] = rest % self.points;
            rest /= self.points;
        }
        out
    }
}

fn fft_nd(spec: &GridSpec, data: &mut [Complex64], inverse: bool) {
    let m = spec.points;
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(m) } else { planner.plan_fft_forward(m) };
    let d = spec.d as usize;
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for axis in 0..d {
        let stride = m.pow((d - 1 - axis) as u32);
        let block = stride * m;
        for base in (0..data.len()).step_by(block) {
            for off in 0..stride {
                for (k, l) in line.iter_mut().enumerate() {
                    *l = data[base + off + k * stride];
                }
                fft.process(&mut line);
                for (k, l) in line.iter().enumerate() {
                    data[base + off + k * stride] = *l;
                }
            }
        }
    }
}

/// Real samples of a periodic function on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub spec: GridSpec,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::LengthMismatch(format!("{} samples for a grid of {}", values.len(), spec.len())));
        }
        Ok(Self { spec, values })
    }

    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..spec.len()).map(|k| f(&spec.point(k))).collect();
        Self { spec, values }
    }

    /// Unnormalized forward DFT.
    pub fn spectrum(&self) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&self.spec, &mut c, false);
        c
    }

    pub fn from_spectrum(spec: GridSpec, mut c: Vec<Complex64>) -> Self {
        fft_nd(&spec, &mut c, true);
        let n = spec.len() as f64;
        Self {
            spec,
            values: c.iter().map(|z| z.re / n).collect(),
        }
    }

    /// Multiplies the spectrum by `mult(xi, is_nyquist_per_axis)`.
    pub fn apply_multiplier(&self, mult: impl Fn(&[f64], &[bool]) -> Complex64) -> Self {
        let mut c = self.spectrum();
        apply_in_place(&self.spec, &mut c, mult);
        Self::from_spectrum(self.spec, c)
    }

    /// Poisson extension `exp(-x0 |xi|)` to each height.
    pub fn extend_harmonic(&self, heights: &[f64]) -> Result<Vec<GridFunction>> {
        if let Some(&h) = heights.iter().find(|&&h| !(h >= 0.0)) {
            return Err(Error::OutsideDomain(h));
        }
        let c = self.spectrum();
        Ok(heights
            .iter()
            .map(|&h| {
                let mut e = c.clone();
                apply_in_place(&self.spec, &mut e, |xi, _| Complex64::new((-h * norm(xi)).exp(), 0.0));
                Self::from_spectrum(self.spec, e)
            })
            .collect())
    }

    /// Fourier multiplier `-i xi_j / |xi|`, zero at the mean mode.
    pub fn riesz_transform(&self, j: u32) -> Result<GridFunction> {
        if j == 0 || j > self.spec.d {
            return Err(Error::Domain(format!("coordinate {j} outside 1..={}", self.spec.d)));
        }
        let a = j as usize - 1;
        Ok(self.apply_multiplier(|xi, nyq| {
            let r = norm(xi);
            if r == 0.0 || nyq[a] {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(0.0, -xi[a] / r)
            }
        }))
    }

    /// `(d0 u, d1 u, ..., dd u)` of the extension at height `h`, as grid functions.
    pub fn extension_gradient(&self, h: f64) -> Result<Vec<GridFunction>> {
        if !(h >= 0.0) {
            return Err(Error::OutsideDomain(h));
        }
        let c = self.spectrum();
        let mut out = Vec::with_capacity(self.spec.d as usize + 1);
        for comp in 0..=self.spec.d as usize {
            let mut e = c.clone();
            apply_in_place(&self.spec, &mut e, |xi, nyq| {
                let r = norm(xi);
                let damp = (-h * r).exp();
                if comp == 0 {
                    Complex64::new(-r * damp, 0.0)
                } else if nyq[comp - 1] {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, xi[comp - 1] * damp)
                }
            });
            out.push(Self::from_spectrum(self.spec, e));
        }
        Ok(out)
    }

    /// `sum f g` times the cell volume.
    pub fn inner(&self, other: &GridFunction) -> Result<f64> {
        if self.spec != other.spec {
            return Err(Error::LengthMismatch("grid functions on different grids".into()));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.spec.cell())
    }

    pub fn lp_norm(&self, p: f64) -> f64 {
        (self.values.iter().map(|v| v.abs().powf(p)).sum::<f64>() * self.spec.cell()).powf(1.0 / p)
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.spec != other.spec {
            return Err(Error::LengthMismatch("grid functions on different grids".into()));
        }
        Ok(Self {
            spec: self.spec,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }

    /// Trigonometric interpolant of the extension, usable off the grid.
    pub fn field(&self) -> SpectralField {
        let n = self.spec.len() as f64;
        let c = self.spectrum();
        let modes = (0..c.len())
            .filter(|&k| c[k].norm() > 0.0)
            .map(|k| {
                let xi: Vec<f64> =
                    self.spec.freq_index(k)[..self.spec.d as usize].iter().map(|&q| self.spec.frequency(q)).collect();
                let phase = -dot(&xi, &vec![-self.spec.half_width; xi.len()]);
                (xi, c[k] / n * Complex64::from_polar(1.0, phase))
            })
            .collect();
        SpectralField { d: self.spec.d, modes }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn apply_in_place(spec: &GridSpec, c: &mut [Complex64], mult: impl Fn(&[f64], &[bool]) -> Complex64) {
    let mut xi = vec![0.0; spec.d as usize];
    let mut nyq = vec![false; spec.d as usize];
    for (k, z) in c.iter_mut().enumerate() {
        for (a, &q) in spec.freq_index(k)[..spec.d as usize].iter().enumerate() {
            xi[a] = spec.frequency(q);
            nyq[a] = spec.is_nyquist(q);
        }
        *z *= mult(&xi, &nyq);
    }
}

/// `Re sum_k c_k exp(-x0 |xi_k|) exp(i <xi_k, x>)`, the extension of a grid function.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub d: u32,
    pub modes: Vec<(Vec<f64>, Complex64)>,
}

impl HarmonicSource for SpectralField {
    fn boundary_dim(&self) -> u32 {
        self.d
    }

    fn value(&self, p: &[f64]) -> Result<f64> {
        let mut g = vec![0.0; p.len()];
        self.value_gradient(p, &mut g)
    }

    fn gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<()> {
        self.value_gradient(p, grad).map(|_| ())
    }

    fn value_gradient(&self, p: &[f64], grad: &mut [f64]) -> Result<f64> {
        check_point(self.d, p)?;
        if p[0] < 0.0 {
            return Err(Error::OutsideDomain(p[0]));
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut v = 0.0;
        for (xi, c) in &self.modes {
            let r = norm(xi);
            let z = c * Complex64::from_polar((-p[0] * r).exp(), dot(xi, &p[1..]));
            v += z.re;
            grad[0] -= r * z.re;
            for (g, x) in grad[1..].iter_mut().zip(xi) {
                *g -= x * z.im;
            }
        }
        Ok(v)
    }
}

/// Boundary data accepted by the deterministic pairing.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryData {
    Plane(PlaneWave),
    Gaussian(GaussianBump),
    Grid(GridFunction),
    Sum(Vec<BoundaryData>),
}

impl BoundaryData {
    pub fn is_decaying(&self) -> bool {
        match self {
            Self::Plane(_) => false,
            Self::Sum(v) => v.iter().all(|b| b.is_decaying()),
            _ => true,
        }
    }

    pub fn sample(&self, spec: &GridSpec) -> Result<GridFunction> {
        match self {
            Self::Plane(w) => Ok(GridFunction::from_fn(*spec, |x| w.boundary(x))),
            Self::Gaussian(g) => {
                if g.d() != spec.d {
                    return Err(Error::LengthMismatch("bump and grid dimensions differ".into()));
                }
                Ok(GridFunction::from_fn(*spec, |x| g.boundary(x)))
            }
            Self::Grid(f) => {
                if f.spec != *spec {
                    return Err(Error::LengthMismatch("grid function on a different grid".into()));
                }
                Ok(f.clone())
            }
            Self::Sum(parts) => {
                let mut acc = GridFunction::from_fn(*spec, |_| 0.0);
                for p in parts {
                    acc = acc.add(&p.sample(spec)?)?;
                }
                Ok(acc)
            }
        }
    }
}

/// Heights per unit of `ln x0` in the pairing quadrature.
const PAIRING_LOG_STEP: f64 = 0.1;
const PAIRING_LOW: f64 = 1e-7;

/// `int_0^inf int (-d_i u_f d0 u_g + d0 u_f d_i u_g) 2 x0 dx dx0` over the periodic box.
pub fn gundy_varopoulos_pairing(f: &BoundaryData, g: &BoundaryData, i: u32, spec: &GridSpec) -> Result<f64> {
    if !f.is_decaying() || !g.is_decaying() {
        return Err(Error::Invalid("pairing needs decaying boundary data".into()));
    }
    if i == 0 || i > spec.d {
        return Err(Error::Domain(format!("coordinate {i} outside 1..={}", spec.d)));
    }
    let fs = f.sample(spec)?.spectrum();
    let gs = g.sample(spec)?.spectrum();
    let modes = pairing_modes(spec, i);
    let xi_min = PI / spec.half_width;
    let top = 20.0 / xi_min;
    let steps = ((top / PAIRING_LOW).ln() / PAIRING_LOG_STEP).ceil() as usize;
    let mut total = 0.0;
    let mut bottom = 0.0;
    for k in 0..=steps {
        let h = PAIRING_LOW * (k as f64 * PAIRING_LOG_STEP).exp();
        let density = pairing_density(spec, &modes, &fs, &gs, h);
        let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
        total += w * PAIRING_LOG_STEP * 2.0 * h * h * density;
        if k == 0 {
            bottom = density;
        }
    }
    Ok(total + PAIRING_LOW * PAIRING_LOW * bottom)
}

/// `(|xi|, xi_i)` per mode, with `xi_i` zeroed on the Nyquist plane of axis `i`.
fn pairing_modes(spec: &GridSpec, i: u32) -> Vec<(f64, f64)> {
    let a = i as usize - 1;
    let d = spec.d as usize;
    (0..spec.len())
        .map(|k| {
            let q = spec.freq_index(k);
            let r = q[..d].iter().map(|&qq| spec.frequency(qq).powi(2)).sum::<f64>().sqrt();
            let di = if spec.is_nyquist(q[a]) { 0.0 } else { spec.frequency(q[a]) };
            (r, di)
        })
        .collect()
}

/// `int (-d_i u_f d0 u_g + d0 u_f d_i u_g)(h, x) dx` from physical-space products.
fn pairing_density(spec: &GridSpec, modes: &[(f64, f64)], fs: &[Complex64], gs: &[Complex64], h: f64) -> f64 {
    let damps: Vec<f64> = modes.iter().map(|&(r, _)| (-h * r).exp()).collect();
    let pack = |s: &[Complex64]| {
        // d_i u in the real part and d0 u in the imaginary part of one inverse transform.
        let mut c: Vec<Complex64> = s
            .iter()
            .zip(modes)
            .zip(&damps)
            .map(|((z, &(r, di)), &damp)| z * Complex64::new(0.0, (di - r) * damp))
            .collect();
        fft_nd(spec, &mut c, true);
        c
    };
    let pf = pack(fs);
    let pg = pack(gs);
    let s: f64 = pf.iter().zip(&pg).map(|(u, v)| -u.re * v.im + u.im * v.re).sum();
    s * spec.cell() / (spec.len() as f64).powi(2)
}
