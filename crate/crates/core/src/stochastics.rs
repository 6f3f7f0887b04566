//! Toss-driven walks in the upper half-space `{x0 > 0}` of `R^{d+1}`.
//!
//! Fine step `k` of the walk `B^(i)` reads the tosses of layer `k`, generations
//! `(k-1)d+1 ..= kd`. Generation `g = (k-1)d + j` moves horizontal coordinate `j` by
//! `sqrt(2 delta) eps_g` when `I_g^x` is a left child (`eps_{g-1} = -1`), and moves
//! the vertical coordinate when `I_g^x` is a right child and `j = i`. The coarse walk
//! `X_n = B_{nN}` is stopped at the first `n` with `X_n^0 <= eps`.
//!
//! Coordinates are indexed `0..=d` with `0` the vertical one. Walk positions are kept
//! as integer multiples of the step `sqrt(2 delta)` so sums are exact.

use crate::error::{Error, Result};
use crate::stats::path_rng;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Largest number of toss generations the enumeration oracle will expand.
pub const ENUMERATION_CAP: u32 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WalkMode {
    /// `delta = T / N^5`, `theta = N delta`, `eps = 1 / N`.
    Coupled,
    /// Explicit `delta`, `theta` (a multiple of `delta`) and `eps`.
    Decoupled { delta: f64, theta: f64, eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub d: u32,
    pub i: u32,
    pub horizon: f64,
    pub n: u32,
    pub y: f64,
    pub mode: WalkMode,
    /// Build stochastic integrals from coarse increments instead of fine ones.
    pub coarse_integral: bool,
}

impl WalkConfig {
    pub fn coupled(d: u32, i: u32, horizon: f64, n: u32, y: f64) -> Result<Self> {
        let c = Self {
            d,
            i,
            horizon,
            n,
            y,
            mode: WalkMode::Coupled,
            coarse_integral: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn decoupled(d: u32, i: u32, horizon: f64, y: f64, delta: f64, theta: f64, eps: f64) -> Result<Self> {
        let n = (theta / delta).round();
        let c = Self {
            d,
            i,
            horizon,
            n: n as u32,
            y,
            mode: WalkMode::Decoupled { delta, theta, eps },
            coarse_integral: false,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn with_slice(mut self, i: u32) -> Self {
        self.i = i;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.i == 0 || self.i > self.d {
            return Err(Error::Domain(format!("need 1 <= i <= d, got i = {}, d = {}", self.i, self.d)));
        }
        if !(self.horizon > 0.0) || !(self.y > 0.0) {
            return Err(Error::Domain("horizon and start height must be positive".into()));
        }
        if self.n < 1 {
            return Err(Error::Domain("resolution N must be at least 1".into()));
        }
        if let WalkMode::Decoupled { delta, theta, eps } = self.mode {
            if !(delta > 0.0 && theta > 0.0 && eps > 0.0) {
                return Err(Error::Domain("delta, theta and eps must be positive".into()));
            }
            let r = theta / delta;
            if (r - r.round()).abs() > 1e-9 * r || r.round() < 1.0 {
                return Err(Error::Domain("theta must be a positive multiple of delta".into()));
            }
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        match self.mode {
            WalkMode::Coupled => self.horizon / (self.n as f64).powi(5),
            WalkMode::Decoupled { delta, .. } => delta,
        }
    }

    pub fn theta(&self) -> f64 {
        match self.mode {
            WalkMode::Coupled => self.n as f64 * self.delta(),
            WalkMode::Decoupled { theta, .. } => theta,
        }
    }

    pub fn eps(&self) -> f64 {
        match self.mode {
            WalkMode::Coupled => 1.0 / self.n as f64,
            WalkMode::Decoupled { eps, .. } => eps,
        }
    }

    /// `sqrt(2 delta)`.
    pub fn step(&self) -> f64 {
        (2.0 * self.delta()).sqrt()
    }

    /// Fine steps per coarse step.
    pub fn fine_per_coarse(&self) -> u64 {
        self.n as u64
    }

    pub fn coarse_steps(&self) -> u64 {
        match self.mode {
            WalkMode::Coupled => (self.n as u64).pow(4),
            WalkMode::Decoupled { theta, .. } => (self.horizon / theta).round().max(1.0) as u64,
        }
    }

    pub fn fine_steps(&self) -> u64 {
        self.coarse_steps() * self.fine_per_coarse()
    }

    /// Vertical unit count at or below which the coarse walk stops.
    pub fn stop_units(&self) -> i64 {
        ((self.eps() - self.y) / self.step()).floor() as i64
    }

    pub fn is_stopped(&self, vertical_units: i64) -> bool {
        self.y + self.step() * vertical_units as f64 <= self.eps()
    }
}

/// A source of tosses `eps_0, eps_1, ...`, either a fixed list or a random stream.
pub struct TossStream {
    tosses: Vec<i8>,
    rng: Option<ChaCha8Rng>,
}

impl TossStream {
    pub fn fixed(tosses: Vec<i8>) -> Result<Self> {
        if tosses.iter().any(|&t| t != 1 && t != -1) {
            return Err(Error::Invalid("tosses must be +1 or -1".into()));
        }
        Ok(Self { tosses, rng: None })
    }

    /// Tosses from the bits of leaf `m` of generation `len`, most significant first.
    pub fn from_leaf(m: u64, len: u32) -> Self {
        let tosses = (0..len).map(|g| if (m >> (len - 1 - g)) & 1 == 1 { 1 } else { -1 }).collect();
        Self { tosses, rng: None }
    }

    pub fn random(rng: ChaCha8Rng) -> Self {
        Self {
            tosses: Vec::new(),
            rng: Some(rng),
        }
    }

    /// `eps_g`.
    pub fn toss(&mut self, g: u64) -> Result<i8> {
        while self.tosses.len() <= g as usize {
            match self.rng.as_mut() {
                Some(r) => {
                    let w = r.next_u64();
                    self.tosses.extend((0..64).map(|s| if (w >> s) & 1 == 1 { 1i8 } else { -1 }));
                }
                None => {
                    return Err(Error::Invalid(format!(
                        "toss stream holds {} generations, generation {g} requested",
                        self.tosses.len()
                    )))
                }
            }
        }
        Ok(self.tosses[g as usize])
    }

    /// Tosses consumed or supplied so far.
    pub fn materialized(&self) -> &[i8] {
        &self.tosses
    }
}

/// Unit increment of fine step `k` (1-based) in coordinates `0..=d`, from `eps`.
pub fn fine_increment(d: u32, i: u32, k: u64, tosses: &mut TossStream, out: &mut [i8]) -> Result<()> {
    out.iter_mut().for_each(|v| *v = 0);
    for j in 1..=d {
        let g = (k - 1) * d as u64 + j as u64;
        let e = tosses.toss(g)?;
        if tosses.toss(g - 1)? < 0 {
            out[j as usize] = e;
        } else if j == i {
            out[0] = e;
        }
    }
    Ok(())
}

/// A fine walk with its stopping data. Increments and positions are in units of `step`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    pub config: WalkConfig,
    pub k_max: u64,
    /// `k_max` rows of `d + 1` unit increments.
    pub increments: Vec<i8>,
    /// `k_max + 1` rows of `d + 1` unit displacements from `B_0 = (y, 0, ..., 0)`.
    pub positions: Vec<i64>,
    /// Fine index after which every increment is zero, if the walk stopped.
    pub stop_fine_index: Option<u64>,
    /// `n_eps`.
    pub stop_coarse_index: u64,
}

impl WalkPath {
    pub fn dim(&self) -> usize {
        self.config.d as usize + 1
    }

    pub fn increment(&self, k: u64) -> Vec<f64> {
        let w = self.dim();
        let s = self.config.step();
        self.increments[(k as usize - 1) * w..k as usize * w].iter().map(|&u| s * u as f64).collect()
    }

    pub fn increment_units(&self, k: u64) -> &[i8] {
        let w = self.dim();
        &self.increments[(k as usize - 1) * w..k as usize * w]
    }

    pub fn position_units(&self, k: u64) -> &[i64] {
        let w = self.dim();
        &self.positions[k as usize * w..(k as usize + 1) * w]
    }

    pub fn position(&self, k: u64) -> Vec<f64> {
        units_to_point(self.config.y, self.config.step(), self.position_units(k))
    }
}

pub fn units_to_point(y: f64, step: f64, units: &[i64]) -> Vec<f64> {
    let mut p: Vec<f64> = units.iter().map(|&u| step * u as f64).collect();
    p[0] += y;
    p
}

/// Simulates `k_max` fine steps with stopping checked after every `N` steps.
pub fn simulate_fine_walk(cfg: &WalkConfig, tosses: &mut TossStream, k_max: u64) -> Result<WalkPath> {
    cfg.validate()?;
    let w = cfg.d as usize + 1;
    let per = cfg.fine_per_coarse();
    let mut increments = vec![0i8; k_max as usize * w];
    let mut positions = vec![0i64; (k_max as usize + 1) * w];
    let mut stopped = cfg.is_stopped(0);
    let mut stop_fine = stopped.then_some(0);
    let mut inc = vec![0i8; w];
    for k in 1..=k_max {
        fine_increment(cfg.d, cfg.i, k, tosses, &mut inc)?;
        let (prev, cur) = positions.split_at_mut(k as usize * w);
        let prev = &prev[(k as usize - 1) * w..];
        for c in 0..w {
            let u = if stopped { 0 } else { inc[c] };
            increments[(k as usize - 1) * w + c] = u;
            cur[c] = prev[c] + u as i64;
        }
        if !stopped && k % per == 0 && cfg.is_stopped(cur[0]) {
            stopped = true;
            stop_fine = Some(k);
        }
    }
    let stop_coarse_index = match stop_fine {
        Some(k) => k / per,
        None => k_max / per,
    };
    Ok(WalkPath {
        config: *cfg,
        k_max,
        increments,
        positions,
        stop_fine_index: stop_fine,
        stop_coarse_index,
    })
}

/// One walk per slice `i = 1..=d`, all driven by the same tosses.
pub fn simulate_walk_family(cfg: &WalkConfig, tosses: &mut TossStream, k_max: u64) -> Result<Vec<WalkPath>> {
    (1..=cfg.d).map(|i| simulate_fine_walk(&cfg.with_slice(i), tosses, k_max)).collect()
}

/// Coarse walk `X_n`, positions in units of the fine step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarsePath {
    pub d: u32,
    pub y: f64,
    pub step: f64,
    pub theta: f64,
    /// `len + 1` rows of `d + 1` unit displacements.
    pub positions: Vec<i64>,
    /// `n_eps` when the path stopped before its end.
    pub stop: Option<u64>,
}

impl CoarsePath {
    /// Builds a coarse path from unit increments `dX_1, dX_2, ...`.
    pub fn from_increments(d: u32, y: f64, step: f64, theta: f64, increments: &[Vec<i64>]) -> Self {
        let w = d as usize + 1;
        let mut positions = vec![0i64; w];
        for inc in increments {
            let last = positions[positions.len() - w..].to_vec();
            positions.extend(last.iter().zip(inc).map(|(a, b)| a + b));
        }
        Self {
            d,
            y,
            step,
            theta,
            positions,
            stop: None,
        }
    }

    pub fn len(&self) -> u64 {
        (self.positions.len() / (self.d as usize + 1)) as u64 - 1
    }

    pub fn n_eps(&self) -> u64 {
        self.stop.unwrap_or(self.len())
    }

    pub fn tau_eps(&self) -> f64 {
        self.n_eps() as f64 * self.theta
    }

    pub fn units(&self, n: u64) -> &[i64] {
        let w = self.d as usize + 1;
        &self.positions[n as usize * w..(n as usize + 1) * w]
    }

    pub fn point(&self, n: u64) -> Vec<f64> {
        units_to_point(self.y, self.step, self.units(n))
    }

    pub fn increment_units(&self, n: u64) -> Vec<i64> {
        self.units(n).iter().zip(self.units(n - 1)).map(|(a, b)| a - b).collect()
    }
}

/// `X_n = B_{nN}`.
pub fn coarse_grain(path: &WalkPath, n: u64) -> Result<CoarsePath> {
    if n == 0 || path.k_max % n != 0 {
        return Err(Error::LengthMismatch(format!(
            "path of {} fine steps is not a multiple of {n}",
            path.k_max
        )));
    }
    let w = path.dim();
    let mut positions = Vec::with_capacity((path.k_max / n + 1) as usize * w);
    for m in 0..=path.k_max / n {
        positions.extend_from_slice(path.position_units(m * n));
    }
    let stop = path.stop_fine_index.filter(|k| k % n == 0).map(|k| k / n);
    Ok(CoarsePath {
        d: path.config.d,
        y: path.config.y,
        step: path.config.step(),
        theta: path.config.delta() * n as f64,
        positions,
        stop,
    })
}

/// Freezes the coarse path from the first `n` with `X_n^0 <= eps` on.
pub fn apply_stopping(coarse: &CoarsePath, eps: f64) -> Result<CoarsePath> {
    if !(eps > 0.0) {
        return Err(Error::Domain("eps must be positive".into()));
    }
    let w = coarse.d as usize + 1;
    let mut out = coarse.clone();
    let hit = (0..=coarse.len()).find(|&n| coarse.point(n)[0] <= eps);
    if let Some(n) = hit {
        let frozen = coarse.units(n).to_vec();
        for m in n + 1..=coarse.len() {
            out.positions[m as usize * w..(m as usize + 1) * w].copy_from_slice(&frozen);
        }
        out.stop = Some(n);
    } else {
        out.stop = None;
    }
    Ok(out)
}

/// Fresh random bits, earliest first.
pub struct BitSource<R: RngCore> {
    rng: R,
    buf: u128,
    avail: u32,
}

impl<R: RngCore> BitSource<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, buf: 0, avail: 0 }
    }

    /// The next `n <= 64` bits, the earliest in the lowest position.
    #[inline]
    pub fn take(&mut self, n: u32) -> u64 {
        debug_assert!(n <= 64);
        if n == 0 {
            return 0;
        }
        if self.avail < n {
            self.buf |= (self.rng.next_u64() as u128) << self.avail;
            self.avail += 64;
        }
        let out = (self.buf as u64) & low_mask(n);
        self.buf >>= n;
        self.avail -= n;
        out
    }

    pub fn rng_mut(&mut self) -> &mut R {
        &mut self.rng
    }
}

#[inline]
fn low_mask(n: u32) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Masks selecting, within a chunk of `c` fine steps, the toss pairs feeding coordinate `j`.
#[derive(Debug, Clone)]
struct ChunkMasks {
    bits: u32,
    coord: Vec<u64>,
}

impl ChunkMasks {
    fn new(d: u32, c: u32) -> Self {
        let bits = c * d;
        let mut coord = vec![0u64; d as usize];
        for p in 0..bits {
            coord[(p % d) as usize] |= 1u64 << p;
        }
        Self { bits, coord }
    }
}

/// Unit displacement of one coarse step, shared by the whole walk family.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CoarseCounts {
    /// Horizontal coordinates `1..=d`.
    pub horizontal: Vec<i64>,
    /// `vertical[i-1]` is the vertical displacement of the walk `B^(i)`.
    pub vertical: Vec<i64>,
}

/// Bit-parallel coarse stepping for all walks `B^(1..=d)` of one toss stream.
///
/// A chunk of `c` fine steps is read as a word `u` whose bit `p` is the toss at offset
/// `p` (`1` for `+1`); bit 0 is the indicator toss carried over from the previous chunk.
#[derive(Debug, Clone)]
pub struct CoarseStepper {
    d: u32,
    n: u32,
    chunk: u32,
    full: ChunkMasks,
    tail: Option<ChunkMasks>,
    carry: u64,
}

impl CoarseStepper {
    /// `chunk` fine steps are processed per word; `chunk * d + 1` must not exceed 64.
    pub fn new(d: u32, n: u32, chunk: u32) -> Result<Self> {
        if chunk == 0 || chunk * d + 1 > 64 {
            return Err(Error::Invalid(format!("chunk of {chunk} fine steps does not fit in a word")));
        }
        let chunk = chunk.min(n);
        let rem = n % chunk;
        Ok(Self {
            d,
            n,
            chunk,
            full: ChunkMasks::new(d, chunk),
            tail: (rem > 0).then(|| ChunkMasks::new(d, rem)),
            carry: 0,
        })
    }

    /// Largest chunk that fits in one word.
    pub fn widest(d: u32, n: u32) -> Result<Self> {
        Self::new(d, n, (63 / d).min(n).max(1))
    }

    pub fn chunk(&self) -> u32 {
        self.chunk
    }

    /// Draws the generation-0 toss.
    pub fn start<R: RngCore>(&mut self, bits: &mut BitSource<R>) {
        self.carry = bits.take(1);
    }

    /// Sets the generation-0 toss (`true` for `+1`).
    pub fn start_with(&mut self, toss: bool) {
        self.carry = toss as u64;
    }

    /// Advances one coarse step; `on_chunk(word, fine_steps)` sees every chunk word.
    #[inline]
    pub fn step_with<R: RngCore>(
        &mut self,
        bits: &mut BitSource<R>,
        counts: &mut CoarseCounts,
        mut on_chunk: impl FnMut(u64, u32),
    ) {
        let d = self.d as usize;
        counts.horizontal.clear();
        counts.horizontal.resize(d, 0);
        counts.vertical.clear();
        counts.vertical.resize(d, 0);
        let mut done = 0;
        while done < self.n {
            let c = self.chunk.min(self.n - done);
            let masks = if c == self.chunk { &self.full } else { self.tail.as_ref().unwrap() };
            let fresh = bits.take(masks.bits);
            let u = self.carry | (fresh << 1);
            on_chunk(u, c);
            let ind = u;
            let val = u >> 1;
            for j in 0..d {
                let m = masks.coord[j];
                let left = !ind & m;
                let right = ind & m;
                counts.horizontal[j] += (left & val).count_ones() as i64 - (left & !val).count_ones() as i64;
                counts.vertical[j] += (right & val).count_ones() as i64 - (right & !val).count_ones() as i64;
            }
            self.carry = (u >> masks.bits) & 1;
            done += c;
        }
    }

    pub fn step<R: RngCore>(&mut self, bits: &mut BitSource<R>, counts: &mut CoarseCounts) {
        self.step_with(bits, counts, |_, _| {});
    }
}

/// Terminal state of a stopped coarse walk.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarseOutcome {
    pub n_eps: u64,
    pub units: Vec<i64>,
}

/// Runs the stopped coarse walk `X^(i)` of a random toss stream; `visit(n, units)` is
/// called at every coarse time `n < n_eps` before the step from `n` is taken.
pub fn run_coarse_walk<R: RngCore>(
    cfg: &WalkConfig,
    bits: &mut BitSource<R>,
    mut visit: impl FnMut(u64, &[i64]),
) -> CoarseOutcome {
    let d = cfg.d as usize;
    let mut stepper = CoarseStepper::widest(cfg.d, cfg.n).expect("word-sized chunk");
    stepper.start(bits);
    let mut units = vec![0i64; d + 1];
    let mut counts = CoarseCounts::default();
    let total = cfg.coarse_steps();
    let stop_at = cfg.stop_units();
    if units[0] <= stop_at {
        return CoarseOutcome { n_eps: 0, units };
    }
    for n in 0..total {
        visit(n, &units);
        stepper.step(bits, &mut counts);
        units[0] += counts.vertical[cfg.i as usize - 1];
        for j in 0..d {
            units[j + 1] += counts.horizontal[j];
        }
        if units[0] <= stop_at {
            return CoarseOutcome { n_eps: n + 1, units };
        }
    }
    CoarseOutcome { n_eps: total, units }
}

/// Random toss source for path `path` of stream `tag`.
pub fn path_bits(seed: u64, tag: u64, path: u64) -> BitSource<ChaCha8Rng> {
    BitSource::new(path_rng(seed, tag, path))
}

/// Brownian path sampled on a substep grid, frozen once the vertical coordinate hits 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrownianPath {
    pub start: Vec<f64>,
    pub substep: f64,
    /// Rows of `d + 1` coordinates at times `0, substep, 2 substep, ...` (last may be shorter).
    pub positions: Vec<f64>,
    pub times: Vec<f64>,
    pub hit: bool,
    pub hit_time: Option<f64>,
}

/// Streaming Brownian motion in the upper half-space with boundary detection.
#[derive(Debug, Clone)]
pub struct BrownianStepper {
    pub pos: Vec<f64>,
    pub time: f64,
    pub horizon: f64,
    pub substep: f64,
    pub bridge: bool,
    pub hit_time: Option<f64>,
}

impl BrownianStepper {
    pub fn new(start: &[f64], horizon: f64, substep: f64, bridge: bool) -> Result<Self> {
        if !(substep > 0.0) {
            return Err(Error::Domain("substep must be positive".into()));
        }
        if !(start[0] > 0.0) {
            return Err(Error::OutsideDomain(start[0]));
        }
        Ok(Self {
            pos: start.to_vec(),
            time: 0.0,
            horizon,
            substep,
            bridge,
            hit_time: None,
        })
    }

    pub fn alive(&self) -> bool {
        self.hit_time.is_none() && self.time < self.horizon
    }

    /// Advances one substep (shorter at the horizon); returns the step length used.
    pub fn step<R: Rng>(&mut self, rng: &mut R) -> f64 {
        if !self.alive() {
            return 0.0;
        }
        let dt = self.substep.min(self.horizon - self.time);
        let sd = dt.sqrt();
        let a = self.pos[0];
        let mut next: Vec<f64> = self.pos.iter().map(|&x| x + sd * { let z: f64 = StandardNormal.sample(rng); z }).collect();
        let b = next[0];
        let crossed = if b <= 0.0 {
            Some(a / (a - b))
        } else if self.bridge {
            let u: f64 = rng.gen();
            (u < (-2.0 * a * b / dt).exp()).then_some(0.5)
        } else {
            None
        };
        if let Some(frac) = crossed {
            for (n, p) in next.iter_mut().zip(&self.pos) {
                *n = p + frac * (*n - p);
            }
            next[0] = 0.0;
            self.hit_time = Some(self.time + frac * dt);
        }
        self.pos = next;
        self.time += dt;
        dt
    }
}

/// Samples a Brownian path from `start` up to `horizon` or the hitting time of `{x0 = 0}`.
pub fn sample_brownian<R: Rng>(start: &[f64], horizon: f64, substep: f64, bridge: bool, rng: &mut R) -> Result<BrownianPath> {
    let mut s = BrownianStepper::new(start, horizon, substep, bridge)?;
    let mut positions = start.to_vec();
    let mut times = vec![0.0];
    while s.alive() {
        s.step(rng);
        positions.extend_from_slice(&s.pos);
        times.push(s.time);
    }
    Ok(BrownianPath {
        start: start.to_vec(),
        substep,
        positions,
        times,
        hit: s.hit_time.is_some(),
        hit_time: s.hit_time,
    })
}

/// Exact exit point on `{x0 = 0}` of Brownian motion from `(y, 0, ..., 0)`, horizontal part.
pub fn sample_exit_point<R: Rng>(y: f64, d: u32, rng: &mut R) -> Vec<f64> {
    let z: f64 = StandardNormal.sample(rng);
    let tau = y * y / (z * z);
    (0..d).map(|_| tau.sqrt() * { let z: f64 = StandardNormal.sample(rng); z }).collect()
}

/// Exact sample of `W_{min(T, tau)}` for Brownian motion from `(y, 0, ..., 0)`.
pub fn sample_stopped_terminal<R: Rng>(y: f64, d: u32, horizon: f64, rng: &mut R) -> Vec<f64> {
    let z: f64 = StandardNormal.sample(rng);
    let tau = y * y / (z * z);
    let mut out = vec![0.0; d as usize + 1];
    let t = if tau < horizon {
        tau
    } else {
        let sd = horizon.sqrt();
        loop {
            let b = y + sd * { let z: f64 = StandardNormal.sample(rng); z };
            if b <= 0.0 {
                continue;
            }
            let u: f64 = rng.gen();
            if u < 1.0 - (-2.0 * y * b / horizon).exp() {
                out[0] = b;
                break;
            }
        }
        horizon
    };
    for c in out.iter_mut().skip(1) {
        *c = t.sqrt() * { let z: f64 = StandardNormal.sample(rng); z };
    }
    out
}

/// A toss prefix with its probability weight.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationNode {
    pub prefix: Vec<i8>,
    pub weight: f64,
}

/// Visits every toss prefix of generations `0..=k_max d` with weight `2^-(k_max d + 1)`,
/// passing the simulated walk. Returns the total weight visited.
pub fn enumerate_walks(
    cfg: &WalkConfig,
    k_max: u64,
    cap: u32,
    mut visit: impl FnMut(&EnumerationNode, &WalkPath),
) -> Result<f64> {
    let gens = k_max * cfg.d as u64;
    if gens > cap as u64 {
        return Err(Error::CapExceeded {
            needed: gens as u32,
            cap,
        });
    }
    let len = gens as u32 + 1;
    let weight = (-(len as f64)).exp2();
    let mut total = 0.0;
    for m in 0..1u64 << len {
        let mut stream = TossStream::from_leaf(m, len);
        let path = simulate_fine_walk(cfg, &mut stream, k_max)?;
        let node = EnumerationNode {
            prefix: stream.materialized().to_vec(),
            weight,
        };
        visit(&node, &path);
        total += weight;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn cfg(d: u32, i: u32) -> WalkConfig {
        WalkConfig::coupled(d, i, 4.0, 4, 1.0).unwrap()
    }

    #[test]
    fn coupled_parameters() {
        let c = cfg(2, 1);
        assert_eq!(c.delta(), 4.0 / 1024.0);
        assert_eq!(c.theta(), 4.0 * 4.0 / 1024.0);
        assert_eq!(c.eps(), 0.25);
        assert_eq!(c.fine_steps(), 1024);
        assert_eq!(c.coarse_steps(), 256);
        assert!(WalkConfig::coupled(2, 3, 4.0, 4, 1.0).is_err());
    }

    #[test]
    fn first_step_examples() {
        let mut t = TossStream::fixed(vec![1, 1, -1]).unwrap();
        let p = simulate_fine_walk(&cfg(2, 1), &mut t, 1).unwrap();
        assert_eq!(p.increment_units(1), &[1, 0, 0]);
        let mut t = TossStream::fixed(vec![1, 1, -1]).unwrap();
        let p = simulate_fine_walk(&cfg(2, 2), &mut t, 1).unwrap();
        assert_eq!(p.increment_units(1), &[-1, 0, 0]);
        for s in [-1i8, 1] {
            let mut t = TossStream::fixed(vec![-1, s, 1]).unwrap();
            let p = simulate_fine_walk(&cfg(2, 1), &mut t, 1).unwrap();
            assert_eq!(p.increment_units(1)[1], s);
            assert!((p.increment(1)[1] - s as f64 * cfg(2, 1).step()).abs() < 1e-15);
        }
    }

    #[test]
    fn short_fixed_stream_is_an_error() {
        let mut t = TossStream::fixed(vec![1, 1]).unwrap();
        assert!(simulate_fine_walk(&cfg(2, 1), &mut t, 1).is_err());
    }

    #[test]
    fn coarse_grain_examples() {
        let mut t = TossStream::random(path_rng(1, 0, 0));
        let p = simulate_fine_walk(&WalkConfig::coupled(2, 1, 4.0, 3, 5.0).unwrap(), &mut t, 27).unwrap();
        let x1 = coarse_grain(&p, 1).unwrap();
        assert_eq!(x1.positions, p.positions);
        let x = coarse_grain(&p, 3).unwrap();
        let sum: Vec<i64> = (4..=6).fold(vec![0; 3], |acc, k| {
            acc.iter().zip(p.increment_units(k)).map(|(a, &b)| a + b as i64).collect()
        });
        assert_eq!(x.increment_units(2), sum);
        assert!(coarse_grain(&p, 4).is_err());
        let zero = CoarsePath::from_increments(2, 1.0, 0.1, 0.1, &vec![vec![0, 0, 0]; 5]);
        assert!((0..=5).all(|n| zero.point(n) == vec![1.0, 0.0, 0.0]));
    }

    #[test]
    fn stopping_examples() {
        let flat = CoarsePath::from_increments(1, 1.0, 0.05, 0.01, &vec![vec![1, 0]; 6]);
        let s = apply_stopping(&flat, 0.1).unwrap();
        assert_eq!(s.n_eps(), 6);
        assert_eq!(s.positions, flat.positions);

        let incs = vec![vec![-6, 1], vec![-6, 2], vec![-6, 3], vec![5, 4], vec![-1, 5]];
        let c = CoarsePath::from_increments(1, 1.0, 0.05, 0.01, &incs);
        let s = apply_stopping(&c, 0.1).unwrap();
        assert_eq!(s.n_eps(), 3);
        for n in 3..=5 {
            assert_eq!(s.units(n), s.units(3));
        }
        assert!((0..s.n_eps()).all(|n| s.point(n)[0] > 0.1));
    }

    #[test]
    fn fine_walk_stops_on_coarse_schedule() {
        let c = WalkConfig::coupled(1, 1, 4.0, 4, 0.3).unwrap();
        for seed in 0..20 {
            let mut t = TossStream::random(path_rng(seed, 0, 0));
            let p = simulate_fine_walk(&c, &mut t, 256).unwrap();
            if let Some(k) = p.stop_fine_index {
                assert_eq!(k % 4, 0);
                assert!(p.position(k)[0] <= c.eps());
                for kk in k + 1..=256 {
                    assert!(p.increment_units(kk).iter().all(|&u| u == 0));
                }
                for m in 0..k / 4 {
                    assert!(p.position(4 * m)[0] > c.eps());
                }
            }
        }
    }

    #[test]
    fn family_shares_horizontal_steps() {
        let c = WalkConfig::coupled(2, 1, 4.0, 4, 1.0).unwrap();
        let mut t = TossStream::random(path_rng(5, 0, 0));
        let fam = simulate_walk_family(&c, &mut t, 200).unwrap();
        let k_stop = fam.iter().map(|p| p.stop_fine_index.unwrap_or(200)).min().unwrap();
        for k in 1..=k_stop {
            assert_eq!(fam[0].increment_units(k)[1..], fam[1].increment_units(k)[1..]);
        }
        let one = WalkConfig::coupled(1, 1, 4.0, 4, 1.0).unwrap();
        let mut a = TossStream::random(path_rng(6, 0, 0));
        let mut b = TossStream::random(path_rng(6, 0, 0));
        let fam = simulate_walk_family(&one, &mut a, 64).unwrap();
        assert_eq!(fam, vec![simulate_fine_walk(&one, &mut b, 64).unwrap()]);
    }

    #[test]
    fn bit_parallel_stepper_matches_reference() {
        for (d, n) in [(1u32, 4u32), (2, 4), (2, 3), (3, 8), (2, 40)] {
            for path in 0..30 {
                let c = WalkConfig::coupled(d, 1, 4.0, n, 1e6).unwrap();
                let mut t = TossStream::random(path_rng(9, 1, path));
                let steps = 5;
                let fam = simulate_walk_family(&c, &mut t, steps * n as u64).unwrap();
                let mut bits = path_bits(9, 1, path);
                let mut st = CoarseStepper::widest(d, n).unwrap();
                st.start(&mut bits);
                let mut counts = CoarseCounts::default();
                for m in 1..=steps {
                    st.step(&mut bits, &mut counts);
                    let k1 = m * n as u64;
                    let k0 = k1 - n as u64;
                    for (i, p) in fam.iter().enumerate() {
                        let a = p.position_units(k1);
                        let b = p.position_units(k0);
                        assert_eq!(a[0] - b[0], counts.vertical[i]);
                        for j in 0..d as usize {
                            assert_eq!(a[j + 1] - b[j + 1], counts.horizontal[j]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn coarse_runner_matches_fine_walk() {
        let c = WalkConfig::coupled(2, 2, 4.0, 4, 0.6).unwrap();
        for path in 0..50 {
            let mut t = TossStream::random(path_rng(3, 4, path));
            let p = simulate_fine_walk(&c, &mut t, c.fine_steps()).unwrap();
            let mut bits = path_bits(3, 4, path);
            let out = run_coarse_walk(&c, &mut bits, |_, _| {});
            assert_eq!(out.n_eps, p.stop_coarse_index);
            assert_eq!(out.units, p.position_units(out.n_eps * 4));
        }
    }

    #[test]
    fn enumeration_examples() {
        for (d, i) in [(1, 1), (2, 1), (2, 2), (3, 2)] {
            let c = WalkConfig::coupled(d, i, 4.0, 4, 1.0).unwrap();
            let mut mean = vec![0.0; d as usize + 1];
            let total = enumerate_walks(&c, 1, ENUMERATION_CAP, |node, p| {
                for (m, u) in mean.iter_mut().zip(p.increment_units(1)) {
                    *m += node.weight * *u as f64;
                }
            })
            .unwrap();
            assert_eq!(total, 1.0);
            assert!(mean.iter().all(|&m| m == 0.0));
        }
        let c = cfg(2, 1);
        let (mut plus, mut minus, mut all) = (0.0, 0.0, 0.0);
        enumerate_walks(&c, 1, ENUMERATION_CAP, |node, p| {
            let v = p.increment(1)[0].powi(2);
            all += node.weight * v;
            if node.prefix[0] > 0 {
                plus += 2.0 * node.weight * v;
            } else {
                minus += 2.0 * node.weight * v;
            }
        })
        .unwrap();
        let delta = c.delta();
        assert!((plus - 2.0 * delta).abs() < 1e-12 * delta);
        assert_eq!(minus, 0.0);
        assert!((all - delta).abs() < 1e-12 * delta);
        assert!(enumerate_walks(&c, 12, ENUMERATION_CAP, |_, _| {}).is_err());
    }

    #[test]
    fn brownian_moments() {
        let n = 100_000;
        let t = 0.5;
        let (mut s, mut s2) = (0.0, 0.0);
        for p in 0..n {
            let mut rng = path_rng(21, 7, p);
            let w = sample_brownian(&[50.0, 0.0], t, 0.1, true, &mut rng).unwrap();
            let x = w.positions[w.positions.len() - 1];
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!(mean.abs() < 4.0 * se);
        let var_se = var * (2.0 / n as f64).sqrt();
        assert!((var - t).abs() < 4.0 * var_se, "{var}");
    }

    #[test]
    fn frozen_brownian_returns_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = sample_brownian(&[1.0, 2.0], 0.0, 1e-3, true, &mut rng).unwrap();
        assert_eq!(w.positions, vec![1.0, 2.0]);
        assert!(!w.hit);
    }

    #[test]
    fn stopped_terminal_sampler_hits_or_stays_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut hits = 0;
        for _ in 0..20_000 {
            let w = sample_stopped_terminal(1.0, 2, 4.0, &mut rng);
            assert!(w[0] >= 0.0);
            hits += (w[0] == 0.0) as u32;
        }
        let p = hits as f64 / 20_000.0;
        let exact = crate::stats::erfc(0.5 / std::f64::consts::SQRT_2);
        assert!((p - exact).abs() < 0.015, "{p} vs {exact}");
    }
}
