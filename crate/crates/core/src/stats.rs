//! Per-path random streams, sample-moment accumulators and deterministic parallel reduction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Independent stream for path `path` of the experiment stream `tag` under `seed`.
pub fn path_rng(seed: u64, tag: u64, path: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(path);
    rng
}

/// Running sums of a fixed-length vector of per-path observations and their products.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub n: u64,
    pub sum: Vec<f64>,
    /// Row-major `k x k` sums of pairwise products.
    pub cross: Vec<f64>,
}

impl SampleMoments {
    pub fn new(k: usize) -> Self {
        Self {
            n: 0,
            sum: vec![0.0; k],
            cross: vec![0.0; k * k],
        }
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn push(&mut self, x: &[f64]) {
        let k = self.dim();
        debug_assert_eq!(x.len(), k);
        self.n += 1;
        for a in 0..k {
            self.sum[a] += x[a];
            for b in 0..k {
                self.cross[a * k + b] += x[a] * x[b];
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.n += other.n;
        for (a, b) in self.sum.iter_mut().zip(&other.sum) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
    }

    pub fn mean(&self, a: usize) -> f64 {
        self.sum[a] / self.n as f64
    }

    /// Sample covariance of components `a` and `b`.
    pub fn cov(&self, a: usize, b: usize) -> f64 {
        let n = self.n as f64;
        if self.n < 2 {
            return 0.0;
        }
        let k = self.dim();
        (self.cross[a * k + b] - self.sum[a] * self.sum[b] / n) / (n - 1.0)
    }

    /// Standard error of the mean of component `a`.
    pub fn stderr(&self, a: usize) -> f64 {
        (self.cov(a, a).max(0.0) / self.n as f64).sqrt()
    }

    /// Mean and standard error of `sum_a w_a X_a`.
    pub fn linear(&self, w: &[f64]) -> (f64, f64) {
        let k = self.dim();
        let mean = (0..k).map(|a| w[a] * self.mean(a)).sum();
        let mut var = 0.0;
        for a in 0..k {
            for b in 0..k {
                var += w[a] * w[b] * self.cov(a, b);
            }
        }
        (mean, (var.max(0.0) / self.n as f64).sqrt())
    }
}

/// Accumulates `n` paths in fixed-size blocks; blocks may run on any thread but are
/// merged in path order, so the result does not depend on the worker count.
pub fn accumulate_paths<F>(n: u64, k: usize, per_path: F) -> SampleMoments
where
    F: Fn(u64, &mut SampleMoments) + Sync,
{
    const BLOCK: u64 = 512;
    let blocks = n.div_ceil(BLOCK);
    let parts: Vec<SampleMoments> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = SampleMoments::new(k);
            for path in b * BLOCK..((b + 1) * BLOCK).min(n) {
                per_path(path, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = SampleMoments::new(k);
    for p in &parts {
        total.merge(p);
    }
    total
}

/// Two-sided normal tail probability `P(|Z| > z)`.
pub fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Complementary error function, relative accuracy about `1e-7`.
pub fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let r = t * (-z * z - 1.265_512_23
        + t * (1.000_023_68
            + t * (0.374_091_96
                + t * (0.096_784_18
                    + t * (-0.186_288_06
                        + t * (0.278_868_07
                            + t * (-1.135_203_98
                                + t * (1.488_515_87 + t * (-0.822_152_23 + t * 0.170_872_77)))))))))
        .exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn moments_of_known_sample() {
        let mut m = SampleMoments::new(2);
        for (a, b) in [(1.0, 2.0), (2.0, 4.0), (3.0, 6.0), (4.0, 8.0)] {
            m.push(&[a, b]);
        }
        assert_eq!(m.mean(0), 2.5);
        assert!((m.cov(0, 0) - 5.0 / 3.0).abs() < 1e-14);
        assert!((m.cov(0, 1) - 10.0 / 3.0).abs() < 1e-14);
        let (mean, se) = m.linear(&[2.0, -1.0]);
        assert_eq!(mean, 0.0);
        assert!(se.abs() < 1e-7);
    }

    #[test]
    fn reduction_is_independent_of_thread_count() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                accumulate_paths(5000, 1, |p, acc| {
                    let mut rng = path_rng(11, 2, p);
                    acc.push(&[rng.gen::<f64>()]);
                })
            })
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.sum[0].to_bits(), b.sum[0].to_bits());
        assert_eq!(a.cross[0].to_bits(), b.cross[0].to_bits());
    }

    #[test]
    fn erfc_values() {
        assert!((erfc(0.0) - 1.0).abs() < 1e-7);
        assert!((erfc(1.0) - 0.157_299_207).abs() < 1e-7);
        assert!((normal_two_sided(1.959_964) - 0.05).abs() < 1e-6);
    }
}
