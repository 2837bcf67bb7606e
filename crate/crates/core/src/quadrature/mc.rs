//! Seeded uniform sampling of balls.
//!
//! Depth `s` is drawn with density proportional to the slice volume by
//! rejection from a piecewise-constant envelope, then `x` uniformly in
//! the slice. The sample counter is split into fixed chunks of
//! [`CHUNK`] draws; chunk `k` uses ChaCha8 stream `k` of the seed, so the
//! output does not depend on how chunks are spread over threads.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::time::Estimate;
use crate::ball::LBall;
use crate::operator::GroupPoint;

pub const CHUNK: usize = 4096;

/// Generator for chunk `k` of a seeded run.
pub fn chunk_rng(seed: u64, chunk: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Uniform point of the unit ball in `R^n`.
pub fn unit_ball_point(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let g = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = g.norm();
        if norm > 0.0 {
            let u: f64 = rng.random();
            return g * (u.powf(1.0 / n as f64) / norm);
        }
    }
}

#[derive(Debug, Clone)]
pub struct BallSampler {
    ball: LBall,
    edges: Vec<f64>,
    /// Envelope height per cell.
    heights: Vec<f64>,
    /// Cumulative envelope mass at the right edge of each cell.
    cumulative: Vec<f64>,
}

impl BallSampler {
    pub fn new(ball: &LBall) -> Self {
        const CELLS: usize = 512;
        let s_max = ball.s_max();
        let edges: Vec<f64> = (0..=CELLS).map(|k| s_max * k as f64 / CELLS as f64).collect();
        // the slice volume is ∝ log(s_max/s)^{n/2} s^{(Q-2)/2}: one peak
        let q = ball.evaluator().spec().homogeneous_dimension() as f64;
        let n = ball.n() as f64;
        let peak = s_max * (-n / (q - 2.0)).exp();
        let mut heights = Vec::with_capacity(CELLS);
        let mut cumulative = Vec::with_capacity(CELLS);
        let mut acc = 0.0;
        for k in 0..CELLS {
            let (a, b) = (edges[k], edges[k + 1]);
            let mut h = ball.slice_volume(a).max(ball.slice_volume(b));
            if peak >= a && peak <= b {
                h = h.max(ball.slice_volume(peak));
            }
            h *= 1.0 + 1e-12;
            acc += h * (b - a);
            heights.push(h);
            cumulative.push(acc);
        }
        Self { ball: ball.clone(), edges, heights, cumulative }
    }

    fn draw_depth(&self, rng: &mut ChaCha8Rng) -> f64 {
        let total = *self.cumulative.last().expect("cells");
        loop {
            let target = rng.random::<f64>() * total;
            let k = self.cumulative.partition_point(|&c| c < target).min(self.heights.len() - 1);
            let (a, b) = (self.edges[k], self.edges[k + 1]);
            let s = a + (b - a) * rng.random::<f64>();
            if !(s > 0.0 && s < self.ball.s_max()) {
                continue;
            }
            if rng.random::<f64>() * self.heights[k] < self.ball.slice_volume(s) {
                return s;
            }
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> GroupPoint {
        loop {
            let s = self.draw_depth(rng);
            let Ok(e) = self.ball.slice(s) else { continue };
            let u = unit_ball_point(rng, self.ball.n());
            let x = e.center() + e.frame() * u;
            return GroupPoint::new(x, self.ball.z0().t - s);
        }
    }

    /// `count` points, deterministic in `seed`.
    pub fn sample(&self, count: usize, seed: u64) -> Vec<GroupPoint> {
        let chunks = count.div_ceil(CHUNK);
        let parts: Vec<Vec<GroupPoint>> = (0..chunks)
            .into_par_iter()
            .map(|k| {
                let mut rng = chunk_rng(seed, k as u64);
                let m = CHUNK.min(count - k * CHUNK);
                (0..m).map(|_| self.draw(&mut rng)).collect()
            })
            .collect();
        parts.into_iter().flatten().collect()
    }

    /// Mean and standard error of `f` over `count` uniform samples, scaled
    /// by `volume`.
    pub fn integrate(&self, f: &(dyn Fn(&GroupPoint) -> f64 + Sync), count: usize, seed: u64, volume: f64) -> Estimate {
        let chunks = count.div_ceil(CHUNK);
        let sums: Vec<(f64, f64)> = (0..chunks)
            .into_par_iter()
            .map(|k| {
                let mut rng = chunk_rng(seed, k as u64);
                let m = CHUNK.min(count - k * CHUNK);
                let (mut s1, mut s2) = (0.0, 0.0);
                for _ in 0..m {
                    let v = f(&self.draw(&mut rng));
                    s1 += v;
                    s2 += v * v;
                }
                (s1, s2)
            })
            .collect();
        let (s1, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let nf = count as f64;
        let mean = s1 / nf;
        let var = (s2 / nf - mean * mean).max(0.0) * nf / (nf - 1.0).max(1.0);
        Estimate { value: volume * mean, error: volume * (var / nf).sqrt(), converged: true, evaluations: count }
    }
}

/// Uniform samples of `ball`; see [`BallSampler`].
pub fn mc_sample_ball(ball: &LBall, count: usize, seed: u64) -> Vec<GroupPoint> {
    BallSampler::new(ball).sample(count, seed)
}
