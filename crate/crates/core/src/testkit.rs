//! Deterministic generators for randomized tests.
//!
//! Self-contained (no RNG dependency) so integration suites in downstream
//! crates can reproduce the exact same instances from a seed.

use crate::grid::{ControlGrid, TimeGrid};
use crate::mat::Mat;
use crate::pricing::{PricingFunction, QuadPiece};

/// SplitMix64: tiny, seedable, good enough for instance generation.
#[derive(Clone, Debug)]
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.unit() < p
    }

    /// Uniform integer in `[lo, hi]`.
    pub fn int(&mut self, lo: usize, hi: usize) -> usize {
        lo + (self.next_u64() as usize) % (hi - lo + 1)
    }
}

/// A random valid pricing function: 1-3 quadratic pieces stitched to be
/// continuous with nondecreasing derivatives; occasionally linear pieces
/// and kinks, mirroring the benchmark shapes.
pub fn random_pricing(rng: &mut SplitMix) -> PricingFunction {
    let lower = rng.uniform(0.05, 1.0);
    let upper = lower + rng.uniform(0.15, 2.0);
    let n_pieces = rng.int(1, 3);

    let mut cuts = Vec::with_capacity(n_pieces + 1);
    cuts.push(lower);
    for k in 1..n_pieces {
        cuts.push(lower + (upper - lower) * k as f64 / n_pieces as f64);
    }
    cuts.push(upper);

    let mut pieces = Vec::with_capacity(n_pieces);
    let mut value = rng.uniform(-0.5, 2.0);
    let mut slope = rng.uniform(-3.0, 3.0);
    for k in 0..n_pieces {
        let (lo, hi) = (cuts[k], cuts[k + 1]);
        let c2 = if rng.chance(0.8) {
            rng.uniform(0.05, 4.0)
        } else {
            0.0
        };
        let c1 = slope - 2.0 * c2 * lo;
        let c0 = value - (c2 * lo + c1) * lo;
        let piece = QuadPiece { lo, hi, c2, c1, c0 };
        value = piece.value(hi);
        slope = piece.derivative(hi);
        if rng.chance(0.3) {
            // Convex kink at the joint.
            slope += rng.uniform(0.0, 2.0);
        }
        pieces.push(piece);
    }
    PricingFunction::new(lower, upper, pieces, 0.0).expect("generated pieces are convex")
}

/// Random admissible control: each cell is off with probability `p_off`,
/// otherwise uniform in the active interval.
pub fn random_control(
    grid: TimeGrid,
    pricing: &[PricingFunction],
    p_off: f64,
    rng: &mut SplitMix,
) -> ControlGrid {
    let mut values = Mat::zeros(pricing.len(), grid.n_cells());
    for (i, g) in pricing.iter().enumerate() {
        for j in 0..grid.n_cells() {
            if !rng.chance(p_off) {
                values.set(i, j, rng.uniform(g.lower_bound(), g.upper_bound()));
            }
        }
    }
    ControlGrid::new(grid, values).expect("shapes agree by construction")
}

/// Random gradient matrix with entries uniform in `[-scale, scale]`.
pub fn random_gradient(n_comp: usize, n_cells: usize, scale: f64, rng: &mut SplitMix) -> Mat {
    let mut m = Mat::zeros(n_comp, n_cells);
    for i in 0..n_comp {
        for j in 0..n_cells {
            m.set(i, j, rng.uniform(-scale, scale));
        }
    }
    m
}
