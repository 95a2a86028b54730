//! Property tests for the grid and pricing invariants.

use proptest::prelude::*;
use switchopt_core::grid::pattern_from_jumps;
use switchopt_core::testkit::{random_pricing, SplitMix};
use switchopt_core::{ControlGrid, Mat, SignPattern, TimeGrid};

fn control_from_bits(on: &[bool], level: f64) -> ControlGrid {
    let n = on.len();
    let grid = TimeGrid::new(0.0, n as f64, n).unwrap();
    let values: Vec<f64> = on.iter().map(|&b| if b { level } else { 0.0 }).collect();
    ControlGrid::new(grid, Mat::from_rows(&[values]).unwrap()).unwrap()
}

proptest! {
    /// Zero extension guarantees an even number of sign changes.
    #[test]
    fn total_variation_is_even(bits in prop::collection::vec(any::<bool>(), 1..64)) {
        let rows = vec![bits.iter().map(|&b| b as u8).collect::<Vec<_>>()];
        let pattern = SignPattern::from_rows(&rows);
        for tv in pattern.total_variation_per_component() {
            prop_assert_eq!(tv % 2, 0);
        }
    }

    /// The jump set is a faithful minimal representation of the pattern.
    #[test]
    fn jump_set_round_trips(bits in prop::collection::vec(any::<bool>(), 1..64)) {
        let u = control_from_bits(&bits, 0.7);
        let jumps = u.jump_set();
        // Directions alternate starting with "on" and the count matches the
        // variation of the pattern.
        for comp in &jumps.per_component {
            prop_assert_eq!(comp.len() % 2, 0);
            for (k, jump) in comp.iter().enumerate() {
                let expect_on = k % 2 == 0;
                prop_assert_eq!(matches!(jump.direction, switchopt_core::JumpDirection::On), expect_on);
            }
        }
        prop_assert_eq!(jumps.per_component[0].len(), u.sign_pattern().total_variation());
        prop_assert_eq!(pattern_from_jumps(&jumps, u.n_cells()), u.sign_pattern());
    }

    /// Masking only removes terms from the squared distance.
    #[test]
    fn masked_norm_is_bounded_by_full_norm(
        a in prop::collection::vec(prop::option::of(0.3f64..1.0), 1..40),
        seed in any::<u64>(),
    ) {
        let n = a.len();
        let grid = TimeGrid::new(0.0, 2.0, n).unwrap();
        let mut rng = SplitMix(seed);
        let u_vals: Vec<f64> = a.iter().map(|v| v.unwrap_or(0.0)).collect();
        let w_vals: Vec<f64> = (0..n)
            .map(|_| if rng.chance(0.5) { rng.uniform(0.3, 1.0) } else { 0.0 })
            .collect();
        let u = ControlGrid::new(grid, Mat::from_rows(std::slice::from_ref(&u_vals)).unwrap()).unwrap();
        let w = ControlGrid::new(grid, Mat::from_rows(std::slice::from_ref(&w_vals)).unwrap()).unwrap();
        let masked = u.masked_sq_norm(&w).unwrap();
        let full: f64 = grid.dt()
            * u_vals
                .iter()
                .zip(&w_vals)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>();
        prop_assert!(masked <= full + 1e-12);
        // Flip-count times the step length is the L1 distance of patterns.
        let flips = u.sign_l1_distance(&w).unwrap();
        let l1: f64 = u_vals
            .iter()
            .zip(&w_vals)
            .map(|(x, y)| ((*x > 0.0) as i32 - (*y > 0.0) as i32).abs() as f64 * grid.dt())
            .sum();
        prop_assert!((flips as f64 * grid.dt() - l1).abs() < 1e-12);
    }
}

/// Nonexpansivity of the proximal map on random pricing functions.
#[test]
fn prox_is_nonexpansive() {
    let mut rng = SplitMix(0xabcd);
    for _ in 0..20 {
        let g = random_pricing(&mut rng);
        for _ in 0..50 {
            let step = rng.uniform(0.01, 100.0);
            let x = rng.uniform(-3.0, 5.0);
            let y = rng.uniform(-3.0, 5.0);
            let px = g.prox(step, x);
            let py = g.prox(step, y);
            assert!(
                (px - py).abs() <= (x - y).abs() + 1e-12,
                "|prox x - prox y| = {} > |x - y| = {}",
                (px - py).abs(),
                (x - y).abs()
            );
        }
    }
}

/// The step-length response of the proximal residual: nondecreasing in the
/// step, sublinear relative to it.
#[test]
fn prox_residual_monotonicity_in_step_length() {
    let mut rng = SplitMix(0x5eed);
    for _ in 0..20 {
        let g = random_pricing(&mut rng);
        for _ in 0..50 {
            let x = rng.uniform(-2.0, 4.0);
            let d = rng.uniform(-5.0, 5.0);
            let mut r = rng.uniform(0.01, 0.1);
            let mut prev_phi = 0.0;
            let mut prev_ratio = f64::INFINITY;
            for _ in 0..8 {
                let phi = (g.prox(r, x - r * d) - x).abs();
                assert!(phi >= prev_phi - 1e-12, "phi({r}) = {phi} < {prev_phi}");
                let ratio = phi / r;
                assert!(ratio <= prev_ratio + 1e-12, "phi/r grew at {r}");
                prev_phi = phi;
                prev_ratio = ratio;
                r *= rng.uniform(1.5, 3.0);
            }
        }
    }
}
