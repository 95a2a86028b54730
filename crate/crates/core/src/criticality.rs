//! Stationarity measure for the switching control problem.
//!
//! Two independent residuals are combined by a maximum. The proximal part
//! measures first-order stationarity of the active control values: it
//! vanishes exactly when every active cell is a fixed point of the proximal
//! gradient map. The switching part inspects every sign change: the best
//! continuation value `V` of the active branch against the linearized
//! smooth cost must vanish at an interior switching time (the tangent
//! condition), while at the horizon ends only `V ≤ 0` is required. Negative
//! continuation values are scaled by the distance of the switch to the
//! horizon ends, which keeps the measure continuous as a switch slides into
//! an endpoint.

use serde::{Deserialize, Serialize};

use crate::grid::{ControlGrid, JumpDirection};
use crate::mat::Mat;
use crate::pricing::PricingFunction;
use crate::Result;

/// How the gradient is sampled at a cell boundary when scoring a switch.
/// The continuous problem evaluates the gradient pointwise in time; on the
/// grid, a boundary has two adjacent cell averages to choose from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientSampling {
    /// Use the gradient entry of the active-side cell adjacent to the jump:
    /// the cell just after an "on" switch, the cell just before an "off"
    /// switch. This is the cell whose value continues across the boundary.
    #[default]
    ActiveSide,
    /// Average the two adjacent entries where both exist.
    Average,
}

/// Score of a single sign change.
#[derive(Clone, Debug, Serialize)]
pub struct JumpScore {
    pub component: usize,
    pub boundary: usize,
    pub time: f64,
    pub direction: JumpDirection,
    /// Best continuation value of the active branch at the jump.
    pub continuation_value: f64,
    /// Nonnegative criticality contribution of this jump.
    pub score: f64,
}

/// The combined measure and its parts.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalityReport {
    pub c_prox: f64,
    pub c_switch: f64,
    /// `max(c_prox, c_switch)`.
    pub c: f64,
    pub jumps: Vec<JumpScore>,
}

/// Proximal residual on the active set:
/// `(2·step²)⁻¹ · dt · Σ_{u > 0} (u − prox(step, u − step·grad))²`.
pub fn prox_criticality(
    u: &ControlGrid,
    grad: &Mat,
    pricing: &[PricingFunction],
    step: f64,
) -> Result<f64> {
    grad.require_shape(u.n_comp(), u.n_cells())?;
    let dt = u.grid().dt();
    let mut sum = 0.0;
    for (i, j, v) in u.values().entries() {
        if v > 0.0 {
            let moved = pricing[i].prox(step, v - step * grad.get(i, j));
            sum += (v - moved) * (v - moved);
        }
    }
    Ok(sum * dt / (2.0 * step * step))
}

/// Switching residual: the worst score over all sign changes, together with
/// the per-jump breakdown. A control without sign changes scores zero.
pub fn switch_criticality(
    u: &ControlGrid,
    grad: &Mat,
    pricing: &[PricingFunction],
    sampling: GradientSampling,
) -> Result<(f64, Vec<JumpScore>)> {
    grad.require_shape(u.n_comp(), u.n_cells())?;
    let grid = u.grid();
    let (t0, t_end) = (grid.start(), grid.end());
    let horizon = t_end - t0;
    let n = u.n_cells();
    let mut scores = Vec::new();
    for (component, jump) in u.jump_set().iter() {
        let j = jump.boundary;
        let slope = match sampling {
            GradientSampling::ActiveSide => match jump.direction {
                JumpDirection::On => grad.get(component, j),
                JumpDirection::Off => grad.get(component, j - 1),
            },
            GradientSampling::Average => {
                if j == 0 {
                    grad.get(component, 0)
                } else if j == n {
                    grad.get(component, n - 1)
                } else {
                    0.5 * (grad.get(component, j - 1) + grad.get(component, j))
                }
            }
        };
        let (_, value) = pricing[component].continuation_min(slope);
        let boundary_scale = ((jump.time - t0).min(t_end - jump.time) / horizon).max(0.0);
        let score = value.max(-value * boundary_scale);
        scores.push(JumpScore {
            component,
            boundary: j,
            time: jump.time,
            direction: jump.direction,
            continuation_value: value,
            score,
        });
    }
    let worst = scores.iter().map(|s| s.score).fold(0.0, f64::max);
    Ok((worst, scores))
}

/// Evaluates both parts and combines them by a maximum.
pub fn criticality(
    u: &ControlGrid,
    grad: &Mat,
    pricing: &[PricingFunction],
    step: f64,
    sampling: GradientSampling,
) -> Result<CriticalityReport> {
    let c_prox = prox_criticality(u, grad, pricing, step)?;
    let (c_switch, jumps) = switch_criticality(u, grad, pricing, sampling)?;
    Ok(CriticalityReport {
        c_prox,
        c_switch,
        c: c_prox.max(c_switch),
        jumps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::pricing::decay_benchmark_pricing;

    fn control(values: &[f64]) -> ControlGrid {
        let grid = TimeGrid::new(0.0, values.len() as f64, values.len()).unwrap();
        ControlGrid::new(grid, Mat::from_rows(&[values.to_vec()]).unwrap()).unwrap()
    }

    fn g_prime(x: f64) -> f64 {
        1.4 * x - 0.5
    }

    #[test]
    fn all_zero_control_is_critical() {
        let pricing = [decay_benchmark_pricing()];
        let u = control(&[0.0, 0.0, 0.0]);
        let grad = Mat::from_rows(&[vec![-3.0, 2.0, 0.0]]).unwrap();
        let report = criticality(&u, &grad, &pricing, 1.0, GradientSampling::ActiveSide).unwrap();
        assert_eq!(report.c_prox, 0.0);
        assert_eq!(report.c_switch, 0.0);
        assert_eq!(report.c, 0.0);
        assert!(report.jumps.is_empty());
    }

    #[test]
    fn prox_part_vanishes_at_branch_stationary_points() {
        let pricing = [decay_benchmark_pricing()];
        let values = [0.5, 0.8, 0.0, 0.4];
        let u = control(&values);
        // Interior stationarity: -grad ∈ ∂g(u) means grad = -g'(u).
        let grads: Vec<f64> = values.iter().map(|&v| -g_prime(v)).collect();
        let grad = Mat::from_rows(&[grads]).unwrap();
        let c = prox_criticality(&u, &grad, &pricing, 0.7).unwrap();
        assert!(c < 1e-28, "{c}");
    }

    #[test]
    fn prox_part_matches_pointwise_recomputation() {
        let pricing = [decay_benchmark_pricing()];
        let values = [0.5, 0.0, 1.0, 0.31, 0.97];
        let grads = [0.4, -2.0, -1.3, 0.02, -0.8];
        let u = control(&values);
        let grad = Mat::from_rows(&[grads.to_vec()]).unwrap();
        let step = 0.83;
        let c = prox_criticality(&u, &grad, &pricing, step).unwrap();
        // Independent accumulation, cell by cell.
        let dt = u.grid().dt();
        let mut expect = 0.0;
        for (v, g) in values.iter().zip(grads) {
            if *v > 0.0 {
                let moved = pricing[0].prox(step, v - step * g);
                expect += (v - moved) * (v - moved);
            }
        }
        expect *= dt / (2.0 * step * step);
        assert!((c - expect).abs() <= 1e-12 * expect.max(1.0));
        // Inactive cells contribute nothing regardless of their gradient.
        let grad2 = Mat::from_rows(&[vec![0.4, 77.0, -1.3, 0.02, -0.8]]).unwrap();
        assert_eq!(prox_criticality(&u, &grad2, &pricing, step).unwrap(), c);
    }

    #[test]
    fn tangent_slope_scores_zero_at_interior_jump() {
        let pricing = [decay_benchmark_pricing()];
        let g = &pricing[0];
        let ustar = g.switch_value();
        let tangent_slope = -g.eval(ustar) / ustar;
        // One active cell in the middle: jumps at boundaries 2 and 3.
        let u = control(&[0.0, 0.0, ustar, 0.0, 0.0]);
        let grad = Mat::from_rows(&[vec![0.0, 0.0, tangent_slope, 0.0, 0.0]]).unwrap();
        let (c_switch, jumps) =
            switch_criticality(&u, &grad, &pricing, GradientSampling::ActiveSide).unwrap();
        assert_eq!(jumps.len(), 2);
        for jump in &jumps {
            assert!(jump.continuation_value.abs() < 1e-12);
            assert!(jump.score < 1e-12);
        }
        assert!(c_switch < 1e-12);
    }

    #[test]
    fn negative_continuation_at_the_start_scores_zero() {
        let pricing = [decay_benchmark_pricing()];
        // Active from the very first cell: a jump sits exactly at t0.
        let u = control(&[0.7, 0.7, 0.0, 0.0]);
        let grad = Mat::from_rows(&[vec![-2.0, -2.0, 0.0, 0.0]]).unwrap();
        let (_, jumps) =
            switch_criticality(&u, &grad, &pricing, GradientSampling::ActiveSide).unwrap();
        let start = jumps.iter().find(|s| s.boundary == 0).unwrap();
        assert!(start.continuation_value < 0.0);
        assert_eq!(start.score, 0.0);
    }

    #[test]
    fn positive_continuation_is_unscaled() {
        let pricing = [decay_benchmark_pricing()];
        let u = control(&[0.4, 0.0, 0.0, 0.0]);
        // Positive slope: even the cheapest active value has positive cost.
        let grad = Mat::from_rows(&[vec![1.0, 0.0, 0.0, 0.0]]).unwrap();
        let (c_switch, jumps) =
            switch_criticality(&u, &grad, &pricing, GradientSampling::ActiveSide).unwrap();
        let (_, expect) = pricing[0].continuation_min(1.0);
        assert!(expect > 0.0);
        // Both the jump at t0 and the off jump at boundary 1 see the same
        // cell gradient; the positive branch ignores the boundary scaling.
        for jump in &jumps {
            assert!((jump.score - expect).abs() < 1e-15);
        }
        assert!((c_switch - expect).abs() < 1e-15);
    }

    #[test]
    fn boundary_scaling_is_continuous_toward_the_start() {
        let pricing = [decay_benchmark_pricing()];
        let n = 100;
        let mut scores = Vec::new();
        for on_at in [40usize, 20, 10, 4, 1] {
            let mut values = vec![0.0; n];
            for v in values.iter_mut().skip(on_at) {
                *v = 0.7;
            }
            let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
            let u = ControlGrid::new(grid, Mat::from_rows(&[values]).unwrap()).unwrap();
            let grad = Mat::from_rows(&[vec![-2.0; n]]).unwrap();
            let (_, jumps) =
                switch_criticality(&u, &grad, &pricing, GradientSampling::ActiveSide).unwrap();
            let on_jump = jumps
                .iter()
                .find(|s| s.direction == JumpDirection::On)
                .unwrap();
            assert!(on_jump.continuation_value < 0.0);
            scores.push(on_jump.score);
        }
        for pair in scores.windows(2) {
            assert!(pair[1] < pair[0]);
        }
        assert!(scores.last().unwrap() < &0.02);
    }

    #[test]
    fn averaging_mode_uses_both_sides() {
        let pricing = [decay_benchmark_pricing()];
        let u = control(&[0.0, 0.7, 0.0]);
        let grad = Mat::from_rows(&[vec![-4.0, -2.0, 0.0]]).unwrap();
        let (_, jumps) =
            switch_criticality(&u, &grad, &pricing, GradientSampling::Average).unwrap();
        let on_jump = &jumps[0];
        let (_, expect) = pricing[0].continuation_min(-3.0);
        assert!((on_jump.continuation_value - expect).abs() < 1e-15);
    }

    #[test]
    fn averaging_mode_falls_back_to_one_side_at_the_horizon_ends() {
        let pricing = [decay_benchmark_pricing()];
        let u = control(&[0.7, 0.0, 0.7]);
        let grad = Mat::from_rows(&[vec![-1.0, -2.0, -3.0]]).unwrap();
        let (_, jumps) =
            switch_criticality(&u, &grad, &pricing, GradientSampling::Average).unwrap();
        let start = jumps.iter().find(|s| s.boundary == 0).unwrap();
        let end = jumps.iter().find(|s| s.boundary == 3).unwrap();
        let (_, v_start) = pricing[0].continuation_min(-1.0);
        let (_, v_end) = pricing[0].continuation_min(-3.0);
        assert!((start.continuation_value - v_start).abs() < 1e-15);
        assert!((end.continuation_value - v_end).abs() < 1e-15);
    }

    #[test]
    fn report_combines_parts_by_maximum() {
        let pricing = [decay_benchmark_pricing()];
        let u = control(&[0.0, 0.9, 0.0, 0.0]);
        let grad = Mat::from_rows(&[vec![0.0, -1.2, 0.0, 0.0]]).unwrap();
        let report = criticality(&u, &grad, &pricing, 1.0, GradientSampling::ActiveSide).unwrap();
        assert_eq!(report.c, report.c_prox.max(report.c_switch));
        assert!(report.c > 0.0);
    }

    #[test]
    fn zero_criticality_iff_stationary() {
        let pricing = [decay_benchmark_pricing()];
        let g = &pricing[0];
        let ustar = g.switch_value();
        // Stationary: active plateau at the switch value with the tangent
        // slope as gradient; both parts vanish.
        let u = control(&[0.0, ustar, ustar, 0.0]);
        let tangent_slope = -g.eval(ustar) / ustar;
        let grad = Mat::from_rows(&[vec![0.0, tangent_slope, tangent_slope, 0.0]]).unwrap();
        let report = criticality(&u, &grad, &pricing, 1.0, GradientSampling::ActiveSide).unwrap();
        // The proximal part is an exact fixed point; the switching part is
        // zero up to one rounding step of the tangent value.
        assert!(report.c_prox < 1e-28, "{}", report.c_prox);
        assert!(report.c < 1e-14, "{}", report.c);

        // Perturbing the gradient on the active set breaks stationarity.
        let grad = Mat::from_rows(&[vec![0.0, tangent_slope + 0.3, tangent_slope, 0.0]]).unwrap();
        let report = criticality(&u, &grad, &pricing, 1.0, GradientSampling::ActiveSide).unwrap();
        assert!(report.c > 1e-4);
    }
}
