//! The discrete control iterate: piecewise-constant controls on a uniform
//! time grid, their sign patterns, jump sets, and the masked norms used by
//! the trust-region model.
//!
//! Conventions: cell `j` (zero-based) covers `[t0 + j·dt, t0 + (j+1)·dt)`.
//! Sign patterns are zero-extended beyond both ends of the horizon, so a
//! control that is active in the first or last cell carries a jump at `t0`
//! or `T`. This makes the per-component variation count always even.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::mat::Mat;
use crate::pricing::PricingFunction;
use crate::Result;

/// Control values closer than this to `0` or to an interval endpoint are
/// snapped onto it, so rounding noise from proximal steps cannot turn an
/// admissible value into `+∞`.
pub const SNAP_TOL: f64 = 1e-12;

/// Uniform time grid on `[start, end]` with `n_cells` cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    start: f64,
    end: f64,
    n_cells: usize,
}

impl TimeGrid {
    pub fn new(start: f64, end: f64, n_cells: usize) -> Result<Self> {
        if !(end > start) {
            return Err(Error::InvalidGrid(format!(
                "time horizon [{start}, {end}] is empty"
            )));
        }
        if n_cells == 0 {
            return Err(Error::InvalidGrid("grid needs at least one cell".into()));
        }
        Ok(TimeGrid {
            start,
            end,
            n_cells,
        })
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Step length.
    pub fn dt(&self) -> f64 {
        (self.end - self.start) / self.n_cells as f64
    }

    /// Time of cell boundary `j ∈ {0, …, n_cells}`. The last boundary is
    /// exactly `end`, even when the step length is not representable.
    pub fn boundary_time(&self, j: usize) -> f64 {
        if j == self.n_cells {
            self.end
        } else {
            self.start + j as f64 * self.dt()
        }
    }
}

/// On/off indicator of a control, one entry per component and cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignPattern {
    n_comp: usize,
    n_cells: usize,
    bits: Vec<u8>,
}

impl SignPattern {
    pub fn new(n_comp: usize, n_cells: usize) -> Self {
        SignPattern {
            n_comp,
            n_cells,
            bits: vec![0; n_comp * n_cells],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let n_comp = rows.len();
        let n_cells = rows.first().map_or(0, Vec::len);
        let mut p = SignPattern::new(n_comp, n_cells);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                p.set(i, j, v != 0);
            }
        }
        p
    }

    pub fn n_comp(&self) -> usize {
        self.n_comp
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    #[inline]
    pub fn get(&self, comp: usize, cell: usize) -> bool {
        self.bits[comp * self.n_cells + cell] != 0
    }

    #[inline]
    pub fn set(&mut self, comp: usize, cell: usize, on: bool) {
        self.bits[comp * self.n_cells + cell] = on as u8;
    }

    /// The pattern of one cell packed into a bitmask over components.
    pub fn column_mask(&self, cell: usize) -> usize {
        let mut mask = 0;
        for comp in 0..self.n_comp {
            if self.get(comp, cell) {
                mask |= 1 << comp;
            }
        }
        mask
    }

    /// Per-component variation count under zero extension; always even.
    pub fn total_variation_per_component(&self) -> Vec<usize> {
        (0..self.n_comp)
            .map(|i| {
                let mut count = 0;
                let mut prev = false;
                for j in 0..self.n_cells {
                    let cur = self.get(i, j);
                    if cur != prev {
                        count += 1;
                    }
                    prev = cur;
                }
                if prev {
                    count += 1;
                }
                count
            })
            .collect()
    }

    /// Total variation summed over components.
    pub fn total_variation(&self) -> usize {
        self.total_variation_per_component().iter().sum()
    }

    /// Number of cells where the two patterns disagree.
    pub fn distance(&self, other: &SignPattern) -> usize {
        debug_assert_eq!(self.n_comp, other.n_comp);
        debug_assert_eq!(self.n_cells, other.n_cells);
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Direction of a sign change at a cell boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum JumpDirection {
    On,
    Off,
}

/// A single sign change: boundary index `j ∈ {0, …, n_cells}` at time
/// `start + j·dt`, separating cell `j−1` from cell `j`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Jump {
    pub boundary: usize,
    pub time: f64,
    pub direction: JumpDirection,
}

/// All sign changes of a control, per component, sorted by boundary index.
/// This is the minimal representation of the sign pattern: directions
/// alternate starting with `On` and each component has an even count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JumpSet {
    pub per_component: Vec<Vec<Jump>>,
}

impl JumpSet {
    pub fn iter(&self) -> impl Iterator<Item = (usize, &Jump)> {
        self.per_component
            .iter()
            .enumerate()
            .flat_map(|(i, jumps)| jumps.iter().map(move |j| (i, j)))
    }

    pub fn is_empty(&self) -> bool {
        self.per_component.iter().all(Vec::is_empty)
    }
}

/// The control iterate: one row per component, one column per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGrid {
    grid: TimeGrid,
    values: Mat,
}

impl ControlGrid {
    /// Wraps a value matrix without admissibility checks; use
    /// [`ControlGrid::snapped`] for external data.
    pub fn new(grid: TimeGrid, values: Mat) -> Result<Self> {
        if values.cols() != grid.n_cells() {
            return Err(Error::ShapeMismatch {
                expected_rows: values.rows(),
                expected_cols: grid.n_cells(),
                rows: values.rows(),
                cols: values.cols(),
            });
        }
        Ok(ControlGrid { grid, values })
    }

    /// All-off control.
    pub fn zeros(grid: TimeGrid, n_comp: usize) -> Self {
        ControlGrid {
            grid,
            values: Mat::zeros(n_comp, grid.n_cells()),
        }
    }

    /// Validates values against the pricing intervals, snapping entries
    /// within [`SNAP_TOL`] of `0`, `a_i` or `b_i` onto those points.
    pub fn snapped(grid: TimeGrid, mut values: Mat, pricing: &[PricingFunction]) -> Result<Self> {
        if values.rows() != pricing.len() {
            return Err(Error::ShapeMismatch {
                expected_rows: pricing.len(),
                expected_cols: grid.n_cells(),
                rows: values.rows(),
                cols: values.cols(),
            });
        }
        for (i, component) in pricing.iter().enumerate() {
            let (a, b) = (component.lower_bound(), component.upper_bound());
            for j in 0..values.cols() {
                let v = values.get(i, j);
                let snapped = if v.abs() <= SNAP_TOL {
                    0.0
                } else if (v - a).abs() <= SNAP_TOL {
                    a
                } else if (v - b).abs() <= SNAP_TOL {
                    b
                } else {
                    v
                };
                if snapped != 0.0 && !(a..=b).contains(&snapped) {
                    return Err(Error::InadmissibleControl {
                        component: i,
                        cell: j,
                        value: v,
                    });
                }
                values.set(i, j, snapped);
            }
        }
        ControlGrid::new(grid, values)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn n_comp(&self) -> usize {
        self.values.rows()
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    #[inline]
    pub fn get(&self, comp: usize, cell: usize) -> f64 {
        self.values.get(comp, cell)
    }

    /// Entrywise on/off indicator (`value > 0`).
    pub fn sign_pattern(&self) -> SignPattern {
        let mut p = SignPattern::new(self.n_comp(), self.n_cells());
        for (i, j, v) in self.values.entries() {
            p.set(i, j, v > 0.0);
        }
        p
    }

    /// Sorted sign changes per component, including the artificial jumps at
    /// the horizon ends when the first or last cell is active.
    pub fn jump_set(&self) -> JumpSet {
        let pattern = self.sign_pattern();
        let per_component = (0..self.n_comp())
            .map(|i| {
                let mut jumps = Vec::new();
                let mut prev = false;
                for j in 0..=self.n_cells() {
                    let cur = j < self.n_cells() && pattern.get(i, j);
                    if cur != prev {
                        jumps.push(Jump {
                            boundary: j,
                            time: self.grid.boundary_time(j),
                            direction: if cur { JumpDirection::On } else { JumpDirection::Off },
                        });
                    }
                    prev = cur;
                }
                jumps
            })
            .collect();
        JumpSet { per_component }
    }

    /// Smallest gap between consecutive sign changes of any component,
    /// capped at `cap`. Returns `cap` when no component switches twice.
    /// Diagnostic quantity; the solver does not consume it.
    pub fn minimal_gap(&self, cap: f64) -> f64 {
        let jumps = self.jump_set();
        let mut gap = cap;
        for comp in &jumps.per_component {
            for pair in comp.windows(2) {
                gap = gap.min(pair[1].time - pair[0].time);
            }
        }
        gap
    }

    /// `dt · Σ 1[u>0]·1[w>0]·(u − w)²`: the squared distance restricted to
    /// cells where both controls are active.
    pub fn masked_sq_norm(&self, other: &ControlGrid) -> Result<f64> {
        self.require_same_shape(other)?;
        let dt = self.grid.dt();
        let mut sum = 0.0;
        for (i, j, u) in self.values.entries() {
            let w = other.get(i, j);
            if u > 0.0 && w > 0.0 {
                sum += (u - w) * (u - w);
            }
        }
        Ok(dt * sum)
    }

    /// Number of cells whose on/off state differs between the two controls.
    /// Multiplying by `dt` gives the L¹ distance of the sign patterns.
    pub fn sign_l1_distance(&self, other: &ControlGrid) -> Result<usize> {
        self.require_same_shape(other)?;
        Ok(self.sign_pattern().distance(&other.sign_pattern()))
    }

    /// `dt · Σ g_i(u_ij)`; `+∞` as soon as one cell is inadmissible.
    pub fn running_cost(&self, pricing: &[PricingFunction]) -> f64 {
        let dt = self.grid.dt();
        let mut sum = 0.0;
        for (i, _, v) in self.values.entries() {
            sum += pricing[i].eval(v);
        }
        dt * sum
    }

    /// Writes `t,u1,...,uN` rows, one per cell left endpoint.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for i in 0..self.n_comp() {
            out.push_str(&format!(",u{}", i + 1));
        }
        out.push('\n');
        for j in 0..self.n_cells() {
            out.push_str(&format!("{}", self.grid.boundary_time(j)));
            for i in 0..self.n_comp() {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }

    fn require_same_shape(&self, other: &ControlGrid) -> Result<()> {
        other
            .values
            .require_shape(self.values.rows(), self.values.cols())
    }
}

/// Rebuilds the sign pattern encoded by a jump set (test helper and sanity
/// check for the minimal-representation round trip).
pub fn pattern_from_jumps(jumps: &JumpSet, n_cells: usize) -> SignPattern {
    let n_comp = jumps.per_component.len();
    let mut p = SignPattern::new(n_comp, n_cells);
    for (i, comp) in jumps.per_component.iter().enumerate() {
        for pair in comp.chunks(2) {
            let on = pair[0].boundary;
            let off = pair.get(1).map_or(n_cells, |j| j.boundary);
            for cell in on..off {
                p.set(i, cell, true);
            }
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pricing::decay_benchmark_pricing;

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(0.0, n as f64, n).unwrap()
    }

    fn control(values: &[f64]) -> ControlGrid {
        let g = grid(values.len());
        ControlGrid::new(g, Mat::from_rows(&[values.to_vec()]).unwrap()).unwrap()
    }

    #[test]
    fn last_boundary_lands_exactly_on_the_horizon_end() {
        // 1/49 is not representable; the accumulated product misses the end
        // by an ulp while the boundary accessor must not.
        let g = TimeGrid::new(0.0, 1.0, 49).unwrap();
        assert_ne!(49.0 * g.dt(), 1.0);
        assert_eq!(g.boundary_time(49), 1.0);
        assert_eq!(g.boundary_time(0), 0.0);
    }

    #[test]
    fn sign_pattern_is_strict_positivity() {
        let u = control(&[0.0, 0.5, 0.0]);
        let p = u.sign_pattern();
        assert!(!p.get(0, 0) && p.get(0, 1) && !p.get(0, 2));
        assert_eq!(control(&[0.0, 0.0]).sign_pattern().total_variation(), 0);
        let p = control(&[0.3, 1.0]).sign_pattern();
        assert!(p.get(0, 0) && p.get(0, 1));
    }

    #[test]
    fn total_variation_counts_boundary_jumps() {
        assert_eq!(SignPattern::from_rows(&[vec![0, 1, 1, 0]]).total_variation(), 2);
        // An always-on control jumps at both horizon ends.
        assert_eq!(SignPattern::from_rows(&[vec![1, 1, 1]]).total_variation(), 2);
        assert_eq!(SignPattern::from_rows(&[vec![0, 0]]).total_variation(), 0);
        assert_eq!(
            SignPattern::from_rows(&[vec![1, 0, 1], vec![1, 1, 1]])
                .total_variation_per_component(),
            vec![4, 2]
        );
    }

    #[test]
    fn jump_set_matches_hand_enumeration() {
        let u = control(&[0.0, 0.5, 0.5, 0.0, 0.5]);
        let jumps = u.jump_set();
        let got: Vec<_> = jumps.per_component[0]
            .iter()
            .map(|j| (j.boundary, j.direction))
            .collect();
        assert_eq!(
            got,
            vec![
                (1, JumpDirection::On),
                (3, JumpDirection::Off),
                (4, JumpDirection::On),
                (5, JumpDirection::Off),
            ]
        );
        assert!(control(&[0.0, 0.0]).jump_set().is_empty());
        let all_on = control(&[1.0, 1.0, 1.0]);
        let got: Vec<_> = all_on.jump_set().per_component[0]
            .iter()
            .map(|j| j.boundary)
            .collect();
        assert_eq!(got, vec![0, 3]);
    }

    #[test]
    fn jump_set_round_trips_to_pattern() {
        let u = control(&[0.5, 0.0, 0.4, 0.4, 0.0, 0.0, 1.0]);
        let rebuilt = pattern_from_jumps(&u.jump_set(), u.n_cells());
        assert_eq!(rebuilt, u.sign_pattern());
    }

    #[test]
    fn minimal_gap_examples() {
        // Jumps at times 2, 4, 6, 9: gaps 2, 2, 3.
        let mut values = vec![0.0; 10];
        values[2..4].fill(0.5);
        values[6..9].fill(0.5);
        let u = control(&values);
        assert_eq!(u.minimal_gap(1.0), 1.0);
        assert_eq!(u.minimal_gap(10.0), 2.0);
        assert_eq!(control(&[0.0, 0.0]).minimal_gap(0.5), 0.5);
    }

    #[test]
    fn masked_norm_only_sees_shared_support() {
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let u = ControlGrid::new(g, Mat::from_rows(&[vec![0.4, 0.0]]).unwrap()).unwrap();
        let w = ControlGrid::new(g, Mat::from_rows(&[vec![0.6, 0.3]]).unwrap()).unwrap();
        let val = u.masked_sq_norm(&w).unwrap();
        assert!((val - 0.5 * 0.04).abs() < 1e-15);
        // Disjoint supports and identical controls give zero.
        let v = ControlGrid::new(g, Mat::from_rows(&[vec![0.0, 0.9]]).unwrap()).unwrap();
        assert_eq!(u.masked_sq_norm(&v).unwrap(), 0.0);
        assert_eq!(u.masked_sq_norm(&u).unwrap(), 0.0);
    }

    #[test]
    fn sign_distance_counts_flipped_cells() {
        let u = control(&[0.5, 0.0, 0.5]);
        let w = control(&[0.5, 0.0, 0.0]);
        assert_eq!(u.sign_l1_distance(&u).unwrap(), 0);
        assert_eq!(u.sign_l1_distance(&w).unwrap(), 1);
        let z = control(&[0.0, 0.0, 0.0]);
        assert_eq!(u.sign_l1_distance(&z).unwrap(), 2);
    }

    #[test]
    fn running_cost_uses_pricing() {
        let pricing = [decay_benchmark_pricing()];
        let zero = control(&[0.0, 0.0]);
        assert_eq!(zero.running_cost(&pricing), 0.0);
        let single = control(&[0.5]);
        assert!((single.running_cost(&pricing) - 0.325).abs() < 1e-15);
        let bad = control(&[0.1]);
        assert_eq!(bad.running_cost(&pricing), f64::INFINITY);
    }

    #[test]
    fn snapping_repairs_float_noise_and_rejects_real_violations() {
        let pricing = [decay_benchmark_pricing()];
        let g = grid(3);
        let m = Mat::from_rows(&[vec![1e-13, 0.3 - 1e-13, 1.0 + 1e-13]]).unwrap();
        let u = ControlGrid::snapped(g, m, &pricing).unwrap();
        assert_eq!(u.get(0, 0), 0.0);
        assert_eq!(u.get(0, 1), 0.3);
        assert_eq!(u.get(0, 2), 1.0);

        let m = Mat::from_rows(&[vec![0.1, 0.0, 0.0]]).unwrap();
        assert!(matches!(
            ControlGrid::snapped(g, m, &pricing),
            Err(Error::InadmissibleControl { cell: 0, .. })
        ));
    }

    #[test]
    fn csv_has_left_endpoints() {
        let g = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let u = ControlGrid::new(g, Mat::from_rows(&[vec![0.5, 0.0]]).unwrap()).unwrap();
        assert_eq!(u.to_csv(), "t,u1\n0,0.5\n0.5,0\n");
    }
}
