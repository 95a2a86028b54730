//! Exact minimization of the trust-region model over sign patterns.
//!
//! The model decouples across cells once the per-cell on/off decision is
//! fixed: an active cell takes either a proximal step (if it was already
//! active) or the best continuation value against the linearized smooth cost
//! (if it switches on), and an inactive cell contributes nothing. What
//! remains is a shortest-path problem over per-cell sign vectors with
//! switch costs on transitions and a budget on how many cells may flip,
//! solved exactly by a value-function recursion over the time axis.
//!
//! The value function is indexed by `(cell, sign vector, flips spent)`; the
//! flip budget enters as an exact resource so a table built once at a large
//! cap can be re-queried at any smaller budget without rebuilding.

use crate::error::Error;
use crate::grid::ControlGrid;
use crate::mat::Mat;
use crate::pricing::PricingFunction;
use crate::Result;

/// Sign vectors are bitmasks over components; tables are dense in them.
const MAX_COMPONENTS: usize = 16;
/// Cap on exhaustive enumeration for the brute-force oracle.
const MAX_BRUTE_FORCE_CELLS: usize = 24;

/// Candidate value and stage cost of one cell/component decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageCandidate {
    /// Control value taken when the component is active in this cell.
    pub value: f64,
    /// Contribution `dt·(grad·w + g(w) + mask·(u − w)²/(2Δ))` to the model.
    pub cost: f64,
}

/// One trust-region subproblem: current iterate, gradient, proximal step
/// length, pricing, switch weight, and the largest budget tables will serve.
pub struct ModelInstance<'a> {
    control: &'a ControlGrid,
    grad: &'a Mat,
    prox_step: f64,
    pricing: &'a [PricingFunction],
    switch_weight: f64,
    budget_cap: usize,
}

impl<'a> ModelInstance<'a> {
    pub fn new(
        control: &'a ControlGrid,
        grad: &'a Mat,
        prox_step: f64,
        pricing: &'a [PricingFunction],
        switch_weight: f64,
        budget_cap: usize,
    ) -> Result<Self> {
        grad.require_shape(control.n_comp(), control.n_cells())?;
        if pricing.len() != control.n_comp() {
            return Err(Error::ShapeMismatch {
                expected_rows: control.n_comp(),
                expected_cols: control.n_cells(),
                rows: pricing.len(),
                cols: control.n_cells(),
            });
        }
        if !(prox_step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "proximal step must be positive, got {prox_step}"
            )));
        }
        if control.n_comp() > MAX_COMPONENTS {
            return Err(Error::InstanceTooLarge {
                cells: control.n_comp(),
                max: MAX_COMPONENTS,
            });
        }
        // No pattern within the horizon can flip more cells than exist.
        let budget_cap = budget_cap.min(control.n_comp() * control.n_cells());
        Ok(ModelInstance {
            control,
            grad,
            prox_step,
            pricing,
            switch_weight,
            budget_cap,
        })
    }

    pub fn control(&self) -> &ControlGrid {
        self.control
    }

    pub fn budget_cap(&self) -> usize {
        self.budget_cap
    }

    pub fn switch_weight(&self) -> f64 {
        self.switch_weight
    }

    /// Optimal value and stage cost of component `comp` in cell `cell` for a
    /// fixed on/off decision. Off cells cost nothing since the pricing
    /// vanishes at the origin. An already-active component takes the
    /// proximal gradient point; a newly activated one takes the minimizer
    /// of `grad·v + g(v)`.
    pub fn stage_candidate(&self, comp: usize, cell: usize, on: bool) -> StageCandidate {
        if !on {
            return StageCandidate {
                value: 0.0,
                cost: 0.0,
            };
        }
        let dt = self.control.grid().dt();
        let u = self.control.get(comp, cell);
        let g = self.grad.get(comp, cell);
        let pricing = &self.pricing[comp];
        if u > 0.0 {
            let w = pricing.prox(self.prox_step, u - self.prox_step * g);
            let quad = (u - w) * (u - w) / (2.0 * self.prox_step);
            StageCandidate {
                value: w,
                cost: dt * (g * w + pricing.eval_active(w) + quad),
            }
        } else {
            let (w, v) = pricing.continuation_min(g);
            StageCandidate {
                value: w,
                cost: dt * v,
            }
        }
    }

    /// Evaluates the (constant-dropped) model at a candidate control:
    /// `dt·Σ (grad·w + g(w) + 1[u>0]1[w>0]·(u − w)²/(2Δ))` plus the switch
    /// weight times the total variation of the candidate's sign pattern.
    /// Returns `+∞` for inadmissible candidates.
    pub fn model_value(&self, w: &ControlGrid) -> Result<f64> {
        w.values()
            .require_shape(self.control.n_comp(), self.control.n_cells())?;
        let dt = self.control.grid().dt();
        let mut sum = 0.0;
        for (i, j, wv) in w.values().entries() {
            let cost = self.pricing[i].eval(wv);
            if cost == f64::INFINITY {
                return Ok(f64::INFINITY);
            }
            let uv = self.control.get(i, j);
            let mut cell = self.grad.get(i, j) * wv + cost;
            if uv > 0.0 && wv > 0.0 {
                cell += (uv - wv) * (uv - wv) / (2.0 * self.prox_step);
            }
            sum += cell;
        }
        let switches = w.sign_pattern().total_variation() as f64;
        Ok(dt * sum + self.switch_weight * switches)
    }

    /// Builds the value function and predecessor tables up to the cap.
    pub fn build_tables(&self) -> ValueTables {
        let n_comp = self.control.n_comp();
        let n_cells = self.control.n_cells();
        let n_patterns = 1usize << n_comp;
        let width = self.budget_cap + 1;

        // Per-cell candidates for "component on"; off cells are free.
        let mut on_values = Mat::zeros(n_comp, n_cells);
        let mut on_costs = Mat::zeros(n_comp, n_cells);
        for i in 0..n_comp {
            for j in 0..n_cells {
                let cand = self.stage_candidate(i, j, true);
                on_values.set(i, j, cand.value);
                on_costs.set(i, j, cand.cost);
            }
        }

        // Stage cost and flip count per (cell, sign vector).
        let u_pattern = self.control.sign_pattern();
        let mut stage_cost = vec![0.0; n_cells * n_patterns];
        let mut stage_flips = vec![0u32; n_cells * n_patterns];
        let mut u_masks = vec![0usize; n_cells];
        for j in 0..n_cells {
            let u_mask = u_pattern.column_mask(j);
            u_masks[j] = u_mask;
            for alpha in 0..n_patterns {
                let mut cost = 0.0;
                for i in 0..n_comp {
                    if alpha & (1 << i) != 0 {
                        cost += on_costs.get(i, j);
                    }
                }
                stage_cost[j * n_patterns + alpha] = cost;
                stage_flips[j * n_patterns + alpha] = (u_mask ^ alpha).count_ones();
            }
        }

        let mut phi = vec![f64::INFINITY; n_cells * n_patterns * width];
        let mut psi = vec![0u32; n_cells * n_patterns * width];
        let idx = |cell: usize, alpha: usize, b: usize| (cell * n_patterns + alpha) * width + b;

        // First cell: the budget must exactly pay for its flips, and the
        // jump at the start of the horizon is charged here.
        for alpha in 0..n_patterns {
            let flips = stage_flips[alpha] as usize;
            if flips <= self.budget_cap {
                phi[idx(0, alpha, flips)] =
                    stage_cost[alpha] + self.switch_weight * (alpha.count_ones() as f64);
            }
        }

        for cell in 1..n_cells {
            for alpha in 0..n_patterns {
                let flips = stage_flips[cell * n_patterns + alpha] as usize;
                let stage = stage_cost[cell * n_patterns + alpha];
                for b in flips..width {
                    let remaining = b - flips;
                    let mut best = f64::INFINITY;
                    let mut best_beta = 0u32;
                    for beta in 0..n_patterns {
                        let prev = phi[idx(cell - 1, beta, remaining)];
                        if prev == f64::INFINITY {
                            continue;
                        }
                        let transition =
                            self.switch_weight * ((beta ^ alpha).count_ones() as f64);
                        let total = prev + transition;
                        if total < best {
                            best = total;
                            best_beta = beta as u32;
                        }
                    }
                    if best < f64::INFINITY {
                        phi[idx(cell, alpha, b)] = best + stage;
                        psi[idx(cell, alpha, b)] = best_beta;
                    }
                }
            }
        }

        ValueTables {
            n_comp,
            n_cells,
            n_patterns,
            cap: self.budget_cap,
            phi,
            psi,
            on_values,
            stage_flips,
            u_masks,
        }
    }
}

/// The value function `phi(cell, sign vector, flips)`, predecessor pointers,
/// and cached per-cell candidates. Built once per (iterate, step length);
/// extraction at any budget below the cap is cheap.
pub struct ValueTables {
    n_comp: usize,
    n_cells: usize,
    n_patterns: usize,
    cap: usize,
    phi: Vec<f64>,
    psi: Vec<u32>,
    on_values: Mat,
    stage_flips: Vec<u32>,
    u_masks: Vec<usize>,
}

/// Result of one subproblem extraction.
#[derive(Clone, Debug)]
pub struct DpSolution {
    /// The minimizing control.
    pub control: ControlGrid,
    /// Model value at the minimizer (constant terms dropped).
    pub value: f64,
    /// Sign flips actually spent, `≤` the queried budget.
    pub flips_used: usize,
    /// Per-cell sign vectors of the minimizer.
    pub pattern: Vec<usize>,
}

impl ValueTables {
    pub fn cap(&self) -> usize {
        self.cap
    }

    #[inline]
    fn idx(&self, cell: usize, alpha: usize, b: usize) -> usize {
        (cell * self.n_patterns + alpha) * (self.cap + 1) + b
    }

    /// Minimizes the model over all patterns within `budget` flips of the
    /// iterate's pattern. Ties resolve to the smallest sign vector, then the
    /// smaller spent budget, so runs are reproducible.
    pub fn extract(&self, inst: &ModelInstance<'_>, budget: usize) -> Result<DpSolution> {
        if budget > self.cap {
            return Err(Error::BudgetExceedsCap {
                requested: budget,
                cap: self.cap,
            });
        }
        let last = self.n_cells - 1;
        let mut best = f64::INFINITY;
        let mut best_alpha = 0usize;
        let mut best_b = 0usize;
        for alpha in 0..self.n_patterns {
            let terminal = inst.switch_weight * (alpha.count_ones() as f64);
            for b in 0..=budget {
                let v = self.phi[self.idx(last, alpha, b)];
                if v == f64::INFINITY {
                    continue;
                }
                let total = v + terminal;
                if total < best {
                    best = total;
                    best_alpha = alpha;
                    best_b = b;
                }
            }
        }
        debug_assert!(
            best < f64::INFINITY,
            "keeping the iterate's own pattern costs zero flips and is always feasible"
        );

        let mut pattern = vec![0usize; self.n_cells];
        pattern[last] = best_alpha;
        let mut b = best_b;
        for cell in (1..=last).rev() {
            let beta = self.psi[self.idx(cell, pattern[cell], b)] as usize;
            b -= self.stage_flips[cell * self.n_patterns + pattern[cell]] as usize;
            pattern[cell - 1] = beta;
        }

        let mut values = Mat::zeros(self.n_comp, self.n_cells);
        for (j, &alpha) in pattern.iter().enumerate() {
            for i in 0..self.n_comp {
                if alpha & (1 << i) != 0 {
                    values.set(i, j, self.on_values.get(i, j));
                }
            }
        }
        let control = ControlGrid::new(*inst.control().grid(), values)?;
        let flips_used = pattern
            .iter()
            .enumerate()
            .map(|(j, &alpha)| (self.u_masks[j] ^ alpha).count_ones() as usize)
            .sum();
        Ok(DpSolution {
            control,
            value: best,
            flips_used,
            pattern,
        })
    }

    /// All finite value-function entries as `(cell, sign vector, flips,
    /// value)`, for diagnostics.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        (0..self.n_cells).flat_map(move |cell| {
            (0..self.n_patterns).flat_map(move |alpha| {
                (0..=self.cap).filter_map(move |b| {
                    let v = self.phi[self.idx(cell, alpha, b)];
                    (v != f64::INFINITY).then_some((cell, alpha, b, v))
                })
            })
        })
    }
}

/// Exhaustive oracle: enumerates every sign pattern within the budget and
/// evaluates the model on the per-pattern optimal control. Independent of
/// the value-function recursion; intended for tests and verification.
pub fn brute_force_subproblem(
    inst: &ModelInstance<'_>,
    budget: usize,
) -> Result<(ControlGrid, f64)> {
    let n_comp = inst.control.n_comp();
    let n_cells = inst.control.n_cells();
    let total_cells = n_comp * n_cells;
    if total_cells > MAX_BRUTE_FORCE_CELLS {
        return Err(Error::InstanceTooLarge {
            cells: total_cells,
            max: MAX_BRUTE_FORCE_CELLS,
        });
    }

    // Bit k of a configuration encodes component k / n_cells, cell k % n_cells.
    let u_pattern = inst.control.sign_pattern();
    let mut u_bits = 0usize;
    for i in 0..n_comp {
        for j in 0..n_cells {
            if u_pattern.get(i, j) {
                u_bits |= 1 << (i * n_cells + j);
            }
        }
    }

    let mut on_values = Mat::zeros(n_comp, n_cells);
    for i in 0..n_comp {
        for j in 0..n_cells {
            on_values.set(i, j, inst.stage_candidate(i, j, true).value);
        }
    }

    let mut best_value = f64::INFINITY;
    let mut best_control = None;
    for config in 0usize..(1 << total_cells) {
        if (config ^ u_bits).count_ones() as usize > budget {
            continue;
        }
        let mut values = Mat::zeros(n_comp, n_cells);
        for i in 0..n_comp {
            for j in 0..n_cells {
                if config & (1 << (i * n_cells + j)) != 0 {
                    values.set(i, j, on_values.get(i, j));
                }
            }
        }
        let candidate = ControlGrid::new(*inst.control.grid(), values)?;
        let value = inst.model_value(&candidate)?;
        if value < best_value {
            best_value = value;
            best_control = Some(candidate);
        }
    }
    Ok((
        best_control.expect("the iterate's own pattern is always within budget"),
        best_value,
    ))
}
