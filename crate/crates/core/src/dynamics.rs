//! The smooth part of the objective: forward-Euler state simulation, the
//! discrete-adjoint gradient, and objective assembly.
//!
//! The Euler pairing is `y_{k+1} = y_k + dt·f(t_k, y_k, u_{k+1})`: the control
//! value of cell `j` drives the step into node `j`. Running costs are
//! integrated with left-endpoint sums (`dt·Σ l(t_k, y_k, u_{k+1})` over cells)
//! so that the adjoint recursion differentiates the discrete objective
//! exactly, to machine precision, rather than approximating the continuous
//! one. Gradients are reported divided by `dt`, matching the discretization
//! of an L² gradient by cell averages.

use std::sync::Arc;

use crate::error::Error;
use crate::grid::{ControlGrid, TimeGrid};
use crate::mat::Mat;
use crate::pricing::PricingFunction;
use crate::Result;

/// Right-hand side, Jacobians and objective terms of one control problem.
/// Implementations get the node index alongside the time so tabulated data
/// (like tracking targets) can be indexed exactly.
pub trait OdeSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn n_controls(&self) -> usize;
    fn initial_state(&self) -> Vec<f64>;
    fn state_names(&self) -> Vec<String>;

    /// `dy/dt` at `(t, y, u)`, written to `out` (length `state_dim`).
    fn rhs(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]);

    /// `∂f/∂y`, row-major `state_dim × state_dim`.
    fn jac_state(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]);

    /// `∂f/∂u`, row-major `state_dim × n_controls`.
    fn jac_control(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]);

    /// Running cost integrand at the left node of a cell.
    fn running_cost(&self, node: usize, y: &[f64], u: &[f64]) -> f64;
    fn running_cost_dy(&self, node: usize, y: &[f64], u: &[f64], out: &mut [f64]);
    fn running_cost_du(&self, node: usize, y: &[f64], u: &[f64], out: &mut [f64]);

    /// Terminal cost at the final node.
    fn terminal_cost(&self, y: &[f64]) -> f64;
    fn terminal_cost_dy(&self, y: &[f64], out: &mut [f64]);
}

/// Exponential decay benchmark: `y' = −(base + rate·u)·y` with relative
/// tracking of a target trajectory, a terminal penalty and a quadratic
/// control cost.
#[derive(Clone, Debug)]
pub struct DecayParams {
    pub y0: f64,
    pub base_rate: f64,
    pub control_rate: f64,
    pub weight_tracking: f64,
    pub weight_terminal: f64,
    pub weight_control: f64,
    /// Target state per node, length `n_cells + 1`, strictly positive (it
    /// divides the tracking residual).
    pub target: Vec<f64>,
}

impl OdeSystem for DecayParams {
    fn state_dim(&self) -> usize {
        1
    }

    fn n_controls(&self) -> usize {
        1
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.y0]
    }

    fn state_names(&self) -> Vec<String> {
        vec!["y".into()]
    }

    fn rhs(&self, _t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = -(self.base_rate + self.control_rate * u[0]) * y[0];
    }

    fn jac_state(&self, _t: f64, _y: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = -(self.base_rate + self.control_rate * u[0]);
    }

    fn jac_control(&self, _t: f64, y: &[f64], _u: &[f64], out: &mut [f64]) {
        out[0] = -self.control_rate * y[0];
    }

    fn running_cost(&self, node: usize, y: &[f64], u: &[f64]) -> f64 {
        let rel = (y[0] - self.target[node]) / self.target[node];
        0.5 * self.weight_tracking * rel * rel + 0.5 * self.weight_control * u[0] * u[0]
    }

    fn running_cost_dy(&self, node: usize, y: &[f64], _u: &[f64], out: &mut [f64]) {
        let d = self.target[node];
        out[0] = self.weight_tracking * (y[0] - d) / (d * d);
    }

    fn running_cost_du(&self, _node: usize, _y: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = self.weight_control * u[0];
    }

    fn terminal_cost(&self, y: &[f64]) -> f64 {
        let d = y[0] - self.target[self.target.len() - 1];
        0.5 * self.weight_terminal * d * d
    }

    fn terminal_cost_dy(&self, y: &[f64], out: &mut [f64]) {
        out[0] = self.weight_terminal * (y[0] - self.target[self.target.len() - 1]);
    }
}

/// SIR compartment model with two mitigation controls scaling down the
/// infection rate: `β(t) = β0·(1 − u1 − u2)`. The objective penalizes the
/// severity of the outbreak and the susceptibles left at the final time.
#[derive(Clone, Debug)]
pub struct SirParams {
    pub population: f64,
    pub beta0: f64,
    pub recovery_rate: f64,
    pub s0: f64,
    pub i0: f64,
    pub r0: f64,
    pub weight_infected: f64,
    pub weight_susceptible: f64,
}

impl SirParams {
    fn infection_pressure(&self, y: &[f64], u: &[f64]) -> (f64, f64) {
        let beta = self.beta0 * (1.0 - u[0] - u[1]);
        (beta, beta * y[0] * y[1] / self.population)
    }
}

impl OdeSystem for SirParams {
    fn state_dim(&self) -> usize {
        3
    }

    fn n_controls(&self) -> usize {
        2
    }

    fn initial_state(&self) -> Vec<f64> {
        vec![self.s0, self.i0, self.r0]
    }

    fn state_names(&self) -> Vec<String> {
        vec!["S".into(), "I".into(), "R".into()]
    }

    fn rhs(&self, _t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        let (_, inf) = self.infection_pressure(y, u);
        let rec = self.recovery_rate * y[1];
        out[0] = -inf;
        out[1] = inf - rec;
        out[2] = rec;
    }

    fn jac_state(&self, _t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        let beta = self.beta0 * (1.0 - u[0] - u[1]);
        let di_ds = beta * y[1] / self.population;
        let di_di = beta * y[0] / self.population;
        out.copy_from_slice(&[
            -di_ds,
            -di_di,
            0.0,
            di_ds,
            di_di - self.recovery_rate,
            0.0,
            0.0,
            self.recovery_rate,
            0.0,
        ]);
    }

    fn jac_control(&self, _t: f64, y: &[f64], _u: &[f64], out: &mut [f64]) {
        let pressure = self.beta0 * y[0] * y[1] / self.population;
        out.copy_from_slice(&[pressure, pressure, -pressure, -pressure, 0.0, 0.0]);
    }

    fn running_cost(&self, _node: usize, y: &[f64], _u: &[f64]) -> f64 {
        0.5 * self.weight_infected * y[1] * y[1]
    }

    fn running_cost_dy(&self, _node: usize, y: &[f64], _u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[0.0, self.weight_infected * y[1], 0.0]);
    }

    fn running_cost_du(&self, _node: usize, _y: &[f64], _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn terminal_cost(&self, y: &[f64]) -> f64 {
        0.5 * self.weight_susceptible * y[0] * y[0]
    }

    fn terminal_cost_dy(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&[self.weight_susceptible * y[0], 0.0, 0.0]);
    }
}

/// The dynamics behind a problem: a builtin benchmark or a user system.
#[derive(Clone)]
pub enum SystemKind {
    Decay(DecayParams),
    Sir(SirParams),
    Custom(Arc<dyn OdeSystem>),
}

impl std::fmt::Debug for SystemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemKind::Decay(_) => f.write_str("SystemKind::Decay"),
            SystemKind::Sir(_) => f.write_str("SystemKind::Sir"),
            SystemKind::Custom(_) => f.write_str("SystemKind::Custom"),
        }
    }
}

/// A full problem: dynamics, grid, pricing per control component, and the
/// weight charged per switch.
#[derive(Clone, Debug)]
pub struct ProblemSpec {
    grid: TimeGrid,
    pricing: Vec<PricingFunction>,
    switch_weight: f64,
    system: SystemKind,
}

impl ProblemSpec {
    pub fn new(
        grid: TimeGrid,
        pricing: Vec<PricingFunction>,
        switch_weight: f64,
        system: SystemKind,
    ) -> Result<Self> {
        if !(switch_weight >= 0.0) {
            return Err(Error::InvalidProblem(format!(
                "switch weight must be nonnegative, got {switch_weight}"
            )));
        }
        let spec = ProblemSpec {
            grid,
            pricing,
            switch_weight,
            system,
        };
        let sys = spec.system();
        if spec.pricing.len() != sys.n_controls() {
            return Err(Error::InvalidProblem(format!(
                "{} pricing functions for {} control components",
                spec.pricing.len(),
                sys.n_controls()
            )));
        }
        match &spec.system {
            SystemKind::Decay(p) => {
                if p.weight_tracking < 0.0 || p.weight_terminal < 0.0 || p.weight_control < 0.0 {
                    return Err(Error::InvalidProblem("negative objective weight".into()));
                }
                if p.target.len() != grid.n_cells() + 1 {
                    return Err(Error::InvalidProblem(format!(
                        "target has {} nodes, grid has {}",
                        p.target.len(),
                        grid.n_cells() + 1
                    )));
                }
                if p.target.iter().any(|&d| !(d > 0.0)) {
                    return Err(Error::InvalidProblem(
                        "target must be strictly positive".into(),
                    ));
                }
            }
            SystemKind::Sir(p) => {
                if p.weight_infected < 0.0 || p.weight_susceptible < 0.0 {
                    return Err(Error::InvalidProblem("negative objective weight".into()));
                }
                if p.s0 < 0.0 || p.i0 < 0.0 || p.r0 < 0.0 {
                    return Err(Error::InvalidProblem("negative initial compartment".into()));
                }
                let total = p.s0 + p.i0 + p.r0;
                if (total - p.population).abs() > 1e-9 * p.population.max(1.0) {
                    return Err(Error::InvalidProblem(format!(
                        "compartments sum to {total}, population is {}",
                        p.population
                    )));
                }
            }
            SystemKind::Custom(_) => {}
        }
        Ok(spec)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn pricing(&self) -> &[PricingFunction] {
        &self.pricing
    }

    pub fn switch_weight(&self) -> f64 {
        self.switch_weight
    }

    pub fn system(&self) -> &dyn OdeSystem {
        match &self.system {
            SystemKind::Decay(p) => p,
            SystemKind::Sir(p) => p,
            SystemKind::Custom(p) => p.as_ref(),
        }
    }

    pub fn system_kind(&self) -> &SystemKind {
        &self.system
    }

    pub fn n_controls(&self) -> usize {
        self.system().n_controls()
    }

    /// All-off initial iterate.
    pub fn zero_control(&self) -> ControlGrid {
        ControlGrid::zeros(self.grid, self.n_controls())
    }

    fn check_control(&self, u: &ControlGrid) -> Result<()> {
        if u.grid() != &self.grid || u.n_comp() != self.n_controls() {
            return Err(Error::ShapeMismatch {
                expected_rows: self.n_controls(),
                expected_cols: self.grid.n_cells(),
                rows: u.n_comp(),
                cols: u.n_cells(),
            });
        }
        Ok(())
    }
}

/// States at every node: `state_dim` rows, `n_cells + 1` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    states: Mat,
}

impl StateTrajectory {
    pub fn node(&self, k: usize) -> Vec<f64> {
        (0..self.states.rows()).map(|i| self.states.get(i, k)).collect()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        self.states.row(i)
    }

    pub fn n_nodes(&self) -> usize {
        self.states.cols()
    }

    pub fn state_dim(&self) -> usize {
        self.states.rows()
    }

    /// Writes `t,<name>,...` rows, one per node.
    pub fn to_csv(&self, grid: &TimeGrid, names: &[String]) -> String {
        let mut out = String::from("t");
        for name in names {
            out.push_str(&format!(",{name}"));
        }
        out.push('\n');
        for k in 0..self.n_nodes() {
            out.push_str(&format!("{}", grid.boundary_time(k)));
            for i in 0..self.state_dim() {
                out.push_str(&format!(",{}", self.states.get(i, k)));
            }
            out.push('\n');
        }
        out
    }
}

/// Explicit forward Euler over the whole horizon.
pub fn forward_state(spec: &ProblemSpec, u: &ControlGrid) -> Result<StateTrajectory> {
    spec.check_control(u)?;
    let sys = spec.system();
    let (dim, n) = (sys.state_dim(), spec.grid.n_cells());
    let dt = spec.grid.dt();
    let mut states = Mat::zeros(dim, n + 1);
    let mut y = sys.initial_state();
    for (i, &v) in y.iter().enumerate() {
        states.set(i, 0, v);
    }
    let mut rhs = vec![0.0; dim];
    let mut u_cell = vec![0.0; u.n_comp()];
    for j in 0..n {
        for (i, slot) in u_cell.iter_mut().enumerate() {
            *slot = u.get(i, j);
        }
        sys.rhs(spec.grid.boundary_time(j), &y, &u_cell, &mut rhs);
        for i in 0..dim {
            y[i] += dt * rhs[i];
            if !y[i].is_finite() {
                return Err(Error::NumericalBlowup {
                    context: "forward Euler",
                    step: j + 1,
                });
            }
            states.set(i, j + 1, y[i]);
        }
    }
    Ok(StateTrajectory { states })
}

/// The smooth objective part: left-endpoint running cost plus terminal cost.
pub fn smooth_objective(spec: &ProblemSpec, u: &ControlGrid) -> Result<f64> {
    let traj = forward_state(spec, u)?;
    Ok(smooth_objective_from_trajectory(spec, u, &traj))
}

pub fn smooth_objective_from_trajectory(
    spec: &ProblemSpec,
    u: &ControlGrid,
    traj: &StateTrajectory,
) -> f64 {
    let sys = spec.system();
    let n = spec.grid.n_cells();
    let dt = spec.grid.dt();
    let mut total = 0.0;
    let mut u_cell = vec![0.0; u.n_comp()];
    for j in 0..n {
        for (i, slot) in u_cell.iter_mut().enumerate() {
            *slot = u.get(i, j);
        }
        total += dt * sys.running_cost(j, &traj.node(j), &u_cell);
    }
    total + sys.terminal_cost(&traj.node(n))
}

/// Exact gradient of the discrete smooth objective with respect to the cell
/// values, divided by `dt`, via the reverse recursion of the Euler scheme.
pub fn gradient_adjoint(spec: &ProblemSpec, u: &ControlGrid) -> Result<Mat> {
    let traj = forward_state(spec, u)?;
    let sys = spec.system();
    let (dim, n_ctrl, n) = (sys.state_dim(), u.n_comp(), spec.grid.n_cells());
    let dt = spec.grid.dt();
    let mut grad = Mat::zeros(n_ctrl, n);

    let mut adjoint = vec![0.0; dim];
    sys.terminal_cost_dy(&traj.node(n), &mut adjoint);

    let mut jac_y = vec![0.0; dim * dim];
    let mut jac_u = vec![0.0; dim * n_ctrl];
    let mut l_dy = vec![0.0; dim];
    let mut l_du = vec![0.0; n_ctrl];
    let mut next = vec![0.0; dim];
    let mut u_cell = vec![0.0; n_ctrl];

    for k in (0..n).rev() {
        // Step k -> k+1 is driven by the control of cell k (zero-based).
        let y = traj.node(k);
        let t = spec.grid.boundary_time(k);
        for (i, slot) in u_cell.iter_mut().enumerate() {
            *slot = u.get(i, k);
        }
        sys.jac_control(t, &y, &u_cell, &mut jac_u);
        sys.running_cost_du(k, &y, &u_cell, &mut l_du);
        for c in 0..n_ctrl {
            let mut sensitivity = 0.0;
            for i in 0..dim {
                sensitivity += jac_u[i * n_ctrl + c] * adjoint[i];
            }
            if !(sensitivity + l_du[c]).is_finite() {
                return Err(Error::NumericalBlowup {
                    context: "adjoint recursion",
                    step: k + 1,
                });
            }
            grad.set(c, k, l_du[c] + sensitivity);
        }

        // adjoint_k = dt·l_y + (I + dt·J_y)ᵀ adjoint_{k+1}.
        sys.jac_state(t, &y, &u_cell, &mut jac_y);
        sys.running_cost_dy(k, &y, &u_cell, &mut l_dy);
        for i in 0..dim {
            let mut acc = adjoint[i] + dt * l_dy[i];
            for r in 0..dim {
                acc += dt * jac_y[r * dim + i] * adjoint[r];
            }
            next[i] = acc;
        }
        adjoint.copy_from_slice(&next);
    }
    Ok(grad)
}

/// The full objective: smooth part plus running pricing cost plus the
/// switch penalty on the total variation of the sign pattern.
pub fn full_objective(spec: &ProblemSpec, u: &ControlGrid) -> Result<f64> {
    let smooth = smooth_objective(spec, u)?;
    let running = u.running_cost(&spec.pricing);
    let switches = u.sign_pattern().total_variation() as f64;
    Ok(smooth + running + spec.switch_weight() * switches)
}

/// Exact solution of the decay dynamics under a piecewise-constant control
/// given by on-intervals, sampled at the grid nodes. Because the target is
/// evaluated in continuous time it does not depend on the solve grid, so a
/// refinement sweep approximates one fixed problem instead of re-targeting
/// every level.
pub fn decay_target_exact(
    grid: &TimeGrid,
    y0: f64,
    base_rate: f64,
    control_rate: f64,
    intervals: &[(f64, f64, f64)],
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(grid.n_cells() + 1);
    for k in 0..=grid.n_cells() {
        let t = grid.boundary_time(k);
        // ∫ u over [t0, t] for the interval control.
        let mut control_mass = 0.0;
        for &(from, to, level) in intervals {
            let overlap = (t.min(to) - from.max(grid.start())).max(0.0);
            control_mass += level * overlap;
        }
        let y = y0 * (-base_rate * (t - grid.start()) - control_rate * control_mass).exp();
        if !(y.is_finite() && y > 0.0) {
            return Err(Error::NumericalBlowup {
                context: "target generation",
                step: k,
            });
        }
        out.push(y);
    }
    Ok(out)
}

/// Simulates the decay dynamics under a generating control and returns the
/// node values, for use as a tracking target.
pub fn decay_target(
    grid: &TimeGrid,
    y0: f64,
    base_rate: f64,
    control_rate: f64,
    generating: &ControlGrid,
) -> Result<Vec<f64>> {
    let dt = grid.dt();
    let mut y = y0;
    let mut out = Vec::with_capacity(grid.n_cells() + 1);
    out.push(y);
    for j in 0..grid.n_cells() {
        y *= 1.0 - dt * (base_rate + control_rate * generating.get(0, j));
        if !y.is_finite() || y <= 0.0 {
            return Err(Error::NumericalBlowup {
                context: "target generation",
                step: j + 1,
            });
        }
        out.push(y);
    }
    Ok(out)
}
