//! Scalar convex pricing functions on `{0} ∪ [a, b]`.
//!
//! A pricing function charges zero when the control is off, a piecewise
//! quadratic convex cost while it is active, and `+∞` everywhere else. All
//! minimizations used by the solver (proximal map, best continuation value,
//! switch value) are evaluated in closed form per piece and resolved by
//! candidate enumeration, so results are exact up to rounding even at
//! nondifferentiable joints.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Tolerance for continuity of piece values at shared endpoints.
const JOINT_TOL: f64 = 1e-12;
/// Slack allowed when checking that one-sided derivatives are nondecreasing.
const CONVEXITY_TOL: f64 = 1e-9;

/// One quadratic piece `c2·x² + c1·x + c0` on the sub-interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuadPiece {
    pub lo: f64,
    pub hi: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl QuadPiece {
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (self.c2 * x + self.c1) * x + self.c0
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        2.0 * self.c2 * x + self.c1
    }
}

/// Convex cost on `{0} ∪ [lower, upper]`, `+∞` elsewhere, with `g(0) = 0`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PricingFunction {
    lower: f64,
    upper: f64,
    pieces: Vec<QuadPiece>,
    /// Declared strong-convexity constant; only used for validation and
    /// diagnostics. Zero admits flat or linear pieces, in which case argmin
    /// ties are broken toward the smallest point.
    convexity_floor: f64,
}

impl PricingFunction {
    /// Builds and validates a pricing function. The pieces must tile
    /// `[lower, upper]` exactly, agree in value at shared endpoints, and have
    /// nondecreasing one-sided derivatives (convexity).
    pub fn new(
        lower: f64,
        upper: f64,
        pieces: Vec<QuadPiece>,
        convexity_floor: f64,
    ) -> Result<Self> {
        if !(lower > 0.0) {
            return Err(Error::InvalidPricing(format!(
                "lower active bound must be positive, got {lower}"
            )));
        }
        if !(upper >= lower) {
            return Err(Error::InvalidPricing(format!(
                "upper bound {upper} below lower bound {lower}"
            )));
        }
        if !(convexity_floor >= 0.0) {
            return Err(Error::InvalidPricing(format!(
                "convexity floor must be nonnegative, got {convexity_floor}"
            )));
        }
        if pieces.is_empty() {
            return Err(Error::InvalidPricing("no pieces given".into()));
        }
        if (pieces[0].lo - lower).abs() > JOINT_TOL {
            return Err(Error::InvalidPricing(format!(
                "first piece starts at {} instead of {lower}",
                pieces[0].lo
            )));
        }
        if (pieces[pieces.len() - 1].hi - upper).abs() > JOINT_TOL {
            return Err(Error::InvalidPricing(format!(
                "last piece ends at {} instead of {upper}",
                pieces[pieces.len() - 1].hi
            )));
        }
        for (k, piece) in pieces.iter().enumerate() {
            if !(piece.hi >= piece.lo) {
                return Err(Error::InvalidPricing(format!(
                    "piece {k} has empty interval [{}, {}]",
                    piece.lo, piece.hi
                )));
            }
            if piece.c2 < -CONVEXITY_TOL {
                return Err(Error::InvalidPricing(format!(
                    "piece {k} has negative curvature {}",
                    2.0 * piece.c2
                )));
            }
            if 2.0 * piece.c2 + CONVEXITY_TOL < convexity_floor {
                return Err(Error::InvalidPricing(format!(
                    "piece {k} curvature {} is below the declared floor {convexity_floor}",
                    2.0 * piece.c2
                )));
            }
        }
        for k in 1..pieces.len() {
            let (left, right) = (&pieces[k - 1], &pieces[k]);
            if (left.hi - right.lo).abs() > JOINT_TOL {
                return Err(Error::InvalidPricing(format!(
                    "pieces {} and {k} do not share an endpoint",
                    k - 1
                )));
            }
            let joint = left.hi;
            if (left.value(joint) - right.value(joint)).abs() > JOINT_TOL {
                return Err(Error::InvalidPricing(format!(
                    "value jump of {} at joint {joint}",
                    left.value(joint) - right.value(joint)
                )));
            }
            if left.derivative(joint) > right.derivative(joint) + CONVEXITY_TOL {
                return Err(Error::InvalidPricing(format!(
                    "derivative decreases across joint {joint}: {} > {}",
                    left.derivative(joint),
                    right.derivative(joint)
                )));
            }
        }
        Ok(PricingFunction {
            lower,
            upper,
            pieces,
            convexity_floor,
        })
    }

    /// Single quadratic piece on the whole active interval.
    pub fn quadratic(lower: f64, upper: f64, c2: f64, c1: f64, c0: f64) -> Result<Self> {
        Self::new(
            lower,
            upper,
            vec![QuadPiece {
                lo: lower,
                hi: upper,
                c2,
                c1,
                c0,
            }],
            2.0 * c2,
        )
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    pub fn pieces(&self) -> &[QuadPiece] {
        &self.pieces
    }

    pub fn convexity_floor(&self) -> f64 {
        self.convexity_floor
    }

    /// Maximal slope magnitude over the active interval. Diagnostic only.
    pub fn max_slope(&self) -> f64 {
        self.pieces
            .iter()
            .flat_map(|p| [p.derivative(p.lo).abs(), p.derivative(p.hi).abs()])
            .fold(0.0, f64::max)
    }

    /// Whether `x` lies in `{0} ∪ [lower, upper]`.
    pub fn admits(&self, x: f64) -> bool {
        x == 0.0 || (self.lower..=self.upper).contains(&x)
    }

    /// Evaluates the full cost: `0` at the origin, the piece value on the
    /// active interval, `+∞` elsewhere. Total function, never panics.
    pub fn eval(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        if x < self.lower || x > self.upper {
            return f64::INFINITY;
        }
        self.piece_at(x).value(x)
    }

    /// Evaluates the active branch only (`+∞` off `[lower, upper]`,
    /// including at the origin).
    pub fn eval_active(&self, x: f64) -> f64 {
        if x < self.lower || x > self.upper {
            return f64::INFINITY;
        }
        self.piece_at(x).value(x)
    }

    fn piece_at(&self, x: f64) -> &QuadPiece {
        // Pieces are few (1-3 in practice); a linear scan is exact and cheap.
        for piece in &self.pieces {
            if x <= piece.hi {
                return piece;
            }
        }
        self.pieces.last().expect("validated nonempty")
    }

    /// Proximal map of the active branch: the minimizer over `[lower, upper]`
    /// of `g(w) + (w − x)² / (2·step)`.
    ///
    /// Each piece contributes its clamped interior stationary point
    /// `(x − step·c1) / (1 + 2·c2·step)` as a candidate; the best candidate
    /// wins, with ties resolved toward the smallest point. The quadratic
    /// penalty makes the objective strictly convex, so ties only occur
    /// between representations of the same minimizer.
    pub fn prox(&self, step: f64, x: f64) -> f64 {
        debug_assert!(step > 0.0, "prox step must be positive");
        let mut best_w = f64::NAN;
        let mut best_v = f64::INFINITY;
        for piece in &self.pieces {
            let w = ((x - step * piece.c1) / (1.0 + 2.0 * piece.c2 * step))
                .clamp(piece.lo, piece.hi);
            let v = piece.value(w) + (w - x) * (w - x) / (2.0 * step);
            if v < best_v || (v == best_v && w < best_w) {
                best_v = v;
                best_w = w;
            }
        }
        best_w
    }

    /// Minimizes `slope·w + g(w)` over the active interval; returns the
    /// minimizer and the minimum value. This is the optimal continuation of
    /// an active control against a linearized smooth cost.
    pub fn continuation_min(&self, slope: f64) -> (f64, f64) {
        let mut best_w = f64::NAN;
        let mut best_v = f64::INFINITY;
        for piece in &self.pieces {
            let w = if piece.c2 > 0.0 {
                (-(slope + piece.c1) / (2.0 * piece.c2)).clamp(piece.lo, piece.hi)
            } else if slope + piece.c1 >= 0.0 {
                // Linear piece sloping up (or flat): smallest point wins.
                piece.lo
            } else {
                piece.hi
            };
            let v = slope * w + piece.value(w);
            if v < best_v || (v == best_v && w < best_w) {
                best_v = v;
                best_w = w;
            }
        }
        (best_w, best_v)
    }

    /// The switch value: the minimizer of `g(v)/v` on the active interval,
    /// i.e. the point where a tangent of the cost passes through the origin.
    /// Optimal controls can only switch on or off at this value at interior
    /// switching times.
    pub fn switch_value(&self) -> f64 {
        let mut best_w = f64::NAN;
        let mut best_v = f64::INFINITY;
        let mut consider = |w: f64, piece: &QuadPiece| {
            let v = piece.value(w) / w;
            if v < best_v || (v == best_v && w < best_w) {
                best_v = v;
                best_w = w;
            }
        };
        for piece in &self.pieces {
            // d/dv [c2·v + c1 + c0/v] = c2 − c0/v² vanishes at v = √(c0/c2).
            if piece.c2 > 0.0 && piece.c0 > 0.0 {
                let w = (piece.c0 / piece.c2).sqrt();
                if w >= piece.lo && w <= piece.hi {
                    consider(w, piece);
                }
            }
            consider(piece.lo, piece);
            consider(piece.hi, piece);
        }
        best_w
    }

    /// One-sided derivatives `(left, right)` of the active branch at `x`;
    /// they differ only at nondifferentiable joints.
    pub fn one_sided_derivatives(&self, x: f64) -> (f64, f64) {
        let mut left = f64::NEG_INFINITY;
        let mut right = f64::INFINITY;
        for piece in &self.pieces {
            if x > piece.lo && x <= piece.hi {
                left = left.max(piece.derivative(x));
            }
            if x >= piece.lo && x < piece.hi {
                right = right.min(piece.derivative(x));
            }
        }
        if x == self.lower {
            left = f64::NEG_INFINITY;
        }
        if x == self.upper {
            right = f64::INFINITY;
        }
        (left, right)
    }
}

/// The decay benchmark's pricing function `0.7x² − 0.5x + 0.4` on `[0.3, 1]`.
pub fn decay_benchmark_pricing() -> PricingFunction {
    PricingFunction::quadratic(0.3, 1.0, 0.7, -0.5, 0.4).expect("valid by construction")
}
