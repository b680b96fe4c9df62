//! Posterior mode search used to place the sampler's starting point.
//!
//! The search alternates Nelder-Mead and L-BFGS in an unconstrained
//! coordinate system: log of every regime's transmission rate (the alpha
//! partial sums), logit of the impulse fraction and log of the three rates.
//! Every point of that space maps back into the posterior support.

use std::cell::Cell;

use argmin::core::{CostFunction, Error as ArgminError, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::neldermead::NelderMead;
use argmin::solver::quasinewton::LBFGS;

use crate::dynamics::ParameterVector;
use crate::model::ModelContext;

#[derive(Debug, thiserror::Error)]
pub enum OptimizeError {
    #[error("starting point is outside the posterior support")]
    InfeasibleStart,
    #[error("optimizer failed: {0}")]
    Solver(String),
}

/// Maps a support point to unconstrained coordinates.
pub fn to_unconstrained(params: &ParameterVector) -> Vec<f64> {
    let mut u: Vec<f64> = params.partial_sums().iter().map(|s| s.ln()).collect();
    let p = params.beta_a.clamp(1e-12, 1.0 - 1e-12);
    u.push((p / (1.0 - p)).ln());
    u.extend([params.beta.ln(), params.gamma.ln(), params.eta.ln()]);
    u
}

pub fn from_unconstrained(u: &[f64]) -> ParameterVector {
    let n = u.len() - 4;
    let sums: Vec<f64> = u[..n].iter().map(|v| v.exp()).collect();
    let mut alpha = Vec::with_capacity(n);
    let mut prev = 0.0;
    for s in sums {
        alpha.push(s - prev);
        prev = s;
    }
    ParameterVector {
        alpha,
        beta_a: 1.0 / (1.0 + (-u[n]).exp()),
        beta: u[n + 1].exp(),
        gamma: u[n + 2].exp(),
        eta: u[n + 3].exp(),
    }
}

#[derive(Clone, Copy)]
struct NegLogPosterior<'a> {
    ctx: &'a ModelContext,
    evals: &'a Cell<u64>,
    budget: u64,
}

// Cost returned for points the model cannot evaluate. Finite so the line
// search can back off from it.
const WALL: f64 = 1e300;

impl CostFunction for NegLogPosterior<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, u: &Self::Param) -> Result<f64, ArgminError> {
        // A hard cap keeps line searches that stall against the wall from
        // running unbounded; the solver run is abandoned when it is hit.
        self.evals.set(self.evals.get() + 1);
        if self.evals.get() > self.budget {
            return Err(ArgminError::msg("evaluation budget exhausted"));
        }
        let params = from_unconstrained(u);
        // Round-off in the partial-sum differences can leave a point just
        // outside the support; treat it like any failed evaluation.
        Ok(match self.ctx.log_posterior(&params) {
            Ok(lp) if lp.is_finite() => -lp.value(),
            _ => WALL,
        })
    }
}

impl Gradient for NegLogPosterior<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    /// Central differences.
    fn gradient(&self, u: &Self::Param) -> Result<Vec<f64>, ArgminError> {
        let mut g = vec![0.0; u.len()];
        let mut probe = u.clone();
        for i in 0..u.len() {
            let h = 1e-6 * (1.0 + u[i].abs());
            probe[i] = u[i] + h;
            let up = self.cost(&probe)?;
            probe[i] = u[i] - h;
            let down = self.cost(&probe)?;
            probe[i] = u[i];
            g[i] = (up - down) / (2.0 * h);
        }
        Ok(g)
    }
}

#[derive(Debug, Clone)]
pub struct ModeSearch {
    pub restarts: usize,
    pub max_iters: u64,
    pub initial_step: f64,
    /// Cap on log-posterior evaluations per solver run.
    pub max_evals: u64,
}

impl Default for ModeSearch {
    fn default() -> Self {
        Self {
            restarts: 6,
            max_iters: 3000,
            initial_step: 0.5,
            max_evals: 20_000,
        }
    }
}

impl ModeSearch {
    /// Alternates Nelder-Mead (robust far from the mode) with L-BFGS
    /// polishing, restarting from the best point with a shrinking simplex.
    /// Deterministic for a given start.
    pub fn run(
        &self,
        ctx: &ModelContext,
        start: &ParameterVector,
    ) -> Result<ParameterVector, OptimizeError> {
        if !ctx.log_posterior(start).is_ok_and(|lp| lp.is_finite()) {
            return Err(OptimizeError::InfeasibleStart);
        }
        let evals = Cell::new(0);
        let cost = NegLogPosterior {
            ctx,
            evals: &evals,
            budget: self.max_evals,
        };
        let mut best = to_unconstrained(start);
        let mut best_cost = cost.cost(&best).expect("within budget");
        let mut step = self.initial_step;
        for _ in 0..self.restarts {
            evals.set(0);
            let solver = NelderMead::new(simplex_around(&best, step))
                .with_sd_tolerance(1e-9)
                .map_err(|e| OptimizeError::Solver(e.to_string()))?;
            if let Ok(result) = Executor::new(cost, solver)
                .configure(|state| state.max_iters(self.max_iters))
                .run()
            {
                if result.state.best_cost < best_cost {
                    best_cost = result.state.best_cost;
                    best = result.state.best_param.expect("solver reports a best point");
                }
            }
            evals.set(0);

            let solver = LBFGS::new(MoreThuenteLineSearch::new(), 10)
                .with_tolerance_grad(1e-8)
                .and_then(|s| s.with_tolerance_cost(1e-14))
                .map_err(|e| OptimizeError::Solver(e.to_string()))?;
            // Line-search breakdowns near the support boundary are expected;
            // keep the previous best in that case.
            if let Ok(result) = Executor::new(cost, solver)
                .configure(|state| state.param(best.clone()).max_iters(500))
                .run()
            {
                if result.state.best_cost < best_cost {
                    best_cost = result.state.best_cost;
                    best = result.state.best_param.expect("solver reports a best point");
                }
            }
            step *= 0.5;
        }
        Ok(from_unconstrained(&best))
    }
}

fn simplex_around(center: &[f64], step: f64) -> Vec<Vec<f64>> {
    let mut simplex = vec![center.to_vec()];
    for i in 0..center.len() {
        let mut v = center.to_vec();
        v[i] += step;
        simplex.push(v);
    }
    simplex
}
