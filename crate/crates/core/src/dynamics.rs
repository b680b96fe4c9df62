//! Mean-abundance SEIRD system with a piecewise-constant transmission rate
//! and a one-time Exposed -> Infected impulse.
//!
//! ```text
//! dS/dt = -a(t) S E
//! dE/dt =  a(t) S E - beta E
//! dI/dt =  beta E - (gamma + eta) I
//! dR/dt =  gamma I
//! dD/dt =  eta I
//! ```
//!
//! `a(t)` is the sum of the increments `alpha_k` whose change day has been
//! reached. At the impulse day a fraction `beta_a` of E moves to I at once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_STEP: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite state at day {day}")]
    NonFinite { day: usize },
    #[error("negative compartment at day {day}")]
    NegativeState { day: usize },
    #[error("horizon must be at least one day")]
    EmptyHorizon,
    #[error("step size must be positive and at most one day, got {0}")]
    BadStep(f64),
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
}

/// Sampled unknowns: transmission increments `alpha[0..=K]`, impulse
/// fraction `beta_a`, incubation-to-confirmation rate `beta`, recovery rate
/// `gamma` and mortality rate `eta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub alpha: Vec<f64>,
    pub beta_a: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
}

impl ParameterVector {
    /// Number of flat coordinates for `k` interventions.
    pub fn dim_for(k: usize) -> usize {
        k + 1 + 4
    }

    pub fn dim(&self) -> usize {
        self.alpha.len() + 4
    }

    pub fn n_interventions(&self) -> usize {
        self.alpha.len().saturating_sub(1)
    }

    /// Column labels matching [`Self::to_vec`].
    pub fn names(k: usize) -> Vec<String> {
        let mut names: Vec<String> = (0..=k).map(|i| format!("alpha{i}")).collect();
        names.extend(["betaA", "beta", "gamma", "eta"].map(String::from));
        names
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.alpha.clone();
        v.extend([self.beta_a, self.beta, self.gamma, self.eta]);
        v
    }

    /// Inverse of [`Self::to_vec`]; the alpha block is everything but the last four entries.
    pub fn from_slice(values: &[f64]) -> Result<Self, DynamicsError> {
        if values.len() < 5 {
            return Err(DynamicsError::InvalidParameters(format!(
                "need at least 5 values, got {}",
                values.len()
            )));
        }
        let n = values.len() - 4;
        Ok(Self {
            alpha: values[..n].to_vec(),
            beta_a: values[n],
            beta: values[n + 1],
            gamma: values[n + 2],
            eta: values[n + 3],
        })
    }

    /// Effective transmission rate in each regime: `alpha_0 + ... + alpha_j`.
    pub fn partial_sums(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .scan(0.0, |acc, a| {
                *acc += a;
                Some(*acc)
            })
            .collect()
    }

    pub fn alpha_feasible(&self) -> bool {
        !self.alpha.is_empty() && self.partial_sums().iter().all(|s| *s > 0.0)
    }

    /// Full posterior support: feasible alphas, `beta_a` in `[0, 1]`,
    /// positive rates, everything finite.
    pub fn in_support(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
            && self.alpha_feasible()
            && (0.0..=1.0).contains(&self.beta_a)
            && self.beta > 0.0
            && self.gamma > 0.0
            && self.eta > 0.0
    }

    /// Posterior means reported for the Qatar outbreak, five interventions.
    pub fn qatar_reference() -> Self {
        Self {
            alpha: vec![2.33e-7, -2.12e-7, 1.92e-7, -1.74e-7, 1.83e-9, -3.89e-8],
            beta_a: 0.79695,
            beta: 0.02818,
            gamma: 0.00980,
            eta: 0.00014,
        }
    }
}

/// Intervention change days `t_1 < ... < t_K` and the impulse day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionSchedule {
    change_days: Vec<u32>,
    impulse_day: u32,
}

impl InterventionSchedule {
    pub fn new(change_days: Vec<u32>, impulse_day: u32) -> Result<Self, DynamicsError> {
        if change_days.first().is_some_and(|d| *d == 0) {
            return Err(DynamicsError::InvalidSchedule(
                "change days must be positive".into(),
            ));
        }
        if change_days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DynamicsError::InvalidSchedule(
                "change days must be strictly increasing".into(),
            ));
        }
        if impulse_day == 0 {
            return Err(DynamicsError::InvalidSchedule(
                "impulse day must be positive".into(),
            ));
        }
        Ok(Self {
            change_days,
            impulse_day,
        })
    }

    /// Change days 12, 24, 28, 40, 59 with the impulse on day 12.
    pub fn qatar() -> Self {
        Self::new(vec![12, 24, 28, 40, 59], 12).expect("valid schedule")
    }

    pub fn change_days(&self) -> &[u32] {
        &self.change_days
    }

    pub fn impulse_day(&self) -> u32 {
        self.impulse_day
    }

    pub fn n_interventions(&self) -> usize {
        self.change_days.len()
    }

    /// Number of increments in force at time `t`, including `alpha_0`.
    /// Right-continuous: on a change day the new increment already applies.
    pub fn active_increments(&self, t: f64) -> usize {
        1 + self.change_days.iter().filter(|d| f64::from(**d) <= t).count()
    }

    /// Appends a hypothetical intervention; `day` must come after the last change day.
    pub fn with_extra_change(&self, day: u32) -> Result<Self, DynamicsError> {
        let mut days = self.change_days.clone();
        days.push(day);
        Self::new(days, self.impulse_day)
    }

    fn check_params(&self, params: &ParameterVector) -> Result<(), DynamicsError> {
        if params.alpha.len() != self.change_days.len() + 1 {
            return Err(DynamicsError::InvalidParameters(format!(
                "schedule has {} change days but {} alpha increments were given",
                self.change_days.len(),
                params.alpha.len()
            )));
        }
        Ok(())
    }
}

/// Mean compartment sizes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateVector {
    pub s: f64,
    pub e: f64,
    pub i: f64,
    pub r: f64,
    pub d: f64,
}

impl StateVector {
    pub const fn new(s: f64, e: f64, i: f64, r: f64, d: f64) -> Self {
        Self { s, e, i, r, d }
    }

    /// S = 2,782,000, E = 3, I = 1, R = D = 0.
    pub const fn qatar_initial() -> Self {
        Self::new(2_782_000.0, 3.0, 1.0, 0.0, 0.0)
    }

    pub fn total(&self) -> f64 {
        self.s + self.e + self.i + self.r + self.d
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.s, self.e, self.i, self.r, self.d]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.as_array().iter().all(|v| *v >= 0.0)
    }

    /// Cumulative confirmed in the mean system: I + R + D.
    pub fn confirmed(&self) -> f64 {
        self.i + self.r + self.d
    }

    fn axpy(&self, h: f64, k: &StateVector) -> StateVector {
        StateVector::new(
            self.s + h * k.s,
            self.e + h * k.e,
            self.i + h * k.i,
            self.r + h * k.r,
            self.d + h * k.d,
        )
    }
}

/// Transmission rate in force at time `t`.
pub fn alpha_at(params: &ParameterVector, schedule: &InterventionSchedule, t: f64) -> f64 {
    let n = schedule.active_increments(t).min(params.alpha.len());
    params.alpha[..n].iter().sum()
}

/// Smooth part of the mean system at a given transmission rate.
pub fn rhs_at_rate(rate: f64, params: &ParameterVector, x: &StateVector) -> StateVector {
    let infection = rate * x.s * x.e;
    let confirmation = params.beta * x.e;
    let recovery = params.gamma * x.i;
    let death = params.eta * x.i;
    StateVector::new(
        -infection,
        infection - confirmation,
        confirmation - recovery - death,
        recovery,
        death,
    )
}

/// Time derivative of the smooth part of the mean system. The impulse is
/// not part of the vector field; see [`apply_impulse`].
pub fn rhs(
    params: &ParameterVector,
    schedule: &InterventionSchedule,
    t: f64,
    state: &StateVector,
) -> StateVector {
    rhs_at_rate(alpha_at(params, schedule, t), params, state)
}

/// Moves `beta_a * E` from Exposed to Infected. Panics if `beta_a` is
/// outside `[0, 1]`, which would leave E negative.
pub fn apply_impulse(params: &ParameterVector, state: &StateVector) -> StateVector {
    assert!(
        (0.0..=1.0).contains(&params.beta_a),
        "impulse fraction {} outside [0, 1]",
        params.beta_a
    );
    let moved = state.e * params.beta_a;
    StateVector {
        e: state.e - moved,
        i: state.i + moved,
        ..*state
    }
}

/// Mean trajectory sampled at integer days `0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanTrajectory {
    pub horizon: usize,
    pub states: Vec<StateVector>,
}

impl MeanTrajectory {
    pub fn at(&self, day: usize) -> &StateVector {
        &self.states[day]
    }

    pub fn active(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|s| s.i)
    }

    /// Day of the largest I, earliest on ties.
    pub fn peak_active_day(&self) -> usize {
        let mut best = 0;
        for (day, s) in self.states.iter().enumerate() {
            if s.i > self.states[best].i {
                best = day;
            }
        }
        best
    }

    /// CSV with columns `day,S,E,I,R,D`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,S,E,I,R,D\n");
        for (day, s) in self.states.iter().enumerate() {
            out.push_str(&format!(
                "{day},{},{},{},{},{}\n",
                s.s, s.e, s.i, s.r, s.d
            ));
        }
        out
    }
}

/// Fixed-step classical RK4 integrator for the mean system.
///
/// Every unit day is split into `ceil(1 / step)` equal sub-steps, so change
/// days and the impulse day always fall on step boundaries. The transmission
/// rate is held at its value for the start of each day.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integrator {
    substeps: usize,
}

impl Default for Integrator {
    fn default() -> Self {
        Self::with_step(DEFAULT_STEP).expect("default step is valid")
    }
}

impl Integrator {
    pub fn with_step(step: f64) -> Result<Self, DynamicsError> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(DynamicsError::BadStep(step));
        }
        // Guard against 1/0.05 = 19.999...
        let substeps = ((1.0 / step) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self { substeps })
    }

    pub fn step(&self) -> f64 {
        1.0 / self.substeps as f64
    }

    pub fn integrate(
        &self,
        params: &ParameterVector,
        schedule: &InterventionSchedule,
        init: &StateVector,
        horizon: usize,
    ) -> Result<MeanTrajectory, DynamicsError> {
        if horizon == 0 {
            return Err(DynamicsError::EmptyHorizon);
        }
        schedule.check_params(params)?;
        if !(0.0..=1.0).contains(&params.beta_a) {
            return Err(DynamicsError::InvalidParameters(format!(
                "impulse fraction {} outside [0, 1]",
                params.beta_a
            )));
        }
        if !init.is_finite() || !init.is_nonnegative() {
            return Err(DynamicsError::InvalidParameters(
                "initial state must be finite and non-negative".into(),
            ));
        }

        let h = self.step();
        let tolerance = -1e-9 * init.total().max(1.0);
        let impulse_day = schedule.impulse_day() as usize;
        let mut states = Vec::with_capacity(horizon + 1);
        let mut x = *init;
        states.push(x);

        for day in 0..horizon {
            let rate = alpha_at(params, schedule, day as f64);
            for _ in 0..self.substeps {
                x = rk4_step(rate, params, &x, h);
            }
            let reached = day + 1;
            if reached == impulse_day {
                x = apply_impulse(params, &x);
            }
            if !x.is_finite() {
                return Err(DynamicsError::NonFinite { day: reached });
            }
            if x.as_array().iter().any(|v| *v < tolerance) {
                return Err(DynamicsError::NegativeState { day: reached });
            }
            states.push(x);
        }
        Ok(MeanTrajectory { horizon, states })
    }
}

fn rk4_step(rate: f64, params: &ParameterVector, x: &StateVector, h: f64) -> StateVector {
    let k1 = rhs_at_rate(rate, params, x);
    let k2 = rhs_at_rate(rate, params, &x.axpy(0.5 * h, &k1));
    let k3 = rhs_at_rate(rate, params, &x.axpy(0.5 * h, &k2));
    let k4 = rhs_at_rate(rate, params, &x.axpy(h, &k3));
    StateVector::new(
        x.s + h / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s),
        x.e + h / 6.0 * (k1.e + 2.0 * k2.e + 2.0 * k3.e + k4.e),
        x.i + h / 6.0 * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i),
        x.r + h / 6.0 * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r),
        x.d + h / 6.0 * (k1.d + 2.0 * k2.d + 2.0 * k3.d + k4.d),
    )
}

/// Integrates with the default step.
pub fn integrate(
    params: &ParameterVector,
    schedule: &InterventionSchedule,
    init: &StateVector,
    horizon: usize,
) -> Result<MeanTrajectory, DynamicsError> {
    Integrator::default().integrate(params, schedule, init, horizon)
}
