//! Unnormalized log-posterior: Poisson observations of the integrated mean
//! trajectory plus a truncated Gaussian prior on the transmission increments
//! and exponential priors on the rates.
//!
//! Additive constants (`log y!`, prior normalizers, the truncation mass) are
//! dropped throughout; only differences are ever used.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DayRange, ObservedSeries, Series};
use crate::dynamics::{
    DynamicsError, Integrator, InterventionSchedule, MeanTrajectory, ParameterVector, StateVector,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("integration failed: {0}")]
    Integration(#[from] DynamicsError),
    #[error("likelihood range {start}..{end} not within observed days 1..{len}")]
    BadRange { start: usize, end: usize, len: usize },
    #[error("invalid prior: {0}")]
    BadPrior(String),
}

/// Log-scale density value; `-inf` marks zero density.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct LogDensity(f64);

impl LogDensity {
    pub const NEG_INFINITY: LogDensity = LogDensity(f64::NEG_INFINITY);

    /// Panics on NaN or `+inf`.
    pub fn new(value: f64) -> Self {
        assert!(
            !value.is_nan() && value != f64::INFINITY,
            "log density must be finite or -inf, got {value}"
        );
        LogDensity(value)
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl std::ops::Add for LogDensity {
    type Output = LogDensity;
    fn add(self, rhs: LogDensity) -> LogDensity {
        LogDensity::new(self.0 + rhs.0)
    }
}

/// Prior hyper-parameters. Defaults give `alpha ~ N(1, I)` restricted to the
/// feasible set and `Exp(1)` on every rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSpec {
    pub a: f64,
    pub sigma2: f64,
    pub rate_beta_a: f64,
    pub rate_beta: f64,
    pub rate_gamma: f64,
    pub rate_eta: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            a: 1.0,
            sigma2: 1.0,
            rate_beta_a: 1.0,
            rate_beta: 1.0,
            rate_gamma: 1.0,
            rate_eta: 1.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("sigma2", self.sigma2),
            ("rate_beta_a", self.rate_beta_a),
            ("rate_beta", self.rate_beta),
            ("rate_gamma", self.rate_gamma),
            ("rate_eta", self.rate_eta),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ModelError::BadPrior(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.a.is_finite() {
            return Err(ModelError::BadPrior("a must be finite".into()));
        }
        Ok(())
    }
}

pub fn log_prior(params: &ParameterVector, spec: &PriorSpec) -> LogDensity {
    if !params.in_support() {
        return LogDensity::NEG_INFINITY;
    }
    let quad: f64 = params.alpha.iter().map(|a| (a - spec.a).powi(2)).sum();
    LogDensity::new(
        -0.5 * quad / spec.sigma2
            - spec.rate_beta_a * params.beta_a
            - spec.rate_beta * params.beta
            - spec.rate_gamma * params.gamma
            - spec.rate_eta * params.eta,
    )
}

/// `y log(lambda) - lambda`, with `0 log 0 = 0`.
pub fn poisson_kernel(y: u64, lambda: f64) -> f64 {
    if y == 0 {
        -lambda
    } else if lambda <= 0.0 {
        f64::NEG_INFINITY
    } else {
        y as f64 * lambda.ln() - lambda
    }
}

/// Poisson log-likelihood of the observed series over `range`, given an
/// already integrated trajectory covering it.
pub fn trajectory_log_likelihood(
    traj: &MeanTrajectory,
    obs: &ObservedSeries,
    range: DayRange,
) -> LogDensity {
    let mut total = 0.0;
    for day in range.days() {
        let state = traj.at(day);
        for series in Series::ALL {
            let lambda = match series {
                Series::Active => state.i,
                Series::Recovered => state.r,
                Series::Deaths => state.d,
            };
            total += poisson_kernel(obs.series(series)[day], lambda.max(0.0));
        }
    }
    LogDensity::new(total)
}

/// Everything fixed while the parameters vary.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub schedule: InterventionSchedule,
    pub init: StateVector,
    pub obs: ObservedSeries,
    pub prior: PriorSpec,
    pub integrator: Integrator,
}

impl ModelContext {
    pub fn new(
        schedule: InterventionSchedule,
        init: StateVector,
        obs: ObservedSeries,
        prior: PriorSpec,
    ) -> Result<Self, ModelError> {
        prior.validate()?;
        Ok(Self {
            schedule,
            init,
            obs,
            prior,
            integrator: Integrator::default(),
        })
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn dim(&self) -> usize {
        ParameterVector::dim_for(self.schedule.n_interventions())
    }

    pub fn parameter_names(&self) -> Vec<String> {
        ParameterVector::names(self.schedule.n_interventions())
    }

    pub fn log_prior(&self, params: &ParameterVector) -> LogDensity {
        log_prior(params, &self.prior)
    }

    pub fn log_likelihood(
        &self,
        params: &ParameterVector,
        range: DayRange,
    ) -> Result<LogDensity, ModelError> {
        if range.start < 1 || range.end > self.obs.len() || range.is_empty() {
            return Err(ModelError::BadRange {
                start: range.start,
                end: range.end,
                len: self.obs.len(),
            });
        }
        let traj = self
            .integrator
            .integrate(params, &self.schedule, &self.init, range.end - 1)?;
        Ok(trajectory_log_likelihood(&traj, &self.obs, range))
    }

    /// Prior plus training-window likelihood. Out-of-support parameters
    /// return `-inf` without integrating.
    pub fn log_posterior(&self, params: &ParameterVector) -> Result<LogDensity, ModelError> {
        let prior = self.log_prior(params);
        if !prior.is_finite() {
            return Ok(prior);
        }
        Ok(prior + self.log_likelihood(params, self.obs.train_range())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_train_end, derive_series, qatar_records};

    fn qatar_context() -> ModelContext {
        let obs = derive_series(&qatar_records(), default_train_end()).unwrap();
        ModelContext::new(
            InterventionSchedule::qatar(),
            StateVector::qatar_initial(),
            obs,
            PriorSpec::default(),
        )
        .unwrap()
    }

    fn unit_params(k: usize) -> ParameterVector {
        ParameterVector {
            alpha: vec![1.0; k + 1],
            beta_a: 1.0,
            beta: 1.0,
            gamma: 1.0,
            eta: 1.0,
        }
    }

    #[test]
    fn prior_at_mode() {
        assert_eq!(log_prior(&unit_params(5), &PriorSpec::default()).value(), -4.0);
    }

    #[test]
    fn prior_support() {
        let spec = PriorSpec::default();
        let mut p = unit_params(2);
        p.alpha = vec![1.0, -2.0, 5.0];
        assert_eq!(log_prior(&p, &spec), LogDensity::NEG_INFINITY);
        let mut p = unit_params(2);
        p.beta = -0.1;
        assert_eq!(log_prior(&p, &spec), LogDensity::NEG_INFINITY);
        let mut p = unit_params(2);
        p.beta_a = 1.0 + 1e-12;
        assert_eq!(log_prior(&p, &spec), LogDensity::NEG_INFINITY);
        p.beta_a = 0.0;
        assert!(log_prior(&p, &spec).is_finite());
    }

    #[test]
    fn poisson_terms() {
        assert_eq!(poisson_kernel(0, 1.0), -1.0);
        assert!((poisson_kernel(4, 4.0) - (4.0 * 4f64.ln() - 4.0)).abs() < 1e-15);
        assert!((poisson_kernel(4, 4.0) - 1.5452).abs() < 1e-4);
        assert_eq!(poisson_kernel(0, 0.0), 0.0);
        assert_eq!(poisson_kernel(3, 0.0), f64::NEG_INFINITY);
    }

    #[test]
    #[should_panic]
    fn nan_log_density_panics() {
        LogDensity::new(f64::NAN);
    }

    #[test]
    fn posterior_short_circuits_out_of_support() {
        let ctx = qatar_context();
        let mut p = ParameterVector::qatar_reference();
        // Infeasible and would also blow up the integrator.
        p.alpha[1] = -1.0;
        assert_eq!(ctx.log_posterior(&p).unwrap(), LogDensity::NEG_INFINITY);
    }

    #[test]
    fn posterior_is_prior_plus_likelihood() {
        let ctx = qatar_context();
        let p = ParameterVector::qatar_reference();
        let lp = ctx.log_posterior(&p).unwrap();
        let sum = ctx.log_prior(&p).value()
            + ctx.log_likelihood(&p, ctx.obs.train_range()).unwrap().value();
        assert_eq!(lp.value(), sum);
        assert_eq!(lp, ctx.log_posterior(&p).unwrap());
    }

    #[test]
    fn likelihood_range_checked() {
        let ctx = qatar_context();
        let p = ParameterVector::qatar_reference();
        assert!(matches!(
            ctx.log_likelihood(&p, DayRange::new(0, 5)),
            Err(ModelError::BadRange { .. })
        ));
        assert!(matches!(
            ctx.log_likelihood(&p, DayRange::new(1, 100)),
            Err(ModelError::BadRange { .. })
        ));
    }

    #[test]
    fn prior_validation() {
        let spec = PriorSpec {
            sigma2: 0.0,
            ..PriorSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
