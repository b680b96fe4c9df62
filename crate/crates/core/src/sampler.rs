//! Random-walk Metropolis-Hastings with a tuning phase.
//!
//! Every iteration proposes a joint Gaussian step for all coordinates and
//! accepts it with probability `min(1, exp(lp' - lp))`. Proposals with zero
//! density or whose evaluation fails are rejected; failures are counted.
//!
//! The step is `factor * L z` with `z` standard normal. Without a shape
//! matrix `L` is the diagonal of per-parameter scales. A shape can be supplied
//! up front (for example from a curvature estimate at the mode) and is
//! re-estimated from the tuning draws after each round.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`), seeded with the
//! configured 64-bit seed; tuning, burn-in and sampling use distinct streams.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ParameterVector;
use crate::model::ModelContext;

pub const RNG_ALGORITHM: &str = "ChaCha20 (rand_chacha 0.9)";

const TUNE_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    BadConfig(String),
    #[error("starting point has dimension {got}, target expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no starting point with finite log-posterior found")]
    NoFiniteStart,
}

/// Something the sampler can draw from.
pub trait LogTarget: Sync {
    fn dim(&self) -> usize;

    fn names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }

    /// Unnormalized log density; `-inf` outside the support. `Err` marks an
    /// evaluation failure, which the sampler treats as a rejection.
    fn log_density(&self, x: &[f64]) -> Result<f64, String>;
}

impl LogTarget for ModelContext {
    fn dim(&self) -> usize {
        ModelContext::dim(self)
    }

    fn names(&self) -> Vec<String> {
        self.parameter_names()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64, String> {
        let params = ParameterVector::from_slice(x).map_err(|e| e.to_string())?;
        self.log_posterior(&params)
            .map(|lp| lp.value())
            .map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_samples: usize,
    pub n_burnin: usize,
    pub n_tune_rounds: usize,
    pub tune_round_len: usize,
    /// Initial per-parameter random-walk standard deviations.
    pub proposal_scales: Vec<f64>,
    pub target_accept: [f64; 2],
    /// Metropolis steps per recorded draw. Applies to tuning rounds, burn-in
    /// and retained draws alike; acceptance rates count every step.
    pub thin: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 5000,
            n_burnin: 2000,
            n_tune_rounds: 10,
            tune_round_len: 200,
            proposal_scales: Vec::new(),
            target_accept: [0.2, 0.4],
            thin: 10,
            seed: 20200229,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self, dim: usize) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::BadConfig(m.to_string()));
        if self.n_samples == 0 || self.n_tune_rounds == 0 || self.tune_round_len == 0 || self.thin == 0
        {
            return bad("n_samples, n_tune_rounds, tune_round_len and thin must be at least 1");
        }
        if self.proposal_scales.len() != dim {
            return Err(SamplerError::BadConfig(format!(
                "{} proposal scales for {dim} parameters",
                self.proposal_scales.len()
            )));
        }
        if self.proposal_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad("proposal scales must be positive and finite");
        }
        let [lo, hi] = self.target_accept;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("target acceptance range must satisfy 0 < low < high < 1");
        }
        Ok(())
    }

    /// Step-size multiplier for a round with acceptance `rate`.
    pub fn scale_factor(&self, rate: f64) -> f64 {
        let [lo, hi] = self.target_accept;
        if rate < lo {
            0.5
        } else if rate > hi {
            1.5
        } else {
            1.0
        }
    }
}

/// Proposal shape: a lower-triangular factor times a global step multiplier.
#[derive(Debug, Clone, PartialEq)]
pub struct Proposal {
    factor: f64,
    chol: DMatrix<f64>,
}

impl Proposal {
    pub fn diagonal(scales: &[f64]) -> Self {
        Self {
            factor: 1.0,
            chol: DMatrix::from_diagonal(&DVector::from_column_slice(scales)),
        }
    }

    /// Steps shaped like `cov`, pre-scaled by `2.38 / sqrt(d)`; `None` if
    /// `cov` is not positive definite.
    pub fn from_covariance(cov: &DMatrix<f64>) -> Option<Self> {
        Some(Self {
            factor: 1.0,
            chol: scaled_cholesky(cov.clone())?,
        })
    }

    pub fn factor(&self) -> f64 {
        self.factor
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// Marginal standard deviation of the step in each coordinate.
    pub fn scales(&self) -> Vec<f64> {
        self.chol
            .row_iter()
            .map(|row| self.factor * row.norm())
            .collect()
    }

    fn propose(&self, x: &[f64], rng: &mut ChaCha20Rng) -> Vec<f64> {
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let step = &self.chol * z;
        x.iter()
            .zip(step.iter())
            .map(|(xi, si)| xi + self.factor * si)
            .collect()
    }
}

struct Chain<'a, T: LogTarget + ?Sized> {
    target: &'a T,
    rng: ChaCha20Rng,
    x: Vec<f64>,
    lp: f64,
    failures: u64,
}

impl<'a, T: LogTarget + ?Sized> Chain<'a, T> {
    fn new(target: &'a T, seed: u64, stream: u64, x: Vec<f64>, lp: f64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self {
            target,
            rng,
            x,
            lp,
            failures: 0,
        }
    }

    fn step(&mut self, proposal: &Proposal) -> bool {
        let candidate = proposal.propose(&self.x, &mut self.rng);
        // Drawn before evaluating so the random stream does not depend on
        // whether the candidate was feasible.
        let u: f64 = self.rng.random();
        let lp = match self.target.log_density(&candidate) {
            Ok(lp) => lp,
            Err(_) => {
                self.failures += 1;
                return false;
            }
        };
        if lp == f64::NEG_INFINITY || lp.is_nan() {
            return false;
        }
        if u.ln() < lp - self.lp {
            self.x = candidate;
            self.lp = lp;
            true
        } else {
            false
        }
    }
}

/// Outcome of one tuning round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneRound {
    pub acceptance: f64,
    pub scales: Vec<f64>,
}

/// A tuned sampler: updated configuration plus the state to continue from.
#[derive(Debug, Clone)]
pub struct TunedSampler {
    pub config: SamplerConfig,
    pub proposal: Proposal,
    pub position: Vec<f64>,
    pub log_post: f64,
    pub rounds: Vec<TuneRound>,
    pub failures: u64,
}

/// Runs the short tuning chains. After each round the step multiplier is
/// halved if acceptance fell below the target range and raised by half if
/// above it; in a joint proposal every parameter shares the round's
/// acceptance. With `adapt_shape` the proposal shape is re-estimated from the
/// tuning draws after each of the first half of the rounds. Tuning draws are
/// discarded.
pub fn tune<T: LogTarget + ?Sized>(
    config: &SamplerConfig,
    target: &T,
    start: &[f64],
    initial: Option<Proposal>,
    adapt_shape: bool,
) -> Result<TunedSampler, SamplerError> {
    let dim = target.dim();
    config.validate(dim)?;
    if start.len() != dim {
        return Err(SamplerError::DimensionMismatch {
            expected: dim,
            got: start.len(),
        });
    }
    let lp = match target.log_density(start) {
        Ok(lp) if lp.is_finite() => lp,
        _ => return Err(SamplerError::NoFiniteStart),
    };
    let mut proposal = initial.unwrap_or_else(|| Proposal::diagonal(&config.proposal_scales));
    let mut chain = Chain::new(target, config.seed, TUNE_STREAM, start.to_vec(), lp);
    let mut history: Vec<Vec<f64>> = Vec::new();
    let mut rounds = Vec::with_capacity(config.n_tune_rounds);

    // The shape is only re-estimated during the first half of the rounds so
    // the later rounds tune the step multiplier against the final shape.
    let shape_rounds = config.n_tune_rounds / 2;
    for round in 0..config.n_tune_rounds {
        let mut accepted = 0usize;
        for _ in 0..config.tune_round_len {
            for _ in 0..config.thin {
                if chain.step(&proposal) {
                    accepted += 1;
                }
            }
            history.push(chain.x.clone());
        }
        let rate = accepted as f64 / (config.tune_round_len * config.thin) as f64;
        if adapt_shape && round < shape_rounds {
            if let Some(shape) = adapted_shape(&history, &proposal) {
                proposal.chol = shape;
            }
        }
        proposal.factor *= config.scale_factor(rate);
        rounds.push(TuneRound {
            acceptance: rate,
            scales: proposal.scales(),
        });
    }

    let mut tuned_config = config.clone();
    tuned_config.proposal_scales = proposal.scales();
    Ok(TunedSampler {
        config: tuned_config,
        proposal,
        position: chain.x,
        log_post: chain.lp,
        rounds,
        failures: chain.failures,
    })
}

/// Cholesky factor of the empirical covariance of the second half of the
/// history, rescaled so the current step multiplier keeps its meaning.
fn adapted_shape(history: &[Vec<f64>], current: &Proposal) -> Option<DMatrix<f64>> {
    let recent = &history[history.len() / 2..];
    let d = current.dim();
    let n = recent.len();
    if n < 4 * d {
        return None;
    }
    let mean: Vec<f64> = (0..d)
        .map(|j| recent.iter().map(|x| x[j]).sum::<f64>() / n as f64)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for x in recent {
        let v = DVector::from_iterator(d, x.iter().zip(&mean).map(|(a, m)| a - m));
        cov += &v * v.transpose();
    }
    cov /= (n - 1) as f64;
    // Coordinates that never moved keep their current spread.
    let current_scales: Vec<f64> = current.scales().iter().map(|s| s / current.factor).collect();
    for j in 0..d {
        let floor = (1e-3 * current_scales[j]).powi(2);
        if cov[(j, j)] < floor {
            for k in 0..d {
                cov[(j, k)] = 0.0;
                cov[(k, j)] = 0.0;
            }
            cov[(j, j)] = current_scales[j].powi(2);
        }
    }
    for j in 0..d {
        cov[(j, j)] *= 1.0 + 1e-6;
    }
    scaled_cholesky(cov)
}

fn scaled_cholesky(cov: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = cov.nrows() as f64;
    Some(cov.cholesky()?.l() * (2.38 / d.sqrt()))
}

/// Retained draws and sampler metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub column_names: Vec<String>,
    /// Row-major, one row per retained draw.
    pub draws: Vec<Vec<f64>>,
    pub log_post: Vec<f64>,
    pub accept_rate: f64,
    pub seed: u64,
    pub failures: u64,
}

impl PosteriorSamples {
    pub fn n_samples(&self) -> usize {
        self.draws.len()
    }

    pub fn dim(&self) -> usize {
        self.column_names.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.draws.iter().map(|row| row[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_names.iter().position(|c| c == name)?;
        Some(self.column(j))
    }

    pub fn parameters(&self, row: usize) -> ParameterVector {
        ParameterVector::from_slice(&self.draws[row]).expect("rows have at least five columns")
    }
}

/// Burn-in followed by `n_samples` retained draws, each `thin` steps apart.
pub fn sample<T: LogTarget + ?Sized>(tuned: &TunedSampler, target: &T) -> PosteriorSamples {
    let config = &tuned.config;
    let mut chain = Chain::new(
        target,
        config.seed,
        SAMPLE_STREAM,
        tuned.position.clone(),
        tuned.log_post,
    );
    for _ in 0..config.n_burnin * config.thin {
        chain.step(&tuned.proposal);
    }
    let mut draws = Vec::with_capacity(config.n_samples);
    let mut log_post = Vec::with_capacity(config.n_samples);
    let mut accepted = 0usize;
    let mut iterations = 0usize;
    while draws.len() < config.n_samples {
        for _ in 0..config.thin {
            if chain.step(&tuned.proposal) {
                accepted += 1;
            }
            iterations += 1;
        }
        draws.push(chain.x.clone());
        log_post.push(chain.lp);
    }
    PosteriorSamples {
        column_names: target.names(),
        draws,
        log_post,
        accept_rate: accepted as f64 / iterations as f64,
        seed: config.seed,
        failures: tuned.failures + chain.failures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Standard bivariate normal restricted to the positive quadrant.
    struct Quadrant;

    impl LogTarget for Quadrant {
        fn dim(&self) -> usize {
            2
        }

        fn log_density(&self, x: &[f64]) -> Result<f64, String> {
            if x.iter().any(|v| *v <= 0.0) {
                return Ok(f64::NEG_INFINITY);
            }
            Ok(-0.5 * (x[0] * x[0] + x[1] * x[1]))
        }
    }

    /// Fails to evaluate on the left half-plane.
    struct Flaky;

    impl LogTarget for Flaky {
        fn dim(&self) -> usize {
            1
        }

        fn log_density(&self, x: &[f64]) -> Result<f64, String> {
            if x[0] < 0.0 {
                Err("unstable".into())
            } else {
                Ok(-0.5 * x[0] * x[0])
            }
        }
    }

    fn config(scales: Vec<f64>, seed: u64) -> SamplerConfig {
        SamplerConfig {
            n_samples: 500,
            n_burnin: 100,
            n_tune_rounds: 4,
            tune_round_len: 100,
            proposal_scales: scales,
            thin: 1,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn tuning_rule() {
        let c = SamplerConfig::default();
        assert_eq!(c.scale_factor(0.05), 0.5);
        assert_eq!(c.scale_factor(0.3), 1.0);
        assert_eq!(c.scale_factor(0.2), 1.0);
        assert_eq!(c.scale_factor(0.6), 1.5);
    }

    #[test]
    fn low_acceptance_round_halves_scales() {
        // Steps 100x the target's width are almost always rejected.
        let c = config(vec![100.0, 100.0], 3);
        let tuned = tune(&c, &Quadrant, &[1.0, 1.0], None, false).unwrap();
        let first = &tuned.rounds[0];
        assert!(first.acceptance < 0.2);
        assert_eq!(first.scales, vec![50.0, 50.0]);
    }

    #[test]
    fn in_range_round_keeps_scales() {
        let mut c = config(vec![1.0, 1.0], 3);
        c.target_accept = [0.0001, 0.9999];
        let tuned = tune(&c, &Quadrant, &[1.0, 1.0], None, false).unwrap();
        assert!(tuned.rounds.iter().all(|r| r.scales == vec![1.0, 1.0]));
    }

    #[test]
    fn identical_seed_gives_identical_draws() {
        let run = |seed| {
            let c = config(vec![0.8, 0.8], seed);
            let tuned = tune(&c, &Quadrant, &[1.0, 1.0], None, true).unwrap();
            sample(&tuned, &Quadrant)
        };
        let a = run(9);
        assert_eq!(a, run(9));
        assert_ne!(a.draws, run(10).draws);
    }

    #[test]
    fn draws_stay_in_support() {
        let c = config(vec![2.0, 2.0], 5);
        let tuned = tune(&c, &Quadrant, &[0.5, 0.5], None, false).unwrap();
        let s = sample(&tuned, &Quadrant);
        assert_eq!(s.n_samples(), 500);
        assert!(s.draws.iter().flatten().all(|v| *v > 0.0));
        assert!(s.log_post.iter().all(|lp| lp.is_finite()));
        assert!((0.0..=1.0).contains(&s.accept_rate));
    }

    #[test]
    fn evaluation_failures_are_rejected_and_counted() {
        let mut c = config(vec![1.0], 2);
        c.n_samples = 300;
        let tuned = tune(&c, &Flaky, &[0.5], None, false).unwrap();
        let s = sample(&tuned, &Flaky);
        assert!(s.failures > 0);
        assert!(s.draws.iter().all(|r| r[0] >= 0.0));
    }

    #[test]
    fn thinning_multiplies_steps() {
        let mut c = config(vec![0.5, 0.5], 4);
        c.thin = 3;
        let tuned = tune(&c, &Quadrant, &[1.0, 1.0], None, false).unwrap();
        let s = sample(&tuned, &Quadrant);
        assert_eq!(s.n_samples(), 500);
    }

    #[test]
    fn config_validation() {
        let c = config(vec![1.0], 1);
        assert!(c.validate(1).is_ok());
        assert!(matches!(c.validate(2), Err(SamplerError::BadConfig(_))));
        let mut bad = c.clone();
        bad.proposal_scales = vec![0.0];
        assert!(bad.validate(1).is_err());
        let mut bad = c.clone();
        bad.target_accept = [0.5, 0.4];
        assert!(bad.validate(1).is_err());
        let mut bad = c;
        bad.n_samples = 0;
        assert!(bad.validate(1).is_err());
    }

    #[test]
    fn infeasible_start_is_an_error() {
        let c = config(vec![1.0, 1.0], 1);
        assert_eq!(
            tune(&c, &Quadrant, &[-1.0, 1.0], None, false).unwrap_err(),
            SamplerError::NoFiniteStart
        );
        assert!(matches!(
            tune(&c, &Quadrant, &[1.0], None, false),
            Err(SamplerError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn covariance_proposal_scales() {
        let cov = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 1.0]);
        let p = Proposal::from_covariance(&cov).unwrap();
        let k = 2.38 / 2f64.sqrt();
        let s = p.scales();
        assert!((s[0] - 2.0 * k).abs() < 1e-12);
        assert!((s[1] - k).abs() < 1e-12);
        let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(Proposal::from_covariance(&not_pd).is_none());
    }
}
