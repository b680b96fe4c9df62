//! End-to-end fitting: mode search, curvature-shaped proposal, tuning and
//! sampling.
//!
//! The posterior is sharply peaked and has several local modes, so the
//! sampler is started from the best of several deterministic mode searches
//! rather than from the raw initialization point. The initial proposal shape
//! comes from a finite-difference Hessian at that mode.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ParameterVector;
use crate::model::ModelContext;
use crate::optimize::{from_unconstrained, to_unconstrained, ModeSearch, OptimizeError};
use crate::sampler::{self, PosteriorSamples, Proposal, SamplerConfig, SamplerError, TuneRound};

const START_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum FitError {
    #[error(transparent)]
    Optimize(#[from] OptimizeError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error("no starting point with finite log-posterior found after {0} attempts")]
    NoFiniteStart(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Mode searches run; the first starts at the initialization point, the
    /// rest at seeded perturbations of it in unconstrained coordinates.
    pub n_starts: usize,
    /// Half-width of the uniform perturbation in unconstrained coordinates.
    pub start_spread: f64,
    /// Re-estimate the proposal covariance from tuning draws.
    pub adapt_shape: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            start_spread: 1.0,
            adapt_shape: true,
        }
    }
}

/// The initialization point used when none is given: in support, order of
/// magnitude plausible for the Qatar data, and away from any fitted answer.
pub fn default_start(n_interventions: usize) -> ParameterVector {
    let mut alpha = vec![-1e-8; n_interventions + 1];
    alpha[0] = 2e-7;
    ParameterVector {
        alpha,
        beta_a: 0.5,
        beta: 0.01,
        gamma: 0.01,
        eta: 0.01,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeCandidate {
    pub start: Vec<f64>,
    pub mode: Vec<f64>,
    pub log_post: f64,
}

/// Runs the mode search from `start` and from `n_starts - 1` seeded
/// perturbations. Candidates are returned in start order; pick with
/// [`best_candidate`]. Perturbed starts the model cannot evaluate are
/// redrawn, up to a bounded number of attempts.
pub fn search_modes(
    ctx: &ModelContext,
    start: &ParameterVector,
    options: &FitOptions,
    search: &ModeSearch,
    seed: u64,
) -> Result<Vec<ModeCandidate>, FitError> {
    let feasible = |p: &ParameterVector| ctx.log_posterior(p).is_ok_and(|lp| lp.is_finite());
    if !feasible(start) {
        return Err(OptimizeError::InfeasibleStart.into());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(START_STREAM);
    let u0 = to_unconstrained(start);
    let mut starts = vec![start.clone()];
    let max_attempts = 100 * options.n_starts.max(1);
    let mut attempts = 0;
    while starts.len() < options.n_starts {
        attempts += 1;
        if attempts > max_attempts {
            return Err(FitError::NoFiniteStart(attempts - 1));
        }
        let u: Vec<f64> = u0
            .iter()
            .map(|v| v + options.start_spread * rng.random_range(-1.0..=1.0))
            .collect();
        let p = from_unconstrained(&u);
        if feasible(&p) {
            starts.push(p);
        }
    }
    starts
        .par_iter()
        .map(|s| {
            let mode = search.run(ctx, s)?;
            let log_post = ctx
                .log_posterior(&mode)
                .map(|lp| lp.value())
                .unwrap_or(f64::NEG_INFINITY);
            Ok(ModeCandidate {
                start: s.to_vec(),
                mode: mode.to_vec(),
                log_post,
            })
        })
        .collect()
}

/// Highest log-posterior candidate; the earliest wins ties.
pub fn best_candidate(candidates: &[ModeCandidate]) -> Option<&ModeCandidate> {
    candidates
        .iter()
        .filter(|c| c.log_post.is_finite())
        .fold(None, |best: Option<&ModeCandidate>, c| match best {
            Some(b) if b.log_post >= c.log_post => Some(b),
            _ => Some(c),
        })
}

/// Log-posterior without the support check, used only for finite
/// differences that may step just across a constraint boundary.
fn smooth_log_posterior(ctx: &ModelContext, x: &[f64]) -> Option<f64> {
    let mut params = ParameterVector::from_slice(x).ok()?;
    params.beta_a = params.beta_a.clamp(0.0, 1.0);
    let prior = &ctx.prior;
    let quad: f64 = params.alpha.iter().map(|a| (a - prior.a).powi(2)).sum();
    let log_prior = -0.5 * quad / prior.sigma2
        - prior.rate_beta_a * params.beta_a
        - prior.rate_beta * params.beta
        - prior.rate_gamma * params.gamma
        - prior.rate_eta * params.eta;
    let ll = ctx.log_likelihood(&params, ctx.obs.train_range()).ok()?;
    let v = log_prior + ll.value();
    v.is_finite().then_some(v)
}

/// Covariance of the Gaussian approximation at `mode`: the inverse of the
/// negated finite-difference Hessian, with non-concave directions floored.
/// Step sizes are refined from the diagonal curvature so each difference
/// moves the log density by a fraction of a unit.
pub fn laplace_covariance(ctx: &ModelContext, mode: &[f64]) -> Option<DMatrix<f64>> {
    let d = mode.len();
    let f = |x: &[f64]| smooth_log_posterior(ctx, x);
    let f0 = f(mode)?;
    let mut h: Vec<f64> = mode.iter().map(|v| 1e-4 * v.abs().max(1e-12)).collect();
    let mut x = mode.to_vec();
    for _ in 0..3 {
        for i in 0..d {
            x[i] = mode[i] + h[i];
            let up = f(&x)?;
            x[i] = mode[i] - h[i];
            let down = f(&x)?;
            x[i] = mode[i];
            let curv = -(up - 2.0 * f0 + down) / (h[i] * h[i]);
            if curv > 0.0 && curv.is_finite() {
                h[i] = (0.5 / curv.sqrt()).min(0.1 * mode[i].abs().max(1e-12));
            }
        }
    }

    // Negated Hessian in coordinates scaled by the step sizes.
    let mut a = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        x[i] = mode[i] + h[i];
        let up = f(&x)?;
        x[i] = mode[i] - h[i];
        let down = f(&x)?;
        x[i] = mode[i];
        a[(i, i)] = -(up - 2.0 * f0 + down);
        for j in 0..i {
            let corner = |si: f64, sj: f64| {
                let mut y = mode.to_vec();
                y[i] += si * h[i];
                y[j] += sj * h[j];
                f(&y)
            };
            let v = corner(1.0, 1.0)? - corner(1.0, -1.0)? - corner(-1.0, 1.0)?
                + corner(-1.0, -1.0)?;
            a[(i, j)] = -v / 4.0;
            a[(j, i)] = a[(i, j)];
        }
    }

    let eig = SymmetricEigen::new(a);
    let floor = 1e-2;
    let inv_vals = eig.eigenvalues.map(|l| 1.0 / l.max(floor));
    let scaled = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let cov = DMatrix::from_fn(d, d, |i, j| scaled[(i, j)] * h[i] * h[j]);
    cov.iter().all(|v| v.is_finite()).then_some(cov)
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub candidates: Vec<ModeCandidate>,
    pub mode: Vec<f64>,
    pub mode_log_post: f64,
    /// True when the curvature estimate failed and the configured diagonal
    /// scales were used instead.
    pub diagonal_fallback: bool,
    pub tuning: Vec<TuneRound>,
    pub tuned_config: SamplerConfig,
    pub samples: PosteriorSamples,
}

/// Tuning and sampling started at a known mode.
#[derive(Debug, Clone)]
pub struct ModeRun {
    /// True when the curvature estimate failed and the configured diagonal
    /// scales were used instead.
    pub diagonal_fallback: bool,
    pub tuning: Vec<TuneRound>,
    pub tuned_config: SamplerConfig,
    pub samples: PosteriorSamples,
}

/// Builds the curvature-shaped proposal at `mode`, tunes and samples. Empty
/// `config.proposal_scales` are filled from the curvature.
pub fn sample_from_mode(
    ctx: &ModelContext,
    mode: &[f64],
    config: &SamplerConfig,
    options: &FitOptions,
) -> Result<ModeRun, FitError> {
    let proposal = laplace_covariance(ctx, mode).and_then(|c| Proposal::from_covariance(&c));
    let diagonal_fallback = proposal.is_none();
    let mut config = config.clone();
    if config.proposal_scales.is_empty() {
        config.proposal_scales = match &proposal {
            Some(p) => p.scales(),
            None => mode.iter().map(|v| 1e-6 * v.abs().max(1e-12)).collect(),
        };
    }
    let tuned = sampler::tune(&config, ctx, mode, proposal, options.adapt_shape)?;
    let samples = sampler::sample(&tuned, ctx);
    Ok(ModeRun {
        diagonal_fallback,
        tuning: tuned.rounds,
        tuned_config: tuned.config,
        samples,
    })
}

/// Mode search, tuning and sampling with `config.seed` driving every random
/// choice.
pub fn fit(
    ctx: &ModelContext,
    start: &ParameterVector,
    config: &SamplerConfig,
    options: &FitOptions,
) -> Result<FitOutcome, FitError> {
    let candidates = search_modes(ctx, start, options, &ModeSearch::default(), config.seed)?;
    let best = best_candidate(&candidates).ok_or(FitError::NoFiniteStart(candidates.len()))?;
    let mode = best.mode.clone();
    let mode_log_post = best.log_post;
    let run = sample_from_mode(ctx, &mode, config, options)?;
    Ok(FitOutcome {
        candidates,
        mode,
        mode_log_post,
        diagonal_fallback: run.diagonal_fallback,
        tuning: run.tuning,
        tuned_config: run.tuned_config,
        samples: run.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn candidate(lp: f64, tag: f64) -> ModeCandidate {
        ModeCandidate {
            start: vec![tag],
            mode: vec![tag],
            log_post: lp,
        }
    }

    #[test]
    fn best_candidate_prefers_highest_then_earliest() {
        let c = [candidate(-5.0, 0.0), candidate(-1.0, 1.0), candidate(-1.0, 2.0)];
        assert_eq!(best_candidate(&c).unwrap().start, vec![1.0]);
        let c = [candidate(f64::NEG_INFINITY, 0.0), candidate(f64::NAN, 1.0)];
        assert!(best_candidate(&c).is_none());
    }

    #[test]
    fn default_start_is_in_support() {
        for k in 0..6 {
            let p = default_start(k);
            assert_eq!(p.alpha.len(), k + 1);
            assert!(p.in_support());
        }
    }

    #[test]
    fn laplace_covariance_is_positive_definite_at_reference() {
        let config = RunConfig::default();
        let ctx = config.context(config.observed().unwrap()).unwrap();
        let x = ParameterVector::qatar_reference().to_vec();
        let cov = laplace_covariance(&ctx, &x).unwrap();
        assert_eq!(cov.nrows(), x.len());
        assert!(cov.clone().cholesky().is_some());
        assert!((0..x.len()).all(|i| cov[(i, i)] > 0.0));
    }
}
