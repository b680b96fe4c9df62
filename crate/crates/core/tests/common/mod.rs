//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use seirdfit::data::ObservedSeries;
use seirdfit::dynamics::{InterventionSchedule, MeanTrajectory, ParameterVector, StateVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Forward Euler written out from the model equations, with its own
/// transmission-rate lookup and impulse handling.
pub fn euler(
    p: &ParameterVector,
    change_days: &[u32],
    impulse_day: u32,
    init: &StateVector,
    horizon: usize,
    h: f64,
) -> Vec<[f64; 5]> {
    let steps_per_day = (1.0 / h).round() as usize;
    let [mut s, mut e, mut i, mut r, mut d] = [init.s, init.e, init.i, init.r, init.d];
    let mut out = vec![[s, e, i, r, d]];
    for day in 0..horizon {
        let mut rate = p.alpha[0];
        for (k, t) in change_days.iter().enumerate() {
            if *t as usize <= day {
                rate += p.alpha[k + 1];
            }
        }
        for _ in 0..steps_per_day {
            let inf = rate * s * e;
            let ds = -inf;
            let de = inf - p.beta * e;
            let di = p.beta * e - (p.gamma + p.eta) * i;
            let dr = p.gamma * i;
            let dd = p.eta * i;
            s += h * ds;
            e += h * de;
            i += h * di;
            r += h * dr;
            d += h * dd;
        }
        if day + 1 == impulse_day as usize {
            let moved = p.beta_a * e;
            e -= moved;
            i += moved;
        }
        out.push([s, e, i, r, d]);
    }
    out
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// A random point of the posterior support for `k` interventions, with
/// regime rates and other rates spread over several orders of magnitude.
pub fn random_in_support<R: Rng>(rng: &mut R, k: usize) -> ParameterVector {
    let sums: Vec<f64> = (0..=k).map(|_| log_uniform(rng, 1e-9, 4e-7)).collect();
    let mut alpha = vec![sums[0]];
    alpha.extend(sums.windows(2).map(|w| w[1] - w[0]));
    ParameterVector {
        alpha,
        beta_a: rng.random_range(0.0..=1.0),
        beta: log_uniform(rng, 1e-3, 1.0),
        gamma: log_uniform(rng, 1e-3, 0.5),
        eta: log_uniform(rng, 1e-5, 0.05),
    }
}

/// Reference values perturbed multiplicatively on each regime rate and
/// rate parameter.
pub fn perturbed_reference<R: Rng>(rng: &mut R, spread: f64) -> ParameterVector {
    let reference = ParameterVector::qatar_reference();
    let sums: Vec<f64> = reference
        .partial_sums()
        .iter()
        .map(|s| s * (1.0 + rng.random_range(-spread..spread)))
        .collect();
    let mut alpha = vec![sums[0]];
    alpha.extend(sums.windows(2).map(|w| w[1] - w[0]));
    let mut jitter = |v: f64| v * (1.0 + rng.random_range(-spread..spread));
    ParameterVector {
        alpha,
        beta_a: jitter(reference.beta_a).min(1.0),
        beta: jitter(reference.beta),
        gamma: jitter(reference.gamma),
        eta: jitter(reference.eta),
    }
}

/// `ln P(Y = y)` for `Y ~ Poisson(lambda)`, summing `ln k` for the factorial.
pub fn brute_force_log_pmf(y: u64, lambda: f64) -> f64 {
    let log_fact: f64 = (1..=y).map(|k| (k as f64).ln()).sum();
    if lambda == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    y as f64 * lambda.ln() - lambda - log_fact
}

pub fn log_factorial(y: u64) -> f64 {
    (1..=y).map(|k| (k as f64).ln()).sum()
}

/// Mean and variance of `N(mu, sigma^2)` truncated to `(lo, inf)`.
pub fn truncated_normal_moments(mu: f64, sigma: f64, lo: f64) -> (f64, f64) {
    let std = Normal::new(0.0, 1.0).unwrap();
    let a = (lo - mu) / sigma;
    let z = 1.0 - std.cdf(a);
    let lambda = std.pdf(a) / z;
    let mean = mu + sigma * lambda;
    let var = sigma * sigma * (1.0 + a * lambda - lambda * lambda);
    (mean, var)
}

/// Observations drawn as Poisson counts around `traj` on days `1..len`; day 0
/// keeps the template's values.
pub fn poisson_observations<R: Rng>(
    traj: &MeanTrajectory,
    template: &ObservedSeries,
    rng: &mut R,
) -> ObservedSeries {
    let mut obs = template.clone();
    let mut draw = |lambda: f64| {
        if lambda <= 0.0 {
            0
        } else {
            Poisson::new(lambda).unwrap().sample(rng) as u64
        }
    };
    for day in 1..obs.len() {
        let st = traj.at(day);
        obs.active[day] = draw(st.i);
        obs.recovered[day] = draw(st.r);
        obs.deaths[day] = draw(st.d);
    }
    obs
}

pub fn qatar_schedule() -> InterventionSchedule {
    InterventionSchedule::qatar()
}
