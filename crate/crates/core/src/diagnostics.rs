//! Chain diagnostics: acceptance, moments, lag-1 autocorrelation and an
//! effective sample size estimate per parameter.

use serde::{Deserialize, Serialize};

use crate::sampler::PosteriorSamples;
use crate::stats::{mean, quantile_sorted, sample_sd};

/// Per-parameter chain statistics. Autocorrelation and ESS are `None` when
/// the column has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterDiagnostics {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    pub lag1_autocorr: Option<f64>,
    pub ess: Option<f64>,
    /// Set when the column never moved.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub acceptance_rate: f64,
    pub n_samples: usize,
    pub evaluation_failures: u64,
    pub parameters: Vec<ParameterDiagnostics>,
}

impl DiagnosticsReport {
    pub fn parameter(&self, name: &str) -> Option<&ParameterDiagnostics> {
        self.parameters.iter().find(|p| p.name == name)
    }
}

/// Autocovariances at lags `0..max_lag`, normalized by `n`.
fn autocovariances(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let m = mean(x);
    (0..max_lag.min(n))
        .map(|k| {
            x[..n - k]
                .iter()
                .zip(&x[k..])
                .map(|(a, b)| (a - m) * (b - m))
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

pub fn lag1_autocorrelation(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    let acov = autocovariances(x, 2);
    (acov[0] > 0.0).then(|| acov[1] / acov[0])
}

/// Effective sample size by Geyer's initial monotone sequence: sums of
/// adjacent autocorrelation pairs are truncated at the first non-positive
/// pair and forced to be non-increasing.
pub fn effective_sample_size(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let acov = autocovariances(x, n);
    if acov[0] <= 0.0 {
        return None;
    }
    let rho: Vec<f64> = acov.iter().map(|c| c / acov[0]).collect();
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = rho[k] + rho[k + 1];
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        k += 2;
    }
    Some((n as f64 / tau).min(n as f64 * (n as f64).log10()))
}

/// Panics if `samples` has fewer than two draws.
pub fn diagnostics(samples: &PosteriorSamples) -> DiagnosticsReport {
    assert!(samples.n_samples() >= 2, "diagnostics need at least two draws");
    let parameters = samples
        .column_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let column = samples.column(j);
            let mut sorted = column.clone();
            sorted.sort_by(f64::total_cmp);
            let sd = sample_sd(&column);
            ParameterDiagnostics {
                name: name.clone(),
                mean: mean(&column),
                sd,
                q025: quantile_sorted(&sorted, 0.025),
                q500: quantile_sorted(&sorted, 0.5),
                q975: quantile_sorted(&sorted, 0.975),
                lag1_autocorr: lag1_autocorrelation(&column),
                ess: effective_sample_size(&column),
                degenerate: sd == 0.0,
            }
        })
        .collect();
    DiagnosticsReport {
        acceptance_rate: samples.accept_rate,
        n_samples: samples.n_samples(),
        evaluation_failures: samples.failures,
        parameters,
    }
}
