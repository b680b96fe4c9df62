//! Posterior summaries and predictive checks computed from retained draws.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DayRange, ObservedSeries, Series};
use crate::dynamics::{DynamicsError, Integrator, InterventionSchedule, MeanTrajectory, StateVector};
use crate::sampler::PosteriorSamples;
use crate::stats::{mean, quantile_sorted, sample_sd};

pub const MIN_SAMPLES: usize = 100;

/// Per-draw predictive streams start here so they never coincide with the
/// sampler's streams under the same seed.
const PREDICTIVE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{n} draws given, at least {min} required")]
    TooFewSamples { n: usize, min: usize },
    #[error("contrasts need at least one intervention")]
    NoInterventions,
    #[error("samples have {got} alpha columns, schedule expects {expected}")]
    ScheduleMismatch { expected: usize, got: usize },
    #[error("draw {draw} failed to integrate: {source}")]
    Integration { draw: usize, source: DynamicsError },
    #[error("Poisson mean {0} cannot be sampled")]
    BadRate(f64),
    #[error("observations have zero variance over the range")]
    ZeroVariance,
    #[error("day range {start}..{end} not covered by bands and observations")]
    BadRange { start: usize, end: usize },
    #[error("horizon must be at least {min}, got {horizon}")]
    HorizonTooShort { horizon: usize, min: usize },
    #[error("no draws given")]
    NoDraws,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q500: f64,
    pub q975: f64,
    /// Fraction of draws above zero; contrasts only.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_positive: Option<f64>,
}

impl SummaryRow {
    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            name: name.into(),
            mean: mean(values),
            sd: sample_sd(values),
            q025: quantile_sorted(&sorted, 0.025),
            q500: quantile_sorted(&sorted, 0.5),
            q975: quantile_sorted(&sorted, 0.975),
            p_positive: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn row(&self, name: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_csv(&self) -> String {
        let with_p = self.rows.iter().any(|r| r.p_positive.is_some());
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["name", "mean", "sd", "q025", "q500", "q975"];
        if with_p {
            header.push("p_positive");
        }
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut record = vec![
                r.name.clone(),
                r.mean.to_string(),
                r.sd.to_string(),
                r.q025.to_string(),
                r.q500.to_string(),
                r.q975.to_string(),
            ];
            if with_p {
                record.push(r.p_positive.map(|p| p.to_string()).unwrap_or_default());
            }
            w.write_record(&record).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields")
    }
}

fn check_size(samples: &PosteriorSamples) -> Result<(), AnalysisError> {
    if samples.n_samples() < MIN_SAMPLES {
        return Err(AnalysisError::TooFewSamples {
            n: samples.n_samples(),
            min: MIN_SAMPLES,
        });
    }
    Ok(())
}

fn alpha_columns(samples: &PosteriorSamples) -> Vec<Vec<f64>> {
    let k1 = samples.dim().saturating_sub(4);
    (0..k1).map(|j| samples.column(j)).collect()
}

/// Column-wise mean, sd and quantiles.
pub fn summarize(samples: &PosteriorSamples) -> Result<SummaryTable, AnalysisError> {
    check_size(samples)?;
    let rows = samples
        .column_names
        .iter()
        .enumerate()
        .map(|(j, name)| SummaryRow::from_values(name.clone(), &samples.column(j)))
        .collect();
    Ok(SummaryTable { rows })
}

/// Per-draw `alpha_k - alpha_{k-1}` for every intervention.
pub fn contrast_draws(samples: &PosteriorSamples) -> Vec<Vec<f64>> {
    let alpha = alpha_columns(samples);
    alpha
        .windows(2)
        .map(|w| w[1].iter().zip(&w[0]).map(|(b, a)| b - a).collect())
        .collect()
}

/// Sequential contrasts summarized with `P(>0)`.
pub fn contrasts(samples: &PosteriorSamples) -> Result<SummaryTable, AnalysisError> {
    check_size(samples)?;
    let draws = contrast_draws(samples);
    if draws.is_empty() {
        return Err(AnalysisError::NoInterventions);
    }
    let rows = draws
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let k = i + 1;
            let mut row = SummaryRow::from_values(format!("alpha{k}-alpha{}", k - 1), d);
            row.p_positive = Some(d.iter().filter(|v| **v > 0.0).count() as f64 / d.len() as f64);
            row
        })
        .collect();
    Ok(SummaryTable { rows })
}

/// Per-draw transmission rate in each regime: running sums of the alpha
/// columns.
pub fn interval_rate_draws(samples: &PosteriorSamples) -> Vec<Vec<f64>> {
    let alpha = alpha_columns(samples);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(alpha.len());
    for col in &alpha {
        let next = match out.last() {
            None => col.clone(),
            Some(prev) => prev.iter().zip(col).map(|(s, a)| s + a).collect(),
        };
        out.push(next);
    }
    out
}

/// Labels `[t_j,t_{j+1})` for each regime, the last one open-ended.
pub fn interval_labels(schedule: &InterventionSchedule) -> Vec<String> {
    let mut bounds = vec![0u32];
    bounds.extend_from_slice(schedule.change_days());
    bounds
        .iter()
        .enumerate()
        .map(|(j, start)| match bounds.get(j + 1) {
            Some(end) => format!("[{start},{end})"),
            None => format!("[{start},inf)"),
        })
        .collect()
}

pub fn interval_rates(
    samples: &PosteriorSamples,
    schedule: &InterventionSchedule,
) -> Result<SummaryTable, AnalysisError> {
    check_size(samples)?;
    let draws = interval_rate_draws(samples);
    let labels = interval_labels(schedule);
    if draws.len() != labels.len() {
        return Err(AnalysisError::ScheduleMismatch {
            expected: labels.len(),
            got: draws.len(),
        });
    }
    let rows = labels
        .into_iter()
        .zip(&draws)
        .map(|(label, d)| SummaryRow::from_values(label, d))
        .collect();
    Ok(SummaryTable { rows })
}

/// Per-day quantile band of one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub series: String,
    pub lower: Vec<f64>,
    pub median: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Bands over consecutive days starting at `first_day`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveBands {
    pub first_day: usize,
    pub bands: Vec<Band>,
}

impl PredictiveBands {
    /// Builds bands from per-series, per-draw, per-day values.
    pub fn from_draws(first_day: usize, series: &[(&str, Vec<&[f64]>)]) -> Self {
        let bands = series
            .iter()
            .map(|(name, draws)| {
                let days = draws.first().map_or(0, |d| d.len());
                let mut lower = Vec::with_capacity(days);
                let mut median = Vec::with_capacity(days);
                let mut upper = Vec::with_capacity(days);
                let mut column = Vec::with_capacity(draws.len());
                for t in 0..days {
                    column.clear();
                    column.extend(draws.iter().map(|d| d[t]));
                    column.sort_by(f64::total_cmp);
                    lower.push(quantile_sorted(&column, 0.025));
                    median.push(quantile_sorted(&column, 0.5));
                    upper.push(quantile_sorted(&column, 0.975));
                }
                Band {
                    series: name.to_string(),
                    lower,
                    median,
                    upper,
                }
            })
            .collect();
        Self { first_day, bands }
    }

    pub fn band(&self, series: &str) -> Option<&Band> {
        self.bands.iter().find(|b| b.series == series)
    }

    pub fn n_days(&self) -> usize {
        self.bands.first().map_or(0, |b| b.median.len())
    }

    /// Last covered day, inclusive.
    pub fn last_day(&self) -> usize {
        self.first_day + self.n_days() - 1
    }

    pub fn covers(&self, range: DayRange) -> bool {
        !range.is_empty() && range.start >= self.first_day && range.end <= self.first_day + self.n_days()
    }

    /// The same bands restricted to `range`; `None` if not covered.
    pub fn restrict(&self, range: DayRange) -> Option<PredictiveBands> {
        if !self.covers(range) {
            return None;
        }
        let a = range.start - self.first_day;
        let b = range.end - self.first_day;
        Some(PredictiveBands {
            first_day: range.start,
            bands: self
                .bands
                .iter()
                .map(|band| Band {
                    series: band.series.clone(),
                    lower: band.lower[a..b].to_vec(),
                    median: band.median[a..b].to_vec(),
                    upper: band.upper[a..b].to_vec(),
                })
                .collect(),
        })
    }

    /// CSV with header `day,series,lower,median,upper`, day-major.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,series,lower,median,upper\n");
        for t in 0..self.n_days() {
            for band in &self.bands {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    self.first_day + t,
                    band.series,
                    band.lower[t],
                    band.median[t],
                    band.upper[t]
                ));
            }
        }
        out
    }
}

pub fn series_key(series: Series) -> &'static str {
    match series {
        Series::Active => "active",
        Series::Recovered => "recovered",
        Series::Deaths => "deaths",
    }
}

/// One posterior draw pushed forward: the mean trajectory and Poisson counts
/// for active, recovered and deaths on days `0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawPrediction {
    pub mean: MeanTrajectory,
    pub counts: [Vec<f64>; 3],
}

impl DrawPrediction {
    pub fn counts(&self, series: Series) -> &[f64] {
        match series {
            Series::Active => &self.counts[0],
            Series::Recovered => &self.counts[1],
            Series::Deaths => &self.counts[2],
        }
    }

    /// Sampled cumulative confirmed counts (active + recovered + deaths).
    pub fn confirmed(&self) -> Vec<f64> {
        (0..self.counts[0].len())
            .map(|t| self.counts[0][t] + self.counts[1][t] + self.counts[2][t])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictive {
    pub bands: PredictiveBands,
    pub draws: Vec<DrawPrediction>,
}

pub fn poisson_count<R: rand::Rng>(lambda: f64, rng: &mut R) -> Result<f64, AnalysisError> {
    if lambda <= 0.0 {
        return Ok(0.0);
    }
    let dist = Poisson::new(lambda).map_err(|_| AnalysisError::BadRate(lambda))?;
    Ok(dist.sample(rng))
}

/// Integrates every draw to `horizon` and samples Poisson counts per day and
/// series. Draw `i` uses its own stream derived from `(seed, i)`, so results
/// do not depend on how the work is spread over threads.
pub fn posterior_predictive(
    samples: &PosteriorSamples,
    schedule: &InterventionSchedule,
    init: &StateVector,
    integrator: &Integrator,
    horizon: usize,
    seed: u64,
) -> Result<Predictive, AnalysisError> {
    if samples.n_samples() == 0 {
        return Err(AnalysisError::NoDraws);
    }
    if horizon < 1 {
        return Err(AnalysisError::HorizonTooShort { horizon, min: 1 });
    }
    let draws: Vec<DrawPrediction> = (0..samples.n_samples())
        .into_par_iter()
        .map(|i| {
            let params = samples.parameters(i);
            let mean = integrator
                .integrate(&params, schedule, init, horizon)
                .map_err(|source| AnalysisError::Integration { draw: i, source })?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(PREDICTIVE_STREAM_BASE + i as u64);
            let mut counts: [Vec<f64>; 3] = Default::default();
            for state in &mean.states {
                counts[0].push(poisson_count(state.i, &mut rng)?);
                counts[1].push(poisson_count(state.r, &mut rng)?);
                counts[2].push(poisson_count(state.d, &mut rng)?);
            }
            Ok(DrawPrediction { mean, counts })
        })
        .collect::<Result<_, AnalysisError>>()?;
    let series: Vec<(&str, Vec<&[f64]>)> = Series::ALL
        .iter()
        .map(|s| (series_key(*s), draws.iter().map(|d| d.counts(*s)).collect()))
        .collect();
    Ok(Predictive {
        bands: PredictiveBands::from_draws(0, &series),
        draws,
    })
}

/// Pooled pseudo-R² over the three observed series: `1 - SSE/SST` with the
/// band medians as predictions and each series centered at its own mean.
pub fn pseudo_r2(
    bands: &PredictiveBands,
    obs: &ObservedSeries,
    range: DayRange,
) -> Result<f64, AnalysisError> {
    if !bands.covers(range) || range.end > obs.len() {
        return Err(AnalysisError::BadRange {
            start: range.start,
            end: range.end,
        });
    }
    let mut sse = 0.0;
    let mut sst = 0.0;
    for series in Series::ALL {
        let band = bands.band(series_key(series)).ok_or(AnalysisError::BadRange {
            start: range.start,
            end: range.end,
        })?;
        let y: Vec<f64> = range.days().map(|t| obs.series(series)[t] as f64).collect();
        let y_bar = mean(&y);
        for (t, yt) in range.days().zip(&y) {
            sse += (yt - band.median[t - bands.first_day]).powi(2);
            sst += (yt - y_bar).powi(2);
        }
    }
    if sst == 0.0 {
        return Err(AnalysisError::ZeroVariance);
    }
    Ok(1.0 - sse / sst)
}

/// Pseudo-R² over the held-out days.
pub fn predictive_r2(bands: &PredictiveBands, obs: &ObservedSeries) -> Result<f64, AnalysisError> {
    pseudo_r2(bands, obs, obs.test_range())
}

/// Fraction of observations over `range` (all three series) inside their
/// day's band.
pub fn band_containment(
    bands: &PredictiveBands,
    obs: &ObservedSeries,
    range: DayRange,
) -> Result<f64, AnalysisError> {
    if !bands.covers(range) || range.end > obs.len() {
        return Err(AnalysisError::BadRange {
            start: range.start,
            end: range.end,
        });
    }
    let mut inside = 0usize;
    let mut total = 0usize;
    for series in Series::ALL {
        let band = bands.band(series_key(series)).expect("predictive bands carry every series");
        for t in range.days() {
            let y = obs.series(series)[t] as f64;
            let i = t - bands.first_day;
            if band.lower[i] <= y && y <= band.upper[i] {
                inside += 1;
            }
            total += 1;
        }
    }
    Ok(inside as f64 / total as f64)
}

/// Bands of per-draw day-to-day differences of sampled cumulative confirmed
/// counts, days `1..=horizon`.
pub fn new_infections(draws: &[DrawPrediction]) -> Result<PredictiveBands, AnalysisError> {
    let first = draws.first().ok_or(AnalysisError::NoDraws)?;
    let days = first.counts[0].len();
    if days < 2 {
        return Err(AnalysisError::HorizonTooShort {
            horizon: days.saturating_sub(1),
            min: 1,
        });
    }
    let diffs: Vec<Vec<f64>> = draws
        .iter()
        .map(|d| d.confirmed().windows(2).map(|w| w[1] - w[0]).collect())
        .collect();
    let refs: Vec<&[f64]> = diffs.iter().map(|d| d.as_slice()).collect();
    Ok(PredictiveBands::from_draws(1, &[("new_infections", refs)]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakInterval {
    /// Floor of the 2.5% quantile of the per-draw peak day.
    pub lower: usize,
    /// Ceiling of the 97.5% quantile.
    pub upper: usize,
    pub horizon: usize,
    /// Fraction of draws whose maximum sits on the last day.
    pub boundary_fraction: f64,
    /// More than 5% of draws peak at the horizon, so the interval is cut off.
    pub horizon_limited: bool,
    pub peak_days: Vec<usize>,
}

/// Peak day of each draw's mean active trajectory (earliest on ties) and
/// the central 95% interval of those days.
pub fn peak_interval(trajectories: &[&MeanTrajectory]) -> Result<PeakInterval, AnalysisError> {
    let first = trajectories.first().ok_or(AnalysisError::NoDraws)?;
    let horizon = first.horizon;
    let peak_days: Vec<usize> = trajectories.iter().map(|t| t.peak_active_day()).collect();
    let mut sorted: Vec<f64> = peak_days.iter().map(|d| *d as f64).collect();
    sorted.sort_by(f64::total_cmp);
    let at_boundary = peak_days.iter().filter(|d| **d == horizon).count();
    let boundary_fraction = at_boundary as f64 / peak_days.len() as f64;
    Ok(PeakInterval {
        lower: quantile_sorted(&sorted, 0.025).floor() as usize,
        upper: quantile_sorted(&sorted, 0.975).ceil() as usize,
        horizon,
        boundary_fraction,
        horizon_limited: boundary_fraction > 0.05,
        peak_days,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_train_end, derive_series, qatar_records};
    use crate::dynamics::ParameterVector;

    fn samples(rows: Vec<Vec<f64>>) -> PosteriorSamples {
        let k = rows[0].len() - 5;
        PosteriorSamples {
            column_names: ParameterVector::names(k),
            log_post: vec![0.0; rows.len()],
            draws: rows,
            accept_rate: 0.25,
            seed: 0,
            failures: 0,
        }
    }

    fn reference_rows(n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let mut p = ParameterVector::qatar_reference();
                p.beta *= 1.0 + 1e-3 * (i as f64 / n as f64 - 0.5);
                p.to_vec()
            })
            .collect()
    }

    #[test]
    fn constant_column_summary() {
        let s = samples(vec![vec![3.0, -1.0, 0.5, 0.1, 0.2, 0.3]; 150]);
        let t = summarize(&s).unwrap();
        let r = t.row("alpha0").unwrap();
        assert_eq!((r.mean, r.sd, r.q025, r.q500, r.q975), (3.0, 0.0, 3.0, 3.0, 3.0));
    }

    #[test]
    fn summary_quantiles_are_ordered() {
        let s = samples(reference_rows(200));
        for r in summarize(&s).unwrap().rows {
            assert!(r.q025 <= r.q500 && r.q500 <= r.q975, "{}", r.name);
        }
    }

    #[test]
    fn too_few_draws() {
        let s = samples(reference_rows(50));
        assert_eq!(
            summarize(&s).unwrap_err(),
            AnalysisError::TooFewSamples { n: 50, min: 100 }
        );
    }

    #[test]
    fn contrasts_are_column_differences() {
        let s = samples(reference_rows(120));
        let draws = contrast_draws(&s);
        assert_eq!(draws.len(), 5);
        for (i, row) in s.draws.iter().enumerate() {
            assert_eq!(draws[0][i], row[1] - row[0]);
            assert_eq!(draws[4][i], row[5] - row[4]);
        }
        let table = contrasts(&s).unwrap();
        let first = table.row("alpha1-alpha0").unwrap();
        assert!((first.mean - -4.45e-7).abs() < 1e-12);
        assert_eq!(first.p_positive, Some(0.0));
        assert_eq!(table.row("alpha2-alpha1").unwrap().p_positive, Some(1.0));
    }

    #[test]
    fn contrasts_need_an_intervention() {
        let s = samples(vec![vec![1e-7, 0.5, 0.1, 0.01, 0.001]; 100]);
        assert_eq!(contrasts(&s).unwrap_err(), AnalysisError::NoInterventions);
    }

    #[test]
    fn interval_rates_match_partial_sums() {
        let s = samples(reference_rows(100));
        let schedule = InterventionSchedule::qatar();
        let table = interval_rates(&s, &schedule).unwrap();
        assert_eq!(table.rows.len(), 6);
        assert_eq!(table.rows[0].name, "[0,12)");
        assert_eq!(table.rows[5].name, "[59,inf)");
        assert_eq!(table.rows[0], SummaryRow {
            name: "[0,12)".into(),
            ..summarize(&s).unwrap().rows[0].clone()
        });
        assert!((table.rows[1].mean - 2.1e-8).abs() < 1e-15);
        let wrong = InterventionSchedule::new(vec![10], 5).unwrap();
        assert!(matches!(
            interval_rates(&s, &wrong),
            Err(AnalysisError::ScheduleMismatch { .. })
        ));
    }

    #[test]
    fn interval_labels_are_quoted_in_csv() {
        let s = samples(reference_rows(100));
        let table = interval_rates(&s, &InterventionSchedule::qatar()).unwrap();
        let csv = table.to_csv();
        let mut reader = csv::Reader::from_reader(csv.as_bytes());
        let names: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
        assert_eq!(names[0], "[0,12)");
        assert_eq!(names.len(), 6);
    }

    #[test]
    fn zero_rates_give_zero_bands() {
        let s = samples(vec![vec![1e-7, 0.0, 0.0, 0.0]; 3].into_iter().map(|mut r| {
            r.push(0.0);
            r
        }).collect());
        let init = StateVector { s: 100.0, e: 0.0, i: 0.0, r: 0.0, d: 0.0 };
        let schedule = InterventionSchedule::new(vec![], 1).unwrap();
        let p = posterior_predictive(&s, &schedule, &init, &Integrator::default(), 20, 4).unwrap();
        for band in &p.bands.bands {
            assert!(band.lower.iter().chain(&band.median).chain(&band.upper).all(|v| *v == 0.0));
        }
    }

    #[test]
    fn predictive_is_reproducible_and_ordered() {
        let s = samples(reference_rows(40));
        let schedule = InterventionSchedule::qatar();
        let init = StateVector::qatar_initial();
        let run = |seed| {
            posterior_predictive(&s, &schedule, &init, &Integrator::default(), 63, seed).unwrap()
        };
        let a = run(7);
        assert_eq!(a, run(7));
        assert_ne!(a.bands, run(8).bands);
        assert_eq!(a.bands.first_day, 0);
        assert_eq!(a.bands.last_day(), 63);
        for band in &a.bands.bands {
            for t in 0..band.median.len() {
                assert!(band.lower[t] <= band.median[t] && band.median[t] <= band.upper[t]);
                assert!(band.lower[t] >= 0.0);
            }
        }
    }

    fn toy_obs() -> ObservedSeries {
        derive_series(&qatar_records(), default_train_end()).unwrap()
    }

    fn bands_with_medians(obs: &ObservedSeries, f: impl Fn(Series, usize) -> f64) -> PredictiveBands {
        let bands = Series::ALL
            .iter()
            .map(|s| {
                let median: Vec<f64> = (0..obs.len()).map(|t| f(*s, t)).collect();
                Band {
                    series: series_key(*s).into(),
                    lower: median.clone(),
                    upper: median.clone(),
                    median,
                }
            })
            .collect();
        PredictiveBands { first_day: 0, bands }
    }

    #[test]
    fn r2_extremes() {
        let obs = toy_obs();
        let range = obs.train_range();
        let exact = bands_with_medians(&obs, |s, t| obs.series(s)[t] as f64);
        assert_eq!(pseudo_r2(&exact, &obs, range).unwrap(), 1.0);
        assert_eq!(predictive_r2(&exact, &obs).unwrap(), 1.0);
        let means = bands_with_medians(&obs, |s, _| {
            let y: Vec<f64> = range.days().map(|t| obs.series(s)[t] as f64).collect();
            mean(&y)
        });
        assert!(pseudo_r2(&means, &obs, range).unwrap().abs() < 1e-12);
        assert_eq!(band_containment(&exact, &obs, range).unwrap(), 1.0);
    }

    #[test]
    fn r2_zero_variance_is_flagged() {
        let mut obs = toy_obs();
        for s in [&mut obs.active, &mut obs.recovered, &mut obs.deaths] {
            s.iter_mut().for_each(|v| *v = 7);
        }
        let bands = bands_with_medians(&obs, |_, _| 7.0);
        assert_eq!(
            pseudo_r2(&bands, &obs, obs.train_range()),
            Err(AnalysisError::ZeroVariance)
        );
    }

    #[test]
    fn r2_range_checked() {
        let obs = toy_obs();
        let bands = bands_with_medians(&obs, |_, _| 0.0).restrict(DayRange::new(0, 10)).unwrap();
        assert!(matches!(
            pseudo_r2(&bands, &obs, DayRange::new(1, 20)),
            Err(AnalysisError::BadRange { .. })
        ));
    }

    fn flat_draw(confirmed: &[f64]) -> DrawPrediction {
        let n = confirmed.len();
        DrawPrediction {
            mean: MeanTrajectory {
                horizon: n - 1,
                states: vec![StateVector { s: 0.0, e: 0.0, i: 0.0, r: 0.0, d: 0.0 }; n],
            },
            counts: [confirmed.to_vec(), vec![0.0; n], vec![0.0; n]],
        }
    }

    #[test]
    fn new_infections_of_constant_series_are_zero() {
        let draws = vec![flat_draw(&[5.0; 10]), flat_draw(&[5.0; 10])];
        let bands = new_infections(&draws).unwrap();
        assert_eq!(bands.first_day, 1);
        assert_eq!(bands.n_days(), 9);
        assert!(bands.bands[0].median.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn peak_of_decreasing_trajectories_is_day_zero() {
        let traj = |n: usize| MeanTrajectory {
            horizon: n,
            states: (0..=n)
                .map(|t| StateVector { s: 0.0, e: 0.0, i: (n - t) as f64, r: 0.0, d: 0.0 })
                .collect(),
        };
        let a = traj(30);
        let b = traj(30);
        let p = peak_interval(&[&a, &b]).unwrap();
        assert_eq!((p.lower, p.upper), (0, 0));
        assert!(!p.horizon_limited);
    }

    #[test]
    fn peak_of_single_draw_is_degenerate() {
        let states = (0..=50)
            .map(|t| StateVector { s: 0.0, e: 0.0, i: -((t as f64 - 17.0).powi(2)), r: 0.0, d: 0.0 })
            .collect();
        let t = MeanTrajectory { horizon: 50, states };
        let p = peak_interval(&[&t]).unwrap();
        assert_eq!((p.lower, p.upper), (17, 17));
    }

    #[test]
    fn boundary_peaks_flag_the_horizon() {
        let rising = MeanTrajectory {
            horizon: 10,
            states: (0..=10)
                .map(|t| StateVector { s: 0.0, e: 0.0, i: t as f64, r: 0.0, d: 0.0 })
                .collect(),
        };
        let p = peak_interval(&[&rising]).unwrap();
        assert!(p.horizon_limited);
        assert_eq!(p.boundary_fraction, 1.0);
    }

    #[test]
    fn bands_csv_layout() {
        let obs = toy_obs();
        let bands = bands_with_medians(&obs, |_, t| t as f64).restrict(DayRange::new(2, 4)).unwrap();
        let csv = bands.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "day,series,lower,median,upper");
        assert_eq!(lines[1], "2,active,2,2,2");
        assert_eq!(lines.len(), 1 + 2 * 3);
    }
}
