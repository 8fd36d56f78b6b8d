use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no trials to summarize")]
    Empty,
    #[error("{field} mean must be positive, got {value}")]
    NonPositive { field: &'static str, value: f64 },
    #[error("timeline targets must satisfy first_worker <= first_answer <= first_match")]
    Ordering,
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments<T> {
    pub mean: T,
    pub stdev: T,
}

impl<T: Real> Moments<T> {
    pub fn new(mean: T, stdev: T) -> Self {
        Self { mean, stdev }
    }
}

pub fn moments<T: Real>(values: &[T]) -> Option<Moments<T>> {
    if values.is_empty() {
        return None;
    }
    let n = T::from_count(values.len() as u64);
    let mean = values.iter().fold(T::zero(), |a, &b| a + b) / n;
    let var = values
        .iter()
        .map(|&v| (v - mean) * (v - mean))
        .fold(T::zero(), |a, b| a + b)
        / n;
    Some(Moments {
        mean,
        stdev: var.sqrt(),
    })
}

/// Milestones of one simulated or logged trial, in seconds from the moment
/// the user's utterance arrived. `None` when the milestone never happened.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialTimeline {
    pub first_worker_s: Option<f64>,
    pub first_answer_s: Option<f64>,
    pub first_match_s: Option<f64>,
}

/// Per-milestone mean/stdev, used both for targets and achieved values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimelineStats<T> {
    pub first_worker_s: Moments<T>,
    pub first_answer_s: Moments<T>,
    pub first_match_s: Moments<T>,
}

impl<T: Real> TimelineStats<T> {
    pub fn from_means(first_worker: T, first_answer: T, first_match: T) -> Self {
        Self {
            first_worker_s: Moments::new(first_worker, T::zero()),
            first_answer_s: Moments::new(first_answer, T::zero()),
            first_match_s: Moments::new(first_match, T::zero()),
        }
    }

    pub fn means(&self) -> [T; 3] {
        [
            self.first_worker_s.mean,
            self.first_answer_s.mean,
            self.first_match_s.mean,
        ]
    }

    /// Checks that the means are positive and ordered.
    pub fn validate_targets(&self) -> Result<(), StatsError> {
        let names = ["first_worker_s", "first_answer_s", "first_match_s"];
        for (field, m) in names.into_iter().zip(self.means()) {
            if m.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
                return Err(StatsError::NonPositive {
                    field,
                    value: m.to_f64_lossy(),
                });
            }
        }
        let [w, a, m] = self.means();
        if !(w <= a && a <= m) {
            return Err(StatsError::Ordering);
        }
        Ok(())
    }

    /// Largest relative deviation of `self`'s means from `target`'s.
    pub fn max_relative_error(&self, target: &Self) -> T {
        self.means()
            .into_iter()
            .zip(target.means())
            .map(|(got, want)| ((got - want) / want).abs())
            .fold(T::zero(), T::max)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FieldSummary<T> {
    pub moments: Option<Moments<T>>,
    pub absent_fraction: T,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimelineSummary<T> {
    pub first_worker_s: FieldSummary<T>,
    pub first_answer_s: FieldSummary<T>,
    pub first_match_s: FieldSummary<T>,
}

impl<T: Real> TimelineSummary<T> {
    /// The three means, if every milestone was observed at least once.
    pub fn stats(&self) -> Option<TimelineStats<T>> {
        Some(TimelineStats {
            first_worker_s: self.first_worker_s.moments?,
            first_answer_s: self.first_answer_s.moments?,
            first_match_s: self.first_match_s.moments?,
        })
    }
}

fn summarize_field<T: Real>(
    timelines: &[TrialTimeline],
    get: impl Fn(&TrialTimeline) -> Option<f64>,
) -> FieldSummary<T> {
    let present: Vec<T> = timelines.iter().filter_map(&get).map(T::lit).collect();
    let absent = timelines.len() - present.len();
    FieldSummary {
        moments: moments(&present),
        absent_fraction: T::from_count(absent as u64) / T::from_count(timelines.len() as u64),
    }
}

/// Mean and population stdev of each milestone over the trials where it
/// occurred, plus the fraction of trials where it did not.
pub fn summarize_timeline<T: Real>(
    timelines: &[TrialTimeline],
) -> Result<TimelineSummary<T>, StatsError> {
    if timelines.is_empty() {
        return Err(StatsError::Empty);
    }
    Ok(TimelineSummary {
        first_worker_s: summarize_field(timelines, |t| t.first_worker_s),
        first_answer_s: summarize_field(timelines, |t| t.first_answer_s),
        first_match_s: summarize_field(timelines, |t| t.first_match_s),
    })
}

/// Wait the user actually experiences: system response time minus the time
/// they spent typing, clamped at zero.
pub fn perceived_latency<T: Real>(type_time_s: T, response_time_s: T) -> T {
    (response_time_s - type_time_s).max(T::zero())
}

fn average_ranks<T: Real>(xs: &[T]) -> Vec<T> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap_or(std::cmp::Ordering::Equal));
    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // ranks are 1-based; ties share the mean of their positions
        let avg = T::from_count((i + j + 2) as u64) / T::lit(2.0);
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<T: Real>(x: &[T], y: &[T]) -> Option<T> {
    let mx = moments(x)?;
    let my = moments(y)?;
    if mx.stdev == T::zero() || my.stdev == T::zero() {
        return None;
    }
    let n = T::from_count(x.len() as u64);
    let cov = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (a - mx.mean) * (b - my.mean))
        .fold(T::zero(), |a, b| a + b)
        / n;
    Some(cov / (mx.stdev * my.stdev))
}

/// Spearman rank correlation with average ranks for ties. `None` for fewer
/// than two points or a constant series.
pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Option<T> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    pearson(&average_ranks(x), &average_ranks(y))
}
