use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{classify_error, compute_prf, moments, score_outcome, Classification, ErrorType, ScoreCounts};
use crate::domain::DialogTask;
use crate::matching::Gazetteer;
use crate::scalar::Real;

/// Scores, response-time statistics and error mix of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub accuracy: T,
    pub mean_response_s: T,
    pub stdev_response_s: T,
    /// Fraction of all errors falling under each type; empty with no errors.
    pub error_histogram: BTreeMap<ErrorType, T>,
    pub counts: ScoreCounts,
}

/// Accumulates scored predictions into a [`MetricsReport`].
#[derive(Debug, Clone)]
pub struct ReportBuilder<'g> {
    gazetteer: &'g Gazetteer,
    counts: ScoreCounts,
    response_times: Vec<f64>,
    errors: BTreeMap<ErrorType, u64>,
}

impl<'g> ReportBuilder<'g> {
    pub fn new(gazetteer: &'g Gazetteer) -> Self {
        Self {
            gazetteer,
            counts: ScoreCounts::default(),
            response_times: Vec::new(),
            errors: BTreeMap::new(),
        }
    }

    /// Records one prediction for `task`. Returns its classification.
    pub fn add(&mut self, pred: Option<&str>, task: &DialogTask, response_s: f64) -> Classification {
        let gold = task.gold.as_deref();
        self.counts += score_outcome(pred, gold);
        self.response_times.push(response_s);
        let class = classify_error(pred, gold, task, self.gazetteer);
        if let Classification::Error(e) = class {
            *self.errors.entry(e).or_default() += 1;
        }
        class
    }

    pub fn counts(&self) -> ScoreCounts {
        self.counts
    }

    pub fn finish<T: Real>(&self) -> MetricsReport<T> {
        let prf = compute_prf::<T>(&self.counts);
        let times: Vec<T> = self.response_times.iter().map(|&t| T::lit(t)).collect();
        let m = moments(&times).unwrap_or_default();
        let total_errors: u64 = self.errors.values().sum();
        let error_histogram = self
            .errors
            .iter()
            .map(|(&k, &n)| (k, T::from_count(n) / T::from_count(total_errors)))
            .collect();
        MetricsReport {
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            accuracy: self.counts.accuracy(),
            mean_response_s: m.mean,
            stdev_response_s: m.stdev,
            error_histogram,
            counts: self.counts,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::sample_task;

    #[test]
    fn report_invariants() {
        let g = Gazetteer::default();
        let mut b = ReportBuilder::new(&g);
        let mut t = sample_task();
        t.gold = Some("denver".into());
        t.aux_gold = [("fromloc.city_name".to_string(), "boston".to_string())].into();
        b.add(Some("denver"), &t, 5.0);
        b.add(Some("boston"), &t, 7.0);
        b.add(None, &t, 20.0);
        let mut none = t.clone();
        none.gold = None;
        b.add(None, &none, 20.0);
        let r: MetricsReport<f64> = b.finish();
        assert_eq!(r.counts.items, 4);
        assert!((r.accuracy - 0.5).abs() < 1e-12);
        assert!((r.precision - 0.5).abs() < 1e-12);
        assert!((r.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((r.f1 - 2.0 * r.precision * r.recall / (r.precision + r.recall)).abs() < 1e-9);
        let sum: f64 = r.error_histogram.values().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert_eq!(r.error_histogram[&ErrorType::DistractorSlot], 0.5);
        assert!((r.mean_response_s - 13.0).abs() < 1e-12);
    }

    #[test]
    fn empty_report_is_zeroed() {
        let g = Gazetteer::default();
        let r: MetricsReport<f64> = ReportBuilder::new(&g).finish();
        assert_eq!(r.f1, 0.0);
        assert!(r.error_histogram.is_empty());
    }
}
