//! Slot scoring, error taxonomy, timing statistics and trade-off sweeps.
//!
//! A wrong non-null prediction counts once as a false positive and once as
//! a false negative, so precision and recall can move independently.
//! Accuracy is `(tp + tn) / items`: a correctly empty answer on a dialog
//! with no entity counts as correct.

mod report;
mod stats;
mod sweep;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::DialogTask;
use crate::matching::{edit_distance, is_token_subspan, tokens, Gazetteer};
use crate::scalar::Real;

pub use report::{MetricsReport, ReportBuilder};
pub use stats::{
    moments, perceived_latency, spearman, summarize_timeline, FieldSummary, Moments, StatsError,
    TimelineStats, TimelineSummary, TrialTimeline,
};
pub use sweep::{tradeoff_sweep, write_sweep_tsv, SweepRow, SWEEP_HEADER};

/// Confusion counts for slot filling. `items` is the number of scored
/// predictions; it differs from the sum of the other fields because a wrong
/// prediction adds to both `fp` and `fn_`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub items: u64,
}

impl std::ops::Add for ScoreCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
            items: self.items + o.items,
        }
    }
}

impl std::ops::AddAssign for ScoreCounts {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl std::iter::Sum for ScoreCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

impl ScoreCounts {
    /// `(tp + tn) / items`, or 0 with no items.
    pub fn accuracy<T: Real>(&self) -> T {
        if self.items == 0 {
            return T::zero();
        }
        T::from_count(self.tp + self.tn) / T::from_count(self.items)
    }

    /// True when this contribution is a correct decision.
    pub fn is_correct(&self) -> bool {
        self.tp + self.tn == self.items && self.fp + self.fn_ == 0
    }
}

/// Contribution of one prediction against one gold label. Both sides are
/// expected to be normalized.
pub fn score_outcome(pred: Option<&str>, gold: Option<&str>) -> ScoreCounts {
    let mut c = ScoreCounts {
        items: 1,
        ..Default::default()
    };
    match (pred, gold) {
        (None, None) => c.tn = 1,
        (None, Some(_)) => c.fn_ = 1,
        (Some(_), None) => c.fp = 1,
        (Some(p), Some(g)) if p == g => c.tp = 1,
        (Some(_), Some(_)) => {
            c.fp = 1;
            c.fn_ = 1;
        }
    }
    c
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

/// Harmonic mean of precision and recall, 0 when both are 0.
pub fn f1_score<T: Real>(precision: T, recall: T) -> T {
    let sum = precision + recall;
    if sum == T::zero() {
        T::zero()
    } else {
        T::lit(2.0) * precision * recall / sum
    }
}

fn ratio<T: Real>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::from_count(num) / T::from_count(den)
    }
}

pub fn compute_prf<T: Real>(counts: &ScoreCounts) -> Prf<T> {
    let precision = ratio(counts.tp, counts.tp + counts.fp);
    let recall = ratio(counts.tp, counts.tp + counts.fn_);
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    /// The answer is the value of another slot in the dialog.
    DistractorSlot,
    FalseNegative,
    FalsePositive,
    /// Semantically the right entity, not string-equal to gold.
    SoftMatch,
    /// A contiguous token sub-span of a multi-token gold entity.
    Substring,
    /// Within one character edit of gold.
    TypoSuspect,
    WrongEntity,
}

impl ErrorType {
    pub const ALL: [ErrorType; 7] = [
        ErrorType::DistractorSlot,
        ErrorType::FalseNegative,
        ErrorType::FalsePositive,
        ErrorType::SoftMatch,
        ErrorType::Substring,
        ErrorType::TypoSuspect,
        ErrorType::WrongEntity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::DistractorSlot => "distractor_slot",
            ErrorType::FalseNegative => "false_negative",
            ErrorType::FalsePositive => "false_positive",
            ErrorType::SoftMatch => "soft_match",
            ErrorType::Substring => "substring",
            ErrorType::TypoSuspect => "typo_suspect",
            ErrorType::WrongEntity => "wrong_entity",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Correct,
    Error(ErrorType),
}

fn token_set_relation_is_soft(pred: &str, gold: &str) -> bool {
    let p: std::collections::BTreeSet<&str> = tokens(pred).into_iter().collect();
    let g: std::collections::BTreeSet<&str> = tokens(gold).into_iter().collect();
    if p.is_empty() || g.is_empty() {
        return false;
    }
    // over-extended prediction, or a scattered (non-contiguous) subset
    g.is_subset(&p) || (p.is_subset(&g) && !is_token_subspan(pred, gold))
}

/// Assigns a prediction to the first matching error rule, in this order:
/// distractor slot, false negative, false positive, soft match, substring,
/// typo, wrong entity.
pub fn classify_error(
    pred: Option<&str>,
    gold: Option<&str>,
    task: &DialogTask,
    gazetteer: &Gazetteer,
) -> Classification {
    if score_outcome(pred, gold).is_correct() {
        return Classification::Correct;
    }
    if let Some(p) = pred {
        if task.aux_gold.values().any(|v| v == p) {
            return Classification::Error(ErrorType::DistractorSlot);
        }
    }
    let (p, g) = match (pred, gold) {
        (None, Some(_)) => return Classification::Error(ErrorType::FalseNegative),
        (Some(_), None) => return Classification::Error(ErrorType::FalsePositive),
        (Some(p), Some(g)) => (p, g),
        (None, None) => unreachable!("both absent is a true negative"),
    };
    if gazetteer.soft_match(p) == Some(g) || token_set_relation_is_soft(p, g) {
        return Classification::Error(ErrorType::SoftMatch);
    }
    if is_token_subspan(p, g) {
        return Classification::Error(ErrorType::Substring);
    }
    if edit_distance(p, g) <= 1 {
        return Classification::Error(ErrorType::TypoSuspect);
    }
    Classification::Error(ErrorType::WrongEntity)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::tests::sample_task;
    use proptest::prelude::*;

    #[test]
    fn score_cases() {
        assert_eq!(score_outcome(Some("boston"), Some("boston")).tp, 1);
        assert_eq!(score_outcome(None, Some("boston")).fn_, 1);
        let c = score_outcome(Some("washington"), Some("washington dc"));
        assert_eq!((c.fp, c.fn_, c.tp, c.tn), (1, 1, 0, 0));
        assert_eq!(score_outcome(None, None).tn, 1);
        assert_eq!(score_outcome(Some("x"), None).fp, 1);
    }

    #[test]
    fn prf_guard() {
        let p: Prf<f64> = compute_prf(&ScoreCounts::default());
        assert_eq!(p, Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
    }

    #[test]
    fn prf_from_counts() {
        let c = ScoreCounts { tp: 8, fp: 2, fn_: 4, tn: 1, items: 13 };
        let p: Prf<f64> = compute_prf(&c);
        assert!((p.precision - 0.8).abs() < 1e-12);
        assert!((p.recall - 8.0 / 12.0).abs() < 1e-12);
        let f1 = 2.0 * 0.8 * (8.0 / 12.0) / (0.8 + 8.0 / 12.0);
        assert!((p.f1 - f1).abs() < 1e-12);
        let p32: Prf<f32> = compute_prf(&c);
        assert!((p32.f1 as f64 - f1).abs() < 1e-6);
    }

    #[test]
    fn f1_reported_pairs() {
        // (P, R, F1) rows of the published result tables
        for (p, r, f) in [
            (0.867f64, 0.916, 0.891),
            (0.814, 0.797, 0.805),
            (0.654, 0.675, 0.664),
        ] {
            assert!((f1_score(p, r) - f).abs() <= 0.001, "{p} {r}");
        }
    }

    #[test]
    fn classify_examples() {
        let g = Gazetteer::default();
        let mut t = sample_task();
        t.gold = Some("denver".into());
        t.aux_gold = [("fromloc.city_name".to_string(), "boston".to_string())].into();
        assert_eq!(
            classify_error(Some("boston"), Some("denver"), &t, &g),
            Classification::Error(ErrorType::DistractorSlot)
        );
        assert_eq!(
            classify_error(Some("tea"), Some("bubble tea"), &t, &g),
            Classification::Error(ErrorType::Substring)
        );
        assert_eq!(
            classify_error(None, Some("denver"), &t, &g),
            Classification::Error(ErrorType::FalseNegative)
        );
        assert_eq!(
            classify_error(Some("denver"), None, &t, &g),
            Classification::Error(ErrorType::FalsePositive)
        );
        assert_eq!(
            classify_error(Some("latter"), Some("latte"), &t, &g),
            Classification::Error(ErrorType::TypoSuspect)
        );
        assert_eq!(
            classify_error(Some("miami"), Some("denver"), &t, &g),
            Classification::Error(ErrorType::WrongEntity)
        );
        assert_eq!(classify_error(Some("denver"), Some("denver"), &t, &g), Classification::Correct);
        assert_eq!(classify_error(None, None, &t, &g), Classification::Correct);
    }

    #[test]
    fn soft_match_via_gazetteer_or_token_relation() {
        let t = sample_task();
        let cities = Gazetteer::new(["washington dc", "boston"], 0.5).unwrap();
        assert_eq!(
            classify_error(Some("washington"), Some("washington dc"), &t, &cities),
            Classification::Error(ErrorType::SoftMatch)
        );
        let none = Gazetteer::default();
        // over-extension
        assert_eq!(
            classify_error(Some("washington dc area"), Some("washington dc"), &t, &none),
            Classification::Error(ErrorType::SoftMatch)
        );
        // scattered subset
        assert_eq!(
            classify_error(Some("stew rice"), Some("stew pork over rice"), &t, &none),
            Classification::Error(ErrorType::SoftMatch)
        );
        // contiguous sub-span without domain knowledge
        assert_eq!(
            classify_error(Some("rice"), Some("stew pork over rice"), &t, &none),
            Classification::Error(ErrorType::Substring)
        );
    }

    fn arb_label() -> impl Strategy<Value = Option<String>> {
        proptest::option::of("[ab]{1,2}( [ab]{1,2})?")
    }

    proptest! {
        #[test]
        fn score_is_total_and_exclusive(p in arb_label(), g in arb_label()) {
            let c = score_outcome(p.as_deref(), g.as_deref());
            let cases = [c.tp == 1, c.tn == 1, c.fn_ == 1 && c.fp == 0, c.fp == 1 && c.fn_ == 0, c.fp == 1 && c.fn_ == 1];
            prop_assert_eq!(cases.iter().filter(|&&b| b).count(), 1);
            prop_assert_eq!(c.items, 1);
        }

        #[test]
        fn classify_correct_iff_tp_or_tn(p in arb_label(), g in arb_label()) {
            let t = sample_task();
            let c = score_outcome(p.as_deref(), g.as_deref());
            let cls = classify_error(p.as_deref(), g.as_deref(), &t, &Gazetteer::default());
            prop_assert_eq!(cls == Classification::Correct, c.tp == 1 || c.tn == 1);
        }

        #[test]
        fn prf_is_additive_over_partitions(
            pairs in proptest::collection::vec((arb_label(), arb_label()), 0..40),
            cut in 0usize..40,
        ) {
            let per_item: Vec<ScoreCounts> = pairs.iter().map(|(p, g)| score_outcome(p.as_deref(), g.as_deref())).collect();
            let total: ScoreCounts = per_item.iter().copied().sum();
            let cut = cut.min(per_item.len());
            let left: ScoreCounts = per_item[..cut].iter().copied().sum();
            let right: ScoreCounts = per_item[cut..].iter().copied().sum();
            let merged = left + right;
            prop_assert_eq!(merged, total);
            let naive_tp = pairs.iter().filter(|(p, g)| p.is_some() && p == g).count() as f64;
            let naive_pred = pairs.iter().filter(|(p, _)| p.is_some()).count() as f64;
            let naive_gold = pairs.iter().filter(|(_, g)| g.is_some()).count() as f64;
            let prf: Prf<f64> = compute_prf(&merged);
            let np = if naive_pred == 0.0 { 0.0 } else { naive_tp / naive_pred };
            let nr = if naive_gold == 0.0 { 0.0 } else { naive_tp / naive_gold };
            prop_assert!((prf.precision - np).abs() < 1e-12);
            prop_assert!((prf.recall - nr).abs() < 1e-12);
        }
    }
}
