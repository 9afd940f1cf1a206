//! Aggregate statistics over benchmark trace logs: score tables, category
//! pass rates, first-attempt rates, retry gains and Pearson correlations
//! between per-model metrics.

mod report;
mod stats;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::bench_harness::{Tally, TaskResult};

pub use report::{
    category_table, correlation_table, parse_external_scores, score_table, write_columns, COLUMNS_HEADER,
};
pub use stats::{pearson, pearson_named, CorrelationResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticsError {
    #[error("no trace records")]
    EmptyInput,
    #[error("category `{category}` does not appear in the results")]
    UnknownCategory { category: String },
    #[error("samples differ in length ({x} vs {y})")]
    LengthMismatch { x: usize, y: usize },
    #[error("`{metric}` has zero variance")]
    ZeroVariance { metric: String },
    #[error("need at least 2 samples, got {n}")]
    TooFewSamples { n: usize },
    #[error("need at least 3 models, got {n}")]
    InsufficientModels { n: usize },
    #[error("external scores line {line}: {message}")]
    BadExternalScores { line: usize, message: String },
}

/// `passed/total (p%)` with the percentage rounded half up.
pub fn format_score(passed: usize, total: usize) -> String {
    format!("{passed}/{total} ({}%)", percent_half_up(passed, total))
}

/// Integer percentage rounded half up, in exact integer arithmetic.
pub fn percent_half_up(passed: usize, total: usize) -> usize {
    if total == 0 {
        return 0;
    }
    (200 * passed + total) / (2 * total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSummary {
    pub model: String,
    /// Tasks passed.
    pub score: usize,
    pub total: usize,
    pub pass_rate: f64,
    /// Per task, summed over attempts.
    pub mean_tool_calls: f64,
    /// Seconds per task, summed over attempts.
    pub mean_duration: f64,
    pub mean_attempts: f64,
    pub first_attempt_passes: usize,
    /// First-attempt passes over all tasks.
    pub first_attempt_rate: f64,
    /// First-attempt passes over passed tasks.
    pub first_attempt_share: f64,
    /// Mean tool calls on passed tasks, when any passed.
    pub mean_tool_calls_success: Option<f64>,
    /// Mean tool calls on failed tasks, when any failed.
    pub mean_tool_calls_failure: Option<f64>,
    pub per_category: BTreeMap<String, Tally>,
}

impl ModelSummary {
    pub fn score_string(&self) -> String {
        format_score(self.score, self.total)
    }
}

/// Order-independent mean: values are sorted before summing so the result does
/// not depend on record order.
fn mean(mut values: Vec<f64>) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn summarize_model(model: &str, records: &[&TaskResult]) -> ModelSummary {
    let total = records.len();
    let score = records.iter().filter(|r| r.passed).count();
    let first = records.iter().filter(|r| r.first_attempt_pass).count();
    let calls = |pred: &dyn Fn(&TaskResult) -> bool| {
        mean(records.iter().filter(|r| pred(r)).map(|r| r.tool_calls() as f64).collect())
    };
    let mut per_category: BTreeMap<String, Tally> = BTreeMap::new();
    for r in records {
        let t = per_category.entry(r.category.clone()).or_default();
        t.total += 1;
        t.passed += usize::from(r.passed);
    }
    ModelSummary {
        model: model.to_string(),
        score,
        total,
        pass_rate: ratio(score, total),
        mean_tool_calls: calls(&|_| true).unwrap_or(0.0),
        mean_duration: mean(records.iter().map(|r| r.duration()).collect()).unwrap_or(0.0),
        mean_attempts: mean(records.iter().map(|r| r.attempts_used() as f64).collect()).unwrap_or(0.0),
        first_attempt_passes: first,
        first_attempt_rate: ratio(first, total),
        first_attempt_share: ratio(first, score),
        mean_tool_calls_success: calls(&|r| r.passed),
        mean_tool_calls_failure: calls(&|r| !r.passed),
        per_category,
    }
}

/// One summary per model, best pass rate first (ties by model name).
pub fn summarize(results: &[TaskResult]) -> Result<Vec<ModelSummary>, AnalyticsError> {
    if results.is_empty() {
        return Err(AnalyticsError::EmptyInput);
    }
    let mut groups: BTreeMap<&str, Vec<&TaskResult>> = BTreeMap::new();
    for r in results {
        groups.entry(r.model.as_str()).or_default().push(r);
    }
    let mut out: Vec<ModelSummary> = groups.iter().map(|(m, rs)| summarize_model(m, rs)).collect();
    out.sort_by(|a, b| b.pass_rate.total_cmp(&a.pass_rate).then_with(|| a.model.cmp(&b.model)));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetryGain {
    pub category: String,
    pub total: usize,
    pub first_attempt_passes: usize,
    pub passes: usize,
    pub first_attempt_rate: f64,
    pub final_rate: f64,
    /// Percentage points gained by retries.
    pub gain: f64,
}

/// Final pass rate minus first-attempt pass rate for one category, over every
/// record in that category.
pub fn retry_gain(results: &[TaskResult], category: &str) -> Result<RetryGain, AnalyticsError> {
    let records: Vec<&TaskResult> = results.iter().filter(|r| r.category == category).collect();
    if records.is_empty() {
        return Err(AnalyticsError::UnknownCategory {
            category: category.to_string(),
        });
    }
    let total = records.len();
    let passes = records.iter().filter(|r| r.passed).count();
    let first = records.iter().filter(|r| r.first_attempt_pass).count();
    Ok(RetryGain {
        category: category.to_string(),
        total,
        first_attempt_passes: first,
        passes,
        first_attempt_rate: ratio(first, total),
        final_rate: ratio(passes, total),
        // Computed from counts so exact fixtures give exact gains.
        gain: (passes.saturating_sub(first) * 100) as f64 / total as f64,
    })
}

/// Retry gain for every category present, in name order.
pub fn retry_gains(results: &[TaskResult]) -> Vec<RetryGain> {
    let categories: std::collections::BTreeSet<&str> = results.iter().map(|r| r.category.as_str()).collect();
    categories
        .into_iter()
        .filter_map(|c| retry_gain(results, c).ok())
        .collect()
}

pub const PREDICTOR_METRICS: [&str; 3] = ["mean_tool_calls", "mean_duration", "mean_attempts"];
pub const EXTERNAL_METRIC: &str = "external_score";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictor {
    pub metric: String,
    #[serde(serialize_with = "ser_result")]
    pub result: Result<CorrelationResult, AnalyticsError>,
}

fn ser_result<S: serde::Serializer>(r: &Result<CorrelationResult, AnalyticsError>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Ok(c) => c.serialize(s),
        Err(e) => s.serialize_str(&e.to_string()),
    }
}

/// Correlate pass rate against each per-model metric (and an external score
/// column when given), strongest |r| first; failing pairs sort last.
pub fn predictors(
    summaries: &[ModelSummary],
    external: Option<&BTreeMap<String, f64>>,
) -> Result<Vec<Predictor>, AnalyticsError> {
    if summaries.len() < 3 {
        return Err(AnalyticsError::InsufficientModels { n: summaries.len() });
    }
    let score: Vec<f64> = summaries.iter().map(|s| s.pass_rate).collect();
    let metric = |name: &str, s: &ModelSummary| match name {
        "mean_tool_calls" => s.mean_tool_calls,
        "mean_duration" => s.mean_duration,
        _ => s.mean_attempts,
    };
    let mut out: Vec<Predictor> = PREDICTOR_METRICS
        .iter()
        .map(|&name| {
            let xs: Vec<f64> = summaries.iter().map(|s| metric(name, s)).collect();
            Predictor {
                metric: name.to_string(),
                result: pearson_named(name, &xs, "score", &score),
            }
        })
        .collect();
    if let Some(ext) = external {
        let joined: Vec<(f64, f64)> = summaries
            .iter()
            .filter_map(|s| ext.get(&s.model).map(|&e| (e, s.pass_rate)))
            .collect();
        let result = if joined.len() < 3 {
            Err(AnalyticsError::InsufficientModels { n: joined.len() })
        } else {
            let (xs, ys): (Vec<f64>, Vec<f64>) = joined.into_iter().unzip();
            pearson_named(EXTERNAL_METRIC, &xs, "score", &ys)
        };
        out.push(Predictor {
            metric: EXTERNAL_METRIC.to_string(),
            result,
        });
    }
    out.sort_by(|a, b| match (&a.result, &b.result) {
        (Ok(x), Ok(y)) => y.r.abs().total_cmp(&x.r.abs()),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench_harness::{AttemptTrace, Outcome};

    pub(crate) fn record(model: &str, category: &str, id: usize, pass_on: Option<usize>, attempts: usize) -> TaskResult {
        let used = pass_on.unwrap_or(attempts);
        TaskResult {
            task_id: format!("{category}-{id}"),
            category: category.into(),
            model: model.into(),
            provider: "fixture".into(),
            attempts: (1..=used)
                .map(|i| AttemptTrace {
                    attempt_index: i,
                    tool_calls: 2,
                    rejected_calls: 0,
                    duration: 1.5,
                    model_turns: 3,
                    outcome: if Some(i) == pass_on { Outcome::Pass } else { Outcome::Fail },
                    feedback_given: None,
                    verify_exit: Some(if Some(i) == pass_on { 0 } else { 1 }),
                    error: None,
                })
                .collect(),
            passed: pass_on.is_some(),
            first_attempt_pass: pass_on == Some(1),
            max_attempts: attempts,
            call_mode: None,
            error: None,
        }
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(format_score(101, 115), "101/115 (88%)");
        assert_eq!(format_score(1, 8), "1/8 (13%)");
        assert_eq!(format_score(0, 0), "0/0 (0%)");
    }

    #[test]
    fn summary_fields() {
        let rs = vec![
            record("m", "a", 1, Some(1), 5),
            record("m", "a", 2, Some(3), 5),
            record("m", "b", 3, None, 5),
        ];
        let s = &summarize(&rs).unwrap()[0];
        assert_eq!(s.score, 2);
        assert_eq!(s.first_attempt_passes, 1);
        assert_eq!(s.first_attempt_share, 0.5);
        assert_eq!(s.mean_attempts, 3.0);
        assert_eq!(s.mean_tool_calls_success, Some(4.0));
        assert_eq!(s.mean_tool_calls_failure, Some(10.0));
        assert_eq!(s.per_category["a"], Tally { passed: 2, total: 2 });
        assert_eq!(summarize(&[]), Err(AnalyticsError::EmptyInput));
    }

    #[test]
    fn gain_and_unknown_category() {
        let rs = vec![record("m", "a", 1, Some(1), 1), record("m", "a", 2, None, 1)];
        assert_eq!(retry_gain(&rs, "a").unwrap().gain, 0.0);
        assert!(matches!(retry_gain(&rs, "zzz"), Err(AnalyticsError::UnknownCategory { .. })));
    }

    #[test]
    fn predictors_need_three_models() {
        let rs = vec![record("m1", "a", 1, Some(1), 5), record("m2", "a", 1, None, 5)];
        let s = summarize(&rs).unwrap();
        assert_eq!(predictors(&s, None), Err(AnalyticsError::InsufficientModels { n: 2 }));
    }
}
