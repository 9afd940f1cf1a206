use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{format_score, percent_half_up, AnalyticsError, ModelSummary, Predictor, RetryGain};

/// First line of every column file; bumped together with the trace schema.
pub const COLUMNS_HEADER: &str = "# npcsh-bench columns v1";

/// Plain-text table: first column left-aligned, the rest right-aligned.
fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = vec![line(header.to_vec())];
    out.push(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    for row in rows {
        out.push(line(row.iter().map(String::as_str).collect()));
    }
    out.join("\n") + "\n"
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

pub fn score_table(summaries: &[ModelSummary]) -> String {
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.model.clone(),
                s.score_string(),
                format!("{:.2}", s.mean_tool_calls),
                format!("{:.1}", s.mean_duration),
                format!("{:.2}", s.mean_attempts),
                format!("{}%", percent_half_up(s.first_attempt_passes, s.total)),
                format!("{}%", percent_half_up(s.first_attempt_passes, s.score)),
                opt(s.mean_tool_calls_success),
                opt(s.mean_tool_calls_failure),
            ]
        })
        .collect();
    aligned(
        &[
            "model",
            "score",
            "tool_calls",
            "duration_s",
            "attempts",
            "first_try",
            "first_try_of_passes",
            "calls_on_pass",
            "calls_on_fail",
        ],
        &rows,
    )
}

pub fn category_table(summaries: &[ModelSummary], gains: &[RetryGain]) -> String {
    let mut categories: Vec<&str> = summaries
        .iter()
        .flat_map(|s| s.per_category.keys().map(String::as_str))
        .collect();
    categories.sort_unstable();
    categories.dedup();
    let mut header = vec!["category"];
    header.extend(summaries.iter().map(|s| s.model.as_str()));
    header.push("retry_gain_pp");
    let rows: Vec<Vec<String>> = categories
        .iter()
        .map(|c| {
            let mut row = vec![c.to_string()];
            for s in summaries {
                row.push(match s.per_category.get(*c) {
                    Some(t) => format_score(t.passed, t.total),
                    None => "-".into(),
                });
            }
            row.push(
                gains
                    .iter()
                    .find(|g| g.category == *c)
                    .map(|g| format!("{:.1}", g.gain))
                    .unwrap_or_else(|| "-".into()),
            );
            row
        })
        .collect();
    aligned(&header, &rows)
}

pub fn correlation_table(predictors: &[Predictor]) -> String {
    let rows: Vec<Vec<String>> = predictors
        .iter()
        .map(|p| match &p.result {
            Ok(c) => vec![
                p.metric.clone(),
                format!("{:.4}", c.r),
                c.n.to_string(),
                c.p.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            ],
            Err(e) => vec![p.metric.clone(), format!("error: {e}"), "-".into(), "-".into()],
        })
        .collect();
    aligned(&["metric", "r", "n", "p"], &rows)
}

/// Two columns per line, model then score, separated by whitespace, tab or
/// comma. Blank lines and `#` comments are skipped.
pub fn parse_external_scores(text: &str) -> Result<BTreeMap<String, f64>, AnalyticsError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |message: &str| AnalyticsError::BadExternalScores {
            line: i + 1,
            message: message.to_string(),
        };
        let (model, score) = line
            .rsplit_once(|c: char| c == '\t' || c == ',' || c.is_whitespace())
            .ok_or_else(|| bad("expected `model score`"))?;
        let model = model.trim().trim_end_matches(',').trim();
        if model.is_empty() {
            return Err(bad("missing model name"));
        }
        let score: f64 = score.trim().parse().map_err(|_| bad("score is not a number"))?;
        if !score.is_finite() {
            return Err(bad("score is not finite"));
        }
        if out.insert(model.to_string(), score).is_some() {
            return Err(bad("model listed twice"));
        }
    }
    Ok(out)
}

fn tsv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = format!("{COLUMNS_HEADER}\n{}\n", header.join("\t"));
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    format!("{v}")
}

/// Write `models.tsv`, `categories.tsv`, `retry_gain.tsv` and (when given)
/// `correlations.tsv` into `dir`.
pub fn write_columns(
    dir: &Path,
    summaries: &[ModelSummary],
    gains: &[RetryGain],
    predictors: Option<&[Predictor]>,
) -> std::io::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> std::io::Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };

    let models: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.model.clone(),
                s.score.to_string(),
                s.total.to_string(),
                num(s.pass_rate),
                num(s.mean_tool_calls),
                num(s.mean_duration),
                num(s.mean_attempts),
                s.first_attempt_passes.to_string(),
                num(s.first_attempt_rate),
                num(s.first_attempt_share),
                s.mean_tool_calls_success.map(num).unwrap_or_default(),
                s.mean_tool_calls_failure.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    put(
        "models.tsv",
        tsv(
            &[
                "model",
                "passed",
                "total",
                "pass_rate",
                "mean_tool_calls",
                "mean_duration",
                "mean_attempts",
                "first_attempt_passes",
                "first_attempt_rate",
                "first_attempt_share",
                "mean_tool_calls_success",
                "mean_tool_calls_failure",
            ],
            &models,
        ),
    )?;

    let categories: Vec<Vec<String>> = summaries
        .iter()
        .flat_map(|s| {
            s.per_category
                .iter()
                .map(|(c, t)| vec![s.model.clone(), c.clone(), t.passed.to_string(), t.total.to_string()])
        })
        .collect();
    put("categories.tsv", tsv(&["model", "category", "passed", "total"], &categories))?;

    let gain_rows: Vec<Vec<String>> = gains
        .iter()
        .map(|g| {
            vec![
                g.category.clone(),
                g.total.to_string(),
                g.first_attempt_passes.to_string(),
                g.passes.to_string(),
                num(g.gain),
            ]
        })
        .collect();
    put(
        "retry_gain.tsv",
        tsv(&["category", "total", "first_attempt_passes", "passes", "gain_pp"], &gain_rows),
    )?;

    if let Some(preds) = predictors {
        let rows: Vec<Vec<String>> = preds
            .iter()
            .map(|p| match &p.result {
                Ok(c) => vec![
                    p.metric.clone(),
                    num(c.r),
                    c.n.to_string(),
                    c.p.map(num).unwrap_or_default(),
                    String::new(),
                ],
                Err(e) => vec![p.metric.clone(), String::new(), String::new(), String::new(), e.to_string()],
            })
            .collect();
        put("correlations.tsv", tsv(&["metric", "r", "n", "p", "error"], &rows))?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn external_scores_formats() {
        let m = parse_external_scores("# model score\nqwen3 8b\t61.5\nllama, 40\n\ngemma 3 12b 55\n").unwrap();
        assert_eq!(m["qwen3 8b"], 61.5);
        assert_eq!(m["llama"], 40.0);
        assert_eq!(m["gemma 3 12b"], 55.0);
        assert!(parse_external_scores("lonely").is_err());
        assert!(parse_external_scores("a x").is_err());
        assert!(parse_external_scores("a 1\na 2").is_err());
    }

    #[test]
    fn table_alignment() {
        let t = aligned(&["a", "bb"], &[vec!["long-name".into(), "1".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "a          bb");
        assert_eq!(lines[1], "---------  --");
        assert_eq!(lines[2], "long-name   1");
    }
}
