//! Model comparison: per-model metrics, ranking, ANOVA and Tukey letters,
//! and the rendered comparison table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evalstat::metrics::R2Mode;
use crate::evalstat::{
    anova_oneway, metric_summary, normalized_rank, tukey_hsd, AnovaResult, EvalSeries, MetricSummary, RankRow,
    StatsError, TukeyOutcome,
};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("duplicate model name '{0}'")]
    DuplicateModel(String),
    #[error("{path}: {detail}")]
    File { path: PathBuf, detail: String },
}

/// One line of the metrics CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub n: usize,
    pub mae: f64,
    pub mae_sd: f64,
    pub mape: f64,
    pub mape_sd: f64,
    pub rmse: f64,
    pub rmse_sd: f64,
    pub r2: f64,
    pub normalized_sum: f64,
    pub mae_letters: String,
    pub mape_letters: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub alpha: f64,
    pub r2_mode: R2Mode,
    /// Models in ranked order.
    pub rows: Vec<ModelRow>,
    pub summaries: Vec<MetricSummary>,
    pub anova_mae: AnovaResult,
    pub anova_mape: AnovaResult,
    pub tukey_mae: TukeyOutcome,
    pub tukey_mape: TukeyOutcome,
}

/// Rank the models, then run ANOVA and Tukey HSD on per-image absolute and
/// percentage errors with the groups in ranked order, so the best model
/// gets the first letter.
pub fn evaluate(series: &[EvalSeries], alpha: f64, r2_mode: R2Mode) -> Result<StatsReport, ReportError> {
    for (i, s) in series.iter().enumerate() {
        if series[..i].iter().any(|o| o.model == s.model) {
            return Err(ReportError::DuplicateModel(s.model.clone()));
        }
    }
    let summaries = series.iter().map(metric_summary).collect::<Result<Vec<_>, _>>()?;
    let rank_rows: Vec<RankRow> = series
        .iter()
        .zip(&summaries)
        .map(|(s, m)| RankRow::new(s.model.clone(), m.mae, m.mape, m.rmse))
        .collect();
    let ranked = normalized_rank(&rank_rows)?;
    let order: Vec<usize> = ranked
        .iter()
        .map(|r| {
            series
                .iter()
                .position(|s| s.model == r.model)
                .expect("ranked model exists")
        })
        .collect();

    let names: Vec<String> = order.iter().map(|&i| series[i].model.clone()).collect();
    let abs: Vec<Vec<f64>> = order.iter().map(|&i| series[i].abs_errors()).collect();
    let pct: Vec<Vec<f64>> = order.iter().map(|&i| series[i].pct_errors()).collect();
    let anova_mae = anova_oneway(&abs)?;
    let anova_mape = anova_oneway(&pct)?;
    let tukey_mae = tukey_hsd(&names, &abs, alpha)?;
    let tukey_mape = tukey_hsd(&names, &pct, alpha)?;

    let rows = order
        .iter()
        .enumerate()
        .map(|(pos, &i)| {
            let m = &summaries[i];
            ModelRow {
                model: series[i].model.clone(),
                n: m.n,
                mae: m.mae,
                mae_sd: m.mae_sd,
                mape: m.mape,
                mape_sd: m.mape_sd,
                rmse: m.rmse,
                rmse_sd: m.rmse_sd,
                r2: m.r2_as(r2_mode),
                normalized_sum: ranked[pos].normalized_sum,
                mae_letters: tukey_mae.letters[pos].clone(),
                mape_letters: tukey_mape.letters[pos].clone(),
            }
        })
        .collect();
    Ok(StatsReport {
        alpha,
        r2_mode,
        rows,
        summaries: order.iter().map(|&i| summaries[i]).collect(),
        anova_mae,
        anova_mape,
        tukey_mae,
        tukey_mape,
    })
}

pub fn write_metrics_csv(rows: &[ModelRow], path: &Path) -> Result<(), ReportError> {
    let err = |e: &dyn std::fmt::Display| ReportError::File {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(&e))?;
    for r in rows {
        w.serialize(r).map_err(|e| err(&e))?;
    }
    w.flush().map_err(|e| err(&e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<ModelRow>, ReportError> {
    let err = |e: csv::Error| ReportError::File {
        path: path.to_path_buf(),
        detail: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<Vec<ModelRow>, _>>().map_err(err)
}

pub fn write_stats_json(report: &StatsReport, path: &Path) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(report).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| ReportError::File {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Markdown table, rows in the given order: mean ± sd with Tukey letters for
/// MAE and MAPE, mean ± sd for RMSE, then R².
pub fn render_table(rows: &[ModelRow]) -> String {
    let mut s = String::from("| Model | MAE | MAPE (%) | RMSE | R² |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {:.2} ± {:.2} {} | {:.2} ± {:.2} {} | {:.2} ± {:.2} | {:.3} |",
            r.model, r.mae, r.mae_sd, r.mae_letters, r.mape, r.mape_sd, r.mape_letters, r.rmse, r.rmse_sd, r.r2
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(model: &str, truths: &[u64], offset: i64) -> EvalSeries {
        let preds: Vec<u64> = truths
            .iter()
            .enumerate()
            .map(|(i, &t)| (t as i64 + offset * (i as i64 % 3)) as u64)
            .collect();
        EvalSeries::from_counts(model, truths, &preds)
    }

    #[test]
    fn ranked_rows_and_letters() {
        let truths: Vec<u64> = (10..40).collect();
        let all = vec![
            series("bad", &truths, 30),
            series("good", &truths, 1),
            series("mid", &truths, 2),
        ];
        let r = evaluate(&all, 0.05, R2Mode::Identity).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|r| r.model.as_str()).collect();
        assert_eq!(names, ["good", "mid", "bad"]);
        assert_eq!(r.rows[0].normalized_sum, 0.0);
        assert!(r.rows[2].mae_letters != r.rows[0].mae_letters);
        assert!(r.anova_mae.p_value < 0.05);
        let table = render_table(&r.rows);
        assert!(
            table.lines().nth(2).unwrap().starts_with("| good | 1.00 ± 0.83 a |"),
            "{table}"
        );
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let truths: Vec<u64> = (10..20).collect();
        let all = vec![series("a", &truths, 1), series("b", &truths, 2)];
        let r = evaluate(&all, 0.05, R2Mode::Fitted).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        write_metrics_csv(&r.rows, &path).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), r.rows);
        let head = fs::read_to_string(&path).unwrap();
        assert!(head
            .starts_with("model,n,mae,mae_sd,mape,mape_sd,rmse,rmse_sd,r2,normalized_sum,mae_letters,mape_letters\n"));
        assert!(matches!(
            evaluate(&all[..1], 0.05, R2Mode::Identity),
            Err(ReportError::Stats(StatsError::TooFewRows(1)))
        ));
        let dup = vec![all[0].clone(), all[0].clone()];
        assert!(matches!(
            evaluate(&dup, 0.05, R2Mode::Identity),
            Err(ReportError::DuplicateModel(_))
        ));
    }
}
