use serde::{Deserialize, Serialize};

use super::{mean, sample_sd, StatsError};
use crate::counting::CountRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub image_id: String,
    pub truth: u64,
    pub predicted: u64,
}

/// Per-image (truth, predicted) counts for one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSeries {
    pub model: String,
    pub pairs: Vec<EvalPair>,
}

impl EvalSeries {
    pub fn new(model: impl Into<String>, pairs: Vec<EvalPair>) -> Self {
        EvalSeries {
            model: model.into(),
            pairs,
        }
    }

    /// From parallel slices; image ids are the indices.
    pub fn from_counts(model: &str, truths: &[u64], preds: &[u64]) -> Self {
        let pairs = truths
            .iter()
            .zip(preds)
            .enumerate()
            .map(|(i, (&truth, &predicted))| EvalPair {
                image_id: i.to_string(),
                truth,
                predicted,
            })
            .collect();
        EvalSeries::new(model, pairs)
    }

    pub fn from_rows(model: &str, rows: &[CountRow]) -> Result<Self, StatsError> {
        let pairs = rows
            .iter()
            .map(|r| {
                let truth = r.truth.ok_or_else(|| StatsError::MissingTruth {
                    model: model.to_string(),
                    image_id: r.image_id.clone(),
                })?;
                Ok(EvalPair {
                    image_id: r.image_id.clone(),
                    truth,
                    predicted: r.predicted,
                })
            })
            .collect::<Result<Vec<_>, StatsError>>()?;
        Ok(EvalSeries::new(model, pairs))
    }

    pub fn validate(&self) -> Result<(), StatsError> {
        if self.pairs.is_empty() {
            return Err(StatsError::EmptySeries(self.model.clone()));
        }
        if let Some(p) = self.pairs.iter().find(|p| p.truth == 0) {
            return Err(StatsError::ZeroTruth {
                model: self.model.clone(),
                image_id: p.image_id.clone(),
            });
        }
        Ok(())
    }

    pub fn abs_errors(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|p| p.truth.abs_diff(p.predicted) as f64)
            .collect()
    }

    pub fn pct_errors(&self) -> Vec<f64> {
        self.pairs
            .iter()
            .map(|p| 100.0 * p.truth.abs_diff(p.predicted) as f64 / p.truth as f64)
            .collect()
    }

    pub fn truths(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.truth as f64).collect()
    }

    pub fn predictions(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.predicted as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mae: f64,
    pub mae_sd: f64,
    pub mape: f64,
    pub mape_sd: f64,
    pub rmse: f64,
    /// Same dispersion statistic as `mae_sd`: sd of per-image absolute errors.
    pub rmse_sd: f64,
    /// `1 - SSres / SStot` against the identity line.
    pub r2: f64,
    /// Squared correlation, i.e. R² of the least-squares line.
    pub r2_fitted: f64,
}

/// Which R² to report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum R2Mode {
    #[default]
    Identity,
    Fitted,
}

impl MetricSummary {
    pub fn r2_as(&self, mode: R2Mode) -> f64 {
        match mode {
            R2Mode::Identity => self.r2,
            R2Mode::Fitted => self.r2_fitted,
        }
    }
}

/// R² against `pred = truth`. With constant truths: 1 when every prediction
/// is exact, NaN otherwise.
pub fn r2_identity(truths: &[f64], preds: &[f64]) -> f64 {
    let m = mean(truths);
    let ss_tot: f64 = truths.iter().map(|t| (t - m) * (t - m)).sum();
    let ss_res: f64 = truths.iter().zip(preds).map(|(t, p)| (p - t) * (p - t)).sum();
    if ss_tot == 0.0 {
        return if ss_res == 0.0 { 1.0 } else { f64::NAN };
    }
    1.0 - ss_res / ss_tot
}

/// Squared Pearson correlation; NaN when truths are constant, 0 when only
/// predictions are.
pub fn r2_fitted(truths: &[f64], preds: &[f64]) -> f64 {
    let (mt, mp) = (mean(truths), mean(preds));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (t, p) in truths.iter().zip(preds) {
        sxy += (t - mt) * (p - mp);
        sxx += (t - mt) * (t - mt);
        syy += (p - mp) * (p - mp);
    }
    if sxx == 0.0 {
        return f64::NAN;
    }
    if syy == 0.0 {
        return 0.0;
    }
    (sxy * sxy / (sxx * syy)).min(1.0)
}

pub fn metric_summary(series: &EvalSeries) -> Result<MetricSummary, StatsError> {
    series.validate()?;
    let abs = series.abs_errors();
    let pct = series.pct_errors();
    let sq: Vec<f64> = abs.iter().map(|e| e * e).collect();
    let truths = series.truths();
    let preds = series.predictions();
    let mae_sd = sample_sd(&abs);
    Ok(MetricSummary {
        n: abs.len(),
        mae: mean(&abs),
        mae_sd,
        mape: mean(&pct),
        mape_sd: sample_sd(&pct),
        rmse: mean(&sq).sqrt(),
        rmse_sd: mae_sd,
        r2: r2_identity(&truths, &preds),
        r2_fitted: r2_fitted(&truths, &preds),
    })
}
