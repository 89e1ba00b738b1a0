//! Counting metrics and model-comparison statistics.
//!
//! | piece | file |
//! |---|---|
//! | MAE, MAPE, RMSE, R² | [`metrics`] |
//! | min-max normalized ranking | [`rank`] |
//! | one-way ANOVA | [`anova`] |
//! | studentized range CDF / quantile | [`ptukey`] |
//! | Tukey HSD (Tukey-Kramer) | [`tukey`] |
//! | compact letter display | [`cld`] |
//! | scatter plots | [`scatter`] |

pub mod anova;
pub mod cld;
pub mod metrics;
pub mod ptukey;
mod quadrature;
pub mod rank;
pub mod scatter;
pub mod tukey;

use thiserror::Error;

pub use anova::{anova_oneway, AnovaResult};
pub use cld::compact_letter_display;
pub use metrics::{metric_summary, EvalPair, EvalSeries, MetricSummary};
pub use ptukey::{ptukey, ptukey_sf, qtukey};
pub use rank::{normalized_rank, RankRow, Ranked};
pub use scatter::{render_scatter_svg, scatter_data, ScatterData};
pub use tukey::{tukey_hsd, TukeyOutcome, TukeyPair};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("series '{0}' has no images")]
    EmptySeries(String),
    #[error("series '{model}': image {image_id} has a true count of 0, percentage error is undefined")]
    ZeroTruth { model: String, image_id: String },
    #[error("series '{model}': image {image_id} has no true count")]
    MissingTruth { model: String, image_id: String },
    #[error("ranking needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {index} has {len} value(s), at least 2 are needed")]
    SmallGroup { index: usize, len: usize },
    #[error("{0} contains a non-finite value")]
    NonFinite(String),
    #[error("{0}")]
    Parameter(String),
    #[error("{names} names for {groups} groups")]
    NameMismatch { names: usize, groups: usize },
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() - 1) as f64).sqrt()
}
