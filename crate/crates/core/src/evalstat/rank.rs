use serde::{Deserialize, Serialize};

use super::StatsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub model: String,
    pub mae: f64,
    pub mape: f64,
    pub rmse: f64,
}

impl RankRow {
    pub fn new(model: impl Into<String>, mae: f64, mape: f64, rmse: f64) -> Self {
        RankRow {
            model: model.into(),
            mae,
            mape,
            rmse,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub model: String,
    /// Normalized (mae, mape, rmse).
    pub normalized: [f64; 3],
    pub normalized_sum: f64,
}

/// Min-max normalize each column of `rows` to [0, 1] and sum per row. A
/// constant column contributes 0. Also used by the tuner.
pub fn min_max_sums(rows: &[[f64; 3]]) -> Vec<([f64; 3], f64)> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for r in rows {
        for c in 0..3 {
            lo[c] = lo[c].min(r[c]);
            hi[c] = hi[c].max(r[c]);
        }
    }
    rows.iter()
        .map(|r| {
            let mut norm = [0.0; 3];
            for c in 0..3 {
                if hi[c] > lo[c] {
                    norm[c] = (r[c] - lo[c]) / (hi[c] - lo[c]);
                }
            }
            (norm, norm.iter().sum())
        })
        .collect()
}

/// Rows ordered by ascending normalized sum, ties by model name.
pub fn normalized_rank(rows: &[RankRow]) -> Result<Vec<Ranked>, StatsError> {
    if rows.len() < 2 {
        return Err(StatsError::TooFewRows(rows.len()));
    }
    if let Some(r) = rows
        .iter()
        .find(|r| !(r.mae.is_finite() && r.mape.is_finite() && r.rmse.is_finite()))
    {
        return Err(StatsError::NonFinite(format!("ranking row '{}'", r.model)));
    }
    let values: Vec<[f64; 3]> = rows.iter().map(|r| [r.mae, r.mape, r.rmse]).collect();
    let mut out: Vec<Ranked> = rows
        .iter()
        .zip(min_max_sums(&values))
        .map(|(r, (normalized, normalized_sum))| Ranked {
            model: r.model.clone(),
            normalized,
            normalized_sum,
        })
        .collect();
    out.sort_by(|a, b| {
        a.normalized_sum
            .total_cmp(&b.normalized_sum)
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_rows_and_ties() {
        let r = normalized_rank(&[RankRow::new("b", 1.0, 1.0, 1.0), RankRow::new("a", 1.0, 1.0, 1.0)]).unwrap();
        assert_eq!(r[0].model, "a");
        assert_eq!(r[0].normalized_sum, r[1].normalized_sum);
        let r = normalized_rank(&[RankRow::new("x", 2.0, 4.0, 3.0), RankRow::new("y", 1.0, 5.0, 3.0)]).unwrap();
        assert_eq!((r[0].model.as_str(), r[0].normalized), ("x", [1.0, 0.0, 0.0]));
        assert!(matches!(
            normalized_rank(&[RankRow::new("x", 1.0, 1.0, 1.0)]),
            Err(StatsError::TooFewRows(1))
        ));
    }

    #[test]
    fn small_gap_at_the_top() {
        // yolov8m vs rtdetr-x share the rmse column extreme
        let rows = [
            RankRow::new("yolov8m", 5.44, 4.71, 8.63),
            RankRow::new("rtdetr-x", 5.41, 4.46, 9.17),
            RankRow::new("detr-resnet-50", 18.47, 18.74, 31.39),
        ];
        let r = normalized_rank(&rows).unwrap();
        let want = (5.44 - 5.41) / (18.47 - 5.41) + (4.71 - 4.46) / (18.74 - 4.46);
        assert_eq!(r[0].model, "yolov8m");
        assert!((r[0].normalized_sum - want).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn affine_rescaling_of_a_column_is_invisible(
            rows in proptest::collection::vec((0.0f64..50.0, 0.0f64..50.0, 0.0f64..50.0), 2..10),
            col in 0usize..3, a in 0.01f64..100.0, b in -100.0f64..100.0,
        ) {
            let base: Vec<RankRow> = rows.iter().enumerate().map(|(i, r)| RankRow::new(format!("m{i}"), r.0, r.1, r.2)).collect();
            let mut scaled = base.clone();
            for r in &mut scaled {
                let v = match col { 0 => &mut r.mae, 1 => &mut r.mape, _ => &mut r.rmse };
                *v = a * *v + b;
            }
            let x = normalized_rank(&base).unwrap();
            let y = normalized_rank(&scaled).unwrap();
            for (p, q) in x.iter().zip(&y) {
                prop_assert!((p.normalized_sum - q.normalized_sum).abs() < 1e-9);
            }
        }
    }
}
