use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::anova::{anova_oneway, check_groups};
use super::cld::compact_letter_display;
use super::ptukey::ptukey_sf;
use super::{mean, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyPair {
    pub i: usize,
    pub j: usize,
    pub mean_diff: f64,
    pub q_stat: f64,
    pub p_adjusted: f64,
    pub reject: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TukeyOutcome {
    pub names: Vec<String>,
    pub alpha: f64,
    pub df_within: usize,
    pub ms_within: f64,
    /// Pairs with `i < j`, row-major.
    pub pairs: Vec<TukeyPair>,
    pub letters: Vec<String>,
}

impl TukeyOutcome {
    /// The comparison of groups `a` and `b` in either order.
    pub fn pair(&self, a: usize, b: usize) -> Option<&TukeyPair> {
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }

    pub fn rejected(&self) -> Vec<(usize, usize)> {
        self.pairs.iter().filter(|p| p.reject).map(|p| (p.i, p.j)).collect()
    }
}

/// Tukey HSD with the Tukey-Kramer standard error for unequal group sizes.
pub fn tukey_hsd(names: &[String], groups: &[Vec<f64>], alpha: f64) -> Result<TukeyOutcome, StatsError> {
    check_groups(groups)?;
    if names.len() != groups.len() {
        return Err(StatsError::NameMismatch {
            names: names.len(),
            groups: groups.len(),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::Parameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let anova = anova_oneway(groups)?;
    let msw = anova.ms_within();
    let df = anova.df_within as f64;
    let k = groups.len();
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let index: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();

    let pairs = index
        .par_iter()
        .map(|&(i, j)| {
            let diff = (means[i] - means[j]).abs();
            let se = (msw / 2.0 * (1.0 / groups[i].len() as f64 + 1.0 / groups[j].len() as f64)).sqrt();
            let (q_stat, p_adjusted) = if diff == 0.0 {
                (0.0, 1.0)
            } else if se == 0.0 {
                (f64::INFINITY, 0.0)
            } else {
                let q = diff / se;
                (q, ptukey_sf(q, k, df)?)
            };
            Ok(TukeyPair {
                i,
                j,
                mean_diff: means[i] - means[j],
                q_stat,
                p_adjusted,
                reject: p_adjusted < alpha,
            })
        })
        .collect::<Result<Vec<_>, StatsError>>()?;

    let rejected: Vec<(usize, usize)> = pairs.iter().filter(|p| p.reject).map(|p| (p.i, p.j)).collect();
    Ok(TukeyOutcome {
        names: names.to_vec(),
        alpha,
        df_within: anova.df_within,
        ms_within: msw,
        pairs,
        letters: compact_letter_display(k, &rejected),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("g{i}")).collect()
    }

    #[test]
    fn separated_and_identical() {
        let t = tukey_hsd(&names(2), &[vec![1.0, 1.1, 0.9], vec![50.0, 50.1, 49.9]], 0.05).unwrap();
        assert!(t.pairs[0].reject);
        assert_eq!(t.letters, ["a", "b"]);
        let g = vec![1.0, 2.0, 3.0, 4.0];
        let t = tukey_hsd(&names(3), &[g.clone(), g.clone(), g], 0.05).unwrap();
        assert!(t.pairs.iter().all(|p| !p.reject && p.p_adjusted == 1.0));
        assert_eq!(t.letters, ["a", "a", "a"]);
    }

    #[test]
    fn two_groups_match_t_test() {
        // k = 2 Tukey is the pooled two-sample t test
        let a = vec![1.0, 2.0, 4.0, 3.5, 2.2];
        let b = vec![3.0, 4.5, 5.0, 2.5, 6.0, 4.4];
        let t = tukey_hsd(&names(2), &[a.clone(), b.clone()], 0.05).unwrap();
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (ma, mb) = (mean(&a), mean(&b));
        let ss = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() + b.iter().map(|x| (x - mb).powi(2)).sum::<f64>();
        let sp2 = ss / (na + nb - 2.0);
        let tstat = (ma - mb).abs() / (sp2 * (1.0 / na + 1.0 / nb)).sqrt();
        let dist = statrs::distribution::StudentsT::new(0.0, 1.0, na + nb - 2.0).unwrap();
        let p = 2.0 * (1.0 - statrs::distribution::ContinuousCDF::cdf(&dist, tstat));
        assert!((t.pairs[0].q_stat - tstat * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert!((t.pairs[0].p_adjusted - p).abs() < 1e-8);
    }

    /// Means 0, 5, 10 with ten values each and within-group sd 6.
    pub(crate) fn three_group_fixture() -> Vec<Vec<f64>> {
        let v: Vec<f64> = (0..10).map(|i| f64::from(i) - 4.5).collect();
        let sd = (v.iter().map(|x| x * x).sum::<f64>() / 9.0).sqrt();
        [0.0, 5.0, 10.0]
            .iter()
            .map(|m| v.iter().map(|x| m + 6.0 * x / sd).collect())
            .collect()
    }

    #[test]
    fn only_extreme_pair_rejected() {
        let t = tukey_hsd(&names(3), &three_group_fixture(), 0.05).unwrap();
        assert!((t.ms_within - 36.0).abs() < 1e-9);
        assert_eq!(t.rejected(), [(0, 2)]);
        assert_eq!(t.letters, ["a", "ab", "b"]);
        assert!(t.pair(2, 0).unwrap().reject);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            tukey_hsd(&names(1), &[vec![1.0, 2.0], vec![1.0, 2.0]], 0.05),
            Err(StatsError::NameMismatch { .. })
        ));
        assert!(tukey_hsd(&names(2), &[vec![1.0, 2.0], vec![1.0, 2.0]], 1.5).is_err());
    }
}
