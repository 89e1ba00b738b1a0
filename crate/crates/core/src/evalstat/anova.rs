use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use super::{mean, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_stat: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
    pub ss_between: f64,
    pub ss_within: f64,
}

impl AnovaResult {
    pub fn ms_within(&self) -> f64 {
        self.ss_within / self.df_within as f64
    }
}

pub(crate) fn check_groups(groups: &[Vec<f64>]) -> Result<(), StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for (index, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::SmallGroup { index, len: g.len() });
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(format!("group {index}")));
        }
    }
    Ok(())
}

/// Upper tail of F(d1, d2) at `f`.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f)).clamp(0.0, 1.0)
}

/// One-way ANOVA. With no within-group spread, F is 0 and p is 1 when the
/// group means agree, F is infinite and p is 0 otherwise.
pub fn anova_oneway(groups: &[Vec<f64>]) -> Result<AnovaResult, StatsError> {
    check_groups(groups)?;
    let n: usize = groups.iter().map(Vec::len).sum();
    let grand = groups.iter().flatten().sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for g in groups {
        let m = mean(g);
        ss_between += g.len() as f64 * (m - grand) * (m - grand);
        ss_within += g.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
    }
    let df_between = groups.len() - 1;
    let df_within = n - groups.len();
    // below this the between-group sum is rounding noise
    let scale = groups
        .iter()
        .flatten()
        .map(|x| x * x)
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    if ss_between <= 1e-14 * scale {
        ss_between = 0.0;
    }
    let (f_stat, p_value) = if ss_within == 0.0 {
        if ss_between == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY, 0.0)
        }
    } else {
        let f = (ss_between / df_between as f64) / (ss_within / df_within as f64);
        (f, f_sf(f, df_between as f64, df_within as f64))
    };
    Ok(AnovaResult {
        f_stat,
        df_between,
        df_within,
        p_value,
        ss_between,
        ss_within,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn hand_example() {
        let r = anova_oneway(&[vec![1.0, 2.0, 3.0], vec![2.0, 3.0, 4.0], vec![3.0, 4.0, 5.0]]).unwrap();
        assert!((r.f_stat - 3.0).abs() < 1e-12);
        assert_eq!((r.df_between, r.df_within), (2, 6));
        assert!((r.p_value - 0.125).abs() < 1e-12);
    }

    #[test]
    fn df1_two_closed_form() {
        // for d1 = 2, sf(F) = (1 + 2F/d2)^(-d2/2)
        for &(f, d2) in &[(0.5f64, 4.0f64), (3.0, 6.0), (7.5, 27.0), (0.01, 100.0)] {
            let want = (1.0 + 2.0 * f / d2).powf(-d2 / 2.0);
            assert!((f_sf(f, 2.0, d2) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_and_degenerate() {
        let g = vec![1.0, 2.0, 3.0];
        let r = anova_oneway(&[g.clone(), g.clone(), g]).unwrap();
        assert_eq!((r.f_stat, r.p_value), (0.0, 1.0));
        let r = anova_oneway(&[vec![2.0, 2.0], vec![2.0, 2.0]]).unwrap();
        assert_eq!((r.f_stat, r.p_value), (0.0, 1.0));
        let r = anova_oneway(&[vec![2.0, 2.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!((r.f_stat, r.p_value), (f64::INFINITY, 0.0));
        assert_eq!(anova_oneway(&[vec![1.0, 2.0]]), Err(StatsError::TooFewGroups(1)));
        assert_eq!(
            anova_oneway(&[vec![1.0, 2.0], vec![1.0]]),
            Err(StatsError::SmallGroup { index: 1, len: 1 })
        );
        assert!(matches!(
            anova_oneway(&[vec![1.0, f64::NAN], vec![1.0, 2.0]]),
            Err(StatsError::NonFinite(_))
        ));
    }

    #[test]
    fn random_groups_match_sums_of_squares() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let groups: Vec<Vec<f64>> = [0.0, 0.4, 1.0]
            .iter()
            .map(|&mu| {
                let d = Normal::new(mu, 1.0).unwrap();
                (0..30).map(|_| d.sample(&mut rng)).collect()
            })
            .collect();
        let r = anova_oneway(&groups).unwrap();
        // total = between + within, computed from raw sums
        let all: Vec<f64> = groups.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let sum: f64 = all.iter().sum();
        let sst = all.iter().map(|x| x * x).sum::<f64>() - sum * sum / n;
        let ssb = groups
            .iter()
            .map(|g| g.iter().sum::<f64>().powi(2) / g.len() as f64)
            .sum::<f64>()
            - sum * sum / n;
        let ssw = sst - ssb;
        let f = (ssb / 2.0) / (ssw / 87.0);
        assert!((r.f_stat - f).abs() < 1e-9 * f);
        assert!((r.ss_within - ssw).abs() < 1e-9 * ssw);
        // p via the F density integrated numerically
        let d1 = 2.0;
        let d2 = 87.0;
        let ln_c = statrs::function::gamma::ln_gamma((d1 + d2) / 2.0)
            - statrs::function::gamma::ln_gamma(d1 / 2.0)
            - statrs::function::gamma::ln_gamma(d2 / 2.0)
            + (d1 / 2.0) * (d1 / d2).ln();
        let dens = |x: f64| (ln_c + (d1 / 2.0 - 1.0) * x.ln() - ((d1 + d2) / 2.0) * (1.0 + d1 * x / d2).ln()).exp();
        let steps = 200_000;
        let h = f / steps as f64;
        let mut cdf = 0.0;
        for i in 0..steps {
            // midpoint rule; the density is finite at 0 for d1 = 2
            cdf += dens((i as f64 + 0.5) * h) * h;
        }
        assert!((r.p_value - (1.0 - cdf)).abs() < 1e-9, "{} vs {}", r.p_value, 1.0 - cdf);
    }
}
