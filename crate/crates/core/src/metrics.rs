//! Spearman rank correlation, relative ℓ2 and Fisher-z aggregation.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Ascending fractional ranks starting at 1; ties share the mean of their span.
pub fn rank(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!("ranking needs at least 2 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op: "rank".into() });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let shared = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = shared;
        }
        start = end;
    }
    Ok(ranks)
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateRanking);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of the fractional ranks.
pub fn spearman(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(
            "spearman",
            format!("{} predictions, {} targets", predictions.len(), targets.len()),
        ));
    }
    pearson(&rank(predictions)?, &rank(targets)?)
}

/// `mean(((s − ŝ)/(s_max − s_min))²)·100`.
pub fn relative_l2(predictions: &[f64], targets: &[f64], s_max: f64, s_min: f64) -> Result<f64> {
    if !(s_max > s_min) {
        return Err(Error::InvalidArgument(format!("score bounds need s_max > s_min, got {s_max} and {s_min}")));
    }
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::shape(
            "relative_l2",
            format!("{} predictions, {} targets", predictions.len(), targets.len()),
        ));
    }
    let range = s_max - s_min;
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| {
            let e = (t - p).abs() / range;
            e * e
        })
        .sum();
    Ok(total / predictions.len() as f64 * 100.0)
}

/// `tanh(mean(atanh ρ_k))`.
pub fn fisher_z_average(rhos: &[f64]) -> Result<f64> {
    if rhos.is_empty() {
        return Err(Error::InvalidArgument("no correlations to average".into()));
    }
    if rhos.iter().any(|r| r.is_nan() || r.abs() >= 1.0) {
        return Err(Error::FisherUndefined);
    }
    let z = rhos.iter().map(|r| r.atanh()).sum::<f64>() / rhos.len() as f64;
    Ok(z.tanh())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoryResult {
    pub category: String,
    pub srcc: f64,
    pub rl2: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<CategoryResult>,
    pub srcc: f64,
    pub rl2: f64,
}

impl EvalReport {
    /// Aggregates with Fisher-z for SRCC and the arithmetic mean for R-ℓ2.
    /// A single category reports its own SRCC, which keeps ρ = ±1 representable.
    pub fn from_categories(categories: Vec<CategoryResult>) -> Result<Self> {
        if categories.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let srcc = if categories.len() == 1 {
            categories[0].srcc
        } else {
            fisher_z_average(&categories.iter().map(|c| c.srcc).collect::<Vec<_>>())?
        };
        let rl2 = categories.iter().map(|c| c.rl2).sum::<f64>() / categories.len() as f64;
        Ok(Self { categories, srcc, rl2 })
    }

    /// Scores one category from predictions and targets in original units.
    pub fn single(
        category: &str,
        predictions: &[f64],
        targets: &[f64],
        s_max: f64,
        s_min: f64,
    ) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let result = CategoryResult {
            category: category.to_string(),
            srcc: spearman(predictions, targets)?,
            rl2: relative_l2(predictions, targets, s_max, s_min)?,
            n: targets.len(),
        };
        Self::from_categories(vec![result])
    }

    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for c in &self.categories {
            let _ = writeln!(out, "category.{}.srcc={:.6}", c.category, c.srcc);
            let _ = writeln!(out, "category.{}.rl2={:.6}", c.category, c.rl2);
            let _ = writeln!(out, "category.{}.n={}", c.category, c.n);
        }
        let _ = writeln!(out, "srcc={:.6}", self.srcc);
        let _ = writeln!(out, "rl2={:.6}", self.rl2);
        out
    }

    /// Tab-separated `category srcc rl2 n` rows with a header.
    pub fn to_rows(&self) -> String {
        let mut out = String::from("category\tsrcc\trl2\tn\n");
        for c in &self.categories {
            let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{}", c.category, c.srcc, c.rl2, c.n);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&[10.0, 20.0, 30.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(rank(&[5.0, 5.0]).unwrap(), vec![1.5, 1.5]);
        assert_eq!(rank(&[3.0, 1.0, 4.0, 1.0]).unwrap(), vec![3.0, 1.5, 4.0, 1.5]);
        assert!(rank(&[1.0]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.1, 5.0, 9.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() < 1e-15);
        assert!(matches!(spearman(&[1.0, 1.0], &[1.0, 2.0]), Err(Error::DegenerateRanking)));
    }

    #[test]
    fn relative_l2_examples() {
        assert_eq!(relative_l2(&[1.0, 2.0], &[1.0, 2.0], 30.0, 10.0).unwrap(), 0.0);
        assert!((relative_l2(&[11.0], &[10.0], 30.0, 10.0).unwrap() - 0.25).abs() < 1e-12);
        assert!(relative_l2(&[1.0], &[1.0], 10.0, 10.0).is_err());
    }

    #[test]
    fn fisher_examples() {
        assert!((fisher_z_average(&[0.3]).unwrap() - 0.3).abs() < 1e-15);
        assert!((fisher_z_average(&[0.7, 0.7, 0.7]).unwrap() - 0.7).abs() < 1e-15);
        assert!((fisher_z_average(&[0.818, 0.803, 0.812, 0.805]).unwrap() - 0.810).abs() < 1e-3);
        assert!(matches!(fisher_z_average(&[1.0, 0.5]), Err(Error::FisherUndefined)));
    }

    #[test]
    fn report_serializations() {
        let r = EvalReport::single("synthetic", &[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 3.0, 1.0).unwrap();
        assert_eq!(r.srcc, 1.0);
        assert!(r.to_key_values().contains("srcc=1.000000\n"));
        assert_eq!(r.to_rows().lines().count(), 2);
        assert!(EvalReport::from_categories(vec![]).is_err());
    }
}
