//! Sample statistics used by the Monte Carlo estimators.

use serde::{Deserialize, Serialize};

use crate::parallel::pairwise_sum;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (0 for fewer than two samples).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let dev: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&dev) / (xs.len() - 1) as f64
}

pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    MeanSe {
        mean: mean(xs),
        se: if n < 2 { 0.0 } else { (variance(xs) / n as f64).sqrt() },
        count: n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let slope_se = if x.len() > 2 && sxx > 0.0 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let r = b - intercept - slope * a;
                r * r
            })
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    LinearFit {
        slope,
        intercept,
        slope_se,
    }
}

/// Hill tail-index estimate on the largest `fraction` of `|x|`.
///
/// Returns `+inf` when the top order statistics are all equal (no tail) and
/// `NaN` when too few positive samples are available.
pub fn hill_index(xs: &[f64], fraction: f64) -> f64 {
    let mut v: Vec<f64> = xs.iter().map(|x| x.abs()).filter(|x| *x > 0.0).collect();
    if v.len() < 10 {
        return f64::NAN;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    let k = ((v.len() as f64 * fraction).ceil() as usize).clamp(2, v.len() - 1);
    let threshold = v[k];
    let s: f64 = v[..k].iter().map(|x| (x / threshold).ln()).sum::<f64>() / k as f64;
    if s <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / s
    }
}

/// Means of `blocks` consecutive equal-size chunks (trailing remainder dropped).
pub fn block_means(xs: &[f64], blocks: usize) -> Vec<f64> {
    let blocks = blocks.min(xs.len()).max(1);
    let size = xs.len() / blocks;
    if size == 0 {
        return vec![];
    }
    (0..blocks)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect()
}

/// Slope of `log(se)` against `log(m)` across sample-size doublings of a prefix.
///
/// For independent light-tailed samples this is close to `-1/2`.
pub fn se_decay_slope(xs: &[f64], doublings: usize) -> Option<f64> {
    let n = xs.len();
    let base = n >> doublings;
    if base < 8 {
        return None;
    }
    let mut lx = Vec::new();
    let mut ly = Vec::new();
    for j in 0..=doublings {
        let m = base << j;
        let se = mean_se(&xs[..m]).se;
        if se <= 0.0 {
            return None;
        }
        lx.push((m as f64).ln());
        ly.push(se.ln());
    }
    Some(linear_fit(&lx, &ly).slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_affine_data() {
        let x: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.7 * v + 2.0).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope - 0.7).abs() < 1e-14);
        assert!(f.slope_se < 1e-12);
    }

    #[test]
    fn hill_on_pareto_tail() {
        // Quantiles of a Pareto(alpha = 2) law.
        let n = 20_000;
        let xs: Vec<f64> = (1..=n)
            .map(|i| (1.0 - (i as f64 - 0.5) / n as f64).powf(-0.5))
            .collect();
        let a = hill_index(&xs, 0.05);
        assert!((a - 2.0).abs() < 0.1, "{a}");
    }

    #[test]
    fn constant_samples_have_no_tail() {
        assert!(hill_index(&[3.0; 100], 0.05).is_infinite());
    }
}
