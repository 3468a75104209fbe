use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end + 1 < order.len() && xs[order[end + 1]] == xs[order[k]] {
            end += 1;
        }
        let r = (k + end) as f64 / 2.0 + 1.0;
        for &i in &order[k..=end] {
            out[i] = r;
        }
        k = end + 1;
    }
    out
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(
            "correlation of a constant series".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::dim(format!(
            "spearman over {} and {} values",
            x.len(),
            y.len()
        )));
    }
    pearson(&ranks(x), &ranks(y))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::dim(format!(
            "linear fit over {} and {} values",
            x.len(),
            y.len()
        )));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::UndefinedMetric("linear fit with constant x".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Exact one-sided Wilcoxon signed-rank p-value for `median(x − y) > 0`.
///
/// Zero differences are dropped; tied magnitudes share average ranks and the
/// null distribution is enumerated over all sign assignments.
pub fn wilcoxon_greater(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim(format!(
            "wilcoxon over {} and {} values",
            x.len(),
            y.len()
        )));
    }
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if d.is_empty() {
        return Ok(1.0);
    }
    if d.len() > 25 {
        return Err(Error::arg("exact signed-rank test limited to 25 pairs"));
    }
    let r = ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d
        .iter()
        .zip(&r)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    // Ranks are multiples of one half; count in half units.
    let half: Vec<usize> = r.iter().map(|x| (x * 2.0).round() as usize).collect();
    let total: usize = half.iter().sum();
    let mut counts = vec![0f64; total + 1];
    counts[0] = 1.0;
    for &h in &half {
        for s in (h..=total).rev() {
            counts[s] += counts[s - h];
        }
    }
    let target = (w_plus * 2.0).round() as usize;
    let tail: f64 = counts[target..].iter().sum();
    Ok(tail / 2f64.powi(d.len() as i32))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[9.0, 5.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(spearman(&x, &[1.0, 4.0, 9.0, 16.0]).unwrap(), 1.0);
    }

    #[test]
    fn tied_ranks_average() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0]), vec![2.5, 1.0, 2.5]);
    }

    #[test]
    fn exact_line() {
        let f = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    /// Brute force over all 2^n sign flips of the observed ranks.
    fn wilcoxon_brute(d: &[f64]) -> f64 {
        let r = ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let w: f64 = d
            .iter()
            .zip(&r)
            .filter(|(v, _)| **v > 0.0)
            .map(|(_, r)| r)
            .sum();
        let n = d.len();
        let mut hits = 0;
        for mask in 0..(1u32 << n) {
            let s: f64 = (0..n).filter(|k| mask >> k & 1 == 1).map(|k| r[k]).sum();
            if s >= w - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn wilcoxon_matches_enumeration() {
        let x = [0.8, 0.75, 0.9, 0.7, 0.85];
        let y = [0.7, 0.76, 0.8, 0.6, 0.8];
        let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let p = wilcoxon_greater(&x, &y).unwrap();
        assert!((p - wilcoxon_brute(&d)).abs() < 1e-12);
        assert_eq!(wilcoxon_greater(&[2.0; 5], &[1.0; 5]).unwrap(), 1.0 / 32.0);
        let tied = [1.0, -1.0, 2.0, 2.0, -0.5];
        let p = wilcoxon_greater(&tied, &[0.0; 5]).unwrap();
        assert!((p - wilcoxon_brute(&tied)).abs() < 1e-12);
    }
}
