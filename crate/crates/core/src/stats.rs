//! Sample statistics used by the verification harness and the tests.

use alloc::vec::Vec;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    covariance(xs, xs)
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (n - 1) as f64
}

/// Standard error of the sample mean.
pub fn mean_std_error(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    libm::sqrt(variance(xs) / xs.len() as f64)
}

/// Standard error of the sample variance, from the fourth central moment.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    let m4 = xs.iter().map(|x| libm::pow(x - m, 4.0)).sum::<f64>() / n as f64;
    libm::sqrt(((m4 - m2 * m2) / n as f64).max(0.0))
}

/// Standard error of the sample covariance: sd of `(x−x̄)(y−ȳ)` over `√n`.
pub fn covariance_std_error(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let prods: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect();
    mean_std_error(&prods)
}

/// Least-squares line `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Standard error of the slope (0 with fewer than three points).
    pub slope_std_error: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let slope_std_error = if xs.len() > 2 && sxx > 0.0 {
        let rss: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| {
                let r = y - intercept - slope * x;
                r * r
            })
            .sum();
        libm::sqrt(rss / (n - 2.0) / sxx)
    } else {
        0.0
    };
    LineFit {
        intercept,
        slope,
        slope_std_error,
    }
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> LineFit {
    let lx: Vec<f64> = xs.iter().map(|x| libm::log(*x)).collect();
    let ly: Vec<f64> = ys.iter().map(|y| libm::log(*y)).collect();
    linear_fit(&lx, &ly)
}

/// Indices of strict interior local maxima; plateaus count once, at their start.
pub fn local_maxima(xs: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = xs.len();
    let mut k = 1;
    while k + 1 < n {
        if xs[k] > xs[k - 1] {
            let mut end = k;
            while end + 1 < n && xs[end + 1] == xs[k] {
                end += 1;
            }
            if end + 1 < n && xs[end + 1] < xs[k] {
                out.push(k);
            }
            k = end + 1;
        } else {
            k += 1;
        }
    }
    out
}

/// Local maxima whose height exceeds both neighbouring valleys by `prominence`.
pub fn prominent_maxima(xs: &[f64], prominence: f64) -> Vec<usize> {
    local_maxima(xs)
        .into_iter()
        .filter(|&k| {
            let h = xs[k];
            let left = lowest_until_higher(xs[..k].iter().rev(), h);
            let right = lowest_until_higher(xs[k + 1..].iter(), h);
            h - left.max(right) >= prominence
        })
        .collect()
}

fn lowest_until_higher<'a>(it: impl Iterator<Item = &'a f64>, h: f64) -> f64 {
    let mut low = h;
    for &v in it {
        if v > h {
            break;
        }
        low = low.min(v);
    }
    low
}

/// Centered moving average with window `2w+1`, truncated at the ends.
pub fn smooth(xs: &[f64], w: usize) -> Vec<f64> {
    let n = xs.len();
    (0..n)
        .map(|k| {
            let lo = k.saturating_sub(w);
            let hi = (k + w + 1).min(n);
            mean(&xs[lo..hi])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert!((covariance(&xs, &[2.0, 4.0, 6.0, 8.0]) - 10.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn fit_exact_line() {
        let f = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((f.slope - 2.0).abs() < 1e-15 && (f.intercept - 1.0).abs() < 1e-15);
        let g = log_log_slope(&[1.0, 2.0, 4.0], &[1.0, 0.25, 0.0625]);
        assert!((g.slope + 2.0).abs() < 1e-12);
    }

    #[test]
    fn maxima_detection() {
        let xs = vec![0.0, 1.0, 0.5, 2.0, 2.0, 1.0, 1.2, 0.0];
        assert_eq!(local_maxima(&xs), vec![1, 3, 6]);
        assert_eq!(prominent_maxima(&xs, 0.4), vec![1, 3]);
        assert!(local_maxima(&[1.0, 2.0, 3.0]).is_empty());
    }
}
