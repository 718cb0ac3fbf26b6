use serde::{Deserialize, Serialize};

use crate::{ForgeError, Result};

pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_SIGMA: f64 = 7.0;

/// Spike statistics of one scalar series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub series_name: String,
    pub n_values: usize,
    /// Flagged positions, ascending, each at least `window`.
    pub spike_indices: Vec<usize>,
    /// Flagged values over the `n_values - window` scored values.
    pub spike_score: f64,
    pub window: usize,
    pub sigma_threshold: f64,
}

/// Mean and population standard deviation of `w`, computed in two passes.
pub fn window_stats(w: &[f64]) -> (f64, f64) {
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn flag(x: f64, mean: f64, std: f64, sigma: f64) -> bool {
    if std == 0.0 {
        x != mean
    } else {
        (x - mean).abs() >= sigma * std
    }
}

/// Decide index `i` exactly from its trailing window.
fn exact(series: &[f64], i: usize, window: usize, sigma: f64) -> bool {
    let (mean, std) = window_stats(&series[i - window..i]);
    flag(series[i], mean, std, sigma)
}

/// Flag values at least `sigma` trailing standard deviations away from the
/// trailing mean of the previous `window` values.
///
/// Running sums decide clear-cut cases; anything near the threshold, or
/// whose window has near-zero variance, is recomputed exactly in two passes.
pub fn spike_score(series: &[f64], window: usize, sigma: f64) -> Result<SeriesReport> {
    if window == 0 {
        return Err(ForgeError::validation("spike window must be positive"));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(ForgeError::validation(
            "sigma must be finite and non-negative",
        ));
    }
    if series.len() <= window {
        return Err(ForgeError::validation(format!(
            "series of {} values is too short for a window of {window}",
            series.len()
        )));
    }
    if let Some(i) = series.iter().position(|x| !x.is_finite()) {
        return Err(ForgeError::validation(format!(
            "series value {i} is not finite"
        )));
    }

    let w = window as f64;
    let shift = window_stats(&series[..window]).0;
    let (mut s1, mut s2) = (0.0, 0.0);
    let resum = |lo: usize, hi: usize| {
        series[lo..hi].iter().fold((0.0, 0.0), |(a, b), x| {
            let d = x - shift;
            (a + d, b + d * d)
        })
    };
    let mut spikes = Vec::new();
    for i in window..series.len() {
        if (i - window).is_multiple_of(window) {
            (s1, s2) = resum(i - window, i);
        } else {
            let (old, new) = (series[i - window - 1] - shift, series[i - 1] - shift);
            s1 += new - old;
            s2 += new * new - old * old;
        }
        let m = s1 / w;
        let mean_sq = s2 / w;
        let var = mean_sq - m * m;
        let flagged = if var <= 1e-6 * mean_sq || var <= f64::MIN_POSITIVE {
            exact(series, i, window, sigma)
        } else {
            let dev = (series[i] - shift - m).abs();
            let bound = sigma * var.sqrt();
            if (dev - bound).abs() <= 1e-6 * (dev + bound) {
                exact(series, i, window, sigma)
            } else {
                dev > bound
            }
        };
        if flagged {
            spikes.push(i);
        }
    }
    Ok(SeriesReport {
        series_name: String::new(),
        n_values: series.len(),
        spike_score: spikes.len() as f64 / (series.len() - window) as f64,
        spike_indices: spikes,
        window,
        sigma_threshold: sigma,
    })
}

impl SeriesReport {
    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.series_name = name.into();
        self
    }
}
