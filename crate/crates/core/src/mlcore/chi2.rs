//! Chi-squared goodness-of-fit test against a uniform class distribution.

use serde::{Deserialize, Serialize};

use super::{MlError, Result};

/// Upper 5% critical values of the chi-squared distribution, dof 1..=20.
const CRITICAL_05: [f64; 20] = [
    3.841, 5.991, 7.815, 9.488, 11.070, 12.592, 14.067, 15.507, 16.919, 18.307, 19.675, 21.026,
    22.362, 23.685, 24.996, 26.296, 27.587, 28.869, 30.144, 31.410,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredOutcome {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub reject: bool,
    /// Fewer than two non-empty classes; rejected without a statistic.
    pub degenerate: bool,
}

pub fn critical_value(dof: usize) -> Option<f64> {
    CRITICAL_05.get(dof.checked_sub(1)?).copied()
}

/// Pearson statistic `sum((O - E)^2 / E)` with `E = total / classes`.
pub fn chi_squared_imbalance(counts: &[u64]) -> Result<ChiSquaredOutcome> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(MlError::TooFewSamples { needed: 1, got: 0 });
    }
    if counts.len() < 2 || counts.iter().filter(|&&c| c > 0).count() < 2 {
        return Ok(ChiSquaredOutcome {
            statistic: f64::INFINITY,
            dof: counts.len().saturating_sub(1),
            critical: f64::NAN,
            reject: true,
            degenerate: true,
        });
    }
    let dof = counts.len() - 1;
    let critical = critical_value(dof).ok_or_else(|| {
        MlError::InvalidConfig(format!("chi-squared table covers dof 1..=20, got {dof}"))
    })?;
    let expected = total as f64 / counts.len() as f64;
    let statistic = counts
        .iter()
        .map(|&o| (o as f64 - expected).powi(2) / expected)
        .sum::<f64>();
    Ok(ChiSquaredOutcome {
        statistic,
        dof,
        critical,
        reject: statistic > critical,
        degenerate: false,
    })
}
