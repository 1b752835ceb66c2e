//! Minority oversampling (SMOTE, ADASYN) and the balancing gate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chi2::{chi_squared_imbalance, ChiSquaredOutcome};
use super::{nearest, MlError, Result};

/// Interpolates `base + gap * (neighbor - base)`.
pub fn interpolate(base: &[f64], neighbor: &[f64], gap: f64) -> Vec<f64> {
    base.iter().zip(neighbor).map(|(a, b)| a + gap * (b - a)).collect()
}

/// SMOTE with a caller-supplied gap draw. Base samples cycle through the
/// minority set in order; each one is paired with a uniformly chosen member
/// of its `k` nearest minority neighbors.
pub fn smote_with_gap<R, G>(
    minority: &[Vec<f64>],
    k: usize,
    n_synthetic: usize,
    rng: &mut R,
    mut gap: G,
) -> Result<Vec<Vec<f64>>>
where
    R: Rng,
    G: FnMut(&mut R) -> f64,
{
    if minority.len() < 2 {
        return Err(MlError::TooFewSamples {
            needed: 2,
            got: minority.len(),
        });
    }
    if k == 0 || k > minority.len() - 1 {
        return Err(MlError::InvalidConfig(format!(
            "k = {k} must be in 1..={}",
            minority.len() - 1
        )));
    }
    if n_synthetic == 0 {
        return Ok(Vec::new());
    }
    let all: Vec<usize> = (0..minority.len()).collect();
    let neighbors: Vec<Vec<usize>> = minority
        .iter()
        .enumerate()
        .map(|(i, x)| nearest(minority, &all, x, Some(i), k))
        .collect();
    Ok((0..n_synthetic)
        .map(|s| {
            let i = s % minority.len();
            let j = neighbors[i][rng.random_range(0..neighbors[i].len())];
            let g = gap(rng);
            interpolate(&minority[i], &minority[j], g)
        })
        .collect())
}

/// SMOTE with `gap ~ U[0, 1)`.
pub fn smote<R: Rng>(minority: &[Vec<f64>], k: usize, n_synthetic: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    smote_with_gap(minority, k, n_synthetic, rng, |r| r.random::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdasynOutcome {
    pub synthetic: Vec<Vec<f64>>,
    /// `G = (m_l - m_s) * beta`.
    pub target_total: f64,
    /// Per minority sample (in input order) count `g_i`.
    pub allocation: Vec<usize>,
    /// No minority sample had a majority neighbor; allocation was uniform.
    pub uniform_fallback: bool,
}

/// ADASYN for class `minority` against all other samples.
///
/// `m_l` is the size of the largest other class, so for multiclass data each
/// class is grown toward the largest one. Difficulty `r_i` is the share of
/// non-minority samples among the `k` nearest neighbors of minority sample
/// `i` in the whole set; synthesis interpolates toward minority neighbors.
pub fn adasyn<R: Rng>(
    rows: &[Vec<f64>],
    labels: &[usize],
    minority: usize,
    beta: f64,
    k: usize,
    rng: &mut R,
) -> Result<AdasynOutcome> {
    if rows.len() != labels.len() {
        return Err(MlError::LengthMismatch(rows.len(), labels.len()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(MlError::InvalidConfig(format!("beta = {beta} must be in (0, 1]")));
    }
    if k == 0 {
        return Err(MlError::InvalidConfig("k must be >= 1".into()));
    }
    let min_idx: Vec<usize> = (0..rows.len()).filter(|&i| labels[i] == minority).collect();
    let m_s = min_idx.len();
    if m_s < 2 {
        return Err(MlError::TooFewSamples { needed: 2, got: m_s });
    }
    let num_classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let m_l = counts
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != minority)
        .map(|(_, &n)| n)
        .max()
        .unwrap_or(0);
    let target_total = m_l.saturating_sub(m_s) as f64 * beta;

    let all: Vec<usize> = (0..rows.len()).collect();
    let k_all = k.min(rows.len() - 1);
    let difficulty: Vec<f64> = min_idx
        .iter()
        .map(|&i| {
            let nn = nearest(rows, &all, &rows[i], Some(i), k_all);
            nn.iter().filter(|&&j| labels[j] != minority).count() as f64 / k_all as f64
        })
        .collect();
    let total: f64 = difficulty.iter().sum();
    let uniform_fallback = total == 0.0;
    let allocation: Vec<usize> = difficulty
        .iter()
        .map(|&r| {
            let share = if uniform_fallback { 1.0 / m_s as f64 } else { r / total };
            (share * target_total).round() as usize
        })
        .collect();

    let minority_rows: Vec<Vec<f64>> = min_idx.iter().map(|&i| rows[i].clone()).collect();
    let local: Vec<usize> = (0..m_s).collect();
    let k_min = k.min(m_s - 1);
    let mut synthetic = Vec::with_capacity(allocation.iter().sum());
    for (i, &g) in allocation.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let nn = nearest(&minority_rows, &local, &minority_rows[i], Some(i), k_min);
        for _ in 0..g {
            let j = nn[rng.random_range(0..nn.len())];
            synthetic.push(interpolate(&minority_rows[i], &minority_rows[j], rng.random::<f64>()));
        }
    }
    Ok(AdasynOutcome {
        synthetic,
        target_total,
        allocation,
        uniform_fallback,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMethod {
    None,
    Smote,
    Adasyn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceConfig {
    pub method: BalanceMethod,
    pub neighbors: usize,
    pub beta: f64,
    /// Balancing runs only if the minority share is below this.
    pub minority_threshold: f64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            method: BalanceMethod::Smote,
            neighbors: 5,
            beta: 1.0,
            minority_threshold: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceOutcome {
    pub synthetic_x: Vec<Vec<f64>>,
    pub synthetic_y: Vec<usize>,
    pub chi_squared: Option<ChiSquaredOutcome>,
    pub minority_share: f64,
    pub applied: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

/// Runs the imbalance gate and, when it fires, oversamples every class that
/// is smaller than the largest one. Returns only the synthetic samples.
pub fn balance<R: Rng>(
    xs: &[Vec<f64>],
    ys: &[usize],
    num_classes: usize,
    config: &BalanceConfig,
    rng: &mut R,
) -> Result<BalanceOutcome> {
    let mut counts = vec![0u64; num_classes];
    for &y in ys {
        counts[y] += 1;
    }
    let total: u64 = counts.iter().sum();
    let minority_share = counts.iter().copied().min().unwrap_or(0) as f64 / total.max(1) as f64;
    let mut out = BalanceOutcome {
        synthetic_x: Vec::new(),
        synthetic_y: Vec::new(),
        chi_squared: None,
        minority_share,
        applied: false,
        flags: Vec::new(),
    };
    if config.method == BalanceMethod::None || total == 0 {
        return Ok(out);
    }
    let chi = chi_squared_imbalance(&counts)?;
    let fire = chi.reject && minority_share < config.minority_threshold;
    out.chi_squared = Some(chi);
    if !fire {
        return Ok(out);
    }
    out.applied = true;
    let largest = counts.iter().copied().max().unwrap_or(0) as usize;
    for (class, &count) in counts.iter().enumerate() {
        let count = count as usize;
        if count >= largest {
            continue;
        }
        if count < 2 {
            out.flags.push(format!("class {class} has {count} samples; not oversampled"));
            continue;
        }
        let synthetic = match config.method {
            BalanceMethod::Smote => {
                let members: Vec<Vec<f64>> = xs
                    .iter()
                    .zip(ys)
                    .filter(|(_, &y)| y == class)
                    .map(|(x, _)| x.clone())
                    .collect();
                let k = config.neighbors.min(count - 1).max(1);
                smote(&members, k, largest - count, rng)?
            }
            BalanceMethod::Adasyn => {
                let r = adasyn(xs, ys, class, config.beta, config.neighbors, rng)?;
                if r.uniform_fallback {
                    out.flags.push(format!("class {class}: adasyn uniform fallback"));
                }
                r.synthetic
            }
            BalanceMethod::None => unreachable!(),
        };
        out.synthetic_y.extend(std::iter::repeat_n(class, synthetic.len()));
        out.synthetic_x.extend(synthetic);
    }
    Ok(out)
}
