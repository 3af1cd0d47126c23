use super::EvalError;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Level at which a p-value counts as significant.
pub const SIGNIFICANCE: f64 = 0.05;

/// Largest number of non-zero differences handled by the exact null
/// distribution.
const EXACT_MAX_N: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(w_plus, w_minus)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// Two-sided.
    pub p_value: f64,
    pub method: WilcoxonMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    pub significant: bool,
}

/// Average ranks (1-based) of `v`, ties sharing the mean of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Paired two-sided signed-rank test of `x` against `y`. Zero differences
/// are dropped; tied magnitudes get average ranks.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
    if d.is_empty() {
        return Err(EvalError::AllZeroDifferences);
    }
    let n = d.len();
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p_value, method, z) = if n <= EXACT_MAX_N {
        (exact_p(&ranks, w_plus), WilcoxonMethod::Exact, None)
    } else {
        let mean = total / 2.0;
        let mut var = (n * (n + 1) * (2 * n + 1)) as f64 / 24.0;
        let mut sorted = ranks.clone();
        sorted.sort_by(f64::total_cmp);
        for group in sorted.chunk_by(|a, b| a == b) {
            let t = group.len() as f64;
            var -= (t * t * t - t) / 48.0;
        }
        let z = (w_plus - mean) / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        ((2.0 * normal.cdf(-z.abs())).min(1.0), WilcoxonMethod::Normal, Some(z))
    };
    Ok(WilcoxonResult {
        statistic: w_plus.min(w_minus),
        w_plus,
        w_minus,
        n,
        p_value,
        method,
        z,
        significant: p_value < SIGNIFICANCE,
    })
}

/// Exact two-sided p-value of `w_plus` under random signs. Midranks are
/// doubled so every attainable sum is an integer.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let w = (w_plus * 2.0).round() as usize;
    let all = 2f64.powi(ranks.len() as i32);
    let lower: u64 = counts[..=w].iter().sum();
    let upper: u64 = counts[w..].iter().sum();
    (2.0 * lower.min(upper) as f64 / all).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlations {
    pub pearson_r: f64,
    pub spearman_rho: f64,
    /// Tau-b.
    pub kendall_tau: f64,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

fn kendall_tau_b(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut concordant, mut discordant, mut ties_x, mut ties_y) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i].total_cmp(&x[j]) as i64;
            let dy = y[i].total_cmp(&y[j]) as i64;
            match (dx, dy) {
                (0, 0) => {}
                (0, _) => ties_x += 1,
                (_, 0) => ties_y += 1,
                _ if dx == dy => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let nx = (concordant + discordant + ties_x) as f64;
    let ny = (concordant + discordant + ties_y) as f64;
    (nx > 0.0 && ny > 0.0).then(|| (concordant - discordant) as f64 / (nx * ny).sqrt())
}

/// Pearson, Spearman (Pearson on average ranks) and Kendall tau-b.
pub fn correlations(x: &[f64], y: &[f64]) -> Result<Correlations, EvalError> {
    if x.len() != y.len() {
        return Err(EvalError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(EvalError::TooShort(2));
    }
    let pearson_r = pearson(x, y).ok_or(EvalError::ConstantInput)?;
    let spearman_rho = pearson(&average_ranks(x), &average_ranks(y)).ok_or(EvalError::ConstantInput)?;
    let kendall_tau = kendall_tau_b(x, y).ok_or(EvalError::ConstantInput)?;
    Ok(Correlations { pearson_r, spearman_rho, kendall_tau })
}
