//! Exact variance of the sample mean under a tree-indexed walk, design
//! effects, and plug-in variance estimates from a single sample.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::WalkSample;
use crate::graph::NodeFeature;
use crate::markov::{kernel_with_stationary, spectral_decompose, SpectralKernel};
use crate::par;
use crate::tree::{distance_spectrum, DistanceSpectrum, ReferralForest};

/// One term `⟨y, f_ℓ⟩²_π 𝔾(λ_ℓ)` of the variance sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Contribution {
    /// 1-based eigen index; the trivial pair is `ℓ = 1` and never appears.
    pub ell: usize,
    pub lambda: f64,
    pub projection_sq: f64,
    pub g: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub n: u64,
    pub lambda2: f64,
    pub contributions: Vec<Contribution>,
    pub var_rds: f64,
    pub sigma2: f64,
    pub var_iid: f64,
    /// `None` when the feature is constant under π.
    pub design_effect: Option<f64>,
    pub rho2: Option<f64>,
    /// Present only when `λ₂ > 0` and the design effect is defined.
    pub de_lower: Option<f64>,
    pub de_upper: Option<f64>,
}

// Below this relative size σ² is treated as zero.
const CONSTANT_FEATURE: f64 = 1e-24;

/// Evaluates `Σ_{ℓ≥2} ⟨y, f_ℓ⟩²_π 𝔾(λ_ℓ)` over every nontrivial eigenpair.
pub fn variance_exact(
    s: &SpectralKernel,
    y: &NodeFeature,
    ds: &DistanceSpectrum,
) -> Result<VarianceReport> {
    y.check_len(s.state_count())?;
    if ds.n == 0 {
        return Err(Error::validation("empty referral tree"));
    }
    if s.state_count() > 1 && s.lambda2().abs() >= 1.0 {
        return Err(Error::NoSpectralGap {
            modulus: s.lambda2().abs(),
        });
    }
    let proj = s.projections(y.values());
    let lambdas = s.eigenvalues();
    let m = s.state_count().saturating_sub(1);
    let contributions = par::map_range(m, |k| {
        let idx = k + 1;
        let lambda = lambdas[idx];
        let projection_sq = proj[idx] * proj[idx];
        let g = ds.g_unchecked(lambda);
        Contribution {
            ell: idx + 1,
            lambda,
            projection_sq,
            g,
            product: projection_sq * g,
        }
    });
    let var_rds = contributions
        .iter()
        .map(|c| c.product)
        .sum::<f64>()
        .max(0.0);
    let sigma2: f64 = contributions.iter().map(|c| c.projection_sq).sum();
    let n = ds.n;
    let scale = y.values().iter().map(|v| v * v).sum::<f64>().max(1.0);
    let defined = sigma2 > CONSTANT_FEATURE * scale;
    let design_effect = defined.then(|| n as f64 * var_rds / sigma2);
    let rho2 = (defined && m > 0).then(|| contributions[0].projection_sq / sigma2);
    let mut report = VarianceReport {
        n,
        lambda2: s.lambda2(),
        contributions,
        var_rds,
        sigma2,
        var_iid: sigma2 / n as f64,
        design_effect,
        rho2,
        de_lower: None,
        de_upper: None,
    };
    if let Ok((lo, hi)) = de_bounds(&report, ds) {
        report.de_lower = Some(lo);
        report.de_upper = Some(hi);
    }
    Ok(report)
}

/// `(ρ² n𝔾(λ₂), n𝔾(λ₂))`. Only defined for `λ₂ > 0` and a nonconstant
/// feature.
pub fn de_bounds(report: &VarianceReport, ds: &DistanceSpectrum) -> Result<(f64, f64)> {
    if !(report.lambda2 > 0.0) {
        return Err(Error::Domain(format!(
            "bounds need λ₂ > 0, got {}",
            report.lambda2
        )));
    }
    let rho2 = report
        .rho2
        .ok_or_else(|| Error::Domain("feature is constant: design effect undefined".into()))?;
    let upper = ds.n as f64 * ds.g_unchecked(report.lambda2);
    Ok((rho2 * upper, upper))
}

/// `Cov(Y_σ, Y_τ)` for two tree nodes at distance `d`:
/// `Σ_{ℓ≥2} λ_ℓ^d ⟨y, f_ℓ⟩²_π`.
pub fn cov_pair(s: &SpectralKernel, y: &NodeFeature, d: u64) -> Result<f64> {
    y.check_len(s.state_count())?;
    let proj = s.projections(y.values());
    Ok(s.eigenvalues()
        .iter()
        .zip(&proj)
        .skip(1)
        .map(|(&l, &c)| pow_u64(l, d) * c * c)
        .sum())
}

fn pow_u64(x: f64, d: u64) -> f64 {
    if d <= i32::MAX as u64 {
        x.powi(d as i32)
    } else {
        x.powf(d as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaEstimate {
    pub value: f64,
    /// The raw ratio fell outside `(-1, 1)` and was pulled back inside.
    pub clamped: bool,
}

const CLAMP: f64 = 1.0 - 1e-9;

fn plain_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Lag-one autocorrelation over the tree's parent-child edges:
/// `Σ (Y_parent − Ȳ)(Y_child − Ȳ) / (n_edges σ̂²)`, with `σ̂²` the plain
/// (divide by n) variance of all observations.
pub fn autocorr_lambda_estimate(ws: &WalkSample) -> Result<LambdaEstimate> {
    if ws.y_values.len() != ws.tree.len() {
        return Err(Error::validation("sample and tree sizes differ"));
    }
    if ws.tree.len() < 2 {
        return Err(Error::validation(
            "autocorrelation needs at least two nodes",
        ));
    }
    let (mean, var) = plain_variance(&ws.y_values);
    if var <= 0.0 {
        return Err(Error::validation("observed values are constant"));
    }
    let mut num = 0.0;
    let mut edges = 0usize;
    for (p, c) in ws.tree.edges() {
        num += (ws.y_values[p] - mean) * (ws.y_values[c] - mean);
        edges += 1;
    }
    if edges == 0 {
        return Err(Error::validation("tree has no edges"));
    }
    let raw = num / (edges as f64 * var);
    let value = raw.clamp(-CLAMP, CLAMP);
    Ok(LambdaEstimate {
        value,
        clamped: value != raw,
    })
}

/// `σ̂² 𝔾(λ̂)`, the variance of the mean if `y − μ` were an eigenfunction.
pub fn plug_in_variance_leading_mode(ws: &WalkSample, ds: &DistanceSpectrum) -> Result<f64> {
    let lambda = autocorr_lambda_estimate(ws)?;
    let (_, var) = plain_variance(&ws.y_values);
    Ok(var * ds.g_unchecked(lambda.value))
}

/// Block-level plug-in variance
/// `Σ_{ℓ≥2} ⟨ŷ, f̂_ℓ⟩²_π̂ 𝔾(λ̂_ℓ) + σ̂²/n` from observed block labels.
///
/// `B̂` comes from parent-child block pairs counted in both directions, so
/// it is reversible with respect to the endpoint block frequencies. `ŷ` is
/// the per-block mean of `Y` and `σ̂²` the pooled within-block variance
/// with denominator `n − K`.
pub fn sbm_plug_in_variance(
    labels: &[usize],
    y_values: &[f64],
    f: &ReferralForest,
    k: usize,
) -> Result<f64> {
    let n = f.len();
    if labels.len() != n || y_values.len() != n {
        return Err(Error::validation(format!(
            "{} labels and {} values for a tree of {n} nodes",
            labels.len(),
            y_values.len()
        )));
    }
    if k < 2 {
        return Err(Error::validation("need at least two blocks"));
    }
    if let Some(&b) = labels.iter().find(|&&b| b >= k) {
        return Err(Error::validation(format!(
            "block label {b} not below K = {k}"
        )));
    }
    if n <= k {
        return Err(Error::validation(format!(
            "pooled variance needs more than K = {k} observations, got {n}"
        )));
    }
    let mut sums = vec![0.0; k];
    let mut sizes = vec![0usize; k];
    for (&b, &y) in labels.iter().zip(y_values) {
        sums[b] += y;
        sizes[b] += 1;
    }
    if let Some(b) = sizes.iter().position(|&c| c == 0) {
        return Err(Error::validation(format!("block {b} never observed")));
    }
    let y_hat: Vec<f64> = sums
        .iter()
        .zip(&sizes)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let within: f64 = labels
        .iter()
        .zip(y_values)
        .map(|(&b, &y)| (y - y_hat[b]).powi(2))
        .sum();
    let sigma2_within = within / (n - k) as f64;

    let mut counts = nalgebra::DMatrix::<f64>::zeros(k, k);
    let mut edges = 0usize;
    for (p, c) in f.edges() {
        counts[(labels[p], labels[c])] += 1.0;
        counts[(labels[c], labels[p])] += 1.0;
        edges += 1;
    }
    if edges == 0 {
        return Err(Error::validation("tree has no edges"));
    }
    if !block_graph_connected(&counts) {
        return Err(Error::validation(
            "estimated block transition matrix is reducible",
        ));
    }
    let row_sums: Vec<f64> = (0..k).map(|u| counts.row(u).sum()).collect();
    let total: f64 = row_sums.iter().sum();
    let mut b_hat = counts.clone();
    for u in 0..k {
        for v in 0..k {
            b_hat[(u, v)] /= row_sums[u];
        }
    }
    let pi_hat: Vec<f64> = row_sums.iter().map(|r| r / total).collect();
    let kernel = kernel_with_stationary(&b_hat, pi_hat, 1e-10)?;
    let s = spectral_decompose(&kernel)?;
    let ds = distance_spectrum(f);
    let proj = s.projections(&y_hat);
    let between: f64 = s
        .eigenvalues()
        .iter()
        .zip(&proj)
        .skip(1)
        .map(|(&l, &c)| c * c * ds.g_unchecked(l))
        .sum();
    Ok(between + sigma2_within / n as f64)
}

fn block_graph_connected(counts: &nalgebra::DMatrix<f64>) -> bool {
    let k = counts.nrows();
    let mut seen = vec![false; k];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for v in 0..k {
            if counts[(u, v)] > 0.0 && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen.into_iter().all(|s| s)
}
