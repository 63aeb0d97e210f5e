//! Stochastic blockmodel graphs and their limiting block-level referral
//! kernel.

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::markov::{kernel_with_stationary, Kernel};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    /// Share of nodes in each block.
    pub block_probs: Vec<f64>,
    /// Symmetric matrix of connection probabilities between blocks.
    pub psi: Vec<Vec<f64>>,
    pub n: usize,
}

impl SbmSpec {
    /// Two equal blocks with within-block probability `p + r` and
    /// between-block probability `r`.
    pub fn two_block(n: usize, p: f64, r: f64) -> Self {
        SbmSpec {
            block_probs: vec![0.5, 0.5],
            psi: vec![vec![p + r, r], vec![r, p + r]],
            n,
        }
    }

    pub fn block_count(&self) -> usize {
        self.block_probs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.block_count();
        if k == 0 {
            return Err(Error::validation("blockmodel needs at least one block"));
        }
        if self.psi.len() != k || self.psi.iter().any(|row| row.len() != k) {
            return Err(Error::validation(format!("psi must be {k}x{k}")));
        }
        if self
            .block_probs
            .iter()
            .any(|p| !(p.is_finite() && *p >= 0.0))
        {
            return Err(Error::validation("block probabilities must be nonnegative"));
        }
        let total: f64 = self.block_probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "block probabilities sum to {total}, not 1"
            )));
        }
        for u in 0..k {
            for v in 0..k {
                let x = self.psi[u][v];
                if !(0.0..=1.0).contains(&x) {
                    return Err(Error::validation(format!(
                        "psi[{u}][{v}] = {x} outside [0, 1]"
                    )));
                }
                if (x - self.psi[v][u]).abs() > 1e-12 {
                    return Err(Error::validation(format!(
                        "psi is not symmetric at ({u}, {v})"
                    )));
                }
            }
        }
        if self.n < k {
            return Err(Error::validation(format!(
                "population {} is smaller than the number of blocks {k}",
                self.n
            )));
        }
        Ok(())
    }

    /// Fixed block sizes `round(π_k N)`, with the rounding remainder
    /// assigned to the largest block.
    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes: Vec<i64> = self
            .block_probs
            .iter()
            .map(|p| (p * self.n as f64).round() as i64)
            .collect();
        let remainder = self.n as i64 - sizes.iter().sum::<i64>();
        let largest = (0..sizes.len())
            .max_by(|&a, &b| {
                self.block_probs[a]
                    .total_cmp(&self.block_probs[b])
                    .then(b.cmp(&a))
            })
            .unwrap_or(0);
        sizes[largest] += remainder;
        sizes.into_iter().map(|s| s.max(0) as usize).collect()
    }
}

fn geometric_skip<R: Rng + ?Sized>(rng: &mut R, log_q: f64) -> u64 {
    if log_q == 0.0 {
        return u64::MAX;
    }
    if log_q == f64::NEG_INFINITY {
        return 0;
    }
    let u: f64 = rng.random();
    let skip = ((1.0 - u).ln() / log_q).floor();
    if skip >= u64::MAX as f64 {
        u64::MAX
    } else {
        skip as u64
    }
}

/// Samples a graph and its block labels.
///
/// Nodes `0..size_0` form block 0, the next `size_1` block 1, and so on.
/// Every unordered pair is an edge independently with probability
/// `psi[label(i)][label(j)]`; pairs are visited with geometric skips so
/// the cost is proportional to the number of edges. No self-loops.
pub fn sample_sbm(spec: &SbmSpec, seed: u64) -> Result<(Graph, Vec<usize>)> {
    spec.validate()?;
    let sizes = spec.block_sizes();
    let mut starts = Vec::with_capacity(sizes.len());
    let mut labels = Vec::with_capacity(spec.n);
    for (b, &s) in sizes.iter().enumerate() {
        starts.push(labels.len());
        labels.extend(std::iter::repeat_n(b, s));
    }
    let mut rng = rng::stream(seed, 0);
    let mut edges = Vec::new();
    let k = sizes.len();
    for a in 0..k {
        for b in a..k {
            let log_q = (1.0 - spec.psi[a][b]).ln();
            let (sa, sb) = (sizes[a] as u64, sizes[b] as u64);
            let total = if a == b {
                sa * sa.saturating_sub(1) / 2
            } else {
                sa * sb
            };
            if total == 0 || spec.psi[a][b] == 0.0 {
                continue;
            }
            if a == b {
                // pairs (v, w) with w < v, enumerated row by row
                let (mut v, mut w): (u64, i128) = (1, -1);
                loop {
                    let skip = geometric_skip(&mut rng, log_q);
                    w += 1 + skip as i128;
                    while v < sa && w >= v as i128 {
                        w -= v as i128;
                        v += 1;
                    }
                    if v >= sa {
                        break;
                    }
                    edges.push((starts[a] + w as usize, starts[a] + v as usize));
                }
            } else {
                let mut idx: i128 = -1;
                loop {
                    let skip = geometric_skip(&mut rng, log_q);
                    idx += 1 + skip as i128;
                    if idx >= total as i128 {
                        break;
                    }
                    let (i, j) = (idx as u64 / sb, idx as u64 % sb);
                    edges.push((starts[a] + i as usize, starts[b] + j as usize));
                }
            }
        }
    }
    Ok((Graph::from_simple_edges(spec.n, &edges), labels))
}

/// Block-level referral kernel `B_uv = π_v Ψ_uv / Σ_w π_w Ψ_uw` with its
/// stationary law `∝ π_u Σ_w π_w Ψ_uw`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockKernel {
    pub b: DMatrix<f64>,
    pub block_pi: Vec<f64>,
}

impl BlockKernel {
    pub fn kernel(&self) -> Result<Kernel> {
        kernel_with_stationary(&self.b, self.block_pi.clone(), 1e-12)
    }
}

pub fn block_transition(spec: &SbmSpec) -> Result<BlockKernel> {
    let k = spec.block_count();
    if spec.psi.len() != k || spec.psi.iter().any(|row| row.len() != k) {
        return Err(Error::validation(format!("psi must be {k}x{k}")));
    }
    let pi = &spec.block_probs;
    let mut b = DMatrix::zeros(k, k);
    let mut mass = vec![0.0; k];
    for u in 0..k {
        let denom: f64 = (0..k).map(|w| pi[w] * spec.psi[u][w]).sum();
        if denom <= 0.0 {
            return Err(Error::validation(format!(
                "block {u} has no expected edges"
            )));
        }
        for v in 0..k {
            b[(u, v)] = pi[v] * spec.psi[u][v] / denom;
        }
        mass[u] = pi[u] * denom;
    }
    let total: f64 = mass.iter().sum();
    let block_pi = mass.iter().map(|m| m / total).collect();
    Ok(BlockKernel { b, block_pi })
}

/// Solves `r N + p N / 2 = degree` and `1 / (1 + 2 r / p) = λ₂` for the
/// two-block model.
pub fn two_block_params(n: usize, expected_degree: f64, lambda2: f64) -> Result<(f64, f64)> {
    if !(lambda2 > 0.0 && lambda2 < 1.0) {
        return Err(Error::Domain(format!(
            "lambda_2 = {lambda2} must lie in (0, 1); at 1 the blocks never connect"
        )));
    }
    if !(expected_degree > 0.0) || n == 0 {
        return Err(Error::Domain(
            "expected degree and size must be positive".into(),
        ));
    }
    let ratio = (1.0 / lambda2 - 1.0) / 2.0;
    let p = expected_degree / (n as f64 * (ratio + 0.5));
    let r = ratio * p;
    if p + r > 1.0 {
        return Err(Error::Domain(format!(
            "within-block probability p + r = {} exceeds 1",
            p + r
        )));
    }
    Ok((p, r))
}
