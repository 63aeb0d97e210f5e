//! Reversible transition kernels and their π-orthonormal spectral
//! decomposition.
//!
//! A reversible kernel `P` with stationary law `π` is similar to the
//! symmetric matrix `S_ij = sqrt(π_i / π_j) P_ij`. Diagonalising `S`
//! gives real eigenvalues and orthonormal vectors `v`, and
//! `f(i) = v(i) / sqrt(π_i)` are then eigenfunctions of `P` that are
//! orthonormal in the inner product `Σ_i f(i) g(i) π_i`. Everything
//! downstream (exact variance, covariances, t-step probabilities) is
//! expressed in that basis.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeFeature};

/// Largest state space for which a dense decomposition is attempted.
pub const DENSE_CAP: usize = 5000;

/// Numerical tolerances for kernel construction and decomposition checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub reversibility: f64,
    pub orthonormality: f64,
    /// Relative per-coordinate residual of `P f = λ f`.
    pub eigen_residual: f64,
    /// Smallest admissible spectral gap `1 - |λ_2|`.
    pub gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            reversibility: 1e-10,
            orthonormality: 1e-10,
            eigen_residual: 1e-8,
            gap: 1e-10,
        }
    }
}

/// A row-stochastic transition kernel stored sparsely by row, together
/// with its stationary distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    probs: Vec<f64>,
    // running sums within each row, for inverse-CDF sampling
    cumulative: Vec<f64>,
    pi: Vec<f64>,
    pi_cumulative: Vec<f64>,
}

impl Kernel {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>, pi: Vec<f64>) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        let mut cumulative = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let mut acc = 0.0;
            for (j, p) in row {
                if p > 0.0 {
                    acc += p;
                    cols.push(j);
                    probs.push(p);
                    cumulative.push(acc);
                }
            }
            row_ptr.push(cols.len());
        }
        let pi_cumulative = pi
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Kernel {
            row_ptr,
            cols,
            probs,
            cumulative,
            pi,
            pi_cumulative,
        }
    }

    pub fn state_count(&self) -> usize {
        self.pi.len()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// Nonzero entries of row `i` as `(column, probability)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()]
            .iter()
            .copied()
            .zip(self.probs[range].iter().copied())
    }

    pub fn prob(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&j) {
            Ok(k) => self.probs[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.state_count();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, p) in self.row(i) {
                m[(i, j)] = p;
            }
        }
        m
    }

    /// Row vector times kernel: `(x P)_j = Σ_i x_i P_ij`.
    pub fn left_apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (i, &xi) in x.iter().enumerate() {
            if xi != 0.0 {
                for (j, p) in self.row(i) {
                    out[j] += xi * p;
                }
            }
        }
        out
    }

    /// Kernel times column vector: `(P f)_i = Σ_j P_ij f_j`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (0..self.state_count())
            .map(|i| self.row(i).map(|(j, p)| p * f[j]).sum())
            .collect()
    }

    /// Largest `|π_i P_ij - π_j P_ji|` over all pairs.
    pub fn reversibility_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.state_count() {
            for (j, p) in self.row(i) {
                let v = (self.pi[i] * p - self.pi[j] * self.prob(j, i)).abs();
                worst = worst.max(v);
            }
        }
        worst
    }

    /// Draws the successor of state `i`.
    pub fn step<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        let cum = &self.cumulative[range.clone()];
        let total = *cum.last().expect("row has no outgoing mass");
        let u = rng.random::<f64>() * total;
        let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        self.cols[range.start + k]
    }

    /// Draws a state from the stationary distribution.
    pub fn sample_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.pi_cumulative.last().expect("empty kernel");
        let u = rng.random::<f64>() * total;
        self.pi_cumulative
            .partition_point(|&c| c <= u)
            .min(self.pi.len() - 1)
    }
}

/// Simple random walk on `g`: `P_ij = w_ij / deg(i)`, `π ∝ deg`.
pub fn srw_kernel(g: &Graph) -> Result<Kernel> {
    let n = g.node_count();
    if n == 0 {
        return Err(Error::validation("graph has no nodes"));
    }
    if let Some(i) = (0..n).find(|&i| g.degree(i) <= 0.0) {
        return Err(Error::validation(format!(
            "node {} is isolated",
            g.labels()[i]
        )));
    }
    if !g.is_connected() {
        return Err(Error::Disconnected);
    }
    let total: f64 = g.degrees().iter().sum();
    let pi = g.degrees().iter().map(|d| d / total).collect();
    let rows = (0..n)
        .map(|i| {
            let d = g.degree(i);
            g.neighbors(i).iter().map(|&(j, w)| (j, w / d)).collect()
        })
        .collect();
    let k = Kernel::from_rows(rows, pi);
    let violation = k.reversibility_violation();
    if violation > Tolerances::default().reversibility {
        return Err(Error::NotReversible {
            max_violation: violation,
        });
    }
    Ok(k)
}

/// Wraps a transition matrix whose stationary law is already known, checking
/// row sums and detailed balance against `tol`.
pub fn kernel_with_stationary(p: &DMatrix<f64>, pi: Vec<f64>, tol: f64) -> Result<Kernel> {
    let n = p.nrows();
    if p.ncols() != n || pi.len() != n || n == 0 {
        return Err(Error::validation(
            "transition matrix and stationary law disagree in size",
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for i in 0..n {
        let row: Vec<(usize, f64)> = (0..n)
            .map(|j| (j, p[(i, j)]))
            .filter(|&(_, v)| v > 0.0)
            .collect();
        let sum: f64 = row.iter().map(|&(_, v)| v).sum();
        if (sum - 1.0).abs() > tol {
            return Err(Error::validation(format!("row {i} sums to {sum}, not 1")));
        }
        rows.push(row);
    }
    let k = Kernel::from_rows(rows, pi);
    let violation = k.reversibility_violation();
    if violation > tol {
        return Err(Error::NotReversible {
            max_violation: violation,
        });
    }
    Ok(k)
}

fn strongly_connected(n: usize, edges: &[(usize, usize)]) -> bool {
    let reach = |forward: bool| {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in edges {
            if forward {
                adj[i].push(j);
            } else {
                adj[j].push(i);
            }
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Wraps a user-supplied transition matrix.
///
/// The stationary law is found by power iteration on the lazy chain
/// `(I + P) / 2`, which shares `π` with `P` but is aperiodic, until
/// `‖π P - π‖₁ < 1e-12`. Rows must sum to one within `tol`, the chain must
/// be irreducible, and detailed balance must hold within `tol`.
pub fn custom_kernel(p: &DMatrix<f64>, tol: f64) -> Result<Kernel> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::validation(format!(
            "transition matrix must be square and nonempty, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let mut rows = Vec::with_capacity(n);
    let mut support = Vec::new();
    for i in 0..n {
        let mut row = Vec::new();
        let mut sum = 0.0;
        for j in 0..n {
            let v = p[(i, j)];
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::validation(format!(
                    "entry ({i}, {j}) = {v} is not a probability"
                )));
            }
            if v > 0.0 {
                row.push((j, v));
                support.push((i, j));
                sum += v;
            }
        }
        if (sum - 1.0).abs() > tol {
            return Err(Error::validation(format!("row {i} sums to {sum}, not 1")));
        }
        rows.push(row);
    }
    if !strongly_connected(n, &support) {
        return Err(Error::validation(
            "transition matrix is reducible: stationary law is not unique",
        ));
    }

    let provisional = Kernel::from_rows(rows.clone(), vec![1.0 / n as f64; n]);
    let mut pi = vec![1.0 / n as f64; n];
    // Iterate past the 1e-12 residual target until the residual stops
    // improving, so that π itself is accurate to near machine precision.
    let mut best = f64::INFINITY;
    let mut stalled = 0;
    for _ in 0..1_000_000 {
        let moved = provisional.left_apply(&pi);
        let residual: f64 = moved.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
        if residual < best {
            best = residual;
            stalled = 0;
        } else {
            stalled += 1;
        }
        if residual == 0.0 || (best < 1e-12 && stalled >= 50) {
            break;
        }
        for (x, m) in pi.iter_mut().zip(&moved) {
            *x = 0.5 * (*x + m);
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|x| *x /= s);
    }
    if best >= 1e-12 {
        return Err(Error::Numeric(
            "power iteration for the stationary law did not converge".into(),
        ));
    }
    let k = Kernel::from_rows(rows, pi);
    let violation = k.reversibility_violation();
    if violation > tol {
        return Err(Error::NotReversible {
            max_violation: violation,
        });
    }
    Ok(k)
}

/// A kernel together with its full spectrum.
///
/// Index 0 holds the trivial pair `λ = 1`, `f = 1`. The remaining pairs are
/// ordered by `|λ|` descending, ties broken by signed `λ` descending and
/// then by solver order.
#[derive(Debug, Clone)]
pub struct SpectralKernel {
    kernel: Kernel,
    eigenvalues: Vec<f64>,
    // column-major: eigenfunction k occupies [k*n, (k+1)*n)
    eigenfunctions: Vec<f64>,
}

impl SpectralKernel {
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn state_count(&self) -> usize {
        self.kernel.state_count()
    }

    pub fn pi(&self) -> &[f64] {
        self.kernel.pi()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Second eigenvalue in modulus order.
    pub fn lambda2(&self) -> f64 {
        self.eigenvalues.get(1).copied().unwrap_or(0.0)
    }

    pub fn eigenfunction(&self, index: usize) -> &[f64] {
        let n = self.state_count();
        &self.eigenfunctions[index * n..(index + 1) * n]
    }

    /// `⟨y, f_k⟩_π` for every index `k`.
    pub fn projections(&self, y: &[f64]) -> Vec<f64> {
        let pi = self.pi();
        let weighted: Vec<f64> = y.iter().zip(pi).map(|(a, b)| a * b).collect();
        (0..self.state_count())
            .map(|k| {
                self.eigenfunction(k)
                    .iter()
                    .zip(&weighted)
                    .map(|(f, w)| f * w)
                    .sum()
            })
            .collect()
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.state_count();
        let pi = self.pi();
        let mut worst = 0.0f64;
        for a in 0..n {
            let fa: Vec<f64> = self
                .eigenfunction(a)
                .iter()
                .zip(pi)
                .map(|(f, p)| f * p)
                .collect();
            for b in a..n {
                let dot: f64 = fa
                    .iter()
                    .zip(self.eigenfunction(b))
                    .map(|(x, y)| x * y)
                    .sum();
                let target = if a == b { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Largest relative per-coordinate residual of `P f = λ f`, scaled by
    /// the sup norm of `f`.
    pub fn eigen_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for k in 0..self.state_count() {
            let f = self.eigenfunction(k);
            let pf = self.kernel.apply(f);
            let scale = f
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(f64::MIN_POSITIVE);
            for (a, b) in pf.iter().zip(f) {
                worst = worst.max((a - self.eigenvalues[k] * b).abs() / scale);
            }
        }
        worst
    }
}

/// Full dense decomposition of a reversible kernel through its symmetric
/// conjugate.
pub fn spectral_decompose(k: &Kernel) -> Result<SpectralKernel> {
    spectral_decompose_with(k, Tolerances::default())
}

pub fn spectral_decompose_with(k: &Kernel, tol: Tolerances) -> Result<SpectralKernel> {
    let n = k.state_count();
    if n > DENSE_CAP {
        return Err(Error::TooLarge { n, cap: DENSE_CAP });
    }
    let pi = k.pi();
    let sqrt_pi: Vec<f64> = pi.iter().map(|p| p.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for (j, p) in k.row(i) {
            s[(i, j)] = sqrt_pi[i] / sqrt_pi[j] * p;
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let eig = SymmetricEigen::new(s);

    let mut order: Vec<usize> = (0..n).collect();
    let vals = &eig.eigenvalues;
    order.sort_by(|&a, &b| {
        vals[b]
            .abs()
            .total_cmp(&vals[a].abs())
            .then(vals[b].total_cmp(&vals[a]))
            .then(a.cmp(&b))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenfunctions = Vec::with_capacity(n * n);
    for (rank, &col) in order.iter().enumerate() {
        if rank == 0 {
            eigenvalues.push(1.0);
            eigenfunctions.extend(std::iter::repeat_n(1.0, n));
            continue;
        }
        let mut f: Vec<f64> = (0..n)
            .map(|i| eig.eigenvectors[(i, col)] / sqrt_pi[i])
            .collect();
        let norm: f64 = f.iter().zip(pi).map(|(x, p)| x * x * p).sum::<f64>().sqrt();
        f.iter_mut().for_each(|x| *x /= norm);
        let peak = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = f.iter().find(|v| v.abs() > 1e-8 * peak) {
            if *first < 0.0 {
                f.iter_mut().for_each(|x| *x = -*x);
            }
        }
        eigenvalues.push(vals[col].clamp(-1.0, 1.0));
        eigenfunctions.extend(f);
    }

    if n > 1 && eigenvalues[1].abs() >= 1.0 - tol.gap {
        return Err(Error::NoSpectralGap {
            modulus: eigenvalues[1].abs(),
        });
    }
    Ok(SpectralKernel {
        kernel: k.clone(),
        eigenvalues,
        eigenfunctions,
    })
}

/// π-weighted inner product `Σ_i f(i) g(i) π_i`.
pub fn inner_product_pi(f: &[f64], g: &[f64], pi: &[f64]) -> Result<f64> {
    if f.len() != g.len() || f.len() != pi.len() {
        return Err(Error::validation(format!(
            "length mismatch: {} vs {} vs {}",
            f.len(),
            g.len(),
            pi.len()
        )));
    }
    Ok(f.iter().zip(g).zip(pi).map(|((a, b), p)| a * b * p).sum())
}

/// `P^t_ij` from the spectral expansion
/// `π_j (1 + Σ_{k≥1} λ_k^t f_k(i) f_k(j))`.
pub fn transition_power_prob(s: &SpectralKernel, i: usize, j: usize, t: u32) -> f64 {
    if t == 0 {
        return if i == j { 1.0 } else { 0.0 };
    }
    let tail: f64 = (1..s.state_count())
        .map(|k| {
            let f = s.eigenfunction(k);
            s.eigenvalues[k].powi(t as i32) * f[i] * f[j]
        })
        .sum();
    s.pi()[j] * (1.0 + tail)
}

/// `Var_π(Y_0) = Σ_{k≥1} ⟨y, f_k⟩²_π`.
pub fn stationary_variance(s: &SpectralKernel, y: &[f64]) -> f64 {
    s.projections(y).iter().skip(1).map(|c| c * c).sum()
}

/// Correlation `⟨y, f_k⟩_π / σ` between a feature and eigenfunction
/// `index` (≥ 1), with `σ² = Var_π(Y_0)`.
pub fn rho_correlation(s: &SpectralKernel, y: &NodeFeature, index: usize) -> Result<f64> {
    y.check_len(s.state_count())?;
    if index == 0 || index >= s.state_count() {
        return Err(Error::Domain(format!(
            "eigen index {index} outside 1..{}",
            s.state_count()
        )));
    }
    let proj = s.projections(y.values());
    let sigma2: f64 = proj.iter().skip(1).map(|c| c * c).sum();
    let scale: f64 = y.values().iter().map(|v| v * v).sum::<f64>().max(1.0);
    if sigma2 <= 1e-24 * scale {
        return Err(Error::validation(format!(
            "feature `{}` is constant under π: correlation undefined",
            y.name
        )));
    }
    Ok(proj[index] / sigma2.sqrt())
}

/// Second eigenvalue of a large reversible kernel by power iteration on the
/// symmetric conjugate, deflated against the stationary direction.
///
/// Converges to the eigenvalue of largest modulus below 1; when two such
/// eigenvalues of opposite sign tie the returned Rayleigh quotient is not
/// meaningful.
pub fn lambda2_power<R: Rng + ?Sized>(k: &Kernel, rng: &mut R, tol: f64, max_iter: usize) -> f64 {
    let n = k.state_count();
    let sqrt_pi: Vec<f64> = k.pi().iter().map(|p| p.sqrt()).collect();
    let apply = |x: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                k.row(i)
                    .map(|(j, p)| sqrt_pi[i] / sqrt_pi[j] * p * x[j])
                    .sum()
            })
            .collect()
    };
    let deflate = |x: &mut Vec<f64>| {
        let c: f64 = x.iter().zip(&sqrt_pi).map(|(a, b)| a * b).sum();
        x.iter_mut().zip(&sqrt_pi).for_each(|(a, b)| *a -= c * b);
        let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        x.iter_mut().for_each(|a| *a /= norm);
    };
    let mut x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
    deflate(&mut x);
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let mut y = apply(&x);
        lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let residual = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - lambda * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual < tol {
            break;
        }
        deflate(&mut y);
        x = y;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures::{complete, path};
    use approx::assert_abs_diff_eq;
    use nalgebra::dmatrix;

    fn two_state(a: f64, b: f64) -> Kernel {
        custom_kernel(&dmatrix![1.0 - a, a; b, 1.0 - b], 1e-12).unwrap()
    }

    #[test]
    fn srw_on_path() {
        let k = srw_kernel(&path(3)).unwrap();
        assert_eq!(k.prob(1, 0), 0.5);
        assert_eq!(k.prob(1, 1), 0.0);
        assert_eq!(k.prob(1, 2), 0.5);
        assert_eq!(k.pi(), &[0.25, 0.5, 0.25]);
    }

    #[test]
    fn srw_on_triangle() {
        let k = srw_kernel(&complete(3)).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(k.pi()[i], 1.0 / 3.0, epsilon = 1e-15);
            for j in 0..3 {
                assert_eq!(k.prob(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn srw_weighted() {
        let g = Graph::from_edges(vec![0, 1, 2], &[(0, 1, 3.0), (1, 2, 1.0)]).unwrap();
        let k = srw_kernel(&g).unwrap();
        assert_eq!(k.prob(1, 0), 0.75);
        assert_abs_diff_eq!(k.pi()[0], 3.0 / 8.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.pi()[1], 4.0 / 8.0, epsilon = 1e-15);
        assert_abs_diff_eq!(k.pi()[2], 1.0 / 8.0, epsilon = 1e-15);
    }

    #[test]
    fn srw_rejects_disconnected_and_isolated() {
        let g = Graph::from_simple_edges(4, &[(0, 1), (2, 3)]);
        assert!(matches!(srw_kernel(&g), Err(Error::Disconnected)));
        let g = Graph::from_simple_edges(3, &[(0, 1)]);
        assert!(matches!(srw_kernel(&g), Err(Error::Validation(_))));
    }

    #[test]
    fn two_state_stationary() {
        let k = two_state(0.3, 0.1);
        assert_abs_diff_eq!(k.pi()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(k.pi()[1], 0.75, epsilon = 1e-12);
    }

    #[test]
    fn custom_kernel_rejections() {
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            custom_kernel(&eye, 1e-12),
            Err(Error::Validation(_))
        ));
        let bad_rows = dmatrix![0.5, 0.4; 0.5, 0.5];
        assert!(custom_kernel(&bad_rows, 1e-12).is_err());
        // a 3-cycle is irreducible but not reversible
        let cycle = dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; 1.0, 0.0, 0.0];
        match custom_kernel(&cycle, 1e-10) {
            Err(Error::NotReversible { max_violation }) => assert!(max_violation > 0.3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn doubly_stochastic_is_uniform() {
        let p = dmatrix![0.2, 0.5, 0.3; 0.5, 0.1, 0.4; 0.3, 0.4, 0.3];
        let k = custom_kernel(&p, 1e-12).unwrap();
        for &x in k.pi() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_state_spectrum() {
        let s = spectral_decompose(&two_state(0.3, 0.1)).unwrap();
        assert_eq!(s.eigenvalues()[0], 1.0);
        assert_abs_diff_eq!(s.lambda2(), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn complete_graph_spectrum() {
        for n in [3usize, 5, 8] {
            let s = spectral_decompose(&srw_kernel(&complete(n)).unwrap()).unwrap();
            for &l in &s.eigenvalues()[1..] {
                assert_abs_diff_eq!(l, -1.0 / (n as f64 - 1.0), epsilon = 1e-12);
            }
            assert!(s.orthonormality_error() < 1e-10);
        }
    }

    #[test]
    fn bipartite_has_no_gap() {
        let k = srw_kernel(&path(4)).unwrap();
        assert!(matches!(
            spectral_decompose(&k),
            Err(Error::NoSpectralGap { .. })
        ));
    }

    #[test]
    fn inner_product_cases() {
        let pi = [0.25, 0.75];
        assert_eq!(
            inner_product_pi(&[1.0, 1.0], &[1.0, 1.0], &pi).unwrap(),
            1.0
        );
        assert_eq!(
            inner_product_pi(&[1.0, -1.0], &[1.0, -1.0], &pi).unwrap(),
            1.0
        );
        assert!(inner_product_pi(&[1.0], &[1.0, 2.0], &pi).is_err());
    }

    #[test]
    fn transition_power_small_cases() {
        // triangle with a pendant so the walk is aperiodic
        let g = crate::graph::fixtures::triangle_with_pendant();
        let s = spectral_decompose(&srw_kernel(&g).unwrap()).unwrap();
        assert_eq!(transition_power_prob(&s, 2, 2, 0), 1.0);
        assert_eq!(transition_power_prob(&s, 2, 1, 0), 0.0);
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(
                    transition_power_prob(&s, i, j, 1),
                    s.kernel().prob(i, j),
                    epsilon = 1e-10
                );
            }
        }
        // 3 -> 2 -> {0,1,3} each w.p. 1/3
        assert_abs_diff_eq!(
            transition_power_prob(&s, 3, 0, 2),
            1.0 / 3.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn path_two_step_probability() {
        // the path is periodic, so check P^2 directly against the 0 -> 1 -> 2 route
        let k = srw_kernel(&path(3)).unwrap();
        let p = k.to_dense();
        assert_eq!((&p * &p)[(0, 2)], 0.5);
    }

    #[test]
    fn rho_for_example_one_feature() {
        let g = crate::graph::fixtures::triangle_with_pendant();
        let s = spectral_decompose(&srw_kernel(&g).unwrap()).unwrap();
        let f2 = s.eigenfunction(1);
        let y = NodeFeature::new("y", f2.iter().map(|v| 3.0 + 2.0 * v).collect()).unwrap();
        assert_abs_diff_eq!(rho_correlation(&s, &y, 1).unwrap(), 1.0, epsilon = 1e-12);
        for idx in 2..4 {
            assert_abs_diff_eq!(rho_correlation(&s, &y, idx).unwrap(), 0.0, epsilon = 1e-12);
        }
        let y3 = NodeFeature::new("f3", s.eigenfunction(2).to_vec()).unwrap();
        assert_abs_diff_eq!(rho_correlation(&s, &y3, 1).unwrap(), 0.0, epsilon = 1e-12);
        let c = NodeFeature::new("c", vec![2.0; 4]).unwrap();
        assert!(rho_correlation(&s, &c, 1).is_err());
    }

    #[test]
    fn sampling_follows_rows() {
        let k = two_state(0.3, 0.1);
        let mut rng = crate::rng::stream(1, 0);
        let trials = 200_000;
        let moved = (0..trials).filter(|_| k.step(0, &mut rng) == 1).count();
        let rate = moved as f64 / trials as f64;
        assert!((rate - 0.3).abs() < 4.0 * (0.3f64 * 0.7 / trials as f64).sqrt());
        let ones = (0..trials)
            .filter(|_| k.sample_stationary(&mut rng) == 1)
            .count();
        let rate = ones as f64 / trials as f64;
        assert!((rate - 0.75).abs() < 4.0 * (0.75f64 * 0.25 / trials as f64).sqrt());
    }

    #[test]
    fn power_iteration_matches_dense() {
        let g = crate::graph::fixtures::triangle_with_pendant();
        let k = srw_kernel(&g).unwrap();
        let s = spectral_decompose(&k).unwrap();
        let mut rng = crate::rng::stream(3, 0);
        let l = lambda2_power(&k, &mut rng, 1e-12, 100_000);
        assert_abs_diff_eq!(l, s.lambda2(), epsilon = 1e-8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        /// Random connected, non-bipartite weighted graphs: a random
        /// spanning tree, a triangle on nodes 0..3, and extra edges.
        pub(crate) fn arb_connected_graph(max_n: usize) -> impl Strategy<Value = Graph> {
            (3..=max_n).prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.0f64..1.0, n),
                    proptest::collection::vec((0..n, 0..n, 1u32..5), 0..2 * n),
                )
                    .prop_map(move |(parents, extra)| {
                        let mut edges = vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)];
                        for (i, u) in parents.iter().enumerate().skip(3) {
                            let p = (u * i as f64) as usize;
                            edges.push((p.min(i - 1), i, 1.0));
                        }
                        for (u, v, w) in extra {
                            edges.push((u, v, w as f64));
                        }
                        Graph::from_edges((0..n as u64).collect(), &edges).unwrap()
                    })
            })
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn decomposition_contracts(g in arb_connected_graph(30), ys in proptest::collection::vec(-5.0f64..5.0, 30)) {
                let k = srw_kernel(&g).unwrap();
                let s = spectral_decompose(&k).unwrap();
                let n = g.node_count();
                prop_assert!(s.orthonormality_error() < 1e-10);
                prop_assert!(s.eigen_residual() < 1e-8);
                let lams = s.eigenvalues();
                prop_assert_eq!(lams[0], 1.0);
                for w in lams.windows(2) {
                    prop_assert!(w[0].abs() >= w[1].abs());
                }
                prop_assert!(lams.iter().all(|l| l.abs() <= 1.0 + 1e-12));
                // reconstruction of P
                for i in 0..n {
                    for j in 0..n {
                        let rec = transition_power_prob(&s, i, j, 1);
                        prop_assert!((rec - k.prob(i, j)).abs() < 1e-8);
                    }
                }
                // total variance identity
                let y = &ys[..n];
                let pi = k.pi();
                let m: f64 = y.iter().zip(pi).map(|(a, b)| a * b).sum();
                let direct: f64 = y.iter().zip(pi).map(|(a, b)| a * a * b).sum::<f64>() - m * m;
                prop_assert!((stationary_variance(&s, y) - direct).abs() < 1e-10);
            }

            #[test]
            fn powers_match_matrix_products(g in arb_connected_graph(20), t in 0u32..=20) {
                let k = srw_kernel(&g).unwrap();
                let s = spectral_decompose(&k).unwrap();
                let p = k.to_dense();
                let n = g.node_count();
                let mut pt = DMatrix::<f64>::identity(n, n);
                for _ in 0..t {
                    pt = &pt * &p;
                }
                for i in 0..n {
                    let mut row_sum = 0.0;
                    for j in 0..n {
                        let v = transition_power_prob(&s, i, j, t);
                        row_sum += v;
                        prop_assert!((v - pt[(i, j)]).abs() < 1e-9);
                    }
                    prop_assert!((row_sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
