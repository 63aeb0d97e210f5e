//! Point estimators of the population mean from a tree-indexed sample.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeFeature};
use crate::tree::ReferralForest;

/// The sampled graph nodes and their observed values, indexed by tree node.
#[derive(Debug, Clone)]
pub struct WalkSample {
    pub assignment: Vec<usize>,
    pub y_values: Vec<f64>,
    /// Neighbor counts of the sampled nodes. Empty when no graph is known.
    pub degrees: Vec<f64>,
    /// Edge-weight degrees of the sampled nodes. Empty when no graph is known.
    pub weighted_degrees: Vec<f64>,
    pub tree: Arc<ReferralForest>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegreeKind {
    #[default]
    Unweighted,
    Weighted,
}

impl WalkSample {
    /// Records `y` and, when `g` is given, the degrees at each sampled node.
    pub fn observe(
        tree: Arc<ReferralForest>,
        assignment: Vec<usize>,
        y: &NodeFeature,
        g: Option<&Graph>,
    ) -> Result<Self> {
        if assignment.len() != tree.len() {
            return Err(Error::validation(format!(
                "{} assignments for a tree of {} nodes",
                assignment.len(),
                tree.len()
            )));
        }
        let n_pop = y.len();
        if let Some(&bad) = assignment.iter().find(|&&x| x >= n_pop) {
            return Err(Error::validation(format!(
                "sampled node {bad} outside a population of {n_pop}"
            )));
        }
        if let Some(g) = g {
            y.check_len(g.node_count())?;
        }
        let y_values = assignment.iter().map(|&x| y.values()[x]).collect();
        let (degrees, weighted_degrees) = match g {
            Some(g) => (
                assignment
                    .iter()
                    .map(|&x| g.unweighted_degree(x) as f64)
                    .collect(),
                assignment.iter().map(|&x| g.degree(x)).collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        Ok(WalkSample {
            assignment,
            y_values,
            degrees,
            weighted_degrees,
            tree,
        })
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }
}

fn require_nonempty(ws: &WalkSample) -> Result<()> {
    if ws.is_empty() {
        Err(Error::validation("empty sample"))
    } else {
        Ok(())
    }
}

/// `(1/n) Σ Y_τ`.
pub fn sample_mean(ws: &WalkSample) -> Result<f64> {
    require_nonempty(ws)?;
    Ok(ws.y_values.iter().sum::<f64>() / ws.len() as f64)
}

/// Volz-Heckathorn: `Σ Y_τ / deg(X_τ)` over `Σ 1 / deg(X_τ)`.
pub fn vh_estimator(ws: &WalkSample, kind: DegreeKind) -> Result<f64> {
    require_nonempty(ws)?;
    let deg = match kind {
        DegreeKind::Unweighted => &ws.degrees,
        DegreeKind::Weighted => &ws.weighted_degrees,
    };
    if deg.len() != ws.len() {
        return Err(Error::validation("sample carries no degrees"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (tau, (&y, &d)) in ws.y_values.iter().zip(deg).enumerate() {
        if d <= 0.0 {
            return Err(Error::validation(format!(
                "tree node {tau} sampled graph node {} with zero degree",
                ws.assignment[tau]
            )));
        }
        num += y / d;
        den += 1.0 / d;
    }
    Ok(num / den)
}

/// Idealized Horvitz-Thompson with known stationary law:
/// `(1/n) Σ Y_τ / (π_{X_τ} N)`.
pub fn ht_estimator(ws: &WalkSample, pi: &[f64], n_pop: usize) -> Result<f64> {
    require_nonempty(ws)?;
    let mut total = 0.0;
    for (&x, &y) in ws.assignment.iter().zip(&ws.y_values) {
        let p = *pi
            .get(x)
            .ok_or_else(|| Error::validation(format!("node {x} outside π")))?;
        if p <= 0.0 {
            return Err(Error::validation(format!("π is zero at sampled node {x}")));
        }
        total += y / (p * n_pop as f64);
    }
    Ok(total / ws.len() as f64)
}

/// `y^π(i) = y(i) / (π_i N)`. The sample mean of the transformed feature is
/// the Horvitz-Thompson estimate of the original.
pub fn pi_transform(y: &NodeFeature, pi: &[f64], n_pop: usize) -> Result<NodeFeature> {
    y.check_len(pi.len())?;
    let mut values = Vec::with_capacity(y.len());
    for (i, (&v, &p)) in y.values().iter().zip(pi).enumerate() {
        if p <= 0.0 {
            return Err(Error::validation(format!("π is zero at node {i}")));
        }
        values.push(v / (p * n_pop as f64));
    }
    NodeFeature::new(format!("{}_pi", y.name), values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::fixtures;
    use crate::markov::srw_kernel;
    use crate::rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn chain(n: usize) -> Arc<ReferralForest> {
        let parents = (0..n).map(|i| i.checked_sub(1)).collect();
        Arc::new(ReferralForest::from_parents(parents).unwrap())
    }

    fn sample(values: &[f64], degrees: &[f64]) -> WalkSample {
        WalkSample {
            assignment: (0..values.len()).collect(),
            y_values: values.to_vec(),
            degrees: degrees.to_vec(),
            weighted_degrees: degrees.to_vec(),
            tree: chain(values.len()),
        }
    }

    #[test]
    fn mean_examples() {
        assert_eq!(sample_mean(&sample(&[2.5; 6], &[])).unwrap(), 2.5);
        assert_eq!(
            sample_mean(&sample(&[0.0, 1.0, 1.0, 0.0], &[])).unwrap(),
            0.5
        );
        let empty = WalkSample {
            assignment: vec![],
            y_values: vec![],
            ..sample(&[1.0], &[])
        };
        assert!(sample_mean(&empty).is_err());
    }

    #[test]
    fn vh_examples() {
        let ws = sample(&[1.0, 0.0], &[4.0, 1.0]);
        assert_abs_diff_eq!(
            vh_estimator(&ws, DegreeKind::Unweighted).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        let ws = sample(&[3.0, 1.0, 2.0], &[5.0; 3]);
        assert_abs_diff_eq!(
            vh_estimator(&ws, DegreeKind::Unweighted).unwrap(),
            sample_mean(&ws).unwrap(),
            epsilon = 1e-15
        );
        assert!(vh_estimator(&sample(&[1.0], &[0.0]), DegreeKind::Unweighted).is_err());
        assert!(vh_estimator(&sample(&[1.0], &[]), DegreeKind::Unweighted).is_err());
    }

    #[test]
    fn vh_weighted_flag_reads_edge_weights() {
        let g = Graph::from_edges(vec![0, 1, 2], &[(0, 1, 3.0), (1, 2, 1.0)]).unwrap();
        let y = NodeFeature::new("y", vec![1.0, 0.0, 0.0]).unwrap();
        let ws = WalkSample::observe(chain(2), vec![0, 2], &y, Some(&g)).unwrap();
        assert_eq!(ws.degrees, vec![1.0, 1.0]);
        assert_eq!(ws.weighted_degrees, vec![3.0, 1.0]);
        assert_abs_diff_eq!(vh_estimator(&ws, DegreeKind::Unweighted).unwrap(), 0.5);
        assert_abs_diff_eq!(vh_estimator(&ws, DegreeKind::Weighted).unwrap(), 0.25);
    }

    #[test]
    fn ht_examples() {
        let ws = sample(&[1.0, 4.0, 2.0], &[]);
        let uniform = vec![0.25; 4];
        assert_abs_diff_eq!(
            ht_estimator(&ws, &uniform, 4).unwrap(),
            sample_mean(&ws).unwrap(),
            epsilon = 1e-15
        );
        let single = WalkSample {
            assignment: vec![2],
            y_values: vec![3.0],
            degrees: vec![],
            weighted_degrees: vec![],
            tree: chain(1),
        };
        let pi = [0.1, 0.2, 0.3, 0.4];
        assert_abs_diff_eq!(
            ht_estimator(&single, &pi, 4).unwrap(),
            3.0 / 1.2,
            epsilon = 1e-15
        );
        assert!(ht_estimator(&single, &[0.5, 0.5, 0.0, 0.0], 4).is_err());
    }

    #[test]
    fn ht_single_draw_is_exactly_unbiased() {
        let g = fixtures::triangle_with_pendant();
        let k = srw_kernel(&g).unwrap();
        let y = NodeFeature::new("y", vec![0.3, -1.0, 2.0, 5.0]).unwrap();
        let n = g.node_count();
        let expectation: f64 = (0..n)
            .map(|i| {
                let ws = WalkSample::observe(chain(1), vec![i], &y, Some(&g)).unwrap();
                k.pi()[i] * ht_estimator(&ws, k.pi(), n).unwrap()
            })
            .sum();
        assert_abs_diff_eq!(expectation, y.mean(), epsilon = 1e-14);
    }

    #[test]
    fn transform_examples() {
        let y = NodeFeature::new("y", vec![1.0, 2.0, 3.0]).unwrap();
        let t = pi_transform(&y, &[1.0 / 3.0; 3], 3).unwrap();
        for (a, b) in t.values().iter().zip(y.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        let g = fixtures::triangle_with_pendant();
        let k = srw_kernel(&g).unwrap();
        let deg = NodeFeature::new("deg", g.degrees().to_vec()).unwrap();
        let t = pi_transform(&deg, k.pi(), g.node_count()).unwrap();
        for v in t.values() {
            assert_abs_diff_eq!(*v, t.values()[0], epsilon = 1e-14);
        }
        assert!(pi_transform(&y, &[0.5, 0.5, 0.0], 3).is_err());
    }

    #[test]
    fn stationary_single_draws_center_on_population_means() {
        let g = fixtures::triangle_with_pendant();
        let k = srw_kernel(&g).unwrap();
        let y = NodeFeature::new("y", vec![1.0, 0.0, 4.0, 2.0]).unwrap();
        let mu_pi: f64 = y.values().iter().zip(k.pi()).map(|(a, b)| a * b).sum();
        let mut rng = rng::stream(11, 0);
        let reps = 100_000;
        let (mut s, mut s2, mut v, mut v2) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..reps {
            let x = k.sample_stationary(&mut rng);
            let ws = WalkSample::observe(chain(1), vec![x], &y, Some(&g)).unwrap();
            let m = sample_mean(&ws).unwrap();
            let h = vh_estimator(&ws, DegreeKind::Unweighted).unwrap();
            s += m;
            s2 += m * m;
            v += h;
            v2 += h * h;
        }
        let r = reps as f64;
        let se = ((s2 / r - (s / r).powi(2)) / r).sqrt();
        assert!((s / r - mu_pi).abs() < 3.0 * se);
        let se = ((v2 / r - (v / r).powi(2)) / r).sqrt();
        // a single-node VH estimate is Y itself; the law of X is π, so its
        // mean is μ_π, not the node average
        assert!((v / r - mu_pi).abs() < 3.0 * se);
    }

    proptest! {
        #[test]
        fn transform_then_mean_is_ht(
            values in prop::collection::vec(-5.0f64..5.0, 2..30),
            seed in any::<u64>(),
            n in 1usize..40,
        ) {
            let n_pop = values.len();
            let mut rng = rng::stream(seed, 0);
            let raw: Vec<f64> = (0..n_pop).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let pi: Vec<f64> = raw.iter().map(|p| p / total).collect();
            let assignment: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_pop)).collect();
            let y = NodeFeature::new("y", values).unwrap();
            let t = pi_transform(&y, &pi, n_pop).unwrap();
            let ws = WalkSample::observe(chain(n), assignment.clone(), &y, None).unwrap();
            let wt = WalkSample::observe(chain(n), assignment, &t, None).unwrap();
            let a = sample_mean(&wt).unwrap();
            let b = ht_estimator(&ws, &pi, n_pop).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }

        #[test]
        fn ht_with_degree_pi_rescales_vh_numerator(
            seed in any::<u64>(),
            n in 1usize..30,
        ) {
            let g = fixtures::triangle_with_pendant();
            let k = srw_kernel(&g).unwrap();
            let n_pop = g.node_count();
            let mut rng = rng::stream(seed, 1);
            let y = NodeFeature::new("y", (0..n_pop).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let assignment: Vec<usize> = (0..n).map(|_| rng.random_range(0..n_pop)).collect();
            let ws = WalkSample::observe(chain(n), assignment, &y, Some(&g)).unwrap();
            // with π = deg / vol, HT is VH's numerator with the known normalizer vol / N
            let vol: f64 = g.degrees().iter().sum();
            let num: f64 = ws.y_values.iter().zip(&ws.weighted_degrees).map(|(a, d)| a / d).sum();
            let expect = num * vol / (n_pop as f64 * n as f64);
            let ht = ht_estimator(&ws, k.pi(), n_pop).unwrap();
            prop_assert!((ht - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }
}
