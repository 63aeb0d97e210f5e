//! Tree-indexed walks with and without replacement, and Monte Carlo
//! design effects over many replicates.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::estimators::{ht_estimator, sample_mean, vh_estimator, DegreeKind, WalkSample};
use crate::graph::{Graph, NodeFeature};
use crate::io::{fmt_f64, Table};
use crate::markov::{srw_kernel, Kernel};
use crate::par;
use crate::rng::{self, SimRng};
use crate::tree::{gen_gw_tree_from, GwStop, Offspring, ReferralForest};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Stationary,
    Fixed(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    WithReplacement,
    WithoutReplacement,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::WithReplacement => "with",
            Mode::WithoutReplacement => "without",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "with" | "with_replacement" => Ok(Mode::WithReplacement),
            "without" | "without_replacement" => Ok(Mode::WithoutReplacement),
            other => Err(Error::validation(format!(
                "unknown mode `{other}` (expected `with` or `without`)"
            ))),
        }
    }
}

/// Reference variance the Monte Carlo variance is divided by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IidVariance {
    /// `Var_π(y) / n` from the kernel's stationary law.
    #[default]
    Stationary,
    /// `1 / (4n)`, the variance of a balanced binary feature.
    BinaryBalanced,
}

#[derive(Debug, Clone)]
pub enum TreeSource {
    /// A fresh Galton-Watson tree per replicate, grown to the target size.
    GaltonWatson,
    /// The same tree in every replicate.
    Fixed(Arc<ReferralForest>),
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub replicates: usize,
    pub seed: u64,
    pub init: Init,
    pub mode: Mode,
    pub sample_budget: usize,
    pub gw_target_size: usize,
    pub offspring: Offspring,
    pub tree: TreeSource,
    pub iid_variance: IidVariance,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            replicates: 1000,
            seed: 0,
            init: Init::Stationary,
            mode: Mode::WithReplacement,
            sample_budget: 500,
            gw_target_size: 2000,
            offspring: Offspring::ShiftedBinomial {
                shift: 1,
                trials: 2,
                p: 0.5,
            },
            tree: TreeSource::GaltonWatson,
            iid_variance: IidVariance::Stationary,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::validation("need at least one replicate"));
        }
        if self.sample_budget == 0 {
            return Err(Error::validation("sample budget must be positive"));
        }
        if matches!(self.tree, TreeSource::GaltonWatson) {
            self.offspring.validate()?;
            if self.sample_budget > self.gw_target_size {
                return Err(Error::validation(format!(
                    "sample budget {} exceeds the tree target size {}",
                    self.sample_budget, self.gw_target_size
                )));
            }
        }
        Ok(())
    }
}

fn initial_state<R: Rng + ?Sized>(k: &Kernel, init: Init, rng: &mut R) -> Result<usize> {
    match init {
        Init::Stationary => Ok(k.sample_stationary(rng)),
        Init::Fixed(i) if i < k.state_count() => Ok(i),
        Init::Fixed(i) => Err(Error::validation(format!(
            "initial node {i} outside 0..{}",
            k.state_count()
        ))),
    }
}

/// Draws `X_σ` for every tree node: roots from `init`, each child from its
/// parent's row of `P`, in breadth-first order.
pub fn walk_with_replacement(
    k: &Kernel,
    f: &ReferralForest,
    init: Init,
    seed: u64,
) -> Result<Vec<usize>> {
    walk_with_replacement_rng(k, f, init, &mut rng::stream(seed, 0))
}

pub(crate) fn walk_with_replacement_rng(
    k: &Kernel,
    f: &ReferralForest,
    init: Init,
    rng: &mut SimRng,
) -> Result<Vec<usize>> {
    let mut x = vec![0; f.len()];
    for &t in f.bfs_order() {
        x[t] = match f.parent(t) {
            None => initial_state(k, init, rng)?,
            Some(p) => k.step(x[p], rng),
        };
    }
    Ok(x)
}

/// Result of filling a planned tree without replacement.
#[derive(Debug, Clone)]
pub struct WorSample {
    /// The nodes actually sampled, numbered in breadth-first order.
    pub forest: ReferralForest,
    pub assignment: Vec<usize>,
    /// False when pruning left fewer nodes than the budget.
    pub complete: bool,
    /// Nodes whose planned referrals exceeded their viable neighbors.
    pub short_nodes: usize,
}

/// Fills `planned` in breadth-first order, each referral drawn uniformly
/// from the parent's neighbors that have not appeared anywhere in the
/// sample yet. Planned children beyond the viable count are dropped with
/// their descendants; sampling stops once `budget` nodes are in.
pub(crate) fn fill_without_replacement(
    g: &Graph,
    k: &Kernel,
    planned: &ReferralForest,
    init: Init,
    budget: usize,
    rng: &mut SimRng,
) -> Result<WorSample> {
    if !planned.is_tree() {
        return Err(Error::validation(
            "sampling without replacement needs a single planned tree",
        ));
    }
    if g.node_count() < budget {
        return Err(Error::validation(format!(
            "budget {budget} exceeds the population {}",
            g.node_count()
        )));
    }
    let root = planned.roots()[0];
    let x0 = initial_state(k, init, rng)?;
    if g.neighbors(x0).is_empty() {
        return Err(Error::validation(format!("seed node {x0} is isolated")));
    }
    let mut seen = vec![false; g.node_count()];
    seen[x0] = true;
    let mut parent = vec![None];
    let mut assignment = vec![x0];
    let mut queue = std::collections::VecDeque::from([(root, 0usize)]);
    let mut short_nodes = 0;
    let mut viable = Vec::new();
    'fill: while let Some((planned_node, id)) = queue.pop_front() {
        let kids = planned.children(planned_node);
        if kids.is_empty() {
            continue;
        }
        viable.clear();
        viable.extend(
            g.neighbors(assignment[id])
                .iter()
                .map(|&(j, _)| j)
                .filter(|&j| !seen[j]),
        );
        let take = kids.len().min(viable.len());
        if take < kids.len() {
            short_nodes += 1;
        }
        for (c, &kid) in kids.iter().take(take).enumerate() {
            if assignment.len() == budget {
                break 'fill;
            }
            let pick = rng.random_range(c..viable.len());
            viable.swap(c, pick);
            let xj = viable[c];
            seen[xj] = true;
            parent.push(Some(id));
            assignment.push(xj);
            queue.push_back((kid, assignment.len() - 1));
        }
        if assignment.len() == budget {
            break;
        }
    }
    let complete = assignment.len() == budget;
    Ok(WorSample {
        forest: ReferralForest::from_parents(parent)?,
        assignment,
        complete,
        short_nodes,
    })
}

fn planned_tree(cfg: &SimConfig, rng: &mut SimRng) -> Result<Arc<ReferralForest>> {
    match &cfg.tree {
        TreeSource::Fixed(f) => Ok(f.clone()),
        TreeSource::GaltonWatson => Ok(Arc::new(
            gen_gw_tree_from(&cfg.offspring, GwStop::MinSize(cfg.gw_target_size), rng)?.forest,
        )),
    }
}

/// Runs the without-replacement protocol once: plan a tree per `cfg`,
/// seed it, fill it from viable neighbors, and prune to the budget.
pub fn walk_without_replacement(g: &Graph, cfg: &SimConfig, seed: u64) -> Result<WorSample> {
    cfg.validate()?;
    let k = srw_kernel(g)?;
    let mut rng = rng::stream(seed, 0);
    let planned = planned_tree(cfg, &mut rng)?;
    fill_without_replacement(g, &k, &planned, cfg.init, cfg.sample_budget, &mut rng)
}

/// Ordered pairs of distinct tree nodes that landed on the same graph node.
pub fn count_repeats(ws: &WalkSample) -> u64 {
    count_repeats_in(&ws.assignment)
}

fn count_repeats_in(assignment: &[usize]) -> u64 {
    let mut sorted = assignment.to_vec();
    sorted.sort_unstable();
    sorted
        .chunk_by(|a, b| a == b)
        .map(|run| {
            let c = run.len() as u64;
            c * (c - 1)
        })
        .sum()
}

/// One replicate's sample in breadth-first order.
struct Replicate {
    tree: Arc<ReferralForest>,
    assignment: Vec<usize>,
}

fn run_replicate(
    k: &Kernel,
    g: Option<&Graph>,
    cfg: &SimConfig,
    index: usize,
) -> Result<Replicate> {
    let mut rng = rng::stream(cfg.seed, index as u64);
    let planned = planned_tree(cfg, &mut rng)?;
    // With-replacement walks on a Galton-Watson plan run on the tree pruned
    // by the viable-neighbor fill, so both modes share one tree per
    // replicate. A graph too small for the budget skips the fill.
    let prune = |g: &Graph| {
        matches!(cfg.tree, TreeSource::GaltonWatson) && g.node_count() >= cfg.sample_budget
    };
    let filled = match (g, cfg.mode) {
        (Some(g), Mode::WithoutReplacement) => Some(fill_without_replacement(
            g,
            k,
            &planned,
            cfg.init,
            cfg.sample_budget,
            &mut rng,
        )?),
        (Some(g), Mode::WithReplacement) if prune(g) => Some(fill_without_replacement(
            g,
            k,
            &planned,
            cfg.init,
            cfg.sample_budget,
            &mut rng,
        )?),
        (None, Mode::WithoutReplacement) => {
            return Err(Error::validation(
                "sampling without replacement needs a graph",
            ))
        }
        _ => None,
    };
    let (tree, wor_assignment) = match filled {
        Some(w) => (Arc::new(w.forest), Some(w.assignment)),
        None => (Arc::new(planned.bfs_prefix(cfg.sample_budget)), None),
    };
    let assignment = match (cfg.mode, wor_assignment) {
        (Mode::WithoutReplacement, Some(a)) => a,
        _ => walk_with_replacement_rng(k, &tree, cfg.init, &mut rng)?,
    };
    Ok(Replicate { tree, assignment })
}

/// Design effect of the sample mean at one prefix size.
#[derive(Debug, Clone, PartialEq)]
pub struct DeRow {
    pub n: usize,
    pub mode: Mode,
    pub de: f64,
    pub de_se: f64,
    pub mean_rn: f64,
    pub rn_se: f64,
    /// Replicates whose sample reached `n` nodes.
    pub replicates: usize,
}

#[derive(Debug, Clone)]
pub struct McOutput {
    pub rows: Vec<DeRow>,
    /// `(replicate, estimator, value)` on each full sample.
    pub estimates: Vec<(usize, &'static str, f64)>,
    /// Replicates that ended below the sample budget.
    pub incomplete: usize,
}

impl McOutput {
    pub fn table(&self) -> Table {
        de_table(&self.rows)
    }

    pub fn estimates_table(&self) -> Table {
        let mut t = Table::new(["replicate", "estimator", "value"]);
        for &(r, name, v) in &self.estimates {
            t.push(vec![r.to_string(), name.to_owned(), fmt_f64(v)]);
        }
        t
    }
}

pub fn de_table(rows: &[DeRow]) -> Table {
    let mut t = Table::new(["n", "mode", "de", "de_se", "mean_rn", "rn_se"]);
    for r in rows {
        t.push(vec![
            r.n.to_string(),
            r.mode.to_string(),
            fmt_f64(r.de),
            fmt_f64(r.de_se),
            fmt_f64(r.mean_rn),
            fmt_f64(r.rn_se),
        ]);
    }
    t
}

/// Sample variance and its leave-one-out jackknife standard error.
pub fn variance_with_jackknife(xs: &[f64]) -> (f64, f64) {
    let r = xs.len();
    if r < 2 {
        return (f64::NAN, f64::NAN);
    }
    let rf = r as f64;
    let mean = xs.iter().sum::<f64>() / rf;
    let dev: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let s1: f64 = dev.iter().sum();
    let s2: f64 = dev.iter().map(|d| d * d).sum();
    let var = (s2 - s1 * s1 / rf) / (rf - 1.0);
    if r < 3 {
        return (var, f64::NAN);
    }
    let loo: Vec<f64> = dev
        .iter()
        .map(|d| {
            let a = s1 - d;
            let b = s2 - d * d;
            (b - a * a / (rf - 1.0)) / (rf - 2.0)
        })
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / rf;
    let se = ((rf - 1.0) / rf * loo.iter().map(|v| (v - loo_mean).powi(2)).sum::<f64>()).sqrt();
    (var, se)
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let r = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / r;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r - 1.0);
    (mean, (var / r).sqrt())
}

/// Variance of `y` under `π`.
pub fn stationary_feature_variance(pi: &[f64], y: &[f64]) -> f64 {
    let mu: f64 = pi.iter().zip(y).map(|(p, v)| p * v).sum();
    pi.iter().zip(y).map(|(p, v)| p * (v - mu) * (v - mu)).sum()
}

/// Monte Carlo design effect of the sample mean on the simple random walk
/// of `g`, for each breadth-first prefix size in `n_grid`.
pub fn mc_design_effect(
    g: &Graph,
    y: &NodeFeature,
    cfg: &SimConfig,
    n_grid: &[usize],
) -> Result<McOutput> {
    let k = srw_kernel(g)?;
    mc_design_effect_with_kernel(&k, Some(g), y, cfg, n_grid)
}

/// As [`mc_design_effect`] for an arbitrary kernel. Without a graph only
/// with-replacement walks are possible and the Volz-Heckathorn estimate is
/// omitted.
pub fn mc_design_effect_with_kernel(
    k: &Kernel,
    g: Option<&Graph>,
    y: &NodeFeature,
    cfg: &SimConfig,
    n_grid: &[usize],
) -> Result<McOutput> {
    cfg.validate()?;
    y.check_len(k.state_count())?;
    if let Some(&n) = n_grid.iter().find(|&&n| n == 0 || n > cfg.sample_budget) {
        return Err(Error::validation(format!(
            "prefix size {n} outside 1..={}",
            cfg.sample_budget
        )));
    }
    if let TreeSource::Fixed(f) = &cfg.tree {
        if f.is_empty() {
            return Err(Error::validation("fixed tree is empty"));
        }
    }
    let sigma2 = match cfg.iid_variance {
        IidVariance::Stationary => stationary_feature_variance(k.pi(), y.values()),
        IidVariance::BinaryBalanced => 0.25,
    };
    let scale: f64 = k.pi().iter().zip(y.values()).map(|(p, v)| p * v * v).sum();
    if !(sigma2 > 1e-24 * scale.max(1.0)) {
        return Err(Error::validation(format!(
            "feature `{}` is constant under π: design effect undefined",
            y.name
        )));
    }
    let n_pop = k.state_count();
    let per_rep = par::try_map_range(cfg.replicates, |r| {
        let rep = run_replicate(k, g, cfg, r)?;
        let ordered: Vec<usize> = rep
            .tree
            .bfs_order()
            .iter()
            .map(|&t| rep.assignment[t])
            .collect();
        let values: Vec<f64> = ordered.iter().map(|&x| y.values()[x]).collect();
        let mut prefix = Vec::with_capacity(n_grid.len());
        for &n in n_grid {
            prefix.push((values.len() >= n).then(|| {
                let mean = values[..n].iter().sum::<f64>() / n as f64;
                (mean, count_repeats_in(&ordered[..n]) as f64)
            }));
        }
        let ws = WalkSample::observe(rep.tree.clone(), rep.assignment, y, g)?;
        let mut est = vec![("mean", sample_mean(&ws)?)];
        if g.is_some() {
            est.push(("vh", vh_estimator(&ws, DegreeKind::Unweighted)?));
        }
        est.push(("ht", ht_estimator(&ws, k.pi(), n_pop)?));
        Ok::<_, Error>((prefix, est, values.len() >= cfg.sample_budget))
    })?;

    let mut rows = Vec::with_capacity(n_grid.len());
    for (gi, &n) in n_grid.iter().enumerate() {
        let (means, repeats): (Vec<f64>, Vec<f64>) =
            per_rep.iter().filter_map(|(p, _, _)| p[gi]).unzip();
        let (var, var_se) = variance_with_jackknife(&means);
        let (mean_rn, rn_se) = mean_and_se(&repeats);
        let iid = sigma2 / n as f64;
        rows.push(DeRow {
            n,
            mode: cfg.mode,
            de: var / iid,
            de_se: var_se / iid,
            mean_rn,
            rn_se,
            replicates: means.len(),
        });
    }
    let estimates = per_rep
        .iter()
        .enumerate()
        .flat_map(|(r, (_, est, _))| est.iter().map(move |&(name, v)| (r, name, v)))
        .collect();
    let incomplete = per_rep.iter().filter(|(_, _, full)| !full).count();
    Ok(McOutput {
        rows,
        estimates,
        incomplete,
    })
}

/// Resampling counts of with-replacement walks against their reference
/// rates.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatRow {
    pub base: DeRow,
    /// `n / D` with `D` the largest degree.
    pub prop2_lower: f64,
    /// `E R_n / (n ln n)`.
    pub rn_per_nlogn: f64,
    pub n_over_sqrt_pop: f64,
}

pub fn repeat_rate_experiment(
    g: &Graph,
    y: &NodeFeature,
    cfg: &SimConfig,
    n_grid: &[usize],
) -> Result<Vec<RepeatRow>> {
    let cfg = SimConfig {
        mode: Mode::WithReplacement,
        ..cfg.clone()
    };
    let out = mc_design_effect(g, y, &cfg, n_grid)?;
    let max_degree = g.max_unweighted_degree() as f64;
    let sqrt_pop = (g.node_count() as f64).sqrt();
    Ok(out
        .rows
        .into_iter()
        .map(|base| {
            let n = base.n as f64;
            RepeatRow {
                prop2_lower: n / max_degree,
                rn_per_nlogn: base.mean_rn / (n * n.ln()),
                n_over_sqrt_pop: n / sqrt_pop,
                base,
            }
        })
        .collect())
}

pub fn repeat_table(rows: &[RepeatRow]) -> Table {
    let base: Vec<DeRow> = rows.iter().map(|r| r.base.clone()).collect();
    let mut t = de_table(&base);
    t.header
        .extend(["prop2_lower", "rn_per_nlogn", "n_over_sqrt_pop"].map(String::from));
    for (row, r) in t.rows.iter_mut().zip(rows) {
        row.extend([
            fmt_f64(r.prop2_lower),
            fmt_f64(r.rn_per_nlogn),
            fmt_f64(r.n_over_sqrt_pop),
        ]);
    }
    t
}
