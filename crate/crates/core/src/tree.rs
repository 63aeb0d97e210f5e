//! Referral trees and forests: construction, generators, the exact
//! distribution of pairwise tree distances, and growth diagnostics.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Default ceiling on generated tree sizes.
pub const DEFAULT_NODE_CAP: usize = 20_000_000;

/// A rooted forest in parent-array form.
///
/// Nodes are dense ids. Children are listed in ascending id order and the
/// breadth-first order starts from the roots in ascending order. Trees
/// built by the generators here are already numbered breadth-first, so a
/// prefix `0..k` of their ids is itself a forest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferralForest {
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    roots: Vec<usize>,
    depth: Vec<usize>,
    bfs: Vec<usize>,
    labels: Vec<String>,
}

impl ReferralForest {
    /// Validates a parent array. Fails on out-of-range parents or cycles.
    pub fn from_parents(parent: Vec<Option<usize>>) -> Result<Self> {
        let labels = (0..parent.len()).map(|i| i.to_string()).collect();
        Self::with_labels(parent, labels)
    }

    pub fn with_labels(parent: Vec<Option<usize>>, labels: Vec<String>) -> Result<Self> {
        let n = parent.len();
        if n == 0 {
            return Err(Error::validation(
                "a referral forest needs at least one node",
            ));
        }
        debug_assert_eq!(labels.len(), n);
        let mut children = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for (i, p) in parent.iter().enumerate() {
            match *p {
                None => roots.push(i),
                Some(p) if p >= n => {
                    return Err(Error::validation(format!(
                        "node {} has parent index {p} outside the forest",
                        labels[i]
                    )))
                }
                Some(p) => children[p].push(i),
            }
        }
        let mut depth = vec![usize::MAX; n];
        let mut bfs = Vec::with_capacity(n);
        let mut queue: VecDeque<usize> = roots.iter().copied().collect();
        for &r in &roots {
            depth[r] = 0;
        }
        while let Some(u) = queue.pop_front() {
            bfs.push(u);
            for &c in &children[u] {
                depth[c] = depth[u] + 1;
                queue.push_back(c);
            }
        }
        if bfs.len() < n {
            let start = (0..n).find(|&i| depth[i] == usize::MAX).unwrap();
            return Err(Error::validation(format!(
                "parent links contain a cycle: {}",
                describe_cycle(&parent, &labels, start)
            )));
        }
        Ok(ReferralForest {
            parent,
            children,
            roots,
            depth,
            bfs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    /// Always false; forests have at least one node.
    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    pub fn is_tree(&self) -> bool {
        self.roots.len() == 1
    }

    pub fn parent(&self, i: usize) -> Option<usize> {
        self.parent[i]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    pub fn children(&self, i: usize) -> &[usize] {
        &self.children[i]
    }

    /// Distance from `i` to the root of its component.
    pub fn depth(&self, i: usize) -> usize {
        self.depth[i]
    }

    pub fn height(&self) -> usize {
        self.depth.iter().copied().max().unwrap_or(0)
    }

    pub fn bfs_order(&self) -> &[usize] {
        &self.bfs
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Parent-child pairs `(parent, child)` in breadth-first order of the child.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bfs
            .iter()
            .filter_map(move |&c| self.parent[c].map(|p| (p, c)))
    }

    /// Number of nodes at each depth, over all components.
    pub fn generation_sizes(&self) -> Vec<u64> {
        let mut sizes = vec![0u64; self.height() + 1];
        for &d in &self.depth {
            sizes[d] += 1;
        }
        sizes
    }

    /// Sub-forest on the given node set, which must be closed under taking
    /// parents. New ids follow this forest's breadth-first order.
    fn restrict(&self, keep: impl Fn(usize) -> bool) -> ReferralForest {
        let kept: Vec<usize> = self.bfs.iter().copied().filter(|&i| keep(i)).collect();
        let mut new_id = vec![usize::MAX; self.len()];
        for (k, &i) in kept.iter().enumerate() {
            new_id[i] = k;
        }
        let parent = kept
            .iter()
            .map(|&i| self.parent[i].map(|p| new_id[p]))
            .collect();
        let labels = kept.iter().map(|&i| self.labels[i].clone()).collect();
        ReferralForest::with_labels(parent, labels).expect("restriction of a valid forest")
    }

    /// Nodes within distance `h` of their root.
    pub fn truncate_height(&self, h: usize) -> ReferralForest {
        self.restrict(|i| self.depth[i] <= h)
    }

    /// The first `n` nodes in breadth-first order.
    pub fn bfs_prefix(&self, n: usize) -> ReferralForest {
        assert!(n >= 1 && n <= self.len(), "prefix size {n} out of range");
        let mut rank = vec![0usize; self.len()];
        for (k, &i) in self.bfs.iter().enumerate() {
            rank[i] = k;
        }
        self.restrict(|i| rank[i] < n)
    }

    /// Renders the `node,parent` CSV read by [`load_tree`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("node,parent\n");
        for i in 0..self.len() {
            let p = self.parent[i]
                .map(|p| self.labels[p].clone())
                .unwrap_or_else(|| "-1".to_owned());
            out.push_str(&format!("{},{}\n", self.labels[i], p));
        }
        out
    }
}

fn describe_cycle(parent: &[Option<usize>], labels: &[String], start: usize) -> String {
    let mut seen = HashMap::new();
    let mut cur = start;
    let mut path = Vec::new();
    while !seen.contains_key(&cur) {
        seen.insert(cur, path.len());
        path.push(cur);
        cur = parent[cur].expect("nodes off the root paths have parents");
    }
    let cycle = &path[seen[&cur]..];
    let mut names: Vec<&str> = cycle.iter().map(|&i| labels[i].as_str()).collect();
    names.push(labels[cur].as_str());
    names.join(" -> ")
}

/// Reads a `node,parent` CSV. A parent of `-1` or an empty field marks a
/// root. Labels are arbitrary strings and are renumbered in file order.
pub fn load_tree(path: impl AsRef<Path>) -> Result<ReferralForest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_tree(&text, path)
}

pub fn parse_tree(text: &str, path: &Path) -> Result<ReferralForest> {
    let mut records: Vec<(String, Option<String>, usize)> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let node = parts.next().unwrap_or("").trim().to_owned();
        let Some(parent) = parts.next().map(|s| s.trim().to_owned()) else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "expected `node,parent`".into(),
            });
        };
        if records.is_empty() && node.eq_ignore_ascii_case("node") {
            continue;
        }
        if node.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: "empty node label".into(),
            });
        }
        let parent = if parent.is_empty() || parent == "-1" {
            None
        } else {
            Some(parent)
        };
        records.push((node, parent, lineno + 1));
    }
    let mut index = HashMap::new();
    for (i, (node, _, line)) in records.iter().enumerate() {
        if index.insert(node.clone(), i).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *line,
                msg: format!("node `{node}` listed twice"),
            });
        }
    }
    let parent = records
        .iter()
        .map(|(node, p, _)| match p {
            None => Ok(None),
            Some(p) => index.get(p).map(|&j| Some(j)).ok_or_else(|| {
                Error::validation(format!("node `{node}` refers to unknown parent `{p}`"))
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = records.into_iter().map(|(node, _, _)| node).collect();
    ReferralForest::with_labels(parent, labels)
}

/// Complete `m`-ary tree with generations `0..=height`.
pub fn gen_m_tree(m: usize, height: usize) -> Result<ReferralForest> {
    gen_m_tree_capped(m, height, DEFAULT_NODE_CAP)
}

pub fn gen_m_tree_capped(m: usize, height: usize, cap: usize) -> Result<ReferralForest> {
    if m == 0 {
        return Err(Error::Domain("m-trees need m >= 1".into()));
    }
    let mut size = 1usize;
    let mut generation = 1usize;
    for _ in 0..height {
        generation = generation.saturating_mul(m);
        size = size.saturating_add(generation);
        if size > cap {
            return Err(Error::validation(format!(
                "{m}-tree of height {height} exceeds the node cap {cap}"
            )));
        }
    }
    let mut parent = Vec::with_capacity(size);
    parent.push(None);
    let mut frontier = 0..1;
    for _ in 0..height {
        let start = parent.len();
        for p in frontier {
            parent.extend(std::iter::repeat_n(Some(p), m));
        }
        frontier = start..parent.len();
    }
    ReferralForest::from_parents(parent)
}

/// Offspring law of a Galton-Watson tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Offspring {
    /// Every node has exactly this many children.
    Fixed(u32),
    /// `shift + Binomial(trials, p)`.
    ShiftedBinomial { shift: u32, trials: u32, p: f64 },
    /// Explicit probabilities of `0, 1, 2, ...` children.
    Pmf(Vec<f64>),
}

impl Offspring {
    pub fn validate(&self) -> Result<()> {
        match self {
            Offspring::Fixed(_) => Ok(()),
            Offspring::ShiftedBinomial { p, .. } => {
                if (0.0..=1.0).contains(p) {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("binomial p = {p} outside [0, 1]")))
                }
            }
            Offspring::Pmf(w) => {
                let total: f64 = w.iter().sum();
                if w.is_empty() || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    Err(Error::Domain("offspring pmf must be nonnegative".into()))
                } else if (total - 1.0).abs() > 1e-9 {
                    Err(Error::Domain(format!("offspring pmf sums to {total}")))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Offspring::Fixed(m) => *m as f64,
            Offspring::ShiftedBinomial { shift, trials, p } => *shift as f64 + *trials as f64 * p,
            Offspring::Pmf(w) => w.iter().enumerate().map(|(k, p)| k as f64 * p).sum(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Offspring::Fixed(m) => *m as usize,
            Offspring::ShiftedBinomial { shift, trials, p } => {
                let b = Binomial::new(*trials as u64, *p).expect("validated binomial");
                *shift as usize + b.sample(rng) as usize
            }
            Offspring::Pmf(w) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, p) in w.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return k;
                    }
                }
                w.iter().rposition(|&p| p > 0.0).unwrap_or(0)
            }
        }
    }
}

impl fmt::Display for Offspring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Offspring::Fixed(m) => write!(f, "fixed:{m}"),
            Offspring::ShiftedBinomial { shift, trials, p } => {
                write!(f, "binom:{shift},{trials},{p}")
            }
            Offspring::Pmf(w) => {
                let parts: Vec<String> = w.iter().map(|p| p.to_string()).collect();
                write!(f, "pmf:{}", parts.join(","))
            }
        }
    }
}

/// Parses `fixed:M`, `binom:SHIFT,TRIALS,P` or `pmf:P0,P1,...`.
impl FromStr for Offspring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::validation(format!("offspring spec `{s}` lacks a `kind:`")))?;
        let bad = || Error::validation(format!("malformed offspring spec `{s}`"));
        let nums: Vec<&str> = rest.split(',').map(str::trim).collect();
        let spec = match kind.trim() {
            "fixed" => Offspring::Fixed(rest.trim().parse().map_err(|_| bad())?),
            "binom" => {
                if nums.len() != 3 {
                    return Err(bad());
                }
                Offspring::ShiftedBinomial {
                    shift: nums[0].parse().map_err(|_| bad())?,
                    trials: nums[1].parse().map_err(|_| bad())?,
                    p: nums[2].parse().map_err(|_| bad())?,
                }
            }
            "pmf" => Offspring::Pmf(
                nums.iter()
                    .map(|x| x.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            ),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// When to stop growing a Galton-Watson tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GwStop {
    /// Grow `h` generations below the root (or until extinction).
    Height(usize),
    /// Grow until at least this many nodes exist, then keep the first
    /// that many in breadth-first order. Extinct trees are discarded.
    MinSize(usize),
}

#[derive(Debug, Clone)]
pub struct GwTree {
    pub forest: ReferralForest,
    /// Trees that went extinct before reaching the target size.
    pub discards: u64,
}

const MAX_DISCARDS: u64 = 1_000_000;

/// Grows one Galton-Watson tree generation by generation.
///
/// Attempt `k` draws from stream `k` of `seed`, so a run that discards
/// extinct trees is still a fixed function of the seed.
pub fn gen_gw_tree(offspring: &Offspring, stop: GwStop, seed: u64) -> Result<GwTree> {
    offspring.validate()?;
    let mut attempt = 0u64;
    loop {
        let mut rng = rng::stream(seed, attempt);
        if let Some(forest) = grow_gw(offspring, stop, &mut rng)? {
            return Ok(GwTree {
                forest,
                discards: attempt,
            });
        }
        attempt += 1;
        if attempt > MAX_DISCARDS {
            return Err(Error::Numeric(format!(
                "no tree reached the target size after {MAX_DISCARDS} attempts (offspring mean {})",
                offspring.mean()
            )));
        }
    }
}

/// Grows a tree from an existing stream, retrying on extinction.
pub(crate) fn gen_gw_tree_from(
    offspring: &Offspring,
    stop: GwStop,
    rng: &mut SimRng,
) -> Result<GwTree> {
    gen_gw_tree(offspring, stop, rng::child_seed(rng))
}

fn grow_gw(
    offspring: &Offspring,
    stop: GwStop,
    rng: &mut SimRng,
) -> Result<Option<ReferralForest>> {
    let mut parent: Vec<Option<usize>> = vec![None];
    let mut frontier = 0..1;
    let mut generations = 0;
    loop {
        match stop {
            GwStop::Height(h) if generations >= h => break,
            GwStop::MinSize(s) if parent.len() >= s => {
                parent.truncate(s);
                break;
            }
            _ => {}
        }
        let start = parent.len();
        for p in frontier.clone() {
            let k = offspring.sample(rng);
            parent.extend(std::iter::repeat_n(Some(p), k));
            if parent.len() > DEFAULT_NODE_CAP {
                return Err(Error::validation(format!(
                    "Galton-Watson tree exceeded the node cap {DEFAULT_NODE_CAP}"
                )));
            }
        }
        frontier = start..parent.len();
        generations += 1;
        if frontier.is_empty() {
            if matches!(stop, GwStop::MinSize(_)) {
                return Ok(None);
            }
            break;
        }
    }
    ReferralForest::from_parents(parent).map(Some)
}

/// Exact law of the distance between two nodes drawn independently and
/// uniformly (with replacement) from a forest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceSpectrum {
    /// `counts[k]` ordered pairs at distance `k`.
    pub counts: Vec<u64>,
    /// Ordered pairs in different components.
    pub infinite_pairs: u64,
    pub n: u64,
}

impl DistanceSpectrum {
    pub fn total_pairs(&self) -> u64 {
        self.n * self.n
    }

    /// Mean distance, over same-component pairs.
    pub fn mean_distance(&self) -> f64 {
        let finite: u64 = self.counts.iter().sum();
        let weighted: f64 = self
            .counts
            .iter()
            .enumerate()
            .map(|(k, &c)| k as f64 * c as f64)
            .sum();
        weighted / finite as f64
    }

    /// Evaluates `𝔾(z) = E z^D` with `z^∞ = 0`; at `z = 1` returns the
    /// same-component fraction.
    pub fn g_eval(&self, z: f64) -> Result<f64> {
        if !(z > -1.0 && z <= 1.0) {
            return Err(Error::Domain(format!("G(z) needs z in (-1, 1], got {z}")));
        }
        Ok(self.g_unchecked(z))
    }

    pub(crate) fn g_unchecked(&self, z: f64) -> f64 {
        let horner = self
            .counts
            .iter()
            .rev()
            .fold(0.0, |acc, &c| acc * z + c as f64);
        horner / (self.n as f64 * self.n as f64)
    }
}

pub fn g_eval(ds: &DistanceSpectrum, z: f64) -> Result<f64> {
    ds.g_eval(z)
}

/// Post-order sweep that hands each node's descendant-depth histogram
/// (reversed: last entry is the node itself) to `visit` once complete.
/// `merge` sees the running histogram and each further child histogram,
/// both relative to the children, before they are added together.
fn sweep_histograms(
    f: &ReferralForest,
    mut merge: impl FnMut(&[u64], &[u64]),
    mut visit: impl FnMut(usize, &[u64]),
) -> Vec<Vec<u64>> {
    let n = f.len();
    let mut hist: Vec<Vec<u64>> = vec![Vec::new(); n];
    for &v in f.bfs.iter().rev() {
        let kids = &f.children[v];
        let mut acc = Vec::new();
        if let Some(&big) = kids
            .iter()
            .max_by_key(|&&c| (hist[c].len(), std::cmp::Reverse(c)))
        {
            acc = std::mem::take(&mut hist[big]);
            for &c in kids.iter().filter(|&&c| c != big) {
                let b = std::mem::take(&mut hist[c]);
                merge(&acc, &b);
                let (la, lb) = (acc.len(), b.len());
                for k in 0..lb {
                    acc[la - 1 - k] += b[lb - 1 - k];
                }
            }
        }
        acc.push(1);
        visit(v, &acc);
        hist[v] = acc;
    }
    hist
}

/// Exact ordered-pair distance counts by merging depth histograms at each
/// lowest common ancestor.
pub fn distance_spectrum(f: &ReferralForest) -> DistanceSpectrum {
    let n = f.len() as u64;
    let h = f.height();
    let mut counts = vec![0u64; 2 * h + 1];
    counts[0] = n;
    // ancestor/descendant pairs: a node at depth d has one ancestor at each
    // distance 1..=d
    let gens = f.generation_sizes();
    let mut deeper = 0u64;
    for k in (1..=h).rev() {
        deeper += gens[k];
        counts[k] += 2 * deeper;
    }
    // pairs whose lowest common ancestor is a proper ancestor of both
    let hist = sweep_histograms(
        f,
        |acc, b| {
            for (kb, &cb) in b.iter().rev().enumerate() {
                if cb == 0 {
                    continue;
                }
                for (ka, &ca) in acc.iter().rev().enumerate() {
                    counts[ka + kb + 2] += 2 * ca * cb;
                }
            }
        },
        |_, _| {},
    );
    let same: u64 = f
        .roots
        .iter()
        .map(|&r| {
            let s: u64 = hist[r].iter().sum();
            s * s
        })
        .sum();
    DistanceSpectrum {
        counts,
        infinite_pairs: n * n - same,
        n,
    }
}

/// Growth and balance summary of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceDiagnostics {
    pub root: usize,
    pub size: usize,
    pub height: usize,
    pub mean_depth: f64,
    pub diameter: usize,
    pub generation_sizes: Vec<u64>,
    pub growth: Option<GrowthDiagnostics>,
}

/// Diagnostics relative to a nominal growth rate `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrowthDiagnostics {
    pub m: f64,
    /// `|D_k(root)| / m^k` per generation `k`.
    pub growth_ratios: Vec<f64>,
    pub c_lower: f64,
    pub c_upper: f64,
    /// Per generation, the mean of `c_τ²` over the nodes `τ` at that depth,
    /// with `c_τ = max_k |D_k(τ)| / m^k` over observed depths below `τ`.
    pub c_second_moments: Vec<f64>,
    pub max_second_moment: f64,
}

/// Per-component height, mean depth, diameter, generation sizes and, when
/// `m` is given, growth constants and balance moments.
pub fn tree_stats(f: &ReferralForest, m: Option<f64>) -> Vec<BalanceDiagnostics> {
    let n = f.len();
    let mut c_tau = vec![0.0f64; n];
    let mut sub_height = vec![0usize; n];
    let mut diameter_at = vec![0usize; n];
    let powers: Option<Vec<f64>> = m.map(|m| (0..=f.height()).map(|k| m.powi(k as i32)).collect());
    let hist = sweep_histograms(
        f,
        |_, _| {},
        |v, h| {
            sub_height[v] = h.len() - 1;
            let mut top = [0usize; 2];
            for &c in &f.children[v] {
                let hc = sub_height[c] + 1;
                if hc > top[0] {
                    top = [hc, top[0]];
                } else if hc > top[1] {
                    top[1] = hc;
                }
            }
            diameter_at[v] = f.children[v]
                .iter()
                .map(|&c| diameter_at[c])
                .max()
                .unwrap_or(0)
                .max(top[0] + top[1]);
            if let Some(pw) = &powers {
                c_tau[v] = h
                    .iter()
                    .rev()
                    .enumerate()
                    .map(|(k, &cnt)| cnt as f64 / pw[k])
                    .fold(0.0, f64::max);
            }
        },
    );

    let mut component = vec![usize::MAX; n];
    for (ci, &r) in f.roots.iter().enumerate() {
        component[r] = ci;
    }
    for &v in &f.bfs {
        if let Some(p) = f.parent[v] {
            component[v] = component[p];
        }
    }

    f.roots
        .iter()
        .enumerate()
        .map(|(ci, &r)| {
            let gens: Vec<u64> = hist[r].iter().rev().copied().collect();
            let size: u64 = gens.iter().sum();
            let depth_sum: u64 = gens.iter().enumerate().map(|(k, &c)| k as u64 * c).sum();
            let growth = m.map(|m| {
                let pw = powers.as_ref().unwrap();
                let growth_ratios: Vec<f64> = gens
                    .iter()
                    .enumerate()
                    .map(|(k, &c)| c as f64 / pw[k])
                    .collect();
                let mut sums = vec![0.0f64; gens.len()];
                for v in (0..n).filter(|&v| component[v] == ci) {
                    sums[f.depth[v]] += c_tau[v] * c_tau[v];
                }
                let c_second_moments: Vec<f64> =
                    sums.iter().zip(&gens).map(|(s, &g)| s / g as f64).collect();
                GrowthDiagnostics {
                    m,
                    c_lower: growth_ratios.iter().copied().fold(f64::INFINITY, f64::min),
                    c_upper: growth_ratios.iter().copied().fold(0.0, f64::max),
                    max_second_moment: c_second_moments.iter().copied().fold(0.0, f64::max),
                    growth_ratios,
                    c_second_moments,
                }
            });
            BalanceDiagnostics {
                root: r,
                size: size as usize,
                height: gens.len() - 1,
                mean_depth: depth_sum as f64 / size as f64,
                diameter: diameter_at[r],
                generation_sizes: gens,
                growth,
            }
        })
        .collect()
}

/// The lower bounds on `𝔾(z)` implied by Jensen's inequality and the tree's
/// depth profile, together with `𝔾(z)` itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GLowerBounds {
    pub z: f64,
    pub g: f64,
    /// `z^{E D}`
    pub mean_distance: f64,
    /// `z^{d(T)}`
    pub diameter: f64,
    /// `z^{2 E‖J‖}`
    pub mean_depth: f64,
    /// `z^{2 h(T)}`
    pub height: f64,
    /// `1/n`
    pub inverse_size: f64,
}

impl GLowerBounds {
    /// Checks `G ≥ z^{ED} ≥ max(z^d, z^{2E‖J‖}) ≥ min(..) ≥ z^{2h}` and
    /// `G ≥ 1/n`, each up to a relative slack.
    pub fn chain_holds(&self, slack: f64) -> bool {
        let ge = |a: f64, b: f64| a >= b - slack * b.abs().max(f64::MIN_POSITIVE);
        let hi = self.diameter.max(self.mean_depth);
        let lo = self.diameter.min(self.mean_depth);
        ge(self.g, self.mean_distance)
            && ge(self.mean_distance, hi)
            && ge(lo, self.height)
            && ge(self.g, self.inverse_size)
    }
}

/// Computes the bound set at `z ∈ (0, 1)` for a single tree.
pub fn g_lower_bounds(
    stats: &BalanceDiagnostics,
    ds: &DistanceSpectrum,
    z: f64,
) -> Result<GLowerBounds> {
    if !(z > 0.0 && z < 1.0) {
        return Err(Error::Domain(format!("bounds need z in (0, 1), got {z}")));
    }
    if ds.infinite_pairs != 0 || stats.size as u64 != ds.n {
        return Err(Error::validation(
            "depth-profile bounds apply to a single tree",
        ));
    }
    Ok(GLowerBounds {
        z,
        g: ds.g_unchecked(z),
        mean_distance: z.powf(ds.mean_distance()),
        diameter: z.powi(stats.diameter as i32),
        mean_depth: z.powf(2.0 * stats.mean_depth),
        height: z.powi(2 * stats.height as i32),
        inverse_size: 1.0 / ds.n as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    SubCritical,
    Critical,
    SuperCritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::SubCritical => "sub-critical",
            Regime::Critical => "critical",
            Regime::SuperCritical => "super-critical",
        })
    }
}

/// Where a referral rate sits relative to the threshold `β = λ₂⁻²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdParams {
    pub m: f64,
    pub lambda2: f64,
    pub beta: f64,
    /// `log_m λ₂⁻²`
    pub alpha: f64,
    pub regime: Regime,
    /// Growth exponent of the design effect in `n`: `1 - α` above the
    /// threshold, 0 otherwise.
    pub predicted_exponent: f64,
}

pub fn threshold_params(m: f64, lambda2: f64) -> Result<ThresholdParams> {
    if !(m > 1.0 && m.is_finite()) {
        return Err(Error::Domain(format!("growth rate m = {m} must exceed 1")));
    }
    if !(lambda2 > 0.0 && lambda2 < 1.0) {
        return Err(Error::Domain(format!(
            "lambda_2 = {lambda2} outside (0, 1)"
        )));
    }
    let beta = lambda2.powi(-2);
    let alpha = beta.ln() / m.ln();
    let regime = if (m - beta).abs() <= 1e-9 {
        Regime::Critical
    } else if m < beta {
        Regime::SubCritical
    } else {
        Regime::SuperCritical
    };
    let predicted_exponent = if regime == Regime::SuperCritical {
        1.0 - alpha
    } else {
        0.0
    };
    Ok(ThresholdParams {
        m,
        lambda2,
        beta,
        alpha,
        regime,
        predicted_exponent,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::ReferralForest;
    use std::collections::VecDeque;

    /// Ordered-pair distance counts by breadth-first search from every node.
    pub fn bfs_spectrum(f: &ReferralForest) -> (Vec<u64>, u64) {
        let n = f.len();
        let mut adj = vec![Vec::new(); n];
        for (p, c) in f.edges() {
            adj[p].push(c);
            adj[c].push(p);
        }
        let mut counts = vec![0u64; 2 * f.height() + 1];
        let mut infinite = 0;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            for d in dist {
                if d == usize::MAX {
                    infinite += 1;
                } else {
                    counts[d] += 1;
                }
            }
        }
        (counts, infinite)
    }
}
