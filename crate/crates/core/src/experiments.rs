//! Declarative experiment recipes and their runners.
//!
//! A recipe is a TOML file with a name, a seed, and one or more of the
//! `[threshold]`, `[network]` and `[gcurves]` sections. Every CSV written
//! starts with `#` comment lines naming the recipe, its SHA-256 and the
//! seed; the rows after the header depend only on the recipe text.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{
    largest_connected_component, load_edge_list, load_node_feature, prepare_network, NodeFeature,
};
use crate::io::{fmt_f64, Table};
use crate::markov::{rho_correlation, spectral_decompose, srw_kernel};
use crate::rng;
use crate::sbm::{sample_sbm, two_block_params, SbmSpec};
use crate::tree::{
    distance_spectrum, gen_gw_tree, gen_m_tree, load_tree, GwStop, Offspring, ReferralForest,
};
use crate::variance::variance_exact;
use crate::walk_sim::{de_table, mc_design_effect, IidVariance, Mode, SimConfig, TreeSource};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Recipe {
    pub name: String,
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub threshold: Option<ThresholdRecipe>,
    #[serde(default)]
    pub network: Option<NetworkRecipe>,
    #[serde(default)]
    pub gcurves: Option<GCurveRecipe>,
}

/// Design effect against sample size on two-block SBMs, one panel per
/// (degree, λ₂) pair.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRecipe {
    pub nodes: usize,
    pub degrees: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub replicates: usize,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_modes")]
    pub modes: Vec<String>,
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default = "default_target")]
    pub target_size: usize,
    #[serde(default = "default_offspring")]
    pub offspring: String,
    /// Divide by `1/(4n)` instead of `Var_π(y)/n`.
    #[serde(default = "default_true")]
    pub binary_variance: bool,
}

/// Exact design effects on a supplied network for Galton-Watson trees at
/// several referral rates.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkRecipe {
    pub graph: PathBuf,
    pub feature: PathBuf,
    pub trees_per_height: usize,
    pub rates: Vec<RateSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub m: f64,
    /// Offspring law; defaults exist for `m` in {1, 1.2, 3}.
    #[serde(default)]
    pub offspring: Option<String>,
    pub heights: Vec<usize>,
}

/// `n𝔾(λ)` curves for tree files and synthetic m-trees.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GCurveRecipe {
    #[serde(default)]
    pub trees_dir: Option<PathBuf>,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub m_tree_heights: Vec<usize>,
    #[serde(default = "default_lambda_grid")]
    pub lambda2: Vec<f64>,
}

fn default_modes() -> Vec<String> {
    vec!["with".into(), "without".into()]
}
fn default_budget() -> usize {
    500
}
fn default_target() -> usize {
    2000
}
fn default_offspring() -> String {
    "binom:1,2,0.5".into()
}
fn default_true() -> bool {
    true
}
fn default_m() -> usize {
    2
}
fn default_lambda_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 * 0.05).collect()
}

#[derive(Debug, Clone)]
pub struct LoadedRecipe {
    pub recipe: Recipe,
    pub sha256: String,
    /// Relative paths inside the recipe resolve against this directory.
    pub base_dir: PathBuf,
}

pub fn parse_recipe(text: &str, base_dir: impl Into<PathBuf>) -> Result<LoadedRecipe> {
    let recipe: Recipe =
        toml::from_str(text).map_err(|e| Error::validation(format!("recipe: {e}")))?;
    let sha256 = Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    Ok(LoadedRecipe {
        recipe,
        sha256,
        base_dir: base_dir.into(),
    })
}

pub fn load_recipe(path: impl AsRef<Path>) -> Result<LoadedRecipe> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_recipe(&text, base)
}

impl LoadedRecipe {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn provenance(&self, table: &mut Table) {
        let r = &self.recipe;
        table.comments.splice(
            0..0,
            [
                format!("recipe: {}", r.name),
                format!("recipe_sha256: {}", self.sha256),
                format!("seed: {}", r.seed),
            ],
        );
    }

    pub fn default_out_dir(&self) -> PathBuf {
        match &self.recipe.out_dir {
            Some(d) => self.resolve(d),
            None => PathBuf::from("out").join(&self.recipe.name),
        }
    }
}

#[derive(Debug, Default)]
pub struct RunSummary {
    pub written: Vec<PathBuf>,
    pub notices: Vec<String>,
}

/// Runs every section present in the recipe, writing CSVs under `out_dir`.
pub fn run_recipe(r: &LoadedRecipe, out_dir: &Path) -> Result<RunSummary> {
    let mut summary = RunSummary::default();
    if r.recipe.threshold.is_none() && r.recipe.network.is_none() && r.recipe.gcurves.is_none() {
        return Err(Error::validation(format!(
            "recipe `{}` has no experiment section",
            r.recipe.name
        )));
    }
    if r.recipe.threshold.is_some() {
        for (name, mut table) in run_threshold(r)? {
            r.provenance(&mut table);
            let path = out_dir.join(name);
            table.write(&path)?;
            summary.written.push(path);
        }
    }
    if r.recipe.network.is_some() {
        match run_network(r)? {
            NetworkOutcome::Skipped(why) => summary.notices.push(why),
            NetworkOutcome::Done(res) => {
                for (name, mut table) in [
                    ("network_trees.csv", res.trees),
                    ("network_summary.csv", res.summary),
                ] {
                    r.provenance(&mut table);
                    let path = out_dir.join(name);
                    table.write(&path)?;
                    summary.written.push(path);
                }
            }
        }
    }
    if r.recipe.gcurves.is_some() {
        let (mut table, warnings) = run_gcurves(r)?;
        summary.notices.extend(warnings);
        r.provenance(&mut table);
        let path = out_dir.join("gcurves.csv");
        table.write(&path)?;
        summary.written.push(path);
    }
    Ok(summary)
}

/// Two-block SBM graph with binary block feature, restricted to its
/// largest component.
pub fn threshold_population(
    nodes: usize,
    degree: f64,
    lambda2: f64,
    seed: u64,
) -> Result<(crate::graph::Graph, NodeFeature)> {
    let (p, r) = two_block_params(nodes, degree, lambda2)?;
    let (g, blocks) = sample_sbm(&SbmSpec::two_block(nodes, p, r), seed)?;
    let g = largest_connected_component(&g)?;
    let y = g
        .labels()
        .iter()
        .map(|&l| blocks[l as usize] as f64)
        .collect();
    Ok((g, NodeFeature::new("block", y)?))
}

fn panel_name(degree: f64, lambda2: f64) -> String {
    format!("threshold_deg{degree}_lambda{lambda2}.csv")
}

/// One table per (degree, λ₂) panel, rows for every mode and prefix size.
pub fn run_threshold(r: &LoadedRecipe) -> Result<Vec<(String, Table)>> {
    let t = r
        .recipe
        .threshold
        .as_ref()
        .ok_or_else(|| Error::validation("recipe has no [threshold] section"))?;
    let offspring: Offspring = t.offspring.parse()?;
    let modes: Vec<Mode> = t.modes.iter().map(|m| m.parse()).collect::<Result<_>>()?;
    let mut out = Vec::new();
    let mut panel = 0u64;
    for &degree in &t.degrees {
        for &lambda2 in &t.lambda2 {
            let graph_seed = rng::child_seed(&mut rng::stream(r.recipe.seed, 2 * panel));
            let sim_seed = rng::child_seed(&mut rng::stream(r.recipe.seed, 2 * panel + 1));
            panel += 1;
            let (g, y) = threshold_population(t.nodes, degree, lambda2, graph_seed)?;
            let mut rows = Vec::new();
            let mut incomplete = Vec::new();
            for &mode in &modes {
                let cfg = SimConfig {
                    replicates: t.replicates,
                    seed: sim_seed,
                    mode,
                    sample_budget: t.budget,
                    gw_target_size: t.target_size,
                    offspring: offspring.clone(),
                    tree: TreeSource::GaltonWatson,
                    iid_variance: if t.binary_variance {
                        IidVariance::BinaryBalanced
                    } else {
                        IidVariance::Stationary
                    },
                    ..SimConfig::default()
                };
                let res = mc_design_effect(&g, &y, &cfg, &t.n_grid)?;
                incomplete.push(format!("{mode}={}", res.incomplete));
                rows.extend(res.rows);
            }
            let mut table = de_table(&rows);
            table.comments = vec![
                format!("panel: degree={degree} lambda2={lambda2}"),
                format!(
                    "population: {} requested, {} in largest component",
                    t.nodes,
                    g.node_count()
                ),
                format!(
                    "offspring: {offspring}; budget {}; target size {}",
                    t.budget, t.target_size
                ),
                format!(
                    "replicates: {}; short samples: {}",
                    t.replicates,
                    incomplete.join(" ")
                ),
            ];
            out.push((panel_name(degree, lambda2), table));
        }
    }
    Ok(out)
}

fn offspring_for_rate(spec: &RateSpec) -> Result<Offspring> {
    if let Some(s) = &spec.offspring {
        return s.parse();
    }
    let close = |x: f64| (spec.m - x).abs() < 1e-12;
    if close(1.0) {
        Ok(Offspring::Pmf(vec![0.1, 0.8, 0.1]))
    } else if close(1.2) {
        Ok(Offspring::Pmf(vec![0.1, 0.6, 0.3]))
    } else if close(3.0) {
        Ok(Offspring::ShiftedBinomial {
            shift: 1,
            trials: 4,
            p: 0.5,
        })
    } else {
        Err(Error::validation(format!(
            "no default offspring law for m = {}; set `offspring`",
            spec.m
        )))
    }
}

const MAX_HEIGHT_ATTEMPTS: u64 = 1_000_000;

/// A Galton-Watson tree grown `h` generations, redrawn until generation
/// `h` is nonempty.
pub fn gw_tree_of_height(offspring: &Offspring, h: usize, seed: u64) -> Result<ReferralForest> {
    for attempt in 0..MAX_HEIGHT_ATTEMPTS {
        let f = gen_gw_tree(
            offspring,
            GwStop::Height(h),
            rng::child_seed(&mut rng::stream(seed, attempt)),
        )?
        .forest;
        if f.height() == h {
            return Ok(f);
        }
    }
    Err(Error::Numeric(format!(
        "no tree survived to height {h} in {MAX_HEIGHT_ATTEMPTS} attempts"
    )))
}

#[derive(Debug)]
pub struct NetworkResult {
    pub lambda2: f64,
    pub rho: f64,
    pub beta: f64,
    pub nodes: usize,
    pub trees: Table,
    pub summary: Table,
}

#[derive(Debug)]
pub enum NetworkOutcome {
    Skipped(String),
    Done(NetworkResult),
}

/// Prepares the supplied network (unit weights, 2-core, largest component)
/// and evaluates the exact design effect of each sampled tree.
pub fn run_network(r: &LoadedRecipe) -> Result<NetworkOutcome> {
    let spec = r
        .recipe
        .network
        .as_ref()
        .ok_or_else(|| Error::validation("recipe has no [network] section"))?;
    let graph_path = r.resolve(&spec.graph);
    let feature_path = r.resolve(&spec.feature);
    for p in [&graph_path, &feature_path] {
        if !p.exists() {
            return Ok(NetworkOutcome::Skipped(format!(
                "network experiment skipped: {} not found (the dataset is not bundled)",
                p.display()
            )));
        }
    }
    let g = prepare_network(&load_edge_list(&graph_path)?)?;
    let y = load_node_feature(&feature_path, &g)?;
    let s = spectral_decompose(&srw_kernel(&g)?)?;
    let lambda2 = s.lambda2();
    let rho = rho_correlation(&s, &y, 1)?;
    let beta = lambda2.powi(-2);

    let mut trees = Table::new(["m", "height", "replicate", "n", "de"]);
    let mut summary = Table::new(["m", "height", "mean_n", "mean_de", "de_se"]);
    for (ri, rate) in spec.rates.iter().enumerate() {
        let offspring = offspring_for_rate(rate)?;
        for (hi, &h) in rate.heights.iter().enumerate() {
            let cell = (ri * 1000 + hi) as u64;
            let results = crate::par::try_map_range(spec.trees_per_height, |rep| {
                let seed = rng::child_seed(&mut rng::stream(
                    r.recipe.seed,
                    cell * 1_000_000 + rep as u64,
                ));
                let f = gw_tree_of_height(&offspring, h, seed)?;
                let ds = distance_spectrum(&f);
                let report = variance_exact(&s, &y, &ds)?;
                let de = report.design_effect.ok_or_else(|| {
                    Error::validation("feature is constant on the prepared network")
                })?;
                Ok::<_, Error>((f.len(), de))
            })?;
            for (rep, &(n, de)) in results.iter().enumerate() {
                trees.push(vec![
                    rate.m.to_string(),
                    h.to_string(),
                    rep.to_string(),
                    n.to_string(),
                    fmt_f64(de),
                ]);
            }
            let k = results.len() as f64;
            let mean_n = results.iter().map(|r| r.0 as f64).sum::<f64>() / k;
            let mean_de = results.iter().map(|r| r.1).sum::<f64>() / k;
            let sd = (results.iter().map(|r| (r.1 - mean_de).powi(2)).sum::<f64>()
                / (k - 1.0).max(1.0))
            .sqrt();
            summary.push(vec![
                rate.m.to_string(),
                h.to_string(),
                fmt_f64(mean_n),
                fmt_f64(mean_de),
                fmt_f64(sd / k.sqrt()),
            ]);
        }
    }
    let notes = vec![
        format!("prepared nodes: {}", g.node_count()),
        format!("lambda2: {}", fmt_f64(lambda2)),
        format!("rho_y_f2: {}", fmt_f64(rho)),
        format!("critical_rate_beta: {}", fmt_f64(beta)),
    ];
    trees.comments = notes.clone();
    summary.comments = notes;
    Ok(NetworkOutcome::Done(NetworkResult {
        lambda2,
        rho,
        beta,
        nodes: g.node_count(),
        trees,
        summary,
    }))
}

/// `n𝔾(λ)` over the λ grid for every tree file (sorted by name) and every
/// synthetic m-tree height. Unreadable files produce a warning.
pub fn run_gcurves(r: &LoadedRecipe) -> Result<(Table, Vec<String>)> {
    let spec = r
        .recipe
        .gcurves
        .as_ref()
        .ok_or_else(|| Error::validation("recipe has no [gcurves] section"))?;
    if let Some(&bad) = spec.lambda2.iter().find(|&&l| !(0.0..1.0).contains(&l)) {
        return Err(Error::Domain(format!("λ₂ grid value {bad} outside [0, 1)")));
    }
    let mut warnings = Vec::new();
    let mut trees: Vec<(String, ReferralForest)> = Vec::new();
    if let Some(dir) = &spec.trees_dir {
        let dir = r.resolve(dir);
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        paths.sort();
        for p in paths {
            match load_tree(&p) {
                Ok(f) => trees.push((
                    p.file_stem()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned(),
                    f,
                )),
                Err(e) => warnings.push(format!("skipping {}: {e}", p.display())),
            }
        }
    }
    for &h in &spec.m_tree_heights {
        trees.push((format!("{}-tree_h{h}", spec.m), gen_m_tree(spec.m, h)?));
    }
    let mut table = Table::new(["tree", "n", "lambda2", "nG"]);
    for (name, f) in &trees {
        let ds = distance_spectrum(f);
        for &l in &spec.lambda2 {
            table.push(vec![
                name.clone(),
                f.len().to_string(),
                fmt_f64(l),
                fmt_f64(ds.n as f64 * ds.g_eval(l)?),
            ]);
        }
    }
    Ok((table, warnings))
}
