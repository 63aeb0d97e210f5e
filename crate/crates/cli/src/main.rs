use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use netsample::estimators::pi_transform;
use netsample::experiments::{load_recipe, run_recipe};
use netsample::graph::{load_edge_list, parse_node_feature, prepare_network, Graph, NodeFeature};
use netsample::io::{fmt_f64, Table};
use netsample::markov::{custom_kernel, spectral_decompose, srw_kernel, Kernel, SpectralKernel};
use netsample::sbm::{sample_sbm, two_block_params, SbmSpec};
use netsample::tree::{distance_spectrum, gen_gw_tree, gen_m_tree, load_tree, GwStop, Offspring};
use netsample::variance::variance_exact;
use netsample::walk_sim::{
    mc_design_effect, repeat_rate_experiment, repeat_table, IidVariance, Init, Mode, SimConfig,
    TreeSource,
};
use netsample::{Error, Result};

#[derive(Parser)]
#[command(
    name = "netsample",
    version,
    about = "Variance of network-driven sampling estimators"
)]
struct Cli {
    /// Seed for every random draw (overrides a recipe's own seed).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory that relative output paths are written under.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a stochastic blockmodel graph.
    GenSbm(GenSbm),
    /// Write an m-tree or a Galton-Watson tree as `node,parent` CSV.
    GenTree(GenTree),
    /// Tabulate 𝔾(z) for a tree.
    Gfunc(Gfunc),
    /// Eigenvalues (and optionally eigenfunctions) of a walk kernel.
    Spectral(Spectral),
    /// Exact variance and design effect of the sample mean.
    Variance(VarianceCmd),
    /// Monte Carlo design effect over replicated walks.
    Simulate(Simulate),
    /// Resampling counts of with-replacement walks.
    Repeats(Simulate),
    /// Run an experiment recipe.
    Recipe(RecipeCmd),
}

#[derive(Args)]
struct GenSbm {
    #[arg(long)]
    n: usize,
    /// Block shares, comma separated.
    #[arg(long, default_value = "0.5,0.5")]
    pi: String,
    /// Block connection matrix, rows separated by `;`.
    #[arg(long, conflicts_with_all = ["degree", "lambda2"])]
    psi: Option<String>,
    /// Expected degree of the two-block model (with --lambda2).
    #[arg(long, requires = "lambda2")]
    degree: Option<f64>,
    #[arg(long, requires = "degree")]
    lambda2: Option<f64>,
    #[arg(long)]
    out_edges: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum TreeKind {
    MTree,
    Gw,
}

#[derive(Args)]
struct GenTree {
    #[arg(long, value_enum)]
    kind: TreeKind,
    /// Children per node of an m-tree.
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long)]
    height: Option<usize>,
    /// Galton-Watson offspring law: `fixed:M`, `binom:S,T,P` or `pmf:P0,P1,...`.
    #[arg(long, default_value = "binom:1,2,0.5")]
    offspring: String,
    /// Grow a Galton-Watson tree until it has this many nodes.
    #[arg(long, conflicts_with = "height")]
    min_size: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Gfunc {
    #[arg(long)]
    tree: PathBuf,
    /// Comma-separated evaluation points in (-1, 1].
    #[arg(long, conflicts_with = "grid")]
    z: Option<String>,
    /// Evaluate on this many equally spaced points of [0, 1].
    #[arg(long, default_value_t = 21)]
    grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KernelSource {
    /// Edge list `u v [w]`; the kernel is its simple random walk.
    #[arg(long, required_unless_present = "matrix", conflicts_with = "matrix")]
    graph: Option<PathBuf>,
    /// Dense row-stochastic matrix, one comma-separated row per line.
    #[arg(long)]
    matrix: Option<PathBuf>,
    /// Reduce the graph to unit weights, its 2-core and largest component.
    #[arg(long)]
    prepare: bool,
}

#[derive(Args)]
struct Spectral {
    #[command(flatten)]
    source: KernelSource,
    /// Append eigenfunction values (one column per node).
    #[arg(long)]
    eigenfunctions: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Transform {
    Pi,
}

#[derive(Args)]
struct VarianceCmd {
    #[command(flatten)]
    source: KernelSource,
    /// Node feature as `label,value` CSV.
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    #[arg(long, value_enum)]
    feature_transform: Option<Transform>,
    /// `.json` (default) or `.csv` with one row per eigenvalue.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Simulate {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    prepare: bool,
    /// Node feature as `label,value` CSV; the degree is used if omitted.
    #[arg(long)]
    y: Option<PathBuf>,
    #[arg(long, default_value = "with")]
    mode: String,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    /// Comma-separated prefix sizes.
    #[arg(long, default_value = "50,100,200,300,400,500")]
    n_grid: String,
    #[arg(long, default_value_t = 500)]
    budget: usize,
    #[arg(long, default_value_t = 2000)]
    target_size: usize,
    #[arg(long, default_value = "binom:1,2,0.5")]
    offspring: String,
    /// Use this tree in every replicate instead of Galton-Watson trees.
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Start every walk at this node label instead of a stationary draw.
    #[arg(long)]
    init: Option<u64>,
    /// Divide by 1/(4n), for a balanced binary feature.
    #[arg(long)]
    binary_variance: bool,
    /// Also write per-replicate estimates as `replicate,estimator,value`.
    #[arg(long)]
    estimates: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecipeCmd {
    path: PathBuf,
}

struct Ctx {
    seed: u64,
    seed_given: bool,
    out_dir: Option<PathBuf>,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.out_dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn emit(&self, table: &Table, out: Option<&Path>) -> Result<()> {
        match out {
            Some(p) => table.write(self.path(p)),
            None => stdout(&table.to_csv()),
        }
    }
}

fn stdout(text: &str) -> Result<()> {
    std::io::stdout().lock().write_all(text.as_bytes())?;
    Ok(())
}

/// Attaches the file name to a failed read.
fn reading<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Validation(format!("cannot read {}: {io}", path.display())),
        other => other,
    })
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| Error::Validation(format!("bad {what} entry `{}`", t.trim())))
        })
        .collect()
}

fn load_graph(path: &Path, prepare: bool) -> Result<Graph> {
    let g = reading(path, load_edge_list(path))?;
    if prepare {
        prepare_network(&g)
    } else {
        Ok(g)
    }
}

fn load_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let text = reading(path, std::fs::read_to_string(path).map_err(Error::from))?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            parse_list(l, "matrix").map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: "expected comma-separated numbers".into(),
            })
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(Error::Validation(format!(
            "matrix in {} is not square",
            path.display()
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// The kernel plus the population the feature file is keyed by.
fn load_kernel(src: &KernelSource) -> Result<(Kernel, Graph)> {
    if let Some(m) = &src.matrix {
        let k = custom_kernel(&load_matrix(m)?, 1e-10)?;
        let labels = Graph::from_edges((0..k.state_count() as u64).collect(), &[])?;
        Ok((k, labels))
    } else {
        let g = load_graph(
            src.graph.as_deref().expect("clap enforces a source"),
            src.prepare,
        )?;
        Ok((srw_kernel(&g)?, g))
    }
}

fn load_feature(path: &Path, g: &Graph) -> Result<NodeFeature> {
    let text = reading(path, std::fs::read_to_string(path).map_err(Error::from))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "y".into());
    parse_node_feature(&text, g, &name)
}

fn gen_sbm(ctx: &Ctx, a: &GenSbm) -> Result<()> {
    let spec = match (&a.psi, a.degree, a.lambda2) {
        (Some(psi), _, _) => SbmSpec {
            block_probs: parse_list(&a.pi, "pi")?,
            psi: psi
                .split(';')
                .map(|r| parse_list(r, "psi"))
                .collect::<Result<_>>()?,
            n: a.n,
        },
        (None, Some(deg), Some(l2)) => {
            let (p, r) = two_block_params(a.n, deg, l2)?;
            SbmSpec::two_block(a.n, p, r)
        }
        _ => {
            return Err(Error::Validation(
                "give either --psi or --degree with --lambda2".into(),
            ))
        }
    };
    let (g, blocks) = sample_sbm(&spec, ctx.seed)?;
    let edges = ctx.path(&a.out_edges);
    if let Some(dir) = edges.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(&edges, g.to_edge_list())?;
    let mut labels = Table::new(["label", "block"]);
    for (i, b) in blocks.iter().enumerate() {
        labels.push(vec![i.to_string(), b.to_string()]);
    }
    labels.write(ctx.path(&a.out_labels))
}

fn gen_tree(ctx: &Ctx, a: &GenTree) -> Result<()> {
    let f = match a.kind {
        TreeKind::MTree => {
            let h = a
                .height
                .ok_or_else(|| Error::Validation("m-tree needs --height".into()))?;
            gen_m_tree(a.m, h)?
        }
        TreeKind::Gw => {
            let offspring: Offspring = a.offspring.parse()?;
            let stop = match (a.height, a.min_size) {
                (Some(h), None) => GwStop::Height(h),
                (None, Some(s)) => GwStop::MinSize(s),
                _ => return Err(Error::Validation("give --height or --min-size".into())),
            };
            gen_gw_tree(&offspring, stop, ctx.seed)?.forest
        }
    };
    let path = ctx.path(&a.out);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, f.to_csv())?;
    Ok(())
}

fn gfunc(ctx: &Ctx, a: &Gfunc) -> Result<()> {
    let f = reading(&a.tree, load_tree(&a.tree))?;
    let ds = distance_spectrum(&f);
    let zs: Vec<f64> = match &a.z {
        Some(z) => parse_list(z, "z")?,
        None => {
            let steps = a.grid.max(2) - 1;
            (0..=steps).map(|i| i as f64 / steps as f64).collect()
        }
    };
    let mut t = Table::new(["z", "G", "n", "nG"]);
    for z in zs {
        let g = ds.g_eval(z)?;
        t.push(vec![
            fmt_f64(z),
            fmt_f64(g),
            ds.n.to_string(),
            fmt_f64(ds.n as f64 * g),
        ]);
    }
    ctx.emit(&t, a.out.as_deref())
}

fn spectral(ctx: &Ctx, a: &Spectral) -> Result<()> {
    let (k, g) = load_kernel(&a.source)?;
    let s = spectral_decompose(&k)?;
    let n = s.state_count();
    let mut header = vec!["ell".to_owned(), "lambda".to_owned()];
    if a.eigenfunctions {
        header.extend(g.labels().iter().map(|l| format!("f_{l}")));
    }
    let mut t = Table::new(header);
    for idx in 0..n {
        let mut row = vec![(idx + 1).to_string(), fmt_f64(s.eigenvalues()[idx])];
        if a.eigenfunctions {
            row.extend(s.eigenfunction(idx).iter().map(|&v| fmt_f64(v)));
        }
        t.push(row);
    }
    ctx.emit(&t, a.out.as_deref())
}

fn variance(ctx: &Ctx, a: &VarianceCmd) -> Result<()> {
    let (k, g) = load_kernel(&a.source)?;
    let s: SpectralKernel = spectral_decompose(&k)?;
    let mut y = load_feature(&a.y, &g)?;
    if let Some(Transform::Pi) = a.feature_transform {
        y = pi_transform(&y, s.pi(), s.state_count())?;
    }
    let f = reading(&a.tree, load_tree(&a.tree))?;
    let report = variance_exact(&s, &y, &distance_spectrum(&f))?;
    let csv = a
        .out
        .as_ref()
        .is_some_and(|p| p.extension().is_some_and(|e| e == "csv"));
    if csv {
        let mut t = Table::new(["ell", "lambda", "projection_sq", "g", "product"]);
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_else(|| "undefined".into());
        t.comments = vec![
            format!("n: {}", report.n),
            format!("var_rds: {}", fmt_f64(report.var_rds)),
            format!("sigma2: {}", fmt_f64(report.sigma2)),
            format!("var_iid: {}", fmt_f64(report.var_iid)),
            format!("design_effect: {}", opt(report.design_effect)),
            format!("rho2: {}", opt(report.rho2)),
            format!("de_lower: {}", opt(report.de_lower)),
            format!("de_upper: {}", opt(report.de_upper)),
        ];
        for c in &report.contributions {
            t.push(vec![
                c.ell.to_string(),
                fmt_f64(c.lambda),
                fmt_f64(c.projection_sq),
                fmt_f64(c.g),
                fmt_f64(c.product),
            ]);
        }
        return ctx.emit(&t, a.out.as_deref());
    }
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Numeric(format!("report serialization: {e}")))?;
    match &a.out {
        Some(p) => {
            let p = ctx.path(p);
            if let Some(dir) = p.parent() {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, json + "\n")?;
        }
        None => stdout(&(json + "\n"))?,
    }
    Ok(())
}

fn sim_config(ctx: &Ctx, a: &Simulate, g: &Graph) -> Result<(SimConfig, Vec<usize>)> {
    let tree = match &a.tree {
        Some(p) => TreeSource::Fixed(Arc::new(reading(p, load_tree(p))?)),
        None => TreeSource::GaltonWatson,
    };
    let budget = match &tree {
        TreeSource::Fixed(f) => a.budget.min(f.len()),
        TreeSource::GaltonWatson => a.budget,
    };
    let init =
        match a.init {
            None => Init::Stationary,
            Some(label) => Init::Fixed(*g.label_index().get(&label).ok_or_else(|| {
                Error::Validation(format!("initial node {label} not in the graph"))
            })?),
        };
    let cfg = SimConfig {
        replicates: a.reps,
        seed: ctx.seed,
        init,
        mode: a.mode.parse::<Mode>()?,
        sample_budget: budget,
        gw_target_size: a.target_size,
        offspring: a.offspring.parse()?,
        tree,
        iid_variance: if a.binary_variance {
            IidVariance::BinaryBalanced
        } else {
            IidVariance::Stationary
        },
    };
    Ok((cfg, parse_list(&a.n_grid, "n-grid")?))
}

fn feature_or_degree(a: &Simulate, g: &Graph) -> Result<NodeFeature> {
    match &a.y {
        Some(p) => load_feature(p, g),
        None => NodeFeature::new("degree", g.degrees().to_vec()),
    }
}

fn simulate(ctx: &Ctx, a: &Simulate) -> Result<()> {
    let g = load_graph(&a.graph, a.prepare)?;
    let y = feature_or_degree(a, &g)?;
    let (cfg, grid) = sim_config(ctx, a, &g)?;
    let out = mc_design_effect(&g, &y, &cfg, &grid)?;
    if let Some(p) = &a.estimates {
        out.estimates_table().write(ctx.path(p))?;
    }
    let mut t = out.table();
    t.comments = vec![
        format!("seed: {}", ctx.seed),
        format!(
            "replicates: {}; short samples: {}",
            cfg.replicates, out.incomplete
        ),
    ];
    ctx.emit(&t, a.out.as_deref())
}

fn repeats(ctx: &Ctx, a: &Simulate) -> Result<()> {
    let g = load_graph(&a.graph, a.prepare)?;
    let y = feature_or_degree(a, &g)?;
    let (cfg, grid) = sim_config(ctx, a, &g)?;
    let rows = repeat_rate_experiment(&g, &y, &cfg, &grid)?;
    let mut t = repeat_table(&rows);
    t.comments = vec![
        format!("seed: {}", ctx.seed),
        format!(
            "nodes: {}; max degree: {}",
            g.node_count(),
            g.max_unweighted_degree()
        ),
    ];
    ctx.emit(&t, a.out.as_deref())
}

fn recipe(ctx: &Ctx, a: &RecipeCmd) -> Result<()> {
    let mut r = reading(&a.path, load_recipe(&a.path))?;
    if ctx.seed_given {
        r.recipe.seed = ctx.seed;
    }
    let dir = ctx.out_dir.clone().unwrap_or_else(|| r.default_out_dir());
    let summary = run_recipe(&r, &dir)?;
    for n in &summary.notices {
        eprintln!("note: {n}");
    }
    let listing: String = summary
        .written
        .iter()
        .map(|p| format!("{}\n", p.display()))
        .collect();
    stdout(&listing)
}

fn run(cli: Cli) -> Result<()> {
    #[cfg(feature = "parallel")]
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    }
    #[cfg(not(feature = "parallel"))]
    if cli.threads.is_some_and(|t| t > 1) {
        eprintln!("note: built without the `parallel` feature; running on one thread");
    }
    let ctx = Ctx {
        seed: cli.seed.unwrap_or(0),
        seed_given: cli.seed.is_some(),
        out_dir: cli.out_dir,
    };
    match &cli.command {
        Command::GenSbm(a) => gen_sbm(&ctx, a),
        Command::GenTree(a) => gen_tree(&ctx, a),
        Command::Gfunc(a) => gfunc(&ctx, a),
        Command::Spectral(a) => spectral(&ctx, a),
        Command::Variance(a) => variance(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Repeats(a) => repeats(&ctx, a),
        Command::Recipe(a) => recipe(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
