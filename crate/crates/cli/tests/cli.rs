use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn netsample(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netsample"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = netsample(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Data lines of a CSV, without `#` provenance comments.
fn body(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn write_path_graph(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    // Triangle 0-1-2 with a pendant 3 attached to 2.
    let edges = dir.join("g.txt");
    fs::write(&edges, "0 1\n1 2\n0 2\n2 3\n").unwrap();
    let y = dir.join("y.csv");
    fs::write(&y, "label,value\n0,1.0\n1,0.0\n2,2.0\n3,-1.0\n").unwrap();
    (edges, y)
}

#[test]
fn gen_sbm_writes_edges_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let e = dir.path().join("e.txt");
    let l = dir.path().join("l.csv");
    ok(&[
        "--seed",
        "7",
        "gen-sbm",
        "--n",
        "400",
        "--degree",
        "20",
        "--lambda2",
        "0.5",
        "--out-edges",
        s(&e),
        "--out-labels",
        s(&l),
    ]);
    let labels = fs::read_to_string(&l).unwrap();
    let rows = body(&labels);
    assert_eq!(rows[0], "label,block");
    assert_eq!(rows.len(), 401);
    let edges = fs::read_to_string(&e).unwrap();
    let m = body(&edges).iter().filter(|l| !l.trim().is_empty()).count();
    // Expected edge count is 400 * 20 / 2.
    assert!((3000..5000).contains(&m), "{m} edges");
}

#[test]
fn gen_tree_and_gfunc_agree_on_size() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    ok(&[
        "gen-tree",
        "--kind",
        "m-tree",
        "--m",
        "2",
        "--height",
        "3",
        "--out",
        s(&t),
    ]);
    let table = ok(&["gfunc", "--tree", s(&t), "--z", "0,1"]);
    let rows = body(&table);
    assert_eq!(rows[0], "z,G,n,nG");
    let at_zero: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    let at_one: Vec<f64> = rows[2].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(at_zero[2], 15.0);
    assert!((at_zero[1] - 1.0 / 15.0).abs() < 1e-15);
    assert!((at_one[1] - 1.0).abs() < 1e-15);
}

#[test]
fn gen_tree_galton_watson_reaches_min_size() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.csv");
    ok(&[
        "--seed",
        "3",
        "gen-tree",
        "--kind",
        "gw",
        "--min-size",
        "300",
        "--out",
        s(&t),
    ]);
    let text = fs::read_to_string(&t).unwrap();
    assert!(body(&text).len() > 300);
}

#[test]
fn spectral_lists_eigenvalues() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = write_path_graph(dir.path());
    let out = ok(&["spectral", "--graph", s(&g), "--eigenfunctions"]);
    let rows = body(&out);
    assert!(rows[0].starts_with("ell,lambda,f_0"), "{}", rows[0]);
    assert_eq!(rows.len(), 5);
    let first: f64 = rows[1].split(',').nth(1).unwrap().parse().unwrap();
    assert!((first - 1.0).abs() < 1e-12);
}

#[test]
fn variance_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (g, y) = write_path_graph(dir.path());
    let t = dir.path().join("t.csv");
    ok(&[
        "gen-tree",
        "--kind",
        "m-tree",
        "--m",
        "1",
        "--height",
        "2",
        "--out",
        s(&t),
    ]);
    let json = ok(&["variance", "--graph", s(&g), "--y", s(&y), "--tree", s(&t)]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["n"], 3);
    assert!(v["var_rds"].as_f64().unwrap() > 0.0);
    assert_eq!(v["contributions"].as_array().unwrap().len(), 3);

    let csv = dir.path().join("v.csv");
    ok(&[
        "variance",
        "--graph",
        s(&g),
        "--y",
        s(&y),
        "--tree",
        s(&t),
        "--out",
        s(&csv),
    ]);
    assert_eq!(body(&fs::read_to_string(&csv).unwrap()).len(), 4);
}

#[test]
fn simulate_and_repeats_tables() {
    let dir = tempfile::tempdir().unwrap();
    let (g, y) = write_path_graph(dir.path());
    let t = dir.path().join("t.csv");
    ok(&[
        "gen-tree",
        "--kind",
        "m-tree",
        "--m",
        "1",
        "--height",
        "5",
        "--out",
        s(&t),
    ]);
    let est = dir.path().join("est.csv");
    let out = ok(&[
        "--seed",
        "1",
        "simulate",
        "--graph",
        s(&g),
        "--y",
        s(&y),
        "--tree",
        s(&t),
        "--reps",
        "200",
        "--n-grid",
        "2,6",
        "--budget",
        "6",
        "--estimates",
        s(&est),
    ]);
    let rows = body(&out);
    assert_eq!(rows[0], "n,mode,de,de_se,mean_rn,rn_se");
    assert_eq!(rows.len(), 3);
    assert!(!body(&fs::read_to_string(&est).unwrap()).is_empty());

    let rep = ok(&[
        "--seed",
        "1",
        "repeats",
        "--graph",
        s(&g),
        "--tree",
        s(&t),
        "--reps",
        "50",
        "--n-grid",
        "3,6",
        "--budget",
        "6",
    ]);
    assert!(body(&rep)[0].contains("prop2_lower"), "{}", body(&rep)[0]);
}

#[test]
fn missing_file_exits_with_two() {
    let out = netsample(&["spectral", "--graph", "/definitely/not/here.txt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/definitely/not/here.txt"));
}

#[test]
fn bad_mode_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let (g, _) = write_path_graph(dir.path());
    let out = netsample(&[
        "simulate",
        "--graph",
        s(&g),
        "--mode",
        "sideways",
        "--reps",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn periodic_chain_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    fs::write(&m, "0,1\n1,0\n").unwrap();
    let out = netsample(&["spectral", "--matrix", s(&m)]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn recipe_output_is_independent_of_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("tiny.toml");
    fs::write(
        &recipe,
        r#"name = "tiny"
seed = 11

[threshold]
nodes = 600
degrees = [20.0]
lambda2 = [0.5]
replicates = 24
n_grid = [20, 60]
budget = 60
target_size = 200
"#,
    )
    .unwrap();
    let mut bodies = Vec::new();
    for threads in ["1", "4"] {
        let out = dir.path().join(format!("out{threads}"));
        let listing = ok(&[
            "--threads",
            threads,
            "--out-dir",
            s(&out),
            "recipe",
            s(&recipe),
        ]);
        let file = listing
            .lines()
            .next()
            .expect("one file written")
            .to_string();
        let text = fs::read_to_string(&file).unwrap();
        assert!(text.contains("recipe_sha256: "));
        bodies.push(body(&text).join("\n"));
    }
    assert!(!bodies[0].is_empty());
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn seed_flag_overrides_recipe_seed() {
    let dir = tempfile::tempdir().unwrap();
    let recipe = dir.path().join("tiny.toml");
    fs::write(
        &recipe,
        "name = \"tiny\"\nseed = 11\n\n[threshold]\nnodes = 400\ndegrees = [15.0]\nlambda2 = [0.4]\nreplicates = 10\nn_grid = [20]\nbudget = 40\ntarget_size = 100\nmodes = [\"with\"]\n",
    )
    .unwrap();
    let run = |seed: Option<&str>, sub: &str| {
        let out = dir.path().join(sub);
        let mut args = vec!["--out-dir", s(&out)];
        if let Some(v) = seed {
            args.extend(["--seed", v]);
        }
        args.extend(["recipe", s(&recipe)]);
        let listing = ok(&args);
        let text = fs::read_to_string(listing.lines().next().unwrap()).unwrap();
        body(&text).join("\n")
    };
    assert_eq!(run(None, "a"), run(Some("11"), "b"));
    assert_ne!(run(None, "c"), run(Some("12"), "d"));
}
