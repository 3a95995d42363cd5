use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_MODEL: &str = "4,4,4,4,4";

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_entroloss"));
    cmd.env_remove("ENTROLOSS_SEED").env("SOURCE_DATE_EPOCH", "0");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_data(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let data = dir.join(format!("data_{n}_{seed}"));
    let out = run(&["gen-data", "--n", &n.to_string(), "--seed", &seed.to_string(), "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    data
}

fn png_count(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count()
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_data_layout_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let res = run(&["gen-data", "--n", "100", "--fraction", "0.5", "--seed", "7", "--out", p(out)]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
    }
    assert_eq!(png_count(&a.join("informative")), 50);
    assert_eq!(png_count(&a.join("uninformative")), 50);
    assert!(a.join("manifest.csv").exists());
    assert!(a.join("run_manifest.json").exists());

    let files = files_under(&a);
    assert_eq!(files, files_under(&b));
    for f in files.iter().filter(|f| !f.ends_with("run_manifest.json")) {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{}", f.display());
    }
}

#[test]
fn gen_data_seed_falls_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let flag = dir.path().join("flag");
    let env = dir.path().join("env");
    assert_eq!(code(&run(&["gen-data", "--n", "6", "--seed", "9", "--out", p(&flag)])), 0);
    let out = bin()
        .args(["gen-data", "--n", "6", "--out", p(&env)])
        .env("ENTROLOSS_SEED", "9")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(flag.join("manifest.csv")).unwrap(), fs::read(env.join("manifest.csv")).unwrap());
    for f in files_under(&flag).iter().filter(|f| f.extension().is_some_and(|x| x == "png")) {
        assert_eq!(fs::read(flag.join(f)).unwrap(), fs::read(env.join(f)).unwrap());
    }
}

#[test]
fn gen_data_rejects_single_frame() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-data", "--n", "1", "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("usage"));
}

#[test]
fn train_writes_all_artifacts_with_default_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), 10, 1);
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--data", p(&data), "--epochs", "1", "--alpha", "1.0", "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for f in ["model.entl", "report.csv", "loss_curve.svg", "run_manifest.json"] {
        assert!(out_dir.join(f).exists(), "missing {f}");
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final: accuracy="), "{stdout}");

    // alpha 1 dispatches to the Shannon loss.
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["loss"]["family"], "shannon");
    assert_eq!(manifest["dataset"]["all_total"], 10);
    assert_eq!(manifest["dataset"]["train_total"], 7);
    assert_eq!(manifest["timestamp"], 0);
    let report = fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 2);
}

#[test]
fn train_reads_config_file_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), 12, 2);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "[model]\nconv_channels = [2, 2, 2, 2, 2]\npool_after = [true, true, true, true, true]\n\
         [train]\nepochs = 3\nbatch_size = 4\n[train.loss]\nfamily = \"havrda-charvat\"\nalpha = 1.5\n",
    )
    .unwrap();
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--data", p(&data), "--config", p(&cfg), "--epochs", "2", "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("run_manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["train"]["epochs"], 2);
    assert_eq!(manifest["config"]["train"]["loss"]["alpha"], 1.5);
    assert_eq!(manifest["config"]["model"]["conv_channels"][0], 2);

    fs::write(&cfg, "[train]\nepoch = 3\n").unwrap();
    let out = run(&["train", "--data", p(&data), "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_missing_data_dir_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_data");
    let out = run(&["train", "--data", p(&missing), "--out", p(&dir.path().join("o"))]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no_such_data"), "{}", stderr(&out));
}

#[test]
fn train_divergence_exits_numerical() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), 10, 3);
    let out = run(&[
        "train",
        "--data",
        p(&data),
        "--epochs",
        "3",
        "--conv-channels",
        SMALL_MODEL,
        "--optimizer",
        "sgd",
        "--lr",
        "1e300",
        "--out",
        p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
}

#[test]
fn sweep_emits_table_shaped_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), 10, 4);
    let out_dir = dir.path().join("sweep");
    let out = run(&[
        "sweep",
        "--data",
        p(&data),
        "--alphas",
        "1.0,1.1,1.3,1.5,2.0",
        "--epoch-counts",
        "2,3,4",
        "--conv-channels",
        "2,2,2,2,2",
        "--batch-size",
        "4",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let grid = fs::read_to_string(out_dir.join("sweep_grid.csv")).unwrap();
    let rows: Vec<&str> = grid.lines().collect();
    assert_eq!(rows[0], "epochs,1.0,1.1,1.3,1.5,2.0");
    assert_eq!(rows.len(), 4);
    for (row, n) in rows[1..].iter().zip(["2", "3", "4"]) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], n);
        assert_eq!(cells.len(), 6);
        for c in &cells[1..] {
            let acc: f64 = c.parse().unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    let long = fs::read_to_string(out_dir.join("sweep_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 16);
    assert!(out_dir.join("run_manifest.json").exists());
}

#[test]
fn sweep_single_cell_and_bad_lists() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path(), 8, 5);
    let out_dir = dir.path().join("one");
    let args = |alphas: &'static str| {
        vec![
            "sweep".to_string(),
            "--data".into(),
            p(&data).into(),
            "--alphas".into(),
            alphas.into(),
            "--epoch-counts".into(),
            "1".into(),
            "--conv-channels".into(),
            "2,2,2,2,2".into(),
            "--out".into(),
            p(&out_dir).into(),
        ]
    };
    let out = bin().args(args("1.3")).output().unwrap();
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let long = fs::read_to_string(out_dir.join("sweep_long.csv")).unwrap();
    assert_eq!(long.lines().count(), 2);

    assert_eq!(code(&bin().args(args("1.0,abc")).output().unwrap()), 2);
    assert_eq!(code(&bin().args(args("0.5")).output().unwrap()), 2);
}

#[test]
fn gradcheck_gates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    fs::write(
        &cfg,
        "[model]\ninput_side = 16\nconv_channels = [3, 3]\npool_after = [true, true]\ndense_sizes = [8, 4]\ndropout_after_dense = 2\n",
    )
    .unwrap();
    let out_dir = dir.path().join("gc");
    let base = ["gradcheck", "--config", p(&cfg), "--out", p(&out_dir)];

    let ok = bin().args(base).args(["--alpha", "1.3"]).output().unwrap();
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("max relative error"));
    assert!(out_dir.join("run_manifest.json").exists());

    let absurd = bin().args(base).args(["--alpha", "1.3", "--step", "10"]).output().unwrap();
    assert_eq!(code(&absurd), 5, "{}", stderr(&absurd));

    let domain = bin().args(base).args(["--alpha", "0.5"]).output().unwrap();
    assert_eq!(code(&domain), 2);
}

fn write_report(path: &Path, train: &[f64], val: &[f64]) {
    let mut text = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
    for (i, (t, v)) in train.iter().zip(val).enumerate() {
        text.push_str(&format!("{},{t},{v},0.5,0.5\n", i + 1));
    }
    fs::write(path, text).unwrap();
}

fn vertices(svg: &str, class: &str) -> usize {
    let tag = format!(r#"<polyline class="{class}" points=""#);
    let start = svg.find(&tag).unwrap() + tag.len();
    let end = start + svg[start..].find('"').unwrap();
    svg[start..end].split_whitespace().count()
}

#[test]
fn plot_renders_reports() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.csv");
    let svg = dir.path().join("r.svg");

    let long: Vec<f64> = (0..40).map(|i| 1.0 / (i + 1) as f64).collect();
    write_report(&report, &long, &long);
    assert_eq!(code(&run(&["plot", "--report", p(&report), "--out", p(&svg)])), 0);
    let text = fs::read_to_string(&svg).unwrap();
    assert_eq!(vertices(&text, "train-loss"), 40);
    assert_eq!(vertices(&text, "val-loss"), 40);
    assert!(!text.contains("overfitting-onset"));
    assert!(dir.path().join("r.manifest.json").exists());

    write_report(&report, &[0.7], &[0.8]);
    assert_eq!(code(&run(&["plot", "--report", p(&report), "--out", p(&svg)])), 0);
    assert_eq!(vertices(&fs::read_to_string(&svg).unwrap(), "val-loss"), 1);

    let train = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3];
    let val = [1.0, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4];
    write_report(&report, &train, &val);
    let out = run(&["plot", "--report", p(&report), "--out", p(&svg)]);
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(&svg).unwrap().contains(r#"id="overfitting-onset" data-index="1""#));
}

#[test]
fn plot_rejects_malformed_reports() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bad.csv");
    let svg = dir.path().join("bad.svg");
    fs::write(&report, "epoch,train_loss,val_loss,train_acc,val_acc\n1,abc,0.5,0.5,0.5\n").unwrap();
    assert_eq!(code(&run(&["plot", "--report", p(&report), "--out", p(&svg)])), 2);
    fs::write(&report, "a,b\n1,2\n").unwrap();
    assert_eq!(code(&run(&["plot", "--report", p(&report), "--out", p(&svg)])), 2);
    let missing = dir.path().join("missing.csv");
    assert_eq!(code(&run(&["plot", "--report", p(&missing), "--out", p(&svg)])), 3);
}
