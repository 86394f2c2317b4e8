use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nalgebra::{DMatrix, DVector};
use sing_core::bundle::{read_bundle, write_bundle};
use sing_core::decomposition::{decompose_head, RankTolerance};
use sing_core::FeatureBundle;
use tempfile::TempDir;

fn sing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sing")).args(args).output().unwrap()
}

fn sing_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sing"))
        .args(args)
        .env(key, value)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        stdout(&o),
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Staged {
    dir: TempDir,
    bundle: PathBuf,
    decomp: PathBuf,
    translator: PathBuf,
}

impl Staged {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Synthesizes a planted bundle and runs decompose and fit-translator on it.
fn staged(leak: &str, seed: &str) -> Staged {
    let dir = tempfile::tempdir().unwrap();
    let s = Staged {
        bundle: dir.path().join("bundle"),
        decomp: dir.path().join("decomp"),
        translator: dir.path().join("translator"),
        dir,
    };
    ok(sing(&[
        "synth",
        "--m",
        "24",
        "--c",
        "4",
        "--n",
        "10",
        "--per-class",
        "30",
        "--leak",
        leak,
        "--seed",
        seed,
        "--out",
        p(&s.bundle),
    ]));
    ok(sing(&["decompose", p(&s.bundle), "--out", p(&s.decomp)]));
    ok(sing(&["fit-translator", p(&s.bundle), "--out", p(&s.translator)]));
    s
}

fn toy_bundle(dir: &Path, text: bool) -> FeatureBundle {
    let b = FeatureBundle {
        features: DMatrix::from_row_slice(3, 3, &[1., 2., 3., -1., 0., 2., 0.5, 0.5, -1.]),
        head_weight: DMatrix::from_row_slice(2, 3, &[1., 0., 0., 0., 1., 0.]),
        head_bias: None,
        clip_image: DMatrix::from_row_slice(3, 3, &[1., 2., 3., -1., 0., 2., 0.5, 0.5, -1.]),
        labels: vec![0, 1, 0],
        class_names: vec!["cat".into(), "dog".into()],
        text_embeddings: text.then(|| DMatrix::from_row_slice(2, 3, &[1., 0., 0., 0., 1., 1.])),
        prompts: text.then(|| vec!["an image of a cat".into(), "an image of a dog".into()]),
        model_name: "toy".into(),
    };
    write_bundle(&b, dir).unwrap();
    b
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let k = header
        .iter()
        .position(|h| h == name)
        .unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[k].parse().unwrap()).collect()
}

#[test]
fn decompose_reports_rank_and_null_dim() {
    let dir = tempfile::tempdir().unwrap();
    toy_bundle(&dir.path().join("b"), true);
    let out = ok(sing(&[
        "decompose",
        p(&dir.path().join("b")),
        "--out",
        p(&dir.path().join("d")),
    ]));
    assert!(out.starts_with("rank=2 null_dim=1 "), "{out}");
    let out = ok(sing(&[
        "decompose",
        p(&dir.path().join("b")),
        "--rank-tol-mode",
        "absolute:2",
        "--out",
        p(&dir.path().join("d2")),
    ]));
    assert!(out.starts_with("rank=0 null_dim=3 "), "{out}");
}

#[test]
fn invalid_paths_and_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    let o = sing(&["decompose", p(&missing), "--out", p(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not a directory"));
    assert_eq!(sing(&["decompose"]).status.code(), Some(2));
    let o = sing(&["decompose", p(dir.path()), "--rank-tol-mode", "loose", "--out", "x"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sing_env(
        &[
            "synth",
            "--m",
            "4",
            "--c",
            "2",
            "--n",
            "2",
            "--per-class",
            "2",
            "--out",
            "x",
        ],
        "SING_THREADS",
        "zero",
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn truncated_tensor_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    toy_bundle(&b, true);
    // Truncate a tensor file.
    let labels = std::fs::read_dir(&b)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("labels"))
        .unwrap();
    let bytes = std::fs::read(&labels).unwrap();
    std::fs::write(&labels, &bytes[..bytes.len() - 8]).unwrap();
    let o = sing(&["decompose", p(&b), "--out", p(&dir.path().join("d"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("byte count mismatch"));
}

#[test]
fn identity_targets_fit_with_zero_error() {
    let dir = tempfile::tempdir().unwrap();
    toy_bundle(&dir.path().join("b"), true);
    let out = ok(sing(&[
        "fit-translator",
        p(&dir.path().join("b")),
        "--lambda",
        "0",
        "--out",
        p(&dir.path().join("t")),
    ]));
    let mse: f64 = out
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix("train_mse="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(mse < 1e-24, "{out}");
}

#[test]
fn lambda_sweep_shrinks_theta() {
    let s = staged("0", "3");
    let mut last = f64::INFINITY;
    for lambda in ["0.1", "1", "10", "100", "1000"] {
        let out = ok(sing(&[
            "fit-translator",
            p(&s.bundle),
            "--lambda",
            lambda,
            "--out",
            p(&s.path("sweep")),
        ]));
        let norm: f64 = out
            .split_whitespace()
            .find_map(|kv| kv.strip_prefix("theta_norm="))
            .unwrap()
            .parse()
            .unwrap();
        assert!(norm <= last, "lambda {lambda}: {norm} > {last}");
        last = norm;
    }
    assert_eq!(
        sing(&[
            "fit-translator",
            p(&s.bundle),
            "--lambda",
            "-1",
            "--out",
            p(&s.path("neg"))
        ])
        .status
        .code(),
        Some(2)
    );
}

#[test]
fn translator_dimension_mismatch_exits_2() {
    let s = staged("0", "3");
    let dir = tempfile::tempdir().unwrap();
    toy_bundle(&dir.path().join("b"), true);
    ok(sing(&[
        "fit-translator",
        p(&dir.path().join("b")),
        "--out",
        p(&dir.path().join("t")),
    ]));
    let o = sing(&[
        "metrics",
        p(&s.bundle),
        p(&s.decomp),
        p(&dir.path().join("t")),
        "--out",
        p(&s.path("m.csv")),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_rank_head_gives_all_zero_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    let mut bundle = toy_bundle(&b, true);
    bundle.head_weight = DMatrix::from_row_slice(2, 3, &[1., 0., 0., 0., 1., 0.]).insert_row(2, 0.0);
    bundle.head_weight[(2, 2)] = 1.0;
    bundle.class_names.push("bird".into());
    bundle.text_embeddings = Some(bundle.text_embeddings.clone().unwrap().insert_row(2, 1.0));
    bundle.prompts.as_mut().unwrap().push("an image of a bird".into());
    std::fs::remove_dir_all(&b).unwrap();
    write_bundle(&bundle, &b).unwrap();

    ok(sing(&["decompose", p(&b), "--out", p(&dir.path().join("d"))]));
    ok(sing(&["fit-translator", p(&b), "--out", p(&dir.path().join("t"))]));
    let m = dir.path().join("m.csv");
    ok(sing(&[
        "metrics",
        p(&b),
        p(&dir.path().join("d")),
        p(&dir.path().join("t")),
        "--prompts",
        "all",
        "--out",
        p(&m),
    ]));
    let (header, rows) = read_csv(&m);
    assert_eq!(rows.len(), 9);
    assert!(column(&header, &rows, "AS_deg").iter().all(|&a| a == 0.0));
    assert!(column(&header, &rows, "IS_deg").iter().all(|&a| a == 0.0));
}

#[test]
fn missing_prompts_with_true_class_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    toy_bundle(&b, false);
    ok(sing(&["decompose", p(&b), "--out", p(&dir.path().join("d"))]));
    ok(sing(&["fit-translator", p(&b), "--out", p(&dir.path().join("t"))]));
    let args = |prompts: &'static str, out: PathBuf| -> Vec<String> {
        [
            "metrics",
            p(&b),
            p(&dir.path().join("d")),
            p(&dir.path().join("t")),
            "--prompts",
            prompts,
            "--out",
            p(&out),
        ]
        .map(String::from)
        .to_vec()
    };
    let a = args("true-class", dir.path().join("m.csv"));
    let o = sing(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(2));
    let a = args("none", dir.path().join("m.csv"));
    ok(sing(&a.iter().map(String::as_str).collect::<Vec<_>>()));
}

#[test]
fn planted_leak_is_flagged_in_summary() {
    let s = staged("10", "5");
    let summary = s.path("summary.json");
    let out = ok(sing(&[
        "metrics",
        p(&s.bundle),
        p(&s.decomp),
        p(&s.translator),
        "--out",
        p(&s.path("m.json")),
        "--format",
        "json",
        "--summary",
        p(&summary),
    ]));
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(s.bundle.join("ground_truth.json")).unwrap()).unwrap();
    let leaky: Vec<u64> = truth["leak_classes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    let classes = report["classes"].as_array().unwrap();
    let mean_abs = |leak: bool| -> Vec<f64> {
        classes
            .iter()
            .filter(|c| leaky.contains(&c["class_id"].as_u64().unwrap()) == leak)
            .map(|c| c["mean_abs"].as_f64().unwrap())
            .collect()
    };
    let min_leaky = mean_abs(true).into_iter().fold(f64::INFINITY, f64::min);
    let max_clean = mean_abs(false).into_iter().fold(0.0, f64::max);
    assert!(min_leaky > max_clean);
    for c in classes {
        let flagged = c["flagged"].as_bool().unwrap();
        let is_leaky = leaky.contains(&c["class_id"].as_u64().unwrap());
        assert!(!flagged || is_leaky, "clean class flagged: {c}");
    }
    assert!(out.contains("flagged=["), "{out}");
    let records: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(s.path("m.json")).unwrap()).unwrap();
    assert_eq!(records.as_array().unwrap().len(), 120);
}

#[test]
fn calibrated_steering_hits_40_degrees() {
    let s = staged("4", "2");
    let out = s.path("steer.csv");
    ok(sing(&[
        "steer",
        p(&s.bundle),
        p(&s.decomp),
        p(&s.translator),
        "--mode",
        "text-gradient",
        "--prompt",
        "1",
        "--target-is",
        "40",
        "--out",
        p(&out),
    ]));
    let (header, rows) = read_csv(&out);
    assert_eq!(rows.len(), 120);
    assert!(header.contains(&"AS_1_deg".to_string()));
    for is in column(&header, &rows, "achieved_is_deg") {
        assert!((is - 40.0).abs() <= 0.1, "IS {is}");
    }
    let w = read_bundle(&s.bundle, true).unwrap().head_weight_f64();
    for (drift, eps) in column(&header, &rows, "logit_drift")
        .iter()
        .zip(column(&header, &rows, "epsilon_used"))
    {
        assert!(*drift <= 1e-4 * (1.0 + w.norm() * eps));
    }
}

#[test]
fn random_steering_is_reproducible_and_zero_epsilon_is_inert() {
    let s = staged("0", "8");
    let run = |name: &str, extra: &[&str]| -> Vec<u8> {
        let out = s.path(name);
        let mut args = vec!["steer", p(&s.bundle), p(&s.decomp), p(&s.translator)];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", p(&out)]);
        ok(sing(&args));
        std::fs::read(out).unwrap()
    };
    let a = run("a.csv", &["--mode", "random", "--seed", "7", "--epsilon", "2"]);
    let b = run("b.csv", &["--mode", "random", "--seed", "7", "--epsilon", "2"]);
    let c = run("c.csv", &["--mode", "random", "--seed", "8", "--epsilon", "2"]);
    assert_eq!(a, b);
    assert_ne!(a, c);

    let zero = s.path("zero.csv");
    ok(sing(&[
        "steer",
        p(&s.bundle),
        p(&s.decomp),
        p(&s.translator),
        "--mode",
        "principal",
        "--epsilon",
        "0",
        "--out",
        p(&zero),
    ]));
    let (header, rows) = read_csv(&zero);
    assert!(column(&header, &rows, "logit_drift").iter().all(|&d| d == 0.0));
    assert!(column(&header, &rows, "achieved_is_deg").iter().all(|&d| d == 0.0));
}

#[test]
fn steering_flag_conflicts_exit_2() {
    let s = staged("0", "1");
    let base = [p(&s.bundle), p(&s.decomp), p(&s.translator)];
    let out = s.path("x.csv");
    let run = |extra: &[&str]| {
        let mut args = vec!["steer"];
        args.extend_from_slice(&base);
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", p(&out)]);
        sing(&args).status.code()
    };
    assert_eq!(
        run(&["--mode", "random", "--epsilon", "1", "--target-is", "5"]),
        Some(2)
    );
    assert_eq!(run(&["--mode", "random"]), Some(2));
    assert_eq!(run(&["--mode", "text-gradient", "--epsilon", "1"]), Some(2));
    assert_eq!(
        run(&["--mode", "text-gradient", "--prompt", "99", "--epsilon", "1"]),
        Some(2)
    );
    assert_eq!(run(&["--mode", "null-removal", "--epsilon", "1"]), Some(2));
}

#[test]
fn vanishing_null_gradient_exits_3() {
    // Square full-rank head: the null space is trivial.
    let dir = tempfile::tempdir().unwrap();
    let b = dir.path().join("b");
    let mut bundle = toy_bundle(&b, true);
    bundle.head_weight = DMatrix::identity(3, 3);
    bundle.class_names.push("bird".into());
    bundle.text_embeddings = Some(bundle.text_embeddings.clone().unwrap().insert_row(2, 1.0));
    bundle.prompts.as_mut().unwrap().push("an image of a bird".into());
    std::fs::remove_dir_all(&b).unwrap();
    write_bundle(&bundle, &b).unwrap();
    ok(sing(&["decompose", p(&b), "--out", p(&dir.path().join("d"))]));
    ok(sing(&["fit-translator", p(&b), "--out", p(&dir.path().join("t"))]));
    let (d, t, out) = (dir.path().join("d"), dir.path().join("t"), dir.path().join("s.csv"));
    let args = [
        "steer",
        p(&b),
        p(&d),
        p(&t),
        "--mode",
        "text-gradient",
        "--prompt",
        "0",
        "--epsilon",
        "1",
        "--out",
        p(&out),
    ];
    let o = sing(&args);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("null-projected gradient vanishes"));
    let mut lenient = args.to_vec();
    lenient.push("--skip-failures");
    ok(sing(&lenient));
}

#[test]
fn validate_reproduces_the_drift_ordering() {
    let s = staged("0", "6");
    let out = s.path("v.json");
    ok(sing(&[
        "validate",
        p(&s.bundle),
        p(&s.decomp),
        "--n-trials",
        "500",
        "--seed",
        "3",
        "--out",
        p(&out),
    ]));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    let trials = v["trials"].as_array().unwrap();
    assert_eq!(trials.len(), 500);
    let get = |t: &serde_json::Value, k: &str| t[k].as_f64().unwrap();
    assert!(trials.iter().all(|t| get(t, "null_drift") <= 1e-4));
    let exceeds = trials
        .iter()
        .filter(|t| get(t, "random_drift") > get(t, "null_drift"))
        .count();
    assert!(exceeds as f64 >= 0.99 * 500.0);
    assert!(
        v["summary"]["mean_principal_drift"].as_f64().unwrap() >= v["summary"]["mean_random_drift"].as_f64().unwrap()
    );
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let path = e.unwrap().path();
            (
                path.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&path).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_deterministic_and_leak_lives_in_null_space() {
    let dir = tempfile::tempdir().unwrap();
    let synth = |leak: &str, name: &str| {
        let out = dir.path().join(name);
        ok(sing(&[
            "synth",
            "--m",
            "12",
            "--c",
            "3",
            "--n",
            "6",
            "--per-class",
            "10",
            "--leak",
            leak,
            "--seed",
            "4",
            "--out",
            p(&out),
        ]));
        out
    };
    let a = synth("0", "a");
    let b = synth("0", "b");
    assert_eq!(dir_contents(&a), dir_contents(&b));

    let leaky = synth("10", "c");
    let clean = read_bundle(&a, true).unwrap();
    let leaked = read_bundle(&leaky, true).unwrap();
    let d = decompose_head(&clean.head_weight_f64(), RankTolerance::Machine).unwrap();
    assert_eq!(clean.head_weight, leaked.head_weight);
    for i in 0..clean.num_samples() {
        let diff: DVector<f64> = leaked.feature(i) - clean.feature(i);
        let principal = &d.proj_principal * &diff;
        assert!(principal.norm() <= 1e-5 * (1.0 + clean.feature(i).norm()));
        let leaks = [0usize, 2].contains(&clean.label(i));
        assert_eq!(diff.norm() > 1.0, leaks, "sample {i}");
    }
}

#[test]
fn reports_are_identical_across_runs_and_thread_counts() {
    let s = staged("3", "11");
    let run = |name: &str, threads: &str| -> Vec<u8> {
        let out = s.path(name);
        ok(sing_env(
            &[
                "metrics",
                p(&s.bundle),
                p(&s.decomp),
                p(&s.translator),
                "--prompts",
                "all",
                "--out",
                p(&out),
            ],
            "SING_THREADS",
            threads,
        ));
        std::fs::read(out).unwrap()
    };
    let one = run("m1.csv", "1");
    assert_eq!(one, run("m2.csv", "1"));
    assert_eq!(one, run("m4.csv", "4"));
}
