use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use mdci_cli::commands::cmd_ci;
use mdci_cli::report::{read_ci_csv, CiRow};
use mdci_cli::{run, CiArgs, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK};

fn mediation_toml() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/mediation.toml")
}

fn mdci(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("mdci").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn bn1<'a>(rows: &'a [CiRow], label: &str) -> &'a CiRow {
    rows.iter().find(|r| r.label == label && r.method == "BN1").unwrap()
}

fn near(row: &CiRow, lower: f64, upper: f64, tol: f64) -> bool {
    (row.lower - lower).abs() <= tol && (row.upper - upper).abs() <= tol
}

#[test]
fn mediation_bn1_rows() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ci.csv");
    let (code, out, _) = mdci(&["ci", "--config", mediation_toml().to_str().unwrap(), "--out", csv.to_str().unwrap()]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("full sample"));
    let rows = read_ci_csv(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(rows.len(), 16);

    assert!(near(bn1(&rows, "full sample"), -0.042, -0.010, 0.002));

    // min(t1², t2²) = 1.941² < Q(χ²₁, 0.95), so τ = 0 is accepted and the
    // upper end sits just above zero rather than at the printed -0.001.
    let one = bn1(&rows, "1 year");
    assert!(near(one, -0.071, -0.001, 0.003));
    assert!(one.lower < 0.0 && one.upper > 0.0);

    let four = bn1(&rows, "4 years");
    assert!(near(four, -0.045, 0.025, 0.003));
    assert!(four.lower < 0.0 && four.upper > 0.0);
}

#[test]
fn csv_round_trip_matches_memory() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("ci.csv");
    let args = CiArgs {
        config: mediation_toml(),
        methods: vec!["BN1".into(), "Projection".into(), "Wald".into()],
        alpha: None,
        eta: None,
        seed: None,
        out: Some(csv.clone()),
    };
    let mut sink = Vec::new();
    let rows = cmd_ci(&args, &mut sink).unwrap();
    assert_eq!(read_ci_csv(fs::File::open(&csv).unwrap()).unwrap(), rows);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "alpha = 0.05\n[[estimate]]\ntheta_hat = [1.0, 2.0]\nse = [1.0]\n").unwrap();
    let (code, _, err) = mdci(&["ci", "--config", bad.to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("line") && err.contains("estimate[0]"), "{err}");

    let (code, _, _) = mdci(&["ci", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(code, EXIT_CONFIG);

    let degenerate = dir.path().join("zero.toml");
    fs::write(&degenerate, "methods = [\"Wald\"]\n[[estimate]]\ntheta_hat = [0.0, 0.0]\nse = [1.0, 1.0]\n").unwrap();
    let (code, _, err) = mdci(&["ci", "--config", degenerate.to_str().unwrap()]);
    assert_eq!(code, EXIT_NUMERIC);
    assert!(err.contains("Wald"), "{err}");

    assert_eq!(mdci(&["simulate", "--preset", "nope"]).0, EXIT_CONFIG);
    assert_eq!(mdci(&["ci", "--config", mediation_toml().to_str().unwrap(), "--method", "AM"]).0, EXIT_CONFIG);
    assert_eq!(mdci(&["geometry", "--rho", "1.5", "--tau", "1"]).0, EXIT_CONFIG);
    assert_eq!(mdci(&["frobnicate"]).0, EXIT_CONFIG);
    assert_eq!(mdci(&["--help"]).0, EXIT_OK);
}

#[test]
fn geometry_reports() {
    let (code, out, _) = mdci(&["geometry", "--rho", "0", "--tau", "25", "--theta1", "0"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("coverage >= 0.9500 - 3 SE: holds"), "{out}");
    assert!(!out.contains("outside proven region"));

    let (code, out, _) = mdci(&["geometry", "--rho", "0", "--tau", "0"]);
    assert_eq!(code, EXIT_OK);
    let c = 3.841458820694124f64.sqrt();
    assert!(out.contains(&format!("x1* = {:.4}", c / 2.0f64.sqrt())), "{out}");
    assert!(out.contains(&format!("K = (0.0000, {:.4})", 2.0f64.sqrt() * c)), "{out}");

    let (code, out, _) = mdci(&["geometry", "--rho", "-0.5", "--tau", "0.01"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("*** outside proven region"), "{out}");
}

#[test]
fn limitexp_reports() {
    let (code, out, _) = mdci(&["limitexp", "--n-draws", "100000", "--ks-draws", "20000"]);
    assert_eq!(code, EXIT_OK);
    for label in ["e1 at 0", "e2 at 0", "(1,1)/sqrt2 at |h|=2", "KS distance"] {
        assert!(out.contains(label), "{out}");
    }
}

#[test]
fn simulate_single_design() {
    let dir = tempfile::tempdir().unwrap();
    let (code, out, _) = mdci(&[
        "simulate", "--theta2", "2", "--reps", "100", "--method", "BN1,Wald", "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK, "{out}");
    let rows = mdci::mc::read_results_csv(fs::File::open(dir.path().join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 22);
    assert!(dir.path().join("t2-r0_median_len.svg").exists());
}

fn binary(threads: &str, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_mdci"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

#[test]
fn commands_are_deterministic_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mediation_toml();
    let cfg = cfg.to_str().unwrap();
    let mut csvs = Vec::new();
    let mut mc = Vec::new();
    for threads in ["1", "8"] {
        let ci = dir.path().join(format!("ci{threads}.csv"));
        binary(threads, &["ci", "--config", cfg, "--out", ci.to_str().unwrap()]);
        csvs.push(fs::read(&ci).unwrap());
        let sim = dir.path().join(format!("sim{threads}"));
        binary(threads, &[
            "simulate", "--theta2", "2", "--reps", "100", "--method", "BN1,BN2,Wald", "--out", sim.to_str().unwrap(),
        ]);
        mc.push(fs::read(sim.join("results.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(mc[0], mc[1]);
    for args in [
        &["geometry", "--rho", "0.3", "--tau", "2", "--theta1", "1", "--n-draws", "200000"][..],
        &["limitexp", "--n-draws", "50000", "--ks-draws", "20000"][..],
    ] {
        assert_eq!(binary("1", args), binary("8", args));
    }
}

#[test]
fn fuzz_corpus_seeds_parse() {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus");
    let files = |target: &str| {
        let mut v: Vec<PathBuf> = fs::read_dir(corpus.join(target)).unwrap().map(|e| e.unwrap().path()).collect();
        v.sort();
        assert!(!v.is_empty());
        v
    };
    for p in files("parse_config") {
        mdci_cli::config::parse_config(&fs::read_to_string(&p).unwrap()).unwrap();
    }
    for p in files("parse_method") {
        let name = fs::read_to_string(&p).unwrap();
        assert_eq!(mdci_cli::config::parse_method(&name).is_ok(), name != "AM", "{name}");
    }
    for p in files("parse_ci_report") {
        assert!(!read_ci_csv(fs::File::open(&p).unwrap()).unwrap().is_empty());
    }
    for p in files("parse_results_csv") {
        assert!(!mdci::mc::read_results_csv(fs::File::open(&p).unwrap()).unwrap().is_empty());
    }
}
