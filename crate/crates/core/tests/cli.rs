use std::path::Path;
use std::process::{Command, Output};

use cvqst::solver::ReconstructionResult;

fn cvqst(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cvqst")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn reported_fidelity(o: &Output) -> f64 {
    stdout(o).lines().find_map(|l| l.strip_prefix("fidelity ")).expect("fidelity line").trim().parse().unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn noisy_heterodyne_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let sim = cvqst(
        dir,
        &[
            "simulate",
            "--scheme",
            "heterodyne",
            "--state",
            "cat",
            "--beta",
            "2",
            "--grid",
            "25",
            "--alpha-max",
            "6",
            "--nth",
            "5",
            "--out",
            "data",
        ],
    );
    assert_eq!(sim.status.code(), Some(0), "{sim:?}");
    for f in ["data.csv", "data.png", "metadata.json", "resolved_config.json"] {
        assert!(dir.join("data").join(f).exists(), "missing {f}");
    }
    let rec = cvqst(dir, &["reconstruct", "--data", "data", "--nth", "5", "--dim", "32", "--out", "rec"]);
    assert_eq!(rec.status.code(), Some(0), "{rec:?}");
    assert!(reported_fidelity(&rec) >= 0.99);
    for f in ["result.json", "populations.csv", "wigner.csv", "wigner.png", "resolved_config.json"] {
        assert!(dir.join("rec").join(f).exists(), "missing {f}");
    }

    let fid = cvqst(dir, &["fidelity", "rec/result.json", "--state", "cat", "--beta", "2"]);
    assert_eq!(fid.status.code(), Some(0));
    assert!(stdout(&fid).trim().parse::<f64>().unwrap() >= 0.99);
    for path in ["rec/result.json", "data/metadata.json", "data/data.csv", "rec/resolved_config.json"] {
        let o = cvqst(dir, &["inspect", path]);
        assert_eq!(o.status.code(), Some(0), "{path}: {o:?}");
    }
}

#[test]
fn homodyne_dataset_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = [
        "simulate",
        "--scheme",
        "homodyne",
        "--state",
        "vac02",
        "--dim",
        "8",
        "--angles",
        "20",
        "--bins",
        "20",
        "--eta",
        "0.5",
        "--samples",
        "20000",
        "--seed",
        "7",
        "--out",
        "hom",
    ];
    for d in [a.path(), b.path()] {
        let o = cvqst(d, &args);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    let hists: Vec<_> = std::fs::read_dir(a.path().join("hom"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("hist_"))
        .collect();
    assert_eq!(hists.len(), 20);
    for name in hists.iter().map(String::as_str).chain(["metadata.json", "resolved_config.json"]) {
        assert_eq!(read(&a.path().join("hom").join(name)), read(&b.path().join("hom").join(name)), "{name}");
    }
}

#[test]
fn lossy_homodyne_probabilities_reconstruct() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let sim = cvqst(
        dir,
        &["simulate", "--scheme", "homodyne", "--state", "vac02", "--dim", "8", "--eta", "0.5", "--out", "d"],
    );
    assert_eq!(sim.status.code(), Some(0));
    let rec = cvqst(dir, &["reconstruct", "--data", "d", "--eta", "0.5", "--out", "r"]);
    assert_eq!(rec.status.code(), Some(0), "{rec:?}");
    assert!(reported_fidelity(&rec) >= 0.97);

    // Re-running from the resolved config reproduces the state.
    let again = cvqst(dir, &["reconstruct", "--config", "r/resolved_config.json", "--out", "r2"]);
    assert_eq!(again.status.code(), Some(0));
    let load = |p: &str| ReconstructionResult::from_json(&std::fs::read_to_string(dir.join(p)).unwrap()).unwrap();
    let (x, y) = (load("r/result.json"), load("r2/result.json"));
    assert_eq!(x.rho, y.rho);
    assert_eq!(x.iterations, y.iterations);
    assert_eq!(x.objective, y.objective);
    assert_eq!(read(&dir.join("r/populations.csv")), read(&dir.join("r2/populations.csv")));
}

#[test]
fn input_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(
        cvqst(dir, &["simulate", "--dim", "8", "--grid", "15", "--alpha-max", "4", "--out", "d"]).status.code(),
        Some(0)
    );
    let bad = cvqst(dir, &["reconstruct", "--data", "d", "--grid", "20", "--out", "r"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("shape mismatch"));

    std::fs::write(dir.join("c.json"), r#"{"grid": 15, "colour": "red"}"#).unwrap();
    let unknown = cvqst(dir, &["simulate", "--config", "c.json"]);
    assert_eq!(unknown.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("colour"));

    assert_eq!(cvqst(dir, &["simulate", "--state", "nope"]).status.code(), Some(2));
    assert_eq!(cvqst(dir, &["reconstruct", "--out", "r"]).status.code(), Some(2));
    assert_eq!(cvqst(dir, &["simulate", "--scheme", "wigner", "--samples", "10"]).status.code(), Some(2));
}

#[test]
fn failed_certificate_exits_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let sim =
        cvqst(dir, &["simulate", "--dim", "8", "--state", "fock1", "--grid", "15", "--alpha-max", "4", "--out", "d"]);
    assert_eq!(sim.status.code(), Some(0));
    std::fs::write(dir.join("c.json"), r#"{"solver": {"max_iters": 2, "polish": false}}"#).unwrap();
    let rec = cvqst(dir, &["reconstruct", "--config", "c.json", "--data", "d", "--out", "r"]);
    assert_eq!(rec.status.code(), Some(1), "{rec:?}");
    assert!(stdout(&rec).contains("converged false"));
    assert!(dir.join("r/result.json").exists());
}

#[test]
fn benchmark_rows_follow_sweep_order() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = cvqst(
        dir,
        &["benchmark", "--jobs", "3", "--grid", "20", "--alpha-max", "4", "--sweep", "dim=17,15,16,0", "--out", "b"],
    );
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let mut rdr = csv::Reader::from_path(dir.join("b/benchmark.csv")).unwrap();
    let header = rdr.headers().unwrap().clone();
    assert_eq!(&header[0], "dim");
    assert!(header.iter().any(|h| h == "t_build") && header.iter().any(|h| h == "iterations"));
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    let dims: Vec<&str> = rows.iter().map(|r| r.get(0).unwrap()).collect();
    assert_eq!(dims, ["17", "15", "16", "0"]);
    for r in &rows[..3] {
        assert!(r.get(1).unwrap().parse::<f64>().unwrap() >= 0.999);
        assert!(r.get(7).unwrap().is_empty());
    }
    assert!(!rows[3].get(7).unwrap().is_empty());
    assert!(dir.join("b/resolved_config.json").exists());
    assert!(dir.join("b/sweep.json").exists());

    let bad = cvqst(dir, &["benchmark", "--sweep", "unknown_key=1", "--out", "b2"]);
    assert_eq!(bad.status.code(), Some(2));
}
